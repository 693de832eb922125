//! Small dense f64 linear algebra: cyclic Jacobi eigendecomposition for
//! symmetric matrices, plus the helpers the feature-distance metrics need.
//! Sizes here are at most 64x64, where Jacobi is accurate and fast enough.

use alloc::vec;
use alloc::vec::Vec;

/// Row-major square matrix.
#[derive(Clone, Debug)]
pub struct MatF64 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl MatF64 {
    pub fn zeros(n: usize) -> Self {
        MatF64 { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matmul(&self, other: &MatF64) -> MatF64 {
        assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = MatF64::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> MatF64 {
        let n = self.n;
        let mut out = MatF64::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in i + 1..self.n {
                worst = worst.max(libm::fabs(self.at(i, j) - self.at(j, i)));
            }
        }
        worst
    }

    pub fn symmetrize(&mut self) {
        for i in 0..self.n {
            for j in i + 1..self.n {
                let v = 0.5 * (self.at(i, j) + self.at(j, i));
                self.set(i, j, v);
                self.set(j, i, v);
            }
        }
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvector `k` is row `k` of the returned matrix.
pub fn sym_eigen(a: &MatF64) -> (Vec<f64>, MatF64) {
    let n = a.n;
    let mut m = a.clone();
    m.symmetrize();
    let mut v = MatF64::identity(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m.at(i, j) * m.at(i, j);
            }
        }
        if off < 1e-24 * (1.0 + m.trace().abs()) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.at(p, q);
                if libm::fabs(apq) < 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let eig: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap_or(core::cmp::Ordering::Equal));
    let values: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut vectors = MatF64::zeros(n);
    for (row, &col) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(row, k, v.at(k, col));
        }
    }
    (values, vectors)
}

/// Symmetric positive-semidefinite square root. Negative eigenvalues (noise)
/// are clamped to zero.
pub fn sym_sqrt(a: &MatF64) -> MatF64 {
    let n = a.n;
    let (vals, vecs) = sym_eigen(a);
    let mut out = MatF64::zeros(n);
    for k in 0..n {
        let s = libm::sqrt(vals[k].max(0.0));
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = vecs.at(k, i);
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out.data[i * n + j] += s * vi * vecs.at(k, j);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedHub;

    fn random_symmetric(n: usize, seed: u64) -> MatF64 {
        let hub = SeedHub::new(seed);
        let mut s = hub.stream("sym");
        let mut m = MatF64::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let v = s.normal();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = random_symmetric(12, 3);
        let (vals, vecs) = sym_eigen(&a);
        // A = V^T diag V with eigenvectors as rows of V
        let mut recon = MatF64::zeros(12);
        for k in 0..12 {
            for i in 0..12 {
                for j in 0..12 {
                    recon.data[i * 12 + j] += vals[k] * vecs.at(k, i) * vecs.at(k, j);
                }
            }
        }
        for i in 0..144 {
            assert!((recon.data[i] - a.data[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let a = random_symmetric(16, 7);
        let (_, vecs) = sym_eigen(&a);
        for i in 0..16 {
            for j in 0..16 {
                let dot: f64 = (0..16).map(|k| vecs.at(i, k) * vecs.at(j, k)).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn sqrt_squares_back() {
        // make a PSD matrix A = B B^T, then sqrt(A)^2 == A
        let b = random_symmetric(8, 11);
        let a = b.matmul(&b.transpose());
        let r = sym_sqrt(&a);
        let r2 = r.matmul(&r);
        for i in 0..64 {
            assert!((r2.data[i] - a.data[i]).abs() < 1e-8, "idx {}", i);
        }
    }

    #[test]
    fn eigenvalues_sorted_descending() {
        let a = random_symmetric(10, 5);
        let (vals, _) = sym_eigen(&a);
        for w in vals.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
    }
}
