//! Raw compute kernels behind the tape operations.
//!
//! All loops have a fixed accumulation order, so results are bit-stable
//! across runs of the same build. Inner loops are written over contiguous
//! slices so they autovectorize; reductions use fixed-width lane splits
//! instead of relying on the compiler to reassociate.

use alloc::vec;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LANES: usize = 16;

/// Dot product with a fixed 16-lane accumulation order.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [T::ZERO; LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for l in 0..LANES {
            acc[l] += a[base + l] * b[base + l];
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * LANES..n {
        tail += a[i] * b[i];
    }
    // fixed reduction tree
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            let hi = acc[l + width];
            acc[l] += hi;
        }
    }
    acc[0] + tail
}

/// Sum with the same fixed lane structure as [`dot`].
pub fn sum_slice<T: Scalar>(a: &[T]) -> T {
    let n = a.len();
    let mut acc = [T::ZERO; LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let base = c * LANES;
        for l in 0..LANES {
            acc[l] += a[base + l];
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * LANES..n {
        tail += a[i];
    }
    let mut width = LANES;
    while width > 1 {
        width /= 2;
        for l in 0..width {
            let hi = acc[l + width];
            acc[l] += hi;
        }
    }
    acc[0] + tail
}

pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

/// `[M,K] x [K,N] -> [M,N]`, ikj loop order.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k) = dims2("matmul lhs", a);
    let (kb, n) = dims2("matmul rhs", b);
    assert!(
        k == kb,
        "matmul: inner dims differ, lhs {:?} rhs {:?}",
        a.shape(),
        b.shape()
    );
    let mut out = Tensor::zeros(&[m, n]);
    let od = out.data_mut();
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = ad[i * k + kk];
            axpy(av, &bd[kk * n..(kk + 1) * n], orow);
        }
    }
    out
}

pub fn transpose2<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let (m, n) = dims2("transpose", a);
    let ad = a.data();
    let mut out = Tensor::zeros(&[n, m]);
    let od = out.data_mut();
    for i in 0..m {
        for j in 0..n {
            od[j * m + i] = ad[i * n + j];
        }
    }
    out
}

fn dims2<T: Scalar>(what: &str, t: &Tensor<T>) -> (usize, usize) {
    assert!(t.shape().len() == 2, "{}: expected rank 2, got {:?}", what, t.shape());
    (t.shape()[0], t.shape()[1])
}

fn dims4<T: Scalar>(what: &str, t: &Tensor<T>) -> (usize, usize, usize, usize) {
    assert!(t.shape().len() == 4, "{}: expected rank 4, got {:?}", what, t.shape());
    (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3])
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= kernel,
        "conv2d: input extent {} too small for kernel {} with pad {}",
        input,
        kernel,
        pad
    );
    (input + 2 * pad - kernel) / stride + 1
}

/// `x: [B,Ci,H,W]`, `w: [Co,Ci,Kh,Kw]` -> `[B,Co,Ho,Wo]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Tensor<T> {
    let (bsz, ci, h, wi) = dims4("conv2d input", x);
    let (co, ciw, kh, kw) = dims4("conv2d weight", w);
    assert!(
        ci == ciw,
        "conv2d: channel mismatch, input {:?} weight {:?}",
        x.shape(),
        w.shape()
    );
    let ho = conv_out_extent(h, kh, stride, pad);
    let wo = conv_out_extent(wi, kw, stride, pad);
    let mut out = Tensor::zeros(&[bsz, co, ho, wo]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = w.data();
    for b in 0..bsz {
        for oc in 0..co {
            let obase = (b * co + oc) * ho * wo;
            for ic in 0..ci {
                let xbase = (b * ci + ic) * h * wi;
                let wbase = (oc * ci + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[wbase + ky * kw + kx];
                        if stride == 1 {
                            // ox + kx - pad must land in [0, wi)
                            let ox_lo = pad.saturating_sub(kx);
                            let ox_hi = (wi + pad - kx).min(wo);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = oy + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                let orow = &mut od
                                    [obase + oy * wo + ox_lo..obase + oy * wo + ox_hi];
                                let xoff = xbase + iy * wi + (ox_lo + kx - pad);
                                axpy(wv, &xd[xoff..xoff + (ox_hi - ox_lo)], orow);
                            }
                        } else {
                            for oy in 0..ho {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for ox in 0..wo {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= wi {
                                        continue;
                                    }
                                    od[obase + oy * wo + ox] +=
                                        wv * xd[xbase + iy * wi + (ix - pad)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `conv2d` w.r.t. the input: `gy: [B,Co,Ho,Wo]` -> `[B,Ci,H,W]`.
pub fn conv2d_dx<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    h: usize,
    wi: usize,
) -> Tensor<T> {
    let (bsz, co, ho, wo) = dims4("conv2d_dx grad", gy);
    let (cow, ci, kh, kw) = dims4("conv2d_dx weight", w);
    assert!(
        co == cow,
        "conv2d_dx: channel mismatch, grad {:?} weight {:?}",
        gy.shape(),
        w.shape()
    );
    assert_eq!(ho, conv_out_extent(h, kh, stride, pad), "conv2d_dx: grad height");
    assert_eq!(wo, conv_out_extent(wi, kw, stride, pad), "conv2d_dx: grad width");
    let mut out = Tensor::zeros(&[bsz, ci, h, wi]);
    let od = out.data_mut();
    let gd = gy.data();
    let wd = w.data();
    for b in 0..bsz {
        for ic in 0..ci {
            let obase = (b * ci + ic) * h * wi;
            for oc in 0..co {
                let gbase = (b * co + oc) * ho * wo;
                let wbase = (oc * ci + ic) * kh * kw;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wd[wbase + ky * kw + kx];
                        if stride == 1 {
                            let ox_lo = pad.saturating_sub(kx);
                            let ox_hi = (wi + pad - kx).min(wo);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = oy + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                let goff = gbase + oy * wo;
                                let ooff = obase + iy * wi + (ox_lo + kx - pad);
                                axpy(
                                    wv,
                                    &gd[goff + ox_lo..goff + ox_hi],
                                    &mut od[ooff..ooff + (ox_hi - ox_lo)],
                                );
                            }
                        } else {
                            for oy in 0..ho {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for ox in 0..wo {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= wi {
                                        continue;
                                    }
                                    od[obase + iy * wi + (ix - pad)] +=
                                        wv * gd[gbase + oy * wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of `conv2d` w.r.t. the weight: -> `[Co,Ci,Kh,Kw]`.
pub fn conv2d_dw<T: Scalar>(
    x: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
    kh: usize,
    kw: usize,
) -> Tensor<T> {
    let (bsz, ci, h, wi) = dims4("conv2d_dw input", x);
    let (bg, co, ho, wo) = dims4("conv2d_dw grad", gy);
    assert!(
        bsz == bg,
        "conv2d_dw: batch mismatch, input {:?} grad {:?}",
        x.shape(),
        gy.shape()
    );
    assert_eq!(ho, conv_out_extent(h, kh, stride, pad), "conv2d_dw: grad height");
    assert_eq!(wo, conv_out_extent(wi, kw, stride, pad), "conv2d_dw: grad width");
    let mut out = Tensor::zeros(&[co, ci, kh, kw]);
    let od = out.data_mut();
    let xd = x.data();
    let gd = gy.data();
    for oc in 0..co {
        for ic in 0..ci {
            let wbase = (oc * ci + ic) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::ZERO;
                    for b in 0..bsz {
                        let gbase = (b * co + oc) * ho * wo;
                        let xbase = (b * ci + ic) * h * wi;
                        if stride == 1 {
                            let ox_lo = pad.saturating_sub(kx);
                            let ox_hi = (wi + pad - kx).min(wo);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            for oy in 0..ho {
                                let iy = oy + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                let goff = gbase + oy * wo;
                                let xoff = xbase + iy * wi + (ox_lo + kx - pad);
                                acc += dot(
                                    &gd[goff + ox_lo..goff + ox_hi],
                                    &xd[xoff..xoff + (ox_hi - ox_lo)],
                                );
                            }
                        } else {
                            for oy in 0..ho {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for ox in 0..wo {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= wi {
                                        continue;
                                    }
                                    acc += gd[gbase + oy * wo + ox]
                                        * xd[xbase + iy * wi + (ix - pad)];
                                }
                            }
                        }
                    }
                    od[wbase + ky * kw + kx] = acc;
                }
            }
        }
    }
    out
}

/// Nearest-neighbor 2x upsampling of `[B,C,H,W]`.
pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = dims4("upsample2x", x);
    let mut out = Tensor::zeros(&[b, c, 2 * h, 2 * w]);
    let od = out.data_mut();
    let xd = x.data();
    for im in 0..b * c {
        let xb = im * h * w;
        let ob = im * 4 * h * w;
        for y in 0..h {
            let xr = &xd[xb + y * w..xb + (y + 1) * w];
            for dy in 0..2 {
                let orow = &mut od[ob + (2 * y + dy) * 2 * w..ob + (2 * y + dy + 1) * 2 * w];
                for (xi, &v) in xr.iter().enumerate() {
                    orow[2 * xi] = v;
                    orow[2 * xi + 1] = v;
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample2x`]: sums each 2x2 block of `[B,C,2H,2W]`.
pub fn downsum2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h2, w2) = dims4("downsum2x", x);
    assert!(h2 % 2 == 0 && w2 % 2 == 0, "downsum2x: odd extents {:?}", x.shape());
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let od = out.data_mut();
    let xd = x.data();
    for im in 0..b * c {
        let xb = im * h2 * w2;
        let ob = im * h * w;
        for y in 0..h {
            for x_ in 0..w {
                let r0 = xb + (2 * y) * w2 + 2 * x_;
                let r1 = xb + (2 * y + 1) * w2 + 2 * x_;
                od[ob + y * w + x_] = (xd[r0] + xd[r0 + 1]) + (xd[r1] + xd[r1 + 1]);
            }
        }
    }
    out
}

/// Separable blur with zero padding, same output size. The kernel is applied
/// along x then y; symmetric kernels make this self-adjoint.
pub fn blur_separable<T: Scalar>(x: &Tensor<T>, kernel: &[T]) -> Tensor<T> {
    let (b, c, h, w) = dims4("blur", x);
    let k = kernel.len();
    assert!(k % 2 == 1, "blur: kernel length {} must be odd", k);
    let r = k / 2;
    let xd = x.data();
    let mut tmp = vec![T::ZERO; xd.len()];
    // horizontal
    for im in 0..b * c {
        let base = im * h * w;
        for y in 0..h {
            let row = &xd[base + y * w..base + (y + 1) * w];
            let orow = &mut tmp[base + y * w..base + (y + 1) * w];
            for (ki, &kv) in kernel.iter().enumerate() {
                // out[ox] += kv * row[ox + ki - r]
                let lo = r.saturating_sub(ki);
                let hi = (w + r - ki).min(w);
                if lo >= hi {
                    continue;
                }
                axpy(kv, &row[lo + ki - r..hi + ki - r], &mut orow[lo..hi]);
            }
        }
    }
    // vertical
    let mut out = Tensor::zeros(&[b, c, h, w]);
    let od = out.data_mut();
    for im in 0..b * c {
        let base = im * h * w;
        for (ki, &kv) in kernel.iter().enumerate() {
            for y in 0..h {
                let sy = y + ki;
                if sy < r || sy - r >= h {
                    continue;
                }
                let sy = sy - r;
                axpy(
                    kv,
                    &tmp[base + sy * w..base + (sy + 1) * w],
                    &mut od[base + y * w..base + (y + 1) * w],
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: alloc::vec::Vec<f64> = (0..100).map(|i| (i as f64) * 0.01 - 0.3).collect();
        let b: alloc::vec::Vec<f64> = (0..100).map(|i| (i as f64) * -0.02 + 0.7).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::<f32>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let a = Tensor::<f32>::from_fn(&[3, 3], |i| i as f32 * 0.5 - 2.0);
        assert_eq!(matmul(&eye, &a), a);
    }

    #[test]
    fn conv2d_all_ones_receptive_field() {
        // 1x1x4x4 ones, 3x3 ones kernel, pad 1: center 9, corner 4.
        let x = Tensor::<f32>::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, 1, 1);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let d = y.data();
        assert_eq!(d[0], 4.0); // corner
        assert_eq!(d[5], 9.0); // interior
        assert_eq!(d[3], 4.0);
        assert_eq!(d[6], 9.0);
    }

    #[test]
    fn conv2d_stride2_shape() {
        let x = Tensor::<f32>::full(&[2, 3, 32, 32], 0.5);
        let w = Tensor::<f32>::full(&[16, 3, 3, 3], 0.1);
        let y = conv2d(&x, &w, 2, 1);
        assert_eq!(y.shape(), &[2, 16, 16, 16]);
    }

    #[test]
    fn upsample_downsum_adjoint() {
        // <up(x), y> == <x, downsum(y)>
        let x = Tensor::<f64>::from_fn(&[1, 2, 3, 3], |i| (i as f64) * 0.1 - 0.4);
        let y = Tensor::<f64>::from_fn(&[1, 2, 6, 6], |i| (i as f64) * -0.03 + 0.5);
        let lhs = dot(upsample2x(&x).data(), y.data());
        let rhs = dot(x.data(), downsum2x(&y).data());
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn blur_preserves_constant_interior() {
        let x = Tensor::<f64>::full(&[1, 1, 9, 9], 2.0);
        let k = [0.25, 0.5, 0.25];
        let y = blur_separable(&x, &k);
        // away from borders the normalized kernel preserves constants
        assert!((y.data()[4 * 9 + 4] - 2.0).abs() < 1e-12);
    }
}
