//! PNG/PPM image import and export.
//!
//! Images on disk are 8-bit RGB; in memory they are `[3,32,32]` f32 tensors
//! in `[-1,1]`. Import center-crops to square and bilinearly resizes with a
//! hand-rolled kernel so the pixel pipeline stays bit-stable across `image`
//! crate versions.

use std::path::{Path, PathBuf};

use image::ImageReader;
use thiserror::Error;
use wrangan_core::train::ImageSet;
use wrangan_core::Tensor;

use crate::synthetic::RESOLUTION;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode {path}: {source}")]
    Encode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("no decodable images in {0}")]
    EmptyFolder(String),
    #[error("unsupported tensor shape {0:?} for export")]
    BadShape(Vec<usize>),
}

/// Export a `[3,H,W]` image in `[-1,1]` (clamped) as 8-bit PNG.
pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<(), ImageIoError> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        _ => return Err(ImageIoError::BadShape(img.shape().to_vec())),
    };
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| -> u8 {
                let v = img.data()[c * plane + y * w + x].clamp(-1.0, 1.0);
                ((v + 1.0) * 127.5).round() as u8
            };
            buf.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    buf.save(path).map_err(|source| ImageIoError::Encode {
        path: path.display().to_string(),
        source,
    })
}

/// Decode, center-crop to square and bilinearly resize to 32x32, mapping
/// 8-bit values to `[-1,1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>, image::ImageError> {
    let img = ImageReader::open(path)
        .map_err(image::ImageError::IoError)?
        .decode()?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let side = w.min(h);
    let x0 = (w - side) / 2;
    let y0 = (h - side) / 2;

    let sample = |fx: f64, fy: f64, c: usize| -> f64 {
        // bilinear sample in crop coordinates
        let gx = fx.clamp(0.0, (side - 1) as f64);
        let gy = fy.clamp(0.0, (side - 1) as f64);
        let x1 = gx.floor() as usize;
        let y1 = gy.floor() as usize;
        let x2 = (x1 + 1).min(side - 1);
        let y2 = (y1 + 1).min(side - 1);
        let tx = gx - x1 as f64;
        let ty = gy - y1 as f64;
        let at = |xx: usize, yy: usize| -> f64 {
            img.get_pixel((x0 + xx) as u32, (y0 + yy) as u32).0[c] as f64
        };
        let top = at(x1, y1) * (1.0 - tx) + at(x2, y1) * tx;
        let bot = at(x1, y2) * (1.0 - tx) + at(x2, y2) * tx;
        top * (1.0 - ty) + bot * ty
    };

    let scale = side as f64 / RESOLUTION as f64;
    let mut data = vec![0.0f32; 3 * RESOLUTION * RESOLUTION];
    for c in 0..3 {
        for y in 0..RESOLUTION {
            for x in 0..RESOLUTION {
                let fx = (x as f64 + 0.5) * scale - 0.5;
                let fy = (y as f64 + 0.5) * scale - 0.5;
                let v = sample(fx, fy, c) / 255.0 * 2.0 - 1.0;
                data[c * RESOLUTION * RESOLUTION + y * RESOLUTION + x] = v as f32;
            }
        }
    }
    Ok(Tensor::new(&[3, RESOLUTION, RESOLUTION], data))
}

/// Load every decodable PNG/PPM in a folder, ordered by filename.
/// Undecodable files are skipped with a warning; an empty result is an
/// error.
pub fn load_image_folder(dir: &Path) -> Result<(ImageSet<f32>, Vec<String>), ImageIoError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|source| ImageIoError::Io { path: dir.display().to_string(), source })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "ppm" || e == "pnm"
            )
        })
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut names = Vec::new();
    for p in paths {
        match load_image(&p) {
            Ok(t) => {
                images.push(t);
                names.push(
                    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                );
            }
            Err(e) => log::warn!("skipping undecodable image {}: {}", p.display(), e),
        }
    }
    if images.is_empty() {
        return Err(ImageIoError::EmptyFolder(dir.display().to_string()));
    }
    Ok((ImageSet::new(images), names))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_white_round_trips_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        let img = Tensor::full(&[3, 32, 32], 1.0f32);
        save_png(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        for v in back.data() {
            assert!((v - 1.0).abs() <= 1.0 / 255.0, "{v}");
        }
    }

    #[test]
    fn non_square_input_uses_center_crop() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.png");
        // 64x32: left half black, center 32x32 white, right black
        let mut buf = image::RgbImage::new(64, 32);
        for y in 0..32 {
            for x in 16..48 {
                buf.put_pixel(x, y, image::Rgb([255, 255, 255]));
            }
        }
        buf.save(&path).unwrap();
        let t = load_image(&path).unwrap();
        // the crop keeps exactly the white center
        assert!(t.data().iter().all(|v| (v - 1.0).abs() < 1e-3));
    }

    #[test]
    fn export_import_error_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let hub = wrangan_core::rng::SeedHub::new(3);
        let img: Tensor<f32> = hub.stream("img").normal_scaled(&[3, 32, 32], 0.3);
        let clamped = img.map(|v| v.clamp(-1.0, 1.0));
        save_png(&path, &clamped).unwrap();
        let back = load_image(&path).unwrap();
        let mse = wrangan_core::metrics::mse(&clamped, &back);
        assert!(mse < (1.0 / 255.0) * (1.0 / 255.0), "round-trip mse {mse}");
    }

    #[test]
    fn folder_loading_is_sorted_and_skips_junk() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.png"] {
            save_png(&dir.path().join(name), &Tensor::full(&[3, 32, 32], 0.0)).unwrap();
        }
        std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let (set, names) = load_image_folder(dir.path()).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(names, ["a.png", "b.png"]);
    }

    #[test]
    fn empty_folder_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_folder(dir.path()).is_err());
    }
}
