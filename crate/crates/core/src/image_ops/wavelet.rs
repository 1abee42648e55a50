//! One-level 2D Haar denoising.

use std::str::FromStr;

use super::gray::GrayImage;
use crate::error::{Error, Result};

/// Default threshold for reflectance maps.
pub const REFLECTANCE_WAVELET_THRESHOLD: f64 = 50.0;

/// Which high-frequency coefficients get zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveletMode {
    /// Zero detail coefficients with `|c| > threshold` (impulse suppression).
    #[default]
    SuppressAbove,
    /// Zero detail coefficients with `|c| < threshold` (classic hard shrinkage).
    SuppressBelow,
}

impl FromStr for WaveletMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "above" | "suppress-above" => Ok(WaveletMode::SuppressAbove),
            "below" | "suppress-below" => Ok(WaveletMode::SuppressBelow),
            other => Err(Error::Config(format!("unknown wavelet mode `{other}`"))),
        }
    }
}

/// Orthonormal Haar coefficients of one 2×2 block `[a b; c d]`:
/// `[LL, horizontal detail, vertical detail, diagonal detail]`.
#[inline]
pub fn haar_forward(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        (a + b + c + d) * 0.5,
        (a - b + c - d) * 0.5,
        (a + b - c - d) * 0.5,
        (a - b - c + d) * 0.5,
    ]
}

#[inline]
pub fn haar_inverse(coef: [f64; 4]) -> [f64; 4] {
    let [ll, h, v, d] = coef;
    [
        (ll + h + v + d) * 0.5,
        (ll - h + v - d) * 0.5,
        (ll + h - v - d) * 0.5,
        (ll - h - v + d) * 0.5,
    ]
}

/// Haar transform, thresholding of the three detail subbands, inverse, clamp
/// to `[0, 255]`. Odd dimensions are padded by edge replication and cropped
/// back afterwards.
pub fn wavelet_filter(img: &GrayImage, threshold: f64, mode: WaveletMode) -> Result<GrayImage> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!("wavelet threshold {threshold} must be >= 0")));
    }
    let (h, w) = (img.height(), img.width());
    let ph = h + h % 2;
    let pw = w + w % 2;
    let keep = |c: f64| match mode {
        WaveletMode::SuppressAbove => c.abs() <= threshold,
        WaveletMode::SuppressBelow => c.abs() >= threshold,
    };
    let mut out = vec![0.0; h * w];
    for br in (0..ph).step_by(2) {
        for bc in (0..pw).step_by(2) {
            let px = |r: usize, c: usize| img.get(r.min(h - 1), c.min(w - 1));
            let mut coef = haar_forward(px(br, bc), px(br, bc + 1), px(br + 1, bc), px(br + 1, bc + 1));
            for c in coef.iter_mut().skip(1) {
                if !keep(*c) {
                    *c = 0.0;
                }
            }
            let rec = haar_inverse(coef);
            for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                let (r, c) = (br + dr, bc + dc);
                if r < h && c < w {
                    out[r * w + c] = rec[k].clamp(0.0, 255.0);
                }
            }
        }
    }
    GrayImage::new(h, w, out, img.origin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image_ops::gray::ImageOrigin;

    #[test]
    fn haar_roundtrip() {
        let c = haar_forward(1.0, 7.0, -3.0, 10.5);
        let r = haar_inverse(c);
        for (a, b) in r.iter().zip([1.0, 7.0, -3.0, 10.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_unchanged() {
        let img = GrayImage::from_fn(6, 8, ImageOrigin::Other, |_, _| 77.0).unwrap();
        let out = wavelet_filter(&img, 50.0, WaveletMode::SuppressAbove).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn impulse_removed_from_detail_subbands() {
        // hand Haar on the block [255 0; 0 0]: LL = 127.5, all details ±127.5
        let c = haar_forward(255.0, 0.0, 0.0, 0.0);
        assert_eq!(c, [127.5, 127.5, 127.5, 127.5]);
        let ll_only = haar_inverse([c[0], 0.0, 0.0, 0.0])[0];
        assert_eq!(ll_only, 63.75);

        let img = GrayImage::from_fn(4, 4, ImageOrigin::Other, |r, c| {
            if (r, c) == (2, 2) {
                255.0
            } else {
                0.0
            }
        })
        .unwrap();
        let out = wavelet_filter(&img, 50.0, WaveletMode::SuppressAbove).unwrap();
        let peak = out.values().iter().cloned().fold(0.0, f64::max);
        assert!(peak <= ll_only);
        for (r, c) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            assert_eq!(out.get(r, c), 63.75);
        }
    }

    #[test]
    fn infinite_threshold_is_identity() {
        let img = GrayImage::from_fn(5, 7, ImageOrigin::Other, |r, c| {
            ((r * 31 + c * 17) % 256) as f64
        })
        .unwrap();
        let out = wavelet_filter(&img, f64::INFINITY, WaveletMode::SuppressAbove).unwrap();
        assert_eq!((out.height(), out.width()), (5, 7));
        for (a, b) in out.values().iter().zip(img.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn below_mode_zeroes_small_details() {
        let img = GrayImage::from_fn(2, 2, ImageOrigin::Other, |r, c| {
            [[100.0, 104.0], [100.0, 104.0]][r][c]
        })
        .unwrap();
        let out = wavelet_filter(&img, 50.0, WaveletMode::SuppressBelow).unwrap();
        assert!(out.values().iter().all(|&v| (v - 102.0).abs() < 1e-12));
    }

    #[test]
    fn negative_threshold_rejected() {
        let img = GrayImage::from_fn(2, 2, ImageOrigin::Other, |_, _| 0.0).unwrap();
        assert!(wavelet_filter(&img, -1.0, WaveletMode::SuppressAbove).is_err());
    }
}
