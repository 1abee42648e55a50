use std::path::Path;

use crate::data_io::{CameraFrame, RgbImage};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageOrigin {
    ReflectanceMap,
    DepthMap,
    CameraRed,
    Other,
}

/// Single-channel real-valued image, intensities nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    values: Vec<f64>,
    origin: ImageOrigin,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<f64>, origin: ImageOrigin) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Contract("image dimensions must be positive".into()));
        }
        if values.len() != height * width {
            return Err(Error::Contract(format!(
                "{} values do not fill a {height}x{width} image",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image holds non-finite intensities".into()));
        }
        Ok(Self {
            height,
            width,
            values,
            origin,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        origin: ImageOrigin,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values, origin)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn origin(&self) -> ImageOrigin {
        self.origin
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Value with row/col clamped into the image.
    #[inline]
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.values[r * self.width + c]
    }

    pub fn clamp_to_byte_range(mut self) -> Self {
        for v in &mut self.values {
            *v = v.clamp(0.0, 255.0);
        }
        self
    }

    pub fn with_origin(mut self, origin: ImageOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| v.clamp(0.0, 255.0).round() as u8)
            .collect()
    }

    /// Binary PGM (P5), values rounded and clamped to 8 bits.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_bytes())
            .ok_or_else(|| Error::Contract("gray buffer size mismatch".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(out.into_inner())
    }

    /// Writes PGM for a `.pgm` extension, PNG otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => self.to_pgm(),
            _ => self.encode_png()?,
        };
        write_atomic(path, &bytes)
    }
}

/// Decodes a PNG to luminance (8-bit or 16-bit gray, or RGB converted).
pub fn load_gray_png(path: &Path, origin: ImageOrigin) -> Result<GrayImage> {
    let bytes = crate::io_util::read_bytes(path)?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = decoded.dimensions();
    let values = decoded.into_raw().into_iter().map(f64::from).collect();
    GrayImage::new(h as usize, w as usize, values, origin)
}

/// Red channel of a camera frame, optionally area-averaged to `target`
/// `(height, width)`.
pub fn red_channel(frame: &CameraFrame, target: Option<(usize, usize)>) -> Result<GrayImage> {
    let img = &frame.image;
    let red = GrayImage::from_fn(img.height(), img.width(), ImageOrigin::CameraRed, |r, c| {
        img.pixel(r, c)[0] as f64
    })?;
    match target {
        Some((h, w)) if (h, w) != (img.height(), img.width()) => area_resample(&red, h, w),
        _ => Ok(red),
    }
}

/// Area-average resampling: each output pixel is the coverage-weighted mean
/// of the input pixels under its footprint.
pub fn area_resample(img: &GrayImage, height: usize, width: usize) -> Result<GrayImage> {
    if height == 0 || width == 0 {
        return Err(Error::Contract("target size must be positive".into()));
    }
    let rows = axis_weights(img.height(), height);
    let cols = axis_weights(img.width(), width);
    let mut values = Vec::with_capacity(height * width);
    for rw in &rows {
        for cw in &cols {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for &(r, wr) in rw {
                for &(c, wc) in cw {
                    acc += wr * wc * img.get(r, c);
                    wsum += wr * wc;
                }
            }
            values.push(acc / wsum);
        }
    }
    GrayImage::new(height, width, values, img.origin())
}

/// For each output index, the input indices it overlaps and the overlap length.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min(i as f64 + 1.0) - lo.max(i as f64);
                    (overlap > 1e-12).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

pub fn rgb_from_gray(img: &GrayImage) -> Result<RgbImage> {
    let data = img.to_bytes().into_iter().flat_map(|v| [v, v, v]).collect();
    RgbImage::new(img.height(), img.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;

    fn frame(img: RgbImage) -> CameraFrame {
        CameraFrame {
            image: img,
            intrinsics: Intrinsics::from_params(100.0, 100.0, 50.0, 50.0).unwrap(),
            frame_id: 0,
        }
    }

    #[test]
    fn red_channel_selects_first_component() {
        let f = frame(RgbImage::filled(4, 5, [10, 20, 30]).unwrap());
        let g = red_channel(&f, None).unwrap();
        assert!(g.values().iter().all(|&v| v == 10.0));
        assert_eq!((g.height(), g.width()), (4, 5));
        let f = frame(RgbImage::filled(3, 3, [200, 0, 0]).unwrap());
        assert!(red_channel(&f, None).unwrap().values().iter().all(|&v| v == 200.0));
    }

    #[test]
    fn checkerboard_halves_to_uniform_mean() {
        let mut img = RgbImage::filled(320, 1024, [0, 0, 0]).unwrap();
        for r in 0..320 {
            for c in 0..1024 {
                if (r + c) % 2 == 0 {
                    img.set_pixel(r, c, [255, 255, 255]);
                }
            }
        }
        let g = red_channel(&frame(img), Some((160, 512))).unwrap();
        assert_eq!((g.height(), g.width()), (160, 512));
        assert!(g.values().iter().all(|&v| (v - 127.5).abs() < 1e-12));
    }

    #[test]
    fn fractional_resample_preserves_mean() {
        let src = GrayImage::from_fn(7, 11, ImageOrigin::Other, |r, c| (r * 11 + c) as f64).unwrap();
        let dst = area_resample(&src, 3, 4).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(src.values()) - mean(dst.values())).abs() < 1e-9);
    }

    #[test]
    fn pgm_header() {
        let g = GrayImage::from_fn(2, 3, ImageOrigin::Other, |_, c| c as f64 * 200.0).unwrap();
        let pgm = g.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 3..], &[0, 200, 255]);
    }
}
