//! Vertical-edge Sobel detection with greedy non-maximum suppression and a
//! fixed-size output.

use std::path::Path;

use super::gray::{GrayImage, ImageOrigin};
use crate::error::{Error, Result};
use crate::io_util::write_atomic_str;

pub const SOBEL_LEFT: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
pub const SOBEL_RIGHT: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

pub const CAMERA_SOBEL_THRESHOLD: f64 = 80.0;
pub const REFLECTANCE_SOBEL_THRESHOLD: f64 = 50.0;
pub const DEFAULT_EDGE_COUNT: usize = 3000;

/// Edge pixels, strongest first, exactly `target_count` long.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    pixels: Vec<(usize, usize)>,
    scores: Vec<f64>,
    target_count: usize,
    real_count: usize,
}

impl EdgeSet {
    /// Builds a set from candidates already sorted strongest first; truncates
    /// or pads (repeating the last entry) to `target_count`.
    pub fn from_ranked(
        mut pixels: Vec<(usize, usize)>,
        mut scores: Vec<f64>,
        target_count: usize,
    ) -> Result<Self> {
        if target_count == 0 {
            return Err(Error::Config("edge target count must be positive".into()));
        }
        if pixels.len() != scores.len() {
            return Err(Error::Contract("pixel and score lengths differ".into()));
        }
        if pixels.is_empty() {
            return Err(Error::EmptyEdges { threshold: f64::NAN });
        }
        if scores.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Contract("edge scores must be non-increasing".into()));
        }
        pixels.truncate(target_count);
        scores.truncate(target_count);
        let real_count = pixels.len();
        let (last_px, last_score) = (pixels[real_count - 1], scores[real_count - 1]);
        pixels.resize(target_count, last_px);
        scores.resize(target_count, last_score);
        Ok(Self {
            pixels,
            scores,
            target_count,
            real_count,
        })
    }

    pub fn pixels(&self) -> &[(usize, usize)] {
        &self.pixels
    }
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
    pub fn target_count(&self) -> usize {
        self.target_count
    }
    /// Entries before padding.
    pub fn real_count(&self) -> usize {
        self.real_count
    }
    pub fn padded(&self) -> bool {
        self.real_count < self.target_count
    }
    pub fn len(&self) -> usize {
        self.pixels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// The unpadded prefix as its own set.
    pub fn unpadded(&self) -> EdgeSet {
        EdgeSet {
            pixels: self.pixels[..self.real_count].to_vec(),
            scores: self.scores[..self.real_count].to_vec(),
            target_count: self.real_count,
            real_count: self.real_count,
        }
    }

    /// Index of the first entry carrying the same pixel as `i`.
    pub fn canonical_index(&self, i: usize) -> usize {
        if i >= self.real_count {
            self.real_count - 1
        } else {
            i
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,score\n");
        for ((r, c), s) in self.pixels.iter().zip(&self.scores) {
            out.push_str(&format!("{r},{c},{s}\n"));
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic_str(path, &self.to_csv())
    }

    /// White edge pixels on black, for inspection.
    pub fn render(&self, height: usize, width: usize) -> Result<GrayImage> {
        let mut values = vec![0.0; height * width];
        for &(r, c) in &self.pixels {
            if r < height && c < width {
                values[r * width + c] = 255.0;
            }
        }
        GrayImage::new(height, width, values, ImageOrigin::Other)
    }
}

/// Parses the `row,col,score` CSV written by [`EdgeSet::to_csv`].
pub fn parse_edge_csv(text: &str) -> Result<EdgeSet> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "row,col,score" => {}
        _ => return Err(Error::Format("edge CSV must start with `row,col,score`".into())),
    }
    let mut pixels = Vec::new();
    let mut scores = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("edge CSV line {}: `{line}`", n + 2));
        if fields.len() != 3 {
            return Err(bad());
        }
        let r: usize = fields[0].parse().map_err(|_| bad())?;
        let c: usize = fields[1].parse().map_err(|_| bad())?;
        let s: f64 = fields[2].parse().map_err(|_| bad())?;
        if !s.is_finite() {
            return Err(bad());
        }
        pixels.push((r, c));
        scores.push(s);
    }
    let n = pixels.len();
    if n == 0 {
        return Err(Error::Format("edge CSV has no rows".into()));
    }
    // trailing repeats of the final row are padding
    let mut real = n;
    while real > 1 && pixels[real - 2] == pixels[n - 1] && scores[real - 2] == scores[n - 1] {
        real -= 1;
    }
    let mut set = EdgeSet::from_ranked(pixels, scores, n)?;
    set.real_count = real;
    Ok(set)
}

/// Correlation with a 3×3 kernel on interior pixels; the 1-pixel border is 0.
pub fn convolve3(img: &GrayImage, kernel: &[[f64; 3]; 3]) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let mut out = vec![0.0; h * w];
    if h < 3 || w < 3 {
        return out;
    }
    let v = img.values();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let mut acc = 0.0;
            for (i, krow) in kernel.iter().enumerate() {
                let base = (r + i - 1) * w + c - 1;
                acc += krow[0] * v[base] + krow[1] * v[base + 1] + krow[2] * v[base + 2];
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// `|img ⊛ Sobel_left|` on interior pixels.
pub fn sobel_magnitude(img: &GrayImage) -> Vec<f64> {
    let mut g = convolve3(img, &SOBEL_LEFT);
    for v in &mut g {
        *v = v.abs();
    }
    g
}

/// Candidates with `G ≥ threshold` off the border, strongest first (ties in
/// row-major order), greedily thinned so no two kept pixels touch, then cut
/// or padded to `target_count`.
pub fn sobel_edges(img: &GrayImage, threshold: f64, target_count: usize) -> Result<EdgeSet> {
    if img.height() < 3 || img.width() < 3 {
        return Err(Error::Contract("Sobel needs an image of at least 3x3".into()));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::Config(format!("Sobel threshold {threshold} must be >= 0")));
    }
    if target_count == 0 {
        return Err(Error::Config("edge target count must be positive".into()));
    }
    let (h, w) = (img.height(), img.width());
    let g = sobel_magnitude(img);
    let mut cand: Vec<usize> = (1..h - 1)
        .flat_map(|r| (1..w - 1).map(move |c| r * w + c))
        .filter(|&i| g[i] >= threshold && g[i] > 0.0)
        .collect();
    cand.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));

    let mut taken = vec![false; h * w];
    let mut pixels = Vec::new();
    let mut scores = Vec::new();
    for i in cand {
        let (r, c) = (i / w, i % w);
        let blocked = (r - 1..=r + 1).any(|rr| (c - 1..=c + 1).any(|cc| taken[rr * w + cc]));
        if blocked {
            continue;
        }
        taken[i] = true;
        pixels.push((r, c));
        scores.push(g[i]);
        if pixels.len() == target_count {
            break;
        }
    }
    if pixels.is_empty() {
        return Err(Error::EmptyEdges { threshold });
    }
    EdgeSet::from_ranked(pixels, scores, target_count)
}
