//! Edge-pixel descriptors: a deterministic hand-built feature field with the
//! learned network's tensor shapes (1/4-scale 64-channel local grid, 512-dim
//! global vector), cross-branch fusion, a 576 → 64 reduction and bilinear
//! sampling at the edge pixels.

use std::f64::consts::TAU;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_ops::{EdgeSet, GrayImage};
use crate::io_util::{write_atomic, write_atomic_str};

pub const LOCAL_DIM: usize = 64;
pub const GLOBAL_DIM: usize = 512;
pub const FUSED_DIM: usize = LOCAL_DIM + GLOBAL_DIM;
pub const DESCRIPTOR_DIM: usize = 64;
pub const GRID_STRIDE: usize = 4;
pub const DEFAULT_REDUCTION_SEED: u64 = 0x5eed_0576;

const ORIENT_BINS: usize = 16;
/// Anti-aliasing blur ahead of the 1/4-scale grid, pixels.
pub const PREFILTER_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Reflectance,
    Camera,
}

impl FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reflectance" => Ok(Branch::Reflectance),
            "camera" => Ok(Branch::Camera),
            other => Err(Error::Format(format!("unknown descriptor source `{other}`"))),
        }
    }
}

/// Local feature grid at 1/4 resolution plus one global vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    image_height: usize,
    image_width: usize,
    grid_height: usize,
    grid_width: usize,
    local: Vec<f64>,
    global: Vec<f64>,
}

impl FeatureField {
    pub fn image_size(&self) -> (usize, usize) {
        (self.image_height, self.image_width)
    }
    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid_height, self.grid_width)
    }
    pub fn global(&self) -> &[f64] {
        &self.global
    }
    pub fn local(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.grid_width + j) * LOCAL_DIM;
        &self.local[k..k + LOCAL_DIM]
    }

    /// Builds a field from raw parts; used by tests and alternative
    /// descriptor back-ends.
    pub fn from_parts(
        image_size: (usize, usize),
        local: Vec<f64>,
        global: Vec<f64>,
    ) -> Result<Self> {
        let (gh, gw) = grid_dims(image_size.0, image_size.1);
        if local.len() != gh * gw * LOCAL_DIM || global.len() != GLOBAL_DIM {
            return Err(Error::Contract("feature field shape mismatch".into()));
        }
        if local.iter().chain(&global).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature".into()));
        }
        Ok(Self {
            image_height: image_size.0,
            image_width: image_size.1,
            grid_height: gh,
            grid_width: gw,
            local,
            global,
        })
    }
}

fn grid_dims(h: usize, w: usize) -> (usize, usize) {
    (h.div_ceil(GRID_STRIDE), w.div_ceil(GRID_STRIDE))
}

struct Gradients {
    gx: Vec<f64>,
    gy: Vec<f64>,
}

/// Central differences with clamped borders, in units of full scale.
fn gradients(img: &GrayImage) -> Gradients {
    let (h, w) = (img.height(), img.width());
    let v = img.values();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        let (up, down) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (left, right) = (c.saturating_sub(1), (c + 1).min(w - 1));
            gx[r * w + c] = (v[r * w + right] - v[r * w + left]) / 510.0;
            gy[r * w + c] = (v[down * w + c] - v[up * w + c]) / 510.0;
        }
    }
    Gradients { gx, gy }
}

/// `atan2(gy, gx)` in `[0, 2π)`, to about 1e-7 rad: octant reduction and the
/// Cephes single-precision arctangent polynomial. Much cheaper than libm and
/// plenty for soft binning.
#[inline]
fn angle(gx: f64, gy: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
    let (ax, ay) = (gx.abs(), gy.abs());
    let (num, den) = if ay > ax { (ax, ay) } else { (ay, ax) };
    if den == 0.0 {
        return 0.0;
    }
    let z = num / den;
    // atan on [0, 1] via a further split at tan(π/8)
    let (z, base) = if z > 0.414_213_562_373_095_1 { ((z - 1.0) / (z + 1.0), FRAC_PI_4) } else { (z, 0.0) };
    let z2 = z * z;
    let p = ((8.053_744_495_38e-2 * z2 - 1.387_768_560_32e-1) * z2 + 1.997_771_064_78e-1) * z2 - 3.333_294_915_39e-1;
    let mut a = base + z + z * z2 * p;
    if ay > ax {
        a = FRAC_PI_2 - a;
    }
    if gx < 0.0 {
        a = PI - a;
    }
    if gy < 0.0 {
        a = TAU - a;
    }
    if a >= TAU {
        a -= TAU;
    }
    a
}

/// Soft assignment of an orientation to the two nearest of 16 bins centered
/// at `k·2π/16`.
#[inline]
fn orientation_bins(gx: f64, gy: f64) -> (usize, usize, f64) {
    let pos = angle(gx, gy) / (TAU / ORIENT_BINS as f64);
    let k0 = (pos.floor() as usize) % ORIENT_BINS;
    let frac = pos - pos.floor();
    (k0, (k0 + 1) % ORIENT_BINS, frac)
}

/// Gradient quadrant by sign tests, so a quarter turn permutes quadrants
/// exactly.
#[inline]
fn quadrant(gx: f64, gy: f64) -> usize {
    if gx > 0.0 && gy >= 0.0 {
        0
    } else if gx <= 0.0 && gy > 0.0 {
        1
    } else if gx < 0.0 && gy <= 0.0 {
        2
    } else {
        3
    }
}

/// Index into the global histogram.
#[inline]
pub fn global_bin(octant: usize, quadrant: usize, cell_row: usize, cell_col: usize) -> usize {
    (octant * 4 + quadrant) * 16 + cell_row * 4 + cell_col
}

/// Deterministic stand-in for the learned feature extractor, with the
/// default anti-aliasing prefilter.
pub fn reference_descriptor(img: &GrayImage) -> Result<FeatureField> {
    reference_descriptor_with_prefilter(img, PREFILTER_SIGMA)
}

/// Separable Gaussian blur with clamped borders; `sigma = 0` copies.
pub fn gaussian_prefilter(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("prefilter sigma {sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (img.height(), img.width());
    let tap = |p: usize, k: usize, n: usize| (p as isize + k as isize - radius).clamp(0, n as isize - 1) as usize;
    let v = img.values();
    let mut horiz = vec![0.0; h * w];
    for c in 0..w {
        let idx: Vec<usize> = (0..kernel.len()).map(|k| tap(c, k, w)).collect();
        for r in 0..h {
            let row = &v[r * w..(r + 1) * w];
            horiz[r * w + c] = kernel.iter().zip(&idx).map(|(wt, &i)| wt * row[i]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let idx: Vec<usize> = (0..kernel.len()).map(|k| tap(r, k, h)).collect();
        for c in 0..w {
            out[r * w + c] = kernel.iter().zip(&idx).map(|(wt, &i)| wt * horiz[i * w + c]).sum();
        }
    }
    GrayImage::new(h, w, out, img.origin())
}

/// Each grid cell `(i, j)` summarizes the 8×8 patch covering rows
/// `[4i−4, 4i+4)` and columns `[4j−4, 4j+4)` (clamped) of the prefiltered
/// image: 16 block means of intensity, 16 of the horizontal and 16 of the
/// vertical gradient over the patch's 4×4 arrangement of 2×2 blocks, and a
/// 16-bin soft orientation histogram. The global vector is a
/// magnitude-weighted joint histogram of intensity octant × gradient
/// quadrant × 4×4 spatial cell, L1-normalized.
///
/// The 2-pixel blocks are finer than the 4-pixel grid, so without the blur
/// a 2-pixel shift of the content moves it to a different channel that no
/// bilinear blend of neighboring cells recovers.
pub fn reference_descriptor_with_prefilter(img: &GrayImage, sigma: f64) -> Result<FeatureField> {
    let (h, w) = (img.height(), img.width());
    if h < 8 || w < 8 {
        return Err(Error::Contract(format!(
            "descriptor needs at least 8x8 pixels, got {h}x{w}"
        )));
    }
    let smoothed = gaussian_prefilter(img, sigma)?;
    let img = &smoothed;
    let g = gradients(img);
    // per-pixel contributions, shared by the four cells covering a pixel
    let px: Vec<[f64; 3]> = (0..h * w)
        .map(|k| [img.values()[k] / (255.0 * 4.0), g.gx[k] / 4.0, g.gy[k] / 4.0])
        .collect();
    let mag: Vec<f64> = g.gx.iter().zip(&g.gy).map(|(x, y)| (x * x + y * y).sqrt()).collect();
    let orient: Vec<Option<(usize, usize, f64, f64)>> = (0..h * w)
        .map(|k| {
            let (gx, gy) = (g.gx[k], g.gy[k]);
            let m = mag[k];
            (m > 0.0).then(|| {
                let (k0, k1, f) = orientation_bins(gx, gy);
                (k0, k1, (1.0 - f) * m / 64.0, f * m / 64.0)
            })
        })
        .collect();
    let (gh, gw) = grid_dims(h, w);
    let mut local = vec![0.0; gh * gw * LOCAL_DIM];
    for i in 0..gh {
        let rows: [usize; 8] = std::array::from_fn(|pr| ((4 * i + pr) as isize - 4).clamp(0, h as isize - 1) as usize);
        for j in 0..gw {
            let cols: [usize; 8] = std::array::from_fn(|pc| ((4 * j + pc) as isize - 4).clamp(0, w as isize - 1) as usize);
            let cell = &mut local[(i * gw + j) * LOCAL_DIM..][..LOCAL_DIM];
            for (pr, &rc) in rows.iter().enumerate() {
                for (pc, &cc) in cols.iter().enumerate() {
                    let block = (pr / 2) * 4 + pc / 2;
                    let k = rc * w + cc;
                    let [v, gx, gy] = px[k];
                    cell[block] += v;
                    cell[16 + block] += gx;
                    cell[32 + block] += gy;
                    if let Some((k0, k1, w0, w1)) = orient[k] {
                        cell[48 + k0] += w0;
                        cell[48 + k1] += w1;
                    }
                }
            }
        }
    }

    let mut global = vec![0.0; GLOBAL_DIM];
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            let (gx, gy) = (g.gx[k], g.gy[k]);
            let m = mag[k];
            if m == 0.0 {
                continue;
            }
            let octant = ((img.values()[k] / 32.0).floor() as usize).min(7);
            let bin = global_bin(octant, quadrant(gx, gy), r * 4 / h, c * 4 / w);
            global[bin] += m;
        }
    }
    let total: f64 = global.iter().sum();
    if total > 0.0 {
        for v in &mut global {
            *v /= total;
        }
    }
    FeatureField::from_parts((h, w), local, global)
}

/// Linear 576 → 64 map applied to `[local ‖ global]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reduction {
    matrix: DMatrix<f64>,
}

impl Reduction {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.shape() != (DESCRIPTOR_DIM, FUSED_DIM) {
            return Err(Error::Contract(format!(
                "reduction must be {DESCRIPTOR_DIM}x{FUSED_DIM}, got {:?}",
                matrix.shape()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite reduction entry".into()));
        }
        Ok(Self { matrix })
    }

    /// `[I | 0]`: the descriptor is the local feature alone.
    pub fn identity_block() -> Self {
        let mut m = DMatrix::zeros(DESCRIPTOR_DIM, FUSED_DIM);
        for k in 0..DESCRIPTOR_DIM {
            m[(k, k)] = 1.0;
        }
        Self { matrix: m }
    }

    /// Orthonormal rows drawn from a seeded Gaussian, spanning all 576 inputs.
    pub fn random_orthonormal(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::<f64>::from_fn(FUSED_DIM, DESCRIPTOR_DIM, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        let q = g.qr().q();
        Self {
            matrix: q.transpose(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.matrix
    }
}

/// The shared default for both branches: a seeded random rotation of the
/// local block, zero weight on the global block. Rows stay orthonormal and
/// local distances are preserved exactly.
impl Default for Reduction {
    fn default() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_REDUCTION_SEED);
        let g = DMatrix::<f64>::from_fn(LOCAL_DIM, LOCAL_DIM, |_, _| {
            StandardNormal.sample(&mut rng)
        });
        let q = g.qr().q();
        let mut m = DMatrix::zeros(DESCRIPTOR_DIM, FUSED_DIM);
        m.view_mut((0, 0), (DESCRIPTOR_DIM, LOCAL_DIM)).copy_from(&q);
        Self { matrix: m }
    }
}

/// Column-reversed copy of an image.
pub fn mirror_columns(img: &GrayImage) -> Result<GrayImage> {
    let w = img.width();
    GrayImage::from_fn(img.height(), w, img.origin(), |r, c| img.get(r, w - 1 - c))
}

/// The same edges in the column-reversed frame of a `width`-wide image;
/// order, scores and padding are kept.
pub fn mirror_edges(edges: &EdgeSet, width: usize) -> Result<EdgeSet> {
    let real = edges.real_count();
    let mut px = Vec::with_capacity(real);
    for &(r, c) in &edges.pixels()[..real] {
        if c >= width {
            return Err(Error::Contract(format!("edge column {c} outside width {width}")));
        }
        px.push((r, width - 1 - c));
    }
    EdgeSet::from_ranked(px, edges.scores()[..real].to_vec(), edges.target_count())
}

/// Unit-norm descriptors, one row per edge pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    rows: usize,
    dim: usize,
    source: Branch,
    vectors: Vec<f64>,
}

impl DescriptorSet {
    /// Normalizes each row; an all-zero row becomes the uniform unit vector.
    pub fn from_rows(dim: usize, source: Branch, mut vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(Error::Contract("descriptor buffer is not a whole number of rows".into()));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite descriptor".into()));
        }
        for row in vectors.chunks_mut(dim) {
            normalize_row(row);
        }
        Ok(Self {
            rows: vectors.len() / dim,
            dim,
            source,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn source(&self) -> Branch {
        self.source
    }
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.dim, &self.vectors)
    }

    pub fn header(&self) -> DescriptorHeader {
        DescriptorHeader {
            n: self.rows,
            dim: self.dim,
            source: self.source,
        }
    }

    /// Row-major little-endian float32.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.vectors
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect()
    }

    /// Writes `<path>` (binary) and `<path>.json` (header).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())?;
        let header = serde_json::to_string_pretty(&self.header())
            .map_err(|e| Error::Format(e.to_string()))?;
        write_atomic_str(&header_path(path), &header)
    }
}

pub fn header_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

fn normalize_row(row: &mut [f64]) {
    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        for v in row.iter_mut() {
            *v /= n;
        }
    } else {
        let u = 1.0 / (row.len() as f64).sqrt();
        row.iter_mut().for_each(|v| *v = u);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorHeader {
    pub n: usize,
    pub dim: usize,
    pub source: Branch,
}

pub fn parse_descriptor_header(text: &str) -> Result<DescriptorHeader> {
    let h: DescriptorHeader = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("descriptor header: {e}")))?;
    if h.dim == 0 {
        return Err(Error::Format("descriptor dimension must be positive".into()));
    }
    Ok(h)
}

/// Decodes a float32 export; rows are re-normalized against rounding.
pub fn decode_descriptor_set(header: DescriptorHeader, bytes: &[u8]) -> Result<DescriptorSet> {
    let expect = header
        .n
        .checked_mul(header.dim)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("descriptor dimensions overflow".into()))?;
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "descriptor file holds {} bytes, header implies {expect}",
            bytes.len()
        )));
    }
    let vectors: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("descriptor file holds non-finite values".into()));
    }
    DescriptorSet::from_rows(header.dim, header.source, vectors)
}

pub fn load_descriptor_set(path: &Path) -> Result<DescriptorSet> {
    let header = parse_descriptor_header(&crate::io_util::read_string(&header_path(path))?)?;
    decode_descriptor_set(header, &crate::io_util::read_bytes(path)?)
}

/// Grid coordinate of a pixel: `(row / 4, col / 4)`, clamped to the grid.
#[inline]
fn grid_coord(p: usize, n: usize) -> (usize, usize, f64) {
    let x = (p as f64 / GRID_STRIDE as f64).min((n - 1) as f64);
    let i0 = x.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, x - i0 as f64)
}

/// Bilinear weights and cell indices for one pixel.
fn bilinear_taps(field: &FeatureField, (row, col): (usize, usize)) -> [(usize, f64); 4] {
    let (r0, r1, fr) = grid_coord(row, field.grid_height);
    let (c0, c1, fc) = grid_coord(col, field.grid_width);
    let gw = field.grid_width;
    [
        (r0 * gw + c0, (1.0 - fr) * (1.0 - fc)),
        (r0 * gw + c1, (1.0 - fr) * fc),
        (r1 * gw + c0, fr * (1.0 - fc)),
        (r1 * gw + c1, fr * fc),
    ]
}

fn check_edges(field: &FeatureField, edges: &EdgeSet) -> Result<()> {
    for &(r, c) in edges.pixels() {
        if r >= field.image_height || c >= field.image_width {
            return Err(Error::Contract(format!(
                "edge pixel ({r}, {c}) outside {}x{} image",
                field.image_height, field.image_width
            )));
        }
    }
    Ok(())
}

/// Bilinearly sampled local features, `N × 64` row-major, before fusion.
pub fn sample_local(field: &FeatureField, edges: &EdgeSet) -> Result<Vec<f64>> {
    check_edges(field, edges)?;
    let mut out = vec![0.0; edges.len() * LOCAL_DIM];
    for (n, &px) in edges.pixels().iter().enumerate() {
        let dst = &mut out[n * LOCAL_DIM..(n + 1) * LOCAL_DIM];
        for (cell, wgt) in bilinear_taps(field, px) {
            if wgt == 0.0 {
                continue;
            }
            let src = &field.local[cell * LOCAL_DIM..(cell + 1) * LOCAL_DIM];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wgt * s;
            }
        }
    }
    Ok(out)
}

/// Un-normalized fused samples `[local(u/4, v/4) ‖ other_global]`, `N × 576`.
/// This is what the reduction acts on; the trainer differentiates through it.
pub fn sample_fused(field: &FeatureField, other_global: &[f64], edges: &EdgeSet) -> Result<DMatrix<f64>> {
    if other_global.len() != GLOBAL_DIM {
        return Err(Error::Contract(format!(
            "global vector has {} entries, expected {GLOBAL_DIM}",
            other_global.len()
        )));
    }
    let local = sample_local(field, edges)?;
    Ok(DMatrix::from_fn(edges.len(), FUSED_DIM, |n, k| {
        if k < LOCAL_DIM {
            local[n * LOCAL_DIM + k]
        } else {
            other_global[k - LOCAL_DIM]
        }
    }))
}

/// Fuses the local grid with the other branch's global vector, reduces to
/// 64 channels and samples at each edge pixel, then L2-normalizes.
///
/// The reduction is linear, so it is applied to the cells the samples touch
/// before interpolation; this equals reducing the interpolated fused vector.
pub fn fuse_and_sample(
    field: &FeatureField,
    other_global: &[f64],
    edges: &EdgeSet,
    reduction: &Reduction,
    source: Branch,
) -> Result<DescriptorSet> {
    if other_global.len() != GLOBAL_DIM {
        return Err(Error::Contract(format!(
            "global vector has {} entries, expected {GLOBAL_DIM}",
            other_global.len()
        )));
    }
    check_edges(field, edges)?;
    let m = &reduction.matrix;
    let bias: Vec<f64> = (0..DESCRIPTOR_DIM)
        .map(|d| (0..GLOBAL_DIM).map(|k| m[(d, LOCAL_DIM + k)] * other_global[k]).sum())
        .collect();
    // reduce every cell the samples touch in one product; column `slot[c]`
    // of `reduced` is the reduced local block of cell `c`
    let mut slot = vec![usize::MAX; field.grid_height * field.grid_width];
    let mut touched = Vec::new();
    for &px in edges.pixels() {
        for (cell, wgt) in bilinear_taps(field, px) {
            if wgt != 0.0 && slot[cell] == usize::MAX {
                slot[cell] = touched.len();
                touched.push(cell);
            }
        }
    }
    let gathered = DMatrix::from_fn(LOCAL_DIM, touched.len(), |k, t| field.local[touched[t] * LOCAL_DIM + k]);
    let reduced = m.columns(0, LOCAL_DIM) * gathered;

    let mut out = vec![0.0; edges.len() * DESCRIPTOR_DIM];
    for (n, &px) in edges.pixels().iter().enumerate() {
        let dst = &mut out[n * DESCRIPTOR_DIM..(n + 1) * DESCRIPTOR_DIM];
        dst.copy_from_slice(&bias);
        for (cell, wgt) in bilinear_taps(field, px) {
            if wgt == 0.0 {
                continue;
            }
            for (d, s) in dst.iter_mut().zip(reduced.column(slot[cell]).iter()) {
                *d += wgt * s;
            }
        }
    }
    DescriptorSet::from_rows(DESCRIPTOR_DIM, source, out)
}

/// Descriptors for both branches with the cross-wired globals: reflectance
/// descriptors consume the camera global vector and vice versa.
pub fn describe_pair(
    map_field: &FeatureField,
    cam_field: &FeatureField,
    edges_r: &EdgeSet,
    edges_c: &EdgeSet,
    red_r: &Reduction,
    red_c: &Reduction,
) -> Result<(DescriptorSet, DescriptorSet)> {
    let d_r = fuse_and_sample(map_field, cam_field.global(), edges_r, red_r, Branch::Reflectance)?;
    let d_c = fuse_and_sample(cam_field, map_field.global(), edges_c, red_c, Branch::Camera)?;
    Ok((d_r, d_c))
}
