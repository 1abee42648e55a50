//! Matching layer: pairwise scores, matchability, dual-softmax partial
//! assignment and mutual-max extraction; losses, gradients and a small
//! trainer live in the submodules.

mod gt;
mod loss;
mod params;
mod train;

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::image_ops::EdgeSet;
use crate::io_util::write_atomic_str;

pub use gt::{brute_force_gt, gt_correspondences, GroundTruth};
pub use loss::{
    backward, forward, loss_gradients, losses, reduce_rows, reduction_gradient, LossTerms, ParamGrads, Target,
};
pub use params::{decode_match_params, load_match_params, parse_manifest, MatchManifest, MatchParams};
pub use train::{toy_train, Adam, TrainConfig, TrainOutcome, TrainingExample};

/// How the row and column softmaxes are combined into `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    #[default]
    Product,
    Mean,
}

impl FromStr for Combine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(Combine::Product),
            "mean" => Ok(Combine::Mean),
            other => Err(Error::Config(format!("unknown combine mode `{other}`"))),
        }
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without underflow.
#[inline]
pub fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn check_dims(d: &DescriptorSet, p: &MatchParams) -> Result<()> {
    if d.dim() != p.dim() {
        return Err(Error::Contract(format!(
            "descriptor dimension {} does not match parameters ({})",
            d.dim(),
            p.dim()
        )));
    }
    Ok(())
}

/// `d·W + b` for every row.
pub(crate) fn linear(d: &DMatrix<f64>, w: &DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    let mut a = d * w;
    for mut row in a.row_iter_mut() {
        row += b.transpose();
    }
    a
}

/// `S = (d_r W_r + b_r)(d_c W_c + b_c)ᵀ`.
pub fn score_matrix(d_r: &DescriptorSet, d_c: &DescriptorSet, p: &MatchParams) -> Result<DMatrix<f64>> {
    check_dims(d_r, p)?;
    check_dims(d_c, p)?;
    let a = linear(&d_r.to_matrix(), &p.w_r, &p.b_r);
    let b = linear(&d_c.to_matrix(), &p.w_c, &p.b_c);
    Ok(a * b.transpose())
}

/// `σ_i = logistic(d_i·w + b)`.
pub fn matchability(d: &DescriptorSet, w: &DVector<f64>, b: f64) -> Result<DVector<f64>> {
    if w.len() != d.dim() {
        return Err(Error::Contract("matchability head dimension mismatch".into()));
    }
    Ok(DVector::from_iterator(
        d.len(),
        (0..d.len()).map(|i| logistic(d.row(i).iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + b)),
    ))
}

/// Log-sum-exp of every row.
pub fn row_lse(s: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        s.nrows(),
        s.row_iter().map(|r| {
            let m = r.max();
            m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        }),
    )
}

/// Log-sum-exp of every column.
pub fn col_lse(s: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        s.ncols(),
        s.column_iter().map(|c| {
            let m = c.max();
            m + c.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        }),
    )
}

pub fn row_softmax(s: &DMatrix<f64>) -> DMatrix<f64> {
    let l = row_lse(s);
    DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| (s[(i, j)] - l[i]).exp())
}

pub fn col_softmax(s: &DMatrix<f64>) -> DMatrix<f64> {
    let l = col_lse(s);
    DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| (s[(i, j)] - l[j]).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialAssignment {
    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub sigma_r: DVector<f64>,
    pub sigma_c: DVector<f64>,
    pub combine: Combine,
    pub lse_row: DVector<f64>,
    pub lse_col: DVector<f64>,
}

impl PartialAssignment {
    /// `ln P_ij` evaluated from the log-domain pieces, with the matchability
    /// factors clamped as in the losses.
    pub fn log_p(&self, i: usize, j: usize) -> f64 {
        let s = self.s[(i, j)];
        let soft = match self.combine {
            Combine::Product => 2.0 * s - self.lse_row[i] - self.lse_col[j],
            Combine::Mean => {
                let (a, b) = (s - self.lse_row[i], s - self.lse_col[j]);
                let m = a.max(b);
                (0.5f64).ln() + m + ((a - m).exp() + (b - m).exp()).ln()
            }
        };
        soft + clamp_sigma(self.sigma_r[i]).ln() + clamp_sigma(self.sigma_c[j]).ln()
    }
}

pub const SIGMA_CLAMP: f64 = 1e-7;

#[inline]
pub fn clamp_sigma(s: f64) -> f64 {
    s.clamp(SIGMA_CLAMP, 1.0 - SIGMA_CLAMP)
}

/// `P = softmax_row(S) ⊙ softmax_col(S) ⊙ σ_r σ_cᵀ` (or the mean of the two
/// softmaxes).
pub fn partial_assignment(
    s: &DMatrix<f64>,
    sigma_r: &DVector<f64>,
    sigma_c: &DVector<f64>,
    combine: Combine,
) -> Result<PartialAssignment> {
    if s.nrows() != sigma_r.len() || s.ncols() != sigma_c.len() {
        return Err(Error::Contract("score matrix and matchability shapes differ".into()));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let lr = row_lse(s);
    let lc = col_lse(s);
    let p = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
        let v = s[(i, j)];
        let soft = match combine {
            Combine::Product => (2.0 * v - lr[i] - lc[j]).exp(),
            Combine::Mean => 0.5 * ((v - lr[i]).exp() + (v - lc[j]).exp()),
        };
        soft * sigma_r[i] * sigma_c[j]
    });
    Ok(PartialAssignment {
        s: s.clone(),
        p,
        sigma_r: sigma_r.clone(),
        sigma_c: sigma_c.clone(),
        combine,
        lse_row: lr,
        lse_col: lc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub confidence: f64,
}

/// Mutual-max pairs, ordered by `i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Match>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `i,j,confidence,row_r,col_r,row_c,col_c`.
    pub fn to_csv(&self, edges_r: &EdgeSet, edges_c: &EdgeSet) -> String {
        let mut out = String::from("i,j,confidence,row_r,col_r,row_c,col_c\n");
        for m in &self.pairs {
            let (rr, cr) = edges_r.pixels()[m.i];
            let (rc, cc) = edges_c.pixels()[m.j];
            out.push_str(&format!("{},{},{},{rr},{cr},{rc},{cc}\n", m.i, m.j, m.confidence));
        }
        out
    }

    pub fn save_csv(&self, path: &Path, edges_r: &EdgeSet, edges_c: &EdgeSet) -> Result<()> {
        write_atomic_str(path, &self.to_csv(edges_r, edges_c))
    }
}

/// Index of the first maximum.
fn first_argmax(it: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in it.enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// `(i, j)` kept iff `j` is row `i`'s argmax, `i` is column `j`'s argmax and
/// `P_ij ≥ floor`. Ties go to the smallest index.
pub fn extract_matches(p: &DMatrix<f64>, confidence_floor: f64) -> CorrespondenceSet {
    let col_best: Vec<Option<usize>> = p.column_iter().map(|c| first_argmax(c.iter().copied())).collect();
    let pairs = p
        .row_iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let j = first_argmax(row.iter().copied())?;
            let c = p[(i, j)];
            (col_best[j] == Some(i) && c >= confidence_floor && c > 0.0).then_some(Match {
                i,
                j,
                confidence: c,
            })
        })
        .collect();
    CorrespondenceSet { pairs }
}

/// Rows at the tail that repeat the last distinct row; returns the number of
/// distinct leading rows.
fn distinct_prefix(d: &DescriptorSet) -> usize {
    let n = d.len();
    let mut k = n;
    while k > 1 && d.row(k - 2) == d.row(n - 1) {
        k -= 1;
    }
    k
}

/// Full match step: scores, matchability, assignment and extraction.
///
/// For the product combination this never materializes `P`: the mutual-max
/// test runs on `ln P` and padding rows (trailing repeats from a padded
/// `EdgeSet`) are folded in as multiplicities. Padding rows are exact
/// duplicates, so under smallest-index tie-breaking they can never win a
/// column and dropping them changes nothing.
pub fn match_descriptors(
    d_r: &DescriptorSet,
    d_c: &DescriptorSet,
    params: &MatchParams,
    combine: Combine,
    confidence_floor: f64,
) -> Result<CorrespondenceSet> {
    check_dims(d_r, params)?;
    check_dims(d_c, params)?;
    if d_r.is_empty() || d_c.is_empty() {
        return Ok(CorrespondenceSet::default());
    }
    if combine == Combine::Mean {
        let s = score_matrix(d_r, d_c, params)?;
        let sr = matchability(d_r, &params.h_r, params.hb_r)?;
        let sc = matchability(d_c, &params.h_c, params.hb_c)?;
        let pa = partial_assignment(&s, &sr, &sc, combine)?;
        return Ok(extract_matches(&pa.p, confidence_floor));
    }

    let (nr_all, nc_all) = (d_r.len(), d_c.len());
    let (nr, nc) = (distinct_prefix(d_r), distinct_prefix(d_c));
    let dr = DMatrix::from_row_slice(nr, d_r.dim(), &d_r.as_slice()[..nr * d_r.dim()]);
    let dc = DMatrix::from_row_slice(nc, d_c.dim(), &d_c.as_slice()[..nc * d_c.dim()]);
    let a = linear(&dr, &params.w_r, &params.b_r);
    let b = linear(&dc, &params.w_c, &params.b_c);
    let zr = &dr * &params.h_r;
    let zc = &dc * &params.h_c;
    let shape = Shape { nr, nc, nr_all, nc_all };
    if nr * nc >= SINGLE_PRECISION_ENTRIES {
        product_matches_f32(&a, &b, &zr, &zc, params, shape, confidence_floor)
    } else {
        product_matches_f64(&a, &b, &zr, &zc, params, shape, confidence_floor)
    }
}

/// Problems at least this large score in single precision with SIMD
/// exponentials; smaller ones stay in double precision.
pub const SINGLE_PRECISION_ENTRIES: usize = 1 << 16;

#[derive(Clone, Copy)]
struct Shape {
    nr: usize,
    nc: usize,
    nr_all: usize,
    nc_all: usize,
}

impl Shape {
    fn mult_r(&self, i: usize) -> f64 {
        if i + 1 == self.nr {
            (self.nr_all - self.nr + 1) as f64
        } else {
            1.0
        }
    }
    fn mult_c(&self, j: usize) -> f64 {
        if j + 1 == self.nc {
            (self.nc_all - self.nc + 1) as f64
        } else {
            1.0
        }
    }
}

fn log_terms(z: &DVector<f64>, bias: f64, lse: &[f64]) -> Vec<f64> {
    lse.iter().enumerate().map(|(i, l)| log_logistic(z[i] + bias) - l).collect()
}

fn mutual_pairs(
    row_arg: &[usize],
    col_arg: &[usize],
    score: impl Fn(usize, usize) -> f64,
    row_term: &[f64],
    col_term: &[f64],
    floor: f64,
) -> CorrespondenceSet {
    let pairs = row_arg
        .iter()
        .enumerate()
        .filter_map(|(i, &j)| {
            if col_arg[j] != i {
                return None;
            }
            let c = (2.0 * score(i, j) + row_term[i] + col_term[j]).exp();
            (c >= floor && c > 0.0).then_some(Match { i, j, confidence: c })
        })
        .collect();
    CorrespondenceSet { pairs }
}

fn product_matches_f64(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    zr: &DVector<f64>,
    zc: &DVector<f64>,
    params: &MatchParams,
    sh: Shape,
    floor: f64,
) -> Result<CorrespondenceSet> {
    let (nr, nc) = (sh.nr, sh.nc);
    // row-major S: rows of S are columns of this matrix
    let st = b * a.transpose();
    if st.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }

    // one exponential per entry: row sums directly, column sums rescaled
    // from the per-row shift to a global one
    let row_max: Vec<f64> = st.column_iter().map(|c| c.max()).collect();
    let g = row_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lse_r = vec![0.0; nr];
    let mut col_acc = vec![0.0; nc];
    for i in 0..nr {
        let srow = st.column(i);
        let (m, wi) = (row_max[i], sh.mult_r(i) * (row_max[i] - g).exp());
        let mut rs = 0.0;
        for (j, (&s, acc)) in srow.iter().zip(col_acc.iter_mut()).enumerate() {
            let e = (s - m).exp();
            rs += e * sh.mult_c(j);
            *acc += e * wi;
        }
        lse_r[i] = m + rs.ln();
    }
    let lse_c: Vec<f64> = (0..nc)
        .map(|j| {
            if col_acc[j] > 1e-250 {
                g + col_acc[j].ln()
            } else {
                // the global shift underflowed this column; redo it exactly
                let m = (0..nr).map(|i| st[(j, i)]).fold(f64::NEG_INFINITY, f64::max);
                m + (0..nr).map(|i| sh.mult_r(i) * (st[(j, i)] - m).exp()).sum::<f64>().ln()
            }
        })
        .collect();

    let row_term = log_terms(zr, params.hb_r, &lse_r);
    let col_term = log_terms(zc, params.hb_c, &lse_c);
    let mut row_arg = vec![0usize; nr];
    let mut col_best = vec![f64::NEG_INFINITY; nc];
    let mut col_arg = vec![usize::MAX; nc];
    for i in 0..nr {
        let srow = st.column(i);
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (j, &s) in srow.iter().enumerate() {
            let v = 2.0 * s + col_term[j];
            if v > best {
                best = v;
                arg = j;
            }
            let w = 2.0 * s + row_term[i];
            if w > col_best[j] {
                col_best[j] = w;
                col_arg[j] = i;
            }
        }
        row_arg[i] = arg;
    }
    Ok(mutual_pairs(&row_arg, &col_arg, |i, j| st[(j, i)], &row_term, &col_term, floor))
}

/// `exp(x)` for `x ≤ 0`, arguments below −87 flushed to `exp(−87)`: range
/// reduction by `ln 2` and a degree-7 polynomial, ~2 ulp. Branch-free so the
/// slice loops below vectorize.
#[inline(always)]
fn exp_nonpos(x: f32) -> f32 {
    const MAGIC: f32 = 12_582_912.0; // 1.5 · 2²³
    let x = if x < -87.0 { -87.0 } else { x };
    let t = x * std::f32::consts::LOG2_E + MAGIC;
    let n = t - MAGIC;
    let r = x - n * 0.693_359_4 - n * -2.121_944_4e-4;
    let p = 1.0 / 5040.0;
    let p = p * r + 1.0 / 720.0;
    let p = p * r + 1.0 / 120.0;
    let p = p * r + 1.0 / 24.0;
    let p = p * r + 1.0 / 6.0;
    let p = p * r + 0.5;
    let p = p * r * r + r + 1.0;
    // low bits of t hold n; shift them into the exponent field
    let scale = f32::from_bits(t.to_bits().wrapping_sub(MAGIC.to_bits()).wrapping_add(127) << 23);
    p * scale
}

/// Sum with eight independent accumulators.
#[inline(always)]
fn sum8(v: &[f32]) -> f64 {
    let mut acc = [0.0f32; 8];
    let chunks = v.chunks_exact(8);
    let tail: f32 = chunks.remainder().iter().sum();
    for c in chunks {
        for k in 0..8 {
            acc[k] += c[k];
        }
    }
    acc.iter().map(|&a| f64::from(a)).sum::<f64>() + f64::from(tail)
}

/// Maximum and a poison value that is NaN iff some entry is not finite.
#[inline(always)]
fn max8(v: &[f32]) -> (f32, f32) {
    let mut acc = [f32::NEG_INFINITY; 8];
    let mut poison = [0.0f32; 8];
    let chunks = v.chunks_exact(8);
    let mut tail = (f32::NEG_INFINITY, 0.0f32);
    for &x in chunks.remainder() {
        tail = (tail.0.max(x), tail.1 + (x - x));
    }
    for c in chunks {
        for k in 0..8 {
            acc[k] = if c[k] > acc[k] { c[k] } else { acc[k] };
            poison[k] += c[k] - c[k];
        }
    }
    (acc.iter().cloned().fold(tail.0, f32::max), poison.iter().sum::<f32>() + tail.1)
}

/// Same computation as [`product_matches_f64`] on an `f32` score matrix.
/// The element loops are written to vectorize; on x86-64 an AVX2 build of
/// them is picked at run time.
fn product_matches_f32(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    zr: &DVector<f64>,
    zc: &DVector<f64>,
    params: &MatchParams,
    sh: Shape,
    floor: f64,
) -> Result<CorrespondenceSet> {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        return unsafe { product_matches_f32_avx2(a, b, zr, zc, params, sh, floor) };
    }
    product_matches_f32_body(a, b, zr, zc, params, sh, floor)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn product_matches_f32_avx2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    zr: &DVector<f64>,
    zc: &DVector<f64>,
    params: &MatchParams,
    sh: Shape,
    floor: f64,
) -> Result<CorrespondenceSet> {
    product_matches_f32_body(a, b, zr, zc, params, sh, floor)
}

#[inline(always)]
fn product_matches_f32_body(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    zr: &DVector<f64>,
    zc: &DVector<f64>,
    params: &MatchParams,
    sh: Shape,
    floor: f64,
) -> Result<CorrespondenceSet> {
    let (nr, nc) = (sh.nr, sh.nc);
    let st = b.map(|v| v as f32) * a.map(|v| v as f32).transpose();
    let row = |i: usize| &st.as_slice()[i * nc..(i + 1) * nc];

    let mut row_max = vec![0.0f32; nr];
    for (i, m) in row_max.iter_mut().enumerate() {
        let (v, poison) = max8(row(i));
        if poison.is_nan() {
            return Err(Error::Numeric("non-finite score".into()));
        }
        *m = v;
    }
    let g = row_max.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let last_c_extra = sh.mult_c(nc - 1) - 1.0;
    let mut lse_r = vec![0.0; nr];
    let mut col_acc = vec![0.0f32; nc];
    let mut e = vec![0.0f32; nc];
    for i in 0..nr {
        let m = row_max[i];
        let wi = (sh.mult_r(i) * f64::from(m - g).exp()) as f32;
        for (ej, &s) in e.iter_mut().zip(row(i)) {
            *ej = exp_nonpos(s - m);
        }
        for (acc, &ej) in col_acc.iter_mut().zip(&e) {
            *acc += ej * wi;
        }
        let rs = sum8(&e) + f64::from(e[nc - 1]) * last_c_extra;
        lse_r[i] = f64::from(m) + rs.ln();
    }
    let lse_c: Vec<f64> = (0..nc)
        .map(|j| {
            if col_acc[j] > 1e-30 {
                f64::from(g) + f64::from(col_acc[j]).ln()
            } else {
                // the global shift underflowed this column; redo it exactly
                let col = |i: usize| f64::from(st[(j, i)]);
                let m = (0..nr).map(col).fold(f64::NEG_INFINITY, f64::max);
                m + (0..nr).map(|i| sh.mult_r(i) * (col(i) - m).exp()).sum::<f64>().ln()
            }
        })
        .collect();

    let row_term = log_terms(zr, params.hb_r, &lse_r);
    let col_term = log_terms(zc, params.hb_c, &lse_c);
    let ct: Vec<f32> = col_term.iter().map(|&v| v as f32).collect();
    let mut row_arg = vec![0usize; nr];
    let mut col_best = vec![f32::NEG_INFINITY; nc];
    // row indices are exact in u32; the select form keeps the loop branch-free
    let mut col_arg = vec![u32::MAX; nc];
    for i in 0..nr {
        let s = row(i);
        let rt = row_term[i] as f32;
        for (ej, (&sj, &c)) in e.iter_mut().zip(s.iter().zip(&ct)) {
            *ej = 2.0 * sj + c;
        }
        let best = max8(&e).0;
        row_arg[i] = e.iter().position(|&v| v == best).unwrap_or(0);
        for ((cb, ca), &sj) in col_best.iter_mut().zip(col_arg.iter_mut()).zip(s) {
            let w = 2.0 * sj + rt;
            let up = w > *cb;
            *cb = if up { w } else { *cb };
            *ca = if up { i as u32 } else { *ca };
        }
    }
    let col_arg: Vec<usize> = col_arg.iter().map(|&v| v as usize).collect();
    Ok(mutual_pairs(&row_arg, &col_arg, |i, j| f64::from(st[(j, i)]), &row_term, &col_term, floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::Branch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, dim: usize, rng: &mut ChaCha8Rng, source: Branch) -> DescriptorSet {
        let v = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DescriptorSet::from_rows(dim, source, v).unwrap()
    }

    #[test]
    fn unit_vector_scores_one() {
        let p = MatchParams::identity(3, 1.0);
        let d = DescriptorSet::from_rows(3, Branch::Camera, vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(score_matrix(&d, &d, &p).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn score_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MatchParams::random(5, 11, 0.5);
        let dr = random_set(2, 5, &mut rng, Branch::Reflectance);
        let dc = random_set(3, 5, &mut rng, Branch::Camera);
        let s = score_matrix(&dr, &dc, &p).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    let mut a = p.b_r[k];
                    let mut b = p.b_c[k];
                    for l in 0..5 {
                        a += dr.row(i)[l] * p.w_r[(l, k)];
                        b += dc.row(j)[l] * p.w_c[(l, k)];
                    }
                    acc += a * b;
                }
                assert!((s[(i, j)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matchability_extremes() {
        let d = DescriptorSet::from_rows(2, Branch::Camera, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero = DVector::zeros(2);
        assert!(matchability(&d, &zero, 0.0).unwrap().iter().all(|&s| s == 0.5));
        let hi = matchability(&d, &zero, 10.0).unwrap();
        assert!((hi[0] - 0.999_954_602_131_297_6).abs() < 1e-12);
    }

    #[test]
    fn assignment_small_cases() {
        let s = DMatrix::from_element(1, 1, 3.7);
        let pa = partial_assignment(&s, &DVector::from_element(1, 0.3), &DVector::from_element(1, 0.6), Combine::Product).unwrap();
        assert!((pa.p[(0, 0)] - 0.18).abs() < 1e-15);
        let s = DMatrix::from_element(2, 2, -1.25);
        let ones = DVector::from_element(2, 1.0);
        let pa = partial_assignment(&s, &ones, &ones, Combine::Product).unwrap();
        assert!(pa.p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn extraction_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let m = extract_matches(&p, 0.0);
        assert_eq!(m.pairs.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(0, 0), (1, 1)]);
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.8, 0.85, 0.1]);
        assert_eq!(extract_matches(&p, 0.0).pairs.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(0, 0)]);
        let p = DMatrix::from_element(3, 3, 0.4);
        assert_eq!(extract_matches(&p, 0.0).pairs.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(0, 0)]);
        assert!(extract_matches(&DMatrix::from_row_slice(1, 1, &[0.3]), 0.5).is_empty());
    }

    #[test]
    fn fast_path_agrees_with_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..6 {
            let p = MatchParams::random(8, 100 + trial, 1.5);
            let mut dr = random_set(30, 8, &mut rng, Branch::Reflectance).as_slice().to_vec();
            let dc = random_set(41, 8, &mut rng, Branch::Camera);
            // pad the reflectance side like a short EdgeSet
            let last = dr[29 * 8..].to_vec();
            for _ in 0..9 {
                dr.extend_from_slice(&last);
            }
            let dr = DescriptorSet::from_rows(8, Branch::Reflectance, dr).unwrap();
            let s = score_matrix(&dr, &dc, &p).unwrap();
            let sr = matchability(&dr, &p.h_r, p.hb_r).unwrap();
            let sc = matchability(&dc, &p.h_c, p.hb_c).unwrap();
            let pa = partial_assignment(&s, &sr, &sc, Combine::Product).unwrap();
            let slow = extract_matches(&pa.p, 0.0);
            let fast = match_descriptors(&dr, &dc, &p, Combine::Product, 0.0).unwrap();
            assert_eq!(slow.len(), fast.len());
            for (a, b) in slow.pairs.iter().zip(&fast.pairs) {
                assert_eq!((a.i, a.j), (b.i, b.j));
                assert!((a.confidence - b.confidence).abs() < 1e-12 * a.confidence.max(1e-300) + 1e-15);
            }
        }
    }

    #[test]
    fn single_precision_path_agrees_with_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = MatchParams::random(16, 7, 1.5);
        let mut dr = random_set(293, 16, &mut rng, Branch::Reflectance).as_slice().to_vec();
        let dc = random_set(251, 16, &mut rng, Branch::Camera);
        let last = dr[292 * 16..].to_vec();
        for _ in 0..7 {
            dr.extend_from_slice(&last);
        }
        let dr = DescriptorSet::from_rows(16, Branch::Reflectance, dr).unwrap();
        assert!(293 * 251 >= SINGLE_PRECISION_ENTRIES);
        let s = score_matrix(&dr, &dc, &p).unwrap();
        let sr = matchability(&dr, &p.h_r, p.hb_r).unwrap();
        let sc = matchability(&dc, &p.h_c, p.hb_c).unwrap();
        let pa = partial_assignment(&s, &sr, &sc, Combine::Product).unwrap();
        let slow = extract_matches(&pa.p, 0.0);
        let fast = match_descriptors(&dr, &dc, &p, Combine::Product, 0.0).unwrap();
        assert!(slow.len() > 20);
        assert_eq!(slow.len(), fast.len());
        for (a, b) in slow.pairs.iter().zip(&fast.pairs) {
            assert_eq!((a.i, a.j), (b.i, b.j));
            assert!((a.confidence - b.confidence).abs() < 1e-4 * a.confidence);
        }
    }

    #[test]
    fn vectorizable_exp_is_accurate() {
        for k in 0..=870_000 {
            let x = -(k as f32) * 1e-4;
            let want = f64::from(x).exp();
            let got = f64::from(exp_nonpos(x));
            assert!((got - want).abs() <= 4e-7 * want, "{x}: {got} vs {want}");
        }
        assert_eq!(exp_nonpos(0.0), 1.0);
        assert!(exp_nonpos(-1e4) > 0.0);
    }

    #[test]
    fn log_logistic_is_stable() {
        assert!((log_logistic(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_logistic(-800.0) + 800.0).abs() < 1e-9);
        assert!(log_logistic(800.0).abs() < 1e-300);
        for x in [-3.0, -0.2, 0.7, 5.0] {
            assert!((log_logistic(x) - logistic(x).ln()).abs() < 1e-14);
        }
    }
}
