use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{self, Reduction, DESCRIPTOR_DIM, FUSED_DIM};
use crate::error::{Error, Result};
use crate::io_util::{read_bytes, read_string, write_atomic, write_atomic_str};

/// Initial scale of the score linears: `W = √10·I`, so unit descriptors give
/// scores in `[−10, 10]`.
pub const DEFAULT_SCORE_SCALE: f64 = 10.0;

/// Learnable matching-layer parameters. Row vectors are multiplied from the
/// left: `a = d·W_r + b_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchParams {
    pub w_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub w_c: DMatrix<f64>,
    pub b_c: DVector<f64>,
    pub h_r: DVector<f64>,
    pub hb_r: f64,
    pub h_c: DVector<f64>,
    pub hb_c: f64,
}

impl MatchParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            w_r: DMatrix::zeros(dim, dim),
            b_r: DVector::zeros(dim),
            w_c: DMatrix::zeros(dim, dim),
            b_c: DVector::zeros(dim),
            h_r: DVector::zeros(dim),
            hb_r: 0.0,
            h_c: DVector::zeros(dim),
            hb_c: 0.0,
        }
    }

    /// `W = √scale·I`, zero biases and heads (σ = ½ everywhere).
    pub fn identity(dim: usize, scale: f64) -> Self {
        let mut p = Self::zeros(dim);
        p.w_r = DMatrix::identity(dim, dim) * scale.sqrt();
        p.w_c = p.w_r.clone();
        p
    }

    pub fn default_for(dim: usize) -> Self {
        Self::identity(dim, DEFAULT_SCORE_SCALE)
    }

    /// Uniform entries in `[−scale, scale]`; for tests and gradient checks.
    pub fn random(dim: usize, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flat = vec![0.0; Self::len_for(dim)];
        for v in &mut flat {
            *v = rng.gen_range(-scale..=scale);
        }
        Self::from_flat(dim, &flat).expect("length matches")
    }

    pub fn dim(&self) -> usize {
        self.b_r.len()
    }

    pub fn len_for(dim: usize) -> usize {
        2 * dim * dim + 4 * dim + 2
    }

    /// Flat layout: `W_r` row-major, `b_r`, `W_c` row-major, `b_c`, `h_r`,
    /// `hb_r`, `h_c`, `hb_c`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::len_for(self.dim()));
        let push_mat = |out: &mut Vec<f64>, m: &DMatrix<f64>| {
            for r in m.row_iter() {
                out.extend(r.iter());
            }
        };
        push_mat(&mut out, &self.w_r);
        out.extend(self.b_r.iter());
        push_mat(&mut out, &self.w_c);
        out.extend(self.b_c.iter());
        out.extend(self.h_r.iter());
        out.push(self.hb_r);
        out.extend(self.h_c.iter());
        out.push(self.hb_c);
        out
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::len_for(dim) {
            return Err(Error::Format(format!(
                "{} parameters, expected {} for dimension {dim}",
                flat.len(),
                Self::len_for(dim)
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite match parameter".into()));
        }
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let w_r = DMatrix::from_row_slice(dim, dim, &take(dim * dim));
        let b_r = DVector::from_vec(take(dim));
        let w_c = DMatrix::from_row_slice(dim, dim, &take(dim * dim));
        let b_c = DVector::from_vec(take(dim));
        let h_r = DVector::from_vec(take(dim));
        let hb_r = take(1)[0];
        let h_c = DVector::from_vec(take(dim));
        let hb_c = take(1)[0];
        Ok(Self {
            w_r,
            b_r,
            w_c,
            b_c,
            h_r,
            hb_r,
            h_c,
            hb_c,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let shapes_ok = self.w_r.shape() == (d, d)
            && self.w_c.shape() == (d, d)
            && self.b_c.len() == d
            && self.h_r.len() == d
            && self.h_c.len() == d;
        if !shapes_ok {
            return Err(Error::Contract("inconsistent match parameter shapes".into()));
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite match parameter".into()));
        }
        Ok(())
    }

    /// Writes `<path>` (float32 parameters, then the two reductions when
    /// present) and `<path>.json` (manifest).
    pub fn save(&self, path: &Path, reductions: Option<(&Reduction, &Reduction)>, mut manifest: MatchManifest) -> Result<()> {
        let mut values = self.to_flat();
        manifest.dim = self.dim();
        manifest.has_reductions = reductions.is_some();
        if let Some((r, c)) = reductions {
            for m in [r.matrix(), c.matrix()] {
                for row in m.row_iter() {
                    values.extend(row.iter());
                }
            }
        }
        let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
        write_atomic(path, &bytes)?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        write_atomic_str(&descriptor::header_path(path), &text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchManifest {
    pub dim: usize,
    #[serde(default)]
    pub has_reductions: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default)]
    pub learning_rate: f64,
    #[serde(default)]
    pub batch_size: usize,
    #[serde(default)]
    pub scenes: usize,
    #[serde(default)]
    pub epoch_losses: Vec<f64>,
}

impl MatchManifest {
    pub fn untrained(dim: usize) -> Self {
        Self {
            dim,
            has_reductions: false,
            seed: 0,
            epochs: 0,
            learning_rate: 0.0,
            batch_size: 0,
            scenes: 0,
            epoch_losses: Vec::new(),
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<MatchManifest> {
    let m: MatchManifest =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("match manifest: {e}")))?;
    if m.dim == 0 || m.dim > 4096 {
        return Err(Error::Format(format!("implausible descriptor dimension {}", m.dim)));
    }
    if m.has_reductions && m.dim != DESCRIPTOR_DIM {
        return Err(Error::Format("reductions require the 64-dim descriptor".into()));
    }
    Ok(m)
}

/// Decodes parameters (and reductions if the manifest says so).
pub fn decode_match_params(
    manifest: &MatchManifest,
    bytes: &[u8],
) -> Result<(MatchParams, Option<(Reduction, Reduction)>)> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Format("parameter file is not whole float32 values".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let n = MatchParams::len_for(manifest.dim);
    let red_len = DESCRIPTOR_DIM * FUSED_DIM;
    let expect = n + if manifest.has_reductions { 2 * red_len } else { 0 };
    if values.len() != expect {
        return Err(Error::Format(format!(
            "parameter file holds {} values, manifest implies {expect}",
            values.len()
        )));
    }
    let params = MatchParams::from_flat(manifest.dim, &values[..n])?;
    let reductions = if manifest.has_reductions {
        let r = DMatrix::from_row_slice(DESCRIPTOR_DIM, FUSED_DIM, &values[n..n + red_len]);
        let c = DMatrix::from_row_slice(DESCRIPTOR_DIM, FUSED_DIM, &values[n + red_len..]);
        Some((Reduction::new(r)?, Reduction::new(c)?))
    } else {
        None
    };
    Ok((params, reductions))
}

pub fn load_match_params(path: &Path) -> Result<(MatchParams, Option<(Reduction, Reduction)>, MatchManifest)> {
    let manifest = parse_manifest(&read_string(&descriptor::header_path(path))?)?;
    let (p, r) = decode_match_params(&manifest, &read_bytes(path)?)?;
    Ok((p, r, manifest))
}
