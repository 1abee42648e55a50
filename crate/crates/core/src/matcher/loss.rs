//! Training losses and their exact gradients.
//!
//! `L = L_σ1 + L_σ2 + L_P`: mean binary cross-entropy of each matchability
//! vector against its ground-truth flags, and the mean negative log of `P`
//! over the ground-truth pairs.

use nalgebra::{DMatrix, DVector};

use super::{clamp_sigma, linear, logistic, partial_assignment, Combine, MatchParams, PartialAssignment, SIGMA_CLAMP};
use crate::error::{Error, Result};

/// Ground-truth supervision for one scene.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Target {
    pub pairs: Vec<(usize, usize)>,
    pub sigma_r: Vec<f64>,
    pub sigma_c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub sigma_r: f64,
    pub sigma_c: f64,
    pub assignment: f64,
    pub total: f64,
    /// `L_P` was defined as 0 because the scene had no ground-truth pair.
    pub empty_matches: bool,
}

fn bce(sigma: &DVector<f64>, gt: &[f64]) -> f64 {
    let n = sigma.len() as f64;
    -sigma
        .iter()
        .zip(gt)
        .map(|(&s, &y)| {
            let s = clamp_sigma(s);
            y * s.ln() + (1.0 - y) * (1.0 - s).ln()
        })
        .sum::<f64>()
        / n
}

fn check_target(pa: &PartialAssignment, t: &Target) -> Result<()> {
    let (nr, nc) = pa.s.shape();
    if t.sigma_r.len() != nr || t.sigma_c.len() != nc {
        return Err(Error::Contract("ground-truth flag lengths differ from P".into()));
    }
    if t.pairs.iter().any(|&(i, j)| i >= nr || j >= nc) {
        return Err(Error::Contract("ground-truth pair outside P".into()));
    }
    let any_nan = pa.s.iter().chain(pa.sigma_r.iter()).chain(pa.sigma_c.iter()).any(|v| v.is_nan())
        || t.sigma_r.iter().chain(&t.sigma_c).any(|v| v.is_nan());
    if any_nan {
        return Err(Error::Numeric("NaN in loss inputs".into()));
    }
    Ok(())
}

pub fn losses(pa: &PartialAssignment, target: &Target) -> Result<LossTerms> {
    check_target(pa, target)?;
    let ls1 = bce(&pa.sigma_r, &target.sigma_r);
    let ls2 = bce(&pa.sigma_c, &target.sigma_c);
    let empty = target.pairs.is_empty();
    let lp = if empty {
        0.0
    } else {
        -target.pairs.iter().map(|&(i, j)| pa.log_p(i, j)).sum::<f64>() / target.pairs.len() as f64
    };
    Ok(LossTerms {
        sigma_r: ls1,
        sigma_c: ls2,
        assignment: lp,
        total: ls1 + ls2 + lp,
        empty_matches: empty,
    })
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub d_r: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    pub pa: PartialAssignment,
}

pub fn forward(d_r: &DMatrix<f64>, d_c: &DMatrix<f64>, params: &MatchParams, combine: Combine) -> Result<Forward> {
    let dim = params.dim();
    if d_r.ncols() != dim || d_c.ncols() != dim {
        return Err(Error::Contract("descriptor dimension does not match parameters".into()));
    }
    let a = linear(d_r, &params.w_r, &params.b_r);
    let b = linear(d_c, &params.w_c, &params.b_c);
    let s = &a * b.transpose();
    let sr = (d_r * &params.h_r).map(|z| logistic(z + params.hb_r));
    let sc = (d_c * &params.h_c).map(|z| logistic(z + params.hb_c));
    let pa = partial_assignment(&s, &sr, &sc, combine)?;
    Ok(Forward {
        d_r: d_r.clone(),
        d_c: d_c.clone(),
        a,
        b,
        pa,
    })
}

/// Gradients of `L` with respect to the parameters and both descriptor
/// matrices.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub params: MatchParams,
    pub d_r: DMatrix<f64>,
    pub d_c: DMatrix<f64>,
}

/// `∂ ln σ / ∂z` and `∂ BCE / ∂z` respect the clamp: inside the clamped
/// range the derivative is zero.
#[inline]
fn unclamped(s: f64) -> bool {
    (SIGMA_CLAMP..=1.0 - SIGMA_CLAMP).contains(&s)
}

pub fn backward(fwd: &Forward, params: &MatchParams, target: &Target) -> Result<(LossTerms, ParamGrads)> {
    let pa = &fwd.pa;
    let terms = losses(pa, target)?;
    let (nr, nc) = pa.s.shape();

    let mut g_s = DMatrix::<f64>::zeros(nr, nc);
    let mut dz_r = DVector::<f64>::zeros(nr);
    let mut dz_c = DVector::<f64>::zeros(nc);
    for i in 0..nr {
        let s = pa.sigma_r[i];
        if unclamped(s) {
            dz_r[i] = (s - target.sigma_r[i]) / nr as f64;
        }
    }
    for j in 0..nc {
        let s = pa.sigma_c[j];
        if unclamped(s) {
            dz_c[j] = (s - target.sigma_c[j]) / nc as f64;
        }
    }

    if !target.pairs.is_empty() {
        let k = target.pairs.len() as f64;
        for &(i, j) in &target.pairs {
            let sij = pa.s[(i, j)];
            let (wr, wc) = match pa.combine {
                Combine::Product => (1.0, 1.0),
                Combine::Mean => {
                    let (x, y) = (sij - pa.lse_row[i], sij - pa.lse_col[j]);
                    let q = logistic(x - y);
                    (q, 1.0 - q)
                }
            };
            // −∂ln P_ij/∂S: softmax Jacobians along row i and column j
            g_s[(i, j)] -= (wr + wc) / k;
            for b in 0..nc {
                g_s[(i, b)] += wr * (pa.s[(i, b)] - pa.lse_row[i]).exp() / k;
            }
            for a in 0..nr {
                g_s[(a, j)] += wc * (pa.s[(a, j)] - pa.lse_col[j]).exp() / k;
            }
            if unclamped(pa.sigma_r[i]) {
                dz_r[i] -= (1.0 - pa.sigma_r[i]) / k;
            }
            if unclamped(pa.sigma_c[j]) {
                dz_c[j] -= (1.0 - pa.sigma_c[j]) / k;
            }
        }
    }

    let da = &g_s * &fwd.b;
    let db = g_s.transpose() * &fwd.a;
    let mut g = MatchParams::zeros(params.dim());
    g.w_r = fwd.d_r.transpose() * &da;
    g.b_r = da.row_sum().transpose();
    g.w_c = fwd.d_c.transpose() * &db;
    g.b_c = db.row_sum().transpose();
    g.h_r = fwd.d_r.transpose() * &dz_r;
    g.hb_r = dz_r.sum();
    g.h_c = fwd.d_c.transpose() * &dz_c;
    g.hb_c = dz_c.sum();
    let dd_r = &da * params.w_r.transpose() + &dz_r * params.h_r.transpose();
    let dd_c = &db * params.w_c.transpose() + &dz_c * params.h_c.transpose();
    Ok((
        terms,
        ParamGrads {
            params: g,
            d_r: dd_r,
            d_c: dd_c,
        },
    ))
}

/// Row-normalized reduction output `d = normalize(X·Rᵀ)`; zero rows map to
/// the uniform unit vector (and pass no gradient).
pub fn reduce_rows(x: &DMatrix<f64>, reduction: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut y = x * reduction.transpose();
    let mut norms = Vec::with_capacity(y.nrows());
    let u = 1.0 / (y.ncols() as f64).sqrt();
    for mut row in y.row_iter_mut() {
        let n = row.norm();
        norms.push(n);
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(u);
        }
    }
    (y, norms)
}

/// Chains `∂L/∂d` through the row normalization and the reduction.
pub fn reduction_gradient(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    norms: &[f64],
    d_grad: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut dy = d_grad.clone();
    for (n, mut row) in dy.row_iter_mut().enumerate() {
        if norms[n] > 0.0 {
            let dn = d.row(n);
            let proj = dn.dot(&row);
            row -= dn * proj;
            row /= norms[n];
        } else {
            row.fill(0.0);
        }
    }
    dy.transpose() * x
}

/// Loss and gradients from fused samples through the reductions:
/// `(terms, parameter grads, ∂L/∂R_r, ∂L/∂R_c)`.
pub fn loss_gradients(
    x_r: &DMatrix<f64>,
    x_c: &DMatrix<f64>,
    red_r: &DMatrix<f64>,
    red_c: &DMatrix<f64>,
    params: &MatchParams,
    combine: Combine,
    target: &Target,
) -> Result<(LossTerms, MatchParams, DMatrix<f64>, DMatrix<f64>)> {
    let (d_r, n_r) = reduce_rows(x_r, red_r);
    let (d_c, n_c) = reduce_rows(x_c, red_c);
    let fwd = forward(&d_r, &d_c, params, combine)?;
    let (terms, g) = backward(&fwd, params, target)?;
    let gr = reduction_gradient(x_r, &d_r, &n_r, &g.d_r);
    let gc = reduction_gradient(x_c, &d_c, &n_c, &g.d_c);
    Ok((terms, g.params, gr, gc))
}
