//! Mini-batch Adam on the matching layer, optionally including the two
//! descriptor reductions.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{backward, forward, loss_gradients, reduce_rows};
use super::{Combine, MatchParams, Target};
use crate::descriptor::Reduction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..x.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g[k] * g[k];
            x[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub combine: Combine,
    pub train_reduction: bool,
    /// Abort when an epoch's loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
            seed: 0,
            combine: Combine::Product,
            train_reduction: false,
            divergence_factor: 10.0,
        }
    }
}

/// One scene: fused samples for both branches and its supervision.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub x_r: DMatrix<f64>,
    pub x_c: DMatrix<f64>,
    pub target: Target,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MatchParams,
    pub reduction_r: Reduction,
    pub reduction_c: Reduction,
    pub initial_loss: f64,
    /// Mean loss seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

fn flatten(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>())
}

pub fn toy_train(
    examples: &[TrainingExample],
    init: &MatchParams,
    reductions: (&Reduction, &Reduction),
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::Config("no training scenes".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::Config("batch size must be positive and lr >= 0".into()));
    }
    init.validate()?;
    let np = MatchParams::len_for(init.dim());
    let rshape = reductions.0.matrix().shape();
    let rlen = rshape.0 * rshape.1;
    let mut x: Vec<f64> = init.to_flat();
    if cfg.train_reduction {
        x.extend(flatten(reductions.0.matrix()));
        x.extend(flatten(reductions.1.matrix()));
    }
    let unpack = |x: &[f64]| -> Result<(MatchParams, DMatrix<f64>, DMatrix<f64>)> {
        let p = MatchParams::from_flat(init.dim(), &x[..np])?;
        if cfg.train_reduction {
            Ok((
                p,
                DMatrix::from_row_slice(rshape.0, rshape.1, &x[np..np + rlen]),
                DMatrix::from_row_slice(rshape.0, rshape.1, &x[np + rlen..]),
            ))
        } else {
            Ok((p, reductions.0.matrix().clone(), reductions.1.matrix().clone()))
        }
    };

    // descriptors are fixed unless the reductions train
    let fixed: Vec<(DMatrix<f64>, DMatrix<f64>)> = if cfg.train_reduction {
        Vec::new()
    } else {
        examples
            .iter()
            .map(|e| (reduce_rows(&e.x_r, reductions.0.matrix()).0, reduce_rows(&e.x_c, reductions.1.matrix()).0))
            .collect()
    };
    let eval = |k: usize, p: &MatchParams, rr: &DMatrix<f64>, rc: &DMatrix<f64>| -> Result<(f64, Vec<f64>)> {
        let e = &examples[k];
        if cfg.train_reduction {
            let (terms, g, gr, gc) = loss_gradients(&e.x_r, &e.x_c, rr, rc, p, cfg.combine, &e.target)?;
            let mut flat = g.to_flat();
            flat.extend(flatten(&gr));
            flat.extend(flatten(&gc));
            Ok((terms.total, flat))
        } else {
            let fwd = forward(&fixed[k].0, &fixed[k].1, p, cfg.combine)?;
            let (terms, g) = backward(&fwd, p, &e.target)?;
            Ok((terms.total, g.params.to_flat()))
        }
    };

    let initial_loss = {
        let (p, rr, rc) = unpack(&x)?;
        let mut acc = 0.0;
        for k in 0..examples.len() {
            acc += eval(k, &p, &rr, &rc)?.0;
        }
        acc / examples.len() as f64
    };
    log::info!("toy training: {} scenes, initial loss {initial_loss:.5}", examples.len());

    let mut adam = Adam::new(x.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_acc = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (p, rr, rc) = unpack(&x)?;
            let mut grad = vec![0.0; x.len()];
            for &k in batch {
                let (l, g) = eval(k, &p, &rr, &rc)?;
                epoch_acc += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / batch.len() as f64;
                }
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    loss: f64::NAN,
                    initial: initial_loss,
                });
            }
            adam.step(&mut x, &grad);
        }
        let loss = epoch_acc / examples.len() as f64;
        log::info!("epoch {:>3}: loss {loss:.5}", epoch + 1);
        if !loss.is_finite() || loss > cfg.divergence_factor * initial_loss {
            return Err(Error::TrainingDiverged {
                epoch,
                loss,
                initial: initial_loss,
            });
        }
        epoch_losses.push(loss);
    }

    let (params, rr, rc) = unpack(&x)?;
    Ok(TrainOutcome {
        params,
        reduction_r: Reduction::new(rr)?,
        reduction_c: Reduction::new(rc)?,
        initial_loss,
        epoch_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::FUSED_DIM;
    use rand::Rng;

    fn examples(seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..6)
            .map(|_| {
                let x_c = DMatrix::from_fn(10, FUSED_DIM, |_, k| if k < 64 { rng.gen_range(0.0..1.0) } else { 0.0 });
                // reflectance side: the same features for the first six rows
                let x_r = DMatrix::from_fn(8, FUSED_DIM, |i, k| {
                    if i < 6 { x_c[(i, k)] } else if k < 64 { rng.gen_range(0.0..1.0) } else { 0.0 }
                });
                TrainingExample {
                    x_r,
                    x_c,
                    target: Target {
                        pairs: (0..6).map(|i| (i, i)).collect(),
                        sigma_r: (0..8).map(|i| if i < 6 { 1.0 } else { 0.0 }).collect(),
                        sigma_c: (0..10).map(|j| if j < 6 { 1.0 } else { 0.0 }).collect(),
                    },
                }
            })
            .collect()
    }

    fn reds() -> (Reduction, Reduction) {
        (Reduction::identity_block(), Reduction::identity_block())
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let (r, c) = reds();
        let init = MatchParams::default_for(64);
        let cfg = TrainConfig {
            epochs: 2,
            lr: 0.0,
            batch_size: 4,
            ..Default::default()
        };
        let out = toy_train(&examples(1), &init, (&r, &c), &cfg).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn deterministic_and_decreasing() {
        let (r, c) = reds();
        let init = MatchParams::default_for(64);
        let cfg = TrainConfig {
            epochs: 12,
            lr: 0.01,
            batch_size: 4,
            seed: 5,
            ..Default::default()
        };
        let a = toy_train(&examples(2), &init, (&r, &c), &cfg).unwrap();
        let b = toy_train(&examples(2), &init, (&r, &c), &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert!(a.epoch_losses.last().unwrap() < &a.epoch_losses[0]);
    }

    #[test]
    fn reduction_training_runs() {
        let (r, c) = reds();
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.01,
            batch_size: 3,
            train_reduction: true,
            ..Default::default()
        };
        let out = toy_train(&examples(3), &MatchParams::default_for(64), (&r, &c), &cfg).unwrap();
        assert_ne!(out.reduction_r, r);
        assert!(out.epoch_losses[2] < out.initial_loss);
    }
}
