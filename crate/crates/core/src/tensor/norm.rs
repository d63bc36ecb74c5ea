//! Batch normalization over all axes except the channel axis (axis 1).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean and (unbiased) variance per channel. Fresh stats are mean 0,
/// variance 1, so eval before any training step is well defined.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        mode: BnMode,
        config: BatchNormConfig,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape(format!("batch_norm: input {shape:?} has no channel axis")));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        if self.value(gamma).numel() != c
            || self.value(beta).numel() != c
            || stats.mean.len() != c
            || stats.var.len() != c
        {
            return Err(Error::Shape(format!(
                "batch_norm: {c} channels but parameters sized {}/{}/{}",
                self.value(gamma).numel(),
                self.value(beta).numel(),
                stats.mean.len()
            )));
        }
        let count = n * inner;
        let x = self.value(input).data();
        let eps = T::of(config.eps);
        let train = mode == BnMode::Train;

        let mut inv_std = vec![T::zero(); c];
        let mut shift = vec![T::zero(); c];
        for ch in 0..c {
            let (mean, var) = if train {
                // Accumulated in f64: the stem map holds ~10^5 values per channel.
                let planes = || (0..n).map(|b| &x[(b * c + ch) * inner..][..inner]);
                let sum: f64 = planes().map(|p| p.iter().map(|v| v.as_f64()).sum::<f64>()).sum();
                let mean = sum / count as f64;
                let sq: f64 = planes()
                    .map(|p| p.iter().map(|v| (v.as_f64() - mean) * (v.as_f64() - mean)).sum::<f64>())
                    .sum();
                (T::of(mean), T::of(sq / count as f64))
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            inv_std[ch] = T::one() / (var + eps).sqrt();
            shift[ch] = mean;
            if train {
                let m = T::of(config.momentum);
                let unbiased = if count > 1 {
                    var * T::of(count as f64 / (count - 1) as f64)
                } else {
                    var
                };
                stats.mean[ch] = (T::one() - m) * stats.mean[ch] + m * mean;
                stats.var[ch] = (T::one() - m) * stats.var[ch] + m * unbiased;
            }
        }

        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for (plane, ((xp, hp), op)) in x
            .chunks_exact(inner)
            .zip(xhat.chunks_exact_mut(inner))
            .zip(out.chunks_exact_mut(inner))
            .enumerate()
        {
            let ch = plane % c;
            let (mu, is, gc, bc) = (shift[ch], inv_std[ch], g[ch], b[ch]);
            for ((&xv, h), o) in xp.iter().zip(hp.iter_mut()).zip(op.iter_mut()) {
                *h = (xv - mu) * is;
                *o = gc * *h + bc;
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("batch_norm", value, &[input, gamma, beta], Op::BatchNorm {
            input,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn batch_norm_backward(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: &[T],
        inv_std: &[T],
        train: bool,
        grad: &[T],
    ) -> Vec<(Var, Vec<T>)> {
        let shape = self.shape(input);
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let count = T::of((n * inner) as f64);
        let g = self.value(gamma).data();

        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for (plane, (gp, hp)) in grad.chunks_exact(inner).zip(xhat.chunks_exact(inner)).enumerate() {
            let ch = plane % c;
            let (mut dg, mut db) = (T::zero(), T::zero());
            for (&gv, &h) in gp.iter().zip(hp) {
                dg += gv * h;
                db += gv;
            }
            dgamma[ch] += dg;
            dbeta[ch] += db;
        }
        let mut result = Vec::with_capacity(3);
        if self.requires_grad(input) {
            let mut dx = vec![T::zero(); grad.len()];
            for (plane, ((dp, gp), hp)) in dx
                .chunks_exact_mut(inner)
                .zip(grad.chunks_exact(inner))
                .zip(xhat.chunks_exact(inner))
                .enumerate()
            {
                let ch = plane % c;
                let scale = g[ch] * inv_std[ch];
                if train {
                    let (k, db, dg) = (scale / count, dbeta[ch], dgamma[ch]);
                    for ((d, &gv), &h) in dp.iter_mut().zip(gp).zip(hp) {
                        *d = k * (count * gv - db - h * dg);
                    }
                } else {
                    dp.iter_mut().zip(gp).for_each(|(d, &gv)| *d = scale * gv);
                }
            }
            result.push((input, dx));
        }
        result.push((gamma, dgamma));
        result.push((beta, dbeta));
        result
    }
}
