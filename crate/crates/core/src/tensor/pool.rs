//! Spatial and temporal pooling.

use crate::error::{Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Per-channel mean and standard deviation over time of a `C x T` map,
/// concatenated as `[means..., stds...]`. The deviation is
/// `sqrt(population variance + eps)`.
pub fn mean_std_over_time<T: Real>(input: &[T], channels: usize, frames: usize, eps: T) -> Vec<T> {
    let mut out = vec![T::zero(); 2 * channels];
    let n = T::of(frames as f64);
    for c in 0..channels {
        let row = &input[c * frames..(c + 1) * frames];
        let mut sum = T::zero();
        for &v in row {
            sum += v;
        }
        let mean = sum / n;
        let mut sq = T::zero();
        for &v in row {
            sq += (v - mean) * (v - mean);
        }
        out[c] = mean;
        out[channels + c] = (sq / n + eps).sqrt();
    }
    out
}

impl<T: Real> Tape<T> {
    /// Max pooling on N x C x H x W with implicit -inf padding.
    pub fn max_pool2d(&mut self, input: Var, spec: PoolSpec) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 || spec.stride == 0 || spec.kernel == 0 || spec.padding >= spec.kernel {
            return Err(Error::Shape(format!("max_pool2d: input {s:?}, {spec:?}")));
        }
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        if h + 2 * spec.padding < spec.kernel || w + 2 * spec.padding < spec.kernel {
            return Err(Error::Shape(format!("max_pool2d: kernel larger than input {s:?}")));
        }
        let ho = (h + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        let wo = (w + 2 * spec.padding - spec.kernel) / spec.stride + 1;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(nc * ho * wo);
        let mut argmax = Vec::with_capacity(nc * ho * wo);
        // Window bounds clipped to the image, per output row/column.
        let span = |o: usize, len: usize| {
            let start = (o * spec.stride).saturating_sub(spec.padding);
            let end = (o * spec.stride + spec.kernel - spec.padding).min(len);
            (start, end)
        };
        let rows: Vec<(usize, usize)> = (0..ho).map(|o| span(o, h)).collect();
        let cols: Vec<(usize, usize)> = (0..wo).map(|o| span(o, w)).collect();
        for plane in 0..nc {
            let base = plane * h * w;
            for &(y0, y1) in &rows {
                for &(x0, x1) in &cols {
                    let mut best_i = base + y0 * w + x0;
                    let mut best = x[best_i];
                    for iy in y0..y1 {
                        let row = base + iy * w;
                        for i in row + x0..row + x1 {
                            if x[i] > best {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], ho, wo], out)?;
        self.push("max_pool2d", value, &[input], Op::MaxPool2d { input, argmax })
    }

    pub(super) fn max_pool2d_backward(&self, input: Var, argmax: &[usize], grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let mut dx = vec![T::zero(); self.value(input).numel()];
        for (&i, &g) in argmax.iter().zip(grad) {
            dx[i] += g;
        }
        vec![(input, dx)]
    }

    /// Mean over the frequency axis: N x C x F x T -> N x C x T.
    pub fn mean_freq(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 4 {
            return Err(Error::Shape(format!("mean_freq: input {s:?}")));
        }
        let (f, t) = (s[2], s[3]);
        let x = self.value(input).data();
        let scale = T::one() / T::of(f as f64);
        let mut out = vec![T::zero(); s[0] * s[1] * t];
        for (plane, o) in out.chunks_exact_mut(t).enumerate() {
            for row in x[plane * f * t..(plane + 1) * f * t].chunks_exact(t) {
                o.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
            }
            o.iter_mut().for_each(|v| *v = *v * scale);
        }
        let value = Tensor::new(vec![s[0], s[1], t], out)?;
        self.push("mean_freq", value, &[input], Op::MeanFreq { input })
    }

    pub(super) fn mean_freq_backward(&self, input: Var, grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let s = self.shape(input);
        let (f, t) = (s[2], s[3]);
        let scale = T::one() / T::of(f as f64);
        let mut dx = vec![T::zero(); self.value(input).numel()];
        for (plane, g) in grad.chunks_exact(t).enumerate() {
            for row in dx[plane * f * t..(plane + 1) * f * t].chunks_exact_mut(t) {
                row.iter_mut().zip(g).for_each(|(d, &gv)| *d = gv * scale);
            }
        }
        vec![(input, dx)]
    }

    /// Statistics pooling: N x C x T -> N x 2C (per-sample
    /// [`mean_std_over_time`]).
    pub fn stats_pool(&mut self, input: Var, eps: f64) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 || s[2] == 0 {
            return Err(Error::Shape(format!("stats_pool: input {s:?}")));
        }
        let (n, c, t) = (s[0], s[1], s[2]);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * 2 * c);
        for b in 0..n {
            out.extend(mean_std_over_time(&x[b * c * t..(b + 1) * c * t], c, t, T::of(eps)));
        }
        let mean = (0..n).flat_map(|b| out[b * 2 * c..b * 2 * c + c].to_vec()).collect();
        let std = (0..n).flat_map(|b| out[b * 2 * c + c..(b + 1) * 2 * c].to_vec()).collect();
        let value = Tensor::new(vec![n, 2 * c], out)?;
        self.push("stats_pool", value, &[input], Op::StatsPool { input, mean, std })
    }

    pub(super) fn stats_pool_backward(&self, input: Var, mean: &[T], std: &[T], grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let s = self.shape(input);
        let (n, c, t) = (s[0], s[1], s[2]);
        let x = self.value(input).data();
        let frames = T::of(t as f64);
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let gm = grad[b * 2 * c + ch] / frames;
                let gs = grad[b * 2 * c + c + ch] / (frames * std[b * c + ch]);
                let mu = mean[b * c + ch];
                let base = (b * c + ch) * t;
                for i in base..base + t {
                    dx[i] = gm + gs * (x[i] - mu);
                }
            }
        }
        vec![(input, dx)]
    }

    /// Mean over time: N x C x T -> N x C.
    pub fn mean_time(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 || s[2] == 0 {
            return Err(Error::Shape(format!("mean_time: input {s:?}")));
        }
        let t = s[2];
        let frames = T::of(t as f64);
        let out = self
            .value(input)
            .data()
            .chunks_exact(t)
            .map(|row| row.iter().copied().sum::<T>() / frames)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], out)?;
        self.push("mean_time", value, &[input], Op::MeanTime { input })
    }

    pub(super) fn mean_time_backward(&self, input: Var, grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let t = self.shape(input)[2];
        let frames = T::of(t as f64);
        let dx = grad.iter().flat_map(|&g| std::iter::repeat_n(g / frames, t)).collect();
        vec![(input, dx)]
    }
}
