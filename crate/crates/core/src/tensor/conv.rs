//! 2-D cross-correlation via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{gemm, Mat, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(super) struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `ox` whose input column `ox * sw + j - pw` is inside
    /// the image, as a half-open range.
    fn valid_cols(&self, j: usize) -> (usize, usize) {
        let lo = self.pw.saturating_sub(j).div_ceil(self.sw).min(self.wo);
        let hi = if self.w + self.pw > j {
            ((self.w + self.pw - j - 1) / self.sw + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T]) {
        let p = self.p();
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    let (lo, hi) = self.valid_cols(j);
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + i) as isize - self.ph as isize;
                        let out = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &x[(c * self.h + iy as usize) * self.w..][..self.w];
                        out[..lo].fill(T::zero());
                        out[hi..].fill(T::zero());
                        let first = lo * self.sw + j - self.pw;
                        if self.sw == 1 {
                            out[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (o, &v) in out[lo..hi].iter_mut().zip(src[first..].iter().step_by(self.sw)) {
                                *o = v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], dx: &mut [T]) {
        let p = self.p();
        for c in 0..self.c_in {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &cols[((c * self.kh + i) * self.kw + j) * p..][..p];
                    let (lo, hi) = self.valid_cols(j);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * self.sw + j - self.pw;
                    for oy in 0..self.ho {
                        let iy = (oy * self.sh + i) as isize - self.ph as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dx[(c * self.h + iy as usize) * self.w..][..self.w];
                        let src = &row[oy * self.wo + lo..oy * self.wo + hi];
                        if self.sw == 1 {
                            dst[first..first + hi - lo].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                        } else {
                            for (d, &v) in dst[first..].iter_mut().step_by(self.sw).zip(src) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// `input`: N x C x H x W, `weight`: C_out x C x kH x kW, no bias.
    /// Output spatial size is `floor((H + 2p - k) / s) + 1` per axis.
    pub fn conv2d(&mut self, input: Var, weight: Var, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(Error::Shape(format!("conv2d: input {xs:?}, weight {ws:?}")));
        }
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        if sh == 0 || sw == 0 || xs[2] + 2 * ph < ws[2] || xs[3] + 2 * pw < ws[3] {
            return Err(Error::Shape(format!(
                "conv2d: kernel {:?} does not fit input {xs:?} with padding {:?}",
                &ws[2..],
                spec.padding
            )));
        }
        let geom = ConvGeom {
            n: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            sh,
            sw,
            ph,
            pw,
            ho: (xs[2] + 2 * ph - ws[2]) / sh + 1,
            wo: (xs[3] + 2 * pw - ws[3]) / sw + 1,
        };
        let (k, p) = (geom.k(), geom.p());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let in_stride = geom.c_in * geom.h * geom.w;
        let mut out = vec![T::zero(); geom.n * geom.c_out * p];
        out.par_chunks_mut(geom.c_out * p)
            .enumerate()
            .for_each_init(
                || vec![T::zero(); k * p],
                |cols, (n, y)| {
                    geom.im2col(&x[n * in_stride..(n + 1) * in_stride], cols);
                    gemm(Mat::new(wt, geom.c_out, k), Mat::new(cols, k, p), T::zero(), y);
                },
            );
        let value = Tensor::new(vec![geom.n, geom.c_out, geom.ho, geom.wo], out)?;
        self.push("conv2d", value, &[input, weight], Op::Conv2d {
            input,
            weight,
            geom,
        })
    }

    pub(super) fn conv2d_backward(
        &self,
        input: Var,
        weight: Var,
        geom: &ConvGeom,
        grad: &[T],
    ) -> Vec<(Var, Vec<T>)> {
        let (k, p) = (geom.k(), geom.p());
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let in_stride = geom.c_in * geom.h * geom.w;
        let out_stride = geom.c_out * p;
        let need_w = self.requires_grad(weight);
        let need_x = self.requires_grad(input);
        let mut result = Vec::new();

        if need_w {
            // Per-sample partials, summed in sample order for a fixed reduction.
            let partials: Vec<Vec<T>> = (0..geom.n)
                .into_par_iter()
                .map_init(
                    || vec![T::zero(); k * p],
                    |cols, n| {
                        geom.im2col(&x[n * in_stride..(n + 1) * in_stride], cols);
                        let mut dw = vec![T::zero(); geom.c_out * k];
                        gemm(
                            Mat::new(&grad[n * out_stride..(n + 1) * out_stride], geom.c_out, p),
                            Mat::t(cols, k, p),
                            T::zero(),
                            &mut dw,
                        );
                        dw
                    },
                )
                .collect();
            let mut dw = vec![T::zero(); geom.c_out * k];
            for part in partials {
                dw.iter_mut().zip(part).for_each(|(a, b)| *a += b);
            }
            result.push((weight, dw));
        }
        if need_x {
            let mut dx = vec![T::zero(); geom.n * in_stride];
            dx.par_chunks_mut(in_stride).enumerate().for_each_init(
                || vec![T::zero(); k * p],
                |dcols, (n, dxn)| {
                    gemm(
                        Mat::t(wt, geom.c_out, k),
                        Mat::new(&grad[n * out_stride..(n + 1) * out_stride], geom.c_out, p),
                        T::zero(),
                        dcols,
                    );
                    geom.col2im(dcols, dxn);
                },
            );
            result.push((input, dx));
        }
        result
    }
}
