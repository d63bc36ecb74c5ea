use crate::error::{Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{gemm, Mat, Real, Tape, Tensor, Var};

impl<T: Real> Tape<T> {
    /// Affine map `x W^T + b` for `x`: N x in, `W`: out x in, `b`: out.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || self.value(bias).numel() != ws[0] {
            return Err(Error::Shape(format!(
                "linear: input {xs:?}, weight {ws:?}, bias {}",
                self.value(bias).numel()
            )));
        }
        let (n, d_out) = (xs[0], ws[0]);
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| b.iter().copied()).collect();
        gemm(
            Mat::new(self.value(input).data(), n, xs[1]),
            Mat::t(self.value(weight).data(), d_out, ws[1]),
            T::one(),
            &mut out,
        );
        let value = Tensor::new(vec![n, d_out], out)?;
        self.push("linear", value, &[input, weight, bias], Op::Linear {
            input,
            weight,
            bias,
        })
    }

    pub(super) fn linear_backward(&self, input: Var, weight: Var, bias: Var, grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let xs = self.shape(input);
        let (n, d_in) = (xs[0], xs[1]);
        let d_out = self.shape(weight)[0];
        let mut result = Vec::with_capacity(3);
        if self.requires_grad(input) {
            let mut dx = vec![T::zero(); n * d_in];
            gemm(
                Mat::new(grad, n, d_out),
                Mat::new(self.value(weight).data(), d_out, d_in),
                T::zero(),
                &mut dx,
            );
            result.push((input, dx));
        }
        let mut dw = vec![T::zero(); d_out * d_in];
        gemm(
            Mat::t(grad, n, d_out),
            Mat::new(self.value(input).data(), n, d_in),
            T::zero(),
            &mut dw,
        );
        result.push((weight, dw));
        let mut db = vec![T::zero(); d_out];
        for row in grad.chunks_exact(d_out) {
            db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
        result.push((bias, db));
        result
    }
}
