use crate::error::{Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{Real, Tape, Tensor, Var};

impl<T: Real> Tape<T> {
    /// Parametric ReLU with one learned slope per channel (axis 1):
    /// `x` for positive inputs, `slope * x` otherwise.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 || self.value(slope).numel() != shape[1] {
            return Err(Error::Shape(format!(
                "prelu: input {shape:?} with {} slopes",
                self.value(slope).numel()
            )));
        }
        let (c, inner) = (shape[1], shape[2..].iter().product::<usize>());
        let a = self.value(slope).data();
        let mut out = Vec::with_capacity(self.value(input).numel());
        for (plane, xp) in self.value(input).data().chunks_exact(inner.max(1)).enumerate() {
            let ac = a[plane % c];
            out.extend(xp.iter().map(|&x| if x > T::zero() { x } else { ac * x }));
        }
        let value = Tensor::new(shape, out)?;
        self.push("prelu", value, &[input, slope], Op::Prelu { input, slope })
    }

    pub(super) fn prelu_backward(&self, input: Var, slope: Var, grad: &[T]) -> Vec<(Var, Vec<T>)> {
        let shape = self.shape(input);
        let (c, inner) = (shape[1], shape[2..].iter().product::<usize>());
        let x = self.value(input).data();
        let a = self.value(slope).data();
        let mut da = vec![T::zero(); c];
        let mut dx = vec![T::zero(); x.len()];
        let inner = inner.max(1);
        for (plane, ((xp, gp), dp)) in x
            .chunks_exact(inner)
            .zip(grad.chunks_exact(inner))
            .zip(dx.chunks_exact_mut(inner))
            .enumerate()
        {
            let ch = plane % c;
            let (ac, mut acc) = (a[ch], T::zero());
            for ((&xi, &g), d) in xp.iter().zip(gp).zip(dp.iter_mut()) {
                if xi > T::zero() {
                    *d = g;
                } else {
                    *d = ac * g;
                    acc += xi * g;
                }
            }
            da[ch] += acc;
        }
        vec![(input, dx), (slope, da)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(slope: f64) -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![-2.0, 3.0, 0.5, -0.25]).unwrap(), false);
        let a = tape.leaf(Tensor::full(vec![2], slope), false);
        let y = tape.prelu(x, a).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn zero_slope_is_relu_and_unit_slope_is_identity() {
        assert_eq!(run(0.0), vec![0.0, 3.0, 0.5, 0.0]);
        assert_eq!(run(1.0), vec![-2.0, 3.0, 0.5, -0.25]);
    }

    #[test]
    fn slope_gradient_sums_negative_inputs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2, 1, 2], vec![-2.0, 3.0, -0.5, 1.0]).unwrap(), false);
        let a = tape.leaf(Tensor::full(vec![1], 0.25), true);
        tape.prelu(x, a).unwrap();
        let da = tape.prelu_backward(x, a, &[1.0; 4]);
        assert_eq!(da[1].1, vec![-2.5]);
    }
}
