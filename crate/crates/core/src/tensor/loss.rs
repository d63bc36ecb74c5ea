use crate::error::{Error, Result};
use crate::tensor::tape::Op;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Max-shifted softmax of one row.
pub(crate) fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<T: Real> Tape<T> {
    /// Mean categorical cross-entropy of N x K logits against `labels`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: logits {s:?} for {} labels",
                labels.len()
            )));
        }
        let k = s[1];
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = Vec::with_capacity(z.len());
        let mut loss = T::zero();
        for (row, &label) in z.chunks_exact(k).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let log_total = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            loss += log_total - (row[label] - max);
            probs.extend(softmax(row));
        }
        let value = Tensor::new(vec![1], vec![loss / T::of(labels.len() as f64)])?;
        self.push("softmax_cross_entropy", value, &[logits], Op::SoftmaxCrossEntropy {
            logits,
            probs,
            labels: labels.to_vec(),
        })
    }

    pub(super) fn softmax_cross_entropy_backward(
        &self,
        logits: Var,
        probs: &[T],
        labels: &[usize],
        grad: &[T],
    ) -> Vec<(Var, Vec<T>)> {
        let k = probs.len() / labels.len();
        let scale = grad[0] / T::of(labels.len() as f64);
        let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
        for (n, &label) in labels.iter().enumerate() {
            dz[n * k + label] = dz[n * k + label] - scale;
        }
        vec![(logits, dz)]
    }
}
