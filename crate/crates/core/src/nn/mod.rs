//! A small CPU engine for convolutional networks: NCHW tensors, a
//! topologically ordered layer graph with reverse-mode gradients, the Adam
//! optimizer and a checksummed weight-file format.

mod graph;
pub mod init;
pub mod io;
mod layers;
mod optim;
mod tensor;

pub use graph::{GraphBuilder, Network, Node, NodeId, Tape};
pub use layers::{Op, Padding, Param, ParamKind};
pub use optim::Adam;
pub use tensor::{Shape, Tensor};

/// Row-wise softmax of `(n, k, 1, 1)` logits, computed in `f64`.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.shape.sample_len();
    logits
        .data
        .chunks(k)
        .map(|row| {
            let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
            let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f64, Tensor) {
    let n = logits.shape.n;
    assert_eq!(n, labels.len(), "one label per logit row");
    let k = logits.shape.sample_len();
    let probs = softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.shape);
    for (i, (row, &y)) in probs.iter().zip(labels).enumerate() {
        let max = logits.sample(i).iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let lse = max + logits.sample(i).iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - logits.sample(i)[y] as f64;
        for (j, p) in row.iter().enumerate() {
            let t = if j == y { 1.0 } else { 0.0 };
            grad.data[i * k + j] = ((p - t) / n as f64) as f32;
        }
    }
    (loss / n as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one_even_for_large_logits() {
        let t = Tensor::from_vec(Shape::new(2, 3, 1, 1), vec![1000.0, 999.0, -1000.0, 0.0, 0.0, 0.0]);
        for row in softmax_rows(&t) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_of_equal_logits_is_ln_k() {
        let t = Tensor::zeros(Shape::new(4, 5, 1, 1));
        let (loss, grad) = softmax_cross_entropy(&t, &[0, 1, 2, 3]);
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        // gradient rows sum to zero
        for row in grad.data.chunks(5) {
            assert!(row.iter().sum::<f32>().abs() < 1e-7);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let data = vec![0.3f32, -1.2, 2.0, 0.1, 0.5, 1.5, -0.3, 0.0, 0.7, -2.0];
        let t = Tensor::from_vec(Shape::new(2, 5, 1, 1), data);
        let labels = [2, 0];
        let (_, grad) = softmax_cross_entropy(&t, &labels);
        for i in 0..t.data.len() {
            let mut p = t.clone();
            p.data[i] += 1e-3;
            let mut m = t.clone();
            m.data[i] -= 1e-3;
            let num = (softmax_cross_entropy(&p, &labels).0 - softmax_cross_entropy(&m, &labels).0) / 2e-3;
            assert!((num - grad.data[i] as f64).abs() < 1e-4);
        }
    }
}
