use super::{NnError, Result, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

#[derive(Debug, Clone)]
pub struct XentOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// `(softmax - onehot) / N`, shaped like the logits.
    pub grad: Tensor,
    /// Row-wise log-probabilities.
    pub log_probs: Vec<Vec<f64>>,
}

/// Mean softmax cross-entropy of `[N, C]` logits against integer labels.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<XentOutput> {
    if logits.shape.len() != 2 || logits.shape[0] != labels.len() {
        return Err(NnError::Shape {
            op: "softmax_xent",
            expected: vec![labels.len(), logits.shape.last().copied().unwrap_or(0)],
            found: logits.shape.clone(),
        });
    }
    let (n, c) = (logits.shape[0], logits.shape[1]);
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::Label { label, classes: c });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    let mut log_probs = Vec::with_capacity(n);
    for (row, &y) in logits.data.chunks_exact(c).zip(labels) {
        let lp = log_softmax(row);
        loss -= lp[y];
        for (k, l) in lp.iter().enumerate() {
            let onehot = if k == y { 1.0 } else { 0.0 };
            grad.push((l.exp() - onehot) / n as f64);
        }
        log_probs.push(lp);
    }
    Ok(XentOutput {
        loss: loss / n.max(1) as f64,
        grad: Tensor::new(vec![n, c], grad)?,
        log_probs,
    })
}
