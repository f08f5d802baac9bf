use super::tensor::Matrix;

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / N`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    assert_eq!(logits.rows, labels.len(), "one label per logit row");
    let n = logits.rows.max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        assert!(y < logits.cols, "label {y} out of range");
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            *g = (p - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..logits.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}
