use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// `d loss / d logits`, row-major `(B, classes)`.
    pub grad: Vec<f64>,
    /// Samples whose arg-max logit equals the label.
    pub correct: usize,
}

fn check(logits: &[f64], labels: &[usize], classes: usize) -> Result<()> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(Error::Shape(format!(
            "{} logits for {} labels and {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn loss_ce(logits: &[f64], labels: &[usize], classes: usize) -> Result<f64> {
    Ok(loss_ce_grad(logits, labels, classes)?.loss)
}

pub fn loss_ce_grad(logits: &[f64], labels: &[usize], classes: usize) -> Result<LossOutput> {
    check(logits, labels, classes)?;
    let batch = labels.len();
    if batch == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad: Vec::new(),
            correct: 0,
        });
    }
    let scale = 1.0 / batch as f64;
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    let mut correct = 0;
    for ((row, g), &label) in logits.chunks_exact(classes).zip(grad.chunks_exact_mut(classes)).zip(labels) {
        let (argmax, max) = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        correct += usize::from(argmax == label);
        let mut sum = 0.0;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp();
            sum += *gi;
        }
        total += sum.ln() + max - row[label];
        for gi in g.iter_mut() {
            *gi *= scale / sum;
        }
        g[label] -= scale;
    }
    Ok(LossOutput {
        loss: total * scale,
        grad,
        correct,
    })
}
