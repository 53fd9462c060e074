//! Pairwise logistic ranking loss.
//!
//! For labels `r` and scores `s`, every ordered pair with `r[i] > r[j]`
//! contributes `softplus(s[j] - s[i]) = ln(1 + e^(s[j] - s[i]))`.

use crate::error::{Error, Result};

/// `ln(1 + e^x)` without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(labels: &[f64], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: scores.len(),
        });
    }
    if labels.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise loss needs at least two candidates".into(),
        ));
    }
    Ok(())
}

pub fn pairwise_loss(labels: &[f64], scores: &[f64]) -> Result<f64> {
    check(labels, scores)?;
    let mut loss = 0.0;
    for (i, (&ri, &si)) in labels.iter().zip(scores).enumerate() {
        for (j, (&rj, &sj)) in labels.iter().zip(scores).enumerate() {
            if i != j && ri > rj {
                loss += softplus(sj - si);
            }
        }
    }
    Ok(loss)
}

/// Gradient of [`pairwise_loss`] with respect to the scores.
pub fn pairwise_grad(labels: &[f64], scores: &[f64]) -> Result<Vec<f64>> {
    Ok(pairwise_loss_and_grad(labels, scores)?.1)
}

pub fn pairwise_loss_and_grad(labels: &[f64], scores: &[f64]) -> Result<(f64, Vec<f64>)> {
    check(labels, scores)?;
    let n = labels.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            if labels[i] > labels[j] {
                let diff = scores[j] - scores[i];
                loss += softplus(diff);
                let g = sigmoid(diff);
                grad[i] -= g;
                grad[j] += g;
            }
        }
    }
    Ok((loss, grad))
}
