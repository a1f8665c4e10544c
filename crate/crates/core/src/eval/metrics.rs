use serde::Serialize;

use crate::error::{Error, Result};

fn check_lengths(what: &'static str, preds: usize, golds: usize) -> Result<()> {
    if preds != golds {
        return Err(Error::DimensionMismatch {
            what,
            expected: golds,
            actual: preds,
        });
    }
    Ok(())
}

/// Fraction of positions where `preds` equals `golds`.
pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_lengths("predictions", preds.len(), golds.len())?;
    if golds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let correct = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / golds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassF1 {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenF1 {
    /// `None` for classes that are neither gold nor predicted anywhere.
    pub per_class: Vec<Option<ClassF1>>,
    /// Unweighted mean over non-vacuous classes other than `outside`.
    pub macro_f1: f64,
}

/// Token-level precision/recall/F1 per class. Sequences must be aligned.
/// `outside` (normally the "O" tag) is reported but left out of the macro average.
pub fn token_f1(
    preds: &[Vec<usize>],
    golds: &[Vec<usize>],
    n_classes: usize,
    outside: Option<usize>,
) -> Result<TokenF1> {
    check_lengths("tag sequences", preds.len(), golds.len())?;
    let mut tp = vec![0usize; n_classes];
    let mut n_pred = vec![0usize; n_classes];
    let mut n_gold = vec![0usize; n_classes];
    for (p, g) in preds.iter().zip(golds) {
        check_lengths("tags", p.len(), g.len())?;
        for (&pi, &gi) in p.iter().zip(g) {
            for c in [pi, gi] {
                if c >= n_classes {
                    return Err(Error::LabelOutOfRange {
                        label: c,
                        n_labels: n_classes,
                    });
                }
            }
            n_pred[pi] += 1;
            n_gold[gi] += 1;
            if pi == gi {
                tp[pi] += 1;
            }
        }
    }
    let per_class: Vec<Option<ClassF1>> = (0..n_classes)
        .map(|c| {
            if n_pred[c] == 0 && n_gold[c] == 0 {
                return None;
            }
            let precision = if n_pred[c] > 0 { tp[c] as f64 / n_pred[c] as f64 } else { 0.0 };
            let recall = if n_gold[c] > 0 { tp[c] as f64 / n_gold[c] as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            Some(ClassF1 {
                class: c,
                precision,
                recall,
                f1,
                support: n_gold[c],
                predicted: n_pred[c],
            })
        })
        .collect();
    let scored: Vec<f64> = per_class
        .iter()
        .flatten()
        .filter(|c| Some(c.class) != outside)
        .map(|c| c.f1)
        .collect();
    let macro_f1 = if scored.is_empty() {
        0.0
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(TokenF1 { per_class, macro_f1 })
}

/// `exp` of the mean negative log-likelihood.
pub fn perplexity(nll: &[f64]) -> Result<f64> {
    if nll.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((nll.iter().sum::<f64>() / nll.len() as f64).exp())
}
