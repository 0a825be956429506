//! Top-1 accuracy with a fixed tie rule.

use crate::error::{value_err, Result};

/// Index of the largest logit; ties resolve to the lowest index.
pub fn argmax_lowest(logits: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in logits.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// `100 · #correct / n` over aligned predictions and labels.
pub fn top1_percent(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(value_err!("{} predictions for {} labels", predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(value_err!("cannot score an empty evaluation set"));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax_lowest(&[0.0; 7]), Some(0));
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax_lowest(&[]), None);
    }

    #[test]
    fn constant_logits_on_balanced_set() {
        let labels: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let preds: Vec<usize> = labels.iter().map(|_| argmax_lowest(&[0.5; 7]).unwrap()).collect();
        let acc = top1_percent(&preds, &labels).unwrap();
        assert_eq!(acc, 100.0 * 10.0 / 70.0);
        assert!((acc - 14.29).abs() < 0.01);
    }

    #[test]
    fn empty_set_rejected() {
        assert!(top1_percent(&[], &[]).is_err());
    }
}
