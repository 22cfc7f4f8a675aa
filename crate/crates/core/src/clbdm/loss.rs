use gradcore::{Graph, Tensor, Var};

use crate::error::{invalid, Result};

/// Predictions are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

fn check_targets(targets: &[f64], n: usize) -> Result<()> {
    if targets.len() != n {
        return Err(invalid(format!("{n} predictions but {} targets", targets.len())));
    }
    if n == 0 {
        return Err(invalid("cross-entropy over zero patches"));
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(invalid(format!("target {t} is not 0 or 1")));
    }
    Ok(())
}

/// Binary cross-entropy `−mean(t·log V + (1 − t)·log(1 − V))`.
pub fn ce_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_targets(targets, predictions.len())?;
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&v, &t)| {
            let v = v.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            t * v.ln() + (1.0 - t) * (1.0 - v).ln()
        })
        .sum();
    Ok(-total / predictions.len() as f64)
}

/// Graph form of [`ce_loss`] for a length-N probability vector.
pub fn ce_loss_graph(g: &mut Graph, predictions: Var, targets: &[f64]) -> Result<Var> {
    let n = g.value(predictions).numel();
    if g.shape(predictions) != [n] {
        return Err(invalid(format!("predictions must be a vector, got {:?}", g.shape(predictions))));
    }
    check_targets(targets, n)?;
    let t = Tensor::new(vec![n], targets.to_vec())?;
    let not_t = Tensor::new(vec![n], targets.iter().map(|t| 1.0 - t).collect())?;
    let v = g.clamp(predictions, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_v = g.log(v);
    let pos = g.mask_mul(log_v, &t)?;
    let one_minus = g.affine(v, -1.0, 1.0);
    let log_1mv = g.log(one_minus);
    let neg = g.mask_mul(log_1mv, &not_t)?;
    let both = g.add(pos, neg)?;
    let total = g.sum(both);
    Ok(g.scale(total, -1.0 / n as f64))
}
