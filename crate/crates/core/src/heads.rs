//! Modality fusion, task heads and losses.

use std::sync::Arc;

use dip_tensor::{Real, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::error::{CoreError, Result};
use crate::model::{Affine, Classifier};

/// `g([Z_v || Z_t])`, no activation.
pub fn fuse<T: Real>(tape: &mut Tape<T>, z_v: Var, z_t: Var, fusion: &Affine<Var>) -> Result<Var> {
    if tape.shape(z_v).0 != tape.shape(z_t).0 {
        return Err(CoreError::DimensionMismatch(format!(
            "fusing {} visual rows with {} textual rows",
            tape.shape(z_v).0,
            tape.shape(z_t).0
        )));
    }
    let both = tape.concat_cols(&[z_v, z_t])?;
    Ok(tape.affine(both, fusion.w, fusion.b)?)
}

/// Class logits from the two-layer classifier.
pub fn nc_logits<T: Real>(tape: &mut Tape<T>, z: Var, cls: &Classifier<Var>) -> Result<Var> {
    let h = tape.affine(z, cls.hidden.w, cls.hidden.b)?;
    let h = tape.leaky_relu(h, T::from_f64(LEAKY_SLOPE))?;
    Ok(tape.affine(h, cls.output.w, cls.output.b)?)
}

/// Class probabilities, one row per node.
pub fn nc_predict<T: Real>(tape: &mut Tape<T>, z: Var, cls: &Classifier<Var>) -> Result<Var> {
    let logits = nc_logits(tape, z, cls)?;
    Ok(tape.softmax_rows(logits)?)
}

/// Mean cross-entropy over the nodes in `mask`.
pub fn nc_loss<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
    if mask.is_empty() {
        return Err(CoreError::InvalidConfig(
            "classification loss over an empty mask".into(),
        ));
    }
    Ok(tape.cross_entropy(logits, labels.into(), mask.into())?)
}

/// Inner products `z_u . z_w` for each pair, as an `n_pairs x 1` column.
pub fn lp_logits<T: Real>(tape: &mut Tape<T>, z: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let u: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let w: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let zu = tape.gather_rows(z, u)?;
    let zw = tape.gather_rows(z, w)?;
    let prod = tape.mul(zu, zw)?;
    Ok(tape.row_sum(prod)?)
}

/// Mean binary cross-entropy with label 1 for `pos` pairs and 0 for `neg`.
pub fn lp_loss<T: Real>(tape: &mut Tape<T>, z: Var, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Result<Var> {
    if pos.is_empty() {
        return Err(CoreError::InvalidConfig("link loss over an empty batch".into()));
    }
    let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
    let targets: Arc<[T]> = pos.iter().map(|_| T::ONE).chain(neg.iter().map(|_| T::ZERO)).collect();
    let logits = lp_logits(tape, z, &pairs)?;
    Ok(tape.bce_with_logits(logits, targets)?)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Link probability `sigmoid(z_u . z_w)`.
pub fn lp_score(z_u: &[f64], z_w: &[f64]) -> f64 {
    debug_assert_eq!(z_u.len(), z_w.len());
    sigmoid(z_u.iter().zip(z_w).map(|(a, b)| a * b).sum())
}

/// Mean binary cross-entropy of probabilities for positives and negatives.
pub fn bce_from_probs(pos: &[f64], neg: &[f64]) -> Result<f64> {
    let count = pos.len() + neg.len();
    if count == 0 {
        return Err(CoreError::InvalidConfig("empty batch".into()));
    }
    let total: f64 = pos.iter().map(|p| -p.ln()).sum::<f64>() + neg.iter().map(|p| -(1.0 - p).ln()).sum::<f64>();
    Ok(total / count as f64)
}

/// Row-wise softmax of a plain logit matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.iter_mut().for_each(|x| *x = (*x - max).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    out
}

/// Index of the largest entry of each row; the first one wins ties.
pub fn argmax_rows<T: Real>(t: &Tensor<T>) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            (0..row.len()).fold(0, |best, j| if row[j].to_f64() > row[best].to_f64() { j } else { best })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(lp_score(&[0.0, 0.0], &[5.0, -3.0]), 0.5);
        let a = (3f64.ln() / 2.0).sqrt();
        assert!((lp_score(&[a, a], &[a, a]) - 0.75).abs() < 1e-15);
        assert_eq!(lp_score(&[0.3, -1.0], &[2.0, 0.1]), lp_score(&[2.0, 0.1], &[0.3, -1.0]));
    }

    #[test]
    fn bce_limit() {
        let eps = 1e-6;
        assert!(bce_from_probs(&[1.0 - eps], &[eps]).unwrap() < 1e-5);
        assert!(bce_from_probs(&[], &[]).is_err());
    }

    #[test]
    fn argmax_first_wins() {
        let t = Tensor::from_rows(&[vec![1.0, 3.0, 3.0], vec![-1.0, -2.0, -3.0]]).unwrap();
        assert_eq!(argmax_rows(&t), vec![1, 0]);
    }
}
