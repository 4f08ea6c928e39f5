//! Multi-channel learnable proximity between node states.
//!
//! `phi(a, b) = sum_t lambda_t * s_t(a) . s_t(b)` with
//! `s_t(x) = LeakyReLU(x W_t + b_t)`.

use dip_tensor::{Real, Tape, Tensor, Var, LEAKY_SLOPE};

use crate::error::{CoreError, Result};
use crate::model::{Normalize, ProximityChannels, StateProjector};

/// Row-wise projection of raw features into the state space.
pub fn embed_nodes<T: Real>(tape: &mut Tape<T>, x: Var, proj: &StateProjector<Var>) -> Result<Var> {
    let h = tape.affine(x, proj.hidden.w, proj.hidden.b)?;
    let h = tape.leaky_relu(h, T::from_f64(LEAKY_SLOPE))?;
    Ok(tape.affine(h, proj.output.w, proj.output.b)?)
}

/// All channel transforms of every row, `rows x (tau * d_c)`.
pub fn channel_features<T: Real>(tape: &mut Tape<T>, x: Var, ch: &ProximityChannels<Var>) -> Result<Var> {
    let h = tape.affine(x, ch.transform.w, ch.transform.b)?;
    Ok(tape.leaky_relu(h, T::from_f64(LEAKY_SLOPE))?)
}

/// Pairwise proximities between the rows of `a` and the rows of `b`,
/// optionally softmax-normalized along each row. Passing the same variable
/// twice reuses one projection.
pub fn proximity_matrix<T: Real>(
    tape: &mut Tape<T>,
    a: Var,
    b: Var,
    ch: &ProximityChannels<Var>,
    normalize: Normalize,
) -> Result<Var> {
    let fa = channel_features(tape, a, ch)?;
    let fb = if a == b { fa } else { channel_features(tape, b, ch)? };
    let weighted = tape.scale_column_groups(fa, ch.lambda)?;
    let raw = tape.matmul_nt(weighted, fb)?;
    Ok(match normalize {
        Normalize::None => raw,
        Normalize::RowSoftmax => tape.softmax_rows(raw)?,
    })
}

/// Proximity of two single state vectors, evaluated channel by channel
/// on plain values.
pub fn proximity(a: &[f64], b: &[f64], ch: &ProximityChannels<&Tensor>) -> Result<f64> {
    let (d_s, width) = ch.transform.w.shape();
    let tau = ch.lambda.cols();
    if a.len() != d_s || b.len() != d_s {
        return Err(CoreError::DimensionMismatch(format!(
            "proximity inputs have widths {} and {}, expected {d_s}",
            a.len(),
            b.len()
        )));
    }
    if tau == 0 || width % tau != 0 || ch.transform.b.cols() != width {
        return Err(CoreError::DimensionMismatch("malformed proximity channels".into()));
    }
    let d_c = width / tau;
    let sigma = |x: &[f64], col: usize| {
        let pre: f64 = ch.transform.b.get(0, col) + (0..d_s).map(|k| x[k] * ch.transform.w.get(k, col)).sum::<f64>();
        if pre >= 0.0 {
            pre
        } else {
            LEAKY_SLOPE * pre
        }
    };
    let mut total = 0.0;
    for t in 0..tau {
        let dot: f64 = (t * d_c..(t + 1) * d_c).map(|col| sigma(a, col) * sigma(b, col)).sum();
        total += ch.lambda.get(0, t) * dot;
    }
    Ok(total)
}
