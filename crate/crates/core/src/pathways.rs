//! Local and pseudo-node-mediated message passing, and the recurrent loop.

use std::sync::Arc;

use dip_tensor::{Real, Segments, Tape, Tensor, TensorError, Var, LEAKY_SLOPE};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::model::{Affine, Branch, GraphInputs, Modality, ModelParams, Normalize};
use crate::proximity::{embed_nodes, proximity_matrix};

/// Switches for the architectural variants compared in the ablation sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub use_visual_pseudo: bool,
    pub use_textual_pseudo: bool,
    pub use_local: bool,
    pub use_global: bool,
    pub use_cross_modal: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: Self = Self {
        use_visual_pseudo: true,
        use_textual_pseudo: true,
        use_local: true,
        use_global: true,
        use_cross_modal: true,
    };

    pub const LOCAL_ONLY: Self = Self {
        use_global: false,
        ..Self::FULL
    };

    /// The full model followed by the five single-component removals.
    pub fn sweep() -> [(&'static str, Self); 6] {
        [
            ("full", Self::FULL),
            (
                "no-visual-pseudo",
                Self {
                    use_visual_pseudo: false,
                    ..Self::FULL
                },
            ),
            (
                "no-textual-pseudo",
                Self {
                    use_textual_pseudo: false,
                    ..Self::FULL
                },
            ),
            (
                "no-local",
                Self {
                    use_local: false,
                    ..Self::FULL
                },
            ),
            (
                "no-global",
                Self {
                    use_global: false,
                    ..Self::FULL
                },
            ),
            (
                "no-cross-modal",
                Self {
                    use_cross_modal: false,
                    ..Self::FULL
                },
            ),
        ]
    }

    /// Whether modality `m` runs its pseudo-node pathways.
    pub fn global_for(&self, m: Modality) -> bool {
        self.use_global
            && match m {
                Modality::Visual => self.use_visual_pseudo,
                Modality::Textual => self.use_textual_pseudo,
            }
    }

    /// Cross-modal exchange needs both pseudo banks active.
    pub fn cross_active(&self) -> bool {
        self.use_cross_modal && self.global_for(Modality::Visual) && self.global_for(Modality::Textual)
    }
}

/// Node states `z`, node messages `m` and pseudo states `h` of one modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModalityState {
    pub z: Var,
    pub m: Var,
    pub h: Var,
}

/// `LeakyReLU(x W + b)`.
pub fn update_site<T: Real>(tape: &mut Tape<T>, x: Var, site: &Affine<Var>) -> Result<Var> {
    let a = tape.affine(x, site.w, site.b)?;
    Ok(tape.leaky_relu(a, T::from_f64(LEAKY_SLOPE))?)
}

/// Neighborhood aggregation: `psi([M_v || Z_v] || mean_j [M_j || Z_j])`,
/// with a zero mean for isolated nodes.
pub fn local_mp<T: Real>(
    tape: &mut Tape<T>,
    m: Var,
    z: Var,
    segments: &Arc<Segments>,
    psi: &Affine<Var>,
) -> Result<Var> {
    let own = tape.concat_cols(&[m, z])?;
    let nb = tape.segment_mean(own, segments.clone())?;
    let both = tape.concat_cols(&[own, nb])?;
    update_site(tape, both, psi)
}

/// Diffusion to pseudo nodes, refinement among them and aggregation back.
/// Returns `(message to graph nodes, pseudo-state increment)`.
pub fn glob_mp<T: Real>(
    tape: &mut Tape<T>,
    h: Var,
    m_g: Var,
    z: Var,
    branch: &Branch<Var>,
    normalize: Normalize,
) -> Result<(Var, Var)> {
    let w_gp = proximity_matrix(tape, h, z, &branch.gp, normalize)?;
    let d = tape.matmul_invariant(w_gp, m_g)?;
    let w_pp = proximity_matrix(tape, h, h, &branch.pp, normalize)?;
    let d_hat = tape.matmul(w_pp, d)?;
    let delta_h = update_site(tape, d_hat, &branch.sites.delta_h)?;
    let refined = update_site(tape, d_hat, &branch.sites.message)?;
    let h_new = tape.add(h, delta_h)?;
    let w_pg = proximity_matrix(tape, z, h_new, &branch.pg, normalize)?;
    let m_hat = tape.matmul(w_pg, refined)?;
    Ok((m_hat, delta_h))
}

/// Local update followed by graph-to-pseudo global exchange.
pub fn intra_g2p_step<T: Real>(
    tape: &mut Tape<T>,
    state: ModalityState,
    branch: &Branch<Var>,
    segments: &Arc<Segments>,
    use_local: bool,
    use_global: bool,
    normalize: Normalize,
) -> Result<ModalityState> {
    let (m_loc, z_hat) = if use_local {
        let m_loc = local_mp(tape, state.m, state.z, segments, &branch.psi)?;
        let s = update_site(tape, m_loc, &branch.sites.local)?;
        (m_loc, tape.add(state.z, s)?)
    } else {
        (state.m, state.z)
    };
    if !use_global {
        return Ok(ModalityState {
            z: z_hat,
            m: m_loc,
            h: state.h,
        });
    }
    let (m_hat, delta_h) = glob_mp(tape, state.h, m_loc, z_hat, branch, normalize)?;
    let s = update_site(tape, m_hat, &branch.sites.g2p)?;
    Ok(ModalityState {
        z: tape.add(z_hat, s)?,
        m: tape.add(m_loc, m_hat)?,
        h: tape.add(state.h, delta_h)?,
    })
}

/// Pseudo-state exchange between modalities. Each side weighs the other
/// side's states with its own cross channels.
pub fn inter_modal_step<T: Real>(
    tape: &mut Tape<T>,
    h_v: Var,
    h_t: Var,
    visual: &Branch<Var>,
    textual: &Branch<Var>,
    normalize: Normalize,
) -> Result<(Var, Var)> {
    let w_tv = proximity_matrix(tape, h_v, h_t, &visual.cross, normalize)?;
    let from_t = tape.matmul(w_tv, h_t)?;
    let w_vt = proximity_matrix(tape, h_t, h_v, &textual.cross, normalize)?;
    let from_v = tape.matmul(w_vt, h_v)?;
    Ok((tape.add(h_v, from_t)?, tape.add(h_t, from_v)?))
}

/// Pseudo-to-graph propagation of the exchanged pseudo states.
pub fn intra_p2g_step<T: Real>(
    tape: &mut Tape<T>,
    state: ModalityState,
    branch: &Branch<Var>,
    use_global: bool,
    normalize: Normalize,
) -> Result<ModalityState> {
    if !use_global {
        return Ok(state);
    }
    let (m_g, delta_h) = glob_mp(tape, state.h, state.m, state.z, branch, normalize)?;
    let s = update_site(tape, m_g, &branch.sites.p2g)?;
    Ok(ModalityState {
        z: tape.add(state.z, s)?,
        m: tape.add(state.m, m_g)?,
        h: tape.add(state.h, delta_h)?,
    })
}

/// Initial state of one modality: `Z = M = f(X)`, `H` from the bank.
pub fn initial_state<T: Real>(tape: &mut Tape<T>, x: Var, branch: &Branch<Var>) -> Result<ModalityState> {
    let z = embed_nodes(tape, x, &branch.projector)?;
    Ok(ModalityState {
        z,
        m: z,
        h: branch.pseudo,
    })
}

/// One full recurrent step over both modalities.
pub fn dip_step<T: Real>(
    tape: &mut Tape<T>,
    states: [ModalityState; 2],
    params: &ModelParams<Var>,
    segments: &Arc<Segments>,
    normalize: Normalize,
    flags: AblationFlags,
) -> Result<[ModalityState; 2]> {
    let mut out = states;
    for (i, m) in Modality::BOTH.into_iter().enumerate() {
        out[i] = intra_g2p_step(
            tape,
            out[i],
            params.branch(m),
            segments,
            flags.use_local,
            flags.global_for(m),
            normalize,
        )?;
    }
    if flags.cross_active() {
        let (h_v, h_t) = inter_modal_step(tape, out[0].h, out[1].h, &params.visual, &params.textual, normalize)?;
        out[0].h = h_v;
        out[1].h = h_t;
    }
    for (i, m) in Modality::BOTH.into_iter().enumerate() {
        out[i] = intra_p2g_step(tape, out[i], params.branch(m), flags.global_for(m), normalize)?;
    }
    Ok(out)
}

/// Runs `layers` shared-parameter steps and returns the final node states
/// `(Z_v, Z_t)`. A non-finite intermediate aborts with its step index
/// (0 for the initial embedding).
pub fn dip_forward<T: Real>(
    tape: &mut Tape<T>,
    inputs: &GraphInputs,
    params: &ModelParams<Var>,
    normalize: Normalize,
    layers: usize,
    flags: AblationFlags,
) -> Result<(Var, Var)> {
    let abort = |step: usize| {
        move |e: CoreError| match e {
            CoreError::Tensor(source @ TensorError::NonFinite { .. }) => CoreError::NumericalAbort { step, source },
            other => other,
        }
    };
    let mut states = [
        initial_state(tape, inputs.x_v, &params.visual).map_err(abort(0))?,
        initial_state(tape, inputs.x_t, &params.textual).map_err(abort(0))?,
    ];
    for l in 1..=layers {
        states = dip_step(tape, states, params, &inputs.segments, normalize, flags).map_err(abort(l))?;
    }
    Ok((states[0].z, states[1].z))
}

/// Raw graph-to-pseudo proximities between the initial pseudo states and
/// the initial embeddings of `nodes`, `n_p x nodes.len()`.
pub fn pathway_heatmap<T: Real>(
    tape: &mut Tape<T>,
    inputs: &GraphInputs,
    params: &ModelParams<Var>,
    modality: Modality,
    nodes: &[usize],
) -> Result<Tensor<T>> {
    let branch = params.branch(modality);
    let z = embed_nodes(tape, inputs.features(modality), &branch.projector)?;
    let picked = tape.gather_rows(z, nodes.into())?;
    let w = proximity_matrix(tape, branch.pseudo, picked, &branch.gp, Normalize::None)?;
    Ok(tape.value(w).clone())
}
