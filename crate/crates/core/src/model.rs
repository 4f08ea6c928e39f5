//! Parameter layout of the pathway model and whole-model forward helpers.

use std::sync::Arc;

use dip_tensor::{ParamId, ParamStore, Real, Segments, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{Csr, MultimodalGraph};
use crate::heads;
use crate::pathways::{dip_forward, AblationFlags};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Visual,
    Textual,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Visual, Modality::Textual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Textual => "textual",
        }
    }
}

/// How raw proximities become pathway weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    None,
    #[default]
    RowSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_t: usize,
    /// State (and message) width.
    pub d_s: usize,
    /// Proximity channels; must divide `d_s`.
    pub tau: usize,
    pub n_p_v: usize,
    pub n_p_t: usize,
    #[serde(default)]
    pub normalize: Normalize,
    /// Present for node classification; selects the classifier head.
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidConfig(m));
        if self.d_s == 0 || self.tau == 0 || !self.d_s.is_multiple_of(self.tau) {
            return bad(format!("tau = {} must divide d_s = {}", self.tau, self.d_s));
        }
        if self.n_p_v == 0 || self.n_p_t == 0 {
            return bad("pseudo-node counts must be at least 1".into());
        }
        if self.d_v == 0 || self.d_t == 0 {
            return bad("feature widths must be positive".into());
        }
        if self.num_classes.is_some_and(|c| c < 2) {
            return bad("num_classes must be at least 2".into());
        }
        Ok(())
    }

    /// Width of one proximity channel.
    pub fn d_c(&self) -> usize {
        self.d_s / self.tau
    }

    pub fn d_in(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.d_v,
            Modality::Textual => self.d_t,
        }
    }

    pub fn n_p(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.n_p_v,
            Modality::Textual => self.n_p_t,
        }
    }
}

/// `x * w + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine<I> {
    pub w: I,
    pub b: I,
}

impl<I: Copy> Affine<I> {
    pub fn map<J>(&self, f: &impl Fn(I) -> J) -> Affine<J> {
        Affine {
            w: f(self.w),
            b: f(self.b),
        }
    }
}

/// Row-wise map from features into the state space:
/// `output(LeakyReLU(hidden(x)))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateProjector<I> {
    pub hidden: Affine<I>,
    pub output: Affine<I>,
}

impl<I: Copy> StateProjector<I> {
    pub fn map<J>(&self, f: &impl Fn(I) -> J) -> StateProjector<J> {
        StateProjector {
            hidden: self.hidden.map(f),
            output: self.output.map(f),
        }
    }
}

/// `tau` channel transforms stacked column-wise into one `d_s x (tau*d_c)`
/// affine map, plus the `1 x tau` channel weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProximityChannels<I> {
    pub transform: Affine<I>,
    pub lambda: I,
}

impl<I: Copy> ProximityChannels<I> {
    pub fn map<J>(&self, f: &impl Fn(I) -> J) -> ProximityChannels<J> {
        ProximityChannels {
            transform: self.transform.map(f),
            lambda: f(self.lambda),
        }
    }
}

/// The five `LeakyReLU(affine)` update sites of one modality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateSites<I> {
    /// State update from the local message.
    pub local: Affine<I>,
    /// State update from the global message in the graph-to-pseudo pass.
    pub g2p: Affine<I>,
    /// State update from the global message in the pseudo-to-graph pass.
    pub p2g: Affine<I>,
    /// Pseudo-state refinement.
    pub delta_h: Affine<I>,
    /// Refined message sent back to graph nodes.
    pub message: Affine<I>,
}

impl<I: Copy> UpdateSites<I> {
    pub fn map<J>(&self, f: &impl Fn(I) -> J) -> UpdateSites<J> {
        UpdateSites {
            local: self.local.map(f),
            g2p: self.g2p.map(f),
            p2g: self.p2g.map(f),
            delta_h: self.delta_h.map(f),
            message: self.message.map(f),
        }
    }

    pub fn all(&self) -> [Affine<I>; 5] {
        [self.local, self.g2p, self.p2g, self.delta_h, self.message]
    }
}

/// All parameters of one modality, shared by every recurrent step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Branch<I> {
    pub projector: StateProjector<I>,
    /// Initial pseudo-node states, `n_p x d_s`.
    pub pseudo: I,
    pub gp: ProximityChannels<I>,
    pub pp: ProximityChannels<I>,
    pub pg: ProximityChannels<I>,
    /// Weights for messages arriving from the other modality's pseudo nodes.
    pub cross: ProximityChannels<I>,
    /// Local aggregation `[self || neighbor mean] -> message`.
    pub psi: Affine<I>,
    pub sites: UpdateSites<I>,
}

impl<I: Copy> Branch<I> {
    pub fn map<J>(&self, f: &impl Fn(I) -> J) -> Branch<J> {
        Branch {
            projector: self.projector.map(f),
            pseudo: f(self.pseudo),
            gp: self.gp.map(f),
            pp: self.pp.map(f),
            pg: self.pg.map(f),
            cross: self.cross.map(f),
            psi: self.psi.map(f),
            sites: self.sites.map(f),
        }
    }
}

/// Two-layer perceptron producing class logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classifier<I> {
    pub hidden: Affine<I>,
    pub output: Affine<I>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams<I> {
    pub visual: Branch<I>,
    pub textual: Branch<I>,
    /// Fusion `g: 2*d_s -> d_s` over concatenated modality states.
    pub fusion: Affine<I>,
    pub classifier: Option<Classifier<I>>,
}

impl<I: Copy> ModelParams<I> {
    pub fn map<J>(&self, f: &impl Fn(I) -> J) -> ModelParams<J> {
        ModelParams {
            visual: self.visual.map(f),
            textual: self.textual.map(f),
            fusion: self.fusion.map(f),
            classifier: self.classifier.map(|c| Classifier {
                hidden: c.hidden.map(f),
                output: c.output.map(f),
            }),
        }
    }

    pub fn branch(&self, m: Modality) -> &Branch<I> {
        match m {
            Modality::Visual => &self.visual,
            Modality::Textual => &self.textual,
        }
    }
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        self.store.add(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    fn affine(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Affine<ParamId> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Affine {
            w: self.uniform(format!("{name}.w"), fan_in, fan_out, bound),
            b: self.store.add(format!("{name}.b"), Tensor::zeros(1, fan_out)),
        }
    }

    fn channels(&mut self, name: &str, cfg: &ModelConfig) -> ProximityChannels<ParamId> {
        let bound = (6.0 / (cfg.d_s + cfg.d_c()) as f64).sqrt();
        let width = cfg.tau * cfg.d_c();
        ProximityChannels {
            transform: Affine {
                w: self.uniform(format!("{name}.w"), cfg.d_s, width, bound),
                b: self.store.add(format!("{name}.b"), Tensor::zeros(1, width)),
            },
            lambda: self
                .store
                .add(format!("{name}.lambda"), Tensor::full(1, cfg.tau, 1.0 / cfg.tau as f64)),
        }
    }

    fn gaussian(&mut self, name: String, rows: usize, cols: usize, std: f64) -> ParamId {
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| normal.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::from_vec(rows, cols, data).expect("sized"))
    }

    fn branch(&mut self, m: Modality, cfg: &ModelConfig) -> Branch<ParamId> {
        let p = m.name();
        let d_s = cfg.d_s;
        Branch {
            projector: StateProjector {
                hidden: self.affine(&format!("{p}.projector.hidden"), cfg.d_in(m), d_s),
                output: self.affine(&format!("{p}.projector.output"), d_s, d_s),
            },
            pseudo: self.gaussian(format!("{p}.pseudo"), cfg.n_p(m), d_s, 1.0 / (d_s as f64).sqrt()),
            gp: self.channels(&format!("{p}.gp"), cfg),
            pp: self.channels(&format!("{p}.pp"), cfg),
            pg: self.channels(&format!("{p}.pg"), cfg),
            cross: self.channels(&format!("{p}.cross"), cfg),
            psi: self.affine(&format!("{p}.psi"), 4 * d_s, d_s),
            sites: UpdateSites {
                local: self.affine(&format!("{p}.site.local"), d_s, d_s),
                g2p: self.affine(&format!("{p}.site.g2p"), d_s, d_s),
                p2g: self.affine(&format!("{p}.site.p2g"), d_s, d_s),
                delta_h: self.affine(&format!("{p}.site.delta_h"), d_s, d_s),
                message: self.affine(&format!("{p}.site.message"), d_s, d_s),
            },
        }
    }
}

/// Model configuration plus the store position of every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub config: ModelConfig,
    pub ids: ModelParams<ParamId>,
}

impl ModelLayout {
    /// Fresh parameters: affine weights uniform in `+-sqrt(6/(fan_in+fan_out))`,
    /// zero biases, channel weights `1/tau`, pseudo states `N(0, 1/d_s)`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let visual = init.branch(Modality::Visual, &config);
        let textual = init.branch(Modality::Textual, &config);
        let fusion = init.affine("fusion", 2 * config.d_s, config.d_s);
        let classifier = config.num_classes.map(|c| Classifier {
            hidden: init.affine("classifier.hidden", config.d_s, config.d_s),
            output: init.affine("classifier.output", config.d_s, c),
        });
        let ids = ModelParams {
            visual,
            textual,
            fusion,
            classifier,
        };
        Ok((Self { config, ids }, store))
    }

    /// Layout for an existing store, which must have exactly the names and
    /// shapes `init` would produce for `config`.
    pub fn for_store(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        let (layout, reference) = Self::init(config, 0)?;
        let expected: Vec<(&str, (usize, usize))> = reference.iter().map(|(n, t)| (n, t.shape())).collect();
        let actual: Vec<(&str, (usize, usize))> = store.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != actual {
            let first = expected
                .iter()
                .zip(&actual)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {a:?}, found {b:?}"))
                .unwrap_or_else(|| format!("expected {} parameters, found {}", expected.len(), actual.len()));
            return Err(CoreError::DimensionMismatch(format!(
                "checkpoint does not match config: {first}"
            )));
        }
        Ok(layout)
    }

    /// Records every parameter on `tape` and returns the handles.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> ModelParams<Var> {
        let vars = store.bind(tape);
        self.vars(&vars)
    }

    /// Handles for parameters bound in store order, as `ParamStore::bind` does.
    pub fn vars(&self, vars: &[Var]) -> ModelParams<Var> {
        self.ids.map(&|id: ParamId| vars[id.index()])
    }

    /// Sets weights and biases of all ten update sites to zero.
    pub fn zero_update_sites(&self, store: &mut ParamStore) {
        for m in Modality::BOTH {
            for site in self.ids.branch(m).sites.all() {
                for id in [site.w, site.b] {
                    let t = store.get_mut(id);
                    *t = Tensor::zeros(t.rows(), t.cols());
                }
            }
        }
    }

    /// Redraws both pseudo banks from `N(0, 1/d_s)` with `seed`.
    pub fn reinit_pseudo(&self, store: &mut ParamStore, seed: u64) {
        let std = 1.0 / (self.config.d_s as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in Modality::BOTH {
            let t = store.get_mut(self.ids.branch(m).pseudo);
            t.data_mut().iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        }
    }
}

/// Node features and message-passing adjacency recorded on a tape.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub x_v: Var,
    pub x_t: Var,
    pub segments: Arc<Segments>,
    pub n: usize,
}

impl GraphInputs {
    pub fn new<T: Real>(tape: &mut Tape<T>, graph: &MultimodalGraph, adjacency: &Csr) -> Self {
        Self {
            x_v: tape.constant(graph.feat_v().cast()),
            x_t: tape.constant(graph.feat_t().cast()),
            segments: adjacency.segments(),
            n: graph.n(),
        }
    }

    pub fn features(&self, m: Modality) -> Var {
        match m {
            Modality::Visual => self.x_v,
            Modality::Textual => self.x_t,
        }
    }
}

/// Final modality states and their fused embedding.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub z_v: Var,
    pub z_t: Var,
    pub fused: Var,
}

/// `dip_forward` followed by modality fusion.
pub fn forward_fused<T: Real>(
    tape: &mut Tape<T>,
    params: &ModelParams<Var>,
    inputs: &GraphInputs,
    config: &ModelConfig,
    layers: usize,
    flags: AblationFlags,
) -> Result<ForwardOutput> {
    let (z_v, z_t) = dip_forward(tape, inputs, params, config.normalize, layers, flags)?;
    let fused = heads::fuse(tape, z_v, z_t, &params.fusion)?;
    Ok(ForwardOutput { z_v, z_t, fused })
}
