//! Dense, loop-by-loop evaluation of the pathway model on plain nested
//! vectors. Every pathway weight is built entry by entry from the scalar
//! proximity and every product is an explicit triple loop. Slow, and meant
//! only as a check on the blocked implementation.

use dip_tensor::{ParamId, ParamStore, LEAKY_SLOPE};

use crate::graph::Csr;
use crate::model::{Affine, Branch, ModelLayout, Normalize, ProximityChannels};
use crate::pathways::AblationFlags;

pub type Mat = Vec<Vec<f64>>;

fn leaky(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn to_mat(store: &ParamStore, id: ParamId) -> Mat {
    let t = store.get(id);
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[derive(Clone, Debug)]
pub struct DenseAffine {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl DenseAffine {
    fn load(store: &ParamStore, a: &Affine<ParamId>) -> Self {
        Self {
            w: to_mat(store, a.w),
            b: store.get(a.b).row(0).to_vec(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.b.len())
            .map(|j| self.b[j] + (0..x.len()).map(|k| x[k] * self.w[k][j]).sum::<f64>())
            .collect()
    }

    /// `LeakyReLU(apply(x))`.
    pub fn site(&self, x: &[f64]) -> Vec<f64> {
        self.apply(x).into_iter().map(leaky).collect()
    }
}

#[derive(Clone, Debug)]
pub struct DenseChannels {
    /// One `d_s x d_c` transform per channel.
    pub w: Vec<Mat>,
    pub b: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

impl DenseChannels {
    fn load(store: &ParamStore, ch: &ProximityChannels<ParamId>) -> Self {
        let w = to_mat(store, ch.transform.w);
        let b = store.get(ch.transform.b).row(0).to_vec();
        let lambda = store.get(ch.lambda).row(0).to_vec();
        let d_c = b.len() / lambda.len();
        Self {
            w: (0..lambda.len())
                .map(|t| w.iter().map(|row| row[t * d_c..(t + 1) * d_c].to_vec()).collect())
                .collect(),
            b: (0..lambda.len()).map(|t| b[t * d_c..(t + 1) * d_c].to_vec()).collect(),
            lambda,
        }
    }

    fn sigma(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let d_c = self.b[t].len();
        (0..d_c)
            .map(|j| leaky(self.b[t][j] + (0..x.len()).map(|k| x[k] * self.w[t][k][j]).sum::<f64>()))
            .collect()
    }

    /// Proximity of one pair.
    pub fn phi(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.lambda.len() {
            let (sa, sb) = (self.sigma(t, a), self.sigma(t, b));
            total += self.lambda[t] * sa.iter().zip(&sb).map(|(x, y)| x * y).sum::<f64>();
        }
        total
    }

    /// Weight matrix with entry `(i, j) = phi(a_i, b_j)`, optionally
    /// softmax-normalized per row.
    pub fn weights(&self, a: &Mat, b: &Mat, normalize: Normalize) -> Mat {
        let mut w: Mat = a
            .iter()
            .map(|ai| b.iter().map(|bj| self.phi(ai, bj)).collect())
            .collect();
        if normalize == Normalize::RowSoftmax {
            for row in &mut w {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
                let s: f64 = e.iter().sum();
                *row = e.into_iter().map(|x| x / s).collect();
            }
        }
        w
    }
}

#[derive(Clone, Debug)]
pub struct DenseBranch {
    pub hidden: DenseAffine,
    pub output: DenseAffine,
    pub pseudo: Mat,
    pub gp: DenseChannels,
    pub pp: DenseChannels,
    pub pg: DenseChannels,
    pub cross: DenseChannels,
    pub psi: DenseAffine,
    pub local: DenseAffine,
    pub g2p: DenseAffine,
    pub p2g: DenseAffine,
    pub delta_h: DenseAffine,
    pub message: DenseAffine,
}

impl DenseBranch {
    fn load(store: &ParamStore, b: &Branch<ParamId>) -> Self {
        Self {
            hidden: DenseAffine::load(store, &b.projector.hidden),
            output: DenseAffine::load(store, &b.projector.output),
            pseudo: to_mat(store, b.pseudo),
            gp: DenseChannels::load(store, &b.gp),
            pp: DenseChannels::load(store, &b.pp),
            pg: DenseChannels::load(store, &b.pg),
            cross: DenseChannels::load(store, &b.cross),
            psi: DenseAffine::load(store, &b.psi),
            local: DenseAffine::load(store, &b.sites.local),
            g2p: DenseAffine::load(store, &b.sites.g2p),
            p2g: DenseAffine::load(store, &b.sites.p2g),
            delta_h: DenseAffine::load(store, &b.sites.delta_h),
            message: DenseAffine::load(store, &b.sites.message),
        }
    }

    pub fn embed(&self, x: &Mat) -> Mat {
        x.iter()
            .map(|row| {
                let h: Vec<f64> = self.hidden.apply(row).into_iter().map(leaky).collect();
                self.output.apply(&h)
            })
            .collect()
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|ai| (0..cols).map(|j| (0..b.len()).map(|k| ai[k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

fn rows_site(x: &Mat, site: &DenseAffine) -> Mat {
    x.iter().map(|r| site.site(r)).collect()
}

/// Node states, messages and pseudo states of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseState {
    pub z: Mat,
    pub m: Mat,
    pub h: Mat,
}

pub fn local_mp(m: &Mat, z: &Mat, adjacency: &Csr, psi: &DenseAffine) -> Mat {
    let own: Mat = m
        .iter()
        .zip(z)
        .map(|(a, b)| [a.as_slice(), b.as_slice()].concat())
        .collect();
    (0..own.len())
        .map(|v| {
            let nb = adjacency.neighbors(v);
            let mut mean = vec![0.0; own[v].len()];
            for &j in nb {
                for (acc, x) in mean.iter_mut().zip(&own[j]) {
                    *acc += x;
                }
            }
            if !nb.is_empty() {
                mean.iter_mut().for_each(|x| *x /= nb.len() as f64);
            }
            psi.site(&[own[v].as_slice(), mean.as_slice()].concat())
        })
        .collect()
}

/// Returns `(message to graph nodes, pseudo-state increment)`.
pub fn glob_mp(h: &Mat, m_g: &Mat, z: &Mat, br: &DenseBranch, normalize: Normalize) -> (Mat, Mat) {
    let w_gp = br.gp.weights(h, z, normalize);
    let d = matmul(&w_gp, m_g);
    let w_pp = br.pp.weights(h, h, normalize);
    let d_hat = matmul(&w_pp, &d);
    let delta_h = rows_site(&d_hat, &br.delta_h);
    let refined = rows_site(&d_hat, &br.message);
    let w_pg = br.pg.weights(z, &add(h, &delta_h), normalize);
    (matmul(&w_pg, &refined), delta_h)
}

pub fn g2p(
    s: &DenseState,
    br: &DenseBranch,
    adjacency: &Csr,
    local: bool,
    global: bool,
    normalize: Normalize,
) -> DenseState {
    let (m_loc, z_hat) = if local {
        let m_loc = local_mp(&s.m, &s.z, adjacency, &br.psi);
        let z_hat = add(&s.z, &rows_site(&m_loc, &br.local));
        (m_loc, z_hat)
    } else {
        (s.m.clone(), s.z.clone())
    };
    if !global {
        return DenseState {
            z: z_hat,
            m: m_loc,
            h: s.h.clone(),
        };
    }
    let (m_hat, delta_h) = glob_mp(&s.h, &m_loc, &z_hat, br, normalize);
    DenseState {
        z: add(&z_hat, &rows_site(&m_hat, &br.g2p)),
        m: add(&m_loc, &m_hat),
        h: add(&s.h, &delta_h),
    }
}

pub fn inter_modal(h_v: &Mat, h_t: &Mat, v: &DenseBranch, t: &DenseBranch, normalize: Normalize) -> (Mat, Mat) {
    let w_tv = v.cross.weights(h_v, h_t, normalize);
    let w_vt = t.cross.weights(h_t, h_v, normalize);
    (add(h_v, &matmul(&w_tv, h_t)), add(h_t, &matmul(&w_vt, h_v)))
}

pub fn p2g(s: &DenseState, br: &DenseBranch, global: bool, normalize: Normalize) -> DenseState {
    if !global {
        return s.clone();
    }
    let (m_g, delta_h) = glob_mp(&s.h, &s.m, &s.z, br, normalize);
    DenseState {
        z: add(&s.z, &rows_site(&m_g, &br.p2g)),
        m: add(&s.m, &m_g),
        h: add(&s.h, &delta_h),
    }
}

/// Both branches of a model, read out of a parameter store.
#[derive(Clone, Debug)]
pub struct DenseModel {
    pub visual: DenseBranch,
    pub textual: DenseBranch,
    pub normalize: Normalize,
}

impl DenseModel {
    pub fn load(layout: &ModelLayout, store: &ParamStore) -> Self {
        Self {
            visual: DenseBranch::load(store, &layout.ids.visual),
            textual: DenseBranch::load(store, &layout.ids.textual),
            normalize: layout.config.normalize,
        }
    }

    pub fn initial(&self, x_v: &Mat, x_t: &Mat) -> [DenseState; 2] {
        [(&self.visual, x_v), (&self.textual, x_t)].map(|(br, x)| {
            let z = br.embed(x);
            DenseState {
                m: z.clone(),
                z,
                h: br.pseudo.clone(),
            }
        })
    }

    pub fn step(&self, states: &[DenseState; 2], adjacency: &Csr, flags: AblationFlags) -> [DenseState; 2] {
        let gv = flags.global_for(crate::Modality::Visual);
        let gt = flags.global_for(crate::Modality::Textual);
        let mut v = g2p(&states[0], &self.visual, adjacency, flags.use_local, gv, self.normalize);
        let mut t = g2p(
            &states[1],
            &self.textual,
            adjacency,
            flags.use_local,
            gt,
            self.normalize,
        );
        if flags.cross_active() {
            let (hv, ht) = inter_modal(&v.h, &t.h, &self.visual, &self.textual, self.normalize);
            v.h = hv;
            t.h = ht;
        }
        [
            p2g(&v, &self.visual, gv, self.normalize),
            p2g(&t, &self.textual, gt, self.normalize),
        ]
    }

    /// Final `(Z_v, Z_t)` after `layers` steps.
    pub fn forward(&self, x_v: &Mat, x_t: &Mat, adjacency: &Csr, layers: usize, flags: AblationFlags) -> (Mat, Mat) {
        let mut states = self.initial(x_v, x_t);
        for _ in 0..layers {
            states = self.step(&states, adjacency, flags);
        }
        let [v, t] = states;
        (v.z, t.z)
    }
}
