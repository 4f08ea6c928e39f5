#![allow(dead_code)]

use dip_core::model::GraphInputs;
use dip_core::reference::Mat;
use dip_core::{
    dip_forward, gen_synthetic, AblationFlags, ModelConfig, ModelLayout, MultimodalGraph, Normalize, SynthConfig,
};
use dip_tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_graph(n: usize, seed: u64) -> MultimodalGraph {
    let cfg = SynthConfig {
        n,
        blocks: 2,
        p_in: 0.3,
        p_out: 0.05,
        d_v: 4,
        d_t: 3,
        seed,
        ..SynthConfig::default()
    };
    gen_synthetic(&cfg).unwrap().0
}

pub fn config(d_s: usize, tau: usize, n_p_v: usize, n_p_t: usize, normalize: Normalize) -> ModelConfig {
    ModelConfig {
        d_v: 4,
        d_t: 3,
        d_s,
        tau,
        n_p_v,
        n_p_t,
        normalize,
        num_classes: Some(2),
    }
}

/// Adds uniform noise in `+-scale` to every parameter so that biases and
/// channel weights are not at their initial constants.
pub fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x += rng.random_range(-scale..scale));
    }
}

pub fn model(cfg: ModelConfig, seed: u64) -> (ModelLayout, ParamStore) {
    let (layout, mut store) = ModelLayout::init(cfg, seed).unwrap();
    perturb(&mut store, seed ^ 0x5eed, 0.3);
    (layout, store)
}

pub fn forward(
    layout: &ModelLayout,
    store: &ParamStore,
    graph: &MultimodalGraph,
    layers: usize,
    flags: AblationFlags,
) -> (Tensor, Tensor) {
    let mut tape = Tape::<f64>::new();
    let params = layout.bind(&mut tape, store);
    let inputs = GraphInputs::new(&mut tape, graph, graph.adjacency());
    let (zv, zt) = dip_forward(&mut tape, &inputs, &params, layout.config.normalize, layers, flags).unwrap();
    (tape.value(zv).clone(), tape.value(zt).clone())
}

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn max_dev(t: &Tensor, m: &Mat) -> f64 {
    assert_eq!(t.rows(), m.len());
    (0..t.rows())
        .flat_map(|i| t.row(i).iter().zip(&m[i]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}
