//! Minimal neural-network toolkit: a reverse-mode tape over `f64`
//! matrices, transformer/MLP layers and the AdamW optimizer.

mod layers;
mod optim;
mod tape;

pub use layers::{
    single_segment, uniform_segments, Activation, Block, Builder, LayerNorm, Linear, Mlp, Transformer, MLP_RATIO,
};
pub use optim::{AdamW, AdamWConfig, AdamWState};
pub use tape::{AttentionMode, Grads, NodeId, ParamId, ParamSnapshot, ParamStore, Tape};

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One coordinate of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares `analytic` gradients of `loss` with central differences on
/// `n` random parameter coordinates. Coordinates whose analytic gradient is
/// below `1e-7` in magnitude are skipped, since their relative error is
/// dominated by round-off.
pub fn check_gradients(
    store: &mut ParamStore,
    analytic: &Grads,
    n: usize,
    seed: u64,
    loss: impl Fn(&ParamStore) -> f64,
) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates = store.ids().flat_map(|id| {
        analytic
            .get(id)
            .iter()
            .enumerate()
            .filter(|(_, g)| g.abs() > 1e-7)
            .map(move |(i, _)| (id, i))
            .collect::<Vec<_>>()
    });
    let picks = candidates.choose_multiple(&mut rng, n);
    picks
        .into_iter()
        .map(|(id, i)| {
            let orig = store.get(id).as_slice().expect("contiguous")[i];
            let h = 1e-5 * orig.abs().max(1.0);
            store.get_mut(id).as_slice_mut().expect("contiguous")[i] = orig + h;
            let fp = loss(store);
            store.get_mut(id).as_slice_mut().expect("contiguous")[i] = orig - h;
            let fm = loss(store);
            store.get_mut(id).as_slice_mut().expect("contiguous")[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(id).as_slice().expect("contiguous")[i];
            GradCheck {
                param: store.name(id).to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_err: (a - numeric).abs() / a.abs().max(numeric.abs()),
            }
        })
        .collect()
}
