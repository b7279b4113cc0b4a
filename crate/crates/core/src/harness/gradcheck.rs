//! Finite-difference verification of the whole model on a tiny batch.

use inttravel_tensor::{grad_check, GradCheckOptions, GradCheckReport, ParameterStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::HarnessError;
use crate::datastore::{generate_synthetic, GeneratorConfig, PoiCorpus};
use crate::model::{Model, ModelConfig, Variant};
use crate::seqbuild::{batchify, build_labeled_sequence, Batch, BatchOptions, Vocabularies};
use crate::Task;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TinySetup {
    pub dim: usize,
    pub depth: usize,
    pub streams: usize,
    pub interactions: usize,
    pub users: usize,
    pub tasks: Vec<Task>,
    pub variant: Variant,
    /// Standard deviation of noise added to every parameter so that gates,
    /// mixing scalars and biases all sit away from their initial values.
    pub noise: f64,
}

impl Default for TinySetup {
    fn default() -> Self {
        Self {
            dim: 8,
            depth: 2,
            streams: 2,
            interactions: 2,
            users: 2,
            tasks: vec![Task::When, Task::Where],
            variant: Variant::Full,
            noise: 0.3,
        }
    }
}

/// A randomized tiny model, its parameters and one labeled batch.
pub fn tiny_problem(setup: &TinySetup, seed: u64) -> Result<(Model, ParameterStore, Batch), HarnessError> {
    let gen = GeneratorConfig {
        users: setup.users,
        pois: 40,
        gids: 4,
        mean_interactions: (setup.interactions + 2) as f64,
        interactions_sigma: 0.0,
        via_rate: 0.5,
        ..Default::default()
    };
    let ds = generate_synthetic(&gen, seed)?;
    let vocabs = Vocabularies::build(&ds);
    let corpus = PoiCorpus::new(&ds.pois);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seqs = Vec::new();
    for h in ds.histories() {
        let take = setup.interactions.min(h.interactions.len());
        let mut s = build_labeled_sequence(&ds, h.user, &h.interactions[..take], 3 * setup.interactions)?;
        for t in Task::ALL {
            if !setup.tasks.contains(&t) {
                s.clear_labels(t);
            }
        }
        s.attach_negatives(&corpus, &mut rng)?;
        seqs.push(s);
    }
    let batch = batchify(
        &seqs,
        &ds.users,
        &vocabs,
        BatchOptions {
            batch_size: seqs.len(),
            ..Default::default()
        },
    )
    .remove(0);
    let cfg = ModelConfig {
        dim: setup.dim,
        depth: setup.depth,
        streams: setup.streams,
        max_len: 3 * setup.interactions,
        profile_dim: (setup.dim / 2).max(1),
        variant: setup.variant,
        tasks: setup.tasks.clone(),
        ..ModelConfig::new(vocabs.sizes())
    };
    let model = Model::new(cfg).map_err(HarnessError::Config)?;
    let mut store = model.init_params(seed)?;
    let noise = Normal::new(0.0, setup.noise).map_err(|e| HarnessError::Config(e.to_string()))?;
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let v = store.value(&name)?;
        let noisy = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x + noise.sample(&mut rng)).collect())?;
        store.set_value(&name, noisy)?;
    }
    Ok((model, store, batch))
}

/// Checks every parameter of the tiny model against central differences.
pub fn run_gradcheck(setup: &TinySetup, seed: u64, samples_per_param: usize) -> Result<GradCheckReport, HarnessError> {
    let (model, mut store, batch) = tiny_problem(setup, seed)?;
    let weights = [1.0; 4];
    let report = grad_check(
        |g, p| Ok(model.loss(g, p, &batch, &weights)?.total),
        &mut store,
        GradCheckOptions {
            h: 1e-5,
            samples_per_param,
            seed,
        },
    )?;
    Ok(report)
}
