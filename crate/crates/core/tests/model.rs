use inttravel_core::datastore::{generate_synthetic, GeneratorConfig, PoiCorpus};
use inttravel_core::harness::config::{EvalSplit, RunConfig};
use inttravel_core::harness::data::Prepared;
use inttravel_core::harness::eval::ModelPredictor;
use inttravel_core::harness::train::{eval_batches, evaluate_with, model_config};
use inttravel_core::model::{Model, ModelConfig, Variant};
use inttravel_core::seqbuild::{batchify, build_labeled_sequence, Batch, BatchOptions, Vocabularies};
use inttravel_core::Task;
use inttravel_tensor::{adam_step, AdamConfig, Graph, ParamBinder, ParameterStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(seed: u64, users: usize) -> (Vocabularies, Batch) {
    let cfg = GeneratorConfig {
        users,
        pois: 150,
        gids: 6,
        mean_interactions: 8.0,
        via_rate: 0.5,
        ..Default::default()
    };
    let ds = generate_synthetic(&cfg, seed).unwrap();
    let vocabs = Vocabularies::build(&ds);
    let corpus = PoiCorpus::new(&ds.pois);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<_> = ds
        .histories()
        .iter()
        .filter(|h| !h.interactions.is_empty())
        .map(|h| {
            let mut s = build_labeled_sequence(&ds, h.user, &h.interactions, 45).unwrap();
            s.attach_negatives(&corpus, &mut rng).unwrap();
            s
        })
        .collect();
    let opts = BatchOptions {
        batch_size: seqs.len(),
        ..Default::default()
    };
    let batch = batchify(&seqs, &ds.users, &vocabs, opts).remove(0);
    (vocabs, batch)
}

fn config(vocabs: &Vocabularies, depth: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        dim: 16,
        depth,
        max_len: 45,
        profile_dim: 8,
        variant,
        ..ModelConfig::new(vocabs.sizes())
    }
}

fn loss(model: &Model, store: &ParameterStore, batch: &Batch) -> (f64, [Option<f64>; 4]) {
    let mut g = Graph::new();
    let mut p = ParamBinder::new(store);
    let out = model.loss(&mut g, &mut p, batch, &[1.0; 4]).unwrap();
    (g.value(out.total).item(), out.per_task.map(|v| v.map(|v| g.value(v).item())))
}

#[test]
fn depths_one_two_four_train() {
    let (vocabs, batch) = fixture(1, 6);
    for depth in [1, 2, 4] {
        let model = Model::new(config(&vocabs, depth, Variant::Full)).unwrap();
        let mut store = model.init_params(3).unwrap();
        let before = loss(&model, &store, &batch).0;
        for _ in 0..15 {
            let mut g = Graph::new();
            let mut p = ParamBinder::new(&store);
            let out = model.loss(&mut g, &mut p, &batch, &[1.0; 4]).unwrap();
            let grads = g.backward(out.total).unwrap();
            let bound = p.finish();
            store.accumulate(&bound, &grads).unwrap();
            assert!(store.iter().all(|(_, e)| e.grad.all_finite()), "depth {depth}");
            adam_step(&mut store, &AdamConfig::with_lr(1e-2));
        }
        let after = loss(&model, &store, &batch).0;
        assert!(after.is_finite() && after < before, "depth {depth}: {before} -> {after}");
    }
}

#[test]
fn initial_loss_is_near_uniform_guessing() {
    let (vocabs, batch) = fixture(2, 12);
    let model = Model::new(config(&vocabs, 3, Variant::Full)).unwrap();
    let store = model.init_params(5).unwrap();
    let (total, per_task) = loss(&model, &store, &batch);
    let mut expected = 0.0;
    for task in Task::ALL {
        let l = batch.task(task);
        if l.is_empty() {
            continue;
        }
        let uniform = l.candidates.iter().map(|c| (c.len() as f64).ln()).sum::<f64>() / l.len() as f64;
        let got = per_task[task.index()].unwrap();
        assert!((got - uniform).abs() <= 0.05 * uniform, "{task}: {got} vs {uniform}");
        expected += uniform;
    }
    assert!((total - expected).abs() <= 0.05 * expected, "{total} vs {expected}");
}

#[test]
fn loss_ignores_candidate_order() {
    let (vocabs, batch) = fixture(4, 6);
    let model = Model::new(config(&vocabs, 2, Variant::Full)).unwrap();
    let store = model.init_params(8).unwrap();
    let mut shuffled = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for l in shuffled.labels.iter_mut() {
        for (c, p) in l.candidates.iter_mut().zip(l.positive.iter_mut()) {
            let truth = c[*p];
            c.shuffle(&mut rng);
            *p = c.iter().position(|&x| x == truth).unwrap();
        }
    }
    assert_ne!(batch.labels, shuffled.labels);
    let (a, _) = loss(&model, &store, &batch);
    let (b, _) = loss(&model, &store, &shuffled);
    assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn variants_share_common_parameters() {
    let (vocabs, _) = fixture(6, 3);
    let full = Model::new(config(&vocabs, 2, Variant::Full)).unwrap();
    let full_store = full.init_params(9).unwrap();
    for v in Variant::ABLATIONS {
        let m = Model::new(config(&vocabs, 2, v)).unwrap();
        let s = m.init_params(9).unwrap();
        for (name, e) in s.iter() {
            if let Ok(x) = full_store.value(name) {
                assert_eq!(x, &e.value, "{v}: {name}");
            }
        }
    }
    let names = |v: Variant| -> Vec<String> {
        Model::new(config(&vocabs, 2, v))
            .unwrap()
            .param_shapes()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    };
    assert!(!names(Variant::NoTip).iter().any(|n| n.contains(".hc.")));
    assert!(!names(Variant::NoTaskGating).iter().any(|n| n.starts_with("tsg.")));
    let no_tsf = names(Variant::NoTsf);
    assert!(no_tsf.iter().any(|n| n.starts_with("head.")) && !no_tsf.iter().any(|n| n.starts_with("tsf.")));
    assert_eq!(names(Variant::NoWhen), names(Variant::Full));
}

#[test]
fn removed_tasks_produce_no_loss_term() {
    let (vocabs, batch) = fixture(7, 5);
    for (v, task) in [
        (Variant::NoWhen, Task::When),
        (Variant::NoHow, Task::How),
        (Variant::NoWhere, Task::Where),
        (Variant::NoVia, Task::Via),
    ] {
        let m = Model::new(config(&vocabs, 2, v)).unwrap();
        let store = m.init_params(1).unwrap();
        let (total, per_task) = loss(&m, &store, &batch);
        assert!(per_task[task.index()].is_none(), "{v}");
        let sum: f64 = per_task.iter().flatten().sum();
        assert!((total - sum).abs() <= 1e-12 * total);
        assert!(!m.active_tasks().contains(&task));
    }
}

#[test]
fn untrained_retrieval_is_at_chance() {
    let cfg = RunConfig {
        dim: 8,
        profile_dim: 4,
        depth: 1,
        batch_size: 128,
        max_len: 30,
        generator: GeneratorConfig {
            users: 2100,
            pois: 600,
            gids: 20,
            mean_interactions: 5.0,
            interactions_sigma: 0.3,
            ..Default::default()
        },
        ..RunConfig::default()
    };
    let data = Prepared::new(generate_synthetic(&cfg.generator, 13).unwrap()).unwrap();
    let model = Model::new(model_config(&cfg, &data)).unwrap();
    let store = model.init_params(13).unwrap();
    let mut predictor = ModelPredictor {
        model: &model,
        store: &store,
    };
    let report = evaluate_with(&mut predictor, &cfg, &data, &[Task::Where], EvalSplit::Test).unwrap();
    let n = report.task(Task::Where).count;
    assert!(n >= 2000, "only {n} samples");
    let hr = report.retrieval(Task::Where).unwrap().hr1;
    let batches = eval_batches(&cfg, &data, &[Task::Where], EvalSplit::Test).unwrap();
    let sizes: Vec<usize> = batches
        .iter()
        .flat_map(|b| b.task(Task::Where).candidates.iter().map(Vec::len))
        .collect();
    assert_eq!(sizes.len(), n);
    let chance = sizes.iter().map(|&k| 1.0 / k as f64).sum::<f64>() / n as f64;
    let sigma = (chance * (1.0 - chance) / n as f64).sqrt();
    assert!((hr - chance).abs() <= 4.0 * sigma, "HR@1 {hr} vs chance {chance}");
}
