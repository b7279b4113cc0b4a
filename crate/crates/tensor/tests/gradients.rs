use inttravel_tensor::{
    grad_check, CustomOp, GradCheckOptions, Graph, ParamBinder, ParameterStore, Result, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn check<F>(store: &mut ParameterStore, f: F) -> f64
where
    F: for<'a> FnMut(&mut Graph, &mut ParamBinder<'a>) -> Result<Var>,
{
    let report = grad_check(
        f,
        store,
        GradCheckOptions {
            h: 1e-5,
            samples_per_param: 64,
            seed: 3,
        },
    )
    .unwrap();
    report.worst()
}

#[test]
fn quadratic_norm_matches_closed_form() {
    let mut store = ParameterStore::new();
    store.insert("x", Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
    let mut g = Graph::new();
    let mut b = ParamBinder::new(&store);
    let x = b.param(&mut g, "x").unwrap();
    let sq = g.mul(x, x).unwrap();
    let root = g.sum_all(sq).unwrap();
    let grads = g.backward(root).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);

    let worst = check(&mut store, |g, b| {
        let x = b.param(g, "x")?;
        let sq = g.mul(x, x)?;
        g.sum_all(sq)
    });
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn constant_function_has_zero_error() {
    let mut store = ParameterStore::new();
    store.insert("x", Tensor::full(&[2, 2], 0.3)).unwrap();
    let worst = check(&mut store, |g, b| {
        let _ = b.param(g, "x")?;
        g.scalar(7.0)
    });
    assert_eq!(worst, 0.0);
}

#[test]
fn matmul_gradient_has_outer_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParameterStore::new();
    store.insert("w", random(&[3, 4], &mut rng)).unwrap();
    let x = random(&[4, 1], &mut rng);
    let mut g = Graph::new();
    let mut b = ParamBinder::new(&store);
    let w = b.param(&mut g, "w").unwrap();
    let xv = g.constant(x.clone()).unwrap();
    let y = g.matmul(w, xv).unwrap();
    let root = g.sum_all(y).unwrap();
    let grads = g.backward(root).unwrap();
    // d/dW sum(W x) = 1 xᵀ: every row equals x.
    let dw = grads.get(w).unwrap();
    for r in 0..3 {
        assert_eq!(dw.row(r), x.data());
    }
    let worst = check(&mut store, move |g, b| {
        let w = b.param(g, "w")?;
        let xv = g.constant(x.clone())?;
        let y = g.matmul(w, xv)?;
        g.sum_all(y)
    });
    assert!(worst <= 1e-4, "{worst}");
}

/// A composite exercising every primitive the model relies on.
fn composite(g: &mut Graph, b: &mut ParamBinder<'_>) -> Result<Var> {
    let a = b.param(g, "a")?; // 4x3
    let w = b.param(g, "w")?; // 3x5
    let wt = b.param(g, "wt")?; // 5x3
    let row = b.param(g, "row")?; // 1x5
    let col = b.param(g, "col")?; // 4x1
    let table = b.param(g, "table")?; // 6x3
    let gw = b.param(g, "gw")?; // 2 x (2*3)
    let h = g.matmul(a, w)?;
    let h = g.add(h, row)?;
    let h = g.silu(h)?;
    let h2 = g.matmul_nt(a, wt)?;
    let h = g.mul(h, h2)?;
    let h = g.sub(h, col)?;
    let n1 = g.rms_norm(h, 1e-6)?;
    let n2 = g.layer_norm(h, 1e-6)?;
    let t = g.tanh(n1)?;
    let s = g.sigmoid(n2)?;
    let cat = g.concat_cols(&[t, s])?; // 4x10
    let sel = g.select_cols(cat, &[0, 3, 3, 9, 7, 1])?; // 4x6
    let gathered = g.gather_rows(table, &[Some(1), None, Some(5), Some(1)])?; // 4x3
    let bm = g.batched_matmul(sel, gathered, 2, 3, 1)?; // 4x2
    let bm = g.reshape(bm, &[2, 4])?;
    let bm = g.reshape(bm, &[4, 2])?;
    let gm = g.grouped_matvec(bm, gw, &[0, 1, 1, 0])?; // 4x3
    let lse = g.log_sum_exp_rows(gm)?;
    let m = g.mean_all(lse)?;
    let s2 = g.sum_all(gathered)?;
    let s2 = g.scale(s2, 0.1)?;
    let s3 = g.mean_of(&[m, s2])?;
    Ok(s3)
}

#[test]
fn composite_of_all_primitives_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParameterStore::new();
    for (name, shape) in [
        ("a", vec![4, 3]),
        ("w", vec![3, 5]),
        ("wt", vec![5, 3]),
        ("row", vec![1, 5]),
        ("col", vec![4, 1]),
        ("table", vec![6, 3]),
        ("gw", vec![2, 6]),
    ] {
        store.insert(name, random(&shape, &mut rng)).unwrap();
    }
    let report = grad_check(composite, &mut store, GradCheckOptions::default()).unwrap();
    assert_eq!(report.params.len(), 7);
    assert!(report.passes(1e-4), "{report:?}");
}

#[derive(Debug)]
struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &'static str {
        "broken_square"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        // Deliberately wrong: derivative of x² taken as x instead of 2x.
        let d = inputs[0].data().iter().zip(grad.data()).map(|(x, g)| x * g).collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), d).unwrap())]
    }
}

#[test]
fn corrupted_backward_rule_fails_check() {
    let mut store = ParameterStore::new();
    store.insert("x", Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
    let report = grad_check(
        |g, b| {
            let x = b.param(g, "x")?;
            let v = g.value(x);
            let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * x).collect())?;
            let y = g.custom(&[x], out, Box::new(BrokenSquare))?;
            g.sum_all(y)
        },
        &mut store,
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(!report.passes(1e-4));
    assert!((report.worst() - 0.5).abs() < 1e-6);
}

#[test]
fn step_outside_range_rejected() {
    let mut store = ParameterStore::new();
    store.insert("x", Tensor::scalar(1.0)).unwrap();
    let r = grad_check(
        |g, b| b.param(g, "x"),
        &mut store,
        GradCheckOptions {
            h: 1e-2,
            ..Default::default()
        },
    );
    assert!(r.is_err());
}

proptest! {
    #[test]
    fn forward_is_deterministic(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, shape) in [
            ("a", vec![4, 3]), ("w", vec![3, 5]), ("wt", vec![5, 3]), ("row", vec![1, 5]),
            ("col", vec![4, 1]), ("table", vec![6, 3]), ("gw", vec![2, 6]),
        ] {
            store.insert(name, random(&shape, &mut rng)).unwrap();
        }
        let run = |store: &ParameterStore| {
            let mut g = Graph::new();
            let mut b = ParamBinder::new(store);
            let root = composite(&mut g, &mut b).unwrap();
            let grads = g.backward(root).unwrap();
            let a = b.var("a").unwrap();
            (g.value(root).item().to_bits(), grads.get(a).unwrap().clone())
        };
        prop_assert_eq!(run(&store), run(&store));
    }

    #[test]
    fn broadcast_gradient_sums_over_repeated_axis(rows in 1usize..6, cols in 1usize..6) {
        let mut g = Graph::new();
        let bias = g.leaf(Tensor::zeros(&[1, cols]), true).unwrap();
        let x = g.constant(Tensor::full(&[rows, cols], 2.0)).unwrap();
        let y = g.add(x, bias).unwrap();
        let s = g.sum_all(y).unwrap();
        let grads = g.backward(s).unwrap();
        prop_assert!(grads.get(bias).unwrap().data().iter().all(|&v| v == rows as f64));
    }
}
