//! Central finite-difference verification of graph gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::params::{ParamBinder, ParameterStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Coordinates checked per parameter; smaller parameters are checked in full.
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            samples_per_param: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub worst_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.worst_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.params.iter().all(|p| p.worst_rel_error <= tol)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<F>(f: &mut F, store: &ParameterStore) -> Result<f64>
where
    F: for<'a> FnMut(&mut Graph, &mut ParamBinder<'a>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let mut binder = ParamBinder::new(store);
    let root = f(&mut graph, &mut binder)?;
    Ok(graph.value(root).item())
}

/// Compares backward-pass gradients of the scalar map `f` against central
/// differences for every parameter in `store`.
///
/// `store` is perturbed in place and restored coordinate by coordinate.
pub fn grad_check<F>(mut f: F, store: &mut ParameterStore, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'a> FnMut(&mut Graph, &mut ParamBinder<'a>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.h) {
        return Err(TensorError::InvalidArgument(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            opts.h
        )));
    }
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut graph = Graph::new();
        let mut binder = ParamBinder::new(store);
        let root = f(&mut graph, &mut binder)?;
        let grads = graph.backward(root)?;
        store
            .names()
            .map(|name| {
                let g = match binder.var(name) {
                    Some(v) => grads.get_or_zeros(&graph, v).into_data(),
                    None => vec![0.0; store.value(name).map(|t| t.len()).unwrap_or(0)],
                };
                (name.to_string(), g)
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::with_capacity(analytic.len());
    for (name, grad) in analytic {
        let len = grad.len();
        let coords: Vec<usize> = if len <= opts.samples_per_param {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = store.value(&name)?.data()[i];
            let mut at = |store: &mut ParameterStore, x: f64| -> Result<f64> {
                store.get_mut(&name)?.value.data_mut()[i] = x;
                let r = eval_loss(&mut f, store);
                match r {
                    Ok(v) if v.is_finite() => Ok(v),
                    Ok(_) | Err(TensorError::NonFinite { .. }) => Err(TensorError::NonFiniteAtPerturbation {
                        name: name.clone(),
                        index: i,
                    }),
                    Err(e) => Err(e),
                }
            };
            let plus = at(store, orig + opts.h);
            let minus = at(store, orig - opts.h);
            store.get_mut(&name)?.value.data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.h);
            worst = worst.max(relative_error(grad[i], numeric));
        }
        params.push(ParamCheck {
            name,
            checked: coords.len(),
            worst_rel_error: worst,
        });
    }
    Ok(GradCheckReport { params })
}
