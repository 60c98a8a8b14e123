//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};

/// Central difference formula used for the numeric derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, error O(h^2).
    Second,
    /// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, error O(h^4).
    Fourth,
}

/// Options for [`gradient_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub stencil: Stencil,
    /// Number of coordinates to probe; `None` probes all of them.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            stencil: Stencil::Second,
            samples: None,
            seed: 0,
        }
    }
}

/// Report of a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub probed: usize,
}

/// Compares the reverse-mode gradient of `loss_fn` with
/// a central difference of step `eps` on sampled coordinates and returns the
/// largest `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check<F>(
    store: &mut ParamStore<f64>,
    loss_fn: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        let v = g.value(loss);
        if v.len() != 1 {
            return Err(NumError::NonScalarLoss(v.shape().to_vec()));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(NumError::NonFinite("gradient check loss".into()));
        }
        Ok(v)
    };

    store.zero_grads();
    {
        let mut g = Graph::new();
        let loss = loss_fn(&mut g, store)?;
        g.backward(loss)?.accumulate_into(store);
    }

    let coords: Vec<(usize, usize)> = store
        .iter()
        .enumerate()
        .flat_map(|(p, param)| (0..param.value.len()).map(move |i| (p, i)))
        .collect();
    let chosen: Vec<(usize, usize)> = match opts.samples {
        Some(k) if k < coords.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, coords.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| coords[i]).collect()
        }
        _ => coords,
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_pair: (0.0, 0.0),
        probed: chosen.len(),
    };
    for (p, i) in chosen {
        let id = ParamId(p);
        let analytic = store.get(id).grad.data()[i];
        let orig = store.get(id).value.data()[i];
        let mut at = |offset: f64| -> Result<f64> {
            store.get_mut(id).value.data_mut()[i] = orig + offset;
            eval(store)
        };
        let h = opts.eps;
        let numeric = match opts.stencil {
            Stencil::Second => (at(h)? - at(-h)?) / (2.0 * h),
            Stencil::Fourth => (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h),
        };
        store.get_mut(id).value.data_mut()[i] = orig;
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let rel = (analytic - numeric).abs() / denom;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = Some(format!("{}[{}]", store.get(id).name, i));
            report.worst_pair = (analytic, numeric);
        }
    }
    store.zero_grads();
    Ok(report)
}
