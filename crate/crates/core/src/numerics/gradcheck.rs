//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Entries probed per parameter tensor (all entries if the tensor is smaller).
    pub samples_per_param: usize,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// numerically zero are compared absolutely.
    pub denom_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_param: 12,
            denom_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub probed: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward` against central differences of `loss_fn` for a
/// sample of entries of every parameter in `store` (or only `only`).
pub fn check_gradients<F>(
    store: &mut ParamStore,
    only: Option<&[ParamId]>,
    cfg: GradCheckConfig,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, store)?;
    let grads = g.backward(loss)?;
    drop(g);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, store)?;
        g.value(l).item()
    };

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.iter().map(|(id, _)| id).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = Vec::new();
    for id in ids {
        let n = store.value(id).len();
        let picks: Vec<usize> = if n <= cfg.samples_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, cfg.samples_per_param).into_vec()
        };
        let analytic = grads.get(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut worst = 0.0f64;
        let mut max_abs = 0.0f64;
        for &k in &picks {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + cfg.step;
            let up = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - cfg.step;
            let down = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            worst = worst.max(relative_error(analytic[k], numeric, cfg.denom_floor));
            max_abs = max_abs.max(analytic[k].abs());
        }
        report.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: worst,
            max_abs_analytic: max_abs,
            probed: picks.len(),
        });
    }
    Ok(GradCheckReport { params: report })
}
