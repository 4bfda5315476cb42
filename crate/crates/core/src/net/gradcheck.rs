use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor and flat index of the worst coordinate.
    pub worst: (String, usize),
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
    pub tensors_covered: usize,
}

/// Compares `analytic` against central differences of `loss` on a random
/// subset of at least `min_coords` coordinates, with at least one per tensor.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check(
    params: &ParamStore<f64>,
    analytic: &ParamStore<f64>,
    loss: impl Fn(&ParamStore<f64>) -> Result<f64>,
    eps: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if analytic.names() != params.names() {
        return Err(Error::Shape("gradient layout differs from parameter layout".into()));
    }
    if let Some(name) = analytic.first_non_finite() {
        return Err(Error::Numeric(format!("non-finite analytic gradient for {name}")));
    }

    // Flat coordinate space over all tensors.
    let offsets: Vec<usize> = params
        .tensors()
        .iter()
        .scan(0, |acc, m| {
            let o = *acc;
            *acc += m.len();
            Some(o)
        })
        .collect();
    let total = params.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = params
        .tensors()
        .iter()
        .zip(&offsets)
        .filter(|(m, _)| !m.is_empty())
        .map(|(m, &o)| o + rng.random_range(0..m.len()))
        .collect();
    if chosen.len() < min_coords {
        let extra = index::sample(&mut rng, total, min_coords.min(total));
        for c in extra {
            if chosen.len() >= min_coords {
                break;
            }
            if !chosen.contains(&c) {
                chosen.push(c);
            }
        }
    }
    chosen.sort_unstable();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (String::new(), 0),
        worst_values: (0.0, 0.0),
        coords_checked: chosen.len(),
        tensors_covered: 0,
    };
    let mut last_tensor = usize::MAX;
    for flat in chosen {
        let t = offsets.partition_point(|&o| o <= flat) - 1;
        let i = flat - offsets[t];
        if t != last_tensor {
            report.tensors_covered += 1;
            last_tensor = t;
        }
        let name = &params.names()[t];
        let orig = params.tensors()[t].as_slice()[i];
        probe.tensors_mut()[t].as_mut_slice()[i] = orig + eps;
        let up = loss(&probe)?;
        probe.tensors_mut()[t].as_mut_slice()[i] = orig - eps;
        let down = loss(&probe)?;
        probe.tensors_mut()[t].as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        if !numeric.is_finite() {
            return Err(Error::Numeric(format!("non-finite numeric gradient for {name}[{i}]")));
        }
        let a = analytic.tensors()[t].as_slice()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = (name.clone(), i);
            report.worst_values = (a, numeric);
        }
    }
    Ok(report)
}
