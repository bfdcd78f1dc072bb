//! Expanding-radius candidate search with roulette-wheel selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeId, Point, ServiceId};
use crate::world::World;

use super::{Choice, ConstraintVector, LtwView};

/// Search radius schedule, in meters: radius `i` is `d_th + i * d_r` for
/// `i < it`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub d_th: f64,
    pub d_r: f64,
    pub it: u32,
}

impl SearchParams {
    /// Two cells initial radius, one cell per step, 15 steps.
    pub fn for_cell_size(cell_size: f64) -> Self {
        SearchParams { d_th: 2.0 * cell_size, d_r: cell_size, it: 15 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_th > 0.0 && self.d_r > 0.0 && self.it >= 1) {
            return Err(Error::InvalidInput("search needs d_th > 0, d_r > 0 and it >= 1".into()));
        }
        Ok(())
    }
}

/// Picks an index from `weights`, which must be sorted ascending, by walking
/// the cumulative proportions with `a` in `[0, 1)`: index `j` owns
/// `[cum_{j-1}, cum_j)`. All-zero weights fall back to a uniform pick.
pub fn roulette_pick(weights: &[f64], a: f64) -> usize {
    let n = weights.len();
    assert!(n > 0, "roulette over an empty set");
    let sum: f64 = weights.iter().sum();
    if sum.is_nan() || sum <= 0.0 {
        return ((a * n as f64) as usize).min(n - 1);
    }
    let target = a * sum;
    let mut cum = 0.0;
    for (j, w) in weights.iter().enumerate() {
        cum += w;
        if target < cum {
            return j;
        }
    }
    n - 1
}

/// Builds one plan for `view` from services near `center`.
///
/// Local-cloud services qualify when their cloud is within the current
/// radius and `admissible`; device and public services always qualify. At
/// each radius the candidate sets are first screened against `budget` using
/// per-occurrence minima, then one service per occurrence is drawn by
/// roulette over the total normalized QoS, and the assembled plan is checked
/// against `budget`. Failures widen the radius.
pub fn find_service<R: Rng + ?Sized>(
    view: &LtwView,
    world: &World,
    center: Point,
    budget: &ConstraintVector,
    admissible: &dyn Fn(NodeId) -> bool,
    params: &SearchParams,
    rng: &mut R,
) -> Result<Choice> {
    params.validate()?;
    for i in 0..params.it {
        let d = params.d_th + i as f64 * params.d_r;
        let nearby: Vec<ServiceId> = world.registry().range_query(center, d, None, false);
        let allowed: Vec<Vec<usize>> = view
            .occurrences
            .iter()
            .map(|o| {
                o.candidates
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| match c.local {
                        None => true,
                        Some(n) => nearby.binary_search(&c.service).is_ok() && admissible(n),
                    })
                    .map(|(k, _)| k)
                    .collect::<Vec<usize>>()
            })
            .collect();
        if allowed.iter().any(Vec::is_empty) {
            continue;
        }
        if !budget.admits(&view.optimistic(&allowed)?) {
            continue;
        }
        let choice: Choice = view
            .occurrences
            .iter()
            .zip(&allowed)
            .map(|(o, idx)| {
                let mut sorted = idx.clone();
                sorted.sort_by(|&a, &b| o.candidates[a].total.total_cmp(&o.candidates[b].total).then(a.cmp(&b)));
                let weights: Vec<f64> = sorted.iter().map(|&k| o.candidates[k].total).collect();
                sorted[roulette_pick(&weights, rng.gen::<f64>())]
            })
            .collect();
        if budget.admits(&view.raw(&choice)?) {
            return Ok(choice);
        }
    }
    Err(Error::NoFeasibleCandidates { expansions: params.it })
}
