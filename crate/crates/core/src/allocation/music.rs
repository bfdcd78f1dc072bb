//! Simulated-annealing allocation for single users and for groups.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{center_of_mobility, center_of_group_mobility, NodeId, Point, UserGroup, GroupId};
use crate::registry::CapacityLedger;

use super::{find_service, AllocationResult, Choice, Problem, SearchParams};

/// How a worse proposal may replace the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptanceRule {
    /// Accept with probability `exp(delta / T_j)`, `T_j = t0 * alpha^j`.
    #[default]
    Metropolis,
    /// Accept when `exp(max_iter) >= U[0, 1]`, which always holds.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingParams {
    pub max_iter: u32,
    pub search: SearchParams,
    pub t0: f64,
    pub alpha: f64,
    pub rule: AcceptanceRule,
    pub seed: u64,
}

impl AnnealingParams {
    pub fn for_cell_size(cell_size: f64) -> Self {
        AnnealingParams {
            max_iter: 20,
            search: SearchParams::for_cell_size(cell_size),
            t0: 0.1,
            alpha: 0.9,
            rule: AcceptanceRule::Metropolis,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if !(self.t0 > 0.0 && self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput("cooling needs t0 > 0 and 0 < alpha < 1".into()));
        }
        Ok(())
    }

    fn temperature(&self, j: u32) -> f64 {
        self.t0 * self.alpha.powi(j as i32)
    }
}

fn accept(params: &AnnealingParams, delta: f64, j: u32, rng: &mut ChaCha8Rng) -> bool {
    if delta > 0.0 {
        return true;
    }
    let u: f64 = rng.gen();
    match params.rule {
        AcceptanceRule::Metropolis => (delta / params.temperature(j)).exp() >= u,
        AcceptanceRule::Literal => (params.max_iter as f64).exp() >= u,
    }
}

/// Runs MuSIC. With `single_user` every user is annealed on its own around
/// its center of mobility; otherwise each group of `problem` is annealed
/// jointly around the group's center, maximizing the group's utility. Units
/// are processed in a seeded random order and each commits its local-cloud
/// usage before the next starts. The best plan seen is returned.
pub fn music(problem: &Problem, single_user: bool, params: &AnnealingParams) -> Result<AllocationResult> {
    params.validate()?;
    let world = problem.world;
    let units: Vec<Vec<usize>> = if single_user {
        (0..problem.views.len()).map(|i| vec![i]).collect()
    } else if problem.groups.is_empty() {
        return Err(Error::InvalidGroup("group allocation needs groups".into()));
    } else {
        problem.groups.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.shuffle(&mut rng);

    let ledger = world.ledger();
    let mut choices: Vec<Option<Choice>> = vec![None; problem.views.len()];
    let mut feasible = true;
    let mut iterations = 0;
    for &u in &order {
        let members = &units[u];
        let center = unit_center(problem, members)?;
        let propose = |rng: &mut ChaCha8Rng| propose(problem, members, center, &ledger, params, rng);
        let score = |c: &[Choice]| -> Result<f64> {
            let mut s = 0.0;
            for (&m, ch) in members.iter().zip(c) {
                s += problem.views[m].utility(ch)?;
            }
            Ok(s / members.len() as f64)
        };
        let best = match propose(&mut rng) {
            Err(Error::NoFeasibleCandidates { .. }) => None,
            Err(e) => return Err(e),
            Ok(init) => {
                let mut u0 = score(&init)?;
                let (mut best, mut best_u) = (init, u0);
                for j in 0..params.max_iter {
                    iterations += 1;
                    let cand = match propose(&mut rng) {
                        Err(Error::NoFeasibleCandidates { .. }) => continue,
                        other => other?,
                    };
                    let u1 = score(&cand)?;
                    if accept(params, u1 - u0, j, &mut rng) {
                        u0 = u1;
                    }
                    if u1 > best_u {
                        best_u = u1;
                        best = cand;
                    }
                }
                Some(best)
            }
        };
        let picked = match best {
            Some(b) => b,
            None => {
                feasible = false;
                members.iter().map(|&m| fallback_choice(problem, m)).collect()
            }
        };
        for (&m, ch) in members.iter().zip(picked) {
            for n in problem.views[m].footprint(&ch) {
                if !ledger.try_admit(n)? {
                    return Err(Error::InvalidInput(format!("local cloud {n} over-committed")));
                }
            }
            choices[m] = Some(ch);
        }
    }
    let choices = choices.into_iter().map(|c| c.expect("every user belongs to a unit")).collect();
    let name = if single_user { "music" } else { "gmusic" };
    problem.finish(name, choices, feasible, iterations)
}

fn unit_center(problem: &Problem, members: &[usize]) -> Result<Point> {
    let world = problem.world;
    if let [m] = members {
        let user = world.user(problem.views[*m].user())?;
        return Ok(world.map.center(center_of_mobility(&user.trajectory, &world.map)?));
    }
    let group = UserGroup { id: GroupId(0), members: members.iter().map(|&m| problem.views[m].user()).collect() };
    Ok(center_of_group_mobility(&group, &world.users, &world.map)?.0)
}

/// One joint proposal for a unit. Members are searched in turn, each seeing
/// the slots its predecessors have tentatively taken.
fn propose(
    problem: &Problem,
    members: &[usize],
    center: Point,
    ledger: &CapacityLedger,
    params: &AnnealingParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Choice>> {
    let mut held: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut out = Vec::with_capacity(members.len());
    for &m in members {
        let admissible = |n: NodeId| ledger.remaining(n) > held.get(&n).copied().unwrap_or(0);
        let view = &problem.views[m];
        let c = find_service(view, problem.world, center, &problem.budgets[m], &admissible, &params.search, rng)?;
        for n in view.footprint(&c) {
            *held.entry(n).or_insert(0) += 1;
        }
        out.push(c);
    }
    Ok(out)
}

/// Best-total device or public candidate per occurrence, used when no
/// feasible plan could be found.
pub(super) fn fallback_choice(problem: &Problem, m: usize) -> Choice {
    problem.views[m]
        .occurrences
        .iter()
        .map(|o| {
            let mut best = None;
            for (k, c) in o.candidates.iter().enumerate() {
                if c.local.is_none() && best.is_none_or(|b: usize| c.total > o.candidates[b].total) {
                    best = Some(k);
                }
            }
            best.unwrap_or(0)
        })
        .collect()
}
