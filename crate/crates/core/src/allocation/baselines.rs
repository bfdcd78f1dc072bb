//! Random and greedy reference allocators.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::NodeId;
use crate::registry::CapacityLedger;

use super::{AllocationResult, Choice, LtwView, Problem};

/// Resampling attempts per user before RSA gives up on the budget.
pub const RSA_RETRIES: u32 = 100;

fn admissible(view: &LtwView, ledger: &CapacityLedger, held: &[NodeId], occ: usize, k: usize) -> bool {
    match view.occurrences[occ].candidates[k].local {
        None => true,
        Some(n) => held.contains(&n) || ledger.remaining(n) > 0,
    }
}

fn commit(view: &LtwView, choice: &Choice, ledger: &CapacityLedger) -> Result<()> {
    for n in view.footprint(choice) {
        if !ledger.try_admit(n)? {
            return Err(Error::InvalidInput(format!("local cloud {n} over-committed")));
        }
    }
    Ok(())
}

/// Uniform choice among admissible candidates per occurrence, users in a
/// seeded random order. A plan breaking the user's budget is redrawn up to
/// [`RSA_RETRIES`] times; after that the last draw is kept and the result
/// flagged infeasible.
pub fn allocate_rsa(problem: &Problem, seed: u64) -> Result<AllocationResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ledger = problem.world.ledger();
    let mut order: Vec<usize> = (0..problem.views.len()).collect();
    order.shuffle(&mut rng);
    let mut choices = vec![Vec::new(); problem.views.len()];
    let mut feasible = true;
    let mut iterations = 0;
    for &u in &order {
        let view = &problem.views[u];
        let mut choice = Vec::new();
        let mut ok = false;
        for _ in 0..RSA_RETRIES {
            iterations += 1;
            choice.clear();
            let mut held: Vec<NodeId> = Vec::new();
            for (i, o) in view.occurrences.iter().enumerate() {
                let open: Vec<usize> =
                    (0..o.candidates.len()).filter(|&k| admissible(view, &ledger, &held, i, k)).collect();
                let k = *open.choose(&mut rng).ok_or(Error::NoRealizingService(o.function))?;
                if let Some(n) = o.candidates[k].local {
                    if !held.contains(&n) {
                        held.push(n);
                    }
                }
                choice.push(k);
            }
            if problem.budgets[u].admits(&view.raw(&choice)?) {
                ok = true;
                break;
            }
            // keep the stream moving between retries
            let _: u32 = rng.gen();
        }
        feasible &= ok;
        commit(view, &choice, &ledger)?;
        choices[u] = choice;
    }
    problem.finish("rsa", choices, feasible, iterations)
}

/// Per occurrence, the admissible candidate with the largest advertised
/// total normalized QoS (lowest service id on ties). Like RSA it ignores
/// where the user will be. Users go in id order.
pub fn allocate_greedy(problem: &Problem) -> Result<AllocationResult> {
    let ledger = problem.world.ledger();
    let mut order: Vec<usize> = (0..problem.views.len()).collect();
    order.sort_by_key(|&u| (problem.views[u].user(), u));
    let mut choices = vec![Vec::new(); problem.views.len()];
    let mut feasible = true;
    for &u in &order {
        let view = &problem.views[u];
        let mut held: Vec<NodeId> = Vec::new();
        let mut choice = Vec::with_capacity(view.len());
        for (i, o) in view.occurrences.iter().enumerate() {
            let mut best: Option<usize> = None;
            for k in 0..o.candidates.len() {
                if !admissible(view, &ledger, &held, i, k) {
                    continue;
                }
                // candidates are in id order, so strict improvement keeps the lowest id
                if best.is_none_or(|b| o.candidates[k].nominal_total > o.candidates[b].nominal_total) {
                    best = Some(k);
                }
            }
            let k = best.ok_or(Error::NoFeasibleCandidates { expansions: 0 })?;
            if let Some(n) = o.candidates[k].local {
                if !held.contains(&n) {
                    held.push(n);
                }
            }
            choice.push(k);
        }
        feasible &= problem.budgets[u].admits(&view.raw(&choice)?);
        commit(view, &choice, &ledger)?;
        choices[u] = choice;
    }
    problem.finish("greedy", choices, feasible, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::tests::ltw;
    use crate::allocation::{brute_force_optimal, BruteForceLimits};
    use crate::world::tests::small_world;

    #[test]
    fn greedy_takes_argmax_and_respects_capacity() {
        let w = small_world();
        let p = Problem::new(&w, &[ltw(0, &[12]), ltw(1, &[12])]).unwrap();
        let r = allocate_greedy(&p).unwrap();
        let v0 = &p.views[0];
        for (i, o) in v0.occurrences.iter().enumerate() {
            let top = o.candidates.iter().map(|c| c.nominal_total).fold(f64::MIN, f64::max);
            assert_eq!(o.candidates[r.choices[0][i]].nominal_total, top);
        }
        assert!(r.usage.get(&NodeId(0)).copied().unwrap_or(0) <= 1);
        // user 1 came second and found the local cloud full
        assert!(p.views[1].footprint(&r.choices[1]).is_empty());
        assert!(r.utility <= brute_force_optimal(&p, &BruteForceLimits::default()).unwrap().utility + 1e-12);
    }

    #[test]
    fn rsa_is_bounded_and_seeded() {
        let w = small_world();
        let p = Problem::new(&w, &[ltw(0, &[12, 3]), ltw(1, &[0])]).unwrap();
        let a = allocate_rsa(&p, 9).unwrap();
        assert_eq!(a, allocate_rsa(&p, 9).unwrap());
        for s in 0..30 {
            let r = allocate_rsa(&p, s).unwrap();
            assert!((0.0..=1.0).contains(&r.utility));
            assert!(r.feasible);
        }
    }
}
