//! Exact optimum by enumeration.
//!
//! Users interact only through local-cloud capacity (budgets are per user),
//! so the joint plan space factorizes: each user's plans are enumerated on
//! their own and reduced to the best plan per footprint (set of local clouds
//! used). A branch-and-bound search then picks one footprint per user under
//! the capacity limits, maximizing the weighted sum of utilities.

use std::collections::BTreeMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NodeId;

use super::{AllocationResult, Choice, LtwView, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BruteForceLimits {
    /// Largest total number of per-user plans enumerated.
    pub plan_cap: u64,
    /// Largest number of search nodes in the footprint search.
    pub node_cap: u64,
    /// Stop once the best plan found is within this fraction of the bound;
    /// 0 searches to proven optimality.
    pub opt_gap: f64,
}

impl Default for BruteForceLimits {
    fn default() -> Self {
        BruteForceLimits { plan_cap: 1_000_000, node_cap: 20_000_000, opt_gap: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct Option_ {
    mask: u128,
    utility: f64,
    choice: Choice,
}

fn enumerate_user(view: &LtwView, problem: &Problem, u: usize, bit: &BTreeMap<NodeId, u32>, dead: u128) -> Result<Vec<Option_>> {
    let n = view.len();
    let sizes: Vec<usize> = view.occurrences.iter().map(|o| o.candidates.len()).collect();
    let masks: Vec<Vec<u128>> = view
        .occurrences
        .iter()
        .map(|o| o.candidates.iter().map(|c| c.local.map_or(0, |n| 1u128 << bit[&n])).collect())
        .collect();
    let mut best: BTreeMap<u128, (f64, Choice)> = BTreeMap::new();
    let mut choice = vec![0usize; n];
    loop {
        let mask = choice.iter().enumerate().fold(0u128, |m, (i, &k)| m | masks[i][k]);
        if mask & dead == 0 {
            let raw = view.raw(&choice)?;
            if problem.budgets[u].admits(&raw) {
                let util = crate::workflow::normalize_qos(&raw, &view.extrema)?.worst();
                match best.get_mut(&mask) {
                    Some(slot) if slot.0 >= util => {}
                    Some(slot) => *slot = (util, choice.clone()),
                    None => {
                        best.insert(mask, (util, choice.clone()));
                    }
                }
            }
        }
        let mut i = 0;
        while i < n {
            choice[i] += 1;
            if choice[i] < sizes[i] {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let mut opts: Vec<Option_> =
        best.into_iter().map(|(mask, (utility, choice))| Option_ { mask, utility, choice }).collect();
    opts.sort_by(|a, b| {
        b.utility
            .total_cmp(&a.utility)
            .then(a.mask.count_ones().cmp(&b.mask.count_ones()))
            .then(a.mask.cmp(&b.mask))
    });
    // a footprint is useless if a subset of it already scores at least as well
    let mut kept: Vec<Option_> = Vec::new();
    for o in opts {
        if !kept.iter().any(|k| k.mask & !o.mask == 0) {
            kept.push(o);
        }
    }
    Ok(kept)
}

struct Search<'a> {
    options: &'a [Vec<Option_>],
    order: &'a [usize],
    weights: &'a [f64],
    /// Sum of the remaining users' best weighted utilities, per depth.
    suffix: Vec<f64>,
    /// Capacity prices and, per depth, the remaining users' best priced
    /// values; together they give a second, tighter bound.
    lambda: Vec<f64>,
    priced_suffix: Vec<f64>,
    /// Per user, option indices with their priced values, best first.
    priced_order: Vec<Vec<(usize, f64)>>,
    caps: Vec<u32>,
    used: Vec<u32>,
    pick: Vec<usize>,
    best: f64,
    best_pick: Option<Vec<usize>>,
    nodes: u64,
    node_cap: u64,
    opt_gap: f64,
}

fn mask_bits(mask: u128) -> impl Iterator<Item = usize> {
    let mut m = mask;
    std::iter::from_fn(move || {
        (m != 0).then(|| {
            let b = m.trailing_zeros() as usize;
            m &= m - 1;
            b
        })
    })
}

fn priced(lambda: &[f64], mask: u128) -> f64 {
    mask_bits(mask).map(|b| lambda[b]).sum()
}

impl Search<'_> {
    fn fits(&self, mask: u128) -> bool {
        mask_bits(mask).all(|b| self.used[b] < self.caps[b])
    }

    fn apply(&mut self, mask: u128, delta: i32) {
        for b in mask_bits(mask) {
            self.used[b] = (self.used[b] as i32 + delta) as u32;
        }
    }

    fn tolerance(&self) -> f64 {
        (self.opt_gap * self.best.abs()).max(1e-12)
    }

    fn bound(&self, depth: usize, value: f64) -> f64 {
        let slack: f64 =
            self.lambda.iter().zip(self.caps.iter().zip(&self.used)).map(|(l, (c, u))| l * (c - u) as f64).sum();
        let full = self.used.iter().zip(&self.caps).enumerate().filter(|(_, (u, c))| u >= c).fold(0u128, |m, (b, _)| m | (1u128 << b));
        if full == 0 {
            return value + (self.suffix[depth]).min(self.priced_suffix[depth] + slack);
        }
        // Options touching a full cloud are out for everyone still to place.
        let (mut plain, mut priced) = (0.0, 0.0);
        for &u in &self.order[depth..] {
            let opts = &self.options[u];
            match opts.iter().find(|o| o.mask & full == 0) {
                Some(o) => plain += self.weights[u] * o.utility,
                None => return f64::NEG_INFINITY,
            }
            priced += self.priced_order[u].iter().find(|(k, _)| opts[*k].mask & full == 0).map_or(0.0, |x| x.1);
        }
        value + plain.min(priced + slack)
    }

    fn dfs(&mut self, depth: usize, value: f64) -> Result<()> {
        self.nodes += 1;
        if self.nodes > self.node_cap {
            return Err(Error::TooLargeForEnumeration { needed: self.nodes as u128, cap: self.node_cap });
        }
        if depth == self.order.len() {
            if value > self.best || self.best_pick.is_none() {
                self.best = value;
                self.best_pick = Some(self.pick.clone());
            }
            return Ok(());
        }
        if self.best_pick.is_some() && self.bound(depth, value) <= self.best + self.tolerance() {
            return Ok(());
        }
        let u = self.order[depth];
        let w = self.weights[u];
        // most promising under the capacity prices first
        let mut ks: Vec<usize> = (0..self.options[u].len()).collect();
        let score = |k: usize| w * self.options[u][k].utility - priced(&self.lambda, self.options[u][k].mask);
        ks.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
        for k in ks {
            let (mask, util) = (self.options[u][k].mask, self.options[u][k].utility);
            if !self.fits(mask) {
                continue;
            }
            if self.best_pick.is_some() && value + w * util + self.suffix[depth + 1] <= self.best + self.tolerance() {
                continue;
            }
            self.apply(mask, 1);
            self.pick[u] = k;
            let r = self.dfs(depth + 1, value + w * util);
            self.apply(mask, -1);
            r?;
        }
        Ok(())
    }
}

/// Feasible completion taking, user by user, the best option that still fits.
fn greedy_fill(options: &[Vec<Option_>], order: &[usize], weights: &[f64], caps: &[u32]) -> Option<(f64, Vec<usize>)> {
    let mut used = vec![0u32; caps.len()];
    let mut pick = vec![0; options.len()];
    let mut value = 0.0;
    for &u in order {
        let k = options[u].iter().position(|o| mask_bits(o.mask).all(|b| used[b] < caps[b]))?;
        for b in mask_bits(options[u][k].mask) {
            used[b] += 1;
        }
        pick[u] = k;
        value += weights[u] * options[u][k].utility;
    }
    Some((value, pick))
}

/// Capacity prices minimizing the Lagrangian bound, by projected
/// subgradient descent with Polyak steps towards `target`.
fn capacity_prices(options: &[Vec<Option_>], weights: &[f64], caps: &[u32], target: f64) -> Vec<f64> {
    let n = caps.len();
    let mut lambda = vec![0.0; n];
    let mut best = (f64::INFINITY, lambda.clone());
    let mut theta = 1.0;
    let mut stalled = 0;
    for _ in 0..300 {
        let mut usage = vec![0.0; n];
        let mut ub: f64 = lambda.iter().zip(caps).map(|(l, c)| l * *c as f64).sum();
        for (u, opts) in options.iter().enumerate() {
            let (v, mask) = opts
                .iter()
                .map(|o| (weights[u] * o.utility - priced(&lambda, o.mask), o.mask))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .expect("options are non-empty");
            ub += v;
            for b in mask_bits(mask) {
                usage[b] += 1.0;
            }
        }
        if ub < best.0 - 1e-12 {
            best = (ub, lambda.clone());
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 10 {
                theta /= 2.0;
                stalled = 0;
            }
        }
        let g: Vec<f64> = caps.iter().zip(&usage).map(|(c, x)| *c as f64 - x).collect();
        let norm: f64 = g.iter().map(|x| x * x).sum();
        if norm == 0.0 || ub - target <= 1e-12 || theta < 1e-6 {
            break;
        }
        let step = theta * (ub - target) / norm;
        for (l, gi) in lambda.iter_mut().zip(&g) {
            *l = (*l - step * gi).max(0.0);
        }
    }
    best.1
}

/// Exact maximizer of the problem's objective under per-user budgets and
/// local-cloud capacities.
pub fn brute_force_optimal(problem: &Problem, limits: &BruteForceLimits) -> Result<AllocationResult> {
    let world = problem.world;
    let locals: Vec<NodeId> = world.local_clouds().map(|c| c.id).collect();
    if locals.len() > 128 {
        return Err(Error::InvalidInput("exhaustive search supports at most 128 local clouds".into()));
    }
    let needed: u128 = problem.views.iter().map(LtwView::plan_count).fold(0u128, u128::saturating_add);
    if needed > limits.plan_cap as u128 {
        return Err(Error::TooLargeForEnumeration { needed, cap: limits.plan_cap });
    }
    let bit: BTreeMap<NodeId, u32> = locals.iter().enumerate().map(|(i, n)| (*n, i as u32)).collect();
    let ledger = world.ledger();
    let caps: Vec<u32> = locals.iter().map(|n| ledger.capacity(*n).unwrap_or(0)).collect();
    let dead = caps.iter().enumerate().filter(|(_, c)| **c == 0).fold(0u128, |m, (i, _)| m | (1u128 << i));

    let enumerate = |u: usize| enumerate_user(&problem.views[u], problem, u, &bit, dead);
    #[cfg(feature = "parallel")]
    let options: Vec<Vec<Option_>> =
        (0..problem.views.len()).into_par_iter().map(enumerate).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let options: Vec<Vec<Option_>> = (0..problem.views.len()).map(enumerate).collect::<Result<_>>()?;

    if options.iter().any(Vec::is_empty) {
        let choices = (0..problem.views.len())
            .map(|u| match options[u].first() {
                Some(o) => o.choice.clone(),
                None => super::music::fallback_choice(problem, u),
            })
            .collect();
        return problem.finish("bruteforce", choices, false, 0);
    }

    let weights = problem.weights();
    // users with the most to lose from contention first
    let mut order: Vec<usize> = (0..options.len()).collect();
    let regret = |u: usize| {
        let free = options[u].iter().find(|o| o.mask == 0).map_or(0.0, |o| o.utility);
        weights[u] * (options[u][0].utility - free)
    };
    order.sort_by(|&a, &b| regret(b).total_cmp(&regret(a)).then(a.cmp(&b)));
    let mut suffix = vec![0.0; order.len() + 1];
    for d in (0..order.len()).rev() {
        let u = order[d];
        suffix[d] = suffix[d + 1] + weights[u] * options[u][0].utility;
    }
    let incumbent = greedy_fill(&options, &order, &weights, &caps);
    let lambda = capacity_prices(&options, &weights, &caps, incumbent.as_ref().map_or(0.0, |i| i.0));
    let mut priced_suffix = vec![0.0; order.len() + 1];
    for d in (0..order.len()).rev() {
        let u = order[d];
        let top = options[u]
            .iter()
            .map(|o| weights[u] * o.utility - priced(&lambda, o.mask))
            .fold(f64::NEG_INFINITY, f64::max);
        priced_suffix[d] = priced_suffix[d + 1] + top;
    }
    let priced_order: Vec<Vec<(usize, f64)>> = options
        .iter()
        .enumerate()
        .map(|(u, opts)| {
            let mut v: Vec<(usize, f64)> =
                opts.iter().enumerate().map(|(k, o)| (k, weights[u] * o.utility - priced(&lambda, o.mask))).collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            v
        })
        .collect();
    let (best, best_pick) = match incumbent {
        Some((v, p)) => (v, Some(p)),
        None => (f64::NEG_INFINITY, None),
    };
    let mut search = Search {
        options: &options,
        order: &order,
        weights: &weights,
        suffix,
        lambda,
        priced_suffix,
        priced_order,
        used: vec![0; caps.len()],
        caps,
        pick: vec![0; options.len()],
        best,
        best_pick,
        nodes: 0,
        node_cap: limits.node_cap,
        opt_gap: limits.opt_gap,
    };
    search.dfs(0, 0.0)?;
    let nodes = search.nodes;
    let Some(pick) = search.best_pick else {
        let choices = (0..problem.views.len()).map(|u| super::music::fallback_choice(problem, u)).collect();
        return problem.finish("bruteforce", choices, false, 0);
    };
    let choices = pick.iter().enumerate().map(|(u, &k)| options[u][k].choice.clone()).collect();
    problem.finish("bruteforce", choices, true, nodes.min(u32::MAX as u64) as u32)
}
