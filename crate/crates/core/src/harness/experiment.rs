//! Experiment orchestration and metrics.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{
    allocate_greedy, allocate_rsa, brute_force_optimal, music, AllocationResult, AnnealingParams, BruteForceLimits,
    Choice, ConstraintVector, LtwView, Problem, SearchParams,
};
use crate::error::{Error, Result};
use crate::mobility::{inject_uncertainty, UncertaintySpec};
use crate::workflow::{Dimension, LocationTimeWorkflow, QoS};
use crate::world::World;

use super::instance::{build_instance, derive_seed, Instance, Stream};
use super::scenario::{AlgorithmName, Scenario};

/// One output line: one algorithm on one repetition at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: String,
    pub algorithm: String,
    pub users: u32,
    pub groups: u32,
    pub uncertainty_pct: f64,
    pub repetition: u32,
    pub utility: f64,
    /// Empty when the optimum could not be enumerated.
    pub throughput_pct: Option<f64>,
    pub mean_delay_ms: f64,
    pub mean_power_mj: f64,
    pub mean_price_usd: f64,
    pub gain_price_pct: Option<f64>,
    pub gain_power_pct: Option<f64>,
    pub gain_delay_pct: Option<f64>,
    /// Set on gain rows: the dimension held at the public-only level.
    pub fixed_dimension: Option<Dimension>,
    /// Master seed.
    pub seed: u64,
    /// False when some user's plan broke a budget or capacity, or no
    /// feasible plan was found and a fallback was used.
    #[serde(skip)]
    pub feasible: bool,
}

/// Heuristic utility as a percentage of the optimum.
pub fn compute_throughput(heuristic: f64, optimal: f64) -> Result<f64> {
    if optimal == 0.0 {
        return Err(Error::UndefinedThroughput);
    }
    Ok(heuristic / optimal * 100.0)
}

/// `(1 - two_tier / public_only) * 100`.
pub fn two_tier_gain(two_tier: f64, public_only: f64) -> Result<f64> {
    if public_only == 0.0 {
        return Err(Error::UndefinedGain);
    }
    Ok((1.0 - two_tier / public_only) * 100.0)
}

/// Gains in the free dimensions, from per-user mean raw QoS. The fixed
/// dimension is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gains {
    pub price: Option<f64>,
    pub power: Option<f64>,
    pub delay: Option<f64>,
}

pub fn compute_two_tier_gain(two_tier: &QoS, public_only: &QoS, held_fixed: Dimension) -> Result<Gains> {
    let mut g = Gains::default();
    for d in Dimension::ALL {
        if d == held_fixed {
            continue;
        }
        let v = Some(two_tier_gain(two_tier.get(d), public_only.get(d))?);
        match d {
            Dimension::Price => g.price = v,
            Dimension::Power => g.power = v,
            Dimension::Delay => g.delay = v,
        }
    }
    Ok(g)
}

fn annealing(s: &Scenario, seed: u64) -> AnnealingParams {
    let a = &s.algorithm;
    let cell = s.grid.cell_size;
    AnnealingParams {
        max_iter: a.max_iter,
        search: SearchParams { d_th: a.d_th_cells * cell, d_r: a.d_r_cells * cell, it: a.it },
        t0: a.t0,
        alpha: a.alpha,
        rule: a.acceptance,
        seed,
    }
}

fn limits(s: &Scenario) -> BruteForceLimits {
    BruteForceLimits { plan_cap: s.algorithm.plan_cap, node_cap: s.algorithm.node_cap, opt_gap: s.algorithm.opt_gap }
}

/// Runs one allocator.
pub fn run_algorithm(s: &Scenario, alg: AlgorithmName, problem: &Problem, seed: u64) -> Result<AllocationResult> {
    match alg {
        AlgorithmName::Music => music(problem, true, &annealing(s, seed)),
        AlgorithmName::Gmusic => music(problem, false, &annealing(s, seed)),
        AlgorithmName::Rsa => allocate_rsa(problem, seed),
        AlgorithmName::Greedy => allocate_greedy(problem),
        AlgorithmName::Bruteforce => brute_force_optimal(problem, &limits(s)),
        AlgorithmName::All => Err(Error::InvalidInput("`all` is not a single allocator".into())),
    }
}

fn problem<'w>(
    world: &'w World,
    ltws: &[LocationTimeWorkflow],
    groups: &[Vec<usize>],
    budgets: Vec<ConstraintVector>,
) -> Result<Problem<'w>> {
    let p = Problem::new(world, ltws)?.with_budgets(budgets)?;
    if groups.is_empty() {
        Ok(p)
    } else {
        p.with_groups(groups.to_vec())
    }
}

/// Carries a plan made for the predicted LTW over to the one that actually
/// happened. Entries whose functions match keep their services; the others
/// fall back per leaf to the lowest-id public service, else a device
/// service, else the first candidate.
pub fn transfer_choice(predicted: &LtwView, choice: &Choice, actual: &LtwView) -> Result<Choice> {
    if predicted.ltw.entries.len() != actual.ltw.entries.len() {
        return Err(Error::IncompletePlan("predicted and actual workflows differ in length".into()));
    }
    let mut out = Vec::with_capacity(actual.len());
    for (e, entry) in actual.ltw.entries.iter().enumerate() {
        let same = predicted.ltw.entries[e].workflow.functions() == entry.workflow.functions();
        let (ps, as_) = (predicted.entry_start[e], actual.entry_start[e]);
        for l in 0..entry.workflow.leaf_count() {
            let o = &actual.occurrences[as_ + l];
            let kept = same
                .then(|| {
                    let s = predicted.occurrences[ps + l].candidates[choice[ps + l]].service;
                    o.candidates.binary_search_by_key(&s, |c| c.service).ok()
                })
                .flatten();
            let k = kept
                .or_else(|| o.candidates.iter().position(|c| c.cloud.is_some() && c.local.is_none()))
                .or_else(|| o.candidates.iter().position(|c| c.cloud.is_none()))
                .unwrap_or(0);
            out.push(k);
        }
    }
    Ok(out)
}

fn transfer(planned: &Problem, result: &AllocationResult, actual: &Problem) -> Result<AllocationResult> {
    let choices = planned
        .views
        .iter()
        .zip(&result.choices)
        .zip(&actual.views)
        .map(|((p, c), a)| transfer_choice(p, c, a))
        .collect::<Result<Vec<_>>>()?;
    actual.finish(&result.algorithm, choices, result.feasible, result.iterations)
}

/// The predicted workload with `pct` percent of entries mispredicted. Each
/// user's perturbation seed is the same at every level.
pub fn actual_workload(s: &Scenario, inst: &Instance, rep: u32, pct: f64) -> Result<Vec<LocationTimeWorkflow>> {
    if pct == 0.0 {
        return Ok(inst.ltws.clone());
    }
    let w = &s.workload;
    inst.ltws
        .iter()
        .map(|l| {
            let spec = UncertaintySpec {
                rate: pct / 100.0,
                mode: s.uncertainty.mode,
                seed: derive_seed(s.seed, rep, Stream::Uncertainty, l.user.0 as u64),
            };
            inject_uncertainty(l, &spec, &inst.world.map, &inst.templates, (w.size_kb_min, w.size_kb_max))
        })
        .collect()
}

struct Context<'a> {
    s: &'a Scenario,
    rep: u32,
    level: f64,
}

impl Context<'_> {
    /// Placeholder for an allocator that could not run: NaN metrics,
    /// flagged infeasible.
    fn unavailable(&self, alg: &str) -> MetricsRow {
        MetricsRow {
            scenario_id: self.s.id.clone(),
            algorithm: alg.to_string(),
            users: self.s.users.count,
            groups: self.s.groups.count,
            uncertainty_pct: self.level,
            repetition: self.rep,
            utility: f64::NAN,
            throughput_pct: None,
            mean_delay_ms: f64::NAN,
            mean_power_mj: f64::NAN,
            mean_price_usd: f64::NAN,
            gain_price_pct: None,
            gain_power_pct: None,
            gain_delay_pct: None,
            fixed_dimension: None,
            seed: self.s.seed,
            feasible: false,
        }
    }

    fn row(&self, alg: &str, r: &AllocationResult, throughput: Option<f64>) -> MetricsRow {
        let m = r.mean_raw();
        MetricsRow {
            scenario_id: self.s.id.clone(),
            algorithm: alg.to_string(),
            users: self.s.users.count,
            groups: self.s.groups.count,
            uncertainty_pct: self.level,
            repetition: self.rep,
            utility: r.utility,
            throughput_pct: throughput,
            mean_delay_ms: m.delay,
            mean_power_mj: m.power,
            mean_price_usd: m.price,
            gain_price_pct: None,
            gain_power_pct: None,
            gain_delay_pct: None,
            fixed_dimension: None,
            seed: self.s.seed,
            feasible: r.feasible,
        }
    }
}

/// All rows of repetition `rep`.
pub fn run_repetition(s: &Scenario, rep: u32) -> Result<Vec<MetricsRow>> {
    let inst = build_instance(s, rep)?;
    let world = if s.public_only { inst.world.public_only() } else { inst.world.clone() };
    let baseline_world = world.public_only();
    let n = inst.ltws.len();
    let budgets = vec![s.budgets; n];
    let planned = problem(&world, &inst.ltws, &inst.groups, budgets.clone())?;
    let algorithms = s.algorithms();
    let mut rows = Vec::new();
    for &level in &s.uncertainty.levels_pct {
        let ctx = Context { s, rep, level };
        let actual_ltws = actual_workload(s, &inst, rep, level)?;
        let actual = problem(&world, &actual_ltws, &inst.groups, budgets.clone())?;
        let optimum = match brute_force_optimal(&actual, &limits(s)) {
            Ok(r) => Some(r.utility),
            Err(Error::TooLargeForEnumeration { .. }) => None,
            Err(e) => return Err(e),
        };
        for (ai, &alg) in algorithms.iter().enumerate() {
            let seed = derive_seed(s.seed, rep, Stream::Algorithm, ai as u64);
            let result = match run_algorithm(s, alg, &planned, seed) {
                // under `all`, an instance too large to enumerate is reported, not fatal
                Err(Error::TooLargeForEnumeration { .. })
                    if alg == AlgorithmName::Bruteforce && s.algorithm.name == AlgorithmName::All =>
                {
                    rows.push(ctx.unavailable(alg.as_str()));
                    continue;
                }
                other => other?,
            };
            let evaluated = transfer(&planned, &result, &actual)?;
            let throughput = match optimum.map(|o| compute_throughput(evaluated.utility, o)) {
                Some(Ok(t)) => Some(t),
                None | Some(Err(Error::UndefinedThroughput)) => None,
                Some(Err(e)) => return Err(e),
            };
            rows.push(ctx.row(alg.as_str(), &evaluated, throughput));

            if !s.gain.enabled {
                continue;
            }
            let base_plan = problem(&baseline_world, &inst.ltws, &inst.groups, budgets.clone())?;
            let base = run_algorithm(s, alg, &base_plan, seed)?;
            let base_actual = problem(&baseline_world, &actual_ltws, &inst.groups, budgets.clone())?;
            let base_eval = transfer(&base_plan, &base, &base_actual)?;
            for &fixed in &s.gain.fixed {
                let treated = if world.has_local_clouds() {
                    let caps = budgets
                        .iter()
                        .zip(&base.raw)
                        .map(|(b, q)| {
                            let mut c = *b;
                            let v = q.get(fixed).min(b.get(fixed));
                            match fixed {
                                Dimension::Price => c.price = v,
                                Dimension::Power => c.power = v,
                                Dimension::Delay => c.delay = v,
                            }
                            c
                        })
                        .collect();
                    let p = problem(&world, &inst.ltws, &inst.groups, caps)?;
                    let r = run_algorithm(s, alg, &p, seed)?;
                    transfer(&p, &r, &actual)?
                } else {
                    base_eval.clone()
                };
                let mut row = ctx.row(alg.as_str(), &treated, None);
                let gains = match compute_two_tier_gain(&treated.mean_raw(), &base_eval.mean_raw(), fixed) {
                    Ok(g) => g,
                    Err(Error::UndefinedGain) => Gains::default(),
                    Err(e) => return Err(e),
                };
                row.gain_price_pct = gains.price;
                row.gain_power_pct = gains.power;
                row.gain_delay_pct = gains.delay;
                row.fixed_dimension = Some(fixed);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Every repetition of `s`, rows ordered by repetition, uncertainty level,
/// algorithm and fixed dimension. Repetitions run in parallel when the
/// `parallel` feature is on; the output does not depend on it.
pub fn run_experiment(s: &Scenario) -> Result<Vec<MetricsRow>> {
    s.validate()?;
    #[cfg(feature = "parallel")]
    let per_rep: Vec<Vec<MetricsRow>> =
        (0..s.repetitions).into_par_iter().map(|r| run_repetition(s, r)).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let per_rep: Vec<Vec<MetricsRow>> = (0..s.repetitions).map(|r| run_repetition(s, r)).collect::<Result<_>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn throughput_examples() {
        assert!((compute_throughput(0.66, 1.0).unwrap() - 66.0).abs() < 1e-12);
        assert_eq!(compute_throughput(0.4, 0.4).unwrap(), 100.0);
        assert_eq!(compute_throughput(0.0, 0.7).unwrap(), 0.0);
        assert_eq!(compute_throughput(0.3, 0.0), Err(Error::UndefinedThroughput));
    }

    #[test]
    fn gain_examples() {
        assert!((two_tier_gain(8.0, 10.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(two_tier_gain(10.0, 10.0).unwrap(), 0.0);
        assert!((two_tier_gain(12.0, 10.0).unwrap() + 20.0).abs() < 1e-12);
        assert_eq!(two_tier_gain(1.0, 0.0), Err(Error::UndefinedGain));
        let g = compute_two_tier_gain(&QoS::new(1.0, 8.0, 5.0), &QoS::new(2.0, 10.0, 5.0), Dimension::Delay).unwrap();
        assert_eq!(g.delay, None);
        assert!((g.price.unwrap() - 50.0).abs() < 1e-12);
        assert!((g.power.unwrap() - 20.0).abs() < 1e-12);
    }

    fn tiny() -> Scenario {
        let mut s = Scenario::with_users(4);
        s.repetitions = 2;
        s.grid.width = 6;
        s.grid.height = 6;
        s.clouds.local = 2;
        s.clouds.capacity = 2;
        s.catalog.local_per_function = Some(1);
        s.users.requests = 2;
        s.users.duration = 600.0;
        s
    }

    #[test]
    fn bruteforce_against_itself_is_exact() {
        let rows = run_experiment(&tiny()).unwrap();
        let bf: Vec<_> = rows.iter().filter(|r| r.algorithm == "bruteforce").collect();
        assert_eq!(bf.len(), 2);
        assert!(bf.iter().all(|r| r.throughput_pct == Some(100.0)));
        for r in &rows {
            let t = r.throughput_pct.unwrap();
            assert!((0.0..=100.0 + 1e-9).contains(&t), "{r:?}");
        }
    }

    #[test]
    fn no_local_clouds_means_zero_gain() {
        let mut s = tiny();
        s.clouds.local = 0;
        s.catalog.local_per_function = None;
        s.gain.enabled = true;
        let rows = run_experiment(&s).unwrap();
        let gain_rows: Vec<_> = rows.iter().filter(|r| r.fixed_dimension.is_some()).collect();
        assert!(!gain_rows.is_empty());
        for r in gain_rows {
            for g in [r.gain_price_pct, r.gain_power_pct, r.gain_delay_pct].into_iter().flatten() {
                assert_eq!(g, 0.0);
            }
        }
    }

    #[test]
    fn unchanged_entries_keep_their_services() {
        let s = tiny();
        let inst = build_instance(&s, 0).unwrap();
        let p = Problem::new(&inst.world, &inst.ltws).unwrap();
        let r = allocate_greedy(&p).unwrap();
        for (v, c) in p.views.iter().zip(&r.choices) {
            assert_eq!(&transfer_choice(v, c, v).unwrap(), c);
        }
    }
}
