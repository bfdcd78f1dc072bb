//! Objective, constraints and allocators.
//!
//! A [`Problem`] bundles a world with one location-time workflow per
//! participating user. Each workflow is compiled into an [`LtwView`] that
//! caches, for every function occurrence, the realizing services with their
//! QoS in that occurrence's context. Plans are then manipulated as vectors of
//! candidate indices.

mod baselines;
mod bruteforce;
mod find_service;
mod music;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeId, ServiceId, UserId};
use crate::registry::CapacityLedger;
use crate::workflow::{
    ltw_extrema, normalize_qos, Dimension, ExecutionPlan, Extrema, FunctionId, LocationTimeWorkflow, NormalizedQoS,
    QoS,
};
use crate::world::World;

pub use baselines::{allocate_greedy, allocate_rsa, RSA_RETRIES};
pub use bruteforce::{brute_force_optimal, BruteForceLimits};
pub use find_service::{find_service, roulette_pick, SearchParams};
pub use music::{music, AcceptanceRule, AnnealingParams};

/// One service able to run a function occurrence, costed in its context.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub service: ServiceId,
    /// QoS without any inter-cloud hop.
    pub base: QoS,
    /// Added when the `Seq` predecessor ran on a different cloud.
    pub hop: QoS,
    pub cloud: Option<NodeId>,
    /// Hosting local cloud, if any.
    pub local: Option<NodeId>,
    /// Total normalized QoS among the occurrence's candidates.
    pub total: f64,
    /// Total normalized QoS from advertised figures: cloud services as if
    /// reached over WiFi, wherever the user is.
    pub nominal_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occurrence {
    pub entry: usize,
    pub leaf: usize,
    pub function: FunctionId,
    /// Flat index of the `Seq` predecessor.
    pub pred: Option<usize>,
    /// Sorted by service id.
    pub candidates: Vec<Candidate>,
}

/// A compiled location-time workflow.
#[derive(Debug, Clone)]
pub struct LtwView {
    pub ltw: LocationTimeWorkflow,
    pub occurrences: Vec<Occurrence>,
    /// Flat index of each entry's first occurrence.
    pub entry_start: Vec<usize>,
    pub extrema: Extrema,
}

/// Per-user choice of candidate index for every occurrence.
pub type Choice = Vec<usize>;

impl LtwView {
    pub fn build(world: &World, ltw: &LocationTimeWorkflow) -> Result<LtwView> {
        if ltw.entries.is_empty() {
            return Err(Error::InvalidInput(format!("user {} has an empty workflow", ltw.user)));
        }
        let mut occurrences = Vec::with_capacity(ltw.occurrence_count());
        let mut entry_start = Vec::with_capacity(ltw.entries.len());
        for (e, entry) in ltw.entries.iter().enumerate() {
            entry.workflow.validate()?;
            let start = occurrences.len();
            entry_start.push(start);
            let preds = entry.workflow.seq_predecessors();
            for (l, leaf) in entry.workflow.leaves().into_iter().enumerate() {
                let mut candidates = Vec::new();
                for s in world.candidate_services(leaf.function, ltw.user)? {
                    candidates.push(Candidate {
                        service: s,
                        base: world.leaf_qos(ltw.user, entry.cell, entry.window, leaf, s)?,
                        hop: world.hop_qos(leaf, s)?,
                        cloud: world.host_cloud(s),
                        local: world.host_local(s),
                        total: 0.0,
                        nominal_total: 0.0,
                    });
                }
                let ext = Extrema::of(candidates.iter().map(|c| c.base)).expect("candidate set is non-empty");
                let nominal = candidates
                    .iter()
                    .map(|c| world.nominal_qos(entry.window, leaf, c.service))
                    .collect::<Result<Vec<_>>>()?;
                let next = Extrema::of(nominal.iter().copied()).expect("candidate set is non-empty");
                for (c, q) in candidates.iter_mut().zip(&nominal) {
                    c.total = normalize_qos(&c.base, &ext)?.total();
                    c.nominal_total = normalize_qos(q, &next)?.total();
                }
                occurrences.push(Occurrence {
                    entry: e,
                    leaf: l,
                    function: leaf.function,
                    pred: preds[l].map(|p| start + p),
                    candidates,
                });
            }
        }
        let extrema = ltw_extrema(ltw, |e, l, _| {
            let o = &occurrences[entry_start[e] + l];
            let min = Extrema::of(o.candidates.iter().map(|c| c.base)).expect("non-empty").min;
            let max = Extrema::of(o.candidates.iter().map(|c| {
                if o.pred.is_some() && c.cloud.is_some() {
                    c.base + c.hop
                } else {
                    c.base
                }
            }))
            .expect("non-empty")
            .max;
            Ok(Extrema { min, max })
        })?;
        Ok(LtwView { ltw: ltw.clone(), occurrences, entry_start, extrema })
    }

    pub fn user(&self) -> UserId {
        self.ltw.user
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    fn leaf_cost(&self, choice: &[usize], i: usize) -> QoS {
        let o = &self.occurrences[i];
        let c = &o.candidates[choice[i]];
        match o.pred {
            Some(p) => {
                let prev = self.occurrences[p].candidates[choice[p]].cloud;
                if prev.is_some() && c.cloud.is_some() && prev != c.cloud {
                    c.base + c.hop
                } else {
                    c.base
                }
            }
            None => c.base,
        }
    }

    fn check_choice(&self, choice: &[usize]) -> Result<()> {
        if choice.len() != self.occurrences.len() {
            return Err(Error::IncompletePlan(format!(
                "{} of {} occurrences assigned",
                choice.len(),
                self.occurrences.len()
            )));
        }
        for (o, &c) in self.occurrences.iter().zip(choice) {
            if c >= o.candidates.len() {
                return Err(Error::IncompletePlan(format!("candidate index {c} out of range")));
            }
        }
        Ok(())
    }

    /// Raw LTW QoS of a choice.
    pub fn raw(&self, choice: &[usize]) -> Result<QoS> {
        self.check_choice(choice)?;
        let mut total = QoS::ZERO;
        for (e, entry) in self.ltw.entries.iter().enumerate() {
            let start = self.entry_start[e];
            total += entry.workflow.fold_qos(&mut |l, _| Ok(self.leaf_cost(choice, start + l)))?;
        }
        Ok(total)
    }

    pub fn normalized(&self, choice: &[usize]) -> Result<NormalizedQoS> {
        normalize_qos(&self.raw(choice)?, &self.extrema)
    }

    /// The user's term of the objective: the worst normalized dimension.
    pub fn utility(&self, choice: &[usize]) -> Result<f64> {
        Ok(self.normalized(choice)?.worst())
    }

    /// Lower bound of the raw QoS when each occurrence may use any candidate
    /// passing `allowed` (hops ignored).
    pub fn optimistic(&self, allowed: &[Vec<usize>]) -> Result<QoS> {
        let mut total = QoS::ZERO;
        for (e, entry) in self.ltw.entries.iter().enumerate() {
            let start = self.entry_start[e];
            total += entry.workflow.fold_qos(&mut |l, _| {
                let o = &self.occurrences[start + l];
                Extrema::of(allowed[start + l].iter().map(|&i| o.candidates[i].base))
                    .map(|x| x.min)
                    .ok_or(Error::NoRealizingService(o.function))
            })?;
        }
        Ok(total)
    }

    pub fn plan(&self, choice: &[usize]) -> ExecutionPlan {
        let mut assignments: Vec<Vec<ServiceId>> =
            self.ltw.entries.iter().map(|e| Vec::with_capacity(e.workflow.leaf_count())).collect();
        for (o, &c) in self.occurrences.iter().zip(choice) {
            assignments[o.entry].push(o.candidates[c].service);
        }
        ExecutionPlan::new(assignments)
    }

    /// Candidate indices realizing `plan`.
    pub fn choice_of(&self, plan: &ExecutionPlan) -> Result<Choice> {
        plan.check_shape(&self.ltw)?;
        self.occurrences
            .iter()
            .map(|o| {
                let s = plan.assignments[o.entry][o.leaf];
                o.candidates
                    .binary_search_by_key(&s, |c| c.service)
                    .map_err(|_| Error::InvalidInput(format!("service {s} cannot realize function {}", o.function)))
            })
            .collect()
    }

    /// Local clouds used by a choice, sorted and deduplicated.
    pub fn footprint(&self, choice: &[usize]) -> Vec<NodeId> {
        let mut v: Vec<NodeId> =
            self.occurrences.iter().zip(choice).filter_map(|(o, &c)| o.candidates[c].local).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Number of distinct plans.
    pub fn plan_count(&self) -> u128 {
        self.occurrences
            .iter()
            .fold(1u128, |acc, o| acc.saturating_mul(o.candidates.len() as u128))
    }
}

/// Per-user QoS limits. Infinite components are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintVector {
    pub price: f64,
    pub power: f64,
    pub delay: f64,
}

impl Default for ConstraintVector {
    fn default() -> Self {
        Self::UNBOUNDED
    }
}

impl ConstraintVector {
    pub const UNBOUNDED: ConstraintVector =
        ConstraintVector { price: f64::INFINITY, power: f64::INFINITY, delay: f64::INFINITY };

    /// Only `dim` is limited, to `value`.
    pub fn only(dim: Dimension, value: f64) -> Self {
        let mut c = Self::UNBOUNDED;
        match dim {
            Dimension::Price => c.price = value,
            Dimension::Power => c.power = value,
            Dimension::Delay => c.delay = value,
        }
        c
    }

    pub fn admits(&self, q: &QoS) -> bool {
        q.price <= self.price && q.power <= self.power && q.delay <= self.delay
    }

    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Price => self.price,
            Dimension::Power => self.power,
            Dimension::Delay => self.delay,
        }
    }
}

/// An allocation instance: who participates, their budgets and, for the
/// group problem, how they are grouped.
#[derive(Debug, Clone)]
pub struct Problem<'w> {
    pub world: &'w World,
    pub views: Vec<LtwView>,
    /// Per view.
    pub budgets: Vec<ConstraintVector>,
    /// View indices per group; empty for the single-user problem.
    pub groups: Vec<Vec<usize>>,
}

impl<'w> Problem<'w> {
    pub fn new(world: &'w World, ltws: &[LocationTimeWorkflow]) -> Result<Self> {
        if ltws.is_empty() {
            return Err(Error::InvalidInput("no users to allocate".into()));
        }
        let views = ltws.iter().map(|l| LtwView::build(world, l)).collect::<Result<Vec<_>>>()?;
        let budgets = vec![ConstraintVector::UNBOUNDED; views.len()];
        Ok(Problem { world, views, budgets, groups: Vec::new() })
    }

    pub fn with_budget(mut self, budget: ConstraintVector) -> Self {
        self.budgets = vec![budget; self.views.len()];
        self
    }

    pub fn with_budgets(mut self, budgets: Vec<ConstraintVector>) -> Result<Self> {
        if budgets.len() != self.views.len() {
            return Err(Error::InvalidInput("one budget per user is required".into()));
        }
        self.budgets = budgets;
        Ok(self)
    }

    /// Switches to the group objective. Groups are lists of view indices;
    /// they must be non-empty, disjoint and cover every user.
    pub fn with_groups(mut self, groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; self.views.len()];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidGroup(format!("group {g} has no members")));
            }
            for &m in members {
                match seen.get_mut(m) {
                    None => return Err(Error::InvalidGroup(format!("group {g} references unknown user {m}"))),
                    Some(true) => return Err(Error::InvalidGroup(format!("user {m} is in more than one group"))),
                    Some(s) => *s = true,
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidGroup("every user must belong to a group".into()));
        }
        self.groups = groups;
        Ok(self)
    }

    pub fn is_group_problem(&self) -> bool {
        !self.groups.is_empty()
    }

    /// Objective weight of each user: `1/n` for the single-user objective,
    /// `1/(|G| |g|)` for the group one.
    pub fn weights(&self) -> Vec<f64> {
        if self.groups.is_empty() {
            return vec![1.0 / self.views.len() as f64; self.views.len()];
        }
        let mut w = vec![0.0; self.views.len()];
        let ng = self.groups.len() as f64;
        for g in &self.groups {
            for &m in g {
                w[m] += 1.0 / (ng * g.len() as f64);
            }
        }
        w
    }

    pub fn objective(&self, utilities: &[f64]) -> Result<f64> {
        if self.groups.is_empty() {
            utility_single(utilities)
        } else {
            let per_group = self
                .groups
                .iter()
                .map(|g| utility_group(&g.iter().map(|&m| utilities[m]).collect::<Vec<_>>()))
                .collect::<Result<Vec<_>>>()?;
            Ok(per_group.iter().sum::<f64>() / per_group.len() as f64)
        }
    }

    /// Evaluates complete choices into a result.
    pub fn finish(&self, algorithm: &str, choices: Vec<Choice>, feasible: bool, iterations: u32) -> Result<AllocationResult> {
        let mut raw = Vec::with_capacity(choices.len());
        let mut normalized = Vec::with_capacity(choices.len());
        let mut plans = Vec::with_capacity(choices.len());
        for (v, c) in self.views.iter().zip(&choices) {
            raw.push(v.raw(c)?);
            normalized.push(v.normalized(c)?);
            plans.push(v.plan(c));
        }
        let utilities: Vec<f64> = normalized.iter().map(NormalizedQoS::worst).collect();
        let usage = self.usage(&choices);
        let capacity_ok = capacity_violations(&usage, &self.world.ledger()).is_empty();
        let budgets_ok = raw.iter().zip(&self.budgets).all(|(q, b)| b.admits(q));
        Ok(AllocationResult {
            algorithm: algorithm.to_string(),
            users: self.views.iter().map(LtwView::user).collect(),
            utility: self.objective(&utilities)?,
            utilities,
            plans,
            choices,
            raw,
            normalized,
            usage,
            feasible: feasible && capacity_ok && budgets_ok,
            iterations,
        })
    }

    /// Users per local cloud under `choices`.
    pub fn usage(&self, choices: &[Choice]) -> BTreeMap<NodeId, u32> {
        let mut usage = BTreeMap::new();
        for (v, c) in self.views.iter().zip(choices) {
            for n in v.footprint(c) {
                *usage.entry(n).or_insert(0) += 1;
            }
        }
        usage
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub algorithm: String,
    pub users: Vec<UserId>,
    /// Objective value.
    pub utility: f64,
    /// Per-user worst normalized dimension.
    pub utilities: Vec<f64>,
    pub plans: Vec<ExecutionPlan>,
    pub choices: Vec<Choice>,
    pub raw: Vec<QoS>,
    pub normalized: Vec<NormalizedQoS>,
    /// Users admitted per local cloud.
    pub usage: BTreeMap<NodeId, u32>,
    /// Every budget and capacity constraint holds.
    pub feasible: bool,
    pub iterations: u32,
}

impl AllocationResult {
    pub fn mean_raw(&self) -> QoS {
        let n = self.raw.len().max(1) as f64;
        self.raw.iter().fold(QoS::ZERO, |a, q| a + *q).scale(1.0 / n)
    }
}

/// Mean over users of the worst normalized dimension.
pub fn utility_single(worst: &[f64]) -> Result<f64> {
    if worst.is_empty() {
        return Err(Error::InvalidInput("no users".into()));
    }
    Ok(worst.iter().sum::<f64>() / worst.len() as f64)
}

/// Mean over a group's members of the worst normalized dimension.
pub fn utility_group(worst: &[f64]) -> Result<f64> {
    if worst.is_empty() {
        return Err(Error::InvalidGroup("group has no members".into()));
    }
    Ok(worst.iter().sum::<f64>() / worst.len() as f64)
}

/// Worst normalized component of each triple.
pub fn worst_components(triples: &[NormalizedQoS]) -> Vec<f64> {
    triples.iter().map(NormalizedQoS::worst).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Budget { dimension: Dimension, mean: f64, limit: f64 },
    Capacity { cloud: NodeId, admitted: u32, capacity: u32 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Budget { dimension, mean, limit } => write!(f, "mean {dimension} {mean} exceeds {limit}"),
            Violation::Capacity { cloud, admitted, capacity } => {
                write!(f, "local cloud {cloud} admits {admitted} users, capacity {capacity}")
            }
        }
    }
}

fn capacity_violations(usage: &BTreeMap<NodeId, u32>, ledger: &CapacityLedger) -> Vec<Violation> {
    usage
        .iter()
        .filter_map(|(&cloud, &admitted)| {
            let capacity = ledger.capacity(cloud).unwrap_or(0);
            (admitted > capacity).then_some(Violation::Capacity { cloud, admitted, capacity })
        })
        .collect()
}

/// Checks mean QoS against `budget` (inclusive) and local-cloud admissions
/// against the ledger's capacities. Returns every violated constraint.
pub fn check_constraints(
    raw: &[QoS],
    budget: &ConstraintVector,
    usage: &BTreeMap<NodeId, u32>,
    ledger: &CapacityLedger,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if !raw.is_empty() {
        let n = raw.len() as f64;
        for d in Dimension::ALL {
            let mean = raw.iter().map(|q| q.get(d)).sum::<f64>() / n;
            let limit = budget.get(d);
            if mean > limit {
                out.push(Violation::Budget { dimension: d, mean, limit });
            }
        }
    }
    out.extend(capacity_violations(usage, ledger));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellId;
    use crate::workflow::{LtwEntry, WorkflowNode};
    use crate::world::tests::small_world;

    pub(crate) fn ltw(user: u32, cells: &[u32]) -> LocationTimeWorkflow {
        LocationTimeWorkflow {
            user: UserId(user),
            entries: cells
                .iter()
                .map(|&c| LtwEntry {
                    cell: CellId(c),
                    window: 60.0,
                    workflow: WorkflowNode::Seq(vec![
                        WorkflowNode::leaf(FunctionId(0), 1024.0),
                        WorkflowNode::leaf(FunctionId(1), 2048.0),
                    ]),
                    template: None,
                })
                .collect(),
        }
    }

    #[test]
    fn utility_examples() {
        let one = NormalizedQoS { price: 0.4, power: 0.6, delay: 0.5 };
        assert_eq!(utility_single(&worst_components(&[one])).unwrap(), 0.4);
        assert!((utility_single(&[0.2, 0.6]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(utility_single(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(utility_single(&[]), Err(Error::InvalidInput(_))));
        assert_eq!(utility_group(&[0.7]).unwrap(), 0.7);
        assert_eq!(utility_group(&[0.5, 0.5]).unwrap(), 0.5);
        assert!(matches!(utility_group(&[]), Err(Error::InvalidGroup(_))));
    }

    #[test]
    fn group_objective_averages_group_utilities() {
        let w = small_world();
        let p = Problem::new(&w, &[ltw(0, &[12]), ltw(1, &[0]), ltw(1, &[1])]).unwrap();
        let p = p.with_groups(vec![vec![0], vec![1, 2]]).unwrap();
        let obj = p.objective(&[0.9, 0.2, 0.4]).unwrap();
        assert!((obj - (0.9 + 0.3) / 2.0).abs() < 1e-15);
        let weights = p.weights();
        assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(Problem::new(&w, &[ltw(0, &[12])]).unwrap().with_groups(vec![vec![0], vec![0]]).is_err());
    }

    #[test]
    fn constraints() {
        let w = small_world();
        let ledger = w.ledger();
        let raw = [QoS::new(1.0, 2.0, 3.0), QoS::new(3.0, 2.0, 1.0)];
        assert!(check_constraints(&raw, &ConstraintVector::UNBOUNDED, &BTreeMap::new(), &ledger).is_empty());
        let exact = ConstraintVector { price: 2.0, power: 2.0, delay: 2.0 };
        assert!(check_constraints(&raw, &exact, &BTreeMap::new(), &ledger).is_empty());
        let tight = ConstraintVector { price: 1.9, ..exact };
        let v = check_constraints(&raw, &tight, &BTreeMap::new(), &ledger);
        assert!(matches!(v[..], [Violation::Budget { dimension: Dimension::Price, .. }]));
        let over = BTreeMap::from([(NodeId(0), 2)]);
        let v = check_constraints(&raw, &ConstraintVector::UNBOUNDED, &over, &ledger);
        assert_eq!(v, vec![Violation::Capacity { cloud: NodeId(0), admitted: 2, capacity: 1 }]);
    }

    #[test]
    fn view_round_trips_plans() {
        let w = small_world();
        let v = LtwView::build(&w, &ltw(0, &[12, 0])).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.plan_count(), 3 * 2 * 3 * 2);
        let choice = vec![2, 0, 1, 1];
        let plan = v.plan(&choice);
        assert_eq!(plan.assignments, vec![vec![ServiceId(4), ServiceId(2)], vec![ServiceId(1), ServiceId(3)]]);
        assert_eq!(v.choice_of(&plan).unwrap(), choice);
        assert_eq!(v.footprint(&choice), vec![NodeId(0)]);
        assert!(v.raw(&[0, 0]).is_err());
    }

    #[test]
    fn hop_is_charged_between_clouds_only() {
        let w = small_world();
        let v = LtwView::build(&w, &ltw(0, &[12])).unwrap();
        // local then public pays the hop on the second leaf, public then public does not
        let mixed = v.raw(&[0, 1]).unwrap();
        let base = v.occurrences[0].candidates[0].base + v.occurrences[1].candidates[1].base;
        assert!((mixed.delay - base.delay - v.occurrences[1].candidates[1].hop.delay).abs() < 1e-9);
        let device_first = v.raw(&[2, 1]).unwrap();
        let base = v.occurrences[0].candidates[2].base + v.occurrences[1].candidates[1].base;
        assert_eq!(device_first, base);
    }

    #[test]
    fn view_extrema_bound_every_plan() {
        let w = small_world();
        let v = LtwView::build(&w, &ltw(0, &[12, 3, 0])).unwrap();
        let n = v.len();
        let sizes: Vec<usize> = v.occurrences.iter().map(|o| o.candidates.len()).collect();
        let mut choice = vec![0; n];
        loop {
            let q = v.normalized(&choice).unwrap();
            for x in [q.price, q.power, q.delay] {
                assert!((0.0..=1.0).contains(&x));
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
    }
}
