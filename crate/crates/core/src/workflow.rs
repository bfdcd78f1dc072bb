//! Workflows, location-time workflows, the QoS aggregation algebra and the
//! min-max normalization used by the utility functions.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellId, ServiceId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionId(pub u32);

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.0)
    }
}

/// Interned function names.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionTable {
    names: Vec<String>,
}

impl FunctionTable {
    pub fn intern(&mut self, name: &str) -> FunctionId {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return FunctionId(i as u32);
        }
        self.names.push(name.to_string());
        FunctionId(self.names.len() as u32 - 1)
    }

    pub fn get(&self, name: &str) -> Option<FunctionId> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| FunctionId(i as u32))
    }

    pub fn name(&self, id: FunctionId) -> Option<&str> {
        self.names.get(id.0 as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = FunctionId> {
        (0..self.names.len() as u32).map(FunctionId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionNode {
    pub function: FunctionId,
    /// Kilobytes handed to the service.
    pub input_kb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorkflowNode {
    Leaf(FunctionNode),
    Seq(Vec<WorkflowNode>),
    And(Vec<WorkflowNode>),
    Xor(Vec<WorkflowNode>),
    Loop { body: Box<WorkflowNode>, count: u32 },
}

impl WorkflowNode {
    pub fn leaf(function: FunctionId, input_kb: f64) -> Self {
        WorkflowNode::Leaf(FunctionNode { function, input_kb })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WorkflowNode::Leaf(f) => {
                if !(f.input_kb > 0.0 && f.input_kb.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "function {} has non-positive input size",
                        f.function
                    )));
                }
            }
            WorkflowNode::Seq(c) | WorkflowNode::And(c) => {
                if c.is_empty() {
                    return Err(Error::InvalidInput("composite node without children".into()));
                }
                c.iter().try_for_each(WorkflowNode::validate)?;
            }
            WorkflowNode::Xor(c) => {
                if c.len() < 2 {
                    return Err(Error::InvalidInput("xor needs at least two branches".into()));
                }
                c.iter().try_for_each(WorkflowNode::validate)?;
            }
            WorkflowNode::Loop { body, count } => {
                if *count == 0 {
                    return Err(Error::InvalidInput("loop count must be at least 1".into()));
                }
                body.validate()?;
            }
        }
        Ok(())
    }

    /// Leaves in depth-first order. Leaf indices used throughout the crate
    /// refer to this order.
    pub fn leaves(&self) -> Vec<&FunctionNode> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a FunctionNode>) {
        match self {
            WorkflowNode::Leaf(f) => out.push(f),
            WorkflowNode::Seq(c) | WorkflowNode::And(c) | WorkflowNode::Xor(c) => {
                c.iter().for_each(|n| n.collect_leaves(out))
            }
            WorkflowNode::Loop { body, .. } => body.collect_leaves(out),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            WorkflowNode::Leaf(_) => 1,
            WorkflowNode::Seq(c) | WorkflowNode::And(c) | WorkflowNode::Xor(c) => {
                c.iter().map(WorkflowNode::leaf_count).sum()
            }
            WorkflowNode::Loop { body, .. } => body.leaf_count(),
        }
    }

    pub fn functions(&self) -> Vec<FunctionId> {
        self.leaves().iter().map(|f| f.function).collect()
    }

    /// For each leaf, the leaf executed immediately before it when both are
    /// direct, adjacent children of the same `Seq`. Those are the pairs that
    /// pay an inter-cloud hop when placed on different clouds.
    pub fn seq_predecessors(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.leaf_count()];
        let mut next = 0;
        self.fill_predecessors(&mut next, &mut out);
        out
    }

    fn fill_predecessors(&self, next: &mut usize, out: &mut [Option<usize>]) {
        match self {
            WorkflowNode::Leaf(_) => *next += 1,
            WorkflowNode::Seq(children) => {
                let mut prev_leaf: Option<usize> = None;
                for child in children {
                    if let WorkflowNode::Leaf(_) = child {
                        out[*next] = prev_leaf;
                        prev_leaf = Some(*next);
                        *next += 1;
                    } else {
                        child.fill_predecessors(next, out);
                        prev_leaf = None;
                    }
                }
            }
            WorkflowNode::And(c) | WorkflowNode::Xor(c) => {
                c.iter().for_each(|n| n.fill_predecessors(next, out))
            }
            WorkflowNode::Loop { body, .. } => body.fill_predecessors(next, out),
        }
    }

    /// Folds per-leaf QoS through the pattern algebra: `Seq` sums, `And`
    /// sums price/power and takes the max delay, `Xor` takes the max of every
    /// dimension, `Loop` multiplies by its count.
    pub fn fold_qos<F>(&self, leaf_qos: &mut F) -> Result<QoS>
    where
        F: FnMut(usize, &FunctionNode) -> Result<QoS>,
    {
        let mut next = 0;
        self.fold_inner(&mut next, leaf_qos)
    }

    fn fold_inner<F>(&self, next: &mut usize, leaf_qos: &mut F) -> Result<QoS>
    where
        F: FnMut(usize, &FunctionNode) -> Result<QoS>,
    {
        Ok(match self {
            WorkflowNode::Leaf(f) => {
                let q = leaf_qos(*next, f)?;
                *next += 1;
                q
            }
            WorkflowNode::Seq(c) => {
                let mut acc = QoS::ZERO;
                for n in c {
                    acc += n.fold_inner(next, leaf_qos)?;
                }
                acc
            }
            WorkflowNode::And(c) => {
                let mut acc = QoS::ZERO;
                for n in c {
                    let q = n.fold_inner(next, leaf_qos)?;
                    acc.price += q.price;
                    acc.power += q.power;
                    acc.delay = acc.delay.max(q.delay);
                }
                acc
            }
            WorkflowNode::Xor(c) => {
                let mut acc = QoS::ZERO;
                for n in c {
                    acc = acc.max(n.fold_inner(next, leaf_qos)?);
                }
                acc
            }
            WorkflowNode::Loop { body, count } => body.fold_inner(next, leaf_qos)?.scale(*count as f64),
        })
    }
}

/// Price in dollars, energy drawn on the device in millijoules, delay in
/// milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QoS {
    pub price: f64,
    pub power: f64,
    pub delay: f64,
}

impl QoS {
    pub const ZERO: QoS = QoS { price: 0.0, power: 0.0, delay: 0.0 };

    pub const fn new(price: f64, power: f64, delay: f64) -> Self {
        QoS { price, power, delay }
    }

    pub fn splat(v: f64) -> Self {
        QoS::new(v, v, v)
    }

    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Price => self.price,
            Dimension::Power => self.power,
            Dimension::Delay => self.delay,
        }
    }

    pub fn set(&mut self, d: Dimension, v: f64) {
        match d {
            Dimension::Price => self.price = v,
            Dimension::Power => self.power = v,
            Dimension::Delay => self.delay = v,
        }
    }

    pub fn max(self, o: QoS) -> QoS {
        QoS::new(self.price.max(o.price), self.power.max(o.power), self.delay.max(o.delay))
    }

    pub fn min(self, o: QoS) -> QoS {
        QoS::new(self.price.min(o.price), self.power.min(o.power), self.delay.min(o.delay))
    }

    pub fn scale(self, k: f64) -> QoS {
        QoS::new(self.price * k, self.power * k, self.delay * k)
    }

    /// True when every component is `<=` the corresponding component of `o`.
    pub fn le(&self, o: &QoS) -> bool {
        self.price <= o.price && self.power <= o.power && self.delay <= o.delay
    }
}

impl Add for QoS {
    type Output = QoS;
    fn add(self, o: QoS) -> QoS {
        QoS::new(self.price + o.price, self.power + o.power, self.delay + o.delay)
    }
}

impl AddAssign for QoS {
    fn add_assign(&mut self, o: QoS) {
        *self = *self + o;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Price,
    Power,
    Delay,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Price, Dimension::Power, Dimension::Delay];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Price => "price",
            Dimension::Power => "power",
            Dimension::Delay => "delay",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "price" => Ok(Dimension::Price),
            "power" => Ok(Dimension::Power),
            "delay" => Ok(Dimension::Delay),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtwEntry {
    pub cell: CellId,
    /// Seconds the user is expected to spend here.
    pub window: f64,
    pub workflow: WorkflowNode,
    /// Index of the template this workflow was instantiated from.
    pub template: Option<usize>,
}

/// A user's requests indexed by where and when they are expected to happen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationTimeWorkflow {
    pub user: UserId,
    pub entries: Vec<LtwEntry>,
}

impl LocationTimeWorkflow {
    pub fn occurrence_count(&self) -> usize {
        self.entries.iter().map(|e| e.workflow.leaf_count()).sum()
    }
}

/// One service per function occurrence: `assignments[entry][leaf]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub assignments: Vec<Vec<ServiceId>>,
}

impl ExecutionPlan {
    pub fn new(assignments: Vec<Vec<ServiceId>>) -> Self {
        ExecutionPlan { assignments }
    }

    pub fn services(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.assignments.iter().flatten().copied()
    }

    pub fn check_shape(&self, ltw: &LocationTimeWorkflow) -> Result<()> {
        if self.assignments.len() != ltw.entries.len() {
            return Err(Error::IncompletePlan(format!(
                "plan covers {} of {} entries",
                self.assignments.len(),
                ltw.entries.len()
            )));
        }
        for (i, (a, e)) in self.assignments.iter().zip(&ltw.entries).enumerate() {
            let n = e.workflow.leaf_count();
            if a.len() != n {
                return Err(Error::IncompletePlan(format!(
                    "entry {i}: {} of {n} functions assigned",
                    a.len()
                )));
            }
        }
        Ok(())
    }
}

/// Workflow QoS under `plan` (one service per leaf). `cost` receives the leaf
/// index, the leaf, its service and the service of its `Seq` predecessor.
pub fn aggregate_qos<F>(node: &WorkflowNode, plan: &[ServiceId], mut cost: F) -> Result<QoS>
where
    F: FnMut(usize, &FunctionNode, ServiceId, Option<ServiceId>) -> Result<QoS>,
{
    let n = node.leaf_count();
    if plan.len() != n {
        return Err(Error::IncompletePlan(format!("{} of {n} functions assigned", plan.len())));
    }
    let preds = node.seq_predecessors();
    node.fold_qos(&mut |i, f| cost(i, f, plan[i], preds[i].map(|p| plan[p])))
}

/// Sum over entries of each entry's workflow QoS. `cost` additionally
/// receives the entry index so it can evaluate the leaf in that entry's
/// location and time.
pub fn ltw_qos<F>(ltw: &LocationTimeWorkflow, plan: &ExecutionPlan, mut cost: F) -> Result<QoS>
where
    F: FnMut(usize, usize, &FunctionNode, ServiceId, Option<ServiceId>) -> Result<QoS>,
{
    if plan.assignments.is_empty() {
        return Err(Error::IncompletePlan("empty plan".into()));
    }
    plan.check_shape(ltw)?;
    let mut total = QoS::ZERO;
    for (e, (entry, assigned)) in ltw.entries.iter().zip(&plan.assignments).enumerate() {
        total += aggregate_qos(&entry.workflow, assigned, |l, f, s, p| cost(e, l, f, s, p))?;
    }
    Ok(total)
}

/// Sum of the members' LTW QoS.
pub fn group_ltw_qos<F>(members: &[(&LocationTimeWorkflow, &ExecutionPlan)], mut cost: F) -> Result<QoS>
where
    F: FnMut(UserId, usize, usize, &FunctionNode, ServiceId, Option<ServiceId>) -> Result<QoS>,
{
    if members.is_empty() {
        return Err(Error::InvalidGroup("group has no members".into()));
    }
    let mut total = QoS::ZERO;
    for (ltw, plan) in members {
        total += ltw_qos(ltw, plan, |e, l, f, s, p| cost(ltw.user, e, l, f, s, p))?;
    }
    Ok(total)
}

/// Per-dimension bounds used for normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: QoS,
    pub max: QoS,
}

impl Extrema {
    pub fn of<I: IntoIterator<Item = QoS>>(values: I) -> Option<Extrema> {
        let mut it = values.into_iter();
        let first = it.next()?;
        Some(it.fold(Extrema { min: first, max: first }, |e, q| Extrema {
            min: e.min.min(q),
            max: e.max.max(q),
        }))
    }

    pub fn point(q: QoS) -> Extrema {
        Extrema { min: q, max: q }
    }
}

/// QoS mapped onto `[0, 1]` per dimension, 1 being best.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedQoS {
    pub price: f64,
    pub power: f64,
    pub delay: f64,
}

impl NormalizedQoS {
    /// Euclidean norm of the three normalized components, in `[0, sqrt 3]`.
    pub fn total(&self) -> f64 {
        (self.power * self.power + self.price * self.price + self.delay * self.delay).sqrt()
    }

    /// The smallest of the three components.
    pub fn worst(&self) -> f64 {
        self.price.min(self.power).min(self.delay)
    }
}

fn normalize_dim(value: f64, min: f64, max: f64) -> Result<f64> {
    let slack = 1e-9 * max.abs().max(min.abs()).max(1.0);
    if !(value >= min - slack && value <= max + slack) {
        return Err(Error::ExtremaMismatch { value, min, max });
    }
    if max == min {
        return Ok(1.0);
    }
    Ok(((max - value) / (max - min)).clamp(0.0, 1.0))
}

/// `(max - value) / (max - min)` in each dimension, or 1 when `max == min`.
/// The same formula serves services (extrema over the realizing set), whole
/// workflows and location-time workflows (extrema over plans).
pub fn normalize_qos(raw: &QoS, extrema: &Extrema) -> Result<NormalizedQoS> {
    Ok(NormalizedQoS {
        price: normalize_dim(raw.price, extrema.min.price, extrema.max.price)?,
        power: normalize_dim(raw.power, extrema.min.power, extrema.max.power)?,
        delay: normalize_dim(raw.delay, extrema.min.delay, extrema.max.delay)?,
    })
}

/// Exact extrema of a workflow over all plans, given per-leaf extrema that
/// can be chosen independently. Every pattern operator is monotone, so the
/// cheapest plan takes the cheapest option at every leaf.
pub fn workflow_extrema<F>(node: &WorkflowNode, mut leaf: F) -> Result<Extrema>
where
    F: FnMut(usize, &FunctionNode) -> Result<Extrema>,
{
    let mut cache = Vec::with_capacity(node.leaf_count());
    let min = node.fold_qos(&mut |i, f| {
        let e = leaf(i, f)?;
        cache.push(e);
        Ok(e.min)
    })?;
    let max = node.fold_qos(&mut |i, _| Ok(cache[i].max))?;
    Ok(Extrema { min, max })
}

/// LTW extrema: the sum over entries of each entry's workflow extrema.
pub fn ltw_extrema<F>(ltw: &LocationTimeWorkflow, mut leaf: F) -> Result<Extrema>
where
    F: FnMut(usize, usize, &FunctionNode) -> Result<Extrema>,
{
    let mut acc = Extrema::point(QoS::ZERO);
    for (e, entry) in ltw.entries.iter().enumerate() {
        let w = workflow_extrema(&entry.workflow, |l, f| leaf(e, l, f))?;
        acc.min += w.min;
        acc.max += w.max;
    }
    Ok(acc)
}

/// A named workflow shape whose leaf sizes are drawn when instantiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub name: String,
    pub root: WorkflowNode,
    /// Per leaf (depth-first order): a fixed size in KB, or `None` to draw one.
    pub fixed_sizes: Vec<Option<f64>>,
}

impl Template {
    /// Parses a pattern expression such as
    /// `seq(image_filter, ocr, and(tts, upload:512), loop(stream, 3))`.
    /// A `:N` suffix pins the leaf's input size to N kilobytes.
    pub fn parse(name: &str, expr: &str, functions: &mut FunctionTable) -> std::result::Result<Self, String> {
        let mut p = ExprParser { src: expr.as_bytes(), pos: 0, functions, fixed: Vec::new() };
        let root = p.node()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(format!("trailing input at offset {}", p.pos));
        }
        let fixed_sizes = std::mem::take(&mut p.fixed);
        Ok(Template { name: name.to_string(), root, fixed_sizes })
    }

    /// A copy of the template with every free leaf size replaced by `draw()`.
    pub fn instantiate(&self, mut draw: impl FnMut() -> f64) -> WorkflowNode {
        let mut root = self.root.clone();
        let mut i = 0;
        resize(&mut root, &mut |f: &mut FunctionNode| {
            f.input_kb = self.fixed_sizes[i].unwrap_or_else(&mut draw);
            i += 1;
        });
        root
    }
}

fn resize(node: &mut WorkflowNode, f: &mut impl FnMut(&mut FunctionNode)) {
    match node {
        WorkflowNode::Leaf(l) => f(l),
        WorkflowNode::Seq(c) | WorkflowNode::And(c) | WorkflowNode::Xor(c) => {
            c.iter_mut().for_each(|n| resize(n, f))
        }
        WorkflowNode::Loop { body, .. } => resize(body, f),
    }
}

struct ExprParser<'a> {
    src: &'a [u8],
    pos: usize,
    functions: &'a mut FunctionTable,
    fixed: Vec<Option<f64>>,
}

impl ExprParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> std::result::Result<String, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || matches!(self.src[self.pos], b'_' | b'-' | b'.'))
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected a name at offset {start}"));
        }
        Ok(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn node(&mut self) -> std::result::Result<WorkflowNode, String> {
        let name = self.ident()?;
        if !self.eat(b'(') {
            let size = if self.eat(b':') {
                let digits = self.ident()?;
                let kb: f64 = digits.parse().map_err(|_| format!("bad size `{digits}`"))?;
                if kb.is_nan() || kb <= 0.0 {
                    return Err(format!("size of `{name}` must be positive"));
                }
                Some(kb)
            } else {
                None
            };
            self.fixed.push(size);
            let id = self.functions.intern(&name);
            return Ok(WorkflowNode::leaf(id, size.unwrap_or(1.0)));
        }
        let pattern = name.to_ascii_lowercase();
        if pattern == "loop" {
            let body = self.node()?;
            if !self.eat(b',') {
                return Err("loop needs a repetition count".into());
            }
            let k = self.ident()?;
            let count: u32 = k.parse().map_err(|_| format!("bad loop count `{k}`"))?;
            if count == 0 {
                return Err("loop count must be at least 1".into());
            }
            if !self.eat(b')') {
                return Err("expected `)` after loop count".into());
            }
            return Ok(WorkflowNode::Loop { body: Box::new(body), count });
        }
        let mut children = vec![self.node()?];
        while self.eat(b',') {
            children.push(self.node()?);
        }
        if !self.eat(b')') {
            return Err(format!("expected `)` closing `{name}`"));
        }
        match pattern.as_str() {
            "seq" => Ok(WorkflowNode::Seq(children)),
            "and" => Ok(WorkflowNode::And(children)),
            "xor" if children.len() >= 2 => Ok(WorkflowNode::Xor(children)),
            "xor" => Err("xor needs at least two branches".into()),
            other => Err(format!("unknown pattern `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn leaf(i: u32) -> WorkflowNode {
        WorkflowNode::leaf(FunctionId(i), 100.0)
    }

    /// Evaluates `node` where leaf `i` has QoS `q[i]`.
    fn eval(node: &WorkflowNode, q: &[QoS]) -> QoS {
        let plan: Vec<ServiceId> = (0..q.len() as u32).map(ServiceId).collect();
        aggregate_qos(node, &plan, |_, _, s, _| Ok(q[s.index()])).unwrap()
    }

    #[test]
    fn seq_sums_every_dimension() {
        let q = [QoS::new(0.1, 5.0, 100.0), QoS::new(0.2, 7.0, 200.0), QoS::new(0.3, 1.0, 50.0)];
        let two = WorkflowNode::Seq(vec![leaf(0), leaf(1)]);
        assert_eq!(eval(&two, &q[..2]).delay, 300.0);
        let three = WorkflowNode::Seq(vec![leaf(0), leaf(1), leaf(2)]);
        let r = eval(&three, &q);
        assert_eq!(r.price, 0.1 + 0.2 + 0.3);
        assert_eq!(r.power, 13.0);
        assert_eq!(r.delay, 350.0);
    }

    #[test]
    fn and_sums_price_power_and_maxes_delay() {
        let q = [QoS::new(0.1, 5.0, 100.0), QoS::new(0.2, 7.0, 200.0)];
        let r = eval(&WorkflowNode::And(vec![leaf(0), leaf(1)]), &q);
        assert_eq!(r.delay, 200.0);
        assert_eq!(r.price, 0.1 + 0.2);
        assert_eq!(r.power, 12.0);
    }

    #[test]
    fn xor_takes_max_of_everything() {
        let q = [QoS::new(0.1, 9.0, 100.0), QoS::new(0.4, 7.0, 50.0), QoS::new(0.2, 3.0, 300.0)];
        let r = eval(&WorkflowNode::Xor(vec![leaf(0), leaf(1), leaf(2)]), &q);
        assert_eq!(r, QoS::new(0.4, 9.0, 300.0));
    }

    #[test]
    fn loop_multiplies() {
        let q = [QoS::new(0.5, 5.0, 20.0)];
        let r = eval(&WorkflowNode::Loop { body: Box::new(leaf(0)), count: 3 }, &q);
        assert_eq!(r, QoS::new(1.5, 15.0, 60.0));
    }

    #[test]
    fn seq_of_one_is_identity() {
        let q = [QoS::new(0.3, 4.0, 70.0)];
        assert_eq!(eval(&WorkflowNode::Seq(vec![leaf(0)]), &q), q[0]);
    }

    #[test]
    fn predecessors_only_link_adjacent_seq_leaves() {
        let w = WorkflowNode::Seq(vec![
            leaf(0),
            leaf(1),
            WorkflowNode::And(vec![leaf(2), leaf(3)]),
            leaf(4),
            WorkflowNode::Loop { body: Box::new(WorkflowNode::Seq(vec![leaf(5), leaf(6)])), count: 2 },
        ]);
        assert_eq!(
            w.seq_predecessors(),
            vec![None, Some(0), None, None, None, None, Some(5)]
        );
    }

    #[test]
    fn validation_rules() {
        assert!(WorkflowNode::Seq(vec![]).validate().is_err());
        assert!(WorkflowNode::Xor(vec![leaf(0)]).validate().is_err());
        assert!(WorkflowNode::Loop { body: Box::new(leaf(0)), count: 0 }.validate().is_err());
        assert!(WorkflowNode::leaf(FunctionId(0), 0.0).validate().is_err());
        assert!(WorkflowNode::Xor(vec![leaf(0), leaf(1)]).validate().is_ok());
    }

    fn ltw(entries: Vec<WorkflowNode>) -> LocationTimeWorkflow {
        LocationTimeWorkflow {
            user: UserId(0),
            entries: entries
                .into_iter()
                .map(|workflow| LtwEntry { cell: CellId(0), window: 60.0, workflow, template: None })
                .collect(),
        }
    }

    #[test]
    fn ltw_sums_entries() {
        let l = ltw(vec![leaf(0), leaf(1)]);
        let plan = ExecutionPlan::new(vec![vec![ServiceId(0)], vec![ServiceId(1)]]);
        let delays = [300.0, 400.0];
        let q = ltw_qos(&l, &plan, |_, _, _, s, _| Ok(QoS::new(0.0, 0.0, delays[s.index()]))).unwrap();
        assert_eq!(q.delay, 700.0);

        let single = ltw(vec![WorkflowNode::Seq(vec![leaf(0), leaf(1)])]);
        let p1 = ExecutionPlan::new(vec![vec![ServiceId(0), ServiceId(1)]]);
        let a = ltw_qos(&single, &p1, |_, _, _, s, _| Ok(QoS::new(0.0, 0.0, delays[s.index()]))).unwrap();
        let b = aggregate_qos(&single.entries[0].workflow, &p1.assignments[0], |_, _, s, _| {
            Ok(QoS::new(0.0, 0.0, delays[s.index()]))
        })
        .unwrap();
        assert_eq!(a, b);

        let empty = ExecutionPlan::default();
        assert!(matches!(
            ltw_qos(&l, &empty, |_, _, _, _, _| Ok(QoS::ZERO)),
            Err(Error::IncompletePlan(_))
        ));
        let short = ExecutionPlan::new(vec![vec![ServiceId(0)]]);
        assert!(matches!(
            ltw_qos(&l, &short, |_, _, _, _, _| Ok(QoS::ZERO)),
            Err(Error::IncompletePlan(_))
        ));
    }

    #[test]
    fn group_sums_members() {
        let l = ltw(vec![leaf(0)]);
        let plan = ExecutionPlan::new(vec![vec![ServiceId(0)]]);
        let unit = |_: UserId, _: usize, _: usize, _: &FunctionNode, _: ServiceId, _: Option<ServiceId>| {
            Ok(QoS::new(1.0, 2.0, 3.0))
        };
        let one = group_ltw_qos(&[(&l, &plan)], unit).unwrap();
        assert_eq!(one, QoS::new(1.0, 2.0, 3.0));
        let two = group_ltw_qos(&[(&l, &plan), (&l, &plan)], unit).unwrap();
        assert_eq!(two, one.scale(2.0));
        assert!(matches!(group_ltw_qos(&[], unit), Err(Error::InvalidGroup(_))));
    }

    #[test]
    fn normalization_examples() {
        let e = Extrema { min: QoS::new(1.0, 3.0, 10.0), max: QoS::new(5.0, 3.0, 20.0) };
        let n = normalize_qos(&QoS::new(2.0, 3.0, 10.0), &e).unwrap();
        assert_eq!(n.price, 0.75);
        assert_eq!(n.power, 1.0);
        assert_eq!(n.delay, 1.0);
        let n = normalize_qos(&QoS::new(5.0, 3.0, 20.0), &e).unwrap();
        assert_eq!((n.price, n.delay), (0.0, 0.0));
        assert!(matches!(
            normalize_qos(&QoS::new(6.0, 3.0, 10.0), &e),
            Err(Error::ExtremaMismatch { .. })
        ));
        let pythag = NormalizedQoS { price: 0.6, power: 0.8, delay: 0.0 };
        assert!((pythag.total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_workflow_normalizes_to_one() {
        let w = ltw(vec![leaf(0)]);
        let q = QoS::new(0.2, 10.0, 30.0);
        let ex = ltw_extrema(&w, |_, _, _| Ok(Extrema::point(q))).unwrap();
        let n = normalize_qos(&q, &ex).unwrap();
        assert_eq!((n.price, n.power, n.delay), (1.0, 1.0, 1.0));
    }

    #[test]
    fn template_parsing() {
        let mut ft = FunctionTable::default();
        let t = Template::parse("x", "seq(a, and(b, c:512), loop(a, 3), xor(d, e))", &mut ft).unwrap();
        assert_eq!(t.root.leaf_count(), 6);
        assert_eq!(ft.len(), 5);
        assert_eq!(t.fixed_sizes[2], Some(512.0));
        let w = t.instantiate(|| 7.0);
        let sizes: Vec<f64> = w.leaves().iter().map(|f| f.input_kb).collect();
        assert_eq!(sizes, vec![7.0, 7.0, 512.0, 7.0, 7.0, 7.0]);
        assert!(Template::parse("bad", "seq(a,", &mut ft).is_err());
        assert!(Template::parse("bad", "xor(a)", &mut ft).is_err());
        assert!(Template::parse("bad", "loop(a, 0)", &mut ft).is_err());
        assert!(Template::parse("bad", "fork(a, b)", &mut ft).is_err());
    }

    // Random workflow trees with a service choice per leaf.
    fn arb_node() -> impl Strategy<Value = WorkflowNode> {
        let leaf = (0u32..4).prop_map(|f| WorkflowNode::leaf(FunctionId(f), 100.0));
        leaf.prop_recursive(3, 12, 3, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 1..3).prop_map(WorkflowNode::Seq),
                prop::collection::vec(inner.clone(), 1..3).prop_map(WorkflowNode::And),
                prop::collection::vec(inner.clone(), 2..3).prop_map(WorkflowNode::Xor),
                (inner, 1u32..4).prop_map(|(b, count)| WorkflowNode::Loop { body: Box::new(b), count }),
            ]
        })
    }

    fn arb_qos() -> impl Strategy<Value = QoS> {
        (0.0f64..10.0, 0.0f64..10.0, 0.0f64..10.0).prop_map(|(a, b, c)| QoS::new(a, b, c))
    }

    proptest! {
        #[test]
        fn aggregation_is_monotone(node in arb_node(), base in prop::collection::vec(arb_qos(), 12), bump in arb_qos(), at in 0usize..12) {
            let n = node.leaf_count();
            let q: Vec<QoS> = base[..n].to_vec();
            let mut raised = q.clone();
            raised[at % n] += bump;
            let a = eval(&node, &q);
            let b = eval(&node, &raised);
            prop_assert!(a.le(&b));
        }

        /// Tree-aggregated per-leaf extrema equal the extrema found by
        /// enumerating every plan.
        #[test]
        fn extrema_match_enumeration(node in arb_node(), table in prop::collection::vec(prop::collection::vec(arb_qos(), 3), 12)) {
            let n = node.leaf_count();
            prop_assume!(3usize.pow(n as u32) <= 729);
            let analytic = workflow_extrema(&node, |i, _| Ok(Extrema::of(table[i].iter().copied()).unwrap())).unwrap();
            let mut all = Vec::new();
            for code in 0..3usize.pow(n as u32) {
                let mut c = code;
                let choice: Vec<usize> = (0..n).map(|_| { let d = c % 3; c /= 3; d }).collect();
                let plan: Vec<ServiceId> = (0..n as u32).map(ServiceId).collect();
                all.push(aggregate_qos(&node, &plan, |i, _, _, _| Ok(table[i][choice[i]])).unwrap());
            }
            let brute = Extrema::of(all).unwrap();
            for d in Dimension::ALL {
                prop_assert!((analytic.min.get(d) - brute.min.get(d)).abs() < 1e-9);
                prop_assert!((analytic.max.get(d) - brute.max.get(d)).abs() < 1e-9);
            }
        }

        #[test]
        fn normalization_reverses_order(a in 0.0f64..100.0, b in 0.0f64..100.0, lo in 0.0f64..1.0) {
            let e = Extrema { min: QoS::splat(-lo), max: QoS::splat(100.0) };
            let na = normalize_qos(&QoS::splat(a), &e).unwrap();
            let nb = normalize_qos(&QoS::splat(b), &e).unwrap();
            if a <= b {
                prop_assert!(na.price >= nb.price);
            }
        }
    }
}
