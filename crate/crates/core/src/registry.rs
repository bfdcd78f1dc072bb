//! Service directory indexed by location, and local-cloud admission control.
//!
//! Local-cloud services live in an R-tree keyed by their cloud's cell center.
//! Public services have no grid location; they sit in a flat "everywhere" set
//! that range queries append on request.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::model::{NodeId, Point, ServiceId};
use crate::workflow::FunctionId;

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn point(p: Point) -> Self {
        Rect { min: p, max: p }
    }

    /// Bounding box of the disc of radius `r` around `c`.
    pub fn around(c: Point, r: f64) -> Self {
        Rect { min: Point::new(c.x - r, c.y - r), max: Point::new(c.x + r, c.y + r) }
    }

    pub fn area(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y)
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect {
            min: Point::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: Point::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }

    pub fn enlargement(&self, o: &Rect) -> f64 {
        self.union(o).area() - self.area()
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn contains(&self, o: &Rect) -> bool {
        self.min.x <= o.min.x && self.min.y <= o.min.y && self.max.x >= o.max.x && self.max.y >= o.max.y
    }
}

fn mbr_of<X>(entries: &[(Rect, X)]) -> Rect {
    entries[1..].iter().fold(entries[0].0, |acc, (r, _)| acc.union(r))
}

#[derive(Debug, Clone)]
enum Node<T> {
    Leaf(Vec<(Rect, T)>),
    Internal(Vec<(Rect, Node<T>)>),
}

impl<T> Node<T> {
    fn len(&self) -> usize {
        match self {
            Node::Leaf(e) => e.len(),
            Node::Internal(c) => c.len(),
        }
    }

    fn mbr(&self) -> Rect {
        match self {
            Node::Leaf(e) => mbr_of(e),
            Node::Internal(c) => mbr_of(c),
        }
    }

    fn drain_items(self, out: &mut Vec<(Rect, T)>) {
        match self {
            Node::Leaf(e) => out.extend(e),
            Node::Internal(c) => c.into_iter().for_each(|(_, n)| n.drain_items(out)),
        }
    }
}

/// Guttman R-tree with quadratic split.
#[derive(Debug, Clone)]
pub struct RTree<T> {
    root: Node<T>,
    len: usize,
    max_entries: usize,
    min_entries: usize,
}

impl<T: Clone + PartialEq> Default for RTree<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Clone + PartialEq> RTree<T> {
    pub const DEFAULT_MAX: usize = 8;
    pub const DEFAULT_MIN: usize = 3;

    pub fn new() -> Self {
        Self::with_fanout(Self::DEFAULT_MIN, Self::DEFAULT_MAX)
    }

    /// Panics unless `2 <= min <= ceil(max / 2)`.
    pub fn with_fanout(min: usize, max: usize) -> Self {
        assert!(min >= 2 && min <= max.div_ceil(2), "fan-out bounds violate 2 <= m <= ceil(M/2)");
        RTree { root: Node::Leaf(Vec::new()), len: 0, max_entries: max, min_entries: min }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, rect: Rect, item: T) {
        let (min, max) = (self.min_entries, self.max_entries);
        if let Some(sibling) = insert_rec(&mut self.root, rect, item, min, max) {
            let old = std::mem::replace(&mut self.root, Node::Leaf(Vec::new()));
            self.root = Node::Internal(vec![(old.mbr(), old), sibling]);
        }
        self.len += 1;
    }

    /// Removes the entry equal to `item` stored under `rect`. Underfull nodes
    /// are dissolved and their entries reinserted.
    pub fn remove(&mut self, rect: &Rect, item: &T) -> Option<T> {
        let mut orphans = Vec::new();
        let found = remove_rec(&mut self.root, rect, item, self.min_entries, &mut orphans)?;
        self.len -= 1;
        loop {
            match &mut self.root {
                Node::Internal(c) if c.len() == 1 => {
                    let (_, only) = c.pop().expect("one child");
                    self.root = only;
                }
                Node::Internal(c) if c.is_empty() => self.root = Node::Leaf(Vec::new()),
                _ => break,
            }
        }
        self.len -= orphans.len();
        for (r, t) in orphans {
            self.insert(r, t);
        }
        Some(found)
    }

    /// Items whose rectangle intersects `query`, plus the number of nodes
    /// visited.
    pub fn search(&self, query: &Rect) -> (Vec<&T>, usize) {
        let mut out = Vec::new();
        let mut visited = 0;
        if self.len > 0 {
            search_rec(&self.root, query, &mut out, &mut visited);
        }
        (out, visited)
    }

    pub fn node_count(&self) -> usize {
        fn count<T>(n: &Node<T>) -> usize {
            match n {
                Node::Leaf(_) => 1,
                Node::Internal(c) => 1 + c.iter().map(|(_, n)| count(n)).sum::<usize>(),
            }
        }
        count(&self.root)
    }

    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut n = &self.root;
        while let Node::Internal(c) = n {
            h += 1;
            n = &c[0].1;
        }
        h
    }

    /// Structural invariants: stored rectangles equal their child's MBR,
    /// non-root fan-out lies in `[m, M]`, all leaves sit at the same depth and
    /// every item is reachable.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut leaf_depth = None;
        let mut items = 0;
        self.check_node(&self.root, 0, true, &mut leaf_depth, &mut items)?;
        if items != self.len {
            return Err(format!("{items} reachable items, len is {}", self.len));
        }
        Ok(())
    }

    fn check_node(
        &self,
        node: &Node<T>,
        depth: usize,
        is_root: bool,
        leaf_depth: &mut Option<usize>,
        items: &mut usize,
    ) -> std::result::Result<(), String> {
        let n = node.len();
        if n > self.max_entries {
            return Err(format!("node at depth {depth} has {n} > M entries"));
        }
        if !is_root && n < self.min_entries {
            return Err(format!("node at depth {depth} has {n} < m entries"));
        }
        match node {
            Node::Leaf(e) => {
                *items += e.len();
                match leaf_depth {
                    None => *leaf_depth = Some(depth),
                    Some(d) if *d != depth => return Err(format!("leaves at depths {d} and {depth}")),
                    _ => {}
                }
            }
            Node::Internal(c) => {
                if is_root && c.len() < 2 {
                    return Err("internal root with fewer than two children".into());
                }
                for (r, child) in c {
                    let actual = child.mbr();
                    if !r.contains(&actual) || *r != actual {
                        return Err(format!("stored MBR {r:?} differs from child MBR {actual:?}"));
                    }
                    self.check_node(child, depth + 1, false, leaf_depth, items)?;
                }
            }
        }
        Ok(())
    }

    /// Every internal bounding rectangle with its depth below the root,
    /// in depth-first order.
    pub fn boxes(&self) -> Vec<(usize, Rect)> {
        fn rec<T>(node: &Node<T>, depth: usize, out: &mut Vec<(usize, Rect)>) {
            if let Node::Internal(c) = node {
                for (r, child) in c {
                    out.push((depth, *r));
                    rec(child, depth + 1, out);
                }
            }
        }
        let mut out = Vec::new();
        if self.len > 0 {
            out.push((0, self.root.mbr()));
            rec(&self.root, 1, &mut out);
        }
        out
    }

    /// Indented text rendering of the MBR hierarchy.
    pub fn dump(&self, label: impl Fn(&T) -> String) -> String {
        let mut out = String::new();
        dump_rec(&self.root, None, 0, &label, &mut out);
        out
    }
}

fn insert_rec<T>(node: &mut Node<T>, rect: Rect, item: T, min: usize, max: usize) -> Option<(Rect, Node<T>)> {
    match node {
        Node::Leaf(entries) => {
            entries.push((rect, item));
            if entries.len() > max {
                let (a, b) = quadratic_split(std::mem::take(entries), min);
                *entries = a;
                let sibling = Node::Leaf(b);
                return Some((sibling.mbr(), sibling));
            }
            None
        }
        Node::Internal(children) => {
            let idx = choose_subtree(children, &rect);
            let split = insert_rec(&mut children[idx].1, rect, item, min, max);
            children[idx].0 = children[idx].1.mbr();
            if let Some(s) = split {
                children.push(s);
                if children.len() > max {
                    let (a, b) = quadratic_split(std::mem::take(children), min);
                    *children = a;
                    let sibling = Node::Internal(b);
                    return Some((sibling.mbr(), sibling));
                }
            }
            None
        }
    }
}

fn choose_subtree<X>(children: &[(Rect, X)], rect: &Rect) -> usize {
    let mut best = 0;
    let mut best_key = (f64::INFINITY, f64::INFINITY);
    for (i, (r, _)) in children.iter().enumerate() {
        let key = (r.enlargement(rect), r.area());
        if key.0 < best_key.0 || (key.0 == best_key.0 && key.1 < best_key.1) {
            best = i;
            best_key = key;
        }
    }
    best
}

type Entries<X> = Vec<(Rect, X)>;

fn quadratic_split<X>(mut entries: Entries<X>, min: usize) -> (Entries<X>, Entries<X>) {
    // seeds: the pair wasting the most area when grouped
    let (mut s1, mut s2, mut worst) = (0, 1, f64::NEG_INFINITY);
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let (a, b) = (&entries[i].0, &entries[j].0);
            let waste = a.union(b).area() - a.area() - b.area();
            if waste > worst {
                worst = waste;
                s1 = i;
                s2 = j;
            }
        }
    }
    let e2 = entries.swap_remove(s2);
    let e1 = entries.swap_remove(s1);
    let (mut r1, mut r2) = (e1.0, e2.0);
    let (mut g1, mut g2) = (vec![e1], vec![e2]);
    while !entries.is_empty() {
        if g1.len() + entries.len() == min {
            g1.append(&mut entries);
            break;
        }
        if g2.len() + entries.len() == min {
            g2.append(&mut entries);
            break;
        }
        // next: the entry with the strongest preference for one group
        let mut pick = 0;
        let mut best_diff = f64::NEG_INFINITY;
        for (i, (r, _)) in entries.iter().enumerate() {
            let diff = (r1.enlargement(r) - r2.enlargement(r)).abs();
            if diff > best_diff {
                best_diff = diff;
                pick = i;
            }
        }
        let e = entries.swap_remove(pick);
        let (d1, d2) = (r1.enlargement(&e.0), r2.enlargement(&e.0));
        let to_first = if d1 != d2 {
            d1 < d2
        } else if r1.area() != r2.area() {
            r1.area() < r2.area()
        } else {
            g1.len() <= g2.len()
        };
        if to_first {
            r1 = r1.union(&e.0);
            g1.push(e);
        } else {
            r2 = r2.union(&e.0);
            g2.push(e);
        }
    }
    (g1, g2)
}

fn remove_rec<T: PartialEq>(
    node: &mut Node<T>,
    rect: &Rect,
    item: &T,
    min: usize,
    orphans: &mut Vec<(Rect, T)>,
) -> Option<T> {
    match node {
        Node::Leaf(entries) => {
            let i = entries.iter().position(|(r, t)| r == rect && t == item)?;
            Some(entries.remove(i).1)
        }
        Node::Internal(children) => {
            for i in 0..children.len() {
                if !children[i].0.contains(rect) {
                    continue;
                }
                if let Some(found) = remove_rec(&mut children[i].1, rect, item, min, orphans) {
                    if children[i].1.len() < min {
                        let (_, dissolved) = children.remove(i);
                        dissolved.drain_items(orphans);
                    } else {
                        children[i].0 = children[i].1.mbr();
                    }
                    return Some(found);
                }
            }
            None
        }
    }
}

fn search_rec<'a, T>(node: &'a Node<T>, query: &Rect, out: &mut Vec<&'a T>, visited: &mut usize) {
    *visited += 1;
    match node {
        Node::Leaf(e) => out.extend(e.iter().filter(|(r, _)| r.intersects(query)).map(|(_, t)| t)),
        Node::Internal(c) => {
            for (r, child) in c {
                if r.intersects(query) {
                    search_rec(child, query, out, visited);
                }
            }
        }
    }
}

fn dump_rec<T>(node: &Node<T>, rect: Option<&Rect>, depth: usize, label: &impl Fn(&T) -> String, out: &mut String) {
    let pad = "  ".repeat(depth);
    let fmt_rect = |r: &Rect| format!("[{:.1},{:.1} .. {:.1},{:.1}]", r.min.x, r.min.y, r.max.x, r.max.y);
    let header = rect.map(fmt_rect).unwrap_or_else(|| "root".to_string());
    match node {
        Node::Leaf(e) => {
            let _ = writeln!(out, "{pad}leaf {header} ({} entries)", e.len());
            for (r, t) in e {
                let _ = writeln!(out, "{pad}  - {} @ {}", label(t), fmt_rect(r));
            }
        }
        Node::Internal(c) => {
            let _ = writeln!(out, "{pad}node {header} ({} children)", c.len());
            for (r, child) in c {
                dump_rec(child, Some(r), depth + 1, label, out);
            }
        }
    }
}

/// Directory of cloud services. Local services are spatially indexed at
/// their cloud's location; public ones are returned regardless of distance
/// when asked for.
#[derive(Debug, Clone, Default)]
pub struct ServiceRegistry {
    tree: RTree<ServiceId>,
    located: BTreeMap<ServiceId, (Point, FunctionId)>,
    everywhere: BTreeMap<ServiceId, FunctionId>,
}

impl ServiceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `location` is `None` for services without a grid position.
    pub fn insert(&mut self, id: ServiceId, function: FunctionId, location: Option<Point>) -> Result<()> {
        if self.located.contains_key(&id) || self.everywhere.contains_key(&id) {
            return Err(Error::IdError(id));
        }
        match location {
            Some(p) => {
                self.tree.insert(Rect::point(p), id);
                self.located.insert(id, (p, function));
            }
            None => {
                self.everywhere.insert(id, function);
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, id: ServiceId) -> Result<()> {
        if let Some((p, _)) = self.located.remove(&id) {
            self.tree.remove(&Rect::point(p), &id).ok_or(Error::IdError(id))?;
            return Ok(());
        }
        self.everywhere.remove(&id).map(|_| ()).ok_or(Error::IdError(id))
    }

    pub fn len(&self) -> usize {
        self.located.len() + self.everywhere.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tree(&self) -> &RTree<ServiceId> {
        &self.tree
    }

    pub fn location(&self, id: ServiceId) -> Option<Point> {
        self.located.get(&id).map(|(p, _)| *p)
    }

    /// Services within Euclidean distance `d` of `point`, sorted by id.
    pub fn range_query(
        &self,
        point: Point,
        d: f64,
        function: Option<FunctionId>,
        include_everywhere: bool,
    ) -> Vec<ServiceId> {
        self.range_query_counted(point, d, function, include_everywhere).0
    }

    /// As [`range_query`](Self::range_query), also returning the number of
    /// tree nodes visited.
    pub fn range_query_counted(
        &self,
        point: Point,
        d: f64,
        function: Option<FunctionId>,
        include_everywhere: bool,
    ) -> (Vec<ServiceId>, usize) {
        let d = d.max(0.0);
        let (hits, visited) = self.tree.search(&Rect::around(point, d));
        let d2 = d * d;
        let mut out: Vec<ServiceId> = hits
            .into_iter()
            .filter(|id| {
                let (p, f) = self.located[id];
                p.distance_sq(point) <= d2 && function.is_none_or(|want| want == f)
            })
            .copied()
            .collect();
        if include_everywhere {
            out.extend(
                self.everywhere
                    .iter()
                    .filter(|(_, f)| function.is_none_or(|want| want == **f))
                    .map(|(id, _)| *id),
            );
        }
        out.sort_unstable();
        (out, visited)
    }

    pub fn dump(&self) -> String {
        let mut s = self.tree.dump(|id| format!("service {id}"));
        if !self.everywhere.is_empty() {
            let ids: Vec<String> = self.everywhere.keys().map(|id| id.to_string()).collect();
            let _ = writeln!(s, "everywhere: {}", ids.join(", "));
        }
        s
    }
}

#[derive(Debug)]
struct Slot {
    capacity: u32,
    used: AtomicU32,
}

/// Admission counts per local cloud. `try_admit` is an atomic
/// check-and-increment, so concurrent callers can never push a cloud past its
/// capacity.
#[derive(Debug, Default)]
pub struct CapacityLedger {
    slots: BTreeMap<NodeId, Slot>,
}

impl Clone for CapacityLedger {
    fn clone(&self) -> Self {
        CapacityLedger {
            slots: self
                .slots
                .iter()
                .map(|(id, s)| {
                    (*id, Slot { capacity: s.capacity, used: AtomicU32::new(s.used.load(Ordering::Acquire)) })
                })
                .collect(),
        }
    }
}

impl CapacityLedger {
    pub fn new(capacities: impl IntoIterator<Item = (NodeId, u32)>) -> Self {
        CapacityLedger {
            slots: capacities
                .into_iter()
                .map(|(id, capacity)| (id, Slot { capacity, used: AtomicU32::new(0) }))
                .collect(),
        }
    }

    fn slot(&self, node: NodeId) -> Result<&Slot> {
        self.slots.get(&node).ok_or(Error::UnknownCloud(node))
    }

    /// Takes one slot on `node` if one is free.
    pub fn try_admit(&self, node: NodeId) -> Result<bool> {
        let slot = self.slot(node)?;
        Ok(slot
            .used
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |n| (n < slot.capacity).then_some(n + 1))
            .is_ok())
    }

    pub fn release(&self, node: NodeId) -> Result<()> {
        let slot = self.slot(node)?;
        slot.used
            .fetch_update(Ordering::AcqRel, Ordering::Acquire, |n| n.checked_sub(1))
            .map(|_| ())
            .map_err(|_| Error::LedgerUnderflow(node))
    }

    pub fn used(&self, node: NodeId) -> Result<u32> {
        Ok(self.slot(node)?.used.load(Ordering::Acquire))
    }

    pub fn capacity(&self, node: NodeId) -> Result<u32> {
        Ok(self.slot(node)?.capacity)
    }

    pub fn remaining(&self, node: NodeId) -> u32 {
        self.slots
            .get(&node)
            .map(|s| s.capacity.saturating_sub(s.used.load(Ordering::Acquire)))
            .unwrap_or(0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.slots.keys().copied()
    }
}
