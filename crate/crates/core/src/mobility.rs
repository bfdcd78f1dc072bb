//! Trajectory generators and prediction-error injection for location-time
//! workflows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CellId, LocationMap, Point, Trajectory, Visit};
use crate::workflow::{LocationTimeWorkflow, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MobilityModel {
    RandomWaypoint,
    Manhattan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityParams {
    pub model: MobilityModel,
    /// m/s
    pub speed_min: f64,
    pub speed_max: f64,
    /// Longest pause at a waypoint, seconds. Manhattan walkers never pause.
    pub pause_max: f64,
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    /// Discretization step, seconds.
    pub step: f64,
}

impl Default for MobilityParams {
    fn default() -> Self {
        MobilityParams {
            model: MobilityModel::RandomWaypoint,
            speed_min: 1.0,
            speed_max: 10.0,
            pause_max: 10.0,
            duration: 3600.0,
            seed: 0,
            step: 1.0,
        }
    }
}

impl MobilityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return bad("speeds must satisfy 0 < speed_min <= speed_max");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.pause_max >= 0.0 && self.pause_max.is_finite()) {
            return bad("pause_max must be non-negative");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("discretization step must be positive");
        }
        Ok(())
    }
}

/// Compass heading on the street grid. Rows grow with `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, 1),
            Heading::East => (1, 0),
            Heading::South => (0, -1),
            Heading::West => (-1, 0),
        }
    }

    fn left(self) -> Heading {
        match self {
            Heading::North => Heading::West,
            Heading::West => Heading::South,
            Heading::South => Heading::East,
            Heading::East => Heading::North,
        }
    }

    fn right(self) -> Heading {
        self.left().reverse()
    }

    fn reverse(self) -> Heading {
        self.left().left()
    }
}

/// Decision taken at a street intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Straight,
    Left,
    Right,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnEvent {
    pub turn: Turn,
    /// All four headings were available.
    pub interior: bool,
}

/// One piece of continuous motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase {
    Move { from: Point, to: Point, secs: f64 },
    Pause { at: Point, secs: f64 },
}

impl Phase {
    pub fn secs(&self) -> f64 {
        match self {
            Phase::Move { secs, .. } | Phase::Pause { secs, .. } => *secs,
        }
    }

    fn position(&self, dt: f64) -> Point {
        match *self {
            Phase::Pause { at, .. } => at,
            Phase::Move { from, to, secs } => {
                let f = if secs > 0.0 { (dt / secs).clamp(0.0, 1.0) } else { 1.0 };
                Point::new(from.x + (to.x - from.x) * f, from.y + (to.y - from.y) * f)
            }
        }
    }
}

/// Continuous path covering at least the requested duration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Path {
    pub phases: Vec<Phase>,
    pub turns: Vec<TurnEvent>,
}

impl Path {
    pub fn total_secs(&self) -> f64 {
        self.phases.iter().map(Phase::secs).sum()
    }

    /// Samples the path every `step` seconds over `[0, duration)` and merges
    /// consecutive samples in the same cell. The last step is shortened so the
    /// dwell times sum to `duration`.
    pub fn discretize(&self, map: &LocationMap, duration: f64, step: f64) -> Result<Trajectory> {
        let mut entries: Vec<Visit> = Vec::new();
        let mut phase = 0;
        let mut phase_start = 0.0;
        let mut t = 0.0;
        let mut k: u64 = 0;
        while t < duration {
            while phase + 1 < self.phases.len() && t >= phase_start + self.phases[phase].secs() {
                phase_start += self.phases[phase].secs();
                phase += 1;
            }
            let p = self.phases.get(phase).map(|ph| ph.position(t - phase_start)).ok_or_else(|| {
                Error::InvalidTrajectory("path has no phases".into())
            })?;
            let cell = map
                .cell_at(p)
                .ok_or_else(|| Error::InvalidTrajectory(format!("position ({}, {}) is off the map", p.x, p.y)))?;
            k += 1;
            let next = (k as f64 * step).min(duration);
            let dwell = next - t;
            match entries.last_mut() {
                Some(v) if v.cell == cell => v.dwell += dwell,
                _ => entries.push(Visit { cell, dwell }),
            }
            t = next;
        }
        Ok(Trajectory::new(entries))
    }
}

fn speed(params: &MobilityParams, rng: &mut ChaCha8Rng) -> f64 {
    if params.speed_min == params.speed_max {
        params.speed_min
    } else {
        rng.gen_range(params.speed_min..=params.speed_max)
    }
}

fn random_cell(map: &LocationMap, rng: &mut ChaCha8Rng) -> CellId {
    CellId(rng.gen_range(0..map.len() as u32))
}

/// Random Waypoint path: move at a per-leg uniform speed to a uniformly drawn
/// cell center, pause uniformly in `[0, pause_max]`, repeat.
pub fn random_waypoint_path(params: &MobilityParams, map: &LocationMap) -> Result<Path> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut at = map.center(random_cell(map, &mut rng));
    let mut path = Path::default();
    let mut elapsed = 0.0;
    while elapsed < params.duration {
        let to = map.center(random_cell(map, &mut rng));
        let v = speed(params, &mut rng);
        let secs = at.distance(to) / v;
        if secs > 0.0 {
            path.phases.push(Phase::Move { from: at, to, secs });
            elapsed += secs;
        }
        let pause = if params.pause_max > 0.0 { rng.gen_range(0.0..=params.pause_max) } else { 0.0 };
        if pause > 0.0 {
            path.phases.push(Phase::Pause { at: to, secs: pause });
            elapsed += pause;
        }
        at = to;
        if secs == 0.0 && pause == 0.0 && map.len() == 1 {
            // nowhere to go and no time passes: stand still for the rest
            path.phases.push(Phase::Pause { at, secs: params.duration - elapsed });
            break;
        }
    }
    Ok(path)
}

/// Manhattan path: block-by-block moves along rows and columns of cell
/// centers. At each intersection the walker goes straight with probability
/// 0.5 and turns left or right with 0.25 each, renormalized over the streets
/// that exist; at a dead end it reverses.
pub fn manhattan_path(params: &MobilityParams, map: &LocationMap) -> Result<Path> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (w, h) = (map.width as i64, map.height as i64);
    let start = random_cell(map, &mut rng);
    let (c, r) = map.col_row(start);
    let (mut col, mut row) = (c as i64, r as i64);
    let valid = |col: i64, row: i64, hd: Heading| {
        let (dx, dy) = hd.delta();
        let (nc, nr) = (col + dx, row + dy);
        nc >= 0 && nr >= 0 && nc < w && nr < h
    };
    let mut path = Path::default();
    if w == 1 && h == 1 {
        path.phases.push(Phase::Pause { at: map.center(start), secs: params.duration });
        return Ok(path);
    }
    let initial: Vec<Heading> = Heading::ALL.into_iter().filter(|hd| valid(col, row, *hd)).collect();
    let mut heading = *initial.choose(&mut rng).expect("grid larger than one cell has a street");
    let mut elapsed = 0.0;
    let mut first = true;
    while elapsed < params.duration {
        if !first {
            let options = [
                (Turn::Straight, heading, 0.5),
                (Turn::Left, heading.left(), 0.25),
                (Turn::Right, heading.right(), 0.25),
            ];
            let open: Vec<_> = options.iter().filter(|(_, hd, _)| valid(col, row, *hd)).collect();
            let interior = Heading::ALL.iter().all(|hd| valid(col, row, *hd));
            let (turn, next) = if open.is_empty() {
                (Turn::Reverse, heading.reverse())
            } else {
                let total: f64 = open.iter().map(|o| o.2).sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = open[open.len() - 1];
                for o in &open {
                    if u < o.2 {
                        pick = o;
                        break;
                    }
                    u -= o.2;
                }
                (pick.0, pick.1)
            };
            path.turns.push(TurnEvent { turn, interior });
            heading = next;
        }
        first = false;
        let (dx, dy) = heading.delta();
        let from = map.center(map.at(col as u32, row as u32));
        col += dx;
        row += dy;
        let to = map.center(map.at(col as u32, row as u32));
        let secs = map.cell_size / speed(params, &mut rng);
        path.phases.push(Phase::Move { from, to, secs });
        elapsed += secs;
    }
    Ok(path)
}

pub fn generate_random_waypoint(params: &MobilityParams, map: &LocationMap) -> Result<Trajectory> {
    random_waypoint_path(params, map)?.discretize(map, params.duration, params.step)
}

pub fn generate_manhattan(params: &MobilityParams, map: &LocationMap) -> Result<Trajectory> {
    manhattan_path(params, map)?.discretize(map, params.duration, params.step)
}

/// Dispatches on `params.model`.
pub fn generate(params: &MobilityParams, map: &LocationMap) -> Result<Trajectory> {
    match params.model {
        MobilityModel::RandomWaypoint => generate_random_waypoint(params, map),
        MobilityModel::Manhattan => generate_manhattan(params, map),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMode {
    PerturbLocation,
    PerturbService,
    /// Each perturbed entry picks location or service with equal odds.
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpec {
    /// Probability that an entry is mispredicted.
    pub rate: f64,
    pub mode: UncertaintyMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturbation {
    Location,
    Service,
}

/// Returns a copy of `ltw` in which each entry is, with probability
/// `spec.rate`, moved to a different random cell or given a freshly drawn
/// workflow (a different template when more than one exists). Leaf sizes for
/// new workflows are drawn uniformly from `size_kb`.
pub fn inject_uncertainty(
    ltw: &LocationTimeWorkflow,
    spec: &UncertaintySpec,
    map: &LocationMap,
    templates: &[Template],
    size_kb: (f64, f64),
) -> Result<LocationTimeWorkflow> {
    inject_uncertainty_traced(ltw, spec, map, templates, size_kb).map(|(l, _)| l)
}

/// As [`inject_uncertainty`], also reporting what happened to each entry.
pub fn inject_uncertainty_traced(
    ltw: &LocationTimeWorkflow,
    spec: &UncertaintySpec,
    map: &LocationMap,
    templates: &[Template],
    size_kb: (f64, f64),
) -> Result<(LocationTimeWorkflow, Vec<Option<Perturbation>>)> {
    if ltw.entries.is_empty() {
        return Err(Error::InvalidInput("location-time workflow has no entries".into()));
    }
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::InvalidInput(format!("uncertainty rate {} outside [0, 1]", spec.rate)));
    }
    if !(size_kb.0 > 0.0 && size_kb.0 <= size_kb.1) {
        return Err(Error::InvalidInput("size range must satisfy 0 < lo <= hi".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = ltw.clone();
    let mut trace = Vec::with_capacity(out.entries.len());
    for entry in &mut out.entries {
        if !rng.gen_bool(spec.rate) {
            trace.push(None);
            continue;
        }
        let kind = match spec.mode {
            UncertaintyMode::PerturbLocation => Perturbation::Location,
            UncertaintyMode::PerturbService => Perturbation::Service,
            UncertaintyMode::Both if rng.gen_bool(0.5) => Perturbation::Location,
            UncertaintyMode::Both => Perturbation::Service,
        };
        match kind {
            Perturbation::Location if map.len() > 1 => {
                // uniform over the other cells
                let mut c = rng.gen_range(0..map.len() as u32 - 1);
                if c >= entry.cell.0 {
                    c += 1;
                }
                entry.cell = CellId(c);
            }
            Perturbation::Service if !templates.is_empty() => {
                let idx = match entry.template {
                    Some(cur) if templates.len() > 1 => {
                        let mut i = rng.gen_range(0..templates.len() - 1);
                        if i >= cur {
                            i += 1;
                        }
                        i
                    }
                    Some(cur) => cur,
                    None => rng.gen_range(0..templates.len()),
                };
                let (lo, hi) = size_kb;
                entry.workflow = templates[idx].instantiate(|| if lo == hi { lo } else { rng.gen_range(lo..=hi) });
                entry.template = Some(idx);
            }
            _ => {}
        }
        trace.push(Some(kind));
    }
    Ok((out, trace))
}
