//! Scenario files: a TOML description of one experiment.
//!
//! Only `[users] count` is required; every other field has a default. See
//! `scenarios/default.toml` at the repository root for the full schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocation::{AcceptanceRule, ConstraintVector};
use crate::error::{Error, Result};
use crate::mobility::UncertaintyMode;
use crate::profiles::{LinkProfile, PriceModel, ProfileTables};
use crate::workflow::{Dimension, FunctionTable, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_id")]
    pub id: String,
    /// Master seed; every random stream is derived from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Run everything with the local clouds switched off.
    #[serde(default)]
    pub public_only: bool,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub clouds: CloudSpec,
    pub users: UserSpec,
    #[serde(default)]
    pub groups: GroupSpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub catalog: CatalogSpec,
    #[serde(default)]
    pub profiles: ProfileSpec,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub uncertainty: UncertaintySweep,
    /// Per-user limits applied to every allocation.
    #[serde(default)]
    pub budgets: ConstraintVector,
    #[serde(default)]
    pub gain: GainSpec,
}

fn default_id() -> String {
    "scenario".into()
}

fn default_repetitions() -> u32 {
    15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub width: u32,
    pub height: u32,
    /// Cell edge, meters.
    pub cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { width: 15, height: 15, cell_size: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudSpec {
    /// Number of local clouds, placed on distinct random cells unless
    /// `local_cells` pins them.
    pub local: u32,
    pub capacity: u32,
    /// Cells around a local cloud (besides its own) reached by its WiFi.
    pub wifi_cells: u32,
    pub public: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_cells: Option<Vec<u32>>,
}

impl Default for CloudSpec {
    fn default() -> Self {
        CloudSpec { local: 8, capacity: 10, wifi_cells: 6, public: 1, local_cells: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub count: u32,
    /// Seconds of simulated movement.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_speed_min")]
    pub speed_min: f64,
    #[serde(default = "default_speed_max")]
    pub speed_max: f64,
    #[serde(default = "default_pause_max")]
    pub pause_max: f64,
    /// Share of users following random waypoint; the rest walk Manhattan.
    #[serde(default = "default_share")]
    pub random_waypoint_share: f64,
    /// Workflow requests per user, evenly spread over `duration`.
    #[serde(default = "default_requests")]
    pub requests: u32,
}

fn default_duration() -> f64 {
    1800.0
}
fn default_speed_min() -> f64 {
    1.0
}
fn default_speed_max() -> f64 {
    10.0
}
fn default_pause_max() -> f64 {
    10.0
}
fn default_share() -> f64 {
    0.5
}
fn default_requests() -> u32 {
    10
}

impl UserSpec {
    pub fn with_count(count: u32) -> Self {
        UserSpec {
            count,
            duration: default_duration(),
            speed_min: default_speed_min(),
            speed_max: default_speed_max(),
            pause_max: default_pause_max(),
            random_waypoint_share: default_share(),
            requests: default_requests(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupFormation {
    /// Users close on the map share a group.
    #[default]
    Spatial,
    Random,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupSpec {
    /// Number of disjoint, near-equal groups. Zero means the single-user
    /// problem.
    pub count: u32,
    pub formation: GroupFormation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub name: String,
    /// Pattern expression, e.g. `seq(upload, and(edit, transcode), download)`.
    pub expr: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub size_kb_min: f64,
    pub size_kb_max: f64,
    /// Mix for single users.
    pub templates: Vec<TemplateSpec>,
    /// Mix when users are grouped.
    pub group_templates: Vec<TemplateSpec>,
    /// Functions billed by streaming time.
    pub streaming: Vec<String>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        let t = |name: &str, expr: &str, weight| TemplateSpec { name: name.into(), expr: expr.into(), weight };
        WorkloadSpec {
            size_kb_min: 1024.0,
            size_kb_max: 5120.0,
            templates: vec![
                t("ocrs", "seq(image_filter, ocr, text_to_speech)", 0.5),
                t("vs", "seq(transcode, stream)", 0.5),
            ],
            group_templates: vec![t("mfs", "seq(upload, and(edit, transcode), download)", 1.0)],
            streaming: vec!["stream".into()],
        }
    }
}

/// Inclusive range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogSpec {
    /// Local clouds hosting each function; absent means all of them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_per_function: Option<u32>,
    /// Public-cloud services per function.
    pub public_per_function: u32,
    /// Functions every handset can run itself.
    pub device_functions: Vec<String>,
    /// Processing delay, ms per 100 KB.
    pub device_proc_ms: Range,
    /// Handset energy, mJ per 100 KB, for on-device services.
    pub device_power_mj: Range,
    pub local_proc_ms: Range,
    pub public_proc_ms: Range,
}

impl Default for CatalogSpec {
    fn default() -> Self {
        CatalogSpec {
            local_per_function: None,
            public_per_function: 1,
            device_functions: vec!["image_filter".into(), "text_to_speech".into(), "edit".into()],
            device_proc_ms: Range::new(100.0, 200.0),
            device_power_mj: Range::new(400.0, 800.0),
            local_proc_ms: Range::new(30.0, 60.0),
            public_proc_ms: Range::new(10.0, 30.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    pub links: Vec<LinkProfile>,
    pub price: PriceModel,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        let t = ProfileTables::default();
        ProfileSpec { links: t.links, price: t.price }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Music,
    Gmusic,
    Rsa,
    Greedy,
    Bruteforce,
    All,
}

impl AlgorithmName {
    pub const CONCRETE: [AlgorithmName; 5] =
        [AlgorithmName::Music, AlgorithmName::Gmusic, AlgorithmName::Rsa, AlgorithmName::Greedy, AlgorithmName::Bruteforce];

    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Music => "music",
            AlgorithmName::Gmusic => "gmusic",
            AlgorithmName::Rsa => "rsa",
            AlgorithmName::Greedy => "greedy",
            AlgorithmName::Bruteforce => "bruteforce",
            AlgorithmName::All => "all",
        }
    }
}

impl std::str::FromStr for AlgorithmName {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::CONCRETE
            .into_iter()
            .chain([AlgorithmName::All])
            .find(|a| a.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: AlgorithmName,
    pub max_iter: u32,
    /// Initial search radius, in cells.
    pub d_th_cells: f64,
    /// Radius increment, in cells.
    pub d_r_cells: f64,
    /// Radius expansions.
    pub it: u32,
    pub t0: f64,
    pub alpha: f64,
    pub acceptance: AcceptanceRule,
    /// Enumeration limits for the optimum.
    pub plan_cap: u64,
    pub node_cap: u64,
    /// Relative optimality gap at which the search for the optimum may stop.
    pub opt_gap: f64,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        AlgorithmSpec {
            name: AlgorithmName::All,
            max_iter: 20,
            d_th_cells: 2.0,
            d_r_cells: 1.0,
            it: 15,
            t0: 0.1,
            alpha: 0.9,
            acceptance: AcceptanceRule::Metropolis,
            plan_cap: 1_000_000,
            node_cap: 20_000_000,
            opt_gap: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySweep {
    /// Share of mispredicted LTW entries, in percent; one sweep point each.
    pub levels_pct: Vec<f64>,
    pub mode: UncertaintyMode,
}

impl Default for UncertaintySweep {
    fn default() -> Self {
        UncertaintySweep { levels_pct: vec![0.0], mode: UncertaintyMode::Both }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainSpec {
    /// Also compare every algorithm against its public-only run.
    pub enabled: bool,
    /// Dimensions held at the public-only level, one comparison each.
    pub fixed: Vec<Dimension>,
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec { enabled: false, fixed: vec![Dimension::Delay, Dimension::Price] }
    }
}

impl Scenario {
    /// Every default, with `users` users.
    pub fn with_users(users: u32) -> Self {
        Scenario {
            id: default_id(),
            seed: 0,
            repetitions: default_repetitions(),
            public_only: false,
            grid: GridSpec::default(),
            clouds: CloudSpec::default(),
            users: UserSpec::with_count(users),
            groups: GroupSpec::default(),
            workload: WorkloadSpec::default(),
            catalog: CatalogSpec::default(),
            profiles: ProfileSpec::default(),
            algorithm: AlgorithmSpec::default(),
            uncertainty: UncertaintySweep::default(),
            budgets: ConstraintVector::UNBOUNDED,
            gain: GainSpec::default(),
        }
    }

    /// Parses and validates TOML text.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::scenario(span_path(text, &e), e.message().to_string()))?;
        if !table.get("users").and_then(|u| u.as_table()).is_some_and(|u| u.contains_key("count")) {
            return Err(Error::scenario("users.count", "missing required field; required fields: users.count"));
        }
        let s: Scenario =
            toml::from_str(text).map_err(|e| Error::scenario(span_path(text, &e), e.message().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// The effective scenario, defaults included, as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::scenario("", e.to_string()))
    }

    pub fn profile_tables(&self) -> ProfileTables {
        ProfileTables { links: self.profiles.links.clone(), compute: Vec::new(), price: self.profiles.price }
    }

    /// The algorithms this scenario runs, in report order. `all` expands to
    /// every allocator that applies.
    pub fn algorithms(&self) -> Vec<AlgorithmName> {
        match self.algorithm.name {
            AlgorithmName::All => AlgorithmName::CONCRETE
                .into_iter()
                .filter(|a| *a != AlgorithmName::Gmusic || self.groups.count > 0)
                .collect(),
            a => vec![a],
        }
    }

    /// Parsed workload templates (single-user mix, then group mix) over a
    /// shared function table.
    pub fn templates(&self) -> Result<(FunctionTable, Vec<Template>, Vec<Template>)> {
        let mut ft = FunctionTable::default();
        let mut parse = |list: &[TemplateSpec], key: &str| {
            list.iter()
                .enumerate()
                .map(|(i, t)| {
                    Template::parse(&t.name, &t.expr, &mut ft)
                        .map_err(|m| Error::scenario(format!("workload.{key}[{i}].expr"), m))
                })
                .collect::<Result<Vec<_>>>()
        };
        let single = parse(&self.workload.templates, "templates")?;
        let group = parse(&self.workload.group_templates, "group_templates")?;
        Ok((ft, single, group))
    }

    /// Checks every invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let err = |p: &str, m: String| Err(Error::scenario(p, m));
        if self.repetitions == 0 {
            return err("repetitions", "must be at least 1".into());
        }
        let g = &self.grid;
        if g.width == 0 || g.height == 0 {
            return err("grid", "width and height must be at least 1".into());
        }
        if !(g.cell_size > 0.0 && g.cell_size.is_finite()) {
            return err("grid.cell_size", "must be positive".into());
        }
        let cells = g.width as u64 * g.height as u64;
        let c = &self.clouds;
        if c.local as u64 > cells {
            return err("clouds.local", format!("{} local clouds do not fit on {cells} cells", c.local));
        }
        if let Some(pinned) = &c.local_cells {
            if pinned.len() != c.local as usize {
                return err("clouds.local_cells", format!("lists {} cells for {} local clouds", pinned.len(), c.local));
            }
            if let Some(bad) = pinned.iter().find(|&&x| x as u64 >= cells) {
                return err("clouds.local_cells", format!("cell {bad} is off the grid"));
            }
        }
        let u = &self.users;
        if u.count == 0 {
            return err("users.count", "must be at least 1".into());
        }
        if !(u.duration > 0.0 && u.duration.is_finite()) {
            return err("users.duration", "must be positive".into());
        }
        if !(u.speed_min > 0.0 && u.speed_min <= u.speed_max && u.speed_max.is_finite()) {
            return err("users.speed_min", "speeds must satisfy 0 < speed_min <= speed_max".into());
        }
        if !(u.pause_max >= 0.0 && u.pause_max.is_finite()) {
            return err("users.pause_max", "must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&u.random_waypoint_share) {
            return err("users.random_waypoint_share", "must lie in [0, 1]".into());
        }
        if u.requests == 0 {
            return err("users.requests", "must be at least 1".into());
        }
        if self.groups.count > u.count {
            return err("groups.count", format!("{} groups for {} users", self.groups.count, u.count));
        }
        let w = &self.workload;
        if !(w.size_kb_min > 0.0 && w.size_kb_min <= w.size_kb_max && w.size_kb_max.is_finite()) {
            return err("workload.size_kb_min", "sizes must satisfy 0 < size_kb_min <= size_kb_max".into());
        }
        check_mix(&w.templates, "workload.templates")?;
        if self.groups.count > 0 {
            check_mix(&w.group_templates, "workload.group_templates")?;
        }
        let (ft, _, _) = self.templates()?;
        for (i, f) in w.streaming.iter().enumerate() {
            if ft.get(f).is_none() {
                return err(&format!("workload.streaming[{i}]"), format!("`{f}` is not used by any template"));
            }
        }
        let cat = &self.catalog;
        for (i, f) in cat.device_functions.iter().enumerate() {
            if ft.get(f).is_none() {
                return err(&format!("catalog.device_functions[{i}]"), format!("`{f}` is not used by any template"));
            }
        }
        if let Some(k) = cat.local_per_function {
            if k > c.local {
                return err("catalog.local_per_function", format!("{k} exceeds the {} local clouds", c.local));
            }
        }
        if cat.public_per_function > 0 && c.public == 0 {
            return err("catalog.public_per_function", "public services need at least one public cloud".into());
        }
        for (name, r) in [
            ("device_proc_ms", cat.device_proc_ms),
            ("device_power_mj", cat.device_power_mj),
            ("local_proc_ms", cat.local_proc_ms),
            ("public_proc_ms", cat.public_proc_ms),
        ] {
            if !(r.min >= 0.0 && r.min <= r.max && r.max.is_finite()) {
                return err(&format!("catalog.{name}"), "range must satisfy 0 <= min <= max".into());
            }
        }
        for (i, l) in self.profiles.links.iter().enumerate() {
            if !(l.delay_per_100kb >= 0.0 && l.energy_per_100kb >= 0.0) {
                return err(&format!("profiles.links[{i}]"), "rates must be non-negative".into());
            }
        }
        let a = &self.algorithm;
        if a.name == AlgorithmName::Gmusic && self.groups.count == 0 {
            return err("algorithm.name", "gmusic needs groups.count > 0".into());
        }
        if !(a.d_th_cells > 0.0 && a.d_r_cells > 0.0 && a.it >= 1) {
            return err("algorithm", "search needs d_th_cells > 0, d_r_cells > 0 and it >= 1".into());
        }
        if a.t0.is_nan() || a.t0 <= 0.0 {
            return err("algorithm.t0", "must be positive".into());
        }
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return err("algorithm.alpha", "must lie in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&a.opt_gap) {
            return err("algorithm.opt_gap", "must lie in [0, 1)".into());
        }
        if self.uncertainty.levels_pct.is_empty() {
            return err("uncertainty.levels_pct", "needs at least one level".into());
        }
        if let Some(bad) = self.uncertainty.levels_pct.iter().find(|p| !(0.0..=100.0).contains(*p)) {
            return err("uncertainty.levels_pct", format!("{bad} lies outside [0, 100]"));
        }
        let b = &self.budgets;
        if [b.price, b.power, b.delay].iter().any(|v| v.is_nan() || *v < 0.0) {
            return err("budgets", "limits must be non-negative".into());
        }
        let mut fixed = self.gain.fixed.clone();
        fixed.sort();
        fixed.dedup();
        if fixed.len() != self.gain.fixed.len() {
            return err("gain.fixed", "dimensions must be distinct".into());
        }
        Ok(())
    }
}

fn check_mix(list: &[TemplateSpec], path: &str) -> Result<()> {
    if list.is_empty() {
        return Err(Error::scenario(path, "needs at least one template"));
    }
    for (i, t) in list.iter().enumerate() {
        if !(t.weight >= 0.0 && t.weight.is_finite()) {
            return Err(Error::scenario(format!("{path}[{i}].weight"), "must be non-negative"));
        }
    }
    let sum: f64 = list.iter().map(|t| t.weight).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::scenario(path, format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Best-effort `line:column` of a parse error.
fn span_path(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, str::len) + 1;
            format!("line {line}, column {col}")
        }
        None => "<document>".into(),
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    Scenario::from_toml(&text)
}
