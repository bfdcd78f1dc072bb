//! Region grid, cloud tiers, services, users and groups.
//!
//! Everything here is built once per scenario instance and then only read.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workflow::FunctionId;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// Row-major index of a grid cell.
    CellId
);
id_type!(NodeId);
id_type!(ServiceId);
id_type!(UserId);
id_type!(GroupId);
id_type!(
    /// Index into the compute profile table.
    ProfileId
);

/// A position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub center: Point,
    /// Local cloud whose access point reaches this cell, if any. When several
    /// overlap, the lowest node id is recorded.
    pub wifi_covered_by: Option<NodeId>,
}

/// A `width` x `height` grid of square cells partitioning the region
/// `[0, width*cell_size) x [0, height*cell_size)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMap {
    pub width: u32,
    pub height: u32,
    pub cell_size: f64,
    pub cells: Vec<Cell>,
}

impl LocationMap {
    pub fn grid(width: u32, height: u32, cell_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("grid dimensions must be positive".into()));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidInput("cell size must be positive".into()));
        }
        let mut cells = Vec::with_capacity((width * height) as usize);
        for row in 0..height {
            for col in 0..width {
                cells.push(Cell {
                    id: CellId(row * width + col),
                    center: Point::new(
                        (col as f64 + 0.5) * cell_size,
                        (row as f64 + 0.5) * cell_size,
                    ),
                    wifi_covered_by: None,
                });
            }
        }
        Ok(LocationMap {
            width,
            height,
            cell_size,
            cells,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        )
    }

    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        self.cells.get(id.index())
    }

    pub fn contains(&self, id: CellId) -> bool {
        id.index() < self.cells.len()
    }

    pub fn center(&self, id: CellId) -> Point {
        self.cells[id.index()].center
    }

    pub fn col_row(&self, id: CellId) -> (u32, u32) {
        (id.0 % self.width, id.0 / self.width)
    }

    pub fn at(&self, col: u32, row: u32) -> CellId {
        CellId(row * self.width + col)
    }

    /// The cell containing `p`. Points on the far boundary are clamped into
    /// the last row/column so the whole closed rectangle is covered.
    pub fn cell_at(&self, p: Point) -> Option<CellId> {
        let (w, h) = self.extent();
        if !(p.x >= 0.0 && p.y >= 0.0 && p.x <= w && p.y <= h) {
            return None;
        }
        let col = ((p.x / self.cell_size) as u32).min(self.width - 1);
        let row = ((p.y / self.cell_size) as u32).min(self.height - 1);
        Some(self.at(col, row))
    }

    /// Cell whose center is nearest to `p`, lowest id on ties.
    pub fn nearest_cell(&self, p: Point) -> CellId {
        let mut best = self.cells[0].id;
        let mut best_d = f64::INFINITY;
        for c in &self.cells {
            let d = c.center.distance_sq(p);
            if d < best_d {
                best_d = d;
                best = c.id;
            }
        }
        best
    }

    /// `cell` followed by the `extra` cells nearest to it (center distance,
    /// lowest id on ties).
    pub fn neighbourhood(&self, cell: CellId, extra: usize) -> Vec<CellId> {
        let origin = self.center(cell);
        let mut others: Vec<(f64, CellId)> = self
            .cells
            .iter()
            .filter(|c| c.id != cell)
            .map(|c| (c.center.distance_sq(origin), c.id))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        std::iter::once(cell)
            .chain(others.into_iter().take(extra).map(|(_, id)| id))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CloudTier {
    /// A capacity-limited cloud attached to a WiFi access point.
    Local {
        cell: CellId,
        capacity: u32,
        /// Cells inside the access point's WiFi range, including `cell`.
        wifi_cells: Vec<CellId>,
    },
    /// Off-grid, unbounded capacity.
    Public,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudNode {
    pub id: NodeId,
    pub tier: CloudTier,
}

impl CloudNode {
    pub fn local(id: NodeId, cell: CellId, capacity: u32, wifi_cells: Vec<CellId>) -> Self {
        CloudNode {
            id,
            tier: CloudTier::Local {
                cell,
                capacity,
                wifi_cells,
            },
        }
    }

    pub fn public(id: NodeId) -> Self {
        CloudNode {
            id,
            tier: CloudTier::Public,
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(self.tier, CloudTier::Local { .. })
    }

    pub fn cell(&self) -> Option<CellId> {
        match &self.tier {
            CloudTier::Local { cell, .. } => Some(*cell),
            CloudTier::Public => None,
        }
    }

    pub fn capacity(&self) -> Option<u32> {
        match &self.tier {
            CloudTier::Local { capacity, .. } => Some(*capacity),
            CloudTier::Public => None,
        }
    }

    pub fn covers(&self, cell: CellId) -> bool {
        match &self.tier {
            CloudTier::Local { wifi_cells, .. } => wifi_cells.contains(&cell),
            CloudTier::Public => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Host {
    Device(UserId),
    Cloud(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Service {
    pub id: ServiceId,
    pub function: FunctionId,
    pub host: Host,
    pub profile: ProfileId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub cell: CellId,
    /// Seconds spent in `cell`.
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub entries: Vec<Visit>,
}

impl Trajectory {
    pub fn new(entries: Vec<Visit>) -> Self {
        Trajectory { entries }
    }

    pub fn total_time(&self) -> f64 {
        self.entries.iter().map(|v| v.dwell).sum()
    }

    /// Cell occupied at time `t` (seconds from the start). Times past the end
    /// map to the last cell.
    pub fn cell_at_time(&self, t: f64) -> Option<CellId> {
        let mut acc = 0.0;
        for v in &self.entries {
            acc += v.dwell;
            if t < acc {
                return Some(v.cell);
            }
        }
        self.entries.last().map(|v| v.cell)
    }

    pub fn validate(&self, map: &LocationMap) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidTrajectory("trajectory is empty".into()));
        }
        for v in &self.entries {
            if !map.contains(v.cell) {
                return Err(Error::InvalidTrajectory(format!("cell {} is off the map", v.cell)));
            }
            if !(v.dwell > 0.0 && v.dwell.is_finite()) {
                return Err(Error::InvalidTrajectory(format!(
                    "dwell time {} in cell {} is not positive",
                    v.dwell, v.cell
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobileUser {
    pub id: UserId,
    pub device_services: Vec<ServiceId>,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGroup {
    pub id: GroupId,
    pub members: Vec<UserId>,
}

/// Dwell-time weighted mean of the visited cell centers.
pub fn weighted_mean_position(trajectory: &Trajectory, map: &LocationMap) -> Result<Point> {
    trajectory.validate(map)?;
    let (mut sx, mut sy, mut total) = (0.0, 0.0, 0.0);
    for v in &trajectory.entries {
        let c = map.center(v.cell);
        sx += c.x * v.dwell;
        sy += c.y * v.dwell;
        total += v.dwell;
    }
    Ok(Point::new(sx / total, sy / total))
}

/// The cell where (or near where) the user spends most of their time: the
/// cell whose center is closest to the dwell-weighted mean position.
pub fn center_of_mobility(trajectory: &Trajectory, map: &LocationMap) -> Result<CellId> {
    let mean = weighted_mean_position(trajectory, map)?;
    Ok(map.nearest_cell(mean))
}

/// Mean of the members' center-of-mobility cell centers, plus the cell nearest
/// to that mean.
pub fn center_of_group_mobility(
    group: &UserGroup,
    users: &[MobileUser],
    map: &LocationMap,
) -> Result<(Point, CellId)> {
    if group.members.is_empty() {
        return Err(Error::InvalidGroup(format!("group {} has no members", group.id)));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for member in &group.members {
        let user = users
            .iter()
            .find(|u| u.id == *member)
            .ok_or_else(|| Error::InvalidGroup(format!("unknown member {member}")))?;
        let c = map.center(center_of_mobility(&user.trajectory, map)?);
        sx += c.x;
        sy += c.y;
    }
    let n = group.members.len() as f64;
    let mean = Point::new(sx / n, sy / n);
    Ok((mean, map.nearest_cell(mean)))
}
