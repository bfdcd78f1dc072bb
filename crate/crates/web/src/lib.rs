//! WebAssembly bindings for the browser demo in `www/`. Every entry point
//! returns a JSON string for the page to draw.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use mobicloud::harness::{run_repetition, AlgorithmName, Scenario};
use mobicloud::mobility::{generate, MobilityModel, MobilityParams};
use mobicloud::model::{center_of_mobility, LocationMap, Point, ServiceId};
use mobicloud::registry::ServiceRegistry;
use mobicloud::workflow::FunctionId;

const GRID: u32 = 15;
const CELL: f64 = 100.0;
const DESK: &str = include_str!("../../../scenarios/desk.toml");

fn js(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// SplitMix64, enough to scatter demo points.
fn scatter(seed: u64, n: usize, extent: f64) -> Vec<Point> {
    let mut z = seed;
    let mut next = || {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut x = z;
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        ((x ^ (x >> 31)) >> 11) as f64 / (1u64 << 53) as f64 * extent
    };
    (0..n).map(|_| Point::new(next(), next())).collect()
}

/// Trajectory on the 15×15 grid as dwell-weighted visits, plus the center
/// of mobility. `model` is `random_waypoint` or `manhattan`.
pub fn trajectory_json(model: &str, seed: u64, duration: f64) -> Result<Value, String> {
    let model = match model {
        "random_waypoint" => MobilityModel::RandomWaypoint,
        "manhattan" => MobilityModel::Manhattan,
        other => return Err(format!("unknown mobility model `{other}`")),
    };
    let map = LocationMap::grid(GRID, GRID, CELL).map_err(|e| e.to_string())?;
    let params = MobilityParams { model, seed, duration, ..MobilityParams::default() };
    let t = generate(&params, &map).map_err(|e| e.to_string())?;
    let center = map.center(center_of_mobility(&t, &map).map_err(|e| e.to_string())?);
    let visits: Vec<Value> = t
        .entries
        .iter()
        .map(|v| {
            let p = map.center(v.cell);
            json!({ "x": p.x, "y": p.y, "dwell": v.dwell })
        })
        .collect();
    Ok(json!({ "extent": GRID as f64 * CELL, "visits": visits, "center": { "x": center.x, "y": center.y } }))
}

/// Range query over `services` randomly placed services: which ones lie
/// within `radius` of `(x, y)`, how many tree nodes were visited, and the
/// tree's bounding boxes.
pub fn range_query_json(seed: u64, services: u32, x: f64, y: f64, radius: f64) -> Result<Value, String> {
    let extent = GRID as f64 * CELL;
    let points = scatter(seed, services as usize, extent);
    let mut reg = ServiceRegistry::new();
    for (i, p) in points.iter().enumerate() {
        reg.insert(ServiceId(i as u32), FunctionId(0), Some(*p)).map_err(|e| e.to_string())?;
    }
    let (hits, visited) = reg.range_query_counted(Point::new(x, y), radius, None, false);
    let items: Vec<Value> = points
        .iter()
        .enumerate()
        .map(|(i, p)| json!({ "x": p.x, "y": p.y, "hit": hits.contains(&ServiceId(i as u32)) }))
        .collect();
    let boxes: Vec<Value> = reg
        .tree()
        .boxes()
        .into_iter()
        .map(|(d, r)| json!({ "depth": d, "x0": r.min.x, "y0": r.min.y, "x1": r.max.x, "y1": r.max.y }))
        .collect();
    Ok(json!({
        "extent": extent,
        "services": items,
        "hits": hits.len(),
        "visited": visited,
        "nodes": reg.tree().node_count(),
        "boxes": boxes,
    }))
}

/// Every allocator on one desk-scale instance, with throughput against the
/// exact optimum.
pub fn compare_json(seed: u64, users: u32, uncertainty_pct: f64) -> Result<Value, String> {
    let mut s = Scenario::from_toml(DESK).map_err(|e| e.to_string())?;
    s.seed = seed;
    s.users.count = users;
    s.repetitions = 1;
    s.algorithm.name = AlgorithmName::All;
    s.uncertainty.levels_pct = vec![uncertainty_pct];
    s.validate().map_err(|e| e.to_string())?;
    let rows = run_repetition(&s, 0).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "algorithm": r.algorithm,
                "utility": r.utility,
                "throughput": r.throughput_pct,
                "delay_ms": r.mean_delay_ms,
                "power_mj": r.mean_power_mj,
                "price_usd": r.mean_price_usd,
                "feasible": r.feasible,
            })
        })
        .collect();
    Ok(json!({ "rows": rows }))
}

#[wasm_bindgen]
pub fn trajectory(model: &str, seed: u64, duration: f64) -> Result<String, JsError> {
    trajectory_json(model, seed, duration).map(|v| v.to_string()).map_err(js)
}

#[wasm_bindgen]
pub fn range_query(seed: u64, services: u32, x: f64, y: f64, radius: f64) -> Result<String, JsError> {
    range_query_json(seed, services, x, y, radius).map(|v| v.to_string()).map_err(js)
}

#[wasm_bindgen]
pub fn compare(seed: u64, users: u32, uncertainty_pct: f64) -> Result<String, JsError> {
    compare_json(seed, users, uncertainty_pct).map(|v| v.to_string()).map_err(js)
}
