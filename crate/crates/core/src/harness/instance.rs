//! Turns a scenario into concrete worlds and workloads, one per repetition.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mobility::{self, MobilityModel, MobilityParams};
use crate::model::{
    center_of_mobility, CellId, CloudNode, Host, LocationMap, MobileUser, NodeId, Service, ServiceId, UserId,
};
use crate::profiles::HostTier;
use crate::workflow::{LocationTimeWorkflow, LtwEntry, Template};
use crate::world::World;

use super::scenario::{GroupFormation, Range, Scenario, TemplateSpec};

/// Independent random streams of one repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Clouds = 1,
    Catalog = 2,
    Mobility = 3,
    Workload = 4,
    Groups = 5,
    Uncertainty = 6,
    Algorithm = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of item `index` in `stream` of repetition `repetition`.
pub fn derive_seed(master: u64, repetition: u32, stream: Stream, index: u64) -> u64 {
    [repetition as u64, stream as u64, index].into_iter().fold(splitmix64(master), |h, x| splitmix64(h ^ x))
}

/// Everything one repetition needs.
#[derive(Debug, Clone)]
pub struct Instance {
    pub world: World,
    /// Predicted LTW per user, indexed by user.
    pub ltws: Vec<LocationTimeWorkflow>,
    /// Templates `ltws` were drawn from; used when perturbing them.
    pub templates: Vec<Template>,
    /// User indices per group; empty without groups.
    pub groups: Vec<Vec<usize>>,
}

fn draw(rng: &mut ChaCha8Rng, r: Range) -> f64 {
    if r.min == r.max {
        r.min
    } else {
        rng.gen_range(r.min..=r.max)
    }
}

/// Index into `mix` drawn by weight.
fn pick_template(rng: &mut ChaCha8Rng, mix: &[TemplateSpec]) -> usize {
    let a: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, t) in mix.iter().enumerate() {
        cum += t.weight;
        if a < cum {
            return i;
        }
    }
    mix.iter().rposition(|t| t.weight > 0.0).unwrap_or(0)
}

/// Builds repetition `rep` of `scenario`.
pub fn build_instance(scenario: &Scenario, rep: u32) -> Result<Instance> {
    scenario.validate()?;
    let seed = |s, i| derive_seed(scenario.seed, rep, s, i);
    let g = &scenario.grid;
    let map = LocationMap::grid(g.width, g.height, g.cell_size)?;

    // clouds: locals first, then publics
    let c = &scenario.clouds;
    let local_cells: Vec<u32> = match &c.local_cells {
        Some(v) => v.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed(Stream::Clouds, 0));
            let mut v: Vec<u32> = sample(&mut rng, map.len(), c.local as usize).into_iter().map(|x| x as u32).collect();
            v.sort_unstable();
            v
        }
    };
    let mut clouds: Vec<CloudNode> = local_cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            let wifi = map.neighbourhood(CellId(cell), c.wifi_cells as usize);
            CloudNode::local(NodeId(i as u32), CellId(cell), c.capacity, wifi)
        })
        .collect();
    let n_local = clouds.len();
    clouds.extend((0..c.public).map(|i| CloudNode::public(NodeId((n_local as u32) + i))));

    let (functions, single, group) = scenario.templates()?;
    let grouped = scenario.groups.count > 0;
    let (mix, templates) =
        if grouped { (&scenario.workload.group_templates, group) } else { (&scenario.workload.templates, single) };
    let used: BTreeSet<_> = templates.iter().flat_map(|t| t.root.functions()).collect();

    // cloud catalog
    let cat = &scenario.catalog;
    let mut profiles = scenario.profile_tables();
    let mut services = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed(Stream::Catalog, 0));
    for f in functions.ids().filter(|f| used.contains(f)) {
        let hosts: Vec<usize> = match cat.local_per_function {
            None => (0..n_local).collect(),
            Some(k) => {
                let mut v = sample(&mut rng, n_local, k as usize).into_vec();
                v.sort_unstable();
                v
            }
        };
        for h in hosts {
            let profile = profiles.add_compute(HostTier::Local, draw(&mut rng, cat.local_proc_ms), 0.0);
            let id = ServiceId(services.len() as u32);
            services.push(Service { id, function: f, host: Host::Cloud(NodeId(h as u32)), profile });
        }
        for j in 0..cat.public_per_function {
            let profile = profiles.add_compute(HostTier::Public, draw(&mut rng, cat.public_proc_ms), 0.0);
            let id = ServiceId(services.len() as u32);
            let node = NodeId((n_local as u32) + j % c.public);
            services.push(Service { id, function: f, host: Host::Cloud(node), profile });
        }
    }

    // users, their handsets and trajectories
    let u = &scenario.users;
    let device_fns: Vec<_> = cat
        .device_functions
        .iter()
        .filter_map(|name| functions.get(name))
        .filter(|f| used.contains(f))
        .collect();
    let n = u.count as usize;
    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        let id = UserId(i as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(seed(Stream::Catalog, 1 + i as u64));
        let mut device_services = Vec::new();
        for &f in &device_fns {
            let profile =
                profiles.add_compute(HostTier::Device, draw(&mut rng, cat.device_proc_ms), draw(&mut rng, cat.device_power_mj));
            let sid = ServiceId(services.len() as u32);
            services.push(Service { id: sid, function: f, host: Host::Device(id), profile });
            device_services.push(sid);
        }
        // the first share of users walk random waypoints, the rest Manhattan
        let model = if (i as f64 + 0.5) / n as f64 <= u.random_waypoint_share {
            MobilityModel::RandomWaypoint
        } else {
            MobilityModel::Manhattan
        };
        let params = MobilityParams {
            model,
            speed_min: u.speed_min,
            speed_max: u.speed_max,
            pause_max: u.pause_max,
            duration: u.duration,
            seed: seed(Stream::Mobility, i as u64),
            step: 1.0,
        };
        let trajectory = mobility::generate(&params, &map)?;
        users.push(MobileUser { id, device_services, trajectory });
    }

    // one request per equal slice of the horizon, issued mid-slice
    let w = &scenario.workload;
    let k = u.requests as usize;
    let window = u.duration / k as f64;
    let mut ltws = Vec::with_capacity(n);
    for user in &users {
        let mut rng = ChaCha8Rng::seed_from_u64(seed(Stream::Workload, user.id.0 as u64));
        let mut entries = Vec::with_capacity(k);
        for r in 0..k {
            let t = (r as f64 + 0.5) * window;
            let cell = user
                .trajectory
                .cell_at_time(t)
                .ok_or_else(|| Error::InvalidTrajectory(format!("user {} has no position at t = {t}", user.id)))?;
            let ti = pick_template(&mut rng, mix);
            let workflow = templates[ti].instantiate(|| draw(&mut rng, Range::new(w.size_kb_min, w.size_kb_max)));
            entries.push(LtwEntry { cell, window, workflow, template: Some(ti) });
        }
        ltws.push(LocationTimeWorkflow { user: user.id, entries });
    }

    let streaming = w.streaming.iter().filter_map(|s| functions.get(s)).collect();
    let world = World::new(map, clouds, services, users, profiles, functions, streaming)?;
    let groups = if grouped {
        form_groups(&world, scenario.groups.count as usize, scenario.groups.formation, seed(Stream::Groups, 0))?
    } else {
        Vec::new()
    };
    Ok(Instance { world, ltws, templates, groups })
}

/// Position of `(x, y)` along a Hilbert curve over a `side`×`side` square,
/// `side` a power of two.
pub fn hilbert_index(side: u32, mut x: u32, mut y: u32) -> u64 {
    let mut d = 0u64;
    let mut s = side / 2;
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        d += s as u64 * s as u64 * ((3 * rx) ^ ry) as u64;
        if ry == 0 {
            if rx == 1 {
                x = side - 1 - x;
                y = side - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

/// Splits the users into `count` disjoint groups of near-equal size. Spatial
/// formation orders users by the Hilbert index of their center of mobility
/// before cutting, so groups are compact on the map.
pub fn form_groups(world: &World, count: usize, formation: GroupFormation, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = world.users.len();
    if count == 0 || count > n {
        return Err(Error::InvalidGroup(format!("cannot split {n} users into {count} groups")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    match formation {
        GroupFormation::Spatial => {
            let side = world.map.width.max(world.map.height).next_power_of_two();
            let mut keys = Vec::with_capacity(n);
            for u in &world.users {
                let (col, row) = world.map.col_row(center_of_mobility(&u.trajectory, &world.map)?);
                keys.push(hilbert_index(side, col, row));
            }
            order.sort_by_key(|&i| (keys[i], i));
        }
        GroupFormation::Random => order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    let (base, extra) = (n / count, n % count);
    let mut groups = Vec::with_capacity(count);
    let mut it = order.into_iter();
    for g in 0..count {
        let size = base + usize::from(g < extra);
        let mut members: Vec<usize> = it.by_ref().take(size).collect();
        members.sort_unstable();
        groups.push(members);
    }
    Ok(groups)
}
