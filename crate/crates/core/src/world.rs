//! A fully built scenario instance: grid, clouds, services, users, cost
//! tables and the service registry.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{CellId, CloudNode, CloudTier, Host, LocationMap, MobileUser, NodeId, Service, ServiceId, UserId};
use crate::profiles::{Billing, HostTier, InvocationContext, Link, ProfileTables};
use crate::registry::{CapacityLedger, ServiceRegistry};
use crate::workflow::{FunctionId, FunctionNode, FunctionTable, QoS};

#[derive(Debug, Clone)]
pub struct World {
    pub map: LocationMap,
    /// Indexed by `NodeId`.
    pub clouds: Vec<CloudNode>,
    /// Indexed by `ServiceId`.
    pub services: Vec<Service>,
    /// Indexed by `UserId`.
    pub users: Vec<MobileUser>,
    pub profiles: ProfileTables,
    pub functions: FunctionTable,
    /// Functions billed by streaming time rather than compute time.
    pub streaming: BTreeSet<FunctionId>,
    registry: ServiceRegistry,
    /// Cloud-hosted services per function.
    cloud_by_function: Vec<Vec<ServiceId>>,
}

impl World {
    pub fn new(
        mut map: LocationMap,
        clouds: Vec<CloudNode>,
        services: Vec<Service>,
        users: Vec<MobileUser>,
        profiles: ProfileTables,
        functions: FunctionTable,
        streaming: BTreeSet<FunctionId>,
    ) -> Result<World> {
        for (i, c) in clouds.iter().enumerate() {
            if c.id.index() != i {
                return Err(Error::InvalidInput(format!("cloud {} stored at position {i}", c.id)));
            }
            if let CloudTier::Local { cell, wifi_cells, .. } = &c.tier {
                if !map.contains(*cell) || wifi_cells.iter().any(|w| !map.contains(*w)) {
                    return Err(Error::InvalidInput(format!("local cloud {} references a cell off the map", c.id)));
                }
            }
        }
        for cell in &mut map.cells {
            cell.wifi_covered_by = clouds.iter().find(|c| c.covers(cell.id)).map(|c| c.id);
        }
        let mut registry = ServiceRegistry::new();
        let mut cloud_by_function = vec![Vec::new(); functions.len()];
        for (i, s) in services.iter().enumerate() {
            if s.id.index() != i {
                return Err(Error::IdError(s.id));
            }
            if s.function.0 as usize >= functions.len() {
                return Err(Error::NoRealizingService(s.function));
            }
            profiles.compute(s.profile)?;
            match s.host {
                Host::Device(u) => {
                    let owner = users.get(u.index()).filter(|m| m.id == u).ok_or_else(|| {
                        Error::InvalidInput(format!("service {} belongs to unknown user {u}", s.id))
                    })?;
                    if !owner.device_services.contains(&s.id) {
                        return Err(Error::InvalidInput(format!("user {u} does not list device service {}", s.id)));
                    }
                }
                Host::Cloud(n) => {
                    let node = clouds.get(n.index()).ok_or(Error::UnknownCloud(n))?;
                    let at = node.cell().map(|c| map.center(c));
                    registry.insert(s.id, s.function, at)?;
                    cloud_by_function[s.function.0 as usize].push(s.id);
                }
            }
        }
        for (i, u) in users.iter().enumerate() {
            if u.id.index() != i {
                return Err(Error::InvalidInput(format!("user {} stored at position {i}", u.id)));
            }
            for s in &u.device_services {
                match services.get(s.index()).map(|s| s.host) {
                    Some(Host::Device(owner)) if owner == u.id => {}
                    _ => return Err(Error::InvalidInput(format!("user {} lists foreign service {s}", u.id))),
                }
            }
        }
        Ok(World { map, clouds, services, users, profiles, functions, streaming, registry, cloud_by_function })
    }

    pub fn registry(&self) -> &ServiceRegistry {
        &self.registry
    }

    pub fn service(&self, id: ServiceId) -> Result<&Service> {
        self.services.get(id.index()).ok_or(Error::IdError(id))
    }

    pub fn user(&self, id: UserId) -> Result<&MobileUser> {
        self.users
            .get(id.index())
            .ok_or_else(|| Error::InvalidInput(format!("unknown user {id}")))
    }

    pub fn local_clouds(&self) -> impl Iterator<Item = &CloudNode> {
        self.clouds.iter().filter(|c| c.is_local())
    }

    pub fn ledger(&self) -> CapacityLedger {
        CapacityLedger::new(self.local_clouds().map(|c| (c.id, c.capacity().unwrap_or(0))))
    }

    /// Cloud hosting `service`, if it is not on a device.
    pub fn host_cloud(&self, service: ServiceId) -> Option<NodeId> {
        match self.services.get(service.index())?.host {
            Host::Cloud(n) => Some(n),
            Host::Device(_) => None,
        }
    }

    /// Local cloud hosting `service`, if any.
    pub fn host_local(&self, service: ServiceId) -> Option<NodeId> {
        self.host_cloud(service).filter(|n| self.clouds[n.index()].is_local())
    }

    /// Every service `user` could use for `function`: its own device services
    /// plus all cloud services, sorted by id.
    pub fn candidate_services(&self, function: FunctionId, user: UserId) -> Result<Vec<ServiceId>> {
        let u = self.user(user)?;
        let mut out: Vec<ServiceId> = u
            .device_services
            .iter()
            .copied()
            .filter(|s| self.services[s.index()].function == function)
            .collect();
        if let Some(cloud) = self.cloud_by_function.get(function.0 as usize) {
            out.extend(cloud);
        }
        if out.is_empty() {
            return Err(Error::NoRealizingService(function));
        }
        out.sort_unstable();
        Ok(out)
    }

    /// WiFi reaches a local cloud only inside its own access point's range,
    /// and the public cloud from any covered cell; everything else goes over
    /// 3G.
    pub fn access_link(&self, cell: CellId, node: NodeId) -> Link {
        let wifi = match self.clouds[node.index()].tier {
            CloudTier::Local { .. } => self.clouds[node.index()].covers(cell),
            CloudTier::Public => self.map.cells[cell.index()].wifi_covered_by.is_some(),
        };
        if wifi {
            Link::WiFi
        } else {
            Link::Cellular
        }
    }

    fn context(&self, cell: Option<CellId>, window: f64, leaf: &FunctionNode, service: &Service) -> InvocationContext {
        let ctx = match service.host {
            Host::Device(_) => InvocationContext::on_device(leaf.input_kb),
            Host::Cloud(n) => {
                let tier = if self.clouds[n.index()].is_local() { HostTier::Local } else { HostTier::Public };
                let link = cell.map_or(Link::WiFi, |c| self.access_link(c, n));
                InvocationContext::cloud(tier, link, leaf.input_kb)
            }
        };
        if self.streaming.contains(&leaf.function) {
            ctx.with_billing(Billing::Streaming { hours: window / 3600.0 })
        } else {
            ctx
        }
    }

    /// QoS of running `leaf` on `service` for a user standing in `cell` during
    /// a window of `window` seconds, without any inter-cloud hop.
    pub fn leaf_qos(&self, user: UserId, cell: CellId, window: f64, leaf: &FunctionNode, service: ServiceId) -> Result<QoS> {
        let s = self.service(service)?;
        if s.function != leaf.function {
            return Err(Error::InvalidInput(format!(
                "service {service} implements {} but the leaf needs {}",
                s.function, leaf.function
            )));
        }
        if let Host::Device(owner) = s.host {
            if owner != user {
                return Err(Error::InvalidInput(format!("service {service} is on another user's device")));
            }
        }
        if !self.map.contains(cell) {
            return Err(Error::InvalidInput(format!("cell {cell} is off the map")));
        }
        self.profiles.invocation_qos(&self.context(Some(cell), window, leaf, s), s.profile)
    }

    /// Advertised QoS of `service` for `leaf`: what it delivers over WiFi,
    /// independent of where the user is.
    pub fn nominal_qos(&self, window: f64, leaf: &FunctionNode, service: ServiceId) -> Result<QoS> {
        let s = self.service(service)?;
        if s.function != leaf.function {
            return Err(Error::InvalidInput(format!(
                "service {service} implements {} but the leaf needs {}",
                s.function, leaf.function
            )));
        }
        self.profiles.invocation_qos(&self.context(None, window, leaf, s), s.profile)
    }

    /// Extra cost when `leaf`'s input arrives from a different cloud.
    pub fn hop_qos(&self, leaf: &FunctionNode, service: ServiceId) -> Result<QoS> {
        let s = self.service(service)?;
        let Host::Cloud(n) = s.host else {
            return Ok(QoS::ZERO);
        };
        let tier = if self.clouds[n.index()].is_local() { HostTier::Local } else { HostTier::Public };
        let base = InvocationContext::cloud(tier, Link::WiFi, leaf.input_kb);
        let delay = self.profiles.link_delay(&base.with_hop(true))? - self.profiles.link_delay(&base)?;
        Ok(QoS::new(0.0, 0.0, delay))
    }

    /// The same instance with every local cloud switched off: no local
    /// services, no WiFi, zero capacity. Ids stay valid. Idempotent.
    pub fn public_only(&self) -> World {
        let mut w = self.clone();
        for c in &mut w.clouds {
            if let CloudTier::Local { capacity, wifi_cells, .. } = &mut c.tier {
                *capacity = 0;
                wifi_cells.clear();
            }
        }
        for cell in &mut w.map.cells {
            cell.wifi_covered_by = None;
        }
        let locals: Vec<ServiceId> = w
            .services
            .iter()
            .filter(|s| matches!(s.host, Host::Cloud(n) if w.clouds[n.index()].is_local()))
            .map(|s| s.id)
            .collect();
        for id in &locals {
            if w.registry.location(*id).is_some() {
                w.registry.remove(*id).expect("local service was registered");
            }
        }
        for list in &mut w.cloud_by_function {
            list.retain(|s| !locals.contains(s));
        }
        w
    }

    pub fn has_local_clouds(&self) -> bool {
        self.local_clouds().any(|c| c.capacity().unwrap_or(0) > 0)
            && self.cloud_by_function.iter().flatten().any(|s| self.host_local(*s).is_some())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::{ProfileId, Trajectory, Visit};

    /// 5x5 grid of 100 m cells, one local cloud at cell 12 covering it and
    /// its four neighbours, one public cloud. Functions f0, f1; each has a
    /// local and a public service, f0 also a device service for user 0.
    pub(crate) fn small_world() -> World {
        let map = LocationMap::grid(5, 5, 100.0).unwrap();
        let mut ft = FunctionTable::default();
        let f0 = ft.intern("f0");
        let f1 = ft.intern("f1");
        let mut profiles = ProfileTables::default();
        let dev = profiles.add_compute(HostTier::Device, 150.0, 600.0);
        let loc = profiles.add_compute(HostTier::Local, 40.0, 0.0);
        let publ = profiles.add_compute(HostTier::Public, 20.0, 0.0);
        let clouds = vec![
            CloudNode::local(NodeId(0), CellId(12), 1, vec![CellId(12), CellId(7), CellId(11), CellId(13), CellId(17)]),
            CloudNode::public(NodeId(1)),
        ];
        let svc = |id, f, host, p: ProfileId| Service { id: ServiceId(id), function: f, host, profile: p };
        let services = vec![
            svc(0, f0, Host::Cloud(NodeId(0)), loc),
            svc(1, f0, Host::Cloud(NodeId(1)), publ),
            svc(2, f1, Host::Cloud(NodeId(0)), loc),
            svc(3, f1, Host::Cloud(NodeId(1)), publ),
            svc(4, f0, Host::Device(UserId(0)), dev),
        ];
        let users = vec![
            MobileUser {
                id: UserId(0),
                device_services: vec![ServiceId(4)],
                trajectory: Trajectory::new(vec![Visit { cell: CellId(12), dwell: 600.0 }]),
            },
            MobileUser {
                id: UserId(1),
                device_services: vec![],
                trajectory: Trajectory::new(vec![Visit { cell: CellId(0), dwell: 600.0 }]),
            },
        ];
        World::new(map, clouds, services, users, profiles, ft, BTreeSet::new()).unwrap()
    }

    #[test]
    fn candidates_union_device_and_cloud() {
        let w = small_world();
        assert_eq!(
            w.candidate_services(FunctionId(0), UserId(0)).unwrap(),
            vec![ServiceId(0), ServiceId(1), ServiceId(4)]
        );
        assert_eq!(w.candidate_services(FunctionId(0), UserId(1)).unwrap(), vec![ServiceId(0), ServiceId(1)]);
        assert!(matches!(
            w.candidate_services(FunctionId(9), UserId(0)),
            Err(Error::NoRealizingService(FunctionId(9)))
        ));
    }

    #[test]
    fn link_follows_coverage() {
        let w = small_world();
        assert_eq!(w.access_link(CellId(12), NodeId(0)), Link::WiFi);
        assert_eq!(w.access_link(CellId(0), NodeId(0)), Link::Cellular);
        assert_eq!(w.access_link(CellId(7), NodeId(1)), Link::WiFi);
        assert_eq!(w.access_link(CellId(0), NodeId(1)), Link::Cellular);
        assert_eq!(w.map.cells[7].wifi_covered_by, Some(NodeId(0)));
    }

    #[test]
    fn local_wifi_is_free_and_public_3g_is_not() {
        let w = small_world();
        let leaf = FunctionNode { function: FunctionId(0), input_kb: 2048.0 };
        let local = w.leaf_qos(UserId(0), CellId(12), 60.0, &leaf, ServiceId(0)).unwrap();
        assert_eq!(local.price, 0.0);
        assert!((local.delay - (40.0 * 2048.0 / 100.0 + 220.0)).abs() < 1e-9);
        let public = w.leaf_qos(UserId(1), CellId(0), 60.0, &leaf, ServiceId(1)).unwrap();
        assert!(public.price > 0.0 && public.delay > local.delay && public.power > local.power);
        assert!(w.leaf_qos(UserId(1), CellId(0), 60.0, &leaf, ServiceId(4)).is_err());
        let hop = w.hop_qos(&leaf, ServiceId(1)).unwrap();
        assert_eq!(hop, QoS::new(0.0, 0.0, 20.0));
        assert_eq!(w.hop_qos(&leaf, ServiceId(4)).unwrap(), QoS::ZERO);
    }

    #[test]
    fn public_only_drops_local_tier() {
        let w = small_world().public_only();
        assert_eq!(w.candidate_services(FunctionId(1), UserId(0)).unwrap(), vec![ServiceId(3)]);
        assert_eq!(w.access_link(CellId(12), NodeId(1)), Link::Cellular);
        assert_eq!(w.ledger().capacity(NodeId(0)).unwrap(), 0);
        assert!(!w.has_local_clouds());
        assert!(small_world().has_local_clouds());
    }
}
