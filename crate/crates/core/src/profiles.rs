//! Delay, device energy and price of a single service invocation.
//!
//! Link and processing costs are linear in the data size, expressed per
//! 100 KB. The default link table is chosen so that a 2 MB (2048 KB) transfer
//! reproduces the measured averages for an Android handset talking to a local
//! campus cloud and to a large public-cloud instance:
//!
//! | link  | tier   | delay (ms) | energy (mJ) |
//! |-------|--------|-----------:|------------:|
//! | WiFi  | local  |        220 |       15435 |
//! | WiFi  | public |        240 |       19345 |
//! | 3G    | local  |       4426 |       26156 |
//! | 3G    | public |       5128 |       27345 |
//!
//! Each per-100 KB constant is the 2 MB figure times 100/2048; the division by
//! a power of two is exact, so the 2 MB points come back bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProfileId;

/// Kilobytes per 100 KB unit.
const UNIT_KB: f64 = 100.0;
const KB_PER_GB: f64 = 1024.0 * 1024.0;
const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    WiFi,
    #[serde(rename = "3g")]
    Cellular,
    InterCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudKind {
    Local,
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HostTier {
    Device,
    Local,
    Public,
}

impl HostTier {
    pub fn cloud(self) -> Option<CloudKind> {
        match self {
            HostTier::Device => None,
            HostTier::Local => Some(CloudKind::Local),
            HostTier::Public => Some(CloudKind::Public),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub link: Link,
    pub tier: CloudKind,
    pub delay_per_100kb: f64,
    pub energy_per_100kb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeProfile {
    pub id: ProfileId,
    pub tier: HostTier,
    /// Processing delay per 100 KB of input, in ms.
    pub proc_delay_per_100kb: f64,
    /// Energy drawn on the handset per 100 KB; only charged for on-device
    /// services.
    pub device_power_per_100kb: f64,
}

/// Dollar rates. Local clouds and WiFi are free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceModel {
    /// Large public instance, $/hour.
    pub public_compute_per_hour: f64,
    /// Object storage, $/GB.
    pub storage_per_gb: f64,
    /// Public data transfer, $/GB.
    pub transfer_per_gb: f64,
    /// Media streaming server, $/hour.
    pub streaming_per_hour: f64,
    /// Cellular data plan, $/GB ($40 per 2 GB).
    pub cellular_per_gb: f64,
}

impl Default for PriceModel {
    fn default() -> Self {
        PriceModel {
            public_compute_per_hour: 0.52,
            storage_per_gb: 0.14,
            transfer_per_gb: 0.1,
            streaming_per_hour: 0.15,
            cellular_per_gb: 40.0 / 2.0,
        }
    }
}

/// How a public service is billed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Billing {
    /// Share of the compute instance for the processing time.
    Compute,
    /// Wall-clock streaming time, in hours.
    Streaming { hours: f64 },
}

/// Everything the cost functions need to know about one invocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvocationContext {
    pub host: HostTier,
    /// Access link used to reach a cloud host; `None` for on-device services.
    pub link: Option<Link>,
    pub data_kb: f64,
    /// The previous `Seq` step ran on a different cloud, so the input crosses
    /// the inter-cloud backbone.
    pub inter_cloud_hop: bool,
    pub billing: Billing,
}

impl InvocationContext {
    pub fn on_device(data_kb: f64) -> Self {
        InvocationContext {
            host: HostTier::Device,
            link: None,
            data_kb,
            inter_cloud_hop: false,
            billing: Billing::Compute,
        }
    }

    pub fn cloud(host: HostTier, link: Link, data_kb: f64) -> Self {
        InvocationContext { host, link: Some(link), data_kb, inter_cloud_hop: false, billing: Billing::Compute }
    }

    pub fn with_hop(mut self, hop: bool) -> Self {
        self.inter_cloud_hop = hop;
        self
    }

    pub fn with_billing(mut self, billing: Billing) -> Self {
        self.billing = billing;
        self
    }
}

/// Link and compute tables plus the price model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTables {
    pub links: Vec<LinkProfile>,
    pub compute: Vec<ComputeProfile>,
    pub price: PriceModel,
}

const TWO_MB_KB: f64 = 2048.0;

impl Default for ProfileTables {
    fn default() -> Self {
        let row = |link, tier, delay_2mb: f64, energy_2mb: f64| LinkProfile {
            link,
            tier,
            delay_per_100kb: delay_2mb * UNIT_KB / TWO_MB_KB,
            energy_per_100kb: energy_2mb * UNIT_KB / TWO_MB_KB,
        };
        let wifi_local_delay = 220.0;
        let wifi_public_delay = 240.0;
        // Inter-cloud delay is not measured directly; it is taken as the
        // extra WiFi delay of the public cloud over the local one.
        let inter_cloud = wifi_public_delay - wifi_local_delay;
        ProfileTables {
            links: vec![
                row(Link::WiFi, CloudKind::Local, wifi_local_delay, 15435.0),
                row(Link::WiFi, CloudKind::Public, wifi_public_delay, 19345.0),
                row(Link::Cellular, CloudKind::Local, 4426.0, 26156.0),
                row(Link::Cellular, CloudKind::Public, 5128.0, 27345.0),
                row(Link::InterCloud, CloudKind::Local, inter_cloud, 0.0),
                row(Link::InterCloud, CloudKind::Public, inter_cloud, 0.0),
            ],
            compute: Vec::new(),
            price: PriceModel::default(),
        }
    }
}

impl ProfileTables {
    pub fn link(&self, link: Link, tier: CloudKind) -> Result<&LinkProfile> {
        self.links
            .iter()
            .find(|l| l.link == link && l.tier == tier)
            .ok_or_else(|| Error::MissingProfile(format!("{link:?} link to {tier:?} cloud")))
    }

    pub fn compute(&self, id: ProfileId) -> Result<&ComputeProfile> {
        self.compute
            .get(id.index())
            .filter(|p| p.id == id)
            .ok_or_else(|| Error::MissingProfile(format!("compute profile {id}")))
    }

    pub fn add_compute(&mut self, tier: HostTier, proc_delay_per_100kb: f64, device_power_per_100kb: f64) -> ProfileId {
        let id = ProfileId(self.compute.len() as u32);
        self.compute.push(ComputeProfile { id, tier, proc_delay_per_100kb, device_power_per_100kb });
        id
    }

    fn access(&self, ctx: &InvocationContext) -> Result<Option<&LinkProfile>> {
        match (ctx.host.cloud(), ctx.link) {
            (None, _) => Ok(None),
            (Some(tier), Some(link)) => self.link(link, tier).map(Some),
            (Some(_), None) => Err(Error::MissingProfile("cloud invocation without an access link".into())),
        }
    }

    fn hop(&self, ctx: &InvocationContext) -> Result<f64> {
        match (ctx.inter_cloud_hop, ctx.host.cloud()) {
            (true, Some(tier)) => Ok(self.link(Link::InterCloud, tier)?.delay_per_100kb * ctx.data_kb / UNIT_KB),
            _ => Ok(0.0),
        }
    }

    /// Processing part of the delay, in ms.
    pub fn processing_delay(&self, ctx: &InvocationContext, profile: ProfileId) -> Result<f64> {
        Ok(self.compute(profile)?.proc_delay_per_100kb * ctx.data_kb / UNIT_KB)
    }

    /// Communication part of the delay (access link plus inter-cloud hop), in ms.
    pub fn link_delay(&self, ctx: &InvocationContext) -> Result<f64> {
        let access = match self.access(ctx)? {
            Some(l) => l.delay_per_100kb * ctx.data_kb / UNIT_KB,
            None => 0.0,
        };
        Ok(access + self.hop(ctx)?)
    }

    /// Communication part of the device energy, in mJ.
    pub fn link_energy(&self, ctx: &InvocationContext) -> Result<f64> {
        Ok(match self.access(ctx)? {
            Some(l) => l.energy_per_100kb * ctx.data_kb / UNIT_KB,
            None => 0.0,
        })
    }

    pub fn service_delay(&self, ctx: &InvocationContext, profile: ProfileId) -> Result<f64> {
        Ok(self.processing_delay(ctx, profile)? + self.link_delay(ctx)?)
    }

    /// Energy drawn on the handset. Cloud-side energy is not the user's.
    pub fn service_power(&self, ctx: &InvocationContext, profile: ProfileId) -> Result<f64> {
        let p = self.compute(profile)?;
        let device = match ctx.host {
            HostTier::Device => p.device_power_per_100kb * ctx.data_kb / UNIT_KB,
            _ => 0.0,
        };
        Ok(device + self.link_energy(ctx)?)
    }

    /// Price billed to the user. `exec_hours` is the compute time charged on
    /// a public instance.
    pub fn service_price(&self, ctx: &InvocationContext, exec_hours: f64) -> Result<f64> {
        let gb = ctx.data_kb / KB_PER_GB;
        let cellular = if ctx.link == Some(Link::Cellular) { self.price.cellular_per_gb * gb } else { 0.0 };
        Ok(match ctx.host {
            HostTier::Device => 0.0,
            HostTier::Local => cellular,
            HostTier::Public => {
                let time = match ctx.billing {
                    Billing::Compute => self.price.public_compute_per_hour * exec_hours,
                    Billing::Streaming { hours } => self.price.streaming_per_hour * hours,
                };
                time + (self.price.transfer_per_gb + self.price.storage_per_gb) * gb + cellular
            }
        })
    }

    /// Full QoS triple for one invocation, pricing compute by the processing
    /// delay.
    pub fn invocation_qos(&self, ctx: &InvocationContext, profile: ProfileId) -> Result<crate::workflow::QoS> {
        let proc = self.processing_delay(ctx, profile)?;
        Ok(crate::workflow::QoS {
            price: self.service_price(ctx, proc / MS_PER_HOUR)?,
            power: self.service_power(ctx, profile)?,
            delay: proc + self.link_delay(ctx)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_MB: f64 = 2048.0;

    fn tables() -> (ProfileTables, ProfileId, ProfileId, ProfileId) {
        let mut t = ProfileTables::default();
        let dev = t.add_compute(HostTier::Device, 150.0, 600.0);
        let local = t.add_compute(HostTier::Local, 30.0, 0.0);
        let public = t.add_compute(HostTier::Public, 10.0, 0.0);
        (t, dev, local, public)
    }

    #[test]
    fn measured_two_megabyte_points() {
        let (t, ..) = tables();
        let wifi_local = InvocationContext::cloud(HostTier::Local, Link::WiFi, TWO_MB);
        let g3_local = InvocationContext::cloud(HostTier::Local, Link::Cellular, TWO_MB);
        let g3_public = InvocationContext::cloud(HostTier::Public, Link::Cellular, TWO_MB);
        assert_eq!(t.link_delay(&wifi_local).unwrap(), 220.0);
        assert_eq!(t.link_delay(&g3_public).unwrap(), 5128.0);
        assert_eq!(t.link_energy(&wifi_local).unwrap(), 15435.0);
        assert_eq!(t.link_energy(&g3_local).unwrap(), 26156.0);
    }

    #[test]
    fn power_of_cloud_services_is_transfer_energy() {
        let (t, _, local, _) = tables();
        let wifi_local = InvocationContext::cloud(HostTier::Local, Link::WiFi, TWO_MB);
        assert_eq!(t.service_power(&wifi_local, local).unwrap(), 15435.0);
        let nothing = InvocationContext::cloud(HostTier::Local, Link::WiFi, 0.0);
        assert_eq!(t.service_power(&nothing, local).unwrap(), 0.0);
    }

    #[test]
    fn on_device_has_no_link_component() {
        let (t, dev, ..) = tables();
        let ctx = InvocationContext::on_device(TWO_MB);
        assert_eq!(t.link_delay(&ctx).unwrap(), 0.0);
        assert_eq!(t.service_delay(&ctx, dev).unwrap(), 3072.0);
        assert_eq!(t.service_power(&ctx, dev).unwrap(), 12288.0);
        assert_eq!(t.service_price(&ctx, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn inter_cloud_hop_adds_delay_only() {
        let (t, _, local, _) = tables();
        let base = InvocationContext::cloud(HostTier::Local, Link::WiFi, TWO_MB);
        let hop = base.with_hop(true);
        assert_eq!(t.service_delay(&hop, local).unwrap() - t.service_delay(&base, local).unwrap(), 20.0);
        assert_eq!(t.service_power(&hop, local).unwrap(), t.service_power(&base, local).unwrap());
    }

    #[test]
    fn prices() {
        let (t, ..) = tables();
        let local_wifi = InvocationContext::cloud(HostTier::Local, Link::WiFi, TWO_MB);
        assert_eq!(t.service_price(&local_wifi, 1.0).unwrap(), 0.0);

        let hour_on_public = InvocationContext::cloud(HostTier::Public, Link::WiFi, 0.0);
        assert_eq!(t.service_price(&hour_on_public, 1.0).unwrap(), 0.52);

        // cellular charge alone: 40 dollars per 2048 MB, 2 MB moved
        let local_3g = InvocationContext::cloud(HostTier::Local, Link::Cellular, TWO_MB);
        let oracle = 40.0 * (2.0 / 2048.0);
        assert!((t.service_price(&local_3g, 0.0).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.039).abs() < 0.001);

        let stream = InvocationContext::cloud(HostTier::Public, Link::WiFi, 0.0)
            .with_billing(Billing::Streaming { hours: 2.0 });
        assert!((t.service_price(&stream, 0.0).unwrap() - 0.30).abs() < 1e-15);
    }

    #[test]
    fn missing_profiles_are_reported() {
        let t = ProfileTables { links: vec![], compute: vec![], price: PriceModel::default() };
        let ctx = InvocationContext::cloud(HostTier::Public, Link::WiFi, 10.0);
        assert!(matches!(t.link_delay(&ctx), Err(Error::MissingProfile(_))));
        assert!(matches!(t.service_power(&ctx, ProfileId(0)), Err(Error::MissingProfile(_))));
    }

    #[test]
    fn orderings_hold_with_defaults() {
        let (t, _, local, public) = tables();
        let sizes = [0.0, 1.0, 100.0, 1024.0, 2048.0, 5120.0];
        for tier in [HostTier::Local, HostTier::Public] {
            let p = if tier == HostTier::Local { local } else { public };
            let mut prev = crate::workflow::QoS::ZERO;
            for &kb in &sizes {
                let wifi = t.invocation_qos(&InvocationContext::cloud(tier, Link::WiFi, kb), p).unwrap();
                let g3 = t.invocation_qos(&InvocationContext::cloud(tier, Link::Cellular, kb), p).unwrap();
                assert!(wifi.delay <= g3.delay && wifi.power <= g3.power && wifi.price <= g3.price);
                assert!(prev.le(&g3));
                prev = g3;
            }
        }
        for &kb in &sizes {
            for link in [Link::WiFi, Link::Cellular] {
                let l = InvocationContext::cloud(HostTier::Local, link, kb);
                let p = InvocationContext::cloud(HostTier::Public, link, kb);
                assert!(t.link_delay(&l).unwrap() <= t.link_delay(&p).unwrap());
                assert!(t.link_energy(&l).unwrap() <= t.link_energy(&p).unwrap());
            }
        }
        let zero = InvocationContext::cloud(HostTier::Public, Link::Cellular, 0.0);
        assert_eq!(t.link_delay(&zero).unwrap(), 0.0);
        assert_eq!(t.link_energy(&zero).unwrap(), 0.0);
        assert_eq!(t.service_price(&zero, 0.0).unwrap(), 0.0);
    }
}
