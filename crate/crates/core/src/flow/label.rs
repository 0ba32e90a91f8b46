use crate::error::{Error, Result};
use crate::flow::dataset::Sample;
use crate::flow::key::{FlowKey, IpSet};

/// Attacker/victim address sets used to label flows.
#[derive(Debug, Clone)]
pub struct Endpoints {
    pub attackers: IpSet,
    /// Empty means any host counts as a victim.
    pub victims: IpSet,
}

impl Endpoints {
    pub fn new(attackers: IpSet, victims: IpSet) -> Result<Self> {
        if attackers.is_empty() {
            return Err(Error::Config("attack labeling requires at least one attacker address".into()));
        }
        if attackers.overlaps(&victims) {
            return Err(Error::Config("attacker and victim address sets overlap".into()));
        }
        Ok(Endpoints { attackers, victims })
    }

    fn is_victim(&self, ip: std::net::Ipv4Addr) -> bool {
        self.victims.is_empty() || self.victims.contains(ip)
    }

    /// True when the flow connects an attacker to a victim.
    pub fn is_attack(&self, key: &FlowKey) -> bool {
        (self.attackers.contains(key.ip_a) && self.is_victim(key.ip_b))
            || (self.attackers.contains(key.ip_b) && self.is_victim(key.ip_a))
    }
}

/// Label 1 for attacker-victim flows and 0 otherwise.
pub fn label_by_endpoints(samples: &[Sample], attackers: &IpSet, victims: &IpSet) -> Result<Vec<u8>> {
    let ep = Endpoints::new(attackers.clone(), victims.clone())?;
    Ok(samples.iter().map(|s| u8::from(ep.is_attack(&s.key))).collect())
}
