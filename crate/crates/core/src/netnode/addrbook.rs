use std::collections::{HashSet, VecDeque};
use std::net::{Ipv4Addr, SocketAddrV4};

use crate::wire::MAX_ADDR_ENTRIES;

/// Public endpoints learned from `addr` gossip. Inbound clients' own
/// addresses never enter this book, so answering `getaddr` cannot leak them.
#[derive(Debug, Default)]
pub struct AddrBook {
    order: VecDeque<SocketAddrV4>,
    set: HashSet<SocketAddrV4>,
}

pub fn is_public(ip: Ipv4Addr) -> bool {
    !(ip.is_private()
        || ip.is_loopback()
        || ip.is_link_local()
        || ip.is_broadcast()
        || ip.is_documentation()
        || ip.is_unspecified()
        || ip.is_multicast()
        // 100.64.0.0/10 carrier-grade NAT
        || (ip.octets()[0] == 100 && (ip.octets()[1] & 0xc0) == 64))
}

impl AddrBook {
    pub fn learn(&mut self, addr: SocketAddrV4) -> bool {
        if !is_public(*addr.ip()) || addr.port() == 0 || !self.set.insert(addr) {
            return false;
        }
        self.order.push_back(addr);
        if self.order.len() > MAX_ADDR_ENTRIES {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
        true
    }

    /// Most recently learned first.
    pub fn sample(&self, max: usize) -> Vec<SocketAddrV4> {
        self.order.iter().rev().take(max).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}
