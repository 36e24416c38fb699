use std::collections::{HashSet, VecDeque};

use crate::wire::TxId;

/// Default per-connection cap on remembered inventory.
pub const DEFAULT_KNOWN_INVENTORY: usize = 50_000;

/// Transaction ids already exchanged with one peer, bounded with FIFO eviction.
#[derive(Debug, Clone)]
pub struct KnownInventory {
    cap: usize,
    order: VecDeque<TxId>,
    set: HashSet<TxId>,
}

impl KnownInventory {
    pub fn new(cap: usize) -> Self {
        KnownInventory {
            cap: cap.max(1),
            order: VecDeque::new(),
            set: HashSet::new(),
        }
    }

    pub fn contains(&self, id: &TxId) -> bool {
        self.set.contains(id)
    }

    /// Returns false if `id` was already known.
    pub fn insert(&mut self, id: TxId) -> bool {
        if !self.set.insert(id) {
            return false;
        }
        self.order.push_back(id);
        if self.order.len() > self.cap {
            if let Some(old) = self.order.pop_front() {
                self.set.remove(&old);
            }
        }
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

impl Default for KnownInventory {
    fn default() -> Self {
        Self::new(DEFAULT_KNOWN_INVENTORY)
    }
}
