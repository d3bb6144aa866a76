use std::collections::{BTreeSet, VecDeque};

use crate::crypto::EphemeralId;

pub const MAX_CONCURRENT_CHANNELS: usize = 8;
pub const MAX_HANDSHAKES_PER_SECOND: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelGrant {
    Open,
    AlreadyOpen,
    /// Waiting for a free slot; position in the queue.
    Queued(usize),
    /// Handshake budget for this second is spent.
    RateLimited,
}

/// Bounded set of concurrent GATT-style connections.
#[derive(Debug, Clone, Default)]
pub struct ChannelPool {
    open: BTreeSet<EphemeralId>,
    queue: VecDeque<EphemeralId>,
    second: u64,
    started_this_second: usize,
    peak: usize,
}

impl ChannelPool {
    fn budget(&mut self, now: u64) -> bool {
        if now != self.second {
            self.second = now;
            self.started_this_second = 0;
        }
        self.started_this_second < MAX_HANDSHAKES_PER_SECOND
    }

    fn admit(&mut self, peer: EphemeralId, now: u64) {
        self.budget(now);
        self.started_this_second += 1;
        self.open.insert(peer);
        self.peak = self.peak.max(self.open.len());
    }

    pub fn request(&mut self, peer: EphemeralId, now: u64) -> ChannelGrant {
        if self.open.contains(&peer) {
            return ChannelGrant::AlreadyOpen;
        }
        if let Some(pos) = self.queue.iter().position(|p| *p == peer) {
            return ChannelGrant::Queued(pos);
        }
        if self.open.len() >= MAX_CONCURRENT_CHANNELS {
            self.queue.push_back(peer);
            return ChannelGrant::Queued(self.queue.len() - 1);
        }
        if !self.budget(now) {
            return ChannelGrant::RateLimited;
        }
        self.admit(peer, now);
        ChannelGrant::Open
    }

    /// Frees `peer`'s slot and promotes the head of the queue.
    pub fn release(&mut self, peer: &EphemeralId, now: u64) -> Option<EphemeralId> {
        if !self.open.remove(peer) {
            self.queue.retain(|p| p != peer);
            return None;
        }
        if !self.budget(now) {
            return None;
        }
        let next = self.queue.pop_front()?;
        self.admit(next, now);
        Some(next)
    }

    pub fn is_open(&self, peer: &EphemeralId) -> bool {
        self.open.contains(peer)
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Highest number of simultaneously open channels seen.
    pub fn peak(&self) -> usize {
        self.peak
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(n: u8) -> EphemeralId {
        EphemeralId([n; 16])
    }

    #[test]
    fn at_most_eight_open() {
        let mut pool = ChannelPool::default();
        for n in 0..12 {
            let grant = pool.request(id(n), 5);
            if n < 8 {
                assert_eq!(grant, ChannelGrant::Open);
            } else {
                assert_eq!(grant, ChannelGrant::Queued(n as usize - 8));
            }
        }
        assert_eq!(pool.open_count(), 8);
        assert_eq!(pool.release(&id(3), 6), Some(id(8)));
        assert_eq!(pool.open_count(), 8);
        assert_eq!(pool.queued(), 3);
        assert_eq!(pool.peak(), 8);
        assert_eq!(pool.request(id(8), 6), ChannelGrant::AlreadyOpen);
    }

    #[test]
    fn handshake_rate_is_capped() {
        let mut pool = ChannelPool::default();
        let mut opened = 0;
        for n in 0..=255u8 {
            if pool.request(id(n), 1) == ChannelGrant::Open {
                opened += 1;
            }
            pool.release(&id(n), 1);
        }
        assert_eq!(opened, MAX_HANDSHAKES_PER_SECOND);
        assert_eq!(pool.request(id(0), 2), ChannelGrant::Open);
    }
}
