//! Health authority: issues and verifies single-use TANs.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

pub const TAN_LEN: usize = 12;
const BASE32: &[u8; 32] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tan {
    pub value: String,
    pub issued_at: u64,
    pub consumed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TanVerdict {
    Accepted,
    Rejected,
}

impl TanVerdict {
    pub fn is_accepted(self) -> bool {
        self == TanVerdict::Accepted
    }
}

struct Inner {
    rng: ChaCha20Rng,
    tans: HashMap<String, Tan>,
}

/// Thread-safe TAN registry. The registry holds only TANs and an opaque
/// counter per context; it never sees encounter data.
pub struct HealthAuthority {
    inner: Mutex<Inner>,
    expiry_s: Option<u64>,
}

impl HealthAuthority {
    pub fn new(seed: u64) -> Self {
        Self::with_expiry(seed, None)
    }

    pub fn with_expiry(seed: u64, expiry_s: Option<u64>) -> Self {
        Self { inner: Mutex::new(Inner { rng: ChaCha20Rng::seed_from_u64(seed), tans: HashMap::new() }), expiry_s }
    }

    /// Issues a fresh TAN. `user_context` is opaque to the authority and not
    /// stored.
    pub fn issue_tan(&self, _user_context: &[u8], now: u64) -> Tan {
        let mut inner = self.inner.lock().expect("authority lock");
        loop {
            let value: String = (0..TAN_LEN).map(|_| BASE32[inner.rng.gen_range(0..32)] as char).collect();
            if inner.tans.contains_key(&value) {
                continue;
            }
            let tan = Tan { value: value.clone(), issued_at: now, consumed: false };
            inner.tans.insert(value, tan.clone());
            return tan;
        }
    }

    /// Atomic check-and-consume.
    pub fn verify_tan(&self, value: &str, now: u64) -> TanVerdict {
        let mut inner = self.inner.lock().expect("authority lock");
        match inner.tans.get_mut(value) {
            Some(tan) if !tan.consumed => {
                if let Some(expiry) = self.expiry_s {
                    if now.saturating_sub(tan.issued_at) > expiry {
                        return TanVerdict::Rejected;
                    }
                }
                tan.consumed = true;
                TanVerdict::Accepted
            }
            _ => TanVerdict::Rejected,
        }
    }

    pub fn issued_count(&self) -> usize {
        self.inner.lock().expect("authority lock").tans.len()
    }

    /// Serialized registry state, for inspection.
    pub fn export_state(&self) -> Vec<Tan> {
        let inner = self.inner.lock().expect("authority lock");
        let mut tans: Vec<Tan> = inner.tans.values().cloned().collect();
        tans.sort_by(|a, b| a.value.cmp(&b.value));
        tans
    }
}
