//! Golden vectors for every derivation, checked by `verify-vectors` and by
//! independent oracles in the test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{
    decrypt_metadata, derive_daily_tek, derive_ephemeral_id, derive_tempid_bluetrace, derive_tempid_centralized,
    derive_tempid_decentralized, derive_token, encrypt_metadata, token_hash, EphemeralId, FrameKeyPair, PublicKeyBytes,
    Tek, TempId, TokenHash, TokenSecret, PRIVATE_KEY_LEN,
};

pub const BUNDLED: &str = include_str!("../testdata/vectors.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EcdhVector {
    pub frame: u64,
    #[serde(with = "hex::serde")]
    pub a_private: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub b_private: Vec<u8>,
    pub a_public: PublicKeyBytes,
    pub b_public: PublicKeyBytes,
    pub token: TokenSecret,
    pub token_hash: TokenHash,
    pub start_time: u64,
    #[serde(with = "hex::serde")]
    pub metadata: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CentralVector {
    #[serde(with = "hex::serde")]
    pub user_id: Vec<u8>,
    pub t_k: u64,
    pub tempid: TempId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlueTraceVector {
    #[serde(with = "hex::serde")]
    pub user_id: Vec<u8>,
    pub t_k: u64,
    #[serde(with = "hex::serde")]
    pub iv: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub auth_tag: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub master_key: Vec<u8>,
    pub tempid: TempId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EphemeralIdVector {
    #[serde(with = "hex::serde")]
    pub seed: Vec<u8>,
    pub frame: u64,
    pub ephemeral_id: EphemeralId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TekVector {
    #[serde(with = "hex::serde")]
    pub seed: Vec<u8>,
    pub day: u64,
    pub tek: Tek,
    pub slot: u64,
    pub tempid: TempId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorFile {
    pub version: u32,
    pub ecdh: Vec<EcdhVector>,
    pub tempid_central: Vec<CentralVector>,
    pub tempid_bluetrace: Vec<BlueTraceVector>,
    pub ephemeral_id: Vec<EphemeralIdVector>,
    pub tek: Vec<TekVector>,
}

fn private_key(rng: &mut ChaCha20Rng, frame: u64) -> ([u8; PRIVATE_KEY_LEN], FrameKeyPair) {
    loop {
        let mut d = [0u8; PRIVATE_KEY_LEN];
        rng.fill(&mut d[..]);
        if let Ok(kp) = FrameKeyPair::from_private_bytes(frame, &d) {
            return (d, kp);
        }
    }
}

fn array<const N: usize>(v: &[u8]) -> Option<[u8; N]> {
    v.try_into().ok()
}

impl VectorFile {
    /// Fresh vectors from the current implementation.
    pub fn generate(seed: u64, count: usize) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut out = VectorFile {
            version: 1,
            ecdh: Vec::new(),
            tempid_central: Vec::new(),
            tempid_bluetrace: Vec::new(),
            ephemeral_id: Vec::new(),
            tek: Vec::new(),
        };
        for _ in 0..count {
            let frame = rng.gen_range(1_700_000..1_900_000);
            let (da, a) = private_key(&mut rng, frame);
            let (db, b) = private_key(&mut rng, frame);
            let token = derive_token(&a, b.public_key()).expect("valid key");
            let start_time = frame * 900 + rng.gen_range(0..900);
            out.ecdh.push(EcdhVector {
                frame,
                a_private: da.to_vec(),
                b_private: db.to_vec(),
                a_public: *a.public_key(),
                b_public: *b.public_key(),
                token,
                token_hash: token_hash(&token),
                start_time,
                metadata: encrypt_metadata(&token, start_time),
            });

            let user_id: [u8; 16] = rng.gen();
            let t_k = rng.gen_range(1_700_000..1_900_000);
            out.tempid_central.push(CentralVector {
                user_id: user_id.to_vec(),
                t_k,
                tempid: derive_tempid_centralized(&user_id, t_k),
            });

            let iv: [u8; 16] = rng.gen();
            let auth_tag: [u8; 16] = rng.gen();
            let master_key: [u8; 32] = rng.gen();
            out.tempid_bluetrace.push(BlueTraceVector {
                user_id: user_id.to_vec(),
                t_k,
                iv: iv.to_vec(),
                auth_tag: auth_tag.to_vec(),
                master_key: master_key.to_vec(),
                tempid: derive_tempid_bluetrace(&user_id, t_k, &iv, &auth_tag, &master_key),
            });

            let seed: [u8; 32] = rng.gen();
            out.ephemeral_id.push(EphemeralIdVector {
                seed: seed.to_vec(),
                frame,
                ephemeral_id: derive_ephemeral_id(&seed, frame),
            });

            let day = rng.gen_range(18_000..20_000);
            let slot = rng.gen_range(0..144);
            let tek = derive_daily_tek(&seed, day);
            out.tek.push(TekVector {
                seed: seed.to_vec(),
                day,
                tek,
                slot,
                tempid: derive_tempid_decentralized(&tek, day * 144 + slot),
            });
        }
        out
    }

    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled vectors parse")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("vectors serialize");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.ecdh.len()
            + self.tempid_central.len()
            + self.tempid_bluetrace.len()
            + self.ephemeral_id.len()
            + self.tek.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Recomputes every vector. Returns one line per mismatch.
    pub fn verify(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, what: String| {
            if !ok {
                bad.push(what);
            }
        };
        for (i, v) in self.ecdh.iter().enumerate() {
            let keys = array(&v.a_private).zip(array(&v.b_private)).and_then(|(da, db)| {
                let a = FrameKeyPair::from_private_bytes(v.frame, &da).ok()?;
                let b = FrameKeyPair::from_private_bytes(v.frame, &db).ok()?;
                Some((a, b))
            });
            let Some((a, b)) = keys else {
                check(false, format!("ecdh[{i}]: private key rejected"));
                continue;
            };
            check(a.public_key() == &v.a_public, format!("ecdh[{i}].a_public"));
            check(b.public_key() == &v.b_public, format!("ecdh[{i}].b_public"));
            let ab = derive_token(&a, &v.b_public).ok();
            let ba = derive_token(&b, &v.a_public).ok();
            check(ab == Some(v.token), format!("ecdh[{i}].token (a side)"));
            check(ba == Some(v.token), format!("ecdh[{i}].token (b side)"));
            check(token_hash(&v.token) == v.token_hash, format!("ecdh[{i}].token_hash"));
            check(encrypt_metadata(&v.token, v.start_time) == v.metadata, format!("ecdh[{i}].metadata"));
            check(decrypt_metadata(&v.token, &v.metadata) == Ok(v.start_time), format!("ecdh[{i}].metadata decrypt"));
        }
        for (i, v) in self.tempid_central.iter().enumerate() {
            check(derive_tempid_centralized(&v.user_id, v.t_k) == v.tempid, format!("tempid_central[{i}]"));
        }
        for (i, v) in self.tempid_bluetrace.iter().enumerate() {
            let ok = match (array(&v.iv), array(&v.master_key)) {
                (Some(iv), Some(mk)) => derive_tempid_bluetrace(&v.user_id, v.t_k, &iv, &v.auth_tag, &mk) == v.tempid,
                _ => false,
            };
            check(ok, format!("tempid_bluetrace[{i}]"));
        }
        for (i, v) in self.ephemeral_id.iter().enumerate() {
            let ok = array(&v.seed).is_some_and(|s| derive_ephemeral_id(&s, v.frame) == v.ephemeral_id);
            check(ok, format!("ephemeral_id[{i}]"));
        }
        for (i, v) in self.tek.iter().enumerate() {
            let ok = array(&v.seed).is_some_and(|s| {
                let tek = derive_daily_tek(&s, v.day);
                tek == v.tek && derive_tempid_decentralized(&tek, v.day * 144 + v.slot) == v.tempid
            });
            check(ok, format!("tek[{i}]"));
        }
        bad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_vectors_verify() {
        let v = VectorFile::generate(1, 3);
        assert!(v.verify().is_empty());
        let mut broken = v.clone();
        broken.ecdh[0].token_hash.0[0] ^= 1;
        broken.tek[2].slot += 1;
        assert_eq!(broken.verify(), ["ecdh[0].token_hash", "tek[2]"]);
    }

    #[test]
    fn bundled_vectors_verify() {
        let v = VectorFile::bundled();
        assert!(!v.is_empty());
        assert_eq!(v.verify(), Vec::<String>::new());
    }
}
