//! Cryptographic primitives of the encounter-token scheme and the baselines.
//!
//! Curve: NIST P-384. Public keys travel as the 48-byte big-endian affine
//! x-coordinate. ECDH only ever uses the x-coordinate of `d * Q`, which is
//! identical for `Q` and `-Q`, so dropping the sign of `y` loses nothing. A key
//! of 48 zero bytes is the encoding reserved for the point at infinity and is
//! always rejected.
//!
//! Derivations (all HKDF-SHA256 unless noted):
//!
//! | value                 | construction                                                     |
//! |-----------------------|------------------------------------------------------------------|
//! | encounter token       | `HKDF(ikm = x(d*Q), info = "tc-token")[..32]`                     |
//! | token hash            | `SHA-256("tc-hash" ‖ secret)[..16]`                               |
//! | metadata key, nonce   | `HKDF(ikm = secret, info = "tc-meta")` → 32-byte key, 12-byte nonce |
//! | metadata ciphertext   | AES-256-GCM-SIV over the 8-byte big-endian timestamp (24 bytes)   |
//! | centralized TempID    | `HKDF(ikm = user_id, info = "tc-tempid-central" ‖ t_k)[..16]`       |
//! | BlueTrace TempID      | `HKDF(salt = K, ikm = user_id ‖ t_k ‖ iv ‖ tag, info = "tc-tempid-bluetrace")` |
//! | decentralized TempID  | `HKDF(ikm = tek, info = "tc-tempid-decentral" ‖ t_k)[..16]`       |
//!
//! Integers inside `info` are 8-byte big-endian.

use std::fmt;

use aes_gcm_siv::aead::{Aead, KeyInit};
use aes_gcm_siv::{Aes256GcmSiv, Nonce};
use hkdf::Hkdf;
use p384::elliptic_curve::sec1::ToEncodedPoint;
use p384::{FieldBytes, NonZeroScalar, PublicKey};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CryptoError;

pub const PUBLIC_KEY_LEN: usize = 48;
pub const PRIVATE_KEY_LEN: usize = 48;
pub const TOKEN_LEN: usize = 32;
pub const TOKEN_HASH_LEN: usize = 16;
pub const TEMPID_LEN: usize = 16;
pub const TEK_LEN: usize = 16;
/// 8-byte timestamp plus the 16-byte AEAD tag.
pub const METADATA_CIPHERTEXT_LEN: usize = 24;
/// Ten-minute rolling identifiers per day.
pub const DECENTRALIZED_SLOTS_PER_DAY: u64 = 144;
/// Fifteen-minute TempID intervals per day in the centralized framework.
pub const CENTRALIZED_SLOTS_PER_DAY: u64 = 96;

const LABEL_FRAME: &[u8] = b"tc-frame";
const LABEL_EI: &[u8] = b"tc-ei";
const LABEL_TEK: &[u8] = b"tc-tek";
const LABEL_TOKEN: &[u8] = b"tc-token";
const LABEL_HASH: &[u8] = b"tc-hash";
const LABEL_META: &[u8] = b"tc-meta";
const LABEL_TEMPID_CENTRAL: &[u8] = b"tc-tempid-central";
const LABEL_TEMPID_BLUETRACE: &[u8] = b"tc-tempid-bluetrace";
const LABEL_TEMPID_DECENTRAL: &[u8] = b"tc-tempid-decentral";

macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                <[u8; $len]>::try_from(bytes)
                    .map(Self)
                    .map_err(|_| CryptoError::InvalidLength { expected: $len, got: bytes.len() })
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
                let bytes = hex::decode(s).map_err(|_| CryptoError::InvalidLength { expected: $len, got: s.len() / 2 })?;
                Self::from_slice(&bytes)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

byte_newtype!(
    /// Encoded frame public key `Q`: the affine x-coordinate.
    PublicKeyBytes,
    PUBLIC_KEY_LEN
);
byte_newtype!(
    /// Encounter token secret `k`.
    TokenSecret,
    TOKEN_LEN
);
byte_newtype!(
    /// Truncated token hash `h` as published in the feed.
    TokenHash,
    TOKEN_HASH_LEN
);
byte_newtype!(
    /// Broadcast identifier of the baseline schemes.
    TempId,
    TEMPID_LEN
);
byte_newtype!(
    /// Daily temporary exposure key of the decentralized baseline.
    Tek,
    TEK_LEN
);
byte_newtype!(
    /// Rotating beacon identifier `EI` of the encounter-token client.
    EphemeralId,
    16
);
byte_newtype!(
    /// Pseudonymous registration identifier of the centralized baseline.
    UserId,
    16
);

/// Ephemeral ECDH keypair of one time frame.
///
/// Deliberately neither `Serialize` nor `Clone`-into-wire: the private scalar
/// only leaves this type through [`derive_token`].
#[derive(Clone)]
pub struct FrameKeyPair {
    frame_index: u64,
    private_key: NonZeroScalar,
    public_key: PublicKeyBytes,
}

impl FrameKeyPair {
    /// Builds a keypair from a big-endian private scalar in `[1, n)`.
    pub fn from_private_bytes(frame_index: u64, private_key: &[u8; PRIVATE_KEY_LEN]) -> Result<Self, CryptoError> {
        let scalar: Option<NonZeroScalar> = NonZeroScalar::from_repr(*FieldBytes::from_slice(private_key)).into();
        let private_key = scalar.ok_or(CryptoError::InvalidPoint)?;
        Ok(Self::from_scalar(frame_index, private_key))
    }

    fn from_scalar(frame_index: u64, private_key: NonZeroScalar) -> Self {
        let point = PublicKey::from_secret_scalar(&private_key).to_encoded_point(true);
        let public_key = PublicKeyBytes::from_slice(&point.as_bytes()[1..])
            .expect("compressed P-384 point carries a 48-byte x-coordinate");
        Self { frame_index, private_key, public_key }
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn public_key(&self) -> &PublicKeyBytes {
        &self.public_key
    }
}

impl fmt::Debug for FrameKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameKeyPair")
            .field("frame_index", &self.frame_index)
            .field("public_key", &self.public_key)
            .field("private_key", &"<redacted>")
            .finish()
    }
}

/// Generates the keypair for frame `frame_index`.
///
/// Draws 32 bytes from `rng` and mixes them with the frame index, so the same
/// generator state yields different keys for different frames.
pub fn generate_frame_keypair<R: RngCore + CryptoRng>(frame_index: u64, rng: &mut R) -> FrameKeyPair {
    let mut seed = [0u8; 32];
    rng.fill_bytes(&mut seed);
    let mut hasher = Sha256::new();
    hasher.update(LABEL_FRAME);
    hasher.update(seed);
    hasher.update(frame_index.to_be_bytes());
    let mut frame_rng = ChaCha20Rng::from_seed(hasher.finalize().into());
    FrameKeyPair::from_scalar(frame_index, NonZeroScalar::random(&mut frame_rng))
}

fn decode_public_key(public: &PublicKeyBytes) -> Result<PublicKey, CryptoError> {
    if public.0.iter().all(|&b| b == 0) {
        return Err(CryptoError::InvalidPoint);
    }
    let mut sec1 = [0u8; PUBLIC_KEY_LEN + 1];
    sec1[0] = 0x02;
    sec1[1..].copy_from_slice(&public.0);
    PublicKey::from_sec1_bytes(&sec1).map_err(|_| CryptoError::InvalidPoint)
}

/// Checks that `public` encodes a point of the curve.
pub fn validate_public_key(public: &PublicKeyBytes) -> Result<(), CryptoError> {
    decode_public_key(public).map(|_| ())
}

fn hkdf_expand<const N: usize>(salt: Option<&[u8]>, ikm: &[u8], info: &[&[u8]]) -> [u8; N] {
    let hk = Hkdf::<Sha256>::new(salt, ikm);
    let mut okm = [0u8; N];
    hk.expand_multi_info(info, &mut okm).expect("output length is far below the HKDF-SHA256 limit");
    okm
}

/// Derives the encounter token shared with the owner of `peer_public`.
pub fn derive_token(own: &FrameKeyPair, peer_public: &PublicKeyBytes) -> Result<TokenSecret, CryptoError> {
    let peer = decode_public_key(peer_public)?;
    let shared = p384::ecdh::diffie_hellman(own.private_key, peer.as_affine());
    Ok(TokenSecret(hkdf_expand(None, shared.raw_secret_bytes(), &[LABEL_TOKEN])))
}

pub fn token_hash(secret: &TokenSecret) -> TokenHash {
    let mut hasher = Sha256::new();
    hasher.update(LABEL_HASH);
    hasher.update(secret.0);
    let digest = hasher.finalize();
    let mut out = [0u8; TOKEN_HASH_LEN];
    out.copy_from_slice(&digest[..TOKEN_HASH_LEN]);
    TokenHash(out)
}

fn metadata_cipher(secret: &TokenSecret) -> (Aes256GcmSiv, [u8; 12]) {
    let okm: [u8; 44] = hkdf_expand(None, &secret.0, &[LABEL_META]);
    let cipher = Aes256GcmSiv::new_from_slice(&okm[..32]).expect("32-byte key");
    let mut nonce = [0u8; 12];
    nonce.copy_from_slice(&okm[32..]);
    (cipher, nonce)
}

/// Encrypts an encounter timestamp under a key derived from the token.
///
/// Both parties of an encounter share the key, so the nonce is fixed per
/// token; GCM-SIV keeps that safe, leaking only equality of timestamps.
pub fn encrypt_metadata(secret: &TokenSecret, start_time: u64) -> Vec<u8> {
    let (cipher, nonce) = metadata_cipher(secret);
    cipher
        .encrypt(Nonce::from_slice(&nonce), start_time.to_be_bytes().as_slice())
        .expect("AES-GCM-SIV encryption of 8 bytes cannot fail")
}

pub fn decrypt_metadata(secret: &TokenSecret, ciphertext: &[u8]) -> Result<u64, CryptoError> {
    let (cipher, nonce) = metadata_cipher(secret);
    let plain =
        cipher.decrypt(Nonce::from_slice(&nonce), ciphertext).map_err(|_| CryptoError::AuthenticationFailure)?;
    let bytes: [u8; 8] = plain.as_slice().try_into().map_err(|_| CryptoError::AuthenticationFailure)?;
    Ok(u64::from_be_bytes(bytes))
}

pub fn derive_tempid_centralized(user_id: &[u8], t_k: u64) -> TempId {
    TempId(hkdf_expand(None, user_id, &[LABEL_TEMPID_CENTRAL, &t_k.to_be_bytes()]))
}

/// BlueTrace-style TempID, keyed by the server's master key.
pub fn derive_tempid_bluetrace(
    user_id: &[u8],
    t_k: u64,
    iv: &[u8; 16],
    auth_tag: &[u8],
    master_key: &[u8; 32],
) -> TempId {
    let mut ikm = Vec::with_capacity(user_id.len() + 8 + 16 + auth_tag.len());
    ikm.extend_from_slice(user_id);
    ikm.extend_from_slice(&t_k.to_be_bytes());
    ikm.extend_from_slice(iv);
    ikm.extend_from_slice(auth_tag);
    TempId(hkdf_expand(Some(master_key), &ikm, &[LABEL_TEMPID_BLUETRACE]))
}

/// Ephemeral identifier of `frame_index`, derived from a device-local seed.
pub fn derive_ephemeral_id(device_seed: &[u8; 32], frame_index: u64) -> EphemeralId {
    EphemeralId(hkdf_expand(None, device_seed, &[LABEL_EI, &frame_index.to_be_bytes()]))
}

/// Daily TEK of a decentralized-baseline device, derived from its local seed.
pub fn derive_daily_tek(device_seed: &[u8; 32], day: u64) -> Tek {
    Tek(hkdf_expand(None, device_seed, &[LABEL_TEK, &day.to_be_bytes()]))
}

/// TempID of absolute ten-minute interval `t_k` (`day * 144 + slot`).
pub fn derive_tempid_decentralized(tek: &Tek, t_k: u64) -> TempId {
    TempId(hkdf_expand(None, &tek.0, &[LABEL_TEMPID_DECENTRAL, &t_k.to_be_bytes()]))
}

/// All 144 TempIDs of `day`, in slot order.
pub fn derive_tempids_decentralized(tek: &Tek, day: u64) -> Vec<TempId> {
    (0..DECENTRALIZED_SLOTS_PER_DAY)
        .map(|slot| derive_tempid_decentralized(tek, day * DECENTRALIZED_SLOTS_PER_DAY + slot))
        .collect()
}

#[cfg(test)]
#[path = "../tests/support/p384_oracle.rs"]
mod p384_oracle;
