use serde::{Deserialize, Serialize};

use crate::crypto::{TokenHash, METADATA_CIPHERTEXT_LEN};

/// How the server classified a published record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordTag {
    /// Uploaded by a TAN-verified infected user.
    #[default]
    Direct,
    /// Uploaded early by a proven direct contact of an infected user.
    SecondLevel,
    /// Uploaded by a user proven to have met several infected users.
    PossibleSuperspreader,
}

impl RecordTag {
    pub fn to_byte(self) -> u8 {
        match self {
            RecordTag::Direct => 0,
            RecordTag::SecondLevel => 1,
            RecordTag::PossibleSuperspreader => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(RecordTag::Direct),
            1 => Some(RecordTag::SecondLevel),
            2 => Some(RecordTag::PossibleSuperspreader),
            _ => None,
        }
    }
}

/// One published `(h, m)` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenUploadRecord {
    pub hash: TokenHash,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
    #[serde(default)]
    pub tag: RecordTag,
}

impl TokenUploadRecord {
    pub fn new(hash: TokenHash, ciphertext: Vec<u8>) -> Self {
        Self { hash, ciphertext, tag: RecordTag::Direct }
    }

    /// Clients may only submit untagged records carrying a metadata ciphertext.
    pub fn is_well_formed_upload(&self) -> bool {
        self.tag == RecordTag::Direct && self.ciphertext.len() == METADATA_CIPHERTEXT_LEN
    }

    /// Size of the wire encoding: hash, length prefix, ciphertext, tag.
    pub fn framed_len(&self) -> usize {
        16 + 4 + self.ciphertext.len() + 1
    }
}

/// Records handed to clients by one feed download.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PublishedFeed {
    pub records: Vec<TokenUploadRecord>,
    /// Pass this back as `since_epoch` on the next fetch.
    pub feed_epoch: u64,
}

impl PublishedFeed {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
