//! Comparison schemes: a generic centralized framework (with a BlueTrace
//! variant) and a GAEN-style decentralized framework.

pub mod centralized;
pub mod decentralized;

pub use centralized::{CentralizedClient, CentralizedServer, Registration, TempIdVariant};
pub use decentralized::{
    decentralized_match, DecentralizedClient, DecentralizedConfig, DecentralizedDailyKey, DecentralizedMatch,
    DecentralizedServer, PublishedKey,
};
