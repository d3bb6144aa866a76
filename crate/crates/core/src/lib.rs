pub mod authority;
pub mod baseline;
pub mod cli;
pub mod client;
pub mod crypto;
pub mod error;
pub mod estimates;
pub mod exposure;
pub mod server;
pub mod sim;
pub mod time;
pub mod vectors;
