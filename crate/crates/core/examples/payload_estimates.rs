//! Bandwidth and handshake-rate figures, computed from real uploads pushed
//! through a server and compared with the commonly quoted numbers.

use tracecorona::estimates::{daily_feed, render, table, DAILY_NEW_CASES};

fn main() {
    let sample = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let feed = daily_feed(DAILY_NEW_CASES, sample, 0);
    print!("{}", render(&table(&feed)));
}
