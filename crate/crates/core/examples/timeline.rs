//! A small neighbourhood over two weeks: an infection chain, a shop
//! assistant who meets several infected visitors, and a passing cyclist.
//! Prints who learned what on which day, then the server's aggregate view.

use tracecorona::sim::{run_scenario, scenarios};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "s1_neighbourhood".into());
    let Some(cfg) = scenarios::load(&name) else {
        eprintln!("unknown scenario {name}; bundled: {}", scenarios::names().collect::<Vec<_>>().join(", "));
        std::process::exit(2);
    };
    let r = run_scenario(&cfg).unwrap();
    for d in &cfg.devices {
        if let Some(day) = d.infected_day {
            println!("day {day:>2}  {} infected", d.id);
        }
    }
    for n in &r.notifications {
        println!(
            "day {:>2}  {:<10} notified {:?}{} (source {}, risk {:.2})",
            n.day,
            n.device,
            n.level,
            if n.superspreader_flag { ", possible superspreader" } else { "" },
            n.source.as_deref().unwrap_or("-"),
            n.risk_score
        );
    }
    println!("server:       {:?}", r.server_stats);
    println!("ground truth: {:?}", r.ground_truth);
}
