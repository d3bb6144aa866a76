//! Alice infects Bob, Bob later meets Carol. With second-level early warning
//! Carol hears about it as soon as Bob is notified instead of after his test.

use tracecorona::sim::{run_scenario, scenarios};

fn main() {
    for name in ["infection_chain", "infection_chain_early_warning"] {
        let report = run_scenario(&scenarios::load(name).unwrap()).unwrap();
        println!("{name}");
        for n in &report.notifications {
            println!(
                "  day {:>2}  {:<6} {:<12} from {:<6} latency {} days",
                n.day,
                n.device,
                format!("{:?}", n.level),
                n.source.as_deref().unwrap_or("-"),
                n.latency_days.map_or("-".into(), |d| d.to_string())
            );
        }
        let s = report.server_stats.as_ref().unwrap();
        println!(
            "  server: {} infected uploads, {} second-level uploads ({} records)",
            s.infected_uploads, s.second_level_uploads, s.second_level_records
        );
    }
}
