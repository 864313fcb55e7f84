//! Partial-information index policy against the full- and slow-information
//! index policies when repair costs differ between devices.
//!
//! Usage: cargo run --release --example heterogeneous_costs [runs]

use adr_maint::fleet::{simulate, CostMode, FleetConfig, FleetScenario, PolicyId, SimOptions, TableBuilder};
use adr_maint::ObsCase;

fn main() -> adr_maint::Result<()> {
    let runs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut builder = TableBuilder::default();
    for reference in [PolicyId::FullWhittle, PolicyId::SlowWhittle] {
        println!("reference {reference}");
        println!("snr       A       B       C       D");
        for snr in [5.0, 0.0, -5.0] {
            let mut line = format!("{snr:>3}");
            for case in ObsCase::ALL {
                let config = FleetConfig {
                    runs,
                    cost_mode: CostMode::Uniform { max_multiple: 6.5 },
                    ..FleetConfig::reference(case, snr)
                };
                let fleet = FleetScenario::build(config, &mut builder)?;
                let r = simulate(&fleet, PolicyId::PartialWhittle, reference, &SimOptions::default())?;
                line.push_str(&format!("  {:>6.2}", r.err_percent));
            }
            println!("{line}");
        }
    }
    Ok(())
}
