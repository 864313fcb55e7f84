//! Relative error of fleet policies with identical repair costs.
//!
//! Usage: cargo run --release --example fleet_table [case] [runs]

use adr_maint::fleet::{default_valuation, simulate, FleetConfig, FleetScenario, PolicyId, SimOptions, TableBuilder};
use adr_maint::ObsCase;

fn main() -> adr_maint::Result<()> {
    let mut args = std::env::args().skip(1);
    let case = args.next().and_then(|s| s.chars().next()).and_then(ObsCase::from_letter).unwrap_or(ObsCase::A);
    let runs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut builder = TableBuilder::default();

    println!("snr  policy           reference     err%    stderr");
    for snr in [5.0, 0.0, -5.0] {
        let config = FleetConfig { runs, ..FleetConfig::reference(case, snr) };
        let fleet = FleetScenario::build(config, &mut builder)?;
        let rows = [
            (PolicyId::FullWhittle, PolicyId::FullOptimal),
            (PolicyId::PartialWhittle, PolicyId::FullOptimal),
            (PolicyId::FullWhittle, PolicyId::SlowOptimal),
            (PolicyId::PartialWhittle, PolicyId::SlowOptimal),
        ];
        for (policy, reference) in rows {
            let opts = SimOptions { valuation: default_valuation(reference), seed: None };
            let r = simulate(&fleet, policy, reference, &opts)?;
            println!("{snr:>3}  {:<15}  {:<12}  {:>6.2}  {:>6.2}", policy, reference, r.err_percent, r.err_stderr);
        }
    }
    Ok(())
}
