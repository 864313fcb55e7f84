//! Optimal repair thresholds for the four observation models at 0 dB.
//!
//! Usage: cargo run --release --example threshold_table [samples] [grid]

use std::time::Instant;

use adr_maint::{build_continuation, solve_value, AdrModel, BeliefGrid, ObsCase, ObsScenario, QmcStream, SolveOptions, VbSettings};

fn main() -> adr_maint::Result<()> {
    let mut args = std::env::args().skip(1);
    let samples: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5000);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);
    let model = AdrModel::reference();
    let grid = BeliefGrid::new(n)?;

    println!("case  threshold  V(1)     seconds");
    for case in ObsCase::ALL {
        let start = Instant::now();
        let scn = ObsScenario::reference(case, 0.0);
        let mut qmc = QmcStream::new(scn.point_dim())?;
        let cont = build_continuation(&model, &scn, grid, samples, &mut qmc, &VbSettings::default())?;
        let vt = solve_value(&model, &cont, 0.0, &SolveOptions::default())?;
        let b = vt.threshold_index.map(|k| grid.point(k));
        println!(
            "{case}     {:<9}  {:.3}   {:.1}",
            b.map_or("never".into(), |b| format!("{b:.2}")),
            vt.v[n],
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
