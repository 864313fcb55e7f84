//! Threshold policy and indices for a device with a binary alarm in place of
//! meter readings.
//!
//! Usage: cargo run --example discrete_channel [false_alarm] [detection]

use adr_maint::whittle::{IndexOptions, WhittleTable};
use adr_maint::{solve_value, AdrModel, BeliefGrid, ContinuationTable, SolveOptions};

fn main() -> adr_maint::Result<()> {
    let mut args = std::env::args().skip(1);
    let false_alarm: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let detection: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let model = AdrModel::reference();
    let grid = BeliefGrid::new(100)?;
    // (P(alarm | broken), P(alarm | working)) and the complementary outcome.
    let outcomes = [(detection, false_alarm), (1.0 - detection, 1.0 - false_alarm)];
    let cont = ContinuationTable::discrete_channel(&model, grid, &outcomes)?;

    let vt = solve_value(&model, &cont, 0.0, &SolveOptions::default())?;
    match vt.threshold_index {
        Some(k) => println!("repair when belief <= {:.2}", grid.point(k)),
        None => println!("never repair"),
    }
    println!("value of a working device {:.4}", vt.v[grid.n()]);

    let table = WhittleTable::compute(&model, &cont, &IndexOptions::for_model(&model))?;
    for k in (0..=100).step_by(20) {
        println!("belief {:.2}  index {:.4}", grid.point(k), table.index(k));
    }
    Ok(())
}
