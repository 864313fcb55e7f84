//! Index tables under full, slow and noisy partial information.
//!
//! Usage: cargo run --release --example whittle_indices [case] [snr_db]

use adr_maint::whittle::{full_info_index, slow_info_index, IndexOptions, WhittleTable};
use adr_maint::{build_continuation, AdrModel, BeliefGrid, ObsCase, ObsScenario, QmcStream, VbSettings};

fn main() -> adr_maint::Result<()> {
    let mut args = std::env::args().skip(1);
    let case = args.next().and_then(|s| s.chars().next()).and_then(ObsCase::from_letter).unwrap_or(ObsCase::A);
    let snr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let model = AdrModel::reference();

    let (broken, working) = full_info_index(&model)?;
    println!("full information: broken {broken:.4}, working {working:.4}");
    let (seen_broken, seen_repaired) = slow_info_index(&model)?;
    println!("slow information: seen broken {seen_broken:.4}, just repaired {seen_repaired:.4}");

    let scn = ObsScenario::reference(case, snr);
    let grid = BeliefGrid::new(100)?;
    let mut qmc = QmcStream::new(scn.point_dim())?;
    let cont = build_continuation(&model, &scn, grid, 2000, &mut qmc, &VbSettings::default())?;
    let zero = WhittleTable::compute(&model.with_cost(0.0)?, &cont, &IndexOptions::for_model(&model))?;
    let table = zero.for_cost(model.cost)?;
    println!("partial information, case {case} at {snr} dB:");
    for k in (0..=100).step_by(10) {
        println!("  belief {:.2}  index {:.4}", grid.point(k), table.index(k));
    }
    Ok(())
}
