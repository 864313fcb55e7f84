//! Value of repairing on a fixed schedule, ignoring all readings.
//!
//! Usage: cargo run --example periodic_review [max_period]

use adr_maint::fleet::{best_period, periodic_value};
use adr_maint::AdrModel;

fn main() -> adr_maint::Result<()> {
    let max_q: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let model = AdrModel::reference();
    for q in [1, 5, 10, 15, 20, 30, max_q] {
        println!("q={q:<3} value={:.4}", periodic_value(&model, q)?);
    }
    let (q, v) = best_period(&model, max_q)?;
    println!("best period {q} with value {v:.4}");
    Ok(())
}
