//! Fits the offset and shed posterior to simulated readings and updates a
//! belief from them.
//!
//! Usage: cargo run --example variational_posterior [case] [snr_db]

use adr_maint::{fit_posterior, Action, AdrModel, Belief, ObsCase, ObsScenario, QmcStream, VbSettings};

fn main() -> adr_maint::Result<()> {
    let mut args = std::env::args().skip(1);
    let case = args.next().and_then(|s| s.chars().next()).and_then(ObsCase::from_letter).unwrap_or(ObsCase::D);
    let snr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let model = AdrModel::reference();
    let scn = ObsScenario::reference(case, snr);
    let mut qmc = QmcStream::new(scn.point_dim())?;
    let settings = VbSettings::default();

    for _ in 0..5 {
        let point = qmc.next_point();
        let draw = scn.decode_point(&point)?;
        let x = scn.reading_from(true, &draw.z, draw.shed, draw.delta);
        let post = fit_posterior(&scn, &x, &settings)?;
        let lik = scn.likelihood(&x, Some(&post))?;
        let b = model.belief_update(Action::DoNothing, Belief::new(0.9)?, &lik)?;
        println!(
            "true shed {:.3} offset {:+}  |  fitted shed {:.3} offset {:+} ({} iterations)  |  belief 0.90 -> {:.3}",
            draw.shed,
            draw.delta,
            post.nu,
            post.map_offset(),
            post.iterations,
            b.value()
        );
    }
    Ok(())
}
