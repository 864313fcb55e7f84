//! Mean-field variational posterior over the load shed `r` and the clock
//! offset `delta`, and the working-state likelihood `Q1` integrated against
//! it.
//!
//! The joint posterior of `(r, delta)` given a reading vector is replaced by
//! a product `Delta(delta) g(r)` with `g = N(nu, 1/eta)`. Coordinate ascent
//! alternates between the offset weights and the shed moments, starting
//! from the prior mean and uniform offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obsmodel::{ObsCase, ObsScenario, ReadingVector};

pub const DEFAULT_QUADRATURE_HALF_WIDTH: usize = 3;

/// How the shed integral in `Q1` is discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    /// Nodes at `nu + l / sqrt(eta)`, `l = -L..=L`, weighted by the
    /// posterior density and renormalized.
    Rectangle,
    /// `2L + 1`-point Gauss-Hermite rule for the normal weight.
    GaussHermite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VbSettings {
    /// Relative change in `nu` and total-variation change in `Delta`
    /// below which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// `L`: quadrature nodes per side of the posterior mean.
    pub quadrature_half_width: usize,
    pub rule: QuadratureRule,
}

impl Default for VbSettings {
    fn default() -> Self {
        VbSettings {
            tol: 1e-8,
            max_iter: 500,
            quadrature_half_width: DEFAULT_QUADRATURE_HALF_WIDTH,
            rule: QuadratureRule::Rectangle,
        }
    }
}

/// Fitted product posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VbPosterior {
    /// Offset probabilities ordered `-d..=d`.
    pub delta_probs: Vec<f64>,
    /// Posterior mean of the shed.
    pub nu: f64,
    /// Posterior precision of the shed; `None` when the shed is known.
    pub eta: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub(crate) rule: QuadratureRule,
}

impl VbPosterior {
    /// Most probable offset.
    pub fn map_offset(&self) -> i64 {
        let d = (self.delta_probs.len() / 2) as i64;
        let (k, _) = self
            .delta_probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
        k as i64 - d
    }
}

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax_into(logits: &[f64], out: &mut [f64]) -> Result<()> {
    let lse = log_sum_exp(logits.iter().copied());
    if !lse.is_finite() {
        return Err(Error::Numerical(format!("offset weights not normalizable (log-sum {lse})")));
    }
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - lse).exp();
    }
    Ok(())
}

/// Coordinate-ascent fit of the product posterior for one reading vector.
pub fn fit_posterior(scn: &ObsScenario, x: &ReadingVector, settings: &VbSettings) -> Result<VbPosterior> {
    if scn.case() == ObsCase::A {
        return Err(Error::UnsupportedCase('A'));
    }
    let e = scn.residuals(x)?;
    // 1_delta^T (y - x)
    let s: Vec<f64> = scn.window_sums(&e).into_iter().map(|v| -v).collect();
    let var = scn.sigma() * scn.sigma();
    let m = scn.m() as f64;
    let nu0 = scn.nu0();
    let eta = scn.eta0().map(|eta0| eta0 + m / var);

    let k = s.len();
    let mut nu = nu0;
    let mut delta = vec![1.0 / k as f64; k];
    let mut next = vec![0.0; k];
    let mut logits = vec![0.0; k];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter.max(1) {
        iterations += 1;
        let second_moment = nu * nu + eta.map_or(0.0, |e| 1.0 / e);
        for (l, s) in logits.iter_mut().zip(&s) {
            *l = nu / var * s - second_moment / (2.0 * var) * m;
        }
        softmax_into(&logits, &mut next)?;
        let nu_next = match (scn.eta0(), eta) {
            (Some(eta0), Some(eta)) => {
                let weighted: f64 = next.iter().zip(&s).map(|(p, s)| p * s).sum();
                (nu0 * eta0 + weighted / var) / eta
            }
            _ => nu0,
        };
        if !nu_next.is_finite() {
            return Err(Error::Numerical(format!("posterior shed mean diverged after {iterations} iterations")));
        }
        let tv = 0.5 * next.iter().zip(&delta).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let rel = (nu_next - nu).abs() / nu_next.abs().max(1e-12);
        nu = nu_next;
        std::mem::swap(&mut delta, &mut next);
        if rel.max(tv) < settings.tol {
            converged = true;
            break;
        }
    }
    Ok(VbPosterior { delta_probs: delta, nu, eta, iterations, converged, rule: settings.rule })
}

/// Shed nodes and normalized log-weights for integrating against `g`.
fn shed_nodes(post: &VbPosterior, half_width: usize) -> Vec<(f64, f64)> {
    let Some(eta) = post.eta else {
        return vec![(post.nu, 0.0)];
    };
    let sd = 1.0 / eta.sqrt();
    let (z, lw): (Vec<f64>, Vec<f64>) = match post.rule {
        QuadratureRule::Rectangle => (-(half_width as i64)..=half_width as i64)
            .map(|l| (l as f64, -0.5 * (l * l) as f64))
            .unzip(),
        QuadratureRule::GaussHermite => {
            let (nodes, weights) = gauss_hermite(2 * half_width + 1);
            (nodes, weights.iter().map(|w| w.ln()).collect())
        }
    };
    let norm = log_sum_exp(lw.iter().copied());
    z.into_iter().zip(lw).map(|(z, lw)| (post.nu + z * sd, lw - norm)).collect()
}

/// `log Q1(x)`: working-state density averaged over the posterior of the
/// shed and offset.
pub fn q1_quadrature(scn: &ObsScenario, x: &ReadingVector, post: &VbPosterior, half_width: usize) -> Result<f64> {
    if post.delta_probs.len() != scn.n_offsets() {
        return Err(Error::DimensionMismatch { expected: scn.n_offsets(), got: post.delta_probs.len() });
    }
    let e = scn.residuals(x)?;
    let log_q0 = scn.log_q0(&e);
    let sums = scn.window_sums(&e);
    let var = scn.sigma() * scn.sigma();
    let m = scn.m() as f64;
    let nodes = shed_nodes(post, half_width.max(1));
    let terms = nodes.iter().flat_map(|&(r, lw)| {
        sums.iter().zip(&post.delta_probs).filter(|(_, &p)| p > 0.0).map(move |(s, p)| {
            // log prod phi((e+r)/sigma) - log prod phi(e/sigma) over the window
            lw + p.ln() - (2.0 * r * s + m * r * r) / (2.0 * var)
        })
    });
    let lse = log_sum_exp(terms.collect::<Vec<_>>());
    if !lse.is_finite() {
        return Err(Error::Numerical("working-state likelihood underflowed".into()));
    }
    Ok(log_q0 + lse)
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the standard
/// normal density. Nodes are eigenvalues of the Jacobi matrix with zero
/// diagonal and off-diagonal `sqrt(k)`, located by Sturm bisection.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let bound = 2.0 * (n as f64).sqrt() + 1.0;
    // Number of eigenvalues strictly below x.
    let count_below = |x: f64| -> usize {
        let mut count = 0;
        let mut q = -x;
        if q < 0.0 {
            count += 1;
        }
        for k in 1..n {
            let denom = if q == 0.0 { f64::EPSILON } else { q };
            q = -x - k as f64 / denom;
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    let nodes: Vec<f64> = (0..n)
        .map(|i| {
            let (mut lo, mut hi) = (-bound, bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if count_below(mid) > i {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect();
    // w_i ∝ 1 / He_{n-1}(x_i)^2
    let raw: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (mut h0, mut h1) = (1.0, x);
            if n == 1 {
                return 1.0;
            }
            for k in 1..n - 1 {
                let h2 = x * h1 - k as f64 * h0;
                h0 = h1;
                h1 = h2;
            }
            1.0 / (h1 * h1)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    (nodes, raw.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obsmodel::log_phi;

    fn case_c(sigma: f64, m: usize) -> ObsScenario {
        let sd = 0.1 * sigma;
        ObsScenario::new(ObsCase::C, m, 0, sigma, 1.0, Some(1.0 / (sd * sd)), vec![2.0; m]).unwrap()
    }

    #[test]
    fn synchronized_case_is_conjugate() {
        let scn = case_c(0.8, 10);
        let x = ReadingVector((0..10).map(|i| 2.0 - 0.9 + 0.1 * (i as f64).sin()).collect());
        let post = fit_posterior(&scn, &x, &VbSettings::default()).unwrap();
        assert_eq!(post.delta_probs, vec![1.0]);
        let eta0 = scn.eta0().unwrap();
        let eta = eta0 + 10.0 / 0.64;
        assert_eq!(post.eta, Some(eta));
        let sum: f64 = x.0.iter().map(|x| 2.0 - x).sum();
        let nu = (1.0 * eta0 + sum / 0.64) / eta;
        assert!((post.nu - nu).abs() < 1e-12);
        assert!(post.converged);
    }

    #[test]
    fn precision_is_constant() {
        let scn = ObsScenario::reference(ObsCase::D, 0.0);
        let x = scn.reading_from(true, &[0.3; 14], 1.2, -1);
        let post = fit_posterior(&scn, &x, &VbSettings::default()).unwrap();
        let expect = scn.eta0().unwrap() + 10.0 / (scn.sigma() * scn.sigma());
        assert_eq!(post.eta.unwrap(), expect);
        assert!((post.delta_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn offset_weights_reduce_to_softmax() {
        // The m-dependent term is identical across offsets and must cancel.
        let scn = ObsScenario::reference(ObsCase::D, 0.0);
        let z: Vec<f64> = (0..14).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect();
        let x = scn.reading_from(true, &z, 0.95, 2);
        let post = fit_posterior(&scn, &x, &VbSettings::default()).unwrap();
        let e = scn.residuals(&x).unwrap();
        let s: Vec<f64> = scn.window_sums(&e).iter().map(|v| -v).collect();
        // Weights from the converged nu, recomputed with the plain softmax.
        let var = scn.sigma().powi(2);
        let logits: Vec<f64> = s.iter().map(|s| post.nu / var * s).collect();
        let mut plain = vec![0.0; 5];
        softmax_into(&logits, &mut plain).unwrap();
        let logits_full: Vec<f64> = s
            .iter()
            .map(|s| post.nu / var * s - (post.nu.powi(2) + 1.0 / post.eta.unwrap()) / (2.0 * var) * 10.0)
            .collect();
        let mut full = vec![0.0; 5];
        softmax_into(&logits_full, &mut full).unwrap();
        for (a, b) in plain.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn known_shed_only_updates_offsets() {
        let scn = ObsScenario::reference(ObsCase::B, 10.0);
        let x = scn.reading_from(true, &[0.0; 14], 1.0, 1);
        let post = fit_posterior(&scn, &x, &VbSettings::default()).unwrap();
        assert_eq!(post.nu, 1.0);
        assert_eq!(post.eta, None);
        assert_eq!(post.map_offset(), 1);
        assert!(post.converged);
    }

    #[test]
    fn case_a_rejected() {
        let scn = ObsScenario::reference(ObsCase::A, 0.0);
        let x = ReadingVector(vec![5.0; 10]);
        assert_eq!(fit_posterior(&scn, &x, &VbSettings::default()), Err(Error::UnsupportedCase('A')));
    }

    #[test]
    fn point_mass_quadrature_matches_case_a() {
        let scn_c = case_c(1.0, 10);
        let x = ReadingVector((0..10).map(|i| 1.3 + 0.2 * i as f64 / 10.0).collect());
        let post = VbPosterior {
            delta_probs: vec![1.0],
            nu: 0.8,
            eta: Some(1e18),
            iterations: 1,
            converged: true,
            rule: QuadratureRule::Rectangle,
        };
        let q1 = q1_quadrature(&scn_c, &x, &post, 1).unwrap();
        let direct: f64 = x.0.iter().map(|x| log_phi(x - 2.0 + 0.8)).sum();
        assert!((q1 - direct).abs() < 1e-6);
    }

    #[test]
    fn no_shed_data_favors_broken() {
        let scn = ObsScenario::reference(ObsCase::D, -5.0);
        let x = ReadingVector(scn.baseline().to_vec());
        let lik = scn.observe(&x, &VbSettings::default()).unwrap();
        assert!(lik.log_q1 < lik.log_q0);
    }

    #[test]
    fn quadrature_close_to_exact_marginal() {
        // Trapezoid integration of Q1(x|r) rho(r) over 10001 points.
        let scn = case_c(1.0, 10);
        let x = ReadingVector(vec![1.0; 10]);
        let lik = scn.observe(&x, &VbSettings::default()).unwrap();
        let eta0 = scn.eta0().unwrap();
        let sd = 1.0 / eta0.sqrt();
        let (lo, hi, n) = (1.0 - 8.0 * sd, 1.0 + 8.0 * sd, 10_001);
        let h = (hi - lo) / (n - 1) as f64;
        let logs: Vec<f64> = (0..n)
            .map(|k| {
                let r = lo + k as f64 * h;
                let w: f64 = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
                let prior = log_phi((r - 1.0) / sd) - sd.ln();
                let lik: f64 = x.0.iter().map(|x| log_phi(x - 2.0 + r)).sum();
                w.ln() + h.ln() + prior + lik
            })
            .collect();
        let exact = log_sum_exp(logs);
        assert!((lik.log_q1 - exact).abs() < 0.05, "{} vs {}", lik.log_q1, exact);
    }

    #[test]
    fn gauss_hermite_rules() {
        let (x, w) = gauss_hermite(7);
        let expect = [3.750439717725742, 2.366759410734541, 1.154405394739968, 0.0];
        for (i, e) in expect.iter().enumerate() {
            assert!((x[6 - i] - e).abs() < 1e-10);
            assert!((x[i] + e).abs() < 1e-10);
        }
        assert!((w[3] - 0.457142857142857).abs() < 1e-12);
        // exact for polynomials of degree <= 13: E[z^4] = 3, E[z^6] = 15
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        let m6: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((m4 - 3.0).abs() < 1e-10 && (m6 - 15.0).abs() < 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let scn = ObsScenario::reference(ObsCase::D, 0.0);
        let z: Vec<f64> = (0..14).map(|i| (i as f64 * 0.37).cos()).collect();
        let x = scn.reading_from(true, &z, 1.1, 0);
        let a = fit_posterior(&scn, &x, &VbSettings::default()).unwrap();
        let b = fit_posterior(&scn, &x, &VbSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}
