//! Estimators that transport arm means: weighted Horvitz-Thompson, its
//! Neyman variant, the weighted and transported G-formulas, the
//! estimating-equation estimator, and one-step corrections.
//!
//! Throughout, `n` counts source rows, `m` target rows, `N = n + m`, and the
//! source fraction is estimated by `alpha_hat = n/N`. Arm means are target
//! quantities: `psi_a` estimates the mean of `Y(a)` in the target
//! population.

use crate::data::StudyData;
use crate::error::Result;
use crate::estimators::{build_report, EstimateReport, EstimatorId};
use crate::measures::Measure;
use crate::nuisance::NuisanceFit;

/// Estimated target arm means plus the correction terms that produced them.
#[derive(Debug, Clone, Copy)]
pub struct ArmMeans {
    pub psi1: f64,
    pub psi0: f64,
    /// Augmentation added on top of the base term (estimating-equation and
    /// one-step estimators only).
    pub correction1: Option<f64>,
    pub correction0: Option<f64>,
    pub method: &'static str,
}

impl ArmMeans {
    fn plain(psi1: f64, psi0: f64, method: &'static str) -> ArmMeans {
        ArmMeans {
            psi1,
            psi0,
            correction1: None,
            correction0: None,
            method,
        }
    }
}

/// Iterate source rows as (index, treated, outcome).
fn source_rows<'a>(d: &'a StudyData) -> impl Iterator<Item = (usize, bool, f64)> + 'a {
    (0..d.len()).filter_map(move |i| {
        if d.source(i) {
            // invariant: source rows always carry arm and outcome
            Some((i, d.a(i).unwrap(), d.y(i).unwrap()))
        } else {
            None
        }
    })
}

fn target_rows<'a>(d: &'a StudyData) -> impl Iterator<Item = usize> + 'a {
    (0..d.len()).filter(move |&i| !d.source(i))
}

/// Ratio-weighted Horvitz-Thompson arm means with the known randomization
/// probability: `psi_a = (1/n) sum_{source} 1{A=a} r(X) Y / P(A=a)`.
pub fn wht_arm_means(d: &StudyData, nf: &NuisanceFit) -> ArmMeans {
    let (pi1, pi0) = (d.pi(), 1.0 - d.pi());
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, a, y) in source_rows(d) {
        if a {
            s1 += nf.r[i] * y / pi1;
        } else {
            s0 += nf.r[i] * y / pi0;
        }
    }
    let n = d.n_source() as f64;
    ArmMeans::plain(s1 / n, s0 / n, "wht")
}

/// Horvitz-Thompson with empirical arm probabilities
/// `pi_hat_a = n_a / n` in place of the design values.
pub fn neyman_arm_means(d: &StudyData, nf: &NuisanceFit) -> ArmMeans {
    let n = d.n_source() as f64;
    let n1 = source_rows(d).filter(|&(_, a, _)| a).count() as f64;
    let (pi1, pi0) = (n1 / n, (n - n1) / n);
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, a, y) in source_rows(d) {
        if a {
            s1 += nf.r[i] * y / pi1;
        } else {
            s0 += nf.r[i] * y / pi0;
        }
    }
    ArmMeans::plain(s1 / n, s0 / n, "neyman")
}

/// Ratio-weighted G-formula arm means:
/// `psi_a = (1/n) sum_{source} r(X) mu_a(X)`.
pub fn g_weighted_arm_means(d: &StudyData, nf: &NuisanceFit) -> ArmMeans {
    let (mut s1, mut s0) = (0.0, 0.0);
    for (i, _, _) in source_rows(d) {
        s1 += nf.r[i] * nf.mu[1][i];
        s0 += nf.r[i] * nf.mu[0][i];
    }
    let n = d.n_source() as f64;
    ArmMeans::plain(s1 / n, s0 / n, "g_weighted")
}

/// Transported G-formula arm means:
/// `psi_a = (1/m) sum_{target} mu_a(X)` — no density ratio involved.
pub fn g_transported_arm_means(d: &StudyData, nf: &NuisanceFit) -> ArmMeans {
    let (mut s1, mut s0) = (0.0, 0.0);
    for i in target_rows(d) {
        s1 += nf.mu[1][i];
        s0 += nf.mu[0][i];
    }
    let m = d.n_target() as f64;
    ArmMeans::plain(s1 / m, s0 / m, "g_transported")
}

/// Estimating-equation arm means,
///
/// ```text
/// psi_a = (1/m) sum_{target} mu_a(X)
///       + (1-alpha)/(m alpha) sum_{source} 1{A=a} r(X) (Y - mu_a(X)) / P(A=a),
/// ```
///
/// with `alpha_hat = n/N`, which makes the correction coefficient exactly
/// `1/n`. `P(A=a)` is the known randomization probability.
pub fn ee_arm_means(d: &StudyData, nf: &NuisanceFit) -> ArmMeans {
    ee_arm_means_with(d, nf, false)
}

/// [`ee_arm_means`] with the option of empirical arm probabilities inside
/// the augmentation term.
pub fn ee_arm_means_with(d: &StudyData, nf: &NuisanceFit, estimated_pi: bool) -> ArmMeans {
    let n = d.n_source() as f64;
    let m = d.n_target() as f64;
    let (pi1, pi0) = if estimated_pi {
        let n1 = source_rows(d).filter(|&(_, a, _)| a).count() as f64;
        (n1 / n, (n - n1) / n)
    } else {
        (d.pi(), 1.0 - d.pi())
    };

    let (mut base1, mut base0) = (0.0, 0.0);
    for i in target_rows(d) {
        base1 += nf.mu[1][i];
        base0 += nf.mu[0][i];
    }
    base1 /= m;
    base0 /= m;

    let coef = (1.0 - nf.alpha_hat) / (m * nf.alpha_hat);
    let (mut res1, mut res0) = (0.0, 0.0);
    for (i, a, y) in source_rows(d) {
        if a {
            res1 += nf.r[i] * (y - nf.mu[1][i]) / pi1;
        } else {
            res0 += nf.r[i] * (y - nf.mu[0][i]) / pi0;
        }
    }
    let corr1 = coef * res1;
    let corr0 = coef * res0;
    ArmMeans {
        psi1: base1 + corr1,
        psi0: base0 + corr0,
        correction1: Some(corr1),
        correction0: Some(corr0),
        method: "ee",
    }
}

/// Per-row influence contributions for one arm mean at `psi_a`:
///
/// ```text
/// phi_a(Z) = (1-S)/(1-alpha) (mu_a(X) - psi_a)
///          + S 1{A=a} / (alpha P(A=a)) r(X) (Y - mu_a(X)).
/// ```
pub fn eif_arm(d: &StudyData, nf: &NuisanceFit, arm: bool, psi_a: f64) -> Vec<f64> {
    let mu = &nf.mu[usize::from(arm)];
    let pi_a = if arm { d.pi() } else { 1.0 - d.pi() };
    (0..d.len())
        .map(|i| {
            if d.source(i) {
                if d.a(i) == Some(arm) {
                    nf.r[i] * (d.y(i).unwrap() - mu[i]) / (nf.alpha_hat * pi_a)
                } else {
                    0.0
                }
            } else {
                (mu[i] - psi_a) / (1.0 - nf.alpha_hat)
            }
        })
        .collect()
}

/// Row-wise influence values of the measure-level estimate at
/// `(psi1, psi0)`: the chain-rule combination
/// `dPhi_1 * phi_1 + dPhi_0 * phi_0` with analytic partials.
pub fn eif_mean(
    d: &StudyData,
    m: Measure,
    nf: &NuisanceFit,
    psi1: f64,
    psi0: f64,
) -> Result<Vec<f64>> {
    let (d1, d0) = m.dphi(psi1, psi0)?;
    let phi1 = eif_arm(d, nf, true, psi1);
    let phi0 = eif_arm(d, nf, false, psi0);
    Ok(phi1
        .iter()
        .zip(&phi0)
        .map(|(p1, p0)| d1 * p1 + d0 * p0)
        .collect())
}

fn finish(
    d: &StudyData,
    nf: &NuisanceFit,
    id: EstimatorId,
    m: Measure,
    arms: ArmMeans,
) -> Result<EstimateReport> {
    let estimate = m.phi(arms.psi1, arms.psi0)?;
    Ok(build_report(d, nf, id, m, &arms, estimate))
}

pub fn wht(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<EstimateReport> {
    finish(d, nf, EstimatorId::Wht, m, wht_arm_means(d, nf))
}

pub fn neyman(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<EstimateReport> {
    finish(d, nf, EstimatorId::Neyman, m, neyman_arm_means(d, nf))
}

pub fn g_weighted(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<EstimateReport> {
    finish(d, nf, EstimatorId::GWeighted, m, g_weighted_arm_means(d, nf))
}

pub fn g_transported(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<EstimateReport> {
    finish(
        d,
        nf,
        EstimatorId::GTransported,
        m,
        g_transported_arm_means(d, nf),
    )
}

pub fn ee(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<EstimateReport> {
    finish(d, nf, EstimatorId::Ee, m, ee_arm_means(d, nf))
}

/// Plug-in estimators eligible as one-step starting points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Initializer {
    Wht,
    GWeighted,
    GTransported,
}

impl Initializer {
    fn arm_means(self, d: &StudyData, nf: &NuisanceFit) -> ArmMeans {
        match self {
            Initializer::Wht => wht_arm_means(d, nf),
            Initializer::GWeighted => g_weighted_arm_means(d, nf),
            Initializer::GTransported => g_transported_arm_means(d, nf),
        }
    }
}

/// One-step corrected estimator: the plug-in at the initializer's arm means
/// plus the empirical mean of the influence function there,
/// `tau_os = Phi(psi1, psi0) + dPhi_1 * mean(phi_1) + dPhi_0 * mean(phi_0)`.
///
/// For the risk difference this collapses algebraically onto the
/// estimating-equation estimator whatever the initializer.
pub fn one_step(
    d: &StudyData,
    m: Measure,
    nf: &NuisanceFit,
    init: Initializer,
) -> Result<EstimateReport> {
    let arms = init.arm_means(d, nf);
    one_step_from(d, m, nf, arms.psi1, arms.psi0)
}

/// One-step correction from explicit initial arm means.
pub fn one_step_from(
    d: &StudyData,
    m: Measure,
    nf: &NuisanceFit,
    psi1: f64,
    psi0: f64,
) -> Result<EstimateReport> {
    let plug_in = m.phi(psi1, psi0)?;
    let (d1, d0) = m.dphi(psi1, psi0)?;
    let n_total = d.len() as f64;
    let corr1 = d1 * eif_arm(d, nf, true, psi1).iter().sum::<f64>() / n_total;
    let corr0 = d0 * eif_arm(d, nf, false, psi0).iter().sum::<f64>() / n_total;
    let arms = ArmMeans {
        psi1,
        psi0,
        correction1: Some(corr1),
        correction0: Some(corr0),
        method: "one_step",
    };
    let estimate = plug_in + corr1 + corr0;
    Ok(build_report(d, nf, EstimatorId::OneStep, m, &arms, estimate))
}

/// Asymptotic variance of the weighted Horvitz-Thompson estimator,
///
/// ```text
/// V = (1/alpha) [ dPhi_1^2 E1/pi + dPhi_0^2 E0/(1-pi)
///                 - (dPhi_1 psi1 + dPhi_0 psi0)^2 ],
/// E_a = (1/n) sum_{source} 1{A=a} r(X)^2 Y^2 / P(A=a),
/// ```
///
/// a moment plug-in for the delta-method composition of the per-arm
/// Horvitz-Thompson variances with their cross-covariance. The standard
/// error of the estimate is `sqrt(V / N)`.
pub fn variance_oracle_wht(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<f64> {
    let arms = wht_arm_means(d, nf);
    let (d1, d0) = m.dphi(arms.psi1, arms.psi0)?;
    let (pi1, pi0) = (d.pi(), 1.0 - d.pi());
    let (mut e1, mut e0) = (0.0, 0.0);
    for (i, a, y) in source_rows(d) {
        let r2y2 = nf.r[i] * nf.r[i] * y * y;
        if a {
            e1 += r2y2 / pi1;
        } else {
            e0 += r2y2 / pi0;
        }
    }
    let n = d.n_source() as f64;
    e1 /= n;
    e0 /= n;
    let drift = d1 * arms.psi1 + d0 * arms.psi0;
    Ok((d1 * d1 * e1 / pi1 + d0 * d0 * e0 / pi0 - drift * drift) / nf.alpha_hat)
}
