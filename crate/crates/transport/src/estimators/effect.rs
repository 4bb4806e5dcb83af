//! Estimators that transport the conditional effect itself rather than the
//! arm means. They rest on a weaker premise — only the covariate-conditional
//! effect is assumed common to both populations — but pay for it by needing
//! baseline (control-arm) outcomes observed in the target population.
//!
//! The treated target mean is recovered by inverting the measure pointwise:
//! `psi1 = E_T[ Gamma(tau(X), mu0_T(X)) ]`, with `Gamma` the partial inverse
//! from the measure registry.

use crate::data::StudyData;
use crate::error::{Error, Result};
use crate::estimators::mean::ArmMeans;
use crate::estimators::{build_report, EstimateReport, EstimatorId};
use crate::measures::Measure;
use crate::nuisance::NuisanceFit;

/// Nuisance bundle for effect-transport estimators, cached per row.
#[derive(Debug, Clone)]
pub struct EffectNuisance {
    /// Plug-in conditional effect `Phi(mu1_S(X_i), mu0_S(X_i))` per row.
    pub cate: Vec<f64>,
    /// Source control-arm regression per row.
    pub mu0_s: Vec<f64>,
    /// Target control-arm regression per row.
    pub mu0_t: Vec<f64>,
    /// Density ratio per row.
    pub r: Vec<f64>,
    /// Raw mean outcome among target controls.
    pub psi0_t: f64,
    pub alpha_hat: f64,
    pub pi: f64,
}

impl EffectNuisance {
    /// Assemble from a fitted [`NuisanceFit`]. Fails fast when the data
    /// carry no target-control outcomes: the identification genuinely needs
    /// them, and the mean-transport estimators remain available.
    pub fn from_fit(d: &StudyData, m: Measure, nf: &NuisanceFit) -> Result<EffectNuisance> {
        let mu0_t = nf.mu0_target.clone().ok_or_else(|| {
            Error::Capability(
                "target-control outcomes are required by the effect-transport estimators; \
                 the mean-transport estimators (wht, neyman, g_weighted, g_transported, ee, \
                 one_step) remain available"
                    .into(),
            )
        })?;
        let cate = nf.cate_values(d, m)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..d.len() {
            if !d.source(i) {
                if let Some(y) = d.y(i) {
                    sum += y;
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::Capability(
                "no observed target-control outcomes to estimate the baseline mean".into(),
            ));
        }
        Ok(EffectNuisance {
            cate,
            mu0_s: nf.mu[0].clone(),
            mu0_t,
            r: nf.r.clone(),
            psi0_t: sum / count as f64,
            alpha_hat: nf.alpha_hat,
            pi: nf.pi,
        })
    }

    fn gamma_at(&self, m: Measure, d: &StudyData, i: usize, psi0: f64) -> Result<f64> {
        m.gamma(self.cate[i], psi0).map_err(|e| Error::Cate {
            row: Some(i),
            x: d.x_row(i),
            source: Box::new(e),
        })
    }

    fn dgamma_at(&self, m: Measure, d: &StudyData, i: usize, psi0: f64) -> Result<f64> {
        m.dgamma_dpsi0(self.cate[i], psi0).map_err(|e| Error::Cate {
            row: Some(i),
            x: d.x_row(i),
            source: Box::new(e),
        })
    }
}

/// Transported Gamma-formula:
/// `Phi( (1/m) sum_T Gamma(tau(X), mu0_T(X)), (1/m) sum_T mu0_T(X) )`.
pub fn gamma_transported(
    d: &StudyData,
    m: Measure,
    en: &EffectNuisance,
    nf: &NuisanceFit,
) -> Result<EstimateReport> {
    let (psi1, psi0) = gamma_transported_means(d, m, en)?;
    let estimate = m.phi(psi1, psi0)?;
    let arms = ArmMeans {
        psi1,
        psi0,
        correction1: None,
        correction0: None,
        method: "effect/gamma_transported",
    };
    Ok(build_report(
        d,
        nf,
        EstimatorId::EffectGammaTransported,
        m,
        &arms,
        estimate,
    ))
}

fn gamma_transported_means(d: &StudyData, m: Measure, en: &EffectNuisance) -> Result<(f64, f64)> {
    let (mut g_sum, mut mu_sum) = (0.0, 0.0);
    for i in 0..d.len() {
        if !d.source(i) {
            g_sum += en.gamma_at(m, d, i, en.mu0_t[i])?;
            mu_sum += en.mu0_t[i];
        }
    }
    let mt = d.n_target() as f64;
    Ok((g_sum / mt, mu_sum / mt))
}

/// Weighted Gamma-formula:
/// `Phi( (1/n) sum_S r(X) Gamma(tau(X), mu0_T(X)), psi0_T )` with the
/// baseline `psi0_T` taken as the raw target-control outcome mean.
pub fn gamma_weighted(
    d: &StudyData,
    m: Measure,
    en: &EffectNuisance,
    nf: &NuisanceFit,
) -> Result<EstimateReport> {
    let psi1 = gamma_weighted_psi1(d, m, en)?;
    let estimate = m.phi(psi1, en.psi0_t)?;
    let arms = ArmMeans {
        psi1,
        psi0: en.psi0_t,
        correction1: None,
        correction0: None,
        method: "effect/gamma_weighted",
    };
    Ok(build_report(
        d,
        nf,
        EstimatorId::EffectGammaWeighted,
        m,
        &arms,
        estimate,
    ))
}

fn gamma_weighted_psi1(d: &StudyData, m: Measure, en: &EffectNuisance) -> Result<f64> {
    let mut sum = 0.0;
    for i in 0..d.len() {
        if d.source(i) {
            sum += en.r[i] * en.gamma_at(m, d, i, en.mu0_t[i])?;
        }
    }
    Ok(sum / d.n_source() as f64)
}

/// Row-wise influence values for the treated target mean at `psi1`:
///
/// ```text
/// phi_1(Z) = (S r/alpha) (A/pi) (Y - Gamma(tau(X), mu0_S(X)))
///          - (S r/alpha) ((1-A)/(1-pi)) (Y - mu0_S(X)) dGamma_0(tau(X), mu0_T(X))
///          + ((1-S)/(1-alpha)) (Gamma(tau(X), mu0_T(X)) - psi1).
/// ```
///
/// Note the deliberate asymmetry: the treated residual centers `Y` at
/// `Gamma` evaluated with the *source* baseline regression, while the
/// control term's derivative weight uses the *target* one.
pub fn eif_effect(
    d: &StudyData,
    m: Measure,
    en: &EffectNuisance,
    psi1: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        let v = if d.source(i) {
            let y = d.y(i).unwrap();
            let w = en.r[i] / en.alpha_hat;
            if d.a(i) == Some(true) {
                w * (y - en.gamma_at(m, d, i, en.mu0_s[i])?) / en.pi
            } else {
                -w * (y - en.mu0_s[i]) * en.dgamma_at(m, d, i, en.mu0_t[i])? / (1.0 - en.pi)
            }
        } else {
            (en.gamma_at(m, d, i, en.mu0_t[i])? - psi1) / (1.0 - en.alpha_hat)
        };
        out.push(v);
    }
    Ok(out)
}

/// Estimating-equation estimator: `Phi(psi1_EE, psi0_T)` with
///
/// ```text
/// psi1_EE = (1/m) sum_T Gamma(tau, mu0_T)
///         + (1-alpha)/(alpha m) sum_S r [ (A/pi)(Y - Gamma(tau, mu0_S))
///             - ((1-A)/(1-pi))(Y - mu0_S) dGamma_0(tau, mu0_T) ].
/// ```
pub fn ee_effect(
    d: &StudyData,
    m: Measure,
    en: &EffectNuisance,
    nf: &NuisanceFit,
) -> Result<EstimateReport> {
    let (psi1_ee, correction) = ee_effect_psi1(d, m, en)?;
    let estimate = m.phi(psi1_ee, en.psi0_t)?;
    let arms = ArmMeans {
        psi1: psi1_ee,
        psi0: en.psi0_t,
        correction1: Some(correction),
        correction0: None,
        method: "effect/ee",
    };
    Ok(build_report(d, nf, EstimatorId::EffectEe, m, &arms, estimate))
}

pub(crate) fn ee_effect_psi1(d: &StudyData, m: Measure, en: &EffectNuisance) -> Result<(f64, f64)> {
    let mut base = 0.0;
    for i in 0..d.len() {
        if !d.source(i) {
            base += en.gamma_at(m, d, i, en.mu0_t[i])?;
        }
    }
    let mt = d.n_target() as f64;
    base /= mt;

    let mut res = 0.0;
    for i in 0..d.len() {
        if d.source(i) {
            let y = d.y(i).unwrap();
            res += if d.a(i) == Some(true) {
                en.r[i] * (y - en.gamma_at(m, d, i, en.mu0_s[i])?) / en.pi
            } else {
                -en.r[i] * (y - en.mu0_s[i]) * en.dgamma_at(m, d, i, en.mu0_t[i])? / (1.0 - en.pi)
            };
        }
    }
    let coef = (1.0 - en.alpha_hat) / (en.alpha_hat * mt);
    let correction = coef * res;
    Ok((base + correction, correction))
}

/// Plug-ins eligible as starting points for the one-step correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectInitializer {
    GammaTransported,
    GammaWeighted,
}

/// One-step corrected Gamma-formula:
/// `Phi(psi1, psi0_T) + dPhi_1(psi1, psi0_T) * mean(phi_1)`.
pub fn one_step_effect(
    d: &StudyData,
    m: Measure,
    en: &EffectNuisance,
    nf: &NuisanceFit,
    init: EffectInitializer,
) -> Result<EstimateReport> {
    let psi1 = match init {
        EffectInitializer::GammaTransported => gamma_transported_means(d, m, en)?.0,
        EffectInitializer::GammaWeighted => gamma_weighted_psi1(d, m, en)?,
    };
    one_step_effect_from(d, m, en, nf, psi1)
}

/// One-step correction from an explicit initial treated mean.
pub fn one_step_effect_from(
    d: &StudyData,
    m: Measure,
    en: &EffectNuisance,
    nf: &NuisanceFit,
    psi1: f64,
) -> Result<EstimateReport> {
    let plug_in = m.phi(psi1, en.psi0_t)?;
    let (d1, _) = m.dphi(psi1, en.psi0_t)?;
    let phi1 = eif_effect(d, m, en, psi1)?;
    let correction = d1 * phi1.iter().sum::<f64>() / d.len() as f64;
    let arms = ArmMeans {
        psi1,
        psi0: en.psi0_t,
        correction1: Some(correction),
        correction0: None,
        method: "effect/one_step",
    };
    Ok(build_report(
        d,
        nf,
        EstimatorId::EffectOneStep,
        m,
        &arms,
        plug_in + correction,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testkit::{binary_dataset, linear_dataset, manual_fit};
    use crate::nuisance::{fit_nuisances, NuisanceOptions};

    /// 3 source rows (2 treated, 1 control) + 3 target rows with outcomes.
    fn fixture(y: [f64; 6]) -> StudyData {
        StudyData::new(
            vec![true, true, true, false, false, false],
            vec![
                vec![0.1],
                vec![0.2],
                vec![0.3],
                vec![0.4],
                vec![0.5],
                vec![0.6],
            ],
            vec![
                Some(true),
                Some(true),
                Some(false),
                Some(false),
                Some(false),
                Some(false),
            ],
            y.map(Some).to_vec(),
            0.5,
        )
        .unwrap()
    }

    fn manual_en(
        cate: Vec<f64>,
        mu0_s: Vec<f64>,
        mu0_t: Vec<f64>,
        r: Vec<f64>,
        psi0_t: f64,
    ) -> EffectNuisance {
        EffectNuisance {
            cate,
            mu0_s,
            mu0_t,
            r,
            psi0_t,
            alpha_hat: 0.5,
            pi: 0.5,
        }
    }

    #[test]
    fn null_cate_gives_null_estimate() {
        let d = fixture([1.0, 0.0, 0.5, 0.4, 0.2, 0.3]);
        let nf = manual_fit(&d, vec![1.0; 6], vec![0.0; 6], vec![0.0; 6]);
        let mu0_t = vec![0.3, 0.3, 0.3, 0.35, 0.2, 0.45];
        // RD null is 0, RR null is 1
        for (m, null, cate) in [(Measure::Rd, 0.0, 0.0), (Measure::Rr, 1.0, 1.0)] {
            let en = manual_en(vec![cate; 6], vec![0.3; 6], mu0_t.clone(), vec![1.0; 6], 0.3);
            let est = gamma_transported(&d, m, &en, &nf).unwrap().estimate;
            assert_eq!(est, null, "{m:?}");
        }
    }

    #[test]
    fn rd_gamma_transported_is_the_mean_cate() {
        let d = fixture([1.0, 0.0, 0.5, 0.4, 0.2, 0.3]);
        let nf = manual_fit(&d, vec![1.0; 6], vec![0.0; 6], vec![0.0; 6]);
        let cate = vec![0.05, 0.1, 0.15, 0.2, -0.1, 0.4];
        let en = manual_en(
            cate.clone(),
            vec![0.3; 6],
            vec![0.35, 0.2, 0.45, 0.3, 0.25, 0.15],
            vec![1.0; 6],
            0.3,
        );
        let est = gamma_transported(&d, Measure::Rd, &en, &nf).unwrap().estimate;
        let mean_cate = (cate[3] + cate[4] + cate[5]) / 3.0;
        assert!((est - mean_cate).abs() < 1e-12, "{est} vs {mean_cate}");
    }

    #[test]
    fn gamma_weighted_null_cate_constant_baseline_is_null() {
        // constant mu0_T = c, target outcomes exactly c, r arbitrary but
        // self-normalized: the weighted estimate collapses to the null
        let d = fixture([1.0, 0.0, 0.5, 0.4, 0.4, 0.4]);
        let nf = manual_fit(&d, vec![1.0; 6], vec![0.0; 6], vec![0.0; 6]);
        let en = manual_en(vec![0.0; 6], vec![0.4; 6], vec![0.4; 6], vec![1.0; 6], 0.4);
        let est = gamma_weighted(&d, Measure::Rd, &en, &nf).unwrap().estimate;
        assert!(est.abs() < 1e-15, "{est}");
    }

    #[test]
    fn exact_noiseless_nuisances_collapse_ee_onto_gamma_transported() {
        // treated source outcomes equal Gamma(tau, mu0_S), controls equal
        // mu0_S, target outcomes equal mu0_T: every residual vanishes
        let mu0_s = [0.3, 0.4, 0.5, 0.0, 0.0, 0.0];
        let mu0_t = [0.0, 0.0, 0.0, 0.45, 0.25, 0.35];
        let tau = 0.2;
        let d = fixture([
            mu0_s[0] + tau,
            mu0_s[1] + tau,
            mu0_s[2],
            mu0_t[3],
            mu0_t[4],
            mu0_t[5],
        ]);
        let nf = manual_fit(&d, vec![1.0; 6], vec![0.0; 6], vec![0.0; 6]);
        let psi0_t = (mu0_t[3] + mu0_t[4] + mu0_t[5]) / 3.0;
        let en = manual_en(
            vec![tau; 6],
            mu0_s.to_vec(),
            mu0_t.to_vec(),
            vec![1.0; 6],
            psi0_t,
        );
        let ee_rep = ee_effect(&d, Measure::Rd, &en, &nf).unwrap();
        let gt_rep = gamma_transported(&d, Measure::Rd, &en, &nf).unwrap();
        assert_eq!(ee_rep.diagnostics.correction1, Some(0.0));
        assert!((ee_rep.estimate - gt_rep.estimate).abs() < 1e-15);
    }

    #[test]
    fn eif_effect_mean_is_zero_at_the_ee_mean() {
        let d = binary_dataset(800, 41, true);
        let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
        for m in [Measure::Rd, Measure::Rr, Measure::Or] {
            let en = EffectNuisance::from_fit(&d, m, &nf).unwrap();
            let (psi1_ee, _) = ee_effect_psi1(&d, m, &en).unwrap();
            let phi = eif_effect(&d, m, &en, psi1_ee).unwrap();
            let mean = phi.iter().sum::<f64>() / phi.len() as f64;
            assert!(mean.abs() < 1e-10, "{m:?}: {mean:e}");
        }
    }

    #[test]
    fn one_step_from_ee_mean_equals_ee_and_rd_collapses_for_all_initializers() {
        let d = binary_dataset(700, 43, true);
        let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
        for m in [Measure::Rd, Measure::Rr, Measure::Or] {
            let en = EffectNuisance::from_fit(&d, m, &nf).unwrap();
            let ee_est = ee_effect(&d, m, &en, &nf).unwrap();
            let (psi1_ee, _) = ee_effect_psi1(&d, m, &en).unwrap();
            let os = one_step_effect_from(&d, m, &en, &nf, psi1_ee).unwrap();
            assert!(
                (os.estimate - ee_est.estimate).abs() < 1e-12,
                "{m:?}: {} vs {}",
                os.estimate,
                ee_est.estimate
            );
        }
        // RD: linear measure, so the one-step lands on ee from any start
        let en = EffectNuisance::from_fit(&d, Measure::Rd, &nf).unwrap();
        let ee_est = ee_effect(&d, Measure::Rd, &en, &nf).unwrap().estimate;
        for init in [
            EffectInitializer::GammaTransported,
            EffectInitializer::GammaWeighted,
        ] {
            let os = one_step_effect(&d, Measure::Rd, &en, &nf, init)
                .unwrap()
                .estimate;
            assert!((os - ee_est).abs() < 1e-12, "{init:?}");
        }
    }

    #[test]
    fn missing_target_outcomes_is_a_capability_error() {
        let d = linear_dataset(300, 47, false);
        let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
        let err = EffectNuisance::from_fit(&d, Measure::Rd, &nf).unwrap_err();
        assert_eq!(err.kind(), "capability");
        assert!(err.to_string().contains("g_transported"), "{err}");
    }

    #[test]
    fn inadmissible_gamma_reports_the_row() {
        let d = fixture([1.0, 0.0, 0.5, 0.4, 0.2, 0.3]);
        let nf = manual_fit(&d, vec![1.0; 6], vec![0.0; 6], vec![0.0; 6]);
        // relative-change CATE of 1.5 exceeds the admissible range upward
        let en = manual_en(vec![1.5; 6], vec![0.3; 6], vec![0.3; 6], vec![1.0; 6], 0.3);
        let err = gamma_transported(&d, Measure::Grrr, &en, &nf).unwrap_err();
        assert_eq!(err.kind(), "cate");
        assert!(err.to_string().contains("row 3"), "{err}");
    }
}
