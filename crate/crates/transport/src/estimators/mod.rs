//! Target-population effect estimators.
//!
//! Two families, split by the assumption that licenses them:
//!
//! * [`mean`] — estimators valid when arm means transport conditionally on
//!   covariates (weighted Horvitz-Thompson and its Neyman variant, weighted
//!   and transported G-formulas, the estimating-equation estimator, and
//!   one-step corrections).
//! * [`effect`] — estimators valid under the weaker premise that only the
//!   conditional effect itself transports; these need baseline outcome data
//!   from the target population.
//!
//! [`bootstrap`] and [`sandwich`] provide confidence machinery for both.

pub mod bootstrap;
pub mod effect;
pub mod mean;
pub mod sandwich;
#[cfg(test)]
pub(crate) mod testkit;

use serde::Serialize;

use crate::data::StudyData;
use crate::error::{Error, Result};
use crate::measures::Measure;
use crate::nuisance::NuisanceFit;

/// Every estimator the crate ships, addressable by a stable string id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorId {
    /// Ratio-weighted Horvitz-Thompson plug-in with the known randomization
    /// probability.
    Wht,
    /// Horvitz-Thompson with empirically estimated arm probabilities.
    Neyman,
    /// Ratio-weighted G-formula averaged over source rows.
    GWeighted,
    /// G-formula with source-fitted regressions averaged over target rows.
    GTransported,
    /// Estimating-equation (augmented, doubly robust) estimator.
    Ee,
    /// One-step corrected plug-in, initialized at the transported G-formula.
    OneStep,
    /// Gamma-formula transported over target rows.
    EffectGammaTransported,
    /// Ratio-weighted Gamma-formula over source rows.
    EffectGammaWeighted,
    /// Estimating-equation estimator for the treated target mean.
    EffectEe,
    /// One-step corrected Gamma-formula.
    EffectOneStep,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 10] = [
        EstimatorId::Wht,
        EstimatorId::Neyman,
        EstimatorId::GWeighted,
        EstimatorId::GTransported,
        EstimatorId::Ee,
        EstimatorId::OneStep,
        EstimatorId::EffectGammaTransported,
        EstimatorId::EffectGammaWeighted,
        EstimatorId::EffectEe,
        EstimatorId::EffectOneStep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorId::Wht => "wht",
            EstimatorId::Neyman => "neyman",
            EstimatorId::GWeighted => "g_weighted",
            EstimatorId::GTransported => "g_transported",
            EstimatorId::Ee => "ee",
            EstimatorId::OneStep => "one_step",
            EstimatorId::EffectGammaTransported => "effect/gamma_transported",
            EstimatorId::EffectGammaWeighted => "effect/gamma_weighted",
            EstimatorId::EffectEe => "effect/ee",
            EstimatorId::EffectOneStep => "effect/one_step",
        }
    }

    /// Case-insensitive parse accepting the common shorthand aliases.
    pub fn parse(s: &str) -> Result<EstimatorId> {
        let key = s.trim().to_ascii_lowercase();
        Ok(match key.as_str() {
            "wht" => EstimatorId::Wht,
            "neyman" => EstimatorId::Neyman,
            "g_weighted" | "wg" | "gw" => EstimatorId::GWeighted,
            "g_transported" | "tg" | "gt" => EstimatorId::GTransported,
            "ee" => EstimatorId::Ee,
            "one_step" | "os" => EstimatorId::OneStep,
            "effect/gamma_transported" | "effect/gt" => EstimatorId::EffectGammaTransported,
            "effect/gamma_weighted" | "effect/gw" => EstimatorId::EffectGammaWeighted,
            "effect/ee" => EstimatorId::EffectEe,
            "effect/one_step" | "effect/os" => EstimatorId::EffectOneStep,
            _ => {
                return Err(Error::UnknownEstimator {
                    name: s.trim().to_string(),
                    valid: EstimatorId::ALL
                        .iter()
                        .map(|e| e.name())
                        .collect::<Vec<_>>()
                        .join(", "),
                })
            }
        })
    }

    /// Whether the estimator needs baseline outcomes observed in the target
    /// population.
    pub fn requires_target_outcomes(self) -> bool {
        matches!(
            self,
            EstimatorId::EffectGammaTransported
                | EstimatorId::EffectGammaWeighted
                | EstimatorId::EffectEe
                | EstimatorId::EffectOneStep
        )
    }
}

impl std::fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-estimate diagnostics attached to every report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportDiagnostics {
    /// Treated-arm target mean behind the reported estimate.
    pub psi1_hat: f64,
    /// Control-arm target mean behind the reported estimate.
    pub psi0_hat: f64,
    /// EE augmentation terms, when the estimator has them.
    pub correction1: Option<f64>,
    pub correction0: Option<f64>,
    /// Mean density ratio over source rows; ~1 under correct specification.
    pub ratio_self_normalization: f64,
    /// Rows whose density ratio hit the clip bound.
    pub clipped: usize,
    /// Cross-fitting folds (1 = global fit).
    pub folds: usize,
    pub selection_converged: bool,
    pub selection_iterations: usize,
    pub outcome_link: crate::nuisance::Link,
}

/// A single estimate with optional uncertainty, serializable as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub measure: String,
    pub estimator: String,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Percentile or Wald interval as [lo, hi]; lo <= hi always, though a
    /// percentile interval may exclude the point estimate.
    pub ci: Option<[f64; 2]>,
    pub level: Option<f64>,
    pub n: usize,
    pub m: usize,
    pub diagnostics: ReportDiagnostics,
}

pub(crate) fn build_report(
    d: &StudyData,
    nf: &NuisanceFit,
    estimator: EstimatorId,
    m: Measure,
    arms: &mean::ArmMeans,
    estimate: f64,
) -> EstimateReport {
    EstimateReport {
        measure: m.name().to_string(),
        estimator: estimator.name().to_string(),
        estimate,
        se: None,
        ci: None,
        level: None,
        n: d.n_source(),
        m: d.n_target(),
        diagnostics: ReportDiagnostics {
            psi1_hat: arms.psi1,
            psi0_hat: arms.psi0,
            correction1: arms.correction1,
            correction0: arms.correction0,
            ratio_self_normalization: nf.diagnostics.ratio_self_normalization,
            clipped: nf.diagnostics.clipped,
            folds: nf.diagnostics.folds,
            selection_converged: nf.diagnostics.selection_converged,
            selection_iterations: nf.diagnostics.selection_iterations,
            outcome_link: nf.diagnostics.outcome_link,
        },
    }
}

/// Point estimation dispatcher over all estimator ids.
///
/// `one_step` initializes at the transported G-formula; the `mean` and
/// `effect` modules expose the other initializers directly.
pub fn estimate(
    d: &StudyData,
    id: EstimatorId,
    m: Measure,
    nf: &NuisanceFit,
) -> Result<EstimateReport> {
    match id {
        EstimatorId::Wht => mean::wht(d, m, nf),
        EstimatorId::Neyman => mean::neyman(d, m, nf),
        EstimatorId::GWeighted => mean::g_weighted(d, m, nf),
        EstimatorId::GTransported => mean::g_transported(d, m, nf),
        EstimatorId::Ee => mean::ee(d, m, nf),
        EstimatorId::OneStep => mean::one_step(d, m, nf, mean::Initializer::GTransported),
        EstimatorId::EffectGammaTransported => {
            let en = effect::EffectNuisance::from_fit(d, m, nf)?;
            effect::gamma_transported(d, m, &en, nf)
        }
        EstimatorId::EffectGammaWeighted => {
            let en = effect::EffectNuisance::from_fit(d, m, nf)?;
            effect::gamma_weighted(d, m, &en, nf)
        }
        EstimatorId::EffectEe => {
            let en = effect::EffectNuisance::from_fit(d, m, nf)?;
            effect::ee_effect(d, m, &en, nf)
        }
        EstimatorId::EffectOneStep => {
            let en = effect::EffectNuisance::from_fit(d, m, nf)?;
            effect::one_step_effect(d, m, &en, nf, effect::EffectInitializer::GammaTransported)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_ids_round_trip_and_alias() {
        for id in EstimatorId::ALL {
            assert_eq!(EstimatorId::parse(id.name()).unwrap(), id);
        }
        assert_eq!(EstimatorId::parse("wHT").unwrap(), EstimatorId::Wht);
        assert_eq!(EstimatorId::parse("tG").unwrap(), EstimatorId::GTransported);
        assert_eq!(EstimatorId::parse("wG").unwrap(), EstimatorId::GWeighted);
        assert_eq!(EstimatorId::parse("OS").unwrap(), EstimatorId::OneStep);
        assert_eq!(
            EstimatorId::parse(" effect/OS ").unwrap(),
            EstimatorId::EffectOneStep
        );
        let err = EstimatorId::parse("gee").unwrap_err();
        assert!(err.to_string().contains("g_transported"), "{err}");
    }

    #[test]
    fn target_outcome_requirement_is_flagged() {
        assert!(!EstimatorId::Ee.requires_target_outcomes());
        assert!(EstimatorId::EffectEe.requires_target_outcomes());
    }
}
