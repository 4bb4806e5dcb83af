//! Synthetic data-generating processes and a Monte Carlo study runner.
//!
//! Five benchmark designs are shipped, every one a two-population draw
//! (source trial, target sample) over Gaussian covariates:
//!
//! * `exp1_nonlinear`: binary outcomes through a non-logistic response,
//!   identical in both populations, so transporting arm means is valid but
//!   any linear-logistic outcome fit is misspecified.
//! * `exp2_rd` / `exp2_rr` / `exp2_or`: the response depends on the
//!   population, but the conditional effect on the named scale does not.
//! * `appE_linear`: plain linear outcomes shared by both populations;
//!   everything works, useful as a calm baseline and for variance checks.
//!
//! Coefficients live in `config/dgp.toml` next to the crate sources. Only
//! the model shapes are fixed by the designs; the shipped numbers were
//! chosen once by the calibration example (`cargo run --release --example
//! calibrate`) and are frozen in that file.
//!
//! [`generate`] draws a dataset, [`true_effects`] integrates the exact
//! response surfaces for ground truth, and [`run_study`] replicates an
//! estimator battery and summarizes bias, spread, RMSE and CI coverage.

mod dgp;
mod study;
mod truth;

pub use dgp::{generate, generate_stream, GeneratedStudy};
pub use study::{
    run_study, IdentityChecks, MetricRow, NuisancePlan, OutcomePlan, RatioPlan, ReplicateRow,
    SimulationReport, StudyConfig, TruthRow, STUDY_FAILURE_TOLERANCE,
};
pub use truth::{
    closed_form_arm_means, true_effects, true_effects_quasi, TrueEffects, MIN_TRUTH_DRAWS,
};

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::nuisance::{sigmoid, Link};

const DGP_CONFIG: &str = include_str!("../../config/dgp.toml");

/// The five shipped designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgpName {
    Exp1Nonlinear,
    Exp2Rd,
    Exp2Rr,
    Exp2Or,
    AppELinear,
}

impl DgpName {
    pub const ALL: [DgpName; 5] = [
        DgpName::Exp1Nonlinear,
        DgpName::Exp2Rd,
        DgpName::Exp2Rr,
        DgpName::Exp2Or,
        DgpName::AppELinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DgpName::Exp1Nonlinear => "exp1_nonlinear",
            DgpName::Exp2Rd => "exp2_rd",
            DgpName::Exp2Rr => "exp2_rr",
            DgpName::Exp2Or => "exp2_or",
            DgpName::AppELinear => "appE_linear",
        }
    }

    pub fn parse(s: &str) -> Result<DgpName> {
        match s.to_ascii_lowercase().as_str() {
            "exp1_nonlinear" | "exp1" => Ok(DgpName::Exp1Nonlinear),
            "exp2_rd" => Ok(DgpName::Exp2Rd),
            "exp2_rr" => Ok(DgpName::Exp2Rr),
            "exp2_or" => Ok(DgpName::Exp2Or),
            "appe_linear" | "appe" => Ok(DgpName::AppELinear),
            other => Err(Error::Config(format!(
                "unknown design `{other}`; expected one of {}",
                DgpName::ALL.map(|n| n.name()).join(", ")
            ))),
        }
    }
}

impl std::fmt::Display for DgpName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Response-surface family with its coefficients. Every vector is an
/// intercept-first coefficient over V = [1, X].
#[derive(Debug, Clone)]
pub enum Design {
    /// P(Y(a)=1 | X) = sigma(beta0'V * (V'beta1)^a), same in both
    /// populations.
    Exp1 {
        beta0: Vec<f64>,
        beta1: Vec<f64>,
    },
    /// Y(a) = V'beta[a] + sigma*eps on the source; the target adds one
    /// shared shift theta to both arms, so the RD-scale effect transports.
    Exp2Rd {
        /// Source arm coefficients; beta[1] is the treated arm.
        beta: [Vec<f64>; 2],
        theta: Vec<f64>,
        sigma: f64,
    },
    /// P(Y(a)=1 | X, S=s) = sigma(V'beta_s) * sigma(V'gamma)^a.
    Exp2Rr {
        beta_source: Vec<f64>,
        beta_target: Vec<f64>,
        gamma: Vec<f64>,
    },
    /// P(Y(a)=1 | X, S=s) = sigma(V'(beta_s + a*gamma)).
    Exp2Or {
        beta_source: Vec<f64>,
        beta_target: Vec<f64>,
        gamma: Vec<f64>,
    },
    /// Y(a) = V'beta[a] + sigma*eps in both populations.
    AppE {
        beta: [Vec<f64>; 2],
        sigma: f64,
    },
}

/// A fully specified data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub name: DgpName,
    /// Covariate dimension.
    pub p: usize,
    /// P(S = 1).
    pub alpha: f64,
    /// P(A = 1 | S = 1).
    pub pi: f64,
    /// Covariate mean in the source population.
    pub nu_s: Vec<f64>,
    /// Covariate mean in the target population.
    pub nu_t: Vec<f64>,
    /// Whether generated target rows expose their control-arm outcome.
    pub target_controls: bool,
    pub design: Design,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DgpTable {
    alpha: Option<f64>,
    pi: Option<f64>,
    nu_s: Option<Vec<f64>>,
    nu_t: Vec<f64>,
    target_controls: bool,
    sigma: Option<f64>,
    beta0: Option<Vec<f64>>,
    beta1: Option<Vec<f64>>,
    theta: Option<Vec<f64>>,
    beta_s: Option<Vec<f64>>,
    beta_t: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
}

fn require(v: Option<Vec<f64>>, table: &str, key: &str) -> Result<Vec<f64>> {
    v.ok_or_else(|| Error::Config(format!("dgp config [{table}] is missing `{key}`")))
}

impl DgpSpec {
    /// The shipped configuration for a design.
    pub fn named(name: DgpName) -> DgpSpec {
        DgpSpec::from_toml(DGP_CONFIG, name).expect("embedded dgp config is valid")
    }

    /// Parse a design name and return its shipped configuration.
    pub fn parse(s: &str) -> Result<DgpSpec> {
        Ok(DgpSpec::named(DgpName::parse(s)?))
    }

    /// Read one design from a TOML document (same schema as
    /// `config/dgp.toml`).
    pub fn from_toml(source: &str, name: DgpName) -> Result<DgpSpec> {
        let mut tables: BTreeMap<String, DgpTable> = toml::from_str(source)
            .map_err(|e| Error::Config(format!("dgp config: {e}")))?;
        let key = name.name();
        let t = tables
            .remove(key)
            .ok_or_else(|| Error::Config(format!("dgp config has no [{key}] table")))?;
        let p = t.nu_t.len();
        let sigma = t.sigma.unwrap_or(1.0);
        let design = match name {
            DgpName::Exp1Nonlinear => Design::Exp1 {
                beta0: require(t.beta0, key, "beta0")?,
                beta1: require(t.beta1, key, "beta1")?,
            },
            DgpName::Exp2Rd => Design::Exp2Rd {
                beta: [
                    require(t.beta0, key, "beta0")?,
                    require(t.beta1, key, "beta1")?,
                ],
                theta: require(t.theta, key, "theta")?,
                sigma,
            },
            DgpName::Exp2Rr => Design::Exp2Rr {
                beta_source: require(t.beta_s, key, "beta_s")?,
                beta_target: require(t.beta_t, key, "beta_t")?,
                gamma: require(t.gamma, key, "gamma")?,
            },
            DgpName::Exp2Or => Design::Exp2Or {
                beta_source: require(t.beta_s, key, "beta_s")?,
                beta_target: require(t.beta_t, key, "beta_t")?,
                gamma: require(t.gamma, key, "gamma")?,
            },
            DgpName::AppELinear => Design::AppE {
                beta: [
                    require(t.beta0, key, "beta0")?,
                    require(t.beta1, key, "beta1")?,
                ],
                sigma,
            },
        };
        let spec = DgpSpec {
            name,
            p,
            alpha: t.alpha.unwrap_or(0.3),
            pi: t.pi.unwrap_or(0.5),
            nu_s: t.nu_s.unwrap_or_else(|| vec![0.0; p]),
            nu_t: t.nu_t,
            target_controls: t.target_controls,
            design,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_target_controls(mut self, expose: bool) -> DgpSpec {
        self.target_controls = expose;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Config("dgp needs at least one covariate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Config(format!(
                "alpha and pi must lie in (0, 1), got alpha={}, pi={}",
                self.alpha, self.pi
            )));
        }
        if self.nu_s.len() != self.p || self.nu_t.len() != self.p {
            return Err(Error::Config(format!(
                "population means must have length {}, got {} and {}",
                self.p,
                self.nu_s.len(),
                self.nu_t.len()
            )));
        }
        let check = |label: &str, v: &[f64]| {
            if v.len() != self.p + 1 {
                return Err(Error::Config(format!(
                    "coefficient `{label}` must have length {} (intercept first), got {}",
                    self.p + 1,
                    v.len()
                )));
            }
            Ok(())
        };
        match &self.design {
            Design::Exp1 { beta0, beta1 } => {
                check("beta0", beta0)?;
                check("beta1", beta1)?;
            }
            Design::Exp2Rd { beta, theta, sigma } => {
                check("beta0", &beta[0])?;
                check("beta1", &beta[1])?;
                check("theta", theta)?;
                if !(*sigma > 0.0) {
                    return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
                }
            }
            Design::Exp2Rr {
                beta_source,
                beta_target,
                gamma,
            }
            | Design::Exp2Or {
                beta_source,
                beta_target,
                gamma,
            } => {
                check("beta_s", beta_source)?;
                check("beta_t", beta_target)?;
                check("gamma", gamma)?;
            }
            Design::AppE { beta, sigma } => {
                check("beta0", &beta[0])?;
                check("beta1", &beta[1])?;
                if !(*sigma > 0.0) {
                    return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
                }
            }
        }
        Ok(())
    }

    /// Whether outcomes are Bernoulli (else Gaussian around a linear mean).
    pub fn binary_outcomes(&self) -> bool {
        matches!(
            self.design,
            Design::Exp1 { .. } | Design::Exp2Rr { .. } | Design::Exp2Or { .. }
        )
    }

    /// The outcome link a correctly specified regression would use.
    pub fn link(&self) -> Link {
        if self.binary_outcomes() {
            Link::Logit
        } else {
            Link::Identity
        }
    }

    /// Exact conditional mean E[Y(a) | X=x, S] for the chosen population.
    pub fn true_mu(&self, source: bool, arm: bool, x: &[f64]) -> f64 {
        match &self.design {
            Design::Exp1 { beta0, beta1 } => {
                let base = dot1(beta0, x);
                sigmoid(if arm { base * dot1(beta1, x) } else { base })
            }
            Design::Exp2Rd { beta, theta, .. } => {
                let mut mu = dot1(&beta[arm as usize], x);
                if !source {
                    mu += dot1(theta, x);
                }
                mu
            }
            Design::Exp2Rr {
                beta_source,
                beta_target,
                gamma,
            } => {
                let b = if source { beta_source } else { beta_target };
                let mut p = sigmoid(dot1(b, x));
                if arm {
                    p *= sigmoid(dot1(gamma, x));
                }
                p
            }
            Design::Exp2Or {
                beta_source,
                beta_target,
                gamma,
            } => {
                let b = if source { beta_source } else { beta_target };
                let mut eta = dot1(b, x);
                if arm {
                    eta += dot1(gamma, x);
                }
                sigmoid(eta)
            }
            Design::AppE { beta, .. } => dot1(&beta[arm as usize], x),
        }
    }

    /// Exact density ratio p_T(x) / p_S(x) of the two Gaussian covariate
    /// laws.
    pub fn true_ratio(&self, x: &[f64]) -> f64 {
        let mut log_r = 0.0;
        for j in 0..self.p {
            // N(nu_t, 1) over N(nu_s, 1) log-density difference
            log_r += (self.nu_t[j] - self.nu_s[j]) * x[j]
                + 0.5 * (self.nu_s[j] * self.nu_s[j] - self.nu_t[j] * self.nu_t[j]);
        }
        log_r.exp()
    }
}

/// Intercept-first dot product: coef[0] + coef[1..] . x.
pub(crate) fn dot1(coef: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(coef.len(), x.len() + 1);
    coef[0]
        + coef[1..]
            .iter()
            .zip(x.iter())
            .map(|(c, xi)| c * xi)
            .sum::<f64>()
}

/// Neumaier compensated accumulator; keeps long Monte Carlo sums exact to
/// the last few ulps regardless of magnitude drift.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.c += (self.sum - t) + v;
        } else {
            self.c += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(self) -> f64 {
        self.sum + self.c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_design_parses_and_validates() {
        for name in DgpName::ALL {
            let spec = DgpSpec::named(name);
            assert_eq!(spec.name, name);
            assert_eq!(spec.p, spec.nu_t.len());
            spec.validate().unwrap();
        }
    }

    #[test]
    fn name_aliases_and_unknowns() {
        assert_eq!(DgpName::parse("exp1").unwrap(), DgpName::Exp1Nonlinear);
        assert_eq!(DgpName::parse("APPE_LINEAR").unwrap(), DgpName::AppELinear);
        let err = DgpName::parse("exp3").unwrap_err();
        assert_eq!(err.kind(), "config");
        assert!(err.to_string().contains("exp2_rr"));
    }

    #[test]
    fn exp2_designs_share_the_named_conditional_effect() {
        // the defining property: the CATE on the matched scale is the same
        // function of x in both populations
        let x = [0.4, -1.2, 0.7, 0.2];
        let rd = DgpSpec::named(DgpName::Exp2Rd);
        let cate = |spec: &DgpSpec, s: bool, f: &dyn Fn(f64, f64) -> f64| {
            f(spec.true_mu(s, true, &x), spec.true_mu(s, false, &x))
        };
        let diff = |p1: f64, p0: f64| p1 - p0;
        assert!((cate(&rd, true, &diff) - cate(&rd, false, &diff)).abs() < 1e-12);

        let rr = DgpSpec::named(DgpName::Exp2Rr);
        let ratio = |p1: f64, p0: f64| p1 / p0;
        assert!((cate(&rr, true, &ratio) - cate(&rr, false, &ratio)).abs() < 1e-12);

        let or = DgpSpec::named(DgpName::Exp2Or);
        let odds = |p1: f64, p0: f64| p1 * (1.0 - p0) / ((1.0 - p1) * p0);
        assert!((cate(&or, true, &odds) - cate(&or, false, &odds)).abs() < 1e-12);

        // and mean exchangeability fails in all three
        assert!((rd.true_mu(true, false, &x) - rd.true_mu(false, false, &x)).abs() > 0.05);
        assert!((rr.true_mu(true, false, &x) - rr.true_mu(false, false, &x)).abs() > 0.01);
        assert!((or.true_mu(true, false, &x) - or.true_mu(false, false, &x)).abs() > 0.01);
    }

    #[test]
    fn true_ratio_matches_the_gaussian_densities() {
        let spec = DgpSpec::named(DgpName::Exp1Nonlinear);
        let x = [0.5, -0.3, 1.1, 0.0];
        let log_pdf = |nu: &[f64]| -> f64 {
            x.iter()
                .zip(nu.iter())
                .map(|(xi, ni)| -0.5 * (xi - ni) * (xi - ni))
                .sum()
        };
        let expected = (log_pdf(&spec.nu_t) - log_pdf(&spec.nu_s)).exp();
        assert!((spec.true_ratio(&x) - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn missing_coefficients_are_reported() {
        let err = DgpSpec::from_toml(
            "[exp2_rr]\nnu_t = [0.3]\ntarget_controls = true\nbeta_s = [0.0, 1.0]\n",
            DgpName::Exp2Rr,
        )
        .unwrap_err();
        assert!(err.to_string().contains("beta_t"), "{err}");
    }

    #[test]
    fn kahan_sums_survive_magnitude_drift() {
        let mut k = Kahan::default();
        k.add(1e16);
        for _ in 0..10_000 {
            k.add(1.0);
        }
        k.add(-1e16);
        assert_eq!(k.value(), 10_000.0);
    }
}
