//! Registry of first-moment causal effect measures.
//!
//! An effect measure summarizes the contrast between two arm means
//! `psi1 = E[Y(1)]` and `psi0 = E[Y(0)]` through a smooth map
//! `tau = Φ(psi1, psi0)`. Every registered measure also carries its effect
//! function `Γ(tau, psi0)`, the partial inverse of `Φ` in the first argument:
//!
//! ```text
//!     Γ(Φ(psi1, psi0), psi0) = psi1        on the measure's domain.
//! ```
//!
//! The pair (Φ, Γ) plus four partial derivatives is exactly what the
//! estimators downstream consume: Φ turns arm means into an effect, Γ carries
//! an effect from one baseline risk to another, and the derivatives feed
//! delta-method variances, one-step corrections, and influence functions.
//! Differentiating the inverse identity in psi0 and psi1 gives the two
//! identities the estimators rely on, checked in the test suite:
//!
//! ```text
//!     ∂₁Φ · ∂τΓ∘Φ = 1        and        ∂₀Φ · ∂τΓ∘Φ + ∂₀Γ∘Φ = 0.
//! ```
//!
//! Twelve classical measures are registered, from the risk difference to the
//! arcsine difference (Rothman, Greenland & Lash, *Modern Epidemiology*, ch. 4
//! covers most of them; the switch relative risk is due to van der Laan,
//! Hubbard & Jewell, 2007). All evaluation is plain `f64`; arguments outside
//! a measure's admissible domain produce [`Error::Domain`] instead of NaN or
//! infinities, so degenerate inputs surface at the call site.

use crate::error::{Error, Result};

/// Divisors and difference gaps smaller than this are treated as zero.
///
/// Used for the NNT degeneracy guard |psi1 - psi0| and for Γ denominators
/// such as 1 + τ·psi0 - psi0 (OR). Keeping one shared cutoff makes domain
/// errors reproducible across the registry.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// A first-moment causal effect measure.
///
/// Copy-able handle into the registry; all evaluation methods live on it.
/// `parse` accepts the canonical identifiers case-insensitively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    /// Risk difference, psi1 - psi0.
    Rd,
    /// Risk ratio, psi1 / psi0.
    Rr,
    /// Odds ratio, odds(psi1) / odds(psi0).
    Or,
    /// Number needed to treat, 1 / (psi1 - psi0).
    Nnt,
    /// Generalized (switch) relative risk: relative risk computed on the
    /// beneficial scale, switching between survival and risk ratios.
    Grrr,
    /// Excess relative risk, (psi1 - psi0) / psi0.
    Excess,
    /// Survival ratio, (1 - psi1) / (1 - psi0).
    Sr,
    /// Relative susceptibility, (1 - psi0) / (1 - psi1).
    Rs,
    /// Log odds ratio.
    LogOr,
    /// Odds product, odds(psi1) * odds(psi0).
    OddsProduct,
    /// Arcsine-square-root difference, asin(sqrt(psi1)) - asin(sqrt(psi0)).
    ArcsineDiff,
    /// Relative risk reduction, 1 - psi1 / psi0.
    Rrr,
}

use Measure::*;

impl Measure {
    /// Every registered measure, in registry order.
    pub const ALL: [Measure; 12] = [
        Rd,
        Rr,
        Or,
        Nnt,
        Grrr,
        Excess,
        Sr,
        Rs,
        LogOr,
        OddsProduct,
        ArcsineDiff,
        Rrr,
    ];

    /// Canonical identifier, as accepted by [`Measure::parse`] and the CLI.
    pub fn name(self) -> &'static str {
        match self {
            Rd => "RD",
            Rr => "RR",
            Or => "OR",
            Nnt => "NNT",
            Grrr => "GRRR",
            Excess => "ERR",
            Sr => "SR",
            Rs => "RS",
            LogOr => "logOR",
            OddsProduct => "OddsProduct",
            ArcsineDiff => "ArcsineDiff",
            Rrr => "RRR",
        }
    }

    /// Look a measure up by its canonical identifier, case-insensitively.
    pub fn parse(name: &str) -> Result<Measure> {
        let lowered = name.trim().to_ascii_lowercase();
        Measure::ALL
            .iter()
            .copied()
            .find(|m| m.name().to_ascii_lowercase() == lowered)
            .ok_or_else(|| Error::UnknownMeasure {
                name: name.to_string(),
                valid: Measure::ALL
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }

    /// Value of Φ(p, p) when it is the same for all baselines p, i.e. the
    /// measure's null-effect value. `None` for NNT (Φ diverges as
    /// psi1 → psi0) and the odds product (Φ(p, p) depends on p).
    pub fn null_value(self) -> Option<f64> {
        match self {
            Rd | Grrr | Excess | LogOr | ArcsineDiff | Rrr => Some(0.0),
            Rr | Or | Sr | Rs => Some(1.0),
            Nnt | OddsProduct => None,
        }
    }

    /// Whether (psi1, psi0) lies in the measure's admissible domain D_Φ.
    ///
    /// Domains are the maximal sets on which Φ is defined and injective in
    /// psi1, not (0,1)²: continuous outcomes put arm means anywhere on the
    /// real line and RD/RR/OR and friends remain meaningful there. Only the
    /// intrinsically probability-scale measures (GRRR, logOR, ArcsineDiff)
    /// constrain the means to [0,1] or (0,1).
    pub fn domain(self, psi1: f64, psi0: f64) -> bool {
        if !psi1.is_finite() || !psi0.is_finite() {
            return false;
        }
        match self {
            Rd => true,
            Rr | Excess | Rrr => psi0 != 0.0,
            Or => psi1 != 1.0 && psi0 != 0.0 && psi0 != 1.0,
            Nnt => (psi1 - psi0).abs() >= DEGENERACY_EPS,
            Grrr => in_closed_unit(psi1) && in_closed_unit(psi0),
            Sr => psi0 != 1.0,
            Rs => psi1 != 1.0,
            LogOr => in_open_unit(psi1) && in_open_unit(psi0),
            OddsProduct => psi1 != 1.0 && psi0 != 0.0 && psi0 != 1.0,
            ArcsineDiff => in_closed_unit(psi1) && in_closed_unit(psi0),
        }
    }

    /// The effect measure Φ(psi1, psi0).
    pub fn phi(self, psi1: f64, psi0: f64) -> Result<f64> {
        self.check_domain(psi1, psi0)?;
        Ok(match self {
            Rd => psi1 - psi0,
            Rr => psi1 / psi0,
            Or => psi1 * (1.0 - psi0) / ((1.0 - psi1) * psi0),
            Nnt => 1.0 / (psi1 - psi0),
            Grrr => {
                if psi1 > psi0 {
                    1.0 - (1.0 - psi1) / (1.0 - psi0)
                } else if psi1 < psi0 {
                    psi1 / psi0 - 1.0
                } else {
                    0.0
                }
            }
            Excess => (psi1 - psi0) / psi0,
            Sr => (1.0 - psi1) / (1.0 - psi0),
            Rs => (1.0 - psi0) / (1.0 - psi1),
            LogOr => (psi1 / (1.0 - psi1)).ln() - (psi0 / (1.0 - psi0)).ln(),
            OddsProduct => psi1 * psi0 / ((1.0 - psi1) * (1.0 - psi0)),
            ArcsineDiff => psi1.sqrt().asin() - psi0.sqrt().asin(),
            Rrr => 1.0 - psi1 / psi0,
        })
    }

    /// ∂Φ/∂psi1.
    pub fn dphi_d1(self, psi1: f64, psi0: f64) -> Result<f64> {
        self.check_derivative_point(psi1, psi0)?;
        Ok(match self {
            Rd => 1.0,
            Rr | Excess => 1.0 / psi0,
            Or => (1.0 - psi0) / (psi0 * sq(1.0 - psi1)),
            Nnt => -1.0 / sq(psi1 - psi0),
            Grrr => {
                if psi1 > psi0 {
                    1.0 / (1.0 - psi0)
                } else {
                    1.0 / psi0
                }
            }
            Sr => -1.0 / (1.0 - psi0),
            Rs => (1.0 - psi0) / sq(1.0 - psi1),
            LogOr => 1.0 / (psi1 * (1.0 - psi1)),
            OddsProduct => psi0 / ((1.0 - psi0) * sq(1.0 - psi1)),
            ArcsineDiff => 0.5 / (psi1 * (1.0 - psi1)).sqrt(),
            Rrr => -1.0 / psi0,
        })
    }

    /// ∂Φ/∂psi0.
    pub fn dphi_d0(self, psi1: f64, psi0: f64) -> Result<f64> {
        self.check_derivative_point(psi1, psi0)?;
        Ok(match self {
            Rd => -1.0,
            Rr | Excess => -psi1 / sq(psi0),
            Or => -psi1 / ((1.0 - psi1) * sq(psi0)),
            Nnt => 1.0 / sq(psi1 - psi0),
            Grrr => {
                if psi1 > psi0 {
                    -(1.0 - psi1) / sq(1.0 - psi0)
                } else {
                    -psi1 / sq(psi0)
                }
            }
            Sr => (1.0 - psi1) / sq(1.0 - psi0),
            Rs => -1.0 / (1.0 - psi1),
            LogOr => -1.0 / (psi0 * (1.0 - psi0)),
            OddsProduct => psi1 / ((1.0 - psi1) * sq(1.0 - psi0)),
            ArcsineDiff => -0.5 / (psi0 * (1.0 - psi0)).sqrt(),
            Rrr => psi1 / sq(psi0),
        })
    }

    /// Both partials of Φ at once, as (∂₁Φ, ∂₀Φ).
    pub fn dphi(self, psi1: f64, psi0: f64) -> Result<(f64, f64)> {
        Ok((self.dphi_d1(psi1, psi0)?, self.dphi_d0(psi1, psi0)?))
    }

    /// The effect function Γ(tau, psi0): the psi1 with Φ(psi1, psi0) = tau.
    pub fn gamma(self, tau: f64, psi0: f64) -> Result<f64> {
        self.check_gamma_point(tau, psi0)?;
        Ok(match self {
            Rd => psi0 + tau,
            Rr => tau * psi0,
            Or => tau * psi0 / (1.0 + tau * psi0 - psi0),
            Nnt => 1.0 / tau + psi0,
            Grrr => {
                if tau > 0.0 {
                    1.0 - (1.0 - tau) * (1.0 - psi0)
                } else if tau < 0.0 {
                    psi0 * (1.0 + tau)
                } else {
                    psi0
                }
            }
            Excess => psi0 * (1.0 + tau),
            Sr => 1.0 - tau * (1.0 - psi0),
            Rs => 1.0 - (1.0 - psi0) / tau,
            LogOr => {
                let e = tau.exp();
                e * psi0 / (1.0 - psi0 + e * psi0)
            }
            OddsProduct => tau * (1.0 - psi0) / (psi0 + tau * (1.0 - psi0)),
            ArcsineDiff => {
                let u = (tau + psi0.sqrt().asin()).clamp(0.0, std::f64::consts::FRAC_PI_2);
                sq(u.sin())
            }
            Rrr => psi0 * (1.0 - tau),
        })
    }

    /// ∂Γ/∂tau.
    pub fn dgamma_dtau(self, tau: f64, psi0: f64) -> Result<f64> {
        self.check_gamma_derivative_point(tau, psi0)?;
        Ok(match self {
            Rd => 1.0,
            Rr => psi0,
            Or => psi0 * (1.0 - psi0) / sq(1.0 + tau * psi0 - psi0),
            Nnt => -1.0 / sq(tau),
            Grrr => {
                if tau > 0.0 {
                    1.0 - psi0
                } else {
                    psi0
                }
            }
            Excess => psi0,
            Sr => -(1.0 - psi0),
            Rs => (1.0 - psi0) / sq(tau),
            LogOr => {
                let e = tau.exp();
                e * psi0 * (1.0 - psi0) / sq(1.0 - psi0 + e * psi0)
            }
            OddsProduct => psi0 * (1.0 - psi0) / sq(psi0 + tau * (1.0 - psi0)),
            ArcsineDiff => (2.0 * (tau + psi0.sqrt().asin())).sin(),
            Rrr => -psi0,
        })
    }

    /// ∂Γ/∂psi0.
    pub fn dgamma_dpsi0(self, tau: f64, psi0: f64) -> Result<f64> {
        self.check_gamma_derivative_point(tau, psi0)?;
        Ok(match self {
            Rd => 1.0,
            Rr => tau,
            Or => tau / sq(1.0 + tau * psi0 - psi0),
            Nnt => 1.0,
            Grrr => {
                if tau > 0.0 {
                    1.0 - tau
                } else {
                    1.0 + tau
                }
            }
            Excess => 1.0 + tau,
            Sr => tau,
            Rs => 1.0 / tau,
            LogOr => tau.exp() / sq(1.0 - psi0 + tau.exp() * psi0),
            OddsProduct => -tau / sq(psi0 + tau * (1.0 - psi0)),
            ArcsineDiff => {
                let u = tau + psi0.sqrt().asin();
                (2.0 * u).sin() * 0.5 / (psi0 * (1.0 - psi0)).sqrt()
            }
            Rrr => 1.0 - tau,
        })
    }

    fn check_domain(self, psi1: f64, psi0: f64) -> Result<()> {
        if self.domain(psi1, psi0) {
            return Ok(());
        }
        Erroring::new(self, psi1, psi0).domain(self.domain_constraint(psi1, psi0))
    }

    /// Human-readable description of the violated domain constraint.
    fn domain_constraint(self, psi1: f64, psi0: f64) -> &'static str {
        if !psi1.is_finite() || !psi0.is_finite() {
            return "finite arguments";
        }
        match self {
            Rd => unreachable!("RD accepts all finite arguments"),
            Rr | Excess | Rrr => "psi0 != 0",
            Or | OddsProduct => "psi1 != 1 and psi0 not in {0, 1}",
            Nnt => "|psi1 - psi0| >= 1e-12",
            Grrr | ArcsineDiff => "psi1 and psi0 in [0, 1]",
            Sr => "psi0 != 1",
            Rs => "psi1 != 1",
            LogOr => "psi1 and psi0 in (0, 1)",
        }
    }

    /// Where the Φ-derivatives exist: the interior of the domain for the
    /// boundary-constrained measures, plus the kink exclusion for GRRR.
    fn check_derivative_point(self, psi1: f64, psi0: f64) -> Result<()> {
        self.check_domain(psi1, psi0)?;
        let e = Erroring::new(self, psi1, psi0);
        match self {
            Grrr => {
                if psi1 == psi0 {
                    return e.derivative("psi1 != psi0 (Φ is kinked at the null)");
                }
                if psi1 > psi0 && psi0 == 1.0 {
                    return e.derivative("psi0 != 1 on the upper branch");
                }
                if psi1 < psi0 && psi0 == 0.0 {
                    return e.derivative("psi0 != 0 on the lower branch");
                }
            }
            ArcsineDiff => {
                if !in_open_unit(psi1) || !in_open_unit(psi0) {
                    return e.derivative("psi1 and psi0 in (0, 1)");
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Whether (tau, psi0) is admissible for Γ.
    fn check_gamma_point(self, tau: f64, psi0: f64) -> Result<()> {
        if !tau.is_finite() || !psi0.is_finite() {
            return Erroring::new(self, tau, psi0).domain("finite arguments");
        }
        let e = Erroring::new(self, tau, psi0);
        match self {
            Rd | Rr | Excess | Sr | Rrr => Ok(()),
            Or => {
                if (1.0 + tau * psi0 - psi0).abs() < DEGENERACY_EPS {
                    e.domain("1 + tau*psi0 - psi0 != 0")
                } else {
                    Ok(())
                }
            }
            Nnt | Rs => {
                if tau.abs() < DEGENERACY_EPS {
                    e.domain("tau != 0")
                } else {
                    Ok(())
                }
            }
            Grrr => {
                if in_closed_unit(psi0) && (-1.0..=1.0).contains(&tau) {
                    Ok(())
                } else {
                    e.domain("tau in [-1, 1] and psi0 in [0, 1]")
                }
            }
            LogOr => {
                if in_open_unit(psi0) {
                    Ok(())
                } else {
                    e.domain("psi0 in (0, 1)")
                }
            }
            OddsProduct => {
                if (psi0 + tau * (1.0 - psi0)).abs() < DEGENERACY_EPS {
                    e.domain("psi0 + tau*(1 - psi0) != 0")
                } else {
                    Ok(())
                }
            }
            ArcsineDiff => {
                if !in_closed_unit(psi0) {
                    return e.domain("psi0 in [0, 1]");
                }
                let u = tau + psi0.sqrt().asin();
                // Tolerate roundoff from the asin/sqrt round trip at the ends.
                if (-DEGENERACY_EPS..=std::f64::consts::FRAC_PI_2 + DEGENERACY_EPS).contains(&u) {
                    Ok(())
                } else {
                    e.domain("tau + asin(sqrt(psi0)) in [0, pi/2]")
                }
            }
        }
    }

    /// Where the Γ-derivatives exist.
    fn check_gamma_derivative_point(self, tau: f64, psi0: f64) -> Result<()> {
        self.check_gamma_point(tau, psi0)?;
        let e = Erroring::new(self, tau, psi0);
        match self {
            Grrr => {
                if tau == 0.0 {
                    e.derivative("tau != 0 (Γ is kinked at the null)")
                } else {
                    Ok(())
                }
            }
            ArcsineDiff => {
                if in_open_unit(psi0) {
                    Ok(())
                } else {
                    e.derivative("psi0 in (0, 1)")
                }
            }
            _ => Ok(()),
        }
    }
}

/// Builder for domain/derivative errors at a given evaluation point.
struct Erroring {
    measure: &'static str,
    arg1: f64,
    arg0: f64,
}

impl Erroring {
    fn new(m: Measure, arg1: f64, arg0: f64) -> Self {
        Erroring {
            measure: m.name(),
            arg1,
            arg0,
        }
    }

    fn domain(self, constraint: &'static str) -> Result<()> {
        std::result::Result::Err(Error::Domain {
            measure: self.measure,
            arg1: self.arg1,
            arg0: self.arg0,
            constraint,
        })
    }

    fn derivative(self, constraint: &'static str) -> Result<()> {
        std::result::Result::Err(Error::Derivative {
            measure: self.measure,
            arg1: self.arg1,
            arg0: self.arg0,
            constraint,
        })
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn in_open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

fn in_closed_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// One line of the registry self-test report.
#[derive(Debug, Clone)]
pub struct SelfTestLine {
    /// Measure the check ran against.
    pub measure: &'static str,
    /// Check identifier (round_trip, derivatives, chain_rule, null_value).
    pub check: &'static str,
    /// Whether the check passed.
    pub passed: bool,
    /// Worst observed discrepancy, or the failure description.
    pub detail: String,
}

/// Result of [`registry_self_test`].
#[derive(Debug, Clone)]
pub struct SelfTestReport {
    pub lines: Vec<SelfTestLine>,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

/// Numerically verify every registered measure: inverse round trip,
/// finite-difference agreement of all four derivatives, the two chain-rule
/// identities, and the null-effect values. Deterministic; used by the CLI
/// `selfcheck` subcommand and the test suite.
pub fn registry_self_test() -> SelfTestReport {
    use rand::SeedableRng;
    let mut lines = Vec::new();
    for m in Measure::ALL {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0x5e1f_7e57);
        let points: Vec<(f64, f64)> = (0..1000)
            .map(|_| sample_domain_point(m, &mut rng))
            .collect();

        // Round trip Γ(Φ(psi1, psi0), psi0) = psi1.
        let mut worst = 0.0_f64;
        let mut failure = None;
        for &(p1, p0) in &points {
            match m.phi(p1, p0).and_then(|t| m.gamma(t, p0)) {
                Ok(back) => worst = worst.max((back - p1).abs()),
                Err(e) => {
                    failure = Some(format!("({p1}, {p0}): {e}"));
                    break;
                }
            }
        }
        lines.push(SelfTestLine {
            measure: m.name(),
            check: "round_trip",
            passed: failure.is_none() && worst < 1e-10,
            detail: failure
                .clone()
                .unwrap_or_else(|| format!("max |Γ(Φ(ψ1,ψ0),ψ0) - ψ1| = {worst:.3e}")),
        });

        // Analytic derivatives against central finite differences.
        let mut worst_rel = 0.0_f64;
        let mut failure = None;
        for &(p1, p0) in &points {
            match derivative_check(m, p1, p0) {
                Ok(rel) => worst_rel = worst_rel.max(rel),
                Err(e) => {
                    failure = Some(format!("({p1}, {p0}): {e}"));
                    break;
                }
            }
        }
        lines.push(SelfTestLine {
            measure: m.name(),
            check: "derivatives",
            passed: failure.is_none() && worst_rel < 1e-4,
            detail: failure
                .clone()
                .unwrap_or_else(|| format!("max relative FD error = {worst_rel:.3e}")),
        });

        // Chain-rule identities from differentiating the inverse relation.
        let mut worst = 0.0_f64;
        let mut failure = None;
        for &(p1, p0) in &points {
            match chain_rule_check(m, p1, p0) {
                Ok(dev) => worst = worst.max(dev),
                Err(e) => {
                    failure = Some(format!("({p1}, {p0}): {e}"));
                    break;
                }
            }
        }
        lines.push(SelfTestLine {
            measure: m.name(),
            check: "chain_rule",
            passed: failure.is_none() && worst < 1e-8,
            detail: failure
                .clone()
                .unwrap_or_else(|| format!("max identity deviation = {worst:.3e}")),
        });

        // Null-effect value Φ(p, p) on a grid, where defined.
        if let Some(null) = m.null_value() {
            let mut worst = 0.0_f64;
            let mut failure = None;
            let mut p = 0.05;
            while p < 0.95 {
                match m.phi(p, p) {
                    Ok(v) => worst = worst.max((v - null).abs()),
                    Err(e) => {
                        failure = Some(format!("({p}, {p}): {e}"));
                        break;
                    }
                }
                p += 0.05;
            }
            lines.push(SelfTestLine {
                measure: m.name(),
                check: "null_value",
                passed: failure.is_none() && worst < 1e-12,
                detail: failure
                    .unwrap_or_else(|| format!("max |Φ(p,p) - {null}| = {worst:.3e}")),
            });
        }
    }
    SelfTestReport { lines }
}

/// Draw a (psi1, psi0) pair inside `m`'s domain, bounded away from domain
/// edges and kinks so that finite differences with step 1e-6 are stable.
pub(crate) fn sample_domain_point<R: rand::Rng>(m: Measure, rng: &mut R) -> (f64, f64) {
    loop {
        let p1: f64 = rng.gen_range(0.05..0.95);
        let p0: f64 = rng.gen_range(0.05..0.95);
        let ok = match m {
            Nnt | Grrr => (p1 - p0).abs() > 0.02,
            _ => true,
        };
        if ok && m.domain(p1, p0) {
            return (p1, p0);
        }
    }
}

/// Largest relative error of the four analytic partials against central
/// finite differences with step 1e-6 at (p1, p0).
fn derivative_check(m: Measure, p1: f64, p0: f64) -> Result<f64> {
    const H: f64 = 1e-6;
    let rel = |analytic: f64, fd: f64| (analytic - fd).abs() / analytic.abs().max(1.0);

    let mut worst = 0.0_f64;
    let fd1 = (m.phi(p1 + H, p0)? - m.phi(p1 - H, p0)?) / (2.0 * H);
    worst = worst.max(rel(m.dphi_d1(p1, p0)?, fd1));
    let fd0 = (m.phi(p1, p0 + H)? - m.phi(p1, p0 - H)?) / (2.0 * H);
    worst = worst.max(rel(m.dphi_d0(p1, p0)?, fd0));

    let tau = m.phi(p1, p0)?;
    let fdt = (m.gamma(tau + H, p0)? - m.gamma(tau - H, p0)?) / (2.0 * H);
    worst = worst.max(rel(m.dgamma_dtau(tau, p0)?, fdt));
    let fdp = (m.gamma(tau, p0 + H)? - m.gamma(tau, p0 - H)?) / (2.0 * H);
    worst = worst.max(rel(m.dgamma_dpsi0(tau, p0)?, fdp));
    Ok(worst)
}

/// Deviation of the two differentiated-inverse identities from (1, 0).
fn chain_rule_check(m: Measure, p1: f64, p0: f64) -> Result<f64> {
    let tau = m.phi(p1, p0)?;
    let dt = m.dgamma_dtau(tau, p0)?;
    let first = (m.dphi_d1(p1, p0)? * dt - 1.0).abs();
    let second = (m.dphi_d0(p1, p0)? * dt + m.dgamma_dpsi0(tau, p0)?).abs();
    Ok(first.max(second))
}
