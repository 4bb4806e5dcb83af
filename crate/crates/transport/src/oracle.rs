//! Exhaustive-enumeration oracle on a tiny discrete population.
//!
//! On a three-point covariate support with exactly specified arm means and
//! population masses, every identification route is a finite sum and every
//! estimator can be handed a dataset whose empirical distribution *is* the
//! population, together with the exact nuisance values. All routes must then
//! agree to float precision; [`discrete_suite`] checks that they do. The CLI
//! `selfcheck` subcommand and the acceptance suite both run it.

use crate::data::{Row, StudyData};
use crate::error::{Error, Result};
use crate::estimators::effect::{self, EffectInitializer, EffectNuisance};
use crate::estimators::mean::{self, Initializer};
use crate::measures::Measure;
use crate::nuisance::{Link, NuisanceDiagnostics, NuisanceFit};

/// A population on three covariate points with everything known exactly.
///
/// Masses are written as integer counts so the induced dataset replicates
/// the population without rounding: cell `j` of the source holds
/// `source_per_arm[j]` rows in each arm, the target holds `target[j]` rows,
/// and the arm means are ratios `ones / count` of those integers.
#[derive(Debug, Clone)]
pub struct DiscretePopulation {
    /// Support points of the scalar covariate.
    pub x: [f64; 3],
    /// Source rows per arm at each point (equal arms, so pi = 1/2).
    pub source_per_arm: [usize; 3],
    /// Target rows at each point.
    pub target: [usize; 3],
    /// Count of Y = 1 among treated source rows at each point.
    pub ones_treated: [usize; 3],
    /// Count of Y = 1 among control source rows at each point.
    pub ones_control: [usize; 3],
    /// Count of Y = 1 among target (control) rows at each point.
    pub ones_target: [usize; 3],
}

impl DiscretePopulation {
    /// The reference population: q_S = (1/2, 1/4, 1/4), q_T = (1/4, 1/4, 1/2),
    /// alpha = pi = 1/2, mu1 = (.8, .6, .4), mu0 = (.4, .2, .6).
    ///
    /// Both target arm means land in (0, 1) away from every measure
    /// singularity, so all twelve measures are defined on it.
    pub fn canonical() -> DiscretePopulation {
        DiscretePopulation {
            x: [-1.0, 0.0, 1.0],
            source_per_arm: [40, 20, 20],
            target: [40, 40, 80],
            ones_treated: [32, 12, 8],
            ones_control: [16, 4, 12],
            ones_target: [16, 8, 48],
        }
    }

    fn n_source(&self) -> usize {
        2 * self.source_per_arm.iter().sum::<usize>()
    }

    fn m_target(&self) -> usize {
        self.target.iter().sum()
    }

    /// Source covariate mass q_S(x_j).
    pub fn q_s(&self, j: usize) -> f64 {
        2.0 * self.source_per_arm[j] as f64 / self.n_source() as f64
    }

    /// Target covariate mass q_T(x_j).
    pub fn q_t(&self, j: usize) -> f64 {
        self.target[j] as f64 / self.m_target() as f64
    }

    /// Density ratio q_T / q_S at point j.
    pub fn ratio(&self, j: usize) -> f64 {
        self.q_t(j) / self.q_s(j)
    }

    /// Conditional arm mean at point j.
    pub fn mu(&self, arm: bool, j: usize) -> f64 {
        let count = self.source_per_arm[j] as f64;
        if arm {
            self.ones_treated[j] as f64 / count
        } else {
            self.ones_control[j] as f64 / count
        }
    }

    /// Target arm means by direct enumeration over the target law:
    /// psi_a = sum_j q_T(x_j) mu_a(x_j). Returns (treated, control).
    pub fn psi_transported(&self) -> (f64, f64) {
        let sum = |arm: bool| (0..3).map(|j| self.q_t(j) * self.mu(arm, j)).sum();
        (sum(true), sum(false))
    }

    /// The same means re-expressed over the source law with the density
    /// ratio: psi_a = sum_j q_S(x_j) r(x_j) mu_a(x_j).
    pub fn psi_weighted(&self) -> (f64, f64) {
        let sum = |arm: bool| {
            (0..3)
                .map(|j| self.q_s(j) * self.ratio(j) * self.mu(arm, j))
                .sum()
        };
        (sum(true), sum(false))
    }

    /// The same means with the ratio recovered from the pooled selection
    /// probability P(S=1|x) = alpha q_S / (alpha q_S + (1-alpha) q_T), the
    /// route the logistic selection model estimates.
    pub fn psi_selection_odds(&self) -> (f64, f64) {
        let alpha = self.n_source() as f64 / (self.n_source() + self.m_target()) as f64;
        let r = |j: usize| {
            let sel = alpha * self.q_s(j) / (alpha * self.q_s(j) + (1.0 - alpha) * self.q_t(j));
            alpha / (1.0 - alpha) * (1.0 - sel) / sel
        };
        let sum = |arm: bool| (0..3).map(|j| self.q_s(j) * r(j) * self.mu(arm, j)).sum();
        (sum(true), sum(false))
    }

    /// Population effect on measure `m` from the enumerated arm means.
    pub fn tau(&self, m: Measure) -> Result<f64> {
        let (psi1, psi0) = self.psi_transported();
        m.phi(psi1, psi0)
    }

    /// Treated target mean recovered from the conditional effect surface:
    /// psi_1 = sum_j q_T(x_j) Gamma(tau(x_j), mu0(x_j)).
    pub fn effect_psi1_transported(&self, m: Measure) -> Result<f64> {
        let mut sum = 0.0;
        for j in 0..3 {
            let tau = m.phi(self.mu(true, j), self.mu(false, j))?;
            sum += self.q_t(j) * m.gamma(tau, self.mu(false, j))?;
        }
        Ok(sum)
    }

    /// The effect-surface route re-expressed over the source law:
    /// psi_1 = sum_j q_S(x_j) r(x_j) Gamma(tau(x_j), mu0(x_j)).
    pub fn effect_psi1_weighted(&self, m: Measure) -> Result<f64> {
        let mut sum = 0.0;
        for j in 0..3 {
            let tau = m.phi(self.mu(true, j), self.mu(false, j))?;
            sum += self.q_s(j) * self.ratio(j) * m.gamma(tau, self.mu(false, j))?;
        }
        Ok(sum)
    }

    /// RD via the collapsed form: the target effect is the target average of
    /// the conditional effect.
    pub fn direct_rd(&self) -> f64 {
        (0..3)
            .map(|j| self.q_t(j) * (self.mu(true, j) - self.mu(false, j)))
            .sum()
    }

    /// RR via the baseline-weighted collapse of the conditional risk ratio.
    pub fn direct_rr(&self) -> f64 {
        let num: f64 = (0..3)
            .map(|j| self.q_t(j) * (self.mu(true, j) / self.mu(false, j)) * self.mu(false, j))
            .sum();
        num / self.psi_transported().1
    }

    /// OR via its non-collapsible identification: each conditional odds
    /// ratio is folded back to a treated risk before averaging.
    pub fn direct_or(&self) -> f64 {
        let fold: f64 = (0..3)
            .map(|j| {
                let mu0 = self.mu(false, j);
                let mu1 = self.mu(true, j);
                let or = mu1 / (1.0 - mu1) * (1.0 - mu0) / mu0;
                self.q_t(j) * or * mu0 / (1.0 + or * mu0 - mu0)
            })
            .sum();
        let psi0 = self.psi_transported().1;
        fold / (1.0 - fold) * (1.0 - psi0) / psi0
    }

    /// A dataset whose empirical distribution equals the population: every
    /// cell is replicated to its exact count and Y = 1 exactly `ones` times
    /// per cell. Target rows expose control outcomes.
    pub fn exact_dataset(&self) -> Result<StudyData> {
        let mut rows = Vec::with_capacity(self.n_source() + self.m_target());
        for j in 0..3 {
            let x = vec![self.x[j]];
            for (arm, ones) in [(true, self.ones_treated[j]), (false, self.ones_control[j])] {
                for k in 0..self.source_per_arm[j] {
                    rows.push(Row {
                        source: true,
                        x: x.clone(),
                        a: Some(arm),
                        y: Some(f64::from(k < ones)),
                    });
                }
            }
            for k in 0..self.target[j] {
                rows.push(Row {
                    source: false,
                    x: x.clone(),
                    a: Some(false),
                    y: Some(f64::from(k < self.ones_target[j])),
                });
            }
        }
        StudyData::from_rows(rows, 0.5)
    }

    /// Exact nuisance values for `exact_dataset`: true density ratio, true
    /// arm means, true target-control mean, no fitting anywhere.
    pub fn oracle_nuisances(&self, d: &StudyData) -> NuisanceFit {
        let point = |i: usize| {
            let xi = d.x_row(i)[0];
            (0..3)
                .position(|j| self.x[j] == xi)
                .expect("row covariate off the support")
        };
        let len = d.len();
        let mut r = Vec::with_capacity(len);
        let mut mu1 = Vec::with_capacity(len);
        let mut mu0 = Vec::with_capacity(len);
        for i in 0..len {
            let j = point(i);
            r.push(self.ratio(j));
            mu1.push(self.mu(true, j));
            mu0.push(self.mu(false, j));
        }
        let sum_r: f64 = (0..len).filter(|&i| d.source(i)).map(|i| r[i]).sum();
        let mu0_target = Some(mu0.clone());
        NuisanceFit {
            alpha_hat: d.alpha_hat(),
            pi: d.pi(),
            r,
            mu: [mu0, mu1],
            mu0_target,
            models: None,
            diagnostics: NuisanceDiagnostics {
                ratio_self_normalization: sum_r / d.n_source() as f64,
                clipped: 0,
                folds: 1,
                selection_converged: true,
                selection_iterations: 0,
                outcome_link: Link::Identity,
            },
        }
    }
}

/// One line of the discrete-oracle report.
#[derive(Debug, Clone)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    /// Worst observed discrepancy, or the failure description.
    pub detail: String,
}

fn check(name: impl Into<String>, worst: f64, tol: f64) -> OracleCheck {
    OracleCheck {
        name: name.into(),
        passed: worst < tol,
        detail: format!("max |deviation| = {worst:.3e} (tol {tol:.0e})"),
    }
}

fn failed(name: impl Into<String>, err: Error) -> OracleCheck {
    OracleCheck {
        name: name.into(),
        passed: false,
        detail: err.to_string(),
    }
}

/// Run every oracle check on the canonical population; see the module docs.
pub fn discrete_suite() -> Vec<OracleCheck> {
    let pop = DiscretePopulation::canonical();
    let mut lines = Vec::new();

    // All three mean-identification routes produce the same arm means.
    let (t1, t0) = pop.psi_transported();
    let (w1, w0) = pop.psi_weighted();
    let (s1, s0) = pop.psi_selection_odds();
    let worst = [(w1 - t1), (w0 - t0), (s1 - t1), (s0 - t0)]
        .iter()
        .fold(0.0_f64, |acc, d| acc.max(d.abs()));
    lines.push(check("identification/mean_routes_agree", worst, 1e-12));

    // The effect-surface routes recover the same treated mean, every measure.
    let mut worst = 0.0_f64;
    let mut failure = None;
    for m in Measure::ALL {
        match (pop.effect_psi1_transported(m), pop.effect_psi1_weighted(m)) {
            (Ok(a), Ok(b)) => worst = worst.max((a - t1).abs()).max((b - t1).abs()),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some((m, e));
                break;
            }
        }
    }
    lines.push(match failure {
        Some((m, e)) => failed(
            format!("identification/effect_routes_agree ({})", m.name()),
            e,
        ),
        None => check("identification/effect_routes_agree", worst, 1e-12),
    });

    // The direct RD/RR/OR forms match the generic effect-function route.
    let direct = [
        (Measure::Rd, pop.direct_rd()),
        (Measure::Rr, pop.direct_rr()),
        (Measure::Or, pop.direct_or()),
    ];
    let mut worst = 0.0_f64;
    let mut failure = None;
    for (m, value) in direct {
        match pop.tau(m) {
            Ok(tau) => worst = worst.max((value - tau).abs()),
            Err(e) => {
                failure = Some((m, e));
                break;
            }
        }
    }
    lines.push(match failure {
        Some((m, e)) => failed(format!("identification/direct_forms ({})", m.name()), e),
        None => check("identification/direct_forms", worst, 1e-12),
    });

    // Every estimator, fed the exact dataset and exact nuisances, returns
    // the population effect.
    let (d, nf) = match pop.exact_dataset() {
        Ok(d) => {
            let nf = pop.oracle_nuisances(&d);
            (d, nf)
        }
        Err(e) => {
            lines.push(failed("estimators/exact_population", e));
            return lines;
        }
    };
    for m in [Measure::Rd, Measure::Rr, Measure::Or] {
        let tau = match pop.tau(m) {
            Ok(t) => t,
            Err(e) => {
                lines.push(failed(format!("estimators/{}", m.name()), e));
                continue;
            }
        };
        let runs: Vec<(&str, Result<f64>)> = vec![
            ("wht", mean::wht(&d, m, &nf).map(|r| r.estimate)),
            ("neyman", mean::neyman(&d, m, &nf).map(|r| r.estimate)),
            ("g_weighted", mean::g_weighted(&d, m, &nf).map(|r| r.estimate)),
            (
                "g_transported",
                mean::g_transported(&d, m, &nf).map(|r| r.estimate),
            ),
            ("ee", mean::ee(&d, m, &nf).map(|r| r.estimate)),
            (
                "one_step",
                mean::one_step(&d, m, &nf, Initializer::GTransported).map(|r| r.estimate),
            ),
        ];
        let mut worst = 0.0_f64;
        let mut failure = None;
        for (name, run) in runs {
            match run {
                Ok(est) => worst = worst.max((est - tau).abs()),
                Err(e) => {
                    failure = Some((name, e));
                    break;
                }
            }
        }
        lines.push(match failure {
            Some((name, e)) => failed(format!("estimators/{}/{name}", m.name()), e),
            None => check(format!("estimators/{}/mean", m.name()), worst, 1e-10),
        });

        let effect_runs = EffectNuisance::from_fit(&d, m, &nf).map(|en| {
            vec![
                (
                    "gamma_transported",
                    effect::gamma_transported(&d, m, &en, &nf).map(|r| r.estimate),
                ),
                (
                    "gamma_weighted",
                    effect::gamma_weighted(&d, m, &en, &nf).map(|r| r.estimate),
                ),
                ("ee", effect::ee_effect(&d, m, &en, &nf).map(|r| r.estimate)),
                (
                    "one_step",
                    effect::one_step_effect(&d, m, &en, &nf, EffectInitializer::GammaTransported)
                        .map(|r| r.estimate),
                ),
            ]
        });
        let mut worst = 0.0_f64;
        let mut failure = None;
        match effect_runs {
            Ok(runs) => {
                for (name, run) in runs {
                    match run {
                        Ok(est) => worst = worst.max((est - tau).abs()),
                        Err(e) => {
                            failure = Some((name.to_string(), e));
                            break;
                        }
                    }
                }
            }
            Err(e) => failure = Some(("nuisance".to_string(), e)),
        }
        lines.push(match failure {
            Some((name, e)) => failed(format!("estimators/{}/effect/{name}", m.name()), e),
            None => check(format!("estimators/{}/effect", m.name()), worst, 1e-10),
        });
    }
    lines
}
