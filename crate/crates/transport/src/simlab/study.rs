//! Monte Carlo replication studies over a [`DgpSpec`].
//!
//! Each replicate draws a fresh dataset on its own RNG stream, fits (or
//! oracle-plugs) nuisances once, runs every requested estimator x measure
//! cell, and optionally verifies the estimating-equation identities on that
//! very dataset. Replicates run in parallel; aggregation walks the
//! collected vector in replicate order, so reports are bit-identical
//! whatever the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::StudyData;
use crate::error::{Error, Result};
use crate::estimators::effect::EffectNuisance;
use crate::estimators::mean::{self, Initializer};
use crate::estimators::sandwich::variance_sandwich;
use crate::estimators::{estimate, EstimatorId};
use crate::measures::Measure;
use crate::nuisance::{fit_nuisances, NuisanceDiagnostics, NuisanceFit, NuisanceOptions};
use crate::simlab::{generate_stream, true_effects, DgpSpec, Kahan, TrueEffects, MIN_TRUTH_DRAWS};

/// Largest tolerated failure share per estimator x measure cell.
pub const STUDY_FAILURE_TOLERANCE: f64 = 0.20;

/// How the study obtains outcome regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomePlan {
    /// Fit on the replicate (the normal path).
    Fit,
    /// Identically zero predictions: a maximally wrong outcome model.
    Zero,
    /// The generating process's exact conditional means.
    Oracle,
}

/// How the study obtains the density ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioPlan {
    Fit,
    /// Identically one: pretends the populations match.
    One,
    /// The exact Gaussian density ratio.
    Oracle,
}

/// Nuisance sourcing for a study. Overriding one side and fitting the
/// other is rejected: the mixed fit's diagnostics would be ambiguous, and
/// the robustness experiments this supports override both anyway.
#[derive(Debug, Clone)]
pub struct NuisancePlan {
    pub outcome: OutcomePlan,
    pub ratio: RatioPlan,
    /// Options for the fitted path.
    pub options: NuisanceOptions,
}

impl Default for NuisancePlan {
    fn default() -> Self {
        NuisancePlan {
            outcome: OutcomePlan::Fit,
            ratio: RatioPlan::Fit,
            options: NuisanceOptions::default(),
        }
    }
}

impl NuisancePlan {
    pub fn fitted(&self) -> bool {
        self.outcome == OutcomePlan::Fit && self.ratio == RatioPlan::Fit
    }

    fn validate(&self) -> Result<()> {
        if (self.outcome == OutcomePlan::Fit) != (self.ratio == RatioPlan::Fit) {
            return Err(Error::Config(
                "nuisance plan mixes a fitted part with an override; override both or neither"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Study layout: sample size, replication count, the estimator battery.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    pub estimators: Vec<EstimatorId>,
    pub measures: Vec<Measure>,
    pub seed: u64,
    /// Confidence level for the coverage metric.
    pub level: f64,
    pub plan: NuisancePlan,
    /// Covariate draws behind the ground-truth integrals.
    pub truth_draws: usize,
    /// Add a synthetic `effect/os@ee` column: the effect-side one-step
    /// initialized at the estimating-equation treated mean.
    pub effect_os_at_ee: bool,
    /// Track the estimating-equation identities on every replicate.
    pub verify_identities: bool,
    /// Keep per-replicate estimates in the report.
    pub keep_estimates: bool,
}

impl StudyConfig {
    /// Mean-exchangeability battery on the risk difference.
    pub fn new(n: usize, reps: usize) -> StudyConfig {
        StudyConfig {
            n,
            reps,
            estimators: vec![
                EstimatorId::Wht,
                EstimatorId::Neyman,
                EstimatorId::GWeighted,
                EstimatorId::GTransported,
                EstimatorId::Ee,
                EstimatorId::OneStep,
            ],
            measures: vec![Measure::Rd],
            seed: 0,
            level: 0.95,
            plan: NuisancePlan::default(),
            truth_draws: MIN_TRUTH_DRAWS,
            effect_os_at_ee: false,
            verify_identities: true,
            keep_estimates: false,
        }
    }
}

/// Ground truth carried into a report.
#[derive(Debug, Clone, Serialize)]
pub struct TruthRow {
    pub measure: String,
    pub tau_target: f64,
    pub tau_source: f64,
    pub mc_se_target: f64,
    pub mc_se_source: f64,
    /// (treated, control) target arm means.
    pub psi_target: [f64; 2],
    pub psi_source: [f64; 2],
}

/// Operating characteristics of one estimator x measure cell.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub estimator: String,
    pub measure: String,
    pub successes: usize,
    pub failures: usize,
    pub mean_estimate: f64,
    /// Mean estimate minus the target-population truth.
    pub bias: f64,
    /// Replicate standard deviation (no degrees-of-freedom correction).
    pub sd: f64,
    /// sqrt(bias^2 + sd^2), exactly that decomposition.
    pub rmse: f64,
    /// Monte Carlo standard error of `mean_estimate`.
    pub mc_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se_source: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub failure_modes: BTreeMap<String, usize>,
}

/// Worst-case identity violations across replicates.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityChecks {
    /// max |mean EIF| at the estimating-equation arm means.
    pub max_abs_mean_eif: f64,
    /// max |one_step - ee| on the risk difference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_one_step_rd_gap: Option<f64>,
    /// max |effect/os@ee - effect/ee| across measures.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_effect_os_ee_gap: Option<f64>,
}

/// One per-replicate estimate, kept when `keep_estimates` is on.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub rep: usize,
    pub estimator: String,
    pub measure: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Everything a study produces. Serialization is deterministic: no clocks,
/// no hash-ordered containers.
#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub spec: String,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
    pub truth: Vec<TruthRow>,
    pub rows: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityChecks>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<Vec<ReplicateRow>>,
}

impl SimulationReport {
    /// Look up a cell by estimator label and measure.
    pub fn row(&self, estimator: &str, measure: Measure) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.measure == measure.name())
    }

    pub fn truth_for(&self, measure: Measure) -> Option<&TruthRow> {
        self.truth.iter().find(|t| t.measure == measure.name())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Long-format CSV: one row per estimator x measure x metric, truth
    /// included under the pseudo-estimator `truth`.
    pub fn to_tidy_csv(&self) -> String {
        let mut out = String::from("spec,n,reps,estimator,measure,metric,value\n");
        let mut push = |estimator: &str, measure: &str, metric: &str, value: String| {
            out.push_str(&format!(
                "{},{},{},{estimator},{measure},{metric},{value}\n",
                self.spec, self.n, self.reps
            ));
        };
        for t in &self.truth {
            push("truth", &t.measure, "tau_target", t.tau_target.to_string());
            push("truth", &t.measure, "tau_source", t.tau_source.to_string());
            push("truth", &t.measure, "mc_se_target", t.mc_se_target.to_string());
            push("truth", &t.measure, "mc_se_source", t.mc_se_source.to_string());
        }
        for r in &self.rows {
            push(&r.estimator, &r.measure, "mean_estimate", r.mean_estimate.to_string());
            push(&r.estimator, &r.measure, "bias", r.bias.to_string());
            push(&r.estimator, &r.measure, "sd", r.sd.to_string());
            push(&r.estimator, &r.measure, "rmse", r.rmse.to_string());
            push(&r.estimator, &r.measure, "mc_se", r.mc_se.to_string());
            push(&r.estimator, &r.measure, "successes", r.successes.to_string());
            push(&r.estimator, &r.measure, "failures", r.failures.to_string());
            if let Some(se) = r.mean_se {
                push(&r.estimator, &r.measure, "mean_se", se.to_string());
            }
            if let Some(c) = r.coverage {
                push(&r.estimator, &r.measure, "coverage", c.to_string());
            }
        }
        out
    }

    /// Per-replicate estimates as CSV, when they were kept.
    pub fn replicates_csv(&self) -> Option<String> {
        let reps = self.replicates.as_ref()?;
        let mut out = String::from("rep,estimator,measure,estimate,error\n");
        for r in reps {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.rep,
                r.estimator,
                r.measure,
                r.estimate.map(|v| v.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default()
            ));
        }
        Some(out)
    }
}

/// A report column: a shipped estimator, or the synthetic one-step
/// initialized at the estimating-equation treated mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Std(EstimatorId),
    EffectOsAtEe,
}

impl Column {
    fn label(self) -> String {
        match self {
            Column::Std(id) => id.name().to_string(),
            Column::EffectOsAtEe => "effect/os@ee".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Cell {
    value: Option<f64>,
    error: Option<&'static str>,
    se: Option<f64>,
    se_source: Option<&'static str>,
    covered: Option<bool>,
}

impl Cell {
    fn failed(kind: &'static str) -> Cell {
        Cell {
            value: None,
            error: Some(kind),
            se: None,
            se_source: None,
            covered: None,
        }
    }
}

struct RepOutcome {
    cells: Vec<Cell>,
    max_eif: Option<f64>,
    rd_gap: Option<f64>,
    os_ee_gap: Option<f64>,
}

/// Materialize the nuisance plan on one replicate.
fn build_nuisances(spec: &DgpSpec, d: &StudyData, plan: &NuisancePlan) -> Result<NuisanceFit> {
    if plan.fitted() {
        return fit_nuisances(d, &plan.options);
    }
    let n = d.len();
    let mut r = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut mu1 = Vec::with_capacity(n);
    let mut mu0_target = d.has_target_outcomes().then(|| Vec::with_capacity(n));
    for i in 0..n {
        let x = d.x_row(i);
        r.push(match plan.ratio {
            RatioPlan::One => 1.0,
            RatioPlan::Oracle | RatioPlan::Fit => spec.true_ratio(&x),
        });
        let (m0, m1) = match plan.outcome {
            OutcomePlan::Zero => (0.0, 0.0),
            OutcomePlan::Oracle | OutcomePlan::Fit => {
                (spec.true_mu(true, false, &x), spec.true_mu(true, true, &x))
            }
        };
        mu0.push(m0);
        mu1.push(m1);
        if let Some(t) = mu0_target.as_mut() {
            t.push(match plan.outcome {
                OutcomePlan::Zero => 0.0,
                OutcomePlan::Oracle | OutcomePlan::Fit => spec.true_mu(false, false, &x),
            });
        }
    }
    let n_source = d.n_source() as f64;
    let ratio_self_normalization = (0..n)
        .filter(|&i| d.source(i))
        .map(|i| r[i])
        .sum::<f64>()
        / n_source;
    Ok(NuisanceFit {
        alpha_hat: d.alpha_hat(),
        pi: d.pi(),
        r,
        mu: [mu0, mu1],
        mu0_target,
        models: None,
        diagnostics: NuisanceDiagnostics {
            ratio_self_normalization,
            clipped: 0,
            folds: 1,
            selection_converged: true,
            selection_iterations: 0,
            outcome_link: spec.link(),
        },
    })
}

fn cell_interval(
    d: &StudyData,
    id: EstimatorId,
    m: Measure,
    nf: &NuisanceFit,
    value: f64,
    tau: f64,
    z: f64,
) -> (Option<f64>, Option<&'static str>, Option<bool>) {
    let se = match id {
        // the closed-form asymptotic variance; scale to the sample
        EstimatorId::Wht => mean::variance_oracle_wht(d, m, nf)
            .ok()
            .map(|v| ((v / d.len() as f64).sqrt(), "oracle")),
        EstimatorId::Neyman | EstimatorId::GWeighted | EstimatorId::GTransported | EstimatorId::Ee => {
            variance_sandwich(d, id, m, nf).ok().map(|v| (v.sqrt(), "sandwich"))
        }
        _ => None,
    };
    match se {
        Some((se, src)) => {
            let covered = (value - z * se..=value + z * se).contains(&tau);
            (Some(se), Some(src), Some(covered))
        }
        None => (None, None, None),
    }
}

fn run_replicate(
    spec: &DgpSpec,
    cfg: &StudyConfig,
    cols: &[Column],
    truth: &[TrueEffects],
    z: f64,
    rep: u64,
) -> RepOutcome {
    let n_cells = cols.len() * cfg.measures.len();
    let fail_all = |kind: &'static str| RepOutcome {
        cells: vec![Cell::failed(kind); n_cells],
        max_eif: None,
        rd_gap: None,
        os_ee_gap: None,
    };
    let g = match generate_stream(spec, cfg.n, cfg.seed, rep) {
        Ok(g) => g,
        Err(e) => return fail_all(e.kind()),
    };
    let d = g.data;
    let nf = match build_nuisances(spec, &d, &cfg.plan) {
        Ok(nf) => nf,
        Err(e) => return fail_all(e.kind()),
    };
    let fitted = cfg.plan.fitted();

    let mut cells = Vec::with_capacity(n_cells);
    let mut os_ee_gap: Option<f64> = None;
    for (mi, &m) in cfg.measures.iter().enumerate() {
        let tau = truth[mi].tau_target;
        for &col in cols {
            let cell = match col {
                Column::Std(id) => match estimate(&d, id, m, &nf) {
                    Ok(report) => {
                        let (se, se_source, covered) = if fitted {
                            cell_interval(&d, id, m, &nf, report.estimate, tau, z)
                        } else {
                            (None, None, None)
                        };
                        Cell {
                            value: Some(report.estimate),
                            error: None,
                            se,
                            se_source,
                            covered,
                        }
                    }
                    Err(e) => Cell::failed(e.kind()),
                },
                Column::EffectOsAtEe => {
                    let run = || -> Result<(f64, f64)> {
                        let en = EffectNuisance::from_fit(&d, m, &nf)?;
                        let (psi1_ee, _) =
                            crate::estimators::effect::ee_effect_psi1(&d, m, &en)?;
                        let ee_estimate = m.phi(psi1_ee, en.psi0_t)?;
                        let os = crate::estimators::effect::one_step_effect_from(
                            &d, m, &en, &nf, psi1_ee,
                        )?;
                        Ok((os.estimate, (os.estimate - ee_estimate).abs()))
                    };
                    match run() {
                        Ok((value, gap)) => {
                            os_ee_gap = Some(os_ee_gap.unwrap_or(0.0).max(gap));
                            Cell {
                                value: Some(value),
                                error: None,
                                se: None,
                                se_source: None,
                                covered: None,
                            }
                        }
                        Err(e) => Cell::failed(e.kind()),
                    }
                }
            };
            cells.push(cell);
        }
    }

    let (max_eif, rd_gap) = if cfg.verify_identities {
        let arms = mean::ee_arm_means(&d, &nf);
        let mean_abs = |arm: bool, psi: f64| {
            let phi = mean::eif_arm(&d, &nf, arm, psi);
            (phi.iter().sum::<f64>() / d.len() as f64).abs()
        };
        let max_eif = mean_abs(true, arms.psi1).max(mean_abs(false, arms.psi0));
        let rd_gap = match (
            mean::ee(&d, Measure::Rd, &nf),
            mean::one_step(&d, Measure::Rd, &nf, Initializer::GTransported),
        ) {
            (Ok(a), Ok(b)) => Some((a.estimate - b.estimate).abs()),
            _ => None,
        };
        (Some(max_eif), rd_gap)
    } else {
        (None, None)
    };

    RepOutcome {
        cells,
        max_eif,
        rd_gap,
        os_ee_gap,
    }
}

fn kahan_mean(values: impl Iterator<Item = f64>, count: usize) -> f64 {
    let mut k = Kahan::default();
    for v in values {
        k.add(v);
    }
    k.value() / count as f64
}

/// Run `cfg.reps` replications of the estimator battery and summarize.
///
/// Fails fast on inapplicable configurations (effect estimators without
/// target-control outcomes) and fails after the fact when any cell breaks
/// on more than 20% of replicates; failures below that are counted, never
/// silently dropped.
pub fn run_study(spec: &DgpSpec, cfg: &StudyConfig) -> Result<SimulationReport> {
    spec.validate()?;
    cfg.plan.validate()?;
    if cfg.reps == 0 {
        return Err(Error::Config("a study needs at least one replicate".into()));
    }
    if cfg.estimators.is_empty() || cfg.measures.is_empty() {
        return Err(Error::Config(
            "a study needs at least one estimator and one measure".into(),
        ));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Config(format!(
            "coverage level must lie in (0, 1), got {}",
            cfg.level
        )));
    }
    let needs_targets = cfg
        .estimators
        .iter()
        .copied()
        .filter(|id| id.requires_target_outcomes())
        .collect::<Vec<_>>();
    if !needs_targets.is_empty() && !spec.target_controls {
        return Err(Error::Config(format!(
            "estimator `{}` needs target-control outcomes, which design `{}` does not expose",
            needs_targets[0],
            spec.name
        )));
    }
    if cfg.effect_os_at_ee && !spec.target_controls {
        return Err(Error::Config(format!(
            "effect/os@ee needs target-control outcomes, which design `{}` does not expose",
            spec.name
        )));
    }

    let truth: Vec<TrueEffects> = cfg
        .measures
        .iter()
        .map(|&m| true_effects(spec, m, cfg.truth_draws, cfg.seed))
        .collect::<Result<_>>()?;

    let mut cols: Vec<Column> = cfg.estimators.iter().copied().map(Column::Std).collect();
    if cfg.effect_os_at_ee {
        cols.push(Column::EffectOsAtEe);
    }

    let z = Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 + cfg.level / 2.0);

    let outcomes: Vec<RepOutcome> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_replicate(spec, cfg, &cols, &truth, z, rep as u64))
        .collect();

    // aggregate in replicate order: order-insensitive summaries, ordered walk
    let mut rows = Vec::with_capacity(cols.len() * cfg.measures.len());
    let mut over_budget = Vec::new();
    for (ci, &col) in cols.iter().enumerate() {
        for (mi, &m) in cfg.measures.iter().enumerate() {
            let idx = mi * cols.len() + ci;
            let cells: Vec<&Cell> = outcomes.iter().map(|o| &o.cells[idx]).collect();
            let values: Vec<f64> = cells.iter().filter_map(|c| c.value).collect();
            let mut failure_modes: BTreeMap<String, usize> = BTreeMap::new();
            for c in &cells {
                if let Some(kind) = c.error {
                    *failure_modes.entry(kind.to_string()).or_insert(0) += 1;
                }
            }
            let failures = cfg.reps - values.len();
            if (failures as f64) > STUDY_FAILURE_TOLERANCE * cfg.reps as f64 {
                over_budget.push(format!(
                    "{}/{}: {} of {} replicates failed ({})",
                    col.label(),
                    m.name(),
                    failures,
                    cfg.reps,
                    failure_modes
                        .iter()
                        .map(|(k, c)| format!("{k}: {c}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ));
                continue;
            }

            let mean_estimate = kahan_mean(values.iter().copied(), values.len());
            let sd = {
                let mut k = Kahan::default();
                for v in &values {
                    let d = v - mean_estimate;
                    k.add(d * d);
                }
                (k.value() / values.len() as f64).sqrt()
            };
            let bias = mean_estimate - truth[mi].tau_target;
            let rmse = (bias * bias + sd * sd).sqrt();
            let mc_se = sd / (values.len() as f64).sqrt();

            let ses: Vec<f64> = cells.iter().filter_map(|c| c.se).collect();
            let mean_se = (!ses.is_empty()).then(|| kahan_mean(ses.iter().copied(), ses.len()));
            let se_source = cells.iter().find_map(|c| c.se_source);
            let with_ci = cells.iter().filter(|c| c.covered.is_some()).count();
            let coverage = (with_ci > 0).then(|| {
                cells.iter().filter(|c| c.covered == Some(true)).count() as f64 / with_ci as f64
            });

            rows.push(MetricRow {
                estimator: col.label(),
                measure: m.name().to_string(),
                successes: values.len(),
                failures,
                mean_estimate,
                bias,
                sd,
                rmse,
                mc_se,
                mean_se,
                se_source,
                coverage,
                failure_modes,
            });
        }
    }
    if !over_budget.is_empty() {
        return Err(Error::Study(over_budget.join("; ")));
    }

    let identities = cfg.verify_identities.then(|| IdentityChecks {
        max_abs_mean_eif: outcomes
            .iter()
            .filter_map(|o| o.max_eif)
            .fold(0.0, f64::max),
        max_one_step_rd_gap: outcomes
            .iter()
            .filter_map(|o| o.rd_gap)
            .fold(None, |acc, g| Some(acc.unwrap_or(0.0).max(g))),
        max_effect_os_ee_gap: outcomes
            .iter()
            .filter_map(|o| o.os_ee_gap)
            .fold(None, |acc, g| Some(acc.unwrap_or(0.0).max(g))),
    });

    let replicates = cfg.keep_estimates.then(|| {
        let mut rows = Vec::with_capacity(cfg.reps * cols.len() * cfg.measures.len());
        for (rep, o) in outcomes.iter().enumerate() {
            for (mi, &m) in cfg.measures.iter().enumerate() {
                for (ci, &col) in cols.iter().enumerate() {
                    let cell = &o.cells[mi * cols.len() + ci];
                    rows.push(ReplicateRow {
                        rep,
                        estimator: col.label(),
                        measure: m.name().to_string(),
                        estimate: cell.value,
                        error: cell.error.map(str::to_string),
                    });
                }
            }
        }
        rows
    });

    let truth_rows = cfg
        .measures
        .iter()
        .zip(truth.iter())
        .map(|(&m, t)| TruthRow {
            measure: m.name().to_string(),
            tau_target: t.tau_target,
            tau_source: t.tau_source,
            mc_se_target: t.se_target,
            mc_se_source: t.se_source,
            psi_target: [t.psi_target.0, t.psi_target.1],
            psi_source: [t.psi_source.0, t.psi_source.1],
        })
        .collect();

    Ok(SimulationReport {
        spec: spec.name.name().to_string(),
        n: cfg.n,
        reps: cfg.reps,
        seed: cfg.seed,
        level: cfg.level,
        truth: truth_rows,
        rows,
        identities,
        replicates,
    })
}
