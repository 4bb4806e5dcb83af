//! Stratified percentile bootstrap.
//!
//! Resampling is stratified on population membership and, within the
//! source, on treatment arm, so every replicate keeps the original design
//! counts. Nuisances are refitted inside each replicate; anything the
//! estimator can throw (separation, domain exits, overlap) counts as a
//! replicate failure rather than aborting the whole interval, up to a 5%
//! budget.

use rayon::prelude::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use std::collections::BTreeMap;

use crate::data::StudyData;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorId};
use crate::measures::Measure;
use crate::nuisance::{fit_nuisances, NuisanceOptions};

/// Replicate-failure fraction tolerated before the interval is abandoned.
pub const FAILURE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct BootstrapConfig {
    /// Number of replicates; at least 100.
    pub b: usize,
    /// Interval level, e.g. 0.95.
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Successful replicate estimates, in replicate order.
    pub estimates: Vec<f64>,
    /// Error-kind tags of failed replicates, with counts.
    pub failures: BTreeMap<&'static str, usize>,
}

/// Linear-interpolation quantile on a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
    } else {
        sorted[lo]
    }
}

/// Percentile bootstrap CI for any estimator id. Deterministic given the
/// seed: each replicate owns RNG stream `b`, so thread scheduling cannot
/// change the result.
pub fn bootstrap_ci(
    d: &StudyData,
    id: EstimatorId,
    m: Measure,
    opts: &NuisanceOptions,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if cfg.b < 100 {
        return Err(Error::Validation(format!(
            "bootstrap needs at least 100 replicates, got {}",
            cfg.b
        )));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Validation(format!(
            "bootstrap level must lie in (0, 1), got {}",
            cfg.level
        )));
    }

    // fixed stratum order: source-treated, source-control, target
    let mut strata: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..d.len() {
        if d.source(i) {
            if d.a(i) == Some(true) {
                strata[0].push(i);
            } else {
                strata[1].push(i);
            }
        } else {
            strata[2].push(i);
        }
    }

    let replicate = |b: usize| -> Result<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64);
        let mut idx = Vec::with_capacity(d.len());
        for stratum in &strata {
            for _ in 0..stratum.len() {
                idx.push(stratum[rng.gen_range(0..stratum.len())]);
            }
        }
        let resample = d.subset(&idx)?;
        let nf = fit_nuisances(&resample, opts)?;
        let est = estimate(&resample, id, m, &nf)?.estimate;
        if est.is_finite() {
            Ok(est)
        } else {
            Err(Error::Variance(format!("non-finite replicate estimate {est}")))
        }
    };

    let outcomes: Vec<Result<f64>> = (0..cfg.b).into_par_iter().map(replicate).collect();

    let mut estimates = Vec::with_capacity(cfg.b);
    let mut failures: BTreeMap<&'static str, usize> = BTreeMap::new();
    for r in outcomes {
        match r {
            Ok(v) => estimates.push(v),
            Err(e) => *failures.entry(e.kind()).or_insert(0) += 1,
        }
    }
    let failed = cfg.b - estimates.len();
    if failed as f64 > FAILURE_TOLERANCE * cfg.b as f64 {
        let detail = failures
            .iter()
            .map(|(k, c)| format!("{k}: {c}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::Bootstrap {
            failed,
            total: cfg.b,
            tolerance: 100.0 * FAILURE_TOLERANCE,
            detail,
        });
    }

    let mut sorted = estimates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - cfg.level) / 2.0;
    Ok(BootstrapResult {
        lo: quantile(&sorted, tail),
        hi: quantile(&sorted, 1.0 - tail),
        level: cfg.level,
        estimates,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testkit::{binary_dataset, linear_dataset};

    #[test]
    fn percentile_interval_brackets_the_replicates() {
        let d = linear_dataset(400, 81, false);
        let cfg = BootstrapConfig {
            b: 200,
            level: 0.95,
            seed: 4,
        };
        let res = bootstrap_ci(
            &d,
            EstimatorId::Ee,
            Measure::Rd,
            &NuisanceOptions::default(),
            &cfg,
        )
        .unwrap();
        assert!(res.lo <= res.hi);
        assert_eq!(res.estimates.len(), 200);
        let outside = res
            .estimates
            .iter()
            .filter(|&&e| e < res.lo || e > res.hi)
            .count();
        // ~5% of 200 = 10, give or take interpolation at the edges
        assert!((4..=16).contains(&outside), "{outside} outside");
    }

    #[test]
    fn same_seed_reproduces_the_interval() {
        let d = binary_dataset(350, 83, true);
        let cfg = BootstrapConfig {
            b: 120,
            level: 0.90,
            seed: 11,
        };
        let a = bootstrap_ci(
            &d,
            EstimatorId::EffectEe,
            Measure::Or,
            &NuisanceOptions::default(),
            &cfg,
        )
        .unwrap();
        let b = bootstrap_ci(
            &d,
            EstimatorId::EffectEe,
            Measure::Or,
            &NuisanceOptions::default(),
            &cfg,
        )
        .unwrap();
        assert_eq!(a.lo, b.lo);
        assert_eq!(a.hi, b.hi);
        assert_eq!(a.estimates, b.estimates);

        let c = bootstrap_ci(
            &d,
            EstimatorId::EffectEe,
            Measure::Or,
            &NuisanceOptions::default(),
            &BootstrapConfig { seed: 12, ..cfg },
        )
        .unwrap();
        assert_ne!(a.lo, c.lo);
    }

    #[test]
    fn too_few_replicates_is_rejected() {
        let d = linear_dataset(200, 87, false);
        let err = bootstrap_ci(
            &d,
            EstimatorId::Ee,
            Measure::Rd,
            &NuisanceOptions::default(),
            &BootstrapConfig {
                b: 50,
                level: 0.95,
                seed: 1,
            },
        )
        .unwrap_err();
        assert_eq!(err.kind(), "validation");
    }

    #[test]
    fn pervasive_failures_abort_with_the_modes() {
        // effect estimator without target outcomes: every replicate fails
        let d = linear_dataset(300, 89, false);
        let err = bootstrap_ci(
            &d,
            EstimatorId::EffectEe,
            Measure::Rd,
            &NuisanceOptions::default(),
            &BootstrapConfig {
                b: 100,
                level: 0.95,
                seed: 2,
            },
        )
        .unwrap_err();
        match err {
            Error::Bootstrap { failed, total, detail, .. } => {
                assert_eq!((failed, total), (100, 100));
                assert!(detail.contains("capability"), "{detail}");
            }
            other => panic!("expected bootstrap error, got {other}"),
        }
    }
}
