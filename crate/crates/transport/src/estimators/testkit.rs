//! Shared helpers for estimator tests: small synthetic datasets and
//! hand-assembled nuisance fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::StudyData;
use crate::nuisance::{sigmoid, Link, NuisanceDiagnostics, NuisanceFit};

/// Continuous-outcome dataset with a covariate shift between populations.
///
/// x ~ N(0,1) (source) or N(0.4,1) (target), selection logistic in x,
/// y = 1 + 0.8 x + a (0.5 + 0.6 x) + noise. Target rows optionally expose
/// control outcomes.
pub(crate) fn linear_dataset(rows: usize, seed: u64, target_outcomes: bool) -> StudyData {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = Vec::with_capacity(rows);
    let mut x = Vec::with_capacity(rows);
    let mut a = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let src = rng.gen::<f64>() < 0.55;
        let base: f64 = StandardNormal.sample(&mut rng);
        let xi = base + if src { 0.0 } else { 0.4 };
        let noise: f64 = StandardNormal.sample(&mut rng);
        if src {
            let ai = rng.gen::<f64>() < 0.5;
            let yi = 1.0 + 0.8 * xi + if ai { 0.5 + 0.6 * xi } else { 0.0 } + 0.3 * noise;
            s.push(true);
            a.push(Some(ai));
            y.push(Some(yi));
        } else {
            s.push(false);
            if target_outcomes {
                let yi = 1.0 + 0.8 * xi + 0.3 * noise;
                a.push(Some(false));
                y.push(Some(yi));
            } else {
                a.push(None);
                y.push(None);
            }
        }
        x.push(vec![xi]);
    }
    StudyData::new(s, x, a, y, 0.5).unwrap()
}

/// Binary-outcome dataset (logit link territory) with covariate shift.
pub(crate) fn binary_dataset(rows: usize, seed: u64, target_outcomes: bool) -> StudyData {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = Vec::with_capacity(rows);
    let mut x = Vec::with_capacity(rows);
    let mut a = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let src = rng.gen::<f64>() < 0.55;
        let base: f64 = StandardNormal.sample(&mut rng);
        let xi = base + if src { 0.0 } else { 0.3 };
        let draw = |rng: &mut ChaCha20Rng, p: f64| rng.gen::<f64>() < p;
        if src {
            let ai = rng.gen::<f64>() < 0.5;
            let p = sigmoid(-0.4 + 0.7 * xi + if ai { 0.9 } else { 0.0 });
            s.push(true);
            a.push(Some(ai));
            y.push(Some(f64::from(draw(&mut rng, p))));
        } else {
            s.push(false);
            if target_outcomes {
                let p = sigmoid(-0.4 + 0.7 * xi);
                a.push(Some(false));
                y.push(Some(f64::from(draw(&mut rng, p))));
            } else {
                a.push(None);
                y.push(None);
            }
        }
        x.push(vec![xi]);
    }
    StudyData::new(s, x, a, y, 0.5).unwrap()
}

/// Assemble a `NuisanceFit` directly from per-row values, bypassing model
/// fitting. Useful for algebraic identities with known nuisances.
pub(crate) fn manual_fit(
    d: &StudyData,
    r: Vec<f64>,
    mu1: Vec<f64>,
    mu0: Vec<f64>,
) -> NuisanceFit {
    let n = d.n_source();
    let sum_r: f64 = (0..d.len()).filter(|&i| d.source(i)).map(|i| r[i]).sum();
    NuisanceFit {
        alpha_hat: d.alpha_hat(),
        pi: d.pi(),
        r,
        mu: [mu0, mu1],
        mu0_target: None,
        models: None,
        diagnostics: NuisanceDiagnostics {
            ratio_self_normalization: sum_r / n as f64,
            clipped: 0,
            folds: 1,
            selection_converged: true,
            selection_iterations: 0,
            outcome_link: Link::Identity,
        },
    }
}
