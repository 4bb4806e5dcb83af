//! Sandwich variances for the mean-transport estimators.
//!
//! Each estimator is re-expressed as the root of a stacked estimating
//! equation over all pooled rows — target arm means first, then every
//! nuisance parameter the estimator consumed (source fraction, arm
//! probabilities, selection coefficients, outcome coefficients). Feeding the
//! stack through the generic M-estimation engine yields a joint covariance
//! in which nuisance estimation error propagates into the effect estimate,
//! and the delta method maps it onto the chosen measure.
//!
//! Cross-fitted nuisances have no single coefficient vector to stack, so
//! they are rejected here; the bootstrap covers that case.

use nalgebra::DVector;

use crate::data::StudyData;
use crate::error::{Error, Result};
use crate::estimators::{mean, EstimatorId};
use crate::measures::Measure;
use crate::mestimation::{delta_method, EstimatingSystem};
use crate::nuisance::{sigmoid, Link, NuisanceFit};

/// Whether [`variance_sandwich`] supports the estimator.
pub fn supports_sandwich(id: EstimatorId) -> bool {
    matches!(
        id,
        EstimatorId::Wht
            | EstimatorId::Neyman
            | EstimatorId::GWeighted
            | EstimatorId::GTransported
            | EstimatorId::Ee
    )
}

/// Owned per-row views captured by the moment closures.
struct Rows {
    q: usize,
    v: Vec<Vec<f64>>,
    s: Vec<bool>,
    /// 1 treated, 0 control, -1 unobserved.
    a: Vec<i8>,
    y: Vec<f64>,
    pi: f64,
}

fn capture_rows(d: &StudyData) -> Rows {
    let q = d.n_covariates() + 1;
    let mut v = Vec::with_capacity(d.len());
    let mut s = Vec::with_capacity(d.len());
    let mut a = Vec::with_capacity(d.len());
    let mut y = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        let mut vi = Vec::with_capacity(q);
        vi.push(1.0);
        vi.extend(d.x_row(i));
        v.push(vi);
        s.push(d.source(i));
        a.push(match d.a(i) {
            Some(true) => 1,
            Some(false) => 0,
            None => -1,
        });
        y.push(d.y(i).unwrap_or(0.0));
    }
    Rows {
        q,
        v,
        s,
        a,
        y,
        pi: d.pi(),
    }
}

fn dot(v: &[f64], theta: &DVector<f64>, off: usize) -> f64 {
    v.iter().enumerate().map(|(j, x)| x * theta[off + j]).sum()
}

fn apply_link(link: Link, eta: f64) -> f64 {
    match link {
        Link::Identity => eta,
        Link::Logit => sigmoid(eta),
    }
}

fn coef_labels(prefix: &str, q: usize) -> impl Iterator<Item = String> + '_ {
    (0..q).map(move |j| format!("{prefix}_{j}"))
}

struct StackParts {
    labels: Vec<String>,
    theta: Vec<f64>,
}

impl StackParts {
    fn new() -> StackParts {
        StackParts {
            labels: Vec::new(),
            theta: Vec::new(),
        }
    }

    fn push(&mut self, label: impl Into<String>, value: f64) -> usize {
        self.labels.push(label.into());
        self.theta.push(value);
        self.theta.len() - 1
    }

    fn push_block(&mut self, prefix: &str, values: &DVector<f64>) -> usize {
        let off = self.theta.len();
        for (label, v) in coef_labels(prefix, values.len()).zip(values.iter()) {
            self.labels.push(label);
            self.theta.push(*v);
        }
        off
    }
}

/// Build the stacked estimating system whose root is the named estimator
/// together with its fitted nuisances.
pub fn stacked_system(
    d: &StudyData,
    id: EstimatorId,
    nf: &NuisanceFit,
) -> Result<EstimatingSystem<'static>> {
    if !supports_sandwich(id) {
        return Err(Error::Capability(format!(
            "no sandwich variance for `{id}`; use the bootstrap"
        )));
    }
    let models = nf.models.as_ref().ok_or_else(|| {
        Error::Capability(
            "cross-fitted nuisances have no single coefficient vector to stack; \
             sandwich variance needs a global fit (bootstrap CIs remain available)"
                .into(),
        )
    })?;
    let uses_ratio = !matches!(id, EstimatorId::GTransported);
    if uses_ratio && nf.diagnostics.clipped > 0 {
        return Err(Error::Capability(
            "density-ratio clipping was active; the stacked equations ignore clipping, \
             so the sandwich would be inconsistent (use the bootstrap)"
                .into(),
        ));
    }

    let rows = capture_rows(d);
    let q = rows.q;
    let n_rows = d.len();
    let link = models.outcomes.link;
    let beta_sel = models.selection.beta.clone();
    let b1 = models.outcomes.mu[1].beta.clone();
    let b0 = models.outcomes.mu[0].beta.clone();

    let mut parts = StackParts::new();
    match id {
        EstimatorId::Wht => {
            let arms = mean::wht_arm_means(d, nf);
            parts.push("psi1", arms.psi1);
            parts.push("psi0", arms.psi0);
            parts.push("alpha", nf.alpha_hat);
            let beta_off = parts.push_block("sel", &beta_sel);
            let lambda = move |i: usize, theta: &DVector<f64>| {
                let mut out = DVector::zeros(3 + q);
                let (s, a) = (rows.s[i], rows.a[i]);
                let alpha = theta[2];
                let sig = sigmoid(dot(&rows.v[i], theta, beta_off));
                let ratio = alpha / (1.0 - alpha) * (1.0 - sig) / sig;
                let s_f = f64::from(s);
                if s {
                    if a == 1 {
                        out[0] = ratio * rows.y[i] / rows.pi;
                    } else {
                        out[1] = ratio * rows.y[i] / (1.0 - rows.pi);
                    }
                }
                out[0] -= alpha * theta[0];
                out[1] -= alpha * theta[1];
                out[2] = s_f - alpha;
                for j in 0..q {
                    out[beta_off + j] = rows.v[i][j] * (s_f - sig);
                }
                out
            };
            EstimatingSystem::new(
                parts.labels,
                DVector::from_vec(parts.theta),
                n_rows,
                lambda,
            )
        }
        EstimatorId::Neyman => {
            let arms = mean::neyman_arm_means(d, nf);
            let n = d.n_source() as f64;
            let n1 = (0..d.len())
                .filter(|&i| d.source(i) && d.a(i) == Some(true))
                .count() as f64;
            parts.push("psi1", arms.psi1);
            parts.push("psi0", arms.psi0);
            parts.push("alpha", nf.alpha_hat);
            parts.push("pi1", n1 / n);
            parts.push("pi0", (n - n1) / n);
            let beta_off = parts.push_block("sel", &beta_sel);
            let lambda = move |i: usize, theta: &DVector<f64>| {
                let mut out = DVector::zeros(5 + q);
                let (s, a) = (rows.s[i], rows.a[i]);
                let alpha = theta[2];
                let sig = sigmoid(dot(&rows.v[i], theta, beta_off));
                let ratio = alpha / (1.0 - alpha) * (1.0 - sig) / sig;
                let s_f = f64::from(s);
                if s {
                    let a_f = f64::from(a == 1);
                    if a == 1 {
                        out[0] = ratio * rows.y[i] / theta[3];
                    } else {
                        out[1] = ratio * rows.y[i] / theta[4];
                    }
                    out[3] = a_f - theta[3];
                    out[4] = (1.0 - a_f) - theta[4];
                }
                out[0] -= alpha * theta[0];
                out[1] -= alpha * theta[1];
                out[2] = s_f - alpha;
                for j in 0..q {
                    out[beta_off + j] = rows.v[i][j] * (s_f - sig);
                }
                out
            };
            EstimatingSystem::new(
                parts.labels,
                DVector::from_vec(parts.theta),
                n_rows,
                lambda,
            )
        }
        EstimatorId::GTransported => {
            let arms = mean::g_transported_arm_means(d, nf);
            parts.push("psi1", arms.psi1);
            parts.push("psi0", arms.psi0);
            let b1_off = parts.push_block("mu1", &b1);
            let b0_off = parts.push_block("mu0", &b0);
            let lambda = move |i: usize, theta: &DVector<f64>| {
                let mut out = DVector::zeros(2 + 2 * q);
                let (s, a) = (rows.s[i], rows.a[i]);
                let mu1 = apply_link(link, dot(&rows.v[i], theta, b1_off));
                let mu0 = apply_link(link, dot(&rows.v[i], theta, b0_off));
                if !s {
                    out[0] = mu1 - theta[0];
                    out[1] = mu0 - theta[1];
                } else if a == 1 {
                    let resid = rows.y[i] - mu1;
                    for j in 0..q {
                        out[b1_off + j] = rows.v[i][j] * resid;
                    }
                } else {
                    let resid = rows.y[i] - mu0;
                    for j in 0..q {
                        out[b0_off + j] = rows.v[i][j] * resid;
                    }
                }
                out
            };
            EstimatingSystem::new(
                parts.labels,
                DVector::from_vec(parts.theta),
                n_rows,
                lambda,
            )
        }
        EstimatorId::GWeighted => {
            let arms = mean::g_weighted_arm_means(d, nf);
            parts.push("psi1", arms.psi1);
            parts.push("psi0", arms.psi0);
            parts.push("alpha", nf.alpha_hat);
            let beta_off = parts.push_block("sel", &beta_sel);
            let b1_off = parts.push_block("mu1", &b1);
            let b0_off = parts.push_block("mu0", &b0);
            let lambda = move |i: usize, theta: &DVector<f64>| {
                let mut out = DVector::zeros(3 + 3 * q);
                let (s, a) = (rows.s[i], rows.a[i]);
                let alpha = theta[2];
                let sig = sigmoid(dot(&rows.v[i], theta, beta_off));
                let s_f = f64::from(s);
                if s {
                    let ratio = alpha / (1.0 - alpha) * (1.0 - sig) / sig;
                    let mu1 = apply_link(link, dot(&rows.v[i], theta, b1_off));
                    let mu0 = apply_link(link, dot(&rows.v[i], theta, b0_off));
                    out[0] = ratio * mu1;
                    out[1] = ratio * mu0;
                    if a == 1 {
                        let resid = rows.y[i] - mu1;
                        for j in 0..q {
                            out[b1_off + j] = rows.v[i][j] * resid;
                        }
                    } else {
                        let resid = rows.y[i] - mu0;
                        for j in 0..q {
                            out[b0_off + j] = rows.v[i][j] * resid;
                        }
                    }
                }
                out[0] -= alpha * theta[0];
                out[1] -= alpha * theta[1];
                out[2] = s_f - alpha;
                for j in 0..q {
                    out[beta_off + j] = rows.v[i][j] * (s_f - sig);
                }
                out
            };
            EstimatingSystem::new(
                parts.labels,
                DVector::from_vec(parts.theta),
                n_rows,
                lambda,
            )
        }
        EstimatorId::Ee => {
            let arms = mean::ee_arm_means(d, nf);
            parts.push("psi1", arms.psi1);
            parts.push("psi0", arms.psi0);
            parts.push("alpha", nf.alpha_hat);
            let beta_off = parts.push_block("sel", &beta_sel);
            let b1_off = parts.push_block("mu1", &b1);
            let b0_off = parts.push_block("mu0", &b0);
            let lambda = move |i: usize, theta: &DVector<f64>| {
                let mut out = DVector::zeros(3 + 3 * q);
                let (s, a) = (rows.s[i], rows.a[i]);
                let alpha = theta[2];
                let sig = sigmoid(dot(&rows.v[i], theta, beta_off));
                let mu1 = apply_link(link, dot(&rows.v[i], theta, b1_off));
                let mu0 = apply_link(link, dot(&rows.v[i], theta, b0_off));
                let s_f = f64::from(s);
                if s {
                    let ratio = alpha / (1.0 - alpha) * (1.0 - sig) / sig;
                    if a == 1 {
                        let resid = rows.y[i] - mu1;
                        out[0] = ratio * resid / (alpha * rows.pi);
                        for j in 0..q {
                            out[b1_off + j] = rows.v[i][j] * resid;
                        }
                    } else {
                        let resid = rows.y[i] - mu0;
                        out[1] = ratio * resid / (alpha * (1.0 - rows.pi));
                        for j in 0..q {
                            out[b0_off + j] = rows.v[i][j] * resid;
                        }
                    }
                } else {
                    out[0] = (mu1 - theta[0]) / (1.0 - alpha);
                    out[1] = (mu0 - theta[1]) / (1.0 - alpha);
                }
                out[2] = s_f - alpha;
                for j in 0..q {
                    out[beta_off + j] = rows.v[i][j] * (s_f - sig);
                }
                out
            };
            EstimatingSystem::new(
                parts.labels,
                DVector::from_vec(parts.theta),
                n_rows,
                lambda,
            )
        }
        _ => unreachable!("guarded by supports_sandwich"),
    }
}

/// Sandwich variance of the measure-level estimate (already scaled by N;
/// the standard error is its square root).
pub fn variance_sandwich(
    d: &StudyData,
    id: EstimatorId,
    m: Measure,
    nf: &NuisanceFit,
) -> Result<f64> {
    let sys = stacked_system(d, id, nf)?;
    let (psi1, psi0) = (sys.theta_hat()[0], sys.theta_hat()[1]);
    let (d1, d0) = m.dphi(psi1, psi0)?;
    let cov = sys.sandwich()?;
    let mut grad = DVector::zeros(sys.theta_dim());
    grad[0] = d1;
    grad[1] = d0;
    delta_method(&cov, &grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testkit::{binary_dataset, linear_dataset};
    use crate::nuisance::{fit_nuisances, NuisanceOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    const SUPPORTED: [EstimatorId; 5] = [
        EstimatorId::Wht,
        EstimatorId::Neyman,
        EstimatorId::GWeighted,
        EstimatorId::GTransported,
        EstimatorId::Ee,
    ];

    #[test]
    fn every_stack_roots_at_its_estimator() {
        for (d, what) in [
            (linear_dataset(900, 51, false), "linear"),
            (binary_dataset(900, 53, false), "binary"),
        ] {
            let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
            for id in SUPPORTED {
                let sys = stacked_system(&d, id, &nf)
                    .unwrap_or_else(|e| panic!("{what}/{id}: {e}"));
                let arms = match id {
                    EstimatorId::Wht => mean::wht_arm_means(&d, &nf),
                    EstimatorId::Neyman => mean::neyman_arm_means(&d, &nf),
                    EstimatorId::GWeighted => mean::g_weighted_arm_means(&d, &nf),
                    EstimatorId::GTransported => mean::g_transported_arm_means(&d, &nf),
                    EstimatorId::Ee => mean::ee_arm_means(&d, &nf),
                    _ => unreachable!(),
                };
                assert!((sys.theta_hat()[0] - arms.psi1).abs() < 1e-12, "{what}/{id}");
                assert!((sys.theta_hat()[1] - arms.psi0).abs() < 1e-12, "{what}/{id}");
                let v = variance_sandwich(&d, id, Measure::Rd, &nf)
                    .unwrap_or_else(|e| panic!("{what}/{id}: {e}"));
                assert!(v.is_finite() && v > 0.0, "{what}/{id}: {v}");
            }
        }
    }

    #[test]
    fn no_shift_irrelevant_covariate_matches_two_sample_variance() {
        // Identical populations, outcome free of x: the transported
        // G-formula collapses to the two-arm mean difference, whose
        // variance is the classic s1^2/n1 + s0^2/n0.
        let n_rows = 4000;
        let mut rng = ChaCha20Rng::seed_from_u64(61);
        let mut s = Vec::new();
        let mut x = Vec::new();
        let mut a = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n_rows {
            let src = rng.gen::<f64>() < 0.5;
            let xi: f64 = StandardNormal.sample(&mut rng);
            let noise: f64 = StandardNormal.sample(&mut rng);
            s.push(src);
            x.push(vec![xi]);
            if src {
                let ai = rng.gen::<f64>() < 0.5;
                a.push(Some(ai));
                y.push(Some(1.0 + if ai { 0.5 } else { 0.0 } + 0.4 * noise));
            } else {
                a.push(None);
                y.push(None);
            }
        }
        let d = StudyData::new(s, x, a, y, 0.5).unwrap();
        let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
        let v = variance_sandwich(&d, EstimatorId::GTransported, Measure::Rd, &nf).unwrap();

        // hand formula on the same data
        let (mut n1, mut n0, mut m1, mut m0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..d.len() {
            if d.source(i) {
                let yi = d.y(i).unwrap();
                if d.a(i) == Some(true) {
                    n1 += 1.0;
                    m1 += yi;
                } else {
                    n0 += 1.0;
                    m0 += yi;
                }
            }
        }
        m1 /= n1;
        m0 /= n0;
        let (mut s1, mut s0) = (0.0, 0.0);
        for i in 0..d.len() {
            if d.source(i) {
                let yi = d.y(i).unwrap();
                if d.a(i) == Some(true) {
                    s1 += (yi - m1) * (yi - m1);
                } else {
                    s0 += (yi - m0) * (yi - m0);
                }
            }
        }
        let hand = s1 / n1 / n1 + s0 / n0 / n0;
        assert!(
            (v - hand).abs() < 0.01 * hand,
            "sandwich {v:e} vs hand {hand:e}"
        );
    }

    #[test]
    fn sandwich_tracks_monte_carlo_spread() {
        // 200 replications: the mean sandwich SE for tG and wht (RD) should
        // sit near each estimator's empirical SD.
        let reps = 200;
        let mut tg_est = Vec::with_capacity(reps);
        let mut tg_se = Vec::with_capacity(reps);
        let mut wht_est = Vec::with_capacity(reps);
        let mut wht_se = Vec::with_capacity(reps);
        for rep in 0..reps {
            let d = linear_dataset(1500, 9000 + rep as u64, false);
            let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
            tg_est.push(mean::g_transported(&d, Measure::Rd, &nf).unwrap().estimate);
            tg_se.push(
                variance_sandwich(&d, EstimatorId::GTransported, Measure::Rd, &nf)
                    .unwrap()
                    .sqrt(),
            );
            wht_est.push(mean::wht(&d, Measure::Rd, &nf).unwrap().estimate);
            wht_se.push(
                variance_sandwich(&d, EstimatorId::Wht, Measure::Rd, &nf)
                    .unwrap()
                    .sqrt(),
            );
        }
        let sd = |v: &[f64]| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (tg_sd, tg_mean_se) = (sd(&tg_est), mean(&tg_se));
        assert!(
            (tg_mean_se - tg_sd).abs() < 0.20 * tg_sd,
            "tG: mean SE {tg_mean_se:e} vs MC SD {tg_sd:e}"
        );
        let (wht_sd, wht_mean_se) = (sd(&wht_est), mean(&wht_se));
        assert!(
            (wht_mean_se - wht_sd).abs() < 0.20 * wht_sd,
            "wht: mean SE {wht_mean_se:e} vs MC SD {wht_sd:e}"
        );
    }

    #[test]
    fn crossfit_and_unsupported_ids_are_capability_errors() {
        let d = linear_dataset(400, 71, false);
        let nf = fit_nuisances(
            &d,
            &NuisanceOptions {
                crossfit: Some((2, 7)),
                ..NuisanceOptions::default()
            },
        )
        .unwrap();
        let err = variance_sandwich(&d, EstimatorId::Ee, Measure::Rd, &nf).unwrap_err();
        assert_eq!(err.kind(), "capability");
        assert!(err.to_string().contains("bootstrap"), "{err}");

        let nf_global = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
        let err = variance_sandwich(&d, EstimatorId::OneStep, Measure::Rd, &nf_global).unwrap_err();
        assert_eq!(err.kind(), "capability");
    }
}
