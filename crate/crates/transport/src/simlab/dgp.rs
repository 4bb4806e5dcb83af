//! Drawing pooled two-population samples from a [`DgpSpec`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::data::StudyData;
use crate::error::Result;
use crate::simlab::{Design, DgpSpec};

/// A generated sample plus the latent potential outcomes behind it, kept
/// for ground-truth checks; estimators only ever see `data`.
#[derive(Debug, Clone)]
pub struct GeneratedStudy {
    pub data: StudyData,
    /// Control potential outcome of every row.
    pub y0: Vec<f64>,
    /// Treated potential outcome of every row.
    pub y1: Vec<f64>,
}

/// Draw `n` rows on the seed's default RNG stream.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<GeneratedStudy> {
    generate_stream(spec, n, seed, 0)
}

/// Draw `n` rows on a chosen RNG stream. Streams are independent, so a
/// replication study can hand stream `r` to replicate `r` and stay
/// deterministic under any execution order.
pub fn generate_stream(spec: &DgpSpec, n: usize, seed: u64, stream: u64) -> Result<GeneratedStudy> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let sigma = match spec.design {
        Design::Exp2Rd { sigma, .. } | Design::AppE { sigma, .. } => Some(sigma),
        _ => None,
    };

    let mut s = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);

    for _ in 0..n {
        let si = rng.gen_bool(spec.alpha);
        let nu = if si { &spec.nu_s } else { &spec.nu_t };
        let xi: Vec<f64> = nu
            .iter()
            .map(|&m| m + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let ai = if si { Some(rng.gen_bool(spec.pi)) } else { None };

        let mu0 = spec.true_mu(si, false, &xi);
        let mu1 = spec.true_mu(si, true, &xi);
        let (y0i, y1i) = match sigma {
            None => (
                f64::from(rng.gen_bool(mu0)),
                f64::from(rng.gen_bool(mu1)),
            ),
            Some(sd) => (
                mu0 + sd * rng.sample::<f64, _>(StandardNormal),
                mu1 + sd * rng.sample::<f64, _>(StandardNormal),
            ),
        };

        let (ai, yi) = match ai {
            Some(arm) => (Some(arm), Some(if arm { y1i } else { y0i })),
            None if spec.target_controls => (Some(false), Some(y0i)),
            None => (None, None),
        };

        s.push(si);
        x.push(xi);
        a.push(ai);
        y.push(yi);
        y0.push(y0i);
        y1.push(y1i);
    }

    Ok(GeneratedStudy {
        data: StudyData::new(s, x, a, y, spec.pi)?,
        y0,
        y1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nuisance::{fit_nuisances, NuisanceOptions};
    use crate::simlab::DgpName;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn selection_fraction_matches_alpha() {
        let spec = DgpSpec::named(DgpName::Exp1Nonlinear);
        let g = generate(&spec, 1_000_000, 7).unwrap();
        let frac = g.data.n_source() as f64 / g.data.len() as f64;
        assert!((frac - spec.alpha).abs() < 0.002, "{frac}");
    }

    #[test]
    fn same_seed_same_draw_other_stream_differs() {
        let spec = DgpSpec::named(DgpName::Exp2Or);
        let a = generate(&spec, 300, 11).unwrap();
        let b = generate(&spec, 300, 11).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.y1, b.y1);
        let c = generate_stream(&spec, 300, 11, 1).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn target_outcomes_follow_the_scenario_switch() {
        let spec = DgpSpec::named(DgpName::AppELinear);
        let hidden = generate(&spec, 500, 3).unwrap();
        assert!(!hidden.data.has_target_outcomes());

        let exposed = generate(&spec.clone().with_target_controls(true), 500, 3).unwrap();
        assert!(exposed.data.has_target_outcomes());
        for i in 0..exposed.data.len() {
            if !exposed.data.source(i) {
                // every target row is a control with its latent Y(0)
                assert_eq!(exposed.data.a(i), Some(false));
                assert_eq!(exposed.data.y(i), Some(exposed.y0[i]));
            }
        }
    }

    #[test]
    fn ols_on_a_large_appe_sample_recovers_the_coefficients() {
        let spec = DgpSpec::named(DgpName::AppELinear);
        let g = generate(&spec, 120_000, 19).unwrap();
        let nf = fit_nuisances(&g.data, &NuisanceOptions::default()).unwrap();
        let models = nf.models.unwrap();
        let Design::AppE { beta, .. } = &spec.design else {
            unreachable!()
        };
        for arm in 0..2 {
            let fitted = &models.outcomes.mu[arm].beta;
            for (j, &truth) in beta[arm].iter().enumerate() {
                assert!(
                    (fitted[j] - truth).abs() < 0.05,
                    "arm {arm} coef {j}: {} vs {truth}",
                    fitted[j]
                );
            }
        }
    }

    #[test]
    fn logistic_regression_recovers_the_exp2_or_arms_within_four_se() {
        let spec = DgpSpec::named(DgpName::Exp2Or);
        let Design::Exp2Or {
            beta_source, gamma, ..
        } = &spec.design
        else {
            unreachable!()
        };
        let g = generate(&spec, 200_000, 23).unwrap();
        let nf = fit_nuisances(&g.data, &NuisanceOptions::default()).unwrap();
        let models = nf.models.unwrap();

        for arm in [false, true] {
            let truth: Vec<f64> = beta_source
                .iter()
                .zip(gamma.iter())
                .map(|(b, g)| b + if arm { *g } else { 0.0 })
                .collect();
            let fitted = &models.outcomes.mu[arm as usize].beta;

            // Fisher SEs from the inverse information at the fit
            let rows: Vec<usize> = (0..g.data.len())
                .filter(|&i| g.data.source(i) && g.data.a(i) == Some(arm))
                .collect();
            let p = spec.p + 1;
            let mut info = DMatrix::<f64>::zeros(p, p);
            for &i in &rows {
                let x = g.data.x_row(i);
                let v = DVector::from_fn(p, |j, _| if j == 0 { 1.0 } else { x[j - 1] });
                let mu = models.outcomes.mu[arm as usize].predict(&x);
                info += v.clone() * v.transpose() * (mu * (1.0 - mu));
            }
            let cov = info.try_inverse().unwrap();

            for j in 0..p {
                let se = cov[(j, j)].sqrt();
                assert!(
                    (fitted[j] - truth[j]).abs() < 4.0 * se,
                    "arm {arm} coef {j}: {} vs {} (se {se:.4})",
                    fitted[j],
                    truth[j]
                );
            }
        }
    }
}
