//! Ground-truth effects by integrating the exact response surfaces.
//!
//! Two independent integrators guard each other: plain Monte Carlo over the
//! population's covariate law, and a Halton quasi-random sequence pushed
//! through the inverse normal CDF. Linear designs additionally admit closed
//! forms, since a linear surface integrates to the coefficient dotted with
//! the population mean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::measures::Measure;
use crate::simlab::{dot1, Design, DgpSpec, Kahan};

/// Fewest covariate draws accepted for a ground-truth integral.
pub const MIN_TRUTH_DRAWS: usize = 1_000_000;

/// Truth integrals live on their own RNG streams, far above any replicate
/// index a study could use.
const TRUTH_STREAM_BASE: u64 = 1 << 62;

/// Ground-truth effect in both populations, with Monte Carlo uncertainty.
#[derive(Debug, Clone)]
pub struct TrueEffects {
    pub measure: Measure,
    pub tau_target: f64,
    pub tau_source: f64,
    /// Delta-method MC standard errors of the two integrals (zero for the
    /// quasi-random integrator, whose error is deterministic).
    pub se_target: f64,
    pub se_source: f64,
    /// Arm means (treated, control) per population.
    pub psi_target: (f64, f64),
    pub psi_source: (f64, f64),
    pub draws: usize,
}

/// Arm-mean integrals over one population with the MC (co)variances of the
/// two means.
#[derive(Debug, Clone, Copy)]
struct PopMoments {
    psi1: f64,
    psi0: f64,
    var1: f64,
    var0: f64,
    cov: f64,
}

fn moments_from_sums(s1: f64, s0: f64, s11: f64, s00: f64, s10: f64, m: f64) -> PopMoments {
    let psi1 = s1 / m;
    let psi0 = s0 / m;
    PopMoments {
        psi1,
        psi0,
        var1: (s11 / m - psi1 * psi1) / m,
        var0: (s00 / m - psi0 * psi0) / m,
        cov: (s10 / m - psi1 * psi0) / m,
    }
}

fn mc_moments(spec: &DgpSpec, source: bool, draws: usize, seed: u64) -> PopMoments {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(TRUTH_STREAM_BASE + source as u64);
    let nu = if source { &spec.nu_s } else { &spec.nu_t };
    let mut x = vec![0.0; spec.p];
    let (mut s1, mut s0, mut s11, mut s00, mut s10) = (
        Kahan::default(),
        Kahan::default(),
        Kahan::default(),
        Kahan::default(),
        Kahan::default(),
    );
    for _ in 0..draws {
        for (xj, &nj) in x.iter_mut().zip(nu.iter()) {
            *xj = nj + rng.sample::<f64, _>(StandardNormal);
        }
        let p1 = spec.true_mu(source, true, &x);
        let p0 = spec.true_mu(source, false, &x);
        s1.add(p1);
        s0.add(p0);
        s11.add(p1 * p1);
        s00.add(p0 * p0);
        s10.add(p1 * p0);
    }
    moments_from_sums(
        s1.value(),
        s0.value(),
        s11.value(),
        s00.value(),
        s10.value(),
        draws as f64,
    )
}

/// van der Corput radical inverse in the given base.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const HALTON_BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn quasi_moments(spec: &DgpSpec, source: bool, draws: usize) -> Result<PopMoments> {
    if spec.p > HALTON_BASES.len() {
        return Err(Error::Config(format!(
            "quasi-random integration supports at most {} covariates, got {}",
            HALTON_BASES.len(),
            spec.p
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let nu = if source { &spec.nu_s } else { &spec.nu_t };
    let mut x = vec![0.0; spec.p];
    let (mut s1, mut s0, mut s11, mut s00, mut s10) = (
        Kahan::default(),
        Kahan::default(),
        Kahan::default(),
        Kahan::default(),
        Kahan::default(),
    );
    for i in 1..=draws as u64 {
        for j in 0..spec.p {
            let u = radical_inverse(i, HALTON_BASES[j]);
            x[j] = nu[j] + normal.inverse_cdf(u);
        }
        let p1 = spec.true_mu(source, true, &x);
        let p0 = spec.true_mu(source, false, &x);
        s1.add(p1);
        s0.add(p0);
        s11.add(p1 * p1);
        s00.add(p0 * p0);
        s10.add(p1 * p0);
    }
    Ok(moments_from_sums(
        s1.value(),
        s0.value(),
        s11.value(),
        s00.value(),
        s10.value(),
        draws as f64,
    ))
}

/// Arm means in closed form, available when the response is linear:
/// E[V'beta] = beta . [1, nu]. Returns (treated, control).
pub fn closed_form_arm_means(spec: &DgpSpec, source: bool) -> Option<(f64, f64)> {
    let nu = if source { &spec.nu_s } else { &spec.nu_t };
    match &spec.design {
        Design::AppE { beta, .. } => Some((dot1(&beta[1], nu), dot1(&beta[0], nu))),
        Design::Exp2Rd { beta, theta, .. } => {
            let shift = if source { 0.0 } else { dot1(theta, nu) };
            Some((dot1(&beta[1], nu) + shift, dot1(&beta[0], nu) + shift))
        }
        _ => None,
    }
}

fn effects_from_moments(
    m: Measure,
    target: PopMoments,
    source: PopMoments,
    draws: usize,
) -> Result<TrueEffects> {
    let tau_se = |p: &PopMoments| -> Result<(f64, f64)> {
        let tau = m.phi(p.psi1, p.psi0)?;
        let (d1, d0) = m.dphi(p.psi1, p.psi0)?;
        let var = d1 * d1 * p.var1 + d0 * d0 * p.var0 + 2.0 * d1 * d0 * p.cov;
        Ok((tau, var.max(0.0).sqrt()))
    };
    let (tau_target, se_target) = tau_se(&target)?;
    let (tau_source, se_source) = tau_se(&source)?;
    Ok(TrueEffects {
        measure: m,
        tau_target,
        tau_source,
        se_target,
        se_source,
        psi_target: (target.psi1, target.psi0),
        psi_source: (source.psi1, source.psi0),
        draws,
    })
}

/// Ground truth by Monte Carlo integration of the exact surfaces.
pub fn true_effects(spec: &DgpSpec, m: Measure, draws: usize, seed: u64) -> Result<TrueEffects> {
    spec.validate()?;
    if draws < MIN_TRUTH_DRAWS {
        return Err(Error::Validation(format!(
            "ground truth needs at least {MIN_TRUTH_DRAWS} draws, got {draws}"
        )));
    }
    let target = mc_moments(spec, false, draws, seed);
    let source = mc_moments(spec, true, draws, seed);
    effects_from_moments(m, target, source, draws)
}

/// Ground truth by Halton quasi-random integration; an independent check on
/// [`true_effects`]. Reported standard errors are zero: the integration
/// error is deterministic and, at these sizes, far below MC noise.
pub fn true_effects_quasi(spec: &DgpSpec, m: Measure, draws: usize) -> Result<TrueEffects> {
    spec.validate()?;
    if draws < MIN_TRUTH_DRAWS {
        return Err(Error::Validation(format!(
            "ground truth needs at least {MIN_TRUTH_DRAWS} draws, got {draws}"
        )));
    }
    let mut target = quasi_moments(spec, false, draws)?;
    let mut source = quasi_moments(spec, true, draws)?;
    target.var1 = 0.0;
    target.var0 = 0.0;
    target.cov = 0.0;
    source.var1 = 0.0;
    source.var0 = 0.0;
    source.cov = 0.0;
    effects_from_moments(m, target, source, draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simlab::DgpName;

    const M: usize = MIN_TRUTH_DRAWS;

    #[test]
    fn too_few_draws_are_rejected() {
        let spec = DgpSpec::named(DgpName::AppELinear);
        let err = true_effects(&spec, Measure::Rd, 1000, 1).unwrap_err();
        assert_eq!(err.kind(), "validation");
    }

    #[test]
    fn linear_closed_forms_pin_both_integrators() {
        for name in [DgpName::AppELinear, DgpName::Exp2Rd] {
            let spec = DgpSpec::named(name);
            for source in [false, true] {
                let (c1, c0) = closed_form_arm_means(&spec, source).unwrap();
                let mc = mc_moments(&spec, source, M, 5);
                assert!(
                    (mc.psi1 - c1).abs() < 4.0 * mc.var1.sqrt(),
                    "{name:?} mc psi1 {} vs {c1}",
                    mc.psi1
                );
                assert!((mc.psi0 - c0).abs() < 4.0 * mc.var0.sqrt());
                let q = quasi_moments(&spec, source, M).unwrap();
                assert!((q.psi1 - c1).abs() < 1e-3, "{name:?} quasi {} vs {c1}", q.psi1);
                assert!((q.psi0 - c0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn dual_oracles_agree_on_the_nonlinear_design() {
        let spec = DgpSpec::named(DgpName::Exp1Nonlinear);
        let mc = true_effects(&spec, Measure::Rd, M, 9).unwrap();
        let quasi = true_effects_quasi(&spec, Measure::Rd, M).unwrap();
        assert!(
            (mc.tau_target - quasi.tau_target).abs() < 3.0 * mc.se_target,
            "target {} vs {} (se {})",
            mc.tau_target,
            quasi.tau_target,
            mc.se_target
        );
        assert!((mc.tau_source - quasi.tau_source).abs() < 3.0 * mc.se_source);
    }

    #[test]
    fn nonlinear_design_source_effects_hit_their_published_windows() {
        let spec = DgpSpec::named(DgpName::Exp1Nonlinear);
        let s = quasi_moments(&spec, true, M).unwrap();
        for (m, want, tol) in [
            (Measure::Rd, 0.45, 0.05),
            (Measure::Rr, 3.2, 0.2),
            (Measure::Or, 7.5, 0.8),
        ] {
            let tau = m.phi(s.psi1, s.psi0).unwrap();
            assert!((tau - want).abs() < tol, "{m:?}: {tau} vs {want}");
        }
    }

    #[test]
    fn identical_populations_give_equal_effects() {
        let mut spec = DgpSpec::named(DgpName::Exp1Nonlinear);
        spec.nu_t = spec.nu_s.clone();
        let t = true_effects(&spec, Measure::Or, M, 13).unwrap();
        let tol = 3.0 * (t.se_target + t.se_source);
        assert!((t.tau_target - t.tau_source).abs() < tol);
    }

    #[test]
    fn radical_inverse_is_the_textbook_sequence() {
        // base 2: 1/2, 1/4, 3/4, 1/8, ...
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(4, 2), 0.125);
        // base 3: 1/3, 2/3, 1/9
        assert!((radical_inverse(1, 3) - 1.0 / 3.0).abs() < 1e-15);
        assert!((radical_inverse(2, 3) - 2.0 / 3.0).abs() < 1e-15);
        assert!((radical_inverse(3, 3) - 1.0 / 9.0).abs() < 1e-15);
    }
}
