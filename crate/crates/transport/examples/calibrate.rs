//! One-shot calibration audit for the shipped synthetic-design numbers.
//!
//! The five design shapes in `simlab` fix the model families only; every
//! coefficient in `config/dgp.toml` is a free knob. This example is the
//! procedure that chose those knobs, kept runnable so the shipped numbers
//! stay reproducible instead of folklore:
//!
//! * part A searches the nonlinear design `exp1_nonlinear` for knobs that
//!   give every operating-characteristic claim a wide margin at n = 5000
//!   and 300 replicates, using exact Gauss-Hermite integrals for truths,
//!   least-squares limits, one-step limits, and weighting variances;
//! * part B screens candidate coefficient sets for the shifted-outcome
//!   designs `exp2_*` against their exact large-sample limits (logistic
//!   projections computed by quasi-Monte Carlo Newton, no simulation noise);
//! * part C re-derives the linear design's target shift as the minimum-norm
//!   solution hitting round arm-mean shifts;
//! * part D replays the exact benchmark configurations, seeds included, on
//!   the frozen numbers and prints one PASS or FAIL line per claim.
//!
//! `cargo run --release --example calibrate` panics on any FAIL. The frozen
//! file is echoed to stdout and written to `target/calibrated_dgp.toml`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use effect_transport::estimators::EstimatorId;
use effect_transport::measures::Measure;
use effect_transport::nuisance::{sigmoid, Link, NuisanceOptions};
use effect_transport::simlab::{
    run_study, DgpName, DgpSpec, NuisancePlan, OutcomePlan, RatioPlan, SimulationReport,
    StudyConfig,
};

/// Benchmark geometry every margin below is projected onto.
const N_BENCH: usize = 5000;
const R_BENCH: f64 = 300.0;
/// Source sample size implied by alpha = 0.3.
const N_SRC: f64 = 0.3 * N_BENCH as f64;
/// Source effect targets and the windows the shipped numbers must hit.
const SRC_RD: f64 = 0.45;
const SRC_RR: f64 = 3.2;
const SRC_OR: f64 = 7.5;
const SRC_TOL: [f64; 3] = [0.05, 0.1, 0.3];

fn sig_d(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

fn round_to(x: f64, digits: i32) -> f64 {
    let p = 10f64.powi(digits);
    (x * p).round() / p
}

/// (phi_11, phi_00, phi_10) second partials, for plug-in curvature bounds.
fn d2phi(m: Measure, p1: f64, p0: f64) -> (f64, f64, f64) {
    match m {
        Measure::Rd => (0.0, 0.0, 0.0),
        Measure::Rr => (0.0, 2.0 * p1 / p0.powi(3), -1.0 / (p0 * p0)),
        Measure::Or => {
            let w = (1.0 - p0) / p0;
            let o1 = p1 / (1.0 - p1);
            (
                2.0 * w / (1.0 - p1).powi(3),
                2.0 * o1 / p0.powi(3),
                -1.0 / ((1.0 - p1) * (1.0 - p1) * p0 * p0),
            )
        }
        _ => unreachable!("calibration only inspects RD, RR, OR"),
    }
}

/// Pass/fail collector; the process exits nonzero if anything failed.
struct Gate {
    checks: usize,
    failures: usize,
}

impl Gate {
    fn new() -> Gate {
        Gate {
            checks: 0,
            failures: 0,
        }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
        }
        println!("  [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (Golub-Welsch on the Jacobi matrix).

struct Quad {
    t: Vec<f64>,
    /// Normalized so the weights sum to one.
    w: Vec<f64>,
}

impl Quad {
    fn gauss_hermite(n: usize) -> Quad {
        let mut j = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let b = (i as f64 / 2.0).sqrt();
            j[(i, i - 1)] = b;
            j[(i - 1, i)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let norm: f64 = pairs.iter().map(|p| p.1).sum();
        Quad {
            t: pairs.iter().map(|p| p.0).collect(),
            w: pairs.iter().map(|p| p.1 / norm).collect(),
        }
    }

    /// E[f(Z)] for Z ~ N(mu, sd^2).
    fn mean(&self, mu: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        self.t
            .iter()
            .zip(&self.w)
            .map(|(&t, &w)| w * f(mu + scale * t))
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Part A: the nonlinear design.
//
// beta0 = (c0, s, -s, s, s) and beta1 = j*beta0 + k*e0 make both response
// surfaces functions of the scalar index Q = beta0'V ~ N(c0, 4s^2), and the
// target shift nu_t = t*(1, -1, 1, 1) moves Q by delta = 4*s*t while the
// density ratio stays a function of Q. Everything of interest is then a
// one-dimensional integral:
//   arm means        psi_a = E sigma-of-arm-a(Q)
//   least-squares    slope b_a = E p_a'(Q) (Stein), limit psi_a + b_a*delta
//   one-step limit   Phi(star) + grad Phi(star) . (truth - star)
//   weighting var    (E_S[r^2 p_a]/pi_a - psi_a_T^2) / n_src.

#[derive(Clone, Copy, Debug)]
struct Exp1Knobs {
    c0: f64,
    s: f64,
    t: f64,
    j: f64,
    k: f64,
}

struct Exp1Row {
    m: Measure,
    truth: f64,
    limit: f64,
    os: f64,
    mcse: f64,
    reg_ratio: f64,
    os_ratio: f64,
    curv: f64,
    curv_allow: f64,
}

struct Exp1Eval {
    knobs: Exp1Knobs,
    psi_s: [f64; 2],
    psi_t: [f64; 2],
    star: [f64; 2],
    e_r2: f64,
    rows: Vec<Exp1Row>,
    score: f64,
}

/// Margin multiples demanded by the search, in benchmark mc_se units. The
/// biased claims are judged at 5 mc_se, so ask for 8; the unbiased claims
/// get a curvature budget of half their 3-mc_se envelope.
///
/// All audit variances are the known-probability weighting ones, while the
/// claims are about the augmented estimators, whose spread is smaller by a
/// measured factor (the benchmark replay prints ~0.6 for the estimating
/// equation, ~0.7 for the one-step; see the exp1 info line in part D). The
/// two deflators fold that in: a one-step margin of `r` weighting mc_se is
/// really r / OS_SD_DEFLATE of its own, and a curvature bias computed from
/// the weighting variance overstates the augmented one by 1/deflate^2 while
/// the allowance only shrinks by deflate, netting to a 1/deflate allowance
/// widening.
const REQ_BIAS_MULT: f64 = 8.0;
const CURV_FRAC: f64 = 0.5;
const EE_SD_DEFLATE: f64 = 0.65;
const OS_SD_DEFLATE: f64 = 0.70;

/// Reject tallies: [psi_t0, psi_t1, star, e_r2, variance, domain].
type Rejects = [usize; 6];

fn eval_exp1(knobs: Exp1Knobs, q: &Quad, rej: &mut Rejects) -> Option<Exp1Eval> {
    let Exp1Knobs { c0, s, t, j, k } = knobs;
    let sd_q = 2.0 * s;
    let delta = 4.0 * s * t;
    let p0 = |qv: f64| sigmoid(qv);
    let p1 = |qv: f64| sigmoid(j * qv * qv + k * qv);

    let psi_s = [q.mean(c0, sd_q, p0), q.mean(c0, sd_q, p1)];
    let psi_t = [q.mean(c0 + delta, sd_q, p0), q.mean(c0 + delta, sd_q, p1)];
    // Least-squares limits: best linear predictor in (1, X) evaluated at the
    // shifted index mean.
    let b0 = q.mean(c0, sd_q, sig_d);
    let b1 = q.mean(c0, sd_q, |qv| (2.0 * j * qv + k) * sig_d(j * qv * qv + k * qv));
    let star = [psi_s[0] + b0 * delta, psi_s[1] + b1 * delta];

    let r2 = |qv: f64| (2.0 * (t / s) * (qv - c0) - 4.0 * t * t).exp();
    let e_r2 = q.mean(c0, sd_q, r2);
    let er2p = [
        q.mean(c0, sd_q, |qv| r2(qv) * p0(qv)),
        q.mean(c0, sd_q, |qv| r2(qv) * p1(qv)),
    ];
    // Known-probability weighting variance per arm, pi_a = 1/2 both arms.
    let v = [
        (er2p[0] / 0.5 - psi_t[0] * psi_t[0]) / N_SRC,
        (er2p[1] / 0.5 - psi_t[1] * psi_t[1]) / N_SRC,
    ];

    // Hard guardrails: keep every mean and limit away from the {0, 1} poles
    // and the ratio second moment tame.
    if !(0.24..=0.62).contains(&psi_t[0]) {
        rej[0] += 1;
        return None;
    }
    if !(0.30..=0.75).contains(&psi_t[1]) {
        rej[1] += 1;
        return None;
    }
    if !star.iter().all(|x| (0.08..=0.92).contains(x)) {
        rej[2] += 1;
        return None;
    }
    if e_r2 > 3.0 {
        rej[3] += 1;
        return None;
    }
    if !v.iter().all(|&x| x > 0.0) {
        rej[4] += 1;
        return None;
    }

    let mut rows = Vec::new();
    let mut score = f64::INFINITY;
    for m in [Measure::Rd, Measure::Rr, Measure::Or] {
        let Some((truth, limit)) = m
            .phi(psi_t[1], psi_t[0])
            .ok()
            .zip(m.phi(star[1], star[0]).ok())
        else {
            rej[5] += 1;
            return None;
        };
        let Some(((g1s, g0s), (g1, g0))) = m
            .dphi(star[1], star[0])
            .ok()
            .zip(m.dphi(psi_t[1], psi_t[0]).ok())
        else {
            rej[5] += 1;
            return None;
        };
        let os = limit + g1s * (psi_t[1] - star[1]) + g0s * (psi_t[0] - star[0]);
        let sd = (g1 * g1 * v[1] + g0 * g0 * v[0]).sqrt();
        let mcse = sd / R_BENCH.sqrt();

        let reg_ratio = (limit - truth).abs() / mcse;
        let os_ratio = (os - truth).abs() / (OS_SD_DEFLATE * mcse);
        let (h11, h00, h10) = d2phi(m, psi_t[1], psi_t[0]);
        // Delta-method curvature of the plug-in mean. The two weighted arm
        // means share no rows (A and 1-A are exclusive), so their covariance
        // is the product term -psi1*psi0/n.
        let cov01 = -psi_t[1] * psi_t[0] / N_SRC;
        let curv = 0.5 * (h11 * v[1] + h00 * v[0] + 2.0 * h10 * cov01).abs();
        let curv_allow = CURV_FRAC * 3.0 * mcse / EE_SD_DEFLATE;

        score = score.min(reg_ratio / REQ_BIAS_MULT);
        if m != Measure::Rd {
            score = score.min(os_ratio / REQ_BIAS_MULT);
        }
        score = score.min((curv_allow / curv).min(100.0));
        rows.push(Exp1Row {
            m,
            truth,
            limit,
            os,
            mcse,
            reg_ratio,
            os_ratio,
            curv,
            curv_allow,
        });
    }

    Some(Exp1Eval {
        knobs,
        psi_s,
        psi_t,
        star,
        e_r2,
        rows,
        score: score - 0.01 * e_r2,
    })
}

/// Solve E sigma(N(c0, 4s^2)) = target for c0 by bisection.
fn solve_c0(s: f64, target: f64, q: &Quad) -> f64 {
    let (mut lo, mut hi) = (-6.0, 2.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if q.mean(mid, 2.0 * s, sigmoid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn print_exp1(e: &Exp1Eval) {
    let k = &e.knobs;
    println!(
        "  knobs: c0 {:+.4}  s {:.2}  t {:.4}  j {:.4}  k {:.4}  (index shift {:.3})",
        k.c0,
        k.s,
        k.t,
        k.j,
        k.k,
        4.0 * k.s * k.t
    );
    println!(
        "  arm means: source ({:.4}, {:.4})  target ({:.4}, {:.4})  ls-limit ({:.4}, {:.4})  E_S[r^2] {:.3}",
        e.psi_s[0], e.psi_s[1], e.psi_t[0], e.psi_t[1], e.star[0], e.star[1], e.e_r2
    );
    for r in &e.rows {
        println!(
            "    {:<3} truth {:+.4} (mc_se {:.4})  reg-limit {:+.4} ({:5.1} mc_se)  os-limit {:+.4} (t~{:5.1})  curv {:.5} vs allow {:.5}",
            r.m.name(),
            r.truth,
            r.mcse,
            r.limit,
            r.reg_ratio,
            r.os,
            r.os_ratio,
            r.curv,
            r.curv_allow
        );
    }
    println!("  min normalized margin: {:.3}", e.score);
}

struct Exp1Final {
    beta0: [f64; 5],
    beta1: [f64; 5],
    nu_t: [f64; 4],
}

fn part_a(q: &Quad, gate: &mut Gate) -> Exp1Final {
    println!("== part A: exp1_nonlinear knob search ==");
    let mut best: Vec<Exp1Eval> = Vec::new();
    let mut screened = 0usize;
    let mut hits = 0usize;
    let mut rej: Rejects = [0; 6];
    let mut t1_range = (f64::INFINITY, f64::NEG_INFINITY);
    for &s in &[1.0, 1.2, 1.4, 1.6, 1.8, 2.0, 2.2] {
        let c0 = solve_c0(s, 0.207, q);
        for &delta in &[1.6, 2.0, 2.4, 2.8, 3.2, 3.6, 4.0] {
            // Prune shifts whose ratio second moment is already off limits.
            if (delta * delta / (4.0 * s * s)).exp() > 3.0 {
                continue;
            }
            let t = delta / (4.0 * s);
            let mut jv = -0.50;
            while jv <= 0.80 + 1e-9 {
                let mut kv = -3.20;
                while kv <= 2.80 + 1e-9 {
                    screened += 1;
                    let psi1_s =
                        q.mean(c0, 2.0 * s, |qv| sigmoid(jv * qv * qv + kv * qv));
                    if (psi1_s - 0.658).abs() <= 0.004 {
                        hits += 1;
                        let p1t = q.mean(c0 + delta, 2.0 * s, |qv| {
                            sigmoid(jv * qv * qv + kv * qv)
                        });
                        t1_range.0 = t1_range.0.min(p1t);
                        t1_range.1 = t1_range.1.max(p1t);
                        if let Some(e) = eval_exp1(
                            Exp1Knobs {
                                c0,
                                s,
                                t,
                                j: jv,
                                k: kv,
                            },
                            q,
                            &mut rej,
                        ) {
                            best.push(e);
                            best.sort_by(|a, b| b.score.total_cmp(&a.score));
                            best.truncate(5);
                        }
                    }
                    kv += 0.01;
                }
                jv += 0.025;
            }
        }
    }
    println!(
        "  screened {screened} combinations, {hits} matched the source means; rejects {rej:?}"
    );
    println!(
        "  treated target mean across hits: [{:.3}, {:.3}]",
        t1_range.0, t1_range.1
    );
    println!("  top candidates:");
    for e in &best {
        let k = &e.knobs;
        println!(
            "    score {:+.3}  s {:.2} shift {:.2} j {:.2} k {:+.2}  E_S[r^2] {:.3}",
            e.score,
            k.s,
            4.0 * k.s * k.t,
            k.j,
            k.k,
            e.e_r2
        );
    }
    let win = best.first().expect("exp1 search found no admissible knobs");

    // Freeze: store 4-decimal coefficient vectors, then audit the exact
    // stored values (the slope pattern keeps the index one-dimensional).
    let k = win.knobs;
    let c0 = round_to(k.c0, 3);
    let w = round_to(k.j * k.s, 4);
    let b1c = round_to(k.j * k.c0 + k.k, 4);
    let t = round_to(k.t, 4);
    let j_eff = w / k.s;
    let frozen = Exp1Knobs {
        c0,
        s: k.s,
        t,
        j: j_eff,
        k: b1c - j_eff * c0,
    };
    let eval = eval_exp1(frozen, q, &mut [0; 6]).expect("frozen exp1 knobs fell off a guardrail");
    println!("  frozen audit:");
    print_exp1(&eval);

    for r in &eval.rows {
        let name = format!("exp1 {} regression-limit margin", r.m.name());
        gate.check(
            &name,
            r.reg_ratio >= REQ_BIAS_MULT,
            format!("{:.1} mc_se (need >= {REQ_BIAS_MULT})", r.reg_ratio),
        );
        if r.m != Measure::Rd {
            let name = format!("exp1 {} one-step-limit margin", r.m.name());
            gate.check(
                &name,
                r.os_ratio >= REQ_BIAS_MULT,
                format!("estimated t {:.1} (need >= {REQ_BIAS_MULT})", r.os_ratio),
            );
        }
        let name = format!("exp1 {} plug-in curvature budget", r.m.name());
        gate.check(
            &name,
            r.curv <= r.curv_allow,
            format!("{:.5} <= {:.5}", r.curv, r.curv_allow),
        );
    }
    let src = [
        (Measure::Rd, SRC_RD, SRC_TOL[0]),
        (Measure::Rr, SRC_RR, SRC_TOL[1]),
        (Measure::Or, SRC_OR, SRC_TOL[2]),
    ];
    for (m, want, tol) in src {
        let got = m.phi(eval.psi_s[1], eval.psi_s[0]).unwrap();
        let name = format!("exp1 source {} window", m.name());
        gate.check(
            &name,
            (got - want).abs() <= tol,
            format!("{got:.3} vs {want} +- {tol}"),
        );
    }

    Exp1Final {
        beta0: [c0, k.s, -k.s, k.s, k.s],
        beta1: [b1c, w, -w, w, w],
        nu_t: [t, -t, t, t],
    }
}

// ---------------------------------------------------------------------------
// Quasi-Monte Carlo machinery for part B: Halton points mapped through the
// normal quantile give deterministic, noise-free integrals over N(nu, I).

struct Quasi {
    z: Vec<[f64; 4]>,
}

fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

impl Quasi {
    fn new(m: usize) -> Quasi {
        let norm = Normal::new(0.0, 1.0).unwrap();
        let bases = [2u64, 3, 5, 7];
        let z = (1..=m as u64)
            .map(|i| {
                let mut row = [0.0; 4];
                for (d, &b) in bases.iter().enumerate() {
                    row[d] = norm.inverse_cdf(halton(i, b));
                }
                row
            })
            .collect();
        Quasi { z }
    }

    /// E[f(V)] with V = (1, X), X ~ N(nu, I_4).
    fn mean(&self, nu: &[f64; 4], f: impl Fn(&[f64; 5]) -> f64) -> f64 {
        let mut acc = 0.0;
        for zr in &self.z {
            let v = [
                1.0,
                nu[0] + zr[0],
                nu[1] + zr[1],
                nu[2] + zr[2],
                nu[3] + zr[3],
            ];
            acc += f(&v);
        }
        acc / self.z.len() as f64
    }
}

fn dot5(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Large-sample limit of a logistic fit of `target(V)` over X ~ N(nu, I):
/// Newton on the population score E[V (sigma(V'b) - target(V))] = 0.
fn logistic_projection(
    q: &Quasi,
    nu: &[f64; 4],
    target: impl Fn(&[f64; 5]) -> f64,
    init: [f64; 5],
) -> [f64; 5] {
    let mut b = DVector::from_row_slice(&init);
    for _ in 0..60 {
        let mut g = DVector::zeros(5);
        let mut h = DMatrix::zeros(5, 5);
        for zr in &q.z {
            let v = [1.0, nu[0] + zr[0], nu[1] + zr[1], nu[2] + zr[2], nu[3] + zr[3]];
            let eta: f64 = (0..5).map(|i| v[i] * b[i]).sum();
            let p = sigmoid(eta);
            let resid = p - target(&v);
            let wgt = p * (1.0 - p);
            for i in 0..5 {
                g[i] += v[i] * resid;
                for j in 0..5 {
                    h[(i, j)] += v[i] * v[j] * wgt;
                }
            }
        }
        let m = q.z.len() as f64;
        g /= m;
        h /= m;
        let step = h.lu().solve(&g).expect("singular projection Hessian");
        b -= &step;
        if g.amax() < 1e-13 {
            break;
        }
    }
    [b[0], b[1], b[2], b[3], b[4]]
}

// ---------------------------------------------------------------------------
// Part B: the shifted-outcome designs.

struct RdFinal {
    beta0: [f64; 5],
    beta1: [f64; 5],
    theta: [f64; 5],
    nu_t: [f64; 4],
}

fn part_b_rd(gate: &mut Gate) -> RdFinal {
    println!("== part B.1: exp2_rd analytic audit ==");
    // Linear design: Y(a) = V'beta_a (+ theta on the target) + noise, so the
    // fitted and limiting surfaces are exact and everything is arithmetic.
    let beta0 = [-2.15, 0.3, 0.5, -0.7, 0.4];
    let beta1 = [-3.23, 0.9, -0.4, 1.1, 0.5];
    let theta = [0.5, 0.5, -0.3, 0.6, 0.2];
    let nu_t = [0.3, 0.3, 0.3, 0.3];
    let vbar = [1.0, nu_t[0], nu_t[1], nu_t[2], nu_t[3]];

    let star = [dot5(&beta0, &vbar), dot5(&beta1, &vbar)];
    let shift = dot5(&theta, &vbar);
    let truth = [star[0] + shift, star[1] + shift];
    println!(
        "  limits ({:.3}, {:.3})  truths ({:.3}, {:.3})  shared shift {:.3}",
        star[0], star[1], truth[0], truth[1], shift
    );

    let rd_gap = (star[1] - star[0]) - (truth[1] - truth[0]);
    gate.check(
        "exp2_rd RD transports exactly",
        rd_gap.abs() < 1e-12,
        format!("limit-truth gap {rd_gap:.2e}"),
    );
    let rr_gap = (star[1] / star[0] - truth[1] / truth[0]).abs();
    gate.check(
        "exp2_rd RR limit separated",
        rr_gap >= 0.1,
        format!("gap {rr_gap:.3} (need >= 0.1)"),
    );
    let or_of = |p1: f64, p0: f64| (p1 / (1.0 - p1)) / (p0 / (1.0 - p0));
    let or_gap = (or_of(star[1], star[0]) - or_of(truth[1], truth[0])).abs();
    gate.check(
        "exp2_rd OR limit separated",
        or_gap >= 0.05,
        format!("gap {or_gap:.3} (need >= 0.05)"),
    );
    let pole = star
        .iter()
        .chain(&truth)
        .map(|&p| p.abs().min((1.0 - p).abs()))
        .fold(f64::INFINITY, f64::min);
    gate.check(
        "exp2_rd poles kept far",
        pole >= 0.5,
        format!("min distance of arm means to {{0, 1}} = {pole:.2}"),
    );

    RdFinal {
        beta0,
        beta1,
        theta,
        nu_t,
    }
}

#[derive(Clone)]
struct BinCand {
    beta_s: [f64; 5],
    beta_t: [f64; 5],
    gamma: [f64; 5],
    nu_t: f64,
}

struct BinAudit {
    cand: BinCand,
    psi3: [f64; 2],
    truth: [f64; 2],
    tau3: f64,
    tau_true: f64,
    bias_gt: f64,
    bias_ee: f64,
    score: f64,
}

/// Tolerated large-sample projection bias for the effect-scale estimators
/// and the separation demanded of the mean-scale limits. Yardsticks from
/// the benchmark replay: the effect-scale estimators run at mc_se ~ 0.0035
/// (risk-ratio scale), so 0.0015 of projection bias spends well under half
/// of their 3-mc_se envelope; the weighting estimator runs at mc_se ~ 0.004
/// on that scale and ~ 0.024 on the odds-ratio scale, so the separation
/// floors sit near 8 of its mc_se. Finite-sample curvature is invisible to
/// these limits, which is what the empirical audition is for.
const TOL_PROJ: f64 = 0.0015;
const GAP_RR_MIN: f64 = 0.030;
const GAP_OR_MIN: f64 = 0.22;

fn eval_rr(cand: &BinCand, q: &Quasi) -> Option<BinAudit> {
    let BinCand {
        beta_s,
        beta_t,
        gamma,
        ..
    } = cand;
    let nu_s = [0.0; 4];
    let nu_t = [cand.nu_t; 4];
    let p1_src = |v: &[f64; 5]| sigmoid(dot5(beta_s, v)) * sigmoid(dot5(gamma, v));
    let mut init = *beta_s;
    for i in 0..5 {
        init[i] += gamma[i];
    }
    let bstar = logistic_projection(q, &nu_s, p1_src, init);

    // Target-side functionals. tau* is the fitted relative risk surface in
    // its large-sample limit; arm 0 fits are exactly specified.
    let d = q.mean(&nu_t, |v| sigmoid(dot5(beta_t, v)));
    let psi1_true = q.mean(&nu_t, |v| sigmoid(dot5(beta_t, v)) * sigmoid(dot5(gamma, v)));
    let gt_num = q.mean(&nu_t, |v| {
        sigmoid(dot5(&bstar, v)) / sigmoid(dot5(beta_s, v)) * sigmoid(dot5(beta_t, v))
    });
    let ee_num = q.mean(&nu_t, |v| {
        let tau_star = sigmoid(dot5(&bstar, v)) / sigmoid(dot5(beta_s, v));
        (tau_star - sigmoid(dot5(gamma, v))) * (sigmoid(dot5(beta_t, v)) - sigmoid(dot5(beta_s, v)))
    });
    let bias_gt = (gt_num - psi1_true) / d;
    let bias_ee = ee_num / d;

    let s0 = q.mean(&nu_t, |v| sigmoid(dot5(beta_s, v)));
    let s1 = q.mean(&nu_t, |v| p1_src(v));
    let tau3 = s1 / s0;
    let tau_true = psi1_true / d;
    let gap = (tau3 - tau_true).abs();

    let pole = [s0, s1, d, psi1_true]
        .iter()
        .map(|&p| p.min(1.0 - p))
        .fold(f64::INFINITY, f64::min);
    if pole < 0.10 {
        return None;
    }
    let score = (TOL_PROJ / bias_gt.abs())
        .min(TOL_PROJ / bias_ee.abs())
        .min(gap / GAP_RR_MIN)
        .min(pole / 0.10);
    Some(BinAudit {
        cand: cand.clone(),
        psi3: [s0, s1],
        truth: [d, psi1_true],
        tau3,
        tau_true,
        bias_gt,
        bias_ee,
        score,
    })
}

/// One quick benchmark-sized study of an exp2_rr candidate at an
/// off-benchmark seed, returning |bias|/mc_se for the weakest mean-scale
/// estimator and for each effect-scale estimator.
fn rr_trial(cand: &BinCand) -> (f64, [f64; 4]) {
    let text = format!(
        "[exp2_rr]\nnu_t = {}\ntarget_controls = true\nbeta_s = {}\nbeta_t = {}\ngamma = {}\n",
        fmt_vec(&[cand.nu_t; 4]),
        fmt_vec(&cand.beta_s),
        fmt_vec(&cand.beta_t),
        fmt_vec(&cand.gamma)
    );
    let spec = DgpSpec::from_toml(&text, DgpName::Exp2Rr).expect("candidate table parses");
    let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
    cfg.estimators = vec![EstimatorId::Wht];
    cfg.estimators.extend(effect_battery());
    cfg.measures = vec![Measure::Rr];
    cfg.seed = 977;
    cfg.effect_os_at_ee = true;
    let rep = run_study(&spec, &cfg).expect("candidate study runs");
    let t = |est: &str| {
        let row = rep.row(est, Measure::Rr).unwrap();
        row.bias.abs() / row.mc_se
    };
    (
        t("wht"),
        [
            t("effect/gamma_transported"),
            t("effect/gamma_weighted"),
            t("effect/ee"),
            t("effect/os@ee"),
        ],
    )
}

fn part_b_rr(q: &Quasi, gate: &mut Gate) -> BinCand {
    println!("== part B.2: exp2_rr candidate screen ==");
    let bases = [
        [-0.35, 0.22, -0.18, 0.16, 0.20],
        [-0.50, 0.30, -0.24, 0.20, 0.26],
    ];
    let shifts = [
        [0.45, 0.85, -0.65, 0.60, -0.25],
        [0.60, 1.10, -0.85, 0.75, -0.30],
    ];
    let gammas = [
        [1.00, 0.30, -0.24, 0.27, 0.24],
        [1.00, 0.42, -0.33, 0.38, 0.33],
        [1.20, 0.24, -0.19, 0.21, 0.19],
    ];
    let mut cands = Vec::new();
    for bs in bases {
        for sh in shifts {
            for scale in [1.0, 1.4, 1.8] {
                for ga in gammas {
                    for nu in [0.30, 0.20, 0.15] {
                        let mut bt = bs;
                        for i in 0..5 {
                            bt[i] += scale * sh[i];
                        }
                        cands.push(BinCand {
                            beta_s: bs,
                            beta_t: bt,
                            gamma: ga,
                            nu_t: nu,
                        });
                    }
                }
            }
        }
    }

    let mut audits: Vec<BinAudit> = cands.iter().filter_map(|c| eval_rr(c, q)).collect();
    audits.sort_by(|a, b| b.score.total_cmp(&a.score));
    for a in audits.iter().take(8) {
        println!(
            "    score {:6.2}  nu {:.2}  RR limit {:.3} truth {:.3}  proj bias gt {:+.5} ee {:+.5}  arms3 ({:.3}, {:.3}) truth ({:.3}, {:.3})",
            a.score,
            a.cand.nu_t,
            a.tau3,
            a.tau_true,
            a.bias_gt,
            a.bias_ee,
            a.psi3[0],
            a.psi3[1],
            a.truth[0],
            a.truth[1]
        );
    }

    // The analytic screen cannot see the finite-sample curvature of the
    // fitted ratio surfaces, so audition the top candidates empirically at
    // an off-benchmark seed and keep the first that shows both a solid
    // mean-scale drift and quiet effect-scale estimators.
    let mut win: Option<&BinAudit> = None;
    let mut auditioned = 0usize;
    for a in audits.iter().take(3) {
        auditioned += 1;
        let (wht_t, eff_t) = rr_trial(&a.cand);
        let worst_eff = eff_t.iter().fold(0.0f64, |m, &t| m.max(t));
        println!(
            "    audition: score {:.2} -> wht t {:.1}, effect t ({:.2}, {:.2}, {:.2}, {:.2})",
            a.score, wht_t, eff_t[0], eff_t[1], eff_t[2], eff_t[3]
        );
        if wht_t >= 6.5 && worst_eff <= 2.0 {
            win = Some(a);
            break;
        }
    }
    gate.check(
        "exp2_rr audition found a quiet candidate",
        win.is_some(),
        format!("{auditioned} auditioned (need wht t >= 6.5, effect t <= 2.0)"),
    );
    let win = win.unwrap_or_else(|| {
        audits.first().expect("no admissible exp2_rr candidate")
    });
    gate.check(
        "exp2_rr effect-scale projection bias",
        win.bias_gt.abs() <= TOL_PROJ && win.bias_ee.abs() <= TOL_PROJ,
        format!(
            "gt {:+.5}, ee {:+.5} (|.| <= {TOL_PROJ})",
            win.bias_gt, win.bias_ee
        ),
    );
    gate.check(
        "exp2_rr mean-scale RR limit separated",
        (win.tau3 - win.tau_true).abs() >= GAP_RR_MIN,
        format!(
            "gap {:.3} (need >= {GAP_RR_MIN})",
            (win.tau3 - win.tau_true).abs()
        ),
    );
    win.cand.clone()
}

fn part_b_or(q: &Quasi, gate: &mut Gate) -> BinCand {
    println!("== part B.3: exp2_or candidate screen ==");
    // Both arms are exactly logistic here, so the effect-scale estimators
    // have zero projection bias by construction; the screen only needs the
    // mean-scale OR limit separated and the arm means pole-safe.
    let cands = [
        BinCand {
            beta_s: [-0.30, 0.50, -0.40, 0.30, 0.60],
            beta_t: [0.10, 1.10, -0.40, -0.20, 0.90],
            gamma: [0.70, 0.35, -0.25, 0.45, -0.30],
            nu_t: 0.3,
        },
        BinCand {
            beta_s: [-0.30, 0.50, -0.40, 0.30, 0.60],
            beta_t: [0.25, 1.35, -0.30, -0.45, 1.05],
            gamma: [0.80, 0.50, -0.40, 0.55, -0.35],
            nu_t: 0.3,
        },
        BinCand {
            beta_s: [-0.35, 0.45, -0.35, 0.30, 0.50],
            beta_t: [0.20, 1.30, -0.25, -0.50, 1.00],
            gamma: [0.75, 0.55, -0.45, 0.60, -0.40],
            nu_t: 0.3,
        },
        BinCand {
            beta_s: [-0.30, 0.50, -0.40, 0.30, 0.60],
            beta_t: [0.35, 1.50, -0.20, -0.60, 1.15],
            gamma: [0.80, 0.50, -0.40, 0.55, -0.35],
            nu_t: 0.3,
        },
    ];
    let nu_t = [0.3; 4];
    let or_of = |p1: f64, p0: f64| (p1 / (1.0 - p1)) / (p0 / (1.0 - p0));

    let mut best: Option<(f64, BinCand, String)> = None;
    for c in &cands {
        let arm = |beta: &[f64; 5], a: usize| {
            q.mean(&nu_t, |v| {
                sigmoid(dot5(beta, v) + a as f64 * dot5(&c.gamma, v))
            })
        };
        let s = [arm(&c.beta_s, 0), arm(&c.beta_s, 1)];
        let t = [arm(&c.beta_t, 0), arm(&c.beta_t, 1)];
        let gap = (or_of(s[1], s[0]) - or_of(t[1], t[0])).abs();
        let pole = s
            .iter()
            .chain(&t)
            .map(|&p| p.min(1.0 - p))
            .fold(f64::INFINITY, f64::min);
        let line = format!(
            "OR limit {:.3} truth {:.3} gap {:.3}  arms3 ({:.3}, {:.3}) truth ({:.3}, {:.3}) pole {:.3}",
            or_of(s[1], s[0]),
            or_of(t[1], t[0]),
            gap,
            s[0],
            s[1],
            t[0],
            t[1],
            pole
        );
        println!("    {line}");
        if pole < 0.15 {
            continue;
        }
        let score = (gap / GAP_OR_MIN).min(pole / 0.15);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, c.clone(), line));
        }
    }
    let (_, win, line) = best.expect("no admissible exp2_or candidate");
    // Sanity: the treated-arm logistic projection recovers beta_s + gamma.
    let p1 = |v: &[f64; 5]| sigmoid(dot5(&win.beta_s, v) + dot5(&win.gamma, v));
    let mut truth = win.beta_s;
    for i in 0..5 {
        truth[i] += win.gamma[i];
    }
    let bstar = logistic_projection(q, &[0.0; 4], p1, [0.0; 5]);
    let err = bstar
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    gate.check(
        "exp2_or treated-arm fit exactly specified",
        err < 1e-6,
        format!("max coefficient error {err:.2e}"),
    );
    let gap_ok = line.contains("gap");
    let gap_val: f64 = {
        let s = [
            q.mean(&nu_t, |v| sigmoid(dot5(&win.beta_s, v))),
            q.mean(&nu_t, |v| sigmoid(dot5(&win.beta_s, v) + dot5(&win.gamma, v))),
        ];
        let t = [
            q.mean(&nu_t, |v| sigmoid(dot5(&win.beta_t, v))),
            q.mean(&nu_t, |v| sigmoid(dot5(&win.beta_t, v) + dot5(&win.gamma, v))),
        ];
        (or_of(s[1], s[0]) - or_of(t[1], t[0])).abs()
    };
    gate.check(
        "exp2_or mean-scale OR limit separated",
        gap_ok && gap_val >= GAP_OR_MIN,
        format!("gap {gap_val:.3} (need >= {GAP_OR_MIN})"),
    );
    win
}

// ---------------------------------------------------------------------------
// Part C: the linear design's target shift.

fn part_c(gate: &mut Gate) -> [f64; 4] {
    println!("== part C: appE_linear minimum-norm shift ==");
    // Slopes of the two arm surfaces; the shift nu_t is the minimum-norm
    // solution of B nu = y with round arm-mean displacements y.
    let b = DMatrix::from_row_slice(2, 4, &[1.2, 1.1, 3.3, -0.6, -0.6, 0.6, 1.7, 0.3]);
    let y = DVector::from_row_slice(&[-1.5, -1.3]);
    let gram = &b * b.transpose();
    let nu = b.transpose() * gram.lu().solve(&y).expect("singular Gram matrix");
    let nu_r: Vec<f64> = nu.iter().map(|&x| round_to(x, 3)).collect();
    let achieved = &b * DVector::from_row_slice(&nu_r);
    println!(
        "  nu_t = [{:.3}, {:.3}, {:.3}, {:.3}]  achieved shifts ({:.4}, {:.4})",
        nu_r[0], nu_r[1], nu_r[2], nu_r[3], achieved[0], achieved[1]
    );
    let err = (achieved[0] - y[0]).abs().max((achieved[1] - y[1]).abs());
    gate.check(
        "appE rounded shift still hits the round targets",
        err <= 0.002,
        format!("max displacement error {err:.4}"),
    );
    // Implied target truths: intercepts 0.5 and -0.2 plus the displacements.
    let psi = [-0.2 + achieved[1], 0.5 + achieved[0]];
    println!(
        "  target arm means ({:.3}, {:.3}): RD {:.3}, RR {:.3}, OR {:.3}",
        psi[0],
        psi[1],
        psi[1] - psi[0],
        psi[1] / psi[0],
        (psi[1] / (1.0 - psi[1])) / (psi[0] / (1.0 - psi[0]))
    );
    [nu_r[0], nu_r[1], nu_r[2], nu_r[3]]
}

// ---------------------------------------------------------------------------
// Part D: replay the exact benchmark configurations on the frozen file.

fn fmt_vec(v: &[f64]) -> String {
    let mut s = String::from("[");
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        let _ = write!(s, "{x:.4}");
    }
    s.push(']');
    s
}

fn build_toml(a: &Exp1Final, rd: &RdFinal, rr: &BinCand, or: &BinCand, nu_appe: &[f64; 4]) -> String {
    format!(
        r#"# Shipped coefficients for the synthetic designs. The model shapes are
# fixed by the generators in `simlab`; every number here is a free knob that
# was chosen, and is audited, by `cargo run --release --example calibrate`.
# Rerun that example before editing anything below.

[exp1_nonlinear]
nu_t = {exp1_nu}
target_controls = false
beta0 = {exp1_b0}
beta1 = {exp1_b1}

[exp2_rd]
nu_t = {rd_nu}
target_controls = true
sigma = 1.0
beta0 = {rd_b0}
beta1 = {rd_b1}
theta = {rd_th}

[exp2_rr]
nu_t = {rr_nu}
target_controls = true
beta_s = {rr_bs}
beta_t = {rr_bt}
gamma = {rr_ga}

[exp2_or]
nu_t = {or_nu}
target_controls = true
beta_s = {or_bs}
beta_t = {or_bt}
gamma = {or_ga}

[appE_linear]
nu_t = {ae_nu}
target_controls = false
sigma = 1.0
beta0 = {ae_b0}
beta1 = {ae_b1}
"#,
        exp1_nu = fmt_vec(&a.nu_t),
        exp1_b0 = fmt_vec(&a.beta0),
        exp1_b1 = fmt_vec(&a.beta1),
        rd_nu = fmt_vec(&rd.nu_t),
        rd_b0 = fmt_vec(&rd.beta0),
        rd_b1 = fmt_vec(&rd.beta1),
        rd_th = fmt_vec(&rd.theta),
        rr_nu = fmt_vec(&[rr.nu_t; 4]),
        or_nu = fmt_vec(&[or.nu_t; 4]),
        rr_bs = fmt_vec(&rr.beta_s),
        rr_bt = fmt_vec(&rr.beta_t),
        rr_ga = fmt_vec(&rr.gamma),
        or_bs = fmt_vec(&or.beta_s),
        or_bt = fmt_vec(&or.beta_t),
        or_ga = fmt_vec(&or.gamma),
        ae_nu = fmt_vec(nu_appe),
        ae_b0 = fmt_vec(&[-0.2, -0.6, 0.6, 1.7, 0.3]),
        ae_b1 = fmt_vec(&[0.5, 1.2, 1.1, 3.3, -0.6]),
    )
}

fn mean_battery() -> Vec<EstimatorId> {
    vec![
        EstimatorId::Wht,
        EstimatorId::Neyman,
        EstimatorId::GWeighted,
        EstimatorId::GTransported,
        EstimatorId::Ee,
        EstimatorId::OneStep,
    ]
}

fn effect_battery() -> Vec<EstimatorId> {
    vec![
        EstimatorId::EffectGammaTransported,
        EstimatorId::EffectGammaWeighted,
        EstimatorId::EffectEe,
    ]
}

fn run(spec: &DgpSpec, cfg: &StudyConfig, what: &str) -> SimulationReport {
    let t0 = std::time::Instant::now();
    let rep = run_study(spec, cfg).unwrap_or_else(|e| panic!("{what} study failed: {e}"));
    println!("  [{what}] n {} x {} reps in {:.1?}", cfg.n, cfg.reps, t0.elapsed());
    rep
}

fn assert_unbiased(gate: &mut Gate, rep: &SimulationReport, tag: &str, est: &str, m: Measure) {
    let row = rep
        .row(est, m)
        .unwrap_or_else(|| panic!("{tag}: missing row {est}/{}", m.name()));
    let ratio = row.bias.abs() / row.mc_se;
    let name = format!("{tag} {est}/{} unbiased", m.name());
    gate.check(
        &name,
        ratio < 3.0,
        format!("|bias| {:.4} = {:.2} x mc_se (< 3)", row.bias.abs(), ratio),
    );
}

fn assert_biased(gate: &mut Gate, rep: &SimulationReport, tag: &str, est: &str, m: Measure) {
    let row = rep
        .row(est, m)
        .unwrap_or_else(|| panic!("{tag}: missing row {est}/{}", m.name()));
    let ratio = row.bias.abs() / row.mc_se;
    let name = format!("{tag} {est}/{} biased", m.name());
    gate.check(
        &name,
        ratio > 5.0,
        format!("|bias| {:.4} = {:.2} x mc_se (> 5)", row.bias.abs(), ratio),
    );
}

fn part_d(toml_text: &str, gate: &mut Gate) {
    println!("== part D: benchmark replay on the frozen file ==");
    let spec = |n: DgpName| DgpSpec::from_toml(toml_text, n).expect("frozen file parses");
    let exp1 = spec(DgpName::Exp1Nonlinear);
    let exp2_rd = spec(DgpName::Exp2Rd);
    let exp2_rr = spec(DgpName::Exp2Rr);
    let exp2_or = spec(DgpName::Exp2Or);
    let appe = spec(DgpName::AppELinear);
    let rdrror = vec![Measure::Rd, Measure::Rr, Measure::Or];
    let mut idents = Vec::new();

    // Linear benchmark: every mean-scale estimator unbiased on all three
    // scales, and the regression estimators no noisier than weighting.
    let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
    cfg.measures = rdrror.clone();
    cfg.seed = 301;
    let rep = run(&appe, &cfg, "appE battery");
    for id in mean_battery() {
        for &m in &rdrror {
            assert_unbiased(gate, &rep, "appE", id.name(), m);
        }
    }
    let sd = |est: &str| rep.row(est, Measure::Rd).unwrap().sd;
    let (s_w, s_g, s_t) = (sd("wht"), sd("g_weighted"), sd("g_transported"));
    gate.check(
        "appE variance ordering tG <= wG <= wht",
        s_t * s_t <= s_g * s_g * 1.05 && s_g * s_g <= s_w * s_w * 1.05,
        format!("sd: tG {s_t:.4} wG {s_g:.4} wht {s_w:.4} (5% slack on variances)"),
    );
    println!(
        "    info: neyman/wht RD sd ratio {:.3}",
        sd("neyman") / s_w
    );
    idents.push(rep.identities.clone().unwrap());

    // Nonlinear benchmark: least-squares surfaces only, so the regression
    // estimators and the ratio-scale one-steps drift while the augmented
    // estimator stays centered on every scale.
    let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
    cfg.measures = rdrror.clone();
    cfg.seed = 401;
    cfg.plan.options = NuisanceOptions {
        link: Some(Link::Identity),
        ..NuisanceOptions::default()
    };
    let rep = run(&exp1, &cfg, "exp1 battery");
    for &m in &rdrror {
        assert_unbiased(gate, &rep, "exp1", "ee", m);
        assert_biased(gate, &rep, "exp1", "g_transported", m);
        assert_biased(gate, &rep, "exp1", "g_weighted", m);
        let tg = rep.row("g_transported", m).unwrap().bias;
        let wg = rep.row("g_weighted", m).unwrap().bias;
        let name = format!("exp1 regression biases share a sign on {}", m.name());
        gate.check(
            &name,
            tg.signum() == wg.signum(),
            format!("tG {tg:+.4}, wG {wg:+.4}"),
        );
    }
    assert_unbiased(gate, &rep, "exp1", "one_step", Measure::Rd);
    assert_biased(gate, &rep, "exp1", "one_step", Measure::Rr);
    assert_biased(gate, &rep, "exp1", "one_step", Measure::Or);
    let src = [
        (Measure::Rd, SRC_RD, 0.05),
        (Measure::Rr, SRC_RR, 0.2),
        (Measure::Or, SRC_OR, 0.8),
    ];
    for (m, want, tol) in src {
        let got = rep.truth_for(m).unwrap().tau_source;
        let name = format!("exp1 source {} near its nominal value", m.name());
        gate.check(
            &name,
            (got - want).abs() <= tol,
            format!("{got:.3} vs {want} +- {tol}"),
        );
    }
    let sdr = |est: &str, m: Measure| {
        rep.row(est, m).unwrap().sd / rep.row("wht", m).unwrap().sd
    };
    println!(
        "    info: sd ratios to weighting: neyman RD {:.3}; ee RD {:.3} RR {:.3} OR {:.3}; one-step RR {:.3} OR {:.3}",
        sdr("neyman", Measure::Rd),
        sdr("ee", Measure::Rd),
        sdr("ee", Measure::Rr),
        sdr("ee", Measure::Or),
        sdr("one_step", Measure::Rr),
        sdr("one_step", Measure::Or),
    );
    idents.push(rep.identities.clone().unwrap());

    // Shifted linear design: the RD transports, the ratio scales do not, and
    // the effect-scale estimators recover the RD.
    let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
    cfg.measures = rdrror.clone();
    cfg.seed = 501;
    let rep = run(&exp2_rd, &cfg, "exp2_rd mean battery");
    for id in mean_battery() {
        assert_unbiased(gate, &rep, "exp2_rd", id.name(), Measure::Rd);
        assert_biased(gate, &rep, "exp2_rd", id.name(), Measure::Rr);
        assert_biased(gate, &rep, "exp2_rd", id.name(), Measure::Or);
    }
    idents.push(rep.identities.clone().unwrap());

    let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
    cfg.estimators = effect_battery();
    cfg.measures = vec![Measure::Rd];
    cfg.seed = 511;
    cfg.effect_os_at_ee = true;
    let rep = run(&exp2_rd, &cfg, "exp2_rd effect battery");
    for est in [
        "effect/gamma_transported",
        "effect/gamma_weighted",
        "effect/ee",
        "effect/os@ee",
    ] {
        assert_unbiased(gate, &rep, "exp2_rd", est, Measure::Rd);
    }
    idents.push(rep.identities.clone().unwrap());

    // Shifted binary designs: one per transporting scale.
    for (spec, m, seed, tag) in [
        (&exp2_rr, Measure::Rr, 502u64, "exp2_rr"),
        (&exp2_or, Measure::Or, 503u64, "exp2_or"),
    ] {
        let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
        cfg.estimators = mean_battery();
        cfg.estimators.extend(effect_battery());
        cfg.measures = vec![m];
        cfg.seed = seed;
        cfg.effect_os_at_ee = true;
        let rep = run(spec, &cfg, &format!("{tag} battery"));
        for id in mean_battery() {
            assert_biased(gate, &rep, tag, id.name(), m);
        }
        for est in [
            "effect/gamma_transported",
            "effect/gamma_weighted",
            "effect/ee",
            "effect/os@ee",
        ] {
            assert_unbiased(gate, &rep, tag, est, m);
        }
        idents.push(rep.identities.clone().unwrap());
    }

    // Oracle-component runs: the augmented estimator stays centered when
    // either nuisance is handed the truth and the other is degenerate.
    for (outcome, ratio, seed, tag) in [
        (OutcomePlan::Zero, RatioPlan::Oracle, 601u64, "zero outcome + oracle ratio"),
        (OutcomePlan::Oracle, RatioPlan::One, 602u64, "oracle outcome + unit ratio"),
    ] {
        let mut cfg = StudyConfig::new(N_BENCH, R_BENCH as usize);
        cfg.estimators = vec![EstimatorId::Ee];
        cfg.measures = rdrror.clone();
        cfg.seed = seed;
        cfg.plan = NuisancePlan {
            outcome,
            ratio,
            options: NuisanceOptions::default(),
        };
        let rep = run(&exp1, &cfg, tag);
        for &m in &rdrror {
            assert_unbiased(gate, &rep, tag, "ee", m);
        }
        idents.push(rep.identities.clone().unwrap());
        if seed == 601 {
            let json_first = rep.to_json();
            let rep2 = run_study(&exp1, &cfg).unwrap();
            gate.check(
                "repeated study byte-identical",
                rep2.to_json() == json_first,
                format!("{} bytes", json_first.len()),
            );
        }
    }

    // Interval benchmark: reported standard errors track the spread and the
    // intervals cover.
    let mut cfg = StudyConfig::new(10_000, 1_000);
    cfg.measures = vec![Measure::Rd];
    cfg.seed = 801;
    let rep = run(&appe, &cfg, "appE interval battery");
    for (est, label) in [("wht", "oracle"), ("g_transported", "sandwich")] {
        let row = rep.row(est, Measure::Rd).unwrap();
        let ratio = row.mean_se.unwrap() / row.sd;
        let name = format!("appE {label} SE tracks the spread ({est})");
        gate.check(
            &name,
            (0.85..=1.15).contains(&ratio),
            format!("mean SE / MC sd = {ratio:.3}"),
        );
    }
    let cov = rep.row("g_transported", Measure::Rd).unwrap().coverage.unwrap();
    gate.check(
        "appE sandwich intervals cover",
        (0.925..=0.975).contains(&cov),
        format!("coverage {cov:.3}"),
    );
    for est in ["wht", "neyman", "g_weighted", "ee"] {
        let row = rep.row(est, Measure::Rd).unwrap();
        println!(
            "    info: {est} coverage {:.3}, mean SE / sd {:.3}",
            row.coverage.unwrap(),
            row.mean_se.unwrap() / row.sd
        );
    }
    idents.push(rep.identities.clone().unwrap());

    // Estimating-equation identities across every study above.
    let worst_eif = idents.iter().map(|i| i.max_abs_mean_eif).fold(0.0, f64::max);
    let worst_rd = idents
        .iter()
        .filter_map(|i| i.max_one_step_rd_gap)
        .fold(0.0, f64::max);
    let worst_os = idents
        .iter()
        .filter_map(|i| i.max_effect_os_ee_gap)
        .fold(0.0, f64::max);
    gate.check(
        "score mean vanishes at the fitted arm means",
        worst_eif < 1e-10,
        format!("worst |mean| {worst_eif:.2e}"),
    );
    gate.check(
        "one-step equals the estimating equation on RD",
        worst_rd < 1e-12,
        format!("worst gap {worst_rd:.2e}"),
    );
    gate.check(
        "effect one-step at the EE root is the EE",
        worst_os < 1e-12,
        format!("worst gap {worst_os:.2e}"),
    );
}

fn main() {
    let t0 = std::time::Instant::now();
    let mut gate = Gate::new();
    let quad = Quad::gauss_hermite(96);
    let quasi = Quasi::new(1 << 16);

    let exp1 = part_a(&quad, &mut gate);
    let rd = part_b_rd(&mut gate);
    let rr = part_b_rr(&quasi, &mut gate);
    let or = part_b_or(&quasi, &mut gate);
    let nu_appe = part_c(&mut gate);

    let toml_text = build_toml(&exp1, &rd, &rr, &or, &nu_appe);
    println!("== frozen file ==\n{toml_text}");
    std::fs::create_dir_all("target").ok();
    std::fs::write("target/calibrated_dgp.toml", &toml_text).expect("write frozen file");

    part_d(&toml_text, &mut gate);

    println!(
        "calibration: {} checks, {} failures, {:.1?} total",
        gate.checks,
        gate.failures,
        t0.elapsed()
    );
    assert_eq!(gate.failures, 0, "calibration gate failed");
}
