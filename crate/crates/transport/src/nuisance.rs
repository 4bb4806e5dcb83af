//! Nuisance-parameter estimation.
//!
//! The transport estimators consume three fitted surfaces:
//!
//! * a logistic selection model P(S=1 | X) whose odds transform gives the
//!   source-to-target density ratio `r(x) = n/(N-n) * (1-sigma)/sigma`,
//! * per-arm outcome regressions mu_a(x) on the source trial (least squares
//!   for continuous outcomes, logistic for binary ones),
//! * optionally an outcome regression mu0_T(x) on target controls.
//!
//! All design matrices prepend an intercept: V = [1, X]. Logistic models are
//! fit by Newton-Raphson with step-halving on the deviance; least squares by
//! singular value decomposition with an explicit rank check. Convergence and
//! well-posedness failures are typed errors, never silent. Optional K-fold
//! cross-fitting refits every nuisance per fold and exposes out-of-fold
//! evaluations row by row.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::data::StudyData;
use crate::error::{Error, Result};
use crate::measures::Measure;

/// Gradient max-norm below which a logistic fit counts as converged.
pub const LOGISTIC_TOL: f64 = 1e-8;
/// Newton-Raphson iteration cap.
pub const LOGISTIC_MAX_ITER: usize = 100;
/// Coefficient magnitude beyond which a still-unconverged logistic fit is
/// declared separated.
pub const SEPARATION_NORM: f64 = 50.0;
/// Selection probabilities below this floor have no usable overlap.
pub const OVERLAP_FLOOR: f64 = 1e-12;

/// Stable logistic function.
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Regression link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logit,
}

impl Link {
    pub fn parse(s: &str) -> Result<Link> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Link::Identity),
            "logit" | "logistic" => Ok(Link::Logit),
            other => Err(Error::Config(format!(
                "unknown link `{other}` (expected identity or logit)"
            ))),
        }
    }
}

/// Fitted logistic model over a design with intercept.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Coefficients, intercept first (length p+1).
    pub beta: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Final score max-norm.
    pub grad_norm: f64,
}

impl LogisticFit {
    /// sigma([1, x]' beta).
    pub fn sigma(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len() + 1, self.beta.len());
        self.beta[0]
            + x.iter()
                .zip(self.beta.iter().skip(1))
                .map(|(xi, bi)| xi * bi)
                .sum::<f64>()
    }
}

/// One fitted outcome regression surface.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    /// Coefficients, intercept first (length p+1).
    pub beta: DVector<f64>,
    pub link: Link,
}

impl OutcomeModel {
    /// Predicted mean outcome at covariate vector x.
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len() + 1, self.beta.len());
        let eta = self.beta[0]
            + x.iter()
                .zip(self.beta.iter().skip(1))
                .map(|(xi, bi)| xi * bi)
                .sum::<f64>();
        match self.link {
            Link::Identity => eta,
            Link::Logit => sigmoid(eta),
        }
    }
}

/// Per-arm outcome regressions fitted on the source trial.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    /// mu[0] is the control-arm surface, mu[1] the treated-arm surface.
    pub mu: [OutcomeModel; 2],
    pub link: Link,
}

impl OutcomeFit {
    pub fn predict(&self, arm: bool, x: &[f64]) -> f64 {
        self.mu[arm as usize].predict(x)
    }
}

/// Density ratio induced by a fitted selection model:
/// r(x) = scale * (1 - sigma(x)) / sigma(x) with scale = n / (N - n).
#[derive(Debug, Clone)]
pub struct DensityRatio {
    pub selection: LogisticFit,
    pub scale: f64,
    /// Optional symmetric clip: values outside [1/clip, clip] are truncated.
    pub clip: Option<f64>,
}

impl DensityRatio {
    pub fn new(selection: LogisticFit, n_source: usize, n_target: usize) -> DensityRatio {
        DensityRatio {
            selection,
            scale: n_source as f64 / n_target as f64,
            clip: None,
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> DensityRatio {
        self.clip = clip;
        self
    }

    /// Evaluate r at x; `row` only labels the overlap error.
    /// Returns the ratio and whether clipping fired.
    pub fn eval(&self, x: &[f64], row: usize) -> Result<(f64, bool)> {
        let sigma = self.selection.sigma(x);
        if sigma < OVERLAP_FLOOR {
            return Err(Error::Overlap {
                row,
                sigma,
                floor: OVERLAP_FLOOR,
            });
        }
        let raw = self.scale * (1.0 - sigma) / sigma;
        match self.clip {
            Some(c) => {
                let clipped = raw.clamp(1.0 / c, c);
                Ok((clipped, clipped != raw))
            }
            None => Ok((raw, false)),
        }
    }
}

/// Fit diagnostics carried into reports.
#[derive(Debug, Clone, Serialize)]
pub struct NuisanceDiagnostics {
    /// (1/n) sum of r-hat over source rows; ~1 under correct specification.
    pub ratio_self_normalization: f64,
    /// Number of density-ratio evaluations truncated by the clip.
    pub clipped: usize,
    /// 1 for a global fit, K for cross-fitting.
    pub folds: usize,
    pub selection_converged: bool,
    pub selection_iterations: usize,
    pub outcome_link: Link,
}

/// Models underlying a global fit; absent under cross-fitting, where no
/// single coefficient vector describes the per-row evaluations.
#[derive(Debug, Clone)]
pub struct NuisanceModels {
    pub selection: LogisticFit,
    pub ratio: DensityRatio,
    pub outcomes: OutcomeFit,
    pub mu0_target: Option<OutcomeModel>,
}

/// All nuisance evaluations the estimators need, cached per row.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    /// alpha-hat = n / N of the full data.
    pub alpha_hat: f64,
    /// Trial assignment probability.
    pub pi: f64,
    /// Density ratio r-hat(X_i), every row.
    pub r: Vec<f64>,
    /// Source-fitted outcome predictions mu-hat_a(X_i), every row;
    /// mu[0] control, mu[1] treated.
    pub mu: [Vec<f64>; 2],
    /// Target-control outcome predictions, every row, when fitted.
    pub mu0_target: Option<Vec<f64>>,
    /// Underlying models (global fits only).
    pub models: Option<NuisanceModels>,
    pub diagnostics: NuisanceDiagnostics,
}

impl NuisanceFit {
    /// Plug-in conditional effect tau-hat(X_i) = Phi(mu1(X_i), mu0(X_i)) for
    /// every row. Errors carry the offending covariate vector.
    pub fn cate_values(&self, d: &StudyData, m: Measure) -> Result<Vec<f64>> {
        (0..d.len())
            .map(|i| {
                m.phi(self.mu[1][i], self.mu[0][i]).map_err(|e| Error::Cate {
                    row: Some(i),
                    x: d.x_row(i),
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Options for [`fit_nuisances`].
#[derive(Debug, Clone)]
pub struct NuisanceOptions {
    /// Outcome-regression link; `None` auto-detects (logit iff every observed
    /// outcome is 0 or 1).
    pub link: Option<Link>,
    /// Symmetric density-ratio clip (values forced into [1/c, c]).
    pub ratio_clip: Option<f64>,
    /// `Some((k, seed))` enables K-fold cross-fitting.
    pub crossfit: Option<(usize, u64)>,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        NuisanceOptions {
            link: None,
            ratio_clip: None,
            crossfit: None,
        }
    }
}

/// Choose the outcome link: logit iff all observed outcomes are 0/1.
pub fn auto_link(d: &StudyData) -> Link {
    let binary = (0..d.len())
        .filter_map(|i| d.y(i))
        .all(|y| y == 0.0 || y == 1.0);
    if binary {
        Link::Logit
    } else {
        Link::Identity
    }
}

/// Design matrix [1, X] over the given rows.
fn design(d: &StudyData, rows: &[usize]) -> DMatrix<f64> {
    let p = d.n_covariates();
    DMatrix::from_fn(rows.len(), p + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            d.x()[(rows[i], j - 1)]
        }
    })
}

/// Newton-Raphson logistic MLE of `y` on a design `v` (intercept included).
///
/// Converges on the score max-norm |V'(y - sigma)|_inf < tol; declares
/// separation when coefficients run past [`SEPARATION_NORM`] while the score
/// is still above tol.
pub fn fit_logistic(
    v: &DMatrix<f64>,
    y: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    what: &'static str,
) -> Result<LogisticFit> {
    let (n, q) = v.shape();
    if n < q {
        return Err(Error::UnderDetermined { what, rows: n, cols: q });
    }
    let mut beta = DVector::zeros(q);
    let mut eta = v * &beta;
    let mut trace = Vec::with_capacity(max_iter);

    // Stable negative log-likelihood: sum ln(1 + e^eta) - y*eta.
    let nll = |eta: &DVector<f64>| -> f64 {
        eta.iter()
            .zip(y.iter())
            .map(|(&e, &yi)| e.max(0.0) + (-e.abs()).exp().ln_1p() - yi * e)
            .sum()
    };
    let mut obj = nll(&eta);

    for iter in 0..max_iter {
        let sigma = eta.map(sigmoid);
        let score = v.transpose() * (y - &sigma);
        let grad_norm = score.amax();
        trace.push(grad_norm);
        if grad_norm < tol {
            return Ok(LogisticFit {
                beta,
                converged: true,
                iterations: iter,
                grad_norm,
            });
        }
        if beta.amax() > SEPARATION_NORM {
            return Err(Error::Separation {
                what,
                beta_norm: beta.amax(),
                grad_norm,
            });
        }
        // Weighted information matrix V' diag(sigma(1-sigma)) V.
        let mut vw = v.clone();
        for i in 0..n {
            let w = sigma[i] * (1.0 - sigma[i]);
            vw.row_mut(i).scale_mut(w);
        }
        let hessian = v.transpose() * vw;
        let delta = nalgebra::Cholesky::new(hessian)
            .ok_or(Error::Singular {
                what,
                message: "singular information matrix; covariates may be collinear".into(),
            })?
            .solve(&score);
        // Step-halving keeps the deviance monotone away from the optimum.
        // Near it the objective decrease drops under the resolution of the
        // summed deviance, so small-gradient steps are taken in full, and
        // acceptance tolerates rounding noise.
        let noise = 1e-11 * obj.abs().max(1.0);
        if grad_norm < 1e-3 {
            beta += &delta;
            eta = v * &beta;
            obj = nll(&eta);
            continue;
        }
        let mut step = 1.0;
        loop {
            let candidate = &beta + step * &delta;
            let cand_eta = v * &candidate;
            let cand_obj = nll(&cand_eta);
            if cand_obj <= obj + noise || step < 1e-10 {
                beta = candidate;
                eta = cand_eta;
                obj = cand_obj;
                break;
            }
            step *= 0.5;
        }
    }
    let sigma = eta.map(sigmoid);
    let grad_norm = (v.transpose() * (y - &sigma)).amax();
    if grad_norm < tol {
        return Ok(LogisticFit {
            beta,
            converged: true,
            iterations: max_iter,
            grad_norm,
        });
    }
    if beta.amax() > SEPARATION_NORM {
        return Err(Error::Separation {
            what,
            beta_norm: beta.amax(),
            grad_norm,
        });
    }
    Err(Error::NoConvergence {
        what,
        iterations: max_iter,
        grad_norm,
        trace,
    })
}

/// Least squares of `y` on `v` via SVD, with an explicit rank check.
pub fn fit_ols(v: &DMatrix<f64>, y: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    let (n, q) = v.shape();
    if n < q {
        return Err(Error::UnderDetermined { what, rows: n, cols: q });
    }
    let svd = v.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12 * (n.max(q) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank < q {
        return Err(Error::Singular {
            what,
            message: format!("design rank {rank} < {q}; covariates may be collinear"),
        });
    }
    svd.solve(y, eps)
        .map(|b| b.column(0).into_owned())
        .map_err(|m| Error::Singular {
            what,
            message: m.to_string(),
        })
}

/// MLE of P(S=1 | X) over the pooled sample.
pub fn fit_selection_logistic(d: &StudyData, tol: f64, max_iter: usize) -> Result<LogisticFit> {
    let rows: Vec<usize> = (0..d.len()).collect();
    let v = design(d, &rows);
    let y = DVector::from_fn(d.len(), |i, _| d.source(i) as u8 as f64);
    fit_logistic(&v, &y, tol, max_iter, "selection model")
}

/// Per-arm outcome regressions among source rows.
pub fn fit_outcomes(d: &StudyData, link: Link) -> Result<OutcomeFit> {
    let fit_arm = |arm: bool| -> Result<OutcomeModel> {
        let rows: Vec<usize> = (0..d.len())
            .filter(|&i| d.source(i) && d.a(i) == Some(arm))
            .collect();
        let v = design(d, &rows);
        let y = DVector::from_fn(rows.len(), |i, _| d.y(rows[i]).unwrap());
        let what: &'static str = if arm {
            "treated-arm outcome model"
        } else {
            "control-arm outcome model"
        };
        let beta = match link {
            Link::Identity => fit_ols(&v, &y, what)?,
            Link::Logit => fit_logistic(&v, &y, LOGISTIC_TOL, LOGISTIC_MAX_ITER, what)?.beta,
        };
        Ok(OutcomeModel { beta, link })
    };
    Ok(OutcomeFit {
        mu: [fit_arm(false)?, fit_arm(true)?],
        link,
    })
}

/// Outcome regression among target controls (rows with s=0, a=0, observed y).
pub fn fit_mu0_target(d: &StudyData, link: Link) -> Result<OutcomeModel> {
    let rows: Vec<usize> = (0..d.len())
        .filter(|&i| !d.source(i) && d.a(i) == Some(false) && d.y(i).is_some())
        .collect();
    if rows.is_empty() {
        return Err(Error::Capability(
            "no target-control outcomes observed; effect-exchangeability estimators need them \
             (the mean-exchangeability estimators remain available)"
                .into(),
        ));
    }
    let v = design(d, &rows);
    let y = DVector::from_fn(rows.len(), |i, _| d.y(rows[i]).unwrap());
    let beta = match link {
        Link::Identity => fit_ols(&v, &y, "target-control outcome model")?,
        Link::Logit => {
            fit_logistic(&v, &y, LOGISTIC_TOL, LOGISTIC_MAX_ITER, "target-control outcome model")?
                .beta
        }
    };
    Ok(OutcomeModel { beta, link })
}

/// Plug-in conditional effect surface x -> Phi(mu1(x), mu0(x)).
pub fn plug_in_cate(m: Measure, mu: &OutcomeFit) -> impl Fn(&[f64]) -> Result<f64> + '_ {
    move |x: &[f64]| {
        m.phi(mu.predict(true, x), mu.predict(false, x))
            .map_err(|e| Error::Cate {
                row: None,
                x: x.to_vec(),
                source: Box::new(e),
            })
    }
}

/// Deterministic K-fold partition stratified jointly on (s, a).
///
/// Returns (train, eval) index pairs; the eval sets partition 0..N.
pub fn crossfit_split(
    d: &StudyData,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-fitting needs k >= 2, got {k}")));
    }
    // Strata: (s, a) including the no-treatment target stratum.
    let mut strata: std::collections::BTreeMap<(bool, Option<bool>), Vec<usize>> =
        std::collections::BTreeMap::new();
    for i in 0..d.len() {
        strata.entry((d.source(i), d.a(i))).or_default().push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for ((s, a), mut idx) in strata {
        if idx.len() < k {
            return Err(Error::Config(format!(
                "stratum (s={}, a={:?}) has {} rows, fewer than k={k} folds",
                s as u8,
                a.map(|b| b as u8),
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    let all: Vec<usize> = (0..d.len()).collect();
    Ok(folds
        .into_iter()
        .map(|mut eval| {
            eval.sort_unstable();
            let train: Vec<usize> = all.iter().copied().filter(|i| !eval.contains(i)).collect();
            (train, eval)
        })
        .collect())
}

/// Fit every nuisance the estimators can use, caching per-row evaluations.
///
/// With `crossfit: Some((k, seed))`, each row's cached values come from the
/// fold that held it out; the fitted coefficient vectors are then not exposed
/// (no single model generated the evaluations).
pub fn fit_nuisances(d: &StudyData, opts: &NuisanceOptions) -> Result<NuisanceFit> {
    let link = opts.link.unwrap_or_else(|| auto_link(d));
    match opts.crossfit {
        None => fit_global(d, link, opts.ratio_clip),
        Some((k, seed)) => fit_crossfit(d, link, opts.ratio_clip, k, seed),
    }
}

fn fit_global(d: &StudyData, link: Link, clip: Option<f64>) -> Result<NuisanceFit> {
    let selection = fit_selection_logistic(d, LOGISTIC_TOL, LOGISTIC_MAX_ITER)?;
    let ratio =
        DensityRatio::new(selection.clone(), d.n_source(), d.n_target()).with_clip(clip);
    let mut r = Vec::with_capacity(d.len());
    let mut clipped = 0usize;
    for i in 0..d.len() {
        let (ri, was_clipped) = ratio.eval(&d.x_row(i), i + 1)?;
        clipped += was_clipped as usize;
        r.push(ri);
    }
    let outcomes = fit_outcomes(d, link)?;
    let mu = cache_outcomes(d, &outcomes);
    let (mu0_target, mu0_model) = if d.has_target_outcomes() {
        let model = fit_mu0_target(d, link)?;
        let cache: Vec<f64> = (0..d.len()).map(|i| model.predict(&d.x_row(i))).collect();
        (Some(cache), Some(model))
    } else {
        (None, None)
    };
    let self_norm = source_mean_ratio(d, &r);
    Ok(NuisanceFit {
        alpha_hat: d.alpha_hat(),
        pi: d.pi(),
        r,
        mu,
        mu0_target,
        diagnostics: NuisanceDiagnostics {
            ratio_self_normalization: self_norm,
            clipped,
            folds: 1,
            selection_converged: selection.converged,
            selection_iterations: selection.iterations,
            outcome_link: link,
        },
        models: Some(NuisanceModels {
            selection,
            ratio,
            outcomes,
            mu0_target: mu0_model,
        }),
    })
}

fn fit_crossfit(
    d: &StudyData,
    link: Link,
    clip: Option<f64>,
    k: usize,
    seed: u64,
) -> Result<NuisanceFit> {
    let folds = crossfit_split(d, k, seed)?;
    let wants_mu0t = d.has_target_outcomes();
    let mut r = vec![f64::NAN; d.len()];
    let mut mu = [vec![f64::NAN; d.len()], vec![f64::NAN; d.len()]];
    let mut mu0_target = if wants_mu0t {
        Some(vec![f64::NAN; d.len()])
    } else {
        None
    };
    let mut clipped = 0usize;
    let mut iterations = 0usize;
    for (train, eval) in &folds {
        let sub = d.subset(train)?;
        let selection = fit_selection_logistic(&sub, LOGISTIC_TOL, LOGISTIC_MAX_ITER)?;
        iterations = iterations.max(selection.iterations);
        let ratio =
            DensityRatio::new(selection, sub.n_source(), sub.n_target()).with_clip(clip);
        let outcomes = fit_outcomes(&sub, link)?;
        let mu0_model = if wants_mu0t {
            Some(fit_mu0_target(&sub, link)?)
        } else {
            None
        };
        for &i in eval {
            let x = d.x_row(i);
            let (ri, was_clipped) = ratio.eval(&x, i + 1)?;
            clipped += was_clipped as usize;
            r[i] = ri;
            mu[0][i] = outcomes.predict(false, &x);
            mu[1][i] = outcomes.predict(true, &x);
            if let (Some(cache), Some(model)) = (mu0_target.as_mut(), mu0_model.as_ref()) {
                cache[i] = model.predict(&x);
            }
        }
    }
    let self_norm = source_mean_ratio(d, &r);
    Ok(NuisanceFit {
        alpha_hat: d.alpha_hat(),
        pi: d.pi(),
        r,
        mu,
        mu0_target,
        models: None,
        diagnostics: NuisanceDiagnostics {
            ratio_self_normalization: self_norm,
            clipped,
            folds: k,
            selection_converged: true,
            selection_iterations: iterations,
            outcome_link: link,
        },
    })
}

fn cache_outcomes(d: &StudyData, outcomes: &OutcomeFit) -> [Vec<f64>; 2] {
    let mut mu = [Vec::with_capacity(d.len()), Vec::with_capacity(d.len())];
    for i in 0..d.len() {
        let x = d.x_row(i);
        mu[0].push(outcomes.predict(false, &x));
        mu[1].push(outcomes.predict(true, &x));
    }
    mu
}

fn source_mean_ratio(d: &StudyData, r: &[f64]) -> f64 {
    let n = d.n_source() as f64;
    (0..d.len())
        .filter(|&i| d.source(i))
        .map(|i| r[i])
        .sum::<f64>()
        / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Row;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// S ~ Bernoulli(alpha) independent of X ~ N(0,1); outcomes filled in so
    /// the container validates.
    fn independent_selection_data(n_total: usize, alpha: f64, seed: u64) -> StudyData {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let rows: Vec<Row> = (0..n_total)
            .map(|_| {
                let source = rng.gen::<f64>() < alpha;
                let x: f64 = StandardNormal.sample(&mut rng);
                let a = source.then(|| rng.gen::<bool>());
                let y = a.map(|a| if a { 1.0 } else { 0.0 });
                Row {
                    source,
                    x: vec![x],
                    a,
                    y,
                }
            })
            .collect();
        StudyData::from_rows(rows, 0.5).unwrap()
    }

    #[test]
    fn independent_selection_recovers_intercept_only_mle() {
        let d = independent_selection_data(10_000, 0.3, 42);
        let fit = fit_selection_logistic(&d, LOGISTIC_TOL, LOGISTIC_MAX_ITER).unwrap();
        assert!(fit.converged);
        // Intercept-only truth: logit(alpha-hat); the slope is ~0. SEs from
        // the Fisher information of a Bernoulli(alpha) intercept model.
        let alpha = d.alpha_hat();
        let se0 = (1.0 / (d.len() as f64 * alpha * (1.0 - alpha))).sqrt();
        assert!(
            (fit.beta[0] - logit(alpha)).abs() < 3.0 * se0,
            "intercept {} vs logit(alpha-hat) {}",
            fit.beta[0],
            logit(alpha)
        );
        assert!(fit.beta[1].abs() < 3.0 * se0, "slope {}", fit.beta[1]);
        // MLE score is zero at the optimum (the fitted estimating equation).
        let rows: Vec<usize> = (0..d.len()).collect();
        let v = design(&d, &rows);
        let s = DVector::from_fn(d.len(), |i, _| d.source(i) as u8 as f64);
        let sigma = (v.clone() * &fit.beta).map(sigmoid);
        assert!((v.transpose() * (s - sigma)).amax() < LOGISTIC_TOL);
    }

    #[test]
    fn no_shift_density_ratio_is_unit() {
        // Construct the intercept-only fit directly: sigma == alpha-hat
        // makes r = n/(N-n) * (1-alpha)/alpha = 1 identically.
        let alpha = 0.4;
        let fit = LogisticFit {
            beta: DVector::from_vec(vec![logit(alpha), 0.0]),
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        };
        let ratio = DensityRatio::new(fit, 40, 60);
        let (r, clipped) = ratio.eval(&[2.5], 1).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(!clipped);
    }

    #[test]
    fn equal_distributions_self_normalize_near_one() {
        let d = independent_selection_data(10_000, 0.5, 7);
        let nf = fit_nuisances(&d, &NuisanceOptions::default()).unwrap();
        assert!(
            (nf.diagnostics.ratio_self_normalization - 1.0).abs() < 0.05,
            "self-normalization {}",
            nf.diagnostics.ratio_self_normalization
        );
    }

    #[test]
    fn overlap_error_far_outside_support() {
        // Strong positive slope: sigma(x) tiny for very negative x.
        let fit = LogisticFit {
            beta: DVector::from_vec(vec![0.0, 10.0]),
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        };
        let ratio = DensityRatio::new(fit, 50, 50);
        let err = ratio.eval(&[-5.0], 17).unwrap_err();
        match err {
            Error::Overlap { row: 17, .. } => {}
            other => panic!("expected Overlap, got {other:?}"),
        }
    }

    #[test]
    fn ratio_clip_counts_points() {
        let fit = LogisticFit {
            beta: DVector::from_vec(vec![0.0, 3.0]),
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        };
        let ratio = DensityRatio::new(fit, 50, 50).with_clip(Some(2.0));
        let (r, clipped) = ratio.eval(&[-2.0], 1).unwrap(); // raw ratio e^6 >> 2
        assert_eq!(r, 2.0);
        assert!(clipped);
        let (r, clipped) = ratio.eval(&[0.1], 2).unwrap();
        assert!(!clipped);
        assert!(r < 2.0);
    }

    #[test]
    fn separation_is_detected() {
        // Perfectly separated with narrow margins: s = 1 exactly when x > 0,
        // |x| small so the likelihood keeps improving past |beta| = 50.
        let rows: Vec<Row> = (0..40)
            .map(|i| {
                let x = if i % 2 == 0 { 0.05 } else { -0.05 } * (1.0 + (i as f64) / 40.0);
                let source = x > 0.0;
                Row {
                    source,
                    x: vec![x],
                    a: source.then(|| i % 4 == 0),
                    y: source.then(|| 1.0),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let err = fit_selection_logistic(&d, LOGISTIC_TOL, LOGISTIC_MAX_ITER).unwrap_err();
        assert!(
            matches!(err, Error::Separation { .. }),
            "expected separation, got {err:?}"
        );
    }

    #[test]
    fn duplicated_column_is_singular() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let rows: Vec<Row> = (0..200)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                let source = rng.gen::<f64>() < 0.5;
                Row {
                    source,
                    x: vec![x, x], // duplicated
                    a: source.then(|| rng.gen()),
                    y: source.then(|| rng.gen::<f64>()),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let err = fit_selection_logistic(&d, LOGISTIC_TOL, LOGISTIC_MAX_ITER).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }), "{err:?}");
    }

    #[test]
    fn ols_interpolates_noiseless_line() {
        let rows: Vec<Row> = (0..20)
            .map(|i| {
                let x = i as f64 / 10.0 - 1.0;
                let source = i < 16;
                Row {
                    source,
                    x: vec![x],
                    a: source.then(|| i % 2 == 0),
                    y: source.then(|| 2.0 + 3.0 * x),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let fit = fit_outcomes(&d, Link::Identity).unwrap();
        for arm in [false, true] {
            let beta = &fit.mu[arm as usize].beta;
            assert!((beta[0] - 2.0).abs() < 1e-8, "intercept {}", beta[0]);
            assert!((beta[1] - 3.0).abs() < 1e-8, "slope {}", beta[1]);
        }
        // Residual orthogonality |V' e| < 1e-8 N holds trivially here.
        let rows_a: Vec<usize> = (0..d.len())
            .filter(|&i| d.source(i) && d.a(i) == Some(true))
            .collect();
        let v = design(&d, &rows_a);
        let y = DVector::from_fn(rows_a.len(), |i, _| d.y(rows_a[i]).unwrap());
        let resid = y - v.clone() * &fit.mu[1].beta;
        assert!((v.transpose() * resid).amax() < 1e-8 * d.len() as f64);
    }

    #[test]
    fn ols_recovers_dense_linear_design() {
        // Linear outcome with slope vector beta1, unit noise, n = 5000.
        let beta1 = [0.5, 1.2, 1.1, 3.3, -0.6]; // intercept first
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        let mut rows: Vec<Row> = (0..5000)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
                let a: bool = rng.gen();
                let eps: f64 = StandardNormal.sample(&mut rng);
                let mean: f64 =
                    beta1[0] + x.iter().zip(&beta1[1..]).map(|(xi, b)| xi * b).sum::<f64>();
                let y = if a { mean + eps } else { eps };
                Row {
                    source: true,
                    x,
                    a: Some(a),
                    y: Some(y),
                }
            })
            .collect();
        rows.push(Row {
            source: false,
            x: vec![0.0; 4],
            a: None,
            y: None,
        });
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let fit = fit_outcomes(&d, Link::Identity).unwrap();
        // SE of each coefficient is about sigma/sqrt(n_arm) = 1/50 here.
        let se = 1.0 / (2500.0_f64).sqrt();
        for (j, truth) in beta1.iter().enumerate() {
            let est = fit.mu[1].beta[j];
            assert!(
                (est - truth).abs() < 4.0 * se,
                "coefficient {j}: {est} vs {truth}"
            );
        }
    }

    #[test]
    fn under_determined_arm_errors() {
        // Treated arm has 3 rows but p = 5.
        let rows: Vec<Row> = (0..12)
            .map(|i| {
                let source = i < 8;
                let a = source.then(|| i < 3);
                Row {
                    source,
                    x: (0..5).map(|j| ((i * 5 + j) as f64).sin()).collect(),
                    a,
                    y: a.map(|_| 1.0),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let err = fit_outcomes(&d, Link::Identity).unwrap_err();
        assert!(matches!(err, Error::UnderDetermined { .. }), "{err:?}");
    }

    #[test]
    fn mu0_target_requires_outcomes_and_fits_constants() {
        let d = independent_selection_data(200, 0.5, 5);
        let err = fit_mu0_target(&d, Link::Identity).unwrap_err();
        assert!(matches!(err, Error::Capability(_)), "{err:?}");

        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let rows: Vec<Row> = (0..100)
            .map(|i| {
                let source = i < 50;
                let x: f64 = StandardNormal.sample(&mut rng);
                if source {
                    let a = i % 2 == 0;
                    Row {
                        source,
                        x: vec![x],
                        a: Some(a),
                        y: Some(rng.gen()),
                    }
                } else {
                    Row {
                        source,
                        x: vec![x],
                        a: Some(false),
                        y: Some(0.4),
                    }
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let model = fit_mu0_target(&d, Link::Identity).unwrap();
        for x in [-2.0, 0.0, 3.0] {
            assert!((model.predict(&[x]) - 0.4).abs() < 1e-10);
        }
    }

    #[test]
    fn mu0_target_recovers_a_linear_control_surface() {
        let theta = [0.7, -0.4, 1.1];
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let n_ctl = 4000;
        let mut rows: Vec<Row> = (0..n_ctl)
            .map(|_| {
                let x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                let eps: f64 = StandardNormal.sample(&mut rng);
                let y = theta[0] + theta[1] * x[0] + theta[2] * x[1] + eps;
                Row {
                    source: false,
                    x,
                    a: Some(false),
                    y: Some(y),
                }
            })
            .collect();
        for i in 0..100 {
            rows.push(Row {
                source: true,
                x: (0..2).map(|_| StandardNormal.sample(&mut rng)).collect(),
                a: Some(i % 2 == 0),
                y: Some(rng.gen()),
            });
        }
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let model = fit_mu0_target(&d, Link::Identity).unwrap();
        let se = 1.0 / (n_ctl as f64).sqrt();
        for (j, truth) in theta.iter().enumerate() {
            let est = model.beta[j];
            assert!(
                (est - truth).abs() < 4.0 * se,
                "coefficient {j}: {est} vs {truth}"
            );
        }
    }

    #[test]
    fn logit_cate_recovers_the_shared_odds_shift() {
        // Both source arms logistic with a shared offset gamma, so the true
        // OR-scale conditional effect is exp(V'gamma) exactly.
        use crate::simlab::{generate, Design, DgpName, DgpSpec};
        let spec = DgpSpec::named(DgpName::Exp2Or);
        let gamma = match &spec.design {
            Design::Exp2Or { gamma, .. } => gamma.clone(),
            _ => unreachable!(),
        };
        let gs = generate(&spec, 200_000, 31).unwrap();
        let fit = fit_outcomes(&gs.data, Link::Logit).unwrap();
        let cate = plug_in_cate(Measure::Or, &fit);
        for x in [
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.0, -0.5, 0.5, 1.0],
            vec![-1.0, 1.0, -1.0, 0.5],
            vec![0.5, 0.5, 0.5, -1.0],
        ] {
            let want =
                (gamma[0] + x.iter().zip(&gamma[1..]).map(|(xi, g)| xi * g).sum::<f64>()).exp();
            let got = cate(&x).unwrap();
            assert!(
                (got / want).ln().abs() < 0.05,
                "at {x:?}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn cate_surface_is_null_when_arms_match() {
        let model = OutcomeModel {
            beta: DVector::from_vec(vec![0.3, 0.2]),
            link: Link::Identity,
        };
        let fit = OutcomeFit {
            mu: [model.clone(), model],
            link: Link::Identity,
        };
        let cate = plug_in_cate(Measure::Rr, &fit);
        for x in [-1.0, 0.0, 2.0] {
            assert!((cate(&[x]).unwrap() - 1.0).abs() < 1e-12);
        }
        // mu0(x) = 0 puts RR outside its domain; error carries x.
        let zero = OutcomeModel {
            beta: DVector::from_vec(vec![0.0, 0.0]),
            link: Link::Identity,
        };
        let one = OutcomeModel {
            beta: DVector::from_vec(vec![1.0, 0.0]),
            link: Link::Identity,
        };
        let fit = OutcomeFit {
            mu: [zero, one],
            link: Link::Identity,
        };
        let cate = plug_in_cate(Measure::Rr, &fit);
        match cate(&[1.5]).unwrap_err() {
            Error::Cate { row, x, source } => {
                assert_eq!(row, None);
                assert_eq!(x, vec![1.5]);
                assert!(matches!(*source, Error::Domain { .. }));
            }
            other => panic!("expected Cate error, got {other:?}"),
        }
    }

    #[test]
    fn crossfit_partitions_and_is_deterministic() {
        let d = independent_selection_data(100, 0.5, 11);
        let folds = crossfit_split(&d, 2, 99).unwrap();
        assert_eq!(folds.len(), 2);
        let mut seen: Vec<usize> = folds.iter().flat_map(|(_, e)| e.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        for (train, eval) in &folds {
            assert_eq!(train.len() + eval.len(), 100);
            assert!(train.iter().all(|i| !eval.contains(i)));
            // Training part retains both populations and both arms.
            let sub = d.subset(train).unwrap();
            assert!(sub.n_source() > 0 && sub.n_target() > 0);
        }
        let again = crossfit_split(&d, 2, 99).unwrap();
        assert_eq!(folds, again);
        let different = crossfit_split(&d, 2, 100).unwrap();
        assert_ne!(folds, different);
    }

    #[test]
    fn crossfit_small_stratum_errors() {
        let rows: Vec<Row> = (0..20)
            .map(|i| {
                let source = i >= 3; // only 3 target rows
                Row {
                    source,
                    x: vec![i as f64],
                    a: source.then(|| i % 2 == 0),
                    y: source.then(|| i as f64 * 0.1),
                }
            })
            .collect();
        let d = StudyData::from_rows(rows, 0.5).unwrap();
        let err = crossfit_split(&d, 5, 1).unwrap_err();
        assert!(err.to_string().contains("fewer than k"), "{err}");
    }

    #[test]
    fn crossfitted_nuisances_cover_every_row() {
        let d = independent_selection_data(400, 0.5, 21);
        let nf = fit_nuisances(
            &d,
            &NuisanceOptions {
                crossfit: Some((2, 7)),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(nf.models.is_none());
        assert_eq!(nf.diagnostics.folds, 2);
        for i in 0..d.len() {
            assert!(nf.r[i].is_finite() && nf.r[i] > 0.0);
            assert!(nf.mu[0][i].is_finite() && nf.mu[1][i].is_finite());
        }
    }

    #[test]
    fn auto_link_detects_binary_outcomes() {
        let d = independent_selection_data(100, 0.5, 31);
        assert_eq!(auto_link(&d), Link::Logit);
        let rows: Vec<Row> = d
            .rows()
            .enumerate()
            .map(|(i, mut r)| {
                if r.y.is_some() && i % 3 == 0 {
                    r.y = Some(0.37);
                }
                r
            })
            .collect();
        let d2 = StudyData::from_rows(rows, 0.5).unwrap();
        assert_eq!(auto_link(&d2), Link::Identity);
    }
}
