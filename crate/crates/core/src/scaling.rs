//! Wordfish: unsupervised Poisson ideal-point scaling of a document-term matrix.
//!
//! `y_ij ~ Poisson(exp(alpha_i + psi_j + beta_j * omega_i))`, fitted by
//! alternating two-parameter Newton steps. Non-integer (salience-weighted)
//! counts are accepted; the objective is then a quasi-likelihood with the
//! factorial term dropped.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vbow::DocumentTermMatrix;

const MAX_HALVINGS: usize = 40;
const INIT_JITTER: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordfishConfig {
    /// Relative change in log-likelihood that counts as converged.
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// `(left, right)` document indices; the fit is flipped so `omega[left] < omega[right]`.
    pub orientation: (usize, usize),
    /// Standard deviation of a zero-mean normal prior on each `beta_j`. `None`
    /// is plain maximum likelihood, which has no finite optimum when some terms
    /// occur in only one group of documents.
    pub beta_prior_sd: Option<f64>,
}

impl Default for WordfishConfig {
    fn default() -> Self {
        WordfishConfig {
            tol: 1e-8,
            max_iters: 500,
            seed: 0,
            orientation: (0, 1),
            beta_prior_sd: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordfishFit {
    pub documents: Vec<String>,
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    pub psi: Vec<f64>,
    pub beta: Vec<f64>,
    /// Objective per iteration. With a `beta` prior the term is included and the
    /// rescaling to `sd(omega) = 1` can lower it slightly between iterations.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub orientation: (usize, usize),
}

impl WordfishFit {
    pub fn log_likelihood(&self) -> f64 {
        self.loglik_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Expected count `exp(alpha_i + psi_j + beta_j * omega_i)`.
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        (self.alpha[i] + self.psi[j] + self.beta[j] * self.omega[i]).exp()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    alpha: Vec<f64>,
    omega: Vec<f64>,
    psi: Vec<f64>,
    beta: Vec<f64>,
}

/// Dense view of the counts, row-major.
struct Counts<'a> {
    y: &'a [f64],
    n: usize,
    m: usize,
}

impl Counts<'_> {
    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.y[i * self.m + j]
    }
}

/// Log-likelihood plus the log prior on `beta` (up to a constant) when one is set.
fn objective(c: &Counts<'_>, p: &Params, prior: Option<f64>) -> f64 {
    let penalty = prior.map_or(0.0, |sd| {
        p.beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * sd * sd)
    });
    log_likelihood(c, p) - penalty
}

fn log_likelihood(c: &Counts<'_>, p: &Params) -> f64 {
    (0..c.n)
        .map(|i| {
            (0..c.m)
                .map(|j| {
                    let eta = p.alpha[i] + p.psi[j] + p.beta[j] * p.omega[i];
                    c.get(i, j) * eta - eta.exp()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Maximizes `sum_k y_k (a + b x_k + o_k) - exp(a + b x_k + o_k) - b^2 / 2s^2`
/// over `(a, b)` with a damped Newton step; never returns a worse point.
fn newton_pair(y: &[f64], offset: &[f64], x: &[f64], a: f64, b: f64, b_prior: Option<f64>) -> (f64, f64) {
    let precision = b_prior.map_or(0.0, |sd| 1.0 / (sd * sd));
    let objective = |a: f64, b: f64| -> f64 {
        -0.5 * precision * b * b
            + y.iter()
            .zip(offset)
            .zip(x)
            .map(|((&yk, &ok), &xk)| {
                let eta = a + b * xk + ok;
                yk * eta - eta.exp()
            })
            .sum::<f64>()
    };
    let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&yk, &ok), &xk) in y.iter().zip(offset).zip(x) {
        let lam = (a + b * xk + ok).exp();
        let r = yk - lam;
        ga += r;
        gb += r * xk;
        haa += lam;
        hab += lam * xk;
        hbb += lam * xk * xk;
    }
    gb -= precision * b;
    hbb += precision;
    let det = haa * hbb - hab * hab;
    let (da, db) = if det.is_finite() && det > 1e-12 * (haa * hbb).max(f64::MIN_POSITIVE) {
        ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
    } else {
        // near-singular curvature: coordinate-wise steps
        (
            if haa > 0.0 { ga / haa } else { 0.0 },
            if hbb > 0.0 { gb / hbb } else { 0.0 },
        )
    };
    if !(da.is_finite() && db.is_finite()) {
        return (a, b);
    }
    let base = objective(a, b);
    let mut step = 1.0;
    for _ in 0..MAX_HALVINGS {
        let (na, nb) = (a + step * da, b + step * db);
        let value = objective(na, nb);
        if value.is_finite() && value >= base {
            return (na, nb);
        }
        step *= 0.5;
    }
    (a, b)
}

fn update_documents(c: &Counts<'_>, p: &mut Params) {
    let updated: Vec<(f64, f64)> = (0..c.n)
        .into_par_iter()
        .map(|i| {
            let y = &c.y[i * c.m..(i + 1) * c.m];
            newton_pair(y, &p.psi, &p.beta, p.alpha[i], p.omega[i], None)
        })
        .collect();
    for (i, (a, w)) in updated.into_iter().enumerate() {
        p.alpha[i] = a;
        p.omega[i] = w;
    }
}

fn update_terms(c: &Counts<'_>, p: &mut Params, prior: Option<f64>) {
    let updated: Vec<(f64, f64)> = (0..c.m)
        .into_par_iter()
        .map(|j| {
            let y: Vec<f64> = (0..c.n).map(|i| c.get(i, j)).collect();
            newton_pair(&y, &p.alpha, &p.omega, p.psi[j], p.beta[j], prior)
        })
        .collect();
    for (j, (s, b)) in updated.into_iter().enumerate() {
        p.psi[j] = s;
        p.beta[j] = b;
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `alpha_0 = 0`, `mean(omega) = 0`, `sd(omega) = 1`, leaving every rate unchanged.
///
/// The likelihood is also flat along `alpha_i + t omega_i, beta_j - t`; `mean(beta) = 0`
/// pins that direction so intercepts and discriminations are unique. Positions
/// do not move along it.
fn identify(p: &mut Params) {
    let (mean, sd) = mean_sd(&p.omega);
    if sd > 0.0 {
        for w in &mut p.omega {
            *w = (*w - mean) / sd;
        }
        for (s, b) in p.psi.iter_mut().zip(p.beta.iter_mut()) {
            *s += *b * mean;
            *b *= sd;
        }
    }
    // exact: `mean` of the standardized vector can carry rounding residue
    let (residual, _) = mean_sd(&p.omega);
    for w in &mut p.omega {
        *w -= residual;
    }
    for (s, b) in p.psi.iter_mut().zip(&p.beta) {
        *s += b * residual;
    }
    let t = p.beta.iter().sum::<f64>() / p.beta.len() as f64;
    for b in &mut p.beta {
        *b -= t;
    }
    for (a, w) in p.alpha.iter_mut().zip(&p.omega) {
        *a += t * w;
    }
    let a0 = p.alpha[0];
    for a in &mut p.alpha {
        *a -= a0;
    }
    for s in &mut p.psi {
        *s += a0;
    }
}

fn orient(p: &mut Params, (left, right): (usize, usize)) {
    if p.omega[left] > p.omega[right] {
        for w in &mut p.omega {
            *w = -*w;
        }
        for b in &mut p.beta {
            *b = -*b;
        }
    }
}

fn validate(dtm: &DocumentTermMatrix, config: &WordfishConfig) -> Result<()> {
    let (n, m) = (dtm.n_docs(), dtm.n_terms());
    if n < 2 || m < 2 {
        return Err(Error::DegenerateMatrix(format!(
            "need at least 2 documents and 2 terms, got {n} x {m}"
        )));
    }
    for j in 0..m {
        if (0..n).all(|i| dtm.get(i, j) == 0.0) {
            return Err(Error::DegenerateMatrix(format!("term column {j} is all zero")));
        }
    }
    if let Some(sd) = config.beta_prior_sd {
        if !(sd.is_finite() && sd > 0.0) {
            return Err(Error::InvalidInput(format!("beta prior sd must be positive, got {sd}")));
        }
    }
    let (l, r) = config.orientation;
    if l >= n || r >= n || l == r {
        return Err(Error::InvalidInput(format!(
            "orientation pair ({l}, {r}) must name two distinct documents"
        )));
    }
    Ok(())
}

/// Starting values: log row/column means for the intercepts, the leading
/// singular direction of the double-centred `log(y + 0.1)` for positions and
/// discriminations, plus seeded jitter on the positions.
fn initial_params(c: &Counts<'_>, seed: u64) -> Params {
    let (n, m) = (c.n, c.m);
    let row_mean: Vec<f64> = (0..n).map(|i| (0..m).map(|j| c.get(i, j)).sum::<f64>() / m as f64).collect();
    let col_mean: Vec<f64> = (0..m).map(|j| (0..n).map(|i| c.get(i, j)).sum::<f64>() / n as f64).collect();
    let alpha: Vec<f64> = row_mean.iter().map(|r| (r / row_mean[0]).ln()).collect();
    let psi: Vec<f64> = col_mean.iter().map(|c| c.ln()).collect();

    let logy = DMatrix::from_fn(n, m, |i, j| (c.get(i, j) + 0.1).ln());
    let rmean: Vec<f64> = (0..n).map(|i| logy.row(i).mean()).collect();
    let cmean: Vec<f64> = (0..m).map(|j| logy.column(j).mean()).collect();
    let grand = logy.mean();
    let centred = DMatrix::from_fn(n, m, |i, j| logy[(i, j)] - rmean[i] - cmean[j] + grand);
    let svd = centred.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let lead = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega: Vec<f64> = (0..n)
        .map(|i| u[(i, lead)] + rng.gen_range(-INIT_JITTER..INIT_JITTER))
        .collect();
    let (mean, sd) = mean_sd(&omega);
    let sd = if sd > 0.0 { sd } else { 1.0 };
    for w in &mut omega {
        *w = (*w - mean) / sd;
    }
    let denom: f64 = omega.iter().map(|w| w * w).sum();
    let beta = (0..m)
        .map(|j| (0..n).map(|i| centred[(i, j)] * omega[i]).sum::<f64>() / denom)
        .collect();
    Params {
        alpha,
        omega,
        psi,
        beta,
    }
}

struct Optimized {
    params: Params,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn optimize(c: &Counts<'_>, mut p: Params, config: &WordfishConfig) -> Optimized {
    identify(&mut p);
    let prior = config.beta_prior_sd;
    let mut trace = vec![objective(c, &p, prior)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        update_documents(c, &mut p);
        update_terms(c, &mut p, prior);
        identify(&mut p);
        let ll = objective(c, &p, prior);
        let prev = *trace.last().expect("trace starts non-empty");
        trace.push(ll);
        if ((ll - prev) / prev.abs().max(f64::MIN_POSITIVE)).abs() < config.tol {
            converged = true;
            break;
        }
    }
    orient(&mut p, config.orientation);
    Optimized {
        params: p,
        trace,
        converged,
        iterations,
    }
}

fn into_fit(dtm: &DocumentTermMatrix, o: Optimized, config: &WordfishConfig) -> WordfishFit {
    WordfishFit {
        documents: dtm.documents().iter().map(|d| d.id.clone()).collect(),
        omega: o.params.omega,
        alpha: o.params.alpha,
        psi: o.params.psi,
        beta: o.params.beta,
        loglik_trace: o.trace,
        converged: o.converged,
        iterations: o.iterations,
        orientation: config.orientation,
    }
}

/// Fits Wordfish. Hitting `max_iters` is reported through `converged = false`.
pub fn fit_wordfish(dtm: &DocumentTermMatrix, config: &WordfishConfig) -> Result<WordfishFit> {
    validate(dtm, config)?;
    let counts = Counts {
        y: dtm.values(),
        n: dtm.n_docs(),
        m: dtm.n_terms(),
    };
    let init = initial_params(&counts, config.seed);
    Ok(into_fit(dtm, optimize(&counts, init, config), config))
}

/// 95% percentile interval for one document position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const MAX_REDRAWS: usize = 50;

/// Parametric bootstrap: resample counts from the fitted rates, refit from the
/// fitted parameters, orient by the same pair, take 2.5/97.5 percentiles.
pub fn bootstrap_ci(
    dtm: &DocumentTermMatrix,
    fit: &WordfishFit,
    draws: usize,
    seed: u64,
    config: &WordfishConfig,
) -> Result<Vec<Interval>> {
    if !fit.converged {
        return Err(Error::UnconvergedFit);
    }
    if draws == 0 {
        return Ok(Vec::new());
    }
    let (n, m) = (dtm.n_docs(), dtm.n_terms());
    if fit.omega.len() != n || fit.psi.len() != m {
        return Err(Error::InvalidInput("fit does not match the matrix".into()));
    }
    let replicate = |draw: usize| -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (draw as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for _ in 0..MAX_REDRAWS {
            let mut y = Vec::with_capacity(n * m);
            for i in 0..n {
                for j in 0..m {
                    let lam = fit.rate(i, j);
                    let v = if lam > 0.0 && lam.is_finite() {
                        Poisson::new(lam).map(|p| p.sample(&mut rng)).unwrap_or(0.0)
                    } else {
                        0.0
                    };
                    y.push(v);
                }
            }
            if (0..n).any(|i| y[i * m..(i + 1) * m].iter().all(|&v| v == 0.0)) {
                continue;
            }
            let kept: Vec<usize> = (0..m).filter(|&j| (0..n).any(|i| y[i * m + j] > 0.0)).collect();
            if kept.len() < 2 {
                continue;
            }
            let sub: Vec<f64> = (0..n).flat_map(|i| kept.iter().map(move |&j| (i, j))).map(|(i, j)| y[i * m + j]).collect();
            let counts = Counts { y: &sub, n, m: kept.len() };
            let warm = Params {
                alpha: fit.alpha.clone(),
                omega: fit.omega.clone(),
                psi: kept.iter().map(|&j| fit.psi[j]).collect(),
                beta: kept.iter().map(|&j| fit.beta[j]).collect(),
            };
            return Ok(optimize(&counts, warm, config).params.omega);
        }
        Err(Error::DegenerateMatrix(
            "bootstrap draws keep producing empty documents".into(),
        ))
    };
    let samples: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(replicate)
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|i| {
            let mut col: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            col.sort_by(f64::total_cmp);
            Interval {
                lo: quantile(&col, 0.025),
                hi: quantile(&col, 0.975),
            }
        })
        .collect())
}

/// Plot-ready `document,omega,lo,hi`; interval columns stay empty without intervals.
pub fn write_idealpoints_csv(out: impl Write, fit: &WordfishFit, intervals: Option<&[Interval]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["document", "omega", "lo", "hi"])?;
    for (i, doc) in fit.documents.iter().enumerate() {
        let (lo, hi) = match intervals.and_then(|iv| iv.get(i)) {
            Some(iv) => (iv.lo.to_string(), iv.hi.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([doc.clone(), fit.omega[i].to_string(), lo, hi])?;
    }
    w.flush().map_err(|e| Error::io("<idealpoints csv>", e))?;
    Ok(())
}
