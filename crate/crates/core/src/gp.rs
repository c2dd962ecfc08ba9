//! Gaussian-process regression over flattened policy-parameter vectors.
//!
//! The GP uses a zero prior mean and the RBF kernel
//!
//! ```text
//! k(x, x') = sf^2 * exp(-0.5 * l * |x - x'|^2) + sn^2 * [x == x']
//! ```
//!
//! where `l` is a scalar *precision* (the exponent's matrix is `l * I`).
//! Posterior solves go through a Cholesky factorization of `K + jitter * I`
//! with bounded jitter escalation; no explicit inverse is ever formed.
//! Predictions carry exact gradients with respect to the query point so the
//! acquisition value can be added to a gradient-ascent objective.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::erf::erfc;

use crate::error::{check_dim, Error, Result};

/// Below this posterior standard deviation expected improvement falls back
/// to its deterministic limit `max(mean - f_best, 0)`.
pub const SIGMA_MIN: f64 = 1e-9;

/// Initial jitter used when escalating after a failed factorization.
pub const JITTER_FLOOR: f64 = 1e-8;
/// Largest jitter tried before the factorization is reported as failed.
pub const JITTER_CEIL: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    /// Signal amplitude; `sigma_f^2` is the largest noise-free covariance.
    pub sigma_f: f64,
    /// Scalar precision `l` of the squared-exponential term.
    pub lengthscale: f64,
    /// Observation-noise amplitude.
    pub sigma_n: f64,
    /// Starting diagonal stabilizer added before factorization.
    pub jitter: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma_f: 1.0,
            lengthscale: 5e-4,
            sigma_n: 1e-2,
            jitter: JITTER_FLOOR,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_f > 0.0
            && self.sigma_n >= 0.0
            && self.lengthscale > 0.0
            && self.jitter >= 0.0
            && [self.sigma_f, self.sigma_n, self.lengthscale, self.jitter]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "kernel config requires sigma_f > 0, sigma_n >= 0, lengthscale > 0, jitter >= 0: {self:?}"
            )))
        }
    }

    fn signal_var(&self) -> f64 {
        self.sigma_f * self.sigma_f
    }

    fn noise_var(&self) -> f64 {
        self.sigma_n * self.sigma_n
    }

    /// Prior variance at any point, `k(x, x)`.
    pub fn prior_variance(&self) -> f64 {
        self.signal_var() + self.noise_var()
    }
}

/// A flattened parameter vector with a fixed layout for a given architecture.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Noise-free part of the kernel, `sf^2 * exp(-0.5 * l * |x - x'|^2)`.
fn signal_kernel(a: &[f64], b: &[f64], cfg: &KernelConfig) -> f64 {
    cfg.signal_var() * (-0.5 * cfg.lengthscale * squared_distance(a, b)).exp()
}

/// Full RBF kernel including the Kronecker-delta noise term, which fires
/// only when the two vectors are exactly equal componentwise.
pub fn rbf_kernel(x: &ParamVector, x2: &ParamVector, cfg: &KernelConfig) -> Result<f64> {
    check_dim(x.dim(), x2.dim())?;
    let delta = if x.0 == x2.0 { cfg.noise_var() } else { 0.0 };
    Ok(signal_kernel(&x.0, &x2.0, cfg) + delta)
}

/// Gram matrix over `xs`. The noise term sits on the diagonal only; duplicate
/// inputs at different indices share signal covariance but not noise.
/// Jitter is not included here, it is added at factorization time.
pub fn gram_matrix(xs: &[ParamVector], cfg: &KernelConfig) -> Result<DMatrix<f64>> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::InvalidArgument("gram matrix of zero points".into()));
    }
    let dim = xs[0].dim();
    for x in xs {
        check_dim(dim, x.dim())?;
    }
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = cfg.prior_variance();
        for j in (i + 1)..n {
            let v = signal_kernel(&xs[i].0, &xs[j].0, cfg);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cholesky factor of `k + jitter * I`, escalating jitter by 10x from
/// `start` (or [`JITTER_FLOOR`] when `start` is zero) up to [`JITTER_CEIL`].
/// Returns the factor and the jitter that succeeded.
pub fn factorize(k: &DMatrix<f64>, start: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = start;
    loop {
        let mut shifted = k.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = shifted.cholesky() {
            return Ok((chol, jitter));
        }
        let next = if jitter == 0.0 {
            JITTER_FLOOR
        } else {
            jitter * 10.0
        };
        if next > JITTER_CEIL * (1.0 + 1e-12) {
            return Err(Error::Factorization { n, jitter });
        }
        jitter = next;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpObservation {
    pub theta: ParamVector,
    pub y: f64,
}

/// Bounded FIFO of observations, oldest first.
#[derive(Debug, Clone)]
pub struct GpMemory {
    entries: VecDeque<GpObservation>,
    capacity: usize,
}

impl GpMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("gp memory capacity must be >= 1".into()));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &GpObservation> {
        self.entries.iter()
    }

    /// Appends `obs`, evicting the oldest entry first when full.
    pub fn push(&mut self, obs: GpObservation) -> Result<()> {
        if !obs.y.is_finite() {
            return Err(Error::NonFiniteTarget(obs.y));
        }
        if let Some(first) = self.entries.front() {
            check_dim(first.theta.dim(), obs.theta.dim())?;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(obs);
        Ok(())
    }

    /// Incumbent for expected improvement: the largest stored target.
    pub fn f_best(&self) -> Option<f64> {
        self.entries.iter().map(|o| o.y).reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub mean: f64,
    /// Clamped at zero.
    pub variance: f64,
    /// `K** - K* (K + jI)^-1 K*^T` before clamping.
    pub raw_variance: f64,
    pub mean_grad: Vec<f64>,
    pub variance_grad: Vec<f64>,
}

/// A GP conditioned on a memory snapshot. Factorization happens once; any
/// number of read-only predictions may follow.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: Vec<ParamVector>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    cfg: KernelConfig,
    jitter: f64,
}

impl GpModel {
    pub fn fit(mem: &GpMemory, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        if mem.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let inputs: Vec<ParamVector> = mem.entries().map(|o| o.theta.clone()).collect();
        let y = DVector::from_iterator(mem.len(), mem.entries().map(|o| o.y));
        let k = gram_matrix(&inputs, cfg)?;
        let (chol, jitter) = factorize(&k, cfg.jitter)?;
        let alpha = chol.solve(&y);
        Ok(Self {
            inputs,
            chol,
            alpha,
            cfg: *cfg,
            jitter,
        })
    }

    /// Jitter actually used by the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].dim()
    }

    pub fn predict(&self, x_star: &ParamVector) -> Result<GpPosterior> {
        let dim = self.dim();
        check_dim(dim, x_star.dim())?;
        let n = self.inputs.len();

        // K* and, per training point, the shared factor of dk/dx*.
        let mut k_star = DVector::zeros(n);
        let mut signal = vec![0.0; n];
        for (i, xi) in self.inputs.iter().enumerate() {
            signal[i] = signal_kernel(&x_star.0, &xi.0, &self.cfg);
            let delta = if x_star.0 == xi.0 { self.cfg.noise_var() } else { 0.0 };
            k_star[i] = signal[i] + delta;
        }

        let mean = k_star.dot(&self.alpha);
        let v = self.chol.solve(&k_star);
        let raw_variance = self.cfg.prior_variance() - k_star.dot(&v);
        let variance = raw_variance.max(0.0);

        // dk_i/dx* = -l * (x* - x_i) * signal_i; the delta term is constant.
        let mut mean_grad = vec![0.0; dim];
        let mut variance_grad = vec![0.0; dim];
        for (i, xi) in self.inputs.iter().enumerate() {
            let s = -self.cfg.lengthscale * signal[i];
            let a = s * self.alpha[i];
            let b = -2.0 * s * v[i];
            for d in 0..dim {
                let diff = x_star.0[d] - xi.0[d];
                mean_grad[d] += a * diff;
                variance_grad[d] += b * diff;
            }
        }
        if raw_variance < 0.0 {
            variance_grad.iter_mut().for_each(|g| *g = 0.0);
        }

        Ok(GpPosterior {
            mean,
            variance,
            raw_variance,
            mean_grad,
            variance_grad,
        })
    }
}

/// Posterior at `x_star` given `mem`. Refactorizes on every call; use
/// [`GpModel`] to amortize over many queries against one snapshot.
pub fn posterior(mem: &GpMemory, x_star: &ParamVector, cfg: &KernelConfig) -> Result<GpPosterior> {
    GpModel::fit(mem, cfg)?.predict(x_star)
}

/// An acquisition value with its gradient with respect to the query point.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement over `f_best` (maximization form).
pub fn expected_improvement(p: &GpPosterior, f_best: f64) -> AcquisitionValue {
    let sigma = p.variance.max(0.0).sqrt();
    let gap = p.mean - f_best;
    if sigma <= SIGMA_MIN {
        return if gap > 0.0 {
            AcquisitionValue {
                value: gap,
                grad: p.mean_grad.clone(),
            }
        } else {
            AcquisitionValue {
                value: 0.0,
                grad: vec![0.0; p.mean_grad.len()],
            }
        };
    }
    let z = gap / sigma;
    let cdf = std_normal_cdf(z);
    let pdf = std_normal_pdf(z);
    // dEI/dmean = cdf, dEI/dsigma = pdf, dsigma/dvar = 1 / (2 sigma)
    let var_coef = pdf / (2.0 * sigma);
    let grad = p
        .mean_grad
        .iter()
        .zip(&p.variance_grad)
        .map(|(gm, gv)| cdf * gm + var_coef * gv)
        .collect();
    AcquisitionValue {
        value: (gap * cdf + sigma * pdf).max(0.0),
        grad,
    }
}

/// Upper confidence bound `mean + kappa * sqrt(variance)`.
pub fn ucb(p: &GpPosterior, kappa: f64) -> AcquisitionValue {
    let sigma = p.variance.max(0.0).sqrt();
    let value = p.mean + kappa * sigma;
    let grad = if sigma > 0.0 && kappa != 0.0 {
        let var_coef = kappa / (2.0 * sigma);
        p.mean_grad
            .iter()
            .zip(&p.variance_grad)
            .map(|(gm, gv)| gm + var_coef * gv)
            .collect()
    } else {
        p.mean_grad.clone()
    };
    AcquisitionValue { value, grad }
}

/// Regression target for the GP: the discounted-horizon scaling of the
/// importance-weighted mean advantage, shifted by the GP's prediction for
/// the data-collecting policy.
///
/// `gamma = 1` is rejected because the geometric factor is undefined there.
pub fn gp_target(mean_weighted_adv: f64, gamma: f64, horizon: u64, mu_old: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gp target requires 0 <= gamma < 1, got {gamma}"
        )));
    }
    // (1 - g^(T+1)) / (1 - g) summed term by term; stays accurate near g = 1.
    let mut factor = 0.0;
    let mut term = 1.0;
    for _ in 0..=horizon {
        factor += term;
        term *= gamma;
        if term == 0.0 {
            break;
        }
    }
    Ok(factor * mean_weighted_adv + mu_old)
}
