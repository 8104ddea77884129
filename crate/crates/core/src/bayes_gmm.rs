//! Gaussian-mixture inverse problem: a diagonal-covariance mixture prior, a
//! diagonal linear forward operator with isotropic Gaussian noise, and the
//! closed-form mixture posterior.
//!
//! Every covariance in this problem class is diagonal (the forward operator is
//! diagonal), so components store per-coordinate variances.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Number of mixture components in the benchmark prior.
pub const BENCH_COMPONENTS: usize = 10;
/// Dimension of both the state and the observation.
pub const BENCH_DIM: usize = 5;
/// Component standard deviation of the benchmark prior.
pub const BENCH_STD: f64 = 0.1;
/// Observation noise standard deviation.
pub const BENCH_NOISE_STD: f64 = 0.1;

/// Mixture of Gaussians with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-coordinate variances of each component.
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidMeasure("mixture needs matching nonempty weights, means and variances".into()));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMeasure("mixture dimension must be >= 1".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: m.len().max(v.len()) });
            }
            if m.iter().any(|c| !c.is_finite()) || v.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                return Err(Error::InvalidMeasure("means must be finite and variances positive".into()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { weights, means, variances })
    }

    /// Components sharing one isotropic standard deviation.
    pub fn isotropic(weights: Vec<f64>, means: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let variances = means.iter().map(|m| vec![std * std; m.len()]).collect();
        Self::new(weights, means, variances)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Mixture mean `Σ_k w_k m_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (w, m) in self.weights.iter().zip(&self.means) {
            out.iter_mut().zip(m).for_each(|(o, c)| *o += w * c);
        }
        out
    }

    /// Draws `n` points together with the index of the component each came from.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> Result<Vec<(usize, Vec<f64>)>> {
        let pick = WeightedIndex::new(&self.weights).map_err(|e| Error::InvalidMeasure(e.to_string()))?;
        let mut g = rng::seeded(seed);
        Ok((0..n)
            .map(|_| {
                let k = pick.sample(&mut g);
                (k, self.draw_component(k, &mut g))
            })
            .collect())
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.sample_labeled(n, seed)?.into_iter().map(|(_, x)| x).collect())
    }

    fn draw_component(&self, k: usize, g: &mut rng::Rng) -> Vec<f64> {
        let z = rng::standard_normal(g, self.dim());
        self.means[k].iter().zip(&self.variances[k]).zip(z).map(|((m, v), z)| m + v.sqrt() * z).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let raw: GmmModel = serde_json::from_str(s)?;
        Self::new(raw.weights, raw.means, raw.variances)
    }
}

/// `Y = diag(f)·X + σ·N(0, I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGaussianForward {
    pub diag: Vec<f64>,
    pub noise_std: f64,
}

impl LinearGaussianForward {
    pub fn new(diag: Vec<f64>, noise_std: f64) -> Result<Self> {
        if diag.is_empty() || diag.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidConfig("forward diagonal must be nonempty and finite".into()));
        }
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise std must be positive, got {noise_std}")));
        }
        Ok(Self { diag, noise_std })
    }

    /// `f_ii = 0.1/(i+1)` for `i = 1..=dim`, noise std 0.1.
    pub fn benchmark(dim: usize) -> Self {
        Self { diag: (1..=dim).map(|i| 0.1 / (i as f64 + 1.0)).collect(), noise_std: BENCH_NOISE_STD }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.diag.iter().zip(x).map(|(f, c)| f * c).collect()
    }
}

/// Benchmark prior: ten equally weighted components in `R^5` with means drawn
/// uniformly from `[−1, 1]^5` and standard deviation 0.1.
pub fn make_benchmark_gmm(seed: u64) -> GmmModel {
    let mut g = rng::seeded(seed);
    let means = (0..BENCH_COMPONENTS)
        .map(|_| (0..BENCH_DIM).map(|_| g.random_range(-1.0..=1.0)).collect())
        .collect();
    GmmModel::isotropic(vec![1.0 / BENCH_COMPONENTS as f64; BENCH_COMPONENTS], means, BENCH_STD)
        .expect("benchmark prior is valid by construction")
}

fn check_dims(gmm: &GmmModel, fwd: &LinearGaussianForward) -> Result<()> {
    if gmm.dim() != fwd.dim() {
        return Err(Error::DimensionMismatch { expected: gmm.dim(), found: fwd.dim() });
    }
    Ok(())
}

/// `n` draws of `(y, x)` with `x ~ gmm` and `y = f·x + noise`.
pub fn sample_joint(gmm: &GmmModel, fwd: &LinearGaussianForward, n: usize, seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    check_dims(gmm, fwd)?;
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    let xs = gmm.sample(n, seed)?;
    let mut g = rng::stream(seed, 1);
    Ok(xs
        .into_iter()
        .map(|x| {
            let noise = rng::standard_normal(&mut g, fwd.dim());
            let y = fwd.apply(&x).into_iter().zip(noise).map(|(fx, e)| fx + fwd.noise_std * e).collect();
            (y, x)
        })
        .collect())
}

/// Closed-form posterior `P_{X|Y=y}`.
///
/// Per component and coordinate, with prior variance `s²` and noise variance
/// `σ²`: posterior variance `(1/s² + f²/σ²)⁻¹`, posterior mean
/// `var·(m/s² + f·y/σ²)`, and the weight is multiplied by the density of `y`
/// under `N(f·m, f²s² + σ²)`.
pub fn analytic_posterior(gmm: &GmmModel, fwd: &LinearGaussianForward, y: &[f64]) -> Result<GmmModel> {
    check_dims(gmm, fwd)?;
    if y.len() != fwd.dim() {
        return Err(Error::DimensionMismatch { expected: fwd.dim(), found: y.len() });
    }
    let n2 = fwd.noise_std * fwd.noise_std;
    let mut log_w = Vec::with_capacity(gmm.components());
    let mut means = Vec::with_capacity(gmm.components());
    let mut variances = Vec::with_capacity(gmm.components());
    for k in 0..gmm.components() {
        let mut lw = gmm.weights[k].ln();
        let mut mk = Vec::with_capacity(gmm.dim());
        let mut vk = Vec::with_capacity(gmm.dim());
        for c in 0..gmm.dim() {
            let (f, m, s2) = (fwd.diag[c], gmm.means[k][c], gmm.variances[k][c]);
            let pv = 1.0 / (1.0 / s2 + f * f / n2);
            mk.push(pv * (m / s2 + f * y[c] / n2));
            vk.push(pv);
            let marg = f * f * s2 + n2;
            let r = y[c] - f * m;
            lw += -0.5 * (r * r / marg + (2.0 * std::f64::consts::PI * marg).ln());
        }
        log_w.push(lw);
        means.push(mk);
        variances.push(vk);
    }
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let weights = unnorm.iter().map(|w| w / total).collect();
    GmmModel::new(weights, means, variances)
}

/// Exact draws from a (posterior) mixture: categorical component, then Gaussian.
pub fn sample_posterior_exact(posterior: &GmmModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be >= 1".into()));
    }
    posterior.sample(n, seed)
}

/// Serialized record of one posterior and the observation that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDump {
    pub y: Vec<f64>,
    pub posterior: GmmModel,
}
