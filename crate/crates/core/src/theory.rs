//! Monte Carlo verification of the concentration guarantee for one-layer
//! mean aggregation on k-regular graphs with randomly mixed neighbor labels,
//! plus a standalone probe of the underlying Bernstein tail inequality.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("t must be positive, got {0}")]
    NonPositiveT(f64),
    #[error("need at least 1000 trials, got {0}")]
    TooFewTrials(usize),
}

/// Bounded per-dimension feature sampler for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureSampler {
    /// Deterministic vector.
    PointMass { values: Vec<f64> },
    /// Independent Gaussians clipped into [-bound, bound] per dimension.
    ClippedGaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl FeatureSampler {
    fn dim(&self) -> usize {
        match self {
            FeatureSampler::PointMass { values } => values.len(),
            FeatureSampler::ClippedGaussian { mean, .. } => mean.len(),
        }
    }

    fn sample_into(&self, out: &mut [f64], c_x: f64, rng: &mut ChaCha8Rng) {
        match self {
            FeatureSampler::PointMass { values } => out.copy_from_slice(values),
            FeatureSampler::ClippedGaussian { mean, std } => {
                for (i, slot) in out.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    *slot = (mean[i] + std[i] * z).clamp(-c_x, c_x);
                }
            }
        }
    }
}

/// Distribution of the per-node homophily level P.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HomophilyDist {
    PointMass { p: f64 },
    Beta { alpha: f64, beta: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl HomophilyDist {
    /// Symmetric Beta with mean 1/2 and the requested variance; variance 0
    /// degenerates to a point mass.
    pub fn symmetric_with_variance(var: f64) -> Result<Self, TheoryError> {
        if var < 0.0 || var >= 0.25 {
            return Err(TheoryError::InvalidSetting(format!(
                "symmetric Beta variance must lie in [0, 0.25), got {var}"
            )));
        }
        if var == 0.0 {
            return Ok(HomophilyDist::PointMass { p: 0.5 });
        }
        let a = (1.0 / (4.0 * var) - 1.0) / 2.0;
        Ok(HomophilyDist::Beta { alpha: a, beta: a })
    }

    pub fn mean(&self) -> f64 {
        match self {
            HomophilyDist::PointMass { p } => *p,
            HomophilyDist::Beta { alpha, beta } => alpha / (alpha + beta),
            HomophilyDist::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * p).sum()
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            HomophilyDist::PointMass { .. } => 0.0,
            HomophilyDist::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            HomophilyDist::Discrete { values, probs } => {
                let m = self.mean();
                values
                    .iter()
                    .zip(probs)
                    .map(|(v, p)| p * (v - m) * (v - m))
                    .sum()
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            HomophilyDist::PointMass { p } => *p,
            HomophilyDist::Beta { alpha, beta } => {
                Beta::new(*alpha, *beta).expect("validated").sample(rng)
            }
            HomophilyDist::Discrete { values, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("nonempty")
            }
        }
    }

    fn validate(&self) -> Result<(), TheoryError> {
        match self {
            HomophilyDist::PointMass { p } if !(0.0..=1.0).contains(p) => Err(
                TheoryError::InvalidSetting(format!("point mass {p} outside [0,1]")),
            ),
            HomophilyDist::Beta { alpha, beta } if *alpha <= 0.0 || *beta <= 0.0 => Err(
                TheoryError::InvalidSetting("Beta parameters must be positive".into()),
            ),
            HomophilyDist::Discrete { values, probs } => {
                if values.len() != probs.len() || values.is_empty() {
                    return Err(TheoryError::InvalidSetting(
                        "discrete values/probs mismatch".into(),
                    ));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 || values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(TheoryError::InvalidSetting(
                        "discrete distribution not a probability law on [0,1]".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The generative universe of the concentration check: a k-regular ego
/// neighborhood, two bounded class feature families, a homophily law, and
/// the aggregation weight matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremSetting {
    pub k: usize,
    pub d: usize,
    pub f0: FeatureSampler,
    pub f1: FeatureSampler,
    /// Hard bound on every feature coordinate, enforced by clipping.
    pub c_x: f64,
    pub d_p: HomophilyDist,
    /// d x d weight matrix, row-major.
    pub w: Vec<Vec<f64>>,
    /// Ego label, 0 or 1.
    pub y_i: usize,
}

impl TheoremSetting {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.d == 0 || self.k == 0 {
            return Err(TheoryError::InvalidSetting("k and d must be positive".into()));
        }
        for (name, s) in [("f0", &self.f0), ("f1", &self.f1)] {
            if s.dim() != self.d {
                return Err(TheoryError::InvalidSetting(format!(
                    "{name} dimension {} != d {}",
                    s.dim(),
                    self.d
                )));
            }
            if let FeatureSampler::PointMass { values } = s {
                if values.iter().any(|v| v.abs() > self.c_x) {
                    return Err(TheoryError::InvalidSetting(format!(
                        "{name} point mass exceeds the bound C_x"
                    )));
                }
            }
        }
        if self.w.len() != self.d || self.w.iter().any(|r| r.len() != self.d) {
            return Err(TheoryError::InvalidSetting("W must be d x d".into()));
        }
        if self.y_i > 1 {
            return Err(TheoryError::InvalidSetting("labels are binary".into()));
        }
        if self.c_x <= 0.0 {
            return Err(TheoryError::InvalidSetting("C_x must be positive".into()));
        }
        self.d_p.validate()
    }

    pub fn weight_matrix(&self) -> Array2<f64> {
        let mut w = Array2::zeros((self.d, self.d));
        for i in 0..self.d {
            for j in 0..self.d {
                w[(i, j)] = self.w[i][j];
            }
        }
        w
    }

    /// The canonical verification universe: k = 10, d = 4, W = I, C_x = 2,
    /// opposed class means, with the homophily variance as the degree of
    /// freedom.
    pub fn canonical(var_p: f64) -> Result<Self, TheoryError> {
        let d = 4;
        let mut w = vec![vec![0.0; d]; d];
        for (i, row) in w.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Ok(TheoremSetting {
            k: 10,
            d,
            f0: FeatureSampler::ClippedGaussian {
                mean: vec![0.8; d],
                std: vec![0.5; d],
            },
            f1: FeatureSampler::ClippedGaussian {
                mean: vec![-0.8; d],
                std: vec![0.5; d],
            },
            c_x: 2.0,
            d_p: HomophilyDist::symmetric_with_variance(var_p)?,
            w,
            y_i: 0,
        })
    }
}

/// First and second per-dimension moments of both class families, plus the
/// bound constants derived from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Moments {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub tau0: Vec<f64>,
    pub tau1: Vec<f64>,
    pub c_mu: f64,
    pub c_tau: f64,
}

/// Moments of a sampler: exact for point masses, estimated from
/// `presamples` draws for clipped Gaussians (clipping shifts them away from
/// the nominal values).
fn sampler_moments(
    s: &FeatureSampler,
    c_x: f64,
    presamples: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    match s {
        FeatureSampler::PointMass { values } => (
            values.clone(),
            values.iter().map(|v| v * v).collect(),
        ),
        FeatureSampler::ClippedGaussian { mean, .. } => {
            let d = mean.len();
            let mut mu = vec![0.0; d];
            let mut tau = vec![0.0; d];
            let mut buf = vec![0.0; d];
            for _ in 0..presamples {
                s.sample_into(&mut buf, c_x, rng);
                for j in 0..d {
                    mu[j] += buf[j];
                    tau[j] += buf[j] * buf[j];
                }
            }
            let n = presamples as f64;
            for j in 0..d {
                mu[j] /= n;
                tau[j] /= n;
            }
            (mu, tau)
        }
    }
}

pub fn compute_moments(s: &TheoremSetting, presamples: usize, seed: u64) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mu0, tau0) = sampler_moments(&s.f0, s.c_x, presamples, &mut rng);
    let (mu1, tau1) = sampler_moments(&s.f1, s.c_x, presamples, &mut rng);
    let c_mu = mu0
        .iter()
        .chain(&mu1)
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    let c_tau = tau0
        .iter()
        .chain(&tau1)
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    Moments {
        mu0,
        mu1,
        tau0,
        tau1,
        c_mu,
        c_tau,
    }
}

/// One draw of the aggregated ego embedding: sample the homophily level,
/// the neighbor labels, all features, and return W times the neighborhood
/// mean (ego included).
pub fn sample_embedding(s: &TheoremSetting, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let p = s.d_p.sample(rng);
    let mut sum = vec![0.0f64; s.d];
    let mut buf = vec![0.0f64; s.d];
    let ego = if s.y_i == 0 { &s.f0 } else { &s.f1 };
    ego.sample_into(&mut buf, s.c_x, rng);
    for j in 0..s.d {
        sum[j] += buf[j];
    }
    for _ in 0..s.k {
        let same: bool = rng.gen::<f64>() < p;
        let label = if same { s.y_i } else { 1 - s.y_i };
        let fam = if label == 0 { &s.f0 } else { &s.f1 };
        fam.sample_into(&mut buf, s.c_x, rng);
        for j in 0..s.d {
            sum[j] += buf[j];
        }
    }
    let scale = 1.0 / (s.k as f64 + 1.0);
    let w = s.weight_matrix();
    let sum = Array1::from_vec(sum);
    w.dot(&sum) * scale
}

/// Closed-form expectation of the aggregated embedding.
pub fn expected_embedding(s: &TheoremSetting, moments: &Moments) -> Array1<f64> {
    let (mu_own, mu_other) = if s.y_i == 0 {
        (&moments.mu0, &moments.mu1)
    } else {
        (&moments.mu1, &moments.mu0)
    };
    let ep = s.d_p.mean();
    let k = s.k as f64;
    let mut inner = Array1::zeros(s.d);
    for j in 0..s.d {
        let neighbor_mean = ep * mu_own[j] + (1.0 - ep) * mu_other[j];
        inner[j] = mu_own[j] / (k + 1.0) + (k / (k + 1.0)) * neighbor_mean;
    }
    s.weight_matrix().dot(&inner)
}

/// Largest singular value via power iteration on WᵀW.
pub fn spectral_norm(w: &Array2<f64>) -> f64 {
    let gram = w.t().dot(w);
    let d = gram.nrows();
    let mut v = Array1::from_shape_fn(d, |i| 1.0 + (i as f64) * 0.1);
    let norm = |x: &Array1<f64>| x.dot(x).sqrt();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let next = gram.dot(&v);
        let n = norm(&next);
        if n == 0.0 {
            return 0.0;
        }
        let next = next / n;
        let new_lambda = next.dot(&gram.dot(&next));
        let done = (new_lambda - lambda).abs() <= 1e-14 * new_lambda.abs().max(1.0);
        lambda = new_lambda;
        v = next;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// The tail bound at deviation t: raw value and its clamp onto [0, 1].
pub fn analytic_bound(
    s: &TheoremSetting,
    moments: &Moments,
    t: f64,
) -> Result<(f64, f64), TheoryError> {
    if t <= 0.0 {
        return Err(TheoryError::NonPositiveT(t));
    }
    let k = s.k as f64;
    let d = s.d as f64;
    let rho = spectral_norm(&s.weight_matrix());
    let sigma2 = 4.0 * k * moments.c_mu * moments.c_mu * s.d_p.variance() + k * moments.c_tau;
    let a = (k + 1.0) * t / rho + d.sqrt() * s.c_x + d.sqrt() * moments.c_mu;
    let denom = 2.0 * k * d * sigma2 + (4.0 / 3.0) * d.sqrt() * s.c_x * a;
    let raw = 2.0 * d * (-(a * a) / denom).exp();
    Ok((raw, raw.clamp(0.0, 1.0)))
}

/// One grid point of the verification report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailPoint {
    pub t: f64,
    pub empirical: f64,
    pub stderr: f64,
    pub bound_raw: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub setting: TheoremSetting,
    pub moments: Moments,
    pub trials: usize,
    pub seed: u64,
    pub points: Vec<TailPoint>,
    pub all_pass: bool,
    /// Convention note: the bound formula uses a single deviation parameter
    /// t in both the numerator and the shared linear term of the
    /// denominator.
    pub bound_note: String,
}

/// Estimate the deviation tail on a t-grid and compare each point against
/// the analytic bound (clamped to 1) plus three binomial standard errors.
pub fn verify_concentration(
    s: &TheoremSetting,
    t_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<VerificationReport, TheoryError> {
    s.validate()?;
    if trials < 1000 {
        return Err(TheoryError::TooFewTrials(trials));
    }
    let moments = compute_moments(s, 1_000_000, seed ^ 0x9e37_79b9_7f4a_7c15);
    let expected = expected_embedding(s, &moments);

    let mut deviations = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed, trial as u64));
        let h = sample_embedding(s, &mut rng);
        let diff = &h - &expected;
        deviations.push(diff.dot(&diff).sqrt());
    }

    let mut points = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let hits = deviations.iter().filter(|&&dev| dev >= t).count();
        let empirical = hits as f64 / trials as f64;
        let stderr = (empirical * (1.0 - empirical) / trials as f64).sqrt();
        let (bound_raw, bound) = analytic_bound(s, &moments, t)?;
        let pass = empirical <= bound + 3.0 * stderr;
        points.push(TailPoint {
            t,
            empirical,
            stderr,
            bound_raw,
            bound,
            pass,
        });
    }
    let all_pass = points.iter().all(|p| p.pass);
    Ok(VerificationReport {
        setting: s.clone(),
        moments,
        trials,
        seed,
        points,
        all_pass,
        bound_note: "tail bound evaluated with a single deviation parameter t; the same \
                     linear term appears in numerator and denominator"
            .to_string(),
    })
}

fn splitmix(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Bounded sample distribution for the Bernstein probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BoundedDist {
    Uniform { a: f64, b: f64 },
    PointMass { value: f64 },
}

impl BoundedDist {
    fn support(&self) -> (f64, f64) {
        match self {
            BoundedDist::Uniform { a, b } => (*a, *b),
            BoundedDist::PointMass { value } => (*value, *value),
        }
    }

    fn mean(&self) -> f64 {
        match self {
            BoundedDist::Uniform { a, b } => (a + b) / 2.0,
            BoundedDist::PointMass { value } => *value,
        }
    }

    fn variance(&self) -> f64 {
        match self {
            BoundedDist::Uniform { a, b } => (b - a) * (b - a) / 12.0,
            BoundedDist::PointMass { .. } => 0.0,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            BoundedDist::Uniform { a, b } => rng.gen_range(*a..=*b),
            BoundedDist::PointMass { value } => *value,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BernsteinProbe {
    pub empirical: f64,
    pub bound: f64,
}

/// Sample means of n i.i.d. bounded variables against the Bernstein tail
/// exp(-n t² / (2σ² + 2t(b-a)/3)) with σ² the summed variance.
pub fn bernstein_probe(
    dist: &BoundedDist,
    n: usize,
    t: f64,
    trials: usize,
    seed: u64,
) -> Result<BernsteinProbe, TheoryError> {
    if t <= 0.0 {
        return Err(TheoryError::NonPositiveT(t));
    }
    let (a, b) = dist.support();
    if a > b {
        return Err(TheoryError::InvalidSetting(format!("empty support [{a},{b}]")));
    }
    let sigma2 = n as f64 * dist.variance();
    let bound =
        (-(n as f64) * t * t / (2.0 * sigma2 + 2.0 * t * (b - a) / 3.0)).exp();

    let mean = dist.mean();
    let mut hits = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let xbar: f64 = (0..n).map(|_| dist.sample(&mut rng)).sum::<f64>() / n as f64;
        hits += (xbar - mean >= t) as usize;
    }
    Ok(BernsteinProbe {
        empirical: hits as f64 / trials as f64,
        bound,
    })
}
