//! Exact RBM computations on small state spaces.
//!
//! The hidden layer is summed out analytically:
//!
//! ```text
//! p(v) ∝ exp(B·v) · Π_j (1 + exp(W_j·v + C_j))
//! ```
//!
//! so every expectation is an exact sum over the `2^n` visible states, never
//! over `2^(n+m)` joint states. Unnormalized log-probabilities are
//! accumulated with a stable softplus and normalized by log-sum-exp.

use rand::distributions::{Distribution as _, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{Error, Result};
use crate::projections::kl;

pub const MAX_VISIBLE: usize = 20;
pub const MAX_HIDDEN: usize = 25;

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln Σ exp(x_i)`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Weights `W` (`m × n`, row-major), visible biases `B` and hidden biases `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr")]
pub struct RbmParams {
    n: usize,
    m: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
}

#[derive(Deserialize)]
struct ParamsRepr {
    n: usize,
    m: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
}

impl TryFrom<ParamsRepr> for RbmParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        RbmParams::new(r.n, r.m, r.w, r.b, r.c)
    }
}

impl RbmParams {
    pub fn new(n: usize, m: usize, w: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParams(
                "an RBM needs at least one visible unit".into(),
            ));
        }
        if w.len() != m * n || b.len() != n || c.len() != m {
            return Err(Error::InvalidParams(format!(
                "shapes W {} (want {}), B {} (want {n}), C {} (want {m})",
                w.len(),
                m * n,
                b.len(),
                c.len()
            )));
        }
        if w.iter().chain(&b).chain(&c).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        Ok(Self { n, m, w, b, c })
    }

    /// All parameters zero: the uniform distribution.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            w: vec![0.0; m * n],
            b: vec![0.0; n],
            c: vec![0.0; m],
        }
    }

    /// No hidden units; visible biases only.
    pub fn independent(b: Vec<f64>) -> Result<Self> {
        Self::new(b.len(), 0, Vec::new(), b, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.b
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.c
    }

    /// Row `j` of `W`.
    pub fn row(&self, j: usize) -> &[f64] {
        &self.w[j * self.n..(j + 1) * self.n]
    }

    /// Appends a hidden unit with weights `w` and bias `c`.
    pub fn push_hidden(&mut self, w: &[f64], c: f64) -> Result<()> {
        if w.len() != self.n {
            return Err(Error::InvalidParams(format!(
                "hidden row has {} weights, expected {}",
                w.len(),
                self.n
            )));
        }
        if w.iter().any(|x| !x.is_finite()) || !c.is_finite() {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        self.w.extend_from_slice(w);
        self.c.push(c);
        self.m += 1;
        Ok(())
    }

    /// Same parameters with hidden units reordered by `perm`.
    pub fn permute_hidden(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.n, self.m);
        out.b.clone_from(&self.b);
        for (dst, &src) in perm.iter().enumerate() {
            out.w[dst * self.n..(dst + 1) * self.n].copy_from_slice(self.row(src));
            out.c[dst] = self.c[src];
        }
        out
    }

    /// Input to hidden unit `j` for visible state `v`.
    #[inline]
    pub fn hidden_input(&self, j: usize, v: usize) -> f64 {
        let row = self.row(j);
        let mut s = self.c[j];
        for (i, w) in row.iter().enumerate() {
            if v >> i & 1 == 1 {
                s += w;
            }
        }
        s
    }

    /// `ln Σ_h exp(hᵀWv + Bᵀv + Cᵀh)`. The hidden terms are summed in
    /// sorted order, so the value does not depend on the order of the units.
    pub fn log_unnormalized(&self, v: usize) -> f64 {
        let mut s = 0.0;
        for (i, b) in self.b.iter().enumerate() {
            if v >> i & 1 == 1 {
                s += b;
            }
        }
        let mut terms = [0.0; MAX_HIDDEN];
        let terms = &mut terms[..self.m.min(MAX_HIDDEN)];
        if terms.len() < self.m {
            let mut all: Vec<f64> = (0..self.m)
                .map(|j| softplus(self.hidden_input(j, v)))
                .collect();
            all.sort_by(f64::total_cmp);
            return s + all.iter().sum::<f64>();
        }
        for (j, t) in terms.iter_mut().enumerate() {
            *t = softplus(self.hidden_input(j, v));
        }
        terms.sort_by(f64::total_cmp);
        s + terms.iter().sum::<f64>()
    }

    fn check_size(&self) -> Result<()> {
        if self.n > MAX_VISIBLE || self.m > MAX_HIDDEN {
            return Err(Error::SizeGuard {
                n: self.n,
                m: self.m,
                max_n: MAX_VISIBLE,
                max_m: MAX_HIDDEN,
            });
        }
        Ok(())
    }

    fn step(&mut self, g: &RbmGradient, lr: f64) {
        for (p, d) in self.w.iter_mut().zip(&g.w) {
            *p += lr * d;
        }
        for (p, d) in self.b.iter_mut().zip(&g.b) {
            *p += lr * d;
        }
        for (p, d) in self.c.iter_mut().zip(&g.c) {
            *p += lr * d;
        }
    }

    /// Flat view `[W..., B..., C...]`, used by finite-difference checks.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.w.clone();
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.c);
        out
    }

    pub fn from_flat(n: usize, m: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != m * n + n + m {
            return Err(Error::InvalidParams(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                m * n + n + m
            )));
        }
        let (w, rest) = flat.split_at(m * n);
        let (b, c) = rest.split_at(n);
        Self::new(n, m, w.to_vec(), b.to_vec(), c.to_vec())
    }
}

/// Natural-log probabilities of every visible state.
pub fn log_visible_distribution(params: &RbmParams) -> Result<Vec<f64>> {
    params.check_size()?;
    let logits: Vec<f64> = (0..1usize << params.n)
        .map(|v| params.log_unnormalized(v))
        .collect();
    let log_z = log_sum_exp(&logits);
    Ok(logits.into_iter().map(|l| l - log_z).collect())
}

/// The stationary distribution of the visible units.
pub fn visible_distribution(params: &RbmParams) -> Result<Distribution> {
    let logs = log_visible_distribution(params)?;
    let mut probs: Vec<f64> = logs.into_iter().map(f64::exp).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(Distribution::from_raw(params.n, probs))
}

fn check_target(params: &RbmParams, target: &Distribution) -> Result<()> {
    if params.n != target.n() {
        return Err(Error::DimensionMismatch {
            expected: params.n,
            found: target.n(),
        });
    }
    Ok(())
}

/// `Σ_v target(v) ln p(v)` in nats. Equals
/// `-ln 2 · (D(target || p) + H(target))` with `D` and `H` in bits.
pub fn log_likelihood(params: &RbmParams, target: &Distribution) -> Result<f64> {
    check_target(params, target)?;
    let logs = log_visible_distribution(params)?;
    Ok(target
        .probs()
        .iter()
        .zip(&logs)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, l)| t * l)
        .sum())
}

/// `D(target || p_params)` in bits.
pub fn kl_to_model(target: &Distribution, params: &RbmParams) -> Result<f64> {
    check_target(params, target)?;
    let model = visible_distribution(params)?;
    Ok(kl(target, &model)?.to_f64())
}

/// Gradient of [`log_likelihood`] with the same layout as [`RbmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RbmGradient {
    pub fn max_abs(&self) -> f64 {
        self.w
            .iter()
            .chain(&self.b)
            .chain(&self.c)
            .fold(0.0, |a, x| a.max(x.abs()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.w.clone();
        out.extend_from_slice(&self.b);
        out.extend_from_slice(&self.c);
        out
    }
}

/// Exact gradient: data expectations minus model expectations of
/// `σ(W_j·v + C_j) v_i` (for `W`), `v_i` (for `B`) and `σ(W_j·v + C_j)`
/// (for `C`).
pub fn ml_gradient(params: &RbmParams, target: &Distribution) -> Result<RbmGradient> {
    check_target(params, target)?;
    let model = visible_distribution(params)?;
    let (n, m) = (params.n, params.m);
    let mut g = RbmGradient {
        w: vec![0.0; m * n],
        b: vec![0.0; n],
        c: vec![0.0; m],
    };
    let mut act = vec![0.0; m];
    for v in 0..1usize << n {
        let weight = target.prob(v) - model.prob(v);
        if weight == 0.0 {
            continue;
        }
        for (j, a) in act.iter_mut().enumerate() {
            *a = sigmoid(params.hidden_input(j, v));
        }
        for i in 0..n {
            if v >> i & 1 == 1 {
                g.b[i] += weight;
                for (j, a) in act.iter().enumerate() {
                    g.w[j * n + i] += weight * a;
                }
            }
        }
        for (c, a) in g.c.iter_mut().zip(&act) {
            *c += weight * a;
        }
    }
    Ok(g)
}

/// Hyperparameters shared by the trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Gibbs steps per CD update.
    pub cd_steps: usize,
    /// Half-width of the uniform initialization interval.
    pub init_range: f64,
    pub seed: u64,
    /// CD updates per epoch when training on the target distribution;
    /// `None` means one per support state of the target.
    pub samples_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 500,
            cd_steps: 1,
            init_range: 10.0,
            seed: 0,
            samples_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.cd_steps == 0 {
            return Err(Error::InvalidConfig("cd_steps must be at least 1".into()));
        }
        if !(self.init_range.is_finite() && self.init_range > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "init range {} must be positive",
                self.init_range
            )));
        }
        if self.samples_per_epoch == Some(0) {
            return Err(Error::InvalidConfig(
                "samples_per_epoch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Final parameters and `D(target || model)` in bits before training and
/// after every epoch (`epochs + 1` entries).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: RbmParams,
    pub trajectory: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_kl(&self) -> f64 {
        *self
            .trajectory
            .last()
            .expect("trajectory has the initial entry")
    }
}

/// Plain fixed-step exact gradient ascent on the log-likelihood.
pub fn train_ml(
    params: &RbmParams,
    target: &Distribution,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_target(params, target)?;
    params.check_size()?;
    let mut current = params.clone();
    let mut trajectory = Vec::with_capacity(config.epochs + 1);
    trajectory.push(kl_to_model(target, &current)?);
    for _ in 0..config.epochs {
        let g = ml_gradient(&current, target)?;
        current.step(&g, config.learning_rate);
        trajectory.push(kl_to_model(target, &current)?);
    }
    Ok(TrainOutcome {
        params: current,
        trajectory,
    })
}

/// Training data for contrastive divergence.
#[derive(Debug, Clone, PartialEq)]
pub enum CdData {
    /// Draw each positive-phase state from this distribution.
    Target(Distribution),
    /// A finite list of visible states, visited in order once per epoch.
    Samples { n: usize, states: Vec<usize> },
}

impl CdData {
    fn n(&self) -> usize {
        match self {
            CdData::Target(d) => d.n(),
            CdData::Samples { n, .. } => *n,
        }
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < p
}

/// CD-k with online updates. Positive and negative statistics use the
/// hidden conditional probabilities; the chain alternates
/// `P(h_j = 1 | v) = σ(W_j·v + C_j)` and `P(v_i = 1 | h) = σ((Wᵀh)_i + B_i)`.
pub fn train_cd(params: &RbmParams, data: &CdData, config: &TrainConfig) -> Result<RbmParams> {
    config.validate()?;
    if data.n() != params.n {
        return Err(Error::DimensionMismatch {
            expected: params.n,
            found: data.n(),
        });
    }
    params.check_size()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = params.clone();
    let (n, m) = (params.n, params.m);

    let (sampler, per_epoch, list) = match data {
        CdData::Target(t) => {
            let support = t.support();
            let sampler = WeightedIndex::new(t.probs())
                .map_err(|e| Error::InvalidDistribution(e.to_string()))?;
            (
                Some(sampler),
                config.samples_per_epoch.unwrap_or(support.len()),
                Vec::new(),
            )
        }
        CdData::Samples { states, .. } => {
            if states.is_empty() || states.iter().any(|&s| s >> n != 0) {
                return Err(Error::InvalidConfig(
                    "training list is empty or out of range".into(),
                ));
            }
            (None, states.len(), states.clone())
        }
    };

    let mut ph0 = vec![0.0; m];
    let mut ph = vec![0.0; m];
    let mut h = vec![false; m];
    for _ in 0..config.epochs {
        for s in 0..per_epoch {
            let v0 = match (&sampler, list.get(s)) {
                (Some(w), _) => w.sample(&mut rng),
                (None, Some(&state)) => state,
                (None, None) => unreachable!("sample lists define the epoch length"),
            };
            for j in 0..m {
                ph0[j] = sigmoid(current.hidden_input(j, v0));
                h[j] = bernoulli(ph0[j], &mut rng);
            }
            let mut v = v0;
            for step in 0..config.cd_steps {
                v = 0;
                for i in 0..n {
                    let mut x = current.b[i];
                    for (j, &on) in h.iter().enumerate() {
                        if on {
                            x += current.w[j * n + i];
                        }
                    }
                    if bernoulli(sigmoid(x), &mut rng) {
                        v |= 1 << i;
                    }
                }
                for (j, p) in ph.iter_mut().enumerate() {
                    *p = sigmoid(current.hidden_input(j, v));
                }
                if step + 1 < config.cd_steps {
                    for (hj, &p) in h.iter_mut().zip(&ph) {
                        *hj = bernoulli(p, &mut rng);
                    }
                }
            }
            let lr = config.learning_rate;
            for i in 0..n {
                let (a, b) = ((v0 >> i & 1) as f64, (v >> i & 1) as f64);
                current.b[i] += lr * (a - b);
                for j in 0..m {
                    current.w[j * n + i] += lr * (ph0[j] * a - ph[j] * b);
                }
            }
            for j in 0..m {
                current.c[j] += lr * (ph0[j] - ph[j]);
            }
        }
    }
    Ok(current)
}

/// Every entry i.i.d. uniform in `[-range, range]`.
pub fn random_init(n: usize, m: usize, range: f64, seed: u64) -> Result<RbmParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_init_with(n, m, range, &mut rng)
}

pub fn random_init_with<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    range: f64,
    rng: &mut R,
) -> Result<RbmParams> {
    if !(range.is_finite() && range > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "init range {range} must be positive"
        )));
    }
    let mut draw =
        |k: usize| -> Vec<f64> { (0..k).map(|_| rng.gen_range(-range..=range)).collect() };
    let w = draw(m * n);
    let b = draw(n);
    let c = draw(m);
    RbmParams::new(n, m, w, b, c)
}
