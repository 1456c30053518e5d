//! Probability distributions on `{0,1}^n`.
//!
//! [`Distribution`] is the dense representation (a vector of `2^n`
//! probabilities indexed by state). Structured forms, [`ProductDistribution`]
//! on a face and [`MixtureOfProducts`] with disjoint cubical supports,
//! densify into it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::{check_dim, Face, Partition};

/// Tolerance on the total mass of a dense distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Dense probability vector over `{0,1}^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionRepr")]
pub struct Distribution {
    n: usize,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct DistributionRepr {
    n: usize,
    probs: Vec<f64>,
}

impl TryFrom<DistributionRepr> for Distribution {
    type Error = Error;

    fn try_from(r: DistributionRepr) -> Result<Self> {
        Distribution::new(r.n, r.probs)
    }
}

impl Distribution {
    /// Validates length, sign and normalization (to [`NORMALIZATION_TOL`]).
    pub fn new(n: usize, probs: Vec<f64>) -> Result<Self> {
        check_dim(n)?;
        if probs.len() != 1 << n {
            return Err(Error::InvalidDistribution(format!(
                "expected {} probabilities for n = {n}, got {}",
                1usize << n,
                probs.len()
            )));
        }
        if let Some(&bad) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidDistribution(format!(
                "entry {bad} is not a non-negative number"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, not 1"
            )));
        }
        Ok(Self { n, probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {total}"
            )));
        }
        Self::new(n, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        check_dim(n)?;
        let size = 1usize << n;
        Ok(Self {
            n,
            probs: vec![1.0 / size as f64; size],
        })
    }

    pub fn point_mass(n: usize, x: usize) -> Result<Self> {
        check_dim(n)?;
        let mut probs = vec![0.0; 1 << n];
        *probs
            .get_mut(x)
            .ok_or_else(|| Error::OutOfRange(format!("state {x} out of range for n = {n}")))? = 1.0;
        Ok(Self { n, probs })
    }

    /// Uniform distribution on a set of states.
    pub fn uniform_on(n: usize, states: &[usize]) -> Result<Self> {
        check_dim(n)?;
        let mut probs = vec![0.0; 1 << n];
        if states.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        for &s in states {
            *probs
                .get_mut(s)
                .ok_or_else(|| Error::OutOfRange(format!("state {s} out of range")))? += 1.0;
        }
        Self::from_weights(n, probs)
    }

    pub(crate) fn from_raw(n: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), 1 << n);
        Self { n, probs }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, v: usize) -> f64 {
        self.probs[v]
    }

    /// Total mass of a set of states.
    pub fn mass(&self, states: &[usize]) -> f64 {
        states.iter().map(|&s| self.probs[s]).sum()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.probs.len())
            .filter(|&v| self.probs[v] > 0.0)
            .collect()
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.log2())
            .sum::<f64>()
    }

    /// Marginal probabilities `P(x_i = 1)` for every coordinate.
    pub fn marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (v, &p) in self.probs.iter().enumerate() {
            for (i, m) in out.iter_mut().enumerate() {
                if v >> i & 1 == 1 {
                    *m += p;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `(state_index, probability)` rows with a header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state_index,probability")?;
        for (v, p) in self.probs.iter().enumerate() {
            writeln!(w, "{v},{p:e}")?;
        }
        Ok(())
    }
}

/// Product of Bernoulli factors over the free coordinates of a face, zero
/// outside the face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductDistribution {
    support: Face,
    /// `P(x_i = 1)` for each free coordinate, ascending coordinate order.
    theta: Vec<f64>,
}

impl ProductDistribution {
    pub fn new(support: Face, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != support.dim() {
            return Err(Error::InvalidDistribution(format!(
                "face has {} free coordinates but {} parameters were given",
                support.dim(),
                theta.len()
            )));
        }
        if let Some(t) = theta.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidDistribution(format!(
                "Bernoulli parameter {t} outside [0, 1]"
            )));
        }
        Ok(Self { support, theta })
    }

    /// Uniform distribution on a face.
    pub fn uniform_on(support: Face) -> Self {
        Self {
            theta: vec![0.5; support.dim()],
            support,
        }
    }

    pub fn support(&self) -> &Face {
        &self.support
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn n(&self) -> usize {
        self.support.n()
    }

    pub fn prob(&self, v: usize) -> f64 {
        if !self.support.contains(v) {
            return 0.0;
        }
        self.support
            .free_coords()
            .iter()
            .zip(&self.theta)
            .map(|(&i, &t)| if v >> i & 1 == 1 { t } else { 1.0 - t })
            .product()
    }

    pub fn densify(&self) -> Distribution {
        let mut probs = vec![0.0; 1 << self.n()];
        self.accumulate(1.0, &mut probs);
        Distribution::from_raw(self.n(), probs)
    }

    fn accumulate(&self, weight: f64, probs: &mut [f64]) {
        let coords = self.support.free_coords();
        for v in self.support.member_indices() {
            let p: f64 = coords
                .iter()
                .zip(&self.theta)
                .map(|(&i, &t)| if v >> i & 1 == 1 { t } else { 1.0 - t })
                .product();
            probs[v] += weight * p;
        }
    }
}

/// One weighted component of a [`MixtureOfProducts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub product: ProductDistribution,
}

/// Convex combination of product distributions with pairwise disjoint
/// face supports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr")]
pub struct MixtureOfProducts {
    n: usize,
    components: Vec<MixtureComponent>,
}

#[derive(Deserialize)]
struct MixtureRepr {
    n: usize,
    components: Vec<MixtureComponent>,
}

impl TryFrom<MixtureRepr> for MixtureOfProducts {
    type Error = Error;

    fn try_from(r: MixtureRepr) -> Result<Self> {
        let m = MixtureOfProducts::new(r.components)?;
        if m.n != r.n {
            return Err(Error::DimensionMismatch {
                expected: r.n,
                found: m.n,
            });
        }
        Ok(m)
    }
}

impl MixtureOfProducts {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidDistribution("mixture without components".into()))?;
        let n = first.product.n();
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if c.product.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: c.product.n(),
                });
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "component {i} has weight {}",
                    c.weight
                )));
            }
            total += c.weight;
            for (j, d) in components.iter().enumerate().skip(i + 1) {
                if !c.product.support().is_disjoint(d.product.support()) {
                    return Err(Error::InvalidPartition(format!(
                        "supports of components {i} and {j} overlap"
                    )));
                }
            }
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidDistribution(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(Self { n, components })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Index of the component with the largest weight (first on ties).
    pub fn heaviest_component(&self) -> usize {
        let mut best = 0;
        for (i, c) in self.components.iter().enumerate() {
            if c.weight > self.components[best].weight {
                best = i;
            }
        }
        best
    }

    /// The supports as a (possibly partial) cubical partition.
    pub fn support_partition(&self) -> Result<Partition> {
        Partition::from_faces(
            self.n,
            self.components
                .iter()
                .map(|c| *c.product.support())
                .collect(),
        )
    }

    pub fn densify(&self) -> Distribution {
        let mut probs = vec![0.0; 1 << self.n];
        for c in &self.components {
            c.product.accumulate(c.weight, &mut probs);
        }
        Distribution::from_raw(self.n, probs)
    }
}

/// Uniform distribution on the even-parity states.
pub fn parity_distribution(n: usize) -> Result<Distribution> {
    check_dim(n)?;
    let mass = 1.0 / (1usize << (n - 1)) as f64;
    let probs = (0..1usize << n)
        .map(|v| if v.count_ones() % 2 == 0 { mass } else { 0.0 })
        .collect();
    Ok(Distribution::from_raw(n, probs))
}

/// Draw from the flat Dirichlet on the simplex of `{0,1}^n`.
pub fn random_distribution(n: usize, seed: u64) -> Result<Distribution> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_distribution_with(n, &mut rng)
}

pub fn random_distribution_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Distribution> {
    check_dim(n)?;
    let weights = flat_dirichlet(1 << n, rng);
    Ok(Distribution::from_raw(n, weights))
}

/// Random mixture over the faces of a cubical (possibly partial) partition:
/// weights from the flat Dirichlet, Bernoulli parameters uniform in `[0, 1]`.
pub fn random_mixture(partition: &Partition, seed: u64) -> Result<MixtureOfProducts> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_mixture_with(partition, &mut rng)
}

pub fn random_mixture_with<R: Rng + ?Sized>(
    partition: &Partition,
    rng: &mut R,
) -> Result<MixtureOfProducts> {
    let faces = partition
        .faces()
        .ok_or_else(|| Error::InvalidPartition("mixture supports must be cubical".into()))?;
    let weights = flat_dirichlet(faces.len(), rng);
    let components = faces
        .iter()
        .zip(weights)
        .map(|(f, weight)| {
            let theta = (0..f.dim()).map(|_| rng.gen::<f64>()).collect();
            Ok(MixtureComponent {
                weight,
                product: ProductDistribution::new(*f, theta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureOfProducts::new(components)
}

pub(crate) fn flat_dirichlet<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Mass of a block together with the conditional distribution on it.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockConditional {
    pub mass: f64,
    /// `p^{X_i}`, zero outside the block. Uniform on the block when the
    /// block has zero mass.
    pub conditional: Distribution,
}

/// Splits `p(x) = p^{X_i}(x) p(X_i)` over the blocks of `partition`.
pub fn block_conditionals(
    p: &Distribution,
    partition: &Partition,
) -> Result<Vec<BlockConditional>> {
    if p.n() != partition.n() {
        return Err(Error::DimensionMismatch {
            expected: partition.n(),
            found: p.n(),
        });
    }
    Ok(partition
        .blocks()
        .iter()
        .map(|block| {
            let mass = p.mass(block);
            let mut probs = vec![0.0; p.len()];
            for &v in block {
                probs[v] = if mass > 0.0 {
                    p.prob(v) / mass
                } else {
                    1.0 / block.len() as f64
                };
            }
            BlockConditional {
                mass,
                conditional: Distribution::from_raw(p.n(), probs),
            }
        })
        .collect())
}
