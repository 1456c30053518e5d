//! Kullback-Leibler divergence and closed-form rI-projections.
//!
//! All divergences are in bits. The projection onto a model `M` is the
//! minimizer of `D(p || q)` over the closure of `M`:
//!
//! | model | projection |
//! |-------|------------|
//! | independence on a face | product of the single-coordinate marginals |
//! | partition model | `p(X_i) / |X_i|` on block `X_i` |
//! | disjoint product mixture | `p(X_i)` times the independence projection of `p^{X_i}` |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::distributions::{block_conditionals, Distribution, ProductDistribution};
use crate::error::{Error, Result};
use crate::statespace::{enumerate_cubical_partitions, Face, Partition};

/// A non-negative extended real: a finite number of bits or `+inf`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn is_finite(&self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Divergence::Finite(d) => Some(d),
            Divergence::Infinite => None,
        }
    }

    /// The value as an `f64`, `f64::INFINITY` for the infinite case.
    pub fn to_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Finite(d) => write!(f, "{d}"),
            Divergence::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Divergence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Divergence::Finite(d) => s.serialize_f64(*d),
            Divergence::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Divergence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(Divergence::Finite(x)),
            Repr::Text(t) if t == "inf" => Ok(Divergence::Infinite),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad divergence {t:?}"))),
        }
    }
}

/// `D(p || q) = sum_x p(x) log2(p(x) / q(x))`; infinite when `supp p` is not
/// contained in `supp q`.
pub fn kl(p: &Distribution, q: &Distribution) -> Result<Divergence> {
    if p.n() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            found: q.n(),
        });
    }
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        if a > 0.0 {
            if b <= 0.0 {
                return Ok(Divergence::Infinite);
            }
            total += a * (a / b).log2();
        }
    }
    // rounding can leave a tiny negative sum when p and q agree
    Ok(Divergence::Finite(total.max(0.0)))
}

/// A projection together with the divergence from the source to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub projection: Distribution,
    #[serde(rename = "divergence_bits")]
    pub divergence: Divergence,
}

impl ProjectionResult {
    fn from_projection(p: &Distribution, projection: Distribution) -> Result<Self> {
        let divergence = kl(p, &projection)?;
        Ok(Self {
            projection,
            divergence,
        })
    }
}

/// The model classes with closed-form projections.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelClass {
    /// Product distributions supported on a face.
    Independence(Face),
    /// Distributions constant on each block.
    Partition(Partition),
    /// Mixtures of product distributions on the (cubical) blocks.
    DisjointProductMixture(Partition),
}

impl ModelClass {
    /// Mixture model over a cubical partition.
    pub fn mixture(partition: Partition) -> Result<Self> {
        check_cubical(&partition)?;
        Ok(ModelClass::DisjointProductMixture(partition))
    }

    pub fn n(&self) -> usize {
        match self {
            ModelClass::Independence(f) => f.n(),
            ModelClass::Partition(p) | ModelClass::DisjointProductMixture(p) => p.n(),
        }
    }
}

fn check_cubical(partition: &Partition) -> Result<&[Face]> {
    match partition.faces() {
        Some(f) => Ok(f),
        None => {
            let bad = partition
                .blocks()
                .iter()
                .position(|b| Face::from_states(partition.n(), b).is_none())
                .unwrap_or(0);
            Err(Error::NonCubicalBlock(bad))
        }
    }
}

fn check_dims(p: &Distribution, n: usize) -> Result<()> {
    if p.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.n(),
        });
    }
    Ok(())
}

/// Product of the marginals of `p` over the free coordinates of `face`,
/// after conditioning on the face. A zero-mass face gives the uniform
/// product.
pub(crate) fn marginal_product(p: &Distribution, face: &Face) -> ProductDistribution {
    let coords = face.free_coords();
    let mut ones = vec![0.0; coords.len()];
    let mut mass = 0.0;
    for v in face.member_indices() {
        let pv = p.prob(v);
        mass += pv;
        for (k, &i) in coords.iter().enumerate() {
            if v >> i & 1 == 1 {
                ones[k] += pv;
            }
        }
    }
    let theta = if mass > 0.0 {
        ones.iter().map(|o| (o / mass).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.5; coords.len()]
    };
    ProductDistribution::new(*face, theta).expect("marginals lie in [0, 1]")
}

/// Projection onto the independence model of a face. Requires
/// `supp p ⊆ face`; the divergence is the multiinformation of `p`.
pub fn project_independence(p: &Distribution, support: &Face) -> Result<ProjectionResult> {
    check_dims(p, support.n())?;
    let outside: f64 = p
        .probs()
        .iter()
        .enumerate()
        .filter(|(v, _)| !support.contains(*v))
        .map(|(_, &q)| q)
        .sum();
    if outside > 0.0 {
        return Err(Error::SupportViolation { mass: outside });
    }
    let projection = marginal_product(p, support).densify();
    ProjectionResult::from_projection(p, projection)
}

/// Projection onto the partition model: `p(X_i) / |X_i|` on each block.
/// States outside a partial partition receive zero.
pub fn project_partition(p: &Distribution, partition: &Partition) -> Result<ProjectionResult> {
    check_dims(p, partition.n())?;
    let mut probs = vec![0.0; p.len()];
    for block in partition.blocks() {
        let level = p.mass(block) / block.len() as f64;
        for &v in block {
            probs[v] = level;
        }
    }
    ProjectionResult::from_projection(p, Distribution::from_raw(p.n(), probs))
}

/// Projection onto the mixture of independence models on the blocks of a
/// cubical partition.
pub fn project_disjoint_mixture(
    p: &Distribution,
    partition: &Partition,
) -> Result<ProjectionResult> {
    check_dims(p, partition.n())?;
    let faces = check_cubical(partition)?;
    let mut probs = vec![0.0; p.len()];
    for (face, bc) in faces.iter().zip(block_conditionals(p, partition)?) {
        if bc.mass == 0.0 {
            continue;
        }
        let product = marginal_product(&bc.conditional, face);
        for v in face.member_indices() {
            probs[v] = bc.mass * product.prob(v);
        }
    }
    ProjectionResult::from_projection(p, Distribution::from_raw(p.n(), probs))
}

/// Projection onto any [`ModelClass`].
pub fn project(p: &Distribution, model: &ModelClass) -> Result<ProjectionResult> {
    match model {
        ModelClass::Independence(face) => project_independence(p, face),
        ModelClass::Partition(xi) => project_partition(p, xi),
        ModelClass::DisjointProductMixture(xi) => project_disjoint_mixture(p, xi),
    }
}

/// `½(δ_x + δ_y)` for the two opposite corners of a face, or `δ` when the
/// face is a single vertex.
fn opposite_corners(face: &Face) -> Distribution {
    let x = face.fixed_values();
    let y = x | face.free_mask();
    Distribution::uniform_on(face.n(), &[x, y]).expect("corners lie in the cube")
}

/// Largest block, first on ties.
fn largest_block(partition: &Partition) -> usize {
    let sizes = partition.block_sizes();
    let mut best = 0;
    for (i, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = i;
        }
    }
    best
}

/// Maximal divergence `max_p D(p || M)` in bits, with a distribution that
/// attains it.
pub fn max_divergence(model: &ModelClass) -> Result<(f64, Distribution)> {
    match model {
        ModelClass::Independence(face) => {
            let value = face.dim().saturating_sub(1) as f64;
            Ok((value, opposite_corners(face)))
        }
        ModelClass::Partition(xi) => {
            require_covering(xi)?;
            let i = largest_block(xi);
            let block = &xi.blocks()[i];
            let value = (block.len() as f64).log2();
            Ok((value, Distribution::point_mass(xi.n(), block[0])?))
        }
        ModelClass::DisjointProductMixture(xi) => {
            require_covering(xi)?;
            let faces = check_cubical(xi)?;
            let face = &faces[largest_block(xi)];
            // singleton blocks would give log 1 - 1 < 0; clamp to 0
            let value = face.dim().saturating_sub(1) as f64;
            Ok((value, opposite_corners(face)))
        }
    }
}

fn require_covering(xi: &Partition) -> Result<()> {
    if xi.is_covering() {
        Ok(())
    } else {
        Err(Error::InvalidPartition(
            "maximal divergence of a model that does not cover the cube is infinite".into(),
        ))
    }
}

fn best_over_partitions<F>(
    p: &Distribution,
    max_blocks: usize,
    project_onto: F,
) -> Result<(Partition, ProjectionResult)>
where
    F: Fn(&Distribution, &Partition) -> Result<ProjectionResult>,
{
    let mut best: Option<(Partition, ProjectionResult)> = None;
    for xi in enumerate_cubical_partitions(p.n(), max_blocks)? {
        let r = project_onto(p, &xi)?;
        let better = match &best {
            None => true,
            Some((_, b)) => r.divergence < b.divergence,
        };
        if better {
            best = Some((xi, r));
        }
    }
    best.ok_or_else(|| Error::OutOfRange(format!("max_blocks = {max_blocks} admits no partition")))
}

/// Best partition-model approximation over all cubical partitions with at
/// most `max_blocks` blocks. Ties keep the earliest partition in
/// enumeration order.
pub fn best_partition_projection(
    p: &Distribution,
    max_blocks: usize,
) -> Result<(Partition, ProjectionResult)> {
    best_over_partitions(p, max_blocks, project_partition)
}

/// Like [`best_partition_projection`] for disjoint product mixtures.
pub fn best_mixture_projection(
    p: &Distribution,
    max_blocks: usize,
) -> Result<(Partition, ProjectionResult)> {
    best_over_partitions(p, max_blocks, project_disjoint_mixture)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{parity_distribution, random_distribution};
    use crate::statespace::balanced_cubical_partition;

    fn two_edge_partition() -> Partition {
        Partition::from_faces(
            2,
            vec![
                Face::new(2, 0b10, 0b10).unwrap(),
                Face::new(2, 0b10, 0).unwrap(),
            ],
        )
        .unwrap()
    }

    fn bits(d: Divergence) -> f64 {
        d.finite().expect("finite divergence")
    }

    #[test]
    fn kl_of_point_mass_to_uniform() {
        for n in 1..=8 {
            let d = kl(
                &Distribution::point_mass(n, 3 % (1 << n)).unwrap(),
                &Distribution::uniform(n).unwrap(),
            )
            .unwrap();
            assert!((bits(d) - n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_basic_cases() {
        let p = random_distribution(3, 1).unwrap();
        assert_eq!(kl(&p, &p).unwrap(), Divergence::Finite(0.0));
        let half = Distribution::uniform_on(2, &[0, 3]).unwrap();
        let d = kl(&half, &Distribution::uniform(2).unwrap()).unwrap();
        assert!((bits(d) - 1.0).abs() < 1e-15);
        let d = kl(&Distribution::uniform(2).unwrap(), &half).unwrap();
        assert_eq!(d, Divergence::Infinite);
        assert!(kl(&half, &Distribution::uniform(3).unwrap()).is_err());
    }

    #[test]
    fn independence_of_product_is_exact() {
        let face = Face::full(3).unwrap();
        let q = ProductDistribution::new(face, vec![0.2, 0.7, 0.5])
            .unwrap()
            .densify();
        let r = project_independence(&q, &face).unwrap();
        assert!(bits(r.divergence) < 1e-14);
        assert!(r.projection.max_abs_diff(&q) < 1e-15);
    }

    #[test]
    fn independence_of_complementary_pair() {
        for n in 1..=6 {
            let x = 0b10110 & ((1 << n) - 1);
            let y = !x & ((1 << n) - 1);
            let p = Distribution::uniform_on(n, &[x, y]).unwrap();
            let r = project_independence(&p, &Face::full(n).unwrap()).unwrap();
            assert!(
                r.projection
                    .max_abs_diff(&Distribution::uniform(n).unwrap())
                    < 1e-15
            );
            assert!((bits(r.divergence) - (n as f64 - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn independence_rejects_mass_outside_face() {
        let p = Distribution::uniform(2).unwrap();
        let face = Face::new(2, 0b01, 0).unwrap();
        assert!(matches!(
            project_independence(&p, &face),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn partition_projection_examples() {
        let u = Distribution::uniform(2).unwrap();
        assert!(
            bits(
                project_partition(&u, &two_edge_partition())
                    .unwrap()
                    .divergence
            ) < 1e-15
        );
        let d = Distribution::point_mass(2, 3).unwrap();
        let r = project_partition(&d, &two_edge_partition()).unwrap();
        assert_eq!(r.projection.probs(), &[0.0, 0.0, 0.5, 0.5]);
        assert!((bits(r.divergence) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_point_mass_on_two_faces_costs_k() {
        let n = 6;
        let top = (1 << n) - 1;
        let p = Distribution::uniform_on(n, &[0, top]).unwrap();
        for k in 0..n {
            // free coordinates 0..k, the rest fixed to all-zeros / all-ones
            let free = (1 << k) - 1;
            let xi = Partition::from_faces(
                n,
                vec![
                    Face::through(n, 0, free).unwrap(),
                    Face::through(n, top, free).unwrap(),
                ],
            )
            .unwrap();
            let r = project_partition(&p, &xi).unwrap();
            assert!((bits(r.divergence) - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn two_edge_mixture_spans_simplex() {
        for seed in 0..20 {
            let p = random_distribution(2, seed).unwrap();
            let r = project_disjoint_mixture(&p, &two_edge_partition()).unwrap();
            assert!(bits(r.divergence) < 1e-12);
        }
    }

    #[test]
    fn mixture_requires_cubical_blocks() {
        let xi = crate::statespace::exchangeable_partition(2).unwrap();
        let p = Distribution::uniform(2).unwrap();
        assert!(matches!(
            project_disjoint_mixture(&p, &xi),
            Err(Error::NonCubicalBlock(1))
        ));
        assert!(ModelClass::mixture(xi).is_err());
    }

    #[test]
    fn max_divergence_values() {
        let (v, w) = max_divergence(&ModelClass::Independence(Face::full(3).unwrap())).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(w.support(), vec![0, 7]);
        let (v, w) = max_divergence(&ModelClass::Partition(two_edge_partition())).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(w.support().len(), 1);
        for n in 1..=5 {
            let one = Partition::from_faces(n, vec![Face::full(n).unwrap()]).unwrap();
            let (v, _) = max_divergence(&ModelClass::Partition(one)).unwrap();
            assert_eq!(v, n as f64);
        }
        let singles = Partition::from_blocks(1, vec![vec![0], vec![1]]).unwrap();
        let (v, _) = max_divergence(&ModelClass::mixture(singles).unwrap()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn best_partition_examples() {
        let u = Distribution::uniform(3).unwrap();
        for mb in 1..=4 {
            let (_, r) = best_partition_projection(&u, mb).unwrap();
            assert!(bits(r.divergence) < 1e-15);
        }
        let parity = parity_distribution(3).unwrap();
        let (xi, r) = best_partition_projection(&parity, 2).unwrap();
        assert!(bits(r.divergence) <= 2.0 + 1e-12);
        assert!(xi.len() <= 2);
        let delta = Distribution::point_mass(3, 5).unwrap();
        let (xi, r) = best_partition_projection(&delta, 4).unwrap();
        let b = xi.block_of(5).unwrap();
        assert_eq!(
            xi.blocks()[b].len(),
            *xi.block_sizes().iter().min().unwrap()
        );
        assert!((bits(r.divergence) - (xi.blocks()[b].len() as f64).log2()).abs() < 1e-12);
    }

    #[test]
    fn balanced_partition_witness_matches_projection() {
        let xi = balanced_cubical_partition(4, 3).unwrap();
        for model in [
            ModelClass::Partition(xi.clone()),
            ModelClass::mixture(xi).unwrap(),
        ] {
            let (v, w) = max_divergence(&model).unwrap();
            let r = project(&w, &model).unwrap();
            assert!((bits(r.divergence) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_json_uses_bits_field() {
        let r = project_partition(
            &Distribution::point_mass(2, 3).unwrap(),
            &two_edge_partition(),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        assert_eq!(v["divergence_bits"], 1.0);
        let inf = serde_json::to_string(&Divergence::Infinite).unwrap();
        assert_eq!(
            serde_json::from_str::<Divergence>(&inf).unwrap(),
            Divergence::Infinite
        );
    }
}
