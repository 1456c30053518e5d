//! Explicit RBM parameters for mixtures of product distributions with
//! disjoint cubical supports.
//!
//! Appending a hidden unit with weights `w` and bias `c` multiplies the
//! unnormalized visible distribution by `1 + exp(w·v + c)`. Choosing
//!
//! ```text
//! w_i = a (2 u_i - 1)          for coordinates i fixed on the face F
//! w_i = β_i - η_i              for free coordinates
//! c   = -a |{i fixed : u_i = 1}| + λ_c
//! ```
//!
//! gives `w·v + c = -a·d(v, F) + (β - η)·v + λ_c`, where `d(v, F)` counts
//! the fixed coordinates on which `v` leaves the face. Off the face the unit
//! is switched off at rate `e^{-a}` per step; on the face it adds mass
//! proportional to the product distribution with natural parameters `β`.
//! With `p(v) = K exp(η·v)` on `F` and
//! `exp(λ_c) = α / ((1 - α) K Σ_{v∈F} exp(β·v))` the new visible
//! distribution tends to `(1 - α) p + α p̂` as `a → ∞`.
//!
//! The sharpness `a` here is the suppression per Hamming step; the same
//! construction written with a half-step scale uses `2a`. Each unit's
//! fixed-coordinate weights are raised from `a` by the largest input the
//! unit receives on its own face, so that its input is at most `-a d(v, F)`
//! everywhere off the face. Earlier units then perturb `ln p` by at most
//! `e^{-a}` on the faces of later ones, and those restrictions stay
//! products up to that error.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    Distribution, MixtureComponent, MixtureOfProducts, ProductDistribution,
};
use crate::error::{Error, Result};
use crate::rbm::{log_visible_distribution, softplus, RbmParams};
use crate::statespace::Face;

pub const DEFAULT_SHARPNESS: f64 = 30.0;

/// Residual (in log-probability) above which a face restriction is not
/// treated as a product distribution.
pub const PRODUCT_TOL: f64 = 1e-8;

/// Cap on `|λ_c|`, reached when `α` is 0 or 1.
pub const LAMBDA_C_CAP: f64 = 500.0;

/// Cap on the natural parameter of a free coordinate (Bernoulli 0 or 1).
pub const FREE_LOGIT_CAP: f64 = 40.0;

/// Component to append: a product with natural parameters `beta` on `face`,
/// mixed in with weight `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppendSpec {
    pub face: Face,
    /// One natural parameter per free coordinate, ascending coordinate order.
    pub beta: Vec<f64>,
    pub alpha: f64,
    pub sharpness: f64,
}

impl AppendSpec {
    pub fn new(face: Face, beta: Vec<f64>, alpha: f64, sharpness: f64) -> Result<Self> {
        let spec = Self {
            face,
            beta,
            alpha,
            sharpness,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_product(product: &ProductDistribution, alpha: f64, sharpness: f64) -> Result<Self> {
        let beta = product
            .theta()
            .iter()
            .map(|&t| capped_logit(t, FREE_LOGIT_CAP))
            .collect();
        Self::new(*product.support(), beta, alpha, sharpness)
    }

    fn validate(&self) -> Result<()> {
        if self.beta.len() != self.face.dim() {
            return Err(Error::InvalidParams(format!(
                "face has {} free coordinates but beta has {} entries",
                self.face.dim(),
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParams("non-finite natural parameter".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParams(format!(
                "mixture weight {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.sharpness.is_finite() && self.sharpness > 0.0) {
            return Err(Error::InvalidParams(format!(
                "sharpness {} must be positive",
                self.sharpness
            )));
        }
        Ok(())
    }
}

/// `logit(t)` clipped to `[-cap, cap]`.
pub fn capped_logit(t: f64, cap: f64) -> f64 {
    let l = t.ln() - (1.0 - t).ln();
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-cap, cap)
    }
}

/// Least-squares fit `ln p(v) ≈ ln K + η·v` over a face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFit {
    pub log_k: f64,
    /// Per free coordinate, ascending.
    pub eta: Vec<f64>,
    /// Largest absolute deviation of the fit.
    pub residual: f64,
}

/// The faces form a full two-level factorial design over their free
/// coordinates, so the least-squares coefficients are the main-effect
/// contrasts and the intercept is `mean - Σ η / 2`.
pub fn fit_face(log_p: &[f64], face: &Face) -> FaceFit {
    let coords = face.free_coords();
    let members = face.member_indices();
    let half = members.len() as f64 / 2.0;
    let mean = members.iter().map(|&v| log_p[v]).sum::<f64>() / members.len() as f64;
    let eta: Vec<f64> = coords
        .iter()
        .map(|&i| {
            let (mut on, mut off) = (0.0, 0.0);
            for &v in &members {
                if v >> i & 1 == 1 {
                    on += log_p[v];
                } else {
                    off += log_p[v];
                }
            }
            (on - off) / half
        })
        .collect();
    let log_k = mean - eta.iter().sum::<f64>() / 2.0;
    let residual = members
        .iter()
        .map(|&v| {
            let fit: f64 = log_k
                + coords
                    .iter()
                    .zip(&eta)
                    .filter(|(&i, _)| v >> i & 1 == 1)
                    .map(|(_, e)| e)
                    .sum::<f64>();
            (log_p[v] - fit).abs()
        })
        .fold(0.0, f64::max);
    FaceFit {
        log_k,
        eta,
        residual,
    }
}

/// Appends one hidden unit so that the visible distribution approaches
/// `(1 - α) p + α p̂` as the sharpness grows. Fails with
/// [`Error::NotProduct`] if the current distribution restricted to the face
/// is not a product distribution (log residual at least [`PRODUCT_TOL`]).
pub fn append_component(params: &RbmParams, spec: &AppendSpec) -> Result<RbmParams> {
    append_with_tolerance(params, spec, PRODUCT_TOL)
}

fn append_with_tolerance(params: &RbmParams, spec: &AppendSpec, tol: f64) -> Result<RbmParams> {
    spec.validate()?;
    if spec.face.n() != params.n() {
        return Err(Error::DimensionMismatch {
            expected: params.n(),
            found: spec.face.n(),
        });
    }
    let log_p = log_visible_distribution(params)?;
    let fit = fit_face(&log_p, &spec.face);
    if fit.residual >= tol {
        return Err(Error::NotProduct {
            residual: fit.residual,
        });
    }

    let log_norm_beta: f64 = spec.beta.iter().map(|&b| softplus(b)).sum();
    let log_ratio = spec.alpha.ln() - (1.0 - spec.alpha).ln();
    let lambda_c = (log_ratio - fit.log_k - log_norm_beta).clamp(-LAMBDA_C_CAP, LAMBDA_C_CAP);
    let lambda: Vec<f64> = spec.beta.iter().zip(&fit.eta).map(|(b, e)| b - e).collect();
    let peak = lambda_c + lambda.iter().map(|l| l.max(0.0)).sum::<f64>();
    let a = spec.sharpness + peak.max(0.0);

    let n = params.n();
    let mut w = vec![0.0; n];
    let (mask, values) = (spec.face.fixed_mask(), spec.face.fixed_values());
    for (i, wi) in w.iter_mut().enumerate() {
        if mask >> i & 1 == 1 {
            *wi = if values >> i & 1 == 1 { a } else { -a };
        }
    }
    for (&i, l) in spec.face.free_coords().iter().zip(lambda) {
        w[i] = l;
    }
    let c = -a * values.count_ones() as f64 + lambda_c;

    let mut out = params.clone();
    out.push_hidden(&w, c)?;
    Ok(out)
}

/// Order in which components are realized: the base first, then the rest by
/// descending face dimension (stable).
pub fn append_order(target: &MixtureOfProducts, base_index: usize) -> Vec<usize> {
    let comps = target.components();
    let mut rest: Vec<usize> = (0..comps.len()).filter(|&i| i != base_index).collect();
    rest.sort_by_key(|&i| std::cmp::Reverse(comps[i].product.support().dim()));
    std::iter::once(base_index).chain(rest).collect()
}

/// RBM with `len - 1` hidden units whose visible distribution converges to
/// the mixture as the sharpness grows.
///
/// The base component is realized by the visible biases alone: logits of
/// its Bernoulli parameters on free coordinates and `±a/2` on the
/// coordinates its face fixes. Each further component is appended with step
/// weight `α_i / Σ_{j ≤ i} α_j` (in append order), so that the final weights
/// equal the targets. A component with no mass at or before it gets a
/// neutral unit (zero weights).
pub fn build_mixture_rbm(
    target: &MixtureOfProducts,
    base_index: usize,
    sharpness: f64,
) -> Result<RbmParams> {
    let comps = target.components();
    if base_index >= comps.len() {
        return Err(Error::OutOfRange(format!(
            "base index {base_index} for a mixture of {} components",
            comps.len()
        )));
    }
    if !(sharpness.is_finite() && sharpness > 0.0) {
        return Err(Error::InvalidParams(format!(
            "sharpness {sharpness} must be positive"
        )));
    }
    let n = target.n();
    let order = append_order(target, base_index);

    let base = &comps[base_index].product;
    let face = base.support();
    let mut b = vec![0.0; n];
    for (i, bi) in b.iter_mut().enumerate() {
        if face.fixed_mask() >> i & 1 == 1 {
            *bi = if face.fixed_values() >> i & 1 == 1 {
                sharpness / 2.0
            } else {
                -sharpness / 2.0
            };
        }
    }
    for (&i, &t) in face.free_coords().iter().zip(base.theta()) {
        b[i] = capped_logit(t, FREE_LOGIT_CAP);
    }
    let mut params = RbmParams::independent(b)?;

    let mut mass_so_far = comps[base_index].weight;
    for &idx in &order[1..] {
        let comp = &comps[idx];
        mass_so_far += comp.weight;
        if mass_so_far <= 0.0 {
            params.push_hidden(&vec![0.0; n], 0.0)?;
            continue;
        }
        let step = (comp.weight / mass_so_far).clamp(0.0, 1.0);
        let spec = AppendSpec::from_product(&comp.product, step, sharpness)?;
        // Disjoint faces make every restriction a product in the limit; at
        // finite sharpness the other units leak O(e^{-a/2}) onto the face.
        params = append_with_tolerance(&params, &spec, f64::INFINITY)?;
    }
    Ok(params)
}

/// Splits `target` over the cover's faces (edges or single vertices) and
/// builds the corresponding mixture RBM with `cover.len() - 1` hidden units.
pub fn build_support_cover_rbm(
    target: &Distribution,
    cover: &[Face],
    sharpness: f64,
) -> Result<RbmParams> {
    let n = target.n();
    if cover.is_empty() {
        return Err(Error::InvalidCover("empty cover".into()));
    }
    for (i, f) in cover.iter().enumerate() {
        if f.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: f.n(),
            });
        }
        if f.dim() > 1 {
            return Err(Error::InvalidCover(format!(
                "element {i} has dimension {}, not an edge",
                f.dim()
            )));
        }
        for (j, g) in cover.iter().enumerate().skip(i + 1) {
            if !f.is_disjoint(g) {
                return Err(Error::InvalidCover(format!("elements {i} and {j} overlap")));
            }
        }
    }
    let uncovered: f64 = target
        .probs()
        .iter()
        .enumerate()
        .filter(|(v, _)| !cover.iter().any(|f| f.contains(*v)))
        .map(|(_, &p)| p)
        .sum();
    if uncovered > 0.0 {
        return Err(Error::InvalidCover(format!(
            "mass {uncovered:e} lies outside the cover"
        )));
    }

    let masses: Vec<f64> = cover
        .iter()
        .map(|f| target.mass(&f.member_indices()))
        .collect();
    let total: f64 = masses.iter().sum();
    let components = cover
        .iter()
        .zip(&masses)
        .map(|(f, &mass)| {
            let theta = f
                .free_coords()
                .iter()
                .map(|&i| {
                    if mass > 0.0 {
                        let ones: f64 = f
                            .member_indices()
                            .into_iter()
                            .filter(|v| v >> i & 1 == 1)
                            .map(|v| target.prob(v))
                            .sum();
                        (ones / mass).clamp(0.0, 1.0)
                    } else {
                        0.5
                    }
                })
                .collect();
            Ok(MixtureComponent {
                weight: mass / total,
                product: ProductDistribution::new(*f, theta)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mixture = MixtureOfProducts::new(components)?;
    build_mixture_rbm(&mixture, mixture.heaviest_component(), sharpness)
}

/// Greedy matching on the Hamming-distance-1 graph of `support`: each
/// unmatched state (ascending) pairs with its smallest unmatched neighbour
/// in the support, or stays a single vertex.
pub fn find_edge_cover(n: usize, support: &[usize]) -> Result<Vec<Face>> {
    let mut states = support.to_vec();
    states.sort_unstable();
    states.dedup();
    let mut matched = vec![false; states.len()];
    let mut cover = Vec::new();
    for a in 0..states.len() {
        if matched[a] {
            continue;
        }
        matched[a] = true;
        let s = states[a];
        let partner =
            (a + 1..states.len()).find(|&b| !matched[b] && (states[b] ^ s).count_ones() == 1);
        match partner {
            Some(b) => {
                matched[b] = true;
                cover.push(Face::through(n, s, states[b] ^ s)?);
            }
            None => cover.push(Face::vertex(n, s)?),
        }
    }
    Ok(cover)
}
