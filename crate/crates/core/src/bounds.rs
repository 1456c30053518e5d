//! Closed-form bounds on the approximation error of RBMs and related
//! dimension counts. Logarithms are base 2 throughout.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{Error, Result};

/// `floor(log2(x))` for `x >= 1`.
fn floor_log2(x: u64) -> u32 {
    x.ilog2()
}

/// Smallest `m` for which an RBM with `n` visible units is a universal
/// approximator: `2^(n-1) - 1`.
pub fn universal_hidden_units(n: usize) -> u64 {
    (1u64 << (n - 1)) - 1
}

pub fn is_universal(n: usize, m: u64) -> bool {
    m >= universal_hidden_units(n)
}

/// Upper bound on `max_p D(p || RBM_{n,m})`:
/// `n - floor(log2(m+1)) - (m+1) / 2^floor(log2(m+1))`, and exactly zero
/// once `m >= 2^(n-1) - 1`.
pub fn max_error_bound(n: usize, m: u64) -> f64 {
    assert!(n >= 1, "n must be positive");
    if is_universal(n, m) {
        return 0.0;
    }
    let x = m + 1;
    let fl = floor_log2(x);
    n as f64 - fl as f64 - x as f64 / (1u64 << fl) as f64
}

/// Block-exponent bound for unions of disjoint product mixtures:
/// `sum over n_i > 1 of (n_i - 1) / 2^(n - n_i)`.
pub fn mixture_error_bound(n: usize, block_exponents: &[u32]) -> Result<f64> {
    let total: u128 = block_exponents
        .iter()
        .map(|&e| {
            if e as usize > n {
                u128::MAX / 2
            } else {
                1u128 << e
            }
        })
        .fold(0u128, |a, b| a.saturating_add(b));
    if total != 1u128 << n {
        return Err(Error::OutOfRange(format!(
            "block sizes 2^n_i sum to {total}, expected 2^{n}"
        )));
    }
    Ok(block_exponents
        .iter()
        .filter(|&&e| e > 1)
        .map(|&e| (e as f64 - 1.0) / (1u64 << (n - e as usize)) as f64)
        .sum())
}

/// Block exponents of the balanced cubical partition into `m + 1` blocks:
/// `l` blocks of exponent `k - 1` and `m + 1 - l` of exponent `k`, with
/// `k = n - floor(log2(m+1))`, `l = 2m + 2 - 2^(n-k+1)`.
pub fn balanced_block_exponents(n: usize, m: u64) -> Result<Vec<u32>> {
    let blocks = m + 1;
    if n == 0 || blocks > 1u64 << (n - 1) {
        return Err(Error::BlockCountOutOfRange {
            blocks: blocks as usize,
            max: if n == 0 { 0 } else { 1 << (n - 1) },
        });
    }
    let k = n as u32 - floor_log2(blocks);
    let l = 2 * blocks - (1u64 << (n as u32 - k + 1));
    let mut out = vec![k - 1; l as usize];
    out.extend(std::iter::repeat_n(k, (blocks - l) as usize));
    Ok(out)
}

/// `f(x) = log2(x) + 1 - floor(log2 x) - x / 2^floor(log2 x)`, the gap
/// between `log2` and its piecewise-linear interpolation at powers of two.
pub fn log_gap(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::OutOfRange(format!("f(x) needs x > 0, got {x}")));
    }
    let fl = exact_floor_log2(x);
    Ok(x.log2() + 1.0 - fl - x / fl.exp2())
}

/// `floor(log2 x)` read from the binary exponent, so that powers of two
/// land exactly on their own octave.
fn exact_floor_log2(x: f64) -> f64 {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    if exp == 0 {
        x.log2().floor()
    } else {
        (exp - 1023) as f64
    }
}

/// `c = -log2(ln 2) - (1 / ln 2 - 1)`, the maximum of [`log_gap`].
pub fn log_gap_max() -> f64 {
    -LN_2.log2() - (1.0 / LN_2 - 1.0)
}

/// Location of the maximum of [`log_gap`] in the octave containing `x`.
pub fn log_gap_argmax(x: f64) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::OutOfRange(format!("x must be positive, got {x}")));
    }
    Ok(exact_floor_log2(x).exp2() / LN_2)
}

/// Smallest `m >= 2^((n-1)(1-eps) + 0.1) - 1`; guarantees
/// `max_error_bound(n, m) <= eps * (n - 1)`.
pub fn hidden_units_for_tolerance(n: usize, epsilon: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::OutOfRange(format!(
            "tolerance {epsilon} outside [0, 1]"
        )));
    }
    let threshold = ((n as f64 - 1.0) * (1.0 - epsilon) + 0.1).exp2() - 1.0;
    Ok(threshold.ceil().max(0.0) as u64)
}

/// Dimension of the mixture class on `m + 1 = 2^k` equal faces, the RBM
/// parameter count, and their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimensionReport {
    pub dim_mixture_class: f64,
    pub dim_rbm_param_upper: f64,
    pub gap: f64,
}

pub fn dimension_report(n: usize, m: u64) -> Result<DimensionReport> {
    let blocks = m + 1;
    if !blocks.is_power_of_two() {
        return Err(Error::OutOfRange(format!(
            "m + 1 = {blocks} is not a power of two"
        )));
    }
    let (n, m) = (n as f64, m as f64);
    let log_blocks = floor_log2(blocks) as f64;
    let dim_mixture_class = (m + 1.0) * n + (m + 1.0) + n - (m + 1.0) * log_blocks;
    let dim_rbm_param_upper = m * n + m + n;
    Ok(DimensionReport {
        dim_mixture_class,
        dim_rbm_param_upper,
        gap: n + 1.0 - (m + 1.0) * log_blocks,
    })
}

/// `(2^(n-1) - 1, ceil(2^n / (n+1)) - 1)`: hidden units sufficient for
/// universality and the parameter-count lower bound for it.
pub fn reference_constants(n: usize) -> (u64, u64) {
    let size = 1u64 << n;
    let lower = size.div_ceil(n as u64 + 1) - 1;
    (universal_hidden_units(n), lower)
}

/// One row of the bound table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub m: u64,
    pub bound: f64,
    /// `(n-1) - log2(m+1)`
    pub lower_envelope: f64,
    /// `(n-1) - log2(m+1) + c`
    pub upper_envelope: f64,
    pub universal: bool,
}

pub fn bound_report(n: usize, m: u64) -> BoundReport {
    let lower = (n as f64 - 1.0) - ((m + 1) as f64).log2();
    BoundReport {
        n,
        m,
        bound: max_error_bound(n, m),
        lower_envelope: lower,
        upper_envelope: lower + log_gap_max(),
        universal: is_universal(n, m),
    }
}
