//! Hybrid dilated convolution analysis.
//!
//! For a stack of `K x K` convolutions with dilation rates `[r_1, ..., r_n]`,
//! the maximum distance between two nonzero taps seen by layer `i` obeys
//!
//! ```text
//! M_n = r_n
//! M_i = max(M_{i+1} - 2 r_i, M_{i+1} - 2 (M_{i+1} - r_i), r_i)
//! ```
//!
//! and a pattern avoids gridding when `M_2 <= K`. Single-layer patterns are
//! judged by `r_1 <= K`.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Dilation rates of consecutive `kernel x kernel` convolutions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DilationPattern {
    rates: Vec<usize>,
    kernel: usize,
}

impl DilationPattern {
    pub fn new(rates: Vec<usize>, kernel: usize) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Argument("dilation pattern must have at least one rate".into()));
        }
        if rates.contains(&0) {
            return Err(Error::Argument("dilation rates must be >= 1".into()));
        }
        if kernel < 3 || kernel.is_multiple_of(2) {
            return Err(Error::Argument(alloc::format!(
                "kernel must be odd and >= 3, got {kernel}"
            )));
        }
        Ok(DilationPattern { rates, kernel })
    }

    pub fn rates(&self) -> &[usize] {
        &self.rates
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HdcReport {
    /// `M_1 ..= M_n`.
    pub gaps: Vec<usize>,
    pub valid: bool,
    /// 1-based index of the gap that fails the check (2 for `M_2`).
    pub failing_index: Option<usize>,
}

impl HdcReport {
    /// The gap the verdict is based on: `M_2`, or `M_1` for one layer.
    pub fn checked_gap(&self) -> usize {
        *self.gaps.get(1).unwrap_or(&self.gaps[0])
    }
}

/// Gap sequence `M_1 ..= M_n`.
pub fn hdc_max_gap(pattern: &DilationPattern) -> Vec<usize> {
    let rates = pattern.rates();
    let n = rates.len();
    let mut gaps = vec![0usize; n];
    gaps[n - 1] = rates[n - 1];
    for i in (0..n - 1).rev() {
        let next = gaps[i + 1] as i64;
        let r = rates[i] as i64;
        let m = (next - 2 * r).max(2 * r - next).max(r);
        gaps[i] = m as usize;
    }
    gaps
}

pub fn hdc_validate(pattern: &DilationPattern) -> HdcReport {
    let gaps = hdc_max_gap(pattern);
    let (idx, gap) = if gaps.len() >= 2 { (2, gaps[1]) } else { (1, gaps[0]) };
    let valid = gap <= pattern.kernel();
    HdcReport {
        gaps,
        valid,
        failing_index: (!valid).then_some(idx),
    }
}

/// Side of the input square seen by one output pixel of a stride-1 stack of
/// `(kernel, dilation)` layers: `1 + sum (K_i - 1) r_i`.
pub fn receptive_field(layers: &[(usize, usize)]) -> Result<usize> {
    if layers.is_empty() {
        return Err(Error::Argument("receptive field of an empty stack".into()));
    }
    let mut rf = 1;
    for &(k, r) in layers {
        if k == 0 || k % 2 == 0 || r == 0 {
            return Err(Error::Argument(alloc::format!(
                "layer ({k}, {r}) needs an odd kernel and dilation >= 1"
            )));
        }
        rf += (k - 1) * r;
    }
    Ok(rf)
}
