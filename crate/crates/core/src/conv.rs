//! Stride-1 dilated 2-D convolution with zero padding.
//!
//! [`conv2d_naive`] is the direct seven-loop definition and serves as the
//! reference. [`conv2d_forward`] and [`conv2d_backward`] lower the same
//! operation to im2col followed by a matrix multiply; they must agree with
//! the reference to rounding error.
//!
//! Semantics, for every batch entry `n` and output channel `o`:
//!
//! ```text
//! out[n,o,i,j] = bias[o] + sum_{c,u,v} in_pad[n, c, i + r*u, j + r*v] * w[o, c, u, v]
//! ```
//!
//! where `in_pad` is the input surrounded by `p` zeros on every side.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::shape_err;
use crate::{Result, Shape4, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel,
            dilation,
            padding,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec whose output has the same spatial size as its input,
    /// `p = r * (K - 1) / 2`.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Result<Self> {
        let padding = dilation * kernel.saturating_sub(1) / 2;
        Self::new(in_channels, out_channels, kernel, dilation, padding)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(shape_err!("conv channel counts must be positive: {:?}", self));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(shape_err!("conv kernel must be odd and positive, got {}", self.kernel));
        }
        if self.dilation == 0 {
            return Err(shape_err!("conv dilation must be >= 1"));
        }
        Ok(())
    }

    pub fn is_same_padded(&self) -> bool {
        self.padding == self.dilation * (self.kernel - 1) / 2
    }

    /// Span of the dilated kernel, `r * (K - 1) + 1`.
    pub fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    /// Rows in the im2col matrix, `C * K * K`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output spatial size for an `h x w` input, or `None` if the kernel
    /// does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let span = self.effective_kernel();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < span || wp < span {
            return None;
        }
        Some((hp - span + 1, wp - span + 1))
    }

    fn check(&self, input: Shape4, weights: Shape4, bias_len: Option<usize>) -> Result<(usize, usize)> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(shape_err!(
                "conv input has {} channels, spec expects {}",
                input.c,
                self.in_channels
            ));
        }
        if weights != self.weight_shape() {
            return Err(shape_err!(
                "conv weights {:?} do not match spec shape {:?}",
                weights,
                self.weight_shape()
            ));
        }
        if let Some(len) = bias_len {
            if len != self.out_channels {
                return Err(shape_err!(
                    "conv bias has {} entries, expected {}",
                    len,
                    self.out_channels
                ));
            }
        }
        self.output_hw(input.h, input.w).ok_or_else(|| {
            shape_err!(
                "input {}x{} too small for dilated kernel span {} with padding {}",
                input.h,
                input.w,
                self.effective_kernel(),
                self.padding
            )
        })
    }
}

/// Direct-loop convolution. Slow; the oracle for the GEMM path.
#[allow(clippy::needless_range_loop)]
pub fn conv2d_naive(input: &Tensor4, weights: &Tensor4, bias: &[f64], spec: &ConvSpec) -> Result<Tensor4> {
    let s = input.shape();
    let (ho, wo) = spec.check(s, weights.shape(), Some(bias.len()))?;
    let (k, r, p) = (spec.kernel, spec.dilation as isize, spec.padding as isize);
    let mut out = Tensor4::zeros((s.n, spec.out_channels, ho, wo))?;
    for n in 0..s.n {
        for o in 0..spec.out_channels {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = bias[o];
                    for c in 0..s.c {
                        for u in 0..k {
                            let ii = i as isize + r * u as isize - p;
                            if ii < 0 || ii >= s.h as isize {
                                continue;
                            }
                            for v in 0..k {
                                let jj = j as isize + r * v as isize - p;
                                if jj < 0 || jj >= s.w as isize {
                                    continue;
                                }
                                acc += input.get(n, c, ii as usize, jj as usize) * weights.get(o, c, u, v);
                            }
                        }
                    }
                    out.set(n, o, i, j, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Output-column range `[lo, hi)` whose source column `j + offset` lies in `[0, len)`.
#[inline]
fn valid_range(offset: isize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

/// Unfolds one `(C, h, w)` sample into a `(C*K*K) x (ho*wo)` row-major matrix.
fn im2col(sample: &[f64], h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, cols: &mut [f64]) {
    let (k, r, p) = (spec.kernel, spec.dilation as isize, spec.padding as isize);
    let plane = h * w;
    let cols_per_row = ho * wo;
    for c in 0..spec.in_channels {
        let src = &sample[c * plane..(c + 1) * plane];
        for u in 0..k {
            let row_off = r * u as isize - p;
            for v in 0..k {
                let col_off = r * v as isize - p;
                let row = (c * k + u) * k + v;
                let dst = &mut cols[row * cols_per_row..(row + 1) * cols_per_row];
                let (j_lo, j_hi) = valid_range(col_off, w, wo);
                for i in 0..ho {
                    let d = &mut dst[i * wo..(i + 1) * wo];
                    let ii = i as isize + row_off;
                    if ii < 0 || ii >= h as isize || j_lo == j_hi {
                        d.fill(0.0);
                        continue;
                    }
                    let s_row = &src[ii as usize * w..(ii as usize + 1) * w];
                    d[..j_lo].fill(0.0);
                    let s_lo = (j_lo as isize + col_off) as usize;
                    d[j_lo..j_hi].copy_from_slice(&s_row[s_lo..s_lo + (j_hi - j_lo)]);
                    d[j_hi..].fill(0.0);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds the matrix back into a `(C, h, w)` sample.
fn col2im(cols: &[f64], h: usize, w: usize, spec: &ConvSpec, ho: usize, wo: usize, sample: &mut [f64]) {
    let (k, r, p) = (spec.kernel, spec.dilation as isize, spec.padding as isize);
    let plane = h * w;
    let cols_per_row = ho * wo;
    for c in 0..spec.in_channels {
        let dst = &mut sample[c * plane..(c + 1) * plane];
        for u in 0..k {
            let row_off = r * u as isize - p;
            for v in 0..k {
                let col_off = r * v as isize - p;
                let row = (c * k + u) * k + v;
                let src = &cols[row * cols_per_row..(row + 1) * cols_per_row];
                let (j_lo, j_hi) = valid_range(col_off, w, wo);
                if j_lo == j_hi {
                    continue;
                }
                for i in 0..ho {
                    let ii = i as isize + row_off;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let d_lo = (j_lo as isize + col_off) as usize;
                    let d_row = &mut dst[ii as usize * w + d_lo..ii as usize * w + d_lo + (j_hi - j_lo)];
                    for (d, s) in d_row.iter_mut().zip(&src[i * wo + j_lo..i * wo + j_hi]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy)]
struct Layout {
    rs: isize,
    cs: isize,
}

impl Layout {
    const fn row_major(cols: usize) -> Self {
        Layout {
            rs: cols as isize,
            cs: 1,
        }
    }
    const fn transposed(cols_of_stored: usize) -> Self {
        Layout {
            rs: 1,
            cs: cols_of_stored as isize,
        }
    }
}

/// `c = a * b + beta * c` for an `m x k` times `k x n` product.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: every index the kernel touches, (i*rs + j*cs) for i < rows and
    // j < cols, lies inside the slices because all layouts used here are
    // dense row-major or dense transposed views of buffers of the asserted size.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs,
            la.cs,
            b.as_ptr(),
            lb.rs,
            lb.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// im2col + GEMM convolution; same semantics as [`conv2d_naive`].
pub fn conv2d_forward(input: &Tensor4, weights: &Tensor4, bias: &[f64], spec: &ConvSpec) -> Result<Tensor4> {
    let s = input.shape();
    let (ho, wo) = spec.check(s, weights.shape(), Some(bias.len()))?;
    let (rows, pixels, out_c) = (spec.patch_len(), ho * wo, spec.out_channels);
    let mut cols = vec![0.0; rows * pixels];
    let mut out = Tensor4::zeros((s.n, out_c, ho, wo))?;
    for n in 0..s.n {
        im2col(input.sample(n), s.h, s.w, spec, ho, wo, &mut cols);
        let dst = out.sample_mut(n);
        for (o, plane) in dst.chunks_exact_mut(pixels).enumerate() {
            plane.fill(bias[o]);
        }
        gemm(
            out_c,
            rows,
            pixels,
            weights.data(),
            Layout::row_major(rows),
            &cols,
            Layout::row_major(pixels),
            1.0,
            dst,
        );
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weights: Tensor4,
    pub bias: Vec<f64>,
}

/// Vector-Jacobian product of [`conv2d_forward`] at `input`.
///
/// Batch entries are accumulated in index order, so the result does not
/// depend on scheduling.
pub fn conv2d_backward(input: &Tensor4, weights: &Tensor4, spec: &ConvSpec, grad_out: &Tensor4) -> Result<ConvGrads> {
    let s = input.shape();
    let (ho, wo) = spec.check(s, weights.shape(), None)?;
    let expected = Shape4::new(s.n, spec.out_channels, ho, wo);
    if grad_out.shape() != expected {
        return Err(shape_err!(
            "conv grad_output {:?} does not match forward output {:?}",
            grad_out.shape(),
            expected
        ));
    }
    let (rows, pixels, out_c) = (spec.patch_len(), ho * wo, spec.out_channels);
    let mut cols = vec![0.0; rows * pixels];
    let mut grad_cols = vec![0.0; rows * pixels];
    let mut grad_input = Tensor4::zeros(s)?;
    let mut grad_w = Tensor4::zeros(spec.weight_shape())?;
    let mut grad_b = vec![0.0; out_c];
    for n in 0..s.n {
        let dy = grad_out.sample(n);
        for (gb, plane) in grad_b.iter_mut().zip(dy.chunks_exact(pixels)) {
            *gb += plane.iter().sum::<f64>();
        }
        im2col(input.sample(n), s.h, s.w, spec, ho, wo, &mut cols);
        // dW += dY (O x P) * cols^T (P x CKK)
        gemm(
            out_c,
            pixels,
            rows,
            dy,
            Layout::row_major(pixels),
            &cols,
            Layout::transposed(pixels),
            1.0,
            grad_w.data_mut(),
        );
        // dcols = W^T (CKK x O) * dY (O x P)
        gemm(
            rows,
            out_c,
            pixels,
            weights.data(),
            Layout::transposed(rows),
            dy,
            Layout::row_major(pixels),
            0.0,
            &mut grad_cols,
        );
        col2im(&grad_cols, s.h, s.w, spec, ho, wo, grad_input.sample_mut(n));
    }
    Ok(ConvGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_kernel(k: usize) -> Tensor4 {
        let mut w = Tensor4::zeros((1, 1, k, k)).unwrap();
        w.set(0, 0, k / 2, k / 2, 1.0);
        w
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor4::full((1, 1, 3, 3), 1.0).unwrap();
        let spec = ConvSpec::new(1, 1, 3, 1, 1).unwrap();
        let y = conv2d_naive(&x, &delta_kernel(3), &[0.0], &spec).unwrap();
        assert_eq!(y, x);
        let y = conv2d_forward(&x, &delta_kernel(3), &[0.0], &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dilated_ones_kernel_counts_in_bounds_taps() {
        let x = Tensor4::full((1, 1, 5, 5), 1.0).unwrap();
        let w = Tensor4::full((1, 1, 3, 3), 1.0).unwrap();
        let spec = ConvSpec::new(1, 1, 3, 2, 2).unwrap();
        for y in [
            conv2d_naive(&x, &w, &[0.0], &spec).unwrap(),
            conv2d_forward(&x, &w, &[0.0], &spec).unwrap(),
        ] {
            assert_eq!(y.shape(), Shape4::new(1, 1, 5, 5));
            assert_eq!(y.get(0, 0, 2, 2), 9.0);
            assert_eq!(y.get(0, 0, 0, 0), 4.0);
        }
    }

    #[test]
    fn two_channel_sum_plus_bias() {
        let x = Tensor4::full((1, 2, 3, 3), 1.0).unwrap();
        let w = Tensor4::full((1, 2, 3, 3), 1.0).unwrap();
        let spec = ConvSpec::same(2, 1, 3, 1).unwrap();
        let y = conv2d_forward(&x, &w, &[0.5], &spec).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 18.5);
        assert_eq!(conv2d_naive(&x, &w, &[0.5], &spec).unwrap().get(0, 0, 1, 1), 18.5);
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let x = Tensor4::from_vec((1, 1, 4, 4), (0..16).map(f64::from).collect()).unwrap();
        let spec = ConvSpec::same(1, 2, 3, 2).unwrap();
        let w = Tensor4::zeros(spec.weight_shape()).unwrap();
        let y = conv2d_forward(&x, &w, &[1.5, -2.0], &spec).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 1.5));
        assert!(y.plane(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn same_padding_preserves_size() {
        for (k, r) in [(3, 1), (3, 2), (3, 5), (5, 1), (7, 1), (7, 3)] {
            let spec = ConvSpec::same(1, 1, k, r).unwrap();
            assert!(spec.is_same_padded());
            assert_eq!(spec.output_hw(9, 13), Some((9, 13)));
        }
    }

    #[test]
    fn shape_errors() {
        let spec = ConvSpec::same(2, 1, 3, 1).unwrap();
        let x = Tensor4::zeros((1, 1, 4, 4)).unwrap();
        let w = Tensor4::zeros(spec.weight_shape()).unwrap();
        assert!(conv2d_forward(&x, &w, &[0.0], &spec).is_err());
        let x = Tensor4::zeros((1, 2, 4, 4)).unwrap();
        assert!(conv2d_forward(&x, &w, &[0.0, 0.0], &spec).is_err());
        assert!(ConvSpec::same(1, 1, 4, 1).is_err());
        assert!(ConvSpec::same(1, 1, 3, 0).is_err());
        // Unpadded kernel span larger than the input.
        let spec = ConvSpec::new(1, 1, 3, 3, 0).unwrap();
        let x = Tensor4::zeros((1, 1, 5, 5)).unwrap();
        let w = Tensor4::zeros(spec.weight_shape()).unwrap();
        assert!(conv2d_naive(&x, &w, &[0.0], &spec).is_err());
    }

    #[test]
    fn identity_kernel_backward_passes_gradient_through() {
        let spec = ConvSpec::same(1, 1, 3, 1).unwrap();
        let x = Tensor4::from_vec((1, 1, 3, 3), (0..9).map(f64::from).collect()).unwrap();
        let dy = Tensor4::from_vec((1, 1, 3, 3), (0..9).map(|v| f64::from(v) * 0.5 - 1.0).collect()).unwrap();
        let g = conv2d_backward(&x, &delta_kernel(3), &spec, &dy).unwrap();
        assert_eq!(g.input, dy);
    }
}
