//! Central finite-difference gradient checking.

use alloc::vec::Vec;

use crate::layers::{BatchNorm, ConvBnPrelu, ConvLayer, FlatGrads, MultiscaleGroup, PRelu, ParamMut, ResidualHdcBlock};
use crate::model::Model;
use crate::rng::{stream, uniform, Purpose};
use crate::{Result, Tensor4};

/// Step used by the checks unless a caller picks another.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Round-off in a central
/// difference is about `f64::EPSILON * |loss| / step`, around `1e-9` for the
/// losses used here, so a gradient that is exactly zero (a conv bias feeding
/// batch norm) would otherwise show an arbitrary relative error. Below the
/// floor the check is effectively absolute: `|a - n| < tolerance * 1e-4`.
pub const MAGNITUDE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    /// Coordinates compared.
    pub checked: usize,
    /// Compared coordinates where one offset crossed a kink and the
    /// one-sided difference on the other side was used.
    pub one_sided: usize,
    /// Coordinates left out because both offsets crossed a kink.
    pub skipped: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }

    /// Combines two reports, keeping the worse one.
    pub fn merge(self, other: GradCheck) -> GradCheck {
        let checked = self.checked + other.checked;
        let skipped = self.skipped + other.skipped;
        let one_sided = self.one_sided + other.one_sided;
        let mut worse = if other.max_rel_error > self.max_rel_error {
            other
        } else {
            self
        };
        worse.checked = checked;
        worse.skipped = skipped;
        worse.one_sided = one_sided;
        worse
    }
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            one_sided: 0,
            skipped: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares `analytic[i]` with `(L(+h) - L(-h)) / 2h` for each index.
/// `loss_at(i, delta)` must evaluate the loss with coordinate `i` offset by
/// `delta` and leave the coordinate restored afterwards.
pub fn check_gradient(
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    step: f64,
    mut loss_at: impl FnMut(usize, f64) -> f64,
) -> GradCheck {
    check_gradient_piecewise(analytic, indices, step, f64::NAN, |i, delta| Some(loss_at(i, delta)))
}

/// Like [`check_gradient`] for a piecewise smooth loss. `loss_at` returns
/// `None` when the offset point lies on a different piece than the base
/// point, whose loss is `base`. If only one offset leaves the piece, the
/// derivative is estimated from the other side with the second-order
/// one-sided difference `(-3 L(0) + 4 L(s/2) - L(s)) / s`; if both leave it,
/// the coordinate is counted in `skipped` instead of compared.
pub fn check_gradient_piecewise(
    analytic: &[f64],
    indices: impl IntoIterator<Item = usize>,
    step: f64,
    base: f64,
    mut loss_at: impl FnMut(usize, f64) -> Option<f64>,
) -> GradCheck {
    let mut report = GradCheck::default();
    for i in indices {
        let numeric = match (loss_at(i, step), loss_at(i, -step)) {
            (Some(plus), Some(minus)) => (plus - minus) / (2.0 * step),
            (plus, minus) => {
                let (s, far) = match (plus, minus) {
                    (Some(p), None) => (step, p),
                    (None, Some(m)) => (-step, m),
                    _ => {
                        report.skipped += 1;
                        continue;
                    }
                };
                let Some(near) = loss_at(i, s / 2.0) else {
                    report.skipped += 1;
                    continue;
                };
                report.one_sided += 1;
                (-3.0 * base + 4.0 * near - far) / s
            }
        };
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() || err.is_nan() {
            report = GradCheck {
                max_rel_error: if err.is_nan() { f64::INFINITY } else { err },
                worst: Some(i),
                analytic: analytic[i],
                numeric,
                ..report
            };
        }
    }
    report
}

/// Checks the gradient of `loss(x)` at `x` with respect to every entry of `x`.
pub fn check_slice(x: &mut [f64], analytic: &[f64], step: f64, mut loss: impl FnMut(&[f64]) -> f64) -> GradCheck {
    let n = x.len();
    check_gradient(analytic, 0..n, step, |i, delta| {
        let keep = x[i];
        x[i] = keep + delta;
        let l = loss(x);
        x[i] = keep;
        l
    })
}

/// A layer whose train-mode forward pass can be differentiated.
pub trait Differentiable {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4>;
    /// Gradients with respect to the input and to every learnable tensor,
    /// in `params_mut` order.
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)>;
    fn params_mut(&mut self) -> Vec<ParamMut<'_>>;
    /// Side of every PReLU kink (`input > 0`) in a train-mode forward pass.
    /// Layers without kinks return an empty pattern.
    fn kinks(&mut self, _input: &Tensor4) -> Result<Vec<bool>> {
        Ok(Vec::new())
    }
}

fn push_signs(t: &Tensor4, out: &mut Vec<bool>) {
    out.extend(t.data().iter().map(|&v| v > 0.0));
}

impl Differentiable for ConvLayer {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        self.forward(input)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (dx, g) = self.backward(input, grad_out)?;
        let mut flat = Vec::new();
        g.append_to(&mut flat);
        Ok((dx, flat))
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("conv", &mut out);
        out
    }
}

impl Differentiable for BatchNorm {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        self.forward(input)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (dx, g) = self.backward(input, grad_out)?;
        let mut flat = Vec::new();
        g.append_to(&mut flat);
        Ok((dx, flat))
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("bn", &mut out);
        out
    }
}

impl Differentiable for PRelu {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        self.forward(input)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (dx, g) = self.backward(input, grad_out)?;
        let mut flat = Vec::new();
        g.append_to(&mut flat);
        Ok((dx, flat))
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("prelu", &mut out);
        out
    }
    fn kinks(&mut self, input: &Tensor4) -> Result<Vec<bool>> {
        let mut out = Vec::new();
        push_signs(input, &mut out);
        Ok(out)
    }
}

impl Differentiable for MultiscaleGroup {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        self.forward(input)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (dx, g) = self.backward(input, grad_out)?;
        let mut flat = Vec::new();
        g.append_to(&mut flat);
        Ok((dx, flat))
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("multiscale", &mut out);
        out
    }
}

impl Differentiable for ConvBnPrelu {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(input)?.0)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (_, cache) = self.forward(input)?;
        let (dx, g) = self.backward(&cache, grad_out)?;
        let mut flat = Vec::new();
        g.append_to(&mut flat);
        Ok((dx, flat))
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("unit", &mut out);
        out
    }
    fn kinks(&mut self, input: &Tensor4) -> Result<Vec<bool>> {
        let (_, cache) = self.forward(input)?;
        let mut out = Vec::new();
        push_signs(cache.activation_input(), &mut out);
        Ok(out)
    }
}

impl Differentiable for ResidualHdcBlock {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(input)?.0)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (_, cache) = self.forward(input)?;
        let (dx, g) = self.backward(&cache, grad_out)?;
        let mut flat = Vec::new();
        g.append_to(&mut flat);
        Ok((dx, flat))
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        self.collect_params_mut("block", &mut out);
        out
    }
    fn kinks(&mut self, input: &Tensor4) -> Result<Vec<bool>> {
        let (_, cache) = self.forward(input)?;
        let mut out = Vec::new();
        for u in cache.units() {
            push_signs(u.activation_input(), &mut out);
        }
        Ok(out)
    }
}

impl Differentiable for Model {
    fn forward_train(&mut self, input: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward(input)?.0)
    }
    fn backward_train(&mut self, input: &Tensor4, grad_out: &Tensor4) -> Result<(Tensor4, FlatGrads)> {
        let (_, cache) = self.forward(input)?;
        self.backward(&cache, grad_out)
    }
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        Model::params_mut(self)
    }
    fn kinks(&mut self, input: &Tensor4) -> Result<Vec<bool>> {
        let (_, cache) = self.forward(input)?;
        let mut out = Vec::new();
        for t in cache.activation_inputs() {
            push_signs(t, &mut out);
        }
        Ok(out)
    }
}

/// Results of [`check_layer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCheck {
    pub input: GradCheck,
    pub params: GradCheck,
}

impl LayerCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.input.max_rel_error.max(self.params.max_rel_error)
    }

    pub fn checked(&self) -> usize {
        self.input.checked + self.params.checked
    }

    pub fn skipped(&self) -> usize {
        self.input.skipped + self.params.skipped
    }

    pub fn one_sided(&self) -> usize {
        self.input.one_sided + self.params.one_sided
    }
}

/// Checks input and parameter gradients of `layer` at `input` for the scalar
/// loss `sum_i w_i y_i`, with weights `w` uniform in `[-1, 1]` drawn from
/// `seed`. Every input entry and every parameter is perturbed.
///
/// A central difference whose offset points put some PReLU input on the
/// other side of zero than at the base point straddles a kink and does not
/// estimate the derivative; see [`check_gradient_piecewise`] for how such
/// coordinates are handled.
pub fn check_layer<L: Differentiable>(layer: &mut L, input: &Tensor4, seed: u64, step: f64) -> Result<LayerCheck> {
    let out_shape = layer.forward_train(input)?.shape();
    let mut rng = stream(seed, Purpose::Eval, 0, 0);
    let weights = Tensor4::from_vec(
        out_shape,
        (0..out_shape.len()).map(|_| 2.0 * uniform(&mut rng) - 1.0).collect(),
    )?;
    let (dx, grads) = layer.backward_train(input, &weights)?;
    let base_kinks = layer.kinks(input)?;
    let dot = |y: &Tensor4| y.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>();
    let base = dot(&layer.forward_train(input)?);
    let probe = |layer: &mut L, x: &Tensor4| -> Option<f64> {
        if layer.kinks(x).ok()? != base_kinks {
            return None;
        }
        Some(layer.forward_train(x).map(|y| dot(&y)).unwrap_or(f64::NAN))
    };

    let mut x = input.clone();
    let input_report = check_gradient_piecewise(dx.data(), 0..x.len(), step, base, |i, delta| {
        let keep = x.data()[i];
        x.data_mut()[i] = keep + delta;
        let l = probe(layer, &x);
        x.data_mut()[i] = keep;
        l
    });

    let mut params_report = GradCheck::default();
    for (t, g) in grads.iter().enumerate() {
        let r = check_gradient_piecewise(g, 0..g.len(), step, base, |j, delta| {
            let keep = {
                let mut ps = layer.params_mut();
                let keep = ps[t].values[j];
                ps[t].values[j] = keep + delta;
                keep
            };
            let l = probe(layer, input);
            layer.params_mut()[t].values[j] = keep;
            l
        });
        params_report = params_report.merge(r);
    }
    Ok(LayerCheck {
        input: input_report,
        params: params_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let mut x = [0.3, -1.2, 2.0];
        let analytic: alloc::vec::Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        let r = check_slice(&mut x, &analytic, DEFAULT_STEP, |x| x.iter().map(|v| v * v * v).sum());
        assert!(r.passes(1e-8), "{r:?}");
        assert_eq!(r.checked, 3);
        assert_eq!(x, [0.3, -1.2, 2.0]);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut x = [1.0, 2.0];
        let r = check_slice(&mut x, &[2.0, 5.0], DEFAULT_STEP, |x| x[0] * x[0] + x[1] * x[1]);
        assert_eq!(r.worst, Some(1));
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn floor_absorbs_tiny_values() {
        assert!(relative_error(1e-12, 2e-9) < 1e-4);
        assert_eq!(relative_error(2.0, 1.0), 0.5);
    }

    #[test]
    fn kink_crossings_go_one_sided_or_are_skipped() {
        // L = x0 + |x1| + 3 x2 on the piece x1 > 0, |x2| < 1e-6. At the base
        // point x0 is interior, x1 sits 1e-7 above its kink and any step in
        // x2 leaves the piece.
        let base_point = [0.5, 1e-7, 0.0];
        let loss = |x: &[f64; 3]| x[0] + x[1].abs() + 3.0 * x[2];
        let on_piece = |x: &[f64; 3]| x[1] > 0.0 && x[2].abs() < 1e-6;
        let r = check_gradient_piecewise(&[1.0, 1.0, 3.0], 0..3, DEFAULT_STEP, loss(&base_point), |i, d| {
            let mut x = base_point;
            x[i] += d;
            on_piece(&x).then(|| loss(&x))
        });
        assert_eq!((r.checked, r.one_sided, r.skipped), (2, 1, 1));
        assert!(r.passes(1e-8), "{r:?}");
    }

    #[test]
    fn one_sided_difference_is_second_order() {
        // exp at 0 from the right only: error O(h^2), far below the central
        // check tolerance at the default step.
        let r = check_gradient_piecewise(&[1.0], 0..1, DEFAULT_STEP, 1.0, |_, d| (d > 0.0).then(|| d.exp()));
        assert_eq!(r.one_sided, 1);
        assert!(r.passes(1e-9), "{r:?}");
    }

    #[test]
    fn prelu_input_next_to_zero_is_skipped() {
        let mut act = PRelu::new(1);
        let x = Tensor4::from_vec((1, 1, 1, 3), alloc::vec![0.7, -2e-6, -0.3]).unwrap();
        let r = check_layer(&mut act, &x, 1, DEFAULT_STEP).unwrap();
        // -2e-6 - 1e-5 stays negative, -2e-6 + 1e-5 does not.
        assert_eq!((r.input.checked, r.input.one_sided, r.input.skipped), (3, 1, 0));
        assert!(r.max_rel_error() < 1e-6, "{r:?}");
    }
}
