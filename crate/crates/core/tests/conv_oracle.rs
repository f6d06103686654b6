//! The im2col/GEMM convolution against the direct loop, and the algebraic
//! properties of the direct loop itself.

use msdr_core::conv::{conv2d_backward, conv2d_forward, conv2d_naive, ConvSpec};
use msdr_core::rng::{stream, uniform, ChaCha8Rng, Purpose};
use msdr_core::{Shape4, Tensor4};

fn random(rng: &mut ChaCha8Rng, shape: impl Into<Shape4>) -> Tensor4 {
    let shape = shape.into();
    Tensor4::from_vec(shape, (0..shape.len()).map(|_| 2.0 * uniform(rng) - 1.0).collect()).unwrap()
}

fn pick(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    lo + (uniform(rng) * (hi - lo + 1) as f64) as usize
}

fn random_spec(rng: &mut ChaCha8Rng) -> ConvSpec {
    let kernel = [1, 3, 5, 7][pick(rng, 0, 3)];
    let dilation = pick(rng, 1, 4);
    let same = (kernel - 1) * dilation / 2;
    // Mix same padding, no padding and arbitrary padding.
    let padding = match pick(rng, 0, 2) {
        0 => same,
        1 => 0,
        _ => pick(rng, 0, same + 2),
    };
    ConvSpec::new(pick(rng, 1, 4), pick(rng, 1, 4), kernel, dilation, padding).unwrap()
}

#[test]
fn optimized_matches_naive_on_200_random_configs() {
    let mut rng = stream(11, Purpose::Eval, 0, 0);
    let mut done = 0;
    let mut worst = 0.0f64;
    while done < 200 {
        let spec = random_spec(&mut rng);
        let (h, w) = (pick(&mut rng, 1, 14), pick(&mut rng, 1, 14));
        if spec.output_hw(h, w).is_none() {
            continue;
        }
        let n = pick(&mut rng, 1, 3);
        let x = random(&mut rng, (n, spec.in_channels, h, w));
        let wt = random(&mut rng, spec.weight_shape());
        let b: Vec<f64> = (0..spec.out_channels).map(|_| uniform(&mut rng)).collect();
        let fast = conv2d_forward(&x, &wt, &b, &spec).unwrap();
        let slow = conv2d_naive(&x, &wt, &b, &spec).unwrap();
        worst = worst.max(fast.max_abs_diff(&slow).unwrap());
        done += 1;
    }
    assert!(worst < 1e-12, "max abs diff {worst}");
}

#[test]
fn naive_is_linear() {
    let mut rng = stream(12, Purpose::Eval, 0, 0);
    for _ in 0..20 {
        let spec = ConvSpec::same(2, 3, 3, pick(&mut rng, 1, 3)).unwrap();
        let x = random(&mut rng, (2, 2, 9, 8));
        let y = random(&mut rng, (2, 2, 9, 8));
        let wt = random(&mut rng, spec.weight_shape());
        let zero = vec![0.0; 3];
        let (a, b) = (1.7, -0.4);
        let lhs = conv2d_naive(&x.scale(a).add(&y.scale(b)).unwrap(), &wt, &zero, &spec).unwrap();
        let rhs = conv2d_naive(&x, &wt, &zero, &spec)
            .unwrap()
            .scale(a)
            .add(&conv2d_naive(&y, &wt, &zero, &spec).unwrap().scale(b))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }
}

/// Shifting the input one pixel right shifts the output one pixel right
/// wherever neither output's taps reach the padding.
#[test]
fn naive_is_translation_equivariant_in_the_interior() {
    let mut rng = stream(13, Purpose::Eval, 0, 0);
    for dilation in 1..=3 {
        let spec = ConvSpec::same(1, 2, 3, dilation).unwrap();
        let (h, w) = (16, 16);
        let x = random(&mut rng, (1, 1, h, w));
        let mut shifted = Tensor4::zeros((1, 1, h, w)).unwrap();
        for i in 0..h {
            for j in 1..w {
                shifted.set(0, 0, i, j, x.get(0, 0, i, j - 1));
            }
        }
        let wt = random(&mut rng, spec.weight_shape());
        let b = [0.3, -0.1];
        let y = conv2d_naive(&x, &wt, &b, &spec).unwrap();
        let ys = conv2d_naive(&shifted, &wt, &b, &spec).unwrap();
        // Taps reach `dilation` pixels; the shifted image's first column is fill.
        let reach = dilation;
        let mut compared = 0;
        for o in 0..2 {
            for i in reach..h - reach {
                for j in reach + 1..w - reach {
                    assert!((ys.get(0, o, i, j) - y.get(0, o, i, j - 1)).abs() < 1e-12);
                    compared += 1;
                }
            }
        }
        assert!(compared > 0);
    }
}

#[test]
fn dilation_equals_zero_inserted_kernel() {
    let mut rng = stream(14, Purpose::Eval, 0, 0);
    for dilation in 1..=4 {
        for kernel in [3, 5] {
            let spec = ConvSpec::same(2, 2, kernel, dilation).unwrap();
            let big = spec.effective_kernel();
            let dense = ConvSpec::same(2, 2, big, 1).unwrap();
            let wt = random(&mut rng, spec.weight_shape());
            let mut expanded = Tensor4::zeros(dense.weight_shape()).unwrap();
            for o in 0..2 {
                for c in 0..2 {
                    for u in 0..kernel {
                        for v in 0..kernel {
                            expanded.set(o, c, u * dilation, v * dilation, wt.get(o, c, u, v));
                        }
                    }
                }
            }
            let x = random(&mut rng, (1, 2, 13, 11));
            let b = [0.25, -0.5];
            let y = conv2d_naive(&x, &wt, &b, &spec).unwrap();
            let yd = conv2d_naive(&x, &expanded, &b, &dense).unwrap();
            assert!(y.max_abs_diff(&yd).unwrap() < 1e-12);
        }
    }
}

/// `<conv(x), g> == <x, conv^T(g)>`: the backward pass is the exact adjoint.
#[test]
fn backward_is_the_adjoint_of_forward() {
    let mut rng = stream(15, Purpose::Eval, 0, 0);
    for _ in 0..30 {
        let spec = random_spec(&mut rng);
        let (h, w) = (pick(&mut rng, 3, 10), pick(&mut rng, 3, 10));
        let Some((ho, wo)) = spec.output_hw(h, w) else { continue };
        let x = random(&mut rng, (2, spec.in_channels, h, w));
        let wt = random(&mut rng, spec.weight_shape());
        let g = random(&mut rng, (2, spec.out_channels, ho, wo));
        let zero = vec![0.0; spec.out_channels];
        let y = conv2d_forward(&x, &wt, &zero, &spec).unwrap();
        let grads = conv2d_backward(&x, &wt, &spec, &g).unwrap();
        let dot = |a: &Tensor4, b: &Tensor4| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&y, &g);
        assert!((lhs - dot(&x, &grads.input)).abs() < 1e-10);
        // Linear in the weights too.
        assert!((lhs - dot(&wt, &grads.weights)).abs() < 1e-10);
        let total: f64 = g.data().iter().sum();
        assert!((grads.bias.iter().sum::<f64>() - total).abs() < 1e-10);
    }
}
