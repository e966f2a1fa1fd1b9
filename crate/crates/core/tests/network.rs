use dropflat_core::{
    data::QuadraticTask,
    nn::{
        forward, gradient, loss, sample_mask, Activation, Architecture, Batch, DropoutLayer, DropoutMask, HookAction,
        Init, MaskPolicy, MaskScope, OptimizerKind, OptimizerState, ParamVector, TrainOptions, Trainer,
    },
    Objective,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, d: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
    let y = (0..n).map(|i| i % classes).collect();
    Batch::new(x, y).unwrap()
}

/// Independent scalar implementation: nested loops, no ndarray.
fn scalar_loss(arch: &Architecture, p: &ParamVector, b: &Batch) -> f64 {
    let layout = arch.layout();
    let w = arch.widths();
    let v = p.values();
    let mut total = 0.0;
    for i in 0..b.len() {
        let mut a: Vec<f64> = b.inputs().row(i).to_vec();
        for l in 0..arch.depth() {
            let wt = layout.weight(l).range().start;
            let bt = layout.bias(l).range().start;
            let mut z = vec![0.0; w[l + 1]];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut s = v[bt + r];
                for c in 0..w[l] {
                    s += v[wt + r * w[l] + c] * a[c];
                }
                *zr = s;
            }
            if l + 1 < arch.depth() {
                for zr in z.iter_mut() {
                    *zr = arch.activation().apply(*zr);
                }
            }
            a = z;
        }
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + a.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - a[b.labels()[i]];
    }
    total / b.len() as f64
}

#[test]
fn loss_matches_scalar_oracle() {
    for act in [Activation::Relu, Activation::Tanh] {
        let a = Architecture::new(vec![7, 6, 5, 4], act, vec![]).unwrap();
        let p = ParamVector::init(&a, Init::Xavier, 3);
        let b = batch(11, 7, 4, 8);
        let got = loss(&a, &p, &b, None).unwrap();
        let want = scalar_loss(&a, &p, &b);
        assert!((got - want).abs() < 1e-12, "{act:?}: {got} vs {want}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    for act in [Activation::Tanh, Activation::Relu] {
        let a = Architecture::new(vec![8, 7, 6, 3], act, vec![]).unwrap();
        let p = ParamVector::init(&a, Init::Xavier, 5);
        let b = batch(13, 8, 3, 2);
        let g = gradient(&a, &p, &b, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-5;
        for _ in 0..100 {
            let k = rng.gen_range(0..p.len());
            let mut plus = p.clone();
            plus.values_mut()[k] += h;
            let mut minus = p.clone();
            minus.values_mut()[k] -= h;
            let fd = (loss(&a, &plus, &b, None).unwrap() - loss(&a, &minus, &b, None).unwrap()) / (2.0 * h);
            let an = g.values()[k];
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-5, "{act:?} coordinate {k}: analytic {an} fd {fd}");
        }
    }
}

#[test]
fn masked_gradient_matches_differences_of_masked_loss() {
    let a = Architecture::new(vec![5, 6, 6, 3], Activation::Tanh, vec![DropoutLayer { layer: 2, rate: 0.5 }]).unwrap();
    let p = ParamVector::init(&a, Init::Xavier, 1);
    let b = batch(4, 5, 3, 1);
    let m = dropflat_core::nn::sample_batch_mask(&a, MaskScope::PerExample, 4, &mut ChaCha8Rng::seed_from_u64(2));
    let g = gradient(&a, &p, &b, Some(&m)).unwrap();
    let h = 1e-5;
    for k in (0..p.len()).step_by(7) {
        let mut plus = p.clone();
        plus.values_mut()[k] += h;
        let mut minus = p.clone();
        minus.values_mut()[k] -= h;
        let fd = (loss(&a, &plus, &b, Some(&m)).unwrap() - loss(&a, &minus, &b, Some(&m)).unwrap()) / (2.0 * h);
        let an = g.values()[k];
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-6), "{k}: {an} vs {fd}");
    }
}

#[test]
fn all_ones_mask_is_identity_on_the_mnist_architecture() {
    let a = Architecture::new(vec![784, 50, 50, 10], Activation::Relu, vec![DropoutLayer { layer: 2, rate: 0.8 }])
        .unwrap();
    let p = ParamVector::init(&a, Init::Xavier, 0);
    let b = batch(5, 784, 10, 3);
    let ones = DropoutMask::ones(&a, 5);
    let plain = forward(&a, &p, b.inputs(), None).unwrap();
    let masked = forward(&a, &p, b.inputs(), Some(&ones)).unwrap();
    assert_eq!(plain, masked);
}

#[test]
fn hidden_unit_permutation_leaves_logits_unchanged() {
    let a = Architecture::new(vec![4, 5, 3], Activation::Relu, vec![]).unwrap();
    let p = ParamVector::init(&a, Init::Xavier, 6);
    let perm = [3, 0, 4, 1, 2];
    let mut q = p.clone();
    let layout = a.layout();
    let (w0, b0, w1) = (layout.weight(0).range(), layout.bias(0).range(), layout.weight(1).range());
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..4 {
            q.values_mut()[w0.start + new * 4 + c] = p.values()[w0.start + old * 4 + c];
        }
        q.values_mut()[b0.start + new] = p.values()[b0.start + old];
        for r in 0..3 {
            q.values_mut()[w1.start + r * 5 + new] = p.values()[w1.start + r * 5 + old];
        }
    }
    let b = batch(9, 4, 3, 4);
    let x = forward(&a, &p, b.inputs(), None).unwrap();
    let y = forward(&a, &q, b.inputs(), None).unwrap();
    assert!(x.iter().zip(y.iter()).all(|(u, v)| (u - v).abs() < 1e-14));
}

#[test]
fn duplicated_rows_leave_gradient_unchanged() {
    let a = Architecture::new(vec![3, 4, 2], Activation::Tanh, vec![]).unwrap();
    let p = ParamVector::init(&a, Init::Xavier, 2);
    let b = batch(6, 3, 2, 5);
    let x2 = ndarray::concatenate(ndarray::Axis(0), &[b.inputs(), b.inputs()]).unwrap();
    let y2 = [b.labels(), b.labels()].concat();
    let b2 = Batch::new(x2, y2).unwrap();
    let g1 = gradient(&a, &p, &b, None).unwrap();
    let g2 = gradient(&a, &p, &b2, None).unwrap();
    for (u, v) in g1.values().iter().zip(g2.values()) {
        assert!((u - v).abs() <= 1e-14 * (1.0 + u.abs()));
    }
}

#[test]
fn logistic_regression_optimum_is_stationary() {
    // Overlapping classes keep the optimum finite.
    let a = Architecture::new(vec![2, 2], Activation::Relu, vec![]).unwrap();
    let x = ndarray::array![[0.0, 1.0], [1.0, 0.0], [0.5, 0.5], [0.2, 0.9], [0.9, 0.3], [0.4, 0.4]];
    let b = Batch::new(x, vec![0, 1, 0, 1, 0, 1]).unwrap();
    let mut p = ParamVector::zeros(&a);
    // Newton would be faster; plain GD is enough for a 6-parameter convex problem.
    let opt = OptimizerState::new(OptimizerKind::Gd, 2.0, p.len()).unwrap();
    let mut t = Trainer::new(a.clone(), p.clone(), &b, opt, MaskPolicy::FreshPerStep, MaskScope::Shared, 0).unwrap();
    for _ in 0..20000 {
        t.step().unwrap();
    }
    p = t.into_params();
    let g = gradient(&a, &p, &b, None).unwrap();
    let norm = g.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-8, "gradient norm {norm}");
}

#[test]
fn zero_learning_rate_keeps_loss_constant() {
    let a = Architecture::new(vec![3, 4, 2], Activation::Relu, vec![]).unwrap();
    let p = ParamVector::init(&a, Init::Xavier, 2);
    let b = batch(8, 3, 2, 1);
    let opt = OptimizerState::new(OptimizerKind::Gd, 0.0, p.len()).unwrap();
    let options = TrainOptions {
        steps: 20,
        mask_policy: MaskPolicy::FreshPerStep,
        mask_scope: MaskScope::Shared,
        seed: 0,
    };
    let out = dropflat_core::nn::train(&a, p.clone(), &b, opt, options, |_, _| HookAction::Continue).unwrap();
    assert!(out.curve.iter().all(|r| r.loss == out.curve[0].loss));
    assert_eq!(out.params, p);
}

#[test]
fn same_seed_gives_bit_identical_trajectories() {
    let a = Architecture::new(vec![6, 8, 8, 3], Activation::Relu, vec![DropoutLayer { layer: 2, rate: 0.5 }]).unwrap();
    let b = batch(20, 6, 3, 9);
    let run = |scope| {
        let p = ParamVector::init(&a, Init::Xavier, 4);
        let opt = OptimizerState::new(OptimizerKind::adam(), 0.01, p.len()).unwrap();
        let mut t = Trainer::new(a.clone(), p, &b, opt, MaskPolicy::FreshPerStep, scope, 77).unwrap();
        (0..30)
            .map(|_| {
                t.step().unwrap();
                t.params().values().to_vec()
            })
            .collect::<Vec<_>>()
    };
    for scope in [MaskScope::Shared, MaskScope::PerExample] {
        let (x, y) = (run(scope), run(scope));
        assert!(x.iter().flatten().zip(y.iter().flatten()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn gd_below_stability_limit_decreases_quadratic_monotonically() {
    let q = QuadraticTask::diagonal(0.0, &[3.0], vec![1.0]).unwrap();
    let mut x = vec![-2.0];
    let mut opt = OptimizerState::new(OptimizerKind::Gd, 0.6, 1).unwrap();
    let mut last = q.loss(&x).unwrap();
    for _ in 0..200 {
        let g = q.gradient(&x).unwrap();
        opt.apply(&mut x, &g).unwrap();
        let l = q.loss(&x).unwrap();
        assert!(l < last || l < 1e-20, "{l} after {last}");
        last = l;
    }
    assert!(last < 1e-12);
}

#[test]
fn fixed_seed_masks_match_direct_sampling() {
    let a = Architecture::new(vec![3, 10, 10, 2], Activation::Relu, vec![DropoutLayer { layer: 1, rate: 0.5 }]).unwrap();
    assert_eq!(sample_mask(&a, 4).unwrap(), sample_mask(&a, 4).unwrap());
    assert_ne!(sample_mask(&a, 4).unwrap(), sample_mask(&a, 5).unwrap());
}
