use dropflat_core::{
    data::QuadraticTask,
    landscape::{
        filter_normalized_direction, interval_flatness, loss_profile, random_unit_direction, Crossing, Direction,
        FlatnessOptions, Provenance,
    },
    linalg::{dot, norm},
    nn::{loss, Activation, Architecture, Batch, Init, ParamVector},
    Error, NetworkObjective, Objective, Result,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `L0 + |x|^4` along every coordinate direction.
struct Quartic {
    l0: f64,
    dim: usize,
}

impl Objective for Quartic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn loss(&self, p: &[f64]) -> Result<f64> {
        if p.len() != self.dim {
            return Err(Error::Config(format!("point has {} coordinates", p.len())));
        }
        Ok(self.l0 + p.iter().map(|x| x.powi(2)).sum::<f64>().powi(2))
    }
    fn gradient(&self, p: &[f64]) -> Result<Vec<f64>> {
        let r2: f64 = p.iter().map(|x| x * x).sum();
        Ok(p.iter().map(|x| 4.0 * r2 * x).collect())
    }
}

fn axis(d: usize, i: usize) -> Direction {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    Direction::normalized(v, Provenance::Other).unwrap()
}

#[test]
fn quartic_crossing_found_by_bisection() {
    // L0 + d^4 = 2 L0 at d = L0^{1/4}, so F = 2 L0^{1/4}.
    for l0 in [1.0, 0.0625, 3.0] {
        let q = Quartic { l0, dim: 2 };
        let p = interval_flatness(&q, &[0.0, 0.0], &axis(2, 1), &FlatnessOptions::default()).unwrap();
        let want = 2.0 * f64::powf(l0, 0.25);
        assert!((p.flatness - want).abs() < 1e-6, "L0 {l0}: {} vs {want}", p.flatness);
        assert!(matches!(p.right, Crossing::Found { .. }));
    }
}

#[test]
fn quadratic_flatness_for_acceptance_pairs() {
    for (l0, a) in [(1.0, 2.0), (1.0, 8.0), (0.5, 1.0)] {
        let q = QuadraticTask::diagonal(l0, &[a, 1.0], vec![0.0, 0.0]).unwrap();
        let p = interval_flatness(&q, &[0.0, 0.0], &axis(2, 0), &FlatnessOptions::default()).unwrap();
        let want = 2.0 * (2.0 * l0 / a).sqrt();
        assert!((p.flatness - want).abs() < 1e-6, "({l0},{a})");
    }
}

#[test]
fn sharper_curvature_never_widens_the_interval() {
    let mut last = f64::INFINITY;
    for a in [0.5, 1.0, 2.0, 4.0, 16.0, 64.0] {
        let q = QuadraticTask::diagonal(0.3, &[a], vec![0.0]).unwrap();
        let f = interval_flatness(&q, &[0.0], &axis(1, 0), &FlatnessOptions::default()).unwrap().flatness;
        assert!(f < last);
        last = f;
    }
}

#[test]
fn symmetric_grid_on_quadratic_gives_symmetric_profile() {
    let q = QuadraticTask::diagonal(0.2, &[3.0, 1.0, 0.5], vec![0.1, -0.2, 0.3]).unwrap();
    let d = Direction::normalized(vec![1.0, 2.0, -1.0], Provenance::Other).unwrap();
    let grid: Vec<f64> = (-20..=20).map(|i| i as f64 / 20.0).collect();
    let prof = loss_profile(&q, q.minimum(), &d, &grid).unwrap();
    for i in 0..grid.len() {
        let j = grid.len() - 1 - i;
        assert!((prof[i].loss - prof[j].loss).abs() < 1e-12);
    }
    assert_eq!(prof[20].loss, 0.2);
}

fn small_net() -> (Architecture, ParamVector, Batch) {
    let a = Architecture::new(vec![6, 8, 8, 3], Activation::Relu, vec![]).unwrap();
    let p = ParamVector::init(&a, Init::Xavier, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Array2::from_shape_simple_fn((15, 6), || rng.gen_range(0.0..1.0));
    let b = Batch::new(x, (0..15).map(|i| i % 3).collect()).unwrap();
    (a, p, b)
}

#[test]
fn network_profile_matches_direct_reevaluation() {
    let (a, p, b) = small_net();
    let obj = NetworkObjective::full(&a, &p, &b).unwrap();
    let (d, _) = filter_normalized_direction(&p, 5).unwrap();
    let grid: Vec<f64> = (0..41).map(|i| -0.5 + i as f64 / 40.0).collect();
    let prof = loss_profile(&obj, p.values(), &d, &grid).unwrap();
    for pt in &prof {
        let mut q = p.clone();
        q.values_mut().iter_mut().zip(d.vector()).for_each(|(x, v)| *x += pt.offset * v);
        let direct = loss(&a, &q, &b, None).unwrap();
        assert!((pt.loss - direct).abs() <= 1e-13 * direct.max(1.0), "{}", pt.offset);
    }
    assert_eq!(prof[20].loss, loss(&a, &p, &b, None).unwrap());
}

#[test]
fn filter_directions_track_parameter_scale() {
    let (_, p, _) = small_net();
    let mut big = p.clone();
    big.values_mut().iter_mut().for_each(|v| *v *= 10.0);
    let (d1, _) = filter_normalized_direction(&p, 8).unwrap();
    let (d10, _) = filter_normalized_direction(&big, 8).unwrap();
    for (x, y) in d1.vector().iter().zip(d10.vector()) {
        assert!((10.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
    }
}

#[test]
fn independent_directions_are_nearly_orthogonal() {
    for s in 0..5u64 {
        let a = random_unit_direction(2500, s).unwrap();
        let b = random_unit_direction(2500, s + 100).unwrap();
        let cos = dot(a.vector(), b.vector()) / (norm(a.vector()) * norm(b.vector()));
        assert!(cos.abs() < 0.1, "{s}: {cos}");
        assert!((norm(a.vector()) - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn flatness_is_sign_symmetric(seed in 0u64..1000, l0 in 0.05f64..3.0) {
        let q = QuadraticTask::diagonal(l0, &[2.0, 0.7, 5.0], vec![0.0; 3]).unwrap();
        let d = random_unit_direction(3, seed).unwrap();
        let opts = FlatnessOptions::default();
        let f = interval_flatness(&q, q.minimum(), &d, &opts).unwrap();
        let g = interval_flatness(&q, q.minimum(), &d.negated(), &opts).unwrap();
        prop_assert!((f.flatness - g.flatness).abs() <= 1e-12 * f.flatness.max(1.0));
    }

    #[test]
    fn scaling_direction_divides_flatness(c in 0.1f64..10.0) {
        let q = QuadraticTask::diagonal(1.0, &[2.0], vec![0.0]).unwrap();
        let d = axis(1, 0);
        let opts = FlatnessOptions::default();
        let f = interval_flatness(&q, &[0.0], &d, &opts).unwrap().flatness;
        let fc = interval_flatness(&q, &[0.0], &d.scaled(c), &opts).unwrap().flatness;
        prop_assert!((fc - f / c).abs() < 1e-6);
    }
}
