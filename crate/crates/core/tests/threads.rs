//! Probe results must not depend on how many threads run them.

use dropflat_core::{
    hessian::{assemble_hessian, HessianOptions},
    nn::{Activation, Architecture, Batch, DropoutLayer, Init, MaskScope, ParamSlice, ParamVector, SliceSelector},
    noise::sample_gradients,
    NetworkObjective,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn one_thread_and_many_threads_agree_bitwise() {
    let arch = Architecture::new(
        vec![12, 10, 8, 4],
        Activation::Relu,
        vec![DropoutLayer { layer: 2, rate: 0.7 }],
    )
    .unwrap();
    let params = ParamVector::init(&arch, Init::Xavier, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_simple_fn((40, 12), || rng.gen_range(0.0..1.0));
    let batch = Batch::new(x, (0..40).map(|i| i % 4).collect()).unwrap();
    let slice = ParamSlice::new(&arch, SliceSelector::Weight(1)).unwrap();

    let run = || {
        let s = sample_gradients(&arch, &params, &batch, &slice, MaskScope::Shared, 64, 5).unwrap();
        let plain = arch.without_dropout();
        let obj = NetworkObjective::new(&plain, &params, &batch, slice.clone()).unwrap();
        let h = assemble_hessian(&obj, &obj.center(), &HessianOptions::default()).unwrap();
        (s.data().to_owned(), h.matrix().to_owned())
    };
    let (s1, h1) = in_pool(1, run);
    let (s4, h4) = in_pool(4, run);
    assert!(s1.iter().zip(s4.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(h1.iter().zip(h4.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
}
