use dmvfc::autodiff::{Graph, Tensor};
use dmvfc::fiberdata::{synth_bundle, BoldPair, Fiber, SynthConfig};
use dmvfc::nn::{embed, embed_indices, encode, Adam, EncoderInput, EncoderWeights, LrSchedule, View, EMBED_DIM};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn encode_one(w: &EncoderWeights, input: &EncoderInput) -> Vec<f64> {
    let mut g = Graph::new();
    let params = w.attach_frozen(&mut g);
    let z = encode(&mut g, &params, input).unwrap();
    g.value(z).data().to_vec()
}

#[test]
fn batch_matches_single_encoding() {
    let bundle = synth_bundle(&SynthConfig { n_fibers: 40, ..SynthConfig::default() }, 1).unwrap();
    for view in [View::Geometric, View::Functional] {
        let w = EncoderWeights::init(view, 3);
        let all = embed(&w, &bundle).unwrap();
        assert_eq!(all.shape(), (40, EMBED_DIM));
        for i in [0, 7, 39] {
            let one = embed_indices(&w, &bundle, &[i]).unwrap();
            let direct = encode_one(&w, &EncoderInput::from_bundle(view, &bundle, &[i]).unwrap());
            for d in 0..EMBED_DIM {
                assert!((all.get(i, d) - one.get(0, d)).abs() < 1e-9);
                assert!((all.get(i, d) - direct[d]).abs() < 1e-9);
            }
        }
        assert_eq!(embed(&w, &bundle).unwrap(), all);
    }
}

#[test]
fn wrong_input_sizes_are_rejected() {
    let short = Fiber::new((0..10).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
    assert!(EncoderInput::geometric([&short]).is_err());
    let bold = BoldPair::new((0..50).map(|i| (i as f64).sin()).collect(), (0..50).map(|i| (i as f64).cos()).collect()).unwrap();
    assert!(EncoderInput::functional([&bold]).is_err());
}

fn bold(rng: &mut ChaCha8Rng) -> BoldPair {
    let mut s = || (0..600).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    BoldPair::new(s(), s()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn functional_encoding_ignores_endpoint_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = EncoderWeights::init(View::Functional, seed);
        let b = bold(&mut rng);
        let swapped = b.swapped();
        let z = encode_one(&w, &EncoderInput::functional([&b]).unwrap());
        let zs = encode_one(&w, &EncoderInput::functional([&swapped]).unwrap());
        prop_assert_eq!(z.len(), EMBED_DIM);
        prop_assert_eq!(z, zs);
    }

    #[test]
    fn geometric_encoding_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = dmvfc::gradcheck::random_fiber(&mut rng);
        let w = EncoderWeights::init(View::Geometric, seed);
        let a = encode_one(&w, &EncoderInput::geometric([&f]).unwrap());
        let b = encode_one(&w, &EncoderInput::geometric([&f, &f]).unwrap());
        prop_assert_eq!(a.len(), EMBED_DIM);
        prop_assert_eq!(&a[..], &b[..EMBED_DIM]);
        prop_assert_eq!(&a[..], &b[EMBED_DIM..]);
    }

    #[test]
    fn adam_updates_equal_parameters_equally(v in -5.0f64..5.0, g in -3.0f64..3.0, steps in 1usize..5) {
        let mut adam = Adam::new(LrSchedule::constant(0.05));
        let mut a = Tensor::from_vec(1, 2, vec![v, v]).unwrap();
        let mut b = Tensor::from_vec(2, 1, vec![v, v]).unwrap();
        for _ in 0..steps {
            let ga = Tensor::from_vec(1, 2, vec![g, g]).unwrap();
            let gb = Tensor::from_vec(2, 1, vec![g, g]).unwrap();
            adam.step(&mut [&mut a, &mut b], &[ga, gb], &["a", "b"], 0.05).unwrap();
        }
        prop_assert_eq!(a.get(0, 0), a.get(0, 1));
        prop_assert_eq!(a.get(0, 0), b.get(0, 0));
        prop_assert_eq!(b.get(0, 0), b.get(1, 0));
    }

    #[test]
    fn step_decay_schedule(epoch in 0usize..2000) {
        let s = LrSchedule::step_decay(3e-3, 0.1, 200);
        let expected = 3e-3 * 0.1f64.powi((epoch / 200) as i32);
        prop_assert!((s.lr_at(epoch) - expected).abs() <= 1e-15 * expected.max(1e-300) + 1e-300);
        prop_assert_eq!(LrSchedule::constant(1e-5).lr_at(epoch), 1e-5);
    }
}

#[test]
fn schedule_examples() {
    let s = LrSchedule::step_decay(3e-3, 0.1, 200);
    assert_eq!(s.lr_at(0), 3e-3);
    assert!((s.lr_at(199) - 3e-3).abs() < 1e-18);
    assert!((s.lr_at(200) - 3e-4).abs() < 1e-18);
    assert!((s.lr_at(449) - 3e-5).abs() < 1e-18);
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let mut adam = Adam::new(LrSchedule::constant(0.1));
    let mut p = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
    let err = adam
        .step(&mut [&mut p], &[Tensor::from_vec(1, 1, vec![f64::INFINITY]).unwrap()], &["head.w"], 0.1)
        .unwrap_err();
    assert!(err.to_string().contains("head.w"));
    assert_eq!(p.get(0, 0), 1.0);
}
