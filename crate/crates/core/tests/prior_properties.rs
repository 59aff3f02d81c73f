use priorsep::error::WeightsError;
use priorsep::priors::weights::{decode, encode, load_weights, save_weights};
use priorsep::priors::{
    project, sample_latent, Generator, HarmonicParams, HarmonicPrior, NeuralDecoder, NeuralDecoderConfig,
    PercussiveParams, PercussivePrior, Prior, PriorSpec,
};
use priorsep::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_kinds(len: usize) -> Vec<Prior> {
    vec![
        Prior::Harmonic(HarmonicPrior::new(HarmonicParams::default(), len, 16_000).unwrap()),
        Prior::Percussive(PercussivePrior::new(PercussiveParams::default(), len, 16_000).unwrap()),
        Prior::Neural(NeuralDecoder::random(&NeuralDecoderConfig::tiny(), 3).unwrap()),
    ]
}

/// ⟨J·δz, x̄⟩ by a five-point directional difference vs ⟨δz, vjp(z, x̄)⟩.
#[test]
fn vjp_is_the_adjoint_of_the_directional_derivative() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for prior in all_kinds(1024) {
        let mut checked = 0;
        while checked < 10 {
            let z = uniform(&mut rng, prior.latent_dim());
            let dir = uniform(&mut rng, prior.latent_dim());
            let cot = uniform(&mut rng, prior.output_len());
            // The harmonic map oscillates quickly in f0, so it needs a finer
            // step; the others are limited by rounding instead.
            let h = if matches!(prior, Prior::Harmonic(_)) {
                1e-6
            } else {
                1e-4
            };
            if let Prior::Neural(n) = &prior {
                if !n.is_smooth_near(&z, 4.0 * h) {
                    continue;
                }
            }
            let at = |s: f64| {
                let zs: Vec<f64> = z.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                dot(&prior.generate(&zs).unwrap(), &cot)
            };
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let adj = dot(&dir, &prior.generate_vjp(&z, &cot).unwrap());
            let err = (fd - adj).abs() / fd.abs().max(adj.abs());
            assert!(err <= 1e-8, "{:?}: {fd} vs {adj} ({err:.2e})", prior.kind());
            checked += 1;
        }
    }
}

#[test]
fn generators_are_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for prior in all_kinds(1024) {
        let z = uniform(&mut rng, prior.latent_dim());
        assert_eq!(prior.generate(&z).unwrap(), prior.generate(&z).unwrap());
    }
}

#[test]
fn zero_cotangent_gives_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for prior in all_kinds(1024) {
        let z = uniform(&mut rng, prior.latent_dim());
        let g = prior.generate_vjp(&z, &vec![0.0; prior.output_len()]).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn shape_errors() {
    for prior in all_kinds(1024) {
        let z = vec![0.0; prior.latent_dim() + 1];
        assert!(prior.generate(&z).is_err());
        let z = vec![0.0; prior.latent_dim()];
        assert!(prior.generate_vjp(&z, &[0.0; 3]).is_err());
    }
}

#[test]
fn analytic_priors_ignore_unused_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let h = HarmonicPrior::new(HarmonicParams::default(), 1024, 16_000).unwrap();
    let z = uniform(&mut rng, 100);
    let g = h.generate_vjp(&z, &uniform(&mut rng, 1024)).unwrap();
    assert!(g[10..].iter().all(|v| *v == 0.0));
    let p = PercussivePrior::new(PercussiveParams::default(), 1024, 16_000).unwrap();
    let g = p.generate_vjp(&z, &uniform(&mut rng, 1024)).unwrap();
    assert!(g[3..].iter().all(|v| *v == 0.0));
}

#[test]
fn latent_sampling_moments() {
    let z = sample_latent(99, 100_000).unwrap();
    let v = z.as_slice();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    assert!(mean.abs() <= 0.02);
    assert!((var - 1.0 / 3.0).abs() <= 0.02);
    assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    assert_eq!(sample_latent(99, 16).unwrap(), sample_latent(99, 16).unwrap());
    assert!(sample_latent(1, 0).is_err());
}

#[test]
fn projection_examples() {
    assert_eq!(project(&[1.5, -2.0, 0.3]), vec![1.0, -1.0, 0.3]);
}

#[test]
fn weight_file_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.gprw");
    let dec = NeuralDecoder::random(&NeuralDecoderConfig::tiny(), 77).unwrap();
    save_weights(&dec, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, dec);
    assert_eq!(encode(&back), std::fs::read(&path).unwrap());
    let z = [0.1, -0.2, 0.3, 0.9, -1.0, 0.0, 0.5, 0.25];
    assert_eq!(back.generate(&z).unwrap(), dec.generate(&z).unwrap());
}

#[test]
fn corrupted_weight_files_have_distinct_errors() {
    let dec = NeuralDecoder::random(&NeuralDecoderConfig::tiny(), 78).unwrap();
    let good = encode(&dec);
    let kind = |bytes: &[u8]| match decode(bytes) {
        Err(Error::Weights(e)) => e,
        other => panic!("expected weights error, got {other:?}"),
    };

    let mut b = good.clone();
    b[0] = b'X';
    assert!(matches!(kind(&b), WeightsError::BadMagic { .. }));

    let mut b = good.clone();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(
        kind(&b),
        WeightsError::VersionMismatch {
            found: 2,
            expected: 1
        }
    ));

    let mut b = good.clone();
    let at = 12 + 2 * 16;
    b[at..at + 4].copy_from_slice(&5u32.to_le_bytes());
    assert!(matches!(
        kind(&b),
        WeightsError::DimensionMismatch { layer: 2, .. }
    ));

    for cut in [good.len() - 1, good.len() / 2, 30] {
        assert!(matches!(kind(&good[..cut]), WeightsError::Truncated { .. }));
    }

    let mut b = good.clone();
    let mid = b.len() / 2;
    b[mid] ^= 0x40;
    assert!(matches!(kind(&b), WeightsError::Checksum { .. }));

    let mut b = good.clone();
    b.push(0);
    assert!(matches!(kind(&b), WeightsError::TrailingBytes { extra: 1 }));

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_weights(dir.path().join("missing.gprw")),
        Err(Error::Io(_))
    ));
}

#[test]
fn neural_spec_with_weight_file_builds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.gprw");
    let dec = NeuralDecoder::random(&NeuralDecoderConfig::tiny(), 5).unwrap();
    save_weights(&dec, &path).unwrap();
    let spec = PriorSpec::Neural {
        weights: Some(path),
        latent_dim: 8,
        channels: vec![],
        seed: 0,
    };
    match spec.build(1024, 16_000).unwrap() {
        Prior::Neural(built) => assert_eq!(built, dec),
        other => panic!("unexpected {:?}", other.kind()),
    }
    assert!(matches!(
        spec.build(2048, 16_000),
        Err(Error::LengthMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_idempotent_and_non_expansive(
        a in prop::collection::vec(-5.0f64..5.0, 1..40),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.gen_range(-5.0..5.0)).collect();
        let pa = project(&a);
        prop_assert_eq!(project(&pa), pa.clone());
        prop_assert!(pa.iter().all(|v| v.abs() <= 1.0));
        let pb = project(&b);
        let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d(&pa, &pb) <= d(&a, &b) + 1e-15);
    }

    #[test]
    fn harmonic_with_muted_gains_is_silent(seed in any::<u64>()) {
        let h = HarmonicPrior::new(HarmonicParams::default(), 512, 16_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = uniform(&mut rng, 100);
        z[1..=8].fill(-1.0);
        prop_assert!(h.generate(&z).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn outputs_are_finite_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kinds = all_kinds(1024);
        // Harmonic amplitude is bounded by the gain sum Σ 1/h; percussive by
        // its gain; the neural decoder by tanh.
        let bounds = [(1..=8).map(|h| 1.0 / h as f64).sum::<f64>(), 1.0, 1.0];
        for (prior, bound) in kinds.iter().zip(bounds) {
            let z = uniform(&mut rng, prior.latent_dim());
            let x = prior.generate(&z).unwrap();
            prop_assert!(x.iter().all(|v| v.is_finite() && v.abs() <= bound));
        }
    }

    #[test]
    fn neural_output_length_is_16_times_4_pow_r(r in 1usize..4, width in 1usize..4, seed in any::<u64>()) {
        let mut channels = vec![width; r];
        channels.push(1);
        let cfg = NeuralDecoderConfig { latent_dim: 3, channels, kernel: 25, stride: 4 };
        let dec = NeuralDecoder::random(&cfg, seed).unwrap();
        prop_assert_eq!(dec.output_len(), 16 * 4usize.pow(r as u32));
        prop_assert_eq!(dec.generate(&[0.1, 0.2, 0.3]).unwrap().len(), dec.output_len());
    }
}
