use priorsep::engine::{separate, separate_from, separate_observed, AdamConfig, AdamState, PgdConfig};
use priorsep::priors::{
    Generator, HarmonicParams, HarmonicPrior, LatentVector, PercussiveParams, PercussivePrior, Prior,
};
use priorsep::Error;

fn pair(len: usize) -> Vec<Prior> {
    vec![
        Prior::Harmonic(HarmonicPrior::new(HarmonicParams::default(), len, 16_000).unwrap()),
        Prior::Percussive(PercussivePrior::new(PercussiveParams::default(), len, 16_000).unwrap()),
    ]
}

fn cfg(iterations: usize) -> PgdConfig {
    PgdConfig {
        iterations,
        ..PgdConfig::default()
    }
}

fn target(priors: &[Prior], z: &[&[f64]]) -> Vec<f64> {
    let mut mix = vec![0.0; priors[0].output_len()];
    for (p, z) in priors.iter().zip(z) {
        for (m, v) in mix.iter_mut().zip(p.generate(z).unwrap()) {
            *m += v;
        }
    }
    mix
}

/// Reference deltas computed independently (lr 0.05, defaults otherwise).
#[test]
fn adam_matches_reference_table() {
    let grads = [[0.5, 1e-3], [-1.0, 2e-3], [0.25, -5e-3], [2.0, 0.0], [0.0, 1e-2]];
    let expected = [
        [-0.04999999900000002, -0.049999500004999954],
        [0.01830517612028269, -0.048258796121457545],
        [0.006834533049205404, 0.013938738955995296],
        [-0.02243910405202543, 0.011417761213079395],
        [-0.01896615964088008, -0.019295221934070912],
    ];
    let mut state = AdamState::new(2);
    for (t, (g, want)) in grads.iter().zip(expected).enumerate() {
        let got = state.step(g, 0.05, &AdamConfig::default(), t + 1).unwrap();
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() <= 1e-15, "step {}: {a} vs {b}", t + 1);
        }
    }
    assert_eq!(state.step, 5);
}

#[test]
fn adam_rejects_wrong_length() {
    let mut state = AdamState::new(3);
    assert!(matches!(
        state.step(&[1.0], 0.05, &AdamConfig::default(), 1),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn zero_learning_rate_freezes_latents() {
    let priors = pair(2048);
    let mix = target(&priors, &[&[0.3; 100], &[-0.2; 100]]);
    let c = PgdConfig {
        learning_rate: 0.0,
        ..cfg(20)
    };
    let r = separate(&mix, &priors, &c).unwrap();
    assert!(r.latents.iter().all(|z| z.as_slice().iter().all(|v| *v == 0.0)));
    assert!(r.trace.iter().all(|t| t.total == r.trace[0].total));
    assert_eq!(r.final_loss, r.initial);
}

#[test]
fn trace_length_and_indices() {
    let priors = pair(2048);
    let mix = target(&priors, &[&[0.1; 100], &[0.4; 100]]);
    for (t, stride) in [(10, 1), (10, 3), (7, 7), (5, 10)] {
        let c = PgdConfig {
            trace_stride: stride,
            ..cfg(t)
        };
        let r = separate(&mix, &priors, &c).unwrap();
        assert_eq!(r.trace.len(), t.div_ceil(stride));
        assert_eq!(r.trace[0].iteration, 1);
        assert!(r
            .trace
            .windows(2)
            .all(|w| w[1].iteration == w[0].iteration + stride));
        assert_eq!(r.trace[0].total, r.initial.total);
        assert_eq!(r.returned_iteration, t + 1);
    }
}

#[test]
fn separation_is_bitwise_deterministic() {
    let priors = pair(2048);
    let mix = target(&priors, &[&[0.5; 100], &[-0.5; 100]]);
    let a = separate(&mix, &priors, &cfg(30)).unwrap();
    let b = separate(&mix, &priors, &cfg(30)).unwrap();
    assert_eq!(a.latents, b.latents);
    assert_eq!(a.sources, b.sources);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn iterates_stay_in_the_box() {
    let priors = pair(2048);
    let mix: Vec<f64> = (0..2048).map(|n| 3.0 * ((n as f64) * 0.37).sin()).collect();
    let c = PgdConfig {
        learning_rate: 0.5,
        ..cfg(40)
    };
    let init = vec![
        LatentVector::new(vec![2.0; 100]).unwrap(),
        LatentVector::new(vec![-3.0; 100]).unwrap(),
    ];
    let mut seen = 0;
    let r = separate_observed(&mix, &priors, init, &c, |_, zs| {
        assert!(zs.iter().all(|z| z.as_slice().iter().all(|v| v.abs() <= 1.0)));
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 40);
    assert!(r.latents.iter().all(LatentVector::in_box));
}

#[test]
fn silent_mixture_drives_sources_quiet() {
    let priors = pair(4096);
    let r = separate(&vec![0.0; 4096], &priors, &cfg(200)).unwrap();
    for s in &r.sources {
        let rms = (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
        assert!(rms <= 0.05, "rms {rms}");
    }
    assert!(r.final_loss.total < r.initial.total);
}

#[test]
fn best_iterate_is_never_worse_than_last() {
    let priors = pair(2048);
    let mix = target(&priors, &[&[0.7; 100], &[0.2; 100]]);
    let last = separate(&mix, &priors, &cfg(60)).unwrap();
    let c = PgdConfig {
        return_best: true,
        ..cfg(60)
    };
    let best = separate(&mix, &priors, &c).unwrap();
    assert!(best.final_loss.total <= last.final_loss.total);
    let min_traced = best.trace.iter().map(|t| t.total).fold(f64::INFINITY, f64::min);
    assert!(best.final_loss.total <= min_traced.min(last.final_loss.total));
}

#[test]
fn input_validation() {
    let priors = pair(2048);
    let mix = vec![0.0; 2048];
    assert!(matches!(
        separate(&mix[..1024], &priors, &cfg(1)),
        Err(Error::LengthMismatch { .. })
    ));
    assert!(matches!(
        separate::<Prior>(&mix, &[], &cfg(1)),
        Err(Error::Empty(_))
    ));
    assert!(separate(&mix, &priors, &cfg(0)).is_err());
    let short = vec![LatentVector::zeros(100)];
    assert!(matches!(
        separate_from(&mix, &priors, short, &cfg(1)),
        Err(Error::LengthMismatch { .. })
    ));
    let wrong_dim = vec![LatentVector::zeros(100), LatentVector::zeros(7)];
    assert!(separate_from(&mix, &priors, wrong_dim, &cfg(1)).is_err());
}

#[test]
fn non_finite_mixture_is_reported() {
    let priors = pair(2048);
    let mut mix = vec![0.0; 2048];
    mix[300] = f64::NAN;
    let err = separate(&mix, &priors, &cfg(5)).unwrap_err();
    assert!(
        matches!(err, Error::NonFinite { .. } | Error::InvalidParameter(_)),
        "{err:?}"
    );
}
