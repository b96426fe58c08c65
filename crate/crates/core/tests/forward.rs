use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specbias::forward::{covariance_check, simulate, SourceKind};
use specbias::rng::{self, tag};
use specbias::spectrum::{spectrum_to_timeseries, SpectralParams};
use specbias::{EpochSet, ForwardSpec, SourceSpec};

fn diag(c: usize, v: f64) -> Vec<Vec<f64>> {
    (0..c).map(|i| (0..c).map(|j| if i == j { v } else { 0.0 }).collect()).collect()
}

fn aperiodic(beta: f64, offset: f64) -> SourceSpec {
    SourceSpec { kind: SourceKind::Aperiodic, params: SpectralParams::aperiodic(beta, offset) }
}

fn oscillatory(f: f64) -> SourceSpec {
    SourceSpec { kind: SourceKind::Oscillatory, params: SpectralParams::aperiodic(1.5, 1.0).with_peak(f, 1.0, 2.0) }
}

fn spec(leadfield: Vec<Vec<f64>>, sources: Vec<SourceSpec>, noise: f64, n_trials: usize) -> ForwardSpec {
    let c = leadfield.len();
    ForwardSpec { leadfield, sources, noise_cov: diag(c, noise), n_trials, ..ForwardSpec::default() }
}

/// Per-channel variance pooled over all trials.
fn channel_variances(e: &EpochSet) -> Vec<f64> {
    let c = e.n_channels;
    (0..c)
        .map(|ch| {
            let vals: Vec<f64> = (0..e.len()).flat_map(|i| e.data.row(i * c + ch).to_vec()).map(f64::from).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
        })
        .collect()
}

#[test]
fn identity_leadfield_passes_the_source_through() {
    let s = spec(vec![vec![1.0]], vec![aperiodic(1.5, 1.0)], 0.0, 3);
    let e = simulate(&s).unwrap();
    let sp = s.sources[0].spectrum(&s.options).unwrap();
    for i in 0..3 {
        let src =
            spectrum_to_timeseries(&sp, &s.config, &mut rng::stream(s.config.seed, &[tag::SOURCE, i, 0])).unwrap();
        let got = e.signal(i as usize).unwrap();
        assert!(got.iter().zip(&src).all(|(&a, &b)| a == b as f32));
    }
}

#[test]
fn silent_sources_leave_only_the_noise() {
    let s = spec(vec![vec![0.0]; 3], vec![aperiodic(1.5, 1.0)], 0.5, 100);
    let e = simulate(&s).unwrap();
    for v in channel_variances(&e) {
        assert!((v - 0.5).abs() / 0.5 < 0.02, "{v}");
    }
}

#[test]
fn random_leadfield_factorizes() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let a: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let s = spec(a, vec![aperiodic(1.2, 0.5), oscillatory(12.0)], 0.05, 100);
    let rep = covariance_check(&simulate(&s).unwrap(), &s).unwrap();
    assert!(rep.n_pooled >= 100_000);
    assert!(rep.rel_frobenius_err < 0.05, "{}", rep.rel_frobenius_err);
}

#[test]
fn offset_plus_log10_4_quadruples_aperiodic_power() {
    let lf = vec![vec![1.0], vec![0.5]];
    let base = spec(lf.clone(), vec![aperiodic(1.5, 1.0)], 0.0, 100);
    let lifted = spec(lf, vec![aperiodic(1.5, 1.0 + 4f64.log10())], 0.0, 100);
    let t0: f64 = channel_variances(&simulate(&base).unwrap()).iter().sum();
    let t1: f64 = channel_variances(&simulate(&lifted).unwrap()).iter().sum();
    assert!((t1 / t0 - 4.0).abs() / 4.0 < 0.05, "{}", t1 / t0);
}

#[test]
fn mixing_is_linear_in_the_leadfield() {
    let a1 = vec![vec![1.0, 0.2], vec![0.0, 1.0], vec![0.5, -0.3]];
    let a2 = vec![vec![-0.4, 0.1], vec![0.7, 0.0], vec![0.2, 0.9]];
    let sum: Vec<Vec<f64>> = a1.iter().zip(&a2).map(|(r, q)| r.iter().zip(q).map(|(x, y)| x + y).collect()).collect();
    let sources = vec![aperiodic(1.5, 1.0), oscillatory(10.0)];
    let e1 = simulate(&spec(a1, sources.clone(), 0.0, 4)).unwrap();
    let e2 = simulate(&spec(a2, sources.clone(), 0.0, 4)).unwrap();
    let es = simulate(&spec(sum, sources, 0.0, 4)).unwrap();
    let scale = es.data.iter().fold(0f32, |m, v| m.max(v.abs()));
    for ((a, b), s) in e1.data.iter().zip(e2.data.iter()).zip(es.data.iter()) {
        assert!((a + b - s).abs() <= 1e-5 * scale);
    }
}

#[test]
fn aperiodic_only_has_no_oscillatory_trace() {
    let s = spec(diag(2, 1.0), vec![aperiodic(1.5, 1.0), aperiodic(2.0, 0.5)], 0.0, 2);
    let rep = covariance_check(&simulate(&s).unwrap(), &s).unwrap();
    assert_eq!(rep.trace_osc, 0.0);
    assert!(rep.trace_ratio.is_none());
}

#[test]
fn default_spec_is_dominated_by_aperiodic_power() {
    let s = ForwardSpec::default();
    let rep = covariance_check(&simulate(&s).unwrap(), &s).unwrap();
    assert!(rep.trace_ratio.unwrap() > 10.0);
}

#[test]
fn same_seed_same_trials() {
    let s = ForwardSpec { n_trials: 5, ..ForwardSpec::default() };
    assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
}
