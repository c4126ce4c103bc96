mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use storm_core::wind::{sample_airflow_profile, synthesize_wind_noise, AirflowProfile, Gust};

const SR: u32 = 16_000;

#[test]
fn gust_count_is_uniform_over_one_to_ten() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0u64; 10];
    let mut onsets = Vec::new();
    for _ in 0..10_000 {
        let p = sample_airflow_profile(4.0, &mut rng).unwrap();
        counts[p.gusts.len() - 1] += 1;
        // onset is uniform over the room left by the gust
        let g = p.gusts[0];
        onsets.push(g.onset / (4.0 - g.duration));
    }
    let p = common::chi_square_p(&counts, &[1000.0; 10]);
    assert!(p > 0.01, "chi-square p = {p}, counts {counts:?}");
    let p = common::ks_uniform_p(&onsets, 0.0, 1.0);
    assert!(p > 0.01, "onset KS p = {p}");
}

/// Fraction of periodogram energy below `hz`.
fn energy_below(x: &[f64], hz: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let cut = (hz * n as f64 / SR as f64) as usize;
    let half = &buf[..n / 2 + 1];
    let total: f64 = half.iter().map(|c| c.norm_sqr()).sum();
    let low: f64 = half[..=cut].iter().map(|c| c.norm_sqr()).sum();
    low / total
}

#[test]
fn full_speed_noise_is_low_frequency() {
    let p = AirflowProfile::constant(1.0, 4.0).unwrap();
    for seed in 0..5 {
        let w = synthesize_wind_noise(&p, SR, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let frac = energy_below(w.samples(), 500.0);
        assert!(frac >= 0.8, "seed {seed}: {frac}");
    }
}

#[test]
fn power_grows_with_speed() {
    let mut last = 0.0;
    for k in 1..=10 {
        let speed = k as f64 / 10.0;
        let p = AirflowProfile::constant(speed, 4.0).unwrap();
        let w = synthesize_wind_noise(&p, SR, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(w.power() >= last, "speed {speed}");
        last = w.power();
    }
}

#[test]
fn envelope_follows_airflow() {
    let profile = AirflowProfile {
        baseline_speed: 0.1,
        gusts: vec![
            Gust { onset: 0.5, duration: 1.5, peak: 0.9, attack: 0.3, decay: 0.3 },
            Gust { onset: 3.0, duration: 1.0, peak: 0.6, attack: 0.4, decay: 0.2 },
            Gust { onset: 5.0, duration: 2.0, peak: 1.0, attack: 0.2, decay: 0.5 },
        ],
        total_duration: 8.0,
    };
    let speeds = profile.sample_speeds(SR);
    let frame = (SR / 20) as usize;
    for seed in 0..3 {
        let w = synthesize_wind_noise(&profile, SR, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let rms: Vec<f64> = w
            .samples()
            .chunks(frame)
            .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let speed: Vec<f64> = speeds.chunks(frame).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let r = common::pearson(&rms, &speed);
        assert!(r > 0.8, "seed {seed}: r = {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn output_is_finite_and_bounded(seed in any::<u64>(), duration in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_airflow_profile(duration, &mut rng).unwrap();
        let w = synthesize_wind_noise(&p, SR, &mut rng).unwrap();
        prop_assert_eq!(w.len(), (duration * SR as f64).round() as usize);
        prop_assert!(w.samples().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn doubling_gust_peaks_never_lowers_energy(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = sample_airflow_profile(2.0, &mut rng).unwrap();
        let mut doubled = p.clone();
        doubled.gusts.iter_mut().for_each(|g| g.peak *= 2.0);
        let a = synthesize_wind_noise(&p, SR, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = synthesize_wind_noise(&doubled, SR, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(b.energy() >= a.energy(), "{} < {}", b.energy(), a.energy());
    }
}
