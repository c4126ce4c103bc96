//! Parametric wind-noise synthesis driven by randomized airflow profiles.
//!
//! White noise is shaped by a low-pass (two cascaded one-pole sections,
//! cutoff 100-300 Hz rising with the baseline airflow), amplitude-modulated
//! by the instantaneous airflow speed and by a slow random turbulence gain,
//! then soft-limited.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::signal::{wav, Waveform};

/// Largest gust count the profile sampler accepts.
pub const MAX_GUSTS: u32 = 10;

/// Output RMS of a constant full-speed (1.0) profile before turbulence.
const WIND_GAIN: f64 = 0.25;
const CUTOFF_MIN_HZ: f64 = 100.0;
const CUTOFF_SPAN_HZ: f64 = 200.0;
const TURBULENCE_RATE_HZ: f64 = 10.0;
const TURBULENCE_DEPTH: f64 = 0.3;

/// Number of gusts in a profile, `1..=MAX_GUSTS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct GustCount(u32);

impl GustCount {
    pub fn new(n: u32) -> Result<Self> {
        if (1..=MAX_GUSTS).contains(&n) {
            Ok(Self(n))
        } else {
            Err(Error::Parameter(format!(
                "gust count must be in 1..={MAX_GUSTS}, got {n}"
            )))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// One gust: a raised-cosine attack, a plateau at `peak`, a raised-cosine
/// decay. `attack` and `decay` are fractions of `duration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gust {
    pub onset: f64,
    pub duration: f64,
    pub peak: f64,
    pub attack: f64,
    pub decay: f64,
}

impl Gust {
    /// Ramp shape in `[0, 1]` at absolute time `t`.
    fn shape(&self, t: f64) -> f64 {
        if self.duration <= 0.0 || t < self.onset || t > self.onset + self.duration {
            return 0.0;
        }
        let u = (t - self.onset) / self.duration;
        if self.attack > 0.0 && u < self.attack {
            0.5 * (1.0 - (PI * u / self.attack).cos())
        } else if self.decay > 0.0 && u > 1.0 - self.decay {
            0.5 * (1.0 - (PI * (1.0 - u) / self.decay).cos())
        } else {
            1.0
        }
    }
}

/// Normalized airflow speed over time.
#[derive(Debug, Clone, PartialEq)]
pub struct AirflowProfile {
    pub baseline_speed: f64,
    pub gusts: Vec<Gust>,
    pub total_duration: f64,
}

impl AirflowProfile {
    /// A gust-free profile at constant speed.
    pub fn constant(speed: f64, total_duration: f64) -> Result<Self> {
        let p = Self {
            baseline_speed: speed,
            gusts: Vec::new(),
            total_duration,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_duration > 0.0 && self.total_duration.is_finite()) {
            return Err(Error::Parameter("profile duration must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_speed) {
            return Err(Error::Parameter(format!(
                "baseline speed {} outside [0, 1]",
                self.baseline_speed
            )));
        }
        for g in &self.gusts {
            if g.onset < 0.0 || g.duration < 0.0 || g.onset + g.duration > self.total_duration + 1e-9
            {
                return Err(Error::Parameter(format!(
                    "gust at {:.3}s lasting {:.3}s exceeds the profile duration {:.3}s",
                    g.onset, g.duration, self.total_duration
                )));
            }
            if g.peak < self.baseline_speed || !g.peak.is_finite() {
                return Err(Error::Parameter(format!(
                    "gust peak {} below baseline {}",
                    g.peak, self.baseline_speed
                )));
            }
            if !(0.0..=1.0).contains(&g.attack)
                || !(0.0..=1.0).contains(&g.decay)
                || g.attack + g.decay > 1.0 + 1e-12
            {
                return Err(Error::Parameter("gust ramp fractions must sum to <= 1".into()));
            }
        }
        Ok(())
    }

    /// Instantaneous speed: the baseline, raised by the strongest active gust.
    pub fn speed_at(&self, t: f64) -> f64 {
        self.gusts.iter().fold(self.baseline_speed, |acc, g| {
            acc.max(self.baseline_speed + (g.peak - self.baseline_speed) * g.shape(t))
        })
    }

    pub fn sample_speeds(&self, sample_rate: u32) -> Vec<f64> {
        let n = (self.total_duration * sample_rate as f64).round() as usize;
        (0..n)
            .map(|i| self.speed_at(i as f64 / sample_rate as f64))
            .collect()
    }
}

/// Ranges used by [`sample_airflow_profile`].
#[derive(Debug, Clone, PartialEq)]
pub struct AirflowSampler {
    pub gusts_min: GustCount,
    pub gusts_max: GustCount,
    pub baseline: (f64, f64),
    pub gust_duration: (f64, f64),
    /// Gust peak as a fraction of the headroom `1 - baseline`.
    pub gust_strength: (f64, f64),
}

impl Default for AirflowSampler {
    fn default() -> Self {
        Self {
            gusts_min: GustCount(1),
            gusts_max: GustCount(MAX_GUSTS),
            baseline: (0.05, 0.4),
            gust_duration: (0.2, 2.0),
            gust_strength: (0.2, 1.0),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draws a random profile of `duration` seconds with the default ranges.
pub fn sample_airflow_profile<R: Rng + ?Sized>(duration: f64, rng: &mut R) -> Result<AirflowProfile> {
    AirflowSampler::default().sample(duration, rng)
}

impl AirflowSampler {
    pub fn validate(&self) -> Result<()> {
        if self.gusts_min > self.gusts_max {
            return Err(Error::Parameter("gusts_min exceeds gusts_max".into()));
        }
        let ordered = |(lo, hi): (f64, f64)| lo <= hi && lo.is_finite() && hi.is_finite();
        if !ordered(self.baseline) || self.baseline.0 < 0.0 || self.baseline.1 > 1.0 {
            return Err(Error::Parameter("baseline range must lie within [0, 1]".into()));
        }
        if !ordered(self.gust_duration) || self.gust_duration.0 < 0.0 {
            return Err(Error::Parameter("gust duration range must be non-negative".into()));
        }
        if !ordered(self.gust_strength) || self.gust_strength.0 < 0.0 || self.gust_strength.1 > 1.0
        {
            return Err(Error::Parameter("gust strength range must lie within [0, 1]".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, duration: f64, rng: &mut R) -> Result<AirflowProfile> {
        self.validate()?;
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Parameter("profile duration must be positive".into()));
        }
        let n = rng.gen_range(self.gusts_min.get()..=self.gusts_max.get());
        let baseline = uniform(rng, self.baseline);
        let gusts = (0..n)
            .map(|_| {
                let dur = uniform(rng, self.gust_duration).min(duration);
                let onset = if duration > dur {
                    rng.gen_range(0.0..duration - dur)
                } else {
                    0.0
                };
                let peak = baseline + uniform(rng, self.gust_strength) * (1.0 - baseline);
                Gust {
                    onset,
                    duration: dur,
                    peak,
                    attack: rng.gen_range(0.1..0.5),
                    decay: rng.gen_range(0.1..0.5),
                }
            })
            .collect();
        Ok(AirflowProfile {
            baseline_speed: baseline,
            gusts,
            total_duration: duration,
        })
    }
}

/// Smooth random gain around 1 with control points at `TURBULENCE_RATE_HZ`.
fn turbulence_gain<R: Rng + ?Sized>(n: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let step = (sample_rate as f64 / TURBULENCE_RATE_HZ).max(1.0);
    let n_ctrl = (n as f64 / step).ceil() as usize + 2;
    let ctrl: Vec<f64> = (0..n_ctrl).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (0..n)
        .map(|i| {
            let pos = i as f64 / step;
            let k = pos.floor() as usize;
            let frac = pos - k as f64;
            let w = 0.5 * (1.0 - (PI * frac).cos());
            1.0 + TURBULENCE_DEPTH * (ctrl[k] * (1.0 - w) + ctrl[k + 1] * w)
        })
        .collect()
}

/// Renders `profile` to a waveform of `round(duration * sample_rate)` samples.
///
/// The shaping filter's cutoff follows the baseline airflow; gusts scale the
/// amplitude, so raising any part of the profile never lowers the output
/// level. A `tanh` limiter keeps the output inside `(-1, 1)`.
pub fn synthesize_wind_noise<R: Rng + ?Sized>(
    profile: &AirflowProfile,
    sample_rate: u32,
    rng: &mut R,
) -> Result<Waveform> {
    profile.validate()?;
    if sample_rate == 0 {
        return Err(Error::Parameter("sample rate must be positive".into()));
    }
    let speeds = profile.sample_speeds(sample_rate);
    let n = speeds.len();
    let turbulence = turbulence_gain(n, sample_rate, rng);
    let fc = CUTOFF_MIN_HZ + CUTOFF_SPAN_HZ * profile.baseline_speed;
    let a = (-2.0 * PI * fc / sample_rate as f64).exp();
    let b = (1.0 - a * a).sqrt();
    // the cascade has variance (1 + a^2) / (1 - a^2) for unit input
    let norm = ((1.0 - a * a) / (1.0 + a * a)).sqrt();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    // pre-roll so the filter state is stationary at the first sample
    for _ in 0..sample_rate / 20 {
        let x: f64 = StandardNormal.sample(rng);
        s1 = a * s1 + b * x;
        s2 = a * s2 + b * s1;
    }
    let mut out = Vec::with_capacity(n);
    for (&speed, &gain) in speeds.iter().zip(&turbulence) {
        let x: f64 = StandardNormal.sample(rng);
        s1 = a * s1 + b * x;
        s2 = a * s2 + b * s1;
        out.push((WIND_GAIN * speed * gain * s2 * norm).tanh());
    }
    Ok(Waveform::from_parts(out, sample_rate))
}

/// Recorded wind-noise clips used in place of synthesis.
#[derive(Debug, Clone)]
pub struct RecordedNoiseBank {
    clips: Vec<Waveform>,
}

impl RecordedNoiseBank {
    /// Loads every `.wav` file under `dir` (non-recursive, sorted by name).
    /// Files that are not mono at `sample_rate` are rejected.
    pub fn load_dir(dir: impl AsRef<Path>, sample_rate: u32) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
            })
            .collect();
        paths.sort();
        let clips = paths
            .iter()
            .map(|p| wav::read_wav(p, sample_rate))
            .collect::<Result<Vec<_>>>()?;
        Self::from_clips(clips)
    }

    pub fn from_clips(clips: Vec<Waveform>) -> Result<Self> {
        let clips: Vec<_> = clips.into_iter().filter(|c| c.peak() > 0.0).collect();
        if clips.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// A random excerpt of `len` samples; short clips are looped.
    pub fn excerpt<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Waveform {
        let clip = &self.clips[rng.gen_range(0..self.clips.len())];
        let src = clip.samples();
        let start = rng.gen_range(0..src.len());
        let samples = (0..len).map(|i| src[(start + i) % src.len()]).collect();
        Waveform::from_parts(samples, clip.sample_rate())
    }
}
