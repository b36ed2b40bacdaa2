use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::Tensor;

use super::{BandManifest, SampleSet};

pub const SYNTH_NOISE_STD: f64 = 0.1;
/// Peak of the seasonal bump in the temporal task.
pub const SYNTH_BUMP_AMPLITUDE: f64 = 0.3;
/// Class-1 offset on the shifted channels of the channel task.
pub const SYNTH_SHIFT: f64 = 0.3;

/// Which kind of signal separates the two classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthTask {
    /// Same channel means, different timing of a seasonal bump.
    Temporal,
    /// Flat in time, different means on half the channels.
    Channel,
}

impl SynthTask {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthTask::Temporal => "temporal",
            SynthTask::Channel => "channel",
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal" => Ok(SynthTask::Temporal),
            "channel" => Ok(SynthTask::Channel),
            other => Err(Error::invalid(format!("unknown task {other:?} (temporal, channel)"))),
        }
    }
}

/// Baseline level of channel `c`, shared by both classes.
fn base_level(c: usize, channels: usize) -> f64 {
    0.3 + 0.4 * c as f64 / (channels - 1) as f64
}

/// Half-sine of width `t/2` centred at `centre`, on a circular time axis of length `t`.
fn bump(step: usize, centre: f64, t: usize) -> f64 {
    let len = t as f64;
    let mut d = (step as f64 - centre).rem_euclid(len);
    if d >= len / 2.0 {
        d -= len;
    }
    let half_width = len / 4.0;
    if d.abs() >= half_width {
        0.0
    } else {
        SYNTH_BUMP_AMPLITUDE * (PI * (d + half_width) / (2.0 * half_width)).sin()
    }
}

/// `n` seeded samples of `t` steps and `c` channels; sample `i` has label `i % 2`.
///
/// Temporal task: every channel of every sample carries a seasonal bump; class 0 peaks
/// at `t/4`, class 1 half a period later, so time-averaged channel means match across
/// classes. Channel task: flat profiles, with class 1 raised by [`SYNTH_SHIFT`] on the
/// first `c/2` channels. Both add Gaussian noise of std [`SYNTH_NOISE_STD`].
pub fn synth(task: SynthTask, n: usize, t: usize, c: usize, seed: u64) -> Result<SampleSet> {
    if n < 2 || t < 4 || c < 2 {
        return Err(Error::invalid(format!(
            "synthetic task needs n >= 2, t >= 4, c >= 2; got n={n}, t={t}, c={c}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(n * t * c);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        labels.push(label);
        let centre = t as f64 / 4.0 + if label == 1 { t as f64 / 2.0 } else { 0.0 };
        for step in 0..t {
            for ch in 0..c {
                let signal = match task {
                    SynthTask::Temporal => bump(step, centre, t),
                    SynthTask::Channel if label == 1 && ch < c / 2 => SYNTH_SHIFT,
                    SynthTask::Channel => 0.0,
                };
                data.push(base_level(ch, c) + signal + rng.normal(0.0, SYNTH_NOISE_STD));
            }
        }
    }
    let names: Vec<String> = (0..c).map(|ch| format!("ch{ch}")).collect();
    SampleSet::new(
        Tensor::new(vec![n, t, c], data)?,
        labels,
        BandManifest::unassigned(&names)?,
        (0..n).map(|i| format!("s{i}")).collect(),
    )
}
