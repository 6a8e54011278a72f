//! Automatic gain control: per-frame gain from mean/peak targets, frame
//! smoothing with a saturation guard, and sigmoid sample ramps across gain
//! discontinuities. Downward steps re-ramp the tail of the previous frame,
//! so the processor runs with one frame of lookahead.

use serde::{Deserialize, Serialize};

use crate::dsp::{AudioFrame, FRAME_SIZE};
use crate::error::{Error, Result};

/// Gain-control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgcConfig {
    /// Target mean absolute amplitude.
    pub target_mean: f64,
    /// Target maximum absolute amplitude.
    pub target_max: f64,
    /// Frame-gain smoothing factor α.
    pub smoothing: f64,
    /// Sigmoid ramp length in samples.
    pub ramp_len: usize,
    /// Disable the sample ramps (full gain jumps at frame boundaries).
    pub sigmoid_smoothing: bool,
}

impl Default for AgcConfig {
    fn default() -> Self {
        Self {
            target_mean: 0.125,
            target_max: 0.5,
            smoothing: 0.9,
            ramp_len: FRAME_SIZE,
            sigmoid_smoothing: true,
        }
    }
}

impl AgcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_mean > 0.0 && self.target_mean <= self.target_max && self.target_max <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "gain targets must satisfy 0 < mean ({}) <= max ({}) <= 1",
                self.target_mean, self.target_max
            )));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::InvalidConfig(format!(
                "frame smoothing {} outside [0, 1]",
                self.smoothing
            )));
        }
        if self.ramp_len == 0 || self.ramp_len > FRAME_SIZE {
            return Err(Error::InvalidConfig(format!(
                "ramp length {} outside [1, {FRAME_SIZE}]",
                self.ramp_len
            )));
        }
        Ok(())
    }
}

/// Gain ramp across a discontinuity: ramp[m] = G_prev + ΔG·σ(−5 + 10m/M).
pub fn sigmoid_smooth(g_prev: f64, g_curr: f64, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidConfig("sigmoid ramp needs at least one sample".into()));
    }
    let delta = g_curr - g_prev;
    Ok((0..m)
        .map(|i| {
            let x = -5.0 + 10.0 / m as f64 * i as f64;
            g_prev + delta / (1.0 + (-x).exp())
        })
        .collect())
}

struct PendingFrame {
    samples: Vec<f64>,
    index: u64,
    gains: Vec<f64>,
    flat: f64,
}

/// Streaming gain controller with one frame of lookahead.
pub struct AgcProcessor {
    config: AgcConfig,
    prev_gain: Option<f64>,
    pending: Option<PendingFrame>,
    last_gain: f64,
    saturations: u64,
}

impl AgcProcessor {
    pub fn new(config: AgcConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            prev_gain: None,
            pending: None,
            last_gain: 1.0,
            saturations: 0,
        })
    }

    /// The most recent smoothed frame gain.
    pub fn last_gain(&self) -> f64 {
        self.last_gain
    }

    /// How many output samples hit the [−1, 1] clamp.
    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    /// Per-frame gain: the lesser of the mean and peak targets, smoothed
    /// against the previous gain, then capped by the peak target. Returns
    /// the gain and the saturation guard. Silent frames hold the previous
    /// gain; the first frame starts the recursion unsmoothed.
    pub fn frame_gain(&mut self, frame: &AudioFrame) -> (f64, f64) {
        let n = frame.samples.len() as f64;
        let mean_amp = frame.samples.iter().map(|s| s.abs()).sum::<f64>() / n;
        let max_amp = frame.samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
        if max_amp < 1e-6 {
            let held = self.prev_gain.unwrap_or(1.0);
            self.prev_gain = Some(held);
            return (held, f64::INFINITY);
        }
        let guard = self.config.target_max / max_amp;
        let mut gain = (self.config.target_mean / mean_amp).min(guard);
        if let Some(prev) = self.prev_gain {
            gain = self.config.smoothing * prev + (1.0 - self.config.smoothing) * gain;
        }
        gain = gain.min(guard);
        self.prev_gain = Some(gain);
        (gain, guard)
    }

    fn emit(&mut self, pending: PendingFrame) -> AudioFrame {
        let samples: Vec<f64> = pending
            .samples
            .iter()
            .zip(&pending.gains)
            .map(|(&s, &g)| {
                let v = s * g;
                if v.abs() > 1.0 {
                    self.saturations += 1;
                    v.clamp(-1.0, 1.0)
                } else {
                    v
                }
            })
            .collect();
        AudioFrame {
            samples,
            index: pending.index,
        }
    }

    /// Push one frame; returns the previous frame amplified, so output
    /// lags input by one frame. Downward gain steps ramp the tail of the
    /// outgoing frame; upward steps ramp the head of the incoming one.
    pub fn process(&mut self, frame: &AudioFrame) -> Result<Option<AudioFrame>> {
        if frame.samples.len() != FRAME_SIZE {
            return Err(Error::InvalidFrame {
                expected: FRAME_SIZE,
                got: frame.samples.len(),
            });
        }
        let prev_flat = self.pending.as_ref().map(|p| p.flat);
        let (gain, _) = self.frame_gain(frame);
        self.last_gain = gain;
        let m = self.config.ramp_len;

        let out = match self.pending.take() {
            Some(mut prev) => {
                if self.config.sigmoid_smoothing && gain < prev.flat {
                    // Compose with any head ramp already on the frame so a
                    // down-step right after an up-step stays smooth.
                    let ramp = sigmoid_smooth(prev.flat, gain, m)?;
                    let start = FRAME_SIZE - m;
                    for (g, r) in prev.gains[start..].iter_mut().zip(&ramp) {
                        *g = g.min(*r);
                    }
                }
                Some(self.emit(prev))
            }
            None => None,
        };

        let mut gains = vec![gain; FRAME_SIZE];
        if self.config.sigmoid_smoothing {
            if let Some(prev_flat) = prev_flat {
                if gain > prev_flat {
                    let ramp = sigmoid_smooth(prev_flat, gain, m)?;
                    gains[..m].copy_from_slice(&ramp);
                }
            }
        }
        self.pending = Some(PendingFrame {
            samples: frame.samples.clone(),
            index: frame.index,
            gains,
            flat: gain,
        });
        Ok(out)
    }

    /// Flush the buffered lookahead frame at stream end.
    pub fn finish(&mut self) -> Option<AudioFrame> {
        self.pending.take().map(|p| self.emit(p))
    }
}
