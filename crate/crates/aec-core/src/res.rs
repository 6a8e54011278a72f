//! Residual-echo suppression support: training targets (band gains and
//! double-talk labels), stacked MFCC features, a coherence-based nonlinear
//! processing gain, and band-gain masking of the error spectrum.

use num_complex::Complex;

use crate::dsp::{
    AudioFrame, MelFilterBank, MfccExtractor, SpectralFrame, StftAnalyzer, MFCC_DIM, NUM_BANDS,
    SPECTRUM_BINS,
};
use crate::error::{Error, Result};
use crate::nn::NeuralModel;

/// Frame RMS above this level counts as voice activity.
pub const DTD_THRESHOLD_DBFS: f64 = -50.0;
/// Per-frame smoothing factor for the coherence spectra.
pub const NLP_SMOOTHING: f64 = 0.93;
/// Bias keeping a sliver of near-end evidence alive in echo-dominated bins.
pub const NLP_BIAS: f64 = 0.1;
/// Energy floor preventing division by zero in gain targets.
pub const ENERGY_FLOOR: f64 = 1e-10;
/// Stacked far+error MFCC feature length.
pub const FEATURE_DIM: usize = 2 * MFCC_DIM;
/// Suppression network output width: band gains plus the near-end
/// speech probability.
pub const SUPPRESSOR_OUTPUTS: usize = NUM_BANDS + 1;

/// Per-mel-band amplitude gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandGains {
    pub gains: [f64; NUM_BANDS],
}

impl BandGains {
    pub fn ones() -> Self {
        Self {
            gains: [1.0; NUM_BANDS],
        }
    }

    /// Clip into the mask range [0, 1].
    pub fn clamped(mut self) -> Self {
        for g in &mut self.gains {
            *g = g.clamp(0.0, 1.0);
        }
        self
    }
}

/// Frame-level voice activity of both conversation sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DtdLabel {
    pub far_active: bool,
    pub near_active: bool,
}

/// The four talk states the two activity bits encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TalkState {
    Silence,
    FarOnly,
    NearOnly,
    DoubleTalk,
}

impl DtdLabel {
    pub fn state(&self) -> TalkState {
        match (self.far_active, self.near_active) {
            (false, false) => TalkState::Silence,
            (true, false) => TalkState::FarOnly,
            (false, true) => TalkState::NearOnly,
            (true, true) => TalkState::DoubleTalk,
        }
    }
}

/// Activity thresholds for the two sides, in dB relative to full scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtdThresholds {
    pub far_dbfs: f64,
    pub near_dbfs: f64,
}

impl Default for DtdThresholds {
    fn default() -> Self {
        Self {
            far_dbfs: DTD_THRESHOLD_DBFS,
            near_dbfs: DTD_THRESHOLD_DBFS,
        }
    }
}

/// Frame RMS in dB relative to full scale (1.0). Silence maps to −∞.
pub fn frame_rms_dbfs(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let mean_sq = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    if mean_sq <= 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * mean_sq.log10()
}

/// Supervision for the gain head: per-band √(E_near / E_error), clipped to
/// [0, 1] so the mask attenuates and never amplifies.
pub fn target_band_gains(
    near_clean: &SpectralFrame,
    error: &SpectralFrame,
    mel: &MelFilterBank,
) -> BandGains {
    let es = mel.band_energies(near_clean);
    let ee = mel.band_energies(error);
    let mut gains = [0.0; NUM_BANDS];
    for b in 0..NUM_BANDS {
        let s = es.energies[b].max(ENERGY_FLOOR);
        let e = ee.energies[b].max(ENERGY_FLOOR);
        gains[b] = (s / e).sqrt().min(1.0);
    }
    BandGains { gains }
}

/// Supervision for the double-talk head: each side active iff its frame
/// RMS exceeds the threshold.
pub fn target_dtd(
    far: &AudioFrame,
    near_clean: &AudioFrame,
    thresholds: &DtdThresholds,
) -> DtdLabel {
    DtdLabel {
        far_active: frame_rms_dbfs(&far.samples) > thresholds.far_dbfs,
        near_active: frame_rms_dbfs(&near_clean.samples) > thresholds.near_dbfs,
    }
}

/// Streaming extractor producing the suppressor input: far-end and error
/// MFCCs concatenated. Emission lags the input by the delta lookahead.
pub struct FeatureExtractor {
    mel: MelFilterBank,
    far_stft: StftAnalyzer,
    far_mfcc: MfccExtractor,
    error_stft: StftAnalyzer,
    error_mfcc: MfccExtractor,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FeatureExtractor {
    pub fn new() -> Self {
        Self {
            mel: MelFilterBank::new(),
            far_stft: StftAnalyzer::new(),
            far_mfcc: MfccExtractor::new(),
            error_stft: StftAnalyzer::new(),
            error_mfcc: MfccExtractor::new(),
        }
    }

    /// Advance both feature streams one frame. Returns the stacked
    /// 78-dimensional vector once the lookahead window has filled.
    pub fn push(&mut self, far: &AudioFrame, error: &AudioFrame) -> Result<Option<Vec<f64>>> {
        let far_spec = self.far_stft.process(far)?;
        let err_spec = self.error_stft.process(error)?;
        let far_feat = self.far_mfcc.push(&self.mel.band_energies(&far_spec));
        let err_feat = self.error_mfcc.push(&self.mel.band_energies(&err_spec));
        match (far_feat, err_feat) {
            (Some(f), Some(e)) => Ok(Some(stack(&f.values, &e.values))),
            (None, None) => Ok(None),
            _ => unreachable!("both extractors fill their windows in lockstep"),
        }
    }

    /// Drain the features still held back by the lookahead window.
    pub fn finish(&mut self) -> Vec<Vec<f64>> {
        let far = self.far_mfcc.finish();
        let err = self.error_mfcc.finish();
        far.iter()
            .zip(&err)
            .map(|(f, e)| stack(&f.values, &e.values))
            .collect()
    }

    pub fn reset(&mut self) {
        self.far_stft.reset();
        self.far_mfcc.reset();
        self.error_stft.reset();
        self.error_mfcc.reset();
    }
}

fn stack(a: &[f64; MFCC_DIM], b: &[f64; MFCC_DIM]) -> Vec<f64> {
    let mut v = Vec::with_capacity(FEATURE_DIM);
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// Smoothed auto- and cross-spectra behind the coherence gains.
#[derive(Debug, Clone)]
pub struct NlpState {
    s_ff: Vec<f64>,
    s_nn: Vec<f64>,
    s_ee: Vec<f64>,
    s_nf: Vec<Complex<f64>>,
    s_ne: Vec<Complex<f64>>,
}

impl Default for NlpState {
    fn default() -> Self {
        Self::new()
    }
}

impl NlpState {
    pub fn new() -> Self {
        Self {
            s_ff: vec![0.0; SPECTRUM_BINS],
            s_nn: vec![0.0; SPECTRUM_BINS],
            s_ee: vec![0.0; SPECTRUM_BINS],
            s_nf: vec![Complex::new(0.0, 0.0); SPECTRUM_BINS],
            s_ne: vec![Complex::new(0.0, 0.0); SPECTRUM_BINS],
        }
    }
}

/// Coherence-based per-bin suppression gain. Bins where the microphone is
/// coherent with the far end (echo) drop toward zero; bins coherent with
/// the error (surviving near-end content) stay open. Bins with no evidence
/// default to 1.
pub fn nlp_gain(
    state: &mut NlpState,
    far: &SpectralFrame,
    near: &SpectralFrame,
    error: &SpectralFrame,
) -> [f64; SPECTRUM_BINS] {
    const EPS: f64 = 1e-20;
    let a = NLP_SMOOTHING;
    let b = 1.0 - NLP_SMOOTHING;
    let mut gains = [1.0; SPECTRUM_BINS];
    for k in 0..SPECTRUM_BINS {
        let (f, n, e) = (far.bins[k], near.bins[k], error.bins[k]);
        state.s_ff[k] = a * state.s_ff[k] + b * f.norm_sqr();
        state.s_nn[k] = a * state.s_nn[k] + b * n.norm_sqr();
        state.s_ee[k] = a * state.s_ee[k] + b * e.norm_sqr();
        state.s_nf[k] = a * state.s_nf[k] + b * n * f.conj();
        state.s_ne[k] = a * state.s_ne[k] + b * n * e.conj();

        if state.s_nn[k] < EPS {
            continue;
        }
        let coh_nf = if state.s_ff[k] < EPS {
            0.0
        } else {
            (state.s_nf[k].norm_sqr() / (state.s_nn[k] * state.s_ff[k])).min(1.0)
        };
        let coh_ne = if state.s_ee[k] < EPS {
            1.0
        } else {
            (state.s_ne[k].norm_sqr() / (state.s_nn[k] * state.s_ee[k])).min(1.0)
        };
        gains[k] = (coh_ne * (1.0 - coh_nf) + coh_ne * NLP_BIAS).clamp(0.0, 1.0);
    }
    gains
}

/// Interpolate band gains to per-bin masks and apply them to the error
/// spectrum.
pub fn suppress_frame(
    error: &SpectralFrame,
    gains: &BandGains,
    mel: &MelFilterBank,
) -> ([f64; SPECTRUM_BINS], SpectralFrame) {
    let clipped = gains.clamped();
    let mask = mel.interpolate_gains(&clipped.gains);
    let bins = error
        .bins
        .iter()
        .zip(mask.iter())
        .map(|(bin, &m)| bin * m)
        .collect();
    let suppressed = SpectralFrame {
        bins,
        index: error.index,
    };
    (mask, suppressed)
}

/// Combine the interpolated network mask with the coherence suppressor's
/// gain, bin by bin. The geometric mean keeps a bin closed when either
/// stage wants it closed, while softening disagreements between the two.
pub fn smooth_with_nlp(
    mask: &[f64; SPECTRUM_BINS],
    nlp: &[f64; SPECTRUM_BINS],
) -> [f64; SPECTRUM_BINS] {
    let mut combined = [0.0; SPECTRUM_BINS];
    for k in 0..SPECTRUM_BINS {
        combined[k] = (mask[k].clamp(0.0, 1.0) * nlp[k].clamp(0.0, 1.0)).sqrt();
    }
    combined
}

/// Band gains plus the near-end speech probability from the network's
/// final layer.
#[derive(Debug, Clone, Copy)]
pub struct SuppressorOutput {
    pub band_gains: BandGains,
    pub near_probability: f64,
}

/// Run the stacked features through the suppression network and split the
/// output into its two heads.
pub fn infer_gains(model: &mut NeuralModel, features: &[f64]) -> Result<SuppressorOutput> {
    if features.len() != FEATURE_DIM {
        return Err(Error::ModelShape {
            expected: FEATURE_DIM,
            got: features.len(),
            context: "suppressor features".into(),
        });
    }
    if model.output_dim() != SUPPRESSOR_OUTPUTS {
        return Err(Error::ModelShape {
            expected: SUPPRESSOR_OUTPUTS,
            got: model.output_dim(),
            context: "suppressor output".into(),
        });
    }
    let out = model.forward(features)?;
    let mut gains = [0.0; NUM_BANDS];
    gains.copy_from_slice(&out[..NUM_BANDS]);
    Ok(SuppressorOutput {
        band_gains: BandGains { gains }.clamped(),
        near_probability: out[NUM_BANDS].clamp(0.0, 1.0),
    })
}
