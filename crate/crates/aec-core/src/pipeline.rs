//! The streaming enhancement chain in real-time frame order: delay
//! estimation over the filter bank, optimal-filter error selection,
//! coherence suppression, learned band gains, statistical denoising, and
//! loudness normalization.
//!
//! Stages are individually switchable. With every stage off the chain
//! degenerates to the selected filter's error signal, untouched and with
//! zero latency; each enabled stage adds its documented delay, and
//! [`Pipeline::finish`] flushes exactly that many frames so output length
//! always matches input length with content aligned.

use std::collections::VecDeque;

use crate::agc::AgcProcessor;
use crate::config::{PipelineSection, ToolkitConfig};
use crate::dsp::{
    AudioFrame, IstftSynthesizer, MelFilterBank, SpectralFrame, StftAnalyzer, DELTA_LOOKAHEAD,
    FRAME_SIZE, SAMPLE_RATE, SPECTRUM_BINS,
};
use crate::error::{Error, Result};
use crate::nn::NeuralModel;
use crate::omlsa::OmlsaState;
use crate::res::{
    infer_gains, nlp_gain, smooth_with_nlp, FeatureExtractor, NlpState, FEATURE_DIM,
    SUPPRESSOR_OUTPUTS,
};
use crate::tde::{
    estimate_delay_argmax, estimate_delay_nn, optimal_filter_index, DelayTracker, FilterBank,
};

/// What the chain knew and did while absorbing one input frame. Gain
/// fields are `None` for stages that are disabled or still filling their
/// lookahead.
#[derive(Debug, Clone)]
pub struct DiagnosticsRow {
    pub frame: u64,
    pub delay_category: usize,
    pub delay_ms: f64,
    pub delay_probability: f64,
    pub selected_filter: usize,
    pub adapting: bool,
    pub near_probability: Option<f64>,
    pub mean_nlp_gain: Option<f64>,
    pub mean_nn_gain: Option<f64>,
    pub mean_omlsa_gain: Option<f64>,
}

/// One processed frame: the enhanced audio (once the chain's latency has
/// filled) and the diagnostics row for this input frame.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub frame: Option<AudioFrame>,
    pub diagnostics: DiagnosticsRow,
}

/// The full echo-control chain for one stream.
pub struct Pipeline {
    stages: PipelineSection,
    bank: FilterBank,
    tracker: DelayTracker,
    classifier: Option<NeuralModel>,
    suppressor: Option<NeuralModel>,
    mel: MelFilterBank,
    far_stft: StftAnalyzer,
    mic_stft: StftAnalyzer,
    error_stft: StftAnalyzer,
    synthesizer: IstftSynthesizer,
    nlp: NlpState,
    features: FeatureExtractor,
    omlsa: OmlsaState,
    agc: Option<AgcProcessor>,
    awaiting_features: VecDeque<(SpectralFrame, [f64; SPECTRUM_BINS])>,
    warmup_drops: usize,
    pushed: u64,
    near_probability: f64,
}

impl Pipeline {
    /// Assemble the chain. The classifier is optional — without it the
    /// delay estimate falls back to the energy argmax. The suppressor is
    /// required whenever the nn stage is enabled.
    pub fn new(
        config: &ToolkitConfig,
        classifier: Option<NeuralModel>,
        suppressor: Option<NeuralModel>,
    ) -> Result<Self> {
        config.validate()?;
        let stages = config.pipeline.clone();
        if let Some(model) = &classifier {
            if model.input_dim() != config.bank.energy_len() {
                return Err(Error::ModelShape {
                    expected: config.bank.energy_len(),
                    got: model.input_dim(),
                    context: "delay classifier input".into(),
                });
            }
            if model.output_dim() != config.bank.categories() {
                return Err(Error::ModelShape {
                    expected: config.bank.categories(),
                    got: model.output_dim(),
                    context: "delay classifier output".into(),
                });
            }
        }
        if stages.nn {
            let model = suppressor.as_ref().ok_or_else(|| {
                Error::InvalidConfig("the nn stage needs a suppressor model".into())
            })?;
            if model.input_dim() != FEATURE_DIM {
                return Err(Error::ModelShape {
                    expected: FEATURE_DIM,
                    got: model.input_dim(),
                    context: "suppressor input".into(),
                });
            }
            if model.output_dim() != SUPPRESSOR_OUTPUTS {
                return Err(Error::ModelShape {
                    expected: SUPPRESSOR_OUTPUTS,
                    got: model.output_dim(),
                    context: "suppressor output".into(),
                });
            }
        }
        let agc = if stages.agc {
            Some(AgcProcessor::new(config.agc)?)
        } else {
            None
        };
        Ok(Self {
            warmup_drops: usize::from(stages.nlp),
            tracker: DelayTracker::new(stages.delay_hold),
            bank: FilterBank::new(config.bank, config.mdf.clone())?,
            stages,
            classifier,
            suppressor,
            mel: MelFilterBank::new(),
            far_stft: StftAnalyzer::new(),
            mic_stft: StftAnalyzer::new(),
            error_stft: StftAnalyzer::new(),
            synthesizer: IstftSynthesizer::new(),
            nlp: NlpState::new(),
            features: FeatureExtractor::new(),
            omlsa: OmlsaState::new(config.omlsa)?,
            agc,
            awaiting_features: VecDeque::new(),
            pushed: 0,
            near_probability: 0.0,
        })
    }

    /// Frames the spectral stages keep in flight before audio emerges.
    fn spectral_latency(&self) -> usize {
        if self.stages.nlp {
            1 + if self.stages.nn { DELTA_LOOKAHEAD } else { 0 }
        } else {
            0
        }
    }

    /// Frames of delay between input content and output content, summed
    /// over the enabled stages.
    pub fn latency_frames(&self) -> usize {
        self.spectral_latency() + usize::from(self.stages.agc)
    }

    pub fn latency_ms(&self) -> f64 {
        self.latency_frames() as f64 * FRAME_SIZE as f64 * 1000.0 / SAMPLE_RATE as f64
    }

    pub fn stages(&self) -> &PipelineSection {
        &self.stages
    }

    /// Absorb one far/mic frame pair; the output frame appears once the
    /// chain's latency has filled.
    pub fn process(&mut self, far: &AudioFrame, mic: &AudioFrame) -> Result<StepOutput> {
        if self.stages.nn {
            self.bank.set_adaptation(self.near_probability <= 0.5);
        }
        let adapting = !self.stages.nn || self.near_probability <= 0.5;
        self.bank.push(far, mic)?;
        let ev = self.bank.energy_vector();
        let raw = match &mut self.classifier {
            Some(model) => estimate_delay_nn(&ev, model, self.bank.geometry())?,
            None => estimate_delay_argmax(&ev, self.bank.geometry()),
        };
        let est = self.tracker.update(raw);
        let error = self.bank.select_optimal_error(&est)?;

        let mut diagnostics = DiagnosticsRow {
            frame: self.pushed,
            delay_category: est.category,
            delay_ms: est.milliseconds(),
            delay_probability: est.probability,
            selected_filter: optimal_filter_index(self.bank.geometry(), est.category),
            adapting,
            near_probability: None,
            mean_nlp_gain: None,
            mean_nn_gain: None,
            mean_omlsa_gain: None,
        };
        self.pushed += 1;

        let enhanced = self.enhance(far, mic, &error, &mut diagnostics)?;
        let frame = match (&mut self.agc, enhanced) {
            (Some(agc), Some(frame)) => agc.process(&frame)?,
            (None, enhanced) => enhanced,
            (Some(_), None) => None,
        };
        Ok(StepOutput { frame, diagnostics })
    }

    /// The spectral stages. Returns the reconstructed frame once the
    /// transform and feature lookaheads are primed.
    fn enhance(
        &mut self,
        far: &AudioFrame,
        mic: &AudioFrame,
        error: &AudioFrame,
        diagnostics: &mut DiagnosticsRow,
    ) -> Result<Option<AudioFrame>> {
        if !self.stages.nlp {
            return Ok(Some(error.clone()));
        }
        let far_spec = self.far_stft.process(far)?;
        let mic_spec = self.mic_stft.process(mic)?;
        let error_spec = self.error_stft.process(error)?;
        let g_nlp = nlp_gain(&mut self.nlp, &far_spec, &mic_spec, &error_spec);
        diagnostics.mean_nlp_gain = Some(mean(&g_nlp));

        let shaped = if self.stages.nn {
            self.awaiting_features.push_back((error_spec, g_nlp));
            let Some(features) = self.features.push(far, error)? else {
                return Ok(None);
            };
            let model = self.suppressor.as_mut().expect("suppressor checked at build");
            let inferred = infer_gains(model, &features)?;
            self.near_probability = inferred.near_probability;
            diagnostics.near_probability = Some(inferred.near_probability);
            let (delayed_spec, delayed_nlp) = self
                .awaiting_features
                .pop_front()
                .expect("one queued spectrum per emitted feature");
            let mask = self.mel.interpolate_gains(&inferred.band_gains.gains);
            let g_nn = smooth_with_nlp(&mask, &delayed_nlp);
            diagnostics.mean_nn_gain = Some(mean(&g_nn));
            if self.stages.omlsa {
                let fused =
                    self.omlsa
                        .process(&delayed_spec, &g_nn, inferred.near_probability);
                diagnostics.mean_omlsa_gain = Some(mean(&fused));
                apply_bin_gains(&delayed_spec, &fused)
            } else {
                apply_bin_gains(&delayed_spec, &g_nn)
            }
        } else {
            apply_bin_gains(&error_spec, &g_nlp)
        };
        let frame = self.synthesizer.process(&shaped)?;
        if self.warmup_drops > 0 {
            self.warmup_drops -= 1;
            return Ok(None);
        }
        Ok(Some(frame))
    }

    /// Flush the in-flight latency with silent input so every absorbed
    /// frame comes back out. Call once, at end of stream.
    pub fn finish(&mut self) -> Result<Vec<AudioFrame>> {
        let mut out = Vec::new();
        for k in 0..self.spectral_latency() {
            let zero = AudioFrame::zeros(self.pushed + k as u64);
            let mut diagnostics = DiagnosticsRow {
                frame: self.pushed + k as u64,
                delay_category: 0,
                delay_ms: 0.0,
                delay_probability: 0.0,
                selected_filter: 0,
                adapting: false,
                near_probability: None,
                mean_nlp_gain: None,
                mean_nn_gain: None,
                mean_omlsa_gain: None,
            };
            let enhanced = self.enhance(&zero, &zero, &zero, &mut diagnostics)?;
            let frame = match (&mut self.agc, enhanced) {
                (Some(agc), Some(frame)) => agc.process(&frame)?,
                (None, enhanced) => enhanced,
                (Some(_), None) => None,
            };
            out.extend(frame);
        }
        if let Some(agc) = &mut self.agc {
            out.extend(agc.finish());
        }
        Ok(out)
    }

    /// Process two full sample streams in one call: frames the inputs
    /// (padding the shorter stream with silence), runs the chain, flushes,
    /// and trims the output to the input length.
    pub fn run(&mut self, far: &[f64], mic: &[f64]) -> Result<(Vec<f64>, Vec<DiagnosticsRow>)> {
        let len = far.len().max(mic.len());
        let frames = len.div_ceil(FRAME_SIZE);
        let mut output = Vec::with_capacity(frames * FRAME_SIZE);
        let mut rows = Vec::with_capacity(frames);
        let mut far_frame = AudioFrame::zeros(0);
        let mut mic_frame = AudioFrame::zeros(0);
        for t in 0..frames {
            fill_frame(&mut far_frame, far, t);
            fill_frame(&mut mic_frame, mic, t);
            let step = self.process(&far_frame, &mic_frame)?;
            rows.push(step.diagnostics);
            if let Some(frame) = step.frame {
                output.extend_from_slice(&frame.samples);
            }
        }
        for frame in self.finish()? {
            output.extend_from_slice(&frame.samples);
        }
        output.truncate(len);
        Ok((output, rows))
    }
}

fn fill_frame(frame: &mut AudioFrame, signal: &[f64], t: usize) {
    let start = t * FRAME_SIZE;
    for (n, sample) in frame.samples.iter_mut().enumerate() {
        *sample = signal.get(start + n).copied().unwrap_or(0.0);
    }
    frame.index = t as u64;
}

fn apply_bin_gains(spectrum: &SpectralFrame, gains: &[f64]) -> SpectralFrame {
    let bins = spectrum
        .bins
        .iter()
        .zip(gains)
        .map(|(bin, &g)| bin * g)
        .collect();
    SpectralFrame {
        bins,
        index: spectrum.index,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::frames_of;
    use crate::nn::{Activation, LayerSpec, Preprocessing};
    use crate::synth::splitmix64;
    use crate::tde::DelayEstimate;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    fn config_with(stages: PipelineSection) -> ToolkitConfig {
        let mut config = ToolkitConfig::default();
        config.pipeline = stages;
        config
    }

    /// A suppressor whose sigmoid outputs are pinned near 0 or 1 by a
    /// large output bias.
    fn pinned_suppressor(bias: f64) -> NeuralModel {
        let mut model = NeuralModel::new(
            vec![
                LayerSpec::dense(FEATURE_DIM, 4, Activation::Tanh),
                LayerSpec::dense(4, SUPPRESSOR_OUTPUTS, Activation::Sigmoid),
            ],
            Preprocessing::None,
            320,
            3,
        )
        .unwrap();
        let params = model.params_mut();
        let n = params.len();
        for p in params[..n - SUPPRESSOR_OUTPUTS].iter_mut() {
            *p = 0.0;
        }
        for p in params[n - SUPPRESSOR_OUTPUTS..].iter_mut() {
            *p = bias;
        }
        model
    }

    #[test]
    fn tde_only_output_is_the_selected_filter_error_bit_exactly() {
        let config = config_with(PipelineSection::tde_only());
        let mut pipeline = Pipeline::new(&config, None, None).unwrap();
        assert_eq!(pipeline.latency_frames(), 0);

        let mut shadow_bank =
            FilterBank::new(config.bank, config.mdf.clone()).unwrap();
        let mut shadow_tracker = DelayTracker::new(config.pipeline.delay_hold);

        let far = noise(FRAME_SIZE * 40, 11, 0.4);
        let mut mic = vec![0.0; far.len()];
        let delay = 3 * FRAME_SIZE + 17;
        for i in delay..mic.len() {
            mic[i] = 0.6 * far[i - delay];
        }

        let far_frames = frames_of(&far);
        let mic_frames = frames_of(&mic);
        for (f, m) in far_frames.iter().zip(&mic_frames) {
            let step = pipeline.process(f, m).unwrap();
            let out = step.frame.expect("zero-latency path emits every frame");

            shadow_bank.push(f, m).unwrap();
            let raw = estimate_delay_argmax(&shadow_bank.energy_vector(), shadow_bank.geometry());
            let est = shadow_tracker.update(raw);
            let expected = shadow_bank.select_optimal_error(&est).unwrap();
            assert_eq!(out.samples, expected.samples);
            assert_eq!(step.diagnostics.delay_category, est.category);
        }
        assert!(pipeline.finish().unwrap().is_empty());
    }

    #[test]
    fn near_only_input_passes_through_the_coherence_stage_aligned() {
        let config = config_with(PipelineSection::nlp_only());
        let mut pipeline = Pipeline::new(&config, None, None).unwrap();
        assert_eq!(pipeline.latency_frames(), 1);

        let mic = noise(FRAME_SIZE * 50, 5, 0.3);
        let far = vec![0.0; mic.len()];
        let (out, rows) = pipeline.run(&far, &mic).unwrap();
        assert_eq!(out.len(), mic.len());
        assert_eq!(rows.len(), 50);

        let err: f64 = out
            .iter()
            .zip(&mic)
            .map(|(o, m)| (o - m) * (o - m))
            .sum::<f64>()
            / mic.len() as f64;
        assert!(err.sqrt() < 1e-6, "rms deviation {}", err.sqrt());
    }

    #[test]
    fn the_learned_stage_keeps_alignment_when_its_gains_are_open() {
        let mut stages = PipelineSection::with_nn();
        stages.delay_hold = 1;
        let config = config_with(stages);
        let mut pipeline =
            Pipeline::new(&config, None, Some(pinned_suppressor(30.0))).unwrap();
        assert_eq!(pipeline.latency_frames(), 3);

        let mic = noise(FRAME_SIZE * 50, 9, 0.3);
        let far = vec![0.0; mic.len()];
        let (out, rows) = pipeline.run(&far, &mic).unwrap();
        assert_eq!(out.len(), mic.len());

        let err: f64 = out
            .iter()
            .zip(&mic)
            .map(|(o, m)| (o - m) * (o - m))
            .sum::<f64>()
            / mic.len() as f64;
        assert!(err.sqrt() < 1e-6, "rms deviation {}", err.sqrt());
        assert!(rows[10].near_probability.unwrap() > 0.99);
        assert!(rows[10].mean_nn_gain.unwrap() > 0.99);
    }

    #[test]
    fn a_confident_near_probability_freezes_bank_adaptation() {
        let far = noise(FRAME_SIZE * 60, 21, 0.4);
        let mut mic = vec![0.0; far.len()];
        for i in FRAME_SIZE..mic.len() {
            mic[i] = 0.5 * far[i - FRAME_SIZE];
        }

        let mut frozen_rows = Vec::new();
        let mut adapting_rows = Vec::new();
        for (bias, rows) in [(30.0, &mut frozen_rows), (-30.0, &mut adapting_rows)] {
            let config = config_with(PipelineSection::with_nn());
            let mut pipeline =
                Pipeline::new(&config, None, Some(pinned_suppressor(bias))).unwrap();
            let (_, rows_out) = pipeline.run(&far, &mic).unwrap();
            *rows = rows_out;
        }

        assert!(frozen_rows[..3].iter().all(|r| r.adapting));
        assert!(frozen_rows[4..].iter().all(|r| !r.adapting));
        assert!(adapting_rows.iter().all(|r| r.adapting));
    }

    #[test]
    fn the_full_chain_converges_to_near_identity_on_clean_speechlike_input() {
        let mut stages = PipelineSection::with_omlsa();
        stages.delay_hold = 1;
        let config = config_with(stages);
        let mut pipeline =
            Pipeline::new(&config, None, Some(pinned_suppressor(30.0))).unwrap();
        assert_eq!(pipeline.latency_frames(), 3);

        let mic: Vec<f64> = (0..FRAME_SIZE * 200)
            .map(|n| {
                let t = n as f64 / SAMPLE_RATE as f64;
                0.25 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.15 * (2.0 * std::f64::consts::PI * 1230.0 * t).sin()
            })
            .collect();
        let far = vec![0.0; mic.len()];
        let (out, _) = pipeline.run(&far, &mic).unwrap();

        let tail = FRAME_SIZE * 150;
        let p_in: f64 = mic[tail..].iter().map(|s| s * s).sum();
        let p_out: f64 = out[tail..].iter().map(|s| s * s).sum();
        let drop_db = 10.0 * (p_in / p_out).log10();
        assert!(
            drop_db.abs() < 1.0,
            "late-segment level shift {drop_db:.2} dB"
        );
    }

    #[test]
    fn latency_follows_the_enabled_stages() {
        let cases = [
            (PipelineSection::tde_only(), 0),
            (PipelineSection::nlp_only(), 1),
            (PipelineSection::with_nn(), 3),
            (PipelineSection::with_omlsa(), 3),
            (PipelineSection::default(), 4),
        ];
        for (stages, expected) in cases {
            let needs_model = stages.nn;
            let config = config_with(stages);
            let suppressor = needs_model.then(|| pinned_suppressor(0.0));
            let pipeline = Pipeline::new(&config, None, suppressor).unwrap();
            assert_eq!(pipeline.latency_frames(), expected);
            assert_eq!(
                pipeline.latency_ms(),
                expected as f64 * 10.0,
                "10 ms per frame"
            );
        }
    }

    #[test]
    fn run_equals_manual_frame_stepping_bit_exactly() {
        let far = noise(FRAME_SIZE * 30, 31, 0.4);
        let mut mic = noise(FRAME_SIZE * 30, 32, 0.05);
        for i in 2 * FRAME_SIZE..mic.len() {
            mic[i] += 0.5 * far[i - 2 * FRAME_SIZE];
        }

        let config = config_with(PipelineSection::default());
        let suppressor = pinned_suppressor(2.0);
        let mut batch = Pipeline::new(&config, None, Some(suppressor.clone())).unwrap();
        let (batch_out, batch_rows) = batch.run(&far, &mic).unwrap();

        let mut manual = Pipeline::new(&config, None, Some(suppressor)).unwrap();
        let mut manual_out = Vec::new();
        let mut manual_rows = Vec::new();
        for (f, m) in frames_of(&far).iter().zip(&frames_of(&mic)[..]) {
            let step = manual.process(f, m).unwrap();
            manual_rows.push(step.diagnostics);
            if let Some(frame) = step.frame {
                manual_out.extend_from_slice(&frame.samples);
            }
        }
        for frame in manual.finish().unwrap() {
            manual_out.extend_from_slice(&frame.samples);
        }
        manual_out.truncate(far.len());

        assert_eq!(batch_out, manual_out);
        assert_eq!(batch_rows.len(), manual_rows.len());
        for (a, b) in batch_rows.iter().zip(&manual_rows) {
            assert_eq!(a.delay_category, b.delay_category);
            assert_eq!(a.mean_nn_gain, b.mean_nn_gain);
        }
    }

    #[test]
    fn mismatched_stream_lengths_are_padded_not_rejected() {
        let config = config_with(PipelineSection::nlp_only());
        let mut pipeline = Pipeline::new(&config, None, None).unwrap();
        let far = noise(FRAME_SIZE * 10, 7, 0.2);
        let mic = noise(FRAME_SIZE * 12 + 13, 8, 0.2);
        let (out, rows) = pipeline.run(&far, &mic).unwrap();
        assert_eq!(out.len(), mic.len());
        assert_eq!(rows.len(), 13);
    }

    #[test]
    fn enabling_nn_without_a_model_is_rejected() {
        let config = config_with(PipelineSection::with_nn());
        match Pipeline::new(&config, None, None) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("suppressor")),
            other => panic!("expected a config error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn model_shape_mismatches_are_rejected_at_build_time() {
        let config = config_with(PipelineSection::tde_only());
        let classifier = NeuralModel::new(
            vec![LayerSpec::dense(100, 152, Activation::Softmax)],
            Preprocessing::Log1pMaxNorm,
            320,
            3,
        )
        .unwrap();
        assert!(matches!(
            Pipeline::new(&config, Some(classifier), None),
            Err(Error::ModelShape { expected: 160, got: 100, .. })
        ));

        let config = config_with(PipelineSection::with_nn());
        let narrow = NeuralModel::new(
            vec![LayerSpec::dense(FEATURE_DIM, 5, Activation::Sigmoid)],
            Preprocessing::None,
            320,
            3,
        )
        .unwrap();
        assert!(matches!(
            Pipeline::new(&config, None, Some(narrow)),
            Err(Error::ModelShape { expected: SUPPRESSOR_OUTPUTS, got: 5, .. })
        ));
    }

    #[test]
    fn diagnostics_track_the_delay_as_it_locks_in() {
        let mut stages = PipelineSection::tde_only();
        stages.delay_hold = 3;
        let config = config_with(stages);
        let mut pipeline = Pipeline::new(&config, None, None).unwrap();

        let delay_frames = 7;
        let far = noise(FRAME_SIZE * 80, 77, 0.4);
        let mut mic = vec![0.0; far.len()];
        for i in delay_frames * FRAME_SIZE..mic.len() {
            mic[i] = 0.7 * far[i - delay_frames * FRAME_SIZE];
        }
        let mut rows = Vec::new();
        for (f, m) in frames_of(&far).iter().zip(&frames_of(&mic)[..]) {
            rows.push(pipeline.process(f, m).unwrap().diagnostics);
        }
        let last = rows.last().unwrap();
        assert_eq!(last.delay_category, delay_frames);
        assert_eq!(last.delay_ms, delay_frames as f64 * 10.0);
        assert_eq!(
            last.selected_filter,
            optimal_filter_index(&config.bank, delay_frames)
        );
        assert_eq!(rows.len() as u64, rows.last().unwrap().frame + 1);
    }

    #[test]
    fn splitmix_is_available_for_deterministic_test_seeds() {
        let mut seed = 42;
        let a = splitmix64(&mut seed);
        let b = splitmix64(&mut seed);
        assert_ne!(a, b);
    }

    #[test]
    fn tracker_and_estimators_share_the_estimate_type() {
        let est = DelayEstimate {
            category: 12,
            probability: 0.5,
            low_confidence: false,
        };
        let mut tracker = DelayTracker::new(1);
        assert_eq!(tracker.update(est).category, 12);
    }
}
