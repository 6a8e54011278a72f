//! Training drivers for the two networks: the delay classifier learns
//! from filter-bank energy sequences, the band-gain suppressor from
//! far/error feature pairs against the synthesizer's frame labels.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::config::ToolkitConfig;
use crate::dsp::frames_of;
use crate::error::{Error, Result};
use crate::nn::{
    train, Activation, EpochStats, LayerSpec, NeuralModel, Preprocessing, SequenceSample, Target,
    TrainConfig,
};
use crate::res::{FeatureExtractor, FEATURE_DIM, SUPPRESSOR_OUTPUTS};
use crate::synth::{read_labels_csv, true_delay_error_track, ClipRecord, Manifest};
use crate::tde::{BankGeometry, FilterBank};
use crate::wav::read_wav;
use crate::FFT_SIZE;

/// Energy frames skipped before the classification loss starts counting,
/// giving the bank time to converge. The skipped steps still drive the
/// recurrent state so training matches streaming inference.
pub const TDE_WARMUP_FRAMES: usize = 100;

pub const CLASSIFIER_DENSE_HIDDEN: usize = 96;
pub const CLASSIFIER_GRU_HIDDEN: usize = 48;
pub const SUPPRESSOR_DENSE_HIDDEN: usize = 96;
pub const SUPPRESSOR_GRU_HIDDEN: usize = 96;

/// Layer stack of the delay classifier for a given bank layout.
pub fn classifier_spec(geometry: &BankGeometry, dense: usize, gru: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(geometry.energy_len(), dense, Activation::Tanh),
        LayerSpec::gated_recurrent(dense, gru),
        LayerSpec::dense(gru, geometry.categories(), Activation::Softmax),
    ]
}

/// Layer stack of the band-gain suppressor: two heads fused into one
/// sigmoid output (22 band gains, then the near-end speech probability).
pub fn suppressor_spec(dense: usize, gru: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(FEATURE_DIM, dense, Activation::Tanh),
        LayerSpec::gated_recurrent(dense, gru),
        LayerSpec::dense(gru, SUPPRESSOR_OUTPUTS, Activation::Sigmoid),
    ]
}

/// A fresh classifier with the energy normalization baked into the model
/// file.
pub fn classifier_model(geometry: &BankGeometry, dense: usize, gru: usize, seed: u64) -> Result<NeuralModel> {
    NeuralModel::new(
        classifier_spec(geometry, dense, gru),
        Preprocessing::Log1pMaxNorm,
        FFT_SIZE as u32,
        seed,
    )
}

pub fn suppressor_model(dense: usize, gru: usize, seed: u64) -> Result<NeuralModel> {
    NeuralModel::new(
        suppressor_spec(dense, gru),
        Preprocessing::None,
        FFT_SIZE as u32,
        seed,
    )
}

/// Run the filter bank over one clip and pair each frame's energy vector
/// with the true delay category. The first `warmup` steps are masked.
pub fn tde_sequence(
    far: &[f64],
    mic: &[f64],
    category: usize,
    config: &ToolkitConfig,
    warmup: usize,
) -> Result<SequenceSample> {
    if category >= config.bank.categories() {
        return Err(Error::Data(format!(
            "delay category {} outside the bank's {}",
            category,
            config.bank.categories()
        )));
    }
    let mut bank = FilterBank::new(config.bank, config.mdf.clone())?;
    let far_frames = frames_of(far);
    let mic_frames = frames_of(mic);
    let frames = far_frames.len().min(mic_frames.len());
    if frames == 0 {
        return Err(Error::Data("clip too short for an energy sequence".into()));
    }
    let mut inputs = Vec::with_capacity(frames);
    let mut targets = Vec::with_capacity(frames);
    for t in 0..frames {
        bank.push(&far_frames[t], &mic_frames[t])?;
        inputs.push(bank.energy_vector().values().to_vec());
        targets.push(if t < warmup {
            Target::Masked
        } else {
            Target::Class(category)
        });
    }
    Ok(SequenceSample { inputs, targets })
}

/// Feature/label pairs for one clip: the far end and the true-delay error
/// track drive the feature extractor, the synthesizer's sidecar labels
/// provide the 22 band gains plus the near-end activity bit.
pub fn res_sequence(
    far: &[f64],
    mic: &[f64],
    delay_frames: usize,
    labels: &[(crate::res::DtdLabel, crate::res::BandGains)],
) -> Result<SequenceSample> {
    let error = true_delay_error_track(far, mic, delay_frames)?;
    let far_frames = frames_of(far);
    let error_frames = frames_of(&error);
    let frames = far_frames.len().min(error_frames.len());

    let mut extractor = FeatureExtractor::new();
    let mut inputs = Vec::with_capacity(frames);
    for t in 0..frames {
        if let Some(features) = extractor.push(&far_frames[t], &error_frames[t])? {
            inputs.push(features);
        }
    }
    inputs.extend(extractor.finish());

    let usable = inputs.len().min(labels.len());
    if usable == 0 {
        return Err(Error::Data("no overlapping features and labels".into()));
    }
    inputs.truncate(usable);
    let targets = labels[..usable]
        .iter()
        .map(|(dtd, gains)| {
            let mut v = Vec::with_capacity(SUPPRESSOR_OUTPUTS);
            v.extend_from_slice(&gains.gains);
            v.push(if dtd.near_active { 1.0 } else { 0.0 });
            Target::Vector(v)
        })
        .collect();
    Ok(SequenceSample { inputs, targets })
}

fn clip_tracks(root: &Path, record: &ClipRecord) -> Result<(Vec<f64>, Vec<f64>)> {
    let far = read_wav(root.join(&record.far))?;
    let mic = read_wav(root.join(&record.mic))?;
    Ok((far, mic))
}

/// Every training-split clip of a dataset as a classifier sequence.
pub fn tde_dataset(
    root: &Path,
    manifest: &Manifest,
    split: &str,
    config: &ToolkitConfig,
) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for record in manifest.split(split) {
        let (far, mic) = clip_tracks(root, record)?;
        out.push(tde_sequence(
            &far,
            &mic,
            record.delay_category,
            config,
            TDE_WARMUP_FRAMES,
        )?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("dataset has no '{split}' clips")));
    }
    Ok(out)
}

/// Every training-split clip of a dataset as a suppressor sequence.
pub fn res_dataset(root: &Path, manifest: &Manifest, split: &str) -> Result<Vec<SequenceSample>> {
    let mut out = Vec::new();
    for record in manifest.split(split) {
        let (far, mic) = clip_tracks(root, record)?;
        let labels = read_labels_csv(&root.join(&record.labels))?;
        out.push(res_sequence(&far, &mic, record.delay_category, &labels)?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("dataset has no '{split}' clips")));
    }
    Ok(out)
}

/// Train the delay classifier on a dataset's training split.
pub fn train_tde(
    root: &Path,
    manifest: &Manifest,
    config: &ToolkitConfig,
    dense: usize,
    gru: usize,
) -> Result<(NeuralModel, Vec<EpochStats>)> {
    let data = tde_dataset(root, manifest, "train", config)?;
    let mut model = classifier_model(&config.bank, dense, gru, config.train.seed)?;
    let train_config = TrainConfig {
        loss: crate::nn::LossKind::CrossEntropy,
        ..config.train.clone()
    };
    let curve = train(&mut model, &data, &train_config)?;
    Ok((model, curve))
}

/// Train the band-gain suppressor on a dataset's training split.
pub fn train_res(
    root: &Path,
    manifest: &Manifest,
    config: &ToolkitConfig,
    dense: usize,
    gru: usize,
) -> Result<(NeuralModel, Vec<EpochStats>)> {
    let data = res_dataset(root, manifest, "train")?;
    let mut model = suppressor_model(dense, gru, config.train.seed)?;
    let train_config = TrainConfig {
        loss: crate::nn::LossKind::BandGainMse,
        ..config.train.clone()
    };
    let curve = train(&mut model, &data, &train_config)?;
    Ok((model, curve))
}

/// One row per epoch: loss and (for the classifier) frame accuracy.
pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[EpochStats]) -> Result<()> {
    let mut file = fs::File::create(path.as_ref())?;
    writeln!(file, "epoch,loss,accuracy")?;
    for row in curve {
        writeln!(file, "{},{},{}", row.epoch, row.loss, row.accuracy)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FRAME_SIZE;
    use crate::nn::{save_model, LossKind, Optimizer};
    use crate::res::{BandGains, DtdLabel};
    use crate::synth::{build_dataset, bootstrap_noise_corpus, bootstrap_speech_corpus, DatasetSpec, GridConfig, Nonlinearity};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    fn tiny_config() -> ToolkitConfig {
        let mut config = ToolkitConfig::default();
        config.train.epochs = 2;
        config.train.batch_size = 4;
        config
    }

    #[test]
    fn energy_sequences_mask_the_warmup_and_label_the_rest() {
        let config = ToolkitConfig::default();
        let far = noise(FRAME_SIZE * 30, 3, 0.4);
        let mut mic = vec![0.0; far.len()];
        for i in 5 * FRAME_SIZE..mic.len() {
            mic[i] = 0.5 * far[i - 5 * FRAME_SIZE];
        }
        let seq = tde_sequence(&far, &mic, 5, &config, 10).unwrap();
        assert_eq!(seq.inputs.len(), 30);
        assert_eq!(seq.inputs[0].len(), config.bank.energy_len());
        assert!(matches!(seq.targets[9], Target::Masked));
        assert!(matches!(seq.targets[10], Target::Class(5)));
        assert!(seq.inputs.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn out_of_range_categories_are_rejected() {
        let config = ToolkitConfig::default();
        let far = noise(FRAME_SIZE * 4, 4, 0.2);
        assert!(matches!(
            tde_sequence(&far, &far.clone(), 152, &config, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn suppressor_sequences_pair_features_with_sidecar_labels() {
        let far = noise(FRAME_SIZE * 20, 5, 0.3);
        let mic = noise(FRAME_SIZE * 20, 6, 0.3);
        let labels: Vec<(DtdLabel, BandGains)> = (0..20)
            .map(|t| {
                (
                    DtdLabel {
                        far_active: true,
                        near_active: t % 2 == 0,
                    },
                    BandGains::ones(),
                )
            })
            .collect();
        let seq = res_sequence(&far, &mic, 0, &labels).unwrap();
        assert_eq!(seq.inputs.len(), 20);
        assert_eq!(seq.inputs[0].len(), FEATURE_DIM);
        match (&seq.targets[0], &seq.targets[1]) {
            (Target::Vector(even), Target::Vector(odd)) => {
                assert_eq!(even.len(), SUPPRESSOR_OUTPUTS);
                assert_eq!(even[SUPPRESSOR_OUTPUTS - 1], 1.0);
                assert_eq!(odd[SUPPRESSOR_OUTPUTS - 1], 0.0);
                assert!(even[..22].iter().all(|&g| g == 1.0));
            }
            other => panic!("expected vector targets, got {other:?}"),
        }
    }

    #[test]
    fn a_memorization_set_trains_to_full_accuracy() {
        let config = {
            let mut c = ToolkitConfig::default();
            c.train.epochs = 150;
            c.train.batch_size = 4;
            c.train.learning_rate = 1e-2;
            c
        };
        let mut data = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for category in [0usize, 30, 75, 140] {
            for _ in 0..2 {
                let inputs: Vec<Vec<f64>> = (0..6)
                    .map(|_| {
                        let mut v = vec![0.0; config.bank.energy_len()];
                        let f = crate::tde::optimal_filter_index(&config.bank, category);
                        let spacing = config.bank.spacing();
                        let block = category - f * spacing;
                        v[f * config.bank.blocks + block] = rng.gen_range(0.8..1.2);
                        v
                    })
                    .collect();
                let targets = vec![Target::Class(category); 6];
                data.push(SequenceSample { inputs, targets });
            }
        }
        let mut model = classifier_model(&config.bank, 24, 12, 1).unwrap();
        let curve = train(&mut model, &data, &config.train).unwrap();
        let last = curve.last().unwrap();
        assert_eq!(last.accuracy, 1.0, "loss curve tail: {:?}", &curve[curve.len().saturating_sub(3)..]);
        assert!(last.loss < curve[0].loss / 4.0);
    }

    #[test]
    fn identical_near_and_error_drive_the_gains_toward_one() {
        let mut data = Vec::new();
        for seed in 0..4 {
            let far = noise(FRAME_SIZE * 14, 100 + seed, 0.3);
            let labels: Vec<(DtdLabel, BandGains)> = (0..14)
                .map(|_| {
                    (
                        DtdLabel {
                            far_active: false,
                            near_active: true,
                        },
                        BandGains::ones(),
                    )
                })
                .collect();
            // Echo-free: the error equals the near end, so the ideal mask
            // is fully open.
            data.push(res_sequence(&far, &far.clone(), 0, &labels).unwrap());
        }
        let mut model = suppressor_model(16, 8, 2).unwrap();
        let config = TrainConfig {
            learning_rate: 5e-3,
            batch_size: 2,
            epochs: 60,
            optimizer: Optimizer::Adam,
            seed: 3,
            loss: LossKind::BandGainMse,
        };
        let curve = train(&mut model, &data, &config).unwrap();
        assert!(
            curve.last().unwrap().loss < 0.02,
            "final loss {}",
            curve.last().unwrap().loss
        );
        assert!(curve.last().unwrap().loss < curve[0].loss / 5.0);
    }

    #[test]
    fn training_is_deterministic_given_a_seed() {
        let dir = tempfile::tempdir().unwrap();
        let speech_dir = dir.path().join("speech");
        let noise_dir = dir.path().join("noise");
        bootstrap_speech_corpus(&speech_dir, 3, 1, 11).unwrap();
        bootstrap_noise_corpus(&noise_dir, 2, 12).unwrap();
        let spec = DatasetSpec {
            n_clips: 6,
            seed: 9,
            grids: GridConfig {
                ser_db: vec![0.0],
                snr_db: vec![20.0],
                delay_ms: vec![0.0, 50.0, 100.0],
                nonlinearities: vec![Nonlinearity::None],
            },
            rir_pool: 2,
            clip_seconds: 1.0,
        };
        let out_dir = dir.path().join("data");
        let manifest = build_dataset(&spec, &speech_dir, &noise_dir, &out_dir).unwrap();

        let mut config = tiny_config();
        config.train.epochs = 1;
        let (model_a, curve_a) = train_tde(&out_dir, &manifest, &config, 12, 6).unwrap();
        let (model_b, curve_b) = train_tde(&out_dir, &manifest, &config, 12, 6).unwrap();
        assert_eq!(model_a.params(), model_b.params());
        assert_eq!(curve_a.len(), curve_b.len());
        assert_eq!(curve_a[0].loss, curve_b[0].loss);

        let file_a = dir.path().join("a.efnn");
        let file_b = dir.path().join("b.efnn");
        save_model(&model_a, &file_a).unwrap();
        save_model(&model_b, &file_b).unwrap();
        assert_eq!(fs::read(&file_a).unwrap(), fs::read(&file_b).unwrap());
    }

    #[test]
    fn suppressor_training_runs_end_to_end_on_a_tiny_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let speech_dir = dir.path().join("speech");
        let noise_dir = dir.path().join("noise");
        bootstrap_speech_corpus(&speech_dir, 3, 1, 21).unwrap();
        bootstrap_noise_corpus(&noise_dir, 2, 22).unwrap();
        let spec = DatasetSpec {
            n_clips: 4,
            seed: 5,
            grids: GridConfig {
                ser_db: vec![0.0],
                snr_db: vec![20.0],
                delay_ms: vec![0.0, 100.0],
                nonlinearities: vec![Nonlinearity::None],
            },
            rir_pool: 2,
            clip_seconds: 1.0,
        };
        let out_dir = dir.path().join("data");
        let manifest = build_dataset(&spec, &speech_dir, &noise_dir, &out_dir).unwrap();

        let mut config = tiny_config();
        config.train.epochs = 1;
        config.train.loss = LossKind::BandGainMse;
        let (model, curve) = train_res(&out_dir, &manifest, &config, 12, 6).unwrap();
        assert_eq!(model.output_dim(), SUPPRESSOR_OUTPUTS);
        assert_eq!(curve.len(), 1);
        assert!(curve[0].loss.is_finite());

        let loss_path = dir.path().join("loss.csv");
        write_loss_csv(&loss_path, &curve).unwrap();
        let text = fs::read_to_string(&loss_path).unwrap();
        assert!(text.starts_with("epoch,loss,accuracy\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn an_empty_split_is_a_data_error() {
        let manifest = Manifest::default();
        let config = tiny_config();
        assert!(matches!(
            tde_dataset(Path::new("/tmp"), &manifest, "train", &config),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            res_dataset(Path::new("/tmp"), &manifest, "train"),
            Err(Error::Data(_))
        ));
    }
}
