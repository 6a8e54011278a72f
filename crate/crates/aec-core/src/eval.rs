//! Evaluation over labeled datasets: delay-estimation accuracy at the
//! grid's two tolerances, and enhancement quality per ablation row.
//! Aggregates are always recomputable from the per-clip rows they ship
//! with. Clips are processed in parallel and reduced in manifest order,
//! so reports never depend on scheduling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::config::{PipelineSection, ToolkitConfig};
use crate::dsp::{frames_of, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::metrics::{segmental_snr, si_sdr, summarize, Summary};
use crate::nn::NeuralModel;
use crate::pipeline::Pipeline;
use crate::synth::{read_labels_csv, ClipRecord, Manifest};
use crate::tde::{estimate_delay_argmax, estimate_delay_nn, FilterBank};
use crate::wav::read_wav;

/// Delay categories averaged for the classifier's clip-level decision.
pub const DECISION_WINDOW_FRAMES: usize = 100;

/// Exact-category tolerance: the grid step is 10 ms, so ±5 ms means the
/// category itself.
pub const EXACT_TOLERANCE: usize = 0;

/// ±25 ms at a 10 ms grid: two categories either side.
pub const WIDE_TOLERANCE: usize = 2;

/// One clip's delay decisions against its true category.
#[derive(Debug, Clone)]
pub struct TdeClipResult {
    pub id: String,
    pub true_category: usize,
    pub argmax_category: usize,
    pub nn_category: Option<usize>,
}

/// Accuracy of both estimators at both tolerances, with the rows the
/// numbers came from.
#[derive(Debug, Clone)]
pub struct TdeReport {
    pub clips: Vec<TdeClipResult>,
    pub argmax_exact: f64,
    pub argmax_wide: f64,
    pub nn_exact: Option<f64>,
    pub nn_wide: Option<f64>,
}

/// Fraction of predictions within `tolerance` categories of the truth.
pub fn accuracy(pairs: &[(usize, usize)], tolerance: usize) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hits = pairs
        .iter()
        .filter(|(truth, predicted)| truth.abs_diff(*predicted) <= tolerance)
        .count();
    hits as f64 / pairs.len() as f64
}

fn decide_delays(
    far: &[f64],
    mic: &[f64],
    config: &ToolkitConfig,
    classifier: Option<&NeuralModel>,
) -> Result<(usize, Option<usize>)> {
    let mut bank = FilterBank::new(config.bank, config.mdf.clone())?;
    let mut model = classifier.cloned();
    let far_frames = frames_of(far);
    let mic_frames = frames_of(mic);
    let frames = far_frames.len().min(mic_frames.len());
    if frames == 0 {
        return Err(Error::Data("clip too short to evaluate".into()));
    }
    let window_start = frames.saturating_sub(DECISION_WINDOW_FRAMES);
    let mut mean_softmax = model
        .as_ref()
        .map(|m| vec![0.0f64; m.output_dim()]);
    for t in 0..frames {
        bank.push(&far_frames[t], &mic_frames[t])?;
        if let (Some(model), Some(acc)) = (model.as_mut(), mean_softmax.as_mut()) {
            let probs = model.forward(bank.energy_vector().values())?;
            if t >= window_start {
                for (a, &p) in acc.iter_mut().zip(&probs) {
                    *a += p;
                }
            }
        }
    }
    let argmax = estimate_delay_argmax(&bank.energy_vector(), &config.bank).category;
    let nn = mean_softmax.map(|acc| {
        acc.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    });
    Ok((argmax, nn))
}

/// Delay-estimation accuracy over one split of a dataset. The argmax
/// baseline reads the converged energy vector; the classifier averages
/// its softmax over the last [`DECISION_WINDOW_FRAMES`] frames.
pub fn eval_tde(
    root: &Path,
    manifest: &Manifest,
    split: &str,
    config: &ToolkitConfig,
    classifier: Option<&NeuralModel>,
) -> Result<TdeReport> {
    let records: Vec<&ClipRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::Data(format!("dataset has no '{split}' clips")));
    }
    let clips: Vec<TdeClipResult> = records
        .par_iter()
        .map(|record| -> Result<TdeClipResult> {
            let far = read_wav(root.join(&record.far))?;
            let mic = read_wav(root.join(&record.mic))?;
            let (argmax_category, nn_category) = decide_delays(&far, &mic, config, classifier)?;
            Ok(TdeClipResult {
                id: record.id.clone(),
                true_category: record.delay_category,
                argmax_category,
                nn_category,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let argmax_pairs: Vec<(usize, usize)> = clips
        .iter()
        .map(|c| (c.true_category, c.argmax_category))
        .collect();
    let nn_pairs: Option<Vec<(usize, usize)>> = clips
        .iter()
        .map(|c| c.nn_category.map(|p| (c.true_category, p)))
        .collect();
    Ok(TdeReport {
        argmax_exact: accuracy(&argmax_pairs, EXACT_TOLERANCE),
        argmax_wide: accuracy(&argmax_pairs, WIDE_TOLERANCE),
        nn_exact: nn_pairs.as_deref().map(|p| accuracy(p, EXACT_TOLERANCE)),
        nn_wide: nn_pairs.as_deref().map(|p| accuracy(p, WIDE_TOLERANCE)),
        clips,
    })
}

/// Per-clip rows, one line each.
pub fn write_tde_csv(path: impl AsRef<Path>, report: &TdeReport) -> Result<()> {
    let mut file = fs::File::create(path.as_ref())?;
    writeln!(file, "id,true_category,argmax_category,nn_category")?;
    for clip in &report.clips {
        let nn = clip
            .nn_category
            .map(|c| c.to_string())
            .unwrap_or_default();
        writeln!(
            file,
            "{},{},{},{}",
            clip.id, clip.true_category, clip.argmax_category, nn
        )?;
    }
    Ok(())
}

/// Enhancement quality of one clip under one stage stack.
#[derive(Debug, Clone)]
pub struct AecClipResult {
    pub id: String,
    pub si_sdr_mic_db: f64,
    pub si_sdr_out_db: f64,
    pub si_sdr_improvement_db: f64,
    pub erle_db: Option<f64>,
    pub seg_snr_db: f64,
}

/// All clips under one stage stack, with column summaries.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub clips: Vec<AecClipResult>,
    pub improvement: Summary,
    pub erle: Option<Summary>,
    pub seg_snr: Summary,
}

/// The standard ablation: coherence suppressor alone, plus the learned
/// mask, plus the statistical denoiser.
#[derive(Debug, Clone)]
pub struct AecReport {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_stages() -> Vec<(String, PipelineSection)> {
    vec![
        ("nlp".into(), PipelineSection::nlp_only()),
        ("nlp+nn".into(), PipelineSection::with_nn()),
        ("nlp+nn+omlsa".into(), PipelineSection::with_omlsa()),
    ]
}

fn erle_on_far_only_frames(
    mic: &[f64],
    out: &[f64],
    labels: &[(crate::res::DtdLabel, crate::res::BandGains)],
) -> Option<f64> {
    let mut mic_power = 0.0;
    let mut out_power = 0.0;
    let mut counted = false;
    for (t, (dtd, _)) in labels.iter().enumerate() {
        if !(dtd.far_active && !dtd.near_active) {
            continue;
        }
        let start = t * FRAME_SIZE;
        let end = (start + FRAME_SIZE).min(mic.len()).min(out.len());
        if start >= end {
            break;
        }
        counted = true;
        mic_power += mic[start..end].iter().map(|s| s * s).sum::<f64>();
        out_power += out[start..end].iter().map(|s| s * s).sum::<f64>();
    }
    if !counted || mic_power <= 0.0 {
        return None;
    }
    Some(10.0 * (mic_power / out_power.max(1e-20)).log10())
}

fn eval_clip(
    root: &Path,
    record: &ClipRecord,
    config: &ToolkitConfig,
    classifier: Option<&NeuralModel>,
    suppressor: &NeuralModel,
) -> Result<Vec<AecClipResult>> {
    let far = read_wav(root.join(&record.far))?;
    let mic = read_wav(root.join(&record.mic))?;
    let near = read_wav(root.join(&record.near))?;
    let labels = read_labels_csv(&root.join(&record.labels))?;
    let si_sdr_mic_db = si_sdr(&near, &mic)?;

    let mut results = Vec::new();
    for (_, stages) in ablation_stages() {
        let mut run_config = config.clone();
        run_config.pipeline = stages;
        let needs_model = run_config.pipeline.nn;
        let mut pipeline = Pipeline::new(
            &run_config,
            classifier.cloned(),
            needs_model.then(|| suppressor.clone()),
        )?;
        let (out, _) = pipeline.run(&far, &mic)?;
        let si_sdr_out_db = si_sdr(&near, &out)?;
        results.push(AecClipResult {
            id: record.id.clone(),
            si_sdr_mic_db,
            si_sdr_out_db,
            si_sdr_improvement_db: si_sdr_out_db - si_sdr_mic_db,
            erle_db: erle_on_far_only_frames(&mic, &out, &labels),
            seg_snr_db: segmental_snr(&near, &out)?,
        });
    }
    Ok(results)
}

/// Enhancement quality across one split, one row per ablation stack.
/// Improvement is SI-SDR of the output against the clean near end, minus
/// the microphone's own SI-SDR; ERLE is measured on far-only frames.
pub fn eval_aec(
    root: &Path,
    manifest: &Manifest,
    split: &str,
    config: &ToolkitConfig,
    classifier: Option<&NeuralModel>,
    suppressor: &NeuralModel,
) -> Result<AecReport> {
    let records: Vec<&ClipRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(Error::Data(format!("dataset has no '{split}' clips")));
    }
    let per_clip: Vec<Vec<AecClipResult>> = records
        .par_iter()
        .map(|record| eval_clip(root, record, config, classifier, suppressor))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (ri, (label, _)) in ablation_stages().into_iter().enumerate() {
        let clips: Vec<AecClipResult> = per_clip.iter().map(|c| c[ri].clone()).collect();
        let improvements: Vec<f64> = clips.iter().map(|c| c.si_sdr_improvement_db).collect();
        let erles: Vec<f64> = clips.iter().filter_map(|c| c.erle_db).collect();
        let seg: Vec<f64> = clips.iter().map(|c| c.seg_snr_db).collect();
        rows.push(AblationRow {
            label,
            improvement: summarize(&improvements)?,
            erle: if erles.is_empty() {
                None
            } else {
                Some(summarize(&erles)?)
            },
            seg_snr: summarize(&seg)?,
            clips,
        });
    }
    Ok(AecReport { rows })
}

/// Per-clip rows for every ablation stack, one line each.
pub fn write_aec_csv(path: impl AsRef<Path>, report: &AecReport) -> Result<()> {
    let mut file = fs::File::create(path.as_ref())?;
    writeln!(
        file,
        "stages,id,si_sdr_mic_db,si_sdr_out_db,si_sdr_improvement_db,erle_db,seg_snr_db"
    )?;
    for row in &report.rows {
        for clip in &row.clips {
            let erle = clip.erle_db.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                row.label,
                clip.id,
                clip.si_sdr_mic_db,
                clip.si_sdr_out_db,
                clip.si_sdr_improvement_db,
                erle,
                clip.seg_snr_db
            )?;
        }
    }
    Ok(())
}
