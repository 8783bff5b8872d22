//! Dataset loading and preparation.
//!
//! The DEAP reader expects the preprocessed per-participant layout as NumPy
//! arrays: `sNN_data.npy` of shape `(trials, channels, 8064)` and
//! `sNN_labels.npy` of shape `(trials, 4)`, in either `f8` or `f4`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};
use crate::multimodal::MultimodalBatch;
use crate::nn::{sigmoid, RealMatrix};
use crate::seed;

/// Samples per DEAP trial: 63 s at 128 Hz.
pub const DEAP_SAMPLES: usize = 8064;
pub const DEAP_RATE_HZ: usize = 128;
/// The 3 s pre-trial baseline at the start of each DEAP trial.
pub const DEAP_BASELINE: usize = 384;
pub const DEAP_DEFAULT_EEG_CHANNEL: usize = 0;
/// Zygomaticus major EMG in the DEAP channel order.
pub const DEAP_DEFAULT_EMG_CHANNEL: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Valence,
    Arousal,
    Dominance,
    Liking,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [Self::Valence, Self::Arousal, Self::Dominance, Self::Liking];

    /// Column in the DEAP labels array.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Valence => "valence",
            Self::Arousal => "arousal",
            Self::Dominance => "dominance",
            Self::Liking => "liking",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown rating criterion {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub participant: String,
    pub video: usize,
    /// Shape `(channels, DEAP_SAMPLES)`.
    pub channels: RealMatrix,
    /// Valence, arousal, dominance, liking, each in [1, 9].
    pub ratings: [f64; 4],
}

fn participant_files(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_data.npy") {
            ids.push(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(DataError::EmptyDirectory(dir.to_path_buf()).into());
    }
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let data = dir.join(format!("{id}_data.npy"));
            let labels = dir.join(format!("{id}_labels.npy"));
            if !labels.exists() {
                return Err(DataError::MissingFile(labels).into());
            }
            Ok((id, data, labels))
        })
        .collect()
}

fn read_npy(path: &Path, participant: &str) -> Result<(Vec<u64>, Vec<f64>)> {
    let parse = |message: String| DataError::Parse {
        participant: participant.to_string(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let npy = npyz::NpyFile::new(BufReader::new(file))
        .map_err(|e| parse(format!("{}: {e}", path.display())))?;
    let shape = npy.shape().to_vec();
    let dtype = npy.dtype().descr();
    let values = match dtype.as_str() {
        "'<f8'" => npy.into_vec::<f64>(),
        "'<f4'" => npy
            .into_vec::<f32>()
            .map(|v| v.into_iter().map(f64::from).collect()),
        other => {
            return Err(parse(format!("{}: unsupported dtype {other}", path.display())).into())
        }
    }
    .map_err(|e| parse(format!("{}: {e}", path.display())))?;
    Ok((shape, values))
}

/// Reads every participant in `dir`, in file-name order.
pub fn load_deap(dir: &Path) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::new();
    for (id, data_path, labels_path) in participant_files(dir)? {
        let shape_err = |message: String| DataError::Shape {
            participant: id.clone(),
            message,
        };
        let (shape, data) = read_npy(&data_path, &id)?;
        let [trials, channels, samples] = shape[..] else {
            return Err(shape_err(format!(
                "data array has shape {shape:?}, expected 3 dimensions"
            ))
            .into());
        };
        let (trials, channels, samples) = (trials as usize, channels as usize, samples as usize);
        if samples != DEAP_SAMPLES {
            return Err(shape_err(format!(
                "{samples} samples per trial, expected {DEAP_SAMPLES}"
            ))
            .into());
        }
        let (lshape, labels) = read_npy(&labels_path, &id)?;
        if lshape != [trials as u64, 4] {
            return Err(shape_err(format!(
                "labels array has shape {lshape:?}, expected [{trials}, 4]"
            ))
            .into());
        }
        let per_trial = channels * samples;
        for t in 0..trials {
            let ratings: [f64; 4] = labels[4 * t..4 * t + 4].try_into().expect("4 ratings");
            if let Some(&value) = ratings.iter().find(|r| !(1.0..=9.0).contains(*r)) {
                return Err(DataError::RatingOutOfRange {
                    participant: id.clone(),
                    trial: t,
                    value,
                }
                .into());
            }
            let channels = RealMatrix::new(
                channels,
                samples,
                data[t * per_trial..(t + 1) * per_trial].to_vec(),
            )
            .map_err(|e| shape_err(format!("trial {t}: {e}")))?;
            records.push(TrialRecord {
                participant: id.clone(),
                video: t,
                channels,
                ratings,
            });
        }
    }
    Ok(records)
}

/// Writes records in the DEAP container layout, one file pair per participant.
/// Every participant must have the same channel count.
pub fn export_deap(records: &[TrialRecord], dir: &Path, single_precision: bool) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut by_participant: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_participant.entry(&r.participant).or_default().push(r);
    }
    for (id, trials) in by_participant {
        let channels = trials[0].channels.rows();
        if trials
            .iter()
            .any(|t| t.channels.shape() != (channels, DEAP_SAMPLES))
        {
            return Err(
                DataError::Invalid(format!("participant {id}: trials differ in shape")).into(),
            );
        }
        let shape = [trials.len() as u64, channels as u64, DEAP_SAMPLES as u64];
        let data = trials
            .iter()
            .flat_map(|t| t.channels.as_slice().iter().copied());
        let data_path = dir.join(format!("{id}_data.npy"));
        if single_precision {
            write_npy(&data_path, &shape, data.map(|v| v as f32))?;
        } else {
            write_npy(&data_path, &shape, data)?;
        }
        let labels = trials.iter().flat_map(|t| t.ratings);
        write_npy(
            &dir.join(format!("{id}_labels.npy")),
            &[trials.len() as u64, 4],
            labels,
        )?;
    }
    Ok(())
}

fn write_npy<T>(path: &Path, shape: &[u64], values: impl Iterator<Item = T>) -> Result<()>
where
    T: npyz::AutoSerialize,
{
    use npyz::WriterBuilder;
    let io = |e| Error::io(format!("writing {}", path.display()), e);
    let file = File::create(path).map_err(io)?;
    let mut writer = npyz::WriteOptions::new()
        .default_dtype()
        .shape(shape)
        .writer(BufWriter::new(file))
        .begin_nd()
        .map_err(io)?;
    writer.extend(values).map_err(io)?;
    writer.finish().map_err(io)
}

/// Per-segment affine parameters: `normalized = (raw - mean) / std`, then
/// `(whitened - min) / (max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentAffine {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SegmentAffine {
    /// Whitened values from normalized ones.
    pub fn unscale(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .map(|v| v * (self.max - self.min) + self.min)
            .collect()
    }

    /// Raw-scale values from normalized ones.
    pub fn denormalize(&self, normalized: &[f64]) -> Vec<f64> {
        self.unscale(normalized)
            .iter()
            .map(|w| w * self.std + self.mean)
            .collect()
    }
}

/// Whitens a segment and maps it onto [0, 1]. `None` if it has zero variance.
pub fn normalize_segment(raw: &[f64]) -> Option<(Vec<f64>, SegmentAffine)> {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let std = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if std == 0.0 || !std.is_finite() {
        return None;
    }
    let whitened: Vec<f64> = raw.iter().map(|v| (v - mean) / std).collect();
    let min = whitened.iter().copied().fold(f64::INFINITY, f64::min);
    let max = whitened.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let normalized = whitened
        .iter()
        .map(|w| ((w - min) / span).clamp(0.0, 1.0))
        .collect();
    Some((
        normalized,
        SegmentAffine {
            mean,
            std,
            min,
            max,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSelection {
    pub eeg_channel: usize,
    pub emg_channel: usize,
    /// Leading samples dropped from each trial.
    pub baseline_samples: usize,
    pub segment_dim: usize,
}

impl Default for ChannelSelection {
    fn default() -> Self {
        Self {
            eeg_channel: DEAP_DEFAULT_EEG_CHANNEL,
            emg_channel: DEAP_DEFAULT_EMG_CHANNEL,
            baseline_samples: DEAP_BASELINE,
            segment_dim: 896,
        }
    }
}

/// Where a segment came from and how to undo its normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub participant: String,
    pub video: usize,
    pub segment: usize,
    pub eeg: SegmentAffine,
    pub emg: SegmentAffine,
}

/// Paired EEG/EMG segments, one per column, with binary labels per criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedDataset {
    pub eeg: RealMatrix,
    pub emg: RealMatrix,
    pub labels: BTreeMap<Criterion, Vec<usize>>,
    /// Either empty or one entry per column.
    pub meta: Vec<SegmentMeta>,
}

impl SegmentedDataset {
    pub fn new(
        eeg: RealMatrix,
        emg: RealMatrix,
        labels: BTreeMap<Criterion, Vec<usize>>,
        meta: Vec<SegmentMeta>,
    ) -> Result<Self> {
        let n = eeg.cols();
        if emg.cols() != n
            || labels.values().any(|l| l.len() != n)
            || !(meta.is_empty() || meta.len() == n)
        {
            return Err(
                DataError::Invalid("EEG, EMG, label, and metadata counts differ".into()).into(),
            );
        }
        if labels.values().flatten().any(|&l| l > 1) {
            return Err(DataError::Invalid("labels must be binary".into()).into());
        }
        Ok(Self {
            eeg,
            emg,
            labels,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.eeg.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment_dim(&self) -> usize {
        self.eeg.rows()
    }

    pub fn batch(&self) -> Result<MultimodalBatch> {
        MultimodalBatch::complete(self.eeg.clone(), self.emg.clone())
    }

    pub fn labels_for(&self, criterion: Criterion) -> Result<&[usize]> {
        self.labels
            .get(&criterion)
            .map(Vec::as_slice)
            .ok_or_else(|| DataError::Invalid(format!("dataset has no {criterion} labels")).into())
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            eeg: self.eeg.select_columns(idx),
            emg: self.emg.select_columns(idx),
            labels: self
                .labels
                .iter()
                .map(|(&c, l)| (c, idx.iter().map(|&i| l[i]).collect()))
                .collect(),
            meta: if self.meta.is_empty() {
                Vec::new()
            } else {
                idx.iter().map(|&i| self.meta[i].clone()).collect()
            },
        }
    }
}

/// Result of segmentation, with the count of zero-variance segments dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub dataset: SegmentedDataset,
    pub skipped: usize,
}

/// Label 1 when the rating is strictly above 5.
pub fn threshold_labels(ratings: &[f64]) -> Result<Vec<usize>> {
    ratings
        .iter()
        .map(|&r| {
            if !(1.0..=9.0).contains(&r) {
                return Err(DataError::Invalid(format!("rating {r} outside [1, 9]")).into());
            }
            Ok(usize::from(r > 5.0))
        })
        .collect()
}

/// Cuts each trial's selected channels into consecutive segments after the
/// baseline, dropping any trailing remainder, then normalizes each segment.
/// A segment pair is skipped if either side has zero variance.
pub fn segment_normalize(records: &[TrialRecord], sel: &ChannelSelection) -> Result<Segmentation> {
    if sel.segment_dim == 0 {
        return Err(Error::InvalidConfig("segment_dim must be positive".into()));
    }
    let mut eeg_cols = Vec::new();
    let mut emg_cols = Vec::new();
    let mut labels: BTreeMap<Criterion, Vec<usize>> =
        Criterion::ALL.iter().map(|&c| (c, Vec::new())).collect();
    let mut meta = Vec::new();
    let mut skipped = 0;
    for rec in records {
        let channels = rec.channels.rows();
        for ch in [sel.eeg_channel, sel.emg_channel] {
            if ch >= channels {
                return Err(DataError::Shape {
                    participant: rec.participant.clone(),
                    message: format!(
                        "channel {ch} requested but trial {} has {channels}",
                        rec.video
                    ),
                }
                .into());
            }
        }
        let usable = rec.channels.cols().saturating_sub(sel.baseline_samples);
        let trial_labels = threshold_labels(&rec.ratings)?;
        let eeg = rec.channels.row(sel.eeg_channel);
        let emg = rec.channels.row(sel.emg_channel);
        for s in 0..usable / sel.segment_dim {
            let start = sel.baseline_samples + s * sel.segment_dim;
            let range = start..start + sel.segment_dim;
            let (Some((e, ea)), Some((m, ma))) = (
                normalize_segment(&eeg[range.clone()]),
                normalize_segment(&emg[range]),
            ) else {
                skipped += 1;
                continue;
            };
            eeg_cols.push(e);
            emg_cols.push(m);
            for c in Criterion::ALL {
                labels
                    .get_mut(&c)
                    .expect("all criteria")
                    .push(trial_labels[c.index()]);
            }
            meta.push(SegmentMeta {
                participant: rec.participant.clone(),
                video: rec.video,
                segment: s,
                eeg: ea,
                emg: ma,
            });
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} zero-variance segments");
    }
    let build = |cols: &[Vec<f64>]| {
        if cols.is_empty() {
            Ok(RealMatrix::zeros(sel.segment_dim, 0))
        } else {
            RealMatrix::from_columns(cols)
        }
    };
    let dataset = SegmentedDataset::new(build(&eeg_cols)?, build(&emg_cols)?, labels, meta)?;
    Ok(Segmentation { dataset, skipped })
}

/// Seeded shuffle, then the first `round(fraction * n)` samples train.
pub fn train_test_split(
    dataset: &SegmentedDataset,
    train_fraction: f64,
    seed_value: u64,
) -> Result<(SegmentedDataset, SegmentedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(DataError::Invalid(format!(
            "a {train_fraction} split of {n} samples leaves one side empty"
        ))
        .into());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng_for(seed_value, "split"));
    Ok((
        dataset.select(&idx[..n_train]),
        dataset.select(&idx[n_train..]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub latent_dim: usize,
    /// Scale of the modality-specific noise on the shared latents.
    pub noise: f64,
    pub samples: usize,
    pub seed: u64,
    pub segment_dim: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            noise: 0.3,
            samples: 2000,
            seed: 0,
            segment_dim: 64,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim == 0 || self.latent_dim >= self.segment_dim {
            problems.push(format!(
                "latent_dim must be in 1..segment_dim ({}), got {}",
                self.segment_dim, self.latent_dim
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            problems.push(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.samples == 0 {
            problems.push("samples must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Smooth sinusoidal mixing of the latents into one modality.
#[derive(Debug, Clone)]
struct Mixing {
    /// Shape `(D, k)`.
    a: RealMatrix,
}

impl Mixing {
    fn draw(d: usize, k: usize, rng: &mut seed::Rng) -> Self {
        let mut a = RealMatrix::zeros(d, k);
        for c in 0..k {
            let freq = rng.random_range(0.5..3.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for i in 0..d {
                let t = i as f64 / d as f64;
                a.set(i, c, (std::f64::consts::TAU * freq * t + phase).sin());
            }
        }
        Self { a }
    }

    fn apply(&self, latent: &[f64], sample_noise: f64, rng: &mut seed::Rng) -> Vec<f64> {
        let k = latent.len() as f64;
        (0..self.a.rows())
            .map(|i| {
                let mix: f64 = self
                    .a
                    .row(i)
                    .iter()
                    .zip(latent)
                    .map(|(a, s)| a * s)
                    .sum::<f64>()
                    / k.sqrt();
                let eps: f64 = StandardNormal.sample(rng);
                sigmoid(2.0 * mix + sample_noise * eps)
            })
            .collect()
    }
}

/// Shared-latent generator behind [`synth_multimodal`] and [`synth_trials`].
struct Generator {
    spec: SynthSpec,
    eeg: Mixing,
    emg: Mixing,
}

impl Generator {
    fn new(spec: &SynthSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng_for(spec.seed, "synth-mixing");
        let eeg = Mixing::draw(spec.segment_dim, spec.latent_dim, &mut rng);
        let emg = Mixing::draw(spec.segment_dim, spec.latent_dim, &mut rng);
        Ok(Self {
            spec: *spec,
            eeg,
            emg,
        })
    }

    fn latent(&self, rng: &mut seed::Rng) -> Vec<f64> {
        (0..self.spec.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect()
    }

    fn views(&self, latent: &[f64], rng: &mut seed::Rng) -> (Vec<f64>, Vec<f64>) {
        let noise = self.spec.noise;
        let view = |m: &Mixing, rng: &mut seed::Rng| {
            let u: Vec<f64> = latent
                .iter()
                .map(|s| s + noise * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect();
            m.apply(&u, 0.25 * noise, rng)
        };
        let e = view(&self.eeg, rng);
        let m = view(&self.emg, rng);
        (e, m)
    }
}

/// Label for `criterion` from latent `criterion.index() mod k`.
fn latent_label(latent: &[f64], criterion: Criterion) -> usize {
    usize::from(latent[criterion.index() % latent.len()] > 0.0)
}

fn min_max(m: &mut RealMatrix) {
    let lo = m.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m
        .as_slice()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    for v in m.as_mut_slice() {
        *v = ((*v - lo) / span).clamp(0.0, 1.0);
    }
}

/// Paired samples whose modalities are different smooth nonlinear mixtures of
/// the same Gaussian latents, each with its own noise. Each modality is
/// min-max scaled to [0, 1] over the whole batch.
pub fn synth_multimodal(spec: &SynthSpec) -> Result<SegmentedDataset> {
    let generator = Generator::new(spec)?;
    let mut rng = seed::rng_for(spec.seed, "synth-samples");
    let mut eeg_cols = Vec::with_capacity(spec.samples);
    let mut emg_cols = Vec::with_capacity(spec.samples);
    let mut labels: BTreeMap<Criterion, Vec<usize>> =
        Criterion::ALL.iter().map(|&c| (c, Vec::new())).collect();
    for _ in 0..spec.samples {
        let s = generator.latent(&mut rng);
        let (e, m) = generator.views(&s, &mut rng);
        eeg_cols.push(e);
        emg_cols.push(m);
        for (c, l) in labels.iter_mut() {
            l.push(latent_label(&s, *c));
        }
    }
    let mut eeg = RealMatrix::from_columns(&eeg_cols)?;
    let mut emg = RealMatrix::from_columns(&emg_cols)?;
    min_max(&mut eeg);
    min_max(&mut emg);
    SegmentedDataset::new(eeg, emg, labels, Vec::new())
}

/// Synthetic trials in DEAP shape: each trial's latents set its ratings, and
/// every segment-length stretch after the baseline is one synthetic view of
/// those latents plus a small per-segment jitter. Channels other than the
/// selected pair carry low-level noise.
pub fn synth_trials(
    spec: &SynthSpec,
    participants: usize,
    trials: usize,
    channels: usize,
    sel: &ChannelSelection,
) -> Result<Vec<TrialRecord>> {
    if sel.segment_dim != spec.segment_dim {
        return Err(Error::InvalidConfig(format!(
            "segment_dim {} differs from the synthetic spec's {}",
            sel.segment_dim, spec.segment_dim
        )));
    }
    if sel.eeg_channel >= channels || sel.emg_channel >= channels {
        return Err(Error::InvalidConfig(format!(
            "channels {} and {} do not fit in {channels}",
            sel.eeg_channel, sel.emg_channel
        )));
    }
    let generator = Generator::new(spec)?;
    let mut rng = seed::rng_for(spec.seed, "synth-trials");
    let mut out = Vec::with_capacity(participants * trials);
    for p in 0..participants {
        for t in 0..trials {
            let s = generator.latent(&mut rng);
            let ratings =
                Criterion::ALL.map(|c| (5.0 + 4.0 * s[c.index() % s.len()].tanh()).clamp(1.0, 9.0));
            let mut data: Vec<f64> = (0..channels * DEAP_SAMPLES)
                .map(|_| 0.01 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect();
            let mut fill = |ch: usize, start: usize, values: &[f64]| {
                data[ch * DEAP_SAMPLES + start..ch * DEAP_SAMPLES + start + values.len()]
                    .copy_from_slice(values);
            };
            let mut start = sel.baseline_samples;
            while start + spec.segment_dim <= DEAP_SAMPLES {
                let jittered: Vec<f64> = s
                    .iter()
                    .map(|v| v + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect();
                let (e, m) = generator.views(&jittered, &mut rng);
                fill(sel.eeg_channel, start, &e);
                if sel.emg_channel != sel.eeg_channel {
                    fill(sel.emg_channel, start, &m);
                }
                start += spec.segment_dim;
            }
            out.push(TrialRecord {
                participant: format!("s{:02}", p + 1),
                video: t,
                channels: RealMatrix::new(channels, DEAP_SAMPLES, data)?,
                ratings,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, SymmetricEigen};

    /// Largest canonical correlation between the rows of `x` and `y`.
    fn first_canonical_correlation(x: &RealMatrix, y: &RealMatrix) -> f64 {
        let n = x.cols();
        let centered = |m: &RealMatrix| {
            let mut d = DMatrix::from_row_slice(m.rows(), n, m.as_slice());
            for mut row in d.row_iter_mut() {
                let mean = row.mean();
                row.add_scalar_mut(-mean);
            }
            d
        };
        let (cx, cy) = (centered(x), centered(y));
        let inv_sqrt = |c: DMatrix<f64>| {
            let eig = SymmetricEigen::new(c / (n as f64 - 1.0));
            let d = eig.eigenvalues.map(|v| 1.0 / v.max(1e-12).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
        };
        let sxx = inv_sqrt(&cx * cx.transpose());
        let syy = inv_sqrt(&cy * cy.transpose());
        let sxy = &cx * cy.transpose() / (n as f64 - 1.0);
        let t = sxx * sxy * syy;
        t.singular_values().max()
    }

    fn spec(noise: f64) -> SynthSpec {
        SynthSpec {
            latent_dim: 4,
            noise,
            samples: 5000,
            seed: 11,
            segment_dim: 16,
        }
    }

    #[test]
    fn synthetic_modalities_are_correlated_at_low_noise() {
        let d = synth_multimodal(&spec(0.1)).unwrap();
        let rho = first_canonical_correlation(&d.eeg, &d.emg);
        assert!(rho > 0.5, "first canonical correlation {rho}");
    }

    #[test]
    fn synthetic_correlation_vanishes_at_high_noise() {
        let d = synth_multimodal(&spec(100.0)).unwrap();
        let rho = first_canonical_correlation(&d.eeg, &d.emg);
        assert!(rho < 0.2, "first canonical correlation {rho}");
    }

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let s = SynthSpec {
            samples: 50,
            ..SynthSpec::default()
        };
        let a = synth_multimodal(&s).unwrap();
        let b = synth_multimodal(&s).unwrap();
        let bits = |m: &RealMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.eeg), bits(&b.eeg));
        assert_eq!(bits(&a.emg), bits(&b.emg));
        assert_eq!(a.labels, b.labels);
        assert!(a
            .eeg
            .as_slice()
            .iter()
            .chain(a.emg.as_slice())
            .all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(
            synth_multimodal(&SynthSpec { seed: 1, ..s }).unwrap().eeg,
            a.eeg
        );
    }

    #[test]
    fn synth_spec_validation() {
        assert!(SynthSpec {
            latent_dim: 64,
            ..SynthSpec::default()
        }
        .validate()
        .is_err());
        assert!(SynthSpec {
            noise: -1.0,
            ..SynthSpec::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn threshold_label_cases() {
        assert_eq!(
            threshold_labels(&[9.0, 1.0, 5.0, 5.01]).unwrap(),
            vec![1, 0, 0, 1]
        );
        assert!(threshold_labels(&[10.0]).is_err());
        assert!(threshold_labels(&[0.5]).is_err());
    }

    fn tiny_dataset(n: usize) -> SegmentedDataset {
        synth_multimodal(&SynthSpec {
            samples: n,
            segment_dim: 8,
            latent_dim: 2,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn split_is_seeded_partition() {
        let d = tiny_dataset(100);
        let (tr, te) = train_test_split(&d, 0.5, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (50, 50));
        let (tr75, te75) = train_test_split(&d, 0.75, 3).unwrap();
        assert_eq!((tr75.len(), te75.len()), (75, 25));
        assert_eq!(train_test_split(&d, 0.5, 3).unwrap().0, tr);
        assert_ne!(train_test_split(&d, 0.5, 4).unwrap().0, tr);
        // every column lands on exactly one side, pairing intact
        let key = |m: &RealMatrix, e: &RealMatrix, j: usize| {
            let mut k: Vec<u64> = m.column_values(j).iter().map(|v| v.to_bits()).collect();
            k.extend(e.column_values(j).iter().map(|v| v.to_bits()));
            k
        };
        let mut all: Vec<_> = (0..d.len()).map(|j| key(&d.eeg, &d.emg, j)).collect();
        let mut parts: Vec<_> = (0..tr.len())
            .map(|j| key(&tr.eeg, &tr.emg, j))
            .chain((0..te.len()).map(|j| key(&te.eeg, &te.emg, j)))
            .collect();
        all.sort();
        parts.sort();
        assert_eq!(all, parts);
        assert!(train_test_split(&d, 1.0, 3).is_err());
        assert!(train_test_split(&d, 0.0, 3).is_err());
    }

    fn record(eeg: Vec<f64>, emg: Vec<f64>, rating: f64) -> TrialRecord {
        let mut data = eeg;
        data.extend(emg);
        TrialRecord {
            participant: "s01".into(),
            video: 0,
            channels: RealMatrix::new(2, DEAP_SAMPLES, data).unwrap(),
            ratings: [rating, 2.0, 7.0, 5.0],
        }
    }

    #[test]
    fn segmentation_normalizes_and_skips_constant_segments() {
        let sel = ChannelSelection {
            eeg_channel: 0,
            emg_channel: 1,
            baseline_samples: DEAP_BASELINE,
            segment_dim: 896,
        };
        let eeg: Vec<f64> = (0..DEAP_SAMPLES)
            .map(|i| (i as f64 * 0.05).sin() * 30.0 + 4.0)
            .collect();
        let mut emg: Vec<f64> = (0..DEAP_SAMPLES)
            .map(|i| (i as f64 * 0.11).cos() * 3.0)
            .collect();
        // constant second segment on the EMG side
        for v in &mut emg[DEAP_BASELINE + 896..DEAP_BASELINE + 2 * 896] {
            *v = 2.5;
        }
        let out = segment_normalize(&[record(eeg.clone(), emg, 6.0)], &sel).unwrap();
        // (8064 - 384) / 896 = 8 whole segments, one skipped
        assert_eq!(out.skipped, 1);
        let d = out.dataset;
        assert_eq!(d.len(), 7);
        assert!(d
            .eeg
            .as_slice()
            .iter()
            .chain(d.emg.as_slice())
            .all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.labels_for(Criterion::Valence).unwrap(), &[1; 7]);
        assert_eq!(d.labels_for(Criterion::Arousal).unwrap(), &[0; 7]);
        assert_eq!(d.labels_for(Criterion::Liking).unwrap(), &[0; 7]);
        // affine metadata recovers the raw segment
        let raw = &eeg[DEAP_BASELINE..DEAP_BASELINE + 896];
        let back = d.meta[0].eeg.denormalize(&d.eeg.column_values(0));
        assert!(raw.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));
        assert_eq!(d.meta[1].segment, 2);
    }

    #[test]
    fn npy_round_trip_and_guards() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            segment_dim: 896,
            ..SynthSpec::default()
        };
        let sel = ChannelSelection {
            eeg_channel: 0,
            emg_channel: 1,
            ..ChannelSelection::default()
        };
        let recs = synth_trials(&spec, 2, 3, 2, &sel).unwrap();
        export_deap(&recs, dir.path(), false).unwrap();
        assert_eq!(load_deap(dir.path()).unwrap(), recs);

        export_deap(&recs, dir.path(), true).unwrap();
        let single = load_deap(dir.path()).unwrap();
        assert_eq!(single.len(), 6);
        assert!((single[0].channels.get(0, 500) - recs[0].channels.get(0, 500)).abs() < 1e-6);

        // truncated file names its participant
        let path = dir.path().join("s02_data.npy");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_deap(dir.path()).unwrap_err();
        assert!(err.to_string().contains("s02"), "{err}");

        // rating out of range
        let mut bad = recs.clone();
        bad[4].ratings[1] = 10.0;
        export_deap(&bad, dir.path(), false).unwrap();
        assert!(matches!(
            load_deap(dir.path()),
            Err(Error::Data(DataError::RatingOutOfRange { trial: 1, .. }))
        ));

        std::fs::remove_file(dir.path().join("s01_labels.npy")).unwrap();
        assert!(matches!(
            load_deap(dir.path()),
            Err(Error::Data(DataError::MissingFile(_)))
        ));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_deap(empty.path()),
            Err(Error::Data(DataError::EmptyDirectory(_)))
        ));
    }

    #[test]
    fn trial_ratings_follow_latents() {
        let spec = SynthSpec {
            segment_dim: 896,
            ..SynthSpec::default()
        };
        let sel = ChannelSelection {
            eeg_channel: 0,
            emg_channel: 1,
            ..ChannelSelection::default()
        };
        let recs = synth_trials(&spec, 1, 4, 2, &sel).unwrap();
        let seg = segment_normalize(&recs, &sel).unwrap();
        assert_eq!(seg.skipped, 0);
        assert_eq!(seg.dataset.len(), 4 * 8);
    }
}
