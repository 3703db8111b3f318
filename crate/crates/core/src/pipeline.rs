//! Training, evaluation and the ablation presets.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::labels::{generate_labels, MultiLevelLabels};
use crate::losses::{total_loss, LossConfig, Objective, OutputRef, TermStatus};
use crate::metrics::{score_image, EvalReport};
use crate::nn::{adam_step, forward, predict, AdamConfig, AdamState, ModelParams, Real, Tensor};
use crate::phantom::SampleRecord;
use crate::prior::{fusion_prior, PriorConfig};
use crate::util::mix_seed;

/// Ablation strategies: loss combination and whether the prior channel is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Preset {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::A,
        Preset::B,
        Preset::C,
        Preset::D,
        Preset::E,
        Preset::F,
        Preset::G,
        Preset::H,
    ];

    pub fn uses_prior(self) -> bool {
        matches!(self, Preset::B | Preset::F | Preset::G | Preset::H)
    }

    pub fn objective(self) -> Objective {
        let (box_dice, alignment, contrastive) = match self {
            Preset::A | Preset::B => (true, false, false),
            Preset::C | Preset::F => (true, true, false),
            Preset::D | Preset::G => (true, false, true),
            Preset::E | Preset::H => (true, true, true),
        };
        Objective {
            box_dice,
            alignment,
            contrastive,
        }
    }

    /// Short human-readable description of the active terms.
    pub fn describe(self) -> &'static str {
        match self {
            Preset::A => "box dice",
            Preset::B => "box dice + prior",
            Preset::C => "box dice + alignment",
            Preset::D => "box dice + contrastive",
            Preset::E => "box dice + alignment + contrastive",
            Preset::F => "box dice + alignment + prior",
            Preset::G => "box dice + contrastive + prior",
            Preset::H => "box dice + alignment + contrastive + prior",
        }
    }

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Preset::ALL
                .into_iter()
                .find(|p| p.letter() == c.to_ascii_uppercase())
                .ok_or_else(|| Error::Config(format!("unknown preset {s:?}"))),
            _ => Err(Error::Config(format!("unknown preset {s:?}"))),
        }
    }
}

/// Everything that determines a training run apart from the data.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainSettings {
    pub preset: Preset,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub prior: PriorConfig,
    pub loss: LossConfig,
    pub threshold: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            preset: Preset::H,
            seed: 0,
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig {
                lr: 5e-4,
                ..AdamConfig::default()
            },
            prior: PriorConfig::default(),
            loss: LossConfig::default(),
            threshold: 0.5,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.batch_size < 2 && self.preset.objective().contrastive {
            return Err(Error::Config(format!(
                "preset {} samples across the batch and needs batch size >= 2",
                self.preset
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.adam.lr)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        self.prior.validate()?;
        self.loss.pixel.validate()?;
        self.loss.patch.validate()
    }
}

/// Network input and weak labels of one record. The ground truth is not carried.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub id: String,
    pub input: Tensor<T>,
    pub labels: MultiLevelLabels,
}

/// Stacks the image with the prior (or with zeros) and derives the weak labels.
pub fn build_inputs(
    record: &SampleRecord,
    preset: Preset,
    prior: &PriorConfig,
) -> Result<(Tensor<f64>, MultiLevelLabels)> {
    let dims = record.image.dims();
    let labels = generate_labels(&record.annotation, dims)?;
    let mut data = Vec::with_capacity(2 * dims.len());
    data.extend_from_slice(record.image.data());
    if preset.uses_prior() {
        data.extend(fusion_prior(&record.image, &record.annotation, prior)?.values);
    } else {
        data.resize(2 * dims.len(), 0.0);
    }
    Ok((Tensor::from_vec(2, dims.height, dims.width, data)?, labels))
}

pub fn prepare<T: Real>(records: &[SampleRecord], preset: Preset, prior: &PriorConfig) -> Result<Vec<TrainSample<T>>> {
    records
        .iter()
        .map(|r| {
            let (input, labels) = build_inputs(r, preset, prior)?;
            Ok(TrainSample {
                id: r.id.clone(),
                input: input.cast(),
                labels,
            })
        })
        .collect()
}

/// Loss summary of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub iteration: u64,
    pub batch: usize,
    pub box_dice: Option<f64>,
    pub alignment: Option<f64>,
    pub pixel: TermStatus,
    pub patch: TermStatus,
    pub total: f64,
}

/// Scalar loss and parameter gradients summed over a batch.
pub fn batch_gradients<T: Real>(
    params: &ModelParams<T>,
    batch: &[&TrainSample<T>],
    objective: Objective,
    loss: &LossConfig,
    seed: u64,
) -> Result<(crate::losses::LossTerms, ModelParams<T>)> {
    let passes = batch
        .iter()
        .map(|s| forward(params, s.input.clone()))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<OutputRef<'_, T>> = passes
        .iter()
        .map(|p| OutputRef {
            seg_prob: p.seg_prob(),
            proj: p.proj(),
        })
        .collect();
    let labels: Vec<&MultiLevelLabels> = batch.iter().map(|s| &s.labels).collect();
    let bl = total_loss(&outputs, &labels, objective, loss, seed)?;
    if !bl.terms.total.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {}", bl.terms.total)));
    }
    let mut grads = params.zeros_like();
    for ((pass, sg), pg) in passes.into_iter().zip(&bl.seg_grads).zip(&bl.proj_grads) {
        let mut seeds = Vec::with_capacity(2);
        if objective.box_dice || objective.alignment {
            seeds.push((pass.seg, sg));
        }
        if objective.contrastive {
            seeds.push((pass.proj, pg));
        }
        let g = pass.tape.backward(params, &seeds)?;
        grads.add_assign(&g.params);
    }
    Ok((bl.terms, grads))
}

/// Model, optimizer state and progress of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T> {
    pub settings: TrainSettings,
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub iteration: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(settings: TrainSettings) -> Result<Self> {
        settings.validate()?;
        let params = ModelParams::init(mix_seed(settings.seed, 0));
        let adam = AdamState::new(&params);
        Ok(Trainer {
            settings,
            params,
            adam,
            epoch: 0,
            iteration: 0,
        })
    }

    /// Batch order of the next epoch.
    pub fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.settings.seed, 1_000 + self.epoch as u64));
        order.shuffle(&mut rng);
        order
    }

    /// One pass over `data` in a seed-determined order.
    pub fn train_epoch(&mut self, data: &[TrainSample<T>]) -> Result<Vec<StepRecord>> {
        if data.is_empty() {
            return Err(Error::EmptyInput("training set"));
        }
        let objective = self.settings.preset.objective();
        let order = self.epoch_order(data.len());
        let mut log = Vec::with_capacity(order.len().div_ceil(self.settings.batch_size));
        for chunk in order.chunks(self.settings.batch_size) {
            let batch: Vec<&TrainSample<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let seed = mix_seed(self.settings.seed, 1 << 32 | self.iteration);
            let (terms, grads) = batch_gradients(&self.params, &batch, objective, &self.settings.loss, seed)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("iteration {}: {m}", self.iteration)),
                    other => other,
                })?;
            adam_step(&mut self.params, &grads, &mut self.adam, &self.settings.adam)?;
            log.push(StepRecord {
                epoch: self.epoch,
                iteration: self.iteration,
                batch: batch.len(),
                box_dice: terms.box_dice,
                alignment: terms.alignment,
                pixel: terms.pixel,
                patch: terms.patch,
                total: terms.total,
            });
            self.iteration += 1;
        }
        self.epoch += 1;
        Ok(log)
    }

    /// Trains the remaining epochs, calling `on_epoch` after each one.
    pub fn run<F>(&mut self, data: &[TrainSample<T>], mut on_epoch: F) -> Result<Vec<StepRecord>>
    where
        F: FnMut(&Trainer<T>, &[StepRecord]) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.epoch < self.settings.epochs {
            let steps = self.train_epoch(data)?;
            on_epoch(self, &steps)?;
            log.extend(steps);
        }
        Ok(log)
    }
}

/// Thresholded prediction plus the probability map.
pub fn predict_mask<T: Real>(params: &ModelParams<T>, input: &Tensor<T>, threshold: f64) -> Result<(BinaryMask, Vec<f64>)> {
    let out = predict(params, input.clone())?;
    let prob: Vec<f64> = out.seg_prob.data.iter().map(|v| v.to_f64()).collect();
    let dims = crate::image::Dims::new(input.width, input.height);
    let mask = BinaryMask::from_bits(dims, prob.iter().map(|&p| p >= threshold).collect())?;
    Ok((mask, prob))
}

/// Scores predictions against the ground truth of every record.
pub fn evaluate<T: Real>(
    params: &ModelParams<T>,
    records: &[SampleRecord],
    preset: Preset,
    prior: &PriorConfig,
    threshold: f64,
) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let gt = r
            .gt_mask
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(r.id.clone()))?;
        let (input, _) = build_inputs(r, preset, prior)?;
        let (mask, _) = predict_mask(params, &input.cast::<T>(), threshold)?;
        rows.push(score_image(&r.id, &mask, gt, r.spacing_mm)?);
    }
    Ok(EvalReport::from_rows(rows))
}

/// 80/20 split by record index: the last fifth (at least one record) is held out.
pub fn split_train_val<R>(records: &[R]) -> (&[R], &[R]) {
    let n_val = if records.len() < 2 { 0 } else { (records.len() / 5).max(1) };
    records.split_at(records.len() - n_val)
}

/// Trains one preset and scores it on `test`.
pub fn train_and_evaluate(
    settings: &TrainSettings,
    train: &[SampleRecord],
    test: &[SampleRecord],
) -> Result<(Trainer<f32>, EvalReport)> {
    let data = prepare::<f32>(train, settings.preset, &settings.prior)?;
    let mut trainer = Trainer::new(settings.clone())?;
    trainer.run(&data, |_, _| Ok(()))?;
    let report = evaluate(&trainer.params, test, settings.preset, &settings.prior, settings.threshold)?;
    Ok((trainer, report))
}

/// Result of one preset across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub preset: Preset,
    /// `(seed, mean DSC, mean HD)` per successful run.
    pub runs: Vec<(u64, f64, f64)>,
    /// Error messages of failed runs.
    pub failures: Vec<(u64, String)>,
}

impl AblationRow {
    pub fn mean_dice(&self) -> Option<f64> {
        mean(self.runs.iter().map(|r| r.1))
    }

    pub fn mean_hd(&self) -> Option<f64> {
        mean(self.runs.iter().map(|r| r.2))
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, preset: Preset) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }

    pub fn dice(&self, preset: Preset) -> Option<f64> {
        self.row(preset).and_then(AblationRow::mean_dice)
    }

    pub fn hd(&self, preset: Preset) -> Option<f64> {
        self.row(preset).and_then(AblationRow::mean_hd)
    }
}

/// Runs every preset for every seed on shared data. A failed run is recorded
/// and the remaining runs continue. `on_run` sees each finished run.
pub fn ablation_suite<F>(
    base: &TrainSettings,
    presets: &[Preset],
    seeds: &[u64],
    train: &[SampleRecord],
    test: &[SampleRecord],
    mut on_run: F,
) -> AblationTable
where
    F: FnMut(Preset, u64, &Result<EvalReport>),
{
    let mut rows: Vec<AblationRow> = presets
        .iter()
        .map(|&preset| AblationRow {
            preset,
            runs: vec![],
            failures: vec![],
        })
        .collect();
    for &seed in seeds {
        for row in rows.iter_mut() {
            let settings = TrainSettings {
                preset: row.preset,
                seed,
                ..base.clone()
            };
            let result = train_and_evaluate(&settings, train, test).map(|(_, r)| r);
            on_run(row.preset, seed, &result);
            match result {
                Ok(r) => row.runs.push((seed, r.mean_dice, r.mean_hd)),
                Err(e) => row.failures.push((seed, format!("{e}"))),
            }
        }
    }
    AblationTable { rows }
}
