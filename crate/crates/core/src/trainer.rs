//! Network training with validation-AUROC checkpointing, ensembles and the
//! balanced-accuracy decision threshold.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, NUM_TOUCHPOINTS};
use crate::error::{Error, Result};
use crate::metrics::{self, ThresholdRule};
use crate::mlp::{self, AdamConfig, AdamState, Architecture, Batch, NetworkParams};
use crate::seeding;

/// How raw counts are mapped to network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    Identity,
    /// `log(1 + count)`, then z-scored with training-set moments.
    #[default]
    Log1pStandardize,
}

/// Input map fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureTransform {
    Identity,
    Log1pStandardize { mean: Vec<f64>, std: Vec<f64> },
}

impl FeatureTransform {
    pub fn fit(scaling: InputScaling, data: &Dataset) -> Self {
        match scaling {
            InputScaling::Identity => FeatureTransform::Identity,
            InputScaling::Log1pStandardize => {
                let n = data.len().max(1) as f64;
                let mut mean = vec![0.0; NUM_TOUCHPOINTS];
                for ex in &data.examples {
                    for (m, &c) in mean.iter_mut().zip(ex.x.counts()) {
                        *m += f64::from(c).ln_1p();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = vec![0.0; NUM_TOUCHPOINTS];
                for ex in &data.examples {
                    for ((v, &c), m) in var.iter_mut().zip(ex.x.counts()).zip(&mean) {
                        let d = f64::from(c).ln_1p() - m;
                        *v += d * d;
                    }
                }
                let std = var
                    .into_iter()
                    .map(|v| {
                        let s = (v / n).sqrt();
                        if s > 1e-12 {
                            s
                        } else {
                            1.0
                        }
                    })
                    .collect();
                FeatureTransform::Log1pStandardize { mean, std }
            }
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FeatureTransform::Identity => out.copy_from_slice(x),
            FeatureTransform::Log1pStandardize { mean, std } => {
                for (((o, &v), m), s) in out.iter_mut().zip(x).zip(mean).zip(std) {
                    *o = (v.ln_1p() - m) / s;
                }
            }
        }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply(x, &mut out);
        out
    }

    fn matrix(&self, data: &Dataset) -> Vec<f64> {
        let mut out = vec![0.0; data.len() * NUM_TOUCHPOINTS];
        for (ex, row) in data
            .examples
            .iter()
            .zip(out.chunks_exact_mut(NUM_TOUCHPOINTS))
        {
            self.apply(&ex.x.to_f64(), row);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs between validation-AUROC checkpoints.
    pub eval_every: usize,
    /// One seed per ensemble member.
    pub seeds: Vec<u64>,
    pub threshold_rule: ThresholdRule,
    pub architecture: Architecture,
    pub input_scaling: InputScaling,
    /// `None` means full-batch updates.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::paper(0)
    }
}

impl TrainConfig {
    fn with_members(epochs: usize, k: usize, base_seed: u64) -> Self {
        Self {
            epochs,
            learning_rate: 1e-3,
            eval_every: 50,
            seeds: (0..k as u64)
                .map(|i| seeding::derive(base_seed, &[i]))
                .collect(),
            threshold_rule: ThresholdRule::BalancedArithmetic,
            architecture: Architecture::default(),
            input_scaling: InputScaling::default(),
            batch_size: None,
        }
    }

    /// 10000 epochs, ten members.
    pub fn paper(base_seed: u64) -> Self {
        Self::with_members(10_000, 10, base_seed)
    }

    /// 500 epochs, five members.
    pub fn desk(base_seed: u64) -> Self {
        Self::with_members(500, 5, base_seed)
    }

    pub fn ensemble_size(&self) -> usize {
        self.seeds.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        if self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Argument("epochs and eval_every must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Argument("ensemble needs at least one seed".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Argument("ensemble seeds must be distinct".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Argument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

/// One trained network: the parameters of its best validation checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(flatten)]
    pub params: NetworkParams,
    pub init_seed: u64,
    pub transform: FeatureTransform,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    /// Training loss and validation AUROC at every checkpoint.
    pub trace: Vec<Checkpoint>,
}

impl TrainedModel {
    /// Score of a raw count vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.params.forward(&self.transform.transform(x))
    }
}

struct Prepared {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    labels: Vec<u8>,
}

impl Prepared {
    fn new(transform: &FeatureTransform, data: &Dataset) -> Self {
        let labels = data.labels();
        Self {
            inputs: transform.matrix(data),
            targets: labels.iter().map(|&y| f64::from(y)).collect(),
            labels,
        }
    }

    fn batch(&self) -> Batch<'_> {
        Batch::new(&self.inputs, &self.targets, NUM_TOUCHPOINTS).expect("consistent matrix")
    }

    fn scores(&self, params: &NetworkParams) -> Vec<f64> {
        self.inputs
            .chunks_exact(NUM_TOUCHPOINTS)
            .map(|row| params.score(row))
            .collect()
    }
}

fn check_inputs(train: &Dataset, val: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.architecture.input_dim != NUM_TOUCHPOINTS {
        return Err(Error::Dimension {
            expected: NUM_TOUCHPOINTS,
            got: config.architecture.input_dim,
        });
    }
    val.require_both_classes()
}

fn fit_member(
    train: &Prepared,
    val: &Prepared,
    transform: &FeatureTransform,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    let mut params = NetworkParams::init(&config.architecture, seed);
    let mut adam = AdamState::new(
        params.len(),
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );

    let n = train.targets.len();
    let batch_size = config.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seeding::rng_for(seed, &[0x5EED]);
    let mut scratch_x = Vec::new();
    let mut scratch_y = Vec::new();

    let mut best: Option<(NetworkParams, usize, f64)> = None;
    let mut trace = Vec::new();

    for epoch in 1..=config.epochs {
        let epoch_loss = if batch_size == n {
            let (loss, grad) = mlp::loss_and_grad(&params, &train.batch())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}"
                )));
            }
            adam.step_params(&mut params, &grad)?;
            loss
        } else {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch_size) {
                scratch_x.clear();
                scratch_y.clear();
                for &i in chunk {
                    scratch_x.extend_from_slice(
                        &train.inputs[i * NUM_TOUCHPOINTS..(i + 1) * NUM_TOUCHPOINTS],
                    );
                    scratch_y.push(train.targets[i]);
                }
                let batch = Batch::new(&scratch_x, &scratch_y, NUM_TOUCHPOINTS)?;
                let (loss, grad) = mlp::loss_and_grad(&params, &batch)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "training loss {loss} at epoch {epoch}"
                    )));
                }
                adam.step_params(&mut params, &grad)?;
                total += loss * chunk.len() as f64;
            }
            total / n as f64
        };

        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let val_auroc = metrics::auroc_of(&val.scores(&params), &val.labels)?;
            trace.push(Checkpoint {
                epoch,
                train_loss: epoch_loss,
                val_auroc,
            });
            if best.as_ref().is_none_or(|(_, _, b)| val_auroc > *b) {
                best = Some((params.clone(), epoch, val_auroc));
            }
        }
    }

    let (params, best_epoch, best_val_auroc) = best.expect("final epoch is always evaluated");
    Ok(TrainedModel {
        params,
        init_seed: seed,
        transform: transform.clone(),
        best_epoch,
        best_val_auroc,
        trace,
    })
}

/// Trains one network and keeps the checkpoint with the highest validation
/// AUROC (earliest on ties).
pub fn train_model(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainedModel> {
    check_inputs(train, val, config)?;
    let transform = FeatureTransform::fit(config.input_scaling, train);
    let train_p = Prepared::new(&transform, train);
    let val_p = Prepared::new(&transform, val);
    fit_member(&train_p, &val_p, &transform, config, seed)
}

/// Averaged members plus the decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub config: TrainConfig,
    pub threshold: f64,
    pub members: Vec<TrainedModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

impl EnsembleModel {
    /// Builds an ensemble from already trained members; the threshold still
    /// has to be selected.
    pub fn from_members(config: TrainConfig, members: Vec<TrainedModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Argument("ensemble needs at least one member".into()));
        }
        Ok(Self {
            config,
            threshold: 0.5,
            members,
        })
    }

    /// The input transform if every member uses the same one.
    pub fn shared_transform(&self) -> Option<&FeatureTransform> {
        let first = &self.members.first()?.transform;
        self.members
            .iter()
            .all(|m| &m.transform == first)
            .then_some(first)
    }

    /// Mean member score for a raw count vector.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != NUM_TOUCHPOINTS {
            return Err(Error::Dimension {
                expected: NUM_TOUCHPOINTS,
                got: x.len(),
            });
        }
        Ok(self.score(x))
    }

    /// [`predict`](Self::predict) without the dimension check.
    pub fn score(&self, x: &[f64]) -> f64 {
        match self.shared_transform() {
            Some(t) => self.score_transformed(&t.transform(x)),
            None => {
                let total: f64 = self
                    .members
                    .iter()
                    .map(|m| m.params.score(&m.transform.transform(x)))
                    .sum();
                total / self.members.len() as f64
            }
        }
    }

    /// Mean member score for an input that already went through the shared
    /// transform.
    pub fn score_transformed(&self, t: &[f64]) -> f64 {
        let total: f64 = self.members.iter().map(|m| m.params.score(t)).sum();
        total / self.members.len() as f64
    }

    pub fn scores(&self, data: &Dataset) -> Vec<f64> {
        data.examples
            .iter()
            .map(|ex| self.score(&ex.x.to_f64()))
            .collect()
    }

    /// `1` iff the ensemble score is strictly above the threshold.
    pub fn classify(&self, x: &[f64]) -> Result<u8> {
        Ok(u8::from(self.predict(x)? > self.threshold))
    }
}

/// Balanced-accuracy threshold of the ensemble on validation data.
pub fn select_threshold(
    ensemble: &EnsembleModel,
    val: &Dataset,
    rule: ThresholdRule,
) -> Result<f64> {
    let choice = metrics::best_threshold(&ensemble.scores(val), &val.labels(), rule)?;
    Ok(choice.threshold)
}

pub fn train_ensemble(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<EnsembleModel> {
    train_ensemble_with(train, val, config, Execution::Parallel)
}

/// Trains `K` members that differ only in their seed, then selects the
/// threshold on the validation set.
pub fn train_ensemble_with(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    execution: Execution,
) -> Result<EnsembleModel> {
    check_inputs(train, val, config)?;
    let transform = FeatureTransform::fit(config.input_scaling, train);
    let train_p = Prepared::new(&transform, train);
    let val_p = Prepared::new(&transform, val);
    let fit = |&seed: &u64| fit_member(&train_p, &val_p, &transform, config, seed);

    let members = match execution {
        Execution::Serial => config.seeds.iter().map(fit).collect::<Result<Vec<_>>>()?,
        Execution::Parallel => config
            .seeds
            .par_iter()
            .map(fit)
            .collect::<Result<Vec<_>>>()?,
    };
    let mut ensemble = EnsembleModel::from_members(config.clone(), members)?;
    ensemble.threshold = select_threshold(&ensemble, val, config.threshold_rule)?;
    Ok(ensemble)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Example, TouchpointVector};
    use crate::mlp::Architecture;

    fn dataset(rows: &[([u32; 2], u8)]) -> Dataset {
        Dataset {
            examples: rows
                .iter()
                .enumerate()
                .map(|(i, (c, y))| {
                    let mut x = TouchpointVector::default();
                    x.0[0] = c[0];
                    x.0[1] = c[1];
                    Example {
                        user_id: format!("u{i}"),
                        x,
                        y: *y,
                    }
                })
                .collect(),
            lookback_days: 30,
        }
    }

    fn constant_member(bias: f64, seed: u64) -> TrainedModel {
        let arch = Architecture::new(NUM_TOUCHPOINTS, vec![]).unwrap();
        let logit = (bias / (1.0 - bias)).ln();
        let params =
            NetworkParams::from_layers(&arch, vec![vec![0.0; NUM_TOUCHPOINTS]], vec![vec![logit]])
                .unwrap();
        TrainedModel {
            params,
            init_seed: seed,
            transform: FeatureTransform::Identity,
            best_epoch: 1,
            best_val_auroc: 0.5,
            trace: vec![],
        }
    }

    #[test]
    fn ensemble_averages_members() {
        let e = EnsembleModel::from_members(
            TrainConfig::desk(0),
            vec![constant_member(0.2, 1), constant_member(0.8, 2)],
        )
        .unwrap();
        assert!((e.predict(&[1.0; 31]).unwrap() - 0.5).abs() < 1e-12);
        assert!(e.predict(&[1.0; 3]).is_err());
    }

    #[test]
    fn classification_is_strict() {
        let mut e =
            EnsembleModel::from_members(TrainConfig::desk(0), vec![constant_member(0.25, 1)])
                .unwrap();
        let score = e.predict(&[0.0; 31]).unwrap();
        e.threshold = score;
        assert_eq!(e.classify(&[0.0; 31]).unwrap(), 0);
        e.threshold = score - 1e-9;
        assert_eq!(e.classify(&[0.0; 31]).unwrap(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::desk(3);
        assert_eq!(c.ensemble_size(), 5);
        c.seeds = vec![1, 1];
        assert!(c.validate().is_err());
        c.seeds = vec![];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::paper(3);
        assert_eq!((c.epochs, c.ensemble_size()), (10_000, 10));
        c.epochs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_class_validation_set_is_rejected() {
        let train = dataset(&[([1, 0], 1), ([0, 1], 0)]);
        let val = dataset(&[([1, 0], 1), ([2, 0], 1)]);
        let mut cfg = TrainConfig::desk(0);
        cfg.epochs = 2;
        assert!(matches!(
            train_model(&train, &val, &cfg, 1),
            Err(Error::SingleClass(1))
        ));
    }

    #[test]
    fn checkpoint_is_best_evaluated_epoch() {
        let rows: Vec<_> = (0..40u32)
            .map(|i| ([i % 7, (i * 3) % 5], u8::from(i % 7 > 3)))
            .collect();
        let data = dataset(&rows);
        let mut cfg = TrainConfig::desk(0);
        cfg.epochs = 120;
        cfg.eval_every = 25;
        let m = train_model(&data, &data, &cfg, 9).unwrap();
        let epochs: Vec<_> = m.trace.iter().map(|c| c.epoch).collect();
        assert_eq!(epochs, vec![25, 50, 75, 100, 120]);
        assert!(m.trace.iter().all(|c| m.best_val_auroc >= c.val_auroc));
        let first_best = m
            .trace
            .iter()
            .find(|c| c.val_auroc == m.best_val_auroc)
            .unwrap();
        assert_eq!(first_best.epoch, m.best_epoch);
    }

    #[test]
    fn log1p_transform_standardizes() {
        let data = dataset(&[([0, 5], 0), ([3, 5], 1), ([8, 5], 0)]);
        let t = FeatureTransform::fit(InputScaling::Log1pStandardize, &data);
        let rows: Vec<_> = data.features().iter().map(|x| t.transform(x)).collect();
        let mean0: f64 = rows.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        let var0: f64 = rows.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!(mean0.abs() < 1e-12);
        assert!((var0 - 1.0).abs() < 1e-12);
        // constant column maps to zero
        assert!(rows.iter().all(|r| r[1].abs() < 1e-12));
    }
}
