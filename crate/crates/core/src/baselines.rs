//! Comparison classifiers: L2 logistic regression, Gaussian naive Bayes and
//! k-nearest neighbors, all producing scores in `[0, 1]`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{self, ThresholdRule};
use crate::mlp::{sigmoid, AdamConfig, AdamState, PROB_EPS};
use crate::trainer::EnsembleModel;
use crate::Scorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Logistic,
    GaussianNb,
    Knn,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Logistic => "logistic",
            BaselineKind::GaussianNb => "naive_bayes",
            BaselineKind::Knn => "knn",
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "lr" => Ok(BaselineKind::Logistic),
            "nb" | "naive_bayes" | "gaussian_nb" => Ok(BaselineKind::GaussianNb),
            "knn" => Ok(BaselineKind::Knn),
            _ => Err(Error::Argument(format!(
                "unknown baseline {s:?} (expected logistic, nb or knn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// L2 penalty on standardized weights; `None` means `1 / n_train`.
    pub logistic_l2: Option<f64>,
    pub logistic_epochs: usize,
    pub logistic_learning_rate: f64,
    /// Epochs between recorded logistic training losses.
    pub logistic_trace_every: usize,
    pub nb_log1p: bool,
    pub knn_k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            logistic_l2: None,
            logistic_epochs: 2000,
            logistic_learning_rate: 0.01,
            logistic_trace_every: 100,
            nb_log1p: false,
            knn_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
        /// Penalized training loss at each trace checkpoint.
        #[serde(default)]
        loss_trace: Vec<f64>,
    },
    GaussianNb {
        log1p: bool,
        /// Index 0 is the negative class.
        log_priors: [f64; 2],
        means: [Vec<f64>; 2],
        variances: [Vec<f64>; 2],
    },
    Knn {
        k: usize,
        mean: Vec<f64>,
        std: Vec<f64>,
        /// Z-scored training rows, row-major.
        points: Vec<f64>,
        labels: Vec<u8>,
    },
}

fn dataset_rows(data: &Dataset) -> (Vec<Vec<f64>>, Vec<u8>) {
    (
        data.examples
            .iter()
            .map(|e| e.x.to_f64().to_vec())
            .collect(),
        data.labels(),
    )
}

pub fn fit(kind: BaselineKind, train: &Dataset, config: &BaselineConfig) -> Result<BaselineModel> {
    let (xs, ys) = dataset_rows(train);
    fit_rows(kind, &xs, &ys, config)
}

fn check_rows(xs: &[Vec<f64>], ys: &[u8]) -> Result<usize> {
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let dim = xs[0].len();
    if let Some(row) = xs.iter().find(|r| r.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: row.len(),
        });
    }
    if xs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("baseline training input".into()));
    }
    Ok(dim)
}

fn require_both(ys: &[u8]) -> Result<()> {
    let pos = ys.iter().filter(|&&y| y == 1).count();
    match pos {
        0 => Err(Error::SingleClass(0)),
        p if p == ys.len() => Err(Error::SingleClass(1)),
        _ => Ok(()),
    }
}

/// Per-column mean and standard deviation; constant columns get std 1.
fn column_moments(xs: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len() as f64;
    let mut mean = vec![0.0; dim];
    for row in xs {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for row in xs {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

/// Fits on an explicit feature matrix.
pub fn fit_rows(
    kind: BaselineKind,
    xs: &[Vec<f64>],
    ys: &[u8],
    config: &BaselineConfig,
) -> Result<BaselineModel> {
    let dim = check_rows(xs, ys)?;
    match kind {
        BaselineKind::Logistic => {
            require_both(ys)?;
            fit_logistic(xs, ys, dim, config)
        }
        BaselineKind::GaussianNb => {
            require_both(ys)?;
            Ok(fit_nb(xs, ys, dim, config.nb_log1p))
        }
        BaselineKind::Knn => {
            if config.knn_k == 0 || config.knn_k > xs.len() {
                return Err(Error::Argument(format!(
                    "knn k = {} must be in 1..={}",
                    config.knn_k,
                    xs.len()
                )));
            }
            let (mean, std) = column_moments(xs, dim);
            let mut points = Vec::with_capacity(xs.len() * dim);
            for row in xs {
                points.extend(
                    row.iter()
                        .zip(&mean)
                        .zip(&std)
                        .map(|((v, m), s)| (v - m) / s),
                );
            }
            Ok(BaselineModel::Knn {
                k: config.knn_k,
                mean,
                std,
                points,
                labels: ys.to_vec(),
            })
        }
    }
}

/// Full-batch Adam on the penalized cross-entropy, in standardized
/// coordinates; the result is mapped back to raw-feature weights.
fn fit_logistic(
    xs: &[Vec<f64>],
    ys: &[u8],
    dim: usize,
    config: &BaselineConfig,
) -> Result<BaselineModel> {
    let n = xs.len();
    let lambda = config.logistic_l2.unwrap_or(1.0 / n as f64);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Argument(format!(
            "L2 penalty must be >= 0, got {lambda}"
        )));
    }
    let (mean, std) = column_moments(xs, dim);
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|r| {
            r.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();

    // theta = [w_0 .. w_{d-1}, b]
    let mut theta = vec![0.0; dim + 1];
    let mut grad = vec![0.0; dim + 1];
    let mut adam = AdamState::new(
        dim + 1,
        AdamConfig {
            learning_rate: config.logistic_learning_rate,
            ..AdamConfig::default()
        },
    );
    let trace_every = config.logistic_trace_every.max(1);
    let mut loss_trace = Vec::new();

    for epoch in 1..=config.logistic_epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (row, &y) in z.iter().zip(ys) {
            let t: f64 = theta[dim] + row.iter().zip(&theta).map(|(a, w)| a * w).sum::<f64>();
            let p = sigmoid(t);
            let y = f64::from(y);
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
            let d = p - y;
            for (g, a) in grad.iter_mut().zip(row) {
                *g += d * a;
            }
            grad[dim] += d;
        }
        let nf = n as f64;
        loss /= nf;
        grad.iter_mut().for_each(|g| *g /= nf);
        for (g, w) in grad.iter_mut().zip(&theta).take(dim) {
            *g += 2.0 * lambda * w;
        }
        loss += lambda * theta[..dim].iter().map(|w| w * w).sum::<f64>();
        if epoch % trace_every == 0 || epoch == config.logistic_epochs {
            loss_trace.push(loss);
        }
        adam.step(&mut theta, &grad)?;
    }

    let weights: Vec<f64> = theta[..dim].iter().zip(&std).map(|(w, s)| w / s).collect();
    let bias = theta[dim] - weights.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(BaselineModel::Logistic {
        weights,
        bias,
        loss_trace,
    })
}

fn fit_nb(xs: &[Vec<f64>], ys: &[u8], dim: usize, log1p: bool) -> BaselineModel {
    let rows: Vec<Vec<f64>> = xs
        .iter()
        .map(|r| {
            if log1p {
                r.iter().map(|v| v.ln_1p()).collect()
            } else {
                r.clone()
            }
        })
        .collect();
    let (_, overall_std) = column_moments(&rows, dim);
    let max_var = overall_std.iter().map(|s| s * s).fold(0.0, f64::max);
    let floor = if max_var > 0.0 { 1e-9 * max_var } else { 1e-9 };

    let mut means = [vec![0.0; dim], vec![0.0; dim]];
    let mut variances = [vec![0.0; dim], vec![0.0; dim]];
    let mut counts = [0usize; 2];
    for (row, &y) in rows.iter().zip(ys) {
        let c = usize::from(y);
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += v;
        }
    }
    for c in 0..2 {
        means[c].iter_mut().for_each(|m| *m /= counts[c] as f64);
    }
    for (row, &y) in rows.iter().zip(ys) {
        let c = usize::from(y);
        for ((s, v), m) in variances[c].iter_mut().zip(row).zip(&means[c]) {
            *s += (v - m) * (v - m);
        }
    }
    for c in 0..2 {
        variances[c]
            .iter_mut()
            .for_each(|s| *s = (*s / counts[c] as f64).max(floor));
    }
    let n = xs.len() as f64;
    BaselineModel::GaussianNb {
        log1p,
        log_priors: [(counts[0] as f64 / n).ln(), (counts[1] as f64 / n).ln()],
        means,
        variances,
    }
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        match self {
            BaselineModel::Logistic { .. } => BaselineKind::Logistic,
            BaselineModel::GaussianNb { .. } => BaselineKind::GaussianNb,
            BaselineModel::Knn { .. } => BaselineKind::Knn,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            BaselineModel::Logistic { weights, .. } => weights.len(),
            BaselineModel::GaussianNb { means, .. } => means[0].len(),
            BaselineModel::Knn { mean, .. } => mean.len(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.score_unchecked(x))
    }

    /// Class log-likelihoods `(negative, positive)` of the naive Bayes model.
    fn nb_log_joint(&self, x: &[f64]) -> Option<[f64; 2]> {
        let BaselineModel::GaussianNb {
            log1p,
            log_priors,
            means,
            variances,
        } = self
        else {
            return None;
        };
        let mut out = *log_priors;
        for (c, o) in out.iter_mut().enumerate() {
            for ((&v, m), s) in x.iter().zip(&means[c]).zip(&variances[c]) {
                let v = if *log1p { v.ln_1p() } else { v };
                *o -= 0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (v - m) * (v - m) / s);
            }
        }
        Some(out)
    }

    /// Naive Bayes posterior of the negative class.
    pub fn nb_negative_posterior(&self, x: &[f64]) -> Option<f64> {
        self.nb_log_joint(x).map(|[l0, l1]| sigmoid(l0 - l1))
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            BaselineModel::Logistic { weights, bias, .. } => {
                sigmoid(bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            }
            BaselineModel::GaussianNb { .. } => {
                let [l0, l1] = self.nb_log_joint(x).expect("naive Bayes model");
                sigmoid(l1 - l0)
            }
            BaselineModel::Knn {
                k,
                mean,
                std,
                points,
                labels,
            } => {
                let q: Vec<f64> = x
                    .iter()
                    .zip(mean)
                    .zip(std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect();
                let dim = q.len();
                let mut dists: Vec<(f64, usize)> = points
                    .chunks_exact(dim)
                    .enumerate()
                    .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                    .collect();
                let by_dist =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if *k < dists.len() {
                    dists.select_nth_unstable_by(*k - 1, by_dist);
                }
                let positives = dists[..*k].iter().filter(|(_, i)| labels[*i] == 1).count();
                positives as f64 / *k as f64
            }
        }
    }
}

impl Scorer for BaselineModel {
    fn score(&self, x: &[f64]) -> f64 {
        self.score_unchecked(x)
    }
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub auroc: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub balanced_accuracy: f64,
    pub threshold: f64,
}

fn scores_of(scorer: &dyn Scorer, data: &Dataset) -> Vec<f64> {
    data.examples
        .iter()
        .map(|e| scorer.score(&e.x.to_f64()))
        .collect()
}

/// Evaluates a scorer on `test` at the threshold it earns on `val`.
pub fn evaluate_scorer(
    name: &str,
    scorer: &dyn Scorer,
    val: &Dataset,
    test: &Dataset,
    rule: ThresholdRule,
) -> Result<ComparisonRow> {
    let threshold =
        metrics::best_threshold(&scores_of(scorer, val), &val.labels(), rule)?.threshold;
    let ev = metrics::evaluate(&scores_of(scorer, test), &test.labels(), threshold)?;
    Ok(ComparisonRow {
        model: name.to_string(),
        auroc: ev.auroc,
        tpr: ev.tpr,
        tnr: ev.tnr,
        balanced_accuracy: ev.balanced_accuracy,
        threshold,
    })
}

impl Scorer for EnsembleModel {
    fn score(&self, x: &[f64]) -> f64 {
        EnsembleModel::score(self, x)
    }
}

/// The ensemble (at its own threshold) followed by every baseline (each at
/// its validation-selected threshold under the ensemble's rule).
pub fn compare(
    models: &[BaselineModel],
    ensemble: &EnsembleModel,
    val: &Dataset,
    test: &Dataset,
) -> Result<Vec<ComparisonRow>> {
    test.require_both_classes()?;
    let ev = metrics::evaluate(&ensemble.scores(test), &test.labels(), ensemble.threshold)?;
    let mut rows = vec![ComparisonRow {
        model: "ensemble".into(),
        auroc: ev.auroc,
        tpr: ev.tpr,
        tnr: ev.tnr,
        balanced_accuracy: ev.balanced_accuracy,
        threshold: ensemble.threshold,
    }];
    for m in models {
        rows.push(evaluate_scorer(
            m.kind().name(),
            m,
            val,
            test,
            ensemble.config.threshold_rule,
        )?);
    }
    Ok(rows)
}

/// `model,auroc,tpr,tnr,balanced_accuracy`
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "model,auroc,tpr,tnr,balanced_accuracy")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.model, r.auroc, r.tpr, r.tnr, r.balanced_accuracy
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = (i % 2) as u8;
            let c = if y == 1 { 5.0 } else { -5.0 };
            let jitter = (i as f64 * 0.618).fract() - 0.5;
            xs.push(vec![c + jitter, 1.0 - jitter, c * 0.5]);
            ys.push(y);
        }
        (xs, ys)
    }

    fn auroc_on(model: &BaselineModel, xs: &[Vec<f64>], ys: &[u8]) -> f64 {
        let scores: Vec<f64> = xs.iter().map(|x| model.predict(x).unwrap()).collect();
        metrics::auroc_of(&scores, ys).unwrap()
    }

    #[test]
    fn logistic_separates_clusters() {
        let (xs, ys) = two_clusters(200);
        let m = fit_rows(BaselineKind::Logistic, &xs, &ys, &BaselineConfig::default()).unwrap();
        assert!(auroc_on(&m, &xs, &ys) >= 0.99);
    }

    #[test]
    fn zero_logistic_scores_half() {
        let m = BaselineModel::Logistic {
            weights: vec![0.0; 31],
            bias: 0.0,
            loss_trace: vec![],
        };
        assert_eq!(m.predict(&[7.0; 31]).unwrap(), 0.5);
        assert!(m.predict(&[7.0; 3]).is_err());
    }

    #[test]
    fn single_class_training_fails_for_parametric_models() {
        let xs = vec![vec![1.0], vec![2.0]];
        let ys = vec![1, 1];
        let cfg = BaselineConfig::default();
        assert!(matches!(
            fit_rows(BaselineKind::Logistic, &xs, &ys, &cfg),
            Err(Error::SingleClass(1))
        ));
        assert!(fit_rows(BaselineKind::GaussianNb, &xs, &ys, &cfg).is_err());
        let knn = BaselineConfig { knn_k: 1, ..cfg };
        assert!(fit_rows(BaselineKind::Knn, &xs, &ys, &knn).is_ok());
    }

    #[test]
    fn nb_without_signal_returns_prior() {
        // Both classes share the same feature distribution.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rep in 0..4 {
            for v in [1.0, 2.0, 3.0, 4.0] {
                xs.push(vec![v, 10.0 - v]);
                ys.push(u8::from(rep == 0));
            }
        }
        let m = fit_rows(
            BaselineKind::GaussianNb,
            &xs,
            &ys,
            &BaselineConfig::default(),
        )
        .unwrap();
        for x in &xs {
            assert!((m.predict(x).unwrap() - 0.25).abs() < 1e-9);
        }
        assert!((auroc_on(&m, &xs, &ys) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn nb_posteriors_are_normalized() {
        let (xs, ys) = two_clusters(50);
        let m = fit_rows(
            BaselineKind::GaussianNb,
            &xs,
            &ys,
            &BaselineConfig::default(),
        )
        .unwrap();
        for x in &xs {
            let p1 = m.predict(x).unwrap();
            let p0 = m.nb_negative_posterior(x).unwrap();
            assert!((p0 + p1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_one_neighbor_recovers_training_labels() {
        let (xs, ys) = two_clusters(40);
        let cfg = BaselineConfig {
            knn_k: 1,
            ..BaselineConfig::default()
        };
        let m = fit_rows(BaselineKind::Knn, &xs, &ys, &cfg).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(m.predict(x).unwrap(), f64::from(y));
        }
    }

    #[test]
    fn knn_fraction_and_tie_order() {
        let xs = vec![vec![0.0], vec![1.0], vec![-1.0], vec![3.0], vec![1.0]];
        let ys = vec![1, 1, 0, 0, 0];
        let cfg = BaselineConfig {
            knn_k: 3,
            ..BaselineConfig::default()
        };
        let m = fit_rows(BaselineKind::Knn, &xs, &ys, &cfg).unwrap();
        // Nearest to 0: index 0 (d=0), then indices 1, 2 and 4 tie at d=1;
        // the lower indices 1 and 2 win.
        assert!((m.predict(&[0.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let bad = BaselineConfig {
            knn_k: 6,
            ..BaselineConfig::default()
        };
        assert!(fit_rows(BaselineKind::Knn, &xs, &ys, &bad).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in [
            BaselineKind::Logistic,
            BaselineKind::GaussianNb,
            BaselineKind::Knn,
        ] {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("forest".parse::<BaselineKind>().is_err());
    }
}
