//! Shapley attribution of scores to touchpoint types with interventional
//! masking against an empirical background sample.
//!
//! `v(S)` is the mean over background rows `b` of `f(z)` where `z_j = x_j`
//! for `j` in `S` and `z_j = b_j` otherwise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{touchpoint_name, Dataset, NUM_TOUCHPOINTS};
use crate::error::{Error, Result};
use crate::mlp::{sigmoid, NetworkParams};
use crate::seeding;
use crate::trainer::EnsembleModel;
use crate::Scorer;

/// Largest coalition dimension the exact enumerator accepts.
pub const MAX_EXACT_DIMS: usize = 14;
pub const DEFAULT_BACKGROUND_SIZE: usize = 512;
pub const DEFAULT_N_PERM: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    rows: Vec<Vec<f64>>,
}

impl Background {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Argument("background needs at least one row".into()));
        };
        let dim = first.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: r.len(),
            });
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("background row".into()));
        }
        Ok(Self { rows })
    }

    /// Up to `size` training vectors drawn without replacement, kept in
    /// dataset order. The whole dataset is used when it is small enough.
    pub fn sample(data: &Dataset, size: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::Argument("background size must be >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut idx: Vec<usize> = (0..data.len()).collect();
        if size < data.len() {
            idx.shuffle(&mut seeding::rng(seed));
            idx.truncate(size);
            idx.sort_unstable();
        }
        Self::from_rows(
            idx.into_iter()
                .map(|i| data.examples[i].x.to_f64().to_vec())
                .collect(),
        )
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn mean_score(&self, f: &dyn Scorer) -> f64 {
        self.rows.iter().map(|b| f.score(b)).sum::<f64>() / self.rows.len() as f64
    }

    fn map(&self, g: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self {
            rows: self.rows.iter().map(|r| g(r)).collect(),
        }
    }
}

fn check_point(x: &[f64], background: &Background) -> Result<()> {
    if x.len() != background.dim() {
        return Err(Error::Dimension {
            expected: background.dim(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attributed point".into()));
    }
    Ok(())
}

/// Exact Shapley values for the features in `active_dims`, returned in that
/// order. Features outside `active_dims` are held at `x`.
pub fn shapley_exact(
    f: &dyn Scorer,
    x: &[f64],
    background: &Background,
    active_dims: &[usize],
) -> Result<Vec<f64>> {
    check_point(x, background)?;
    let d = active_dims.len();
    if d > MAX_EXACT_DIMS {
        return Err(Error::Argument(format!(
            "exact Shapley enumeration is capped at {MAX_EXACT_DIMS} dimensions (got {d}); \
             use the permutation estimator instead"
        )));
    }
    let mut seen = vec![false; x.len()];
    for &j in active_dims {
        if j >= x.len() || std::mem::replace(&mut seen[j], true) {
            return Err(Error::Argument(format!(
                "invalid or repeated active dimension {j}"
            )));
        }
    }
    if d == 0 {
        return Ok(Vec::new());
    }

    // v over every coalition, indexed by bitmask over active_dims.
    let mut values = vec![0.0; 1 << d];
    let mut z = vec![0.0; x.len()];
    for (mask, v) in values.iter_mut().enumerate() {
        let mut total = 0.0;
        for b in background.rows() {
            z.copy_from_slice(x);
            for (k, &j) in active_dims.iter().enumerate() {
                if mask & (1 << k) == 0 {
                    z[j] = b[j];
                }
            }
            total += f.score(&z);
        }
        *v = total / background.len() as f64;
    }

    // |S|!(d-|S|-1)!/d! = 1 / (d * C(d-1, |S|))
    let mut weights = vec![0.0; d];
    let mut binom = 1.0;
    for (s, w) in weights.iter_mut().enumerate() {
        *w = 1.0 / (d as f64 * binom);
        binom = binom * (d - 1 - s) as f64 / (s + 1) as f64;
    }

    let mut phi = vec![0.0; d];
    for (k, p) in phi.iter_mut().enumerate() {
        let bit = 1 << k;
        for mask in (0..1usize << d).filter(|m| m & bit == 0) {
            *p += weights[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
        }
    }
    Ok(phi)
}

/// Monte Carlo Shapley estimate with its sampling uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationEstimate {
    pub phi: Vec<f64>,
    /// Standard error of each coordinate; NaN with a single sample.
    pub std_err: Vec<f64>,
    /// Standard error of `sum(phi)`.
    pub efficiency_std_err: f64,
}

/// Evaluates a model along a masking walk: start at a background row, then
/// switch coordinates to the attributed point one at a time.
trait Walker: Sync {
    type State: Clone + Send + Sync;
    /// State for `z = b`, together with `f(b)`.
    fn begin(&self, b: &[f64]) -> (Self::State, f64);
    /// Sets `z_j` from `from` to `to` and returns the new `f(z)`.
    fn step(&self, state: &mut Self::State, j: usize, from: f64, to: f64) -> f64;
}

struct ScorerWalker<'a>(&'a dyn Scorer);

impl Walker for ScorerWalker<'_> {
    type State = Vec<f64>;

    fn begin(&self, b: &[f64]) -> (Vec<f64>, f64) {
        (b.to_vec(), self.0.score(b))
    }

    fn step(&self, z: &mut Vec<f64>, j: usize, _from: f64, to: f64) -> f64 {
        z[j] = to;
        self.0.score(z)
    }
}

/// Ensemble walker that keeps first-layer pre-activations up to date
/// incrementally instead of recomputing them after every switch.
struct EnsembleWalker<'a> {
    members: Vec<&'a NetworkParams>,
    dims: Vec<Vec<(usize, usize)>>,
    /// Offset of each member's first-layer block in the state vector.
    offsets: Vec<usize>,
    width: usize,
}

struct WalkState {
    pre: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
}

impl Clone for WalkState {
    fn clone(&self) -> Self {
        Self {
            pre: self.pre.clone(),
            cur: self.cur.clone(),
            next: self.next.clone(),
        }
    }

    fn clone_from(&mut self, other: &Self) {
        self.pre.clone_from(&other.pre);
    }
}

impl<'a> EnsembleWalker<'a> {
    fn new(ensemble: &'a EnsembleModel) -> Self {
        let members: Vec<&NetworkParams> = ensemble.members.iter().map(|m| &m.params).collect();
        let dims: Vec<Vec<(usize, usize)>> = members
            .iter()
            .map(|m| m.architecture().layer_dims())
            .collect();
        let mut offsets = Vec::with_capacity(members.len() + 1);
        let mut total = 0;
        for d in &dims {
            offsets.push(total);
            total += d[0].1;
        }
        offsets.push(total);
        let width = members
            .iter()
            .map(|m| m.architecture().max_width())
            .max()
            .unwrap_or(1);
        Self {
            members,
            dims,
            offsets,
            width,
        }
    }

    fn value(&self, st: &mut WalkState) -> f64 {
        let mut total = 0.0;
        for (k, m) in self.members.iter().enumerate() {
            let dims = &self.dims[k];
            let pre = &st.pre[self.offsets[k]..self.offsets[k + 1]];
            for (c, &p) in st.cur.iter_mut().zip(pre) {
                *c = sigmoid(p);
            }
            for (l, &(fan_in, fan_out)) in dims.iter().enumerate().skip(1) {
                let (w, b) = m.layer(l);
                let out = &mut st.next[..fan_out];
                out.copy_from_slice(b);
                for (i, &a) in st.cur[..fan_in].iter().enumerate() {
                    for (o, &wij) in out.iter_mut().zip(&w[i * fan_out..(i + 1) * fan_out]) {
                        *o += a * wij;
                    }
                }
                out.iter_mut().for_each(|z| *z = sigmoid(*z));
                std::mem::swap(&mut st.cur, &mut st.next);
            }
            total += st.cur[0];
        }
        total / self.members.len() as f64
    }
}

impl Walker for EnsembleWalker<'_> {
    type State = WalkState;

    fn begin(&self, b: &[f64]) -> (WalkState, f64) {
        let mut pre = vec![0.0; *self.offsets.last().unwrap()];
        for (k, m) in self.members.iter().enumerate() {
            let (w, bias) = m.layer(0);
            let fan_out = bias.len();
            let block = &mut pre[self.offsets[k]..self.offsets[k + 1]];
            block.copy_from_slice(bias);
            for (i, &a) in b.iter().enumerate() {
                for (o, &wij) in block.iter_mut().zip(&w[i * fan_out..(i + 1) * fan_out]) {
                    *o += a * wij;
                }
            }
        }
        let mut st = WalkState {
            pre,
            cur: vec![0.0; self.width],
            next: vec![0.0; self.width],
        };
        let v = self.value(&mut st);
        (st, v)
    }

    fn step(&self, st: &mut WalkState, j: usize, from: f64, to: f64) -> f64 {
        let delta = to - from;
        for (k, m) in self.members.iter().enumerate() {
            let (w, bias) = m.layer(0);
            let fan_out = bias.len();
            let block = &mut st.pre[self.offsets[k]..self.offsets[k + 1]];
            for (o, &wij) in block.iter_mut().zip(&w[j * fan_out..(j + 1) * fan_out]) {
                *o += delta * wij;
            }
        }
        self.value(st)
    }
}

/// Permutation-sampling estimator. Each of the `n_perm` sampled orderings is
/// walked together with its reverse, and every walk runs against all
/// background rows, so one sample is the mean of the two walks.
pub fn shapley_permutation(
    f: &dyn Scorer,
    x: &[f64],
    background: &Background,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationEstimate> {
    let walker = ScorerWalker(f);
    let starts = walk_starts(&walker, background);
    estimate(&walker, &starts, x, background, n_perm, seed)
}

fn walk_starts<W: Walker>(walker: &W, background: &Background) -> Vec<(W::State, f64)> {
    background.rows().iter().map(|b| walker.begin(b)).collect()
}

fn estimate<W: Walker>(
    walker: &W,
    starts: &[(W::State, f64)],
    x: &[f64],
    background: &Background,
    n_perm: usize,
    seed: u64,
) -> Result<PermutationEstimate> {
    check_point(x, background)?;
    if n_perm == 0 {
        return Err(Error::Argument("n_perm must be >= 1".into()));
    }
    let d = x.len();
    let mut rng = seeding::rng(seed);
    let mut order: Vec<usize> = (0..d).collect();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    let (mut eff_sum, mut eff_sq) = (0.0, 0.0);
    let mut sample = vec![0.0; d];
    let Some(mut state) = starts.first().map(|s| s.0.clone()) else {
        return Err(Error::Argument("background needs at least one row".into()));
    };

    for _ in 0..n_perm {
        order.shuffle(&mut rng);
        sample.iter_mut().for_each(|s| *s = 0.0);
        for reverse in [false, true] {
            for (b, (start, fb)) in background.rows().iter().zip(starts) {
                state.clone_from(start);
                let mut prev = *fb;
                let mut visit = |j: usize| {
                    // An unchanged coordinate contributes exactly zero.
                    if b[j] == x[j] {
                        return;
                    }
                    let cur = walker.step(&mut state, j, b[j], x[j]);
                    sample[j] += cur - prev;
                    prev = cur;
                };
                if reverse {
                    order.iter().rev().for_each(|&j| visit(j));
                } else {
                    order.iter().for_each(|&j| visit(j));
                }
            }
        }
        let scale = 2.0 * background.len() as f64;
        let mut total = 0.0;
        for ((s, acc), sq) in sample.iter_mut().zip(&mut sum).zip(&mut sum_sq) {
            *s /= scale;
            *acc += *s;
            *sq += *s * *s;
            total += *s;
        }
        eff_sum += total;
        eff_sq += total * total;
    }

    let n = n_perm as f64;
    let std_err_of = |s: f64, sq: f64| {
        if n_perm < 2 {
            return f64::NAN;
        }
        let mean = s / n;
        let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    };
    Ok(PermutationEstimate {
        phi: sum.iter().map(|s| s / n).collect(),
        std_err: sum
            .iter()
            .zip(&sum_sq)
            .map(|(&s, &q)| std_err_of(s, q))
            .collect(),
        efficiency_std_err: std_err_of(eff_sum, eff_sq),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub background_size: usize,
    pub n_perm: usize,
    pub seed: u64,
}

impl AttributionConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            background_size: DEFAULT_BACKGROUND_SIZE,
            n_perm: DEFAULT_N_PERM,
            seed,
        }
    }

    /// Seed of the `index`-th attributed user.
    pub fn user_seed(&self, index: usize) -> u64 {
        seeding::derive(self.seed, &[index as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyMatrix {
    /// One row of 31 values per user.
    pub values: Vec<Vec<f64>>,
    pub std_errs: Vec<Vec<f64>>,
    pub efficiency_std_errs: Vec<f64>,
    /// Model score of each attributed user.
    pub predictions: Vec<f64>,
    /// Mean model score over the background.
    pub base_value: f64,
    pub feature_codes: Vec<u8>,
    pub feature_names: Vec<String>,
}

impl ShapleyMatrix {
    pub fn n_users(&self) -> usize {
        self.values.len()
    }

    /// `sum(phi_i) - (f(x_i) - base_value)` for each row.
    pub fn efficiency_residuals(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.predictions)
            .map(|(row, fx)| row.iter().sum::<f64>() - (fx - self.base_value))
            .collect()
    }
}

fn all_codes() -> (Vec<u8>, Vec<String>) {
    let codes: Vec<u8> = (1..=NUM_TOUCHPOINTS as u8).collect();
    let names = codes
        .iter()
        .map(|&c| touchpoint_name(c).unwrap_or("unknown").to_string())
        .collect();
    (codes, names)
}

/// Attributes the ensemble score of every example in `data`.
///
/// `background` holds raw count vectors. When all members share an
/// elementwise input transform, masking commutes with it, so inputs and
/// background are transformed once up front.
pub fn attribute_dataset(
    ensemble: &EnsembleModel,
    data: &Dataset,
    background: &Background,
    config: &AttributionConfig,
) -> Result<ShapleyMatrix> {
    if background.is_empty() {
        return Err(Error::Argument("background needs at least one row".into()));
    }
    if background.dim() != NUM_TOUCHPOINTS {
        return Err(Error::Dimension {
            expected: NUM_TOUCHPOINTS,
            got: background.dim(),
        });
    }
    let raw: Vec<Vec<f64>> = data
        .examples
        .iter()
        .map(|e| e.x.to_f64().to_vec())
        .collect();

    let (rows, base_value) = match ensemble.shared_transform() {
        Some(t) => {
            let inputs: Vec<Vec<f64>> = raw.iter().map(|x| t.transform(x)).collect();
            let bg = background.map(|b| t.transform(b));
            let scorer = |z: &[f64]| ensemble.score_transformed(z);
            let rows = attribute_rows(
                &EnsembleWalker::new(ensemble),
                &scorer,
                &inputs,
                &bg,
                config,
            )?;
            (rows, bg.mean_score(&scorer))
        }
        None => {
            let scorer = |z: &[f64]| ensemble.score(z);
            let rows = attribute_rows(&ScorerWalker(&scorer), &scorer, &raw, background, config)?;
            (rows, background.mean_score(&scorer))
        }
    };

    let (feature_codes, feature_names) = all_codes();
    let mut out = ShapleyMatrix {
        values: Vec::with_capacity(rows.len()),
        std_errs: Vec::with_capacity(rows.len()),
        efficiency_std_errs: Vec::with_capacity(rows.len()),
        predictions: Vec::with_capacity(rows.len()),
        base_value,
        feature_codes,
        feature_names,
    };
    for (est, fx) in rows {
        out.values.push(est.phi);
        out.std_errs.push(est.std_err);
        out.efficiency_std_errs.push(est.efficiency_std_err);
        out.predictions.push(fx);
    }
    Ok(out)
}

fn attribute_rows<W: Walker>(
    walker: &W,
    scorer: &dyn Scorer,
    inputs: &[Vec<f64>],
    background: &Background,
    config: &AttributionConfig,
) -> Result<Vec<(PermutationEstimate, f64)>> {
    let starts = walk_starts(walker, background);
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let est = estimate(
                walker,
                &starts,
                x,
                background,
                config.n_perm,
                config.user_seed(i),
            )?;
            Ok((est, scorer.score(x)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub code: u8,
    pub name: String,
    pub mean_abs_phi: f64,
}

/// Features by decreasing total |phi|; ties keep the lower code first.
pub fn rank_features(matrix: &ShapleyMatrix) -> Result<Vec<FeatureImportance>> {
    if matrix.values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = matrix.feature_codes.len();
    let mut totals = vec![0.0; d];
    for row in &matrix.values {
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: row.len(),
            });
        }
        for (t, v) in totals.iter_mut().zip(row) {
            *t += v.abs();
        }
    }
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| {
        totals[b]
            .total_cmp(&totals[a])
            .then(matrix.feature_codes[a].cmp(&matrix.feature_codes[b]))
    });
    let n = matrix.values.len() as f64;
    Ok(idx
        .into_iter()
        .map(|j| FeatureImportance {
            code: matrix.feature_codes[j],
            name: matrix.feature_names[j].clone(),
            mean_abs_phi: totals[j] / n,
        })
        .collect())
}

/// `user_idx,code,feature_name,count,phi`, grouped by feature in rank order.
pub fn export_beeswarm(matrix: &ShapleyMatrix, dataset: &Dataset, path: &Path) -> Result<()> {
    if matrix.n_users() != dataset.len() {
        return Err(Error::Dimension {
            expected: dataset.len(),
            got: matrix.n_users(),
        });
    }
    let ranking = rank_features(matrix)?;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "user_idx,code,feature_name,count,phi")?;
    for feat in &ranking {
        let j = matrix
            .feature_codes
            .iter()
            .position(|&c| c == feat.code)
            .expect("ranked code comes from the matrix");
        for (i, (row, ex)) in matrix.values.iter().zip(&dataset.examples).enumerate() {
            writeln!(
                out,
                "{i},{},{},{},{}",
                feat.code,
                feat.name,
                ex.x.count(feat.code),
                row[j]
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `rank,code,feature_name,mean_abs_phi` with ranks starting at 1.
pub fn write_importance(path: &Path, ranking: &[FeatureImportance]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "rank,code,feature_name,mean_abs_phi")?;
    for (r, f) in ranking.iter().enumerate() {
        writeln!(out, "{},{},{},{}", r + 1, f.code, f.name, f.mean_abs_phi)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg(rows: &[&[f64]]) -> Background {
        Background::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn product_game_splits_evenly() {
        let f = |z: &[f64]| z.iter().product::<f64>();
        let phi =
            shapley_exact(&f, &[1.0, 1.0, 1.0], &bg(&[&[0.0, 0.0, 0.0]]), &[0, 1, 2]).unwrap();
        for p in phi {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_closed_form() {
        let w = [2.0, -1.0, 0.5];
        let f = move |z: &[f64]| z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let b = bg(&[&[1.0, 2.0, 3.0], &[3.0, 0.0, -1.0]]);
        let x = [0.5, 4.0, 2.0];
        let phi = shapley_exact(&f, &x, &b, &[0, 1, 2]).unwrap();
        let means = [2.0, 1.0, 1.0];
        for j in 0..3 {
            assert!((phi[j] - w[j] * (x[j] - means[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_cap_and_dims() {
        let f = |z: &[f64]| z[0];
        let b = Background::from_rows(vec![vec![0.0; 20]]).unwrap();
        let dims: Vec<usize> = (0..15).collect();
        let err = shapley_exact(&f, &[0.0; 20], &b, &dims).unwrap_err();
        assert!(err.to_string().contains("permutation"));
        assert!(shapley_exact(&f, &[0.0; 20], &b, &[3, 3]).is_err());
        assert!(shapley_exact(&f, &[0.0; 19], &b, &[0]).is_err());
    }

    #[test]
    fn permutation_dummy_is_exactly_zero() {
        let f = |z: &[f64]| (z[0] * z[2]).tanh() + z[3];
        let b = bg(&[&[0.3, 9.0, -1.0, 2.0], &[1.5, -4.0, 0.2, 0.0]]);
        let est = shapley_permutation(&f, &[1.0, 5.0, 2.0, -1.0], &b, 25, 3).unwrap();
        assert_eq!(est.phi[1], 0.0);
        assert_eq!(est.std_err[1], 0.0);
    }

    #[test]
    fn permutation_is_efficient_and_deterministic() {
        let f = |z: &[f64]| (z[0] - z[1] * z[2]).sin();
        let b = bg(&[&[0.1, 0.2, 0.3], &[1.0, -1.0, 0.5]]);
        let x = [0.7, 0.4, -0.2];
        let a = shapley_permutation(&f, &x, &b, 10, 9).unwrap();
        assert_eq!(a, shapley_permutation(&f, &x, &b, 10, 9).unwrap());
        let total: f64 = a.phi.iter().sum();
        assert!((total - (f(&x) - b.mean_score(&f))).abs() < 1e-12);
        assert!(shapley_permutation(&f, &x, &b, 0, 9).is_err());
        assert!(shapley_permutation(&f, &x, &b, 1, 9).unwrap().std_err[0].is_nan());
    }

    fn matrix(values: Vec<Vec<f64>>) -> ShapleyMatrix {
        let (feature_codes, feature_names) = all_codes();
        let n = values.len();
        ShapleyMatrix {
            std_errs: values.iter().map(|r| vec![0.0; r.len()]).collect(),
            values,
            efficiency_std_errs: vec![0.0; n],
            predictions: vec![0.5; n],
            base_value: 0.5,
            feature_codes,
            feature_names,
        }
    }

    #[test]
    fn ranking_orders_and_ties() {
        let zero = rank_features(&matrix(vec![vec![0.0; 31]; 2])).unwrap();
        assert!(zero.iter().map(|f| f.code).eq(1..=31));
        let mut row = vec![0.1; 31];
        row[4] = -0.2;
        let r = rank_features(&matrix(vec![row])).unwrap();
        assert_eq!(r[0].code, 5);
        assert!((r[0].mean_abs_phi - 0.2).abs() < 1e-15);
        assert_eq!(r[1].code, 1);
        assert!(rank_features(&matrix(vec![])).is_err());
    }
}
