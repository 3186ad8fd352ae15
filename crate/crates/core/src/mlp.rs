//! Fully connected sigmoid network with a single sigmoid output.
//!
//! Parameters live in one flat buffer, layer by layer: the `fan_in x fan_out`
//! weight matrix (row-major, so `w[i * fan_out + j]` connects input `i` to
//! unit `j`) followed by the `fan_out` biases. Gradients and Adam moments
//! share the layout, which keeps the optimizer a plain slice loop.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Probability clamp used inside the cross-entropy.
pub const PROB_EPS: f64 = 1e-12;

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: crate::datamodel::NUM_TOUCHPOINTS,
            hidden: vec![10, 10, 10],
            output_dim: 1,
        }
    }
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden,
            output_dim: 1,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim != 1 {
            return Err(Error::Argument(format!(
                "only a single output unit is supported, got {}",
                self.output_dim
            )));
        }
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Argument(format!(
                "layer widths must be >= 1: {} {:?}",
                self.input_dim, self.hidden
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn max_width(&self) -> usize {
        self.hidden
            .iter()
            .copied()
            .chain([self.input_dim, self.output_dim])
            .max()
            .unwrap_or(1)
    }
}

/// Number of trainable weights and biases.
pub fn param_count(arch: &Architecture) -> usize {
    arch.layer_dims()
        .iter()
        .map(|&(fan_in, fan_out)| fan_in * fan_out + fan_out)
        .sum()
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerSlot {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

fn layer_slots(arch: &Architecture) -> Vec<LayerSlot> {
    let mut offset = 0;
    arch.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let slot = LayerSlot {
                fan_in,
                fan_out,
                offset,
            };
            offset += fan_in * fan_out + fan_out;
            slot
        })
        .collect()
}

/// Weights and biases of a network (or anything shaped like them, such as
/// gradients).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct NetworkParams {
    arch: Architecture,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    architecture: Architecture,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<NetworkParams> for ParamsRepr {
    fn from(p: NetworkParams) -> Self {
        let slots = layer_slots(&p.arch);
        Self {
            weights: slots.iter().map(|s| p.data[s.weights()].to_vec()).collect(),
            biases: slots.iter().map(|s| p.data[s.biases()].to_vec()).collect(),
            architecture: p.arch,
        }
    }
}

impl TryFrom<ParamsRepr> for NetworkParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        r.architecture.validate()?;
        let slots = layer_slots(&r.architecture);
        if r.weights.len() != slots.len() || r.biases.len() != slots.len() {
            return Err(Error::Validation(format!(
                "expected {} layers, found {} weight and {} bias arrays",
                slots.len(),
                r.weights.len(),
                r.biases.len()
            )));
        }
        let mut data = Vec::with_capacity(param_count(&r.architecture));
        for ((slot, w), b) in slots.iter().zip(&r.weights).zip(&r.biases) {
            if w.len() != slot.fan_in * slot.fan_out || b.len() != slot.fan_out {
                return Err(Error::Validation(format!(
                    "layer {}x{} has {} weights and {} biases",
                    slot.fan_in,
                    slot.fan_out,
                    w.len(),
                    b.len()
                )));
            }
            data.extend(w);
            data.extend(b);
        }
        let params = NetworkParams {
            arch: r.architecture,
            data,
        };
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(params)
    }
}

impl NetworkParams {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            arch: arch.clone(),
            data: vec![0.0; param_count(arch)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut params = Self::zeros(arch);
        let mut rng = seeding::rng(seed);
        for slot in layer_slots(arch) {
            let bound = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for w in &mut params.data[slot.weights()] {
                *w = dist.sample(&mut rng);
            }
        }
        params
    }

    /// Builds parameters from per-layer weight matrices (row-major
    /// `fan_in x fan_out`) and bias vectors.
    pub fn from_layers(
        arch: &Architecture,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self> {
        ParamsRepr {
            architecture: arch.clone(),
            weights,
            biases,
        }
        .try_into()
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Weight matrix and bias vector of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let slot = layer_slots(&self.arch)[l];
        (&self.data[slot.weights()], &self.data[slot.biases()])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.arch.input_dim {
            return Err(Error::Dimension {
                expected: self.arch.input_dim,
                got: x.len(),
            });
        }
        Ok(self.score(x))
    }

    /// Forward pass without the dimension check.
    pub fn score(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arch.input_dim);
        let width = self.arch.max_width();
        let mut cur = vec![0.0; width];
        let mut next = vec![0.0; width];
        cur[..x.len()].copy_from_slice(x);
        let mut offset = 0;
        for (fan_in, fan_out) in self.arch.layer_dims() {
            let w = &self.data[offset..offset + fan_in * fan_out];
            let b = &self.data[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            affine(&cur[..fan_in], w, b, &mut next[..fan_out]);
            next[..fan_out].iter_mut().for_each(|z| *z = sigmoid(*z));
            std::mem::swap(&mut cur, &mut next);
            offset += fan_in * fan_out + fan_out;
        }
        cur[0]
    }
}

#[inline]
fn affine(input: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let fan_out = out.len();
    out.copy_from_slice(b);
    for (i, &a) in input.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &w[i * fan_out..(i + 1) * fan_out];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += a * wij;
        }
    }
}

/// Row-major inputs with their 0/1 targets.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    inputs: &'a [f64],
    targets: &'a [f64],
    dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], targets: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != targets.len() * dim {
            return Err(Error::Dimension {
                expected: targets.len() * dim,
                got: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }
}

/// Mean binary cross-entropy (probabilities clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`) and its exact gradient.
pub fn loss_and_grad(params: &NetworkParams, batch: &Batch<'_>) -> Result<(f64, NetworkParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let arch = &params.arch;
    if batch.dim() != arch.input_dim {
        return Err(Error::Dimension {
            expected: arch.input_dim,
            got: batch.dim(),
        });
    }
    let slots = layer_slots(arch);
    let mut grad = NetworkParams::zeros(arch);
    let n = batch.len() as f64;

    // acts[l] is the input to layer l; acts[L] holds the output.
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(slots.len() + 1);
    acts.push(vec![0.0; arch.input_dim]);
    acts.extend(slots.iter().map(|s| vec![0.0; s.fan_out]));
    let width = arch.max_width();
    let mut delta = vec![0.0; width];
    let mut prev_delta = vec![0.0; width];

    let mut loss = 0.0;
    for i in 0..batch.len() {
        acts[0].copy_from_slice(batch.row(i));
        for (l, slot) in slots.iter().enumerate() {
            let (input, output) = acts.split_at_mut(l + 1);
            let out = &mut output[0];
            affine(
                &input[l],
                &params.data[slot.weights()],
                &params.data[slot.biases()],
                out,
            );
            out.iter_mut().for_each(|z| *z = sigmoid(*z));
        }

        let p = acts[slots.len()][0];
        let y = batch.target(i);
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        loss -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();

        // d loss / d pre-activation of the output unit; zero where the clamp
        // is active.
        delta[0] = if p > PROB_EPS && p < 1.0 - PROB_EPS {
            (p - y) / n
        } else {
            0.0
        };

        for (l, slot) in slots.iter().enumerate().rev() {
            let d = &delta[..slot.fan_out];
            let input = &acts[l];
            let (gw, gb) =
                grad.data[slot.offset..slot.biases().end].split_at_mut(slot.fan_in * slot.fan_out);
            for (g, &dj) in gb.iter_mut().zip(d) {
                *g += dj;
            }
            for (row, &a) in gw.chunks_exact_mut(slot.fan_out).zip(input) {
                if a == 0.0 {
                    continue;
                }
                for (g, &dj) in row.iter_mut().zip(d) {
                    *g += a * dj;
                }
            }
            if l > 0 {
                let w = &params.data[slot.weights()];
                for (k, (pd, &a)) in prev_delta[..slot.fan_in].iter_mut().zip(input).enumerate() {
                    let row = &w[k * slot.fan_out..(k + 1) * slot.fan_out];
                    let back: f64 = row.iter().zip(d).map(|(wkj, dj)| wkj * dj).sum();
                    *pd = back * a * (1.0 - a);
                }
                std::mem::swap(&mut delta, &mut prev_delta);
            }
        }
    }
    Ok((loss / n, grad))
}

/// Loss only.
pub fn loss(params: &NetworkParams, batch: &Batch<'_>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for i in 0..batch.len() {
        let p = params
            .forward(batch.row(i))?
            .clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = batch.target(i);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {i} is {} at Adam step {}",
                grads[i],
                self.t + 1
            )));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step_params(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        if params.arch != grads.arch {
            return Err(Error::Dimension {
                expected: params.len(),
                got: grads.len(),
            });
        }
        self.step(&mut params.data, &grads.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_parameters() {
        assert_eq!(param_count(&Architecture::default()), 551);
        assert_eq!(param_count(&Architecture::new(31, vec![]).unwrap()), 32);
        assert_eq!(param_count(&Architecture::new(2, vec![3]).unwrap()), 13);
    }

    #[test]
    fn rejects_zero_width() {
        assert!(Architecture::new(3, vec![4, 0]).is_err());
        assert!(Architecture::new(0, vec![]).is_err());
    }

    #[test]
    fn init_is_seeded_glorot() {
        let arch = Architecture::default();
        let a = NetworkParams::init(&arch, 5);
        assert_eq!(a, NetworkParams::init(&arch, 5));
        assert_ne!(a, NetworkParams::init(&arch, 6));
        let (w1, b1) = a.layer(0);
        assert_eq!(w1.len(), 310);
        let bound = (6.0f64 / 41.0).sqrt();
        assert!(w1.iter().all(|w| w.abs() <= bound));
        for l in 0..4 {
            assert!(a.layer(l).1.iter().all(|&b| b == 0.0));
        }
        assert_eq!(b1.len(), 10);
    }

    #[test]
    fn zero_params_score_one_half() {
        let p = NetworkParams::zeros(&Architecture::default());
        assert_eq!(p.forward(&[3.0; 31]).unwrap(), 0.5);
        assert!(matches!(
            p.forward(&[0.0; 30]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn one_dimensional_chain() {
        let arch = Architecture::new(1, vec![1]).unwrap();
        let p = NetworkParams::from_layers(
            &arch,
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        let out = p.forward(&[0.0]).unwrap();
        assert!((out - 0.622_459_331_201_854_6).abs() < 1e-12);
    }

    #[test]
    fn zero_params_loss_is_ln2() {
        let p = NetworkParams::zeros(&Architecture::default());
        let xs = vec![1.0; 31 * 3];
        for ys in [[0.0, 0.0, 1.0], [1.0, 1.0, 1.0]] {
            let batch = Batch::new(&xs, &ys, 31).unwrap();
            let (l, _) = loss_and_grad(&p, &batch).unwrap();
            assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn confident_correct_prediction_has_small_loss() {
        let arch = Architecture::new(1, vec![]).unwrap();
        let p = NetworkParams::from_layers(&arch, vec![vec![40.0]], vec![vec![0.0]]).unwrap();
        let batch = Batch::new(&[1.0], &[1.0], 1).unwrap();
        let (l, g) = loss_and_grad(&p, &batch).unwrap();
        assert!(l < 1e-12);
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empty_batch_errors() {
        let p = NetworkParams::zeros(&Architecture::default());
        let batch = Batch::new(&[], &[], 31).unwrap();
        assert!(loss_and_grad(&p, &batch).is_err());
    }

    #[test]
    fn adam_first_step() {
        let mut state = AdamState::new(1, AdamConfig::default());
        let mut theta = [0.0];
        state.step(&mut theta, &[2.0]).unwrap();
        assert!((theta[0] + 1e-3).abs() < 1e-9);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut theta = [1.0, -2.0, 0.5];
        state.step(&mut theta, &[0.0; 3]).unwrap();
        assert_eq!(theta, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut state = AdamState::new(2, AdamConfig::default());
        let mut theta = [0.0, 0.0];
        assert!(matches!(
            state.step(&mut theta, &[0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            state.step(&mut theta, &[0.0]),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(theta, [0.0, 0.0]);
        assert_eq!(state.t, 0);
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let p = NetworkParams::init(&Architecture::default(), 99);
        let text = serde_json::to_string(&p).unwrap();
        let back: NetworkParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        assert!(p
            .as_slice()
            .iter()
            .zip(back.as_slice())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn json_rejects_wrong_shapes() {
        let text = r#"{"architecture":{"input_dim":2,"hidden":[],"output_dim":1},
                       "weights":[[1.0]],"biases":[[0.0]]}"#;
        assert!(serde_json::from_str::<NetworkParams>(text).is_err());
    }
}
