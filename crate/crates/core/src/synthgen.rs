//! Synthetic touchpoint populations with a planted purchase mechanism.
//!
//! Each user gets a lognormal activity scale (mean one) and, per code, a
//! lognormal affinity (mean one). Event counts per code are Poisson with
//! mean `rate * scale * affinity * horizon`, with days uniform over the
//! horizon, which is the same law as independent daily Poisson counts.
//!
//! The purchase label is Bernoulli with probability
//! `sigmoid(bias + sum_j w_j s_j + sum_(a,b) g_ab (s_a - m_a)(s_b - m_b))`
//! where `s_j = log(1 + count_j)` over the whole horizon, or over
//! exponentially decayed counts before a per-user anchor day when a signal
//! half-life is configured. The bias is bisected to hit the target buyer
//! rate. Buyers purchase on their anchor day and lose later events.
//!
//! Post-purchase truncation removes events, so by default the generator
//! runs twice and inflates the per-code rates by the observed retention of
//! the first pass. Observed totals then match `rate * n_users * horizon`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    self, TouchpointEvent, UserRecord, DAYS_PER_MONTH, NUM_TOUCHPOINTS, REFERENCE_COUNTS,
    REFERENCE_USERS,
};
use crate::error::{Error, Result};
use crate::mlp::sigmoid;
use crate::seeding;

pub const GROUND_TRUTH_FILE: &str = "groundtruth.json";

const BUYER_RATE_TOLERANCE: f64 = 0.005;
const MAX_BISECTIONS: usize = 200;

/// Events per user-day for each code.
pub fn calibrate_rates(overall_counts: &[u64], n_users: usize, months: f64) -> Result<Vec<f64>> {
    if n_users == 0 || months.is_nan() || months <= 0.0 {
        return Err(Error::Argument(format!(
            "need n_users > 0 and months > 0, got {n_users} and {months}"
        )));
    }
    let user_days = n_users as f64 * months * DAYS_PER_MONTH;
    Ok(overall_counts
        .iter()
        .map(|&c| c as f64 / user_days)
        .collect())
}

/// Rates matching the reference population's overall counts.
pub fn reference_rates() -> Vec<f64> {
    calibrate_rates(&REFERENCE_COUNTS, REFERENCE_USERS, 40.0).expect("positive constants")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: u8,
    pub b: u8,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub horizon_days: u32,
    pub rate_per_user_day: Vec<f64>,
    pub target_buyer_rate: f64,
    /// Weights on `log(1 + count)`, index `code - 1`.
    pub effect_weights: Vec<f64>,
    /// `None` tunes the bias to the target buyer rate.
    pub effect_bias: Option<f64>,
    pub interactions: Vec<Interaction>,
    /// Spread of the per-user activity scale.
    pub heterogeneity_sigma: f64,
    /// Spread of the per-user, per-code affinity.
    pub code_sigma: f64,
    /// When set, the label depends on counts before the anchor day decayed
    /// with this half-life instead of whole-horizon counts.
    pub signal_half_life_days: Option<f64>,
    pub compensate_truncation: bool,
    pub seed: u64,
}

/// Weights of the reference scenario: positive and negative effects on
/// high-volume codes, zero on every code averaging under one event per user.
pub fn default_effect_weights() -> Vec<f64> {
    let mut w = vec![0.0; NUM_TOUCHPOINTS];
    for (code, weight) in [
        (9, 2.0),
        (10, 1.2),
        (11, -1.5),
        (12, -1.2),
        (13, 1.2),
        (14, -1.5),
        (16, 2.2),
        (18, 1.2),
        (19, 1.5),
        (20, -1.2),
        (21, 1.5),
        (22, -2.2),
        (23, 1.5),
        (24, -1.5),
        (25, 1.5),
        (26, 2.5),
        (31, 1.2),
    ] {
        w[code - 1] = weight;
    }
    w
}

/// Codes with zero weight in [`default_effect_weights`].
pub fn default_zero_codes() -> Vec<u8> {
    default_effect_weights()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w == 0.0)
        .map(|(i, _)| i as u8 + 1)
        .collect()
}

impl GeneratorConfig {
    /// Reference rates and buyer rate with the default planted weights.
    pub fn reference(n_users: usize, months: f64, seed: u64) -> Self {
        Self {
            n_users,
            horizon_days: (months * DAYS_PER_MONTH).round() as u32,
            rate_per_user_day: reference_rates(),
            target_buyer_rate: 0.118,
            effect_weights: default_effect_weights(),
            effect_bias: None,
            interactions: Vec::new(),
            heterogeneity_sigma: 0.5,
            code_sigma: 0.8,
            signal_half_life_days: None,
            compensate_truncation: true,
            seed,
        }
    }

    /// Signal carried only by pairwise products of centered log counts.
    pub fn interaction(n_users: usize, months: f64, seed: u64) -> Self {
        let pairs = [
            (9, 22, 3.2),
            (11, 18, -3.2),
            (20, 24, 3.2),
            (13, 25, -3.2),
            (10, 26, 3.2),
            (16, 19, -3.2),
        ];
        Self {
            effect_weights: vec![0.0; NUM_TOUCHPOINTS],
            // A shared user scale would correlate every product with the
            // marginal counts.
            heterogeneity_sigma: 0.0,
            interactions: pairs
                .iter()
                .map(|&(a, b, weight)| Interaction { a, b, weight })
                .collect(),
            ..Self::reference(n_users, months, seed)
        }
    }

    /// Default weights applied to counts decayed towards the anchor day.
    pub fn decaying(n_users: usize, months: f64, seed: u64) -> Self {
        Self {
            signal_half_life_days: Some(120.0),
            ..Self::reference(n_users, months, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.n_users == 0 || self.horizon_days == 0 {
            return bad("n_users and horizon_days must be positive".into());
        }
        if self.rate_per_user_day.len() != NUM_TOUCHPOINTS
            || self.effect_weights.len() != NUM_TOUCHPOINTS
        {
            return bad(format!("rates and weights need {NUM_TOUCHPOINTS} entries"));
        }
        if self
            .rate_per_user_day
            .iter()
            .any(|r| !(r.is_finite() && *r >= 0.0))
        {
            return bad("rates must be finite and non-negative".into());
        }
        if !(self.target_buyer_rate > 0.0 && self.target_buyer_rate < 1.0) {
            return bad(format!(
                "target buyer rate {} not in (0,1)",
                self.target_buyer_rate
            ));
        }
        if self.effect_weights.iter().any(|w| !w.is_finite())
            || self.effect_bias.is_some_and(|b| !b.is_finite())
        {
            return bad("effect weights must be finite".into());
        }
        for s in [self.heterogeneity_sigma, self.code_sigma] {
            if !(s.is_finite() && s >= 0.0) {
                return bad(format!("heterogeneity spread must be >= 0, got {s}"));
            }
        }
        if self
            .signal_half_life_days
            .is_some_and(|h| !(h.is_finite() && h > 0.0))
        {
            return bad("signal half-life must be positive".into());
        }
        for i in &self.interactions {
            if datamodel::touchpoint_name(i.a).is_none()
                || datamodel::touchpoint_name(i.b).is_none()
            {
                return bad(format!("interaction codes out of range: {} {}", i.a, i.b));
            }
            if !i.weight.is_finite() {
                return bad("interaction weight must be finite".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub n_users: usize,
    pub horizon_days: u32,
    pub effect_weights: Vec<f64>,
    pub effect_bias: f64,
    pub interactions: Vec<Interaction>,
    /// Means of the signal features used to center interaction terms.
    pub signal_means: Vec<f64>,
    pub signal_half_life_days: Option<f64>,
    pub target_buyer_rate: f64,
    pub realized_buyer_rate: f64,
    /// Rates actually simulated, after truncation compensation.
    pub simulated_rates: Vec<f64>,
    pub user_scales: Vec<f64>,
}

struct UserDraw {
    events: Vec<TouchpointEvent>,
    signal: [f64; NUM_TOUCHPOINTS],
    uniform: f64,
    anchor: u32,
    scale: f64,
}

fn lognormal_mean_one(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z - 0.5 * sigma * sigma).exp()
}

fn draw_user(config: &GeneratorConfig, rates: &[f64], index: usize) -> UserDraw {
    let key = index as u64;
    let horizon = config.horizon_days;

    let mut rng = seeding::rng_for(config.seed, &[key, 0]);
    let scale = lognormal_mean_one(&mut rng, config.heterogeneity_sigma);
    let affinity: Vec<f64> = (0..NUM_TOUCHPOINTS)
        .map(|_| lognormal_mean_one(&mut rng, config.code_sigma))
        .collect();

    let anchor = seeding::rng_for(config.seed, &[key, 3]).random_range(0..horizon);
    let uniform: f64 = seeding::rng_for(config.seed, &[key, 2]).random();

    let mut rng = seeding::rng_for(config.seed, &[key, 1]);
    let mut events = Vec::new();
    let mut counts = [0u64; NUM_TOUCHPOINTS];
    for (j, (&rate, &aff)) in rates.iter().zip(&affinity).enumerate() {
        let mean = rate * scale * aff * f64::from(horizon);
        if mean <= 0.0 {
            continue;
        }
        let n = Poisson::new(mean).map_or(0.0, |p| p.sample(&mut rng)) as u64;
        counts[j] = n;
        for _ in 0..n {
            events.push(TouchpointEvent {
                t_day: rng.random_range(0..horizon),
                code: j as u8 + 1,
            });
        }
    }
    events.sort_unstable();

    let mut signal = [0.0; NUM_TOUCHPOINTS];
    match config.signal_half_life_days {
        None => {
            for (s, &c) in signal.iter_mut().zip(&counts) {
                *s = (c as f64).ln_1p();
            }
        }
        Some(half_life) => {
            let decay = std::f64::consts::LN_2 / half_life;
            for e in events.iter().take_while(|e| e.t_day <= anchor) {
                signal[e.index()] += (-decay * f64::from(anchor - e.t_day)).exp();
            }
            signal.iter_mut().for_each(|s| *s = s.ln_1p());
        }
    }

    UserDraw {
        events,
        signal,
        uniform,
        anchor,
        scale,
    }
}

fn buyer_rate(uniforms: &[f64], scores: &[f64], bias: f64) -> f64 {
    let buyers = uniforms
        .iter()
        .zip(scores)
        .filter(|(&u, &s)| u < sigmoid(bias + s))
        .count();
    buyers as f64 / uniforms.len() as f64
}

/// Bias whose realized buyer rate is within tolerance of `target`.
fn tune_bias(uniforms: &[f64], scores: &[f64], target: f64) -> Result<f64> {
    let spread = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let (mut lo, mut hi) = (-(spread + 50.0), spread + 50.0);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let rate = buyer_rate(uniforms, scores, mid);
        let gap = (rate - target).abs();
        if gap < best.0 {
            best = (gap, mid);
        }
        if gap < 1e-4 || hi - lo < 1e-12 {
            break;
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > BUYER_RATE_TOLERANCE {
        return Err(Error::Calibration(format!(
            "closest buyer rate is {:.4} away from target {target} after {MAX_BISECTIONS} bisection steps",
            best.0
        )));
    }
    Ok(best.1)
}

struct Population {
    records: Vec<UserRecord>,
    truth: GroundTruth,
    generated: [u64; NUM_TOUCHPOINTS],
    observed: [u64; NUM_TOUCHPOINTS],
}

fn simulate(config: &GeneratorConfig, rates: &[f64]) -> Result<Population> {
    let draws: Vec<UserDraw> = (0..config.n_users)
        .into_par_iter()
        .map(|i| draw_user(config, rates, i))
        .collect();

    let n = draws.len() as f64;
    let mut means = vec![0.0; NUM_TOUCHPOINTS];
    for d in &draws {
        for (m, s) in means.iter_mut().zip(&d.signal) {
            *m += s / n;
        }
    }

    let scores: Vec<f64> = draws
        .iter()
        .map(|d| {
            let linear: f64 = config
                .effect_weights
                .iter()
                .zip(&d.signal)
                .map(|(w, s)| w * s)
                .sum();
            let pairs: f64 = config
                .interactions
                .iter()
                .map(|it| {
                    let (a, b) = (it.a as usize - 1, it.b as usize - 1);
                    it.weight * (d.signal[a] - means[a]) * (d.signal[b] - means[b])
                })
                .sum();
            linear + pairs
        })
        .collect();
    let uniforms: Vec<f64> = draws.iter().map(|d| d.uniform).collect();

    let bias = match config.effect_bias {
        Some(b) => b,
        None => tune_bias(&uniforms, &scores, config.target_buyer_rate)?,
    };

    let mut generated = [0u64; NUM_TOUCHPOINTS];
    let mut observed = [0u64; NUM_TOUCHPOINTS];
    let mut buyers = 0usize;
    let mut user_scales = Vec::with_capacity(draws.len());
    let mut records = Vec::with_capacity(draws.len());
    for (i, (d, s)) in draws.into_iter().zip(&scores).enumerate() {
        for e in &d.events {
            generated[e.index()] += 1;
        }
        let purchase = (d.uniform < sigmoid(bias + s)).then_some(d.anchor);
        buyers += usize::from(purchase.is_some());
        user_scales.push(d.scale);
        let rec = UserRecord::new(user_id(i), d.events, purchase);
        for e in &rec.events {
            observed[e.index()] += 1;
        }
        records.push(rec);
    }

    let truth = GroundTruth {
        seed: config.seed,
        n_users: config.n_users,
        horizon_days: config.horizon_days,
        effect_weights: config.effect_weights.clone(),
        effect_bias: bias,
        interactions: config.interactions.clone(),
        signal_means: means,
        signal_half_life_days: config.signal_half_life_days,
        target_buyer_rate: config.target_buyer_rate,
        realized_buyer_rate: buyers as f64 / n,
        simulated_rates: rates.to_vec(),
        user_scales,
    };
    Ok(Population {
        records,
        truth,
        generated,
        observed,
    })
}

pub fn user_id(index: usize) -> String {
    format!("u{index:07}")
}

/// Generates a population and its ground truth. Deterministic in the
/// config, independent of the thread count.
pub fn generate(config: &GeneratorConfig) -> Result<(Vec<UserRecord>, GroundTruth)> {
    config.validate()?;
    let mut pop = simulate(config, &config.rate_per_user_day)?;
    if config.compensate_truncation {
        let rates: Vec<f64> = config
            .rate_per_user_day
            .iter()
            .enumerate()
            .map(|(j, &r)| match (pop.generated[j], pop.observed[j]) {
                (g, o) if g > 0 && o > 0 => r * g as f64 / o as f64,
                _ => r,
            })
            .collect();
        pop = simulate(config, &rates)?;
    }
    Ok((pop.records, pop.truth))
}

/// Writes `events.csv`, `purchases.csv` and `groundtruth.json`.
pub fn write_population(dir: &Path, records: &[UserRecord], truth: &GroundTruth) -> Result<()> {
    datamodel::write_dir(dir, records)?;
    let file = std::fs::File::create(dir.join(GROUND_TRUTH_FILE))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), truth)?;
    Ok(())
}

pub fn read_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let file = std::fs::File::open(dir.join(GROUND_TRUTH_FILE))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Named generator presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Reference,
    Interaction,
    Decaying,
}

impl Scenario {
    pub fn config(self, n_users: usize, months: f64, seed: u64) -> GeneratorConfig {
        match self {
            Scenario::Reference => GeneratorConfig::reference(n_users, months, seed),
            Scenario::Interaction => GeneratorConfig::interaction(n_users, months, seed),
            Scenario::Decaying => GeneratorConfig::decaying(n_users, months, seed),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" | "default" => Ok(Scenario::Reference),
            "interaction" => Ok(Scenario::Interaction),
            "decaying" | "decay" => Ok(Scenario::Decaying),
            _ => Err(Error::Argument(format!(
                "unknown scenario {s:?} (expected reference, interaction or decaying)"
            ))),
        }
    }
}
