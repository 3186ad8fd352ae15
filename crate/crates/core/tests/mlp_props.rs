use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use touchnet::mlp::{
    loss, loss_and_grad, param_count, AdamConfig, AdamState, Architecture, Batch, NetworkParams,
};

fn random_params(arch: &Architecture, rng: &mut ChaCha8Rng, scale: f64) -> NetworkParams {
    let mut p = NetworkParams::zeros(arch);
    for v in p.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    p
}

fn random_batch(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let inputs = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets = (0..n)
        .map(|_| f64::from(rng.random_bool(0.4) as u8))
        .collect();
    (inputs, targets)
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-5;
    for draw in 0..20 {
        let arch = if draw % 2 == 0 {
            Architecture::default()
        } else {
            Architecture::new(4, vec![3, 5]).unwrap()
        };
        let params = random_params(&arch, &mut rng, 1.0);
        let n = rng.random_range(1..12);
        let (inputs, targets) = random_batch(n, arch.input_dim, &mut rng);
        let batch = Batch::new(&inputs, &targets, arch.input_dim).unwrap();
        let (_, grad) = loss_and_grad(&params, &batch).unwrap();
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.as_mut_slice()[i] += h;
            let mut minus = params.clone();
            minus.as_mut_slice()[i] -= h;
            let fd = (loss(&plus, &batch).unwrap() - loss(&minus, &batch).unwrap()) / (2.0 * h);
            let g = grad.as_slice()[i];
            let abs = (g - fd).abs();
            let rel = abs / g.abs().max(fd.abs());
            assert!(
                abs <= 1e-7 || rel <= 1e-4,
                "draw {draw} param {i}: analytic {g} vs numeric {fd}"
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_stays_inside_unit_interval(seed: u64, scale in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::default();
        let params = random_params(&arch, &mut rng, scale);
        let x: Vec<f64> = (0..31).map(|_| rng.random_range(-1e6..1e6)).collect();
        let p = params.forward(&x).unwrap();
        prop_assert!(p.is_finite());
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn loss_ignores_order_and_duplication(seed: u64, n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::new(5, vec![4]).unwrap();
        let params = random_params(&arch, &mut rng, 1.0);
        let (inputs, targets) = random_batch(n, 5, &mut rng);
        let base = loss(&params, &Batch::new(&inputs, &targets, 5).unwrap()).unwrap();

        let mut rev_in = Vec::new();
        for row in inputs.chunks(5).rev() {
            rev_in.extend_from_slice(row);
        }
        let rev_t: Vec<f64> = targets.iter().rev().copied().collect();
        let reversed = loss(&params, &Batch::new(&rev_in, &rev_t, 5).unwrap()).unwrap();
        prop_assert!((base - reversed).abs() <= 1e-12 * base.max(1.0));

        let dup_in = [inputs.clone(), inputs.clone()].concat();
        let dup_t = [targets.clone(), targets.clone()].concat();
        let doubled = loss(&params, &Batch::new(&dup_in, &dup_t, 5).unwrap()).unwrap();
        prop_assert!((base - doubled).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude(g in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-6));
        let mut theta = vec![0.0; g.len()];
        let mut state = AdamState::new(g.len(), AdamConfig::default());
        state.step(&mut theta, &g).unwrap();
        for (t, gi) in theta.iter().zip(&g) {
            prop_assert!(t.abs() <= 1e-3 * (1.0 + 1e-6));
            prop_assert_eq!(t.signum(), -gi.signum());
        }
    }

    #[test]
    fn adam_is_deterministic(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let run = || {
            let mut theta = vec![0.5; 8];
            let mut state = AdamState::new(8, AdamConfig::default());
            for _ in 0..5 {
                state.step(&mut theta, &g).unwrap();
            }
            theta
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn zero_gradient_leaves_params() {
    let mut theta = vec![0.25, -1.0];
    let mut state = AdamState::new(2, AdamConfig::default());
    state.step(&mut theta, &[0.0, 0.0]).unwrap();
    assert_eq!(theta, vec![0.25, -1.0]);
    assert!(state.step(&mut theta, &[f64::NAN, 0.0]).is_err());
}

#[test]
fn parameter_counts() {
    assert_eq!(param_count(&Architecture::default()), 551);
    assert_eq!(param_count(&Architecture::new(31, vec![]).unwrap()), 32);
    assert_eq!(param_count(&Architecture::new(2, vec![3]).unwrap()), 13);
}

#[test]
fn confident_correct_prediction_has_near_zero_loss() {
    let arch = Architecture::new(1, vec![]).unwrap();
    let params = NetworkParams::from_layers(&arch, vec![vec![40.0]], vec![vec![0.0]]).unwrap();
    let l = loss(&params, &Batch::new(&[1.0], &[1.0], 1).unwrap()).unwrap();
    // The probability clamp bounds the loss below by -ln(1 - 1e-12).
    assert!(l > 0.0 && l < 1.0001e-12, "{l}");
}
