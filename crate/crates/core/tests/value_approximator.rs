use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use super_core::network::{Architecture, QNetwork, Real};
use super_core::optim::OptimizerState;
use super_core::td::{batch_loss, loss_and_gradient, td_error, train_on_batch};
use super_core::types::{Experience, OptimizerKind};

fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, actions: usize) -> Vec<Experience> {
    (0..n)
        .map(|_| Experience {
            obs: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: rng.gen_range(0..actions),
            reward: rng.gen_range(-2.0..2.0),
            next_obs: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: rng.gen_bool(0.2),
            origin_agent: 0,
            td_at_share: None,
        })
        .collect()
}

/// Central differences over every parameter of `net`.
fn numeric_gradient(
    net: &QNetwork<f64>,
    target: &QNetwork<f64>,
    batch: &[&Experience],
    weights: &[f64],
    gamma: f64,
    double_q: bool,
) -> Vec<f64> {
    let h = 1e-6;
    let mut probe = net.clone();
    let total = net.parameter_count();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let bump = |p: &mut QNetwork<f64>, delta: f64| {
            let mut k = flat;
            for t in p.tensors_mut() {
                if k < t.len() {
                    t[k] += delta;
                    return;
                }
                k -= t.len();
            }
        };
        bump(&mut probe, h);
        // double-Q action selection uses the online net; keep it fixed at the
        // unperturbed parameters so only the Q(s, a) path is differentiated
        let plus = loss_with_fixed_targets(&probe, net, target, batch, weights, gamma, double_q);
        bump(&mut probe, -2.0 * h);
        let minus = loss_with_fixed_targets(&probe, net, target, batch, weights, gamma, double_q);
        bump(&mut probe, h);
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

fn loss_with_fixed_targets(
    probe: &QNetwork<f64>,
    original: &QNetwork<f64>,
    target: &QNetwork<f64>,
    batch: &[&Experience],
    weights: &[f64],
    gamma: f64,
    double_q: bool,
) -> f64 {
    // y_i from the unperturbed online net, Q(s, a) from the probe
    let targets: Vec<f64> = batch
        .iter()
        .map(|e| direct_target(original, target, e, gamma, double_q))
        .collect();
    let n = batch.len() as f64;
    batch
        .iter()
        .zip(&targets)
        .zip(weights)
        .map(|((e, y), w)| {
            let d = q_of(probe, e) - y;
            let huber = if d.abs() <= 1.0 { 0.5 * d * d } else { d.abs() - 0.5 };
            w * huber
        })
        .sum::<f64>()
        / n
}

fn q_row(net: &QNetwork<f64>, obs: &[f32]) -> Vec<f64> {
    let x = ndarray::Array2::from_shape_fn((1, obs.len()), |(_, j)| obs[j] as f64);
    net.forward(x.view()).unwrap().row(0).to_vec()
}

fn q_of(net: &QNetwork<f64>, e: &Experience) -> f64 {
    q_row(net, &e.obs)[e.action]
}

fn direct_target(online: &QNetwork<f64>, target: &QNetwork<f64>, e: &Experience, gamma: f64, double_q: bool) -> f64 {
    if e.done {
        return e.reward as f64;
    }
    let tq = q_row(target, &e.next_obs);
    let b = if double_q {
        let oq = q_row(online, &e.next_obs);
        let mut best = 0;
        for (i, v) in oq.iter().enumerate() {
            if *v > oq[best] {
                best = i;
            }
        }
        tq[best]
    } else {
        tq.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    e.reward as f64 + gamma * b
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..10 {
        let dueling = trial % 2 == 1;
        let arch = Architecture {
            input_dim: 5,
            hidden: vec![7, 6],
            action_count: 4,
            dueling,
        };
        let net = QNetwork::<f64>::new(&arch, 100 + trial);
        let target = QNetwork::<f64>::new(&arch, 200 + trial);
        let data = random_batch(&mut rng, 6, 5, 4);
        let batch: Vec<&Experience> = data.iter().collect();
        let weights: Vec<f64> = (0..6).map(|_| rng.gen_range(0.1..1.0)).collect();
        let double_q = trial % 3 == 0;
        let lg = loss_and_gradient(&net, &target, &batch, &weights, 0.9, double_q).unwrap();
        let analytic: Vec<f64> = lg.grads.tensors().flatten().copied().collect();
        let numeric = numeric_gradient(&net, &target, &batch, &weights, 0.9, double_q);
        let err = relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "trial {trial} (dueling={dueling}): relative error {err}");
        let direct = batch_loss(&net, &target, &batch, &weights, 0.9, double_q).unwrap();
        assert!((direct - lg.loss).abs() < 1e-12);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_and_reports_td() {
    let arch = Architecture {
        input_dim: 3,
        hidden: vec![8, 8],
        action_count: 2,
        dueling: true,
    };
    let mut net = QNetwork::<f32>::new(&arch, 1);
    let target = QNetwork::<f32>::new(&arch, 2);
    let before = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = random_batch(&mut rng, 5, 3, 2);
    let batch: Vec<&Experience> = data.iter().collect();
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.0, 1.5e-4, &net);
    let out = train_on_batch(&mut net, &mut opt, &target, &batch, &[1.0; 5], 0.99, true).unwrap();
    assert_eq!(net, before);
    for (e, td) in data.iter().zip(&out.td_errors) {
        let expected = td_error(e, &before, &target, 0.99, true).unwrap().value();
        assert!((expected - td).abs() < 1e-6, "{expected} vs {td}");
    }
}

#[test]
fn single_sample_regresses_to_reward() {
    let arch = Architecture {
        input_dim: 3,
        hidden: vec![16, 16],
        action_count: 3,
        dueling: false,
    };
    let mut net = QNetwork::<f32>::new(&arch, 7);
    let target = net.clone();
    let e = Experience {
        obs: vec![0.5, -0.2, 1.0],
        action: 1,
        reward: 0.8,
        next_obs: vec![0.0, 0.0, 0.0],
        done: false,
        origin_agent: 0,
        td_at_share: None,
    };
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01, 1.5e-4, &net);
    for _ in 0..200 {
        train_on_batch(&mut net, &mut opt, &target, &[&e], &[1.0], 0.0, false).unwrap();
    }
    let x = ndarray::Array2::from_shape_vec((1, 3), e.obs.clone()).unwrap();
    let q = net.forward(x.view()).unwrap()[[0, 1]];
    assert!((q - 0.8).abs() < 1e-2, "Q = {q}");
}

#[test]
fn zero_weight_sample_contributes_nothing() {
    let arch = Architecture {
        input_dim: 4,
        hidden: vec![8],
        action_count: 3,
        dueling: true,
    };
    let start = QNetwork::<f64>::new(&arch, 5);
    let target = QNetwork::<f64>::new(&arch, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_batch(&mut rng, 4, 4, 3);

    // with the zero-weighted sample, the mean divides by 4; rescale the
    // remaining weights so both runs target the same loss
    let mut with = start.clone();
    let mut opt = OptimizerState::sgd(0.05, &with);
    let all: Vec<&Experience> = data.iter().collect();
    train_on_batch(&mut with, &mut opt, &target, &all, &[4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 0.0], 0.9, false).unwrap();

    let mut without = start.clone();
    let mut opt = OptimizerState::sgd(0.05, &without);
    let three: Vec<&Experience> = data.iter().take(3).collect();
    train_on_batch(&mut without, &mut opt, &target, &three, &[1.0, 1.0, 1.0], 0.9, false).unwrap();

    for (a, b) in with.tensors().flatten().zip(without.tensors().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn loss_decreases_on_fixed_batch() {
    let arch = Architecture {
        input_dim: 6,
        hidden: vec![32, 32],
        action_count: 4,
        dueling: true,
    };
    let mut net = QNetwork::<f32>::new(&arch, 9);
    let target = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data = random_batch(&mut rng, 32, 6, 4);
    let batch: Vec<&Experience> = data.iter().collect();
    let w = vec![1.0; 32];
    let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, 1.5e-4, &net);
    let mut losses = Vec::new();
    for _ in 0..50 {
        losses.push(train_on_batch(&mut net, &mut opt, &target, &batch, &w, 0.9, true).unwrap().loss);
    }
    for pair in losses.windows(2) {
        assert!(pair[1] <= pair[0] * 1.05, "loss jumped: {pair:?}");
    }
    assert!(losses[49] < losses[0]);
}

#[test]
fn training_is_bitwise_deterministic() {
    let arch = Architecture {
        input_dim: 6,
        hidden: vec![16, 16],
        action_count: 5,
        dueling: true,
    };
    let run = || {
        let mut net = QNetwork::<f32>::new(&arch, 12);
        let target = QNetwork::<f32>::new(&arch, 13);
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 1e-3, 1.5e-4, &net);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let data = random_batch(&mut rng, 8, 6, 5);
            let batch: Vec<&Experience> = data.iter().collect();
            train_on_batch(&mut net, &mut opt, &target, &batch, &[1.0; 8], 0.99, true).unwrap();
        }
        net.to_bytes()
    };
    assert_eq!(run(), run());
}

#[test]
fn sync_target_copies_and_decouples() {
    let arch = Architecture {
        input_dim: 4,
        hidden: vec![8, 8],
        action_count: 3,
        dueling: true,
    };
    let mut online = QNetwork::<f32>::new(&arch, 1);
    let mut target = QNetwork::<f32>::new(&arch, 2);
    target.copy_from(&online).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = random_batch(&mut rng, 16, 4, 3);
    for e in &data {
        let x = ndarray::Array2::from_shape_vec((1, 4), e.obs.clone()).unwrap();
        assert_eq!(online.forward(x.view()).unwrap(), target.forward(x.view()).unwrap());
        let a = td_error(e, &online, &target, 0.99, true).unwrap();
        let b = td_error(e, &online, &target, 0.99, false).unwrap();
        assert_eq!(a, b);
    }
    let snapshot = target.clone();
    online.tensors_mut().for_each(|t| t.iter_mut().for_each(|v| *v += 1.0));
    assert_eq!(target, snapshot);
}

#[test]
fn precision_cast_round_trip() {
    let arch = Architecture {
        input_dim: 3,
        hidden: vec![4],
        action_count: 2,
        dueling: false,
    };
    let net = QNetwork::<f32>::new(&arch, 1);
    let wide: QNetwork<f64> = net.cast();
    assert_eq!(wide.cast::<f32>(), net);
    assert_eq!(f64::BYTES, 8);
}
