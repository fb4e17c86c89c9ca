use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal, Uniform};
use super_core::relay::{select_and_relay, RelayChannel};
use super_core::selection::WindowStats;
use super_core::types::{Experience, SelectionConfig, SelectionStrategy};

const STREAM_LEN: usize = 50_000;
const BATCH: usize = 32;

fn dummy(origin: usize) -> Experience {
    Experience {
        obs: vec![0.0; 3],
        action: 0,
        reward: 0.0,
        next_obs: vec![0.0; 3],
        done: false,
        origin_agent: origin,
        td_at_share: None,
    }
}

/// Pushes a td stream through the selection step in batches and returns
/// the realized shared / offered fraction.
fn realized_bandwidth(tds: &[f64], cfg: &SelectionConfig, seed: u64) -> f64 {
    let channel = RelayChannel::new(2, 3);
    let mut window = WindowStats::new(cfg.window_size_k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for chunk in tds.chunks(BATCH) {
        let batch = vec![dummy(0); chunk.len()];
        select_and_relay(0, &batch, chunk, cfg, &mut window, &channel, &mut rng).unwrap();
        // keep the receiver's queue from growing
        channel.drain(1).unwrap();
    }
    let c = channel.counters(0);
    assert_eq!(c.experiences_offered as usize, tds.len());
    c.actual_bandwidth()
}

fn stream(dist: impl Distribution<f64>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dist.sample_iter(&mut rng).take(STREAM_LEN).collect()
}

fn streams() -> Vec<(&'static str, Vec<f64>)> {
    vec![
        ("uniform", stream(Uniform::new(0.0, 2.0), 11)),
        ("exponential", stream(Exp::new(1.5).unwrap(), 12)),
    ]
}

fn config(strategy: SelectionStrategy, beta: f64) -> SelectionConfig {
    SelectionConfig {
        strategy,
        bandwidth_beta: beta,
        ..SelectionConfig::default()
    }
}

#[test]
fn quantile_hits_target_bandwidth() {
    for (name, tds) in streams() {
        for beta in [0.01, 0.1] {
            let got = realized_bandwidth(&tds, &config(SelectionStrategy::Quantile, beta), 1);
            let rel = (got - beta).abs() / beta;
            assert!(rel <= 0.2, "{name} beta={beta}: realized {got}");
        }
    }
}

#[test]
fn stochastic_hits_target_bandwidth() {
    for (name, tds) in streams() {
        for beta in [0.01, 0.1] {
            let cfg = config(SelectionStrategy::Stochastic, beta);
            // the premise of the check: no share probability is clipped at 1
            let window = WindowStats::from_values(cfg.window_size_k, tds.iter().copied());
            let max_p = tds
                .iter()
                .map(|&td| {
                    super_core::selection::stochastic_share_probability(
                        &window,
                        td,
                        beta,
                        cfg.stochastic_alpha,
                        cfg.priority_epsilon,
                    )
                })
                .fold(0.0, f64::max);
            assert!(max_p < 1.0, "{name} beta={beta} truncates");
            let got = realized_bandwidth(&tds, &cfg, 2);
            let rel = (got - beta).abs() / beta;
            assert!(rel <= 0.2, "{name} beta={beta}: realized {got}");
        }
    }
}

#[test]
fn uniform_random_hits_target_bandwidth() {
    let (_, tds) = &streams()[0];
    let got = realized_bandwidth(tds, &config(SelectionStrategy::UniformRandom, 0.1), 3);
    assert!((got - 0.1).abs() / 0.1 <= 0.05, "{got}");
}

#[test]
fn variance_gaussian_overshoots_small_targets_on_heavy_tails() {
    let beta = 1e-4;
    let tds = stream(LogNormal::new(-2.0, 1.0).unwrap(), 13);
    let got = realized_bandwidth(&tds, &config(SelectionStrategy::Gaussian, beta), 4);
    assert!(got > 10.0 * beta, "realized {got} did not overshoot");
}

#[test]
fn share_all_shares_everything() {
    let (_, tds) = &streams()[1];
    let got = realized_bandwidth(tds, &config(SelectionStrategy::ShareAll, 0.1), 5);
    assert_eq!(got, 1.0);
}

#[test]
fn broadcast_conserves_experiences() {
    let agents = 4;
    let channel = RelayChannel::new(agents, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tds = stream(Exp::new(1.0).unwrap(), 14);
    let cfg = config(SelectionStrategy::Quantile, 0.1);
    let mut windows: Vec<_> = (0..agents).map(|_| WindowStats::new(cfg.window_size_k)).collect();
    for (i, chunk) in tds[..4000].chunks(BATCH).enumerate() {
        let sender = i % agents;
        let batch = vec![dummy(sender); chunk.len()];
        select_and_relay(sender, &batch, chunk, &cfg, &mut windows[sender], &channel, &mut rng).unwrap();
    }
    let shared: u64 = channel.all_counters().iter().map(|c| c.experiences_shared).sum();
    assert_eq!(channel.enqueued_total(), shared * (agents as u64 - 1));
    let mut delivered = 0;
    for r in 0..agents {
        let got = channel.drain(r).unwrap();
        assert!(got.iter().all(|e| e.origin_agent != r));
        assert!(got.iter().all(|e| e.td_at_share.is_some()));
        delivered += got.len() as u64;
    }
    assert_eq!(delivered, channel.enqueued_total());
}
