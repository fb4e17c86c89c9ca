//! Temporal-difference errors, the importance-weighted Huber loss and the
//! single-step learner update built on them.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::network::{argmax, stack_rows, QNetwork, Real};
use crate::optim::OptimizerState;
use crate::types::{Experience, TdError};

pub const HUBER_DELTA: f64 = 1.0;

/// Bootstrapped one-step targets `r + gamma * B(next_obs)`, with `B = 0` on
/// terminal transitions.
///
/// `B` is `max_a Q_target(s', a)`, or `Q_target(s', argmax_a Q_online(s', a))`
/// when `double_q` is set.
pub fn bootstrap_targets<F: Real>(
    online: &QNetwork<F>,
    target: &QNetwork<F>,
    batch: &[&Experience],
    gamma: f64,
    double_q: bool,
) -> Result<Array1<F>> {
    let dim = online.input_dim();
    let next = stack_rows::<F>(batch.iter().map(|e| e.next_obs.as_slice()), dim);
    let q_target = target.forward(next.view())?;
    let selector = if double_q { Some(online.forward(next.view())?) } else { None };
    let gamma = F::of(gamma);
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let reward = F::of(e.reward as f64);
            if e.done {
                return reward;
            }
            let row = q_target.row(i);
            let bootstrap = match &selector {
                Some(sel) => row[argmax(sel.row(i).iter().copied())],
                None => row.iter().copied().fold(F::neg_infinity(), F::max),
            };
            reward + gamma * bootstrap
        })
        .collect())
}

fn check_batch(net: &QNetwork<impl Real>, batch: &[&Experience]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract("empty batch"));
    }
    for e in batch {
        if e.obs.len() != net.input_dim() || e.next_obs.len() != net.input_dim() {
            return Err(Error::contract(format!(
                "experience observation length {} does not match network input {}",
                e.obs.len(),
                net.input_dim()
            )));
        }
        if e.action >= net.action_count() {
            return Err(Error::contract(format!("action {} out of range", e.action)));
        }
    }
    Ok(())
}

fn obs_matrix<F: Real>(net: &QNetwork<F>, batch: &[&Experience]) -> Array2<F> {
    stack_rows(batch.iter().map(|e| e.obs.as_slice()), net.input_dim())
}

/// Absolute td-errors for a batch under the given network pair.
pub fn td_errors<F: Real>(
    online: &QNetwork<F>,
    target: &QNetwork<F>,
    batch: &[&Experience],
    gamma: f64,
    double_q: bool,
) -> Result<Vec<TdError>> {
    check_batch(online, batch)?;
    let targets = bootstrap_targets(online, target, batch, gamma, double_q)?;
    let q = online.forward(obs_matrix(online, batch).view())?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, e)| TdError::from_delta((targets[i] - q[[i, e.action]]).to_f64().unwrap()))
        .collect())
}

pub fn td_error<F: Real>(
    exp: &Experience,
    online: &QNetwork<F>,
    target: &QNetwork<F>,
    gamma: f64,
    double_q: bool,
) -> Result<TdError> {
    Ok(td_errors(online, target, &[exp], gamma, double_q)?[0])
}

fn huber(x: f64) -> f64 {
    if x.abs() <= HUBER_DELTA {
        0.5 * x * x
    } else {
        HUBER_DELTA * (x.abs() - 0.5 * HUBER_DELTA)
    }
}

fn check_weights(batch: &[&Experience], weights: &[f64]) -> Result<()> {
    if weights.len() != batch.len() {
        return Err(Error::contract("one importance weight per sample required"));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::contract("importance weights must be finite and non-negative"));
    }
    Ok(())
}

/// Loss and gradient of `mean_i w_i * huber(Q(s_i, a_i) - y_i)` with the
/// targets `y_i` held constant.
pub struct LossGradient<F> {
    pub loss: f64,
    pub grads: QNetwork<F>,
    pub td_errors: Vec<TdError>,
}

pub fn loss_and_gradient<F: Real>(
    online: &QNetwork<F>,
    target: &QNetwork<F>,
    batch: &[&Experience],
    weights: &[f64],
    gamma: f64,
    double_q: bool,
) -> Result<LossGradient<F>> {
    check_batch(online, batch)?;
    check_weights(batch, weights)?;
    let targets = bootstrap_targets(online, target, batch, gamma, double_q)?;
    let cache = online.forward_cached(obs_matrix(online, batch).view())?;
    let n = batch.len() as f64;
    let mut grad_q = Array2::<F>::zeros(cache.q.dim());
    let mut loss = 0.0;
    let mut tds = Vec::with_capacity(batch.len());
    for (i, e) in batch.iter().enumerate() {
        let delta = (cache.q[[i, e.action]] - targets[i]).to_f64().unwrap();
        tds.push(TdError::from_delta(delta));
        loss += weights[i] * huber(delta);
        grad_q[[i, e.action]] = F::of(weights[i] * delta.clamp(-HUBER_DELTA, HUBER_DELTA) / n);
    }
    let grads = online.backward(&cache, &grad_q);
    Ok(LossGradient {
        loss: loss / n,
        grads,
        td_errors: tds,
    })
}

/// Loss only; the finite-difference side of gradient checks.
pub fn batch_loss<F: Real>(
    online: &QNetwork<F>,
    target: &QNetwork<F>,
    batch: &[&Experience],
    weights: &[f64],
    gamma: f64,
    double_q: bool,
) -> Result<f64> {
    check_batch(online, batch)?;
    check_weights(batch, weights)?;
    let targets = bootstrap_targets(online, target, batch, gamma, double_q)?;
    let q = online.forward(obs_matrix(online, batch).view())?;
    let total: f64 = batch
        .iter()
        .enumerate()
        .map(|(i, e)| weights[i] * huber((q[[i, e.action]] - targets[i]).to_f64().unwrap()))
        .sum();
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub loss: f64,
    /// Pre-update absolute td-errors, one per sample, for priority refresh.
    pub td_errors: Vec<f64>,
}

/// One optimizer step on the importance-weighted Huber loss.
pub fn train_on_batch<F: Real>(
    online: &mut QNetwork<F>,
    optimizer: &mut OptimizerState<F>,
    target: &QNetwork<F>,
    batch: &[&Experience],
    weights: &[f64],
    gamma: f64,
    double_q: bool,
) -> Result<TrainOutcome> {
    let lg = loss_and_gradient(online, target, batch, weights, gamma, double_q)?;
    if !lg.loss.is_finite() {
        return Err(Error::Divergence {
            step: optimizer.step_count,
            message: "non-finite loss".into(),
        });
    }
    optimizer.apply(online, &lg.grads)?;
    Ok(TrainOutcome {
        loss: lg.loss,
        td_errors: lg.td_errors.into_iter().map(TdError::value).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use ndarray::array;

    fn exp(obs: Vec<f32>, action: usize, reward: f32, next: Vec<f32>, done: bool) -> Experience {
        Experience {
            obs,
            action,
            reward,
            next_obs: next,
            done,
            origin_agent: 0,
            td_at_share: None,
        }
    }

    fn linear(action_count: usize) -> QNetwork<f64> {
        QNetwork::zeros(&Architecture {
            input_dim: 2,
            hidden: vec![],
            action_count,
            dueling: false,
        })
    }

    #[test]
    fn zero_discount_zero_network() {
        let net = linear(2);
        let e = exp(vec![1.0, 0.0], 0, 1.0, vec![0.0, 1.0], false);
        assert_eq!(td_error(&e, &net, &net, 0.0, false).unwrap().value(), 1.0);
    }

    #[test]
    fn hand_arithmetic_example() {
        // Q_online(obs=[1,0], a=1) = 0.5 ; max_a Q_target([0,1], a) = 2.0
        let mut online = linear(2);
        online.layers_mut()[0].weights = array![[0.0, 0.5], [0.0, 0.0]];
        let mut target = linear(2);
        target.layers_mut()[0].weights = array![[0.0, 0.0], [2.0, -1.0]];
        let e = exp(vec![1.0, 0.0], 1, 1.0, vec![0.0, 1.0], false);
        let td = td_error(&e, &online, &target, 0.9, false).unwrap().value();
        assert!((td - 2.3).abs() < 1e-12);
    }

    #[test]
    fn double_q_uses_online_argmax() {
        let mut online = linear(2);
        // online prefers action 1 at next_obs
        online.layers_mut()[0].weights = array![[0.0, 0.0], [0.0, 1.0]];
        let mut target = linear(2);
        target.layers_mut()[0].weights = array![[0.0, 0.0], [3.0, 1.0]];
        let e = exp(vec![1.0, 0.0], 0, 0.0, vec![0.0, 1.0], false);
        let plain = td_error(&e, &online, &target, 0.5, false).unwrap().value();
        let double = td_error(&e, &online, &target, 0.5, true).unwrap().value();
        assert!((plain - 1.5).abs() < 1e-12);
        assert!((double - 0.5).abs() < 1e-12);
    }

    #[test]
    fn terminal_transition_ignores_next_obs() {
        let net = QNetwork::<f64>::new(
            &Architecture {
                input_dim: 2,
                hidden: vec![4],
                action_count: 3,
                dueling: true,
            },
            1,
        );
        let mut zero = net.clone();
        zero.tensors_mut().for_each(|t| t.fill(0.0));
        let a = exp(vec![0.3, 0.1], 2, 0.0, vec![5.0, 5.0], true);
        let b = exp(vec![0.3, 0.1], 2, 0.0, vec![-9.0, 1.0], true);
        assert_eq!(td_error(&a, &zero, &net, 0.99, true).unwrap().value(), 0.0);
        assert_eq!(
            td_error(&a, &net, &net, 0.99, false).unwrap(),
            td_error(&b, &net, &net, 0.99, false).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let net = linear(2);
        let e = exp(vec![1.0], 0, 0.0, vec![1.0], false);
        assert!(matches!(td_error(&e, &net, &net, 0.9, false), Err(Error::Contract(_))));
        let e = exp(vec![1.0, 1.0], 2, 0.0, vec![1.0, 1.0], false);
        assert!(td_error(&e, &net, &net, 0.9, false).is_err());
    }

    #[test]
    fn huber_is_quadratic_then_linear() {
        assert_eq!(huber(0.5), 0.125);
        assert_eq!(huber(-3.0), 2.5);
        assert_eq!(huber(1.0), 0.5);
    }

    #[test]
    fn bad_weights_rejected() {
        let net = linear(2);
        let e = exp(vec![1.0, 0.0], 0, 1.0, vec![0.0, 1.0], false);
        assert!(batch_loss(&net, &net, &[&e], &[-1.0], 0.9, false).is_err());
        assert!(batch_loss(&net, &net, &[&e], &[1.0, 1.0], 0.9, false).is_err());
    }
}
