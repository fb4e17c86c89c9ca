use crate::env::MultiAgentEnv;
use crate::error::{Error, Result};

/// Undiscounted episode returns averaged over evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub agent_returns: Vec<f64>,
    pub team_return: f64,
    pub episodes: usize,
}

/// Plays `episodes` full episodes, asking `policy` for the joint action
/// given the environment and the current observations.
pub fn evaluate_policy<E: MultiAgentEnv>(
    env: &mut E,
    episodes: usize,
    mut policy: impl FnMut(&E, &[Vec<f32>]) -> Result<Vec<usize>>,
) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let n = env.spec().agent_count;
    let mut totals = vec![0.0; n];
    for _ in 0..episodes {
        let mut obs = env.reset()?;
        loop {
            let actions = policy(env, &obs)?;
            let step = env.step(&actions)?;
            for (t, r) in totals.iter_mut().zip(&step.rewards) {
                *t += *r as f64;
            }
            if step.done {
                break;
            }
            obs = step.observations;
        }
    }
    let agent_returns: Vec<f64> = totals.iter().map(|t| t / episodes as f64).collect();
    Ok(EvalResult {
        team_return: agent_returns.iter().sum(),
        agent_returns,
        episodes,
    })
}
