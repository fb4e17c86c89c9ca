//! Line-delimited JSON episode traces for debugging.
//!
//! One object per step:
//! `{"step":3,"pursuers":[[x,y],..],"evaders":[[x,y,alive],..],"actions":[..],"rewards":[..]}`.
//! `step` is the counter after the step; `actions` and `rewards` belong to
//! the step that produced the positions. A reset writes `step` 0 with empty
//! `actions` and `rewards`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::GridState;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub pursuers: Vec<(i64, i64)>,
    pub evaders: Vec<(i64, i64, bool)>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
}

impl TraceRecord {
    pub fn new(state: &GridState, actions: &[usize], rewards: &[f32]) -> Self {
        TraceRecord {
            step: state.step_counter,
            pursuers: state.pursuers.iter().map(|c| (c.x, c.y)).collect(),
            evaders: state
                .evaders
                .iter()
                .zip(&state.evader_alive)
                .map(|(c, &a)| (c.x, c.y, a))
                .collect(),
            actions: actions.to_vec(),
            rewards: rewards.to_vec(),
        }
    }
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out }
    }

    pub fn record(&mut self, state: &GridState, actions: &[usize], rewards: &[f32]) -> Result<()> {
        serde_json::to_writer(&mut self.out, &TraceRecord::new(state, actions, rewards))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{mini_pursuit_config, MultiAgentEnv, Pursuit};

    #[test]
    fn trace_lines_parse_back() {
        let mut env = Pursuit::new(mini_pursuit_config(), 4).unwrap();
        let mut w = TraceWriter::new(Vec::new());
        w.record(env.state(), &[], &[]).unwrap();
        let step = env.step(&[1, 2]).unwrap();
        w.record(env.state(), &[1, 2], &step.rewards).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        let recs: Vec<TraceRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].step, 1);
        assert_eq!(recs[1].actions, vec![1, 2]);
        assert_eq!(recs[1].pursuers.len(), 2);
    }
}
