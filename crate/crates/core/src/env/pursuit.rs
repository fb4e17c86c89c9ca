//! Pursuit gridworld: learning pursuers chase randomly walking evaders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvStep, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::types::MarkovGameSpec;

/// Obstacle/out-of-bounds, pursuers, evaders.
pub const OBS_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleLayout {
    /// A solid block covering the middle quarter of each axis.
    CenterBlock,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PursuitConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    pub num_pursuers: usize,
    pub num_evaders: usize,
    pub n_catch: usize,
    pub obs_range: usize,
    pub catch_reward: f64,
    pub tag_reward: f64,
    pub urgency_reward: f64,
    pub max_cycles: usize,
    pub obstacle_layout: ObstacleLayout,
    /// Kept for parity with the reference table; capture is always the
    /// adjacency rule.
    pub surrounded: bool,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        PursuitConfig {
            grid_width: 16,
            grid_height: 16,
            num_pursuers: 8,
            num_evaders: 30,
            n_catch: 2,
            obs_range: 7,
            catch_reward: 5.0,
            tag_reward: 0.01,
            urgency_reward: -0.1,
            max_cycles: 500,
            obstacle_layout: ObstacleLayout::CenterBlock,
            surrounded: true,
        }
    }
}

/// 7×7 open grid with two pursuers and two evaders.
pub fn mini_pursuit_config() -> PursuitConfig {
    PursuitConfig {
        grid_width: 7,
        grid_height: 7,
        num_pursuers: 2,
        num_evaders: 2,
        n_catch: 2,
        obs_range: 5,
        max_cycles: 100,
        obstacle_layout: ObstacleLayout::None,
        ..PursuitConfig::default()
    }
}

impl PursuitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("grid_width", self.grid_width),
            ("grid_height", self.grid_height),
            ("num_pursuers", self.num_pursuers),
            ("num_evaders", self.num_evaders),
            ("n_catch", self.n_catch),
            ("obs_range", self.obs_range),
            ("max_cycles", self.max_cycles),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.obs_range % 2 == 0 {
            return Err(Error::config("obs_range", "must be odd"));
        }
        if self.num_pursuers < self.n_catch {
            return Err(Error::config("n_catch", "cannot exceed num_pursuers"));
        }
        for (name, v) in [
            ("catch_reward", self.catch_reward),
            ("tag_reward", self.tag_reward),
            ("urgency_reward", self.urgency_reward),
        ] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        let free = self.obstacle_mask().iter().filter(|&&b| !b).count();
        if free < self.num_pursuers + self.num_evaders {
            return Err(Error::config(
                "grid_width",
                format!(
                    "{free} free cells cannot hold {} entities",
                    self.num_pursuers + self.num_evaders
                ),
            ));
        }
        Ok(())
    }

    pub fn observation_dim(&self) -> usize {
        self.obs_range * self.obs_range * OBS_CHANNELS
    }

    /// Row-major (`y * width + x`) obstacle cells.
    pub fn obstacle_mask(&self) -> Vec<bool> {
        let (w, h) = (self.grid_width, self.grid_height);
        let mut mask = vec![false; w * h];
        if self.obstacle_layout == ObstacleLayout::CenterBlock {
            let (bw, bh) = (w / 4, h / 4);
            let (x0, y0) = ((w - bw) / 2, (h - bh) / 2);
            for y in y0..y0 + bh {
                for x in x0..x0 + bw {
                    mask[y * w + x] = true;
                }
            }
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i64,
    pub y: i64,
}

impl Cell {
    pub fn new(x: i64, y: i64) -> Self {
        Cell { x, y }
    }

    fn offset(self, dx: i64, dy: i64) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }

    pub fn is_adjacent(self, other: Cell) -> bool {
        (self.x - other.x).abs() + (self.y - other.y).abs() == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Result<Action> {
        Ok(match i {
            0 => Action::Up,
            1 => Action::Down,
            2 => Action::Left,
            3 => Action::Right,
            4 => Action::Stay,
            _ => return Err(Error::contract(format!("action {i} outside [0, 5)"))),
        })
    }

    /// `y` grows downwards.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    pub pursuers: Vec<Cell>,
    pub evaders: Vec<Cell>,
    pub evader_alive: Vec<bool>,
    pub obstacles: Vec<bool>,
    pub step_counter: usize,
}

impl GridState {
    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Out-of-bounds counts as blocked.
    pub fn is_blocked(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.obstacles[c.y as usize * self.width + c.x as usize]
    }

    pub fn alive_evaders(&self) -> impl Iterator<Item = Cell> + '_ {
        self.evaders
            .iter()
            .zip(&self.evader_alive)
            .filter(|(_, &a)| a)
            .map(|(&c, _)| c)
    }

    pub fn alive_evader_count(&self) -> usize {
        self.evader_alive.iter().filter(|&&a| a).count()
    }

    /// Checks the same-kind exclusion and placement invariants.
    pub fn validate(&self) -> Result<()> {
        if self.obstacles.len() != self.width * self.height || self.evaders.len() != self.evader_alive.len() {
            return Err(Error::contract("grid state has inconsistent lengths"));
        }
        let mut seen = std::collections::HashSet::new();
        for &p in &self.pursuers {
            if self.is_blocked(p) || !seen.insert(p) {
                return Err(Error::contract(format!("pursuer at {p:?} misplaced")));
            }
        }
        seen.clear();
        for e in self.alive_evaders() {
            if self.is_blocked(e) || !seen.insert(e) {
                return Err(Error::contract(format!("evader at {e:?} misplaced")));
            }
        }
        Ok(())
    }

    /// Local view of pursuer `agent`, indexed `((row * range) + col) * 3 + channel`
    /// where row/col run over `dy`/`dx` offsets from `-range/2`.
    pub fn observe(&self, agent: usize, obs_range: usize) -> Vec<f32> {
        let half = (obs_range / 2) as i64;
        let centre = self.pursuers[agent];
        let mut obs = vec![0.0f32; obs_range * obs_range * OBS_CHANNELS];
        let index = |c: Cell| -> Option<usize> {
            let (dx, dy) = (c.x - centre.x + half, c.y - centre.y + half);
            let r = obs_range as i64;
            ((0..r).contains(&dx) && (0..r).contains(&dy)).then(|| (dy * r + dx) as usize * OBS_CHANNELS)
        };
        for dy in -half..=half {
            for dx in -half..=half {
                let c = centre.offset(dx, dy);
                if self.is_blocked(c) {
                    obs[index(c).unwrap()] = 1.0;
                }
            }
        }
        for &p in &self.pursuers {
            if let Some(i) = index(p) {
                obs[i + 1] = 1.0;
            }
        }
        for e in self.alive_evaders() {
            if let Some(i) = index(e) {
                obs[i + 2] = 1.0;
            }
        }
        obs
    }
}

/// Positions at the moment rewards are settled: pursuers after their move,
/// evaders before theirs. Lets callers recount rewards from the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDetail {
    pub pursuers: Vec<Cell>,
    /// Evaders alive at the start of the step, positions before moving.
    pub evaders: Vec<(usize, Cell)>,
    pub captured: Vec<usize>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Resolves simultaneous pursuer moves. A move succeeds unless its target
/// is blocked, also targeted by another pursuer, or held by a pursuer that
/// ends the step in place. The result does not depend on agent order.
fn resolve_pursuer_moves(state: &GridState, actions: &[Action]) -> Vec<Cell> {
    let n = state.pursuers.len();
    let targets: Vec<Cell> = state
        .pursuers
        .iter()
        .zip(actions)
        .map(|(&p, a)| {
            let (dx, dy) = a.delta();
            let t = p.offset(dx, dy);
            if state.is_blocked(t) {
                p
            } else {
                t
            }
        })
        .collect();
    let mut moving: Vec<bool> = (0..n).map(|i| targets[i] != state.pursuers[i]).collect();
    for i in 0..n {
        if moving[i] && (0..n).any(|j| j != i && targets[j] == targets[i]) {
            moving[i] = false;
        }
    }
    // a stalled pursuer holds its cell, which can stall the mover behind it
    loop {
        let mut changed = false;
        for i in 0..n {
            if moving[i] && (0..n).any(|j| !moving[j] && state.pursuers[j] == targets[i]) {
                moving[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n)
        .map(|i| if moving[i] { targets[i] } else { state.pursuers[i] })
        .collect()
}

/// Rewards of one step given settled pursuer positions and the evaders
/// alive before capture. Returns per-pursuer rewards and captured evaders.
fn settle_rewards(cfg: &PursuitConfig, pursuers: &[Cell], evaders: &[(usize, Cell)]) -> (Vec<f64>, Vec<usize>) {
    let mut rewards = vec![cfg.urgency_reward; pursuers.len()];
    let mut captured = Vec::new();
    let mut survivors = Vec::new();
    for &(id, e) in evaders {
        let adjacent: Vec<usize> = (0..pursuers.len()).filter(|&i| pursuers[i].is_adjacent(e)).collect();
        if adjacent.len() >= cfg.n_catch {
            captured.push(id);
            adjacent.iter().for_each(|&i| rewards[i] += cfg.catch_reward);
        } else {
            survivors.push(e);
        }
    }
    for e in survivors {
        for (i, p) in pursuers.iter().enumerate() {
            if p.is_adjacent(e) {
                rewards[i] += cfg.tag_reward;
            }
        }
    }
    (rewards, captured)
}

/// Places entities on distinct free cells.
fn place(cfg: &PursuitConfig, rng: &mut ChaCha8Rng) -> GridState {
    let obstacles = cfg.obstacle_mask();
    let w = cfg.grid_width;
    let mut free: Vec<Cell> = (0..obstacles.len())
        .filter(|&i| !obstacles[i])
        .map(|i| Cell::new((i % w) as i64, (i / w) as i64))
        .collect();
    let total = cfg.num_pursuers + cfg.num_evaders;
    // partial Fisher-Yates: the first `total` cells become a uniform sample
    for i in 0..total {
        let j = rng.gen_range(i..free.len());
        free.swap(i, j);
    }
    GridState {
        width: cfg.grid_width,
        height: cfg.grid_height,
        pursuers: free[..cfg.num_pursuers].to_vec(),
        evaders: free[cfg.num_pursuers..total].to_vec(),
        evader_alive: vec![true; cfg.num_evaders],
        obstacles,
        step_counter: 0,
    }
}

/// Pursuit game with a private random stream for placement and evader moves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pursuit {
    config: PursuitConfig,
    state: GridState,
    rng: ChaCha8Rng,
    done: bool,
}

impl Pursuit {
    /// Validates `config` and places the first episode.
    pub fn new(config: PursuitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = place(&config, &mut rng);
        Ok(Pursuit {
            config,
            state,
            rng,
            done: false,
        })
    }

    /// Wraps a hand-built state; the random stream drives evaders only.
    pub fn from_state(config: PursuitConfig, state: GridState, seed: u64) -> Result<Self> {
        config.validate()?;
        state.validate()?;
        if state.width != config.grid_width
            || state.height != config.grid_height
            || state.pursuers.len() != config.num_pursuers
        {
            return Err(Error::contract("state does not match config"));
        }
        Ok(Pursuit {
            config,
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            done: false,
        })
    }

    pub fn config(&self) -> &PursuitConfig {
        &self.config
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self, agent: usize) -> Vec<f32> {
        self.state.observe(agent, self.config.obs_range)
    }

    pub fn observe_all(&self) -> Vec<Vec<f32>> {
        (0..self.config.num_pursuers).map(|i| self.observe(i)).collect()
    }

    /// Draws one uniform action per living evader, in evader order.
    pub fn draw_evader_actions(&mut self) -> Vec<Action> {
        let alive = self.state.alive_evader_count();
        (0..alive)
            .map(|_| Action::from_index(self.rng.gen_range(0..Action::COUNT)).unwrap())
            .collect()
    }

    /// One step with random evader moves.
    pub fn step_detailed(&mut self, actions: &[usize]) -> Result<StepDetail> {
        self.check_actions(actions)?;
        let evader_actions = self.draw_evader_actions();
        self.step_with_evader_actions(actions, &evader_actions)
    }

    fn check_actions(&self, actions: &[usize]) -> Result<Vec<Action>> {
        if self.done {
            return Err(Error::contract("step after episode end; call reset"));
        }
        if actions.len() != self.config.num_pursuers {
            return Err(Error::contract(format!(
                "{} actions for {} pursuers",
                actions.len(),
                self.config.num_pursuers
            )));
        }
        actions.iter().map(|&a| Action::from_index(a)).collect()
    }

    /// One step with the given evader moves, one per evader alive at the
    /// start of the step in evader order. Moves of evaders captured this
    /// step are ignored.
    pub fn step_with_evader_actions(&mut self, actions: &[usize], evader_actions: &[Action]) -> Result<StepDetail> {
        let actions = self.check_actions(actions)?;
        let alive: Vec<(usize, Cell)> = (0..self.state.evaders.len())
            .filter(|&i| self.state.evader_alive[i])
            .map(|i| (i, self.state.evaders[i]))
            .collect();
        if evader_actions.len() != alive.len() {
            return Err(Error::contract("one move per living evader required"));
        }
        let pursuers = resolve_pursuer_moves(&self.state, &actions);
        let (rewards, captured) = settle_rewards(&self.config, &pursuers, &alive);
        self.state.pursuers = pursuers.clone();
        for &id in &captured {
            self.state.evader_alive[id] = false;
        }
        // evaders move one at a time in index order; blocked moves are no-ops
        for (&(id, _), a) in alive.iter().zip(evader_actions) {
            if !self.state.evader_alive[id] {
                continue;
            }
            let (dx, dy) = a.delta();
            let here = self.state.evaders[id];
            let t = here.offset(dx, dy);
            let taken = self.state.alive_evaders().any(|e| e == t);
            if !self.state.is_blocked(t) && !taken {
                self.state.evaders[id] = t;
            }
        }
        self.state.step_counter += 1;
        self.done = self.state.alive_evader_count() == 0 || self.state.step_counter >= self.config.max_cycles;
        Ok(StepDetail {
            pursuers,
            evaders: alive,
            captured,
            rewards,
            done: self.done,
        })
    }
}

impl MultiAgentEnv for Pursuit {
    fn spec(&self) -> MarkovGameSpec {
        MarkovGameSpec {
            agent_count: self.config.num_pursuers,
            observation_dim: self.config.observation_dim(),
            action_count: Action::COUNT,
            max_episode_steps: self.config.max_cycles,
            gamma: 0.99,
        }
    }

    fn reset(&mut self) -> Result<Vec<Vec<f32>>> {
        self.state = place(&self.config, &mut self.rng);
        self.done = false;
        Ok(self.observe_all())
    }

    fn step(&mut self, actions: &[usize]) -> Result<EnvStep> {
        let detail = self.step_detailed(actions)?;
        Ok(EnvStep {
            observations: self.observe_all(),
            rewards: detail.rewards.iter().map(|&r| r as f32).collect(),
            done: detail.done,
        })
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    fn restore(&mut self, snapshot: &serde_json::Value) -> Result<()> {
        let restored: Pursuit = serde_json::from_value(snapshot.clone())?;
        if restored.config != self.config {
            return Err(Error::Format("environment snapshot has a different config".into()));
        }
        *self = restored;
        Ok(())
    }
}
