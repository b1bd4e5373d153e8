//! Parametric gridworld distribution.
//!
//! Episodes run on a square grid containing walls, a handful of stochastic
//! reward objects, and the agent. Each task is one draw of
//! [`GridworldParams`]; the agent architecture sees a fixed-width observation
//! regardless of the sampled grid size or object count.

use super::{Env, StepOut};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Maximum number of object slots; unused slots observe as zero channels.
pub const MAX_OBJECTS: usize = 6;
/// Object channels plus one wall channel and one agent channel.
pub const N_CHANNELS: usize = MAX_OBJECTS + 2;

/// One reward object: collecting it yields `reward`, ends the episode with
/// probability `p_terminate`, and once collected it respawns each step with
/// probability `p_respawn`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectSpec {
    pub reward: f64,
    pub p_terminate: f64,
    pub p_respawn: f64,
}

/// A fully instantiated gridworld task.
#[derive(Debug, Clone, PartialEq)]
pub struct GridworldParams {
    pub grid_size: usize,
    pub max_steps: usize,
    pub objects: Vec<ObjectSpec>,
    pub n_walls: usize,
    pub wall_positions: Vec<(usize, usize)>,
    pub object_positions: Vec<(usize, usize)>,
    pub agent_start: (usize, usize),
    pub rng_seed: u64,
}

impl GridworldParams {
    pub fn validate(&self) -> Result<()> {
        if !(4..=11).contains(&self.grid_size) {
            return Err(Error::Config(format!("grid_size {} outside [4,11]", self.grid_size)));
        }
        if self.objects.is_empty() || self.objects.len() > MAX_OBJECTS {
            return Err(Error::Config(format!("object count {} outside [1,6]", self.objects.len())));
        }
        if !(20..=750).contains(&self.max_steps) {
            return Err(Error::Config(format!("max_steps {} outside [20,750]", self.max_steps)));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(-1.0..=1.0).contains(&o.reward)
                || !(0.01..=1.0).contains(&o.p_terminate)
                || !(0.001..=0.1).contains(&o.p_respawn)
            {
                return Err(Error::Config(format!("object {i} hyperparameters out of range: {o:?}")));
            }
        }
        if self.object_positions.len() != self.objects.len() {
            return Err(Error::Config("object position count mismatch".into()));
        }
        // No two entities may share a cell at reset.
        let mut cells: Vec<(usize, usize)> = self.wall_positions.clone();
        cells.extend(&self.object_positions);
        cells.push(self.agent_start);
        let n = cells.len();
        cells.sort_unstable();
        cells.dedup();
        if cells.len() != n {
            return Err(Error::Config("entities overlap at reset".into()));
        }
        if cells.iter().any(|&(r, c)| r >= self.grid_size || c >= self.grid_size) {
            return Err(Error::Config("entity placed outside the grid".into()));
        }
        Ok(())
    }
}

/// Per-field min/max ranges the task sampler draws from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridworldRanges {
    pub grid_size: (usize, usize),
    pub max_steps: (usize, usize),
    pub n_objects: (usize, usize),
    pub reward: (f64, f64),
    pub p_terminate: (f64, f64),
    pub p_respawn: (f64, f64),
    pub n_walls: usize,
}

impl Default for GridworldRanges {
    /// The distribution used for gridworld meta-training.
    fn default() -> Self {
        GridworldRanges {
            grid_size: (4, 11),
            max_steps: (20, 750),
            n_objects: (1, 6),
            reward: (-1.0, 1.0),
            p_terminate: (0.01, 1.0),
            p_respawn: (0.001, 0.1),
            n_walls: 15,
        }
    }
}

impl GridworldRanges {
    pub fn validate(&self) -> Result<()> {
        fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, (lo, hi): (T, T)) -> Result<()> {
            if lo > hi {
                return Err(Error::Config(format!("{name} range inverted: {lo:?} > {hi:?}")));
            }
            Ok(())
        }
        ordered("grid_size", self.grid_size)?;
        ordered("max_steps", self.max_steps)?;
        ordered("n_objects", self.n_objects)?;
        ordered("reward", self.reward)?;
        ordered("p_terminate", self.p_terminate)?;
        ordered("p_respawn", self.p_respawn)
    }
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn uniform_int(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)) -> usize {
    rng.gen_range(lo..=hi)
}

/// Draws one task from the distribution. Placement is collision-free; the
/// wall count is clamped so the agent and every object always fit.
pub fn sample_gridworld_params(ranges: &GridworldRanges, rng: &mut ChaCha8Rng) -> Result<GridworldParams> {
    ranges.validate()?;
    let grid_size = uniform_int(rng, ranges.grid_size);
    let max_steps = uniform_int(rng, ranges.max_steps);
    let n_objects = uniform_int(rng, ranges.n_objects);
    let objects: Vec<ObjectSpec> = (0..n_objects)
        .map(|_| ObjectSpec {
            reward: uniform_in(rng, ranges.reward),
            p_terminate: uniform_in(rng, ranges.p_terminate),
            p_respawn: uniform_in(rng, ranges.p_respawn),
        })
        .collect();

    let cells = grid_size * grid_size;
    // Leave room for the agent and the objects.
    let n_walls = ranges.n_walls.min(cells.saturating_sub(1 + n_objects));

    let mut free: Vec<(usize, usize)> = (0..grid_size)
        .flat_map(|r| (0..grid_size).map(move |c| (r, c)))
        .collect();
    free.shuffle(rng);
    let wall_positions: Vec<_> = free.drain(..n_walls).collect();
    let object_positions: Vec<_> = free.drain(..n_objects).collect();
    let agent_start = free[0];

    let params = GridworldParams {
        grid_size,
        max_steps,
        objects,
        n_walls,
        wall_positions,
        object_positions,
        agent_start,
        rng_seed: rng.gen(),
    };
    params.validate()?;
    Ok(params)
}

/// A gridworld episode runner over one sampled task.
#[derive(Debug, Clone)]
pub struct Gridworld {
    params: GridworldParams,
    wall_mask: Vec<bool>,
    agent_pos: (usize, usize),
    object_pos: Vec<(usize, usize)>,
    object_alive: Vec<bool>,
    step_count: usize,
    terminal: bool,
}

impl Gridworld {
    pub fn new(params: GridworldParams) -> Result<Self> {
        params.validate()?;
        let n = params.grid_size;
        let mut wall_mask = vec![false; n * n];
        for &(r, c) in &params.wall_positions {
            wall_mask[r * n + c] = true;
        }
        let mut env = Gridworld {
            agent_pos: params.agent_start,
            object_pos: params.object_positions.clone(),
            object_alive: vec![true; params.objects.len()],
            step_count: 0,
            terminal: false,
            wall_mask,
            params,
        };
        env.restore();
        Ok(env)
    }

    pub fn params(&self) -> &GridworldParams {
        &self.params
    }

    fn restore(&mut self) {
        self.agent_pos = self.params.agent_start;
        self.object_pos = self.params.object_positions.clone();
        self.object_alive = vec![true; self.params.objects.len()];
        self.step_count = 0;
        self.terminal = false;
    }

    fn observation(&self) -> Vec<f64> {
        let n = self.params.grid_size;
        let mut obs = vec![0.0; N_CHANNELS * n * n];
        for (slot, (&alive, &(r, c))) in self.object_alive.iter().zip(&self.object_pos).enumerate() {
            if alive {
                obs[slot * n * n + r * n + c] = 1.0;
            }
        }
        for &(r, c) in &self.params.wall_positions {
            obs[MAX_OBJECTS * n * n + r * n + c] = 1.0;
        }
        let (ar, ac) = self.agent_pos;
        obs[(MAX_OBJECTS + 1) * n * n + ar * n + ac] = 1.0;
        obs
    }

    fn is_free(&self, cell: (usize, usize)) -> bool {
        let n = self.params.grid_size;
        !self.wall_mask[cell.0 * n + cell.1]
            && cell != self.agent_pos
            && !self
                .object_pos
                .iter()
                .zip(&self.object_alive)
                .any(|(&p, &alive)| alive && p == cell)
    }
}

impl Env for Gridworld {
    fn obs_dim(&self) -> usize {
        N_CHANNELS * self.params.grid_size * self.params.grid_size
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.restore();
        self.observation()
    }

    // Step order: move, collect, respawn check, timeout check.
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> StepOut {
        assert!(!self.terminal, "step called on a terminal gridworld episode");
        assert!(action < 4, "gridworld action {action} out of range");
        let n = self.params.grid_size as isize;
        let (r, c) = (self.agent_pos.0 as isize, self.agent_pos.1 as isize);
        let (nr, nc) = match action {
            0 => (r - 1, c),
            1 => (r + 1, c),
            2 => (r, c - 1),
            _ => (r, c + 1),
        };
        if nr >= 0 && nr < n && nc >= 0 && nc < n && !self.wall_mask[(nr * n + nc) as usize] {
            self.agent_pos = (nr as usize, nc as usize);
        }

        let mut reward = 0.0;
        for slot in 0..self.object_pos.len() {
            if self.object_alive[slot] && self.object_pos[slot] == self.agent_pos {
                reward += self.params.objects[slot].reward;
                self.object_alive[slot] = false;
                if rng.gen::<f64>() < self.params.objects[slot].p_terminate {
                    self.terminal = true;
                }
            }
        }

        if !self.terminal {
            for slot in 0..self.object_pos.len() {
                if !self.object_alive[slot] && rng.gen::<f64>() < self.params.objects[slot].p_respawn {
                    let size = self.params.grid_size;
                    let free: Vec<(usize, usize)> = (0..size)
                        .flat_map(|rr| (0..size).map(move |cc| (rr, cc)))
                        .filter(|&cell| self.is_free(cell))
                        .collect();
                    if let Some(&cell) = free.as_slice().choose(rng) {
                        self.object_pos[slot] = cell;
                        self.object_alive[slot] = true;
                    }
                }
            }
        }

        self.step_count += 1;
        if self.step_count >= self.params.max_steps {
            self.terminal = true;
        }

        StepOut { obs: self.observation(), reward, done: self.terminal }
    }

    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
