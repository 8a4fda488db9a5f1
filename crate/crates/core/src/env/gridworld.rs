//! Item-collection gridworld with partial egocentric observability.
//!
//! The board is `grid_size x grid_size` tiles with the outer ring fixed to
//! walls. The agent turns left/right or moves forward; moving into a wall is
//! a no-op that still consumes a timestep. Collecting an item at timestep `t`
//! pays `1 - t/max_len`; entering lava costs `0.1 * (1 - t/max_len)` and
//! removes the lava. The episode terminates when every item is collected and
//! truncates at `max_len` steps.
//!
//! Observations bundle five components: the egocentric forward view, a
//! movement-history heatmap over the whole board (last-visit timestep,
//! normalized), a retrospective board holding the latest observed contents of
//! every tile (an unknown sentinel where nothing was ever seen), the item
//! count collected so far, and normalized time. Under full observability the
//! retrospective board is simply the true board. The flat policy encoding
//! prefixes the bundle with the agent's own pose (position + facing), which
//! the player always knows; hidden tiles stay hidden either way.

use super::{EnvSpec, Environment, EpisodeRecord, Observability, StepOutcome};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub mod action {
    pub const TURN_LEFT: usize = 0;
    pub const TURN_RIGHT: usize = 1;
    pub const FORWARD: usize = 2;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Wall,
    Item,
    Lava,
}

impl Cell {
    /// Flat-encoding feature; 0 is reserved for the unknown sentinel.
    pub fn feature<T: Scalar>(self) -> T {
        match self {
            Cell::Empty => T::fl(0.25),
            Cell::Wall => T::fl(0.5),
            Cell::Item => T::fl(0.75),
            Cell::Lava => T::fl(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub fn left(self) -> Direction {
        match self {
            Direction::North => Direction::West,
            Direction::West => Direction::South,
            Direction::South => Direction::East,
            Direction::East => Direction::North,
        }
    }

    pub fn right(self) -> Direction {
        self.left().left().left()
    }

    fn index(self) -> usize {
        match self {
            Direction::North => 0,
            Direction::East => 1,
            Direction::South => 2,
            Direction::West => 3,
        }
    }

    fn from_index(i: usize) -> Direction {
        [Direction::North, Direction::East, Direction::South, Direction::West][i % 4]
    }

    /// (row, col) step when moving forward.
    fn forward_delta(self) -> (isize, isize) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }

    /// (row, col) step toward the agent's right-hand side.
    fn right_delta(self) -> (isize, isize) {
        self.right().forward_delta()
    }

    fn glyph(self) -> char {
        match self {
            Direction::North => '^',
            Direction::East => '>',
            Direction::South => 'v',
            Direction::West => '<',
        }
    }
}

fn default_grid_size() -> usize {
    11
}
fn default_view_size() -> usize {
    3
}
fn default_n_items() -> usize {
    5
}
fn default_n_walls() -> usize {
    10
}
fn default_n_lava() -> usize {
    10
}
fn default_max_len() -> usize {
    484
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Board side length, outer wall ring included.
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Side length of the square forward view; odd, smaller than the board.
    #[serde(default = "default_view_size")]
    pub view_size: usize,
    #[serde(default = "default_n_items")]
    pub n_items: usize,
    #[serde(default = "default_n_walls")]
    pub n_walls: usize,
    #[serde(default = "default_n_lava")]
    pub n_lava: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            grid_size: default_grid_size(),
            view_size: default_view_size(),
            n_items: default_n_items(),
            n_walls: default_n_walls(),
            n_lava: default_n_lava(),
            max_len: default_max_len(),
        }
    }
}

impl GridConfig {
    /// Small preset for fast experiments and the test suite.
    pub fn desk() -> Self {
        GridConfig { grid_size: 7, view_size: 3, n_items: 3, n_walls: 4, n_lava: 4, max_len: 196 }
    }

    pub fn interior_cells(&self) -> usize {
        (self.grid_size - 2) * (self.grid_size - 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 3 {
            return Err(Error::Config("grid_size must be at least 3".into()));
        }
        if self.view_size % 2 == 0 || self.view_size >= self.grid_size {
            return Err(Error::Config(format!(
                "view_size must be odd and smaller than grid_size, got {} vs {}",
                self.view_size, self.grid_size
            )));
        }
        if self.n_items + self.n_walls + self.n_lava >= self.interior_cells() {
            return Err(Error::Config(format!(
                "overfull grid: {} objects do not fit {} interior cells with an agent",
                self.n_items + self.n_walls + self.n_lava,
                self.interior_cells()
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-truth state plus the observation memory (visit times, seen tiles)
/// that the partial observation is a pure function of.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridworldState {
    pub grid: Vec<Cell>,
    pub agent: (usize, usize),
    pub dir: Direction,
    pub t: usize,
    pub items_remaining: usize,
    pub items_collected: usize,
    /// Timestep each tile was last occupied; `None` if never.
    pub last_visit: Vec<Option<usize>>,
    /// Latest observed contents per tile; `None` if never inside the view.
    pub seen: Vec<Option<Cell>>,
}

/// Five-component observation bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct GridObservation<T> {
    /// Current contents of the forward view, agent frame, near-to-far rows.
    pub agent_view: Vec<Cell>,
    /// Last-visit timestep per tile normalized by `max_len`; unvisited is 0.
    pub movement_history: Vec<T>,
    /// Latest observed contents per tile; `None` is the unknown sentinel.
    pub retrospective_board: Vec<Option<Cell>>,
    pub items_collected: usize,
    /// `t / max_len`.
    pub time: T,
}

/// Two-channel detector input: where the player went and what the board was.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorImageGrid<T> {
    pub final_heatmap: Vec<T>,
    pub initial_board: Vec<T>,
}

impl<T: Scalar> DetectorImageGrid<T> {
    pub fn flatten(&self) -> Vec<T> {
        let mut out = self.final_heatmap.clone();
        out.extend_from_slice(&self.initial_board);
        out
    }

    /// Flat CSV row (heatmap cells, then board cells).
    pub fn csv_row(&self) -> Vec<String> {
        self.flatten().iter().map(|v| format!("{v}")).collect()
    }
}

pub struct Gridworld {
    cfg: GridConfig,
}

impl Gridworld {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Gridworld { cfg })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    fn g(&self) -> usize {
        self.cfg.grid_size
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        r * self.g() + c
    }

    /// View footprint in agent frame order: rows from the agent's own row
    /// outward, columns left to right. Cells outside the board are `None`.
    fn footprint(&self, state: &GridworldState) -> Vec<Option<(usize, usize)>> {
        let v = self.cfg.view_size as isize;
        let half = v / 2;
        let (fr, fc) = state.dir.forward_delta();
        let (rr, rc) = state.dir.right_delta();
        let (ar, ac) = (state.agent.0 as isize, state.agent.1 as isize);
        let g = self.g() as isize;
        let mut cells = Vec::with_capacity((v * v) as usize);
        for f in 0..v {
            for l in -half..=half {
                let r = ar + fr * f + rr * l;
                let c = ac + fc * f + rc * l;
                if r < 0 || r >= g || c < 0 || c >= g {
                    cells.push(None);
                } else {
                    cells.push(Some((r as usize, c as usize)));
                }
            }
        }
        cells
    }

    fn mark_seen(&self, state: &mut GridworldState) {
        for cell in self.footprint(state).into_iter().flatten() {
            let i = self.idx(cell.0, cell.1);
            state.seen[i] = Some(state.grid[i]);
        }
    }

    /// Observation bundle for either observability mode.
    pub fn observation<T: Scalar>(
        &self,
        state: &GridworldState,
        mode: Observability,
    ) -> GridObservation<T> {
        let g2 = self.g() * self.g();
        let max_len = T::from_usize_(self.cfg.max_len);
        let agent_view = self
            .footprint(state)
            .into_iter()
            .map(|cell| cell.map_or(Cell::Wall, |(r, c)| state.grid[self.idx(r, c)]))
            .collect();
        let movement_history = (0..g2)
            .map(|i| match state.last_visit[i] {
                Some(t) => T::from_usize_(t) / max_len,
                None => T::zero(),
            })
            .collect();
        let retrospective_board = match mode {
            Observability::Partial => state.seen.clone(),
            Observability::Full => state.grid.iter().map(|&c| Some(c)).collect(),
        };
        GridObservation {
            agent_view,
            movement_history,
            retrospective_board,
            items_collected: state.items_collected,
            time: T::from_usize_(state.t) / max_len,
        }
    }

    fn flatten_bundle<T: Scalar>(&self, obs: &GridObservation<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.bundle_width());
        out.extend(obs.agent_view.iter().map(|c| c.feature::<T>()));
        out.extend_from_slice(&obs.movement_history);
        out.extend(
            obs.retrospective_board
                .iter()
                .map(|c| c.map_or(T::zero(), |c| c.feature::<T>())),
        );
        out.push(T::from_usize_(obs.items_collected) / T::from_usize_(self.cfg.n_items.max(1)));
        out.push(obs.time);
        out
    }

    fn bundle_width(&self) -> usize {
        let g2 = self.g() * self.g();
        self.cfg.view_size * self.cfg.view_size + 2 * g2 + 2
    }

    fn pose_features<T: Scalar>(&self, state: &GridworldState) -> Vec<T> {
        let g = T::from_usize_(self.g());
        let mut out = vec![
            T::from_usize_(state.agent.0) / g,
            T::from_usize_(state.agent.1) / g,
            T::zero(),
            T::zero(),
            T::zero(),
            T::zero(),
        ];
        out[2 + state.dir.index()] = T::one();
        out
    }

    /// Two-channel detector image: final movement heatmap + initial board.
    ///
    /// Panics on empty episodes (nothing was played, nothing to encode).
    pub fn detector_image<T: Scalar>(
        &self,
        episode: &EpisodeRecord<T, GridworldState>,
    ) -> DetectorImageGrid<T> {
        assert!(!episode.states.is_empty(), "cannot encode an empty episode");
        // Stored states precede their action; replay the last transition to
        // recover the post-episode heatmap.
        let last = episode.states.last().unwrap();
        let outcome = Environment::<T>::step(self, last, *episode.actions.last().unwrap())
            .expect("recorded episode must replay");
        let final_state: GridworldState = outcome.next_state;
        let obs: GridObservation<T> = self.observation(&final_state, Observability::Partial);
        let initial_board =
            episode.states[0].grid.iter().map(|c| c.feature::<T>()).collect();
        DetectorImageGrid { final_heatmap: obs.movement_history, initial_board }
    }

    /// ASCII board: walls `W`, items `I`, lava `L`, empty `.`, agent `>^v<`.
    pub fn render(&self, state: &GridworldState) -> String {
        let g = self.g();
        let mut out = String::with_capacity((g + 1) * g);
        for r in 0..g {
            for c in 0..g {
                let ch = if state.agent == (r, c) {
                    state.dir.glyph()
                } else {
                    match state.grid[self.idx(r, c)] {
                        Cell::Empty => '.',
                        Cell::Wall => 'W',
                        Cell::Item => 'I',
                        Cell::Lava => 'L',
                    }
                };
                out.push(ch);
            }
            if r + 1 < g {
                out.push('\n');
            }
        }
        out
    }

    /// Inverse of [`Gridworld::render`] for building fixture states. Visit
    /// and seen memory are initialized as if the state were freshly reset at
    /// timestep `t`.
    pub fn state_from_ascii(&self, art: &str, t: usize) -> Result<GridworldState> {
        let g = self.g();
        let rows: Vec<&str> = art.trim().lines().map(str::trim).collect();
        if rows.len() != g || rows.iter().any(|r| r.chars().count() != g) {
            return Err(Error::Format(format!("expected a {g}x{g} character grid")));
        }
        let mut grid = vec![Cell::Empty; g * g];
        let mut agent = None;
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                let i = r * g + c;
                grid[i] = match ch {
                    '.' => Cell::Empty,
                    'W' => Cell::Wall,
                    'I' => Cell::Item,
                    'L' => Cell::Lava,
                    '^' | '>' | 'v' | '<' => {
                        let dir = match ch {
                            '^' => Direction::North,
                            '>' => Direction::East,
                            'v' => Direction::South,
                            _ => Direction::West,
                        };
                        agent = Some(((r, c), dir));
                        Cell::Empty
                    }
                    other => return Err(Error::Format(format!("unknown tile '{other}'"))),
                };
            }
        }
        let ((r, c), dir) = agent.ok_or_else(|| Error::Format("grid has no agent".into()))?;
        let items = grid.iter().filter(|&&cell| cell == Cell::Item).count();
        let mut state = GridworldState {
            grid,
            agent: (r, c),
            dir,
            t,
            items_remaining: items,
            items_collected: self.cfg.n_items.saturating_sub(items),
            last_visit: vec![None; g * g],
            seen: vec![None; g * g],
        };
        state.last_visit[self.idx(r, c)] = Some(t);
        self.mark_seen(&mut state);
        Ok(state)
    }
}

impl EnvSpec for Gridworld {
    type State = GridworldState;

    fn name(&self) -> &'static str {
        "gridworld"
    }

    fn action_count(&self) -> usize {
        3
    }

    fn obs_width(&self, mode: Observability) -> usize {
        let pose = 6;
        match mode {
            Observability::Partial => pose + self.bundle_width(),
            Observability::Full => pose + 2 * self.bundle_width(),
        }
    }

    fn max_len(&self) -> usize {
        self.cfg.max_len
    }

    fn detector_width(&self) -> usize {
        2 * self.g() * self.g()
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> Result<Self::State> {
        let g = self.g();
        let mut grid = vec![Cell::Empty; g * g];
        for i in 0..g {
            grid[self.idx(0, i)] = Cell::Wall;
            grid[self.idx(g - 1, i)] = Cell::Wall;
            grid[self.idx(i, 0)] = Cell::Wall;
            grid[self.idx(i, g - 1)] = Cell::Wall;
        }
        let interior: Vec<(usize, usize)> =
            (1..g - 1).flat_map(|r| (1..g - 1).map(move |c| (r, c))).collect();
        let needed = self.cfg.n_items + self.cfg.n_walls + self.cfg.n_lava;
        if needed + 1 > interior.len() {
            return Err(Error::Config("overfull grid at reset".into()));
        }
        let agent = interior[rng.gen_range(0..interior.len())];
        let dir = Direction::from_index(rng.gen_range(0..4usize));
        let mut free: Vec<(usize, usize)> =
            interior.into_iter().filter(|&cell| cell != agent).collect();
        free.shuffle(rng);
        let place = |grid: &mut Vec<Cell>, count: usize, kind: Cell, from: usize| {
            for &(r, c) in &free[from..from + count] {
                grid[r * g + c] = kind;
            }
        };
        place(&mut grid, self.cfg.n_items, Cell::Item, 0);
        place(&mut grid, self.cfg.n_walls, Cell::Wall, self.cfg.n_items);
        place(&mut grid, self.cfg.n_lava, Cell::Lava, self.cfg.n_items + self.cfg.n_walls);
        let mut state = GridworldState {
            grid,
            agent,
            dir,
            t: 0,
            items_remaining: self.cfg.n_items,
            items_collected: 0,
            last_visit: vec![None; g * g],
            seen: vec![None; g * g],
        };
        state.last_visit[self.idx(agent.0, agent.1)] = Some(0);
        self.mark_seen(&mut state);
        Ok(state)
    }

    fn is_terminal(&self, state: &Self::State) -> bool {
        state.items_remaining == 0 || state.t >= self.cfg.max_len
    }
}

impl<T: Scalar> Environment<T> for Gridworld {
    fn step(&self, state: &Self::State, action: usize) -> Result<StepOutcome<Self::State, T>> {
        if self.is_terminal(state) {
            return Err(Error::Contract("step on a finished gridworld episode".into()));
        }
        let mut next = state.clone();
        let mut reward = T::zero();
        let remaining = T::one() - T::from_usize_(state.t) / T::from_usize_(self.cfg.max_len);
        match action {
            action::TURN_LEFT => next.dir = state.dir.left(),
            action::TURN_RIGHT => next.dir = state.dir.right(),
            action::FORWARD => {
                let (dr, dc) = state.dir.forward_delta();
                let r = (state.agent.0 as isize + dr) as usize;
                let c = (state.agent.1 as isize + dc) as usize;
                let i = self.idx(r, c);
                match next.grid[i] {
                    Cell::Wall => {}
                    Cell::Empty => next.agent = (r, c),
                    Cell::Item => {
                        next.agent = (r, c);
                        next.grid[i] = Cell::Empty;
                        next.items_remaining -= 1;
                        next.items_collected += 1;
                        reward = remaining;
                    }
                    Cell::Lava => {
                        next.agent = (r, c);
                        next.grid[i] = Cell::Empty;
                        reward = T::fl(-0.1) * remaining;
                    }
                }
            }
            other => {
                return Err(Error::Contract(format!("invalid gridworld action {other}")));
            }
        }
        next.t += 1;
        let agent_idx = self.idx(next.agent.0, next.agent.1);
        next.last_visit[agent_idx] = Some(next.t);
        self.mark_seen(&mut next);
        let terminated = next.items_remaining == 0;
        let truncated = !terminated && next.t >= self.cfg.max_len;
        Ok(StepOutcome { next_state: next, reward, terminated, truncated })
    }

    fn observe(&self, state: &Self::State, mode: Observability) -> Vec<T> {
        let mut out = self.pose_features::<T>(state);
        let partial: GridObservation<T> = self.observation(state, Observability::Partial);
        out.extend(self.flatten_bundle(&partial));
        if mode == Observability::Full {
            let full: GridObservation<T> = self.observation(state, Observability::Full);
            out.extend(self.flatten_bundle(&full));
        }
        out
    }

    fn encode_detector(&self, episode: &EpisodeRecord<T, Self::State>) -> Vec<T> {
        self.detector_image(episode).flatten()
    }
}
