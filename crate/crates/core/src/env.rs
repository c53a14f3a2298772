//! MDP interface and the two toy control tasks.
//!
//! Both tasks are pure integrators (`x' = x + clip(a) * dt`) with a
//! deterministic proportional supervisor. `PointGoal2D` adds a narrow winding
//! passage between walls. Near and inside it the supervisor stops using the
//! plain goal-seeking law: it lines up with the entrance, slows down, and
//! tracks the passage center with a stiff lateral gain. That region is where
//! a learned policy ends up disagreeing with the supervisor.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvState(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvAction(pub Vec<f64>);

impl EnvState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl EnvAction {
    pub fn zeros(dim: usize) -> Self {
        EnvAction(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Per-dimension action box `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBounds {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::dims("action bounds", low.len(), high.len()));
        }
        if low.iter().zip(&high).any(|(l, h)| !l.is_finite() || !h.is_finite() || l > h) {
            return Err(Error::InvalidArgument(
                "action bounds must be finite with low <= high".into(),
            ));
        }
        Ok(ActionBounds { low, high })
    }

    pub fn symmetric(dim: usize, limit: f64) -> Self {
        ActionBounds {
            low: vec![-limit; dim],
            high: vec![limit; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn clip(&self, action: &EnvAction) -> EnvAction {
        EnvAction(
            action
                .0
                .iter()
                .zip(self.low.iter().zip(&self.high))
                .map(|(a, (l, h))| a.clamp(*l, *h))
                .collect(),
        )
    }

    pub fn contains(&self, action: &EnvAction) -> bool {
        action
            .0
            .iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(a, (l, h))| *l <= *a && *a <= *h)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn half_range(&self) -> Vec<f64> {
        self.low.iter().zip(&self.high).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    /// `‖high − low‖₂`, the largest possible Euclidean discrepancy between
    /// two in-bounds actions.
    pub fn max_discrepancy(&self) -> f64 {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Episode horizon in steps.
    pub horizon: usize,
    pub bounds: ActionBounds,
    /// Seconds per step.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub done: bool,
    pub success: bool,
    /// The agent left the free space (walls of the corridor).
    pub crashed: bool,
    pub reward: f64,
}

/// Geometry a remote console needs to draw the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub kind: String,
    pub goal: Vec<f64>,
    pub goal_radius: f64,
    /// Axis-aligned wall rectangles `[x_min, y_min, x_max, y_max]`.
    pub walls: Vec<[f64; 4]>,
    pub extent: [f64; 4],
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;

    /// Initial state for `seed`. Identical seeds give identical states.
    fn reset(&self, seed: u64) -> EnvState;

    /// Applies `action` at step index `t` (0-based). `done` fires at the
    /// latest when `t + 1 == horizon`.
    fn step(&self, state: &EnvState, action: &EnvAction, t: usize) -> Result<StepOutcome>;

    /// The analytic supervisor.
    fn supervisor_action(&self, state: &EnvState) -> EnvAction;

    fn scene(&self) -> Scene;

    fn max_action_discrepancy(&self) -> f64 {
        self.spec().bounds.max_discrepancy()
    }

    fn check_state(&self, state: &EnvState) -> Result<()> {
        let spec = self.spec();
        if state.dim() != spec.state_dim {
            return Err(Error::dims("state", spec.state_dim, state.dim()));
        }
        if state.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("state has non-finite entries".into()));
        }
        Ok(())
    }

    fn check_action(&self, action: &EnvAction) -> Result<()> {
        let spec = self.spec();
        if action.dim() != spec.action_dim {
            return Err(Error::dims("action", spec.action_dim, action.dim()));
        }
        Ok(())
    }
}

fn clip1(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

fn seeded(seed: u64) -> Rng {
    crate::rng::rng_for(seed, &[crate::rng::stream::EPISODE])
}

/// One-dimensional set-point tracking: drive `x` to `x_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineTrack1D {
    pub spec: EnvSpec,
    pub x_ref: f64,
    pub gain: f64,
    /// Initial `x` is uniform on `[-start_range, start_range]`.
    pub start_range: f64,
    /// Final `|x - x_ref|` below this counts as success.
    pub tolerance: f64,
}

impl Default for LineTrack1D {
    fn default() -> Self {
        LineTrack1D {
            spec: EnvSpec {
                state_dim: 1,
                action_dim: 1,
                horizon: 50,
                bounds: ActionBounds::symmetric(1, 1.0),
                dt: 0.1,
            },
            x_ref: 0.0,
            gain: 1.0,
            start_range: 1.0,
            tolerance: 0.05,
        }
    }
}

impl Environment for LineTrack1D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = seeded(seed);
        EnvState(vec![rng.random_range(-self.start_range..=self.start_range)])
    }

    fn step(&self, state: &EnvState, action: &EnvAction, t: usize) -> Result<StepOutcome> {
        self.check_state(state)?;
        self.check_action(action)?;
        let a = self.spec.bounds.clip(action);
        let x = state.0[0] + a.0[0] * self.spec.dt;
        let err = (x - self.x_ref).abs();
        let done = t + 1 >= self.spec.horizon;
        Ok(StepOutcome {
            next_state: EnvState(vec![x]),
            done,
            success: done && err <= self.tolerance,
            crashed: false,
            reward: -err * self.spec.dt,
        })
    }

    fn supervisor_action(&self, state: &EnvState) -> EnvAction {
        self.spec
            .bounds
            .clip(&EnvAction(vec![self.gain * (self.x_ref - state.0[0])]))
    }

    fn scene(&self) -> Scene {
        Scene {
            kind: "line_track_1d".into(),
            goal: vec![self.x_ref],
            goal_radius: self.tolerance,
            walls: Vec::new(),
            extent: [-self.start_range - 0.5, -0.5, self.start_range + 0.5, 0.5],
        }
    }
}

/// Walls filling `x ∈ [x_min, x_max]` except for a passage of half-width
/// `half_width` around a (possibly winding) center line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub x_min: f64,
    pub x_max: f64,
    /// Center of the entrance.
    pub center_y: f64,
    pub half_width: f64,
    /// Lateral gain the supervisor uses in the approach zone and passage.
    pub lateral_gain: f64,
    /// Before the entrance, forward speed is scaled by
    /// `1 − |y − center_y| / align_band` (floored at 0).
    pub align_band: f64,
    /// Length in `x` of the alignment zone in front of the walls.
    pub approach: f64,
    /// Forward speed cap between the walls.
    pub speed: f64,
    /// The passage winds: its center is
    /// `center_y + wiggle_amp · (1 − cos(wiggle_freq · (x − x_min)))`.
    pub wiggle_amp: f64,
    pub wiggle_freq: f64,
    /// Wall extent in `y` for drawing; collisions treat the walls as unbounded.
    pub wall_extent: f64,
}

impl Corridor {
    pub fn blocks(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && (y - self.center_at(x)).abs() > self.half_width
    }

    /// Passage center at `x`; the entrance is always at `center_y`.
    pub fn center_at(&self, x: f64) -> f64 {
        let u = (x - self.x_min).max(0.0);
        self.center_y + self.wiggle_amp * (1.0 - (self.wiggle_freq * u).cos())
    }

    fn center_slope(&self, x: f64) -> f64 {
        if x < self.x_min {
            return 0.0;
        }
        self.wiggle_amp * self.wiggle_freq * (self.wiggle_freq * (x - self.x_min)).sin()
    }

    fn in_approach(&self, x: f64) -> bool {
        x >= self.x_min - self.approach && x <= self.x_max
    }

    /// Whether the segment from `p` to `q` touches a wall. The segment is
    /// sampled finely enough that a full-speed step cannot tunnel through.
    fn segment_blocked(&self, p: [f64; 2], q: [f64; 2]) -> bool {
        const SAMPLES: usize = 16;
        (0..=SAMPLES).any(|i| {
            let s = i as f64 / SAMPLES as f64;
            self.blocks(p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1]))
        })
    }
}

/// Planar point robot driven to a goal, optionally through a corridor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointGoal2D {
    pub spec: EnvSpec,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub gain: f64,
    /// Start `x` range, inclusive.
    pub start_x: [f64; 2],
    /// Start `y` range, inclusive.
    pub start_y: [f64; 2],
    /// Wall segments, ordered by `x`.
    pub corridors: Vec<Corridor>,
}

impl Default for PointGoal2D {
    fn default() -> Self {
        PointGoal2D {
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 2,
                horizon: 100,
                bounds: ActionBounds::symmetric(2, 1.0),
                dt: 0.1,
            },
            goal: [0.8, 0.0],
            goal_radius: 0.05,
            gain: 1.0,
            start_x: [-0.85, -0.75],
            start_y: [-0.2, 0.2],
            corridors: vec![Corridor {
                x_min: -0.3,
                x_max: 0.7,
                center_y: 0.0,
                half_width: 0.05,
                lateral_gain: 8.0,
                align_band: 1.0,
                approach: 0.4,
                speed: 0.3,
                wiggle_amp: 0.05,
                wiggle_freq: 10.0 * std::f64::consts::PI,
                wall_extent: 1.0,
            }],
        }
    }
}

impl PointGoal2D {
    /// Open plane, no corridor.
    pub fn open(goal: [f64; 2]) -> Self {
        PointGoal2D {
            goal,
            corridors: Vec::new(),
            ..Default::default()
        }
    }

    fn distance_to_goal(&self, p: [f64; 2]) -> f64 {
        ((p[0] - self.goal[0]).powi(2) + (p[1] - self.goal[1]).powi(2)).sqrt()
    }
}

impl Environment for PointGoal2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = seeded(seed);
        loop {
            let x = rng.random_range(self.start_x[0]..=self.start_x[1]);
            let y = rng.random_range(self.start_y[0]..=self.start_y[1]);
            let blocked = self.corridors.iter().any(|c| c.blocks(x, y));
            if self.distance_to_goal([x, y]) > self.goal_radius && !blocked {
                return EnvState(vec![x, y]);
            }
        }
    }

    fn step(&self, state: &EnvState, action: &EnvAction, t: usize) -> Result<StepOutcome> {
        self.check_state(state)?;
        self.check_action(action)?;
        let a = self.spec.bounds.clip(action);
        let p = [state.0[0], state.0[1]];
        let q = [p[0] + a.0[0] * self.spec.dt, p[1] + a.0[1] * self.spec.dt];
        let crashed = self
            .corridors
            .iter()
            .any(|c| c.segment_blocked(p, q));
        let dist = self.distance_to_goal(q);
        let success = !crashed && dist <= self.goal_radius;
        Ok(StepOutcome {
            next_state: EnvState(q.to_vec()),
            done: crashed || success || t + 1 >= self.spec.horizon,
            success,
            crashed,
            reward: -dist * self.spec.dt,
        })
    }

    fn supervisor_action(&self, state: &EnvState) -> EnvAction {
        let (x, y) = (state.0[0], state.0[1]);
        let next = self.corridors.iter().find(|c| x <= c.x_max);
        let raw = match next {
            Some(c) if c.in_approach(x) => {
                let lateral = c.center_at(x) - y;
                let mut forward = clip1(self.gain * (self.goal[0] - x));
                if x < c.x_min {
                    forward *= (1.0 - lateral.abs() / c.align_band).max(0.0);
                    // Arrive at the entrance no faster than the passage speed.
                    forward = forward.min(((c.x_min - x) / self.spec.dt).max(c.speed));
                } else {
                    forward = forward.min(c.speed);
                }
                vec![forward, c.center_slope(x) * forward + c.lateral_gain * lateral]
            }
            _ => vec![self.gain * (self.goal[0] - x), self.gain * (self.goal[1] - y)],
        };
        self.spec.bounds.clip(&EnvAction(raw))
    }

    fn scene(&self) -> Scene {
        let walls = self
            .corridors
            .iter()
            .flat_map(|c| {
                [
                    [c.x_min, c.center_y + c.half_width, c.x_max, c.center_y + c.wall_extent],
                    [c.x_min, c.center_y - c.wall_extent, c.x_max, c.center_y - c.half_width],
                ]
            })
            .collect();
        Scene {
            kind: "point_goal_2d".into(),
            goal: self.goal.to_vec(),
            goal_radius: self.goal_radius,
            walls,
            extent: [-1.0, -1.0, 1.0, 1.0],
        }
    }
}

/// Serializable environment selection used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    LineTrack1d {
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        gain: Option<f64>,
    },
    PointGoal2d {
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        gain: Option<f64>,
        #[serde(default)]
        corridor_half_width: Option<f64>,
        #[serde(default)]
        lateral_gain: Option<f64>,
        #[serde(default)]
        align_band: Option<f64>,
        #[serde(default)]
        wiggle_amp: Option<f64>,
        /// Remove the walls entirely.
        #[serde(default)]
        open: bool,
    },
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::PointGoal2d {
            horizon: None,
            gain: None,
            corridor_half_width: None,
            lateral_gain: None,
            align_band: None,
            wiggle_amp: None,
            open: false,
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        match self {
            EnvConfig::LineTrack1d { horizon, gain } => {
                let mut env = LineTrack1D::default();
                if let Some(h) = horizon {
                    env.spec.horizon = *h;
                }
                if let Some(g) = gain {
                    env.gain = *g;
                }
                check_spec(&env.spec)?;
                Ok(Box::new(env))
            }
            EnvConfig::PointGoal2d {
                horizon,
                gain,
                corridor_half_width,
                lateral_gain,
                align_band,
                wiggle_amp,
                open,
            } => {
                let mut env = PointGoal2D::default();
                if let Some(h) = horizon {
                    env.spec.horizon = *h;
                }
                if let Some(g) = gain {
                    env.gain = *g;
                }
                if *open {
                    env.corridors.clear();
                }
                for c in &mut env.corridors {
                    if let Some(w) = corridor_half_width {
                        c.half_width = *w;
                    }
                    if let Some(g) = lateral_gain {
                        c.lateral_gain = *g;
                    }
                    if let Some(b) = align_band {
                        c.align_band = *b;
                    }
                    if let Some(a) = wiggle_amp {
                        c.wiggle_amp = *a;
                    }
                    if !(c.half_width > 0.0 && c.align_band > 0.0 && c.lateral_gain >= 0.0) {
                        return Err(Error::InvalidArgument(
                            "corridor needs half_width > 0, align_band > 0 and lateral_gain >= 0".into(),
                        ));
                    }
                }
                check_spec(&env.spec)?;
                Ok(Box::new(env))
            }
        }
    }
}

fn check_spec(spec: &EnvSpec) -> Result<()> {
    if spec.horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if spec.low_not_below_high() {
        return Err(Error::InvalidArgument("action bounds need low < high".into()));
    }
    Ok(())
}

impl EnvSpec {
    fn low_not_below_high(&self) -> bool {
        self.bounds.low.iter().zip(&self.bounds.high).any(|(l, h)| l >= h)
    }
}
