//! Two-agent pursuit scene: a mobile ground agent looking forward, an
//! overhead observer, a static target and rectangular obstacles.

mod geometry;
mod render;

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use geometry::{wrap_angle, Rect};
pub use render::{
    front_column, front_frame, render_front, render_top, FRONT_OBSTACLE_MAX, RENDER_RANGE,
};

pub const REWARD_SUCCESS: f64 = 100.0;
pub const REWARD_FAILURE: f64 = -100.0;
pub const REWARD_CLOSER: f64 = 1.0;
pub const TIME_PENALTY: f64 = 0.05;
/// Width of one frame of the rigid-body vector.
pub const STATE_FRAME: usize = 12;
pub const FRAMES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Side of the square region `[0, region]²`.
    pub region: f64,
    pub obstacles: Vec<Rect>,
    pub d_success: f64,
    pub d_fail: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub max_episode_length: usize,
    pub front_height: usize,
    pub front_width: usize,
    pub top_height: usize,
    pub top_width: usize,
    pub fov_degrees: f64,
    pub target_radius: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            region: 40.0,
            obstacles: vec![
                Rect::new(0.0, 0.0, 14.0, 14.0),
                Rect::new(26.0, 0.0, 40.0, 14.0),
                Rect::new(0.0, 26.0, 14.0, 40.0),
                Rect::new(26.0, 26.0, 40.0, 40.0),
            ],
            d_success: 3.0,
            d_fail: 30.0,
            v_max: 1.0,
            omega_max: 0.3,
            max_episode_length: 200,
            front_height: 16,
            front_width: 32,
            top_height: 32,
            top_width: 32,
            fov_degrees: 90.0,
            target_radius: 1.0,
        }
    }
}

impl SceneConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scene: {m}")));
        if !(self.region > 0.0) {
            return bad("region must be positive");
        }
        if !(self.d_success > 0.0 && self.d_fail > self.d_success) {
            return bad("need 0 < d_success < d_fail");
        }
        if self.max_episode_length == 0 {
            return bad("max_episode_length must be positive");
        }
        if self.front_height == 0
            || self.front_width == 0
            || self.top_height == 0
            || self.top_width == 0
        {
            return bad("image sizes must be positive");
        }
        if !self.front_height.is_multiple_of(4)
            || !self.front_width.is_multiple_of(4)
            || !self.top_height.is_multiple_of(4)
            || !self.top_width.is_multiple_of(4)
        {
            return bad("image sizes must be multiples of 4");
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return bad("fov_degrees must lie in (0, 180)");
        }
        for r in &self.obstacles {
            if !(r.x1 > r.x0 && r.y1 > r.y0) {
                return bad("obstacle rectangles must have positive extent");
            }
        }
        if self.free_area() <= 0.0 {
            return bad("obstacles cover the whole region");
        }
        Ok(())
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.region, self.region)
    }

    pub fn fov(&self) -> f64 {
        self.fov_degrees.to_radians()
    }

    pub fn front_shape(&self) -> [usize; 3] {
        [FRAMES, self.front_height, self.front_width]
    }

    pub fn top_shape(&self) -> [usize; 3] {
        [3, self.top_height, self.top_width]
    }

    pub fn vec_obs_width(&self) -> usize {
        FRAMES * STATE_FRAME
    }

    pub fn in_free_space(&self, x: f64, y: f64) -> bool {
        self.bounds().contains(x, y) && !self.obstacles.iter().any(|r| r.contains(x, y))
    }

    /// Obstacle-free area within `cell`, assuming obstacles do not overlap.
    pub fn free_area_in(&self, cell: &Rect) -> f64 {
        let c = cell.intersection(&self.bounds());
        c.area()
            - self
                .obstacles
                .iter()
                .map(|r| r.intersection(&c).area())
                .sum::<f64>()
    }

    pub fn free_area(&self) -> f64 {
        self.free_area_in(&self.bounds())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Realized velocity: forward units/step and yaw radians/step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Velocity {
    pub forward: f64,
    pub yaw_rate: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Frame {
    pub pose: Pose,
    pub vel: Velocity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub agent1_pose: Pose,
    pub agent1_vel: Velocity,
    pub target_pos: (f64, f64),
    pub obstacles: Vec<Rect>,
    pub step_count: usize,
    pub prev_distance: f64,
    /// Frames `t-2, t-1, t`; the last entry mirrors the current pose.
    pub history: [Frame; FRAMES],
    pub done: bool,
}

impl WorldState {
    pub fn distance(&self) -> f64 {
        let (tx, ty) = self.target_pos;
        (self.agent1_pose.x - tx).hypot(self.agent1_pose.y - ty)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    None,
    Reached,
    Collided,
    Strayed,
    Timeout,
}

impl Event {
    pub fn is_terminal(self) -> bool {
        self != Event::None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationBundle {
    pub vec_obs1: Vec<f32>,
    pub front_image: Tensor<f32>,
    pub top_image: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: ObservationBundle,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    pub event: Event,
}

/// Reward for moving between two consecutive distances. Terminal rewards
/// replace the shaping terms.
pub fn compute_reward(d_prev: f64, d_cur: f64, event: Event) -> f64 {
    match event {
        Event::Reached => REWARD_SUCCESS,
        Event::Collided | Event::Strayed => REWARD_FAILURE,
        Event::None | Event::Timeout => {
            let closer = if d_cur < d_prev { REWARD_CLOSER } else { 0.0 };
            closer - TIME_PENALTY
        }
    }
}

/// Vector observation: three frames of
/// `(x, y, sin h, cos h, v, ω, dx_center, dy_center, 0, 0, 0, 0)` with positions
/// divided by the region size and velocities by their limits.
pub fn vector_observation(state: &WorldState, cfg: &SceneConfig) -> Vec<f32> {
    let mut out = Vec::with_capacity(FRAMES * STATE_FRAME);
    let c = cfg.region / 2.0;
    for f in &state.history {
        let p = f.pose;
        let row = [
            p.x / cfg.region,
            p.y / cfg.region,
            p.heading.sin(),
            p.heading.cos(),
            f.vel.forward / cfg.v_max,
            f.vel.yaw_rate / cfg.omega_max,
            (c - p.x) / cfg.region,
            (c - p.y) / cfg.region,
        ];
        out.extend(row.iter().map(|&v| v as f32));
        out.extend(std::iter::repeat_n(0.0f32, STATE_FRAME - row.len()));
    }
    out
}

#[derive(Clone, Debug)]
pub struct Env {
    cfg: SceneConfig,
    state: WorldState,
}

impl Env {
    pub fn new(cfg: SceneConfig) -> Result<Self> {
        cfg.validate()?;
        let state = WorldState {
            agent1_pose: Pose::default(),
            agent1_vel: Velocity::default(),
            target_pos: (0.0, 0.0),
            obstacles: cfg.obstacles.clone(),
            step_count: 0,
            prev_distance: 0.0,
            history: [Frame::default(); FRAMES],
            done: true,
        };
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &SceneConfig {
        &self.cfg
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    fn sample_free<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        loop {
            let x = rng.random_range(0.0..self.cfg.region);
            let y = rng.random_range(0.0..self.cfg.region);
            if self.cfg.in_free_space(x, y) {
                return (x, y);
            }
        }
    }

    /// Starts an episode. The agent is uniform over free space; the target is
    /// redrawn until its distance lies strictly between the two thresholds.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> ObservationBundle {
        let (x, y) = self.sample_free(rng);
        let heading = rng.random_range(0.0..TAU);
        let target = loop {
            let t = self.sample_free(rng);
            let d = (t.0 - x).hypot(t.1 - y);
            if d > self.cfg.d_success && d < self.cfg.d_fail {
                break t;
            }
        };
        let pose = Pose { x, y, heading };
        let frame = Frame {
            pose,
            vel: Velocity::default(),
        };
        self.state = WorldState {
            agent1_pose: pose,
            agent1_vel: Velocity::default(),
            target_pos: target,
            obstacles: self.cfg.obstacles.clone(),
            step_count: 0,
            prev_distance: 0.0,
            history: [frame; FRAMES],
            done: false,
        };
        self.state.prev_distance = self.state.distance();
        self.observe()
    }

    /// Places the world in an explicit configuration (tests and tools).
    pub fn reset_to(&mut self, pose: Pose, target: (f64, f64)) -> ObservationBundle {
        let frame = Frame {
            pose,
            vel: Velocity::default(),
        };
        self.state = WorldState {
            agent1_pose: pose,
            agent1_vel: Velocity::default(),
            target_pos: target,
            obstacles: self.cfg.obstacles.clone(),
            step_count: 0,
            prev_distance: 0.0,
            history: [frame; FRAMES],
            done: false,
        };
        self.state.prev_distance = self.state.distance();
        self.observe()
    }

    pub fn observe(&self) -> ObservationBundle {
        ObservationBundle {
            vec_obs1: vector_observation(&self.state, &self.cfg),
            front_image: render_front(&self.state, &self.cfg),
            top_image: render_top(&self.state, &self.cfg),
        }
    }

    /// Advances one decision step with `a_m = (v, ω)`, each clipped to `[-1, 1]`.
    pub fn step(&mut self, a_m: &[f64]) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::StepAfterDone);
        }
        if a_m.len() != 2 {
            return Err(Error::shape("env.step", &[2], &[a_m.len()]));
        }
        if a_m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actuator command".into()));
        }
        let v = a_m[0].clamp(-1.0, 1.0) * self.cfg.v_max;
        let w = a_m[1].clamp(-1.0, 1.0) * self.cfg.omega_max;
        let old = self.state.agent1_pose;
        let heading = wrap_angle(old.heading + w);
        let new = Pose {
            x: old.x + v * heading.cos(),
            y: old.y + v * heading.sin(),
            heading,
        };
        let collided = !self.cfg.bounds().contains(new.x, new.y)
            || self
                .cfg
                .obstacles
                .iter()
                .any(|r| r.hits_segment((old.x, old.y), (new.x, new.y)));

        let s = &mut self.state;
        let d_prev = s.distance();
        s.agent1_pose = new;
        s.agent1_vel = Velocity {
            forward: v,
            yaw_rate: w,
        };
        s.history.rotate_left(1);
        s.history[FRAMES - 1] = Frame {
            pose: new,
            vel: s.agent1_vel,
        };
        s.step_count += 1;
        let d_cur = s.distance();
        let event = if collided {
            Event::Collided
        } else if d_cur > self.cfg.d_fail {
            Event::Strayed
        } else if d_cur <= self.cfg.d_success {
            Event::Reached
        } else if s.step_count >= self.cfg.max_episode_length {
            Event::Timeout
        } else {
            Event::None
        };
        let reward = compute_reward(d_prev, d_cur, event);
        s.prev_distance = d_prev;
        s.done = event.is_terminal();
        Ok(StepOutcome {
            obs: self.observe(),
            reward,
            done: event.is_terminal(),
            success: event == Event::Reached,
            event,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn env() -> Env {
        Env::new(SceneConfig::default()).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = env();
        let mut b = env();
        a.reset(&mut ChaCha8Rng::seed_from_u64(5));
        b.reset(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn reset_distance_is_within_thresholds() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            e.reset(&mut rng);
            let d = e.state().distance();
            assert!(d > 3.0 && d < 30.0, "{d}");
            let p = e.state().agent1_pose;
            assert!(e.config().in_free_space(p.x, p.y));
            assert!((0.0..TAU).contains(&p.heading));
        }
    }

    #[test]
    fn reset_positions_pass_chi_square() {
        let mut e = env();
        let cfg = e.config().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut counts = [0usize; 16];
        for _ in 0..n {
            e.reset(&mut rng);
            let p = e.state().agent1_pose;
            let i = ((p.x / 10.0) as usize).min(3);
            let j = ((p.y / 10.0) as usize).min(3);
            counts[j * 4 + i] += 1;
        }
        let free = cfg.free_area();
        let mut stat = 0.0;
        let mut cells = 0;
        for j in 0..4 {
            for i in 0..4 {
                let cell = Rect::new(
                    i as f64 * 10.0,
                    j as f64 * 10.0,
                    (i + 1) as f64 * 10.0,
                    (j + 1) as f64 * 10.0,
                );
                let expected = n as f64 * cfg.free_area_in(&cell) / free;
                let observed = counts[j * 4 + i] as f64;
                if expected == 0.0 {
                    assert_eq!(observed, 0.0);
                    continue;
                }
                stat += (observed - expected).powi(2) / expected;
                cells += 1;
            }
        }
        let p = 1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square {stat} over {cells} cells, p = {p}");
    }

    #[test]
    fn idle_step_pays_time_penalty() {
        let mut e = env();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0,
            },
            (26.0, 20.0),
        );
        let out = e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(out.reward, -0.05);
        assert_eq!(
            e.state().agent1_pose,
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0
            }
        );
        assert_eq!(out.event, Event::None);
    }

    #[test]
    fn approaching_step_earns_shaping() {
        let mut e = env();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0,
            },
            (26.0, 20.0),
        );
        let out = e.step(&[1.0, 0.0]).unwrap();
        assert_eq!(out.reward, 0.95);
        assert!((e.state().agent1_pose.x - 21.0).abs() < 1e-12);
    }

    #[test]
    fn reward_table() {
        assert_eq!(compute_reward(10.0, 9.99, Event::None), 0.95);
        assert_eq!(compute_reward(10.0, 10.0, Event::None), -0.05);
        assert_eq!(compute_reward(4.0, 3.0, Event::Reached), 100.0);
        assert_eq!(compute_reward(29.5, 30.5, Event::Strayed), -100.0);
        assert_eq!(compute_reward(5.0, 4.0, Event::Collided), -100.0);
    }

    #[test]
    fn entering_obstacle_collides() {
        let mut e = env();
        e.reset_to(
            Pose {
                x: 13.0,
                y: 6.0,
                heading: std::f64::consts::PI,
            },
            (20.0, 6.0),
        );
        let out = e.step(&[1.0, 0.0]).unwrap();
        assert_eq!(out.event, Event::Collided);
        assert_eq!(out.reward, -100.0);
        assert!(out.done && !out.success);
        assert!(matches!(e.step(&[0.0, 0.0]), Err(Error::StepAfterDone)));
    }

    #[test]
    fn leaving_region_collides() {
        let mut e = env();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 0.5,
                heading: -std::f64::consts::FRAC_PI_2,
            },
            (20.0, 8.0),
        );
        assert_eq!(e.step(&[1.0, 0.0]).unwrap().event, Event::Collided);
    }

    #[test]
    fn reaching_and_straying() {
        let mut e = env();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0,
            },
            (23.5, 20.0),
        );
        let out = e.step(&[1.0, 0.0]).unwrap();
        assert_eq!(
            (out.event, out.reward, out.success),
            (Event::Reached, 100.0, true)
        );

        e.reset_to(
            Pose {
                x: 14.0,
                y: 20.0,
                heading: std::f64::consts::PI,
            },
            (43.5, 20.0),
        );
        let out = e.step(&[1.0, 0.0]).unwrap();
        assert_eq!((out.event, out.reward), (Event::Strayed, -100.0));
    }

    #[test]
    fn collision_beats_reaching() {
        let cfg = SceneConfig {
            obstacles: vec![Rect::new(20.5, 19.0, 21.5, 21.0)],
            ..SceneConfig::default()
        };
        let mut e = Env::new(cfg).unwrap();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0,
            },
            (24.0, 20.0),
        );
        assert_eq!(e.step(&[1.0, 0.0]).unwrap().event, Event::Collided);
    }

    #[test]
    fn timeout_ends_episode_with_shaping_reward() {
        let cfg = SceneConfig {
            max_episode_length: 3,
            ..SceneConfig::default()
        };
        let mut e = Env::new(cfg).unwrap();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0,
            },
            (26.0, 20.0),
        );
        e.step(&[0.0, 0.0]).unwrap();
        e.step(&[0.0, 0.0]).unwrap();
        let out = e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(
            (out.event, out.reward, out.done, out.success),
            (Event::Timeout, -0.05, true, false)
        );
    }

    #[test]
    fn commands_are_clipped() {
        let mut e = env();
        e.reset_to(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: 0.0,
            },
            (30.0, 20.0),
        );
        e.step(&[5.0, -7.0]).unwrap();
        let p = e.state().agent1_pose;
        assert!((p.heading + 0.3).abs() < 1e-12);
        assert!(((p.x - 20.0).hypot(p.y - 20.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vector_observation_layout() {
        let mut e = env();
        let obs = e.reset_to(
            Pose {
                x: 10.0,
                y: 20.0,
                heading: 0.0,
            },
            (20.0, 20.0),
        );
        assert_eq!(obs.vec_obs1.len(), 36);
        assert_eq!(&obs.vec_obs1[0..12], &obs.vec_obs1[12..24]);
        assert_eq!(&obs.vec_obs1[0..12], &obs.vec_obs1[24..36]);
        assert_eq!(obs.vec_obs1[0], 0.25);
        assert_eq!(obs.vec_obs1[6], 0.25);
        let obs = e.step(&[1.0, 0.0]).unwrap().obs;
        assert_eq!(obs.vec_obs1[0], 0.25);
        assert_eq!(obs.vec_obs1[24], 11.0 / 40.0);
        assert_eq!(obs.vec_obs1[28], 1.0);
    }

    #[test]
    fn random_rollouts_respect_invariants() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            e.reset(&mut rng);
            let mut terminal_rewards = 0;
            let mut closer_steps = 0;
            let mut shaped = 0;
            let mut len = 0;
            loop {
                let d_prev = e.state().distance();
                let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let out = e.step(&a).unwrap();
                len += 1;
                let r = out.reward;
                assert!([100.0, -100.0, 0.95, -0.05].contains(&r));
                assert_eq!(e.state().prev_distance, d_prev);
                if r.abs() == 100.0 {
                    terminal_rewards += 1;
                } else {
                    if r == 0.95 {
                        shaped += 1;
                    }
                    if e.state().distance() < d_prev {
                        closer_steps += 1;
                    }
                }
                if !out.done {
                    let p = e.state().agent1_pose;
                    assert!(e.config().in_free_space(p.x, p.y));
                    assert_eq!(shaped, closer_steps);
                } else {
                    break;
                }
            }
            assert!(len <= 200);
            assert!(terminal_rewards <= 1);
            let ev = if terminal_rewards == 0 {
                Event::Timeout
            } else {
                Event::None
            };
            if ev == Event::Timeout {
                assert_eq!(len, 200);
            }
        }
    }

    #[test]
    fn same_actions_same_outcomes() {
        let run = || {
            let mut e = env();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut outs = vec![e.reset(&mut rng).vec_obs1];
            for k in 0..50 {
                let out = e
                    .step(&[(k as f64 * 0.37).sin(), (k as f64 * 0.11).cos()])
                    .unwrap();
                outs.push(out.obs.vec_obs1.clone());
                if out.done {
                    break;
                }
            }
            outs
        };
        assert_eq!(run(), run());
    }
}
