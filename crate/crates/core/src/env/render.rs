//! Synthetic cameras. Both renderers are pure functions of the world state.

use super::{Pose, SceneConfig, WorldState, FRAMES};
use crate::autodiff::Tensor;

/// Surfaces beyond this distance are not seen.
pub const RENDER_RANGE: f64 = 60.0;
/// Nearest obstacle intensity; farther surfaces fade to half of it.
pub const FRONT_OBSTACLE_MAX: f32 = 0.4;

fn attenuation(d: f64) -> f64 {
    1.0 - 0.5 * d.min(RENDER_RANGE) / RENDER_RANGE
}

/// Distance along a ray to the first obstacle or region wall.
fn surface_depth(o: (f64, f64), dir: (f64, f64), cfg: &SceneConfig) -> f64 {
    let mut depth = cfg.bounds().ray_exit(o, dir);
    for r in &cfg.obstacles {
        if let Some(t) = r.ray_entry(o, dir) {
            depth = depth.min(t);
        }
    }
    depth
}

/// Intensity of front-camera column `j`: the target (a disc) is brightest,
/// walls and obstacles are dimmer, empty space is 0.
pub fn front_column(pose: Pose, target: (f64, f64), cfg: &SceneConfig, j: usize) -> f32 {
    let fov = cfg.fov();
    let w = cfg.front_width as f64;
    let step = fov / w;
    let rel = fov / 2.0 - (j as f64 + 0.5) * step;
    let angle = pose.heading + rel;
    let dir = (angle.cos(), angle.sin());
    let o = (pose.x, pose.y);
    let depth = surface_depth(o, dir, cfg);

    let (dx, dy) = (target.0 - pose.x, target.1 - pose.y);
    let dist = dx.hypot(dy);
    if dist > 1e-9 && dist <= RENDER_RANGE {
        let half = if dist > cfg.target_radius {
            (cfg.target_radius / dist).asin()
        } else {
            std::f64::consts::FRAC_PI_2
        };
        let bearing = super::wrap_angle(dy.atan2(dx) - pose.heading);
        let overlap = (bearing - rel).abs() <= half + step / 2.0;
        if overlap && depth >= dist - cfg.target_radius {
            return attenuation(dist) as f32;
        }
    }
    if depth <= RENDER_RANGE {
        FRONT_OBSTACLE_MAX * attenuation(depth) as f32
    } else {
        0.0
    }
}

pub fn front_frame(pose: Pose, target: (f64, f64), cfg: &SceneConfig) -> Vec<f32> {
    (0..cfg.front_width)
        .map(|j| front_column(pose, target, cfg, j))
        .collect()
}

/// `3 × H × W` image whose channels are the frames `t-2, t-1, t`; every
/// column is constant over rows.
pub fn render_front(state: &WorldState, cfg: &SceneConfig) -> Tensor<f32> {
    let (h, w) = (cfg.front_height, cfg.front_width);
    let mut values = Vec::with_capacity(FRAMES * h * w);
    for f in &state.history {
        let cols = front_frame(f.pose, state.target_pos, cfg);
        for _ in 0..h {
            values.extend_from_slice(&cols);
        }
    }
    Tensor::new(vec![FRAMES, h, w], values).expect("front image shape")
}

/// Pixel `(row, col)` containing a world point.
pub fn top_pixel(x: f64, y: f64, cfg: &SceneConfig) -> (i64, i64) {
    let row = (y / cfg.region * cfg.top_height as f64).floor() as i64;
    let col = (x / cfg.region * cfg.top_width as f64).floor() as i64;
    (row, col)
}

/// Overhead image: agent 1 in channel 0, target in channel 1 (3×3 blobs),
/// obstacle cells in channel 2.
pub fn render_top(state: &WorldState, cfg: &SceneConfig) -> Tensor<f32> {
    let (h, w) = (cfg.top_height, cfg.top_width);
    let mut values = vec![0.0f32; 3 * h * w];
    let mut blob = |channel: usize, x: f64, y: f64| {
        let (r0, c0) = top_pixel(x, y, cfg);
        for r in r0 - 1..=r0 + 1 {
            for c in c0 - 1..=c0 + 1 {
                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                    values[channel * h * w + r as usize * w + c as usize] = 1.0;
                }
            }
        }
    };
    blob(0, state.agent1_pose.x, state.agent1_pose.y);
    blob(1, state.target_pos.0, state.target_pos.1);
    for r in 0..h {
        for c in 0..w {
            let x = (c as f64 + 0.5) / w as f64 * cfg.region;
            let y = (r as f64 + 0.5) / h as f64 * cfg.region;
            if state.obstacles.iter().any(|o| o.contains(x, y)) {
                values[2 * h * w + r * w + c] = 1.0;
            }
        }
    }
    Tensor::new(vec![3, h, w], values).expect("top image shape")
}

#[cfg(test)]
mod tests {
    use super::super::{Env, Rect};
    use super::*;
    use std::f64::consts::PI;

    fn open_env() -> Env {
        Env::new(SceneConfig {
            obstacles: vec![],
            ..SceneConfig::default()
        })
        .unwrap()
    }

    fn target_columns(cols: &[f32]) -> Vec<usize> {
        (0..cols.len()).filter(|&j| cols[j] >= 0.5).collect()
    }

    #[test]
    fn target_ahead_is_centered() {
        let mut e = open_env();
        let obs = e.reset_to(
            Pose {
                x: 10.0,
                y: 20.0,
                heading: 0.0,
            },
            (20.0, 20.0),
        );
        let img = obs.front_image;
        let w = 32;
        let last = &img.values()[2 * 16 * w..2 * 16 * w + w];
        let hits = target_columns(last);
        assert!(hits.contains(&15) && hits.contains(&16), "{hits:?}");
        let centroid = hits.iter().sum::<usize>() as f64 / hits.len() as f64;
        assert!((centroid - 15.5).abs() < 1e-9);
        let brightest = last.iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(last[15], brightest);
        for c in 0..3 {
            for r in 0..16 {
                assert_eq!(&img.values()[(c * 16 + r) * w..(c * 16 + r + 1) * w], last);
            }
        }
    }

    #[test]
    fn target_behind_is_invisible() {
        let cfg = SceneConfig::default();
        let cols = front_frame(
            Pose {
                x: 20.0,
                y: 20.0,
                heading: PI,
            },
            (28.0, 20.0),
            &cfg,
        );
        assert!(target_columns(&cols).is_empty());
        assert!(cols.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn rotation_shifts_target_column() {
        let cfg = SceneConfig {
            obstacles: vec![],
            ..SceneConfig::default()
        };
        let fov = cfg.fov();
        let w = cfg.front_width as f64;
        let centroid = |heading: f64| {
            let cols = front_frame(
                Pose {
                    x: 5.0,
                    y: 20.0,
                    heading,
                },
                (30.0, 20.0),
                &cfg,
            );
            let hits = target_columns(&cols);
            hits.iter().sum::<usize>() as f64 / hits.len() as f64
        };
        let base = centroid(0.0);
        for k in 1..=8 {
            let theta = k as f64 * 0.05;
            let expected = base + theta / fov * w;
            assert!((centroid(theta) - expected).abs() <= 1.0, "theta {theta}");
            let expected = base - theta / fov * w;
            assert!((centroid(-theta) - expected).abs() <= 1.0, "theta -{theta}");
        }
    }

    #[test]
    fn obstacle_occludes_target() {
        let cfg = SceneConfig {
            obstacles: vec![Rect::new(14.0, 18.0, 15.0, 22.0)],
            ..SceneConfig::default()
        };
        let cols = front_frame(
            Pose {
                x: 10.0,
                y: 20.0,
                heading: 0.0,
            },
            (20.0, 20.0),
            &cfg,
        );
        assert!(target_columns(&cols).is_empty());
        assert!(cols[15] > 0.0 && cols[15] <= FRONT_OBSTACLE_MAX);
    }

    #[test]
    fn top_view_projections() {
        let mut e = Env::new(SceneConfig::default()).unwrap();
        let obs = e.reset_to(
            Pose {
                x: 17.3,
                y: 33.9,
                heading: 1.0,
            },
            (20.0, 20.0),
        );
        let img = obs.top_image;
        let hw = 32 * 32;
        let centroid = |ch: usize| {
            let (mut r, mut c, mut n) = (0.0, 0.0, 0.0);
            for i in 0..hw {
                if img.values()[ch * hw + i] > 0.0 {
                    r += (i / 32) as f64;
                    c += (i % 32) as f64;
                    n += 1.0;
                }
            }
            (r / n, c / n)
        };
        assert_eq!(centroid(1), (16.0, 16.0));
        let (r, c) = centroid(0);
        // Pixel i covers [i, i + 1) in projected coordinates.
        assert!(
            (r + 0.5 - 33.9 / 40.0 * 32.0).abs() <= 1.0
                && (c + 0.5 - 17.3 / 40.0 * 32.0).abs() <= 1.0
        );
        assert!(img.values()[2 * hw..].contains(&1.0));
        assert!(img.values().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn no_obstacles_means_empty_channel() {
        let mut e = open_env();
        let obs = e.reset_to(
            Pose {
                x: 3.0,
                y: 4.0,
                heading: 0.0,
            },
            (20.0, 20.0),
        );
        assert!(obs.top_image.values()[2 * 1024..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn agent_blob_tracks_random_positions() {
        let mut e = open_env();
        for k in 0..50 {
            let x = 0.5 + (k as f64 * 7.31) % 39.0;
            let y = 0.5 + (k as f64 * 3.77) % 39.0;
            let obs = e.reset_to(Pose { x, y, heading: 0.0 }, (20.0, 20.0));
            let (mut r, mut c, mut n) = (0.0, 0.0, 0.0);
            for i in 0..1024 {
                if obs.top_image.values()[i] > 0.0 {
                    r += (i / 32) as f64;
                    c += (i % 32) as f64;
                    n += 1.0;
                }
            }
            assert!(
                (r / n + 0.5 - y * 0.8).abs() <= 1.0 && (c / n + 0.5 - x * 0.8).abs() <= 1.0,
                "{x} {y}"
            );
        }
    }
}
