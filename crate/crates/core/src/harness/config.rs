use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::SceneConfig;
use crate::error::{Error, Result};

/// Step-size decay `eps_k(t) = eps_k(0) / (1 + t / T_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Critic, actor and autoencoder initial step sizes.
    pub eps0: [f64; 3],
    /// Decay horizons, in environment steps.
    pub horizon: [f64; 3],
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            eps0: [1e-3, 1e-4, 1e-5],
            horizon: [200_000.0, 100_000.0, 50_000.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            theta: 0.15,
            sigma: 0.2,
            dt: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub total_steps: u64,
    /// Steps of pure collection before any network update.
    pub warmup_steps: u64,
    pub gamma: f64,
    pub tau: f64,
    /// Critic minibatch size `M`.
    pub batch_size: usize,
    /// Autoencoder minibatch size `P`.
    pub ae_batch_size: usize,
    /// Replay capacity `L`.
    pub replay_capacity: usize,
    pub image_buffer_capacity: usize,
    /// Feature width `D`.
    pub feature_dim: usize,
    /// Message width `C`.
    pub message_dim: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub schedule: ScheduleConfig,
    pub noise: NoiseConfig,
    pub scene: SceneConfig,
    pub checkpoint_every: u64,
    pub metrics_every: u64,
    pub ma_window: usize,
    /// Optional per-link, per-step byte cap; exceeding it is an error.
    pub link_cap: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_steps: 200_000,
            warmup_steps: 1_000,
            gamma: 0.99,
            tau: 0.01,
            batch_size: 64,
            ae_batch_size: 8,
            replay_capacity: 100_000,
            image_buffer_capacity: 2_000,
            feature_dim: 32,
            message_dim: 8,
            actor_hidden: 64,
            critic_hidden: 128,
            schedule: ScheduleConfig::default(),
            noise: NoiseConfig::default(),
            scene: SceneConfig::default(),
            checkpoint_every: 10_000,
            metrics_every: 100,
            ma_window: 100,
            link_cap: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("ae_batch_size", self.ae_batch_size),
            ("replay_capacity", self.replay_capacity),
            ("image_buffer_capacity", self.image_buffer_capacity),
            ("feature_dim", self.feature_dim),
            ("message_dim", self.message_dim),
            ("actor_hidden", self.actor_hidden),
            ("critic_hidden", self.critic_hidden),
            ("ma_window", self.ma_window),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.metrics_every == 0 || self.checkpoint_every == 0 {
            return bad("metrics_every and checkpoint_every must be positive".into());
        }
        let [e1, e2, e3] = self.schedule.eps0;
        let [t1, t2, t3] = self.schedule.horizon;
        if [e1, e2, e3].iter().any(|e| !e.is_finite() || *e < 0.0) {
            return bad(format!(
                "step sizes {:?} must be finite and non-negative",
                self.schedule.eps0
            ));
        }
        if !(e1 >= e2 && e2 >= e3) {
            return bad(format!(
                "step sizes {:?} must be non-increasing",
                self.schedule.eps0
            ));
        }
        if [t1, t2, t3].iter().any(|t| !t.is_finite() || *t <= 0.0) || !(t1 >= t2 && t2 >= t3) {
            return bad(format!(
                "decay horizons {:?} must be positive and non-increasing",
                self.schedule.horizon
            ));
        }
        if self.noise.theta < 0.0 || self.noise.sigma < 0.0 || self.noise.dt <= 0.0 {
            return bad("noise parameters must be non-negative with positive dt".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(
            TrainConfig::from_json("{}").unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(TrainConfig::from_json(r#"{"sede": 3}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"noise": {"mu": 0.0}}"#).is_err());
    }

    #[test]
    fn partial_documents_fill_in() {
        let c = TrainConfig::from_json(r#"{"seed": 9, "schedule": {"eps0": [0.1, 0.01, 0.001]}}"#)
            .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.schedule.horizon, ScheduleConfig::default().horizon);
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn round_trips_through_json() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn inverted_timescales_are_rejected() {
        assert!(TrainConfig::from_json(r#"{"schedule": {"eps0": [1e-4, 1e-3, 1e-5]}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"schedule": {"horizon": [1.0, 2.0, 1.0]}}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"gamma": 1.0}"#).is_err());
    }
}
