use rand::Rng;
use rand_distr::StandardNormal;

/// Discretised Ornstein-Uhlenbeck process reverting to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct OuNoise {
    state: Vec<f64>,
    theta: f64,
    sigma: f64,
    dt: f64,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64, dt: f64) -> Self {
        Self {
            state: vec![0.0; dim],
            theta,
            sigma,
            dt,
        }
    }

    pub fn with_state(state: Vec<f64>, theta: f64, sigma: f64, dt: f64) -> Self {
        Self {
            state,
            theta,
            sigma,
            dt,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0.0);
    }

    /// Advances one step and returns the new state:
    /// `x <- x - theta * x * dt + sigma * sqrt(dt) * N(0, 1)`.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let diffusion = self.sigma * self.dt.sqrt();
        for x in &mut self.state {
            let z: f64 = rng.sample(StandardNormal);
            *x += self.theta * (0.0 - *x) * self.dt + diffusion * z;
        }
        self.state.clone()
    }
}
