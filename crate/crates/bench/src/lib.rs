//! Fixtures shared by the benchmarks.

use commgrad::codec::ImageBuffer;
use commgrad::env::{Env, SceneConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Front and top image buffers filled from random rollouts.
pub fn image_buffers(n: usize, seed: u64) -> [ImageBuffer; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(SceneConfig::default()).expect("default scene is valid");
    let mut bufs = [ImageBuffer::new(n), ImageBuffer::new(n)];
    while bufs[0].len() < n {
        let mut obs = env.reset(&mut rng);
        loop {
            bufs[0].push(obs.front_image.clone());
            bufs[1].push(obs.top_image.clone());
            let a = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let out = env.step(&a).expect("episode is live");
            if out.done || bufs[0].len() == n {
                break;
            }
            obs = out.obs;
        }
    }
    bufs
}
