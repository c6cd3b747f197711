//! Scenarios shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use commgrad::actor::{actor_builder, ActionValue, Actor, AgentSpec, PolicyBatch};
use commgrad::autodiff::{Network, NetworkBuilder, Tape, Tensor, Var};
use commgrad::codec::{Autoencoder, ImageBuffer};
use commgrad::critic::{Critic, Minibatch, ObsLayout};
use commgrad::env::{Env, SceneConfig};
use commgrad::replay::Transition;
use commgrad::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two-state chain s0 -> s1 -> s0 with reward 1 per step under a fixed
/// policy. Returns the update count and the final max |Q - 1/(1-gamma)|.
pub fn td_chain(gamma: f64, tol: f64, max_updates: usize) -> (usize, f64) {
    let one_hot = AgentSpec {
        vec_obs: 2,
        feature: 0,
        inbox: 0,
        a_m: 1,
        a_c: 0,
    };
    // Agent 2 sees a constant and sends a message the fixed policy pins to zero.
    let idle = AgentSpec {
        vec_obs: 0,
        feature: 1,
        inbox: 0,
        a_m: 0,
        a_c: 1,
    };
    let layout = ObsLayout::new(one_hot, idle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut critic = Critic::new(layout, 128, &mut rng).unwrap();
    let mut fixed = |name: &str, spec: &AgentSpec| {
        let mut n: Network<f32> = actor_builder(name, spec, 4).build(&mut rng).unwrap();
        for p in n.params_mut() {
            p.tensor.values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        n
    };
    let (mut mu1, mut mu2) = (fixed("mu1", &one_hot), fixed("mu2", &idle));
    let state = |s: usize| {
        let mut o = vec![0.0; 3];
        o[s] = 1.0;
        o
    };
    let transitions: Vec<Transition> = (0..2)
        .map(|s| Transition {
            seq: s as u64,
            o: state(s),
            a1: vec![0.0],
            a2: vec![0.0],
            r: 1.0,
            o_next: state(1 - s),
            terminal: false,
        })
        .collect();
    let batch = Minibatch::from_transitions(&transitions, layout.transition_widths()).unwrap();
    let value = 1.0 / (1.0 - gamma);
    let mut updates = 0;
    loop {
        let y = critic
            .td_targets(&batch, [&mut mu1, &mut mu2], gamma)
            .unwrap();
        critic.critic_update(&batch, &y, 0.01).unwrap();
        critic.soft_update_target(0.1).unwrap();
        updates += 1;
        let q = Critic::q_batch(&mut critic.net, &batch.o, &batch.a1, &batch.a2).unwrap();
        let err = q
            .iter()
            .map(|&q| (q as f64 - value).abs())
            .fold(0.0, f64::max);
        if err <= tol || updates == max_updates {
            return (updates, err);
        }
    }
}

/// `Q(a) = -(a - a*)^2` on agent 1's action slot.
pub struct Quadratic(pub f32);

impl ActionValue for Quadratic {
    fn mean_q(&mut self, tape: &mut Tape<f32>, _o: Var, a1: Var, _a2: Var) -> Result<Var> {
        let rows = tape.shape(a1)[0];
        let m = tape.mse(a1, &vec![self.0; rows])?;
        Ok(tape.scale(m, -1.0))
    }
}

/// Scalar policy `tanh(w x + b)` on the constant input 1, ascended against
/// the quadratic critic. Returns update count and final |mu - a*|.
pub fn quadratic_ascent(a_star: f32, tol: f32, max_updates: usize) -> (usize, f32) {
    let spec = AgentSpec {
        vec_obs: 1,
        feature: 0,
        inbox: 0,
        a_m: 1,
        a_c: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut build = |name: &str| -> Network<f32> {
        let mut n: Network<f32> = NetworkBuilder::new(name, &[1])
            .dense(1)
            .tanh()
            .build(&mut rng)
            .unwrap();
        n.params_mut()[0].tensor.values_mut()[0] = 0.1;
        n
    };
    let (net, target) = (build("mu"), build("mu_target"));
    let mut actor = Actor::from_networks(net, target, spec, 0).unwrap();
    let inputs = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
    let zero = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
    let batch = PolicyBatch {
        inputs: &inputs,
        o: &zero,
        a1: &zero,
        a2: &zero,
    };
    let mut critic = Quadratic(a_star);
    let mut updates = 0;
    loop {
        actor.actor_update(&batch, &mut critic, 0.25).unwrap();
        updates += 1;
        let err = (actor.net.predict(&[&inputs]).unwrap().values()[0] - a_star).abs();
        if err <= tol || updates == max_updates {
            return (updates, err);
        }
    }
}

/// Front and top buffers of `n` images from uniformly random rollouts.
pub fn rollout_buffers(seed: u64, n: usize) -> [ImageBuffer; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(SceneConfig::default()).unwrap();
    let mut bufs = [ImageBuffer::new(n), ImageBuffer::new(n)];
    'fill: loop {
        let mut obs = env.reset(&mut rng);
        loop {
            bufs[0].push(obs.front_image);
            bufs[1].push(obs.top_image);
            if bufs[0].len() == n {
                break 'fill;
            }
            let a = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let out = env.step(&a).unwrap();
            if out.done {
                break;
            }
            obs = out.obs;
        }
    }
    bufs
}

/// Initial and final full-buffer MSE for each agent after `updates` AE steps.
pub fn ae_training(updates: usize) -> [(f64, f64); 2] {
    let bufs = rollout_buffers(11, 64);
    let scene = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut out = [(0.0, 0.0); 2];
    for (k, (buf, shape)) in bufs
        .iter()
        .zip([scene.front_shape(), scene.top_shape()])
        .enumerate()
    {
        let mut ae = Autoencoder::new("ae", shape, 32, &mut rng).unwrap();
        let all: Vec<_> = buf.iter().collect();
        let initial = ae.ae_loss(&all).unwrap();
        for _ in 0..updates {
            ae.ae_update(buf, 8, 0.1, &mut rng).unwrap();
        }
        out[k] = (initial, ae.ae_loss(&all).unwrap());
    }
    out
}
