//! Finite-difference checks of every layer type and of the full
//! actor-encoder, critic and autoencoder graphs, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actor::{actor_builder, AgentSpec};
use crate::autodiff::{
    check_graph, grad_check_with, nudge_from_kinks, readout_weights, GradCheckOptions,
    GradCheckReport, Mode, Network, NetworkBuilder, Tensor,
};
use crate::codec::{decoder_builder, encoder_builder};
use crate::critic::{critic_builder, ObsLayout};
use crate::error::Result;

pub const TOLERANCE: f64 = 1e-4;
/// Central-difference steps. The full graphs sum thousands of terms, so a
/// smaller step drowns their smallest gradients in rounding error.
const H_LAYER: f64 = 1e-5;
const H_GRAPH: f64 = 1e-4;
/// Elements sampled per parameter tensor in the full graphs.
const SAMPLED: usize = 12;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub seeds: usize,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error <= TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("valid shape")
}

fn opts(seed: u64, sampled: Option<usize>) -> GradCheckOptions {
    GradCheckOptions {
        h: if sampled.is_some() { H_GRAPH } else { H_LAYER },
        max_per_tensor: sampled,
        seed,
    }
}

fn single_net(builder: NetworkBuilder, input: Vec<usize>, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net: Network<f64> = builder.build(&mut rng)?;
    let x = uniform(&mut rng, input);
    grad_check_with(&mut net, &x, opts(seed, None))
}

type Case = (&'static str, fn(u64) -> Result<GradCheckReport>);

const D: usize = 32;
const C: usize = 8;
const FRONT: [usize; 3] = [3, 16, 32];

fn specs() -> [AgentSpec; 2] {
    [
        AgentSpec {
            vec_obs: 36,
            feature: D,
            inbox: C,
            a_m: 2,
            a_c: C,
        },
        AgentSpec {
            vec_obs: 0,
            feature: D,
            inbox: C,
            a_m: 0,
            a_c: C,
        },
    ]
}

fn cases() -> Vec<Case> {
    vec![
        ("dense", |s| {
            single_net(NetworkBuilder::new("dense", &[7]).dense(5), vec![4, 7], s)
        }),
        ("relu", |s| {
            single_net(
                NetworkBuilder::new("relu", &[6]).dense(5).relu().dense(2),
                vec![3, 6],
                s,
            )
        }),
        ("tanh", |s| {
            single_net(
                NetworkBuilder::new("tanh", &[6]).dense(4).tanh(),
                vec![3, 6],
                s,
            )
        }),
        ("conv2d", |s| {
            single_net(
                NetworkBuilder::new("conv", &[2, 7, 6])
                    .conv2d(3, 3, 2, 1, true)
                    .flatten()
                    .dense(2),
                vec![2, 2, 7, 6],
                s,
            )
        }),
        ("conv2d_no_bias", |s| {
            single_net(
                NetworkBuilder::new("conv", &[3, 5, 5])
                    .conv2d(2, 3, 1, 1, false)
                    .flatten()
                    .dense(2),
                vec![2, 3, 5, 5],
                s,
            )
        }),
        ("batch_norm", |s| {
            single_net(
                NetworkBuilder::new("bn", &[2, 4, 4])
                    .conv2d(3, 3, 1, 1, false)
                    .batch_norm()
                    .tanh()
                    .flatten()
                    .dense(2),
                vec![3, 2, 4, 4],
                s,
            )
        }),
        ("flatten_reshape", |s| {
            single_net(
                NetworkBuilder::new("rs", &[2, 3, 2])
                    .flatten()
                    .dense(12)
                    .reshape(&[3, 2, 2])
                    .flatten()
                    .dense(3),
                vec![2, 2, 3, 2],
                s,
            )
        }),
        ("upsample2x", |s| {
            single_net(
                NetworkBuilder::new("up", &[2, 3, 3])
                    .upsample2x()
                    .conv2d(2, 3, 1, 1, true)
                    .flatten()
                    .dense(2),
                vec![2, 2, 3, 3],
                s,
            )
        }),
        ("concat", |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut nets = [NetworkBuilder::concat("cat", &[3, 2, 4])
                .dense(3)
                .build::<f64, _>(&mut rng)?];
            let xs = [
                uniform(&mut rng, vec![2, 3]),
                uniform(&mut rng, vec![2, 2]),
                uniform(&mut rng, vec![2, 4]),
            ];
            let w = readout_weights(6, s);
            check_graph(&mut nets, opts(s, None), |tape, nets, b| {
                let v: Vec<_> = xs.iter().map(|x| tape.input(x)).collect();
                let y = nets[0].forward(tape, &b[0], &v, Mode::Train)?;
                tape.weighted_sum(y, &w)
            })
        }),
        ("actor_encoder", actor_encoder),
        ("critic", critic_graph),
        ("autoencoder", autoencoder_graph),
    ]
}

/// Image -> shared encoder -> concat with sensors and inbox -> actor.
fn actor_encoder(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = specs()[0];
    let mut nets = [
        encoder_builder("enc", FRONT, D).build::<f64, _>(&mut rng)?,
        actor_builder("actor", &spec, 64).build::<f64, _>(&mut rng)?,
    ];
    let batch = 3;
    let mut image = uniform(&mut rng, vec![batch, FRONT[0], FRONT[1], FRONT[2]]);
    nudge_from_kinks(image.values_mut(), H_GRAPH);
    let vec_obs = uniform(&mut rng, vec![batch, spec.vec_obs]);
    let inbox = uniform(&mut rng, vec![batch, spec.inbox]);
    let w = readout_weights(batch * spec.action_width(), seed);
    check_graph(&mut nets, opts(seed, Some(SAMPLED)), |tape, nets, b| {
        let x = tape.input(&image);
        let f = nets[0].forward(tape, &b[0], &[x], Mode::Train)?;
        let (v, m) = (tape.input(&vec_obs), tape.input(&inbox));
        let joined = tape.concat(&[v, f, m])?;
        let a = nets[1].forward(tape, &b[1], &[joined], Mode::Train)?;
        tape.weighted_sum(a, &w)
    })
}

/// Joint observation and both extended actions -> Q, with the TD loss on top.
fn critic_graph(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [s1, s2] = specs();
    let layout = ObsLayout::new(s1, s2);
    let w = layout.transition_widths();
    let mut nets = [critic_builder("critic", &layout, 128).build::<f64, _>(&mut rng)?];
    let batch = 4;
    let xs = [
        uniform(&mut rng, vec![batch, w.obs]),
        uniform(&mut rng, vec![batch, w.a1]),
        uniform(&mut rng, vec![batch, w.a2]),
    ];
    let y: Vec<f64> = (0..batch).map(|_| rng.random_range(-5.0..5.0)).collect();
    check_graph(&mut nets, opts(seed, Some(SAMPLED)), |tape, nets, b| {
        let v: Vec<_> = xs.iter().map(|x| tape.input(x)).collect();
        let q = nets[0].forward(tape, &b[0], &v, Mode::Train)?;
        tape.mse(q, &y)
    })
}

/// Reconstruction loss through encoder and decoder.
fn autoencoder_graph(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nets = [
        encoder_builder("enc", FRONT, D).build::<f64, _>(&mut rng)?,
        decoder_builder("dec", FRONT, D).build::<f64, _>(&mut rng)?,
    ];
    let mut image = uniform(&mut rng, vec![2, FRONT[0], FRONT[1], FRONT[2]]);
    nudge_from_kinks(image.values_mut(), H_GRAPH);
    let target = image.values().to_vec();
    check_graph(&mut nets, opts(seed, Some(SAMPLED)), |tape, nets, b| {
        let x = tape.input(&image);
        let f = nets[0].forward(tape, &b[0], &[x], Mode::Train)?;
        let r = nets[1].forward(tape, &b[1], &[f], Mode::Train)?;
        tape.mse(r, &target)
    })
}

/// Runs every case over seeds `0..seeds`, merging the per-seed reports.
pub fn run(seeds: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, case) in cases() {
        let mut report = GradCheckReport::default();
        for s in 0..seeds {
            report.merge(&case(s)?);
        }
        out.push(CaseResult {
            name,
            seeds: seeds as usize,
            report,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_on_a_few_seeds() {
        for r in run(2).unwrap() {
            assert!(r.passed(), "{}: {:?}", r.name, r.report);
        }
    }
}
