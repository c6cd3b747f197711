//! Central finite-difference checks of tape gradients, run in `f64`.
//!
//! Relu is not differentiable at zero. Network inputs closer than `h` to zero
//! are pushed to `±2h`, and any perturbation that flips the sign of some relu
//! input is excluded from the comparison (reported in `skipped`).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{Bound, Mode, Network};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    /// Parameter element with the largest error.
    pub worst: Option<String>,
}

impl GradCheckReport {
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
            if other.worst.is_some() && other.max_rel_error >= self.max_rel_error {
                self.worst = other.worst.clone();
            }
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Check at most this many elements of each parameter tensor (chosen at random).
    pub max_per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            max_per_tensor: None,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Moves values within `h` of zero to `±2h`.
pub fn nudge_from_kinks(values: &mut [f64], h: f64) {
    for v in values {
        if v.abs() < h {
            *v = if *v < 0.0 { -2.0 * h } else { 2.0 * h };
        }
    }
}

/// Compares tape gradients of the scalar built by `objective` against
/// central differences, over every trainable parameter of `nets`.
pub fn check_graph<F>(
    nets: &mut [Network<f64>],
    opts: GradCheckOptions,
    mut objective: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &mut [Network<f64>], &[Bound]) -> Result<Var>,
{
    assert!(opts.h > 0.0, "finite-difference step must be positive");
    // Analytic pass.
    let mut tape = Tape::new();
    let bounds: Vec<Bound> = nets.iter().map(|n| n.bind(&mut tape)).collect();
    let out = objective(&mut tape, nets, &bounds)?;
    let base_pattern = tape.relu_pattern();
    let grads = tape.backward(out)?;
    for (n, b) in nets.iter_mut().zip(&bounds) {
        n.absorb_grads(b, &grads);
        n.discard_batch_stats();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    for k in 0..nets.len() {
        for p in 0..nets[k].params().len() {
            if !nets[k].params()[p].trainable {
                continue;
            }
            let len = nets[k].params()[p].tensor.len();
            let picks: Vec<usize> = match opts.max_per_tensor {
                Some(m) if m < len => {
                    let mut v = sample(&mut rng, len, m).into_vec();
                    v.sort_unstable();
                    v
                }
                _ => (0..len).collect(),
            };
            for e in picks {
                let analytic = nets[k].params()[p].tensor.grad()[e];
                let orig = nets[k].params()[p].tensor.values()[e];
                nets[k].params_mut()[p].tensor.values_mut()[e] = orig + opts.h;
                let (fp, pat_p) = eval(nets, &mut objective)?;
                nets[k].params_mut()[p].tensor.values_mut()[e] = orig - opts.h;
                let (fm, pat_m) = eval(nets, &mut objective)?;
                nets[k].params_mut()[p].tensor.values_mut()[e] = orig;
                if pat_p != base_pattern || pat_m != base_pattern {
                    report.skipped += 1;
                    continue;
                }
                let numeric = (fp - fm) / (2.0 * opts.h);
                let err = relative_error(analytic, numeric);
                report.checked += 1;
                if err > report.max_rel_error || report.worst.is_none() {
                    report.max_rel_error = report.max_rel_error.max(err);
                    report.worst = Some(format!("{}[{e}]", nets[k].params()[p].name));
                }
            }
        }
    }
    Ok(report)
}

fn eval<F>(nets: &mut [Network<f64>], objective: &mut F) -> Result<(f64, Vec<bool>)>
where
    F: FnMut(&mut Tape<f64>, &mut [Network<f64>], &[Bound]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bounds: Vec<Bound> = nets.iter().map(|n| n.bind(&mut tape)).collect();
    let out = objective(&mut tape, nets, &bounds)?;
    for n in nets.iter_mut() {
        n.discard_batch_stats();
    }
    Ok((tape.value(out)[0], tape.relu_pattern()))
}

/// Fixed pseudo-random readout weights used to reduce an output to a scalar.
pub fn readout_weights(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Checks one network on one input batch; the scalar is a fixed random
/// projection of the training-mode output.
pub fn grad_check(net: &mut Network<f64>, input: &Tensor<f64>, h: f64) -> Result<GradCheckReport> {
    grad_check_with(
        net,
        input,
        GradCheckOptions {
            h,
            ..Default::default()
        },
    )
}

pub fn grad_check_with(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut x = input.clone();
    nudge_from_kinks(x.values_mut(), opts.h);
    let out_len = input.shape()[0] * net.output_shape().iter().product::<usize>();
    let weights = readout_weights(out_len, opts.seed);
    let mut nets = [net.clone()];
    let report = check_graph(&mut nets, opts, |tape, nets, bounds| {
        let xv = tape.input(&x);
        let y = nets[0].forward(tape, &bounds[0], &[xv], Mode::Train)?;
        tape.weighted_sum(y, &weights)
    })?;
    let [checked] = nets;
    *net = checked;
    Ok(report)
}
