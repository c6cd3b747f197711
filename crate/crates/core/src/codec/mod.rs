//! Per-agent convolutional autoencoder and its local image buffer.

mod buffer;

use rand::Rng;

use crate::autodiff::{Mode, Network, NetworkBuilder, Tape, Tensor};
use crate::error::{Error, Result};

pub use buffer::ImageBuffer;

pub const CONV_CHANNELS: usize = 8;

/// Encoder `image -> R^D`: two stride-2 conv/batch-norm/relu stages and a dense head.
pub fn encoder_builder(name: &str, image_shape: [usize; 3], feature_dim: usize) -> NetworkBuilder {
    NetworkBuilder::new(name, &image_shape)
        .conv2d(CONV_CHANNELS, 3, 2, 1, false)
        .batch_norm()
        .relu()
        .conv2d(CONV_CHANNELS, 3, 2, 1, false)
        .batch_norm()
        .relu()
        .flatten()
        .dense(feature_dim)
}

/// Decoder `R^D -> image`: dense, reshape to a quarter-resolution map, then
/// two nearest-neighbour upsampling + conv stages.
pub fn decoder_builder(name: &str, image_shape: [usize; 3], feature_dim: usize) -> NetworkBuilder {
    let [c, h, w] = image_shape;
    NetworkBuilder::new(name, &[feature_dim])
        .dense(CONV_CHANNELS * (h / 4) * (w / 4))
        .relu()
        .reshape(&[CONV_CHANNELS, h / 4, w / 4])
        .upsample2x()
        .conv2d(CONV_CHANNELS, 3, 1, 1, true)
        .relu()
        .upsample2x()
        .conv2d(c, 3, 1, 1, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AeUpdate {
    /// Post-step loss on the sampled batch.
    Updated { loss: f64 },
    /// Not enough images yet; nothing changed.
    Skipped { available: usize, requested: usize },
}

impl AeUpdate {
    pub fn loss(&self) -> Option<f64> {
        match self {
            AeUpdate::Updated { loss } => Some(*loss),
            AeUpdate::Skipped { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub encoder: Network<f32>,
    pub decoder: Network<f32>,
    image_shape: [usize; 3],
    feature_dim: usize,
}

impl Autoencoder {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        image_shape: [usize; 3],
        feature_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let [_, h, w] = image_shape;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} must be divisible by 4"
            )));
        }
        Ok(Self {
            encoder: encoder_builder(&format!("{prefix}.encoder"), image_shape, feature_dim)
                .build(rng)?,
            decoder: decoder_builder(&format!("{prefix}.decoder"), image_shape, feature_dim)
                .build(rng)?,
            image_shape,
            feature_dim,
        })
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn check_image(&self, v: &Tensor<f32>) -> Result<()> {
        if v.shape() != self.image_shape {
            return Err(Error::shape(
                format!("{}.input", self.encoder.name()),
                &self.image_shape,
                v.shape(),
            ));
        }
        Ok(())
    }

    fn stack(&self, images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        if images.is_empty() {
            return Err(Error::InsufficientData {
                available: 0,
                requested: 1,
            });
        }
        for v in images {
            self.check_image(v)?;
        }
        Tensor::stack(images)
    }

    /// Inference-mode encoding of one image.
    pub fn encode(&mut self, v: &Tensor<f32>) -> Result<Vec<f32>> {
        self.check_image(v)?;
        let x = v.clone().reshape(vec![
            1,
            self.image_shape[0],
            self.image_shape[1],
            self.image_shape[2],
        ])?;
        Ok(self.encoder.predict(&[&x])?.into_values())
    }

    pub fn decode(&mut self, feature: &[f32]) -> Result<Tensor<f32>> {
        if feature.len() != self.feature_dim {
            return Err(Error::shape(
                format!("{}.input", self.decoder.name()),
                &[self.feature_dim],
                &[feature.len()],
            ));
        }
        let z = Tensor::new(vec![1, self.feature_dim], feature.to_vec())?;
        self.decoder
            .predict(&[&z])?
            .reshape(self.image_shape.to_vec())
    }

    /// Mean over the batch of per-image pixel MSE, with training-mode batch
    /// statistics (the objective that `ae_update` descends).
    pub fn ae_loss(&mut self, batch: &[&Tensor<f32>]) -> Result<f64> {
        let x = self.stack(batch)?;
        let mut tape = Tape::new();
        let (loss, _) = self.record_loss(&mut tape, &x, false)?;
        self.encoder.discard_batch_stats();
        Ok(tape.value(loss)[0] as f64)
    }

    /// Training-mode reconstructions of a batch, `[P, C, H, W]`.
    pub fn reconstruct_train(&mut self, batch: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
        let x = self.stack(batch)?;
        let mut tape = Tape::new();
        let xv = tape.input(&x);
        let eb = self.encoder.bind_frozen(&mut tape);
        let db = self.decoder.bind_frozen(&mut tape);
        let z = self.encoder.forward(&mut tape, &eb, &[xv], Mode::Train)?;
        let y = self.decoder.forward(&mut tape, &db, &[z], Mode::Train)?;
        self.encoder.discard_batch_stats();
        Ok(tape.tensor(y))
    }

    fn record_loss(
        &mut self,
        tape: &mut Tape<f32>,
        x: &Tensor<f32>,
        trainable: bool,
    ) -> Result<(crate::autodiff::Var, [crate::autodiff::Bound; 2])> {
        let xv = tape.input(x);
        let (eb, db) = if trainable {
            (self.encoder.bind(tape), self.decoder.bind(tape))
        } else {
            (
                self.encoder.bind_frozen(tape),
                self.decoder.bind_frozen(tape),
            )
        };
        let z = self.encoder.forward(tape, &eb, &[xv], Mode::Train)?;
        let y = self.decoder.forward(tape, &db, &[z], Mode::Train)?;
        let loss = tape.mse(y, x.values())?;
        Ok((loss, [eb, db]))
    }

    /// One SGD step on a uniform sample of `p` buffered images.
    pub fn ae_update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ImageBuffer,
        p: usize,
        epsilon3: f64,
        rng: &mut R,
    ) -> Result<AeUpdate> {
        if p == 0 || buffer.len() < p {
            return Ok(AeUpdate::Skipped {
                available: buffer.len(),
                requested: p,
            });
        }
        let batch = buffer.sample(p, rng)?;
        self.ae_step(&batch, epsilon3)
    }

    /// One SGD step on an explicit batch; returns the post-step loss on it.
    pub fn ae_step(&mut self, batch: &[&Tensor<f32>], epsilon3: f64) -> Result<AeUpdate> {
        let x = self.stack(batch)?;
        let mut tape = Tape::new();
        let (loss, [eb, db]) = self.record_loss(&mut tape, &x, true)?;
        if !tape.value(loss)[0].is_finite() {
            self.encoder.discard_batch_stats();
            return Err(Error::NonFinite(format!(
                "{} reconstruction loss",
                self.encoder.name()
            )));
        }
        let grads = tape.backward(loss)?;
        self.encoder.absorb_grads(&eb, &grads);
        self.decoder.absorb_grads(&db, &grads);
        let eps = epsilon3 as f32;
        if let Err(e) = crate::autodiff::sgd_step(self.encoder.params_mut(), eps)
            .and_then(|_| crate::autodiff::sgd_step(self.decoder.params_mut(), eps))
        {
            self.encoder.discard_batch_stats();
            return Err(e);
        }
        if epsilon3 > 0.0 {
            self.encoder.commit_batch_stats();
        } else {
            self.encoder.discard_batch_stats();
        }
        let mut tape = Tape::new();
        let (after, _) = self.record_loss(&mut tape, &x, false)?;
        self.encoder.discard_batch_stats();
        Ok(AeUpdate::Updated {
            loss: tape.value(after)[0] as f64,
        })
    }
}

/// Mean over images of per-image pixel MSE between two equally shaped sets.
pub fn mean_squared_error(images: &[&Tensor<f32>], recon: &[&Tensor<f32>]) -> Result<f64> {
    if images.is_empty() || images.len() != recon.len() {
        return Err(Error::InsufficientData {
            available: recon.len(),
            requested: images.len().max(1),
        });
    }
    let mut total = 0.0;
    for (v, r) in images.iter().zip(recon) {
        if v.shape() != r.shape() {
            return Err(Error::shape("reconstruction", v.shape(), r.shape()));
        }
        let se: f64 = v
            .values()
            .iter()
            .zip(r.values())
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        total += se / v.len() as f64;
    }
    Ok(total / images.len() as f64)
}

/// `bytes(feature) / bytes(raw image)` for float storage of both.
pub fn compression_ratio(feature_dim: usize, image_shape: [usize; 3]) -> f64 {
    feature_dim as f64 / image_shape.iter().product::<usize>() as f64
}
