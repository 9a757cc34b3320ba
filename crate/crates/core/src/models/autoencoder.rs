//! Per-lead convolutional autoencoder.
//!
//! Encoder: four conv/BN/ReLU/pool groups take a 1-channel 400-sample lead
//! through temporal sizes 400 -> 200 -> 100 -> 50 -> 25, then a final conv
//! reduces to two latent channels. The decoder mirrors with nearest-neighbor
//! upsampling back to a 400-sample reconstruction. Leads are processed
//! independently; values from different leads are never combined.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{
    BundleKind, FeatureVector, ModelBundle, FEATURE_CHANNELS, FEATURE_LEN,
};
use crate::nn::{
    loss, training_loop, LayerSpec, LossKind, Mode, Network, PaddingSpec, Tensor, TrainConfig,
    TrainTask, TrainingLog,
};
use crate::segmentation::{Segment, SEGMENT_LEN};

fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> LayerSpec {
    LayerSpec::Conv1d {
        in_channels,
        out_channels,
        kernel,
        stride: 1,
        padding: PaddingSpec::Same,
    }
}

/// Encoder and decoder descriptors.
pub fn autoencoder_arch() -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let mut encoder = Vec::new();
    let mut ch = 1usize;
    for out in [16usize, 32, 64, 128] {
        encoder.push(conv(ch, out, 5));
        encoder.push(LayerSpec::BatchNorm1d { channels: out });
        encoder.push(LayerSpec::Relu);
        encoder.push(LayerSpec::MaxPool1d);
        ch = out;
    }
    encoder.push(conv(128, FEATURE_CHANNELS, 3));

    let mut decoder = Vec::new();
    let mut ch = FEATURE_CHANNELS;
    for out in [128usize, 64, 32, 16] {
        decoder.push(LayerSpec::UpsampleNearest2);
        decoder.push(conv(ch, out, 5));
        decoder.push(LayerSpec::BatchNorm1d { channels: out });
        decoder.push(LayerSpec::Relu);
        ch = out;
    }
    decoder.push(conv(16, 1, 5));
    (encoder, decoder)
}

#[derive(Clone)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
}

impl Autoencoder {
    pub fn new(seed: u64) -> Self {
        let (enc, dec) = autoencoder_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Autoencoder {
            encoder: Network::from_specs(&enc, &mut rng).expect("encoder arch is valid"),
            decoder: Network::from_specs(&dec, &mut rng).expect("decoder arch is valid"),
        }
    }

    /// Stacks a segment's leads as a `[leads, 1, 400]` batch.
    fn segment_batch(segment: &Segment) -> Result<Tensor> {
        if segment.samples.iter().any(|row| row.len() != SEGMENT_LEN) {
            return Err(Error::ShapeMismatch(format!(
                "segment leads must hold {SEGMENT_LEN} samples"
            )));
        }
        let data: Vec<f32> = segment
            .samples
            .iter()
            .flat_map(|row| row.iter().map(|&v| v as f32))
            .collect();
        Tensor::new(vec![segment.n_leads(), 1, SEGMENT_LEN], data)
    }

    /// Eval-mode encode + decode: latent features and per-lead
    /// reconstruction.
    pub fn forward_segment(
        &mut self,
        segment: &Segment,
    ) -> Result<(FeatureVector, Vec<Vec<f32>>)> {
        let latent = self.encode_segment(segment)?;
        let latent_t = Tensor::new(
            vec![segment.n_leads(), FEATURE_CHANNELS, FEATURE_LEN],
            latent.values.clone(),
        )?;
        let recon = self.decoder.infer(&latent_t)?;
        let rec_rows = recon
            .data()
            .chunks(SEGMENT_LEN)
            .map(|c| c.to_vec())
            .collect();
        Ok((latent, rec_rows))
    }

    /// Eval-mode latents for a batch of per-lead rows; one 50-value latent
    /// per row. Results are identical to per-row encoding (eval-mode
    /// processing is sample-independent).
    pub fn encode_rows(&mut self, rows: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256) {
            let x = rows_to_batch(chunk)?;
            let latent = self.encoder.infer(&x)?;
            out.extend(
                latent
                    .data()
                    .chunks(FEATURE_CHANNELS * FEATURE_LEN)
                    .map(|c| c.to_vec()),
            );
        }
        Ok(out)
    }

    /// Eval-mode latent features of a normalized segment.
    pub fn encode_segment(&mut self, segment: &Segment) -> Result<FeatureVector> {
        let x = Self::segment_batch(segment)?;
        let latent = self.encoder.infer(&x)?;
        debug_assert_eq!(
            latent.shape(),
            &[segment.n_leads(), FEATURE_CHANNELS, FEATURE_LEN]
        );
        FeatureVector::new(
            segment.n_leads(),
            latent.into_data(),
            segment.kind,
            segment.subject_id.clone(),
            segment.session_index,
        )
    }

    pub fn to_bundle(&self) -> ModelBundle {
        ModelBundle::from_networks(
            BundleKind::Autoencoder,
            &[("encoder", &self.encoder), ("decoder", &self.decoder)],
        )
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        bundle.expect_kind(BundleKind::Autoencoder)?;
        Ok(Autoencoder {
            encoder: bundle.build_section("encoder")?,
            decoder: bundle.build_section("decoder")?,
        })
    }

    /// Mean reconstruction MSE over per-lead rows, eval mode.
    pub fn reconstruction_mse(&mut self, rows: &[Vec<f32>]) -> Result<f64> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset("reconstruction rows"));
        }
        let mut total = 0.0f64;
        for chunk in rows.chunks(64) {
            let x = rows_to_batch(chunk)?;
            let latent = self.encoder.infer(&x)?;
            let recon = self.decoder.infer(&latent)?;
            let (l, _) = loss(&recon, &x, LossKind::Mse)?;
            total += l * chunk.len() as f64;
        }
        Ok(total / rows.len() as f64)
    }
}

fn rows_to_batch(rows: &[Vec<f32>]) -> Result<Tensor> {
    let data: Vec<f32> = rows.iter().flatten().copied().collect();
    Tensor::new(vec![rows.len(), 1, SEGMENT_LEN], data)
}

struct AeTask<'a> {
    ae: &'a mut Autoencoder,
    train: &'a [Vec<f32>],
    val: &'a [Vec<f32>],
    loss_kind: LossKind,
}

impl TrainTask for AeTask<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn train_step(&mut self, batch: &[usize], lr: f64, step: u64) -> Result<f64> {
        let rows: Vec<Vec<f32>> = batch.iter().map(|&i| self.train[i].clone()).collect();
        let x = rows_to_batch(&rows)?;
        self.ae.encoder.zero_grad();
        self.ae.decoder.zero_grad();
        let (latent, enc_trace) = self.ae.encoder.forward(&x, Mode::Train)?;
        let (recon, dec_trace) = self.ae.decoder.forward(&latent, Mode::Train)?;
        let (value, grad) = loss(&recon, &x, self.loss_kind)?;
        let grad_latent = self.ae.decoder.backward(&dec_trace, &grad);
        self.ae.encoder.backward(&enc_trace, &grad_latent);
        self.ae.encoder.step(lr, step);
        self.ae.decoder.step(lr, step);
        Ok(value)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let mut total = 0.0f64;
        for chunk in self.val.chunks(64) {
            let x = rows_to_batch(chunk)?;
            let latent = self.ae.encoder.infer(&x)?;
            let recon = self.ae.decoder.infer(&latent)?;
            let (l, _) = loss(&recon, &x, self.loss_kind)?;
            total += l * chunk.len() as f64;
        }
        Ok(total / self.val.len() as f64)
    }

    fn snapshot(&self) -> Vec<Tensor> {
        let mut snap = self.ae.encoder.snapshot();
        snap.extend(self.ae.decoder.snapshot());
        snap
    }

    fn restore(&mut self, snap: &[Tensor]) {
        let enc_len = self.ae.encoder.snapshot().len();
        self.ae.encoder.restore(&snap[..enc_len]);
        self.ae.decoder.restore(&snap[enc_len..]);
    }
}

/// Trains the autoencoder on per-lead 400-sample rows.
pub fn train_autoencoder(
    ae: &mut Autoencoder,
    train_rows: &[Vec<f32>],
    val_rows: &[Vec<f32>],
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    let mut task = AeTask {
        ae,
        train: train_rows,
        val: val_rows,
        loss_kind: cfg.loss,
    };
    training_loop(&mut task, cfg)
}
