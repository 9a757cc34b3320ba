//! 1L/12L Siamese verifier.
//!
//! A shared branch maps each feature tensor (2l channels of 25 samples) to a
//! 1024-feature embedding; the per-dimension squared difference of the two
//! embeddings feeds a small dense head ending in a sigmoid match score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{BundleKind, FeatureVector, ModelBundle, EMBEDDING_LEN, FEATURE_LEN};
use crate::nn::{
    loss, training_loop, LayerSpec, Mode, Network, PaddingSpec, Tensor, TrainConfig, TrainTask,
    TrainingLog,
};

fn conv(in_channels: usize, out_channels: usize) -> LayerSpec {
    LayerSpec::Conv1d {
        in_channels,
        out_channels,
        kernel: 3,
        stride: 1,
        padding: PaddingSpec::Same,
    }
}

/// Branch descriptor: `[2l, 25]` -> 1024-feature embedding.
pub fn siamese_branch_arch(leads: usize) -> Vec<LayerSpec> {
    vec![
        conv(2 * leads, 64),
        LayerSpec::BatchNorm1d { channels: 64 },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d, // 25 -> 12
        conv(64, 128),
        LayerSpec::BatchNorm1d { channels: 128 },
        LayerSpec::Relu,
        LayerSpec::MaxPool1d, // 12 -> 6
        LayerSpec::Flatten,   // 768
        LayerSpec::Dense {
            inputs: 128 * 6,
            outputs: EMBEDDING_LEN,
        },
        LayerSpec::Relu,
    ]
}

/// Head descriptor: 1024 per-feature distances -> match score in (0, 1).
pub fn siamese_head_arch() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            inputs: EMBEDDING_LEN,
            outputs: 256,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 256,
            outputs: 1,
        },
        LayerSpec::Sigmoid,
    ]
}

/// A labelled feature pair used to train or evaluate the verifier.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub enrol: FeatureVector,
    pub probe: FeatureVector,
    pub genuine: bool,
}

#[derive(Clone)]
pub struct Siamese {
    pub branch: Network,
    pub head: Network,
    pub leads: usize,
}

impl Siamese {
    pub fn new(leads: usize, seed: u64) -> Result<Self> {
        if leads != 1 && leads != 12 {
            return Err(Error::LeadCountMismatch {
                expected: 1,
                actual: leads,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Siamese {
            branch: Network::from_specs(&siamese_branch_arch(leads), &mut rng)?,
            head: Network::from_specs(&siamese_head_arch(), &mut rng)?,
            leads,
        })
    }

    pub fn bundle_kind(&self) -> BundleKind {
        if self.leads == 1 {
            BundleKind::Siamese1L
        } else {
            BundleKind::Siamese12L
        }
    }

    fn check_leads(&self, f: &FeatureVector) -> Result<()> {
        if f.leads != self.leads {
            return Err(Error::LeadCountMismatch {
                expected: self.leads,
                actual: f.leads,
            });
        }
        Ok(())
    }

    fn stack(&self, feats: &[&FeatureVector]) -> Result<Tensor> {
        for f in feats {
            self.check_leads(f)?;
        }
        let data: Vec<f32> = feats
            .iter()
            .flat_map(|f| f.as_branch_sample())
            .collect();
        Tensor::new(vec![feats.len(), 2 * self.leads, FEATURE_LEN], data)
    }

    /// Eval-mode match scores for a batch of pairs.
    pub fn score_pairs(&mut self, pairs: &[(&FeatureVector, &FeatureVector)]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(256) {
            let a: Vec<&FeatureVector> = chunk.iter().map(|p| p.0).collect();
            let b: Vec<&FeatureVector> = chunk.iter().map(|p| p.1).collect();
            let ea = self.branch.infer(&self.stack(&a)?)?;
            let eb = self.branch.infer(&self.stack(&b)?)?;
            let d = squared_difference(&ea, &eb);
            let s = self.head.infer(&d)?;
            out.extend(s.data().iter().map(|&v| v as f64));
        }
        Ok(out)
    }

    /// Eval-mode match score of one pair.
    pub fn score(&mut self, a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
        Ok(self.score_pairs(&[(a, b)])?[0])
    }

    pub fn to_bundle(&self) -> ModelBundle {
        ModelBundle::from_networks(
            self.bundle_kind(),
            &[("branch", &self.branch), ("head", &self.head)],
        )
    }

    pub fn from_bundle(bundle: &ModelBundle) -> Result<Self> {
        let leads = match bundle.kind {
            BundleKind::Siamese1L => 1,
            BundleKind::Siamese12L => 12,
            other => {
                return Err(Error::DimensionMismatch(format!(
                    "bundle holds {other:?}, expected a Siamese verifier"
                )))
            }
        };
        Ok(Siamese {
            branch: bundle.build_section("branch")?,
            head: bundle.build_section("head")?,
            leads,
        })
    }
}

/// Per-dimension (a - b)^2; exactly symmetric in its arguments.
fn squared_difference(a: &Tensor, b: &Tensor) -> Tensor {
    let mut d = Tensor::zeros(a.shape().to_vec());
    for ((dv, &av), &bv) in d.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        let diff = av - bv;
        *dv = diff * diff;
    }
    d
}

struct SiameseTask<'a> {
    model: &'a mut Siamese,
    train: &'a [PairExample],
    val: &'a [PairExample],
    cfg_loss: crate::nn::LossKind,
}

impl SiameseTask<'_> {
    fn batch_tensors(&self, set: &[PairExample], idx: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
        let a: Vec<&FeatureVector> = idx.iter().map(|&i| &set[i].enrol).collect();
        let b: Vec<&FeatureVector> = idx.iter().map(|&i| &set[i].probe).collect();
        let labels: Vec<f32> = idx
            .iter()
            .map(|&i| if set[i].genuine { 1.0 } else { 0.0 })
            .collect();
        Ok((
            self.model.stack(&a)?,
            self.model.stack(&b)?,
            Tensor::new(vec![idx.len(), 1], labels)?,
        ))
    }
}

impl TrainTask for SiameseTask<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn val_len(&self) -> usize {
        self.val.len()
    }

    fn train_step(&mut self, batch: &[usize], lr: f64, step: u64) -> Result<f64> {
        let (xa, xb, labels) = self.batch_tensors(self.train, batch)?;
        self.model.branch.zero_grad();
        self.model.head.zero_grad();

        let (ea, trace_a) = self.model.branch.forward(&xa, Mode::Train)?;
        let (eb, trace_b) = self.model.branch.forward(&xb, Mode::Train)?;
        let d = squared_difference(&ea, &eb);
        let (score, trace_h) = self.model.head.forward(&d, Mode::Train)?;
        let (value, grad_score) = loss(&score, &labels, self.cfg_loss)?;

        let grad_d = self.model.head.backward(&trace_h, &grad_score);
        // d = (ea - eb)^2, so dd/dea = 2(ea - eb) and dd/deb is its negation
        let mut grad_ea = Tensor::zeros(ea.shape().to_vec());
        let mut grad_eb = Tensor::zeros(eb.shape().to_vec());
        for i in 0..grad_d.numel() {
            let g = grad_d.data()[i] * 2.0 * (ea.data()[i] - eb.data()[i]);
            grad_ea.data_mut()[i] = g;
            grad_eb.data_mut()[i] = -g;
        }
        self.model.branch.backward(&trace_a, &grad_ea);
        self.model.branch.backward(&trace_b, &grad_eb);

        self.model.branch.step(lr, step);
        self.model.head.step(lr, step);
        Ok(value)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let mut total = 0.0f64;
        for chunk in (0..self.val.len()).collect::<Vec<_>>().chunks(256) {
            let (xa, xb, labels) = self.batch_tensors(self.val, chunk)?;
            let ea = self.model.branch.infer(&xa)?;
            let eb = self.model.branch.infer(&xb)?;
            let d = squared_difference(&ea, &eb);
            let s = self.model.head.infer(&d)?;
            let (l, _) = loss(&s, &labels, self.cfg_loss)?;
            total += l * chunk.len() as f64;
        }
        Ok(total / self.val.len() as f64)
    }

    fn snapshot(&self) -> Vec<Tensor> {
        let mut snap = self.model.branch.snapshot();
        snap.extend(self.model.head.snapshot());
        snap
    }

    fn restore(&mut self, snap: &[Tensor]) {
        let branch_len = self.model.branch.snapshot().len();
        self.model.branch.restore(&snap[..branch_len]);
        self.model.head.restore(&snap[branch_len..]);
    }
}

/// Trains the verifier on labelled pairs (binary cross-entropy).
pub fn train_siamese(
    model: &mut Siamese,
    train: &[PairExample],
    val: &[PairExample],
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    let mut task = SiameseTask {
        model,
        train,
        val,
        cfg_loss: cfg.loss,
    };
    training_loop(&mut task, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LossKind;
    use crate::segmentation::SegmentKind;
    use rand::Rng;

    fn feature(leads: usize, seed: u64) -> FeatureVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureVector::new(
            leads,
            (0..leads * 50).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            SegmentKind::Template,
            format!("s{seed}"),
            1,
        )
        .unwrap()
    }

    #[test]
    fn score_is_exactly_symmetric() {
        let mut net = Siamese::new(1, 5).unwrap();
        let a = feature(1, 1);
        let b = feature(1, 2);
        let ab = net.score(&a, &b).unwrap();
        let ba = net.score(&b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0 && ab < 1.0);
    }

    #[test]
    fn self_score_is_constant_across_inputs() {
        let mut net = Siamese::new(1, 6).unwrap();
        let x = feature(1, 3);
        let y = feature(1, 4);
        let fx = net.score(&x, &x).unwrap();
        let fy = net.score(&y, &y).unwrap();
        assert_eq!(fx, fy);
    }

    #[test]
    fn branch_embedding_has_1024_features() {
        let mut net = Siamese::new(1, 7).unwrap();
        let x = net.stack(&[&feature(1, 8)]).unwrap();
        let e = net.branch.infer(&x).unwrap();
        assert_eq!(e.shape(), &[1, EMBEDDING_LEN]);
        let mut net12 = Siamese::new(12, 7).unwrap();
        let x12 = net12.stack(&[&feature(12, 9)]).unwrap();
        assert_eq!(net12.branch.infer(&x12).unwrap().shape(), &[1, EMBEDDING_LEN]);
    }

    #[test]
    fn lead_count_mismatch_is_rejected() {
        let mut net = Siamese::new(1, 10).unwrap();
        let f12 = feature(12, 11);
        assert!(matches!(
            net.score(&f12, &f12),
            Err(Error::LeadCountMismatch { .. })
        ));
        assert!(Siamese::new(3, 0).is_err());
    }

    #[test]
    fn bundle_round_trip_preserves_scores() {
        let mut net = Siamese::new(1, 12).unwrap();
        let (a, b) = (feature(1, 13), feature(1, 14));
        let before = net.score(&a, &b).unwrap();
        let mut re = Siamese::from_bundle(&net.to_bundle()).unwrap();
        assert_eq!(re.score(&a, &b).unwrap(), before);
    }

    /// Toy training on a separable synthetic feature set: genuine scores
    /// must come out above impostor scores on held-out pairs.
    #[test]
    fn toy_training_orders_genuine_above_impostor() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        // 20 subjects, each a distinct random anchor; samples jitter around it
        let anchors: Vec<Vec<f32>> = (0..20)
            .map(|_| (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let sample = |subj: usize, rng: &mut ChaCha8Rng| {
            let values: Vec<f32> = anchors[subj]
                .iter()
                .map(|&v| v + rng.gen_range(-0.08..0.08))
                .collect();
            FeatureVector::new(1, values, SegmentKind::Single, format!("t{subj}"), 1).unwrap()
        };
        let mut pairs = Vec::new();
        for subj in 0..20usize {
            for _ in 0..6 {
                pairs.push(PairExample {
                    enrol: sample(subj, &mut rng),
                    probe: sample(subj, &mut rng),
                    genuine: true,
                });
                let other = (subj + rng.gen_range(1..20)) % 20;
                pairs.push(PairExample {
                    enrol: sample(subj, &mut rng),
                    probe: sample(other, &mut rng),
                    genuine: false,
                });
            }
        }
        let (val, train) = pairs.split_at(40);
        let mut model = Siamese::new(1, 21).unwrap();
        let mut cfg = TrainConfig::new(LossKind::BinaryCrossEntropy, 22);
        cfg.batch_size = 32;
        cfg.max_epochs = 30;
        train_siamese(&mut model, train, val, &cfg).unwrap();

        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for _ in 0..40 {
            let s = rng.gen_range(0..20usize);
            let o = (s + rng.gen_range(1..20)) % 20;
            let (a, b, c) = (sample(s, &mut rng), sample(s, &mut rng), sample(o, &mut rng));
            genuine.push(model.score(&a, &b).unwrap());
            impostor.push(model.score(&a, &c).unwrap());
        }
        let mg = genuine.iter().sum::<f64>() / genuine.len() as f64;
        let mi = impostor.iter().sum::<f64>() / impostor.len() as f64;
        assert!(mg > mi, "mean genuine {mg} vs mean impostor {mi}");
    }
}
