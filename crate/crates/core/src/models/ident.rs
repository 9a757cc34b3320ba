//! Closed-set identification: frozen Siamese branch plus a fresh final
//! fully connected layer sized to the subject count, softmax output. Only
//! the final layer trains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{BundleKind, FeatureVector, ModelBundle, Siamese, EMBEDDING_LEN, FEATURE_LEN};
use crate::nn::{
    loss, training_loop, LayerSpec, Network, Tensor, TrainConfig, TrainTask, TrainingLog,
};

/// Final-layer descriptor for `n_subjects` classes.
pub fn ident_head_arch(n_subjects: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense {
            inputs: EMBEDDING_LEN,
            outputs: n_subjects,
        },
        LayerSpec::Softmax,
    ]
}

#[derive(Clone)]
pub struct IdentModel {
    pub branch: Network,
    pub head: Network,
    pub n_subjects: usize,
    pub leads: usize,
}

impl IdentModel {
    /// Builds the model on top of a trained verifier's branch; the branch is
    /// frozen, the head is freshly initialized.
    pub fn from_siamese(siamese: &Siamese, n_subjects: usize, seed: u64) -> Result<Self> {
        if n_subjects == 0 {
            return Err(Error::DimensionMismatch("zero subjects".into()));
        }
        let bundle = siamese.to_bundle();
        let mut branch = bundle.build_section("branch")?;
        branch.set_trainable(false);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Network::from_specs(&ident_head_arch(n_subjects), &mut rng)?;
        // zero-start the classifier: the softmax opens uniform, so every
        // class keeps a live gradient regardless of embedding magnitude
        head.visit_params(&mut |p| p.value.data_mut().fill(0.0));
        Ok(IdentModel {
            branch,
            head,
            n_subjects,
            leads: siamese.leads,
        })
    }

    fn stack(&self, feats: &[&FeatureVector]) -> Result<Tensor> {
        for f in feats {
            if f.leads != self.leads {
                return Err(Error::LeadCountMismatch {
                    expected: self.leads,
                    actual: f.leads,
                });
            }
        }
        let data: Vec<f32> = feats.iter().flat_map(|f| f.as_branch_sample()).collect();
        Tensor::new(vec![feats.len(), 2 * self.leads, FEATURE_LEN], data)
    }

    /// Frozen-branch embeddings, eval mode.
    pub fn embed(&mut self, feats: &[&FeatureVector]) -> Result<Tensor> {
        let x = self.stack(feats)?;
        self.branch.infer(&x)
    }

    /// Class probability vector for one feature tensor; sums to 1.
    pub fn forward(&mut self, feature: &FeatureVector) -> Result<Vec<f32>> {
        let e = self.embed(&[feature])?;
        let p = self.head.infer(&e)?;
        Ok(p.into_data())
    }

    /// Top-1 class prediction for a batch.
    pub fn predict(&mut self, feats: &[&FeatureVector]) -> Result<Vec<usize>> {
        let e = self.embed(feats)?;
        let p = self.head.infer(&e)?;
        let k = self.n_subjects;
        Ok(p
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .expect("non-empty row")
            })
            .collect())
    }

    pub fn to_bundle(&self) -> ModelBundle {
        ModelBundle::from_networks(
            BundleKind::IdentHead,
            &[("branch", &self.branch), ("head", &self.head)],
        )
    }

    pub fn from_bundle(bundle: &ModelBundle, leads: usize) -> Result<Self> {
        bundle.expect_kind(BundleKind::IdentHead)?;
        let mut branch = bundle.build_section("branch")?;
        branch.set_trainable(false);
        let head = bundle.build_section("head")?;
        let n_subjects = match bundle
            .sections
            .iter()
            .find(|s| s.name == "head")
            .and_then(|s| s.specs.first())
        {
            Some(LayerSpec::Dense { outputs, .. }) => *outputs,
            _ => {
                return Err(Error::DimensionMismatch(
                    "ident bundle head must start with a dense layer".into(),
                ))
            }
        };
        Ok(IdentModel {
            branch,
            head,
            n_subjects,
            leads,
        })
    }
}

/// Head-only trainer over precomputed embeddings.
struct IdentTask<'a> {
    head: &'a mut Network,
    embeddings: &'a Tensor, // [n, 1024]
    one_hot: &'a [f32],     // row-major [n, k]
    train_idx: &'a [usize],
    val_idx: &'a [usize],
    classes: usize,
    loss_kind: crate::nn::LossKind,
}

impl IdentTask<'_> {
    fn gather(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let e = self.embeddings.data();
        let k = self.classes;
        let mut x = Vec::with_capacity(idx.len() * EMBEDDING_LEN);
        let mut t = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            x.extend_from_slice(&e[i * EMBEDDING_LEN..(i + 1) * EMBEDDING_LEN]);
            t.extend_from_slice(&self.one_hot[i * k..(i + 1) * k]);
        }
        (
            Tensor::new(vec![idx.len(), EMBEDDING_LEN], x).unwrap(),
            Tensor::new(vec![idx.len(), k], t).unwrap(),
        )
    }
}

impl TrainTask for IdentTask<'_> {
    fn train_len(&self) -> usize {
        self.train_idx.len()
    }

    fn val_len(&self) -> usize {
        self.val_idx.len()
    }

    fn train_step(&mut self, batch: &[usize], lr: f64, step: u64) -> Result<f64> {
        let rows: Vec<usize> = batch.iter().map(|&b| self.train_idx[b]).collect();
        let (x, t) = self.gather(&rows);
        self.head.zero_grad();
        let (p, trace) = self.head.forward(&x, crate::nn::Mode::Train)?;
        let (value, grad) = loss(&p, &t, self.loss_kind)?;
        self.head.backward(&trace, &grad);
        self.head.step(lr, step);
        Ok(value)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let (x, t) = self.gather(self.val_idx);
        let p = self.head.infer(&x)?;
        Ok(loss(&p, &t, self.loss_kind)?.0)
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.head.snapshot()
    }

    fn restore(&mut self, snap: &[Tensor]) {
        self.head.restore(snap);
    }
}

/// Trains the final layer on labelled features; the branch stays frozen
/// (embeddings are computed once, eval mode).
pub fn train_ident_head(
    model: &mut IdentModel,
    train: &[(FeatureVector, usize)],
    val: &[(FeatureVector, usize)],
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("identification training set"));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("identification validation set"));
    }
    let all: Vec<&FeatureVector> = train.iter().chain(val.iter()).map(|(f, _)| f).collect();
    let embeddings = model.embed(&all)?;
    let k = model.n_subjects;
    let mut one_hot = vec![0.0f32; all.len() * k];
    for (i, (_, label)) in train.iter().chain(val.iter()).enumerate() {
        if *label >= k {
            return Err(Error::DimensionMismatch(format!(
                "label {label} out of {k} classes"
            )));
        }
        one_hot[i * k + label] = 1.0;
    }
    let train_idx: Vec<usize> = (0..train.len()).collect();
    let val_idx: Vec<usize> = (train.len()..all.len()).collect();
    let mut task = IdentTask {
        head: &mut model.head,
        embeddings: &embeddings,
        one_hot: &one_hot,
        train_idx: &train_idx,
        val_idx: &val_idx,
        classes: k,
        loss_kind: cfg.loss,
    };
    training_loop(&mut task, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LossKind;
    use crate::segmentation::SegmentKind;
    use rand::Rng;
    use sha2::Digest;

    fn feature(seed: u64) -> FeatureVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureVector::new(
            1,
            (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            SegmentKind::Summary,
            format!("s{seed}"),
            1,
        )
        .unwrap()
    }

    fn branch_checksum(model: &IdentModel) -> Vec<u8> {
        let mut hasher = sha2::Sha256::new();
        for (name, t) in model.branch.export_params() {
            hasher.update(name.as_bytes());
            for v in t.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().to_vec()
    }

    #[test]
    fn output_is_a_distribution_of_the_right_size() {
        let siamese = Siamese::new(1, 1).unwrap();
        let mut model = IdentModel::from_siamese(&siamese, 113, 2).unwrap();
        let p = model.forward(&feature(5)).unwrap();
        assert_eq!(p.len(), 113);
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() <= 1e-6, "probabilities sum to {sum}");
    }

    #[test]
    fn single_subject_softmax_is_one() {
        let siamese = Siamese::new(1, 3).unwrap();
        let mut model = IdentModel::from_siamese(&siamese, 1, 4).unwrap();
        let p = model.forward(&feature(6)).unwrap();
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn training_touches_only_the_head() {
        let siamese = Siamese::new(1, 7).unwrap();
        let mut model = IdentModel::from_siamese(&siamese, 4, 8).unwrap();
        let before = branch_checksum(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut data: Vec<(FeatureVector, usize)> = Vec::new();
        for class in 0..4usize {
            for _ in 0..8 {
                let mut f = feature(class as u64 + 100);
                for v in f.values.iter_mut() {
                    *v += rng.gen_range(-0.05..0.05);
                }
                data.push((f, class));
            }
        }
        let (train, val) = data.split_at(24);
        let mut cfg = TrainConfig::new(LossKind::CategoricalCrossEntropy, 10);
        cfg.batch_size = 8;
        cfg.max_epochs = 5;
        train_ident_head(&mut model, train, val, &cfg).unwrap();
        assert_eq!(branch_checksum(&model), before, "backbone drifted");
    }

    #[test]
    fn head_training_learns_separable_classes() {
        let siamese = Siamese::new(1, 11).unwrap();
        let mut model = IdentModel::from_siamese(&siamese, 5, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let anchors: Vec<FeatureVector> = (0..5).map(|i| feature(i as u64 + 40)).collect();
        let jittered = |anchor: &FeatureVector, rng: &mut ChaCha8Rng| {
            let mut f = anchor.clone();
            for v in f.values.iter_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
            f
        };
        let mut data = Vec::new();
        for class in 0..5usize {
            for _ in 0..10 {
                data.push((jittered(&anchors[class], &mut rng), class));
            }
        }
        let (train, val) = data.split_at(40);
        let mut cfg = TrainConfig::new(LossKind::CategoricalCrossEntropy, 14);
        cfg.batch_size = 16;
        cfg.max_epochs = 60;
        cfg.initial_lr = 0.01;
        train_ident_head(&mut model, train, val, &cfg).unwrap();

        let probes: Vec<(FeatureVector, usize)> = (0..5)
            .flat_map(|c| {
                (0..4)
                    .map(|_| (jittered(&anchors[c], &mut rng), c))
                    .collect::<Vec<_>>()
            })
            .collect();
        let refs: Vec<&FeatureVector> = probes.iter().map(|(f, _)| f).collect();
        let pred = model.predict(&refs).unwrap();
        let hits = pred
            .iter()
            .zip(probes.iter().map(|(_, c)| c))
            .filter(|(a, b)| a == b)
            .count();
        assert!(hits >= 16, "only {hits} of 20 held-out probes correct");
    }

    #[test]
    fn bundle_round_trip() {
        let siamese = Siamese::new(1, 15).unwrap();
        let mut model = IdentModel::from_siamese(&siamese, 7, 16).unwrap();
        let f = feature(17);
        let before = model.forward(&f).unwrap();
        let mut re = IdentModel::from_bundle(&model.to_bundle(), 1).unwrap();
        assert_eq!(re.n_subjects, 7);
        assert_eq!(re.forward(&f).unwrap(), before);
    }
}
