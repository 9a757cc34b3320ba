//! The three segment models: per-lead convolutional autoencoder, 1L/12L
//! Siamese verifier, and the frozen-backbone identification head.

mod autoencoder;
mod ident;
mod siamese;

pub use autoencoder::{autoencoder_arch, train_autoencoder, Autoencoder};
pub use ident::{ident_head_arch, train_ident_head, IdentModel};
pub use siamese::{siamese_branch_arch, siamese_head_arch, train_siamese, PairExample, Siamese};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Tensor};
use crate::segmentation::SegmentKind;

/// Latent channels per lead.
pub const FEATURE_CHANNELS: usize = 2;
/// Temporal features per latent channel.
pub const FEATURE_LEN: usize = 25;
/// Length of the Siamese branch embedding.
pub const EMBEDDING_LEN: usize = 1024;

/// Per-lead latent features of one segment: shape `[leads, 2, 25]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub leads: usize,
    /// Row-major `[lead][channel][t]`.
    pub values: Vec<f32>,
    pub source_segment_kind: SegmentKind,
    pub subject_id: String,
    pub session_index: u32,
}

impl FeatureVector {
    pub fn new(
        leads: usize,
        values: Vec<f32>,
        source_segment_kind: SegmentKind,
        subject_id: String,
        session_index: u32,
    ) -> Result<Self> {
        if values.len() != leads * FEATURE_CHANNELS * FEATURE_LEN {
            return Err(Error::DimensionMismatch(format!(
                "feature vector for {leads} leads needs {} values, got {}",
                leads * FEATURE_CHANNELS * FEATURE_LEN,
                values.len()
            )));
        }
        Ok(FeatureVector {
            leads,
            values,
            source_segment_kind,
            subject_id,
            session_index,
        })
    }

    /// The `[2l, 25]` channel stack the Siamese branch consumes; lead `i`
    /// occupies channels `2i` and `2i + 1`.
    pub fn as_branch_sample(&self) -> Vec<f32> {
        self.values.clone()
    }

    /// The single-lead view of one lead's features; exact, since leads are
    /// encoded independently.
    pub fn select_lead(&self, lead: usize) -> Result<FeatureVector> {
        if lead >= self.leads {
            return Err(Error::LeadCountMismatch {
                expected: self.leads,
                actual: lead + 1,
            });
        }
        let span = FEATURE_CHANNELS * FEATURE_LEN;
        FeatureVector::new(
            1,
            self.values[lead * span..(lead + 1) * span].to_vec(),
            self.source_segment_kind,
            self.subject_id.clone(),
            self.session_index,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Which model a bundle stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BundleKind {
    Autoencoder,
    Siamese1L,
    Siamese12L,
    IdentHead,
}

/// One named section of a bundle (e.g. "encoder", "branch").
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BundleSection {
    pub name: String,
    pub specs: Vec<LayerSpec>,
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Versioned, serializable model state: architecture descriptor plus all
/// parameters (batch-norm running statistics included).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub kind: BundleKind,
    pub format_version: u32,
    pub sections: Vec<BundleSection>,
    pub parameters: Vec<NamedTensor>,
}

pub const BUNDLE_VERSION: u32 = 1;

impl ModelBundle {
    /// Packs networks into a bundle; parameter names are prefixed with their
    /// section name.
    pub fn from_networks(kind: BundleKind, sections: &[(&str, &Network)]) -> ModelBundle {
        let mut bundle_sections = Vec::new();
        let mut parameters = Vec::new();
        for (name, net) in sections {
            bundle_sections.push(BundleSection {
                name: name.to_string(),
                specs: net.specs(),
            });
            for (pname, tensor) in net.export_params() {
                parameters.push(NamedTensor {
                    name: format!("{name}.{pname}"),
                    tensor,
                });
            }
        }
        ModelBundle {
            kind,
            format_version: BUNDLE_VERSION,
            sections: bundle_sections,
            parameters,
        }
    }

    /// Rebuilds one section's network, loading its parameters.
    pub fn build_section(&self, name: &str) -> Result<Network> {
        let section = self
            .sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| {
                Error::DimensionMismatch(format!("bundle has no section {name:?}"))
            })?;
        // construction rng is irrelevant: every weight is overwritten
        let mut net = Network::from_specs(&section.specs, &mut ChaCha8Rng::seed_from_u64(0))?;
        let prefix = format!("{name}.");
        let params: Vec<(String, Tensor)> = self
            .parameters
            .iter()
            .filter(|p| p.name.starts_with(&prefix))
            .map(|p| (p.name[prefix.len()..].to_string(), p.tensor.clone()))
            .collect();
        net.import_params(&params)?;
        Ok(net)
    }

    pub fn expect_kind(&self, kind: BundleKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::DimensionMismatch(format!(
                "bundle holds {:?}, expected {:?}",
                self.kind, kind
            )));
        }
        Ok(())
    }
}
