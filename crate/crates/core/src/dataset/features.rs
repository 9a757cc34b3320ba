//! Feature store: materialized autoencoder features for every template,
//! summary, and single segment of a dataset, persisted as one sectioned
//! little-endian binary file with an index table and checksum.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{Autoencoder, FeatureVector, FEATURE_CHANNELS, FEATURE_LEN};
use crate::segmentation::{
    build_summary_segments, build_template, detect_r_peaks, extract_single_segments, Segment,
    SegmentKind,
};
use crate::signal::{normalize_amplitude, EcgRecord, TARGET_RATE};

pub const FEATURE_STORE_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ECGXFEAT";
const CHECKSUM_LEN: usize = 32;

/// Features of one session: the template plus all summaries and singles.
#[derive(Debug, Clone)]
pub struct SessionFeatures {
    pub session_index: u32,
    pub template: Option<FeatureVector>,
    pub summaries: Vec<FeatureVector>,
    pub singles: Vec<FeatureVector>,
}

#[derive(Debug, Clone)]
pub struct SubjectFeatures {
    pub subject_id: String,
    pub sessions: Vec<SessionFeatures>,
}

/// All cached features of one dataset, in manifest order.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    pub name: String,
    pub leads: usize,
    pub subjects: Vec<SubjectFeatures>,
}

impl FeatureDataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectFeatures> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    /// Keeps only the named subjects, preserving manifest order.
    pub fn filter_by_ids(&self, keep: &[String]) -> FeatureDataset {
        FeatureDataset {
            name: self.name.clone(),
            leads: self.leads,
            subjects: self
                .subjects
                .iter()
                .filter(|s| keep.contains(&s.subject_id))
                .cloned()
                .collect(),
        }
    }

    /// Projects every feature onto one lead (the 1L pathway over a
    /// multi-lead store).
    pub fn select_lead(&self, lead: usize) -> Result<FeatureDataset> {
        let map_all = |fvs: &[FeatureVector]| -> Result<Vec<FeatureVector>> {
            fvs.iter().map(|f| f.select_lead(lead)).collect()
        };
        Ok(FeatureDataset {
            name: self.name.clone(),
            leads: 1,
            subjects: self
                .subjects
                .iter()
                .map(|s| {
                    Ok(SubjectFeatures {
                        subject_id: s.subject_id.clone(),
                        sessions: s
                            .sessions
                            .iter()
                            .map(|sess| {
                                Ok(SessionFeatures {
                                    session_index: sess.session_index,
                                    template: sess
                                        .template
                                        .as_ref()
                                        .map(|t| t.select_lead(lead))
                                        .transpose()?,
                                    summaries: map_all(&sess.summaries)?,
                                    singles: map_all(&sess.singles)?,
                                })
                            })
                            .collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

impl SubjectFeatures {
    pub fn session(&self, index: u32) -> Option<&SessionFeatures> {
        self.sessions.iter().find(|s| s.session_index == index)
    }
}

/// Segments one pre-processed record and encodes every segment.
///
/// Returns the session features plus non-fatal warnings (skipped segments).
fn process_record(
    record: &EcgRecord,
    ae: &mut Autoencoder,
) -> Result<(SessionFeatures, Vec<Error>)> {
    if record.sampling_rate != TARGET_RATE {
        return Err(Error::RateMismatch {
            expected: TARGET_RATE,
            actual: record.sampling_rate,
        });
    }
    let mut warnings = Vec::new();
    let peaks = detect_r_peaks(record)?;
    let singles_raw = extract_single_segments(record, &peaks);
    if singles_raw.is_empty() {
        return Err(Error::EmptyInput("no single segments in record"));
    }
    let template_raw = build_template(&singles_raw)?;
    let summaries_raw = build_summary_segments(&singles_raw);

    let template = normalize_amplitude(&template_raw)?;
    let mut summaries = Vec::with_capacity(summaries_raw.len());
    for s in &summaries_raw {
        match normalize_amplitude(s) {
            Ok(n) => summaries.push(n),
            Err(e) => warnings.push(e.with_context(&record.subject_id, record.session_index)),
        }
    }
    let mut singles = Vec::with_capacity(singles_raw.len());
    for s in &singles_raw {
        match normalize_amplitude(s) {
            Ok(n) => singles.push(n),
            Err(e) => warnings.push(e.with_context(&record.subject_id, record.session_index)),
        }
    }

    // One batched encoder pass over every lead-row of every segment.
    let ordered: Vec<&Segment> = std::iter::once(&template)
        .chain(summaries.iter())
        .chain(singles.iter())
        .collect();
    let rows: Vec<Vec<f32>> = ordered
        .iter()
        .flat_map(|seg| {
            seg.samples
                .iter()
                .map(|row| row.iter().map(|&v| v as f32).collect::<Vec<f32>>())
        })
        .collect();
    let latents = ae.encode_rows(&rows)?;
    let leads = record.n_leads();
    let mut cursor = 0usize;
    let mut take = |seg: &Segment| -> Result<FeatureVector> {
        let mut values = Vec::with_capacity(leads * FEATURE_CHANNELS * FEATURE_LEN);
        for lead_latent in &latents[cursor..cursor + leads] {
            values.extend_from_slice(lead_latent);
        }
        cursor += leads;
        FeatureVector::new(
            leads,
            values,
            seg.kind,
            seg.subject_id.clone(),
            seg.session_index,
        )
    };

    let template_fv = take(&template)?;
    let summaries_fv = summaries.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
    let singles_fv = singles.iter().map(&mut take).collect::<Result<Vec<_>>>()?;
    Ok((
        SessionFeatures {
            session_index: record.session_index,
            template: Some(template_fv),
            summaries: summaries_fv,
            singles: singles_fv,
        },
        warnings,
    ))
}

type RecordOutcome = std::result::Result<(SessionFeatures, Vec<Error>), Error>;

/// Runs the full segmentation + feature pipeline over a pre-processed
/// dataset. Failing records are skipped and reported as contextual warnings;
/// the remaining subjects are unaffected.
pub fn cache_features(
    dataset: &Dataset,
    ae: &Autoencoder,
) -> Result<(FeatureDataset, Vec<Error>)> {
    let threads = rayon::current_num_threads().max(1);
    let chunk = dataset.records.len().div_ceil(threads).max(1);
    // indexed par_chunks keeps chunk order, so results line up with records
    let chunked: Vec<Vec<RecordOutcome>> = dataset
        .records
        .par_chunks(chunk)
        .map(|records| {
            let mut local_ae = ae.clone();
            records
                .iter()
                .map(|r| {
                    process_record(r, &mut local_ae)
                        .map_err(|e| e.with_context(&r.subject_id, r.session_index))
                })
                .collect()
        })
        .collect();
    let results: Vec<RecordOutcome> = chunked.into_iter().flatten().collect();

    let mut out = FeatureDataset {
        name: dataset.name.clone(),
        leads: dataset.lead_labels.len(),
        subjects: Vec::new(),
    };
    let mut warnings = Vec::new();
    for (record, result) in dataset.records.iter().zip(results) {
        let session = match result {
            Ok((session, mut warns)) => {
                warnings.append(&mut warns);
                session
            }
            Err(e) => {
                warnings.push(e);
                continue;
            }
        };
        match out.subjects.last_mut() {
            Some(s) if s.subject_id == record.subject_id => s.sessions.push(session),
            _ => out.subjects.push(SubjectFeatures {
                subject_id: record.subject_id.clone(),
                sessions: vec![session],
            }),
        }
    }
    Ok((out, warnings))
}

// ---------------------------------------------------------------------------
// Store file
// ---------------------------------------------------------------------------

#[derive(serde::Serialize, serde::Deserialize)]
struct StoreHeader {
    name: String,
    leads: usize,
    subjects: Vec<StoreSubject>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StoreSubject {
    subject_id: String,
    sessions: Vec<StoreSession>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct StoreSession {
    session_index: u32,
    /// Element offsets into the payload; one entry per feature.
    template: Option<u64>,
    summaries: Vec<u64>,
    singles: Vec<u64>,
}

pub fn save_feature_store(store: &FeatureDataset, path: &Path) -> Result<()> {
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0u64;
    let push = |fv: &FeatureVector, payload: &mut Vec<u8>, offset: &mut u64| -> u64 {
        let at = *offset;
        for v in &fv.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        *offset += fv.values.len() as u64;
        at
    };
    let subjects = store
        .subjects
        .iter()
        .map(|s| StoreSubject {
            subject_id: s.subject_id.clone(),
            sessions: s
                .sessions
                .iter()
                .map(|sess| StoreSession {
                    session_index: sess.session_index,
                    template: sess
                        .template
                        .as_ref()
                        .map(|t| push(t, &mut payload, &mut offset)),
                    summaries: sess
                        .summaries
                        .iter()
                        .map(|f| push(f, &mut payload, &mut offset))
                        .collect(),
                    singles: sess
                        .singles
                        .iter()
                        .map(|f| push(f, &mut payload, &mut offset))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let header = serde_json::to_vec(&StoreHeader {
        name: store.name.clone(),
        leads: store.leads,
        subjects,
    })
    .expect("store header serializes");

    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FEATURE_STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_feature_store(path: &Path) -> Result<FeatureDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 + 4 + 8 + CHECKSUM_LEN || &bytes[..8] != MAGIC {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version > FEATURE_STORE_VERSION {
        return Err(Error::VersionUnsupported {
            path: path.to_path_buf(),
            found: version,
            supported: FEATURE_STORE_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    if body.len() < 20 + header_len {
        return Err(Error::ChecksumMismatch(path.to_path_buf()));
    }
    let header: StoreHeader =
        serde_json::from_slice(&body[20..20 + header_len]).map_err(|e| Error::ManifestInvalid {
            path: path.to_path_buf(),
            reason: format!("feature store header: {e}"),
        })?;
    let payload = &body[20 + header_len..];
    let feat_len = header.leads * FEATURE_CHANNELS * FEATURE_LEN;

    let read_fv = |offset: u64,
                   kind: SegmentKind,
                   subject: &str,
                   session: u32|
     -> Result<FeatureVector> {
        let start = offset as usize * 4;
        let end = start + feat_len * 4;
        if end > payload.len() {
            return Err(Error::ChecksumMismatch(path.to_path_buf()));
        }
        let values: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        FeatureVector::new(header.leads, values, kind, subject.to_string(), session)
    };

    let mut subjects = Vec::with_capacity(header.subjects.len());
    for s in &header.subjects {
        let mut sessions = Vec::with_capacity(s.sessions.len());
        for sess in &s.sessions {
            sessions.push(SessionFeatures {
                session_index: sess.session_index,
                template: sess
                    .template
                    .map(|o| read_fv(o, SegmentKind::Template, &s.subject_id, sess.session_index))
                    .transpose()?,
                summaries: sess
                    .summaries
                    .iter()
                    .map(|&o| read_fv(o, SegmentKind::Summary, &s.subject_id, sess.session_index))
                    .collect::<Result<_>>()?,
                singles: sess
                    .singles
                    .iter()
                    .map(|&o| read_fv(o, SegmentKind::Single, &s.subject_id, sess.session_index))
                    .collect::<Result<_>>()?,
            });
        }
        subjects.push(SubjectFeatures {
            subject_id: s.subject_id.clone(),
            sessions,
        });
    }
    Ok(FeatureDataset {
        name: header.name,
        leads: header.leads,
        subjects,
    })
}
