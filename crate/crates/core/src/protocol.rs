//! Seeded generation of training/evaluation pair sets and identification
//! splits.
//!
//! Every generator walks subjects in manifest order and draws from a
//! ChaCha8 stream seeded by the caller, so one (dataset, scenario, seed)
//! triple always produces a byte-identical pair manifest. Verification pair
//! sets hold a 1:5 genuine:impostor ratio exactly; impostor subjects are
//! pairwise distinct within one subject's block.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::features::{FeatureDataset, SubjectFeatures};
use crate::error::{Error, Result};
use crate::models::{FeatureVector, PairExample};
use crate::segmentation::SegmentKind;

/// Impostor pairs per genuine pair in every verification set.
pub const IMPOSTOR_RATIO: usize = 5;

/// Genuine pairs per subject: training and single-session evaluation.
pub const GENUINE_PER_SUBJECT: usize = 3;

/// Training-sample quotas per subject reported for the reference corpora.
pub const MULTI_SESSION_TRAIN_QUOTA: usize = 68;
pub const SINGLE_SESSION_TRAIN_QUOTA: usize = 18;
pub const SINGLE_SESSION_HEALTHY_TRAIN_QUOTA: usize = 14;
pub const MIXED_SESSION_TRAIN_QUOTA: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Genuine,
    Impostor,
}

impl PairLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Impostor => "impostor",
        }
    }
}

/// Stable reference to one stored segment feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentRef {
    pub session_index: u32,
    pub kind: SegmentKind,
    pub index: usize,
}

impl std::fmt::Display for SegmentRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "s{}:{}:{}",
            self.session_index,
            self.kind.as_str(),
            self.index
        )
    }
}

/// One enrolment/probe comparison.
#[derive(Debug, Clone)]
pub struct ComparisonPair {
    pub enrol: FeatureVector,
    pub probe: FeatureVector,
    pub label: PairLabel,
    pub enrol_subject: String,
    pub probe_subject: String,
    pub enrol_ref: SegmentRef,
    pub probe_ref: SegmentRef,
}

impl ComparisonPair {
    pub fn enrol_kind(&self) -> SegmentKind {
        self.enrol_ref.kind
    }

    pub fn probe_kind(&self) -> SegmentKind {
        self.probe_ref.kind
    }

    pub fn to_example(&self) -> PairExample {
        PairExample {
            enrol: self.enrol.clone(),
            probe: self.probe.clone(),
            genuine: self.label == PairLabel::Genuine,
        }
    }
}

/// Verification and identification scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Training,
    SingleSessionEval,
    MultiSessionEval,
    FineTune,
    IdentSingle,
    IdentMulti,
    IdentMixed,
}

/// Resolved pair-generation settings.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProtocolConfig {
    pub scenario: Scenario,
    pub genuine_per_subject: usize,
    pub impostor_per_subject: usize,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        let genuine_per_subject = match scenario {
            Scenario::MultiSessionEval => 1,
            _ => GENUINE_PER_SUBJECT,
        };
        ProtocolConfig {
            scenario,
            genuine_per_subject,
            impostor_per_subject: IMPOSTOR_RATIO * genuine_per_subject,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.impostor_per_subject != IMPOSTOR_RATIO * self.genuine_per_subject {
            return Err(Error::DimensionMismatch(format!(
                "impostor quota {} must be {IMPOSTOR_RATIO} x genuine quota {}",
                self.impostor_per_subject, self.genuine_per_subject
            )));
        }
        Ok(())
    }

    /// Validates the config and generates its pair set.
    pub fn generate(&self, ds: &FeatureDataset) -> Result<Vec<ComparisonPair>> {
        self.validate()?;
        generate_verification_pairs(ds, self.scenario, self.seed)
    }
}

fn make_pair(
    label: PairLabel,
    enrol_subject: &SubjectFeatures,
    enrol: (&FeatureVector, SegmentRef),
    probe_subject: &SubjectFeatures,
    probe: (&FeatureVector, SegmentRef),
) -> ComparisonPair {
    ComparisonPair {
        enrol: enrol.0.clone(),
        probe: probe.0.clone(),
        label,
        enrol_subject: enrol_subject.subject_id.clone(),
        probe_subject: probe_subject.subject_id.clone(),
        enrol_ref: enrol.1,
        probe_ref: probe.1,
    }
}

/// Singles of every session after the first, in (session, index) order.
fn later_singles(subject: &SubjectFeatures) -> Vec<(&FeatureVector, SegmentRef)> {
    subject
        .sessions
        .iter()
        .skip(1)
        .flat_map(|sess| {
            sess.singles.iter().enumerate().map(move |(i, f)| {
                (
                    f,
                    SegmentRef {
                        session_index: sess.session_index,
                        kind: SegmentKind::Single,
                        index: i,
                    },
                )
            })
        })
        .collect()
}

fn session_template(subject: &SubjectFeatures, nth: usize) -> Option<(&FeatureVector, SegmentRef)> {
    let sess = subject.sessions.get(nth)?;
    sess.template.as_ref().map(|t| {
        (
            t,
            SegmentRef {
                session_index: sess.session_index,
                kind: SegmentKind::Template,
                index: 0,
            },
        )
    })
}

fn session_summaries(
    subject: &SubjectFeatures,
    nth: usize,
) -> Vec<(&FeatureVector, SegmentRef)> {
    subject
        .sessions
        .get(nth)
        .map(|sess| {
            sess.summaries
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    (
                        f,
                        SegmentRef {
                            session_index: sess.session_index,
                            kind: SegmentKind::Summary,
                            index: i,
                        },
                    )
                })
                .collect()
        })
        .unwrap_or_default()
}

/// Training pairs: session-1 template vs single segments of later sessions,
/// up to 3 genuine per subject and exactly five impostors per genuine, each
/// impostor from a distinct other subject.
pub fn make_training_pairs(ds: &FeatureDataset, seed: u64) -> Result<Vec<ComparisonPair>> {
    let eligible: Vec<usize> = (0..ds.subjects.len())
        .filter(|&i| {
            session_template(&ds.subjects[i], 0).is_some()
                && !later_singles(&ds.subjects[i]).is_empty()
        })
        .collect();
    if eligible.len() < IMPOSTOR_RATIO + 1 {
        return Err(Error::TooFewSubjects {
            have: eligible.len(),
            need: IMPOSTOR_RATIO + 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for &si in &eligible {
        let subject = &ds.subjects[si];
        let enrol = session_template(subject, 0).expect("eligibility checked");
        let pool = later_singles(subject);
        let genuine_quota = GENUINE_PER_SUBJECT
            .min(pool.len())
            .min((eligible.len() - 1) / IMPOSTOR_RATIO);
        if genuine_quota == 0 {
            continue;
        }
        let genuine: Vec<&(&FeatureVector, SegmentRef)> =
            pool.choose_multiple(&mut rng, genuine_quota).collect();
        for probe in &genuine {
            pairs.push(make_pair(PairLabel::Genuine, subject, enrol, subject, **probe));
        }
        let others: Vec<usize> = eligible.iter().copied().filter(|&o| o != si).collect();
        let impostors: Vec<usize> = others
            .choose_multiple(&mut rng, IMPOSTOR_RATIO * genuine_quota)
            .copied()
            .collect();
        for oi in impostors {
            let other = &ds.subjects[oi];
            let other_pool = later_singles(other);
            let probe = other_pool[rng.gen_range(0..other_pool.len())];
            pairs.push(make_pair(PairLabel::Impostor, subject, enrol, other, probe));
        }
    }
    Ok(pairs)
}

/// Single-session evaluation: summary vs summary, both from the second
/// session; 3 genuine and 15 impostor pairs per subject.
pub fn make_single_session_pairs(ds: &FeatureDataset, seed: u64) -> Result<Vec<ComparisonPair>> {
    let eligible: Vec<usize> = (0..ds.subjects.len())
        .filter(|&i| !session_summaries(&ds.subjects[i], 1).is_empty())
        .collect();
    let need = IMPOSTOR_RATIO * GENUINE_PER_SUBJECT + 1;
    if eligible.len() < need {
        return Err(Error::TooFewSubjects {
            have: eligible.len(),
            need,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for &si in &eligible {
        let subject = &ds.subjects[si];
        let summaries = session_summaries(subject, 1);
        if summaries.len() < 2 {
            return Err(Error::InsufficientSummaries {
                subject: subject.subject_id.clone(),
                session: subject.sessions[1].session_index,
                have: summaries.len(),
                need: 2,
            });
        }
        // distinct unordered summary pairs, no duplicates
        let mut all_pairs: Vec<(usize, usize)> = Vec::new();
        for a in 0..summaries.len() {
            for b in a + 1..summaries.len() {
                all_pairs.push((a, b));
            }
        }
        let genuine_quota = GENUINE_PER_SUBJECT.min(all_pairs.len());
        let chosen: Vec<&(usize, usize)> =
            all_pairs.choose_multiple(&mut rng, genuine_quota).collect();
        for &&(a, b) in &chosen {
            pairs.push(make_pair(
                PairLabel::Genuine,
                subject,
                summaries[a],
                subject,
                summaries[b],
            ));
        }
        let others: Vec<usize> = eligible.iter().copied().filter(|&o| o != si).collect();
        let impostors: Vec<usize> = others
            .choose_multiple(&mut rng, IMPOSTOR_RATIO * genuine_quota)
            .copied()
            .collect();
        for oi in impostors {
            let other = &ds.subjects[oi];
            let other_summaries = session_summaries(other, 1);
            let probe = other_summaries[rng.gen_range(0..other_summaries.len())];
            let enrol = summaries[rng.gen_range(0..summaries.len())];
            pairs.push(make_pair(PairLabel::Impostor, subject, enrol, other, probe));
        }
    }
    Ok(pairs)
}

/// Multi-session evaluation: session-1 template vs session-2 template;
/// one genuine and five impostor pairs per subject.
pub fn make_multi_session_pairs(ds: &FeatureDataset, seed: u64) -> Result<Vec<ComparisonPair>> {
    let eligible: Vec<usize> = (0..ds.subjects.len())
        .filter(|&i| {
            session_template(&ds.subjects[i], 0).is_some()
                && session_template(&ds.subjects[i], 1).is_some()
        })
        .collect();
    if eligible.len() < IMPOSTOR_RATIO + 1 {
        return Err(Error::TooFewSubjects {
            have: eligible.len(),
            need: IMPOSTOR_RATIO + 1,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for &si in &eligible {
        let subject = &ds.subjects[si];
        let enrol = session_template(subject, 0).expect("eligibility checked");
        let own_probe = session_template(subject, 1).expect("eligibility checked");
        pairs.push(make_pair(PairLabel::Genuine, subject, enrol, subject, own_probe));
        let others: Vec<usize> = eligible.iter().copied().filter(|&o| o != si).collect();
        let impostors: Vec<usize> = others
            .choose_multiple(&mut rng, IMPOSTOR_RATIO)
            .copied()
            .collect();
        for oi in impostors {
            let other = &ds.subjects[oi];
            let probe = session_template(other, 1).expect("eligibility checked");
            pairs.push(make_pair(PairLabel::Impostor, subject, enrol, other, probe));
        }
    }
    Ok(pairs)
}

/// Fine-tuning pairs: subjects minus the exclusion list, split 80:20 by
/// subject; every pair is single vs single at the 1:5 ratio within each
/// split.
pub fn make_finetune_pairs(
    ds: &FeatureDataset,
    exclusion: &[String],
    seed: u64,
) -> Result<(Vec<ComparisonPair>, Vec<ComparisonPair>)> {
    let kept: Vec<usize> = (0..ds.subjects.len())
        .filter(|&i| !exclusion.contains(&ds.subjects[i].subject_id))
        .filter(|&i| all_singles(&ds.subjects[i]).len() >= 2)
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterExclusion);
    }
    if kept.len() < 2 * (IMPOSTOR_RATIO + 1) {
        return Err(Error::TooFewSubjects {
            have: kept.len(),
            need: 2 * (IMPOSTOR_RATIO + 1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = kept;
    order.shuffle(&mut rng);
    // 80:20 by subject, both sides large enough to draw five distinct
    // impostor subjects
    let n_train = ((order.len() * 4) / 5).clamp(IMPOSTOR_RATIO + 1, order.len() - IMPOSTOR_RATIO - 1);
    let (train_subjects, val_subjects) = order.split_at(n_train);
    let train = finetune_split_pairs(ds, train_subjects, &mut rng)?;
    let val = finetune_split_pairs(ds, val_subjects, &mut rng)?;
    Ok((train, val))
}

fn all_singles(subject: &SubjectFeatures) -> Vec<(&FeatureVector, SegmentRef)> {
    subject
        .sessions
        .iter()
        .flat_map(|sess| {
            sess.singles.iter().enumerate().map(move |(i, f)| {
                (
                    f,
                    SegmentRef {
                        session_index: sess.session_index,
                        kind: SegmentKind::Single,
                        index: i,
                    },
                )
            })
        })
        .collect()
}

fn finetune_split_pairs(
    ds: &FeatureDataset,
    subject_idx: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ComparisonPair>> {
    if subject_idx.len() < IMPOSTOR_RATIO + 1 {
        return Err(Error::TooFewSubjects {
            have: subject_idx.len(),
            need: IMPOSTOR_RATIO + 1,
        });
    }
    let mut pairs = Vec::new();
    for &si in subject_idx {
        let subject = &ds.subjects[si];
        let singles = all_singles(subject);
        let max_genuine = singles.len() * (singles.len() - 1) / 2;
        let genuine_quota = GENUINE_PER_SUBJECT
            .min(max_genuine)
            .min((subject_idx.len() - 1) / IMPOSTOR_RATIO);
        if genuine_quota == 0 {
            continue;
        }
        let mut seen: Vec<(usize, usize)> = Vec::new();
        while seen.len() < genuine_quota {
            let a = rng.gen_range(0..singles.len());
            let b = rng.gen_range(0..singles.len());
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            pairs.push(make_pair(
                PairLabel::Genuine,
                subject,
                singles[key.0],
                subject,
                singles[key.1],
            ));
        }
        let others: Vec<usize> = subject_idx.iter().copied().filter(|&o| o != si).collect();
        let impostors: Vec<usize> = others
            .choose_multiple(rng, IMPOSTOR_RATIO * genuine_quota)
            .copied()
            .collect();
        for oi in impostors {
            let other = &ds.subjects[oi];
            let other_singles = all_singles(other);
            let probe = other_singles[rng.gen_range(0..other_singles.len())];
            let enrol = singles[rng.gen_range(0..singles.len())];
            pairs.push(make_pair(PairLabel::Impostor, subject, enrol, other, probe));
        }
    }
    Ok(pairs)
}

/// Generates the pair set a verification scenario calls for.
pub fn generate_verification_pairs(
    ds: &FeatureDataset,
    scenario: Scenario,
    seed: u64,
) -> Result<Vec<ComparisonPair>> {
    match scenario {
        Scenario::Training => make_training_pairs(ds, seed),
        Scenario::SingleSessionEval => make_single_session_pairs(ds, seed),
        Scenario::MultiSessionEval => make_multi_session_pairs(ds, seed),
        other => Err(Error::DimensionMismatch(format!(
            "{other:?} is not a verification pair scenario"
        ))),
    }
}

/// Line-delimited export: `label,enrol_subject,enrol_ref,probe_subject,probe_ref`.
pub fn pair_manifest(pairs: &[ComparisonPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.label.as_str(),
            p.enrol_subject,
            p.enrol_ref,
            p.probe_subject,
            p.probe_ref
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Identification splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentScenario {
    SingleSession,
    MultiSession,
    MixedSession,
}

/// Per-subject sample quotas after splitting; `None` keeps natural counts.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct IdentQuotas {
    pub train_per_subject: Option<usize>,
    pub val_per_subject: Option<usize>,
    pub test_per_subject: Option<usize>,
}

/// Labelled summary-feature splits; labels index `subject_ids`.
#[derive(Debug, Clone)]
pub struct IdentSplit {
    pub subject_ids: Vec<String>,
    pub train: Vec<(FeatureVector, usize)>,
    pub val: Vec<(FeatureVector, usize)>,
    pub test: Vec<(FeatureVector, usize)>,
}

/// Splits summary segments per subject for closed-set identification.
///
/// Single/mixed sessions split 70:10:20; multi-session splits all-but-last
/// 80:20 for train/val and evaluates on the last session exclusively.
/// Quotas equalize per-subject counts by subsampling (more than quota) or
/// resampling with replacement (fewer).
pub fn split_identification(
    ds: &FeatureDataset,
    scenario: IdentScenario,
    seed: u64,
    quotas: IdentQuotas,
) -> Result<IdentSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = IdentSplit {
        subject_ids: Vec::new(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for subject in &ds.subjects {
        let label = split.subject_ids.len();
        let (mut train, mut val, mut test) = match scenario {
            IdentScenario::SingleSession | IdentScenario::MixedSession => {
                let sessions = if scenario == IdentScenario::SingleSession {
                    &subject.sessions[..1.min(subject.sessions.len())]
                } else {
                    &subject.sessions[..2.min(subject.sessions.len())]
                };
                let mut pool: Vec<FeatureVector> = sessions
                    .iter()
                    .flat_map(|s| s.summaries.iter().cloned())
                    .collect();
                if pool.len() < 3 {
                    return Err(Error::NoSummaries(subject.subject_id.clone()));
                }
                pool.shuffle(&mut rng);
                let n = pool.len();
                let n_train = ((n as f64) * 0.7).floor().max(1.0) as usize;
                let n_val = ((n as f64) * 0.1).floor().max(1.0) as usize;
                let n_train = n_train.min(n - 2);
                let n_val = n_val.min(n - n_train - 1);
                let test = pool.split_off(n_train + n_val);
                let val = pool.split_off(n_train);
                (pool, val, test)
            }
            IdentScenario::MultiSession => {
                if subject.sessions.len() < 2 {
                    return Err(Error::NoSummaries(subject.subject_id.clone()));
                }
                let (last, earlier) = subject.sessions.split_last().expect("non-empty");
                let mut pool: Vec<FeatureVector> = earlier
                    .iter()
                    .flat_map(|s| s.summaries.iter().cloned())
                    .collect();
                let test: Vec<FeatureVector> = last.summaries.clone();
                if pool.len() < 2 || test.is_empty() {
                    return Err(Error::NoSummaries(subject.subject_id.clone()));
                }
                pool.shuffle(&mut rng);
                let n_train = ((pool.len() as f64) * 0.8).floor().max(1.0) as usize;
                let n_train = n_train.min(pool.len() - 1);
                let val = pool.split_off(n_train);
                (pool, val, test)
            }
        };
        equalize(&mut train, quotas.train_per_subject, &mut rng);
        equalize(&mut val, quotas.val_per_subject, &mut rng);
        equalize(&mut test, quotas.test_per_subject, &mut rng);
        split.train.extend(train.into_iter().map(|f| (f, label)));
        split.val.extend(val.into_iter().map(|f| (f, label)));
        split.test.extend(test.into_iter().map(|f| (f, label)));
        split.subject_ids.push(subject.subject_id.clone());
    }
    Ok(split)
}

/// Subsample without replacement above the quota, resample with replacement
/// below it.
fn equalize(pool: &mut Vec<FeatureVector>, quota: Option<usize>, rng: &mut ChaCha8Rng) {
    let Some(q) = quota else { return };
    if pool.is_empty() {
        return;
    }
    if pool.len() > q {
        pool.truncate(q); // pool is already shuffled
    } else {
        while pool.len() < q {
            let pick = rng.gen_range(0..pool.len());
            let clone = pool[pick].clone();
            pool.push(clone);
        }
    }
}
