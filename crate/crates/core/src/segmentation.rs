//! R-peak detection and heartbeat segmentation.
//!
//! Detection is a Pan-Tompkins cascade (5-15 Hz band-pass, five-point
//! derivative, squaring, 150 ms moving-window integration, adaptive dual
//! thresholds, 200 ms refractory) run on Lead I. Segments are 400-sample
//! windows (0.32 s before, 0.48 s after the r-peak at 500 Hz); templates and
//! summary segments reduce sets of single segments by the
//! mean -> 5-nearest -> mean procedure.

use crate::error::{Error, Result};
use crate::signal::{self, EcgRecord, Window, TARGET_RATE};

/// Samples kept before the r-peak (0.32 s at 500 Hz).
pub const PRE_SAMPLES: usize = 160;
/// Samples kept after the r-peak (0.48 s at 500 Hz).
pub const POST_SAMPLES: usize = 240;
/// Total samples per lead in every segment.
pub const SEGMENT_LEN: usize = PRE_SAMPLES + POST_SAMPLES;
/// Minimum spacing between detected r-peaks (0.2 s at 500 Hz).
pub const REFRACTORY_SAMPLES: usize = 100;
/// Number of nearest segments averaged into a template or summary.
pub const TEMPLATE_POOL: usize = 5;
/// Block size for summary segments.
pub const SUMMARY_BLOCK: usize = 10;

/// What a segment represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Single,
    Summary,
    Template,
}

impl SegmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentKind::Single => "single",
            SegmentKind::Summary => "summary",
            SegmentKind::Template => "template",
        }
    }
}

/// A heartbeat-shaped window: 400 samples per lead.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    /// `samples[lead][t]`, exactly `SEGMENT_LEN` per lead, mV.
    pub samples: Vec<Vec<f64>>,
    pub subject_id: String,
    pub session_index: u32,
    /// Sample index of the source r-peak (single segments only).
    pub anchor_peak_index: Option<usize>,
    pub normalized: bool,
}

impl Segment {
    pub fn n_leads(&self) -> usize {
        self.samples.len()
    }

    /// Concatenation of all leads, used for joint Euclidean ranking.
    fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().flat_map(|row| row.iter().copied())
    }
}

/// Detects r-peaks on Lead I of a pre-processed 500 Hz record.
///
/// Returns strictly increasing sample indices spaced at least
/// `REFRACTORY_SAMPLES` apart; an empty list means no peaks were found.
pub fn detect_r_peaks(record: &EcgRecord) -> Result<Vec<usize>> {
    if record.sampling_rate != TARGET_RATE {
        return Err(Error::RateMismatch {
            expected: TARGET_RATE,
            actual: record.sampling_rate,
        });
    }
    let lead = if record.n_leads() == 1 {
        0
    } else {
        record
            .lead_labels
            .iter()
            .position(|l| l == "I")
            .ok_or_else(|| Error::LeadMissing("I".into()))?
    };
    Ok(pan_tompkins(&record.samples[lead], TARGET_RATE))
}

fn pan_tompkins(x: &[f64], fs: u32) -> Vec<usize> {
    let n = x.len();
    if n < 4 * REFRACTORY_SAMPLES {
        return Vec::new();
    }
    let fs_f = fs as f64;

    let qrs_band = signal::bandpass_taps(5.0, 15.0, fs_f, 151, Window::Hamming);
    let bp = signal::convolve_same(x, &qrs_band);

    let mut deriv = vec![0.0f64; n];
    for i in 2..n - 2 {
        deriv[i] = (-bp[i - 2] - 2.0 * bp[i - 1] + 2.0 * bp[i + 1] + bp[i + 2]) / 8.0;
    }
    let squared: Vec<f64> = deriv.iter().map(|v| v * v).collect();

    let mwi_len = {
        let w = (0.150 * fs_f).round() as usize;
        w + (w + 1) % 2
    };
    let mwi = signal::convolve_same(&squared, &vec![1.0 / mwi_len as f64; mwi_len]);

    // Adaptive dual thresholds over the local maxima of the integrated signal.
    let init = (2 * fs as usize).min(n);
    let mut spki = 0.25 * mwi[..init].iter().fold(0.0f64, |m, &v| m.max(v));
    let mut npki = 0.5 * mwi[..init].iter().sum::<f64>() / init as f64;
    let mut threshold = npki + 0.25 * (spki - npki);

    let mut accepted: Vec<usize> = Vec::new();
    let mut maxima: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if !(mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1]) {
            continue;
        }
        maxima.push(i);
        if mwi[i] > threshold {
            let clear = accepted
                .last()
                .is_none_or(|&p| i - p >= REFRACTORY_SAMPLES);
            if clear {
                accepted.push(i);
                spki = 0.125 * mwi[i] + 0.875 * spki;
            }
        } else {
            npki = 0.125 * mwi[i] + 0.875 * npki;
        }
        threshold = npki + 0.25 * (spki - npki);
    }

    // Search back through long RR gaps with the lower threshold.
    if accepted.len() >= 3 {
        let mut rr: Vec<usize> = accepted.windows(2).map(|w| w[1] - w[0]).collect();
        rr.sort_unstable();
        let median_rr = rr[rr.len() / 2];
        let threshold2 = 0.5 * threshold;
        let mut filled: Vec<usize> = Vec::with_capacity(accepted.len());
        for idx in 0..accepted.len() {
            if idx > 0 {
                let (prev, next) = (accepted[idx - 1], accepted[idx]);
                if next - prev > median_rr * 166 / 100 {
                    let best = maxima
                        .iter()
                        .filter(|&&c| {
                            c > prev + REFRACTORY_SAMPLES
                                && c + REFRACTORY_SAMPLES < next
                                && mwi[c] > threshold2
                        })
                        .max_by(|&&a, &&b| mwi[a].total_cmp(&mwi[b]));
                    if let Some(&c) = best {
                        filled.push(c);
                    }
                }
            }
            filled.push(accepted[idx]);
        }
        accepted = filled;
    }

    // Refine each detection to the signal maximum near it, then enforce the
    // refractory spacing keeping the taller peak.
    let half = fs as usize / 10;
    let mut peaks: Vec<usize> = Vec::with_capacity(accepted.len());
    for c in accepted {
        let lo = c.saturating_sub(half);
        let hi = (c + half + 1).min(n);
        let r = (lo..hi)
            .max_by(|&a, &b| x[a].total_cmp(&x[b]))
            .expect("non-empty window");
        match peaks.last() {
            Some(&p) if r <= p => {}
            Some(&p) if r - p < REFRACTORY_SAMPLES => {
                if x[r] > x[p] {
                    *peaks.last_mut().expect("non-empty") = r;
                }
            }
            _ => peaks.push(r),
        }
    }
    peaks
}

/// Cuts one 400-sample window per retained peak; the first and last peaks
/// are discarded and windows falling outside the record are skipped.
pub fn extract_single_segments(record: &EcgRecord, peaks: &[usize]) -> Vec<Segment> {
    let n = record.n_samples();
    if peaks.len() <= 2 {
        return Vec::new();
    }
    peaks[1..peaks.len() - 1]
        .iter()
        .filter(|&&p| p >= PRE_SAMPLES && p + POST_SAMPLES <= n)
        .map(|&p| Segment {
            kind: SegmentKind::Single,
            samples: record
                .samples
                .iter()
                .map(|lead| lead[p - PRE_SAMPLES..p + POST_SAMPLES].to_vec())
                .collect(),
            subject_id: record.subject_id.clone(),
            session_index: record.session_index,
            anchor_peak_index: Some(p),
            normalized: false,
        })
        .collect()
}

/// mean -> 5 nearest -> mean reduction shared by templates and summaries.
fn reduce_segments(segments: &[Segment], kind: SegmentKind) -> Result<Segment> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("segment list"));
    }
    let leads = segments[0].n_leads();
    for s in segments {
        assert_eq!(s.n_leads(), leads, "mixed lead counts in one reduction");
        assert!(!s.normalized, "reduction expects unnormalized segments");
        for row in &s.samples {
            assert_eq!(row.len(), SEGMENT_LEN);
        }
    }

    let mean = element_mean(segments.iter());
    let mut ranked: Vec<(f64, usize)> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let d2: f64 = s
                .flat()
                .zip(mean.iter().flat_map(|row| row.iter().copied()))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2, i)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = TEMPLATE_POOL.min(segments.len());
    let selected = ranked[..k].iter().map(|&(_, i)| &segments[i]);

    Ok(Segment {
        kind,
        samples: element_mean(selected),
        subject_id: segments[0].subject_id.clone(),
        session_index: segments[0].session_index,
        anchor_peak_index: None,
        normalized: false,
    })
}

fn element_mean<'a>(segments: impl Iterator<Item = &'a Segment>) -> Vec<Vec<f64>> {
    let mut acc: Vec<Vec<f64>> = Vec::new();
    let mut count = 0usize;
    for s in segments {
        if acc.is_empty() {
            acc = vec![vec![0.0; SEGMENT_LEN]; s.n_leads()];
        }
        for (dst, src) in acc.iter_mut().zip(&s.samples) {
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += v;
            }
        }
        count += 1;
    }
    for row in &mut acc {
        for v in row.iter_mut() {
            *v /= count as f64;
        }
    }
    acc
}

/// Builds the record's template from all of its single segments.
pub fn build_template(segments: &[Segment]) -> Result<Segment> {
    reduce_segments(segments, SegmentKind::Template)
}

/// Reduces consecutive disjoint blocks of ten single segments to summary
/// segments; a trailing partial block is dropped.
pub fn build_summary_segments(segments: &[Segment]) -> Vec<Segment> {
    segments
        .chunks_exact(SUMMARY_BLOCK)
        .map(|block| reduce_segments(block, SegmentKind::Summary).expect("block is non-empty"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synthesize_ecg, SyntheticSubjectParams};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn beat_record(bpm: f64, duration_s: f64, seed: u64) -> (EcgRecord, Vec<usize>) {
        let mut params = SyntheticSubjectParams::nominal();
        params.heart_rate_bpm = bpm;
        params.rr_jitter_frac = 0.0;
        params.noise_std_mv = 0.0;
        synthesize_ecg(&params, 1, duration_s, TARGET_RATE, seed).unwrap()
    }

    #[test]
    fn detects_one_peak_per_second() {
        let (rec, truth) = beat_record(60.0, 10.0, 7);
        assert_eq!(truth.len(), 10);
        let peaks = detect_r_peaks(&rec).unwrap();
        assert_eq!(peaks.len(), 10);
        for (p, t) in peaks.iter().zip(&truth) {
            assert!(
                (*p as i64 - *t as i64).abs() <= 10,
                "peak {p} vs truth {t}"
            );
        }
    }

    #[test]
    fn detects_fifty_peaks_at_150_bpm() {
        let (rec, truth) = beat_record(150.0, 20.0, 3);
        assert_eq!(truth.len(), 50);
        let peaks = detect_r_peaks(&rec).unwrap();
        assert_eq!(peaks.len(), 50);
        for w in peaks.windows(2) {
            assert!(w[1] - w[0] >= REFRACTORY_SAMPLES);
        }
    }

    #[test]
    fn all_zero_signal_yields_no_peaks() {
        let rec = EcgRecord {
            subject_id: "z".into(),
            session_index: 1,
            session_day_offset: 0,
            sampling_rate: TARGET_RATE,
            lead_labels: vec!["I".into()],
            samples: vec![vec![0.0; 5000]],
        };
        assert!(detect_r_peaks(&rec).unwrap().is_empty());
    }

    #[test]
    fn multi_lead_requires_lead_one() {
        let rec = EcgRecord {
            subject_id: "z".into(),
            session_index: 1,
            session_day_offset: 0,
            sampling_rate: TARGET_RATE,
            lead_labels: vec!["II".into(), "III".into()],
            samples: vec![vec![0.0; 1000], vec![0.0; 1000]],
        };
        assert!(matches!(detect_r_peaks(&rec), Err(Error::LeadMissing(_))));
    }

    #[test]
    fn detection_rejects_unresampled_record() {
        let rec = EcgRecord {
            subject_id: "z".into(),
            session_index: 1,
            session_day_offset: 0,
            sampling_rate: 1000,
            lead_labels: vec!["I".into()],
            samples: vec![vec![0.0; 1000]],
        };
        assert!(matches!(
            detect_r_peaks(&rec),
            Err(Error::RateMismatch { .. })
        ));
    }

    fn ramp_record(n: usize) -> EcgRecord {
        EcgRecord {
            subject_id: "r".into(),
            session_index: 2,
            session_day_offset: 5,
            sampling_rate: TARGET_RATE,
            lead_labels: vec!["I".into(), "II".into()],
            samples: vec![
                (0..n).map(|i| i as f64).collect(),
                (0..n).map(|i| -(i as f64)).collect(),
            ],
        }
    }

    #[test]
    fn singles_drop_first_and_last_peaks() {
        let rec = ramp_record(4000);
        let peaks = vec![500, 1000, 1500, 2000, 2500];
        let segs = extract_single_segments(&rec, &peaks);
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[0].anchor_peak_index, Some(1000));
        assert_eq!(segs[2].anchor_peak_index, Some(2000));
    }

    #[test]
    fn window_covers_expected_index_range() {
        let rec = ramp_record(2000);
        let segs = extract_single_segments(&rec, &[300, 1000, 1700]);
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].samples[0].len(), SEGMENT_LEN);
        assert_eq!(segs[0].samples[0][0], 840.0);
        assert_eq!(segs[0].samples[0][399], 1239.0);
        // both leads cut from the same index range
        assert_eq!(segs[0].samples[1][0], -840.0);
    }

    #[test]
    fn out_of_bounds_window_is_skipped() {
        let rec = ramp_record(2000);
        let segs = extract_single_segments(&rec, &[50, 100, 1900]);
        assert!(segs.is_empty());
    }

    fn random_segment(rng: &mut StdRng, leads: usize) -> Segment {
        Segment {
            kind: SegmentKind::Single,
            samples: (0..leads)
                .map(|_| (0..SEGMENT_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            subject_id: "s".into(),
            session_index: 1,
            anchor_peak_index: None,
            normalized: false,
        }
    }

    /// Independent brute-force oracle: mean of all, rank by full Euclidean
    /// distance, average the five nearest.
    fn template_oracle(segments: &[Segment]) -> Vec<Vec<f64>> {
        let n = segments.len();
        let leads = segments[0].n_leads();
        let mut mean = vec![vec![0.0f64; SEGMENT_LEN]; leads];
        for s in segments {
            for l in 0..leads {
                for t in 0..SEGMENT_LEN {
                    mean[l][t] += s.samples[l][t] / n as f64;
                }
            }
        }
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|i| {
                let mut d = 0.0;
                for l in 0..leads {
                    for t in 0..SEGMENT_LEN {
                        let e = segments[i].samples[l][t] - mean[l][t];
                        d += e * e;
                    }
                }
                (d.sqrt(), i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = 5.min(n);
        let mut out = vec![vec![0.0f64; SEGMENT_LEN]; leads];
        for &(_, i) in &dist[..k] {
            for l in 0..leads {
                for t in 0..SEGMENT_LEN {
                    out[l][t] += segments[i].samples[l][t] / k as f64;
                }
            }
        }
        out
    }

    #[test]
    fn template_of_identical_segments_is_that_segment() {
        let mut rng = StdRng::seed_from_u64(5);
        let seg = random_segment(&mut rng, 2);
        let segs = vec![seg.clone(); 8];
        let tpl = build_template(&segs).unwrap();
        assert_eq!(tpl.kind, SegmentKind::Template);
        for l in 0..2 {
            for t in 0..SEGMENT_LEN {
                assert!((tpl.samples[l][t] - seg.samples[l][t]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn template_with_fewer_than_five_uses_all() {
        let mut rng = StdRng::seed_from_u64(6);
        let segs: Vec<Segment> = (0..3).map(|_| random_segment(&mut rng, 1)).collect();
        let tpl = build_template(&segs).unwrap();
        for t in 0..SEGMENT_LEN {
            let mean = (segs[0].samples[0][t] + segs[1].samples[0][t] + segs[2].samples[0][t]) / 3.0;
            assert!((tpl.samples[0][t] - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn template_matches_brute_force_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for leads in [1usize, 3] {
            for n in [5usize, 7, 12, 40] {
                let segs: Vec<Segment> = (0..n).map(|_| random_segment(&mut rng, leads)).collect();
                let tpl = build_template(&segs).unwrap();
                let oracle = template_oracle(&segs);
                for l in 0..leads {
                    for t in 0..SEGMENT_LEN {
                        assert!(
                            (tpl.samples[l][t] - oracle[l][t]).abs() <= 1e-12,
                            "n={n} leads={leads} lead {l} sample {t}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn template_permutation_invariant_for_distinct_distances() {
        let mut rng = StdRng::seed_from_u64(8);
        let segs: Vec<Segment> = (0..9).map(|_| random_segment(&mut rng, 2)).collect();
        let tpl = build_template(&segs).unwrap();
        let mut shuffled = segs.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let tpl2 = build_template(&shuffled).unwrap();
        assert_eq!(tpl.samples, tpl2.samples);
    }

    #[test]
    fn template_rejects_empty_input() {
        assert!(matches!(
            build_template(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn summaries_use_complete_blocks_only() {
        let mut rng = StdRng::seed_from_u64(9);
        let segs: Vec<Segment> = (0..25).map(|_| random_segment(&mut rng, 1)).collect();
        let sums = build_summary_segments(&segs);
        assert_eq!(sums.len(), 2);
        assert!(sums.iter().all(|s| s.kind == SegmentKind::Summary));
        assert!(build_summary_segments(&segs[..9]).is_empty());
    }

    #[test]
    fn summary_of_identical_block_is_that_segment() {
        let mut rng = StdRng::seed_from_u64(10);
        let seg = random_segment(&mut rng, 1);
        let block = vec![seg.clone(); 10];
        let sums = build_summary_segments(&block);
        assert_eq!(sums.len(), 1);
        for t in 0..SEGMENT_LEN {
            assert!((sums[0].samples[0][t] - seg.samples[0][t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn summary_stays_within_block_envelope() {
        let mut rng = StdRng::seed_from_u64(11);
        let segs: Vec<Segment> = (0..10).map(|_| random_segment(&mut rng, 2)).collect();
        let sums = build_summary_segments(&segs);
        for l in 0..2 {
            for t in 0..SEGMENT_LEN {
                let lo = segs.iter().map(|s| s.samples[l][t]).fold(f64::INFINITY, f64::min);
                let hi = segs
                    .iter()
                    .map(|s| s.samples[l][t])
                    .fold(f64::NEG_INFINITY, f64::max);
                let v = sums[0].samples[l][t];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn detection_survives_jitter_and_noise() {
        let mut params = SyntheticSubjectParams::nominal();
        params.heart_rate_bpm = 85.0;
        params.rr_jitter_frac = 0.04;
        params.noise_std_mv = 0.02;
        let (rec, truth) = synthesize_ecg(&params, 1, 60.0, TARGET_RATE, 21).unwrap();
        let peaks = detect_r_peaks(&rec).unwrap();
        let matched = truth
            .iter()
            .filter(|&&t| peaks.iter().any(|&p| (p as i64 - t as i64).abs() <= 10))
            .count();
        assert!(
            matched * 100 >= truth.len() * 99,
            "matched {matched} of {}",
            truth.len()
        );
    }
}
