//! Cross-module integration: synthetic records through pre-processing,
//! segmentation, feature extraction, and pair generation.

use ecgx_core::dataset::features::cache_features;
use ecgx_core::dataset::synth::{
    synthesize_dataset, synthesize_ecg, SyntheticDatasetSpec, SyntheticSubjectParams,
};
use ecgx_core::dataset::{Dataset, RecordingMode};
use ecgx_core::models::{Autoencoder, Siamese};
use ecgx_core::protocol::{generate_verification_pairs, pair_manifest, Scenario};
use ecgx_core::segmentation::{detect_r_peaks, extract_single_segments, SEGMENT_LEN};
use ecgx_core::signal::{apply_filters, design_filters, resample_record, FilterSpec, TARGET_RATE};

fn preprocessed_dataset(subjects: usize, duration_s: f64, fs: u32, seed: u64) -> Dataset {
    let spec = SyntheticDatasetSpec {
        subjects,
        sessions_per_subject: 2,
        leads: 1,
        duration_s,
        sampling_rate: fs,
        seed,
    };
    let filters = design_filters(&FilterSpec::default(), TARGET_RATE).unwrap();
    let records = synthesize_dataset(&spec)
        .unwrap()
        .into_iter()
        .map(|r| {
            let resampled = resample_record(&r.record).unwrap();
            apply_filters(&resampled, &filters).unwrap()
        })
        .collect();
    Dataset {
        name: "pipeline".into(),
        sampling_rate: TARGET_RATE,
        lead_labels: vec!["I".into()],
        recording_mode: RecordingMode::OnThePerson,
        records,
    }
}

#[test]
fn resampled_kilohertz_records_still_detect_truth_peaks() {
    let mut params = SyntheticSubjectParams::nominal();
    params.noise_std_mv = 0.015;
    let (record, truth) = synthesize_ecg(&params, 1, 30.0, 1000, 11).unwrap();
    let resampled = resample_record(&record).unwrap();
    assert_eq!(resampled.sampling_rate, 500);
    let filters = design_filters(&FilterSpec::default(), TARGET_RATE).unwrap();
    let filtered = apply_filters(&resampled, &filters).unwrap();
    let peaks = detect_r_peaks(&filtered).unwrap();
    // ground truth indices live on the 1 kHz axis; halve them
    let matched = truth
        .iter()
        .filter(|&&t| {
            let at_500 = (t / 2) as i64;
            peaks.iter().any(|&p| (p as i64 - at_500).abs() <= 10)
        })
        .count();
    assert!(
        matched * 100 >= truth.len() * 99,
        "matched {matched} of {}",
        truth.len()
    );
}

#[test]
fn filtering_preserves_segment_shape_for_extraction() {
    let ds = preprocessed_dataset(2, 20.0, 500, 3);
    for record in &ds.records {
        let peaks = detect_r_peaks(record).unwrap();
        let singles = extract_single_segments(record, &peaks);
        assert!(!singles.is_empty());
        for s in &singles {
            assert_eq!(s.samples[0].len(), SEGMENT_LEN);
        }
    }
}

#[test]
fn untrained_models_score_valid_symmetric_probabilities() {
    let ds = preprocessed_dataset(8, 25.0, 500, 4);
    let ae = Autoencoder::new(9);
    let (features, warnings) = cache_features(&ds, &ae).unwrap();
    assert!(warnings.is_empty(), "{warnings:?}");
    assert_eq!(features.n_subjects(), 8);

    let pairs = generate_verification_pairs(&features, Scenario::MultiSessionEval, 5).unwrap();
    assert_eq!(pairs.len(), 8 * 6);
    let mut siamese = Siamese::new(1, 10).unwrap();
    for pair in &pairs {
        let s = siamese.score(&pair.enrol, &pair.probe).unwrap();
        assert!(s.is_finite() && (0.0..=1.0).contains(&s));
        let swapped = siamese.score(&pair.probe, &pair.enrol).unwrap();
        assert_eq!(s, swapped);
    }
}

#[test]
fn fixed_seed_gives_bit_identical_training_trajectory() {
    let rows: Vec<Vec<f32>> = (0..30)
        .map(|i| {
            (0..SEGMENT_LEN)
                .map(|t| ((t as f32 * 0.021) + i as f32 * 0.7).sin())
                .collect()
        })
        .collect();
    let run = || {
        let mut ae = Autoencoder::new(40);
        let mut cfg = ecgx_core::nn::TrainConfig::new(ecgx_core::nn::LossKind::Mse, 41);
        cfg.batch_size = 8;
        cfg.max_epochs = 4;
        let log = ecgx_core::models::train_autoencoder(&mut ae, &rows[..24], &rows[24..], &cfg)
            .unwrap();
        (log, ae.encoder.export_params())
    };
    let (log_a, params_a) = run();
    let (log_b, params_b) = run();
    for (ea, eb) in log_a.epochs.iter().zip(&log_b.epochs) {
        assert_eq!(ea.train_loss.to_bits(), eb.train_loss.to_bits());
        assert_eq!(ea.val_loss.to_bits(), eb.val_loss.to_bits());
    }
    for ((na, ta), (nb, tb)) in params_a.iter().zip(&params_b) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data(), "parameter {na} diverged");
    }
}

#[test]
fn pair_manifests_are_stable_across_generation_runs() {
    let ds = preprocessed_dataset(10, 25.0, 500, 6);
    let ae = Autoencoder::new(11);
    let (features, _) = cache_features(&ds, &ae).unwrap();
    let a = generate_verification_pairs(&features, Scenario::Training, 21).unwrap();
    let b = generate_verification_pairs(&features, Scenario::Training, 21).unwrap();
    assert_eq!(pair_manifest(&a), pair_manifest(&b));
    assert!(!pair_manifest(&a).is_empty());
}
