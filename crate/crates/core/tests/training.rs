use envtrack::dataio::{DataConfig, SubjectData};
use envtrack::model::{is_envelope_path, NetworkConfig, NetworkParams};
use envtrack::sigproc::Split;
use envtrack::synthgen::{generate, SnrDb, SynthConfig, SynthMode};
use envtrack::training::{
    evaluate_views, pooled_views, run_scenario, train, train_subject_independent,
    transfer_finetune, Scenario, TrainConfig,
};

fn small_net() -> NetworkConfig {
    NetworkConfig {
        window_samples: 128,
        eeg_channels: 8,
        conv_filters: 4,
        dense1_units: 8,
        embed_dim: 8,
        lstm_hidden: 8,
        ..Default::default()
    }
}

fn data_cfg() -> DataConfig {
    DataConfig {
        window_s: 2.0,
        overlap: 0.5,
        mismatch_gap_s: 1.0,
        seed: 3,
    }
}

fn subjects(n: usize, minutes: f64, snr: SnrDb, holdout: usize) -> Vec<SubjectData> {
    let cfg = SynthConfig {
        n_subjects: n,
        minutes,
        snr_db: snr,
        mode: SynthMode::Linear,
        seed: 21,
        channels: 8,
        holdout,
        ..Default::default()
    };
    generate(&cfg)
        .unwrap()
        .into_iter()
        .map(|(r, h)| SubjectData::new(r.subject_id().to_string(), h, vec![r], &data_cfg()).unwrap())
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        batch_size: 32,
        learning_rate: 3e-3,
        ..Default::default()
    }
}

fn bits(p: &NetworkParams) -> Vec<Vec<u64>> {
    p.tensors().map(|t| t.data().iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn training_is_deterministic() {
    let s = subjects(1, 2.0, SnrDb(0.0), 0);
    let init = NetworkParams::init(&small_net()).unwrap();
    let (a, ha) = train(&init, &s[0], &quick(2)).unwrap();
    let (b, hb) = train(&init, &s[0], &quick(2)).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn vanishing_learning_rate_returns_initial_parameters() {
    let s = subjects(1, 2.0, SnrDb(0.0), 0);
    let init = NetworkParams::init(&small_net()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-300,
        ..quick(2)
    };
    let (p, h) = train(&init, &s[0], &cfg).unwrap();
    assert_eq!(bits(&p), bits(&init));
    assert_eq!(h.best_epoch, 0);
    let (t, _) = transfer_finetune(&init, &s[0], &cfg).unwrap();
    assert_eq!(bits(&t), bits(&init));
}

#[test]
fn noiseless_training_reduces_loss_and_keeps_best_epoch() {
    let s = subjects(1, 3.0, SnrDb::NOISELESS, 0);
    let init = NetworkParams::init(&small_net()).unwrap();
    let train_views = s[0].views(Split::Train);
    let before = evaluate_views(&init, &train_views).unwrap().loss;
    let (p, h) = train(&init, &s[0], &quick(6)).unwrap();
    let after = evaluate_views(&p, &train_views).unwrap().loss;
    assert!(after < before, "{after} !< {before}");
    assert!(h.epochs.len() <= 6);
    let min_val = h
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(h.initial_val_loss, f64::min);
    assert_eq!(h.best_val_loss(), min_val);
    let val = evaluate_views(&p, &s[0].views(Split::Validation)).unwrap().loss;
    assert!((val - min_val).abs() < 1e-12);
}

#[test]
fn transfer_leaves_envelope_path_untouched() {
    let s = subjects(2, 2.0, SnrDb(0.0), 0);
    let init = NetworkParams::init(&small_net()).unwrap();
    let (si, _) = train_subject_independent(&init, &s, &quick(1)).unwrap();
    let (tl, h) = transfer_finetune(&si, &s[1], &quick(2)).unwrap();
    assert!(h.best_epoch > 0, "fine-tuning never improved; freeze check would be vacuous");
    let mut changed = 0;
    for ((name, a), b) in si.iter().zip(tl.tensors()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if is_envelope_path(name) {
            assert!(same, "{name} moved during transfer");
        } else if !same {
            changed += 1;
        }
    }
    assert!(changed > 0);
}

#[test]
fn single_subject_sd_and_si_coincide() {
    let s = subjects(1, 2.0, SnrDb(0.0), 0);
    let cfg = quick(2);
    let sd = run_scenario(Scenario::Sd, &s, &small_net(), &cfg, None).unwrap();
    let si = run_scenario(Scenario::Si, &s, &small_net(), &cfg, None).unwrap();
    assert_eq!(sd.report, si.report);
}

#[test]
fn holdout_subjects_are_reported_but_not_trained_on() {
    let s = subjects(3, 2.0, SnrDb(0.0), 1);
    assert!(s[2].holdout);
    let (train, _) = pooled_views(&s);
    assert!(train.iter().all(|v| v.recording.subject_id() != "s03"));
    let res = run_scenario(Scenario::Si, &s, &small_net(), &quick(1), None).unwrap();
    let ids: Vec<_> = res.report.subjects.iter().map(|r| r.subject_id.as_str()).collect();
    assert_eq!(ids, ["s01", "s02", "s03"]);
}

#[test]
fn invalid_runs_are_rejected() {
    let s = subjects(1, 2.0, SnrDb(0.0), 0);
    let init = NetworkParams::init(&small_net()).unwrap();
    assert!(train(&init, &s[0], &TrainConfig { max_epochs: 0, ..quick(1) }).is_err());
    let empty = SubjectData {
        segments: Default::default(),
        ..s[0].clone()
    };
    let err = train(&init, &empty, &quick(1)).unwrap_err();
    assert!(err.to_string().contains("empty"));
}

#[test]
fn noiseless_subject_reaches_high_validation_accuracy() {
    let s = subjects(1, 6.0, SnrDb::NOISELESS, 0);
    let init = NetworkParams::init(&small_net()).unwrap();
    let (_, h) = train(&init, &s[0], &quick(30)).unwrap();
    let best = &h.epochs[h.best_epoch - 1];
    assert!(best.val_acc >= 0.95, "{h:?}");
}
