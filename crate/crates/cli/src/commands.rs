use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use envtrack::baseline::LinearBaseline;
use envtrack::dataio::{
    load_subjects, read_recording, read_weights, write_dataset_dir, write_weights, Manifest,
    SubjectData,
};
use envtrack::model::NetworkParams;
use envtrack::sigproc::{preprocess, read_wav_mono, Split};
use envtrack::stats::{binomial_above_chance, compare_reports, EvalReport, SubjectAccuracy};
use envtrack::synthgen::generate;
use envtrack::training::{
    evaluate_subject, train as train_model, train_subject_independent, transfer_finetune, Scenario, TrainHistory,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{sidecar, ExperimentConfig, ModelCard};
use crate::{BaselineArgs, CompareArgs, EvalArgs, PrepArgs, SynthGenArgs, TrainArgs};

pub fn synth_gen(a: SynthGenArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    let s = &mut cfg.synth;
    if let Some(v) = a.subjects {
        s.n_subjects = v;
    }
    if let Some(v) = a.minutes {
        s.minutes = v;
    }
    if let Some(v) = a.mode {
        s.mode = v;
    }
    if let Some(v) = a.snr_db {
        s.snr_db = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.holdout {
        s.holdout = v;
    }
    if let Some(v) = a.channels {
        s.channels = v;
    }
    let recordings = generate(&cfg.synth)?;
    write_dataset_dir(&a.out, &recordings)?;
    cfg.write(&a.out.join("synth.config.json"))?;
    eprintln!(
        "wrote {} recordings of {} samples to {}",
        recordings.len(),
        cfg.synth.n_samples(),
        a.out.display()
    );
    Ok(())
}

pub fn prep_run(a: PrepArgs) -> Result<()> {
    let manifest = Manifest::read(&a.data)?;
    let mut out = Vec::with_capacity(manifest.recordings.len());
    for entry in &manifest.recordings {
        let raw = read_recording(&a.data.join(&entry.path))?;
        let stimulus = match &a.stimuli {
            Some(dir) => Some(read_wav_mono(&dir.join(format!("{}.wav", entry.recording_id)))?),
            None => None,
        };
        let rec = preprocess(&raw, stimulus.as_ref())
            .with_context(|| format!("preprocessing {}", entry.path))?;
        out.push((rec, entry.holdout));
    }
    write_dataset_dir(&a.out, &out)?;
    eprintln!("preprocessed {} recordings into {}", out.len(), a.out.display());
    Ok(())
}

fn subjects_for(cfg: &ExperimentConfig, data: &Path) -> Result<Vec<SubjectData>> {
    let subjects = load_subjects(data, &cfg.data)?;
    ensure!(!subjects.is_empty(), "{} holds no recordings", data.display());
    for s in &subjects {
        let rec = &s.recordings[0];
        cfg.check_window(rec.sample_rate_hz())?;
        ensure!(
            rec.n_channels() == cfg.network.eeg_channels,
            "subject {} has {} EEG channels but the network expects {}",
            s.subject_id,
            rec.n_channels(),
            cfg.network.eeg_channels
        );
    }
    Ok(subjects)
}

fn pick_subject<'a>(subjects: &'a [SubjectData], id: Option<&str>) -> Result<&'a SubjectData> {
    match id {
        Some(id) => subjects
            .iter()
            .find(|s| s.subject_id == id)
            .with_context(|| format!("subject '{id}' not in dataset")),
        None if subjects.len() == 1 => Ok(&subjects[0]),
        None => bail!(
            "dataset holds {} subjects; choose one with --subject",
            subjects.len()
        ),
    }
}

fn load_model(path: &Path, cfg: &ExperimentConfig) -> Result<NetworkParams> {
    let named = read_weights(path)?;
    NetworkParams::from_named(&cfg.network, named)
        .with_context(|| format!("{} does not fit the network configuration", path.display()))
}

fn write_history(history: &TrainHistory, out: &Path) -> Result<()> {
    let path = sidecar(out, "history.csv");
    fs::write(&path, history.to_csv()).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(a.config.as_deref())?;
    cfg.training.scenario = a.scenario;
    let subjects = subjects_for(&cfg, &a.data)?;
    let (params, history, used) = match a.scenario {
        Scenario::Sd => {
            ensure!(a.init.is_none(), "--init is only used by the tl scenario");
            let s = pick_subject(&subjects, a.subject.as_deref())?;
            let init = NetworkParams::init(&cfg.network)?;
            let (p, h) = train_model(&init, s, &cfg.training)?;
            (p, h, vec![s.subject_id.clone()])
        }
        Scenario::Si => {
            ensure!(a.subject.is_none(), "si pools every non-holdout subject; drop --subject");
            let init = NetworkParams::init(&cfg.network)?;
            let (p, h) = train_subject_independent(&init, &subjects, &cfg.training)?;
            let used = subjects.iter().filter(|s| !s.holdout).map(|s| s.subject_id.clone()).collect();
            (p, h, used)
        }
        Scenario::Tl => {
            let init_path = a.init.as_deref().context("tl requires --init")?;
            let si = load_model(init_path, &cfg)?;
            let s = pick_subject(&subjects, a.subject.as_deref())?;
            let (p, h) = transfer_finetune(&si, s, &cfg.training)?;
            (p, h, vec![s.subject_id.clone()])
        }
    };
    write_weights(&a.out, &params)?;
    write_history(&history, &a.out)?;
    ModelCard {
        scenario: a.scenario.to_string(),
        subjects: used,
        init: a.init.as_ref().map(|p| p.display().to_string()),
        config: cfg,
    }
    .write(&a.out)?;
    eprintln!(
        "trained {} epochs (best {}, validation loss {:.4}); wrote {}",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Pooled {
    n_segments: usize,
    n_correct: usize,
    accuracy: f64,
    binomial_p: f64,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    split: String,
    summary: &'a envtrack::stats::Summary,
    pooled: Pooled,
}

fn write_report(report: &EvalReport, path: &Path, split: Split) -> Result<()> {
    report.write_csv(path)?;
    let (c, n) = report.pooled();
    let summary = SummaryFile {
        split: format!("{split:?}").to_lowercase(),
        summary: &report.summary,
        pooled: Pooled {
            n_segments: n,
            n_correct: c,
            accuracy: c as f64 / n as f64,
            binomial_p: binomial_above_chance(c, n)?,
        },
    };
    let spath = sidecar(path, "summary.json");
    fs::write(&spath, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", spath.display()))?;
    eprintln!(
        "{} subjects, mean accuracy {:.4}; wrote {}",
        report.subjects.len(),
        report.summary.mean,
        path.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let card = ModelCard::read(&a.model)?;
    let mut cfg = card.config;
    let split: Split = a.split.parse()?;
    let model_window_s = cfg.data.window_s;
    if (a.window_s - model_window_s).abs() > 1e-9 {
        bail!(
            "--window-s {} does not match the model's window of {} s",
            a.window_s,
            model_window_s
        );
    }
    cfg.data.window_s = a.window_s;
    let params = load_model(&a.model, &cfg)?;
    let subjects = subjects_for(&cfg, &a.data)?;
    let rows = subjects
        .iter()
        .map(|s| evaluate_subject(&params, s, split))
        .collect::<envtrack::Result<Vec<SubjectAccuracy>>>()?;
    write_report(&EvalReport::new(rows)?, &a.report, split)
}

pub fn baseline_linear(a: BaselineArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(a.config.as_deref())?;
    let split: Split = a.split.parse()?;
    let subjects = load_subjects(&a.data, &cfg.data)?;
    ensure!(!subjects.is_empty(), "{} holds no recordings", a.data.display());
    let rows = subjects
        .par_iter()
        .map(|s| {
            let model = LinearBaseline::fit(s, &cfg.baseline)?;
            model.evaluate(s, split)
        })
        .collect::<envtrack::Result<Vec<_>>>()?;
    write_report(&EvalReport::new(rows)?, &a.report, split)
}

pub fn stats_compare(a: CompareArgs) -> Result<()> {
    let ra = EvalReport::read_csv(&a.a)?;
    let rb = EvalReport::read_csv(&a.b)?;
    let cmp = compare_reports(&ra, &rb)?;
    let text = serde_json::to_string_pretty(&cmp)? + "\n";
    match &a.out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
