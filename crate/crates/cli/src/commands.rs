use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use protoadapt_core::adaptation::{evaluate_adapted, steps_sweep};
use protoadapt_core::episodes::{load_dataset, split_with_manifest, EpisodeSampler, ImageLoader, Split, Splits};
use protoadapt_core::protonet::{evaluate_baseline, MetaTrainer, TrainRecord};
use protoadapt_core::seed::{derive_seed, EVAL_STREAM, INIT_STREAM, TRAIN_STREAM};
use protoadapt_core::synthetic::{write_glyph_dataset, GlyphSpec};
use protoadapt_core::{encoder, gradcheck, Checkpoint, Error};

use crate::config::ExperimentConfig;
use crate::report::{self, EvalReport, EvalRow};
use crate::{AdaptArgs, Cli, CliError, CliResult, EvalMode, EvalSplit, GenerateArgs, TaskArgs};

/// Config file (or dataset preset) with command-line overrides applied.
pub fn resolve(cli: &Cli, task: &TaskArgs, adapt: Option<&AdaptArgs>) -> CliResult<ExperimentConfig> {
    let mut cfg = match (&cli.config, task.dataset) {
        (Some(path), None) => ExperimentConfig::load(path)?,
        (Some(path), Some(d)) => {
            let cfg = ExperimentConfig::load(path)?;
            if cfg.experiment.dataset != d {
                return Err(CliError::Usage(format!(
                    "--dataset {d:?} conflicts with {} which uses {:?}",
                    path.display(),
                    cfg.experiment.dataset
                )));
            }
            cfg
        }
        (None, d) => ExperimentConfig::preset(d.unwrap_or(crate::Dataset::Omniglot)),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.master_seed = seed;
    }
    if let Some(w) = cli.workers {
        cfg.experiment.workers = w;
    }
    if let Some(root) = &task.data_root {
        cfg.experiment.data_root = root.clone();
    }
    if let Some(way) = task.way {
        cfg.episodes.way = way;
    }
    if let Some(shot) = task.shot {
        cfg.episodes.shot = shot;
    }
    if let Some(q) = task.query {
        cfg.episodes.query = q;
    }
    if let Some(path) = &task.checkpoint {
        cfg.paths.checkpoint = path.clone();
    }
    if let Some(a) = adapt {
        if let Some(p) = &a.preset {
            cfg.adaptation.preset = p.clone();
        }
        if a.steps.is_some() {
            cfg.adaptation.steps = a.steps;
        }
        if a.lr.is_some() {
            cfg.adaptation.fine_tune_lr = a.lr;
        }
        if a.optimizer.is_some() {
            cfg.adaptation.optimizer = a.optimizer;
        }
    }
    match (&cli.command, task.episodes) {
        (crate::Command::Train(_), Some(n)) => cfg.train.episodes = n,
        (_, Some(n)) => cfg.episodes.eval_episodes = n,
        _ => {}
    }
    if let Some(out) = &cli.out {
        match cli.command {
            crate::Command::Train(_) => cfg.paths.checkpoint = out.clone(),
            crate::Command::Eval(_) | crate::Command::Sweep(_) => cfg.paths.report = out.clone(),
            _ => {}
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads the dataset and its class split, writing the manifest on first use.
pub fn load_splits(cfg: &ExperimentConfig) -> CliResult<Splits> {
    let index = load_dataset(&cfg.experiment.data_root, cfg.experiment.dataset.layout())?;
    let manifest = &cfg.paths.manifest;
    if let Some(dir) = manifest.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    Ok(split_with_manifest(
        &index,
        cfg.split_fractions(),
        cfg.experiment.master_seed,
        manifest,
    )?)
}

pub fn sampler(cfg: &ExperimentConfig, splits: &Splits, split: Split, stream: u64) -> CliResult<EpisodeSampler> {
    let classes = splits.get(split).clone();
    let shape = cfg.task_shape();
    classes.validate_for(&shape).map_err(|e| match e {
        Error::Sampling(msg) => Error::Sampling(format!("{} split: {msg}", split.as_str())),
        other => other,
    })?;
    let d = cfg.experiment.dataset;
    Ok(EpisodeSampler {
        split: Arc::new(classes),
        loader: Arc::new(ImageLoader::new(d.target(), d.invert())),
        shape,
        master_seed: cfg.experiment.master_seed,
        stream,
    })
}

fn optimizer_mismatch(cfg: &ExperimentConfig, ck: &Checkpoint) -> Option<String> {
    let kind: protoadapt_tensor::OptimizerKind = cfg.train.optimizer.into();
    (ck.optimizer.kind() != kind || ck.optimizer.lr() != cfg.train.lr).then(|| {
        format!(
            "checkpoint optimizer {:?} lr {} differs from config {:?} lr {}",
            ck.optimizer.kind(),
            ck.optimizer.lr(),
            kind,
            cfg.train.lr
        )
    })
}

fn append_history(path: &Path, records: &[TrainRecord], fresh: bool) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let io = |e: csv::Error| CliError::Output(std::io::Error::other(e));
    if fresh {
        w.write_record(["episode", "loss", "accuracy"]).map_err(io)?;
    }
    for r in records {
        w.write_record([r.episode.to_string(), r.loss.to_string(), r.accuracy.to_string()])
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Meta-trains up to `cfg.train.episodes` total episodes. With `resume`, an
/// existing checkpoint is continued and the history file appended to.
pub fn train(cfg: &ExperimentConfig, resume: bool, out: &mut dyn Write) -> CliResult<()> {
    let enc = cfg.encoder_config();
    let seed = cfg.experiment.master_seed;
    let ck_path = &cfg.paths.checkpoint;
    let mut trainer = if resume && ck_path.exists() {
        let ck = Checkpoint::load(ck_path)?;
        ck.check_config(&enc)?;
        if ck.seed != seed {
            return Err(Error::Config(format!(
                "checkpoint was trained with master seed {}, config has {seed}",
                ck.seed
            ))
            .into());
        }
        if let Some(msg) = optimizer_mismatch(cfg, &ck) {
            return Err(Error::Config(msg).into());
        }
        MetaTrainer {
            config: enc,
            params: ck.params,
            optimizer: ck.optimizer,
            episodes_done: ck.episodes,
        }
    } else {
        let params = encoder::build_encoder(&enc, derive_seed(seed, INIT_STREAM, 0))?;
        MetaTrainer::new(enc, params, cfg.train.optimizer.into(), cfg.train.lr)?
    };
    let fresh = trainer.episodes_done == 0;
    let remaining = cfg.train.episodes.saturating_sub(trainer.episodes_done);
    let splits = load_splits(cfg)?;
    let source = sampler(cfg, &splits, Split::Train, TRAIN_STREAM)?;
    writeln!(
        out,
        "training {}-way {}-shot on {} classes: episodes {}..{}",
        cfg.episodes.way,
        cfg.episodes.shot,
        source.split.len(),
        trainer.episodes_done,
        trainer.episodes_done + remaining
    )?;
    let started = Instant::now();
    let mut log_failed = None;
    let history = trainer.run(&source, remaining, cfg.train.log_every, |r| {
        if let Err(e) = writeln!(
            out,
            "episode {:>6}  loss {:.4}  acc {:.3}  {:.0}s",
            r.episode + 1,
            r.loss,
            r.accuracy,
            started.elapsed().as_secs_f64()
        ) {
            log_failed.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_failed {
        return Err(e.into());
    }
    let ck = Checkpoint::new(enc, trainer.params, seed, trainer.episodes_done, trainer.optimizer);
    ck.save(ck_path)?;
    append_history(&cfg.history_path(), &history, fresh)?;
    writeln!(out, "checkpoint {} ({} episodes)", ck_path.display(), ck.episodes)?;
    Ok(())
}

fn load_checked(cfg: &ExperimentConfig) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(&cfg.paths.checkpoint)?;
    ck.check_config(&cfg.encoder_config())?;
    Ok(ck)
}

fn eval_split(split: EvalSplit) -> Split {
    match split {
        EvalSplit::Val => Split::Val,
        EvalSplit::Test => Split::Test,
    }
}

/// Evaluation rows for `mode` on episodes `0..eval_episodes` of the split.
pub fn eval_report(cfg: &ExperimentConfig, mode: EvalMode, split: EvalSplit) -> CliResult<EvalReport> {
    let ck = load_checked(cfg)?;
    let splits = load_splits(cfg)?;
    let source = sampler(cfg, &splits, eval_split(split), EVAL_STREAM)?;
    let (enc, count, workers) = (cfg.encoder_config(), cfg.episodes.eval_episodes, cfg.experiment.workers);
    let rows: Vec<EvalRow> = match mode {
        EvalMode::Baseline => evaluate_baseline(&enc, &ck.params, &source, count, workers)?
            .accuracies
            .iter()
            .enumerate()
            .map(|(i, &a)| EvalRow::baseline(i, source.seed_for(i), a))
            .collect(),
        EvalMode::Adapted | EvalMode::Paired => {
            let adapt = cfg.adaptation_config()?;
            let results = evaluate_adapted(&enc, &ck.params, &source, count, &adapt, workers)?;
            results
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let row = EvalRow::paired(i, r);
                    if mode == EvalMode::Adapted {
                        row.without_baseline()
                    } else {
                        row
                    }
                })
                .collect()
        }
    };
    Ok(EvalReport::from_rows(rows, cfg.render()))
}

pub fn eval(cfg: &ExperimentConfig, mode: EvalMode, split: EvalSplit, out: &mut dyn Write) -> CliResult<()> {
    let report = eval_report(cfg, mode, split)?;
    report.write(&cfg.paths.report)?;
    for a in &report.arms {
        let s = a.percent;
        writeln!(
            out,
            "{:<9} {:>7.3}%  std {:.3}  ci95 {:.3}  n={}",
            format!("{:?}", a.arm).to_lowercase(),
            s.mean,
            s.std,
            s.ci95,
            s.count
        )?;
    }
    if let Some(f) = report.loss_decreased_fraction {
        writeln!(out, "support loss decreased on {:.1}% of episodes", 100.0 * f)?;
    }
    writeln!(out, "report {}", cfg.paths.report.display())?;
    Ok(())
}

/// Writes the sweep CSV to `cfg.paths.report` and prints the table.
pub fn sweep(cfg: &ExperimentConfig, split: EvalSplit, out: &mut dyn Write) -> CliResult<()> {
    let ck = load_checked(cfg)?;
    let splits = load_splits(cfg)?;
    let source = sampler(cfg, &splits, eval_split(split), EVAL_STREAM)?;
    let rows = steps_sweep(
        &cfg.encoder_config(),
        &ck.params,
        &source,
        cfg.episodes.eval_episodes,
        &cfg.adaptation_config()?,
        &cfg.adaptation.step_grid,
        cfg.experiment.workers,
    )?;
    report::write_text(&cfg.paths.report, &report::sweep_csv(&rows, &cfg.render())?)?;
    report::sweep_table(&rows, out)?;
    writeln!(out, "report {}", cfg.paths.report.display())?;
    Ok(())
}

/// Runs every finite-difference case and prints the worst error per case.
pub fn gradcheck(seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let started = Instant::now();
    let reports = gradcheck::run_all(seed)?;
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed() { "ok  " } else { "FAIL" };
        failed += usize::from(!r.passed());
        writeln!(
            out,
            "{verdict} {:<34} max rel error {:.3e} over {} entries",
            r.name, r.max_rel_error, r.checked
        )?;
    }
    writeln!(
        out,
        "{} of {} cases passed in {:.1}s",
        reports.len() - failed,
        reports.len(),
        started.elapsed().as_secs_f64()
    )?;
    if failed > 0 {
        return Err(CliError::GradcheckFailed {
            failed,
            total: reports.len(),
        });
    }
    Ok(())
}

pub fn generate(root: &Path, args: &GenerateArgs, seed: u64, out: &mut dyn Write) -> CliResult<()> {
    let spec = GlyphSpec {
        alphabets: args.alphabets,
        characters_per_alphabet: args.characters,
        drawers: args.drawers,
        ..GlyphSpec::default()
    };
    write_glyph_dataset(root, &spec, seed)?;
    writeln!(
        out,
        "wrote {} classes x {} images to {}",
        spec.alphabets * spec.characters_per_alphabet,
        spec.drawers,
        root.display()
    )?;
    Ok(())
}
