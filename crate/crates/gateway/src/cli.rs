//! Command-line entry points. Every command writes under `--run-dir` and
//! records a summary in its `run.json`.
//!
//! Exit status: 0 on success, 2 when a batch finished with failed tasks,
//! 1 on configuration or input errors.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pamflow_core::archive::{index_archive, NamingConfig};
use pamflow_core::postclass::scores::{read_scores, read_truth, write_scores, write_truth};
use pamflow_core::postclass::{self, HkannParams, LabelMapping, SampleStrategy};
use pamflow_core::report::{self, ExportFormat, ScoreField};
use pamflow_core::sched::{self, BatchConfig, DetectorRunner};
use pamflow_core::synth::{self, EventSetFixture, PulseTrainFixture, UpsweepFixture};
use pamflow_core::Timestamp;
use serde_json::json;

use crate::rundir::{write_json, RunDir, Source};

#[derive(Debug, Parser)]
#[command(name = "pamflow", version, about = "Block-parallel passive acoustic detection and expert-assisted rescoring")]
pub struct Cli {
    /// Directory receiving every output of the command.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index a sound archive and write `index.json`.
    Index { root: PathBuf },
    /// Plan and execute a batch, writing the merged `events.csv`.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to the number of available cores.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        workers: Option<u32>,
        /// Seed for classifiers trained at startup.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        retry_limit: u32,
    },
    /// Pick events for expert review and write `sample.csv`.
    Sample {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "uniform")]
        strategy: SampleStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the post-classifier and the baselines from expert scores.
    TrainHkann {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hyperparameters as JSON, e.g. '{"hidden":8,"epochs":2000}'.
        #[arg(long)]
        hyper: Option<String>,
    },
    /// Attach `hk_score` to every event in `events.csv`.
    Rescore {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// ROC curves of the detector score, post-classifier and baselines against truth labels.
    Roc {
        #[arg(long)]
        truth: PathBuf,
    },
    /// Day-by-hour counts of events at or above a threshold.
    Diel {
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value = "score")]
        field: ScoreField,
    },
    /// Serve the review API over a run directory.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a seeded two-channel audio archive with injected calls and pulse trains, plus a batch file.
    SynthArchive {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60.0)]
        minutes: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write a seeded scored pulse-train event set with truth labels and simulated expert scores.
    SynthEvents {
        #[arg(long, default_value_t = 4000)]
        n: usize,
        /// Events given a simulated expert score.
        #[arg(long, default_value_t = 300)]
        scored: usize,
        #[arg(long, default_value_t = 0.1)]
        label_noise: f64,
        #[arg(long, default_value_t = 3)]
        seed: u64,
    },
}

/// Run the parsed command and return the process exit status.
pub fn execute(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    if let Command::Serve { port, data } = &cli.command {
        let dir = data.clone().unwrap_or(cli.run_dir.clone());
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        rt.block_on(crate::api::serve(&dir, *port))?;
        return Ok(0);
    }
    let dir = RunDir::open(&cli.run_dir)?;
    match cli.command {
        Command::Index { root } => cmd_index(&dir, &root),
        Command::Run { config, workers, seed, retry_limit } => cmd_run(&dir, &config, workers, seed, retry_limit),
        Command::Sample { n, strategy, seed } => cmd_sample(&dir, n, strategy, seed),
        Command::TrainHkann { scores, seed, hyper } => cmd_train(&dir, scores.as_deref(), seed, hyper.as_deref()),
        Command::Rescore { model } => cmd_rescore(&dir, model.as_deref()),
        Command::Roc { truth } => cmd_roc(&dir, &truth),
        Command::Diel { threshold, field } => cmd_diel(&dir, threshold, field),
        Command::SynthArchive { out, minutes, seed } => cmd_synth_archive(&dir, &out, minutes, seed),
        Command::SynthEvents { n, scored, label_noise, seed } => cmd_synth_events(&dir, n, scored, label_noise, seed),
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

fn cmd_index(dir: &RunDir, root: &Path) -> Result<i32> {
    let index = index_archive(root, &NamingConfig::default())?;
    write_json(&dir.path("index.json"), &index)?;
    println!(
        "indexed {} files, {:.3} channel-hours, {} rejected, {} conflicts",
        index.files.len(),
        index.total_channel_hours,
        index.rejects.len(),
        index.conflicts.len()
    );
    dir.record(
        "index",
        json!({ "root": root, "files": index.files.len(), "channel_hours": index.total_channel_hours, "rejects": index.rejects.len() }),
    )?;
    Ok(0)
}

fn cmd_run(dir: &RunDir, config: &Path, workers: Option<u32>, seed: u64, retry_limit: u32) -> Result<i32> {
    let batch = BatchConfig::load(config)?;
    let indexes = sched::load_indexes(&batch)?;
    let tasks = sched::plan(&batch, &indexes)?;
    let mut sources = Vec::new();
    for (name, idx) in &indexes {
        let rel = PathBuf::from(format!("index/{name}.json"));
        let mut idx = idx.clone();
        idx.root = std::fs::canonicalize(&idx.root).unwrap_or(idx.root.clone());
        write_json(&dir.path(&rel), &idx)?;
        sources.push(Source { project: name.clone(), archive_id: idx.archive_id.clone(), index: rel });
    }
    write_json(&dir.path("sources.json"), &sources)?;
    let workers = workers.map_or_else(sched::default_workers, |w| w as usize);
    let runner = DetectorRunner::new(&batch, indexes, seed)?;
    log::info!("running {} tasks on {workers} workers", tasks.len());
    let outcome = sched::run(tasks, workers, retry_limit, &runner);
    dir.save_events(&outcome.events)?;
    let s = &outcome.stats;
    println!(
        "{} events from {}/{} tasks, {:.3} channel-hours in {:.2} s ({:.1} channel-hours/hour), {} failed",
        outcome.events.len(),
        s.tasks_completed,
        s.tasks_planned,
        s.channel_hours_processed,
        s.wall_seconds,
        s.throughput,
        s.failed.len()
    );
    for f in &s.failed {
        eprintln!("failed task {} ({} ch {} {}): {}", f.task.task_id, f.task.project, f.task.channel, f.task.core, f.error);
    }
    dir.record(
        "run",
        json!({ "config": config, "seed": seed, "events": outcome.events.len(), "stats": s, "exit_code": outcome.exit_code() }),
    )?;
    Ok(outcome.exit_code())
}

fn cmd_sample(dir: &RunDir, n: usize, strategy: SampleStrategy, seed: u64) -> Result<i32> {
    let events = dir.load_events()?;
    let ids = postclass::sample_for_review(&events, n, strategy, seed)?;
    let mut text = String::from("event_id\n");
    for id in &ids {
        text.push_str(&format!("{id}\n"));
    }
    std::fs::write(dir.path("sample.csv"), text)?;
    println!("sampled {} of {} events", ids.len(), events.len());
    dir.record("sample", json!({ "n": n, "strategy": strategy, "seed": seed }))?;
    Ok(0)
}

fn cmd_train(dir: &RunDir, scores: Option<&Path>, seed: u64, hyper: Option<&str>) -> Result<i32> {
    let hyper: HkannParams = match hyper {
        Some(h) => serde_json::from_str(h).context("parsing --hyper")?,
        None => HkannParams::default(),
    };
    let events = dir.load_events()?;
    let scores_path = scores.map_or_else(|| dir.scores_csv(), Path::to_path_buf);
    let scores = read_scores(&scores_path)?;
    let set = postclass::build_labeled_set(&events, &scores, &LabelMapping::default())?;
    let (pos, neg) = set.class_counts();
    let model = postclass::train_hkann(&set, &hyper, seed)?;
    let baselines = postclass::train_all_baselines(&set, seed)?;
    write_json(&dir.hkann_model(), &model)?;
    write_json(&dir.baselines(), &baselines)?;
    println!(
        "trained on {} rows ({pos} positive, {neg} negative, {} excluded), final loss {:.4}",
        set.rows.len(),
        set.excluded.len(),
        model.training.final_loss.unwrap_or(f64::NAN)
    );
    dir.record(
        "train-hkann",
        json!({ "scores": scores_path, "seed": seed, "hyper": hyper, "rows": set.rows.len(), "positives": pos, "negatives": neg }),
    )?;
    Ok(0)
}

fn cmd_rescore(dir: &RunDir, model: Option<&Path>) -> Result<i32> {
    let Some(model) = dir.load_model(model)? else {
        bail!("no model; run train-hkann first or pass --model");
    };
    let mut events = dir.load_events()?;
    postclass::rescore_all(&mut events, &model)?;
    dir.save_events(&events)?;
    println!("rescored {} events", events.len());
    dir.record("rescore", json!({ "events": events.len() }))?;
    Ok(0)
}

fn cmd_roc(dir: &RunDir, truth: &Path) -> Result<i32> {
    let Some(model) = dir.load_model(None)? else {
        bail!("no model; run train-hkann first");
    };
    let baselines = dir.load_baselines()?;
    let events = dir.load_events()?;
    let truth: HashMap<_, _> = read_truth(truth)?;
    let cmp = postclass::compare(&events, &truth, &model, &baselines)?;
    write_json(&dir.path("roc.json"), &cmp)?;
    let mut aucs = BTreeMap::new();
    for (name, curve) in &cmp.curves {
        std::fs::write(dir.path(format!("roc_{name}.csv")), curve.to_csv())?;
        println!("{name:<12} auc {:.4}  tpr@fpr=0.06 {:.4}", curve.auc, curve.tpr_at_fpr(0.06));
        aucs.insert(name.clone(), curve.auc);
    }
    dir.record("roc", json!({ "truth": truth.len(), "auc": aucs }))?;
    Ok(0)
}

fn cmd_diel(dir: &RunDir, threshold: f64, field: ScoreField) -> Result<i32> {
    let events = dir.load_events()?;
    let grid = report::diel(&events, field, threshold)?;
    write_json(&dir.path("diel.json"), &grid)?;
    std::fs::write(dir.path("diel.csv"), grid.to_csv())?;
    println!("{} of {} events over {} days at {field} >= {threshold}", grid.total(), events.len(), grid.dates.len());
    dir.record("diel", json!({ "field": field, "threshold": threshold, "total": grid.total() }))?;
    Ok(0)
}

fn cmd_synth_archive(dir: &RunDir, out: &Path, minutes: f64, seed: u64) -> Result<i32> {
    let duration_s = minutes * 60.0;
    let start = Timestamp::from_ymd_hms(2013, 3, 1, 0, 0, 0);
    let calls = UpsweepFixture { duration_s, n_calls: (minutes * 50.0 / 60.0).round() as usize, seed, ..Default::default() }.build();
    let trains = PulseTrainFixture { duration_s, n_trains: (minutes / 2.0).floor() as usize, seed: seed + 1, ..Default::default() }.build();
    let archive = out.join("archive");
    synth::write_archive(&archive, "synth", start, calls.sample_rate_hz, &[calls.to_f32(), trains.signal.to_f32()], 600)
        .map_err(synth::io_error)?;
    let mut inj = String::from("channel,kind,t0,t1,f_lo,f_hi\n");
    for i in &calls.injections {
        inj.push_str(&format!("0,upsweep,{},{},{},{}\n", start.add_seconds(i.t0_s).to_iso_millis(), start.add_seconds(i.t1_s).to_iso_millis(), i.f_lo, i.f_hi));
    }
    for i in &trains.trains {
        inj.push_str(&format!("1,pulse_train,{},{},{},{}\n", start.add_seconds(i.t0_s).to_iso_millis(), start.add_seconds(i.t1_s).to_iso_millis(), i.f_lo, i.f_hi));
    }
    std::fs::write(out.join("injections.csv"), inj)?;
    let batch = "[project.synth]\nroot = \"archive\"\nsample_rate_hz = 2000\nblock_s = 600\noverlap_s = 10\n\n\
                 [project.synth.fmdetect]\nalgorithms = [\"cra\"]\n\n[project.synth.ptdetect]\n";
    std::fs::write(out.join("batch.toml"), batch)?;
    println!(
        "wrote {:.0} min archive with {} calls and {} pulse trains to {}",
        minutes,
        calls.injections.len(),
        trains.trains.len(),
        out.display()
    );
    dir.record("synth-archive", json!({ "out": out, "minutes": minutes, "seed": seed }))?;
    Ok(0)
}

fn cmd_synth_events(dir: &RunDir, n: usize, scored: usize, label_noise: f64, seed: u64) -> Result<i32> {
    let fx = EventSetFixture { n_events: n, seed, ..Default::default() }.build();
    let mut events = fx.events;
    let truth: Vec<_> = events.iter().map(|e| e.event_id).zip(fx.truth).collect();
    let truth_map: HashMap<_, _> = truth.iter().copied().collect();
    pamflow_core::event::sort_events(&mut events);
    report::export_events(&dir.events_csv(), &events, ExportFormat::Csv)?;
    write_truth(&dir.path("truth.csv"), &truth)?;
    if scored > 0 {
        let ids = postclass::sample_for_review(&events, scored, SampleStrategy::Uniform, seed)?;
        let scores = synth::simulate_scores(&truth_map, &ids, label_noise, "synthetic", Timestamp::now(), seed + 1);
        write_scores(&dir.scores_csv(), &scores)?;
    }
    println!("wrote {} events ({} scored) to {}", events.len(), scored, dir.root().display());
    dir.record("synth-events", json!({ "n": n, "scored": scored, "label_noise": label_noise, "seed": seed }))?;
    Ok(0)
}
