//! The `tune`, `stats` and `enumerate` commands.
//!
//! Output paths default to siblings of the job file: `<stem>.results.csv`
//! for `tune` and `<stem>.stats.csv` for `stats`. Next to a stats file
//! `<name>.csv`, the per-run table goes to `<name>.runs.csv` and the
//! full-space distribution to `<name>.full.csv`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use ktune_core::space::ENUMERATION_LIMIT;
use ktune_core::tuner::run_tuning_in;
use ktune_core::{SearchSpace, SpaceError, Strategy, TuningResult};

use crate::job::Job;
use crate::report::{write_results, write_summary};
use crate::stats::ExperimentStats;
use crate::{Error, Result};

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ktune");
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_csv_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> csv::Result<()>) -> Result<()> {
    let mut file = create(path)?;
    write(&mut file)?;
    file.flush().map_err(|e| Error::io(path, e))
}

fn stdout_error(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Runs one tuning job, writes the results CSV and prints a summary.
/// Returns the results path.
pub fn cmd_tune(
    job_path: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    stdout: &mut dyn Write,
) -> Result<PathBuf> {
    let job = Job::load(job_path)?;
    let seed = seed.unwrap_or(job.seed);
    let space = job.tuning.constrained_space()?;
    let mut backend = job.backend.build();
    log::info!(
        "tuning {} with {} (seed {seed})",
        job_path.display(),
        job.strategy
    );
    let result = run_tuning_in(&job.tuning, &space, backend.as_mut(), &job.strategy, seed)?;

    let path = out
        .map(Path::to_path_buf)
        .or_else(|| job.outputs.results.clone())
        .unwrap_or_else(|| sibling(job_path, ".results.csv"));
    write_csv_file(&path, |f| write_results(&result, f))?;
    write_summary(&result, &job.tuning.space, &mut *stdout).map_err(stdout_error)?;
    writeln!(stdout, "results: {}", path.display()).map_err(stdout_error)?;
    Ok(path)
}

/// One search of a statistics experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub best_time: Option<f64>,
    pub best_config: Option<String>,
    pub evaluated: usize,
    pub failures: usize,
}

fn summarize(run: usize, seed: u64, result: &TuningResult) -> RunSummary {
    let best = result.best_row();
    RunSummary {
        run,
        seed,
        best_time: best.and_then(|r| r.time_ms),
        best_config: best.map(|r| r.canonical.clone()),
        evaluated: result.rows.len(),
        failures: result.metadata.failures,
    }
}

fn run_searches(
    job: &Job,
    space: &SearchSpace,
    runs: usize,
    base_seed: u64,
    workers: usize,
) -> Result<Vec<RunSummary>> {
    let one = |run: usize| -> Result<RunSummary> {
        let seed = base_seed.wrapping_add(run as u64);
        let mut backend = job.backend.build();
        let result = run_tuning_in(&job.tuning, space, backend.as_mut(), &job.strategy, seed)?;
        log::debug!(
            "run {run} (seed {seed}): best {:?}",
            result.best_row().and_then(|r| r.time_ms)
        );
        Ok(summarize(run, seed, &result))
    };
    if workers <= 1 {
        return (0..runs).map(one).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..runs).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers.min(runs) {
            scope.spawn(|| loop {
                let run = next.fetch_add(1, Ordering::Relaxed);
                if run >= runs {
                    break;
                }
                let outcome = one(run);
                slots.lock().expect("no worker panics while holding the lock")[run] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers have finished")
        .into_iter()
        .map(|slot| slot.expect("every run index is claimed once"))
        .collect()
}

fn write_runs(path: &Path, runs: &[RunSummary]) -> Result<()> {
    write_csv_file(path, |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record([
            "run",
            "seed",
            "best_time_ms",
            "best_config",
            "evaluated",
            "failures",
        ])?;
        for r in runs {
            w.write_record([
                r.run.to_string(),
                r.seed.to_string(),
                r.best_time.map(|t| t.to_string()).unwrap_or_default(),
                r.best_config.clone().unwrap_or_default(),
                r.evaluated.to_string(),
                r.failures.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Paths written by [`cmd_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct StatsOutputs {
    pub stats: PathBuf,
    pub runs: PathBuf,
    pub full: Option<PathBuf>,
}

/// Repeats the job's search `runs` times with seeds `base_seed..`, then
/// writes best-of-run statistics, the per-run table and, when the space can
/// be enumerated and the backend is pure, the full-space distribution.
pub fn cmd_stats(
    job_path: &Path,
    runs: usize,
    base_seed: Option<u64>,
    out: Option<&Path>,
    parallel: usize,
    stdout: &mut dyn Write,
) -> Result<StatsOutputs> {
    if runs == 0 {
        return Err(Error::Usage("--runs must be at least 1".into()));
    }
    let job = Job::load(job_path)?;
    let base_seed = base_seed.unwrap_or(job.seed);
    let space = job.tuning.constrained_space()?;
    let workers = if parallel > 1 && !job.backend.concurrency_safe() {
        log::warn!("backend is not safe for concurrent searches; running sequentially");
        1
    } else {
        parallel.max(1)
    };
    let summaries = run_searches(&job, &space, runs, base_seed, workers)?;

    let stats_path = out
        .map(Path::to_path_buf)
        .or_else(|| job.outputs.stats.clone())
        .unwrap_or_else(|| sibling(job_path, ".stats.csv"));
    let runs_path = sibling(&stats_path, ".runs.csv");
    write_runs(&runs_path, &summaries)?;

    let bests: Vec<f64> = summaries.iter().filter_map(|r| r.best_time).collect();
    if bests.len() < summaries.len() {
        log::warn!(
            "{} of {runs} runs found no working configuration",
            summaries.len() - bests.len()
        );
    }
    let stats = ExperimentStats::from_samples(&bests)
        .ok_or_else(|| Error::Usage("no run produced a successful configuration".into()))?;
    write_csv_file(&stats_path, |f| stats.write_csv(f))?;
    let w = |e| stdout_error(e);
    writeln!(
        stdout,
        "{runs} runs of {} (seeds {base_seed}..{})",
        job.strategy,
        base_seed + runs as u64 - 1
    )
    .map_err(w)?;
    writeln!(
        stdout,
        "best-of-run ms: mean={} std={} min={} max={}",
        stats.mean, stats.std_dev, stats.min, stats.max
    )
    .map_err(w)?;

    let mut full = None;
    if space.is_enumerable() && job.backend.is_pure() {
        let mut backend = job.backend.build();
        let result = run_tuning_in(&job.tuning, &space, backend.as_mut(), &Strategy::Full, base_seed)?;
        let times: Vec<f64> = result
            .rows
            .iter()
            .filter(|r| r.verification.acceptable())
            .filter_map(|r| r.time_ms)
            .collect();
        if let Some(dist) = ExperimentStats::from_samples(&times) {
            let path = sibling(&stats_path, ".full.csv");
            write_csv_file(&path, |f| dist.write_csv(f))?;
            writeln!(
                stdout,
                "full space ({} configurations) ms: mean={} min={}",
                times.len(),
                dist.mean,
                dist.min
            )
            .map_err(w)?;
            full = Some(path);
        }
    } else {
        log::info!("skipping the full-space distribution");
    }
    writeln!(stdout, "stats: {}", stats_path.display()).map_err(w)?;
    Ok(StatsOutputs {
        stats: stats_path,
        runs: runs_path,
        full,
    })
}

/// Prints raw, user-constrained and device-constrained sizes, and with
/// `list` every valid configuration.
pub fn cmd_enumerate(job_path: &Path, list: bool, stdout: &mut dyn Write) -> Result<()> {
    let job = Job::load(job_path)?;
    let user = &job.tuning.space;
    let full = job.tuning.constrained_space()?;
    let raw = full.raw_size();
    if list && raw > ENUMERATION_LIMIT {
        return Err(SpaceError::ExplicitEnumerationTooLarge(raw).into());
    }
    let user_count = user.valid_count()?;
    let valid = full.valid_count()?;
    let w = |e| stdout_error(e);
    writeln!(stdout, "raw: {raw}").map_err(w)?;
    writeln!(stdout, "constrained: {valid}").map_err(w)?;
    writeln!(stdout, "user-valid: {user_count}").map_err(w)?;
    writeln!(stdout, "device-rejected: {}", user_count - valid).map_err(w)?;
    if list {
        for c in full.enumerate_valid()? {
            writeln!(stdout, "{}", full.canonical(c)).map_err(w)?;
        }
    }
    if valid == 0 {
        return Err(SpaceError::EmptySpace.into());
    }
    Ok(())
}
