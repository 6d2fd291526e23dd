//! Experiment runner: training and evaluation loops, CSV metrics,
//! checkpoints and the decision-latency benchmark.
//!
//! Each replication draws every random quantity from streams keyed by
//! `(seed, replication)`, so the same configuration always reproduces the
//! same files byte for byte.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agents::{self, Dhqn, EpisodeMetrics};
use crate::baselines::{BufferFixed, SinrFixed, SinrSearched};
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::world::{Cell, Environment, Scheduler};

pub use config::{
    apply_overrides, Bandwidth, BaselineConfig, BenchConfig, CellConfig, EvaluateConfig,
    ScenarioConfig, SchedulerKind, ENV_PREFIX,
};

/// One CSV line per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: usize,
    pub steps: usize,
    pub mean_throughput_mbps: f64,
    pub packets_delivered: u64,
    pub mean_epsilon: f64,
    pub master_loss: f64,
    pub sub_loss: f64,
    pub wall_clock_ms: f64,
}

pub const METRICS_HEADER: [&str; 8] = [
    "episode",
    "steps",
    "mean_throughput_mbps",
    "packets_delivered",
    "mean_epsilon",
    "master_loss",
    "sub_loss",
    "wall_clock_ms",
];

impl MetricsRow {
    pub fn new(episode: usize, m: &EpisodeMetrics, wall_clock_ms: f64) -> Self {
        MetricsRow {
            episode,
            steps: m.steps,
            mean_throughput_mbps: m.mean_throughput_bps / 1e6,
            packets_delivered: m.packets_delivered,
            mean_epsilon: m.mean_epsilon,
            master_loss: m.master_loss,
            sub_loss: m.sub_loss,
            wall_clock_ms,
        }
    }
}

/// Writes the header and `rows`; the header is present even with no rows.
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    let csv_err = |e: csv::Error| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Runs one episode with a fixed decision rule; nothing is learned.
pub fn run_episode(
    env: &mut Environment,
    scheduler: &mut dyn Scheduler,
    max_steps: usize,
) -> Result<EpisodeMetrics> {
    env.reset();
    let mut m = EpisodeMetrics::default();
    let mut throughput = 0.0;
    while m.steps < max_steps && !env.is_terminal() {
        let x = scheduler.schedule(&env.cell, env.state())?;
        let report = env.cell.validate(&x);
        if !report.is_valid() {
            return Err(Error::ContractViolation(format!(
                "{} emitted an invalid allocation: {report:?}",
                scheduler.name()
            )));
        }
        let r = env.apply(&x)?;
        throughput += r.outcome.throughput.total;
        m.packets_delivered += r.delivered;
        m.steps += 1;
    }
    if m.steps > 0 {
        m.mean_throughput_bps = throughput / m.steps as f64;
    }
    Ok(m)
}

/// Non-learning scheduler for `kind`; `None` for the learned agent.
pub fn fixed_scheduler(
    config: &ScenarioConfig,
    kind: SchedulerKind,
) -> Option<Box<dyn Scheduler + Send>> {
    let sus = config.baselines.sus();
    match kind {
        SchedulerKind::Dhqn => None,
        SchedulerKind::SinrSearched => Some(Box::new(SinrSearched { sus })),
        SchedulerKind::SinrFixed => Some(Box::new(SinrFixed { sus })),
        SchedulerKind::BufferFixed => Some(Box::new(BufferFixed {
            order: config.baselines.buffer_order,
        })),
        SchedulerKind::Oracle => Some(Box::new(Oracle {
            limits: config.oracle,
        })),
    }
}

/// Errors that should stop a run before any episode executes.
pub fn preflight(config: &ScenarioConfig, kind: SchedulerKind) -> Result<Cell> {
    config.validate()?;
    let cell = config.cell()?;
    if kind == SchedulerKind::Oracle {
        config.oracle.check(&cell)?;
    }
    Ok(cell)
}

fn environment(config: &ScenarioConfig, cell: Cell, seed: u64, replication: u64) -> Environment {
    Environment::new(
        cell,
        config.channel.clone(),
        config.traffic.clone(),
        seed,
        replication,
    )
}

/// In-memory result of one training replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub rows: Vec<MetricsRow>,
    pub agents: Option<Dhqn>,
}

/// `config.episodes` episodes of the configured scheduler; the learned
/// agent trains, the others only execute.
pub fn train_replication(
    config: &ScenarioConfig,
    cell: &Cell,
    replication: u64,
) -> Result<Replication> {
    let mut env = environment(config, cell.clone(), config.seed, replication);
    let mut rows = Vec::with_capacity(config.episodes);
    let clock = |start: Instant| {
        if config.record_wall_clock {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    match fixed_scheduler(config, config.scheduler) {
        None => {
            let mut agents = Dhqn::new(cell, config.agent.clone(), config.seed, replication)?;
            for e in 0..config.episodes {
                let start = Instant::now();
                let m = agents::train_episode(
                    &mut agents,
                    &mut env,
                    e,
                    config.episodes,
                    config.max_steps,
                )?;
                rows.push(MetricsRow::new(e, &m, clock(start)));
            }
            Ok(Replication {
                rows,
                agents: Some(agents),
            })
        }
        Some(mut s) => {
            for e in 0..config.episodes {
                let start = Instant::now();
                let m = run_episode(&mut env, s.as_mut(), config.max_steps)?;
                rows.push(MetricsRow::new(e, &m, clock(start)));
            }
            Ok(Replication { rows, agents: None })
        }
    }
}

fn map_replications<T, F>(config: &ScenarioConfig, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let reps = 0..config.replications as u64;
    if config.parallel {
        reps.into_par_iter().map(&f).collect()
    } else {
        reps.map(f).collect()
    }
}

pub fn metrics_path(dir: &Path, prefix: &str, kind: SchedulerKind, replication: u64) -> PathBuf {
    dir.join(format!("{prefix}{}_rep{replication}.csv", kind.as_str()))
}

pub fn checkpoint_path(dir: &Path, replication: u64) -> PathBuf {
    dir.join(format!("dhqn_rep{replication}.axqn"))
}

/// Files written by [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains or executes every replication and writes one CSV per replication,
/// plus a checkpoint per replication for the learned agent.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    let cell = preflight(config, config.scheduler)?;
    ensure_dir(&config.output_dir)?;
    let reps = map_replications(config, |r| train_replication(config, &cell, r))?;
    let mut out = RunOutput {
        metrics: Vec::new(),
        checkpoints: Vec::new(),
    };
    for (r, rep) in reps.iter().enumerate() {
        let path = metrics_path(&config.output_dir, "", config.scheduler, r as u64);
        write_metrics(&path, &rep.rows)?;
        out.metrics.push(path);
        if let Some(agents) = &rep.agents {
            let path = checkpoint_path(&config.output_dir, r as u64);
            let mut bytes = Vec::new();
            agents.save(&mut bytes).map_err(|e| Error::io(&path, e))?;
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            out.checkpoints.push(path);
        }
    }
    Ok(out)
}

/// Mean with a two-sided 95% Student-t interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
    /// Fewer than two samples: no spread estimate, `half_width` is NaN.
    pub degenerate: bool,
}

pub fn confidence_interval(samples: &[f64]) -> Interval {
    let n = samples.len();
    let mean = if n == 0 {
        f64::NAN
    } else {
        samples.iter().sum::<f64>() / n as f64
    };
    if n < 2 {
        return Interval {
            mean,
            half_width: f64::NAN,
            samples: n,
            degenerate: true,
        };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Interval {
        mean,
        half_width: t * (var / n as f64).sqrt(),
        samples: n,
        degenerate: false,
    }
}

/// Evaluation result: per-replication episode rows and the throughput
/// interval across replications (Mbit/s).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub scheduler: SchedulerKind,
    pub rows: Vec<Vec<MetricsRow>>,
    pub replication_means_mbps: Vec<f64>,
    pub throughput: Interval,
}

fn row_mean(rows: &[MetricsRow]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.mean_throughput_mbps).sum::<f64>() / rows.len() as f64
}

/// Greedy episodes of `scheduler` on evaluation drops of `replication`.
pub fn evaluate_scheduler(
    config: &ScenarioConfig,
    cell: &Cell,
    scheduler: &mut dyn Scheduler,
    replication: u64,
) -> Result<Vec<MetricsRow>> {
    let mut env = environment(config, cell.clone(), config.evaluation_seed(), replication);
    (0..config.evaluate.episodes)
        .map(|e| {
            let start = Instant::now();
            let m = run_episode(&mut env, scheduler, config.max_steps)?;
            let ms = if config.record_wall_clock {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            Ok(MetricsRow::new(e, &m, ms))
        })
        .collect()
}

/// Evaluates the configured scheduler without learning. The learned agent
/// needs `checkpoint` and runs with epsilon = 0.
pub fn evaluate(config: &ScenarioConfig, checkpoint: Option<&Path>) -> Result<Evaluation> {
    let cell = preflight(config, config.scheduler)?;
    let nets = match (config.scheduler, checkpoint) {
        (SchedulerKind::Dhqn, Some(p)) => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            Some(Dhqn::load(
                &cell,
                config.agent.clone(),
                bytes.as_slice(),
                config.seed,
                0,
            )?)
        }
        (SchedulerKind::Dhqn, None) => {
            return Err(Error::Config(
                "evaluating dhqn requires a checkpoint".into(),
            ));
        }
        _ => None,
    };
    let rows = map_replications(config, |r| match &nets {
        Some(n) => evaluate_scheduler(config, &cell, &mut n.clone(), r),
        None => {
            let mut s = fixed_scheduler(config, config.scheduler).expect("fixed scheduler");
            evaluate_scheduler(config, &cell, s.as_mut(), r)
        }
    })?;
    let means: Vec<f64> = rows.iter().map(|r| row_mean(r)).collect();
    Ok(Evaluation {
        scheduler: config.scheduler,
        throughput: confidence_interval(&means),
        replication_means_mbps: means,
        rows,
    })
}

/// Writes per-replication CSVs and a summary CSV for `eval`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut paths = Vec::new();
    for (r, rows) in eval.rows.iter().enumerate() {
        let path = metrics_path(dir, "eval_", eval.scheduler, r as u64);
        write_metrics(&path, rows)?;
        paths.push(path);
    }
    let path = dir.join(format!("eval_{}_summary.csv", eval.scheduler.as_str()));
    let t = &eval.throughput;
    let text = format!(
        "scheduler,replications,mean_throughput_mbps,ci95_half_width_mbps,degenerate\n{},{},{},{},{}\n",
        eval.scheduler.as_str(),
        t.samples,
        t.mean,
        t.half_width,
        t.degenerate
    );
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    paths.push(path);
    Ok(paths)
}

/// Median per-decision latency at one STA count, microseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub stations: usize,
    pub dhqn_median_us: f64,
    pub sinr_searched_median_us: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_decisions(
    env: &mut Environment,
    s: &mut dyn Scheduler,
    warmup: usize,
    iterations: usize,
) -> Result<f64> {
    let mut samples = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        env.reset();
        let start = Instant::now();
        let x = s.schedule(&env.cell, env.state())?;
        let us = start.elapsed().as_secs_f64() * 1e6;
        std::hint::black_box(&x);
        if i >= warmup {
            samples.push(us);
        }
    }
    Ok(median(samples))
}

/// Decision latency of the (untrained) learned agent and the searched-RA
/// baseline for each STA count in `config.bench.stations`. Warm-up
/// decisions are excluded from the medians.
pub fn bench_scaling(config: &ScenarioConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let b = &config.bench;
    let mut rows = Vec::with_capacity(b.stations.len());
    for &k in &b.stations {
        let cell = config.cell_with(k)?;
        let mut env = environment(config, cell.clone(), config.seed, 0);
        let mut dhqn = Dhqn::new(&cell, config.agent.clone(), config.seed, 0)?;
        let mut sinr = SinrSearched {
            sus: config.baselines.sus(),
        };
        rows.push(BenchRow {
            stations: k,
            dhqn_median_us: time_decisions(&mut env, &mut dhqn, b.warmup, b.iterations)?,
            sinr_searched_median_us: time_decisions(&mut env, &mut sinr, b.warmup, b.iterations)?,
        });
    }
    Ok(rows)
}

pub fn write_bench(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: SchedulerKind, dir: &Path) -> ScenarioConfig {
        let mut c = ScenarioConfig {
            scheduler: kind,
            episodes: 3,
            ..ScenarioConfig::default()
        };
        c.max_steps = 4;
        c.cell.stations = 3;
        c.cell.rx_antennas = 2;
        c.cell.tx_antennas = 1;
        c.agent.csi_hidden = vec![8];
        c.agent.buf_hidden = vec![8];
        c.agent.fusion_hidden = vec![8];
        c.agent.batch_size = 4;
        c.evaluate.episodes = 2;
        c.output_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn zero_episodes_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(SchedulerKind::BufferFixed, dir.path());
        c.episodes = 0;
        let out = run(&c).unwrap();
        let text = fs::read_to_string(&out.metrics[0]).unwrap();
        assert_eq!(text, format!("{}\n", METRICS_HEADER.join(",")));
        assert!(read_metrics(&out.metrics[0]).unwrap().is_empty());
    }

    #[test]
    fn reruns_are_byte_identical() {
        for kind in SchedulerKind::ALL {
            let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
            let oa = run(&tiny(kind, a.path())).unwrap();
            let ob = run(&tiny(kind, b.path())).unwrap();
            for (x, y) in oa
                .metrics
                .iter()
                .zip(&ob.metrics)
                .chain(oa.checkpoints.iter().zip(&ob.checkpoints))
            {
                assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{kind:?}");
            }
            assert_eq!(read_metrics(&oa.metrics[0]).unwrap().len(), 3);
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut ca = tiny(SchedulerKind::Dhqn, a.path());
        ca.replications = 3;
        let mut cb = tiny(SchedulerKind::Dhqn, b.path());
        cb.replications = 3;
        cb.parallel = true;
        let (oa, ob) = (run(&ca).unwrap(), run(&cb).unwrap());
        for (x, y) in oa.metrics.iter().zip(&ob.metrics) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }

    #[test]
    fn oracle_guard_fires_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(SchedulerKind::Oracle, dir.path());
        c.cell.stations = 20;
        assert!(matches!(run(&c), Err(Error::TooLarge(_))));
        assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
    }

    #[test]
    fn evaluate_checkpoint_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(SchedulerKind::Dhqn, dir.path());
        let out = run(&c).unwrap();
        let eval = evaluate(&c, Some(&out.checkpoints[0])).unwrap();
        assert!(eval.throughput.degenerate);
        assert!(eval.rows[0].iter().all(|r| r.mean_epsilon == 0.0));
        let again = evaluate(&c, Some(&out.checkpoints[0])).unwrap();
        assert_eq!(eval.rows, again.rows);
        write_evaluation(dir.path(), &eval).unwrap();

        let bad = dir.path().join("bad.axqn");
        let mut bytes = fs::read(&out.checkpoints[0]).unwrap();
        bytes[0] = b'X';
        fs::write(&bad, bytes).unwrap();
        assert!(matches!(
            evaluate(&c, Some(&bad)),
            Err(Error::IncompatibleCheckpoint(_))
        ));

        let mut other = c.clone();
        other.cell.stations = 4;
        assert!(matches!(
            evaluate(&other, Some(&out.checkpoints[0])),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn interval_examples() {
        let i = confidence_interval(&[1.0, 2.0, 3.0]);
        assert_eq!(i.mean, 2.0);
        // t_{0.975, 2} = 4.302653; s = 1.
        assert!((i.half_width - 4.302_652_729_7 / 3f64.sqrt()).abs() < 1e-6);
        assert!(confidence_interval(&[5.0]).degenerate);
    }

    #[test]
    fn bench_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(SchedulerKind::Dhqn, dir.path());
        c.bench.stations = vec![2];
        c.bench.iterations = 2;
        c.bench.warmup = 1;
        let rows = bench_scaling(&c).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].dhqn_median_us > 0.0);
        write_bench(&dir.path().join("bench.csv"), &rows).unwrap();
    }
}
