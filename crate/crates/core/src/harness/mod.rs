//! Experiment plumbing: configuration files, per-seed training runs with CSV,
//! checkpoint and SVG output, algorithm comparisons, and the verification
//! suites.
//!
//! Output files for a run labelled `<mode>_<env>` and seed `s`:
//!
//! - `<mode>_<env>_seed<s>.csv` training log
//! - `<mode>_<env>_seed<s>_eval.csv` evaluation log
//! - `<mode>_<env>_seed<s>.ckpt/` final checkpoint directory
//! - `<mode>_<env>_returns.svg` episode returns of every seed
//!
//! Files are first written with a `.partial` suffix and renamed once
//! complete, so an interrupted run leaves only flagged files behind.

mod config;
mod suites;
mod svg;

pub use config::{config_keys, parse_config, RunConfig, Threshold};
pub use suites::{
    finite_difference, gradcheck_suite, relative_error, tabular_suite, CheckRow, SuiteReport, FD_STEP, FD_TOLERANCE,
};
pub use svg::{learning_curve_svg, moving_average, Series, MOVING_AVERAGE_WINDOW};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, EvalRecord, RunLog};
use crate::envs::EnvKind;
use crate::error::{Error, Result};

/// Episodes in the random-policy baseline rollout.
pub const BASELINE_EPISODES: usize = 100;
pub const BASELINE_SEED: u64 = 0xBA5E;
/// Evaluations averaged for the final-return figure.
pub const FINAL_EVALS: usize = 10;
/// Trailing window (in evaluations) of the steps-to-threshold average.
pub const THRESHOLD_WINDOW: usize = 3;
/// Fraction of the baseline's gap to zero an automatic threshold demands.
pub const AUTO_THRESHOLD_FRACTION: f64 = 0.5;

/// Mean undiscounted return of uniformly random actions.
pub fn random_baseline(kind: EnvKind, episodes: usize, seed: u64) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::invalid("baseline needs at least one episode"));
    }
    let mut env = kind.make();
    let spec = env.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(rng.random());
        loop {
            let unit: Vec<f64> = (0..spec.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = env.step(&spec.scale_action(&unit))?;
            total += out.reward;
            if out.done {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// `baseline + fraction * (0 - baseline)`: returns are non-positive in both
/// environments, so zero is the ceiling.
pub fn threshold_from_baseline(baseline: f64, fraction: f64) -> f64 {
    baseline * (1.0 - fraction)
}

pub fn resolve_threshold(config: &RunConfig) -> Result<(f64, Option<f64>)> {
    match config.threshold {
        Threshold::Value(v) => Ok((v, None)),
        Threshold::Auto => {
            let base = random_baseline(config.env, BASELINE_EPISODES, BASELINE_SEED)?;
            Ok((threshold_from_baseline(base, AUTO_THRESHOLD_FRACTION), Some(base)))
        }
    }
}

/// First evaluation step whose trailing mean return (over `window`
/// evaluations, fewer at the start) reaches `threshold`.
pub fn steps_to_threshold(evals: &[EvalRecord], threshold: f64, window: usize) -> Option<usize> {
    let returns: Vec<f64> = evals.iter().map(|e| e.mean_return).collect();
    moving_average(&returns, window)
        .iter()
        .zip(evals)
        .find(|(avg, _)| **avg >= threshold)
        .map(|(_, e)| e.step)
}

/// Mean return of the last `n` evaluations.
pub fn final_mean_return(evals: &[EvalRecord], n: usize) -> Option<f64> {
    if evals.is_empty() || n == 0 {
        return None;
    }
    let tail = &evals[evals.len().saturating_sub(n)..];
    Some(tail.iter().map(|e| e.mean_return).sum::<f64>() / tail.len() as f64)
}

pub fn run_label(config: &RunConfig) -> String {
    format!("{}_{}", config.agent.mode, config.env)
}

fn partial(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes `path.partial` then renames it to `path`.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = partial(path);
    if tmp.is_dir() {
        fs::remove_dir_all(&tmp)?;
    }
    write(&tmp)?;
    if path.is_dir() {
        fs::remove_dir_all(path)?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub log: RunLog,
    pub csv: PathBuf,
    pub eval_csv: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub label: String,
    pub runs: Vec<SeedRun>,
    pub svg: PathBuf,
}

fn train_seed(config: &RunConfig, seed: u64, out_dir: &Path) -> Result<SeedRun> {
    let label = run_label(config);
    let mut env = config.env.make();
    let mut agent = Agent::new(config.agent_for_seed(seed), env.spec())?;
    log::info!("training {label} seed {seed} for {} steps", config.total_steps);
    let log = agent.train(&mut env, &config.train_options())?;

    let stem = out_dir.join(format!("{label}_seed{seed}"));
    let csv = stem.with_extension("csv");
    let eval_csv = out_dir.join(format!("{label}_seed{seed}_eval.csv"));
    let checkpoint = stem.with_extension("ckpt");
    write_atomic(&csv, |p| log.write_csv(&mut fs::File::create(p)?))?;
    write_atomic(&eval_csv, |p| log.write_eval_csv(&mut fs::File::create(p)?))?;
    write_atomic(&checkpoint, |p| agent.save(p))?;
    if let Some(last) = log.evals.last() {
        log::info!("{label} seed {seed}: final eval return {:.1}", last.mean_return);
    }
    Ok(SeedRun {
        seed,
        log,
        csv,
        eval_csv,
        checkpoint,
    })
}

fn episode_series(label: &str, runs: &[SeedRun]) -> Vec<Series> {
    runs.iter()
        .map(|r| Series {
            label: format!("{label} seed {}", r.seed),
            points: r
                .log
                .episode_returns()
                .into_iter()
                .map(|(s, g)| (s as f64, g))
                .collect(),
        })
        .collect()
}

/// Trains every seed of `config` (one worker thread per seed) and writes
/// the per-seed CSVs and checkpoints plus one overlay SVG into `out_dir`.
pub fn run_train(config: &RunConfig, out_dir: &Path) -> Result<TrainReport> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let label = run_label(config);
    let results: Vec<Result<SeedRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || train_seed(config, seed, out_dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::invalid("training worker panicked")))
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;

    let svg = out_dir.join(format!("{label}_returns.svg"));
    let title = format!("{label}: episode return");
    let body = learning_curve_svg(&title, &episode_series(&label, &runs), MOVING_AVERAGE_WINDOW);
    write_atomic(&svg, |p| Ok(fs::write(p, body)?))?;
    Ok(TrainReport { label, runs, svg })
}

/// Loads a checkpoint directory and evaluates it on `config`'s environment.
pub fn run_eval(checkpoint: &Path, config: &RunConfig, seed: u64) -> Result<crate::agent::EvalResult> {
    config.validate()?;
    let spec = config.env.make().spec().clone();
    let agent = Agent::load(checkpoint, config.agent_for_seed(seed), &spec)?;
    agent.evaluate(config.env, config.eval_episodes, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub seed: u64,
    pub steps_to_threshold: Option<usize>,
    pub final_mean_return: f64,
    /// Mean over evaluation points of the acting policy's entropy.
    pub mean_entropy: f64,
    pub entropy_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareAggregate {
    pub label: String,
    pub reached: usize,
    pub seeds: usize,
    /// Mean over seeds; unreached seeds count as `total_steps`.
    pub mean_steps_to_threshold: f64,
    pub final_mean_return: f64,
    pub mean_entropy: f64,
    /// Standard error of `mean_entropy` across seeds.
    pub entropy_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub env: EnvKind,
    pub threshold: f64,
    pub baseline: Option<f64>,
    pub rows: Vec<CompareRow>,
    pub aggregates: Vec<CompareAggregate>,
    pub svg: Option<PathBuf>,
}

impl CompareReport {
    pub fn aggregate(&self, label: &str) -> Option<&CompareAggregate> {
        self.aggregates.iter().find(|a| a.label == label)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "compare on {}: threshold {:.1}", self.env, self.threshold)?;
        if let Some(b) = self.baseline {
            write!(f, " (random baseline {b:.1})")?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "{:<20} {:>6} {:>18} {:>14} {:>14}",
            "run", "seed", "steps-to-threshold", "final return", "mean entropy"
        )?;
        for r in &self.rows {
            let steps = r
                .steps_to_threshold
                .map_or_else(|| "not reached".to_string(), |s| s.to_string());
            writeln!(
                f,
                "{:<20} {:>6} {:>18} {:>14.2} {:>14.4}",
                r.label, r.seed, steps, r.final_mean_return, r.mean_entropy
            )?;
        }
        for a in &self.aggregates {
            writeln!(
                f,
                "{:<20} {:>6} {:>18} {:>14.2} {:>14.4}  (reached {}/{}, entropy se {:.4})",
                a.label,
                "all",
                format!("{:.0}", a.mean_steps_to_threshold),
                a.final_mean_return,
                a.mean_entropy,
                a.reached,
                a.seeds,
                a.entropy_se
            )?;
        }
        Ok(())
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-seed rows and one aggregate for a finished training report.
pub fn summarize(
    label: &str,
    runs: &[SeedRun],
    threshold: f64,
    total_steps: usize,
) -> (Vec<CompareRow>, CompareAggregate) {
    let rows: Vec<CompareRow> = runs
        .iter()
        .map(|r| {
            let evals = &r.log.evals;
            let trace: Vec<(usize, f64)> = evals.iter().map(|e| (e.step, e.mean_entropy)).collect();
            CompareRow {
                label: label.to_string(),
                seed: r.seed,
                steps_to_threshold: steps_to_threshold(evals, threshold, THRESHOLD_WINDOW),
                final_mean_return: final_mean_return(evals, FINAL_EVALS).unwrap_or(f64::NAN),
                mean_entropy: trace.iter().map(|t| t.1).sum::<f64>() / trace.len().max(1) as f64,
                entropy_trace: trace,
            }
        })
        .collect();
    let steps: Vec<f64> = rows
        .iter()
        .map(|r| r.steps_to_threshold.unwrap_or(total_steps) as f64)
        .collect();
    let finals: Vec<f64> = rows.iter().map(|r| r.final_mean_return).collect();
    let entropies: Vec<f64> = rows.iter().map(|r| r.mean_entropy).collect();
    let (mean_entropy, entropy_se) = mean_se(&entropies);
    let aggregate = CompareAggregate {
        label: label.to_string(),
        reached: rows.iter().filter(|r| r.steps_to_threshold.is_some()).count(),
        seeds: rows.len(),
        mean_steps_to_threshold: mean_se(&steps).0,
        final_mean_return: mean_se(&finals).0,
        mean_entropy,
        entropy_se,
    };
    (rows, aggregate)
}

/// Builds a comparison from two finished training reports.
pub fn compare_reports(
    env: EnvKind,
    total_steps: usize,
    threshold: f64,
    baseline: Option<f64>,
    a: &TrainReport,
    b: &TrainReport,
) -> CompareReport {
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (i, report) in [a, b].into_iter().enumerate() {
        // a config compared against itself still gets two distinct labels
        let label = if i == 1 && b.label == a.label {
            format!("{}_b", report.label)
        } else {
            report.label.clone()
        };
        let (r, agg) = summarize(&label, &report.runs, threshold, total_steps);
        rows.extend(r);
        aggregates.push(agg);
    }
    CompareReport {
        env,
        threshold,
        baseline,
        rows,
        aggregates,
        svg: None,
    }
}

/// Trains both configurations, then reports steps-to-threshold, final
/// return and entropy per seed and per algorithm, plus an overlay SVG of
/// evaluation returns.
pub fn run_compare(a: &RunConfig, b: &RunConfig, out_dir: &Path) -> Result<CompareReport> {
    if a.env != b.env {
        return Err(Error::invalid(format!(
            "compare needs one env, got {} and {}",
            a.env, b.env
        )));
    }
    if a.total_steps != b.total_steps {
        return Err(Error::invalid(format!(
            "compare needs equal total_steps, got {} and {}",
            a.total_steps, b.total_steps
        )));
    }
    if a.threshold != b.threshold {
        log::warn!("configs disagree on threshold; using the first config's");
    }
    let (threshold, baseline) = resolve_threshold(a)?;
    let dir_a = out_dir.join(run_label(a));
    let same = run_label(a) == run_label(b);
    let dir_b = out_dir.join(if same {
        format!("{}_b", run_label(b))
    } else {
        run_label(b)
    });
    let ra = run_train(a, &dir_a)?;
    let rb = run_train(b, &dir_b)?;
    let mut report = compare_reports(a.env, a.total_steps, threshold, baseline, &ra, &rb);

    let mut series = Vec::new();
    for agg in &report.aggregates {
        let runs = if agg.label == report.aggregates[0].label {
            &ra.runs
        } else {
            &rb.runs
        };
        for r in runs {
            series.push(Series {
                label: format!("{} seed {}", agg.label, r.seed),
                points: r.log.evals.iter().map(|e| (e.step as f64, e.mean_return)).collect(),
            });
        }
    }
    let svg = out_dir.join(format!("compare_{}.svg", a.env));
    let body = learning_curve_svg(&format!("{}: evaluation return", a.env), &series, THRESHOLD_WINDOW);
    write_atomic(&svg, |p| Ok(fs::write(p, body)?))?;
    let text = out_dir.join(format!("compare_{}.txt", a.env));
    let rendered = report.to_string();
    write_atomic(&text, |p| Ok(fs::write(p, rendered)?))?;
    report.svg = Some(svg);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evals(returns: &[f64]) -> Vec<EvalRecord> {
        returns
            .iter()
            .enumerate()
            .map(|(i, &r)| EvalRecord {
                step: 1000 * (i + 1),
                mean_return: r,
                mean_entropy: 0.0,
            })
            .collect()
    }

    #[test]
    fn threshold_crossing_uses_trailing_average() {
        let e = evals(&[-900.0, -300.0, -300.0, -100.0]);
        // averages: -900, -600, -500, -233.3
        assert_eq!(steps_to_threshold(&e, -550.0, 3), Some(3000));
        assert_eq!(steps_to_threshold(&e, -300.0, 1), Some(2000));
        assert_eq!(steps_to_threshold(&e, -10.0, 3), None);
        assert_eq!(steps_to_threshold(&e, -1e9, 3), Some(1000));
        assert_eq!(steps_to_threshold(&[], 0.0, 3), None);
    }

    #[test]
    fn final_mean_uses_last_evaluations() {
        let e = evals(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(final_mean_return(&e, 2), Some(3.5));
        assert_eq!(final_mean_return(&e, 10), Some(2.5));
        assert_eq!(final_mean_return(&[], 10), None);
    }

    #[test]
    fn auto_threshold_is_halfway_to_zero() {
        assert_eq!(threshold_from_baseline(-1200.0, 0.5), -600.0);
        assert_eq!(threshold_from_baseline(-1200.0, 0.0), -1200.0);
    }

    #[test]
    fn partial_paths_keep_extensions() {
        assert_eq!(partial(Path::new("a/b.csv")), PathBuf::from("a/b.csv.partial"));
    }

    #[test]
    fn mean_se_examples() {
        assert_eq!(mean_se(&[2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }
}
