//! The four subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mvgmp_core::analysis::{self, PeriodicZipfParams, ViewLosses};
use mvgmp_core::model::ViewId;
use mvgmp_core::simulator::{run_scenario_with, ScenarioOutput};
use mvgmp_core::stats::RunningStats;
use mvgmp_core::Execution;

use crate::config::Config;
use crate::output::{num, CsvOut};
use crate::suite::{self, CheckRow};

pub const FRAME_COLUMNS: [&str; 15] = [
    "frame",
    "active_clients",
    "mvgmp_channel_time_ms",
    "baseline_channel_time_ms",
    "mvgmp_instances",
    "baseline_transmissions",
    "mean_failure",
    "max_failure",
    "threshold_violations",
    "infeasible_clients",
    "mvgmp_mean_alpha",
    "baseline_mean_alpha",
    "baseline_capped_views",
    "baseline_overflow_views",
    "table_version",
];

pub const CLIENT_COLUMNS: [&str; 12] = [
    "client",
    "desired_view",
    "threshold",
    "distance_m",
    "feasible",
    "subscriptions",
    "predicted_failure",
    "simulated_failure",
    "failures",
    "trials",
    "z_score",
    "consistent",
];

pub const SEED_COLUMNS: [&str; 15] = [
    "seed",
    "frames",
    "mean_active_clients",
    "mvgmp_channel_time_ms",
    "baseline_channel_time_ms",
    "channel_time_ratio",
    "mvgmp_mean_alpha",
    "baseline_mean_alpha",
    "threshold_violations",
    "infeasible_frames",
    "frames_mvgmp_above_baseline",
    "observed_failures",
    "expected_failures",
    "failure_z",
    "inconsistent_clients",
];

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "scheme",
    "seeds",
    "channel_time_ms",
    "channel_time_ms_ci95",
    "mean_alpha",
    "mean_alpha_ci95",
    "channel_time_ratio",
    "channel_time_ratio_ci95",
];

pub const VALIDATION_COLUMNS: [&str; 9] =
    ["check", "instance", "closed_form", "oracle", "abs_delta", "ci95", "tolerance", "gated", "pass"];

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn seed_label(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

/// Closed-form tables: `failure.csv`, `alpha_uniform.csv`, `alpha_spaced.csv`,
/// `alpha_periodic_zipf.csv`.
pub fn analyze(config: &Config, out: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out)?;
    let hash = config.hash();
    let a = &config.analysis;
    let paths: Vec<PathBuf> = ["failure.csv", "alpha_uniform.csv", "alpha_spaced.csv", "alpha_periodic_zipf.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();

    let mut failure =
        CsvOut::create(&paths[0], &hash, "-", &["views", "range", "view_loss", "desired_view", "failure_probability"])?;
    for &range in &a.ranges {
        for &p in &a.losses {
            let losses = ViewLosses::from_values(vec![p; usize::from(a.views)]);
            for k in 1..=a.views {
                let view = ViewId::new(k)?;
                let f = losses.failure(view, range).clamp(0.0, 1.0);
                failure.row([a.views.to_string(), range.to_string(), num(p), k.to_string(), num(f)])?;
            }
        }
    }
    failure.finish()?;

    let mut uniform = CsvOut::create(&paths[1], &hash, "-", &["view_loss", "range", "alpha"])?;
    for &p in &a.losses {
        for &range in &a.ranges {
            uniform.row([num(p), range.to_string(), num(analysis::asymptotic_alpha(p, range)?.value())])?;
        }
    }
    uniform.finish()?;

    let mut spaced = CsvOut::create(&paths[2], &hash, "-", &["view_loss", "range", "spacing", "alpha"])?;
    for &p in &a.losses {
        for &range in &a.ranges {
            for &spacing in a.spacings.iter().filter(|&&q| q <= range) {
                let alpha = analysis::asymptotic_alpha_spaced(p, range, spacing)?.value();
                spaced.row([num(p), range.to_string(), spacing.to_string(), num(alpha)])?;
            }
        }
    }
    spaced.finish()?;

    let mut zipf = CsvOut::create(
        &paths[3],
        &hash,
        "-",
        &["period", "exponent", "success", "peak", "range", "alpha", "alpha_truncated", "alpha_printed_form"],
    )?;
    for z in &a.zipf {
        let params = PeriodicZipfParams::new(z.period, z.exponent, z.peak, z.success)?;
        zipf.row([
            z.period.to_string(),
            num(z.exponent),
            num(z.success),
            num(z.peak),
            z.range.to_string(),
            num(analysis::asymptotic_alpha_periodic_zipf(&params, z.range)?.value()),
            num(analysis::asymptotic_alpha_periodic_zipf_truncated(&params, z.range)?.value()),
            num(analysis::periodic_zipf_piecewise_form(&params, z.range)),
        ])?;
    }
    zipf.finish()?;
    Ok(paths)
}

pub fn write_validation(path: &Path, config: &Config, rows: &[CheckRow]) -> Result<()> {
    let mut out = CsvOut::create(path, &config.hash(), &config.validate.seed.to_string(), &VALIDATION_COLUMNS)?;
    for r in rows {
        out.row([
            r.check.to_string(),
            r.instance.clone(),
            num(r.closed_form),
            num(r.oracle),
            num(r.abs_delta),
            num(r.ci95),
            num(r.tolerance),
            r.gated.to_string(),
            r.pass.to_string(),
        ])?;
    }
    out.finish()
}

/// Runs the oracle suite into `validation.csv`; returns whether every gated
/// row passed.
pub fn validate(config: &Config, out: &Path, execution: Execution) -> Result<bool> {
    create_dir(out)?;
    let rows = suite::run_all(config, execution)?;
    write_validation(&out.join("validation.csv"), config, &rows)?;
    for r in rows.iter().filter(|r| r.gated && !r.pass) {
        log::error!("{} {}: |delta| {} > {}", r.check, r.instance, r.abs_delta, r.tolerance);
    }
    Ok(suite::all_pass(&rows))
}

/// Runs one scenario per seed. Seeds run concurrently when there are
/// several; a single seed parallelizes its own validation instead.
pub fn run_seeds(config: &Config, seeds: &[u64], execution: Execution) -> Result<Vec<ScenarioOutput>> {
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    let inner = if seeds.len() > 1 { Execution::Sequential } else { execution };
    execution
        .map_slice(seeds, |&seed| {
            let scenario = mvgmp_core::simulator::ScenarioConfig { seed, ..config.scenario.clone() };
            run_scenario_with(&scenario, inner).with_context(|| format!("seed {seed}"))
        })
        .into_iter()
        .collect()
}

/// Seed-averaged results with 95% (Student t) half-widths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub seeds: usize,
    pub mvgmp_channel_time: (f64, f64),
    pub baseline_channel_time: (f64, f64),
    pub mvgmp_alpha: (f64, f64),
    pub baseline_alpha: (f64, f64),
    pub ratio: (f64, f64),
}

pub fn aggregate(outputs: &[ScenarioOutput]) -> Aggregate {
    let stat = |f: &dyn Fn(&ScenarioOutput) -> f64| {
        let s: RunningStats = outputs.iter().map(f).collect();
        (s.mean(), s.t_ci95())
    };
    Aggregate {
        seeds: outputs.len(),
        mvgmp_channel_time: stat(&|o| o.summary.mvgmp_channel_time_ms),
        baseline_channel_time: stat(&|o| o.summary.baseline_channel_time_ms),
        mvgmp_alpha: stat(&|o| o.summary.mvgmp_mean_alpha),
        baseline_alpha: stat(&|o| o.summary.baseline_mean_alpha),
        ratio: stat(&|o| o.summary.channel_time_ratio),
    }
}

fn summary_rows(agg: &Aggregate) -> [[String; 8]; 2] {
    let row = |scheme: &str, ct: (f64, f64), alpha: (f64, f64)| {
        [
            scheme.to_string(),
            agg.seeds.to_string(),
            num(ct.0),
            num(ct.1),
            num(alpha.0),
            num(alpha.1),
            num(agg.ratio.0),
            num(agg.ratio.1),
        ]
    };
    [
        row("mvgmp", agg.mvgmp_channel_time, agg.mvgmp_alpha),
        row("baseline", agg.baseline_channel_time, agg.baseline_alpha),
    ]
}

fn seed_row(o: &ScenarioOutput) -> Vec<String> {
    let s = &o.summary;
    vec![
        s.seed.to_string(),
        s.frames.to_string(),
        num(s.mean_active_clients),
        num(s.mvgmp_channel_time_ms),
        num(s.baseline_channel_time_ms),
        num(s.channel_time_ratio),
        num(s.mvgmp_mean_alpha),
        num(s.baseline_mean_alpha),
        s.threshold_violations.to_string(),
        s.infeasible_frames.to_string(),
        s.frames_mvgmp_above_baseline.to_string(),
        s.observed_failures.to_string(),
        num(s.expected_failures),
        num(s.failure_z()),
        o.clients.iter().filter(|c| !c.consistent).count().to_string(),
    ]
}

/// `frames_seed<N>.csv` and `clients_seed<N>.csv` for one run.
pub fn write_seed_files(dir: &Path, hash: &str, output: &ScenarioOutput) -> Result<()> {
    let seed = output.summary.seed;
    let mut frames = CsvOut::create(&dir.join(format!("frames_seed{seed}.csv")), hash, &seed.to_string(), &FRAME_COLUMNS)?;
    for r in &output.records {
        frames.row([
            r.frame.to_string(),
            r.active_clients.to_string(),
            num(r.mvgmp_channel_time_ms),
            num(r.baseline_channel_time_ms),
            r.mvgmp_instances.to_string(),
            r.baseline_transmissions.to_string(),
            num(r.mean_failure),
            num(r.max_failure),
            r.threshold_violations.to_string(),
            r.infeasible_clients.to_string(),
            num(r.mvgmp_mean_alpha),
            num(r.baseline_mean_alpha),
            r.baseline_capped_views.to_string(),
            r.baseline_overflow_views.to_string(),
            r.table_version.to_string(),
        ])?;
    }
    frames.finish()?;
    let mut clients =
        CsvOut::create(&dir.join(format!("clients_seed{seed}.csv")), hash, &seed.to_string(), &CLIENT_COLUMNS)?;
    for c in &output.clients {
        clients.row([
            c.client.0.to_string(),
            c.desired.index().to_string(),
            num(c.threshold),
            num(c.distance),
            c.feasible.to_string(),
            c.subscriptions.to_string(),
            num(c.predicted_failure),
            num(c.simulated_failure),
            c.failures.to_string(),
            c.trials.to_string(),
            num(c.z_score),
            c.consistent.to_string(),
        ])?;
    }
    clients.finish()
}

fn write_seed_table(path: &Path, hash: &str, seeds: &[u64], outputs: &[ScenarioOutput]) -> Result<()> {
    let mut out = CsvOut::create(path, hash, &seed_label(seeds), &SEED_COLUMNS)?;
    for o in outputs {
        out.row(seed_row(o))?;
    }
    out.finish()
}

/// Per-seed files plus `seeds.csv` and the seed-averaged `summary.csv`.
pub fn simulate(config: &Config, seeds: &[u64], out: &Path, execution: Execution) -> Result<Aggregate> {
    create_dir(out)?;
    let hash = config.hash();
    let outputs = run_seeds(config, seeds, execution)?;
    for o in &outputs {
        write_seed_files(out, &hash, o)?;
    }
    write_seed_table(&out.join("seeds.csv"), &hash, seeds, &outputs)?;
    let agg = aggregate(&outputs);
    let mut summary = CsvOut::create(&out.join("summary.csv"), &hash, &seed_label(seeds), &SUMMARY_COLUMNS)?;
    for row in summary_rows(&agg) {
        summary.row(row)?;
    }
    summary.finish()?;
    Ok(agg)
}

/// Scenario keys may be given bare (`range`) or dotted (`scenario.range`).
pub fn sweep_key(param: &str) -> String {
    if param.contains('.') {
        param.to_string()
    } else {
        format!("scenario.{param}")
    }
}

/// Re-runs the base config once per value of one key. Per-value outputs go
/// to `<param>=<value>/`, the merged table to `sweep.csv`.
pub fn sweep(
    base: &Config,
    param: &str,
    values: &[String],
    seeds: &[u64],
    out: &Path,
    execution: Execution,
) -> Result<Vec<(String, Aggregate)>> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    if seeds.is_empty() {
        bail!("at least one seed is required");
    }
    create_dir(out)?;
    let key = sweep_key(param);
    let base_text = base.to_toml();
    let configs: Vec<Config> = values
        .iter()
        .map(|v| Config::parse(&base_text, &[format!("{key}={v}")]).with_context(|| format!("{key}={v}")))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<ScenarioOutput>> = execution.map_slice(&jobs, |&(i, seed)| {
        let scenario = mvgmp_core::simulator::ScenarioConfig { seed, ..configs[i].scenario.clone() };
        run_scenario_with(&scenario, Execution::Sequential).with_context(|| format!("{key}={} seed {seed}", values[i]))
    });
    let mut results = results.into_iter();

    let mut merged = CsvOut::create(
        &out.join("sweep.csv"),
        &base.hash(),
        &seed_label(seeds),
        &[&["param", "value"][..], &SUMMARY_COLUMNS[..]].concat(),
    )?;
    let mut aggregates = Vec::new();
    for (value, config) in values.iter().zip(&configs) {
        let outputs: Vec<ScenarioOutput> = results.by_ref().take(seeds.len()).collect::<Result<_>>()?;
        let dir = out.join(format!("{param}={value}"));
        create_dir(&dir)?;
        let hash = config.hash();
        for o in &outputs {
            write_seed_files(&dir, &hash, o)?;
        }
        write_seed_table(&dir.join("seeds.csv"), &hash, seeds, &outputs)?;
        let agg = aggregate(&outputs);
        for row in summary_rows(&agg) {
            merged.row([param.to_string(), value.clone()].into_iter().chain(row))?;
        }
        aggregates.push((value.clone(), agg));
    }
    merged.finish()?;
    Ok(aggregates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analyze_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let config = Config::parse(
            "[analysis]\nviews = 4\nranges = [1, 3]\nlosses = [0.1, 0.2]\nspacings = [1]\n",
            &[],
        )
        .unwrap();
        let paths = analyze(&config, dir.path()).unwrap();
        let uniform = std::fs::read_to_string(&paths[1]).unwrap();
        let lines: Vec<&str> = uniform.lines().collect();
        // comment, header, 2 x 2 rows
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[2], "0.1,1,0.9");
        let failure = std::fs::read_to_string(&paths[0]).unwrap();
        // boundary views fail with their own loss
        assert!(failure.lines().any(|l| l == "4,3,0.2,1,0.2"));
        assert!(failure.lines().any(|l| l == "4,3,0.2,4,0.2"));
    }

    #[test]
    fn sweep_rows_per_value_and_scheme() {
        let dir = tempfile::tempdir().unwrap();
        let config = Config::parse(
            "[scenario]\nframes = 5\npopulation = 6\nviews = 6\nvalidation_trials = 100\n",
            &[],
        )
        .unwrap();
        let values: Vec<String> = ["1", "2"].iter().map(|s| s.to_string()).collect();
        let aggs = sweep(&config, "range", &values, &[1, 2], dir.path(), Execution::default()).unwrap();
        assert_eq!(aggs.len(), 2);
        let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(text.lines().count(), 2 + 4);
        assert!(dir.path().join("range=2").join("frames_seed2.csv").exists());
    }
}
