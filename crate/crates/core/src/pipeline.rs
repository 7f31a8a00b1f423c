//! Experiment orchestration: configuration, the `run` pipeline and the
//! `report` summaries.
//!
//! A run explores the oracle once per beta, certifies the performance lower
//! bound, evaluates the INN and the conformal baseline on common test draws
//! and writes every artifact under the output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conformal::{cp_coverage_eval, fit_icp, FamilySampler};
use crate::domain::InputBox;
use crate::envs::{self, PerformanceOracle};
use crate::error::{Error, Result};
use crate::explore::{active_learn, ExploreConfig, ExploreOutcome};
use crate::guarantee::{
    build_family, coverage_eval, performance_lower_bound, CoverageStats, GuaranteeReport, SampleMode,
    WeightScheme,
};
use crate::inn::{InputNormalizer, TrainConfig};
use crate::net::NetworkSpec;
use crate::par;
use crate::rng::{derive_seed, substream, tag};

pub const SEED_ENV: &str = "ROBUST_VERIFY_SEED";
pub const COVERAGE_HEADER: [&str; 9] = [
    "env",
    "beta",
    "lambda",
    "mode",
    "method",
    "coverage",
    "lower_bound_coverage",
    "mean_width",
    "median_width",
];
pub const BETA_PRESET: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn default_lambda() -> f64 {
    20.0
}

fn default_betas() -> Vec<f64> {
    BETA_PRESET.to_vec()
}

fn default_alpha() -> f64 {
    0.05
}

fn default_cal_fraction() -> f64 {
    0.5
}

fn default_n_test() -> usize {
    5000
}

fn default_modes() -> Vec<SampleMode> {
    vec![SampleMode::Mixture, SampleMode::AmbientUniform]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Overrides the oracle's default noise level.
    #[serde(default)]
    pub noise_scale: Option<f64>,
    #[serde(default)]
    pub explore: ExploreConfig,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_alpha")]
    pub alpha_cp: f64,
    #[serde(default = "default_cal_fraction")]
    pub cal_fraction: f64,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<SampleMode>,
    /// Training of the conformal point regressor.
    #[serde(default)]
    pub icp_train: TrainConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(env: impl Into<String>) -> Self {
        Self::from_json(format!("{{\"env\": {:?}}}", env.into()).as_bytes()).expect("minimal config")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_slice(bytes).map_err(|e| Error::from_json(bytes, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |field: &str, message: String| Error::Config {
            field: field.to_owned(),
            message,
        };
        if envs::lookup(&self.env, None).is_none() {
            return Err(field(
                "env",
                format!("unknown environment `{}`; known: {}", self.env, envs::names().join(", ")),
            ));
        }
        if self.noise_scale.is_some_and(|n| !(n >= 0.0)) {
            return Err(field("noise_scale", "must be >= 0".into()));
        }
        if self.betas.is_empty() || self.betas.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(field("betas", "must be a non-empty list of positive numbers".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(field("lambda", "must be positive".into()));
        }
        for (name, v) in [("alpha", self.alpha), ("alpha_cp", self.alpha_cp), ("cal_fraction", self.cal_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(field(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if self.n_test == 0 {
            return Err(field("n_test", "must be >= 1".into()));
        }
        if self.modes.is_empty() {
            return Err(field("modes", "must not be empty".into()));
        }
        self.explore
            .validate()
            .map_err(|e| field("explore", e.to_string()))?;
        self.icp_train
            .validate()
            .map_err(|e| field("icp_train", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedProvenance {
    pub config: u64,
    pub env_override: Option<u64>,
    pub effective: u64,
}

impl SeedProvenance {
    pub fn resolve(config: u64, env_value: Option<&str>) -> Result<Self> {
        let env_override = env_value
            .map(|v| {
                v.trim().parse::<u64>().map_err(|e| Error::Config {
                    field: SEED_ENV.to_owned(),
                    message: format!("`{v}` is not an unsigned integer: {e}"),
                })
            })
            .transpose()?;
        Ok(Self {
            config,
            env_override,
            effective: env_override.unwrap_or(config),
        })
    }
}

/// Read and validate a config file, applying the seed override from the
/// environment.
pub fn load_config(path: &Path) -> Result<(RunConfig, SeedProvenance)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = RunConfig::from_json(&bytes)?;
    let seed = SeedProvenance::resolve(cfg.seed, std::env::var(SEED_ENV).ok().as_deref())?;
    cfg.seed = seed.effective;
    Ok((cfg, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub beta: Option<f64>,
    pub ok: bool,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRun {
    pub beta: f64,
    pub dir: String,
    pub artifacts: Vec<String>,
    pub epsilon: f64,
    pub phi_l: f64,
    pub all_certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub complete: bool,
    pub workers: usize,
    pub seed: SeedProvenance,
    pub config: RunConfig,
    pub coverage_csv: String,
    pub runs: Vec<BetaRun>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    /// Every artifact path listed, relative to the run directory.
    pub fn artifact_paths(&self) -> Vec<String> {
        let mut paths = vec![self.coverage_csv.clone()];
        for run in &self.runs {
            paths.extend(run.artifacts.iter().map(|a| format!("{}/{a}", run.dir)));
        }
        paths
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COVERAGE_FILE: &str = "coverage.csv";

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, bytes)
}

/// Text form of a float in the artifacts: shortest round-trip digits.
fn num(v: f64) -> String {
    format!("{v}")
}

pub fn coverage_row(env: &str, beta: f64, lambda: f64, stats: &CoverageStats) -> Vec<String> {
    vec![
        env.to_owned(),
        num(beta),
        num(lambda),
        stats.mode.label().to_owned(),
        stats.method.clone(),
        num(stats.coverage),
        num(stats.lower_bound_coverage),
        num(stats.mean_width),
        num(stats.median_width),
    ]
}

fn dataset_csv(outcome: &ExploreOutcome) -> Result<Vec<u8>> {
    let dim = outcome.dataset.first().map_or(0, |s| s.x.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for s in &outcome.dataset {
        w.write_record(s.x.iter().chain([&s.y]).map(|v| num(*v)))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

fn trace_jsonl(outcome: &ExploreOutcome) -> Result<String> {
    let mut out = String::new();
    for rec in &outcome.trace {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

struct Recorder {
    stages: Vec<StageRecord>,
}

impl Recorder {
    fn stage<T>(&mut self, stage: &str, beta: Option<f64>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let result = f();
        self.stages.push(StageRecord {
            stage: stage.to_owned(),
            beta,
            ok: result.is_ok(),
            seconds: start.elapsed().as_secs_f64(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result.map_err(|e| Error::Stage {
            stage: stage.to_owned(),
            source: Box::new(e),
        })
    }
}

struct BetaContext<'a> {
    cfg: &'a RunConfig,
    oracle: &'a dyn PerformanceOracle,
    out: &'a Path,
    index: usize,
    beta: f64,
}

impl BetaContext<'_> {
    fn run(&self, rec: &mut Recorder, rows: &mut Vec<Vec<String>>) -> Result<BetaRun> {
        let (cfg, beta) = (self.cfg, self.beta);
        let dir_name = format!("beta_{}", num(beta));
        let dir = self.out.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let x0: &InputBox = self.oracle.input_box();

        let explore_cfg = ExploreConfig {
            seed: cfg.seed,
            ..cfg.explore.clone().with_beta(beta)
        };
        let outcome = rec.stage("explore", Some(beta), || active_learn(self.oracle, &explore_cfg))?;

        let report: GuaranteeReport = rec.stage("guarantee", Some(beta), || {
            performance_lower_bound(&outcome.inn, &outcome.region, cfg.lambda, beta, &explore_cfg.bnb)
        })?;

        let family = build_family(&outcome.region, cfg.weights, cfg.alpha, x0)?;
        let icp_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &[tag::REGRESSOR, self.index as u64]),
            ..cfg.icp_train.clone()
        };
        let predictor = rec.stage("icp", Some(beta), || {
            let spec = NetworkSpec::new(x0.dim(), cfg.explore.hidden_widths.clone())?;
            let normalizer = cfg.explore.normalize_inputs.then(|| InputNormalizer::for_box(x0));
            fit_icp(&spec, normalizer, &outcome.dataset, cfg.cal_fraction, cfg.alpha_cp, &icp_cfg)
        })?;

        let stats = rec.stage("evaluate", Some(beta), || {
            let mut stats = Vec::new();
            for (m, mode) in cfg.modes.iter().enumerate() {
                let path = [tag::EVAL, self.index as u64, m as u64];
                stats.push(coverage_eval(
                    &outcome.inn,
                    self.oracle,
                    &family,
                    cfg.lambda,
                    beta,
                    report.epsilon,
                    cfg.n_test,
                    &mut substream(cfg.seed, &path),
                    *mode,
                )?);
                // same stream, so ICP sees the same test pairs as the INN
                let sampler = FamilySampler { family: &family, mode: *mode };
                stats.push(cp_coverage_eval(
                    &predictor,
                    self.oracle,
                    &sampler,
                    cfg.n_test,
                    &mut substream(cfg.seed, &path),
                )?);
            }
            Ok(stats)
        })?;
        rows.extend(stats.iter().map(|s| coverage_row(&cfg.env, beta, cfg.lambda, s)));

        let artifacts = rec.stage("write", Some(beta), || {
            let files: Vec<(&str, Vec<u8>)> = vec![
                ("inn.json", outcome.inn.serialize()),
                ("region.json", serde_json::to_vec_pretty(&outcome.region)?),
                ("dataset.csv", dataset_csv(&outcome)?),
                ("initial_losses.json", serde_json::to_vec(&outcome.initial_losses)?),
                ("trace.jsonl", trace_jsonl(&outcome)?.into_bytes()),
                ("guarantee.json", serde_json::to_vec_pretty(&report)?),
                ("family.json", serde_json::to_vec_pretty(&family)?),
                ("icp.json", serde_json::to_vec_pretty(&predictor)?),
                ("coverage.json", serde_json::to_vec_pretty(&stats)?),
            ];
            for (name, bytes) in &files {
                write_file(&dir.join(name), bytes)?;
            }
            Ok(files.into_iter().map(|(n, _)| n.to_owned()).collect())
        })?;

        Ok(BetaRun {
            beta,
            dir: dir_name,
            artifacts,
            epsilon: report.epsilon,
            phi_l: report.phi_l,
            all_certified: report.all_certified,
        })
    }
}

/// Execute the full pipeline for every beta. On failure the manifest is
/// still written, with the failing stage recorded.
pub fn run(cfg: &RunConfig, seed: SeedProvenance, out: &Path, workers: usize) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let oracle = envs::lookup(&cfg.env, cfg.noise_scale).expect("validated env");
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        complete: false,
        workers,
        seed,
        config: cfg.clone(),
        coverage_csv: COVERAGE_FILE.to_owned(),
        runs: Vec::new(),
        stages: Vec::new(),
    };
    let mut rec = Recorder { stages: Vec::new() };
    let mut rows = Vec::new();
    let result = par::with_workers(workers, || {
        let mut runs = Vec::new();
        for (index, &beta) in cfg.betas.iter().enumerate() {
            let ctx = BetaContext {
                cfg,
                oracle: oracle.as_ref(),
                out,
                index,
                beta,
            };
            runs.push(ctx.run(&mut rec, &mut rows)?);
        }
        Ok(runs)
    });
    let result = result.and_then(|runs| {
        manifest.runs = runs;
        rec.stage("coverage_csv", None, || {
            let mut w = csv::Writer::from_path(out.join(COVERAGE_FILE))?;
            w.write_record(COVERAGE_HEADER)?;
            for row in &rows {
                w.write_record(row)?;
            }
            w.flush().map_err(|e| Error::io(out.join(COVERAGE_FILE), e))
        })
    });
    manifest.complete = result.is_ok();
    manifest.stages = rec.stages;
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    result.map(|()| manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutput {
    pub csv_path: PathBuf,
    pub table: String,
    pub svg_path: Option<PathBuf>,
}

pub const REPORT_FILE: &str = "report.csv";
const REPORT_EXTRA: [&str; 3] = ["epsilon", "phi_l", "all_certified"];

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    let path = run_dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::from_json(&bytes, &e))
}

/// Consolidated table of a finished run: `report.csv`, a text table and,
/// when `svg` is given, a plot of the per-iteration traces.
pub fn report(run_dir: &Path, svg: Option<&Path>) -> Result<ReportOutput> {
    let manifest = read_manifest(run_dir)?;
    if !manifest.complete {
        let failed: Vec<String> = manifest
            .stages
            .iter()
            .filter(|s| !s.ok)
            .map(|s| format!("{} ({})", s.stage, s.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(Error::invalid(format!("run is incomplete; failed stages: {}", failed.join(", "))));
    }
    let missing: Vec<String> = manifest
        .artifact_paths()
        .into_iter()
        .filter(|p| !run_dir.join(p).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }

    let mut reader = csv::Reader::from_path(run_dir.join(&manifest.coverage_csv))?;
    let header = reader.headers()?.clone();
    if header.iter().ne(COVERAGE_HEADER) {
        return Err(Error::invalid(format!("unexpected coverage header: {header:?}")));
    }
    let mut table: Vec<Vec<String>> = vec![COVERAGE_HEADER
        .iter()
        .chain(&REPORT_EXTRA)
        .map(|s| s.to_string())
        .collect()];
    for row in reader.records() {
        let row = row?;
        let beta = &row[1];
        let run = manifest
            .runs
            .iter()
            .find(|r| num(r.beta) == beta)
            .ok_or_else(|| Error::invalid(format!("coverage row for unknown beta {beta}")))?;
        let mut cells: Vec<String> = row.iter().map(str::to_owned).collect();
        cells.extend([num(run.epsilon), num(run.phi_l), run.all_certified.to_string()]);
        table.push(cells);
    }

    let csv_path = run_dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &table {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let svg_path = match svg {
        Some(path) => {
            let traces = manifest
                .runs
                .iter()
                .map(|r| read_trace(&run_dir.join(&r.dir).join("trace.jsonl")).map(|t| (r.beta, t)))
                .collect::<Result<Vec<_>>>()?;
            write_file(path, trace_svg(&traces))?;
            Some(path.to_path_buf())
        }
        None => None,
    };
    Ok(ReportOutput {
        csv_path,
        table: text_table(&table),
        svg_path,
    })
}

fn read_trace(path: &Path) -> Result<Vec<crate::explore::IterationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::from_json(l.as_bytes(), &e)))
        .collect()
}

/// Left-aligned columns separated by two spaces.
pub fn text_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Two panels: the final training loss of every iteration (log10 scale)
/// and the certified maximal uncertainty `u_hi`, one line per beta.
pub fn trace_svg(traces: &[(f64, Vec<crate::explore::IterationRecord>)]) -> String {
    let (w, h, pad) = (360.0, 240.0, 40.0);
    let panels: [(&str, fn(&crate::explore::IterationRecord) -> Option<f64>); 2] = [
        ("log10 final epoch loss", |r| {
            r.epoch_losses.last().filter(|v| **v > 0.0).map(|v| v.log10())
        }),
        ("certified max uncertainty", |r| Some(r.u_hi).filter(|v| v.is_finite())),
    ];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        2.0 * w,
        h + 30.0
    );
    for (p, (title, value)) in panels.iter().enumerate() {
        let x_off = p as f64 * w;
        let series: Vec<Vec<(f64, f64)>> = traces
            .iter()
            .map(|(_, recs)| {
                recs.iter()
                    .filter_map(|r| value(r).map(|v| (r.iteration as f64, v)))
                    .collect()
            })
            .collect();
        let all = series.iter().flatten();
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in all {
            x_min = x_min.min(*x);
            x_max = x_max.max(*x);
            y_min = y_min.min(*y);
            y_max = y_max.max(*y);
        }
        if x_min > x_max {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_max - x_min < 1e-12 {
            x_max = x_min + 1.0;
        }
        if y_max - y_min < 1e-12 {
            y_max = y_min + 1.0;
        }
        let sx = |x: f64| x_off + pad + (x - x_min) / (x_max - x_min) * (w - 2.0 * pad);
        let sy = |y: f64| h - pad + 20.0 - (y - y_min) / (y_max - y_min) * (h - 2.0 * pad);
        let _ = writeln!(svg, r#"  <text x="{}" y="16">{}</text>"#, x_off + pad, escape_xml(title));
        let _ = writeln!(
            svg,
            r##"  <rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
            x_off + pad,
            pad - 20.0,
            w - 2.0 * pad,
            h - 2.0 * pad + 40.0
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}">{:.3}</text><text x="{}" y="{}">{:.3}</text>"#,
            x_off + 2.0,
            sy(y_max),
            y_max,
            x_off + 2.0,
            sy(y_min),
            y_min
        );
        for (s, pts) in series.iter().enumerate() {
            if pts.is_empty() {
                continue;
            }
            let color = COLORS[s % COLORS.len()];
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                svg,
                r#"  <polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
            if p == 0 {
                let _ = writeln!(
                    svg,
                    r#"  <text x="{}" y="{}" fill="{color}">beta = {}</text>"#,
                    pad + 8.0 + 100.0 * s as f64,
                    h + 20.0,
                    escape_xml(&num(traces[s].0))
                );
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Simulate a dynamical environment from `x0` and return the trajectory as
/// CSV.
pub fn trajectory_csv(env: &str, x0: &[f64], noise_scale: Option<f64>, seed: u64) -> Result<String> {
    let mut rng = substream(seed, &[]);
    let (_, traj) = match env {
        "water_tanks" => {
            let mut cfg = envs::WaterTanks::default_env();
            if let Some(n) = noise_scale {
                cfg.noise_scale = n;
            }
            envs::water_tanks(x0, &cfg, &mut rng)?
        }
        "pendulum" => {
            let mut cfg = envs::Pendulum::default_env();
            if let Some(n) = noise_scale {
                cfg.noise_scale = n;
            }
            envs::pendulum(x0, &cfg, &mut rng)?
        }
        other => {
            return Err(Error::invalid(format!(
                "`{other}` has no trajectory; choose water_tanks or pendulum"
            )))
        }
    };
    Ok(traj.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_env_names_the_field() {
        let err = RunConfig::from_json(b"{\n  \"lambda\": 20\n}").unwrap_err();
        assert!(err.to_string().contains("env"), "{err}");
        let err = RunConfig::from_json(br#"{"env": "nope"}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "env"));
        let err = RunConfig::from_json(br#"{"env": "hat1d", "colour": 1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::new("water_tanks");
        assert_eq!(cfg.lambda, 20.0);
        assert_eq!(cfg.betas, BETA_PRESET);
        assert_eq!(cfg.modes, default_modes());
        assert_eq!(cfg.weights, WeightScheme::Uniform);
    }

    #[test]
    fn seed_override() {
        let s = SeedProvenance::resolve(3, Some("17")).unwrap();
        assert_eq!((s.effective, s.env_override), (17, Some(17)));
        assert_eq!(SeedProvenance::resolve(3, None).unwrap().effective, 3);
        assert!(SeedProvenance::resolve(3, Some("x")).is_err());
    }

    #[test]
    fn table_alignment() {
        let rows = vec![
            vec!["a".to_owned(), "bb".to_owned()],
            vec!["ccc".to_owned(), "d".to_owned()],
        ];
        assert_eq!(text_table(&rows), "a    bb\nccc  d\n");
    }
}
