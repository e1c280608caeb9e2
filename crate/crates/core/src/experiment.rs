//! Named experiment presets and their artifacts.
//!
//! A preset is a scenario document plus a `sweep` table. Both are plain TOML,
//! so `--set` style overrides address them with the same dotted paths:
//!
//! ```toml
//! frequency_ghz = 100.0
//! num_elements = 64
//! users = [[0.36, 0.07]]
//!
//! [sweep]
//! variable = "power_db"
//! values = [-10.0, 0.0, 10.0]
//! trials = 1
//! schemes = ["digital", "airy", "focused"]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{apply_override, scenario_from_table, GridEntry, ObstacleEntry, Scenario, ScenarioFile};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_pipeline, mrt_codeword, perfect_csi_digital, perfect_csi_hybrid, Outcome, PipelineConfig, RateReport,
    Scheme,
};
use crate::hybrid::CVector;
use crate::propagation::{ChannelMatrix, ChannelMethod, GainMap, Propagator};
use crate::scene::{PropagationGrid, Scene};
use crate::training::{
    exhaustive_search, hierarchical_search, training_overhead, Realization, TrainingConfig, TrainingMode,
};
use crate::wavefront::{build_codebook, Codebook, CodebookKind, CodebookSampling, CodebookSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const FULL_ELEMENTS: usize = 266;
pub const DESK_ELEMENTS: usize = 64;
/// Receiver noise power used by every preset unless overridden.
pub const DEFAULT_NOISE_POWER: f64 = 1e-4;
/// Reference element count at 100 GHz for the desk frequency sweep, chosen so
/// that the array at 150 GHz still fits the desk cap.
pub const DESK_FREQ_ELEMENTS: usize = 42;
/// Longest side of an exported field map, in samples.
pub const MAP_MAX_SAMPLES: usize = 400;

/// Geometry scale of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// 266 elements at 100 GHz with the original room-sized geometry.
    Paper,
    /// 64 elements with every length shrunk by 64/266.
    Desk,
}

impl Scale {
    pub fn label(self) -> &'static str {
        match self {
            Scale::Paper => "paper",
            Scale::Desk => "desk",
        }
    }

    pub fn num_elements(self) -> usize {
        match self {
            Scale::Paper => FULL_ELEMENTS,
            Scale::Desk => DESK_ELEMENTS,
        }
    }

    /// Length factor applied to room-scale coordinates.
    pub fn factor(self) -> f64 {
        self.num_elements() as f64 / FULL_ELEMENTS as f64
    }
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            _ => Err(Error::InvalidArgument(format!("unknown scale `{s}` (expected desk or paper)"))),
        }
    }
}

/// Precoding or beam-selection scheme evaluated by a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeId {
    /// Single-user maximum ratio transmission.
    Mrt,
    /// Fully digital zero forcing with perfect CSI.
    Digital,
    /// Alternating-minimization hybrid with perfect CSI.
    Hybrid,
    /// Hierarchical Airy training.
    Airy,
    /// Exhaustive Airy training.
    AiryExhaustive,
    /// Exhaustive polar-codebook training.
    Focused,
    /// Exhaustive DFT-codebook training.
    Steered,
}

impl SchemeId {
    pub fn label(self) -> &'static str {
        match self {
            SchemeId::Mrt => "mrt",
            SchemeId::Digital => "digital",
            SchemeId::Hybrid => "hybrid",
            SchemeId::Airy => "airy",
            SchemeId::AiryExhaustive => "airy-exhaustive",
            SchemeId::Focused => "focused",
            SchemeId::Steered => "steered",
        }
    }

    fn pipeline(self) -> Option<Scheme> {
        match self {
            SchemeId::Airy => Some(Scheme::Airy),
            SchemeId::AiryExhaustive => Some(Scheme::AiryExhaustive),
            SchemeId::Focused => Some(Scheme::Focused),
            SchemeId::Steered => Some(Scheme::Steered),
            _ => None,
        }
    }
}

const MULTI_USER: &[SchemeId] = &[
    SchemeId::Digital,
    SchemeId::Hybrid,
    SchemeId::Airy,
    SchemeId::AiryExhaustive,
    SchemeId::Focused,
    SchemeId::Steered,
];
const SINGLE_USER: &[SchemeId] = &[
    SchemeId::Mrt,
    SchemeId::Airy,
    SchemeId::AiryExhaustive,
    SchemeId::Focused,
    SchemeId::Steered,
];

/// The swept quantity of a preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: String,
    pub values: Vec<f64>,
    #[serde(default = "one")]
    pub trials: usize,
    pub schemes: Vec<SchemeId>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Pattern,
    BlockageSweep,
    TrainingCompare,
    RateVsPower,
    UsersSweep,
    FreqSweep,
    ObstacleLengthSweep,
}

struct PresetInfo {
    name: &'static str,
    kind: Kind,
    variable: &'static str,
    summary: &'static str,
}

const PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "pattern",
        kind: Kind::Pattern,
        variable: "map_x_max_m",
        summary: "field maps of the best MRT, Airy, focused and steered beams behind an obstacle",
    },
    PresetInfo {
        name: "blockage-sweep",
        kind: Kind::BlockageSweep,
        variable: "obstacle_top_m",
        summary: "received power, normalized to unobstructed MRT, versus blockage ratio",
    },
    PresetInfo {
        name: "training-compare",
        kind: Kind::TrainingCompare,
        variable: "grid_points",
        summary: "hierarchical versus exhaustive Airy training gain gap over a grid of user positions",
    },
    PresetInfo {
        name: "rate-vs-power",
        kind: Kind::RateVsPower,
        variable: "power_db",
        summary: "sum rate versus transmit power (dB relative to `power`) for the 4-user obstacle scene",
    },
    PresetInfo {
        name: "users-sweep",
        kind: Kind::UsersSweep,
        variable: "num_users",
        summary: "sum rate versus number of randomly placed users",
    },
    PresetInfo {
        name: "freq-sweep",
        kind: Kind::FreqSweep,
        variable: "frequency_ghz",
        summary: "sum rate versus carrier frequency with a fixed physical aperture",
    },
    PresetInfo {
        name: "obstacle-length-sweep",
        kind: Kind::ObstacleLengthSweep,
        variable: "obstacle_length_m",
        summary: "sum rate versus obstacle length for randomly placed users",
    },
];

/// Names and one-line descriptions of the built-in presets.
pub fn preset_names() -> Vec<(&'static str, &'static str)> {
    PRESETS.iter().map(|p| (p.name, p.summary)).collect()
}

fn info(name: &str) -> Result<&'static PresetInfo> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        Error::InvalidArgument(format!("unknown preset `{name}` (known: {})", known.join(", ")))
    })
}

/// Room-scale coordinates of the 4-user obstacle scene.
const BASE_USERS: [[f64; 2]; 4] = [[1.5, 0.3], [2.0, -0.35], [1.2, -0.25], [2.5, 0.15]];
const BASE_OBSTACLE: ([f64; 2], [f64; 2]) = ([0.8, 1.0], [-0.15, 0.15]);
/// Room-scale regions for random and gridded users: `[x_lo, x_hi], [y_lo, y_hi]`.
const RANDOM_REGION: ([f64; 2], [f64; 2]) = ([1.0, 4.0], [-0.6, 0.6]);
const LENGTH_SWEEP_REGION: ([f64; 2], [f64; 2]) = ([1.0, 5.0], [-1.0, 1.0]);
const TRAINING_REGION: ([f64; 2], [f64; 2]) = ([1.2, 3.0], [-0.45, 0.45]);
const RANDOM_USERS: usize = 4;

/// A fully specified experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPreset {
    pub name: String,
    pub scale: Scale,
    pub scenario: ScenarioFile,
    pub sweep: Sweep,
}

fn scaled(v: [f64; 2], f: f64) -> [f64; 2] {
    [v[0] * f, v[1] * f]
}

fn obstacle(x: [f64; 2], y: [f64; 2], f: f64) -> ObstacleEntry {
    ObstacleEntry {
        x: scaled(x, f),
        y: scaled(y, f),
    }
}

fn base_scenario(num_elements: usize, f: f64) -> ScenarioFile {
    ScenarioFile {
        frequency_ghz: 100.0,
        num_elements,
        spacing_m: None,
        obstacles: vec![obstacle(BASE_OBSTACLE.0, BASE_OBSTACLE.1, f)],
        users: BASE_USERS.iter().map(|u| scaled(*u, f)).collect(),
        grid: None,
        power: 1.0,
        noise_power: Some(DEFAULT_NOISE_POWER),
        seed: Some(0),
        num_rf: None,
        codebook: Some(CodebookSampling::full_scale().scaled(f)),
    }
}

fn range(lo: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + step * i as f64).collect()
}

impl ExperimentPreset {
    /// Built-in definition of `name` at `scale`.
    pub fn builtin(name: &str, scale: Scale) -> Result<Self> {
        let info = info(name)?;
        let f = scale.factor();
        let n = scale.num_elements();
        let mut scenario = base_scenario(n, f);
        let rates = vec![
            SchemeId::Digital,
            SchemeId::Hybrid,
            SchemeId::Airy,
            SchemeId::Focused,
            SchemeId::Steered,
        ];
        let (values, trials, schemes) = match info.kind {
            Kind::Pattern => {
                scenario.obstacles = vec![obstacle([0.9, 1.1], [-0.4, 0.15], f)];
                scenario.users = vec![scaled([1.2, 0.19], f)];
                (vec![1.5 * f], 1, SINGLE_USER.to_vec())
            }
            Kind::BlockageSweep => {
                scenario.obstacles = vec![obstacle([0.8, 1.0], [-0.6, 0.0], f)];
                scenario.users = vec![scaled([1.5, 0.0], f)];
                let tops = range(-0.12, 0.02, 13).into_iter().map(|t| t * f).collect();
                (tops, 1, SINGLE_USER.to_vec())
            }
            Kind::TrainingCompare => {
                scenario.users = vec![];
                (vec![10.0], 1, vec![SchemeId::Airy, SchemeId::AiryExhaustive])
            }
            Kind::RateVsPower => (range(-10.0, 5.0, 7), 1, rates),
            Kind::UsersSweep => {
                scenario.users = vec![];
                let trials = if scale == Scale::Desk { 10 } else { 3 };
                (range(1.0, 1.0, 8), trials, rates)
            }
            Kind::FreqSweep => {
                if scale == Scale::Desk {
                    let g = DESK_FREQ_ELEMENTS as f64 / FULL_ELEMENTS as f64;
                    scenario = base_scenario(DESK_FREQ_ELEMENTS, g);
                }
                (range(90.0, 10.0, 7), 1, rates)
            }
            Kind::ObstacleLengthSweep => {
                scenario.users = vec![];
                let trials = if scale == Scale::Desk { 10 } else { 3 };
                let lengths = range(0.0, 0.1, 7).into_iter().map(|l| l * f).collect();
                (lengths, trials, rates)
            }
        };
        let preset = Self {
            name: info.name.to_string(),
            scale,
            scenario,
            sweep: Sweep {
                variable: info.variable.to_string(),
                values,
                trials,
                schemes,
            },
        };
        preset.validate()?;
        Ok(preset)
    }

    fn info(&self) -> &'static PresetInfo {
        info(&self.name).expect("presets are constructed from known names")
    }

    /// Scenario fields and the `sweep` table as one TOML table.
    pub fn to_table(&self) -> toml::Table {
        let mut table = toml::Table::try_from(&self.scenario).expect("scenario documents always serialize");
        let sweep = toml::Table::try_from(&self.sweep).expect("sweep tables always serialize");
        table.insert("sweep".into(), toml::Value::Table(sweep));
        table
    }

    pub fn from_table(name: &str, scale: Scale, mut table: toml::Table) -> Result<Self> {
        let sweep = table
            .remove("sweep")
            .ok_or_else(|| Error::config("sweep", "missing sweep table"))?
            .try_into::<Sweep>()
            .map_err(|e| Error::config("sweep", e.to_string()))?;
        let scenario = scenario_from_table(table)?;
        let preset = Self {
            name: info(name)?.name.to_string(),
            scale,
            scenario,
            sweep,
        };
        preset.validate()?;
        Ok(preset)
    }

    /// Apply `path=value` overrides in order.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = self.to_table();
        for o in overrides {
            apply_override(&mut table, o.as_ref())?;
        }
        Self::from_table(&self.name, self.scale, table)
    }

    /// Seeds are stored in TOML, so they must fit a signed 64-bit integer.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        if i64::try_from(seed).is_err() {
            return Err(Error::config("seed", format!("must be at most {}, got {seed}", i64::MAX)));
        }
        let mut p = self.clone();
        p.scenario.seed = Some(seed);
        Ok(p)
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed.unwrap_or(0)
    }

    /// Resolved preset document.
    pub fn document(&self) -> String {
        toml::to_string(&self.to_table()).expect("preset documents always serialize")
    }

    /// Hex SHA-256 over everything that affects the outputs.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "preset": self.name,
            "scale": self.scale,
            "version": VERSION,
            "document": self.document(),
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    fn sampling(&self) -> CodebookSampling {
        self.scenario
            .codebook
            .clone()
            .unwrap_or_else(|| CodebookSampling::full_scale().scaled(self.scale.factor()))
    }

    fn resolved(&self) -> Result<Scenario> {
        self.scenario.clone().into_scenario()
    }

    pub fn validate(&self) -> Result<()> {
        let info = info(&self.name)?;
        let sw = &self.sweep;
        if sw.variable != info.variable {
            return Err(Error::config(
                "sweep.variable",
                format!("preset `{}` sweeps `{}`", self.name, info.variable),
            ));
        }
        if sw.values.is_empty() {
            return Err(Error::config("sweep.values", "must be nonempty"));
        }
        if sw.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep.values", "must be finite"));
        }
        if sw.trials == 0 {
            return Err(Error::config("sweep.trials", "must be at least 1"));
        }
        if sw.schemes.is_empty() {
            return Err(Error::config("sweep.schemes", "must be nonempty"));
        }
        let allowed = match info.kind {
            Kind::Pattern | Kind::BlockageSweep => SINGLE_USER,
            Kind::TrainingCompare => &[SchemeId::Airy, SchemeId::AiryExhaustive][..],
            _ => MULTI_USER,
        };
        if let Some(bad) = sw.schemes.iter().find(|s| !allowed.contains(s)) {
            return Err(Error::config(
                "sweep.schemes",
                format!("`{}` is not available in preset `{}`", bad.label(), self.name),
            ));
        }
        let counts = |check: &dyn Fn(f64) -> bool, msg: &str| -> Result<()> {
            if sw.values.iter().all(|&v| check(v)) {
                Ok(())
            } else {
                Err(Error::config("sweep.values", msg))
            }
        };
        let integer = |v: f64| v >= 1.0 && v.fract() == 0.0;
        match info.kind {
            Kind::Pattern => {
                if sw.values.len() != 1 {
                    return Err(Error::config("sweep.values", "pattern takes exactly one map extent"));
                }
                counts(&|v| v > 0.0, "map extent must be positive")?;
            }
            Kind::TrainingCompare => counts(&integer, "grid sizes must be positive integers")?,
            Kind::UsersSweep => counts(&integer, "user counts must be positive integers")?,
            Kind::FreqSweep => counts(&|v| v > 0.0, "frequencies must be positive")?,
            Kind::ObstacleLengthSweep => counts(&|v| v >= 0.0, "lengths must be nonnegative")?,
            Kind::BlockageSweep => {
                if self.scenario.obstacles.is_empty() {
                    return Err(Error::config("obstacles", "blockage-sweep needs an obstacle to move"));
                }
                let bottom = self.scenario.obstacles[0].y[0];
                counts(&|v| v > bottom, "top edge must lie above obstacles[0].y[0]")?;
            }
            Kind::RateVsPower => {}
        }
        match info.kind {
            Kind::Pattern | Kind::BlockageSweep | Kind::RateVsPower | Kind::FreqSweep
                if self.scenario.users.is_empty() => {
                    return Err(Error::config("users", format!("preset `{}` needs at least one user", self.name)));
                }
            _ => {}
        }
        if let Some(n_rf) = self.scenario.num_rf {
            let k_max = match info.kind {
                Kind::UsersSweep => sw.values.iter().fold(0.0, |a: f64, &b| a.max(b)) as usize,
                Kind::ObstacleLengthSweep => RANDOM_USERS,
                _ => self.scenario.users.len(),
            };
            if n_rf < k_max {
                return Err(Error::config("num_rf", format!("need at least {k_max} RF chains")));
            }
        }
        if self.scale == Scale::Desk {
            let n_max = match info.kind {
                Kind::FreqSweep => sw
                    .values
                    .iter()
                    .map(|&f| freq_elements(self.scenario.num_elements, self.scenario.frequency_ghz, f))
                    .max()
                    .unwrap_or(0),
                _ => self.scenario.num_elements,
            };
            if n_max > DESK_ELEMENTS {
                return Err(Error::config(
                    "num_elements",
                    format!("desk scale allows at most {DESK_ELEMENTS} elements, preset needs {n_max}"),
                ));
            }
        }
        self.sampling().validate()?;
        let sc = self.resolved()?;
        if sc.noise_power.is_none() {
            return Err(Error::config("noise_power", "presets need an explicit noise power"));
        }
        Ok(())
    }
}

/// Element count at `f` GHz that keeps the aperture of `n_ref` half-wavelength
/// elements at `f_ref` GHz.
pub fn freq_elements(n_ref: usize, f_ref: f64, f: f64) -> usize {
    ((n_ref as f64 * f / f_ref).round() as usize).max(1)
}

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Headline numbers, also copied into the manifest.
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl RunOutput {
    pub fn artifact(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.contents.as_str())
    }
}

/// Run a preset. Outputs depend only on the preset.
///
/// Zero forcing falls back to a ridge-regularized solve when the effective
/// channel is ill conditioned (two users trained onto the same beam); the
/// number of such runs is reported as `ridge_runs`.
pub fn run(preset: &ExperimentPreset) -> Result<RunOutput> {
    preset.validate()?;
    let out = match preset.info().kind {
        Kind::Pattern => run_pattern(preset),
        Kind::BlockageSweep => run_blockage(preset),
        Kind::TrainingCompare => run_training_compare(preset),
        Kind::RateVsPower => run_rate_vs_power(preset),
        Kind::UsersSweep | Kind::ObstacleLengthSweep => run_random(preset),
        Kind::FreqSweep => run_freq(preset),
    };
    out.map_err(|e| e.context(format!("preset `{}`", preset.name)))
}

fn num(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn to_db(p: f64) -> f64 {
    if p > 0.0 {
        10.0 * p.log10()
    } else {
        GainMap::DB_FLOOR
    }
}

fn channel(scene: &Scene, grid: &PropagationGrid) -> Result<ChannelMatrix> {
    Propagator::new(scene, grid)?.channel_matrix(ChannelMethod::Adjoint)
}

fn codebook(kind: CodebookKind, sampling: &CodebookSampling, scene: &Scene, power: f64) -> Result<Codebook> {
    build_codebook(
        CodebookSpec::from_sampling(kind, sampling)?,
        &scene.geometry,
        scene.wavelength(),
        power,
    )
}

fn noiseless(mode: TrainingMode) -> TrainingConfig {
    TrainingConfig::noiseless(mode, Realization::Ideal)
}

/// Keep at most `MAP_MAX_SAMPLES` planes and transverse samples.
fn decimate(map: &GainMap) -> GainMap {
    let sx = map.xs.len().div_ceil(MAP_MAX_SAMPLES).max(1);
    let sy = map.ys.len().div_ceil(MAP_MAX_SAMPLES).max(1);
    let xs: Vec<f64> = map.xs.iter().copied().step_by(sx).collect();
    let ys: Vec<f64> = map.ys.iter().copied().step_by(sy).collect();
    let mut power = Vec::with_capacity(xs.len() * ys.len());
    for i in (0..map.xs.len()).step_by(sx) {
        for j in (0..map.ys.len()).step_by(sy) {
            power.push(map.at(i, j));
        }
    }
    GainMap { xs, ys, power }
}

/// Sum of per-stream maps of the columns of `f`.
fn composite_map(prop: &Propagator, f: &crate::hybrid::CMatrix, x_max: f64) -> Result<GainMap> {
    let maps = (0..f.ncols())
        .into_par_iter()
        .map(|k| prop.field_map(&f.column(k).into_owned(), x_max))
        .collect::<Result<Vec<_>>>()?;
    let mut total = maps[0].clone();
    for m in &maps[1..] {
        for (t, p) in total.power.iter_mut().zip(&m.power) {
            *t += p;
        }
    }
    Ok(total)
}

fn pipeline_config(sc: &Scenario, k: usize, power: f64) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(sc.num_rf.unwrap_or(k), power, sc.noise_power.unwrap_or(DEFAULT_NOISE_POWER));
    cfg.seed = sc.seed.unwrap_or(0);
    cfg.allow_ridge = true;
    cfg
}

fn evaluate(scheme: SchemeId, h: &ChannelMatrix, scene: &Scene, sampling: &CodebookSampling, cfg: &PipelineConfig) -> Result<Outcome> {
    let out = match scheme {
        SchemeId::Digital => perfect_csi_digital(h, cfg.power, cfg.sigma2, cfg.allow_ridge),
        SchemeId::Hybrid => perfect_csi_hybrid(h, cfg),
        SchemeId::Mrt => Err(Error::config("sweep.schemes", "mrt is a single-user bound")),
        other => baseline_pipeline(
            other.pipeline().expect("remaining schemes are codebook pipelines"),
            h,
            &scene.geometry,
            scene.wavelength(),
            sampling,
            cfg,
        ),
    };
    out.map_err(|e| e.context(format!("scheme {}", scheme.label())))
}

fn rate_reports(
    schemes: &[SchemeId],
    h: &ChannelMatrix,
    scene: &Scene,
    sampling: &CodebookSampling,
    cfg: &PipelineConfig,
) -> Result<Vec<(SchemeId, Outcome)>> {
    schemes
        .par_iter()
        .map(|&s| evaluate(s, h, scene, sampling, cfg).map(|o| (s, o)))
        .collect()
}

fn rate_header(variable: &str) -> String {
    format!("{variable},trial,{}\n", RateReport::CSV_HEADER)
}

fn prefixed_rows(prefix: &str, report: &RateReport) -> String {
    report.csv_rows().lines().map(|l| format!("{prefix},{l}\n")).collect()
}

/// `(value, trial, reports)` rows plus the per-value mean sum rate.
/// Sweep value, trial index and each scheme's outcome.
type SweepRow = (f64, usize, Vec<(SchemeId, Outcome)>);

fn rate_artifacts(preset: &ExperimentPreset, rows: &[SweepRow]) -> Vec<Artifact> {
    let var = &preset.sweep.variable;
    let mut csv = rate_header(var);
    for (v, t, reports) in rows {
        for (_, o) in reports {
            csv += &prefixed_rows(&format!("{v},{t}"), &o.report);
        }
    }
    let mut mean = format!("{var},scheme,trials,mean_sum_rate_bps_hz\n");
    for &v in &preset.sweep.values {
        for &s in &preset.sweep.schemes {
            let rates: Vec<f64> = rows
                .iter()
                .filter(|(x, _, _)| *x == v)
                .flat_map(|(_, _, r)| r.iter().filter(|(id, _)| *id == s).map(|(_, o)| o.report.sum_rate))
                .collect();
            let avg = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
            writeln!(mean, "{v},{},{},{avg:.9}", s.label(), rates.len()).unwrap();
        }
    }
    let stem = preset.name.replace('-', "_");
    vec![
        Artifact {
            name: format!("{stem}.csv"),
            contents: csv,
        },
        Artifact {
            name: format!("{stem}_mean.csv"),
            contents: mean,
        },
    ]
}

fn mean_summary(preset: &ExperimentPreset, rows: &[SweepRow]) -> BTreeMap<String, serde_json::Value> {
    let mut summary = BTreeMap::new();
    for &s in &preset.sweep.schemes {
        let rates: Vec<f64> = rows
            .iter()
            .flat_map(|(_, _, r)| r.iter().filter(|(id, _)| *id == s).map(|(_, o)| o.report.sum_rate))
            .collect();
        let avg = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
        summary.insert(format!("mean_sum_rate_{}", s.label()), num(avg));
    }
    let worst_isr = rows
        .iter()
        .flat_map(|(_, _, r)| r.iter())
        .filter(|(_, o)| !o.condition.is_nan() && o.condition <= crate::hybrid::MAX_CONDITION)
        .map(|(_, o)| o.report.max_interference_ratio())
        .fold(0.0, f64::max);
    summary.insert("worst_interference_to_signal_db".into(), num(to_db(worst_isr)));
    let ridge = rows
        .iter()
        .flat_map(|(_, _, r)| r.iter())
        .filter(|(_, o)| o.condition > crate::hybrid::MAX_CONDITION)
        .count();
    summary.insert("ridge_runs".into(), ridge.into());
    summary
}

fn run_pattern(preset: &ExperimentPreset) -> Result<RunOutput> {
    let sc = preset.resolved()?;
    let scene = &sc.scene;
    let sampling = preset.sampling();
    let x_max = preset.sweep.values[0];
    let prop = Propagator::new(scene, &sc.grid)?;
    let h = prop.channel_matrix(ChannelMethod::Adjoint)?;
    let p = sc.power;
    let k_users = scene.num_users();

    let mut selections = BTreeMap::new();
    for &s in &preset.sweep.schemes {
        let sel = match s {
            SchemeId::Mrt => None,
            SchemeId::Airy => Some(hierarchical_search(
                &h.h,
                &codebook(CodebookKind::Polar, &sampling, scene, p)?,
                &codebook(CodebookKind::Airy, &sampling, scene, p)?,
                &noiseless(TrainingMode::Hierarchical),
            )?),
            other => {
                let kind = match other {
                    SchemeId::AiryExhaustive => CodebookKind::Airy,
                    SchemeId::Focused => CodebookKind::Polar,
                    _ => CodebookKind::Dft,
                };
                Some(exhaustive_search(
                    &h.h,
                    &codebook(kind, &sampling, scene, p)?,
                    &noiseless(TrainingMode::Exhaustive),
                )?)
            }
        };
        selections.insert(s, sel);
    }

    let mut beams: Vec<(usize, SchemeId, String, usize, CVector)> = Vec::new();
    for k in 0..k_users {
        for (&s, sel) in &selections {
            match sel {
                None => {
                    let mrt = mrt_codeword(&h.column(k), k, p)?;
                    beams.push((k, s, mrt.kind.describe(), 0, mrt.w));
                }
                Some(sel) => {
                    let u = &sel.users[k];
                    beams.push((k, s, u.kind.describe(), u.index, u.codeword.w.clone()));
                }
            }
        }
    }

    let maps = beams
        .par_iter()
        .map(|(_, _, _, _, w)| prop.field_map(w, x_max).map(|m| decimate(&m)))
        .collect::<Result<Vec<_>>>()?;

    let mut artifacts = Vec::new();
    let mut table = String::from("user,scheme,index,parameters,received_power_w,received_power_db,gap_to_mrt_db\n");
    let mut summary = BTreeMap::new();
    for ((k, s, params, index, w), map) in beams.iter().zip(maps) {
        let h_k = h.column(*k);
        let power = h_k.dotc(w).norm_sqr();
        let bound = p * h_k.norm_squared();
        let gap = to_db(bound) - to_db(power);
        writeln!(
            table,
            "{k},{},{index},{params},{power:.9e},{:.6},{gap:.6}",
            s.label(),
            to_db(power)
        )
        .unwrap();
        summary.insert(format!("user{k}_{}_gap_to_mrt_db", s.label()), num(gap));
        summary.insert(format!("user{k}_blockage_ratio"), num(scene.blockage_ratio(*k)));
        artifacts.push(Artifact {
            name: format!("map_user{k}_{}.csv", s.label()),
            contents: map.to_csv(),
        });
    }
    artifacts.insert(
        0,
        Artifact {
            name: "pattern_summary.csv".into(),
            contents: table,
        },
    );

    if k_users >= 2 {
        let schemes: Vec<SchemeId> = preset
            .sweep
            .schemes
            .iter()
            .copied()
            .filter(|s| *s != SchemeId::Mrt)
            .chain([SchemeId::Digital, SchemeId::Hybrid])
            .collect();
        let cfg = pipeline_config(&sc, k_users, p);
        let outcomes = rate_reports(&schemes, &h, scene, &sampling, &cfg)?;
        let mut rates = String::from(RateReport::CSV_HEADER);
        rates.push('\n');
        for (s, o) in &outcomes {
            rates += &o.report.csv_rows();
            let map = composite_map(&prop, &o.beamformer.composite(), x_max)?;
            artifacts.push(Artifact {
                name: format!("map_multiuser_{}.csv", s.label()),
                contents: decimate(&map).to_csv(),
            });
            summary.insert(format!("sum_rate_{}", s.label()), num(o.report.sum_rate));
        }
        artifacts.push(Artifact {
            name: "pattern_rates.csv".into(),
            contents: rates,
        });
    }
    Ok(RunOutput { artifacts, summary })
}

fn run_blockage(preset: &ExperimentPreset) -> Result<RunOutput> {
    let sc = preset.resolved()?;
    let sampling = preset.sampling();
    let p = sc.power;
    let free_scene = Scene::new(sc.scene.geometry.clone(), vec![], sc.scene.users.clone(), sc.scene.wavelength())?;
    let h_free = channel(&free_scene, &sc.grid)?;
    let reference: Vec<f64> = (0..free_scene.num_users()).map(|k| p * h_free.column(k).norm_squared()).collect();

    let values = &preset.sweep.values;
    let rows = values
        .par_iter()
        .map(|&top| {
            let mut file = preset.scenario.clone();
            file.obstacles[0].y[1] = top;
            let point = file.into_scenario()?;
            let scene = &point.scene;
            let h = channel(scene, &point.grid)?;
            let mut out = Vec::new();
            for &s in &preset.sweep.schemes {
                let powers: Vec<f64> = match s {
                    SchemeId::Mrt => (0..scene.num_users()).map(|k| p * h.column(k).norm_squared()).collect(),
                    SchemeId::Airy => hierarchical_search(
                        &h.h,
                        &codebook(CodebookKind::Polar, &sampling, scene, p)?,
                        &codebook(CodebookKind::Airy, &sampling, scene, p)?,
                        &noiseless(TrainingMode::Hierarchical),
                    )?
                    .users
                    .iter()
                    .map(|u| u.power)
                    .collect(),
                    other => {
                        let kind = match other {
                            SchemeId::AiryExhaustive => CodebookKind::Airy,
                            SchemeId::Focused => CodebookKind::Polar,
                            _ => CodebookKind::Dft,
                        };
                        exhaustive_search(&h.h, &codebook(kind, &sampling, scene, p)?, &noiseless(TrainingMode::Exhaustive))?
                            .users
                            .iter()
                            .map(|u| u.power)
                            .collect()
                    }
                };
                for (k, pw) in powers.into_iter().enumerate() {
                    out.push((top, k, scene.blockage_ratio(k), s, pw));
                }
            }
            Ok(out)
        })
        .enumerate()
        .map(|(i, r): (usize, Result<_>)| r.map_err(|e| e.context(format!("obstacle_top_m={}", values[i]))))
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("obstacle_top_m,user,blockage_ratio,scheme,received_power_w,reference_power_w,normalized_power\n");
    let mut summary = BTreeMap::new();
    for (top, k, ratio, s, pw) in rows.into_iter().flatten() {
        let norm = pw / reference[k];
        writeln!(csv, "{top},{k},{ratio:.6},{},{pw:.9e},{:.9e},{norm:.9e}", s.label(), reference[k]).unwrap();
        if ratio >= 1.0 && s == SchemeId::Mrt {
            summary.insert(format!("user{k}_full_shadow_attenuation_db"), num(-to_db(norm)));
        }
    }
    Ok(RunOutput {
        artifacts: vec![Artifact {
            name: "blockage_sweep.csv".into(),
            contents: csv,
        }],
        summary,
    })
}

fn grid_users(n: usize, f: f64) -> Vec<[f64; 2]> {
    let ([x0, x1], [y0, y1]) = TRAINING_REGION;
    let at = |lo: f64, hi: f64, i: usize| match (n, i) {
        (1, _) => 0.5 * (lo + hi),
        (_, i) if i + 1 == n => hi,
        _ => lo + (hi - lo) * i as f64 / (n - 1) as f64,
    };
    let mut users = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            users.push([at(x0, x1, i) * f, at(y0, y1, j) * f]);
        }
    }
    users
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
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

fn run_training_compare(preset: &ExperimentPreset) -> Result<RunOutput> {
    let base = preset.resolved()?;
    let sampling = preset.sampling();
    let p = base.power;
    let f = preset.scale.factor();
    let mut csv = String::from(
        "grid_points,user,x_m,y_m,blockage_ratio,mrt_w,exhaustive_w,hierarchical_w,gap_db\n",
    );
    let mut stats = String::from(
        "grid_points,users,median_gap_db,worst_gap_db,exhaustive_measurements,hierarchical_measurements\n",
    );
    let mut summary = BTreeMap::new();
    for &v in &preset.sweep.values {
        let n = v as usize;
        let users: Vec<[f64; 2]> = grid_users(n, f)
            .into_iter()
            .filter(|u| base.scene.mask(u[0], u[1]) == 1)
            .collect();
        let scene = base.scene.with_users(users)?;
        let grid = GridEntry::resolve(preset.scenario.grid.as_ref(), &scene)?;
        let h = channel(&scene, &grid)?;
        let airy = codebook(CodebookKind::Airy, &sampling, &scene, p)?;
        let polar = codebook(CodebookKind::Polar, &sampling, &scene, p)?;
        let ex = exhaustive_search(&h.h, &airy, &noiseless(TrainingMode::Exhaustive))?;
        let hi = hierarchical_search(&h.h, &polar, &airy, &noiseless(TrainingMode::Hierarchical))?;
        let mut gaps = Vec::with_capacity(scene.num_users());
        for (k, u) in scene.users.iter().enumerate() {
            let (e, hpow) = (ex.users[k].power, hi.users[k].power);
            let gap = to_db(e) - to_db(hpow);
            gaps.push(gap);
            writeln!(
                csv,
                "{n},{k},{:.6},{:.6},{:.6},{:.9e},{e:.9e},{hpow:.9e},{gap:.6}",
                u[0],
                u[1],
                scene.blockage_ratio(k),
                p * h.column(k).norm_squared()
            )
            .unwrap();
        }
        let med = median(&gaps);
        let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spec = &airy.spec;
        writeln!(
            stats,
            "{n},{},{med:.6},{worst:.6},{},{}",
            gaps.len(),
            training_overhead(TrainingMode::Exhaustive, spec, gaps.len()),
            training_overhead(TrainingMode::Hierarchical, spec, gaps.len())
        )
        .unwrap();
        summary.insert(format!("grid{n}_median_gap_db"), num(med));
        summary.insert(format!("grid{n}_worst_gap_db"), num(worst));
    }
    Ok(RunOutput {
        artifacts: vec![
            Artifact {
                name: "training_compare.csv".into(),
                contents: csv,
            },
            Artifact {
                name: "training_compare_summary.csv".into(),
                contents: stats,
            },
        ],
        summary,
    })
}

fn run_rate_vs_power(preset: &ExperimentPreset) -> Result<RunOutput> {
    let sc = preset.resolved()?;
    let sampling = preset.sampling();
    let h = channel(&sc.scene, &sc.grid)?;
    let k = sc.scene.num_users();
    let rows = preset
        .sweep
        .values
        .par_iter()
        .map(|&db| {
            let cfg = pipeline_config(&sc, k, sc.power * 10f64.powf(db / 10.0));
            rate_reports(&preset.sweep.schemes, &h, &sc.scene, &sampling, &cfg)
                .map(|r| (db, 0, r))
                .map_err(|e| e.context(format!("power_db={db}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        artifacts: rate_artifacts(preset, &rows),
        summary: mean_summary(preset, &rows),
    })
}

fn random_users(
    rng: &mut ChaCha8Rng,
    k: usize,
    region: ([f64; 2], [f64; 2]),
    f: f64,
    obstacles: &[ObstacleEntry],
) -> Result<Vec<[f64; 2]>> {
    let ([x0, x1], [y0, y1]) = region;
    let inside = |u: [f64; 2]| {
        obstacles
            .iter()
            .any(|o| u[0] >= o.x[0] && u[0] <= o.x[1] && u[1] >= o.y[0] && u[1] <= o.y[1])
    };
    let mut users = Vec::with_capacity(k);
    for _ in 0..10_000 * k.max(1) {
        if users.len() == k {
            break;
        }
        let u = [rng.random_range(x0..x1) * f, rng.random_range(y0..y1) * f];
        if !inside(u) {
            users.push(u);
        }
    }
    if users.len() < k {
        return Err(Error::config("obstacles", "obstacles leave no room for random users"));
    }
    Ok(users)
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn length_obstacle(file: &ScenarioFile, length: f64) -> Vec<ObstacleEntry> {
    if length <= 0.0 {
        return vec![];
    }
    let x = file.obstacles.first().map_or(scaled(BASE_OBSTACLE.0, 1.0), |o| o.x);
    vec![ObstacleEntry {
        x,
        y: [-0.5 * length, 0.5 * length],
    }]
}

/// Random user placements: `users-sweep` and `obstacle-length-sweep`.
fn run_random(preset: &ExperimentPreset) -> Result<RunOutput> {
    let kind = preset.info().kind;
    let f = preset.scale.factor();
    let seed = preset.seed();
    let sampling = preset.sampling();
    let sweep = &preset.sweep;
    let longest = sweep.values.iter().fold(0.0, |a: f64, &b| a.max(b));
    let points: Vec<(usize, f64, usize)> = sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| (0..sweep.trials).map(move |t| (i, v, t)))
        .collect();
    let rows = points
        .par_iter()
        .map(|&(i, v, t)| {
            let mut file = preset.scenario.clone();
            let users = match kind {
                Kind::UsersSweep => {
                    let mut rng = trial_rng(seed, ((i as u64) << 32) | t as u64);
                    random_users(&mut rng, v as usize, RANDOM_REGION, f, &file.obstacles)?
                }
                _ => {
                    let mut rng = trial_rng(seed, t as u64);
                    let users = random_users(&mut rng, RANDOM_USERS, LENGTH_SWEEP_REGION, f, &length_obstacle(&file, longest))?;
                    file.obstacles = length_obstacle(&file, v);
                    users
                }
            };
            file.users = users;
            let sc = file.into_scenario()?;
            let h = channel(&sc.scene, &sc.grid)?;
            let cfg = pipeline_config(&sc, sc.scene.num_users(), sc.power);
            rate_reports(&sweep.schemes, &h, &sc.scene, &sampling, &cfg).map(|r| (v, t, r))
        })
        .enumerate()
        .map(|(j, r)| {
            let (_, v, t) = points[j];
            r.map_err(|e: Error| e.context(format!("{}={v} trial {t}", sweep.variable)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        artifacts: rate_artifacts(preset, &rows),
        summary: mean_summary(preset, &rows),
    })
}

fn run_freq(preset: &ExperimentPreset) -> Result<RunOutput> {
    let base = &preset.scenario;
    let sampling = preset.sampling();
    let rows = preset
        .sweep
        .values
        .par_iter()
        .map(|&ghz| {
            let mut file = base.clone();
            file.frequency_ghz = ghz;
            file.num_elements = freq_elements(base.num_elements, base.frequency_ghz, ghz);
            file.spacing_m = base.spacing_m.map(|d| d * base.frequency_ghz / ghz);
            let point = file.into_scenario()?;
            let h = channel(&point.scene, &point.grid)?;
            let cfg = pipeline_config(&point, point.scene.num_users(), point.power);
            rate_reports(&preset.sweep.schemes, &h, &point.scene, &sampling, &cfg)
                .map(|r| (ghz, 0, r))
                .map_err(|e| e.context(format!("frequency_ghz={ghz}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunOutput {
        artifacts: rate_artifacts(preset, &rows),
        summary: mean_summary(preset, &rows),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Run record written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub scale: Scale,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub threads: usize,
    pub files: Vec<FileEntry>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// Write the artifacts, the resolved preset document and `manifest.json`.
pub fn write_run(dir: &Path, preset: &ExperimentPreset, output: &RunOutput, wall_time_s: f64) -> Result<Manifest> {
    create_dir(dir)?;
    let document = Artifact {
        name: "preset.toml".into(),
        contents: preset.document(),
    };
    let mut files = Vec::new();
    for a in std::iter::once(&document).chain(&output.artifacts) {
        write_file(dir, &a.name, &a.contents)?;
        files.push(FileEntry {
            name: a.name.clone(),
            sha256: hex::encode(Sha256::digest(a.contents.as_bytes())),
            bytes: a.contents.len(),
        });
    }
    let manifest = Manifest {
        preset: preset.name.clone(),
        scale: preset.scale,
        version: VERSION.to_string(),
        seed: preset.seed(),
        config_hash: preset.config_hash(),
        wall_time_s,
        threads: rayon::current_num_threads(),
        files,
        summary: output.summary.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir, "manifest.json", &(json + "\n"))?;
    Ok(manifest)
}

/// Record a failed run in `diagnostic.txt`.
pub fn write_diagnostic(dir: &Path, preset: &ExperimentPreset, error: &Error) -> Result<()> {
    create_dir(dir)?;
    let mut text = String::new();
    writeln!(text, "preset: {}", preset.name).unwrap();
    writeln!(text, "scale: {}", preset.scale.label()).unwrap();
    writeln!(text, "version: {VERSION}").unwrap();
    writeln!(text, "config_hash: {}", preset.config_hash()).unwrap();
    writeln!(text, "error: {error}").unwrap();
    let mut source = std::error::Error::source(error);
    while let Some(s) = source {
        writeln!(text, "caused by: {s}").unwrap();
        source = s.source();
    }
    writeln!(text, "\n{}", preset.document()).unwrap();
    write_file(dir, "diagnostic.txt", &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sampling() -> CodebookSampling {
        CodebookSampling {
            n_theta: 15,
            theta_max_deg: 45.0,
            n_r: 3,
            r_min_m: 0.24,
            r_max_m: 1.2,
            n_s: 4,
            s_min_m: 0.012,
            s_max_m: 0.072,
            n_a: 3,
            a_min: -2.0,
            a_max: 0.0,
        }
    }

    #[test]
    fn every_builtin_preset_validates_at_both_scales() {
        for (name, _) in preset_names() {
            for scale in [Scale::Desk, Scale::Paper] {
                let p = ExperimentPreset::builtin(name, scale).unwrap();
                assert!(!p.sweep.values.is_empty());
                if scale == Scale::Desk {
                    assert!(p.scenario.num_elements <= DESK_ELEMENTS);
                }
            }
        }
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(ExperimentPreset::builtin("nope", Scale::Desk).unwrap_err().is_config());
    }

    #[test]
    fn document_round_trips() {
        let p = ExperimentPreset::builtin("rate-vs-power", Scale::Desk).unwrap();
        let q = ExperimentPreset::from_table(&p.name, p.scale, p.to_table()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn overrides_reach_scenario_and_sweep() {
        let p = ExperimentPreset::builtin("rate-vs-power", Scale::Desk).unwrap();
        let q = p
            .with_overrides(&["users.0=[0.3,0.05]", "sweep.values=[0.0]", "sweep.schemes=[\"digital\"]"])
            .unwrap();
        assert_eq!(q.scenario.users[0], [0.3, 0.05]);
        assert_eq!(q.sweep.values, vec![0.0]);
        assert_ne!(p.config_hash(), q.config_hash());
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        let p = ExperimentPreset::builtin("users-sweep", Scale::Desk).unwrap();
        for bad in ["sweep.values=[]", "sweep.trials=0", "sweep.variable=\"x\"", "num_elements=65", "sweep.schemes=[\"mrt\"]"] {
            let err = p.with_overrides(&[bad]).unwrap_err();
            assert!(err.is_config(), "{bad}: {err}");
        }
    }

    #[test]
    fn desk_freq_sweep_respects_element_cap() {
        let p = ExperimentPreset::builtin("freq-sweep", Scale::Desk).unwrap();
        assert_eq!(freq_elements(42, 100.0, 150.0), 63);
        assert!(p.with_overrides(&["sweep.values=[160.0]"]).unwrap_err().is_config());
    }

    #[test]
    fn grid_users_cover_region() {
        let u = grid_users(10, 1.0);
        assert_eq!(u.len(), 100);
        assert_eq!(u[0], [1.2, -0.45]);
        assert_eq!(u[99], [3.0, 0.45]);
    }

    #[test]
    fn random_users_avoid_obstacles_and_repeat() {
        let obs = vec![ObstacleEntry {
            x: [1.0, 4.0],
            y: [-0.6, 0.0],
        }];
        let a = random_users(&mut trial_rng(3, 1), 20, RANDOM_REGION, 1.0, &obs).unwrap();
        let b = random_users(&mut trial_rng(3, 1), 20, RANDOM_REGION, 1.0, &obs).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|u| u[1] > 0.0));
    }

    #[test]
    fn small_rate_run_is_deterministic() {
        let mut p = ExperimentPreset::builtin("rate-vs-power", Scale::Desk).unwrap();
        p.scenario.codebook = Some(tiny_sampling());
        p.sweep.values = vec![0.0];
        p.sweep.schemes = vec![SchemeId::Digital, SchemeId::Focused];
        let a = run(&p).unwrap();
        let b = run(&p).unwrap();
        assert_eq!(a, b);
        let csv = a.artifact("rate_vs_power.csv").unwrap();
        assert!(csv.starts_with("power_db,trial,scheme,K,P,sigma2,user,"));
        assert_eq!(csv.lines().count(), 1 + 2 * 5);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
