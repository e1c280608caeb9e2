//! Scenario files: TOML documents describing a scene, its propagation grid
//! and run parameters.
//!
//! ```toml
//! frequency_ghz = 100.0
//! num_elements = 266
//! obstacles = [{ x = [0.8, 1.0], y = [-0.15, 0.15] }]
//! users = [[1.2, 0.19]]
//! power = 1.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{ArrayGeometry, Obstacle, PropagationGrid, Scene, SPEED_OF_LIGHT};
use crate::wavefront::CodebookSampling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub dy_m: Option<f64>,
    pub dx_m: Option<f64>,
    pub y_extent_m: Option<f64>,
    pub pad_factor: Option<f64>,
}

impl GridEntry {
    /// Default grid for `scene` with any fields of `entry` substituted, validated.
    pub fn resolve(entry: Option<&GridEntry>, scene: &Scene) -> Result<PropagationGrid> {
        let mut grid = PropagationGrid::default_for(scene);
        if let Some(g) = entry {
            if let Some(v) = g.dy_m {
                grid.dy = v;
            }
            if let Some(v) = g.dx_m {
                grid.dx = v;
            }
            if let Some(v) = g.y_extent_m {
                grid.y_extent = v;
            }
            if let Some(v) = g.pad_factor {
                grid.pad_factor = v;
            }
        }
        grid.validate(scene)?;
        Ok(grid)
    }
}

/// Raw scenario document, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub frequency_ghz: f64,
    pub num_elements: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_m: Option<f64>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleEntry>,
    #[serde(default)]
    pub users: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridEntry>,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_rf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub codebook: Option<CodebookSampling>,
}

fn default_power() -> f64 {
    1.0
}

/// A validated scenario.
#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub scene: Scene,
    pub grid: PropagationGrid,
    pub power: f64,
    pub noise_power: Option<f64>,
    pub seed: Option<u64>,
    pub num_rf: Option<usize>,
    pub codebook: Option<CodebookSampling>,
}

impl ScenarioFile {
    pub fn into_scenario(self) -> Result<Scenario> {
        if !(self.frequency_ghz.is_finite() && self.frequency_ghz > 0.0) {
            return Err(Error::config("frequency_ghz", "must be positive"));
        }
        let wavelength = SPEED_OF_LIGHT / (self.frequency_ghz * 1e9);
        let spacing = self.spacing_m.unwrap_or(wavelength / 2.0);
        let geometry = ArrayGeometry::new(self.num_elements, spacing)?;
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let ob = Obstacle { x: o.x, y: o.y };
                ob.validate(&format!("obstacles[{i}]"))?;
                Ok(ob)
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene::new(geometry, obstacles, self.users, wavelength)?;

        let grid = GridEntry::resolve(self.grid.as_ref(), &scene)?;

        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::config("power", "must be positive"));
        }
        if let Some(s2) = self.noise_power {
            if !(s2.is_finite() && s2 > 0.0) {
                return Err(Error::config("noise_power", "must be positive"));
            }
        }
        if let Some(seed) = self.seed {
            if i64::try_from(seed).is_err() {
                return Err(Error::config("seed", format!("must be at most {}", i64::MAX)));
            }
        }
        if let Some(n_rf) = self.num_rf {
            if n_rf == 0 {
                return Err(Error::config("num_rf", "must be at least 1"));
            }
        }
        if let Some(cb) = &self.codebook {
            cb.validate()?;
        }
        Ok(Scenario {
            scene,
            grid,
            power: self.power,
            noise_power: self.noise_power,
            seed: self.seed,
            num_rf: self.num_rf,
            codebook: self.codebook,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario documents always serialize")
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>().map_err(|e| Error::Parse(e.to_string()))
}

pub fn scenario_from_table(table: toml::Table) -> Result<ScenarioFile> {
    toml::Value::Table(table)
        .try_into::<ScenarioFile>()
        .map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    scenario_from_table(parse_table(text)?)?.into_scenario()
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

/// Apply a `path=value` override such as `users.0=[1.2,0.19]` or
/// `grid.dx_m=0.0025`. Numeric path segments index arrays; the value is parsed
/// as a TOML value, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("override `{assignment}` is not key=value")))?;
    let path = path.trim();
    let value = parse_value(raw.trim());
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument(format!("malformed override path `{path}`")));
    }

    let mut root = toml::Value::Table(std::mem::take(table));
    let result = set_path(&mut root, &segments, value);
    if let toml::Value::Table(t) = root {
        *table = t;
    }
    result
}

fn set_path(root: &mut toml::Value, segments: &[&str], value: toml::Value) -> Result<()> {
    let mut cursor = root;
    for (depth, seg) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        let here = segments[..=depth].join(".");
        cursor = match cursor {
            toml::Value::Table(t) => {
                if last {
                    t.insert(seg.to_string(), value);
                    return Ok(());
                }
                t.entry(seg.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::InvalidArgument(format!("`{here}`: expected an array index"))
                })?;
                if idx > items.len() {
                    return Err(Error::InvalidArgument(format!(
                        "`{here}`: index {idx} out of range (len {})",
                        items.len()
                    )));
                }
                if idx == items.len() {
                    items.push(toml::Value::Table(toml::Table::new()));
                }
                if last {
                    items[idx] = value;
                    return Ok(());
                }
                &mut items[idx]
            }
            _ => {
                return Err(Error::InvalidArgument(format!("`{here}` is not a table or array")));
            }
        };
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
