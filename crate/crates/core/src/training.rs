//! Downlink beam training: exhaustive codebook sweeps and the three-stage
//! hierarchical Airy search.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{omp_codeword, CMatrix, CVector, DftDictionary, DICTIONARY_OVERSAMPLING};
use crate::scene::ArrayGeometry;
use crate::wavefront::{synthesize, AiryParams, Codebook, CodebookKind, CodebookSpec, Codeword, CodewordKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    Exhaustive,
    Hierarchical,
}

/// How a codeword is transmitted during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Realization {
    /// Fully digital: the codeword itself.
    Ideal,
    /// OMP approximation with `n_rf` chains.
    Omp { n_rf: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mode: TrainingMode,
    pub realization: Realization,
    /// Measurement noise variance; 0 disables noise.
    pub noise_power: f64,
    pub seed: u64,
}

impl TrainingConfig {
    pub fn noiseless(mode: TrainingMode, realization: Realization) -> Self {
        Self {
            mode,
            realization,
            noise_power: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "training noise power must be >= 0, got {}",
                self.noise_power
            )));
        }
        if let Realization::Omp { n_rf: 0 } = self.realization {
            return Err(Error::InvalidArgument("OMP realization needs N_RF >= 1".into()));
        }
        Ok(())
    }
}

/// Turns ideal codewords into transmitted vectors.
#[derive(Debug, Clone)]
pub struct Realizer {
    realization: Realization,
    dictionary: Option<DftDictionary>,
    power: f64,
}

impl Realizer {
    pub fn new(realization: Realization, geometry: &ArrayGeometry, wavelength: f64, power: f64) -> Result<Self> {
        let dictionary = match realization {
            Realization::Ideal => None,
            Realization::Omp { .. } => Some(DftDictionary::new(geometry, wavelength, DICTIONARY_OVERSAMPLING)?),
        };
        Ok(Self {
            realization,
            dictionary,
            power,
        })
    }

    pub fn realize(&self, cw: &Codeword) -> Result<CVector> {
        match (self.realization, &self.dictionary) {
            (Realization::Omp { n_rf }, Some(dict)) => Ok(omp_codeword(cw, dict, n_rf, self.power)?.realized()),
            _ => Ok(cw.w.clone()),
        }
    }
}

/// Training stage of a measurement, used to derive independent noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sweep,
    Scale,
    Decay,
}

impl Stage {
    fn id(self) -> u64 {
        match self {
            Stage::Sweep => 1,
            Stage::Scale => 2,
            Stage::Decay => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::Sweep => "sweep",
            Stage::Scale => "scale",
            Stage::Decay => "decay",
        }
    }
}

/// Received power `|h_k^H w|^2`.
pub fn received_power(h: &CMatrix, k: usize, w: &CVector) -> f64 {
    h.column(k).dotc(w).norm_sqr()
}

/// Comparison metric for one measurement: received power plus the real part
/// of a seeded complex Gaussian sample when noise is enabled.
pub fn measure_power(h: &CMatrix, k: usize, w: &CVector, config: &TrainingConfig, stage: Stage, index: usize) -> f64 {
    let p = received_power(h, k, w);
    if config.noise_power == 0.0 {
        return p;
    }
    p + noise_sample(config, stage, k, index)
}

fn noise_sample(config: &TrainingConfig, stage: Stage, user: usize, index: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((stage.id() << 56) ^ ((user as u64) << 32) ^ index as u64);
    let normal = Normal::new(0.0, (config.noise_power / 2.0).sqrt()).expect("finite variance");
    normal.sample(&mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Best {
    metric: f64,
    power: f64,
    index: usize,
}

impl Best {
    const NONE: Best = Best {
        metric: f64::NEG_INFINITY,
        power: 0.0,
        index: usize::MAX,
    };

    fn offer(&mut self, other: Best) {
        let metric = if other.metric.is_nan() { f64::NEG_INFINITY } else { other.metric };
        if metric > self.metric || (metric == self.metric && other.index < self.index) {
            *self = Best { metric, ..other };
        }
    }
}

/// Sweep `count` codewords, each measured by every user in `users`; returns
/// the per-user best (ties to the lowest index).
fn sweep(
    h: &CMatrix,
    users: &[usize],
    count: usize,
    make: impl Fn(usize) -> Result<Codeword> + Sync,
    realizer: &Realizer,
    config: &TrainingConfig,
    stage: Stage,
) -> Result<Vec<Best>> {
    let init = || vec![Best::NONE; users.len()];
    (0..count)
        .into_par_iter()
        .try_fold(init, |mut acc, i| {
            let w = realizer.realize(&make(i)?)?;
            for (slot, &k) in users.iter().enumerate() {
                let power = received_power(h, k, &w);
                let metric = if config.noise_power == 0.0 {
                    power
                } else {
                    power + noise_sample(config, stage, k, i)
                };
                acc[slot].offer(Best { metric, power, index: i });
            }
            Ok(acc)
        })
        .try_reduce(init, |mut a, b| {
            for (x, y) in a.iter_mut().zip(b) {
                x.offer(y);
            }
            Ok(a)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Index within the stage's sweep.
    pub index: usize,
    pub metric: f64,
    /// Noiseless received power of the selected realization.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserSelection {
    pub kind: CodewordKind,
    /// Index of the final codeword in the searched (or full Airy) codebook.
    pub index: usize,
    pub stages: Vec<StageRecord>,
    /// Noiseless received power of the selected realization.
    pub power: f64,
    #[serde(skip)]
    pub codeword: Codeword,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeamSelection {
    pub mode: TrainingMode,
    pub codebook: CodebookKind,
    pub users: Vec<UserSelection>,
    pub measurements: usize,
}

impl BeamSelection {
    pub fn export(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# beam-selection v1").unwrap();
        writeln!(out, "mode {:?}", self.mode).unwrap();
        writeln!(out, "codebook {:?}", self.codebook).unwrap();
        writeln!(out, "measurements {}", self.measurements).unwrap();
        for (k, u) in self.users.iter().enumerate() {
            let params = u.kind.describe();
            writeln!(out, "user {k} index={} {params} power_db={:.6}", u.index, to_db(u.power)).unwrap();
            for s in &u.stages {
                writeln!(out, "  stage {} index={} power_db={:.6}", s.stage.label(), s.index, to_db(s.power)).unwrap();
            }
        }
        out
    }
}

pub(crate) fn to_db(p: f64) -> f64 {
    if p > 0.0 { 10.0 * p.log10() } else { f64::NEG_INFINITY }
}

/// Argmax over the whole codebook for each user; one shared sweep.
pub fn exhaustive_search(h: &CMatrix, codebook: &Codebook, config: &TrainingConfig) -> Result<BeamSelection> {
    config.validate()?;
    if codebook.is_empty() {
        return Err(Error::EmptySamplingSet("codebook"));
    }
    let realizer = Realizer::new(config.realization, &codebook.geometry, codebook.wavelength, codebook.power)?;
    let users: Vec<usize> = (0..h.ncols()).collect();
    let best = sweep(h, &users, codebook.len(), |i| codebook.codeword(i), &realizer, config, Stage::Sweep)?;
    let users = best
        .into_iter()
        .map(|b| {
            Ok(UserSelection {
                kind: codebook.params(b.index),
                index: b.index,
                stages: vec![StageRecord {
                    stage: Stage::Sweep,
                    index: b.index,
                    metric: b.metric,
                    power: b.power,
                }],
                power: b.power,
                codeword: codebook.codeword(b.index)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamSelection {
        mode: TrainingMode::Exhaustive,
        codebook: codebook.spec.kind,
        users,
        measurements: codebook.len(),
    })
}

/// Polar sweep shared by all users, then per-user sweeps over `s` (with
/// `a = 0`) and over `a`.
pub fn hierarchical_search(h: &CMatrix, polar: &Codebook, airy: &Codebook, config: &TrainingConfig) -> Result<BeamSelection> {
    config.validate()?;
    if polar.spec.kind != CodebookKind::Polar || airy.spec.kind != CodebookKind::Airy {
        return Err(Error::InvalidArgument("hierarchical search needs a polar and an Airy codebook".into()));
    }
    if polar.spec.thetas != airy.spec.thetas || polar.spec.ranges != airy.spec.ranges {
        return Err(Error::InvalidArgument("polar and Airy codebooks must share theta and r samples".into()));
    }
    let realizer = Realizer::new(config.realization, &airy.geometry, airy.wavelength, airy.power)?;
    let k_users = h.ncols();
    let all: Vec<usize> = (0..k_users).collect();
    let stage1 = sweep(h, &all, polar.len(), |i| polar.codeword(i), &realizer, config, Stage::Sweep)?;

    let spec = &airy.spec;
    let nr = spec.ranges.len();
    let make = |kind: CodewordKind| synthesize(kind, &airy.geometry, airy.wavelength, airy.power);
    let users = stage1
        .into_iter()
        .enumerate()
        .map(|(k, b1)| {
            let (it, ir) = (b1.index / nr, b1.index % nr);
            let (theta, r) = (spec.thetas[it], spec.ranges[ir]);
            let scale_kind = |is: usize| CodewordKind::Airy(AiryParams { theta, r, s: spec.scales[is], a: 0.0 });
            let b2 = sweep(h, &[k], spec.scales.len(), |is| make(scale_kind(is)), &realizer, config, Stage::Scale)?[0];
            let s = spec.scales[b2.index];
            let decay_kind = |ia: usize| CodewordKind::Airy(AiryParams { theta, r, s, a: spec.decays[ia] });
            let b3 = sweep(h, &[k], spec.decays.len(), |ia| make(decay_kind(ia)), &realizer, config, Stage::Decay)?[0];
            let kind = decay_kind(b3.index);
            Ok(UserSelection {
                kind,
                index: spec.airy_index(it, ir, b2.index, b3.index),
                stages: vec![
                    StageRecord { stage: Stage::Sweep, index: b1.index, metric: b1.metric, power: b1.power },
                    StageRecord { stage: Stage::Scale, index: b2.index, metric: b2.metric, power: b2.power },
                    StageRecord { stage: Stage::Decay, index: b3.index, metric: b3.metric, power: b3.power },
                ],
                power: b3.power,
                codeword: make(kind)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeamSelection {
        mode: TrainingMode::Hierarchical,
        codebook: CodebookKind::Airy,
        users,
        measurements: training_overhead(TrainingMode::Hierarchical, spec, k_users),
    })
}

/// Number of codeword transmissions for a search over `spec`.
pub fn training_overhead(mode: TrainingMode, spec: &CodebookSpec, users: usize) -> usize {
    match mode {
        TrainingMode::Exhaustive => spec.len(),
        TrainingMode::Hierarchical => {
            spec.thetas.len() * spec.ranges.len() + users * (spec.scales.len() + spec.decays.len())
        }
    }
}

/// Convenience: the realized vector of a selection under `config`.
pub fn realize_selection(sel: &UserSelection, codebook: &Codebook, realization: Realization) -> Result<CVector> {
    Realizer::new(realization, &codebook.geometry, codebook.wavelength, codebook.power)?.realize(&sel.codeword)
}
