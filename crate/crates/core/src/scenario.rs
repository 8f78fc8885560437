//! Synthetic nights: cluster grid, sampled fleet and wind-following signal.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    classify, feasibility_check, Characteristic, ChargeRequest, ClassifyOptions, ClusterSet, ClusterSpec, FleetEntry,
    ModelError,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("could not place an EV after {0} draws")]
    ResampleLimit(u32),
    #[error("wind file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("wind file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("wind file has {found} rows, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseShape {
    Rectangular,
    /// Peak at the first step, tapering toward zero.
    Triangular,
    /// Mirror of `Triangular`: ramps up to the peak at the last step.
    TriangularIncreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseGroup {
    pub tag: String,
    pub shape: PulseShape,
    pub peak_kw: f64,
    pub max_duration_hours: f64,
    /// Lognormal location and scale of the required energy (kWh).
    pub energy_mu: f64,
    pub energy_sigma: f64,
}

impl PulseGroup {
    pub fn subclass_count(&self, epoch_minutes: f64) -> usize {
        (self.max_duration_hours * 60.0 / epoch_minutes).round() as usize + 1
    }

    /// Per-step power of the full chain.
    pub fn pulse(&self, epoch_minutes: f64) -> Vec<f64> {
        let s_max = self.subclass_count(epoch_minutes);
        let steps = (s_max - 1) as f64;
        (1..s_max)
            .map(|s| match self.shape {
                PulseShape::Rectangular => self.peak_kw,
                PulseShape::Triangular => self.peak_kw * ((s_max - s) as f64 / steps),
                PulseShape::TriangularIncreasing => self.peak_kw * (s as f64 / steps),
            })
            .collect()
    }
}

/// Pulse groups of the default scenario.
pub fn default_groups() -> Vec<PulseGroup> {
    let g = |tag: &str, shape, peak_kw, hours, mu, sigma| PulseGroup {
        tag: tag.into(),
        shape,
        peak_kw,
        max_duration_hours: hours,
        energy_mu: mu,
        energy_sigma: sigma,
    };
    vec![
        g("rect-1.1", PulseShape::Rectangular, 1.1, 8.0, 3.0, 1.2),
        g("tri-2.2", PulseShape::Triangular, 2.2, 8.0, 3.0, 1.2),
        g("rect-3.3", PulseShape::Rectangular, 3.3, 4.0, 1.0, 0.58),
        g("tri-6.6", PulseShape::Triangular, 6.6, 4.0, 1.0, 0.58),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub fleet_size_mean: u32,
    /// Draw the fleet size from a Poisson law; otherwise use the mean exactly.
    pub poisson_fleet_size: bool,
    pub night_epochs: usize,
    pub epoch_minutes: f64,
    pub deadline_options: usize,
    pub wind_cap_kw: f64,
    pub wind_active_epochs: usize,
    /// AR(1) coefficient and innovation scale (kW) of the synthetic wind signal.
    pub wind_ar_coefficient: f64,
    pub wind_noise_kw: f64,
    pub rng_seed: u64,
    pub energy_tolerance: f64,
    pub resample_cap: u32,
    pub groups: Vec<PulseGroup>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            fleet_size_mean: 1000,
            poisson_fleet_size: true,
            night_epochs: 144,
            epoch_minutes: 5.0,
            deadline_options: 5,
            wind_cap_kw: 60.0,
            wind_active_epochs: 108,
            wind_ar_coefficient: 0.9,
            wind_noise_kw: 8.0,
            rng_seed: 0,
            energy_tolerance: 0.1,
            resample_cap: 100,
            groups: default_groups(),
        }
    }
}

impl ScenarioConfig {
    /// The twelve-hour night at a coarser epoch length, wind active for the
    /// first three quarters.
    pub fn scaled(fleet_size_mean: u32, night_epochs: usize) -> Self {
        let epoch_minutes = 720.0 / night_epochs as f64;
        Self {
            fleet_size_mean,
            night_epochs,
            epoch_minutes,
            wind_active_epochs: night_epochs * 3 / 4,
            ..Self::default()
        }
    }

    pub fn epochs_per_hour(&self) -> usize {
        (60.0 / self.epoch_minutes).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidConfig(m));
        if self.night_epochs < 1 {
            return bad("night_epochs must be >= 1".into());
        }
        if !(self.epoch_minutes > 0.0) {
            return bad("epoch_minutes must be positive".into());
        }
        let per_hour = 60.0 / self.epoch_minutes;
        if (per_hour - per_hour.round()).abs() > 1e-9 || per_hour < 1.0 {
            return bad("an hour must hold a whole number of epochs".into());
        }
        if self.deadline_options < 1 {
            return bad("deadline_options must be >= 1".into());
        }
        if !(self.wind_cap_kw >= 0.0) {
            return bad("wind_cap_kw must be non-negative".into());
        }
        if self.wind_active_epochs > self.night_epochs {
            return bad("wind_active_epochs exceeds night_epochs".into());
        }
        if !(self.wind_ar_coefficient.abs() < 1.0) {
            return bad("wind_ar_coefficient must lie in (-1, 1)".into());
        }
        if !(self.wind_noise_kw >= 0.0) {
            return bad("wind_noise_kw must be non-negative".into());
        }
        if self.groups.is_empty() {
            return bad("at least one pulse group is required".into());
        }
        for g in &self.groups {
            if !(g.peak_kw > 0.0) || !(g.max_duration_hours > 0.0) || !(g.energy_sigma > 0.0) {
                return bad(format!("group {}: peak, duration and sigma must be positive", g.tag));
            }
            let s_max = g.subclass_count(self.epoch_minutes);
            if s_max < 2 {
                return bad(format!("group {} is shorter than one epoch", g.tag));
            }
            if s_max > self.night_epochs {
                return bad(format!("group {} chain ({} epochs) does not fit the night", g.tag, s_max - 1));
            }
        }
        Ok(())
    }
}

/// Evenly spaced deadlines from the chain length `S` to the end of the night.
pub fn deadline_grid(subclass_count: usize, cfg: &ScenarioConfig) -> Vec<usize> {
    let n = cfg.deadline_options;
    if n == 1 {
        return vec![cfg.night_epochs];
    }
    let span = (cfg.night_epochs - subclass_count) as f64;
    (0..n)
        .map(|j| subclass_count + (j as f64 * span / (n - 1) as f64).round() as usize)
        .collect()
}

/// The groups x deadline-options grid. Class `q = g * options + j + 1`.
pub fn build_cluster_specs(cfg: &ScenarioConfig) -> Result<ClusterSet, ScenarioError> {
    cfg.validate()?;
    let mut specs = Vec::new();
    for group in &cfg.groups {
        let pulse = group.pulse(cfg.epoch_minutes);
        let s_max = pulse.len() + 1;
        for k in deadline_grid(s_max, cfg) {
            let q = specs.len() + 1;
            specs.push(ClusterSpec::new(q, group.tag.clone(), pulse.clone(), k, cfg.epoch_minutes)?);
        }
    }
    Ok(ClusterSet::new(specs)?)
}

fn fleet_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

fn wind_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Draw one EV: group and deadline option uniformly, the true deadline
/// uniformly inside the option's bucket, and the required energy from the
/// group's lognormal law, capped at the chain's total.
pub fn sample_request<R: Rng + ?Sized>(
    specs: &ClusterSet,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChargeRequest, ScenarioError> {
    let gi = rng.gen_range(0..cfg.groups.len());
    let group = &cfg.groups[gi];
    let options = cfg.deadline_options;
    let j = rng.gen_range(0..options);
    let spec = specs.class(gi * options + j + 1);
    let next = if j + 1 < options {
        specs.class(gi * options + j + 2).deadline.max(spec.deadline + 1)
    } else {
        cfg.night_epochs + 1
    };
    let deadline = rng.gen_range(spec.deadline..next);
    let lognormal = LogNormal::new(group.energy_mu, group.energy_sigma)
        .map_err(|e| ScenarioError::InvalidConfig(format!("group {}: {e}", group.tag)))?;
    let chain = spec.remaining_energy(1);
    let energy = lognormal.sample(rng).min(chain);
    Ok(ChargeRequest::new(
        Characteristic {
            charge_rate_kw: group.peak_kw,
            battery_kwh: chain,
            deadline_epoch: deadline,
            pulse_tag: group.tag.clone(),
        },
        energy,
    )?)
}

/// Sample a fleet and aggregate it per cluster, sorted by cluster index.
pub fn sample_fleet<R: Rng + ?Sized>(
    specs: &ClusterSet,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<FleetEntry>, ScenarioError> {
    cfg.validate()?;
    let size = if cfg.poisson_fleet_size && cfg.fleet_size_mean > 0 {
        let poisson = Poisson::new(cfg.fleet_size_mean as f64)
            .map_err(|e| ScenarioError::InvalidConfig(format!("fleet size: {e}")))?;
        poisson.sample(rng) as u64
    } else {
        cfg.fleet_size_mean as u64
    };
    let options = ClassifyOptions {
        energy_tolerance: cfg.energy_tolerance,
    };
    let mut counts: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    for _ in 0..size {
        let mut placed = false;
        for _ in 0..cfg.resample_cap.max(1) {
            let request = sample_request(specs, cfg, rng)?;
            match classify(&request, specs, options) {
                Ok(idx) => {
                    let entry = [FleetEntry::new(idx.q, idx.s, 1)];
                    if feasibility_check(&entry, specs).is_empty() {
                        *counts.entry((idx.q, idx.s)).or_default() += 1;
                        placed = true;
                        break;
                    }
                }
                Err(ModelError::InfeasibleRequest { .. } | ModelError::NoMatchingClass { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if !placed {
            return Err(ScenarioError::ResampleLimit(cfg.resample_cap));
        }
    }
    Ok(counts
        .into_iter()
        .map(|((q, s), n)| FleetEntry::new(q, s, n))
        .collect())
}

/// AR(1) dispatch signal clipped to the wind capacity and silenced after the
/// active window. Index `t - 1` holds `a(t)`.
pub fn generate_wind_signal<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<f64> {
    let phi = cfg.wind_ar_coefficient;
    let sigma = cfg.wind_noise_kw;
    if sigma == 0.0 {
        return vec![0.0; cfg.night_epochs];
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x = normal.sample(rng) * sigma / (1.0 - phi * phi).sqrt();
    (1..=cfg.night_epochs)
        .map(|t| {
            if t > 1 {
                x = phi * x + sigma * normal.sample(rng);
            }
            if t <= cfg.wind_active_epochs {
                x.clamp(-cfg.wind_cap_kw, cfg.wind_cap_kw)
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindCsv {
    pub values: Vec<f64>,
    /// Rows whose magnitude exceeded the wind cap and were clipped.
    pub clipped: usize,
}

/// Read a dispatch signal with header `epoch,a_kw`, one row per epoch.
pub fn load_wind_csv(path: &Path, cfg: &ScenarioConfig) -> Result<WindCsv, ScenarioError> {
    let io = |source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    };
    let text = std::fs::read_to_string(path).map_err(io)?;
    parse_wind_csv(&text, cfg)
}

pub fn parse_wind_csv(text: &str, cfg: &ScenarioConfig) -> Result<WindCsv, ScenarioError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header_ok = reader
        .headers()
        .map(|h| h.iter().collect::<Vec<_>>() == ["epoch", "a_kw"])
        .unwrap_or(false);
    if !header_ok {
        return Err(ScenarioError::Parse {
            line: 1,
            message: "expected header `epoch,a_kw`".into(),
        });
    }
    let mut values = Vec::new();
    let mut clipped = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ScenarioError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(ScenarioError::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let epoch: usize = record[0].parse().map_err(|_| ScenarioError::Parse {
            line,
            message: format!("bad epoch {:?}", &record[0]),
        })?;
        if epoch != values.len() + 1 {
            return Err(ScenarioError::Parse {
                line,
                message: format!("epoch {epoch} out of sequence, expected {}", values.len() + 1),
            });
        }
        let a: f64 = record[1].parse().map_err(|_| ScenarioError::Parse {
            line,
            message: format!("bad a_kw {:?}", &record[1]),
        })?;
        if !a.is_finite() {
            return Err(ScenarioError::Parse {
                line,
                message: "a_kw must be finite".into(),
            });
        }
        if a.abs() > cfg.wind_cap_kw {
            clipped += 1;
        }
        values.push(a.clamp(-cfg.wind_cap_kw, cfg.wind_cap_kw));
    }
    if values.len() != cfg.night_epochs {
        return Err(ScenarioError::LengthMismatch {
            expected: cfg.night_epochs,
            found: values.len(),
        });
    }
    if clipped > 0 {
        log::warn!("clipped {clipped} wind value(s) to +/-{} kW", cfg.wind_cap_kw);
    }
    Ok(WindCsv { values, clipped })
}

/// Everything a simulated night needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub specs: Arc<ClusterSet>,
    pub fleet: Vec<FleetEntry>,
    /// `wind[t - 1] = a(t)`.
    pub wind: Vec<f64>,
}

impl Scenario {
    /// Build specs, fleet and synthetic wind from `cfg.rng_seed`.
    pub fn generate(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let specs = build_cluster_specs(cfg)?;
        let fleet = sample_fleet(&specs, cfg, &mut fleet_rng(cfg.rng_seed))?;
        let wind = generate_wind_signal(cfg, &mut wind_rng(cfg.rng_seed));
        Ok(Self {
            config: cfg.clone(),
            specs: Arc::new(specs),
            fleet,
            wind,
        })
    }

    pub fn with_wind(mut self, wind: Vec<f64>) -> Result<Self, ScenarioError> {
        if wind.len() != self.config.night_epochs {
            return Err(ScenarioError::LengthMismatch {
                expected: self.config.night_epochs,
                found: wind.len(),
            });
        }
        self.wind = wind;
        Ok(self)
    }

    pub fn fleet_size(&self) -> u64 {
        self.fleet.iter().map(|e| e.count as u64).sum()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
