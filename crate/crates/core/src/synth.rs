//! Synthetic credit panels with a planted credit → mortality signal.
//!
//! Each person carries a latent health index `h_t = ρ·h_{t−1} + ε_t`
//! (ρ = 0.9, unit innovations). Variables in the signal groups load on the
//! exponentially filtered index `m_t = h_t + δ·m_{t−1}` (standardized), so a
//! snapshot taken `k` years back still carries information about today's
//! health. Death in year `t+1` has probability
//! `logistic(logit(base(age_t)) + β·h_t − β²·Var(h)/2)`; the last term keeps
//! the marginal rate close to the base hazard for rare events.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::panel::{
    GroupCode, PanelDataset, PersonHistory, Snapshot, StateCode, ValueKind, VariableCatalog,
    US_STATES,
};
use crate::rng::{domain, stream};

pub const HEALTH_PERSISTENCE: f64 = 0.9;
const BURN_IN_YEARS: usize = 40;

/// Annual death probability by age band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardTable {
    bands: Vec<(u16, u16, f64)>,
}

impl HazardTable {
    pub fn new(bands: Vec<(u16, u16, f64)>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Config("empty hazard table".into()));
        }
        for &(lo, hi, p) in &bands {
            if lo > hi || !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("bad hazard band {lo}-{hi}:{p}")));
            }
        }
        for w in bands.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::Config("hazard bands overlap or are unsorted".into()));
            }
        }
        Ok(HazardTable { bands })
    }

    /// Gompertz-like hazard doubling every 8 years, evaluated at 5-year
    /// band midpoints aligned with the reporting cohorts; the 81-100
    /// cohort lands near 3 % per year.
    pub fn gompertz() -> Self {
        let p = |age: f64| (0.018 * 2f64.powf((age - 83.0) / 8.0)).min(0.6);
        let mut bands = vec![(0u16, 20u16)];
        let mut lo = 21;
        while lo <= 96 {
            bands.push((lo, lo + 4));
            lo += 5;
        }
        bands.push((101, 120));
        let bands = bands
            .into_iter()
            .map(|(lo, hi)| {
                let mid = if lo == 0 { 19.0 } else if hi == 120 { 103.0 } else { (lo + hi) as f64 / 2.0 };
                (lo, hi, p(mid))
            })
            .collect();
        HazardTable { bands }
    }

    pub fn bands(&self) -> &[(u16, u16, f64)] {
        &self.bands
    }

    pub fn prob(&self, age: u16) -> f64 {
        for &(lo, hi, p) in &self.bands {
            if age < lo {
                return p;
            }
            if age <= hi {
                return p;
            }
        }
        self.bands.last().map_or(0.0, |b| b.2)
    }

    /// Parses `lo-hi:p,lo-hi:p,...`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut bands = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let bad = || Error::Config(format!("bad hazard band \"{part}\""));
            let (range, p) = part.split_once(':').ok_or_else(bad)?;
            let (lo, hi) = range.split_once('-').ok_or_else(bad)?;
            bands.push((
                lo.trim().parse().map_err(|_| bad())?,
                hi.trim().parse().map_err(|_| bad())?,
                p.trim().parse().map_err(|_| bad())?,
            ));
        }
        Self::new(bands)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_persons: usize,
    pub years: (i32, i32),
    pub base_hazard: HazardTable,
    /// β: log-odds effect of one unit of latent health.
    pub signal_strength: f64,
    /// δ ∈ (0, 1]: memory of the filtered health index credit loads on.
    pub lag_decay: f64,
    pub signal_groups: Vec<GroupCode>,
    pub seed: u64,
    pub catalog: VariableCatalog,
    /// Range of |loading| of a signal variable on the standardized index.
    pub loading: (f64, f64),
    pub missing_rate: f64,
    pub gap_rate: f64,
    pub move_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_persons: 200_000,
            years: (2004, 2016),
            base_hazard: HazardTable::gompertz(),
            signal_strength: 0.8,
            lag_decay: 0.3,
            signal_groups: ["BCA", "BCC", "BRC", "REV"]
                .iter()
                .map(|c| GroupCode::parse(c).expect("known group"))
                .collect(),
            seed: 20_120_101,
            catalog: VariableCatalog::full(),
            loading: (0.75, 0.85),
            missing_rate: 0.02,
            gap_rate: 0.01,
            move_rate: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_persons < 1 {
            return bad("n_persons must be >= 1");
        }
        if self.years.0 >= self.years.1 {
            return bad("years must span at least two calendar years");
        }
        if !(self.signal_strength >= 0.0) {
            return bad("signal_strength must be >= 0");
        }
        if !(self.lag_decay > 0.0 && self.lag_decay <= 1.0) {
            return bad("lag_decay must be in (0, 1]");
        }
        let (lo, hi) = self.loading;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("loading range must satisfy 0 <= min <= max <= 1");
        }
        for (name, p) in [
            ("missing_rate", self.missing_rate),
            ("gap_rate", self.gap_rate),
            ("move_rate", self.move_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be a probability")));
            }
        }
        Ok(())
    }

    /// Keys: n_persons, start_year, end_year, signal_strength, lag_decay,
    /// signal_groups, seed, vars_per_group, base_hazard, loading_min,
    /// loading_max, missing_rate, gap_rate, move_rate.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        kv.reject_unknown(&[
            "n_persons",
            "start_year",
            "end_year",
            "signal_strength",
            "lag_decay",
            "signal_groups",
            "seed",
            "vars_per_group",
            "base_hazard",
            "loading_min",
            "loading_max",
            "missing_rate",
            "gap_rate",
            "move_rate",
        ])?;
        let d = SynthConfig::default();
        let signal_groups = match kv.get("signal_groups") {
            Some(s) => s
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(|c| GroupCode::parse(c).ok_or_else(|| Error::Config(format!("unknown group \"{c}\""))))
                .collect::<Result<_>>()?,
            None => d.signal_groups,
        };
        let catalog = match kv.parse::<usize>("vars_per_group")? {
            Some(k) if k >= 1 => VariableCatalog::synthetic(k, 0),
            Some(_) => return Err(Error::Config("vars_per_group must be >= 1".into())),
            None => d.catalog,
        };
        let base_hazard = match kv.get("base_hazard") {
            Some(s) => HazardTable::parse(s)?,
            None => d.base_hazard,
        };
        let cfg = SynthConfig {
            n_persons: kv.parse("n_persons")?.unwrap_or(d.n_persons),
            years: (
                kv.parse("start_year")?.unwrap_or(d.years.0),
                kv.parse("end_year")?.unwrap_or(d.years.1),
            ),
            base_hazard,
            signal_strength: kv.parse("signal_strength")?.unwrap_or(d.signal_strength),
            lag_decay: kv.parse("lag_decay")?.unwrap_or(d.lag_decay),
            signal_groups,
            seed: kv.parse("seed")?.unwrap_or(d.seed),
            catalog,
            loading: (
                kv.parse("loading_min")?.unwrap_or(d.loading.0),
                kv.parse("loading_max")?.unwrap_or(d.loading.1),
            ),
            missing_rate: kv.parse("missing_rate")?.unwrap_or(d.missing_rate),
            gap_rate: kv.parse("gap_rate")?.unwrap_or(d.gap_rate),
            move_rate: kv.parse("move_rate")?.unwrap_or(d.move_rate),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn health_variance(&self) -> f64 {
        1.0 / (1.0 - HEALTH_PERSISTENCE * HEALTH_PERSISTENCE)
    }

    /// Stationary variance of `m_t = h_t + δ m_{t−1}`.
    pub fn filtered_variance(&self) -> f64 {
        let (r, d) = (HEALTH_PERSISTENCE, self.lag_decay);
        if d >= 1.0 {
            // Not stationary; scale by the span of the panel instead.
            let span = (self.years.1 - self.years.0) as f64 + BURN_IN_YEARS as f64;
            return self.health_variance() * span;
        }
        self.health_variance() * (1.0 + r * d) / ((1.0 - d * d) * (1.0 - r * d))
    }
}

/// Per-variable generation recipe.
#[derive(Debug, Clone, Copy)]
struct VariableModel {
    loading: f64,
    log_scale: f64,
    log_location: f64,
    kind: ValueKind,
}

fn variable_models(cfg: &SynthConfig) -> Vec<VariableModel> {
    let mut rng = stream(cfg.seed, domain::PERSON, u64::MAX);
    cfg.catalog
        .entries()
        .iter()
        .map(|e| {
            let group = e.group.index() as f64;
            let signal = cfg.signal_groups.contains(&e.group);
            let magnitude = cfg.loading.0 + (cfg.loading.1 - cfg.loading.0) * rng.random::<f64>();
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            VariableModel {
                loading: if signal { sign * magnitude } else { 0.0 },
                log_scale: 0.6,
                log_location: match e.value_kind {
                    ValueKind::Count => 1.0,
                    ValueKind::Numeric => 6.0 + 0.1 * group,
                },
                kind: e.value_kind,
            }
        })
        .collect()
}

impl VariableModel {
    fn draw<R: Rng>(&self, rng: &mut R, index: f64) -> f32 {
        let e: f64 = StandardNormal.sample(rng);
        let z = self.loading * index + (1.0 - self.loading * self.loading).sqrt() * e;
        let v = (self.log_location + self.log_scale * z).exp();
        match self.kind {
            ValueKind::Count => v.floor() as f32,
            ValueKind::Numeric => ((v * 100.0).round() / 100.0) as f32,
        }
    }
}

fn initial_age<R: Rng>(rng: &mut R) -> u16 {
    let u: f64 = rng.random();
    let (lo, hi) = if u < 0.30 {
        (18, 39)
    } else if u < 0.75 {
        (40, 64)
    } else if u < 0.94 {
        (65, 79)
    } else {
        (80, 95)
    };
    rng.random_range(lo..=hi)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A generated panel together with each snapshot's latent health `h_t`
/// (aligned with `dataset.persons()[i].snapshots`).
pub struct SynthPanel {
    pub dataset: PanelDataset,
    pub health: Vec<Vec<f64>>,
}

pub fn generate_panel(config: &SynthConfig) -> Result<PanelDataset> {
    Ok(generate_panel_with_health(config)?.dataset)
}

pub fn generate_panel_with_health(config: &SynthConfig) -> Result<SynthPanel> {
    config.validate()?;
    let models = variable_models(config);
    let width = digits(config.n_persons);
    let generated: Vec<(PersonHistory, Vec<f64>)> = (0..config.n_persons)
        .into_par_iter()
        .map(|i| generate_person(config, &models, i, width))
        .collect();
    let (persons, health): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    // Ids are zero-padded, so generation order is already id order.
    let dataset = PanelDataset::new(persons, config.catalog.len())?;
    Ok(SynthPanel { dataset, health })
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

fn generate_person(
    cfg: &SynthConfig,
    models: &[VariableModel],
    index: usize,
    width: usize,
) -> (PersonHistory, Vec<f64>) {
    let mut rng = stream(cfg.seed, domain::PERSON, index as u64);
    let rho = HEALTH_PERSISTENCE;
    let sd_m = cfg.filtered_variance().sqrt();
    let offset = cfg.signal_strength.powi(2) * cfg.health_variance() / 2.0;

    let mut h = 0.0f64;
    let mut m = 0.0f64;
    let burn = if cfg.lag_decay >= 1.0 { 0 } else { BURN_IN_YEARS };
    for _ in 0..burn {
        let e: f64 = StandardNormal.sample(&mut rng);
        h = rho * h + e;
        m = h + cfg.lag_decay * m;
    }

    let mut age = initial_age(&mut rng);
    let mut state = rng.random_range(0..US_STATES.len());
    let mut snaps = Vec::new();
    let mut health = Vec::new();
    let (start, end) = cfg.years;
    let mut dies_this_year = false;
    for year in start..=end {
        if year > start {
            let e: f64 = StandardNormal.sample(&mut rng);
            h = rho * h + e;
            m = h + cfg.lag_decay * m;
            age = (age + 1).min(crate::panel::dataset::MAX_AGE);
            if rng.random::<f64>() < cfg.move_rate {
                let other = rng.random_range(0..US_STATES.len() - 1);
                state = if other >= state { other + 1 } else { other };
            }
        }
        let index_value = m / sd_m;
        let credit: Vec<f32> = models
            .iter()
            .map(|vm| {
                let v = vm.draw(&mut rng, index_value);
                if rng.random::<f64>() < cfg.missing_rate {
                    f32::NAN
                } else {
                    v
                }
            })
            .collect();
        let gap = year > start && !dies_this_year && rng.random::<f64>() < cfg.gap_rate;
        if !gap {
            snaps.push(Snapshot {
                year,
                age,
                state: StateCode::parse(US_STATES[state]).expect("valid state"),
                deceased: dies_this_year,
                credit,
            });
            health.push(h);
        }
        if dies_this_year {
            break;
        }
        let p = sigmoid(logit(cfg.base_hazard.prob(age)) + cfg.signal_strength * h - offset);
        dies_this_year = rng.random::<f64>() < p;
    }
    (
        PersonHistory {
            person_id: format!("P{index:0width$}"),
            snapshots: snaps,
        },
        health,
    )
}
