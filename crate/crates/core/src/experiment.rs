//! Structured experiment configs, presets and report files for the runner.
//!
//! A config is a TOML document. [`parse_config`] deserializes and validates
//! it before anything sizeable is built; [`execute`] runs it without touching
//! the filesystem and [`write_reports`] writes `<name>.csv` and `<name>.json`.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::{default_grid, evolve_block, INTEGRATOR_TOL};
use crate::error::{Error, Result};
use crate::fock::{LocalOperator, ModeSpace};
use crate::hamiltonians::{HamiltonianFamily, Schedule, TimeDependentModel};
use crate::interactions::{build_bcs_model, Atom, Interaction, InteractionSpec, LongRangeModel, TermSpec};
use crate::lattice::{CubicBox, DecayFunction, PeriodVector, Site, SiteSet};
use crate::meanfield::{block_expectation, solve_self_consistency, state_block, SolverConfig};
use crate::states::{ergodicity_defect, product_state, CellSpec, CellState};
use crate::verify::{
    energy_density_convergence, lr_bound_check, main_convergence, mixture_convergence, random_time_dependent_model,
};
use crate::C64;

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable overriding `output.dir`.
pub const OUT_DIR_ENV: &str = "LRDYN_OUT_DIR";
const MAX_MODE_BUDGET: usize = 16;
/// Gaps below this count as exact when judging a trend.
const EXACT_GAP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Selfconsistent,
    Lrbound,
    Converge,
    Mixture,
    Density,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Selfconsistent => "selfconsistent",
            ExperimentKind::Lrbound => "lrbound",
            ExperimentKind::Converge => "converge",
            ExperimentKind::Mixture => "mixture",
            ExperimentKind::Density => "density",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub decay: DecayFunction,
    #[serde(default)]
    pub state: StateSpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub probes: ProbeSpecs,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub mixture: Option<MixtureSpec>,
    #[serde(default)]
    pub lrbound: LrBoundSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub spins: usize,
    /// Reduced BCS model added on top of `short` and `atoms`.
    pub bcs: Option<BcsSpec>,
    pub short: Vec<TermSpec>,
    pub short_schedule: Schedule,
    pub atoms: Vec<AtomSpec>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dim: 1,
            spins: 2,
            bcs: None,
            short: Vec::new(),
            short_schedule: Schedule::default(),
            atoms: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcsSpec {
    pub gamma: f64,
    pub mu: f64,
    #[serde(default)]
    pub hopping: f64,
    #[serde(default)]
    pub schedule: Schedule,
}

/// Atom with factors given as term lists; factors are rescaled to unit W-norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub weight: f64,
    pub factors: Vec<Vec<TermSpec>>,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSpec {
    pub period: Vec<usize>,
    pub cell: CellSpec,
}

impl Default for StateSpec {
    fn default() -> Self {
        StateSpec {
            period: vec![1],
            cell: CellSpec::Vacuum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    pub s: f64,
    pub t: f64,
    /// Sample count for `simulate`, end points included.
    pub samples: usize,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec {
            s: 0.0,
            t: 1.0,
            samples: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub ls: Vec<usize>,
    /// Box radius of the self-consistent flow; defaults to the largest L.
    pub box_eff: Option<usize>,
    /// Largest number of modes a box may have; bigger L are dropped.
    pub mode_budget: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ls: vec![0, 1, 2],
            box_eff: None,
            mode_budget: 12,
        }
    }
}

/// Named local probe anchored at `site` (origin by default).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProbeSpec {
    Identity {
        #[serde(default)]
        site: Option<Vec<i64>>,
    },
    /// `a_{x↓} a_{x↑}`.
    Pairing {
        #[serde(default)]
        site: Option<Vec<i64>>,
    },
    Number {
        #[serde(default)]
        spin: usize,
        #[serde(default)]
        site: Option<Vec<i64>>,
    },
    Annihilator {
        #[serde(default)]
        spin: usize,
        #[serde(default)]
        site: Option<Vec<i64>>,
    },
    Creator {
        #[serde(default)]
        spin: usize,
        #[serde(default)]
        site: Option<Vec<i64>>,
    },
    /// `a†_{x,σ} a_{x+e_1,σ}`.
    Hopping {
        #[serde(default)]
        spin: usize,
        #[serde(default)]
        site: Option<Vec<i64>>,
    },
}

impl ProbeSpec {
    fn site(&self) -> &Option<Vec<i64>> {
        match self {
            ProbeSpec::Identity { site }
            | ProbeSpec::Pairing { site }
            | ProbeSpec::Number { site, .. }
            | ProbeSpec::Annihilator { site, .. }
            | ProbeSpec::Creator { site, .. }
            | ProbeSpec::Hopping { site, .. } => site,
        }
    }

    pub fn build(&self, dim: usize, spins: usize, field: &str) -> Result<LocalOperator> {
        let x = match self.site() {
            Some(v) if v.len() != dim => {
                return Err(Error::config(
                    format!("{field}.site"),
                    format!("need {dim} coordinates"),
                ));
            }
            Some(v) => Site(v.clone()),
            None => Site::origin(dim),
        };
        let spin_ok = |spin: usize| {
            if spin < spins {
                Ok(spin)
            } else {
                Err(Error::config(format!("{field}.spin"), format!("must be below {spins}")))
            }
        };
        let one = SiteSet::singleton(x.clone());
        let op = match *self {
            ProbeSpec::Identity { .. } => LocalOperator::identity(one, spins),
            ProbeSpec::Pairing { .. } => {
                if spins != 2 {
                    return Err(Error::config(format!("{field}.kind"), "pairing needs spins = 2"));
                }
                LocalOperator::annihilator(&one, 2, &x, 1)
                    .and_then(|d| Ok(d.mul(&LocalOperator::annihilator(&one, 2, &x, 0)?)))
            }
            ProbeSpec::Number { spin, .. } => LocalOperator::number(&one, spins, &x, spin_ok(spin)?),
            ProbeSpec::Annihilator { spin, .. } => LocalOperator::annihilator(&one, spins, &x, spin_ok(spin)?),
            ProbeSpec::Creator { spin, .. } => LocalOperator::creator(&one, spins, &x, spin_ok(spin)?),
            ProbeSpec::Hopping { spin, .. } => {
                let spin = spin_ok(spin)?;
                let mut e = vec![0; dim];
                e[0] = 1;
                let y = x.shifted(&Site(e));
                let pair = SiteSet::new(vec![x.clone(), y.clone()]);
                LocalOperator::creator(&pair, spins, &x, spin)
                    .and_then(|c| Ok(c.mul(&LocalOperator::annihilator(&pair, spins, &y, spin)?)))
            }
        };
        op.map_err(|e| Error::config(field, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpecs {
    pub a: ProbeSpec,
    pub b: ProbeSpec,
}

impl Default for ProbeSpecs {
    fn default() -> Self {
        ProbeSpecs {
            a: ProbeSpec::Pairing { site: None },
            b: ProbeSpec::Identity { site: None },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
    /// Accept components that agree on every probe.
    #[serde(default)]
    pub allow_duplicates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub cell: CellSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrBoundSpec {
    pub draws: usize,
    /// Largest spinless box radius; spinful draws use radius 1.
    pub max_radius: usize,
}

impl Default for LrBoundSpec {
    fn default() -> Self {
        LrBoundSpec {
            draws: 20,
            max_radius: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
        }
    }
}

fn under(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { field, message } => Error::config(format!("{prefix}.{field}"), message),
        Error::Invalid(msg) | Error::Geometry(msg) => Error::config(prefix, msg),
        other => other,
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, "must be finite"))
    }
}

fn modes(dim: usize, l: usize, spins: usize) -> usize {
    (2 * l + 1).pow(dim as u32) * spins
}

impl ExperimentConfig {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.as_str().to_string())
    }

    /// Cheap structural checks; nothing larger than a cell is built.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.dim == 0 || m.dim > 3 {
            return Err(Error::config("model.dim", "must be 1, 2 or 3"));
        }
        if m.spins == 0 || m.spins > 2 {
            return Err(Error::config("model.spins", "must be 1 or 2"));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(Error::config("name", "must be a nonempty file stem"));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        self.decay.validate().map_err(|e| under("decay", e))?;
        self.solver.validate()?;
        finite("time.s", self.time.s)?;
        finite("time.t", self.time.t)?;
        if self.time.t < self.time.s {
            return Err(Error::config("time.t", "must not precede time.s"));
        }
        if self.time.samples == 0 {
            return Err(Error::config("time.samples", "must be at least 1"));
        }
        if self.sweep.ls.is_empty() {
            return Err(Error::config("sweep.ls", "needs at least one box radius"));
        }
        if self.sweep.mode_budget == 0 || self.sweep.mode_budget > MAX_MODE_BUDGET {
            return Err(Error::config(
                "sweep.mode_budget",
                format!("must lie in 1..={MAX_MODE_BUDGET}"),
            ));
        }
        if let Some(b) = self.sweep.box_eff {
            if modes(m.dim, b, m.spins) > self.sweep.mode_budget {
                return Err(Error::config("sweep.box_eff", "exceeds the mode budget"));
            }
        }
        if self.state.period.len() != m.dim {
            return Err(Error::config("state.period", format!("needs {} entries", m.dim)));
        }
        let cell_modes = self.state.period.iter().product::<usize>() * m.spins;
        if self.state.period.contains(&0) || cell_modes > MAX_MODE_BUDGET {
            return Err(Error::config(
                "state.period",
                "cells must be nonempty and fit the mode budget",
            ));
        }
        self.model()?;
        self.cell()?;
        self.probes.a.build(m.dim, m.spins, "probes.a")?;
        self.probes.b.build(m.dim, m.spins, "probes.b")?;
        match self.kind {
            ExperimentKind::Mixture => {
                let mix = self
                    .mixture
                    .as_ref()
                    .ok_or_else(|| Error::config("mixture", "required for kind = mixture"))?;
                self.components(mix)?;
            }
            ExperimentKind::Lrbound => {
                if self.lrbound.draws == 0 {
                    return Err(Error::config("lrbound.draws", "must be at least 1"));
                }
                if self.lrbound.max_radius == 0 || modes(m.dim, self.lrbound.max_radius, 1) > MAX_MODE_BUDGET {
                    return Err(Error::config(
                        "lrbound.max_radius",
                        "must be positive and fit the mode budget",
                    ));
                }
            }
            ExperimentKind::Density if m.short.is_empty() && m.bcs.is_none() => {
                return Err(Error::config("model.short", "density sweeps need a short-range part"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn model(&self) -> Result<TimeDependentModel> {
        let m = &self.model;
        let (dim, spins) = (m.dim, m.spins);
        let mut short = Vec::new();
        let mut atoms = Vec::new();
        if let Some(b) = &m.bcs {
            if spins != 2 {
                return Err(Error::config("model.bcs", "needs spins = 2"));
            }
            for (f, v) in [("gamma", b.gamma), ("mu", b.mu), ("hopping", b.hopping)] {
                finite(&format!("model.bcs.{f}"), v)?;
            }
            b.schedule.validate().map_err(|e| under("model.bcs.schedule", e))?;
            let bcs =
                build_bcs_model(dim, b.gamma, b.mu, Some(b.hopping), &self.decay).map_err(|e| under("model.bcs", e))?;
            short.push((bcs.short, Schedule::default()));
            atoms.extend(bcs.atoms.into_iter().map(|a| (a, b.schedule.clone())));
        }
        let extra = InteractionSpec {
            dim,
            spins,
            terms: m.short.clone(),
        }
        .build()
        .map_err(|e| under("model.short", e))?;
        m.short_schedule
            .validate()
            .map_err(|e| under("model.short_schedule", e))?;
        if !extra.is_zero() || short.is_empty() {
            short.push((extra, m.short_schedule.clone()));
        }
        for (i, a) in m.atoms.iter().enumerate() {
            let field = format!("model.atoms[{i}]");
            finite(&format!("{field}.weight"), a.weight)?;
            a.schedule
                .validate()
                .map_err(|e| under(&format!("{field}.schedule"), e))?;
            if a.factors.is_empty() {
                return Err(Error::config(format!("{field}.factors"), "needs at least one factor"));
            }
            let factors = a
                .factors
                .iter()
                .enumerate()
                .map(|(k, terms)| {
                    InteractionSpec {
                        dim,
                        spins,
                        terms: terms.clone(),
                    }
                    .build()
                    .map_err(|e| under(&format!("{field}.factors[{k}]"), e))
                })
                .collect::<Result<Vec<Interaction>>>()?;
            atoms.push((
                Atom::normalized(a.weight, factors, &self.decay).map_err(|e| under(&field, e))?,
                a.schedule.clone(),
            ));
        }
        let model = TimeDependentModel { short, atoms };
        let snapshot: LongRangeModel = model.at(self.time.s).map_err(|e| under("model", e))?;
        snapshot.validate(&self.decay).map_err(|e| under("model.atoms", e))?;
        Ok(model)
    }

    pub fn period(&self) -> Result<PeriodVector> {
        PeriodVector::new(self.state.period.clone()).map_err(|e| under("state.period", e))
    }

    pub fn cell(&self) -> Result<CellState> {
        CellState::from_spec(&self.state.cell, &self.period()?, self.model.spins)
    }

    fn components(&self, mix: &MixtureSpec) -> Result<Vec<(f64, CellState)>> {
        if mix.components.is_empty() {
            return Err(Error::config("mixture.components", "needs at least one component"));
        }
        let period = self.period()?;
        let mut total = 0.0;
        let mut out = Vec::new();
        for (i, c) in mix.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::config(
                    format!("mixture.components[{i}].weight"),
                    "must be positive",
                ));
            }
            total += c.weight;
            let cell = CellState::from_spec(&c.cell, &period, self.model.spins)
                .map_err(|e| under(&format!("mixture.components[{i}]"), e))?;
            out.push((c.weight, cell));
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(
                "mixture.components",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        Ok(out)
    }

    /// Sweep radii that fit the mode budget, sorted and deduplicated.
    pub fn feasible_ls(&self) -> Vec<usize> {
        let mut ls: Vec<usize> = self
            .sweep
            .ls
            .iter()
            .copied()
            .filter(|&l| modes(self.model.dim, l, self.model.spins) <= self.sweep.mode_budget)
            .collect();
        ls.sort_unstable();
        ls.dedup();
        ls
    }
}

/// Dotted path of the key at byte `pos`: the enclosing table header plus the
/// key on that line.
fn field_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let before = &text[..pos];
    let line_end = text[pos..].find('\n').map_or(text.len(), |i| pos + i);
    let mut table = String::new();
    for line in text[..line_end].lines() {
        let l = line.trim();
        if l.starts_with('[') {
            table = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
    }
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = match line.split_once('=') {
        Some((k, _)) if !line.trim_start().starts_with('[') => k.trim().to_string(),
        _ => String::new(),
    };
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "config".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

/// Deserializes and validates a TOML config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().trim().to_string();
        let named = msg.split('`').nth(1).filter(|_| msg.contains("field"));
        let at = e.span().map(|sp| field_at(text, sp.start));
        let field = match (at, named) {
            (Some(at), Some(name)) if msg.starts_with("missing") && at != "config" => format!("{at}.{name}"),
            (Some(at), None) => at,
            (Some(at), Some(name)) if at.ends_with(name) => at,
            (Some(at), Some(name)) if msg.starts_with("unknown field") => match at.rsplit_once('.') {
                Some((table, _)) => format!("{table}.{name}"),
                None => name.to_string(),
            },
            (_, Some(name)) => name.to_string(),
            (None, None) => "config".into(),
        };
        Error::config(field, msg)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// A bundled configuration.
#[derive(Clone, Copy, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    /// Documented wall-clock budget.
    pub budget_seconds: f64,
    pub toml: &'static str,
}

static PRESETS: [Preset; 6] = [
    Preset {
        name: "smoke",
        description: "one-site BCS box at t = 0; checks the pipeline end to end",
        budget_seconds: 1.0,
        toml: include_str!("../presets/smoke.toml"),
    },
    Preset {
        name: "bcs-converge",
        description: "flagship 1D spinful BCS gap sweep over L = 0, 1, 2 up to t = 1",
        budget_seconds: 600.0,
        toml: include_str!("../presets/bcs-converge.toml"),
    },
    Preset {
        name: "bcs-selfconsistent",
        description: "self-consistent pairing flow of a one-site BCS cell on [0, 2]",
        budget_seconds: 60.0,
        toml: include_str!("../presets/bcs-selfconsistent.toml"),
    },
    Preset {
        name: "lr-sweep",
        description: "commutator bound on randomized time-dependent models",
        budget_seconds: 120.0,
        toml: include_str!("../presets/lr-sweep.toml"),
    },
    Preset {
        name: "density-sweep",
        description: "energy-density and ergodicity gaps of a spinless period-2 product state",
        budget_seconds: 60.0,
        toml: include_str!("../presets/density-sweep.toml"),
    },
    Preset {
        name: "mixture-demo",
        description: "two-phase BCS mixture: per-fiber and mixed gaps",
        budget_seconds: 600.0,
        toml: include_str!("../presets/mixture-demo.toml"),
    },
];

pub fn presets() -> &'static [Preset] {
    &PRESETS
}

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// One asserted property of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Property {
    pub name: String,
    pub passes: bool,
    pub detail: String,
}

impl Property {
    fn new(name: &str, passes: bool, detail: impl Into<String>) -> Self {
        Property {
            name: name.to_string(),
            passes,
            detail: detail.into(),
        }
    }
}

/// Result of [`execute`]: deterministic CSV body, properties and a JSON payload.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub csv: String,
    pub properties: Vec<Property>,
    pub warnings: Vec<String>,
    pub result: serde_json::Value,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passes)
    }

    /// Process exit status: 0 when every property holds, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn decreasing_or_exact(gaps: &[f64]) -> bool {
    gaps.iter().all(|g| *g <= EXACT_GAP) || gaps.windows(2).all(|w| w[1] < w[0])
}

/// Plateaus are allowed: with period > 1 neighbouring radii can hold the same translates.
fn non_increasing(values: &[f64]) -> bool {
    values.iter().all(|v| *v <= EXACT_GAP)
        || (values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)) && values[values.len() - 1] < values[0])
}

fn space(dim: usize, l: usize, spins: usize) -> Result<ModeSpace> {
    ModeSpace::new(CubicBox::new(dim, l)?, spins)
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let ls = cfg.feasible_ls();
    let sweeps = !matches!(cfg.kind, ExperimentKind::Lrbound);
    if sweeps {
        if ls.is_empty() {
            return Err(Error::ResourceLimit(format!(
                "no radius in `sweep.ls` fits `sweep.mode_budget` = {}",
                cfg.sweep.mode_budget
            )));
        }
        let dropped = cfg.sweep.ls.len() - ls.len();
        if dropped > 0 {
            warnings.push(format!(
                "sweep.ls: {dropped} radius value(s) dropped by the mode budget or as duplicates"
            ));
        }
        let trend_kind = matches!(
            cfg.kind,
            ExperimentKind::Converge | ExperimentKind::Mixture | ExperimentKind::Density
        );
        if trend_kind && ls.len() < 3 {
            warnings.push(format!(
                "sweep.ls: only {} feasible point(s); a trend over fewer than 3 is weak evidence",
                ls.len()
            ));
        }
    }
    let run = match cfg.kind {
        ExperimentKind::Simulate => simulate(cfg, &ls),
        ExperimentKind::Selfconsistent => selfconsistent(cfg, &ls),
        ExperimentKind::Lrbound => lrbound(cfg),
        ExperimentKind::Converge => converge(cfg, &ls),
        ExperimentKind::Mixture => mixture(cfg, &ls),
        ExperimentKind::Density => density(cfg, &ls),
    };
    let (csv, properties, result) = match run {
        Ok(v) => v,
        Err(e @ Error::NonConvergence { .. }) => (
            String::new(),
            vec![Property::new("self-consistency", false, e.to_string())],
            serde_json::Value::Null,
        ),
        Err(e) => return Err(e),
    };
    Ok(Outcome {
        csv,
        properties,
        warnings,
        result,
    })
}

type Parts = (String, Vec<Property>, serde_json::Value);

fn probes(cfg: &ExperimentConfig) -> Result<(LocalOperator, LocalOperator)> {
    let (dim, spins) = (cfg.model.dim, cfg.model.spins);
    Ok((
        cfg.probes.a.build(dim, spins, "probes.a")?,
        cfg.probes.b.build(dim, spins, "probes.b")?,
    ))
}

fn fits(op: &LocalOperator, sp: &ModeSpace, field: &str, l: usize) -> Result<()> {
    if sp.cube().contains_set(op.sites()) {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("support {} leaves the box L = {l}", op.sites()),
        ))
    }
}

fn simulate(cfg: &ExperimentConfig, ls: &[usize]) -> Result<Parts> {
    let model = cfg.model()?;
    let cell = cfg.cell()?;
    let (a, _) = probes(cfg)?;
    let (s, t, n) = (cfg.time.s, cfg.time.t, cfg.time.samples);
    let times: Vec<f64> = if n == 1 || s == t {
        vec![s]
    } else {
        (0..n)
            .map(|k| {
                if k + 1 == n {
                    t
                } else {
                    s + (t - s) * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    };
    let rows = ls
        .par_iter()
        .map(|&l| {
            let sp = space(cfg.model.dim, l, cfg.model.spins)?;
            fits(&a, &sp, "probes.a", l)?;
            let fam = HamiltonianFamily::from_model(&model, &sp)?;
            let aa = a.embed(&sp)?.to_csr();
            let mut block = state_block(product_state(&cell, &sp)?.repr());
            let mut out = Vec::new();
            let mut prev = s;
            for &x in &times {
                if x > prev {
                    block = evolve_block(&fam, &default_grid(&fam, prev, x)?, block, |_, _, _| {});
                    prev = x;
                }
                let norm = ((block.adjoint() * &block).trace() - C64::new(1.0, 0.0)).norm();
                out.push((l, x, block_expectation(&aa, &block), norm));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("l,t,re_a,im_a,norm_defect\n");
    let mut worst: f64 = 0.0;
    let mut json_rows = Vec::new();
    for (l, x, v, d) in rows.into_iter().flatten() {
        csv.push_str(&format!("{l},{},{},{},{}\n", num(x), num(v.re), num(v.im), num(d)));
        worst = worst.max(d);
        json_rows.push(json!({"l": l, "t": x, "value": [v.re, v.im], "norm_defect": d}));
    }
    let props = vec![Property::new(
        "unitarity",
        worst <= 1e-9,
        format!("max norm defect {worst:e}"),
    )];
    Ok((csv, props, json!({ "samples": json_rows })))
}

fn selfconsistent(cfg: &ExperimentConfig, ls: &[usize]) -> Result<Parts> {
    let l = cfg.sweep.box_eff.unwrap_or(*ls.last().expect("nonempty sweep"));
    let sp = space(cfg.model.dim, l, cfg.model.spins)?;
    let rho = product_state(&cfg.cell()?, &sp)?;
    let flow = solve_self_consistency(&cfg.model()?, &rho, cfg.time.s, cfg.time.t, &cfg.solver)?;
    let worst = flow
        .chunks
        .iter()
        .filter_map(|c| c.defects.last().copied())
        .fold(0.0, f64::max);
    let chunk_ok = flow
        .chunks
        .iter()
        .all(|c| c.end - c.start <= cfg.solver.max_subinterval * (1.0 + 1e-12));
    let props = vec![
        Property::new(
            "picard-tolerance",
            worst <= cfg.solver.tol,
            format!("largest final defect {worst:e}"),
        ),
        Property::new(
            "picard-iterations",
            flow.iterations() <= cfg.solver.max_iter,
            format!("{} iterations at most per chunk", flow.iterations()),
        ),
        Property::new("chunk-length", chunk_ok, format!("{} chunks", flow.chunks.len())),
    ];
    Ok((
        flow.to_csv(),
        props,
        serde_json::to_value(flow.record()).expect("serializable"),
    ))
}

fn lrbound(cfg: &ExperimentConfig) -> Result<Parts> {
    let dim = cfg.model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draws = Vec::with_capacity(cfg.lrbound.draws);
    for _ in 0..cfg.lrbound.draws {
        let spins = rng.gen_range(1..=2);
        let l = if spins == 2 {
            1
        } else {
            rng.gen_range(1..=cfg.lrbound.max_radius)
        };
        let model = random_time_dependent_model(dim, spins, &cfg.decay, &mut rng)?;
        let phi = Interaction::random_ti(dim, spins, 1, &mut rng)?;
        let a = LocalOperator::random(
            SiteSet::singleton(Site::origin(dim)),
            spins,
            rng.gen_bool(0.5),
            &mut rng,
        )?;
        let s = rng.gen_range(0.0..1.0);
        let t = s + rng.gen_range(0.0..1.0);
        draws.push((spins, l, model, phi, a, s, t));
    }
    let reports = draws
        .par_iter()
        .map(|(spins, l, model, phi, a, s, t)| {
            let sp = space(dim, *l, *spins)?;
            lr_bound_check(model, phi, &a.embed(&sp)?, *s, *t, &cfg.decay, sp.cube())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("draw,spins,l,s,t,lhs,rhs,ratio,passes\n");
    for (i, (r, d)) in reports.iter().zip(&draws).enumerate() {
        csv.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            d.0,
            d.1,
            num(r.s),
            num(r.t),
            num(r.lhs),
            num(r.rhs),
            num(r.ratio),
            r.passes
        ));
    }
    let failures = reports.iter().filter(|r| !r.passes).count();
    let worst = reports.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let props = vec![Property::new(
        "lieb-robinson",
        failures == 0,
        format!(
            "{failures} violation(s) in {} draws; largest lhs/rhs {worst:e}",
            reports.len()
        ),
    )];
    Ok((csv, props, json!({ "draws": reports })))
}

fn converge(cfg: &ExperimentConfig, ls: &[usize]) -> Result<Parts> {
    let model = cfg.model()?;
    let (a, b) = probes(cfg)?;
    let report = main_convergence(
        &model,
        &cfg.cell()?,
        &a,
        &b,
        cfg.time.s,
        cfg.time.t,
        ls,
        cfg.sweep.box_eff,
        &cfg.solver,
    )
    .map_err(|e| match e {
        Error::Geometry(msg) => Error::config("probes", msg),
        other => other,
    })?;
    let mut csv = String::from("l,modes,re_full,im_full,re_effective,im_effective,gap,steps\n");
    for e in &report.entries {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.l,
            e.modes,
            num(e.full.re),
            num(e.full.im),
            num(e.effective.re),
            num(e.effective.im),
            num(e.gap),
            e.steps
        ));
    }
    let gaps = report.gaps();
    let mut props = vec![Property::new(
        "picard-tolerance",
        report.flow_defect <= cfg.solver.tol,
        format!("final defect {:e}", report.flow_defect),
    )];
    if model.atoms.is_empty() {
        let worst = gaps.iter().copied().fold(0.0, f64::max);
        props.push(Property::new(
            "zero-gap",
            worst <= 2.0 * INTEGRATOR_TOL,
            format!("largest gap {worst:e}"),
        ));
    } else {
        props.push(Property::new(
            "gap-trend",
            decreasing_or_exact(&gaps),
            format!("gaps {gaps:?}"),
        ));
    }
    Ok((csv, props, serde_json::to_value(&report).expect("serializable")))
}

fn mixture(cfg: &ExperimentConfig, ls: &[usize]) -> Result<Parts> {
    let mix = cfg.mixture.as_ref().expect("validated");
    let comps = cfg.components(mix)?;
    let (a, b) = probes(cfg)?;
    let report = mixture_convergence(
        &comps,
        mix.allow_duplicates,
        &cfg.model()?,
        &a,
        &b,
        cfg.time.s,
        cfg.time.t,
        ls,
        cfg.sweep.box_eff,
        &cfg.solver,
    )
    .map_err(|e| match e {
        Error::Invalid(msg) => Error::config("mixture.components", msg),
        other => other,
    })?;
    let mut csv = String::from("component,l,re_full,im_full,re_effective,im_effective,gap\n");
    let mut row = |who: &str, l: usize, full: C64, eff: C64, gap: f64| {
        csv.push_str(&format!(
            "{who},{l},{},{},{},{},{}\n",
            num(full.re),
            num(full.im),
            num(eff.re),
            num(eff.im),
            num(gap)
        ));
    };
    for (i, f) in report.fibers.iter().enumerate() {
        for e in &f.entries {
            row(&i.to_string(), e.l, e.full, e.effective, e.gap);
        }
    }
    for e in &report.mixed {
        row("mixed", e.l, e.full, e.effective, e.gap);
    }
    let gaps: Vec<f64> = report.mixed.iter().map(|e| e.gap).collect();
    let props = vec![Property::new(
        "mixed-gap-trend",
        decreasing_or_exact(&gaps),
        format!("gaps {gaps:?}"),
    )];
    Ok((csv, props, serde_json::to_value(&report).expect("serializable")))
}

fn density(cfg: &ExperimentConfig, ls: &[usize]) -> Result<Parts> {
    let phi = cfg.model()?.at(cfg.time.s)?.short;
    let cell = cfg.cell()?;
    let period = cfg.period()?;
    let (a, b) = probes(cfg)?;
    let gaps = energy_density_convergence(&phi, &cell, &b, ls).map_err(|e| match e {
        Error::Geometry(msg) => Error::config("probes.b", msg),
        other => other,
    })?;
    let ergodic = ls
        .par_iter()
        .map(|&l| {
            let sp = space(cfg.model.dim, l, cfg.model.spins)?;
            fits(&a, &sp, "probes.a", l)?;
            ergodicity_defect(&product_state(&cell, &sp)?, &a.embed(&sp)?, &period)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut csv = String::from("l,re_value,im_value,re_reference,im_reference,gap,ergodicity_defect\n");
    for (g, d) in gaps.iter().zip(&ergodic) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            g.l,
            num(g.value.re),
            num(g.value.im),
            num(g.reference.re),
            num(g.reference.im),
            num(g.gap),
            num(*d)
        ));
    }
    let gap_values: Vec<f64> = gaps.iter().map(|g| g.gap).collect();
    let props = vec![
        Property::new(
            "density-gap-trend",
            decreasing_or_exact(&gap_values),
            format!("gaps {gap_values:?}"),
        ),
        Property::new(
            "ergodicity-trend",
            non_increasing(&ergodic),
            format!("defects {ergodic:?}"),
        ),
    ];
    Ok((csv, props, json!({ "gaps": gaps, "ergodicity_defects": ergodic })))
}

/// Output directory: explicit override, then the environment, then the config.
pub fn output_dir(cfg: &ExperimentConfig, cli: Option<&Path>) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => cfg.output.dir.clone(),
    }
}

/// JSON summary. Wall-clock data lives under `meta` only.
pub fn summary(cfg: &ExperimentConfig, outcome: &Outcome, elapsed_seconds: f64) -> serde_json::Value {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name(),
        "kind": cfg.kind.as_str(),
        "seed": cfg.seed,
        "passed": outcome.passed(),
        "properties": outcome.properties,
        "warnings": outcome.warnings,
        "config": cfg,
        "result": outcome.result,
        "meta": {
            "created_unix": created,
            "elapsed_seconds": elapsed_seconds,
            "threads": rayon::current_num_threads(),
            "version": env!("CARGO_PKG_VERSION"),
        },
    })
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.json`; returns both paths.
pub fn write_reports(
    cfg: &ExperimentConfig,
    outcome: &Outcome,
    dir: &Path,
    elapsed_seconds: f64,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{}.csv", cfg.name()));
    let json_path = dir.join(format!("{}.json", cfg.name()));
    std::fs::write(&csv, &outcome.csv)?;
    let text = serde_json::to_string_pretty(&summary(cfg, outcome, elapsed_seconds)).expect("serializable");
    std::fs::write(&json_path, text + "\n")?;
    Ok((csv, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(presets().len() >= 6);
        for p in presets() {
            let cfg = parse_config(p.toml).unwrap_or_else(|e| panic!("{}: {e}", p.name));
            assert_eq!(cfg.name(), p.name);
        }
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("kind = \"converge\"\n[time]\ns = 1.0\nt = 0.5\n", "time.t"),
            ("kind = \"converge\"\n[sweep]\nls = []\n", "sweep.ls"),
            ("kind = \"converge\"\nbogus = 3\n", "bogus"),
            ("kind = \"mixture\"\n", "mixture"),
            ("kind = \"converge\"\n[model]\nspins = 1\n", "probes.a.kind"),
            ("kind = \"converge\"\n[solver]\ntol = -1.0\n", "solver.tol"),
            ("kind = \"converge\"\n[state]\nperiod = [1, 1]\n", "state.period"),
            (
                "kind = \"converge\"\n[[model.short]]\nfamily = \"pairing\"\nadjoint = 3\n",
                "model.short",
            ),
            ("kind = \"teleport\"\n", "`kind`"),
            ("kind = \"converge\"\n[solver]\ntoll = 1.0\n", "solver.toll"),
            (
                "kind = \"mixture\"\n[mixture]\nallow_duplicates = true\n",
                "mixture.components",
            ),
        ];
        for (text, field) in cases {
            let e = parse_config(text).unwrap_err();
            assert!(e.to_string().contains(field), "{text:?} gave {e}");
        }
    }

    #[test]
    fn csv_floats_have_seventeen_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn smoke_runs_and_passes() {
        let cfg = parse_config(preset("smoke").unwrap().toml).unwrap();
        let out = execute(&cfg).unwrap();
        assert!(out.passed(), "{:?}", out.properties);
        assert_eq!(out.csv.lines().count(), 2);
    }

    #[test]
    fn sweeps_over_budget_are_resource_errors() {
        let cfg = parse_config("kind = \"converge\"\n[model.bcs]\ngamma = 1.0\nmu = 0.5\n[sweep]\nls = [9]\n").unwrap();
        assert!(matches!(execute(&cfg), Err(Error::ResourceLimit(_))));
    }
}
