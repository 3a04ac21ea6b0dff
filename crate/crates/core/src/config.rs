//! Run configuration: a TOML file with a measure block, an initial state, a
//! simulation block, and per-command blocks. Validation reports every
//! violation, not just the first.

use crate::dual::{DualError, DualState, MarkedPartition};
use crate::forward::DiffusionState;
use crate::measure::{DiscretizedMeasure, MeasureError, SeedBankMeasure};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Dual(#[from] DualError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Discrete,
    Gamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    pub shape: f64,
    pub scale: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub kind: MeasureKind,
    /// `[rate, mass]` pairs for the discrete kind.
    pub atoms: Vec<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaConfig>,
    /// Discretization grid; required for gamma measures in commands that need
    /// finitely many banks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            kind: MeasureKind::Discrete,
            atoms: vec![[1.0, 1.0]],
            gamma: None,
            bins: None,
            cutoff: None,
        }
    }
}

/// Initial dormant frequencies: one value for all banks, or one per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum YInit {
    Scalar(f64),
    PerAtom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub x: f64,
    pub y: YInit,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            x: 0.5,
            y: YInit::Scalar(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub reps: u64,
    pub seed: u64,
    pub record_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_max: 1.0,
            reps: 1,
            seed: 0,
            record_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfConfig {
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualInit {
    pub n: u64,
    /// `[rate, multiplicity]` pairs.
    pub flags: Vec<[f64; 2]>,
}

impl Default for DualInit {
    fn default() -> Self {
        DualInit { n: 1, flags: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualConfig {
    pub initial: DualInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoalescentConfig {
    pub sample_size: u32,
    /// Per-block starting flags; all active when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<f64>>,
}

impl Default for CoalescentConfig {
    fn default() -> Self {
        CoalescentConfig {
            sample_size: 2,
            flags: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualityConfig {
    /// Both sides must reach at most this standard error.
    pub target_se: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        DualityConfig { target_se: 0.005 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingConfig {
    /// Absolute tolerance on |embedded mean - moment ODE|.
    pub tolerance: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig { tolerance: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub measure: MeasureConfig,
    pub init: InitConfig,
    pub sim: SimConfig,
    pub wf: WfConfig,
    pub dual: DualConfig,
    pub coalescent: CoalescentConfig,
    pub duality: DualityConfig,
    pub scaling: ScalingConfig,
}

/// Parse and validate; validation reports the full list of violations.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let violations = cfg.validate();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Validation(violations))
    }
}

impl RunConfig {
    /// Every violated invariant, with the offending field named.
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        match self.measure.kind {
            MeasureKind::Discrete => {
                if self.measure.atoms.is_empty() {
                    bad.push("measure.atoms: a discrete measure needs at least one atom".into());
                }
                for (i, [rate, mass]) in self.measure.atoms.iter().enumerate() {
                    if !rate.is_finite() || *rate <= 0.0 {
                        bad.push(format!(
                            "measure.atoms[{i}].rate: {rate} must be positive and finite"
                        ));
                    }
                    if !mass.is_finite() || *mass <= 0.0 {
                        bad.push(format!(
                            "measure.atoms[{i}].mass: {mass} must be positive and finite"
                        ));
                    }
                }
                let mut rates: Vec<f64> = self.measure.atoms.iter().map(|a| a[0]).collect();
                rates.sort_by(f64::total_cmp);
                if rates.windows(2).any(|w| w[0] == w[1]) {
                    bad.push("measure.atoms: rates must be pairwise distinct".into());
                }
            }
            MeasureKind::Gamma => match &self.measure.gamma {
                None => bad.push("measure.gamma: required when kind = \"gamma\"".into()),
                Some(g) => {
                    for (name, v) in [("shape", g.shape), ("scale", g.scale), ("mass", g.mass)] {
                        if !v.is_finite() || v <= 0.0 {
                            bad.push(format!(
                                "measure.gamma.{name}: {v} must be positive and finite"
                            ));
                        }
                    }
                }
            },
        }
        match (self.measure.bins, self.measure.cutoff) {
            (Some(0), _) => bad.push("measure.bins: must be at least 1".into()),
            (Some(_), None) => bad.push("measure.cutoff: required when bins is set".into()),
            (None, Some(_)) => bad.push("measure.bins: required when cutoff is set".into()),
            (Some(_), Some(cut)) if !(cut > 0.0 && cut.is_finite()) => {
                bad.push(format!("measure.cutoff: {cut} must be positive and finite"));
            }
            _ => {}
        }

        if !(0.0..=1.0).contains(&self.init.x) {
            bad.push(format!("init.x: {} must lie in [0, 1]", self.init.x));
        }
        let y_values: &[f64] = match &self.init.y {
            YInit::Scalar(v) => std::slice::from_ref(v),
            YInit::PerAtom(vs) => vs,
        };
        for (i, v) in y_values.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                bad.push(format!("init.y[{i}]: {v} must lie in [0, 1]"));
            }
        }
        if bad.is_empty() {
            // Shape checks that need the resolved atom list.
            if let Ok(d) = self.build_discretized() {
                if let YInit::PerAtom(vs) = &self.init.y {
                    if vs.len() != d.len() {
                        bad.push(format!(
                            "init.y: {} values for {} atoms of the discretized measure",
                            vs.len(),
                            d.len()
                        ));
                    }
                }
                for (i, [rate, mult]) in self.dual.initial.flags.iter().enumerate() {
                    if d.rate_index(*rate).is_none() {
                        bad.push(format!(
                            "dual.initial.flags[{i}]: rate {rate} is not an atom of the measure"
                        ));
                    }
                    if *mult < 1.0 || mult.fract() != 0.0 {
                        bad.push(format!(
                            "dual.initial.flags[{i}]: multiplicity {mult} must be a positive integer"
                        ));
                    }
                }
                if let Some(flags) = &self.coalescent.flags {
                    if flags.len() != self.coalescent.sample_size as usize {
                        bad.push(format!(
                            "coalescent.flags: {} values for sample_size {}",
                            flags.len(),
                            self.coalescent.sample_size
                        ));
                    }
                    for (i, f) in flags.iter().enumerate() {
                        if *f != 0.0 && d.rate_index(*f).is_none() {
                            bad.push(format!(
                                "coalescent.flags[{i}]: {f} is neither 0 nor an atom rate"
                            ));
                        }
                    }
                }
            } else if self.measure.kind == MeasureKind::Gamma && self.measure.bins.is_none() {
                if matches!(self.init.y, YInit::PerAtom(_)) {
                    bad.push(
                        "init.y: per-atom values need a discrete or binned measure".into(),
                    );
                }
                if !self.dual.initial.flags.is_empty() {
                    bad.push(
                        "dual.initial.flags: flags need a discrete or binned measure".into(),
                    );
                }
            }
        }

        if !(self.sim.dt > 0.0) {
            bad.push(format!("sim.dt: {} must be positive", self.sim.dt));
        }
        if !(self.sim.t_max > 0.0) {
            bad.push(format!("sim.t_max: {} must be positive", self.sim.t_max));
        }
        if self.sim.dt > self.sim.t_max {
            bad.push(format!(
                "sim.dt: {} exceeds sim.t_max = {}",
                self.sim.dt, self.sim.t_max
            ));
        }
        if self.sim.reps == 0 {
            bad.push("sim.reps: must be at least 1".into());
        }
        if self.sim.record_stride == 0 {
            bad.push("sim.record_stride: must be at least 1".into());
        }
        if self.wf.n == Some(0) {
            bad.push("wf.N: must be at least 1".into());
        }
        if let Some(t) = self.wf.t_max {
            if !(t > 0.0) {
                bad.push(format!("wf.t_max: {t} must be positive"));
            }
        }
        if self.coalescent.sample_size == 0 {
            bad.push("coalescent.sample_size: must be at least 1".into());
        }
        if !(self.duality.target_se > 0.0) {
            bad.push(format!(
                "duality.target_se: {} must be positive",
                self.duality.target_se
            ));
        }
        if !(self.scaling.tolerance > 0.0) {
            bad.push(format!(
                "scaling.tolerance: {} must be positive",
                self.scaling.tolerance
            ));
        }
        bad
    }

    pub fn build_measure(&self) -> Result<SeedBankMeasure, ConfigError> {
        match self.measure.kind {
            MeasureKind::Discrete => {
                let pairs: Vec<(f64, f64)> =
                    self.measure.atoms.iter().map(|a| (a[0], a[1])).collect();
                Ok(SeedBankMeasure::discrete(&pairs)?)
            }
            MeasureKind::Gamma => {
                let g = self.measure.gamma.as_ref().ok_or_else(|| {
                    ConfigError::Validation(vec!["measure.gamma: required".into()])
                })?;
                Ok(SeedBankMeasure::gamma(g.shape, g.scale, g.mass)?)
            }
        }
    }

    /// The finite atom list the simulators run on: the measure itself when
    /// discrete and no grid is given, otherwise the binned measure.
    pub fn build_discretized(&self) -> Result<DiscretizedMeasure, ConfigError> {
        let mu = self.build_measure()?;
        match (self.measure.bins, self.measure.cutoff) {
            (Some(bins), Some(cutoff)) => Ok(mu.discretize(bins, cutoff)?),
            _ => match &mu {
                SeedBankMeasure::Discrete { atoms } => {
                    let pairs: Vec<(f64, f64)> =
                        atoms.iter().map(|a| (a.rate, a.mass)).collect();
                    Ok(DiscretizedMeasure::from_atoms(&pairs)?)
                }
                SeedBankMeasure::Gamma { .. } => Err(ConfigError::Validation(vec![
                    "measure: a gamma measure needs bins and cutoff here".into(),
                ])),
            },
        }
    }

    pub fn initial_state(
        &self,
        measure: &DiscretizedMeasure,
    ) -> Result<DiffusionState, ConfigError> {
        let y = match &self.init.y {
            YInit::Scalar(v) => vec![*v; measure.len()],
            YInit::PerAtom(vs) => vs.clone(),
        };
        DiffusionState::new(self.init.x, y)
            .map_err(|e| ConfigError::Validation(vec![format!("init: {e}")]))
    }

    /// Evaluate the initial dormant frequency at a flag rate (exact atom
    /// match for per-atom lists).
    pub fn y_at(&self, measure: &DiscretizedMeasure) -> impl Fn(f64) -> f64 + Sync + '_ {
        let per_atom: Option<Vec<(f64, f64)>> = match &self.init.y {
            YInit::Scalar(_) => None,
            YInit::PerAtom(vs) => Some(
                measure
                    .atoms()
                    .iter()
                    .zip(vs)
                    .map(|(a, &v)| (a.rate, v))
                    .collect(),
            ),
        };
        let scalar = match &self.init.y {
            YInit::Scalar(v) => *v,
            YInit::PerAtom(_) => f64::NAN,
        };
        move |rate: f64| match &per_atom {
            None => scalar,
            Some(map) => map
                .iter()
                .find(|(r, _)| *r == rate)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("flag {rate} has no configured y value")),
        }
    }

    pub fn initial_dual_state(&self) -> Result<DualState, ConfigError> {
        let flags: Vec<(f64, u64)> = self
            .dual
            .initial
            .flags
            .iter()
            .map(|[r, m]| (*r, *m as u64))
            .collect();
        Ok(DualState::new(self.dual.initial.n, &flags)?)
    }

    pub fn initial_partition(&self) -> Result<MarkedPartition, ConfigError> {
        let k = self.coalescent.sample_size;
        match &self.coalescent.flags {
            None => Ok(MarkedPartition::all_active(k)),
            Some(flags) => Ok(MarkedPartition::new(
                (1..=k).map(|i| vec![i]).collect(),
                flags.clone(),
            )?),
        }
    }

    /// Canonical TOML of the resolved config (defaults filled, overrides
    /// applied); reports embed it and hash it.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_toml_string().as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
