//! Run configuration: one TOML file per experiment.

use std::fmt;
use std::path::{Path, PathBuf};

use collapse_core::composite::{build_composite, product_state, CompositeSpec, Interaction, PointerParams};
use collapse_core::linalg::{eigh, HermitianOperator, MatrixSource, StateVector, C64};
use collapse_core::sde::check_commuting;
use collapse_core::Error as CoreError;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Collapse,
    Lindblad,
    GeometryCheck,
    Composite,
    Zurek,
    Estimate,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Collapse => "collapse",
            Experiment::Lindblad => "lindblad",
            Experiment::GeometryCheck => "geometry-check",
            Experiment::Composite => "composite",
            Experiment::Zurek => "zurek",
            Experiment::Estimate => "estimate",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Uniform,
    /// Eigenvector `index` of the Hamiltonian, eigenvalues ascending.
    Eigenstate,
}

/// Initial state: explicit amplitudes (real parts plus optional imaginary
/// parts, normalized on load) or a named preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

impl InitialState {
    fn resolve(&self, h: &HermitianOperator, path: &str) -> Result<StateVector, ConfigError> {
        let d = h.dim();
        match (&self.amplitudes, self.preset) {
            (Some(_), Some(_)) => Err(invalid(path, "give either `amplitudes` or `preset`, not both")),
            (None, None) => Err(invalid(path, "needs `amplitudes` or `preset`")),
            (Some(re), None) => {
                if self.index.is_some() {
                    return Err(invalid(format!("{path}.index"), "only valid with `preset = \"eigenstate\"`"));
                }
                if re.len() != d {
                    return Err(invalid(
                        format!("{path}.amplitudes"),
                        format!("has {} entries, the Hamiltonian has dimension {d}", re.len()),
                    ));
                }
                let im = match &self.imag {
                    Some(im) if im.len() != d => {
                        return Err(invalid(format!("{path}.imag"), format!("has {} entries, expected {d}", im.len())))
                    }
                    Some(im) => im.clone(),
                    None => vec![0.0; d],
                };
                if re.iter().chain(&im).any(|x| !x.is_finite()) {
                    return Err(invalid(format!("{path}.amplitudes"), "entries must be finite"));
                }
                let amps = re.iter().zip(&im).map(|(&r, &i)| C64::new(r, i)).collect();
                StateVector::new(amps).map_err(|e| invalid(format!("{path}.amplitudes"), e))
            }
            (None, Some(preset)) => {
                if self.imag.is_some() {
                    return Err(invalid(format!("{path}.imag"), "only valid with `amplitudes`"));
                }
                match preset {
                    Preset::Uniform => {
                        if self.index.is_some() {
                            return Err(invalid(format!("{path}.index"), "not used by the uniform preset"));
                        }
                        StateVector::uniform(d).map_err(|e| invalid(path, e))
                    }
                    Preset::Eigenstate => {
                        let k = self.index.unwrap_or(0);
                        if k >= d {
                            return Err(invalid(format!("{path}.index"), format!("{k} is out of range for dimension {d}")));
                        }
                        let (_, v) = eigh(h.matrix()).map_err(|e| invalid(path, e))?;
                        StateVector::from_dvector(v.column(k).into_owned()).map_err(|e| invalid(path, e))
                    }
                }
            }
        }
    }
}

fn yes() -> bool {
    true
}

fn default_min_classified() -> f64 {
    0.99
}

fn default_bridge_samples() -> usize {
    10
}

fn default_entropy_spots() -> usize {
    10
}

/// Verdict toggles. A check runs only when it is enabled and applies to the
/// experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default = "yes")]
    pub born: bool,
    /// Required classified fraction for the Born verdict.
    #[serde(default = "default_min_classified")]
    pub min_classified_fraction: f64,
    #[serde(default = "yes")]
    pub martingale: bool,
    #[serde(default = "yes")]
    pub variance_decay: bool,
    #[serde(default = "yes")]
    pub decorrelation: bool,
    /// Compare the ensemble-mean density matrix with the master equation.
    #[serde(default)]
    pub lindblad_bridge: bool,
    #[serde(default = "default_bridge_samples")]
    pub bridge_samples: usize,
    #[serde(default = "yes")]
    pub entropy: bool,
    #[serde(default = "default_entropy_spots")]
    pub entropy_spots: usize,
    #[serde(default = "yes")]
    pub analytic: bool,
    #[serde(default = "yes")]
    pub persistence: bool,
    /// Minimum fraction of trajectories in which a superposed slot loses
    /// purity; unset disables the check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entangled_fraction_min: Option<f64>,
}

impl Default for Checks {
    fn default() -> Self {
        Self {
            born: true,
            min_classified_fraction: default_min_classified(),
            martingale: true,
            variance_decay: true,
            decorrelation: true,
            lindblad_bridge: false,
            bridge_samples: default_bridge_samples(),
            entropy: true,
            entropy_spots: default_entropy_spots(),
            analytic: true,
            persistence: true,
            entangled_fraction_min: None,
        }
    }
}

/// Per-trajectory state dumps for the first `trajectories` ensemble members.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDump {
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

fn default_lindblad_dt() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladSection {
    /// RK4 step.
    #[serde(default = "default_lindblad_dt")]
    pub dt: f64,
    /// RK4 steps between rows of `lindblad.csv`; defaults to the run stride.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
    /// Times at which the analytic energy-basis solution is compared.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub check_times: Vec<f64>,
    /// Start from a random mixed state drawn from the master seed.
    #[serde(default)]
    pub random_initial: bool,
}

impl Default for LindbladSection {
    fn default() -> Self {
        Self {
            dt: default_lindblad_dt(),
            every: None,
            check_times: Vec::new(),
            random_initial: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subsystem {
    pub dim: usize,
    pub hamiltonian: MatrixSource,
    pub initial_state: InitialState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpec {
    pub slots: Vec<usize>,
    pub matrix: MatrixSource,
}

fn default_entangled_threshold() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompositeSection {
    pub subsystems: Vec<Subsystem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interactions: Vec<InteractionSpec>,
    /// Purity defect that counts a slot as entangled.
    #[serde(default = "default_entangled_threshold")]
    pub entangled_threshold: f64,
}

fn default_dims() -> Vec<usize> {
    vec![2, 3, 4, 5]
}

fn default_samples() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            dims: default_dims(),
            samples: default_samples(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMode {
    Reduction,
    Thermal,
    Adsorption,
    Sigma,
}

/// One calculator evaluation; `expect` is an inclusive acceptance range.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateEntry {
    pub mode: Option<EstimateMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e_mev: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_nucleons: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_delta_e_mev: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_cm2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pressure_torr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticking: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub molecule_mass_gev: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduction_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<[f64; 2]>,
}

fn default_n_traj() -> usize {
    1000
}

fn one() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_max() -> f64 {
    10.0
}

fn default_stride() -> usize {
    10
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Integration steps between recorded grid points.
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_variance_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<MatrixSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
    /// Mutually commuting collapse operators; `[H]` when omitted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub collapse_ops: Vec<MatrixSource>,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dump: Option<StateDump>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lindblad: Option<LindbladSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composite: Option<CompositeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointer: Option<PointerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometrySection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimate: Vec<EstimateEntry>,
    /// Directory against which relative matrix files resolve.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Operators and states built from a validated config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub hamiltonian: Option<HermitianOperator>,
    pub z0: Option<StateVector>,
    pub collapse_ops: Vec<HermitianOperator>,
    pub composite: Option<PreparedComposite>,
}

#[derive(Clone, Debug)]
pub struct PreparedComposite {
    pub spec: CompositeSpec,
    pub dims: Vec<usize>,
    pub states: Vec<StateVector>,
}

/// Reads, fills defaults and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let cfg = parse_config_file(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file without validating it.
pub fn parse_config_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path.parent())
}

/// Parses TOML text. Errors carry the path of the offending field.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| invalid("<toml>", e.to_string().trim_end()))?;
    let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "<root>".to_string() } else { path };
        invalid(path, e.into_inner().to_string().trim_end())
    })?;
    cfg.base_dir = base_dir.map(Path::to_path_buf);
    cfg.fill_defaults();
    Ok(cfg)
}

impl RunConfig {
    fn fill_defaults(&mut self) {
        if self.collapse_ops.is_empty() && matches!(self.experiment, Experiment::Collapse | Experiment::Lindblad) {
            if let Some(h) = &self.hamiltonian {
                self.collapse_ops = vec![h.clone()];
            }
        }
        if self.experiment == Experiment::Lindblad && self.lindblad.is_none() {
            self.lindblad = Some(LindbladSection::default());
        }
        if self.experiment == Experiment::GeometryCheck && self.geometry.is_none() {
            self.geometry = Some(GeometrySection::default());
        }
    }

    /// Serializes to TOML; parsing the result yields an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn load_matrix(&self, src: &MatrixSource, path: &str) -> Result<HermitianOperator, ConfigError> {
        src.load(self.base_dir.as_deref()).map_err(|e| invalid(path, e))
    }

    fn require<'a, T>(v: &'a Option<T>, path: &str, experiment: Experiment) -> Result<&'a T, ConfigError> {
        v.as_ref().ok_or_else(|| invalid(path, format!("required for experiment `{experiment}`")))
    }

    fn check_dynamics(&self) -> Result<(), ConfigError> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be non-negative and finite, got {}", self.sigma)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(invalid("t_max", format!("must be positive, got {}", self.t_max)));
        }
        if self.dt > self.t_max {
            return Err(invalid("dt", "must not exceed t_max"));
        }
        if self.stride == 0 {
            return Err(invalid("stride", "must be at least 1"));
        }
        if let Some(eps) = self.stop_variance_epsilon {
            if !(eps >= 0.0 && eps.is_finite()) {
                return Err(invalid("stop_variance_epsilon", format!("must be non-negative, got {eps}")));
            }
        }
        Ok(())
    }

    fn check_ensemble(&self) -> Result<(), ConfigError> {
        if self.n_traj == 0 {
            return Err(invalid("n_traj", "must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be at least 1"));
        }
        let f = self.checks.min_classified_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid("checks.min_classified_fraction", format!("must lie in [0, 1], got {f}")));
        }
        if let Some(f) = self.checks.entangled_fraction_min {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid("checks.entangled_fraction_min", format!("must lie in [0, 1], got {f}")));
            }
        }
        if let Some(d) = &self.state_dump {
            if d.stride == Some(0) {
                return Err(invalid("state_dump.stride", "must be at least 1"));
            }
        }
        Ok(())
    }

    fn load_collapse_ops(&self, dim: usize) -> Result<Vec<HermitianOperator>, ConfigError> {
        let ops: Vec<HermitianOperator> = self
            .collapse_ops
            .iter()
            .enumerate()
            .map(|(i, s)| self.load_matrix(s, &format!("collapse_ops[{i}]")))
            .collect::<Result<_, _>>()?;
        for (i, op) in ops.iter().enumerate() {
            if op.dim() != dim {
                return Err(invalid(
                    format!("collapse_ops[{i}]"),
                    format!("has dimension {}, the Hamiltonian has dimension {dim}", op.dim()),
                ));
            }
        }
        check_commuting(&ops).map_err(|e| match e {
            CoreError::NonCommuting { first, second, norm } => invalid(
                "collapse_ops",
                format!("collapse_ops[{first}] and collapse_ops[{second}] do not commute (commutator norm {norm:.3e})"),
            ),
            other => invalid("collapse_ops", other),
        })?;
        Ok(ops)
    }

    /// Validates every field and builds the operators the run needs.
    pub fn validate(&self) -> Result<Prepared, ConfigError> {
        let mut prepared = Prepared {
            hamiltonian: None,
            z0: None,
            collapse_ops: Vec::new(),
            composite: None,
        };
        match self.experiment {
            Experiment::Collapse | Experiment::Lindblad => {
                self.check_dynamics()?;
                let h_src = Self::require(&self.hamiltonian, "hamiltonian", self.experiment)?;
                let h = self.load_matrix(h_src, "hamiltonian")?;
                let ops = self.load_collapse_ops(h.dim())?;
                let random_start = self.lindblad.as_ref().is_some_and(|l| l.random_initial);
                if self.experiment == Experiment::Collapse {
                    self.check_ensemble()?;
                    if ops.is_empty() {
                        return Err(invalid("collapse_ops", "needs at least one operator"));
                    }
                    if self.checks.lindblad_bridge {
                        if ops.len() != 1 {
                            return Err(invalid("checks.lindblad_bridge", "needs exactly one collapse operator"));
                        }
                        if self.checks.bridge_samples == 0 {
                            return Err(invalid("checks.bridge_samples", "must be at least 1"));
                        }
                    }
                    if random_start {
                        return Err(invalid("lindblad.random_initial", "only valid for experiment `lindblad`"));
                    }
                } else {
                    if ops.len() != 1 {
                        return Err(invalid("collapse_ops", "the master equation takes exactly one collapse operator"));
                    }
                    let l = self.lindblad.as_ref().expect("filled by defaults");
                    if !(l.dt > 0.0 && l.dt.is_finite()) || l.dt > self.t_max {
                        return Err(invalid("lindblad.dt", format!("must lie in (0, t_max], got {}", l.dt)));
                    }
                    if l.every == Some(0) {
                        return Err(invalid("lindblad.every", "must be at least 1"));
                    }
                    for (i, &t) in l.check_times.iter().enumerate() {
                        if !(0.0..=self.t_max).contains(&t) {
                            return Err(invalid(format!("lindblad.check_times[{i}]"), format!("{t} lies outside [0, t_max]")));
                        }
                    }
                }
                if !random_start {
                    let init = Self::require(&self.initial_state, "initial_state", self.experiment)?;
                    prepared.z0 = Some(init.resolve(&h, "initial_state")?);
                } else if self.initial_state.is_some() {
                    return Err(invalid("initial_state", "conflicts with lindblad.random_initial"));
                }
                if let Some(d) = &self.state_dump {
                    if d.trajectories > self.n_traj {
                        return Err(invalid("state_dump.trajectories", "exceeds n_traj"));
                    }
                }
                prepared.hamiltonian = Some(h);
                prepared.collapse_ops = ops;
            }
            Experiment::Composite => {
                self.check_dynamics()?;
                self.check_ensemble()?;
                let c = Self::require(&self.composite, "composite", self.experiment)?;
                if c.subsystems.len() < 2 {
                    return Err(invalid("composite.subsystems", "needs at least two subsystems"));
                }
                if !(c.entangled_threshold > 0.0 && c.entangled_threshold < 1.0) {
                    return Err(invalid("composite.entangled_threshold", "must lie in (0, 1)"));
                }
                let mut hs = Vec::new();
                let mut states = Vec::new();
                for (i, s) in c.subsystems.iter().enumerate() {
                    let path = format!("composite.subsystems[{i}]");
                    let h = self.load_matrix(&s.hamiltonian, &format!("{path}.hamiltonian"))?;
                    if h.dim() != s.dim {
                        return Err(invalid(
                            format!("{path}.hamiltonian"),
                            format!("has dimension {}, expected dim = {}", h.dim(), s.dim),
                        ));
                    }
                    states.push(s.initial_state.resolve(&h, &format!("{path}.initial_state"))?);
                    hs.push(h);
                }
                let mut spec = CompositeSpec::new(hs);
                for (i, int) in c.interactions.iter().enumerate() {
                    let path = format!("composite.interactions[{i}]");
                    let op = self.load_matrix(&int.matrix, &format!("{path}.matrix"))?;
                    spec.interactions.push(Interaction {
                        slots: int.slots.clone(),
                        op,
                    });
                }
                let (h, dims) = build_composite(&spec).map_err(|e| invalid("composite", e))?;
                let ops = self.load_collapse_ops(h.dim())?;
                if self.state_dump.is_some() {
                    return Err(invalid("state_dump", "only supported for experiment `collapse`"));
                }
                prepared.z0 = Some(product_state(&states).map_err(|e| invalid("composite.subsystems", e))?);
                prepared.collapse_ops = ops;
                prepared.hamiltonian = Some(h);
                prepared.composite = Some(PreparedComposite { spec, dims, states });
            }
            Experiment::Zurek => {
                self.check_dynamics()?;
                self.check_ensemble()?;
                let p = Self::require(&self.pointer, "pointer", self.experiment)?;
                collapse_core::composite::pointer_scenario(p).map_err(|e| invalid("pointer", e))?;
                if !self.collapse_ops.is_empty() {
                    return Err(invalid("collapse_ops", "the pointer scenario fixes its own collapse operator"));
                }
                if self.state_dump.is_some() {
                    return Err(invalid("state_dump", "only supported for experiment `collapse`"));
                }
            }
            Experiment::GeometryCheck => {
                let g = self.geometry.as_ref().expect("filled by defaults");
                if g.dims.is_empty() {
                    return Err(invalid("geometry.dims", "needs at least one dimension"));
                }
                for (i, &d) in g.dims.iter().enumerate() {
                    if !(2..=64).contains(&d) {
                        return Err(invalid(format!("geometry.dims[{i}]"), format!("{d} lies outside 2..=64")));
                    }
                }
                if g.samples == 0 {
                    return Err(invalid("geometry.samples", "must be at least 1"));
                }
            }
            Experiment::Estimate => {
                if self.estimate.is_empty() {
                    return Err(invalid("estimate", "needs at least one [[estimate]] entry"));
                }
                for (i, e) in self.estimate.iter().enumerate() {
                    e.validate(&format!("estimate[{i}]"))?;
                }
            }
        }
        Ok(prepared)
    }
}

impl EstimateEntry {
    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        let mode = self.mode.ok_or_else(|| invalid(format!("{path}.mode"), "is required"))?;
        let need = |v: Option<f64>, name: &str| -> Result<(), ConfigError> {
            match v {
                None => Err(invalid(format!("{path}.{name}"), format!("is required for mode `{}`", mode_name(mode)))),
                Some(x) if !x.is_finite() => Err(invalid(format!("{path}.{name}"), "must be finite")),
                Some(_) => Ok(()),
            }
        };
        match mode {
            EstimateMode::Reduction => need(self.delta_e_mev, "delta_e_mev")?,
            EstimateMode::Thermal => {
                need(self.n_nucleons, "n_nucleons")?;
                need(self.temperature_k, "temperature_k")?;
            }
            EstimateMode::Adsorption => {
                need(self.target_delta_e_mev, "target_delta_e_mev")?;
                need(self.pressure_torr, "pressure_torr")?;
                need(self.temperature_k, "temperature_k")?;
            }
            EstimateMode::Sigma => {
                need(self.reduction_time, "reduction_time")?;
                need(self.variance, "variance")?;
            }
        }
        if let Some([lo, hi]) = self.expect {
            if !(lo <= hi) {
                return Err(invalid(format!("{path}.expect"), "needs lower ≤ upper"));
            }
        }
        Ok(())
    }
}

pub fn mode_name(mode: EstimateMode) -> &'static str {
    match mode {
        EstimateMode::Reduction => "reduction",
        EstimateMode::Thermal => "thermal",
        EstimateMode::Adsorption => "adsorption",
        EstimateMode::Sigma => "sigma",
    }
}

/// Whether `z` is an eigenvector of `h` to within `tol` in variance.
pub fn is_eigenstate(h: &HermitianOperator, z: &StateVector, tol: f64) -> bool {
    collapse_core::linalg::variance(h, z).is_ok_and(|v| v < tol)
}
