//! Scenario files: TOML documents resolved into a [`Scenario`].

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crm_core::adaptlaw::{Architecture, ControllerSpec};
use crm_core::matan;
use crm_core::models::{self, MatrixSchedule, PlantKind, PlantSpec, ReferenceModelSpec};
use crm_core::proj::ProjectionConfig;
use crm_core::sim::{InitialState, Scenario, Signal, DEFAULT_STEP};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantConfig,
    #[serde(default)]
    pub reference_model: ReferenceModelConfig,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub reference: Signal,
    pub sim: SimConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// Checked against the kind implied by the other fields when given.
    pub kind: Option<PlantKind>,
    pub a_m: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub theta_star: Option<Vec<f64>>,
    pub a_p: Option<Vec<Vec<f64>>>,
    /// Knots of a piecewise-linear `A_p(t)`.
    pub a_p_schedule: Option<Vec<Knot>>,
    pub disturbance: Option<DisturbanceConfig>,
    /// One signal per state component.
    pub noise: Option<Vec<Signal>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Knot {
    pub t: f64,
    pub a_p: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub signal: Signal,
    /// Defaults to `b`.
    pub input: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceModelConfig {
    #[serde(default)]
    pub ell: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: Architecture,
    pub vartheta: f64,
    pub epsilon: f64,
    pub gamma: Option<f64>,
    /// Effective learning rate; resolved to `gamma = rho (sigma + ell)`.
    pub rho: Option<f64>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "yes")]
    pub use_projection: bool,
    /// Identifier or observer gain; the reference-model default otherwise.
    pub aux_gain: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub orm_shadow: bool,
    pub initial: InitialConfig,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub x: Vec<f64>,
    pub x_m: Option<Vec<f64>>,
    /// Identifier or observer state.
    pub aux: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub theta_hat: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// A resolved scenario with the notes raised while building it.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub warnings: Vec<String>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    ensure!(!rows.is_empty(), "{what} is empty");
    let n = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == n), "{what} rows differ in length");
    Ok(DMatrix::from_row_iterator(rows.len(), n, rows.iter().flatten().copied()))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn build(self) -> Result<Loaded> {
        let mut warnings = Vec::new();
        let p = &self.plant;
        let a_m = matrix(&p.a_m, "plant.a_m")?;
        let b = vector(&p.b);
        let given = [p.theta_star.is_some(), p.a_p.is_some(), p.a_p_schedule.is_some()];
        ensure!(
            given.iter().filter(|g| **g).count() == 1,
            "plant needs exactly one of theta_star, a_p, a_p_schedule"
        );
        let mut plant = if let Some(ts) = &p.theta_star {
            models::plant_from_matching(&a_m, &b, &vector(ts))?
        } else if let Some(a_p) = &p.a_p {
            PlantSpec::from_schedule(&a_m, &b, MatrixSchedule::constant(matrix(a_p, "plant.a_p")?))?
        } else {
            let knots = p
                .a_p_schedule
                .as_ref()
                .expect("checked above")
                .iter()
                .map(|k| Ok((k.t, matrix(&k.a_p, "plant.a_p_schedule.a_p")?)))
                .collect::<Result<Vec<_>>>()?;
            PlantSpec::from_schedule(&a_m, &b, MatrixSchedule::piecewise_linear(knots)?)?
        };
        if let Some(d) = &p.disturbance {
            let input = d.input.as_deref().map_or_else(|| b.clone(), vector);
            plant = plant.with_disturbance(d.signal.clone(), input)?;
        }
        if let Some(noise) = &p.noise {
            plant = plant.with_noise(noise.clone())?;
        }
        if let Some(kind) = p.kind {
            ensure!(
                kind == plant.kind,
                "plant.kind is {kind:?} but the plant description makes it {:?}",
                plant.kind
            );
        }

        let ell = self.reference_model.ell;
        let reference_model = ReferenceModelSpec::new(a_m.clone(), b.clone(), ell)?;
        let c = &self.controller;
        let gamma = match (c.gamma, c.rho) {
            (Some(g), None) => g,
            (None, Some(rho)) => rho * (matan::spectral_constants(&a_m)?.sigma + ell),
            (Some(_), Some(_)) => bail!("controller.gamma and controller.rho are mutually exclusive"),
            (None, None) => bail!("controller needs gamma or rho"),
        };
        let projection = ProjectionConfig::new(c.vartheta, c.epsilon, gamma, c.eta)?;
        if c.aux_gain.is_some() && !c.kind.has_auxiliary() {
            bail!("controller.aux_gain only applies to the composite laws");
        }
        let controller = ControllerSpec::new(c.kind, projection, &reference_model, c.aux_gain, c.use_projection)?;
        if let Some(g) = c.aux_gain {
            let sigma = matan::spectral_constants(&a_m)?.sigma;
            let (default, what) = match c.kind {
                Architecture::CmracC => (sigma + ell, "identifier gain differs from sigma + ell"),
                _ => (ell, "observer gain differs from ell"),
            };
            if g != default {
                warnings.push(format!(
                    "{what} ({g} vs {default}); the auxiliary-error Lyapunov weighting assumes the default, so its decrease checks are skipped"
                ));
            }
        }
        if !c.use_projection {
            warnings.push("projection disabled: containment guarantees do not apply".into());
        }
        if p.theta_star.is_some() && plant.theta_star_max() > c.vartheta {
            warnings.push(format!(
                "||theta*|| = {} exceeds vartheta = {}",
                plant.theta_star_max(),
                c.vartheta
            ));
        }

        let init = &self.sim.initial;
        let initial = InitialState {
            x: vector(&init.x),
            x_m: init.x_m.as_deref().map(vector),
            aux: init.aux.as_deref().map(vector),
            theta: init.theta.as_deref().map(vector),
            theta_hat: init.theta_hat.as_deref().map(vector),
        };
        let scenario = Scenario {
            name: self.name.clone(),
            plant,
            reference_model,
            controller,
            reference: self.reference.clone(),
            horizon: self.sim.horizon,
            step: self.sim.step,
            seed: self.sim.seed,
            initial,
            orm_shadow: self.sim.orm_shadow,
        }
        .with_seed(self.sim.seed);
        scenario.validate()?;
        Ok(Loaded {
            config: self,
            scenario,
            warnings,
        })
    }
}

/// Builtin scenario files, embedded at compile time.
pub const BUILTINS: &[(&str, &str)] = &[
    ("sec4_open", include_str!("../configs/sec4_open.toml")),
    ("sec4_closed", include_str!("../configs/sec4_closed.toml")),
    ("waterbed_orm", include_str!("../configs/waterbed_orm.toml")),
    ("waterbed_crm_opt", include_str!("../configs/waterbed_crm_opt.toml")),
    ("waterbed_crm_bad", include_str!("../configs/waterbed_crm_bad.toml")),
    ("sec7_cmrac", include_str!("../configs/sec7_cmrac.toml")),
    ("sec7_cmracco", include_str!("../configs/sec7_cmracco.toml")),
    ("cmracc_table1", include_str!("../configs/cmracc_table1.toml")),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn load_builtin(name: &str) -> Result<Loaded> {
    let text = builtin(name).ok_or_else(|| anyhow!("no builtin scenario named {name}"))?;
    ScenarioConfig::parse(text)
        .with_context(|| format!("builtin {name}"))?
        .build()
}

/// A path to a scenario file, or the name of a builtin when no such file
/// exists.
pub fn load(spec: &str) -> Result<Loaded> {
    let path = Path::new(spec);
    if !path.exists() {
        if builtin(spec).is_some() {
            return load_builtin(spec);
        }
        let names: Vec<_> = BUILTINS.iter().map(|(n, _)| *n).collect();
        bail!("{spec} is neither a file nor a builtin ({})", names.join(", "));
    }
    ScenarioConfig::from_file(path)?
        .build()
        .with_context(|| format!("in {}", path.display()))
}
