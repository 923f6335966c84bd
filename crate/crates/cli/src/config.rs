//! Run configuration: a single JSON document plus built-in presets.
//!
//! Environment variables are never consulted; everything that affects a
//! run is in the config or the command line, so identical inputs give
//! byte-identical outputs.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdot_core::cost::{CenterSet, CostSpec};
use sdot_core::dual::PriceVector;
use sdot_core::error::{Error, Result};
use sdot_core::measures::{
    grid_uniform, load_measure, pushforward_gradient_map, DiscreteMeasure, MapKind, MapSpec, Point,
};
use sdot_core::optimizer::{SolveOptions, StepPolicy};
use sdot_core::refine::RefineOptions;
use sdot_core::seeding::{kmeans_pp_centers, random_box_centers};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureConfig {
    /// Load from a JSON or CSV file.
    Path(PathBuf),
    /// Uniform grid on the unit cube.
    Grid { d: usize, k: usize },
    /// Push the source forward under a gradient map (target only).
    Pushforward { lambda: f64, kind: MapKind },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AutoOr<T> {
    Auto(Auto),
    Value(T),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auto {
    Auto,
}

impl<T> AutoOr<T> {
    pub fn auto() -> Self {
        AutoOr::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostConfig {
    pub sigma: f64,
    #[serde(default = "AutoOr::auto")]
    pub scale: AutoOr<f64>,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig { sigma: 2.0, scale: AutoOr::auto() }
    }
}

impl CostConfig {
    pub fn resolve(&self) -> Result<CostSpec> {
        match self.scale {
            AutoOr::Auto(_) => CostSpec::auto(self.sigma),
            AutoOr::Value(s) => CostSpec::new(self.sigma, s),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentersConfig {
    Explicit(Vec<Vec<f64>>),
    RandomSeeded { m: usize },
    Kmeanspp { m: usize },
}

impl Default for CentersConfig {
    fn default() -> Self {
        CentersConfig::RandomSeeded { m: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepConfig {
    pub policy: String,
    #[serde(default = "AutoOr::auto")]
    pub eta0: AutoOr<f64>,
    #[serde(default)]
    pub eta: Option<f64>,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig { policy: "diminishing".into(), eta0: AutoOr::auto(), eta: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub grad_tol: AutoOr<f64>,
    pub step: StepConfig,
    pub averaging: bool,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 50_000,
            grad_tol: AutoOr::auto(),
            step: StepConfig::default(),
            averaging: true,
            warm_start: None,
        }
    }
}

impl SolveConfig {
    pub fn resolve(
        &self,
        mu: &DiscreteMeasure,
        nu: &DiscreteMeasure,
        z: &CenterSet,
        spec: &CostSpec,
    ) -> Result<SolveOptions> {
        let defaults = SolveOptions::for_instance(mu, nu, z, spec);
        let grad_tol = match self.grad_tol {
            AutoOr::Auto(_) => defaults.grad_tol,
            AutoOr::Value(v) => v,
        };
        let step = match self.step.policy.as_str() {
            "diminishing" => StepPolicy::Diminishing {
                eta0: match self.step.eta0 {
                    AutoOr::Auto(_) => match defaults.step {
                        StepPolicy::Diminishing { eta0 } => eta0,
                        StepPolicy::Fixed { eta } => eta,
                    },
                    AutoOr::Value(v) => v,
                },
            },
            "fixed" => StepPolicy::Fixed {
                eta: self.step.eta.ok_or_else(|| {
                    Error::Validation("fixed step policy needs an explicit eta".into())
                })?,
            },
            other => {
                return Err(Error::Validation(format!(
                    "unknown step policy {:?} (expected diminishing or fixed)",
                    other
                )))
            }
        };
        let warm_start = match &self.warm_start {
            Some(v) => Some(PriceVector::new(v.clone())?),
            None => None,
        };
        Ok(SolveOptions {
            max_iters: self.max_iters,
            grad_tol,
            step,
            averaging: self.averaging,
            warm_start,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub rounds: usize,
    pub saturation_rel: f64,
    pub reseed_dead: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        let d = RefineOptions::default();
        RefineConfig {
            rounds: d.rounds,
            saturation_rel: d.saturation_rel,
            reseed_dead: d.reseed_dead,
        }
    }
}

impl RefineConfig {
    pub fn resolve(&self) -> RefineOptions {
        RefineOptions {
            rounds: self.rounds,
            saturation_rel: self.saturation_rel,
            reseed_dead: self.reseed_dead,
            ..RefineOptions::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub enabled: bool,
    pub budget: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { enabled: false, budget: sdot_core::oracle::DEFAULT_LP_BUDGET }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AsymptoticsConfig {
    pub m_list: Vec<usize>,
    pub rounds: usize,
    pub seeds: Vec<u64>,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        AsymptoticsConfig { m_list: vec![4, 8, 16, 32, 64], rounds: 80, seeds: vec![11, 12, 13] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureSide {
    Source,
    Target,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FigureConfig {
    pub sides: Vec<FigureSide>,
    /// Also draw the target partition pulled back onto the source atoms
    /// through the plan's heaviest entry per atom.
    pub pullback: bool,
    pub palette_seed: u64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig { sides: Vec::new(), pullback: false, palette_seed: 7 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub source: Option<MeasureConfig>,
    pub target: Option<MeasureConfig>,
    pub cost: CostConfig,
    /// Second-leg cost for hedonic runs; defaults to `cost`.
    pub cost2: Option<CostConfig>,
    pub centers: CentersConfig,
    pub solve: SolveConfig,
    pub refine: RefineConfig,
    pub assign_tie_tol: f64,
    pub plan_tol: f64,
    pub oracle: OracleConfig,
    pub asymptotics: AsymptoticsConfig,
    pub figure: FigureConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: None,
            target: None,
            cost: CostConfig::default(),
            cost2: None,
            centers: CentersConfig::default(),
            solve: SolveConfig::default(),
            refine: RefineConfig::default(),
            assign_tie_tol: 1e-9,
            plan_tol: 1e-6,
            oracle: OracleConfig::default(),
            asymptotics: AsymptoticsConfig::default(),
            figure: FigureConfig::default(),
            seed: 1,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Validation(format!("cannot open config {}: {}", path.display(), e))
        })?;
        serde_json::from_reader(file)
            .map_err(|e| Error::Parse(format!("bad config {}: {}", path.display(), e)))
    }

    /// The experiment presets: uniform grid source on the unit square,
    /// target pushed forward under the trig-potential gradient map,
    /// quadratic cost, ten centers, a refinement budget, and both figures
    /// with the pullback comparison.
    pub fn preset(name: &str) -> Result<Self> {
        let lambda = name
            .strip_prefix("square-trig-l")
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown preset {:?}; available: square-trig-l<lambda>, e.g. square-trig-l0.2",
                    name
                ))
            })?;
        let mut cfg = RunConfig {
            source: Some(MeasureConfig::Grid { d: 2, k: 20 }),
            target: Some(MeasureConfig::Pushforward { lambda, kind: MapKind::TrigPotential }),
            centers: CentersConfig::RandomSeeded { m: 10 },
            figure: FigureConfig {
                sides: vec![FigureSide::Source, FigureSide::Target],
                pullback: true,
                palette_seed: 7,
            },
            ..RunConfig::default()
        };
        cfg.refine.rounds = 60;
        Ok(cfg)
    }

    pub fn load_source(&self) -> Result<DiscreteMeasure> {
        match &self.source {
            Some(cfg) => load_measure_config(cfg, None),
            None => Err(Error::Validation("config has no source measure".into())),
        }
    }

    pub fn load_target(&self, source: &DiscreteMeasure) -> Result<DiscreteMeasure> {
        match &self.target {
            Some(cfg) => load_measure_config(cfg, Some(source)),
            None => Err(Error::Validation("config has no target measure".into())),
        }
    }

    pub fn build_centers(&self, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<CenterSet> {
        match &self.centers {
            CentersConfig::Explicit(rows) => {
                CenterSet::new(mu.dim(), rows.iter().map(|r| Point(r.clone())).collect())
            }
            CentersConfig::RandomSeeded { m } => random_box_centers(mu, nu, *m, self.seed),
            CentersConfig::Kmeanspp { m } => kmeans_pp_centers(mu, nu, *m, self.seed),
        }
    }
}

fn load_measure_config(cfg: &MeasureConfig, source: Option<&DiscreteMeasure>) -> Result<DiscreteMeasure> {
    match cfg {
        MeasureConfig::Path(path) => {
            let file = File::open(path).map_err(|e| {
                Error::Validation(format!("cannot open measure {}: {}", path.display(), e))
            })?;
            load_measure(file)
        }
        MeasureConfig::Grid { d, k } => grid_uniform(*d, *k),
        MeasureConfig::Pushforward { lambda, kind } => {
            let source = source.ok_or_else(|| {
                Error::Validation("pushforward is only valid for the target measure".into())
            })?;
            let spec = match kind {
                MapKind::Identity => MapSpec::identity(),
                MapKind::TrigPotential => MapSpec::trig_potential(*lambda)?,
            };
            pushforward_gradient_map(source, &spec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let json = r#"{"source": {"grid": {"d": 1, "k": 4}}, "target": {"grid": {"d": 1, "k": 4}}}"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.seed, 1);
        assert!(matches!(cfg.cost.scale, AutoOr::Auto(_)));
        let mu = cfg.load_source().unwrap();
        assert_eq!(mu.len(), 4);
    }

    #[test]
    fn cost_scale_accepts_auto_and_number() {
        let a: CostConfig = serde_json::from_str(r#"{"sigma": 2.0, "scale": "auto"}"#).unwrap();
        assert_eq!(a.resolve().unwrap().scale, 2.0);
        let b: CostConfig = serde_json::from_str(r#"{"sigma": 2.0, "scale": 5.0}"#).unwrap();
        assert_eq!(b.resolve().unwrap().scale, 5.0);
    }

    #[test]
    fn preset_names_resolve() {
        for name in [
            "square-trig-l0",
            "square-trig-l0.05",
            "square-trig-l0.1",
            "square-trig-l0.2",
            "square-trig-l0.5",
            "square-trig-l1.2",
        ] {
            let cfg = RunConfig::preset(name).unwrap();
            assert!(matches!(cfg.source, Some(MeasureConfig::Grid { d: 2, k: 20 })));
            assert_eq!(cfg.refine.rounds, 60);
        }
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn pushforward_target_tracks_source() {
        let cfg = RunConfig::preset("square-trig-l0").unwrap();
        let mu = cfg.load_source().unwrap();
        let nu = cfg.load_target(&mu).unwrap();
        assert!(mu.same_atoms(&nu));
    }
}
