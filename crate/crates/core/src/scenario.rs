//! Scenario configuration: a JSON document that pins every knob of a run
//! (domain, coefficients, weight, lower-order terms, horizons, resolutions,
//! seed). Defaults are materialized on load so reports can echo the full
//! resolved configuration.

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Domain, Grid};
use crate::wave::LowerOrderTerms;
use crate::weight::WeightField;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TimeSpec {
    /// T = factor * Tstar for the resolved weight and neighborhood
    FactorOfTstar { factor: f64 },
    Absolute { value: f64 },
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec::FactorOfTstar { factor: 1.1 }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GeometrySpec {
    pub delta: f64,
    pub delta0: f64,
    #[serde(default = "default_delta1")]
    pub delta1: f64,
}

fn default_delta1() -> f64 {
    0.25
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ResolutionSpec {
    /// lattice nodes per spatial axis
    #[serde(default = "default_space")]
    pub space: usize,
    /// time cells of reporting (t, x) regions
    #[serde(default = "default_time")]
    pub time: usize,
    /// t and s cells of the proof-layer (t, s, x) grid
    #[serde(default = "default_time")]
    pub proof: usize,
}

fn default_space() -> usize {
    200
}

fn default_time() -> usize {
    200
}

impl Default for ResolutionSpec {
    fn default() -> Self {
        ResolutionSpec { space: default_space(), time: default_time(), proof: default_time() }
    }
}

fn default_modes() -> usize {
    20
}

fn default_sweep() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
}

fn default_seed() -> u64 {
    42
}

fn default_coefficients() -> CoefficientField {
    CoefficientField::Identity
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub domain: Domain,
    #[serde(default = "default_coefficients")]
    pub coefficients: CoefficientField,
    pub weight: WeightField,
    #[serde(default = "LowerOrderTerms::free")]
    pub lower_order: LowerOrderTerms,
    #[serde(default)]
    pub time: TimeSpec,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub resolution: ResolutionSpec,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_sweep")]
    pub lambda_sweep: Vec<f64>,
    #[serde(default)]
    pub shift: Option<[f64; 2]>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| config_err("<document>", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Field-path validation of everything the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        match self.domain {
            Domain::Interval { a, b } => {
                if !(b > a) {
                    return Err(config_err("domain", "interval needs b > a"));
                }
            }
            Domain::Rectangle { lo, hi } => {
                if !(hi[0] > lo[0] && hi[1] > lo[1]) {
                    return Err(config_err("domain", "rectangle needs hi > lo per axis"));
                }
            }
            Domain::Disk { radius, .. } => {
                if !(radius > 0.0) {
                    return Err(config_err("domain.radius", "disk radius must be positive"));
                }
            }
        }
        if self.resolution.space < 8 {
            return Err(config_err("resolution.space", "at least 8 nodes per axis"));
        }
        if self.resolution.time < 8 {
            return Err(config_err("resolution.time", "at least 8 cells"));
        }
        if self.resolution.proof < 8 {
            return Err(config_err("resolution.proof", "at least 8 cells"));
        }
        if !(self.geometry.delta > 0.0 && self.geometry.delta0 > 0.0) {
            return Err(config_err("geometry.delta", "radii must be positive"));
        }
        if self.geometry.delta0 >= self.geometry.delta {
            return Err(config_err("geometry.delta0", "needs delta0 < delta"));
        }
        if !(self.geometry.delta1 > 0.0 && self.geometry.delta1 < 0.5) {
            return Err(config_err("geometry.delta1", "needs 0 < delta1 < 1/2"));
        }
        match self.time {
            TimeSpec::FactorOfTstar { factor } => {
                if !(factor > 1.0) {
                    return Err(config_err("time.factor", "needs factor > 1"));
                }
            }
            TimeSpec::Absolute { value } => {
                if !(value > 0.0) {
                    return Err(config_err("time.value", "needs a positive horizon"));
                }
            }
        }
        if self.modes == 0 {
            return Err(config_err("modes", "needs at least one mode"));
        }
        if self.lambda_sweep.is_empty() {
            return Err(config_err("lambda_sweep", "needs at least one value"));
        }
        if self.lambda_sweep.windows(2).any(|w| w[0] >= w[1])
            || self.lambda_sweep[0] <= 0.0
        {
            return Err(config_err("lambda_sweep", "must be positive and increasing"));
        }
        if self.domain.dim() == 2
            && matches!(self.weight.kind, crate::weight::WeightKind::TwoWell { .. })
        {
            return Err(config_err("weight.kind", "the two-well weight is one-dimensional"));
        }
        if let Some(z) = self.shift {
            let norm = (z[0] * z[0] + z[1] * z[1]).sqrt();
            if norm > self.geometry.delta0 {
                return Err(config_err("shift", "shift should stay below delta0"));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Grid {
        let n = self.resolution.space;
        match self.domain {
            Domain::Interval { a, b } => Grid::interval(a, b, n),
            Domain::Rectangle { lo, hi } => Grid::rectangle(lo, hi, [n, n]),
            Domain::Disk { center, radius } => Grid::disk(center, radius, n),
        }
    }

    /// The 1-d reference configuration most tests run against.
    pub fn reference_1d() -> Scenario {
        Scenario {
            name: "reference-1d".into(),
            domain: Domain::Interval { a: 0.0, b: 1.0 },
            coefficients: CoefficientField::Identity,
            weight: WeightField::paraboloid([-0.1, 0.0]),
            lower_order: LowerOrderTerms::free(),
            time: TimeSpec::default(),
            geometry: GeometrySpec { delta: 0.3, delta0: 0.1, delta1: 0.25 },
            resolution: ResolutionSpec::default(),
            modes: default_modes(),
            lambda_sweep: default_sweep(),
            shift: None,
            seed: default_seed(),
        }
    }

    /// Interior-critical-point configuration with a small shift.
    pub fn interior_shift_1d() -> Scenario {
        Scenario {
            name: "interior-shift-1d".into(),
            domain: Domain::Interval { a: 0.0, b: 1.0 },
            weight: WeightField::paraboloid([0.5, 0.0]),
            shift: Some([0.05, 0.0]),
            ..Scenario::reference_1d()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scenario_validates_and_round_trips() {
        let s = Scenario::reference_1d();
        s.validate().unwrap();
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        assert_eq!(back.name, s.name);
        assert_eq!(back.seed, s.seed);
    }

    #[test]
    fn radius_order_error_names_the_field() {
        let mut s = Scenario::reference_1d();
        s.geometry.delta0 = 0.4;
        match s.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "geometry.delta0"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_materialize_from_minimal_json() {
        let text = r#"{
            "name": "minimal",
            "domain": {"type": "interval", "a": 0.0, "b": 1.0},
            "weight": {"kind": {"type": "paraboloid", "center": [-0.1, 0.0]},
                       "scale": 1.0, "offset": 0.0, "shift": [0.0, 0.0]},
            "geometry": {"delta": 0.3, "delta0": 0.1}
        }"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.modes, 20);
        assert_eq!(s.resolution.space, 200);
        assert_eq!(s.lambda_sweep.len(), 7);
        assert_eq!(s.geometry.delta1, 0.25);
        assert_eq!(s.seed, 42);
    }

    #[test]
    fn shipped_scenarios_parse_and_validate() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
        for name in ["reference_1d.json", "interior_shift_1d.json", "rect_2d.json"] {
            let sc = Scenario::from_path(&root.join(name))
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            sc.validate().unwrap();
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"name": "x", "bogus": 1}"#;
        assert!(matches!(Scenario::from_json(text), Err(Error::Config { .. })));
    }
}
