//! Preset scenarios and the TOML scenario format.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::analysis::AnalysisSettings;
use crate::dither::DitherSignal;
use crate::error::{EscError, Result};
use crate::gekf::GekfConfig;
use crate::model::{ChannelSpec, EscSystemSpec, ExtremumKind, ObjectiveMap, ScalarMap};
use crate::sim::SimOptions;

pub const PRESETS: [&str; 3] = ["case1", "case2", "case3"];

/// One independently running ESC instance of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub name: String,
    /// Agent frequency as a multiple of the scenario's base frequency.
    #[serde(default = "one")]
    pub omega_multiplier: f64,
    pub spec: EscSystemSpec,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub options: SimOptions,
    #[serde(default)]
    pub gekf: GekfConfig,
    #[serde(default)]
    pub analysis: AnalysisSettings,
    pub agents: Vec<Agent>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(EscError::Config(format!("scenario `{}` has no agents", self.name)));
        }
        self.gekf.validate()?;
        for agent in &self.agents {
            agent.spec.validate().map_err(|e| EscError::Config(format!("agent `{}`: {e}", agent.name)))?;
        }
        Ok(())
    }

    /// Base frequency: the first agent's ω divided by its multiplier.
    pub fn base_omega(&self) -> f64 {
        let a = &self.agents[0];
        a.spec.omega / a.omega_multiplier
    }

    /// Sets the base frequency; each agent runs at `omega·multiplier`.
    pub fn set_omega(&mut self, omega: f64) {
        for a in &mut self.agents {
            a.spec.omega = omega * a.omega_multiplier;
        }
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        for a in &mut self.agents {
            a.spec.lambda.iter_mut().for_each(|l| *l = lambda);
        }
    }

    pub fn set_dt(&mut self, dt: f64) {
        for a in &mut self.agents {
            a.spec.dt = Some(dt);
        }
    }

    pub fn set_horizon(&mut self, horizon: f64) {
        for a in &mut self.agents {
            a.spec.horizon = horizon;
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Preset name, or a path to a TOML scenario file.
pub fn resolve(name_or_path: &str) -> Result<Scenario> {
    if PRESETS.contains(&name_or_path) {
        return preset(name_or_path);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return Scenario::load(path);
    }
    preset(name_or_path)
}

pub fn preset(name: &str) -> Result<Scenario> {
    match name {
        "case1" => Ok(case1()),
        "case2" => Ok(case2()),
        "case3" => Ok(case3()),
        _ => Err(EscError::Lookup { name: name.to_string(), available: PRESETS.join(", ") }),
    }
}

/// Filter tuning shared by the presets: a faster velocity state and a
/// tighter measurement variance than the library defaults.
pub fn tuned_gekf() -> GekfConfig {
    GekfConfig { q2: 1e-2, r: 1e-4, ..GekfConfig::default() }
}

fn cos_sin() -> Vec<DitherSignal> {
    vec![DitherSignal::cosine(), DitherSignal::sine()]
}

/// Scalar plant `ẋ = f(x)u₁ + u₂`, `f = 2(x−1)²`.
pub fn case1() -> Scenario {
    let objective = ObjectiveMap::quadratic(vec![1.0], vec![2.0], 0.0, vec![(-2.0, 4.0)]);
    let spec = EscSystemSpec {
        objective,
        channels: vec![ChannelSpec { b1: ScalarMap::linear(1.0), b2: ScalarMap::constant(1.0), dither_pair: (0, 1) }],
        dithers: cos_sin(),
        omega: 8.0,
        a0: vec![1.0],
        lambda: vec![0.1],
        x0: vec![2.0],
        horizon: 100.0,
        dt: None,
    };
    Scenario {
        name: "case1".into(),
        description: "scalar ESC x' = f(x)u1 + u2 with f = 2(x-1)^2".into(),
        notes: vec!["horizon and integrator step are library defaults".into()],
        options: SimOptions::default(),
        gekf: tuned_gekf(),
        analysis: AnalysisSettings::default(),
        agents: vec![Agent { name: "main".into(), omega_multiplier: 1.0, spec }],
    }
}

/// Planar vehicle steered by `(cos kf, sin kf)` / `(−sin kf, cos kf)` fields
/// sharing one dither pair, `f = x² + y²`.
pub fn case2() -> Scenario {
    let k = 2.0;
    let a0 = 0.5_f64.sqrt();
    let objective = ObjectiveMap::quadratic(vec![0.0, 0.0], vec![1.0, 1.0], 0.0, vec![(-3.0, 3.0), (-3.0, 3.0)]);
    let spec = EscSystemSpec {
        objective,
        channels: vec![
            ChannelSpec { b1: ScalarMap::Cos { k, scale: 1.0 }, b2: ScalarMap::Sin { k, scale: -1.0 }, dither_pair: (0, 1) },
            ChannelSpec { b1: ScalarMap::Sin { k, scale: 1.0 }, b2: ScalarMap::Cos { k, scale: 1.0 }, dither_pair: (0, 1) },
        ],
        dithers: cos_sin(),
        omega: 25.0,
        a0: vec![a0, a0],
        lambda: vec![0.1, 0.1],
        x0: vec![1.0, 1.0],
        horizon: 100.0,
        dt: None,
    };
    Scenario {
        name: "case2".into(),
        description: "planar vehicle with shared dithers, alpha = a^2 = 0.5, k = 2, f = x^2 + y^2".into(),
        notes: vec![
            "lambda = 0.1 and x0 = (1, 1) are library defaults".into(),
            "horizon and integrator step are library defaults".into(),
        ],
        options: SimOptions::default(),
        gekf: tuned_gekf(),
        analysis: AnalysisSettings::default(),
        agents: vec![Agent { name: "vehicle".into(), omega_multiplier: 1.0, spec }],
    }
}

/// Vehicle-3 channel gain `c₃` of the three-agent scenario.
pub const CASE3_C: f64 = 1.0;
/// Vehicle-3 constant element `a₃`.
pub const CASE3_A: f64 = 0.3;

fn case3_agent(name: &str, mult: f64, base_omega: f64, center: [f64; 2], weights: [f64; 2], f_star: f64) -> Agent {
    let mut objective = ObjectiveMap::quadratic(center.to_vec(), weights.to_vec(), f_star, vec![(-4.0, 4.0), (-4.0, 4.0)]);
    objective.kind = ExtremumKind::Max;
    let spec = EscSystemSpec {
        objective,
        channels: vec![
            // x: b1 = c·s, b2 = a₃
            ChannelSpec { b1: ScalarMap::linear(CASE3_C), b2: ScalarMap::constant(CASE3_A), dither_pair: (0, 1) },
            // y: b1 = a₃, b2 = −c·s, probed at twice the x frequency
            ChannelSpec { b1: ScalarMap::constant(CASE3_A), b2: ScalarMap::linear(-CASE3_C), dither_pair: (2, 3) },
        ],
        dithers: vec![
            DitherSignal::cosine(),
            DitherSignal::sine(),
            DitherSignal::cosine().with_period(PI),
            DitherSignal::sine().with_period(PI),
        ],
        omega: base_omega * mult,
        a0: vec![2.0, 2.0],
        lambda: vec![0.05, 0.05],
        x0: vec![0.0, 0.0],
        horizon: 100.0,
        dt: None,
    };
    Agent { name: name.into(), omega_multiplier: mult, spec }
}

/// Three independent single-integrator vehicles maximizing their own maps.
pub fn case3() -> Scenario {
    let base = 400.0;
    Scenario {
        name: "case3".into(),
        description: "three single-integrator vehicles; vehicle3 maximizes -(x+1)^2/2 - 3(y-1)^2/2 + 10".into(),
        notes: vec![
            "vehicle1 and vehicle2 maps, c3 = 1, a3 = 0.3, washout disabled, frequency multipliers, \
             omega, a0, lambda, x0 and horizon are library defaults"
                .into(),
            "maximization: the ESC descends on -f".into(),
        ],
        options: SimOptions::default(),
        gekf: tuned_gekf(),
        analysis: AnalysisSettings::default(),
        agents: vec![
            case3_agent("vehicle1", 1.0, base, [1.0, -1.0], [-0.5, -0.5], 0.0),
            case3_agent("vehicle2", 1.1, base, [0.0, 2.0], [-0.5, -0.5], 0.0),
            case3_agent("vehicle3", 1.2, base, [-1.0, 1.0], [-0.5, -1.5], 10.0),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dither::verify_assumption_a2;

    #[test]
    fn presets_validate_and_pass_a2() {
        for name in PRESETS {
            let sc = preset(name).unwrap();
            sc.validate().unwrap();
            for agent in &sc.agents {
                for d in &agent.spec.dithers {
                    assert!(verify_assumption_a2(d).all(), "{name}/{}", agent.name);
                }
            }
        }
    }

    #[test]
    fn unknown_preset_lists_available() {
        match preset("case9") {
            Err(EscError::Lookup { available, .. }) => assert!(available.contains("case1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn presets_round_trip() {
        for name in PRESETS {
            let sc = preset(name).unwrap();
            let text = sc.to_toml().unwrap();
            assert_eq!(Scenario::from_toml(&text).unwrap(), sc, "{name}");
        }
    }

    #[test]
    fn omega_override_respects_multipliers() {
        let mut sc = case3();
        sc.set_omega(50.0);
        let w: Vec<f64> = sc.agents.iter().map(|a| a.spec.omega).collect();
        assert_eq!(w, vec![50.0, 55.00000000000001, 60.0]);
        assert_eq!(sc.base_omega(), 50.0);
    }
}
