//! Scenario files: JSON description of a network, its discretization
//! parameters, initial states and the reachability workflow.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::AbstractionContext;
use crate::discretization::{self, DiscretizationError, DiscretizationParams, PlanningConstants};
use crate::dynamics::{AgentNetwork, AgentSpec, Bounds, DynamicsError, ExampleSystem, EXAMPLE_PRESET};
use crate::geometry::{self, CellDecomposition, Domain, GeometryError};
use crate::integrator::{Integrator, DEFAULT_TOL_ODE};
use crate::linalg::Point;
use crate::reachability::InputFamily;
use crate::workflow::{self, ExampleSetup, TargetBox, WorkflowError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
}

fn default_param() -> f64 {
    10.0
}

fn default_horizon() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Preset {
        name: String,
        #[serde(default = "default_param")]
        rho: f64,
        #[serde(default = "default_param")]
        radius: f64,
    },
    Custom {
        dim: usize,
        agents: Vec<AgentSpec>,
        bounds: Bounds,
        domain: Domain,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", deny_unknown_fields)]
pub enum WorkflowSpec {
    /// Fixed input of the decoupled agent, forward/backward reach.
    #[serde(rename = "I")]
    CaseI {
        #[serde(default)]
        targets: Option<Vec<TargetBox>>,
    },
    /// Switching input family of the decoupled agent, robust reach.
    #[serde(rename = "II")]
    CaseII {
        #[serde(default)]
        family: Option<InputFamily>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub network: NetworkSpec,
    pub lambda: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Custom networks only; presets derive both from `λ`.
    #[serde(default)]
    pub d_max: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub initial_states: Option<Vec<Point>>,
    #[serde(default)]
    pub workflow: Option<WorkflowSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tol_ode: Option<f64>,
}

impl Scenario {
    /// Parses JSON, reporting the field path of the first error.
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// The example preset with default initial states.
    pub fn preset(lambda: f64, rho: f64, radius: f64, horizon: f64) -> Self {
        Scenario {
            network: NetworkSpec::Preset {
                name: EXAMPLE_PRESET.to_string(),
                rho,
                radius,
            },
            lambda,
            mu: 0.0,
            horizon,
            d_max: None,
            dt: None,
            initial_states: None,
            workflow: None,
            seed: None,
            tol_ode: None,
        }
    }

    /// Validates and derives the grid and parameters.
    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ScenarioError::Invalid(format!(
                "lambda = {} outside (0, 1)",
                self.lambda
            )));
        }
        let integ = Integrator::with_tol(self.tol_ode.unwrap_or(DEFAULT_TOL_ODE));
        match &self.network {
            NetworkSpec::Preset { name, rho, radius } => {
                ExampleSystem::preset(name, *rho, *radius)?;
                if self.d_max.is_some() || self.dt.is_some() {
                    return Err(ScenarioError::Invalid(
                        "d_max and dt are derived from lambda for the preset".into(),
                    ));
                }
                let mut setup = ExampleSetup::new(self.lambda, *rho, *radius, self.horizon)?;
                setup.integ = integ;
                let x0 = self.initial_states.clone().unwrap_or_else(|| {
                    ExampleSystem::initial_states()
                        .into_iter()
                        .map(|p| p.iter().map(|v| v * rho / 10.0).collect())
                        .collect()
                });
                setup.check_initial(&x0)?;
                Ok(Resolved {
                    net: setup.system.network.clone(),
                    dec: setup.dec.clone(),
                    params: setup.params,
                    nt: setup.nt,
                    x0,
                    integ,
                    example: Some(setup),
                })
            }
            NetworkSpec::Custom {
                dim,
                agents,
                bounds,
                domain,
            } => {
                domain.validate()?;
                if domain.dim() != *dim {
                    return Err(ScenarioError::Invalid(format!(
                        "domain has dimension {}, network {dim}",
                        domain.dim()
                    )));
                }
                let net = AgentNetwork::new(*dim, agents.clone(), *bounds)?;
                let c = PlanningConstants::from_network(&net)?;
                let ivs = discretization::admissible_dmax_interval(self.lambda, self.mu, &c)?;
                let cap = ivs.iter().map(|iv| iv.hi).fold(0.0, f64::max);
                let target = self.d_max.unwrap_or(0.5 * cap);
                let side = geometry::fit_side(domain, target)?;
                let dec = CellDecomposition::build_grid(domain.clone(), side)?;
                let params = match self.dt {
                    Some(dt) => {
                        DiscretizationParams::general(self.lambda, self.mu, &c, dec.d_max(), dt, domain.diameter())?
                    }
                    None => {
                        DiscretizationParams::general_max_dt(self.lambda, self.mu, &c, dec.d_max(), domain.diameter())?
                    }
                };
                let nt = (self.horizon / params.dt).ceil().max(1.0) as usize;
                let x0 = self
                    .initial_states
                    .clone()
                    .ok_or_else(|| ScenarioError::Invalid("custom networks need initial_states".into()))?;
                if x0.len() != net.len() {
                    return Err(ScenarioError::Invalid(format!(
                        "{} initial states for {} agents",
                        x0.len(),
                        net.len()
                    )));
                }
                for p in &x0 {
                    dec.locate(p)?;
                }
                Ok(Resolved {
                    net,
                    dec,
                    params,
                    nt,
                    x0,
                    integ,
                    example: None,
                })
            }
        }
    }

    /// Case I target boxes, falling back to the illustrative ones.
    pub fn targets(&self) -> Vec<TargetBox> {
        match &self.workflow {
            Some(WorkflowSpec::CaseI { targets: Some(t) }) => t.clone(),
            _ => workflow::illustrative_targets(),
        }
    }

    /// Case II input family, falling back to the example family.
    pub fn family(&self) -> InputFamily {
        match &self.workflow {
            Some(WorkflowSpec::CaseII { family: Some(f) }) => f.clone(),
            _ => InputFamily::example_switching(),
        }
    }
}

/// A validated scenario with its grid and certified parameters.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub net: AgentNetwork,
    pub dec: CellDecomposition,
    pub params: DiscretizationParams,
    pub nt: usize,
    pub x0: Vec<Point>,
    pub integ: Integrator,
    /// Present for the example preset.
    pub example: Option<ExampleSetup>,
}

impl Resolved {
    pub fn context(&self, open_w: bool) -> AbstractionContext<'_> {
        AbstractionContext::new(&self.net, &self.params, &self.dec)
            .with_integrator(self.integ)
            .with_open_w(open_w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_path_in_errors() {
        let err = Scenario::from_json(r#"{"network": {"kind": "preset", "name": "x"}, "lambda": "a"}"#).unwrap_err();
        match err {
            ScenarioError::Parse { path, .. } => assert_eq!(path, "lambda"),
            other => panic!("{other:?}"),
        }
        let err = Scenario::from_json(
            r#"{"network": {"kind": "custom", "dim": 2, "agents": [{"neighbors": [], "terms": [{"type": "bogus"}]}],
                "bounds": {"M": 1, "L1": 1, "L2": 1, "v_max": 0.5}, "domain": {"kind": "disk", "center": [0,0], "radius": 1}},
                "lambda": 0.3}"#,
        )
        .unwrap_err();
        match err {
            // internally tagged enums buffer their content, so the path stops at the tag owner
            ScenarioError::Parse { path, message } => {
                assert_eq!(path, "network");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn preset_resolves() {
        let s = Scenario::from_json(r#"{"network": {"kind": "preset", "name": "four-agent-example"}, "lambda": 0.3}"#)
            .unwrap();
        let r = s.resolve().unwrap();
        assert_eq!(r.nt, 26);
        assert_eq!(r.dec.grid_counts(), &[116, 116]);
        assert!(Scenario::preset(1.2, 10.0, 10.0, 2.0).resolve().is_err());
    }

    #[test]
    fn custom_resolves() {
        let s = Scenario::from_json(
            r#"{"network": {"kind": "custom", "dim": 2,
                "agents": [{"neighbors": [], "terms": [{"type": "constant", "value": [0.5, 0.0]}]}],
                "bounds": {"M": 1, "L1": 0, "L2": 0.1, "v_max": 0.5},
                "domain": {"kind": "box", "lo": [0, 0], "hi": [4, 4]}},
                "lambda": 0.3, "initial_states": [[1, 1]]}"#,
        )
        .unwrap();
        let r = s.resolve().unwrap();
        assert!(r.params.is_admissible());
        assert_eq!(r.nt, (2.0 / r.params.dt).ceil() as usize);
    }
}
