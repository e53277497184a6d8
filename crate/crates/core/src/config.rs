//! Patient and controller configuration files (TOML).
//!
//! Patient files use clinical units: volumes in L, clearances in L/min and
//! `ke` in 1/min. They are converted to per-second rates on load.

use std::path::Path;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::compensation::{DisturbanceBoundMode, InputBox};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, OffsetCost};
use crate::pkpd::{DrugPkParams, PdParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrugSection {
    #[serde(rename = "V1")]
    pub v1: f64,
    #[serde(rename = "V2")]
    pub v2: f64,
    #[serde(rename = "V3")]
    pub v3: f64,
    #[serde(rename = "Cl1")]
    pub cl1: f64,
    #[serde(rename = "Cl2")]
    pub cl2: f64,
    #[serde(rename = "Cl3")]
    pub cl3: f64,
    pub ke: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdSection {
    #[serde(rename = "E0")]
    pub e0: f64,
    #[serde(rename = "Emax")]
    pub emax: f64,
    pub gamma: f64,
    #[serde(rename = "Ce50p")]
    pub ce50p: f64,
    #[serde(rename = "Ce50r")]
    pub ce50r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientFile {
    pub propofol: DrugSection,
    pub remifentanil: DrugSection,
    pub pd: PdSection,
}

/// Validated patient model in internal (per-second) units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patient {
    pub propofol: DrugPkParams,
    pub remifentanil: DrugPkParams,
    pub pd: PdParams,
}

fn drug(section: &DrugSection, name: &str) -> Result<DrugPkParams> {
    let s = section;
    DrugPkParams::from_clinical(s.v1, s.v2, s.v3, s.cl1, s.cl2, s.cl3, s.ke).map_err(|e| match e {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter {
            field: format!("{name}.{field}"),
            reason,
        },
        other => other,
    })
}

impl Patient {
    pub fn from_file(file: &PatientFile) -> Result<Self> {
        let pd = &file.pd;
        Ok(Self {
            propofol: drug(&file.propofol, "propofol")?,
            remifentanil: drug(&file.remifentanil, "remifentanil")?,
            pd: PdParams::new(pd.e0, pd.emax, pd.gamma, pd.ce50p, pd.ce50r)?,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: PatientFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| with_path(e, path))
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundModeName {
    WorstCase,
    Simulated,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffsetSection {
    pub weight: f64,
    pub direction: [f64; 2],
    pub target: f64,
    pub linear: [f64; 2],
}

impl Default for OffsetSection {
    fn default() -> Self {
        Self {
            weight: 10.0,
            direction: [1.0, -0.5],
            target: 0.0,
            linear: [0.0, 0.0],
        }
    }
}

/// Controller settings as written in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Ts")]
    pub ts: f64,
    #[serde(rename = "Q_diag")]
    pub q_diag: [f64; 4],
    #[serde(rename = "R_diag")]
    pub r_diag: [f64; 2],
    pub epsilon: f64,
    pub lambda: f64,
    pub y_ref: f64,
    /// mg/s propofol, µg/s remifentanil
    pub u_min: [f64; 2],
    pub u_max: [f64; 2],
    pub disturbance_bound_mode: BoundModeName,
    pub m_bar: Option<[f64; 2]>,
    pub vd: OffsetSection,
    pub settling_band: f64,
    pub plant_substep: bool,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            horizon: 24,
            ts: 5.0,
            q_diag: [1.0, 10.0, 1.0, 10.0],
            r_diag: [1.0, 1.0],
            epsilon: 1e-6,
            lambda: 0.99,
            y_ref: 50.0,
            u_min: [0.0, 0.0],
            u_max: [6.67, 16.67],
            disturbance_bound_mode: BoundModeName::Simulated,
            m_bar: None,
            vd: OffsetSection::default(),
            settling_band: 2.0,
            plant_substep: false,
        }
    }
}

impl ControllerSettings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| with_path(e, path))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("controller settings serialize")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::param("Ts", "must be positive"));
        }
        if !(self.settling_band > 0.0) {
            return Err(Error::param("settling_band", "must be positive"));
        }
        if self.disturbance_bound_mode == BoundModeName::Fixed && self.m_bar.is_none() {
            return Err(Error::Config(
                "disturbance_bound_mode = \"fixed\" requires m_bar".into(),
            ));
        }
        self.input_box()?;
        self.mpc_config().validate()
    }

    pub fn input_box(&self) -> Result<InputBox> {
        InputBox::new(Vector2::from(self.u_min), Vector2::from(self.u_max))
    }

    pub fn bound_mode(&self) -> Result<DisturbanceBoundMode> {
        Ok(match self.disturbance_bound_mode {
            BoundModeName::WorstCase => DisturbanceBoundMode::WorstCase,
            BoundModeName::Simulated => DisturbanceBoundMode::Simulated,
            BoundModeName::Fixed => DisturbanceBoundMode::Fixed(Vector2::from(
                self.m_bar
                    .ok_or_else(|| Error::Config("fixed bound mode requires m_bar".into()))?,
            )),
        })
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.horizon,
            q: Matrix4::from_diagonal(&Vector4::from(self.q_diag)),
            r: Matrix2::from_diagonal(&Vector2::from(self.r_diag)),
            epsilon: self.epsilon,
            lambda: self.lambda,
            offset: OffsetCost {
                weight: self.vd.weight,
                direction: Vector2::from(self.vd.direction),
                target: self.vd.target,
                linear: Vector2::from(self.vd.linear),
            },
            y_ref: self.y_ref,
        }
    }
}
