#![allow(dead_code)]

use std::path::PathBuf;

use anesthesia_mpc::config::{ControllerSettings, Patient};
use anesthesia_mpc::design::Design;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn sample_patient() -> Patient {
    Patient::load(&data_dir().join("patient_sample.toml")).expect("sample patient")
}

pub fn default_settings() -> ControllerSettings {
    ControllerSettings::load(&data_dir().join("controller_default.toml")).expect("default config")
}

pub fn sample_design() -> Design {
    Design::build(&sample_patient(), &default_settings()).expect("sample design")
}
