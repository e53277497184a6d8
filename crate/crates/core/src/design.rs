//! Offline controller design: model, compensation, input sets and terminal
//! ingredients for one patient and one controller configuration.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, Vector2};

use crate::compensation::{
    compensation_gain, disturbance_bound, tracking_input_set, CompensationGain, InputBox,
};
use crate::config::{ControllerSettings, Patient};
use crate::error::{Error, Result};
use crate::geometry::{read_polyhedron, write_matrix, write_polyhedron, Polyhedron};
use crate::linalg::to_dyn;
use crate::mpc::{steady_segment, Controller, MpcConfig, SteadyInputSet};
use crate::pkpd::{
    build_continuous, discretize_euler, steady_output_row, ContinuousDynamics, DiscreteDynamics,
    SteadyOutput,
};
use crate::terminal::{controllability_index, TerminalIngredients};

pub const X_A_FILE: &str = "X_a.txt";

#[derive(Debug, Clone)]
pub struct Design {
    pub patient: Patient,
    pub settings: ControllerSettings,
    pub continuous: ContinuousDynamics,
    pub model: DiscreteDynamics,
    pub steady: SteadyOutput,
    pub gain: CompensationGain,
    pub u_box: InputBox,
    pub m_bar: Vector2<f64>,
    pub v_box: InputBox,
    pub z_s: SteadyInputSet,
    pub controllability_index: usize,
    pub terminal: TerminalIngredients,
    pub cfg: MpcConfig,
}

impl Design {
    pub fn build(patient: &Patient, settings: &ControllerSettings) -> Result<Self> {
        Self::build_with_terminal_set(patient, settings, None)
    }

    /// As [`Design::build`], reusing a previously computed `X_a` when given.
    pub fn build_with_terminal_set(
        patient: &Patient,
        settings: &ControllerSettings,
        x_a: Option<Polyhedron>,
    ) -> Result<Self> {
        settings.validate()?;
        let cfg = settings.mpc_config();
        let continuous = build_continuous(&patient.propofol, &patient.remifentanil)?;
        let model = discretize_euler(&continuous, settings.ts)?;
        let steady = steady_output_row(&model, &patient.pd, settings.y_ref)?;
        let gain = compensation_gain(&model.b, &model.a_s)?;
        let u_box = settings.input_box()?;
        let m_bar = disturbance_bound(
            &model,
            &u_box,
            settings.bound_mode()?,
            &steady,
            settings.epsilon,
        )?;
        let v_box = tracking_input_set(&u_box, &m_bar)?;
        let z_s = SteadyInputSet::new(&steady, &v_box, settings.epsilon)?;
        let ci = controllability_index(&to_dyn(&model.a_f), &to_dyn(&model.b))?;
        let terminal = match x_a {
            None => TerminalIngredients::compute(
                &model.a_f, &model.b, &cfg.q, &cfg.r, &v_box, cfg.lambda,
            )?,
            Some(set) => TerminalIngredients::without_terminal_set(
                &model.a_f, &model.b, &cfg.q, &cfg.r, cfg.lambda,
            )?
            .with_terminal_set(set)?,
        };
        Ok(Self {
            patient: *patient,
            settings: settings.clone(),
            continuous,
            model,
            steady,
            gain,
            u_box,
            m_bar,
            v_box,
            z_s,
            controllability_index: ci,
            terminal,
            cfg,
        })
    }

    pub fn controller(&self) -> Result<Controller> {
        Controller::new(
            &self.model,
            self.gain,
            self.u_box,
            self.v_box,
            self.z_s,
            self.terminal.clone(),
            self.cfg.clone(),
        )
    }

    pub fn steady_segment(&self) -> Result<(Vector2<f64>, Vector2<f64>)> {
        steady_segment(&self.z_s)
    }

    /// Writes every ingredient as a plain-text matrix file into `dir`.
    pub fn write_bundle(&self, dir: &Path) -> Result<Vec<String>> {
        std::fs::create_dir_all(dir)?;
        let t = &self.terminal;
        let (za, zb) = self.steady_segment()?;
        let boxes = |b: &InputBox| {
            DMatrix::from_row_slice(2, 2, &[b.lower[0], b.upper[0], b.lower[1], b.upper[1]])
        };
        let matrices: Vec<(&str, DMatrix<f64>)> = vec![
            ("K.txt", to_dyn(&t.k)),
            ("P.txt", to_dyn(&t.p)),
            ("psi.txt", to_dyn(&t.psi)),
            ("A_w.txt", to_dyn(&t.a_w)),
            ("D.txt", to_dyn(&self.gain.d)),
            (
                "m_bar.txt",
                DMatrix::from_column_slice(2, 1, self.m_bar.as_slice()),
            ),
            ("U.txt", boxes(&self.u_box)),
            ("V.txt", boxes(&self.v_box)),
            ("g_eff.txt", to_dyn(&self.steady.g_eff)),
            (
                "Z_s_segment.txt",
                DMatrix::from_row_slice(2, 2, &[za[0], za[1], zb[0], zb[1]]),
            ),
        ];
        let mut written = Vec::new();
        for (name, m) in matrices {
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write_matrix(&mut w, &m)?;
            w.flush()?;
            written.push(name.to_string());
        }
        let mut w = BufWriter::new(File::create(dir.join(X_A_FILE))?);
        write_polyhedron(&mut w, &t.x_a)?;
        w.flush()?;
        written.push(X_A_FILE.to_string());
        Ok(written)
    }
}

/// Reads `X_a` from an ingredient bundle.
pub fn load_terminal_set(dir: &Path) -> Result<Polyhedron> {
    let path = dir.join(X_A_FILE);
    let file = File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    read_polyhedron(BufReader::new(file))
}
