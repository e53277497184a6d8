//! Closed-loop and open-loop simulation of the full eight-state patient.

use std::io::Write;
use std::time::Instant;

use nalgebra::{Vector2, Vector4};

use crate::error::{Error, Result};
use crate::mpc::Controller;
use crate::pkpd::{bis_output, discretize_euler, DiscreteDynamics, FastState, PdParams, SlowState};

pub const CSV_HEADER: &str =
    "t,bis,u_p,u_r,v_p,v_r,va_p,va_r,p1,p4,r1,r4,p2,p3,r2,r3,status,solve_ms";

/// One sampling instant: the measured state and the decision taken on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub bis: f64,
    pub u: Vector2<f64>,
    pub v: Vector2<f64>,
    pub v_a: Vector2<f64>,
    pub xf: Vector4<f64>,
    pub xs: Vector4<f64>,
    pub x_a: Vector4<f64>,
    pub cost: f64,
    pub status: String,
    pub solve_ms: f64,
    pub clamped: bool,
    pub iterations: usize,
    /// Slack of the tightest terminal row at the predicted `(x_N, v_a)`.
    pub terminal_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub ts: f64,
    pub records: Vec<SimRecord>,
    /// State after the last applied input.
    pub final_xf: Vector4<f64>,
    pub final_xs: Vector4<f64>,
    pub final_bis: f64,
}

impl SimLog {
    /// `(t, BIS)` at every sampling instant including the final state.
    pub fn bis_series(&self) -> Vec<(f64, f64)> {
        let mut s: Vec<(f64, f64)> = self.records.iter().map(|r| (r.t, r.bis)).collect();
        let t_end = self.records.last().map_or(0.0, |r| r.t + self.ts);
        s.push((t_end, self.final_bis));
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            let mut fields: Vec<String> = vec![sig12(r.t), sig12(r.bis)];
            fields.extend(
                r.u.iter()
                    .chain(r.v.iter())
                    .chain(r.v_a.iter())
                    .chain(r.xf.iter())
                    .chain(r.xs.iter())
                    .map(|x| sig12(*x)),
            );
            fields.push(r.status.clone());
            fields.push(sig12(r.solve_ms));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Decimal with 12 significant digits, trailing zeros trimmed.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let e = x.abs().log10().floor() as i32;
    if !(-5..12).contains(&e) {
        return format!("{x:.11e}");
    }
    let s = format!("{:.*}", (11 - e).max(0) as usize, x);
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub duration: f64,
    /// Integrate the plant with 1 s Euler sub-steps instead of one step of
    /// length `Ts`.
    pub plant_substep: bool,
    /// Record wall-clock solve times; leave off for reproducible logs.
    pub timing: bool,
}

impl SimOptions {
    pub fn new(duration: f64) -> Self {
        Self {
            duration,
            plant_substep: false,
            timing: false,
        }
    }
}

fn step_count(duration: f64, ts: f64) -> Result<usize> {
    let n = (duration / ts).round();
    if !(duration > 0.0) || (n * ts - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(Error::Config(format!(
            "duration {duration} s is not a positive multiple of Ts = {ts} s"
        )));
    }
    Ok(n as usize)
}

struct Plant {
    model: DiscreteDynamics,
    substeps: usize,
}

impl Plant {
    fn new(model: &DiscreteDynamics, substep: bool) -> Result<Self> {
        if !substep {
            return Ok(Self {
                model: model.clone(),
                substeps: 1,
            });
        }
        let substeps = model.ts.round().max(1.0) as usize;
        let fine = discretize_euler(&model.continuous(), model.ts / substeps as f64)?;
        Ok(Self {
            model: fine,
            substeps,
        })
    }

    fn advance(&self, xf: &FastState, xs: &SlowState, u: &Vector2<f64>) -> (FastState, SlowState) {
        let (mut f, mut s) = (*xf, *xs);
        for _ in 0..self.substeps {
            (f, s) = self.model.step(&f, &s, u);
        }
        (f, s)
    }
}

/// Runs the controller against the plant from `(xf0, xs0)`; the controller
/// sees the exact state at every sampling instant.
pub fn simulate_closed_loop(
    model: &DiscreteDynamics,
    pd: &PdParams,
    ctrl: &mut Controller,
    xf0: FastState,
    xs0: SlowState,
    opts: &SimOptions,
) -> Result<SimLog> {
    let steps = step_count(opts.duration, model.ts)?;
    if xf0.0.iter().chain(xs0.0.iter()).any(|x| *x < 0.0) {
        return Err(Error::Config("initial state must be nonnegative".into()));
    }
    let plant = Plant::new(model, opts.plant_substep)?;
    let (mut xf, mut xs) = (xf0, xs0);
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let start = Instant::now();
        let out = ctrl.control_step(&xf, &xs)?;
        let solve_ms = if opts.timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let x_n = out.predicted_xf[out.predicted_xf.len() - 1];
        let w = nalgebra::DVector::from_iterator(6, x_n.iter().chain(out.v_a.iter()).copied());
        let terminal_slack = -ctrl.terminal().x_a.max_violation(&w);
        records.push(SimRecord {
            t: k as f64 * model.ts,
            bis: bis_output(&xf, pd),
            u: out.u,
            v: out.v0,
            v_a: out.v_a,
            xf: xf.0,
            xs: xs.0,
            x_a: out.x_a,
            cost: out.cost,
            status: format!("{:?}", out.status).to_lowercase(),
            solve_ms,
            clamped: out.clamped,
            iterations: out.iterations,
            terminal_slack,
        });
        (xf, xs) = plant.advance(&xf, &xs, &out.u);
    }
    Ok(SimLog {
        ts: model.ts,
        records,
        final_bis: bis_output(&xf, pd),
        final_xf: xf.0,
        final_xs: xs.0,
    })
}

/// Applies `input(k)` for `steps` sampling periods.
pub fn simulate_open_loop(
    model: &DiscreteDynamics,
    pd: &PdParams,
    steps: usize,
    xf0: FastState,
    xs0: SlowState,
    mut input: impl FnMut(usize) -> Vector2<f64>,
) -> SimLog {
    let (mut xf, mut xs) = (xf0, xs0);
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let u = input(k);
        records.push(SimRecord {
            t: k as f64 * model.ts,
            bis: bis_output(&xf, pd),
            u,
            v: u,
            v_a: Vector2::zeros(),
            xf: xf.0,
            xs: xs.0,
            x_a: Vector4::zeros(),
            cost: 0.0,
            status: "open-loop".into(),
            solve_ms: 0.0,
            clamped: false,
            iterations: 0,
            terminal_slack: 0.0,
        });
        (xf, xs) = model.step(&xf, &xs, &u);
    }
    SimLog {
        ts: model.ts,
        records,
        final_bis: bis_output(&xf, pd),
        final_xf: xf.0,
        final_xs: xs.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// First time after which BIS stays inside the band; `None` if it never
    /// settles within the log.
    pub settling_time: Option<f64>,
    pub undershoot: f64,
    pub terminal_error: f64,
    /// Largest `‖v − v_a‖∞` from the settling time on.
    pub max_input_gap_after_settling: f64,
}

pub fn compute_metrics(log: &SimLog, y_ref: f64, band: f64) -> Result<Metrics> {
    if log.records.is_empty() {
        return Err(Error::Config("empty simulation log".into()));
    }
    let series = log.bis_series();
    let outside = series.iter().rposition(|(_, y)| (y - y_ref).abs() > band);
    let settling_time = match outside {
        None => Some(series[0].0),
        Some(i) if i + 1 == series.len() => None,
        Some(i) => Some(series[i + 1].0),
    };
    let undershoot = series.iter().map(|(_, y)| *y).fold(f64::INFINITY, f64::min);
    let terminal_error = (series[series.len() - 1].1 - y_ref).abs();
    let max_input_gap_after_settling = match settling_time {
        None => f64::INFINITY,
        Some(ts) => log
            .records
            .iter()
            .filter(|r| r.t >= ts)
            .map(|r| (r.v - r.v_a).amax())
            .fold(0.0, f64::max),
    };
    Ok(Metrics {
        settling_time,
        undershoot,
        terminal_error,
        max_input_gap_after_settling,
    })
}
