//! Non-validated closed-loop simulation used as a refutation oracle.
//!
//! Trajectories come from an adaptive Dormand-Prince 5(4) integrator with a
//! tight tolerance. They are point solutions without any enclosure
//! guarantee: a trajectory leaving a tube refutes the tube, but trajectories
//! staying inside certify nothing.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::closed_loop::{ControllerChoice, SampledNncs};
use crate::error::{Error, Result};
use crate::ode::{Dynamics, ReachTube};

/// Header written at the top of every audit report.
pub const ORACLE_NOTICE: &str = "simulation oracle: adaptive Dormand-Prince 5(4), not validated arithmetic; \
     violations refute a tube, absence of violations certifies nothing";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RkConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for RkConfig {
    fn default() -> Self {
        RkConfig {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

impl RkConfig {
    pub fn with_tolerance(tol: f64) -> Self {
        RkConfig {
            rtol: tol,
            atol: tol,
            ..Self::default()
        }
    }
}

// Dormand-Prince 5(4) tableau; the plant is autonomous under a held input,
// so the node offsets are not needed
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `ẋ = f(x, u)` with constant `u` from `t0` to `t1`.
pub fn integrate(
    dynamics: &dyn Dynamics,
    x0: &[f64],
    u: &[f64],
    t0: f64,
    t1: f64,
    cfg: &RkConfig,
) -> Result<Vec<f64>> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(x);
    }
    let mut t = t0;
    let mut h = span.min(1e-3);
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut x5 = vec![0.0; n];
    let mut steps = 0usize;
    dynamics.field(&x, u, &mut k[0]);
    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(Error::Simulation {
                time: t,
                reason: format!("step budget of {} exhausted", cfg.max_steps),
            });
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = x[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                stage[i] = acc;
            }
            dynamics.field(&stage, u, &mut k[s]);
        }
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut y5 = x[i];
            let mut e = 0.0;
            for s in 0..7 {
                y5 += h * B5[s] * k[s][i];
                e += h * (B5[s] - B4[s]) * k[s][i];
            }
            x5[i] = y5;
            let scale = cfg.atol + cfg.rtol * x[i].abs().max(y5.abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() {
            return Err(Error::Simulation {
                time: t,
                reason: "non-finite error estimate".into(),
            });
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            x.copy_from_slice(&x5);
            // first-same-as-last: stage 7 is f at the new point
            let k7 = k[6].clone();
            k[0] = k7;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * span.max(t.abs()) {
            return Err(Error::Simulation {
                time: t,
                reason: format!("step size underflow ({h:e})"),
            });
        }
    }
    Ok(x)
}

/// A sampled closed-loop solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Controller output held over each sampling interval.
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    fn header(&self) -> Vec<String> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("x_{i}")));
        header.extend((0..m).map(|i| format!("u_{i}")));
        header
    }

    fn rows(&self, samples_per_interval: usize) -> impl Iterator<Item = Vec<String>> + '_ {
        self.times.iter().zip(&self.states).enumerate().map(move |(idx, (t, x))| {
            let k = (idx / samples_per_interval.max(1)).min(self.controls.len().saturating_sub(1));
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(f64::to_string));
            if let Some(u) = self.controls.get(k) {
                row.extend(u.iter().map(f64::to_string));
            }
            row
        })
    }

    /// Rows `t, x.., u..`; the control column is the one held from that time on
    /// (the last one is repeated at the final sample).
    pub fn write_csv<W: Write>(&self, out: W, samples_per_interval: usize) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.header())?;
        for row in self.rows(samples_per_interval) {
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, samples_per_interval: usize) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file), samples_per_interval)
    }
}

/// Several trajectories in one table with a leading `trajectory` id column.
pub fn write_trajectories_csv<W: Write>(trajs: &[Trajectory], out: W, samples_per_interval: usize) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    if let Some(first) = trajs.first() {
        let mut header = vec!["trajectory".to_string()];
        header.extend(first.header());
        wtr.write_record(&header)?;
    }
    for (id, traj) in trajs.iter().enumerate() {
        for row in traj.rows(samples_per_interval) {
            let mut full = vec![id.to_string()];
            full.extend(row);
            wtr.write_record(&full)?;
        }
    }
    wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rk: RkConfig,
    /// Recorded samples per sampling interval (in addition to the sampling instants).
    pub samples_per_interval: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rk: RkConfig::default(),
            samples_per_interval: 4,
        }
    }
}

/// Simulates the sampled-data loop: the controller output at `t_k` is held
/// constant on `[t_k, t_{k+1})`.
pub fn simulate(
    sys: &SampledNncs,
    x0: &[f64],
    r: &[f64],
    horizon: f64,
    choice: ControllerChoice,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let plant = sys.plant.as_ref();
    if x0.len() != plant.state_dim() {
        return Err(Error::shape("initial state", plant.state_dim(), x0.len()));
    }
    let intervals = sys.intervals(horizon)?;
    let network = sys.network(choice)?;
    let samples = cfg.samples_per_interval.max(1);
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        controls: Vec::with_capacity(intervals),
    };
    let mut x = x0.to_vec();
    for k in 0..intervals {
        let tk = sys.instant(k);
        let tk1 = sys.instant(k + 1);
        let y = plant.output(&x);
        let tau = sys.controller_input(&y, r)?;
        let control = network.eval(&tau)?;
        let u = sys.plant_input(&control);
        for j in 1..=samples {
            let ta = *traj.times.last().expect("non-empty");
            let tb = if j == samples { tk1 } else { tk + (tk1 - tk) * j as f64 / samples as f64 };
            x = integrate(plant, &x, &u, ta, tb, &cfg.rk)?;
            traj.times.push(tb);
            traj.states.push(x.clone());
        }
        traj.controls.push(control);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub trajectory: usize,
    pub time: f64,
    pub component: usize,
    /// Distance outside the closest covering segment box.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub notice: String,
    pub trajectories: usize,
    pub samples_checked: usize,
    /// Samples whose time is not covered by any tube segment.
    pub uncovered_samples: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.uncovered_samples == 0
    }
}

/// Checks every trajectory sample against the tube segments covering its time.
/// A sample is accepted when it lies in at least one covering segment.
pub fn containment_audit(trajs: &[Trajectory], tube: &ReachTube) -> AuditReport {
    let mut report = AuditReport {
        notice: ORACLE_NOTICE.to_string(),
        trajectories: trajs.len(),
        samples_checked: 0,
        uncovered_samples: 0,
        violations: Vec::new(),
    };
    for (id, traj) in trajs.iter().enumerate() {
        for (&t, x) in traj.times.iter().zip(&traj.states) {
            report.samples_checked += 1;
            let mut best: Option<Vec<f64>> = None;
            let mut inside = false;
            for seg in tube.segments_at(t) {
                let excess = seg.enclosure.excess(x);
                if excess.iter().all(|&e| e == 0.0) {
                    inside = true;
                    break;
                }
                let worst = excess.iter().copied().fold(0.0, f64::max);
                if best.as_ref().is_none_or(|b| worst < b.iter().copied().fold(0.0, f64::max)) {
                    best = Some(excess);
                }
            }
            if inside {
                continue;
            }
            match best {
                None if t == 0.0 && tube.segments.is_empty() => {
                    for (component, e) in tube.initial.excess(x).into_iter().enumerate() {
                        if e > 0.0 {
                            report.violations.push(Violation { trajectory: id, time: t, component, margin: e });
                        }
                    }
                }
                None => report.uncovered_samples += 1,
                Some(excess) => {
                    for (component, e) in excess.into_iter().enumerate() {
                        if e > 0.0 {
                            report.violations.push(Violation { trajectory: id, time: t, component, margin: e });
                        }
                    }
                }
            }
        }
    }
    report
}
