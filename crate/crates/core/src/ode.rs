//! Validated reachability for continuous plants under a constant input box.
//!
//! Each substep of length `dt` first finds an a-priori enclosure `B` of all
//! solutions over the substep by Picard iteration (`X + [0,dt]·f(B,U) ⊆ B`),
//! then encloses the state at the end of the substep. The end box is the
//! intersection of the first-order form `X + dt·f(B,U)` with a mean-value
//! form `c + dt·f(c,U) + (I + dt·J(X,U))(X - c) + dt²/2·J(B,U)·f(B,U)`
//! when the plant provides an interval Jacobian.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};

/// A plant `ẋ = f(x, u)`, `y = h(x)` evaluable on points and on boxes.
///
/// Interval evaluations must be inclusion isotone and must contain the point
/// evaluation of every member of the argument boxes.
pub trait Dynamics: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn field(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn field_interval(&self, x: &[Interval], u: &[Interval]) -> Vec<Interval>;

    fn output(&self, x: &[f64]) -> Vec<f64>;
    fn output_interval(&self, x: &[Interval]) -> Vec<Interval>;

    /// Interval enclosure of `∂f/∂x` over the boxes, row-major `n × n`.
    fn jacobian_interval(&self, _x: &[Interval], _u: &[Interval]) -> Option<Vec<Interval>> {
        None
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }
}

/// Linear time-invariant plant `ẋ = Ax + Bu`, `y = Cx` (row-major matrices).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPlant {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl LinearPlant {
    pub fn new(n: usize, m: usize, p: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::shape("A matrix entries", n * n, a.len()));
        }
        if b.len() != n * m {
            return Err(Error::shape("B matrix entries", n * m, b.len()));
        }
        if c.len() != p * n {
            return Err(Error::shape("C matrix entries", p * n, c.len()));
        }
        Ok(LinearPlant { n, m, p, a, b, c })
    }

    /// `ẋ = 0` with identity output.
    pub fn zero(n: usize, m: usize) -> Self {
        Self::new(n, m, n, vec![0.0; n * n], vec![0.0; n * m], identity(n)).expect("consistent sizes")
    }

    /// Scalar `ẋ = -x` (the input is ignored).
    pub fn decay() -> Self {
        Self::new(1, 1, 1, vec![-1.0], vec![0.0], vec![1.0]).expect("consistent sizes")
    }

    /// `ẋ = u`, one input per state.
    pub fn integrator(n: usize) -> Self {
        Self::new(n, n, n, vec![0.0; n * n], identity(n), identity(n)).expect("consistent sizes")
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_vec_interval(m: &[f64], cols: usize, v: &[Interval]) -> Vec<Interval> {
    m.chunks(cols)
        .map(|row| {
            row.iter()
                .zip(v)
                .fold(Interval::point(0.0), |acc, (&w, iv)| acc + iv.scale(w))
        })
        .collect()
}

impl Dynamics for LinearPlant {
    fn name(&self) -> &str {
        "linear"
    }
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn output_dim(&self) -> usize {
        self.p
    }

    fn field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        for i in 0..self.n {
            let ax: f64 = self.a[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, v)| a * v).sum();
            let bu: f64 = if self.m == 0 {
                0.0
            } else {
                self.b[i * self.m..(i + 1) * self.m].iter().zip(u).map(|(b, v)| b * v).sum()
            };
            dx[i] = ax + bu;
        }
    }

    fn field_interval(&self, x: &[Interval], u: &[Interval]) -> Vec<Interval> {
        let ax = mat_vec_interval(&self.a, self.n.max(1), x);
        if self.m == 0 {
            return ax;
        }
        let bu = mat_vec_interval(&self.b, self.m, u);
        ax.into_iter().zip(bu).map(|(p, q)| p + q).collect()
    }

    fn output(&self, x: &[f64]) -> Vec<f64> {
        self.c
            .chunks(self.n.max(1))
            .map(|row| row.iter().zip(x).map(|(c, v)| c * v).sum())
            .collect()
    }

    fn output_interval(&self, x: &[Interval]) -> Vec<Interval> {
        mat_vec_interval(&self.c, self.n.max(1), x)
    }

    fn jacobian_interval(&self, _x: &[Interval], _u: &[Interval]) -> Option<Vec<Interval>> {
        Some(self.a.iter().map(|&a| Interval::point(a)).collect())
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        self.a
            .chunks(self.n.max(1))
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .reduce(f64::max)
    }
}

/// Adaptive cruise control plant: lead and ego cars with first-order
/// actuator lag and quadratic friction.
///
/// State `(x_l, v_l, γ_l, x_e, v_e, γ_e)`, input `(α_l, α_e)`,
/// output `(v_e, d_rel, v_rel)` with `d_rel = x_l - x_e`, `v_rel = v_l - v_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccPlant {
    pub mu: f64,
}

impl Default for AccPlant {
    fn default() -> Self {
        AccPlant { mu: 0.001 }
    }
}

/// The ACC plant with friction `μ = 0.001`.
pub fn acc_dynamics() -> AccPlant {
    AccPlant::default()
}

impl Dynamics for AccPlant {
    fn name(&self) -> &str {
        "acc"
    }
    fn state_dim(&self) -> usize {
        6
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        3
    }

    fn field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = x[2];
        dx[2] = -2.0 * x[2] + 2.0 * u[0] - self.mu * x[1] * x[1];
        dx[3] = x[4];
        dx[4] = x[5];
        dx[5] = -2.0 * x[5] + 2.0 * u[1] - self.mu * x[4] * x[4];
    }

    fn field_interval(&self, x: &[Interval], u: &[Interval]) -> Vec<Interval> {
        let accel = |gamma: Interval, alpha: Interval, v: Interval| {
            gamma.scale(-2.0) + alpha.scale(2.0) - v.sqr().scale(self.mu)
        };
        vec![
            x[1],
            x[2],
            accel(x[2], u[0], x[1]),
            x[4],
            x[5],
            accel(x[5], u[1], x[4]),
        ]
    }

    fn output(&self, x: &[f64]) -> Vec<f64> {
        vec![x[4], x[0] - x[3], x[1] - x[4]]
    }

    fn output_interval(&self, x: &[Interval]) -> Vec<Interval> {
        vec![x[4], x[0] - x[3], x[1] - x[4]]
    }

    fn jacobian_interval(&self, x: &[Interval], _u: &[Interval]) -> Option<Vec<Interval>> {
        let z = Interval::point(0.0);
        let one = Interval::point(1.0);
        let mut j = vec![z; 36];
        for base in [0usize, 3] {
            let r = base;
            j[r * 6 + base + 1] = one;
            j[(r + 1) * 6 + base + 2] = one;
            j[(r + 2) * 6 + base + 1] = x[base + 1].scale(-2.0 * self.mu);
            j[(r + 2) * 6 + base + 2] = Interval::point(-2.0);
        }
        Some(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorOrder {
    #[default]
    Order1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    /// Substep length in seconds; must divide the integration horizon.
    pub dt: f64,
    /// Symmetric widening factor applied after each failed Picard check.
    pub enclosure_inflation: f64,
    pub max_picard_iters: usize,
    pub taylor_order: TaylorOrder,
    /// Intersect with the mean-value form when the plant has a Jacobian.
    pub mean_value: bool,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        StepConfig {
            dt,
            enclosure_inflation: 1.1,
            max_picard_iters: 50,
            taylor_order: TaylorOrder::Order1,
            mean_value: true,
        }
    }

    /// Four substeps per sampling period.
    pub fn for_period(sampling_period: f64) -> Self {
        Self::new(sampling_period / 4.0)
    }

    /// Number of substeps covering `horizon`, or an error when `dt` does not divide it.
    pub fn substeps(&self, horizon: f64) -> Result<usize> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Precondition(format!("dt must be positive, got {}", self.dt)));
        }
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(Error::Precondition(format!("horizon must be nonnegative, got {horizon}")));
        }
        let n = (horizon / self.dt).round();
        if (n * self.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::Precondition(format!(
                "dt = {} does not divide the horizon {horizon} into whole substeps",
                self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// State enclosure over one time slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeSegment {
    pub t_start: f64,
    pub t_end: f64,
    /// Contains every reachable state for `t ∈ [t_start, t_end]`.
    pub enclosure: IntervalBox,
    /// Contains every reachable state at `t_end`.
    pub end: IntervalBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachTube {
    pub initial: IntervalBox,
    pub segments: Vec<TubeSegment>,
}

impl ReachTube {
    pub fn new(initial: IntervalBox) -> Self {
        ReachTube {
            initial,
            segments: Vec::new(),
        }
    }

    /// Box at the end of the last segment.
    pub fn final_box(&self) -> &IntervalBox {
        self.segments.last().map_or(&self.initial, |s| &s.end)
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn extend(&mut self, other: ReachTube) {
        self.segments.extend(other.segments);
    }

    /// Segments whose time slab contains `t`.
    pub fn segments_at(&self, t: f64) -> impl Iterator<Item = &TubeSegment> {
        self.segments.iter().filter(move |s| s.t_start <= t && t <= s.t_end)
    }

    /// Rows `t_a, t_b, lo_0.., hi_0..` for every segment enclosure.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t_a".to_string(), "t_b".to_string()];
        header.extend((0..n).map(|i| format!("lo_{i}")));
        header.extend((0..n).map(|i| format!("hi_{i}")));
        wtr.write_record(&header)?;
        for s in &self.segments {
            let mut row = vec![s.t_start.to_string(), s.t_end.to_string()];
            row.extend(s.enclosure.lower().iter().map(f64::to_string));
            row.extend(s.enclosure.upper().iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn widen(b: &[Interval], factor: f64) -> Vec<Interval> {
    b.iter()
        .map(|iv| {
            let mid = iv.mid();
            let rad = iv.rad() * factor + 1e-12 * (1.0 + mid.abs());
            Interval::new(mid - rad, mid + rad)
        })
        .collect()
}

// Interval ops round to nearest; a few ulps of outward slack per step keep
// the enclosures valid against rounding drift in the accumulated state.
fn round_out(b: &[Interval]) -> Vec<Interval> {
    b.iter()
        .map(|iv| {
            let e = 4.0 * f64::EPSILON * iv.lo.abs().max(iv.hi.abs());
            Interval::new(iv.lo - e, iv.hi + e)
        })
        .collect()
}

fn add_scaled(x: &[Interval], s: Interval, f: &[Interval]) -> Vec<Interval> {
    x.iter().zip(f).map(|(a, b)| *a + s * *b).collect()
}

fn picard_enclosure(
    dynamics: &dyn Dynamics,
    x: &[Interval],
    u: &[Interval],
    dt: f64,
    cfg: &StepConfig,
    t: f64,
) -> Result<Vec<Interval>> {
    let span = Interval::new(0.0, dt);
    let mut b = widen(&add_scaled(x, span, &dynamics.field_interval(x, u)), cfg.enclosure_inflation);
    for _ in 0..cfg.max_picard_iters {
        let cand = add_scaled(x, span, &dynamics.field_interval(&b, u));
        if cand.iter().zip(&b).all(|(c, bb)| c.is_subset_of(bb)) {
            return Ok(round_out(&cand));
        }
        let merged: Vec<Interval> = cand.iter().zip(&b).map(|(c, bb)| c.hull(bb)).collect();
        b = widen(&merged, cfg.enclosure_inflation);
    }
    Err(Error::Enclosure {
        time: t,
        iterations: cfg.max_picard_iters,
    })
}

fn mean_value_step(
    dynamics: &dyn Dynamics,
    x: &[Interval],
    u: &[Interval],
    b: &[Interval],
    fb: &[Interval],
    dt: f64,
) -> Option<Vec<Interval>> {
    let n = x.len();
    let jx = dynamics.jacobian_interval(x, u)?;
    let jb = dynamics.jacobian_interval(b, u)?;
    let center: Vec<Interval> = x.iter().map(|iv| Interval::point(iv.mid())).collect();
    let fc = dynamics.field_interval(&center, u);
    let half_dt2 = 0.5 * dt * dt;
    let out = (0..n)
        .map(|i| {
            let mut acc = center[i] + fc[i].scale(dt);
            for j in 0..n {
                let mut m = jx[i * n + j].scale(dt);
                if i == j {
                    m = m + 1.0;
                }
                acc = acc + m * (x[j] - center[j].lo);
                acc = acc + (jb[i * n + j] * fb[j]).scale(half_dt2);
            }
            acc
        })
        .collect();
    Some(out)
}

/// Encloses the flow of `ẋ = f(x, ū)` for every constant `ū ∈ u` from `x0` over `[t0, t1]`.
pub fn reach_ode_x_span(
    dynamics: &dyn Dynamics,
    u: &IntervalBox,
    x0: &IntervalBox,
    t0: f64,
    t1: f64,
    cfg: &StepConfig,
) -> Result<ReachTube> {
    if x0.dim() != dynamics.state_dim() {
        return Err(Error::shape("initial state box", dynamics.state_dim(), x0.dim()));
    }
    if u.dim() != dynamics.input_dim() {
        return Err(Error::shape("plant input box", dynamics.input_dim(), u.dim()));
    }
    let steps = cfg.substeps(t1 - t0)?;
    let dt = if steps == 0 { 0.0 } else { (t1 - t0) / steps as f64 };
    let ui = u.intervals();
    let mut tube = ReachTube::new(x0.clone());
    let mut x = x0.intervals().to_vec();
    for k in 0..steps {
        let ta = if k == 0 { t0 } else { t0 + (t1 - t0) * k as f64 / steps as f64 };
        let tb = if k + 1 == steps { t1 } else { t0 + (t1 - t0) * (k + 1) as f64 / steps as f64 };
        let b = picard_enclosure(dynamics, &x, ui, dt, cfg, ta)?;
        let fb = dynamics.field_interval(&b, ui);
        let naive = add_scaled(&x, Interval::point(dt), &fb);
        let next = match cfg.mean_value.then(|| mean_value_step(dynamics, &x, ui, &b, &fb, dt)).flatten() {
            Some(mv) => naive
                .iter()
                .zip(&mv)
                .map(|(a, m)| a.intersect(m).unwrap_or(*a))
                .collect(),
            None => naive,
        };
        let next = round_out(&next);
        tube.segments.push(TubeSegment {
            t_start: ta,
            t_end: tb,
            enclosure: IntervalBox::from_intervals(b),
            end: IntervalBox::from_intervals(next.clone()),
        });
        x = next;
    }
    Ok(tube)
}

/// [`reach_ode_x_span`] over `[0, horizon]`.
pub fn reach_ode_x(
    dynamics: &dyn Dynamics,
    u: &IntervalBox,
    x0: &IntervalBox,
    horizon: f64,
    cfg: &StepConfig,
) -> Result<ReachTube> {
    reach_ode_x_span(dynamics, u, x0, 0.0, horizon, cfg)
}

/// Interval image of the output map.
pub fn reach_ode_y(dynamics: &dyn Dynamics, x: &IntervalBox) -> Result<IntervalBox> {
    if x.dim() != dynamics.state_dim() {
        return Err(Error::shape("state box", dynamics.state_dim(), x.dim()));
    }
    Ok(IntervalBox::from_intervals(dynamics.output_interval(x.intervals())))
}
