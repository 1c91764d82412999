//! Sampled-data closed loops with neural network controllers.
//!
//! [`reach_nncs`] runs the interval-by-interval reachability loop: output
//! set of the plant at `t_k`, controller reach over the output set times the
//! reference box, optional inflation by the reduction precision, then
//! validated integration of the plant over `[t_k, t_{k+1}]` with the control
//! box held constant. [`verify`] checks the resulting tube against unsafe
//! half-space conjunctions.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::network::Network;
use crate::ode::{reach_ode_x_span, reach_ode_y, Dynamics, ReachTube, StepConfig};
use crate::reach::{hull, reach_nn, PartitionConfig};
use crate::reduction::{inflate, InflationMode, Precision};

/// Where one controller input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSource {
    /// Component of the plant output `y`.
    Output(usize),
    /// Component of the reference `r`.
    Reference(usize),
}

/// Assembles the plant input from fixed exogenous values and controller outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantInputMap {
    pub dim: usize,
    /// `(slot, value)` pairs held at a fixed value.
    pub exogenous: Vec<(usize, f64)>,
    /// Plant input slot receiving each controller output.
    pub control_slots: Vec<usize>,
}

impl PlantInputMap {
    /// Controller outputs fill the plant inputs in order.
    pub fn direct(dim: usize) -> Self {
        PlantInputMap {
            dim,
            exogenous: Vec::new(),
            control_slots: (0..dim).collect(),
        }
    }
}

/// A reduced controller together with the precision certificate that licenses it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedController {
    pub network: Network,
    pub precision: Precision,
    pub mode: InflationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    Original,
    Reduced,
}

/// `ẋ = f(x, u)`, `y = h(x)`, `u(t) = Φ(τ(t_k))` on `[t_k, t_{k+1})`, `τ = (y, r)` per the layout.
#[derive(Clone)]
pub struct SampledNncs {
    pub plant: Arc<dyn Dynamics>,
    pub controller: Network,
    pub reduced: Option<ReducedController>,
    pub sampling_period: f64,
    pub reference_box: IntervalBox,
    pub layout: Vec<InputSource>,
    pub plant_inputs: PlantInputMap,
}

impl std::fmt::Debug for SampledNncs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledNncs")
            .field("plant", &self.plant.name())
            .field("controller_widths", &self.controller.widths())
            .field("reduced", &self.reduced.as_ref().map(|r| r.network.widths()))
            .field("sampling_period", &self.sampling_period)
            .finish()
    }
}

impl SampledNncs {
    pub fn new(
        plant: Arc<dyn Dynamics>,
        controller: Network,
        sampling_period: f64,
        reference_box: IntervalBox,
        layout: Vec<InputSource>,
        plant_inputs: PlantInputMap,
    ) -> Result<Self> {
        let sys = SampledNncs {
            plant,
            controller,
            reduced: None,
            sampling_period,
            reference_box,
            layout,
            plant_inputs,
        };
        sys.check()?;
        Ok(sys)
    }

    pub fn with_reduced(mut self, reduced: ReducedController) -> Result<Self> {
        crate::reduction::check_compatible(&self.controller, &reduced.network)?;
        if reduced.precision.input_set.dim() != self.controller.input_dim {
            return Err(Error::shape(
                "precision input set",
                self.controller.input_dim,
                reduced.precision.input_set.dim(),
            ));
        }
        self.reduced = Some(reduced);
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        if !self.sampling_period.is_finite() || self.sampling_period <= 0.0 {
            return Err(Error::Precondition(format!(
                "sampling period must be positive, got {}",
                self.sampling_period
            )));
        }
        if self.layout.len() != self.controller.input_dim {
            return Err(Error::shape("controller input layout", self.controller.input_dim, self.layout.len()));
        }
        let p = self.plant.output_dim();
        let r = self.reference_box.dim();
        for src in &self.layout {
            match *src {
                InputSource::Output(i) if i >= p => {
                    return Err(Error::Precondition(format!("layout reads output {i} but the plant has {p}")))
                }
                InputSource::Reference(j) if j >= r => {
                    return Err(Error::Precondition(format!("layout reads reference {j} but V has dimension {r}")))
                }
                _ => {}
            }
        }
        let map = &self.plant_inputs;
        if map.dim != self.plant.input_dim() {
            return Err(Error::shape("plant input map", self.plant.input_dim(), map.dim));
        }
        if map.control_slots.len() != self.controller.output_dim() {
            return Err(Error::shape("control slots", self.controller.output_dim(), map.control_slots.len()));
        }
        let mut seen = vec![false; map.dim];
        for &slot in map.control_slots.iter().chain(map.exogenous.iter().map(|(s, _)| s)) {
            if slot >= map.dim || seen[slot] {
                return Err(Error::Precondition(format!("plant input slot {slot} is out of range or assigned twice")));
            }
            seen[slot] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Precondition("every plant input slot must be assigned".into()));
        }
        Ok(())
    }

    pub fn network(&self, choice: ControllerChoice) -> Result<&Network> {
        match choice {
            ControllerChoice::Original => Ok(&self.controller),
            ControllerChoice::Reduced => self
                .reduced
                .as_ref()
                .map(|r| &r.network)
                .ok_or_else(|| Error::Precondition("no reduced controller configured".into())),
        }
    }

    /// Number of sampling intervals in `horizon`.
    pub fn intervals(&self, horizon: f64) -> Result<usize> {
        let k = (horizon / self.sampling_period).round();
        if horizon.is_nan() || horizon < 0.0 || (k * self.sampling_period - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::Precondition(format!(
                "horizon {horizon} is not a whole number of sampling periods ({})",
                self.sampling_period
            )));
        }
        Ok(k as usize)
    }

    /// Sampling instant `t_k`.
    pub fn instant(&self, k: usize) -> f64 {
        k as f64 * self.sampling_period
    }

    pub fn controller_input(&self, y: &[f64], r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.reference_box.dim() {
            return Err(Error::shape("reference", self.reference_box.dim(), r.len()));
        }
        Ok(self
            .layout
            .iter()
            .map(|src| match *src {
                InputSource::Output(i) => y[i],
                InputSource::Reference(j) => r[j],
            })
            .collect())
    }

    /// `H = Y × V` arranged per the layout.
    pub fn controller_input_box(&self, y: &IntervalBox) -> IntervalBox {
        IntervalBox::from_intervals(
            self.layout
                .iter()
                .map(|src| match *src {
                    InputSource::Output(i) => y.get(i),
                    InputSource::Reference(j) => self.reference_box.get(j),
                })
                .collect(),
        )
    }

    pub fn plant_input(&self, control: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.plant_inputs.dim];
        for &(slot, v) in &self.plant_inputs.exogenous {
            u[slot] = v;
        }
        for (&slot, &c) in self.plant_inputs.control_slots.iter().zip(control) {
            u[slot] = c;
        }
        u
    }

    pub fn plant_input_box(&self, control: &IntervalBox) -> IntervalBox {
        let mut u = vec![Interval::point(0.0); self.plant_inputs.dim];
        for &(slot, v) in &self.plant_inputs.exogenous {
            u[slot] = Interval::point(v);
        }
        for (&slot, c) in self.plant_inputs.control_slots.iter().zip(control.intervals()) {
            u[slot] = *c;
        }
        IntervalBox::from_intervals(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachConfig {
    pub partition: PartitionConfig,
    pub step: StepConfig,
    pub controller: ControllerChoice,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReachStats {
    /// Seconds spent in controller reachability.
    pub controller_reach_time: f64,
    /// Seconds spent in plant reachability.
    pub ode_reach_time: f64,
    pub total_time: f64,
    pub intervals: usize,
    /// Controller cells propagated over the whole run.
    pub controller_cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NncsReach {
    pub tube: ReachTube,
    /// `R_e(t_k)` for `k = 0..=K`.
    pub instants: Vec<IntervalBox>,
    /// Control box applied on each interval.
    pub controls: Vec<IntervalBox>,
    pub stats: ReachStats,
}

fn check_domain(tau: &IntervalBox, precision: &Precision, time: f64) -> Result<()> {
    for (i, (iv, dom)) in tau.intervals().iter().zip(precision.input_set.intervals()).enumerate() {
        if !iv.is_subset_of(dom) {
            return Err(Error::PrecisionDomain {
                time,
                component: i,
                lower: iv.lo,
                upper: iv.hi,
                domain_lower: dom.lo,
                domain_upper: dom.hi,
            });
        }
    }
    Ok(())
}

/// Reach tube of the closed loop from `x0` over `horizon` seconds.
///
/// With [`ControllerChoice::Reduced`] the reduced network's output sets are
/// inflated by the configured radius; every controller input box must lie
/// inside the set the precision was computed on.
pub fn reach_nncs(sys: &SampledNncs, x0: &IntervalBox, horizon: f64, cfg: &ReachConfig) -> Result<NncsReach> {
    let start = Instant::now();
    let plant = sys.plant.as_ref();
    if x0.dim() != plant.state_dim() {
        return Err(Error::shape("initial set", plant.state_dim(), x0.dim()));
    }
    let intervals = sys.intervals(horizon)?;
    cfg.step.substeps(sys.sampling_period)?;
    let network = sys.network(cfg.controller)?;
    let reduced = match cfg.controller {
        ControllerChoice::Reduced => sys.reduced.as_ref(),
        ControllerChoice::Original => None,
    };

    let mut stats = ReachStats {
        intervals,
        ..ReachStats::default()
    };
    let mut tube = ReachTube::new(x0.clone());
    let mut instants = vec![x0.clone()];
    let mut controls = Vec::with_capacity(intervals);
    let mut state = x0.clone();
    for k in 0..intervals {
        let tk = sys.instant(k);
        let tk1 = sys.instant(k + 1);

        let t_nn = Instant::now();
        let y = reach_ode_y(plant, &state)?;
        let tau = sys.controller_input_box(&y);
        let outputs = reach_nn(network, &tau, &cfg.partition)?;
        let outputs = match reduced {
            Some(r) => {
                check_domain(&tau, &r.precision, tk)?;
                inflate(&outputs, &r.precision, r.mode)
            }
            None => outputs,
        };
        stats.controller_cells += outputs.len();
        let control = hull(&outputs);
        stats.controller_reach_time += t_nn.elapsed().as_secs_f64();

        let t_ode = Instant::now();
        let u = sys.plant_input_box(&control);
        let piece = reach_ode_x_span(plant, &u, &state, tk, tk1, &cfg.step)?;
        stats.ode_reach_time += t_ode.elapsed().as_secs_f64();

        state = piece.final_box().clone();
        tube.extend(piece);
        instants.push(state.clone());
        controls.push(control);
    }
    stats.total_time = start.elapsed().as_secs_f64();
    Ok(NncsReach {
        tube,
        instants,
        controls,
        stats,
    })
}

/// `a · z <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

impl HalfSpace {
    /// Whether some point of the box satisfies the inequality.
    pub fn meets(&self, z: &[Interval]) -> bool {
        let min: f64 = self
            .coeffs
            .iter()
            .zip(z)
            .map(|(&a, iv)| if a >= 0.0 { a * iv.lo } else { a * iv.hi })
            .sum();
        min <= self.bound
    }
}

/// A conjunction of half-spaces describing part of the unsafe set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnsafeRegion {
    pub description: String,
    pub constraints: Vec<HalfSpace>,
}

impl UnsafeRegion {
    /// Conservative intersection test: every inequality is checked at its own best corner.
    pub fn intersects(&self, z: &[Interval]) -> bool {
        self.constraints.iter().all(|h| h.meets(z))
    }
}

/// The unsafe set `¬S` as a union of conjunctions over the state, optionally
/// followed by the plant outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetySpec {
    pub unsafe_regions: Vec<UnsafeRegion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstViolation {
    pub segment: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub region: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub verdict: Verdict,
    pub tube: ReachTube,
    pub first_violation: Option<FirstViolation>,
    pub stats: ReachStats,
}

/// Checks the tube against the unsafe regions (constraints over the state only).
pub fn verify(tube: &ReachTube, spec: &SafetySpec) -> Result<VerificationResult> {
    verify_with_outputs(tube, spec, None)
}

/// Like [`verify`], but constraints may also cover the plant outputs, which
/// are appended to the state as `z = (x, h(x))`.
pub fn verify_with_outputs(
    tube: &ReachTube,
    spec: &SafetySpec,
    plant: Option<&dyn Dynamics>,
) -> Result<VerificationResult> {
    let n = tube.dim();
    let full = n + plant.map_or(0, |p| p.output_dim());
    for region in &spec.unsafe_regions {
        for h in &region.constraints {
            if h.coeffs.len() != n && h.coeffs.len() != full {
                return Err(Error::shape(format!("constraint of \"{}\"", region.description), n, h.coeffs.len()));
            }
        }
    }
    let mut first = None;
    'segments: for (idx, seg) in tube.segments.iter().enumerate() {
        let mut z = seg.enclosure.intervals().to_vec();
        if let Some(p) = plant {
            z.extend(p.output_interval(seg.enclosure.intervals()));
        }
        for (r, region) in spec.unsafe_regions.iter().enumerate() {
            if region.intersects(&z) {
                first = Some(FirstViolation {
                    segment: idx,
                    t_start: seg.t_start,
                    t_end: seg.t_end,
                    region: r,
                    description: region.description.clone(),
                });
                break 'segments;
            }
        }
    }
    Ok(VerificationResult {
        verdict: if first.is_some() { Verdict::Unknown } else { Verdict::Safe },
        tube: tube.clone(),
        first_violation: first,
        stats: ReachStats::default(),
    })
}

/// Reach tube plus verdict in one call, carrying the run statistics.
pub fn verify_system(
    sys: &SampledNncs,
    x0: &IntervalBox,
    horizon: f64,
    cfg: &ReachConfig,
    spec: &SafetySpec,
) -> Result<(VerificationResult, NncsReach)> {
    let run = reach_nncs(sys, x0, horizon, cfg)?;
    let mut result = verify_with_outputs(&run.tube, spec, Some(sys.plant.as_ref()))?;
    result.stats = run.stats.clone();
    Ok((result, run))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};
    use crate::ode::{LinearPlant, TubeSegment};

    fn bx(lo: &[f64], hi: &[f64]) -> IntervalBox {
        IntervalBox::new(lo, hi).unwrap()
    }

    fn tube_of(boxes: &[(f64, f64)]) -> ReachTube {
        let mut tube = ReachTube::new(bx(&[boxes[0].0], &[boxes[0].1]));
        for (k, &(lo, hi)) in boxes.iter().enumerate() {
            let b = bx(&[lo], &[hi]);
            tube.segments.push(TubeSegment {
                t_start: k as f64,
                t_end: k as f64 + 1.0,
                enclosure: b.clone(),
                end: b,
            });
        }
        tube
    }

    fn x_le_zero() -> SafetySpec {
        SafetySpec {
            unsafe_regions: vec![UnsafeRegion {
                description: "x <= 0".into(),
                constraints: vec![HalfSpace { coeffs: vec![1.0], bound: 0.0 }],
            }],
        }
    }

    #[test]
    fn verify_safe_tube() {
        let r = verify(&tube_of(&[(5.0, 6.0), (5.5, 6.0)]), &x_le_zero()).unwrap();
        assert_eq!(r.verdict, Verdict::Safe);
        assert!(r.first_violation.is_none());
    }

    #[test]
    fn verify_reports_first_intersection() {
        let r = verify(&tube_of(&[(5.0, 6.0), (-1.0, 1.0), (-2.0, -1.0)]), &x_le_zero()).unwrap();
        assert_eq!(r.verdict, Verdict::Unknown);
        assert_eq!(r.first_violation.unwrap().segment, 1);
    }

    #[test]
    fn conjunction_uses_per_inequality_corners() {
        // x + y <= 0 and x - y <= 0 over [0,1]^2 meet at the origin
        let region = UnsafeRegion {
            description: "cone".into(),
            constraints: vec![
                HalfSpace { coeffs: vec![1.0, 1.0], bound: 0.0 },
                HalfSpace { coeffs: vec![1.0, -1.0], bound: 0.0 },
            ],
        };
        assert!(region.intersects(bx(&[0.0, 0.0], &[1.0, 1.0]).intervals()));
        assert!(!region.intersects(bx(&[0.5, 0.0], &[1.0, 1.0]).intervals()));
    }

    fn scalar_controller(w: f64) -> Network {
        Network::new(1, vec![Layer::new(vec![vec![w]], vec![0.0], Activation::Linear).unwrap()]).unwrap()
    }

    #[test]
    fn zero_field_keeps_initial_set() {
        let sys = SampledNncs::new(
            Arc::new(LinearPlant::zero(1, 1)),
            scalar_controller(-3.0),
            0.1,
            bx(&[], &[]),
            vec![InputSource::Output(0)],
            PlantInputMap::direct(1),
        )
        .unwrap();
        let cfg = ReachConfig {
            partition: PartitionConfig::uniform(2),
            step: StepConfig::for_period(0.1),
            controller: ControllerChoice::Original,
        };
        let run = reach_nncs(&sys, &bx(&[1.0], &[2.0]), 1.0, &cfg).unwrap();
        assert_eq!(run.stats.intervals, 10);
        assert_eq!(run.tube.segments.len(), 40);
        for s in &run.tube.segments {
            assert!(bx(&[1.0], &[2.0]).is_subset_of(&s.enclosure));
            assert!((s.enclosure.get(0).width() - 1.0).abs() < 1e-12);
        }
        assert_eq!(run.instants.len(), 11);
    }

    #[test]
    fn layout_must_match_controller() {
        let err = SampledNncs::new(
            Arc::new(LinearPlant::zero(1, 1)),
            scalar_controller(1.0),
            0.1,
            bx(&[0.0], &[0.0]),
            vec![InputSource::Output(0), InputSource::Reference(0)],
            PlantInputMap::direct(1),
        );
        assert!(err.is_err());
    }

    #[test]
    fn precision_domain_is_enforced() {
        let sys = SampledNncs::new(
            Arc::new(LinearPlant::integrator(1)),
            scalar_controller(-1.0),
            0.1,
            bx(&[], &[]),
            vec![InputSource::Output(0)],
            PlantInputMap::direct(1),
        )
        .unwrap()
        .with_reduced(ReducedController {
            network: scalar_controller(-1.0),
            precision: Precision::given(0.0, bx(&[-1.0], &[2.0])).unwrap(),
            mode: InflationMode::SoundFullRho,
        })
        .unwrap();
        let cfg = ReachConfig {
            partition: PartitionConfig::uniform(1),
            step: StepConfig::for_period(0.1),
            controller: ControllerChoice::Reduced,
        };
        let err = reach_nncs(&sys, &bx(&[0.5], &[2.5]), 0.5, &cfg).unwrap_err();
        assert!(matches!(err, Error::PrecisionDomain { component: 0, .. }), "{err}");
        reach_nncs(&sys, &bx(&[0.2], &[0.8]), 0.5, &cfg).unwrap();
    }
}
