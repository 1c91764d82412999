//! Adaptive cruise control benchmark.
//!
//! The lead car brakes with a fixed applied acceleration while the ego car is
//! driven by a neural controller fed `τ = (v_set, t_gap, v_e, d_rel, v_rel)`.
//! No trained weights ship with the benchmark, so the controller is fitted
//! to a saturated linear law and then distilled into a small network.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::closed_loop::{
    HalfSpace, InputSource, PlantInputMap, ReducedController, SafetySpec, SampledNncs, UnsafeRegion,
};
use crate::error::Result;
use crate::interval::IntervalBox;
use crate::network::Network;
use crate::ode::AccPlant;
use crate::reach::PartitionConfig;
use crate::reduction::{distill, fit, precision, DistillConfig, Distilled, InflationMode, Precision};

/// Scenario parameters. `v_set` and the lead acceleration are benchmark choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccConfig {
    pub v_set: f64,
    pub t_gap: f64,
    pub d_default: f64,
    /// Applied acceleration `α_l` of the lead car; negative brakes.
    pub lead_accel: f64,
    pub friction: f64,
    pub sampling_period: f64,
    pub intervals: usize,
}

impl Default for AccConfig {
    fn default() -> Self {
        AccConfig {
            v_set: 30.0,
            t_gap: 1.4,
            d_default: 10.0,
            lead_accel: -2.0,
            friction: 0.001,
            sampling_period: 0.01,
            intervals: 300,
        }
    }
}

impl AccConfig {
    pub fn horizon(&self) -> f64 {
        self.intervals as f64 * self.sampling_period
    }

    /// `V = {(v_set, t_gap)}`.
    pub fn reference_box(&self) -> IntervalBox {
        IntervalBox::point(&[self.v_set, self.t_gap])
    }
}

/// `x_l ∈ [94,96], v_l ∈ [30,30.2], γ_l = 0, x_e ∈ [10,11], v_e ∈ [30,30.2], γ_e = 0`.
pub fn acc_initial_set() -> IntervalBox {
    IntervalBox::new(&[94.0, 30.0, 0.0, 10.0, 30.0, 0.0], &[96.0, 30.2, 0.0, 11.0, 30.2, 0.0])
        .expect("constant box is valid")
}

/// Unsafe when `d_rel < d_default + t_gap·v_e`, written over the state as
/// `x_l − x_e − t_gap·v_e ≤ d_default`.
pub fn acc_safety_spec(t_gap: f64, d_default: f64) -> SafetySpec {
    SafetySpec {
        unsafe_regions: vec![UnsafeRegion {
            description: format!("d_rel <= {d_default} + {t_gap} v_e"),
            constraints: vec![HalfSpace {
                coeffs: vec![1.0, 0.0, 0.0, -1.0, -t_gap, 0.0],
                bound: d_default,
            }],
        }],
    }
}

pub const GAIN_SPEED: f64 = 0.5;
pub const GAIN_DISTANCE: f64 = 0.2;
pub const ACCEL_MIN: f64 = -3.0;
pub const ACCEL_MAX: f64 = 2.0;

/// Saturated linear cruise law on `τ = (v_set, t_gap, v_e, d_rel, v_rel)`.
pub fn analytic_law(tau: &[f64], d_default: f64) -> f64 {
    let (v_set, t_gap, v_e, d_rel) = (tau[0], tau[1], tau[2], tau[3]);
    let safe = d_default + t_gap * v_e;
    (GAIN_SPEED * (v_set - v_e) + GAIN_DISTANCE * (d_rel - safe)).clamp(ACCEL_MIN, ACCEL_MAX)
}

/// Controller synthesis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub controller_hidden: Vec<usize>,
    pub reduced_hidden: Vec<usize>,
    pub controller_samples: usize,
    pub reduced_samples: usize,
    pub epochs: usize,
    /// Weight shrinkage; keeps the fitted weights small, which makes interval
    /// propagation through the networks far tighter.
    pub weight_decay: f64,
    /// Box the original controller is fitted on.
    pub train_box: IntervalBox,
    /// Box the reduced controller is distilled on, widened to the precision domain.
    pub domain: IntervalBox,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            seed: 7,
            controller_hidden: vec![20; 5],
            reduced_hidden: vec![5; 2],
            controller_samples: 4000,
            reduced_samples: 4000,
            epochs: 200,
            weight_decay: 0.3,
            train_box: IntervalBox::new(&[20.0, 1.0, 15.0, 20.0, -30.0], &[40.0, 2.0, 50.0, 110.0, 15.0])
                .expect("constant box is valid"),
            domain: IntervalBox::new(&[30.0, 1.4, 25.0, 40.0, -20.0], &[30.0, 1.4, 45.0, 90.0, 5.0])
                .expect("constant box is valid"),
        }
    }
}

impl SynthesisConfig {
    /// The precision domain `U`, pinned to the scenario's references.
    pub fn domain_for(&self, acc: &AccConfig) -> IntervalBox {
        let mut iv = self.domain.intervals().to_vec();
        iv[0] = crate::interval::Interval::point(acc.v_set);
        iv[1] = crate::interval::Interval::point(acc.t_gap);
        IntervalBox::from_intervals(iv)
    }
}

/// Fits the original controller to [`analytic_law`].
pub fn synthesize_controller(acc: &AccConfig, cfg: &SynthesisConfig) -> Result<Distilled> {
    let mut dc = DistillConfig::new(cfg.controller_hidden.clone(), cfg.train_box.clone(), cfg.controller_samples, cfg.seed);
    dc.epochs = cfg.epochs;
    dc.weight_decay = cfg.weight_decay;
    let d_default = acc.d_default;
    fit(|tau| vec![analytic_law(tau, d_default)], 5, 1, &dc)
}

/// Distills `controller` into the reduced architecture over the precision domain.
pub fn reduce_controller(controller: &Network, acc: &AccConfig, cfg: &SynthesisConfig) -> Result<Distilled> {
    let mut dc = DistillConfig::new(
        cfg.reduced_hidden.clone(),
        cfg.domain_for(acc),
        cfg.reduced_samples,
        cfg.seed.wrapping_add(1),
    );
    dc.epochs = cfg.epochs;
    dc.weight_decay = cfg.weight_decay;
    distill(controller, &dc)
}

/// Everything needed to run the benchmark.
#[derive(Debug, Clone)]
pub struct AccScenario {
    pub system: SampledNncs,
    pub initial_set: IntervalBox,
    pub spec: SafetySpec,
    pub horizon: f64,
}

/// Wires the ACC plant, `controller` and the references into a closed loop.
pub fn acc_scenario(acc: &AccConfig, controller: Network) -> Result<AccScenario> {
    let plant = AccPlant { mu: acc.friction };
    let system = SampledNncs::new(
        Arc::new(plant),
        controller,
        acc.sampling_period,
        acc.reference_box(),
        vec![
            InputSource::Reference(0),
            InputSource::Reference(1),
            InputSource::Output(0),
            InputSource::Output(1),
            InputSource::Output(2),
        ],
        PlantInputMap {
            dim: 2,
            exogenous: vec![(0, acc.lead_accel)],
            control_slots: vec![1],
        },
    )?;
    Ok(AccScenario {
        system,
        initial_set: acc_initial_set(),
        spec: acc_safety_spec(acc.t_gap, acc.d_default),
        horizon: acc.horizon(),
    })
}

/// The scenario with both controllers synthesized and the precision certified.
#[derive(Debug, Clone)]
pub struct AccBenchmark {
    pub scenario: AccScenario,
    pub controller: Distilled,
    pub reduced: Distilled,
    pub precision: Precision,
}

/// Synthesizes both controllers, computes `ρ` over the precision domain on
/// `precision_cfg` and attaches the reduced controller to the scenario.
pub fn acc_benchmark(
    acc: &AccConfig,
    syn: &SynthesisConfig,
    precision_cfg: &PartitionConfig,
    mode: InflationMode,
) -> Result<AccBenchmark> {
    let controller = synthesize_controller(acc, syn)?;
    let reduced = reduce_controller(&controller.network, acc, syn)?;
    let precision = precision(&controller.network, &reduced.network, &syn.domain_for(acc), precision_cfg)?;
    let mut scenario = acc_scenario(acc, controller.network.clone())?;
    scenario.system = scenario.system.with_reduced(ReducedController {
        network: reduced.network.clone(),
        precision: precision.clone(),
        mode,
    })?;
    Ok(AccBenchmark {
        scenario,
        controller,
        reduced,
        precision,
    })
}
