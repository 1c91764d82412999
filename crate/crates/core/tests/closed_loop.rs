use std::sync::OnceLock;

use nnredux::acc::{acc_benchmark, AccBenchmark, AccConfig, SynthesisConfig};
use nnredux::closed_loop::{
    reach_nncs, verify, ControllerChoice, HalfSpace, ReachConfig, ReducedController, SafetySpec, UnsafeRegion, Verdict,
};
use nnredux::ode::{ReachTube, StepConfig, TubeSegment};
use nnredux::reach::PartitionConfig;
use nnredux::reduction::{InflationMode, Precision};
use nnredux::sim::{simulate, RkConfig, SimConfig};
use nnredux::IntervalBox;
use proptest::prelude::*;

fn bench() -> &'static AccBenchmark {
    static BENCH: OnceLock<AccBenchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
        acc_benchmark(
            &AccConfig::default(),
            &SynthesisConfig::default(),
            &PartitionConfig::uniform(16),
            InflationMode::SoundFullRho,
        )
        .unwrap()
    })
}

fn cfg(choice: ControllerChoice) -> ReachConfig {
    ReachConfig {
        partition: PartitionConfig::uniform(2),
        step: StepConfig::for_period(0.01),
        controller: choice,
    }
}

#[test]
fn larger_rho_gives_a_containing_tube() {
    let b = bench();
    let sc = &b.scenario;
    let horizon = 1.0;
    let with_rho = |rho: f64| {
        let mut p: Precision = b.precision.clone();
        p.rho = rho;
        let sys = nnredux::closed_loop::SampledNncs {
            reduced: None,
            ..sc.system.clone()
        }
        .with_reduced(ReducedController {
            network: b.reduced.network.clone(),
            precision: p,
            mode: InflationMode::SoundFullRho,
        })
        .unwrap();
        reach_nncs(&sys, &sc.initial_set, horizon, &cfg(ControllerChoice::Reduced)).unwrap().tube
    };
    let small = with_rho(b.precision.rho);
    let large = with_rho(b.precision.rho * 1.5);
    for (s, l) in small.segments.iter().zip(&large.segments) {
        assert!(s.enclosure.is_subset_of(&l.enclosure), "at t = {}", s.t_start);
    }
}

#[test]
fn reduced_controls_stay_within_rho() {
    let b = bench();
    let sc = &b.scenario;
    let x0 = sc.initial_set.center();
    let r = sc.system.reference_box.center();
    let sim = SimConfig::default();
    let a = simulate(&sc.system, &x0, &r, 1.0, ControllerChoice::Original, &sim).unwrap();
    let c = simulate(&sc.system, &x0, &r, 1.0, ControllerChoice::Reduced, &sim).unwrap();
    // compare at the first sample, where both start from the same state
    assert!((a.controls[0][0] - c.controls[0][0]).abs() <= b.precision.rho);
    // the reduced controller evaluated on the original trajectory's inputs
    for (k, u) in a.controls.iter().enumerate() {
        let x = &a.states[k * sim.samples_per_interval];
        let y = sc.system.plant.output(x);
        let tau = sc.system.controller_input(&y, &r).unwrap();
        let v = b.reduced.network.eval(&tau).unwrap();
        assert!((u[0] - v[0]).abs() <= b.precision.rho);
    }
}

#[test]
fn oracle_is_self_consistent() {
    let sc = &bench().scenario;
    let x0 = sc.initial_set.lower();
    let r = sc.system.reference_box.center();
    let coarse = SimConfig::default();
    let fine = SimConfig {
        rk: RkConfig::with_tolerance(coarse.rk.rtol / 2.0),
        ..coarse
    };
    let a = simulate(&sc.system, &x0, &r, sc.horizon, ControllerChoice::Original, &coarse).unwrap();
    let b = simulate(&sc.system, &x0, &r, sc.horizon, ControllerChoice::Original, &fine).unwrap();
    let worst = a
        .states
        .iter()
        .zip(&b.states)
        .flat_map(|(p, q)| p.iter().zip(q).map(|(s, t)| (s - t).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-7, "{worst}");
}

fn tube_of(boxes: &[(f64, f64)]) -> ReachTube {
    let first = IntervalBox::new(&[boxes[0].0], &[boxes[0].1]).unwrap();
    let mut tube = ReachTube::new(first);
    for (k, &(lo, hi)) in boxes.iter().enumerate() {
        let b = IntervalBox::new(&[lo], &[hi]).unwrap();
        tube.segments.push(TubeSegment {
            t_start: k as f64,
            t_end: k as f64 + 1.0,
            enclosure: b.clone(),
            end: b,
        });
    }
    tube
}

proptest! {
    #[test]
    fn enlarging_a_segment_never_helps(
        boxes in prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..8),
        pick in 0usize..8,
        grow in 0.0f64..4.0,
        bound in -3.0f64..3.0,
    ) {
        let spans: Vec<(f64, f64)> = boxes.iter().map(|&(lo, w)| (lo, lo + w)).collect();
        let mut bigger = spans.clone();
        let i = pick % spans.len();
        bigger[i] = (spans[i].0 - grow, spans[i].1 + grow);
        let spec = SafetySpec {
            unsafe_regions: vec![UnsafeRegion {
                description: "x <= bound".into(),
                constraints: vec![HalfSpace { coeffs: vec![1.0], bound }],
            }],
        };
        let before = verify(&tube_of(&spans), &spec).unwrap().verdict;
        let after = verify(&tube_of(&bigger), &spec).unwrap().verdict;
        prop_assert!(!(before == Verdict::Unknown && after == Verdict::Safe));
    }
}
