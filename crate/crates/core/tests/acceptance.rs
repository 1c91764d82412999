//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Tolerances are fixed below.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use nnredux::acc::{acc_benchmark, acc_safety_spec, AccBenchmark, AccConfig, SynthesisConfig};
use nnredux::closed_loop::{reach_nncs, ControllerChoice, ReachConfig, ReducedController, SampledNncs};
use nnredux::ode::{acc_dynamics, reach_ode_x, LinearPlant, StepConfig};
use nnredux::reach::PartitionConfig;
use nnredux::reduction::{augment, precision, InflationMode, Precision};
use nnredux::sim::{containment_audit, integrate, simulate, RkConfig, SimConfig, Trajectory};
use nnredux::{Activation, ActivationSpec, IntervalBox, Layer, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const AUGMENT_PAIRS: usize = 200;
const AUGMENT_PROBES: usize = 100;
const AUGMENT_TOL: f64 = 1e-9;
const SOUNDNESS_PAIRS: usize = 20;
const SOUNDNESS_SAMPLES: usize = 100_000;
const TOY_FINE_CELLS: usize = 64;
const TOY_FINE_RANGE: (f64, f64) = (1.0, 1.08);
const MONOTONE_PAIRS: usize = 50;
const MONOTONE_DEPTH: u32 = 6;
const DECAY_WIDTH_MAX: f64 = 0.05;
const OPEN_LOOP_TRAJECTORIES: usize = 1000;
const CLOSED_LOOP_TRAJECTORIES: usize = 500;
const SPEEDUP_MIN: f64 = 3.0;
const TIMING_REPEATS: usize = 3;

/// Partition of `U` used to certify `ρ` for the ACC controllers.
const PRECISION_SPLITS: usize = 32;
/// Partition of the controller input box at each sampling instant.
const LOOP_SPLITS: usize = 2;
/// Finer controller partition for the timing comparison.
const TIMING_SPLITS: usize = 4;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_layer(rng: &mut ChaCha8Rng, cols: usize, rows: usize, last: bool) -> Layer {
    let weights = (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let bias = (0..rows).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let activation = match rng.gen_range(0..4) {
        _ if last => ActivationSpec::from(Activation::Linear),
        0 => ActivationSpec::from(Activation::Linear),
        1 => ActivationSpec::from_mask(
            (0..rows)
                .map(|_| if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Linear })
                .collect(),
        ),
        _ => ActivationSpec::from(Activation::Relu),
    };
    Layer::new(weights, bias, activation).expect("generated layer is well formed")
}

fn random_network(rng: &mut ChaCha8Rng, input: usize, output: usize, depth: usize) -> Network {
    let mut dims = vec![input];
    dims.extend((1..depth).map(|_| rng.gen_range(1..=8)));
    dims.push(output);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(l, d)| random_layer(rng, d[0], d[1], l + 2 == dims.len()))
        .collect();
    Network::new(input, layers).expect("generated network is valid")
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Network, Network) {
    let input = rng.gen_range(1..=4);
    let output = rng.gen_range(1..=3);
    let depth = rng.gen_range(1..=5);
    let small_depth = rng.gen_range(1..=depth);
    (random_network(rng, input, output, depth), random_network(rng, input, output, small_depth))
}

fn unit_box(dim: usize) -> IntervalBox {
    IntervalBox::new(&vec![-1.0; dim], &vec![1.0; dim]).expect("valid box")
}

fn sample_in(rng: &mut ChaCha8Rng, b: &IntervalBox) -> Vec<f64> {
    b.intervals()
        .iter()
        .map(|iv| if iv.width() > 0.0 { rng.gen_range(iv.lo..=iv.hi) } else { iv.lo })
        .collect()
}

fn gap(big: &Network, small: &Network, x: &[f64]) -> f64 {
    let a = big.eval(x).expect("eval");
    let b = small.eval(x).expect("eval");
    a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn augmentation_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..AUGMENT_PAIRS {
        let (big, small) = random_pair(&mut rng);
        let aug = augment(&big, &small).map_err(|e| e.to_string())?;
        let dom = IntervalBox::new(&vec![-3.0; big.input_dim], &vec![3.0; big.input_dim]).expect("valid box");
        for _ in 0..AUGMENT_PROBES {
            let x = sample_in(&mut rng, &dom);
            let want: Vec<f64> = big
                .eval(&x)
                .expect("eval")
                .iter()
                .zip(small.eval(&x).expect("eval"))
                .map(|(p, q)| p - q)
                .collect();
            let got = aug.eval(&x).expect("eval");
            for (g, w) in got.iter().zip(&want) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    check(
        worst <= AUGMENT_TOL,
        format!("{AUGMENT_PAIRS} pairs x {AUGMENT_PROBES} probes, max deviation {worst:.3e} (tol {AUGMENT_TOL:e})"),
    )
}

fn scalar(w: f64) -> Network {
    Network::new(1, vec![Layer::new(vec![vec![w]], vec![0.0], Activation::Linear).expect("layer")]).expect("net")
}

fn precision_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut tightest = f64::INFINITY;
    for i in 0..SOUNDNESS_PAIRS {
        let (big, small) = random_pair(&mut rng);
        let u = unit_box(big.input_dim);
        let p = precision(&big, &small, &u, &PartitionConfig::uniform(4)).map_err(|e| e.to_string())?;
        let sampled = (0..SOUNDNESS_SAMPLES)
            .map(|_| gap(&big, &small, &sample_in(&mut rng, &u)))
            .fold(0.0, f64::max);
        if p.rho < sampled {
            return Err(format!("pair {i}: rho {} below sampled difference {sampled}", p.rho));
        }
        tightest = tightest.min(p.rho - sampled);
    }

    let u = IntervalBox::new(&[-1.0], &[1.0]).expect("valid box");
    let coarse = precision(&scalar(2.0), &scalar(1.0), &u, &PartitionConfig::uniform(1)).map_err(|e| e.to_string())?;
    let fine =
        precision(&scalar(2.0), &scalar(1.0), &u, &PartitionConfig::uniform(TOY_FINE_CELLS)).map_err(|e| e.to_string())?;
    // per cell [a, a+h]: [2a, 2a+2h] - [a, a+h] = [a-h, a+2h]
    let h = 2.0 / TOY_FINE_CELLS as f64;
    let oracle = (0..TOY_FINE_CELLS)
        .map(|k| {
            let a = -1.0 + k as f64 * h;
            (a - h).abs().max((a + 2.0 * h).abs())
        })
        .fold(0.0, f64::max);
    let in_range = fine.rho >= TOY_FINE_RANGE.0 && fine.rho <= TOY_FINE_RANGE.1;
    check(
        coarse.rho == 3.0 && in_range && (fine.rho - oracle).abs() <= 1e-12,
        format!(
            "{SOUNDNESS_PAIRS} pairs x {SOUNDNESS_SAMPLES} samples sound (min slack {tightest:.3e}); toy rho 1 cell = {}, \
             {TOY_FINE_CELLS} cells = {} (hand oracle {oracle})",
            coarse.rho, fine.rho
        ),
    )
}

fn refinement_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for i in 0..MONOTONE_PAIRS {
        let (big, small) = random_pair(&mut rng);
        let u = unit_box(big.input_dim);
        let mut prev = f64::INFINITY;
        for d in 0..=MONOTONE_DEPTH {
            let p = precision(&big, &small, &u, &PartitionConfig::default().bisection(d)).map_err(|e| e.to_string())?;
            if p.rho > prev {
                return Err(format!("pair {i}: rho rose from {prev} to {} at depth {d}", p.rho));
            }
            prev = p.rho;
        }
    }
    check(true, format!("{MONOTONE_PAIRS} pairs, bisection depth 0..={MONOTONE_DEPTH}, rho never increased"))
}

fn ode_validity() -> Outcome {
    let x0 = IntervalBox::point(&[1.0]);
    let tube = reach_ode_x(&LinearPlant::decay(), &IntervalBox::point(&[0.0]), &x0, 0.1, &StepConfig::new(0.005))
        .map_err(|e| e.to_string())?;
    let end = tube.final_box().get(0);
    let exact = (-0.1f64).exp();
    if !end.contains(exact) || end.width() > DECAY_WIDTH_MAX {
        return Err(format!("decay end box {end} vs e^-0.1 = {exact}"));
    }

    let plant = acc_dynamics();
    let x0 = nnredux::acc::acc_initial_set();
    let u = IntervalBox::new(&[-2.0, -3.0], &[-2.0, 2.0]).expect("valid box");
    let horizon = 1.0;
    let tube = reach_ode_x(&plant, &u, &x0, horizon, &StepConfig::new(0.0025)).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let rk = RkConfig::default();
    let samples = 100;
    let mut trajs = Vec::with_capacity(OPEN_LOOP_TRAJECTORIES);
    for _ in 0..OPEN_LOOP_TRAJECTORIES {
        let ui = sample_in(&mut rng, &u);
        let mut x = sample_in(&mut rng, &x0);
        let mut traj = Trajectory {
            times: vec![0.0],
            states: vec![x.clone()],
            controls: Vec::new(),
        };
        for k in 1..=samples {
            let (ta, tb) = ((k - 1) as f64 * horizon / samples as f64, k as f64 * horizon / samples as f64);
            x = integrate(&plant, &x, &ui, ta, tb, &rk).map_err(|e| e.to_string())?;
            traj.times.push(tb);
            traj.states.push(x.clone());
        }
        trajs.push(traj);
    }
    let audit = containment_audit(&trajs, &tube);
    check(
        audit.is_clean(),
        format!(
            "decay end box {end} (width {:.2e}); ACC open loop: {} samples, {} violations",
            end.width(),
            audit.samples_checked,
            audit.violations.len() + audit.uncovered_samples
        ),
    )
}

fn benchmark() -> &'static AccBenchmark {
    static BENCH: OnceLock<AccBenchmark> = OnceLock::new();
    BENCH.get_or_init(|| {
        acc_benchmark(
            &AccConfig::default(),
            &SynthesisConfig::default(),
            &PartitionConfig::uniform(PRECISION_SPLITS),
            InflationMode::SoundFullRho,
        )
        .expect("ACC benchmark synthesis")
    })
}

fn loop_config(splits: usize, controller: ControllerChoice) -> ReachConfig {
    ReachConfig {
        partition: PartitionConfig::uniform(splits),
        step: StepConfig::for_period(AccConfig::default().sampling_period),
        controller,
    }
}

fn zero_rho_equivalence() -> Outcome {
    let bench = benchmark();
    let sc = &bench.scenario;
    let wide = IntervalBox::new(&[-1e6; 5], &[1e6; 5]).expect("valid box");
    let sys: SampledNncs = SampledNncs {
        reduced: None,
        ..sc.system.clone()
    }
    .with_reduced(ReducedController {
        network: sc.system.controller.clone(),
        precision: Precision::given(0.0, wide).map_err(|e| e.to_string())?,
        mode: InflationMode::SoundFullRho,
    })
    .map_err(|e| e.to_string())?;
    let a = reach_nncs(&sys, &sc.initial_set, sc.horizon, &loop_config(LOOP_SPLITS, ControllerChoice::Original))
        .map_err(|e| e.to_string())?;
    let b = reach_nncs(&sys, &sc.initial_set, sc.horizon, &loop_config(LOOP_SPLITS, ControllerChoice::Reduced))
        .map_err(|e| e.to_string())?;
    let (ca, cb) = (
        a.tube.to_csv_string().map_err(|e| e.to_string())?,
        b.tube.to_csv_string().map_err(|e| e.to_string())?,
    );
    check(
        ca == cb && a.tube == b.tube,
        format!("{} segments, CSV {} bytes, identical: {}", a.tube.segments.len(), ca.len(), ca == cb),
    )
}

fn end_to_end_soundness() -> Outcome {
    let bench = benchmark();
    let sc = &bench.scenario;
    let run = reach_nncs(&sc.system, &sc.initial_set, sc.horizon, &loop_config(LOOP_SPLITS, ControllerChoice::Reduced))
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cfg = SimConfig::default();
    let lo = sc.initial_set.lower();
    let hi = sc.initial_set.upper();
    let mut trajs = Vec::with_capacity(CLOSED_LOOP_TRAJECTORIES);
    for i in 0..CLOSED_LOOP_TRAJECTORIES {
        // the 16 vertices of X0 first, then uniform samples
        let x0: Vec<f64> = if i < 16 {
            let nondegenerate = [0usize, 1, 3, 4];
            let mut x = lo.clone();
            for (bit, &d) in nondegenerate.iter().enumerate() {
                if i >> bit & 1 == 1 {
                    x[d] = hi[d];
                }
            }
            x
        } else {
            sample_in(&mut rng, &sc.initial_set)
        };
        let r = sample_in(&mut rng, &sc.system.reference_box);
        trajs.push(
            simulate(&sc.system, &x0, &r, sc.horizon, ControllerChoice::Original, &cfg).map_err(|e| e.to_string())?,
        );
    }
    let audit = containment_audit(&trajs, &run.tube);
    check(
        audit.is_clean() && run.stats.intervals == 300,
        format!(
            "rho {:.4} over {} cells; {} trajectories, {} samples, {} intervals, {} violations",
            bench.precision.rho,
            bench.precision.cell_count,
            audit.trajectories,
            audit.samples_checked,
            run.stats.intervals,
            audit.violations.len() + audit.uncovered_samples
        ),
    )
}

fn speedup_shape() -> Outcome {
    let bench = benchmark();
    let sc = &bench.scenario;
    let mut best = [f64::INFINITY; 2];
    for _ in 0..TIMING_REPEATS {
        for (slot, choice) in [ControllerChoice::Original, ControllerChoice::Reduced].into_iter().enumerate() {
            let run = reach_nncs(&sc.system, &sc.initial_set, sc.horizon, &loop_config(TIMING_SPLITS, choice))
                .map_err(|e| e.to_string())?;
            best[slot] = best[slot].min(run.stats.controller_reach_time);
        }
    }
    let ratio = best[0] / best[1];
    println!("    | controller | layers x width | controller reach time (s) |");
    println!("    | original   | 5 x 20         | {:>25.6} |", best[0]);
    println!("    | reduced    | 2 x 5          | {:>25.6} |", best[1]);
    check(ratio >= SPEEDUP_MIN, format!("speedup {ratio:.2}x (required {SPEEDUP_MIN}x)"))
}

fn safety_spec_encoding() -> Outcome {
    let acc = AccConfig::default();
    let spec = acc_safety_spec(acc.t_gap, acc.d_default);
    let region = &spec.unsafe_regions;
    let ok = region.len() == 1
        && region[0].constraints.len() == 1
        && region[0].constraints[0].coeffs == [1.0, 0.0, 0.0, -1.0, -1.4, 0.0]
        && region[0].constraints[0].bound == 10.0
        && bench_wiring_ok();
    check(
        ok,
        format!(
            "coeffs {:?}, bound {}",
            region[0].constraints[0].coeffs, region[0].constraints[0].bound
        ),
    )
}

// t_gap reaches the controller through the reference channel with the same value.
fn bench_wiring_ok() -> bool {
    let acc = AccConfig::default();
    acc.reference_box().get(1).lo == acc.t_gap && acc.t_gap == 1.4 && acc.d_default == 10.0
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("augmentation exactness", augmentation_exactness),
        ("precision soundness", precision_soundness),
        ("refinement monotonicity", refinement_monotonicity),
        ("ODE enclosure validity", ode_validity),
        ("zero-rho equivalence", zero_rho_equivalence),
        ("end-to-end soundness", end_to_end_soundness),
        ("speedup shape", speedup_shape),
        ("safety spec encoding", safety_spec_encoding),
    ];
    let mut failed = 0;
    for (name, run) in criteria.iter().copied() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
