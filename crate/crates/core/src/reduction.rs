//! Guaranteed model reduction.
//!
//! [`augment`] stacks an original network `Φ` and a reduced network `Φ̂`
//! into one network `Φ̃` whose output is exactly `Φ(x) - Φ̂(x)`:
//!
//! | layer                | weights                | bias        | activation        |
//! |----------------------|------------------------|-------------|-------------------|
//! | `1`                  | `[W_1; Ŵ_1]`           | `[b_1; b̂_1]` | `[φ_1; φ̂_1]`      |
//! | `1 < ℓ <= L̂-1`       | `diag(W_ℓ, Ŵ_ℓ)`       | `[b_ℓ; b̂_ℓ]` | `[φ_ℓ; φ̂_ℓ]`      |
//! | `L̂ <= ℓ <= L-1`      | `diag(W_ℓ, I)`         | `[b_ℓ; 0]`  | `[φ_ℓ; linear]`   |
//! | `L`                  | `diag(W_L, Ŵ_L̂)`       | `[b_L; b̂_L̂]` | `[φ_L; φ̂_L̂]`      |
//! | `L+1`                | `[I, -I]`              | `0`         | linear            |
//!
//! When `L̂ = 1` the reduced network's only layer sits at position 1 and the
//! identity pass-through carries its output up to layer `L`.
//!
//! [`precision`] bounds `sup_{x ∈ U} ‖Φ(x) - Φ̂(x)‖_∞` by interval
//! reachability on `Φ̃`, and [`inflate`] pads reduced-network output sets
//! so they cover the original network's outputs.

mod distill;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::network::{Activation, ActivationSpec, Layer, Network};
use crate::reach::{interval_eval, partition, BoxUnion, PartitionConfig};

pub use distill::{distill, fit, DistillConfig, Distilled};

/// Checks the three compatibility clauses required by [`augment`].
pub fn check_compatible(big: &Network, small: &Network) -> Result<()> {
    if big.input_dim != small.input_dim {
        return Err(Error::Precondition(format!(
            "the number of inputs of the two networks must be the same ({} vs {})",
            big.input_dim, small.input_dim
        )));
    }
    if big.output_dim() != small.output_dim() {
        return Err(Error::Precondition(format!(
            "the number of outputs of the two networks must be the same ({} vs {})",
            big.output_dim(),
            small.output_dim()
        )));
    }
    if big.depth() < small.depth() {
        return Err(Error::Precondition(format!(
            "the number of layers of the original network ({}) must be at least that of the reduced network ({})",
            big.depth(),
            small.depth()
        )));
    }
    Ok(())
}

/// What the reduced branch does at one augmented layer.
enum SmallOp<'a> {
    Layer(&'a Layer),
    Identity(usize),
}

impl SmallOp<'_> {
    fn rows(&self) -> usize {
        match self {
            SmallOp::Layer(l) => l.rows,
            SmallOp::Identity(n) => *n,
        }
    }

    fn cols(&self) -> usize {
        match self {
            SmallOp::Layer(l) => l.cols,
            SmallOp::Identity(n) => *n,
        }
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        match self {
            SmallOp::Layer(l) => l.weight(i, j),
            SmallOp::Identity(_) => {
                if i == j {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn bias(&self, i: usize) -> f64 {
        match self {
            SmallOp::Layer(l) => l.bias[i],
            SmallOp::Identity(_) => 0.0,
        }
    }

    fn activation(&self, i: usize) -> Activation {
        match self {
            SmallOp::Layer(l) => l.activation.get(i),
            SmallOp::Identity(_) => Activation::Linear,
        }
    }
}

/// Builds the augmented network `Φ̃` with `eval(Φ̃, x) = eval(Φ, x) - eval(Φ̂, x)`.
pub fn augment(big: &Network, small: &Network) -> Result<Network> {
    check_compatible(big, small)?;
    let depth = big.depth();
    let small_depth = small.depth();

    // position (1-based) in the augmented net at which each reduced layer is applied
    let small_at = |pos: usize| -> Option<&Layer> {
        if small_depth == 1 {
            (pos == 1).then(|| &small.layers[0])
        } else if pos < small_depth {
            Some(&small.layers[pos - 1])
        } else if pos == depth {
            Some(&small.layers[small_depth - 1])
        } else {
            None
        }
    };

    let mut layers = Vec::with_capacity(depth + 1);
    let mut small_width = small.input_dim;
    for pos in 1..=depth {
        let b = &big.layers[pos - 1];
        let s = match small_at(pos) {
            Some(layer) => SmallOp::Layer(layer),
            None => SmallOp::Identity(small_width),
        };
        let rows = b.rows + s.rows();
        let mut weights = Vec::with_capacity(rows);
        if pos == 1 {
            // both branches read the shared input: vertical stack
            for i in 0..b.rows {
                weights.push(b.row(i).to_vec());
            }
            for i in 0..s.rows() {
                weights.push((0..s.cols()).map(|j| s.weight(i, j)).collect());
            }
        } else {
            let cols = b.cols + s.cols();
            for i in 0..b.rows {
                let mut row = vec![0.0; cols];
                row[..b.cols].copy_from_slice(b.row(i));
                weights.push(row);
            }
            for i in 0..s.rows() {
                let mut row = vec![0.0; cols];
                for j in 0..s.cols() {
                    row[b.cols + j] = s.weight(i, j);
                }
                weights.push(row);
            }
        }
        let bias = b.bias.iter().copied().chain((0..s.rows()).map(|i| s.bias(i))).collect();
        let mask = b
            .activation
            .to_mask(b.rows)
            .into_iter()
            .chain((0..s.rows()).map(|i| s.activation(i)))
            .collect();
        layers.push(Layer::new(weights, bias, ActivationSpec::from_mask(mask))?);
        small_width = s.rows();
    }

    let n_out = big.output_dim();
    let diff = (0..n_out)
        .map(|i| {
            let mut row = vec![0.0; 2 * n_out];
            row[i] = 1.0;
            row[n_out + i] = -1.0;
            row
        })
        .collect();
    layers.push(Layer::new(diff, vec![0.0; n_out], Activation::Linear)?);
    Network::new(big.input_dim, layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    Inf,
}

/// A certified bound `rho >= sup_{x ∈ input_set} ‖Φ(x) - Φ̂(x)‖_∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub rho: f64,
    pub norm: Norm,
    pub partition: PartitionConfig,
    pub input_set: IntervalBox,
    pub cell_count: usize,
    /// Largest difference observed at the cell centres: a lower bound on the true supremum.
    pub sampled_lower_bound: f64,
    /// Seconds spent computing the bound.
    pub wall_time: f64,
}

impl Precision {
    /// A precision value that was obtained elsewhere (e.g. `rho = 0` for identical networks).
    pub fn given(rho: f64, input_set: IntervalBox) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::Precondition(format!("rho must be finite and nonnegative, got {rho}")));
        }
        Ok(Precision {
            rho,
            norm: Norm::Inf,
            partition: PartitionConfig::default(),
            input_set,
            cell_count: 0,
            sampled_lower_bound: 0.0,
            wall_time: 0.0,
        })
    }
}

fn inf_diff(big: &Network, small: &Network, x: &[f64]) -> Result<f64> {
    let a = big.eval(x)?;
    let b = small.eval(x)?;
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max))
}

/// Computes the model reduction precision of `small` against `big` over `input`.
pub fn precision(
    big: &Network,
    small: &Network,
    input: &IntervalBox,
    cfg: &PartitionConfig,
) -> Result<Precision> {
    let start = Instant::now();
    let augmented = augment(big, small)?;
    if input.dim() != big.input_dim {
        return Err(Error::shape("precision input box", big.input_dim, input.dim()));
    }
    let cells = partition(input, cfg)?;
    let mut rho: f64 = 0.0;
    let mut sampled: f64 = 0.0;
    for cell in &cells {
        let out = interval_eval(&augmented, cell)?;
        rho = out.intervals().iter().map(|iv| iv.mag()).fold(rho, f64::max);
        sampled = sampled.max(inf_diff(big, small, &cell.center())?);
    }
    Ok(Precision {
        rho,
        norm: Norm::Inf,
        partition: cfg.clone(),
        input_set: input.clone(),
        cell_count: cells.len(),
        sampled_lower_bound: sampled,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Radius of the infinity-norm ball added to reduced-network output sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflationMode {
    /// Radius `rho`: follows directly from the definition of the bound.
    #[default]
    #[serde(alias = "sound")]
    SoundFullRho,
    /// Radius `rho / 2`. Not implied by the bound; kept for comparison runs.
    #[serde(alias = "paper")]
    PaperHalfRho,
}

impl InflationMode {
    pub fn radius(self, rho: f64) -> f64 {
        match self {
            InflationMode::SoundFullRho => rho,
            InflationMode::PaperHalfRho => 0.5 * rho,
        }
    }
}

/// Minkowski sum of every box with the infinity-norm ball for `p` under `mode`.
pub fn inflate(sets: &BoxUnion, p: &Precision, mode: InflationMode) -> BoxUnion {
    inflate_by(sets, mode.radius(p.rho))
}

pub fn inflate_by(sets: &BoxUnion, radius: f64) -> BoxUnion {
    if radius == 0.0 {
        return sets.clone();
    }
    sets.map_boxes(|b| b.inflate(radius))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reach::reach_nn;

    fn scalar(w: f64) -> Network {
        Network::new(1, vec![Layer::new(vec![vec![w]], vec![0.0], Activation::Linear).unwrap()]).unwrap()
    }

    fn dense(dims: &[usize], seed: u64) -> Network {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let weights = (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
                let bias = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let act = if l + 1 == n { Activation::Linear } else { Activation::Relu };
                Layer::new(weights, bias, act).unwrap()
            })
            .collect();
        Network::new(dims[0], layers).unwrap()
    }

    #[test]
    fn augmented_widths_follow_case_table() {
        let big = dense(&[2, 4, 3, 1], 1);
        let small = dense(&[2, 2, 1], 2);
        let aug = augment(&big, &small).unwrap();
        assert_eq!(aug.widths(), vec![2, 6, 5, 2, 1]);
        // layer 2 is diag(W_2, I_2) with a linear pass-through block
        let l2 = &aug.layers[1];
        assert_eq!((l2.rows, l2.cols), (5, 6));
        for i in 0..3 {
            assert_eq!(&l2.row(i)[..4], big.layers[1].row(i));
            assert_eq!(&l2.row(i)[4..], &[0.0, 0.0]);
        }
        assert_eq!(l2.row(3), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(l2.row(4), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(&l2.bias[3..], &[0.0, 0.0]);
        assert_eq!(
            l2.activation.to_mask(5),
            vec![Activation::Relu, Activation::Relu, Activation::Relu, Activation::Linear, Activation::Linear]
        );
        let last = aug.layers.last().unwrap();
        assert_eq!(last.row(0), &[1.0, -1.0]);
    }

    #[test]
    fn augmented_scalar_pair() {
        let aug = augment(&scalar(2.0), &scalar(1.0)).unwrap();
        assert_eq!(aug.eval(&[0.7]).unwrap(), vec![2.0 * 0.7 - 0.7]);
    }

    #[test]
    fn self_difference_is_zero() {
        let net = dense(&[3, 5, 5, 2], 7);
        let aug = augment(&net, &net).unwrap();
        for x in [[0.1, -0.3, 2.0], [-1.0, 0.0, 0.5], [3.0, 3.0, -3.0]] {
            assert_eq!(aug.eval(&x).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn single_layer_reduced_network() {
        let big = dense(&[2, 6, 6, 6, 1], 3);
        let small = dense(&[2, 1], 4);
        let aug = augment(&big, &small).unwrap();
        assert_eq!(aug.widths(), vec![2, 7, 7, 7, 2, 1]);
        for x in [[0.5, -0.5], [1.5, 2.0]] {
            let want = big.eval(&x).unwrap()[0] - small.eval(&x).unwrap()[0];
            assert!((aug.eval(&x).unwrap()[0] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn precondition_clauses() {
        let err = augment(&dense(&[2, 3, 1], 1), &dense(&[3, 1], 1)).unwrap_err();
        assert!(err.to_string().contains("number of inputs"), "{err}");
        let err = augment(&dense(&[2, 3, 1], 1), &dense(&[2, 2], 1)).unwrap_err();
        assert!(err.to_string().contains("number of outputs"), "{err}");
        let err = augment(&dense(&[2, 1], 1), &dense(&[2, 3, 1], 1)).unwrap_err();
        assert!(err.to_string().contains("number of layers"), "{err}");
    }

    #[test]
    fn precision_toy_pair_single_cell() {
        let u = IntervalBox::new(&[-1.0], &[1.0]).unwrap();
        let p = precision(&scalar(2.0), &scalar(1.0), &u, &PartitionConfig::uniform(1)).unwrap();
        assert_eq!(p.rho, 3.0);
        assert_eq!(p.cell_count, 1);
    }

    #[test]
    fn identical_networks_have_zero_sampled_gap() {
        let net = dense(&[2, 4, 1], 5);
        let u = IntervalBox::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let p = precision(&net, &net, &u, &PartitionConfig::uniform(4)).unwrap();
        assert_eq!(p.sampled_lower_bound, 0.0);
        assert!(p.rho >= 0.0);
    }

    #[test]
    fn inflation_modes() {
        let sets = BoxUnion::single(IntervalBox::new(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        let p = Precision::given(0.4, IntervalBox::new(&[0.0], &[1.0]).unwrap()).unwrap();
        let full = inflate(&sets, &p, InflationMode::SoundFullRho);
        assert_eq!(full.boxes()[0], IntervalBox::new(&[-0.4, -0.4], &[1.4, 1.4]).unwrap());
        let half = inflate(&sets, &p, InflationMode::PaperHalfRho);
        assert_eq!(half.boxes()[0], IntervalBox::new(&[-0.2, -0.2], &[1.2, 1.2]).unwrap());
        let zero = Precision::given(0.0, IntervalBox::new(&[0.0], &[1.0]).unwrap()).unwrap();
        assert_eq!(inflate(&sets, &zero, InflationMode::SoundFullRho), sets);
        assert!(Precision::given(-1.0, IntervalBox::new(&[0.0], &[1.0]).unwrap()).is_err());
    }

    #[test]
    fn inflated_reduced_set_covers_original() {
        let big = dense(&[2, 8, 8, 1], 11);
        let small = dense(&[2, 3, 1], 12);
        let u = IntervalBox::new(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let p = precision(&big, &small, &u, &PartitionConfig::uniform(8)).unwrap();
        let reduced = reach_nn(&small, &u, &PartitionConfig::uniform(1)).unwrap();
        let covered = inflate(&reduced, &p, InflationMode::SoundFullRho).hull();
        for i in 0..=20 {
            for j in 0..=20 {
                let x = [-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64];
                assert!(covered.contains_point(&big.eval(&x).unwrap()));
            }
        }
    }
}
