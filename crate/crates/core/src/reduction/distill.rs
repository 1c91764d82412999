//! Deterministic teacher-student fitting used to produce reduced networks.
//!
//! This is plumbing: the fitted network carries no accuracy guarantee. The
//! guarantee comes from [`precision`](super::precision) afterwards.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::interval::IntervalBox;
use crate::network::{Activation, Layer, Network};

#[derive(Debug, Clone)]
pub struct DistillConfig {
    /// Widths of the student's hidden layers; the output layer is implied.
    pub hidden_dims: Vec<usize>,
    pub train_box: IntervalBox,
    pub sample_count: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled L2 shrinkage applied to the weights after every step.
    pub weight_decay: f64,
    /// Start from these weights instead of a seeded random initialization.
    /// Inputs and outputs are then used unnormalized.
    pub init: Option<Network>,
}

impl DistillConfig {
    pub fn new(hidden_dims: Vec<usize>, train_box: IntervalBox, sample_count: usize, seed: u64) -> Self {
        DistillConfig {
            hidden_dims,
            train_box,
            sample_count,
            seed,
            epochs: 200,
            batch_size: 64,
            learning_rate: 3e-3,
            weight_decay: 0.0,
            init: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Distilled {
    pub network: Network,
    /// Mean squared error of the returned network over the training samples.
    pub mse: f64,
    pub initial_mse: f64,
}

/// Fits a student with `cfg.hidden_dims` to `big`, requiring it to be no deeper than `big`.
pub fn distill(big: &Network, cfg: &DistillConfig) -> Result<Distilled> {
    if cfg.hidden_dims.len() + 1 > big.depth() {
        return Err(Error::Precondition(format!(
            "student has {} layers but the original network has only {}",
            cfg.hidden_dims.len() + 1,
            big.depth()
        )));
    }
    let teacher = |x: &[f64]| big.eval(x).expect("train box dimension checked");
    fit(teacher, big.input_dim, big.output_dim(), cfg)
}

/// Dense parameters in the normalized coordinates training runs in.
struct Params {
    dims: Vec<usize>,
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Params {
    fn depth(&self) -> usize {
        self.w.len()
    }

    fn forward(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let last = self.depth() - 1;
        for l in 0..self.depth() {
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            let (prev, next) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for i in 0..rows {
                let row = &self.w[l][i * cols..(i + 1) * cols];
                let mut acc = 0.0;
                for (w, v) in row.iter().zip(input.iter()) {
                    acc += w * v;
                }
                let z = acc + self.b[l][i];
                out[i] = if l == last { z } else { z.max(0.0) };
            }
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g) {
                self.m[k] = B1 * self.m[k] + (1.0 - B1) * gi;
                self.v[k] = B2 * self.v[k] + (1.0 - B2) * gi * gi;
                let mhat = self.m[k] / c1;
                let vhat = self.v[k] / c2;
                *pi -= lr * mhat / (vhat.sqrt() + EPS);
                k += 1;
            }
        }
    }
}

struct Scaling {
    in_center: Vec<f64>,
    in_scale: Vec<f64>,
    out_mean: Vec<f64>,
    out_scale: Vec<f64>,
}

impl Scaling {
    fn identity(n_in: usize, n_out: usize) -> Self {
        Scaling {
            in_center: vec![0.0; n_in],
            in_scale: vec![1.0; n_in],
            out_mean: vec![0.0; n_out],
            out_scale: vec![1.0; n_out],
        }
    }

    fn fitted(train_box: &IntervalBox, targets: &[Vec<f64>], n_out: usize) -> Self {
        let in_center = train_box.center();
        let in_scale = train_box
            .intervals()
            .iter()
            .map(|iv| if iv.rad() > 0.0 { iv.rad() } else { 1.0 })
            .collect();
        let n = targets.len() as f64;
        let out_mean: Vec<f64> = (0..n_out).map(|k| targets.iter().map(|y| y[k]).sum::<f64>() / n).collect();
        let out_scale = (0..n_out)
            .map(|k| {
                let var = targets.iter().map(|y| (y[k] - out_mean[k]).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Scaling {
            in_center,
            in_scale,
            out_mean,
            out_scale,
        }
    }

    fn input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.in_center)
            .zip(&self.in_scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect()
    }

    fn output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.out_mean)
            .zip(&self.out_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Folds the normalization into the first and last layers.
    fn export(&self, p: &Params) -> Result<Network> {
        let mut w = p.w.clone();
        let mut b = p.b.clone();
        let cols0 = p.dims[0];
        for i in 0..p.dims[1] {
            let mut shift = 0.0;
            for j in 0..cols0 {
                let wn = w[0][i * cols0 + j];
                shift += wn * self.in_center[j] / self.in_scale[j];
                w[0][i * cols0 + j] = wn / self.in_scale[j];
            }
            b[0][i] -= shift;
        }
        let last = p.depth() - 1;
        let cols = p.dims[last];
        for i in 0..p.dims[last + 1] {
            for j in 0..cols {
                w[last][i * cols + j] *= self.out_scale[i];
            }
            b[last][i] = self.out_scale[i] * b[last][i] + self.out_mean[i];
        }
        let layers = (0..p.depth())
            .map(|l| Layer {
                rows: p.dims[l + 1],
                cols: p.dims[l],
                weights: w[l].clone(),
                bias: b[l].clone(),
                activation: if l == last { Activation::Linear } else { Activation::Relu }.into(),
            })
            .collect();
        Network::new(p.dims[0], layers)
    }
}

fn mse(net: &Network, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let n_out = ys[0].len();
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let p = net.eval(x).expect("sample dimension");
            p.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    total / (xs.len() * n_out) as f64
}

/// Fits a ReLU student (linear output layer) to an arbitrary teacher function.
pub fn fit<F>(teacher: F, input_dim: usize, output_dim: usize, cfg: &DistillConfig) -> Result<Distilled>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if cfg.sample_count == 0 {
        return Err(Error::Precondition("sample_count must be positive".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Precondition("batch_size must be positive".into()));
    }
    if cfg.train_box.dim() != input_dim {
        return Err(Error::shape("training box", input_dim, cfg.train_box.dim()));
    }
    if cfg.hidden_dims.contains(&0) {
        return Err(Error::Precondition("hidden layer widths must be positive".into()));
    }
    let mut dims = vec![input_dim];
    dims.extend(&cfg.hidden_dims);
    dims.push(output_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xs: Vec<Vec<f64>> = (0..cfg.sample_count)
        .map(|_| {
            cfg.train_box
                .intervals()
                .iter()
                .map(|iv| if iv.width() > 0.0 { rng.gen_range(iv.lo..=iv.hi) } else { iv.lo })
                .collect()
        })
        .collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| teacher(x)).collect();
    if let Some(bad) = ys.iter().find(|y| y.len() != output_dim) {
        return Err(Error::shape("teacher output", output_dim, bad.len()));
    }

    let (mut params, scaling) = match &cfg.init {
        Some(init) => {
            if init.widths() != dims {
                return Err(Error::Precondition(format!(
                    "initial network widths {:?} do not match requested {:?}",
                    init.widths(),
                    dims
                )));
            }
            let params = Params {
                dims: dims.clone(),
                w: init.layers.iter().map(|l| l.weights.clone()).collect(),
                b: init.layers.iter().map(|l| l.bias.clone()).collect(),
            };
            (params, Scaling::identity(input_dim, output_dim))
        }
        None => {
            let w = dims
                .windows(2)
                .map(|d| {
                    let bound = (6.0 / d[0] as f64).sqrt();
                    (0..d[0] * d[1]).map(|_| rng.gen_range(-bound..bound)).collect()
                })
                .collect();
            let b = dims[1..].iter().map(|&n| vec![0.0; n]).collect();
            let params = Params { dims: dims.clone(), w, b };
            (params, Scaling::fitted(&cfg.train_box, &ys, output_dim))
        }
    };

    let initial = scaling.export(&params)?;
    let initial_mse = mse(&initial, &xs, &ys);

    let xn: Vec<Vec<f64>> = xs.iter().map(|x| scaling.input(x)).collect();
    let yn: Vec<Vec<f64>> = ys.iter().map(|y| scaling.output(y)).collect();

    let depth = params.depth();
    let mut acts: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    let mut deltas: Vec<Vec<f64>> = dims.iter().map(|&n| vec![0.0; n]).collect();
    let mut gw: Vec<Vec<f64>> = params.w.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut gb: Vec<Vec<f64>> = params.b.iter().map(|b| vec![0.0; b.len()]).collect();
    let n_params: usize = gw.iter().chain(&gb).map(Vec::len).sum();
    let mut adam = Adam::new(n_params);
    let mut order: Vec<usize> = (0..xs.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        // cosine decay down to 1% of the base rate
        let progress = epoch as f64 / cfg.epochs.max(1) as f64;
        let lr = cfg.learning_rate * (0.01 + 0.99 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().chain(gb.iter_mut()).for_each(|g| g.fill(0.0));
            let scale = 2.0 / (batch.len() * output_dim) as f64;
            for &s in batch {
                params.forward(&xn[s], &mut acts);
                for (k, d) in deltas[depth].iter_mut().enumerate() {
                    *d = scale * (acts[depth][k] - yn[s][k]);
                }
                for l in (0..depth).rev() {
                    let (rows, cols) = (dims[l + 1], dims[l]);
                    for i in 0..rows {
                        let d = deltas[l + 1][i];
                        if d == 0.0 {
                            continue;
                        }
                        gb[l][i] += d;
                        let grow = &mut gw[l][i * cols..(i + 1) * cols];
                        for (g, a) in grow.iter_mut().zip(&acts[l]) {
                            *g += d * a;
                        }
                    }
                    if l > 0 {
                        for j in 0..cols {
                            // acts[l] is a ReLU output for every hidden layer
                            if acts[l][j] <= 0.0 {
                                deltas[l][j] = 0.0;
                                continue;
                            }
                            let mut acc = 0.0;
                            for i in 0..rows {
                                acc += params.w[l][i * cols + j] * deltas[l + 1][i];
                            }
                            deltas[l][j] = acc;
                        }
                    }
                }
            }
            let grads: Vec<Vec<f64>> = gw.iter().chain(gb.iter()).cloned().collect();
            let mut slots: Vec<&mut [f64]> = params
                .w
                .iter_mut()
                .map(Vec::as_mut_slice)
                .chain(params.b.iter_mut().map(Vec::as_mut_slice))
                .collect();
            adam.step(&mut slots, &grads, lr);
            if cfg.weight_decay > 0.0 {
                let shrink = 1.0 - lr * cfg.weight_decay;
                params.w.iter_mut().flatten().for_each(|w| *w *= shrink);
            }
        }
    }

    let network = scaling.export(&params)?;
    let final_mse = mse(&network, &xs, &ys);
    if !final_mse.is_finite() || final_mse > initial_mse {
        return Err(Error::Training(format!(
            "loss did not decrease: initial mse {initial_mse}, final mse {final_mse} after {} epochs \
             (learning rate {}, {} samples)",
            cfg.epochs, cfg.learning_rate, cfg.sample_count
        )));
    }
    Ok(Distilled {
        network,
        mse: final_mse,
        initial_mse,
    })
}
