//! Interval reachability for feedforward networks.
//!
//! The input box is cut into a grid of cells (optionally bisected further)
//! and each cell is pushed through the network with interval arithmetic.
//! The result holds one output box per cell, in lexicographic grid order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::{Interval, IntervalBox};
use crate::network::{Activation, Layer, Network};

pub const DEFAULT_MAX_CELLS: usize = 1_000_000;

/// A non-empty list of equal-dimension boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxUnion {
    boxes: Vec<IntervalBox>,
}

impl BoxUnion {
    pub fn new(boxes: Vec<IntervalBox>) -> Result<Self> {
        let first = boxes
            .first()
            .ok_or_else(|| Error::InvalidBox("box union must be non-empty".into()))?;
        let dim = first.dim();
        if let Some(b) = boxes.iter().find(|b| b.dim() != dim) {
            return Err(Error::shape("box union member", dim, b.dim()));
        }
        Ok(BoxUnion { boxes })
    }

    pub fn single(b: IntervalBox) -> Self {
        BoxUnion { boxes: vec![b] }
    }

    pub fn boxes(&self) -> &[IntervalBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.boxes[0].dim()
    }

    pub fn hull(&self) -> IntervalBox {
        hull(self)
    }

    pub fn map_boxes(&self, f: impl Fn(&IntervalBox) -> IntervalBox) -> BoxUnion {
        BoxUnion {
            boxes: self.boxes.iter().map(f).collect(),
        }
    }

    /// CSV with one row per box: `cell, lo_0, .., lo_{n-1}, hi_0, .., hi_{n-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["cell".to_string()];
        header.extend((0..n).map(|i| format!("lo_{i}")));
        header.extend((0..n).map(|i| format!("hi_{i}")));
        wtr.write_record(&header)?;
        for (k, b) in self.boxes.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(b.lower().iter().map(f64::to_string));
            row.extend(b.upper().iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Componentwise min of lowers and max of uppers.
pub fn hull(u: &BoxUnion) -> IntervalBox {
    let mut acc = u.boxes[0].clone();
    for b in &u.boxes[1..] {
        acc = acc.hull(b);
    }
    acc
}

/// How the initial grid is laid over the input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Number of uniform slices per dimension; a single entry applies to every dimension.
    Splits(Vec<usize>),
    /// Slice each dimension until no cell is wider than this.
    MaxCellWidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    Uniform,
    /// After gridding, bisect every cell along its widest dimension `depth` times.
    Bisection { depth: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub grid: Grid,
    pub refinement: Refinement,
    pub max_cells: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig::uniform(1)
    }
}

impl PartitionConfig {
    /// `splits` uniform slices along every non-degenerate dimension.
    pub fn uniform(splits: usize) -> Self {
        PartitionConfig {
            grid: Grid::Splits(vec![splits]),
            refinement: Refinement::Uniform,
            max_cells: DEFAULT_MAX_CELLS,
        }
    }

    pub fn with_splits(splits: Vec<usize>) -> Self {
        PartitionConfig {
            grid: Grid::Splits(splits),
            ..Self::default()
        }
    }

    pub fn bisection(mut self, depth: u32) -> Self {
        self.refinement = Refinement::Bisection { depth };
        self
    }

    pub fn with_max_cells(mut self, cap: usize) -> Self {
        self.max_cells = cap;
        self
    }

    fn splits_for(&self, input: &IntervalBox) -> Result<Vec<usize>> {
        let n = input.dim();
        let raw: Vec<usize> = match &self.grid {
            Grid::Splits(s) if s.len() == 1 => vec![s[0]; n],
            Grid::Splits(s) if s.len() == n => s.clone(),
            Grid::Splits(s) => return Err(Error::shape("partition splits", n, s.len())),
            Grid::MaxCellWidth(w) => {
                if !w.is_finite() || *w <= 0.0 {
                    return Err(Error::Precondition(format!("max_cell_width must be positive, got {w}")));
                }
                input
                    .intervals()
                    .iter()
                    .map(|iv| ((iv.width() / w).ceil() as usize).max(1))
                    .collect()
            }
        };
        if raw.contains(&0) {
            return Err(Error::Precondition("splits per dimension must be positive".into()));
        }
        // zero-width dimensions are never split
        Ok(raw
            .into_iter()
            .zip(input.intervals())
            .map(|(s, iv)| if iv.width() > 0.0 { s } else { 1 })
            .collect())
    }

    /// Upper bound on the number of cells this config produces for `input`.
    pub fn cell_count(&self, input: &IntervalBox) -> Result<u128> {
        let grid: u128 = self
            .splits_for(input)?
            .iter()
            .fold(1u128, |acc, &s| acc.saturating_mul(s as u128));
        let factor = match self.refinement {
            Refinement::Uniform => 1u128,
            Refinement::Bisection { depth } => 1u128.checked_shl(depth).unwrap_or(u128::MAX),
        };
        Ok(grid.saturating_mul(factor))
    }
}

fn slice(iv: Interval, k: usize, s: usize) -> f64 {
    if k == 0 {
        iv.lo
    } else if k == s {
        iv.hi
    } else {
        (iv.lo + iv.width() * (k as f64) / (s as f64)).clamp(iv.lo, iv.hi)
    }
}

fn bisect(cell: &IntervalBox) -> Option<(IntervalBox, IntervalBox)> {
    let (axis, width) = cell
        .intervals()
        .iter()
        .enumerate()
        .map(|(i, iv)| (i, iv.width()))
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if width <= 0.0 {
        return None;
    }
    let iv = cell.get(axis);
    let mid = iv.mid();
    let mut left = cell.clone().into_intervals();
    let mut right = left.clone();
    left[axis] = Interval::new(iv.lo, mid);
    right[axis] = Interval::new(mid, iv.hi);
    Some((IntervalBox::from_intervals(left), IntervalBox::from_intervals(right)))
}

/// Cuts `input` into cells in deterministic lexicographic order.
pub fn partition(input: &IntervalBox, cfg: &PartitionConfig) -> Result<Vec<IntervalBox>> {
    let requested = cfg.cell_count(input)?;
    if requested > cfg.max_cells as u128 {
        return Err(Error::Budget {
            requested,
            cap: cfg.max_cells,
        });
    }
    let splits = cfg.splits_for(input)?;
    let n = input.dim();
    let mut cells = Vec::with_capacity(requested as usize);
    let mut index = vec![0usize; n];
    'cells: loop {
        let ivs = (0..n)
            .map(|i| {
                let iv = input.get(i);
                Interval::new(slice(iv, index[i], splits[i]), slice(iv, index[i] + 1, splits[i]))
            })
            .collect();
        cells.push(IntervalBox::from_intervals(ivs));
        // odometer, last dimension fastest
        let mut d = n;
        loop {
            if d == 0 {
                break 'cells;
            }
            d -= 1;
            index[d] += 1;
            if index[d] < splits[d] {
                continue 'cells;
            }
            index[d] = 0;
        }
    }
    if let Refinement::Bisection { depth } = cfg.refinement {
        for _ in 0..depth {
            let mut next = Vec::with_capacity(cells.len() * 2);
            for cell in cells {
                match bisect(&cell) {
                    Some((a, b)) => {
                        next.push(a);
                        next.push(b);
                    }
                    None => next.push(cell),
                }
            }
            cells = next;
        }
    }
    Ok(cells)
}

fn propagate(layer: &Layer, input: &[Interval], out: &mut Vec<Interval>) {
    out.clear();
    for i in 0..layer.rows {
        // same accumulation order as Layer::forward so point results stay enclosed
        let mut lo = 0.0;
        let mut hi = 0.0;
        for (&w, iv) in layer.row(i).iter().zip(input) {
            if w >= 0.0 {
                lo += w * iv.lo;
                hi += w * iv.hi;
            } else {
                lo += w * iv.hi;
                hi += w * iv.lo;
            }
        }
        let pre = Interval::new(lo + layer.bias[i], hi + layer.bias[i]);
        out.push(match layer.activation.get(i) {
            Activation::Relu => pre.relu(),
            Activation::Linear => pre,
        });
    }
}

/// Interval image of one layer: affine part via the positive/negative weight
/// split, then the (monotone) activation.
pub fn interval_layer(layer: &Layer, input: &IntervalBox) -> Result<IntervalBox> {
    if input.dim() != layer.cols {
        return Err(Error::shape("layer input box", layer.cols, input.dim()));
    }
    let mut out = Vec::with_capacity(layer.rows);
    propagate(layer, input.intervals(), &mut out);
    Ok(IntervalBox::from_intervals(out))
}

/// Interval image of the whole network over one box (no partitioning).
pub fn interval_eval(net: &Network, input: &IntervalBox) -> Result<IntervalBox> {
    if input.dim() != net.input_dim {
        return Err(Error::shape("network input box", net.input_dim, input.dim()));
    }
    let mut cur = input.intervals().to_vec();
    let mut next = Vec::new();
    for layer in &net.layers {
        propagate(layer, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(IntervalBox::from_intervals(cur))
}

/// Partitions `input` and returns one sound output box per cell.
pub fn reach_nn(net: &Network, input: &IntervalBox, cfg: &PartitionConfig) -> Result<BoxUnion> {
    if input.dim() != net.input_dim {
        return Err(Error::shape("network input box", net.input_dim, input.dim()));
    }
    let cells = partition(input, cfg)?;
    let boxes = cells
        .iter()
        .map(|c| interval_eval(net, c))
        .collect::<Result<Vec<_>>>()?;
    BoxUnion::new(boxes)
}
