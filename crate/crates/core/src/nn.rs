//! Fully connected ReLU networks with hand-written backpropagation.
//!
//! Parameters live in one flat [`ParamVector`]; layers are column-major
//! views into it (weights `n_out x n_in`, then biases `n_out`, per layer).
//! Batches are matrices with one sample per column.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Weight,
    Bias,
}

/// One contiguous parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub layer: usize,
    pub kind: BlockKind,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    sizes: Vec<usize>,
    blocks: Vec<Block>,
    total: usize,
}

impl Layout {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!(
                "layer sizes must be >= 2 positive entries, got {sizes:?}"
            )));
        }
        let mut blocks = Vec::with_capacity(2 * (sizes.len() - 1));
        let mut offset = 0;
        for (layer, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            blocks.push(Block {
                layer,
                kind: BlockKind::Weight,
                offset,
                len: n_in * n_out,
            });
            offset += n_in * n_out;
            blocks.push(Block {
                layer,
                kind: BlockKind::Bias,
                offset,
                len: n_out,
            });
            offset += n_out;
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            blocks,
            total: offset,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    fn weight<'a>(&self, params: &'a [f64], layer: usize) -> DMatrixView<'a, f64> {
        let b = self.blocks[2 * layer];
        DMatrixView::from_slice(
            &params[b.offset..b.offset + b.len],
            self.sizes[layer + 1],
            self.sizes[layer],
        )
    }

    fn bias<'a>(&self, params: &'a [f64], layer: usize) -> &'a [f64] {
        let b = self.blocks[2 * layer + 1];
        &params[b.offset..b.offset + b.len]
    }

    fn check(&self, params: &[f64], x: &DMatrix<f64>) -> Result<()> {
        if params.len() != self.total {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, layout needs {}",
                params.len(),
                self.total
            )));
        }
        if x.nrows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} rows, network expects {}",
                x.nrows(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, params: &[f64], layer: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.weight(params, layer) * x;
        let b = self.bias(params, layer);
        for mut col in z.column_iter_mut() {
            for (v, bb) in col.iter_mut().zip(b) {
                *v += bb;
            }
        }
        z
    }

    /// Batch forward pass with explicit parameters.
    pub fn forward(&self, params: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(params, x)?;
        let mut h = x.clone();
        for l in 0..self.layers() {
            h = self.affine(params, l, &h);
            if l + 1 < self.layers() {
                h.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(h)
    }

    /// Batch forward pass keeping what [`Layout::backward`] needs.
    pub fn forward_trace(&self, params: &[f64], x: &DMatrix<f64>) -> Result<Trace> {
        self.check(params, x)?;
        let mut inputs = Vec::with_capacity(self.layers());
        let mut h = x.clone();
        for l in 0..self.layers() {
            let mut z = self.affine(params, l, &h);
            inputs.push(h);
            if l + 1 < self.layers() {
                z.apply(|v| *v = v.max(0.0));
            }
            h = z;
        }
        Ok(Trace { inputs, output: h })
    }

    /// Reverse-mode pass. `d_out` is the gradient of the loss with respect to
    /// the outputs (one column per sample). Returns the parameter gradient
    /// and the gradient with respect to the inputs.
    pub fn backward(&self, params: &[f64], trace: &Trace, d_out: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.backward_impl(params, trace, d_out, true)
    }

    /// Gradient with respect to the inputs only.
    pub fn backward_input(&self, params: &[f64], trace: &Trace, d_out: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.backward_impl(params, trace, d_out, false)?.1)
    }

    fn backward_impl(
        &self,
        params: &[f64],
        trace: &Trace,
        d_out: &DMatrix<f64>,
        want_params: bool,
    ) -> Result<(Vec<f64>, DMatrix<f64>)> {
        if d_out.shape() != trace.output.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, outputs are {:?}",
                d_out.shape(),
                trace.output.shape()
            )));
        }
        let mut grad = if want_params { vec![0.0; self.total] } else { Vec::new() };
        let mut dz = d_out.clone();
        for l in (0..self.layers()).rev() {
            let x = &trace.inputs[l];
            if want_params {
                let dw = &dz * x.transpose();
                let wb = self.blocks[2 * l];
                grad[wb.offset..wb.offset + wb.len].copy_from_slice(dw.as_slice());
                let bb = self.blocks[2 * l + 1];
                for (j, g) in grad[bb.offset..bb.offset + bb.len].iter_mut().enumerate() {
                    *g = dz.row(j).sum();
                }
            }
            let mut dx = self.weight(params, l).tr_mul(&dz);
            if l > 0 {
                // x is the ReLU output of the previous layer; relu'(0) = 0
                dx.zip_apply(x, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            dz = dx;
        }
        Ok((grad, dz))
    }
}

/// Intermediate activations of a batch forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    inputs: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl Trace {
    /// ReLU on/off pattern of every hidden unit and sample.
    pub fn active_units(&self) -> Vec<bool> {
        self.inputs
            .iter()
            .skip(1)
            .flat_map(|h| h.iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Flat trainable parameters plus their block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {} parameters",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, b: &Block) -> &[f64] {
        &self.values[b.offset..b.offset + b.len]
    }
}

/// Multilayer perceptron: ReLU hidden layers, linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    params: ParamVector,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(n_in), 1/sqrt(n_in))` for
    /// weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let layout = Layout::new(sizes)?;
        let mut values = vec![0.0; layout.total()];
        for b in layout.blocks() {
            let bound = 1.0 / (sizes[b.layer] as f64).sqrt();
            for v in &mut values[b.offset..b.offset + b.len] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            params: ParamVector { values, layout },
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let layout = Layout::new(sizes)?;
        let values = vec![0.0; layout.total()];
        Ok(Self {
            params: ParamVector { values, layout },
        })
    }

    pub fn from_params(params: ParamVector) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params.values
    }

    /// Replaces the parameter values, which must match this layout.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} values for a network of {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        self.params.values.copy_from_slice(values);
        Ok(())
    }

    pub fn layout(&self) -> &Layout {
        &self.params.layout
    }

    pub fn sizes(&self) -> &[usize] {
        self.params.layout.sizes()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forward_batch(&m)?.as_slice().to_vec())
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.layout().forward(&self.params.values, x)
    }

    pub fn forward_trace(&self, x: &DMatrix<f64>) -> Result<Trace> {
        self.layout().forward_trace(&self.params.values, x)
    }

    pub fn backward(&self, trace: &Trace, d_out: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.layout().backward(&self.params.values, trace, d_out)
    }
}

/// Adaptive-moment gradient descent.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descends along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

const CHECKPOINT_MAGIC: &str = "invscape-checkpoint v1";

/// Writes named networks as text: a magic line, then per network a
/// `net <name> <sizes...>` header and one value per line in shortest
/// round-trip exponent notation.
pub fn write_checkpoint<W: Write>(mut w: W, nets: &[(&str, &Mlp)]) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    for (name, net) in nets {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid network name '{name}'")));
        }
        let sizes: Vec<String> = net.sizes().iter().map(|s| s.to_string()).collect();
        writeln!(w, "net {name} {}", sizes.join(" "))?;
        for v in &net.params().values {
            writeln!(w, "{v:e}")?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Vec<(String, Mlp)>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(l)) if l.trim() == CHECKPOINT_MAGIC => {}
        _ => return Err(Error::Checkpoint("missing checkpoint header".into())),
    }
    let mut out = Vec::new();
    let mut current: Option<(String, Layout, Vec<f64>)> = None;
    let finish = |cur: Option<(String, Layout, Vec<f64>)>, out: &mut Vec<(String, Mlp)>| -> Result<()> {
        if let Some((name, layout, values)) = cur {
            if values.len() != layout.total() {
                return Err(Error::Checkpoint(format!(
                    "network '{name}' has {} values, expected {}",
                    values.len(),
                    layout.total()
                )));
            }
            out.push((name, Mlp::from_params(ParamVector { values, layout })));
        }
        Ok(())
    };
    for line in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("net ") {
            finish(current.take(), &mut out)?;
            let mut parts = rest.split_whitespace();
            let name = parts
                .next()
                .ok_or_else(|| Error::Checkpoint("network header without name".into()))?
                .to_string();
            let sizes = parts
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Checkpoint(format!("bad layer size in '{line}': {e}")))?;
            let layout = Layout::new(&sizes).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let cap = layout.total();
            current = Some((name, layout, Vec::with_capacity(cap)));
        } else {
            let v: f64 = line
                .parse()
                .map_err(|e| Error::Checkpoint(format!("bad value '{line}': {e}")))?;
            match current.as_mut() {
                Some((_, _, values)) => values.push(v),
                None => return Err(Error::Checkpoint("value before any network header".into())),
            }
        }
    }
    finish(current, &mut out)?;
    Ok(out)
}

/// Column vector of a slice, convenience for single-sample calls.
pub fn column(x: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(x.len(), 1, x)
}

/// Stacks two batches vertically (e.g. state and action inputs of a critic).
pub fn vstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.ncols(), b.ncols(), "batch sizes differ");
    let (ra, rb) = (a.nrows(), b.nrows());
    DMatrix::from_fn(
        ra + rb,
        a.ncols(),
        |i, j| if i < ra { a[(i, j)] } else { b[(i - ra, j)] },
    )
}

/// Squared l2 norm of a slice.
pub fn norm2(x: &[f64]) -> f64 {
    DVector::from_column_slice(x).norm_squared()
}
