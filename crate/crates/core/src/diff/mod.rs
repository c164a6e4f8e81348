//! Reverse-mode automatic differentiation over dense grids.
//!
//! Operations execute eagerly and are recorded on a [`Tape`]. Calling
//! [`Tape::backward`] on a scalar output replays the record in reverse and
//! returns a cotangent for every recorded value. Leaves that did not take
//! part in the computation get an exact zero.
//!
//! All arithmetic is `f64`. Complex grids carry two interleaved channels.

mod conv;
mod fft;
mod ops;
mod resample;

use std::cell::RefCell;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::{Grid, Shape};

pub use conv::{BinAssignment, Conv2dLayer};
pub use fft::{dft_naive, fft_in_place, is_power_of_two};
pub use ops::sigmoid;
pub use resample::catmull_rom_weights;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("non-finite value produced by primitive `{primitive}` (node {node})")]
    NonFinite { primitive: &'static str, node: usize },
    #[error("backward pass requires a scalar output, got shape {0}")]
    NonScalarOutput(Shape),
    #[error("shape error in `{primitive}`: {detail}")]
    Shape { primitive: &'static str, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum UnaryKind {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Sigmoid,
    Relu,
    Square,
    Recip,
    Tanh,
    Abs,
    Powf(f64),
    AddConst(f64),
    MulConst(f64),
}

pub(crate) enum Op {
    Leaf,
    Binary { kind: BinaryKind, a: usize, b: usize },
    Unary { kind: UnaryKind, a: usize },
    Sum { a: usize },
    MeanPixels { a: usize },
    SumChannels { a: usize },
    Channels { a: usize, start: usize },
    ConcatChannels { parts: Vec<usize> },
    ConcatFlat { parts: Vec<usize> },
    Reshape { a: usize },
    Roll { a: usize, dy: isize, dx: isize },
    Fft2 { a: usize, inverse: bool },
    FftRows { a: usize },
    Conv2d { a: usize, layer: Arc<Conv2dLayer>, stride: usize, pad: usize },
    AvgPool2 { a: usize },
    Gram { a: usize },
    BinMean { a: usize, bins: Arc<BinAssignment> },
    ColumnProfiles { a: usize, bins: usize },
    Resample { scale: usize, dscale: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { kind, .. } => match kind {
                BinaryKind::Add => "add",
                BinaryKind::Sub => "sub",
                BinaryKind::Mul => "mul",
                BinaryKind::Div => "div",
            },
            Op::Unary { kind, .. } => match kind {
                UnaryKind::Neg => "neg",
                UnaryKind::Exp => "exp",
                UnaryKind::Ln => "ln",
                UnaryKind::Sqrt => "sqrt",
                UnaryKind::Sin => "sin",
                UnaryKind::Cos => "cos",
                UnaryKind::Sigmoid => "sigmoid",
                UnaryKind::Relu => "relu",
                UnaryKind::Square => "square",
                UnaryKind::Recip => "recip",
                UnaryKind::Tanh => "tanh",
                UnaryKind::Abs => "abs",
                UnaryKind::Powf(_) => "powf",
                UnaryKind::AddConst(_) => "add_const",
                UnaryKind::MulConst(_) => "mul_const",
            },
            Op::Sum { .. } => "sum",
            Op::MeanPixels { .. } => "mean_pixels",
            Op::SumChannels { .. } => "sum_channels",
            Op::Channels { .. } => "channels",
            Op::ConcatChannels { .. } => "concat_channels",
            Op::ConcatFlat { .. } => "concat_flat",
            Op::Reshape { .. } => "reshape",
            Op::Roll { .. } => "roll",
            Op::Fft2 { inverse: false, .. } => "fft2",
            Op::Fft2 { inverse: true, .. } => "ifft2",
            Op::FftRows { .. } => "fft_rows",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool2 { .. } => "avg_pool2",
            Op::Gram { .. } => "gram",
            Op::BinMean { .. } => "bin_mean",
            Op::ColumnProfiles { .. } => "column_profiles",
            Op::Resample { .. } => "resample",
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Grid,
    pub(crate) op: Op,
}

/// Record of executed primitives. Single writer; use one tape per evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: RefCell<Option<(&'static str, usize)>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record an input grid.
    pub fn input(&self, value: Grid) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Record a constant. Constants are leaves too; their cotangent is
    /// available but never needed.
    pub fn constant(&self, value: Grid) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(Grid::scalar(value), Op::Leaf)
    }

    pub(crate) fn push(&self, value: Grid, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if !value.is_finite() {
            let mut fault = self.fault.borrow_mut();
            if fault.is_none() {
                *fault = Some((op.name(), id));
            }
        }
        nodes.push(Node { value, op });
        Var { tape: self, id }
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Grid) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// First primitive that produced a non-finite value, if any.
    pub fn fault(&self) -> Option<DiffError> {
        self.fault
            .borrow()
            .map(|(primitive, node)| DiffError::NonFinite { primitive, node })
    }

    /// Replay the tape backward from a scalar output.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients, DiffError> {
        if let Some(err) = self.fault() {
            return Err(err);
        }
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape();
        if out_shape.len() != 1 {
            return Err(DiffError::NonScalarOutput(out_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(vec![1.0]);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            ops::backward_node(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads, shapes: nodes.iter().map(|n| n.value.shape()).collect() })
    }
}

/// Cotangents produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Shape>,
}

impl Gradients {
    /// Cotangent with respect to `var`; zero when `var` did not contribute.
    pub fn wrt(&self, var: Var<'_>) -> Grid {
        let shape = self.shapes[var.id];
        match &self.grads[var.id] {
            Some(g) => Grid::new(shape, g.clone()),
            None => Grid::zeros(shape),
        }
    }

    pub fn scalar(&self, var: Var<'_>) -> f64 {
        match &self.grads[var.id] {
            Some(g) => g[0],
            None => 0.0,
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Shape {
        self.tape.with_value(self.id, |g| g.shape())
    }

    pub fn value(&self) -> Grid {
        self.tape.with_value(self.id, |g| g.clone())
    }

    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, |g| g.item())
    }
}

/// Evaluate `program` on fresh leaves for `inputs` and return the scalar
/// output together with the cotangent of every input.
pub fn grad<F>(inputs: &[Grid], program: F) -> Result<(f64, Vec<Grid>), DiffError>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|g| tape.input(g.clone())).collect();
    let out = program(&tape, &vars);
    let grads = tape.backward(out)?;
    let value = out.item();
    Ok((value, vars.iter().map(|v| grads.wrt(*v)).collect()))
}
