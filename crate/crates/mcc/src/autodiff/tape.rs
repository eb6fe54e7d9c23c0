//! Expression tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its operator, parent ids, and the
//! eagerly computed forward value. `backward` walks the nodes in reverse,
//! which is a valid topological order because parents always precede their
//! consumers on an append-only tape. Gradients accumulate additively, so a
//! value used by several consumers receives the sum of their contributions.

use std::ops::Index;

use crate::autodiff::matrix::{Matrix, LOG_CLAMP_FLOOR};
use crate::error::{Error, Result};

/// Position of a node on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    // The scalar is applied at record time only; it is kept (like Detach's
    // parent) so a dumped tape shows the full expression.
    #[allow(dead_code)]
    AddScalar(NodeId, f64),
    Scale(NodeId, f64),
    Exp(NodeId),
    LogClamped(NodeId),
    Abs(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    MaxScalar(NodeId, f64),
    Transpose(NodeId),
    Sum(NodeId),
    RowSums(NodeId),
    ColSums(NodeId),
    SoftmaxRows { input: NodeId, temperature: f64 },
    AddRowVec(NodeId, NodeId),
    GradReverse { input: NodeId, coeff: f64 },
    #[allow(dead_code)]
    Detach(NodeId),
    ConcatRows(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Append-only record of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`], indexable by
/// [`NodeId`].
#[derive(Debug)]
pub struct Gradients(Vec<Matrix>);

impl Index<NodeId> for Gradients {
    type Output = Matrix;

    fn index(&self, id: NodeId) -> &Matrix {
        &self.0[id.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Records an input. Leaves serve both as trainable parameters and as
    /// constants; callers simply ignore gradients of constants.
    pub fn leaf(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    /// Elementwise division. Rejects zero divisors outright: a recorded
    /// division that blows up in the forward pass would poison the backward
    /// pass silently otherwise.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(b).data().iter().any(|&v| v == 0.0) {
            return Err(Error::NonFinite("division by zero on tape".into()));
        }
        let value = self.value(a).div_elem(self.value(b))?;
        Ok(self.push(Op::Div(a, b), value))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).add_scalar(c);
        self.push(Op::AddScalar(a, c), value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(f64::exp);
        if !value.is_finite() {
            return Err(Error::NonFinite("exp overflow on tape".into()));
        }
        Ok(self.push(Op::Exp(a), value))
    }

    /// `ln(max(x, 1e-12))`. Entries at or below the floor are treated as
    /// constants and receive zero gradient.
    pub fn log_clamped(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(LOG_CLAMP_FLOOR).ln());
        self.push(Op::LogClamped(a), value)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(Op::Relu(a), value)
    }

    /// Elementwise `max(x, c)`. Entries at or below the floor are held
    /// constant and receive zero gradient; used to guard denominators.
    pub fn max_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|v| v.max(c));
        self.push(Op::MaxScalar(a, c), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).transpose();
        self.push(Op::Transpose(a), value)
    }

    /// Sum of all entries as a 1x1 matrix.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    pub fn row_sums(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).row_sums();
        self.push(Op::RowSums(a), value)
    }

    pub fn col_sums(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).col_sums();
        self.push(Op::ColSums(a), value)
    }

    /// Temperature-rescaled row softmax.
    pub fn softmax_rows(&mut self, input: NodeId, temperature: f64) -> Result<NodeId> {
        let value = self.value(input).softmax_rows(temperature)?;
        Ok(self.push(Op::SoftmaxRows { input, temperature }, value))
    }

    /// Adds a 1 x m row vector to every row of an n x m matrix.
    pub fn add_row_vec(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        let r = self.value(row);
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::dimension("add_row_vec", x.shape(), r.shape()));
        }
        let value = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + r.get(0, j));
        Ok(self.push(Op::AddRowVec(a, row), value))
    }

    /// Identity forward; scales the gradient by `-coeff` on the way back.
    /// Used to train a feature extractor against a domain discriminator.
    pub fn grad_reverse(&mut self, input: NodeId, coeff: f64) -> NodeId {
        let value = self.value(input).clone();
        self.push(Op::GradReverse { input, coeff }, value)
    }

    /// Identity forward; blocks the gradient entirely.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).clone();
        self.push(Op::Detach(a), value)
    }

    /// Stacks the rows of `a` above the rows of `b`.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).concat_rows(self.value(b))?;
        Ok(self.push(Op::ConcatRows(a, b), value))
    }

    /// Propagates a unit gradient from a 1x1 `root` back to every node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward root must be 1x1, got {}x{}",
                root_value.rows(),
                root_value.cols()
            )));
        }
        let mut grads: Vec<Matrix> = self
            .nodes
            .iter()
            .map(|n| Matrix::zeros(n.value.rows(), n.value.cols()))
            .collect();
        grads[root.0].set(0, 0, 1.0);

        for idx in (0..=root.0).rev() {
            let g = grads[idx].clone();
            match self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(b).transpose())?;
                    let db = self.value(a).transpose().matmul(&g)?;
                    accumulate(&mut grads, a, &da)?;
                    accumulate(&mut grads, b, &db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, &g)?;
                    accumulate(&mut grads, b, &g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, &g)?;
                    accumulate(&mut grads, b, &g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    let da = g.hadamard(self.value(b))?;
                    let db = g.hadamard(self.value(a))?;
                    accumulate(&mut grads, a, &da)?;
                    accumulate(&mut grads, b, &db)?;
                }
                Op::Div(a, b) => {
                    let bv = self.value(b);
                    let da = g.div_elem(bv)?;
                    // d(a/b)/db = -a / b^2
                    let db = g
                        .hadamard(self.value(a))?
                        .div_elem(&bv.hadamard(bv)?)?
                        .scale(-1.0);
                    accumulate(&mut grads, a, &da)?;
                    accumulate(&mut grads, b, &db)?;
                }
                Op::AddScalar(a, _) => accumulate(&mut grads, a, &g)?,
                Op::Scale(a, c) => accumulate(&mut grads, a, &g.scale(c))?,
                Op::Exp(a) => {
                    let da = g.hadamard(&self.nodes[idx].value)?;
                    accumulate(&mut grads, a, &da)?;
                }
                Op::LogClamped(a) => {
                    let av = self.value(a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| {
                        let v = av.get(i, j);
                        if v > LOG_CLAMP_FLOOR {
                            g.get(i, j) / v
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, a, &da)?;
                }
                Op::Abs(a) => {
                    let av = self.value(a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| {
                        g.get(i, j) * sign(av.get(i, j))
                    });
                    accumulate(&mut grads, a, &da)?;
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[idx].value;
                    let da =
                        Matrix::from_fn(y.rows(), y.cols(), |i, j| {
                            g.get(i, j) * (1.0 - y.get(i, j) * y.get(i, j))
                        });
                    accumulate(&mut grads, a, &da)?;
                }
                Op::Relu(a) => {
                    let av = self.value(a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| {
                        if av.get(i, j) > 0.0 {
                            g.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, a, &da)?;
                }
                Op::MaxScalar(a, c) => {
                    let av = self.value(a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| {
                        if av.get(i, j) > c {
                            g.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, a, &da)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, a, &g.transpose())?,
                Op::Sum(a) => {
                    let av = self.value(a);
                    let da = Matrix::filled(av.rows(), av.cols(), g.get(0, 0));
                    accumulate(&mut grads, a, &da)?;
                }
                Op::RowSums(a) => {
                    let av = self.value(a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, _| g.get(i, 0));
                    accumulate(&mut grads, a, &da)?;
                }
                Op::ColSums(a) => {
                    let av = self.value(a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |_, j| g.get(0, j));
                    accumulate(&mut grads, a, &da)?;
                }
                Op::SoftmaxRows { input, temperature } => {
                    // With y = softmax(z / T) per row:
                    //   dz_k = (y_k / T) * (g_k - sum_j g_j y_j)
                    let y = &self.nodes[idx].value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = y
                            .row(i)
                            .iter()
                            .zip(g.row(i))
                            .map(|(&yv, &gv)| yv * gv)
                            .sum();
                        for j in 0..y.cols() {
                            da.set(i, j, y.get(i, j) / temperature * (g.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut grads, input, &da)?;
                }
                Op::AddRowVec(a, row) => {
                    accumulate(&mut grads, a, &g)?;
                    accumulate(&mut grads, row, &g.col_sums())?;
                }
                Op::GradReverse { input, coeff } => {
                    accumulate(&mut grads, input, &g.scale(-coeff))?;
                }
                Op::Detach(_) => {}
                Op::ConcatRows(a, b) => {
                    let a_rows = self.value(a).rows();
                    let top: Vec<usize> = (0..a_rows).collect();
                    let bottom: Vec<usize> = (a_rows..g.rows()).collect();
                    accumulate(&mut grads, a, &g.select_rows(&top)?)?;
                    accumulate(&mut grads, b, &g.select_rows(&bottom)?)?;
                }
            }
        }
        Ok(Gradients(grads))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Matrix], id: NodeId, delta: &Matrix) -> Result<()> {
    grads[id.0] = grads[id.0].add(delta)?;
    Ok(())
}
