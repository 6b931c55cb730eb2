//! Reverse-mode gradient tape over [`Matrix`] primitives.
//!
//! Operations record their inputs and forward values in a linear tape;
//! [`Tape::backward`] replays nodes in exact reverse recording order and
//! accumulates gradients. A tape is single-owner and single-threaded;
//! parallelism happens across independent tapes.

use crate::error::{Error, Result};
use crate::numkernel::matrix::{dot, Matrix};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Node {
    Leaf,
    MatMul(usize, usize),
    /// x (n x c) + bias (1 x c) broadcast over rows.
    AddRowBroadcast(usize, usize),
    Relu(usize),
    L2NormRows(usize),
    Add(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    /// Reduce to a 1x1 matrix.
    Sum(usize),
}

pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Matrix>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), values: Vec::new() }
    }

    fn push(&mut self, node: Node, value: Matrix) -> Var {
        self.nodes.push(node);
        self.values.push(value);
        Var(self.values.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Node::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(Node::MatMul(a.0, b.0), out))
    }

    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xm = &self.values[x.0];
        let bm = &self.values[bias.0];
        if bm.rows() != 1 || bm.cols() != xm.cols() {
            return Err(Error::Shape(format!(
                "row broadcast: x {}x{}, bias {}x{}",
                xm.rows(),
                xm.cols(),
                bm.rows(),
                bm.cols()
            )));
        }
        let mut out = xm.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let v = out.get(i, j) + bm.get(0, j);
                out.set(i, j, v);
            }
        }
        Ok(self.push(Node::AddRowBroadcast(x.0, bias.0), out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xm = &self.values[x.0];
        let out = Matrix::new(
            xm.rows(),
            xm.cols(),
            xm.data().iter().map(|&v| v.max(0.0)).collect(),
        )
        .expect("same shape");
        self.push(Node::Relu(x.0), out)
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let out = self.values[x.0].l2_normalize_rows()?;
        Ok(self.push(Node::L2NormRows(x.0), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.0].add(&self.values[b.0])?;
        Ok(self.push(Node::Add(a.0, b.0), out))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.values[a.0].hadamard(&self.values[b.0])?;
        Ok(self.push(Node::Hadamard(a.0, b.0), out))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.values[x.0].scale(c);
        self.push(Node::Scale(x.0, c), out)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Matrix::new(1, 1, vec![self.values[x.0].sum()]).expect("1x1");
        self.push(Node::Sum(x.0), out)
    }

    /// Backpropagate `seed` (dL/d output) from `output` to every recorded
    /// value. Gradients of values the output does not depend on are zero.
    pub fn backward(&self, output: Var, seed: Matrix) -> Result<Gradients> {
        let out_val = &self.values[output.0];
        if seed.rows() != out_val.rows() || seed.cols() != out_val.cols() {
            return Err(Error::Shape(format!(
                "backward seed {}x{} vs output {}x{}",
                seed.rows(),
                seed.cols(),
                out_val.rows(),
                out_val.cols()
            )));
        }
        let mut grads: Vec<Matrix> = self
            .values
            .iter()
            .map(|v| Matrix::zeros(v.rows(), v.cols()))
            .collect();
        grads[output.0] = seed;

        for idx in (0..=output.0).rev() {
            let g = grads[idx].clone();
            match self.nodes[idx] {
                Node::Leaf => {}
                Node::MatMul(a, b) => {
                    let ga = g.matmul(&self.values[b].transpose())?;
                    let gb = self.values[a].transpose().matmul(&g)?;
                    grads[a] = grads[a].add(&ga)?;
                    grads[b] = grads[b].add(&gb)?;
                }
                Node::AddRowBroadcast(x, bias) => {
                    grads[x] = grads[x].add(&g)?;
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gb.set(0, j, gb.get(0, j) + g.get(i, j));
                        }
                    }
                    grads[bias] = grads[bias].add(&gb)?;
                }
                Node::Relu(x) => {
                    let xm = &self.values[x];
                    let masked = Matrix::new(
                        g.rows(),
                        g.cols(),
                        g.data()
                            .iter()
                            .zip(xm.data())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                    )?;
                    grads[x] = grads[x].add(&masked)?;
                }
                Node::L2NormRows(x) => {
                    // z = x/||x||; dx = (g - (g.z) z) / ||x||
                    let xm = &self.values[x];
                    let zm = &self.values[idx];
                    let mut gx = Matrix::zeros(xm.rows(), xm.cols());
                    for i in 0..xm.rows() {
                        let norm = xm.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gz = dot(g.row(i), zm.row(i));
                        for j in 0..xm.cols() {
                            gx.set(i, j, (g.get(i, j) - gz * zm.get(i, j)) / norm);
                        }
                    }
                    grads[x] = grads[x].add(&gx)?;
                }
                Node::Add(a, b) => {
                    grads[a] = grads[a].add(&g)?;
                    grads[b] = grads[b].add(&g)?;
                }
                Node::Hadamard(a, b) => {
                    let ga = g.hadamard(&self.values[b])?;
                    let gb = g.hadamard(&self.values[a])?;
                    grads[a] = grads[a].add(&ga)?;
                    grads[b] = grads[b].add(&gb)?;
                }
                Node::Scale(x, c) => {
                    grads[x] = grads[x].add(&g.scale(c))?;
                }
                Node::Sum(x) => {
                    let gv = g.get(0, 0);
                    let xm = &self.values[x];
                    let ones = Matrix::new(xm.rows(), xm.cols(), vec![gv; xm.rows() * xm.cols()])?;
                    grads[x] = grads[x].add(&ones)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &Matrix {
        &self.grads[v.0]
    }
}
