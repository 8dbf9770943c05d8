//! Eager tape for reverse-mode differentiation over small dense vectors.
//!
//! Values are computed at insertion time and stored in one arena; `backward`
//! walks the tape in reverse, accumulating gradients additively across uses.
//! Parameter leaves deposit their gradients into an external [`GradBuf`], so
//! one tape per episode can be replayed and dropped while gradients sum
//! across episodes in a deterministic order.

use super::{GradBuf, ParamId, ParamSet};
use crate::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

#[derive(Debug, Clone, Copy)]
enum OpKind {
    /// Constant (no gradient).
    Const,
    /// Copy of a parameter tensor; backward writes into the grad buffer.
    Param(ParamId),
    /// Matrix-vector product: a is (m x n), b is (n x 1).
    MatVec,
    Add,
    Sub,
    /// Elementwise (Hadamard) product.
    Mul,
    /// y = c0 * x + c1, elementwise.
    Affine,
    Sigmoid,
    Tanh,
    LeakyRelu,
    Exp,
    /// Sum of all entries to a length-1 node.
    SumScalar,
    /// Elementwise min of two same-shape nodes; gradient follows the winner.
    Min,
    /// y = clamp(x, c0, c1); zero gradient outside the band.
    Clamp,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: OpKind,
    a: u32,
    b: u32,
    c0: f64,
    c1: f64,
    rows: u32,
    cols: u32,
    off: u32,
}

/// The recording tape. `clear` retains capacity so per-episode replay does
/// not allocate after warmup.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    grads: Vec<f64>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.vals.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value slice of a node.
    pub fn value(&self, id: NodeId) -> &[f64] {
        let n = &self.nodes[id.0 as usize];
        let len = (n.rows * n.cols) as usize;
        &self.vals[n.off as usize..n.off as usize + len]
    }

    /// Scalar value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0 as usize];
        (n.rows as usize, n.cols as usize)
    }

    fn push(&mut self, mut node: Node, len: usize) -> NodeId {
        node.off = self.vals.len() as u32;
        self.vals.resize(self.vals.len() + len, 0.0);
        self.nodes.push(node);
        NodeId((self.nodes.len() - 1) as u32)
    }

    fn len_of(&self, id: u32) -> usize {
        let n = &self.nodes[id as usize];
        (n.rows * n.cols) as usize
    }

    /// Insert a constant vector.
    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        let id = self.push(
            Node {
                op: OpKind::Const,
                a: 0,
                b: 0,
                c0: 0.0,
                c1: 0.0,
                rows: values.len() as u32,
                cols: 1,
                off: 0,
            },
            values.len(),
        );
        let n = &self.nodes[id.0 as usize];
        self.vals[n.off as usize..n.off as usize + values.len()].copy_from_slice(values);
        id
    }

    /// Insert a scalar constant.
    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(&[v])
    }

    /// Insert a parameter leaf (copies the current parameter values).
    pub fn param(&mut self, params: &ParamSet, pid: ParamId) -> NodeId {
        let e = params.entry(pid);
        let id = self.push(
            Node {
                op: OpKind::Param(pid),
                a: 0,
                b: 0,
                c0: 0.0,
                c1: 0.0,
                rows: e.rows as u32,
                cols: e.cols as u32,
                off: 0,
            },
            e.rows * e.cols,
        );
        let n = &self.nodes[id.0 as usize];
        let (off, len) = (n.off as usize, e.rows * e.cols);
        self.vals[off..off + len].copy_from_slice(params.slice(pid));
        id
    }

    /// Matrix-vector product. `w` must be (m x n), `x` length n.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (m, n) = self.shape(w);
        let (xn, xc) = self.shape(x);
        assert_eq!(xc, 1, "matvec rhs must be a vector");
        assert_eq!(n, xn, "matvec dimension mismatch");
        let id = self.push(
            Node {
                op: OpKind::MatVec,
                a: w.0,
                b: x.0,
                c0: 0.0,
                c1: 0.0,
                rows: m as u32,
                cols: 1,
                off: 0,
            },
            m,
        );
        let node = self.nodes[id.0 as usize];
        let woff = self.nodes[w.0 as usize].off as usize;
        let xoff = self.nodes[x.0 as usize].off as usize;
        for i in 0..m {
            let mut acc = 0.0;
            let wrow = woff + i * n;
            for j in 0..n {
                acc += self.vals[wrow + j] * self.vals[xoff + j];
            }
            self.vals[node.off as usize + i] = acc;
        }
        id
    }

    fn binary(&mut self, op: OpKind, a: NodeId, b: NodeId) -> NodeId {
        let la = self.len_of(a.0);
        let lb = self.len_of(b.0);
        assert_eq!(la, lb, "elementwise shape mismatch");
        let (rows, cols) = self.shape(a);
        let id = self.push(
            Node {
                op,
                a: a.0,
                b: b.0,
                c0: 0.0,
                c1: 0.0,
                rows: rows as u32,
                cols: cols as u32,
                off: 0,
            },
            la,
        );
        let off = self.nodes[id.0 as usize].off as usize;
        let ao = self.nodes[a.0 as usize].off as usize;
        let bo = self.nodes[b.0 as usize].off as usize;
        for i in 0..la {
            let (x, y) = (self.vals[ao + i], self.vals[bo + i]);
            self.vals[off + i] = match op {
                OpKind::Add => x + y,
                OpKind::Sub => x - y,
                OpKind::Mul => x * y,
                OpKind::Min => x.min(y),
                _ => unreachable!(),
            };
        }
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(OpKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(OpKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(OpKind::Mul, a, b)
    }

    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(OpKind::Min, a, b)
    }

    fn unary(&mut self, op: OpKind, a: NodeId, c0: f64, c1: f64) -> NodeId {
        let la = self.len_of(a.0);
        let (rows, cols) = self.shape(a);
        let id = self.push(
            Node {
                op,
                a: a.0,
                b: 0,
                c0,
                c1,
                rows: rows as u32,
                cols: cols as u32,
                off: 0,
            },
            la,
        );
        let off = self.nodes[id.0 as usize].off as usize;
        let ao = self.nodes[a.0 as usize].off as usize;
        for i in 0..la {
            let x = self.vals[ao + i];
            self.vals[off + i] = match op {
                OpKind::Affine => c0 * x + c1,
                OpKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
                OpKind::Tanh => x.tanh(),
                OpKind::LeakyRelu => {
                    if x > 0.0 {
                        x
                    } else {
                        c0 * x
                    }
                }
                OpKind::Exp => x.exp(),
                OpKind::Clamp => x.clamp(c0, c1),
                _ => unreachable!(),
            };
        }
        id
    }

    /// y = c0 * x + c1 elementwise.
    pub fn affine(&mut self, a: NodeId, c0: f64, c1: f64) -> NodeId {
        self.unary(OpKind::Affine, a, c0, c1)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Sigmoid, a, 0.0, 0.0)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Tanh, a, 0.0, 0.0)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.unary(OpKind::LeakyRelu, a, slope, 0.0)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(OpKind::Exp, a, 0.0, 0.0)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(OpKind::Clamp, a, lo, hi)
    }

    /// Sum all entries into a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let la = self.len_of(a.0);
        let id = self.push(
            Node {
                op: OpKind::SumScalar,
                a: a.0,
                b: 0,
                c0: 0.0,
                c1: 0.0,
                rows: 1,
                cols: 1,
                off: 0,
            },
            1,
        );
        let off = self.nodes[id.0 as usize].off as usize;
        let ao = self.nodes[a.0 as usize].off as usize;
        self.vals[off] = self.vals[ao..ao + la].iter().sum();
        id
    }

    /// Reverse pass from scalar `loss`. Parameter gradients are *added* into
    /// `grads`; call sites control zeroing. Fails if called twice without
    /// `clear` (the tape's node gradients would double-accumulate).
    pub fn backward(&mut self, loss: NodeId, params: &ParamSet, grads: &mut GradBuf) -> Result<()> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        self.backward_done = true;
        debug_assert_eq!(self.len_of(loss.0), 1);

        self.grads.clear();
        self.grads.resize(self.vals.len(), 0.0);
        let ln = &self.nodes[loss.0 as usize];
        self.grads[ln.off as usize] = 1.0;

        for idx in (0..=loss.0 as usize).rev() {
            let node = self.nodes[idx];
            let len = (node.rows * node.cols) as usize;
            let off = node.off as usize;
            match node.op {
                OpKind::Const => {}
                OpKind::Param(pid) => {
                    let e = params.entry(pid);
                    let g = grads.flat_mut();
                    for i in 0..len {
                        g[e.offset + i] += self.grads[off + i];
                    }
                }
                OpKind::MatVec => {
                    let w = self.nodes[node.a as usize];
                    let x = self.nodes[node.b as usize];
                    let (m, n) = (w.rows as usize, w.cols as usize);
                    let (wo, xo) = (w.off as usize, x.off as usize);
                    for i in 0..m {
                        let gi = self.grads[off + i];
                        if gi == 0.0 {
                            continue;
                        }
                        let wrow = wo + i * n;
                        for j in 0..n {
                            self.grads[wrow + j] += gi * self.vals[xo + j];
                            self.grads[xo + j] += gi * self.vals[wrow + j];
                        }
                    }
                }
                OpKind::Add => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    let bo = self.nodes[node.b as usize].off as usize;
                    for i in 0..len {
                        let g = self.grads[off + i];
                        self.grads[ao + i] += g;
                        self.grads[bo + i] += g;
                    }
                }
                OpKind::Sub => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    let bo = self.nodes[node.b as usize].off as usize;
                    for i in 0..len {
                        let g = self.grads[off + i];
                        self.grads[ao + i] += g;
                        self.grads[bo + i] -= g;
                    }
                }
                OpKind::Mul => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    let bo = self.nodes[node.b as usize].off as usize;
                    for i in 0..len {
                        let g = self.grads[off + i];
                        self.grads[ao + i] += g * self.vals[bo + i];
                        self.grads[bo + i] += g * self.vals[ao + i];
                    }
                }
                OpKind::Min => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    let bo = self.nodes[node.b as usize].off as usize;
                    for i in 0..len {
                        let g = self.grads[off + i];
                        if self.vals[ao + i] <= self.vals[bo + i] {
                            self.grads[ao + i] += g;
                        } else {
                            self.grads[bo + i] += g;
                        }
                    }
                }
                OpKind::Affine => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    for i in 0..len {
                        self.grads[ao + i] += self.grads[off + i] * node.c0;
                    }
                }
                OpKind::Sigmoid => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    for i in 0..len {
                        let y = self.vals[off + i];
                        self.grads[ao + i] += self.grads[off + i] * y * (1.0 - y);
                    }
                }
                OpKind::Tanh => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    for i in 0..len {
                        let y = self.vals[off + i];
                        self.grads[ao + i] += self.grads[off + i] * (1.0 - y * y);
                    }
                }
                OpKind::LeakyRelu => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    for i in 0..len {
                        let x = self.vals[ao + i];
                        let d = if x > 0.0 { 1.0 } else { node.c0 };
                        self.grads[ao + i] += self.grads[off + i] * d;
                    }
                }
                OpKind::Exp => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    for i in 0..len {
                        self.grads[ao + i] += self.grads[off + i] * self.vals[off + i];
                    }
                }
                OpKind::Clamp => {
                    let ao = self.nodes[node.a as usize].off as usize;
                    for i in 0..len {
                        let x = self.vals[ao + i];
                        if x > node.c0 && x < node.c1 {
                            self.grads[ao + i] += self.grads[off + i];
                        }
                    }
                }
                OpKind::SumScalar => {
                    let a = self.nodes[node.a as usize];
                    let ao = a.off as usize;
                    let alen = (a.rows * a.cols) as usize;
                    let g = self.grads[off];
                    for i in 0..alen {
                        self.grads[ao + i] += g;
                    }
                }
            }
        }
        Ok(())
    }
}
