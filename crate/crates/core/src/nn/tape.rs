//! Reverse-mode differentiation on a recorded sequence of vector operations.
//!
//! The tape stores node values in one flat arena and replays the recorded
//! operations backwards to accumulate parameter gradients. Sampled noise,
//! time features and regression targets enter as constants, so gradients of
//! trajectory losses are pathwise: differentiation flows through the states,
//! never through the randomness.

use crate::{Error, Result};

/// Handle to a tape node (a vector value).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(u32);

/// Which parameter vector an affine operation reads.
#[derive(Debug, Clone, Copy)]
pub enum NetRef {
    /// The trainable vector the tape was built over; gradients accumulate.
    Trainable,
    /// A frozen vector registered with [`Tape::register_frozen`]; gradients
    /// still flow through the input, not into the parameters.
    Frozen(u32),
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const,
    Affine {
        net: NetRef,
        w_off: u32,
        b_off: u32,
        rows: u32,
        cols: u32,
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        c: f64,
    },
    Shift {
        a: NodeId,
    },
    /// c * a + b.
    Axpy {
        c: f64,
        a: NodeId,
        b: NodeId,
    },
    SumSq {
        a: NodeId,
    },
    Concat {
        parts: [NodeId; 3],
        n: u8,
    },
    Index {
        a: NodeId,
        i: u32,
    },
    /// A scalar whose gradient with respect to its input was supplied at
    /// record time (stored in the aux arena).
    ScalarWithGrad {
        x: NodeId,
        aux_off: u32,
    },
}

/// A recorded computation over one trainable parameter vector.
pub struct Tape<'a> {
    params: &'a [f64],
    frozen: Vec<&'a [f64]>,
    vals: Vec<f64>,
    offs: Vec<(u32, u32)>,
    ops: Vec<Op>,
    aux: Vec<f64>,
    adj: Vec<f64>,
    grad: Vec<f64>,
    ran_backward: bool,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a [f64]) -> Self {
        Self {
            params,
            frozen: Vec::new(),
            vals: Vec::new(),
            offs: Vec::new(),
            ops: Vec::new(),
            aux: Vec::new(),
            adj: Vec::new(),
            grad: vec![0.0; params.len()],
            ran_backward: false,
        }
    }

    /// Registers a frozen parameter vector and returns its handle.
    pub fn register_frozen(&mut self, params: &'a [f64]) -> NetRef {
        self.frozen.push(params);
        NetRef::Frozen(self.frozen.len() as u32 - 1)
    }

    pub fn len(&self) -> usize {
        self.offs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offs.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let (off, len) = self.offs[id.0 as usize];
        &self.vals[off as usize..(off + len) as usize]
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    /// Adjoint of a node after [`Tape::backward`] (the input gradient).
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        assert!(self.ran_backward, "call backward before reading adjoints");
        let (off, len) = self.offs[id.0 as usize];
        &self.adj[off as usize..(off + len) as usize]
    }

    /// Parameter gradient accumulated by [`Tape::backward`].
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    /// Consumes the tape, releasing the parameter borrow, and returns the
    /// accumulated gradient.
    pub fn into_grad(self) -> Vec<f64> {
        self.grad
    }

    fn push(&mut self, op: Op, value: &[f64]) -> NodeId {
        let off = self.vals.len() as u32;
        self.vals.extend_from_slice(value);
        self.offs.push((off, value.len() as u32));
        self.ops.push(op);
        NodeId(self.offs.len() as u32 - 1)
    }

    pub fn constant(&mut self, v: &[f64]) -> NodeId {
        self.push(Op::Const, v)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Const, &[v])
    }

    fn source(&self, net: NetRef) -> &[f64] {
        match net {
            NetRef::Trainable => self.params,
            NetRef::Frozen(i) => self.frozen[i as usize],
        }
    }

    /// out = W x + b with W (rows x cols) at w_off and b at b_off in the
    /// referenced parameter vector.
    pub fn affine(
        &mut self,
        net: NetRef,
        w_off: usize,
        b_off: usize,
        rows: usize,
        cols: usize,
        x: NodeId,
    ) -> NodeId {
        let src = self.source(net);
        let xv = self.value(x);
        debug_assert_eq!(xv.len(), cols);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[w_off + r * cols..w_off + (r + 1) * cols];
            let mut acc = src[b_off + r];
            for (w, h) in row.iter().zip(xv) {
                acc += w * h;
            }
            out[r] = acc;
        }
        self.push(
            Op::Affine {
                net,
                w_off: w_off as u32,
                b_off: b_off as u32,
                rows: rows as u32,
                cols: cols as u32,
                x,
            },
            &out,
        )
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(Op::Tanh { x }, &out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add { a, b }, &out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(Op::Sub { a, b }, &out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().map(|x| c * x).collect();
        self.push(Op::Scale { a, c }, &out)
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().map(|x| x + c).collect();
        self.push(Op::Shift { a }, &out)
    }

    /// c * a + b.
    pub fn axpy(&mut self, c: f64, a: NodeId, b: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| c * x + y)
            .collect();
        self.push(Op::Axpy { c, a, b }, &out)
    }

    pub fn sumsq(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).iter().map(|v| v * v).sum();
        self.push(Op::SumSq { a }, &[s])
    }

    pub fn concat2(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        self.push(
            Op::Concat {
                parts: [a, b, NodeId(u32::MAX)],
                n: 2,
            },
            &out,
        )
    }

    pub fn concat3(&mut self, a: NodeId, b: NodeId, c: NodeId) -> NodeId {
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        out.extend_from_slice(self.value(c));
        self.push(Op::Concat { parts: [a, b, c], n: 3 }, &out)
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self.value(a)[i];
        self.push(Op::Index { a, i: i as u32 }, &[v])
    }

    /// Records a scalar with an externally supplied input gradient, e.g.
    /// log gamma(x) together with grad log gamma(x).
    pub fn scalar_with_grad(&mut self, x: NodeId, value: f64, grad_wrt_x: &[f64]) -> NodeId {
        debug_assert_eq!(grad_wrt_x.len(), self.value(x).len());
        let aux_off = self.aux.len() as u32;
        self.aux.extend_from_slice(grad_wrt_x);
        self.push(Op::ScalarWithGrad { x, aux_off }, &[value])
    }

    /// Sum of squared differences, the workhorse of the regression losses.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        self.sumsq(d)
    }

    /// Runs reverse-mode accumulation from a scalar node, filling the
    /// parameter gradient and all node adjoints.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let (off, len) = self.offs[loss.0 as usize];
        if len != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar root, got a length-{len} node"
            )));
        }
        if !self.scalar_value(loss).is_finite() {
            return Err(Error::Domain("backward root is non-finite".into()));
        }
        self.adj = vec![0.0; self.vals.len()];
        self.adj[off as usize] = 1.0;
        for idx in (0..=loss.0 as usize).rev() {
            let (out_off, out_len) = self.offs[idx];
            let (out_off, out_len) = (out_off as usize, out_len as usize);
            match self.ops[idx] {
                Op::Const => {}
                Op::Affine {
                    net,
                    w_off,
                    b_off,
                    rows,
                    cols,
                    x,
                } => {
                    let (rows, cols) = (rows as usize, cols as usize);
                    let (w_off, b_off) = (w_off as usize, b_off as usize);
                    let (x_off, _) = self.offs[x.0 as usize];
                    let x_off = x_off as usize;
                    let trainable = matches!(net, NetRef::Trainable);
                    // Copy the `&'a` slice out of the field so the adjoint
                    // buffer can be mutated in the same loop.
                    let w: &'a [f64] = match net {
                        NetRef::Trainable => self.params,
                        NetRef::Frozen(i) => self.frozen[i as usize],
                    };
                    for r in 0..rows {
                        let g = self.adj[out_off + r];
                        if g == 0.0 {
                            continue;
                        }
                        if trainable {
                            self.grad[b_off + r] += g;
                            for c in 0..cols {
                                self.grad[w_off + r * cols + c] += g * self.vals[x_off + c];
                            }
                        }
                        let row_off = w_off + r * cols;
                        for c in 0..cols {
                            self.adj[x_off + c] += w[row_off + c] * g;
                        }
                    }
                }
                Op::Tanh { x } => {
                    let (x_off, _) = self.offs[x.0 as usize];
                    for i in 0..out_len {
                        let y = self.vals[out_off + i];
                        self.adj[x_off as usize + i] += self.adj[out_off + i] * (1.0 - y * y);
                    }
                }
                Op::Add { a, b } => {
                    let (a_off, _) = self.offs[a.0 as usize];
                    let (b_off, _) = self.offs[b.0 as usize];
                    for i in 0..out_len {
                        let g = self.adj[out_off + i];
                        self.adj[a_off as usize + i] += g;
                        self.adj[b_off as usize + i] += g;
                    }
                }
                Op::Sub { a, b } => {
                    let (a_off, _) = self.offs[a.0 as usize];
                    let (b_off, _) = self.offs[b.0 as usize];
                    for i in 0..out_len {
                        let g = self.adj[out_off + i];
                        self.adj[a_off as usize + i] += g;
                        self.adj[b_off as usize + i] -= g;
                    }
                }
                Op::Scale { a, c } => {
                    let (a_off, _) = self.offs[a.0 as usize];
                    for i in 0..out_len {
                        self.adj[a_off as usize + i] += c * self.adj[out_off + i];
                    }
                }
                Op::Shift { a } => {
                    let (a_off, _) = self.offs[a.0 as usize];
                    for i in 0..out_len {
                        self.adj[a_off as usize + i] += self.adj[out_off + i];
                    }
                }
                Op::Axpy { c, a, b } => {
                    let (a_off, _) = self.offs[a.0 as usize];
                    let (b_off, _) = self.offs[b.0 as usize];
                    for i in 0..out_len {
                        let g = self.adj[out_off + i];
                        self.adj[a_off as usize + i] += c * g;
                        self.adj[b_off as usize + i] += g;
                    }
                }
                Op::SumSq { a } => {
                    let (a_off, a_len) = self.offs[a.0 as usize];
                    let g = self.adj[out_off];
                    for i in 0..a_len as usize {
                        self.adj[a_off as usize + i] += 2.0 * g * self.vals[a_off as usize + i];
                    }
                }
                Op::Concat { parts, n } => {
                    let mut cursor = out_off;
                    for part in parts.iter().take(n as usize) {
                        let (p_off, p_len) = self.offs[part.0 as usize];
                        for i in 0..p_len as usize {
                            self.adj[p_off as usize + i] += self.adj[cursor + i];
                        }
                        cursor += p_len as usize;
                    }
                }
                Op::Index { a, i } => {
                    let (a_off, _) = self.offs[a.0 as usize];
                    self.adj[a_off as usize + i as usize] += self.adj[out_off];
                }
                Op::ScalarWithGrad { x, aux_off } => {
                    let (x_off, x_len) = self.offs[x.0 as usize];
                    let g = self.adj[out_off];
                    for i in 0..x_len as usize {
                        self.adj[x_off as usize + i] += g * self.aux[aux_off as usize + i];
                    }
                }
            }
        }
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Domain("gradient became non-finite".into()));
        }
        self.ran_backward = true;
        Ok(())
    }
}
