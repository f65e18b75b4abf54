//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records each primitive in execution order, so node inputs always
//! precede the node. [`Tape::backward`] walks the record in reverse and
//! accumulates vector-Jacobian products. Nodes that do not depend on any
//! differentiable leaf are skipped.
//!
//! The derivative of `leaky_relu` at exactly zero is taken to be `slope`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, Elementwise, Reduce, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    LeakyRelu { x: Var, slope: f64 },
    Binary { a: Var, b: Var, mode: Elementwise },
    Scale { a: Var, c: f64 },
    SegmentReduce { x: Var, targets: Arc<[usize]>, n_nodes: usize, mode: Reduce },
    EdgeDiff { x: Var, targets: Arc<[usize]>, sources: Arc<[usize]> },
    SelectCols { x: Var, cols: Arc<[usize]> },
    ConcatCols { parts: Vec<Var> },
    SquaredError { a: Var, target: Arc<Tensor> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` if `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = tensor::linear_forward(
            self.value(w),
            b.map(|b| self.value(b)),
            self.value(x),
        )?
        .check_finite("linear")?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = tensor::leaky_relu(self.value(x), slope);
        let rg = self.rg(x);
        self.push(value, Op::LeakyRelu { x, slope }, rg)
    }

    pub fn elementwise(&mut self, a: Var, b: Var, mode: Elementwise) -> Result<Var> {
        let value = tensor::elementwise(self.value(a), self.value(b), mode)?
            .check_finite("elementwise")?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary { a, b, mode }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, Elementwise::Hadamard)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = tensor::scale(self.value(a), c).check_finite("scale")?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Scale { a, c }, rg))
    }

    /// `a + c * b`
    pub fn add_scaled(&mut self, a: Var, b: Var, c: f64) -> Result<Var> {
        let sb = self.scale(b, c)?;
        self.add(a, sb)
    }

    pub fn segment_reduce(
        &mut self,
        x: Var,
        targets: &Arc<[usize]>,
        n_nodes: usize,
        mode: Reduce,
    ) -> Result<Var> {
        let value = tensor::segment_reduce(self.value(x), targets, n_nodes, mode)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::SegmentReduce {
                x,
                targets: Arc::clone(targets),
                n_nodes,
                mode,
            },
            rg,
        ))
    }

    pub fn edge_diff(
        &mut self,
        x: Var,
        targets: &Arc<[usize]>,
        sources: &Arc<[usize]>,
    ) -> Result<Var> {
        let value = tensor::edge_diff(self.value(x), targets, sources)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::EdgeDiff {
                x,
                targets: Arc::clone(targets),
                sources: Arc::clone(sources),
            },
            rg,
        ))
    }

    pub fn select_cols(&mut self, x: Var, cols: &Arc<[usize]>) -> Result<Var> {
        let value = tensor::select_cols(self.value(x), cols)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::SelectCols {
                x,
                cols: Arc::clone(cols),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
            tensor::concat_cols(&refs)?
        };
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            value,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Scalar `sum((a - target)^2)`.
    pub fn squared_error(&mut self, a: Var, target: Arc<Tensor>) -> Result<Var> {
        let av = self.value(a);
        av.same_shape(&target, "squared_error")?;
        let s: f64 = av
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let value = Tensor::scalar(s).check_finite("squared_error")?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SquaredError { a, target }, rg))
    }

    /// Reverse accumulation from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        if !lv.data()[0].is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &contrib),
                slot @ None => {
                    *slot = Some(contrib.reshape(val(v).shape().to_vec())?);
                    Ok(())
                }
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let wv = val(*w);
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.rg(*x) {
                    let mut gx = vec![0.0; rows * n];
                    for r in 0..rows {
                        let gr = g.row(r);
                        let out = &mut gx[r * n..(r + 1) * n];
                        for (k, &gk) in gr.iter().enumerate() {
                            if gk == 0.0 {
                                continue;
                            }
                            let wk = &wv.data()[k * n..(k + 1) * n];
                            for (o, wkv) in out.iter_mut().zip(wk) {
                                *o += gk * wkv;
                            }
                        }
                    }
                    acc(*x, Tensor::new(xv.shape().to_vec(), gx)?)?;
                }
                if self.rg(*w) {
                    let mut gw = vec![0.0; m * n];
                    for r in 0..rows {
                        let xr = xv.row(r);
                        for (k, &gk) in g.row(r).iter().enumerate() {
                            if gk == 0.0 {
                                continue;
                            }
                            for (o, xj) in gw[k * n..(k + 1) * n].iter_mut().zip(xr) {
                                *o += gk * xj;
                            }
                        }
                    }
                    acc(*w, Tensor::new(vec![m, n], gw)?)?;
                }
                if let Some(b) = b.filter(|b| self.rg(*b)) {
                    let mut gb = vec![0.0; m];
                    for r in 0..rows {
                        for (o, gk) in gb.iter_mut().zip(g.row(r)) {
                            *o += gk;
                        }
                    }
                    acc(b, Tensor::vector(gb))?;
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = val(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gi, xi)| if *xi > 0.0 { *gi } else { slope * gi })
                    .collect();
                acc(*x, Tensor::new(xv.shape().to_vec(), data)?)?;
            }
            Op::Binary { a, b, mode } => match mode {
                Elementwise::Add => {
                    acc(*a, g.clone())?;
                    acc(*b, g.clone())?;
                }
                Elementwise::Sub => {
                    acc(*a, g.clone())?;
                    acc(*b, tensor::scale(g, -1.0))?;
                }
                Elementwise::Hadamard => {
                    if self.rg(*a) {
                        acc(*a, tensor::elementwise(g, val(*b), Elementwise::Hadamard)?)?;
                    }
                    if self.rg(*b) {
                        acc(*b, tensor::elementwise(g, val(*a), Elementwise::Hadamard)?)?;
                    }
                }
            },
            Op::Scale { a, c } => acc(*a, tensor::scale(g, *c))?,
            Op::SegmentReduce {
                x,
                targets,
                n_nodes,
                mode,
            } => {
                let xv = val(*x);
                let d = xv.cols();
                let counts = tensor::segment_counts(targets, *n_nodes)?;
                let mut gx = Vec::with_capacity(targets.len() * d);
                for &t in targets.iter() {
                    let factor = match mode {
                        Reduce::Sum => 1.0,
                        Reduce::Mean => 1.0 / counts[t] as f64,
                    };
                    gx.extend(g.row(t).iter().map(|v| v * factor));
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::EdgeDiff {
                x,
                targets,
                sources,
            } => {
                let xv = val(*x);
                let d = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                for (e, (&t, &s)) in targets.iter().zip(sources.iter()).enumerate() {
                    for (c, gv) in g.row(e).iter().enumerate() {
                        gx[t * d + c] += gv;
                        gx[s * d + c] -= gv;
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::SelectCols { x, cols } => {
                let xv = val(*x);
                let d = xv.cols();
                let mut gx = vec![0.0; xv.len()];
                for r in 0..xv.rows() {
                    for (c, gv) in g.row(r).iter().enumerate() {
                        gx[r * d + cols[c]] += gv;
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::ConcatCols { parts } => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let w = pv.cols();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(p, Tensor::new(pv.shape().to_vec(), gp)?)?;
                    }
                    offset += w;
                }
            }
            Op::SquaredError { a, target } => {
                let av = val(*a);
                let g0 = g.data()[0];
                let data = av
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| 2.0 * g0 * (p - t))
                    .collect();
                acc(*a, Tensor::new(av.shape().to_vec(), data)?)?;
            }
        }
        Ok(())
    }
}
