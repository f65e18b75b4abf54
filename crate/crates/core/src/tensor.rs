//! Dense row-major `f64` tensors and the forward kernels used by the tape.
//!
//! Every kernel here is a pure function over [`Tensor`] values. The tape in
//! [`crate::tape`] records calls to these kernels and supplies the matching
//! vector-Jacobian products.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Build a `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; a 1-D tensor counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Product of the trailing dimensions.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub(crate) fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_finite(self, op: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Hadamard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduce {
    #[default]
    Mean,
    Sum,
}

impl std::str::FromStr for Reduce {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduce::Mean),
            "sum" => Ok(Reduce::Sum),
            other => Err(Error::config(format!(
                "unknown aggregation {other:?} (expected mean|sum)"
            ))),
        }
    }
}

impl fmt::Display for Reduce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduce::Mean => "mean",
            Reduce::Sum => "sum",
        })
    }
}

/// `y_i = W x_i + b` for every row `x_i` of `x`.
pub fn linear_forward(w: &Tensor, b: Option<&Tensor>, x: &Tensor) -> Result<Tensor> {
    if w.shape.len() != 2 {
        return Err(Error::shape("linear", format!("weight must be 2-D, got {:?}", w.shape)));
    }
    let (m, n) = (w.shape[0], w.shape[1]);
    if x.cols() != n {
        return Err(Error::shape(
            "linear",
            format!("weight {m}x{n} applied to input {:?}", x.shape),
        ));
    }
    if let Some(b) = b {
        if b.len() != m {
            return Err(Error::shape("linear", format!("bias length {} != {m}", b.len())));
        }
    }
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows * m);
    for r in 0..rows {
        let xr = x.row(r);
        for k in 0..m {
            let wk = &w.data[k * n..(k + 1) * n];
            let mut acc = b.map_or(0.0, |b| b.data[k]);
            for (wv, xv) in wk.iter().zip(xr) {
                acc += wv * xv;
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![rows, m], out)
}

/// Elementwise `max(x, slope * x)` for `slope` in (0, 1).
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

pub fn elementwise(a: &Tensor, b: &Tensor, mode: Elementwise) -> Result<Tensor> {
    a.same_shape(b, "elementwise")?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| match mode {
            Elementwise::Add => x + y,
            Elementwise::Sub => x - y,
            Elementwise::Hadamard => x * y,
        })
        .collect();
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| c * v)
}

/// Incoming-edge counts per node.
pub fn segment_counts(targets: &[usize], n_nodes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; n_nodes];
    for &t in targets {
        if t >= n_nodes {
            return Err(Error::Index {
                op: "segment_reduce",
                index: t,
                bound: n_nodes,
            });
        }
        counts[t] += 1;
    }
    Ok(counts)
}

/// Reduce message rows onto their target nodes. Rows are accumulated in
/// ascending edge order; nodes without incoming messages get a zero row.
pub fn segment_reduce(
    messages: &Tensor,
    targets: &[usize],
    n_nodes: usize,
    mode: Reduce,
) -> Result<Tensor> {
    if messages.rows() != targets.len() {
        return Err(Error::shape(
            "segment_reduce",
            format!("{} message rows, {} targets", messages.rows(), targets.len()),
        ));
    }
    let counts = segment_counts(targets, n_nodes)?;
    let d = messages.cols();
    let mut out = vec![0.0; n_nodes * d];
    for (e, &t) in targets.iter().enumerate() {
        let src = messages.row(e);
        for (o, v) in out[t * d..(t + 1) * d].iter_mut().zip(src) {
            *o += v;
        }
    }
    if mode == Reduce::Mean {
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                out[i * d..(i + 1) * d].iter_mut().for_each(|v| *v *= inv);
            }
        }
    }
    Tensor::new(vec![n_nodes, d], out)
}

/// Per-edge differences `x[target] - x[source]`.
pub fn edge_diff(x: &Tensor, targets: &[usize], sources: &[usize]) -> Result<Tensor> {
    if targets.len() != sources.len() {
        return Err(Error::shape("edge_diff", "targets and sources differ in length"));
    }
    let n = x.rows();
    let d = x.cols();
    let mut out = Vec::with_capacity(targets.len() * d);
    for (&t, &s) in targets.iter().zip(sources) {
        for &i in &[t, s] {
            if i >= n {
                return Err(Error::Index {
                    op: "edge_diff",
                    index: i,
                    bound: n,
                });
            }
        }
        out.extend(x.row(t).iter().zip(x.row(s)).map(|(a, b)| a - b));
    }
    Tensor::new(vec![targets.len(), d], out)
}

/// Gather columns of a 2-D tensor: `out[r][c] = x[r][cols[c]]`.
pub fn select_cols(x: &Tensor, cols: &[usize]) -> Result<Tensor> {
    let d = x.cols();
    if let Some(&bad) = cols.iter().find(|&&c| c >= d) {
        return Err(Error::Index {
            op: "select_cols",
            index: bad,
            bound: d,
        });
    }
    let rows = x.rows();
    let mut out = Vec::with_capacity(rows * cols.len());
    for r in 0..rows {
        let xr = x.row(r);
        out.extend(cols.iter().map(|&c| xr[c]));
    }
    Tensor::new(vec![rows, cols.len()], out)
}

/// Concatenate 2-D tensors with equal row counts along the column axis.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts.first().map_or(0, |p| p.rows());
    if parts.iter().any(|p| p.rows() != rows) {
        return Err(Error::shape("concat_cols", "row counts differ"));
    }
    let width: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![rows, width], out)
}
