//! Recorded computation graphs with reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only list of primitive tensor operations. Values
//! are computed eagerly as nodes are recorded, so a finished tape holds both
//! the program and its outputs, and node ids are already in topological
//! order. Gradients are produced by [`Tape::grad`], which records the adjoint
//! computation as ordinary nodes on the same tape; a scalar built from
//! gradient nodes can therefore be differentiated again, which is what the
//! second-order meta-gradient paths rely on.
//!
//! Every recording method checks shapes up front and the produced values for
//! finiteness afterwards, so a tape never holds NaN or infinity.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a tape.
pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Rebindable leaf (inputs and parameters).
    Input,
    /// Fixed leaf; never rebound, never differentiated.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// 1 where the argument is positive, else 0. Gradient stops here.
    ReluMask(NodeId),
    Clamp(NodeId, f64, f64),
    /// 1 strictly inside the clamp interval, else 0. Gradient stops here.
    ClampMask(NodeId, f64, f64),
    /// [n,m] + [1,m], the bias-row broadcast.
    AddRow(NodeId, NodeId),
    /// [n,m] - [n,1], column broadcast.
    SubCol(NodeId, NodeId),
    /// [n,m] / [n,1], column broadcast.
    DivCol(NodeId, NodeId),
    /// [n,m] -> [n,1].
    RowSum(NodeId),
    /// [n,m] -> [1,m].
    ColSum(NodeId),
    /// [n,m] -> [n,1]. Not differentiable; used detached inside softmax.
    RowMax(NodeId),
    /// [n,1] -> [n,m].
    BroadcastCol(NodeId, usize),
    /// [1,m] -> [n,m].
    BroadcastRow(NodeId, usize),
    /// scalar -> arbitrary shape.
    BroadcastScalar(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    GatherRows(NodeId, Vec<usize>),
    /// Scatter-add k rows into an [n,m] zero matrix at the given row indices.
    ScatterAddRows(NodeId, Vec<usize>, usize),
    ConcatRows(Vec<NodeId>),
    Reshape(NodeId, Vec<usize>),
    /// Identity value, zero gradient.
    Detach(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::ReluMask(..) => "relu_mask",
            Op::Clamp(..) => "clamp",
            Op::ClampMask(..) => "clamp_mask",
            Op::AddRow(..) => "add_row",
            Op::SubCol(..) => "sub_col",
            Op::DivCol(..) => "div_col",
            Op::RowSum(..) => "row_sum",
            Op::ColSum(..) => "col_sum",
            Op::RowMax(..) => "row_max",
            Op::BroadcastCol(..) => "broadcast_col",
            Op::BroadcastRow(..) => "broadcast_row",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::Reshape(..) => "reshape",
            Op::Detach(..) => "detach",
        }
    }
}

/// Append-only operation record with eagerly computed values.
#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    params: Vec<NodeId>,
}

fn mat_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [n, m] => Ok((*n, *m)),
        other => Err(Error::Shape {
            op,
            expected: "a 2-d tensor".into(),
            actual: format!("{other:?}"),
        }),
    }
}

fn shape_err(op: &'static str, expected: String, actual: &[usize]) -> Error {
    Error::Shape {
        op,
        expected,
        actual: format!("{actual:?}"),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn item(&self, id: NodeId) -> Result<f64> {
        self.values[id].item()
    }

    /// Node ids recorded with [`Tape::param`], in recording order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        self.values[id].shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.ops.push(op);
        self.values.push(value);
        Ok(self.ops.len() - 1)
    }

    /// Rebindable leaf.
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Input, value)
    }

    /// Rebindable leaf registered as a designated parameter.
    pub fn param(&mut self, value: Tensor) -> Result<NodeId> {
        let id = self.push(Op::Input, value)?;
        self.params.push(id);
        Ok(id)
    }

    /// Fixed leaf. Constants are never rebound and carry no gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Constant, value)
    }

    fn elementwise_pair(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(Vec<usize>, usize)> {
        let sa = self.shape_of(a);
        let sb = self.shape_of(b);
        if sa != sb {
            return Err(shape_err(op_name, format!("{sa:?} on both sides"), sb));
        }
        Ok((sa.to_vec(), self.values[a].len()))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, _) = self.elementwise_pair("add", a, b)?;
        let values = self.values[a]
            .values()
            .iter()
            .zip(self.values[b].values())
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), Tensor::new(shape, values)?)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, _) = self.elementwise_pair("sub", a, b)?;
        let values = self.values[a]
            .values()
            .iter()
            .zip(self.values[b].values())
            .map(|(x, y)| x - y)
            .collect();
        self.push(Op::Sub(a, b), Tensor::new(shape, values)?)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, _) = self.elementwise_pair("mul", a, b)?;
        let values = self.values[a]
            .values()
            .iter()
            .zip(self.values[b].values())
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), Tensor::new(shape, values)?)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (shape, _) = self.elementwise_pair("div", a, b)?;
        let values: Vec<f64> = self.values[a]
            .values()
            .iter()
            .zip(self.values[b].values())
            .map(|(x, y)| x / y)
            .collect();
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "div" });
        }
        self.push(Op::Div(a, b), Tensor::new(shape, values)?)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.values[a];
        let out = Tensor::new(t.shape().to_vec(), t.values().iter().map(|v| -v).collect())?;
        self.push(Op::Neg(a), out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let t = &self.values[a];
        let out = Tensor::new(
            t.shape().to_vec(),
            t.values().iter().map(|v| v * c).collect(),
        )?;
        self.push(Op::Scale(a, c), out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = mat_dims("matmul", &self.values[a])?;
        let (k2, m) = mat_dims("matmul", &self.values[b])?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("[{n}, {k}] x [{k}, _]"),
                self.shape_of(b),
            ));
        }
        let mut out = vec![0.0; n * m];
        let av = self.values[a].values();
        let bv = self.values[b].values();
        for i in 0..n {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Op::MatMul(a, b), Tensor::new(vec![n, m], out)?)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("transpose", &self.values[a])?;
        let av = self.values[a].values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av[i * m + j];
            }
        }
        self.push(Op::Transpose(a), Tensor::new(vec![m, n], out)?)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let values: Vec<f64> = self.values[a].values().iter().map(|v| v.exp()).collect();
        let shape = self.shape_of(a).to_vec();
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "exp" });
        }
        self.push(Op::Exp(a), Tensor::new(shape, values)?)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let values: Vec<f64> = self.values[a].values().iter().map(|v| v.ln()).collect();
        let shape = self.shape_of(a).to_vec();
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "log" });
        }
        self.push(Op::Log(a), Tensor::new(shape, values)?)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let values: Vec<f64> = self.values[a].values().iter().map(|v| v.tanh()).collect();
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Tanh(a), Tensor::new(shape, values)?)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let values: Vec<f64> = self.values[a]
            .values()
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect();
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Relu(a), Tensor::new(shape, values)?)
    }

    fn relu_mask(&mut self, a: NodeId) -> Result<NodeId> {
        let values: Vec<f64> = self.values[a]
            .values()
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        let shape = self.shape_of(a).to_vec();
        self.push(Op::ReluMask(a), Tensor::new(shape, values)?)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::Contract(format!(
                "clamp: lower bound {lo} exceeds upper bound {hi}"
            )));
        }
        let values: Vec<f64> = self.values[a]
            .values()
            .iter()
            .map(|&v| v.clamp(lo, hi))
            .collect();
        let shape = self.shape_of(a).to_vec();
        self.push(Op::Clamp(a, lo, hi), Tensor::new(shape, values)?)
    }

    fn clamp_mask(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let values: Vec<f64> = self.values[a]
            .values()
            .iter()
            .map(|&v| if v > lo && v < hi { 1.0 } else { 0.0 })
            .collect();
        let shape = self.shape_of(a).to_vec();
        self.push(Op::ClampMask(a, lo, hi), Tensor::new(shape, values)?)
    }

    /// [n,m] + [1,m]: add a bias row to every row of a matrix.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("add_row", &self.values[a])?;
        let (bn, bm) = mat_dims("add_row", &self.values[b])?;
        if bn != 1 || bm != m {
            return Err(shape_err("add_row", format!("[1, {m}]"), self.shape_of(b)));
        }
        let av = self.values[a].values();
        let bv = self.values[b].values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = av[i * m + j] + bv[j];
            }
        }
        self.push(Op::AddRow(a, b), Tensor::new(vec![n, m], out)?)
    }

    /// [n,m] - [n,1]: subtract a column vector from every column.
    pub fn sub_col(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("sub_col", &self.values[a])?;
        let (cn, cm) = mat_dims("sub_col", &self.values[c])?;
        if cn != n || cm != 1 {
            return Err(shape_err("sub_col", format!("[{n}, 1]"), self.shape_of(c)));
        }
        let av = self.values[a].values();
        let cv = self.values[c].values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = av[i * m + j] - cv[i];
            }
        }
        self.push(Op::SubCol(a, c), Tensor::new(vec![n, m], out)?)
    }

    /// [n,m] / [n,1]: divide every row by its entry of a column vector.
    pub fn div_col(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("div_col", &self.values[a])?;
        let (cn, cm) = mat_dims("div_col", &self.values[c])?;
        if cn != n || cm != 1 {
            return Err(shape_err("div_col", format!("[{n}, 1]"), self.shape_of(c)));
        }
        let av = self.values[a].values();
        let cv = self.values[c].values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = av[i * m + j] / cv[i];
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "div_col" });
        }
        self.push(Op::DivCol(a, c), Tensor::new(vec![n, m], out)?)
    }

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("row_sum", &self.values[a])?;
        let av = self.values[a].values();
        let out: Vec<f64> = (0..n).map(|i| av[i * m..(i + 1) * m].iter().sum()).collect();
        self.push(Op::RowSum(a), Tensor::new(vec![n, 1], out)?)
    }

    pub fn col_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("col_sum", &self.values[a])?;
        let av = self.values[a].values();
        let mut out = vec![0.0; m];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(&av[i * m..(i + 1) * m]) {
                *o += v;
            }
        }
        self.push(Op::ColSum(a), Tensor::new(vec![1, m], out)?)
    }

    /// Row-wise maximum. Not differentiable; intended for the detached
    /// stabilization shift inside softmax.
    pub fn row_max(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = mat_dims("row_max", &self.values[a])?;
        if m == 0 {
            return Err(Error::Contract("row_max of a zero-width matrix".into()));
        }
        let av = self.values[a].values();
        let out: Vec<f64> = (0..n)
            .map(|i| av[i * m..(i + 1) * m].iter().cloned().fold(f64::MIN, f64::max))
            .collect();
        self.push(Op::RowMax(a), Tensor::new(vec![n, 1], out)?)
    }

    pub fn broadcast_col(&mut self, c: NodeId, m: usize) -> Result<NodeId> {
        let (n, cm) = mat_dims("broadcast_col", &self.values[c])?;
        if cm != 1 {
            return Err(shape_err(
                "broadcast_col",
                format!("[{n}, 1]"),
                self.shape_of(c),
            ));
        }
        let cv = self.values[c].values();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = cv[i];
            }
        }
        self.push(Op::BroadcastCol(c, m), Tensor::new(vec![n, m], out)?)
    }

    pub fn broadcast_row(&mut self, r: NodeId, n: usize) -> Result<NodeId> {
        let (rn, m) = mat_dims("broadcast_row", &self.values[r])?;
        if rn != 1 {
            return Err(shape_err(
                "broadcast_row",
                format!("[1, {m}]"),
                self.shape_of(r),
            ));
        }
        let rv = self.values[r].values().to_vec();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(&rv);
        }
        self.push(Op::BroadcastRow(r, n), Tensor::new(vec![n, m], out)?)
    }

    pub fn broadcast_scalar(&mut self, s: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.values[s].item().map_err(|_| {
            shape_err("broadcast_scalar", "a scalar".into(), self.shape_of(s))
        })?;
        let out = Tensor::full(shape.clone(), v);
        self.push(Op::BroadcastScalar(s, shape), out)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v: f64 = self.values[a].values().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(v))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.values[a];
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let v: f64 = t.values().iter().sum::<f64>() / t.len() as f64;
        self.push(Op::Mean(a), Tensor::scalar(v))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let (n, m) = mat_dims("gather_rows", &self.values[a])?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Contract(format!(
                "gather_rows: row index {bad} out of range for {n} rows"
            )));
        }
        let av = self.values[a].values();
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in &idx {
            out.extend_from_slice(&av[i * m..(i + 1) * m]);
        }
        let k = idx.len();
        self.push(Op::GatherRows(a, idx), Tensor::new(vec![k, m], out)?)
    }

    pub fn scatter_add_rows(&mut self, v: NodeId, idx: Vec<usize>, n: usize) -> Result<NodeId> {
        let (k, m) = mat_dims("scatter_add_rows", &self.values[v])?;
        if idx.len() != k {
            return Err(Error::Contract(format!(
                "scatter_add_rows: {k} rows but {} indices",
                idx.len()
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Contract(format!(
                "scatter_add_rows: target row {bad} out of range for {n} rows"
            )));
        }
        let vv = self.values[v].values();
        let mut out = vec![0.0; n * m];
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..m {
                out[i * m + j] += vv[r * m + j];
            }
        }
        self.push(Op::ScatterAddRows(v, idx, n), Tensor::new(vec![n, m], out)?)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let (_, m) = mat_dims("concat_rows", &self.values[parts[0]])?;
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let (pn, pm) = mat_dims("concat_rows", &self.values[p])?;
            if pm != m {
                return Err(shape_err(
                    "concat_rows",
                    format!("[_, {m}]"),
                    self.shape_of(p),
                ));
            }
            n += pn;
            out.extend_from_slice(self.values[p].values());
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::new(vec![n, m], out)?)
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let t = &self.values[a];
        let expected: usize = shape.iter().product();
        if expected != t.len() {
            return Err(shape_err(
                "reshape",
                format!("{} elements", t.len()),
                &shape,
            ));
        }
        let out = Tensor::new(shape.clone(), t.values().to_vec())?;
        self.push(Op::Reshape(a, shape), out)
    }

    /// Identity in value; stops gradient flow.
    pub fn detach(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.values[a].clone();
        self.push(Op::Detach(a), out)
    }

    // --- composites -------------------------------------------------------

    /// Row-wise softmax with max-subtraction for stability.
    ///
    /// The shift is detached: softmax is invariant to it, so treating it as
    /// a constant leaves the derivative exact.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let mx = self.row_max(x)?;
        let mx = self.detach(mx)?;
        let shifted = self.sub_col(x, mx)?;
        let e = self.exp(shifted)?;
        let s = self.row_sum(e)?;
        self.div_col(e, s)
    }

    /// Row-wise log-softmax with max-subtraction.
    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let mx = self.row_max(x)?;
        let mx = self.detach(mx)?;
        let shifted = self.sub_col(x, mx)?;
        let e = self.exp(shifted)?;
        let s = self.row_sum(e)?;
        let ls = self.log(s)?;
        self.sub_col(shifted, ls)
    }

    /// Sum of the elementwise product, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let m = self.mul(a, b)?;
        self.sum(m)
    }

    // --- differentiation --------------------------------------------------

    /// Record the adjoint computation for a scalar `root` and return one
    /// gradient node per entry of `wrt`, each with the shape of its leaf.
    ///
    /// The gradients are ordinary nodes, so they can feed further recorded
    /// computation (and be differentiated again).
    pub fn grad(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        if !self.values[root].is_scalar() {
            return Err(Error::Contract(format!(
                "grad root must be scalar, got shape {:?}",
                self.shape_of(root)
            )));
        }
        let mut adj: Vec<Option<NodeId>> = vec![None; root + 1];
        let seed_shape = self.shape_of(root).to_vec();
        let seed = self.constant(Tensor::full(seed_shape, 1.0))?;
        adj[root] = Some(seed);

        for id in (0..=root).rev() {
            let Some(g) = adj[id] else { continue };
            let op = self.ops[id].clone();
            match op {
                Op::Input | Op::Constant | Op::Detach(_) | Op::RowMax(_)
                | Op::ReluMask(_) | Op::ClampMask(..) => {}
                Op::Add(a, b) => {
                    self.acc(&mut adj, a, g)?;
                    self.acc(&mut adj, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.acc(&mut adj, a, g)?;
                    let ng = self.neg(g)?;
                    self.acc(&mut adj, b, ng)?;
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(g, b)?;
                    self.acc(&mut adj, a, ga)?;
                    let gb = self.mul(g, a)?;
                    self.acc(&mut adj, b, gb)?;
                }
                Op::Div(a, b) => {
                    let ga = self.div(g, b)?;
                    self.acc(&mut adj, a, ga)?;
                    let num = self.mul(g, a)?;
                    let den = self.mul(b, b)?;
                    let q = self.div(num, den)?;
                    let gb = self.neg(q)?;
                    self.acc(&mut adj, b, gb)?;
                }
                Op::Neg(a) => {
                    let ga = self.neg(g)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Scale(a, c) => {
                    let ga = self.scale(g, c)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::MatMul(a, b) => {
                    let bt = self.transpose(b)?;
                    let ga = self.matmul(g, bt)?;
                    self.acc(&mut adj, a, ga)?;
                    let at = self.transpose(a)?;
                    let gb = self.matmul(at, g)?;
                    self.acc(&mut adj, b, gb)?;
                }
                Op::Transpose(a) => {
                    let ga = self.transpose(g)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Exp(a) => {
                    let ga = self.mul(g, id)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Log(a) => {
                    let ga = self.div(g, a)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Tanh(a) => {
                    let one = self.constant(Tensor::full(self.shape_of(id).to_vec(), 1.0))?;
                    let y2 = self.mul(id, id)?;
                    let d = self.sub(one, y2)?;
                    let ga = self.mul(g, d)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Relu(a) => {
                    let mask = self.relu_mask(a)?;
                    let ga = self.mul(g, mask)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let mask = self.clamp_mask(a, lo, hi)?;
                    let ga = self.mul(g, mask)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::AddRow(a, b) => {
                    self.acc(&mut adj, a, g)?;
                    let gb = self.col_sum(g)?;
                    self.acc(&mut adj, b, gb)?;
                }
                Op::SubCol(a, c) => {
                    self.acc(&mut adj, a, g)?;
                    let rs = self.row_sum(g)?;
                    let gc = self.neg(rs)?;
                    self.acc(&mut adj, c, gc)?;
                }
                Op::DivCol(a, c) => {
                    let ga = self.div_col(g, c)?;
                    self.acc(&mut adj, a, ga)?;
                    let prod = self.mul(g, a)?;
                    let rs = self.row_sum(prod)?;
                    let q1 = self.div(rs, c)?;
                    let q2 = self.div(q1, c)?;
                    let gc = self.neg(q2)?;
                    self.acc(&mut adj, c, gc)?;
                }
                Op::RowSum(a) => {
                    let m = self.shape_of(a)[1];
                    let ga = self.broadcast_col(g, m)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::ColSum(a) => {
                    let n = self.shape_of(a)[0];
                    let ga = self.broadcast_row(g, n)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::BroadcastCol(c, _) => {
                    let gc = self.row_sum(g)?;
                    self.acc(&mut adj, c, gc)?;
                }
                Op::BroadcastRow(r, _) => {
                    let gr = self.col_sum(g)?;
                    self.acc(&mut adj, r, gr)?;
                }
                Op::BroadcastScalar(s, _) => {
                    let gs = self.sum(g)?;
                    self.acc(&mut adj, s, gs)?;
                }
                Op::Sum(a) => {
                    let shape = self.shape_of(a).to_vec();
                    let ga = self.broadcast_scalar(g, shape)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::Mean(a) => {
                    let shape = self.shape_of(a).to_vec();
                    let len = self.values[a].len() as f64;
                    let b = self.broadcast_scalar(g, shape)?;
                    let ga = self.scale(b, 1.0 / len)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::GatherRows(a, idx) => {
                    let n = self.shape_of(a)[0];
                    let ga = self.scatter_add_rows(g, idx, n)?;
                    self.acc(&mut adj, a, ga)?;
                }
                Op::ScatterAddRows(v, idx, _) => {
                    let gv = self.gather_rows(g, idx)?;
                    self.acc(&mut adj, v, gv)?;
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let pn = self.shape_of(p)[0];
                        let idx: Vec<usize> = (offset..offset + pn).collect();
                        let gp = self.gather_rows(g, idx)?;
                        offset += pn;
                        self.acc(&mut adj, p, gp)?;
                    }
                }
                Op::Reshape(a, _) => {
                    let shape = self.shape_of(a).to_vec();
                    let ga = self.reshape(g, shape)?;
                    self.acc(&mut adj, a, ga)?;
                }
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            match adj.get(w).copied().flatten() {
                Some(gnode) => out.push(gnode),
                None => {
                    let zero = Tensor::zeros(self.shape_of(w).to_vec());
                    out.push(self.constant(zero)?);
                }
            }
        }
        Ok(out)
    }

    /// Gradient values of a scalar root for the designated parameter leaves.
    pub fn grad_params(&mut self, root: NodeId) -> Result<Vec<Tensor>> {
        let wrt = self.params.clone();
        self.grad_tensors(root, &wrt)
    }

    /// Like [`Tape::grad`], returning the gradient values directly.
    pub fn grad_tensors(&mut self, root: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let nodes = self.grad(root, wrt)?;
        Ok(nodes.into_iter().map(|n| self.values[n].clone()).collect())
    }

    fn acc(&mut self, adj: &mut [Option<NodeId>], target: NodeId, contrib: NodeId) -> Result<()> {
        // Constants and gradient stops never feed anything differentiable,
        // so skip materializing their adjoints.
        if matches!(
            self.ops[target],
            Op::Constant | Op::Detach(_) | Op::RowMax(_) | Op::ReluMask(_) | Op::ClampMask(..)
        ) {
            return Ok(());
        }
        adj[target] = Some(match adj[target] {
            None => contrib,
            Some(existing) => self.add(existing, contrib)?,
        });
        Ok(())
    }

    // --- replay -----------------------------------------------------------

    /// Recompute every node with some leaves rebound, without mutating the
    /// tape. Bindings must target `input`/`param` leaves and match shapes;
    /// unbound leaves keep their recorded values.
    pub fn replay(&self, bindings: &[(NodeId, Tensor)]) -> Result<Vec<Tensor>> {
        let mut bound: Vec<Option<&Tensor>> = vec![None; self.ops.len()];
        for (id, t) in bindings {
            if !matches!(self.ops[*id], Op::Input) {
                return Err(Error::Contract(format!(
                    "replay binding for node {id} which is not a rebindable leaf"
                )));
            }
            if t.shape() != self.values[*id].shape() {
                return Err(Error::Shape {
                    op: "replay",
                    expected: format!("{:?}", self.values[*id].shape()),
                    actual: format!("{:?}", t.shape()),
                });
            }
            bound[*id] = Some(t);
        }
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.ops.len());
        for (id, op) in self.ops.iter().enumerate() {
            let v = match op {
                Op::Input => match bound[id] {
                    Some(t) => t.clone(),
                    None => self.values[id].clone(),
                },
                Op::Constant => self.values[id].clone(),
                _ => eval_op(op, &vals)?,
            };
            if !v.is_finite() {
                return Err(Error::NonFinite { op: op.name() });
            }
            vals.push(v);
        }
        Ok(vals)
    }

    /// Replay and return the value of one node (typically the root).
    pub fn replay_node(&self, bindings: &[(NodeId, Tensor)], node: NodeId) -> Result<Tensor> {
        let vals = self.replay(bindings)?;
        Ok(vals[node].clone())
    }
}

/// Recompute one op from already-replayed values. Shapes were validated at
/// record time, so this only redoes arithmetic.
fn eval_op(op: &Op, vals: &[Tensor]) -> Result<Tensor> {
    let v = |id: NodeId| -> &Tensor { &vals[id] };
    let ew = |a: &Tensor, b: &Tensor, f: fn(f64, f64) -> f64| -> Result<Tensor> {
        Tensor::new(
            a.shape().to_vec(),
            a.values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| f(*x, *y))
                .collect(),
        )
    };
    let map = |a: &Tensor, f: &dyn Fn(f64) -> f64| -> Result<Tensor> {
        Tensor::new(a.shape().to_vec(), a.values().iter().map(|x| f(*x)).collect())
    };
    match op {
        Op::Input | Op::Constant => unreachable!("leaves handled by caller"),
        Op::Add(a, b) => ew(v(*a), v(*b), |x, y| x + y),
        Op::Sub(a, b) => ew(v(*a), v(*b), |x, y| x - y),
        Op::Mul(a, b) => ew(v(*a), v(*b), |x, y| x * y),
        Op::Div(a, b) => ew(v(*a), v(*b), |x, y| x / y),
        Op::Neg(a) => map(v(*a), &|x| -x),
        Op::Scale(a, c) => {
            let c = *c;
            map(v(*a), &move |x| x * c)
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (v(*a), v(*b));
            let (n, k) = (ta.rows(), ta.cols());
            let m = tb.cols();
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for p in 0..k {
                    let x = ta.values()[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    for j in 0..m {
                        out[i * m + j] += x * tb.values()[p * m + j];
                    }
                }
            }
            Tensor::new(vec![n, m], out)
        }
        Op::Transpose(a) => {
            let t = v(*a);
            let (n, m) = (t.rows(), t.cols());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    out[j * n + i] = t.values()[i * m + j];
                }
            }
            Tensor::new(vec![m, n], out)
        }
        Op::Exp(a) => map(v(*a), &f64::exp),
        Op::Log(a) => map(v(*a), &f64::ln),
        Op::Tanh(a) => map(v(*a), &f64::tanh),
        Op::Relu(a) => map(v(*a), &|x| if x > 0.0 { x } else { 0.0 }),
        Op::ReluMask(a) => map(v(*a), &|x| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            map(v(*a), &move |x| x.clamp(lo, hi))
        }
        Op::ClampMask(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            map(v(*a), &move |x| if x > lo && x < hi { 1.0 } else { 0.0 })
        }
        Op::AddRow(a, b) => {
            let (ta, tb) = (v(*a), v(*b));
            let (n, m) = (ta.rows(), ta.cols());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    out[i * m + j] = ta.values()[i * m + j] + tb.values()[j];
                }
            }
            Tensor::new(vec![n, m], out)
        }
        Op::SubCol(a, c) => {
            let (ta, tc) = (v(*a), v(*c));
            let (n, m) = (ta.rows(), ta.cols());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    out[i * m + j] = ta.values()[i * m + j] - tc.values()[i];
                }
            }
            Tensor::new(vec![n, m], out)
        }
        Op::DivCol(a, c) => {
            let (ta, tc) = (v(*a), v(*c));
            let (n, m) = (ta.rows(), ta.cols());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    out[i * m + j] = ta.values()[i * m + j] / tc.values()[i];
                }
            }
            Tensor::new(vec![n, m], out)
        }
        Op::RowSum(a) => {
            let t = v(*a);
            let (n, m) = (t.rows(), t.cols());
            let out: Vec<f64> = (0..n)
                .map(|i| t.values()[i * m..(i + 1) * m].iter().sum())
                .collect();
            Tensor::new(vec![n, 1], out)
        }
        Op::ColSum(a) => {
            let t = v(*a);
            let (n, m) = (t.rows(), t.cols());
            let mut out = vec![0.0; m];
            for i in 0..n {
                for (o, x) in out.iter_mut().zip(&t.values()[i * m..(i + 1) * m]) {
                    *o += x;
                }
            }
            Tensor::new(vec![1, m], out)
        }
        Op::RowMax(a) => {
            let t = v(*a);
            let (n, m) = (t.rows(), t.cols());
            let out: Vec<f64> = (0..n)
                .map(|i| {
                    t.values()[i * m..(i + 1) * m]
                        .iter()
                        .cloned()
                        .fold(f64::MIN, f64::max)
                })
                .collect();
            Tensor::new(vec![n, 1], out)
        }
        Op::BroadcastCol(c, m) => {
            let t = v(*c);
            let n = t.rows();
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..*m {
                    out[i * m + j] = t.values()[i];
                }
            }
            Tensor::new(vec![n, *m], out)
        }
        Op::BroadcastRow(r, n) => {
            let t = v(*r);
            let m = t.cols();
            let mut out = Vec::with_capacity(n * m);
            for _ in 0..*n {
                out.extend_from_slice(t.values());
            }
            Tensor::new(vec![*n, m], out)
        }
        Op::BroadcastScalar(s, shape) => Ok(Tensor::full(shape.clone(), v(*s).values()[0])),
        Op::Sum(a) => Ok(Tensor::scalar(v(*a).values().iter().sum())),
        Op::Mean(a) => {
            let t = v(*a);
            Ok(Tensor::scalar(
                t.values().iter().sum::<f64>() / t.len() as f64,
            ))
        }
        Op::GatherRows(a, idx) => {
            let t = v(*a);
            let m = t.cols();
            let mut out = Vec::with_capacity(idx.len() * m);
            for &i in idx {
                out.extend_from_slice(&t.values()[i * m..(i + 1) * m]);
            }
            Tensor::new(vec![idx.len(), m], out)
        }
        Op::ScatterAddRows(val, idx, n) => {
            let t = v(*val);
            let m = t.cols();
            let mut out = vec![0.0; n * m];
            for (r, &i) in idx.iter().enumerate() {
                for j in 0..m {
                    out[i * m + j] += t.values()[r * m + j];
                }
            }
            Tensor::new(vec![*n, m], out)
        }
        Op::ConcatRows(parts) => {
            let m = v(parts[0]).cols();
            let mut out = Vec::new();
            let mut n = 0;
            for &p in parts {
                n += v(p).rows();
                out.extend_from_slice(v(p).values());
            }
            Tensor::new(vec![n, m], out)
        }
        Op::Reshape(a, shape) => Tensor::new(shape.clone(), v(*a).values().to_vec()),
        Op::Detach(a) => Ok(v(*a).clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::new(shape, values).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1, 2], vec![1.0, 2.0])).unwrap();
        let b = tape.constant(t(vec![2, 1], vec![3.0, 4.0])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1, 2], vec![1.0, 2.0])).unwrap();
        let b = tape.constant(t(vec![3, 1], vec![3.0, 4.0, 5.0])).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[3, 1]"), "{msg}");
    }

    #[test]
    fn softmax_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(vec![1, 2], vec![0.0, 0.0])).unwrap();
        let s = tape.softmax_rows(x).unwrap();
        assert_eq!(tape.value(s).values(), &[0.5, 0.5]);
    }

    #[test]
    fn log_exp_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(t(vec![1, 3], vec![-1.0, 0.0, 2.0])).unwrap();
        let e = tape.exp(x).unwrap();
        let l = tape.log(e).unwrap();
        for (got, want) in tape.value(l).values().iter().zip([-1.0, 0.0, 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn overflow_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(vec![1], vec![1000.0])).unwrap();
        assert!(matches!(tape.exp(x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn grad_of_square() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let g = tape.grad_tensors(y, &[x]).unwrap();
        assert_eq!(g[0].values(), &[6.0]);
    }

    #[test]
    fn grad_of_softmax_dot() {
        // f(w) = softmax(w) . c at w = [0,0], c = [1,0] has gradient
        // [0.25, -0.25] from the softmax Jacobian at the uniform point.
        let mut tape = Tape::new();
        let w = tape.param(t(vec![1, 2], vec![0.0, 0.0])).unwrap();
        let c = tape.constant(t(vec![1, 2], vec![1.0, 0.0])).unwrap();
        let s = tape.softmax_rows(w).unwrap();
        let f = tape.dot(s, c).unwrap();
        let g = tape.grad_tensors(f, &[w]).unwrap();
        assert_abs_diff_eq!(g[0].values()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(g[0].values()[1], -0.25, epsilon = 1e-12);
    }

    #[test]
    fn grad_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.param(t(vec![1, 2], vec![1.0, 2.0])).unwrap();
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(tape.grad(y, &[x]), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0)).unwrap();
        let unused = tape.param(t(vec![2, 2], vec![1.0; 4])).unwrap();
        let y = tape.mul(x, x).unwrap();
        let g = tape.grad_tensors(y, &[x, unused]).unwrap();
        assert_eq!(g[1].shape(), &[2, 2]);
        assert!(g[1].values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_accumulation_is_linear() {
        // grad(a*f + b*g) = a*grad(f) + b*grad(g)
        let build = |tape: &mut Tape| -> (NodeId, NodeId, NodeId) {
            let x = tape.param(t(vec![1, 2], vec![0.7, -0.3])).unwrap();
            let e = tape.exp(x).unwrap();
            let f = tape.sum(e).unwrap();
            let xx = tape.mul(x, x).unwrap();
            let g = tape.sum(xx).unwrap();
            (x, f, g)
        };
        let (a, b) = (2.5, -1.25);

        let mut tape = Tape::new();
        let (x, f, g) = build(&mut tape);
        let sf = tape.scale(f, a).unwrap();
        let sg = tape.scale(g, b).unwrap();
        let combined = tape.add(sf, sg).unwrap();
        let gc = tape.grad_tensors(combined, &[x]).unwrap();

        let mut tape2 = Tape::new();
        let (x2, f2, g2) = build(&mut tape2);
        let gf = tape2.grad_tensors(f2, &[x2]).unwrap();
        let gg = tape2.grad_tensors(g2, &[x2]).unwrap();

        for i in 0..2 {
            let want = a * gf[0].values()[i] + b * gg[0].values()[i];
            assert_abs_diff_eq!(gc[0].values()[i], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn replay_reproduces_recorded_values_bit_exactly() {
        let mut tape = Tape::new();
        let x = tape.param(t(vec![2, 2], vec![0.3, -1.2, 0.9, 2.0])).unwrap();
        let w = tape.param(t(vec![2, 2], vec![0.1, 0.2, -0.4, 0.5])).unwrap();
        let h = tape.matmul(x, w).unwrap();
        let th = tape.tanh(h).unwrap();
        let s = tape.softmax_rows(th).unwrap();
        let root = tape.sum(s).unwrap();
        let vals = tape.replay(&[]).unwrap();
        for (id, val) in vals.iter().enumerate() {
            assert_eq!(val.values(), tape.value(id).values(), "node {id}");
        }
        let _ = root;
    }

    #[test]
    fn replay_rebinds_inputs() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(2.0)).unwrap();
        let y = tape.mul(x, x).unwrap();
        let out = tape.replay_node(&[(x, Tensor::scalar(5.0))], y).unwrap();
        assert_eq!(out.values(), &[25.0]);
        // the tape itself is untouched
        assert_eq!(tape.value(y).values(), &[4.0]);
    }

    #[test]
    fn replay_rejects_binding_to_constant() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0)).unwrap();
        assert!(tape.replay(&[(c, Tensor::scalar(2.0))]).is_err());
    }

    #[test]
    fn second_order_through_recorded_gradient() {
        // f(x) = x^3; f'(x) = 3x^2; f''(x) = 6x. Differentiate the recorded
        // gradient node again.
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0)).unwrap();
        let x2 = tape.mul(x, x).unwrap();
        let x3 = tape.mul(x2, x).unwrap();
        let g = tape.grad(x3, &[x]).unwrap()[0];
        assert_abs_diff_eq!(tape.item(g).unwrap(), 12.0, epsilon = 1e-12);
        let gg = tape.grad_tensors(g, &[x]).unwrap();
        assert_abs_diff_eq!(gg[0].values()[0], 12.0, epsilon = 1e-12);
    }

    #[test]
    fn concat_and_gather_roundtrip_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(t(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = tape.param(t(vec![1, 2], vec![5.0, 6.0])).unwrap();
        let cat = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[3, 2]);
        let picked = tape.gather_rows(cat, vec![2, 0]).unwrap();
        let s = tape.sum(picked).unwrap();
        let g = tape.grad_tensors(s, &[a, b]).unwrap();
        assert_eq!(g[0].values(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(g[1].values(), &[1.0, 1.0]);
    }
}
