use super::Tensor;
use crate::error::{Error, Result};

/// Negative-side slope of every leaky ReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Smallest argument passed to `log` by the clamped logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Reshape(Var),
    LeakyRelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    LogClamped(Var),
    Pick(Var, Vec<usize>),
    SelectRows(Var, Vec<usize>),
    RoiPool { input: Var, argmax: Vec<usize> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation. Records are appended in evaluation order, which is
/// therefore a topological order; [`Graph::backward`] visits them in reverse.
#[derive(Default, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Branch decisions taken at non-differentiable points (leaky-relu and abs
    /// signs, pooling argmaxes, log clamps). Two evaluations with equal
    /// signatures are on the same smooth piece.
    kinks: Vec<u64>,
}

/// Gradients of a scalar with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Whether any gradient flowed into `v`.
    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn kink_signature(&self) -> &[u64] {
        &self.kinks
    }

    fn push(&mut self, op: &'static str, value: Tensor, record: Op, parents: &[Var]) -> Result<Var> {
        check_finite(op, &value)?;
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op: record,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone(), true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf(t.clone(), false)
    }

    pub fn constant_owned(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    fn leaf(&mut self, t: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = match (ta.rows_cols(), tb.rows_cols()) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?} (rank 2 required)", ta.shape(), tb.shape()),
                ))
            }
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value, rec, &[a, b])
    }

    fn map(&mut self, op: &'static str, a: Var, f: impl Fn(f64) -> f64, rec: Op) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, value, rec, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`m` vector to every row of an `[n, m]` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let Some((_, m)) = tx.rows_cols() else {
            return Err(Error::shape(
                "add_bias",
                format!("input {:?} is not rank 2", tx.shape()),
            ));
        };
        if tb.shape() != [m] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} vs rows of width {m}", tb.shape()),
            ));
        }
        let b = tb.data();
        let data = tx
            .data()
            .chunks(m)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let lead = {
            let s = self.shape(*first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        if lead.len() + 1 != self.shape(*first).len() {
            return Err(Error::shape("concat", "scalar input"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(Error::shape("concat", format!("{:?} vs leading {:?}", s, lead)));
            }
            widths.push(s[lead.len()]);
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, data)?;
        self.push("concat", value, Op::Concat(parts.to_vec()), parts)
    }

    /// Stacks vectors (or matrices) of equal width into one matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("stack_rows", "no inputs"));
        }
        let width = |s: &[usize]| match s {
            [m] => Some((1, *m)),
            [n, m] => Some((*n, *m)),
            _ => None,
        };
        let (_, m) =
            width(self.shape(parts[0])).ok_or_else(|| Error::shape("stack_rows", "inputs must be rank 1 or 2"))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            match width(self.shape(*p)) {
                Some((n, mm)) if mm == m => {
                    rows += n;
                    data.extend_from_slice(self.value(*p).data());
                }
                _ => return Err(Error::shape("stack_rows", format!("{:?} vs width {m}", self.shape(*p)))),
            }
        }
        let value = Tensor::new(vec![rows, m], data)?;
        self.push("stack_rows", value, Op::StackRows(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self
            .value(a)
            .reshaped(shape)
            .map_err(|e| Error::shape("reshape", e.to_string()))?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let kinks = self.nodes[a.0].value.data().iter().map(|x| (*x >= 0.0) as u64);
        self.kinks.extend(kinks);
        self.map(
            "leaky_relu",
            a,
            |x| if x >= 0.0 { x } else { LEAKY_SLOPE * x },
            Op::LeakyRelu(a),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let w = match ta.shape().last() {
            Some(&w) if w > 0 => w,
            _ => {
                return Err(Error::Domain {
                    op: "softmax",
                    detail: "softmax over an empty axis".into(),
                })
            }
        };
        let mut data = Vec::with_capacity(ta.numel());
        for row in ta.data().chunks(w) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut z = 0.0;
            for v in row {
                let e = (v - max).exp();
                z += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= z;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let kinks = self.nodes[a.0].value.data().iter().map(|x| (*x >= 0.0) as u64);
        self.kinks.extend(kinks);
        self.map("abs", a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map("square", a, |x| x * x, Op::Square(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Column means of an `[n, m]` matrix, giving a length-`m` vector.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let Some((n, m)) = t.rows_cols() else {
            return Err(Error::shape("mean_rows", format!("{:?} is not rank 2", t.shape())));
        };
        let mut out = vec![0.0; m];
        for row in t.data().chunks(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        self.push("mean_rows", Tensor::vector(out), Op::MeanRows(a), &[a])
    }

    /// `ln(max(x, LOG_FLOOR))`; clamped entries pass no gradient.
    pub fn log_clamped(&mut self, a: Var) -> Result<Var> {
        let kinks = self.nodes[a.0].value.data().iter().map(|x| (*x > LOG_FLOOR) as u64);
        self.kinks.extend(kinks);
        self.map("log", a, |x| x.max(LOG_FLOOR).ln(), Op::LogClamped(a))
    }

    /// Picks `x[i, index[i]]` from every row of an `[n, m]` matrix.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let Some((n, m)) = t.rows_cols() else {
            return Err(Error::shape("pick", format!("{:?} is not rank 2", t.shape())));
        };
        if index.len() != n {
            return Err(Error::shape("pick", format!("{} indices for {n} rows", index.len())));
        }
        if let Some(bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::Contract(format!("pick index {bad} outside 0..{m}")));
        }
        let data = index.iter().enumerate().map(|(r, &c)| t.data()[r * m + c]).collect();
        self.push("pick", Tensor::vector(data), Op::Pick(a, index.to_vec()), &[a])
    }

    /// Gathers rows of an `[n, m]` matrix (repeats allowed) into `[k, m]`.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let Some((n, m)) = t.rows_cols() else {
            return Err(Error::shape("select_rows", format!("{:?} is not rank 2", t.shape())));
        };
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::shape(
                "select_rows",
                format!("row selection {rows:?} out of 0..{n}"),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(vec![rows.len(), m], data)?;
        self.push("select_rows", value, Op::SelectRows(a, rows.to_vec()), &[a])
    }

    /// Records a gather: output entry `o` is input entry `source[o]`.
    /// Used by RoI max pooling, whose argmax cells are found by the caller.
    pub(crate) fn gather_max(&mut self, input: Var, source: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let data = source.iter().map(|&i| self.value(input).data()[i]).collect();
        self.kinks.extend(source.iter().map(|&i| i as u64));
        let value = Tensor::new(shape, data)?;
        self.push("roi_pool", value, Op::RoiPool { input, argmax: source }, &[input])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.nodes[a.0].value.rows_cols().unwrap();
                let (_, m) = self.nodes[b.0].value.rows_cols().unwrap();
                if wants(*a) {
                    let bd = val(*b);
                    acc(*a, &mut |ga| {
                        for i in 0..n {
                            let urow = &up[i * m..(i + 1) * m];
                            for kk in 0..k {
                                let brow = &bd[kk * m..(kk + 1) * m];
                                ga[i * k + kk] += dot(urow, brow);
                            }
                        }
                    });
                }
                if wants(*b) {
                    let ad = val(*a);
                    acc(*b, &mut |gb| {
                        for i in 0..n {
                            let urow = &up[i * m..(i + 1) * m];
                            for kk in 0..k {
                                let s = ad[i * k + kk];
                                if s != 0.0 {
                                    axpy(s, urow, &mut gb[kk * m..(kk + 1) * m]);
                                }
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| axpy(1.0, up, g));
                acc(*b, &mut |g| axpy(1.0, up, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| axpy(1.0, up, g));
                acc(*b, &mut |g| axpy(-1.0, up, g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((gi, u), y) in g.iter_mut().zip(up).zip(bd) {
                        *gi += u * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, u), x) in g.iter_mut().zip(up).zip(ad) {
                        *gi += u * x;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |g| axpy(1.0, up, g));
                let m = self.nodes[b.0].value.numel();
                acc(*b, &mut |g| {
                    for row in up.chunks(m) {
                        axpy(1.0, row, g);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |g| axpy(*s, up, g)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |g| axpy(1.0, up, g)),
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts
                    .iter()
                    .map(|p| *self.nodes[p.0].value.shape().last().unwrap())
                    .collect();
                let total: usize = widths.iter().sum();
                let rows = up.len() / total;
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    acc(*p, &mut |g| {
                        for r in 0..rows {
                            axpy(
                                1.0,
                                &up[r * total + offset..r * total + offset + w],
                                &mut g[r * w..(r + 1) * w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.numel();
                    acc(*p, &mut |g| axpy(1.0, &up[offset..offset + n], g));
                    offset += n;
                }
            }
            Op::LeakyRelu(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, u), xi) in g.iter_mut().zip(up).zip(x) {
                        *gi += if *xi >= 0.0 { *u } else { LEAKY_SLOPE * u };
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &mut |g| {
                    for ((gi, u), yi) in g.iter_mut().zip(up).zip(y) {
                        *gi += u * yi * (1.0 - yi);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let w = *node.value.shape().last().unwrap();
                acc(*a, &mut |g| {
                    for ((grow, urow), yrow) in g.chunks_mut(w).zip(up.chunks(w)).zip(y.chunks(w)) {
                        let d = dot(urow, yrow);
                        for ((gi, u), yi) in grow.iter_mut().zip(urow).zip(yrow) {
                            *gi += yi * (u - d);
                        }
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, u), xi) in g.iter_mut().zip(up).zip(x) {
                        *gi += if *xi >= 0.0 { *u } else { -u };
                    }
                });
            }
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, u), xi) in g.iter_mut().zip(up).zip(x) {
                        *gi += 2.0 * xi * u;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|gi| *gi += up[0])),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.numel() as f64;
                acc(*a, &mut |g| g.iter_mut().for_each(|gi| *gi += up[0] / n));
            }
            Op::MeanRows(a) => {
                let (n, m) = self.nodes[a.0].value.rows_cols().unwrap();
                acc(*a, &mut |g| {
                    for row in g.chunks_mut(m) {
                        axpy(1.0 / n as f64, up, row);
                    }
                });
            }
            Op::LogClamped(a) => {
                let x = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, u), xi) in g.iter_mut().zip(up).zip(x) {
                        if *xi > LOG_FLOOR {
                            *gi += u / xi;
                        }
                    }
                });
            }
            Op::Pick(a, index) => {
                let (_, m) = self.nodes[a.0].value.rows_cols().unwrap();
                acc(*a, &mut |g| {
                    for (r, &c) in index.iter().enumerate() {
                        g[r * m + c] += up[r];
                    }
                });
            }
            Op::SelectRows(a, rows) => {
                let (_, m) = self.nodes[a.0].value.rows_cols().unwrap();
                acc(*a, &mut |g| {
                    for (o, &r) in rows.iter().enumerate() {
                        axpy(1.0, &up[o * m..(o + 1) * m], &mut g[r * m..(r + 1) * m]);
                    }
                });
            }
            Op::RoiPool { input, argmax } => {
                acc(*input, &mut |g| {
                    for (o, &src) in argmax.iter().enumerate() {
                        g[src] += up[o];
                    }
                });
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for kk in 0..k {
            let s = a[i * k + kk];
            if s != 0.0 {
                axpy(s, &b[kk * m..(kk + 1) * m], orow);
            }
        }
    }
}
