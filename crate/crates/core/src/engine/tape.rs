use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::{EngineError, Matrix, ParamId, ParamStore};

type Result<T> = std::result::Result<T, EngineError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of a binary op is stretched over the left one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    Row,
    Col,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SliceCols(Var, usize),
    SegmentSum(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    L2NormalizeRows(Var, Vec<f64>),
    LogSumExpRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Transpose(..) => "transpose",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SegmentSum(..) => "segment_sum",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Abs(..) => "abs",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::L2NormalizeRows(..) => "l2_normalize",
            Op::LogSumExpRows(..) => "logsumexp_rows",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Rows whose norm falls below this are treated as zero by `l2_normalize`.
pub const NORM_FLOOR: f64 = 1e-12;

/// An append-only record of operations. Single-threaded; build one per
/// worker.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    degenerate_rows: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of rows that `l2_normalize` had to replace because their norm
    /// was below [`NORM_FLOOR`].
    pub fn degenerate_normalizations(&self) -> usize {
        self.degenerate_rows
    }

    fn push(&mut self, op: Op, value: Matrix) -> Result<Var> {
        let idx = self.nodes.len();
        if value.iter().any(|x| !x.is_finite()) {
            return Err(EngineError::NonFiniteValue {
                op: op.name(),
                node: idx,
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(idx))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, x: f64) -> Result<Var> {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Loads a parameter from the store as a leaf and remembers the mapping so
    /// its gradient can be collected after `backward`. Loading the same
    /// parameter twice returns the first handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Leaf,
        });
        self.params.push((id, Var(idx)));
        Var(idx)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(EngineError::Shape {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let out = self.value(a).dot(self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(Broadcast::None)
        } else if sb == (1, 1) {
            Ok(Broadcast::Scalar)
        } else if sb.0 == 1 && sb.1 == sa.1 {
            Ok(Broadcast::Row)
        } else if sb.1 == 1 && sb.0 == sa.0 {
            Ok(Broadcast::Col)
        } else {
            Err(EngineError::Shape {
                op,
                lhs: sa,
                rhs: sb,
            })
        }
    }

    fn stretched(&self, a: Var, b: Var, kind: Broadcast) -> Matrix {
        let bv = self.value(b);
        match kind {
            Broadcast::None => bv.clone(),
            _ => bv
                .broadcast(self.shape(a))
                .expect("broadcast checked")
                .to_owned(),
        }
    }

    /// Elementwise `a + b`; `b` may be a matching row, column or `1×1`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("add", a, b)?;
        let out = self.value(a) + &self.stretched(a, b, kind);
        self.push(Op::Add(a, b, kind), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("sub", a, b)?;
        let out = self.value(a) - &self.stretched(a, b, kind);
        self.push(Op::Sub(a, b, kind), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = self.broadcast_kind("mul", a, b)?;
        let out = self.value(a) * &self.stretched(a, b, kind);
        self.push(Op::Mul(a, b, kind), out)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a) * c;
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a) + c;
        self.push(Op::AddScalar(a), out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        for &p in &parts[1..] {
            if self.shape(p).1 != cols {
                return Err(EngineError::Shape {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("shapes checked");
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        for &p in &parts[1..] {
            if self.shape(p).0 != rows {
                return Err(EngineError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("shapes checked");
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(EngineError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                rows,
            });
        }
        let src = self.value(a);
        let mut out = Array2::zeros((index.len(), cols));
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).assign(&src.row(i));
        }
        self.push(Op::GatherRows(a, index), out)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start >= end || end > sa.1 {
            return Err(EngineError::Shape {
                op: "slice_cols",
                lhs: sa,
                rhs: (start, end),
            });
        }
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start), out)
    }

    fn check_segments(
        &self,
        op: &'static str,
        a: Var,
        ids: &[usize],
        segments: usize,
    ) -> Result<()> {
        let sa = self.shape(a);
        if ids.len() != sa.0 {
            return Err(EngineError::Shape {
                op,
                lhs: sa,
                rhs: (ids.len(), 1),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= segments) {
            return Err(EngineError::SegmentOutOfRange {
                op,
                id: bad,
                segments,
            });
        }
        Ok(())
    }

    /// Adds row `r` of `a` into output row `ids[r]`; empty segments are zero.
    pub fn segment_sum(&mut self, a: Var, ids: Arc<[usize]>, segments: usize) -> Result<Var> {
        self.check_segments("segment_sum", a, &ids, segments)?;
        let src = self.value(a);
        let mut out = Array2::zeros((segments, src.ncols()));
        for (r, &seg) in ids.iter().enumerate() {
            let mut row = out.row_mut(seg);
            row += &src.row(r);
        }
        self.push(Op::SegmentSum(a, ids), out)
    }

    /// Softmax of a score column within each segment (max-shifted).
    pub fn segment_softmax(&mut self, a: Var, ids: Arc<[usize]>, segments: usize) -> Result<Var> {
        self.check_segments("segment_softmax", a, &ids, segments)?;
        let sa = self.shape(a);
        if sa.1 != 1 {
            return Err(EngineError::Shape {
                op: "segment_softmax",
                lhs: sa,
                rhs: (sa.0, 1),
            });
        }
        let src = self.value(a);
        let mut max = vec![f64::NEG_INFINITY; segments];
        for (r, &seg) in ids.iter().enumerate() {
            max[seg] = max[seg].max(src[[r, 0]]);
        }
        let mut out = Array2::zeros((sa.0, 1));
        let mut denom = vec![0.0; segments];
        for (r, &seg) in ids.iter().enumerate() {
            let e = (src[[r, 0]] - max[seg]).exp();
            out[[r, 0]] = e;
            denom[seg] += e;
        }
        for (r, &seg) in ids.iter().enumerate() {
            out[[r, 0]] /= denom[seg];
        }
        self.push(Op::SegmentSoftmax(a, ids, segments), out)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), out)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::ln);
        self.push(Op::Log(a), out)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(softplus);
        self.push(Op::Softplus(a), out)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).mapv(f64::abs);
        self.push(Op::Abs(a), out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(Op::Sum(a), out)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let n = v.len().max(1) as f64;
        let out = Array2::from_elem((1, 1), v.sum() / n);
        self.push(Op::Mean(a), out)
    }

    /// Column totals as a `1×C` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(Op::SumRows(a), out)
    }

    /// Row totals as an `R×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(Op::SumCols(a), out)
    }

    /// Scales every row to unit Euclidean norm. Rows with norm below
    /// [`NORM_FLOOR`] become the first basis vector and pass no gradient.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let mut out = src.clone();
        let mut norms = Vec::with_capacity(src.nrows());
        let mut degenerate = 0;
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt();
            if n < NORM_FLOOR {
                row.fill(0.0);
                row[0] = 1.0;
                norms.push(0.0);
                degenerate += 1;
            } else {
                row /= n;
                norms.push(n);
            }
        }
        self.degenerate_rows += degenerate;
        if degenerate > 0 {
            log::warn!("l2_normalize: {degenerate} near-zero row(s) replaced");
        }
        self.push(Op::L2NormalizeRows(a, norms), out)
    }

    /// Row-wise `ln Σ_j exp(a_ij)` as an `R×1` column (max-shifted).
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let mut out = Array2::zeros((src.nrows(), 1));
        for (r, row) in src.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
            out[[r, 0]] = m + s.ln();
        }
        self.push(Op::LogSumExpRows(a), out)
    }

    /// Gradient of a `1×1` node with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if s != (1, 1) {
            return Err(EngineError::NotScalar(s));
        }
        self.backward_seeded(&[(loss, Array2::ones((1, 1)))])
    }

    /// Reverse sweep starting from arbitrary upstream gradients. Seeds for
    /// the same node are summed.
    pub fn backward_seeded(&self, seeds: &[(Var, Matrix)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        let mut start = 0;
        for (v, g) in seeds {
            if g.dim() != self.shape(*v) {
                return Err(EngineError::Shape {
                    op: "backward_seed",
                    lhs: self.shape(*v),
                    rhs: g.dim(),
                });
            }
            accumulate(&mut grads, v.0, g.clone());
            start = start.max(v.0 + 1);
        }

        for idx in (0..start).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let before = self.propagate(&mut grads, node, &g);
            grads[idx] = Some(g);
            if let Some(bad) = before {
                return Err(EngineError::NonFiniteGradient {
                    op: node.op.name(),
                    node: bad,
                });
            }
        }
        Ok(Gradients { grads })
    }

    /// Pushes `g` (the gradient of `node`) into its parents. Returns the
    /// index of a parent that received a non-finite contribution, if any.
    fn propagate(&self, grads: &mut [Option<Matrix>], node: &Node, g: &Matrix) -> Option<usize> {
        let mut emitted: Vec<(usize, Matrix)> = Vec::with_capacity(2);
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                emitted.push((a.0, g.dot(&val(*b).t())));
                emitted.push((b.0, val(*a).t().dot(g)));
            }
            Op::Add(a, b, kind) => {
                emitted.push((a.0, g.clone()));
                emitted.push((b.0, reduce_broadcast(g.clone(), *kind)));
            }
            Op::Sub(a, b, kind) => {
                emitted.push((a.0, g.clone()));
                emitted.push((b.0, reduce_broadcast(-g, *kind)));
            }
            Op::Mul(a, b, kind) => {
                let bs = self.stretched(*a, *b, *kind);
                emitted.push((a.0, g * &bs));
                emitted.push((b.0, reduce_broadcast(g * val(*a), *kind)));
            }
            Op::Scale(a, c) => emitted.push((a.0, g * *c)),
            Op::AddScalar(a) => emitted.push((a.0, g.clone())),
            Op::Transpose(a) => emitted.push((a.0, g.t().to_owned())),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).nrows();
                    emitted.push((p.0, g.slice(s![offset..offset + n, ..]).to_owned()));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).ncols();
                    emitted.push((p.0, g.slice(s![.., offset..offset + n]).to_owned()));
                    offset += n;
                }
            }
            Op::GatherRows(a, index) => {
                let mut ga = Array2::zeros(val(*a).dim());
                for (r, &i) in index.iter().enumerate() {
                    let mut row = ga.row_mut(i);
                    row += &g.row(r);
                }
                emitted.push((a.0, ga));
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(val(*a).dim());
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                emitted.push((a.0, ga));
            }
            Op::SegmentSum(a, ids) => {
                let mut ga = Array2::zeros(val(*a).dim());
                for (r, &seg) in ids.iter().enumerate() {
                    ga.row_mut(r).assign(&g.row(seg));
                }
                emitted.push((a.0, ga));
            }
            Op::SegmentSoftmax(a, ids, segments) => {
                let y = &node.value;
                let mut dot = vec![0.0; *segments];
                for (r, &seg) in ids.iter().enumerate() {
                    dot[seg] += y[[r, 0]] * g[[r, 0]];
                }
                let mut ga = Array2::zeros(y.dim());
                for (r, &seg) in ids.iter().enumerate() {
                    ga[[r, 0]] = y[[r, 0]] * (g[[r, 0]] - dot[seg]);
                }
                emitted.push((a.0, ga));
            }
            Op::LeakyRelu(a, slope) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                });
                emitted.push((a.0, ga));
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                emitted.push((a.0, ga));
            }
            Op::Tanh(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                emitted.push((a.0, ga));
            }
            Op::Exp(a) => emitted.push((a.0, g * &node.value)),
            Op::Log(a) => emitted.push((a.0, g / val(*a))),
            Op::Softplus(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga)
                    .and(val(*a))
                    .for_each(|d, &x| *d *= sigmoid(x));
                emitted.push((a.0, ga));
            }
            Op::Abs(a) => {
                let mut ga = g.clone();
                Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                    *d *= if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                emitted.push((a.0, ga));
            }
            Op::Sum(a) => emitted.push((a.0, Array2::from_elem(val(*a).dim(), g[[0, 0]]))),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                emitted.push((a.0, Array2::from_elem(val(*a).dim(), g[[0, 0]] / n)));
            }
            Op::SumRows(a) => {
                let ga = g.broadcast(val(*a).dim()).expect("row").to_owned();
                emitted.push((a.0, ga));
            }
            Op::SumCols(a) => {
                let ga = g.broadcast(val(*a).dim()).expect("col").to_owned();
                emitted.push((a.0, ga));
            }
            Op::L2NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut ga = Array2::zeros(y.dim());
                for (r, &n) in norms.iter().enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let proj = yr.dot(&gr);
                    let mut out = ga.row_mut(r);
                    out.assign(&((&gr - &(&yr * proj)) / n));
                }
                emitted.push((a.0, ga));
            }
            Op::LogSumExpRows(a) => {
                let x = val(*a);
                let mut ga = Array2::zeros(x.dim());
                for r in 0..x.nrows() {
                    let lse = node.value[[r, 0]];
                    for c in 0..x.ncols() {
                        ga[[r, c]] = g[[r, 0]] * (x[[r, c]] - lse).exp();
                    }
                }
                emitted.push((a.0, ga));
            }
        }

        let mut bad = None;
        for (parent, contribution) in emitted {
            if bad.is_none() && contribution.iter().any(|x| !x.is_finite()) {
                bad = Some(parent);
            }
            accumulate(grads, parent, contribution);
        }
        bad
    }

    /// Parameters loaded onto this tape, in load order.
    pub fn params(&self) -> &[(ParamId, Var)] {
        &self.params
    }
}

fn accumulate(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn reduce_broadcast(g: Matrix, kind: Broadcast) -> Matrix {
    match kind {
        Broadcast::None => g,
        Broadcast::Row => g.sum_axis(Axis(0)).insert_axis(Axis(0)),
        Broadcast::Col => g.sum_axis(Axis(1)).insert_axis(Axis(1)),
        Broadcast::Scalar => Array2::from_elem((1, 1), g.sum()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Result of a reverse sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, with zeros for unreachable nodes.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.shape(v)))
    }

    /// Adds the gradient of every parameter loaded on `tape` into `buffers`
    /// (indexed by parameter id).
    pub fn accumulate_params(&self, tape: &Tape, buffers: &mut [Matrix]) {
        for &(id, v) in tape.params() {
            if let Some(g) = self.get(v) {
                buffers[id.index()] += g;
            }
        }
    }
}
