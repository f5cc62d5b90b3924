//! Tape-based reverse-mode differentiation over matrices.
//!
//! Every operation appends a node holding its value and how it was made.
//! [`Tape::gradients`] walks the tape backwards from a scalar and returns
//! the gradient of every parameter leaf it reaches.

use std::collections::HashMap;
use std::sync::Arc;

use super::attention::{self, AttentionEdges, Segments};
use super::matrix::gemm;
use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::par;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Log { a: Var, floor: f64 },
    Reciprocal(Var),
    Sum(Var),
    Mean(Var),
    Gather { a: Var, rows: Arc<[Option<usize>]> },
    SegmentSum { a: Var, segs: Arc<Segments> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { a: Var, start: usize },
    RowDot(Var, Var),
    RowSoftmax(Var),
    Attention(Box<AttentionOp>),
}

struct AttentionOp {
    h: Var,
    v: Var,
    c: Var,
    edges: Arc<AttentionEdges>,
    slope: f64,
    dropout: Option<Arc<[f64]>>,
    alpha: Vec<f64>,
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Parameter gradients produced by one backward pass, ordered by id.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Matrix)>,
    leaves: HashMap<usize, Matrix>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.entries.iter().map(|(id, m)| (*id, m))
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.entries
            .binary_search_by_key(&id, |(i, _)| *i)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    /// Gradient with respect to a constant leaf, if it was reached.
    pub fn leaf(&self, v: Var) -> Option<&Matrix> {
        self.leaves.get(&v.0)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn same_shape(what: &str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value recorded");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A constant input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// The current value of a parameter; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        let m = if ta { am.cols() } else { am.rows() };
        let n = if tb { bm.rows() } else { bm.cols() };
        let mut out = Matrix::zeros(m, n);
        gemm(1.0, am, ta, bm, tb, 0.0, &mut out)?;
        Ok(self.push(out, Op::MatMul { a, b, ta, tb }))
    }

    /// `x · wᵀ + b` with `b` a 1 × out row broadcast over rows.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Sum of several same-shaped vars, left to right.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::contract("add_all of nothing"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `a + row` for a 1 × cols row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(Error::shape(format!(
                "row {:?} does not broadcast over {:?}",
                rm.shape(),
                am.shape()
            )));
        }
        let mut out = am.clone();
        let r = rm.data().to_vec();
        par::for_each_row(out.data_mut(), r.len(), |_, row| {
            row.iter_mut().zip(&r).for_each(|(x, b)| *x += b)
        });
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Scales row `r` of `a` by `col[r]` (col is rows × 1).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (am, cm) = (self.value(a), self.value(col));
        if cm.cols() != 1 || cm.rows() != am.rows() {
            return Err(Error::shape(format!(
                "column {:?} does not broadcast over {:?}",
                cm.shape(),
                am.shape()
            )));
        }
        let mut out = am.clone();
        let c = cm.data().to_vec();
        par::for_each_row(out.data_mut(), am.cols(), |r, row| {
            row.iter_mut().for_each(|x| *x *= c[r])
        });
        Ok(self.push(out, Op::MulCol(a, col)))
    }

    /// `a * s` for a 1 × 1 var `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item()?;
        let out = self.value(a).map(|x| x * sv);
        Ok(self.push(out, Op::MulScalar(a, s)))
    }

    /// `a * scale + shift`
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(a).map(|x| x * scale + shift);
        self.push(out, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(super::relu);
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| super::leaky_relu(x, slope));
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(super::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// `ln(max(a, floor))`; zero gradient where clamped.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|x| x.max(floor).ln());
        self.push(out, Op::Log { a, floor })
    }

    pub fn reciprocal(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().contains(&0.0) {
            return Err(Error::contract("reciprocal of zero"));
        }
        let out = self.value(a).map(|x| 1.0 / x);
        Ok(self.push(out, Op::Reciprocal(a)))
    }

    /// Sum of all entries as a 1 × 1 var.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let s = m.sum() / m.len() as f64;
        Ok(self.push(Matrix::scalar(s), Op::Mean(a)))
    }

    /// Row `i` of the output is row `rows[i]` of `a`, or zeros for `None`.
    pub fn gather(&mut self, a: Var, rows: Arc<[Option<usize>]>) -> Result<Var> {
        let am = self.value(a);
        if let Some(bad) = rows.iter().flatten().find(|&&r| r >= am.rows()) {
            return Err(Error::shape(format!(
                "gather row {bad} out of range for {:?}",
                am.shape()
            )));
        }
        let cols = am.cols();
        let mut out = Matrix::zeros(rows.len(), cols);
        par::for_each_row(out.data_mut(), cols, |i, row| {
            if let Some(r) = rows[i] {
                row.copy_from_slice(am.row(r));
            }
        });
        Ok(self.push(out, Op::Gather { a, rows }))
    }

    /// Gather with every index present.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let rows: Arc<[Option<usize>]> = rows.iter().map(|&r| Some(r)).collect();
        self.gather(a, rows)
    }

    /// Row `s` of the output is the sum of the rows of `a` in segment `s`.
    pub fn segment_sum(&mut self, a: Var, segs: Arc<Segments>) -> Result<Var> {
        let am = self.value(a);
        if segs.source_rows() != am.rows() {
            return Err(Error::shape(format!(
                "segments cover {} rows, input has {:?}",
                segs.source_rows(),
                am.shape()
            )));
        }
        let cols = am.cols();
        let mut out = Matrix::zeros(segs.len(), cols);
        par::for_each_row(out.data_mut(), cols, |s, row| {
            for &m in segs.members(s) {
                row.iter_mut().zip(am.row(m)).for_each(|(o, x)| *o += x);
            }
        });
        Ok(self.push(out, Op::SegmentSum { a, segs }))
    }

    pub fn concat_cols(&mut self, vars: &[Var]) -> Result<Var> {
        let rows = vars
            .first()
            .map(|&v| self.value(v).rows())
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        if let Some(&bad) = vars.iter().find(|&&v| self.value(v).rows() != rows) {
            return Err(Error::shape(format!(
                "concat_cols: {} rows vs {:?}",
                rows,
                self.value(bad).shape()
            )));
        }
        let cols: usize = vars.iter().map(|&v| self.value(v).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &v in vars {
            let m = self.value(v);
            for r in 0..rows {
                out.row_mut(r)[off..off + m.cols()].copy_from_slice(m.row(r));
            }
            off += m.cols();
        }
        Ok(self.push(out, Op::ConcatCols(vars.to_vec())))
    }

    pub fn concat_rows(&mut self, vars: &[Var]) -> Result<Var> {
        let cols = vars
            .first()
            .map(|&v| self.value(v).cols())
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        if let Some(&bad) = vars.iter().find(|&&v| self.value(v).cols() != cols) {
            return Err(Error::shape(format!(
                "concat_rows: {} cols vs {:?}",
                cols,
                self.value(bad).shape()
            )));
        }
        let mut data = Vec::new();
        for &v in vars {
            data.extend_from_slice(self.value(v).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(vars.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        if start + len > am.cols() {
            return Err(Error::shape(format!(
                "columns {start}..{} out of range for {:?}",
                start + len,
                am.shape()
            )));
        }
        let mut out = Matrix::zeros(am.rows(), len);
        for r in 0..am.rows() {
            out.row_mut(r).copy_from_slice(&am.row(r)[start..start + len]);
        }
        Ok(self.push(out, Op::SliceCols { a, start }))
    }

    /// Per-row dot product, rows × 1.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("row_dot", self.value(a), self.value(b))?;
        let (am, bm) = (self.value(a), self.value(b));
        let vals = par::map_collect(am.rows(), |r| am.row(r).iter().zip(bm.row(r)).map(|(x, y)| x * y).sum());
        let out = Matrix::column_vector(&vals);
        Ok(self.push(out, Op::RowDot(a, b)))
    }

    /// Softmax along each row; masked (`false`) entries get weight zero.
    pub fn row_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let am = self.value(a);
        if let Some(m) = mask {
            if m.len() != am.len() {
                return Err(Error::shape(format!(
                    "mask of {} entries for {:?}",
                    m.len(),
                    am.shape()
                )));
            }
        }
        let cols = am.cols();
        let mut out = Matrix::zeros(am.rows(), cols);
        for r in 0..am.rows() {
            let s = super::softmax(am.row(r), mask.map(|m| &m[r * cols..(r + 1) * cols]))?;
            out.row_mut(r).copy_from_slice(&s);
        }
        Ok(self.push(out, Op::RowSoftmax(a)))
    }

    /// Multi-head edge attention over a relation.
    ///
    /// `h` (N × d) holds type-specific scoring projections of every node,
    /// `v` (|src| × d) holds value projections of the edge sources, and `c`
    /// (K × d/K) the per-head scoring vectors. Output row `s` aggregates the
    /// edges into `edges.out_nodes()[s]`.
    pub fn attention(
        &mut self,
        h: Var,
        v: Var,
        c: Var,
        edges: Arc<AttentionEdges>,
        slope: f64,
        dropout: Option<Arc<[f64]>>,
    ) -> Result<Var> {
        let (out, alpha) = attention::forward(
            self.value(h),
            self.value(v),
            self.value(c),
            &edges,
            slope,
            dropout.as_deref(),
        )?;
        Ok(self.push(
            out,
            Op::Attention(Box::new(AttentionOp {
                h,
                v,
                c,
                edges,
                slope,
                dropout,
                alpha,
            })),
        ))
    }

    /// Attention coefficients (edges × heads, edge order of
    /// [`AttentionEdges`]) recorded by an attention var, before dropout.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(op) => Some(&op.alpha),
            _ => None,
        }
    }

    /// Backward pass into the parameters of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads);
        Ok(())
    }

    /// Gradients of the scalar `loss` with respect to every parameter and
    /// constant leaf it depends on.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::shape(format!("loss must be 1x1, got {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Param(id) => out.entries.push((*id, g)),
                Op::Leaf => {
                    out.leaves.insert(i, g);
                }
                op => self.propagate(i, op, g, &mut grads)?,
            }
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn propagate(&self, i: usize, op: &Op, g: Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        fn acc(grads: &mut [Option<Matrix>], v: Var, m: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot => *slot = Some(m),
            }
        }
        let y = &self.nodes[i].value;
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, ta, tb } => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut da = Matrix::zeros(am.rows(), am.cols());
                if *ta {
                    gemm(1.0, bm, *tb, &g, true, 0.0, &mut da)?;
                } else {
                    gemm(1.0, &g, false, bm, !*tb, 0.0, &mut da)?;
                }
                let mut db = Matrix::zeros(bm.rows(), bm.cols());
                if *tb {
                    gemm(1.0, &g, true, am, *ta, 0.0, &mut db)?;
                } else {
                    gemm(1.0, am, !*ta, &g, false, 0.0, &mut db)?;
                }
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *b, g.map(|x| -x));
                acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                acc(grads, *a, zip_map(&g, self.value(*b), |x, y| x * y));
                acc(grads, *b, zip_map(&g, self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                let cols = g.cols();
                let mut dr = Matrix::zeros(1, cols);
                for r in 0..g.rows() {
                    dr.data_mut().iter_mut().zip(g.row(r)).for_each(|(d, x)| *d += x);
                }
                acc(grads, *row, dr);
                acc(grads, *a, g);
            }
            Op::MulCol(a, col) => {
                let (am, cm) = (self.value(*a), self.value(*col));
                let dc: Vec<f64> = (0..g.rows())
                    .map(|r| g.row(r).iter().zip(am.row(r)).map(|(x, y)| x * y).sum())
                    .collect();
                let mut da = g;
                let c = cm.data();
                par::for_each_row(da.data_mut(), am.cols(), |r, row| {
                    row.iter_mut().for_each(|x| *x *= c[r])
                });
                acc(grads, *col, Matrix::column_vector(&dc));
                acc(grads, *a, da);
            }
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).item()?;
                let ds: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                acc(grads, *s, Matrix::scalar(ds));
                acc(grads, *a, g.map(|x| x * sv));
            }
            Op::Affine(a, scale) => acc(grads, *a, g.map(|x| x * scale)),
            Op::Relu(a) => acc(
                grads,
                *a,
                zip_map(&g, self.value(*a), |gx, x| gx * super::leaky_relu_grad(x, 0.0)),
            ),
            Op::LeakyRelu(a, slope) => acc(
                grads,
                *a,
                zip_map(&g, self.value(*a), |gx, x| gx * super::leaky_relu_grad(x, *slope)),
            ),
            Op::Tanh(a) => acc(grads, *a, zip_map(&g, y, |gx, t| gx * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(grads, *a, zip_map(&g, y, |gx, s| gx * s * (1.0 - s))),
            Op::Log { a, floor } => acc(
                grads,
                *a,
                zip_map(&g, self.value(*a), |gx, x| if x > *floor { gx / x } else { 0.0 }),
            ),
            Op::Reciprocal(a) => acc(grads, *a, zip_map(&g, y, |gx, r| -gx * r * r)),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, Matrix::filled(r, c, g.item()?));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                acc(grads, *a, Matrix::filled(r, c, g.item()? / (r * c) as f64));
            }
            Op::Gather { a, rows } => {
                let (r, c) = self.shape(*a);
                let mut da = Matrix::zeros(r, c);
                for (i, src) in rows.iter().enumerate() {
                    if let Some(src) = src {
                        da.row_mut(*src).iter_mut().zip(g.row(i)).for_each(|(d, x)| *d += x);
                    }
                }
                acc(grads, *a, da);
            }
            Op::SegmentSum { a, segs } => {
                let (r, c) = self.shape(*a);
                let mut da = Matrix::zeros(r, c);
                for s in 0..segs.len() {
                    for &m in segs.members(s) {
                        da.row_mut(m).iter_mut().zip(g.row(s)).for_each(|(d, x)| *d += x);
                    }
                }
                acc(grads, *a, da);
            }
            Op::ConcatCols(vars) => {
                let mut off = 0;
                for &v in vars {
                    let (r, c) = self.shape(v);
                    let mut dv = Matrix::zeros(r, c);
                    for row in 0..r {
                        dv.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                    }
                    off += c;
                    acc(grads, v, dv);
                }
            }
            Op::ConcatRows(vars) => {
                let mut off = 0;
                for &v in vars {
                    let (r, c) = self.shape(v);
                    let dv = Matrix::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec())?;
                    off += r;
                    acc(grads, v, dv);
                }
            }
            Op::SliceCols { a, start } => {
                let (r, c) = self.shape(*a);
                let mut da = Matrix::zeros(r, c);
                let w = g.cols();
                for row in 0..r {
                    da.row_mut(row)[*start..*start + w].copy_from_slice(g.row(row));
                }
                acc(grads, *a, da);
            }
            Op::RowDot(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let mut da = bm.clone();
                let mut db = am.clone();
                let gv = g.data();
                par::for_each_row(da.data_mut(), am.cols(), |r, row| {
                    row.iter_mut().for_each(|x| *x *= gv[r])
                });
                par::for_each_row(db.data_mut(), am.cols(), |r, row| {
                    row.iter_mut().for_each(|x| *x *= gv[r])
                });
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::RowSoftmax(a) => {
                let cols = y.cols();
                let mut da = Matrix::zeros(y.rows(), cols);
                par::for_each_row(da.data_mut(), cols, |r, row| {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((d, p), q) in row.iter_mut().zip(yr).zip(gr) {
                        *d = p * (q - dot);
                    }
                });
                acc(grads, *a, da);
            }
            Op::Attention(op) => {
                let (dh, dv, dc) = attention::backward(
                    &g,
                    self.value(op.h),
                    self.value(op.v),
                    self.value(op.c),
                    &op.edges,
                    op.slope,
                    op.dropout.as_deref(),
                    &op.alpha,
                );
                acc(grads, op.h, dh);
                acc(grads, op.v, dv);
                acc(grads, op.c, dc);
            }
        }
        Ok(())
    }
}
