//! Multi-head edge attention kernel.
//!
//! For a destination node `i` and head `k` with columns `C_k`:
//!
//! ```text
//! u_ij        = h_i + h_j
//! score_ijk   = Σ_{c ∈ C_k} c_k[c] · leaky(u_ij[c])
//! α_ijk       = softmax_j(score_ijk)
//! out_i[c∈C_k] = Σ_j α_ijk · v_j[c]
//! ```
//!
//! Pre-activations are recomputed in the backward pass; only α is stored.

use crate::error::{Error, Result};
use crate::numeric::{leaky_relu as leaky, leaky_relu_grad as leaky_grad, Matrix};
use crate::par;

/// Groups source rows into output segments (a CSR index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    members: Vec<usize>,
    source_rows: usize,
}

impl Segments {
    /// Segment `s` collects every `i` with `targets[i] == Some(s)`, in
    /// increasing `i`.
    pub fn from_targets(targets: &[Option<usize>], segments: usize) -> Result<Self> {
        let mut counts = vec![0usize; segments + 1];
        for t in targets.iter().flatten() {
            if *t >= segments {
                return Err(Error::shape(format!("segment {t} out of range {segments}")));
            }
            counts[t + 1] += 1;
        }
        for s in 0..segments {
            counts[s + 1] += counts[s];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut members = vec![0usize; offsets[segments]];
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                members[fill[*t]] = i;
                fill[*t] += 1;
            }
        }
        Ok(Self {
            offsets,
            members,
            source_rows: targets.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self, s: usize) -> &[usize] {
        &self.members[self.offsets[s]..self.offsets[s + 1]]
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    /// Number of rows in the input being grouped.
    pub fn source_rows(&self) -> usize {
        self.source_rows
    }
}

/// Edges of one relation prepared for [`forward`]: sorted by destination so
/// each output row owns a contiguous edge range, plus a grouping by source
/// for the backward scatter.
#[derive(Clone, Debug)]
pub struct AttentionEdges {
    dst: Vec<usize>,
    src: Vec<usize>,
    src_local: Vec<usize>,
    dst_seg: Vec<usize>,
    by_dst: Vec<usize>,
    out_nodes: Vec<usize>,
    src_nodes: Vec<usize>,
    by_src: Segments,
}

impl AttentionEdges {
    /// `pairs` are `(destination, source)` node indices; duplicates are
    /// dropped.
    pub fn new(pairs: &[(usize, usize)]) -> Self {
        let mut pairs = pairs.to_vec();
        pairs.sort_unstable();
        pairs.dedup();
        let mut src_nodes: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        src_nodes.sort_unstable();
        src_nodes.dedup();
        let mut out_nodes = Vec::new();
        let mut by_dst = vec![0];
        let mut dst_seg = Vec::with_capacity(pairs.len());
        for (e, &(d, _)) in pairs.iter().enumerate() {
            if out_nodes.last() != Some(&d) {
                if !out_nodes.is_empty() {
                    by_dst.push(e);
                }
                out_nodes.push(d);
            }
            dst_seg.push(out_nodes.len() - 1);
        }
        if !pairs.is_empty() {
            by_dst.push(pairs.len());
        }
        let src_local: Vec<usize> = pairs
            .iter()
            .map(|p| src_nodes.binary_search(&p.1).expect("present"))
            .collect();
        let targets: Vec<Option<usize>> = src_local.iter().map(|&s| Some(s)).collect();
        let by_src = Segments::from_targets(&targets, src_nodes.len()).expect("in range");
        Self {
            dst: pairs.iter().map(|p| p.0).collect(),
            src: pairs.iter().map(|p| p.1).collect(),
            src_local,
            dst_seg,
            by_dst,
            out_nodes,
            src_nodes,
            by_src,
        }
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }

    /// Destination node of each output row.
    pub fn out_nodes(&self) -> &[usize] {
        &self.out_nodes
    }

    /// Node behind each row of the value input.
    pub fn src_nodes(&self) -> &[usize] {
        &self.src_nodes
    }

    /// Edge index range aggregated into output row `s`.
    pub fn edges_into(&self, s: usize) -> std::ops::Range<usize> {
        self.by_dst[s]..self.by_dst[s + 1]
    }

    /// `(destination, source)` of edge `e`.
    pub fn edge(&self, e: usize) -> (usize, usize) {
        (self.dst[e], self.src[e])
    }
}

fn check_shapes(h: &Matrix, v: &Matrix, c: &Matrix, edges: &AttentionEdges) -> Result<(usize, usize)> {
    let d = h.cols();
    let heads = c.rows();
    if heads == 0 || !d.is_multiple_of(heads) || c.cols() != d / heads {
        return Err(Error::shape(format!(
            "scoring vectors {:?} do not split width {d} into heads",
            c.shape()
        )));
    }
    if v.cols() != d || v.rows() != edges.src_nodes.len() {
        return Err(Error::shape(format!(
            "values {:?} vs {} sources of width {d}",
            v.shape(),
            edges.src_nodes.len()
        )));
    }
    if let Some(&m) = edges.dst.iter().chain(&edges.src).max() {
        if m >= h.rows() {
            return Err(Error::shape(format!("edge node {m} outside {:?}", h.shape())));
        }
    }
    Ok((d, heads))
}

/// Returns the aggregated rows and α (edges × heads).
pub(crate) fn forward(
    h: &Matrix,
    v: &Matrix,
    c: &Matrix,
    edges: &AttentionEdges,
    slope: f64,
    dropout: Option<&[f64]>,
) -> Result<(Matrix, Vec<f64>)> {
    let (d, heads) = check_shapes(h, v, c, edges)?;
    let dh = d / heads;
    if let Some(mask) = dropout {
        if mask.len() != edges.len() * heads {
            return Err(Error::shape("dropout mask must be edges × heads"));
        }
    }
    let segs = edges.out_nodes.len();
    let per_seg: Vec<Vec<f64>> = par::map_collect(segs, |s| {
        let range = edges.edges_into(s);
        let n = range.len();
        let mut scores = vec![0.0; n * heads];
        for (local, e) in range.enumerate() {
            let (hi, hj) = (h.row(edges.dst[e]), h.row(edges.src[e]));
            for k in 0..heads {
                let ck = c.row(k);
                let mut acc = 0.0;
                for q in 0..dh {
                    let col = k * dh + q;
                    acc += ck[q] * leaky(hi[col] + hj[col], slope);
                }
                scores[local * heads + k] = acc;
            }
        }
        for k in 0..heads {
            let max = (0..n).map(|l| scores[l * heads + k]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in 0..n {
                let x = (scores[l * heads + k] - max).exp();
                scores[l * heads + k] = x;
                total += x;
            }
            for l in 0..n {
                scores[l * heads + k] /= total;
            }
        }
        scores
    });
    let alpha: Vec<f64> = per_seg.concat();
    let mut out = Matrix::zeros(segs, d);
    par::for_each_row(out.data_mut(), d, |s, row| {
        for e in edges.edges_into(s) {
            let vj = v.row(edges.src_local[e]);
            for k in 0..heads {
                let mut a = alpha[e * heads + k];
                if let Some(mask) = dropout {
                    a *= mask[e * heads + k];
                }
                for q in 0..dh {
                    let col = k * dh + q;
                    row[col] += a * vj[col];
                }
            }
        }
    });
    Ok((out, alpha))
}

/// Gradients with respect to `(h, v, c)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    g: &Matrix,
    h: &Matrix,
    v: &Matrix,
    c: &Matrix,
    edges: &AttentionEdges,
    slope: f64,
    dropout: Option<&[f64]>,
    alpha: &[f64],
) -> (Matrix, Matrix, Matrix) {
    let d = h.cols();
    let heads = c.rows();
    let dh = d / heads;
    let drop = |e: usize, k: usize| dropout.map_or(1.0, |m| m[e * heads + k]);

    // d score, per destination segment
    let per_seg: Vec<Vec<f64>> = par::map_collect(edges.out_nodes.len(), |s| {
        let range = edges.edges_into(s);
        let first = range.start;
        let gs = g.row(s);
        let mut dalpha = vec![0.0; range.len() * heads];
        for e in range.clone() {
            let vj = v.row(edges.src_local[e]);
            for k in 0..heads {
                let dot: f64 = (k * dh..(k + 1) * dh).map(|col| gs[col] * vj[col]).sum();
                dalpha[(e - first) * heads + k] = dot * drop(e, k);
            }
        }
        let mut dscore = vec![0.0; dalpha.len()];
        for k in 0..heads {
            let weighted: f64 = range
                .clone()
                .map(|e| alpha[e * heads + k] * dalpha[(e - first) * heads + k])
                .sum();
            for e in range.clone() {
                let l = (e - first) * heads + k;
                dscore[l] = alpha[e * heads + k] * (dalpha[l] - weighted);
            }
        }
        dscore
    });
    let dscore: Vec<f64> = per_seg.concat();

    let du = |e: usize, out: &mut [f64]| {
        let (hi, hj) = (h.row(edges.dst[e]), h.row(edges.src[e]));
        for k in 0..heads {
            let ds = dscore[e * heads + k];
            let ck = c.row(k);
            for q in 0..dh {
                let col = k * dh + q;
                out[col] += ds * ck[q] * leaky_grad(hi[col] + hj[col], slope);
            }
        }
    };

    let mut dh_mat = Matrix::zeros(h.rows(), d);
    // destination side: each segment owns its node row
    let mut dst_rows = Matrix::zeros(edges.out_nodes.len(), d);
    par::for_each_row(dst_rows.data_mut(), d, |s, row| {
        for e in edges.edges_into(s) {
            du(e, row);
        }
    });
    for (s, &node) in edges.out_nodes.iter().enumerate() {
        dh_mat
            .row_mut(node)
            .iter_mut()
            .zip(dst_rows.row(s))
            .for_each(|(a, b)| *a += b);
    }
    // source side, grouped by source
    let mut src_rows = Matrix::zeros(edges.src_nodes.len(), d);
    par::for_each_row(src_rows.data_mut(), d, |sl, row| {
        for &e in edges.by_src.members(sl) {
            du(e, row);
        }
    });
    let mut dv = Matrix::zeros(v.rows(), d);
    par::for_each_row(dv.data_mut(), d, |sl, row| {
        for &e in edges.by_src.members(sl) {
            let gs = g.row(edges.dst_seg[e]);
            for k in 0..heads {
                let a = alpha[e * heads + k] * drop(e, k);
                for col in k * dh..(k + 1) * dh {
                    row[col] += a * gs[col];
                }
            }
        }
    });
    for (sl, &node) in edges.src_nodes.iter().enumerate() {
        dh_mat
            .row_mut(node)
            .iter_mut()
            .zip(src_rows.row(sl))
            .for_each(|(a, b)| *a += b);
    }

    let dc_flat = par::chunked_sum(edges.len(), heads * dh, |e, acc| {
        let (hi, hj) = (h.row(edges.dst[e]), h.row(edges.src[e]));
        for k in 0..heads {
            let ds = dscore[e * heads + k];
            for q in 0..dh {
                let col = k * dh + q;
                acc[k * dh + q] += ds * leaky(hi[col] + hj[col], slope);
            }
        }
    });
    let dc = Matrix::from_vec(heads, dh, dc_flat).expect("sized");
    (dh_mat, dv, dc)
}
