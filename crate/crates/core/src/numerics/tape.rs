//! Reverse-mode differentiation over vector-valued nodes.
//!
//! Every forward operation appends a node holding its output values plus
//! whatever it needs to replay the adjoint. Parameters are not copied onto
//! the tape: operations reference them by [`ParamId`] and `backward` deposits
//! their gradients straight into the [`ParamSet`] accumulators.

use std::sync::atomic::{AtomicU64, Ordering};

use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

/// Gate weights of one LSTM cell, gate order input, forget, cell, output.
///
/// Each weight acts on the concatenation `[x; h]` and has shape
/// `hidden × (input + hidden)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub weights: [ParamId; 4],
    pub biases: [ParamId; 4],
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Embed {
        table: ParamId,
        row: usize,
    },
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    SumAll(usize),
    Concat(Vec<usize>),
    Slice {
        src: usize,
        start: usize,
    },
    Affine {
        w: ParamId,
        b: ParamId,
        x: usize,
    },
    Lstm {
        x: usize,
        h: usize,
        c: usize,
        cell: LstmParams,
        gates: Vec<f64>,
    },
    MaxPool {
        rows: Vec<usize>,
        argmax: Vec<usize>,
    },
    LogSoftmaxPick {
        scores: usize,
        probs: Vec<f64>,
        index: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Ordered record of executed operations.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        self.nodes.push(Node { value, op });
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(Error::Tape(format!(
                "node {} does not belong to this tape",
                id.index
            )));
        }
        Ok(id.index)
    }

    fn node_id(&self, index: usize) -> NodeId {
        NodeId {
            tape: self.id,
            index,
        }
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[self.idx(id).expect("foreign node")].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    /// A constant leaf (no gradient flows into it).
    pub fn input(&mut self, values: Vec<f64>) -> NodeId {
        self.push(values, Op::Input)
    }

    /// A whole parameter as a node, flattened.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> NodeId {
        let v = params.value(id).data().to_vec();
        self.push(v, Op::Param(id))
    }

    /// Row `row` of a `vocab × dim` table parameter.
    pub fn embed(&mut self, params: &ParamSet, table: ParamId, row: usize) -> Result<NodeId> {
        let t = params.value(table);
        if row >= t.rows() {
            return Err(Error::Vocabulary {
                token: row,
                vocab: t.rows(),
            });
        }
        let v = t.row(row).to_vec();
        Ok(self.push(v, Op::Embed { table, row }))
    }

    fn binary(&self, a: NodeId, b: NodeId) -> Result<(usize, usize)> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[a].value.len() != self.nodes[b].value.len() {
            return Err(Error::shape(format!(
                "elementwise operands of length {} and {}",
                self.nodes[a].value.len(),
                self.nodes[b].value.len()
            )));
        }
        Ok((a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.binary(a, b)?;
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (a, b) = self.binary(a, b)?;
        let v = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let a = self.idx(a)?;
        let v = self.nodes[a].value.iter().map(|x| x * k).collect();
        Ok(self.push(v, Op::Scale(a, k)))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.idx(a)?;
        let v = self.nodes[a].value.iter().map(|x| x.tanh()).collect();
        Ok(self.push(v, Op::Tanh(a)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.idx(a)?;
        let v = self.nodes[a].value.iter().map(|&x| sigmoid(x)).collect();
        Ok(self.push(v, Op::Sigmoid(a)))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let a = self.idx(a)?;
        let s = self.nodes[a].value.iter().sum();
        Ok(self.push(vec![s], Op::SumAll(a)))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let idx = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let total = idx.iter().map(|&i| self.nodes[i].value.len()).sum();
        let mut v = Vec::with_capacity(total);
        for &i in &idx {
            v.extend_from_slice(&self.nodes[i].value);
        }
        Ok(self.push(v, Op::Concat(idx)))
    }

    pub fn slice(&mut self, src: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.idx(src)?;
        let n = self.nodes[s].value.len();
        if start + len > n {
            return Err(Error::shape(format!(
                "slice {start}..{} of a length-{n} node",
                start + len
            )));
        }
        let v = self.nodes[s].value[start..start + len].to_vec();
        Ok(self.push(v, Op::Slice { src: s, start }))
    }

    /// `w · x + b` for a `rows × cols` weight and a length-`rows` bias.
    pub fn affine(
        &mut self,
        params: &ParamSet,
        w: ParamId,
        b: ParamId,
        x: NodeId,
    ) -> Result<NodeId> {
        let xi = self.idx(x)?;
        let wt = params.value(w);
        let bt = params.value(b);
        let xv = &self.nodes[xi].value;
        if wt.cols() != xv.len() || bt.len() != wt.rows() {
            return Err(Error::shape(format!(
                "affine {}: weight {:?}, bias {:?}, input {}",
                params.name(w),
                wt.shape(),
                bt.shape(),
                xv.len()
            )));
        }
        let v = (0..wt.rows())
            .map(|r| bt.data()[r] + dot(wt.row(r), xv))
            .collect();
        Ok(self.push(v, Op::Affine { w, b, x: xi }))
    }

    /// One LSTM step. The output node holds `[h_next; c_next]`.
    pub fn lstm(
        &mut self,
        params: &ParamSet,
        cell: &LstmParams,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<NodeId> {
        let (xi, hi, ci) = (self.idx(x)?, self.idx(h)?, self.idx(c)?);
        let hid = cell.hidden;
        let (xv, hv, cv) = (
            &self.nodes[xi].value,
            &self.nodes[hi].value,
            &self.nodes[ci].value,
        );
        if xv.len() != cell.input || hv.len() != hid || cv.len() != hid {
            return Err(Error::shape(format!(
                "lstm cell expects x/h/c of {}/{hid}/{hid}, got {}/{}/{}",
                cell.input,
                xv.len(),
                hv.len(),
                cv.len()
            )));
        }
        for k in 0..4 {
            let w = params.value(cell.weights[k]);
            let b = params.value(cell.biases[k]);
            if w.shape() != [hid, cell.input + hid] || b.len() != hid {
                return Err(Error::shape(format!(
                    "lstm gate {} has weight {:?} and bias {:?}",
                    params.name(cell.weights[k]),
                    w.shape(),
                    b.shape()
                )));
            }
        }
        let mut gates = vec![0.0; 4 * hid];
        for k in 0..4 {
            let w = params.value(cell.weights[k]);
            let b = params.value(cell.biases[k]).data();
            for r in 0..hid {
                let row = w.row(r);
                let z = b[r] + dot(&row[..cell.input], xv) + dot(&row[cell.input..], hv);
                gates[k * hid + r] = if k == 2 { z.tanh() } else { sigmoid(z) };
            }
        }
        let mut out = vec![0.0; 2 * hid];
        for r in 0..hid {
            let (i, f, g, o) = (
                gates[r],
                gates[hid + r],
                gates[2 * hid + r],
                gates[3 * hid + r],
            );
            let c_next = f * cv[r] + i * g;
            out[hid + r] = c_next;
            out[r] = o * c_next.tanh();
        }
        Ok(self.push(
            out,
            Op::Lstm {
                x: xi,
                h: hi,
                c: ci,
                cell: *cell,
                gates,
            },
        ))
    }

    /// Element-wise maximum over equal-length rows; ties go to the smallest
    /// row index. Returns the pooled node and the per-column argmax.
    pub fn max_pool(&mut self, rows: &[NodeId]) -> Result<(NodeId, Vec<usize>)> {
        if rows.is_empty() {
            return Err(Error::EmptyPool);
        }
        let idx = rows
            .iter()
            .map(|&r| self.idx(r))
            .collect::<Result<Vec<_>>>()?;
        let d = self.nodes[idx[0]].value.len();
        if idx.iter().any(|&i| self.nodes[i].value.len() != d) {
            return Err(Error::shape("max-pool rows of unequal length"));
        }
        let views: Vec<&[f64]> = idx
            .iter()
            .map(|&i| self.nodes[i].value.as_slice())
            .collect();
        let (pooled, argmax) = column_max(&views);
        Ok((
            self.push(
                pooled,
                Op::MaxPool {
                    rows: idx,
                    argmax: argmax.clone(),
                },
            ),
            argmax,
        ))
    }

    /// `log softmax(scores)[index]` restricted to unmasked entries.
    pub fn log_softmax_pick(
        &mut self,
        scores: NodeId,
        mask: &[bool],
        index: usize,
    ) -> Result<NodeId> {
        let si = self.idx(scores)?;
        let s = &self.nodes[si].value;
        if mask.len() != s.len() || index >= s.len() {
            return Err(Error::shape(format!(
                "log-softmax over {} scores with mask {} and index {index}",
                s.len(),
                mask.len()
            )));
        }
        if !mask[index] {
            return Err(Error::InvalidAction(format!("index {index}")));
        }
        let probs = super::nn::masked_softmax(s, mask)?;
        let max = masked_max(s, mask);
        let log_z = max
            + s.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(v, _)| (v - max).exp())
                .sum::<f64>()
                .ln();
        let lp = s[index] - log_z;
        Ok(self.push(
            vec![lp],
            Op::LogSoftmaxPick {
                scores: si,
                probs,
                index,
            },
        ))
    }

    /// Accumulates `d loss / d param` into `params` for every parameter the
    /// loss depends on.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::shape(format!(
                "loss must be a scalar, got {} values",
                self.nodes[li].value.len()
            )));
        }
        let (values, grads) = params.split_mut();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        adj[li] = Some(vec![1.0]);

        fn acc(adj: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
            adj[i].get_or_insert_with(|| vec![0.0; len])
        }

        for n in (0..=li).rev() {
            let Some(g) = adj[n].take() else { continue };
            let node = &self.nodes[n];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    for (d, v) in grads[p.0].iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                Op::Embed { table, row } => {
                    let cols = values[table.0].cols();
                    let dst = &mut grads[table.0][row * cols..(row + 1) * cols];
                    for (d, v) in dst.iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                &Op::Add(a, b) => {
                    for k in [a, b] {
                        let len = self.nodes[k].value.len();
                        let dst = acc(&mut adj, k, len);
                        for (d, v) in dst.iter_mut().zip(&g) {
                            *d += v;
                        }
                    }
                }
                &Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    for (k, gk) in [(a, ga), (b, gb)] {
                        let dst = acc(&mut adj, k, gk.len());
                        for (d, v) in dst.iter_mut().zip(&gk) {
                            *d += v;
                        }
                    }
                }
                &Op::Scale(a, k) => {
                    let dst = acc(&mut adj, a, g.len());
                    for (d, v) in dst.iter_mut().zip(&g) {
                        *d += v * k;
                    }
                }
                &Op::Tanh(a) => {
                    let dst = acc(&mut adj, a, g.len());
                    for ((d, v), y) in dst.iter_mut().zip(&g).zip(&node.value) {
                        *d += v * (1.0 - y * y);
                    }
                }
                &Op::Sigmoid(a) => {
                    let dst = acc(&mut adj, a, g.len());
                    for ((d, v), y) in dst.iter_mut().zip(&g).zip(&node.value) {
                        *d += v * y * (1.0 - y);
                    }
                }
                &Op::SumAll(a) => {
                    let len = self.nodes[a].value.len();
                    let dst = acc(&mut adj, a, len);
                    for d in dst.iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        let dst = acc(&mut adj, p, len);
                        for (d, v) in dst.iter_mut().zip(&g[off..off + len]) {
                            *d += v;
                        }
                        off += len;
                    }
                }
                &Op::Slice { src, start } => {
                    let len = self.nodes[src].value.len();
                    let dst = acc(&mut adj, src, len);
                    for (d, v) in dst[start..start + g.len()].iter_mut().zip(&g) {
                        *d += v;
                    }
                }
                &Op::Affine { w, b, x } => {
                    let wt = &values[w.0];
                    let xv = &self.nodes[x].value;
                    let cols = wt.cols();
                    {
                        let gw = &mut grads[w.0];
                        for (r, &gr) in g.iter().enumerate() {
                            if gr == 0.0 {
                                continue;
                            }
                            for (d, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *d += gr * xv;
                            }
                        }
                    }
                    for (d, v) in grads[b.0].iter_mut().zip(&g) {
                        *d += v;
                    }
                    let dst = acc(&mut adj, x, cols);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        for (d, wv) in dst.iter_mut().zip(wt.row(r)) {
                            *d += gr * wv;
                        }
                    }
                }
                Op::Lstm {
                    x,
                    h,
                    c,
                    cell,
                    gates,
                } => {
                    let hid = cell.hidden;
                    let inp = cell.input;
                    let (dh, dc) = g.split_at(hid);
                    let c_prev = &self.nodes[*c].value;
                    let c_next = &node.value[hid..];
                    // pre-activation adjoints, gate order i f g o
                    let mut dz = vec![0.0; 4 * hid];
                    let mut dc_prev = vec![0.0; hid];
                    for r in 0..hid {
                        let (i, f, gg, o) = (
                            gates[r],
                            gates[hid + r],
                            gates[2 * hid + r],
                            gates[3 * hid + r],
                        );
                        let tc = c_next[r].tanh();
                        let d_o = dh[r] * tc;
                        let dct = dc[r] + dh[r] * o * (1.0 - tc * tc);
                        dz[r] = dct * gg * i * (1.0 - i);
                        dz[hid + r] = dct * c_prev[r] * f * (1.0 - f);
                        dz[2 * hid + r] = dct * i * (1.0 - gg * gg);
                        dz[3 * hid + r] = d_o * o * (1.0 - o);
                        dc_prev[r] = dct * f;
                    }
                    let xv = &self.nodes[*x].value;
                    let hv = &self.nodes[*h].value;
                    let mut dx = vec![0.0; inp];
                    let mut dhp = vec![0.0; hid];
                    for k in 0..4 {
                        let w = &values[cell.weights[k].0];
                        let cols = inp + hid;
                        let dzk = &dz[k * hid..(k + 1) * hid];
                        {
                            let gw = &mut grads[cell.weights[k].0];
                            for (r, &d) in dzk.iter().enumerate() {
                                let row = &mut gw[r * cols..(r + 1) * cols];
                                for (dst, v) in row[..inp].iter_mut().zip(xv) {
                                    *dst += d * v;
                                }
                                for (dst, v) in row[inp..].iter_mut().zip(hv) {
                                    *dst += d * v;
                                }
                            }
                        }
                        for (dst, v) in grads[cell.biases[k].0].iter_mut().zip(dzk) {
                            *dst += v;
                        }
                        for (r, &d) in dzk.iter().enumerate() {
                            let row = w.row(r);
                            for (dst, wv) in dx.iter_mut().zip(&row[..inp]) {
                                *dst += d * wv;
                            }
                            for (dst, wv) in dhp.iter_mut().zip(&row[inp..]) {
                                *dst += d * wv;
                            }
                        }
                    }
                    for (k, gk) in [(*x, dx), (*h, dhp), (*c, dc_prev)] {
                        let dst = acc(&mut adj, k, gk.len());
                        for (d, v) in dst.iter_mut().zip(&gk) {
                            *d += v;
                        }
                    }
                }
                Op::MaxPool { rows, argmax } => {
                    for (j, (&am, &v)) in argmax.iter().zip(&g).enumerate() {
                        let r = rows[am];
                        let len = self.nodes[r].value.len();
                        acc(&mut adj, r, len)[j] += v;
                    }
                }
                Op::LogSoftmaxPick {
                    scores,
                    probs,
                    index,
                } => {
                    let dst = acc(&mut adj, *scores, probs.len());
                    for (j, (d, p)) in dst.iter_mut().zip(probs).enumerate() {
                        let delta = if j == *index { 1.0 } else { 0.0 };
                        *d += g[0] * (delta - p);
                    }
                }
            }
        }
        Ok(())
    }

    /// Identifier of the node at `index`, for tests that walk the tape.
    pub fn node(&self, index: usize) -> Option<NodeId> {
        (index < self.nodes.len()).then(|| self.node_id(index))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn masked_max(s: &[f64], mask: &[bool]) -> f64 {
    s.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Column-wise maximum with first-index tie breaking.
pub(crate) fn column_max(rows: &[&[f64]]) -> (Vec<f64>, Vec<usize>) {
    let d = rows[0].len();
    let mut pooled = rows[0].to_vec();
    let mut argmax = vec![0; d];
    for (i, r) in rows.iter().enumerate().skip(1) {
        for j in 0..d {
            if r[j] > pooled[j] {
                pooled[j] = r[j];
                argmax[j] = i;
            }
        }
    }
    (pooled, argmax)
}
