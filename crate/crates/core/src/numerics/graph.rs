//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node holding its forward value. Calling
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! a scalar node with respect to every parameter leaf that was recorded.

use std::collections::HashMap;
use std::sync::Arc;

use super::conv::{ConvPlan, Segments};
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, normalize_row, softmax_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Option<Var>, plan: Arc<ConvPlan> },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { x: Var, affine: Option<(Var, Var)>, normed: Vec<f64>, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    RowDot(Var, Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ScaleRows { x: Var, s: Var, col: usize },
    SegmentMean { x: Var, segments: Arc<Segments> },
    Focal { logits: Var, targets: Arc<Vec<Option<u32>>>, gamma: f64, probs: Vec<f64>, count: usize },
    WeightedSum(Vec<(Var, f64)>),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Probability floor applied before taking logarithms in the focal loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// A leaf bound to a parameter; repeated calls reuse the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    fn shape_err<T>(&self, what: &str, a: Var, b: Var) -> Result<T> {
        Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        )))
    }

    /// `x·W (+ b)` with `x: [n, a]`, `W: [a, c]`, `b: [c]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, a) = (xv.rows(), xv.cols());
        if wv.shape().len() != 2 || wv.rows() != a {
            return self.shape_err("linear", x, w);
        }
        let c = wv.cols();
        let mut out = vec![0.0; n * c];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != c {
                return self.shape_err("linear bias", w, b);
            }
            for row in out.chunks_mut(c) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(n, a, c, xv.data(), false, wv.data(), false, 1.0, &mut out);
        Ok(self.push(Tensor::matrix(n, c, out)?, Op::Linear { x, w, b }))
    }

    /// Gather convolution: `y[o] = b + Σ_k Σ_{(o,i) ∈ taps[k]} x[i]·W_k`
    /// where `W: [K·c_in, c_out]` stacks the per-tap matrices.
    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, plan: Arc<ConvPlan>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let k = plan.kernel_size();
        let cin = xv.cols();
        if xv.rows() != plan.n_in || wv.rows() != k * cin {
            return Err(Error::Shape(format!(
                "conv: input {:?}, weight {:?}, plan {}→{} with {} taps",
                xv.shape(),
                wv.shape(),
                plan.n_in,
                plan.n_out,
                k
            )));
        }
        let cout = wv.cols();
        let mut out = vec![0.0; plan.n_out * cout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != cout {
                return self.shape_err("conv bias", w, b);
            }
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bv.data());
            }
        }
        let mut gathered = Vec::new();
        let mut partial = Vec::new();
        for (t, pairs) in plan.taps.iter().enumerate() {
            if pairs.is_empty() {
                continue;
            }
            let m = pairs.len();
            gathered.clear();
            for &(_, i) in pairs {
                gathered.extend_from_slice(xv.row(i as usize));
            }
            partial.clear();
            partial.resize(m * cout, 0.0);
            let wk = &wv.data()[t * cin * cout..(t + 1) * cin * cout];
            gemm(m, cin, cout, &gathered, false, wk, false, 0.0, &mut partial);
            for (row, &(o, _)) in partial.chunks(cout).zip(pairs) {
                let dst = &mut out[o as usize * cout..(o as usize + 1) * cout];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        Ok(self.push(Tensor::matrix(plan.n_out, cout, out)?, Op::Conv { x, w, b, plan }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return self.shape_err("add", a, b);
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    /// Adds the vector `v: [d]` to every row of `x: [n, d]`.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xv, vv) = (self.value(x), self.value(v));
        if xv.cols() != vv.len() {
            return self.shape_err("add_row", x, v);
        }
        let mut t = xv.clone();
        let d = vv.len();
        for row in t.data_mut().chunks_mut(d) {
            for (a, b) in row.iter_mut().zip(vv.data()) {
                *a += b;
            }
        }
        Ok(self.push(t, Op::AddRow(x, v)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return self.shape_err("mul", a, b);
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut t = self.value(x).clone();
        t.scale_assign(factor);
        self.push(t, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(t, Op::Relu(x))
    }

    /// Row-wise layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, d) = (xv.rows(), xv.cols());
        if d < 2 {
            return Err(Error::DegenerateDimension(format!("layer norm over {d} column(s)")));
        }
        if !xv.is_finite() {
            return Err(Error::Numeric("non-finite layer norm input".into()));
        }
        let mut normed = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        for i in 0..n {
            inv_std[i] = normalize_row(xv.row(i), eps, &mut normed[i * d..(i + 1) * d]);
        }
        let mut out = normed.clone();
        if let Some((g, b)) = affine {
            let (gv, bv) = (self.value(g), self.value(b));
            if gv.len() != d || bv.len() != d {
                return self.shape_err("layer norm affine", x, g);
            }
            for row in out.chunks_mut(d) {
                for ((o, g), b) in row.iter_mut().zip(gv.data()).zip(bv.data()) {
                    *o = *o * g + b;
                }
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, affine, normed, inv_std }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() == 0 {
            return Err(Error::Empty("softmax over zero columns".into()));
        }
        if !xv.is_finite() {
            return Err(Error::Numeric("non-finite softmax logits".into()));
        }
        let mut t = Tensor::zeros(xv.shape());
        let d = xv.cols();
        for i in 0..xv.rows() {
            softmax_into(xv.row(i), &mut t.data_mut()[i * d..(i + 1) * d]);
        }
        Ok(self.push(t, Op::SoftmaxRows(x)))
    }

    /// Row-wise dot product: `[n, d] · [n, d] → [n, 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return self.shape_err("row_dot", a, b);
        }
        let n = av.rows();
        let data = (0..n)
            .map(|i| av.row(i).iter().zip(bv.row(i)).map(|(x, y)| x * y).sum())
            .collect();
        Ok(self.push(Tensor::matrix(n, 1, data)?, Op::RowDot(a, b)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != n) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        Ok(self.push(Tensor::matrix(n, total, data)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::Shape("slice_cols out of range".into()));
        }
        let n = xv.rows();
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(n, len, data)?, Op::SliceCols { x, start }))
    }

    /// Multiplies row `i` of `x` by `s[i, col]`.
    pub fn scale_rows(&mut self, x: Var, s: Var, col: usize) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if xv.rows() != sv.rows() || col >= sv.cols() {
            return self.shape_err("scale_rows", x, s);
        }
        let mut t = xv.clone();
        let d = xv.cols();
        for (i, row) in t.data_mut().chunks_mut(d.max(1)).enumerate() {
            let f = sv.row(i)[col];
            row.iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(t, Op::ScaleRows { x, s, col }))
    }

    /// Averages rows of `x` within each segment.
    pub fn segment_mean(&mut self, x: Var, segments: Arc<Segments>) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != segments.n_in {
            return Err(Error::Shape(format!(
                "segment_mean: {} rows for {} inputs",
                xv.rows(),
                segments.n_in
            )));
        }
        let d = xv.cols();
        let mut out = vec![0.0; segments.groups.len() * d];
        for (g, rows) in segments.groups.iter().enumerate() {
            let dst = &mut out[g * d..(g + 1) * d];
            for &r in rows {
                for (a, b) in dst.iter_mut().zip(xv.row(r as usize)) {
                    *a += b;
                }
            }
            let inv = 1.0 / rows.len().max(1) as f64;
            dst.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::matrix(segments.groups.len(), d, out)?;
        Ok(self.push(t, Op::SegmentMean { x, segments }))
    }

    /// Mean focal loss `(1 − p_t)^γ · (−ln p_t)` over rows with a target;
    /// `p = softmax(logits)`. Rows whose target is `None` are skipped. With
    /// no contributing rows the loss is zero.
    pub fn focal_loss(&mut self, logits: Var, targets: Arc<Vec<Option<u32>>>, gamma: f64) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = (lv.rows(), lv.cols());
        if targets.len() != n {
            return Err(Error::Shape(format!("focal loss: {} targets for {n} rows", targets.len())));
        }
        if !lv.is_finite() {
            return Err(Error::Numeric("non-finite logits".into()));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            let p = &mut probs[i * c..(i + 1) * c];
            softmax_into(lv.row(i), p);
            if let Some(t) = targets[i] {
                let t = t as usize;
                if t >= c {
                    return Err(Error::Shape(format!("target {t} outside {c} classes")));
                }
                total += focal_term(p[t], gamma);
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let op = Op::Focal {
            logits,
            targets,
            gamma,
            probs,
            count,
        };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    /// `Σ w_k · x_k` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let shape = self.value(terms[0].0).shape().to_vec();
        let mut t = Tensor::zeros(&shape);
        for (v, w) in terms {
            let vv = self.value(*v);
            if vv.shape() != shape.as_slice() {
                return Err(Error::Shape("weighted_sum operands".into()));
            }
            for (a, b) in t.data_mut().iter_mut().zip(vv.data()) {
                *a += w * b;
            }
        }
        Ok(self.push(t, Op::WeightedSum(terms.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Gradients of the scalar `output` with respect to every recorded
    /// parameter. The tape is left intact, so backward may run again.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(Tensor::new(self.value(output).shape().to_vec(), vec![1.0])?);
        let mut result = Gradients::default();
        for idx in (0..=output.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(node, &dy, &mut grads, &mut result);
        }
        result.entries.sort_by_key(|(id, _)| *id);
        Ok(result)
    }

    /// Runs [`Graph::backward`] and adds the result into the store's slots.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore) -> Result<()> {
        let g = self.backward(output)?;
        store.accumulate(&g);
        Ok(())
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>], result: &mut Gradients) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => result.entries.push((*id, dy.clone())),
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, a, c) = (xv.rows(), xv.cols(), wv.cols());
                let dx = slot(grads, *x, xv);
                gemm(n, c, a, dy.data(), false, wv.data(), true, 1.0, dx.data_mut());
                let dw = slot(grads, *w, wv);
                gemm(a, n, c, xv.data(), true, dy.data(), false, 1.0, dw.data_mut());
                if let Some(b) = b {
                    let db = slot(grads, *b, val(*b));
                    col_sum_into(dy, db.data_mut());
                }
            }
            Op::Conv { x, w, b, plan } => {
                let (xv, wv) = (val(*x), val(*w));
                let cin = xv.cols();
                let cout = wv.cols();
                let mut dw_all = vec![0.0; wv.len()];
                let mut dx_all = vec![0.0; xv.len()];
                let mut gathered = Vec::new();
                let mut dys = Vec::new();
                let mut dxs = Vec::new();
                for (t, pairs) in plan.taps.iter().enumerate() {
                    if pairs.is_empty() {
                        continue;
                    }
                    let m = pairs.len();
                    gathered.clear();
                    dys.clear();
                    for &(o, i) in pairs {
                        gathered.extend_from_slice(xv.row(i as usize));
                        dys.extend_from_slice(dy.row(o as usize));
                    }
                    let range = t * cin * cout..(t + 1) * cin * cout;
                    gemm(cin, m, cout, &gathered, true, &dys, false, 1.0, &mut dw_all[range.clone()]);
                    dxs.clear();
                    dxs.resize(m * cin, 0.0);
                    gemm(m, cout, cin, &dys, false, &wv.data()[range], true, 0.0, &mut dxs);
                    for (row, &(_, i)) in dxs.chunks(cin).zip(pairs) {
                        let dst = &mut dx_all[i as usize * cin..(i as usize + 1) * cin];
                        for (d, s) in dst.iter_mut().zip(row) {
                            *d += s;
                        }
                    }
                }
                add_into(slot(grads, *x, xv), &dx_all);
                add_into(slot(grads, *w, wv), &dw_all);
                if let Some(b) = b {
                    let db = slot(grads, *b, val(*b));
                    col_sum_into(dy, db.data_mut());
                }
            }
            Op::Add(a, b) => {
                add_into(slot(grads, *a, val(*a)), dy.data());
                add_into(slot(grads, *b, val(*b)), dy.data());
            }
            Op::AddRow(x, v) => {
                add_into(slot(grads, *x, val(*x)), dy.data());
                let dv = slot(grads, *v, val(*v));
                col_sum_into(dy, dv.data_mut());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da: Vec<f64> = dy.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = dy.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                add_into(slot(grads, *a, av), &da);
                add_into(slot(grads, *b, bv), &db);
            }
            Op::Scale(x, f) => {
                let d: Vec<f64> = dy.data().iter().map(|g| g * f).collect();
                add_into(slot(grads, *x, val(*x)), &d);
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let d: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                add_into(slot(grads, *x, xv), &d);
            }
            Op::LayerNorm { x, affine, normed, inv_std } => {
                let xv = val(*x);
                let d = xv.cols();
                let n = xv.rows();
                let mut dn = dy.data().to_vec();
                if let Some((g, b)) = affine {
                    let gv = val(*g);
                    let mut dg = vec![0.0; d];
                    let mut db = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            let k = i * d + j;
                            dg[j] += dy.data()[k] * normed[k];
                            db[j] += dy.data()[k];
                            dn[k] *= gv.data()[j];
                        }
                    }
                    add_into(slot(grads, *g, gv), &dg);
                    add_into(slot(grads, *b, val(*b)), &db);
                }
                let mut dx = vec![0.0; n * d];
                let inv_d = 1.0 / d as f64;
                for i in 0..n {
                    let r = i * d..(i + 1) * d;
                    let (dn_r, n_r) = (&dn[r.clone()], &normed[r.clone()]);
                    let mean_dn = dn_r.iter().sum::<f64>() * inv_d;
                    let mean_dnn = dn_r.iter().zip(n_r).map(|(a, b)| a * b).sum::<f64>() * inv_d;
                    for ((o, g), h) in dx[r].iter_mut().zip(dn_r).zip(n_r) {
                        *o = inv_std[i] * (g - mean_dn - h * mean_dnn);
                    }
                }
                add_into(slot(grads, *x, xv), &dx);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let d = y.cols();
                let mut dx = vec![0.0; y.len()];
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), dy.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[i * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_into(slot(grads, *x, val(*x)), &dx);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let d = av.cols();
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for i in 0..av.rows() {
                    let g = dy.data()[i];
                    for j in 0..d {
                        da[i * d + j] = g * bv.data()[i * d + j];
                        db[i * d + j] = g * av.data()[i * d + j];
                    }
                }
                add_into(slot(grads, *a, av), &da);
                add_into(slot(grads, *b, bv), &db);
            }
            Op::ConcatCols(parts) => {
                let total = dy.cols();
                let mut offset = 0;
                for p in parts {
                    let pv = val(*p);
                    let c = pv.cols();
                    let mut d = vec![0.0; pv.len()];
                    for i in 0..pv.rows() {
                        d[i * c..(i + 1) * c].copy_from_slice(&dy.data()[i * total + offset..i * total + offset + c]);
                    }
                    add_into(slot(grads, *p, pv), &d);
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (c, len) = (xv.cols(), dy.cols());
                let dx = slot(grads, *x, xv);
                for i in 0..xv.rows() {
                    for j in 0..len {
                        dx.data_mut()[i * c + start + j] += dy.data()[i * len + j];
                    }
                }
            }
            Op::ScaleRows { x, s, col } => {
                let (xv, sv) = (val(*x), val(*s));
                let d = xv.cols();
                let sc = sv.cols();
                let mut dx = vec![0.0; xv.len()];
                let mut ds = vec![0.0; sv.len()];
                for i in 0..xv.rows() {
                    let f = sv.data()[i * sc + col];
                    let mut acc = 0.0;
                    for j in 0..d {
                        let g = dy.data()[i * d + j];
                        dx[i * d + j] = g * f;
                        acc += g * xv.data()[i * d + j];
                    }
                    ds[i * sc + col] = acc;
                }
                add_into(slot(grads, *x, xv), &dx);
                add_into(slot(grads, *s, sv), &ds);
            }
            Op::SegmentMean { x, segments } => {
                let xv = val(*x);
                let d = xv.cols();
                let dx = slot(grads, *x, xv);
                for (g, rows) in segments.groups.iter().enumerate() {
                    let inv = 1.0 / rows.len().max(1) as f64;
                    let src = &dy.data()[g * d..(g + 1) * d];
                    for &r in rows {
                        let dst = &mut dx.data_mut()[r as usize * d..(r as usize + 1) * d];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += b * inv;
                        }
                    }
                }
            }
            Op::Focal {
                logits,
                targets,
                gamma,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let lv = val(*logits);
                let c = lv.cols();
                let scale = dy.data()[0] / *count as f64;
                let mut dz = vec![0.0; lv.len()];
                for (i, t) in targets.iter().enumerate() {
                    let Some(t) = t else { continue };
                    let t = *t as usize;
                    let p = &probs[i * c..(i + 1) * c];
                    let dl_dp = focal_dloss_dp(p[t], *gamma);
                    let pt = p[t];
                    for j in 0..c {
                        let dp_dz = pt * (if j == t { 1.0 } else { 0.0 } - p[j]);
                        dz[i * c + j] = scale * dl_dp * dp_dz;
                    }
                }
                add_into(slot(grads, *logits, lv), &dz);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                let g = dy.data()[0];
                slot(grads, *x, xv).data_mut().iter_mut().for_each(|v| *v += g);
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    let d: Vec<f64> = dy.data().iter().map(|g| g * w).collect();
                    add_into(slot(grads, *v, val(*v)), &d);
                }
            }
        }
    }
}

/// Focal loss value for the target probability `p`.
pub fn focal_term(p: f64, gamma: f64) -> f64 {
    let p = p.max(PROB_FLOOR);
    let weight = if gamma == 0.0 { 1.0 } else { (1.0 - p).max(0.0).powf(gamma) };
    weight * -p.ln()
}

fn focal_dloss_dp(p: f64, gamma: f64) -> f64 {
    let p = p.max(PROB_FLOOR);
    let q = (1.0 - p).max(0.0);
    let ce = -p.ln();
    let ce_grad = -1.0 / p;
    if gamma == 0.0 {
        return ce_grad;
    }
    let weight = q.powf(gamma);
    let weight_grad = if q > 0.0 { -gamma * q.powf(gamma - 1.0) } else { 0.0 };
    weight_grad * ce + weight * ce_grad
}

fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, like: &Tensor) -> &'a mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.shape()))
}

fn add_into(t: &mut Tensor, d: &[f64]) {
    for (a, b) in t.data_mut().iter_mut().zip(d) {
        *a += b;
    }
}

fn col_sum_into(dy: &Tensor, out: &mut [f64]) {
    let c = out.len();
    for row in dy.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}
