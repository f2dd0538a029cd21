//! Reverse-mode automatic differentiation over `ndarray::Array2<f64>`.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes; calling
//! [`Tape::backward`] walks the list in reverse and accumulates gradients.
//! All tensors are 2-d (row vectors are `1 x n`, scalars `1 x 1`); sequences
//! are `len x dim`. Batching is done by building one tape per example and
//! summing parameter gradients outside, which keeps every op simple and makes
//! reductions bit-deterministic.
//!
//! Double precision throughout: the gradient test suites compare analytic
//! gradients against central finite differences at 1e-4 relative error, which
//! f32 cannot reach.

use ndarray::{Array1, Array2, Axis};
use std::sync::Arc;

use crate::params::ParamStore;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// Inputs available to a backward function: upstream gradient, the parent
/// values, and the node's own output value.
pub struct BackArgs<'a> {
    pub grad: &'a Array2<f64>,
    pub inputs: &'a [&'a Array2<f64>],
    pub output: &'a Array2<f64>,
}

type BackwardFn = Box<dyn Fn(&BackArgs) -> Vec<Array2<f64>>>;

struct Node {
    value: Arc<Array2<f64>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
}

/// One recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// (node index, parameter id) for every parameter leaf touched.
    param_nodes: Vec<(usize, usize)>,
}

/// Gradients of a scalar root with respect to every parameter leaf, indexed
/// by parameter id.
pub struct ParamGrads {
    grads: Vec<Option<Array2<f64>>>,
}

impl ParamGrads {
    pub fn zeros(n_params: usize) -> Self {
        ParamGrads { grads: (0..n_params).map(|_| None).collect() }
    }

    pub fn get(&self, pid: usize) -> Option<&Array2<f64>> {
        self.grads.get(pid).and_then(|g| g.as_ref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `self += other * scale`, used to average per-example gradients.
    pub fn accumulate_scaled(&mut self, other: &ParamGrads, scale: f64) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize_with(other.grads.len(), || None);
        }
        for (pid, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.grads[pid] {
                    Some(acc) => acc.scaled_add(scale, g),
                    slot => *slot = Some(g * scale),
                }
            }
        }
    }

    /// Global L2 norm over all gradients.
    pub fn global_norm(&self) -> f64 {
        let mut sq = 0.0;
        for g in self.grads.iter().flatten() {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn scale_all(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * s);
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: TensorId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let v = self.value(id);
        (v.nrows(), v.ncols())
    }

    fn push(&mut self, value: Array2<f64>, parents: Vec<usize>, backward: Option<BackwardFn>) -> TensorId {
        self.nodes.push(Node { value: Arc::new(value), parents, backward });
        TensorId(self.nodes.len() - 1)
    }

    /// Leaf with no gradient flow (masks, noise, fixed inputs).
    pub fn constant(&mut self, value: Array2<f64>) -> TensorId {
        self.push(value, vec![], None)
    }

    /// Parameter leaf; its gradient is collected by [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, pid: usize) -> TensorId {
        let value = store.arc(pid);
        self.nodes.push(Node { value, parents: vec![], backward: None });
        let nid = self.nodes.len() - 1;
        self.param_nodes.push((nid, pid));
        TensorId(nid)
    }

    // ---- arithmetic ----

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = &*self.nodes[a.0].value + &*self.nodes[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs| vec![args.grad.clone(), args.grad.clone()])),
        )
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = &*self.nodes[a.0].value - &*self.nodes[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs| vec![args.grad.clone(), -args.grad])),
        )
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = &*self.nodes[a.0].value * &*self.nodes[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs| {
                vec![args.grad * args.inputs[1], args.grad * args.inputs[0]]
            })),
        )
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let v = &*self.nodes[a.0].value * c;
        self.push(v, vec![a.0], Some(Box::new(move |args: &BackArgs| vec![args.grad * c])))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let v = &*self.nodes[a.0].value + c;
        self.push(v, vec![a.0], Some(Box::new(|args: &BackArgs| vec![args.grad.clone()])))
    }

    /// Broadcast-add a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> TensorId {
        debug_assert_eq!(self.shape(row).0, 1);
        debug_assert_eq!(self.shape(a).1, self.shape(row).1);
        let v = &*self.nodes[a.0].value + &self.nodes[row.0].value.row(0);
        self.push(
            v,
            vec![a.0, row.0],
            Some(Box::new(|args: &BackArgs| {
                let row_grad = args.grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![args.grad.clone(), row_grad]
            })),
        )
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.dot(&*self.nodes[b.0].value);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|args: &BackArgs| {
                let ga = args.grad.dot(&args.inputs[1].t());
                let gb = args.inputs[0].t().dot(args.grad);
                vec![ga, gb]
            })),
        )
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(v, vec![a.0], Some(Box::new(|args: &BackArgs| vec![args.grad.t().to_owned()])))
    }

    pub fn reshape(&mut self, a: TensorId, rows: usize, cols: usize) -> TensorId {
        let (r0, c0) = self.shape(a);
        assert_eq!(r0 * c0, rows * cols, "reshape element count mismatch");
        let v = self.nodes[a.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((rows, cols))
            .expect("reshape");
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                vec![args
                    .grad
                    .as_standard_layout()
                    .to_owned()
                    .into_shape_with_order((r0, c0))
                    .expect("reshape grad")]
            })),
        )
    }

    // ---- nonlinearities ----

    pub fn ln(&mut self, a: TensorId) -> TensorId {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|args: &BackArgs| vec![args.grad / args.inputs[0]])),
        )
    }

    /// GELU with the tanh approximation (smooth, so central finite
    /// differences converge everywhere).
    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let v = self.nodes[a.0].value.mapv(|x| {
            let u = C * (x + A * x * x * x);
            0.5 * x * (1.0 + u.tanh())
        });
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|args: &BackArgs| {
                let mut g = args.inputs[0].clone();
                g.zip_mut_with(args.grad, |x, &go| {
                    let u = C * (*x + A * *x * *x * *x);
                    let t = u.tanh();
                    let sech2 = 1.0 - t * t;
                    let du = C * (1.0 + 3.0 * A * *x * *x);
                    *x = go * (0.5 * (1.0 + t) + 0.5 * *x * sech2 * du);
                });
                vec![g]
            })),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn row_softmax(&mut self, a: TensorId) -> TensorId {
        let v = softmax_rows(&self.nodes[a.0].value);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|args: &BackArgs| {
                let s = args.output;
                let mut g = args.grad * s;
                let dot = g.sum_axis(Axis(1)); // row-wise sum of grad*s
                for (mut row, (&d, srow)) in
                    g.axis_iter_mut(Axis(0)).zip(dot.iter().zip(s.axis_iter(Axis(0))))
                {
                    row.zip_mut_with(&srow, |gi, &si| *gi -= d * si);
                }
                vec![g]
            })),
        )
    }

    /// Row-wise log-softmax.
    pub fn row_log_softmax(&mut self, a: TensorId) -> TensorId {
        let x = &self.nodes[a.0].value;
        let mut v = (**x).clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
            row.mapv_inplace(|x| x - lse);
        }
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|args: &BackArgs| {
                // d lsm_j / d x_k = delta_jk - softmax_k
                let s = args.output.mapv(f64::exp);
                let rowsum = args.grad.sum_axis(Axis(1));
                let mut g = args.grad.clone();
                for (mut row, (&rs, srow)) in
                    g.axis_iter_mut(Axis(0)).zip(rowsum.iter().zip(s.axis_iter(Axis(0))))
                {
                    row.zip_mut_with(&srow, |gi, &si| *gi -= rs * si);
                }
                vec![g]
            })),
        )
    }

    /// Per-row layer normalization with learned gain and bias (`1 x n` each).
    pub fn layer_norm(&mut self, a: TensorId, gain: TensorId, bias: TensorId, eps: f64) -> TensorId {
        let x = &*self.nodes[a.0].value;
        let g_row = self.nodes[gain.0].value.row(0).to_owned();
        let b_row = self.nodes[bias.0].value.row(0).to_owned();
        let n = x.ncols() as f64;
        let mut v = x.clone();
        for mut row in v.axis_iter_mut(Axis(0)) {
            let mean = row.sum() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - mean) * inv * g_row[j] + b_row[j];
            }
        }
        self.push(
            v,
            vec![a.0, gain.0, bias.0],
            Some(Box::new(move |args: &BackArgs| {
                let x = args.inputs[0];
                let gain = args.inputs[1].row(0);
                let n = x.ncols() as f64;
                let mut gx = Array2::zeros(x.raw_dim());
                let mut ggain = Array1::<f64>::zeros(x.ncols());
                let mut gbias = Array1::<f64>::zeros(x.ncols());
                for (i, xrow) in x.axis_iter(Axis(0)).enumerate() {
                    let grow = args.grad.row(i);
                    let mean = xrow.sum() / n;
                    let var = xrow.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat_j = (x_j - mean) * inv
                    let xhat: Vec<f64> = xrow.iter().map(|&x| (x - mean) * inv).collect();
                    let gh: Vec<f64> =
                        grow.iter().zip(gain.iter()).map(|(&go, &g)| go * g).collect();
                    let mean_gh = gh.iter().sum::<f64>() / n;
                    let mean_gh_xhat =
                        gh.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..x.ncols() {
                        gx[(i, j)] = inv * (gh[j] - mean_gh - xhat[j] * mean_gh_xhat);
                        ggain[j] += grow[j] * xhat[j];
                        gbias[j] += grow[j];
                    }
                }
                vec![gx, ggain.insert_axis(Axis(0)), gbias.insert_axis(Axis(0))]
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s = self.nodes[a.0].value.sum();
        let shape = self.shape(a);
        self.push(
            Array2::from_elem((1, 1), s),
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                vec![Array2::from_elem(shape, args.grad[(0, 0)])]
            })),
        )
    }

    pub fn mean_all(&mut self, a: TensorId) -> TensorId {
        let (r, c) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (r * c) as f64)
    }

    /// Column means: `m x n -> 1 x n`.
    pub fn mean_axis0(&mut self, a: TensorId) -> TensorId {
        let x = &self.nodes[a.0].value;
        let m = x.nrows();
        let v = x.mean_axis(Axis(0)).expect("nonempty").insert_axis(Axis(0));
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                let g = args.grad.row(0).to_owned() / m as f64;
                let mut out = Array2::zeros((m, g.len()));
                for mut row in out.axis_iter_mut(Axis(0)) {
                    row.assign(&g);
                }
                vec![out]
            })),
        )
    }

    // ---- structural ops ----

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let x = &self.nodes[a.0].value;
        let (rows, cols) = (x.nrows(), x.ncols());
        assert!(start + len <= cols);
        let v = x.slice(ndarray::s![.., start..start + len]).to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                let mut g = Array2::zeros((rows, cols));
                g.slice_mut(ndarray::s![.., start..start + len]).assign(args.grad);
                vec![g]
            })),
        )
    }

    pub fn slice_rows(&mut self, a: TensorId, start: usize, len: usize) -> TensorId {
        let x = &self.nodes[a.0].value;
        let (rows, cols) = (x.nrows(), x.ncols());
        assert!(start + len <= rows);
        let v = x.slice(ndarray::s![start..start + len, ..]).to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                let mut g = Array2::zeros((rows, cols));
                g.slice_mut(ndarray::s![start..start + len, ..]).assign(args.grad);
                vec![g]
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut v = Array2::zeros((rows, total));
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            v.slice_mut(ndarray::s![.., off..off + w]).assign(&self.nodes[p.0].value);
            off += w;
        }
        self.push(
            v,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |args: &BackArgs| {
                let mut out = Vec::with_capacity(widths.len());
                let mut off = 0;
                for &w in &widths {
                    out.push(args.grad.slice(ndarray::s![.., off..off + w]).to_owned());
                    off += w;
                }
                out
            })),
        )
    }

    /// Gather rows of an embedding table: `ids` select rows of `table`.
    pub fn embedding(&mut self, table: TensorId, ids: &[usize]) -> TensorId {
        let t = &self.nodes[table.0].value;
        let (v_rows, dim) = (t.nrows(), t.ncols());
        let mut v = Array2::zeros((ids.len(), dim));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < v_rows, "embedding id {} out of range {}", id, v_rows);
            v.row_mut(i).assign(&t.row(id));
        }
        let ids = ids.to_vec();
        self.push(
            v,
            vec![table.0],
            Some(Box::new(move |args: &BackArgs| {
                let mut g = Array2::zeros((v_rows, dim));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = g.row_mut(id);
                    row += &args.grad.row(i);
                }
                vec![g]
            })),
        )
    }

    /// Mean-pool row spans: output row i is the mean of rows `s..=e` of `a`.
    /// Spans are inclusive and must lie within the input.
    pub fn span_means(&mut self, a: TensorId, spans: &[(usize, usize)]) -> TensorId {
        let x = &self.nodes[a.0].value;
        let (rows, dim) = (x.nrows(), x.ncols());
        let mut v = Array2::zeros((spans.len(), dim));
        for (i, &(s, e)) in spans.iter().enumerate() {
            assert!(s <= e && e < rows, "span ({s},{e}) out of range {rows}");
            let w = 1.0 / (e - s + 1) as f64;
            for r in s..=e {
                v.row_mut(i).scaled_add(w, &x.row(r));
            }
        }
        let spans = spans.to_vec();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                let mut g = Array2::zeros((rows, dim));
                for (i, &(s, e)) in spans.iter().enumerate() {
                    let w = 1.0 / (e - s + 1) as f64;
                    for r in s..=e {
                        g.row_mut(r).scaled_add(w, &args.grad.row(i));
                    }
                }
                vec![g]
            })),
        )
    }

    /// Sliding-window extraction for 1-d convolution. Input `L x C`, output
    /// `L_out x (k*C)` with `L_out = (L + 2*pad - k) / stride + 1`; window
    /// element `t` of channel `c` lands in column `t*C + c`. Out-of-range
    /// positions read zero.
    pub fn unfold1d(&mut self, a: TensorId, k: usize, stride: usize, pad: usize) -> TensorId {
        let x = &self.nodes[a.0].value;
        let (l, c) = (x.nrows(), x.ncols());
        assert!(l + 2 * pad >= k, "input too short for kernel");
        let l_out = (l + 2 * pad - k) / stride + 1;
        let mut v = Array2::zeros((l_out, k * c));
        for j in 0..l_out {
            for t in 0..k {
                let src = (j * stride + t) as isize - pad as isize;
                if src >= 0 && (src as usize) < l {
                    v.slice_mut(ndarray::s![j, t * c..(t + 1) * c])
                        .assign(&x.row(src as usize));
                }
            }
        }
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                let mut g = Array2::zeros((l, c));
                for j in 0..l_out {
                    for t in 0..k {
                        let src = (j * stride + t) as isize - pad as isize;
                        if src >= 0 && (src as usize) < l {
                            let mut row = g.row_mut(src as usize);
                            row += &args.grad.slice(ndarray::s![j, t * c..(t + 1) * c]);
                        }
                    }
                }
                vec![g]
            })),
        )
    }

    /// Adjoint of [`Tape::unfold1d`]: scatter-add windows back to a sequence
    /// of length `l_out`. Used to build transposed convolutions.
    pub fn fold1d(
        &mut self,
        a: TensorId,
        k: usize,
        stride: usize,
        pad: usize,
        l_out: usize,
    ) -> TensorId {
        let x = &self.nodes[a.0].value;
        let lw = x.nrows();
        assert_eq!(x.ncols() % k, 0, "fold1d expects k*C columns");
        let c = x.ncols() / k;
        let mut v = Array2::zeros((l_out, c));
        for j in 0..lw {
            for t in 0..k {
                let dst = (j * stride + t) as isize - pad as isize;
                if dst >= 0 && (dst as usize) < l_out {
                    let mut row = v.row_mut(dst as usize);
                    row += &x.slice(ndarray::s![j, t * c..(t + 1) * c]);
                }
            }
        }
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |args: &BackArgs| {
                let mut g = Array2::zeros((lw, k * c));
                for j in 0..lw {
                    for t in 0..k {
                        let dst = (j * stride + t) as isize - pad as isize;
                        if dst >= 0 && (dst as usize) < l_out {
                            g.slice_mut(ndarray::s![j, t * c..(t + 1) * c])
                                .assign(&args.grad.row(dst as usize));
                        }
                    }
                }
                vec![g]
            })),
        )
    }

    /// Weighted negative log-likelihood: `-sum_m w_m * logp[m, target_m] / sum_m w_m`.
    /// `logp` must already be log-probabilities (compose with
    /// [`Tape::row_log_softmax`]). Weight 0 drops a position (pad masking).
    pub fn masked_nll(&mut self, logp: TensorId, targets: &[usize], weights: &[f64]) -> TensorId {
        let x = &self.nodes[logp.0].value;
        assert_eq!(targets.len(), x.nrows());
        assert_eq!(weights.len(), x.nrows());
        let wsum: f64 = weights.iter().sum();
        assert!(wsum > 0.0, "masked_nll requires at least one unmasked position");
        let mut loss = 0.0;
        for (m, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            loss -= w * x[(m, t)];
        }
        loss /= wsum;
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        let shape = (x.nrows(), x.ncols());
        self.push(
            Array2::from_elem((1, 1), loss),
            vec![logp.0],
            Some(Box::new(move |args: &BackArgs| {
                let go = args.grad[(0, 0)];
                let mut g = Array2::zeros(shape);
                for (m, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                    g[(m, t)] = -go * w / wsum;
                }
                vec![g]
            })),
        )
    }

    /// Backpropagate from a scalar root; returns parameter gradients.
    pub fn backward(&self, root: TensorId, n_params: usize) -> ParamGrads {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(back) = &node.backward {
                let inputs: Vec<&Array2<f64>> =
                    node.parents.iter().map(|&p| &*self.nodes[p].value).collect();
                let args = BackArgs { grad: &grad, inputs: &inputs, output: &node.value };
                let parent_grads = back(&args);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, pg) in node.parents.iter().zip(parent_grads) {
                    match &mut grads[p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
            // Keep gradients of parameter leaves; they are re-taken below.
            if self.param_nodes.iter().any(|&(n, _)| n == idx) {
                grads[idx] = Some(grad);
            }
        }
        let mut out = ParamGrads::zeros(n_params);
        for &(nid, pid) in &self.param_nodes {
            if let Some(g) = &grads[nid] {
                match &mut out.grads[pid] {
                    Some(acc) => *acc += g,
                    slot => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

/// Row-wise softmax of a plain array (no tape).
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut v = x.clone();
    for mut row in v.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - m).exp());
        let s = row.sum();
        row.mapv_inplace(|x| x / s);
    }
    v
}

/// Index of the maximum entry per row. Ties resolve to the lowest index.
pub fn argmax_rows(x: &Array2<f64>) -> Vec<usize> {
    x.axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv { (i, v) } else { (bi, bv) }
                })
                .0
        })
        .collect()
}
