//! Define-by-run tape over 2-D value buffers.
//!
//! Every node stores its forward values eagerly; `backward` replays the tape
//! in reverse creation order. The tape of one forward pass is confined to one
//! thread; batch parallelism happens across independent tapes.

use std::collections::BTreeMap;

use super::Real;

/// Handle to a tape node.
pub type NodeId = usize;

/// Parameter-name → gradient buffer, in deterministic (sorted) order.
pub type GradMap<F> = BTreeMap<String, Vec<F>>;

pub(crate) enum Op<F: Real> {
    /// Constant or parameter leaf. `param` carries the parameter name for
    /// gradient harvesting.
    Leaf { param: Option<String> },
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// `a` is (n, m), `bias` is (1, m), added to every row.
    AddRowBroadcast { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: F },
    AddScalar { a: NodeId },
    Transpose { a: NodeId },
    Reshape { a: NodeId },
    GatherRows { a: NodeId, idx: Vec<usize> },
    VStack { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    /// Row-wise softmax over the `allowed` entries; disallowed outputs are 0.
    MaskedSoftmaxRows { a: NodeId, allowed: Vec<bool> },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<F>, inv_std: Vec<F> },
    Gelu { a: NodeId },
    Sqrt { a: NodeId },
    SumRows { a: NodeId },
    MeanRows { a: NodeId },
    MeanAll { a: NodeId },
    SumAll { a: NodeId },
    /// Element-wise max over each row group; `argmax` records the winning row
    /// per (group, column).
    MaxPoolSegments { a: NodeId, argmax: Vec<usize> },
    Rope { a: NodeId, positions: Vec<usize> },
    SmoothL1Mean { a: NodeId },
    Softplus { a: NodeId },
    Abs { a: NodeId },
    /// Class-weighted cross entropy with weighted-mean reduction.
    WeightedCrossEntropy { logits: NodeId, labels: Vec<usize>, weights: Vec<F>, probs: Vec<F> },
}

pub(crate) struct Node<F: Real> {
    pub values: Vec<F>,
    pub rows: usize,
    pub cols: usize,
    pub op: Op<F>,
}

/// Reverse-mode tape. Nodes are appended in forward order; `backward` walks
/// them in reverse.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    /// When set, every op asserts its outputs are finite.
    pub checked: bool,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), checked: false }
    }

    pub fn values(&self, id: NodeId) -> &[F] {
        &self.nodes[id].values
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn scalar_value(&self, id: NodeId) -> F {
        debug_assert_eq!(self.nodes[id].values.len(), 1);
        self.nodes[id].values[0]
    }

    fn push(&mut self, values: Vec<F>, rows: usize, cols: usize, op: Op<F>) -> NodeId {
        debug_assert_eq!(values.len(), rows * cols, "node shape/value mismatch");
        if self.checked {
            assert!(values.iter().all(|v| v.is_finite()), "non-finite value produced by op");
        }
        self.nodes.push(Node { values, rows, cols, op });
        self.nodes.len() - 1
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, values: Vec<F>, rows: usize, cols: usize) -> NodeId {
        self.push(values, rows, cols, Op::Leaf { param: None })
    }

    pub fn scalar(&mut self, v: F) -> NodeId {
        self.input(vec![v], 1, 1)
    }

    /// Parameter leaf; gradients are harvested under `name`.
    pub fn param(&mut self, name: &str, values: Vec<F>, rows: usize, cols: usize) -> NodeId {
        self.push(values, rows, cols, Op::Leaf { param: Some(name.to_string()) })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims: {k} vs {k2}");
        let mut out = vec![F::ZERO; n * m];
        let av = &self.nodes[a].values;
        let bv = &self.nodes[b].values;
        for i in 0..n {
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * m..(p + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for j in 0..m {
                    orow[j] += aip * brow[j];
                }
            }
        }
        self.push(out, n, m, Op::Matmul { a, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(b), (n, m), "add shape mismatch");
        let out: Vec<F> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| x + y)
            .collect();
        self.push(out, n, m, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(b), (n, m), "sub shape mismatch");
        let out: Vec<F> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| x - y)
            .collect();
        self.push(out, n, m, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(b), (n, m), "mul shape mismatch");
        let out: Vec<F> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| x * y)
            .collect();
        self.push(out, n, m, Op::Mul { a, b })
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(bias), (1, m), "bias must be (1, cols)");
        let mut out = self.nodes[a].values.clone();
        let bv = self.nodes[bias].values.clone();
        for i in 0..n {
            for j in 0..m {
                out[i * m + j] = out[i * m + j] + bv[j];
            }
        }
        self.push(out, n, m, Op::AddRowBroadcast { a, bias })
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> NodeId {
        let (n, m) = self.shape(a);
        let out: Vec<F> = self.nodes[a].values.iter().map(|&x| x * c).collect();
        self.push(out, n, m, Op::Scale { a, c })
    }

    pub fn add_scalar(&mut self, a: NodeId, c: F) -> NodeId {
        let (n, m) = self.shape(a);
        let out: Vec<F> = self.nodes[a].values.iter().map(|&x| x + c).collect();
        self.push(out, n, m, Op::AddScalar { a })
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let av = &self.nodes[a].values;
        let mut out = vec![F::ZERO; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av[i * m + j];
            }
        }
        self.push(out, m, n, Op::Transpose { a })
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(n * m, rows * cols, "reshape must preserve element count");
        let out = self.nodes[a].values.clone();
        self.push(out, rows, cols, Op::Reshape { a })
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let (n, m) = self.shape(a);
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            assert!(i < n, "gather row {i} out of range {n}");
            out.extend_from_slice(&self.nodes[a].values[i * m..(i + 1) * m]);
        }
        self.push(out, idx.len(), m, Op::GatherRows { a, idx: idx.to_vec() })
    }

    pub fn vstack(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let m = self.shape(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            assert_eq!(c, m, "vstack column mismatch");
            rows += r;
            out.extend_from_slice(&self.nodes[p].values);
        }
        self.push(out, rows, m, Op::VStack { parts: parts.to_vec() })
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let (n, m) = self.shape(a);
        assert!(start + len <= m, "column slice out of range");
        let av = &self.nodes[a].values;
        let mut out = Vec::with_capacity(n * len);
        for i in 0..n {
            out.extend_from_slice(&av[i * m + start..i * m + start + len]);
        }
        self.push(out, n, len, Op::SliceCols { a, start, len })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let n = self.shape(parts[0]).0;
        let mut m = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            assert_eq!(r, n, "concat_cols row mismatch");
            m += c;
        }
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for &p in parts {
                let c = self.shape(p).1;
                out.extend_from_slice(&self.nodes[p].values[i * c..(i + 1) * c]);
            }
        }
        self.push(out, n, m, Op::ConcatCols { parts: parts.to_vec() })
    }

    /// Row-wise softmax over allowed entries. Every row must have at least one
    /// allowed entry (checked by the attention builder). Disallowed entries
    /// contribute exactly zero.
    pub fn masked_softmax_rows(&mut self, a: NodeId, allowed: &[bool]) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(allowed.len(), n * m, "mask shape mismatch");
        let av = &self.nodes[a].values;
        let mut out = vec![F::ZERO; n * m];
        for i in 0..n {
            let row = &av[i * m..(i + 1) * m];
            let arow = &allowed[i * m..(i + 1) * m];
            let mut mx: Option<F> = None;
            for j in 0..m {
                if arow[j] {
                    mx = Some(match mx {
                        Some(v) => v.max(row[j]),
                        None => row[j],
                    });
                }
            }
            let mx = mx.expect("masked_softmax_rows: fully masked row");
            let mut denom = F::ZERO;
            for j in 0..m {
                if arow[j] {
                    let e = (row[j] - mx).exp();
                    out[i * m + j] = e;
                    denom += e;
                }
            }
            for j in 0..m {
                if arow[j] {
                    out[i * m + j] = out[i * m + j] / denom;
                }
            }
        }
        self.push(out, n, m, Op::MaskedSoftmaxRows { a, allowed: allowed.to_vec() })
    }

    /// Row-wise layer norm with learned per-column gain/shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(self.shape(gamma), (1, m));
        assert_eq!(self.shape(beta), (1, m));
        let eps = F::from_f64(1e-5);
        let av = &self.nodes[a].values;
        let gv = &self.nodes[gamma].values;
        let bv = &self.nodes[beta].values;
        let mut out = vec![F::ZERO; n * m];
        let mut xhat = vec![F::ZERO; n * m];
        let mut inv_std = vec![F::ZERO; n];
        let inv_m = F::ONE / F::from_usize(m);
        for i in 0..n {
            let row = &av[i * m..(i + 1) * m];
            let mut mean = F::ZERO;
            for &x in row {
                mean += x;
            }
            mean = mean * inv_m;
            let mut var = F::ZERO;
            for &x in row {
                let d = x - mean;
                var += d * d;
            }
            var = var * inv_m;
            let istd = F::ONE / (var + eps).sqrt();
            inv_std[i] = istd;
            for j in 0..m {
                let xh = (row[j] - mean) * istd;
                xhat[i * m + j] = xh;
                out[i * m + j] = xh * gv[j] + bv[j];
            }
        }
        self.push(out, n, m, Op::LayerNorm { a, gamma, beta, xhat, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let out: Vec<F> = self.nodes[a].values.iter().map(|&x| gelu_fwd(x)).collect();
        self.push(out, n, m, Op::Gelu { a })
    }

    /// Element-wise square root. Inputs must be positive (callers add an
    /// epsilon first).
    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let out: Vec<F> = self.nodes[a].values.iter().map(|&x| x.sqrt()).collect();
        self.push(out, n, m, Op::Sqrt { a })
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let av = &self.nodes[a].values;
        let mut out = vec![F::ZERO; n];
        for i in 0..n {
            for j in 0..m {
                out[i] += av[i * m + j];
            }
        }
        self.push(out, n, 1, Op::SumRows { a })
    }

    /// Column means: (n, m) → (1, m).
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let av = &self.nodes[a].values;
        let inv_n = F::ONE / F::from_usize(n);
        let mut out = vec![F::ZERO; m];
        for i in 0..n {
            for j in 0..m {
                out[j] += av[i * m + j];
            }
        }
        for v in &mut out {
            *v = *v * inv_n;
        }
        self.push(out, 1, m, Op::MeanRows { a })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let mut s = F::ZERO;
        for &x in &self.nodes[a].values {
            s += x;
        }
        let out = s / F::from_usize(n * m);
        self.push(vec![out], 1, 1, Op::MeanAll { a })
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let mut s = F::ZERO;
        for &x in &self.nodes[a].values {
            s += x;
        }
        self.push(vec![s], 1, 1, Op::SumAll { a })
    }

    /// Element-wise max over each contiguous row group; ties go to the first
    /// row. `groups` are half-open row ranges covering the input.
    pub fn max_pool_segments(&mut self, a: NodeId, groups: &[(usize, usize)]) -> NodeId {
        let (n, m) = self.shape(a);
        let av = &self.nodes[a].values;
        let k = groups.len();
        let mut out = vec![F::ZERO; k * m];
        let mut argmax = vec![0usize; k * m];
        for (g, &(s, e)) in groups.iter().enumerate() {
            assert!(s < e && e <= n, "bad pooling group ({s},{e}) for {n} rows");
            for j in 0..m {
                let mut best = av[s * m + j];
                let mut bi = s;
                for i in s + 1..e {
                    if av[i * m + j] > best {
                        best = av[i * m + j];
                        bi = i;
                    }
                }
                out[g * m + j] = best;
                argmax[g * m + j] = bi;
            }
        }
        self.push(out, k, m, Op::MaxPoolSegments { a, argmax })
    }

    /// Rotary position encoding over adjacent pairs (2i, 2i+1) with
    /// frequencies `10000^(-2i/d)`.
    pub fn rope(&mut self, a: NodeId, positions: &[usize]) -> NodeId {
        let (n, m) = self.shape(a);
        assert_eq!(positions.len(), n, "one position per row");
        assert_eq!(m % 2, 0, "rope requires even dimension");
        let av = &self.nodes[a].values;
        let mut out = vec![F::ZERO; n * m];
        for i in 0..n {
            let pos = F::from_usize(positions[i]);
            for p in 0..m / 2 {
                let theta = rope_freq::<F>(p, m);
                let ang = pos * theta;
                let (c, s) = (ang.cos(), ang.sin());
                let x = av[i * m + 2 * p];
                let y = av[i * m + 2 * p + 1];
                out[i * m + 2 * p] = x * c - y * s;
                out[i * m + 2 * p + 1] = x * s + y * c;
            }
        }
        self.push(out, n, m, Op::Rope { a, positions: positions.to_vec() })
    }

    /// Mean smooth-L1 (beta = 1) over all elements.
    pub fn smooth_l1_mean(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let half = F::from_f64(0.5);
        let mut s = F::ZERO;
        for &x in &self.nodes[a].values {
            let ax = x.abs();
            s += if ax < F::ONE { half * x * x } else { ax - half };
        }
        let out = s / F::from_usize(n * m);
        self.push(vec![out], 1, 1, Op::SmoothL1Mean { a })
    }

    /// ln(1 + exp(x)), stabilized for large |x|.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let out: Vec<F> = self.nodes[a].values.iter().map(|&x| softplus_fwd(x)).collect();
        self.push(out, n, m, Op::Softplus { a })
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let (n, m) = self.shape(a);
        let out: Vec<F> = self.nodes[a].values.iter().map(|&x| x.abs()).collect();
        self.push(out, n, m, Op::Abs { a })
    }

    /// Class-weighted cross entropy over per-row logits with weighted-mean
    /// reduction: `sum_i w[y_i] * (-log p_i[y_i]) / sum_i w[y_i]`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        weights: &[F],
    ) -> NodeId {
        let (n, c) = self.shape(logits);
        assert_eq!(labels.len(), n, "one label per row");
        let lv = &self.nodes[logits].values;
        let mut probs = vec![F::ZERO; n * c];
        let mut loss = F::ZERO;
        let mut wsum = F::ZERO;
        for i in 0..n {
            let row = &lv[i * c..(i + 1) * c];
            let mut mx = row[0];
            for &x in row {
                mx = mx.max(x);
            }
            let mut denom = F::ZERO;
            for j in 0..c {
                let e = (row[j] - mx).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for j in 0..c {
                probs[i * c + j] = probs[i * c + j] / denom;
            }
            let y = labels[i];
            assert!(y < c, "label {y} out of range {c}");
            let w = weights[y];
            loss += w * -(probs[i * c + y].ln());
            wsum += w;
        }
        let out = loss / wsum;
        self.push(
            vec![out],
            1,
            1,
            Op::WeightedCrossEntropy {
                logits,
                labels: labels.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    /// Reverse pass from a scalar `loss` node. Returns gradients for every
    /// parameter leaf, keyed by name; parameters reached along several paths
    /// accumulate.
    pub fn backward(&self, loss: NodeId) -> GradMap<F> {
        assert_eq!(self.nodes[loss].values.len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![F::ONE]);

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[id] = Some(g); // keep for harvesting
                }
                Op::Matmul { a, b } => {
                    let (n, k) = self.shape(*a);
                    let m = self.shape(*b).1;
                    let av = &self.nodes[*a].values;
                    let bv = &self.nodes[*b].values;
                    {
                        let ga = Self::grad_buf(&mut grads, *a, n * k);
                        for i in 0..n {
                            for j in 0..m {
                                let gij = g[i * m + j];
                                for p in 0..k {
                                    ga[i * k + p] += gij * bv[p * m + j];
                                }
                            }
                        }
                    }
                    {
                        let gb = Self::grad_buf(&mut grads, *b, k * m);
                        for p in 0..k {
                            for i in 0..n {
                                let aip = av[i * k + p];
                                for j in 0..m {
                                    gb[p * m + j] += aip * g[i * m + j];
                                }
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    Self::accum(&mut grads, *a, &g);
                    Self::accum(&mut grads, *b, &g);
                }
                Op::Sub { a, b } => {
                    Self::accum(&mut grads, *a, &g);
                    let neg: Vec<F> = g.iter().map(|&x| -x).collect();
                    Self::accum(&mut grads, *b, &neg);
                }
                Op::Mul { a, b } => {
                    let bv = self.nodes[*b].values.clone();
                    let av = self.nodes[*a].values.clone();
                    let ga: Vec<F> = g.iter().zip(&bv).map(|(&x, &y)| x * y).collect();
                    let gb: Vec<F> = g.iter().zip(&av).map(|(&x, &y)| x * y).collect();
                    Self::accum(&mut grads, *a, &ga);
                    Self::accum(&mut grads, *b, &gb);
                }
                Op::AddRowBroadcast { a, bias } => {
                    Self::accum(&mut grads, *a, &g);
                    let (n, m) = (node.rows, node.cols);
                    let gb = Self::grad_buf(&mut grads, *bias, m);
                    for i in 0..n {
                        for j in 0..m {
                            gb[j] += g[i * m + j];
                        }
                    }
                }
                Op::Scale { a, c } => {
                    let ga: Vec<F> = g.iter().map(|&x| x * *c).collect();
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::AddScalar { a } => {
                    Self::accum(&mut grads, *a, &g);
                }
                Op::Transpose { a } => {
                    let (n, m) = self.shape(*a);
                    let mut ga = vec![F::ZERO; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            ga[i * m + j] = g[j * n + i];
                        }
                    }
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::Reshape { a } => {
                    Self::accum(&mut grads, *a, &g);
                }
                Op::GatherRows { a, idx } => {
                    let (n, m) = self.shape(*a);
                    let ga = Self::grad_buf(&mut grads, *a, n * m);
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..m {
                            ga[i * m + j] += g[r * m + j];
                        }
                    }
                }
                Op::VStack { parts } => {
                    let m = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let r = self.shape(p).0;
                        Self::accum(&mut grads, p, &g[off * m..(off + r) * m]);
                        off += r;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let (n, m) = self.shape(*a);
                    let ga = Self::grad_buf(&mut grads, *a, n * m);
                    for i in 0..n {
                        for j in 0..*len {
                            ga[i * m + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let n = node.rows;
                    let m = node.cols;
                    let mut off = 0;
                    for &p in parts {
                        let c = self.shape(p).1;
                        let mut gp = vec![F::ZERO; n * c];
                        for i in 0..n {
                            for j in 0..c {
                                gp[i * c + j] = g[i * m + off + j];
                            }
                        }
                        Self::accum(&mut grads, p, &gp);
                        off += c;
                    }
                }
                Op::MaskedSoftmaxRows { a, allowed } => {
                    let (n, m) = (node.rows, node.cols);
                    let sv = &node.values;
                    let mut ga = vec![F::ZERO; n * m];
                    for i in 0..n {
                        let mut dot = F::ZERO;
                        for j in 0..m {
                            if allowed[i * m + j] {
                                dot += g[i * m + j] * sv[i * m + j];
                            }
                        }
                        for j in 0..m {
                            if allowed[i * m + j] {
                                ga[i * m + j] = sv[i * m + j] * (g[i * m + j] - dot);
                            }
                        }
                    }
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::LayerNorm { a, gamma, beta, xhat, inv_std } => {
                    let (n, m) = (node.rows, node.cols);
                    let gv = self.nodes[*gamma].values.clone();
                    let inv_m = F::ONE / F::from_usize(m);
                    let mut ga = vec![F::ZERO; n * m];
                    let mut ggamma = vec![F::ZERO; m];
                    let mut gbeta = vec![F::ZERO; m];
                    for i in 0..n {
                        let mut mean_gy = F::ZERO;
                        let mut mean_gy_xhat = F::ZERO;
                        for j in 0..m {
                            let gy = g[i * m + j] * gv[j];
                            mean_gy += gy;
                            mean_gy_xhat += gy * xhat[i * m + j];
                            ggamma[j] += g[i * m + j] * xhat[i * m + j];
                            gbeta[j] += g[i * m + j];
                        }
                        mean_gy = mean_gy * inv_m;
                        mean_gy_xhat = mean_gy_xhat * inv_m;
                        for j in 0..m {
                            let gy = g[i * m + j] * gv[j];
                            ga[i * m + j] =
                                (gy - mean_gy - xhat[i * m + j] * mean_gy_xhat) * inv_std[i];
                        }
                    }
                    Self::accum(&mut grads, *a, &ga);
                    Self::accum(&mut grads, *gamma, &ggamma);
                    Self::accum(&mut grads, *beta, &gbeta);
                }
                Op::Gelu { a } => {
                    let av = self.nodes[*a].values.clone();
                    let ga: Vec<F> =
                        g.iter().zip(&av).map(|(&gi, &x)| gi * gelu_grad(x)).collect();
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::Sqrt { a } => {
                    let half = F::from_f64(0.5);
                    let ga: Vec<F> = g
                        .iter()
                        .zip(&node.values)
                        .map(|(&gi, &y)| gi * half / y)
                        .collect();
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::SumRows { a } => {
                    let (n, m) = self.shape(*a);
                    let mut ga = vec![F::ZERO; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            ga[i * m + j] = g[i];
                        }
                    }
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::MeanRows { a } => {
                    let (n, m) = self.shape(*a);
                    let inv_n = F::ONE / F::from_usize(n);
                    let mut ga = vec![F::ZERO; n * m];
                    for i in 0..n {
                        for j in 0..m {
                            ga[i * m + j] = g[j] * inv_n;
                        }
                    }
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::MeanAll { a } => {
                    let (n, m) = self.shape(*a);
                    let c = g[0] / F::from_usize(n * m);
                    let ga = vec![c; n * m];
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::SumAll { a } => {
                    let (n, m) = self.shape(*a);
                    let ga = vec![g[0]; n * m];
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::MaxPoolSegments { a, argmax } => {
                    let (n, m) = self.shape(*a);
                    let ga = Self::grad_buf(&mut grads, *a, n * m);
                    for (o, &src) in argmax.iter().enumerate() {
                        let j = o % m;
                        ga[src * m + j] += g[o];
                    }
                }
                Op::Rope { a, positions } => {
                    // Inverse rotation: rotate the gradient by -angle.
                    let (n, m) = (node.rows, node.cols);
                    let mut ga = vec![F::ZERO; n * m];
                    for i in 0..n {
                        let pos = F::from_usize(positions[i]);
                        for p in 0..m / 2 {
                            let theta = rope_freq::<F>(p, m);
                            let ang = pos * theta;
                            let (c, s) = (ang.cos(), ang.sin());
                            let gx = g[i * m + 2 * p];
                            let gy = g[i * m + 2 * p + 1];
                            ga[i * m + 2 * p] = gx * c + gy * s;
                            ga[i * m + 2 * p + 1] = -gx * s + gy * c;
                        }
                    }
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::SmoothL1Mean { a } => {
                    let av = self.nodes[*a].values.clone();
                    let scale = g[0] / F::from_usize(av.len());
                    let ga: Vec<F> = av
                        .iter()
                        .map(|&x| scale * x.max(-F::ONE).min(F::ONE))
                        .collect();
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::Softplus { a } => {
                    let av = self.nodes[*a].values.clone();
                    let ga: Vec<F> = g
                        .iter()
                        .zip(&av)
                        .map(|(&gi, &x)| gi * logistic(x))
                        .collect();
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::Abs { a } => {
                    let av = self.nodes[*a].values.clone();
                    let ga: Vec<F> = g
                        .iter()
                        .zip(&av)
                        .map(|(&gi, &x)| {
                            if x > F::ZERO {
                                gi
                            } else if x < F::ZERO {
                                -gi
                            } else {
                                F::ZERO
                            }
                        })
                        .collect();
                    Self::accum(&mut grads, *a, &ga);
                }
                Op::WeightedCrossEntropy { logits, labels, weights, probs } => {
                    let (n, c) = self.shape(*logits);
                    let mut wsum = F::ZERO;
                    for &y in labels {
                        wsum += weights[y];
                    }
                    let scale = g[0] / wsum;
                    let mut ga = vec![F::ZERO; n * c];
                    for i in 0..n {
                        let y = labels[i];
                        let w = weights[y];
                        for j in 0..c {
                            let ind = if j == y { F::ONE } else { F::ZERO };
                            ga[i * c + j] = scale * w * (probs[i * c + j] - ind);
                        }
                    }
                    Self::accum(&mut grads, *logits, &ga);
                }
            }
        }

        let mut out = GradMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &grads[id] {
                    match out.get_mut(name) {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(g) {
                                *a += *b;
                            }
                        }
                        None => {
                            out.insert(name.clone(), g.clone());
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_buf<'a>(grads: &'a mut [Option<Vec<F>>], id: NodeId, len: usize) -> &'a mut Vec<F> {
        grads[id].get_or_insert_with(|| vec![F::ZERO; len])
    }

    fn accum(grads: &mut [Option<Vec<F>>], id: NodeId, g: &[F]) {
        let buf = grads[id].get_or_insert_with(|| vec![F::ZERO; g.len()]);
        for (a, b) in buf.iter_mut().zip(g) {
            *a += *b;
        }
    }
}

fn logistic<F: Real>(x: F) -> F {
    if x >= F::ZERO {
        F::ONE / (F::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::ONE + e)
    }
}

fn softplus_fwd<F: Real>(x: F) -> F {
    x.max(F::ZERO) + (-(x.abs())).exp().ln_1p()
}

fn gelu_fwd<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let c = F::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = F::from_f64(0.044715);
    half * x * (F::ONE + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let c = F::from_f64(0.7978845608028654);
    let k = F::from_f64(0.044715);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::ONE + F::from_f64(3.0) * k * x * x);
    half * (F::ONE + t) + half * x * (F::ONE - t * t) * dinner
}

fn rope_freq<F: Real>(pair: usize, dim: usize) -> F {
    let base = F::from_f64(10000.0);
    let exponent = -(F::from_usize(2 * pair) / F::from_usize(dim));
    base.powf(exponent)
}
