//! Forward kernels and hand-derived backward rules for every tape op.
//!
//! Matmul rides on `matrixmultiply::sgemm`; transposed operands and
//! transposed gradient writes are expressed through strides, so no tensor is
//! ever materialized transposed. Everything else is plain loops.
//!
//! Backward rules recompute cheap intermediates (softmax probs inside
//! attention, layernorm row stats) from stored input values instead of
//! caching them, which keeps `Op` plain replayable metadata.

use std::sync::Arc;

use rand::Rng;

use super::{Tape, Tensor, TensorId};

/// Additive mask value for disallowed attention slots. Large negative instead
/// of -inf so masked rows cannot produce NaN via inf - inf.
/// Additive attention-mask value treated as minus infinity by softmax.
pub const MASK_NEG: f32 = -1e30;

/// Floor for logarithm arguments and norm denominators.
pub(crate) const LOG_FLOOR: f32 = 1e-12;

const GELU_C: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Matmul { a: TensorId, b: TensorId, ta: bool, tb: bool },
    AddBias { x: TensorId, bias: TensorId },
    SubBias { x: TensorId, bias: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Div { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f32 },
    AddScalar { x: TensorId, c: f32 },
    PowI { x: TensorId, n: i32 },
    Sqrt { x: TensorId },
    Ln { x: TensorId },
    LnOneMinus { x: TensorId },
    Exp { x: TensorId },
    Sigmoid { x: TensorId },
    Gelu { x: TensorId },
    Abs { x: TensorId },
    Clamp { x: TensorId, lo: f32, hi: f32 },
    SumAll { x: TensorId },
    MeanAll { x: TensorId },
    MeanAxis0 { x: TensorId },
    ConcatCols { a: TensorId, b: TensorId },
    RepeatRows { x: TensorId, times: usize },
    GatherRows { x: TensorId, idx: Arc<Vec<usize>> },
    Reshape { x: TensorId },
    Softmax { x: TensorId, mask: Option<Arc<Vec<f32>>> },
    L2NormRows { x: TensorId },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f32 },
    CumsumRows { x: TensorId },
    Dropout { x: TensorId, keep: Arc<Vec<f32>>, scale: f32 },
    Mha { q: TensorId, k: TensorId, v: TensorId, windows: usize, tokens: usize, heads: usize, causal: bool, pad: Option<Arc<Vec<f32>>> },
    PoolScores { keys: TensorId, query: TensorId, windows: usize, tokens: usize },
    RowWeightedSum { probs: TensorId, values: TensorId },
}

// ── GEMM plumbing ───────────────────────────────────────────────────────

/// C[m,n] = alpha * A * B + beta * C with explicit strides per operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize, k: usize, n: usize, alpha: f32,
    a: &[f32], rsa: isize, csa: isize,
    b: &[f32], rsb: isize, csb: isize,
    beta: f32,
    c: &mut [f32], rsc: isize, csc: isize,
) {
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            beta,
            c.as_mut_ptr(), rsc, csc,
        );
    }
}

/// Strides of a stored row-major [r, c] matrix, optionally viewed transposed.
fn strides(cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

// ── Recording methods ───────────────────────────────────────────────────

impl Tape {
    fn unary_shape(&mut self, x: TensorId, rows: usize, cols: usize, values: Vec<f32>, op: Op) -> TensorId {
        let rq = self.nodes[x].requires_grad;
        self.push(Tensor { rows, cols, values, requires_grad: rq, op })
    }

    fn unary(&mut self, x: TensorId, values: Vec<f32>, op: Op) -> TensorId {
        let (r, c) = self.shape(x);
        self.unary_shape(x, r, c, values, op)
    }

    fn map(&self, x: TensorId, f: impl Fn(f32) -> f32) -> Vec<f32> {
        self.nodes[x].values.iter().map(|&v| f(v)).collect()
    }

    /// out = op(a, ta) x op(b, tb) where `ta`/`tb` view the stored operand
    /// transposed. Inner dimensions must agree.
    pub fn matmul_t(&mut self, a: TensorId, b: TensorId, ta: bool, tb: bool) -> TensorId {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
        let (kb, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(ka, kb, "matmul inner dims disagree: {}x{} vs {}x{} (ta={ta}, tb={tb})", ar, ac, br, bc);
        let mut out = vec![0.0f32; m * n];
        let (rsa, csa) = strides(ac, ta);
        let (rsb, csb) = strides(bc, tb);
        gemm(m, ka, n, 1.0, &self.nodes[a].values, rsa, csa, &self.nodes[b].values, rsb, csb, 0.0, &mut out, n as isize, 1);
        let rq = self.any_requires(&[a, b]);
        self.push(Tensor { rows: m, cols: n, values: out, requires_grad: rq, op: Op::Matmul { a, b, ta, tb } })
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.matmul_t(a, b, false, false)
    }

    /// [r, c] + [1, c] broadcast over rows.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(bias), (1, c), "bias must be [1, cols]");
        let bv = &self.nodes[bias].values;
        let mut out = self.nodes[x].values.clone();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] += bv[j];
            }
        }
        let rq = self.any_requires(&[x, bias]);
        self.push(Tensor { rows: r, cols: c, values: out, requires_grad: rq, op: Op::AddBias { x, bias } })
    }

    /// [r, c] - [1, c] broadcast over rows.
    pub fn sub_bias(&mut self, x: TensorId, bias: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(bias), (1, c), "bias must be [1, cols]");
        let bv = &self.nodes[bias].values;
        let mut out = self.nodes[x].values.clone();
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] -= bv[j];
            }
        }
        let rq = self.any_requires(&[x, bias]);
        self.push(Tensor { rows: r, cols: c, values: out, requires_grad: rq, op: Op::SubBias { x, bias } })
    }

    fn binary_map(&mut self, a: TensorId, b: TensorId, f: impl Fn(f32, f32) -> f32, op: Op) -> TensorId {
        assert_eq!(self.shape(a), self.shape(b), "elementwise op needs equal shapes");
        let (r, c) = self.shape(a);
        let out: Vec<f32> = self.nodes[a]
            .values
            .iter()
            .zip(&self.nodes[b].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rq = self.any_requires(&[a, b]);
        self.push(Tensor { rows: r, cols: c, values: out, requires_grad: rq, op })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_map(a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_map(a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_map(a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> TensorId {
        self.binary_map(a, b, |x, y| x / y, Op::Div { a, b })
    }

    pub fn scale(&mut self, x: TensorId, c: f32) -> TensorId {
        let out = self.map(x, |v| v * c);
        self.unary(x, out, Op::Scale { x, c })
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f32) -> TensorId {
        let out = self.map(x, |v| v + c);
        self.unary(x, out, Op::AddScalar { x, c })
    }

    pub fn powi(&mut self, x: TensorId, n: i32) -> TensorId {
        assert!(n >= 2, "powi exponent must be >= 2; use identity or mul otherwise");
        let out = self.map(x, |v| v.powi(n));
        self.unary(x, out, Op::PowI { x, n })
    }

    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, |v| v.max(0.0).sqrt());
        self.unary(x, out, Op::Sqrt { x })
    }

    /// ln(max(x, floor)); the floor keeps gradients finite at zero.
    pub fn ln(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, |v| v.max(LOG_FLOOR).ln());
        self.unary(x, out, Op::Ln { x })
    }

    /// ln(max(1 - x, floor)), the survival-product building block.
    pub fn ln_one_minus(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, |v| (1.0 - v).max(LOG_FLOOR).ln());
        self.unary(x, out, Op::LnOneMinus { x })
    }

    pub fn exp(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, |v| v.exp());
        self.unary(x, out, Op::Exp { x })
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, sigmoid_stable);
        self.unary(x, out, Op::Sigmoid { x })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, gelu_tanh);
        self.unary(x, out, Op::Gelu { x })
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let out = self.map(x, f32::abs);
        self.unary(x, out, Op::Abs { x })
    }

    pub fn clamp(&mut self, x: TensorId, lo: f32, hi: f32) -> TensorId {
        assert!(lo < hi, "clamp bounds inverted");
        let out = self.map(x, |v| v.clamp(lo, hi));
        self.unary(x, out, Op::Clamp { x, lo, hi })
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f32 = self.nodes[x].values.iter().sum();
        self.unary_shape(x, 1, 1, vec![s], Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = self.nodes[x].numel() as f32;
        let s: f32 = self.nodes[x].values.iter().sum();
        self.unary_shape(x, 1, 1, vec![s / n], Op::MeanAll { x })
    }

    /// Column means: [r, c] -> [1, c].
    pub fn mean_axis0(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0f32; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += self.nodes[x].values[i * c + j];
            }
        }
        for o in out.iter_mut() {
            *o /= r as f32;
        }
        self.unary_shape(x, 1, c, out, Op::MeanAxis0 { x })
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "concat_cols needs equal row counts");
        let c = ca + cb;
        let mut out = vec![0.0f32; ra * c];
        for i in 0..ra {
            out[i * c..i * c + ca].copy_from_slice(&self.nodes[a].values[i * ca..(i + 1) * ca]);
            out[i * c + ca..(i + 1) * c].copy_from_slice(&self.nodes[b].values[i * cb..(i + 1) * cb]);
        }
        let rq = self.any_requires(&[a, b]);
        self.push(Tensor { rows: ra, cols: c, values: out, requires_grad: rq, op: Op::ConcatCols { a, b } })
    }

    /// Repeats each row `times` times consecutively: [r, c] -> [r*times, c].
    pub fn repeat_rows(&mut self, x: TensorId, times: usize) -> TensorId {
        assert!(times >= 1);
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(r * times * c);
        for i in 0..r {
            let row = &self.nodes[x].values[i * c..(i + 1) * c];
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        self.unary_shape(x, r * times, c, out, Op::RepeatRows { x, times })
    }

    pub fn gather_rows(&mut self, x: TensorId, idx: Vec<usize>) -> TensorId {
        let (r, c) = self.shape(x);
        assert!(idx.iter().all(|&i| i < r), "gather_rows index out of range");
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            out.extend_from_slice(&self.nodes[x].values[i * c..(i + 1) * c]);
        }
        let rows = idx.len();
        self.unary_shape(x, rows, c, out, Op::GatherRows { x, idx: Arc::new(idx) })
    }

    pub fn reshape(&mut self, x: TensorId, rows: usize, cols: usize) -> TensorId {
        assert_eq!(self.nodes[x].numel(), rows * cols, "reshape must preserve element count");
        let out = self.nodes[x].values.clone();
        self.unary_shape(x, rows, cols, out, Op::Reshape { x })
    }

    /// Row-wise softmax with an optional full-size additive mask (use
    /// [`MASK_NEG`] for disallowed slots). A fully masked row yields zeros.
    pub fn softmax_rows(&mut self, x: TensorId, mask: Option<Arc<Vec<f32>>>) -> TensorId {
        let (r, c) = self.shape(x);
        if let Some(m) = &mask {
            assert_eq!(m.len(), r * c, "softmax mask must match tensor size");
        }
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let row = &self.nodes[x].values[i * c..(i + 1) * c];
            softmax_row(row, mask.as_ref().map(|m| &m[i * c..(i + 1) * c]), &mut out[i * c..(i + 1) * c]);
        }
        self.unary(x, out, Op::Softmax { x, mask })
    }

    /// Rows scaled to unit L2 norm (norm floored at [`LOG_FLOOR`]).
    pub fn l2_normalize_rows(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let row = &self.nodes[x].values[i * c..(i + 1) * c];
            let norm = row_norm(row);
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
        }
        self.unary(x, out, Op::L2NormRows { x })
    }

    /// Per-row layernorm with affine gain/bias, population variance.
    pub fn layernorm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f32) -> TensorId {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c), "layernorm gain must be [1, cols]");
        assert_eq!(self.shape(bias), (1, c), "layernorm bias must be [1, cols]");
        let mut out = vec![0.0f32; r * c];
        let gv = &self.nodes[gain].values;
        let bv = &self.nodes[bias].values;
        for i in 0..r {
            let row = &self.nodes[x].values[i * c..(i + 1) * c];
            let (mean, rstd) = row_stats(row, eps);
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * rstd * gv[j] + bv[j];
            }
        }
        let rq = self.any_requires(&[x, gain, bias]);
        self.push(Tensor { rows: r, cols: c, values: out, requires_grad: rq, op: Op::LayerNorm { x, gain, bias, eps } })
    }

    /// Running sum along each row.
    pub fn cumsum_rows(&mut self, x: TensorId) -> TensorId {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let mut acc = 0.0f32;
            for j in 0..c {
                acc += self.nodes[x].values[i * c + j];
                out[i * c + j] = acc;
            }
        }
        self.unary(x, out, Op::CumsumRows { x })
    }

    /// Inverted dropout; identity when rate <= 0. The keep mask is drawn here
    /// so a stored tape replays deterministically.
    pub fn dropout<R: Rng>(&mut self, x: TensorId, rate: f32, rng: &mut R) -> TensorId {
        assert!((0.0..1.0).contains(&rate) || rate <= 0.0, "dropout rate must be in [0, 1)");
        if rate <= 0.0 {
            return x;
        }
        let n = self.nodes[x].numel();
        let keep: Vec<f32> = (0..n).map(|_| if rng.gen::<f32>() < rate { 0.0 } else { 1.0 }).collect();
        let scale = 1.0 / (1.0 - rate);
        let out: Vec<f32> = self.nodes[x].values.iter().zip(&keep).map(|(&v, &k)| v * k * scale).collect();
        self.unary(x, out, Op::Dropout { x, keep: Arc::new(keep), scale })
    }

    /// Multi-head self-attention over `windows` stacked sequences of
    /// `tokens` rows each. `pad`, when present, holds one additive mask value
    /// per key row (0 or [`MASK_NEG`]); `causal` adds the triangular mask.
    pub fn mha(
        &mut self,
        q: TensorId,
        k: TensorId,
        v: TensorId,
        windows: usize,
        tokens: usize,
        heads: usize,
        causal: bool,
        pad: Option<Arc<Vec<f32>>>,
    ) -> TensorId {
        let (r, d) = self.shape(q);
        assert_eq!(self.shape(k), (r, d));
        assert_eq!(self.shape(v), (r, d));
        assert_eq!(r, windows * tokens, "mha row count must equal windows*tokens");
        assert_eq!(d % heads, 0, "model dim must divide into heads");
        if let Some(p) = &pad {
            assert_eq!(p.len(), r, "pad mask must have one entry per row");
        }
        let out = mha_forward(
            &self.nodes[q].values,
            &self.nodes[k].values,
            &self.nodes[v].values,
            windows, tokens, heads, d, causal,
            pad.as_deref().map(|p| p.as_slice()),
        );
        let rq = self.any_requires(&[q, k, v]);
        self.push(Tensor { rows: r, cols: d, values: out, requires_grad: rq, op: Op::Mha { q, k, v, windows, tokens, heads, causal, pad } })
    }

    /// Attention-pooling scores: query [1, d] against stacked keys
    /// [windows*tokens, d], scaled by 1/sqrt(d). Output [windows, tokens].
    pub fn pool_scores(&mut self, keys: TensorId, query: TensorId, windows: usize, tokens: usize) -> TensorId {
        let (r, d) = self.shape(keys);
        assert_eq!(r, windows * tokens);
        assert_eq!(self.shape(query), (1, d), "pool query must be [1, d]");
        let scale = 1.0 / (d as f32).sqrt();
        let qv = &self.nodes[query].values;
        let kv = &self.nodes[keys].values;
        let mut out = vec![0.0f32; windows * tokens];
        for w in 0..windows {
            for j in 0..tokens {
                out[w * tokens + j] = scale * dot(qv, &kv[(w * tokens + j) * d..(w * tokens + j + 1) * d]);
            }
        }
        let rq = self.any_requires(&[keys, query]);
        self.push(Tensor { rows: windows, cols: tokens, values: out, requires_grad: rq, op: Op::PoolScores { keys, query, windows, tokens } })
    }

    /// Per-window weighted sum of value rows: probs [W, n] x values [W*n, d]
    /// -> [W, d].
    pub fn row_weighted_sum(&mut self, probs: TensorId, values: TensorId) -> TensorId {
        let (w, n) = self.shape(probs);
        let (r, d) = self.shape(values);
        assert_eq!(r, w * n, "values rows must equal windows*tokens");
        let pv = &self.nodes[probs].values;
        let vv = &self.nodes[values].values;
        let mut out = vec![0.0f32; w * d];
        for wi in 0..w {
            for j in 0..n {
                let p = pv[wi * n + j];
                if p != 0.0 {
                    let row = &vv[(wi * n + j) * d..(wi * n + j + 1) * d];
                    for c in 0..d {
                        out[wi * d + c] += p * row[c];
                    }
                }
            }
        }
        let rq = self.any_requires(&[probs, values]);
        self.push(Tensor { rows: w, cols: d, values: out, requires_grad: rq, op: Op::RowWeightedSum { probs, values } })
    }
}

// ── Shared numeric helpers ──────────────────────────────────────────────

pub(crate) fn sigmoid_stable(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn gelu_tanh(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_tanh_deriv(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn row_norm(row: &[f32]) -> f32 {
    dot(row, row).sqrt().max(LOG_FLOOR)
}

fn row_stats(row: &[f32], eps: f32) -> (f32, f32) {
    let n = row.len() as f32;
    let mean = row.iter().sum::<f32>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn softmax_row(row: &[f32], mask: Option<&[f32]>, out: &mut [f32]) {
    let c = row.len();
    let mut mx = f32::NEG_INFINITY;
    for j in 0..c {
        let v = row[j] + mask.map_or(0.0, |m| m[j]);
        if v > mx {
            mx = v;
        }
    }
    if mx <= MASK_NEG {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut sum = 0.0f32;
    for j in 0..c {
        let v = (row[j] + mask.map_or(0.0, |m| m[j]) - mx).exp();
        out[j] = v;
        sum += v;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn mha_scores(
    qv: &[f32], kv: &[f32],
    w: usize, n: usize, h: usize, d: usize, dh: usize, causal: bool,
    pad: Option<&[f32]>,
    probs: &mut [f32],
) {
    // probs laid out [n, n] for one (window, head) pair
    let scale = 1.0 / (dh as f32).sqrt();
    let base = w * n;
    let off = h * dh;
    let mut row = vec![0.0f32; n];
    for i in 0..n {
        for (j, rj) in row.iter_mut().enumerate() {
            let mut s = scale * dot(&qv[(base + i) * d + off..(base + i) * d + off + dh], &kv[(base + j) * d + off..(base + j) * d + off + dh]);
            if causal && j > i {
                s += MASK_NEG;
            }
            if let Some(p) = pad {
                s += p[base + j];
            }
            *rj = s;
        }
        softmax_row(&row, None, &mut probs[i * n..(i + 1) * n]);
    }
}

fn mha_forward(
    qv: &[f32], kv: &[f32], vv: &[f32],
    windows: usize, tokens: usize, heads: usize, d: usize, causal: bool,
    pad: Option<&[f32]>,
) -> Vec<f32> {
    let dh = d / heads;
    let mut out = vec![0.0f32; windows * tokens * d];
    let mut probs = vec![0.0f32; tokens * tokens];
    for w in 0..windows {
        for h in 0..heads {
            mha_scores(qv, kv, w, tokens, h, d, dh, causal, pad, &mut probs);
            let base = w * tokens;
            let off = h * dh;
            for i in 0..tokens {
                let orow = &mut out[(base + i) * d + off..(base + i) * d + off + dh];
                for j in 0..tokens {
                    let p = probs[i * tokens + j];
                    if p != 0.0 {
                        let vrow = &vv[(base + j) * d + off..(base + j) * d + off + dh];
                        for c in 0..dh {
                            orow[c] += p * vrow[c];
                        }
                    }
                }
            }
        }
    }
    out
}

// ── Backward ────────────────────────────────────────────────────────────

fn buf<'a>(grads: &'a mut [Option<Vec<f32>>], nodes: &[Tensor], id: TensorId) -> &'a mut [f32] {
    let n = nodes[id].numel();
    grads[id].get_or_insert_with(|| vec![0.0; n])
}

/// Accumulates `g` (the output gradient of node `out`) into the op's inputs.
pub(crate) fn backward_op(tape: &mut Tape, out: TensorId, op: &Op, g: &[f32]) {
    let (nodes, grads) = tape.split_mut();
    let rq = |id: TensorId| nodes[id].requires_grad;
    match op {
        Op::Leaf => {}
        Op::Matmul { a, b, ta, tb } => {
            let (ar, ac) = (nodes[*a].rows, nodes[*a].cols);
            let (br, bc) = (nodes[*b].rows, nodes[*b].cols);
            let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
            let n = if *tb { br } else { bc };
            if rq(*a) {
                // dA' = g x B'^T, written transposed when the stored A is.
                let (rsb, csb) = strides(bc, *tb);
                let bvals = &nodes[*b].values;
                let (rsc, csc) = if *ta { (1, m as isize) } else { (k as isize, 1) };
                let ga = buf(grads, nodes, *a);
                gemm(m, n, k, 1.0, g, n as isize, 1, bvals, csb, rsb, 1.0, ga, rsc, csc);
            }
            if rq(*b) {
                // dB' = A'^T x g
                let (rsa, csa) = strides(ac, *ta);
                let avals = &nodes[*a].values;
                let (rsc, csc) = if *tb { (1, k as isize) } else { (n as isize, 1) };
                let gb = buf(grads, nodes, *b);
                gemm(k, m, n, 1.0, avals, csa, rsa, g, n as isize, 1, 1.0, gb, rsc, csc);
            }
        }
        Op::AddBias { x, bias } | Op::SubBias { x, bias } => {
            let sign = if matches!(op, Op::SubBias { .. }) { -1.0 } else { 1.0 };
            let (r, c) = (nodes[*x].rows, nodes[*x].cols);
            if rq(*x) {
                let gx = buf(grads, nodes, *x);
                for (gx, gv) in gx.iter_mut().zip(g) {
                    *gx += gv;
                }
            }
            if rq(*bias) {
                let gb = buf(grads, nodes, *bias);
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += sign * g[i * c + j];
                    }
                }
            }
        }
        Op::Add { a, b } => {
            for (id, sign) in [(*a, 1.0f32), (*b, 1.0)] {
                if rq(id) {
                    let gi = buf(grads, nodes, id);
                    for (gi, gv) in gi.iter_mut().zip(g) {
                        *gi += sign * gv;
                    }
                }
            }
        }
        Op::Sub { a, b } => {
            for (id, sign) in [(*a, 1.0f32), (*b, -1.0)] {
                if rq(id) {
                    let gi = buf(grads, nodes, id);
                    for (gi, gv) in gi.iter_mut().zip(g) {
                        *gi += sign * gv;
                    }
                }
            }
        }
        Op::Mul { a, b } => {
            if rq(*a) {
                let bv = &nodes[*b].values;
                let ga = buf(grads, nodes, *a);
                for i in 0..g.len() {
                    ga[i] += g[i] * bv[i];
                }
            }
            if rq(*b) {
                let av = &nodes[*a].values;
                let gb = buf(grads, nodes, *b);
                for i in 0..g.len() {
                    gb[i] += g[i] * av[i];
                }
            }
        }
        Op::Div { a, b } => {
            let bv = &nodes[*b].values;
            if rq(*a) {
                let ga = buf(grads, nodes, *a);
                for i in 0..g.len() {
                    ga[i] += g[i] / bv[i];
                }
            }
            if rq(*b) {
                let ov = &nodes[out].values;
                let gb = buf(grads, nodes, *b);
                for i in 0..g.len() {
                    gb[i] -= g[i] * ov[i] / bv[i];
                }
            }
        }
        Op::Scale { x, c } => {
            if rq(*x) {
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * c;
                }
            }
        }
        Op::AddScalar { x, .. } | Op::Reshape { x } => {
            if rq(*x) {
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i];
                }
            }
        }
        Op::PowI { x, n } => {
            if rq(*x) {
                let xv = &nodes[*x].values;
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * (*n as f32) * xv[i].powi(n - 1);
                }
            }
        }
        Op::Sqrt { x } => {
            if rq(*x) {
                let ov = &nodes[out].values;
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * 0.5 / ov[i].max(LOG_FLOOR);
                }
            }
        }
        Op::Ln { x } => {
            if rq(*x) {
                let xv = nodes[*x].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] / xv[i].max(LOG_FLOOR);
                }
            }
        }
        Op::LnOneMinus { x } => {
            if rq(*x) {
                let xv = nodes[*x].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] -= g[i] / (1.0 - xv[i]).max(LOG_FLOOR);
                }
            }
        }
        Op::Exp { x } => {
            if rq(*x) {
                let ov = &nodes[out].values;
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * ov[i];
                }
            }
        }
        Op::Sigmoid { x } => {
            if rq(*x) {
                let ov = nodes[out].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * ov[i] * (1.0 - ov[i]);
                }
            }
        }
        Op::Gelu { x } => {
            if rq(*x) {
                let xv = nodes[*x].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * gelu_tanh_deriv(xv[i]);
                }
            }
        }
        Op::Abs { x } => {
            if rq(*x) {
                let xv = nodes[*x].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * sign_sub(xv[i]);
                }
            }
        }
        Op::Clamp { x, lo, hi } => {
            if rq(*x) {
                let xv = nodes[*x].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    if xv[i] >= *lo && xv[i] <= *hi {
                        gx[i] += g[i];
                    }
                }
            }
        }
        Op::SumAll { x } => {
            if rq(*x) {
                let gx = buf(grads, nodes, *x);
                for gi in gx.iter_mut() {
                    *gi += g[0];
                }
            }
        }
        Op::MeanAll { x } => {
            if rq(*x) {
                let n = nodes[*x].numel() as f32;
                let gx = buf(grads, nodes, *x);
                for gi in gx.iter_mut() {
                    *gi += g[0] / n;
                }
            }
        }
        Op::MeanAxis0 { x } => {
            if rq(*x) {
                let (r, c) = (nodes[*x].rows, nodes[*x].cols);
                let gx = buf(grads, nodes, *x);
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] += g[j] / r as f32;
                    }
                }
            }
        }
        Op::ConcatCols { a, b } => {
            let (r, ca) = (nodes[*a].rows, nodes[*a].cols);
            let cb = nodes[*b].cols;
            let c = ca + cb;
            if rq(*a) {
                let ga = buf(grads, nodes, *a);
                for i in 0..r {
                    for j in 0..ca {
                        ga[i * ca + j] += g[i * c + j];
                    }
                }
            }
            if rq(*b) {
                let gb = buf(grads, nodes, *b);
                for i in 0..r {
                    for j in 0..cb {
                        gb[i * cb + j] += g[i * c + ca + j];
                    }
                }
            }
        }
        Op::RepeatRows { x, times } => {
            if rq(*x) {
                let (r, c) = (nodes[*x].rows, nodes[*x].cols);
                let gx = buf(grads, nodes, *x);
                for i in 0..r {
                    for t in 0..*times {
                        let src = &g[(i * times + t) * c..(i * times + t + 1) * c];
                        for j in 0..c {
                            gx[i * c + j] += src[j];
                        }
                    }
                }
            }
        }
        Op::GatherRows { x, idx } => {
            if rq(*x) {
                let c = nodes[*x].cols;
                let gx = buf(grads, nodes, *x);
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        gx[i * c + j] += g[row * c + j];
                    }
                }
            }
        }
        Op::Softmax { x, .. } => {
            if rq(*x) {
                let (r, c) = (nodes[out].rows, nodes[out].cols);
                let ov = nodes[out].values.clone();
                let gx = buf(grads, nodes, *x);
                for i in 0..r {
                    let y = &ov[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let inner = dot(gr, y);
                    for j in 0..c {
                        gx[i * c + j] += y[j] * (gr[j] - inner);
                    }
                }
            }
        }
        Op::L2NormRows { x } => {
            if rq(*x) {
                let (r, c) = (nodes[*x].rows, nodes[*x].cols);
                let xv = &nodes[*x].values;
                let ov = &nodes[out].values;
                let gx = buf(grads, nodes, *x);
                for i in 0..r {
                    let norm = row_norm(&xv[i * c..(i + 1) * c]);
                    let y = &ov[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let inner = dot(gr, y);
                    for j in 0..c {
                        gx[i * c + j] += (gr[j] - y[j] * inner) / norm;
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias, eps } => {
            let (r, c) = (nodes[*x].rows, nodes[*x].cols);
            let xv = &nodes[*x].values;
            let gv = &nodes[*gain].values;
            for i in 0..r {
                let row = &xv[i * c..(i + 1) * c];
                let (mean, rstd) = row_stats(row, *eps);
                let gr = &g[i * c..(i + 1) * c];
                if rq(*gain) {
                    let gg = buf(grads, nodes, *gain);
                    for j in 0..c {
                        gg[j] += gr[j] * (row[j] - mean) * rstd;
                    }
                }
                if rq(*bias) {
                    let gb = buf(grads, nodes, *bias);
                    for j in 0..c {
                        gb[j] += gr[j];
                    }
                }
                if rq(*x) {
                    // dxhat = g*gain; dx = rstd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    let mut m1 = 0.0f32;
                    let mut m2 = 0.0f32;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxh = gr[j] * gv[j];
                        m1 += dxh;
                        m2 += dxh * xhat;
                    }
                    m1 /= c as f32;
                    m2 /= c as f32;
                    let gx = buf(grads, nodes, *x);
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        gx[i * c + j] += rstd * (gr[j] * gv[j] - m1 - xhat * m2);
                    }
                }
            }
        }
        Op::CumsumRows { x } => {
            if rq(*x) {
                let (r, c) = (nodes[*x].rows, nodes[*x].cols);
                let gx = buf(grads, nodes, *x);
                for i in 0..r {
                    let mut acc = 0.0f32;
                    for j in (0..c).rev() {
                        acc += g[i * c + j];
                        gx[i * c + j] += acc;
                    }
                }
            }
        }
        Op::Dropout { x, keep, scale } => {
            if rq(*x) {
                let gx = buf(grads, nodes, *x);
                for i in 0..g.len() {
                    gx[i] += g[i] * keep[i] * scale;
                }
            }
        }
        Op::Mha { q, k, v, windows, tokens, heads, causal, pad } => {
            mha_backward(nodes, grads, g, *q, *k, *v, *windows, *tokens, *heads, *causal, pad.as_deref().map(|p| p.as_slice()));
        }
        Op::PoolScores { keys, query, windows, tokens } => {
            let d = nodes[*keys].cols;
            let scale = 1.0 / (d as f32).sqrt();
            if rq(*query) {
                let kv = &nodes[*keys].values;
                let gq = buf(grads, nodes, *query);
                for w in 0..*windows {
                    for j in 0..*tokens {
                        let gw = scale * g[w * tokens + j];
                        if gw != 0.0 {
                            let row = &kv[(w * tokens + j) * d..(w * tokens + j + 1) * d];
                            for c in 0..d {
                                gq[c] += gw * row[c];
                            }
                        }
                    }
                }
            }
            if rq(*keys) {
                let qv = &nodes[*query].values;
                let gk = buf(grads, nodes, *keys);
                for w in 0..*windows {
                    for j in 0..*tokens {
                        let gw = scale * g[w * tokens + j];
                        if gw != 0.0 {
                            for c in 0..d {
                                gk[(w * tokens + j) * d + c] += gw * qv[c];
                            }
                        }
                    }
                }
            }
        }
        Op::RowWeightedSum { probs, values } => {
            let (w, n) = (nodes[*probs].rows, nodes[*probs].cols);
            let d = nodes[*values].cols;
            if rq(*probs) {
                let vv = &nodes[*values].values;
                let gp = buf(grads, nodes, *probs);
                for wi in 0..w {
                    for j in 0..n {
                        gp[wi * n + j] += dot(&g[wi * d..(wi + 1) * d], &vv[(wi * n + j) * d..(wi * n + j + 1) * d]);
                    }
                }
            }
            if rq(*values) {
                let pv = &nodes[*probs].values;
                let gv = buf(grads, nodes, *values);
                for wi in 0..w {
                    for j in 0..n {
                        let p = pv[wi * n + j];
                        if p != 0.0 {
                            for c in 0..d {
                                gv[(wi * n + j) * d + c] += p * g[wi * d + c];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn sign_sub(x: f32) -> f32 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[allow(clippy::too_many_arguments)]
fn mha_backward(
    nodes: &[Tensor],
    grads: &mut [Option<Vec<f32>>],
    g: &[f32],
    q: TensorId, k: TensorId, v: TensorId,
    windows: usize, tokens: usize, heads: usize, causal: bool,
    pad: Option<&[f32]>,
) {
    let d = nodes[q].cols;
    let dh = d / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let qv = &nodes[q].values;
    let kv = &nodes[k].values;
    let vv = &nodes[v].values;
    let need_q = nodes[q].requires_grad;
    let need_k = nodes[k].requires_grad;
    let need_v = nodes[v].requires_grad;
    if !(need_q || need_k || need_v) {
        return;
    }
    let mut probs = vec![0.0f32; tokens * tokens];
    let mut dp = vec![0.0f32; tokens * tokens];
    let mut gq_acc = vec![0.0f32; if need_q { qv.len() } else { 0 }];
    let mut gk_acc = vec![0.0f32; if need_k { kv.len() } else { 0 }];
    let mut gv_acc = vec![0.0f32; if need_v { vv.len() } else { 0 }];
    for w in 0..windows {
        for h in 0..heads {
            mha_scores(qv, kv, w, tokens, h, d, dh, causal, pad, &mut probs);
            let base = w * tokens;
            let off = h * dh;
            // dP[i][j] = g_i . v_j ; dV[j] += P[i][j] * g_i
            for i in 0..tokens {
                let gr = &g[(base + i) * d + off..(base + i) * d + off + dh];
                for j in 0..tokens {
                    let p = probs[i * tokens + j];
                    dp[i * tokens + j] = dot(gr, &vv[(base + j) * d + off..(base + j) * d + off + dh]);
                    if need_v && p != 0.0 {
                        let gvr = &mut gv_acc[(base + j) * d + off..(base + j) * d + off + dh];
                        for c in 0..dh {
                            gvr[c] += p * gr[c];
                        }
                    }
                }
            }
            // dS = P .* (dP - rowsum(dP .* P)); dQ += scale*dS*K; dK += scale*dS^T*Q
            for i in 0..tokens {
                let prow = &probs[i * tokens..(i + 1) * tokens];
                let dprow = &dp[i * tokens..(i + 1) * tokens];
                let inner = dot(prow, dprow);
                for j in 0..tokens {
                    let ds = prow[j] * (dprow[j] - inner) * scale;
                    if ds != 0.0 {
                        if need_q {
                            let krow = &kv[(base + j) * d + off..(base + j) * d + off + dh];
                            let gqr = &mut gq_acc[(base + i) * d + off..(base + i) * d + off + dh];
                            for c in 0..dh {
                                gqr[c] += ds * krow[c];
                            }
                        }
                        if need_k {
                            let qrow = &qv[(base + i) * d + off..(base + i) * d + off + dh];
                            let gkr = &mut gk_acc[(base + j) * d + off..(base + j) * d + off + dh];
                            for c in 0..dh {
                                gkr[c] += ds * qrow[c];
                            }
                        }
                    }
                }
            }
        }
    }
    if need_q {
        let gq = buf(grads, nodes, q);
        for i in 0..gq.len() {
            gq[i] += gq_acc[i];
        }
    }
    if need_k {
        let gk = buf(grads, nodes, k);
        for i in 0..gk.len() {
            gk[i] += gk_acc[i];
        }
    }
    if need_v {
        let gv = buf(grads, nodes, v);
        for i in 0..gv.len() {
            gv[i] += gv_acc[i];
        }
    }
}
