//! Finite-difference verification of `backward()` against a 64-bit shadow.
//!
//! `replay_f64` re-executes a recorded tape front to back in f64 with naive
//! kernels (triple-loop matmul, scalar attention), optionally overriding leaf
//! values. Central differences on that replay give a reference gradient that
//! shares no code with the f32 forward/backward being checked, up to the op
//! semantics themselves.

use std::collections::HashMap;

use super::ops::Op;
use super::{Tape, TensorId};

const LOG_FLOOR: f64 = 1e-12;
const MASK_NEG: f64 = -1e30;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Naive O(m*k*n) matmul in f64; the reference all GEMM paths are checked
/// against.
pub fn naive_matmul_f64(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = a[i * k + l];
            if av != 0.0 {
                for j in 0..n {
                    out[i * n + j] += av * b[l * n + j];
                }
            }
        }
    }
    out
}

fn view_f64(vals: &[f64], rows: usize, cols: usize, transposed: bool) -> Vec<f64> {
    if !transposed {
        return vals.to_vec();
    }
    let mut out = vec![0.0f64; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = vals[i * cols + j];
        }
    }
    out
}

fn softmax_row_f64(row: &[f64], mask: Option<&[f64]>, out: &mut [f64]) {
    let mut mx = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        let v = v + mask.map_or(0.0, |m| m[j]);
        if v > mx {
            mx = v;
        }
    }
    if mx <= MASK_NEG {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (j, &v) in row.iter().enumerate() {
        let e = (v + mask.map_or(0.0, |m| m[j]) - mx).exp();
        out[j] = e;
        sum += e;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

fn gelu_f64(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Replays nodes `0..=upto` in f64. `overrides` substitutes leaf values
/// (lengths must match). Returns every node's f64 value vector.
pub fn replay_f64(tape: &Tape, upto: TensorId, overrides: &HashMap<TensorId, Vec<f64>>) -> Vec<Vec<f64>> {
    let mut vals: Vec<Vec<f64>> = Vec::with_capacity(upto + 1);
    for id in 0..=upto {
        let node = &tape.nodes[id];
        let (r, c) = (node.rows, node.cols);
        let v: Vec<f64> = match &node.op {
            Op::Leaf => match overrides.get(&id) {
                Some(ov) => {
                    assert_eq!(ov.len(), node.numel(), "override length mismatch for leaf {id}");
                    ov.clone()
                }
                None => node.values.iter().map(|&x| x as f64).collect(),
            },
            Op::Matmul { a, b, ta, tb } => {
                let (ar, ac) = (tape.nodes[*a].rows, tape.nodes[*a].cols);
                let (br, bc) = (tape.nodes[*b].rows, tape.nodes[*b].cols);
                let av = view_f64(&vals[*a], ar, ac, *ta);
                let bv = view_f64(&vals[*b], br, bc, *tb);
                let (m, k) = if *ta { (ac, ar) } else { (ar, ac) };
                let n = if *tb { br } else { bc };
                naive_matmul_f64(&av, m, k, &bv, n)
            }
            Op::AddBias { x, bias } => broadcast_rows(&vals[*x], &vals[*bias], r, c, 1.0),
            Op::SubBias { x, bias } => broadcast_rows(&vals[*x], &vals[*bias], r, c, -1.0),
            Op::Add { a, b } => zip(&vals[*a], &vals[*b], |x, y| x + y),
            Op::Sub { a, b } => zip(&vals[*a], &vals[*b], |x, y| x - y),
            Op::Mul { a, b } => zip(&vals[*a], &vals[*b], |x, y| x * y),
            Op::Div { a, b } => zip(&vals[*a], &vals[*b], |x, y| x / y),
            Op::Scale { x, c } => vals[*x].iter().map(|&v| v * *c as f64).collect(),
            Op::AddScalar { x, c } => vals[*x].iter().map(|&v| v + *c as f64).collect(),
            Op::PowI { x, n } => vals[*x].iter().map(|&v| v.powi(*n)).collect(),
            Op::Sqrt { x } => vals[*x].iter().map(|&v| v.max(0.0).sqrt()).collect(),
            Op::Ln { x } => vals[*x].iter().map(|&v| v.max(LOG_FLOOR).ln()).collect(),
            Op::LnOneMinus { x } => vals[*x].iter().map(|&v| (1.0 - v).max(LOG_FLOOR).ln()).collect(),
            Op::Exp { x } => vals[*x].iter().map(|&v| v.exp()).collect(),
            Op::Sigmoid { x } => vals[*x].iter().map(|&v| sigmoid_f64(v)).collect(),
            Op::Gelu { x } => vals[*x].iter().map(|&v| gelu_f64(v)).collect(),
            Op::Abs { x } => vals[*x].iter().map(|&v| v.abs()).collect(),
            Op::Clamp { x, lo, hi } => vals[*x].iter().map(|&v| v.clamp(*lo as f64, *hi as f64)).collect(),
            Op::SumAll { x } => vec![vals[*x].iter().sum()],
            Op::MeanAll { x } => vec![vals[*x].iter().sum::<f64>() / vals[*x].len() as f64],
            Op::MeanAxis0 { x } => {
                let xr = tape.nodes[*x].rows;
                let xc = tape.nodes[*x].cols;
                let mut out = vec![0.0f64; xc];
                for i in 0..xr {
                    for j in 0..xc {
                        out[j] += vals[*x][i * xc + j];
                    }
                }
                out.iter_mut().for_each(|o| *o /= xr as f64);
                out
            }
            Op::ConcatCols { a, b } => {
                let ca = tape.nodes[*a].cols;
                let cb = tape.nodes[*b].cols;
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    out.extend_from_slice(&vals[*a][i * ca..(i + 1) * ca]);
                    out.extend_from_slice(&vals[*b][i * cb..(i + 1) * cb]);
                }
                out
            }
            Op::RepeatRows { x, times } => {
                let xc = tape.nodes[*x].cols;
                let mut out = Vec::with_capacity(r * c);
                for i in 0..tape.nodes[*x].rows {
                    for _ in 0..*times {
                        out.extend_from_slice(&vals[*x][i * xc..(i + 1) * xc]);
                    }
                }
                out
            }
            Op::GatherRows { x, idx } => {
                let xc = tape.nodes[*x].cols;
                let mut out = Vec::with_capacity(idx.len() * xc);
                for &i in idx.iter() {
                    out.extend_from_slice(&vals[*x][i * xc..(i + 1) * xc]);
                }
                out
            }
            Op::Reshape { x } => vals[*x].clone(),
            Op::Softmax { x, mask } => {
                let mut out = vec![0.0f64; r * c];
                let m64: Option<Vec<f64>> = mask.as_ref().map(|m| m.iter().map(|&v| v as f64).collect());
                for i in 0..r {
                    softmax_row_f64(
                        &vals[*x][i * c..(i + 1) * c],
                        m64.as_ref().map(|m| &m[i * c..(i + 1) * c]),
                        &mut out[i * c..(i + 1) * c],
                    );
                }
                out
            }
            Op::L2NormRows { x } => {
                let mut out = vec![0.0f64; r * c];
                for i in 0..r {
                    let row = &vals[*x][i * c..(i + 1) * c];
                    let norm = row.iter().map(|&v| v * v).sum::<f64>().sqrt().max(LOG_FLOOR);
                    for j in 0..c {
                        out[i * c + j] = row[j] / norm;
                    }
                }
                out
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let mut out = vec![0.0f64; r * c];
                for i in 0..r {
                    let row = &vals[*x][i * c..(i + 1) * c];
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let rstd = 1.0 / (var + *eps as f64).sqrt();
                    for j in 0..c {
                        out[i * c + j] = (row[j] - mean) * rstd * vals[*gain][j] + vals[*bias][j];
                    }
                }
                out
            }
            Op::CumsumRows { x } => {
                let mut out = vec![0.0f64; r * c];
                for i in 0..r {
                    let mut acc = 0.0;
                    for j in 0..c {
                        acc += vals[*x][i * c + j];
                        out[i * c + j] = acc;
                    }
                }
                out
            }
            Op::Dropout { x, keep, scale } => vals[*x]
                .iter()
                .zip(keep.iter())
                .map(|(&v, &k)| v * k as f64 * *scale as f64)
                .collect(),
            Op::Mha { q, k, v, windows, tokens, heads, causal, pad } => {
                let d = tape.nodes[*q].cols;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let pad64: Option<Vec<f64>> = pad.as_ref().map(|p| p.iter().map(|&v| v as f64).collect());
                let qv = &vals[*q];
                let kv = &vals[*k];
                let vv = &vals[*v];
                let mut out = vec![0.0f64; windows * tokens * d];
                let mut row = vec![0.0f64; *tokens];
                let mut probs = vec![0.0f64; *tokens];
                for w in 0..*windows {
                    for h in 0..*heads {
                        let base = w * tokens;
                        let off = h * dh;
                        for i in 0..*tokens {
                            for j in 0..*tokens {
                                let mut s = scale
                                    * dot64(
                                        &qv[(base + i) * d + off..(base + i) * d + off + dh],
                                        &kv[(base + j) * d + off..(base + j) * d + off + dh],
                                    );
                                if *causal && j > i {
                                    s += MASK_NEG;
                                }
                                if let Some(p) = &pad64 {
                                    s += p[base + j];
                                }
                                row[j] = s;
                            }
                            softmax_row_f64(&row, None, &mut probs);
                            for j in 0..*tokens {
                                if probs[j] != 0.0 {
                                    for cc in 0..dh {
                                        out[(base + i) * d + off + cc] += probs[j] * vv[(base + j) * d + off + cc];
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            Op::PoolScores { keys, query, windows, tokens } => {
                let d = tape.nodes[*keys].cols;
                let scale = 1.0 / (d as f64).sqrt();
                let mut out = vec![0.0f64; windows * tokens];
                for w in 0..*windows {
                    for j in 0..*tokens {
                        out[w * tokens + j] =
                            scale * dot64(&vals[*query], &vals[*keys][(w * tokens + j) * d..(w * tokens + j + 1) * d]);
                    }
                }
                out
            }
            Op::RowWeightedSum { probs, values } => {
                let (w, n) = (tape.nodes[*probs].rows, tape.nodes[*probs].cols);
                let d = tape.nodes[*values].cols;
                let mut out = vec![0.0f64; w * d];
                for wi in 0..w {
                    for j in 0..n {
                        let p = vals[*probs][wi * n + j];
                        if p != 0.0 {
                            for cc in 0..d {
                                out[wi * d + cc] += p * vals[*values][(wi * n + j) * d + cc];
                            }
                        }
                    }
                }
                out
            }
        };
        assert_eq!(v.len(), node.numel(), "replay produced wrong size for node {id}");
        vals.push(v);
    }
    vals
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn broadcast_rows(x: &[f64], bias: &[f64], r: usize, c: usize, sign: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] += sign * bias[j];
        }
    }
    out
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Result of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (leaf, flat element index, analytic, numeric) for the worst element.
    pub worst: Option<(TensorId, usize, f64, f64)>,
}

/// Relative error with an absolute floor: differences below `floor * tol`
/// count as zero, which keeps noise-level gradients from dominating.
fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Runs one op graph end to end: backward, then finite differences on every
/// listed leaf element.
pub fn run_case(
    tape: &mut Tape,
    loss: TensorId,
    leaves: &[TensorId],
    h: f64,
    max_per_leaf: Option<usize>,
) -> GradCheckReport {
    tape.backward(loss).expect("backward failed in gradcheck case");
    check_leaves(tape, loss, leaves, h, max_per_leaf)
}

/// Elementwise finite-difference battery covering every tape op, each in a
/// small graph with nonsmooth points kept away from the probe step. Returns
/// one report per op; callers assert `max_rel_err` against their tolerance.
pub fn standard_battery(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rnd = |n: usize, lo: f32, hi: f32| -> Vec<f32> {
        (0..n).map(|_| lo + (hi - lo) * rng.gen::<f32>()).collect()
    };
    let h = 1e-3;
    let mut out: Vec<(&'static str, GradCheckReport)> = Vec::new();

    // Matmul, all four transpose layouts.
    for (name, ta, tb) in [
        ("matmul_nn", false, false),
        ("matmul_tn", true, false),
        ("matmul_nt", false, true),
        ("matmul_tt", true, true),
    ] {
        let mut t = Tape::new();
        let (m, k, n) = (3usize, 4usize, 2usize);
        let a = if ta {
            t.leaf(rnd(k * m, -1.0, 1.0), k, m, true)
        } else {
            t.leaf(rnd(m * k, -1.0, 1.0), m, k, true)
        };
        let b = if tb {
            t.leaf(rnd(n * k, -1.0, 1.0), n, k, true)
        } else {
            t.leaf(rnd(k * n, -1.0, 1.0), k, n, true)
        };
        let y = t.matmul_t(a, b, ta, tb);
        let l = t.mean_all(y);
        out.push((name, run_case(&mut t, l, &[a, b], h, None)));
    }

    macro_rules! unary_case {
        ($name:expr, $vals:expr, $build:expr) => {{
            let mut t = Tape::new();
            let x = t.leaf($vals, 3, 4, true);
            #[allow(clippy::redundant_closure_call)]
            let y = ($build)(&mut t, x);
            let l = t.mean_all(y);
            out.push(($name, run_case(&mut t, l, &[x], h, None)));
        }};
    }

    unary_case!("scale", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.scale(x, -1.7));
    unary_case!("add_scalar", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.add_scalar(x, 0.5));
    unary_case!("powi2", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.powi(x, 2));
    unary_case!("powi3", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.powi(x, 3));
    unary_case!("sqrt", rnd(12, 0.2, 3.0), |t: &mut Tape, x| t.sqrt(x));
    unary_case!("ln", rnd(12, 0.2, 3.0), |t: &mut Tape, x| t.ln(x));
    unary_case!("ln_one_minus", rnd(12, 0.05, 0.9), |t: &mut Tape, x| t.ln_one_minus(x));
    unary_case!("exp", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.exp(x));
    unary_case!("sigmoid", rnd(12, -3.0, 3.0), |t: &mut Tape, x| t.sigmoid(x));
    unary_case!("gelu", rnd(12, -3.0, 3.0), |t: &mut Tape, x| t.gelu(x));
    unary_case!("abs", rnd(12, 0.3, 2.0), |t: &mut Tape, x| t.abs(x));
    unary_case!("abs_neg", rnd(12, -2.0, -0.3), |t: &mut Tape, x| t.abs(x));
    unary_case!("clamp", rnd(12, -0.4, 0.4), |t: &mut Tape, x| t.clamp(x, -0.5, 0.5));
    unary_case!("sum_all", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.sum_all(x));
    unary_case!("mean_axis0", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.mean_axis0(x));
    unary_case!("repeat_rows", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.repeat_rows(x, 3));
    unary_case!("gather_rows", rnd(12, -2.0, 2.0), |t: &mut Tape, x| {
        t.gather_rows(x, vec![2, 0, 2, 1])
    });
    unary_case!("reshape", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.reshape(x, 4, 3));
    unary_case!("softmax", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.softmax_rows(x, None));
    unary_case!("l2_normalize", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.l2_normalize_rows(x));
    unary_case!("cumsum_rows", rnd(12, -2.0, 2.0), |t: &mut Tape, x| t.cumsum_rows(x));

    {
        let mut t = Tape::new();
        let x = t.leaf(rnd(12, -2.0, 2.0), 3, 4, true);
        let mask = Arc::new(vec![
            0.0, 0.0, MASK_NEG as f32, 0.0,
            0.0, 0.0, 0.0, 0.0,
            MASK_NEG as f32, 0.0, 0.0, 0.0,
        ]);
        let y = t.softmax_rows(x, Some(mask));
        let l = t.mean_all(y);
        out.push(("softmax_masked", run_case(&mut t, l, &[x], h, None)));
    }

    macro_rules! binary_case {
        ($name:expr, $av:expr, $bv:expr, $build:expr) => {{
            let mut t = Tape::new();
            let a = t.leaf($av, 3, 4, true);
            let b = t.leaf($bv, 3, 4, true);
            #[allow(clippy::redundant_closure_call)]
            let y = ($build)(&mut t, a, b);
            let l = t.mean_all(y);
            out.push(($name, run_case(&mut t, l, &[a, b], h, None)));
        }};
    }

    binary_case!("add", rnd(12, -2.0, 2.0), rnd(12, -2.0, 2.0), |t: &mut Tape, a, b| t.add(a, b));
    binary_case!("sub", rnd(12, -2.0, 2.0), rnd(12, -2.0, 2.0), |t: &mut Tape, a, b| t.sub(a, b));
    binary_case!("mul", rnd(12, -2.0, 2.0), rnd(12, -2.0, 2.0), |t: &mut Tape, a, b| t.mul(a, b));
    binary_case!("div", rnd(12, -2.0, 2.0), rnd(12, 0.5, 2.0), |t: &mut Tape, a, b| t.div(a, b));
    binary_case!("concat_cols", rnd(12, -2.0, 2.0), rnd(12, -2.0, 2.0), |t: &mut Tape, a, b| {
        t.concat_cols(a, b)
    });

    {
        let mut t = Tape::new();
        let x = t.leaf(rnd(12, -2.0, 2.0), 3, 4, true);
        let b = t.leaf(rnd(4, -1.0, 1.0), 1, 4, true);
        let y = t.add_bias(x, b);
        let l = t.mean_all(y);
        out.push(("add_bias", run_case(&mut t, l, &[x, b], h, None)));
    }
    {
        let mut t = Tape::new();
        let x = t.leaf(rnd(12, -2.0, 2.0), 3, 4, true);
        let b = t.leaf(rnd(4, -1.0, 1.0), 1, 4, true);
        let y = t.sub_bias(x, b);
        let l = t.mean_all(y);
        out.push(("sub_bias", run_case(&mut t, l, &[x, b], h, None)));
    }
    {
        let mut t = Tape::new();
        let x = t.leaf(rnd(12, -2.0, 2.0), 3, 4, true);
        let g = t.leaf(rnd(4, 0.5, 1.5), 1, 4, true);
        let b = t.leaf(rnd(4, -0.5, 0.5), 1, 4, true);
        let y = t.layernorm(x, g, b, 1e-5);
        let l = t.mean_all(y);
        out.push(("layernorm", run_case(&mut t, l, &[x, g, b], h, None)));
    }
    {
        let mut t = Tape::new();
        let x = t.leaf(rnd(12, -2.0, 2.0), 3, 4, true);
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let y = t.dropout(x, 0.4, &mut drop_rng);
        let l = t.mean_all(y);
        out.push(("dropout", run_case(&mut t, l, &[x], h, None)));
    }
    {
        // 2 windows x 3 tokens, 2 heads over d=4, causal plus one padded row.
        let mut t = Tape::new();
        let (w, n, d) = (2usize, 3usize, 4usize);
        let q = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let k = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let v = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let mut pad = vec![0.0f32; w * n];
        pad[3] = MASK_NEG as f32; // first token of window 1 is padding
        let y = t.mha(q, k, v, w, n, 2, true, Some(Arc::new(pad)));
        let l = t.mean_all(y);
        out.push(("mha_causal_pad", run_case(&mut t, l, &[q, k, v], h, None)));
    }
    {
        let mut t = Tape::new();
        let (w, n, d) = (2usize, 3usize, 4usize);
        let q = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let k = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let v = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let y = t.mha(q, k, v, w, n, 2, false, None);
        let l = t.mean_all(y);
        out.push(("mha_bidir", run_case(&mut t, l, &[q, k, v], h, None)));
    }
    {
        // Full attention-pooling subgraph: scores -> softmax -> weighted sum.
        let mut t = Tape::new();
        let (w, n, d) = (2usize, 3usize, 4usize);
        let keys = t.leaf(rnd(w * n * d, -1.0, 1.0), w * n, d, true);
        let query = t.leaf(rnd(d, -1.0, 1.0), 1, d, true);
        let scores = t.pool_scores(keys, query, w, n);
        let probs = t.softmax_rows(scores, None);
        let pooled = t.row_weighted_sum(probs, keys);
        let l = t.mean_all(pooled);
        out.push(("attention_pooling", run_case(&mut t, l, &[keys, query], h, None)));
    }

    out
}

/// Central finite differences over the f64 replay for the listed leaves.
/// `backward()` must already have run on `tape`. At most `max_per_leaf`
/// evenly spaced elements are probed per leaf (all when `None`).
pub fn check_leaves(
    tape: &Tape,
    loss: TensorId,
    leaves: &[TensorId],
    h: f64,
    max_per_leaf: Option<usize>,
) -> GradCheckReport {
    assert!(tape.is_consumed(), "run backward() before check_leaves");
    let floor = 1e-4;
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for &leaf in leaves {
        let base: Vec<f64> = tape.values(leaf).iter().map(|&v| v as f64).collect();
        let analytic = tape.grad_or_zeros(leaf);
        let n = base.len();
        let stride = match max_per_leaf {
            Some(m) if m < n => n.div_ceil(m),
            _ => 1,
        };
        let mut e = 0;
        while e < n {
            let mut ov = HashMap::new();
            let mut plus = base.clone();
            plus[e] += h;
            ov.insert(leaf, plus);
            let f_plus = replay_f64(tape, loss, &ov)[loss][0];
            let mut minus = base.clone();
            minus[e] -= h;
            ov.insert(leaf, minus);
            let f_minus = replay_f64(tape, loss, &ov)[loss][0];
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let err = rel_err(analytic[e] as f64, numeric, floor);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((leaf, e, analytic[e] as f64, numeric));
            }
            report.checked += 1;
            e += stride;
        }
    }
    report
}
