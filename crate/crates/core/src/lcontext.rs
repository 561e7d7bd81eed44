//! Latent change context: residual alignment, gated increments and a GRU
//! that integrates them into one hidden state per step.
//!
//! Batched tensors use two layouts. Row layout `[B·V, T]` keeps each
//! channel's time series contiguous (normalization, convolution,
//! differencing). Time-major layout `[T·B, V]` keeps each step's channel
//! vector contiguous (gate and recurrence).

use rand::Rng;

use crate::diffcore::{NumArray, Tape, Var};
use crate::error::{Error, Result};
use crate::preprocess::{normalize_rows, NormStats};

/// Default alignment kernel size.
pub const DEFAULT_KERNEL_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_update: NumArray,
    pub u_update: NumArray,
    pub b_update: NumArray,
    pub w_reset: NumArray,
    pub u_reset: NumArray,
    pub b_reset: NumArray,
    pub w_cand: NumArray,
    pub u_cand: NumArray,
    pub b_cand: NumArray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LContextParams {
    /// `[V, k]`
    pub conv_kernel: NumArray,
    /// `[V]`
    pub conv_bias: NumArray,
    /// `[V, 2V]`, columns `0..V` read the aligned series, `V..2V` its increments.
    pub gate_weight: NumArray,
    /// `[V]`
    pub gate_bias: NumArray,
    pub gru: GruParams,
}

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> NumArray {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    NumArray::param(shape.to_vec(), values).expect("shape and values agree")
}

impl LContextParams {
    /// Fan-in scaled uniform initialization.
    pub fn init(n_vars: usize, kernel_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", kernel_size)));
        }
        let v = n_vars;
        let kb = 1.0 / (kernel_size as f64).sqrt();
        let gb = 1.0 / ((2 * v) as f64).sqrt();
        let hb = 1.0 / (v as f64).sqrt();
        Ok(Self {
            conv_kernel: uniform(rng, &[v, kernel_size], kb),
            conv_bias: uniform(rng, &[v], kb),
            gate_weight: uniform(rng, &[v, 2 * v], gb),
            gate_bias: uniform(rng, &[v], gb),
            gru: GruParams {
                w_update: uniform(rng, &[v, v], hb),
                u_update: uniform(rng, &[v, v], hb),
                b_update: uniform(rng, &[v], hb),
                w_reset: uniform(rng, &[v, v], hb),
                u_reset: uniform(rng, &[v, v], hb),
                b_reset: uniform(rng, &[v], hb),
                w_cand: uniform(rng, &[v, v], hb),
                u_cand: uniform(rng, &[v, v], hb),
                b_cand: uniform(rng, &[v], hb),
            },
        })
    }

    /// All-zero parameters.
    pub fn zeros(n_vars: usize, kernel_size: usize) -> Self {
        let v = n_vars;
        let z = |s: &[usize]| NumArray::zeros(s).into_param();
        Self {
            conv_kernel: z(&[v, kernel_size]),
            conv_bias: z(&[v]),
            gate_weight: z(&[v, 2 * v]),
            gate_bias: z(&[v]),
            gru: GruParams {
                w_update: z(&[v, v]),
                u_update: z(&[v, v]),
                b_update: z(&[v]),
                w_reset: z(&[v, v]),
                u_reset: z(&[v, v]),
                b_reset: z(&[v]),
                w_cand: z(&[v, v]),
                u_cand: z(&[v, v]),
                b_cand: z(&[v]),
            },
        }
    }

    pub fn n_vars(&self) -> usize {
        self.conv_kernel.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.conv_kernel.shape()[1]
    }

    /// Arrays in serialization order.
    pub fn named_arrays(&self) -> Vec<(&'static str, &NumArray)> {
        let g = &self.gru;
        vec![
            ("lcontext.conv.kernel", &self.conv_kernel),
            ("lcontext.conv.bias", &self.conv_bias),
            ("lcontext.gate.weight", &self.gate_weight),
            ("lcontext.gate.bias", &self.gate_bias),
            ("lcontext.gru.w_update", &g.w_update),
            ("lcontext.gru.u_update", &g.u_update),
            ("lcontext.gru.b_update", &g.b_update),
            ("lcontext.gru.w_reset", &g.w_reset),
            ("lcontext.gru.u_reset", &g.u_reset),
            ("lcontext.gru.b_reset", &g.b_reset),
            ("lcontext.gru.w_cand", &g.w_cand),
            ("lcontext.gru.u_cand", &g.u_cand),
            ("lcontext.gru.b_cand", &g.b_cand),
        ]
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut NumArray> {
        let g = &mut self.gru;
        vec![
            &mut self.conv_kernel,
            &mut self.conv_bias,
            &mut self.gate_weight,
            &mut self.gate_bias,
            &mut g.w_update,
            &mut g.u_update,
            &mut g.b_update,
            &mut g.w_reset,
            &mut g.u_reset,
            &mut g.b_reset,
            &mut g.w_cand,
            &mut g.u_cand,
            &mut g.b_cand,
        ]
    }

    /// Records every array as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> LContextVars<'t> {
        let g = &self.gru;
        LContextVars {
            conv_kernel: tape.param(&self.conv_kernel),
            conv_bias: tape.param(&self.conv_bias),
            gate_weight: tape.param(&self.gate_weight),
            gate_bias: tape.param(&self.gate_bias),
            w_update: tape.param(&g.w_update),
            u_update: tape.param(&g.u_update),
            b_update: tape.param(&g.b_update),
            w_reset: tape.param(&g.w_reset),
            u_reset: tape.param(&g.u_reset),
            b_reset: tape.param(&g.b_reset),
            w_cand: tape.param(&g.w_cand),
            u_cand: tape.param(&g.u_cand),
            b_cand: tape.param(&g.b_cand),
        }
    }
}

/// [`LContextParams`] recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LContextVars<'t> {
    pub conv_kernel: Var<'t>,
    pub conv_bias: Var<'t>,
    pub gate_weight: Var<'t>,
    pub gate_bias: Var<'t>,
    pub w_update: Var<'t>,
    pub u_update: Var<'t>,
    pub b_update: Var<'t>,
    pub w_reset: Var<'t>,
    pub u_reset: Var<'t>,
    pub b_reset: Var<'t>,
    pub w_cand: Var<'t>,
    pub u_cand: Var<'t>,
    pub b_cand: Var<'t>,
}

impl<'t> LContextVars<'t> {
    pub fn all(&self) -> Vec<Var<'t>> {
        vec![
            self.conv_kernel,
            self.conv_bias,
            self.gate_weight,
            self.gate_bias,
            self.w_update,
            self.u_update,
            self.b_update,
            self.w_reset,
            self.u_reset,
            self.b_reset,
            self.w_cand,
            self.u_cand,
            self.b_cand,
        ]
    }
}

/// `[B·V, T]` to `[T·B, V]`.
pub fn to_time_major(x: Var<'_>, batch: usize, n_vars: usize) -> Result<Var<'_>> {
    let t = x.len() / (batch * n_vars).max(1);
    x.reshape(&[batch, n_vars, t])?
        .permute(&[2, 0, 1])?
        .reshape(&[t * batch, n_vars])
}

/// `[T·B, V]` to `[B·V, T]`.
pub fn from_time_major(x: Var<'_>, batch: usize, n_vars: usize) -> Result<Var<'_>> {
    let t = x.len() / (batch * n_vars).max(1);
    x.reshape(&[t, batch, n_vars])?
        .permute(&[1, 2, 0])?
        .reshape(&[batch * n_vars, t])
}

/// Residual alignment `x + conv(x)` on `[B·V, T]` rows.
pub fn align<'t>(x: Var<'t>, vars: &LContextVars<'t>) -> Result<Var<'t>> {
    x.add(x.conv1d_same(vars.conv_kernel, vars.conv_bias)?)
}

/// Gate on time-major inputs: `m = sigmoid(W [x; Δx] + b)`, `h = m ⊙ Δx`.
///
/// Returns `(h, m)`, both `[T·B, V]`.
pub fn gate<'t>(aligned: Var<'t>, delta: Var<'t>, vars: &LContextVars<'t>) -> Result<(Var<'t>, Var<'t>)> {
    if aligned.shape() != delta.shape() {
        return Err(Error::Dimension(format!(
            "gate inputs {:?} and {:?} differ",
            aligned.shape(),
            delta.shape()
        )));
    }
    let u = Var::concat(&[aligned, delta], 1)?;
    let m = u
        .matmul(vars.gate_weight.transpose()?)?
        .add(vars.gate_bias)?
        .sigmoid();
    let h = m.mul(delta)?;
    Ok((h, m))
}

/// GRU over time-major input `[T·B, V]` from a zero initial state.
///
/// ```text
/// z = σ(W_z h_t + U_z s + b_z)
/// r = σ(W_r h_t + U_r s + b_r)
/// n = tanh(W_n h_t + r ⊙ (U_n s) + b_n)
/// s' = (1 − z) ⊙ n + z ⊙ s
/// ```
///
/// Returns the state after every step, `[T·B, V]`.
pub fn gru_encode<'t>(input: Var<'t>, batch: usize, vars: &LContextVars<'t>) -> Result<Var<'t>> {
    let shape = input.shape();
    if shape.len() != 2 || batch == 0 || !shape[0].is_multiple_of(batch) {
        return Err(Error::Dimension(format!(
            "GRU input {:?} is not time-major for batch {}",
            shape, batch
        )));
    }
    let tape = input.tape();
    let hidden = vars.u_update.shape()[0];
    let steps = shape[0] / batch;
    let xz = input.matmul(vars.w_update.transpose()?)?.add(vars.b_update)?;
    let xr = input.matmul(vars.w_reset.transpose()?)?.add(vars.b_reset)?;
    let xn = input.matmul(vars.w_cand.transpose()?)?.add(vars.b_cand)?;
    let uz = vars.u_update.transpose()?;
    let ur = vars.u_reset.transpose()?;
    let un = vars.u_cand.transpose()?;

    let mut state = tape.constant(NumArray::zeros(&[batch, hidden]));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let z = xz.narrow(0, t * batch, batch)?.add(state.matmul(uz)?)?.sigmoid();
        let r = xr.narrow(0, t * batch, batch)?.add(state.matmul(ur)?)?.sigmoid();
        let n = xn
            .narrow(0, t * batch, batch)?
            .add(r.mul(state.matmul(un)?)?)?
            .tanh();
        state = n.add(z.mul(state.sub(n)?)?)?;
        outputs.push(state);
    }
    Var::concat(&outputs, 0)
}

/// How increments are filtered before integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateMode {
    Learned,
    /// `m ≡ 1`, so `h = Δx`.
    Bypass,
}

/// Intermediate tensors of one batched context pass, all `[B·V, T]`.
#[derive(Debug, Clone, Copy)]
pub struct LContextTrace<'t> {
    pub x_norm: Var<'t>,
    pub mean: Var<'t>,
    pub std: Var<'t>,
    pub aligned: Var<'t>,
    pub delta: Var<'t>,
    pub gates: Option<Var<'t>>,
    pub increments: Var<'t>,
    pub context: Var<'t>,
}

/// normalize → align → difference → gate → GRU on a `[B, V, T]` batch.
pub fn generate_batch<'t>(x: Var<'t>, vars: &LContextVars<'t>, mode: GateMode) -> Result<LContextTrace<'t>> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("expected [B, V, T], got {:?}", shape)));
    }
    let (b, v, t) = (shape[0], shape[1], shape[2]);
    let norm = normalize_rows(x.reshape(&[b * v, t])?)?;
    let aligned = align(norm.x, vars)?;
    let delta = aligned.diff_last()?;
    let delta_tm = to_time_major(delta, b, v)?;
    let (h_tm, gates) = match mode {
        GateMode::Learned => {
            let (h, m) = gate(to_time_major(aligned, b, v)?, delta_tm, vars)?;
            (h, Some(from_time_major(m, b, v)?))
        }
        GateMode::Bypass => (delta_tm, None),
    };
    let ctx_tm = gru_encode(h_tm, b, vars)?;
    Ok(LContextTrace {
        x_norm: norm.x,
        mean: norm.mean,
        std: norm.std,
        aligned,
        delta,
        gates,
        increments: from_time_major(h_tm, b, v)?,
        context: from_time_major(ctx_tm, b, v)?,
    })
}

/// Result of [`generate`] for a single `[V, T]` window.
#[derive(Debug, Clone)]
pub struct LContextOutput {
    /// Normalized window before alignment.
    pub x_norm: NumArray,
    pub aligned: NumArray,
    pub gated_increments: NumArray,
    pub context: NumArray,
    pub gate_values: NumArray,
    pub stats: NormStats,
}

/// Runs the context generator on one `[V, T]` window.
pub fn generate(window: &NumArray, params: &LContextParams) -> Result<LContextOutput> {
    if window.ndim() != 2 || window.shape()[0] != params.n_vars() {
        return Err(Error::Dimension(format!(
            "window {:?} for {} channels",
            window.shape(),
            params.n_vars()
        )));
    }
    if !window.is_finite() {
        return Err(Error::Data("window contains non-finite values".into()));
    }
    let (v, t) = (window.shape()[0], window.shape()[1]);
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let x = tape.constant(window.reshaped(vec![1, v, t])?);
    let tr = generate_batch(x, &vars, GateMode::Learned)?;
    let gates = tr.gates.expect("learned gate");
    Ok(LContextOutput {
        x_norm: tr.x_norm.to_array(),
        aligned: tr.aligned.to_array(),
        gated_increments: tr.increments.to_array(),
        context: tr.context.to_array(),
        gate_values: gates.to_array(),
        stats: NormStats {
            mean: tr.mean.to_array().into_values(),
            std: tr.std.to_array().into_values(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arr(shape: &[usize], v: &[f64]) -> NumArray {
        NumArray::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn random_window(seed: u64, v: usize, t: usize) -> NumArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        arr(&[v, t], &(0..v * t).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>())
    }

    #[test]
    fn align_is_residual() {
        let x = random_window(1, 2, 8);
        let mut p = LContextParams::zeros(2, 3);
        let tape = Tape::new();
        let out = align(tape.constant(x.clone()), &p.bind(&tape)).unwrap();
        assert_eq!(out.to_array().values(), x.values());

        p.conv_kernel = arr(&[2, 3], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let tape = Tape::new();
        let out = align(tape.constant(x.clone()), &p.bind(&tape)).unwrap();
        let doubled: Vec<f64> = x.values().iter().map(|v| 2.0 * v).collect();
        assert_eq!(out.to_array().values(), doubled.as_slice());
    }

    #[test]
    fn align_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = LContextParams::init(3, 3, &mut rng).unwrap();
        let x = random_window(2, 3, 10);
        let r = grad_check(&[x, p.conv_kernel.clone(), p.conv_bias.clone()], 1e-5, |t, v| {
            let w = t.constant(random_window(9, 3, 10));
            Ok(v[0].add(v[0].conv1d_same(v[1], v[2])?)?.tanh().mul(w)?.sum())
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    fn run_gate(p: &LContextParams, xa: &NumArray, dx: &NumArray) -> (NumArray, NumArray) {
        let tape = Tape::new();
        let vars = p.bind(&tape);
        let (h, m) = gate(tape.constant(xa.clone()), tape.constant(dx.clone()), &vars).unwrap();
        (h.to_array(), m.to_array())
    }

    #[test]
    fn gate_zero_weights_half_open() {
        let p = LContextParams::zeros(2, 3);
        let xa = random_window(3, 5, 2);
        let dx = random_window(4, 5, 2);
        let (h, m) = run_gate(&p, &xa, &dx);
        assert!(m.values().iter().all(|&v| v == 0.5));
        for (hv, dv) in h.values().iter().zip(dx.values()) {
            assert_eq!(*hv, 0.5 * dv);
        }
        let (h0, _) = run_gate(&p, &xa, &NumArray::zeros(&[5, 2]));
        assert!(h0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_saturates_with_large_bias() {
        let mut p = LContextParams::zeros(2, 3);
        p.gate_bias = arr(&[2], &[20.0, 20.0]);
        let dx = random_window(6, 5, 2);
        let (h, m) = run_gate(&p, &random_window(5, 5, 2), &dx);
        assert!(m.values().iter().all(|&v| (v - 1.0).abs() < 1e-8));
        for (hv, dv) in h.values().iter().zip(dx.values()) {
            assert!((hv - dv).abs() < 1e-8);
        }
    }

    #[test]
    fn gate_rejects_mismatched_inputs() {
        let p = LContextParams::zeros(2, 3);
        let tape = Tape::new();
        let vars = p.bind(&tape);
        let a = tape.constant(NumArray::zeros(&[4, 2]));
        let b = tape.constant(NumArray::zeros(&[3, 2]));
        assert!(matches!(gate(a, b, &vars), Err(Error::Dimension(_))));
    }

    fn run_gru(p: &LContextParams, input_tm: &NumArray, batch: usize) -> NumArray {
        let tape = Tape::new();
        let vars = p.bind(&tape);
        gru_encode(tape.constant(input_tm.clone()), batch, &vars).unwrap().to_array()
    }

    #[test]
    fn gru_zero_input_stays_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = LContextParams::init(3, 3, &mut rng).unwrap();
        for b in [&mut p.gru.b_update, &mut p.gru.b_reset, &mut p.gru.b_cand] {
            *b = NumArray::zeros(&[3]);
        }
        let out = run_gru(&p, &NumArray::zeros(&[12, 3]), 1);
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = LContextParams::init(2, 3, &mut rng).unwrap();
        for b in [&mut p.gru.b_update, &mut p.gru.b_reset, &mut p.gru.b_cand] {
            *b = NumArray::zeros(&[2]);
        }
        let mut input = NumArray::zeros(&[10, 2]);
        let k = 6;
        input.values_mut()[k * 2] = 1.3;
        let out = run_gru(&p, &input, 1);
        assert!(out.values()[..k * 2].iter().all(|&v| v == 0.0));
        assert!(out.values()[k * 2..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gru_matches_hand_unrolled_recurrence() {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let (wz, uz, bz) = (0.7, -0.4, 0.1);
        let (wr, ur, br) = (-0.3, 0.8, -0.2);
        let (wn, un, bn) = (1.1, 0.5, 0.05);
        let inputs = [0.4, -1.2, 0.9];

        let mut s = 0.0;
        let mut expected = Vec::new();
        for &x in &inputs {
            let z = sig(wz * x + uz * s + bz);
            let r = sig(wr * x + ur * s + br);
            let n = (wn * x + r * (un * s) + bn).tanh();
            s = (1.0 - z) * n + z * s;
            expected.push(s);
        }

        let one = |v: f64| arr(&[1, 1], &[v]).into_param();
        let vec1 = |v: f64| arr(&[1], &[v]).into_param();
        let mut p = LContextParams::zeros(1, 3);
        p.gru = GruParams {
            w_update: one(wz),
            u_update: one(uz),
            b_update: vec1(bz),
            w_reset: one(wr),
            u_reset: one(ur),
            b_reset: vec1(br),
            w_cand: one(wn),
            u_cand: one(un),
            b_cand: vec1(bn),
        };
        let out = run_gru(&p, &arr(&[3, 1], &inputs), 1);
        for (a, b) in out.values().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn batched_gru_matches_single_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = LContextParams::init(2, 3, &mut rng).unwrap();
        let a = random_window(1, 6, 2);
        let b = random_window(2, 6, 2);
        // interleave into time-major [T·B, V] with B = 2
        let mut joint = Vec::new();
        for t in 0..6 {
            joint.extend_from_slice(a.row(t));
            joint.extend_from_slice(b.row(t));
        }
        let out = run_gru(&p, &arr(&[12, 2], &joint), 2);
        let oa = run_gru(&p, &a, 1);
        let ob = run_gru(&p, &b, 1);
        for t in 0..6 {
            assert_eq!(out.row(2 * t), oa.row(t));
            assert_eq!(out.row(2 * t + 1), ob.row(t));
        }
    }

    #[test]
    fn constant_window_gives_zero_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = LContextParams::init(3, 3, &mut rng).unwrap();
        for b in [&mut p.gru.b_update, &mut p.gru.b_reset, &mut p.gru.b_cand] {
            *b = NumArray::zeros(&[3]);
        }
        p.conv_bias = NumArray::zeros(&[3]);
        let out = generate(&NumArray::full(&[3, 16], 4.2), &p).unwrap();
        assert!(out.context.values().iter().all(|&v| v == 0.0));
        assert!(out.gated_increments.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generate_shapes_and_gate_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (v, t) in [(1, 2), (3, 7), (4, 32)] {
            let p = LContextParams::init(v, 3, &mut rng).unwrap();
            let out = generate(&random_window(v as u64, v, t), &p).unwrap();
            assert_eq!(out.x_norm.shape(), &[v, t]);
            assert_eq!(out.context.shape(), &[v, t]);
            assert!(out.gate_values.values().iter().all(|&m| m > 0.0 && m < 1.0));
            let delta = crate::preprocess::difference(&out.aligned).unwrap();
            for (h, d) in out.gated_increments.values().iter().zip(delta.values()) {
                assert!(h.abs() <= d.abs());
            }
        }
    }

    #[test]
    fn context_is_causal_up_to_kernel_lookahead() {
        // Normalization statistics span the whole window, so the probe
        // compares the context computed on pre-normalized data.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = LContextParams::init(2, 3, &mut rng).unwrap();
        let base = random_window(5, 2, 20);
        let run = |x: &NumArray| {
            let tape = Tape::new();
            let vars = p.bind(&tape);
            let xv = tape.constant(x.clone());
            let aligned = align(xv, &vars).unwrap();
            let delta = aligned.diff_last().unwrap();
            let (h, _) = gate(
                to_time_major(aligned, 1, 2).unwrap(),
                to_time_major(delta, 1, 2).unwrap(),
                &vars,
            )
            .unwrap();
            from_time_major(gru_encode(h, 1, &vars).unwrap(), 1, 2).unwrap().to_array()
        };
        let t_probe = 12;
        let mut bumped = base.clone();
        bumped.values_mut()[t_probe] += 0.7;
        let (a, b) = (run(&base), run(&bumped));
        let half = 1;
        for c in 0..2 {
            assert_eq!(&a.row(c)[..t_probe - half], &b.row(c)[..t_probe - half]);
        }
        assert_ne!(a.row(0)[t_probe - half..], b.row(0)[t_probe - half..]);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let p = LContextParams::init(3, 3, &mut rng).unwrap();
        let x = random_window(17, 3, 12);
        let weights = random_window(18, 3, 12);
        let params: Vec<NumArray> = p.named_arrays().into_iter().map(|(_, a)| a.clone()).collect();
        let r = grad_check(&params, 1e-5, |t, v| {
            let vars = LContextVars {
                conv_kernel: v[0],
                conv_bias: v[1],
                gate_weight: v[2],
                gate_bias: v[3],
                w_update: v[4],
                u_update: v[5],
                b_update: v[6],
                w_reset: v[7],
                u_reset: v[8],
                b_reset: v[9],
                w_cand: v[10],
                u_cand: v[11],
                b_cand: v[12],
            };
            let xv = t.constant(x.reshaped(vec![1, 3, 12])?);
            let tr = generate_batch(xv, &vars, GateMode::Learned)?;
            Ok(tr.context.mul(t.constant(weights.clone()))?.sum())
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
