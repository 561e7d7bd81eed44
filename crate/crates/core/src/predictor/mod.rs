//! Patch-structured predictor and the full forecasting model.
//!
//! The normalized window and its latent context are stacked into two slabs,
//! cut into non-overlapping patches, extended with learnable positional
//! basis rows, mapped row-wise by a shared patch MLP and flattened into a
//! shared linear head. Rows of a variable are laid out as
//!
//! ```text
//! [x' patch 0 .. x' patch n-1, ctx patch 0 .. ctx patch n-1, pos 0 .. pos K-1]
//! ```
//!
//! and the head reads them row-major (row, then hidden unit).

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{NumArray, Tape, Var};
use crate::error::{Error, Result};
use crate::lcontext::{generate_batch, uniform, GateMode, LContextParams, LContextTrace, LContextVars};
use crate::preprocess::{denormalize_rows, normalize_rows};

pub use checkpoint::{Checkpoint, CheckpointHeader, NamedArray};

pub const DEFAULT_PATCH_LEN: usize = 16;
pub const DEFAULT_N_POS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 128;

/// Model variant; `Full` is the complete architecture, the rest are ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Context slab replaced by zeros.
    NoLcontext,
    /// Gate fixed at 1.
    NoGating,
    /// Context replaced by a learnable `[V, T]` array.
    RandContext,
    /// No positional basis rows.
    NoRelpos,
    /// One additive basis per absolute patch index instead of shared rows.
    GlobalPos,
    /// Fixed sinusoidal encoding of the patch index added to patch rows.
    AbsPos,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoLcontext,
        Variant::NoGating,
        Variant::RandContext,
        Variant::NoRelpos,
        Variant::GlobalPos,
        Variant::AbsPos,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoLcontext => "no-lcontext",
            Variant::NoGating => "no-gating",
            Variant::RandContext => "rand-context",
            Variant::NoRelpos => "no-relpos",
            Variant::GlobalPos => "global-pos",
            Variant::AbsPos => "abs-pos",
        }
    }

    /// Whether the shared positional basis rows are appended.
    pub fn uses_shared_pos(self) -> bool {
        !matches!(self, Variant::NoRelpos | Variant::GlobalPos | Variant::AbsPos)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant '{}' (expected one of: {})",
                    s,
                    Variant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_vars: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub n_pos: usize,
    pub hidden: usize,
    pub kernel_size: usize,
    pub variant: Variant,
}

impl ModelConfig {
    /// Defaults for everything except the data-dependent sizes.
    pub fn new(n_vars: usize, lookback: usize, horizon: usize) -> Self {
        Self {
            n_vars,
            lookback,
            horizon,
            patch_len: DEFAULT_PATCH_LEN,
            n_pos: DEFAULT_N_POS,
            hidden: DEFAULT_HIDDEN,
            kernel_size: crate::lcontext::DEFAULT_KERNEL_SIZE,
            variant: Variant::Full,
        }
    }

    /// Sets the variant; variants without shared bases force `n_pos = 0`.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        if !variant.uses_shared_pos() {
            self.n_pos = 0;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_vars == 0 || self.horizon == 0 || self.hidden == 0 {
            return fail(format!("n_vars, horizon and hidden must be positive: {:?}", self));
        }
        if self.lookback < 2 {
            return fail(format!("lookback must be at least 2, got {}", self.lookback));
        }
        if self.patch_len == 0 || self.patch_len > self.lookback {
            return fail(format!(
                "patch length {} must lie in 1..={} (the lookback)",
                self.patch_len, self.lookback
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return fail(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if !self.variant.uses_shared_pos() && self.n_pos != 0 {
            return fail(format!("variant {} requires n_pos = 0", self.variant));
        }
        Ok(())
    }

    /// Patches per fused slab, `ceil(T / P)`.
    pub fn n_patches(&self) -> usize {
        self.lookback.div_ceil(self.patch_len)
    }

    /// Rows per variable fed to the patch MLP.
    pub fn rows(&self) -> usize {
        2 * self.n_patches() + self.n_pos
    }

    pub fn head_input(&self) -> usize {
        self.rows() * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    /// `[V, K, P]`, absent when `K = 0`.
    pub pos: Option<NumArray>,
    /// `[V, 2n, P]`, present only for [`Variant::GlobalPos`].
    pub global_pos: Option<NumArray>,
    /// `[Q, P]`
    pub patch_weight: NumArray,
    /// `[Q]`
    pub patch_bias: NumArray,
    /// `[H, R·Q]`
    pub head_weight: NumArray,
    /// `[H]`
    pub head_bias: NumArray,
}

/// All learnable arrays of the forecasting model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seed: u64,
    pub lcontext: LContextParams,
    pub predictor: PredictorParams,
    /// `[V, T]`, present only for [`Variant::RandContext`].
    pub rand_context: Option<NumArray>,
}

impl ModelParams {
    /// Seeded initialization; arrays are drawn in serialization order.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lcontext = LContextParams::init(config.n_vars, config.kernel_size, &mut rng)?;
        let (v, p, q) = (config.n_vars, config.patch_len, config.hidden);
        let pb = 1.0 / (p as f64).sqrt();
        let pos = (config.n_pos > 0).then(|| uniform(&mut rng, &[v, config.n_pos, p], pb));
        let global_pos = (config.variant == Variant::GlobalPos)
            .then(|| uniform(&mut rng, &[v, 2 * config.n_patches(), p], pb));
        let patch_weight = uniform(&mut rng, &[q, p], pb);
        let patch_bias = uniform(&mut rng, &[q], pb);
        let hb = 1.0 / (config.head_input() as f64).sqrt();
        let head_weight = uniform(&mut rng, &[config.horizon, config.head_input()], hb);
        let head_bias = uniform(&mut rng, &[config.horizon], hb);
        let rand_context = (config.variant == Variant::RandContext)
            .then(|| uniform(&mut rng, &[v, config.lookback], 1.0));
        Ok(Self {
            config,
            seed,
            lcontext,
            predictor: PredictorParams {
                pos,
                global_pos,
                patch_weight,
                patch_bias,
                head_weight,
                head_bias,
            },
            rand_context,
        })
    }

    /// Arrays in serialization (declaration) order.
    pub fn named_arrays(&self) -> Vec<(&'static str, &NumArray)> {
        let mut out = self.lcontext.named_arrays();
        let p = &self.predictor;
        if let Some(a) = &p.pos {
            out.push(("predictor.pos", a));
        }
        if let Some(a) = &p.global_pos {
            out.push(("predictor.global_pos", a));
        }
        out.push(("predictor.patch.weight", &p.patch_weight));
        out.push(("predictor.patch.bias", &p.patch_bias));
        out.push(("predictor.head.weight", &p.head_weight));
        out.push(("predictor.head.bias", &p.head_bias));
        if let Some(a) = &self.rand_context {
            out.push(("rand_context", a));
        }
        out
    }

    /// Mutable arrays, same order as [`ModelParams::named_arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut NumArray> {
        let mut out = self.lcontext.arrays_mut();
        let p = &mut self.predictor;
        if let Some(a) = p.pos.as_mut() {
            out.push(a);
        }
        if let Some(a) = p.global_pos.as_mut() {
            out.push(a);
        }
        out.push(&mut p.patch_weight);
        out.push(&mut p.patch_bias);
        out.push(&mut p.head_weight);
        out.push(&mut p.head_bias);
        if let Some(a) = self.rand_context.as_mut() {
            out.push(a);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.arrays_mut().into_iter().for_each(NumArray::zero_grad);
    }

    /// Records all arrays on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        let arrays: Vec<Var<'t>> = self.named_arrays().into_iter().map(|(_, a)| tape.param(a)).collect();
        ModelVars::from_ordered(&self.config, arrays)
    }

    /// Adds the gradients of a bound copy into each array's accumulator.
    pub fn accumulate_grads(&mut self, vars: &ModelVars<'_>, grads: &crate::diffcore::Gradients) -> Result<()> {
        let arrays = self.arrays_mut();
        for (arr, var) in arrays.into_iter().zip(&vars.ordered) {
            arr.accumulate_grad(&grads.wrt_or_zero(*var))?;
        }
        Ok(())
    }

    /// Forecasts one `[V, T]` window, returning `[V, H]` in original units.
    pub fn forecast(&self, window: &NumArray) -> Result<NumArray> {
        let out = self.forecast_batch(std::slice::from_ref(window))?;
        Ok(out.into_iter().next().expect("one window"))
    }

    /// Forecasts several windows in one batched pass.
    pub fn forecast_batch(&self, windows: &[NumArray]) -> Result<Vec<NumArray>> {
        let c = &self.config;
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let tape = Tape::new();
        let vars = self.bind(&tape);
        let x = tape.constant(stack_windows(windows, c.n_vars, c.lookback)?);
        let trace = forward_batch(&vars, c, x)?;
        let y = trace.forecast.to_array();
        let per = c.n_vars * c.horizon;
        Ok(y.values()
            .chunks(per)
            .map(|chunk| NumArray::new(vec![c.n_vars, c.horizon], chunk.to_vec()).expect("chunk"))
            .collect())
    }
}

/// Stacks `[V, T]` windows into a `[B, V, T]` array.
pub fn stack_windows(windows: &[NumArray], n_vars: usize, lookback: usize) -> Result<NumArray> {
    let mut values = Vec::with_capacity(windows.len() * n_vars * lookback);
    for w in windows {
        if w.shape() != [n_vars, lookback] {
            return Err(Error::Dimension(format!(
                "window shape {:?}, model expects [{}, {}]",
                w.shape(),
                n_vars,
                lookback
            )));
        }
        if !w.is_finite() {
            return Err(Error::Data("window contains non-finite values".into()));
        }
        values.extend_from_slice(w.values());
    }
    NumArray::new(vec![windows.len(), n_vars, lookback], values)
}

/// [`ModelParams`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct ModelVars<'t> {
    pub lcontext: LContextVars<'t>,
    pub pos: Option<Var<'t>>,
    pub global_pos: Option<Var<'t>>,
    pub patch_weight: Var<'t>,
    pub patch_bias: Var<'t>,
    pub head_weight: Var<'t>,
    pub head_bias: Var<'t>,
    pub rand_context: Option<Var<'t>>,
    /// Same order as [`ModelParams::named_arrays`].
    pub ordered: Vec<Var<'t>>,
}

impl<'t> ModelVars<'t> {
    /// Rebuilds the named view from variables in serialization order.
    pub fn from_ordered(config: &ModelConfig, ordered: Vec<Var<'t>>) -> Self {
        let mut it = ordered.iter().copied();
        let mut next = || it.next().expect("array count matches config");
        let lcontext = LContextVars {
            conv_kernel: next(),
            conv_bias: next(),
            gate_weight: next(),
            gate_bias: next(),
            w_update: next(),
            u_update: next(),
            b_update: next(),
            w_reset: next(),
            u_reset: next(),
            b_reset: next(),
            w_cand: next(),
            u_cand: next(),
            b_cand: next(),
        };
        let pos = (config.n_pos > 0).then(&mut next);
        let global_pos = (config.variant == Variant::GlobalPos).then(&mut next);
        let patch_weight = next();
        let patch_bias = next();
        let head_weight = next();
        let head_bias = next();
        let rand_context = (config.variant == Variant::RandContext).then(&mut next);
        Self {
            lcontext,
            pos,
            global_pos,
            patch_weight,
            patch_bias,
            head_weight,
            head_bias,
            rand_context,
            ordered,
        }
    }
}

/// Stacks `x'` and the context into `[R, 2, T]`.
pub fn fuse<'t>(x_norm: Var<'t>, context: Var<'t>) -> Result<Var<'t>> {
    let s = x_norm.shape();
    if s != context.shape() || s.len() != 2 {
        return Err(Error::Dimension(format!(
            "cannot fuse {:?} with {:?}",
            s,
            context.shape()
        )));
    }
    let slab = [s[0], 1, s[1]];
    Var::concat(&[x_norm.reshape(&slab)?, context.reshape(&slab)?], 1)
}

/// Cuts `[R, 2, T]` into `[R, 2·ceil(T/P), P]`, zero-padding the last patch.
pub fn patchify(fused: Var<'_>, patch_len: usize) -> Result<Var<'_>> {
    let s = fused.shape();
    if s.len() != 3 || s[1] != 2 {
        return Err(Error::Dimension(format!("expected [R, 2, T], got {:?}", s)));
    }
    if patch_len == 0 || patch_len > s[2] {
        return Err(Error::Config(format!(
            "patch length {} must lie in 1..={}",
            patch_len, s[2]
        )));
    }
    let n = s[2].div_ceil(patch_len);
    fused.pad_last(n * patch_len)?.reshape(&[s[0], 2 * n, patch_len])
}

/// Appends the `[V, K, P]` positional bases below each variable's patches.
///
/// `z` is `[B·V, rows, P]`; the bases are shared by all `B` windows.
pub fn attach_pos<'t>(z: Var<'t>, pos: Option<Var<'t>>) -> Result<Var<'t>> {
    let Some(pos) = pos else {
        return Ok(z);
    };
    let zs = z.shape();
    let ps = pos.shape();
    if ps.len() != 3 || zs.len() != 3 || ps[2] != zs[2] || ps[0] == 0 || !zs[0].is_multiple_of(ps[0]) {
        return Err(Error::Dimension(format!(
            "positional bases {:?} do not match patches {:?}",
            ps, zs
        )));
    }
    if ps[1] == 0 {
        return Ok(z);
    }
    let batch = zs[0] / ps[0];
    let tiled = pos.tile(batch).reshape(&[zs[0], ps[1], ps[2]])?;
    Var::concat(&[z, tiled], 1)
}

/// Shared patch MLP: `tanh(W row + b)` for every length-`P` row.
pub fn patch_map<'t>(d: Var<'t>, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let s = d.shape();
    let ws = weight.shape();
    if s.len() != 3 || ws.len() != 2 || ws[1] != s[2] {
        return Err(Error::Dimension(format!(
            "patch rows {:?} against weight {:?}",
            s, ws
        )));
    }
    let q = ws[0];
    d.reshape(&[s[0] * s[1], s[2]])?
        .matmul(weight.transpose()?)?
        .add(bias)?
        .tanh()
        .reshape(&[s[0], s[1], q])
}

/// Flattens `[R, rows, Q]`, applies the shared head, and denormalizes.
pub fn head<'t>(y: Var<'t>, weight: Var<'t>, bias: Var<'t>, mean: Var<'t>, std: Var<'t>) -> Result<Var<'t>> {
    let s = y.shape();
    let ws = weight.shape();
    if s.len() != 3 || ws.len() != 2 || ws[1] != s[1] * s[2] {
        return Err(Error::Dimension(format!(
            "head weight {:?} for patch features {:?}",
            ws, s
        )));
    }
    let out = y
        .reshape(&[s[0], s[1] * s[2]])?
        .matmul(weight.transpose()?)?
        .add(bias)?;
    denormalize_rows(out, mean, std)
}

/// Fixed sinusoidal encoding of the patch index within each slab, `[2n, P]`.
pub fn sinusoidal_patch_encoding(n_patches: usize, patch_len: usize) -> NumArray {
    let mut values = Vec::with_capacity(2 * n_patches * patch_len);
    for _slab in 0..2 {
        for i in 0..n_patches {
            for p in 0..patch_len {
                let pair = (p / 2 * 2) as f64;
                let angle = i as f64 / 10000f64.powf(pair / patch_len as f64);
                values.push(if p % 2 == 0 { angle.sin() } else { angle.cos() });
            }
        }
    }
    NumArray::new(vec![2 * n_patches, patch_len], values).expect("encoding shape")
}

/// Tensors of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'t> {
    /// `[B, V, H]` in original units.
    pub forecast: Var<'t>,
    /// `[B·V, T]`
    pub x_norm: Var<'t>,
    /// `[B·V, T]`
    pub context: Var<'t>,
    pub lcontext: Option<LContextTrace<'t>>,
}

/// Full forward pass on a `[B, V, T]` batch.
pub fn forward_batch<'t>(vars: &ModelVars<'t>, config: &ModelConfig, x: Var<'t>) -> Result<ForwardTrace<'t>> {
    let s = x.shape();
    if s.len() != 3 || s[1] != config.n_vars || s[2] != config.lookback {
        return Err(Error::Dimension(format!(
            "batch {:?} does not match model [B, {}, {}]",
            s, config.n_vars, config.lookback
        )));
    }
    let tape = x.tape();
    let (b, v, t) = (s[0], s[1], s[2]);
    let rows = b * v;

    let (x_norm, mean, std, context, lc) = match config.variant {
        Variant::NoLcontext | Variant::RandContext => {
            let norm = normalize_rows(x.reshape(&[rows, t])?)?;
            let context = match config.variant {
                Variant::RandContext => {
                    let rc = vars
                        .rand_context
                        .ok_or_else(|| Error::Contract("rand-context variant without its array".into()))?;
                    rc.tile(b).reshape(&[rows, t])?
                }
                _ => tape.constant(NumArray::zeros(&[rows, t])),
            };
            (norm.x, norm.mean, norm.std, context, None)
        }
        _ => {
            let mode = if config.variant == Variant::NoGating {
                GateMode::Bypass
            } else {
                GateMode::Learned
            };
            let tr = generate_batch(x, &vars.lcontext, mode)?;
            (tr.x_norm, tr.mean, tr.std, tr.context, Some(tr))
        }
    };

    let z = patchify(fuse(x_norm, context)?, config.patch_len)?;
    let d = match config.variant {
        Variant::GlobalPos => {
            let gp = vars
                .global_pos
                .ok_or_else(|| Error::Contract("global-pos variant without its array".into()))?;
            let zs = z.shape();
            z.add(gp.tile(b).reshape(&zs)?)?
        }
        Variant::AbsPos => {
            let enc = sinusoidal_patch_encoding(config.n_patches(), config.patch_len);
            let zs = z.shape();
            let tiled = tape.constant(enc).tile(rows).reshape(&zs)?;
            z.add(tiled)?
        }
        _ => attach_pos(z, vars.pos)?,
    };
    let y = patch_map(d, vars.patch_weight, vars.patch_bias)?;
    let out = head(y, vars.head_weight, vars.head_bias, mean, std)?;
    if out.shape()[1] != config.horizon {
        return Err(Error::Dimension(format!(
            "head produced {} steps, configured horizon is {}",
            out.shape()[1],
            config.horizon
        )));
    }
    Ok(ForwardTrace {
        forecast: out.reshape(&[b, v, config.horizon])?,
        x_norm,
        context,
        lcontext: lc,
    })
}
