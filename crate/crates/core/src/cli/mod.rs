//! `ldrive` subcommands.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::report::{lag_side_by_side, TextReport};
use crate::analysis::{
    bound_sim, dcor, detect_events, fit_proxy, gate_event_analysis, lag_analysis, write_json, ProxyFit, ProxyForm,
};
use crate::data::{load_csv, make_windows, split, MultiSeries, WindowSample};
use crate::diffcore::{grad_check, NumArray};
use crate::error::{Error, Result};
use crate::lcontext::generate;
use crate::predictor::{forward_batch, ModelConfig, ModelParams, ModelVars, Variant};
use crate::preprocess::difference;
use crate::synth::{gen_regime_switch, read_switch_times};
use crate::train::{metrics, predict, train, write_metrics_json};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ldrive", version, about = "Change-aware time-series forecasting and lag diagnostics")]
pub struct Cli {
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a regime-switching series with labels.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, history and test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Post-event error mass of one or two checkpoints.
    Lag(LagArgs),
    /// Reduced-form regressions of rolling predictions around events.
    Proxy(ProxyArgs),
    /// Distance correlation of two files, or of increments against context.
    Dcor(DcorArgs),
    /// Simulate the error recursion against its worst-case bound.
    Bound(BoundArgs),
    /// Gate statistics inside and outside event regions.
    Gate(GateArgs),
    /// Finite-difference check of all model gradients on a small instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub slope: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    #[arg(long)]
    pub min_dwell: Option<usize>,
    #[arg(long)]
    pub max_dwell: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub lookback: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub patch_len: Option<usize>,
    #[arg(long)]
    pub n_pos: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// full, no-lcontext, no-gating, rand-context, no-relpos, global-pos, abs-pos
    #[arg(long)]
    pub variant: Option<Variant>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// train, val, test or all
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Comma-separated prefixes of the forecast to score, e.g. 24,48.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct EventArgs {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub min_gap: Option<usize>,
    #[arg(long)]
    pub percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LagArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Second checkpoint reported side by side.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub events: EventArgs,
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub events: EventArgs,
    /// inertia_only, update_only, full; all three when omitted.
    #[arg(long)]
    pub form: Option<ProxyForm>,
    #[arg(long)]
    pub proxy_train_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DcorArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// First CSV (rows are observations).
    #[arg(long, requires = "b", conflicts_with = "checkpoint")]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    /// Draw rho_t uniformly from [-rho_max, rho_max] instead of a fixed rho.
    #[arg(long)]
    pub rho_max: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// adversarial, random or constant
    #[arg(long)]
    pub disturbance: Option<String>,
}

#[derive(Debug, Args)]
pub struct GateArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Labels sidecar with switch_times; detected from the data when omitted.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub detect: EventArgs,
    #[arg(long)]
    pub region: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub variant: Option<Variant>,
}

fn prepare(out: &OutArgs, cfg: &mut RunConfig) -> Result<()> {
    cfg.set_opt("seed", &out.seed)?;
    fs::create_dir_all(&out.out_dir).map_err(|e| Error::io(&out.out_dir, e))
}

fn apply_model(m: &ModelArgs, cfg: &mut RunConfig) -> Result<()> {
    cfg.set_opt("lookback", &m.lookback)?;
    cfg.set_opt("horizon", &m.horizon)?;
    cfg.set_opt("patch_len", &m.patch_len)?;
    cfg.set_opt("n_pos", &m.n_pos)?;
    cfg.set_opt("hidden", &m.hidden)?;
    cfg.set_opt("kernel_size", &m.kernel_size)?;
    cfg.set_opt("variant", &m.variant.map(Variant::name))?;
    cfg.normalize_variant()
}

fn apply_split(s: &SplitArgs, cfg: &mut RunConfig) -> Result<()> {
    cfg.set_opt("train_frac", &s.train_frac)?;
    cfg.set_opt("val_frac", &s.val_frac)?;
    cfg.set_opt("split", &s.split)
}

fn apply_events(e: &EventArgs, cfg: &mut RunConfig) -> Result<()> {
    cfg.set_opt("window", &e.window)?;
    cfg.set_opt("min_gap", &e.min_gap)?;
    cfg.set_opt("percentile", &e.percentile)
}

/// The configured split of `series` and its offset in the full series.
fn select_split(series: &MultiSeries, cfg: &RunConfig, min_len: usize) -> Result<(MultiSeries, usize)> {
    let name = cfg.raw("split").to_string();
    if name == "all" {
        return Ok((series.clone(), 0));
    }
    let (tr, va, te) = split(series, cfg.get("train_frac")?, cfg.get("val_frac")?, min_len)?;
    match name.as_str() {
        "train" => Ok((tr, 0)),
        "val" => {
            let off = tr.len();
            Ok((va, off))
        }
        "test" => {
            let off = tr.len() + va.len();
            Ok((te, off))
        }
        other => Err(Error::Config(format!("split must be train, val, test or all, got '{other}'"))),
    }
}

fn load_checkpoint(path: &Path, cfg: &mut RunConfig, series: &MultiSeries) -> Result<ModelParams> {
    let model = ModelParams::load(path)?;
    if model.config.n_vars != series.n_vars() {
        return Err(Error::Dimension(format!(
            "checkpoint expects {} channels, dataset has {}",
            model.config.n_vars,
            series.n_vars()
        )));
    }
    cfg.set_model(&model.config)?;
    Ok(model)
}

fn checkpoint_label(path: &Path, fallback: &str) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or(fallback).to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a, &mut cfg),
        Command::Train(a) => cmd_train(a, &mut cfg),
        Command::Eval(a) => cmd_eval(a, &mut cfg),
        Command::Lag(a) => cmd_lag(a, &mut cfg),
        Command::Proxy(a) => cmd_proxy(a, &mut cfg),
        Command::Dcor(a) => cmd_dcor(a, &mut cfg),
        Command::Bound(a) => cmd_bound(a, &mut cfg),
        Command::Gate(a) => cmd_gate(a, &mut cfg),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut cfg),
    }
}

fn cmd_synth(a: SynthArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    cfg.set_opt("slope", &a.slope)?;
    cfg.set_opt("noise_std", &a.noise_std)?;
    cfg.set_opt("offset", &a.offset)?;
    cfg.set_opt("min_dwell", &a.min_dwell)?;
    cfg.set_opt("max_dwell", &a.max_dwell)?;
    cfg.set_opt("length", &a.length)?;
    cfg.set_opt("n_channels", &a.channels)?;
    let rc = cfg.regime_config()?;
    let labeled = gen_regime_switch(&rc)?;
    let csv = a.out.out_dir.join("synth.csv");
    let side = labeled.write(&csv, &rc)?;
    cfg.echo(&a.out.out_dir)?;
    println!("wrote {} ({} steps, {} switches)", csv.display(), rc.length, labeled.switch_times.len());
    println!("wrote {}", side.display());
    Ok(())
}

fn windows_of(series: &MultiSeries, c: &ModelConfig, stride: usize) -> Result<Vec<WindowSample>> {
    make_windows(series, c.lookback, c.horizon, stride)
}

fn cmd_train(a: TrainArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    apply_model(&a.model, cfg)?;
    apply_split(&a.split, cfg)?;
    cfg.set_opt("lr", &a.lr)?;
    cfg.set_opt("batch_size", &a.batch_size)?;
    cfg.set_opt("max_epochs", &a.max_epochs)?;
    cfg.set_opt("patience", &a.patience)?;
    cfg.set_opt("stride", &a.stride)?;
    let series = load_csv(&a.data)?;
    let mc = cfg.model_config(series.n_vars())?;
    let tc = cfg.train_config()?;
    let stride: usize = cfg.get("stride")?;
    cfg.echo(&a.out.out_dir)?;

    let (tr, va, te) = split(&series, cfg.get("train_frac")?, cfg.get("val_frac")?, mc.lookback + mc.horizon)?;
    let (tw, vw, sw) = (windows_of(&tr, &mc, stride)?, windows_of(&va, &mc, 1)?, windows_of(&te, &mc, 1)?);
    let init = ModelParams::init(mc, tc.seed)?;
    println!(
        "training {} ({} params) on {} windows, validating on {}",
        mc.variant,
        init.n_params(),
        tw.len(),
        vw.len()
    );
    let (best, history) = train(init, &tw, &vw, &tc)?;
    for r in &history.epochs {
        println!(
            "epoch {:>3}  train {:.6}  val_mse {:.6}  val_mae {:.6}  {:.1}s",
            r.epoch, r.train_loss, r.val_mse, r.val_mae, r.wall_secs
        );
    }
    let dir = &a.out.out_dir;
    best.save(dir.join("model.json"))?;
    history.write_csv(dir.join("history.csv"))?;
    let targets: Vec<NumArray> = sw.iter().map(|s| s.target.clone()).collect();
    let m = metrics(&predict(&best, &sw)?, &targets)?;
    write_metrics_json(&m, dir.join("metrics.json"))?;
    println!("best epoch {}; test mse {:.6} mae {:.6} mape {:.3}", history.best_epoch, m.mse, m.mae, m.mape);
    Ok(())
}

#[derive(Serialize)]
struct HorizonMetrics {
    horizon: usize,
    mse: f64,
    mae: f64,
    mape: f64,
}

#[derive(Serialize)]
struct EvalReport {
    split: String,
    samples: usize,
    metrics: Vec<HorizonMetrics>,
}

fn truncate(a: &NumArray, h: usize) -> NumArray {
    let v = a.shape()[0];
    let values = (0..v).flat_map(|c| a.row(c)[..h].to_vec()).collect();
    NumArray::new(vec![v, h], values).expect("prefix shape")
}

fn cmd_eval(a: EvalArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    apply_split(&a.split, cfg)?;
    let series = load_csv(&a.data)?;
    let model = load_checkpoint(&a.checkpoint, cfg, &series)?;
    cfg.echo(&a.out.out_dir)?;
    let c = model.config;
    let (part, _) = select_split(&series, cfg, c.lookback + c.horizon)?;
    let samples = windows_of(&part, &c, 1)?;
    let preds = predict(&model, &samples)?;
    let horizons = if a.horizons.is_empty() { vec![c.horizon] } else { a.horizons.clone() };
    let mut blocks = Vec::new();
    for h in horizons {
        if h == 0 || h > c.horizon {
            return Err(Error::Config(format!("horizon {h} outside 1..={}", c.horizon)));
        }
        let p: Vec<NumArray> = preds.iter().map(|x| truncate(x, h)).collect();
        let y: Vec<NumArray> = samples.iter().map(|s| truncate(&s.target, h)).collect();
        let m = metrics(&p, &y)?;
        println!("horizon {h:>4}  mse {:.6}  mae {:.6}  mape {:.3}", m.mse, m.mae, m.mape);
        blocks.push(HorizonMetrics { horizon: h, mse: m.mse, mae: m.mae, mape: m.mape });
    }
    let report = EvalReport { split: cfg.raw("split").to_string(), samples: samples.len(), metrics: blocks };
    write_json(&report, a.out.out_dir.join("eval.json"))
}

fn cmd_lag(a: LagArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    apply_split(&a.split, cfg)?;
    apply_events(&a.events, cfg)?;
    let series = load_csv(&a.data)?;
    let mut paths = vec![a.checkpoint.clone()];
    paths.extend(a.compare.clone());
    let mut names = Vec::new();
    let mut reports = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let model = load_checkpoint(p, cfg, &series)?;
        let c = model.config;
        let (part, _) = select_split(&series, cfg, c.lookback + 1)?;
        let la = lag_analysis(&model, &part, cfg.get("window")?, cfg.get("percentile")?, cfg.min_gap()?)?;
        let mut name = checkpoint_label(p, "model");
        if names.contains(&name) {
            name = format!("{name}_{i}");
        }
        write_json(&la.report, a.out.out_dir.join(format!("lag_{name}.json")))?;
        la.write_trace_csv(a.out.out_dir.join(format!("trace_{name}.csv")))?;
        names.push(name);
        reports.push(la.report);
    }
    cfg.echo(&a.out.out_dir)?;
    if reports.len() == 1 {
        print!("{}", reports[0].to_text());
    } else {
        print!("{}", lag_side_by_side(&names, &reports));
    }
    Ok(())
}

fn cmd_proxy(a: ProxyArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    apply_split(&a.split, cfg)?;
    apply_events(&a.events, cfg)?;
    cfg.set_opt("proxy_train_frac", &a.proxy_train_frac)?;
    let series = load_csv(&a.data)?;
    let model = load_checkpoint(&a.checkpoint, cfg, &series)?;
    cfg.echo(&a.out.out_dir)?;
    let c = model.config;
    let (part, _) = select_split(&series, cfg, c.lookback + 1)?;
    let la = lag_analysis(&model, &part, cfg.get("window")?, cfg.get("percentile")?, cfg.min_gap()?)?;
    let samples = la.proxy_samples()?;
    let forms = a.form.map_or_else(|| ProxyForm::ALL.to_vec(), |f| vec![f]);
    let frac: f64 = cfg.get("proxy_train_frac")?;
    let fits: Vec<ProxyFit> = forms.into_iter().map(|f| fit_proxy(&samples, f, frac)).collect::<Result<_>>()?;
    for f in &fits {
        print!("{}", f.to_text());
    }
    write_json(&fits, a.out.out_dir.join("proxy.json"))
}

/// Numeric CSV as an `[n, p]` array, rows being observations.
fn observations(path: &Path) -> Result<NumArray> {
    let s = load_csv(path)?;
    let (v, n) = (s.n_vars(), s.len());
    let mut out = Vec::with_capacity(v * n);
    for t in 0..n {
        for c in 0..v {
            out.push(s.channel(c)[t]);
        }
    }
    NumArray::new(vec![n, v], out)
}

fn transpose(a: &NumArray) -> NumArray {
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a.at2(i, j);
        }
    }
    NumArray::new(vec![c, r], out).expect("transpose")
}

#[derive(Serialize)]
struct DcorReport {
    dcor: f64,
    n: usize,
    windows: usize,
    min: f64,
    max: f64,
}

fn cmd_dcor(a: DcorArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    apply_split(&a.split, cfg)?;
    let report = match (&a.a, &a.b, &a.checkpoint, &a.data) {
        (Some(pa), Some(pb), None, _) => {
            let (x, y) = (observations(pa)?, observations(pb)?);
            let d = dcor(&x, &y)?;
            DcorReport { dcor: d, n: x.shape()[0], windows: 1, min: d, max: d }
        }
        (None, None, Some(ck), Some(data)) => {
            let series = load_csv(data)?;
            let model = load_checkpoint(ck, cfg, &series)?;
            let c = model.config;
            if matches!(c.variant, Variant::NoLcontext | Variant::RandContext) {
                return Err(Error::Config(format!("variant {} has no context generator", c.variant)));
            }
            let (part, _) = select_split(&series, cfg, c.lookback)?;
            let mut values = Vec::new();
            for s in 0..part.len() / c.lookback {
                let w = part.slice(s * c.lookback, (s + 1) * c.lookback).values;
                let out = generate(&w, &model.lcontext)?;
                // time steps are the observations; channels are coordinates
                let inc = transpose(&difference(&out.x_norm)?);
                values.push(dcor(&inc, &transpose(&out.context))?);
            }
            if values.is_empty() {
                return Err(Error::Config("split shorter than one lookback window".into()));
            }
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            DcorReport {
                dcor: mean,
                n: c.lookback,
                windows: values.len(),
                min: values.iter().cloned().fold(f64::INFINITY, f64::min),
                max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            }
        }
        _ => return Err(Error::Config("dcor needs either --a and --b, or --checkpoint and --data".into())),
    };
    cfg.echo(&a.out.out_dir)?;
    println!("dcor {:.6} (n={}, windows={})", report.dcor, report.n, report.windows);
    write_json(&report, a.out.out_dir.join("dcor.json"))
}

fn cmd_bound(a: BoundArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    cfg.set_opt("rho", &a.rho)?;
    cfg.set_opt("rho_max", &a.rho_max)?;
    cfg.set_opt("eps", &a.eps)?;
    cfg.set_opt("steps", &a.steps)?;
    cfg.set_opt("disturbance", &a.disturbance)?;
    let check = bound_sim(cfg.rho_path()?, cfg.get("eps")?, cfg.get("steps")?, cfg.disturbance()?)?;
    cfg.echo(&a.out.out_dir)?;
    print!("{}", check.to_text());
    write_json(&check, a.out.out_dir.join("bound.json"))
}

fn cmd_gate(a: GateArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    apply_split(&a.split, cfg)?;
    apply_events(&a.detect, cfg)?;
    cfg.set_opt("region", &a.region)?;
    let series = load_csv(&a.data)?;
    let model = load_checkpoint(&a.checkpoint, cfg, &series)?;
    cfg.echo(&a.out.out_dir)?;
    let (part, offset) = select_split(&series, cfg, model.config.lookback)?;
    let events: Vec<usize> = match &a.events {
        Some(p) => read_switch_times(p)?
            .into_iter()
            .filter(|&t| t >= offset && t < offset + part.len())
            .map(|t| t - offset)
            .collect(),
        None => detect_events(&part, cfg.get("percentile")?, cfg.min_gap()?).times,
    };
    let report = gate_event_analysis(&model, &part, &events, cfg.get("region")?)?;
    print!("{}", report.to_text());
    write_json(&report, a.out.out_dir.join("gate.json"))
}

#[derive(Serialize)]
struct GradcheckReport {
    variant: Variant,
    max_rel_error: f64,
    checked: usize,
    tolerance: f64,
    pass: bool,
}

/// Full-model check on a V=3, T=16, P=4, K=2, Q=8, H=4 instance.
pub fn gradcheck_small(variant: Variant, seed: u64) -> Result<(f64, usize)> {
    use rand::{Rng, SeedableRng};
    let cfg = ModelConfig { n_vars: 3, lookback: 16, horizon: 4, patch_len: 4, n_pos: 2, hidden: 8, kernel_size: 3, variant }
        .with_variant(variant);
    let params = ModelParams::init(cfg, seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
    let x = NumArray::new(vec![2, 3, 16], draw(96))?;
    let y = NumArray::new(vec![2, 3, 4], draw(24))?;
    let arrays: Vec<NumArray> = params.named_arrays().into_iter().map(|(_, a)| a.clone()).collect();
    let report = grad_check(&arrays, 1e-5, |t, v| {
        let vars = ModelVars::from_ordered(&cfg, v.to_vec());
        let out = forward_batch(&vars, &cfg, t.constant(x.clone()))?;
        Ok(out.forecast.sub(t.constant(y.clone()))?.square()?.sum())
    })?;
    Ok((report.max_rel_error, report.checked))
}

fn cmd_gradcheck(a: GradcheckArgs, cfg: &mut RunConfig) -> Result<()> {
    prepare(&a.out, cfg)?;
    cfg.set_opt("variant", &a.variant.map(Variant::name))?;
    let variant = cfg.variant()?;
    let (err, checked) = gradcheck_small(variant, cfg.get("seed")?)?;
    cfg.echo(&a.out.out_dir)?;
    let tolerance = 1e-4;
    let report = GradcheckReport { variant, max_rel_error: err, checked, tolerance, pass: err < tolerance };
    println!(
        "gradcheck {variant}: max relative error {err:.3e} over {checked} entries ({})",
        if report.pass { "pass" } else { "fail" }
    );
    write_json(&report, a.out.out_dir.join("gradcheck.json"))
}
