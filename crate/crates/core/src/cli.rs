//! Command-line entry point: data generation, training, calibration,
//! evaluation, and recovery trials.
//!
//! Every command resolves its flags to explicit values, echoes them to a
//! `config.echo` file beside its outputs, and is fully reproducible from
//! (flags, seed).  Exit codes: 0 success, 2 usage error, 3 data or format
//! error, 4 runtime failure.  `FARE_THREADS` caps worker threads; unset
//! means one worker per machine core.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baselines::{train_ae, train_rnd, AeWeights, RndConfig, RndWeights};
use crate::conformal::{chunk, fit_band, PredictionBand};
use crate::error::{Error, Result};
use crate::eval::{
    bin_rows, build_test_set, clean_fp_rate, detection_by_kind, export_heatmaps, flat_scores,
    roc_auc, run_trials, score_test_set, summarize_trials, write_bins_csv, write_metrics_csv,
    write_roc_csv, write_trials_csv, Method, MethodModel, MetricsRow, TestSetConfig, TrialConfig,
    FAILURE_STEP,
};
use crate::policy::{train, Evaluator, NetConfig, PolicyWeights, TrainConfig};
use crate::simworld::{collect_dataset, CollectConfig, Dataset, Layout};

/// Failure-resilient visual navigation: train, calibrate, evaluate.
#[derive(Debug, Parser)]
#[command(name = "fare", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out expert trajectories into train and calibration splits.
    GenData(GenDataArgs),
    /// Train the navigation policy on a recorded dataset.
    Train(TrainArgs),
    /// Train a detection baseline (ae, vae, or rnd) on the same data.
    TrainBaseline(TrainBaselineArgs),
    /// Fit the conformal score band from calibration trajectories.
    Calibrate(CalibrateArgs),
    /// Score a synthetic benchmark and write ROC, bin, and heatmap files.
    Eval(EvalArgs),
    /// Run closed-loop recovery trials and write the summary table.
    Trials(TrialsArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Trajectories to record.
    #[arg(long = "n-traj", default_value_t = 200)]
    pub n_traj: usize,
    /// Steps recorded per trajectory.
    #[arg(long, default_value_t = 120)]
    pub steps: usize,
    /// Comma-separated layout cycle assigned round-robin.
    #[arg(long, default_value = "corridor,plaza,park", value_delimiter = ',')]
    pub layouts: Vec<String>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Fraction of trajectories (rounded) held out for calibration.
    #[arg(long = "calib-frac", default_value_t = 0.2)]
    pub calib_frac: f64,
    /// Frame height in pixels.
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    /// Frame width in pixels.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Directory for train.ftraj, calib.ftraj, and config.echo.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training split written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Bottleneck weight on the latent divergence term.
    #[arg(long, default_value_t = 1e-3)]
    pub beta: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Latent dimension of the policy encoder.
    #[arg(long, default_value_t = 32)]
    pub latent: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Weight file to write; the loss curve lands beside it as
    /// <out>.loss.csv with one `epoch,loss` row per epoch.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainBaselineArgs {
    /// Baseline family to train.
    #[arg(long, value_parser = ["ae", "vae", "rnd"])]
    pub kind: String,
    /// Training split written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Divergence weight; used by the vae kind only.
    #[arg(long, default_value_t = 1e-3)]
    pub beta: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Latent dimension; used by the ae and vae kinds.
    #[arg(long, default_value_t = 32)]
    pub latent: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Weight file to write; the loss curve lands beside it as
    /// <out>.loss.csv with one `epoch,loss` row per epoch.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Trained policy weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Calibration split written by gen-data.
    #[arg(long)]
    pub calib: PathBuf,
    /// Band period: scores are split into windows of T+1 frames.
    #[arg(long = "T", default_value_t = 49)]
    pub t_len: usize,
    /// Miscoverage level of the band.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Fraction of segments that estimate the mean curve; the rest
    /// calibrate the width.
    #[arg(long, default_value_t = 0.5)]
    pub split: f64,
    /// Band file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained policy weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Conformal band; enables flagging, detection rates, and bin files
    /// for the policy method.
    #[arg(long)]
    pub band: Option<PathBuf>,
    /// Comma-separated methods: fare,ae,vae-r,vae-kl,rnd.
    #[arg(long, default_value = "fare", value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Plain autoencoder weights, needed by the ae method.
    #[arg(long = "ae-weights")]
    pub ae_weights: Option<PathBuf>,
    /// Variational autoencoder weights, needed by vae-r and vae-kl.
    #[arg(long = "vae-weights")]
    pub vae_weights: Option<PathBuf>,
    /// Distillation weights, needed by the rnd method.
    #[arg(long = "rnd-weights")]
    pub rnd_weights: Option<PathBuf>,
    /// Failure trajectories in the benchmark.
    #[arg(long = "n-fail", default_value_t = 90)]
    pub n_fail: usize,
    /// Clean trajectories in the benchmark.
    #[arg(long = "n-normal", default_value_t = 90)]
    pub n_normal: usize,
    #[arg(long, default_value_t = 99)]
    pub seed: u64,
    /// Frame height; must match every scored model.
    #[arg(long, default_value_t = 48)]
    pub height: usize,
    /// Frame width; must match every scored model.
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Heatmap images exported per method.
    #[arg(long, default_value_t = 4)]
    pub snapshots: usize,
    /// Output directory for metrics.csv, roc_<m>.csv, bins_<m>_<k>.csv,
    /// heat_*.pgm, and config.echo.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrialsArgs {
    /// Trained policy weights.
    #[arg(long)]
    pub weights: PathBuf,
    /// Conformal band driving detection.
    #[arg(long)]
    pub band: PathBuf,
    /// Recovery variant: heatmap-informed or random corrective macros.
    #[arg(long, value_parser = ["informed", "blind"], default_value = "informed")]
    pub mode: String,
    /// Trials per failure kind.
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = 71)]
    pub seed: u64,
    /// Frames allowed after the trigger before a trial is cut off.
    #[arg(long, default_value_t = 300)]
    pub budget: usize,
    /// Output directory for metrics.csv, trials_<mode>.csv, config.echo.
    #[arg(long)]
    pub out: PathBuf,
}

/// Maps an error to the documented exit code: 2 usage, 3 data/format, 4
/// runtime.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) => 2,
        Error::Format { .. }
        | Error::MissingInput(_)
        | Error::InsufficientSegments(_)
        | Error::EmptyDataset
        | Error::NotVariational
        | Error::SingleClass
        | Error::InvalidFailureSpec(_) => 3,
        _ => 4,
    }
}

/// Applies the FARE_THREADS cap before any parallel work starts.
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FARE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("FARE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenData(a) => run_gen_data(a),
        Command::Train(a) => run_train(a),
        Command::TrainBaseline(a) => run_train_baseline(a),
        Command::Calibrate(a) => run_calibrate(a),
        Command::Eval(a) => run_eval(a),
        Command::Trials(a) => run_trials_cmd(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingInput(path.to_path_buf()))
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    require_file(path)?;
    Dataset::load(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Directory a file output lands in, created on demand.
fn out_dir_of(file: &Path) -> Result<PathBuf> {
    let dir = match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    ensure_dir(&dir)?;
    Ok(dir)
}

/// Echoes the resolved configuration; reruns with identical flags produce
/// identical bytes.
fn write_echo(dir: &Path, command: &str, fields: &[(&str, String)]) -> Result<()> {
    let mut text = format!("command={command}\n");
    for (k, v) in fields {
        text.push_str(&format!("{k}={v}\n"));
    }
    let path = dir.join("config.echo");
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut text = String::new();
    for (i, l) in losses.iter().enumerate() {
        text.push_str(&format!("{i},{l}\n"));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Loss curve path beside a weight file: weights.fwt -> weights.loss.csv.
fn loss_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

fn parse_layouts(names: &[String]) -> Result<Vec<Layout>> {
    let mut layouts = Vec::with_capacity(names.len());
    for name in names {
        layouts.push(Layout::parse(name).ok_or_else(|| {
            Error::InvalidParameter(format!("unknown layout `{name}` (corridor, plaza, park)"))
        })?);
    }
    Ok(layouts)
}

fn run_gen_data(a: GenDataArgs) -> Result<()> {
    if a.n_traj == 0 {
        return Err(Error::InvalidParameter("--n-traj must be positive".into()));
    }
    if !(0.0..1.0).contains(&a.calib_frac) {
        return Err(Error::InvalidParameter(format!(
            "--calib-frac must be in [0,1), got {}",
            a.calib_frac
        )));
    }
    let layouts = parse_layouts(&a.layouts)?;
    let cc = CollectConfig {
        n_traj: a.n_traj,
        layouts,
        seed: a.seed,
        max_steps: a.steps,
        calib_frac: a.calib_frac,
        height: a.height,
        width: a.width,
    };
    let (train_set, calib_set) = collect_dataset(&cc)?;
    ensure_dir(&a.out)?;
    train_set.save(&a.out.join("train.ftraj"))?;
    calib_set.save(&a.out.join("calib.ftraj"))?;
    write_echo(
        &a.out,
        "gen-data",
        &[
            ("n_traj", a.n_traj.to_string()),
            ("steps", a.steps.to_string()),
            ("layouts", a.layouts.join(",")),
            ("seed", a.seed.to_string()),
            ("calib_frac", a.calib_frac.to_string()),
            ("height", a.height.to_string()),
            ("width", a.width.to_string()),
        ],
    )?;
    println!(
        "wrote {} train + {} calibration trajectories ({} steps, {}x{}) to {}",
        train_set.trajs.len(),
        calib_set.trajs.len(),
        a.steps,
        a.height,
        a.width,
        a.out.display()
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let net = NetConfig {
        channels: data.channels,
        height: data.height,
        width: data.width,
        latent: a.latent,
        ..NetConfig::default()
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        beta: a.beta,
        seed: a.seed,
    };
    let (w, log) = train(&data, &net, &cfg)?;
    let dir = out_dir_of(&a.out)?;
    w.save(&a.out)?;
    write_loss_csv(&loss_path(&a.out), &log.epoch_loss)?;
    write_echo(
        &dir,
        "train",
        &[
            ("data", a.data.display().to_string()),
            ("beta", a.beta.to_string()),
            ("epochs", a.epochs.to_string()),
            ("batch", a.batch.to_string()),
            ("lr", a.lr.to_string()),
            ("latent", a.latent.to_string()),
            ("seed", a.seed.to_string()),
        ],
    )?;
    match log.epoch_loss.last() {
        Some(l) => println!(
            "trained {} epochs, final loss {l:.6}; weights at {}",
            a.epochs,
            a.out.display()
        ),
        None => println!("serialized initial weights at {}", a.out.display()),
    }
    Ok(())
}

fn run_train_baseline(a: TrainBaselineArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        beta: a.beta,
        seed: a.seed,
    };
    let losses = match a.kind.as_str() {
        "rnd" => {
            let rc = RndConfig {
                channels: data.channels,
                height: data.height,
                width: data.width,
                ..RndConfig::default()
            };
            let (w, log) = train_rnd(&data, &rc, &cfg)?;
            out_dir_of(&a.out)?;
            w.save(&a.out)?;
            log.epoch_loss
        }
        kind => {
            let net = NetConfig {
                channels: data.channels,
                height: data.height,
                width: data.width,
                latent: a.latent,
                ..NetConfig::default()
            };
            let (w, log) = train_ae(&data, &net, kind == "vae", a.beta, &cfg)?;
            out_dir_of(&a.out)?;
            w.save(&a.out)?;
            log.epoch_loss
        }
    };
    write_loss_csv(&loss_path(&a.out), &losses)?;
    write_echo(
        &out_dir_of(&a.out)?,
        "train-baseline",
        &[
            ("kind", a.kind.clone()),
            ("data", a.data.display().to_string()),
            ("beta", a.beta.to_string()),
            ("epochs", a.epochs.to_string()),
            ("batch", a.batch.to_string()),
            ("lr", a.lr.to_string()),
            ("latent", a.latent.to_string()),
            ("seed", a.seed.to_string()),
        ],
    )?;
    match losses.last() {
        Some(l) => println!(
            "trained {} baseline for {} epochs, final loss {l:.6}; weights at {}",
            a.kind,
            a.epochs,
            a.out.display()
        ),
        None => println!(
            "serialized initial {} weights at {}",
            a.kind,
            a.out.display()
        ),
    }
    Ok(())
}

fn run_calibrate(a: CalibrateArgs) -> Result<()> {
    require_file(&a.weights)?;
    let w = PolicyWeights::load(&a.weights)?;
    let data = load_dataset(&a.calib)?;
    if a.t_len == 0 {
        return Err(Error::InvalidParameter("--T must be positive".into()));
    }

    let mut ev = Evaluator::new(&w)?;
    let mut trajs = Vec::with_capacity(data.trajs.len());
    for (ti, traj) in data.trajs.iter().enumerate() {
        let mut scores = Vec::with_capacity(traj.len);
        for si in 0..traj.len {
            let (score, _) = ev.eval(data.frame(ti, si))?;
            scores.push(score);
        }
        trajs.push(scores);
    }
    let segments = chunk(&trajs, a.t_len);
    let band = fit_band(&segments, a.alpha, a.split)?;

    let dir = out_dir_of(&a.out)?;
    band.save(&a.out)?;
    write_echo(
        &dir,
        "calibrate",
        &[
            ("weights", a.weights.display().to_string()),
            ("calib", a.calib.display().to_string()),
            ("T", a.t_len.to_string()),
            ("alpha", a.alpha.to_string()),
            ("split", a.split.to_string()),
        ],
    )?;
    println!(
        "fitted band from {} segments (T={}, alpha={}); width {:.6}; band at {}",
        segments.len(),
        a.t_len,
        a.alpha,
        band.w,
        a.out.display()
    );
    Ok(())
}

fn load_model(m: Method, a: &EvalArgs) -> Result<MethodModel> {
    let need = |p: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
        p.clone().ok_or_else(|| {
            Error::InvalidParameter(format!("method {} needs {flag}", m.name()))
        })
    };
    Ok(match m {
        Method::Fare => {
            require_file(&a.weights)?;
            MethodModel::Fare(PolicyWeights::load(&a.weights)?)
        }
        Method::Ae => {
            let p = need(&a.ae_weights, "--ae-weights")?;
            require_file(&p)?;
            MethodModel::Ae(AeWeights::load(&p)?)
        }
        Method::VaeR | Method::VaeKl => {
            let p = need(&a.vae_weights, "--vae-weights")?;
            require_file(&p)?;
            let w = AeWeights::load(&p)?;
            if m == Method::VaeR {
                MethodModel::VaeR(w)
            } else {
                MethodModel::VaeKl(w)
            }
        }
        Method::Rnd => {
            let p = need(&a.rnd_weights, "--rnd-weights")?;
            require_file(&p)?;
            MethodModel::Rnd(RndWeights::load(&p)?)
        }
    })
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let mut methods = Vec::new();
    for name in &a.methods {
        let m = Method::parse(name)?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let band = match &a.band {
        Some(p) => {
            require_file(p)?;
            Some(PredictionBand::load(p)?)
        }
        None => None,
    };
    // Load every requested model up front so a missing artifact fails
    // before the benchmark is built.
    let models = methods
        .iter()
        .map(|&m| load_model(m, &a))
        .collect::<Result<Vec<_>>>()?;

    ensure_dir(&a.out)?;
    write_echo(
        &a.out,
        "eval",
        &[
            ("weights", a.weights.display().to_string()),
            (
                "band",
                a.band
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("methods", a.methods.join(",")),
            ("n_fail", a.n_fail.to_string()),
            ("n_normal", a.n_normal.to_string()),
            ("seed", a.seed.to_string()),
            ("height", a.height.to_string()),
            ("width", a.width.to_string()),
            ("snapshots", a.snapshots.to_string()),
        ],
    )?;

    let ts = build_test_set(&TestSetConfig {
        n_fail: a.n_fail,
        n_normal: a.n_normal,
        seed: a.seed,
        height: a.height,
        width: a.width,
    })?;
    let labels = ts.frame_labels();

    let mut metrics = Vec::new();
    for model in &models {
        let m = model.method();
        let scored = score_test_set(&ts, model, if m == Method::Fare { band.as_ref() } else { None })?;
        let (points, auc) = roc_auc(&flat_scores(&scored), &labels)?;
        write_roc_csv(&a.out.join(format!("roc_{}.csv", m.name())), &points)?;
        if m.has_heatmap() {
            for k in 0..3 {
                write_bins_csv(
                    &a.out.join(format!("bins_{}_{k}.csv", m.name())),
                    &bin_rows(&ts, &scored, k),
                )?;
            }
            export_heatmaps(&a.out, m.name(), &scored, a.snapshots)?;
        }
        if m == Method::Fare && band.is_some() {
            for (kind, rate, n) in detection_by_kind(&ts, &scored, FAILURE_STEP) {
                metrics.push(MetricsRow {
                    method: m.name().into(),
                    failure_kind: kind.name().into(),
                    det_sr: Some(100.0 * rate),
                    han_sr: None,
                    mean_time_s: None,
                    n,
                });
            }
            metrics.push(MetricsRow {
                method: m.name().into(),
                failure_kind: "clean".into(),
                det_sr: Some(100.0 * clean_fp_rate(&ts, &scored)),
                han_sr: None,
                mean_time_s: None,
                n: a.n_normal,
            });
        }
        println!("{}: auc {auc:.4}", m.name());
    }
    write_metrics_csv(&a.out.join("metrics.csv"), &metrics)?;
    println!(
        "scored {} methods on {} trajectories; reports in {}",
        models.len(),
        ts.trajs.len(),
        a.out.display()
    );
    Ok(())
}

fn run_trials_cmd(a: TrialsArgs) -> Result<()> {
    require_file(&a.weights)?;
    require_file(&a.band)?;
    let w = PolicyWeights::load(&a.weights)?;
    let band = PredictionBand::load(&a.band)?;
    let cfg = TrialConfig {
        n_per_kind: a.n,
        seed: a.seed,
        blind: a.mode == "blind",
        trigger_step: FAILURE_STEP,
        budget: a.budget,
        height: w.net.height,
        width: w.net.width,
    };
    let results = run_trials(&w, &band, &cfg)?;

    ensure_dir(&a.out)?;
    write_echo(
        &a.out,
        "trials",
        &[
            ("weights", a.weights.display().to_string()),
            ("band", a.band.display().to_string()),
            ("mode", a.mode.clone()),
            ("n", a.n.to_string()),
            ("seed", a.seed.to_string()),
            ("budget", a.budget.to_string()),
        ],
    )?;
    let rows: Vec<MetricsRow> = summarize_trials(&results)
        .into_iter()
        .map(|(kind, det, han, time, n)| MetricsRow {
            method: a.mode.clone(),
            failure_kind: kind.name().into(),
            det_sr: Some(det),
            han_sr: Some(han),
            mean_time_s: time,
            n,
        })
        .collect();
    write_metrics_csv(&a.out.join("metrics.csv"), &rows)?;
    write_trials_csv(&a.out.join(format!("trials_{}.csv", a.mode)), &results)?;
    for r in &rows {
        println!(
            "{}: det {:.1}% han {:.1}% (n={})",
            r.failure_kind,
            r.det_sr.unwrap_or(0.0),
            r.han_sr.unwrap_or(0.0),
            r.n
        );
    }
    println!("trial reports in {}", a.out.display());
    Ok(())
}
