use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use litevio::checkpoint::Checkpoint;
use litevio::corruption::{NoiseId, NoiseSchedule};
use litevio::harness::protocols::run_scheduled;
use litevio::harness::{
    attach_proxies, emit_artifacts, finetune_baseline, run_continual, run_eval, run_single_shift, run_stationary, train_model,
    DataConfig, Deployed, ExperimentConfig, MetricsReport,
};
use litevio::sensorsim::{load_dataset, save_dataset, SensorStream};
use litevio::vionet::{NetworkConfig, Profile};
use litevio::{Error, Exec, Result};

#[derive(Parser)]
#[command(name = "litevio", version, about = "Lightweight VIO with online test-time adaptation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// experiment config (TOML); defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// run a single protocol seed instead of the configured list
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// output root
    #[arg(long, global = true, env = "LITEVIO_OUT")]
    out: Option<PathBuf>,
    /// checkpoint path (default: <out>/model/checkpoint.json)
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// run everything on the calling thread
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnlineProtocol {
    Continual,
    SingleShift,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic train, calibration and test sequences on disk
    GenData,
    /// Train both stages and initialize the proxy bank
    Train {
        /// dataset root written by gen-data (default: generate in memory)
        #[arg(long)]
        data: Option<PathBuf>,
        /// leave the proxy bank for init-proxies
        #[arg(long)]
        no_proxies: bool,
    },
    /// (Re)build the proxy bank and BN dictionary of a checkpoint
    InitProxies,
    /// Online adaptation against the frozen baseline
    AdaptOnline {
        #[arg(long, value_enum, default_value = "continual")]
        protocol: OnlineProtocol,
        /// TTA learning rate override
        #[arg(long)]
        eta: Option<f64>,
        /// explicit schedule, e.g. "frames=360;blur:0-120:4;snow:120-240:4"
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Repeated-pass adaptation on streams corrupted throughout
    AdaptStationary {
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Fine-tune every weight on corrupted training data, one model per noise
    FinetuneBaseline {
        /// noises to fine-tune for (default: the stationary list)
        #[arg(long, value_delimiter = ',')]
        noise: Vec<NoiseId>,
    },
    /// Score KITTI-format pose files
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        frame_period: f64,
    },
    /// Verify a report, print its tables and write summary.json
    Report {
        /// directory holding report.json (default: <out>/continual)
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    checkpoint: PathBuf,
    exec: Exec,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = g.profile {
        cfg.profile = match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        };
        cfg.network = None;
        let net = NetworkConfig::for_profile(cfg.profile);
        if let DataConfig::Synthetic(s) = &mut cfg.data {
            s.scene.height = net.height;
            s.scene.width = net.width;
            s.scene.imu_samples = net.imu_samples;
        }
    }
    if let Some(s) = g.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn mkdir(d: &Path) -> Result<()> {
    fs::create_dir_all(d).map_err(|e| Error::Io { path: d.to_path_buf(), source: e })
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    if let Some(d) = path.parent() {
        mkdir(d)?;
    }
    let text = serde_json::to_string_pretty(v)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn finish(ctx: &Ctx, report: &MetricsReport, name: &str) -> Result<()> {
    let dir = ctx.out.join(name);
    emit_artifacts(report, &dir)?;
    print!("{}", report.tables());
    println!("wrote {}", dir.display());
    Ok(())
}

fn train_streams_from(dir: &Path) -> Result<(Vec<SensorStream>, Option<SensorStream>)> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("train_")))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no train_* datasets", dir.display())));
    }
    let streams = dirs.iter().map(|d| load_dataset(d).map(|(s, _)| s)).collect::<Result<Vec<_>>>()?;
    let calib = dir.join("calib");
    let calib = if calib.exists() { Some(load_dataset(&calib)?.0) } else { None };
    Ok((streams, calib))
}

fn deployed(ctx: &Ctx, eta: Option<f64>) -> Result<(Deployed, ExperimentConfig)> {
    let mut model = Deployed::load(&ctx.checkpoint)?;
    model.net.set_exec(ctx.exec);
    let mut cfg = ctx.cfg.clone();
    if let Some(e) = eta {
        cfg.adapt.eta = e;
    }
    cfg.adapt.validate()?;
    Ok((model, cfg))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let out = cfg.resolve_out(cli.global.out.as_deref());
    let ctx = Ctx {
        checkpoint: cli.global.checkpoint.clone().unwrap_or_else(|| out.join("model").join("checkpoint.json")),
        out,
        exec: if cli.global.sequential { Exec::Sequential } else { Exec::default() },
        cfg,
    };
    let net_cfg = ctx.cfg.network_config()?;
    match cli.cmd {
        Cmd::GenData => {
            let DataConfig::Synthetic(_) = &ctx.cfg.data else {
                return Err(Error::InvalidArgument("gen-data only applies to synthetic data".into()));
            };
            let root = ctx.out.join("data");
            for (i, scene) in ctx.cfg.data.train_scenes().iter().enumerate() {
                let s = litevio::sensorsim::generate_stream_with(scene, ctx.exec)?;
                save_dataset(&s, Some(scene), &root.join(format!("train_{i:02}")))?;
            }
            let calib = ctx.cfg.data.calib_scene().expect("synthetic");
            save_dataset(&litevio::sensorsim::generate_stream_with(&calib, ctx.exec)?, Some(&calib), &root.join("calib"))?;
            for &seed in &ctx.cfg.seeds {
                let scene = ctx.cfg.data.test_scene(seed).expect("synthetic");
                save_dataset(&litevio::sensorsim::generate_stream_with(&scene, ctx.exec)?, Some(&scene), &root.join(format!("test_seed{seed}")))?;
            }
            println!("wrote {}", root.display());
        }
        Cmd::Train { data, no_proxies } => {
            let (streams, calib) = match &data {
                Some(d) => train_streams_from(d)?,
                None => (ctx.cfg.data.train_streams(&net_cfg, ctx.exec)?, None),
            };
            let mut outcome = train_model(&ctx.cfg, &streams, ctx.exec)?;
            let model_dir = ctx.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default();
            mkdir(&model_dir)?;
            outcome.stage1.write_loss_csv(&model_dir.join("loss_stage1.csv"))?;
            outcome.stage2.write_loss_csv(&model_dir.join("loss_stage2.csv"))?;
            let bank = if no_proxies {
                None
            } else {
                let calib = match calib {
                    Some(c) => c,
                    None => ctx.cfg.data.calib_stream(&net_cfg, ctx.exec)?,
                };
                Some(attach_proxies(&ctx.cfg, &mut outcome.net, &calib)?)
            };
            outcome.checkpoint(&ctx.cfg, bank.as_ref()).save(&ctx.checkpoint)?;
            let summary = serde_json::json!({
                "stage1": { "epochs_run": outcome.stage1.epochs_run, "best_epoch": outcome.stage1.best_epoch, "best_val": outcome.stage1.best_val },
                "stage2": { "epochs_run": outcome.stage2.epochs_run, "best_epoch": outcome.stage2.best_epoch, "best_val": outcome.stage2.best_val },
                "val_t_rmse": { "fused": outcome.fused_val_t_rmse, "inertial": outcome.inertial_val_t_rmse },
            });
            write_json(&model_dir.join("train_summary.json"), &summary)?;
            println!(
                "val t_rmse fused {:.5} inertial {:.5}; wrote {}",
                outcome.fused_val_t_rmse,
                outcome.inertial_val_t_rmse,
                ctx.checkpoint.display()
            );
        }
        Cmd::InitProxies => {
            if !ctx.checkpoint.exists() {
                return Err(Error::State(format!("no checkpoint at {}; run train first", ctx.checkpoint.display())));
            }
            let mut ck = Checkpoint::load(&ctx.checkpoint)?;
            let mut net = ck.to_network()?;
            net.set_exec(ctx.exec);
            let calib = ctx.cfg.data.calib_stream(&net_cfg, ctx.exec)?;
            let bank = attach_proxies(&ctx.cfg, &mut net, &calib)?;
            let mut fresh = Checkpoint::from_network(&net);
            fresh.train_stage1 = ck.train_stage1.take();
            fresh.train_stage2 = ck.train_stage2.take();
            fresh.data_seed = ck.data_seed;
            fresh.proxies = Some(bank);
            fresh.save(&ctx.checkpoint)?;
            println!("wrote {}", ctx.checkpoint.display());
        }
        Cmd::AdaptOnline { protocol, eta, schedule } => {
            let (model, cfg) = deployed(&ctx, eta)?;
            let report = match (schedule, protocol) {
                (Some(text), _) => {
                    let sched: NoiseSchedule = text.parse()?;
                    run_scheduled(&cfg, &model, &|frames| {
                        if sched.frames != frames {
                            return Err(Error::InvalidArgument(format!("schedule covers {} frames, stream has {frames}", sched.frames)));
                        }
                        Ok(sched.clone())
                    })?
                }
                (None, OnlineProtocol::Continual) => run_continual(&cfg, &model)?,
                (None, OnlineProtocol::SingleShift) => run_single_shift(&cfg, &model)?,
            };
            let name = match protocol {
                OnlineProtocol::Continual => "continual",
                OnlineProtocol::SingleShift => "single-shift",
            };
            finish(&ctx, &report, name)?;
        }
        Cmd::AdaptStationary { eta } => {
            let (model, cfg) = deployed(&ctx, eta)?;
            let mut finetuned = BTreeMap::new();
            for &n in cfg.protocol.stationary_list() {
                let p = ctx.out.join("finetune").join(format!("{n}.json"));
                if p.exists() {
                    finetuned.insert(n, Checkpoint::load(&p)?.to_network()?);
                }
            }
            finish(&ctx, &run_stationary(&cfg, &model, &finetuned)?, "stationary")?;
        }
        Cmd::FinetuneBaseline { noise } => {
            let model = Deployed::load(&ctx.checkpoint)?;
            let noises = if noise.is_empty() { ctx.cfg.protocol.stationary_list().to_vec() } else { noise };
            let dir = ctx.out.join("finetune");
            mkdir(&dir)?;
            for n in noises {
                if n == NoiseId::Clean {
                    return Err(Error::InvalidArgument("fine-tuning on clean data is plain training".into()));
                }
                let (net, rep) = finetune_baseline(&ctx.cfg, &model.net, n, ctx.exec)?;
                rep.write_loss_csv(&dir.join(format!("{n}_loss.csv")))?;
                Checkpoint::from_network(&net).save(&dir.join(format!("{n}.json")))?;
                println!("{n}: best val {:.6} after {} epochs", rep.best_val, rep.epochs_run);
            }
            println!("wrote {}", dir.display());
        }
        Cmd::Eval { pred, gt, frame_period } => {
            finish(&ctx, &run_eval(&pred, &gt, frame_period)?, "eval")?;
        }
        Cmd::Report { dir } => {
            let dir = dir.unwrap_or_else(|| ctx.out.join("continual"));
            let path = dir.join("report.json");
            let text = fs::read_to_string(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            let report = MetricsReport::from_json(&text)?;
            report.verify()?;
            print!("{}", report.tables());
            write_json(&dir.join("summary.json"), &report.summary())?;
            println!("report verified; wrote {}", dir.join("summary.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
