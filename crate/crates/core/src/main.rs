use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use bevrep::data::{self, CollectConfig, Dataset, DatasetKind};
use bevrep::error::Error;
use bevrep::harness::{self, ExperimentConfig, ExperimentData, Precision, Runner, TrainConfig};
use bevrep::models::{EncoderDecoder, HeadKind};
use bevrep::raster::png_io::{write_png, PngKind};
use bevrep::raster::scenes::all_scenes;
use bevrep::sim::{build_town, init_world, svg::graph_svg};
use bevrep_autodiff::{gradcheck, Checkpoint, Real};
use clap::{Parser, Subcommand, ValueEnum};

/// Bird's-eye-view representation learning: simulation, datasets, training and experiments.
#[derive(Debug, Parser)]
#[command(name = "bevrep", version)]
struct Cli {
    /// JSON experiment configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command (dataset seed for collect, training seed otherwise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write zero wall-clock columns so metrics files are byte-reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Concurrent training cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Ae,
    Policy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the town of the configuration and write its lane graph as JSON and SVG.
    GenTown,
    /// Simulate episodes and write a dataset.
    Collect {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        frames: usize,
        /// Output file, default `<out-dir>/<kind>.bvds`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Subsample a raw policy dataset so no steering bin dominates.
    Balance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 21)]
        bins: usize,
        #[arg(long, default_value_t = 2.0)]
        cap_factor: f64,
    },
    /// Train an encoder-decoder.
    TrainAe {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated heads, e.g. `recon,pred,plan`.
        #[arg(long, default_value = "recon", value_delimiter = ',')]
        heads: Vec<HeadKind>,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Train a policy on latents of a frozen encoder.
    TrainPolicy {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long, default_value = "recon", value_delimiter = ',')]
        heads: Vec<HeadKind>,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Compare head sets: one encoder per set, several policies per encoder.
    Ablation(ExperimentArgs),
    /// Compare head sets across fractions of the encoder-decoder training data.
    Sweep(ExperimentArgs),
    /// Write CSV tables and SVG plots of a saved bundle.
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Finite-difference check of every differentiable op.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Render the canonical scenes, or one record of a dataset, to PNG.
    RenderPreview {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
}

#[derive(Debug, clap::Args)]
struct ExperimentArgs {
    /// Encoder-decoder dataset; collected into the output directory when absent.
    #[arg(long)]
    ae: Option<PathBuf>,
    /// Balanced policy dataset; collected into the output directory when absent.
    #[arg(long)]
    policy: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.ae.seed = s;
        cfg.policy.seed = s;
    }
    if cli.deterministic {
        cfg.ae.deterministic = true;
        cfg.policy.deterministic = true;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = match e.downcast_ref::<Error>() {
                Some(err) => err.exit_code(),
                None if e.downcast_ref::<data::DataError>().is_some() => 4,
                None => 1,
            };
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out_dir;
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::GenTown => {
            let seed = cli.seed.unwrap_or(cfg.ae_seed);
            let g = build_town(&cfg.collect.sim.town, seed)?;
            let (_, w) = init_world(&cfg.collect.sim, seed)?;
            std::fs::write(out.join("town.json"), g.to_json())?;
            std::fs::write(out.join("town.svg"), graph_svg(&g, Some(&w)))?;
            println!("{} lanes, {} intersections -> {}", g.lanes.len(), g.intersections.len(), out.display());
        }
        Command::Collect { kind, frames, output } => {
            let (k, default_seed, name) = match kind {
                Kind::Ae => (DatasetKind::Ae, cfg.ae_seed, "ae.bvds"),
                Kind::Policy => (DatasetKind::Policy, cfg.policy_seed, "policy_raw.bvds"),
            };
            let path = output.clone().unwrap_or_else(|| out.join(name));
            let m = data::collect(&cfg.collect, &cfg.bev, *frames, cli.seed.unwrap_or(default_seed), k, &path)?;
            println!("{} records -> {}", m.record_count, path.display());
        }
        Command::Balance { input, output, bins, cap_factor } => {
            let mut raw = Dataset::open(input)?;
            let seed = cli.seed.unwrap_or(cfg.policy_seed);
            let m = data::balance_policy_dataset(&mut raw, output, *bins, *cap_factor, seed)?;
            println!("kept {} of {} records -> {}", m.record_count, raw.len(), output.display());
        }
        Command::TrainAe { dataset, heads, fraction } => {
            let mut tc = TrainConfig { heads: heads.clone(), fraction: *fraction, ..cfg.ae.clone() };
            tc.dataset = Some(dataset.clone());
            match tc.precision {
                Precision::F32 => train_ae_cmd::<f32>(&cfg, &tc, out)?,
                Precision::F64 => train_ae_cmd::<f64>(&cfg, &tc, out)?,
            }
        }
        Command::TrainPolicy { encoder, heads, dataset } => match cfg.policy.precision {
            Precision::F32 => train_policy_cmd::<f32>(&cfg, encoder, heads, dataset, out)?,
            Precision::F64 => train_policy_cmd::<f64>(&cfg, encoder, heads, dataset, out)?,
        },
        Command::Ablation(args) | Command::Sweep(args) => {
            let sweep = matches!(cli.command, Command::Sweep(_));
            let (ae, policy) = match (&args.ae, &args.policy) {
                (Some(a), Some(p)) => (a.clone(), p.clone()),
                (None, None) => harness::prepare_datasets(&cfg, &out.join("data"))?,
                _ => bail!("give both --ae and --policy, or neither"),
            };
            let data = ExperimentData::load(&ae, &policy, &cfg)?;
            let bundle = match cfg.ae.precision {
                Precision::F32 => experiment::<f32>(&cfg, &data, out, sweep)?,
                Precision::F64 => experiment::<f64>(&cfg, &data, out, sweep)?,
            };
            let path = out.join(format!("{}_bundle.json", bundle.experiment));
            std::fs::write(&path, bundle.to_json())?;
            for f in harness::write_report(&bundle, out)? {
                println!("{}", f.display());
            }
            for f in &bundle.failures {
                eprintln!("warning: {f}");
            }
        }
        Command::Report { bundle } => {
            let text = std::fs::read_to_string(bundle).with_context(|| format!("reading {}", bundle.display()))?;
            let b = harness::Bundle::from_json(&text)?;
            for f in harness::write_report(&b, out)? {
                println!("{}", f.display());
            }
        }
        Command::GradCheck { instances, step, tolerance } => {
            let start = std::time::Instant::now();
            let reports = gradcheck::check_all(*instances, cli.seed.unwrap_or(0), *step);
            let mut failed = 0;
            for r in &reports {
                let ok = r.max_rel_err < *tolerance;
                failed += usize::from(!ok);
                println!("{:<18} {:>3} instances  max rel err {:.3e}  {}", r.op, r.instances, r.max_rel_err, if ok { "ok" } else { "FAIL" });
            }
            println!("{} ops in {:.1} s", reports.len(), start.elapsed().as_secs_f64());
            if failed > 0 {
                return Err(Error::Divergence { epoch: 0, what: format!("{failed} ops failed the gradient check") }.into());
            }
        }
        Command::RenderPreview { dataset, index } => match dataset {
            Some(p) => {
                let mut ds = Dataset::open(p)?;
                for f in data::export_png(&mut ds, *index, out, &format!("record{index}"))? {
                    println!("{}", f.display());
                }
            }
            None => {
                for s in all_scenes() {
                    let img = s.render(&cfg.bev)?;
                    let path = out.join(format!("{}.png", s.name));
                    write_png(&path, &img.data, img.size, img.size, PngKind::Rgb)?;
                    println!("{}", path.display());
                }
            }
        },
    }
    Ok(())
}

fn experiment<T: Real>(cfg: &ExperimentConfig, data: &ExperimentData, out: &Path, sweep: bool) -> anyhow::Result<harness::Bundle> {
    let mut runner = Runner::<T>::new(cfg, data, Some(out.to_path_buf()));
    Ok(if sweep { runner.run_datasize_sweep()? } else { runner.run_head_ablation()? })
}

fn train_ae_cmd<T: Real>(cfg: &ExperimentConfig, tc: &TrainConfig, out: &Path) -> anyhow::Result<()> {
    let path = tc.dataset.as_ref().expect("dataset set by caller");
    let sim = CollectConfig::sim_hash(&cfg.collect);
    let mut ds = Dataset::open_compatible(path, &cfg.bev, Some(&sim))?;
    let split = ds.manifest().split.clone().context("dataset has no stored split")?;
    let train_idx = data::nested_subset(&split.train, tc.fraction, tc.seed)?;
    let train = data::AeArrays::load(&mut ds, &train_idx)?;
    let test = data::AeArrays::load(&mut ds, &split.test)?;
    let run = harness::train_ae::<T>(tc, &train, &test, |log| {
        let r = log.rows.last().expect("row per epoch");
        eprintln!("epoch {:>3}  train {:.5}  test recon {:.5}", r.epoch, r.train_loss, r.test_recon.unwrap_or(f64::NAN));
        true
    })?;
    let stem = format!("ae_{}", harness::heads_label(&tc.heads).replace('+', "-"));
    Checkpoint::from_store(&run.model.store, None).save(out.join(format!("{stem}.bvck")))?;
    run.best.save(out.join(format!("{stem}_best.bvck")))?;
    std::fs::write(out.join(format!("{stem}_metrics.csv")), run.log.to_csv())?;
    std::fs::write(out.join(format!("{stem}_config.json")), serde_json::to_string_pretty(tc)?)?;
    println!("best test loss at epoch {} -> {}", run.best_epoch, out.display());
    Ok(())
}

fn train_policy_cmd<T: Real>(
    cfg: &ExperimentConfig,
    encoder: &Path,
    heads: &[HeadKind],
    dataset: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let mut enc = EncoderDecoder::<T>::new(heads, 0)?;
    Checkpoint::load(encoder)?.load_into(&mut enc.store).map_err(Error::from)?;
    let sim = CollectConfig::sim_hash(&cfg.collect);
    let mut ds = Dataset::open_compatible(dataset, &cfg.bev, Some(&sim))?;
    let split = ds.manifest().split.clone().context("dataset has no stored split")?;
    let all: Vec<u32> = (0..ds.len() as u32).collect();
    let arrays = data::PolicyArrays::load(&mut ds, &all)?;
    let rows = |v: &[u32]| v.iter().map(|&i| i as usize).collect::<Vec<_>>();
    let (stats, train, test) =
        harness::policy_inputs(&mut enc, &arrays, &rows(&split.train), &rows(&split.test), cfg.ae.micro_batch.max(64))?;
    let run = harness::train_policy::<T>(&cfg.policy, &train, &test)?;
    Checkpoint::from_store(&run.net.store, None).save(out.join("policy.bvck"))?;
    std::fs::write(out.join("policy_latent_stats.json"), serde_json::to_string_pretty(&stats)?)?;
    std::fs::write(out.join("policy_metrics.csv"), run.log.to_csv())?;
    let last = run.log.rows.last().expect("at least one epoch");
    println!(
        "final test steer smooth-L1 {:.5}, acceleration accuracy {:.4}",
        last.test_steer.unwrap_or(f64::NAN),
        last.test_acc.unwrap_or(f64::NAN)
    );
    Ok(())
}
