use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use facelight::exec::{init_threads, ExecPolicy};
use facelight::io::{read_pfm, write_png, write_pfm, write_validation_csv};
use facelight::metrics::compute_metrics;
use facelight::optim::{fit_scene, write_metrics_log, Trainer};
use facelight::render::{render_image, RenderOptions};
use facelight::scene::{export_scene, load_light, recovery_errors, FitJob, Scene, Split};
use facelight::validate::{run_suite, Suite, ValidateOptions};
use facelight::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "facelight", version, about = "Render, relight and fit SH-lit SDF scenes")]
struct Cli {
    /// Overrides the seed of the scene or fit config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reduce parallel results in a fixed order so runs repeat bitwise.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "FACELIGHT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render scene cameras to PNG and PFM.
    Render(RenderArgs),
    /// Swap the scene light and render.
    Relight {
        #[command(flatten)]
        render: RenderArgs,
        /// SH light JSON.
        #[arg(long)]
        light: PathBuf,
    },
    /// Fit a model to multi-view images.
    Fit(FitArgs),
    /// Run oracle comparisons and gates.
    Validate {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Validation CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and SSIM between two PFM images.
    Metrics {
        a: PathBuf,
        b: PathBuf,
        /// Fitted scene to compare against `--truth` for geometry error.
        #[arg(long, requires = "truth")]
        scene: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Report JSON; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Camera ids to render (repeatable); all cameras when absent.
    #[arg(long = "camera")]
    cameras: Vec<String>,
    /// Render only holdout cameras.
    #[arg(long)]
    holdout: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Check the config and print the parameter count.
    #[arg(long)]
    dry_run: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a checkpoint every N steps as well as at the end.
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Exit with status 1 when the holdout PSNR ends below this.
    #[arg(long)]
    min_psnr: Option<f64>,
}

/// A failed gate, as opposed to bad input.
#[derive(Debug)]
struct GateFailure(String);

impl std::fmt::Display for GateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for GateFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        init_threads(n);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let gate = e.downcast_ref::<GateFailure>().is_some()
                || matches!(e.downcast_ref::<Error>(), Some(Error::Diverged { .. }));
            ExitCode::from(if gate { 1 } else { 2 })
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let policy = ExecPolicy {
        parallel: true,
        deterministic: cli.deterministic,
    };
    match &cli.command {
        Command::Render(args) => render(args, None, policy),
        Command::Relight { render: args, light } => render(args, Some(light), policy),
        Command::Fit(args) => fit(cli, args),
        Command::Validate { suite, out } => validate(cli, suite, out.as_deref(), policy),
        Command::Metrics { a, b, scene, truth, out } => metrics(a, b, scene.as_deref(), truth.as_deref(), out.as_deref()),
    }
}

fn render(args: &RenderArgs, light: Option<&PathBuf>, policy: ExecPolicy) -> anyhow::Result<()> {
    let scene = Scene::load(&args.scene, true).with_context(|| format!("loading {}", args.scene.display()))?;
    let mut model = scene.build_model()?;
    if let Some(p) = light {
        model.set_light(load_light(p).with_context(|| format!("loading {}", p.display()))?);
    }
    let mut cams = if args.holdout {
        scene.split_cameras(Split::Holdout)?
    } else {
        scene.cameras()?
    };
    if !args.cameras.is_empty() {
        for id in &args.cameras {
            if !cams.iter().any(|c| &c.id == id) {
                bail!("no camera `{id}` in the selected split");
            }
        }
        cams.retain(|c| args.cameras.contains(&c.id));
    }
    if cams.is_empty() {
        bail!("no cameras to render");
    }
    fs::create_dir_all(&args.out)?;
    let opts = RenderOptions {
        policy,
        ..Default::default()
    };
    for c in &cams {
        let t = Instant::now();
        let r = render_image(&model, &c.camera, &opts)?;
        let wall = t.elapsed();
        write_pfm(&args.out.join(format!("{}.pfm", c.id)), &r.image)?;
        write_png(&args.out.join(format!("{}.png", c.id)), &r.image)?;
        let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
        println!(
            "{} {}x{} trace {:.1} ms shade {:.1} ms integrate {:.1} ms wall {:.1} ms hits {}",
            c.id,
            c.camera.width,
            c.camera.height,
            ms(r.stats.timings.trace),
            ms(r.stats.timings.shade),
            ms(r.stats.timings.integrate),
            ms(wall),
            r.stats.hits
        );
        if !r.stats.capped_pixels.is_empty() {
            eprintln!("warning: {} pixels hit the trace iteration cap", r.stats.capped_pixels.len());
        }
    }
    Ok(())
}

fn fit(cli: &Cli, args: &FitArgs) -> anyhow::Result<()> {
    let (mut job, base) = FitJob::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(s) = cli.seed {
        job.fit.seed = s;
    }
    if cli.deterministic {
        job.fit.deterministic = true;
    }
    let prepared = if args.dry_run {
        job.prepare_layout(&base)?
    } else {
        let t = Instant::now();
        let p = job.prepare(&base, job.fit.policy())?;
        eprintln!("loaded {} train and {} holdout views in {:.1} s", p.train.len(), p.holdout.len(), t.elapsed().as_secs_f64());
        p
    };
    let model = prepared.scene.build_model()?;
    let mut trainer = Trainer::new(model, prepared.config, prepared.train, prepared.holdout)?;
    if args.dry_run {
        println!("config ok");
        println!("parameters: {}", trainer.param_count());
        println!("train views: {}", trainer.train.len());
        println!("holdout views: {}", trainer.holdout.len());
        return Ok(());
    }
    if let Some(ck) = &args.resume {
        trainer.load_checkpoint(ck).with_context(|| format!("loading {}", ck.display()))?;
        eprintln!("resumed at step {}", trainer.step);
    }
    fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join("checkpoint.blob");
    let every = args.checkpoint_every;
    let out = args.out.clone();
    let t = Instant::now();
    let result = fit_scene(&mut trainer, |tr, row| {
        if every > 0 && row.step % every == 0 {
            tr.save_checkpoint(&out.join(format!("checkpoint_{:06}.blob", row.step)))?;
        }
        if row.step % 50 == 0 || row.psnr_holdout.is_some() {
            let psnr = row.psnr_holdout.map(|p| format!(" psnr {p:.2}")).unwrap_or_default();
            eprintln!("step {} loss {:.4e}{psnr} ({:.0} s)", row.step, row.loss.total, t.elapsed().as_secs_f64());
        }
        Ok(())
    });
    trainer.save_checkpoint(&ckpt)?;
    write_metrics_log(fs::File::create(args.out.join("metrics.csv"))?, &trainer.log)?;
    let result = result?;
    export_scene(&prepared.scene, &trainer.model, &args.out, "fitted")?;
    let mut report = json!({
        "steps": trainer.step,
        "parameters": trainer.param_count(),
        "seconds": t.elapsed().as_secs_f64(),
        "psnr": finite_or_null(result.report.psnr),
        "ssim": finite_or_null(result.report.ssim),
        "beta": trainer.model.beta(),
    });
    if let Some(truth) = &prepared.truth {
        let e = recovery_errors(&trainer.model, truth)?;
        report["geom_err"] = json!(e.geometry.mean_abs_sdf);
        report["geom_hits"] = json!(e.geometry.hits);
        report["albedo_err"] = json!(e.albedo.aligned);
        report["albedo_err_raw"] = json!(e.albedo.raw);
    }
    fs::write(args.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(min) = args.min_psnr {
        if result.report.psnr.is_nan() || result.report.psnr < min {
            return Err(GateFailure(format!("holdout PSNR {:.2} dB is below {min} dB", result.report.psnr)).into());
        }
    }
    Ok(())
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn validate(cli: &Cli, suite: &str, out: Option<&Path>, policy: ExecPolicy) -> anyhow::Result<()> {
    let suite: Suite = suite.parse().map_err(|e: Error| anyhow!(e))?;
    let opts = ValidateOptions {
        seed: cli.seed.unwrap_or_default(),
        policy,
    };
    let t = Instant::now();
    let report = run_suite(suite, &opts)?;
    if let Some(p) = out {
        write_validation_csv(fs::File::create(p)?, &report.rows)?;
    }
    for g in &report.gates {
        println!("{} {} {}", if g.passed { "PASS" } else { "FAIL" }, g.name, g.detail);
    }
    println!("{} gates in {:.1} s", report.gates.len(), t.elapsed().as_secs_f64());
    if !report.passed() {
        let failing: Vec<&str> = report.failing().map(|g| g.name.as_str()).collect();
        return Err(GateFailure(format!("failing gates: {}", failing.join(", "))).into());
    }
    Ok(())
}

fn metrics(a: &Path, b: &Path, scene: Option<&Path>, truth: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let ia = read_pfm(a).with_context(|| format!("reading {}", a.display()))?;
    let ib = read_pfm(b).with_context(|| format!("reading {}", b.display()))?;
    let mut report = compute_metrics(&ia, &ib)?;
    if let (Some(s), Some(t)) = (scene, truth) {
        let model = Scene::load(s, true)?.build_model()?;
        let truth = Scene::load(t, true)?;
        report.geom_err = Some(recovery_errors(&model, &truth)?.geometry.mean_abs_sdf);
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
