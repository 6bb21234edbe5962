use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use metaball::bench::{bench, BenchSpec};
use metaball::config::split_assignment;
use metaball::dataset::{canonical_rescale, load_dataset, Dataset};
use metaball::diffcheck::gradient_sweep;
use metaball::export::{export_oriented_points, write_oriented_ply, ColorSource, ExportConfig, NormalMethod};
use metaball::fit::{dataset_loss, fit_from, init_mixture, look_at_centroid, FitConfig, LogEntry};
use metaball::formats::png;
use metaball::formats::{read_mixture, write_flo, write_mixture, write_pfm};
use metaball::gmm::Mixture;
use metaball::interop::{convert_splats, load_splat_ply, ConvertOptions, WeightMode};
use metaball::metrics::mixture_depth_error;
use metaball::render::{render_flow, render_maps};
use metaball::synth::{read_gt_depth, synth_scene, write_synth, SceneKind, SynthSpec};

#[derive(Parser)]
#[command(
    name = "metaball",
    version,
    about = "Fit, render and export 3D Gaussian mixture shapes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a mixture to a posed dataset.
    Fit(FitArgs),
    /// Render depth, alpha, normal and color maps for every dataset view.
    Render(RenderArgs),
    /// Render forward and backward optical flow for every dataset view.
    Flow(RenderArgs),
    /// Export an oriented, colored point cloud as PLY.
    ExportPoints(ExportArgs),
    /// Convert a 3D Gaussian Splatting PLY into a mixture file.
    #[command(name = "convert-3dgs")]
    Convert3dgs(ConvertArgs),
    /// Compare analytic gradients against central differences on random scenes.
    Gradcheck(GradcheckArgs),
    /// Time forward and backward passes per ray.
    Bench(BenchArgs),
    /// Generate a synthetic dataset with ground-truth depth and flow.
    Synth(SynthArgs),
    /// Masked mean absolute depth error against ground-truth depth maps.
    DepthError(DepthErrorArgs),
}

#[derive(Args)]
struct Settings {
    /// TOML file of `key = value` settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set lambda_f=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Settings {
    fn resolve(&self) -> Result<FitConfig> {
        let mut cfg = FitConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
            for (k, v) in &table {
                let value = match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                cfg.set(k, &value).with_context(|| format!("in {}", path.display()))?;
            }
        }
        for o in &self.overrides {
            let (k, v) = split_assignment(o)?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Dataset directory.
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
    /// Start from this mixture instead of the random initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Write `checkpoint.fmb` every this many steps (0 disables).
    #[arg(long, default_value_t = 500)]
    checkpoint_every: usize,
}

#[derive(Args)]
struct RenderArgs {
    data: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalArg {
    ScreenSpace,
    Blended,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorArg {
    Mixture,
    Images,
}

#[derive(Args)]
struct ExportArgs {
    data: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    /// Output PLY path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = NormalArg::ScreenSpace)]
    normals: NormalArg,
    #[arg(long, value_enum, default_value_t = ColorArg::Mixture)]
    colors: ColorArg,
    /// Keep points whose largest normalized blend weight exceeds this.
    #[arg(long, default_value_t = 0.9)]
    quality_eps: f64,
    #[arg(long, default_value_t = 1)]
    view_stride: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightModeArg {
    Fixed,
    AlphaLog,
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    opacity_cutoff: f64,
    #[arg(long, value_enum, default_value_t = WeightModeArg::Fixed)]
    weight_mode: WeightModeArg,
    /// Stored log-weight in `fixed` mode (default ln 80).
    #[arg(long)]
    log_weight: Option<f64>,
    /// Scale `C` in `alpha-log` mode.
    #[arg(long, default_value_t = 1.0)]
    alpha_log_c: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    scenes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 40)]
    components: usize,
    #[arg(long, default_value_t = 1_000_000)]
    rays: usize,
    #[arg(long, default_value_t = 50_000)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// blobs, bowl or sphere.
    #[arg(long, default_value = "blobs")]
    kind: String,
    #[arg(long, default_value_t = 5)]
    components: usize,
    #[arg(long, default_value_t = 24)]
    views: usize,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DepthErrorArgs {
    data: PathBuf,
    #[arg(long)]
    mixture: PathBuf,
    /// Directory holding `gt_depth/`; defaults to the dataset directory.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

fn load_canonical(root: &Path) -> Result<(Dataset, f64)> {
    let ds = load_dataset(root).with_context(|| format!("loading dataset {}", root.display()))?;
    let (ds, scale) = canonical_rescale(&ds)?;
    info!("loaded {} frames, canonical scale {scale:e}", ds.frames.len());
    Ok((ds, scale))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Writes through a temporary file so readers never see a partial mixture.
fn write_mixture_atomic(path: &Path, mix: &Mixture) -> Result<()> {
    let tmp = path.with_extension("fmb.tmp");
    write_mixture(&tmp, mix)?;
    fs::rename(&tmp, path).with_context(|| format!("moving {} into place", path.display()))
}

fn run_fit(args: &FitArgs) -> Result<ExitCode> {
    let cfg = args.settings.resolve()?;
    let (ds, _) = load_canonical(&args.data)?;
    create_dir(&args.out)?;
    fs::write(args.out.join("config.toml"), cfg.to_toml())?;
    let init = match &args.init {
        Some(p) => read_mixture(p)?,
        None => init_mixture(cfg.components, cfg.seed, look_at_centroid(&ds.cameras)),
    };

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing signal handler")?;
    }

    let log_path = args.out.join("log.csv");
    let mut log =
        BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    writeln!(log, "{}", LogEntry::CSV_HEADER)?;
    let checkpoint = args.out.join("checkpoint.fmb");
    let mut io_error = None;
    let result = fit_from(&ds, init, &cfg, &mut |mix, entry| {
        let mut write = || -> Result<()> {
            writeln!(log, "{}", entry.csv())?;
            if args.checkpoint_every > 0 && entry.step % args.checkpoint_every == 0 {
                log.flush()?;
                write_mixture_atomic(&checkpoint, mix)?;
                info!("step {} checkpoint", entry.step);
            }
            Ok(())
        };
        if let Err(e) = write() {
            io_error = Some(e);
            return false;
        }
        !stop.load(Ordering::SeqCst)
    })?;
    log.flush()?;
    if let Some(e) = io_error {
        return Err(e);
    }

    let out = args.out.join("mixture.fmb");
    write_mixture_atomic(&out, &result.mixture)?;
    if result.interrupted {
        eprintln!(
            "interrupted at step {}; partial mixture written to {}",
            result.steps,
            out.display()
        );
        return Ok(ExitCode::from(130));
    }
    let final_loss = dataset_loss(&result.mixture, &ds, &cfg.render, &cfg.weights)?.total();
    fs::write(args.out.join("final_loss.txt"), format!("{final_loss:.17e}\n"))?;
    println!("steps={}", result.steps);
    println!("converged={}", result.converged);
    println!("components={}", result.mixture.len());
    println!("final_loss={final_loss:.17e}");
    Ok(ExitCode::SUCCESS)
}

fn run_render(args: &RenderArgs) -> Result<ExitCode> {
    let cfg = args.settings.resolve()?;
    let (ds, _) = load_canonical(&args.data)?;
    let mix = read_mixture(&args.mixture)?;
    create_dir(&args.out)?;
    for (frame, cam) in ds.frames.iter().zip(&ds.cameras) {
        let maps = render_maps(cam, &mix, &cfg.render);
        let (w, h) = (cam.width, cam.height);
        let name = &frame.name;
        let depth32: Vec<f32> = maps.depth.iter().map(|&d| d as f32).collect();
        let alpha32: Vec<f32> = maps.alpha.iter().map(|&a| a as f32).collect();
        write_pfm(args.out.join(format!("depth_{name}.pfm")), w, h, &depth32)?;
        write_pfm(args.out.join(format!("alpha_{name}.pfm")), w, h, &alpha32)?;
        png::write_depth16(args.out.join(format!("depth_{name}.png")), w, h, &maps.depth)?;
        png::write_alpha16(args.out.join(format!("alpha_{name}.png")), w, h, &maps.alpha)?;
        png::write_normals8(args.out.join(format!("normal_{name}.png")), w, h, &maps.normal)?;
        let color: Vec<[u8; 3]> = maps
            .color
            .iter()
            .map(|c| c.map(metaball::dataset::linear_to_srgb8).into())
            .collect();
        png::write_rgb8(args.out.join(format!("color_{name}.png")), w, h, &color)?;
    }
    let loss = dataset_loss(&mix, &ds, &cfg.render, &cfg.weights)?.total();
    println!("frames={}", ds.frames.len());
    println!("loss={loss:.17e}");
    Ok(ExitCode::SUCCESS)
}

fn run_flow(args: &RenderArgs) -> Result<ExitCode> {
    let cfg = args.settings.resolve()?;
    let (ds, _) = load_canonical(&args.data)?;
    let mix = read_mixture(&args.mixture)?;
    if ds.frames.len() < 2 {
        bail!("flow needs at least two frames");
    }
    let (fwd, bwd) = (args.out.join("flow_fwd"), args.out.join("flow_bwd"));
    create_dir(&fwd)?;
    create_dir(&bwd)?;
    let n = ds.frames.len();
    for i in 0..n {
        let prev = (i > 0).then(|| &ds.cameras[i - 1]);
        let next = ds.cameras.get(i + 1);
        let maps = render_flow(&ds.cameras[i], prev, next, &mix, &cfg.render)?;
        let name = &ds.frames[i].name;
        if let Some(f) = maps.forward {
            write_flo(fwd.join(format!("{name}.flo")), &f)?;
        }
        if let Some(f) = maps.backward {
            write_flo(bwd.join(format!("{name}.flo")), &f)?;
        }
    }
    println!("frames={n}");
    Ok(ExitCode::SUCCESS)
}

fn run_export(args: &ExportArgs) -> Result<ExitCode> {
    let (ds, scale) = load_canonical(&args.data)?;
    let mix = read_mixture(&args.mixture)?;
    let cfg = ExportConfig {
        quality_eps: args.quality_eps,
        normal: match args.normals {
            NormalArg::ScreenSpace => NormalMethod::ScreenSpace,
            NormalArg::Blended => NormalMethod::Blended,
        },
        color: match args.colors {
            ColorArg::Mixture => ColorSource::Mixture,
            ColorArg::Images => ColorSource::Images,
        },
        view_stride: args.view_stride,
        unscale: scale,
        ..Default::default()
    };
    let points = export_oriented_points(&mix, &ds.cameras, &cfg, Some(&ds))?;
    write_oriented_ply(&points, &args.out)?;
    println!("points={}", points.len());
    Ok(ExitCode::SUCCESS)
}

fn run_convert(args: &ConvertArgs) -> Result<ExitCode> {
    let records = load_splat_ply(&args.input)?;
    let opts = ConvertOptions {
        opacity_cutoff: args.opacity_cutoff,
        weight: match args.weight_mode {
            WeightModeArg::Fixed => WeightMode::Fixed(args.log_weight.unwrap_or(80f64.ln())),
            WeightModeArg::AlphaLog => WeightMode::AlphaLog { c: args.alpha_log_c },
        },
    };
    let (mix, report) = convert_splats(&records, &opts)?;
    write_mixture(&args.output, &mix)?;
    println!("total={}", report.total);
    println!("kept={}", report.kept);
    println!("below_cutoff={}", report.below_cutoff);
    println!("non_finite={}", report.non_finite);
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let s = gradient_sweep(&mut rng, args.scenes, &Default::default())?;
    println!("scenes={}", s.scenes);
    println!("entries={}", s.entries);
    println!("p99_rel_error={:e}", s.p99);
    println!("max_rel_error={:e}", s.max);
    if let Some(w) = &s.worst {
        println!(
            "worst={} analytic={:e} numeric={:e}",
            w.parameter, w.analytic, w.numeric
        );
    }
    Ok(if s.p99 < 1e-4 && s.max < 1e-3 {
        ExitCode::SUCCESS
    } else {
        eprintln!("gradient check failed");
        ExitCode::FAILURE
    })
}

fn run_bench(args: &BenchArgs) -> Result<ExitCode> {
    let r = bench(&BenchSpec {
        components: args.components,
        rays: args.rays,
        batch_size: args.batch_size,
        seed: args.seed,
    })?;
    println!("components={}", r.components);
    println!("rays={}", r.rays);
    println!("weighted2_ns_per_ray={:.1}", r.weighted_ns);
    println!("composited_ns_per_ray={:.1}", r.composited_ns);
    println!("ratio={:.3}", r.ratio());
    Ok(ExitCode::SUCCESS)
}

fn run_synth(args: &SynthArgs) -> Result<ExitCode> {
    let kind: SceneKind = args.kind.parse()?;
    let spec = SynthSpec {
        kind,
        components: args.components,
        views: args.views,
        width: args.width,
        height: args.height,
        seed: args.seed,
        ..Default::default()
    };
    let scene = synth_scene(&spec)?;
    write_synth(&scene, &args.out)?;
    println!("frames={}", scene.dataset.frames.len());
    println!("components={}", scene.mixture.len());
    Ok(ExitCode::SUCCESS)
}

fn run_depth_error(args: &DepthErrorArgs) -> Result<ExitCode> {
    let cfg = args.settings.resolve()?;
    let raw = load_dataset(&args.data)?;
    let gt = read_gt_depth(args.gt.as_ref().unwrap_or(&args.data), &raw)?;
    let (ds, scale) = canonical_rescale(&raw)?;
    let gt: Vec<Vec<f64>> = gt
        .into_iter()
        .map(|d| d.into_iter().map(|x| x * scale).collect())
        .collect();
    let mix = read_mixture(&args.mixture)?;
    let err = mixture_depth_error(&mix, &cfg.render, &ds, &gt)?;
    println!("depth_error={err:e}");
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Render(a) => run_render(a),
        Command::Flow(a) => run_flow(a),
        Command::ExportPoints(a) => run_export(a),
        Command::Convert3dgs(a) => run_convert(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Bench(a) => run_bench(a),
        Command::Synth(a) => run_synth(a),
        Command::DepthError(a) => run_depth_error(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
