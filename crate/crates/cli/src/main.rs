use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use garment_refit::contact::FitLabel;
use garment_refit::hierarchy::{bench_conditioning, run_coarse_to_fine, run_multilayer, run_sequence};
use garment_refit::io::{self, SceneBundle};
use garment_refit::scene::{RefitConfig, Resolution};
use garment_refit::synth::{self, SynthSpec};
use garment_refit::verify;
use garment_refit::{RefitError, Result};

#[derive(Parser)]
#[command(name = "garment-refit", version, about = "Refit garments between rigged avatars in the same pose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refit the first garment of a scene.
    Refit(RefitArgs),
    /// Refit every garment layer of a scene, innermost first.
    RefitMultilayer(RefitArgs),
    /// Refit every frame of a sequence directory independently.
    RefitSequence(SequenceArgs),
    /// Write a synthetic scene (or sequence) directory.
    GenScene(GenArgs),
    /// Paired bone-local vs global-offset runs on the first garment.
    BenchConditioning(BenchArgs),
    /// Print the invariant table for a scene.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ResolutionArg {
    Single,
    CoarseToFine,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration JSON; overrides the scene's own configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_label)]
    fit_region: Option<FitLabel>,
    #[arg(long, value_enum)]
    resolution: Option<ResolutionArg>,
    /// Iterations of the single-resolution schedule.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    coarse_iterations: Option<usize>,
    #[arg(long)]
    fine_iterations: Option<usize>,
    /// Learning rate of the single-resolution and coarse stages.
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    fine_learning_rate: Option<f64>,
    /// Absolute penetration margin.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Write zero wall times so repeated runs are byte-identical.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct RefitArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Output directory (default: <scene>/out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SequenceArgs {
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Standard,
    Small,
    TwoLayer,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    preset: Preset,
    /// Full generator parameters as JSON; replaces the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Target torso radius scale.
    #[arg(long)]
    torso_scale: Option<f64>,
    /// Write a sequence with one frame per arm elevation (degrees).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    arm_raise: Option<Vec<f64>>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_label(s: &str) -> std::result::Result<FitLabel, String> {
    s.parse().map_err(|e: RefitError| e.to_string())
}

fn resolve_config(args: &ConfigArgs, scene_config: Option<&RefitConfig>) -> Result<RefitConfig> {
    let mut c = match &args.config {
        Some(path) => io::read_config(path)?,
        None => scene_config.cloned().unwrap_or_default(),
    };
    if let Some(l) = args.fit_region {
        c.fit_region = l;
    }
    if let Some(r) = args.resolution {
        c.resolution = match r {
            ResolutionArg::Single => Resolution::Single,
            ResolutionArg::CoarseToFine => Resolution::CoarseToFine,
        };
    }
    if let Some(n) = args.iterations {
        c.single.iterations = n;
    }
    if let Some(n) = args.coarse_iterations {
        c.coarse.iterations = n;
    }
    if let Some(n) = args.fine_iterations {
        c.fine.iterations = n;
    }
    if let Some(lr) = args.learning_rate {
        c.single.adam.learning_rate = lr;
        c.coarse.adam.learning_rate = lr;
    }
    if let Some(lr) = args.fine_learning_rate {
        c.fine.adam.learning_rate = lr;
    }
    if let Some(e) = args.epsilon {
        c.epsilon = Some(e);
    }
    if let Some(n) = args.log_every {
        for s in [&mut c.single, &mut c.coarse, &mut c.fine] {
            s.log_every = n;
        }
    }
    c.deterministic |= args.deterministic;
    c.validate()?;
    Ok(c)
}

fn out_dir(out: &Option<PathBuf>, base: &Path) -> PathBuf {
    out.clone().unwrap_or_else(|| base.join("out"))
}

fn summarize(bundle: &SceneBundle, report: &io::RunReport, out: &Path) {
    for g in &report.garments {
        println!(
            "{}: {} vertices, loss {:.6e}, penetrating pairs {}, min distance {:.6}",
            g.name, g.vertices, g.final_report.total, g.final_report.penetrating, g.final_report.min_distance
        );
    }
    println!("scene {} -> {}", bundle.dir.display(), out.display());
}

fn refit(args: &RefitArgs, all_layers: bool) -> Result<()> {
    let bundle = io::load_scene(&args.scene)?;
    let config = resolve_config(&args.config, bundle.config.as_ref())?;
    let results = if all_layers {
        run_multilayer(&bundle.scene, &config)?
    } else {
        vec![run_coarse_to_fine(&bundle.scene, &config)?]
    };
    let out = out_dir(&args.out, &args.scene);
    let report = io::save_results(&out, &results, &bundle.scene.target_skeleton)?;
    summarize(&bundle, &report, &out);
    Ok(())
}

fn refit_sequence(args: &SequenceArgs) -> Result<()> {
    let (frames, seq_config) = io::load_sequence(&args.sequence)?;
    let config = resolve_config(&args.config, seq_config.as_ref())?;
    let scenes: Vec<_> = frames.iter().map(|b| b.scene.clone()).collect();
    let out = out_dir(&args.out, &args.sequence);
    let mut first_error = None;
    for (i, (bundle, result)) in frames.iter().zip(run_sequence(&scenes, &config)).enumerate() {
        let dir = out.join(format!("frame_{i:04}"));
        match result.and_then(|r| io::save_results(&dir, &r, &bundle.scene.target_skeleton)) {
            Ok(report) => summarize(bundle, &report, &dir),
            Err(e) => {
                eprintln!("frame {i}: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    first_error.map_or(Ok(()), Err)
}

fn gen_scene(args: &GenArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => io::read_json::<SynthSpec>(path)?,
        None => match args.preset {
            Preset::Standard => SynthSpec::standard(args.seed),
            Preset::Small => SynthSpec::small(args.seed),
            Preset::TwoLayer => SynthSpec::two_layer(args.seed),
        },
    };
    spec.seed = args.seed;
    if let Some(s) = args.torso_scale {
        spec.target.torso_radius_scale = s;
    }
    match &args.arm_raise {
        Some(degrees) => {
            let frames = synth::generate_sequence(&spec, degrees)?;
            io::save_sequence(&args.out, &frames, None)?;
            println!("wrote {} frames to {}", frames.len(), args.out.display());
        }
        None => {
            let scene = synth::generate(&spec)?;
            io::save_scene(&args.out, &scene, None)?;
            let g = &scene.garments[0].mesh;
            println!(
                "wrote {} ({} garment(s), first has {} vertices)",
                args.out.display(),
                scene.garments.len(),
                g.vertex_count()
            );
        }
    }
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let bundle = io::load_scene(&args.scene)?;
    let config = resolve_config(&args.config, bundle.config.as_ref())?;
    let report = bench_conditioning(&bundle.scene, &config)?;
    let out = args.out.clone().unwrap_or_else(|| args.scene.join("bench"));
    std::fs::create_dir_all(&out).map_err(|source| RefitError::Io {
        path: out.clone(),
        source,
    })?;
    io::write_json(&out.join("conditioning.json"), &report)?;
    for c in &report.checkpoints {
        println!(
            "iteration {:>6}  bone-local {:.6e}  global {:.6e}",
            c.iteration, c.bone_local_loss, c.global_loss
        );
    }
    println!(
        "displacement spread (IQR of r/median r): bone-local {:.4}, global {:.4}",
        report.bone_local_spread, report.global_spread
    );
    Ok(())
}

fn verify_cmd(args: &VerifyArgs) -> Result<bool> {
    let bundle = io::load_scene(&args.scene)?;
    let checks = verify::verify_scene(&bundle.scene, args.seed);
    print!("{}", verify::format_table(&checks));
    Ok(checks.iter().all(|c| c.passed))
}

fn error_record(e: &RefitError) -> String {
    serde_json::json!({ "kind": e.kind(), "message": e.to_string() }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Refit(a) => refit(a, false).map(|_| true),
        Command::RefitMultilayer(a) => refit(a, true).map(|_| true),
        Command::RefitSequence(a) => refit_sequence(a).map(|_| true),
        Command::GenScene(a) => gen_scene(a).map(|_| true),
        Command::BenchConditioning(a) => bench(a).map(|_| true),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
    }
}
