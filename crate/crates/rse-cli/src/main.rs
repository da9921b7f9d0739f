//! `rse`: dataset ingestion, rigid alignment, instruction handling,
//! region-specific counterfactual editing, evaluation, and statistics.
//!
//! Exit codes: 0 success, 2 instruction parse failure, 3 file I/O failure,
//! 4 invalid configuration or inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rse_cli::error::{CliError, Result};
use rse_cli::formats::{
    read_json, ProbeFile, ProbeKind, ProbesFile, RecordFile, RegistryFile, WorldFile,
};
use rse_cli::io::{
    atomic_write, load_gray_png, load_mask_png, save_gray_png, save_mask_png, save_overlay_png,
    save_raw_map, MapKind,
};
use rse_cli::pipeline::{
    build_manifest, compute_stats, filter_view, parse_manifest, render_manifest, BuildConfig,
    PairRecord,
};
use rse_core::diffusion::{GuidanceScales, NoiseSchedule};
use rse_core::imaging::{bilateral_filter, resize, GrayImage};
use rse_core::instruction::{generate_instructions, parse_instruction, render_instruction};
use rse_core::maskreg::MaskRegistry;
use rse_core::metrics::{
    assemble_report, auroc, embed_and_fit, frechet_distance, kl_divergence, pearson,
    PathologyDistribution, PooledProjectionExtractor, ScoreSet,
};
use rse_core::registration::register_rigid;
use rse_core::rse::{edit, EditConfig};

#[derive(Parser)]
#[command(
    name = "rse",
    version,
    about = "Region-specific counterfactual editing toolkit",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a registration-gated manifest from an image-pair records file.
    Ingest(IngestArgs),
    /// Rigidly align one image onto another and report the alignment score.
    Register(RegisterArgs),
    /// Parse instruction text, or derive instructions from finding lists.
    Instruct(InstructArgs),
    /// Apply a text-driven counterfactual edit to one image.
    Edit(EditArgs),
    /// Score generated images against references and probe files.
    Eval(EvalArgs),
    /// Summarize a manifest: splits, operations, shares.
    Stats(StatsArgs),
}

#[derive(Args)]
struct RegistrationFlags {
    /// Joint-histogram bins per axis for the alignment score.
    #[arg(long, default_value_t = 64)]
    mi_bins: usize,
    /// Acceptance threshold on the negated mutual-information score.
    #[arg(long, default_value_t = -0.88, allow_negative_numbers = true)]
    mi_threshold: f64,
    /// Restart seeds besides the identity during alignment search.
    #[arg(long, default_value_t = 8)]
    reg_restarts: usize,
}

#[derive(Args)]
struct IngestArgs {
    /// JSON file listing image pairs with findings.
    #[arg(long)]
    records: PathBuf,
    /// Directory receiving manifest.jsonl and stats.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Square canvas size images are resized to before alignment.
    #[arg(long, default_value_t = 512)]
    canvas: usize,
    /// Radiographic view to keep; other or unlabeled records are dropped.
    #[arg(long, default_value = "PA")]
    view: String,
    #[command(flatten)]
    registration: RegistrationFlags,
}

#[derive(Args)]
struct RegisterArgs {
    /// Image held fixed.
    fixed: PathBuf,
    /// Image to align onto the fixed one.
    moving: PathBuf,
    /// Square canvas size both images are resized to first.
    #[arg(long, default_value_t = 512)]
    canvas: usize,
    #[command(flatten)]
    registration: RegistrationFlags,
}

#[derive(Args)]
struct InstructArgs {
    /// Instruction text to parse into canonical form.
    #[arg(long, conflicts_with_all = ["past", "current"])]
    text: Option<String>,
    /// Finding-list JSON for the earlier study.
    #[arg(long, requires = "current")]
    past: Option<PathBuf>,
    /// Finding-list JSON for the later study.
    #[arg(long, requires = "past")]
    current: Option<PathBuf>,
}

#[derive(Args)]
struct EditArgs {
    /// Input grayscale PNG.
    image: PathBuf,
    /// Edit instructions, e.g. "add severe left lower lobe edema".
    text: String,
    /// Synthetic-world JSON defining the oracle denoiser.
    #[arg(long)]
    world: PathBuf,
    /// Region prior: a registry JSON or a binary mask PNG.
    #[arg(long)]
    mask: PathBuf,
    /// Output directory for the edited image and diagnostic maps.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Threshold binarizing the guidance map into the edit mask.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Image-conditioning guidance scale.
    #[arg(long, default_value_t = 1.5)]
    s_image: f64,
    /// Text-conditioning guidance scale.
    #[arg(long, default_value_t = 7.5)]
    s_text: f64,
    /// Timestep probed for the relevance map.
    #[arg(long, default_value_t = 500)]
    t_rel: usize,
    /// Number of denoising steps.
    #[arg(long, default_value_t = 50)]
    steps: usize,
    /// Seed for all random draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of reference PNGs.
    #[arg(long)]
    reference: PathBuf,
    /// Directory of generated PNGs.
    #[arg(long)]
    generated: PathBuf,
    /// Probes JSON supplying accuracy, retention, and divergence inputs.
    #[arg(long)]
    probes: PathBuf,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Manifest JSONL file.
    manifest: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Register(args) => cmd_register(args),
        Command::Instruct(args) => cmd_instruct(args),
        Command::Edit(args) => cmd_edit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Stats(args) => cmd_stats(args),
    };
    if let Err(error) = result {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}

fn build_config(canvas: usize, flags: &RegistrationFlags) -> BuildConfig {
    let mut cfg = BuildConfig {
        canvas,
        ..BuildConfig::default()
    };
    cfg.registration.bins = flags.mi_bins;
    cfg.registration.threshold = flags.mi_threshold;
    cfg.registration.restarts = flags.reg_restarts;
    cfg
}

fn to_json(value: &impl serde::Serialize) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serialization failed: {e}")))
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let records: Vec<RecordFile> = read_json(&args.records)?;
    let records: Vec<PairRecord> = records
        .into_iter()
        .map(PairRecord::from_file)
        .collect::<Result<_>>()?;
    let total = records.len();
    let filtered = filter_view(records, &args.view);
    let kept = filtered.kept.len();
    let cfg = build_config(args.canvas, &args.registration);
    let outcome = build_manifest(filtered.kept, &cfg);

    let manifest_path = args.out_dir.join("manifest.jsonl");
    atomic_write(&manifest_path, render_manifest(&outcome.entries)?.as_bytes())?;
    let stats_path = args.out_dir.join("stats.json");
    atomic_write(&stats_path, to_json(&outcome.stats.to_file())?.as_bytes())?;

    if outcome.entries.is_empty() {
        eprintln!(
            "warning: no pairs accepted ({total} records; {} unreadable, \
             {} rejected by the alignment gate, {} without finding changes)",
            outcome.unreadable, outcome.rejected, outcome.unchanged
        );
    }
    let summary = serde_json::json!({
        "records": total,
        "view_kept": kept,
        "view_mismatched": filtered.mismatched,
        "view_unlabeled": filtered.unlabeled,
        "accepted": outcome.entries.len(),
        "unreadable": outcome.unreadable,
        "rejected_alignment": outcome.rejected,
        "unchanged": outcome.unchanged,
        "manifest": manifest_path.display().to_string(),
        "stats": stats_path.display().to_string(),
    });
    println!("{}", to_json(&summary)?);
    Ok(())
}

fn load_for_alignment(path: &Path, cfg: &BuildConfig) -> Result<GrayImage> {
    let image = load_gray_png(path)?;
    let resized = resize(&image, cfg.canvas, cfg.canvas)?;
    Ok(bilateral_filter(
        &resized,
        cfg.bilateral_spatial,
        cfg.bilateral_range,
    )?)
}

fn cmd_register(args: RegisterArgs) -> Result<()> {
    let cfg = build_config(args.canvas, &args.registration);
    let fixed = load_for_alignment(&args.fixed, &cfg)?;
    let moving = load_for_alignment(&args.moving, &cfg)?;
    let result = register_rigid(&fixed, &moving, &cfg.registration)?;
    let report = serde_json::json!({
        "transform": {
            "angle": result.transform.angle,
            "scale": result.transform.scale,
            "tx": result.transform.tx,
            "ty": result.transform.ty,
        },
        "mi": result.score.value,
        "accepted": result.accepted,
    });
    println!("{}", to_json(&report)?);
    Ok(())
}

fn cmd_instruct(args: InstructArgs) -> Result<()> {
    let instructions = match (&args.text, &args.past, &args.current) {
        (Some(text), _, _) => parse_instruction(text)?,
        (None, Some(past), Some(current)) => {
            let past = rse_cli::formats::into_finding_set(read_json(past)?)?;
            let current = rse_cli::formats::into_finding_set(read_json(current)?)?;
            generate_instructions(&past, &current)
        }
        _ => {
            return Err(CliError::Config(
                "provide --text, or both --past and --current".into(),
            ))
        }
    };
    let report = serde_json::json!({
        "instructions": instructions.as_slice(),
        "text": render_instruction(&instructions),
    });
    println!("{}", to_json(&report)?);
    Ok(())
}

fn cmd_edit(args: EditArgs) -> Result<()> {
    let image = load_gray_png(&args.image)?;
    let text = parse_instruction(&args.text)?;
    let world = read_json::<WorldFile>(&args.world)?.into_world()?;
    let sched = NoiseSchedule::default_linear();

    // A .json mask file is a finding registry; anything else is read as a
    // binary mask image that overrides the registry lookup.
    let (registry, user_mask) = if args.mask.extension().is_some_and(|e| e == "json") {
        (read_json::<RegistryFile>(&args.mask)?.into_registry()?, None)
    } else {
        let mask = load_mask_png(&args.mask)?;
        let registry = MaskRegistry::new(image.width(), image.height())?;
        (registry, Some(mask))
    };

    let cfg = EditConfig {
        tau: args.tau,
        scales: GuidanceScales {
            s_image: args.s_image,
            s_text: args.s_text,
        },
        t_rel: args.t_rel,
        steps: args.steps,
        seed: args.seed,
    };
    let output = edit(
        &image,
        &text,
        user_mask.as_ref(),
        &cfg,
        &registry,
        &world,
        &sched,
    )?;

    let edited_path = args.out_dir.join("edited.png");
    save_gray_png(&edited_path, &output.image)?;
    let overlay_path = args.out_dir.join("guidance.png");
    save_overlay_png(&overlay_path, &image, output.guidance.map())?;
    let raw_path = args.out_dir.join("guidance.bin");
    save_raw_map(
        &raw_path,
        output.guidance.map().data(),
        image.width(),
        image.height(),
        MapKind::Guidance,
    )?;
    let mask_path = args.out_dir.join("mask.png");
    save_mask_png(&mask_path, output.mask.mask())?;

    let summary = serde_json::json!({
        "edited": edited_path.display().to_string(),
        "guidance_overlay": overlay_path.display().to_string(),
        "guidance_raw": raw_path.display().to_string(),
        "mask": mask_path.display().to_string(),
        "mask_pixels": output.mask.mask().count_ones(),
        "width": image.width(),
        "height": image.height(),
        "steps": args.steps,
        "seed": args.seed,
    });
    println!("{}", to_json(&summary)?);
    Ok(())
}

fn load_png_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "png") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|path| load_gray_png(path)).collect()
}

fn score_probe(probe: &ProbeFile) -> Result<f64> {
    match &probe.kind {
        ProbeKind::Auroc { labels, scores } => {
            let set = ScoreSet::new(labels.clone(), scores.clone())?;
            Ok(auroc(&set)?)
        }
        // Negative correlation means no retention, so floor at zero to
        // keep the score inside the [0, 1] aggregation domain.
        ProbeKind::Pearson { x, y } => Ok(pearson(x, y)?.max(0.0)),
    }
}

fn score_probes(probes: &[ProbeFile], role: &str) -> Result<BTreeMap<String, f64>> {
    let mut scored = BTreeMap::new();
    for probe in probes {
        if scored.insert(probe.name.clone(), score_probe(probe)?).is_some() {
            return Err(CliError::Config(format!(
                "duplicate {role} probe `{}`",
                probe.name
            )));
        }
    }
    Ok(scored)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let reference = load_png_dir(&args.reference)?;
    let generated = load_png_dir(&args.generated)?;
    let extractor = PooledProjectionExtractor::default();
    let reference_stats = embed_and_fit(&reference, &extractor)?;
    let generated_stats = embed_and_fit(&generated, &extractor)?;
    let fid = frechet_distance(&reference_stats, &generated_stats)?;

    let probes: ProbesFile = read_json(&args.probes)?;
    if probes.accuracy.is_empty() || probes.retention.is_empty() {
        return Err(CliError::Config(
            "probes file needs at least one accuracy and one retention probe".into(),
        ));
    }
    let accuracy = score_probes(&probes.accuracy, "accuracy")?;
    let retention = score_probes(&probes.retention, "retention")?;
    let kl = match &probes.kl {
        Some(spec) => {
            let p = PathologyDistribution::new(spec.p.clone())?;
            let q = PathologyDistribution::new(spec.q.clone())?;
            kl_divergence(&p, &q)?
        }
        None => 0.0,
    };

    let report = assemble_report(accuracy, retention, kl, fid, generated.len())?;
    let json = to_json(&report)?;
    if let Some(out) = &args.out {
        atomic_write(out, json.as_bytes())?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let text =
        fs::read_to_string(&args.manifest).map_err(|e| CliError::io(&args.manifest, e))?;
    let entries = parse_manifest(&text)?;
    let stats = compute_stats(&entries);
    println!("{}", to_json(&stats.to_file())?);
    Ok(())
}
