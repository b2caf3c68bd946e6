//! Command-line front end: `generate`, `stats`, `eval` and `inspect`.
//!
//! Settings come from one JSON file (`--config`) with flag overrides on top.
//! `--show-config` prints the effective settings and exits.

mod inspect;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_scene, DatasetStats, StatsAccumulator, DEFAULT_POINTS};
use crate::compositor::{generate_batch, ComposedScene, GenerationConfig, Mode, Sources};
use crate::datastore::{read_dataset, verify_manifest, DatasetInfo, DatasetWriter, WriteOptions};
use crate::error::{Error, Result};
use crate::evalkit::{
    collapse_layers, evaluate_ap, nms, perturb_gt_to_detections, read_detections, APConfig, Grouping, GroundTruth,
    NmsMode, PerturbConfig, Target,
};
use crate::rng::mix;
use crate::sprite_source::{
    ingest_backgrounds, ingest_sprites, procedural_backgrounds, procedural_library, Background, ChromaKey,
    ProceduralConfig, SkippedFile, SpriteLibrary,
};

pub const THREADS_ENV: &str = "AMODAL_FORGE_THREADS";

/// Name of the held-out split written when `test_fraction > 0`.
pub const TEST_SPLIT: &str = "test";

/// Salt separating the held-out split's scene seeds from the main split's.
const TEST_SPLIT_SALT: u64 = 0x7E57;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Use generated shapes instead of sprite files.
    pub procedural: bool,
    /// `<dir>/<category>/<image>` cutouts; required unless `procedural`.
    pub sprite_dir: Option<PathBuf>,
    /// Background photos; procedural textures are used when absent.
    pub background_dir: Option<PathBuf>,
    pub chroma_key: ChromaKey,
    pub library: ProceduralConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub output: PathBuf,
    pub split: String,
    /// Share of `count` written to a separate `test` split.
    pub test_fraction: f64,
    /// Give the `test` split sprites never seen by the main split.
    pub disjoint_sprite_pools: bool,
    pub write_appearances: bool,
    pub points_per_instance: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            output: PathBuf::from("dataset"),
            split: "train".into(),
            test_fraction: 0.0,
            disjoint_sprite_pools: false,
            write_appearances: true,
            points_per_instance: DEFAULT_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ap: APConfig,
    /// `null` disables suppression.
    pub nms_mode: Option<NmsMode>,
    pub nms_threshold: f64,
    pub collapse: bool,
    /// Detection simulator used when no detections file is given.
    pub simulate: PerturbConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ap: APConfig::default(),
            nms_mode: None,
            nms_threshold: 0.5,
            collapse: false,
            simulate: PerturbConfig::default(),
        }
    }
}

/// Everything a run depends on. Every field has a default, so partial files work.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub generation: GenerationConfig,
    pub sources: SourceConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
}

impl ForgeConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&data).map_err(|e| Error::json(path, e))
    }
}

#[derive(Debug, Parser)]
#[command(name = "amodal-forge", version, about = "Synthetic amodal occlusion datasets and evaluation")]
pub struct Cli {
    /// JSON settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// -v info, -vv debug, -vvv trace.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Print the effective settings as JSON and exit.
    #[arg(long, global = true)]
    pub show_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compose scenes and write images, annotations, manifest and statistics.
    Generate(GenerateArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Score detections against a dataset split.
    Eval(EvalArgs),
    /// Render an overlay panel for one image.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Intra,
    Inter,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub procedural: bool,
    #[arg(long)]
    pub sprites: Option<PathBuf>,
    #[arg(long)]
    pub backgrounds: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Re-hash every file against the manifest.
    #[arg(long)]
    pub verify: bool,
    /// Also write the statistics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GroupingArg {
    Category,
    Layer,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Box,
    Mask,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NmsArg {
    None,
    Class,
    ClassLayer,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset root holding the ground truth.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Detections JSON; when absent, detections are simulated from the ground truth.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub grouping: Option<GroupingArg>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    #[arg(long, value_enum)]
    pub nms_mode: Option<NmsArg>,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    /// Drop predicted layers after NMS.
    #[arg(long)]
    pub collapse: bool,
    /// Write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub image_id: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Folds flag overrides into the file settings.
pub fn effective_config(cli: &Cli) -> Result<ForgeConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ForgeConfig::load(path)?,
        None => ForgeConfig::default(),
    };
    match &cli.command {
        Some(Command::Generate(a)) => {
            if a.procedural {
                cfg.sources.procedural = true;
            }
            if let Some(p) = &a.sprites {
                cfg.sources.sprite_dir = Some(p.clone());
            }
            if let Some(p) = &a.backgrounds {
                cfg.sources.background_dir = Some(p.clone());
            }
            if let Some(n) = a.count {
                cfg.generation.count = n;
            }
            if let Some(s) = a.seed {
                cfg.generation.seed = s;
            }
            if let Some(o) = &a.out {
                cfg.dataset.output = o.clone();
            }
            if let Some(s) = &a.split {
                cfg.dataset.split = s.clone();
            }
            if let Some(m) = a.mode {
                cfg.generation.mode = match m {
                    ModeArg::Intra => Mode::Intra,
                    ModeArg::Inter => Mode::Inter,
                };
            }
        }
        Some(Command::Stats(a)) => {
            if let Some(d) = &a.dataset {
                cfg.dataset.output = d.clone();
            }
            if let Some(s) = &a.split {
                cfg.dataset.split = s.clone();
            }
        }
        Some(Command::Eval(a)) => {
            if let Some(d) = &a.gt {
                cfg.dataset.output = d.clone();
            }
            if let Some(s) = &a.split {
                cfg.dataset.split = s.clone();
            }
            if let Some(g) = a.grouping {
                cfg.eval.ap.grouping = match g {
                    GroupingArg::Category => Grouping::Category,
                    GroupingArg::Layer => Grouping::Layer,
                };
            }
            if let Some(t) = a.target {
                cfg.eval.ap.target = match t {
                    TargetArg::Box => Target::Box,
                    TargetArg::Mask => Target::Mask,
                };
            }
            if let Some(m) = a.nms_mode {
                cfg.eval.nms_mode = match m {
                    NmsArg::None => None,
                    NmsArg::Class => Some(NmsMode::Class),
                    NmsArg::ClassLayer => Some(NmsMode::ClassLayer),
                };
            }
            if let Some(t) = a.nms_threshold {
                cfg.eval.nms_threshold = t;
            }
            if a.collapse {
                cfg.eval.collapse = true;
            }
        }
        Some(Command::Inspect(a)) => {
            if let Some(d) = &a.dataset {
                cfg.dataset.output = d.clone();
            }
            if let Some(s) = &a.split {
                cfg.dataset.split = s.clone();
            }
        }
        None => {}
    }
    Ok(cfg)
}

/// Parses `std::env::args` and runs; returns the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = effective_config(cli)?;
    let header = serde_json::to_string_pretty(&cfg).expect("settings serialize");
    if cli.show_config {
        println!("{header}");
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Error::Config("no subcommand given; see --help".into()));
    };
    log::info!("effective settings:\n{header}");
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match command {
        Command::Generate(_) => cmd_generate(&cfg),
        Command::Stats(a) => cmd_stats(&cfg, a),
        Command::Eval(a) => cmd_eval(&cfg, a),
        Command::Inspect(a) => inspect::cmd_inspect(&cfg, a),
    })
}

fn warn_skipped(skipped: &[SkippedFile]) {
    for s in skipped {
        log::warn!("skipped {}: {}", s.path.display(), s.reason);
    }
}

fn load_sources(cfg: &ForgeConfig) -> Result<(SpriteLibrary, Vec<Background>, String)> {
    let src = &cfg.sources;
    let canvas = cfg.generation.canvas.dims();
    let seed = cfg.generation.seed;
    let (library, sprite_desc) = if src.procedural {
        (procedural_library(&src.library, seed)?, format!("procedural sprites (seed {seed})"))
    } else {
        let dir = src.sprite_dir.as_ref().ok_or_else(|| {
            Error::Config("no sprite directory given; pass --sprites <dir> or --procedural".into())
        })?;
        let (lib, skipped) = ingest_sprites(dir, &src.chroma_key)?;
        warn_skipped(&skipped);
        (lib, format!("sprites from {}", dir.display()))
    };
    let (backgrounds, bg_desc) = match &src.background_dir {
        Some(dir) => {
            let (bgs, skipped) = ingest_backgrounds(dir, canvas)?;
            warn_skipped(&skipped);
            (bgs, format!("backgrounds from {}", dir.display()))
        }
        None if src.procedural => (
            procedural_backgrounds(src.library.backgrounds, canvas, seed)?,
            "procedural backgrounds".to_string(),
        ),
        None => {
            return Err(Error::Config(
                "no background directory given; pass --backgrounds <dir> or --procedural".into(),
            ))
        }
    };
    Ok((library, backgrounds, format!("{sprite_desc}; {bg_desc}")))
}

struct SplitPlan {
    name: String,
    library: SpriteLibrary,
    generation: GenerationConfig,
}

fn plan_splits(cfg: &ForgeConfig, library: SpriteLibrary) -> Result<Vec<SplitPlan>> {
    let ds = &cfg.dataset;
    let f = ds.test_fraction;
    if !(0.0..1.0).contains(&f) {
        return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
    }
    if f == 0.0 {
        return Ok(vec![SplitPlan {
            name: ds.split.clone(),
            library,
            generation: cfg.generation.clone(),
        }]);
    }
    if ds.split == TEST_SPLIT {
        return Err(Error::Config(format!(
            "main split cannot be named '{TEST_SPLIT}' when test_fraction > 0"
        )));
    }
    let total = cfg.generation.count;
    let n_test = (total as f64 * f).round() as u64;
    if n_test == 0 || n_test >= total {
        return Err(Error::Config(format!(
            "test_fraction {f} of {total} scenes leaves an empty split"
        )));
    }
    let (main_lib, test_lib) = if ds.disjoint_sprite_pools {
        library.split_disjoint(f, cfg.generation.seed)?
    } else {
        (library.clone(), library)
    };
    let main = GenerationConfig {
        count: total - n_test,
        ..cfg.generation.clone()
    };
    let test = GenerationConfig {
        count: n_test,
        seed: mix(cfg.generation.seed, TEST_SPLIT_SALT),
        ..cfg.generation.clone()
    };
    Ok(vec![
        SplitPlan {
            name: ds.split.clone(),
            library: main_lib,
            generation: main,
        },
        SplitPlan {
            name: TEST_SPLIT.into(),
            library: test_lib,
            generation: test,
        },
    ])
}

fn cmd_generate(cfg: &ForgeConfig) -> Result<()> {
    cfg.generation.validate()?;
    let (library, backgrounds, source) = load_sources(cfg)?;
    log::info!(
        "{} sprites in {} categories, {} backgrounds",
        library.len(),
        library.categories().len(),
        backgrounds.len()
    );
    let root = &cfg.dataset.output;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for plan in plan_splits(cfg, library)? {
        let stats = generate_split(cfg, &plan, backgrounds.clone(), &source)?;
        let path = root.join(format!("stats_{}.json", plan.name));
        let data = serde_json::to_vec_pretty(&stats).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
        print_summary(&plan.name, &stats);
    }
    Ok(())
}

fn generate_split(
    cfg: &ForgeConfig,
    plan: &SplitPlan,
    backgrounds: Vec<Background>,
    source: &str,
) -> Result<DatasetStats> {
    let categories = plan.library.categories().to_vec();
    let info = DatasetInfo::new(
        &plan.name,
        plan.generation.clone(),
        source.to_string(),
        categories.len() as u32,
        cfg.dataset.points_per_instance,
    );
    let options = WriteOptions {
        write_appearances: cfg.dataset.write_appearances,
    };
    let mut writer = DatasetWriter::create(&cfg.dataset.output, info, categories, options)?;
    let sources = Sources::new(plan.library.clone(), backgrounds)?;
    let mut acc = StatsAccumulator::default();
    let mut pending: Vec<ComposedScene> = Vec::new();
    let points = cfg.dataset.points_per_instance;

    let mut flush = |pending: &mut Vec<ComposedScene>, writer: &mut DatasetWriter| -> Result<()> {
        let annotated = std::mem::take(pending)
            .into_par_iter()
            .map(|s| annotate_scene(s, points))
            .collect::<Result<Vec<_>>>()?;
        for s in &annotated {
            acc.add_scene(s);
        }
        writer.write_scenes(&annotated)
    };

    let report = generate_batch(&sources, &plan.generation, plan.generation.seed, plan.generation.count, |scene| {
        pending.push(scene);
        if pending.len() >= 64 {
            flush(&mut pending, &mut writer)?;
        }
        Ok(())
    })?;
    flush(&mut pending, &mut writer)?;
    writer.finish()?;
    if !report.skipped.is_empty() {
        log::warn!(
            "split {}: {} scene(s) skipped after exhausting retries: {:?}",
            plan.name,
            report.skipped.len(),
            report.skipped
        );
    }
    Ok(acc.finish())
}

fn print_summary(split: &str, stats: &DatasetStats) {
    let hist: Vec<String> = stats
        .layer_histogram
        .iter()
        .enumerate()
        .map(|(l, n)| format!("L{l}={n}"))
        .collect();
    println!(
        "split {split}: {} images, {} instances, occluded fraction {:.3}, avg occlusion rate {:.1}%",
        stats.images,
        stats.instances,
        stats.occluded_fraction(),
        stats.avg_occlusion_rate
    );
    println!("layer histogram: {}", hist.join(" "));
}

fn cmd_stats(cfg: &ForgeConfig, args: &StatsArgs) -> Result<()> {
    let root = &cfg.dataset.output;
    if args.verify {
        let bad = verify_manifest(root)?;
        if !bad.is_empty() {
            return Err(Error::ManifestMismatch(bad));
        }
        eprintln!("manifest verified");
    }
    let record = read_dataset(root, &cfg.dataset.split)?;
    let stats = record.stats();
    print!("{}", stats.to_table(&record.category_names()));
    if let Some(path) = &args.out {
        let data = serde_json::to_vec_pretty(&stats).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_eval(cfg: &ForgeConfig, args: &EvalArgs) -> Result<()> {
    let ev = &cfg.eval;
    ev.ap.validate()?;
    let record = read_dataset(&cfg.dataset.output, &cfg.dataset.split)?;
    let gt = GroundTruth::from_record(&record);
    let mut dets = match &args.detections {
        Some(path) => read_detections(path)?,
        None => {
            log::info!("no detections file; simulating detections from the ground truth");
            perturb_gt_to_detections(&gt, &ev.simulate)?
        }
    };
    if let Some(mode) = ev.nms_mode {
        let before = dets.len();
        dets = nms(&dets, ev.nms_threshold, mode)?;
        let name = match mode {
            NmsMode::Class => "class",
            NmsMode::ClassLayer => "class-layer",
        };
        eprintln!(
            "nms {name} @ {}: kept {} of {before} detections",
            ev.nms_threshold,
            dets.len()
        );
    }
    if ev.collapse {
        dets = collapse_layers(&dets);
    }
    let report = evaluate_ap(&gt, &dets, &ev.ap)?;
    print!("{}", report.to_table());
    if let Some(path) = &args.out {
        let data = serde_json::to_vec_pretty(&report).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, data).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
