use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cbdetect::atlas::{
    generate_phantom, generate_synthetic_atlas_pair, prepare_cerebellum_atlas, prepare_whole_brain_atlas, AtlasPair,
    Region, SubjectJitter, WholeBrainOptions,
};
use cbdetect::evaluation::{accumulate_heatmaps, render_overlay, Overlay, Plane};
use cbdetect::pipeline::{detect_damage, run_stages, PipelineConfig, Stage};
use cbdetect::simulation::{run_simulation_batch, SimulationSpec};
use cbdetect::tissue::SegmentationConfig;
use cbdetect::volume::nifti;
use cbdetect::{Error, Image, Mask, Result};

#[derive(Parser)]
#[command(name = "pipeline", version, about = "Postoperative cerebellar damage detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: crop, bias, brain extraction, segmentation, isolation, normalization, detection.
    Run(StageArgs),
    /// Stop after tissue segmentation.
    Segment(StageArgs),
    /// Stop after cerebellum isolation.
    Isolate(StageArgs),
    /// Stop after normalization to the cerebellum atlas.
    Normalize(StageArgs),
    /// Detect damage in an image already normalized to the cerebellum atlas.
    Detect(DetectArgs),
    /// Write an atlas directory, synthetic unless a template is given.
    MakeAtlas(MakeAtlasArgs),
    /// Write one synthetic head with its construction truth.
    Phantom(PhantomArgs),
    /// Simulate damage on phantom subjects and score the pipeline.
    Simulate(SimulateArgs),
    /// Write a PNG slice with mask overlays.
    Render(RenderArgs),
}

#[derive(Args)]
struct Common {
    /// Atlas directory holding `whole_brain/` and `cerebellum/`.
    #[arg(long)]
    atlas_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StageArgs {
    /// T1 volume (NIfTI).
    #[arg(long)]
    input: PathBuf,
    /// Ground-truth damage mask on the atlas grid; adds Dice to the report.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct DetectArgs {
    /// Normalized cerebellum on the atlas grid.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct MakeAtlasArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation spec whose phantom parameters shape the synthetic atlas.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Whole-brain template; switches to preparing atlases from files.
    #[arg(long, requires_all = ["labels", "cerebellum_template", "stem_mask"])]
    template: Option<PathBuf>,
    /// Zone label volume for the whole-brain template.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Labels making up the cerebellum in `--labels`.
    #[arg(long, value_delimiter = ',', default_value = "58,67,237,238,251")]
    cerebellum_labels: Vec<u16>,
    #[arg(long)]
    cerebellum_template: Option<PathBuf>,
    #[arg(long)]
    stem_mask: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Skip the per-subject anatomical jitter.
    #[arg(long)]
    no_jitter: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation spec (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    damages: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaneArg {
    Axial,
    Coronal,
    Sagittal,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    input: PathBuf,
    /// Masks drawn in red, green, blue, yellow, in that order.
    #[arg(long)]
    mask: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "axial")]
    plane: PlaneArg,
    /// Slice index; the middle slice by default.
    #[arg(long)]
    slice: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run_until(a, Stage::Detect),
        Command::Segment(a) => run_until(a, Stage::Segment),
        Command::Isolate(a) => run_until(a, Stage::Isolate),
        Command::Normalize(a) => run_until(a, Stage::Normalize),
        Command::Detect(a) => detect(a),
        Command::MakeAtlas(a) => make_atlas(a),
        Command::Phantom(a) => phantom(a),
        Command::Simulate(a) => simulate(a),
        Command::Render(a) => render(a),
    }
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &common.atlas_dir {
        config.atlas_dir = Some(dir.clone());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn load_atlases(config: &PipelineConfig) -> Result<AtlasPair<f32>> {
    let dir = config
        .atlas_dir
        .as_ref()
        .ok_or_else(|| Error::Config("pass --atlas-dir or set atlas_dir in the config".into()))?;
    AtlasPair::load(dir)
}

fn load_spec(path: Option<&Path>) -> Result<SimulationSpec> {
    path.map_or_else(|| Ok(SimulationSpec::default()), SimulationSpec::load)
}

fn run_until(a: StageArgs, until: Stage) -> Result<()> {
    let config = load_config(&a.common)?;
    let atlases = load_atlases(&config)?;
    let input: Image = nifti::load_nifti(&a.input)?;
    let gt = a.gt.as_ref().map(nifti::load_mask).transpose()?;
    let out = run_stages(&input, &atlases, &config, until, gt.as_ref())?;
    out.save(&a.common.out)?;
    if let Some(r) = &out.report {
        print_report(&r.volume_mm3, &r.size_bin, r.dice_vs_gt);
    }
    eprintln!("wrote {} stage outputs to {}", until.name(), a.common.out.display());
    Ok(())
}

fn print_report(volume: &f64, bin: &str, dice: Option<f64>) {
    match dice {
        Some(d) => println!("damage {volume:.1} mm3 bin {bin} dice {d:.4}"),
        None => println!("damage {volume:.1} mm3 bin {bin}"),
    }
}

fn detect(a: DetectArgs) -> Result<()> {
    let config = load_config(&a.common)?;
    let atlases = load_atlases(&config)?;
    let normalized: Image = nifti::load_nifti(&a.input)?;
    let mut report = detect_damage(&normalized, &atlases.cerebellum, &config.detection)?;
    if let Some(gt) = &a.gt {
        report = report.with_ground_truth(&nifti::load_mask(gt)?)?;
    }
    let out = &a.common.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    nifti::save_mask(&report.damage_mask, out.join("damage_mask.nii.gz"))?;
    report.write_json(out.join("report.json"))?;
    print_report(&report.volume_mm3, &report.size_bin, report.dice_vs_gt);
    Ok(())
}

fn make_atlas(a: MakeAtlasArgs) -> Result<()> {
    let pair = match &a.template {
        None => {
            let spec = load_spec(a.spec.as_deref())?;
            generate_synthetic_atlas_pair::<f32>(&spec.phantom, a.seed)?
        }
        Some(template) => {
            let required = |p: &Option<PathBuf>, flag: &str| {
                p.clone().ok_or_else(|| Error::Config(format!("--template needs {flag}")))
            };
            let template: Image = nifti::load_nifti(template)?;
            let labels = nifti::load_labels(required(&a.labels, "--labels")?)?;
            let whole_brain =
                prepare_whole_brain_atlas(&template, &labels, &a.cerebellum_labels, &WholeBrainOptions::default())?;
            let cereb: Image = nifti::load_nifti(required(&a.cerebellum_template, "--cerebellum-template")?)?;
            let stem = nifti::load_mask(required(&a.stem_mask, "--stem-mask")?)?;
            let seg = SegmentationConfig {
                seed: a.seed,
                ..SegmentationConfig::default()
            };
            let cerebellum = prepare_cerebellum_atlas(&cereb, &stem, &seg)?;
            AtlasPair { whole_brain, cerebellum }
        }
    };
    pair.save(&a.out)?;
    eprintln!("wrote atlases to {}", a.out.display());
    Ok(())
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let spec = load_spec(a.spec.as_deref())?;
    let jitter = if a.no_jitter {
        SubjectJitter::default()
    } else {
        SubjectJitter::random(a.seed)
    };
    let ph = generate_phantom::<f32>(&spec.phantom, &jitter, a.seed)?;
    let out = &a.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    nifti::save_nifti(&ph.t1, out.join("t1.nii.gz"))?;
    nifti::save_labels(&ph.regions, out.join("regions.nii.gz"))?;
    nifti::save_mask(&ph.brain_mask(), out.join("brain_mask.nii.gz"))?;
    nifti::save_mask(&ph.cerebellum_mask(), out.join("cerebellum_mask.nii.gz"))?;
    nifti::save_mask(&ph.region_mask(Region::is_wm), out.join("wm_mask.nii.gz"))?;
    nifti::save_mask(&ph.region_mask(Region::is_gm), out.join("gm_mask.nii.gz"))?;
    eprintln!("wrote phantom to {}", out.display());
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let config = load_config(&a.common)?;
    let atlases = load_atlases(&config)?;
    let mut spec = load_spec(a.spec.as_deref())?;
    if let Some(n) = a.subjects {
        spec.n_subjects = n;
    }
    if let Some(n) = a.damages {
        spec.damages_per_subject = n;
    }
    if let Some(seed) = a.common.seed {
        spec.seed = seed;
    }
    let outcome = run_simulation_batch(&spec, &atlases, &config, &a.common.out)?;
    if !outcome.results.is_empty() {
        let (fn_map, fp_map) = accumulate_heatmaps(&outcome.results)?;
        nifti::save_nifti(&fn_map.to_volume(), a.common.out.join("fn_heatmap.nii.gz"))?;
        nifti::save_nifti(&fp_map.to_volume(), a.common.out.join("fp_heatmap.nii.gz"))?;
    }
    print!("{}", outcome.summary.to_csv());
    eprintln!("{} cases scored, results in {}", outcome.results.len(), a.common.out.display());
    Ok(())
}

fn render(a: RenderArgs) -> Result<()> {
    const COLORS: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 96, 255], [255, 255, 0]];
    if a.mask.len() > COLORS.len() {
        return Err(Error::Config(format!("at most {} masks", COLORS.len())));
    }
    let base: Image = nifti::load_nifti(&a.input)?;
    let masks: Vec<Mask> = a.mask.iter().map(nifti::load_mask).collect::<Result<_>>()?;
    let overlays: Vec<Overlay> = masks
        .iter()
        .zip(COLORS)
        .map(|(mask, color)| Overlay { mask, color, alpha: 0.5 })
        .collect();
    let plane = match a.plane {
        PlaneArg::Axial => Plane::Axial,
        PlaneArg::Coronal => Plane::Coronal,
        PlaneArg::Sagittal => Plane::Sagittal,
    };
    let axis = match plane {
        Plane::Axial => 2,
        Plane::Coronal => 1,
        Plane::Sagittal => 0,
    };
    let slice = a.slice.unwrap_or(base.dims()[axis] / 2);
    render_overlay(&base, &overlays, plane, slice, &a.out)
}
