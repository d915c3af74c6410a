//! Command implementations behind the `cogmap` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cogmap::cogcot::{build_occupancy_grid, render_trace, Answer, TaskKind};
use cogmap::cogmap::{decode_map, encode_map, extract_query_map, MetricCogMap, SceneAnnotation};
use cogmap::config::RunConfig;
use cogmap::covis::{AppearanceRecord, Detection, FrameObservation};
use cogmap::eval::{answer_question, gen_prompt, load_qa, run_batch, score, QaRecord, SceneStore};
use cogmap::grounding::{extract_categories, GroundingResult, Vocabulary};
use cogmap::pipeline::{parse_documents, run_pipeline};
use cogmap::synth::{gt_suite, raycast_scene, RaycastParams};
use serde::Serialize;

pub const CONFIG_ENV: &str = "COGMAP_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input files, flags or configuration. Exit code 2.
    #[error("{kind}: {0}", kind = .0.kind())]
    Input(cogmap::Error),
    /// The reasoning procedure could not produce an answer. Exit code 3.
    #[error("{kind}: {0}", kind = .0.kind())]
    Reasoning(cogmap::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Reasoning(_) => 3,
        }
    }
}

impl From<cogmap::Error> for CliError {
    fn from(e: cogmap::Error) -> Self {
        CliError::Input(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cogmap", version, about = "Metric cognitive maps and geometric reasoning traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a scene map from an annotation file.
    BuildMap(BuildMapArgs),
    /// Answer one question over a scene map and print the trace.
    Reason(ReasonArgs),
    /// Turn frames and detections into a scene map and a dedup report.
    Pipeline(PipelineArgs),
    /// Run and score a question dataset.
    Eval(EvalArgs),
    /// Assemble a prompt bundle for one question.
    GenPrompt(GenPromptArgs),
    /// Write seeded synthetic scenes, maps and questions.
    GenFixtures(GenFixturesArgs),
    /// Report the vocabulary categories named in questions.
    Ground(GroundArgs),
}

/// Overrides layered on top of the config file and the defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file with `RunConfig` fields.
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Cells per side of the scene map.
    #[arg(long)]
    pub grid: Option<u32>,
    #[arg(long)]
    pub cell_size: Option<f64>,
    #[arg(long)]
    pub occl_tol: Option<f64>,
    #[arg(long)]
    pub merge_frac: Option<f64>,
    #[arg(long)]
    pub overlap_frac: Option<f64>,
    #[arg(long)]
    pub depth_tol: Option<f64>,
    /// Frame budget for crucial frame selection.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = read(path)?;
                toml::from_str(&text).map_err(|e| cogmap::Error::Parse { path: path.display().to_string(), message: e.to_string() })?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.grid {
            cfg.grid_size = v;
        }
        if let Some(v) = self.cell_size {
            cfg.cell_size = v;
        }
        if let Some(v) = self.occl_tol {
            cfg.occl_tol = v;
        }
        if let Some(v) = self.merge_frac {
            cfg.merge_frac = v;
        }
        if let Some(v) = self.overlap_frac {
            cfg.overlap_frac = v;
        }
        if let Some(v) = self.depth_tol {
            cfg.depth_tol = v;
        }
        if let Some(v) = self.frames {
            cfg.frame_budget = v;
        }
        if let Some(v) = self.scale {
            cfg.scale = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct BuildMapArgs {
    /// Scene annotation JSON.
    pub annotation: PathBuf,
    /// Map output path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the occupancy grid built from the floor points.
    #[arg(long)]
    pub occupancy_out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReasonArgs {
    /// Scene map JSON.
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub question: String,
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    /// Answer option; repeat for each of A to D.
    #[arg(long = "option")]
    pub options: Vec<String>,
    /// Categories in role order, skipping grounding.
    #[arg(long = "category")]
    pub categories: Vec<String>,
    /// Vocabulary JSON; defaults to the map's categories.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Occupancy grid JSON, needed for room size.
    #[arg(long)]
    pub occupancy: Option<PathBuf>,
    /// Appearance records JSON, needed for appearance order.
    #[arg(long)]
    pub appearance: Option<PathBuf>,
    /// Directory receiving the trace as JSON.
    #[arg(long)]
    pub traces_dir: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Frame observations, JSON array or JSON lines.
    #[arg(long = "frames-file")]
    pub frames_file: PathBuf,
    /// Detections, JSON array or JSON lines.
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long, default_value = "scene")]
    pub scene_id: String,
    /// Categories that anchor crucial frames; all detected ones by default.
    #[arg(long = "query")]
    pub queried: Vec<String>,
    /// Output directory in scene-store layout plus `<scene>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Record per-stage wall-clock times in the report.
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Question dataset, JSON lines.
    #[arg(long)]
    pub qa: PathBuf,
    /// Scene-store directory.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Score report path; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory receiving one outcome JSON per question.
    #[arg(long)]
    pub traces_dir: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GenPromptArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub question: String,
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Bundle JSON path; the rendered prompt goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenFixturesArgs {
    #[arg(long, default_value_t = 4)]
    pub scenes: usize,
    /// Ray-cast reconstructions to write next to the annotated scenes.
    #[arg(long, default_value_t = 0)]
    pub raycast: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    /// Vocabulary JSON.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, conflicts_with = "qa", required_unless_present = "qa")]
    pub question: Option<String>,
    /// Ground every record of a dataset instead.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse::<TaskKind>().map_err(|_| format!("unknown task `{s}`; expected one of {}", TaskKind::ALL.map(|t| t.name()).join(", ")))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input(cogmap::Error::InvalidInput(format!("cannot read {}: {e}", path.display()))))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Input(cogmap::Error::Parse { path: format!("{}: {}", path.display(), e.path()), message: e.into_inner().to_string() }))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Writes to `out` or returns the text for standard output.
fn emit(out: Option<&Path>, text: String) -> CliResult<String> {
    match out {
        Some(p) => write(p, &text).map(|_| String::new()),
        None => Ok(text),
    }
}

fn load_map(path: &Path) -> CliResult<MetricCogMap> {
    let text = read(path)?;
    decode_map(&text).map_err(|e| match e {
        cogmap::Error::Parse { path: p, message } => CliError::Input(cogmap::Error::Parse { path: format!("{}: {p}", path.display()), message }),
        other => CliError::Input(other),
    })
}

fn load_vocab(path: Option<&Path>, fallback: impl FnOnce() -> Vocabulary) -> CliResult<Vocabulary> {
    match path {
        Some(p) => {
            let v: Vocabulary = parse_json(p)?;
            v.validate()?;
            Ok(v)
        }
        None => Ok(fallback()),
    }
}

/// Each command returns the text destined for standard output.
pub fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::BuildMap(a) => cmd_build_map(&a),
        Command::Reason(a) => cmd_reason(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::GenPrompt(a) => cmd_gen_prompt(&a),
        Command::GenFixtures(a) => cmd_gen_fixtures(&a),
        Command::Ground(a) => cmd_ground(&a),
    }
}

pub fn cmd_build_map(a: &BuildMapArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let ann: SceneAnnotation = parse_json(&a.annotation)?;
    let map = ann.build(cfg.grid_size)?;
    if let Some(p) = &a.occupancy_out {
        let grid = build_occupancy_grid(&ann.floor_points, cfg.cell_size, cfg.min_cell_points)?;
        write(p, &pretty(&grid))?;
    }
    emit(a.out.as_deref(), encode_map(&map))
}

pub fn cmd_reason(a: &ReasonArgs) -> CliResult<String> {
    a.cfg.resolve()?;
    let map = load_map(&a.map)?;
    let scene = map.scene_id.clone();
    let mut store = SceneStore::default();
    if let Some(p) = &a.occupancy {
        let grid: cogmap::cogcot::OccupancyGrid = parse_json(p)?;
        grid.validate()?;
        store.occupancy.insert(scene.clone(), grid);
    }
    if let Some(p) = &a.appearance {
        let recs: Vec<AppearanceRecord> = parse_json(p)?;
        store.appearance.insert(scene.clone(), recs);
    }
    store.maps.insert(scene.clone(), map);
    let vocab = load_vocab(a.vocab.as_deref(), || store.vocabulary())?;
    let rec = QaRecord {
        id: "query".into(),
        scene_id: scene,
        task: a.task,
        question: a.question.clone(),
        options: a.options.clone(),
        ground_truth: Answer::Text(String::new()),
        categories: (!a.categories.is_empty()).then(|| a.categories.clone()),
    };
    let trace = answer_question(&rec, &store, &vocab).map_err(|e| match e {
        e @ (cogmap::Error::Io(_) | cogmap::Error::Parse { .. }) => CliError::Input(e),
        e => CliError::Reasoning(e),
    })?;
    if let Some(dir) = &a.traces_dir {
        write(&dir.join("query.json"), &pretty(&trace))?;
    }
    Ok(render_trace(&trace) + "\n")
}

pub fn cmd_pipeline(a: &PipelineArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let frames: Vec<FrameObservation> = parse_documents(&read(&a.frames_file)?)?;
    let dets: Vec<Detection> = parse_documents(&read(&a.detections)?)?;
    let queried = (!a.queried.is_empty()).then_some(a.queried.as_slice());
    let out = run_pipeline(&a.scene_id, &frames, &dets, &cfg, queried, a.timings)?;
    let mut store = SceneStore::default();
    store.maps.insert(a.scene_id.clone(), out.map);
    if let Some(g) = out.occupancy {
        store.occupancy.insert(a.scene_id.clone(), g);
    }
    store.appearance.insert(a.scene_id.clone(), out.appearance);
    store.save_dir(&a.out)?;
    write(&a.out.join(format!("{}.report.json", a.scene_id)), &pretty(&out.report))?;
    Ok(format!("{}: {} instances, {} detections suppressed\n", a.scene_id, out.report.instances, out.report.suppressed))
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let load = load_qa(&a.qa).map_err(|e| match e {
        cogmap::Error::Io(io) => cogmap::Error::InvalidInput(format!("cannot read {}: {io}", a.qa.display())),
        e => e,
    })?;
    let store = SceneStore::load_dir(&a.maps)?;
    let vocab = load_vocab(a.vocab.as_deref(), || store.vocabulary())?;
    let outcomes = run_batch(&load.records, &store, &vocab);
    let mut report = score(&outcomes, &load.records)?;
    report.config = Some(cfg);
    if let Some(dir) = &a.traces_dir {
        fs::create_dir_all(dir)?;
        for o in &outcomes {
            write(&dir.join(format!("{}.json", o.id)), &pretty(o))?;
        }
    }
    let mut text = report.table();
    for issue in &load.issues {
        text.push_str(&format!("skipped line {}: {}\n", issue.line, issue.message));
    }
    match &a.out {
        Some(p) => write(p, &pretty(&report))?,
        None => text = pretty(&report),
    }
    Ok(text)
}

pub fn cmd_gen_prompt(a: &GenPromptArgs) -> CliResult<String> {
    let map = load_map(&a.map)?;
    let vocab = load_vocab(a.vocab.as_deref(), || Vocabulary::new(map.categories()))?;
    let cats = extract_categories(&a.question, &vocab);
    let bundle = gen_prompt(&a.question, &extract_query_map(&map, &cats), a.task);
    if let Some(p) = &a.out {
        write(p, &pretty(&bundle))?;
    }
    Ok(bundle.render() + "\n")
}

pub fn cmd_gen_fixtures(a: &GenFixturesArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let suite = gt_suite(a.scenes, cfg.seed, &cfg)?;
    suite.store.save_dir(a.out.join("maps"))?;
    for ann in &suite.annotations {
        write(&a.out.join("annotations").join(format!("{}.json", ann.scene_id)), &pretty(ann))?;
    }
    write(&a.out.join("qa.jsonl"), &cogmap::eval::write_qa(&suite.records))?;
    write(&a.out.join("vocab.json"), &pretty(&suite.vocabulary()))?;
    for k in 0..a.raycast {
        let s = raycast_scene(cfg.seed.wrapping_add(k as u64), &RaycastParams::default())?;
        let dir = a.out.join("raycast");
        write(&dir.join(format!("{}.frames.json", s.scene_id)), &serde_json::to_string(&s.frames).expect("frames serialize"))?;
        write(&dir.join(format!("{}.detections.json", s.scene_id)), &pretty(&s.detections))?;
    }
    Ok(format!("{} scenes, {} questions, {} ray-cast scenes\n", suite.annotations.len(), suite.records.len(), a.raycast))
}

pub fn cmd_ground(a: &GroundArgs) -> CliResult<String> {
    let vocab = load_vocab(Some(&a.vocab), Vocabulary::default)?;
    let results: Vec<GroundingResult> = match (&a.question, &a.qa) {
        (Some(q), _) => vec![GroundingResult::new("query", "", q, &vocab)],
        (None, Some(p)) => load_qa(p)?.records.iter().map(|r| GroundingResult::new(&r.id, &r.scene_id, &r.question, &vocab)).collect(),
        (None, None) => return Err(CliError::Input(cogmap::Error::InvalidInput("pass --question or --qa".into()))),
    };
    let text: String = results.iter().map(|r| serde_json::to_string(r).expect("results serialize") + "\n").collect();
    emit(a.out.as_deref(), text)
}
