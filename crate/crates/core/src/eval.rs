//! Question datasets, batch reasoning, scoring and prompt assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cogcot::{
    normalize_option, option_letter, reason_absolute_distance, reason_appearance_order, reason_object_count, reason_object_size,
    reason_relative_direction, reason_relative_distance, reason_room_size, render_trace, task_instruction, Answer, OccupancyGrid,
    ReasoningTrace, TaskKind,
};
use crate::cogmap::{decode_map, encode_map, extract_query_map, MetricCogMap, QueryCogMap};
use crate::config::RunConfig;
use crate::covis::AppearanceRecord;
use crate::error::{Error, Result};
use crate::grounding::{extract_categories, normalize_term, Vocabulary};

/// One benchmark question.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaRecord {
    pub id: String,
    #[serde(alias = "scene")]
    pub scene_id: String,
    pub task: TaskKind,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub ground_truth: Answer,
    /// Categories in role order, bypassing grounding.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl QaRecord {
    pub fn validate(&self) -> Result<()> {
        if self.task.is_multiple_choice() {
            if self.options.len() != 4 {
                return Err(Error::invalid(format!("{} questions carry 4 options, got {}", self.task, self.options.len())));
            }
        } else if self.ground_truth.as_number().is_none() {
            return Err(Error::invalid(format!("{} questions need a numeric ground truth", self.task)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QaLoad {
    pub records: Vec<QaRecord>,
    pub issues: Vec<LineIssue>,
}

/// Parses line-delimited records. Blank lines are skipped; bad lines are
/// reported by 1-based line number and the rest are kept.
pub fn parse_qa(text: &str) -> Result<QaLoad> {
    let mut out = QaLoad::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let parsed: std::result::Result<QaRecord, _> = serde_path_to_error::deserialize(de);
        match parsed.map_err(Error::from).and_then(|r| r.validate().map(|_| r)) {
            Ok(r) => out.records.push(r),
            Err(e) => out.issues.push(LineIssue { line: i + 1, message: e.to_string() }),
        }
    }
    if out.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn load_qa(path: impl AsRef<Path>) -> Result<QaLoad> {
    parse_qa(&fs::read_to_string(path)?)
}

pub fn write_qa(records: &[QaRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

/// Everything a batch needs per scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneStore {
    pub maps: BTreeMap<String, MetricCogMap>,
    pub occupancy: BTreeMap<String, OccupancyGrid>,
    pub appearance: BTreeMap<String, Vec<AppearanceRecord>>,
}

const MAP_SUFFIX: &str = ".map.json";
const OCCUPANCY_SUFFIX: &str = ".occupancy.json";
const APPEARANCE_SUFFIX: &str = ".appearance.json";

impl SceneStore {
    /// Reads `<scene>.map.json`, `<scene>.occupancy.json` and
    /// `<scene>.appearance.json` files from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut store = SceneStore::default();
        let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let name = e.file_name().to_string_lossy().into_owned();
            let path = e.path();
            let parse_err = |err: serde_json::Error| Error::Parse { path: path.display().to_string(), message: err.to_string() };
            if let Some(scene) = name.strip_suffix(MAP_SUFFIX) {
                let map: MetricCogMap = decode_map(&fs::read_to_string(&path)?).map_err(|err| match err {
                    Error::Parse { message, .. } => Error::Parse { path: path.display().to_string(), message },
                    other => Error::Parse { path: path.display().to_string(), message: other.to_string() },
                })?;
                store.maps.insert(scene.to_string(), map);
            } else if let Some(scene) = name.strip_suffix(OCCUPANCY_SUFFIX) {
                let grid: OccupancyGrid = serde_json::from_str(&fs::read_to_string(&path)?).map_err(parse_err)?;
                grid.validate()?;
                store.occupancy.insert(scene.to_string(), grid);
            } else if let Some(scene) = name.strip_suffix(APPEARANCE_SUFFIX) {
                let recs: Vec<AppearanceRecord> = serde_json::from_str(&fs::read_to_string(&path)?).map_err(parse_err)?;
                store.appearance.insert(scene.to_string(), recs);
            }
        }
        Ok(store)
    }

    /// Writes every scene in the layout [`SceneStore::load_dir`] reads.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (scene, map) in &self.maps {
            fs::write(dir.join(format!("{scene}{MAP_SUFFIX}")), encode_map(map))?;
        }
        for (scene, grid) in &self.occupancy {
            fs::write(dir.join(format!("{scene}{OCCUPANCY_SUFFIX}")), to_pretty(grid))?;
        }
        for (scene, recs) in &self.appearance {
            fs::write(dir.join(format!("{scene}{APPEARANCE_SUFFIX}")), to_pretty(recs))?;
        }
        Ok(())
    }

    /// Every category named in any stored map.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut cats: Vec<String> = self.maps.values().flat_map(|m| m.categories().map(str::to_string)).collect();
        cats.extend(self.appearance.values().flatten().map(|r| r.category.clone()));
        cats.sort();
        cats.dedup();
        Vocabulary::new(cats)
    }
}

pub(crate) fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for Failure {
    fn from(e: &Error) -> Self {
        Failure { kind: e.kind().to_string(), message: e.to_string() }
    }
}

/// Result for one record, as written to trace dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub scene_id: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<ReasoningTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
}

impl Outcome {
    pub fn answer(&self) -> Option<&Answer> {
        self.trace.as_ref().map(|t| &t.answer)
    }
}

fn option_categories(options: &[String], vocab: &Vocabulary) -> Vec<String> {
    options.iter().map(|o| normalize_term(&normalize_option(o), vocab)).collect()
}

fn take<'a>(found: &'a [String], n: usize, roles: &str) -> Result<&'a [String]> {
    if found.len() < n {
        return Err(Error::GroundingGap { missing: vec![format!("{roles} (grounded {} of {n})", found.len())] });
    }
    Ok(&found[..n])
}

/// Grounds, extracts the query map and runs the task's procedure.
pub fn answer_question(rec: &QaRecord, store: &SceneStore, vocab: &Vocabulary) -> Result<ReasoningTrace> {
    let map = store.maps.get(&rec.scene_id).ok_or_else(|| Error::MissingScene(format!("no map for scene {}", rec.scene_id)))?;
    let found = match &rec.categories {
        Some(c) => c.iter().map(|s| s.trim().to_lowercase()).collect(),
        None => extract_categories(&rec.question, vocab),
    };
    match rec.task {
        TaskKind::RelativeDirection => {
            let roles = take(&found, 3, "origin, facing, target")?;
            let q = extract_query_map(map, roles);
            let mut tr = reason_relative_direction(&q, &roles[0], &roles[1], &roles[2])?;
            if !rec.options.is_empty() {
                tr.select_option(&rec.options)?;
            }
            Ok(tr)
        }
        TaskKind::RelativeDistance => {
            let candidates = if rec.categories.is_some() { found[1.min(found.len())..].to_vec() } else { option_categories(&rec.options, vocab) };
            let target = if rec.categories.is_some() {
                found.first().cloned()
            } else {
                found.iter().find(|c| !candidates.contains(c)).cloned()
            };
            let target = target.ok_or_else(|| Error::GroundingGap { missing: vec!["target (grounded 0 of 1)".into()] })?;
            let mut wanted = vec![target.clone()];
            wanted.extend(candidates.iter().cloned());
            let q = extract_query_map(map, &wanted);
            let mut tr = reason_relative_distance(&q, &target, &candidates)?;
            if !rec.options.is_empty() {
                tr.select_option(&rec.options)?;
            }
            Ok(tr)
        }
        TaskKind::AbsoluteDistance => {
            let pair = take(&found, 2, "object pair")?;
            reason_absolute_distance(&extract_query_map(map, pair), &pair[0], &pair[1])
        }
        TaskKind::ObjectCount => {
            let cat = take(&found, 1, "counted category")?;
            Ok(reason_object_count(map, &cat[0]))
        }
        TaskKind::ObjectSize => {
            let cat = take(&found, 1, "measured object")?;
            reason_object_size(&extract_query_map(map, cat), &cat[0])
        }
        TaskKind::RoomSize => {
            let grid = store.occupancy.get(&rec.scene_id).ok_or_else(|| Error::MissingScene(format!("no occupancy grid for scene {}", rec.scene_id)))?;
            reason_room_size(grid)
        }
        TaskKind::AppearanceOrder => {
            let records = store.appearance.get(&rec.scene_id).ok_or_else(|| Error::MissingScene(format!("no appearance records for scene {}", rec.scene_id)))?;
            let mut cats = found;
            if rec.categories.is_none() {
                for o in &rec.options {
                    for c in extract_categories(&normalize_option(o), vocab) {
                        if !cats.contains(&c) {
                            cats.push(c);
                        }
                    }
                }
            }
            reason_appearance_order(records, &cats, &rec.options)
        }
    }
}

/// Answers every record in parallel; output order follows input order and
/// failures are kept as data.
pub fn run_batch(records: &[QaRecord], store: &SceneStore, vocab: &Vocabulary) -> Vec<Outcome> {
    records
        .par_iter()
        .map(|rec| {
            let (trace, rendered, failure) = match answer_question(rec, store, vocab) {
                Ok(t) => {
                    let r = render_trace(&t);
                    (Some(t), Some(r), None)
                }
                Err(e) => (None, None, Some(Failure::from(&e))),
            };
            Outcome { id: rec.id.clone(), scene_id: rec.scene_id.clone(), task: rec.task, trace, rendered, failure }
        })
        .collect()
}

pub const MRA_EPSILON: f64 = 1e-6;

/// Mean relative accuracy over thresholds `0.50, 0.55, …, 0.95`.
pub fn mean_relative_accuracy(pred: f64, gt: f64) -> f64 {
    if !pred.is_finite() {
        return 0.0;
    }
    let rel = (pred - gt).abs() / gt.abs().max(MRA_EPSILON);
    let hits = (0..10).filter(|k| rel <= 1.0 - (0.5 + 0.05 * *k as f64)).count();
    hits as f64 / 10.0
}

/// Letter of the option an answer designates, from a bare letter or the
/// option text.
fn resolve_letter(answer: &str, options: &[String]) -> Option<String> {
    let a = answer.trim();
    if a.len() == 1 && a.as_bytes()[0].is_ascii_alphabetic() {
        let idx = (a.to_ascii_uppercase().as_bytes()[0] - b'A') as usize;
        return (idx < options.len().max(1)).then(|| option_letter(idx));
    }
    let want = normalize_option(a);
    options.iter().position(|o| normalize_option(o) == want).map(option_letter)
}

pub fn score_one(rec: &QaRecord, answer: Option<&Answer>) -> f64 {
    let Some(answer) = answer else { return 0.0 };
    if rec.task.is_multiple_choice() {
        let got = resolve_letter(&answer.to_string(), &rec.options);
        let want = resolve_letter(&rec.ground_truth.to_string(), &rec.options);
        f64::from(u8::from(got.is_some() && got == want))
    } else {
        match (answer.as_number(), rec.ground_truth.as_number()) {
            (Some(p), Some(g)) => mean_relative_accuracy(p, g),
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub count: usize,
    pub accuracy: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub total: usize,
    pub answered: usize,
    pub per_task: BTreeMap<TaskKind, TaskScore>,
    /// Mean of per-task accuracies over tasks with questions.
    pub overall: f64,
    /// Mean over questions.
    pub overall_weighted: f64,
    pub failure_kinds: BTreeMap<String, usize>,
    pub failures: Vec<FailureEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
}

pub fn score(outcomes: &[Outcome], records: &[QaRecord]) -> Result<ScoreReport> {
    if outcomes.len() != records.len() {
        return Err(Error::invalid(format!("{} outcomes for {} records", outcomes.len(), records.len())));
    }
    let mut sums: BTreeMap<TaskKind, (usize, f64, usize)> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut failure_kinds = BTreeMap::new();
    let mut total_score = 0.0;
    for (o, r) in outcomes.iter().zip(records) {
        if o.id != r.id {
            return Err(Error::invalid(format!("outcome {} paired with record {}", o.id, r.id)));
        }
        let s = score_one(r, o.answer());
        total_score += s;
        let e = sums.entry(r.task).or_insert((0, 0.0, 0));
        e.0 += 1;
        e.1 += s;
        if let Some(f) = &o.failure {
            e.2 += 1;
            *failure_kinds.entry(f.kind.clone()).or_insert(0) += 1;
            failures.push(FailureEntry { id: o.id.clone(), kind: f.kind.clone(), message: f.message.clone() });
        }
    }
    failures.sort_by(|a, b| a.id.cmp(&b.id).then(a.kind.cmp(&b.kind)));
    let per_task: BTreeMap<TaskKind, TaskScore> =
        sums.into_iter().map(|(t, (count, sum, failures))| (t, TaskScore { count, accuracy: sum / count as f64, failures })).collect();
    let overall = if per_task.is_empty() { 0.0 } else { per_task.values().map(|t| t.accuracy).sum::<f64>() / per_task.len() as f64 };
    let n = records.len();
    Ok(ScoreReport {
        total: n,
        answered: n - failures.len(),
        per_task,
        overall,
        overall_weighted: if n == 0 { 0.0 } else { total_score / n as f64 },
        failure_kinds,
        failures,
        config: None,
    })
}

impl ScoreReport {
    /// Plain-text table of per-task results.
    pub fn table(&self) -> String {
        let mut s = format!("{:<20} {:>6} {:>9} {:>8}\n", "task", "count", "accuracy", "failed");
        for (t, v) in &self.per_task {
            s.push_str(&format!("{:<20} {:>6} {:>9.4} {:>8}\n", t.name(), v.count, v.accuracy, v.failures));
        }
        s.push_str(&format!("{:<20} {:>6} {:>9.4}\n", "overall", self.total, self.overall));
        s.push_str(&format!("{:<20} {:>6} {:>9.4}\n", "overall (weighted)", self.total, self.overall_weighted));
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: TaskKind,
    pub question: String,
    /// Compact JSON of the query map.
    pub cogmap: String,
    pub instruction: String,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.question, self.cogmap, self.instruction)
    }

    pub fn decode_map(&self) -> Result<QueryCogMap> {
        decode_map(&self.cogmap)
    }
}

pub fn gen_prompt(question: &str, qmap: &QueryCogMap, task: TaskKind) -> PromptBundle {
    PromptBundle { task, question: question.to_string(), cogmap: qmap.to_compact_json(), instruction: task_instruction(task).to_string() }
}
