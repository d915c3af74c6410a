//! Step-by-step geometric reasoning over cognitive maps.
//!
//! Each task has a deterministic procedure that records every intermediate
//! quantity as a [`TraceStep`] and ends in a single answer. Traces render to
//! `<think>…</think> The final answer should be: <answer>…</answer>`; numbers
//! in step text use two decimals (grid quantities are integers) while the
//! structured answer keeps six.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cogmap::{GridBox, MetricCogMap, QueryCogMap};
use crate::covis::AppearanceRecord;
use crate::error::{Error, Result};
use crate::geometry::{aabb_sq_dist_2d, axis_gap, clamped_gap_3d, cross2, dot2, round6, Point3, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[serde(alias = "object_counting")]
    ObjectCount,
    #[serde(alias = "object_abs_distance")]
    AbsoluteDistance,
    #[serde(alias = "object_size_estimation")]
    ObjectSize,
    #[serde(alias = "room_size_estimation")]
    RoomSize,
    #[serde(alias = "object_rel_distance")]
    RelativeDistance,
    #[serde(alias = "object_rel_direction", alias = "object_rel_direction_hard")]
    RelativeDirection,
    #[serde(alias = "obj_appearance_order")]
    AppearanceOrder,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::ObjectCount,
        TaskKind::AbsoluteDistance,
        TaskKind::ObjectSize,
        TaskKind::RoomSize,
        TaskKind::RelativeDistance,
        TaskKind::RelativeDirection,
        TaskKind::AppearanceOrder,
    ];

    pub fn is_multiple_choice(self) -> bool {
        matches!(self, TaskKind::RelativeDistance | TaskKind::RelativeDirection | TaskKind::AppearanceOrder)
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ObjectCount => "object_count",
            TaskKind::AbsoluteDistance => "absolute_distance",
            TaskKind::ObjectSize => "object_size",
            TaskKind::RoomSize => "room_size",
            TaskKind::RelativeDistance => "relative_distance",
            TaskKind::RelativeDirection => "relative_direction",
            TaskKind::AppearanceOrder => "appearance_order",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
            .map_err(|_| Error::invalid(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Number(f64),
    Text(String),
}

impl Answer {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Answer::Number(v) => Some(*v),
            Answer::Text(s) => s.trim().parse().ok().filter(|v: &f64| v.is_finite()),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Number(v) => write!(f, "{v}"),
            Answer::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub label: String,
    pub expression: String,
    /// Every number shown in `expression`.
    pub values: Vec<f64>,
}

impl TraceStep {
    pub fn new(label: impl Into<String>, expression: impl Into<String>, values: Vec<f64>) -> Self {
        TraceStep { label: label.into(), expression: expression.into(), values }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub task: TaskKind,
    pub steps: Vec<TraceStep>,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ReasoningTrace {
    fn new(task: TaskKind) -> Self {
        ReasoningTrace { task, steps: Vec::new(), answer: Answer::Text(String::new()), notes: Vec::new() }
    }

    fn step(&mut self, label: &str, expression: String, values: Vec<f64>) {
        self.steps.push(TraceStep::new(label, expression, values));
    }

    /// Replaces a textual answer with the letter of the option that states it.
    pub fn select_option(&mut self, options: &[String]) -> Result<()> {
        let derived = self.answer.to_string();
        let want = normalize_option(&derived);
        let hits: Vec<usize> = options.iter().enumerate().filter(|(_, o)| normalize_option(o) == want).map(|(i, _)| i).collect();
        let Some(&first) = hits.first() else {
            return Err(Error::NoMatch { derived: vec![derived] });
        };
        let letter = option_letter(first);
        self.step("Option match", format!("{derived} → option {letter}"), vec![]);
        self.answer = Answer::Text(letter);
        Ok(())
    }
}

/// `A`, `B`, … for option indices.
pub fn option_letter(index: usize) -> String {
    char::from(b'A' + (index % 26) as u8).to_string()
}

/// Option text without its `A.` / `B)` prefix, lowercased and squashed.
pub fn normalize_option(text: &str) -> String {
    let t = text.trim();
    let bytes = t.as_bytes();
    let body = if bytes.len() >= 2 && bytes[0].is_ascii_alphabetic() && matches!(bytes[1], b'.' | b')' | b':') {
        &t[2..]
    } else {
        t
    };
    body.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn f2(x: f64) -> String {
    let s = format!("{x:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn v3(a: [f64; 3]) -> String {
    format!("[{}, {}, {}]", f2(a[0]), f2(a[1]), f2(a[2]))
}

fn gi(x: f64) -> String {
    format!("{}", x as i64)
}

/// Integer factor, parenthesized when negative.
fn gf(x: f64) -> String {
    if x < 0.0 {
        format!("({})", gi(x))
    } else {
        gi(x)
    }
}

fn g2(v: Vec2) -> String {
    format!("[{}, {}]", gi(v.x), gi(v.y))
}

fn require<'a>(qmap: &QueryCogMap, cats: impl IntoIterator<Item = &'a str>) -> Result<()> {
    let mut missing: Vec<String> = cats.into_iter().filter(|c| qmap.len_of(c) == 0).map(str::to_string).collect();
    missing.dedup();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::GroundingGap { missing })
    }
}

fn note_first_instance(trace: &mut ReasoningTrace, qmap: &QueryCogMap, cat: &str) {
    let n = qmap.len_of(cat);
    if n > 1 {
        trace.notes.push(format!("{cat} has {n} instances; using the first"));
    }
}

/// Front/back from `f · t`, left/right from `f × t`, on grid positions.
/// Zero products resolve to front and left respectively, with a note.
pub fn reason_relative_direction(qmap: &QueryCogMap, origin: &str, facing: &str, target: &str) -> Result<ReasoningTrace> {
    require(qmap, [origin, facing, target])?;
    let pos = |c: &str| {
        let g = qmap.cognitive_map[c][0];
        Vec2::new(g.gx as f64, g.gy as f64)
    };
    let (o, fc, tg) = (pos(origin), pos(facing), pos(target));
    let mut tr = ReasoningTrace::new(TaskKind::RelativeDirection);
    for c in [origin, facing, target] {
        note_first_instance(&mut tr, qmap, c);
    }
    tr.step(
        "Positions",
        format!("Origin ({origin}) = {}, Facing ({facing}) = {}, Target ({target}) = {}", g2(o), g2(fc), g2(tg)),
        vec![o.x, o.y, fc.x, fc.y, tg.x, tg.y],
    );
    let f = fc - o;
    let t = tg - o;
    tr.step("Facing vector", format!("f = Facing - Origin = {} - {} = {}", g2(fc), g2(o), g2(f)), vec![fc.x, fc.y, o.x, o.y, f.x, f.y]);
    tr.step("Target vector", format!("t = Target - Origin = {} - {} = {}", g2(tg), g2(o), g2(t)), vec![tg.x, tg.y, o.x, o.y, t.x, t.y]);
    if f.is_zero() {
        return Err(Error::degenerate(format!("{origin} and {facing} share a grid cell; facing vector is zero")));
    }
    if t.is_zero() {
        return Err(Error::degenerate(format!("{origin} and {target} share a grid cell; target vector is zero")));
    }
    let dot = dot2(f, t);
    let cross = cross2(f, t);
    let front = dot >= 0.0;
    let left = cross >= 0.0;
    let rel = |v: f64| if v > 0.0 { "> 0" } else if v < 0.0 { "< 0" } else { "= 0" };
    tr.step(
        "Dot product",
        format!("Dot(f,t) = {} × {} + {} × {} = {} {} → {}", gf(f.x), gf(t.x), gf(f.y), gf(t.y), gi(dot), rel(dot), if front { "front" } else { "back" }),
        vec![f.x, t.x, f.y, t.y, dot, 0.0],
    );
    tr.step(
        "Cross product",
        format!("Cross(f,t) = {} × {} - {} × {} = {} {} → {}", gf(f.x), gf(t.y), gf(f.y), gf(t.x), gi(cross), rel(cross), if left { "left" } else { "right" }),
        vec![f.x, t.y, f.y, t.x, cross, 0.0],
    );
    if dot == 0.0 {
        tr.notes.push("dot product is 0; target is level with the origin, reported as front".into());
    }
    if cross == 0.0 {
        tr.notes.push("cross product is 0; target is on the facing line, reported as left".into());
    }
    let answer = format!("{}-{}", if front { "front" } else { "back" }, if left { "left" } else { "right" });
    tr.step("Conclusion", format!("Target is to the {answer}"), vec![]);
    tr.answer = Answer::Text(answer);
    Ok(tr)
}

fn gap_expr(axis: char, cand: (f64, f64), tgt: (f64, f64)) -> (String, Vec<f64>) {
    let gap = axis_gap(cand.0, cand.1, tgt.0, tgt.1).unwrap_or(0.0);
    if gap == 0.0 {
        (format!("d{axis} = 0 ({axis}-axis overlap)"), vec![0.0])
    } else if cand.0 > tgt.1 {
        (format!("d{axis} = {} - {} = {}", gi(cand.0), gi(tgt.1), gi(gap)), vec![cand.0, tgt.1, gap])
    } else {
        (format!("d{axis} = {} - {} = {}", gi(tgt.0), gi(cand.1), gi(gap)), vec![tgt.0, cand.1, gap])
    }
}

fn box_str(b: &GridBox) -> String {
    format!("[[{}, {}], [{}, {}]]", b.gx_min, b.gx_max, b.gy_min, b.gy_max)
}

/// Closest candidate category to the target by squared AABB distance on
/// grid boxes, minimized over all instance pairs. Ties go to the
/// lexicographically first category.
pub fn reason_relative_distance(qmap: &QueryCogMap, target: &str, candidates: &[impl AsRef<str>]) -> Result<ReasoningTrace> {
    let cands: Vec<&str> = candidates.iter().map(AsRef::as_ref).collect();
    require(qmap, std::iter::once(target).chain(cands.iter().copied()))?;
    if cands.len() < 2 {
        return Err(Error::invalid("relative distance needs at least two candidates"));
    }
    let mut tr = ReasoningTrace::new(TaskKind::RelativeDistance);
    let tboxes = &qmap.cognitive_box_map[target];
    let tb_text: Vec<String> = tboxes.iter().map(box_str).collect();
    let tb_vals: Vec<f64> = tboxes.iter().flat_map(|b| [b.gx_min, b.gx_max, b.gy_min, b.gy_max].map(f64::from)).collect();
    tr.step("Setup", format!("Target = {target} {}, Candidates = [{}]", tb_text.join(", "), cands.join(", ")), tb_vals);

    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for &cat in &cands {
        for (ci, cb) in qmap.cognitive_box_map[cat].iter().enumerate() {
            for (ti, tb) in tboxes.iter().enumerate() {
                let d2 = aabb_sq_dist_2d(&cb.to_aabb2(), &tb.to_aabb2())?;
                let (ex, mut vx) = gap_expr('x', (cb.gx_min as f64, cb.gx_max as f64), (tb.gx_min as f64, tb.gx_max as f64));
                let (ey, vy) = gap_expr('y', (cb.gy_min as f64, cb.gy_max as f64), (tb.gy_min as f64, tb.gy_max as f64));
                let dx = *vx.last().unwrap();
                let dy = *vy.last().unwrap();
                vx.extend(vy);
                vx.extend([dx, dy, d2]);
                tr.step(
                    &format!("Distance({cat}[{ci}], {target}[{ti}])"),
                    format!("{ex}, {ey}, AABB distance = {}^2 + {}^2 = {d2:.1}", gi(dx), gi(dy)),
                    vx,
                );
                let e = best.entry(cat).or_insert(f64::INFINITY);
                *e = e.min(d2);
            }
        }
    }
    let listing: Vec<String> = cands.iter().map(|c| format!("{c} = {:.1}", best[c])).collect();
    tr.step("Minimum per category", listing.join(", "), cands.iter().map(|c| best[c]).collect());
    let min = best.values().copied().fold(f64::INFINITY, f64::min);
    let mut tied: Vec<&str> = cands.iter().copied().filter(|c| best[c] == min).collect();
    tied.sort();
    tied.dedup();
    if tied.len() > 1 {
        tr.notes.push(format!("tie at {min:.1} between {}; choosing {} alphabetically", tied.join(", "), tied[0]));
    }
    tr.step("Compare all distances", format!("Closest object = {}", tied[0]), vec![]);
    tr.answer = Answer::Text(tied[0].to_string());
    Ok(tr)
}

/// Rough object-to-object distance: the norm of
/// `max(|c1 - c2| - (s1 + s2), 0)` with `s` the half sizes.
pub fn reason_absolute_distance(qmap: &QueryCogMap, first: &str, second: &str) -> Result<ReasoningTrace> {
    require(qmap, [first, second])?;
    let mut tr = ReasoningTrace::new(TaskKind::AbsoluteDistance);
    note_first_instance(&mut tr, qmap, first);
    note_first_instance(&mut tr, qmap, second);
    let get = |c: &str| (qmap.box_centroid[c][0], qmap.box_size[c][0]);
    let (c1, size1) = get(first);
    let (c2, size2) = get(second);
    let half = |s: [f64; 3]| s.map(|v| v / 2.0);
    let (s1, s2) = (half(size1), half(size2));
    for (k, (name, c, size, s)) in [(first, c1, size1, s1), (second, c2, size2, s2)].into_iter().enumerate() {
        let n = k + 1;
        tr.step(
            &format!("Object{n}"),
            format!("{name}: Centroid c{n} = {}, Size = {}, Half size s{n} = {}", v3(c.to_array()), v3(size), v3(s)),
            [c.to_array(), size, s].concat(),
        );
    }
    let delta = (c1 - c2).abs().to_array();
    tr.step(
        "Centroid difference",
        format!("Centroid difference = |{} - {}| = {}", v3(c1.to_array()), v3(c2.to_array()), v3(delta)),
        [c1.to_array(), c2.to_array(), delta].concat(),
    );
    let ssum = [s1[0] + s2[0], s1[1] + s2[1], s1[2] + s2[2]];
    tr.step("Half size sum", format!("s = s1 + s2 = {} + {} = {}", v3(s1), v3(s2), v3(ssum)), [s1, s2, ssum].concat());
    let gap = clamped_gap_3d(c1, size1, c2, size2)?;
    tr.step("Per-axis gap", format!("gap = max(Δ - s, 0) = {}", v3(gap)), gap.to_vec());
    let dist = Point3::from(gap).norm();
    tr.step(
        "Rough distance",
        format!("distance = sqrt({}^2 + {}^2 + {}^2) = {} m", f2(gap[0]), f2(gap[1]), f2(gap[2]), f2(dist)),
        vec![gap[0], gap[1], gap[2], dist],
    );
    tr.answer = Answer::Number(round6(dist));
    Ok(tr)
}

/// Floor occupancy at a fixed metric pitch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub cell_size: f64,
    /// World XY of the lower corner of cell (0, 0).
    pub origin: [f64; 2],
    /// `flags[iy][ix]`.
    pub flags: Vec<Vec<bool>>,
    pub valid_count: usize,
}

impl OccupancyGrid {
    pub fn from_flags(cell_size: f64, origin: [f64; 2], flags: Vec<Vec<bool>>) -> Self {
        let valid_count = flags.iter().flatten().filter(|f| **f).count();
        OccupancyGrid { cell_size, origin, flags, valid_count }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.flags.first().map_or(0, Vec::len), self.flags.len())
    }

    pub fn cell_area(&self) -> f64 {
        round6(self.cell_size * self.cell_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) {
            return Err(Error::invalid("occupancy cell_size must be positive"));
        }
        let (w, _) = self.dims();
        if self.flags.iter().any(|r| r.len() != w) {
            return Err(Error::invalid("occupancy rows differ in length"));
        }
        let n = self.flags.iter().flatten().filter(|f| **f).count();
        if n != self.valid_count {
            return Err(Error::invalid(format!("valid_count {} but {} flags set", self.valid_count, n)));
        }
        Ok(())
    }
}

/// Bins points into half-open cells `[k·cell, (k+1)·cell)` anchored at the
/// points' minimum XY corner; a cell is valid when it holds at least
/// `min_points` points.
pub fn build_occupancy_grid(points: &[Point3], cell_size: f64, min_points: usize) -> Result<OccupancyGrid> {
    if points.is_empty() {
        return Err(Error::degenerate("occupancy grid needs at least one point"));
    }
    if !(cell_size > 0.0) {
        return Err(Error::invalid("cell size must be positive"));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("non-finite point"));
    }
    let x0 = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let cell = |v: f64, lo: f64| ((v - lo) / cell_size).floor() as usize;
    let nx = points.iter().map(|p| cell(p.x, x0)).max().unwrap() + 1;
    let ny = points.iter().map(|p| cell(p.y, y0)).max().unwrap() + 1;
    let mut counts = vec![vec![0usize; nx]; ny];
    for p in points {
        counts[cell(p.y, y0)][cell(p.x, x0)] += 1;
    }
    let flags = counts.into_iter().map(|r| r.into_iter().map(|c| c >= min_points.max(1)).collect()).collect();
    Ok(OccupancyGrid::from_flags(cell_size, [x0, y0], flags))
}

pub fn reason_room_size(grid: &OccupancyGrid) -> Result<ReasoningTrace> {
    grid.validate()?;
    let mut tr = ReasoningTrace::new(TaskKind::RoomSize);
    let (w, h) = grid.dims();
    let area = grid.cell_area();
    tr.step(
        "Grid",
        format!("{w} × {h} cells, cell area = {} × {} = {} m²", f2(grid.cell_size), f2(grid.cell_size), f2(area)),
        vec![w as f64, h as f64, grid.cell_size, area],
    );
    let n = grid.valid_count as f64;
    let total = round6(n * area);
    tr.step(
        "Valid cells",
        format!("Total cells = {}, total area = {} × {} = {} m²", grid.valid_count, grid.valid_count, f2(area), f2(total)),
        vec![n, area, total],
    );
    tr.answer = Answer::Number(total);
    Ok(tr)
}

pub fn reason_object_count(map: &MetricCogMap, category: &str) -> ReasoningTrace {
    let mut tr = ReasoningTrace::new(TaskKind::ObjectCount);
    let inst = map.instances(category);
    let ids: Vec<f64> = inst.iter().map(|o| o.instance_id as f64).collect();
    let listing = if inst.is_empty() {
        "none".to_string()
    } else {
        format!("ids [{}]", inst.iter().map(|o| o.instance_id.to_string()).collect::<Vec<_>>().join(", "))
    };
    tr.step("Instances", format!("{category} in scene map: {listing}"), ids);
    tr.step("Count", format!("Count = {}", inst.len()), vec![inst.len() as f64]);
    tr.answer = Answer::Number(inst.len() as f64);
    tr
}

/// Longest side of the first instance's box, in centimeters.
pub fn reason_object_size(qmap: &QueryCogMap, category: &str) -> Result<ReasoningTrace> {
    require(qmap, [category])?;
    let mut tr = ReasoningTrace::new(TaskKind::ObjectSize);
    note_first_instance(&mut tr, qmap, category);
    let s = qmap.box_size[category][0];
    tr.step("Box size", format!("{category}: Size = {} m", v3(s)), s.to_vec());
    let longest = s[0].max(s[1]).max(s[2]);
    let cm = round6(longest * 100.0);
    tr.step(
        "Longest side",
        format!("max({}, {}, {}) = {} m = {} cm", f2(s[0]), f2(s[1]), f2(s[2]), f2(longest), f2(cm)),
        vec![s[0], s[1], s[2], longest, cm],
    );
    tr.answer = Answer::Number(cm);
    Ok(tr)
}

/// Orders categories by the earliest frame any of their instances appears
/// in, then matches the order against the offered options. Categories never
/// seen are noted and left out of the comparison.
pub fn reason_appearance_order(records: &[AppearanceRecord], queried: &[impl AsRef<str>], options: &[String]) -> Result<ReasoningTrace> {
    let mut cats: Vec<String> = Vec::new();
    for q in queried {
        let q = q.as_ref().trim().to_lowercase();
        if !cats.contains(&q) {
            cats.push(q);
        }
    }
    if cats.is_empty() {
        return Err(Error::invalid("appearance order needs at least one category"));
    }
    let mut tr = ReasoningTrace::new(TaskKind::AppearanceOrder);
    let first = |c: &str| records.iter().filter(|r| r.category == c).filter_map(|r| r.first_frame).min();
    let mut seen: Vec<(u32, String)> = Vec::new();
    let mut listing = Vec::new();
    let mut frames = Vec::new();
    let mut sorted_queried = cats.clone();
    sorted_queried.sort();
    for c in &sorted_queried {
        match first(c) {
            Some(f) => {
                listing.push(format!("{c}: frame {f}"));
                frames.push(f as f64);
                seen.push((f, c.clone()));
            }
            None => {
                listing.push(format!("{c} not detected"));
                tr.notes.push(format!("{c} not detected"));
            }
        }
    }
    tr.step("Frame indices", listing.join(", "), frames);
    seen.sort();
    for w in seen.windows(2) {
        if w[0].0 == w[1].0 {
            tr.notes.push(format!("{} and {} first appear in the same frame ({}); ordered alphabetically", w[0].1, w[1].1, w[0].0));
        }
    }
    let order: Vec<String> = seen.iter().map(|(_, c)| c.clone()).collect();
    let chain: Vec<String> = seen.iter().map(|(f, c)| format!("{c} ({f})")).collect();
    let chain_text = if chain.is_empty() { "no category detected".to_string() } else { chain.join(" < ") };
    tr.step("Sorted by frame index", chain_text, seen.iter().map(|(f, _)| *f as f64).collect());

    if options.is_empty() {
        tr.answer = Answer::Text(order.join(", "));
        return Ok(tr);
    }
    let hits: Vec<usize> = options
        .iter()
        .enumerate()
        .filter(|(_, o)| {
            let listed: Vec<String> = normalize_option(o).split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            let restricted: Vec<&String> = listed.iter().filter(|c| order.contains(c)).collect();
            restricted.len() == order.len() && restricted.iter().zip(&order).all(|(a, b)| *a == b)
        })
        .map(|(i, _)| i)
        .collect();
    let Some(&pick) = hits.first() else {
        return Err(Error::NoMatch { derived: order });
    };
    if hits.len() > 1 {
        let letters: Vec<String> = hits.iter().map(|&i| option_letter(i)).collect();
        tr.notes.push(format!("options {} all agree with the detected order; choosing {}", letters.join(", "), letters[0]));
    }
    let letter = option_letter(pick);
    tr.step("Match options", format!("Order {} → option {letter} ({})", order.join(", "), normalize_option(&options[pick])), vec![]);
    tr.answer = Answer::Text(letter);
    Ok(tr)
}

/// Instruction text injected after the question. The relative direction,
/// relative distance, absolute distance and room size templates are the
/// published ones; the other three follow the same layout.
pub fn task_instruction(task: TaskKind) -> &'static str {
    match task {
        TaskKind::RelativeDirection => "Task: Determine relative direction (front-left/front-right/back-left/back-right) using vector analysis based on cognitive map. Format: Origin = [x,y], Facing = [x,y], Target = [x,y] → f = Facing-Origin → t = Target-Origin → Dot(f,t) for front/back → Cross(f,t) for left/right. Output: Mathematical calculations with explicit coordinate subtraction, dot/cross product computation, and directional conclusion.",
        TaskKind::RelativeDistance => "Task: Compare distances between multiple candidates and a target to find the closest one based on cognitive map and cognitive box map. Format: Target = [x,y], Candidates = [obj1, obj2, ...] → Distance(obj1,target) = calculation → Distance(obj2,target) = calculation → Compare all distances → Closest object = result. Output: Show distance calculations for each candidate with explicit mathematical steps and final comparison.",
        TaskKind::AbsoluteDistance => "Task: Calculate absolute distance between two specific objects based on box centroid and box size. Format: Object1: Centroid c1 = [x,y,z], Size = [w,h,d], Half size s1 → Object2: Centroid c2, Size, Half size s2 → Centroid difference → Half size sum → Rough distance calculation. Output: Step-by-step box data extraction, centroid calculations, and rough distance approximation with explicit numerical values.",
        TaskKind::RoomSize => "Task: Estimate room area using the number of valid cells calculation. Format: Number valid cells → Multiply by each cell area (0.36 m²).  Answer with format like <answer>final_room_size</answer>. Output: Explicit calculations with multiplication, rough room size approximation.",
        TaskKind::ObjectCount => "Task: Count the instances of the queried category based on cognitive map. Format: Category = name → Instances = [[x,y], ...] → Count = number of instances. Output: List every instance position and the final count.",
        TaskKind::ObjectSize => "Task: Estimate the size of the queried object based on box size. Format: Object: Size = [w,h,d] → Longest side = max(w,h,d) → Convert meters to centimeters. Output: Box data extraction, the maximum selection, and the size in centimeters.",
        TaskKind::AppearanceOrder => "Task: Determine the first-appearance order of the queried objects from their first frame indices. Format: object: frame index → Sort ascending by frame index → Note objects not detected → Match the order against the options. Output: Frame indices, the sorted order, and the matching option.",
    }
}

/// Whether [`task_instruction`] returns a published template.
pub fn is_published_template(task: TaskKind) -> bool {
    matches!(task, TaskKind::RelativeDirection | TaskKind::RelativeDistance | TaskKind::AbsoluteDistance | TaskKind::RoomSize)
}

pub fn render_trace(trace: &ReasoningTrace) -> String {
    let mut body = String::new();
    for (i, s) in trace.steps.iter().enumerate() {
        body.push_str(&format!("{}. {}: {}\n", i + 1, s.label, s.expression));
    }
    for n in &trace.notes {
        body.push_str(&format!("Note: {n}\n"));
    }
    format!("<think>{body}</think> The final answer should be: <answer>{}</answer>", trace.answer)
}

/// Text between the last `<answer>` / `</answer>` pair.
pub fn extract_answer(text: &str) -> Option<&str> {
    let start = text.rfind("<answer>")? + "<answer>".len();
    let end = start + text[start..].find("</answer>")?;
    Some(&text[start..end])
}
