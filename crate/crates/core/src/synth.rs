//! Seeded synthetic scenes with known answers.
//!
//! [`gt_suite`] builds annotated rooms plus question sets whose ground truth
//! comes straight from the planted metric geometry. [`raycast_scene`]
//! renders box worlds into frames, point clouds and detections, with every
//! object detected from many views.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cogcot::{build_occupancy_grid, option_letter, Answer, TaskKind};
use crate::cogmap::{AnnotatedObject, RawBounds, SceneAnnotation};
use crate::config::RunConfig;
use crate::covis::{AppearanceRecord, Detection, FrameObservation, ObservedPoint, Region};
use crate::error::Result;
use crate::eval::{QaRecord, SceneStore};
use crate::geometry::{Aabb3, CameraPose, Intrinsics, Point3};
use crate::grounding::Vocabulary;

pub const CATEGORIES: [&str; 16] = [
    "chair", "sofa", "bed", "lamp", "tv", "desk", "shelf", "plant", "stool", "cabinet", "toilet", "sink", "piano", "fan", "refrigerator",
    "trash bin",
];

const OCC_CELL: f64 = 0.6;

#[derive(Clone, Debug, PartialEq)]
pub struct GtSuite {
    pub annotations: Vec<SceneAnnotation>,
    pub store: SceneStore,
    pub records: Vec<QaRecord>,
}

impl GtSuite {
    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::new(CATEGORIES)
    }
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

struct Room {
    x0: f64,
    y0: f64,
    nx: usize,
    ny: usize,
    /// Cells with `cx >= cut.0 && cy >= cut.1` are outside the room.
    cut: (usize, usize),
}

impl Room {
    fn inside_cell(&self, cx: usize, cy: usize) -> bool {
        !(cx >= self.cut.0 && cy >= self.cut.1)
    }

    fn area(&self) -> f64 {
        let cut = (self.nx - self.cut.0.min(self.nx)) * (self.ny - self.cut.1.min(self.ny));
        (self.nx * self.ny - cut) as f64 * OCC_CELL * OCC_CELL
    }

    fn fits(&self, min: Point3, max: Point3) -> bool {
        let (cx, cy) = (self.x0 + self.cut.0 as f64 * OCC_CELL, self.y0 + self.cut.1 as f64 * OCC_CELL);
        let inside = min.x >= self.x0 + 0.1 && min.y >= self.y0 + 0.1 && max.x <= self.x0 + self.nx as f64 * OCC_CELL - 0.1 && max.y <= self.y0 + self.ny as f64 * OCC_CELL - 0.1;
        inside && !(max.x > cx - 0.1 && max.y > cy - 0.1)
    }

    /// Three points per axis per cell, well away from cell edges.
    fn floor_points(&self) -> Vec<Point3> {
        let mut pts = Vec::new();
        for cy in 0..self.ny {
            for cx in 0..self.nx {
                if !self.inside_cell(cx, cy) {
                    continue;
                }
                for ox in [0.1, 0.3, 0.5] {
                    for oy in [0.1, 0.3, 0.5] {
                        pts.push(Point3::new(self.x0 + cx as f64 * OCC_CELL + ox, self.y0 + cy as f64 * OCC_CELL + oy, 0.0));
                    }
                }
            }
        }
        pts
    }
}

fn xy_gap(a: &AnnotatedObject, b: &AnnotatedObject) -> f64 {
    let gx = (a.aabb_min.x - b.aabb_max.x).max(b.aabb_min.x - a.aabb_max.x).max(0.0);
    let gy = (a.aabb_min.y - b.aabb_max.y).max(b.aabb_min.y - a.aabb_max.y).max(0.0);
    gx.hypot(gy)
}

fn gap3(a: &AnnotatedObject, b: &AnnotatedObject) -> f64 {
    let g = |amin: f64, amax: f64, bmin: f64, bmax: f64| (amin - bmax).max(bmin - amax).max(0.0);
    let gx = g(a.aabb_min.x, a.aabb_max.x, b.aabb_min.x, b.aabb_max.x);
    let gy = g(a.aabb_min.y, a.aabb_max.y, b.aabb_min.y, b.aabb_max.y);
    let gz = g(a.aabb_min.z, a.aabb_max.z, b.aabb_min.z, b.aabb_max.z);
    (gx * gx + gy * gy + gz * gz).sqrt()
}

fn center(o: &AnnotatedObject) -> Point3 {
    (o.aabb_min + o.aabb_max) * 0.5
}

fn place_objects(rng: &mut ChaCha8Rng, room: &Room) -> Vec<AnnotatedObject> {
    let mut cats: Vec<&str> = CATEGORIES.to_vec();
    cats.shuffle(rng);
    let n_cats = rng.random_range(6..=8);
    let mut out: Vec<AnnotatedObject> = Vec::new();
    for (i, cat) in cats.iter().take(n_cats).enumerate() {
        let copies = if i < 2 && rng.random_bool(0.5) { rng.random_range(2..=3) } else { 1 };
        for _ in 0..copies {
            for _attempt in 0..200 {
                let size = [r2(rng.random_range(0.3..1.2)), r2(rng.random_range(0.3..1.2)), r2(rng.random_range(0.3..1.8))];
                let x = r2(rng.random_range(room.x0..room.x0 + room.nx as f64 * OCC_CELL));
                let y = r2(rng.random_range(room.y0..room.y0 + room.ny as f64 * OCC_CELL));
                let min = Point3::new(r2(x - size[0] / 2.0), r2(y - size[1] / 2.0), 0.0);
                let max = Point3::new(r2(x + size[0] / 2.0), r2(y + size[1] / 2.0), size[2]);
                if !room.fits(min, max) {
                    continue;
                }
                let cand = AnnotatedObject { category: cat.to_string(), aabb_min: min, aabb_max: max, centroid: None, confidence: None, points: vec![] };
                if out.iter().all(|o| xy_gap(o, &cand) >= 0.3) {
                    out.push(cand);
                    break;
                }
            }
        }
    }
    out
}

/// Builds `scenes` annotated rooms, their ground-truth stores and questions
/// across all seven tasks.
pub fn gt_suite(scenes: usize, seed: u64, cfg: &RunConfig) -> Result<GtSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = GtSuite { annotations: Vec::new(), store: SceneStore::default(), records: Vec::new() };
    for s in 0..scenes {
        let scene_id = format!("synth_{s:03}");
        let nx = rng.random_range(8..=16);
        let ny = rng.random_range(8..=16);
        let cut = if rng.random_bool(0.4) { (rng.random_range(nx / 2..nx), rng.random_range(ny / 2..ny)) } else { (nx, ny) };
        let room = Room { x0: rng.random_range(-5..=0) as f64 * OCC_CELL, y0: rng.random_range(-5..=0) as f64 * OCC_CELL, nx, ny, cut };
        let objects = place_objects(&mut rng, &room);
        let floor_points = room.floor_points();
        let ann = SceneAnnotation {
            scene_id: scene_id.clone(),
            objects,
            floor_points,
            bounds: Some(RawBounds { x: [room.x0, room.x0 + nx as f64 * OCC_CELL], y: [room.y0, room.y0 + ny as f64 * OCC_CELL] }),
        };
        let map = ann.build(cfg.grid_size)?;
        let grid = build_occupancy_grid(&ann.floor_points, cfg.cell_size, cfg.min_cell_points)?;

        let mut frames: Vec<u32> = (0..64).collect();
        frames.shuffle(&mut rng);
        let appearance: Vec<AppearanceRecord> = map
            .objects
            .iter()
            .flat_map(|(cat, insts)| insts.iter().map(move |o| (cat.clone(), o.instance_id)))
            .zip(frames)
            .map(|((category, instance_id), f)| AppearanceRecord { category, instance_id, first_frame: Some(f) })
            .collect();

        let cell = map.bounds().dx() / cfg.grid_size as f64;
        let mut qs = questions(&mut rng, &scene_id, &ann, &room, &appearance, cell);
        suite.records.append(&mut qs);
        suite.store.maps.insert(scene_id.clone(), map);
        suite.store.occupancy.insert(scene_id.clone(), grid);
        suite.store.appearance.insert(scene_id, appearance);
        suite.annotations.push(ann);
    }
    Ok(suite)
}

fn mc_options(rng: &mut ChaCha8Rng, correct: String, mut distractors: Vec<String>) -> (Vec<String>, String) {
    distractors.retain(|d| *d != correct);
    distractors.shuffle(rng);
    distractors.truncate(3);
    let mut all = distractors;
    let at = rng.random_range(0..=all.len());
    all.insert(at, correct);
    let opts = all.iter().enumerate().map(|(i, o)| format!("{}. {o}", option_letter(i))).collect();
    (opts, option_letter(at))
}

fn questions(rng: &mut ChaCha8Rng, scene: &str, ann: &SceneAnnotation, room: &Room, appearance: &[AppearanceRecord], cell: f64) -> Vec<QaRecord> {
    let objs = &ann.objects;
    let count_of = |c: &str| objs.iter().filter(|o| o.category == c).count();
    let mut cats: Vec<&str> = objs.iter().map(|o| o.category.as_str()).collect();
    cats.sort();
    cats.dedup();
    let singles: Vec<&AnnotatedObject> = objs.iter().filter(|o| count_of(&o.category) == 1).collect();
    let mut out = Vec::new();
    let push = |out: &mut Vec<QaRecord>, task: TaskKind, question: String, options: Vec<String>, gt: Answer| {
        let id = format!("{scene}_q{:02}", out.len());
        out.push(QaRecord { id, scene_id: scene.to_string(), task, question, options, ground_truth: gt, categories: None });
    };

    for c in cats.iter().take(2) {
        push(&mut out, TaskKind::ObjectCount, format!("How many {c}(s) are in this room?"), vec![], Answer::Number(count_of(c) as f64));
    }
    let absent = CATEGORIES.iter().find(|c| !cats.contains(c)).expect("scenes use at most 8 of 16 categories");
    push(&mut out, TaskKind::ObjectCount, format!("How many {absent}(s) are in this room?"), vec![], Answer::Number(0.0));

    if let Some(o) = singles.first() {
        let s = o.aabb_max - o.aabb_min;
        let longest = s.x.max(s.y).max(s.z);
        push(
            &mut out,
            TaskKind::ObjectSize,
            format!("What is the length of the longest dimension (length, width, or height) of the {}, measured in centimeters?", o.category),
            vec![],
            Answer::Number(longest * 100.0),
        );
    }
    if singles.len() >= 2 {
        let (a, b) = (singles[0], singles[singles.len() - 1]);
        push(
            &mut out,
            TaskKind::AbsoluteDistance,
            format!("Measuring from the closest point of each object, what is the direct distance between the {} and the {} (in meters)?", a.category, b.category),
            vec![],
            Answer::Number(gap3(a, b)),
        );
    }
    push(
        &mut out,
        TaskKind::RoomSize,
        "What is the size of this room (in square meters)? If multiple rooms are shown, estimate the size of the combined space.".into(),
        vec![],
        Answer::Number(room.area()),
    );

    // Direction: keep only triples whose quadrant survives one cell of
    // quantization error per coordinate.
    let dirs = ["front-left", "front-right", "back-left", "back-right"].map(String::from).to_vec();
    'dir: for _ in 0..40 {
        if singles.len() < 3 {
            break;
        }
        let mut pick = singles.clone();
        pick.shuffle(rng);
        let (o, f, t) = (center(pick[0]), center(pick[1]), center(pick[2]));
        let fv = (f.x - o.x, f.y - o.y);
        let tv = (t.x - o.x, t.y - o.y);
        let dot = fv.0 * tv.0 + fv.1 * tv.1;
        let cross = fv.0 * tv.1 - fv.1 * tv.0;
        let slack = (fv.0.abs() + fv.1.abs() + tv.0.abs() + tv.1.abs()) * cell + 2.0 * cell * cell;
        if dot.abs() <= 2.0 * slack || cross.abs() <= 2.0 * slack {
            continue;
        }
        let truth = format!("{}-{}", if dot > 0.0 { "front" } else { "back" }, if cross > 0.0 { "left" } else { "right" });
        let mut options = dirs.clone();
        options.shuffle(rng);
        let at = options.iter().position(|d| *d == truth).unwrap();
        let options = options.iter().enumerate().map(|(i, d)| format!("{}. {d}", option_letter(i))).collect();
        push(
            &mut out,
            TaskKind::RelativeDirection,
            format!(
                "If I am standing by the {} and facing the {}, is the {} to my front-left, front-right, back-left, or back-right?",
                pick[0].category, pick[1].category, pick[2].category
            ),
            options,
            Answer::Text(option_letter(at)),
        );
        break 'dir;
    }

    // Relative distance: the winner must lead the runner-up by a margin
    // wider than the grid can blur.
    for _ in 0..40 {
        if singles.is_empty() || cats.len() < 5 {
            break;
        }
        let target = singles[rng.random_range(0..singles.len())];
        let mut others: Vec<&str> = cats.iter().copied().filter(|c| *c != target.category).collect();
        others.shuffle(rng);
        others.truncate(4);
        let mut dists: Vec<(f64, &str)> = others
            .iter()
            .map(|c| (objs.iter().filter(|o| o.category == *c).map(|o| xy_gap(o, target)).fold(f64::INFINITY, f64::min), *c))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        if dists[1].0 - dists[0].0 <= 4.0 * cell {
            continue;
        }
        let options: Vec<String> = others.iter().enumerate().map(|(i, c)| format!("{}. {c}", option_letter(i))).collect();
        let at = others.iter().position(|c| *c == dists[0].1).unwrap();
        push(
            &mut out,
            TaskKind::RelativeDistance,
            format!("Measuring from the closest point of each object, which of these objects ({}) is the closest to the {}?", others.join(", "), target.category),
            options,
            Answer::Text(option_letter(at)),
        );
        break;
    }

    if cats.len() >= 3 {
        let mut pick: Vec<&str> = cats.clone();
        pick.shuffle(rng);
        pick.truncate(3);
        let first = |c: &str| appearance.iter().filter(|r| r.category == c).filter_map(|r| r.first_frame).min().unwrap();
        let mut order = pick.clone();
        order.sort_by_key(|c| first(c));
        let correct = order.join(", ");
        let mut perms = Vec::new();
        for p in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            perms.push(p.iter().map(|&i| order[i]).collect::<Vec<_>>().join(", "));
        }
        let (options, gt) = mc_options(rng, correct, perms);
        push(
            &mut out,
            TaskKind::AppearanceOrder,
            format!("What will be the first-time appearance order of the following categories in the video: {}?", pick.join(", ")),
            options,
            Answer::Text(gt),
        );
    }
    out
}

/// A solid box in a ray-cast world; `object` indexes the planted objects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBox {
    pub aabb: Aabb3,
    pub object: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub category: String,
    pub aabb: Aabb3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaycastParams {
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub max_objects: usize,
    /// Fewest object pixels that produce a detection.
    pub min_pixels: usize,
}

impl Default for RaycastParams {
    fn default() -> Self {
        RaycastParams { frames: 12, width: 64, height: 48, focal: 40.0, max_objects: 3, min_pixels: 12 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaycastScene {
    pub scene_id: String,
    pub objects: Vec<PlantedObject>,
    pub boxes: Vec<SceneBox>,
    pub frames: Vec<FrameObservation>,
    /// Per frame, per point: the planted object hit, if any.
    pub labels: Vec<Vec<Option<usize>>>,
    pub detections: Vec<Detection>,
    /// Planted object behind each detection.
    pub detection_objects: Vec<usize>,
}

impl RaycastScene {
    /// Objects that received at least one detection, per category.
    pub fn detected_counts(&self) -> std::collections::BTreeMap<String, usize> {
        let seen: std::collections::BTreeSet<usize> = self.detection_objects.iter().copied().collect();
        let mut counts = std::collections::BTreeMap::new();
        for o in seen {
            *counts.entry(self.objects[o].category.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// Nearest surface hit along a ray.
    pub fn cast(&self, origin: Point3, dir: Point3) -> Option<(f64, usize)> {
        cast(&self.boxes, origin, dir)
    }
}

/// Entry parameter `t > 0` of the ray `origin + t·dir` into `aabb`.
pub fn ray_box(origin: Point3, dir: Point3, aabb: &Aabb3) -> Option<f64> {
    let (o, d) = (origin.to_array(), dir.to_array());
    let (lo, hi) = (aabb.min.to_array(), aabb.max.to_array());
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < lo[k] || o[k] > hi[k] {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

pub fn cast(boxes: &[SceneBox], origin: Point3, dir: Point3) -> Option<(f64, usize)> {
    boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| ray_box(origin, dir, &b.aabb).map(|t| (t, i)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
}

/// Renders one camera: every pixel center that hits a surface yields a
/// point and the box it landed on.
pub fn render(boxes: &[SceneBox], index: u32, pose: CameraPose) -> (FrameObservation, Vec<Option<usize>>) {
    let k = pose.intrinsics;
    let eye = pose.center();
    let rt = pose.rotation.transpose();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for v in 0..pose.height {
        for u in 0..pose.width {
            let (pu, pv) = (u as f64 + 0.5, v as f64 + 0.5);
            // Camera-space z of the direction is 1, so t is the depth.
            let dir = rt.mul_point(Point3::new((pu - k.cx) / k.fx, (pv - k.cy) / k.fy, 1.0));
            if let Some((t, i)) = cast(boxes, eye, dir) {
                points.push(ObservedPoint { xyz: eye + dir * t, uv: [pu, pv], depth: t });
                labels.push(boxes[i].object);
            }
        }
    }
    (FrameObservation { frame_index: index, pose, points }, labels)
}

const RAY_CATEGORIES: [&str; 4] = ["chair", "cabinet", "sofa", "lamp"];

/// A walled room with a few box objects, viewed by a ring of cameras. Each
/// object visible in a frame gets a detection there, so every object is
/// detected many times over.
pub fn raycast_scene(seed: u64, params: &RaycastParams) -> Result<RaycastScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(4.0..7.0);
    let d = rng.random_range(4.0..7.0);
    let h = 2.6;
    let slab = |min: [f64; 3], max: [f64; 3]| SceneBox { aabb: Aabb3 { min: min.into(), max: max.into() }, object: None };
    let mut boxes = vec![
        slab([-0.1, -0.1, -0.1], [w + 0.1, d + 0.1, 0.0]),
        slab([-0.1, -0.1, 0.0], [0.0, d + 0.1, h]),
        slab([w, -0.1, 0.0], [w + 0.1, d + 0.1, h]),
        slab([0.0, -0.1, 0.0], [w, 0.0, h]),
        slab([0.0, d, 0.0], [w, d + 0.1, h]),
    ];
    let n = rng.random_range(1..=params.max_objects.max(1));
    let mut objects: Vec<PlantedObject> = Vec::new();
    let (cx, cy) = (w / 2.0, d / 2.0);
    for _ in 0..n {
        for _attempt in 0..100 {
            let size = [rng.random_range(0.4..0.9), rng.random_range(0.4..0.9), rng.random_range(0.4..1.0)];
            let x = rng.random_range(cx - 0.9..cx + 0.9);
            let y = rng.random_range(cy - 0.9..cy + 0.9);
            let aabb = Aabb3::from_center_size(Point3::new(x, y, size[2] / 2.0), size)?;
            if objects.iter().all(|o| o.aabb.center().distance(aabb.center()) > 1.4) {
                let category = RAY_CATEGORIES[rng.random_range(0..RAY_CATEGORIES.len())].to_string();
                boxes.push(SceneBox { aabb, object: Some(objects.len()) });
                objects.push(PlantedObject { category, aabb });
                break;
            }
        }
    }
    let k = Intrinsics { fx: params.focal, fy: params.focal, cx: params.width as f64 / 2.0, cy: params.height as f64 / 2.0 };
    let radius = 0.48 * w.min(d);
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    let mut detections = Vec::new();
    let mut detection_objects = Vec::new();
    for i in 0..params.frames {
        let a = std::f64::consts::TAU * i as f64 / params.frames as f64;
        let eye = Point3::new(cx + radius * a.cos(), cy + radius * a.sin(), 1.8);
        let pose = CameraPose::look_at(eye, Point3::new(cx, cy, 0.3), Point3::new(0.0, 0.0, 1.0), k, params.width, params.height)?;
        let (frame, lab) = render(&boxes, i as u32, pose);
        for (o, obj) in objects.iter().enumerate() {
            let idx: Vec<usize> = lab.iter().enumerate().filter(|(_, l)| **l == Some(o)).map(|(j, _)| j).collect();
            if idx.len() < params.min_pixels {
                continue;
            }
            let mut mask: Vec<[u32; 2]> = idx.iter().map(|&j| {
                let (u, v) = frame.points[j].pixel();
                [u, v]
            }).collect();
            mask.sort();
            detection_objects.push(o);
            detections.push(Detection {
                frame_index: i as u32,
                category: obj.category.clone(),
                confidence: (rng.random_range(0.3..1.0f64) * 1000.0).round() / 1000.0,
                region: Region::Mask(mask),
                segment: idx.iter().map(|&j| frame.points[j].xyz).collect(),
                source: Some(if detections.len() % 2 == 0 { "detector-a" } else { "detector-b" }.into()),
            });
        }
        frames.push(frame);
        labels.push(lab);
    }
    Ok(RaycastScene { scene_id: format!("ray_{seed:04}"), objects, boxes, frames, labels, detections, detection_objects })
}
