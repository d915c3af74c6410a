//! Multi-view instance handling for reconstructed video: frame selection,
//! covisibility by reprojection, detection deduplication, floor alignment,
//! segment merging and first-appearance frames.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_dominant_plane, project_point, Aabb3, CameraPose, Mat3, Plane, Point3, RansacParams, RigidTransform};

/// A reconstructed point as seen from the frame that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedPoint {
    pub xyz: Point3,
    pub uv: [f64; 2],
    /// Camera-space depth, meters.
    pub depth: f64,
}

impl ObservedPoint {
    pub fn pixel(&self) -> (u32, u32) {
        (self.uv[0].floor() as u32, self.uv[1].floor() as u32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_index: u32,
    pub pose: CameraPose,
    pub points: Vec<ObservedPoint>,
}

impl FrameObservation {
    pub fn validate(&self) -> Result<()> {
        self.pose.validate().map_err(|e| Error::invalid(format!("frame {}: {e}", self.frame_index)))?;
        let (w, h) = (self.pose.width as f64, self.pose.height as f64);
        for (i, p) in self.points.iter().enumerate() {
            if !(p.depth > 0.0) || !p.xyz.is_finite() {
                return Err(Error::invalid(format!("frame {} point {i}: depth must be positive and finite", self.frame_index)));
            }
            if !(p.uv[0] >= 0.0 && p.uv[0] < w && p.uv[1] >= 0.0 && p.uv[1] < h) {
                return Err(Error::invalid(format!("frame {} point {i}: pixel {:?} outside the image", self.frame_index, p.uv)));
            }
        }
        Ok(())
    }

    /// The same observation after scaling the world by `scale` and then
    /// applying `transform`.
    pub fn transformed(&self, scale: f64, transform: &RigidTransform) -> FrameObservation {
        let mut pose = self.pose.clone();
        pose.translation = pose.translation * scale;
        FrameObservation {
            frame_index: self.frame_index,
            pose: transform.transform_pose(&pose),
            points: self
                .points
                .iter()
                .map(|p| ObservedPoint { xyz: transform.apply(p.xyz * scale), uv: p.uv, depth: p.depth * scale })
                .collect(),
        }
    }

    /// Per-pixel nearest stored depth, row-major.
    fn depth_buffer(&self) -> DepthBuffer {
        let (w, h) = (self.pose.width as usize, self.pose.height as usize);
        let mut depth = vec![f64::INFINITY; w * h];
        for p in &self.points {
            let (u, v) = p.pixel();
            let cell = &mut depth[v as usize * w + u as usize];
            *cell = cell.min(p.depth);
        }
        DepthBuffer { width: w, height: h, depth }
    }
}

struct DepthBuffer {
    width: usize,
    height: usize,
    depth: Vec<f64>,
}

impl DepthBuffer {
    fn at(&self, u: u32, v: u32) -> f64 {
        self.depth[v as usize * self.width + u as usize]
    }

    fn agrees(&self, u: u32, v: u32, depth: f64, radius: u32, tol: f64) -> bool {
        let r = radius as i64;
        for dv in -r..=r {
            for du in -r..=r {
                let (x, y) = (u as i64 + du, v as i64 + dv);
                if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                    continue;
                }
                if (self.depth[y as usize * self.width + x as usize] - depth).abs() <= tol {
                    return true;
                }
            }
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `[u_min, v_min, u_max, v_max]`, half-open in pixels.
    Box([f64; 4]),
    Mask(Vec<[u32; 2]>),
}

impl Region {
    pub fn is_empty(&self) -> bool {
        match self {
            Region::Box(b) => !(b[2] > b[0] && b[3] > b[1]),
            Region::Mask(m) => m.is_empty(),
        }
    }

    pub fn contains_pixel(&self, u: u32, v: u32) -> bool {
        match self {
            Region::Box(b) => {
                let (x, y) = (u as f64 + 0.5, v as f64 + 0.5);
                x >= b[0] && x < b[2] && y >= b[1] && y < b[3]
            }
            Region::Mask(m) => m.contains(&[u, v]),
        }
    }

    fn lookup(&self) -> RegionLookup<'_> {
        match self {
            Region::Box(_) => RegionLookup::Box(self),
            Region::Mask(m) => RegionLookup::Mask(m.iter().copied().collect()),
        }
    }
}

enum RegionLookup<'a> {
    Box(&'a Region),
    Mask(std::collections::HashSet<[u32; 2]>),
}

impl RegionLookup<'_> {
    fn contains(&self, (u, v): (u32, u32)) -> bool {
        match self {
            RegionLookup::Box(r) => r.contains_pixel(u, v),
            RegionLookup::Mask(m) => m.contains(&[u, v]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u32,
    pub category: String,
    pub confidence: f64,
    pub region: Region,
    #[serde(default)]
    pub segment: Vec<Point3>,
    /// Which detector produced this record; carried through, not used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::invalid(format!("detection confidence {} outside [0, 1]", self.confidence)));
        }
        if self.region.is_empty() {
            return Err(Error::invalid(format!("detection of {} in frame {} has an empty region", self.category, self.frame_index)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppearanceRecord {
    pub category: String,
    pub instance_id: u32,
    /// Ordinal within the selected frames; `None` when never visible.
    pub first_frame: Option<u32>,
}

/// Frames `0, stride, 2·stride, …` below `total`.
pub fn scan_frames(total: usize, stride: usize) -> Vec<u32> {
    (0..total).step_by(stride.max(1)).map(|f| f as u32).collect()
}

/// `count` evenly spaced picks from `pool` at `round(k·(len−1)/(count−1))`.
fn evenly_spaced(pool: &[u32], count: usize) -> Vec<u32> {
    let n = pool.len();
    if count == 0 || n == 0 {
        return Vec::new();
    }
    if count >= n {
        return pool.to_vec();
    }
    if count == 1 {
        return vec![pool[0]];
    }
    (0..count).map(|k| pool[((k * (n - 1)) as f64 / (count - 1) as f64).round() as usize]).collect()
}

/// The frames kept without any detection information.
pub fn uniform_frames(total: usize, budget: usize) -> Vec<u32> {
    let all: Vec<u32> = (0..total as u32).collect();
    evenly_spaced(&all, budget)
}

/// Keeps the best-scoring frame of every queried category, then fills the
/// budget with evenly spaced frames among the rest.
pub fn select_crucial_frames(detections: &[Detection], total_frames: usize, budget: usize, queried: &[impl AsRef<str>]) -> Vec<u32> {
    let cap = budget.min(total_frames);
    let mut picked = BTreeSet::new();
    for cat in queried {
        let best = detections
            .iter()
            .filter(|d| d.category == cat.as_ref() && (d.frame_index as usize) < total_frames)
            .max_by(|a, b| a.confidence.total_cmp(&b.confidence).then(b.frame_index.cmp(&a.frame_index)));
        if let Some(d) = best {
            if picked.len() < cap {
                picked.insert(d.frame_index);
            }
        }
    }
    let rest: Vec<u32> = (0..total_frames as u32).filter(|f| !picked.contains(f)).collect();
    let fill = evenly_spaced(&rest, cap - picked.len());
    picked.extend(fill);
    picked.into_iter().collect()
}

/// Point-wise covisibility between every ordered pair of frames, plus the
/// frames themselves for later region lookups.
#[derive(Clone, Debug, Default)]
pub struct CovisMap {
    frames: BTreeMap<u32, FrameObservation>,
    flags: BTreeMap<(u32, u32), Vec<bool>>,
}

impl CovisMap {
    /// Flags for the points of `source` as seen from `target`.
    pub fn flags(&self, source: u32, target: u32) -> Option<&[bool]> {
        self.flags.get(&(source, target)).map(Vec::as_slice)
    }

    pub fn frame(&self, index: u32) -> Option<&FrameObservation> {
        self.frames.get(&index)
    }

    pub fn frame_indices(&self) -> impl Iterator<Item = u32> + '_ {
        self.frames.keys().copied()
    }

    pub fn pair_count(&self) -> usize {
        self.flags.len()
    }
}

/// A point of frame `i` is covisible in frame `j` when it projects into
/// `j` and some stored point of `j` within `radius` pixels of the
/// projection has a depth within `depth_tol` of the projected depth.
pub fn build_covis_map(frames: &[FrameObservation], depth_tol: f64, radius: u32) -> Result<CovisMap> {
    if frames.is_empty() {
        return Err(Error::invalid("covisibility needs at least one frame"));
    }
    let mut by_index = BTreeMap::new();
    for f in frames {
        f.validate()?;
        if by_index.insert(f.frame_index, f.clone()).is_some() {
            return Err(Error::invalid(format!("duplicate frame index {}", f.frame_index)));
        }
    }
    let buffers: BTreeMap<u32, DepthBuffer> = by_index.iter().map(|(k, f)| (*k, f.depth_buffer())).collect();
    let keys: Vec<u32> = by_index.keys().copied().collect();
    let pairs: Vec<(u32, u32)> = keys.iter().flat_map(|&i| keys.iter().map(move |&j| (i, j))).collect();
    let flags: BTreeMap<(u32, u32), Vec<bool>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let src = &by_index[&i];
            if i == j {
                return ((i, j), vec![true; src.points.len()]);
            }
            let dst = &by_index[&j];
            let buf = &buffers[&j];
            let f = src
                .points
                .iter()
                .map(|p| match project_point(p.xyz, &dst.pose) {
                    Some(pr) => {
                        let (u, v) = pr.pixel();
                        buf.agrees(u, v, pr.depth, radius, depth_tol)
                    }
                    None => false,
                })
                .collect();
            ((i, j), f)
        })
        .collect();
    Ok(CovisMap { frames: by_index, flags })
}

fn region_points(frame: &FrameObservation, region: &RegionLookup) -> Vec<usize> {
    frame.points.iter().enumerate().filter(|(_, p)| region.contains(p.pixel())).map(|(i, _)| i).collect()
}

/// Greedy suppression in descending confidence. A candidate is dropped
/// when at least `overlap_frac` of the points inside its region are
/// covisible in a kept detection's frame and land inside that detection's
/// region. Regions holding no points never suppress or get suppressed.
pub fn dedup_detections(detections: &[Detection], covis: &CovisMap, overlap_frac: f64) -> Result<Vec<Detection>> {
    if let Some(first) = detections.first() {
        if let Some(d) = detections.iter().find(|d| d.category != first.category) {
            return Err(Error::invalid(format!("dedup mixes categories {} and {}", first.category, d.category)));
        }
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        db.confidence.total_cmp(&da.confidence).then(da.frame_index.cmp(&db.frame_index)).then(a.cmp(&b))
    });
    let regions: Vec<RegionLookup> = detections.iter().map(|d| d.region.lookup()).collect();
    let mut points = Vec::with_capacity(detections.len());
    for (d, region) in detections.iter().zip(&regions) {
        let frame = covis.frame(d.frame_index).ok_or_else(|| Error::invalid(format!("detection references frame {} with no observation", d.frame_index)))?;
        points.push(region_points(frame, region));
    }

    let mut kept: Vec<usize> = Vec::new();
    for &c in &order {
        let cand = &detections[c];
        let pts = &points[c];
        let src = covis.frame(cand.frame_index).expect("checked above");
        let suppressed = !pts.is_empty()
            && kept.iter().any(|&k| {
                let keep = &detections[k];
                let hits = if keep.frame_index == cand.frame_index {
                    pts.iter().filter(|&&i| regions[k].contains(src.points[i].pixel())).count()
                } else {
                    let flags = covis.flags(cand.frame_index, keep.frame_index).unwrap_or(&[]);
                    let dst = covis.frame(keep.frame_index).expect("checked above");
                    pts.iter()
                        .filter(|&&i| {
                            flags.get(i).copied().unwrap_or(false)
                                && project_point(src.points[i].xyz, &dst.pose).is_some_and(|pr| regions[k].contains(pr.pixel()))
                        })
                        .count()
                };
                hits as f64 >= overlap_frac * pts.len() as f64
            });
        if !suppressed {
            kept.push(c);
        }
    }
    Ok(kept.into_iter().map(|i| detections[i].clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FloorAlignment {
    pub transform: RigidTransform,
    pub floor: Plane,
    /// The vertical plane used for heading, when the dominant plane was one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall: Option<Plane>,
}

/// Rigid transform that puts the floor at `z = 0` with `+z` up. Cameras
/// decide which side of the floor is up. When the dominant plane is a wall
/// (normal within `vertical_angle_deg` of horizontal), its inliers are set
/// aside, the floor is fit from the rest, and the wall normal fixes the
/// heading so that it lies along a world axis.
pub fn align_to_floor(frames: &[FrameObservation], ransac: &RansacParams, vertical_angle_deg: f64) -> Result<FloorAlignment> {
    let mut pts: Vec<Point3> = frames.iter().flat_map(|f| f.points.iter().map(|p| p.xyz)).collect();
    let cams: Vec<Point3> = frames.iter().map(|f| f.pose.center()).collect();
    let vertical = |p: &Plane| p.elevation() <= vertical_angle_deg.to_radians();
    let mut wall = None;
    let mut floor = None;
    for _ in 0..3 {
        let plane = fit_dominant_plane(&pts, ransac)?;
        if !vertical(&plane) {
            floor = Some(plane);
            break;
        }
        wall.get_or_insert(plane);
        pts.retain(|p| plane.signed_distance(*p).abs() > ransac.inlier_tol);
    }
    let mut floor = floor.ok_or_else(|| Error::FitFailure("no horizontal plane found".into()))?;
    let above: f64 = cams.iter().map(|c| floor.signed_distance(*c)).sum();
    if above < 0.0 || (above == 0.0 && floor.normal[2] < 0.0) {
        floor = floor.flipped();
    }
    let level = Mat3::rotation_between(floor.normal(), Point3::new(0.0, 0.0, 1.0));
    let mut rotation = level;
    if let Some(w) = &wall {
        let n = level.mul_point(w.normal());
        if n.x.hypot(n.y) > 1e-9 {
            let a = n.y.atan2(n.x);
            let quarter = std::f64::consts::FRAC_PI_2;
            let target = (a / quarter).round() * quarter;
            rotation = Mat3::rotation(Point3::new(0.0, 0.0, 1.0), target - a).mul(&level);
        }
    }
    let transform = RigidTransform { rotation, translation: Point3::new(0.0, 0.0, -floor.offset) };
    Ok(FloorAlignment { transform, floor, wall })
}

/// Instance candidate entering [`merge_segments`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub category: String,
    pub confidence: f64,
    pub points: Vec<Point3>,
}

impl Segment {
    pub fn aabb(&self) -> Option<Aabb3> {
        Aabb3::from_points(&self.points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergedInstance {
    pub instance_id: u32,
    pub category: String,
    pub confidence: f64,
    pub points: Vec<Point3>,
    /// Indices into the input of every merged member.
    pub members: Vec<usize>,
}

impl MergedInstance {
    pub fn aabb(&self) -> Aabb3 {
        Aabb3::from_points(&self.points).expect("merged instances are nonempty")
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut x = x;
        while self.0[x] != r {
            let next = self.0[x];
            self.0[x] = r;
            x = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn lex(a: Point3, b: Point3) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Merges same-category segments whose box centers are closer than
/// `merge_frac` times the pair's mean box diagonal, transitively. Each group
/// keeps its most confident member; ids follow (category, center) order.
pub fn merge_segments(segments: &[Segment], merge_frac: f64) -> Result<Vec<MergedInstance>> {
    let mut boxes = Vec::with_capacity(segments.len());
    for (i, s) in segments.iter().enumerate() {
        boxes.push(s.aabb().ok_or_else(|| Error::invalid(format!("segment {i} ({}) has no points", s.category)))?);
    }
    let mut uf = UnionFind((0..segments.len()).collect());
    for i in 0..segments.len() {
        for j in i + 1..segments.len() {
            if segments[i].category != segments[j].category {
                continue;
            }
            let limit = merge_frac * (boxes[i].diagonal() + boxes[j].diagonal()) / 2.0;
            if boxes[i].center().distance(boxes[j].center()) < limit {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..segments.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut out: Vec<(usize, Vec<usize>)> = groups
        .into_values()
        .map(|members| {
            let rep = *members
                .iter()
                .max_by(|&&a, &&b| segments[a].confidence.total_cmp(&segments[b].confidence).then(lex(boxes[b].center(), boxes[a].center())))
                .expect("groups are nonempty");
            (rep, members)
        })
        .collect();
    out.sort_by(|a, b| segments[a.0].category.cmp(&segments[b.0].category).then(lex(boxes[a.0].center(), boxes[b.0].center())));
    Ok(out
        .into_iter()
        .enumerate()
        .map(|(id, (rep, members))| MergedInstance {
            instance_id: id as u32,
            category: segments[rep].category.clone(),
            confidence: segments[rep].confidence,
            points: segments[rep].points.clone(),
            members,
        })
        .collect())
}

/// Voxel centers of the occupied cells, sorted and unique.
pub fn quantize_points(points: &[Point3], voxel: f64) -> Vec<Point3> {
    let keys: BTreeSet<[i64; 3]> = points.iter().map(|p| [p.x, p.y, p.z].map(|c| (c / voxel).floor() as i64)).collect();
    keys.into_iter().map(|k| Point3::new((k[0] as f64 + 0.5) * voxel, (k[1] as f64 + 0.5) * voxel, (k[2] as f64 + 0.5) * voxel)).collect()
}

/// First selected-frame ordinal in which an instance point projects into
/// the image without a stored point of that frame sitting more than
/// `occl_tol` closer to the camera at the same pixel.
pub fn appearance_frames(instances: &[MergedInstance], selected: &[FrameObservation], occl_tol: f64) -> Vec<AppearanceRecord> {
    let buffers: Vec<DepthBuffer> = selected.iter().map(FrameObservation::depth_buffer).collect();
    instances
        .iter()
        .map(|inst| {
            let first_frame = selected
                .iter()
                .zip(&buffers)
                .position(|(f, buf)| {
                    inst.points.iter().any(|p| {
                        project_point(*p, &f.pose).is_some_and(|pr| {
                            let (u, v) = pr.pixel();
                            !(buf.at(u, v) < pr.depth - occl_tol)
                        })
                    })
                })
                .map(|i| i as u32);
            AppearanceRecord { category: inst.category.clone(), instance_id: inst.instance_id, first_frame }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use proptest::prelude::*;

    fn k() -> Intrinsics {
        Intrinsics { fx: 40.0, fy: 40.0, cx: 32.0, cy: 24.0 }
    }

    fn camera(eye: [f64; 3], target: [f64; 3]) -> CameraPose {
        CameraPose::look_at(eye.into(), target.into(), Point3::new(0.0, 0.0, 1.0), k(), 64, 48).unwrap()
    }

    fn observe(index: u32, pose: CameraPose, world: &[Point3]) -> FrameObservation {
        let points = world
            .iter()
            .filter_map(|p| project_point(*p, &pose).map(|pr| ObservedPoint { xyz: *p, uv: [pr.u, pr.v], depth: pr.depth }))
            .collect();
        FrameObservation { frame_index: index, pose, points }
    }

    fn wall_points(x: f64) -> Vec<Point3> {
        let mut v = Vec::new();
        for i in 0..160 {
            for j in 0..120 {
                v.push(Point3::new(x, -2.0 + i as f64 * 0.025, j as f64 * 0.025));
            }
        }
        v
    }

    #[test]
    fn selection_examples() {
        let none: Vec<Detection> = Vec::new();
        let s = select_crucial_frames(&none, 640, 64, &["chair"]);
        assert_eq!(s, uniform_frames(640, 64));
        assert_eq!(s.len(), 64);
        assert_eq!((s[0], s[63]), (0, 639));
        assert_eq!(select_crucial_frames(&none, 10, 64, &["chair"]), (0..10).collect::<Vec<u32>>());

        let det = |f: u32, c: f64| Detection { frame_index: f, category: "chair".into(), confidence: c, region: Region::Box([0.0, 0.0, 4.0, 4.0]), segment: vec![], source: None };
        let dets = [det(237, 0.9), det(120, 0.5)];
        let s = select_crucial_frames(&dets, 640, 64, &["chair"]);
        assert!(s.contains(&237));
        assert_eq!(s.len(), 64);
        let rest: Vec<u32> = (0..640).filter(|f| *f != 237).collect();
        let mut want: Vec<u32> = (0..63).map(|k| rest[((k * 638) as f64 / 62.0).round() as usize]).collect();
        want.push(237);
        want.sort();
        assert_eq!(s, want);
    }

    proptest! {
        #[test]
        fn selection_sorted_unique_capped(total in 1usize..300, budget in 1usize..80, frames in prop::collection::vec((0u32..300, 0.0f64..1.0, 0usize..3), 0..20)) {
            let cats = ["a", "b", "c"];
            let dets: Vec<Detection> = frames.iter().map(|&(f, c, k)| Detection { frame_index: f, category: cats[k].into(), confidence: c, region: Region::Box([0.0, 0.0, 1.0, 1.0]), segment: vec![], source: None }).collect();
            let s = select_crucial_frames(&dets, total, budget, &cats);
            prop_assert_eq!(s.len(), budget.min(total));
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.iter().all(|&f| (f as usize) < total));
        }
    }

    #[test]
    fn identical_frames_fully_covisible() {
        let pts = wall_points(3.0);
        let f0 = observe(0, camera([0.0, 0.0, 1.5], [3.0, 0.0, 1.5]), &pts);
        let mut f1 = f0.clone();
        f1.frame_index = 1;
        let map = build_covis_map(&[f0.clone(), f1], 0.05, 1).unwrap();
        assert!(map.flags(0, 1).unwrap().iter().all(|&b| b));
        assert!(map.flags(0, 0).unwrap().iter().all(|&b| b));
        assert_eq!(map.pair_count(), 4);
    }

    #[test]
    fn opposite_cameras_share_nothing() {
        let f0 = observe(0, camera([0.0, 0.0, 1.5], [3.0, 0.0, 1.5]), &wall_points(3.0));
        let f1 = observe(1, camera([0.0, 0.0, 1.5], [-3.0, 0.0, 1.5]), &wall_points(-3.0));
        assert!(!f0.points.is_empty() && !f1.points.is_empty());
        let map = build_covis_map(&[f0, f1], 0.05, 1).unwrap();
        assert!(map.flags(0, 1).unwrap().iter().all(|&b| !b));
        assert!(map.flags(1, 0).unwrap().iter().all(|&b| !b));
    }

    #[test]
    fn duplicate_frame_index_rejected() {
        let f0 = observe(0, camera([0.0, 0.0, 1.5], [3.0, 0.0, 1.5]), &wall_points(3.0));
        assert!(build_covis_map(&[f0.clone(), f0], 0.05, 1).is_err());
    }

    fn mask_of(frame: &FrameObservation, pred: impl Fn(&ObservedPoint) -> bool) -> Region {
        let mut m: Vec<[u32; 2]> = frame.points.iter().filter(|p| pred(p)).map(|p| {
            let (u, v) = p.pixel();
            [u, v]
        }).collect();
        m.sort();
        m.dedup();
        Region::Mask(m)
    }

    #[test]
    fn dedup_same_object_two_views() {
        let pts = wall_points(3.0);
        let f0 = observe(0, camera([0.0, 0.0, 1.5], [3.0, 0.0, 1.5]), &pts);
        let f1 = observe(1, camera([0.0, 0.3, 1.5], [3.0, 0.3, 1.5]), &pts);
        let on_obj = |p: &ObservedPoint| p.xyz.y.abs() < 0.45 && (p.xyz.z - 1.5).abs() < 0.45;
        let d0 = Detection { frame_index: 0, category: "tv".into(), confidence: 0.9, region: mask_of(&f0, on_obj), segment: vec![], source: None };
        let d1 = Detection { frame_index: 1, category: "tv".into(), confidence: 0.7, region: mask_of(&f1, on_obj), segment: vec![], source: None };
        let map = build_covis_map(&[f0.clone(), f1.clone()], 0.05, 1).unwrap();
        let kept = dedup_detections(&[d1.clone(), d0.clone()], &map, 0.5).unwrap();
        assert_eq!(kept, vec![d0.clone()]);
        assert_eq!(dedup_detections(&kept, &map, 0.5).unwrap(), kept);

        let other = |p: &ObservedPoint| p.xyz.y > 1.2 && (p.xyz.z - 1.5).abs() < 0.3;
        let far = |p: &ObservedPoint| p.xyz.y < -1.2 && (p.xyz.z - 1.5).abs() < 0.3;
        let d2 = Detection { frame_index: 0, category: "tv".into(), confidence: 0.8, region: mask_of(&f0, far), segment: vec![], source: None };
        let d3 = Detection { frame_index: 1, category: "tv".into(), confidence: 0.6, region: mask_of(&f1, other), segment: vec![], source: None };
        let kept = dedup_detections(&[d0.clone(), d2, d3], &map, 0.5).unwrap();
        assert_eq!(kept.len(), 3);
        assert_eq!(kept[0], d0);
        let bad = Detection { category: "sofa".into(), ..d0.clone() };
        assert!(dedup_detections(&[d0, bad], &map, 0.5).is_err());
    }

    fn floor_and_wall() -> (Vec<Point3>, Vec<Point3>) {
        let mut floor = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                floor.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let mut wall = Vec::new();
        for i in 0..60 {
            for j in 1..40 {
                wall.push(Point3::new(-0.5, i as f64 * 0.1 - 1.5, j as f64 * 0.1));
            }
        }
        (floor, wall)
    }

    fn frame_from(points: Vec<Point3>) -> FrameObservation {
        let pose = camera([1.5, 1.5, 2.0], [1.5, 3.0, 0.5]);
        FrameObservation { frame_index: 0, pose, points: points.into_iter().map(|xyz| ObservedPoint { xyz, uv: [0.0, 0.0], depth: 1.0 }).collect() }
    }

    #[test]
    fn aligned_floor_gives_identity() {
        let (floor, _) = floor_and_wall();
        let a = align_to_floor(&[frame_from(floor)], &RansacParams::default(), 30.0).unwrap();
        assert!(a.transform.rotation.angle() < 1e-6);
        assert!(a.transform.translation.norm() < 1e-6);
        assert!(a.wall.is_none());
    }

    #[test]
    fn tilted_floor_recovered() {
        let (floor, _) = floor_and_wall();
        let tilt = RigidTransform { rotation: Mat3::rotation(Point3::new(1.0, 0.0, 0.0), 10f64.to_radians()), translation: Point3::new(0.0, 0.0, 0.7) };
        let frame = frame_from(floor).transformed(1.0, &tilt);
        let a = align_to_floor(&[frame.clone()], &RansacParams::default(), 30.0).unwrap();
        let total = a.transform.after(&tilt);
        assert!(total.rotation.angle().to_degrees() < 0.1);
        for p in frame.points.iter().take(50) {
            assert!(a.transform.apply(p.xyz).z.abs() < 1e-6);
        }
    }

    #[test]
    fn wall_dominant_scene_uses_floor_second() {
        let (floor, wall) = floor_and_wall();
        assert!(wall.len() > floor.len());
        let yaw = RigidTransform { rotation: Mat3::rotation(Point3::new(0.0, 0.0, 1.0), 0.3), translation: Point3::ORIGIN };
        let frame = frame_from([floor, wall].concat()).transformed(1.0, &yaw);
        let a = align_to_floor(&[frame], &RansacParams::default(), 30.0).unwrap();
        assert!(a.wall.is_some());
        let total = a.transform.after(&yaw);
        let n = total.rotation.mul_point(Point3::new(1.0, 0.0, 0.0));
        // Wall normal lands back on a world axis and the floor stays level.
        assert!(n.x.abs().max(n.y.abs()) > 1.0 - 1e-6);
        assert!(total.rotation.mul_point(Point3::new(0.0, 0.0, 1.0)).z > 1.0 - 1e-6);
    }

    fn cube(center: [f64; 3], side: f64, cat: &str, conf: f64) -> Segment {
        let c = Point3::from(center);
        let h = side / 2.0;
        let mut points = Vec::new();
        for dx in [-h, h] {
            for dy in [-h, h] {
                for dz in [-h, h] {
                    points.push(c + Point3::new(dx, dy, dz));
                }
            }
        }
        Segment { category: cat.into(), confidence: conf, points }
    }

    #[test]
    fn merge_examples() {
        let a = cube([0.0, 0.0, 0.5], 0.5, "chair", 0.9);
        let out = merge_segments(&[a.clone(), a.clone()], 0.2).unwrap();
        assert_eq!(out.len(), 1);

        let side = 0.8 / 3f64.sqrt();
        let far = merge_segments(&[cube([0.0, 0.0, 0.5], side, "chair", 0.9), cube([3.0, 0.0, 0.5], side, "chair", 0.8)], 0.2).unwrap();
        assert_eq!(far.len(), 2);

        // Diagonal ≈ 1.732, merge radius ≈ 0.346: A~B, B~C, A≁C.
        let chain = [cube([0.0, 0.0, 0.5], 1.0, "bed", 0.5), cube([0.3, 0.0, 0.5], 1.0, "bed", 0.9), cube([0.6, 0.0, 0.5], 1.0, "bed", 0.7)];
        let out = merge_segments(&chain, 0.2).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].confidence, 0.9);
        assert_eq!(out[0].members, vec![0, 1, 2]);

        let mixed = merge_segments(&[cube([0.0, 0.0, 0.5], 1.0, "bed", 0.5), cube([0.0, 0.0, 0.5], 1.0, "sofa", 0.5)], 0.2).unwrap();
        assert_eq!(mixed.len(), 2);
        assert!(merge_segments(&[Segment { category: "x".into(), confidence: 1.0, points: vec![] }], 0.2).is_err());
    }

    proptest! {
        #[test]
        fn merge_permutation_invariant(centers in prop::collection::vec((0.0f64..4.0, 0.0f64..4.0, 0usize..2, 0.0f64..1.0), 1..12), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cats = ["bed", "sofa"];
            let segs: Vec<Segment> = centers.iter().map(|&(x, y, c, conf)| cube([x, y, 0.5], 0.8, cats[c], conf)).collect();
            let a = merge_segments(&segs, 0.2).unwrap();
            let mut shuffled = segs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = merge_segments(&shuffled, 0.2).unwrap();
            let strip = |v: &[MergedInstance]| v.iter().map(|m| (m.instance_id, m.category.clone(), m.points.clone())).collect::<Vec<_>>();
            prop_assert_eq!(strip(&a), strip(&b));
            for (i, x) in a.iter().enumerate() {
                for y in &a[i + 1..] {
                    if x.category == y.category {
                        let (bx, by) = (x.aabb(), y.aabb());
                        prop_assert!(bx.center().distance(by.center()) >= 0.2 * (bx.diagonal() + by.diagonal()) / 2.0);
                    }
                }
            }
        }
    }

    #[test]
    fn quantize_is_sorted_unique() {
        let q = quantize_points(&[Point3::new(0.01, 0.01, 0.01), Point3::new(0.02, 0.03, 0.04), Point3::new(0.26, 0.0, 0.0)], 0.05);
        assert_eq!(q.len(), 2);
        assert!((q[0].x - 0.025).abs() < 1e-12);
    }

    fn instance(points: Vec<Point3>) -> MergedInstance {
        MergedInstance { instance_id: 0, category: "kettle".into(), confidence: 1.0, points, members: vec![0] }
    }

    #[test]
    fn appearance_examples() {
        let obj: Vec<Point3> = (0..5).map(|i| Point3::new(3.0, -0.2 + i as f64 * 0.1, 1.5)).collect();
        let cam = camera([0.0, 0.0, 1.5], [3.0, 0.0, 1.5]);
        let away = camera([0.0, 0.0, 1.5], [-3.0, 0.0, 1.5]);
        let frames = [observe(0, cam.clone(), &obj)];
        assert_eq!(appearance_frames(&[instance(obj.clone())], &frames, 0.2)[0].first_frame, Some(0));

        let never = [observe(0, away.clone(), &[]), observe(1, away, &[])];
        assert_eq!(appearance_frames(&[instance(obj.clone())], &never, 0.2)[0].first_frame, None);

        // A wall at x = 2 hides the object in frames 0..10; frame 10 sees it.
        let wall = wall_points(2.0);
        let mut seq: Vec<FrameObservation> = (0..10).map(|i| observe(i, cam.clone(), &wall)).collect();
        seq.push(observe(10, cam.clone(), &obj));
        let rec = appearance_frames(&[instance(obj.clone())], &seq, 0.2);
        assert_eq!(rec[0].first_frame, Some(10));
        assert_eq!(appearance_frames(&[instance(obj)], &seq, f64::INFINITY)[0].first_frame, Some(0));
    }
}
