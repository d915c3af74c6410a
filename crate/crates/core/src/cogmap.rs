//! Scene-level metric cognitive maps and per-question extracts.
//!
//! A [`MetricCogMap`] stores every object instance twice: once on a square
//! `N × N` grid laid over the scene's XY footprint (a cell and a cell range),
//! and once in meters (AABB center and size). Grid indices come from
//! `floor((x - x_min) / (x_max - x_min) * N)` clipped to `[0, N - 1]`, after
//! the footprint has been widened to a square.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{round6, Aabb2, Aabb3, Point3};

pub const DEFAULT_GRID_SIZE: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl SceneBounds {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let b = SceneBounds { x_min, x_max, y_min, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !all_finite || !(self.x_min < self.x_max) || !(self.y_min < self.y_max) {
            return Err(Error::invalid(format!(
                "scene bounds must satisfy x_min < x_max and y_min < y_max, got x [{}, {}] y [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    /// XY footprint of a point set.
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Result<Self> {
        let aabb = Aabb3::from_points(points).ok_or_else(|| Error::degenerate("no points to bound"))?;
        SceneBounds::new(aabb.min.x, aabb.max.x, aabb.min.y, aabb.max.y)
    }

    pub fn dx(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dy(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains(&self, other: &SceneBounds) -> bool {
        self.x_min <= other.x_min && other.x_max <= self.x_max && self.y_min <= other.y_min && other.y_max <= self.y_max
    }

    pub fn is_square(&self) -> bool {
        (self.dx() - self.dy()).abs() <= 1e-9 * self.dx().abs().max(self.dy().abs()).max(1.0)
    }

    pub fn union(&self, o: &SceneBounds) -> SceneBounds {
        SceneBounds {
            x_min: self.x_min.min(o.x_min),
            x_max: self.x_max.max(o.x_max),
            y_min: self.y_min.min(o.y_min),
            y_max: self.y_max.max(o.y_max),
        }
    }
}

/// Widens the shorter axis symmetrically so both extents match.
pub fn square_normalize(b: SceneBounds) -> SceneBounds {
    if b.is_square() {
        return b;
    }
    let (dx, dy) = (b.dx(), b.dy());
    let mut out = b;
    if dx > dy {
        let pad = (dx - dy) / 2.0;
        out.y_min = b.y_min - pad;
        out.y_max = b.y_max + pad;
    } else if dy > dx {
        let pad = (dy - dx) / 2.0;
        out.x_min = b.x_min - pad;
        out.x_max = b.x_max + pad;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct GridCell {
    pub gx: u32,
    pub gy: u32,
}

impl From<[u32; 2]> for GridCell {
    fn from(a: [u32; 2]) -> Self {
        GridCell { gx: a[0], gy: a[1] }
    }
}

impl From<GridCell> for [u32; 2] {
    fn from(c: GridCell) -> Self {
        [c.gx, c.gy]
    }
}

/// Inclusive cell range `[[gx_min, gx_max], [gy_min, gy_max]]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[[u32; 2]; 2]", into = "[[u32; 2]; 2]")]
pub struct GridBox {
    pub gx_min: u32,
    pub gx_max: u32,
    pub gy_min: u32,
    pub gy_max: u32,
}

impl GridBox {
    pub fn contains(&self, c: GridCell) -> bool {
        (self.gx_min..=self.gx_max).contains(&c.gx) && (self.gy_min..=self.gy_max).contains(&c.gy)
    }

    pub fn to_aabb2(&self) -> Aabb2 {
        Aabb2 {
            min: [self.gx_min as f64, self.gy_min as f64],
            max: [self.gx_max as f64, self.gy_max as f64],
        }
    }
}

impl From<[[u32; 2]; 2]> for GridBox {
    fn from(a: [[u32; 2]; 2]) -> Self {
        GridBox { gx_min: a[0][0], gx_max: a[0][1], gy_min: a[1][0], gy_max: a[1][1] }
    }
}

impl From<GridBox> for [[u32; 2]; 2] {
    fn from(b: GridBox) -> Self {
        [[b.gx_min, b.gx_max], [b.gy_min, b.gy_max]]
    }
}

fn grid_index(v: f64, lo: f64, hi: f64, n: u32) -> u32 {
    let g = ((v - lo) / (hi - lo) * n as f64).floor();
    g.clamp(0.0, (n - 1) as f64) as u32
}

/// Floor-then-clip mapping of a metric XY position onto the grid.
pub fn to_grid(x: f64, y: f64, bounds: &SceneBounds, n: u32) -> Result<GridCell> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::invalid(format!("non-finite grid coordinate ({x}, {y})")));
    }
    if n == 0 {
        return Err(Error::invalid("grid size must be >= 1"));
    }
    bounds.validate()?;
    Ok(GridCell {
        gx: grid_index(x, bounds.x_min, bounds.x_max, n),
        gy: grid_index(y, bounds.y_min, bounds.y_max, n),
    })
}

pub fn aabb_to_grid_box(aabb: &Aabb3, bounds: &SceneBounds, n: u32) -> Result<GridBox> {
    let lo = to_grid(aabb.min.x, aabb.min.y, bounds, n)?;
    let hi = to_grid(aabb.max.x, aabb.max.y, bounds, n)?;
    Ok(GridBox { gx_min: lo.gx, gx_max: hi.gx, gy_min: lo.gy, gy_max: hi.gy })
}

/// Convex hull of the XY projections, counter-clockwise, without repeated
/// or collinear vertices (monotone chain).
pub fn convex_hull_2d(points: &[Point3]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.iter().map(|p| [p.x, p.y]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Area of the convex hull of the floor points' XY projections, m².
pub fn room_area_from_floor(points: &[Point3]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::degenerate(format!("room area needs >= 3 floor points, got {}", points.len())));
    }
    let hull = convex_hull_2d(points);
    let n = hull.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    let area = twice.abs() / 2.0;
    if n < 3 || !(area > 0.0) {
        return Err(Error::degenerate("floor points span zero area"));
    }
    Ok(area)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub instance_id: u32,
    pub grid_position: GridCell,
    pub grid_box_position: GridBox,
    /// Meters.
    pub centroid: Point3,
    /// `[w, h, d]`: extents along x, y and z in meters.
    pub bounding_box_size: [f64; 3],
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl ObjectInstance {
    pub fn aabb(&self) -> Aabb3 {
        let half = Point3::from(self.bounding_box_size) * 0.5;
        Aabb3 { min: self.centroid - half, max: self.centroid + half }
    }
}

/// Scene-level map. Field names follow the published map layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricCogMap {
    pub scene_id: String,
    pub grid_size: u32,
    /// Raw (pre-normalization) extents along x and y, meters.
    pub room_size: [f64; 2],
    /// Square-normalized bounds.
    pub room_x_bound: [f64; 2],
    pub room_y_bound: [f64; 2],
    /// Convex-hull floor area in m², when floor points were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_area: Option<f64>,
    pub objects: BTreeMap<String, Vec<ObjectInstance>>,
}

impl MetricCogMap {
    pub fn bounds(&self) -> SceneBounds {
        SceneBounds {
            x_min: self.room_x_bound[0],
            x_max: self.room_x_bound[1],
            y_min: self.room_y_bound[0],
            y_max: self.room_y_bound[1],
        }
    }

    pub fn instances(&self, category: &str) -> &[ObjectInstance] {
        self.objects.get(category).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn instance_count(&self) -> usize {
        self.objects.values().map(Vec::len).sum()
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.objects.keys().map(String::as_str)
    }
}

/// One object of a scene annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedObject {
    pub category: String,
    pub aabb_min: Point3,
    pub aabb_max: Point3,
    /// Defaults to the AABB center; when given it must agree with it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<Point3>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawBounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

/// Input document describing one annotated scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneAnnotation {
    pub scene_id: String,
    pub objects: Vec<AnnotatedObject>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub floor_points: Vec<Point3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<RawBounds>,
}

impl SceneAnnotation {
    /// Raw bounds as given, or the XY footprint of objects and floor points.
    pub fn raw_bounds(&self) -> Result<SceneBounds> {
        if let Some(b) = self.bounds {
            return SceneBounds::new(b.x[0], b.x[1], b.y[0], b.y[1]);
        }
        let corners = self.objects.iter().flat_map(|o| [o.aabb_min, o.aabb_max]);
        let all: Vec<Point3> = corners.chain(self.floor_points.iter().copied()).collect();
        SceneBounds::from_points(&all)
    }

    pub fn build(&self, grid_size: u32) -> Result<MetricCogMap> {
        let mut map = build_scene_map(&self.scene_id, &self.objects, self.raw_bounds()?, grid_size)?;
        if self.floor_points.len() >= 3 {
            map.room_area = room_area_from_floor(&self.floor_points).ok().map(round6);
        }
        Ok(map)
    }
}

/// Builds the scene map: square-normalizes the bounds, places every object
/// on the grid, rounds metric fields to 1e-6 m and assigns instance ids in
/// (category, centroid x, y, z) order.
pub fn build_scene_map(scene_id: &str, objects: &[AnnotatedObject], raw: SceneBounds, grid_size: u32) -> Result<MetricCogMap> {
    raw.validate()?;
    if grid_size == 0 {
        return Err(Error::invalid("grid size must be >= 1"));
    }
    let bounds = square_normalize(raw);

    let mut staged = Vec::with_capacity(objects.len());
    for (i, obj) in objects.iter().enumerate() {
        let category = obj.category.trim().to_lowercase();
        if category.is_empty() {
            return Err(Error::invalid(format!("objects[{i}]: empty category")));
        }
        let aabb = Aabb3::new(obj.aabb_min, obj.aabb_max).map_err(|e| Error::invalid(format!("objects[{i}] ({category}): {e}")))?;
        let center = aabb.center();
        let centroid = match obj.centroid {
            Some(c) if c.distance(center) > 1e-6 => {
                return Err(Error::invalid(format!(
                    "objects[{i}] ({category}): centroid {:?} differs from AABB center {:?}",
                    c.to_array(),
                    center.to_array()
                )))
            }
            Some(c) => c,
            None => Point3::new(round6(center.x), round6(center.y), round6(center.z)),
        };
        let confidence = obj.confidence.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("objects[{i}] ({category}): confidence {confidence} outside [0, 1]")));
        }
        let grid_position = to_grid(center.x, center.y, &bounds, grid_size)?;
        let grid_box_position = aabb_to_grid_box(&aabb, &bounds, grid_size)?;
        staged.push((category, centroid, aabb.size().map(round6), grid_position, grid_box_position, confidence));
    }

    staged.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
            .then(a.1.z.total_cmp(&b.1.z))
    });

    let mut out: BTreeMap<String, Vec<ObjectInstance>> = BTreeMap::new();
    for (id, (category, centroid, size, grid_position, grid_box_position, confidence)) in staged.into_iter().enumerate() {
        out.entry(category).or_default().push(ObjectInstance {
            instance_id: id as u32,
            grid_position,
            grid_box_position,
            centroid,
            bounding_box_size: size,
            confidence,
        });
    }

    Ok(MetricCogMap {
        scene_id: scene_id.to_string(),
        grid_size,
        room_size: [round6(raw.dx()), round6(raw.dy())],
        room_x_bound: [bounds.x_min, bounds.x_max],
        room_y_bound: [bounds.y_min, bounds.y_max],
        room_area: None,
        objects: out,
    })
}

/// The four parallel components handed to a reasoner for one question.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryCogMap {
    pub cognitive_map: IndexMap<String, Vec<GridCell>>,
    pub cognitive_box_map: IndexMap<String, Vec<GridBox>>,
    pub box_centroid: IndexMap<String, Vec<Point3>>,
    pub box_size: IndexMap<String, Vec<[f64; 3]>>,
}

impl QueryCogMap {
    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.cognitive_map.keys().map(String::as_str)
    }

    /// Requested categories that have no instance in the scene.
    pub fn missing(&self) -> Vec<&str> {
        self.cognitive_map.iter().filter(|(_, v)| v.is_empty()).map(|(k, _)| k.as_str()).collect()
    }

    pub fn len_of(&self, category: &str) -> usize {
        self.cognitive_map.get(category).map_or(0, Vec::len)
    }

    pub fn to_compact_json(&self) -> String {
        serde_json::to_string(self).expect("query map serializes")
    }
}

/// Pulls every instance of the requested categories out of the scene map.
/// Unknown categories are kept as empty entries; see [`QueryCogMap::missing`].
pub fn extract_query_map(map: &MetricCogMap, categories: &[impl AsRef<str>]) -> QueryCogMap {
    let mut q = QueryCogMap::default();
    for cat in categories {
        let cat = cat.as_ref();
        if q.cognitive_map.contains_key(cat) {
            continue;
        }
        let inst = map.instances(cat);
        q.cognitive_map.insert(cat.to_string(), inst.iter().map(|o| o.grid_position).collect());
        q.cognitive_box_map.insert(cat.to_string(), inst.iter().map(|o| o.grid_box_position).collect());
        q.box_centroid.insert(cat.to_string(), inst.iter().map(|o| o.centroid).collect());
        q.box_size.insert(cat.to_string(), inst.iter().map(|o| o.bounding_box_size).collect());
    }
    q
}

/// A serialized map document with structural invariants checked on decode.
pub trait MapDocument: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<()>;
}

impl MapDocument for MetricCogMap {
    fn validate(&self) -> Result<()> {
        let n = self.grid_size;
        if n == 0 {
            return Err(Error::invalid("grid_size: must be >= 1"));
        }
        let b = self.bounds();
        b.validate().map_err(|e| Error::invalid(format!("room_x_bound/room_y_bound: {e}")))?;
        if !b.is_square() {
            return Err(Error::invalid("room_x_bound/room_y_bound: bounds are not square-normalized"));
        }
        if !self.room_size.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid("room_size: extents must be finite and nonnegative"));
        }
        let mut ids = BTreeSet::new();
        for (cat, list) in &self.objects {
            for (i, o) in list.iter().enumerate() {
                let at = format!("objects.{cat}[{i}]");
                if !ids.insert(o.instance_id) {
                    return Err(Error::invalid(format!("{at}.instance_id: duplicate id {}", o.instance_id)));
                }
                let g = o.grid_box_position;
                if o.grid_position.gx >= n || o.grid_position.gy >= n {
                    return Err(Error::invalid(format!("{at}.grid_position: outside [0, {}]", n - 1)));
                }
                if g.gx_min > g.gx_max || g.gy_min > g.gy_max || g.gx_max >= n || g.gy_max >= n {
                    return Err(Error::invalid(format!("{at}.grid_box_position: inverted or outside [0, {}]", n - 1)));
                }
                if !g.contains(o.grid_position) {
                    return Err(Error::invalid(format!("{at}.grid_box_position: does not contain grid_position")));
                }
                if !o.centroid.is_finite() {
                    return Err(Error::invalid(format!("{at}.centroid: non-finite")));
                }
                if !o.bounding_box_size.iter().all(|s| s.is_finite() && *s >= 0.0) {
                    return Err(Error::invalid(format!("{at}.bounding_box_size: must be nonnegative")));
                }
                if !(0.0..=1.0).contains(&o.confidence) {
                    return Err(Error::invalid(format!("{at}.confidence: outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

impl MapDocument for QueryCogMap {
    fn validate(&self) -> Result<()> {
        let keys: Vec<_> = self.cognitive_map.keys().collect();
        let same = |other: Vec<&String>| {
            let mut a = keys.clone();
            let mut b = other;
            a.sort();
            b.sort();
            a == b
        };
        if !same(self.cognitive_box_map.keys().collect()) || !same(self.box_centroid.keys().collect()) || !same(self.box_size.keys().collect()) {
            return Err(Error::invalid("query map components have different category keys"));
        }
        for (cat, cells) in &self.cognitive_map {
            let n = cells.len();
            if self.cognitive_box_map[cat].len() != n || self.box_centroid[cat].len() != n || self.box_size[cat].len() != n {
                return Err(Error::invalid(format!("{cat}: component lists differ in length")));
            }
        }
        Ok(())
    }
}

pub fn encode_map<T: MapDocument>(doc: &T) -> String {
    serde_json::to_string_pretty(doc).expect("map documents serialize")
}

pub fn decode_map<T: MapDocument>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: T = serde_path_to_error::deserialize(de)?;
    doc.validate()?;
    Ok(doc)
}
