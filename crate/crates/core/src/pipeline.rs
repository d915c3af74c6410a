//! Reconstruction to scene map: floor alignment, covisibility, detection
//! dedup, segment merging, crucial frames and appearance records.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cogcot::{build_occupancy_grid, OccupancyGrid};
use crate::cogmap::{build_scene_map, room_area_from_floor, AnnotatedObject, MetricCogMap, SceneBounds};
use crate::config::RunConfig;
use crate::covis::{
    align_to_floor, appearance_frames, build_covis_map, dedup_detections, merge_segments, quantize_points, select_crucial_frames,
    AppearanceRecord, Detection, FloorAlignment, FrameObservation, MergedInstance, Segment,
};
use crate::error::{Error, Result};
use crate::geometry::{round6, Point3, RansacParams, RigidTransform};

/// Reads either a JSON array or one JSON value per line.
pub fn parse_documents<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let t = text.trim_start();
    if t.starts_with('[') {
        let de = &mut serde_json::Deserializer::from_str(t);
        return Ok(serde_path_to_error::deserialize(de)?);
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let v = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse { path: format!("line {}", i + 1), message: e.to_string() })?;
        out.push(v);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub detections: usize,
    pub kept: usize,
    pub suppressed: usize,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scene_id: String,
    pub frames: usize,
    pub detections: usize,
    pub suppressed: usize,
    pub instances: usize,
    pub per_category: BTreeMap<String, CategoryCounts>,
    pub selected_frames: Vec<u32>,
    pub alignment: FloorAlignment,
    pub config: RunConfig,
    /// Wall-clock milliseconds per stage, only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub map: MetricCogMap,
    pub occupancy: Option<OccupancyGrid>,
    pub appearance: Vec<AppearanceRecord>,
    pub instances: Vec<MergedInstance>,
    pub report: PipelineReport,
}

struct Clock {
    on: bool,
    last: Instant,
    laps: BTreeMap<String, f64>,
}

impl Clock {
    fn lap(&mut self, stage: &str) {
        if self.on {
            let now = Instant::now();
            self.laps.insert(stage.to_string(), (now - self.last).as_secs_f64() * 1e3);
            self.last = now;
        }
    }
}

/// Runs every stage. `queried` restricts crucial-frame anchoring to the
/// given categories; by default every detected category anchors a frame.
pub fn run_pipeline(
    scene_id: &str,
    frames: &[FrameObservation],
    detections: &[Detection],
    cfg: &RunConfig,
    queried: Option<&[String]>,
    timings: bool,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::invalid("pipeline needs at least one frame"));
    }
    for d in detections {
        d.validate()?;
    }
    let mut clock = Clock { on: timings, last: Instant::now(), laps: BTreeMap::new() };

    let scaled: Vec<FrameObservation> = frames.iter().map(|f| f.transformed(cfg.scale, &RigidTransform::IDENTITY)).collect();
    let ransac = RansacParams { iterations: cfg.ransac_iterations, inlier_tol: cfg.ransac_tol, seed: cfg.seed };
    let alignment = align_to_floor(&scaled, &ransac, cfg.vertical_angle_deg)?;
    let t = alignment.transform;
    let mut aligned: Vec<FrameObservation> = scaled.iter().map(|f| f.transformed(1.0, &t)).collect();
    aligned.sort_by_key(|f| f.frame_index);
    let dets: Vec<Detection> = detections
        .iter()
        .map(|d| Detection { segment: d.segment.iter().map(|p| t.apply(*p * cfg.scale)).collect(), ..d.clone() })
        .collect();
    clock.lap("floor_alignment");

    let mut used: Vec<u32> = dets.iter().map(|d| d.frame_index).collect();
    used.sort();
    used.dedup();
    let used_frames: Vec<FrameObservation> = aligned.iter().filter(|f| used.binary_search(&f.frame_index).is_ok()).cloned().collect();
    let mut by_cat: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for d in &dets {
        by_cat.entry(d.category.trim().to_lowercase()).or_default().push(Detection { category: d.category.trim().to_lowercase(), ..d.clone() });
    }
    let covis = if used_frames.is_empty() { None } else { Some(build_covis_map(&used_frames, cfg.depth_tol, cfg.covis_radius)?) };
    clock.lap("covisibility");

    let mut per_category: BTreeMap<String, CategoryCounts> = BTreeMap::new();
    let mut segments = Vec::new();
    for (cat, list) in &by_cat {
        let kept = dedup_detections(list, covis.as_ref().expect("detections imply frames"), cfg.overlap_frac)?;
        per_category.insert(cat.clone(), CategoryCounts { detections: list.len(), kept: kept.len(), suppressed: list.len() - kept.len(), instances: 0 });
        for k in kept {
            if k.segment.is_empty() {
                continue;
            }
            segments.push(Segment { category: cat.clone(), confidence: k.confidence, points: k.segment });
        }
    }
    clock.lap("dedup");

    let instances = merge_segments(&segments, cfg.merge_frac)?;
    for inst in &instances {
        per_category.get_mut(&inst.category).expect("category seen in dedup").instances += 1;
    }
    clock.lap("merge");

    // Selection works on ordinals into the sorted frame list.
    let ordinal: BTreeMap<u32, u32> = aligned.iter().enumerate().map(|(i, f)| (f.frame_index, i as u32)).collect();
    let by_ordinal: Vec<Detection> = dets.iter().filter_map(|d| ordinal.get(&d.frame_index).map(|&o| Detection { frame_index: o, ..d.clone() })).collect();
    let anchor: Vec<String> = match queried {
        Some(q) => q.iter().map(|c| c.trim().to_lowercase()).collect(),
        None => by_cat.keys().cloned().collect(),
    };
    let picked = select_crucial_frames(&by_ordinal, aligned.len(), cfg.frame_budget, &anchor);
    let selected: Vec<FrameObservation> = picked.iter().map(|&o| aligned[o as usize].clone()).collect();
    clock.lap("frame_selection");

    let quantized: Vec<MergedInstance> = instances.iter().map(|m| MergedInstance { points: quantize_points(&m.points, cfg.voxel_size), ..m.clone() }).collect();
    let appearance = appearance_frames(&quantized, &selected, cfg.occl_tol);
    clock.lap("appearance");

    let all_points: Vec<Point3> = aligned.iter().flat_map(|f| f.points.iter().map(|p| p.xyz)).collect();
    let bounds = SceneBounds::from_points(&all_points)?;
    let objects: Vec<AnnotatedObject> = instances
        .iter()
        .map(|m| {
            let b = m.aabb();
            AnnotatedObject { category: m.category.clone(), aabb_min: b.min, aabb_max: b.max, centroid: None, confidence: Some(m.confidence), points: vec![] }
        })
        .collect();
    let mut map = build_scene_map(scene_id, &objects, bounds, cfg.grid_size)?;
    let floor: Vec<Point3> = all_points.iter().copied().filter(|p| p.z.abs() <= cfg.ransac_tol).collect();
    map.room_area = room_area_from_floor(&floor).ok().map(round6);
    let occupancy = if floor.is_empty() { None } else { Some(build_occupancy_grid(&floor, cfg.cell_size, cfg.min_cell_points)?) };
    clock.lap("scene_map");

    let report = PipelineReport {
        scene_id: scene_id.to_string(),
        frames: frames.len(),
        detections: detections.len(),
        suppressed: per_category.values().map(|c| c.suppressed).sum(),
        instances: instances.len(),
        per_category,
        selected_frames: picked.iter().map(|&o| aligned[o as usize].frame_index).collect(),
        alignment,
        config: cfg.clone(),
        timings_ms: timings.then_some(clock.laps),
    };
    Ok(PipelineOutput { map, occupancy, appearance, instances, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{raycast_scene, RaycastParams};

    #[test]
    fn planted_scene_recovers_instances() {
        let s = raycast_scene(4, &RaycastParams::default()).unwrap();
        let out = run_pipeline(&s.scene_id, &s.frames, &s.detections, &RunConfig::default(), None, false).unwrap();
        let want: usize = s.detected_counts().values().sum();
        assert_eq!(out.map.instance_count(), want);
        assert!(out.report.suppressed > 0);
        assert!(out.report.timings_ms.is_none());
        assert_eq!(out.appearance.len(), want);
        assert!(out.appearance.iter().all(|a| a.first_frame.is_some()));
        assert!(out.occupancy.unwrap().valid_count > 0);
    }

    #[test]
    fn empty_detections_give_empty_map() {
        let s = raycast_scene(1, &RaycastParams::default()).unwrap();
        let out = run_pipeline(&s.scene_id, &s.frames, &[], &RunConfig::default(), None, false).unwrap();
        assert_eq!(out.map.instance_count(), 0);
        assert_eq!(out.report.selected_frames.len(), s.frames.len());
    }

    #[test]
    fn documents_parse_as_array_or_lines() {
        let a: Vec<u32> = parse_documents("[1, 2, 3]").unwrap();
        let b: Vec<u32> = parse_documents("1\n2\n\n3\n").unwrap();
        assert_eq!(a, b);
        assert!(parse_documents::<u32>("1\nx\n").is_err());
    }
}
