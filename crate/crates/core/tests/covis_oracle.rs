use cogmap::covis::{build_covis_map, dedup_detections, merge_segments, FrameObservation, Segment};
use cogmap::geometry::{project_point, Aabb3, CameraPose, Intrinsics, Point3};
use cogmap::synth::{cast, raycast_scene, render, RaycastParams, SceneBox};

const DEPTH_TOL: f64 = 0.05;

fn hi_res() -> RaycastParams {
    RaycastParams { width: 160, height: 120, focal: 100.0, frames: 6, ..Default::default() }
}

/// Ground truth: the point projects into the target camera and nothing
/// sits in front of it along the target's ray.
fn truly_visible(boxes: &[SceneBox], p: Point3, target: &CameraPose) -> bool {
    if project_point(p, target).is_none() {
        return false;
    }
    let eye = target.center();
    let d = p - eye;
    match cast(boxes, eye, d) {
        Some((t, _)) => (1.0 - t) * d.norm() < DEPTH_TOL,
        None => false,
    }
}

/// Fraction of ordered-pair point verdicts that agree with ray casting.
fn agreement(boxes: &[SceneBox], frames: &[FrameObservation]) -> f64 {
    let map = build_covis_map(frames, DEPTH_TOL, 1).unwrap();
    let (mut agree, mut total) = (0usize, 0usize);
    for a in frames {
        for b in frames {
            if a.frame_index == b.frame_index {
                continue;
            }
            let flags = map.flags(a.frame_index, b.frame_index).unwrap();
            for (pt, &f) in a.points.iter().zip(flags) {
                total += 1;
                agree += usize::from(f == truly_visible(boxes, pt.xyz, &b.pose));
            }
        }
    }
    agree as f64 / total as f64
}

fn slab(min: [f64; 3], max: [f64; 3]) -> SceneBox {
    SceneBox { aabb: Aabb3 { min: min.into(), max: max.into() }, object: None }
}

fn camera(eye: [f64; 3], target: [f64; 3]) -> CameraPose {
    let k = Intrinsics { fx: 100.0, fy: 100.0, cx: 80.0, cy: 60.0 };
    CameraPose::look_at(eye.into(), target.into(), Point3::new(0.0, 0.0, 1.0), k, 160, 120).unwrap()
}

/// Rooms `x ∈ [0, 4]` and `x ∈ [4.1, 8.1]` separated by a solid wall, three
/// cameras in each; frames 0..3 are in the west room.
fn two_rooms() -> (Vec<SceneBox>, Vec<FrameObservation>) {
    let boxes = vec![
        slab([-0.1, -0.1, -0.1], [8.2, 4.1, 0.0]),
        slab([-0.1, -0.1, 0.0], [0.0, 4.1, 2.6]),
        slab([8.1, -0.1, 0.0], [8.2, 4.1, 2.6]),
        slab([0.0, -0.1, 0.0], [8.1, 0.0, 2.6]),
        slab([0.0, 4.0, 0.0], [8.1, 4.1, 2.6]),
        slab([4.0, 0.0, 0.0], [4.1, 4.0, 2.6]),
        slab([1.5, 1.5, 0.0], [2.2, 2.1, 0.8]),
        slab([5.8, 2.0, 0.0], [6.4, 2.8, 1.1]),
    ];
    let poses = [
        camera([0.5, 0.5, 1.6], [3.0, 3.0, 0.4]),
        camera([3.5, 0.6, 1.6], [1.5, 3.0, 0.4]),
        camera([2.0, 3.6, 1.6], [2.0, 0.5, 0.4]),
        camera([4.6, 0.5, 1.6], [7.0, 3.0, 0.4]),
        camera([7.6, 0.6, 1.6], [5.0, 3.0, 0.4]),
        camera([6.0, 3.6, 1.6], [6.0, 0.5, 0.4]),
    ];
    let frames = poses.into_iter().enumerate().map(|(i, p)| render(&boxes, i as u32, p).0).collect();
    (boxes, frames)
}

#[test]
fn raycast_scenes_agree_with_oracle() {
    for seed in 0..3 {
        let s = raycast_scene(seed, &hi_res()).unwrap();
        let a = agreement(&s.boxes, &s.frames);
        assert!(a >= 0.95, "seed {seed}: agreement {a:.4}");
    }
}

#[test]
fn shared_wall_blocks_covisibility() {
    let (boxes, frames) = two_rooms();
    let a = agreement(&boxes, &frames);
    assert!(a >= 0.95, "agreement {a:.4}");

    let map = build_covis_map(&frames, DEPTH_TOL, 1).unwrap();
    let west = |i: u32| i < 3;
    let (mut cross, mut cross_total, mut same) = (0usize, 0usize, 0usize);
    for a in &frames {
        for b in &frames {
            if a.frame_index == b.frame_index {
                continue;
            }
            let hits = map.flags(a.frame_index, b.frame_index).unwrap().iter().filter(|f| **f).count();
            if west(a.frame_index) == west(b.frame_index) {
                same += hits;
            } else {
                cross += hits;
                cross_total += a.points.len();
            }
        }
    }
    assert!(same > 0);
    assert!((cross as f64) < 0.001 * cross_total as f64, "{cross} of {cross_total} cross-room points covisible");
}

#[test]
fn dedup_then_merge_recovers_planted_objects() {
    let mut hits = 0;
    for seed in 0..10 {
        let s = raycast_scene(seed, &RaycastParams::default()).unwrap();
        let mut used: Vec<FrameObservation> = s.frames.iter().filter(|f| s.detections.iter().any(|d| d.frame_index == f.frame_index)).cloned().collect();
        used.sort_by_key(|f| f.frame_index);
        let covis = build_covis_map(&used, DEPTH_TOL, 1).unwrap();
        let mut segments = Vec::new();
        for cat in s.detected_counts().keys() {
            let dets: Vec<_> = s.detections.iter().filter(|d| &d.category == cat).cloned().collect();
            let kept = dedup_detections(&dets, &covis, 0.5).unwrap();
            assert_eq!(dedup_detections(&kept, &covis, 0.5).unwrap(), kept, "seed {seed}: dedup not idempotent");
            segments.extend(kept.into_iter().map(|d| Segment { category: cat.clone(), confidence: d.confidence, points: d.segment }));
        }
        let merged = merge_segments(&segments, 0.2).unwrap();
        hits += usize::from(merged.len() == s.detected_counts().values().sum::<usize>());
    }
    assert!(hits >= 9, "{hits}/10 scenes recovered");
}
