//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cogmap::cogcot::{
    build_occupancy_grid, extract_answer, reason_absolute_distance, reason_appearance_order, reason_relative_direction,
    reason_relative_distance, reason_room_size, render_trace, Answer, OccupancyGrid,
};
use cogmap::cogmap::{
    build_scene_map, decode_map, encode_map, extract_query_map, square_normalize, to_grid, AnnotatedObject, GridBox, GridCell, MetricCogMap,
    QueryCogMap, SceneAnnotation, SceneBounds,
};
use cogmap::config::RunConfig;
use cogmap::covis::{build_covis_map, dedup_detections, AppearanceRecord, FrameObservation};
use cogmap::geometry::{aabb_sq_dist_2d, Aabb2, Point3};
use cogmap::pipeline::run_pipeline;
use cogmap::synth::{raycast_scene, RaycastParams};
use cogmap_cli::{cmd_eval, cmd_gen_fixtures, ConfigArgs, EvalArgs, GenFixturesArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn within(label: &str, elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("{label} took {elapsed:?}, limit {limit:?}"))
    }
}

fn qmap(entries: &[(&str, [u32; 2], [[u32; 2]; 2], [f64; 3], [f64; 3])]) -> QueryCogMap {
    let mut q = QueryCogMap::default();
    for (cat, cell, bx, c, s) in entries {
        q.cognitive_map.entry(cat.to_string()).or_default().push(GridCell::from(*cell));
        q.cognitive_box_map.entry(cat.to_string()).or_default().push(GridBox::from(*bx));
        q.box_centroid.entry(cat.to_string()).or_default().push(Point3::from(*c));
        q.box_size.entry(cat.to_string()).or_default().push(*s);
    }
    q
}

fn room_size_golden() -> Check {
    let ann: SceneAnnotation = serde_json::from_str(&std::fs::read_to_string(fixture("room_scene.json")).unwrap()).unwrap();
    let grid = build_occupancy_grid(&ann.floor_points, 0.6, 1).map_err(|e| e.to_string())?;
    let golden = std::fs::read_to_string(fixture("room_size.golden.txt")).unwrap();
    let start = Instant::now();
    let tr = reason_room_size(&grid).map_err(|e| e.to_string())?;
    let text = render_trace(&tr) + "\n";
    let elapsed = start.elapsed();
    if text != golden {
        return Err(format!("trace differs from golden:\n{text}"));
    }
    if tr.answer != Answer::Number(27.36) || grid.valid_count != 76 {
        return Err(format!("{} cells, answer {}", grid.valid_count, tr.answer));
    }
    let square = OccupancyGrid::from_flags(0.6, [0.0, 0.0], (0..20).map(|r| (0..20).map(|c| r * 20 + c < 76).collect()).collect());
    if !render_trace(&reason_room_size(&square).unwrap()).contains("total area = 76 × 0.36 = 27.36") {
        return Err("20×20 grid with 76 valid cells".into());
    }
    within("room-size trace", elapsed, Duration::from_millis(1))?;
    Ok(format!("76 cells → 27.36 m² in {elapsed:?}"))
}

fn absolute_distance_delta() -> Check {
    let q = qmap(&[
        ("trash bin", [5, 13], [[4, 5], [12, 13]], [-1.50, 0.58, 0.12], [0.36, 0.30, 0.37]),
        ("sofa", [10, 10], [[9, 12], [9, 11]], [1.76, -0.10, 0.34], [1.8, 0.9, 0.8]),
    ]);
    let tr = reason_absolute_distance(&q, "trash bin", "sofa").map_err(|e| e.to_string())?;
    let step = tr.steps.iter().find(|s| s.label == "Centroid difference").ok_or("no centroid difference step")?;
    let delta = &step.values[6..9];
    for (got, want) in delta.iter().zip([3.26, 0.68, 0.22]) {
        if (got - want).abs() > 1e-9 {
            return Err(format!("Δ = {delta:?}"));
        }
    }
    Ok(format!("Δ = {delta:?}"))
}

fn relative_distance_step() -> Check {
    let q = qmap(&[
        ("tv", [12, 2], [[10, 14], [0, 5]], [0.0; 3], [0.0; 3]),
        ("chair", [16, 2], [[15, 18], [2, 3]], [0.0; 3], [0.0; 3]),
        ("sofa", [18, 10], [[17, 19], [9, 12]], [0.0; 3], [0.0; 3]),
    ]);
    let tr = reason_relative_distance(&q, "tv", &["chair", "sofa"]).map_err(|e| e.to_string())?;
    let want = "dx = 15 - 14 = 1, dy = 0 (y-axis overlap), AABB distance = 1^2 + 0^2 = 1.0";
    if !tr.steps.iter().any(|s| s.expression == want) {
        return Err(format!("missing step in\n{}", render_trace(&tr)));
    }
    Ok("chair step matches exactly".into())
}

fn rec(cat: &str, f: Option<u32>) -> AppearanceRecord {
    AppearanceRecord { category: cat.into(), instance_id: 0, first_frame: f }
}

fn appearance_order() -> Check {
    let records = [rec("printer", Some(249)), rec("mouse", Some(253)), rec("door", Some(30))];
    let options: Vec<String> = ["A. mouse, door, printer", "B. door, printer, mouse", "C. printer, door, mouse", "D. door, mouse, printer"].map(String::from).to_vec();
    let tr = reason_appearance_order(&records, &["door", "printer", "mouse"], &options).map_err(|e| e.to_string())?;
    let text = render_trace(&tr);
    if tr.answer != Answer::Text("B".into()) || !text.contains("door (30) < printer (249) < mouse (253)") {
        return Err(text);
    }
    let absent = [rec("door", Some(30)), rec("mouse", Some(253))];
    let tr = reason_appearance_order(&absent, &["door", "printer", "mouse"], &[]).map_err(|e| e.to_string())?;
    if !tr.notes.iter().any(|n| n == "printer not detected") {
        return Err(render_trace(&tr));
    }
    Ok("door → printer → mouse = B; absent printer noted".into())
}

fn quadrant(f: (f64, f64), t: (f64, f64)) -> &'static str {
    let a = t.1.atan2(t.0) - f.1.atan2(f.0);
    match (a.cos() > 0.0, a.sin() > 0.0) {
        (true, true) => "front-left",
        (true, false) => "front-right",
        (false, true) => "back-left",
        (false, false) => "back-right",
    }
}

fn direction_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let (mut checked, mut skipped) = (0, 0);
    for _ in 0..10_000 {
        let mut c = || [rng.random_range(0..20u32), rng.random_range(0..20u32)];
        let (o, f, t) = (c(), c(), c());
        let fv = (f[0] as f64 - o[0] as f64, f[1] as f64 - o[1] as f64);
        let tv = (t[0] as f64 - o[0] as f64, t[1] as f64 - o[1] as f64);
        let dot = fv.0 * tv.0 + fv.1 * tv.1;
        let cross = fv.0 * tv.1 - fv.1 * tv.0;
        if fv == (0.0, 0.0) || tv == (0.0, 0.0) || dot == 0.0 || cross == 0.0 {
            skipped += 1;
            continue;
        }
        let z = [[0, 0], [0, 0]];
        let q = qmap(&[("a", o, z, [0.0; 3], [0.0; 3]), ("b", f, z, [0.0; 3], [0.0; 3]), ("c", t, z, [0.0; 3], [0.0; 3])]);
        let tr = reason_relative_direction(&q, "a", "b", "c").map_err(|e| e.to_string())?;
        let want = quadrant(fv, tv);
        if tr.answer != Answer::Text(want.into()) {
            return Err(format!("o={o:?} f={f:?} t={t:?}: got {}, oracle {want}", tr.answer));
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    within("direction suite", elapsed, Duration::from_secs(1))?;
    Ok(format!("{checked} agree, {skipped} degenerate skipped, {elapsed:?}"))
}

/// Boundary lattice points of a box whose corners sit on the lattice.
fn boundary(b: &Aabb2, step: f64) -> Vec<[f64; 2]> {
    let nx = ((b.max[0] - b.min[0]) / step).round() as usize;
    let ny = ((b.max[1] - b.min[1]) / step).round() as usize;
    let mut out = Vec::new();
    for i in 0..=nx {
        for j in 0..=ny {
            if i == 0 || j == 0 || i == nx || j == ny {
                out.push([b.min[0] + i as f64 * step, b.min[1] + j as f64 * step]);
            }
        }
    }
    out
}

fn inside(p: [f64; 2], b: &Aabb2) -> bool {
    (b.min[0]..=b.max[0]).contains(&p[0]) && (b.min[1]..=b.max[1]).contains(&p[1])
}

/// Minimum squared distance by exhaustive lattice sampling of both boundaries.
fn sampled_sq_dist(a: &Aabb2, b: &Aabb2, step: f64) -> f64 {
    let (pa, pb) = (boundary(a, step), boundary(b, step));
    if pa.iter().any(|p| inside(*p, b)) || pb.iter().any(|p| inside(*p, a)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for p in &pa {
        for q in &pb {
            best = best.min((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2));
        }
    }
    best
}

fn aabb_oracle() -> Check {
    const STEP: f64 = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let mut bx = || {
            let x = rng.random_range(-16..16) as f64 * STEP;
            let y = rng.random_range(-16..16) as f64 * STEP;
            let w = rng.random_range(0..8) as f64 * STEP;
            let h = rng.random_range(0..8) as f64 * STEP;
            Aabb2::new([x, y], [x + w, y + h]).unwrap()
        };
        let (a, b) = (bx(), bx());
        let got = aabb_sq_dist_2d(&a, &b).map_err(|e| e.to_string())?;
        let want = sampled_sq_dist(&a, &b, STEP);
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-6 {
            return Err(format!("{a:?} {b:?}: {got} vs sampled {want}"));
        }
    }
    let elapsed = start.elapsed();
    within("AABB suite", elapsed, Duration::from_secs(10))?;
    Ok(format!("max |error| {worst:e}, {elapsed:?}"))
}

fn covis_dedup() -> Check {
    let cfg = RunConfig::default();
    let start = Instant::now();
    let (mut recovered, mut idempotent) = (0usize, 0usize);
    const SCENES: u64 = 50;
    for seed in 0..SCENES {
        let s = raycast_scene(1000 + seed, &RaycastParams::default()).map_err(|e| e.to_string())?;
        let out = run_pipeline(&s.scene_id, &s.frames, &s.detections, &cfg, None, false).map_err(|e| e.to_string())?;
        let want: usize = s.detected_counts().values().sum();
        recovered += usize::from(out.map.instance_count() == want);

        let mut used: Vec<FrameObservation> = s.frames.clone();
        used.sort_by_key(|f| f.frame_index);
        let covis = build_covis_map(&used, cfg.depth_tol, cfg.covis_radius).map_err(|e| e.to_string())?;
        let mut by_cat: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for d in &s.detections {
            by_cat.entry(d.category.as_str()).or_default().push(d.clone());
        }
        let stable = by_cat.values().all(|dets| {
            let once = dedup_detections(dets, &covis, cfg.overlap_frac).unwrap();
            dedup_detections(&once, &covis, cfg.overlap_frac).unwrap() == once
        });
        idempotent += usize::from(stable);
    }
    let elapsed = start.elapsed();
    let rate = recovered as f64 / SCENES as f64;
    let summary = format!("count recovered {recovered}/{SCENES}, idempotent {idempotent}/{SCENES}, {elapsed:?}");
    if rate < 0.95 || idempotent as u64 != SCENES {
        return Err(summary);
    }
    within("covisibility suite", elapsed, Duration::from_secs(60))?;
    Ok(summary)
}

fn gt_upper_bound() -> Check {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let fx = dir.path().join("fx");
    let start = Instant::now();
    let cfg = ConfigArgs { seed: Some(2024), ..Default::default() };
    cmd_gen_fixtures(&GenFixturesArgs { scenes: 30, raycast: 0, out: fx.clone(), cfg: cfg.clone() }).map_err(|e| e.to_string())?;
    let report_path = dir.path().join("report.json");
    cmd_eval(&EvalArgs {
        qa: fx.join("qa.jsonl"),
        maps: fx.join("maps"),
        vocab: Some(fx.join("vocab.json")),
        out: Some(report_path.clone()),
        traces_dir: None,
        cfg,
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report_path).unwrap()).unwrap();
    let total = report["total"].as_u64().unwrap_or(0);
    let overall = report["overall"].as_f64().unwrap_or(0.0);
    let tasks = report["per_task"].as_object().map_or(0, |m| m.len());
    let summary = format!("{total} questions over {tasks} tasks, overall {overall}, {elapsed:?}");
    if total < 200 || tasks < 6 || overall != 1.0 {
        return Err(summary);
    }
    within("GT evaluation", elapsed, Duration::from_secs(30))?;
    Ok(summary)
}

fn random_map(rng: &mut ChaCha8Rng, k: usize) -> MetricCogMap {
    const CATS: [&str; 6] = ["chair", "table", "sofa", "trash bin", "lamp", "tv"];
    let n = rng.random_range(0..8);
    let objects: Vec<AnnotatedObject> = (0..n)
        .map(|_| {
            let mut c = || rng.random_range(-500..500) as f64 / 100.0;
            let (x, y, z) = (c(), c(), c().abs() / 5.0);
            let mut s = || rng.random_range(1..200) as f64 / 100.0;
            let (w, d, h) = (s(), s(), s());
            AnnotatedObject {
                category: CATS[rng.random_range(0..CATS.len())].into(),
                aabb_min: Point3::new(x, y, z),
                aabb_max: Point3::new(x + w, y + d, z + h),
                centroid: None,
                confidence: Some(rng.random_range(0.0..1.0)),
                points: vec![],
            }
        })
        .collect();
    let bounds = SceneBounds::new(-6.0, 7.0 + rng.random_range(0.0..3.0), -6.0, 7.0).unwrap();
    build_scene_map(&format!("scene_{k}"), &objects, bounds, rng.random_range(5..40)).unwrap()
}

fn round_trips() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..1000 {
        let map = random_map(&mut rng, k);
        let text = encode_map(&map);
        let back: MetricCogMap = decode_map(&text).map_err(|e| format!("map {k}: {e}"))?;
        if back != map || encode_map(&back) != text {
            return Err(format!("map {k} changed across a round trip"));
        }
        let cats: Vec<&str> = map.categories().collect();
        let q = extract_query_map(&map, &cats);
        let qback: QueryCogMap = decode_map(&encode_map(&q)).map_err(|e| format!("query map {k}: {e}"))?;
        if qback != q {
            return Err(format!("query map {k} changed across a round trip"));
        }
    }
    for k in 0..1000 {
        let c = |rng: &mut ChaCha8Rng| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.0..2.0)];
        let s = |rng: &mut ChaCha8Rng| [rng.random_range(0.05..2.0), rng.random_range(0.05..2.0), rng.random_range(0.05..2.0)];
        let tr = match k % 3 {
            0 => {
                let q = qmap(&[("a", [0, 0], [[0, 0], [0, 0]], c(&mut rng), s(&mut rng)), ("b", [0, 0], [[0, 0], [0, 0]], c(&mut rng), s(&mut rng))]);
                reason_absolute_distance(&q, "a", "b")
            }
            1 => {
                let n = rng.random_range(1..12);
                let flags = (0..n).map(|_| (0..n).map(|_| rng.random_bool(0.5)).collect()).collect();
                reason_room_size(&OccupancyGrid::from_flags(rng.random_range(0.1..1.0), [0.0, 0.0], flags))
            }
            _ => {
                let mut g = || [rng.random_range(0..20u32), rng.random_range(0..20u32)];
                let (o, mut f, t) = (g(), g(), g());
                if f == o {
                    f = [(o[0] + 1) % 20, o[1]];
                }
                let z = [[0, 0], [0, 0]];
                reason_relative_direction(&qmap(&[("a", o, z, [0.0; 3], [0.0; 3]), ("b", f, z, [0.0; 3], [0.0; 3]), ("c", t, z, [0.0; 3], [0.0; 3])]), "a", "b", "c")
            }
        }
        .map_err(|e| format!("trace {k}: {e}"))?;
        let text = render_trace(&tr);
        let got = extract_answer(&text).ok_or_else(|| format!("trace {k}: no answer tag"))?;
        let same = match &tr.answer {
            Answer::Number(v) => got.parse::<f64>().ok() == Some(*v),
            Answer::Text(s) => got == s,
        };
        if !same {
            return Err(format!("trace {k}: extracted {got}, answer {}", tr.answer));
        }
    }
    Ok("1000 maps and 1000 traces".into())
}

fn grid_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..10_000 {
        let x0 = rng.random_range(-50.0..50.0);
        let y0 = rng.random_range(-50.0..50.0);
        let raw = SceneBounds::new(x0, x0 + rng.random_range(0.01..30.0), y0, y0 + rng.random_range(0.01..30.0)).unwrap();
        let sq = square_normalize(raw);
        if square_normalize(sq) != sq || !sq.contains(&raw) || !sq.is_square() {
            return Err(format!("case {k}: square_normalize({raw:?}) = {sq:?}"));
        }
        let n = rng.random_range(1..64u32);
        let span = sq.x_max - sq.x_min;
        let mut px = || sq.x_min - 0.2 * span + rng.random_range(0.0..1.4) * span;
        let (xa, xb) = (px(), px());
        let y = sq.y_min + rng.random_range(-0.2..1.2) * span;
        let ga = to_grid(xa, y, &sq, n).unwrap();
        let gb = to_grid(xb, y, &sq, n).unwrap();
        if ga.gx >= n || ga.gy >= n || gb.gx >= n || gb.gy >= n {
            return Err(format!("case {k}: out of range"));
        }
        if (xa <= xb) != (ga.gx <= gb.gx) && xa <= xb {
            return Err(format!("case {k}: not monotone in x"));
        }
        if ga.gy != gb.gy {
            return Err(format!("case {k}: y cell depends on x"));
        }
        let lo = to_grid(sq.x_min - 1.0, sq.y_min - 1.0, &sq, n).unwrap();
        let hi = to_grid(sq.x_max, sq.y_max, &sq, n).unwrap();
        let far = to_grid(sq.x_max + 1.0, sq.y_max + 1.0, &sq, n).unwrap();
        if (lo.gx, lo.gy) != (0, 0) || (hi.gx, hi.gy) != (n - 1, n - 1) || (far.gx, far.gy) != (n - 1, n - 1) {
            return Err(format!("case {k}: clipping"));
        }
    }
    Ok("10000 bounds/points".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("room-size worked example", room_size_golden),
        ("absolute-distance centroid difference", absolute_distance_delta),
        ("relative-distance grid step", relative_distance_step),
        ("appearance order", appearance_order),
        ("direction oracle", direction_oracle),
        ("AABB distance oracle", aabb_oracle),
        ("covisibility dedup and merge", covis_dedup),
        ("ground-truth map evaluation", gt_upper_bound),
        ("serialization and trace round trips", round_trips),
        ("grid mapping properties", grid_properties),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
