//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::HashMap;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use xmodal_core::geometry::{backproject, warp_depth, warped_thermal_depth, RigidTransform};
use xmodal_core::gradcheck::{run_suite, SuiteConfig};
use xmodal_core::losses::{consistency, similarity_mask, trim_mask, ConsistencyOptions};
use xmodal_core::metrics::{compute_metrics, compute_weighted_metrics, MetricSet};
use xmodal_core::obstaclemap::{
    build_obstacle_map, contains, dbscan, is_convex_ccw, ObstacleConfig, PointCloud, NOISE,
};
use xmodal_core::synthscene::{
    default_rig, fit_confidence, render_depth, run_distillation_demo, DistillConfig, FitOptions,
    Scene,
};
use xmodal_core::{DepthMap, Grid, Mask, MaskedGrid};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:.1?}, budget {budget:?}"))?;
    Ok(t)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let report = run_suite(&SuiteConfig::default()).map_err(|e| e.to_string())?;
    let t = within_budget(start, Duration::from_secs(60))?;
    let worst = report
        .checks
        .iter()
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    for c in &report.checks {
        ensure(c.passed, || {
            format!("{} max rel error {:.3e}", c.input, c.max_rel_error)
        })?;
    }
    ensure(report.checks.len() == 5, || {
        format!("expected 5 checks, got {}", report.checks.len())
    })?;
    Ok(format!(
        "{} gradients, 20 instances of 16x16, worst rel error {worst:.2e}, {t:.1?}",
        report.checks.len()
    ))
}

fn warp_round_trip() -> Outcome {
    let start = Instant::now();
    let rig = default_rig();
    let baseline = rig.t_thermal_rgb.translation().norm();
    ensure((baseline - 0.2).abs() < 0.01, || {
        format!("rig baseline {baseline}")
    })?;
    let eye = *rig.t_rgb_thermal().translation();
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for seed in 0..10 {
        let scene = Scene::random(seed);
        let gt = render_depth(&scene, &rig.rgb, &RigidTransform::identity())
            .map_err(|e| e.to_string())?;
        let warped = warp_depth(&gt, &rig.rgb, &rig.thermal, &rig.t_thermal_rgb)
            .map_err(|e| e.to_string())?;
        let mut scene_checked = 0;
        for y in 0..gt.height() {
            for x in 0..gt.width() {
                let (Some((u, v)), Some(d)) = (warped.coords.coord(x, y), warped.depth.depth(x, y))
                else {
                    continue;
                };
                let p = backproject(
                    &Vector2::new(x as f64, y as f64),
                    gt.depth(x, y).unwrap(),
                    &rig.rgb,
                )
                .unwrap();
                if !scene.is_visible(&eye, &p) {
                    continue;
                }
                let Some(rendered) = scene.cast_depth(&rig.thermal, &rig.t_rgb_thermal(), u, v)
                else {
                    continue;
                };
                worst = worst.max((d - rendered).abs());
                scene_checked += 1;
            }
        }
        ensure(scene_checked * 2 > gt.values().len(), || {
            format!("scene {seed}: only {scene_checked} co-visible pixels")
        })?;
        checked += scene_checked;

        let same = warp_depth(&gt, &rig.rgb, &rig.rgb, &RigidTransform::identity())
            .map_err(|e| e.to_string())?;
        let bits = |m: &DepthMap| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&same.depth) == bits(&gt), || {
            format!("scene {seed}: identity warp changed depth")
        })?;
        let back = warped_thermal_depth(
            &gt,
            &same.coords,
            &rig.rgb,
            &rig.rgb,
            &RigidTransform::identity(),
        )
        .map_err(|e| e.to_string())?;
        ensure(bits(&back) == bits(&gt), || {
            format!("scene {seed}: identity resampling changed depth")
        })?;
    }
    ensure(worst <= 1e-6, || format!("max deviation {worst:.3e} m"))?;
    let t = within_budget(start, Duration::from_secs(30))?;
    Ok(format!("10 scenes, {checked} co-visible pixels, max deviation {worst:.2e} m, identity bit-exact, {t:.1?}"))
}

fn nll_optimum() -> Outcome {
    let start = Instant::now();
    let ratios: Vec<f64> = (0..40)
        .map(|i| (1e-3f64.ln() + (0.999f64.ln() - 1e-3f64.ln()) * i as f64 / 39.0).exp())
        .collect();
    let mut worst = 0.0f64;
    for beta in [0.01, 0.1, 0.5, 2.0] {
        let gt = DepthMap::from_values(Grid::filled(ratios.len(), 1, 20.0));
        let pred = DepthMap::from_values(
            Grid::from_vec(
                ratios.len(),
                1,
                ratios.iter().map(|q| 20.0 + beta / q).collect(),
            )
            .unwrap(),
        );
        let fit =
            fit_confidence(&pred, &gt, beta, &FitOptions::default()).map_err(|e| e.to_string())?;
        for (i, w) in fit.confidence.iter().enumerate() {
            let r = (pred.values().data()[i] - 20.0).abs();
            let oracle = (beta / r).clamp(1e-6, 1.0 - 1e-6);
            worst = worst.max((w - oracle).abs());
        }
    }
    ensure(worst <= 1e-3, || {
        format!("max |W - clamp(beta/|r|)| = {worst:.3e}")
    })?;
    let t = within_budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "4 betas x 40 ratios in [1e-3, 0.999], max deviation {worst:.2e}, {t:.1?}"
    ))
}

fn ablation(cfg: &DistillConfig) -> Result<(f64, f64, f64, f64, Duration), String> {
    let start = Instant::now();
    let (report, _) = run_distillation_demo(cfg).map_err(|e| e.to_string())?;
    let t = within_budget(start, Duration::from_secs(300))?;
    Ok((
        report.absrel_init,
        report.absrel_confident,
        report.absrel_uniform,
        report.improvement_pct,
        t,
    ))
}

/// Naive per-pixel metrics, written independently of the library.
fn oracle_metrics(pairs: &[(f64, f64)]) -> [f64; 7] {
    let n = pairs.len() as f64;
    let (mut a, mut s, mut r, mut l) = (0.0, 0.0, 0.0, 0.0);
    let mut d = [0.0; 3];
    for &(p, g) in pairs {
        a += (p - g).abs() / g;
        s += (p - g) * (p - g) / g;
        r += (p - g) * (p - g);
        l += (p.ln() - g.ln()) * (p.ln() - g.ln());
        let ratio = if p / g > g / p { p / g } else { g / p };
        for (k, dk) in d.iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *dk += 1.0;
            }
        }
    }
    [
        a / n,
        s / n,
        (r / n).sqrt(),
        (l / n).sqrt(),
        d[0] / n,
        d[1] / n,
        d[2] / n,
    ]
}

fn oracle_weighted(pairs: &[(f64, f64)]) -> Option<[f64; 7]> {
    let mut bins: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 16];
    for &(p, g) in pairs {
        if g < 80.0 {
            bins[(g / 5.0) as usize].push((p, g));
        }
    }
    let filled: Vec<[f64; 7]> = bins
        .iter()
        .filter(|b| !b.is_empty())
        .map(|b| oracle_metrics(b))
        .collect();
    if filled.is_empty() {
        return None;
    }
    let mut out = [0.0; 7];
    for m in &filled {
        for k in 0..7 {
            out[k] += m[k];
        }
    }
    Some(out.map(|v| v / filled.len() as f64))
}

fn close(a: &[f64; 7], b: &[f64; 7]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut instances = 0;
    while instances < 100 {
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let gt_v = Grid::from_fn(w, h, |_, _| rng.random_range(0.5..95.0));
        let pred_v = gt_v.map(|g| g * f64::exp(noise.sample(&mut rng)));
        let rand_mask =
            |rng: &mut ChaCha8Rng| -> Mask { Grid::from_fn(w, h, |_, _| rng.random_bool(0.85)) };
        let gt = DepthMap::new(gt_v, rand_mask(&mut rng)).unwrap();
        let pred = DepthMap::new(pred_v, rand_mask(&mut rng)).unwrap();
        let mask = rng.random_bool(0.5).then(|| rand_mask(&mut rng));
        let pairs: Vec<(f64, f64)> = (0..w * h)
            .filter(|&i| {
                pred.valid().data()[i]
                    && gt.valid().data()[i]
                    && mask.as_ref().is_none_or(|m| m.data()[i])
            })
            .map(|i| (pred.values().data()[i], gt.values().data()[i]))
            .collect();
        let Some(weighted_oracle) = oracle_weighted(&pairs) else {
            continue;
        };
        let m = compute_metrics(&pred, &gt, mask.as_ref()).map_err(|e| e.to_string())?;
        let wm = compute_weighted_metrics(&pred, &gt, mask.as_ref(), 5.0, 80.0)
            .map_err(|e| e.to_string())?;
        ensure(close(&m.columns(), &oracle_metrics(&pairs)), || {
            format!("instance {instances}: {:?}", m.columns())
        })?;
        ensure(close(&wm.aggregate.columns(), &weighted_oracle), || {
            format!("instance {instances}: weighted mismatch")
        })?;
        instances += 1;
    }

    let row = |v: &[f64]| DepthMap::from_values(Grid::from_vec(v.len(), 1, v.to_vec()).unwrap());
    let boundary = compute_metrics(&row(&[5.0]), &row(&[4.0]), None).unwrap();
    ensure(boundary.delta1 == 0.0 && boundary.delta2 == 1.0, || {
        format!("ratio 1.25: {boundary:?}")
    })?;
    let hand = compute_metrics(&row(&[2.0, 4.0]), &row(&[2.0, 5.0]), None).unwrap();
    ensure(hand.abs_rel == 0.1, || format!("abs_rel {}", hand.abs_rel))?;
    let (pred, gt) = (row(&[1.0, 1.0, 1.0, 7.0]), row(&[2.0, 2.0, 2.0, 7.0]));
    let unweighted: MetricSet = compute_metrics(&pred, &gt, None).unwrap();
    let weighted = compute_weighted_metrics(&pred, &gt, None, 5.0, 80.0).unwrap();
    ensure(
        unweighted.abs_rel == 0.375 && weighted.aggregate.abs_rel == 0.25,
        || {
            format!(
                "unweighted {} weighted {}",
                unweighted.abs_rel, weighted.aggregate.abs_rel
            )
        },
    )?;
    Ok(
        "100 random instances within 1e-12 (absolute), delta boundary and hand fixtures exact"
            .into(),
    )
}

/// O(n²) DBSCAN: cores by counting, components of cores by union-find, each
/// border point joined to the component with the smallest core index among
/// its neighbors.
fn dbscan_oracle(p: &[Vector2<f64>], eps: f64, min_pts: usize) -> Vec<i64> {
    let n = p.len();
    let near = |i: usize, j: usize| (p[i] - p[j]).norm_squared() <= eps * eps;
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        parent[i] = r;
        r
    }
    for i in 0..n {
        for j in 0..i {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    // The root is the smallest index in each component.
    let root: Vec<Option<usize>> = (0..n)
        .map(|i| core[i].then(|| find(&mut parent, i)))
        .collect();
    (0..n)
        .map(|i| match root[i] {
            Some(r) => r as i64,
            None => (0..n)
                .filter(|&j| core[j] && near(i, j))
                .filter_map(|j| root[j])
                .min()
                .map_or(NOISE, |r| r as i64),
        })
        .collect()
}

fn same_partition(a: &[i64], b: &[i64]) -> bool {
    let mut fwd = HashMap::new();
    let mut bwd = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        (x == NOISE) == (y == NOISE)
            && *fwd.entry(x).or_insert(y) == y
            && *bwd.entry(y).or_insert(x) == x
    })
}

fn two_box_cloud() -> Vec<Vector3<f64>> {
    let mut pts = Vec::new();
    for (x0, y0) in [(2.0, -1.0), (4.0, 1.5)] {
        for i in 0..5 {
            for j in 0..5 {
                for h in 0..5 {
                    pts.push(Vector3::new(
                        x0 + 0.1 * i as f64,
                        y0 + 0.1 * j as f64,
                        0.3 + 0.2 * h as f64,
                    ));
                }
            }
        }
    }
    pts.extend((0..50).map(|i| Vector3::new(0.1 * i as f64, 0.0, 0.0)));
    pts
}

fn dbscan_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spread = Normal::new(0.0, 0.4).unwrap();
    let mut clusters = 0;
    for set in 0..50 {
        let n = rng.random_range(1..=200);
        let centers: Vec<Vector2<f64>> = (0..rng.random_range(1..=4))
            .map(|_| Vector2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
            .collect();
        let pts: Vec<Vector2<f64>> = (0..n)
            .map(|_| {
                if rng.random_bool(0.2) {
                    Vector2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0))
                } else {
                    let c = centers[rng.random_range(0..centers.len())];
                    c + Vector2::new(spread.sample(&mut rng), spread.sample(&mut rng))
                }
            })
            .collect();
        let (eps, min_pts) = (rng.random_range(0.15..0.8), rng.random_range(1..8));
        let got = dbscan(&pts, eps, min_pts).map_err(|e| e.to_string())?;
        let want = dbscan_oracle(&pts, eps, min_pts);
        ensure(same_partition(&got, &want), || {
            format!("set {set} (n {n}, eps {eps:.3}, min_pts {min_pts}) differs")
        })?;
        clusters += got.iter().copied().max().map_or(0, |m| m + 1);
    }

    let cloud = PointCloud::from_points(two_box_cloud()).unwrap();
    let run = build_obstacle_map(&cloud, &ObstacleConfig::default()).map_err(|e| e.to_string())?;
    ensure(run.map.polygons.len() == 2, || {
        format!("{} polygons", run.map.polygons.len())
    })?;
    for poly in &run.map.polygons {
        let v: Vec<Vector2<f64>> = poly.vertices.iter().map(|v| Vector2::from(*v)).collect();
        ensure(is_convex_ccw(&v), || {
            format!("cluster {} polygon not convex CCW", poly.cluster)
        })?;
        let members = run
            .flat
            .iter()
            .zip(&run.labels)
            .filter(|(_, &l)| l == poly.cluster);
        for (p, _) in members {
            ensure(contains(&v, p, 1e-9), || {
                format!("cluster {} misses {p:?}", poly.cluster)
            })?;
        }
    }
    Ok(format!("50 random sets ({clusters} clusters) match the O(n^2) reference; two-cluster fixture gives 2 convex polygons"))
}

fn oracle_quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn quantile_masks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for vec in 0..100 {
        let n = rng.random_range(1..300);
        let ties = rng.random_bool(0.3);
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.0..5.0);
                if ties {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            })
            .collect();
        let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.9)).collect();
        let keep = if rng.random_bool(0.2) {
            0.8
        } else {
            rng.random_range(0.05..1.0)
        };
        let grid = Grid::from_vec(n, 1, values.clone()).unwrap();
        let mask: Mask = Grid::from_vec(n, 1, valid.clone()).unwrap();
        let kept: Vec<f64> = values
            .iter()
            .zip(&valid)
            .filter(|(_, &ok)| ok)
            .map(|(&v, _)| v)
            .collect();

        let trimmed = trim_mask(&grid, &mask, keep).map_err(|e| e.to_string())?;
        let similar = similarity_mask(&MaskedGrid::new(grid.clone(), mask.clone()).unwrap(), keep)
            .map_err(|e| e.to_string())?;
        let (want_trim, want_sim): (Vec<bool>, Vec<bool>) = if kept.is_empty() {
            (vec![false; n], vec![false; n])
        } else {
            let hi = oracle_quantile(&kept, keep);
            let lo = oracle_quantile(&kept, 1.0 - keep);
            (
                values
                    .iter()
                    .zip(&valid)
                    .map(|(&v, &ok)| ok && v <= hi)
                    .collect(),
                values
                    .iter()
                    .zip(&valid)
                    .map(|(&v, &ok)| ok && v >= lo)
                    .collect(),
            )
        };
        ensure(trimmed.data() == want_trim.as_slice(), || {
            format!("vector {vec}: trim mask differs (keep {keep})")
        })?;
        ensure(similar.data() == want_sim.as_slice(), || {
            format!("vector {vec}: similarity mask differs (keep {keep})")
        })?;
    }

    let row = |v: &[f64]| DepthMap::from_values(Grid::from_vec(v.len(), 1, v.to_vec()).unwrap());
    let w = Grid::filled(5, 1, 1.0);
    let r = consistency(
        &w,
        &row(&[10.0; 5]),
        &row(&[11.0, 12.0, 13.0, 14.0, 15.0]),
        None,
        &ConsistencyOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    ensure((r.value - 2.5).abs() < 1e-12, || {
        format!("fixture value {}", r.value)
    })?;
    Ok("100 random vectors match the sort-based quantile oracle; residuals 1..5 at keep 0.8 give 2.5".into())
}

fn run_cli(args: &[&str], threads: &str) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_xmodal"))
        .args(args)
        .env("XMODAL_THREADS", threads)
        .stdout(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    ensure(status.success(), || {
        format!("xmodal {args:?} exited with {status}")
    })
}

fn numbers_close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            (x.as_f64().unwrap() - y.as_f64().unwrap()).abs() <= 1e-9
        }
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| numbers_close(p, q))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len()
                && x.iter()
                    .all(|(k, v)| y.get(k).is_some_and(|w| numbers_close(v, w)))
        }
        _ => a == b,
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let points = dir.path().join("boxes.xyz");
    let mut f = std::fs::File::create(&points).map_err(|e| e.to_string())?;
    xmodal_core::io::write_xyz(&mut f, &two_box_cloud()).map_err(|e| e.to_string())?;
    let points = points.to_str().unwrap();
    let runs: [(&str, Vec<&str>, &str); 3] = [
        ("gradcheck", vec!["gradcheck", "--seed", "3"], "report.json"),
        (
            "distill-demo",
            vec!["distill-demo", "--seed", "3"],
            "report.json",
        ),
        (
            "obstacle-map",
            vec!["obstacle-map", "--points", points],
            "obstacles.json",
        ),
    ];
    for (name, args, file) in &runs {
        let mut outputs = Vec::new();
        for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "0")] {
            let out = dir.path().join(format!("{name}-{tag}"));
            let mut full = vec!["--out", out.to_str().unwrap()];
            full.extend(args.iter().copied());
            run_cli(&full, threads)?;
            outputs.push(std::fs::read(out.join(file)).map_err(|e| e.to_string())?);
        }
        ensure(outputs[0] == outputs[1], || {
            format!("{name}: repeated single-thread runs differ")
        })?;
        let parse = |b: &[u8]| serde_json::from_slice::<Value>(b).map_err(|e| e.to_string());
        ensure(
            numbers_close(&parse(&outputs[0])?, &parse(&outputs[2])?),
            || format!("{name}: auto-thread run differs"),
        )?;
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    Ok(format!("gradcheck, distill-demo, obstacle-map byte-identical at 1 thread and within 1e-9 at auto ({cores} cores)"))
}

fn main() {
    let mut passed = Vec::new();
    let mut record = |n: usize, name: &str, outcome: Outcome| {
        let ok = outcome.is_ok();
        match outcome {
            Ok(detail) => println!("criterion {n} [{name}]: PASS ({detail})"),
            Err(why) => println!("criterion {n} [{name}]: FAIL ({why})"),
        }
        passed.push(ok);
    };
    record(1, "gradient correctness", gradients());
    record(2, "warp round-trip", warp_round_trip());
    record(3, "NLL optimum", nll_optimum());

    let demo = ablation(&DistillConfig::default());
    record(
        4,
        "ablation direction",
        demo.clone().and_then(|(_, conf, uni, pct, t)| {
            ensure(conf < uni && pct >= 20.0, || {
                format!("confident {conf:.5} vs uniform {uni:.5}, {pct:.1}%")
            })?;
            Ok(format!(
                "AbsRel confident {conf:.5} vs uniform {uni:.5}, {pct:.1}% better, {t:.1?}"
            ))
        }),
    );
    record(
        5,
        "SSFT direction",
        demo.and_then(|(init, conf, _, _, _)| {
            let pct = 100.0 * (init - conf) / init;
            ensure(pct >= 10.0, || {
                format!("AbsRel {init:.5} -> {conf:.5}, {pct:.1}%")
            })?;
            Ok(format!("AbsRel {init:.5} -> {conf:.5}, {pct:.1}% lower"))
        }),
    );
    record(6, "metrics oracle", metrics_oracle());
    record(7, "DBSCAN equivalence", dbscan_equivalence());
    record(8, "trimming and masking quantiles", quantile_masks());
    record(9, "determinism", determinism());

    let failed = passed.iter().filter(|ok| !**ok).count();
    println!(
        "acceptance: {} of {} criteria passed",
        passed.len() - failed,
        passed.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
