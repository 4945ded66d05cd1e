//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. `ACCEPTANCE_CRITERIA=1,3,9` restricts the run to those criteria.

use std::process::ExitCode;
use std::time::Instant;

use partialfit::engine::{accept_prob, run_fit, FitConfig};
use partialfit::experiments::{
    building_query, building_truth, compare_er, floor_count, frame_params, frame_query, frame_sweep, grid_model,
    log_posterior_of, sphere_error, sphere_query, FrameTable, SphereFixture, SweepMetric, FRAME_FAMILIES,
    FRAME_MODEL_RESOLUTION, FRAME_QUERY_RESOLUTION,
};
use partialfit::geometry::{eta_top, Point3};
use partialfit::grammar::{FamilyId, ModelFamily};
use partialfit::metrics::{shd, vd, MetricConfig};
use partialfit::spatial_index::NnIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use partialfit_validation::{brute_nearest, brute_ohd, mh_chi_square, random_cloud};

const TRUE_X: f64 = 1.0;
const TABLE2_Q1M1: f64 = 1056.4;
const TABLE2_REL_TOL: f64 = 0.10;
const RATIO_TOL: f64 = 1e-3;
const VD_FINE_RESOLUTION: f64 = 0.005;
const H_VALUES: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
const SPHERE_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const SPHERE_BUDGET: u64 = 20_000;
const SPHERE_TOL_CLEAN: f64 = 0.05;
const SPHERE_TOL_GAUSSIAN: f64 = 0.1;
const ER_BUDGET: u64 = 10_000;
const ER_MIN_SPEEDUP: f64 = 1.5;
const ER_MAX_LL_GAP: f64 = 0.05;
const BUILDING_BUDGET: u64 = 50_000;
const BUILDING_LL_TOL: f64 = 0.05;
const BUILDING_FLOORS: u32 = 3;
const CHI_SQUARE_MIN_P: f64 = 0.01;
const MEASURE_TOL: f64 = 0.05;

type Outcome = (bool, String);

fn same_x(a: Option<f64>, b: f64) -> bool {
    a.is_some_and(|a| (a - b).abs() < 1e-9)
}

fn criterion_1() -> Outcome {
    let cfg = MetricConfig::default();
    let mut misses = Vec::new();
    for &m in &FRAME_FAMILIES {
        for &q in &FRAME_FAMILIES {
            let t = frame_sweep(m, q, &[SweepMetric::Wmm], &cfg).unwrap();
            let x = t.argmax_x(SweepMetric::Wmm);
            if !same_x(x, TRUE_X) {
                misses.push(format!("{m} vs {q} peaks at {x:?}"));
            }
        }
    }
    (
        misses.is_empty(),
        format!("WMM argmax at x=1 for {}/16 pairs {misses:?}", 16 - misses.len()),
    )
}

fn criterion_2() -> Outcome {
    let cfg = MetricConfig::default();
    let mut detail = Vec::new();
    let mut ok = true;
    for &f in &FRAME_FAMILIES {
        let x = frame_sweep(f, f, &[SweepMetric::Shd], &cfg)
            .unwrap()
            .argmax_x(SweepMetric::Shd);
        ok &= same_x(x, TRUE_X);
        detail.push(format!("{f}/{f}: {x:?}"));
    }
    let partial = frame_sweep(FamilyId::FrameFull, FamilyId::Frame1q, &[SweepMetric::Shd], &cfg)
        .unwrap()
        .argmax_x(SweepMetric::Shd);
    ok &= !same_x(partial, TRUE_X);
    detail.push(format!("frame_full/frame_1q: {partial:?}"));
    (ok, format!("-SHD argmax {}", detail.join(", ")))
}

fn criterion_3() -> Outcome {
    let t = FrameTable::compute(&MetricConfig::default()).unwrap();
    let q1m1 = t.values[0][0];
    let near = (q1m1 - TABLE2_Q1M1).abs() / TABLE2_Q1M1 <= TABLE2_REL_TOL;
    let ratios: Vec<f64> = (1..4).map(|m| t.values[0][m] / q1m1).collect();
    let ratios_ok = ratios
        .iter()
        .zip([0.75, 0.5, 0.25])
        .all(|(r, e)| (r - e).abs() <= RATIO_TOL);
    let off = t.off_diagonal_rows();
    (
        near && ratios_ok && off.is_empty(),
        format!("Q1/M1 = {q1m1:.2}, row ratios {ratios:?}, off-diagonal rows {off:?}"),
    )
}

fn criterion_4() -> Outcome {
    let query = frame_query(FamilyId::FrameFull, TRUE_X, FRAME_QUERY_RESOLUTION);
    let family = ModelFamily::new(FamilyId::FrameFull);
    let cfg = MetricConfig {
        vd_resolution: VD_FINE_RESOLUTION,
        ..MetricConfig::default()
    };
    let neg_vd = |x: f64| {
        let model = grid_model(&family, &frame_params(FamilyId::FrameFull, x), FRAME_MODEL_RESOLUTION).unwrap();
        let pts: Vec<Point3> = model.submodels.iter().map(|s| s.center).collect();
        -vd(&pts, &query, &cfg)
    };
    let (empty, truth) = (neg_vd(2.0), neg_vd(TRUE_X));
    (empty > truth, format!("-VD empty model {empty}, ground truth {truth}"))
}

fn criterion_5() -> Outcome {
    let xs: Vec<Option<f64>> = H_VALUES
        .iter()
        .map(|&h| {
            let cfg = MetricConfig {
                h,
                ..MetricConfig::default()
            };
            frame_sweep(FamilyId::FrameFull, FamilyId::Frame3q, &[SweepMetric::Wmm], &cfg)
                .unwrap()
                .argmax_x(SweepMetric::Wmm)
        })
        .collect();
    let ok = xs.windows(2).all(|w| w[0] == w[1]);
    (ok, format!("WMM argmax for h in {H_VALUES:?}: {xs:?}"))
}

fn sphere_config(seed: u64, budget: u64) -> FitConfig {
    FitConfig {
        h: 10.0,
        delta: 0.04,
        budget,
        seed,
        ..FitConfig::default()
    }
}

fn criterion_6() -> Outcome {
    let family = ModelFamily::new(FamilyId::Sphere);
    let mut ok = true;
    let mut detail = Vec::new();
    for (fixture, tol, need) in [
        (SphereFixture::Clean, SPHERE_TOL_CLEAN, 4),
        (SphereFixture::LowUniform, SPHERE_TOL_CLEAN, 4),
        (SphereFixture::Gaussian, SPHERE_TOL_GAUSSIAN, 3),
    ] {
        let start = Instant::now();
        let errors: Vec<f64> = SPHERE_SEEDS
            .iter()
            .map(|&s| {
                let fit = run_fit(&family, &sphere_query(fixture, s), &sphere_config(s, SPHERE_BUDGET)).unwrap();
                sphere_error(&fit.best_params)
            })
            .collect();
        let hits = errors.iter().filter(|&&e| e <= tol).count();
        ok &= hits >= need;
        detail.push(format!(
            "{fixture:?} {hits}/5 within {tol} (errors {:?}, {:.0}s)",
            errors.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        ));
    }
    (ok, detail.join("; "))
}

fn criterion_7() -> Outcome {
    let family = ModelFamily::new(FamilyId::Sphere);
    let query = sphere_query(SphereFixture::HighUniform, 1);
    let cmp = compare_er(&family, &query, &sphere_config(1, ER_BUDGET)).unwrap();
    let (speedup, gap) = (cmp.speedup(), cmp.ll_gap());
    (
        speedup >= ER_MIN_SPEEDUP && gap <= ER_MAX_LL_GAP,
        format!(
            "speedup {speedup:.2}x ({:.1} vs {:.1} proposals/s), best log-posterior gap {:.2}%",
            cmp.with_er.proposals_per_second,
            cmp.without_er.proposals_per_second,
            100.0 * gap
        ),
    )
}

fn criterion_8() -> Outcome {
    let id = FamilyId::Building1f;
    let family = ModelFamily::new(id);
    let mut hits = 0;
    let mut detail = Vec::new();
    for seed in SPHERE_SEEDS {
        let query = building_query(id, seed);
        let cfg = FitConfig {
            h: 2.5,
            delta: 0.1,
            budget: BUILDING_BUDGET,
            seed,
            ..FitConfig::default()
        };
        let truth = log_posterior_of(&family, &query, &building_truth(id), &cfg).unwrap();
        let fit = run_fit(&family, &query, &cfg).unwrap();
        let floors = floor_count(&family, &fit.best_params);
        let close = fit.best_log_post >= truth * (1.0 - BUILDING_LL_TOL);
        if close && floors == Some(BUILDING_FLOORS) {
            hits += 1;
        }
        detail.push(format!(
            "seed {seed}: {:.3}/{truth:.3} floors {floors:?}",
            fit.best_log_post
        ));
    }
    (
        hits >= 3,
        format!("{hits}/5 seeds near the truth [{}]", detail.join(", ")),
    )
}

fn criterion_9() -> Outcome {
    let mut failed = Vec::new();

    let cloud = random_cloud(10_000, 1);
    let idx = NnIndex::build(&cloud).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let nn_ok = (0..1000).all(|_| {
        let q = Point3::new(
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
        );
        idx.nearest(&q).distance == brute_nearest(&cloud, &q)
    });
    if !nn_ok {
        failed.push("nearest neighbor");
    }

    let (a, b, c) = (random_cloud(300, 3), random_cloud(200, 4), random_cloud(250, 5));
    let ab = shd(&a, &b);
    if !(ab > 0.0
        && ab == shd(&b, &a)
        && shd(&a, &a) == 0.0
        && ab == brute_ohd(&a, &b).max(brute_ohd(&b, &a))
        && shd(&a, &c) <= ab + shd(&b, &c) + 1e-12)
    {
        failed.push("SHD axioms");
    }

    let bounds_ok = (0..10_000).all(|_| {
        let p = accept_prob(
            rng.gen_range(-1e3..1e3),
            rng.gen_range(-1e3..1e3),
            rng.gen_range(0.01..100.0),
        );
        (0.0..=1.0).contains(&p)
    });
    if !bounds_ok {
        failed.push("acceptance bounds");
    }

    let (_, p) = mh_chi_square(100_000, 11);
    if p <= CHI_SQUARE_MIN_P {
        failed.push("chi-square");
    }

    let family = ModelFamily::new(FamilyId::Frame2q);
    let query = frame_query(FamilyId::Frame2q, TRUE_X, 0.1);
    let cfg = FitConfig {
        budget: 200,
        n_chains: 4,
        delta: 0.1,
        seed: 17,
        ..FitConfig::default()
    };
    let (r1, r2) = (
        run_fit(&family, &query, &cfg).unwrap(),
        run_fit(&family, &query, &cfg).unwrap(),
    );
    if r1.best_params != r2.best_params || !r1.trace.iter().zip(&r2.trace).all(|(x, y)| x.same_outcome(y)) {
        failed.push("determinism");
    }

    let frame = ModelFamily::new(FamilyId::FrameFull);
    let measure_ok = [0.5, 1.0, 1.3].iter().all(|&x| {
        let prims = frame.instantiate(&frame_params(FamilyId::FrameFull, x)).unwrap();
        let exact: f64 = prims.iter().map(|p| p.measure()).sum();
        let eta = eta_top(prims[0].gamma(), prims[0].gamma() / 100.0).unwrap();
        let sum: f64 = prims.iter().flat_map(|p| p.divide(eta)).map(|s| s.measure).sum();
        (sum - exact).abs() / exact < MEASURE_TOL
    });
    if !measure_ok {
        failed.push("measure convergence");
    }

    (
        failed.is_empty(),
        format!("chi-square p = {p:.3}, failing suites {failed:?}"),
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failures = 0;
    for (n, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = check();
        failures += !ok as u32;
        println!(
            "{} criterion {n}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
