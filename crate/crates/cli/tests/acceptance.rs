//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Run with `cargo test -p kinmix-cli --test acceptance`.

#[path = "../../core/tests/common/oracles.rs"]
mod oracles;
mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use kinmix_core::evalmetrics::{
    aggregate_bias, classify_k1, map_biases, misclassification_table, truth_classes, voxel_bias, BiasReport,
    ConfusionMatrix, K1Class, Param,
};
use kinmix_core::io::ParametricMap;
use kinmix_core::phantom::{add_noise, default_noise, render_noise_free, Dims, DynamicImage, ABNORMAL_REGION};
use kinmix_core::potts::{cached_partition, estimate_partition, McConfig, NeighborGraph, PartitionTable, DEFAULT_BETA_MAX, DEFAULT_GRID_STEP};
use kinmix_core::scf::{fit_image, fits_to_map, image_frame_counts, weights_from_counts, FitConfig};
use kinmix_core::skms::{skms_fit_model, SkmsConfig};
use kinmix_core::smm::{
    run_mcmc, select_components, Chain, ChainState, McmcConfig, Priors, ProposalScales, SmmModel,
    DEFAULT_PROPOSAL_MULTIPLIER,
};
use kinmix_core::{default_phantom, frame_averaged_tac, FrameScheme, InputFunction, KineticParams, TacModel};
use oracles::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn table_dir() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("potts_cache")
}

fn default_table(g: usize) -> PartitionTable {
    let graph = NeighborGraph::new(default_phantom().dims);
    cached_partition(&table_dir(), g, &graph, DEFAULT_BETA_MAX, DEFAULT_GRID_STEP, McConfig::default())
        .expect("partition table")
}

fn default_scales() -> ProposalScales {
    ProposalScales::simulation().scaled(DEFAULT_PROPOSAL_MULTIPLIER)
}

struct Setup {
    clean: DynamicImage,
    frames: FrameScheme,
    tac: TacModel,
}

fn setup() -> Setup {
    let spec = default_phantom();
    let frames = spec.frames.clone().unwrap();
    let tac = TacModel::plain(spec.input.as_ref().unwrap(), &frames).unwrap();
    Setup { clean: render_noise_free(&spec).unwrap(), frames, tac }
}

fn kinetics_exactness() -> Verdict {
    let start = Instant::now();
    let frames = cardiac_frames();
    let scheme = FrameScheme::from_pairs(&frames).unwrap();
    let worst = (0..1000u64)
        .into_par_iter()
        .map(|case| {
            let mut rng = CaseRng::new(case + 1);
            let (times, values) = random_input(&mut rng);
            let k1 = rng.uniform(0.3290, 0.9655);
            let k2 = rng.uniform(0.0541, 0.1044);
            let input = InputFunction::new(times.clone(), values.clone()).unwrap();
            let got = frame_averaged_tac(KineticParams::new(k1, k2).unwrap(), &input, &scheme).unwrap();
            let want = quadrature_frame_tac(k1, k2, &times, &values, &frames, QUAD_STEP);
            got.iter()
                .zip(&want)
                .map(|(g, w)| (g - w).abs() / w.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-8 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 1000 cases in {}", secs(elapsed)),
    )
}

fn noise_free_recovery(s: &Setup) -> Verdict {
    let start = Instant::now();
    let fits = fit_image(&s.clean, &s.tac, &FitConfig::default());
    let map = fits_to_map(&s.clean, &fits);
    let truth = s.clean.truth.as_ref().unwrap();
    let mut worst = 0.0f64;
    for ((e, t), noise) in map.entries.iter().zip(&truth.params).zip(&truth.noise) {
        if !noise {
            worst = worst.max((e.params.k1 - t.k1).abs() / t.k1).max((e.params.k2 - t.k2).abs() / t.k2);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        format!("max relative parameter error {worst:.2e} in {}", secs(elapsed)),
    )
}

/// 8-neighborhood pairs, built independently of the library graph.
fn pairs(nx: usize, ny: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..nx * ny {
        for j in i + 1..nx * ny {
            let (dx, dy) = ((i % nx).abs_diff(j % nx), (i / nx).abs_diff(j / nx));
            if dx <= 1 && dy <= 1 {
                out.push((i, j));
            }
        }
    }
    out
}

fn decode(mut code: usize, g: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let l = code % g;
            code /= g;
            l
        })
        .collect()
}

fn agreements(z: &[usize], edges: &[(usize, usize)]) -> f64 {
    edges.iter().filter(|(i, j)| z[*i] == z[*j]).count() as f64
}

fn enumerate_log_c(g: usize, n: usize, edges: &[(usize, usize)], beta: f64) -> f64 {
    let terms: Vec<f64> = (0..g.pow(n as u32)).map(|c| beta * agreements(&decode(c, g, n), edges)).collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn potts_partition() -> Verdict {
    let start = Instant::now();
    let edges = pairs(3, 3);
    let graph = NeighborGraph::new(Dims::new(3, 3));
    let mut worst = 0.0f64;
    let mut exact_zero = true;
    for g in [2, 3] {
        let table = estimate_partition(g, &graph, DEFAULT_BETA_MAX, DEFAULT_GRID_STEP, McConfig::default()).unwrap();
        exact_zero &= table.log_c_at(0.0).unwrap() == 9.0 * (g as f64).ln();
        for beta in [0.1, 0.3, 0.5, 1.0] {
            let want = enumerate_log_c(g, 9, &edges, beta);
            let got = table.log_c_at(beta).unwrap();
            worst = worst.max(((got - want) / want).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 0.02 && exact_zero && elapsed < Duration::from_secs(120),
        format!("max relative error {worst:.2e}, log C(0) exact: {exact_zero}, {}", secs(elapsed)),
    )
}

fn gibbs_steps() -> Verdict {
    let priors = Priors::simulation();

    let dims = Dims::new(10, 10);
    let img = DynamicImage::new(dims, 1, vec![0.5f64.sqrt(); 100]).unwrap();
    let tac = TacModel::plain(&kinmix_core::phantom::default_input(), &FrameScheme::from_blocks(&[(1, 60.0)]).unwrap()).unwrap();
    let graph = NeighborGraph::new(dims);
    let table = estimate_partition(2, &graph, 1.0, 0.1, McConfig { burn_in: 5, sweeps: 10, seed: 0 }).unwrap();
    let state = ChainState {
        z: vec![1; 100],
        kin: vec![KineticParams { k1: 0.5, k2: 0.1 }],
        fractions: None,
        noise_mean: vec![0.0],
        sigma2: vec![1.0],
        beta: 0.2,
    };
    let mut chain = Chain::new(SmmModel::new(&img, &tac, &graph, &table, &priors).unwrap(), state).unwrap();
    let (shape, rate) = (50.001f64, 25.001f64);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 100_000;
    let mut xs = Vec::with_capacity(draws);
    for _ in 0..draws {
        chain.update_sigma(&mut rng);
        xs.push(chain.state.sigma2[0]);
    }
    let mean = xs.iter().sum::<f64>() / draws as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    let ig_mean = rate / (shape - 1.0);
    let ig_var = rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0));
    let mean_z = (mean - ig_mean).abs() / (ig_var / draws as f64).sqrt();
    let fourth = ig_var * ig_var * (3.0 + 6.0 * (5.0 * shape - 11.0) / ((shape - 3.0) * (shape - 4.0)));
    let var_z = (var - ig_var).abs() / ((fourth - ig_var * ig_var) / draws as f64).sqrt();
    let sigma_ok = mean_z < 3.0 && var_z < 3.0;

    let frames = FrameScheme::from_blocks(&[(1, 60.0)]).unwrap();
    let tac = TacModel::plain(&kinmix_core::phantom::default_input(), &frames).unwrap();
    let p = KineticParams { k1: 0.5, k2: 0.1 };
    let m1 = tac.eval(p, None)[0];
    let m0 = 0.4 * m1;
    let y = vec![m1, 0.7 * m1, 0.5 * m1, 0.45 * m1];
    let sd = 0.3 * m1;
    let beta = 0.5;
    let dims = Dims::new(2, 2);
    let img = DynamicImage::new(dims, 1, y.clone()).unwrap();
    let graph = NeighborGraph::new(dims);
    let table = kinmix_core::potts::exact_partition(2, &graph, 1.0, 0.01).unwrap();
    let edges = pairs(2, 2);
    let logw: Vec<f64> = (0..16)
        .map(|c| {
            let z = decode(c, 2, 4);
            let ll: f64 = (0..4).map(|i| -0.5 * (y[i] - if z[i] == 0 { m1 } else { m0 }).powi(2) / (sd * sd)).sum();
            ll + beta * agreements(&z, &edges)
        })
        .collect();
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logw.iter().map(|w| (w - top).exp()).sum();
    let state = ChainState {
        z: vec![0, 0, 1, 1],
        kin: vec![p],
        fractions: None,
        noise_mean: vec![m0],
        sigma2: vec![sd * sd],
        beta,
    };
    let mut chain = Chain::new(SmmModel::new(&img, &tac, &graph, &table, &priors).unwrap(), state).unwrap();
    let sweeps = 200_000;
    let codes: Vec<usize> = (0..sweeps)
        .map(|_| {
            chain.update_z(&mut rng);
            chain.state.z.iter().rev().fold(0, |acc, &l| acc * 2 + l)
        })
        .collect();
    let mut worst_z = 0.0f64;
    for (c, w) in logw.iter().enumerate() {
        let exact = (w - top).exp() / total;
        let ind: Vec<f64> = codes.iter().map(|&k| if k == c { 1.0 } else { 0.0 }).collect();
        let (freq, se) = batch_mean_se(&ind, 50);
        worst_z = worst_z.max((freq - exact).abs() / se.max(1e-4));
    }
    verdict(
        sigma_ok && worst_z < 3.0,
        format!("sigma draws: mean {mean_z:.2} SE, variance {var_z:.2} SE; labels: worst state {worst_z:.2} SE"),
    )
}

fn model_selection(s: &Setup) -> Verdict {
    let start = Instant::now();
    let tables: Vec<PartitionTable> = (2..=6).map(default_table).collect();
    let chosen: Vec<usize> = (0..10u64)
        .map(|r| {
            let img = add_noise(&s.clean, &s.frames, &default_noise(r)).unwrap();
            let sel = select_components(
                &img,
                &s.tac,
                &Priors::simulation(),
                &default_scales(),
                &McmcConfig::map_only(3, r),
                2..=6,
                |g| Ok(tables[g - 2].clone()),
            )
            .unwrap();
            sel.best_g
        })
        .collect();
    let hits = chosen.iter().filter(|&&g| g == 3).count();
    verdict(hits >= 8, format!("G* = 3 in {hits}/10 runs (chosen {chosen:?}), {}", secs(start.elapsed())))
}

struct Study {
    smm: BiasReport,
    scf: BiasReport,
    skms: BiasReport,
    confusion: [ConfusionMatrix; 3],
    elapsed: Duration,
}

fn replicate_maps(s: &Setup, table: &PartitionTable, r: u64) -> (DynamicImage, [ParametricMap; 3]) {
    let img = add_noise(&s.clean, &s.frames, &default_noise(1000 + r)).unwrap();
    let smm = run_mcmc(&img, &s.tac, &Priors::simulation(), &default_scales(), &McmcConfig::map_only(3, r), table)
        .unwrap()
        .map_parametric(&img, &s.tac);
    let weights = weights_from_counts(&s.frames, &image_frame_counts(&img, &s.frames)).unwrap();
    let scf = fits_to_map(&img, &fit_image(&img, &s.tac, &FitConfig::default().with_weights(weights)));
    let skms_cfg = SkmsConfig { g: 17, beta: 0.2, seed: r, ..SkmsConfig::default() };
    let skms = skms_fit_model(&img, &s.tac, &skms_cfg).unwrap().to_map(&img);
    (img, [smm, scf, skms])
}

fn study(s: &Setup) -> Study {
    let start = Instant::now();
    let table = default_table(3);
    let truth = s.clean.truth.as_ref().unwrap();
    let runs: Vec<[ParametricMap; 3]> = (0..25u64).into_par_iter().map(|r| replicate_maps(s, &table, r).1).collect();
    let truth_cls = truth_classes(truth);
    let report = |m: usize| {
        let biases: Vec<Vec<[f64; 2]>> = runs.iter().map(|maps| map_biases(&maps[m], truth).unwrap()).collect();
        aggregate_bias(&biases, &truth.region_id).unwrap()
    };
    let confusion = |m: usize| {
        let mut total = ConfusionMatrix::default();
        for maps in &runs {
            total.merge(&misclassification_table(&classify_k1(&maps[m].k1()).unwrap(), &truth_cls).unwrap());
        }
        total
    };
    Study {
        smm: report(0),
        scf: report(1),
        skms: report(2),
        confusion: [confusion(0), confusion(1), confusion(2)],
        elapsed: start.elapsed(),
    }
}

fn variance_ordering(st: &Study) -> Verdict {
    let [smm, scf, skms] = [&st.smm, &st.scf, &st.skms].map(|r| r.median_std(Param::K1).unwrap());
    verdict(
        smm < scf && smm < skms && smm <= 0.05 && st.elapsed < Duration::from_secs(1800),
        format!("median std of K1 bias SMM {smm:.4}, SCF {scf:.4}, SKMS {skms:.4} (25 replicates, {})", secs(st.elapsed)),
    )
}

fn abnormal_bias_ordering(st: &Study) -> Verdict {
    let [smm, scf, skms] =
        [&st.smm, &st.scf, &st.skms].map(|r| r.roi_summary(ABNORMAL_REGION, Param::K1).unwrap().median_mean_sq);
    verdict(
        smm <= scf && smm <= skms,
        format!("abnormal-region median mean-squared K1 bias SMM {smm:.5}, SCF {scf:.5}, SKMS {skms:.5}"),
    )
}

fn classification(st: &Study) -> Verdict {
    let [smm, scf, skms] = st.confusion.each_ref().map(|c| c.correct_rate(K1Class::Noise).unwrap());
    verdict(
        smm >= scf && smm >= skms,
        format!("noise-voxel correct rate SMM {smm:.4}, SCF {scf:.4}, SKMS {skms:.4}"),
    )
}

fn acceptance_window(s: &Setup) -> Verdict {
    let img = add_noise(&s.clean, &s.frames, &default_noise(0)).unwrap();
    let summary = run_mcmc(
        &img,
        &s.tac,
        &Priors::simulation(),
        &default_scales(),
        &McmcConfig::full_posterior(3, 0),
        &default_table(3),
    )
    .unwrap();
    let rates: Vec<String> = summary.acceptance.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
    let inside = summary.acceptance.iter().all(|(_, v)| (0.1..=0.6).contains(v));
    verdict(
        inside,
        format!("multiplier {DEFAULT_PROPOSAL_MULTIPLIER}: {}", rates.join(", ")),
    )
}

fn bias_identity(st: &Study) -> Verdict {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for report in [&st.smm, &st.scf, &st.skms] {
        let n = report.realizations as f64;
        for stats in report.voxels.iter().flatten() {
            let s = stats.std.unwrap();
            let rhs = s * s * (n - 1.0) / n + stats.mean * stats.mean;
            worst = worst.max((stats.mean_sq - rhs).abs() / stats.mean_sq.abs().max(1.0));
            checked += 1;
        }
    }
    let k = |k1, k2| KineticParams { k1, k2 };
    let hand = [
        (voxel_bias(k(0.5, 0.1), k(0.4, 0.08), false).unwrap(), [0.25, 0.25]),
        (voxel_bias(k(0.3, 0.06), k(0.4, 0.08), false).unwrap(), [-0.25, -0.25]),
        (voxel_bias(k(0.05, 0.2), k(0.0, 0.0), true).unwrap(), [0.05, 0.2]),
        (voxel_bias(k(0.0, 0.0), k(0.0, 0.0), true).unwrap(), [0.0, 0.0]),
    ];
    let hand_ok = hand.iter().all(|(got, want)| (got[0] - want[0]).abs() < 1e-15 && (got[1] - want[1]).abs() < 1e-15);
    let zero_truth_rejected = voxel_bias(k(0.1, 0.1), k(0.0, 0.0), false).is_err();
    verdict(
        worst <= 1e-12 && hand_ok && zero_truth_rejected,
        format!("identity residual {worst:.1e} over {checked} voxel statistics; denominator-1 hand cases: {hand_ok}"),
    )
}

fn cli_determinism() -> Verdict {
    use common::*;
    let ws = Workspace::new();
    let img = ws.s("sim/replicate_000.dpet");
    let cfg = ws.s("fast.json");
    let tables = ws.s("tables");
    let runs: Vec<(&str, Vec<String>, PathBuf)> = vec![
        ("simulate", vec!["simulate".into(), "--spec".into(), ws.s("spec.json"), "--replicates".into(), "2".into(), "--seed".into(), "7".into(), "--out".into(), ws.s("d/sim")], ws.path("d/sim/manifest.json")),
        ("partition", vec!["partition".into(), "--nx".into(), "10".into(), "--ny".into(), "10".into(), "--g".into(), "3".into(), "--step".into(), "0.05".into(), "--burn-in".into(), "20".into(), "--sweeps".into(), "100".into(), "--out".into(), ws.s("d/t.csv")], ws.path("d/t.manifest.json")),
        ("fit scf", vec!["fit".into(), "scf".into(), "--image".into(), img.clone(), "--out".into(), ws.s("d/fits/scf")], ws.path("d/fits/scf/manifest.json")),
        ("fit skms", vec!["fit".into(), "skms".into(), "--image".into(), img.clone(), "--config".into(), cfg.clone(), "--out".into(), ws.s("d/fits/skms")], ws.path("d/fits/skms/manifest.json")),
        ("fit smm", vec!["fit".into(), "smm".into(), "--image".into(), img.clone(), "--config".into(), cfg.clone(), "--table-dir".into(), tables.clone(), "--build-tables".into(), "--out".into(), ws.s("d/fits/smm")], ws.path("d/fits/smm/manifest.json")),
        ("select-g", vec!["select-g".into(), "--image".into(), img.clone(), "--config".into(), cfg.clone(), "--table-dir".into(), tables.clone(), "--build-tables".into(), "--gmin".into(), "2".into(), "--gmax".into(), "4".into(), "--out".into(), ws.s("d/sel")], ws.path("d/sel/manifest.json")),
        ("evaluate", vec!["evaluate".into(), "--fits".into(), ws.s("d/fits"), "--truth".into(), ws.s("sim/truth.csv"), "--out".into(), ws.s("d/eval")], ws.path("d/eval/manifest.json")),
        ("export", vec!["export".into(), "--map".into(), ws.s("d/fits/smm/map.csv"), "--format".into(), "pgm".into(), "--out".into(), ws.s("d/k1.pgm")], ws.path("d/k1.manifest.json")),
    ];
    let mut mismatches = Vec::new();
    for (name, args, manifest) in &runs {
        let mut first = vec!["--threads".to_string(), "1".into()];
        first.extend(args.iter().cloned());
        let out = kinmix(&first);
        if !out.status.success() {
            mismatches.push(format!("{name} failed: {}", String::from_utf8_lossy(&out.stderr).trim()));
            continue;
        }
        let recorded: serde_json::Value = serde_json::from_slice(&std::fs::read(manifest).unwrap()).unwrap();
        let outputs: Vec<PathBuf> = recorded["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| PathBuf::from(v.as_str().unwrap()))
            .collect();
        let before: Vec<Vec<u8>> = outputs.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let saved = manifest.with_extension("recorded.json");
        std::fs::copy(manifest, &saved).unwrap();
        let replay = kinmix(["--threads", "4", "replay", &p(&saved)]);
        if !replay.status.success() {
            mismatches.push(format!("{name} replay failed"));
            continue;
        }
        for (path, bytes) in outputs.iter().zip(&before) {
            if std::fs::read(path).unwrap() != *bytes {
                mismatches.push(format!("{name}: {}", path.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    verdict(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} commands replayed from their manifests with 1 vs 4 threads, all outputs identical", runs.len())
        } else {
            format!("differences: {}", mismatches.join("; "))
        },
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let s = setup();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |id: u32, name: &'static str, v: Verdict| {
        println!("criterion {id:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    report(1, "kinetics exactness", kinetics_exactness());
    report(2, "noise-free recovery", noise_free_recovery(&s));
    report(3, "Potts partition", potts_partition());
    report(4, "Gibbs-step correctness", gibbs_steps());
    report(5, "model selection", model_selection(&s));
    let st = study(&s);
    report(6, "variance-reduction ordering", variance_ordering(&st));
    report(7, "abnormal-ROI bias ordering", abnormal_bias_ordering(&st));
    report(8, "noise classification", classification(&st));
    report(9, "acceptance-rate window", acceptance_window(&s));
    report(10, "bias identity", bias_identity(&st));
    report(11, "CLI determinism", cli_determinism());

    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
