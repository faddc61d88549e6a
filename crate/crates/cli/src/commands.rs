use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use kinmix_core::evalmetrics::{
    aggregate_bias, classify_k1, map_biases, misclassification_table, text_summary, truth_classes, ConfusionMatrix,
};
use kinmix_core::io::{self, ParametricMap};
use kinmix_core::phantom::{add_noise, default_input, render_with, NoiseKind, NoiseModel};
use kinmix_core::potts::{cache_file_name, cached_partition, estimate_partition, exact_partition, McConfig, NeighborGraph, PartitionTable};
use kinmix_core::scf::{fit_image, fits_to_map, image_frame_counts, weights_from_counts};
use kinmix_core::skms::skms_fit_model;
use kinmix_core::smm::{
    bic, run_mcmc, select_components, write_beta_trace_csv, write_bic_csv, write_samples_csv, BicRow, ComponentSummary,
    McmcMode, SmmModel,
};
use kinmix_core::{default_phantom, Dims, DynamicImage, Error, FrameScheme, InputFunction, PhantomSpec, Result, TacModel};
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::{PartitionSection, RunConfig, Weighting};
use crate::export::{write_pgm, write_value_csv, Window};
use crate::manifest::{self, RunManifest};

/// A finished run whose manifest still has to be written.
pub struct Outcome {
    pub manifest: RunManifest,
    pub path: PathBuf,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| invalid(format!("--out {}: {e}", dir.display())))
}

fn save_csv<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(std::io::BufWriter<fs::File>) -> Result<()>,
{
    write(std::io::BufWriter::new(fs::File::create(path)?))
}

pub fn dispatch(command: &Command, args: Vec<String>, threads: usize) -> Result<Outcome> {
    match command {
        Command::Simulate(a) => simulate(a, RunManifest::new("simulate", args, threads)),
        Command::Partition(a) => partition(a, RunManifest::new("partition", args, threads)),
        Command::Fit(a) => {
            let name = match a.method {
                Method::Scf => "fit scf",
                Method::Skms => "fit skms",
                Method::Smm => "fit smm",
            };
            fit(a, RunManifest::new(name, args, threads))
        }
        Command::SelectG(a) => select_g(a, RunManifest::new("select-g", args, threads)),
        Command::Evaluate(a) => evaluate(a, RunManifest::new("evaluate", args, threads)),
        Command::Export(a) => export(a, RunManifest::new("export", args, threads)),
        Command::Replay(a) => {
            let recorded = RunManifest::load(&a.manifest)?;
            let argv = std::iter::once("kinmix".to_string()).chain(recorded.args.iter().cloned());
            let cli = crate::args::Cli::try_parse_from(argv)
                .map_err(|e| invalid(format!("manifest {}: args: {e}", a.manifest.display())))?;
            if matches!(cli.command, Command::Replay(_)) {
                return Err(invalid("manifest records a replay; replay the original manifest instead"));
            }
            dispatch(&cli.command, recorded.args, threads)
        }
    }
}

fn simulate(a: &SimulateArgs, mut m: RunManifest) -> Result<Outcome> {
    let mut spec: PhantomSpec = match &a.spec {
        Some(p) => {
            m.input(p);
            io::load_json(p)?
        }
        None => default_phantom(),
    };
    if let Some(p) = &a.input {
        m.input(p);
        spec.input = Some(io::load_input(p)?);
    }
    if let Some(p) = &a.frames {
        m.input(p);
        spec.frames = Some(io::load_frames(p)?);
    }
    if a.replicates == 0 {
        return Err(invalid("--replicates must be >= 1"));
    }
    let clean = render_with(&spec, None, None)?;
    let frames = spec.frames.clone().expect("rendering checked the frame scheme");
    let input = spec.input.clone().expect("rendering checked the input function");
    let kind = match a.noise {
        NoiseArg::GaussianHetero => NoiseKind::GaussianHetero,
        NoiseArg::ScaledPoisson => NoiseKind::ScaledPoisson,
    };

    create_dir(&a.out)?;
    let truth = clean.truth.as_ref().expect("rendered images carry truth");
    io::save_truth(&m.output(a.out.join("truth.csv")), spec.dims, truth)?;
    io::save_frames(&m.output(a.out.join("frames.csv")), &frames)?;
    io::save_input(&m.output(a.out.join("input.csv")), &input)?;
    io::save_json(&m.output(a.out.join("phantom.json")), &spec)?;
    io::save_dpet(&m.output(a.out.join("noise_free.dpet")), &clean)?;
    let mut seeds = Vec::with_capacity(a.replicates);
    for r in 0..a.replicates {
        let seed = a.seed.checked_add(r as u64).ok_or_else(|| invalid("--seed + replicate index overflows"))?;
        let noisy = add_noise(&clean, &frames, &NoiseModel { kind, level: a.level, seed })?;
        io::save_dpet(&m.output(a.out.join(format!("replicate_{r:03}.dpet"))), &noisy)?;
        seeds.push(seed);
    }
    m.seed = Some(a.seed);
    m.settings = json!({
        "noise": kind,
        "level": a.level,
        "replicates": a.replicates,
        "replicate_seeds": seeds,
        "dims": spec.dims,
        "frames": frames.len(),
    });
    Ok(Outcome { path: manifest::for_dir(&a.out), manifest: m })
}

fn partition(a: &PartitionArgs, mut m: RunManifest) -> Result<Outcome> {
    let dims = Dims::new(a.nx, a.ny);
    if dims.is_empty() {
        return Err(invalid("--nx and --ny must be >= 1"));
    }
    let graph = NeighborGraph::new(dims);
    let mc = McConfig { burn_in: a.burn_in, sweeps: a.sweeps, seed: a.seed };
    let table = if a.exact {
        exact_partition(a.g, &graph, a.beta_max, a.step)?
    } else {
        estimate_partition(a.g, &graph, a.beta_max, a.step, mc)?
    };
    let path = if a.out.is_dir() || a.out.extension().is_none() {
        a.out.join(cache_file_name(dims, a.g, a.beta_max, a.step, table.mc))
    } else {
        a.out.clone()
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    table.save(&path)?;
    m.output(path.clone());
    m.output(path.with_extension("json"));
    m.seed = Some(a.seed);
    m.settings = json!({
        "nx": a.nx,
        "ny": a.ny,
        "G": a.g,
        "beta_max": a.beta_max,
        "step": a.step,
        "exact": a.exact,
        "mc": table.mc,
    });
    Ok(Outcome { path: manifest::for_file(&path), manifest: m })
}

struct Loaded {
    cfg: RunConfig,
    img: DynamicImage,
    tac: TacModel,
    frames: FrameScheme,
}

fn load_inputs(inp: &ModelInputs, m: &mut RunManifest) -> Result<Loaded> {
    let cfg = RunConfig::load(inp.config.as_deref())?;
    if let Some(p) = &inp.config {
        m.config_path = Some(p.clone());
    }
    m.input(&inp.image);
    let img = io::load_dpet(&inp.image)?;
    let input: InputFunction = match &inp.input {
        Some(p) => {
            m.input(p);
            io::load_input(p)?
        }
        None => default_input(),
    };
    let frames = match &inp.frames {
        Some(p) => {
            m.input(p);
            io::load_frames(p)?
        }
        None => FrameScheme::cardiac_default(),
    };
    if frames.len() != img.frame_count() {
        return Err(invalid(format!(
            "--frames: {} frames but the image has {}",
            frames.len(),
            img.frame_count()
        )));
    }
    let tac = TacModel::plain(&input, &frames)?;
    Ok(Loaded { cfg, img, tac, frames })
}

fn table_path(dir: &Path, dims: Dims, g: usize, p: &PartitionSection) -> PathBuf {
    dir.join(cache_file_name(dims, g, p.beta_max, p.step, p.mc))
}

fn resolve_table(src: &TableSource, p: &PartitionSection, dims: Dims, g: usize, m: &mut RunManifest) -> Result<PartitionTable> {
    let graph = NeighborGraph::new(dims);
    let (path, table) = if let Some(path) = &src.table {
        if !path.exists() {
            return Err(invalid(format!("--table {}: file not found", path.display())));
        }
        (path.clone(), PartitionTable::load(path)?)
    } else if let Some(dir) = &src.table_dir {
        let path = table_path(dir, dims, g, p);
        if src.build_tables {
            (path, cached_partition(dir, g, &graph, p.beta_max, p.step, p.mc)?)
        } else if path.exists() {
            let t = PartitionTable::load(&path)?;
            (path, t)
        } else {
            return Err(invalid(format!(
                "--table-dir: no partition table for {}x{} G={g} at {}; create it with `kinmix partition --nx {} --ny {} --g {g} --out {}` or pass --build-tables",
                dims.nx,
                dims.ny,
                path.display(),
                dims.nx,
                dims.ny,
                dir.display()
            )));
        }
    } else {
        return Err(invalid("SMM needs a partition table: pass --table or --table-dir"));
    };
    table.check(&graph, g).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    m.input(&path);
    Ok(table)
}

fn save_map_outputs(out: &Path, img: &DynamicImage, map: &ParametricMap, m: &mut RunManifest) -> Result<()> {
    io::save_map(&m.output(out.join("map.csv")), map)?;
    io::save_dpet(&m.output(out.join("k1.dpet")), &map.image_of(map.k1())?)?;
    io::save_dpet(&m.output(out.join("k2.dpet")), &map.image_of(map.k2())?)?;
    let failed = map.entries.iter().filter(|e| e.status == io::FitStatus::Failed).count();
    if failed > 0 {
        m.warn(format!("{failed} of {} voxels failed to fit", img.voxel_count()));
    }
    Ok(())
}

#[derive(Serialize)]
struct SmmReport<'a> {
    #[serde(rename = "G")]
    g: usize,
    mode: McmcMode,
    components: &'a [ComponentSummary],
    noise_mean: &'a [f64],
    sigma2: &'a [f64],
    beta_mean: f64,
    beta_interval: (f64, f64),
    map_log_posterior: f64,
    map_iteration: usize,
    acceptance: &'a [(String, f64)],
    bic: BicRow,
}

fn fit(a: &FitArgs, mut m: RunManifest) -> Result<Outcome> {
    let Loaded { cfg, img, tac, frames } = load_inputs(&a.inputs, &mut m)?;
    create_dir(&a.out)?;
    match a.method {
        Method::Scf => {
            let mut fc = cfg.scf.fit.clone();
            if fc.weights.is_empty() && cfg.scf.weighting == Weighting::Counts {
                fc.weights = weights_from_counts(&frames, &image_frame_counts(&img, &frames))?;
            }
            fc.validate()?;
            let fits = fit_image(&img, &tac, &fc);
            save_map_outputs(&a.out, &img, &fits_to_map(&img, &fits), &mut m)?;
            m.settings = json!({ "scf": { "weighting": cfg.scf.weighting, "fit": fc } });
        }
        Method::Skms => {
            let mut sc = cfg.skms.clone();
            sc.g = a.g.unwrap_or(sc.g);
            sc.beta = a.beta.unwrap_or(sc.beta);
            sc.seed = a.seed.unwrap_or(sc.seed);
            let res = skms_fit_model(&img, &tac, &sc)?;
            save_map_outputs(&a.out, &img, &res.to_map(&img), &mut m)?;
            io::save_labels(&m.output(a.out.join("labels.csv")), img.dims(), &res.labels)?;
            io::save_json(&m.output(a.out.join("skms.json")), &res)?;
            if !res.converged {
                m.warn(format!("SKMS stopped after {} iterations without converging", res.iterations));
            }
            m.seed = Some(sc.seed);
            m.settings = json!({ "skms": sc });
        }
        Method::Smm => {
            let smm = &cfg.smm;
            let mut mc = smm.mcmc.clone();
            mc.g = a.g.unwrap_or(mc.g);
            mc.seed = a.seed.unwrap_or(mc.seed);
            if a.mode == Some(ModeArg::Map) {
                mc.mode = McmcMode::MapOnly;
                mc.iterations = smm.map_iterations;
            } else if a.mode == Some(ModeArg::Full) {
                mc.mode = McmcMode::FullPosterior;
            }
            mc.iterations = a.iterations.unwrap_or(mc.iterations);
            mc.burn_in = a.burn_in.unwrap_or(mc.burn_in);
            if mc.burn_in >= mc.iterations {
                return Err(invalid(format!(
                    "--burn-in ({}) must be below --iterations ({})",
                    mc.burn_in, mc.iterations
                )));
            }
            let table = resolve_table(&a.tables, &cfg.partition, img.dims(), mc.g, &mut m)?;
            let scales = smm.effective_scales();
            let summary = run_mcmc(&img, &tac, &smm.priors, &scales, &mc, &table)?;
            let graph = NeighborGraph::new(img.dims());
            let model = SmmModel::new(&img, &tac, &graph, &table, &smm.priors)?;
            let row = bic(&model, &summary.map_state)?;

            save_map_outputs(&a.out, &img, &summary.map_parametric(&img, &tac), &mut m)?;
            io::save_labels(&m.output(a.out.join("labels.csv")), img.dims(), &summary.map_state.z)?;
            io::save_dpet(&m.output(a.out.join("membership.dpet")), &summary.membership_image(&img)?)?;
            save_csv(&m.output(a.out.join("samples.csv")), |w| write_samples_csv(w, &summary.samples))?;
            save_csv(&m.output(a.out.join("beta.csv")), |w| write_beta_trace_csv(w, &summary.beta_trace))?;
            save_csv(&m.output(a.out.join("bic.csv")), |w| write_bic_csv(w, &[row]))?;
            let report = SmmReport {
                g: summary.g,
                mode: summary.mode,
                components: &summary.components,
                noise_mean: &summary.noise_mean,
                sigma2: &summary.sigma2,
                beta_mean: summary.beta_mean,
                beta_interval: summary.beta_interval,
                map_log_posterior: summary.map_log_posterior,
                map_iteration: summary.map_iteration,
                acceptance: &summary.acceptance,
                bic: row,
            };
            io::save_json(&m.output(a.out.join("summary.json")), &report)?;
            for (name, rate) in &summary.acceptance {
                if !(0.1..=0.6).contains(rate) {
                    m.warn(format!("{name} acceptance rate {rate:.3} outside [0.1, 0.6]"));
                }
            }
            m.seed = Some(mc.seed);
            m.settings = json!({
                "priors": smm.priors,
                "scales": smm.scales,
                "multiplier": smm.multiplier,
                "effective_scales": scales,
                "mcmc": mc,
                "partition": cfg.partition,
            });
        }
    }
    Ok(Outcome { path: manifest::for_dir(&a.out), manifest: m })
}

fn select_g(a: &SelectArgs, mut m: RunManifest) -> Result<Outcome> {
    let Loaded { cfg, img, tac, .. } = load_inputs(&a.inputs, &mut m)?;
    if a.gmin < 2 || a.gmax < a.gmin {
        return Err(invalid(format!("--gmin ({}) must be >= 2 and <= --gmax ({})", a.gmin, a.gmax)));
    }
    let smm = &cfg.smm;
    let mut base = smm.mcmc.clone();
    base.mode = McmcMode::MapOnly;
    base.iterations = a.iterations.unwrap_or(smm.map_iterations);
    base.seed = a.seed.unwrap_or(base.seed);
    if base.burn_in >= base.iterations {
        base.burn_in = 0;
    }
    let tables: Vec<PartitionTable> = (a.gmin..=a.gmax)
        .map(|g| resolve_table(&a.tables, &cfg.partition, img.dims(), g, &mut m))
        .collect::<Result<_>>()?;
    let scales = smm.effective_scales();
    let sel = select_components(&img, &tac, &smm.priors, &scales, &base, a.gmin..=a.gmax, |g| {
        Ok(tables[g - a.gmin].clone())
    })?;

    create_dir(&a.out)?;
    save_csv(&m.output(a.out.join("bic.csv")), |w| write_bic_csv(w, &sel.rows))?;
    io::save_json(&m.output(a.out.join("selection.json")), &json!({ "best_G": sel.best_g, "rows": sel.rows }))?;
    for pair in sel.rows.windows(2) {
        if pair[1].loglik < pair[0].loglik {
            m.warn(format!(
                "log-likelihood decreases from G={} ({:.3}) to G={} ({:.3})",
                pair[0].g, pair[0].loglik, pair[1].g, pair[1].loglik
            ));
        }
    }
    println!("selected G = {}", sel.best_g);
    m.seed = Some(base.seed);
    m.settings = json!({
        "gmin": a.gmin,
        "gmax": a.gmax,
        "best_G": sel.best_g,
        "priors": smm.priors,
        "effective_scales": scales,
        "mcmc": base,
        "partition": cfg.partition,
    });
    Ok(Outcome { path: manifest::for_dir(&a.out), manifest: m })
}

fn find_maps(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| invalid(format!("--fits {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_maps(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "map.csv") {
            out.push(p);
        }
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs, mut m: RunManifest) -> Result<Outcome> {
    let mut paths = Vec::new();
    find_maps(&a.fits, &mut paths)?;
    if paths.is_empty() {
        return Err(invalid(format!("--fits {}: no map.csv files found", a.fits.display())));
    }
    let maps: Vec<ParametricMap> = paths.iter().map(|p| io::load_map(p)).collect::<Result<_>>()?;
    let dims = maps[0].dims;
    if let Some(k) = maps.iter().position(|mp| mp.dims != dims) {
        return Err(invalid(format!("{}: map size differs from {}", paths[k].display(), paths[0].display())));
    }
    m.inputs.extend(paths.iter().cloned());
    m.input(&a.truth);
    let truth = io::load_truth(&a.truth, dims)?;

    let biases: Vec<Vec<[f64; 2]>> = maps.iter().map(|mp| map_biases(mp, &truth)).collect::<Result<_>>()?;
    let report = aggregate_bias(&biases, &truth.region_id)?;
    let truth_cls = truth_classes(&truth);
    let mut confusion = ConfusionMatrix::default();
    for mp in &maps {
        confusion.merge(&misclassification_table(&classify_k1(&mp.k1())?, &truth_cls)?);
    }

    let mut names: Vec<(u32, String)> = Vec::new();
    if let Some(p) = &a.spec {
        m.input(p);
        let spec: PhantomSpec = io::load_json(p)?;
        names = spec.regions.iter().map(|r| (r.id, r.name.clone())).collect();
    }
    let summary = text_summary(&report, Some(&confusion), &names);

    create_dir(&a.out)?;
    save_csv(&m.output(a.out.join("bias_voxels.csv")), |w| report.write_voxel_csv(w))?;
    save_csv(&m.output(a.out.join("bias_roi.csv")), |w| report.write_roi_csv(w))?;
    save_csv(&m.output(a.out.join("confusion.csv")), |w| confusion.write_csv(w))?;
    fs::write(m.output(a.out.join("summary.txt")), &summary)?;
    print!("{summary}");
    m.settings = json!({ "realizations": maps.len() });
    Ok(Outcome { path: manifest::for_dir(&a.out), manifest: m })
}

fn export(a: &ExportArgs, mut m: RunManifest) -> Result<Outcome> {
    m.input(&a.map);
    let is_dpet = a.map.extension().is_some_and(|e| e.eq_ignore_ascii_case("dpet"));
    let (dims, values, source) = if is_dpet {
        let img = io::load_dpet(&a.map)?;
        if a.frame >= img.frame_count() {
            return Err(invalid(format!("--frame {} but the image has {} frames", a.frame, img.frame_count())));
        }
        let values: Vec<f64> = img.tacs().map(|tac| tac[a.frame]).collect();
        (img.dims(), values, json!({ "frame": a.frame }))
    } else {
        let map = io::load_map(&a.map)?;
        let (values, name) = match a.param {
            ParamArg::K1 => (map.k1(), "K1"),
            ParamArg::K2 => (map.k2(), "k2"),
        };
        (map.dims, values, json!({ "param": name }))
    };
    let window = Window::of(&values)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = std::io::BufWriter::new(fs::File::create(&a.out)?);
    match a.format {
        ExportFormat::Pgm => write_pgm(file, dims, &values, window)?,
        ExportFormat::Csv => write_value_csv(file, dims, &values)?,
    }
    m.output(a.out.clone());
    m.settings = json!({
        "format": format!("{:?}", a.format).to_lowercase(),
        "source": source,
        "window": window,
    });
    Ok(Outcome { path: manifest::for_file(&a.out), manifest: m })
}
