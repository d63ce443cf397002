//! One function per subcommand. Each returns the warnings that should turn
//! the exit status non-zero without aborting the command.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use rsnpe::calibration::{calibrate, write_rank_histogram, CalibrationReport, RankRecord};
use rsnpe::datagen::{build_splits, csv_io, generate_primary, generate_reference, TrainSample};
use rsnpe::flow::{train_flow, FlowModel};
use rsnpe::inference::{eps_ref_sweep, Observation, PosteriorResult};
use rsnpe::io::{sidecar_path, Sidecar};
use rsnpe::physics::{linear_to_db, Permittivity, PowerDb};
use rsnpe::simulator::peak_power;
use rsnpe::{Simulator, TerrainParams};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub type Warnings = Vec<String>;

/// Writes `content` as the sidecar of `artifact`, stamped with the run's
/// config hash and `seed`.
fn stamp<T: Serialize + serde::de::DeserializeOwned>(
    cfg: &RunConfig,
    artifact: &Path,
    format: &str,
    seed: u64,
    content: T,
) -> anyhow::Result<()> {
    Sidecar::new(format, cfg.hash()?, seed, content).write(&sidecar_path(artifact))?;
    Ok(())
}

fn write_resolved(cfg: &RunConfig) -> anyhow::Result<()> {
    rsnpe::io::write_json(&cfg.layout().resolved_config(), cfg)?;
    Ok(())
}

/// Fails with a message naming the command that produces `path`.
fn require(path: &Path, producer: &str) -> anyhow::Result<()> {
    if !path.exists() {
        bail!("missing {}; run `rsnpe {producer}` first (with the same config)", path.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct SimulateArgs {
    pub eps: f64,
    pub sigma_m: f64,
    pub slope: f64,
    pub seed: u64,
    pub noiseless: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulateMeta {
    theta: TerrainParams,
    peak_power_db: f64,
    noiseless: bool,
}

pub fn cmd_simulate(cfg: &RunConfig, args: SimulateArgs) -> anyhow::Result<Warnings> {
    let theta = TerrainParams::new(args.eps, args.sigma_m, args.slope)?;
    if !cfg.prior.contains(&theta.to_array(), 0.0) {
        println!("note: θ lies outside the prior box; simulating anyway");
    }
    let radar = if args.noiseless { cfg.radar.clone().noiseless() } else { cfg.radar.clone() };
    let sim = Simulator::new(radar.clone())?;
    let line = sim.simulate(&theta, args.seed)?;
    let p_db = linear_to_db(peak_power(&line))?.get();

    let dir = cfg.layout().simulate_dir();
    std::fs::create_dir_all(&dir)?;
    // Dots would be taken for extensions.
    let num = |v: f64| v.to_string().replace('.', "p");
    let base = dir.join(format!(
        "rangeline_eps{}_sigma{}_slope{}_seed{}{}",
        num(args.eps),
        num(args.sigma_m),
        num(args.slope),
        args.seed,
        if args.noiseless { "_noiseless" } else { "" }
    ));
    line.write_dump(&base, args.seed, &theta, &radar)?;
    stamp(
        cfg,
        &base.with_extension("bin"),
        "rangeline",
        args.seed,
        SimulateMeta { theta, peak_power_db: p_db, noiseless: args.noiseless },
    )?;
    write_resolved(cfg)?;
    println!("peak power: {p_db:.4} dB");
    println!("rangeline: {}", base.with_extension("bin").display());
    Ok(Vec::new())
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    rows: usize,
    prior: rsnpe::datagen::PriorSpec,
    radar: rsnpe::RadarConfig,
}

pub fn cmd_generate(cfg: &RunConfig) -> anyhow::Result<Warnings> {
    let layout = cfg.layout();
    let seed = cfg.seeds.data;
    let sim = Simulator::new(cfg.radar.clone())?;
    let meta = |rows| DatasetMeta { rows, prior: cfg.prior.clone(), radar: cfg.radar.clone() };

    let start = Instant::now();
    let primary = generate_primary(cfg.data.n_primary, &cfg.prior, &sim, seed)?;
    let reference = generate_reference(cfg.data.n_reference, &cfg.prior, &sim, seed)?;
    println!(
        "simulated {} primary and {} reference rangelines in {:.1} s",
        primary.len(),
        reference.len(),
        start.elapsed().as_secs_f64()
    );
    let d = cfg.data.clone();
    let splits = build_splits(&primary, &reference, d.n_train, d.n_val, d.n_test, seed)?;

    let path = layout.data("primary");
    csv_io::write_primary(&path, &primary)?;
    stamp(cfg, &path, "primary", seed, meta(primary.len()))?;
    let path = layout.data("reference");
    csv_io::write_reference(&path, &reference)?;
    stamp(cfg, &path, "reference", seed, meta(reference.len()))?;
    for (name, set) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        let path = layout.data(name);
        csv_io::write_pairs(&path, set)?;
        stamp(cfg, &path, "pairs", seed, meta(set.len()))?;
    }
    write_resolved(cfg)?;
    println!(
        "pairs: {} train, {} val, {} test -> {}",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        layout.root.join("data").display()
    );
    Ok(Vec::new())
}

fn read_pairs(cfg: &RunConfig, name: &str) -> anyhow::Result<Vec<TrainSample>> {
    let path = cfg.layout().data(name);
    require(&path, "generate")?;
    Ok(csv_io::read_pairs(&path).with_context(|| format!("reading {}", path.display()))?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelMeta {
    flow: rsnpe::FlowConfig,
    train: rsnpe::TrainConfig,
    best_epoch: usize,
    best_val_nll: Option<f64>,
    epochs_run: usize,
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<Warnings> {
    let train = read_pairs(cfg, "train")?;
    let val = read_pairs(cfg, "val")?;
    let start = Instant::now();
    let (model, history) = train_flow(&train, &val, &cfg.flow, &cfg.train)?;
    let layout = cfg.layout();
    std::fs::create_dir_all(layout.model_base().parent().unwrap())?;
    model.save(&layout.model_base())?;
    history.write_csv(&layout.history())?;
    let meta = ModelMeta {
        flow: cfg.flow.clone(),
        train: cfg.train.clone(),
        best_epoch: history.best_epoch,
        best_val_nll: history.best_val_nll(),
        epochs_run: history.epochs.len(),
    };
    stamp(cfg, &layout.model_base().with_extension("bin"), "flow-model", cfg.train.seed, meta)?;
    stamp(cfg, &layout.history(), "training-history", cfg.train.seed, history.epochs.len())?;
    write_resolved(cfg)?;
    println!(
        "trained {} epochs in {:.1} s; kept epoch {} (val NLL {:.4})",
        history.epochs.len(),
        start.elapsed().as_secs_f64(),
        history.best_epoch,
        history.best_val_nll().unwrap_or(f64::NAN)
    );
    Ok(Vec::new())
}

fn load_model(cfg: &RunConfig) -> anyhow::Result<FlowModel> {
    let base = cfg.layout().model_base();
    require(&base.with_extension("json"), "train")?;
    require(&base.with_extension("bin"), "train")?;
    Ok(FlowModel::load(&base).with_context(|| format!("loading model {}", base.display()))?)
}

#[derive(Debug, Serialize, Deserialize)]
struct RankRow {
    eps: usize,
    sigma: usize,
    slope: usize,
}

pub fn cmd_validate(cfg: &RunConfig) -> anyhow::Result<Warnings> {
    let model = load_model(cfg)?;
    let test = read_pairs(cfg, "test")?;
    if test.is_empty() {
        bail!("the test split is empty; set data.n_test > 0 and rerun `rsnpe generate`");
    }
    let seed = cfg.seeds.validate;
    let l = cfg.validation.posterior_draws;
    let (report, ranks) = calibrate(&model, &test, l, &cfg.prior, seed)?;

    let layout = cfg.layout();
    let path = layout.validation("report.json");
    rsnpe::io::write_json(&path, &report)?;
    stamp(cfg, &path, "calibration-report", seed, l)?;
    let path = layout.validation("ranks.csv");
    let rows: Vec<RankRow> = (0..ranks.len())
        .map(|i| RankRow { eps: ranks.ranks[0][i], sigma: ranks.ranks[1][i], slope: ranks.ranks[2][i] })
        .collect();
    rsnpe::io::write_csv(&path, &rows)?;
    stamp(cfg, &path, "sbc-ranks", seed, l)?;
    let path = layout.validation("rank_histogram.csv");
    write_rank_histogram(&path, &ranks, cfg.validation.histogram_bins)?;
    stamp(cfg, &path, "sbc-rank-histogram", seed, l)?;
    write_resolved(cfg)?;

    println!("SBC over {} test points, L = {l}", report.n_test);
    println!("{:<8} {:>10} {:>12} {:>12}", "param", "KS p", "C2ST rank", "C2ST DAP");
    for (d, name) in rsnpe::calibration::THETA_NAMES.iter().enumerate() {
        println!(
            "{:<8} {:>10.4} {:>12.4} {:>12.4}",
            name, report.ks_p[d], report.c2st_rank[d], report.c2st_dap[d]
        );
    }
    Ok(calibration_warnings(cfg, &report))
}

fn calibration_warnings(cfg: &RunConfig, r: &CalibrationReport) -> Warnings {
    let t = &cfg.thresholds;
    let mut w = Vec::new();
    for (d, name) in rsnpe::calibration::THETA_NAMES.iter().enumerate() {
        if r.ks_p[d] <= t.min_ks_p {
            w.push(format!("{name}: KS p = {:.4} <= {}", r.ks_p[d], t.min_ks_p));
        }
        if r.c2st_rank[d] > t.max_c2st_rank {
            w.push(format!("{name}: rank C2ST = {:.4} > {}", r.c2st_rank[d], t.max_c2st_rank));
        }
        if r.c2st_dap[d] > t.max_c2st_dap {
            w.push(format!("{name}: DAP C2ST = {:.4} > {}", r.c2st_dap[d], t.max_c2st_dap));
        }
    }
    w
}

/// Reads the ranks written by `validate`.
pub fn read_ranks(cfg: &RunConfig) -> anyhow::Result<RankRecord> {
    let layout = cfg.layout();
    let path = layout.validation("ranks.csv");
    require(&path, "validate")?;
    let report: CalibrationReport = rsnpe::io::read_json(&layout.validation("report.json"))?;
    let rows: Vec<RankRow> = rsnpe::io::read_csv(&path)?;
    Ok(RankRecord {
        l: report.l,
        ranks: [
            rows.iter().map(|r| r.eps).collect(),
            rows.iter().map(|r| r.sigma).collect(),
            rows.iter().map(|r| r.slope).collect(),
        ],
    })
}

#[derive(Debug, Clone)]
pub struct InferArgs {
    pub p_obs_db: f64,
    pub p_ref_db: f64,
    pub r_km: f64,
    pub r_ref_km: f64,
    pub eps_ref: Vec<f64>,
    pub n_samples: Option<usize>,
    pub tag: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InferMeta {
    observation: Observation,
    n_samples: usize,
}

/// File stem for one sweep member, e.g. `eps_ref_3p10`.
pub fn eps_tag(eps: f64) -> String {
    format!("eps_ref_{eps:.2}").replace('.', "p")
}

pub fn cmd_infer(cfg: &RunConfig, args: &InferArgs) -> anyhow::Result<(Vec<PosteriorResult>, Warnings)> {
    if args.eps_ref.is_empty() {
        bail!("give at least one --eps-ref");
    }
    let model = load_model(cfg)?;
    let obs = Observation {
        p_obs: PowerDb::new(args.p_obs_db)?,
        p_ref_obs: PowerDb::new(args.p_ref_db)?,
        r_obs_km: args.r_km,
        r_ref_obs_km: args.r_ref_km,
        eps_ref_assumed: Permittivity::new(args.eps_ref[0])?,
        altitude_correction: cfg.inference.altitude_correction,
    };
    let eps: Vec<Permittivity> = args.eps_ref.iter().map(|&e| Permittivity::new(e)).collect::<Result<_, _>>()?;
    let n = args.n_samples.unwrap_or(cfg.inference.n_samples);
    let seed = cfg.seeds.infer;
    let start = Instant::now();
    let results = eps_ref_sweep(&model, &cfg.prior, &obs, &eps, n, seed)?;
    let elapsed = start.elapsed().as_secs_f64();

    let dir = cfg.layout().inference_dir(&args.tag);
    std::fs::create_dir_all(&dir)?;
    let mut warnings = Vec::new();
    println!("{n} posterior samples per ε_ref in {elapsed:.2} s total");
    println!(
        "{:>7} {:>12} {:>16} {:>16} {:>16}",
        "eps_ref", "h", "eps mean±std", "sigma mean±std", "slope mean±std"
    );
    for r in &results {
        let tag = eps_tag(r.eps_ref_used);
        let json = dir.join(format!("posterior_{tag}.json"));
        let csv = dir.join(format!("samples_{tag}.csv"));
        r.write_json(&json)?;
        r.write_samples_csv(&csv)?;
        let meta = InferMeta { observation: obs.with_eps_ref(Permittivity::new(r.eps_ref_used)?), n_samples: n };
        stamp(cfg, &json, "posterior", seed, meta.clone())?;
        stamp(cfg, &csv, "posterior-samples", seed, meta)?;
        let s = &r.summary;
        println!(
            "{:>7.2} {:>12.5e} {:>8.3}±{:<7.3} {:>8.3}±{:<7.3} {:>8.4}±{:<7.4}",
            r.eps_ref_used, r.h_used, s.mean[0], s.std[0], s.mean[1], s.std[1], s.mean[2], s.std[2]
        );
        if r.extrapolation {
            warnings.push(format!(
                "eps_ref {}: h = {:e} is {:.1} training std from the mean of ln h (extrapolation)",
                r.eps_ref_used, r.h_used, r.context_z
            ));
        }
        let frac = r.out_of_support as f64 / n as f64;
        if frac > cfg.thresholds.max_out_of_support_fraction {
            warnings.push(format!(
                "eps_ref {}: {:.1}% of samples outside the widened prior box",
                r.eps_ref_used,
                100.0 * frac
            ));
        }
    }
    write_resolved(cfg)?;
    println!("results: {}", dir.display());
    Ok((results, warnings))
}

/// Sample files written by `infer`, as `(tag, eps stem, path)`.
pub fn find_posterior_samples(cfg: &RunConfig) -> anyhow::Result<Vec<(String, String, PathBuf)>> {
    let root = cfg.layout().root.join("inference");
    let mut found = Vec::new();
    if !root.exists() {
        return Ok(found);
    }
    for tag in std::fs::read_dir(&root)? {
        let tag = tag?;
        if !tag.file_type()?.is_dir() {
            continue;
        }
        for file in std::fs::read_dir(tag.path())? {
            let path = file?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if let Some(stem) = name.strip_prefix("samples_").and_then(|n| n.strip_suffix(".csv")) {
                found.push((tag.file_name().to_string_lossy().into_owned(), stem.to_string(), path));
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn cmd_plot(cfg: &RunConfig) -> anyhow::Result<Warnings> {
    let dir = cfg.layout().plots_dir();
    std::fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    if cfg.layout().validation("ranks.csv").exists() {
        let ranks = read_ranks(cfg)?;
        let path = dir.join("sbc_ranks.svg");
        crate::plot::rank_histograms(&path, &ranks, cfg.validation.histogram_bins)?;
        written.push(path);
    }
    for (tag, stem, path) in find_posterior_samples(cfg)? {
        let samples = PosteriorResult::read_samples_csv(&path)?;
        let out = dir.join(format!("corner_{tag}_{stem}.svg"));
        crate::plot::corner(&out, &samples, &format!("{tag}: {stem}"))?;
        written.push(out);
    }
    if written.is_empty() {
        bail!(
            "nothing to plot under {}; run `rsnpe validate` or `rsnpe infer` first",
            cfg.layout().root.display()
        );
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(Vec::new())
}
