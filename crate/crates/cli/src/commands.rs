use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use bridgesim_core::analytics::{
    endpoint_report, marginal_histogram, mean_and_standard_error, mode_count, paired_histograms,
    tv_distance, EndpointReport, MarginalHistogram,
};
use bridgesim_core::linalg::to_rows;
use bridgesim_core::pcn::{pcn_chain, PcnRun};
use bridgesim_core::{
    euler_maruyama, sample_guided, sample_neural, GuidedSystem, NeuralDrift, Trajectory, WienerPath,
    ZooModel,
};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::output::{io_err, output_dir, read_trajectories, resolve_config, write_json, write_manifest, write_trajectories};
use crate::{CliError, Common, HistArgs};

#[derive(Serialize)]
struct OdeNode {
    t: f64,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    #[serde(rename = "Mdag")]
    mdag: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    u: Vec<f64>,
}

pub fn odes(common: &Common) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let sys = cfg.guided_system()?;
    let dir = output_dir(common, &cfg)?;
    let path = dir.join("odes.ndjson");
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let sol = sys.solution();
    for m in 0..=sys.grid().steps() {
        let node = OdeNode {
            t: sys.grid().time(m),
            l: to_rows(sol.l(m)),
            mdag: to_rows(sol.mdag(m)),
            m: to_rows(sol.m(m)),
            u: sol.u(m).iter().copied().collect(),
        };
        let line = serde_json::to_string(&node).expect("serialisable node");
        writeln!(out, "{line}").map_err(io_err(&path))?;
    }
    out.flush().map_err(io_err(&path))?;
    write_manifest(&dir, "odes", Some(&cfg), &[])?;
    info!("wrote {} nodes to {}", sys.grid().steps() + 1, path.display());
    Ok(())
}

fn noise(sys: &GuidedSystem<ZooModel>, seed: u64, i: usize) -> WienerPath {
    WienerPath::sample(*sys.grid(), sys.noise_dim(), seed, i as u64)
}

#[derive(Serialize)]
struct ForwardSummary {
    paths: usize,
    failed: usize,
    radius: Option<f64>,
    survivors: Option<usize>,
    written: usize,
    seconds_per_path: f64,
}

pub fn forward(common: &Common, paths: usize, radius: Option<f64>, keep: usize) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let sys = cfg.guided_system()?;
    let dir = output_dir(common, &cfg)?;
    let start = Instant::now();
    let results: Vec<Option<Trajectory>> = (0..paths)
        .into_par_iter()
        .map(|i| euler_maruyama(sys.model(), sys.x0(), &noise(&sys, cfg.seed, i)).ok())
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let failed = results.iter().filter(|r| r.is_none()).count();
    let finished = results.into_iter().flatten();
    let kept: Vec<Trajectory> = match radius {
        Some(r) => finished.filter(|t| sys.observation().residual_norm(t.terminal()) <= r).collect(),
        None => finished.collect(),
    };
    let survivors = radius.map(|_| kept.len());
    let written = kept.len().min(keep);
    write_trajectories(&dir.join("paths"), "path", &kept[..written])?;
    if let (Some(r), Some(n)) = (radius, survivors) {
        info!("{n} of {paths} paths end within {r} of the observation");
    }
    let summary = ForwardSummary {
        paths,
        failed,
        radius,
        survivors,
        written,
        seconds_per_path: elapsed / paths.max(1) as f64,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(&dir, "forward", Some(&cfg), &[])
}

#[derive(Serialize)]
struct Stats {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

impl Stats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, se) = mean_and_standard_error(values);
        Some(Self {
            mean,
            std: se * (values.len() as f64).sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Serialize)]
struct PathSummary {
    paths: usize,
    failed: usize,
    endpoint: Option<EndpointReport>,
    log_psi: Option<Stats>,
    seconds_per_path: f64,
}

fn summarise(
    sys: &GuidedSystem<ZooModel>,
    results: Vec<Result<Trajectory, bridgesim_core::BridgeError>>,
    elapsed: f64,
) -> (PathSummary, Vec<Trajectory>) {
    let paths = results.len();
    let trajs: Vec<Trajectory> = results.into_iter().filter_map(|r| r.ok()).collect();
    let log_psi: Vec<f64> = trajs.iter().map(|t| t.log_psi).collect();
    let summary = PathSummary {
        paths,
        failed: paths - trajs.len(),
        endpoint: endpoint_report(&trajs, sys.observation()).ok(),
        log_psi: Stats::of(&log_psi),
        seconds_per_path: elapsed / paths.max(1) as f64,
    };
    (summary, trajs)
}

pub fn guided(common: &Common, paths: usize) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let sys = cfg.guided_system()?;
    let dir = output_dir(common, &cfg)?;
    let start = Instant::now();
    let results: Vec<_> = (0..paths)
        .into_par_iter()
        .map(|i| sample_guided(&sys, &noise(&sys, cfg.seed, i)))
        .collect();
    let (summary, trajs) = summarise(&sys, results, start.elapsed().as_secs_f64());
    write_trajectories(&dir.join("paths"), "path", &trajs)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(&dir, "guided", Some(&cfg), &[])
}

pub struct PcnOverrides {
    pub eta: Option<f64>,
    pub iters: Option<usize>,
    pub burn_in: Option<usize>,
    pub thin: Option<usize>,
    pub chains: Option<usize>,
}

#[derive(Serialize)]
struct ChainSummary {
    chain: usize,
    seed: u64,
    samples: usize,
    acceptance_rate: f64,
    accepted: usize,
    proposed: usize,
}

pub fn pcn(common: &Common, o: PcnOverrides) -> Result<(), CliError> {
    let mut cfg = resolve_config(common)?;
    let p = &mut cfg.pcn;
    p.eta = o.eta.unwrap_or(p.eta);
    p.iters = o.iters.unwrap_or(p.iters);
    p.burn_in = o.burn_in.unwrap_or(p.burn_in);
    p.thin = o.thin.unwrap_or(p.thin);
    p.chains = o.chains.unwrap_or(p.chains);
    cfg.validate()?;
    let sys = cfg.guided_system()?;
    let dir = output_dir(common, &cfg)?;
    let p = cfg.pcn;
    let runs: Vec<(u64, PcnRun)> = (0..p.chains)
        .into_par_iter()
        .map(|c| {
            let seed = cfg.seed + c as u64;
            pcn_chain(&sys, p.eta, p.iters, p.burn_in, p.thin, seed).map(|run| (seed, run))
        })
        .collect::<Result<_, _>>()?;
    let mut chains = Vec::with_capacity(runs.len());
    for (c, (seed, run)) in runs.into_iter().enumerate() {
        info!("chain {c}: acceptance {:.2}%", 100.0 * run.acceptance_rate);
        write_trajectories(&dir.join(format!("chain_{c}")), "sample", &run.samples)?;
        chains.push(ChainSummary {
            chain: c,
            seed,
            samples: run.samples.len(),
            acceptance_rate: run.acceptance_rate,
            accepted: run.accepted,
            proposed: run.proposed,
        });
    }
    write_json(&dir.join("summary.json"), &serde_json::json!({ "chains": chains }))?;
    write_manifest(&dir, "pcn", Some(&cfg), &[])
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    batch_size: usize,
    n_params: usize,
    final_loss: Option<f64>,
    tail_mean_loss: Option<f64>,
    tail_window: usize,
    lower_bound: Option<f64>,
    wall_time_s: f64,
    checkpoint: String,
}

pub fn train(
    common: &Common,
    checkpoint: Option<PathBuf>,
    log: Option<PathBuf>,
    iterations: Option<usize>,
    batch_size: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = resolve_config(common)?;
    cfg.train.iterations = iterations.unwrap_or(cfg.train.iterations);
    cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
    cfg.validate()?;
    let sys = cfg.guided_system()?;
    let dir = output_dir(common, &cfg)?;
    let checkpoint = checkpoint.unwrap_or_else(|| dir.join("checkpoint.json"));
    let log_path = log.unwrap_or_else(|| dir.join("train.ndjson"));
    let mut log_out = BufWriter::new(File::create(&log_path).map_err(io_err(&log_path))?);
    let mut log_error = None;
    let every = (cfg.train.iterations / 20).max(1);
    let trace = bridgesim_core::train(&sys, cfg.initial_net()?, &cfg.train_config(), |rec| {
        let line = serde_json::to_string(rec).expect("serialisable record");
        if let Err(e) = writeln!(log_out, "{line}") {
            log_error.get_or_insert(e);
        }
        if rec.iter % every == 0 || rec.iter + 1 == cfg.train.iterations {
            info!("iter {:>6}  loss {:>12.6}  |grad| {:.3e}", rec.iter, rec.loss, rec.grad_norm);
        }
    })?;
    if let Some(e) = log_error {
        return Err(io_err(&log_path)(e));
    }
    log_out.flush().map_err(io_err(&log_path))?;
    trace.net.save(&checkpoint).map_err(io_err(&checkpoint))?;
    let window = (trace.losses.len() / 10).clamp(1, 500);
    let summary = TrainSummary {
        iterations: trace.losses.len(),
        batch_size: cfg.train.batch_size,
        n_params: trace.net.n_params(),
        final_loss: trace.losses.last().copied(),
        tail_mean_loss: (!trace.losses.is_empty()).then(|| trace.tail_mean(window)),
        tail_window: window,
        lower_bound: trace.lower_bound,
        wall_time_s: trace.wall_time_s,
        checkpoint: checkpoint.display().to_string(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(&dir, "train", Some(&cfg), &[])
}

pub fn sample(common: &Common, checkpoint: &Path, paths: usize) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let sys = cfg.guided_system()?;
    let net = NeuralDrift::load(checkpoint)?;
    net.check_compatible(&sys)?;
    let dir = output_dir(common, &cfg)?;
    let start = Instant::now();
    let results: Vec<_> = (0..paths)
        .into_par_iter()
        .map(|i| sample_neural(&sys, &net, &noise(&sys, cfg.seed, i)))
        .collect();
    let (summary, trajs) = summarise(&sys, results, start.elapsed().as_secs_f64());
    write_trajectories(&dir.join("paths"), "path", &trajs)?;
    write_json(&dir.join("summary.json"), &summary)?;
    write_manifest(&dir, "sample", Some(&cfg), &[checkpoint])
}

#[derive(Serialize)]
struct HistOutput<'a> {
    time: f64,
    coordinate: usize,
    n_samples: usize,
    edges: &'a [f64],
    counts: &'a [u64],
    densities: Vec<f64>,
    modes: usize,
}

fn hist_output(h: &MarginalHistogram, prominence: f64) -> HistOutput<'_> {
    HistOutput {
        time: h.time,
        coordinate: h.coordinate,
        n_samples: h.n_samples,
        edges: &h.edges,
        counts: &h.counts,
        densities: h.densities(),
        modes: mode_count(h, prominence),
    }
}

fn check_coordinate(trajs: &[Trajectory], coordinate: usize) -> Result<(), CliError> {
    let dim = trajs[0].dim();
    if coordinate >= dim {
        return Err(CliError::Usage(format!("coordinate {coordinate} out of range for dimension {dim}")));
    }
    Ok(())
}

pub fn hist(input: &Path, args: &HistArgs) -> Result<(), CliError> {
    let trajs = read_trajectories(input)?;
    check_coordinate(&trajs, args.coordinate)?;
    let h = marginal_histogram(&trajs, args.time, args.coordinate, args.bins)?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let out = hist_output(&h, args.prominence);
    info!("{} samples at t = {}: {} modes", out.n_samples, out.time, out.modes);
    write_json(&args.out.join("hist.json"), &out)?;
    write_manifest(&args.out, "hist", None, &[input])
}

pub fn compare(a: &Path, b: &Path, args: &HistArgs) -> Result<(), CliError> {
    let (ta, tb) = (read_trajectories(a)?, read_trajectories(b)?);
    check_coordinate(&ta, args.coordinate)?;
    check_coordinate(&tb, args.coordinate)?;
    let (ha, hb) = paired_histograms(&ta, &tb, args.time, args.coordinate, args.bins)?;
    let tv = tv_distance(&ha, &hb)?;
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    info!("total variation at t = {}: {tv:.4}", ha.time);
    let out = serde_json::json!({
        "tv": tv,
        "a": hist_output(&ha, args.prominence),
        "b": hist_output(&hb, args.prominence),
    });
    write_json(&args.out.join("compare.json"), &out)?;
    write_manifest(&args.out, "compare", None, &[a, b])
}
