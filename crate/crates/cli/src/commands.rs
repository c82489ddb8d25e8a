//! The eight commands. Each stages its outputs and commits them with a
//! manifest only after it has succeeded.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use flowinfer_core::accounting::stock_uncertainty;
use flowinfer_core::baselines::{aggregate_windows, baseline_measures, comparison_metrics, ComparisonReport, FlowMeasures};
use flowinfer_core::domain::{CountryRegistry, FlowTensor, StockTable, TimeAxis};
use flowinfer_core::estimation::{calibrated_initial_stocks, elasticity, uq_estimate, ElasticitySample, StockSampler};
use flowinfer_core::nn::NetworkParameters;
use flowinfer_core::synthetic::{corrupt, evaluate_flows, generate, grid, sweep};
use flowinfer_core::training::{rollout, train, train_ensemble, Problem};
use serde::Serialize;

use crate::checkpoint::{load_model, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_flows, Dataset};
use crate::error::{InputError, UsageError};
use crate::export::{self, read_export, FLOWS_COLS};
use crate::output::{hash_tree, Manifest, Outputs, MANIFEST_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Train,
    Ensemble,
    Estimate,
    Elasticity,
    Baseline,
    Evaluate,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Ensemble => "ensemble",
            Command::Estimate => "estimate",
            Command::Elasticity => "elasticity",
            Command::Baseline => "baseline",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Default)]
struct Run {
    outputs: Outputs,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
}

impl Run {
    fn dataset(&mut self, cfg: &RunConfig) -> Result<Dataset> {
        let dir = cfg.data_dir()?;
        let ds = Dataset::load(dir)?;
        hash_tree(dir, &mut self.inputs)?;
        Ok(ds)
    }

    fn model(&mut self, cfg: &RunConfig, fingerprint: u64) -> Result<Vec<NetworkParameters>> {
        let dir = cfg.model_dir()?;
        let members = load_model(dir, fingerprint)?;
        hash_tree(dir, &mut self.inputs)?;
        Ok(members.into_iter().map(|c| c.params).collect())
    }

    fn input_file(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), crate::output::sha256_hex(&bytes));
        Ok(())
    }
}

/// Run `command` and write its outputs plus `manifest.json` into `out`.
/// Returns the manifest path.
pub fn run(command: Command, mut cfg: RunConfig, out: &Path) -> Result<PathBuf> {
    let mut run = Run::default();
    run.seeds.insert("seed".into(), cfg.seed);
    match command {
        Command::Synth => synth(&mut cfg, &mut run)?,
        Command::Train => train_one(&mut cfg, &mut run)?,
        Command::Ensemble => ensemble(&mut cfg, &mut run)?,
        Command::Estimate => estimate(&cfg, &mut run)?,
        Command::Elasticity => elasticity_cmd(&cfg, &mut run)?,
        Command::Baseline => baseline(&cfg, &mut run)?,
        Command::Evaluate => evaluate(&cfg, &mut run)?,
        Command::Sweep => sweep_cmd(&mut cfg, &mut run)?,
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        command: command.name().into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        core_version: flowinfer_core::VERSION.into(),
        config_hash: cfg.hash(),
        seeds: run.seeds,
        inputs: run.inputs,
        outputs: BTreeMap::new(),
        config: cfg,
    };
    run.outputs.commit(out, manifest)
}

#[derive(Serialize)]
struct WorldSummary<'a> {
    countries: usize,
    years: TimeAxis,
    eta: f64,
    alpha: &'a [f64],
    stock_clamps: usize,
}

fn synth(cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    cfg.corruption.seed = cfg.seed.wrapping_add(1);
    run.seeds.insert("world".into(), cfg.seed);
    run.seeds.insert("corruption".into(), cfg.corruption.seed);
    let world = generate(&cfg.world, cfg.seed)?;
    let obs = corrupt(&world, &cfg.corruption)?;
    for (name, bytes) in Dataset::from_world(&world, &obs).files() {
        run.outputs.add(name, bytes);
    }
    run.outputs.add_json(
        "world.json",
        &WorldSummary { countries: world.n(), years: world.years, eta: world.eta, alpha: &world.alpha, stock_clamps: world.stock_clamps },
    )
}

#[derive(Serialize)]
struct MemberSummary {
    file: Option<String>,
    seed: u64,
    final_loss: Option<f64>,
    error: Option<String>,
}

fn train_one(cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    cfg.train.seed = cfg.seed;
    run.seeds.insert("train".into(), cfg.seed);
    let ds = run.dataset(cfg)?;
    let panel = ds.panel()?;
    let problem = ds.problem(&panel);
    let arch = cfg.network.architecture(panel.layout().len());
    let outcome = train(&cfg.train, arch, &problem, &ds.targets)?;
    let loss = outcome.final_loss.total;
    run.outputs.add("loss_history.csv", export::loss_history(&outcome.history));
    let ckpt = Checkpoint::new(outcome.params, cfg.seed, cfg.hash(), panel.layout().fingerprint());
    run.outputs.add("model.ckpt", ckpt.to_bytes());
    run.outputs.add_json(
        "members.json",
        &[MemberSummary { file: Some("model.ckpt".into()), seed: cfg.seed, final_loss: Some(loss), error: None }],
    )
}

fn member_seeds(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|m| base.wrapping_add(m)).collect()
}

fn ensemble(cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    if cfg.ensemble.members == 0 {
        return Err(UsageError("ensemble needs at least one member".into()).into());
    }
    cfg.train.seed = cfg.seed;
    let seeds = member_seeds(cfg.seed, cfg.ensemble.members);
    for (m, s) in seeds.iter().enumerate() {
        run.seeds.insert(format!("member_{m:03}"), *s);
    }
    let ds = run.dataset(cfg)?;
    let panel = ds.panel()?;
    let problem = ds.problem(&panel);
    let arch = cfg.network.architecture(panel.layout().len());
    let hash = cfg.hash();
    let mut summary = Vec::new();
    for (m, (seed, result)) in seeds.iter().zip(train_ensemble(&cfg.train, arch, &problem, &ds.targets, &seeds)).enumerate() {
        match result {
            Ok(outcome) => {
                let file = format!("member_{m:03}.ckpt");
                run.outputs.add(format!("loss_history_{m:03}.csv"), export::loss_history(&outcome.history));
                summary.push(MemberSummary { file: Some(file.clone()), seed: *seed, final_loss: Some(outcome.final_loss.total), error: None });
                run.outputs.add(file, Checkpoint::new(outcome.params, *seed, hash.clone(), panel.layout().fingerprint()).to_bytes());
            }
            Err(e) => summary.push(MemberSummary { file: None, seed: *seed, final_loss: None, error: Some(e.to_string()) }),
        }
    }
    if summary.iter().all(|s| s.error.is_some()) {
        let first = summary[0].error.clone().unwrap_or_default();
        return Err(flowinfer_core::Error::Run(format!("every ensemble member failed; first: {first}")).into());
    }
    run.outputs.add_json("members.json", &summary)
}

#[derive(Serialize)]
struct EstimateSummary {
    members: usize,
    samples_per_member: usize,
    rollouts: usize,
    excluded: Vec<(usize, String)>,
}

fn samplers(cfg: &RunConfig, ds: &Dataset, members: &[NetworkParameters], problem: &Problem<'_>) -> Result<Vec<StockSampler>> {
    let n = ds.n();
    let relative = if cfg.estimate.stock_uncertainty {
        let unc = stock_uncertainty(&ds.stock_tables(), &ds.rates).context("initial-stock uncertainty")?;
        let first = unc.iter().find(|u| u.year == ds.years.start_year).unwrap_or(&unc[0]);
        first.relative_filled()
    } else {
        vec![0.0; n * n]
    };
    let sampler = |mean: StockTable| -> Result<StockSampler> {
        let sigma = mean.values().iter().zip(&relative).map(|(m, r)| m * r).collect();
        Ok(StockSampler::new(mean, sigma)?)
    };
    if cfg.estimate.calibrate {
        members
            .iter()
            .map(|p| sampler(calibrated_initial_stocks(p, problem, &ds.stocks)?.initial().clone()))
            .collect()
    } else {
        Ok(vec![sampler(ds.initial_stocks.clone())?])
    }
}

fn estimate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    run.seeds.insert("uncertainty".into(), cfg.seed);
    let ds = run.dataset(cfg)?;
    let panel = ds.panel()?;
    let problem = ds.problem(&panel);
    let members = run.model(cfg, panel.layout().fingerprint())?;
    let samplers = samplers(cfg, &ds, &members, &problem)?;
    let est = uq_estimate(&members, &samplers, cfg.estimate.samples, &problem, cfg.seed)?;
    for (name, bytes) in export::estimate_files(&est, &ds.registry) {
        run.outputs.add(name, bytes);
    }
    run.outputs.add_json(
        "summary.json",
        &EstimateSummary {
            members: members.len(),
            samples_per_member: cfg.estimate.samples,
            rollouts: est.samples,
            excluded: est.excluded.clone(),
        },
    )
}

fn elasticity_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    run.seeds.insert("sample".into(), cfg.seed);
    let ds = run.dataset(cfg)?;
    let panel = ds.panel()?;
    let problem = ds.problem(&panel);
    let members = run.model(cfg, panel.layout().fingerprint())?;
    let report = elasticity(&members, &problem, ElasticitySample { size: cfg.elasticity.sample, seed: cfg.seed })?;
    run.outputs.add("elasticity.csv", export::elasticity_report(&report));
    Ok(())
}

/// Mean flows of an `estimate` export as yearly tensors.
pub fn load_estimate_flows(path: &Path, registry: &CountryRegistry, years: TimeAxis) -> Result<Vec<FlowTensor>> {
    let n = registry.len();
    let mut values = vec![vec![0.0; n * n * n]; years.len()];
    for r in read_export(path, &FLOWS_COLS)? {
        let bad = || InputError(format!("{}: row {:?} does not fit the dataset", path.display(), r.key));
        let year: i32 = r.key[0].parse().map_err(|_| bad())?;
        let t = years.index(year).ok_or_else(bad)?;
        let idx: Vec<usize> = r.key[1..].iter().map(|c| registry.index_of(c).ok_or_else(bad)).collect::<Result<_, _>>()?;
        values[t][(idx[0] * n + idx[1]) * n + idx[2]] = r.mean;
    }
    years.years().zip(values).map(|(y, v)| Ok(FlowTensor::new(y, n, v)?)).collect()
}

fn windowed(flows: &[FlowTensor], window: usize) -> Result<Vec<FlowMeasures>> {
    Ok(aggregate_windows(flows, window)?.iter().map(|t| FlowMeasures::from_tensor(t.year(), t)).collect())
}

fn baseline(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let w = cfg.baseline.window;
    if w == 0 {
        return Err(UsageError("baseline window must be positive".into()).into());
    }
    let ds = run.dataset(cfg)?;
    let reference = match &cfg.baseline.reference {
        Some(p) => {
            run.input_file(p)?;
            load_flows(p, &ds.registry, ds.years)?
        }
        None => ds.truth.clone().ok_or_else(|| InputError("no reference flows: dataset has no truth and none was given".into()))?,
    };
    let reference = windowed(&reference, w)?;
    let tables: Vec<StockTable> =
        ds.stock_tables().into_iter().filter(|t| (t.year() - ds.years.start_year).rem_euclid(w as i32) == 0).collect();
    let mut report = ComparisonReport::default();
    for (method, measures) in baseline_measures(&tables, &ds.rates)? {
        report.push(method, comparison_metrics(&measures, &reference)?);
    }
    if let Some(p) = &cfg.baseline.estimate {
        run.input_file(p)?;
        let flows = load_estimate_flows(p, &ds.registry, ds.years)?;
        report.push("neural", comparison_metrics(&windowed(&flows, w)?, &reference)?);
    }
    run.outputs.add("comparison.csv", export::comparison_report(&report));
    Ok(())
}

/// Member-mean rollout flows from the dataset's initial stocks.
pub fn mean_rollout_flows(members: &[NetworkParameters], problem: &Problem<'_>) -> Result<Vec<FlowTensor>> {
    let mut sum: Option<Vec<Vec<f64>>> = None;
    for p in members {
        let r = rollout(p, problem)?;
        let acc = sum.get_or_insert_with(|| r.flows.iter().map(|f| vec![0.0; f.values().len()]).collect());
        for (a, f) in acc.iter_mut().zip(&r.flows) {
            a.iter_mut().zip(f.values()).for_each(|(a, v)| *a += v);
        }
    }
    let m = members.len() as f64;
    let n = problem.n();
    problem
        .years
        .years()
        .zip(sum.unwrap_or_default())
        .map(|(y, v)| Ok(FlowTensor::new(y, n, v.into_iter().map(|x| x / m).collect())?))
        .collect()
}

fn evaluate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let ds = run.dataset(cfg)?;
    let truth = ds.truth.as_ref().ok_or_else(|| InputError("dataset has no true flows to evaluate against".into()))?;
    let panel = ds.panel()?;
    let problem = ds.problem(&panel);
    let members = run.model(cfg, panel.layout().fingerprint())?;
    let flows = mean_rollout_flows(&members, &problem)?;
    let metrics = evaluate_flows(&flows, truth, Some(&ds.targets.corridor_split))?;
    run.outputs.add_json("metrics.json", &metrics)
}

fn sweep_cmd(cfg: &mut RunConfig, run: &mut Run) -> Result<()> {
    cfg.corruption.seed = cfg.seed.wrapping_add(1);
    cfg.train.seed = cfg.seed;
    run.seeds.insert("world".into(), cfg.seed);
    run.seeds.insert("corruption".into(), cfg.corruption.seed);
    run.seeds.insert("train".into(), cfg.seed);
    let world = generate(&cfg.world, cfg.seed)?;
    let obs = corrupt(&world, &cfg.corruption)?;
    let s = &cfg.sweep;
    let points = grid(
        cfg.network.architecture(world.panel.layout().len()),
        cfg.train,
        &s.depths,
        &s.widths,
        &s.activations,
        &s.latent_dims,
        &s.lambdas,
    );
    if points.is_empty() {
        return Err(UsageError("sweep grid is empty".into()).into());
    }
    run.outputs.add("sweep.csv", export::sweep_report(&sweep(&points, &world, &obs)));
    Ok(())
}
