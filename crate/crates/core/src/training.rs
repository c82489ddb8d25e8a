//! Recursive rollout over years, the weighted three-term loss, exact
//! backpropagation through the rollout, and the training loop.
//!
//! Edges `(i, j, k)` with `j != k` are enumerated lexicographically; edge `e`
//! owns one row of every batch buffer and one latent vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::covariates::{CovariatePanel, IndexGroup};
use crate::domain::{
    step_into, CorridorSplit, DemographicRates, FlowTensor, NetMigrationVector,
    OriginDestinationMatrix, StockTable, TargetDataset, TimeAxis,
};
use crate::error::{bail, Error, Result};
use crate::math;
use crate::nn::{
    backward_batch, covariate_rows_backward, forward_batch_unchecked, project_covariate_rows,
    Adam, AdamConfig, Architecture, BatchTape, NetworkParameters,
};
use crate::transform::PowerTransform;

/// Log-flows above this are clamped before exponentiation.
pub const LOG_FLOW_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub epochs: usize,
    /// Target entries per optimizer step; `None` uses every entry.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub lambda_stock: f64,
    pub lambda_net: f64,
    pub lambda_flow: f64,
    pub seed: u64,
    pub test_fraction: f64,
    /// Backpropagate through predicted stocks fed back as covariates.
    pub stock_gradients: bool,
    /// Cut gradient carries every this many years (None: full window).
    pub truncation: Option<usize>,
    /// Starting bias of the log-flow output. `None` takes the log of the
    /// median positive training flow target, or of 100 without any.
    pub initial_log_flow: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            batch_size: None,
            learning_rate: 1e-3,
            lambda_stock: crate::transform::DEFAULT_TARGET_LAMBDA,
            lambda_net: crate::transform::DEFAULT_TARGET_LAMBDA,
            lambda_flow: crate::transform::DEFAULT_TARGET_LAMBDA,
            seed: 0,
            test_fraction: 0.2,
            stock_gradients: true,
            truncation: None,
            initial_log_flow: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!(Usage, "test_fraction must lie in (0, 1), got {}", self.test_fraction);
        }
        for l in [self.lambda_stock, self.lambda_net, self.lambda_flow] {
            if !l.is_finite() {
                bail!(Usage, "target transform parameters must be finite");
            }
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            bail!(Usage, "learning rate must be finite and >= 0");
        }
        if self.initial_log_flow.is_some_and(|b| !b.is_finite() || b > LOG_FLOW_CAP) {
            bail!(Usage, "initial log-flow bias must be finite and at most {LOG_FLOW_CAP}");
        }
        if self.batch_size == Some(0) || self.truncation == Some(0) {
            bail!(Usage, "batch_size and truncation must be positive when set");
        }
        Ok(())
    }

    fn transforms(&self) -> [PowerTransform; 3] {
        [
            PowerTransform { lambda: self.lambda_stock },
            PowerTransform { lambda: self.lambda_net },
            PowerTransform { lambda: self.lambda_flow },
        ]
    }
}

/// Loss split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub stock: f64,
    pub net: f64,
    pub flow: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutDiagnostics {
    /// Stock cells clamped at zero, per year stepped.
    pub stock_clamps: Vec<usize>,
    /// Log-flows capped at [`LOG_FLOW_CAP`], per year.
    pub flow_clamps: Vec<usize>,
}

/// Trajectory of one rollout. `stocks` has one more entry than `flows`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub years: TimeAxis,
    pub flows: Vec<FlowTensor>,
    pub stocks: Vec<StockTable>,
    pub od: Vec<OriginDestinationMatrix>,
    pub net: Vec<NetMigrationVector>,
    pub diagnostics: RolloutDiagnostics,
}

impl RolloutResult {
    pub fn flow(&self, year: i32) -> Option<&FlowTensor> {
        self.years.index(year).map(|t| &self.flows[t])
    }

    /// Stocks at the start of `year`; `end_year + 1` is the final table.
    pub fn stock(&self, year: i32) -> Option<&StockTable> {
        let t = year.checked_sub(self.years.start_year)?;
        usize::try_from(t).ok().and_then(|t| self.stocks.get(t))
    }

    pub fn od(&self, year: i32) -> Option<&OriginDestinationMatrix> {
        self.years.index(year).map(|t| &self.od[t])
    }

    pub fn net(&self, year: i32) -> Option<&NetMigrationVector> {
        self.years.index(year).map(|t| &self.net[t])
    }
}

/// Everything a rollout needs besides the parameters.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub panel: &'a CovariatePanel,
    pub rates: &'a DemographicRates,
    pub initial_stocks: &'a StockTable,
    pub years: TimeAxis,
}

impl Problem<'_> {
    fn check(&self, arch: &Architecture) -> Result<()> {
        let n = self.panel.n();
        if self.initial_stocks.n() != n || self.rates.n() != n {
            bail!(Structural, "panel, rates and initial stocks disagree on the number of countries");
        }
        if self.initial_stocks.year() != self.years.start_year {
            bail!(
                Structural,
                "initial stocks are dated {} but the rollout starts in {}",
                self.initial_stocks.year(),
                self.years.start_year
            );
        }
        if arch.covariate_dim != self.panel.layout().len() {
            bail!(
                Structural,
                "network expects {} covariates, layout has {}",
                arch.covariate_dim,
                self.panel.layout().len()
            );
        }
        if n < 2 {
            bail!(Structural, "need at least two countries");
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.panel.n()
    }

    pub fn edges(&self) -> usize {
        let n = self.n();
        n * n * (n - 1)
    }
}

/// Edge `(i, j, k)` for each row, lexicographic with `j != k`.
pub fn edge_list(n: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::with_capacity(n * n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

struct YearRecord {
    tape: BatchTape,
    /// Pair blocks with the stock column filled (BO, BD), if they carry one.
    stock_blocks: [Option<Vec<f64>>; 2],
    flow_capped: Vec<bool>,
    /// Clamp flags of the stock table produced by this year's step.
    stock_clamped: Vec<bool>,
}

struct Recorded {
    result: RolloutResult,
    years: Vec<YearRecord>,
}

const STOCK_GROUPS: [IndexGroup; 2] = [IndexGroup::BirthOrigin, IndexGroup::BirthDestination];

/// Run the estimator forward through `problem.years`, feeding predicted
/// stocks and latent states from one year into the next.
pub fn rollout(params: &NetworkParameters, problem: &Problem<'_>) -> Result<RolloutResult> {
    run(params, problem, false).map(|r| r.result)
}

fn run(params: &NetworkParameters, problem: &Problem<'_>, record: bool) -> Result<Recorded> {
    let arch = *params.arch();
    problem.check(&arch)?;
    let n = problem.n();
    let edges = edge_list(n);
    let rows = edges.len();
    let z = arch.latent_dim;
    let h = arch.layer_offsets()[0].fan_out;
    let layout = problem.panel.layout();

    let mut latent = vec![0.0; rows * z];
    let mut stocks = vec![problem.initial_stocks.clone()];
    let mut flows = Vec::with_capacity(problem.years.len());
    let mut od = Vec::with_capacity(problem.years.len());
    let mut net = Vec::with_capacity(problem.years.len());
    let mut diagnostics = RolloutDiagnostics::default();
    let mut records = Vec::new();

    for year in problem.years.years() {
        let current = stocks.last().expect("initial stocks present");
        let mut projections: Vec<Option<Vec<f64>>> = Vec::with_capacity(6);
        let mut stock_blocks: [Option<Vec<f64>>; 2] = [None, None];
        for g in IndexGroup::ALL {
            let range = layout.group_range(g);
            if range.is_empty() {
                projections.push(None);
                continue;
            }
            let width = range.len();
            let block = problem.panel.block(g, year)?;
            let grows = g.rows(n);
            let proj = match (problem.panel.stock_column(g), problem.panel.stock_scaling(g)) {
                (Some(col), Some(scaling)) => {
                    let mut x = block.to_vec();
                    for (r, s) in current.values().iter().enumerate() {
                        x[r * width + col] = scaling.apply(*s);
                    }
                    let p = project_covariate_rows(params, range, &x, grows);
                    let slot = if g == IndexGroup::BirthOrigin { 0 } else { 1 };
                    stock_blocks[slot] = Some(x);
                    p
                }
                _ => project_covariate_rows(params, range, block, grows),
            };
            projections.push(Some(proj));
        }
        let pre = assemble_first_layer(n, h, &projections);
        let (out, tape) = forward_batch_unchecked(params, pre, &latent, rows)?;
        let width = 1 + z;
        let mut tvals = vec![0.0; n * n * n];
        let mut capped = vec![false; if record { rows } else { 0 }];
        let mut n_capped = 0;
        for (e, &(i, j, k)) in edges.iter().enumerate() {
            let row = &out[e * width..(e + 1) * width];
            if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
                let what = if bad == 0 { "log-flow" } else { "latent state" };
                bail!(Run, "non-finite {what} in {year} on edge (birth {i}, origin {j}, destination {k})");
            }
            let mut l = row[0];
            if l > LOG_FLOW_CAP {
                l = LOG_FLOW_CAP;
                n_capped += 1;
                if record {
                    capped[e] = true;
                }
            }
            tvals[(i * n + j) * n + k] = math::exp(l);
            latent[e * z..(e + 1) * z].copy_from_slice(&row[1..]);
        }
        let births = problem.rates.births(year)?;
        let gamma = problem.rates.death_rate(year)?;
        let mut next = vec![0.0; n * n];
        let clamped = step_into(n, current.values(), &tvals, births, gamma, &mut next);
        let stock_clamped = if record {
            stock_clamp_flags(n, current.values(), &tvals, births, gamma)
        } else {
            Vec::new()
        };
        let t = FlowTensor::from_raw(year, n, tvals);
        let f = crate::domain::flows_by_origin(&t);
        net.push(crate::domain::net_migration(&f));
        od.push(f);
        flows.push(t);
        stocks.push(StockTable::from_raw(year + 1, n, next));
        diagnostics.stock_clamps.push(clamped);
        diagnostics.flow_clamps.push(n_capped);
        if record {
            records.push(YearRecord { tape, stock_blocks, flow_capped: capped, stock_clamped });
        }
    }
    Ok(Recorded {
        result: RolloutResult { years: problem.years, flows, stocks, od, net, diagnostics },
        years: records,
    })
}

/// First-layer covariate pre-activations of every edge from per-group
/// projections (`None` for empty groups). Pieces sharing `(i, j)` or `(i, k)`
/// are summed once per pair.
fn assemble_first_layer(n: usize, h: usize, proj: &[Option<Vec<f64>>]) -> Vec<f64> {
    let part = |g: IndexGroup| proj[g as usize].as_deref();
    let mut a = vec![0.0; n * n * h];
    let mut c = vec![0.0; n * n * h];
    for i in 0..n {
        for j in 0..n {
            let r = (i * n + j) * h;
            let dst = &mut a[r..r + h];
            for (g, row) in [(IndexGroup::Birth, i), (IndexGroup::Origin, j), (IndexGroup::BirthOrigin, i * n + j)] {
                if let Some(p) = part(g) {
                    dst.iter_mut().zip(&p[row * h..(row + 1) * h]).for_each(|(d, v)| *d += v);
                }
            }
            let dst = &mut c[r..r + h];
            for (g, row) in [(IndexGroup::Destination, j), (IndexGroup::BirthDestination, i * n + j)] {
                if let Some(p) = part(g) {
                    dst.iter_mut().zip(&p[row * h..(row + 1) * h]).for_each(|(d, v)| *d += v);
                }
            }
        }
    }
    let od = part(IndexGroup::OriginDestination);
    let mut pre = vec![0.0; n * n * (n - 1) * h];
    let mut e = 0;
    for i in 0..n {
        for j in 0..n {
            let ra = &a[(i * n + j) * h..(i * n + j + 1) * h];
            for k in 0..n {
                if j == k {
                    continue;
                }
                let rc = &c[(i * n + k) * h..(i * n + k + 1) * h];
                let dst = &mut pre[e * h..(e + 1) * h];
                match od {
                    Some(p) => {
                        let ro = &p[(j * n + k) * h..(j * n + k + 1) * h];
                        for q in 0..h {
                            dst[q] = ra[q] + rc[q] + ro[q];
                        }
                    }
                    None => {
                        for q in 0..h {
                            dst[q] = ra[q] + rc[q];
                        }
                    }
                }
                e += 1;
            }
        }
    }
    pre
}

/// Reverse of [`assemble_first_layer`]: per-group sums of edge gradients,
/// indexed like [`IndexGroup::ALL`].
fn scatter_first_layer(n: usize, h: usize, g: &[f64]) -> [Vec<f64>; 6] {
    let mut ga = vec![0.0; n * n * h];
    let mut gc = vec![0.0; n * n * h];
    let mut god = vec![0.0; n * n * h];
    let mut e = 0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                let src = &g[e * h..(e + 1) * h];
                let (ia, ic, io) = ((i * n + j) * h, (i * n + k) * h, (j * n + k) * h);
                for q in 0..h {
                    ga[ia + q] += src[q];
                    gc[ic + q] += src[q];
                    god[io + q] += src[q];
                }
                e += 1;
            }
        }
    }
    let mut gb = vec![0.0; n * h];
    let mut go = vec![0.0; n * h];
    let mut gd = vec![0.0; n * h];
    for i in 0..n {
        for j in 0..n {
            let r = (i * n + j) * h;
            for q in 0..h {
                gb[i * h + q] += ga[r + q];
                go[j * h + q] += ga[r + q];
                gd[j * h + q] += gc[r + q];
            }
        }
    }
    [gb, go, gd, ga, gc, god]
}

fn stock_clamp_flags(n: usize, s: &[f64], t: &[f64], births: &[f64], gamma: &[f64]) -> Vec<bool> {
    let mut flags = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut v = s[i * n + j] * (1.0 - gamma[j]);
            if i == j {
                v += births[j];
            }
            for k in 0..n {
                v += t[(i * n + k) * n + j] - t[(i * n + j) * n + k];
            }
            flags[i * n + j] = v < 0.0;
        }
    }
    flags
}

/// Gradients of the loss with respect to rollout quantities.
struct LossGrads {
    /// Per stock table (years + 1 entries), `n x n`.
    stocks: Vec<Vec<f64>>,
    /// Per year, `dJ/dF` including the net-migration term, `n x n`.
    od: Vec<Vec<f64>>,
}

/// `J` of a rollout against `targets`. Every target entry contributes,
/// including those on test corridors; use [`training_targets`] to drop them.
pub fn compute_loss(result: &RolloutResult, targets: &TargetDataset, config: &TrainConfig) -> Result<LossBreakdown> {
    loss_inner(result, targets, config, false).map(|(l, _)| l)
}

fn loss_inner(
    result: &RolloutResult,
    targets: &TargetDataset,
    config: &TrainConfig,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<LossGrads>)> {
    if targets.is_empty() {
        bail!(Estimation, "target set is empty");
    }
    let n = result.stocks[0].n();
    if targets.n != n {
        bail!(Structural, "targets cover {} countries, rollout {n}", targets.n);
    }
    let years = result.years;
    let [ps, pm, pf] = config.transforms();
    let mut grads = want_grads.then(|| LossGrads {
        stocks: vec![vec![0.0; n * n]; years.len() + 1],
        od: vec![vec![0.0; n * n]; years.len()],
    });
    let stock_index = |y: i32| -> Result<usize> {
        let t = y - years.start_year;
        if t < 0 || t as usize > years.len() {
            bail!(Structural, "stock target year {y} outside the rollout");
        }
        Ok(t as usize)
    };
    let year_index = |y: i32| -> Result<usize> {
        years.index(y).ok_or_else(|| Error::Structural(alloc::format!("target year {y} outside the rollout")))
    };

    let mut loss = LossBreakdown::default();
    if !targets.stock_diffs.is_empty() {
        let m = targets.stock_diffs.len() as f64;
        let mut sum = 0.0;
        for d in &targets.stock_diffs {
            let (a, b) = (stock_index(d.start_year)?, stock_index(d.end_year)?);
            let cell = d.birth * n + d.residence;
            let pred = result.stocks[b].values()[cell] - result.stocks[a].values()[cell];
            let r = ps.apply(pred) - ps.apply(d.value);
            sum += d.weight * r * r;
            if let Some(g) = grads.as_mut() {
                let dp = 2.0 * d.weight * r * ps.derivative(pred) / m;
                g.stocks[b][cell] += dp;
                g.stocks[a][cell] -= dp;
            }
        }
        loss.stock = sum / m;
    }
    if !targets.net_migration.is_empty() {
        let m = targets.net_migration.len() as f64;
        let mut sum = 0.0;
        for t in &targets.net_migration {
            let y = year_index(t.year)?;
            let pred = result.net[y].values[t.country];
            let r = pm.apply(pred) - pm.apply(t.value);
            sum += t.weight * r * r;
            if let Some(g) = grads.as_mut() {
                // mu_c = sum_k F[k][c] - sum_k F[c][k]
                let dp = 2.0 * t.weight * r * pm.derivative(pred) / m;
                let c = t.country;
                for k in 0..n {
                    if k != c {
                        g.od[y][k * n + c] += dp;
                        g.od[y][c * n + k] -= dp;
                    }
                }
            }
        }
        loss.net = sum / m;
    }
    if !targets.flows.is_empty() {
        let m = targets.flows.len() as f64;
        let mut sum = 0.0;
        for t in &targets.flows {
            let y = year_index(t.year)?;
            let cell = t.origin * n + t.destination;
            let pred = result.od[y].values()[cell];
            let r = pf.apply(pred) - pf.apply(t.value);
            sum += t.weight * r * r;
            if let Some(g) = grads.as_mut() {
                g.od[y][cell] += 2.0 * t.weight * r * pf.derivative(pred) / m;
            }
        }
        loss.flow = sum / m;
    }
    loss.total = loss.stock + loss.net + loss.flow;
    Ok((loss, grads))
}

/// The targets with every flow on a test corridor removed.
pub fn training_targets(targets: &TargetDataset) -> TargetDataset {
    let split = &targets.corridor_split;
    TargetDataset {
        n: targets.n,
        stock_diffs: targets.stock_diffs.clone(),
        flows: targets
            .flows
            .iter()
            .filter(|f| !split.is_test(f.origin, f.destination))
            .cloned()
            .collect(),
        net_migration: targets.net_migration.clone(),
        corridor_split: split.clone(),
    }
}

/// Loss and its exact parameter gradient for one full rollout.
pub fn loss_and_gradient(
    params: &NetworkParameters,
    problem: &Problem<'_>,
    targets: &TargetDataset,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Vec<f64>, RolloutResult)> {
    let rec = run(params, problem, true)?;
    let (loss, lg) = loss_inner(&rec.result, targets, config, true)?;
    let grads = backpropagate(params, problem, config, rec.years, &rec.result, lg.expect("requested"))?;
    Ok((loss, grads, rec.result))
}

fn backpropagate(
    params: &NetworkParameters,
    problem: &Problem<'_>,
    config: &TrainConfig,
    records: Vec<YearRecord>,
    result: &RolloutResult,
    lg: LossGrads,
) -> Result<Vec<f64>> {
    let arch = *params.arch();
    let n = problem.n();
    let edges = edge_list(n);
    let rows = edges.len();
    let z = arch.latent_dim;
    let h = arch.layer_offsets()[0].fan_out;
    let width = 1 + z;
    let layout = problem.panel.layout();
    let start = problem.years.start_year;

    let mut grads = vec![0.0; arch.param_count()];
    let mut g_next = lg.stocks[problem.years.len()].clone();
    let mut gz_next = vec![0.0; rows * z];

    for (t, rec) in records.into_iter().enumerate().rev() {
        let year = start + t as i32;
        let gamma = problem.rates.death_rate(year)?;
        let tvals = result.flows[t].values();
        let current = &result.stocks[t];
        // gradient reaching the unclamped update of each cell
        let gm: Vec<f64> = g_next
            .iter()
            .zip(&rec.stock_clamped)
            .map(|(g, c)| if *c { 0.0 } else { *g })
            .collect();
        let god = &lg.od[t];
        let mut out_grads = vec![0.0; rows * width];
        for (e, &(i, j, k)) in edges.iter().enumerate() {
            let row = &mut out_grads[e * width..(e + 1) * width];
            if !rec.flow_capped[e] {
                let gt = god[j * n + k] + gm[i * n + k] - gm[i * n + j];
                row[0] = gt * tvals[(i * n + j) * n + k];
            }
            row[1..].copy_from_slice(&gz_next[e * z..(e + 1) * z]);
        }
        let inputs = backward_batch(params, rec.tape, &out_grads, &mut grads)?;

        let mut g_stock = lg.stocks[t].clone();
        for (c, g) in g_stock.iter_mut().enumerate() {
            *g += gm[c] * (1.0 - gamma[c % n]);
        }
        let group_grads = scatter_first_layer(n, h, &inputs.cov_proj);
        for g in IndexGroup::ALL {
            let range = layout.group_range(g);
            if range.is_empty() {
                continue;
            }
            let grows = g.rows(n);
            let acc = &group_grads[g as usize];
            let slot = STOCK_GROUPS.iter().position(|s| *s == g);
            let stock_x = slot.and_then(|s| rec.stock_blocks[s].as_ref());
            let x = match stock_x {
                Some(x) => x.as_slice(),
                None => problem.panel.block(g, year)?,
            };
            let want = config.stock_gradients && stock_x.is_some();
            let gx = covariate_rows_backward(params, range.clone(), x, acc, grows, &mut grads, want);
            if let (Some(gx), Some(col), Some(scaling)) =
                (gx, problem.panel.stock_column(g), problem.panel.stock_scaling(g))
            {
                let w = range.len();
                for (c, s) in current.values().iter().enumerate() {
                    g_stock[c] += gx[c * w + col] * scaling.derivative(*s);
                }
            }
        }
        gz_next = inputs.latent;
        g_next = g_stock;
        if let Some(horizon) = config.truncation {
            if t > 0 && t % horizon == 0 {
                gz_next.iter_mut().for_each(|v| *v = 0.0);
                g_next.clone_from(&lg.stocks[t]);
            }
        }
    }
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        bail!(Numeric, "non-finite gradient for parameter {bad}");
    }
    Ok(grads)
}

/// Parameters and per-epoch loss history of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: NetworkParameters,
    /// Training loss at the start of each epoch.
    pub history: Vec<LossBreakdown>,
    /// Training loss with the final parameters.
    pub final_loss: LossBreakdown,
}

/// Glorot weights seeded by `config.seed`, with the log-flow bias set so
/// that early flows sit near the observed scale instead of collapsing to 0.
pub fn initial_parameters(config: &TrainConfig, arch: Architecture, targets: &TargetDataset) -> Result<NetworkParameters> {
    let mut params = NetworkParameters::init(arch, config.seed)?;
    let bias = match config.initial_log_flow {
        Some(b) => b,
        None => {
            let pos: Vec<f64> = training_targets(targets).flows.iter().map(|f| f.value).filter(|v| *v > 0.0).collect();
            math::ln(crate::stats::median(&pos).unwrap_or(100.0))
        }
    };
    if let Some(last) = arch.layer_offsets().last() {
        params.as_mut_slice()[last.bias.start] = bias.min(LOG_FLOW_CAP);
    }
    Ok(params)
}

/// Train from [`initial_parameters`].
pub fn train(
    config: &TrainConfig,
    arch: Architecture,
    problem: &Problem<'_>,
    targets: &TargetDataset,
) -> Result<TrainOutcome> {
    let params = initial_parameters(config, arch, targets)?;
    train_from(config, params, problem, targets, |_, _| {})
}

/// Train starting from `params`. `on_epoch` sees the epoch index and its
/// loss; it cannot alter the run.
pub fn train_from(
    config: &TrainConfig,
    mut params: NetworkParameters,
    problem: &Problem<'_>,
    targets: &TargetDataset,
    mut on_epoch: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = training_targets(targets);
    if train_set.is_empty() {
        bail!(Estimation, "no training targets after removing test corridors");
    }
    train_set.validate(problem.years)?;
    let mut adam = Adam::new(AdamConfig { lr: config.learning_rate, ..AdamConfig::default() }, params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5851_f42d_4c95_7f2d);
    let total = train_set.stock_diffs.len() + train_set.net_migration.len() + train_set.flows.len();
    let mut order: Vec<usize> = (0..total).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches: Vec<TargetDataset> = match config.batch_size {
            None => vec![train_set.clone()],
            Some(b) if b >= total => vec![train_set.clone()],
            Some(b) => {
                order.shuffle(&mut rng);
                order.chunks(b).map(|c| subset(&train_set, c)).collect()
            }
        };
        for (bi, batch) in batches.iter().enumerate() {
            let (loss, grads, result) = match loss_and_gradient(&params, problem, batch, config) {
                Ok(v) => v,
                Err(e) => bail!(Run, "epoch {epoch}: {e}"),
            };
            if bi == 0 {
                let full = if batches.len() == 1 { loss } else { compute_loss(&result, &train_set, config)? };
                if !full.total.is_finite() {
                    bail!(Run, "loss diverged at epoch {epoch}");
                }
                on_epoch(epoch, &full);
                history.push(full);
            }
            if batch.is_empty() {
                continue;
            }
            adam.step(params.as_mut_slice(), &grads).map_err(|e| Error::Run(alloc::format!("epoch {epoch}: {e}")))?;
        }
    }
    let final_loss = compute_loss(&rollout(&params, problem)?, &train_set, config)?;
    if !final_loss.total.is_finite() {
        bail!(Run, "loss diverged after the final epoch");
    }
    Ok(TrainOutcome { params, history, final_loss })
}

/// Entries `idx` of the concatenation stock diffs, net migration, flows.
fn subset(t: &TargetDataset, idx: &[usize]) -> TargetDataset {
    let mut idx = idx.to_vec();
    idx.sort_unstable();
    let (s, m) = (t.stock_diffs.len(), t.net_migration.len());
    let mut out = TargetDataset::empty(t.n);
    out.corridor_split = t.corridor_split.clone();
    for &i in &idx {
        if i < s {
            out.stock_diffs.push(t.stock_diffs[i].clone());
        } else if i < s + m {
            out.net_migration.push(t.net_migration[i - s].clone());
        } else {
            out.flows.push(t.flows[i - s - m].clone());
        }
    }
    out
}

/// Independent trainings, one per seed. A failing member does not stop the others.
pub fn train_ensemble(
    config: &TrainConfig,
    arch: Architecture,
    problem: &Problem<'_>,
    targets: &TargetDataset,
    seeds: &[u64],
) -> Vec<Result<TrainOutcome>> {
    seeds
        .iter()
        .map(|&seed| train(&TrainConfig { seed, ..*config }, arch, problem, targets))
        .collect()
}

/// Assign `round(fraction * corridors)` whole corridors to the test set.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> Result<CorridorSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        bail!(Usage, "test fraction must lie in (0, 1), got {fraction}");
    }
    let corridors: Vec<usize> = (0..n * n).filter(|c| c / n != c % n).collect();
    if corridors.len() < 2 {
        bail!(Estimation, "need at least two corridors to split, have {}", corridors.len());
    }
    let count = math::round(fraction * corridors.len() as f64) as usize;
    let mut shuffled = corridors;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut test = vec![false; n * n];
    for c in shuffled.into_iter().take(count) {
        test[c] = true;
    }
    CorridorSplit::from_test_mask(n, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::{Component, ComponentSource, CovariateLayout, CovariateTables, ScalingSpec};
    use crate::domain::{flows_by_origin, net_migration, stock_step, FlowTarget, NetMigrationTarget, StockDiffTarget};
    use crate::nn::Activation;
    use alloc::string::ToString;

    /// Layout with only the two stock components and the Kronecker flags.
    pub(crate) fn stock_only_layout() -> CovariateLayout {
        let mut c = Vec::new();
        for g in [IndexGroup::BirthOrigin, IndexGroup::BirthDestination] {
            c.push(Component {
                name: alloc::format!("stock[{}]", g.tag()),
                group: g,
                source: ComponentSource::MigrantStock,
                binary: false,
                fixed_lambda: Some(0.0),
            });
            c.push(Component {
                name: alloc::format!("native[{}]", g.tag()),
                group: g,
                source: ComponentSource::Kronecker,
                binary: true,
                fixed_lambda: None,
            });
        }
        CovariateLayout::new(7, c).unwrap()
    }

    struct Fixture {
        panel: CovariatePanel,
        rates: DemographicRates,
        initial: StockTable,
        years: TimeAxis,
    }

    impl Fixture {
        fn new(n: usize, years: usize) -> Self {
            let years = TimeAxis::new(2000, 2000 + years as i32 - 1).unwrap();
            let initial = StockTable::from_fn(2000, n, |i, j| if i == j { 5000.0 + 100.0 * i as f64 } else { 300.0 + 37.0 * (i * n + j) as f64 })
                .unwrap();
            let m = years.len() * n;
            let rates = DemographicRates::new(
                years,
                n,
                (0..m).map(|x| 20.0 + x as f64).collect(),
                vec![0.01; m],
                (0..m).map(|x| 0.005 + 0.001 * (x % 3) as f64).collect(),
                vec![1e4; m],
            )
            .unwrap();
            let panel = CovariatePanel::build(
                &stock_only_layout(),
                &CovariateTables::default(),
                n,
                years,
                &ScalingSpec::default(),
                initial.values(),
            )
            .unwrap();
            Self { panel, rates, initial, years }
        }

        fn problem(&self) -> Problem<'_> {
            Problem { panel: &self.panel, rates: &self.rates, initial_stocks: &self.initial, years: self.years }
        }
    }

    fn arch(z: usize, depth: usize) -> Architecture {
        Architecture {
            covariate_dim: 4,
            latent_dim: z,
            hidden_width: 5,
            depth,
            hidden_activation: Activation::Tanh,
            celu_alpha: -12.0,
        }
    }

    fn small_params(a: Architecture, seed: u64) -> NetworkParameters {
        let mut p = NetworkParameters::init(a, seed).unwrap();
        // keep log-flows moderate so stocks stay unclamped
        let o = a.layer_offsets();
        let last = o.last().unwrap();
        p.as_mut_slice()[last.bias.start] = 1.5;
        p
    }

    fn all_targets(r: &RolloutResult) -> TargetDataset {
        let n = r.stocks[0].n();
        let mut t = TargetDataset::empty(n);
        for (y, f) in r.od.iter().enumerate() {
            for j in 0..n {
                for k in 0..n {
                    if j != k {
                        t.flows.push(FlowTarget {
                            year: f.year(),
                            origin: j,
                            destination: k,
                            value: f.get(j, k) * (1.0 + 0.1 * ((j + k + y) % 3) as f64),
                            weight: 1.0 + 0.25 * (j % 2) as f64,
                            std_error: None,
                        });
                    }
                }
                t.net_migration.push(NetMigrationTarget { year: f.year(), country: j, value: r.net[y].values[j] + 3.0, weight: 1.0 });
            }
        }
        for w in r.stocks.windows(2) {
            for i in 0..n {
                for j in 0..n {
                    t.stock_diffs.push(StockDiffTarget {
                        start_year: w[0].year(),
                        end_year: w[1].year(),
                        birth: i,
                        residence: j,
                        value: w[1].get(i, j) - w[0].get(i, j) - 4.0,
                        weight: 0.5 + 0.5 * ((i + j) % 3) as f64,
                    });
                }
            }
        }
        t
    }

    #[test]
    fn rollout_is_internally_consistent() {
        let fx = Fixture::new(3, 3);
        let p = small_params(arch(2, 3), 4);
        let r = rollout(&p, &fx.problem()).unwrap();
        assert_eq!(r.stocks.len(), 4);
        for (t, f) in r.flows.iter().enumerate() {
            let od = flows_by_origin(f);
            assert_eq!(od, r.od[t]);
            assert_eq!(net_migration(&od), r.net[t]);
            let step = stock_step(&r.stocks[t], f, &fx.rates, f.year()).unwrap();
            assert_eq!(step.table, r.stocks[t + 1]);
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(f.get(i, j, j), 0.0);
                }
            }
        }
        assert!(r.diagnostics.stock_clamps.iter().all(|c| *c == 0));
    }

    #[test]
    fn constant_network_rollout_by_hand() {
        let fx = Fixture::new(2, 2);
        let a = arch(0, 1);
        let mut p = NetworkParameters::zeros(a).unwrap();
        let c = 1.25;
        let o = a.layer_offsets();
        p.as_mut_slice()[o[0].bias.start] = c;
        let r = rollout(&p, &fx.problem()).unwrap();
        let e = c.exp();
        for f in &r.flows {
            for i in 0..2 {
                assert_eq!(f.get(i, 0, 1), e);
                assert_eq!(f.get(i, 1, 0), e);
            }
        }
        // hand step of the first year: flows cancel pairwise for each birth country
        let b = fx.rates.births(2000).unwrap();
        let g = fx.rates.death_rate(2000).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut want = fx.initial.get(i, j) * (1.0 - g[j]) + e - e;
                if i == j {
                    want += b[j];
                }
                assert!((r.stocks[1].get(i, j) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn very_negative_output_gives_pure_demography() {
        let fx = Fixture::new(3, 2);
        let a = arch(0, 1);
        let mut p = NetworkParameters::zeros(a).unwrap();
        p.as_mut_slice()[a.layer_offsets()[0].bias.start] = -1e3;
        let r = rollout(&p, &fx.problem()).unwrap();
        // CeLU with alpha -12 floors at -12, i.e. a flow of e^-12
        assert!(r.flows.iter().all(|f| f.values().iter().all(|v| *v <= (-12.0f64).exp() + 1e-18)));
        let pure = stock_step(&fx.initial, &FlowTensor::zeros(2000, 3), &fx.rates, 2000).unwrap();
        for (a, b) in r.stocks[1].values().iter().zip(pure.table.values()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn loss_hand_cases() {
        let fx = Fixture::new(2, 1);
        let p = small_params(arch(0, 2), 1);
        let r = rollout(&p, &fx.problem()).unwrap();
        let cfg = TrainConfig { lambda_flow: 1.0, ..TrainConfig::default() };
        let mut t = TargetDataset::empty(2);
        let pred = r.od[0].get(0, 1);
        t.flows.push(FlowTarget { year: 2000, origin: 0, destination: 1, value: pred - 2.0, weight: 1.0, std_error: None });
        let l = compute_loss(&r, &t, &cfg).unwrap();
        assert!((l.flow - 4.0).abs() < 1e-9);
        assert_eq!(l.total, l.flow);
        assert!(compute_loss(&r, &TargetDataset::empty(2), &cfg).is_err());

        let exact = {
            let mut t = all_targets(&r);
            for f in &mut t.flows {
                f.value = r.od[0].get(f.origin, f.destination);
            }
            for m in &mut t.net_migration {
                m.value = r.net[0].values[m.country];
            }
            for d in &mut t.stock_diffs {
                d.value = r.stocks[1].get(d.birth, d.residence) - r.stocks[0].get(d.birth, d.residence);
            }
            t
        };
        assert_eq!(compute_loss(&r, &exact, &cfg).unwrap().total, 0.0);

        let mut t = all_targets(&r);
        let base = compute_loss(&r, &t, &cfg).unwrap();
        for f in &mut t.flows {
            f.weight *= 2.0;
        }
        for m in &mut t.net_migration {
            m.weight *= 2.0;
        }
        for d in &mut t.stock_diffs {
            d.weight *= 2.0;
        }
        let doubled = compute_loss(&r, &t, &cfg).unwrap();
        assert!((doubled.total - 2.0 * base.total).abs() < 1e-9 * base.total);
        t.flows.reverse();
        t.stock_diffs.reverse();
        let reordered = compute_loss(&r, &t, &cfg).unwrap();
        assert!((reordered.total - doubled.total).abs() < 1e-9 * doubled.total);
    }

    fn fd_check(cfg: TrainConfig, a: Architecture, years: usize) {
        let fx = Fixture::new(3, years);
        let problem = fx.problem();
        let p = small_params(a, 9);
        let targets = all_targets(&rollout(&p, &problem).unwrap());
        let (_, grads, _) = loss_and_gradient(&p, &problem, &targets, &cfg).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..p.len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[idx] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[idx] -= h;
            let jp = compute_loss(&rollout(&plus, &problem).unwrap(), &targets, &cfg).unwrap().total;
            let jm = compute_loss(&rollout(&minus, &problem).unwrap(), &targets, &cfg).unwrap().total;
            let fd = (jp - jm) / (2.0 * h);
            let err = (fd - grads[idx]).abs() / fd.abs().max(grads[idx].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        fd_check(TrainConfig::default(), arch(2, 3), 3);
    }

    #[test]
    fn rollout_gradient_identity_transforms() {
        let cfg = TrainConfig { lambda_stock: 1.0, lambda_net: 1.0, lambda_flow: 1.0, ..TrainConfig::default() };
        fd_check(cfg, arch(3, 2), 2);
    }

    #[test]
    fn detached_mode_differs_from_full() {
        let fx = Fixture::new(3, 3);
        let problem = fx.problem();
        let p = small_params(arch(2, 2), 3);
        let targets = all_targets(&rollout(&p, &problem).unwrap());
        let full = loss_and_gradient(&p, &problem, &targets, &TrainConfig::default()).unwrap().1;
        let cfg = TrainConfig { stock_gradients: false, ..TrainConfig::default() };
        let detached = loss_and_gradient(&p, &problem, &targets, &cfg).unwrap().1;
        assert_ne!(full, detached);
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let fx = Fixture::new(3, 3);
        let problem = fx.problem();
        let truth = small_params(arch(2, 2), 21);
        let r = rollout(&truth, &problem).unwrap();
        let mut targets = all_targets(&r);
        for f in &mut targets.flows {
            f.value = r.od[(f.year - 2000) as usize].get(f.origin, f.destination);
        }
        let cfg = TrainConfig { epochs: 300, learning_rate: 1e-2, seed: 5, ..TrainConfig::default() };
        let a = train(&cfg, arch(2, 2), &problem, &targets).unwrap();
        let b = train(&cfg, arch(2, 2), &problem, &targets).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert!(a.final_loss.total < a.history[0].total);

        let frozen = TrainConfig { epochs: 5, learning_rate: 0.0, ..cfg };
        let start = NetworkParameters::init(arch(2, 2), 5).unwrap();
        let out = train_from(&frozen, start.clone(), &problem, &targets, |_, _| {}).unwrap();
        assert_eq!(out.params, start);
        assert!(out.history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn minibatches_cover_targets() {
        let fx = Fixture::new(3, 2);
        let problem = fx.problem();
        let p = small_params(arch(1, 2), 2);
        let targets = all_targets(&rollout(&p, &problem).unwrap());
        let cfg = TrainConfig { epochs: 3, batch_size: Some(7), learning_rate: 1e-3, seed: 1, ..TrainConfig::default() };
        let out = train(&cfg, arch(1, 2), &problem, &targets).unwrap();
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn test_corridors_do_not_affect_training() {
        let fx = Fixture::new(3, 2);
        let problem = fx.problem();
        let p = small_params(arch(1, 2), 2);
        let mut targets = all_targets(&rollout(&p, &problem).unwrap());
        targets.corridor_split = train_test_split(3, 0.5, 4).unwrap();
        let cfg = TrainConfig { epochs: 20, learning_rate: 1e-2, ..TrainConfig::default() };
        let a = train(&cfg, arch(1, 2), &problem, &targets).unwrap();
        let (tj, tk) = targets.corridor_split.test_corridors().next().unwrap();
        for f in targets.flows.iter_mut().filter(|f| (f.origin, f.destination) == (tj, tk)) {
            f.value *= 7.0;
        }
        let b = train(&cfg, arch(1, 2), &problem, &targets).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn split_counts_and_seeds() {
        let s = train_test_split(11, 0.2, 1).unwrap();
        assert_eq!(s.test_corridors().count(), 22);
        let s2 = train_test_split(11, 0.2, 2).unwrap();
        assert_ne!(s.test_corridors().collect::<Vec<_>>(), s2.test_corridors().collect::<Vec<_>>());
        assert!(matches!(train_test_split(1, 0.2, 1), Err(Error::Estimation(_))));
        assert!(train_test_split(4, 1.0, 1).is_err());
    }

    #[test]
    fn ensemble_members() {
        let fx = Fixture::new(2, 2);
        let problem = fx.problem();
        let p = small_params(arch(1, 2), 2);
        let targets = all_targets(&rollout(&p, &problem).unwrap());
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let same = train_ensemble(&cfg, arch(1, 2), &problem, &targets, &[3, 3, 3]);
        let first = same[0].as_ref().unwrap();
        assert!(same.iter().all(|m| m.as_ref().unwrap().params == first.params));
        let single = train(&TrainConfig { seed: 3, ..cfg }, arch(1, 2), &problem, &targets).unwrap();
        assert_eq!(single.params, first.params);
        let diff = train_ensemble(&cfg, arch(1, 2), &problem, &targets, &[1, 2]);
        assert_ne!(diff[0].as_ref().unwrap().params, diff[1].as_ref().unwrap().params);
        let _ = "x".to_string();
    }
}
