//! Products of trained estimators: initial-stock calibration, elasticities and
//! ensemble uncertainty.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::domain::{DemographicRates, StockSeries, StockTable};
use crate::error::{bail, Error, Result};
use crate::nn::{self, NetworkParameters};
use crate::training::{edge_list, rollout, Problem, RolloutResult};
use crate::transform::Scaling;
use crate::{math, stats};

/// `g~(t) = prod_{t0 < tau <= t} (1 - g(tau))` for a death-rate series
/// starting at `t0`; the first entry is 1.
pub fn survival_fraction(gamma: &[f64]) -> Result<Vec<f64>> {
    if let Some(g) = gamma.iter().find(|g| !(0.0..1.0).contains(*g)) {
        bail!(Domain, "death rate {g} outside [0, 1)");
    }
    let mut out = Vec::with_capacity(gamma.len());
    let mut acc = 1.0;
    for (t, g) in gamma.iter().enumerate() {
        if t > 0 {
            acc *= 1.0 - g;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Survival fractions per country for consecutive years from `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalFractions {
    pub t0: i32,
    pub n: usize,
    /// Year-major: `values[(year - t0) * n + j]`.
    values: Vec<f64>,
}

impl SurvivalFractions {
    /// Fractions for `t0..=last` from the death rates in `rates`. Years past
    /// the end of `rates` reuse its final death rate.
    pub fn from_rates(rates: &DemographicRates, t0: i32, last: i32) -> Result<Self> {
        let n = rates.n();
        let axis = rates.years();
        if !axis.contains(t0) || last < t0 {
            bail!(Structural, "survival fractions need {t0} inside the rate years and last >= t0");
        }
        let len = (last - t0 + 1) as usize;
        let mut values = vec![0.0; len * n];
        for j in 0..n {
            let gamma: Vec<f64> = (t0..=last)
                .map(|y| rates.death_rate(y.min(axis.end_year)).map(|g| g[j]))
                .collect::<Result<_>>()?;
            for (t, v) in survival_fraction(&gamma)?.into_iter().enumerate() {
                values[t * n + j] = v;
            }
        }
        Ok(Self { t0, n, values })
    }

    pub fn get(&self, year: i32, j: usize) -> Option<f64> {
        let t = usize::try_from(year - self.t0).ok()?;
        self.values.get(t * self.n + j).copied()
    }
}

/// Result of [`calibrate_initial_stock`].
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// `b[i][j]`; `None` for cells without observations.
    pub offsets: Vec<Option<f64>>,
    /// Predicted series shifted by `g~(t) b`.
    pub series: Vec<StockTable>,
    /// Cells whose unconstrained offset was raised to keep stocks non-negative.
    pub floored: Vec<(usize, usize)>,
    /// Cells skipped because they have no observation.
    pub skipped: Vec<(usize, usize)>,
}

impl Calibration {
    /// `S0 + b`, the calibrated initial table (`g~(t0) = 1`).
    pub fn initial(&self) -> &StockTable {
        &self.series[0]
    }
}

/// Offsets `b = sum_t g~ w (S - S^) / sum_t w g~^2` aligning a predicted stock
/// series with observations, raised where needed so `S^ + g~ b >= 0` for all
/// predicted years.
///
/// `predicted` must be consecutive yearly tables starting at `survival.t0`.
pub fn calibrate_initial_stock(
    observed: &StockSeries,
    predicted: &[StockTable],
    survival: &SurvivalFractions,
) -> Result<Calibration> {
    let n = observed.n();
    let Some(first) = predicted.first() else {
        bail!(Estimation, "no predicted stocks to calibrate");
    };
    if first.year() != survival.t0 || predicted.iter().enumerate().any(|(t, s)| s.year() != survival.t0 + t as i32 || s.n() != n) {
        bail!(Structural, "predicted stocks must be consecutive years from {}", survival.t0);
    }
    let g = |year: i32, j: usize| -> Result<f64> {
        survival
            .get(year, j)
            .ok_or_else(|| Error::Structural(alloc::format!("no survival fraction for {year}")))
    };
    let mut offsets = vec![None; n * n];
    let (mut floored, mut skipped) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for p in predicted {
                let Some(s) = observed.value(p.year(), i, j) else { continue };
                let w = observed.weight(p.year(), i, j).unwrap_or(1.0);
                let gt = g(p.year(), j)?;
                num += gt * w * (s - p.get(i, j));
                den += w * gt * gt;
            }
            if !(den > 0.0) {
                skipped.push((i, j));
                continue;
            }
            let mut b = num / den;
            let mut lower = f64::NEG_INFINITY;
            for p in predicted {
                lower = lower.max(-p.get(i, j) / g(p.year(), j)?);
            }
            if b < lower {
                b = lower;
                floored.push((i, j));
            }
            offsets[i * n + j] = Some(b);
        }
    }
    let series = predicted
        .iter()
        .map(|p| {
            let values = (0..n * n)
                .map(|c| {
                    let shift = offsets[c].map_or(Ok(0.0), |b| g(p.year(), c % n).map(|gt| gt * b))?;
                    Ok((p.values()[c] + shift).max(0.0))
                })
                .collect::<Result<Vec<f64>>>()?;
            StockTable::new(p.year(), n, values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Calibration { offsets, series, floored, skipped })
}

/// Weighted squared error `sum_t w (S - S^ - g~ b)^2` of one cell.
pub fn calibration_sse(
    observed: &StockSeries,
    predicted: &[StockTable],
    survival: &SurvivalFractions,
    i: usize,
    j: usize,
    b: f64,
) -> f64 {
    predicted
        .iter()
        .filter_map(|p| {
            let s = observed.value(p.year(), i, j)?;
            let w = observed.weight(p.year(), i, j).unwrap_or(1.0);
            let r = s - p.get(i, j) - survival.get(p.year(), j)? * b;
            Some(w * r * r)
        })
        .sum()
}

/// Roll a member out from `problem.initial_stocks`, calibrate against
/// `observed` and return the calibrated initial table with the calibration.
pub fn calibrated_initial_stocks(
    params: &NetworkParameters,
    problem: &Problem<'_>,
    observed: &StockSeries,
) -> Result<Calibration> {
    let r = rollout(params, problem)?;
    let survival = SurvivalFractions::from_rates(problem.rates, problem.years.start_year, problem.years.end_year + 1)?;
    calibrate_initial_stock(observed, &r.stocks, &survival)
}

/// Elasticities of one edge: `|d log T / d chi_c * d chi_c / d x_c| |x_c|` for
/// each continuous component `c`, where `x_c` is the raw value behind `chi_c`.
/// Binary components (and those without a scaling) yield `None`.
pub fn edge_elasticities(
    params: &NetworkParameters,
    chi: &[f64],
    z: &[f64],
    scalings: &[Option<Scaling>],
    binary: &[bool],
) -> Result<Vec<Option<f64>>> {
    if scalings.len() != chi.len() || binary.len() != chi.len() {
        bail!(Structural, "one scaling and binary flag per covariate required");
    }
    let (_, _, tape) = nn::forward(params, chi, z)?;
    let mut seed = vec![0.0; 1 + z.len()];
    seed[0] = 1.0;
    let grads = nn::backward(tape, params, &seed)?;
    chi.iter()
        .zip(scalings)
        .zip(binary)
        .zip(&grads.chi)
        .map(|(((c, s), b), g)| match (s, b) {
            (Some(s), false) => {
                let x = s.invert(*c)?;
                Ok(Some(math::abs(g * s.derivative(x)) * math::abs(x)))
            }
            _ => Ok(None),
        })
        .collect()
}

/// Mean and spread of one covariate's elasticity.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateElasticity {
    pub component: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityReport {
    pub entries: Vec<CovariateElasticity>,
}

/// Which `(year, edge)` points to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ElasticitySample {
    /// Evaluate this many points drawn without replacement; all when `None`.
    pub size: Option<usize>,
    pub seed: u64,
}

/// Covariate vectors and latent states seen by each edge along a rollout,
/// indexed `[year][edge]` with edges in [`edge_list`] order.
pub struct RolloutInputs {
    pub chi: Vec<Vec<Vec<f64>>>,
    pub latent: Vec<Vec<Vec<f64>>>,
    pub rollout: RolloutResult,
}

/// Replay a rollout edge by edge, recording network inputs.
pub fn rollout_inputs(params: &NetworkParameters, problem: &Problem<'_>) -> Result<RolloutInputs> {
    let r = rollout(params, problem)?;
    let n = problem.n();
    let zdim = params.arch().latent_dim;
    let edges = edge_list(n);
    let mut z = vec![vec![0.0; zdim]; edges.len()];
    let (mut chi_all, mut z_all) = (Vec::new(), Vec::new());
    for (t, year) in problem.years.years().enumerate() {
        let stocks = &r.stocks[t];
        let mut chis = Vec::with_capacity(edges.len());
        let mut next = Vec::with_capacity(edges.len());
        for (e, &(i, j, k)) in edges.iter().enumerate() {
            let chi = problem.panel.edge_vector(year, i, j, k, stocks)?;
            let (_, zn, _) = nn::forward(params, &chi, &z[e])?;
            chis.push(chi);
            next.push(zn);
        }
        chi_all.push(chis);
        z_all.push(core::mem::replace(&mut z, next));
    }
    Ok(RolloutInputs { chi: chi_all, latent: z_all, rollout: r })
}

/// Per-covariate elasticity over the members of an ensemble, evaluated at
/// the inputs of each member's own rollout.
pub fn elasticity(members: &[NetworkParameters], problem: &Problem<'_>, sample: ElasticitySample) -> Result<ElasticityReport> {
    if members.is_empty() {
        bail!(Usage, "elasticity needs at least one member");
    }
    let layout = problem.panel.layout();
    let binary: Vec<bool> = layout.components().iter().map(|c| c.binary).collect();
    let scalings = problem.panel.scalings();
    let points: Vec<(usize, usize)> = {
        let all: Vec<(usize, usize)> = (0..problem.years.len()).flat_map(|t| (0..problem.edges()).map(move |e| (t, e))).collect();
        match sample.size {
            Some(m) if m < all.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
                let mut idx: Vec<usize> = (0..all.len()).collect();
                for a in 0..m {
                    let b = rng.random_range(a..idx.len());
                    idx.swap(a, b);
                }
                let mut picked: Vec<(usize, usize)> = idx[..m].iter().map(|i| all[*i]).collect();
                picked.sort_unstable();
                picked
            }
            _ => all,
        }
    };
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); layout.len()];
    for params in members {
        let inputs = rollout_inputs(params, problem)?;
        for &(t, e) in &points {
            let nu = edge_elasticities(params, &inputs.chi[t][e], &inputs.latent[t][e], scalings, &binary)?;
            for (c, v) in nu.into_iter().enumerate() {
                if let Some(v) = v {
                    values[c].push(v);
                }
            }
        }
    }
    let entries = layout
        .components()
        .iter()
        .zip(values)
        .filter(|(c, _)| !c.binary)
        .map(|(c, mut v)| {
            v.sort_by(f64::total_cmp);
            CovariateElasticity {
                component: c.name.clone(),
                mean: stats::mean(&v).unwrap_or(f64::NAN),
                std: stats::std_dev(&v).unwrap_or(f64::NAN),
                count: v.len(),
            }
        })
        .collect();
    Ok(ElasticityReport { entries })
}

/// Per-cell normal draws around `mean` with standard deviation `sigma`,
/// truncated at zero by rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct StockSampler {
    pub mean: StockTable,
    pub sigma: Vec<f64>,
}

impl StockSampler {
    pub fn new(mean: StockTable, sigma: Vec<f64>) -> Result<Self> {
        if sigma.len() != mean.values().len() {
            bail!(Structural, "sampler needs one sigma per stock cell");
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            bail!(Domain, "sampler sigma must be finite and >= 0");
        }
        Ok(Self { mean, sigma })
    }

    /// A sampler that always returns `mean`.
    pub fn fixed(mean: StockTable) -> Self {
        let m = mean.values().len();
        Self { mean, sigma: vec![0.0; m] }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<StockTable> {
        let values = self
            .mean
            .values()
            .iter()
            .zip(&self.sigma)
            .map(|(m, s)| {
                if *s == 0.0 {
                    return *m;
                }
                loop {
                    let e: f64 = StandardNormal.sample(rng);
                    let v = m + s * e;
                    if v >= 0.0 {
                        return v;
                    }
                }
            })
            .collect();
        StockTable::new(self.mean.year(), self.mean.n(), values)
    }
}

/// Per-cell mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Summary over all member × initial-stock samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyEstimate {
    pub n: usize,
    /// Flow years; stocks cover these plus the year after.
    pub years: Vec<i32>,
    pub flows: Vec<CellStats>,
    pub stocks: Vec<CellStats>,
    pub od: Vec<CellStats>,
    pub net: Vec<CellStats>,
    pub samples: usize,
    /// Members whose rollouts failed, with the reason.
    pub excluded: Vec<(usize, String)>,
}

impl UncertaintyEstimate {
    pub fn stock_years(&self) -> Vec<i32> {
        let mut y = self.years.clone();
        if let Some(last) = y.last().copied() {
            y.push(last + 1);
        }
        y
    }
}

/// Running sums for mean and variance; the variance uses values shifted by
/// the first sample to avoid cancellation.
struct Accumulator {
    count: usize,
    sum: Vec<f64>,
    shift: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self { count: 0, sum: vec![0.0; len], shift: vec![0.0; len], s1: vec![0.0; len], s2: vec![0.0; len] }
    }

    fn push(&mut self, x: &[f64]) {
        if self.count == 0 {
            self.shift.copy_from_slice(x);
        }
        self.count += 1;
        for c in 0..x.len() {
            self.sum[c] += x[c];
            let d = x[c] - self.shift[c];
            self.s1[c] += d;
            self.s2[c] += d * d;
        }
    }

    fn finish(self) -> CellStats {
        let m = self.count as f64;
        let mean = self.sum.iter().map(|s| s / m).collect();
        let std = self
            .s1
            .iter()
            .zip(&self.s2)
            .map(|(s1, s2)| math::sqrt(((s2 - s1 * s1 / m) / m).max(0.0)))
            .collect();
        CellStats { mean, std }
    }
}

/// Push initial-stock uncertainty through every member: `n_samples` draws per
/// member from its sampler (`samplers` has one entry, shared, or one per
/// member), one rollout per draw, and per-cell statistics over all rollouts.
pub fn uq_estimate(
    members: &[NetworkParameters],
    samplers: &[StockSampler],
    n_samples: usize,
    problem: &Problem<'_>,
    seed: u64,
) -> Result<UncertaintyEstimate> {
    if members.is_empty() || n_samples == 0 {
        bail!(Usage, "uncertainty estimate needs members and at least one sample");
    }
    if samplers.len() != 1 && samplers.len() != members.len() {
        bail!(Structural, "need one sampler or one per member, got {}", samplers.len());
    }
    let n = problem.n();
    let t_len = problem.years.len();
    let mut flows: Vec<Accumulator> = (0..t_len).map(|_| Accumulator::new(n * n * n)).collect();
    let mut stocks: Vec<Accumulator> = (0..=t_len).map(|_| Accumulator::new(n * n)).collect();
    let mut od: Vec<Accumulator> = (0..t_len).map(|_| Accumulator::new(n * n)).collect();
    let mut net: Vec<Accumulator> = (0..t_len).map(|_| Accumulator::new(n)).collect();
    let mut excluded = Vec::new();
    let mut samples = 0;
    for (m, params) in members.iter().enumerate() {
        let sampler = &samplers[if samplers.len() == 1 { 0 } else { m }];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(m as u64);
        let mut runs = Vec::with_capacity(n_samples);
        let mut failure = None;
        for _ in 0..n_samples {
            let initial = sampler.sample(&mut rng)?;
            let p = Problem { initial_stocks: &initial, ..*problem };
            match rollout(params, &p) {
                Ok(r) => runs.push(r),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failure {
            excluded.push((m, e.to_string()));
            continue;
        }
        for r in runs {
            samples += 1;
            for t in 0..t_len {
                flows[t].push(r.flows[t].values());
                od[t].push(r.od[t].values());
                net[t].push(&r.net[t].values);
            }
            for (acc, s) in stocks.iter_mut().zip(&r.stocks) {
                acc.push(s.values());
            }
        }
    }
    if samples == 0 {
        bail!(Run, "every ensemble member failed: {}", excluded.iter().map(|(_, e)| e.as_str()).collect::<Vec<_>>().join("; "));
    }
    let done = |v: Vec<Accumulator>| v.into_iter().map(Accumulator::finish).collect();
    Ok(UncertaintyEstimate {
        n,
        years: problem.years.years().collect(),
        flows: done(flows),
        stocks: done(stocks),
        od: done(od),
        net: done(net),
        samples,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::{CovariatePanel, ScalingSpec};
    use crate::domain::TimeAxis;
    use crate::nn::{Activation, Architecture};
    use crate::synthetic::{generate, WorldSpec};

    #[test]
    fn survival_cases() {
        assert_eq!(survival_fraction(&[0.0; 4]).unwrap(), vec![1.0; 4]);
        let s = survival_fraction(&[0.5, 0.1, 0.1]).unwrap();
        assert_eq!(s[0], 1.0);
        assert!((s[2] - 0.81).abs() < 1e-15);
        assert!(survival_fraction(&[1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..0.2)).collect();
        let s = survival_fraction(&g).unwrap();
        assert!(s.windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
    }

    fn one_cell(obs: &[(i32, f64)], pred: &[f64], gamma: f64) -> (StockSeries, Vec<StockTable>, SurvivalFractions) {
        let years = TimeAxis::new(2000, 2000 + pred.len() as i32 - 1).unwrap();
        let m = years.len();
        let rates = DemographicRates::new(years, 1, vec![0.0; m], vec![0.0; m], vec![gamma; m], vec![1.0; m]).unwrap();
        let predicted: Vec<StockTable> =
            pred.iter().enumerate().map(|(t, v)| StockTable::new(2000 + t as i32, 1, vec![*v]).unwrap()).collect();
        let mut series = StockSeries::new(1);
        for (y, v) in obs {
            series.insert_observed(StockTable::new(*y, 1, vec![*v]).unwrap()).unwrap();
        }
        let survival = SurvivalFractions::from_rates(&rates, 2000, 2000 + pred.len() as i32 - 1).unwrap();
        (series, predicted, survival)
    }

    #[test]
    fn calibration_hand_cases() {
        let (o, p, s) = one_cell(&[(2000, 5.0), (2001, 6.0)], &[5.0, 6.0], 0.1);
        assert_eq!(calibrate_initial_stock(&o, &p, &s).unwrap().offsets, vec![Some(0.0)]);

        let (o, p, s) = one_cell(&[(2000, 50.0)], &[30.0, 31.0], 0.0);
        assert_eq!(calibrate_initial_stock(&o, &p, &s).unwrap().offsets, vec![Some(20.0)]);

        let (o, p, s) = one_cell(&[(2000, 110.0), (2001, 100.0)], &[100.0, 100.0], 0.1);
        let c = calibrate_initial_stock(&o, &p, &s).unwrap();
        let b = c.offsets[0].unwrap();
        assert!((b - 10.0 / 1.81).abs() < 1e-12);
        assert!((b - 5.524861878453039).abs() < 1e-9);
        // grid minimisation of the weighted SSE agrees
        let best = (0..200_001)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, b| calibration_sse(&o, &p, &s, 0, 0, *a).total_cmp(&calibration_sse(&o, &p, &s, 0, 0, *b)))
            .unwrap();
        assert!((best - b).abs() < 1e-4);
        assert!((c.series[1].get(0, 0) - (100.0 + 0.9 * b)).abs() < 1e-12);
    }

    #[test]
    fn calibration_floors_and_skips() {
        let (o, p, s) = one_cell(&[(2001, 0.0)], &[5.0, 50.0, 1.0], 0.0);
        let c = calibrate_initial_stock(&o, &p, &s).unwrap();
        assert_eq!(c.offsets[0], Some(-1.0));
        assert_eq!(c.floored, vec![(0, 0)]);
        assert!(c.series.iter().all(|t| t.get(0, 0) >= 0.0));
        let (o, p, s) = one_cell(&[], &[5.0, 6.0], 0.0);
        let c = calibrate_initial_stock(&o, &p, &s).unwrap();
        assert_eq!(c.skipped, vec![(0, 0)]);
        assert_eq!(c.series, p);
    }

    #[test]
    fn calibration_is_a_local_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let len = rng.random_range(2..8);
            let pred: Vec<f64> = (0..len).map(|_| rng.random_range(100.0..1000.0)).collect();
            let mut obs = Vec::new();
            for t in 0..len {
                if rng.random::<f64>() < 0.7 {
                    obs.push((2000 + t as i32, rng.random_range(100.0..1000.0)));
                }
            }
            if obs.is_empty() {
                continue;
            }
            let (o, p, s) = one_cell(&obs, &pred, rng.random_range(0.0..0.05));
            let c = calibrate_initial_stock(&o, &p, &s).unwrap();
            if !c.floored.is_empty() {
                continue;
            }
            let b = c.offsets[0].unwrap();
            let h = 1e-3 * b.abs().max(1e-3);
            let f = |x| calibration_sse(&o, &p, &s, 0, 0, x);
            assert!(f(b + h) > f(b) && f(b - h) > f(b));
        }
    }

    fn linear_net(a: f64, bias: f64) -> NetworkParameters {
        let arch = Architecture {
            covariate_dim: 2,
            latent_dim: 0,
            hidden_width: 1,
            depth: 1,
            hidden_activation: Activation::Tanh,
            celu_alpha: -12.0,
        };
        NetworkParameters::from_flat(arch, vec![a, 0.0, bias]).unwrap()
    }

    #[test]
    fn linear_network_elasticity_is_closed_form() {
        let p = linear_net(-0.7, 5.0);
        let id = Some(Scaling::identity());
        for x in [0.0, 0.3, -2.5, 4.0] {
            let nu = edge_elasticities(&p, &[x, 1.0], &[], &[id, id], &[false, true]).unwrap();
            assert!((nu[0].unwrap() - 0.7 * x.abs()).abs() < 1e-9);
            assert_eq!(nu[1], None);
        }
    }

    #[test]
    fn elasticity_matches_finite_differences() {
        let arch = Architecture {
            covariate_dim: 3,
            latent_dim: 2,
            hidden_width: 6,
            depth: 3,
            hidden_activation: Activation::Tanh,
            celu_alpha: -12.0,
        };
        let p = NetworkParameters::init(arch, 9).unwrap();
        let scalings = [
            Some(Scaling::fit_with(crate::transform::PowerTransform::new(0.5).unwrap(), &[1.0, 4.0, 9.0, 30.0]).unwrap()),
            Some(Scaling::fit_with(crate::transform::PowerTransform::new(0.0).unwrap(), &[10.0, 200.0, 3000.0]).unwrap()),
            None,
        ];
        let raw = [7.0, 150.0];
        let chi = [scalings[0].unwrap().apply(raw[0]), scalings[1].unwrap().apply(raw[1]), 1.0];
        let z = [0.2, -0.4];
        let nu = edge_elasticities(&p, &chi, &z, &scalings, &[false, false, true]).unwrap();
        for c in 0..2 {
            let h = 1e-5 * raw[c];
            let at = |x: f64| {
                let mut v = chi;
                v[c] = scalings[c].unwrap().apply(x);
                nn::forward(&p, &v, &z).unwrap().0
            };
            let fd = (at(raw[c] + h) - at(raw[c] - h)) / (2.0 * h) * raw[c];
            let got = nu[c].unwrap();
            assert!((got - fd.abs()).abs() <= 1e-3 * fd.abs(), "{c}: {got} vs {fd}");
        }
    }

    fn small_world() -> (crate::synthetic::SyntheticWorld, Architecture) {
        let spec = WorldSpec { countries: 4, years: 3, ..WorldSpec::default() };
        let world = generate(&spec, 4).unwrap();
        let arch = Architecture {
            covariate_dim: world.panel.layout().len(),
            latent_dim: 2,
            hidden_width: 5,
            depth: 2,
            hidden_activation: Activation::Tanh,
            celu_alpha: -12.0,
        };
        (world, arch)
    }

    #[test]
    fn rollout_inputs_reproduce_the_rollout() {
        let (world, arch) = small_world();
        let p = NetworkParameters::init(arch, 2).unwrap();
        let problem = world.problem(&world.stocks[0]);
        let inputs = rollout_inputs(&p, &problem).unwrap();
        let edges = edge_list(4);
        for (t, f) in inputs.rollout.flows.iter().enumerate() {
            for (e, &(i, j, k)) in edges.iter().enumerate() {
                let (lf, _, _) = nn::forward(&p, &inputs.chi[t][e], &inputs.latent[t][e]).unwrap();
                let got = f.get(i, j, k);
                assert!((got - lf.exp()).abs() <= 1e-12 * got.max(1.0));
            }
        }
    }

    #[test]
    fn elasticity_report_shape_and_sampling() {
        let (world, arch) = small_world();
        let members = [NetworkParameters::init(arch, 2).unwrap(), NetworkParameters::init(arch, 3).unwrap()];
        let problem = world.problem(&world.stocks[0]);
        let full = elasticity(&members, &problem, ElasticitySample::default()).unwrap();
        let continuous = world.panel.layout().components().iter().filter(|c| !c.binary).count();
        assert_eq!(full.entries.len(), continuous);
        assert!(full.entries.iter().all(|e| e.mean >= 0.0 && e.std >= 0.0 && e.count == 2 * 3 * 48));
        let part = elasticity(&members, &problem, ElasticitySample { size: Some(10), seed: 1 }).unwrap();
        assert!(part.entries.iter().all(|e| e.count == 20));
        assert_eq!(part, elasticity(&members, &problem, ElasticitySample { size: Some(10), seed: 1 }).unwrap());
    }

    fn constant_net(arch: Architecture, c: f64) -> NetworkParameters {
        let mut p = NetworkParameters::zeros(arch).unwrap();
        let last = arch.layer_offsets().pop().unwrap();
        p.as_mut_slice()[last.bias.start] = c;
        p
    }

    #[test]
    fn uq_degenerate_cases() {
        let (world, arch) = small_world();
        let problem = world.problem(&world.stocks[0]);
        let m = NetworkParameters::init(arch, 5).unwrap();
        let est = uq_estimate(&[m.clone(), m.clone()], &[StockSampler::fixed(world.stocks[0].clone())], 3, &problem, 1).unwrap();
        assert_eq!(est.samples, 6);
        for s in est.flows.iter().chain(&est.stocks).chain(&est.od).chain(&est.net) {
            assert!(s.std.iter().all(|v| *v == 0.0));
        }
        let r = rollout(&m, &problem).unwrap();
        for (a, b) in est.flows[1].mean.iter().zip(r.flows[1].values()) {
            assert!((a - b).abs() <= 1e-14 * b.abs());
        }
    }

    #[test]
    fn uq_two_constant_members() {
        let (world, arch) = small_world();
        let problem = world.problem(&world.stocks[0]);
        let (c1, c2) = (1.5, 3.0);
        let members = [constant_net(arch, c1), constant_net(arch, c2)];
        let est = uq_estimate(&members, &[StockSampler::fixed(world.stocks[0].clone())], 1, &problem, 0).unwrap();
        let (e1, e2) = (c1.exp(), c2.exp());
        let mean = 0.5 * (e1 + e2);
        let std = 0.5 * (e2 - e1);
        for s in &est.flows {
            for (c, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
                let (j, k) = ((c / 4) % 4, c % 4);
                if j == k {
                    assert_eq!((*m, *sd), (0.0, 0.0));
                } else {
                    assert!((m - mean).abs() < 1e-12 * mean && (sd - std).abs() < 1e-12 * mean);
                }
            }
        }
    }

    #[test]
    fn uq_mean_matches_reaggregation_and_sampler_is_truncated() {
        let (world, arch) = small_world();
        let problem = world.problem(&world.stocks[0]);
        let m = NetworkParameters::init(arch, 5).unwrap();
        let sigma: Vec<f64> = world.stocks[0].values().iter().map(|v| 0.5 * v).collect();
        let sampler = StockSampler::new(world.stocks[0].clone(), sigma).unwrap();
        let est = uq_estimate(&[m.clone()], &[sampler.clone()], 5, &problem, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        rng.set_stream(0);
        let runs: Vec<RolloutResult> = (0..5)
            .map(|_| {
                let s = sampler.sample(&mut rng).unwrap();
                assert!(s.values().iter().all(|v| *v >= 0.0));
                rollout(&m, &Problem { initial_stocks: &s, ..problem }).unwrap()
            })
            .collect();
        for c in 0..16 {
            let xs: Vec<f64> = runs.iter().map(|r| r.stocks[2].values()[c]).collect();
            assert_eq!(est.stocks[2].mean[c], xs.iter().sum::<f64>() / 5.0);
            assert!((est.stocks[2].std[c] - stats::std_dev(&xs).unwrap()).abs() <= 1e-9 * xs[0].abs().max(1.0));
        }
        assert!(est.stocks[0].std.iter().any(|s| *s > 0.0));
    }

    #[test]
    fn uq_rejects_bad_input() {
        let (world, arch) = small_world();
        let problem = world.problem(&world.stocks[0]);
        let m = NetworkParameters::init(arch, 5).unwrap();
        let f = StockSampler::fixed(world.stocks[0].clone());
        assert!(uq_estimate(&[], &[f.clone()], 1, &problem, 0).is_err());
        assert!(uq_estimate(&[m.clone()], &[f.clone()], 0, &problem, 0).is_err());
        assert!(uq_estimate(&[m.clone()], &[f.clone(), f.clone()], 1, &problem, 0).is_err());
        let _ = CovariatePanel::build;
        let _ = ScalingSpec::default();
    }
}
