//! Demographic accounting: matrix balancing, stock uncertainty and target weights.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::{DemographicRates, FlowTarget, StockSeries, StockTable};
use crate::error::{bail, Error, Result};
use crate::{math, stats};

/// Row and column totals an IPF run should reach.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTargets {
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl MarginalTargets {
    pub fn new(rows: Vec<f64>, cols: Vec<f64>) -> Result<Self> {
        if rows.iter().chain(&cols).any(|v| !v.is_finite() || *v < 0.0) {
            bail!(Domain, "marginal targets must be finite and >= 0");
        }
        Ok(Self { rows, cols })
    }

    /// Row and column sums of a row-major `rows × cols` matrix.
    pub fn of(m: &[f64], cols: usize) -> Self {
        let rows = m.chunks(cols).map(|r| r.iter().sum()).collect();
        let cols = (0..cols).map(|c| m.iter().skip(c).step_by(cols).sum()).collect();
        Self { rows, cols }
    }

    /// `max |sum - target| / target` over positive targets, and the absolute sum
    /// over zero targets.
    pub fn residual(&self, m: &[f64]) -> f64 {
        let got = Self::of(m, self.cols.len());
        let rel = |s: f64, t: f64| if t > 0.0 { math::abs(s - t) / t } else { math::abs(s) };
        got.rows
            .iter()
            .zip(&self.rows)
            .chain(got.cols.iter().zip(&self.cols))
            .map(|(s, t)| rel(*s, *t))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpfOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpfOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 5000 }
    }
}

/// Iterative proportional fitting of the non-negative row-major matrix `m`
/// (`targets.rows.len() × targets.cols.len()`) to the given marginals.
///
/// Alternates row and column rescaling until the relative marginal residual
/// drops below `opts.tol`. Zeros stay zero; a matrix already within tolerance
/// is returned unchanged.
pub fn ipf(m: &[f64], targets: &MarginalTargets, opts: IpfOptions) -> Result<Vec<f64>> {
    let (r, c) = (targets.rows.len(), targets.cols.len());
    if m.len() != r * c {
        bail!(Structural, "ipf: matrix has {} entries, marginals imply {r}x{c}", m.len());
    }
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        bail!(Domain, "ipf: seed entries must be finite and >= 0");
    }
    let mut x = m.to_vec();
    let start = MarginalTargets::of(&x, c);
    for (i, (s, t)) in start.rows.iter().zip(&targets.rows).enumerate() {
        if *t > 0.0 && *s <= 0.0 {
            bail!(Structural, "ipf: row {i} has target {t} but no positive entries");
        }
    }
    for (j, (s, t)) in start.cols.iter().zip(&targets.cols).enumerate() {
        if *t > 0.0 && *s <= 0.0 {
            bail!(Structural, "ipf: column {j} has target {t} but no positive entries");
        }
    }
    let mut residual = targets.residual(&x);
    let mut iterations = 0;
    while residual > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::Convergence { iterations, residual });
        }
        for (row, t) in x.chunks_mut(c).zip(&targets.rows) {
            let s: f64 = row.iter().sum();
            let f = if s > 0.0 { t / s } else { 0.0 };
            row.iter_mut().for_each(|v| *v *= f);
        }
        let mut sums = vec![0.0; c];
        for row in x.chunks(c) {
            sums.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let f: Vec<f64> = sums
            .iter()
            .zip(&targets.cols)
            .map(|(s, t)| if *s > 0.0 { t / s } else { 0.0 })
            .collect();
        for row in x.chunks_mut(c) {
            row.iter_mut().zip(&f).for_each(|(v, f)| *v *= f);
        }
        iterations += 1;
        residual = targets.residual(&x);
        if !residual.is_finite() {
            bail!(Numeric, "ipf: residual became non-finite");
        }
    }
    Ok(x)
}

/// Row targets used for the start-of-year rescaling of mid-year stocks:
/// `sum_j S[i][j] / sqrt(1 - g[j]) - B[i] / (2 sqrt(1 - g[i]))`.
pub fn begin_of_year_row_targets(s_mid: &StockTable, births: &[f64], gamma: &[f64]) -> Result<Vec<f64>> {
    let n = s_mid.n();
    if births.len() != n || gamma.len() != n {
        bail!(Structural, "births/death rates need {n} entries");
    }
    if gamma.iter().any(|g| !(0.0..1.0).contains(g)) {
        bail!(Domain, "death rates must lie in [0, 1)");
    }
    Ok((0..n)
        .map(|i| {
            let kept: f64 = (0..n).map(|j| s_mid.get(i, j) / math::sqrt(1.0 - gamma[j])).sum();
            kept - births[i] / (2.0 * math::sqrt(1.0 - gamma[i]))
        })
        .collect())
}

/// Start-of-year stocks from a mid-year table: IPF against
/// [`begin_of_year_row_targets`] for the rows and January populations for the
/// columns. The result is dated `s_mid.year()`.
pub fn begin_of_year_stocks(
    s_mid: &StockTable,
    rates: &DemographicRates,
    jan_population: &[f64],
) -> Result<StockTable> {
    let n = s_mid.n();
    if jan_population.len() != n {
        bail!(Structural, "january population needs {n} entries");
    }
    if jan_population.iter().any(|p| !(*p > 0.0)) {
        bail!(Domain, "january population must be positive");
    }
    let year = s_mid.year();
    let rows = begin_of_year_row_targets(s_mid, rates.births(year)?, rates.death_rate(year)?)?;
    if let Some(i) = rows.iter().position(|r| *r < 0.0) {
        bail!(Domain, "row target for {i} is negative ({})", rows[i]);
    }
    let targets = MarginalTargets::new(rows, jan_population.to_vec())?;
    let out = ipf(s_mid.values(), &targets, IpfOptions::default())?;
    StockTable::new(year, n, out)
}

/// Births and deaths accumulated between two stock tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodDemography {
    /// Surviving births per country over the period.
    pub births: Vec<f64>,
    /// Deaths per `(birth, residence)` cell over the period.
    pub deaths: Vec<f64>,
}

impl PeriodDemography {
    /// Demography from `s1.year()` to `s2_year`, assuming no migration:
    /// deaths are `S1 (1 - prod (1 - g))` and births are discounted by the
    /// mortality they experience before `s2_year`.
    pub fn between(s1: &StockTable, s2_year: i32, rates: &DemographicRates) -> Result<Self> {
        let n = s1.n();
        if rates.n() != n {
            bail!(Structural, "rates cover {} countries, stocks {n}", rates.n());
        }
        if s2_year <= s1.year() {
            bail!(Domain, "second table ({s2_year}) must follow the first ({})", s1.year());
        }
        let mut survival = vec![1.0; n];
        let mut births = vec![0.0; n];
        for year in s1.year()..s2_year {
            let b = rates.births(year)?;
            let g = rates.death_rate(year)?;
            for j in 0..n {
                births[j] = births[j] * (1.0 - g[j]) + b[j];
                survival[j] *= 1.0 - g[j];
            }
        }
        let mut deaths = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                deaths[i * n + j] = s1.get(i, j) * (1.0 - survival[j]);
            }
        }
        Ok(Self { births, deaths })
    }
}

/// Alternative estimates of two successive stock tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAlternatives {
    /// `(S1, S2)` after scaling both to the midpoint marginals.
    pub midpoint: (StockTable, StockTable),
    /// `(S1, S2)` from projecting the other table and scaling to this one's marginals.
    pub endpoint: (StockTable, StockTable),
}

/// Midpoint and endpoint scaling of a pair of stock tables.
pub fn pair_alternatives(s1: &StockTable, s2: &StockTable, rates: &DemographicRates) -> Result<PairAlternatives> {
    let n = s1.n();
    if s2.n() != n {
        bail!(Structural, "stock tables differ in size");
    }
    let demo = PeriodDemography::between(s1, s2.year(), rates)?;
    let births_on_diag = |sign: f64, m: &mut [f64]| {
        for i in 0..n {
            m[i * n + i] += sign * demo.births[i];
        }
    };
    let deaths = |sign: f64, m: &mut [f64]| {
        m.iter_mut().zip(&demo.deaths).for_each(|(v, d)| *v += sign * d);
    };
    let floor = |m: &mut [f64]| m.iter_mut().for_each(|v| *v = v.max(0.0));
    let opts = IpfOptions::default();

    let mut a1 = s1.values().to_vec();
    births_on_diag(1.0, &mut a1);
    let mut a2 = s2.values().to_vec();
    deaths(1.0, &mut a2);
    let (m1, m2) = (MarginalTargets::of(&a1, n), MarginalTargets::of(&a2, n));
    let avg = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>();
    let mid = MarginalTargets::new(avg(&m1.rows, &m2.rows), avg(&m1.cols, &m2.cols))?;
    let mut mid1 = ipf(&a1, &mid, opts)?;
    births_on_diag(-1.0, &mut mid1);
    floor(&mut mid1);
    let mut mid2 = ipf(&a2, &mid, opts)?;
    deaths(-1.0, &mut mid2);
    floor(&mut mid2);

    let mut fwd = s1.values().to_vec();
    births_on_diag(1.0, &mut fwd);
    deaths(-1.0, &mut fwd);
    floor(&mut fwd);
    let end2 = ipf(&fwd, &MarginalTargets::of(s2.values(), n), opts)?;
    let mut back = s2.values().to_vec();
    births_on_diag(-1.0, &mut back);
    deaths(1.0, &mut back);
    floor(&mut back);
    let end1 = ipf(&back, &MarginalTargets::of(s1.values(), n), opts)?;

    let table = |year, v| StockTable::new(year, n, v);
    Ok(PairAlternatives {
        midpoint: (table(s1.year(), mid1)?, table(s2.year(), mid2)?),
        endpoint: (table(s1.year(), end1)?, table(s2.year(), end2)?),
    })
}

/// Per-cell uncertainty of one stock table.
#[derive(Debug, Clone, PartialEq)]
pub struct StockUncertainty {
    pub year: i32,
    pub n: usize,
    /// Mean absolute deviation of the alternatives from the table.
    pub sigma: Vec<f64>,
    /// `sigma / S`; `None` where `S = 0`.
    pub relative: Vec<Option<f64>>,
    /// Number of alternative estimates that went into `sigma`.
    pub alternatives: usize,
}

impl StockUncertainty {
    /// Relative errors with undefined cells replaced by the table median.
    pub fn relative_filled(&self) -> Vec<f64> {
        let known: Vec<f64> = self.relative.iter().flatten().copied().collect();
        let fill = stats::median(&known).unwrap_or(0.0);
        self.relative.iter().map(|r| r.unwrap_or(fill)).collect()
    }
}

/// Uncertainty of each table in a chronologically ordered sequence.
///
/// Each neighbouring pair contributes one midpoint and one endpoint estimate
/// to both of its tables, so boundary tables get two alternatives and interior
/// ones four.
pub fn stock_uncertainty(tables: &[StockTable], rates: &DemographicRates) -> Result<Vec<StockUncertainty>> {
    if tables.len() < 2 {
        bail!(Estimation, "stock uncertainty needs at least two tables");
    }
    let n = tables[0].n();
    if tables.windows(2).any(|w| w[1].year() <= w[0].year() || w[1].n() != n) {
        bail!(Structural, "stock tables must share a size and increase in year");
    }
    let mut alternatives: Vec<Vec<StockTable>> = vec![Vec::new(); tables.len()];
    for (p, w) in tables.windows(2).enumerate() {
        let alt = pair_alternatives(&w[0], &w[1], rates)?;
        alternatives[p].push(alt.midpoint.0);
        alternatives[p].push(alt.endpoint.0);
        alternatives[p + 1].push(alt.midpoint.1);
        alternatives[p + 1].push(alt.endpoint.1);
    }
    Ok(tables
        .iter()
        .zip(alternatives)
        .map(|(s, alts)| {
            let mut sigma = vec![0.0; n * n];
            for a in &alts {
                sigma.iter_mut().zip(a.values().iter().zip(s.values())).for_each(|(acc, (x, y))| {
                    *acc += math::abs(x - y);
                });
            }
            sigma.iter_mut().for_each(|v| *v /= alts.len() as f64);
            let relative = sigma
                .iter()
                .zip(s.values())
                .map(|(sg, v)| (*v > 0.0).then(|| sg / v))
                .collect();
            StockUncertainty { year: s.year(), n, sigma, relative, alternatives: alts.len() }
        })
        .collect())
}

/// Centre and scale used to turn relative errors into weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightScale {
    pub mean: f64,
    pub std: f64,
}

impl WeightScale {
    /// Population mean and standard deviation of `rho`.
    pub fn fit(rho: &[f64]) -> Option<Self> {
        Some(Self { mean: stats::mean(rho)?, std: stats::std_dev(rho)? })
    }

    /// `clip(exp(-(rho - mean) / std), 0.5, 2)`, or 1 when `std = 0`.
    pub fn weight(&self, rho: f64) -> f64 {
        if !(self.std > 0.0) {
            return 1.0;
        }
        math::exp(-(rho - self.mean) / self.std).clamp(0.5, 2.0)
    }
}

/// Weights from relative errors, standardised with the population statistics
/// of `rho` itself.
pub fn weights_from_relative_error(rho: &[f64]) -> Vec<f64> {
    match WeightScale::fit(rho) {
        Some(scale) => rho.iter().map(|r| scale.weight(*r)).collect(),
        None => Vec::new(),
    }
}

/// Weights for stock differences `S2 - S1` with independent errors:
/// `sigma = sqrt(sigma1^2 + sigma2^2)`, `rho = sigma / |S2 - S1|`.
/// Cells with a zero difference take the median relative error.
pub fn stock_difference_weights(
    s1: &StockTable,
    s2: &StockTable,
    u1: &StockUncertainty,
    u2: &StockUncertainty,
) -> Result<Vec<f64>> {
    let m = s1.n() * s1.n();
    if s2.values().len() != m || u1.sigma.len() != m || u2.sigma.len() != m {
        bail!(Structural, "stock difference weights: sizes differ");
    }
    let rho: Vec<Option<f64>> = (0..m)
        .map(|c| {
            let d = math::abs(s2.values()[c] - s1.values()[c]);
            let sigma = math::sqrt(u1.sigma[c] * u1.sigma[c] + u2.sigma[c] * u2.sigma[c]);
            (d > 0.0).then(|| sigma / d)
        })
        .collect();
    let known: Vec<f64> = rho.iter().flatten().copied().collect();
    let fill = stats::median(&known).unwrap_or(0.0);
    let rho: Vec<f64> = rho.into_iter().map(|r| r.unwrap_or(fill)).collect();
    Ok(weights_from_relative_error(&rho))
}

/// Weights for flow observations from their standard errors.
///
/// Observations with a standard error have `rho = se / |value|`. On corridors
/// where only some observations carry one, the rest use the corridor median
/// `rho`. Corridors without any standard error get weight 1. Standardisation
/// uses the observations that carry their own standard error.
pub fn flow_weights(flows: &[FlowTarget]) -> Vec<f64> {
    let rho_of = |f: &FlowTarget| {
        f.std_error
            .filter(|se| se.is_finite() && f.value != 0.0)
            .map(|se| se / math::abs(f.value))
    };
    let own: Vec<Option<f64>> = flows.iter().map(rho_of).collect();
    let measured: Vec<f64> = own.iter().flatten().copied().collect();
    let Some(scale) = WeightScale::fit(&measured) else {
        return vec![1.0; flows.len()];
    };
    let mut corridor_median = alloc::collections::BTreeMap::new();
    for (f, r) in flows.iter().zip(&own) {
        if let Some(r) = r {
            corridor_median.entry((f.origin, f.destination)).or_insert_with(Vec::new).push(*r);
        }
    }
    let corridor_median: alloc::collections::BTreeMap<_, f64> = corridor_median
        .into_iter()
        .filter_map(|(k, v)| stats::median(&v).map(|m| (k, m)))
        .collect();
    flows
        .iter()
        .zip(&own)
        .map(|(f, r)| match r.or_else(|| corridor_median.get(&(f.origin, f.destination)).copied()) {
            Some(rho) => scale.weight(rho),
            None => 1.0,
        })
        .collect()
}

/// Result of [`native_born`].
#[derive(Debug, Clone, PartialEq)]
pub struct NativeBorn {
    pub table: StockTable,
    /// Countries whose foreign-born residents exceeded the population.
    pub clamped: Vec<usize>,
}

/// Replace the diagonal with `S[i][i] = P[i] - sum_{j != i} S[j][i]`, clamped at 0.
pub fn native_born(population: &[f64], s: &StockTable) -> Result<NativeBorn> {
    let n = s.n();
    if population.len() != n {
        bail!(Structural, "population needs {n} entries");
    }
    if population.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        bail!(Domain, "population must be positive and finite");
    }
    let mut values = s.values().to_vec();
    let mut clamped = Vec::new();
    for i in 0..n {
        let foreign: f64 = (0..n).filter(|j| *j != i).map(|j| s.get(j, i)).sum();
        let native = population[i] - foreign;
        if native < 0.0 {
            clamped.push(i);
        }
        values[i * n + i] = native.max(0.0);
    }
    Ok(NativeBorn { table: StockTable::new(s.year(), n, values)?, clamped })
}

/// Result of [`interpolate_stocks`].
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolated {
    /// Complete tables; the observation masks of the input are kept.
    pub series: StockSeries,
    /// `(birth, residence)` pairs without any observation; filled with zeros.
    /// Flows feeding these cells should be forced to zero.
    pub empty: Vec<(usize, usize)>,
    /// Pairs filled by carrying values flat because no donor had positive weight.
    pub flat: Vec<(usize, usize)>,
}

/// Fill gaps in stock series `S[i][j](t)` from the growth of similar series.
///
/// Donors for `(i, j)` are fully observed, positive series `(i, k)`, `k != j`,
/// weighted by `c_jk exp(-d_jk) / sum_k exp(-d_jk)` where `c_jk` is the
/// (non-negative part of the) Pearson correlation on overlapping observed
/// years. With fewer than three overlapping points the correlation is 0, unless
/// the target series itself has fewer than three observations, in which case
/// every donor gets `c = 1`. The weighted mean growth is applied forward and
/// backward from observed anchors; interior gaps blend both directions
/// log-linearly so both anchors are met.
///
/// `distances` is the row-major `n × n` matrix `d_jk`. Years must be
/// consecutive.
pub fn interpolate_stocks(series: &StockSeries, distances: &[f64]) -> Result<Interpolated> {
    let n = series.n();
    if distances.len() != n * n {
        bail!(Structural, "distance matrix needs {} entries", n * n);
    }
    let years: Vec<i32> = series.years().collect();
    if years.windows(2).any(|w| w[1] != w[0] + 1) {
        bail!(Gap, "stock series years must be consecutive");
    }
    let t_len = years.len();
    let obs = |i: usize, j: usize| -> Vec<Option<f64>> { years.iter().map(|y| series.value(*y, i, j)).collect() };

    let mut filled: Vec<Vec<f64>> = years.iter().map(|y| series.table(*y).unwrap().values().to_vec()).collect();
    let (mut empty, mut flat) = (Vec::new(), Vec::new());
    for i in 0..n {
        let rows: Vec<Vec<Option<f64>>> = (0..n).map(|j| obs(i, j)).collect();
        let complete: Vec<Option<Vec<f64>>> = rows
            .iter()
            .map(|r| {
                let v: Option<Vec<f64>> = r.iter().copied().collect();
                v.filter(|v| v.iter().all(|x| *x > 0.0))
            })
            .collect();
        for j in 0..n {
            let target = &rows[j];
            let n_obs = target.iter().flatten().count();
            if n_obs == t_len {
                continue;
            }
            if n_obs == 0 {
                empty.push((i, j));
                filled.iter_mut().for_each(|t| t[i * n + j] = 0.0);
                continue;
            }
            let dsum: f64 = (0..n).filter(|k| *k != j).map(|k| math::exp(-distances[j * n + k])).sum();
            let mut growth = vec![0.0; t_len];
            let mut wsum = 0.0;
            for k in (0..n).filter(|k| *k != j) {
                let Some(donor) = &complete[k] else { continue };
                let c = if n_obs < 3 {
                    1.0
                } else {
                    let (xs, ys): (Vec<f64>, Vec<f64>) = target
                        .iter()
                        .zip(donor)
                        .filter_map(|(a, b)| a.map(|a| (a, *b)))
                        .unzip();
                    stats::pearson(&xs, &ys).unwrap_or(0.0).max(0.0)
                };
                let w = c * math::exp(-distances[j * n + k]) / dsum;
                if !(w > 0.0) {
                    continue;
                }
                wsum += w;
                for t in 1..t_len {
                    growth[t] += w * (donor[t] / donor[t - 1] - 1.0);
                }
            }
            if wsum > 0.0 {
                growth.iter_mut().for_each(|g| *g /= wsum);
            } else {
                flat.push((i, j));
            }
            let values = fill_series(target, &growth);
            for (t, v) in values.into_iter().enumerate() {
                filled[t][i * n + j] = v;
            }
        }
    }
    let mut out = StockSeries::new(n);
    for (t, y) in years.iter().enumerate() {
        let table = StockTable::new(*y, n, core::mem::take(&mut filled[t]))?;
        let mask = series.mask(*y).unwrap().to_vec();
        let weights = series.weights(*y).unwrap().to_vec();
        out.insert(table, mask, weights)?;
    }
    Ok(Interpolated { series: out, empty, flat })
}

/// Fill a partially observed series using growth rates `g[t]` (growth from
/// `t - 1` to `t`).
fn fill_series(obs: &[Option<f64>], growth: &[f64]) -> Vec<f64> {
    let len = obs.len();
    let anchors: Vec<usize> = (0..len).filter(|t| obs[*t].is_some()).collect();
    let mut out: Vec<f64> = obs.iter().map(|v| v.unwrap_or(0.0)).collect();
    let first = anchors[0];
    for t in (0..first).rev() {
        out[t] = out[t + 1] / (1.0 + growth[t + 1]);
    }
    let last = *anchors.last().unwrap();
    for t in last + 1..len {
        out[t] = out[t - 1] * (1.0 + growth[t]);
    }
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b == a + 1 {
            continue;
        }
        let mut fwd = vec![out[a]; b - a + 1];
        for t in a + 1..=b {
            fwd[t - a] = fwd[t - a - 1] * (1.0 + growth[t]);
        }
        let mut bwd = vec![out[b]; b - a + 1];
        for t in (a..b).rev() {
            bwd[t - a] = bwd[t - a + 1] / (1.0 + growth[t + 1]);
        }
        for t in a + 1..b {
            let theta = (t - a) as f64 / (b - a) as f64;
            let (f, g) = (fwd[t - a], bwd[t - a]);
            out[t] = if f > 0.0 && g > 0.0 {
                math::exp((1.0 - theta) * math::ln(f) + theta * math::ln(g))
            } else {
                (1.0 - theta) * f + theta * g
            };
        }
    }
    out
}

/// Residual net migration `mu(t) = P(t+1) - P(t) - (beta(t) - gamma(t)) P(t)`
/// for each year but the last of one country's consecutive series.
pub fn wpp_net_migration_series(
    years: &[i32],
    population: &[f64],
    birth_rate: &[f64],
    death_rate: &[f64],
) -> Result<Vec<f64>> {
    let len = years.len();
    if population.len() != len || birth_rate.len() != len || death_rate.len() != len {
        bail!(Structural, "population and rate series must match the years");
    }
    if let Some(w) = years.windows(2).find(|w| w[1] != w[0] + 1) {
        bail!(Gap, "no consecutive population for {}..{}", w[0], w[1]);
    }
    Ok((1..len)
        .map(|t| population[t] - population[t - 1] - (birth_rate[t - 1] - death_rate[t - 1]) * population[t - 1])
        .collect())
}

/// [`wpp_net_migration_series`] for every country in `rates`; one vector per
/// year except the last.
pub fn wpp_net_migration(rates: &DemographicRates) -> Result<Vec<crate::domain::NetMigrationVector>> {
    let n = rates.n();
    let years: Vec<i32> = rates.years().years().collect();
    let mut out: Vec<crate::domain::NetMigrationVector> = years[..years.len().saturating_sub(1)]
        .iter()
        .map(|y| crate::domain::NetMigrationVector { year: *y, values: vec![0.0; n] })
        .collect();
    for j in 0..n {
        let pick = |f: &dyn Fn(i32) -> Result<f64>| -> Result<Vec<f64>> { years.iter().map(|y| f(*y)).collect() };
        let p = pick(&|y| Ok(rates.population(y)?[j]))?;
        let b = pick(&|y| Ok(rates.birth_rate(y)?[j]))?;
        let g = pick(&|y| Ok(rates.death_rate(y)?[j]))?;
        for (t, mu) in wpp_net_migration_series(&years, &p, &b, &g)?.into_iter().enumerate() {
            out[t].values[j] = mu;
        }
    }
    Ok(out)
}
