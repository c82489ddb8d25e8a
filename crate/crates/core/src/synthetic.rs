//! Synthetic worlds with known flows, their corruption into target data,
//! recovery metrics and hyperparameter sweeps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::covariates::{
    gdp_growth, names, religious_similarity, CovariateLayout, CovariatePanel, CovariateTable,
    CovariateTables, IndexGroup, ScalingSpec, TableArity,
};
use crate::domain::{
    flows_by_origin, net_migration, step_into, CorridorSplit, CountryRegistry, DemographicRates,
    FlowTarget, FlowTensor, NetMigrationTarget, NetMigrationVector, OriginDestinationMatrix,
    StockDiffTarget, StockSeries, StockTable, TargetDataset, TimeAxis,
};
use crate::error::{bail, Result};
use crate::math;
use crate::nn::Architecture;
use crate::stats;
use crate::training::{self, Problem, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct WorldSpec {
    pub countries: usize,
    pub years: usize,
    pub start_year: i32,
    pub eta: f64,
    /// Generator coefficients are drawn from `U[0, alpha_max]`.
    pub alpha_max: f64,
    /// Log-uniform range of foreign-born initial stock cells.
    pub foreign_stock: (f64, f64),
    /// Log-uniform range of native-born initial stock cells.
    pub native_stock: (f64, f64),
    pub birth_rate: (f64, f64),
    pub death_rate: (f64, f64),
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            countries: 30,
            years: 10,
            start_year: 2010,
            eta: 100.0,
            alpha_max: 0.5,
            foreign_stock: (1e5, 1e7),
            native_stock: (1e7, 1e9),
            birth_rate: (0.008, 0.03),
            death_rate: (0.005, 0.015),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.countries < 2 || self.years < 1 {
            bail!(Usage, "a world needs at least 2 countries and 1 year");
        }
        let ranges = [self.foreign_stock, self.native_stock, self.birth_rate, self.death_rate];
        if ranges.iter().any(|(lo, hi)| !(*lo >= 0.0 && lo <= hi && hi.is_finite())) {
            bail!(Usage, "ranges must satisfy 0 <= lo <= hi");
        }
        if self.foreign_stock.0 <= 0.0 || self.native_stock.0 <= 0.0 {
            bail!(Usage, "stock ranges must be positive for log-uniform draws");
        }
        if self.death_rate.1 >= 1.0 {
            bail!(Usage, "death rates must stay below 1");
        }
        if !(self.eta > 0.0) || !(self.alpha_max >= 0.0) {
            bail!(Usage, "eta must be positive and alpha_max non-negative");
        }
        Ok(())
    }

    pub fn time_axis(&self) -> TimeAxis {
        TimeAxis { start_year: self.start_year, end_year: self.start_year + self.years as i32 - 1 }
    }
}

/// A world with known flows. `stocks` holds `years + 1` tables.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub registry: CountryRegistry,
    pub years: TimeAxis,
    pub tables: CovariateTables,
    pub panel: CovariatePanel,
    pub rates: DemographicRates,
    pub alpha: Vec<f64>,
    pub eta: f64,
    pub flows: Vec<FlowTensor>,
    pub stocks: Vec<StockTable>,
    pub od: Vec<OriginDestinationMatrix>,
    pub net: Vec<NetMigrationVector>,
    pub stock_clamps: usize,
}

impl SyntheticWorld {
    pub fn n(&self) -> usize {
        self.registry.len()
    }

    pub fn initial_stocks(&self) -> &StockTable {
        &self.stocks[0]
    }

    /// Rollout problem over the world's covariates and demography, started
    /// from `initial`.
    pub fn problem<'a>(&'a self, initial: &'a StockTable) -> Problem<'a> {
        Problem { panel: &self.panel, rates: &self.rates, initial_stocks: initial, years: self.years }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    math::exp(rng.random_range(math::ln(lo)..math::ln(hi)))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random covariate tables covering every table of the canonical layout.
/// Series drift smoothly over time around country- or pair-level levels.
pub fn random_covariates(n: usize, years: TimeAxis, seed: u64) -> Result<CovariateTables> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = years.len();
    let mut tables = CovariateTables::default();
    let country = |name: &str, values: Vec<f64>, tables: &mut CovariateTables| -> Result<()> {
        tables.insert(CovariateTable::new(name, TableArity::Country, years, n, values)?);
        Ok(())
    };

    let series = |rng: &mut ChaCha8Rng, level: f64, drift: f64, wiggle: f64| -> Vec<f64> {
        let mut out = Vec::with_capacity(y);
        let mut v = level;
        for _ in 0..y {
            out.push(v);
            v *= math::exp(drift + wiggle * normal(rng));
        }
        out
    };
    let fill = |values: &mut [f64], c: usize, s: &[f64]| {
        for (t, v) in s.iter().enumerate() {
            values[t * n + c] = *v;
        }
    };

    let mut population = vec![0.0; y * n];
    let mut life = vec![0.0; y * n];
    let mut br = vec![0.0; y * n];
    let mut dr = vec![0.0; y * n];
    let mut gdp = vec![0.0; y * n];
    let mut growth = vec![0.0; y * n];
    let mut eu = vec![0.0; y * n];
    let mut conflict = vec![0.0; y * n];
    // at least one country reports conflict deaths so the covariate varies
    let war_country = rng.random_range(0..n);
    for c in 0..n {
        let pop_level = log_uniform(&mut rng, (1e5, 1e8));
        let pop_drift = 0.01 * normal(&mut rng);
        fill(&mut population, c, &series(&mut rng, pop_level, pop_drift, 0.003));
        let le = rng.random_range(55.0..85.0);
        let le_drift = rng.random_range(0.0..0.004);
        fill(&mut life, c, &series(&mut rng, le, le_drift, 0.002));
        let b = rng.random_range(8.0..40.0);
        fill(&mut br, c, &series(&mut rng, b, -0.01, 0.02));
        let d = rng.random_range(5.0..15.0);
        fill(&mut dr, c, &series(&mut rng, d, 0.0, 0.02));
        // one extra leading year so growth is defined in the first year
        let g_level = log_uniform(&mut rng, (500.0, 80_000.0));
        let g_drift = 0.02 + 0.01 * normal(&mut rng);
        let mut g = series(&mut rng, g_level, g_drift, 0.03);
        let before = g[0] / math::exp(g_drift + 0.03 * normal(&mut rng));
        let mut with_prev: Vec<Option<f64>> = vec![Some(before)];
        with_prev.extend(g.iter().map(|v| Some(*v)));
        let rates = gdp_growth(&with_prev)?;
        for t in 0..y {
            growth[t * n + c] = rates[t + 1].expect("consecutive values present");
        }
        fill(&mut gdp, c, &g);
        g.clear();
        let member = rng.random_bool(0.3);
        let joins = if member { 0 } else if rng.random_bool(0.1) { rng.random_range(1..=y) } else { y };
        for t in 0..y {
            eu[t * n + c] = (member || t >= joins) as u8 as f64;
        }
        let at_war = rng.random_bool(0.2) || c == war_country;
        for t in 0..y {
            conflict[t * n + c] = if at_war && (c == war_country || rng.random_bool(0.7)) { log_uniform(&mut rng, (10.0, 1e4)) } else { 0.0 };
        }
    }
    country(names::POPULATION, population, &mut tables)?;
    country(names::LIFE_EXPECTANCY, life, &mut tables)?;
    country(names::BIRTH_RATE, br, &mut tables)?;
    country(names::DEATH_RATE, dr, &mut tables)?;
    country(names::GDP_PER_CAPITA, gdp, &mut tables)?;
    country(names::GDP_GROWTH, growth, &mut tables)?;
    country(names::EU_MEMBER, eu, &mut tables)?;
    country(names::CONFLICT_DEATHS, conflict, &mut tables)?;

    let nn = n * n;
    let pair_fill = |values: &mut [f64], key: usize, s: &[f64]| {
        for (t, v) in s.iter().enumerate() {
            values[t * nn + key] = *v;
        }
    };
    let mut refugees = vec![0.0; y * nn];
    let mut refugee_change = vec![0.0; y * nn];
    let mut trade = vec![0.0; y * nn];
    let mut religious = vec![0.0; y * nn];
    let mut linguistic = vec![0.0; y * nn];
    let mut colony = vec![0.0; y * nn];
    let mut distance = vec![0.0; y * nn];

    let shares: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..5).map(|_| -math::ln(rng.random_range(1e-9..1.0))).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    let coords: Vec<(f64, f64)> = (0..n).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
    for a in 0..n {
        for b in 0..n {
            let key = a * n + b;
            let has_refugees = a != b && rng.random_bool(0.3);
            let level = if has_refugees { log_uniform(&mut rng, (10.0, 1e5)) } else { 0.0 };
            let prev = level * math::exp(0.1 * normal(&mut rng));
            let s = series(&mut rng, level, 0.0, 0.1);
            let mut change = Vec::with_capacity(y);
            for t in 0..y {
                change.push(s[t] - if t == 0 { prev } else { s[t - 1] });
            }
            pair_fill(&mut refugees, key, &s);
            pair_fill(&mut refugee_change, key, &change);
            let tr = if a == b { vec![0.0; y] } else {
                let lvl = log_uniform(&mut rng, (1e5, 1e10));
                series(&mut rng, lvl, 0.02, 0.05)
            };
            pair_fill(&mut trade, key, &tr);
            pair_fill(&mut religious, key, &vec![religious_similarity(&shares[a], &shares[b], Some(4)); y]);
            let (dx, dy) = (coords[a].0 - coords[b].0, coords[a].1 - coords[b].1);
            let d = 15_000.0 * math::sqrt(dx * dx + dy * dy);
            pair_fill(&mut distance, key, &vec![d; y]);
            if a <= b {
                let lang = if a == b { 1.0 } else { rng.random_range(0.0..1.0) * rng.random_range(0.0..1.0) };
                let col = if a != b && rng.random_bool(0.1) { 1.0 } else { 0.0 };
                let bkey = b * n + a;
                pair_fill(&mut linguistic, key, &vec![lang; y]);
                pair_fill(&mut linguistic, bkey, &vec![lang; y]);
                pair_fill(&mut colony, key, &vec![col; y]);
                pair_fill(&mut colony, bkey, &vec![col; y]);
            }
        }
    }
    for (name, values) in [
        (names::REFUGEE_STOCK, refugees),
        (names::REFUGEE_CHANGE, refugee_change),
        (names::TRADE, trade),
        (names::RELIGIOUS_SIMILARITY, religious),
        (names::LINGUISTIC_SIMILARITY, linguistic),
        (names::COLONY, colony),
        (names::DISTANCE, distance),
    ] {
        tables.insert(CovariateTable::new(name, TableArity::Pair, years, n, values)?);
    }
    Ok(tables)
}

/// Generate a world over random covariates with random generator coefficients.
pub fn generate(spec: &WorldSpec, seed: u64) -> Result<SyntheticWorld> {
    let tables = random_covariates(spec.countries, spec.time_axis(), seed ^ 0x00c0_ffee)?;
    generate_with(spec, seed, tables, &CovariateLayout::canonical(), None)
}

/// Generate a world over the given covariate tables. `alpha` overrides the
/// random coefficients (one per layout component).
pub fn generate_with(
    spec: &WorldSpec,
    seed: u64,
    tables: CovariateTables,
    layout: &CovariateLayout,
    alpha: Option<Vec<f64>>,
) -> Result<SyntheticWorld> {
    spec.validate()?;
    let n = spec.countries;
    let years = spec.time_axis();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = match alpha {
        Some(a) if a.len() == layout.len() => a,
        Some(a) => bail!(Structural, "{} coefficients for {} components", a.len(), layout.len()),
        None => (0..layout.len()).map(|_| rng.random_range(0.0..=spec.alpha_max)).collect(),
    };
    let initial = StockTable::from_fn(years.start_year, n, |i, j| {
        let range = if i == j { spec.native_stock } else { spec.foreign_stock };
        log_uniform(&mut rng, range)
    })?;
    let panel = CovariatePanel::build(layout, &tables, n, years, &ScalingSpec::default(), initial.values())?;

    let y = years.len();
    let mut birth_rate = vec![0.0; y * n];
    let mut death_rate = vec![0.0; y * n];
    let mut births = vec![0.0; y * n];
    let mut population = vec![0.0; y * n];
    for c in 0..n {
        let b = rng.random_range(spec.birth_rate.0..=spec.birth_rate.1);
        let d = rng.random_range(spec.death_rate.0..=spec.death_rate.1);
        let pop = initial.col_sum(c);
        for t in 0..y {
            birth_rate[t * n + c] = b;
            death_rate[t * n + c] = d;
            population[t * n + c] = pop;
            births[t * n + c] = b * pop;
        }
    }
    let rates = DemographicRates::new(years, n, births, birth_rate, death_rate, population)?;

    let mut stocks = vec![initial];
    let mut flows = Vec::with_capacity(y);
    let mut od = Vec::with_capacity(y);
    let mut net = Vec::with_capacity(y);
    let mut stock_clamps = 0;
    let coefficients: Vec<(IndexGroup, Vec<f64>)> = IndexGroup::ALL
        .iter()
        .map(|g| (*g, alpha[layout.group_range(*g)].to_vec()))
        .collect();
    for year in years.years() {
        let current = stocks.last().expect("initial table");
        // <chi, alpha> decomposes into one dot product per index group
        let mut dots: Vec<Vec<f64>> = Vec::with_capacity(6);
        for (g, a) in &coefficients {
            let width = a.len();
            let block = panel.block(*g, year)?;
            let col = panel.stock_column(*g);
            let scaling = panel.stock_scaling(*g);
            let rows = g.rows(n);
            let mut d = vec![0.0; rows];
            for (r, slot) in d.iter_mut().enumerate() {
                let x = &block[r * width..(r + 1) * width];
                let mut s: f64 = x.iter().zip(a).map(|(x, a)| x * a).sum();
                if let (Some(col), Some(sc)) = (col, scaling) {
                    s += a[col] * sc.apply(current.values()[r]);
                }
                *slot = s;
            }
            dots.push(d);
        }
        let mut t = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if j == k {
                        continue;
                    }
                    let s: f64 = IndexGroup::ALL
                        .iter()
                        .zip(&dots)
                        .map(|(g, d)| d[g.row(n, i, j, k)])
                        .sum();
                    t[(i * n + j) * n + k] = spec.eta * math::exp(s);
                }
            }
        }
        let mut next = vec![0.0; n * n];
        stock_clamps += step_into(n, current.values(), &t, rates.births(year)?, rates.death_rate(year)?, &mut next);
        let tensor = FlowTensor::from_raw(year, n, t);
        let f = flows_by_origin(&tensor);
        net.push(net_migration(&f));
        od.push(f);
        flows.push(tensor);
        stocks.push(StockTable::from_raw(year + 1, n, next));
    }
    Ok(SyntheticWorld {
        registry: CountryRegistry::numbered(n),
        years,
        tables,
        panel,
        rates,
        alpha,
        eta: spec.eta,
        flows,
        stocks,
        od,
        net,
        stock_clamps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct CorruptionSpec {
    pub stock_noise: f64,
    pub flow_noise: f64,
    pub net_noise: f64,
    pub flow_mask: f64,
    pub net_mask: f64,
    pub stock_mask: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            stock_noise: 0.10,
            flow_noise: 0.20,
            net_noise: 0.05,
            flow_mask: 0.80,
            net_mask: 0.80,
            stock_mask: 0.10,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    /// No noise and no masking.
    pub fn clean(seed: u64) -> Self {
        Self { stock_noise: 0.0, flow_noise: 0.0, net_noise: 0.0, flow_mask: 0.0, net_mask: 0.0, stock_mask: 0.0, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for v in [self.stock_noise, self.flow_noise, self.net_noise] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Usage, "noise levels must be finite and >= 0");
            }
        }
        for v in [self.flow_mask, self.net_mask, self.stock_mask] {
            if !(0.0..1.0).contains(&v) {
                bail!(Usage, "mask fractions must lie in [0, 1)");
            }
        }
        Ok(())
    }
}

/// Corrupted observations of a world.
#[derive(Debug, Clone)]
pub struct Observations {
    /// Noisy stock tables with observation masks (`years + 1` tables).
    pub stocks: StockSeries,
    /// Training inputs: stock differences, observed flows, net migration.
    /// Masked flow corridors form the test side of the corridor split.
    pub targets: TargetDataset,
    /// Initial stock table seen by the estimator; masked cells are filled
    /// from the nearest observed year of that cell.
    pub initial_stocks: StockTable,
}

/// `count` distinct indices out of `total`, chosen uniformly.
fn choose(rng: &mut ChaCha8Rng, total: usize, count: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(rng);
    let mut out = vec![false; total];
    for i in idx.into_iter().take(count) {
        out[i] = true;
    }
    out
}

fn masked_count(fraction: f64, total: usize) -> usize {
    math::round(fraction * total as f64) as usize
}

/// Multiplicative noise `v (1 + e)`, `e ~ N(0, level^2)`, then masking:
/// cells for stocks, whole corridors for flows, countries for net migration.
pub fn corrupt(world: &SyntheticWorld, spec: &CorruptionSpec) -> Result<Observations> {
    spec.validate()?;
    let n = world.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noisy = |rng: &mut ChaCha8Rng, v: f64, level: f64| -> f64 {
        if level == 0.0 {
            v
        } else {
            v * (1.0 + level * normal(rng))
        }
    };

    let tables = world.stocks.len();
    let cells = tables * n * n;
    let stock_masked = choose(&mut rng, cells, masked_count(spec.stock_mask, cells));
    let mut stocks = StockSeries::new(n);
    let mut noisy_tables = Vec::with_capacity(tables);
    for (t, table) in world.stocks.iter().enumerate() {
        let values: Vec<f64> = table.values().iter().map(|v| noisy(&mut rng, *v, spec.stock_noise).max(0.0)).collect();
        let observed: Vec<bool> = (0..n * n).map(|c| !stock_masked[t * n * n + c]).collect();
        let nt = StockTable::new(table.year(), n, values)?;
        stocks.insert(nt.clone(), observed.clone(), vec![1.0; n * n])?;
        noisy_tables.push((nt, observed));
    }

    let mut targets = TargetDataset::empty(n);
    for c in 0..n * n {
        let mut last: Option<(i32, f64)> = None;
        for (table, observed) in &noisy_tables {
            if !observed[c] {
                continue;
            }
            let v = table.values()[c];
            if let Some((y0, v0)) = last {
                targets.stock_diffs.push(StockDiffTarget {
                    start_year: y0,
                    end_year: table.year(),
                    birth: c / n,
                    residence: c % n,
                    value: v - v0,
                    weight: 1.0,
                });
            }
            last = Some((table.year(), v));
        }
    }
    targets.stock_diffs.sort_by_key(|d| (d.start_year, d.birth, d.residence));

    let corridors: Vec<usize> = (0..n * n).filter(|c| c / n != c % n).collect();
    let flow_masked = choose(&mut rng, corridors.len(), masked_count(spec.flow_mask, corridors.len()));
    let mut test = vec![false; n * n];
    for (idx, c) in corridors.iter().enumerate() {
        test[*c] = flow_masked[idx];
    }
    for f in &world.od {
        for (idx, &c) in corridors.iter().enumerate() {
            let value = noisy(&mut rng, f.values()[c], spec.flow_noise);
            if !flow_masked[idx] {
                targets.flows.push(FlowTarget {
                    year: f.year(),
                    origin: c / n,
                    destination: c % n,
                    value,
                    weight: 1.0,
                    std_error: None,
                });
            }
        }
    }
    targets.corridor_split = CorridorSplit::from_test_mask(n, test)?;

    let net_masked = choose(&mut rng, n, masked_count(spec.net_mask, n));
    for m in &world.net {
        for c in 0..n {
            let value = noisy(&mut rng, m.values[c], spec.net_noise);
            if !net_masked[c] {
                targets.net_migration.push(NetMigrationTarget { year: m.year, country: c, value, weight: 1.0 });
            }
        }
    }

    let mut initial = vec![0.0; n * n];
    for (c, slot) in initial.iter_mut().enumerate() {
        let nearest = noisy_tables.iter().find(|(_, obs)| obs[c]);
        *slot = nearest.map(|(t, _)| t.values()[c]).unwrap_or(0.0);
    }
    Ok(Observations {
        stocks,
        targets,
        initial_stocks: StockTable::new(world.years.start_year, n, initial)?,
    })
}

/// Recovery of the true flows by an estimate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecoveryMetrics {
    /// Median of `|T_hat - T| / T` over every edge and year.
    pub median_relative_error: f64,
    /// Pearson R between estimated and true `T` over every edge and year.
    pub flow_correlation: Option<f64>,
    /// Per-corridor Pearson R of the yearly origin-destination series.
    pub train_corridor_r: Vec<f64>,
    pub test_corridor_r: Vec<f64>,
    pub mean_train_corridor_r: Option<f64>,
    pub mean_test_corridor_r: Option<f64>,
    /// Pearson R pooled over all corridor-years of each side.
    pub pooled_train_r: Option<f64>,
    pub pooled_test_r: Option<f64>,
}

/// Compare estimated flows against the world's truth. Without a split every
/// corridor counts as training.
pub fn evaluate_recovery(
    estimates: &[FlowTensor],
    world: &SyntheticWorld,
    split: Option<&CorridorSplit>,
) -> Result<RecoveryMetrics> {
    evaluate_flows(estimates, &world.flows, split)
}

/// [`evaluate_recovery`] against explicit true flow tensors.
pub fn evaluate_flows(
    estimates: &[FlowTensor],
    truth: &[FlowTensor],
    split: Option<&CorridorSplit>,
) -> Result<RecoveryMetrics> {
    let n = truth.first().map_or(0, |t| t.n());
    if n == 0 || estimates.len() != truth.len() || estimates.iter().chain(truth).any(|e| e.n() != n) {
        bail!(Structural, "estimates do not match the shape of the true flows");
    }
    let mut rel = Vec::new();
    let mut est_all = Vec::new();
    let mut true_all = Vec::new();
    for (e, t) in estimates.iter().zip(truth) {
        if e.year() != t.year() {
            bail!(Structural, "estimate for {} paired with truth for {}", e.year(), t.year());
        }
        for (idx, (&a, &b)) in e.values().iter().zip(t.values()).enumerate() {
            let (j, k) = ((idx / n) % n, idx % n);
            if j == k {
                continue;
            }
            if b > 0.0 {
                rel.push(math::abs(a - b) / b);
            }
            est_all.push(a);
            true_all.push(b);
        }
    }
    let est_od: Vec<OriginDestinationMatrix> = estimates.iter().map(flows_by_origin).collect();
    let true_od: Vec<OriginDestinationMatrix> = truth.iter().map(flows_by_origin).collect();
    let mut train_r = Vec::new();
    let mut test_r = Vec::new();
    let (mut pool_train, mut pool_test) = ((Vec::new(), Vec::new()), (Vec::new(), Vec::new()));
    for j in 0..n {
        for k in 0..n {
            if j == k {
                continue;
            }
            let a: Vec<f64> = est_od.iter().map(|f| f.get(j, k)).collect();
            let b: Vec<f64> = true_od.iter().map(|f| f.get(j, k)).collect();
            let is_test = split.is_some_and(|s| s.is_test(j, k));
            let (rs, pool) = if is_test { (&mut test_r, &mut pool_test) } else { (&mut train_r, &mut pool_train) };
            if let Some(r) = stats::pearson(&a, &b) {
                rs.push(r);
            }
            pool.0.extend(a);
            pool.1.extend(b);
        }
    }
    let mean = |v: &[f64]| stats::mean(v);
    Ok(RecoveryMetrics {
        median_relative_error: stats::median(&rel).unwrap_or(f64::NAN),
        flow_correlation: stats::pearson(&est_all, &true_all),
        mean_train_corridor_r: mean(&train_r),
        mean_test_corridor_r: mean(&test_r),
        train_corridor_r: train_r,
        test_corridor_r: test_r,
        pooled_train_r: stats::pearson(&pool_train.0, &pool_train.1),
        pooled_test_r: stats::pearson(&pool_test.0, &pool_test.1),
    })
}

/// One configuration of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub arch: Architecture,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub outcome: core::result::Result<(RecoveryMetrics, f64), String>,
}

/// Cartesian grid over depth, width, activation, latent dimension and the
/// target transform parameter (applied to all three loss terms).
pub fn grid(
    base_arch: Architecture,
    base: TrainConfig,
    depths: &[usize],
    widths: &[usize],
    activations: &[crate::nn::Activation],
    latents: &[usize],
    lambdas: &[f64],
) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &depth in depths {
        for &hidden_width in widths {
            for &hidden_activation in activations {
                for &latent_dim in latents {
                    for &l in lambdas {
                        out.push(SweepPoint {
                            label: alloc::format!(
                                "depth={depth} width={hidden_width} activation={} z={latent_dim} lambda={l}",
                                hidden_activation.name()
                            ),
                            arch: Architecture { depth, hidden_width, hidden_activation, latent_dim, ..base_arch },
                            config: TrainConfig { lambda_stock: l, lambda_net: l, lambda_flow: l, ..base },
                        });
                    }
                }
            }
        }
    }
    out
}

/// Train every point on the same observations and evaluate recovery. A failing
/// point is recorded and the sweep continues. The row carries the final
/// training loss next to the metrics.
pub fn sweep(points: &[SweepPoint], world: &SyntheticWorld, obs: &Observations) -> Vec<SweepRow> {
    points
        .iter()
        .map(|p| {
            let problem = world.problem(&obs.initial_stocks);
            let outcome = training::train(&p.config, p.arch, &problem, &obs.targets)
                .and_then(|out| {
                    let r = training::rollout(&out.params, &problem)?;
                    let m = evaluate_recovery(&r.flows, world, Some(&obs.targets.corridor_split))?;
                    Ok((m, out.final_loss.total))
                })
                .map_err(|e| alloc::format!("{e}"));
            SweepRow { point: p.clone(), outcome }
        })
        .collect()
}
