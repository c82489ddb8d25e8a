//! Core tensors, registries and the stock-evolution bookkeeping.
//!
//! Index conventions used throughout the crate:
//!
//! * stocks `S[i][j]`: persons born in `i` living in `j`, row-major `i * n + j`;
//! * flows `T[i][j][k]`: `i`-born persons moving `j -> k`, `(i * n + j) * n + k`;
//! * origin-destination flows `F[j][k]`, row-major `j * n + k`.
//!
//! One call to [`stock_step`] advances a table by one calendar year: deaths
//! act on the start-of-year stock, then births and the year's net migration
//! are added. The within-year ordering is a modelling choice; the continuous
//! relation it discretises does not fix one.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};

/// Ordered set of unique country codes. Tensor axes index into it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CountryRegistry {
    codes: Vec<String>,
    names: Vec<String>,
}

impl CountryRegistry {
    pub fn new(codes: Vec<String>, names: Vec<String>) -> Result<Self> {
        if codes.len() != names.len() {
            bail!(Structural, "{} codes but {} names", codes.len(), names.len());
        }
        let mut seen = BTreeMap::new();
        for (i, c) in codes.iter().enumerate() {
            if let Some(prev) = seen.insert(c.as_str(), i) {
                bail!(Structural, "duplicate country code {c:?} at {prev} and {i}");
            }
        }
        Ok(Self { codes, names })
    }

    /// Registry whose display names equal the codes.
    pub fn from_codes<S: ToString>(codes: &[S]) -> Result<Self> {
        let codes: Vec<String> = codes.iter().map(|c| c.to_string()).collect();
        Self::new(codes.clone(), codes)
    }

    /// Registry `C000, C001, ...` used by synthetic worlds.
    pub fn numbered(n: usize) -> Self {
        let codes: Vec<String> = (0..n).map(|i| alloc::format!("C{i:03}")).collect();
        Self { names: codes.clone(), codes }
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, i: usize) -> &str {
        &self.codes[i]
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }
}

/// Inclusive range of calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeAxis {
    pub start_year: i32,
    pub end_year: i32,
}

impl TimeAxis {
    pub fn new(start_year: i32, end_year: i32) -> Result<Self> {
        if start_year > end_year {
            bail!(Structural, "time axis start {start_year} after end {end_year}");
        }
        Ok(Self { start_year, end_year })
    }

    pub fn len(&self) -> usize {
        (self.end_year - self.start_year + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start_year..=self.end_year).contains(&year)
    }

    pub fn index(&self, year: i32) -> Option<usize> {
        self.contains(year).then(|| (year - self.start_year) as usize)
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.start_year..=self.end_year
    }
}

fn check_entries(what: &str, values: &[f64]) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        bail!(Domain, "{what}: entry {pos} is {} (must be finite and >= 0)", values[pos]);
    }
    Ok(())
}

/// `S[i][j]`: persons born in `i` living in `j` at the start of `year`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StockTable {
    year: i32,
    n: usize,
    values: Vec<f64>,
}

impl StockTable {
    pub fn new(year: i32, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            bail!(Structural, "stock table needs {} entries, got {}", n * n, values.len());
        }
        check_entries("stock table", &values)?;
        Ok(Self { year, n, values })
    }

    pub fn zeros(year: i32, n: usize) -> Self {
        Self { year, n, values: vec![0.0; n * n] }
    }

    pub fn from_fn(year: i32, n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(f(i, j));
            }
        }
        Self::new(year, n, values)
    }

    pub(crate) fn from_raw(year: i32, n: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * n);
        Self { year, n, values }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn with_year(mut self, year: i32) -> Self {
        self.year = year;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if !v.is_finite() || v < 0.0 {
            bail!(Domain, "stock ({i},{j}) value {v} must be finite and >= 0");
        }
        self.values[i * self.n + j] = v;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Total of row `i` (all residences of `i`-born persons).
    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[i * self.n..(i + 1) * self.n].iter().sum()
    }

    /// Total of column `j` (everyone living in `j`).
    pub fn col_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.values[i * self.n + j]).sum()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Stock tables over time with an observation mask and per-entry weights.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StockSeries {
    n: usize,
    years: BTreeMap<i32, SeriesYear>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
struct SeriesYear {
    table: StockTable,
    observed: Vec<bool>,
    weights: Vec<f64>,
}

impl StockSeries {
    pub fn new(n: usize) -> Self {
        Self { n, years: BTreeMap::new() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Insert a fully observed table with unit weights.
    pub fn insert_observed(&mut self, table: StockTable) -> Result<()> {
        let m = self.n * self.n;
        self.insert(table, vec![true; m], vec![1.0; m])
    }

    pub fn insert(&mut self, table: StockTable, observed: Vec<bool>, weights: Vec<f64>) -> Result<()> {
        let m = self.n * self.n;
        if table.n() != self.n || observed.len() != m || weights.len() != m {
            bail!(Structural, "series entry for {} does not match size {}", table.year(), self.n);
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            bail!(Domain, "series weight {w} must be finite and >= 0");
        }
        self.years.insert(table.year(), SeriesYear { table, observed, weights });
        Ok(())
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        self.years.keys().copied()
    }

    pub fn table(&self, year: i32) -> Option<&StockTable> {
        self.years.get(&year).map(|y| &y.table)
    }

    pub fn is_observed(&self, year: i32, i: usize, j: usize) -> bool {
        self.years.get(&year).is_some_and(|y| y.observed[i * self.n + j])
    }

    /// Observed value of cell `(i, j)` in `year`, if any.
    pub fn value(&self, year: i32, i: usize, j: usize) -> Option<f64> {
        let y = self.years.get(&year)?;
        y.observed[i * self.n + j].then(|| y.table.get(i, j))
    }

    pub fn weight(&self, year: i32, i: usize, j: usize) -> Option<f64> {
        let y = self.years.get(&year)?;
        y.observed[i * self.n + j].then(|| y.weights[i * self.n + j])
    }

    pub fn mask(&self, year: i32) -> Option<&[bool]> {
        self.years.get(&year).map(|y| y.observed.as_slice())
    }

    pub fn weights(&self, year: i32) -> Option<&[f64]> {
        self.years.get(&year).map(|y| y.weights.as_slice())
    }

    pub fn set_weights(&mut self, year: i32, weights: Vec<f64>) -> Result<()> {
        let n = self.n;
        let Some(y) = self.years.get_mut(&year) else {
            bail!(Structural, "no stock table for {year}");
        };
        if weights.len() != n * n {
            bail!(Structural, "weights for {year} need {} entries", n * n);
        }
        y.weights = weights;
        Ok(())
    }
}

/// `T[i][j][k]`: flow of `i`-born persons from `j` to `k` during `year`.
/// Entries with `j == k` are structurally zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowTensor {
    year: i32,
    n: usize,
    values: Vec<f64>,
}

impl FlowTensor {
    pub fn new(year: i32, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n * n {
            bail!(Structural, "flow tensor needs {} entries, got {}", n * n * n, values.len());
        }
        check_entries("flow tensor", &values)?;
        for i in 0..n {
            for j in 0..n {
                let v = values[(i * n + j) * n + j];
                if v != 0.0 {
                    bail!(Structural, "self-corridor flow T[{i}][{j}][{j}] = {v} must be 0");
                }
            }
        }
        Ok(Self { year, n, values })
    }

    pub fn zeros(year: i32, n: usize) -> Self {
        Self { year, n, values: vec![0.0; n * n * n] }
    }

    /// Build from a closure; the closure is not called for `j == k`.
    pub fn from_fn(
        year: i32,
        n: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = vec![0.0; n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if j != k {
                        values[(i * n + j) * n + k] = f(i, j, k);
                    }
                }
            }
        }
        Self::new(year, n, values)
    }

    pub(crate) fn from_raw(year: i32, n: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * n * n);
        Self { year, n, values }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) -> Result<()> {
        if j == k {
            bail!(Structural, "self-corridor T[{i}][{j}][{k}] cannot be set");
        }
        if !v.is_finite() || v < 0.0 {
            bail!(Domain, "flow value {v} must be finite and >= 0");
        }
        self.values[(i * self.n + j) * self.n + k] = v;
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `F[j][k]`: total flow from `j` to `k` regardless of birthplace.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OriginDestinationMatrix {
    year: i32,
    n: usize,
    values: Vec<f64>,
}

impl OriginDestinationMatrix {
    pub fn new(year: i32, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            bail!(Structural, "OD matrix needs {} entries, got {}", n * n, values.len());
        }
        check_entries("OD matrix", &values)?;
        if let Some(j) = (0..n).find(|&j| values[j * n + j] != 0.0) {
            bail!(Structural, "OD diagonal F[{j}][{j}] must be 0");
        }
        Ok(Self { year, n, values })
    }

    pub(crate) fn from_raw(year: i32, n: usize, values: Vec<f64>) -> Self {
        Self { year, n, values }
    }

    pub fn year(&self) -> i32 {
        self.year
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.n + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `mu[j]`: arrivals minus departures of country `j` during `year`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetMigrationVector {
    pub year: i32,
    pub values: Vec<f64>,
}

/// Births, crude rates and population per country and year.
///
/// Storage is year-major: entry `(year, j)` lives at `index(year) * n + j`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DemographicRates {
    years: TimeAxis,
    n: usize,
    births: Vec<f64>,
    birth_rate: Vec<f64>,
    death_rate: Vec<f64>,
    population: Vec<f64>,
}

impl DemographicRates {
    pub fn new(
        years: TimeAxis,
        n: usize,
        births: Vec<f64>,
        birth_rate: Vec<f64>,
        death_rate: Vec<f64>,
        population: Vec<f64>,
    ) -> Result<Self> {
        let m = years.len() * n;
        for (name, v) in [
            ("births", &births),
            ("birth_rate", &birth_rate),
            ("death_rate", &death_rate),
            ("population", &population),
        ] {
            if v.len() != m {
                bail!(Structural, "{name} needs {m} entries, got {}", v.len());
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                bail!(Domain, "{name} entries must be finite and >= 0");
            }
        }
        if let Some(g) = death_rate.iter().find(|g| **g >= 1.0) {
            bail!(Domain, "death rate {g} must be < 1");
        }
        if population.iter().any(|p| *p <= 0.0) {
            bail!(Domain, "population must be positive");
        }
        Ok(Self { years, n, births, birth_rate, death_rate, population })
    }

    /// Rates with no births and no deaths; population 1 everywhere.
    pub fn stationary(years: TimeAxis, n: usize) -> Self {
        let m = years.len() * n;
        Self {
            years,
            n,
            births: vec![0.0; m],
            birth_rate: vec![0.0; m],
            death_rate: vec![0.0; m],
            population: vec![1.0; m],
        }
    }

    pub fn years(&self) -> TimeAxis {
        self.years
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slice<'a>(&self, v: &'a [f64], year: i32, what: &str) -> Result<&'a [f64]> {
        match self.years.index(year) {
            Some(t) => Ok(&v[t * self.n..(t + 1) * self.n]),
            None => Err(Error::Structural(alloc::format!(
                "{what} not available for {year} (rates cover {}..={})",
                self.years.start_year,
                self.years.end_year
            ))),
        }
    }

    pub fn births(&self, year: i32) -> Result<&[f64]> {
        self.slice(&self.births, year, "births")
    }

    pub fn birth_rate(&self, year: i32) -> Result<&[f64]> {
        self.slice(&self.birth_rate, year, "birth rate")
    }

    pub fn death_rate(&self, year: i32) -> Result<&[f64]> {
        self.slice(&self.death_rate, year, "death rate")
    }

    pub fn population(&self, year: i32) -> Result<&[f64]> {
        self.slice(&self.population, year, "population")
    }
}

/// Observed change of `S[birth][residence]` between two years.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StockDiffTarget {
    pub start_year: i32,
    pub end_year: i32,
    pub birth: usize,
    pub residence: usize,
    pub value: f64,
    pub weight: f64,
}

/// Observed total flow `F[origin][destination]` in `year`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowTarget {
    pub year: i32,
    pub origin: usize,
    pub destination: usize,
    pub value: f64,
    pub weight: f64,
    pub std_error: Option<f64>,
}

/// Observed net migration of `country` in `year`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetMigrationTarget {
    pub year: i32,
    pub country: usize,
    pub value: f64,
    pub weight: f64,
}

/// Train/test label per `(origin, destination)` corridor.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorridorSplit {
    n: usize,
    test: Vec<bool>,
}

impl CorridorSplit {
    pub fn all_train(n: usize) -> Self {
        Self { n, test: vec![false; n * n] }
    }

    pub fn from_test_mask(n: usize, test: Vec<bool>) -> Result<Self> {
        if test.len() != n * n {
            bail!(Structural, "corridor split needs {} labels", n * n);
        }
        Ok(Self { n, test })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_test(&self, origin: usize, destination: usize) -> bool {
        self.test[origin * self.n + destination]
    }

    pub fn test_corridors(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n * n).filter(move |&c| self.test[c]).map(move |c| (c / n, c % n))
    }

    pub fn train_corridors(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n * n)
            .filter(move |&c| c / n != c % n && !self.test[c])
            .map(move |c| (c / n, c % n))
    }
}

/// Weighted observations driving the loss.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TargetDataset {
    pub n: usize,
    pub stock_diffs: Vec<StockDiffTarget>,
    pub flows: Vec<FlowTarget>,
    pub net_migration: Vec<NetMigrationTarget>,
    pub corridor_split: CorridorSplit,
}

impl TargetDataset {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            stock_diffs: Vec::new(),
            flows: Vec::new(),
            net_migration: Vec::new(),
            corridor_split: CorridorSplit::all_train(n),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.stock_diffs.is_empty() && self.flows.is_empty() && self.net_migration.is_empty()
    }

    /// Check indices, years (stocks may reference `years.end_year + 1`) and weights.
    pub fn validate(&self, years: TimeAxis) -> Result<()> {
        let n = self.n;
        if self.corridor_split.n() != n {
            bail!(Structural, "corridor split size {} != {n}", self.corridor_split.n());
        }
        let check_w = |w: f64| -> Result<()> {
            if !(0.5..=2.0).contains(&w) {
                bail!(Domain, "target weight {w} outside [0.5, 2]");
            }
            Ok(())
        };
        for d in &self.stock_diffs {
            if d.birth >= n || d.residence >= n {
                bail!(Structural, "stock target index ({}, {}) out of range", d.birth, d.residence);
            }
            let ok = |y: i32| y >= years.start_year && y <= years.end_year + 1;
            if !ok(d.start_year) || !ok(d.end_year) || d.start_year >= d.end_year {
                bail!(Structural, "stock target years {}..{} not usable", d.start_year, d.end_year);
            }
            check_w(d.weight)?;
        }
        for f in &self.flows {
            if f.origin >= n || f.destination >= n || f.origin == f.destination {
                bail!(Structural, "flow target corridor ({}, {}) invalid", f.origin, f.destination);
            }
            if !years.contains(f.year) {
                bail!(Structural, "flow target year {} outside {:?}", f.year, years);
            }
            check_w(f.weight)?;
        }
        for m in &self.net_migration {
            if m.country >= n {
                bail!(Structural, "net-migration target country {} out of range", m.country);
            }
            if !years.contains(m.year) {
                bail!(Structural, "net-migration target year {} outside {:?}", m.year, years);
            }
            check_w(m.weight)?;
        }
        Ok(())
    }
}

/// `F[j][k] = sum_i T[i][j][k]`.
pub fn flows_by_origin(t: &FlowTensor) -> OriginDestinationMatrix {
    let n = t.n;
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        let slab = &t.values[i * n * n..(i + 1) * n * n];
        for (acc, v) in f.iter_mut().zip(slab) {
            *acc += v;
        }
    }
    for j in 0..n {
        f[j * n + j] = 0.0;
    }
    OriginDestinationMatrix::from_raw(t.year, n, f)
}

/// `mu[j] = sum_k (F[k][j] - F[j][k])`.
pub fn net_migration(f: &OriginDestinationMatrix) -> NetMigrationVector {
    let n = f.n;
    let values = (0..n)
        .map(|j| (0..n).map(|k| f.get(k, j) - f.get(j, k)).sum())
        .collect();
    NetMigrationVector { year: f.year, values }
}

/// Result of one stock-evolution step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub table: StockTable,
    /// Cells that went negative and were clamped to 0.
    pub clamped: usize,
}

/// Advance `s` through `year`:
/// `S'[i][j] = S[i][j] + [i == j] B[j] - gamma[j] S[i][j] + sum_k (T[i][k][j] - T[i][j][k])`,
/// clamped at zero. The result is dated `year + 1`.
pub fn stock_step(
    s: &StockTable,
    t: &FlowTensor,
    rates: &DemographicRates,
    year: i32,
) -> Result<StepOutcome> {
    let n = s.n;
    if t.n != n || rates.n() != n {
        bail!(Structural, "stock step sizes differ: stocks {n}, flows {}, rates {}", t.n, rates.n());
    }
    let births = rates.births(year)?;
    let gamma = rates.death_rate(year)?;
    let mut out = vec![0.0; n * n];
    let clamped = step_into(n, &s.values, &t.values, births, gamma, &mut out);
    Ok(StepOutcome { table: StockTable::from_raw(year + 1, n, out), clamped })
}

/// Slice-level step used by rollouts. Returns the number of clamped cells.
pub(crate) fn step_into(
    n: usize,
    s: &[f64],
    t: &[f64],
    births: &[f64],
    gamma: &[f64],
    out: &mut [f64],
) -> usize {
    let mut clamped = 0;
    for i in 0..n {
        for j in 0..n {
            let mut v = s[i * n + j] * (1.0 - gamma[j]);
            if i == j {
                v += births[j];
            }
            let mut inflow = 0.0;
            let mut outflow = 0.0;
            for k in 0..n {
                inflow += t[(i * n + k) * n + j];
                outflow += t[(i * n + j) * n + k];
            }
            v += inflow - outflow;
            if v < 0.0 {
                clamped += 1;
                v = 0.0;
            }
            out[i * n + j] = v;
        }
    }
    clamped
}
