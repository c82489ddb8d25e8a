//! Per-edge covariate vectors and the gap-filling mechanics used to assemble
//! the raw covariate tables.
//!
//! Every component of an edge vector `chi_ijk` depends on exactly one of the
//! birth country `i`, the origin `j`, the destination `k`, or one of the pairs
//! `(i, j)`, `(i, k)`, `(j, k)`. The canonical layout orders components by
//! that index group, which lets the estimator assemble first-layer activations
//! from per-country and per-pair pieces.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::domain::{CountryRegistry, StockTable, TimeAxis};
use crate::error::{bail, Result};
use crate::transform::{PowerTransform, Scaling};

/// Which indices of an edge `(i, j, k)` a component depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum IndexGroup {
    Birth,
    Origin,
    Destination,
    BirthOrigin,
    BirthDestination,
    OriginDestination,
}

impl IndexGroup {
    pub const ALL: [IndexGroup; 6] = [
        IndexGroup::Birth,
        IndexGroup::Origin,
        IndexGroup::Destination,
        IndexGroup::BirthOrigin,
        IndexGroup::BirthDestination,
        IndexGroup::OriginDestination,
    ];

    pub fn is_pair(self) -> bool {
        matches!(
            self,
            IndexGroup::BirthOrigin | IndexGroup::BirthDestination | IndexGroup::OriginDestination
        )
    }

    /// Row of this group's feature matrix used by edge `(i, j, k)`.
    #[inline]
    pub fn row(self, n: usize, i: usize, j: usize, k: usize) -> usize {
        match self {
            IndexGroup::Birth => i,
            IndexGroup::Origin => j,
            IndexGroup::Destination => k,
            IndexGroup::BirthOrigin => i * n + j,
            IndexGroup::BirthDestination => i * n + k,
            IndexGroup::OriginDestination => j * n + k,
        }
    }

    pub fn rows(self, n: usize) -> usize {
        if self.is_pair() {
            n * n
        } else {
            n
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            IndexGroup::Birth => "B",
            IndexGroup::Origin => "O",
            IndexGroup::Destination => "D",
            IndexGroup::BirthOrigin => "BO",
            IndexGroup::BirthDestination => "BD",
            IndexGroup::OriginDestination => "OD",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Where a component's value comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ComponentSource {
    /// Country table evaluated at the group's country.
    Country(String),
    /// Pair table evaluated at the group's pair, optionally with the pair reversed.
    Pair { table: String, reversed: bool },
    /// The (possibly predicted) migrant stock of the group's pair.
    MigrantStock,
    /// Kronecker delta of the group's pair.
    Kronecker,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Component {
    pub name: String,
    pub group: IndexGroup,
    pub source: ComponentSource,
    /// Binary components bypass transform and standardizer.
    pub binary: bool,
    /// Transform parameter pinned by the layout (None: configured or fitted).
    pub fixed_lambda: Option<f64>,
}

/// Raw table names understood by the canonical layout.
pub mod names {
    pub const POPULATION: &str = "population";
    pub const LIFE_EXPECTANCY: &str = "life_expectancy";
    pub const BIRTH_RATE: &str = "birth_rate";
    pub const DEATH_RATE: &str = "death_rate";
    pub const GDP_PER_CAPITA: &str = "gdp_per_capita";
    pub const GDP_GROWTH: &str = "gdp_growth";
    pub const EU_MEMBER: &str = "eu_member";
    pub const CONFLICT_DEATHS: &str = "conflict_deaths";
    pub const REFUGEE_STOCK: &str = "refugee_stock";
    pub const REFUGEE_CHANGE: &str = "refugee_change";
    pub const RELIGIOUS_SIMILARITY: &str = "religious_similarity";
    pub const LINGUISTIC_SIMILARITY: &str = "linguistic_similarity";
    pub const COLONY: &str = "colony";
    pub const TRADE: &str = "trade";
    pub const DISTANCE: &str = "distance";

    pub const COUNTRY_TABLES: [&str; 8] = [
        POPULATION, LIFE_EXPECTANCY, BIRTH_RATE, DEATH_RATE, GDP_PER_CAPITA, GDP_GROWTH,
        EU_MEMBER, CONFLICT_DEATHS,
    ];
    pub const PAIR_TABLES: [&str; 7] = [
        REFUGEE_STOCK, REFUGEE_CHANGE, RELIGIOUS_SIMILARITY, LINGUISTIC_SIMILARITY, COLONY,
        TRADE, DISTANCE,
    ];
    pub const BINARY_TABLES: [&str; 2] = [EU_MEMBER, COLONY];
}

/// Ordered list of edge-vector components.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateLayout {
    pub version: u32,
    components: Vec<Component>,
}

impl CovariateLayout {
    /// Build a layout; components are stably sorted by index group.
    pub fn new(version: u32, mut components: Vec<Component>) -> Result<Self> {
        components.sort_by_key(|c| c.group);
        let mut seen = BTreeMap::new();
        for c in &components {
            if seen.insert(c.name.clone(), ()).is_some() {
                bail!(Structural, "duplicate covariate component {}", c.name);
            }
            match (&c.source, c.group.is_pair()) {
                (ComponentSource::Country(_), true) => {
                    bail!(Structural, "{} reads a country table in a pair group", c.name)
                }
                (ComponentSource::Pair { .. } | ComponentSource::Kronecker, false) => {
                    bail!(Structural, "{} needs a pair group", c.name)
                }
                (ComponentSource::MigrantStock, _)
                    if !matches!(c.group, IndexGroup::BirthOrigin | IndexGroup::BirthDestination) =>
                {
                    bail!(Structural, "migrant stock components must be BO or BD")
                }
                _ => {}
            }
        }
        Ok(Self { version, components })
    }

    /// The full production layout (38 components).
    pub fn canonical() -> Self {
        use names::*;
        use IndexGroup::*;
        let mut c = Vec::new();
        let country = |c: &mut Vec<Component>, table: &str, g: IndexGroup, binary: bool| {
            c.push(Component {
                name: alloc::format!("{table}[{}]", g.tag()),
                group: g,
                source: ComponentSource::Country(table.to_string()),
                binary,
                fixed_lambda: None,
            })
        };
        for table in [POPULATION, LIFE_EXPECTANCY, GDP_PER_CAPITA, GDP_GROWTH] {
            country(&mut c, table, Birth, false);
        }
        country(&mut c, EU_MEMBER, Birth, true);
        for g in [Origin, Destination] {
            for table in [
                POPULATION, LIFE_EXPECTANCY, BIRTH_RATE, DEATH_RATE, GDP_PER_CAPITA, GDP_GROWTH,
                CONFLICT_DEATHS,
            ] {
                country(&mut c, table, g, false);
            }
            country(&mut c, EU_MEMBER, g, true);
        }
        let pair = |c: &mut Vec<Component>, table: &str, g: IndexGroup, binary: bool, lambda: Option<f64>, reversed: bool| {
            let suffix = if reversed { "DO" } else { g.tag() };
            c.push(Component {
                name: alloc::format!("{table}[{suffix}]"),
                group: g,
                source: ComponentSource::Pair { table: table.to_string(), reversed },
                binary,
                fixed_lambda: lambda,
            })
        };
        for g in [BirthOrigin, BirthDestination] {
            pair(&mut c, REFUGEE_STOCK, g, false, None, false);
            pair(&mut c, REFUGEE_CHANGE, g, false, None, false);
            c.push(Component {
                name: alloc::format!("migrant_stock[{}]", g.tag()),
                group: g,
                source: ComponentSource::MigrantStock,
                binary: false,
                fixed_lambda: None,
            });
            c.push(Component {
                name: alloc::format!("native[{}]", g.tag()),
                group: g,
                source: ComponentSource::Kronecker,
                binary: true,
                fixed_lambda: None,
            });
        }
        for g in [BirthDestination, OriginDestination] {
            pair(&mut c, RELIGIOUS_SIMILARITY, g, false, Some(1.0), false);
            pair(&mut c, LINGUISTIC_SIMILARITY, g, false, Some(1.0), false);
            pair(&mut c, COLONY, g, true, None, false);
        }
        pair(&mut c, TRADE, OriginDestination, false, None, false);
        pair(&mut c, TRADE, OriginDestination, false, None, true);
        pair(&mut c, DISTANCE, OriginDestination, false, None, false);
        Self::new(1, c).expect("canonical layout is consistent")
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.components.iter().position(|c| c.name == name)
    }

    /// Component index range of a group.
    pub fn group_range(&self, g: IndexGroup) -> Range<usize> {
        let start = self.components.iter().position(|c| c.group >= g).unwrap_or(self.len());
        let end = self.components.iter().position(|c| c.group > g).unwrap_or(self.len());
        start..end
    }

    /// FNV-1a hash over version, names, groups and flags; stable across runs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&self.version.to_le_bytes());
        for c in &self.components {
            eat(c.name.as_bytes());
            eat(&[c.group.index() as u8, c.binary as u8, 0xff]);
        }
        h
    }

    /// Names of the raw tables this layout reads.
    pub fn required_tables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.components {
            let name = match &c.source {
                ComponentSource::Country(t) => t,
                ComponentSource::Pair { table, .. } => table,
                _ => continue,
            };
            if !out.contains(name) {
                out.push(name.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TableArity {
    Country,
    Pair,
}

/// One raw covariate over years. Missing entries are NaN.
///
/// Country tables are stored `[year][country]`, pair tables `[year][a][b]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateTable {
    pub name: String,
    pub arity: TableArity,
    pub years: TimeAxis,
    pub n: usize,
    values: Vec<f64>,
}

impl CovariateTable {
    pub fn new(name: &str, arity: TableArity, years: TimeAxis, n: usize, values: Vec<f64>) -> Result<Self> {
        let per_year = match arity {
            TableArity::Country => n,
            TableArity::Pair => n * n,
        };
        if values.len() != per_year * years.len() {
            bail!(Structural, "table {name} needs {} values, got {}", per_year * years.len(), values.len());
        }
        if values.iter().any(|v| v.is_infinite()) {
            bail!(Domain, "table {name} contains infinite values");
        }
        Ok(Self { name: name.to_string(), arity, years, n, values })
    }

    /// All-missing table.
    pub fn missing(name: &str, arity: TableArity, years: TimeAxis, n: usize) -> Self {
        let per_year = match arity {
            TableArity::Country => n,
            TableArity::Pair => n * n,
        };
        Self { name: name.to_string(), arity, years, n, values: vec![f64::NAN; per_year * years.len()] }
    }

    fn per_year(&self) -> usize {
        match self.arity {
            TableArity::Country => self.n,
            TableArity::Pair => self.n * self.n,
        }
    }

    fn slot(&self, year: i32, key: usize) -> Option<usize> {
        self.years.index(year).map(|t| t * self.per_year() + key)
    }

    pub fn country(&self, year: i32, c: usize) -> Option<f64> {
        debug_assert_eq!(self.arity, TableArity::Country);
        self.slot(year, c).map(|s| self.values[s]).filter(|v| !v.is_nan())
    }

    pub fn pair(&self, year: i32, a: usize, b: usize) -> Option<f64> {
        debug_assert_eq!(self.arity, TableArity::Pair);
        self.slot(year, a * self.n + b).map(|s| self.values[s]).filter(|v| !v.is_nan())
    }

    pub fn set(&mut self, year: i32, key: usize, v: f64) -> Result<()> {
        match self.slot(year, key) {
            Some(s) if key < self.per_year() => {
                self.values[s] = v;
                Ok(())
            }
            _ => bail!(Structural, "table {}: no slot for year {year} key {key}", self.name),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Series of one country or pair key across all years (None where missing).
    pub fn series(&self, key: usize) -> Vec<Option<f64>> {
        let m = self.per_year();
        (0..self.years.len())
            .map(|t| Some(self.values[t * m + key]).filter(|v| !v.is_nan()))
            .collect()
    }

    pub fn set_series(&mut self, key: usize, series: &[f64]) -> Result<()> {
        let m = self.per_year();
        if series.len() != self.years.len() || key >= m {
            bail!(Structural, "series does not fit table {}", self.name);
        }
        for (t, v) in series.iter().enumerate() {
            self.values[t * m + key] = *v;
        }
        Ok(())
    }

    /// Replace every pair's series by its mean over observed years.
    pub fn time_averaged(&self) -> Self {
        let mut out = self.clone();
        for key in 0..self.per_year() {
            let s = self.series(key);
            let obs: Vec<f64> = s.iter().flatten().copied().collect();
            let v = if obs.is_empty() { f64::NAN } else { obs.iter().sum::<f64>() / obs.len() as f64 };
            let filled = vec![v; s.len()];
            out.set_series(key, &filled).expect("same shape");
        }
        out
    }
}

/// Raw covariate tables keyed by name.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovariateTables {
    pub tables: BTreeMap<String, CovariateTable>,
}

impl CovariateTables {
    pub fn insert(&mut self, table: CovariateTable) {
        self.tables.insert(table.name.clone(), table);
    }

    pub fn get(&self, name: &str) -> Option<&CovariateTable> {
        self.tables.get(name)
    }
}

/// How component scalings are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalingSpec {
    /// Fit standardizers on the panel window; `lambdas` pins transform
    /// parameters by component name, others are fitted by maximum likelihood.
    Fit { lambdas: BTreeMap<String, f64> },
    /// Reuse previously fitted scalings (one per component; None for binary).
    Frozen(Vec<Option<Scaling>>),
}

impl Default for ScalingSpec {
    fn default() -> Self {
        ScalingSpec::Fit { lambdas: BTreeMap::new() }
    }
}

/// Scaled per-group feature matrices for every year of a window. Migrant-stock
/// columns are left at zero here and filled from the current stock table.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePanel {
    layout: CovariateLayout,
    n: usize,
    years: TimeAxis,
    scalings: Vec<Option<Scaling>>,
    /// `blocks[group][year]`: row-major `rows x width` features.
    blocks: Vec<Vec<Vec<f64>>>,
}

/// The covariate vector of one edge in one year.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCovariateVector {
    pub year: i32,
    pub edge: (usize, usize, usize),
    pub values: Vec<f64>,
}

impl CovariatePanel {
    /// Assemble and scale the panel. `stock_reference` holds stock values whose
    /// pooled distribution fixes the migrant-stock scaling.
    pub fn build(
        layout: &CovariateLayout,
        tables: &CovariateTables,
        n: usize,
        years: TimeAxis,
        spec: &ScalingSpec,
        stock_reference: &[f64],
    ) -> Result<Self> {
        let comps = layout.components();
        // raw[c][year] = rows values
        let mut raw: Vec<Vec<Vec<f64>>> = Vec::with_capacity(comps.len());
        for c in comps {
            let rows = c.group.rows(n);
            let mut per_year = Vec::with_capacity(years.len());
            for year in years.years() {
                let mut v = vec![0.0; rows];
                match &c.source {
                    ComponentSource::Country(name) => {
                        let t = lookup(tables, name, TableArity::Country, n)?;
                        for (r, slot) in v.iter_mut().enumerate() {
                            *slot = t.country(year, r).ok_or_else(|| missing(&c.name, year, r, n, false))?;
                        }
                    }
                    ComponentSource::Pair { table, reversed } => {
                        let t = lookup(tables, table, TableArity::Pair, n)?;
                        for a in 0..n {
                            for b in 0..n {
                                if c.group == IndexGroup::OriginDestination && a == b {
                                    continue;
                                }
                                let (x, y) = if *reversed { (b, a) } else { (a, b) };
                                v[a * n + b] = t
                                    .pair(year, x, y)
                                    .ok_or_else(|| missing(&c.name, year, x * n + y, n, true))?;
                            }
                        }
                    }
                    ComponentSource::Kronecker => {
                        for a in 0..n {
                            v[a * n + a] = 1.0;
                        }
                    }
                    ComponentSource::MigrantStock => {}
                }
                if c.binary && v.iter().any(|x| *x != 0.0 && *x != 1.0) {
                    bail!(Domain, "binary covariate {} has values other than 0/1 in {year}", c.name);
                }
                per_year.push(v);
            }
            raw.push(per_year);
        }

        let scalings: Vec<Option<Scaling>> = match spec {
            ScalingSpec::Frozen(s) => {
                if s.len() != comps.len() {
                    bail!(Structural, "{} frozen scalings for {} components", s.len(), comps.len());
                }
                s.clone()
            }
            ScalingSpec::Fit { lambdas } => {
                let mut out = Vec::with_capacity(comps.len());
                for (ci, c) in comps.iter().enumerate() {
                    if c.binary || c.source == ComponentSource::Kronecker {
                        out.push(None);
                        continue;
                    }
                    let pooled: Vec<f64> = if c.source == ComponentSource::MigrantStock {
                        stock_reference.to_vec()
                    } else {
                        pooled_values(c.group, n, &raw[ci])
                    };
                    let lambda = c.fixed_lambda.or_else(|| lambdas.get(&c.name).copied());
                    let scaling = match lambda {
                        Some(l) => Scaling::fit_with(PowerTransform::new(l)?, &pooled),
                        None => Scaling::fit(&pooled),
                    }
                    .map_err(|e| crate::Error::Estimation(alloc::format!("covariate {}: {e}", c.name)))?;
                    out.push(Some(scaling));
                }
                out
            }
        };

        let mut blocks = Vec::with_capacity(6);
        for g in IndexGroup::ALL {
            let range = layout.group_range(g);
            let width = range.len();
            let rows = g.rows(n);
            let mut per_year = Vec::with_capacity(years.len());
            for t in 0..years.len() {
                let mut m = vec![0.0; rows * width];
                for (col, ci) in range.clone().enumerate() {
                    if comps[ci].source == ComponentSource::MigrantStock {
                        continue;
                    }
                    let s = scalings[ci];
                    for r in 0..rows {
                        let x = raw[ci][t][r];
                        m[r * width + col] = match s {
                            Some(s) => s.apply(x),
                            None => x,
                        };
                    }
                }
                per_year.push(m);
            }
            blocks.push(per_year);
        }
        Ok(Self { layout: layout.clone(), n, years, scalings, blocks })
    }

    pub fn layout(&self) -> &CovariateLayout {
        &self.layout
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn years(&self) -> TimeAxis {
        self.years
    }

    pub fn scalings(&self) -> &[Option<Scaling>] {
        &self.scalings
    }

    /// Scaled features of a group for `year` (`rows x width`; stock columns 0).
    pub fn block(&self, g: IndexGroup, year: i32) -> Result<&[f64]> {
        match self.years.index(year) {
            Some(t) => Ok(&self.blocks[g.index()][t]),
            None => bail!(Ingestion, "covariate panel has no data for {year}"),
        }
    }

    /// Column of the migrant-stock component inside a pair group, if present.
    pub fn stock_column(&self, g: IndexGroup) -> Option<usize> {
        let range = self.layout.group_range(g);
        range
            .clone()
            .position(|ci| self.layout.components()[ci].source == ComponentSource::MigrantStock)
    }

    /// Scaling applied to a migrant-stock component of group `g`.
    pub fn stock_scaling(&self, g: IndexGroup) -> Option<Scaling> {
        let col = self.stock_column(g)?;
        self.scalings[self.layout.group_range(g).start + col]
    }

    /// Full covariate vector of edge `(i, j, k)` with stocks taken from `stocks`.
    pub fn edge_vector(&self, year: i32, i: usize, j: usize, k: usize, stocks: &StockTable) -> Result<Vec<f64>> {
        let n = self.n;
        if i >= n || j >= n || k >= n || j == k {
            bail!(Structural, "edge ({i}, {j}, {k}) invalid for {n} countries");
        }
        if stocks.n() != n {
            bail!(Structural, "stock table size {} != {n}", stocks.n());
        }
        let mut out = Vec::with_capacity(self.layout.len());
        for g in IndexGroup::ALL {
            let width = self.layout.group_range(g).len();
            let row = g.row(n, i, j, k);
            let b = self.block(g, year)?;
            let start = out.len();
            out.extend_from_slice(&b[row * width..(row + 1) * width]);
            if let (Some(col), Some(s)) = (self.stock_column(g), self.stock_scaling(g)) {
                let (a, c) = if g == IndexGroup::BirthOrigin { (i, j) } else { (i, k) };
                out[start + col] = s.apply(stocks.get(a, c));
            }
        }
        Ok(out)
    }

    /// Vectors for every edge `(i, j, k)`, `j != k`, in lexicographic order.
    pub fn build_edge_covariates(&self, year: i32, stocks: &StockTable) -> Result<Vec<EdgeCovariateVector>> {
        let n = self.n;
        let mut out = Vec::with_capacity(n * n * n.saturating_sub(1));
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if j != k {
                        out.push(EdgeCovariateVector {
                            year,
                            edge: (i, j, k),
                            values: self.edge_vector(year, i, j, k, stocks)?,
                        });
                    }
                }
            }
        }
        Ok(out)
    }

    /// Raw value of a continuous component recovered from its scaled value.
    pub fn unscale(&self, component: usize, value: f64) -> Result<f64> {
        match self.scalings[component] {
            Some(s) => s.invert(value),
            None => Ok(value),
        }
    }
}

fn lookup<'a>(tables: &'a CovariateTables, name: &str, arity: TableArity, n: usize) -> Result<&'a CovariateTable> {
    match tables.get(name) {
        Some(t) if t.arity == arity && t.n == n => Ok(t),
        Some(t) => bail!(Ingestion, "table {name} has arity {:?} over {} countries, expected {arity:?} over {n}", t.arity, t.n),
        None => bail!(Ingestion, "covariate table {name} is missing"),
    }
}

fn missing(component: &str, year: i32, key: usize, n: usize, pair: bool) -> crate::Error {
    if pair {
        crate::Error::Ingestion(alloc::format!(
            "covariate {component} missing for year {year}, pair ({}, {})",
            key / n,
            key % n
        ))
    } else {
        crate::Error::Ingestion(alloc::format!("covariate {component} missing for year {year}, country {key}"))
    }
}

fn pooled_values(g: IndexGroup, n: usize, per_year: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for v in per_year {
        for (r, x) in v.iter().enumerate() {
            if g == IndexGroup::OriginDestination && r / n == r % n {
                continue;
            }
            out.push(*x);
        }
    }
    out
}

/// `100 (GDP(t) / GDP(t-1) - 1)`, aligned with the input (first entry None,
/// None wherever either neighbour is missing).
pub fn gdp_growth(series: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let mut out = vec![None; series.len()];
    for t in 1..series.len() {
        if let (Some(prev), Some(cur)) = (series[t - 1], series[t]) {
            if prev <= 0.0 || cur <= 0.0 {
                bail!(Domain, "GDP values must be positive for growth (t = {t}: {prev} -> {cur})");
            }
            out[t] = Some(100.0 * (cur / prev - 1.0));
        }
    }
    Ok(out)
}

/// Real value from a nominal value and a deflator.
pub fn deflate(nominal: f64, deflator: f64) -> Result<f64> {
    if !(deflator > 0.0) {
        bail!(Domain, "deflator must be positive, got {deflator}");
    }
    Ok(nominal / deflator)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Fill the missing entries on one side of `anchor` by compounding growth
/// rates (%): forward `v(t+1) = v(t)(1 + g(t+1)/100)`, backward
/// `v(t-1) = v(t) / (1 + g(t)/100)`. Observed entries are kept and the
/// extrapolation continues from them. `growth[t]` is the growth into year `t`.
pub fn extrapolate_by_growth(
    series: &[Option<f64>],
    anchor: usize,
    growth: &[Option<f64>],
    direction: Direction,
) -> Result<Vec<Option<f64>>> {
    if anchor >= series.len() || growth.len() != series.len() {
        bail!(Structural, "anchor or growth series does not fit the series");
    }
    let Some(mut v) = series[anchor] else {
        bail!(Structural, "anchor entry {anchor} is missing");
    };
    let mut out = series.to_vec();
    let factor = |t: usize| -> Result<f64> {
        match growth[t] {
            Some(g) if g <= -100.0 => bail!(Domain, "growth of {g}% at {t} cannot be compounded"),
            Some(g) => Ok(1.0 + g / 100.0),
            None => bail!(Gap, "growth rate missing at {t}"),
        }
    };
    match direction {
        Direction::Forward => {
            for t in anchor + 1..series.len() {
                v = match series[t] {
                    Some(obs) => obs,
                    None => v * factor(t)?,
                };
                out[t] = Some(v);
            }
        }
        Direction::Backward => {
            for t in (0..anchor).rev() {
                v = match series[t] {
                    Some(obs) => obs,
                    None => v / factor(t + 1)?,
                };
                out[t] = Some(v);
            }
        }
    }
    Ok(out)
}

/// Trade series gap filling: values before the first observation are
/// extrapolated back with the mean of the available donor growth rates (flat
/// where neither donor has a rate), later gaps carry the last known value, and
/// an all-missing series becomes zero.
pub fn backfill_trade(
    primary: &[Option<f64>],
    donor_growth_a: &[Option<f64>],
    donor_growth_b: &[Option<f64>],
) -> Vec<f64> {
    let len = primary.len();
    let Some(first) = primary.iter().position(|v| v.is_some()) else {
        return vec![0.0; len];
    };
    let mut out = vec![0.0; len];
    let mut v = primary[first].expect("first observed");
    out[first] = v;
    for t in (0..first).rev() {
        let a = donor_growth_a.get(t + 1).copied().flatten();
        let b = donor_growth_b.get(t + 1).copied().flatten();
        let g = match (a, b) {
            (Some(a), Some(b)) => Some(0.5 * (a + b)),
            (Some(x), None) | (None, Some(x)) => Some(x),
            (None, None) => None,
        };
        if let Some(g) = g.filter(|g| *g > -100.0) {
            v /= 1.0 + g / 100.0;
        }
        out[t] = v;
    }
    let mut last = out[first];
    for t in first + 1..len {
        if let Some(x) = primary[t] {
            last = x;
        }
        out[t] = last;
    }
    out
}

/// Dot product of adherence shares, skipping the "other" category.
pub fn religious_similarity(a: &[f64], b: &[f64], other: Option<usize>) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(r, _)| Some(*r) != other)
        .map(|(_, (x, y))| x * y)
        .sum()
}

/// Registry-aware description of the canonical vector, for documentation and
/// exports.
pub fn describe_layout(layout: &CovariateLayout, registry: Option<&CountryRegistry>) -> Vec<String> {
    let _ = registry;
    layout
        .components()
        .iter()
        .enumerate()
        .map(|(i, c)| alloc::format!("{i:02} {} ({}{})", c.name, c.group.tag(), if c.binary { ", binary" } else { "" }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_tables(n: usize, years: TimeAxis) -> CovariateTables {
        let mut tables = CovariateTables::default();
        let y = years.len();
        for (t, name) in names::COUNTRY_TABLES.iter().enumerate() {
            let binary = names::BINARY_TABLES.contains(name);
            let vals: Vec<f64> = (0..y * n)
                .map(|s| if binary { ((s + t) % 2) as f64 } else { 1.0 + ((s * 7 + t * 3) % 11) as f64 * (t + 1) as f64 })
                .collect();
            tables.insert(CovariateTable::new(name, TableArity::Country, years, n, vals).unwrap());
        }
        for (t, name) in names::PAIR_TABLES.iter().enumerate() {
            let binary = names::BINARY_TABLES.contains(name);
            let vals: Vec<f64> = (0..y * n * n)
                .map(|s| if binary { ((s / 3 + t) % 2) as f64 } else { 0.5 + ((s * 5 + t) % 13) as f64 })
                .collect();
            tables.insert(CovariateTable::new(name, TableArity::Pair, years, n, vals).unwrap());
        }
        tables
    }

    #[test]
    fn canonical_layout_shape() {
        let l = CovariateLayout::canonical();
        assert_eq!(l.len(), 38);
        assert_eq!(l.group_range(IndexGroup::Birth), 0..5);
        assert_eq!(l.group_range(IndexGroup::Origin).len(), 8);
        assert_eq!(l.group_range(IndexGroup::OriginDestination).end, 38);
        assert_eq!(l.fingerprint(), CovariateLayout::canonical().fingerprint());
        assert_eq!(l.required_tables().len(), 15);
    }

    #[test]
    fn kronecker_and_destination_components() {
        let n = 5;
        let years = TimeAxis::new(2000, 2001).unwrap();
        let tables = small_tables(n, years);
        let layout = CovariateLayout::canonical();
        let stocks = StockTable::from_fn(2000, n, |i, j| 100.0 + (i * n + j) as f64 * 10.0).unwrap();
        let panel = CovariatePanel::build(&layout, &tables, n, years, &ScalingSpec::default(), stocks.values()).unwrap();
        let native_o = layout.index_of("native[BO]").unwrap();
        let native_d = layout.index_of("native[BD]").unwrap();
        let v = panel.edge_vector(2000, 1, 1, 2, &stocks).unwrap();
        assert_eq!((v[native_o], v[native_d]), (1.0, 0.0));
        let v = panel.edge_vector(2000, 1, 0, 2, &stocks).unwrap();
        assert_eq!((v[native_o], v[native_d]), (0.0, 0.0));

        // edges differing only in destination differ only in D, BD and OD components
        let a = panel.edge_vector(2001, 0, 1, 2, &stocks).unwrap();
        let b = panel.edge_vector(2001, 0, 1, 3, &stocks).unwrap();
        for g in IndexGroup::ALL {
            let r = layout.group_range(g);
            let same = a[r.clone()] == b[r.clone()];
            let depends_on_k = matches!(g, IndexGroup::Destination | IndexGroup::BirthDestination | IndexGroup::OriginDestination);
            if !depends_on_k {
                assert!(same, "{g:?} should not depend on destination");
            }
        }
        assert_ne!(a, b);
        assert_eq!(a.len(), 38);
        // binary components pass through untouched
        for (c, comp) in layout.components().iter().enumerate() {
            if comp.binary {
                assert!(a[c] == 0.0 || a[c] == 1.0);
            }
        }
    }

    #[test]
    fn zero_raw_values_map_to_minus_mean_over_std() {
        let n = 5;
        let years = TimeAxis::new(2000, 2001).unwrap();
        let mut tables = small_tables(n, years);
        let mut t = tables.get(names::POPULATION).unwrap().clone();
        t.set(2000, 0, 0.0).unwrap();
        tables.insert(t);
        let layout = CovariateLayout::canonical();
        let stocks = StockTable::from_fn(2000, n, |i, j| 50.0 + (i + 2 * j) as f64).unwrap();
        let mut lambdas = BTreeMap::new();
        lambdas.insert("population[B]".into(), 0.5);
        let panel = CovariatePanel::build(&layout, &tables, n, years, &ScalingSpec::Fit { lambdas }, stocks.values()).unwrap();
        let c = layout.index_of("population[B]").unwrap();
        let s = panel.scalings()[c].unwrap();
        let v = panel.edge_vector(2000, 0, 1, 2, &stocks).unwrap();
        assert!((v[c] - (-s.standardizer.mean / s.standardizer.std)).abs() < 1e-12);
    }

    #[test]
    fn missing_table_or_year_is_ingestion_error() {
        let n = 3;
        let years = TimeAxis::new(2000, 2001).unwrap();
        let mut tables = small_tables(n, years);
        let mut t = tables.get(names::TRADE).unwrap().clone();
        t.set(2001, 1 * n + 2, f64::NAN).unwrap();
        tables.insert(t);
        let err = CovariatePanel::build(&CovariateLayout::canonical(), &tables, n, years, &ScalingSpec::default(), &[1.0, 2.0, 3.0, 5.0])
            .unwrap_err();
        let msg = alloc::format!("{err}");
        assert!(msg.contains("trade") && msg.contains("2001"), "{msg}");
        tables.tables.remove(names::DISTANCE);
        assert!(matches!(
            CovariatePanel::build(&CovariateLayout::canonical(), &tables, n, years, &ScalingSpec::default(), &[1.0, 2.0]),
            Err(crate::Error::Ingestion(_))
        ));
    }

    #[test]
    fn gdp_growth_cases() {
        let g = gdp_growth(&[Some(100.0), Some(110.0), Some(100.0)]).unwrap();
        assert_eq!(g[0], None);
        assert!((g[1].unwrap() - 10.0).abs() < 1e-12);
        assert!((g[2].unwrap() + 9.090909090909092).abs() < 1e-9);
        let c = gdp_growth(&[Some(5.0); 4]).unwrap();
        assert!(c[1..].iter().all(|x| *x == Some(0.0)));
        assert!(gdp_growth(&[Some(0.0), Some(1.0)]).is_err());
    }

    #[test]
    fn deflate_cases() {
        assert!((deflate(110.0, 1.1).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(deflate(42.0, 1.0).unwrap(), 42.0);
        assert!(deflate(1.0, 0.0).is_err());
        let real = deflate(123.0, 1.37).unwrap();
        assert!((real * 1.37 - 123.0).abs() < 1e-12);
    }

    #[test]
    fn extrapolation_cases() {
        let s = [None, None, Some(100.0), None];
        let zero = [None, Some(0.0), Some(0.0), Some(0.0)];
        let f = extrapolate_by_growth(&s, 2, &zero, Direction::Forward).unwrap();
        assert_eq!(f[3], Some(100.0));
        let g10 = [None, Some(10.0), Some(10.0), Some(10.0)];
        let b = extrapolate_by_growth(&s, 2, &g10, Direction::Backward).unwrap();
        assert!((b[1].unwrap() - 90.909_090_909_090_91).abs() < 1e-9);
        let f = extrapolate_by_growth(&b, 2, &g10, Direction::Forward).unwrap();
        let back = extrapolate_by_growth(&[None, None, None, f[3]], 3, &g10, Direction::Backward).unwrap();
        assert!((back[2].unwrap() - 100.0).abs() < 1e-12);
        let bad = [None, Some(-100.0), Some(0.0), Some(0.0)];
        assert!(matches!(
            extrapolate_by_growth(&s, 2, &bad, Direction::Backward),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn trade_backfill_cases() {
        let full = [Some(1.0), Some(2.0), Some(3.0)];
        assert_eq!(backfill_trade(&full, &[None; 3], &[None; 3]), vec![1.0, 2.0, 3.0]);
        assert_eq!(backfill_trade(&[None; 3], &[None; 3], &[None; 3]), vec![0.0; 3]);
        let p = [None, Some(115.0), None];
        let a = [None, Some(10.0), None];
        let b = [None, Some(20.0), None];
        let out = backfill_trade(&p, &a, &b);
        assert!((out[0] - 100.0).abs() < 1e-12);
        assert_eq!(out[2], 115.0);
    }

    #[test]
    fn religious_similarity_excludes_other() {
        let a = [0.5, 0.3, 0.2];
        let b = [0.1, 0.6, 0.3];
        assert!((religious_similarity(&a, &b, Some(2)) - (0.05 + 0.18)).abs() < 1e-15);
        assert!((religious_similarity(&a, &b, None) - 0.29).abs() < 1e-15);
    }
}
