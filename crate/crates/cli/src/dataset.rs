//! Dataset directories: CSV tables for demography, stocks, targets,
//! covariates and (for synthetic worlds) the true flows.
//!
//! Layout, all files UTF-8 CSV with a header row:
//!
//! | file | columns |
//! |------|---------|
//! | `rates.csv` | year, country, births, birth_rate, death_rate, population |
//! | `stocks.csv` | year, birth, residence, value, observed, weight |
//! | `initial_stocks.csv` | year, birth, residence, value |
//! | `targets_stock_diffs.csv` | start_year, end_year, birth, residence, value, weight |
//! | `targets_flows.csv` | year, origin, destination, value, weight, std_error |
//! | `targets_net.csv` | year, country, value, weight |
//! | `split.csv` | origin, destination, test |
//! | `covariates/<name>.csv` | year, country, value *or* year, origin, destination, value |
//! | `truth/flows.csv` | year, birth, origin, destination, value |
//!
//! Country codes are opaque strings. The registry is the sorted union of the
//! codes in `rates.csv`, `stocks.csv` and `initial_stocks.csv`; other files
//! may only use those codes. Years span the rows of `rates.csv`. Empty fields
//! mean "missing" where a column is optional (`std_error`, covariate values).
//! Only `rates.csv`, `stocks.csv` and `initial_stocks.csv` are required.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::Result;
use flowinfer_core::covariates::{names, CovariateLayout, CovariatePanel, CovariateTable, CovariateTables, ScalingSpec, TableArity};
use flowinfer_core::domain::{
    CorridorSplit, CountryRegistry, DemographicRates, FlowTarget, FlowTensor, NetMigrationTarget, StockDiffTarget, StockSeries,
    StockTable, TargetDataset, TimeAxis,
};
use flowinfer_core::synthetic::{Observations, SyntheticWorld};
use flowinfer_core::training::Problem;

use crate::error::InputError;

pub const RATES: &str = "rates.csv";
pub const STOCKS: &str = "stocks.csv";
pub const INITIAL: &str = "initial_stocks.csv";
pub const STOCK_DIFFS: &str = "targets_stock_diffs.csv";
pub const FLOWS: &str = "targets_flows.csv";
pub const NET: &str = "targets_net.csv";
pub const SPLIT: &str = "split.csv";
pub const COVARIATES: &str = "covariates";
pub const TRUTH_FLOWS: &str = "truth/flows.csv";

/// Validated in-memory contents of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub registry: CountryRegistry,
    pub years: TimeAxis,
    pub rates: DemographicRates,
    /// Observed stock tables with masks and weights.
    pub stocks: StockSeries,
    /// Start-year table the estimator rolls out from.
    pub initial_stocks: StockTable,
    pub targets: TargetDataset,
    pub covariates: CovariateTables,
    /// True yearly flow tensors, when known.
    pub truth: Option<Vec<FlowTensor>>,
}

/// Shortest decimal that parses back to the same `f64`; NaN as empty.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn input(msg: String) -> anyhow::Error {
    InputError(msg).into()
}

struct Row {
    path: PathBuf,
    line: u64,
    record: csv::StringRecord,
}

impl Row {
    fn at(&self) -> String {
        format!("{}:{}", self.path.display(), self.line)
    }

    fn raw(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("").trim()
    }

    fn parse<T: FromStr>(&self, col: usize, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let s = self.raw(col);
        s.parse().map_err(|e| input(format!("{}: column {name}: cannot parse {s:?}: {e}", self.at())))
    }

    fn float(&self, col: usize, name: &str) -> Result<f64> {
        let v: f64 = self.parse(col, name)?;
        if !v.is_finite() {
            return Err(input(format!("{}: column {name}: value must be finite", self.at())));
        }
        Ok(v)
    }

    fn opt_float(&self, col: usize, name: &str) -> Result<Option<f64>> {
        if self.raw(col).is_empty() {
            Ok(None)
        } else {
            self.float(col, name).map(Some)
        }
    }

    fn flag(&self, col: usize, name: &str) -> Result<bool> {
        match self.raw(col) {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            s => Err(input(format!("{}: column {name}: expected 0 or 1, got {s:?}", self.at()))),
        }
    }

    fn country(&self, col: usize, registry: &CountryRegistry) -> Result<usize> {
        let code = self.raw(col);
        registry.index_of(code).ok_or_else(|| input(format!("{}: unknown country code {code:?}", self.at())))
    }
}

/// Rows of a CSV file whose header must equal `header`. `Ok(None)` when the
/// file is absent or empty.
fn read_rows(path: &Path, header: &[&str]) -> Result<Option<Vec<Row>>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if found.iter().map(String::as_str).ne(header.iter().copied()) {
        return Err(input(format!("{}: expected columns {header:?}, found {found:?}", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let record = rec.map_err(|e| input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(Row { path: path.to_path_buf(), line, record });
    }
    Ok(Some(rows))
}

fn required(path: &Path, header: &[&str]) -> Result<Vec<Row>> {
    read_rows(path, header)?.ok_or_else(|| input(format!("{}: required file is missing or empty", path.display())))
}

/// Rejects a second row with the same key, naming both lines.
struct Unique<K: Ord> {
    seen: BTreeMap<K, u64>,
}

impl<K: Ord + std::fmt::Debug> Unique<K> {
    fn new() -> Self {
        Self { seen: BTreeMap::new() }
    }

    fn check(&mut self, key: K, row: &Row) -> Result<()> {
        if let Some(first) = self.seen.get(&key) {
            return Err(input(format!("{}: duplicate row for {key:?} (first on line {first})", row.at())));
        }
        self.seen.insert(key, row.line);
        Ok(())
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

const RATES_COLS: [&str; 6] = ["year", "country", "births", "birth_rate", "death_rate", "population"];
const STOCKS_COLS: [&str; 6] = ["year", "birth", "residence", "value", "observed", "weight"];
const INITIAL_COLS: [&str; 4] = ["year", "birth", "residence", "value"];
const DIFF_COLS: [&str; 6] = ["start_year", "end_year", "birth", "residence", "value", "weight"];
const FLOW_COLS: [&str; 6] = ["year", "origin", "destination", "value", "weight", "std_error"];
const NET_COLS: [&str; 4] = ["year", "country", "value", "weight"];
const SPLIT_COLS: [&str; 3] = ["origin", "destination", "test"];
const COUNTRY_COV_COLS: [&str; 3] = ["year", "country", "value"];
const PAIR_COV_COLS: [&str; 4] = ["year", "origin", "destination", "value"];
pub const TRUTH_COLS: [&str; 5] = ["year", "birth", "origin", "destination", "value"];

impl Dataset {
    /// The observations of a synthetic world, with its true flows.
    pub fn from_world(world: &SyntheticWorld, obs: &Observations) -> Self {
        Self {
            registry: world.registry.clone(),
            years: world.years,
            rates: world.rates.clone(),
            stocks: obs.stocks.clone(),
            initial_stocks: obs.initial_stocks.clone(),
            targets: obs.targets.clone(),
            covariates: world.tables.clone(),
            truth: Some(world.flows.clone()),
        }
    }

    pub fn n(&self) -> usize {
        self.registry.len()
    }

    /// Panel over the canonical layout, scaled against the initial stocks.
    pub fn panel(&self) -> Result<CovariatePanel> {
        Ok(CovariatePanel::build(
            &CovariateLayout::canonical(),
            &self.covariates,
            self.n(),
            self.years,
            &ScalingSpec::default(),
            self.initial_stocks.values(),
        )?)
    }

    pub fn problem<'a>(&'a self, panel: &'a CovariatePanel) -> Problem<'a> {
        Problem { panel, rates: &self.rates, initial_stocks: &self.initial_stocks, years: self.years }
    }

    /// Stock tables of the series in year order.
    pub fn stock_tables(&self) -> Vec<StockTable> {
        self.stocks.years().filter_map(|y| self.stocks.table(y).cloned()).collect()
    }

    /// Every file of the dataset as (relative path, bytes).
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let n = self.n();
        let code = |i: usize| self.registry.code(i).to_string();
        let mut out = Vec::new();

        let mut rows = Vec::new();
        for year in self.years.years() {
            let (b, br, dr, p) = (
                self.rates.births(year).expect("year in axis"),
                self.rates.birth_rate(year).expect("year in axis"),
                self.rates.death_rate(year).expect("year in axis"),
                self.rates.population(year).expect("year in axis"),
            );
            for c in 0..n {
                rows.push(vec![year.to_string(), code(c), num(b[c]), num(br[c]), num(dr[c]), num(p[c])]);
            }
        }
        out.push((RATES.to_string(), csv_bytes(&RATES_COLS, rows)));

        let mut rows = Vec::new();
        for year in self.stocks.years() {
            let t = self.stocks.table(year).expect("listed year");
            let mask = self.stocks.mask(year).expect("listed year");
            let w = self.stocks.weights(year).expect("listed year");
            for c in 0..n * n {
                rows.push(vec![
                    year.to_string(),
                    code(c / n),
                    code(c % n),
                    num(t.values()[c]),
                    if mask[c] { "1" } else { "0" }.to_string(),
                    num(w[c]),
                ]);
            }
        }
        out.push((STOCKS.to_string(), csv_bytes(&STOCKS_COLS, rows)));

        let t = &self.initial_stocks;
        let rows = (0..n * n).map(|c| vec![t.year().to_string(), code(c / n), code(c % n), num(t.values()[c])]);
        out.push((INITIAL.to_string(), csv_bytes(&INITIAL_COLS, rows)));

        let rows = self.targets.stock_diffs.iter().map(|d| {
            vec![d.start_year.to_string(), d.end_year.to_string(), code(d.birth), code(d.residence), num(d.value), num(d.weight)]
        });
        out.push((STOCK_DIFFS.to_string(), csv_bytes(&DIFF_COLS, rows)));

        let rows = self.targets.flows.iter().map(|f| {
            vec![
                f.year.to_string(),
                code(f.origin),
                code(f.destination),
                num(f.value),
                num(f.weight),
                f.std_error.map(num).unwrap_or_default(),
            ]
        });
        out.push((FLOWS.to_string(), csv_bytes(&FLOW_COLS, rows)));

        let rows = self.targets.net_migration.iter().map(|m| vec![m.year.to_string(), code(m.country), num(m.value), num(m.weight)]);
        out.push((NET.to_string(), csv_bytes(&NET_COLS, rows)));

        let split = &self.targets.corridor_split;
        let rows = (0..n * n)
            .filter(|c| c / n != c % n)
            .map(|c| vec![code(c / n), code(c % n), if split.is_test(c / n, c % n) { "1" } else { "0" }.to_string()]);
        out.push((SPLIT.to_string(), csv_bytes(&SPLIT_COLS, rows)));

        for (name, table) in &self.covariates.tables {
            let mut rows = Vec::new();
            for year in table.years.years() {
                match table.arity {
                    TableArity::Country => {
                        for c in 0..n {
                            rows.push(vec![year.to_string(), code(c), table.country(year, c).map(num).unwrap_or_default()]);
                        }
                    }
                    TableArity::Pair => {
                        for a in 0..n {
                            for b in 0..n {
                                rows.push(vec![year.to_string(), code(a), code(b), table.pair(year, a, b).map(num).unwrap_or_default()]);
                            }
                        }
                    }
                }
            }
            let header: &[&str] = match table.arity {
                TableArity::Country => &COUNTRY_COV_COLS,
                TableArity::Pair => &PAIR_COV_COLS,
            };
            out.push((format!("{COVARIATES}/{name}.csv"), csv_bytes(header, rows)));
        }

        if let Some(truth) = &self.truth {
            out.push((TRUTH_FLOWS.to_string(), truth_bytes(&self.registry, truth)));
        }
        out
    }

    /// Load and validate a dataset directory.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(input(format!("{}: dataset directory not found", dir.display())));
        }
        let rate_rows = required(&dir.join(RATES), &RATES_COLS)?;
        let stock_rows = required(&dir.join(STOCKS), &STOCKS_COLS)?;
        let initial_rows = required(&dir.join(INITIAL), &INITIAL_COLS)?;

        let mut codes = BTreeSet::new();
        codes.extend(rate_rows.iter().map(|r| r.raw(1).to_string()));
        codes.extend(stock_rows.iter().flat_map(|r| [r.raw(1).to_string(), r.raw(2).to_string()]));
        codes.extend(initial_rows.iter().flat_map(|r| [r.raw(1).to_string(), r.raw(2).to_string()]));
        if codes.iter().any(String::is_empty) {
            return Err(input(format!("{}: empty country code", dir.display())));
        }
        let codes: Vec<String> = codes.into_iter().collect();
        let registry = CountryRegistry::from_codes(&codes).map_err(|e| input(format!("{}: {e}", dir.display())))?;
        let n = registry.len();

        let mut years_seen = BTreeSet::new();
        for r in &rate_rows {
            years_seen.insert(r.parse::<i32>(0, "year")?);
        }
        let (first, last) = (*years_seen.first().expect("rows present"), *years_seen.last().expect("rows present"));
        let years = TimeAxis::new(first, last).map_err(|e| input(format!("{}: {e}", dir.display())))?;
        let m = years.len() * n;
        let mut cols = [vec![f64::NAN; m], vec![f64::NAN; m], vec![f64::NAN; m], vec![f64::NAN; m]];
        let mut unique = Unique::new();
        for r in &rate_rows {
            let year: i32 = r.parse(0, "year")?;
            let c = r.country(1, &registry)?;
            unique.check((year, c), r)?;
            let slot = years.index(year).expect("year inside span") * n + c;
            for (k, col) in cols.iter_mut().enumerate() {
                col[slot] = r.float(2 + k, RATES_COLS[2 + k])?;
            }
        }
        if let Some(slot) = cols[0].iter().position(|v| v.is_nan()) {
            return Err(input(format!(
                "{}: no row for year {} country {}",
                dir.join(RATES).display(),
                years.start_year + (slot / n) as i32,
                registry.code(slot % n)
            )));
        }
        let [births, birth_rate, death_rate, population] = cols;
        let rates = DemographicRates::new(years, n, births, birth_rate, death_rate, population)
            .map_err(|e| input(format!("{}: {e}", dir.join(RATES).display())))?;

        // stocks: cells without a row are unobserved zeros
        let mut by_year: BTreeMap<i32, (Vec<f64>, Vec<bool>, Vec<f64>)> = BTreeMap::new();
        let mut unique = Unique::new();
        for r in &stock_rows {
            let year: i32 = r.parse(0, "year")?;
            let (i, j) = (r.country(1, &registry)?, r.country(2, &registry)?);
            unique.check((year, i, j), r)?;
            let value = r.float(3, "value")?;
            let observed = r.flag(4, "observed")?;
            let weight = r.float(5, "weight")?;
            if value < 0.0 || weight < 0.0 {
                return Err(input(format!("{}: stocks and weights must be >= 0", r.at())));
            }
            let e = by_year.entry(year).or_insert_with(|| (vec![0.0; n * n], vec![false; n * n], vec![1.0; n * n]));
            e.0[i * n + j] = value;
            e.1[i * n + j] = observed;
            e.2[i * n + j] = weight;
        }
        let mut stocks = StockSeries::new(n);
        for (year, (values, observed, weights)) in by_year {
            let table = StockTable::new(year, n, values).map_err(|e| input(format!("{}: {e}", dir.join(STOCKS).display())))?;
            stocks.insert(table, observed, weights).map_err(|e| input(format!("{}: {e}", dir.join(STOCKS).display())))?;
        }

        let mut initial = vec![0.0; n * n];
        let mut unique = Unique::new();
        for r in &initial_rows {
            let year: i32 = r.parse(0, "year")?;
            if year != years.start_year {
                return Err(input(format!("{}: initial stocks must be dated {}", r.at(), years.start_year)));
            }
            let (i, j) = (r.country(1, &registry)?, r.country(2, &registry)?);
            unique.check((i, j), r)?;
            let v = r.float(3, "value")?;
            if v < 0.0 {
                return Err(input(format!("{}: stocks must be >= 0", r.at())));
            }
            initial[i * n + j] = v;
        }
        let initial_stocks = StockTable::new(years.start_year, n, initial)?;

        let mut targets = TargetDataset::empty(n);
        let mut unique = Unique::new();
        for r in read_rows(&dir.join(STOCK_DIFFS), &DIFF_COLS)?.unwrap_or_default() {
            let d = StockDiffTarget {
                start_year: r.parse(0, "start_year")?,
                end_year: r.parse(1, "end_year")?,
                birth: r.country(2, &registry)?,
                residence: r.country(3, &registry)?,
                value: r.float(4, "value")?,
                weight: r.float(5, "weight")?,
            };
            unique.check((d.start_year, d.end_year, d.birth, d.residence), &r)?;
            targets.stock_diffs.push(d);
        }
        let mut unique = Unique::new();
        for r in read_rows(&dir.join(FLOWS), &FLOW_COLS)?.unwrap_or_default() {
            let f = FlowTarget {
                year: r.parse(0, "year")?,
                origin: r.country(1, &registry)?,
                destination: r.country(2, &registry)?,
                value: r.float(3, "value")?,
                weight: r.float(4, "weight")?,
                std_error: r.opt_float(5, "std_error")?,
            };
            unique.check((f.year, f.origin, f.destination), &r)?;
            targets.flows.push(f);
        }
        let mut unique = Unique::new();
        for r in read_rows(&dir.join(NET), &NET_COLS)?.unwrap_or_default() {
            let t = NetMigrationTarget {
                year: r.parse(0, "year")?,
                country: r.country(1, &registry)?,
                value: r.float(2, "value")?,
                weight: r.float(3, "weight")?,
            };
            unique.check((t.year, t.country), &r)?;
            targets.net_migration.push(t);
        }
        let mut test = vec![false; n * n];
        let mut unique = Unique::new();
        for r in read_rows(&dir.join(SPLIT), &SPLIT_COLS)?.unwrap_or_default() {
            let (o, d) = (r.country(0, &registry)?, r.country(1, &registry)?);
            unique.check((o, d), &r)?;
            if o == d {
                return Err(input(format!("{}: corridor needs distinct countries", r.at())));
            }
            test[o * n + d] = r.flag(2, "test")?;
        }
        targets.corridor_split = CorridorSplit::from_test_mask(n, test)?;
        targets.validate(years).map_err(|e| input(format!("{}: targets: {e}", dir.display())))?;

        let covariates = load_covariates(&dir.join(COVARIATES), &registry, years)?;
        let truth = match read_rows(&dir.join(TRUTH_FLOWS), &TRUTH_COLS)? {
            Some(rows) => Some(parse_truth(rows, &registry, years)?),
            None => None,
        };
        Ok(Self { registry, years, rates, stocks, initial_stocks, targets, covariates, truth })
    }
}

fn load_covariates(dir: &Path, registry: &CountryRegistry, years: TimeAxis) -> Result<CovariateTables> {
    let mut tables = CovariateTables::default();
    if !dir.is_dir() {
        return Ok(tables);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let n = registry.len();
    for path in files {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let arity = if names::COUNTRY_TABLES.contains(&name.as_str()) {
            TableArity::Country
        } else if names::PAIR_TABLES.contains(&name.as_str()) {
            TableArity::Pair
        } else {
            return Err(input(format!("{}: unknown covariate table {name:?}", path.display())));
        };
        let header: &[&str] = match arity {
            TableArity::Country => &COUNTRY_COV_COLS,
            TableArity::Pair => &PAIR_COV_COLS,
        };
        let mut table = CovariateTable::missing(&name, arity, years, n);
        let Some(rows) = read_rows(&path, header)? else {
            tables.insert(table);
            continue;
        };
        let mut unique = Unique::new();
        for r in rows {
            let year: i32 = r.parse(0, "year")?;
            if !years.contains(year) {
                continue;
            }
            let (key, col) = match arity {
                TableArity::Country => (r.country(1, registry)?, 2),
                TableArity::Pair => (r.country(1, registry)? * n + r.country(2, registry)?, 3),
            };
            unique.check((year, key), &r)?;
            if let Some(v) = r.opt_float(col, "value")? {
                table.set(year, key, v)?;
            }
        }
        tables.insert(table);
    }
    Ok(tables)
}

fn parse_truth(rows: Vec<Row>, registry: &CountryRegistry, years: TimeAxis) -> Result<Vec<FlowTensor>> {
    let n = registry.len();
    let mut values = vec![vec![0.0; n * n * n]; years.len()];
    let mut unique = Unique::new();
    for r in rows {
        let year: i32 = r.parse(0, "year")?;
        let t = years.index(year).ok_or_else(|| input(format!("{}: year {year} outside the dataset", r.at())))?;
        let (i, j, k) = (r.country(1, registry)?, r.country(2, registry)?, r.country(3, registry)?);
        unique.check((year, i, j, k), &r)?;
        values[t][(i * n + j) * n + k] = r.float(4, "value")?;
    }
    years
        .years()
        .zip(values)
        .map(|(y, v)| FlowTensor::new(y, n, v).map_err(|e| input(format!("true flows for {y}: {e}"))))
        .collect()
}

/// True flows in the truth schema; zero entries and diagonal moves omitted.
pub fn truth_bytes(registry: &CountryRegistry, flows: &[FlowTensor]) -> Vec<u8> {
    let mut rows = Vec::new();
    for t in flows {
        let n = t.n();
        for (idx, v) in t.values().iter().enumerate() {
            let (i, j, k) = (idx / (n * n), (idx / n) % n, idx % n);
            if j != k && *v != 0.0 {
                rows.push(vec![
                    t.year().to_string(),
                    registry.code(i).to_string(),
                    registry.code(j).to_string(),
                    registry.code(k).to_string(),
                    num(*v),
                ]);
            }
        }
    }
    csv_bytes(&TRUTH_COLS, rows)
}

/// Read a flows file in the truth schema against a dataset's registry.
pub fn load_flows(path: &Path, registry: &CountryRegistry, years: TimeAxis) -> Result<Vec<FlowTensor>> {
    parse_truth(required(path, &TRUTH_COLS)?, registry, years)
}

/// Write every dataset file below `dir` (used by tests and tooling; the CLI
/// goes through staged outputs).
pub fn save(dataset: &Dataset, dir: &Path) -> Result<()> {
    for (name, bytes) in dataset.files() {
        crate::output::write_atomic(&dir.join(name), &bytes)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_exactly() {
        for v in [0.0, -0.0, 1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, 123456789.123456789] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(f64::NAN), "");
    }
}
