//! Stock-based flow estimators and the correlation comparison.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::accounting::{ipf, IpfOptions, MarginalTargets, PeriodDemography};
use crate::domain::{DemographicRates, FlowTensor, OriginDestinationMatrix, StockTable};
use crate::error::{bail, Result};
use crate::stats;

fn same_shape(s1: &StockTable, s2: &StockTable) -> Result<usize> {
    if s1.n() != s2.n() {
        bail!(Structural, "stock tables have {} and {} countries", s1.n(), s2.n());
    }
    Ok(s1.n())
}

/// `flow[i][j] = max(S2[i][j] - S1[i][j], 0)` off the diagonal: `i`-born
/// arrivals into `j`, negative differences dropped.
pub fn stock_diff_drop(s1: &StockTable, s2: &StockTable) -> Result<Vec<f64>> {
    let n = same_shape(s1, s2)?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (0..n).filter(|j| *j != i) {
            out[i * n + j] = (s2.get(i, j) - s1.get(i, j)).max(0.0);
        }
    }
    Ok(out)
}

/// Stock differences split by sign.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedFlows {
    pub n: usize,
    /// `inflow[i][j]`: `i`-born arrivals into `j` (positive differences).
    pub inflow: Vec<f64>,
    /// `returns[i][j]`: movement from `j` back to `i` (negative differences).
    pub returns: Vec<f64>,
}

impl DirectedFlows {
    /// Origin-destination flows: arrivals as `i -> j`, returns as `j -> i`.
    pub fn origin_destination(&self, year: i32) -> Result<OriginDestinationMatrix> {
        let n = self.n;
        let mut f = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                f[i * n + j] += self.inflow[i * n + j];
                f[j * n + i] += self.returns[i * n + j];
            }
        }
        OriginDestinationMatrix::new(year, n, f)
    }
}

/// Positive differences become arrivals from the birth country, negative ones
/// flows of the same size back to it.
pub fn stock_diff_reverse(s1: &StockTable, s2: &StockTable) -> Result<DirectedFlows> {
    let n = same_shape(s1, s2)?;
    let mut inflow = vec![0.0; n * n];
    let mut returns = vec![0.0; n * n];
    for i in 0..n {
        for j in (0..n).filter(|j| *j != i) {
            let d = s2.get(i, j) - s1.get(i, j);
            if d > 0.0 {
                inflow[i * n + j] = d;
            } else {
                returns[i * n + j] = -d;
            }
        }
    }
    Ok(DirectedFlows { n, inflow, returns })
}

/// Origin-destination view of [`stock_diff_drop`].
pub fn drop_origin_destination(flows: &[f64], n: usize, year: i32) -> Result<OriginDestinationMatrix> {
    OriginDestinationMatrix::new(year, n, flows.to_vec())
}

/// Birth-country tables adjusted for demography and balanced to common
/// birth-country totals.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedStocks {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// `S1 + births` and `S2 + deaths`, each scaled by IPF to the mean of their
/// row (birth-country) totals while keeping their own residence totals up to
/// a common factor.
pub fn adjusted_stocks(s1: &StockTable, s2: &StockTable, rates: &DemographicRates) -> Result<AdjustedStocks> {
    let n = same_shape(s1, s2)?;
    let demo = PeriodDemography::between(s1, s2.year(), rates)?;
    let mut a1 = s1.values().to_vec();
    for i in 0..n {
        a1[i * n + i] += demo.births[i];
    }
    let a2: Vec<f64> = s2.values().iter().zip(&demo.deaths).map(|(s, d)| s + d).collect();
    let (m1, m2) = (MarginalTargets::of(&a1, n), MarginalTargets::of(&a2, n));
    let rows: Vec<f64> = m1.rows.iter().zip(&m2.rows).map(|(a, b)| 0.5 * (a + b)).collect();
    let total: f64 = rows.iter().sum();
    let balance = |a: &[f64], m: &MarginalTargets| -> Result<Vec<f64>> {
        let ct: f64 = m.cols.iter().sum();
        if !(ct > 0.0) {
            return Ok(a.to_vec());
        }
        let cols = m.cols.iter().map(|c| c * total / ct).collect();
        let mut b = ipf(a, &MarginalTargets::new(rows.clone(), cols)?, IpfOptions::default())?;
        // exact row totals so each birth slice balances
        for (i, r) in b.chunks_mut(n).enumerate() {
            let s: f64 = r.iter().sum();
            if s > 0.0 {
                r.iter_mut().for_each(|v| *v *= rows[i] / s);
            }
        }
        Ok(b)
    };
    Ok(AdjustedStocks { start: balance(&a1, &m1)?, end: balance(&a2, &m2)? })
}

/// Minimum-movement flows between two balanced birth-country rows.
///
/// Cells that lose people send them out, cells that gain receive. Departures
/// from the birth country and arrivals back in it are placed first; the rest
/// is spread in proportion to surplus times deficit. The total moved equals
/// the sum of losses, the least any tensor with these net effects can move.
fn minimum_movement(i: usize, start: &[f64], end: &[f64], out: &mut [f64]) {
    let n = start.len();
    let mut surplus: Vec<f64> = (0..n).map(|j| (start[j] - end[j]).max(0.0)).collect();
    let mut deficit: Vec<f64> = (0..n).map(|k| (end[k] - start[k]).max(0.0)).collect();
    let mut place = |j: usize, k: usize, v: f64, s: &mut [f64], d: &mut [f64]| {
        out[j * n + k] += v;
        s[j] -= v;
        d[k] -= v;
    };
    let dsum: f64 = deficit.iter().sum();
    if surplus[i] > 0.0 && dsum > 0.0 {
        let from_home = surplus[i].min(dsum);
        for k in 0..n {
            let v = from_home * deficit[k] / dsum;
            if v > 0.0 {
                place(i, k, v, &mut surplus, &mut deficit);
            }
        }
    }
    let ssum: f64 = surplus.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| *s).sum();
    if deficit[i] > 0.0 && ssum > 0.0 {
        let to_home = deficit[i].min(ssum);
        for j in (0..n).filter(|j| *j != i) {
            let v = to_home * surplus[j] / ssum;
            if v > 0.0 {
                place(j, i, v, &mut surplus, &mut deficit);
            }
        }
    }
    let ssum: f64 = surplus.iter().map(|s| s.max(0.0)).sum();
    if ssum > 0.0 {
        let dsum: f64 = deficit.iter().map(|d| d.max(0.0)).sum();
        let scale = if dsum > 0.0 { 1.0 / dsum } else { 0.0 };
        let (s, d) = (surplus.clone(), deficit.clone());
        for j in 0..n {
            for k in (0..n).filter(|k| *k != j) {
                let v = s[j].max(0.0) * d[k].max(0.0) * scale;
                if v > 0.0 {
                    out[j * n + k] += v;
                }
            }
        }
    }
}

/// Birth-disaggregated flows over the interval between two stock tables
/// (dated `s1.year()`), explaining the demographically adjusted stock
/// differences with the least total movement.
pub fn demographic_accounting_flows(s1: &StockTable, s2: &StockTable, rates: &DemographicRates) -> Result<FlowTensor> {
    let n = same_shape(s1, s2)?;
    let adj = adjusted_stocks(s1, s2, rates)?;
    let mut t = vec![0.0; n * n * n];
    for i in 0..n {
        let row = i * n..(i + 1) * n;
        minimum_movement(i, &adj.start[row.clone()], &adj.end[row], &mut t[i * n * n..(i + 1) * n * n]);
    }
    FlowTensor::new(s1.year(), n, t)
}

/// `sum_k T[i][k][j] - T[i][j][k]`: the stock change a tensor causes.
pub fn net_stock_effect(t: &FlowTensor) -> Vec<f64> {
    let n = t.n();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i * n + j] += t.get(i, k, j) - t.get(i, j, k);
            }
        }
    }
    out
}

/// Flow measures of one aggregation window; `None` marks missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMeasures {
    pub window_start: i32,
    pub n: usize,
    /// `F[j][k]`, diagonal unused.
    pub od: Vec<Option<f64>>,
    /// `sum_j T[i][j][k]`: `i`-born arrivals into `k`.
    pub birth_destination: Vec<Option<f64>>,
    pub inflow: Vec<Option<f64>>,
    pub outflow: Vec<Option<f64>>,
    pub net: Vec<Option<f64>>,
}

impl FlowMeasures {
    pub fn missing(window_start: i32, n: usize) -> Self {
        Self {
            window_start,
            n,
            od: vec![None; n * n],
            birth_destination: vec![None; n * n],
            inflow: vec![None; n],
            outflow: vec![None; n],
            net: vec![None; n],
        }
    }

    /// All measures derived from an origin-destination matrix; birth
    /// destinations left missing.
    pub fn from_od(window_start: i32, f: &[f64], n: usize) -> Self {
        let mut m = Self::missing(window_start, n);
        for j in 0..n {
            for k in (0..n).filter(|k| *k != j) {
                m.od[j * n + k] = Some(f[j * n + k]);
            }
            let inflow: f64 = (0..n).filter(|k| *k != j).map(|k| f[k * n + j]).sum();
            let outflow: f64 = (0..n).filter(|k| *k != j).map(|k| f[j * n + k]).sum();
            m.inflow[j] = Some(inflow);
            m.outflow[j] = Some(outflow);
            m.net[j] = Some(inflow - outflow);
        }
        m
    }

    /// All measures of a (window-summed) flow tensor.
    pub fn from_tensor(window_start: i32, t: &FlowTensor) -> Self {
        let n = t.n();
        let f = crate::domain::flows_by_origin(t);
        let mut m = Self::from_od(window_start, f.values(), n);
        for i in 0..n {
            for k in 0..n {
                m.birth_destination[i * n + k] = Some((0..n).filter(|j| *j != k).map(|j| t.get(i, j, k)).sum());
            }
        }
        m
    }
}

/// Sum annual tensors over consecutive windows of `window` years, starting
/// at the first year. A trailing partial window is dropped.
pub fn aggregate_windows(flows: &[FlowTensor], window: usize) -> Result<Vec<FlowTensor>> {
    if window == 0 {
        bail!(Domain, "aggregation window must be positive");
    }
    let mut out = Vec::new();
    for chunk in flows.chunks(window).filter(|c| c.len() == window) {
        let n = chunk[0].n();
        if chunk.windows(2).any(|w| w[1].year() != w[0].year() + 1 || w[1].n() != n) {
            bail!(Structural, "flows must be consecutive yearly tensors of one size");
        }
        let mut sum = vec![0.0; n * n * n];
        for t in chunk {
            sum.iter_mut().zip(t.values()).for_each(|(a, v)| *a += v);
        }
        out.push(FlowTensor::new(chunk[0].year(), n, sum)?);
    }
    Ok(out)
}

/// Pearson R per measure; `None` where fewer than three pairs overlap or a
/// side is constant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeasureCorrelations {
    pub od: Option<f64>,
    pub birth_destination: Option<f64>,
    pub inflow: Option<f64>,
    pub outflow: Option<f64>,
    pub net: Option<f64>,
}

impl MeasureCorrelations {
    pub const NAMES: [&'static str; 5] = ["od", "birth_destination", "inflow", "outflow", "net"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.od, self.birth_destination, self.inflow, self.outflow, self.net]
    }
}

/// Correlate estimates with a reference over the windows both cover.
pub fn comparison_metrics(estimates: &[FlowMeasures], reference: &[FlowMeasures]) -> Result<MeasureCorrelations> {
    let mut pairs: [(Vec<f64>, Vec<f64>); 5] = Default::default();
    for r in reference {
        let Some(e) = estimates.iter().find(|e| e.window_start == r.window_start) else { continue };
        if e.n != r.n {
            bail!(Structural, "estimate and reference windows differ in size");
        }
        let fields = [
            (&e.od, &r.od),
            (&e.birth_destination, &r.birth_destination),
            (&e.inflow, &r.inflow),
            (&e.outflow, &r.outflow),
            (&e.net, &r.net),
        ];
        for ((a, b), (xs, ys)) in fields.into_iter().zip(pairs.iter_mut()) {
            for (x, y) in a.iter().zip(b.iter()) {
                if let (Some(x), Some(y)) = (x, y) {
                    xs.push(*x);
                    ys.push(*y);
                }
            }
        }
    }
    let r: Vec<Option<f64>> = pairs.iter().map(|(x, y)| stats::pearson(x, y)).collect();
    Ok(MeasureCorrelations { od: r[0], birth_destination: r[1], inflow: r[2], outflow: r[3], net: r[4] })
}

/// Correlations of several methods against one reference.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonReport {
    pub rows: Vec<(String, MeasureCorrelations)>,
}

impl ComparisonReport {
    pub fn push(&mut self, method: &str, m: MeasureCorrelations) {
        self.rows.push((method.into(), m));
    }
}

/// Measures of every stock-based method for consecutive stock tables, one
/// window per pair: `stock_diff_drop`, `stock_diff_reverse` and
/// `demographic_accounting`.
pub fn baseline_measures(tables: &[StockTable], rates: &DemographicRates) -> Result<Vec<(&'static str, Vec<FlowMeasures>)>> {
    let mut drop = Vec::new();
    let mut reverse = Vec::new();
    let mut accounting = Vec::new();
    for w in tables.windows(2) {
        let (s1, s2) = (&w[0], &w[1]);
        let n = same_shape(s1, s2)?;
        let d = stock_diff_drop(s1, s2)?;
        let mut m = FlowMeasures::from_od(s1.year(), &d, n);
        m.birth_destination = d.iter().map(|v| Some(*v)).collect();
        drop.push(m);
        let r = stock_diff_reverse(s1, s2)?;
        let mut m = FlowMeasures::from_od(s1.year(), r.origin_destination(s1.year())?.values(), n);
        m.birth_destination = r.inflow.iter().map(|v| Some(*v)).collect();
        reverse.push(m);
        accounting.push(FlowMeasures::from_tensor(s1.year(), &demographic_accounting_flows(s1, s2, rates)?));
    }
    Ok(vec![("stock_diff_drop", drop), ("stock_diff_reverse", reverse), ("demographic_accounting", accounting)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{stock_step, TimeAxis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(rng: &mut ChaCha8Rng, year: i32, n: usize) -> StockTable {
        StockTable::from_fn(year, n, |_, _| rng.random_range(0.0..100.0f64).round()).unwrap()
    }

    #[test]
    fn differencing_matches_cell_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (s1, s2) = (random_table(&mut rng, 2000, 5), random_table(&mut rng, 2005, 5));
            let d = stock_diff_drop(&s1, &s2).unwrap();
            let r = stock_diff_reverse(&s1, &s2).unwrap();
            for i in 0..5 {
                for j in 0..5 {
                    let delta = s2.get(i, j) - s1.get(i, j);
                    let (want_in, want_back) = match (i == j, delta) {
                        (true, _) => (0.0, 0.0),
                        (false, x) if x > 0.0 => (x, 0.0),
                        (false, x) => (0.0, -x),
                    };
                    assert_eq!(d[i * 5 + j], want_in);
                    assert_eq!(r.inflow[i * 5 + j], want_in);
                    assert_eq!(r.returns[i * 5 + j], want_back);
                }
            }
        }
    }

    #[test]
    fn differencing_hand_cases() {
        let s1 = StockTable::new(2000, 2, vec![50.0, 20.0, 30.0, 60.0]).unwrap();
        assert!(stock_diff_drop(&s1, &s1).unwrap().iter().all(|v| *v == 0.0));
        let s2 = StockTable::new(2005, 2, vec![50.0, 30.0, 20.0, 60.0]).unwrap();
        assert_eq!(stock_diff_drop(&s1, &s2).unwrap(), vec![0.0, 10.0, 0.0, 0.0]);
        let r = stock_diff_reverse(&s1, &s2).unwrap();
        assert_eq!(r.returns, vec![0.0, 0.0, 10.0, 0.0]);
        // 1-born leaving 0 return to 1
        assert_eq!(r.origin_destination(2000).unwrap().values(), &[0.0, 20.0, 0.0, 0.0]);
    }

    fn rates(n: usize, start: i32, end: i32, b: f64, g: f64) -> DemographicRates {
        let years = TimeAxis::new(start, end).unwrap();
        let m = years.len() * n;
        DemographicRates::new(years, n, vec![b; m], vec![0.0; m], vec![g; m], vec![1.0; m]).unwrap()
    }

    #[test]
    fn closed_pair_gives_zero_flows() {
        let r = rates(3, 2000, 2000, 4.0, 0.02);
        let s1 = StockTable::new(2000, 3, vec![100.0, 5.0, 3.0, 2.0, 80.0, 7.0, 1.0, 4.0, 60.0]).unwrap();
        let s2 = stock_step(&s1, &FlowTensor::zeros(2000, 3), &r, 2000).unwrap().table;
        let t = demographic_accounting_flows(&s1, &s2, &r).unwrap();
        assert!(t.values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn inverts_forward_simulated_two_country_world() {
        let r = rates(2, 2000, 2000, 3.0, 0.01);
        let s1 = StockTable::new(2000, 2, vec![100.0, 20.0, 10.0, 200.0]).unwrap();
        for (i, j, k) in [(0, 0, 1), (0, 1, 0), (1, 0, 1), (1, 1, 0)] {
            let mut truth = FlowTensor::zeros(2000, 2);
            truth.set(i, j, k, 5.0).unwrap();
            let s2 = stock_step(&s1, &truth, &r, 2000).unwrap().table;
            let t = demographic_accounting_flows(&s1, &s2, &r).unwrap();
            for (a, b) in net_stock_effect(&t).iter().zip(net_stock_effect(&truth)) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            assert!((t.get(i, j, k) - 5.0).abs() < 1e-9);
            assert!((t.total() - 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn accounting_reproduces_adjusted_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let n = rng.random_range(2..6);
            let s1 = StockTable::from_fn(2000, n, |i, j| if i == j { rng.random_range(1e3..1e4) } else { rng.random_range(1.0..200.0) }).unwrap();
            let s2 = StockTable::from_fn(2005, n, |i, j| if i == j { rng.random_range(1e3..1e4) } else { rng.random_range(1.0..200.0) }).unwrap();
            let r = rates(n, 2000, 2004, rng.random_range(0.0..50.0), rng.random_range(0.0..0.02));
            let adj = adjusted_stocks(&s1, &s2, &r).unwrap();
            let t = demographic_accounting_flows(&s1, &s2, &r).unwrap();
            assert!(t.values().iter().all(|v| *v >= 0.0));
            for (c, e) in net_stock_effect(&t).iter().enumerate() {
                let want = adj.end[c] - adj.start[c];
                assert!((e - want).abs() <= 1e-6 * want.abs().max(1.0), "{e} vs {want}");
            }
            // birth consistency: every slice only moves its own birth row
            for i in 0..n {
                let moved: f64 = (0..n).flat_map(|j| (0..n).map(move |k| (j, k))).map(|(j, k)| t.get(i, j, k)).sum();
                let losses: f64 = (0..n).map(|j| (adj.start[i * n + j] - adj.end[i * n + j]).max(0.0)).sum();
                assert!((moved - losses).abs() <= 1e-6 * losses.max(1.0));
            }
        }
    }

    fn measures_pair(rng: &mut ChaCha8Rng, len: usize) -> (Vec<FlowMeasures>, Vec<FlowMeasures>) {
        let n = 4;
        let mk = |rng: &mut ChaCha8Rng| -> Vec<FlowTensor> {
            (0..len)
                .map(|y| FlowTensor::from_fn(2000 + y as i32, n, |_, j, k| if j == k { 0.0 } else { rng.random_range(0.0..10.0) }).unwrap())
                .collect()
        };
        let a = mk(rng);
        let b = mk(rng);
        let agg = |v: &[FlowTensor]| aggregate_windows(v, 5).unwrap().iter().map(|t| FlowMeasures::from_tensor(t.year(), t)).collect();
        (agg(&a), agg(&b))
    }

    #[test]
    fn comparison_identity_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, _) = measures_pair(&mut rng, 10);
        let m = comparison_metrics(&a, &a).unwrap();
        assert!(m.values().iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-12));
        let doubled: Vec<FlowMeasures> = a
            .iter()
            .map(|x| {
                let f = |v: &Vec<Option<f64>>| v.iter().map(|o| o.map(|v| 2.0 * v + 3.0)).collect();
                FlowMeasures { od: f(&x.od), birth_destination: f(&x.birth_destination), inflow: f(&x.inflow), outflow: f(&x.outflow), net: f(&x.net), ..x.clone() }
            })
            .collect();
        let m = comparison_metrics(&doubled, &a).unwrap();
        assert!(m.values().iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn comparison_random_and_undefined() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..100).map(|_| rng.random()).collect();
        assert!(stats::pearson(&xs, &ys).unwrap().abs() < 0.3);
        let mut a = FlowMeasures::missing(2000, 3);
        let mut b = FlowMeasures::missing(2000, 3);
        a.inflow = vec![Some(1.0), Some(2.0), None];
        b.inflow = vec![Some(1.0), Some(3.0), Some(2.0)];
        let m = comparison_metrics(&[a], &[b]).unwrap();
        assert_eq!(m, MeasureCorrelations::default());
    }

    #[test]
    fn aggregation_sums_windows() {
        let ts: Vec<FlowTensor> = (0..7).map(|y| FlowTensor::from_fn(2000 + y, 2, |_, j, k| if j == k { 0.0 } else { 1.0 }).unwrap()).collect();
        let w = aggregate_windows(&ts, 5).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].get(0, 0, 1), 5.0);
        assert!(aggregate_windows(&ts, 0).is_err());
    }

    #[test]
    fn baseline_measures_cover_each_pair() {
        let r = rates(3, 2000, 2009, 1.0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tables = [random_table(&mut rng, 2000, 3), random_table(&mut rng, 2005, 3), random_table(&mut rng, 2010, 3)]
            .map(|t| StockTable::from_fn(t.year(), 3, |i, j| t.get(i, j) + if i == j { 1000.0 } else { 1.0 }).unwrap());
        let all = baseline_measures(&tables, &r).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.iter().all(|(_, m)| m.len() == 2 && m[1].window_start == 2005));
    }
}
