//! Train on a noiseless synthetic world and report recovery.
//!
//! `cargo run --release -p flowinfer-core --example recover -- [countries] [years] [epochs] [latent] [lr] [stock exponent] [depth] [log-flow bias]`

use std::time::Instant;

use flowinfer_core::nn::{Activation, Architecture};
use flowinfer_core::synthetic::{corrupt, evaluate_recovery, generate, CorruptionSpec, WorldSpec};
use flowinfer_core::training::{initial_parameters, rollout, train_from, TrainConfig};

fn main() -> flowinfer_core::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("numeric argument")).collect();
    let get = |i: usize, d: f64| args.get(i).copied().unwrap_or(d);
    let lo = 10f64.powf(get(5, 5.0));
    let spec = WorldSpec {
        countries: get(0, 8.0) as usize,
        years: get(1, 10.0) as usize,
        foreign_stock: if lo == 1.0 { (1e2, 1e5) } else { (lo, lo * 100.0) },
        native_stock: if lo == 1.0 { (1e2, 1e5) } else { (lo * 100.0, lo * 1e4) },
        ..WorldSpec::default()
    };
    let world = generate(&spec, 1)?;
    let flows: Vec<f64> = world.flows.iter().flat_map(|f| f.values().iter().copied().filter(|v| *v > 0.0)).collect();
    let (lo, hi) = flows.iter().fold((f64::MAX, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    println!("flows min {lo:.3e} max {hi:.3e}, stock clamps {}", world.stock_clamps);
    let obs = corrupt(&world, &CorruptionSpec::clean(2))?;
    let arch = Architecture {
        covariate_dim: world.panel.layout().len(),
        latent_dim: get(3, 5.0) as usize,
        hidden_width: 20,
        depth: get(6, 3.0) as usize,
        hidden_activation: Activation::Tanh,
        celu_alpha: -12.0,
    };
    let cfg = TrainConfig { epochs: get(2, 200.0) as usize, learning_rate: get(4, 1e-3), seed: 3, ..TrainConfig::default() };
    let problem = world.problem(&obs.initial_stocks);
    let start = Instant::now();
    let cfg = TrainConfig { initial_log_flow: args.get(7).copied(), ..cfg };
    let init = initial_parameters(&cfg, arch, &obs.targets)?;
    let out = train_from(&cfg, init, &problem, &obs.targets, |e, l| {
        if e % (cfg.epochs / 10).max(1) == 0 {
            println!("epoch {e:6} stock {:.4e} net {:.4e} flow {:.4e} total {:.4e}", l.stock, l.net, l.flow, l.total);
        }
    })?;
    let secs = start.elapsed().as_secs_f64();
    let r = rollout(&out.params, &problem)?;
    let m = evaluate_recovery(&r.flows, &world, None)?;
    println!(
        "final {:.4e}; {:.1}s ({:.3}s/epoch); median rel err {:.4}; flow R {:?}; mean corridor R {:?}",
        out.final_loss.total,
        secs,
        secs / cfg.epochs as f64,
        m.median_relative_error,
        m.flow_correlation,
        m.mean_train_corridor_r
    );
    let n = world.n();
    let mut cats: [Vec<f64>; 3] = Default::default();
    let mut bysize: Vec<(f64, f64)> = Vec::new();
    for (e, t) in r.flows.iter().zip(&world.flows) {
        for i in 0..n { for j in 0..n { for k in 0..n {
            if j == k { continue; }
            let (a, b) = (e.get(i, j, k), t.get(i, j, k));
            let c = if i == j { 0 } else if i == k { 1 } else { 2 };
            cats[c].push((a - b).abs() / b);
            bysize.push((b, (a - b).abs() / b));
        }}}
    }
    for (name, c) in ["native", "return", "other"].iter().zip(cats.iter_mut()) {
        c.sort_by(f64::total_cmp);
        println!("{name}: n {} median {:.3}", c.len(), c[c.len() / 2]);
    }
    let tiny = r.flows.iter().zip(&world.flows).flat_map(|(e, t)| e.values().iter().zip(t.values()).filter(|(a, b)| **b > 0.0 && **a < 0.01 * **b).map(|_| 1)).count();
    let over = r.flows.iter().zip(&world.flows).flat_map(|(e, t)| e.values().iter().zip(t.values()).filter(|(a, b)| **b > 0.0 && **a > 2.0 * **b).map(|_| 1)).count();
    println!("estimates below 1% of truth: {tiny}, above 2x truth: {over}, of {}", bysize.len());
    bysize.sort_by(|a, b| a.0.total_cmp(&b.0));
    for q in 0..4 {
        let mut s: Vec<f64> = bysize[q * bysize.len() / 4..(q + 1) * bysize.len() / 4].iter().map(|x| x.1).collect();
        s.sort_by(f64::total_cmp);
        println!("size quartile {q} (from {:.2e}): median {:.3}", bysize[q * bysize.len() / 4].0, s[s.len() / 2]);
    }
    Ok(())
}
