use dcsi_rzf::optimizer::*;
use dcsi_rzf::scenario::preset_asymmetric;
use std::time::Instant;

fn main() {
    let s = preset_asymmetric();
    let o = OptimizerOptions::default();
    let budgets = s.per_tx_power().to_vec();

    let t0 = Instant::now();
    let (a, tr) = optimize_per_tx_alpha(&s, &budgets, None, &o).unwrap();
    println!("per-tx alpha: {:?} sweeps={} {:?}", t0.elapsed(), tr.points.len(), a);

    let t0 = Instant::now();
    let (mu, tr) = optimize_power(&s, &a, 1e-10, 200, None, &o).unwrap();
    println!("power (cold): {:?} outer={} mu={:?}", t0.elapsed(), tr.points.len(), mu);

    let t0 = Instant::now();
    let res = joint_optimize(&s, AlphaMode::PerTx, &o).unwrap();
    println!("joint: {:?} rounds={} rate={}", t0.elapsed(), res.trace.points.len(), res.sum_rate);
}
