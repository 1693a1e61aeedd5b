//! Train one leave-one-out trial on the synthetic rotated-glyph domains.
//!
//! cargo run --release --example train_trial -- [steps] [method] [k]

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::harness::{train, ExperimentConfig, Method};

fn main() -> earlybranch::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps = args.first().and_then(|s| s.parse().ok()).unwrap_or(200);
    let method: Method = args.get(1).map_or(Ok(Method::Full), |s| s.parse())?;
    let k = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let data = generate_synthetic(&SyntheticConfig {
        seed: 1,
        ..SyntheticConfig::default()
    })?;
    let mut cfg = ExperimentConfig {
        method,
        steps,
        eval_interval: (steps / 4).max(1),
        target_domain: 5,
        ..ExperimentConfig::default()
    };
    cfg.network.branch_point = k;
    cfg.network.channels = vec![16; 4];

    let t = std::time::Instant::now();
    let out = train(&cfg, &data)?;
    let r = &out.result;
    let first = r.loss_trace.first().map_or(f64::NAN, |p| p.loss.cls);
    let last = r.loss_trace.last().map_or(f64::NAN, |p| p.loss.cls);
    println!("{}: {} steps in {:.1}s", r.label, steps, t.elapsed().as_secs_f64());
    println!("cls loss {first:.3} -> {last:.3}");
    for v in &r.validation {
        println!("  step {:>5}  val {:.3}", v.step, v.val_acc);
    }
    println!("selected step {}  val {:.3}  test {:.3}", r.selected_step(), r.val_acc, r.test_acc);
    Ok(())
}
