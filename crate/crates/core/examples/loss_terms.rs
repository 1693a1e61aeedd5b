//! Print the per-step loss breakdown of a short full-method run.
//!
//! cargo run --release --example loss_terms -- [steps] [alpha] [beta] [augmenter]

use earlybranch::data::{generate_synthetic, SyntheticConfig};
use earlybranch::harness::{train, ExperimentConfig};

fn main() -> earlybranch::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let steps = arg(0, 60.0) as usize;
    let data = generate_synthetic(&SyntheticConfig::default())?;
    let mut cfg = ExperimentConfig {
        steps,
        eval_interval: steps.max(1),
        ..ExperimentConfig::default()
    };
    cfg.loss.alpha = arg(1, 0.3);
    cfg.loss.beta = arg(2, 1.0);
    if let Some(a) = args.get(3) {
        cfg.augmenter = a.parse()?;
    }
    cfg.network.channels = vec![16; 4];
    let r = train(&cfg, &data)?.result;
    println!("step\tcls\tindp\tcons\tcons_inv\tn\ttotal");
    for p in r.loss_trace.iter().step_by((steps / 20).max(1)) {
        let l = p.loss;
        println!(
            "{}\t{:.3}\t{:.4}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            p.step, l.cls, l.indp, l.cons, l.cons_inverse, l.margin_n, l.total
        );
    }
    println!("val {:.3} test {:.3}", r.val_acc, r.test_acc);
    Ok(())
}
