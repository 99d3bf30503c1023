//! Simulated image verification over 20 seeds.
//!
//! `cargo run --release --example study1`

use rapidlabel_core::experiments::VerificationSetup;

fn main() -> rapidlabel_core::Result<()> {
    let setup = VerificationSetup::default();
    let (mut precision, mut recall) = (0.0, 0.0);
    let seeds = 20;
    for seed in 0..seeds {
        let o = setup.run(seed)?;
        let d = &o.result.delay_model_used;
        println!(
            "seed {seed:2}  precision {:.3}  recall {:.3}  recall@0.95 {:.3}  delay {:.0}/{:.0}ms",
            o.metrics.precision, o.metrics.recall, o.recall_at_95, d.mean_ms, d.std_ms
        );
        precision += o.metrics.precision;
        recall += o.metrics.recall;
    }
    let n = seeds as f64;
    println!("mean  precision {:.3}  recall {:.3}", precision / n, recall / n);
    Ok(())
}
