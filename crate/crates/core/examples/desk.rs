//! Runs every ablation variant on the desk world for a range of seeds and
//! prints the headline metrics.
//!
//! cargo run --release -p sta --example desk -- [first_seed] [seeds] [setting]

use std::time::Instant;

use sta::dataworld::{generate_world, Setting};
use sta::eval::{run_variants_on, ExperimentConfig, Variant};

fn main() -> sta::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let first: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let count: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let setting: Setting = match args.get(2) {
        Some(s) => s.parse()?,
        None => Setting::Supervised,
    };
    for seed in first..first + count {
        let start = Instant::now();
        let config = ExperimentConfig::desk(seed);
        let world = generate_world(&config.world)?;
        let runs = run_variants_on(&config, &world, setting, &Variant::ALL)?;
        for (model, r) in &runs {
            println!(
                "seed {seed} {:<9} R@50 {:.3} R@100 {:.3} overlap {:.3} {:.1}s",
                model.variant.name(),
                r.recall_at_50,
                r.recall_at_100,
                r.overlap_ratio,
                r.meta.wall_time_secs
            );
        }
        println!("seed {seed} total {:.1}s", start.elapsed().as_secs_f64());
    }
    Ok(())
}
