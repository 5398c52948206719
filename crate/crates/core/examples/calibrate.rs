//! Dev harness: print clean-registered RMSE vs baseline for the default
//! synthetic protocol (1 reference x N items at a given size).
//!
//! Usage: cargo run --release -p pouchreg --example calibrate [size] [count]

use std::time::Instant;

use pouchreg::{
    clean_register_eval, generate_item, phantom_pouch, register_nonrigid, register_rigid,
    EnergyConfig, RigidConfig, RigidParams, SynthSpec, TransformChain,
};

fn main() {
    let mut args = std::env::args().skip(1);
    let size: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(256);
    let count: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(20);

    let (ref_img, ref_mask) = phantom_pouch(size, size, 1);
    let spec = SynthSpec { count, ..SynthSpec::default() };
    let t0 = Instant::now();
    let mut ratios = Vec::new();
    let mut baselines = Vec::new();
    let mut cleans = Vec::new();
    for i in 0..count {
        let item = generate_item(&ref_img, &ref_mask, &spec, i).unwrap();
        let baseline =
            clean_register_eval(&ref_img, &item.s1, &TransformChain::identity(), &ref_mask)
                .unwrap();
        let t1 = Instant::now();
        let (rigid, _) = register_rigid(
            &ref_mask,
            &item.mask,
            RigidParams::identity(),
            &RigidConfig::default(),
        )
        .unwrap();
        let (chain, _) =
            register_nonrigid(&ref_img, &item.s2, &ref_mask, rigid, &EnergyConfig::default())
                .unwrap();
        let clean = clean_register_eval(&ref_img, &item.s1, &chain, &ref_mask).unwrap();
        println!(
            "item {i:2}: baseline {baseline:.4}  clean {clean:.4}  ratio {:.3}  ({:.2?})",
            clean / baseline,
            t1.elapsed()
        );
        ratios.push(clean / baseline);
        baselines.push(baseline);
        cleans.push(clean);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "mean baseline {:.4}  mean clean {:.4}  mean-ratio {:.3}  total {:.2?}",
        mean(&baselines),
        mean(&cleans),
        mean(&cleans) / mean(&baselines),
        t0.elapsed()
    );
}
