//! `eval`: score recovered transforms against a benchmark dataset.
//!
//! For every item the clean (pre-intensity-distortion) image is resampled
//! through the recovered transform and compared with the reference inside
//! the pouch region. The identity transform gives the unregistered baseline.

use std::path::Path;

use pouchreg::{clean_register_eval, pgm, TransformChain};

use crate::synth_cmd::Manifest;
use crate::util;

pub fn run(dataset: &Path, results: &Path, verbose: bool) -> Result<(), String> {
    let manifest = Manifest::load(&dataset.join("manifest.json"))?;
    let ref_img = pgm::read_image(&dataset.join("ref.pgm")).map_err(|e| e.to_string())?;
    let ref_mask = pgm::read_mask(&dataset.join("mask.pgm")).map_err(|e| e.to_string())?;
    let identity = TransformChain::identity();

    let mut baselines = Vec::with_capacity(manifest.spec.count);
    let mut cleans = Vec::with_capacity(manifest.spec.count);
    let mut rows = String::from("item,baseline_rmse,clean_rmse\n");
    for i in 0..manifest.spec.count {
        let s1_path = dataset.join(i.to_string()).join("s1.pgm");
        let s1 = pgm::read_image(&s1_path).map_err(|e| e.to_string())?;
        let chain_path = results.join(i.to_string()).join("transform.json");
        let chain = TransformChain::load(&chain_path).map_err(|e| e.to_string())?;

        let baseline =
            clean_register_eval(&ref_img, &s1, &identity, &ref_mask).map_err(|e| e.to_string())?;
        let clean =
            clean_register_eval(&ref_img, &s1, &chain, &ref_mask).map_err(|e| e.to_string())?;
        rows.push_str(&format!("{i},{baseline:.6},{clean:.6}\n"));
        if verbose {
            eprintln!("item {i}: baseline {baseline:.4}, registered {clean:.4}");
        }
        baselines.push(baseline);
        cleans.push(clean);
    }

    let movie = dataset
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| dataset.display().to_string());
    let bm = util::mean(&baselines);
    let bs = util::std_dev(&baselines, bm);
    let cm = util::mean(&cleans);
    let cs = util::std_dev(&cleans, cm);
    let ratio = if bm > 0.0 { format!("{:.6}", cm / bm) } else { String::new() };
    let summary = format!(
        "movie,items,baseline_mean,baseline_std,clean_mean,clean_std,ratio_of_means\n\
         {movie},{},{bm:.6},{bs:.6},{cm:.6},{cs:.6},{ratio}\n",
        baselines.len()
    );

    util::write_text(&results.join("eval.csv"), &rows)?;
    util::write_text(&results.join("summary.csv"), &summary)?;
    println!("{movie}: {} items", baselines.len());
    println!("  unregistered RMSE  {bm:.4} ± {bs:.4}");
    println!("  registered RMSE    {cm:.4} ± {cs:.4}");
    if bm > 0.0 {
        println!("  ratio of means     {:.4}", cm / bm);
    }
    Ok(())
}
