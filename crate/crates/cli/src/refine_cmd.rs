//! `refine`: snap a rough region mask onto the strongest nearby intensity
//! edge and export the result as a mask plus boundary polygon.

use std::path::Path;

use pouchreg::{pgm, refine_boundary};

use crate::config::PipelineConfig;
use crate::util;

pub fn run(image: &Path, mask: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), String> {
    let img = pgm::read_image(image).map_err(|e| e.to_string())?;
    let initial = pgm::read_mask(mask).map_err(|e| e.to_string())?;
    if initial.width() != img.width() || initial.height() != img.height() {
        return Err(format!(
            "{}: mask dimensions {}x{} do not match image {}x{}",
            mask.display(),
            initial.width(),
            initial.height(),
            img.width(),
            img.height()
        ));
    }
    let result = refine_boundary(&img, &initial, &cfg.boundary).map_err(|e| e.to_string())?;
    if result.band_clipped {
        eprintln!("warning: search band clipped at the frame edge; boundary may be truncated");
    }

    util::create_dir(out)?;
    pgm::write_mask(&out.join("refined_mask.pgm"), &result.mask).map_err(|e| e.to_string())?;
    let mut csv = String::from("theta_index,x,y\n");
    for (i, p) in result.polygon.iter().enumerate() {
        csv.push_str(&format!("{i},{:.6},{:.6}\n", p.x, p.y));
    }
    util::write_text(&out.join("polygon.csv"), &csv)?;
    Ok(())
}
