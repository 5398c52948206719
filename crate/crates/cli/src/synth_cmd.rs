//! `synth`: generate a benchmark dataset of distorted image pairs with
//! ground-truth transforms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use pouchreg::{generate_item, pgm, phantom_pouch, Image, Mask, SynthSpec};

use crate::util;

/// Dataset descriptor written next to the generated items, and the marker by
/// which other commands recognize a dataset directory.
#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub spec: SynthSpec,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = util::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let err = || format!("--phantom expects WIDTHxHEIGHT (e.g. 256x256), got {s:?}");
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(err)?;
    let w: usize = w.trim().parse().map_err(|_| err())?;
    let h: usize = h.trim().parse().map_err(|_| err())?;
    if w < 8 || h < 8 {
        return Err(format!("--phantom dimensions must be at least 8x8, got {w}x{h}"));
    }
    Ok((w, h))
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    reference: Option<&Path>,
    mask: Option<&Path>,
    spec_path: Option<&Path>,
    phantom: Option<&str>,
    out: &Path,
    seed: Option<u64>,
    jobs: usize,
    verbose: bool,
) -> Result<(), String> {
    let mut spec = match spec_path {
        Some(p) => {
            let text = util::read_text(p)?;
            let spec: SynthSpec =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            spec
        }
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| e.to_string())?;

    let (ref_img, ref_mask): (Image, Mask) = match (reference, mask, phantom) {
        (Some(r), Some(m), None) => {
            let img = pgm::read_image(r).map_err(|e| e.to_string())?;
            let msk = pgm::read_mask(m).map_err(|e| e.to_string())?;
            if msk.width() != img.width() || msk.height() != img.height() {
                return Err(format!(
                    "{}: mask dimensions {}x{} do not match reference {}x{}",
                    m.display(),
                    msk.width(),
                    msk.height(),
                    img.width(),
                    img.height()
                ));
            }
            (img.rescale_unit(), msk)
        }
        (None, None, Some(dims)) => {
            let (w, h) = parse_dims(dims)?;
            let (img, msk) = phantom_pouch(w, h, spec.seed);
            (img.rescale_unit(), msk)
        }
        (Some(_), None, None) | (None, Some(_), None) => {
            Err("reference image and mask must be given together".to_string())?
        }
        _ => Err("give either a reference image with its mask, or --phantom WxH".to_string())?,
    };

    util::create_dir(out)?;
    pgm::write_image(&out.join("ref.pgm"), &ref_img).map_err(|e| e.to_string())?;
    pgm::write_mask(&out.join("mask.pgm"), &ref_mask).map_err(|e| e.to_string())?;
    let manifest =
        Manifest { width: ref_img.width(), height: ref_img.height(), spec };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| format!("manifest serialization: {e}"))?;
    util::write_text(&out.join("manifest.json"), &manifest_json)?;

    util::for_each_index(spec.count, jobs, |i| {
        let item =
            generate_item(&ref_img, &ref_mask, &spec, i).map_err(|e| format!("item {i}: {e}"))?;
        let dir = out.join(i.to_string());
        util::create_dir(&dir)?;
        pgm::write_image(&dir.join("s1.pgm"), &item.s1).map_err(|e| format!("item {i}: {e}"))?;
        pgm::write_image(&dir.join("s2.pgm"), &item.s2).map_err(|e| format!("item {i}: {e}"))?;
        pgm::write_mask(&dir.join("mask.pgm"), &item.mask)
            .map_err(|e| format!("item {i}: {e}"))?;
        item.truth
            .save(&dir.join("truth.json"))
            .map_err(|e| format!("item {i}: {e}"))?;
        if verbose {
            eprintln!("item {i}: wrote {}", dir.display());
        }
        Ok(())
    })
}
