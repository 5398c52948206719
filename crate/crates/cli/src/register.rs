//! `register`: align frames to a reference.
//!
//! Two input shapes are accepted:
//! - a sequence directory of .pgm frames (first frame = reference), each
//!   frame registered with the previous frame's rigid optimum as the warm
//!   start, masks ingested from a sibling directory;
//! - a dataset directory produced by `synth` (detected by manifest.json),
//!   whose items are independent and may be processed in parallel.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pouchreg::boundary::mask_polygon;
use pouchreg::metrics::hausdorff;
use pouchreg::{
    pgm, register_nonrigid_from, register_rigid, Image, Mask, Point, RigidParams, TransformChain,
};

use crate::config::PipelineConfig;
use crate::synth_cmd::Manifest;
use crate::util;

pub fn run(
    input: &Path,
    masks: Option<&Path>,
    out: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
    verbose: bool,
) -> Result<(), String> {
    if !input.is_dir() {
        return Err(format!("{}: directory not found", input.display()));
    }
    if input.join("manifest.json").is_file() {
        dataset_mode(input, out, cfg, jobs, verbose)
    } else {
        let masks = masks.ok_or_else(|| {
            format!(
                "{}: not a dataset (no manifest.json); sequence mode needs a masks directory",
                input.display()
            )
        })?;
        sequence_mode(input, masks, out, cfg, verbose)
    }
}

/// Ingest a mask, optionally snapping it to image edges first.
fn ingest_mask(
    img: &Image,
    mask: &Mask,
    cfg: &PipelineConfig,
    what: &str,
) -> Result<Mask, String> {
    if !cfg.refine_masks {
        return Ok(mask.clone());
    }
    let refined = pouchreg::refine_boundary(img, mask, &cfg.boundary)
        .map_err(|e| format!("{what}: boundary refinement: {e}"))?;
    if refined.band_clipped {
        eprintln!("warning: {what}: refinement band clipped at the frame edge");
    }
    Ok(refined.mask)
}

fn dataset_mode(
    input: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    jobs: usize,
    verbose: bool,
) -> Result<(), String> {
    let manifest = Manifest::load(&input.join("manifest.json"))?;
    let ref_img = pgm::read_image(&input.join("ref.pgm")).map_err(|e| e.to_string())?;
    let ref_mask_raw = pgm::read_mask(&input.join("mask.pgm")).map_err(|e| e.to_string())?;
    let ref_mask = ingest_mask(&ref_img, &ref_mask_raw, cfg, "reference mask")?;
    util::create_dir(out)?;

    util::for_each_index(manifest.spec.count, jobs, |i| {
        let item_dir = input.join(i.to_string());
        let src = pgm::read_image(&item_dir.join("s2.pgm"))
            .map_err(|e| format!("item {i}: {e}"))?;
        let mask_raw = pgm::read_mask(&item_dir.join("mask.pgm"))
            .map_err(|e| format!("item {i}: {e}"))?;
        let src_mask = ingest_mask(&src, &mask_raw, cfg, &format!("item {i} mask"))?;

        let (rigid, _) = register_rigid(&ref_mask, &src_mask, RigidParams::identity(), &cfg.rigid)
            .map_err(|e| format!("item {i}: rigid stage: {e}"))?;
        let (chain, _) =
            register_nonrigid_from(&ref_img, &src, &ref_mask, rigid, None, &cfg.nonrigid)
                .map_err(|e| format!("item {i}: deformable stage: {e}"))?;

        let out_item = out.join(i.to_string());
        util::create_dir(&out_item)?;
        chain
            .save(&out_item.join("transform.json"))
            .map_err(|e| format!("item {i}: {e}"))?;
        if verbose {
            eprintln!(
                "item {i}: rigid theta {:.4} rad, t ({:.2}, {:.2})",
                chain.rigid.theta, chain.rigid.tx, chain.rigid.ty
            );
        }
        Ok(())
    })
}

/// Progress of a sequence run, persisted so interrupted runs resume after
/// the last completed frame.
#[derive(Serialize, Deserialize)]
struct RunState {
    /// Index of the last frame whose outputs are complete.
    completed: usize,
    /// That frame's rigid optimum (next frame's warm start).
    rigid: RigidParams,
    /// Per-frame boundary distance (frames 1..=completed); null when a
    /// frame has no own mask.
    hd: Vec<Option<f64>>,
}

fn frame_name(k: usize) -> String {
    format!("{k:04}")
}

fn sequence_mode(
    input: &Path,
    masks_dir: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    verbose: bool,
) -> Result<(), String> {
    let frames = util::sorted_pgms(input)?;
    if frames.len() < 2 {
        return Err(format!(
            "{}: a sequence needs at least 2 frames, found {}",
            input.display(),
            frames.len()
        ));
    }
    let mask_files = util::sorted_pgms(masks_dir)?;
    let per_frame = mask_files.len() == frames.len();
    if !per_frame && mask_files.len() != 1 {
        return Err(format!(
            "{}: expected 1 mask or {} (one per frame), found {}",
            masks_dir.display(),
            frames.len(),
            mask_files.len()
        ));
    }

    let name = |p: &PathBuf| p.file_name().unwrap_or_default().to_string_lossy().to_string();
    let ref_img = pgm::read_image(&frames[0]).map_err(|e| e.to_string())?;
    let ref_mask_raw = pgm::read_mask(&mask_files[0]).map_err(|e| e.to_string())?;
    if ref_mask_raw.width() != ref_img.width() || ref_mask_raw.height() != ref_img.height() {
        return Err(format!(
            "{}: mask dimensions do not match frame {}",
            name(&mask_files[0]),
            name(&frames[0])
        ));
    }
    let ref_mask = ingest_mask(&ref_img, &ref_mask_raw, cfg, &name(&mask_files[0]))?;
    let ref_center = ref_mask.centroid().map_err(|e| e.to_string())?;
    let ref_poly = mask_polygon(&ref_mask, ref_center, cfg.boundary.angular_samples)
        .map_err(|e| format!("reference annotation: {e}"))?;

    util::create_dir(out)?;
    let state_path = out.join("state.json");
    let mut state = if state_path.is_file() {
        let text = util::read_text(&state_path)?;
        let state: RunState =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", state_path.display()))?;
        if state.completed >= frames.len() {
            return Err(format!(
                "{}: records {} completed frames but the sequence has {}",
                state_path.display(),
                state.completed,
                frames.len() - 1
            ));
        }
        state
    } else {
        RunState { completed: 0, rigid: RigidParams::identity(), hd: Vec::new() }
    };

    // Warm lattices come from the last completed frame's saved transform.
    let mut prev_levels = if cfg.warm_start_nonrigid && state.completed >= 1 {
        let path = out.join(format!("transform_{}.json", frame_name(state.completed)));
        Some(TransformChain::load(&path).map_err(|e| e.to_string())?.levels)
    } else {
        None
    };

    for k in state.completed + 1..frames.len() {
        let fname = name(&frames[k]);
        let src = pgm::read_image(&frames[k]).map_err(|e| e.to_string())?;
        if src.width() != ref_img.width() || src.height() != ref_img.height() {
            return Err(format!(
                "{fname}: dimensions {}x{} differ from the reference {}x{}",
                src.width(),
                src.height(),
                ref_img.width(),
                ref_img.height()
            ));
        }

        let src_mask = if per_frame {
            let m = pgm::read_mask(&mask_files[k]).map_err(|e| e.to_string())?;
            if m.width() != src.width() || m.height() != src.height() {
                return Err(format!(
                    "{}: mask dimensions do not match frame {fname}",
                    name(&mask_files[k])
                ));
            }
            Some(ingest_mask(&src, &m, cfg, &name(&mask_files[k]))?)
        } else {
            None
        };

        // Phase one: rigid, warm-started from the previous frame. Without a
        // per-frame mask there is nothing to drive it, so it stays identity.
        let rigid = match &src_mask {
            Some(m) => {
                register_rigid(&ref_mask, m, state.rigid, &cfg.rigid)
                    .map_err(|e| format!("{fname}: rigid stage: {e}"))?
                    .0
            }
            None => RigidParams::identity(),
        };

        // Phase two: deformable refinement over the reference region.
        let (chain, _) = register_nonrigid_from(
            &ref_img,
            &src,
            &ref_mask,
            rigid,
            prev_levels.as_deref(),
            &cfg.nonrigid,
        )
        .map_err(|e| format!("{fname}: deformable stage: {e}"))?;

        let tag = frame_name(k);
        chain
            .save(&out.join(format!("transform_{tag}.json")))
            .map_err(|e| e.to_string())?;
        let registered = src.warp(&chain);
        pgm::write_image(&out.join(format!("registered_{tag}.pgm")), &registered.image)
            .map_err(|e| e.to_string())?;
        let mut overlay = registered.image.clone();
        draw_polygon(&mut overlay, &ref_poly);
        pgm::write_image(&out.join(format!("overlay_{tag}.pgm")), &overlay)
            .map_err(|e| e.to_string())?;

        // Annotation transfer: map this frame's boundary polygon back into
        // reference coordinates and compare with the reference boundary.
        let hd = match &src_mask {
            Some(m) => {
                let center = m.centroid().map_err(|e| format!("{fname}: {e}"))?;
                let poly = mask_polygon(m, center, cfg.boundary.angular_samples)
                    .map_err(|e| format!("{fname}: annotation: {e}"))?;
                let propagated: Vec<Point> =
                    poly.iter().map(|v| chain.invert_point(*v, 1e-8, 200)).collect();
                let mut csv = String::from("theta_index,x,y\n");
                for (i, p) in propagated.iter().enumerate() {
                    csv.push_str(&format!("{i},{:.6},{:.6}\n", p.x, p.y));
                }
                util::write_text(&out.join(format!("annotation_{tag}.csv")), &csv)?;
                Some(
                    hausdorff(&propagated, &ref_poly)
                        .map_err(|e| format!("{fname}: annotation distance: {e}"))?,
                )
            }
            None => None,
        };

        if verbose {
            let hd_text = hd.map_or("n/a".to_string(), |v| format!("{v:.3} px"));
            eprintln!(
                "frame {k}/{}: {fname}: rigid theta {:.4} rad, boundary distance {hd_text}",
                frames.len() - 1,
                rigid.theta
            );
        }

        if cfg.warm_start_nonrigid {
            prev_levels = Some(chain.levels.clone());
        }
        state.completed = k;
        state.rigid = rigid;
        state.hd.push(hd);
        let state_json = serde_json::to_string_pretty(&state)
            .map_err(|e| format!("state serialization: {e}"))?;
        util::write_text(&state_path, &state_json)?;
        write_metrics(out, input, &frames, &state)?;
    }
    Ok(())
}

/// Rewrite the consolidated metrics table from the run state (idempotent, so
/// resumed runs keep earlier rows).
fn write_metrics(
    out: &Path,
    input: &Path,
    frames: &[PathBuf],
    state: &RunState,
) -> Result<(), String> {
    let movie = input
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| input.display().to_string());
    let mut csv = String::from("movie,frame,metric,value\n");
    for (idx, hd) in state.hd.iter().enumerate() {
        if let Some(v) = hd {
            let k = idx + 1;
            let fname =
                frames[k].file_name().unwrap_or_default().to_string_lossy().to_string();
            csv.push_str(&format!("{movie},{fname},annotation_hd_px,{v:.6}\n"));
        }
    }
    util::write_text(&out.join("metrics.csv"), &csv)
}

/// Paint a closed polygon outline (pixel value 1.0) over an image.
fn draw_polygon(img: &mut Image, poly: &[Point]) {
    if poly.is_empty() {
        return;
    }
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let steps = (a.dist(b) / 0.5).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = (a.x + t * (b.x - a.x)).round();
            let y = (a.y + t * (b.y - a.y)).round();
            if x >= 0.0 && y >= 0.0 && (x as usize) < img.width() && (y as usize) < img.height() {
                img.set(x as usize, y as usize, 1.0);
            }
        }
    }
}
