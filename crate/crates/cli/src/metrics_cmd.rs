//! `metrics`: standalone similarity measurements between files, printed as
//! `metric,value` CSV on stdout.

use std::path::PathBuf;

use clap::Subcommand;

use pouchreg::metrics::boundary_points;
use pouchreg::{hausdorff, overlap, pgm, rmse};

#[derive(Subcommand)]
pub enum What {
    /// Overlap (IoU, F1) and boundary Hausdorff distance of two masks.
    Masks {
        /// First mask (.pgm, nonzero = foreground).
        a: PathBuf,
        /// Second mask (.pgm).
        b: PathBuf,
    },
    /// Root-mean-square intensity difference of two images.
    Images {
        /// First image (.pgm).
        a: PathBuf,
        /// Second image (.pgm).
        b: PathBuf,
        /// Restrict the comparison to a mask's foreground.
        #[arg(long)]
        region: Option<PathBuf>,
    },
}

pub fn run(what: &What) -> Result<(), String> {
    match what {
        What::Masks { a, b } => {
            let ma = pgm::read_mask(a).map_err(|e| e.to_string())?;
            let mb = pgm::read_mask(b).map_err(|e| e.to_string())?;
            let ov = overlap(&ma, &mb).map_err(|e| e.to_string())?;
            println!("iou,{:.6}", ov.iou);
            println!("f1,{:.6}", ov.f1);
            if ov.vacuous {
                eprintln!("note: both masks are empty; overlap reported as perfect");
            }
            let pa = boundary_points(&ma);
            let pb = boundary_points(&mb);
            if pa.is_empty() || pb.is_empty() {
                eprintln!("note: a mask has no boundary; Hausdorff distance skipped");
            } else {
                let hd = hausdorff(&pa, &pb).map_err(|e| e.to_string())?;
                println!("hausdorff_px,{hd:.6}");
            }
            Ok(())
        }
        What::Images { a, b, region } => {
            let ia = pgm::read_image(a).map_err(|e| e.to_string())?;
            let ib = pgm::read_image(b).map_err(|e| e.to_string())?;
            let mask = match region {
                Some(r) => Some(pgm::read_mask(r).map_err(|e| e.to_string())?),
                None => None,
            };
            let value = rmse(&ia, &ib, mask.as_ref()).map_err(|e| e.to_string())?;
            println!("rmse,{value:.6}");
            Ok(())
        }
    }
}
