//! The registration result: an ordered composition of one rigid transform
//! and a hierarchy of free-form deformation levels, with versioned JSON
//! serialization and numeric point inversion.
//!
//! Evaluation order is fixed: rigid first, then each level in index order.
//! In the backward-warp convention the chain maps reference-frame
//! coordinates to source-frame sample positions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::ffd::Lattice;
use crate::geom::{Point, RoiRect};
use crate::rigid::RigidParams;

/// Current on-disk document version.
pub const CHAIN_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TransformChain {
    pub rigid: RigidParams,
    pub levels: Vec<Lattice>,
}

impl TransformChain {
    pub fn identity() -> Self {
        TransformChain { rigid: RigidParams::identity(), levels: Vec::new() }
    }

    pub fn from_rigid(rigid: RigidParams) -> Self {
        TransformChain { rigid, levels: Vec::new() }
    }

    /// Apply rigid, then each level's p -> p + f_level(p) in order.
    pub fn apply(&self, p: Point) -> Point {
        let mut q = self.rigid.apply(p);
        for level in &self.levels {
            q = level.apply(q);
        }
        q
    }

    /// Numerically solve chain(p) = q for p.
    ///
    /// The rigid part inverts in closed form; the deformation stack is
    /// inverted by fixed-point iteration r <- r + (q - F(r)), which
    /// converges when control displacements are small relative to cell
    /// size (locally contractive deformations — the regularized optimum in
    /// practice). Returns the best iterate if the tolerance is not reached.
    ///
    /// Reliable for points mapping well inside the deformation domain; at
    /// the domain edge the displacement field cuts off, so a target just
    /// outside can also be explained by the identity branch.
    pub fn invert_point(&self, q: Point, tol: f64, max_iters: usize) -> Point {
        // Solve F(r) = q where F is the level stack only.
        let apply_levels = |mut r: Point| {
            for level in &self.levels {
                r = level.apply(r);
            }
            r
        };
        let mut r = q;
        let mut best = r;
        let mut best_err = f64::INFINITY;
        for _ in 0..max_iters {
            let err_v = q - apply_levels(r);
            let err = err_v.norm();
            if err < best_err {
                best_err = err;
                best = r;
            }
            if err < tol {
                break;
            }
            r = r + err_v;
        }
        // Then p = rigid^{-1}(r).
        self.rigid.inverse().apply(best)
    }

    /// Serialize to the versioned JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ChainDoc::from(self)).expect("chain serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ChainDoc = serde_json::from_str(text)?;
        doc.into_chain()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())
            .map_err(|e| RegError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| RegError::Io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }
}

/// On-disk schema. Control displacements are stored as row-major [dx, dy]
/// pairs; serde_json prints f64 values with shortest-round-trip formatting,
/// so save/load is lossless.
#[derive(Serialize, Deserialize)]
struct ChainDoc {
    version: u32,
    rigid: RigidParams,
    levels: Vec<LevelDoc>,
}

#[derive(Serialize, Deserialize)]
struct LevelDoc {
    domain: RoiRect,
    m: usize,
    n: usize,
    displacements: Vec<[f64; 2]>,
}

impl From<&TransformChain> for ChainDoc {
    fn from(chain: &TransformChain) -> Self {
        ChainDoc {
            version: CHAIN_VERSION,
            rigid: chain.rigid,
            levels: chain
                .levels
                .iter()
                .map(|lat| LevelDoc {
                    domain: lat.domain(),
                    m: lat.m(),
                    n: lat.n(),
                    displacements: lat.displacements().iter().map(|d| [d.x, d.y]).collect(),
                })
                .collect(),
        }
    }
}

impl ChainDoc {
    fn into_chain(self) -> Result<TransformChain> {
        if self.version != CHAIN_VERSION {
            return Err(RegError::UnsupportedVersion(self.version, CHAIN_VERSION));
        }
        let mut levels = Vec::with_capacity(self.levels.len());
        for l in self.levels {
            let disps = l.displacements.iter().map(|d| Point::new(d[0], d[1])).collect();
            levels.push(Lattice::with_displacements(l.domain, l.m, l.n, disps)?);
        }
        Ok(TransformChain { rigid: self.rigid, levels })
    }
}
