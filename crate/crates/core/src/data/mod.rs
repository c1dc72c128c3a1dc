//! Datasets, voxel geometry, ROI partitions and the static/dynamic design
//! constructions.

mod geometry;
pub mod io;
mod lag;
mod roi;

pub use geometry::{ball_neighbors, BallNorm, VoxelGeometry};
pub use lag::{build_lag_design, LaggedDesign};
pub use roi::{split_large_rois, Area, RoiPartition};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the rows of a design matrix relate to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Independent stimuli, one row each.
    Static,
    /// Time series; each row concatenates `lag` copies of `base_features`.
    Dynamic { base_features: usize, lag: usize },
}

impl DatasetKind {
    pub fn is_dynamic(&self) -> bool {
        matches!(self, DatasetKind::Dynamic { .. })
    }
}

/// A design matrix `X` (T×P), the response matrix `Y` (T×V), and the
/// spatial layout of the V voxels.
#[derive(Debug, Clone)]
pub struct Dataset {
    design: DMatrix<f64>,
    responses: DMatrix<f64>,
    geometry: VoxelGeometry,
    rois: RoiPartition,
    kind: DatasetKind,
}

impl Dataset {
    pub fn new(
        design: DMatrix<f64>,
        responses: DMatrix<f64>,
        geometry: VoxelGeometry,
        rois: RoiPartition,
        kind: DatasetKind,
    ) -> Result<Self> {
        if design.nrows() != responses.nrows() {
            return Err(Error::Dimension(format!(
                "design has {} rows but responses have {}",
                design.nrows(),
                responses.nrows()
            )));
        }
        let v = responses.ncols();
        if geometry.len() != v {
            return Err(Error::Dimension(format!(
                "geometry has {} voxels but responses have {v} columns",
                geometry.len()
            )));
        }
        if rois.voxel_count() != v {
            return Err(Error::Dimension(format!(
                "partition covers {} voxels but responses have {v} columns",
                rois.voxel_count()
            )));
        }
        if let DatasetKind::Dynamic { base_features, lag } = kind {
            if base_features * lag != design.ncols() {
                return Err(Error::Dimension(format!(
                    "dynamic design should have {base_features}x{lag} columns, found {}",
                    design.ncols()
                )));
            }
        }
        Ok(Self {
            design,
            responses,
            geometry,
            rois,
            kind,
        })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn responses(&self) -> &DMatrix<f64> {
        &self.responses
    }

    pub fn geometry(&self) -> &VoxelGeometry {
        &self.geometry
    }

    pub fn rois(&self) -> &RoiPartition {
        &self.rois
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn features(&self) -> usize {
        self.design.ncols()
    }

    pub fn voxels(&self) -> usize {
        self.responses.ncols()
    }

    /// Same dataset with the responses replaced (e.g. smoothed).
    pub fn with_responses(&self, responses: DMatrix<f64>) -> Result<Self> {
        Self::new(
            self.design.clone(),
            responses,
            self.geometry.clone(),
            self.rois.clone(),
            self.kind,
        )
    }

    /// Same dataset with a different ROI partition.
    pub fn with_rois(&self, rois: RoiPartition) -> Result<Self> {
        Self::new(
            self.design.clone(),
            self.responses.clone(),
            self.geometry.clone(),
            rois,
            self.kind,
        )
    }

    /// Copy of the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            design: select_rows(&self.design, rows),
            responses: select_rows(&self.responses, rows),
            geometry: self.geometry.clone(),
            rois: self.rois.clone(),
            kind: self.kind,
        }
    }
}

pub(crate) fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}
