use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer grid coordinates of each voxel plus the physical voxel edge
/// lengths in millimetres.
#[derive(Debug, Clone)]
pub struct VoxelGeometry {
    coords: Vec<[i64; 3]>,
    spacing: [f64; 3],
    lookup: HashMap<[i64; 3], usize>,
}

impl VoxelGeometry {
    pub fn new(coords: Vec<[i64; 3]>, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidGeometry(format!(
                "spacing must be strictly positive, got {spacing:?}"
            )));
        }
        let mut lookup = HashMap::with_capacity(coords.len());
        for (i, c) in coords.iter().enumerate() {
            if let Some(prev) = lookup.insert(*c, i) {
                return Err(Error::InvalidGeometry(format!(
                    "voxels {prev} and {i} share coordinates {c:?}"
                )));
            }
        }
        Ok(Self {
            coords,
            spacing,
            lookup,
        })
    }

    /// Voxels laid out in x-fastest order on a `nx × ny × …` lattice with unit
    /// spacing. Handy for synthetic data.
    pub fn lattice(count: usize, nx: usize, ny: usize) -> Self {
        let coords = (0..count)
            .map(|i| {
                [
                    (i % nx) as i64,
                    ((i / nx) % ny) as i64,
                    (i / (nx * ny)) as i64,
                ]
            })
            .collect();
        Self::new(coords, [1.0; 3]).expect("lattice coordinates are distinct")
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[i64; 3]] {
        &self.coords
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Physical position in mm.
    pub fn position(&self, voxel: usize) -> [f64; 3] {
        let c = self.coords[voxel];
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    pub fn index_of(&self, coord: [i64; 3]) -> Option<usize> {
        self.lookup.get(&coord).copied()
    }

    /// Physical ℓp distance between two voxels.
    pub fn distance(&self, i: usize, j: usize, norm: BallNorm) -> f64 {
        let (a, b) = (self.coords[i], self.coords[j]);
        norm.length([
            (a[0] - b[0]) as f64 * self.spacing[0],
            (a[1] - b[1]) as f64 * self.spacing[1],
            (a[2] - b[2]) as f64 * self.spacing[2],
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BallNorm {
    L1,
    L2,
}

impl BallNorm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(BallNorm::L1),
            2 => Ok(BallNorm::L2),
            other => Err(Error::invalid("p", format!("expected 1 or 2, got {other}"))),
        }
    }

    pub fn p(&self) -> u32 {
        match self {
            BallNorm::L1 => 1,
            BallNorm::L2 => 2,
        }
    }

    fn length(&self, d: [f64; 3]) -> f64 {
        match self {
            BallNorm::L1 => d[0].abs() + d[1].abs() + d[2].abs(),
            BallNorm::L2 => (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt(),
        }
    }
}

/// All voxels (center included) within physical ℓp distance `radius` of
/// `center`, sorted by index.
pub fn ball_neighbors(
    geometry: &VoxelGeometry,
    center: usize,
    norm: BallNorm,
    radius: f64,
) -> Result<Vec<usize>> {
    if center >= geometry.len() {
        return Err(Error::VoxelOutOfRange {
            index: center,
            count: geometry.len(),
        });
    }
    if !(radius >= 0.0) {
        return Err(Error::invalid("radius", format!("must be >= 0, got {radius}")));
    }
    let reach: Vec<i64> = geometry
        .spacing
        .iter()
        .map(|s| ((radius / s).floor() as i64).saturating_add(1))
        .collect();
    let box_volume = reach
        .iter()
        .map(|r| (2 * r + 1) as f64)
        .product::<f64>();

    let mut out = Vec::new();
    if box_volume > geometry.len() as f64 {
        // offset enumeration would visit more cells than there are voxels
        for j in 0..geometry.len() {
            if geometry.distance(center, j, norm) <= radius {
                out.push(j);
            }
        }
        return Ok(out);
    }
    let c = geometry.coords[center];
    for dz in -reach[2]..=reach[2] {
        for dy in -reach[1]..=reach[1] {
            for dx in -reach[0]..=reach[0] {
                let Some(j) = geometry.index_of([c[0] + dx, c[1] + dy, c[2] + dz]) else {
                    continue;
                };
                if geometry.distance(center, j, norm) <= radius {
                    out.push(j);
                }
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: i64) -> VoxelGeometry {
        let mut coords = Vec::new();
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    coords.push([x, y, z]);
                }
            }
        }
        VoxelGeometry::new(coords, [1.0; 3]).unwrap()
    }

    #[test]
    fn zero_radius_is_center_only() {
        let g = cube(3);
        assert_eq!(ball_neighbors(&g, 13, BallNorm::L2, 0.0).unwrap(), vec![13]);
        assert_eq!(ball_neighbors(&g, 13, BallNorm::L1, 0.0).unwrap(), vec![13]);
    }

    #[test]
    fn unit_l1_ball_has_face_neighbors() {
        let g = cube(3);
        let ball = ball_neighbors(&g, 13, BallNorm::L1, 1.0).unwrap();
        assert_eq!(ball.len(), 7);
    }

    #[test]
    fn anisotropic_spacing_uses_millimetres() {
        let g = VoxelGeometry::new(vec![[0, 0, 0], [1, 0, 0], [0, 0, 1]], [3.125, 3.125, 6.0])
            .unwrap();
        assert_eq!(ball_neighbors(&g, 0, BallNorm::L2, 4.0).unwrap(), vec![0, 1]);
        assert_eq!(ball_neighbors(&g, 0, BallNorm::L2, 6.0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = cube(2);
        assert!(matches!(
            ball_neighbors(&g, 8, BallNorm::L1, 1.0),
            Err(Error::VoxelOutOfRange { index: 8, count: 8 })
        ));
        assert!(ball_neighbors(&g, 0, BallNorm::L1, -1.0).is_err());
        assert!(VoxelGeometry::new(vec![[0, 0, 0], [0, 0, 0]], [1.0; 3]).is_err());
        assert!(VoxelGeometry::new(vec![[0, 0, 0]], [1.0, 0.0, 1.0]).is_err());
        assert!(BallNorm::from_p(3).is_err());
    }

    #[test]
    fn huge_radius_covers_everything() {
        let g = cube(4);
        assert_eq!(ball_neighbors(&g, 0, BallNorm::L1, 1e9).unwrap().len(), 64);
    }
}
