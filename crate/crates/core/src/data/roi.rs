use std::collections::BTreeMap;

use crate::data::VoxelGeometry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Area {
    pub id: String,
    pub members: Vec<usize>,
}

/// Disjoint, nonempty areas covering every voxel exactly once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiPartition {
    assignment: Vec<usize>,
    areas: Vec<Area>,
}

impl RoiPartition {
    pub fn new(areas: Vec<Area>) -> Result<Self> {
        let count: usize = areas.iter().map(|a| a.members.len()).sum();
        let mut assignment = vec![usize::MAX; count];
        for (ai, area) in areas.iter().enumerate() {
            if area.members.is_empty() {
                return Err(Error::InvalidPartition(format!("area `{}` is empty", area.id)));
            }
            for &v in &area.members {
                if v >= count {
                    return Err(Error::InvalidPartition(format!(
                        "voxel {v} in area `{}` exceeds voxel count {count}",
                        area.id
                    )));
                }
                if assignment[v] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "voxel {v} appears in more than one area"
                    )));
                }
                assignment[v] = ai;
            }
        }
        Ok(Self { assignment, areas })
    }

    /// Build from one label per voxel. Areas are ordered by first appearance.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (v, label) in labels.iter().enumerate() {
            let label = label.as_ref();
            members
                .entry(label.to_string())
                .or_insert_with(|| {
                    order.push(label.to_string());
                    Vec::new()
                })
                .push(v);
        }
        let areas = order
            .into_iter()
            .map(|id| {
                let members = members.remove(&id).unwrap_or_default();
                Area { id, members }
            })
            .collect();
        Self::new(areas)
    }

    /// Contiguous blocks of the given sizes, ids "0", "1", ….
    pub fn blocks(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let areas = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let a = Area {
                    id: i.to_string(),
                    members: (start..start + n).collect(),
                };
                start += n;
                a
            })
            .collect();
        Self::new(areas)
    }

    pub fn single(count: usize) -> Result<Self> {
        Self::blocks(&[count])
    }

    pub fn voxel_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn area_count(&self) -> usize {
        self.areas.len()
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    /// Index into [`areas`](Self::areas) of the area holding `voxel`.
    pub fn area_of(&self, voxel: usize) -> usize {
        self.assignment[voxel]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn label_of(&self, voxel: usize) -> &str {
        &self.areas[self.assignment[voxel]].id
    }
}

/// Recursively bisect every area larger than `cap` along the axis of largest
/// physical extent, at the median coordinate. The first half receives
/// `ceil(n/2)` voxels; child ids append `.0` / `.1`.
pub fn split_large_rois(
    partition: &RoiPartition,
    geometry: &VoxelGeometry,
    cap: usize,
) -> Result<RoiPartition> {
    if cap == 0 {
        return Err(Error::invalid("cap", "must be at least 1"));
    }
    if geometry.len() != partition.voxel_count() {
        return Err(Error::Dimension(format!(
            "geometry has {} voxels, partition {}",
            geometry.len(),
            partition.voxel_count()
        )));
    }
    if partition.areas.iter().all(|a| a.members.len() <= cap) {
        return Ok(partition.clone());
    }
    let mut out = Vec::new();
    for area in &partition.areas {
        bisect(area.id.clone(), area.members.clone(), geometry, cap, &mut out);
    }
    RoiPartition::new(out)
}

fn bisect(id: String, mut members: Vec<usize>, geometry: &VoxelGeometry, cap: usize, out: &mut Vec<Area>) {
    if members.len() <= cap {
        out.push(Area { id, members });
        return;
    }
    let spacing = geometry.spacing();
    let coords = geometry.coords();
    let mut best_axis = 0;
    let mut best_extent = f64::NEG_INFINITY;
    for axis in 0..3 {
        let (lo, hi) = members.iter().fold((i64::MAX, i64::MIN), |(lo, hi), &v| {
            (lo.min(coords[v][axis]), hi.max(coords[v][axis]))
        });
        let extent = (hi - lo) as f64 * spacing[axis];
        if extent > best_extent {
            best_extent = extent;
            best_axis = axis;
        }
    }
    members.sort_by_key(|&v| (coords[v][best_axis], v));
    let second = members.split_off(members.len().div_ceil(2));
    let mut first = members;
    first.sort_unstable();
    let mut second = second;
    second.sort_unstable();
    bisect(format!("{id}.0"), first, geometry, cap, out);
    bisect(format!("{id}.1"), second, geometry, cap, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> VoxelGeometry {
        VoxelGeometry::new((0..n as i64).map(|x| [x, 0, 0]).collect(), [1.0; 3]).unwrap()
    }

    fn sizes(p: &RoiPartition) -> Vec<usize> {
        p.areas().iter().map(|a| a.members.len()).collect()
    }

    #[test]
    fn line_of_450_splits_into_four() {
        let g = line(450);
        let p = RoiPartition::single(450).unwrap();
        let s = split_large_rois(&p, &g, 200).unwrap();
        assert_eq!(sizes(&s), vec![113, 112, 113, 112]);
        let ids: Vec<_> = s.areas().iter().map(|a| a.id.as_str()).collect();
        assert_eq!(ids, vec!["0.0.0", "0.0.1", "0.1.0", "0.1.1"]);
        // halves are spatially separated
        assert_eq!(s.areas()[0].members, (0..113).collect::<Vec<_>>());
    }

    #[test]
    fn single_split_of_201() {
        let g = line(201);
        let p = RoiPartition::single(201).unwrap();
        assert_eq!(sizes(&split_large_rois(&p, &g, 200).unwrap()), vec![101, 100]);
    }

    #[test]
    fn small_areas_untouched() {
        let g = line(30);
        let p = RoiPartition::blocks(&[10, 20]).unwrap();
        assert_eq!(split_large_rois(&p, &g, 20).unwrap(), p);
    }

    #[test]
    fn splits_along_longest_physical_axis() {
        // 4 voxels along x at 1mm, 2 along z at 6mm: z extent 6 > x extent 3
        let mut coords = Vec::new();
        for z in 0..2 {
            for x in 0..4 {
                coords.push([x, 0, z]);
            }
        }
        let g = VoxelGeometry::new(coords, [1.0, 1.0, 6.0]).unwrap();
        let p = RoiPartition::single(8).unwrap();
        let s = split_large_rois(&p, &g, 4).unwrap();
        assert_eq!(s.areas()[0].members, vec![0, 1, 2, 3]);
        assert_eq!(s.areas()[1].members, vec![4, 5, 6, 7]);
    }

    #[test]
    fn invalid_partitions_rejected() {
        assert!(RoiPartition::new(vec![Area { id: "a".into(), members: vec![] }]).is_err());
        assert!(RoiPartition::new(vec![
            Area { id: "a".into(), members: vec![0, 1] },
            Area { id: "b".into(), members: vec![1] },
        ])
        .is_err());
        assert!(RoiPartition::new(vec![Area { id: "a".into(), members: vec![0, 2] }]).is_err());
    }

    #[test]
    fn labels_group_in_first_seen_order() {
        let p = RoiPartition::from_labels(&["b", "a", "b"]).unwrap();
        assert_eq!(p.areas()[0].id, "b");
        assert_eq!(p.areas()[0].members, vec![0, 2]);
        assert_eq!(p.area_of(1), 1);
    }
}
