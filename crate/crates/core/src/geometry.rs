//! Voxel clouds, Morton ordering and the per-level node hierarchy.

use alloc::vec;
use alloc::vec::Vec;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::Order;

pub const MAX_DEPTH: u32 = 20;

/// Marks an absent neighbour slot.
pub const NO_NODE: u32 = u32::MAX;

/// Points as read from a file, before voxelization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCloud {
    pub positions: Vec<[f64; 3]>,
    /// Row-major, `positions.len() * channels` values.
    pub attributes: Vec<f64>,
    pub channels: usize,
}

/// Unique voxels in `[0, 2^depth)^3`, sorted by Morton code.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub depth: u32,
    pub positions: Vec<[u32; 3]>,
    pub attributes: Vec<f64>,
    pub channels: usize,
}

impl PointCloud {
    /// Builds a cloud from voxel positions, sorting by Morton code and
    /// averaging attributes of duplicates.
    pub fn from_voxels(
        depth: u32,
        positions: Vec<[u32; 3]>,
        attributes: Vec<f64>,
        channels: usize,
    ) -> Result<Self> {
        check_depth(depth)?;
        if channels == 0 {
            return Err(Error::InvalidInput("at least one attribute channel required".into()));
        }
        if attributes.len() != positions.len() * channels {
            return Err(Error::InvalidInput("attribute count does not match positions".into()));
        }
        let side = 1u64 << depth;
        if positions.iter().flatten().any(|&c| u64::from(c) >= side) {
            return Err(Error::InvalidInput("voxel coordinate outside [0, 2^depth)".into()));
        }
        let mut idx: Vec<usize> = (0..positions.len()).collect();
        idx.sort_by_key(|&i| morton_encode(positions[i]));
        let mut out_pos: Vec<[u32; 3]> = Vec::with_capacity(positions.len());
        let mut out_attr: Vec<f64> = Vec::with_capacity(attributes.len());
        let mut counts: Vec<f64> = Vec::new();
        for &i in &idx {
            let row = &attributes[i * channels..(i + 1) * channels];
            if out_pos.last() == Some(&positions[i]) {
                let base = out_attr.len() - channels;
                for (acc, v) in out_attr[base..].iter_mut().zip(row) {
                    *acc += v;
                }
                *counts.last_mut().unwrap() += 1.0;
            } else {
                out_pos.push(positions[i]);
                out_attr.extend_from_slice(row);
                counts.push(1.0);
            }
        }
        for (k, &c) in counts.iter().enumerate() {
            if c > 1.0 {
                for v in &mut out_attr[k * channels..(k + 1) * channels] {
                    *v /= c;
                }
            }
        }
        Ok(Self { depth, positions: out_pos, attributes: out_attr, channels })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// SHA-256 of depth and Morton-ordered positions.
    pub fn digest(&self) -> [u8; 32] {
        geometry_digest(self.depth, &self.positions)
    }
}

pub fn geometry_digest(depth: u32, positions: &[[u32; 3]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(depth.to_le_bytes());
    h.update((positions.len() as u64).to_le_bytes());
    for p in positions {
        for c in p {
            h.update(c.to_le_bytes());
        }
    }
    h.finalize().into()
}

fn check_depth(depth: u32) -> Result<()> {
    if depth == 0 || depth > MAX_DEPTH {
        Err(Error::DepthOutOfRange(depth))
    } else {
        Ok(())
    }
}

/// Maps raw positions into the voxel grid `[0, 2^depth)^3`.
///
/// Clouds whose coordinates already lie in `[0, 2^depth)` are only floored.
/// Anything else is shifted to its minimum corner and uniformly scaled so the
/// largest extent spans the grid.
pub fn voxelize(raw: &RawCloud, depth: u32) -> Result<PointCloud> {
    check_depth(depth)?;
    if raw.positions.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    if raw.positions.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::InvalidInput("non-finite coordinate".into()));
    }
    let side = (1u64 << depth) as f64;
    let fits = raw.positions.iter().flatten().all(|&c| c >= 0.0 && c < side);
    let (origin, scale) = if fits {
        ([0.0; 3], 1.0)
    } else {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &raw.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let scale = if extent > 0.0 { side / extent } else { 1.0 };
        (lo, scale)
    };
    let max = (1u32 << depth) - 1;
    let positions = raw
        .positions
        .iter()
        .map(|p| {
            let mut v = [0u32; 3];
            for a in 0..3 {
                let c = libm::floor((p[a] - origin[a]) * scale);
                v[a] = (c.max(0.0) as u32).min(max);
            }
            v
        })
        .collect();
    PointCloud::from_voxels(depth, positions, raw.attributes.clone(), raw.channels)
}

fn spread(v: u32) -> u64 {
    let mut x = u64::from(v) & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Interleaves 21-bit coordinates; x occupies the lowest bit of each triple.
pub fn morton_encode(p: [u32; 3]) -> u64 {
    spread(p[0]) | (spread(p[1]) << 1) | (spread(p[2]) << 2)
}

pub fn morton_decode(code: u64) -> [u32; 3] {
    [compact(code), compact(code >> 1), compact(code >> 2)]
}

/// Index of a displacement in `{-1,0,1}^3` within a 27-slot stencil.
#[inline]
pub fn slot(d: [i32; 3]) -> usize {
    ((d[0] + 1) * 9 + (d[1] + 1) * 3 + (d[2] + 1)) as usize
}

/// Inverse of [`slot`].
#[inline]
pub fn slot_offset(s: usize) -> [i32; 3] {
    let s = s as i32;
    [s / 9 - 1, (s / 3) % 3 - 1, s % 3 - 1]
}

pub const CENTER_SLOT: usize = 13;

/// One parent/child relation, `offset = child - 2 * parent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub node: u32,
    pub offset: [i8; 3],
}

impl Link {
    pub fn offset_i32(&self) -> [i32; 3] {
        [self.offset[0] as i32, self.offset[1] as i32, self.offset[2] as i32]
    }
}

/// Compressed adjacency lists, one list per node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    starts: Vec<u32>,
    links: Vec<Link>,
}

impl Adjacency {
    pub fn of(&self, i: usize) -> &[Link] {
        &self.links[self.starts[i] as usize..self.starts[i + 1] as usize]
    }

    /// Range of link positions for node `i`, useful for link-aligned weights.
    pub fn range(&self, i: usize) -> core::ops::Range<usize> {
        self.starts[i] as usize..self.starts[i + 1] as usize
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node_count(&self) -> usize {
        self.starts.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelGeometry {
    pub level: u32,
    /// Node lattice coordinates, Morton-sorted.
    pub nodes: Vec<[u32; 3]>,
    pub codes: Vec<u64>,
    /// 27-neighbour table indexed by [`slot`]; [`NO_NODE`] when absent.
    pub neighbors: Vec<[u32; 27]>,
    /// Links to level `level + 1`; empty at the finest level.
    pub children: Adjacency,
    /// Links to level `level - 1`; empty at level 0.
    pub parents: Adjacency,
}

impl LevelGeometry {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, p: [u32; 3]) -> Option<usize> {
        self.codes.binary_search(&morton_encode(p)).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub order: Order,
    pub depth: u32,
    /// `levels[l]` for `l = 0..=depth`.
    pub levels: Vec<LevelGeometry>,
}

impl Hierarchy {
    pub fn level(&self, l: u32) -> &LevelGeometry {
        &self.levels[l as usize]
    }

    pub fn finest(&self) -> &LevelGeometry {
        &self.levels[self.depth as usize]
    }
}

/// Parents of a node under the refinement kernel, with their offsets.
fn parent_candidates(order: Order, m: [u32; 3], out: &mut Vec<([u32; 3], [i8; 3])>) {
    out.clear();
    match order {
        Order::P1 => out.push(([m[0] >> 1, m[1] >> 1, m[2] >> 1], [
            (m[0] & 1) as i8,
            (m[1] & 1) as i8,
            (m[2] & 1) as i8,
        ])),
        Order::P2 => {
            let mut opts: [[(u32, i8); 2]; 3] = [[(0, 0); 2]; 3];
            let mut counts = [0usize; 3];
            for a in 0..3 {
                if m[a] & 1 == 0 {
                    opts[a][0] = (m[a] >> 1, 0);
                    counts[a] = 1;
                } else {
                    opts[a][0] = (m[a] >> 1, 1);
                    opts[a][1] = ((m[a] >> 1) + 1, -1);
                    counts[a] = 2;
                }
            }
            for ix in 0..counts[0] {
                for iy in 0..counts[1] {
                    for iz in 0..counts[2] {
                        let (x, dx) = opts[0][ix];
                        let (y, dy) = opts[1][iy];
                        let (z, dz) = opts[2][iz];
                        out.push(([x, y, z], [dx, dy, dz]));
                    }
                }
            }
        }
    }
}

fn neighbor_table(nodes: &[[u32; 3]], codes: &[u64]) -> Vec<[u32; 27]> {
    nodes
        .iter()
        .map(|n| {
            let mut row = [NO_NODE; 27];
            for (s, entry) in row.iter_mut().enumerate() {
                let d = slot_offset(s);
                let q = [
                    n[0] as i64 + d[0] as i64,
                    n[1] as i64 + d[1] as i64,
                    n[2] as i64 + d[2] as i64,
                ];
                if q.iter().any(|&c| c < 0) {
                    continue;
                }
                let code = morton_encode([q[0] as u32, q[1] as u32, q[2] as u32]);
                if let Ok(k) = codes.binary_search(&code) {
                    *entry = k as u32;
                }
            }
            row
        })
        .collect()
}

/// Builds node sets `N_0..N_L` by kernel-support closure from the voxels up.
pub fn build_hierarchy(cloud: &PointCloud, order: Order) -> Result<Hierarchy> {
    check_depth(cloud.depth)?;
    if cloud.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    let depth = cloud.depth;
    let mut node_sets: Vec<Vec<[u32; 3]>> = vec![Vec::new(); depth as usize + 1];
    node_sets[depth as usize] = cloud.positions.clone();
    let mut cand = Vec::new();
    for l in (0..depth as usize).rev() {
        let mut codes: Vec<u64> = Vec::new();
        for &m in &node_sets[l + 1] {
            parent_candidates(order, m, &mut cand);
            codes.extend(cand.iter().map(|(n, _)| morton_encode(*n)));
        }
        codes.sort_unstable();
        codes.dedup();
        node_sets[l] = codes.into_iter().map(morton_decode).collect();
    }

    let mut levels: Vec<LevelGeometry> = node_sets
        .into_iter()
        .enumerate()
        .map(|(l, nodes)| {
            let codes: Vec<u64> = nodes.iter().map(|&n| morton_encode(n)).collect();
            let neighbors = neighbor_table(&nodes, &codes);
            LevelGeometry {
                level: l as u32,
                nodes,
                codes,
                neighbors,
                children: Adjacency::default(),
                parents: Adjacency::default(),
            }
        })
        .collect();

    for l in 0..depth as usize {
        let (coarse, fine) = levels.split_at_mut(l + 1);
        let coarse = &mut coarse[l];
        let fine = &mut fine[0];
        let mut up = Adjacency { starts: Vec::with_capacity(fine.len() + 1), links: Vec::new() };
        up.starts.push(0);
        let mut child_counts = vec![0u32; coarse.len()];
        for &m in &fine.nodes {
            parent_candidates(order, m, &mut cand);
            let mut row: Vec<Link> = cand
                .iter()
                .map(|(n, d)| {
                    let i = coarse.find(*n).expect("closure contains every parent");
                    child_counts[i] += 1;
                    Link { node: i as u32, offset: *d }
                })
                .collect();
            row.sort_by_key(|lk| lk.node);
            up.links.extend(row);
            up.starts.push(up.links.len() as u32);
        }
        let mut starts = Vec::with_capacity(coarse.len() + 1);
        starts.push(0u32);
        for c in &child_counts {
            starts.push(starts.last().unwrap() + c);
        }
        let mut fill = starts.clone();
        let mut links = vec![Link { node: 0, offset: [0; 3] }; up.links.len()];
        for j in 0..fine.len() {
            for lk in up.of(j) {
                let i = lk.node as usize;
                links[fill[i] as usize] = Link { node: j as u32, offset: lk.offset };
                fill[i] += 1;
            }
        }
        coarse.children = Adjacency { starts, links };
        fine.parents = up;
    }
    Ok(Hierarchy { order, depth, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(depth: u32, pts: &[[u32; 3]]) -> PointCloud {
        let attrs = pts.iter().map(|p| p[0] as f64).collect();
        PointCloud::from_voxels(depth, pts.to_vec(), attrs, 1).unwrap()
    }

    #[test]
    fn morton_roundtrip_and_bit_layout() {
        assert_eq!(morton_encode([1, 0, 0]), 1);
        assert_eq!(morton_encode([0, 1, 0]), 2);
        assert_eq!(morton_encode([0, 0, 1]), 4);
        assert_eq!(morton_encode([2, 0, 0]), 8);
        let p = [(1 << 21) - 1, 12345, 1 << 20];
        assert_eq!(morton_decode(morton_encode(p)), p);
    }

    #[test]
    fn slot_roundtrip() {
        for s in 0..27 {
            assert_eq!(slot(slot_offset(s)), s);
        }
        assert_eq!(slot([0, 0, 0]), CENTER_SLOT);
    }

    #[test]
    fn two_point_p2_depth1() {
        let c = cloud(1, &[[0, 0, 0], [1, 0, 0]]);
        let h = build_hierarchy(&c, Order::P2).unwrap();
        assert_eq!(h.level(0).nodes, vec![[0, 0, 0], [1, 0, 0]]);
        let kids0: Vec<_> = h.level(0).children.of(0).iter().map(|l| l.offset).collect();
        assert_eq!(kids0, vec![[0, 0, 0], [1, 0, 0]]);
        let kids1: Vec<_> = h.level(0).children.of(1).iter().map(|l| l.offset).collect();
        assert_eq!(kids1, vec![[-1, 0, 0]]);
    }

    #[test]
    fn two_point_p1_single_root() {
        let c = cloud(1, &[[0, 0, 0], [1, 0, 0]]);
        let h = build_hierarchy(&c, Order::P1).unwrap();
        assert_eq!(h.level(0).nodes, vec![[0, 0, 0]]);
        assert_eq!(h.level(0).children.of(0).len(), 2);
    }

    #[test]
    fn single_point_every_level_has_one_node_p1() {
        let c = cloud(3, &[[5, 2, 7]]);
        let h = build_hierarchy(&c, Order::P1).unwrap();
        for l in 0..=3 {
            assert_eq!(h.level(l).len(), 1);
        }
    }

    #[test]
    fn voxelize_identity_on_integer_grid() {
        let raw = RawCloud {
            positions: vec![[0.0, 0.0, 0.0], [3.0, 1.0, 2.0]],
            attributes: vec![1.0, 2.0],
            channels: 1,
        };
        let c = voxelize(&raw, 2).unwrap();
        assert_eq!(c.positions, vec![[0, 0, 0], [3, 1, 2]]);
    }

    #[test]
    fn voxelize_merges_duplicates_by_mean() {
        let raw = RawCloud {
            positions: vec![[0.2, 0.0, 0.0], [0.7, 0.1, 0.3], [1.5, 0.0, 0.0]],
            attributes: vec![2.0, 4.0, 9.0],
            channels: 1,
        };
        let c = voxelize(&raw, 1).unwrap();
        assert_eq!(c.positions, vec![[0, 0, 0], [1, 0, 0]]);
        assert_eq!(c.attributes, vec![3.0, 9.0]);
    }

    #[test]
    fn voxelize_rescales_out_of_range() {
        let raw = RawCloud {
            positions: vec![[-10.0, 0.0, 0.0], [10.0, 5.0, 0.0]],
            attributes: vec![0.0, 0.0],
            channels: 1,
        };
        let c = voxelize(&raw, 3).unwrap();
        assert_eq!(c.positions, vec![[0, 0, 0], [7, 2, 0]]);
    }

    #[test]
    fn voxelize_rejects_bad_input() {
        let raw = RawCloud { positions: vec![], attributes: vec![], channels: 1 };
        assert!(voxelize(&raw, 3).is_err());
        let raw = RawCloud { positions: vec![[0.0; 3]], attributes: vec![0.0], channels: 1 };
        assert_eq!(voxelize(&raw, 0), Err(Error::DepthOutOfRange(0)));
        assert_eq!(voxelize(&raw, 21), Err(Error::DepthOutOfRange(21)));
    }

    fn arb_cloud() -> impl Strategy<Value = (u32, Vec<[u32; 3]>)> {
        (1u32..5).prop_flat_map(|d| {
            let side = 1u32 << d;
            (Just(d), proptest::collection::vec([0..side, 0..side, 0..side], 1..60))
        })
    }

    proptest! {
        #[test]
        fn hierarchy_links_are_consistent((d, pts) in arb_cloud(), p2 in any::<bool>()) {
            let order = if p2 { Order::P2 } else { Order::P1 };
            let c = cloud(d, &pts);
            let h = build_hierarchy(&c, order).unwrap();
            prop_assert_eq!(&h.finest().nodes, &c.positions);
            for l in 0..d as usize {
                let (coarse, fine) = (&h.levels[l], &h.levels[l + 1]);
                prop_assert!(coarse.codes.windows(2).all(|w| w[0] < w[1]));
                for j in 0..fine.len() {
                    prop_assert!(!fine.parents.of(j).is_empty());
                    for lk in fine.parents.of(j) {
                        let n = coarse.nodes[lk.node as usize];
                        let m = fine.nodes[j];
                        for a in 0..3 {
                            prop_assert_eq!(m[a] as i64 - 2 * n[a] as i64, lk.offset[a] as i64);
                        }
                        prop_assert!(coarse.children.of(lk.node as usize)
                            .iter().any(|c| c.node as usize == j));
                    }
                }
                for i in 0..coarse.len() {
                    prop_assert!(!coarse.children.of(i).is_empty());
                }
            }
        }
    }
}
