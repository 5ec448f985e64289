//! Classical RAHT: weighted two-point butterflies along x, y, z inside each
//! octree cell, from the voxels up.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    /// Level of the parent cell.
    pub level: u32,
    pub parent: [u32; 3],
    /// One row of channel values per high-pass coefficient.
    pub highs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Butterfly {
    pub dc: Vec<f64>,
    pub blocks: Vec<Block>,
}

struct Node {
    offset: [u32; 3],
    weight: f64,
    coeffs: Vec<f64>,
}

fn merge(a: Node, b: Node, highs: &mut Vec<Vec<f64>>) -> Node {
    let w = a.weight + b.weight;
    let ca = (a.weight / w).sqrt();
    let cb = (b.weight / w).sqrt();
    let low = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| ca * x + cb * y).collect();
    highs.push(a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| -cb * x + ca * y).collect());
    Node { offset: a.offset, weight: w, coeffs: low }
}

pub fn raht_butterfly(positions: &[[u32; 3]], attrs: &[f64], channels: usize, depth: u32) -> Butterfly {
    let mut level: BTreeMap<[u32; 3], (f64, Vec<f64>)> = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, (1.0, attrs[i * channels..(i + 1) * channels].to_vec())))
        .collect();
    let mut blocks = Vec::new();
    for l in (0..depth).rev() {
        let mut groups: BTreeMap<[u32; 3], Vec<Node>> = BTreeMap::new();
        for (p, (w, c)) in level {
            groups.entry([p[0] >> 1, p[1] >> 1, p[2] >> 1]).or_default().push(Node {
                offset: [p[0] & 1, p[1] & 1, p[2] & 1],
                weight: w,
                coeffs: c,
            });
        }
        let mut next = BTreeMap::new();
        for (parent, mut nodes) in groups {
            let mut highs = Vec::new();
            for axis in 0..3 {
                let mut keyed: BTreeMap<[u32; 3], Vec<Node>> = BTreeMap::new();
                for n in nodes {
                    let mut key = n.offset;
                    key[axis] = 0;
                    keyed.entry(key).or_default().push(n);
                }
                nodes = Vec::new();
                for (_, mut pair) in keyed {
                    pair.sort_by_key(|n| n.offset[axis]);
                    if pair.len() == 2 {
                        let b = pair.pop().unwrap();
                        let a = pair.pop().unwrap();
                        let mut m = merge(a, b, &mut highs);
                        m.offset[axis] = 0;
                        nodes.push(m);
                    } else {
                        let mut n = pair.pop().unwrap();
                        n.offset[axis] = 0;
                        nodes.push(n);
                    }
                }
            }
            let root = nodes.pop().expect("one node per cell");
            if !highs.is_empty() {
                blocks.push(Block { level: l, parent, highs });
            }
            next.insert(parent, (root.weight, root.coeffs));
        }
        level = next;
    }
    let (_, (_, dc)) = level.into_iter().next().expect("non-empty cloud");
    Butterfly { dc, blocks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        let b = raht_butterfly(&[[0, 0, 0], [1, 0, 0]], &[1.0, 3.0], 1, 1);
        let s = std::f64::consts::SQRT_2;
        assert!((b.dc[0] - 4.0 / s).abs() < 1e-15);
        assert_eq!(b.blocks.len(), 1);
        assert!((b.blocks[0].highs[0][0] - 2.0 / s).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_energy() {
        let pos = [[0, 0, 0], [1, 1, 0], [3, 2, 1], [2, 2, 2], [0, 3, 3]];
        let y = [1.0, -2.0, 5.0, 0.5, 3.0];
        let b = raht_butterfly(&pos, &y, 1, 2);
        let e: f64 = b.dc[0].powi(2)
            + b.blocks.iter().flat_map(|bl| bl.highs.iter()).map(|h| h[0] * h[0]).sum::<f64>();
        let want: f64 = y.iter().map(|v| v * v).sum();
        assert!((e - want).abs() < 1e-12);
        let count: usize = b.blocks.iter().map(|bl| bl.highs.len()).sum();
        assert_eq!(count, pos.len() - 1);
    }
}
