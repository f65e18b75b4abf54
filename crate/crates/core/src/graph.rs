//! Periodic k-nearest-neighbour grid graphs on `[0, L)^ndim`.
//!
//! Edges are stored as parallel `targets` / `sources` arrays grouped by
//! ascending target. Within a target the neighbours are listed in a fixed
//! geometric order (by distance, then by signed cell offset) so that every
//! node sees its neighbourhood in the same order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GridGraph {
    ndim: usize,
    /// Grid points per axis (`[n]` or `[nx, ny]`), x varies fastest in node order.
    dims: Vec<usize>,
    length: f64,
    targets: Arc<[usize]>,
    sources: Arc<[usize]>,
}

/// Nodes whose incoming edges were removed, with the dynamics clamp flag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryMask {
    nodes: BTreeSet<usize>,
    clamped: Vec<bool>,
}

impl BoundaryMask {
    pub fn empty(n_nodes: usize) -> Self {
        BoundaryMask {
            nodes: BTreeSet::new(),
            clamped: vec![false; n_nodes],
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().copied()
    }

    pub fn is_clamped(&self, node: usize) -> bool {
        self.clamped.get(node).copied().unwrap_or(false)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.clamped.len()
    }
}

fn wrap_cells(d: i64, n: usize) -> i64 {
    let n = n as i64;
    let mut r = d.rem_euclid(n);
    if 2 * r > n {
        r -= n;
    }
    r
}

impl GridGraph {
    /// Uniform ring of `n` nodes at `x_i = i L / n`; each node receives edges
    /// from its `k` nearest nodes under the minimal-image distance. Ties are
    /// broken towards the smaller node index.
    pub fn periodic_1d(n: usize, length: f64, k: usize) -> Result<Self> {
        if k == 0 || n <= k {
            return Err(Error::config(format!(
                "1-D grid needs more nodes than neighbours (n={n}, k={k})"
            )));
        }
        check_length(length)?;
        let mut targets = Vec::with_capacity(n * k);
        let mut sources = Vec::with_capacity(n * k);
        for i in 0..n {
            let mut picked: Vec<(usize, i64)> = Vec::with_capacity(k);
            let mut d = 1usize;
            while picked.len() < k {
                let left = (i + n - d % n) % n;
                let right = (i + d) % n;
                let mut cands = vec![(left, -(d as i64))];
                if right != left {
                    cands.push((right, d as i64));
                }
                cands.sort_by_key(|&(j, _)| j);
                for c in cands {
                    if picked.len() < k {
                        picked.push(c);
                    }
                }
                d += 1;
            }
            picked.sort_by_key(|&(_, off)| (off.abs(), off));
            for (j, _) in picked {
                targets.push(i);
                sources.push(j);
            }
        }
        Ok(GridGraph {
            ndim: 1,
            dims: vec![n],
            length,
            targets: targets.into(),
            sources: sources.into(),
        })
    }

    /// Uniform `nx × ny` grid where every node receives edges from its eight
    /// surrounding cells, wrapping periodically.
    pub fn periodic_2d(nx: usize, ny: usize, length: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::config(format!(
                "2-D grid {nx}x{ny} is degenerate: each axis needs at least 3 points"
            )));
        }
        check_length(length)?;
        let mut stencil: Vec<(i64, i64)> = (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter(|&o| o != (0, 0))
            .collect();
        stencil.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
        let n = nx * ny;
        let mut targets = Vec::with_capacity(n * 8);
        let mut sources = Vec::with_capacity(n * 8);
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                for &(dx, dy) in &stencil {
                    let jx = (ix as i64 + dx).rem_euclid(nx as i64) as usize;
                    let jy = (iy as i64 + dy).rem_euclid(ny as i64) as usize;
                    targets.push(i);
                    sources.push(jy * nx + jx);
                }
            }
        }
        Ok(GridGraph {
            ndim: 2,
            dims: vec![nx, ny],
            length,
            targets: targets.into(),
            sources: sources.into(),
        })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n_nodes(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn n_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &Arc<[usize]> {
        &self.targets
    }

    pub fn sources(&self) -> &Arc<[usize]> {
        &self.sources
    }

    /// Grid spacing along axis `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.length / self.dims[axis] as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.ndim)
            .map(|a| self.spacing(a))
            .fold(f64::INFINITY, f64::min)
    }

    /// Integer grid position of `node` (x first).
    pub fn grid_index(&self, node: usize) -> [usize; 2] {
        match self.ndim {
            1 => [node, 0],
            _ => [node % self.dims[0], node / self.dims[0]],
        }
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let gi = self.grid_index(node);
        (0..self.ndim)
            .map(|a| gi[a] as f64 * self.spacing(a))
            .collect()
    }

    /// Node coordinates as an `n × ndim` tensor.
    pub fn coords(&self) -> Tensor {
        let data = (0..self.n_nodes()).flat_map(|i| self.coord(i)).collect();
        Tensor::new(vec![self.n_nodes(), self.ndim], data).expect("coords shape")
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.targets.iter().filter(|&&t| t == node).count()
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.sources.iter().filter(|&&s| s == node).count()
    }

    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        self.targets
            .iter()
            .zip(self.sources.iter())
            .filter(|(&t, _)| t == node)
            .map(|(_, &s)| s)
            .collect()
    }

    /// Minimal-image cell displacement `x_target - x_source` for edge `e`.
    pub fn edge_cells(&self, e: usize) -> [i64; 2] {
        let ti = self.grid_index(self.targets[e]);
        let si = self.grid_index(self.sources[e]);
        let mut out = [0i64; 2];
        for a in 0..self.ndim {
            out[a] = wrap_cells(ti[a] as i64 - si[a] as i64, self.dims[a]);
        }
        out
    }

    /// Per-edge `δx = wrap(x_i - x_j)` in domain units, `E × ndim`. Every
    /// component lies in `(-L/2, L/2]`.
    pub fn edge_offsets(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.n_edges() * self.ndim);
        for e in 0..self.n_edges() {
            let cells = self.edge_cells(e);
            for (a, &c) in cells.iter().enumerate().take(self.ndim) {
                data.push(c as f64 * self.spacing(a));
            }
        }
        Tensor::new(vec![self.n_edges(), self.ndim], data).expect("offset shape")
    }

    /// Remove every edge that points at a boundary node. Edges leaving
    /// boundary nodes are kept.
    pub fn apply_dirichlet_mask(&self, boundary: &[usize]) -> Result<(GridGraph, BoundaryMask)> {
        let n = self.n_nodes();
        let mut mask = BoundaryMask::empty(n);
        for &b in boundary {
            if b >= n {
                return Err(Error::Index {
                    op: "apply_dirichlet_mask",
                    index: b,
                    bound: n,
                });
            }
            mask.nodes.insert(b);
            mask.clamped[b] = true;
        }
        let (targets, sources): (Vec<usize>, Vec<usize>) = self
            .targets
            .iter()
            .zip(self.sources.iter())
            .filter(|(t, _)| !mask.clamped[**t])
            .map(|(&t, &s)| (t, s))
            .unzip();
        let g = GridGraph {
            targets: targets.into(),
            sources: sources.into(),
            ..self.clone()
        };
        Ok((g, mask))
    }

    /// Apply a permutation to the edge list. The result must stay grouped by target.
    pub fn reorder_edges(&self, order: &[usize]) -> Result<GridGraph> {
        let e = self.n_edges();
        let mut seen = vec![false; e];
        if order.len() != e {
            return Err(Error::shape("reorder_edges", "order is not a permutation"));
        }
        for &o in order {
            if o >= e || std::mem::replace(&mut seen[o], true) {
                return Err(Error::shape("reorder_edges", "order is not a permutation"));
            }
        }
        let targets: Vec<usize> = order.iter().map(|&o| self.targets[o]).collect();
        if targets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("reordered edges are no longer grouped by target"));
        }
        let sources: Vec<usize> = order.iter().map(|&o| self.sources[o]).collect();
        Ok(GridGraph {
            targets: targets.into(),
            sources: sources.into(),
            ..self.clone()
        })
    }

    /// Plain-text edge list, one `source target δx...` line per edge.
    pub fn export_edge_list(&self) -> String {
        let offsets = self.edge_offsets();
        let mut out = String::new();
        for e in 0..self.n_edges() {
            let _ = write!(out, "{} {}", self.sources[e], self.targets[e]);
            for v in offsets.row(e) {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_length(length: f64) -> Result<()> {
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::config(format!("domain length must be positive, got {length}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn min_image(d: f64, l: f64) -> f64 {
        let mut r = d - l * (d / l).round();
        if r <= -l / 2.0 {
            r += l;
        }
        r
    }

    /// Brute-force k-NN under minimal-image distance, ties to smaller index.
    fn brute_knn(g: &GridGraph, k: usize) -> Vec<BTreeSet<usize>> {
        let n = g.n_nodes();
        (0..n)
            .map(|i| {
                let xi = g.coord(i);
                let mut cands: Vec<(i64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let xj = g.coord(j);
                        let d2: f64 = xi
                            .iter()
                            .zip(&xj)
                            .map(|(a, b)| min_image(a - b, g.length()).powi(2))
                            .sum();
                        // quantised so equal distances tie exactly
                        ((d2 * 1e9).round() as i64, j)
                    })
                    .collect();
                cands.sort();
                cands.iter().take(k).map(|c| c.1).collect()
            })
            .collect()
    }

    #[test]
    fn ring_of_eight() {
        let g = GridGraph::periodic_1d(8, 1.0, 4).unwrap();
        let nb: BTreeSet<usize> = g.in_neighbors(0).into_iter().collect();
        assert_eq!(nb, BTreeSet::from([7, 1, 6, 2]));
        assert!((0..8).all(|i| g.in_degree(i) == 4));
        assert!((0..8).all(|i| !g.in_neighbors(i).contains(&i)));
    }

    #[test]
    fn ring_512_coordinates() {
        let g = GridGraph::periodic_1d(512, 1.0, 4).unwrap();
        assert_eq!(g.spacing(0), 1.0 / 512.0);
        assert_eq!(g.coord(37), vec![37.0 / 512.0]);
    }

    #[test]
    fn too_few_nodes_rejected() {
        assert!(GridGraph::periodic_1d(4, 1.0, 4).is_err());
        assert!(GridGraph::periodic_2d(2, 8, 1.0).is_err());
    }

    #[test]
    fn periodic_constructions_match_brute_force() {
        for (n, k) in [(8, 4), (9, 4), (16, 2), (7, 3), (12, 6)] {
            let g = GridGraph::periodic_1d(n, 1.0, k).unwrap();
            let bf = brute_knn(&g, k);
            for (i, expected) in bf.iter().enumerate() {
                let got: BTreeSet<usize> = g.in_neighbors(i).into_iter().collect();
                assert_eq!(&got, expected, "n={n} k={k} node {i}");
            }
        }
        let g = GridGraph::periodic_2d(6, 6, 1.0).unwrap();
        for (i, expected) in brute_knn(&g, 8).iter().enumerate() {
            let got: BTreeSet<usize> = g.in_neighbors(i).into_iter().collect();
            assert_eq!(&got, expected, "node {i}");
        }
    }

    #[test]
    fn grid_2d_wrap_and_counts() {
        let g = GridGraph::periodic_2d(8, 8, 1.0).unwrap();
        let nb: BTreeSet<usize> = g.in_neighbors(0).into_iter().collect();
        let mut expected = BTreeSet::new();
        for dy in [-1i64, 0, 1] {
            for dx in [-1i64, 0, 1] {
                if (dx, dy) != (0, 0) {
                    let x = dx.rem_euclid(8) as usize;
                    let y = dy.rem_euclid(8) as usize;
                    expected.insert(y * 8 + x);
                }
            }
        }
        assert_eq!(nb, expected);

        let big = GridGraph::periodic_2d(64, 64, 1.0).unwrap();
        assert_eq!(big.n_nodes(), 4096);
        assert_eq!(big.n_edges(), 32768);
    }

    #[test]
    fn interior_offsets_are_unit_and_diagonal_cells() {
        let g = GridGraph::periodic_2d(8, 8, 1.0).unwrap();
        let node = 3 * 8 + 4;
        let mut cells: Vec<[i64; 2]> = (0..g.n_edges())
            .filter(|&e| g.targets()[e] == node)
            .map(|e| g.edge_cells(e))
            .collect();
        cells.sort();
        let mut expected: Vec<[i64; 2]> = (-1..=1)
            .flat_map(|a| (-1..=1).map(move |b| [a, b]))
            .filter(|c| *c != [0, 0])
            .collect();
        expected.sort();
        assert_eq!(cells, expected);
    }

    #[test]
    fn wrapped_offset_of_edge_seven_to_zero() {
        let g = GridGraph::periodic_1d(8, 1.0, 4).unwrap();
        let off = g.edge_offsets();
        let e = (0..g.n_edges())
            .find(|&e| g.targets()[e] == 0 && g.sources()[e] == 7)
            .unwrap();
        assert_eq!(off.row(e), &[1.0 / 8.0]);
    }

    #[test]
    fn offset_multiset_is_translation_invariant() {
        let g = GridGraph::periodic_1d(16, 2.0, 4).unwrap();
        let off = g.edge_offsets();
        let per_node: Vec<Vec<f64>> = (0..16)
            .map(|i| {
                (0..g.n_edges())
                    .filter(|&e| g.targets()[e] == i)
                    .map(|e| off.row(e)[0])
                    .collect()
            })
            .collect();
        assert!(per_node.iter().all(|v| v == &per_node[0]));
    }

    #[test]
    fn dirichlet_mask_removes_incoming_only() {
        let g = GridGraph::periodic_1d(8, 1.0, 4).unwrap();
        let (m, mask) = g.apply_dirichlet_mask(&[0]).unwrap();
        assert_eq!(m.in_degree(0), 0);
        assert_eq!(m.out_degree(0), 4);
        assert!(mask.is_clamped(0));
        assert!(!mask.is_clamped(1));

        let (same, empty) = g.apply_dirichlet_mask(&[]).unwrap();
        assert_eq!(same, g);
        assert!(empty.is_empty());

        assert!(matches!(g.apply_dirichlet_mask(&[8]), Err(Error::Index { .. })));
    }

    #[test]
    fn edge_list_export_has_one_line_per_edge() {
        let g = GridGraph::periodic_1d(8, 1.0, 4).unwrap();
        let txt = g.export_edge_list();
        assert_eq!(txt.lines().count(), 32);
        assert_eq!(txt.lines().next().unwrap(), "7 0 0.125");
    }

    fn check_graph_invariants(g: &GridGraph) {
        let off = g.edge_offsets();
        let l = g.length();
        let mut sums = vec![vec![0.0; g.ndim()]; g.n_nodes()];
        for e in 0..g.n_edges() {
            let (t, s) = (g.targets()[e], g.sources()[e]);
            for (a, &v) in off.row(e).iter().enumerate() {
                assert!(v > -l / 2.0 && v <= l / 2.0);
                sums[t][a] += v;
            }
            let rev = (0..g.n_edges())
                .find(|&r| g.targets()[r] == s && g.sources()[r] == t)
                .expect("reverse edge");
            for (a, b) in off.row(e).iter().zip(off.row(rev)) {
                assert_eq!(*a, -*b);
            }
        }
        for s in sums {
            assert!(s.iter().all(|v| v.abs() < 1e-12));
        }
    }

    proptest! {
        #[test]
        fn ring_invariants(n in 5usize..40, half_k in 1usize..3, l in 0.5f64..4.0) {
            let k = 2 * half_k;
            prop_assume!(n > k);
            let g = GridGraph::periodic_1d(n, l, k).unwrap();
            check_graph_invariants(&g);
            // cyclic relabelling maps the edge set onto itself
            let edges: BTreeSet<(usize, usize)> =
                g.targets().iter().zip(g.sources().iter()).map(|(&t, &s)| (t, s)).collect();
            let shifted: BTreeSet<(usize, usize)> =
                edges.iter().map(|&(t, s)| ((t + 1) % n, (s + 1) % n)).collect();
            prop_assert_eq!(edges, shifted);
        }

        #[test]
        fn grid_2d_invariants(nx in 3usize..9, ny in 3usize..9) {
            let g = GridGraph::periodic_2d(nx, ny, 1.0).unwrap();
            prop_assert!((0..g.n_nodes()).all(|i| g.in_degree(i) == 8));
            check_graph_invariants(&g);
        }
    }
}
