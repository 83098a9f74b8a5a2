//! Road-network graph representation and the normalized propagation
//! operator used by every graph convolution.
//!
//! Graphs are unweighted and undirected: two road segments are connected
//! when they share an endpoint, in any origin/destination combination.
//! The propagation matrix adds self loops before symmetric degree
//! normalization, so an edgeless graph propagates as the identity.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// One road segment record: an identifier plus its endpoint detector ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub link_id: String,
    pub origin_id: String,
    pub destination_id: String,
}

impl Segment {
    pub fn new(
        link_id: impl Into<String>,
        origin_id: impl Into<String>,
        destination_id: impl Into<String>,
    ) -> Self {
        Segment {
            link_id: link_id.into(),
            origin_id: origin_id.into(),
            destination_id: destination_id.into(),
        }
    }
}

/// Undirected graph over named nodes with a dense 0/1 adjacency matrix.
/// The diagonal is always zero; self loops appear only inside
/// [`PropagationMatrix`] construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    node_ids: Vec<String>,
    adjacency: Vec<u8>, // n x n row-major
}

impl RoadGraph {
    /// Build from an explicit symmetric adjacency; validates the invariants.
    pub fn new(node_ids: Vec<String>, adjacency: Vec<u8>) -> Result<Self> {
        let n = node_ids.len();
        if adjacency.len() != n * n {
            return Err(Error::Input(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        for i in 0..n {
            if adjacency[i * n + i] != 0 {
                return Err(Error::Input(format!(
                    "self loop on node {}; the diagonal must be zero",
                    node_ids[i]
                )));
            }
            for j in 0..n {
                let a = adjacency[i * n + j];
                if a > 1 {
                    return Err(Error::Input(format!("adjacency entry ({i},{j}) = {a}, expected 0/1")));
                }
                if a != adjacency[j * n + i] {
                    return Err(Error::Input(format!(
                        "adjacency not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(RoadGraph {
            node_ids,
            adjacency,
        })
    }

    /// Edgeless graph over the given nodes.
    pub fn edgeless(node_ids: Vec<String>) -> Self {
        let n = node_ids.len();
        RoadGraph {
            node_ids,
            adjacency: vec![0; n * n],
        }
    }

    /// Ring graph 0-1-...-(n-1)-0; used by synthetic fixtures.
    pub fn ring(node_ids: Vec<String>) -> Self {
        let n = node_ids.len();
        let mut g = Self::edgeless(node_ids);
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                if i != j {
                    g.adjacency[i * n + j] = 1;
                    g.adjacency[j * n + i] = 1;
                }
            }
        }
        g
    }

    /// Path graph 0-1-...-(n-1).
    pub fn path(node_ids: Vec<String>) -> Self {
        let n = node_ids.len();
        let mut g = Self::edgeless(node_ids);
        for i in 1..n {
            g.adjacency[(i - 1) * n + i] = 1;
            g.adjacency[i * n + (i - 1)] = 1;
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.node_count() + j] == 1
    }

    pub fn degree(&self, i: usize) -> usize {
        let n = self.node_count();
        self.adjacency[i * n..(i + 1) * n]
            .iter()
            .map(|&x| x as usize)
            .sum()
    }

    /// Edges as index pairs `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Relabel nodes: node `i` of the result is node `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<RoadGraph> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(Error::Input("permutation length mismatch".into()));
        }
        let node_ids = perm.iter().map(|&i| self.node_ids[i].clone()).collect();
        let mut adjacency = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = self.adjacency[perm[i] * n + perm[j]];
            }
        }
        RoadGraph::new(node_ids, adjacency)
    }
}

/// Connect segments that share any endpoint: origin-origin,
/// origin-destination, destination-origin or destination-destination,
/// applied symmetrically. The predicate is deliberately wider than a
/// one-directional origin match; sharing either endpoint forms an edge.
pub fn build_adjacency_from_segments(segments: &[Segment]) -> Result<RoadGraph> {
    let mut seen = std::collections::HashSet::new();
    for s in segments {
        if s.origin_id.is_empty() || s.destination_id.is_empty() {
            return Err(Error::Input(format!(
                "segment {} has an empty endpoint id",
                s.link_id
            )));
        }
        if !seen.insert(s.link_id.as_str()) {
            return Err(Error::Input(format!("duplicate link_id {}", s.link_id)));
        }
    }
    let n = segments.len();
    let node_ids = segments.iter().map(|s| s.link_id.clone()).collect();
    let mut adjacency = vec![0u8; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (&segments[i], &segments[j]);
            let connected = a.origin_id == b.origin_id
                || a.origin_id == b.destination_id
                || a.destination_id == b.origin_id
                || a.destination_id == b.destination_id;
            if connected {
                adjacency[i * n + j] = 1;
                adjacency[j * n + i] = 1;
            }
        }
    }
    RoadGraph::new(node_ids, adjacency)
}

/// The symmetric normalized propagation operator: with self loops added to
/// adjacency and degrees, `P = D^{-1/2} (A + I) D^{-1/2}` where
/// `D_ii = degree(i) + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationMatrix {
    matrix: Tensor,
}

impl PropagationMatrix {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn node_count(&self) -> usize {
        self.matrix.rows()
    }

    /// Identity propagation; nodes see only themselves.
    pub fn identity(n: usize) -> Self {
        PropagationMatrix {
            matrix: Tensor::eye(n),
        }
    }
}

pub fn normalize_propagation(g: &RoadGraph) -> PropagationMatrix {
    let n = g.node_count();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((g.degree(i) as f64 + 1.0).sqrt()))
        .collect();
    let mut p = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a_hat = if i == j {
                1.0
            } else if g.has_edge(i, j) {
                1.0
            } else {
                0.0
            };
            if a_hat != 0.0 {
                p.set(i, j, inv_sqrt[i] * a_hat * inv_sqrt[j]);
            }
        }
    }
    PropagationMatrix { matrix: p }
}

// ---- file formats -------------------------------------------------------
//
// Two interchangeable on-disk representations:
//  * edge list (`src_id,dst_id` per line) plus a node-order file listing
//    node ids one per line, fixing the row order of all matrices;
//  * a dense 0/1 matrix in comma-separated form with a node-id header row
//    and node-id row labels.

pub fn save_edge_list(g: &RoadGraph, edges_path: &Path, nodes_path: &Path) -> Result<()> {
    let mut nodes = String::new();
    for id in g.node_ids() {
        nodes.push_str(id);
        nodes.push('\n');
    }
    std::fs::write(nodes_path, nodes).map_err(|e| Error::io(nodes_path, e))?;

    let mut edges = String::new();
    for (i, j) in g.edges() {
        let _ = writeln!(edges, "{},{}", g.node_ids()[i], g.node_ids()[j]);
    }
    std::fs::write(edges_path, edges).map_err(|e| Error::io(edges_path, e))?;
    Ok(())
}

pub fn load_edge_list(edges_path: &Path, nodes_path: &Path) -> Result<RoadGraph> {
    let nodes_raw =
        std::fs::read_to_string(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let node_ids: Vec<String> = nodes_raw
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let index: std::collections::HashMap<&str, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if index.len() != node_ids.len() {
        return Err(Error::Input(format!(
            "duplicate node id in {}",
            nodes_path.display()
        )));
    }

    let n = node_ids.len();
    let mut adjacency = vec![0u8; n * n];
    let edges_raw =
        std::fs::read_to_string(edges_path).map_err(|e| Error::io(edges_path, e))?;
    for (lineno, line) in edges_raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (src, dst) = line.split_once(',').ok_or_else(|| {
            Error::Input(format!(
                "{}:{}: expected `src_id,dst_id`",
                edges_path.display(),
                lineno + 1
            ))
        })?;
        let (src, dst) = (src.trim(), dst.trim());
        let i = *index.get(src).ok_or_else(|| {
            Error::Input(format!("edge references unknown node {src}"))
        })?;
        let j = *index.get(dst).ok_or_else(|| {
            Error::Input(format!("edge references unknown node {dst}"))
        })?;
        if i == j {
            return Err(Error::Input(format!("self loop on node {src} in edge list")));
        }
        adjacency[i * n + j] = 1;
        adjacency[j * n + i] = 1;
    }
    RoadGraph::new(node_ids, adjacency)
}

pub fn save_dense_matrix(g: &RoadGraph, path: &Path) -> Result<()> {
    let n = g.node_count();
    let mut out = String::from("node_id");
    for id in g.node_ids() {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&g.node_ids()[i]);
        for j in 0..n {
            out.push(',');
            out.push(if g.has_edge(i, j) { '1' } else { '0' });
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_dense_matrix(path: &Path) -> Result<RoadGraph> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = raw.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Input(format!("{}: empty adjacency file", path.display())))?;
    let node_ids: Vec<String> = header
        .split(',')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let n = node_ids.len();
    let mut adjacency = vec![0u8; n * n];
    let mut rows_seen = 0;
    for (i, line) in lines.enumerate() {
        if i >= n {
            return Err(Error::Input(format!(
                "{}: more rows than header columns",
                path.display()
            )));
        }
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or("").trim();
        if label != node_ids[i] {
            return Err(Error::Input(format!(
                "{}: row {} labelled {label}, expected {}",
                path.display(),
                i + 1,
                node_ids[i]
            )));
        }
        for (j, f) in fields.enumerate() {
            if j >= n {
                return Err(Error::Input(format!(
                    "{}: row {} has too many columns",
                    path.display(),
                    i + 1
                )));
            }
            adjacency[i * n + j] = match f.trim() {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Input(format!(
                        "{}: adjacency entry `{other}` is not 0/1",
                        path.display()
                    )))
                }
            };
        }
        rows_seen += 1;
    }
    if rows_seen != n {
        return Err(Error::Input(format!(
            "{}: {} data rows for {} header columns",
            path.display(),
            rows_seen,
            n
        )));
    }
    RoadGraph::new(node_ids, adjacency)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    #[test]
    fn shared_endpoint_forms_edge() {
        let segs = vec![Segment::new("L1", "a", "b"), Segment::new("L2", "b", "c")];
        let g = build_adjacency_from_segments(&segs).unwrap();
        assert!(g.has_edge(0, 1));
        assert!(g.has_edge(1, 0));
    }

    #[test]
    fn disjoint_endpoints_stay_disconnected() {
        let segs = vec![Segment::new("L1", "a", "b"), Segment::new("L2", "c", "d")];
        let g = build_adjacency_from_segments(&segs).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn chain_of_segments_matches_brute_force() {
        let segs = vec![
            Segment::new("L1", "a", "b"),
            Segment::new("L2", "b", "c"),
            Segment::new("L3", "c", "d"),
            Segment::new("L4", "d", "e"),
        ];
        let g = build_adjacency_from_segments(&segs).unwrap();

        // Brute force: compare every endpoint pairing directly.
        let mut expected = Vec::new();
        for i in 0..segs.len() {
            for j in (i + 1)..segs.len() {
                let (a, b) = (&segs[i], &segs[j]);
                let endpoints_a = [&a.origin_id, &a.destination_id];
                let endpoints_b = [&b.origin_id, &b.destination_id];
                if endpoints_a
                    .iter()
                    .any(|ea| endpoints_b.iter().any(|eb| ea == eb))
                {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(g.edges(), expected);
        assert_eq!(g.edges().len(), 3);
    }

    #[test]
    fn duplicate_link_id_rejected() {
        let segs = vec![Segment::new("L1", "a", "b"), Segment::new("L1", "b", "c")];
        assert!(build_adjacency_from_segments(&segs).is_err());
    }

    #[test]
    fn edgeless_graph_normalizes_to_identity() {
        let g = RoadGraph::edgeless(ids(3));
        let p = normalize_propagation(&g);
        assert_eq!(p.matrix(), &Tensor::eye(3));
    }

    #[test]
    fn two_node_single_edge() {
        let g = RoadGraph::path(ids(2));
        let p = normalize_propagation(&g);
        for v in p.matrix().data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn three_node_path_values() {
        // Nodes 0-1-2: degrees 1, 2, 1 so D-hat = diag(2, 3, 2).
        let g = RoadGraph::path(ids(3));
        let p = normalize_propagation(&g);
        let m = p.matrix();
        assert!((m.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((m.get(0, 1) - 1.0 / 6.0_f64.sqrt()).abs() < 1e-15);
        assert!((m.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.get(0, 2), 0.0);
    }

    #[test]
    fn propagation_is_symmetric_and_deterministic() {
        let g = RoadGraph::ring(ids(7));
        let p1 = normalize_propagation(&g);
        let p2 = normalize_propagation(&g);
        let m = p1.matrix();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert!(m
            .data()
            .iter()
            .zip(p2.matrix().data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn regular_graph_preserves_constant_vector() {
        // Every node of a ring has degree 2, so P * 1 = 1.
        let g = RoadGraph::ring(ids(6));
        let p = normalize_propagation(&g);
        let m = p.matrix();
        for i in 0..6 {
            let row_sum: f64 = (0..6).map(|j| m.get(i, j)).sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvalues_within_unit_interval() {
        // Power iteration on P and on (P + I) bounds the spectrum:
        // |lambda_max| <= 1 and lambda_min >= -1.
        let g = RoadGraph::ring(ids(9));
        let p = normalize_propagation(&g);
        let m = p.matrix();
        let n = 9;
        let mut v = vec![1.0; n];
        for step in 0..500 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += m.get(i, j) * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / norm).collect();
            if step == 499 {
                let mut pv = vec![0.0; n];
                for i in 0..n {
                    for j in 0..n {
                        pv[i] += m.get(i, j) * v[j];
                    }
                }
                let lambda: f64 = v.iter().zip(&pv).map(|(a, b)| a * b).sum();
                assert!(lambda.abs() <= 1.0 + 1e-9, "dominant eigenvalue {lambda}");
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let g = RoadGraph::path(ids(5));
        let perm = [3usize, 0, 4, 1, 2];
        let gp = g.permute(&perm).unwrap();
        let p = normalize_propagation(&g);
        let pp = normalize_propagation(&gp);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(pp.matrix().get(i, j), p.matrix().get(perm[i], perm[j]));
            }
        }
    }

    #[test]
    fn edge_list_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = build_adjacency_from_segments(&[
            Segment::new("A", "x", "y"),
            Segment::new("B", "y", "z"),
            Segment::new("C", "q", "r"),
        ])
        .unwrap();
        let edges = dir.path().join("edges.csv");
        let nodes = dir.path().join("nodes.txt");
        save_edge_list(&g, &edges, &nodes).unwrap();
        let g2 = load_edge_list(&edges, &nodes).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn dense_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = RoadGraph::ring(ids(4));
        let path = dir.path().join("adjacency.csv");
        save_dense_matrix(&g, &path).unwrap();
        let g2 = load_dense_matrix(&path).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn loaders_agree_on_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let g = RoadGraph::ring(ids(5));
        let edges = dir.path().join("edges.csv");
        let nodes = dir.path().join("nodes.txt");
        let dense = dir.path().join("adjacency.csv");
        save_edge_list(&g, &edges, &nodes).unwrap();
        save_dense_matrix(&g, &dense).unwrap();
        assert_eq!(
            load_edge_list(&edges, &nodes).unwrap(),
            load_dense_matrix(&dense).unwrap()
        );
    }
}
