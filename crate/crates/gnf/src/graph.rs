//! Undirected simple graphs, synthetic datasets, and edge-list / DOT I/O.
//!
//! Adjacency is a bitset matrix (one row of u64 words per node), which keeps
//! neighborhood intersections cheap for the subgraph counting in evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{io_err, GnfError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    words: usize,
    bits: Vec<u64>,
    node_features: Option<Tensor>,
    edge_features: Option<Tensor>,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        Graph {
            n,
            words,
            bits: vec![0; n * words],
            node_features: None,
            edge_features: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<()> {
        if u == v {
            return Err(GnfError::Data(format!("self-loop on node {u}")));
        }
        if u >= self.n || v >= self.n {
            return Err(GnfError::Data(format!(
                "edge ({u}, {v}) out of range for {} nodes",
                self.n
            )));
        }
        self.bits[u * self.words + v / 64] |= 1 << (v % 64);
        self.bits[v * self.words + u / 64] |= 1 << (u % 64);
        Ok(())
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.words + v / 64] >> (v % 64) & 1 == 1
    }

    pub fn row(&self, v: usize) -> &[u64] {
        &self.bits[v * self.words..(v + 1) * self.words]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row(v).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|v| self.degree(v)).collect()
    }

    pub fn num_edges(&self) -> usize {
        let total: usize = self.bits.iter().map(|w| w.count_ones() as usize).sum();
        total / 2
    }

    pub fn common_neighbors(&self, u: usize, v: usize) -> usize {
        self.row(u)
            .iter()
            .zip(self.row(v))
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.row(v).iter().enumerate().flat_map(|(wi, &w)| {
            let base = wi * 64;
            BitIter(w).map(move |b| base + b)
        })
    }

    /// Edges as (u, v) with u < v, lexicographically sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.num_edges());
        for u in 0..self.n {
            for v in self.neighbors(u) {
                if v > u {
                    out.push((u as u32, v as u32));
                }
            }
        }
        out
    }

    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.num_edges() as f64 / (self.n * (self.n - 1) / 2) as f64
    }

    pub fn connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.n
    }

    /// Local clustering coefficient per node; 0 for degree < 2.
    pub fn clustering(&self) -> Vec<f64> {
        (0..self.n)
            .map(|v| {
                let d = self.degree(v);
                if d < 2 {
                    return 0.0;
                }
                // Each edge between two neighbors of v is counted twice.
                let links: usize = self.neighbors(v).map(|u| self.common_neighbors(u, v)).sum();
                (links / 2) as f64 / (d * (d - 1) / 2) as f64
            })
            .collect()
    }

    pub fn node_features(&self) -> Option<&Tensor> {
        self.node_features.as_ref()
    }

    pub fn set_node_features(&mut self, f: Tensor) -> Result<()> {
        if f.rows() != self.n {
            return Err(GnfError::Shape(format!(
                "node features have {} rows for {} nodes",
                f.rows(),
                self.n
            )));
        }
        self.node_features = Some(f);
        Ok(())
    }

    pub fn edge_features(&self) -> Option<&Tensor> {
        self.edge_features.as_ref()
    }

    /// Rows align with `edges()` order.
    pub fn set_edge_features(&mut self, f: Tensor) -> Result<()> {
        if f.rows() != self.num_edges() {
            return Err(GnfError::Shape(format!(
                "edge features have {} rows for {} edges",
                f.rows(),
                self.num_edges()
            )));
        }
        self.edge_features = Some(f);
        Ok(())
    }

    /// Relabel nodes: old node i becomes perm[i]. Features follow their nodes
    /// and per-edge rows follow the re-sorted edge list.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        assert_eq!(perm.len(), self.n);
        let mut g = Graph::new(self.n);
        let old_edges = self.edges();
        for &(u, v) in &old_edges {
            g.add_edge(perm[u as usize], perm[v as usize]).unwrap();
        }
        if let Some(f) = &self.node_features {
            let mut nf = Tensor::zeros(self.n, f.cols());
            for i in 0..self.n {
                nf.row_mut(perm[i]).copy_from_slice(f.row(i));
            }
            g.node_features = Some(nf);
        }
        if let Some(f) = &self.edge_features {
            let mut keyed: Vec<((u32, u32), usize)> = old_edges
                .iter()
                .enumerate()
                .map(|(i, &(u, v))| {
                    let (a, b) = (perm[u as usize] as u32, perm[v as usize] as u32);
                    ((a.min(b), a.max(b)), i)
                })
                .collect();
            keyed.sort_unstable();
            let mut ef = Tensor::zeros(f.rows(), f.cols());
            for (new_row, &(_, old_row)) in keyed.iter().enumerate() {
                ef.row_mut(new_row).copy_from_slice(f.row(old_row));
            }
            g.edge_features = Some(ef);
        }
        g
    }

    /// The center, its neighbors, and all edges among them.
    pub fn ego_net(&self, center: usize) -> Graph {
        let mut nodes: Vec<usize> = vec![center];
        nodes.extend(self.neighbors(center));
        nodes.sort_unstable();
        let index = |x: usize| nodes.binary_search(&x).unwrap();
        let mut g = Graph::new(nodes.len());
        for (i, &u) in nodes.iter().enumerate() {
            for v in self.neighbors(u) {
                if v > u {
                    if let Ok(j) = nodes.binary_search(&v) {
                        g.add_edge(i, j).unwrap();
                    }
                }
            }
        }
        debug_assert_eq!(g.degree(index(center)), nodes.len() - 1);
        g
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# nodes {}\n", self.n);
        for (u, v) in self.edges() {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("graph {\n");
        for v in 0..self.n {
            let _ = writeln!(s, "  {v};");
        }
        for (u, v) in self.edges() {
            let _ = writeln!(s, "  {u} -- {v};");
        }
        s.push_str("}\n");
        s
    }
}

struct BitIter(u64);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

// ── edge-list I/O ────────────────────────────────────────────────────────

#[derive(Debug)]
pub struct LoadedGraph {
    pub graph: Graph,
    /// Self-loop or duplicate lines that were dropped.
    pub dropped: usize,
}

/// One edge per line as two nonnegative integers; '#' starts a comment. A
/// `# nodes N` comment fixes the node count (otherwise max id + 1).
pub fn parse_edge_list(text: &str) -> Result<LoadedGraph> {
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut dropped = 0;
    let mut declared_n: Option<usize> = None;
    let mut max_id = 0usize;
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => {
                let comment = raw[at + 1..].trim();
                if let Some(rest) = comment.strip_prefix("nodes ") {
                    declared_n = rest.trim().parse::<usize>().ok();
                }
                &raw[..at]
            }
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (a, b) = (it.next(), it.next());
        let bad = || {
            GnfError::Data(format!("edge list line {}: expected two integers, got {raw:?}", lineno + 1))
        };
        let (a, b) = match (a, b) {
            (Some(a), Some(b)) if it.next().is_none() => (a, b),
            _ => return Err(bad()),
        };
        let u: usize = a.parse().map_err(|_| bad())?;
        let v: usize = b.parse().map_err(|_| bad())?;
        if u == v {
            dropped += 1;
            continue;
        }
        max_id = max_id.max(u).max(v);
        edges.push((u.min(v), u.max(v)));
    }
    let n = declared_n.unwrap_or(if edges.is_empty() { 0 } else { max_id + 1 });
    let mut graph = Graph::new(n);
    for (u, v) in edges {
        if graph.has_edge(u, v) {
            dropped += 1;
            continue;
        }
        graph.add_edge(u, v)?;
    }
    Ok(LoadedGraph { graph, dropped })
}

pub fn load_edge_list(path: &Path) -> Result<LoadedGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_edge_list(&text)
}

pub fn save_edge_list(graph: &Graph, path: &Path) -> Result<()> {
    std::fs::write(path, graph.to_edge_list()).map_err(|e| io_err(path, e))
}

const MANIFEST_HEADER: &str = "graph_id,n,edges,split,file";

/// Numbered edge-list files plus `manifest.csv` with schema
/// `graph_id,n,edges,split,file`. Graphs outside the train split are
/// recorded as test. Returns the manifest path.
pub fn export_graphs(dir: &Path, ds: &GraphDataset) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (i, g) in ds.graphs.iter().enumerate() {
        let file = format!("graph_{i:04}.edges");
        save_edge_list(g, &dir.join(&file))?;
        let split = if ds.train_idx.contains(&i) { "train" } else { "test" };
        manifest.push_str(&format!("{i},{},{},{split},{file}\n", g.n(), g.num_edges()));
    }
    let path = dir.join("manifest.csv");
    crate::error::write_text(&path, &manifest)?;
    Ok(path)
}

/// Read a directory written by `export_graphs`, cross-checking each edge
/// file against its manifest row. The dataset is named after the directory.
pub fn load_graph_dataset(dir: &Path) -> Result<GraphDataset> {
    let manifest_path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != MANIFEST_HEADER {
        return Err(GnfError::Data(format!(
            "{}: expected header `{MANIFEST_HEADER}`, got `{header}`",
            manifest_path.display()
        )));
    }
    let mut graphs = Vec::new();
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (row, line) in lines.enumerate() {
        let bad = |what: &str| {
            GnfError::Data(format!("{} row {}: {what}", manifest_path.display(), row + 2))
        };
        let parts: Vec<&str> = line.split(',').collect();
        let [_, n, edges, split, file] = parts[..] else {
            return Err(bad(&format!("expected 5 fields, got {}", parts.len())));
        };
        let n: usize = n.parse().map_err(|_| bad(&format!("bad node count `{n}`")))?;
        let edges: usize =
            edges.parse().map_err(|_| bad(&format!("bad edge count `{edges}`")))?;
        let loaded = load_edge_list(&dir.join(file))?;
        if loaded.graph.n() != n || loaded.graph.num_edges() != edges || loaded.dropped != 0 {
            return Err(bad(&format!("{file} does not match its manifest row")));
        }
        match split {
            "train" => train_idx.push(graphs.len()),
            "test" => test_idx.push(graphs.len()),
            other => return Err(bad(&format!("unknown split `{other}`"))),
        }
        graphs.push(loaded.graph);
    }
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(GraphDataset { graphs, train_idx, test_idx, name })
}

// ── point-set datasets ───────────────────────────────────────────────────

#[derive(Debug)]
pub struct PointSetDataset {
    /// Each example is a K x 2 point matrix.
    pub examples: Vec<Tensor>,
    pub name: String,
}

impl PointSetDataset {
    pub fn points_per_example(&self) -> usize {
        self.examples.first().map_or(0, |e| e.rows())
    }
}

pub const MOG_CORNERS: [[f64; 2]; 4] = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];

pub const HALF_MOON_POINTS: [[f64; 2]; 6] = [
    // Outer moon at arc parameters {0, pi/2, pi} of (cos t, sin t).
    [1.0, 0.0],
    [0.0, 1.0],
    [-1.0, 0.0],
    // Inner moon: (1 - cos t, 0.5 - sin t) at the same parameters.
    [0.0, 0.5],
    [1.0, -0.5],
    [2.0, 0.5],
];

fn noisy_points(base: &[[f64; 2]], sigma: f64, rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(base.len(), 2);
    for (i, p) in base.iter().enumerate() {
        t.set(i, 0, p[0] + sigma * rng.normal());
        t.set(i, 1, p[1] + sigma * rng.normal());
    }
    permute_rows(&t, rng)
}

fn permute_rows(t: &Tensor, rng: &mut Rng) -> Tensor {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    rng.shuffle(&mut order);
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (dst, &src) in order.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(t.row(src));
    }
    out
}

pub fn rotate_about_origin(t: &Tensor, theta: f64) -> Tensor {
    let (c, s) = (theta.cos(), theta.sin());
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for i in 0..t.rows() {
        let (x, y) = (t.get(i, 0), t.get(i, 1));
        out.set(i, 0, c * x - s * y);
        out.set(i, 1, s * x + c * y);
    }
    out
}

pub fn gen_mog_with_sigma(count: usize, sigma: f64, rng: &mut Rng) -> PointSetDataset {
    let examples = (0..count).map(|_| noisy_points(&MOG_CORNERS, sigma, rng)).collect();
    PointSetDataset { examples, name: "mog".into() }
}

/// Four points, one per corner of a square, with isotropic noise.
pub fn gen_mog(count: usize, rng: &mut Rng) -> PointSetDataset {
    gen_mog_with_sigma(count, 0.2, rng)
}

/// A square example rotated by a uniform angle about the origin, so only the
/// shape (not its orientation) is informative.
pub fn gen_mog_ring(count: usize, rng: &mut Rng) -> PointSetDataset {
    let examples = (0..count)
        .map(|_| {
            let sq = noisy_points(&MOG_CORNERS, 0.2, rng);
            let theta = rng.uniform() * std::f64::consts::TAU;
            rotate_about_origin(&sq, theta)
        })
        .collect();
    PointSetDataset { examples, name: "mog-ring".into() }
}

pub fn gen_half_moons_with_sigma(count: usize, sigma: f64, rng: &mut Rng) -> PointSetDataset {
    let examples = (0..count)
        .map(|_| noisy_points(&HALF_MOON_POINTS, sigma, rng))
        .collect();
    PointSetDataset { examples, name: "half-moons".into() }
}

/// Six points, three per moon at fixed arc positions, with isotropic noise.
pub fn gen_half_moons(count: usize, rng: &mut Rng) -> PointSetDataset {
    gen_half_moons_with_sigma(count, 0.1, rng)
}

// ── graph datasets ───────────────────────────────────────────────────────

#[derive(Debug)]
pub struct GraphDataset {
    pub graphs: Vec<Graph>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub name: String,
}

impl GraphDataset {
    pub fn train_graphs(&self) -> Vec<&Graph> {
        self.train_idx.iter().map(|&i| &self.graphs[i]).collect()
    }

    pub fn test_graphs(&self) -> Vec<&Graph> {
        self.test_idx.iter().map(|&i| &self.graphs[i]).collect()
    }
}

/// Shuffle and split with train fraction 0.8 (rounded down).
pub fn split(mut dataset: GraphDataset, rng: &mut Rng) -> GraphDataset {
    let mut idx: Vec<usize> = (0..dataset.graphs.len()).collect();
    rng.shuffle(&mut idx);
    let n_train = (dataset.graphs.len() as f64 * 0.8).floor() as usize;
    dataset.train_idx = idx[..n_train].to_vec();
    dataset.test_idx = idx[n_train..].to_vec();
    dataset
}

pub const COMMUNITY_P_INTRA: f64 = 0.7;
pub const COMMUNITY_P_INTER: f64 = 0.05;

/// Two-community graphs: 12..=20 nodes split as evenly as possible,
/// Bernoulli edges inside (0.7) and across (0.05) plus one forced cross
/// edge; resampled until connected.
pub fn gen_community_small(count: usize, rng: &mut Rng) -> GraphDataset {
    let graphs = (0..count)
        .map(|_| loop {
            let n = rng.range_inclusive(12, 20) as usize;
            let a = n.div_ceil(2);
            let mut g = Graph::new(n);
            for u in 0..n {
                for v in u + 1..n {
                    let intra = (u < a) == (v < a);
                    let p = if intra { COMMUNITY_P_INTRA } else { COMMUNITY_P_INTER };
                    if rng.bernoulli(p) {
                        g.add_edge(u, v).unwrap();
                    }
                }
            }
            let u = rng.below(a);
            let v = a + rng.below(n - a);
            g.add_edge(u, v).unwrap();
            if g.connected() {
                break g;
            }
        })
        .collect();
    GraphDataset { graphs, train_idx: vec![], test_idx: vec![], name: "community-small".into() }
}

/// Preferential-attachment surrogate network used when no source graph is
/// supplied: a triangle seed, then each new node attaches to 2 distinct
/// degree-proportional targets.
pub fn ba_surrogate(n: usize, rng: &mut Rng) -> Graph {
    assert!(n >= 3);
    let mut g = Graph::new(n);
    // Repeated-endpoint list gives degree-proportional sampling.
    let mut endpoints: Vec<u32> = vec![0, 1, 0, 2, 1, 2];
    g.add_edge(0, 1).unwrap();
    g.add_edge(0, 2).unwrap();
    g.add_edge(1, 2).unwrap();
    for v in 3..n {
        let a = endpoints[rng.below(endpoints.len())];
        let b = loop {
            let b = endpoints[rng.below(endpoints.len())];
            if b != a {
                break b;
            }
        };
        g.add_edge(v, a as usize).unwrap();
        g.add_edge(v, b as usize).unwrap();
        endpoints.extend([a, b, v as u32, v as u32]);
    }
    g
}

/// Radius-1 ego networks with 4..=18 nodes, centers sampled uniformly from
/// the valid ones (with replacement).
pub fn gen_ego_small(source: Option<&Graph>, count: usize, rng: &mut Rng) -> Result<GraphDataset> {
    let owned;
    let src = match source {
        Some(g) => g,
        None => {
            owned = ba_surrogate(2000, rng);
            &owned
        }
    };
    let valid: Vec<usize> = (0..src.n())
        .filter(|&v| {
            let size = src.degree(v) + 1;
            (4..=18).contains(&size)
        })
        .collect();
    if valid.is_empty() {
        return Err(GnfError::Data(
            "source graph has no ego network with 4..=18 nodes".into(),
        ));
    }
    let graphs = (0..count)
        .map(|_| {
            let center = valid[rng.below(valid.len())];
            src.ego_net(center)
        })
        .collect();
    Ok(GraphDataset { graphs, train_idx: vec![], test_idx: vec![], name: "ego-small".into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_degrees_clustering_on_a_paw() {
        // Triangle 0-1-2 plus pendant 3 attached to 2.
        let mut g = Graph::new(4);
        for (u, v) in [(0, 1), (0, 2), (1, 2), (2, 3)] {
            g.add_edge(u, v).unwrap();
        }
        assert_eq!(g.num_edges(), 4);
        assert_eq!(g.degrees(), vec![2, 2, 3, 1]);
        assert_eq!(g.edges(), vec![(0, 1), (0, 2), (1, 2), (2, 3)]);
        let c = g.clustering();
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], 1.0);
        assert!((c[2] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(c[3], 0.0);
        assert!(g.connected());
    }

    #[test]
    fn self_loop_rejected() {
        let mut g = Graph::new(3);
        assert!(g.add_edge(1, 1).is_err());
    }

    #[test]
    fn bitset_works_past_one_word() {
        let mut g = Graph::new(130);
        g.add_edge(0, 129).unwrap();
        g.add_edge(64, 65).unwrap();
        assert!(g.has_edge(129, 0));
        assert_eq!(g.degree(64), 1);
        assert_eq!(g.neighbors(0).collect::<Vec<_>>(), vec![129]);
        assert!(!g.connected());
    }

    #[test]
    fn permuted_preserves_structure() {
        let mut g = Graph::new(5);
        for (u, v) in [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)] {
            g.add_edge(u, v).unwrap();
        }
        let perm = [2, 0, 4, 1, 3];
        let p = g.permuted(&perm);
        assert_eq!(p.num_edges(), 5);
        let mut d1 = g.degrees();
        let mut d2 = p.degrees();
        d1.sort_unstable();
        d2.sort_unstable();
        assert_eq!(d1, d2);
        assert!(p.has_edge(2, 0) && p.has_edge(0, 4));
    }

    #[test]
    fn ego_net_of_star_center_is_the_star() {
        let mut g = Graph::new(8);
        for leaf in 1..=5 {
            g.add_edge(0, leaf).unwrap();
        }
        g.add_edge(6, 7).unwrap();
        let ego = g.ego_net(0);
        assert_eq!(ego.n(), 6);
        assert_eq!(ego.num_edges(), 5);
        assert_eq!(ego.degree(0), 5);
    }

    #[test]
    fn mog_zero_noise_hits_corners_exactly() {
        let mut rng = Rng::new(31);
        let ds = gen_mog_with_sigma(50, 0.0, &mut rng);
        for ex in &ds.examples {
            let mut pts: Vec<(i64, i64)> =
                (0..4).map(|i| (ex.get(i, 0) as i64, ex.get(i, 1) as i64)).collect();
            pts.sort_unstable();
            assert_eq!(pts, vec![(-1, -1), (-1, 1), (1, -1), (1, 1)]);
        }
    }

    #[test]
    fn mog_corner_means_converge() {
        let mut rng = Rng::new(32);
        let ds = gen_mog(10_000, &mut rng);
        let mut sums = [[0.0f64; 2]; 4];
        let mut counts = [0usize; 4];
        for ex in &ds.examples {
            for i in 0..4 {
                let (x, y) = (ex.get(i, 0), ex.get(i, 1));
                // Nearest corner recovers the generator's assignment; noise is
                // 5 sigma away from the midpoint between corners.
                let c = MOG_CORNERS
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da = (x - a[0]).powi(2) + (y - a[1]).powi(2);
                        let db = (x - b[0]).powi(2) + (y - b[1]).powi(2);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
                    .0;
                sums[c][0] += x;
                sums[c][1] += y;
                counts[c] += 1;
            }
        }
        for c in 0..4 {
            let mx = sums[c][0] / counts[c] as f64;
            let my = sums[c][1] / counts[c] as f64;
            assert!((mx - MOG_CORNERS[c][0]).abs() < 0.02, "corner {c}: {mx}");
            assert!((my - MOG_CORNERS[c][1]).abs() < 0.02, "corner {c}: {my}");
        }
    }

    #[test]
    fn ring_rotation_preserves_pairwise_distances() {
        let mut rng = Rng::new(33);
        let ds = gen_mog(20, &mut rng);
        for ex in &ds.examples {
            let rot = rotate_about_origin(ex, 1.234);
            let mut before: Vec<f64> = vec![];
            let mut after: Vec<f64> = vec![];
            for i in 0..4 {
                for j in i + 1..4 {
                    let d = |t: &Tensor| {
                        ((t.get(i, 0) - t.get(j, 0)).powi(2)
                            + (t.get(i, 1) - t.get(j, 1)).powi(2))
                        .sqrt()
                    };
                    before.push(d(ex));
                    after.push(d(&rot));
                }
            }
            before.sort_by(|a, b| a.partial_cmp(b).unwrap());
            after.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in before.iter().zip(&after) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ring_mean_radius_near_sqrt_two() {
        let mut rng = Rng::new(34);
        let ds = gen_mog_ring(10_000, &mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for ex in &ds.examples {
            for i in 0..4 {
                total += (ex.get(i, 0).powi(2) + ex.get(i, 1).powi(2)).sqrt();
                count += 1;
            }
        }
        let mean = total / count as f64;
        assert!((mean - 2.0f64.sqrt()).abs() < 0.05, "mean radius {mean}");
    }

    #[test]
    fn ring_angles_are_uniform() {
        let mut rng = Rng::new(35);
        let ds = gen_mog_ring(10_000, &mut rng);
        let bins = 8;
        let mut hist = vec![0usize; bins];
        for ex in &ds.examples {
            for i in 0..4 {
                let a = ex.get(i, 1).atan2(ex.get(i, 0)).rem_euclid(std::f64::consts::TAU);
                hist[((a / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1)] += 1;
            }
        }
        let n = 40_000.0;
        let p = 1.0 / bins as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for (b, &h) in hist.iter().enumerate() {
            assert!(
                (h as f64 - n * p).abs() <= 3.0 * sigma,
                "bin {b}: {h} vs expected {}",
                n * p
            );
        }
    }

    #[test]
    fn half_moons_zero_noise_and_upper_moon_pattern() {
        let mut rng = Rng::new(36);
        let ds = gen_half_moons_with_sigma(30, 0.0, &mut rng);
        for ex in &ds.examples {
            let mut pts: Vec<[f64; 2]> = (0..6).map(|i| [ex.get(i, 0), ex.get(i, 1)]).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want = HALF_MOON_POINTS.to_vec();
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(pts, want);
            // Exactly three points on the upper moon: the unit-circle arc
            // with nonnegative y.
            let upper = pts
                .iter()
                .filter(|p| p[1] >= 0.0 && (p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-9);
            assert_eq!(upper.count(), 3);
        }
    }

    #[test]
    fn half_moons_position_means_converge() {
        let mut rng = Rng::new(37);
        let ds = gen_half_moons(10_000, &mut rng);
        let mut sums = [[0.0f64; 2]; 6];
        let mut counts = [0usize; 6];
        for ex in &ds.examples {
            for i in 0..6 {
                let (x, y) = (ex.get(i, 0), ex.get(i, 1));
                let c = HALF_MOON_POINTS
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da = (x - a[0]).powi(2) + (y - a[1]).powi(2);
                        let db = (x - b[0]).powi(2) + (y - b[1]).powi(2);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
                    .0;
                sums[c][0] += x;
                sums[c][1] += y;
                counts[c] += 1;
            }
        }
        for c in 0..6 {
            let mx = sums[c][0] / counts[c] as f64;
            let my = sums[c][1] / counts[c] as f64;
            assert!((mx - HALF_MOON_POINTS[c][0]).abs() < 0.02, "point {c}: {mx}");
            assert!((my - HALF_MOON_POINTS[c][1]).abs() < 0.02, "point {c}: {my}");
        }
    }

    #[test]
    fn community_graphs_well_formed() {
        let mut rng = Rng::new(38);
        let ds = gen_community_small(200, &mut rng);
        for g in &ds.graphs {
            assert!((12..=20).contains(&g.n()));
            assert!(g.connected());
            let a = g.n().div_ceil(2);
            let cross = g
                .edges()
                .iter()
                .filter(|&&(u, v)| ((u as usize) < a) != ((v as usize) < a))
                .count();
            assert!(cross >= 1);
        }
    }

    #[test]
    fn community_intra_density_converges() {
        let mut rng = Rng::new(39);
        let ds = gen_community_small(10_000, &mut rng);
        let mut intra_edges = 0usize;
        let mut intra_pairs = 0usize;
        for g in &ds.graphs {
            let a = g.n().div_ceil(2);
            let b = g.n() - a;
            intra_pairs += a * (a - 1) / 2 + b * (b - 1) / 2;
            intra_edges += g
                .edges()
                .iter()
                .filter(|&&(u, v)| ((u as usize) < a) == ((v as usize) < a))
                .count();
        }
        let density = intra_edges as f64 / intra_pairs as f64;
        assert!((density - COMMUNITY_P_INTRA).abs() < 0.01, "intra density {density}");
    }

    #[test]
    fn ego_outputs_have_centers_and_respect_range() {
        let mut rng = Rng::new(40);
        let ds = gen_ego_small(None, 200, &mut rng).unwrap();
        assert_eq!(ds.graphs.len(), 200);
        for g in &ds.graphs {
            assert!((4..=18).contains(&g.n()));
            assert!((0..g.n()).any(|v| g.degree(v) == g.n() - 1), "no center found");
        }
    }

    #[test]
    fn ego_with_no_valid_center_fails_naming_range() {
        let mut rng = Rng::new(41);
        let mut tiny = Graph::new(2);
        tiny.add_edge(0, 1).unwrap();
        let err = gen_ego_small(Some(&tiny), 5, &mut rng).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('4') && msg.contains("18"), "{msg}");
    }

    #[test]
    fn edge_list_parse_and_round_trip() {
        let loaded = parse_edge_list("0 1\n1 2\n").unwrap();
        assert_eq!(loaded.graph.n(), 3);
        assert_eq!(loaded.graph.num_edges(), 2);
        assert_eq!(loaded.dropped, 0);

        let with_loop = parse_edge_list("0 1\n2 2\n").unwrap();
        assert_eq!(with_loop.dropped, 1);
        assert_eq!(with_loop.graph.num_edges(), 1);

        let dup = parse_edge_list("0 1\n1 0\n").unwrap();
        assert_eq!(dup.dropped, 1);

        let err = parse_edge_list("0 1\nnope\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let mut rng = Rng::new(42);
        let ds = gen_community_small(3, &mut rng);
        for g in &ds.graphs {
            let text = g.to_edge_list();
            let back = parse_edge_list(&text).unwrap();
            assert_eq!(back.graph.n(), g.n());
            assert_eq!(back.graph.edges(), g.edges());
        }
    }

    #[test]
    fn isolated_node_survives_round_trip_via_header() {
        let mut g = Graph::new(4);
        g.add_edge(0, 1).unwrap();
        let back = parse_edge_list(&g.to_edge_list()).unwrap();
        assert_eq!(back.graph.n(), 4);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let mut rng = Rng::new(43);
        let ds = gen_community_small(100, &mut rng);
        let ds = split(ds, &mut Rng::new(7));
        assert_eq!(ds.train_idx.len(), 80);
        assert_eq!(ds.test_idx.len(), 20);
        let mut all: Vec<usize> = ds.train_idx.iter().chain(&ds.test_idx).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());

        let small = GraphDataset {
            graphs: (0..5).map(|_| Graph::new(3)).collect(),
            train_idx: vec![],
            test_idx: vec![],
            name: "t".into(),
        };
        let small = split(small, &mut Rng::new(8));
        assert_eq!((small.train_idx.len(), small.test_idx.len()), (4, 1));

        let ds2 = gen_community_small(100, &mut Rng::new(43));
        let ds2 = split(ds2, &mut Rng::new(7));
        assert_eq!(ds.train_idx, ds2.train_idx);
    }

    #[test]
    fn dot_export_mentions_every_node_and_edge() {
        let mut g = Graph::new(3);
        g.add_edge(0, 2).unwrap();
        let dot = g.to_dot();
        assert!(dot.starts_with("graph {"));
        assert!(dot.contains("0 -- 2;"));
        assert!(dot.contains("1;"));
    }

    #[test]
    fn dataset_directories_round_trip_with_their_split() {
        let mut rng = Rng::new(51);
        let ds = split(gen_community_small(7, &mut rng), &mut rng);
        let dir = std::env::temp_dir().join("gnf_dataset_roundtrip").join(&ds.name);
        std::fs::remove_dir_all(&dir).ok();
        export_graphs(&dir, &ds).unwrap();

        let back = load_graph_dataset(&dir).unwrap();
        assert_eq!(back.name, "community-small");
        assert_eq!(back.graphs.len(), 7);
        let as_set = |idx: &[usize]| {
            let mut v = idx.to_vec();
            v.sort_unstable();
            v
        };
        assert_eq!(as_set(&back.train_idx), as_set(&ds.train_idx));
        assert_eq!(as_set(&back.test_idx), as_set(&ds.test_idx));
        for (a, b) in ds.graphs.iter().zip(&back.graphs) {
            assert_eq!(a.n(), b.n());
            assert_eq!(a.edges(), b.edges());
        }

        // A tampered edge file no longer matches its manifest row.
        let victim = dir.join("graph_0000.edges");
        let mut text = std::fs::read_to_string(&victim).unwrap();
        text.push_str("0 1\n0 2\n0 3\n0 4\n0 5\n");
        std::fs::write(&victim, text).unwrap();
        assert!(load_graph_dataset(&dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
