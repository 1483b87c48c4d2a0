//! Graph-set comparison: degree, clustering, and small-graphlet orbit
//! statistics per graph, then a kernel MMD between two sets of graphs.
//!
//! Orbit counts cover the connected graphlets on 2 to 4 nodes, collapsed to
//! an 11-slot vector per node: edge; path-of-3 end and middle; triangle;
//! path-of-4 end and middle; claw leaf and center; 4-cycle; paw (any
//! position); and dense-4 (diamond or K4, any position). Two independent
//! counters exist: an O(N^4) induced-subgraph scan and a slow
//! pattern-matching path used as its oracle.

use std::path::Path;

use crate::error::{write_text, GnfError, Result};
use crate::graph::Graph;

pub const ORBITS: usize = 11;
pub const CLUSTER_BINS: usize = 100;
/// Exhaustive 4-subset enumeration budget.
pub const ORBIT_MAX_NODES: usize = 64;

const O_EDGE: usize = 0;
const O_P3_END: usize = 1;
const O_P3_MID: usize = 2;
const O_TRIANGLE: usize = 3;
const O_P4_END: usize = 4;
const O_P4_MID: usize = 5;
const O_CLAW_LEAF: usize = 6;
const O_CLAW_CENTER: usize = 7;
const O_C4: usize = 8;
const O_PAW: usize = 9;
const O_DENSE4: usize = 10;

/// Counts of node degrees; slot d holds the number of degree-d nodes.
pub fn degree_histogram(g: &Graph) -> Vec<usize> {
    let mut hist = vec![0usize; g.n().max(1)];
    for d in g.degrees() {
        hist[d] += 1;
    }
    hist
}

/// Node clustering coefficients dropped into `bins` equal slices of [0, 1];
/// a coefficient of exactly 1 lands in the last bin.
pub fn clustering_histogram(g: &Graph, bins: usize) -> Vec<usize> {
    let mut hist = vec![0usize; bins.max(1)];
    for c in g.clustering() {
        let slot = ((c * bins as f64) as usize).min(bins - 1);
        hist[slot] += 1;
    }
    hist
}

/// Per-node 11-orbit counts by exhaustive induced-subgraph enumeration.
pub fn orbit_counts(g: &Graph) -> Result<Vec<[u64; ORBITS]>> {
    let n = g.n();
    if n > ORBIT_MAX_NODES {
        return Err(GnfError::Data(format!(
            "orbit counting is budgeted for {ORBIT_MAX_NODES} nodes, got {n}"
        )));
    }
    let mut counts = vec![[0u64; ORBITS]; n];

    for i in 0..n {
        for j in (i + 1)..n {
            if g.has_edge(i, j) {
                counts[i][O_EDGE] += 1;
                counts[j][O_EDGE] += 1;
            }
        }
    }

    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                let nodes = [a, b, c];
                let mut deg = [0u8; 3];
                let mut m = 0;
                for x in 0..3 {
                    for y in (x + 1)..3 {
                        if g.has_edge(nodes[x], nodes[y]) {
                            deg[x] += 1;
                            deg[y] += 1;
                            m += 1;
                        }
                    }
                }
                match m {
                    3 => {
                        for &v in &nodes {
                            counts[v][O_TRIANGLE] += 1;
                        }
                    }
                    2 => {
                        for x in 0..3 {
                            let orbit = if deg[x] == 2 { O_P3_MID } else { O_P3_END };
                            counts[nodes[x]][orbit] += 1;
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    for a in 0..n {
        for b in (a + 1)..n {
            for c in (b + 1)..n {
                for d in (c + 1)..n {
                    let nodes = [a, b, c, d];
                    let mut deg = [0u8; 4];
                    let mut m = 0;
                    for x in 0..4 {
                        for y in (x + 1)..4 {
                            if g.has_edge(nodes[x], nodes[y]) {
                                deg[x] += 1;
                                deg[y] += 1;
                                m += 1;
                            }
                        }
                    }
                    match m {
                        3 => {
                            // Connected three-edge graphs on four nodes are
                            // the path and the claw; a triangle plus an
                            // isolated node shows up as a degree-0 slot.
                            if deg.contains(&0) {
                                continue;
                            }
                            if deg.contains(&3) {
                                for x in 0..4 {
                                    let orbit =
                                        if deg[x] == 3 { O_CLAW_CENTER } else { O_CLAW_LEAF };
                                    counts[nodes[x]][orbit] += 1;
                                }
                            } else {
                                for x in 0..4 {
                                    let orbit = if deg[x] == 2 { O_P4_MID } else { O_P4_END };
                                    counts[nodes[x]][orbit] += 1;
                                }
                            }
                        }
                        4 => {
                            // Four edges on four nodes always connect them:
                            // either the 4-cycle or the paw.
                            let orbit =
                                if deg.iter().all(|&d| d == 2) { O_C4 } else { O_PAW };
                            for &v in &nodes {
                                counts[v][orbit] += 1;
                            }
                        }
                        5 | 6 => {
                            for &v in &nodes {
                                counts[v][O_DENSE4] += 1;
                            }
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    Ok(counts)
}

struct Pattern {
    n: usize,
    edges: &'static [(usize, usize)],
    /// Orbit slot per pattern position.
    labels: &'static [usize],
}

const PATTERNS: &[Pattern] = &[
    Pattern { n: 2, edges: &[(0, 1)], labels: &[O_EDGE, O_EDGE] },
    Pattern { n: 3, edges: &[(0, 1), (1, 2)], labels: &[O_P3_END, O_P3_MID, O_P3_END] },
    Pattern {
        n: 3,
        edges: &[(0, 1), (0, 2), (1, 2)],
        labels: &[O_TRIANGLE, O_TRIANGLE, O_TRIANGLE],
    },
    Pattern {
        n: 4,
        edges: &[(0, 1), (1, 2), (2, 3)],
        labels: &[O_P4_END, O_P4_MID, O_P4_MID, O_P4_END],
    },
    Pattern {
        n: 4,
        edges: &[(0, 1), (0, 2), (0, 3)],
        labels: &[O_CLAW_CENTER, O_CLAW_LEAF, O_CLAW_LEAF, O_CLAW_LEAF],
    },
    Pattern {
        n: 4,
        edges: &[(0, 1), (1, 2), (2, 3), (3, 0)],
        labels: &[O_C4, O_C4, O_C4, O_C4],
    },
    Pattern {
        n: 4,
        edges: &[(0, 1), (0, 2), (1, 2), (0, 3)],
        labels: &[O_PAW, O_PAW, O_PAW, O_PAW],
    },
    Pattern {
        n: 4,
        edges: &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)],
        labels: &[O_DENSE4, O_DENSE4, O_DENSE4, O_DENSE4],
    },
    Pattern {
        n: 4,
        edges: &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        labels: &[O_DENSE4, O_DENSE4, O_DENSE4, O_DENSE4],
    },
];

fn permutations(s: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            prefix.push(v);
            go(prefix, left, out);
            prefix.pop();
            left.insert(i, v);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..s).collect(), &mut out);
    out
}

/// Slow oracle: explicit induced-subgraph matching of each graphlet pattern
/// over every node subset, one increment per (node, orbit) incidence.
pub fn orbit_counts_slow(g: &Graph) -> Result<Vec<[u64; ORBITS]>> {
    let n = g.n();
    if n > 16 {
        return Err(GnfError::Data(format!(
            "the slow orbit path is an oracle for small graphs, got {n} nodes"
        )));
    }
    let mut counts = vec![[0u64; ORBITS]; n];
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    for s in 2..=4usize.min(n) {
        let mut pick = (0..s).collect::<Vec<usize>>();
        loop {
            subsets.push(pick.clone());
            // next combination in lexicographic order
            let mut i = s;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if pick[i] != i + n - s {
                    pick[i] += 1;
                    for j in (i + 1)..s {
                        pick[j] = pick[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    pick.clear();
                    break;
                }
            }
            if pick.is_empty() {
                break;
            }
        }
    }

    for subset in &subsets {
        let s = subset.len();
        for pat in PATTERNS.iter().filter(|p| p.n == s) {
            let mut hits: Vec<(usize, usize)> = Vec::new();
            for perm in permutations(s) {
                let mut ok = true;
                'pairs: for x in 0..s {
                    for y in (x + 1)..s {
                        let want = pat.edges.contains(&(x, y)) || pat.edges.contains(&(y, x));
                        if g.has_edge(subset[perm[x]], subset[perm[y]]) != want {
                            ok = false;
                            break 'pairs;
                        }
                    }
                }
                if ok {
                    for x in 0..s {
                        hits.push((subset[perm[x]], pat.labels[x]));
                    }
                }
            }
            hits.sort_unstable();
            hits.dedup();
            for (node, orbit) in hits {
                counts[node][orbit] += 1;
            }
        }
    }
    Ok(counts)
}

/// Per-graph orbit histogram: node counts summed into the 11 slots.
pub fn orbit_histogram(per_node: &[[u64; ORBITS]]) -> Vec<usize> {
    let mut hist = vec![0usize; ORBITS];
    for node in per_node {
        for (slot, &c) in hist.iter_mut().zip(node.iter()) {
            *slot += c as usize;
        }
    }
    hist
}

/// First Wasserstein distance between two histograms over the same support,
/// after normalizing each to unit mass. A zero-mass histogram degenerates
/// to all mass in slot 0, so two empty histograms are at distance zero.
pub fn wasserstein1(a: &[usize], b: &[usize], bin_width: f64) -> f64 {
    let len = a.len().max(b.len());
    let get = |h: &[usize], i: usize| h.get(i).copied().unwrap_or(0) as f64;
    let mass = |h: &[usize]| h.iter().sum::<usize>() as f64;
    let (ma, mb) = (mass(a), mass(b));
    let prob = |h: &[usize], m: f64, i: usize| {
        if m == 0.0 {
            if i == 0 { 1.0 } else { 0.0 }
        } else {
            get(h, i) / m
        }
    };
    let mut cdf_gap = 0.0;
    let mut diff = 0.0;
    for i in 0..len {
        diff += prob(a, ma, i) - prob(b, mb, i);
        cdf_gap += diff.abs();
    }
    cdf_gap * bin_width
}

/// Squared MMD between two sets of histograms under the Gaussian-over-EMD
/// kernel k(x, y) = exp(-W1(x, y)^2 / (2 sigma^2)). The V-statistic form is
/// the squared RKHS distance of empirical means, so it is nonnegative and
/// exactly zero when the sets coincide; rounding noise is floored at zero.
pub fn mmd_squared(a: &[Vec<usize>], b: &[Vec<usize>], sigma: f64, bin_width: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(GnfError::Data("mmd needs two nonempty sets".into()));
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(GnfError::Config(format!("kernel sigma {sigma} out of range")));
    }
    let kernel = |x: &Vec<usize>, y: &Vec<usize>| {
        let w = wasserstein1(x, y, bin_width);
        (-w * w / (2.0 * sigma * sigma)).exp()
    };
    let mean_kernel = |xs: &[Vec<usize>], ys: &[Vec<usize>]| {
        let mut total = 0.0;
        for x in xs {
            for y in ys {
                total += kernel(x, y);
            }
        }
        total / (xs.len() * ys.len()) as f64
    };
    let value = mean_kernel(a, a) + mean_kernel(b, b) - 2.0 * mean_kernel(a, b);
    Ok(value.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdSigmas {
    pub degree: f64,
    pub cluster: f64,
    pub orbit: f64,
}

impl Default for MmdSigmas {
    fn default() -> Self {
        MmdSigmas { degree: 1.0, cluster: 0.1, orbit: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MmdReport {
    pub degree_mmd: f64,
    pub cluster_mmd: f64,
    pub orbit_mmd: f64,
    pub n_test: usize,
    pub n_generated: usize,
}

/// The three statistic MMDs between a test set and a generated set.
/// Degree bins are one degree wide; clustering bins span 1/100; orbit
/// histograms live on the 11 fixed slots.
pub fn evaluate_generated(
    test: &[&Graph],
    generated: &[&Graph],
    sigmas: &MmdSigmas,
) -> Result<MmdReport> {
    if test.is_empty() || generated.is_empty() {
        return Err(GnfError::Data("evaluation needs two nonempty graph sets".into()));
    }
    let degree = |gs: &[&Graph]| gs.iter().map(|g| degree_histogram(g)).collect::<Vec<_>>();
    let cluster = |gs: &[&Graph]| {
        gs.iter().map(|g| clustering_histogram(g, CLUSTER_BINS)).collect::<Vec<_>>()
    };
    let orbit = |gs: &[&Graph]| -> Result<Vec<Vec<usize>>> {
        gs.iter().map(|g| Ok(orbit_histogram(&orbit_counts(g)?))).collect()
    };
    let degree_mmd = mmd_squared(&degree(test), &degree(generated), sigmas.degree, 1.0)?;
    let cluster_mmd = mmd_squared(
        &cluster(test),
        &cluster(generated),
        sigmas.cluster,
        1.0 / CLUSTER_BINS as f64,
    )?;
    let orbit_mmd = mmd_squared(&orbit(test)?, &orbit(generated)?, sigmas.orbit, 1.0)?;
    Ok(MmdReport {
        degree_mmd,
        cluster_mmd,
        orbit_mmd,
        n_test: test.len(),
        n_generated: generated.len(),
    })
}

/// Greedy node-count matching: for each test graph in order, pick the
/// still-unused generated graph with the nearest node count (lowest index
/// on ties). Returns one generated index per test graph.
pub fn subsample_matching_sizes(test: &[&Graph], generated: &[&Graph]) -> Result<Vec<usize>> {
    if generated.len() < test.len() {
        return Err(GnfError::Data(format!(
            "need at least {} generated graphs to match the test set, got {}",
            test.len(),
            generated.len()
        )));
    }
    let mut used = vec![false; generated.len()];
    let mut picks = Vec::with_capacity(test.len());
    for t in test {
        let want = t.n() as i64;
        let mut best: Option<(i64, usize)> = None;
        for (i, g) in generated.iter().enumerate() {
            if used[i] {
                continue;
            }
            let gap = (g.n() as i64 - want).abs();
            if best.map_or(true, |(bg, _)| gap < bg) {
                best = Some((gap, i));
            }
        }
        let (_, i) = best.unwrap();
        used[i] = true;
        picks.push(i);
    }
    Ok(picks)
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub dataset: String,
    pub protocol: String,
    pub seed: u64,
    pub report: MmdReport,
}

/// Evaluation CSV:
/// `dataset,protocol,degree_mmd,cluster_mmd,orbit_mmd,n_test,n_generated,seed`.
pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut out =
        String::from("dataset,protocol,degree_mmd,cluster_mmd,orbit_mmd,n_test,n_generated,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.protocol,
            r.report.degree_mmd,
            r.report.cluster_mmd,
            r.report.orbit_mmd,
            r.report.n_test,
            r.report.n_generated,
            r.seed
        ));
    }
    write_text(path, &out)
}
