//! Labeled graphs, TU-format ingestion, distance neighborhoods and
//! stratified cross-validation folds.
//!
//! A TU dataset directory `DS/` holds four text files:
//!
//! * `DS_A.txt`: one `i, j` edge per line, 1-based global node ids
//! * `DS_graph_indicator.txt`: line `m` is the 1-based graph id of node `m`
//! * `DS_graph_labels.txt`: line `g` is the integer label of graph `g`
//! * `DS_node_labels.txt`: line `m` is the integer label of node `m`
//!
//! Node and class labels are remapped to dense 0-based indices in ascending
//! order of their original values.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An undirected simple graph with one discrete label per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_labels: Vec<usize>,
    adjacency: Vec<Vec<usize>>,
    label: usize,
    // neighbor_sets[s - 1][i] = nodes at shortest-path distance exactly s from i
    neighbor_sets: Vec<Vec<Vec<usize>>>,
}

impl Graph {
    /// Builds a graph from dense node labels and an undirected edge list.
    /// Duplicate edges are collapsed; self-loops are rejected.
    pub fn new(node_labels: Vec<usize>, edges: &[(usize, usize)], label: usize) -> Result<Self> {
        let n = node_labels.len();
        let mut sets = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::argument(format!(
                    "edge ({a}, {b}) outside a graph with {n} nodes"
                )));
            }
            if a == b {
                return Err(Error::argument(format!("self-loop on node {a}")));
            }
            sets[a].insert(b);
            sets[b].insert(a);
        }
        Ok(Graph {
            node_labels,
            adjacency: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            label,
            neighbor_sets: Vec::new(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.node_labels.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn node_labels(&self) -> &[usize] {
        &self.node_labels
    }

    /// Sorted distance-1 neighbors of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Dense symmetric 0/1 adjacency matrix.
    pub fn adjacency_matrix(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut a = Array2::zeros((n, n));
        for (i, row) in self.adjacency.iter().enumerate() {
            for &j in row {
                a[[i, j]] = 1.0;
            }
        }
        a
    }

    /// The n×k one-hot node-label matrix.
    pub fn one_hot(&self, k: usize) -> Array2<f64> {
        let mut h = Array2::zeros((self.num_nodes(), k));
        for (i, &l) in self.node_labels.iter().enumerate() {
            h[[i, l]] = 1.0;
        }
        h
    }

    /// Radius up to which neighbor sets have been computed.
    pub fn neighbor_radius(&self) -> usize {
        self.neighbor_sets.len()
    }

    /// Populates the distance-`s` neighbor sets for `s = 1..=k_max` by
    /// breadth-first search from every node.
    pub fn compute_neighbor_sets(&mut self, k_max: usize) {
        let n = self.num_nodes();
        let mut sets = vec![vec![Vec::new(); n]; k_max];
        let mut dist = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for root in 0..n {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[root] = 0;
            queue.clear();
            queue.push_back(root);
            while let Some(u) = queue.pop_front() {
                if dist[u] == k_max {
                    continue;
                }
                for &v in &self.adjacency[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        sets[dist[v] - 1][root].push(v);
                        queue.push_back(v);
                    }
                }
            }
            for level in sets.iter_mut() {
                level[root].sort_unstable();
            }
        }
        self.neighbor_sets = sets;
    }

    /// Nodes at distance exactly `s` (1-based) from `i`.
    ///
    /// Panics if `s` exceeds the computed radius.
    pub fn neighbor_set(&self, s: usize, i: usize) -> &[usize] {
        assert!(
            s >= 1 && s <= self.neighbor_sets.len(),
            "distance {s} outside computed neighbor radius {}",
            self.neighbor_sets.len()
        );
        &self.neighbor_sets[s - 1][i]
    }

    /// n×n indicator of node pairs at distance exactly `s`.
    pub fn distance_mask(&self, s: usize) -> Array2<f64> {
        let n = self.num_nodes();
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for &j in self.neighbor_set(s, i) {
                m[[i, j]] = 1.0;
            }
        }
        m
    }

    /// Returns the graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Graph {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n);
        let mut labels = vec![0; n];
        for i in 0..n {
            labels[perm[i]] = self.node_labels[i];
        }
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (perm[a], perm[b]))
            .collect();
        let mut g = Graph::new(labels, &edges, self.label).expect("permutation preserves validity");
        if self.neighbor_radius() > 0 {
            g.compute_neighbor_sets(self.neighbor_radius());
        }
        g
    }

    /// Undirected edges as `(a, b)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, row) in self.adjacency.iter().enumerate() {
            out.extend(row.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }
}

/// A collection of graphs sharing one node alphabet and one class universe.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    /// Node alphabet size.
    pub k: usize,
    pub num_classes: usize,
    /// Original node label value for each dense index.
    pub node_label_values: Vec<i64>,
    /// Original graph label value for each dense index.
    pub class_values: Vec<i64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs.iter().map(Graph::num_nodes).sum()
    }

    pub fn mean_nodes(&self) -> f64 {
        self.total_nodes() as f64 / self.len().max(1) as f64
    }

    pub fn compute_neighbor_sets(&mut self, k_max: usize) {
        for g in &mut self.graphs {
            g.compute_neighbor_sets(k_max);
        }
    }

    /// Drops graphs with more than `max_nodes` nodes, returning how many were
    /// removed.
    pub fn retain_max_nodes(&mut self, max_nodes: usize) -> usize {
        let before = self.graphs.len();
        self.graphs.retain(|g| g.num_nodes() <= max_nodes);
        let removed = before - self.graphs.len();
        if removed > 0 {
            log::warn!(
                "{}: excluded {removed} graphs with more than {max_nodes} nodes",
                self.name
            );
        }
        removed
    }

    /// A dataset holding the graphs at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            graphs: indices.iter().map(|&i| self.graphs[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            graphs: Vec::new(),
            k: self.k,
            num_classes: self.num_classes,
            node_label_values: self.node_label_values.clone(),
            class_values: self.class_values.clone(),
        }
    }

    /// Writes the dataset as TU text files named `<name>_*.txt` into `dir`.
    pub fn write_tu(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = |suffix: &str| fs::File::create(dir.join(format!("{}_{suffix}.txt", self.name)));
        let mut a = std::io::BufWriter::new(file("A")?);
        let mut ind = std::io::BufWriter::new(file("graph_indicator")?);
        let mut gl = std::io::BufWriter::new(file("graph_labels")?);
        let mut nl = std::io::BufWriter::new(file("node_labels")?);
        let mut offset = 0;
        for (gid, g) in self.graphs.iter().enumerate() {
            writeln!(gl, "{}", self.class_values[g.label()])?;
            for &l in g.node_labels() {
                writeln!(ind, "{}", gid + 1)?;
                writeln!(nl, "{}", self.node_label_values[l])?;
            }
            for (i, row) in g.adjacency.iter().enumerate() {
                for &j in row {
                    writeln!(a, "{}, {}", offset + i + 1, offset + j + 1)?;
                }
            }
            offset += g.num_nodes();
        }
        for w in [&mut a, &mut ind, &mut gl, &mut nl] {
            w.flush()?;
        }
        Ok(())
    }
}

fn tu_file(dir: &Path, name: &str, suffix: &str) -> Result<(PathBuf, String)> {
    let path = dir.join(format!("{name}_{suffix}.txt"));
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path)?;
    Ok((path, text))
}

fn parse_ints(path: &Path, text: &str) -> Result<Vec<(usize, i64)>> {
    let fname = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, l)| {
            l.trim()
                .parse::<i64>()
                .map(|v| (no + 1, v))
                .map_err(|e| Error::format(&fname, no + 1, format!("expected integer: {e}")))
        })
        .collect()
}

fn dense_map(values: impl Iterator<Item = i64>) -> BTreeMap<i64, usize> {
    let distinct: BTreeSet<i64> = values.collect();
    distinct
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect()
}

/// Reads a TU-format dataset from `dir`. The dataset name is the directory's
/// final path component.
pub fn parse_tu_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::argument(format!("bad dataset path {}", dir.display())))?
        .to_string();

    let (ind_path, ind_text) = tu_file(dir, &name, "graph_indicator")?;
    let (gl_path, gl_text) = tu_file(dir, &name, "graph_labels")?;
    let (nl_path, nl_text) = tu_file(dir, &name, "node_labels")?;
    let (a_path, a_text) = tu_file(dir, &name, "A")?;

    let indicator = parse_ints(&ind_path, &ind_text)?;
    let graph_labels = parse_ints(&gl_path, &gl_text)?;
    let node_labels = parse_ints(&nl_path, &nl_text)?;

    let num_graphs = graph_labels.len();
    let num_nodes = indicator.len();
    if node_labels.len() < num_nodes {
        return Err(Error::format(
            nl_path.display().to_string(),
            node_labels.len() + 1,
            format!("node {} has no label line", node_labels.len() + 1),
        ));
    }

    // global node -> (graph, local index)
    let mut local = Vec::with_capacity(num_nodes);
    let mut counts = vec![0usize; num_graphs];
    for &(line, gid) in &indicator {
        if gid < 1 || gid as usize > num_graphs {
            return Err(Error::format(
                ind_path.display().to_string(),
                line,
                format!("graph id {gid} outside 1..={num_graphs}"),
            ));
        }
        let g = gid as usize - 1;
        local.push((g, counts[g]));
        counts[g] += 1;
    }

    let node_map = dense_map(node_labels.iter().map(|&(_, v)| v));
    let class_map = dense_map(graph_labels.iter().map(|&(_, v)| v));

    let mut labels: Vec<Vec<usize>> = counts.iter().map(|&c| Vec::with_capacity(c)).collect();
    for (m, &(g, _)) in local.iter().enumerate() {
        labels[g].push(node_map[&node_labels[m].1]);
    }

    let a_name = a_path.display().to_string();
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    let mut self_loops = 0usize;
    for (no, line) in a_text.lines().enumerate() {
        let line_no = no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(&a_name, line_no, "expected `i, j`"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::format(&a_name, line_no, format!("bad node id `{s}`: {e}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        for v in [a, b] {
            if v < 1 || v > num_nodes {
                return Err(Error::format(
                    &a_name,
                    line_no,
                    format!("node {v} outside 1..={num_nodes}"),
                ));
            }
        }
        let (ga, la) = local[a - 1];
        let (gb, lb) = local[b - 1];
        if ga != gb {
            return Err(Error::format(
                &a_name,
                line_no,
                format!(
                    "edge joins node {a} (graph {}) and node {b} (graph {})",
                    ga + 1,
                    gb + 1
                ),
            ));
        }
        if la == lb {
            self_loops += 1;
            continue;
        }
        edges[ga].push((la, lb));
    }
    if self_loops > 0 {
        log::warn!("{name}: dropped {self_loops} self-loop lines");
    }

    let graphs = labels
        .into_iter()
        .zip(edges)
        .zip(&graph_labels)
        .map(|((nl, e), &(_, gl))| Graph::new(nl, &e, class_map[&gl]))
        .collect::<Result<Vec<_>>>()?;

    let dataset = Dataset {
        name,
        graphs,
        k: node_map.len(),
        num_classes: class_map.len(),
        node_label_values: node_map.keys().copied().collect(),
        class_values: class_map.keys().copied().collect(),
    };
    if dataset.num_classes < 2 {
        log::warn!("{}: only {} graph class", dataset.name, dataset.num_classes);
    }
    Ok(dataset)
}

/// Assignment of every graph to one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub assignments: Vec<usize>,
    pub num_folds: usize,
    pub seed: u64,
}

impl FoldSplit {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Splits graphs into `num_folds` folds preserving class proportions.
///
/// Members of each class are shuffled, then all classes are laid end to end
/// and dealt round-robin, so fold sizes and per-class counts each differ by
/// at most one.
pub fn stratified_folds(labels: &[usize], num_folds: usize, seed: u64) -> Result<FoldSplit> {
    if num_folds < 2 {
        return Err(Error::argument(format!(
            "num_folds must be ≥ 2, got {num_folds}"
        )));
    }
    if num_folds > labels.len() {
        return Err(Error::argument(format!(
            "num_folds {num_folds} exceeds dataset size {}",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0; labels.len()];
    let mut pos = 0;
    for (class, members) in by_class.iter_mut() {
        if members.len() < num_folds {
            log::warn!(
                "class {class} has {} members for {num_folds} folds; stratification is best-effort",
                members.len()
            );
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignments[i] = pos % num_folds;
            pos += 1;
        }
    }
    Ok(FoldSplit {
        assignments,
        num_folds,
        seed,
    })
}
