//! Semantic label hierarchy: a three-tier DAG over face-authenticity labels
//! with a validity predicate on binary label configurations.
//!
//! A configuration `y` is valid iff every active node with parents has at
//! least one active parent, and every active node with children has at least
//! one active child. Valid configurations are enumerated exhaustively (the
//! graph is small by construction) and cached on the graph.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on graph size for exact enumeration (2^C configurations).
pub const ENUMERATION_BOUND: usize = 24;

/// Version of the graph JSON schema, reported by the CLI.
pub const GRAPH_FORMAT_VERSION: u32 = 1;

/// Tier of a node in the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Root,
    Global,
    Local,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Root => write!(f, "root"),
            Level::Global => write!(f, "global"),
            Level::Local => write!(f, "local"),
        }
    }
}

/// One label in the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub name: String,
    pub level: Level,
    /// Text prompt describing the label for the joint embedding.
    pub template: String,
}

/// A binary label configuration over all nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelConfig {
    bits: Vec<bool>,
}

impl LabelConfig {
    pub fn new(bits: Vec<bool>) -> Self {
        LabelConfig { bits }
    }

    pub fn zeros(len: usize) -> Self {
        LabelConfig {
            bits: vec![false; len],
        }
    }

    /// Decode from a bit pattern: bit `i` of `mask` is the label of node `i`.
    pub fn from_mask(mask: u32, len: usize) -> Self {
        LabelConfig {
            bits: (0..len).map(|i| mask >> i & 1 == 1).collect(),
        }
    }

    pub fn to_mask(&self) -> u32 {
        self.bits
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, &b)| if b { m | 1 << i } else { m })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.bits[i] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Indices of labels whose ground truth is known for an example.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservedSet {
    indices: Vec<usize>,
}

impl ObservedSet {
    /// Builds a set from arbitrary indices; deduplicates and sorts.
    /// Errors if any index is not a node of a graph with `size` nodes.
    pub fn new(indices: impl IntoIterator<Item = usize>, size: usize) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&i| i >= size) {
            return Err(Error::IndexOutOfRange { index: bad, size });
        }
        Ok(ObservedSet {
            indices: set.into_iter().collect(),
        })
    }

    pub fn all(size: usize) -> Self {
        ObservedSet {
            indices: (0..size).collect(),
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// The label hierarchy with per-node parent and child index sets.
#[derive(Debug)]
pub struct HierarchyGraph {
    nodes: Vec<Node>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    parent_masks: Vec<u32>,
    child_masks: Vec<u32>,
    valid_cache: OnceLock<Vec<u32>>,
}

impl PartialEq for HierarchyGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.parents == other.parents
    }
}

impl Clone for HierarchyGraph {
    fn clone(&self) -> Self {
        HierarchyGraph {
            nodes: self.nodes.clone(),
            parents: self.parents.clone(),
            children: self.children.clone(),
            parent_masks: self.parent_masks.clone(),
            child_masks: self.child_masks.clone(),
            valid_cache: OnceLock::new(),
        }
    }
}

impl HierarchyGraph {
    /// Builds a graph from nodes (listed in id order) and parent->child edges,
    /// validating every structural invariant.
    pub fn new(nodes: Vec<Node>, edges: &[(usize, usize)]) -> Result<Self> {
        let c = nodes.len();
        if c == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::InvalidGraph(format!(
                    "node ids must be dense and unique: position {i} holds id {}",
                    node.id
                )));
            }
        }
        let roots: Vec<usize> = nodes
            .iter()
            .filter(|n| n.level == Level::Root)
            .map(|n| n.id)
            .collect();
        if roots != [0] {
            return Err(Error::InvalidGraph(format!(
                "exactly one root with id 0 required, found roots at {roots:?}"
            )));
        }
        let mut names = BTreeSet::new();
        for node in &nodes {
            if !names.insert(node.name.as_str()) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate node name {:?}",
                    node.name
                )));
            }
        }

        let mut parents = vec![Vec::new(); c];
        let mut children = vec![Vec::new(); c];
        for &(p, ch) in edges {
            if p >= c || ch >= c {
                return Err(Error::InvalidGraph(format!(
                    "edge ({p}, {ch}) has a dangling endpoint; graph has {c} nodes"
                )));
            }
            let ok = matches!(
                (nodes[p].level, nodes[ch].level),
                (Level::Root, Level::Global) | (Level::Global, Level::Local)
            );
            if !ok {
                return Err(Error::InvalidGraph(format!(
                    "edge {} -> {} violates level ordering ({} -> {}); edges go root->global and global->local only",
                    nodes[p].name, nodes[ch].name, nodes[p].level, nodes[ch].level
                )));
            }
            if children[p].contains(&ch) {
                return Err(Error::InvalidGraph(format!(
                    "duplicate edge {} -> {}",
                    nodes[p].name, nodes[ch].name
                )));
            }
            children[p].push(ch);
            parents[ch].push(p);
        }
        for lists in [&mut parents, &mut children] {
            for l in lists.iter_mut() {
                l.sort_unstable();
            }
        }
        for node in &nodes {
            if node.level != Level::Root && parents[node.id].is_empty() {
                return Err(Error::InvalidGraph(format!(
                    "non-root node {} has no parent",
                    node.name
                )));
            }
        }

        let to_mask = |l: &Vec<usize>| l.iter().fold(0u32, |m, &i| m | 1 << i);
        let parent_masks = parents.iter().map(to_mask).collect();
        let child_masks = children.iter().map(to_mask).collect();
        Ok(HierarchyGraph {
            nodes,
            parents,
            children,
            parent_masks,
            child_masks,
            valid_cache: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn edge_count(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Validity of a configuration under the parent/child activation rules.
    pub fn is_valid(&self, y: &LabelConfig) -> Result<bool> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: y.len(),
            });
        }
        Ok(self.is_valid_mask(y.to_mask()))
    }

    /// Validity on the packed bit representation. Callers guarantee the mask
    /// only uses the low `len()` bits.
    pub fn is_valid_mask(&self, y: u32) -> bool {
        for i in 0..self.len() {
            if y >> i & 1 == 0 {
                continue;
            }
            if self.parent_masks[i] != 0 && y & self.parent_masks[i] == 0 {
                return false;
            }
            if self.child_masks[i] != 0 && y & self.child_masks[i] == 0 {
                return false;
            }
        }
        true
    }

    /// All valid configurations as bit patterns, ascending, cached.
    pub fn valid_masks(&self) -> Result<&[u32]> {
        if self.len() > ENUMERATION_BOUND {
            return Err(Error::CapacityExceeded {
                nodes: self.len(),
                bound: ENUMERATION_BOUND,
            });
        }
        Ok(self.valid_cache.get_or_init(|| {
            (0u32..1 << self.len())
                .filter(|&y| self.is_valid_mask(y))
                .collect()
        }))
    }

    /// All valid configurations, materialized in ascending bit-pattern order.
    pub fn enumerate_valid(&self) -> Result<Vec<LabelConfig>> {
        let c = self.len();
        Ok(self
            .valid_masks()?
            .iter()
            .map(|&m| LabelConfig::from_mask(m, c))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Canonical expanded-FF++ graph
// ---------------------------------------------------------------------------

/// Names of the three global face attributes, in id order.
pub const GLOBAL_ATTRIBUTES: [&str; 3] = ["identity", "expression", "physical_inconsistency"];

/// Names of the six local face regions, in id order.
pub const LOCAL_REGIONS: [&str; 6] = ["eye", "eyebrow", "lip", "mouth", "nose", "skin"];

fn template_for(name: &str, level: Level) -> String {
    let readable = name.replace('_', " ");
    match level {
        Level::Root => "a photo of a fake face.".to_string(),
        Level::Global => format!(
            "a photo of a face with the global attribute of {readable} altered."
        ),
        Level::Local => format!("a photo of a face with the local {readable} region altered."),
    }
}

/// Builds the 10-node expanded-FF++ hierarchy: `face` at the root, the three
/// global attributes, and the six local regions. Identity affects all regions,
/// expression targets lip and mouth, physical inconsistency covers eye, lip,
/// mouth, and nose.
pub fn build_expanded_ffpp_graph() -> HierarchyGraph {
    let mut nodes = vec![Node {
        id: 0,
        name: "face".into(),
        level: Level::Root,
        template: template_for("face", Level::Root),
    }];
    for name in GLOBAL_ATTRIBUTES {
        nodes.push(Node {
            id: nodes.len(),
            name: name.into(),
            level: Level::Global,
            template: template_for(name, Level::Global),
        });
    }
    for name in LOCAL_REGIONS {
        nodes.push(Node {
            id: nodes.len(),
            name: name.into(),
            level: Level::Local,
            template: template_for(name, Level::Local),
        });
    }

    let id = |name: &str| nodes.iter().position(|n| n.name == name).unwrap();
    let mut edges = Vec::new();
    for g in GLOBAL_ATTRIBUTES {
        edges.push((0, id(g)));
    }
    for l in LOCAL_REGIONS {
        edges.push((id("identity"), id(l)));
    }
    for l in ["lip", "mouth"] {
        edges.push((id("expression"), id(l)));
    }
    for l in ["eye", "lip", "mouth", "nose"] {
        edges.push((id("physical_inconsistency"), id(l)));
    }
    HierarchyGraph::new(nodes, &edges).expect("canonical graph is well formed")
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct EdgeFile {
    parent: usize,
    child: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<Node>,
    edges: Vec<EdgeFile>,
}

pub fn save_graph(graph: &HierarchyGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = GraphFile {
        nodes: graph.nodes().to_vec(),
        edges: (0..graph.len())
            .flat_map(|p| {
                graph
                    .children(p)
                    .iter()
                    .map(move |&c| EdgeFile { parent: p, child: c })
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file).expect("graph serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<HierarchyGraph> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: GraphFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e.parent, e.child)).collect();
    HierarchyGraph::new(file.nodes, &edges)
}
