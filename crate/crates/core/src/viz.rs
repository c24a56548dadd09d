// SPDX-License-Identifier: Apache-2.0

//! Condensed, layered view of a trie for humans, plus DOT output and two
//! structural analyses (disconnected behaviours and bottleneck tokens).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::model::Token;
use crate::trie::{NeuronTrie, TrieNode};

#[derive(Debug, Clone, PartialEq)]
pub struct VizNode {
    pub token: Token,
    /// Trie depth; 1 is the activating layer.
    pub depth: usize,
    pub is_activating: bool,
    /// Strongest path activation below an activating node.
    pub activation: Option<f64>,
    pub importance: f64,
    /// Some merged trie node ends a complete context.
    pub bold: bool,
}

/// Edge from a context node to the node it precedes. `gap` counts the
/// ignore positions skipped between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VizEdge {
    pub from: usize,
    pub to: usize,
    pub gap: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CondensedGraph {
    /// Sorted by depth, then token.
    nodes: Vec<VizNode>,
    /// `layers[d - 1]` holds the indices of nodes at depth `d`.
    layers: Vec<Vec<usize>>,
    edges: BTreeSet<VizEdge>,
}

impl CondensedGraph {
    pub fn nodes(&self) -> &[VizNode] {
        &self.nodes
    }

    pub fn layers(&self) -> &[Vec<usize>] {
        &self.layers
    }

    pub fn edges(&self) -> &BTreeSet<VizEdge> {
        &self.edges
    }

    pub fn node(&self, idx: usize) -> &VizNode {
        &self.nodes[idx]
    }

    pub fn find(&self, token: &str, depth: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.depth == depth && n.token.as_str() == token)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.from].push(e.to);
            adj[e.to].push(e.from);
        }
        adj
    }
}

#[derive(Default)]
struct Acc {
    activation: Option<f64>,
    importance: f64,
    bold: bool,
}

type NodeId = (usize, Token);

/// Drops ignore nodes, merges trie nodes with the same token at the same
/// depth, and keeps the skipped distance on the bridging edges.
pub fn condense(trie: &NeuronTrie) -> CondensedGraph {
    let mut accs: BTreeMap<NodeId, Acc> = BTreeMap::new();
    let mut raw_edges: BTreeSet<(NodeId, NodeId, usize)> = BTreeSet::new();

    for (token, node) in trie.root().token_children() {
        let id = (1, token.clone());
        let acc = accs.entry(id.clone()).or_default();
        let best = max_termination(node);
        acc.activation = match (acc.activation, best) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        acc.importance = acc.importance.max(node.importance());
        acc.bold |= node.termination().is_some();
        collect(node, &id, 1, 0, &mut accs, &mut raw_edges);
    }

    let nodes: Vec<VizNode> = accs
        .into_iter()
        .map(|((depth, token), acc)| VizNode {
            token,
            depth,
            is_activating: depth == 1,
            activation: if depth == 1 { Some(acc.activation.unwrap_or(0.0)) } else { None },
            importance: acc.importance,
            bold: acc.bold,
        })
        .collect();
    let index: BTreeMap<(usize, &Token), usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| ((n.depth, &n.token), i))
        .collect();
    let max_depth = nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    let mut layers = vec![Vec::new(); max_depth];
    for (i, n) in nodes.iter().enumerate() {
        layers[n.depth - 1].push(i);
    }
    let edges = raw_edges
        .iter()
        .map(|((fd, ft), (td, tt), gap)| VizEdge {
            from: index[&(*fd, ft)],
            to: index[&(*td, tt)],
            gap: *gap,
        })
        .collect();
    CondensedGraph {
        nodes,
        layers,
        edges,
    }
}

fn max_termination(node: &TrieNode) -> Option<f64> {
    node.children()
        .filter_map(|(_, c)| max_termination(c))
        .chain(node.termination())
        .reduce(f64::max)
}

fn collect(
    node: &TrieNode,
    anchor: &NodeId,
    depth: usize,
    gap: usize,
    accs: &mut BTreeMap<NodeId, Acc>,
    edges: &mut BTreeSet<(NodeId, NodeId, usize)>,
) {
    if let Some(ignored) = node.ignore_child() {
        collect(ignored, anchor, depth + 1, gap + 1, accs, edges);
    }
    for (token, child) in node.token_children() {
        let id = (depth + 1, token.clone());
        let acc = accs.entry(id.clone()).or_default();
        acc.importance = acc.importance.max(child.importance());
        acc.bold |= child.termination().is_some();
        edges.insert((id.clone(), anchor.clone(), gap));
        collect(child, &id, depth + 1, 0, accs, edges);
    }
}

/// Linear white-to-colour ramp; `channel` picks red (0) or blue (2).
fn ramp(value: f64, channel: usize) -> String {
    let v = value.clamp(0.0, 1.0);
    let fade = (255.0 * (1.0 - v)).round() as u8;
    let mut rgb = [fade; 3];
    rgb[channel] = 255;
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn escape(label: &str) -> String {
    let mut out = String::with_capacity(label.len());
    for c in label.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

/// Renders the graph as a Graphviz digraph. Edges point from context
/// towards the activating tokens.
pub fn emit_dot(graph: &CondensedGraph) -> String {
    let mut out = String::from("digraph {\n");
    if graph.is_empty() {
        out.push_str("}\n");
        return out;
    }
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=box, style=\"rounded,filled\", fontname=\"Helvetica\"];\n");
    for (d, layer) in graph.layers.iter().enumerate().rev() {
        if layer.is_empty() {
            continue;
        }
        let _ = writeln!(out, "  subgraph depth_{} {{", d + 1);
        out.push_str("    rank=same;\n");
        for &i in layer {
            let n = &graph.nodes[i];
            let fill = if n.is_activating {
                ramp(n.activation.unwrap_or(0.0), 0)
            } else {
                ramp(n.importance, 2)
            };
            let _ = write!(out, "    n{i} [label=\"{}\", fillcolor=\"{fill}\"", escape(n.token.as_str()));
            if n.bold {
                out.push_str(", penwidth=2");
            }
            out.push_str("];\n");
        }
        out.push_str("  }\n");
    }
    for e in &graph.edges {
        if e.gap == 0 {
            let _ = writeln!(out, "  n{} -> n{};", e.from, e.to);
        } else {
            let _ = writeln!(
                out,
                "  n{} -> n{} [style=dashed, label=\"skip {}\"];",
                e.from, e.to, e.gap
            );
        }
    }
    out.push_str("}\n");
    out
}

/// Connected components of the undirected graph, largest first. More than
/// one component suggests the neuron has several unrelated behaviours.
pub fn subgraph_components(graph: &CondensedGraph) -> Vec<Vec<usize>> {
    let adj = graph.neighbours();
    let mut seen = vec![false; graph.nodes.len()];
    let mut comps = Vec::new();
    for start in 0..graph.nodes.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    comps
}

/// Context nodes whose removal cuts every activating node of their
/// component off from all of the remaining context: tokens that must be
/// present for any firing in that behaviour.
pub fn bottleneck_tokens(graph: &CondensedGraph) -> Vec<&VizNode> {
    let adj = graph.neighbours();
    let mut found = Vec::new();
    for comp in subgraph_components(graph) {
        let context: Vec<usize> = comp
            .iter()
            .copied()
            .filter(|&i| !graph.nodes[i].is_activating)
            .collect();
        let activating: Vec<usize> = comp
            .iter()
            .copied()
            .filter(|&i| graph.nodes[i].is_activating)
            .collect();
        for &cut in &context {
            if context.len() < 2 {
                break;
            }
            let mut seen = vec![false; graph.nodes.len()];
            seen[cut] = true;
            let mut queue: VecDeque<usize> = activating.iter().copied().collect();
            for &a in &activating {
                seen[a] = true;
            }
            let mut reached_context = false;
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        if !graph.nodes[v].is_activating {
                            reached_context = true;
                        }
                        queue.push_back(v);
                    }
                }
            }
            if !reached_context {
                found.push(cut);
            }
        }
    }
    found.sort_unstable();
    found.into_iter().map(|i| &graph.nodes[i]).collect()
}
