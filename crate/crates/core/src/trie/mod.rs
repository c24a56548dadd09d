// SPDX-License-Identifier: Apache-2.0

//! The neuron trie.
//!
//! Depth-1 nodes are activating tokens. Below each of them, every further
//! level steps one token further back into the preceding context: an exact
//! token where that position mattered for the activation, or an ignore node
//! that accepts any token where it did not. A node carrying a termination
//! marks a complete context and stores the normalized activation to report
//! when a backward match ends there.

use std::collections::BTreeMap;

use crate::augment::ProcessedExample;
use crate::error::{Error, Result};
use crate::model::{NeuronRef, NormalizationContext, PipelineConfig, Token};

mod portable;

pub use portable::{NodeKind, PortableNode, PortableTrie, PORTABLE_VERSION};

/// Edge label from a parent to one of its children.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKey {
    Ignore,
    Token(Token),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrieNode {
    children: BTreeMap<Token, TrieNode>,
    ignore: Option<Box<TrieNode>>,
    termination: Option<f64>,
    /// Largest importance observed for this context position.
    importance: f64,
}

impl TrieNode {
    pub fn termination(&self) -> Option<f64> {
        self.termination
    }

    pub fn importance(&self) -> f64 {
        self.importance
    }

    pub fn token_children(&self) -> impl Iterator<Item = (&Token, &TrieNode)> {
        self.children.iter()
    }

    pub fn ignore_child(&self) -> Option<&TrieNode> {
        self.ignore.as_deref()
    }

    /// Children in canonical order: the ignore child first, then tokens
    /// lexicographically.
    pub fn children(&self) -> impl Iterator<Item = (NodeKey, &TrieNode)> {
        self.ignore
            .as_deref()
            .map(|n| (NodeKey::Ignore, n))
            .into_iter()
            .chain(self.children.iter().map(|(t, n)| (NodeKey::Token(t.clone()), n)))
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty() && self.ignore.is_none()
    }

    fn token_child(&mut self, token: &Token) -> &mut TrieNode {
        // Avoids cloning the token when the child already exists.
        if !self.children.contains_key(token) {
            self.children.insert(token.clone(), TrieNode::default());
        }
        self.children.get_mut(token).expect("child just inserted")
    }

    fn ignore_child_mut(&mut self) -> &mut TrieNode {
        self.ignore.get_or_insert_with(Default::default)
    }

    fn terminate(&mut self, activation: f64) {
        self.termination = Some(self.termination.map_or(activation, |old| old.max(activation)));
    }

    fn count(&self) -> usize {
        1 + self.children.values().map(TrieNode::count).sum::<usize>()
            + self.ignore.as_ref().map_or(0, |n| n.count())
    }
}

/// A root-to-termination path, listed from the activating token backwards.
#[derive(Debug, Clone, PartialEq)]
pub struct TriePath {
    pub keys: Vec<NodeKey>,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronTrie {
    root: TrieNode,
    neuron: NeuronRef,
    config: PipelineConfig,
    a_max: f64,
}

impl NeuronTrie {
    pub fn new(neuron: NeuronRef, ctx: &NormalizationContext, cfg: &PipelineConfig) -> Self {
        NeuronTrie {
            root: TrieNode::default(),
            neuron,
            config: cfg.clone(),
            a_max: ctx.a_max(),
        }
    }

    pub fn build(
        examples: &[ProcessedExample],
        neuron: NeuronRef,
        ctx: &NormalizationContext,
        cfg: &PipelineConfig,
    ) -> Result<Self> {
        let mut trie = NeuronTrie::new(neuron, ctx, cfg);
        for ex in examples {
            trie.add_example(ex)?;
        }
        Ok(trie)
    }

    pub fn neuron(&self) -> NeuronRef {
        self.neuron
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn root(&self) -> &TrieNode {
        &self.root
    }

    /// Nodes below the root.
    pub fn node_count(&self) -> usize {
        self.root.count() - 1
    }

    pub fn activating_tokens(&self) -> impl Iterator<Item = &Token> {
        self.root.children.keys()
    }

    /// Adds one path per activating token of `ex`.
    ///
    /// Walking back from the activating token, important positions become
    /// token nodes and the rest ignore nodes, stopping at the earliest
    /// important position, which is marked as the termination.
    pub fn add_example(&mut self, ex: &ProcessedExample) -> Result<()> {
        ex.validate()?;
        let act_threshold = self.config.activation_threshold;
        let imp_threshold = self.config.importance_threshold;
        for (i, &activation) in ex.normalized.iter().enumerate() {
            if activation < act_threshold {
                continue;
            }
            let earliest = (0..i).find(|&p| ex.importance.get(p, i) >= imp_threshold);
            let mut node = self.root.token_child(&ex.tokens[i]);
            node.importance = node.importance.max(ex.importance.get(i, i));
            if let Some(earliest) = earliest {
                for p in (earliest..i).rev() {
                    let imp = ex.importance.get(p, i);
                    node = if imp >= imp_threshold {
                        node.token_child(&ex.tokens[p])
                    } else {
                        node.ignore_child_mut()
                    };
                    node.importance = node.importance.max(imp);
                }
            }
            node.terminate(activation);
        }
        Ok(())
    }

    /// Normalized activation predicted for `tokens[i]`: the stored value of
    /// the longest path that matches backwards from `i`, preferring the
    /// larger value between equally long paths. 0 when nothing matches.
    pub fn match_at(&self, tokens: &[Token], i: usize) -> Result<f64> {
        if i >= tokens.len() {
            return Err(Error::Usage(format!(
                "index {i} out of range for {} tokens",
                tokens.len()
            )));
        }
        Ok(self.match_unchecked(tokens, i))
    }

    fn match_unchecked(&self, tokens: &[Token], i: usize) -> f64 {
        let Some(first) = self.root.children.get(&tokens[i]) else {
            return 0.0;
        };
        let mut best: Option<(usize, f64)> = None;
        descend(first, &tokens[..i], 1, &mut best);
        best.map_or(0.0, |(_, a)| a)
    }

    pub fn predict(&self, tokens: &[Token]) -> Vec<f64> {
        (0..tokens.len()).map(|i| self.match_unchecked(tokens, i)).collect()
    }

    /// Enumerates every root-to-termination path in canonical order.
    pub fn paths(&self) -> Vec<TriePath> {
        fn walk(node: &TrieNode, prefix: &mut Vec<NodeKey>, out: &mut Vec<TriePath>) {
            if let Some(activation) = node.termination {
                out.push(TriePath {
                    keys: prefix.clone(),
                    activation,
                });
            }
            for (key, child) in node.children() {
                prefix.push(key);
                walk(child, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        for (key, child) in self.root.children() {
            let mut prefix = vec![key];
            walk(child, &mut prefix, &mut out);
        }
        out
    }
}

/// `before` is the text preceding the position already matched by `node`.
fn descend(node: &TrieNode, before: &[Token], depth: usize, best: &mut Option<(usize, f64)>) {
    if let Some(a) = node.termination {
        let better = match *best {
            None => true,
            Some((d, b)) => depth > d || (depth == d && a > b),
        };
        if better {
            *best = Some((depth, a));
        }
    }
    let Some((prev, rest)) = before.split_last() else {
        return;
    };
    if let Some(child) = node.children.get(prev) {
        descend(child, rest, depth + 1, best);
    }
    if let Some(child) = node.ignore.as_deref() {
        descend(child, rest, depth + 1, best);
    }
}
