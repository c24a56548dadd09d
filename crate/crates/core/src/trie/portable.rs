// SPDX-License-Identifier: Apache-2.0

//! Versioned JSON document form of a [`NeuronTrie`].
//!
//! Children are written ignore-first and then by token, so equal tries
//! always serialize to identical bytes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NeuronTrie, TrieNode};
use crate::error::{Error, Result};
use crate::model::{NeuronRef, PipelineConfig, Token};

pub const PORTABLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Token,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableNode {
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub act: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imp: Option<f64>,
    #[serde(default)]
    pub children: Vec<PortableNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortableTrie {
    pub version: u32,
    pub neuron: NeuronRef,
    pub a_max: f64,
    pub config: PipelineConfig,
    pub root: PortableNode,
}

impl NeuronTrie {
    pub fn to_portable(&self) -> PortableTrie {
        PortableTrie {
            version: PORTABLE_VERSION,
            neuron: self.neuron,
            a_max: self.a_max,
            config: self.config.clone(),
            root: PortableNode {
                kind: NodeKind::Root,
                token: None,
                act: None,
                imp: None,
                children: export_children(&self.root),
            },
        }
    }

    pub fn from_portable(doc: &PortableTrie) -> Result<Self> {
        if doc.version != PORTABLE_VERSION {
            return Err(Error::Format(format!(
                "unsupported trie document version {}",
                doc.version
            )));
        }
        if !(doc.a_max.is_finite() && doc.a_max > 0.0) {
            return Err(Error::Format(format!("a_max must be positive, got {}", doc.a_max)));
        }
        doc.config
            .validate()
            .map_err(|e| Error::Format(e.to_string()))?;
        let root = &doc.root;
        if root.kind != NodeKind::Root || root.token.is_some() || root.act.is_some() {
            return Err(Error::Format("document root must be a bare root node".into()));
        }
        if root.children.iter().any(|c| c.kind != NodeKind::Token) {
            return Err(Error::Format("depth-1 nodes must be token nodes".into()));
        }
        Ok(NeuronTrie {
            root: import_node(root)?,
            neuron: doc.neuron,
            config: doc.config.clone(),
            a_max: doc.a_max,
        })
    }

    /// Canonical pretty-printed JSON, newline-terminated.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_portable())
            .expect("trie documents always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PortableTrie =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        NeuronTrie::from_portable(&doc)
    }
}

fn export_children(node: &TrieNode) -> Vec<PortableNode> {
    let ignore = node.ignore.as_deref().map(|child| PortableNode {
        kind: NodeKind::Ignore,
        token: None,
        act: None,
        imp: Some(child.importance),
        children: export_children(child),
    });
    ignore
        .into_iter()
        .chain(node.children.iter().map(|(token, child)| PortableNode {
            kind: NodeKind::Token,
            token: Some(token.clone()),
            act: child.termination,
            imp: Some(child.importance),
            children: export_children(child),
        }))
        .collect()
}

fn import_node(doc: &PortableNode) -> Result<TrieNode> {
    let mut children = BTreeMap::new();
    let mut ignore = None;
    for child in &doc.children {
        let node = import_node(child)?;
        match (child.kind, &child.token) {
            (NodeKind::Token, Some(token)) => {
                if children.insert(token.clone(), node).is_some() {
                    return Err(Error::Format(format!("duplicate child token {token:?}")));
                }
            }
            (NodeKind::Ignore, None) => {
                if child.act.is_some() {
                    return Err(Error::Format("ignore nodes cannot terminate a path".into()));
                }
                if ignore.replace(Box::new(node)).is_some() {
                    return Err(Error::Format("duplicate ignore child".into()));
                }
            }
            (NodeKind::Root, _) => return Err(Error::Format("nested root node".into())),
            (NodeKind::Token, None) => return Err(Error::Format("token node without a token".into())),
            (NodeKind::Ignore, Some(_)) => {
                return Err(Error::Format("ignore node carries a token".into()))
            }
        }
    }
    if let Some(act) = doc.act {
        if !(0.0..=1.0).contains(&act) {
            return Err(Error::Format(format!("stored activation {act} outside [0, 1]")));
        }
    }
    let importance = doc.imp.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&importance) {
        return Err(Error::Format(format!("importance {importance} outside [0, 1]")));
    }
    Ok(TrieNode {
        children,
        ignore,
        termination: doc.act,
        importance,
    })
}
