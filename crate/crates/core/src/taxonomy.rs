//! Rooted class hierarchy with corpus frequencies.
//!
//! Each node's probability is its own frequency plus the frequency of every
//! descendant, normalised by the total mass of the tree. Information content
//! is `-ln p`, and the Lin similarity of two classes is
//! `2 IC(lcs) / (IC(a) + IC(b))`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense, 0-based index of a class node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub usize);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassNode {
    pub id: usize,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<usize>,
    pub frequency: f64,
}

#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<ClassNode>,
    children: Vec<Vec<ClassId>>,
    probability: Vec<f64>,
    info_content: Vec<f64>,
    depth: Vec<usize>,
    root: ClassId,
    by_name: HashMap<String, ClassId>,
}

impl Taxonomy {
    /// Validates the node records and fills the probability and IC caches.
    pub fn from_nodes(mut records: Vec<ClassNode>) -> Result<Self> {
        let n = records.len();
        if n == 0 {
            return Err(Error::MalformedTaxonomy("no nodes".into()));
        }
        records.sort_by_key(|r| r.id);
        for (expected, r) in records.iter().enumerate() {
            if r.id != expected {
                return Err(Error::MalformedTaxonomy(format!(
                    "node ids must be unique and dense from 0; found id {} at position {expected}",
                    r.id
                )));
            }
            if !r.frequency.is_finite() || r.frequency < 0.0 {
                return Err(Error::MalformedTaxonomy(format!(
                    "node `{}` has invalid frequency {}",
                    r.name, r.frequency
                )));
            }
            if let Some(p) = r.parent_id {
                if p >= n {
                    return Err(Error::MalformedTaxonomy(format!(
                        "node `{}` references missing parent {p}",
                        r.name
                    )));
                }
                if p == r.id {
                    return Err(Error::MalformedTaxonomy(format!(
                        "node `{}` is its own parent",
                        r.name
                    )));
                }
            }
        }

        let roots: Vec<usize> = records
            .iter()
            .filter(|r| r.parent_id.is_none())
            .map(|r| r.id)
            .collect();
        let root = match roots.as_slice() {
            [r] => ClassId(*r),
            [] => return Err(Error::MalformedTaxonomy("no root node".into())),
            _ => {
                return Err(Error::MalformedTaxonomy(format!(
                    "multiple roots: {roots:?}"
                )))
            }
        };

        let mut by_name = HashMap::with_capacity(n);
        for r in &records {
            if by_name.insert(r.name.clone(), ClassId(r.id)).is_some() {
                return Err(Error::MalformedTaxonomy(format!(
                    "duplicate class name `{}`",
                    r.name
                )));
            }
        }

        // Depth by walking up with memoisation; a walk longer than n means a cycle.
        let mut depth: Vec<Option<usize>> = vec![None; n];
        depth[root.0] = Some(0);
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            while depth[cur].is_none() {
                path.push(cur);
                if path.len() > n {
                    return Err(Error::MalformedTaxonomy(format!(
                        "cycle through node `{}`",
                        records[start].name
                    )));
                }
                cur = records[cur]
                    .parent_id
                    .expect("only the root lacks a parent");
            }
            let mut d = depth[cur].unwrap();
            for &node in path.iter().rev() {
                d += 1;
                depth[node] = Some(d);
            }
        }
        let depth: Vec<usize> = depth.into_iter().map(|d| d.unwrap()).collect();

        let mut children = vec![Vec::new(); n];
        for r in &records {
            if let Some(p) = r.parent_id {
                children[p].push(ClassId(r.id));
            }
        }

        // Accumulate subtree mass deepest-first.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| depth[*b].cmp(&depth[*a]).then(a.cmp(b)));
        let mut mass: Vec<f64> = records.iter().map(|r| r.frequency).collect();
        for &node in &order {
            if let Some(p) = records[node].parent_id {
                mass[p] += mass[node];
            }
        }
        let total = mass[root.0];
        if total <= 0.0 {
            return Err(Error::MalformedTaxonomy(
                "total frequency mass is zero".into(),
            ));
        }
        if let Some(empty) = (0..n).find(|&i| mass[i] <= 0.0) {
            return Err(Error::MalformedTaxonomy(format!(
                "node `{}` has no frequency mass in its subtree",
                records[empty].name
            )));
        }
        let probability: Vec<f64> = mass
            .iter()
            .enumerate()
            .map(|(i, m)| {
                if i == root.0 {
                    1.0
                } else {
                    (m / total).min(1.0)
                }
            })
            .collect();
        let info_content = probability.iter().map(|p| (-p.ln()).max(0.0)).collect();

        Ok(Self {
            nodes: records,
            children,
            probability,
            info_content,
            depth,
            root,
            by_name,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> ClassId {
        self.root
    }

    pub fn nodes(&self) -> &[ClassNode] {
        &self.nodes
    }

    pub fn check(&self, id: ClassId) -> Result<ClassId> {
        if id.0 < self.nodes.len() {
            Ok(id)
        } else {
            Err(Error::UnknownClass(id.to_string()))
        }
    }

    pub fn id_of(&self, name: &str) -> Result<ClassId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }

    pub fn name(&self, id: ClassId) -> Result<&str> {
        Ok(&self.nodes[self.check(id)?.0].name)
    }

    pub fn parent(&self, id: ClassId) -> Result<Option<ClassId>> {
        Ok(self.nodes[self.check(id)?.0].parent_id.map(ClassId))
    }

    pub fn children(&self, id: ClassId) -> Result<&[ClassId]> {
        Ok(&self.children[self.check(id)?.0])
    }

    pub fn depth(&self, id: ClassId) -> Result<usize> {
        Ok(self.depth[self.check(id)?.0])
    }

    pub fn probability(&self, id: ClassId) -> Result<f64> {
        Ok(self.probability[self.check(id)?.0])
    }

    pub fn information_content(&self, id: ClassId) -> Result<f64> {
        Ok(self.info_content[self.check(id)?.0])
    }

    pub fn is_leaf(&self, id: ClassId) -> Result<bool> {
        Ok(self.children(id)?.is_empty())
    }

    pub fn leaves(&self) -> Vec<ClassId> {
        (0..self.len())
            .map(ClassId)
            .filter(|&c| self.children[c.0].is_empty())
            .collect()
    }

    /// Other children of `id`'s parent, in id order.
    pub fn siblings(&self, id: ClassId) -> Result<Vec<ClassId>> {
        Ok(match self.parent(id)? {
            Some(p) => self.children[p.0]
                .iter()
                .copied()
                .filter(|&c| c != id)
                .collect(),
            None => Vec::new(),
        })
    }

    /// Whether `anc` lies on the path from `desc` to the root, `desc` included.
    pub fn is_ancestor(&self, anc: ClassId, desc: ClassId) -> Result<bool> {
        self.check(anc)?;
        let mut cur = self.check(desc)?;
        loop {
            if cur == anc {
                return Ok(true);
            }
            match self.nodes[cur.0].parent_id {
                Some(p) => cur = ClassId(p),
                None => return Ok(false),
            }
        }
    }

    /// Deepest node that is an ancestor-or-self of both classes.
    pub fn lowest_common_subsumer(&self, a: ClassId, b: ClassId) -> Result<ClassId> {
        let (mut a, mut b) = (self.check(a)?, self.check(b)?);
        while self.depth[a.0] > self.depth[b.0] {
            a = ClassId(self.nodes[a.0].parent_id.unwrap());
        }
        while self.depth[b.0] > self.depth[a.0] {
            b = ClassId(self.nodes[b.0].parent_id.unwrap());
        }
        while a != b {
            a = ClassId(self.nodes[a.0].parent_id.unwrap());
            b = ClassId(self.nodes[b.0].parent_id.unwrap());
        }
        Ok(a)
    }

    /// Lin similarity in `[0, 1]`.
    pub fn lin_similarity(&self, a: ClassId, b: ClassId) -> Result<f64> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        if a == b {
            return Ok(1.0);
        }
        // Canonical operand order keeps the result bit-symmetric.
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let denom = self.info_content[a.0] + self.info_content[b.0];
        if denom <= 0.0 {
            return Ok(0.0);
        }
        let lcs = self.lowest_common_subsumer(a, b)?;
        Ok((2.0 * self.info_content[lcs.0] / denom).clamp(0.0, 1.0))
    }
}

/// On-disk taxonomy document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDocument {
    #[serde(default = "format_version_one")]
    pub format_version: u32,
    pub nodes: Vec<ClassNode>,
}

fn format_version_one() -> u32 {
    1
}

impl TaxonomyDocument {
    pub fn from_taxonomy(t: &Taxonomy) -> Self {
        Self {
            format_version: 1,
            nodes: t.nodes.clone(),
        }
    }
}

/// Parses a taxonomy document (JSON) and builds the taxonomy.
pub fn load_taxonomy(source: &str) -> Result<Taxonomy> {
    let doc: TaxonomyDocument =
        serde_json::from_str(source).map_err(|e| Error::MalformedTaxonomy(e.to_string()))?;
    if doc.format_version != 1 {
        return Err(Error::MalformedTaxonomy(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    Taxonomy::from_nodes(doc.nodes)
}

pub fn lowest_common_subsumer(t: &Taxonomy, a: ClassId, b: ClassId) -> Result<ClassId> {
    t.lowest_common_subsumer(a, b)
}

pub fn lin_similarity(t: &Taxonomy, a: ClassId, b: ClassId) -> Result<f64> {
    t.lin_similarity(a, b)
}

pub fn is_ancestor(t: &Taxonomy, anc: ClassId, desc: ClassId) -> Result<bool> {
    t.is_ancestor(anc, desc)
}
