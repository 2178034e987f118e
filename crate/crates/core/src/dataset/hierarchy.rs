//! Generalization taxonomies.
//!
//! A hierarchy is a rooted tree whose leaves are the attribute's domain
//! values. Categorical and item hierarchies use arbitrary labels; numeric
//! hierarchies use integer leaves and `[lo:hi]` ranges for internal nodes.
//! The on-disk form is one root path per leaf, `leaf|level1|...|root`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of a node inside its [`Hierarchy`].
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    label: String,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    depth: usize,
    leaf_count: usize,
    range: Option<(i64, i64)>,
    // preorder interval [pre, last] of the subtree
    pre: usize,
    last: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    name: String,
    numeric: bool,
    nodes: Vec<Node>,
    root: NodeId,
    leaves: Vec<NodeId>,
    by_label: HashMap<String, NodeId>,
}

fn parse_range(label: &str) -> Option<(i64, i64)> {
    let inner = label.strip_prefix('[')?.strip_suffix(']')?;
    let (lo, hi) = inner.split_once(':')?;
    let lo = lo.trim().parse().ok()?;
    let hi = hi.trim().parse().ok()?;
    (lo <= hi).then_some((lo, hi))
}

impl Hierarchy {
    /// Builds a hierarchy from root paths, each listed leaf first.
    ///
    /// Consecutive duplicate labels collapse, so `X|X` describes a single
    /// node that is both leaf and root.
    pub fn from_paths<S: AsRef<str>>(name: &str, paths: &[Vec<S>]) -> Result<Self> {
        let err = |message: String| Error::Hierarchy {
            hierarchy: name.to_string(),
            message,
        };
        if paths.is_empty() {
            return Err(err("no leaves".into()));
        }

        let mut labels: Vec<String> = Vec::new();
        let mut parent: Vec<Option<NodeId>> = Vec::new();
        let mut children: Vec<Vec<NodeId>> = Vec::new();
        let mut by_label: HashMap<String, NodeId> = HashMap::new();
        let mut leaf_ids = Vec::with_capacity(paths.len());
        let mut root: Option<NodeId> = None;

        for (lineno, raw) in paths.iter().enumerate() {
            let mut path: Vec<&str> = raw.iter().map(|s| s.as_ref().trim()).collect();
            path.dedup();
            if path.is_empty() || path.iter().any(|l| l.is_empty()) {
                return Err(err(format!("path {} has an empty label", lineno + 1)));
            }
            let unique: BTreeSet<&str> = path.iter().copied().collect();
            if unique.len() != path.len() {
                return Err(err(format!("cycle in path {}: {}", lineno + 1, path.join("|"))));
            }

            let mut ids = Vec::with_capacity(path.len());
            for label in &path {
                let id = *by_label.entry((*label).to_string()).or_insert_with(|| {
                    labels.push((*label).to_string());
                    parent.push(None);
                    children.push(Vec::new());
                    labels.len() - 1
                });
                ids.push(id);
            }

            let top = *ids.last().unwrap();
            match root {
                None => root = Some(top),
                Some(r) if r != top => {
                    return Err(err(format!(
                        "path {} ends at `{}` but the root is `{}`",
                        lineno + 1,
                        labels[top],
                        labels[r]
                    )))
                }
                _ => {}
            }
            if parent[top].is_some() {
                return Err(err(format!("root `{}` also appears below another node", labels[top])));
            }

            for w in ids.windows(2) {
                let (child, up) = (w[0], w[1]);
                match parent[child] {
                    None => {
                        if Some(child) == root {
                            return Err(err(format!("root `{}` used as a child", labels[child])));
                        }
                        parent[child] = Some(up);
                        children[up].push(child);
                    }
                    Some(p) if p == up => {}
                    Some(p) => {
                        return Err(err(format!(
                            "`{}` has two parents: `{}` and `{}`",
                            labels[child], labels[p], labels[up]
                        )))
                    }
                }
            }

            let leaf = ids[0];
            if leaf_ids.contains(&leaf) {
                return Err(err(format!("leaf `{}` listed twice", labels[leaf])));
            }
            leaf_ids.push(leaf);
        }

        let root = root.unwrap();
        let n = labels.len();
        for (id, ch) in children.iter().enumerate() {
            let is_leaf = leaf_ids.contains(&id);
            if is_leaf && !ch.is_empty() {
                return Err(err(format!("leaf `{}` also has children", labels[id])));
            }
        }

        // Walk from the root to assign depth and preorder intervals; a node
        // unreachable from the root means a cycle through parent links.
        let mut nodes: Vec<Node> = (0..n)
            .map(|i| Node {
                label: labels[i].clone(),
                parent: parent[i],
                children: children[i].clone(),
                depth: 0,
                leaf_count: 0,
                range: None,
                pre: usize::MAX,
                last: 0,
            })
            .collect();
        let mut counter = 0;
        let mut stack = vec![(root, 0usize, false)];
        while let Some((id, depth, done)) = stack.pop() {
            if done {
                let node = &nodes[id];
                let (count, last) = if node.children.is_empty() {
                    (1, node.pre)
                } else {
                    let count = node.children.iter().map(|&c| nodes[c].leaf_count).sum();
                    let last = node.children.iter().map(|&c| nodes[c].last).max().unwrap();
                    (count, last)
                };
                nodes[id].leaf_count = count;
                nodes[id].last = last;
                continue;
            }
            if nodes[id].pre != usize::MAX {
                return Err(err(format!("cycle through `{}`", labels[id])));
            }
            nodes[id].pre = counter;
            nodes[id].depth = depth;
            counter += 1;
            stack.push((id, depth, true));
            for &c in nodes[id].children.iter().rev() {
                stack.push((c, depth + 1, false));
            }
        }
        if counter != n {
            return Err(err("some nodes are not connected to the root".into()));
        }

        let numeric = n > 1
            && leaf_ids.iter().all(|&l| labels[l].parse::<i64>().is_ok())
            && (0..n).filter(|i| !leaf_ids.contains(i)).all(|i| parse_range(&labels[i]).is_some());

        let mut h = Hierarchy {
            name: name.to_string(),
            numeric,
            nodes,
            root,
            leaves: leaf_ids,
            by_label,
        };
        if numeric {
            h.validate_ranges()?;
        }
        Ok(h)
    }

    fn validate_ranges(&mut self) -> Result<()> {
        for id in 0..self.nodes.len() {
            let range = if self.nodes[id].children.is_empty() {
                let v: i64 = self.nodes[id].label.parse().unwrap();
                (v, v)
            } else {
                parse_range(&self.nodes[id].label).unwrap()
            };
            self.nodes[id].range = Some(range);
        }
        let err = |message: String| Error::Hierarchy {
            hierarchy: self.name.clone(),
            message,
        };
        for node in &self.nodes {
            let (lo, hi) = node.range.unwrap();
            let mut spans: Vec<(i64, i64)> = node
                .children
                .iter()
                .map(|&c| self.nodes[c].range.unwrap())
                .collect();
            spans.sort_unstable();
            for s in &spans {
                if s.0 < lo || s.1 > hi {
                    return Err(err(format!("child range [{}:{}] escapes {}", s.0, s.1, node.label)));
                }
            }
            for w in spans.windows(2) {
                if w[0].1 >= w[1].0 {
                    return Err(err(format!("overlapping sibling ranges under {}", node.label)));
                }
            }
        }
        let mut values: Vec<i64> = self.leaves.iter().map(|&l| self.nodes[l].range.unwrap().0).collect();
        values.sort_unstable();
        values.dedup();
        if values.len() != self.leaves.len() {
            return Err(err("duplicate numeric leaf value".into()));
        }
        Ok(())
    }

    /// Parses the `leaf|...|root` text form.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let paths: Vec<Vec<&str>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split('|').collect())
            .collect();
        Self::from_paths(name, &paths)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(&name, &text)
    }

    /// Renders the hierarchy in the same line format [`Hierarchy::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &leaf in &self.leaves {
            let path: Vec<&str> = self.path_to_root(leaf).map(|n| self.label(n)).collect();
            if path.len() == 1 {
                let _ = writeln!(out, "{}|{}", path[0], path[0]);
            } else {
                let _ = writeln!(out, "{}", path.join("|"));
            }
        }
        out
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_numeric(&self) -> bool {
        self.numeric
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Leaves in file order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Domain size |R|.
    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id].label
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id].children
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.nodes[id].depth
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_empty()
    }

    /// Number of leaves in the subtree rooted at `id`.
    pub fn leaf_count(&self, id: NodeId) -> usize {
        self.nodes[id].leaf_count
    }

    /// Inclusive value range of a numeric node.
    pub fn range(&self, id: NodeId) -> Option<(i64, i64)> {
        self.nodes[id].range
    }

    pub fn lookup(&self, label: &str) -> Option<NodeId> {
        if let Some(&id) = self.by_label.get(label) {
            return Some(id);
        }
        if self.numeric {
            // tolerate "024" or "[21 : 40]" spellings
            if let Ok(v) = label.trim().parse::<i64>() {
                return self.by_label.get(&v.to_string()).copied();
            }
            if let Some((lo, hi)) = parse_range(label.trim()) {
                return self.by_label.get(&format!("[{lo}:{hi}]")).copied();
            }
        }
        None
    }

    /// Whether `node` lies in the subtree of `ancestor` (inclusive).
    pub fn covers(&self, ancestor: NodeId, node: NodeId) -> bool {
        let a = &self.nodes[ancestor];
        let p = self.nodes[node].pre;
        a.pre <= p && p <= a.last
    }

    pub fn path_to_root(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(Some(id), move |&n| self.nodes[n].parent)
    }

    /// Lowest common ancestor of two nodes.
    pub fn lca(&self, mut a: NodeId, mut b: NodeId) -> NodeId {
        while self.nodes[a].depth > self.nodes[b].depth {
            a = self.nodes[a].parent.unwrap();
        }
        while self.nodes[b].depth > self.nodes[a].depth {
            b = self.nodes[b].parent.unwrap();
        }
        while a != b {
            a = self.nodes[a].parent.unwrap();
            b = self.nodes[b].parent.unwrap();
        }
        a
    }

    /// Leaves of the subtree rooted at `id`, in preorder.
    pub fn leaves_under(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes[id].leaf_count);
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.children.is_empty() {
                out.push(n);
            } else {
                stack.extend(node.children.iter().rev());
            }
        }
        out
    }

    /// Deepest node whose leaf set is exactly `leaves`.
    pub fn node_for_leaf_set(&self, leaves: &BTreeSet<NodeId>) -> Option<NodeId> {
        let mut it = leaves.iter();
        let first = *it.next()?;
        let lca = it.fold(first, |acc, &l| self.lca(acc, l));
        (self.nodes[lca].leaf_count == leaves.len()).then_some(lca)
    }

    /// Label used in data files: plain label for leaves and relational
    /// nodes, `(a,b,c)` leaf listing for generalized items.
    pub fn item_token(&self, id: NodeId) -> String {
        if self.is_leaf(id) {
            self.label(id).to_string()
        } else {
            let mut leaves = self.leaves_under(id);
            leaves.sort_by_key(|&l| self.leaf_position(l));
            let labels: Vec<&str> = leaves.iter().map(|&l| self.label(l)).collect();
            format!("({})", labels.join(","))
        }
    }

    /// Resolves an item token written by [`Hierarchy::item_token`].
    pub fn parse_item_token(&self, token: &str) -> Option<NodeId> {
        let token = token.trim();
        match token.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
            Some(inner) => {
                let mut set = BTreeSet::new();
                for part in inner.split(',') {
                    let id = self.lookup(part.trim())?;
                    if !self.is_leaf(id) {
                        return None;
                    }
                    set.insert(id);
                }
                self.node_for_leaf_set(&set)
            }
            None => self.lookup(token),
        }
    }

    fn leaf_position(&self, leaf: NodeId) -> usize {
        self.leaves.iter().position(|&l| l == leaf).unwrap_or(usize::MAX)
    }
}

/// Lowest common ancestor of a non-empty set of nodes. For numeric
/// hierarchies this is the smallest declared range containing every input.
pub fn lca_generalize(h: &Hierarchy, values: &[NodeId]) -> Result<NodeId> {
    let (&first, rest) = values
        .split_first()
        .ok_or_else(|| Error::contract("lca of an empty value set"))?;
    Ok(rest.iter().fold(first, |acc, &v| h.lca(acc, v)))
}
