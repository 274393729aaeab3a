//! Aggregation trees, structure matrices and one-level sub-hierarchies.
//!
//! Nodes are stored in canonical order: breadth-first from the root, one
//! level after another, siblings in declaration order. Every index handed
//! out by [`Hierarchy`] refers to that order, so row `i` of the structure
//! matrix, column `i` of a residual panel and row `i` of a forecast panel all
//! describe the same series.

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("hierarchy has no nodes")]
    Empty,
    #[error("duplicate node label `{0}`")]
    DuplicateLabel(String),
    #[error("node `{child}` references unknown parent `{parent}`")]
    UnknownParent { child: String, parent: String },
    #[error("hierarchy has no root")]
    NoRoot,
    #[error("hierarchy has multiple roots: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("nodes not reachable from the root (cycle or orphan): {0:?}")]
    Unreachable(Vec<String>),
    #[error("unknown node label `{0}`")]
    UnknownLabel(String),
    #[error("cannot remove the root node `{0}`")]
    RemoveRoot(String),
    #[error("width must be at least 2, got {0}")]
    InvalidWidth(u64),
    #[error("node count overflows u64 for width {width} and depth {depth}")]
    CountOverflow { width: u64, depth: u32 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Nested JSON form of a hierarchy: `{"label": "T", "children": [...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedNode {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NestedNode>,
}

/// A labeled aggregation tree in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hierarchy {
    labels: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    bottom: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Hierarchy {
    /// Builds a hierarchy from `(label, parent label)` pairs in declaration
    /// order. Exactly one node must have no parent.
    pub fn new<I, S>(nodes: I) -> Result<Self, HierarchyError>
    where
        I: IntoIterator<Item = (S, Option<S>)>,
        S: Into<String>,
    {
        let decl: Vec<(String, Option<String>)> = nodes
            .into_iter()
            .map(|(l, p)| (l.into(), p.map(Into::into)))
            .collect();
        if decl.is_empty() {
            return Err(HierarchyError::Empty);
        }

        let mut pos = HashMap::with_capacity(decl.len());
        for (i, (label, _)) in decl.iter().enumerate() {
            if pos.insert(label.clone(), i).is_some() {
                return Err(HierarchyError::DuplicateLabel(label.clone()));
            }
        }

        let mut decl_children = vec![Vec::new(); decl.len()];
        let mut roots = Vec::new();
        for (i, (label, parent)) in decl.iter().enumerate() {
            match parent {
                None => roots.push(i),
                Some(p) => {
                    let &pi = pos.get(p).ok_or_else(|| HierarchyError::UnknownParent {
                        child: label.clone(),
                        parent: p.clone(),
                    })?;
                    decl_children[pi].push(i);
                }
            }
        }
        let root = match roots.as_slice() {
            [] => return Err(HierarchyError::NoRoot),
            [r] => *r,
            _ => {
                return Err(HierarchyError::MultipleRoots(
                    roots.iter().map(|&r| decl[r].0.clone()).collect(),
                ))
            }
        };

        // Breadth-first walk assigns canonical positions.
        let mut order = Vec::with_capacity(decl.len());
        let mut queue = VecDeque::from([root]);
        while let Some(d) = queue.pop_front() {
            order.push(d);
            queue.extend(decl_children[d].iter().copied());
        }
        if order.len() != decl.len() {
            let mut seen = vec![false; decl.len()];
            for &d in &order {
                seen[d] = true;
            }
            let missing = (0..decl.len())
                .filter(|&d| !seen[d])
                .map(|d| decl[d].0.clone())
                .collect();
            return Err(HierarchyError::Unreachable(missing));
        }

        let mut canon = vec![0usize; decl.len()];
        for (c, &d) in order.iter().enumerate() {
            canon[d] = c;
        }
        let labels: Vec<String> = order.iter().map(|&d| decl[d].0.clone()).collect();
        let parent: Vec<Option<usize>> = order
            .iter()
            .map(|&d| decl[d].1.as_ref().map(|p| canon[pos[p]]))
            .collect();
        let children: Vec<Vec<usize>> = order
            .iter()
            .map(|&d| decl_children[d].iter().map(|&c| canon[c]).collect())
            .collect();
        let mut depth = vec![0usize; labels.len()];
        for i in 1..labels.len() {
            // Parents precede children, so the parent's depth is final.
            depth[i] = depth[parent[i].expect("non-root has a parent")] + 1;
        }
        let bottom = (0..labels.len()).filter(|&i| children[i].is_empty()).collect();
        let index = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();

        Ok(Self {
            labels,
            parent,
            children,
            depth,
            bottom,
            index,
        })
    }

    /// Builds a hierarchy from a `(child, parent)` edge list. The root is the
    /// one label that never appears as a child; an edge with an empty parent
    /// also declares a root.
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Result<Self, HierarchyError> {
        let mut seen: Vec<String> = Vec::new();
        let mut parent_of: HashMap<String, Option<String>> = HashMap::new();
        fn note(label: &str, seen: &mut Vec<String>) {
            if !label.is_empty() && !seen.iter().any(|s| s == label) {
                seen.push(label.to_string());
            }
        }
        for (child, parent) in edges {
            let (child, parent) = (child.as_ref().trim(), parent.as_ref().trim());
            note(parent, &mut seen);
            note(child, &mut seen);
            let p = (!parent.is_empty()).then(|| parent.to_string());
            if parent_of.insert(child.to_string(), p).is_some() {
                return Err(HierarchyError::DuplicateLabel(child.to_string()));
            }
        }
        let nodes: Vec<(String, Option<String>)> = seen
            .into_iter()
            .map(|l| {
                let p = parent_of.get(&l).cloned().flatten();
                (l, p)
            })
            .collect();
        Self::new(nodes)
    }

    pub fn from_nested(root: &NestedNode) -> Result<Self, HierarchyError> {
        let mut nodes = Vec::new();
        let mut stack = vec![(root, None::<String>)];
        while let Some((node, parent)) = stack.pop() {
            nodes.push((node.label.clone(), parent));
            for child in node.children.iter().rev() {
                stack.push((child, Some(node.label.clone())));
            }
        }
        Self::new(nodes)
    }

    pub fn to_nested(&self) -> NestedNode {
        fn build(h: &Hierarchy, i: usize) -> NestedNode {
            NestedNode {
                label: h.labels[i].clone(),
                children: h.children[i].iter().map(|&c| build(h, c)).collect(),
            }
        }
        build(self, 0)
    }

    /// A balanced tree whose level `k` nodes each have `widths[k]` children.
    ///
    /// The root is labeled `T`; children append `A`, `B`, ... to the parent
    /// label (the root contributes nothing), so `balanced(&[2, 3])` yields
    /// `T; A, B; AA, AB, AC, BA, BB, BC`.
    pub fn balanced(widths: &[usize]) -> Result<Self, HierarchyError> {
        if let Some(&w) = widths.iter().find(|&&w| w == 0 || w > 26) {
            return Err(HierarchyError::InvalidWidth(w as u64));
        }
        let mut nodes = vec![("T".to_string(), None)];
        let mut frontier = vec![String::new()];
        for &w in widths {
            let mut next = Vec::with_capacity(frontier.len() * w);
            for prefix in &frontier {
                let parent = if prefix.is_empty() { "T".to_string() } else { prefix.clone() };
                for c in 0..w {
                    let label = format!("{prefix}{}", (b'A' + c as u8) as char);
                    nodes.push((label.clone(), Some(parent.clone())));
                    next.push(label);
                }
            }
            frontier = next;
        }
        Self::new(nodes)
    }

    /// Returns a copy with the named nodes and all their descendants removed.
    pub fn without(&self, labels: &[&str]) -> Result<Self, HierarchyError> {
        let mut drop = vec![false; self.len()];
        for label in labels {
            let i = self.index_of(label).ok_or_else(|| HierarchyError::UnknownLabel(label.to_string()))?;
            if i == 0 {
                return Err(HierarchyError::RemoveRoot(label.to_string()));
            }
            drop[i] = true;
        }
        for i in 1..self.len() {
            if let Some(p) = self.parent[i] {
                drop[i] |= drop[p];
            }
        }
        Self::new(
            (0..self.len())
                .filter(|&i| !drop[i])
                .map(|i| (self.labels[i].clone(), self.parent[i].map(|p| self.labels[p].clone()))),
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_bottom(&self) -> usize {
        self.bottom.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn is_bottom(&self, i: usize) -> bool {
        self.children[i].is_empty()
    }

    /// Canonical indices of the leaves, ascending.
    pub fn bottom_indices(&self) -> &[usize] {
        &self.bottom
    }

    /// Node indices grouped by depth.
    pub fn levels(&self) -> Vec<Vec<usize>> {
        let mut levels = vec![Vec::new(); self.max_depth() + 1];
        for i in 0..self.len() {
            levels[self.depth[i]].push(i);
        }
        levels
    }

    /// Leaves below (or equal to) node `i`.
    pub fn leaves_under(&self, i: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![i];
        while let Some(n) = stack.pop() {
            if self.is_bottom(n) {
                out.push(n);
            } else {
                stack.extend(self.children[n].iter().rev());
            }
        }
        out.sort_unstable();
        out
    }
}

/// The 0/1 summation matrix mapping bottom series to every series.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix<T: Real> {
    matrix: DMatrix<T>,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    bottom_rows: Vec<usize>,
}

impl<T: Real> StructureMatrix<T> {
    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    /// Total number of series (`m`).
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of bottom series (`n`).
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    /// Row index of each bottom series; column `j` is the leaf in row `bottom_rows[j]`.
    pub fn bottom_rows(&self) -> &[usize] {
        &self.bottom_rows
    }

    /// `S·1`, the number of bottom series under each node.
    pub fn row_sums(&self) -> Vec<T> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }
}

pub fn build_structure_matrix<T: Real>(h: &Hierarchy) -> StructureMatrix<T> {
    let m = h.len();
    let bottom = h.bottom_indices();
    let mut s = DMatrix::<T>::zeros(m, bottom.len());
    for (col, &leaf) in bottom.iter().enumerate() {
        let mut node = Some(leaf);
        while let Some(i) = node {
            s[(i, col)] = T::one();
            node = h.parent(i);
        }
    }
    StructureMatrix {
        matrix: s,
        row_labels: h.labels().to_vec(),
        col_labels: bottom.iter().map(|&b| h.label(b).to_string()).collect(),
        bottom_rows: bottom.to_vec(),
    }
}

/// `S · bottom`.
pub fn aggregate_bottom<T: Real>(s: &StructureMatrix<T>, bottom: &[T]) -> Result<Vec<T>, HierarchyError> {
    if bottom.len() != s.ncols() {
        return Err(HierarchyError::DimensionMismatch {
            expected: s.ncols(),
            actual: bottom.len(),
        });
    }
    let mut out = vec![T::zero(); s.nrows()];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, &b) in bottom.iter().enumerate() {
            if s.matrix[(i, j)] != T::zero() {
                *o += b;
            }
        }
    }
    Ok(out)
}

/// A parent together with its direct children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubHierarchy {
    pub parent: usize,
    pub children: Vec<usize>,
}

impl SubHierarchy {
    /// Parent first, then the children: the row order of [`Self::local_structure`].
    pub fn nodes(&self) -> Vec<usize> {
        std::iter::once(self.parent).chain(self.children.iter().copied()).collect()
    }

    pub fn width(&self) -> usize {
        self.children.len()
    }

    /// The `(1+w)×w` structure matrix: a row of ones over the identity.
    pub fn local_structure<T: Real>(&self) -> DMatrix<T> {
        let w = self.width();
        DMatrix::from_fn(w + 1, w, |i, j| if i == 0 || i == j + 1 { T::one() } else { T::zero() })
    }
}

/// One entry per internal node, top-down in canonical order.
pub fn enumerate_subhierarchies(h: &Hierarchy) -> Vec<SubHierarchy> {
    (0..h.len())
        .filter(|&i| !h.is_bottom(i))
        .map(|i| SubHierarchy {
            parent: i,
            children: h.children(i).to_vec(),
        })
        .collect()
}

fn check_width(w: u64) -> Result<(), HierarchyError> {
    if w < 2 {
        Err(HierarchyError::InvalidWidth(w))
    } else {
        Ok(())
    }
}

/// `(w^k - 1)/(w - 1)`, i.e. `1 + w + ... + w^(k-1)`.
fn geometric(w: u64, k: u32, depth: u32) -> Result<u64, HierarchyError> {
    let overflow = HierarchyError::CountOverflow { width: w, depth };
    let pow = w.checked_pow(k).ok_or(overflow.clone())?;
    Ok((pow - 1) / (w - 1))
}

/// Number of nodes in a balanced tree of width `w` and depth `d`.
pub fn node_count(w: u64, d: u32) -> Result<u64, HierarchyError> {
    check_width(w)?;
    let k = d.checked_add(1).ok_or(HierarchyError::CountOverflow { width: w, depth: d })?;
    geometric(w, k, d)
}

/// Free parameters of a full covariance over all `p` nodes: `p(p+1)/2`.
pub fn mint_param_count(w: u64, d: u32) -> Result<u64, HierarchyError> {
    let p = node_count(w, d)?;
    let overflow = HierarchyError::CountOverflow { width: w, depth: d };
    let prod = p.checked_mul(p + 1).ok_or(overflow)?;
    Ok(prod / 2)
}

/// Free parameters across all one-level sub-hierarchies of a balanced tree.
///
/// Each of the `(w^d - 1)/(w - 1)` internal nodes contributes `w(w+1)/2`.
pub fn mintit_param_count(w: u64, d: u32) -> Result<u64, HierarchyError> {
    check_width(w)?;
    let overflow = HierarchyError::CountOverflow { width: w, depth: d };
    let steps = geometric(w, d, d)?;
    let per_step = w.checked_mul(w + 1).ok_or(overflow.clone())? / 2;
    steps.checked_mul(per_step).ok_or(overflow)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> Hierarchy {
        crate::testutil::two_level()
    }

    #[test]
    fn fig1_structure_matrix_matches_printed_display() {
        let s = build_structure_matrix::<f64>(&fig1());
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(8, 5, &[
            1., 1., 1., 1., 1.,
            1., 1., 0., 0., 0.,
            0., 0., 1., 1., 1.,
            1., 0., 0., 0., 0.,
            0., 1., 0., 0., 0.,
            0., 0., 1., 0., 0.,
            0., 0., 0., 1., 0.,
            0., 0., 0., 0., 1.,
        ]);
        assert_eq!(s.matrix(), &expected);
        assert_eq!(s.col_labels(), ["AA", "AB", "BA", "BB", "BC"]);
        assert_eq!(s.bottom_rows(), [3, 4, 5, 6, 7]);
    }

    #[test]
    fn single_node() {
        let h = Hierarchy::new([("T", None::<&str>)]).unwrap();
        let s = build_structure_matrix::<f64>(&h);
        assert_eq!(s.matrix(), &DMatrix::from_element(1, 1, 1.0));
        assert!(enumerate_subhierarchies(&h).is_empty());
    }

    #[test]
    fn canonical_order_is_breadth_first_regardless_of_declaration() {
        let h = Hierarchy::new([
            ("AA", Some("A")),
            ("B", Some("T")),
            ("A", Some("T")),
            ("T", None),
            ("AB", Some("A")),
        ])
        .unwrap();
        assert_eq!(h.labels(), ["T", "B", "A", "AA", "AB"]);
        assert_eq!(h.parent(3), Some(2));
        assert_eq!(h.depth(4), 2);
    }

    #[test]
    fn structural_errors() {
        assert_eq!(
            Hierarchy::new([("T", None), ("U", None)]).unwrap_err(),
            HierarchyError::MultipleRoots(vec!["T".into(), "U".into()])
        );
        assert!(matches!(
            Hierarchy::new([("T", None), ("A", Some("X"))]).unwrap_err(),
            HierarchyError::UnknownParent { .. }
        ));
        assert!(matches!(
            Hierarchy::new([("T", None), ("A", Some("T")), ("A", Some("T"))]).unwrap_err(),
            HierarchyError::DuplicateLabel(_)
        ));
        // A two-cycle detached from the root.
        assert!(matches!(
            Hierarchy::new([("T", None), ("X", Some("Y")), ("Y", Some("X"))]).unwrap_err(),
            HierarchyError::Unreachable(_)
        ));
        assert_eq!(
            Hierarchy::new(Vec::<(&str, Option<&str>)>::new()).unwrap_err(),
            HierarchyError::Empty
        );
        assert_eq!(Hierarchy::new([("A", Some("B")), ("B", Some("A"))]).unwrap_err(), HierarchyError::NoRoot);
    }

    #[test]
    fn edge_list_and_nested_forms_agree() {
        let edges = [
            ("A", "T"),
            ("B", "T"),
            ("AA", "A"),
            ("AB", "A"),
            ("BA", "B"),
            ("BB", "B"),
            ("BC", "B"),
        ];
        let h = Hierarchy::from_edges(&edges).unwrap();
        assert_eq!(h, fig1());
        let nested = h.to_nested();
        assert_eq!(Hierarchy::from_nested(&nested).unwrap(), h);
        let json = r#"{"label":"T","children":[{"label":"A","children":[{"label":"AA"},{"label":"AB"}]},
            {"label":"B","children":[{"label":"BA"},{"label":"BB"},{"label":"BC"}]}]}"#;
        let parsed: NestedNode = serde_json::from_str(json).unwrap();
        assert_eq!(Hierarchy::from_nested(&parsed).unwrap(), h);
    }

    #[test]
    fn aggregate_row_sums_and_unit_vectors() {
        let s = build_structure_matrix::<f64>(&fig1());
        let y = aggregate_bottom(&s, &[1.0; 5]).unwrap();
        assert_eq!((y[0], y[1], y[2]), (5.0, 2.0, 3.0));
        let e1 = aggregate_bottom(&s, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(e1, s.matrix().column(0).iter().copied().collect::<Vec<_>>());
        assert!(matches!(
            aggregate_bottom(&s, &[1.0; 4]),
            Err(HierarchyError::DimensionMismatch { expected: 5, actual: 4 })
        ));
    }

    #[test]
    fn fig1_subhierarchies_follow_sweep_order() {
        let h = fig1();
        let subs: Vec<(String, Vec<String>)> = enumerate_subhierarchies(&h)
            .iter()
            .map(|s| {
                (
                    h.label(s.parent).to_string(),
                    s.children.iter().map(|&c| h.label(c).to_string()).collect(),
                )
            })
            .collect();
        assert_eq!(
            subs,
            vec![
                ("T".into(), vec!["A".into(), "B".into()]),
                ("A".into(), vec!["AA".into(), "AB".into()]),
                ("B".into(), vec!["BA".into(), "BB".into(), "BC".into()]),
            ]
        );
        let local = enumerate_subhierarchies(&h)[2].local_structure::<f64>();
        assert_eq!(local.row(0).sum(), 3.0);
        assert_eq!(local.rows(1, 3).into_owned(), DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn degenerate_tree_drops_subtree_and_keeps_single_child_parents() {
        let full = Hierarchy::balanced(&[2, 2, 2]).unwrap();
        let deg = full.without(&["BBA", "BBB"]).unwrap();
        assert_eq!(deg.len(), 13);
        assert_eq!(deg.n_bottom(), 7);
        assert!(deg.is_bottom(deg.index_of("BB").unwrap()));

        let chain = Hierarchy::new([("T", None), ("A", Some("T")), ("AA", Some("A"))]).unwrap();
        let subs = enumerate_subhierarchies(&chain);
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[1].local_structure::<f64>(), DMatrix::from_element(2, 1, 1.0));
    }

    #[test]
    fn node_and_parameter_counts() {
        assert_eq!(node_count(2, 2).unwrap(), 7);
        assert_eq!(node_count(3, 2).unwrap(), 13);
        assert_eq!(node_count(3, 0).unwrap(), 1);
        let brute: u64 = (0..=5).map(|k| 3u64.pow(k)).sum();
        assert_eq!(node_count(3, 5).unwrap(), brute);
        assert_eq!(brute, 364);
        assert_eq!(mint_param_count(2, 2).unwrap(), 28);
        assert_eq!(mintit_param_count(2, 2).unwrap(), 9);
        assert!(matches!(node_count(1, 3), Err(HierarchyError::InvalidWidth(1))));
        assert!(matches!(node_count(2, 64), Err(HierarchyError::CountOverflow { .. })));
        assert!(matches!(mint_param_count(2, 40), Err(HierarchyError::CountOverflow { .. })));
    }
}
