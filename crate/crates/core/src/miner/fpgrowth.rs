//! FP-growth restricted to itemsets of bounded size.
//!
//! The transaction source is scanned exactly twice: once to count items and
//! once to build the FP-tree. Everything after that works on the tree and
//! its conditional pattern bases.
//!
//! Items may be assigned to groups (here: the feature an interval belongs
//! to). No emitted itemset holds two items of the same group.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrequentItemset {
    /// Strictly increasing.
    pub item_ids: Vec<usize>,
    pub support: usize,
}

/// Something FP-growth can scan front to back.
pub trait TransactionSource {
    fn scan(&self, visit: &mut dyn FnMut(&[usize]));
}

impl TransactionSource for [Vec<usize>] {
    fn scan(&self, visit: &mut dyn FnMut(&[usize])) {
        for t in self {
            visit(t);
        }
    }
}

impl TransactionSource for Vec<Vec<usize>> {
    fn scan(&self, visit: &mut dyn FnMut(&[usize])) {
        self.as_slice().scan(visit)
    }
}

const ROOT: usize = 0;

#[derive(Debug)]
struct Node {
    item: usize,
    count: usize,
    parent: usize,
    children: Vec<(usize, usize)>,
}

/// FP-tree over original item ids. `header[item]` lists every node carrying
/// `item`; `order` ranks items by descending support.
#[derive(Debug)]
struct FpTree {
    nodes: Vec<Node>,
    header: Vec<Vec<usize>>,
    /// Frequent items, most frequent first.
    order: Vec<usize>,
}

impl FpTree {
    fn new(order: Vec<usize>, n_items: usize) -> Self {
        FpTree {
            nodes: vec![Node {
                item: usize::MAX,
                count: 0,
                parent: ROOT,
                children: Vec::new(),
            }],
            header: vec![Vec::new(); n_items],
            order,
        }
    }

    /// Inserts a path already sorted by `order`.
    fn insert(&mut self, path: &[usize], count: usize) {
        let mut cur = ROOT;
        for &item in path {
            let found = self.nodes[cur]
                .children
                .iter()
                .find(|(it, _)| *it == item)
                .map(|&(_, n)| n);
            cur = match found {
                Some(n) => {
                    self.nodes[n].count += count;
                    n
                }
                None => {
                    let n = self.nodes.len();
                    self.nodes.push(Node {
                        item,
                        count,
                        parent: cur,
                        children: Vec::new(),
                    });
                    self.nodes[cur].children.push((item, n));
                    self.header[item].push(n);
                    n
                }
            };
        }
    }

    fn support(&self, item: usize) -> usize {
        self.header[item].iter().map(|&n| self.nodes[n].count).sum()
    }

    /// Prefix paths (root-to-parent, in tree order) of every node of `item`.
    fn prefix_paths(&self, item: usize) -> Vec<(Vec<usize>, usize)> {
        self.header[item]
            .iter()
            .filter_map(|&n| {
                let mut path = Vec::new();
                let mut cur = self.nodes[n].parent;
                while cur != ROOT {
                    path.push(self.nodes[cur].item);
                    cur = self.nodes[cur].parent;
                }
                path.reverse();
                (!path.is_empty()).then(|| (path, self.nodes[n].count))
            })
            .collect()
    }
}

/// Configured FP-growth run.
#[derive(Debug, Clone)]
pub struct FpGrowth<'a> {
    pub min_support: usize,
    pub max_depth: usize,
    /// Group of each item id; items outside the slice form their own group.
    pub groups: Option<&'a [usize]>,
    pub execution: Execution,
}

impl<'a> FpGrowth<'a> {
    pub fn new(min_support: usize, max_depth: usize) -> Self {
        FpGrowth {
            min_support: min_support.max(1),
            max_depth,
            groups: None,
            execution: Execution::default(),
        }
    }

    pub fn groups(mut self, groups: &'a [usize]) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    fn conflicts(&self, a: usize, b: usize) -> bool {
        match self.groups {
            Some(g) if a < g.len() && b < g.len() => g[a] == g[b],
            _ => a == b,
        }
    }

    fn build_tree(&self, paths: &[(Vec<usize>, usize)], n_items: usize) -> FpTree {
        let mut counts = vec![0usize; n_items];
        for (path, c) in paths {
            for &it in path {
                counts[it] += c;
            }
        }
        let order = frequent_order(counts.into_iter().enumerate(), self.min_support);
        let mut rank = vec![usize::MAX; n_items];
        for (r, &it) in order.iter().enumerate() {
            rank[it] = r;
        }
        let mut tree = FpTree::new(order, n_items);
        let mut buf = Vec::new();
        for (path, c) in paths {
            buf.clear();
            buf.extend(path.iter().copied().filter(|&it| rank[it] != usize::MAX));
            buf.sort_by_key(|&it| rank[it]);
            tree.insert(&buf, *c);
        }
        tree
    }

    /// Mines all itemsets ending in `item` (the least frequent member) of
    /// `tree`, extending `suffix`.
    fn mine_item(&self, tree: &FpTree, item: usize, suffix: &[usize], out: &mut Vec<FrequentItemset>) {
        let support = tree.support(item);
        if support < self.min_support {
            return;
        }
        let mut itemset = suffix.to_vec();
        itemset.push(item);
        let n_items = tree.header.len();
        if itemset.len() + 1 == self.max_depth {
            // Last level: extension supports are the item counts of the
            // conditional pattern base, read straight off the prefix paths.
            let mut counts = vec![0usize; n_items];
            for &n in &tree.header[item] {
                let c = tree.nodes[n].count;
                let mut cur = tree.nodes[n].parent;
                while cur != ROOT {
                    let it = tree.nodes[cur].item;
                    if !itemset.iter().any(|&s| self.conflicts(s, it)) {
                        counts[it] += c;
                    }
                    cur = tree.nodes[cur].parent;
                }
            }
            for (it, &c) in counts.iter().enumerate() {
                if c >= self.min_support {
                    let mut ext = itemset.clone();
                    ext.push(it);
                    ext.sort_unstable();
                    out.push(FrequentItemset {
                        item_ids: ext,
                        support: c,
                    });
                }
            }
        } else if itemset.len() < self.max_depth {
            let paths: Vec<(Vec<usize>, usize)> = tree
                .prefix_paths(item)
                .into_iter()
                .map(|(p, c)| {
                    let kept = p
                        .into_iter()
                        .filter(|&it| !itemset.iter().any(|&s| self.conflicts(s, it)))
                        .collect();
                    (kept, c)
                })
                .collect();
            let cond = self.build_tree(&paths, n_items);
            for &next in cond.order.iter().rev() {
                self.mine_item(&cond, next, &itemset, out);
            }
        }
        itemset.sort_unstable();
        out.push(FrequentItemset {
            item_ids: itemset,
            support,
        });
    }

    /// Every itemset of size `1..=max_depth` with support `>= min_support`,
    /// sorted by (size, item ids).
    pub fn run<S: TransactionSource + ?Sized>(&self, source: &S) -> Vec<FrequentItemset> {
        if self.max_depth == 0 {
            return Vec::new();
        }
        // Scan 1: item supports.
        let mut counts: HashMap<usize, usize> = HashMap::new();
        source.scan(&mut |t| {
            for &it in t {
                *counts.entry(it).or_default() += 1;
            }
        });
        let n_items = counts.keys().max().map_or(0, |&m| m + 1);
        let order = frequent_order(counts, self.min_support);
        let mut rank = vec![usize::MAX; n_items];
        for (r, &it) in order.iter().enumerate() {
            rank[it] = r;
        }
        // Scan 2: the tree.
        let mut tree = FpTree::new(order, n_items);
        let mut buf = Vec::new();
        source.scan(&mut |t| {
            buf.clear();
            buf.extend(t.iter().copied().filter(|&it| rank[it] != usize::MAX));
            buf.sort_by_key(|&it| rank[it]);
            buf.dedup();
            tree.insert(&buf, 1);
        });
        let tree = &tree;
        let mut out: Vec<FrequentItemset> = self
            .execution
            .map(&tree.order, |&item| {
                let mut local = Vec::new();
                self.mine_item(tree, item, &[], &mut local);
                local
            })
            .into_iter()
            .flatten()
            .collect();
        out.sort_by(|a, b| {
            a.item_ids
                .len()
                .cmp(&b.item_ids.len())
                .then_with(|| a.item_ids.cmp(&b.item_ids))
        });
        out
    }
}

/// Frequent items by descending count, ties by item id.
fn frequent_order(counts: impl IntoIterator<Item = (usize, usize)>, min_support: usize) -> Vec<usize> {
    let mut freq: Vec<(usize, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_support).collect();
    freq.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    freq.into_iter().map(|(it, _)| it).collect()
}

/// FP-growth with every item in its own group.
pub fn fp_growth<S: TransactionSource + ?Sized>(
    transactions: &S,
    min_support: usize,
    max_depth: usize,
) -> Vec<FrequentItemset> {
    FpGrowth::new(min_support, max_depth).run(transactions)
}
