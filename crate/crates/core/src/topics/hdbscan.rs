//! Hierarchical density-based clustering: core distances, mutual
//! reachability MST (Boruvka over a kd-tree), condensed cluster tree and
//! excess-of-mass selection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

pub const MIN_DISTANCE: f64 = 1e-10;
const LEAF_SIZE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances, counting the point itself.
    /// Defaults to `min_cluster_size`.
    pub min_samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Per point: cluster id in `0..n_clusters`, or -1 for noise.
    pub labels: Vec<i32>,
    /// Per point: membership strength in [0, 1]; 0 for noise.
    pub strengths: Vec<f64>,
    pub n_clusters: usize,
}

struct Node {
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

pub struct KdTree<'a> {
    data: &'a [f64],
    dim: usize,
    perm: Vec<u32>,
    nodes: Vec<Node>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> KdTree<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Self {
        let n = data.len() / dim;
        let mut t = KdTree { data, dim, perm: (0..n as u32).collect(), nodes: Vec::new(), lo: Vec::new(), hi: Vec::new() };
        t.build(0, n);
        t
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { start, end, children: None });
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for &p in &self.perm[start..end] {
            for (c, x) in self.data[p as usize * self.dim..(p as usize + 1) * self.dim].iter().enumerate() {
                lo[c] = lo[c].min(*x);
                hi[c] = hi[c].max(*x);
            }
        }
        let split = (0..self.dim).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)));
        self.lo.extend_from_slice(&lo);
        self.hi.extend_from_slice(&hi);
        if end - start > LEAF_SIZE {
            let c = split.unwrap_or(0);
            if hi[c] > lo[c] {
                let mid = (start + end) / 2;
                let (data, dim) = (self.data, self.dim);
                self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                    data[a as usize * dim + c].total_cmp(&data[b as usize * dim + c]).then(a.cmp(&b))
                });
                let l = self.build(start, mid);
                let r = self.build(mid, end);
                self.nodes[id].children = Some((l, r));
            }
        }
        id
    }

    fn box_sq_dist(&self, node: usize, p: &[f64]) -> f64 {
        let (lo, hi) = (&self.lo[node * self.dim..], &self.hi[node * self.dim..]);
        let mut s = 0.0;
        for c in 0..self.dim {
            let d = if p[c] < lo[c] {
                lo[c] - p[c]
            } else if p[c] > hi[c] {
                p[c] - hi[c]
            } else {
                0.0
            };
            s += d * d;
        }
        s
    }

    /// Squared distances of the `k` nearest points to point `i`, itself
    /// included, in ascending order.
    pub fn knn_sq(&self, i: usize, k: usize) -> Vec<f64> {
        let p = self.point(i);
        let mut heap: BinaryHeap<Ord64> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            if heap.len() == k && self.box_sq_dist(node, p) >= heap.peek().map_or(f64::INFINITY, |h| h.0) {
                continue;
            }
            match self.nodes[node].children {
                Some((l, r)) => {
                    let (dl, dr) = (self.box_sq_dist(l, p), self.box_sq_dist(r, p));
                    if dl <= dr {
                        stack.push(r);
                        stack.push(l);
                    } else {
                        stack.push(l);
                        stack.push(r);
                    }
                }
                None => {
                    for &q in &self.perm[self.nodes[node].start..self.nodes[node].end] {
                        let d = sq(p, self.point(q as usize));
                        if heap.len() < k {
                            heap.push(Ord64(d));
                        } else if d < heap.peek().expect("non-empty").0 {
                            heap.pop();
                            heap.push(Ord64(d));
                        }
                    }
                }
            }
        }
        let mut v: Vec<f64> = heap.into_iter().map(|o| o.0).collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

#[derive(PartialEq)]
struct Ord64(f64);
impl Eq for Ord64 {}
impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[inline]
fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Distance to the `min_samples`-th nearest point (the point itself counts
/// as the first), floored at [`MIN_DISTANCE`].
pub fn core_distances(tree: &KdTree<'_>, min_samples: usize) -> Vec<f64> {
    let n = tree.data.len() / tree.dim;
    let k = min_samples.clamp(1, n);
    (0..n)
        .into_par_iter()
        .map(|i| tree.knn_sq(i, k).last().copied().unwrap_or(0.0).sqrt().max(MIN_DISTANCE))
        .collect()
}

pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

/// MST edge `(a, b, weight)` under mutual reachability distance.
pub type Edge = (u32, u32, f64);

fn edge_order(x: &Edge, y: &Edge) -> Ordering {
    x.2.total_cmp(&y.2)
        .then(x.0.min(x.1).cmp(&y.0.min(y.1)))
        .then(x.0.max(x.1).cmp(&y.0.max(y.1)))
}

/// Mutual reachability minimum spanning tree by Boruvka rounds, each point
/// querying the kd-tree for its nearest point in another component.
pub fn boruvka_mst(tree: &KdTree<'_>, core: &[f64]) -> Vec<Edge> {
    let n = core.len();
    let dim = tree.dim;
    let mut uf = UnionFind::new(n);
    let mut comp: Vec<usize> = (0..n).collect();
    let mut mst: Vec<Edge> = Vec::with_capacity(n.saturating_sub(1));
    let n_nodes = tree.nodes.len();
    let mut node_min_core = vec![f64::INFINITY; n_nodes];
    for node in (0..n_nodes).rev() {
        node_min_core[node] = match tree.nodes[node].children {
            Some((l, r)) => node_min_core[l].min(node_min_core[r]),
            None => tree.perm[tree.nodes[node].start..tree.nodes[node].end]
                .iter()
                .map(|&q| core[q as usize])
                .fold(f64::INFINITY, f64::min),
        };
    }
    let mut node_comp: Vec<Option<usize>> = vec![None; n_nodes];

    while mst.len() + 1 < n {
        for node in (0..n_nodes).rev() {
            node_comp[node] = match tree.nodes[node].children {
                Some((l, r)) => match (node_comp[l], node_comp[r]) {
                    (Some(a), Some(b)) if a == b => Some(a),
                    _ => None,
                },
                None => {
                    let pts = &tree.perm[tree.nodes[node].start..tree.nodes[node].end];
                    let c0 = comp[pts[0] as usize];
                    pts.iter().all(|&q| comp[q as usize] == c0).then_some(c0)
                }
            };
        }
        let mut best: Vec<Option<Edge>> = vec![None; n];
        let mut stack = Vec::new();
        for p in 0..n {
            let c = comp[p];
            let bound0 = best[c].map_or(f64::INFINITY, |e| e.2);
            if core[p] >= bound0 {
                continue;
            }
            let pt = &tree.data[p * dim..(p + 1) * dim];
            let mut bound = bound0;
            let mut found: Option<Edge> = None;
            stack.clear();
            stack.push(0usize);
            while let Some(node) = stack.pop() {
                if node_comp[node] == Some(c) {
                    continue;
                }
                let lb = tree.box_sq_dist(node, pt).sqrt().max(core[p]).max(node_min_core[node]);
                if lb >= bound {
                    continue;
                }
                match tree.nodes[node].children {
                    Some((l, r)) => {
                        if tree.box_sq_dist(l, pt) <= tree.box_sq_dist(r, pt) {
                            stack.push(r);
                            stack.push(l);
                        } else {
                            stack.push(l);
                            stack.push(r);
                        }
                    }
                    None => {
                        for &q in &tree.perm[tree.nodes[node].start..tree.nodes[node].end] {
                            let q = q as usize;
                            if comp[q] == c {
                                continue;
                            }
                            let w = sq(pt, &tree.data[q * dim..(q + 1) * dim]).sqrt().max(core[p]).max(core[q]);
                            if w < bound {
                                bound = w;
                                found = Some((p as u32, q as u32, w));
                            }
                        }
                    }
                }
            }
            if found.is_some() {
                best[c] = found;
            }
        }
        let mut cands: Vec<Edge> = best.into_iter().flatten().collect();
        cands.sort_by(edge_order);
        let before = mst.len();
        for e in cands {
            if uf.union(e.0 as usize, e.1 as usize) {
                mst.push(e);
            }
        }
        if mst.len() == before {
            break;
        }
        for (p, c) in comp.iter_mut().enumerate() {
            *c = uf.find(p);
        }
    }
    mst
}

/// Merge `(left, right, distance, size)`; node ids below `n` are points,
/// row `r` creates node `n + r`.
pub type Merge = (usize, usize, f64, usize);

pub fn single_linkage(mut mst: Vec<Edge>, n: usize) -> Vec<Merge> {
    mst.sort_by(edge_order);
    let mut uf = UnionFind::new(2 * n);
    let mut node_of = (0..n).collect::<Vec<usize>>();
    node_of.resize(2 * n, 0);
    let mut sizes = vec![1usize; 2 * n];
    let mut rows = Vec::with_capacity(n.saturating_sub(1));
    for (a, b, w) in mst {
        let (ra, rb) = (uf.find(a as usize), uf.find(b as usize));
        if ra == rb {
            continue;
        }
        let (na, nb) = (node_of[ra], node_of[rb]);
        let id = n + rows.len();
        let size = sizes[na] + sizes[nb];
        sizes[id] = size;
        rows.push((na.min(nb), na.max(nb), w, size));
        uf.union(ra, rb);
        let r = uf.find(ra);
        node_of[r] = id;
    }
    rows
}

/// Condensed tree entry: `parent` cluster, `child` (point id below `n`,
/// cluster id from `n` up), `lambda` = 1 / distance, `child_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEntry {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

pub fn condense(merges: &[Merge], n: usize, min_cluster_size: usize) -> Vec<CondensedEntry> {
    let size_of = |node: usize| if node < n { 1 } else { merges[node - n].3 };
    let leaves_under = |node: usize, out: &mut Vec<usize>| {
        let mut st = vec![node];
        while let Some(x) = st.pop() {
            if x < n {
                out.push(x);
            } else {
                let (l, r, _, _) = merges[x - n];
                st.push(r);
                st.push(l);
            }
        }
    };
    let mut out = Vec::new();
    if merges.is_empty() {
        return out;
    }
    let root = n + merges.len() - 1;
    let mut next_label = n + 1;
    // (hierarchy node, condensed cluster label)
    let mut queue = std::collections::VecDeque::from([(root, n)]);
    let mut pts = Vec::new();
    while let Some((node, label)) = queue.pop_front() {
        let (l, r, d, _) = merges[node - n];
        let lambda = 1.0 / d.max(MIN_DISTANCE);
        let (ls, rs) = (size_of(l), size_of(r));
        let big_l = ls >= min_cluster_size;
        let big_r = rs >= min_cluster_size;
        let mut fall_out = |sub: usize, out: &mut Vec<CondensedEntry>| {
            pts.clear();
            leaves_under(sub, &mut pts);
            for &p in pts.iter() {
                out.push(CondensedEntry { parent: label, child: p, lambda, child_size: 1 });
            }
        };
        match (big_l, big_r) {
            (true, true) => {
                for (c, s) in [(l, ls), (r, rs)] {
                    out.push(CondensedEntry { parent: label, child: next_label, lambda, child_size: s });
                    queue.push_back((c, next_label));
                    next_label += 1;
                }
            }
            (false, false) => {
                fall_out(l, &mut out);
                fall_out(r, &mut out);
            }
            (true, false) => {
                fall_out(r, &mut out);
                if l >= n {
                    queue.push_back((l, label));
                } else {
                    out.push(CondensedEntry { parent: label, child: l, lambda, child_size: 1 });
                }
            }
            (false, true) => {
                fall_out(l, &mut out);
                if r >= n {
                    queue.push_back((r, label));
                } else {
                    out.push(CondensedEntry { parent: label, child: r, lambda, child_size: 1 });
                }
            }
        }
    }
    out
}

/// Excess-of-mass cluster selection; the root is never selected. Returns
/// the selected cluster ids in ascending order.
pub fn select_clusters(tree: &[CondensedEntry], n: usize) -> Vec<usize> {
    let Some(max_label) = tree.iter().map(|e| e.parent.max(e.child)).max() else {
        return Vec::new();
    };
    let m = max_label + 1;
    let mut birth = vec![0.0f64; m];
    let mut stability = vec![0.0f64; m];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m];
    for e in tree {
        if e.child >= n {
            birth[e.child] = e.lambda;
            children[e.parent].push(e.child);
        }
    }
    for e in tree {
        stability[e.parent] += (e.lambda - birth[e.parent]) * e.child_size as f64;
    }
    let mut selected = vec![false; m];
    for c in (n + 1..m).rev() {
        let sub: f64 = children[c].iter().map(|&k| stability[k]).sum();
        if sub > stability[c] {
            stability[c] = sub;
        } else {
            selected[c] = true;
            let mut st = children[c].clone();
            while let Some(x) = st.pop() {
                selected[x] = false;
                st.extend_from_slice(&children[x]);
            }
        }
    }
    (n + 1..m).filter(|&c| selected[c]).collect()
}

/// Run the full clustering over row-major points.
pub fn hdbscan(data: &[f64], dim: usize, params: &HdbscanParams) -> Clustering {
    let n = data.len() / dim.max(1);
    let noise = Clustering { labels: vec![-1; n], strengths: vec![0.0; n], n_clusters: 0 };
    if n < 2 || n < params.min_cluster_size {
        return noise;
    }
    let tree = KdTree::new(data, dim);
    let core = core_distances(&tree, params.min_samples.unwrap_or(params.min_cluster_size));
    let mst = boruvka_mst(&tree, &core);
    label_from_mst(mst, n, params.min_cluster_size)
}

/// Labels and strengths from a mutual reachability MST.
pub fn label_from_mst(mst: Vec<Edge>, n: usize, min_cluster_size: usize) -> Clustering {
    let merges = single_linkage(mst, n);
    let condensed = condense(&merges, n, min_cluster_size);
    let selected = select_clusters(&condensed, n);
    let m = condensed.iter().map(|e| e.parent.max(e.child)).max().map_or(n + 1, |x| x + 1);

    let mut parent_of = vec![usize::MAX; m];
    let mut point_lambda = vec![0.0f64; n];
    let mut point_parent = vec![usize::MAX; n];
    let mut death = vec![0.0f64; m];
    for e in &condensed {
        if e.child >= n {
            parent_of[e.child] = e.parent;
        } else {
            point_lambda[e.child] = e.lambda;
            point_parent[e.child] = e.parent;
        }
        death[e.parent] = death[e.parent].max(e.lambda);
    }
    let mut is_sel = vec![false; m];
    for &c in &selected {
        is_sel[c] = true;
    }
    let mut owner = vec![usize::MAX; m];
    for c in n..m {
        let mut x = c;
        while x != usize::MAX && x < m {
            if is_sel[x] {
                owner[c] = x;
                break;
            }
            x = parent_of[x];
        }
    }

    let mut raw = vec![usize::MAX; n];
    let mut strengths = vec![0.0; n];
    for p in 0..n {
        let pc = point_parent[p];
        if pc == usize::MAX {
            continue;
        }
        let c = owner[pc];
        if c == usize::MAX {
            continue;
        }
        raw[p] = c;
        let max_l = death[c];
        strengths[p] = if max_l <= 0.0 || !max_l.is_finite() { 1.0 } else { point_lambda[p].min(max_l) / max_l };
    }

    // Relabel by descending size, ties by first member.
    let mut stats: Vec<(usize, usize, usize)> = selected.iter().map(|&c| (c, 0usize, usize::MAX)).collect();
    for (p, &c) in raw.iter().enumerate() {
        if c != usize::MAX {
            let s = stats.iter_mut().find(|s| s.0 == c).expect("selected");
            s.1 += 1;
            s.2 = s.2.min(p);
        }
    }
    stats.retain(|s| s.1 > 0);
    stats.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut new_id = vec![-1i32; m];
    for (i, s) in stats.iter().enumerate() {
        new_id[s.0] = i as i32;
    }
    let labels: Vec<i32> = raw.iter().map(|&c| if c == usize::MAX { -1 } else { new_id[c] }).collect();
    Clustering { labels, strengths, n_clusters: stats.len() }
}
