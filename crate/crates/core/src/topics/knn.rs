//! k-nearest-neighbour graphs in the embedding space: exact for small
//! inputs, random-projection forest plus NN-descent otherwise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const BRUTE_FORCE_MAX: usize = 4096;

/// Neighbour lists with the point itself included; row `i` holds `k`
/// entries sorted by (distance, index).
#[derive(Debug, Clone)]
pub struct Knn {
    pub k: usize,
    pub indices: Vec<u32>,
    pub dists: Vec<f32>,
}

impl Knn {
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        (&self.indices[i * self.k..(i + 1) * self.k], &self.dists[i * self.k..(i + 1) * self.k])
    }
}

#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn knn_graph(data: &[f32], dim: usize, k: usize, seed: u64) -> Knn {
    let n = data.len() / dim;
    let k = k.min(n);
    if n <= BRUTE_FORCE_MAX {
        brute_force(data, dim, k)
    } else {
        nn_descent(data, dim, k, seed)
    }
}

pub fn brute_force(data: &[f32], dim: usize, k: usize) -> Knn {
    let n = data.len() / dim;
    let rows: Vec<Vec<(f32, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = &data[i * dim..(i + 1) * dim];
            let mut all: Vec<(f32, u32)> =
                (0..n).map(|j| (sq_dist(a, &data[j * dim..(j + 1) * dim]), j as u32)).collect();
            let cmp = |x: &(f32, u32), y: &(f32, u32)| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1));
            if k < n {
                all.select_nth_unstable_by(k - 1, cmp);
                all.truncate(k);
            }
            all.sort_by(cmp);
            all
        })
        .collect();
    finish(rows, k)
}

fn finish(rows: Vec<Vec<(f32, u32)>>, k: usize) -> Knn {
    let mut indices = Vec::with_capacity(rows.len() * k);
    let mut dists = Vec::with_capacity(rows.len() * k);
    for r in rows {
        for (d, j) in r {
            indices.push(j);
            dists.push(d.sqrt());
        }
    }
    Knn { k, indices, dists }
}

struct Heaps {
    k: usize,
    idx: Vec<u32>,
    dist: Vec<f32>,
    new: Vec<bool>,
    worst: Vec<usize>,
}

impl Heaps {
    fn new(n: usize, k: usize) -> Self {
        Heaps {
            k,
            idx: vec![u32::MAX; n * k],
            dist: vec![f32::INFINITY; n * k],
            new: vec![true; n * k],
            worst: vec![0; n],
        }
    }

    fn push(&mut self, i: usize, j: u32, d: f32) -> bool {
        let base = i * self.k;
        let w = base + self.worst[i];
        if !(d < self.dist[w]) {
            return false;
        }
        if self.idx[base..base + self.k].contains(&j) {
            return false;
        }
        self.idx[w] = j;
        self.dist[w] = d;
        self.new[w] = true;
        let mut worst = 0;
        for s in 1..self.k {
            if self.dist[base + s] > self.dist[base + worst] {
                worst = s;
            }
        }
        self.worst[i] = worst;
        true
    }
}

fn rp_leaves(data: &[f32], dim: usize, points: Vec<u32>, leaf: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Vec<u32>>) {
    let mut stack = vec![points];
    while let Some(pts) = stack.pop() {
        if pts.len() <= leaf {
            out.push(pts);
            continue;
        }
        let a = pts[rng.random_range(0..pts.len())] as usize;
        let mut b = pts[rng.random_range(0..pts.len())] as usize;
        for _ in 0..8 {
            if a != b && sq_dist(&data[a * dim..(a + 1) * dim], &data[b * dim..(b + 1) * dim]) > 0.0 {
                break;
            }
            b = pts[rng.random_range(0..pts.len())] as usize;
        }
        let (pa, pb) = (&data[a * dim..(a + 1) * dim], &data[b * dim..(b + 1) * dim]);
        let normal: Vec<f32> = pa.iter().zip(pb).map(|(x, y)| x - y).collect();
        let offset: f32 = normal.iter().zip(pa.iter().zip(pb)).map(|(n, (x, y))| n * (x + y) / 2.0).sum();
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for &p in &pts {
            let row = &data[p as usize * dim..(p as usize + 1) * dim];
            let side: f32 = row.iter().zip(&normal).map(|(x, n)| x * n).sum::<f32>() - offset;
            if side > 0.0 || (side == 0.0 && rng.random_bool(0.5)) {
                left.push(p);
            } else {
                right.push(p);
            }
        }
        if left.is_empty() || right.is_empty() {
            let mut all = pts;
            let half = all.len() / 2;
            for i in (1..all.len()).rev() {
                all.swap(i, rng.random_range(0..=i));
            }
            right = all.split_off(half);
            left = all;
        }
        stack.push(right);
        stack.push(left);
    }
}

/// Approximate kNN graph. Sequential and seeded, so the result is a pure
/// function of the input.
pub fn nn_descent(data: &[f32], dim: usize, k: usize, seed: u64) -> Knn {
    let n = data.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut heaps = Heaps::new(n, k);
    let dist = |a: usize, b: usize| sq_dist(&data[a * dim..(a + 1) * dim], &data[b * dim..(b + 1) * dim]);

    for i in 0..n {
        heaps.push(i, i as u32, 0.0);
    }
    let n_trees = (5 + ((n as f64).powf(0.25) / 2.0).round() as usize).min(32);
    let leaf = (2 * k).max(30);
    for _ in 0..n_trees {
        let mut leaves = Vec::new();
        rp_leaves(data, dim, (0..n as u32).collect(), leaf, &mut rng, &mut leaves);
        for l in leaves {
            for x in 0..l.len() {
                for y in x + 1..l.len() {
                    let (a, b) = (l[x] as usize, l[y] as usize);
                    let d = dist(a, b);
                    heaps.push(a, b as u32, d);
                    heaps.push(b, a as u32, d);
                }
            }
        }
    }

    let max_candidates = k.min(60);
    let max_iters = 10;
    let delta = 0.001;
    for _ in 0..max_iters {
        let mut new_c: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut old_c: Vec<Vec<u32>> = vec![Vec::new(); n];
        for i in 0..n {
            for s in 0..k {
                let slot = i * k + s;
                let j = heaps.idx[slot];
                if j == u32::MAX || j as usize == i {
                    continue;
                }
                if heaps.new[slot] {
                    new_c[i].push(j);
                    new_c[j as usize].push(i as u32);
                } else {
                    old_c[i].push(j);
                    old_c[j as usize].push(i as u32);
                }
            }
        }
        for lists in [&mut new_c, &mut old_c] {
            for l in lists.iter_mut() {
                l.sort_unstable();
                l.dedup();
                if l.len() > max_candidates {
                    for t in (1..l.len()).rev() {
                        l.swap(t, rng.random_range(0..=t));
                    }
                    l.truncate(max_candidates);
                }
            }
        }
        for i in 0..n {
            for s in 0..k {
                let slot = i * k + s;
                if heaps.new[slot] && new_c[i].contains(&heaps.idx[slot]) {
                    heaps.new[slot] = false;
                }
            }
        }
        let mut updates = 0usize;
        for i in 0..n {
            let nc = &new_c[i];
            for x in 0..nc.len() {
                let a = nc[x] as usize;
                for &b in &nc[x + 1..] {
                    let b = b as usize;
                    let d = dist(a, b);
                    updates += heaps.push(a, b as u32, d) as usize + heaps.push(b, a as u32, d) as usize;
                }
                for &b in &old_c[i] {
                    let b = b as usize;
                    if a == b {
                        continue;
                    }
                    let d = dist(a, b);
                    updates += heaps.push(a, b as u32, d) as usize + heaps.push(b, a as u32, d) as usize;
                }
            }
        }
        if (updates as f64) <= delta * (n * k) as f64 {
            break;
        }
    }

    let rows = (0..n)
        .map(|i| {
            let mut r: Vec<(f32, u32)> = (0..k)
                .map(|s| (heaps.dist[i * k + s], heaps.idx[i * k + s]))
                .filter(|(_, j)| *j != u32::MAX)
                .collect();
            r.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            r
        })
        .collect();
    finish(rows, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, dim: usize, centers: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, 1.0).unwrap();
        let cs: Vec<Vec<f32>> =
            (0..centers).map(|_| (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        (0..n).flat_map(|i| cs[i % centers].iter().map(|c| c + noise.sample(&mut rng)).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn brute_force_includes_self_first() {
        let data = blobs(200, 4, 3, 1);
        let g = brute_force(&data, 4, 10);
        for i in 0..200 {
            let (idx, d) = g.row(i);
            assert_eq!(idx[0] as usize, i);
            assert_eq!(d[0], 0.0);
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn nn_descent_recall_against_exact() {
        let (n, dim, k) = (3000, 8, 15);
        let data = blobs(n, dim, 6, 7);
        let exact = brute_force(&data, dim, k);
        let approx = nn_descent(&data, dim, k, 3);
        let mut hit = 0;
        for i in 0..n {
            let e: std::collections::HashSet<u32> = exact.row(i).0.iter().copied().collect();
            hit += approx.row(i).0.iter().filter(|j| e.contains(j)).count();
        }
        let recall = hit as f64 / (n * k) as f64;
        assert!(recall > 0.9, "recall {recall}");
        let again = nn_descent(&data, dim, k, 3);
        assert_eq!(approx.indices, again.indices);
    }
}
