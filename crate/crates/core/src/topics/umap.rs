//! UMAP-style neighbour-embedding reduction: fuzzy kNN graph, PCA
//! initialisation, then stochastic layout optimisation with negative
//! sampling.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::knn::{knn_graph, Knn};
use crate::canonical::derive_seed;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct UmapParams {
    pub target_dim: usize,
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub n_epochs: Option<usize>,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
}

impl Default for UmapParams {
    fn default() -> Self {
        UmapParams {
            target_dim: 5,
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            n_epochs: None,
            negative_sample_rate: 5,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reduced {
    pub n: usize,
    pub dim: usize,
    pub coords: Vec<f32>,
    /// True when the input was too small to reduce and was truncated
    /// instead.
    pub skipped: bool,
}

impl Reduced {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }
}

/// Fit `1 / (1 + a d^(2b))` to the target membership curve for `min_dist`
/// and `spread` by Levenberg-Marquardt least squares.
pub fn fit_ab(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| spread * 3.0 * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() }).collect();
    let sse = |a: f64, b: f64| -> f64 {
        xs.iter().zip(&ys).map(|(&x, &y)| (1.0 / (1.0 + a * x.powf(2.0 * b)) - y).powi(2)).sum()
    };
    let (mut a, mut b) = (1.0f64, 1.0f64);
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..500 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (&x, &y) in xs.iter().zip(&ys) {
            let p = if x > 0.0 { x.powf(2.0 * b) } else { 0.0 };
            let den = 1.0 + a * p;
            let r = 1.0 / den - y;
            let da = -p / (den * den);
            let db = if x > 0.0 { -a * p * 2.0 * x.ln() / (den * den) } else { 0.0 };
            let g = [da, db];
            for u in 0..2 {
                jtr[u] += g[u] * r;
                for v in 0..2 {
                    jtj[u][v] += g[u] * g[v];
                }
            }
        }
        let mut improved = false;
        for _ in 0..20 {
            let m = [[jtj[0][0] * (1.0 + lambda), jtj[0][1]], [jtj[1][0], jtj[1][1] * (1.0 + lambda)]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-300 {
                lambda *= 10.0;
                continue;
            }
            let da = -(m[1][1] * jtr[0] - m[0][1] * jtr[1]) / det;
            let db = -(-m[1][0] * jtr[0] + m[0][0] * jtr[1]) / det;
            let c = sse(a + da, b + db);
            if c < cost {
                let rel = (cost - c) / cost.max(1e-300);
                a += da;
                b += db;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-15 {
                    return (a, b);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

/// Per-point `(rho, sigma)` such that the smoothed memberships of the
/// neighbours sum to `log2(k)`.
pub fn smooth_knn_dist(knn: &Knn, n_neighbors: usize) -> (Vec<f64>, Vec<f64>) {
    let n = knn.indices.len() / knn.k;
    let target = (n_neighbors as f64).log2();
    let all_mean = knn.dists.iter().map(|&d| d as f64).sum::<f64>() / knn.dists.len().max(1) as f64;
    let mut rhos = vec![0.0; n];
    let mut sigmas = vec![0.0; n];
    for i in 0..n {
        let (idx, ds) = knn.row(i);
        let ds: Vec<f64> = idx.iter().zip(ds).filter(|(j, _)| **j as usize != i).map(|(_, d)| *d as f64).collect();
        let rho = ds.iter().copied().find(|d| *d > 0.0).unwrap_or(0.0);
        let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
        for _ in 0..64 {
            let psum: f64 = ds.iter().map(|&d| if d - rho > 0.0 { (-(d - rho) / mid).exp() } else { 1.0 }).sum();
            if (psum - target).abs() < 1e-5 {
                break;
            }
            if psum > target {
                hi = mid;
                mid = (lo + hi) / 2.0;
            } else {
                lo = mid;
                mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
            }
        }
        let own_mean = ds.iter().sum::<f64>() / ds.len().max(1) as f64;
        let floor = 1e-3 * if rho > 0.0 { own_mean } else { all_mean };
        rhos[i] = rho;
        sigmas[i] = mid.max(floor).max(1e-12);
    }
    (rhos, sigmas)
}

/// Symmetrised fuzzy graph as directed edges `(head, tail, weight)`, both
/// directions present, sorted by (head, tail).
pub fn fuzzy_graph(knn: &Knn, n_neighbors: usize) -> Vec<(u32, u32, f64)> {
    let n = knn.indices.len() / knn.k;
    let (rhos, sigmas) = smooth_knn_dist(knn, n_neighbors);
    let mut directed: Vec<(u32, u32, f64)> = Vec::with_capacity(n * knn.k);
    for i in 0..n {
        let (idx, ds) = knn.row(i);
        for (&j, &d) in idx.iter().zip(ds) {
            if j as usize == i {
                continue;
            }
            let d = d as f64 - rhos[i];
            let w = if d <= 0.0 { 1.0 } else { (-d / sigmas[i]).exp() };
            directed.push((i as u32, j, w));
        }
    }
    // Pair each edge with its transpose: w = a + b - ab.
    let mut keyed: Vec<(u32, u32, f64, bool)> = directed
        .into_iter()
        .map(|(i, j, w)| if i < j { (i, j, w, true) } else { (j, i, w, false) })
        .collect();
    keyed.sort_by(|x, y| (x.0, x.1, x.3).cmp(&(y.0, y.1, y.3)));
    let mut edges = Vec::with_capacity(keyed.len() * 2);
    let mut t = 0;
    while t < keyed.len() {
        let (i, j) = (keyed[t].0, keyed[t].1);
        let (mut fwd, mut back) = (0.0, 0.0);
        while t < keyed.len() && keyed[t].0 == i && keyed[t].1 == j {
            if keyed[t].3 {
                fwd = keyed[t].2;
            } else {
                back = keyed[t].2;
            }
            t += 1;
        }
        let w = fwd + back - fwd * back;
        if w > 0.0 {
            edges.push((i, j, w));
            edges.push((j, i, w));
        }
    }
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    edges
}

/// Top `dim` principal-component scores of the rows of `data`.
pub fn pca(data: &[f32], in_dim: usize, dim: usize) -> Vec<f64> {
    let n = data.len() / in_dim;
    let mut mean = vec![0.0f64; in_dim];
    for r in data.chunks(in_dim) {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += *x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(in_dim, in_dim);
    let mut centered = vec![0.0f64; in_dim];
    for r in data.chunks(in_dim) {
        for (c, (x, m)) in centered.iter_mut().zip(r.iter().zip(&mean)) {
            *c = *x as f64 - m;
        }
        for u in 0..in_dim {
            let cu = centered[u];
            if cu == 0.0 {
                continue;
            }
            for v in u..in_dim {
                cov[(u, v)] += cu * centered[v];
            }
        }
    }
    for u in 0..in_dim {
        for v in 0..u {
            cov[(u, v)] = cov[(v, u)];
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..in_dim).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let comps: Vec<Vec<f64>> = order
        .iter()
        .take(dim)
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            // Fix the sign: largest-magnitude component positive.
            let big = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let mut out = vec![0.0f64; n * dim];
    for (i, r) in data.chunks(in_dim).enumerate() {
        for (c, comp) in comps.iter().enumerate() {
            out[i * dim + c] = r.iter().zip(&mean).zip(comp).map(|((x, m), w)| (*x as f64 - m) * w).sum();
        }
    }
    out
}

#[inline]
fn clip(v: f32) -> f32 {
    v.clamp(-4.0, 4.0)
}

/// Reduce the rows of `data` (N x `in_dim`) to `params.target_dim`
/// dimensions. Deterministic for a fixed seed.
pub fn reduce(data: &[f32], in_dim: usize, params: &UmapParams, seed: u64) -> Result<Reduced> {
    let n = data.len() / in_dim.max(1);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("reduction needs at least 2 points, got {n}")));
    }
    let dim = params.target_dim;
    if n <= params.n_neighbors + 1 {
        let mut coords = vec![0f32; n * dim];
        for i in 0..n {
            for c in 0..dim.min(in_dim) {
                coords[i * dim + c] = data[i * in_dim + c];
            }
        }
        return Ok(Reduced { n, dim, coords, skipped: true });
    }

    let t0 = std::time::Instant::now();
    let knn = knn_graph(data, in_dim, params.n_neighbors, derive_seed(seed, &["knn"]));
    tracing::debug!(elapsed = ?t0.elapsed(), n, "knn graph");
    let mut edges = fuzzy_graph(&knn, params.n_neighbors);
    drop(knn);
    let n_epochs = params.n_epochs.unwrap_or(if n <= 10_000 { 500 } else { 200 });
    let max_w = edges.iter().map(|e| e.2).fold(0.0f64, f64::max);
    edges.retain(|e| e.2 >= max_w / n_epochs as f64);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &["layout"]));
    let mut emb = pca(data, in_dim, dim);
    let scale = emb.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let expansion = if scale > 0.0 { 10.0 / scale } else { 1.0 };
    let noise = Normal::new(0.0, 1e-4).expect("valid normal");
    for x in emb.iter_mut() {
        *x = *x * expansion + noise.sample(&mut rng);
    }

    let (a, b) = fit_ab(params.min_dist, params.spread);
    tracing::debug!(elapsed = ?t0.elapsed(), edges = edges.len(), "fuzzy graph and init");
    let (a, b) = (a as f32, b as f32);
    let mut emb: Vec<f32> = emb.into_iter().map(|x| x as f32).collect();
    let eps: Vec<f64> = edges.iter().map(|e| max_w / e.2).collect();
    let neg_rate = params.negative_sample_rate as f64;
    let eps_neg: Vec<f64> = eps.iter().map(|e| e / neg_rate).collect();
    let mut next = eps.clone();
    let mut next_neg = eps_neg.clone();
    let mut cur = vec![0.0f32; dim];
    let mut neg_rng = SmallRng::seed_from_u64(derive_seed(seed, &["negative"]));

    for epoch in 0..n_epochs {
        let alpha = (params.learning_rate * (1.0 - epoch as f64 / n_epochs as f64)) as f32;
        let ep = epoch as f64;
        for (e, &(head, tail, _)) in edges.iter().enumerate() {
            if next[e] > ep {
                continue;
            }
            let (j, k) = (head as usize, tail as usize);
            let d2: f32 = (0..dim).map(|c| (emb[j * dim + c] - emb[k * dim + c]).powi(2)).sum();
            let coeff = if d2 > 0.0 {
                let pb = d2.powf(b);
                -2.0 * a * b * (pb / d2) / (a * pb + 1.0)
            } else {
                0.0
            };
            for c in 0..dim {
                let g = clip(coeff * (emb[j * dim + c] - emb[k * dim + c]));
                emb[j * dim + c] += g * alpha;
                emb[k * dim + c] -= g * alpha;
            }
            next[e] += eps[e];

            let n_neg = ((ep - next_neg[e]) / eps_neg[e]).floor().max(0.0) as usize;
            cur.copy_from_slice(&emb[j * dim..(j + 1) * dim]);
            for _ in 0..n_neg {
                let k = neg_rng.random_range(0..n);
                if k == j {
                    continue;
                }
                let d2: f32 = (0..dim).map(|c| (cur[c] - emb[k * dim + c]).powi(2)).sum();
                let coeff = if d2 > 0.0 { 2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0)) } else { 0.0 };
                for c in 0..dim {
                    let g = if coeff > 0.0 { clip(coeff * (cur[c] - emb[k * dim + c])) } else { 4.0 };
                    cur[c] += g * alpha;
                }
            }
            emb[j * dim..(j + 1) * dim].copy_from_slice(&cur);
            next_neg[e] += n_neg as f64 * eps_neg[e];
        }
    }

    tracing::debug!(elapsed = ?t0.elapsed(), n_epochs, "layout");
    Ok(Reduced { n, dim, coords: emb, skipped: false })
}
