use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Domain, Problem};

/// Seed of the random extension coordinates of high-dimensional evaluation grids.
pub const GRID_SEED: u64 = 0x5eed_2024;

/// Points per axis of the evaluation grid.
pub const GRID_SIDE: usize = 100;

/// One epoch's training points with their data. Coordinates are row-major `n x d`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub d: usize,
    pub interior: Vec<f64>,
    /// Right-hand side (or fitting target) at the interior points.
    pub f: Vec<f64>,
    pub boundary: Vec<f64>,
    /// Dirichlet data at the boundary points.
    pub g: Vec<f64>,
}

impl SampleBatch {
    pub fn n_interior(&self) -> usize {
        self.interior.len() / self.d
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len() / self.d
    }
}

/// Splits `total` over weights proportionally, handing out the remainder by
/// largest fractional part (ties to the lower index).
pub fn allocate(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Uniform point strictly inside the domain.
pub fn sample_interior_point<R: Rng + ?Sized>(domain: &Domain, rng: &mut R, out: &mut [f64]) {
    let (a, b) = domain.interval();
    loop {
        for v in out.iter_mut() {
            *v = a + (b - a) * rng.random::<f64>();
        }
        if domain.contains(out) {
            return;
        }
    }
}

/// Interior and boundary points for one epoch.
pub fn sample<R: Rng + ?Sized>(problem: &Problem, n_f: usize, n_b: usize, rng: &mut R) -> SampleBatch {
    let d = problem.d();
    let mut interior = vec![0.0; n_f * d];
    for x in interior.chunks_exact_mut(d) {
        sample_interior_point(&problem.domain, rng, x);
    }
    let pieces = problem.domain.boundary_pieces();
    let counts = allocate(n_b, &pieces.iter().map(|p| p.measure()).collect::<Vec<_>>());
    let mut boundary = Vec::with_capacity(n_b * d);
    for (piece, &count) in pieces.iter().zip(&counts) {
        for _ in 0..count {
            for i in 0..d {
                boundary.push(if i == piece.axis {
                    piece.value
                } else {
                    piece.lo[i] + (piece.hi[i] - piece.lo[i]) * rng.random::<f64>()
                });
            }
        }
    }
    let f = interior.chunks_exact(d).map(|x| problem.rhs(x)).collect();
    let g = boundary.chunks_exact(d).map(|x| problem.exact(x)).collect();
    SampleBatch { d, interior, f, boundary, g }
}

/// `GRID_SIDE^2` equidistant points on the bounding square (first coordinate
/// slowest), restricted to the closed domain. For `d > 2` each point carries
/// one fixed random draw of the remaining coordinates. A one-dimensional
/// domain gets `GRID_SIDE` points on its interval.
pub fn eval_grid(domain: &Domain, d: usize) -> Vec<f64> {
    let (a, b) = domain.interval();
    let n = GRID_SIDE;
    let axis: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
    if d == 1 {
        return axis;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(GRID_SEED);
    let mut out = Vec::with_capacity(n * n * d);
    for &x1 in &axis {
        for &x2 in &axis {
            let mut p = vec![0.0; d];
            p[0] = x1;
            p[1] = x2;
            for v in p.iter_mut().skip(2) {
                *v = a + (b - a) * rng.random::<f64>();
            }
            if domain.contains_closed(&p) {
                out.extend(p);
            }
        }
    }
    out
}
