//! Fitting targets and Dirichlet problems for Poisson and Helmholtz operators,
//! with their domains, samplers and evaluation grids.

mod domain;
mod sampling;
mod targets;

pub use domain::{BoundaryPiece, Domain};
pub use sampling::{allocate, eval_grid, sample, sample_interior_point, SampleBatch, GRID_SEED, GRID_SIDE};
pub use targets::{lshape_solution, target_g1, Solution};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Differential operator of a problem; `Fit` means plain regression on the solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Operator {
    Fit,
    /// `-Lap u = f`.
    Poisson,
    /// `Lap u + k^2 u = f`.
    Helmholtz { k: f64 },
}

/// How right-hand sides are produced from the exact solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsMode {
    /// Hand-derived Laplacians.
    #[default]
    Analytic,
    /// Second-order jets pushed through the closed-form solution.
    Autodiff,
}

/// Wavenumber of every Helmholtz problem in the registry.
pub const HELMHOLTZ_K: f64 = 5.0;

/// Default number of octaves of the multi-scale sine target.
pub const DEFAULT_JMAX: u32 = 5;

/// Registry identifiers.
pub const PROBLEM_IDS: &[&str] = &[
    "fit2d_eq41",
    "fit_eq43",
    "poisson2d_eq41",
    "poisson2d_sin8",
    "poisson_lshape",
    "poisson10d_eq45",
    "poisson10d_eq46",
    "poisson10d_eq47",
    "poisson10d_eq48",
    "helmholtz2d_eq410",
    "helmholtz10d_eq45",
    "helmholtz10d_eq48",
    "poisson_tensor_dD",
    "poisson_nontensor_dD",
];

/// Overrides applied when resolving a registry id.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProblemOptions {
    /// Input dimension for ids whose dimension is free.
    pub d: Option<usize>,
    /// Frequency cap of the multi-scale target (default 5).
    pub jmax: Option<u32>,
    pub rhs_mode: RhsMode,
}

/// A fitting target or Dirichlet problem together with its evaluation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub id: String,
    pub operator: Operator,
    pub domain: Domain,
    pub solution: Solution,
    pub rhs_mode: RhsMode,
    grid: Vec<f64>,
    grid_exact: Vec<f64>,
}

impl Problem {
    pub fn new(id: impl Into<String>, operator: Operator, domain: Domain, solution: Solution, rhs_mode: RhsMode) -> Result<Self> {
        let d = domain.dim();
        if d < solution.min_dim() {
            return Err(invalid(format!("solution needs d >= {}, got {d}", solution.min_dim())));
        }
        let grid = eval_grid(&domain, d);
        let grid_exact = grid.chunks_exact(d).map(|x| solution.value(x)).collect();
        Ok(Self { id: id.into(), operator, domain, solution, rhs_mode, grid, grid_exact })
    }

    /// Resolves a registry id.
    pub fn from_id(id: &str, opts: ProblemOptions) -> Result<Self> {
        let jmax = opts.jmax.unwrap_or(DEFAULT_JMAX);
        let fixed = |want: usize| -> Result<usize> {
            match opts.d {
                Some(d) if d != want => Err(invalid(format!("problem `{id}` is defined for d = {want}, got {d}"))),
                _ => Ok(want),
            }
        };
        let free = |default: usize| opts.d.unwrap_or(default);
        let helmholtz = Operator::Helmholtz { k: HELMHOLTZ_K };
        let (operator, domain, solution) = match id {
            "fit2d_eq41" => (Operator::Fit, Domain::UnitCube(fixed(2)?), Solution::ProductG { jmax }),
            "fit_eq43" => {
                let d = free(10);
                if d < 3 {
                    return Err(invalid("fit_eq43 needs d >= 3"));
                }
                (Operator::Fit, Domain::UnitCube(d), Solution::TripleG { jmax, terms: d - 2 })
            }
            "poisson2d_eq41" => (Operator::Poisson, Domain::UnitCube(fixed(2)?), Solution::ProductG { jmax }),
            "poisson2d_sin8" => (Operator::Poisson, Domain::UnitCube(fixed(2)?), Solution::SinProduct2 { freq: 8.0 }),
            "poisson_lshape" => {
                fixed(2)?;
                (Operator::Poisson, Domain::LShape, Solution::LShape)
            }
            "poisson10d_eq45" => (Operator::Poisson, Domain::UnitCube(fixed(10)?), Solution::ProductSinPi),
            "poisson10d_eq46" => (Operator::Poisson, Domain::UnitCube(fixed(10)?), Solution::AdditiveG { jmax }),
            "poisson10d_eq47" => {
                (Operator::Poisson, Domain::UnitCube(fixed(10)?), Solution::TripleSin { freq: 10.0, terms: 8 })
            }
            "poisson10d_eq48" => (Operator::Poisson, Domain::UnitCube(fixed(10)?), Solution::TripleG { jmax, terms: 8 }),
            "helmholtz2d_eq410" => (helmholtz, Domain::UnitCube(fixed(2)?), Solution::SinProduct2 { freq: 25.0 }),
            "helmholtz10d_eq45" => (helmholtz, Domain::UnitCube(fixed(10)?), Solution::ProductSinPi),
            "helmholtz10d_eq48" => (helmholtz, Domain::UnitCube(fixed(10)?), Solution::TripleG { jmax, terms: 8 }),
            "poisson_tensor_dD" => (Operator::Poisson, Domain::UnitCube(free(5)), Solution::TensorD2),
            "poisson_nontensor_dD" => (Operator::Poisson, Domain::UnitCube(free(5)), Solution::NonTensorD3),
            other => return Err(Error::UnknownProblem(other.to_string())),
        };
        Self::new(id, operator, domain, solution, opts.rhs_mode)
    }

    pub fn d(&self) -> usize {
        self.domain.dim()
    }

    pub fn is_fit(&self) -> bool {
        self.operator == Operator::Fit
    }

    pub fn exact(&self, x: &[f64]) -> f64 {
        self.solution.value(x)
    }

    pub fn exact_laplacian(&self, x: &[f64]) -> f64 {
        match self.rhs_mode {
            RhsMode::Analytic => self.solution.laplacian(x),
            RhsMode::Autodiff => self.solution.laplacian_autodiff(x),
        }
    }

    /// Right-hand side `f` at `x`; for fitting problems, the target value.
    pub fn rhs(&self, x: &[f64]) -> f64 {
        match self.operator {
            Operator::Fit => self.exact(x),
            Operator::Poisson => -self.exact_laplacian(x),
            Operator::Helmholtz { k } => self.exact_laplacian(x) + k * k * self.exact(x),
        }
    }

    /// Evaluation grid, row-major `m x d`.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Exact solution on [`grid`](Self::grid).
    pub fn grid_exact(&self) -> &[f64] {
        &self.grid_exact
    }

    pub fn grid_len(&self) -> usize {
        self.grid_exact.len()
    }
}

/// Right-hand side of `problem` at `x` (free-function form).
pub fn rhs(problem: &Problem, x: &[f64]) -> f64 {
    problem.rhs(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn every_id_resolves() {
        for id in PROBLEM_IDS {
            let p = Problem::from_id(id, ProblemOptions::default()).unwrap();
            assert_eq!(&p.id, id);
        }
        assert!(matches!(Problem::from_id("nope", ProblemOptions::default()), Err(Error::UnknownProblem(_))));
        assert!(Problem::from_id("poisson10d_eq45", ProblemOptions { d: Some(3), ..Default::default() }).is_err());
    }

    #[test]
    fn analytic_rhs_closed_forms() {
        let p = Problem::from_id("poisson10d_eq45", ProblemOptions::default()).unwrap();
        let x = [0.3, 0.1, 0.7, 0.2, 0.9, 0.5, 0.4, 0.6, 0.8, 0.35];
        assert!((p.rhs(&x) - 10.0 * PI * PI * p.exact(&x)).abs() <= 1e-12);
        let h = Problem::from_id("helmholtz2d_eq410", ProblemOptions::default()).unwrap();
        let y = [0.013, 0.21];
        let want = (25.0 - 1250.0 * PI * PI) * h.exact(&y);
        assert!((h.rhs(&y) - want).abs() <= 1e-9 * want.abs());
        let t = Problem::from_id("poisson_tensor_dD", ProblemOptions { d: Some(4), ..Default::default() }).unwrap();
        let z = [0.1, 0.2, 0.3, 0.4];
        assert!((t.rhs(&z) - 7.0 * PI * PI * t.exact(&z)).abs() <= 1e-10);
    }

    #[test]
    fn rhs_modes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for id in PROBLEM_IDS {
            let a = Problem::from_id(id, ProblemOptions::default()).unwrap();
            let b = Problem::from_id(id, ProblemOptions { rhs_mode: RhsMode::Autodiff, ..Default::default() }).unwrap();
            let mut x = vec![0.0; a.d()];
            for _ in 0..10 {
                sample_interior_point(&a.domain, &mut rng, &mut x);
                let (ra, rb) = (a.rhs(&x), b.rhs(&x));
                assert!((ra - rb).abs() <= 1e-6 * ra.abs().max(1.0), "{id}: {ra} vs {rb}");
            }
        }
    }

    #[test]
    fn grids() {
        let cube = Problem::from_id("fit2d_eq41", ProblemOptions::default()).unwrap();
        assert_eq!(cube.grid_len(), 10_000);
        let l = Problem::from_id("poisson_lshape", ProblemOptions::default()).unwrap();
        let oracle = {
            let axis: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
            let mut n = 0;
            for &a in &axis {
                for &b in &axis {
                    if !(a > 0.0 && b < 0.0) {
                        n += 1;
                    }
                }
            }
            n
        };
        assert_eq!(l.grid_len(), oracle);
        assert_eq!(l.grid_len(), 7500);
        let hi = Problem::from_id("poisson10d_eq45", ProblemOptions::default()).unwrap();
        let again = Problem::from_id("poisson10d_eq45", ProblemOptions::default()).unwrap();
        assert_eq!(hi.grid(), again.grid());
        assert_eq!(hi.grid_len(), 10_000);
    }

    #[test]
    fn lshape_boundary_allocation() {
        let p = Problem::from_id("poisson_lshape", ProblemOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = sample(&p, 10, 400, &mut rng);
        assert_eq!(batch.n_boundary(), 400);
        let count = |f: &dyn Fn(&[f64]) -> bool| batch.boundary.chunks(2).filter(|x| f(x)).count();
        assert_eq!(count(&|x| x[0] == -1.0), 100);
        assert_eq!(count(&|x| x[1] == 1.0), 100);
        assert_eq!(count(&|x| x[1] == -1.0), 50);
        assert_eq!(count(&|x| x[0] == 0.0), 50);
        assert_eq!(count(&|x| x[1] == 0.0), 50);
        assert_eq!(count(&|x| x[0] == 1.0), 50);
        assert!(batch.boundary.chunks(2).all(|x| p.domain.on_boundary(x)));
    }

    #[test]
    fn allocation_largest_remainder() {
        assert_eq!(allocate(400, &[2.0, 1.0, 1.0, 1.0, 1.0, 2.0]), vec![100, 50, 50, 50, 50, 100]);
        assert_eq!(allocate(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(allocate(5, &[1.0, 2.0]), vec![2, 3]);
        assert_eq!(allocate(0, &[1.0]), vec![0]);
    }

    #[test]
    fn interior_samples_satisfy_predicate_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = Problem::from_id("poisson_lshape", ProblemOptions::default()).unwrap();
        let b = sample(&l, 100_000, 0, &mut rng);
        assert!(b.interior.chunks(2).all(|x| l.domain.contains(x)));
        let c = Problem::from_id("poisson2d_sin8", ProblemOptions::default()).unwrap();
        let n = 20_000;
        let b = sample(&c, n, 40, &mut rng);
        let se = (1.0 / 12.0 / n as f64).sqrt();
        for k in 0..2 {
            let m: f64 = b.interior.chunks(2).map(|x| x[k]).sum::<f64>() / n as f64;
            assert!((m - 0.5).abs() <= 3.0 * se);
        }
        assert!(b.boundary.chunks(2).all(|x| c.domain.on_boundary(x)));
        assert_eq!(b.f.len(), n);
        assert_eq!(b.g.len(), 40);
        let other = sample(&c, n, 40, &mut rng);
        assert_ne!(other.interior, b.interior);
    }
}
