//! Error metrics, frequency analysis and convergence-rate fitting.

use std::path::Path;

use num_complex::Complex;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::Model;
use crate::problems::Problem;
use crate::scalar::Scalar;

/// Points per model call when sweeping a grid.
const EVAL_CHUNK: usize = 1024;

/// Frequencies reported by default.
pub const SPECTRUM_GAMMAS: [usize; 4] = [2, 4, 8, 16];

/// Samples per axis for spectra.
pub const SPECTRUM_N: usize = 100;

/// Model values at `m x d` points, evaluated in parallel chunks.
pub fn eval_points<T: Scalar>(model: &Model<T>, points: &[f64]) -> Result<Vec<f64>> {
    let d = model.d();
    let chunks: Vec<Vec<f64>> = points
        .par_chunks(EVAL_CHUNK * d)
        .map(|c| {
            let xs: Vec<T> = c.iter().map(|&v| T::cst(v)).collect();
            Ok(model.eval_batch(&xs)?.into_iter().map(T::to_f64_lossy).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// `||u - u*||_2 / ||u*||_2` over paired samples.
pub fn rel_l2_values(model: &[f64], exact: &[f64]) -> Result<f64> {
    if model.len() != exact.len() {
        return Err(Error::Dimension { context: "rel_l2 samples", expected: exact.len(), found: model.len() });
    }
    let norm: f64 = exact.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::UndefinedMetric("exact solution has zero norm on the grid"));
    }
    let diff: f64 = model.iter().zip(exact).map(|(u, e)| (u - e) * (u - e)).sum::<f64>().sqrt();
    Ok(diff / norm)
}

/// Relative L2 error of a model on the problem's evaluation grid.
pub fn rel_l2<T: Scalar>(model: &Model<T>, problem: &Problem) -> Result<f64> {
    check_dims(model, problem)?;
    rel_l2_values(&eval_points(model, problem.grid())?, problem.grid_exact())
}

fn check_dims<T: Scalar>(model: &Model<T>, problem: &Problem) -> Result<()> {
    if model.d() != problem.d() {
        return Err(Error::Dimension { context: "model vs problem", expected: problem.d(), found: model.d() });
    }
    Ok(())
}

/// Pointwise error at one grid point, projected on the first two coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicePoint {
    pub x1: f64,
    pub x2: f64,
    pub abs_err: f64,
}

/// `|u - u*|` over the evaluation grid, in grid order.
pub fn slice_errors<T: Scalar>(model: &Model<T>, problem: &Problem) -> Result<Vec<SlicePoint>> {
    check_dims(model, problem)?;
    let d = problem.d();
    if d < 2 {
        return Err(invalid("slices need d >= 2"));
    }
    let u = eval_points(model, problem.grid())?;
    Ok(problem
        .grid()
        .chunks_exact(d)
        .zip(u.iter().zip(problem.grid_exact()))
        .map(|(x, (u, e))| SlicePoint { x1: x[0], x2: x[1], abs_err: (u - e).abs() })
        .collect())
}

/// Summary of a trained model on a problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub problem: String,
    pub method: String,
    pub p: Option<usize>,
    pub d: usize,
    pub params: String,
    pub seed: u64,
    pub epochs: usize,
    pub rel_final: f64,
    pub rel_min: f64,
}

impl EvalReport {
    const HEADER: [&'static str; 9] = ["problem", "method", "p", "d", "params", "seed", "epochs", "rel_final", "rel_min"];

    fn row(&self) -> [String; 9] {
        [
            self.problem.clone(),
            self.method.clone(),
            self.p.map(|p| p.to_string()).unwrap_or_default(),
            self.d.to_string(),
            self.params.clone(),
            self.seed.to_string(),
            self.epochs.to_string(),
            fmt_float(self.rel_final),
            fmt_float(self.rel_min),
        ]
    }
}

/// Shortest round-trip decimal in exponent form.
pub(crate) fn fmt_float(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_report_csv(path: &Path, rows: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EvalReport::HEADER)?;
    for r in rows {
        w.write_record(r.row())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_slice_csv(path: &Path, points: &[SlicePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x1", "x2", "abs_err"])?;
    for p in points {
        w.write_record([fmt_float(p.x1), fmt_float(p.x2), fmt_float(p.abs_err)])?;
    }
    w.flush()?;
    Ok(())
}

/// `F[f](gamma) = (1/n) sum_j f(j/n) exp(-2 pi i j gamma / n)` for each requested `gamma < n`.
pub fn dft(values: &[f64], gammas: &[usize]) -> Result<Vec<Complex<f64>>> {
    let n = values.len();
    if let Some(&g) = gammas.iter().find(|&&g| g >= n) {
        return Err(invalid(format!("frequency {g} needs at least {} samples, got {n}", g + 1)));
    }
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    Ok(gammas.iter().map(|&g| buf[g] * scale).collect())
}

/// Averaged spectra of a target and a model along the first coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub n: usize,
    pub gammas: Vec<usize>,
    /// Mean over the second coordinate of `|F[f](gamma)|`.
    pub target: Vec<f64>,
    pub model: Vec<f64>,
    /// Mean of `|F[f](gamma) - F[u](gamma)|` (complex difference).
    pub diff: Vec<f64>,
    /// `|target - model|` (difference of averaged magnitudes).
    pub diff_mag: Vec<f64>,
}

/// Spectra from samples on the `n x n` grid `(j/n, l/n)`, stored with `j` slowest:
/// index `j * n + l`. The transform runs along `j` for every `l`, then averages over `l`.
pub fn spectrum_from_grid(target: &[f64], model: &[f64], n: usize, gammas: &[usize]) -> Result<SpectrumReport> {
    if n < 64 {
        return Err(invalid(format!("spectra need n >= 64, got {n}")));
    }
    for (context, v) in [("spectrum target samples", target), ("spectrum model samples", model)] {
        if v.len() != n * n {
            return Err(Error::Dimension { context, expected: n * n, found: v.len() });
        }
    }
    let k = gammas.len();
    let (mut t_mag, mut u_mag, mut diff) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let mut line_t = vec![0.0; n];
    let mut line_u = vec![0.0; n];
    for l in 0..n {
        for j in 0..n {
            line_t[j] = target[j * n + l];
            line_u[j] = model[j * n + l];
        }
        let ft = dft(&line_t, gammas)?;
        let fu = dft(&line_u, gammas)?;
        for i in 0..k {
            t_mag[i] += ft[i].norm();
            u_mag[i] += fu[i].norm();
            diff[i] += (ft[i] - fu[i]).norm();
        }
    }
    let inv = 1.0 / n as f64;
    for v in t_mag.iter_mut().chain(u_mag.iter_mut()).chain(diff.iter_mut()) {
        *v *= inv;
    }
    let diff_mag = t_mag.iter().zip(&u_mag).map(|(a, b)| (a - b).abs()).collect();
    Ok(SpectrumReport { n, gammas: gammas.to_vec(), target: t_mag, model: u_mag, diff, diff_mag })
}

/// Points `(j/n, l/n, c, ..., c)` with `j` slowest, the trailing coordinates
/// held at the domain midpoint.
pub fn spectrum_points(problem: &Problem, n: usize) -> Vec<f64> {
    let d = problem.d();
    let (a, b) = problem.domain.interval();
    let mid = 0.5 * (a + b);
    let mut pts = Vec::with_capacity(n * n * d);
    for j in 0..n {
        for l in 0..n {
            pts.push(j as f64 / n as f64);
            pts.push(l as f64 / n as f64);
            pts.extend(std::iter::repeat_n(mid, d - 2));
        }
    }
    pts
}

/// Spectra of the exact solution and the model over `[0,1)^2` in the first two coordinates.
pub fn spectrum<T: Scalar>(model: &Model<T>, problem: &Problem, n: usize, gammas: &[usize]) -> Result<SpectrumReport> {
    check_dims(model, problem)?;
    if problem.d() < 2 {
        return Err(invalid("spectra need d >= 2"));
    }
    let pts = spectrum_points(problem, n);
    let target: Vec<f64> = pts.chunks_exact(problem.d()).map(|x| problem.exact(x)).collect();
    let u = eval_points(model, &pts)?;
    spectrum_from_grid(&target, &u, n, gammas)
}

pub fn write_spectrum_csv(path: &Path, report: &SpectrumReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["gamma", "target", "model", "diff", "diff_mag"])?;
    for i in 0..report.gammas.len() {
        w.write_record([
            report.gammas[i].to_string(),
            fmt_float(report.target[i]),
            fmt_float(report.model[i]),
            fmt_float(report.diff[i]),
            fmt_float(report.diff_mag[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median with the two middle values averaged for even counts; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `log(err)` against `log(size)`.
pub fn fit_rate(sizes: &[f64], errs: &[f64]) -> Result<f64> {
    if sizes.len() != errs.len() {
        return Err(Error::Dimension { context: "fit_rate inputs", expected: sizes.len(), found: errs.len() });
    }
    if sizes.len() < 3 {
        return Err(invalid(format!("fit_rate needs at least 3 points, got {}", sizes.len())));
    }
    if sizes.iter().chain(errs).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(invalid("fit_rate needs finite positive sizes and errors"));
    }
    let xs: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("fit_rate needs at least two distinct sizes"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffengine::Activation;
    use crate::models::ModelSpec;
    use crate::problems::ProblemOptions;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn naive_dft(values: &[f64], g: usize) -> Complex<f64> {
        let n = values.len() as f64;
        values
            .iter()
            .enumerate()
            .map(|(j, &v)| Complex::from_polar(v, -2.0 * PI * (j as f64 / n) * g as f64))
            .sum::<Complex<f64>>()
            / n
    }

    #[test]
    fn constant_and_single_tone() {
        let n = 100;
        let ones = vec![1.0; n];
        for c in dft(&ones, &SPECTRUM_GAMMAS).unwrap() {
            assert!(c.norm() < 1e-10);
        }
        let tone: Vec<f64> = (0..n).map(|j| (2.0 * PI * 4.0 * j as f64 / n as f64).sin()).collect();
        let c = dft(&tone, &[2, 4]).unwrap();
        assert!(c[0].norm() < 1e-10);
        assert!((c[1].norm() - 0.5).abs() < 1e-10);
    }

    #[test]
    fn fft_matches_quadratic_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100;
        let amps: Vec<(usize, f64, f64)> = (0..6).map(|_| (rng.random_range(0..40), rng.random(), rng.random())).collect();
        let f: Vec<f64> = (0..n)
            .map(|j| {
                let x = j as f64 / n as f64;
                amps.iter().map(|&(k, a, b)| a * (2.0 * PI * k as f64 * x).cos() + b * (2.0 * PI * k as f64 * x).sin()).sum()
            })
            .collect();
        let gammas: Vec<usize> = (0..n).collect();
        let fast = dft(&f, &gammas).unwrap();
        for g in gammas {
            assert!((fast[g] - naive_dft(&f, g)).norm() <= 1e-10);
        }
    }

    #[test]
    fn grid_spectrum_averages_lines() {
        let n = 64;
        let f: Vec<f64> = (0..n * n).map(|i| (2.0 * PI * 8.0 * (i / n) as f64 / n as f64).sin()).collect();
        let zero = vec![0.0; n * n];
        let r = spectrum_from_grid(&f, &zero, n, &SPECTRUM_GAMMAS).unwrap();
        assert!((r.target[2] - 0.5).abs() < 1e-10);
        assert!(r.target[0].abs() < 1e-10);
        assert_eq!(r.model, vec![0.0; 4]);
        assert_eq!(r.diff, r.target);
        assert!(spectrum_from_grid(&f, &zero, 32, &SPECTRUM_GAMMAS).is_err());
    }

    #[test]
    fn rel_l2_cases() {
        let exact = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(rel_l2_values(&exact, &exact).unwrap(), 0.0);
        assert!((rel_l2_values(&[0.0; 4], &exact).unwrap() - 1.0).abs() < 1e-15);
        let eps = 0.1;
        let shifted: Vec<f64> = exact.iter().map(|e| e + eps).collect();
        let norm = exact.iter().map(|e| e * e).sum::<f64>().sqrt();
        let want = eps * 2.0 / norm;
        assert!((rel_l2_values(&shifted, &exact).unwrap() - want).abs() <= 1e-12);
        assert!(matches!(rel_l2_values(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn model_level_metrics() {
        let problem = Problem::from_id("fit2d_eq41", ProblemOptions { jmax: Some(2), ..Default::default() }).unwrap();
        let spec = ModelSpec::khorder(2, 2, 1, 4, 1, 4, Activation::Tanh);
        let mut model = Model::<f64>::build(spec, 1).unwrap();
        model.zero_outer();
        assert!((rel_l2(&model, &problem).unwrap() - 1.0).abs() < 1e-12);
        let s = slice_errors(&model, &problem).unwrap();
        assert_eq!(s.len(), 10_000);
        let k = 4321;
        let x = &problem.grid()[2 * k..2 * k + 2];
        assert_eq!((s[k].x1, s[k].x2), (x[0], x[1]));
        assert!((s[k].abs_err - problem.exact(x).abs()).abs() < 1e-15);
        let spec = spectrum(&model, &problem, SPECTRUM_N, &SPECTRUM_GAMMAS).unwrap();
        assert_eq!(spec.model, vec![0.0; 4]);
    }

    #[test]
    fn rate_examples() {
        let sizes = [5.0, 15.0, 30.0, 60.0];
        let inv: Vec<f64> = sizes.iter().map(|n| 3.0 / n).collect();
        assert!((fit_rate(&sizes, &inv).unwrap() + 1.0).abs() <= 1e-12);
        assert!(fit_rate(&sizes, &[0.2; 4]).unwrap().abs() <= 1e-12);
        let alpha = 2f64.log10();
        let pw: Vec<f64> = sizes.iter().map(|n| 0.7 * n.powf(-alpha)).collect();
        assert!((fit_rate(&sizes, &pw).unwrap() + std::f64::consts::LOG10_2).abs() <= 1e-12);
        assert!(fit_rate(&sizes, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_rate(&sizes[..2], &inv[..2]).is_err());
    }

    proptest! {
        #[test]
        fn parseval_bound(values in prop::collection::vec(-5.0f64..5.0, 64..128)) {
            let n = values.len();
            let gammas: Vec<usize> = (0..=n / 2).collect();
            let energy: f64 = dft(&values, &gammas).unwrap().iter().map(|c| c.norm_sqr()).sum();
            let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / n as f64;
            prop_assert!(energy <= mean_sq * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn rel_l2_scale_invariant(
            pairs in prop::collection::vec((-3.0f64..3.0, 0.1f64..3.0), 4..40),
            c in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0],
        ) {
            let (u, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = rel_l2_values(&u, &e).unwrap();
            let us: Vec<f64> = u.iter().map(|v| v * c).collect();
            let es: Vec<f64> = e.iter().map(|v| v * c).collect();
            let b = rel_l2_values(&us, &es).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn fit_rate_ignores_scale(slope in -3.0f64..1.0, c in 1e-3f64..1e3) {
            let sizes = [4.0, 8.0, 16.0, 40.0, 100.0];
            let e1: Vec<f64> = sizes.iter().map(|n: &f64| n.powf(slope)).collect();
            let e2: Vec<f64> = e1.iter().map(|e| c * e).collect();
            let a = fit_rate(&sizes, &e1).unwrap();
            let b = fit_rate(&sizes, &e2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((a - slope).abs() <= 1e-12);
        }
    }
}
