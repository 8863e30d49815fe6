//! Distributional diagnostics: periodic kernel density estimation, grid
//! total-variation distance, and log-linear decay fits.
//!
//! Total variation follows the unhalved convention `int |dp - dq|`, so its
//! range is [0, 2]; CSV columns produced from it are named `tv_unhalved`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point};
use crate::parallel::map_indexed;
use crate::targets::Target;

/// Bandwidth selection for the periodic KDE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// Scott's rule on circular statistics:
    /// `bw = sigma_circ * n^{-1/(d+4)}`.
    Scott,
    Fixed(f64),
}

/// Kernel density estimator on `T^d` with a wrapped Gaussian kernel of
/// variance `bandwidth^2`.
#[derive(Debug, Clone)]
pub struct PeriodicKde {
    samples: Vec<f64>,
    dim: usize,
    bandwidth: f64,
}

impl PeriodicKde {
    /// Fit a KDE to torus samples. Needs at least 100 samples and `d <= 3`.
    pub fn fit(samples: &[Point], rule: BandwidthRule) -> Result<PeriodicKde> {
        if samples.len() < 100 {
            return Err(Error::TooFewSamples {
                need: 100,
                got: samples.len(),
            });
        }
        let manifold = samples[0].manifold();
        let dim = match manifold {
            Manifold::Torus { dim } => dim,
            Manifold::Sphere { .. } => {
                return Err(Error::InvalidParameter(
                    "periodic KDE is defined on the torus".into(),
                ))
            }
        };
        if dim > 3 {
            return Err(Error::DimensionTooLarge { max: 3, got: dim });
        }
        let mut flat = Vec::with_capacity(samples.len() * dim);
        for s in samples {
            debug_assert_eq!(s.manifold(), manifold);
            flat.extend_from_slice(s.coords());
        }
        let bandwidth = match rule {
            BandwidthRule::Fixed(b) => {
                if !(b > 0.0) {
                    return Err(Error::InvalidParameter("bandwidth must be > 0".into()));
                }
                b
            }
            BandwidthRule::Scott => {
                let sigma = mean_circular_std(&flat, samples.len(), dim);
                let n = samples.len() as f64;
                (sigma * n.powf(-1.0 / (dim as f64 + 4.0))).max(1e-6)
            }
        };
        Ok(PeriodicKde {
            samples: flat,
            dim,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Density estimate at `x` (torus coordinates).
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let v = self.bandwidth * self.bandwidth;
        let pref = 1.0 / (std::f64::consts::TAU * v).sqrt();
        // |n| <= 3 images suffice for bandwidth < 0.3; widen otherwise.
        let wraps = 3i64.max((1.0 + 6.0 * self.bandwidth).ceil() as i64);
        let n = self.len();
        let mut acc = 0.0;
        for s in 0..n {
            let mut k = 1.0;
            for j in 0..self.dim {
                let delta = crate::manifold::wrap_half(x[j] - self.samples[s * self.dim + j]);
                let mut kj = 0.0;
                for w in -wraps..=wraps {
                    let z = delta + w as f64;
                    kj += pref * (-z * z / (2.0 * v)).exp();
                }
                k *= kj;
            }
            acc += k;
        }
        acc / n as f64
    }
}

/// Average per-coordinate circular standard deviation on the unit torus.
fn mean_circular_std(flat: &[f64], n: usize, dim: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..dim {
        let (mut c, mut s) = (0.0, 0.0);
        for i in 0..n {
            let angle = std::f64::consts::TAU * flat[i * dim + j];
            c += angle.cos();
            s += angle.sin();
        }
        let r = ((c * c + s * s).sqrt() / n as f64).clamp(1e-12, 1.0);
        total += (-2.0 * r.ln()).sqrt() / std::f64::consts::TAU;
    }
    total / dim as f64
}

/// A normalized density on a regular grid: cell centers on the torus, a
/// latitude-longitude grid with area weights on the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    shape: GridShape,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GridShape {
    Torus { dim: usize, resolution: usize },
    Sphere { res_theta: usize, res_phi: usize },
}

impl GridDensity {
    /// Tabulate a density function on the torus grid and normalize it.
    pub fn torus_from_fn(
        dim: usize,
        resolution: usize,
        f: impl Fn(&[f64]) -> f64 + Sync,
    ) -> Result<GridDensity> {
        if dim == 0 || dim > 3 {
            return Err(Error::DimensionTooLarge { max: 3, got: dim });
        }
        let cells = resolution.pow(dim as u32);
        let values = map_indexed(cells, |flat| {
            let mut x = [0.0; 3];
            let mut rem = flat;
            for j in 0..dim {
                x[j] = (rem % resolution) as f64;
                x[j] = (x[j] + 0.5) / resolution as f64;
                rem /= resolution;
            }
            f(&x[..dim]).max(0.0)
        });
        GridDensity::normalized(GridShape::Torus { dim, resolution }, values)
    }

    /// Evaluate a fitted KDE on the torus grid.
    pub fn from_kde(kde: &PeriodicKde, resolution: usize) -> Result<GridDensity> {
        Self::torus_from_fn(kde.dim, resolution, |x| kde.evaluate(x))
    }

    /// Tabulate the exact target marginal `p_t` on the torus grid.
    pub fn from_target(target: &Target, t: f64, resolution: usize) -> Result<GridDensity> {
        let dim = target.manifold().dim();
        // Collect first so density errors surface instead of poisoning cells.
        let cells = resolution.pow(dim as u32);
        let values: Vec<f64> = (0..cells)
            .map(|flat| {
                let mut x = vec![0.0; dim];
                let mut rem = flat;
                for xj in x.iter_mut() {
                    *xj = ((rem % resolution) as f64 + 0.5) / resolution as f64;
                    rem /= resolution;
                }
                target.log_density_and_score(t, &x, None).map(f64::exp)
            })
            .collect::<Result<_>>()?;
        GridDensity::normalized(GridShape::Torus { dim, resolution }, values)
    }

    /// Binned density estimate of sphere samples on a latitude-longitude grid
    /// with per-cell area weights.
    pub fn sphere_histogram(
        samples: &[Point],
        res_theta: usize,
        res_phi: usize,
    ) -> Result<GridDensity> {
        if samples.is_empty() {
            return Err(Error::TooFewSamples { need: 1, got: 0 });
        }
        let shape = GridShape::Sphere { res_theta, res_phi };
        let mut counts = vec![0.0f64; res_theta * res_phi];
        for p in samples {
            let c = p.coords();
            let theta = c[2].clamp(-1.0, 1.0).acos();
            let phi = c[1].atan2(c[0]).rem_euclid(std::f64::consts::TAU);
            let ti = ((theta / std::f64::consts::PI) * res_theta as f64) as usize;
            let pi = ((phi / std::f64::consts::TAU) * res_phi as f64) as usize;
            counts[ti.min(res_theta - 1) * res_phi + pi.min(res_phi - 1)] += 1.0;
        }
        // Convert counts to densities w.r.t. area before normalizing.
        let weights = shape.weights();
        for (c, w) in counts.iter_mut().zip(&weights) {
            *c /= w.max(1e-300);
        }
        GridDensity::normalized(shape, counts)
    }

    fn normalized(shape: GridShape, mut values: Vec<f64>) -> Result<GridDensity> {
        let weights = shape.weights();
        let total: f64 = values.iter().zip(&weights).map(|(v, w)| v * w).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(
                "grid density has no positive mass".into(),
            ));
        }
        values.iter_mut().for_each(|v| *v /= total);
        Ok(GridDensity { shape, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Integral of the stored values (1 after normalization).
    pub fn total_mass(&self) -> f64 {
        self.values
            .iter()
            .zip(self.shape.weights())
            .map(|(v, w)| v * w)
            .sum()
    }
}

impl GridShape {
    fn weights(&self) -> Vec<f64> {
        match *self {
            GridShape::Torus { dim, resolution } => {
                let cells = resolution.pow(dim as u32);
                vec![1.0 / cells as f64; cells]
            }
            GridShape::Sphere { res_theta, res_phi } => {
                let dtheta = std::f64::consts::PI / res_theta as f64;
                let dphi = std::f64::consts::TAU / res_phi as f64;
                let mut w = Vec::with_capacity(res_theta * res_phi);
                for i in 0..res_theta {
                    let theta = (i as f64 + 0.5) * dtheta;
                    let area = theta.sin() * dtheta * dphi;
                    for _ in 0..res_phi {
                        w.push(area);
                    }
                }
                w
            }
        }
    }
}

/// TV between binned latitude-longitude histograms of two sphere sample
/// sets, used for distribution-level comparisons of sampler variants.
pub fn sphere_histogram_tv(
    a: &[Point],
    b: &[Point],
    res_theta: usize,
    res_phi: usize,
) -> Result<f64> {
    let pa = GridDensity::sphere_histogram(a, res_theta, res_phi)?;
    let pb = GridDensity::sphere_histogram(b, res_theta, res_phi)?;
    tv_distance(&pa, &pb)
}

/// Unhalved total variation `sum |p - q| * cell measure`, in [0, 2].
pub fn tv_distance(p: &GridDensity, q: &GridDensity) -> Result<f64> {
    if p.shape != q.shape {
        return Err(Error::GridMismatch);
    }
    let weights = p.shape.weights();
    Ok(p
        .values
        .iter()
        .zip(&q.values)
        .zip(&weights)
        .map(|((a, b), w)| (a - b).abs() * w)
        .sum())
}

/// Result of a TV comparison between sampler output and the exact marginal.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TvResult {
    pub tv_unhalved: f64,
    pub kde_bandwidth: f64,
    pub grid_resolution: usize,
}

/// Default grid resolution for the TV quadrature by dimension.
pub fn default_grid_resolution(dim: usize) -> usize {
    match dim {
        1 => 256,
        2 => 128,
        _ => 48,
    }
}

/// Fit a Scott-rule KDE to the samples and compare it on a grid against the
/// exact time-`t` marginal of `target`.
pub fn tv_vs_target(
    samples: &[Point],
    target: &Target,
    t: f64,
    grid_resolution: usize,
) -> Result<TvResult> {
    tv_vs_target_with_rule(samples, target, t, grid_resolution, BandwidthRule::Scott)
}

/// Same as [`tv_vs_target`] with an explicit bandwidth rule (used to measure
/// noise floors at a matched bandwidth).
pub fn tv_vs_target_with_rule(
    samples: &[Point],
    target: &Target,
    t: f64,
    grid_resolution: usize,
    rule: BandwidthRule,
) -> Result<TvResult> {
    let kde = PeriodicKde::fit(samples, rule)?;
    let estimated = GridDensity::from_kde(&kde, grid_resolution)?;
    let exact = GridDensity::from_target(target, t, grid_resolution)?;
    Ok(TvResult {
        tv_unhalved: tv_distance(&estimated, &exact)?,
        kde_bandwidth: kde.bandwidth(),
        grid_resolution,
    })
}

/// Ordinary least squares fit of `log_y` against `x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// OLS on `(x, log y)` pairs (callers drop zero-count entries before taking
/// logs). Needs at least 3 points with distinct x.
pub fn loglinear_fit(xs: &[f64], log_ys: &[f64]) -> Result<FitResult> {
    if xs.len() != log_ys.len() || xs.len() < 3 {
        return Err(Error::TooFewPoints { got: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = log_ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx < 1e-30 {
        return Err(Error::InvalidParameter(
            "fit abscissae must be distinct".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(log_ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = log_ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if syy < 1e-30 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heat_kernel::{wrapped_gaussian, KernelTolerance};
    use crate::sampler::{stream, stream_rng};
    use rand::Rng;

    fn uniform_torus_samples(n: usize, seed: u64) -> Vec<Point> {
        let m = Manifold::torus(1);
        let mut rng = stream_rng(seed, stream::AUX, 0);
        (0..n).map(|_| m.uniform_sample(&mut rng)).collect()
    }

    #[test]
    fn kde_of_a_single_atom_is_the_wrapped_kernel() {
        let samples = vec![Point::torus(vec![0.4]); 200];
        let kde = PeriodicKde::fit(&samples, BandwidthRule::Fixed(0.05)).unwrap();
        for x in [0.1, 0.35, 0.4, 0.62] {
            let expected = wrapped_gaussian(0.0025, x - 0.4, KernelTolerance::default())
                .unwrap()
                .value;
            assert!((kde.evaluate(&[x]) - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn kde_of_uniform_samples_is_near_one() {
        let samples = uniform_torus_samples(100_000, 1);
        let kde = PeriodicKde::fit(&samples, BandwidthRule::Scott).unwrap();
        for i in 0..64 {
            let x = (i as f64 + 0.5) / 64.0;
            let v = kde.evaluate(&[x]);
            assert!((v - 1.0).abs() < 0.05, "x={x}: {v}");
        }
    }

    #[test]
    fn kde_integrates_to_one_on_grid() {
        let samples = uniform_torus_samples(2_000, 2);
        let kde = PeriodicKde::fit(&samples, BandwidthRule::Scott).unwrap();
        let n = 512;
        let integral: f64 =
            (0..n).map(|i| kde.evaluate(&[(i as f64 + 0.5) / n as f64])).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-3);
    }

    #[test]
    fn kde_rejects_small_samples_and_high_dimension() {
        let samples = uniform_torus_samples(10, 3);
        assert!(matches!(
            PeriodicKde::fit(&samples, BandwidthRule::Scott),
            Err(Error::TooFewSamples { .. })
        ));
        let m = Manifold::torus(4);
        let mut rng = stream_rng(3, stream::AUX, 1);
        let samples: Vec<Point> = (0..200).map(|_| m.uniform_sample(&mut rng)).collect();
        assert!(matches!(
            PeriodicKde::fit(&samples, BandwidthRule::Scott),
            Err(Error::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn tv_of_identical_grids_is_zero() {
        let p = GridDensity::torus_from_fn(1, 128, |x| 1.0 + (std::f64::consts::TAU * x[0]).sin())
            .unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn tv_of_disjoint_supports_is_two() {
        let p = GridDensity::torus_from_fn(1, 128, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let q = GridDensity::torus_from_fn(1, 128, |x| if x[0] >= 0.5 { 1.0 } else { 0.0 }).unwrap();
        assert!((tv_distance(&p, &q).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn tv_uniform_vs_narrow_gaussian_matches_fine_oracle() {
        let tol = KernelTolerance::default();
        let tv_at = |res: usize| {
            let p = GridDensity::torus_from_fn(1, res, |_| 1.0).unwrap();
            let q = GridDensity::torus_from_fn(1, res, |x| {
                wrapped_gaussian(0.0025, x[0] - 0.5, tol).unwrap().value
            })
            .unwrap();
            tv_distance(&p, &q).unwrap()
        };
        let coarse = tv_at(1024);
        let oracle = tv_at(16384);
        assert!((coarse - oracle).abs() < 1e-3, "{coarse} vs {oracle}");
        assert!((0.0..=2.0).contains(&coarse));
    }

    #[test]
    fn tv_is_a_metric_on_grids() {
        let mut rng = stream_rng(4, stream::AUX, 2);
        for _ in 0..20 {
            let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            let p =
                GridDensity::torus_from_fn(1, 64, |x| 0.2 + (x[0] - a).abs()).unwrap();
            let q =
                GridDensity::torus_from_fn(1, 64, |x| 0.2 + (x[0] - b) * (x[0] - b)).unwrap();
            let r = GridDensity::torus_from_fn(1, 64, |x| 0.2 + (x[0] * c).sin().abs()).unwrap();
            let pq = tv_distance(&p, &q).unwrap();
            let qp = tv_distance(&q, &p).unwrap();
            assert_eq!(pq, qp);
            let qr = tv_distance(&q, &r).unwrap();
            let pr = tv_distance(&p, &r).unwrap();
            assert!(pr <= pq + qr + 1e-12);
        }
    }

    #[test]
    fn tv_rejects_mismatched_grids() {
        let p = GridDensity::torus_from_fn(1, 64, |_| 1.0).unwrap();
        let q = GridDensity::torus_from_fn(1, 128, |_| 1.0).unwrap();
        assert!(matches!(tv_distance(&p, &q), Err(Error::GridMismatch)));
    }

    #[test]
    fn grid_density_normalizes_to_unit_mass() {
        let p = GridDensity::torus_from_fn(2, 64, |x| (x[0] + x[1]).exp()).unwrap();
        assert!((p.total_mass() - 1.0).abs() < 1e-6);
        let m = Manifold::sphere(2);
        let mut rng = stream_rng(5, stream::AUX, 3);
        let samples: Vec<Point> = (0..5_000).map(|_| m.uniform_sample(&mut rng)).collect();
        let h = GridDensity::sphere_histogram(&samples, 16, 32).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tiny_sample_tv_still_lands_in_range() {
        let samples = uniform_torus_samples(100, 6);
        let target = Target::default_torus_gmm(1);
        let r = tv_vs_target(&samples, &target, 0.01, 256).unwrap();
        assert!((0.0..=2.0).contains(&r.tv_unhalved));
    }

    #[test]
    fn uniform_samples_vs_concentrated_target_have_large_tv() {
        let samples = uniform_torus_samples(20_000, 7);
        let target = Target::TorusGmm(
            crate::targets::TorusGmm::new(vec![1.0], vec![vec![0.5]], vec![0.02]).unwrap(),
        );
        let r = tv_vs_target(&samples, &target, 0.0, 256).unwrap();
        assert!(r.tv_unhalved > 1.5, "tv = {}", r.tv_unhalved);
    }

    #[test]
    fn loglinear_fit_recovers_exact_exponential() {
        let xs: Vec<f64> = (1..=8).map(|i| i as f64 * 0.5).collect();
        let log_ys: Vec<f64> = xs.iter().map(|x| -3.0 * x + 0.7).collect();
        let fit = loglinear_fit(&xs, &log_ys).unwrap();
        assert!((fit.slope + 3.0).abs() < 1e-10);
        assert!((fit.intercept - 0.7).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn loglinear_fit_of_constant_has_zero_slope() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let log_ys = [0.4, 0.4, 0.4, 0.4];
        let fit = loglinear_fit(&xs, &log_ys).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn loglinear_fit_is_invariant_to_positive_scaling() {
        let xs = [1.0, 2.0, 3.0, 5.0, 8.0];
        let log_ys = [0.9, 0.1, -0.4, -2.0, -3.3];
        let base = loglinear_fit(&xs, &log_ys).unwrap();
        let scaled: Vec<f64> = log_ys.iter().map(|y| y + 2.5f64.ln()).collect();
        let shifted = loglinear_fit(&xs, &scaled).unwrap();
        assert!((base.slope - shifted.slope).abs() < 1e-12);
        assert!((base.r_squared - shifted.r_squared).abs() < 1e-12);
        assert!((shifted.intercept - base.intercept - 2.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loglinear_fit_rejects_degenerate_input() {
        assert!(loglinear_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(loglinear_fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }
}
