//! Exact heat kernels and their log-gradients for the `(1/2) Laplacian` flow.
//!
//! Every kernel here solves `d/dt H = (1/2) Lap H`, matching the driftless
//! forward process `dX = U o dW`. On the torus the kernel is the wrapped
//! Gaussian theta series with unit period; on the unit 2-sphere it is the
//! spectral Legendre series. The pushforward Gaussian `Phi` is the drifted
//! Euclidean density mapped through `exp_x`, divided by the Jacobian of the
//! exponential map; it approximates the exact kernel to first order in t.
//!
//! Classical Gaussian bounds (the Harnack-type lower bound and the Li-Yau
//! upper bound) are stated in the literature for the `d/dt = Lap` convention
//! ("doubled time" here); [`check_kernel_bounds`] rescales `t -> t/2` at the
//! comparison boundary so one convention is used everywhere else.

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, TangentVec};
use crate::quadrature::gauss_legendre;

/// Sphere kernel floor: below this the spectral series needs more than a
/// thousand terms and evaluation is delegated to the pushforward Gaussian.
pub const SPHERE_T_MIN: f64 = 1e-4;

/// Variance threshold between the position-space theta series and its
/// Poisson-dual frequency series in the fast evaluation path.
const THETA_SPLIT: f64 = 0.15;

/// Requested absolute truncation tolerance for a kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTolerance {
    pub abs_tol: f64,
}

impl Default for KernelTolerance {
    fn default() -> Self {
        KernelTolerance { abs_tol: 1e-10 }
    }
}

/// A kernel value with the number of series terms used and a certified bound
/// on the truncated remainder.
#[derive(Debug, Clone, Copy)]
pub struct KernelEval {
    pub value: f64,
    pub truncation_terms: usize,
    pub tail_bound: f64,
}

/// Wrapped Gaussian kernel of variance `v` on the unit circle,
/// `k(v; delta) = sum_n (2 pi v)^{-1/2} exp(-(delta+n)^2 / (2v))`,
/// truncated symmetrically with a certified Gaussian tail below `tol`.
pub fn wrapped_gaussian(v: f64, delta: f64, tol: KernelTolerance) -> Result<KernelEval> {
    if v <= 0.0 {
        return Err(Error::NonPositiveTime { t: v });
    }
    // The kernel is even in delta; evaluating at |delta| makes the symmetry
    // exact rather than up to summation order.
    let delta = crate::manifold::wrap_half(delta).abs();
    let pref = 1.0 / (std::f64::consts::TAU * v).sqrt();
    let mut n_wrap = (1.0 + 6.0 * v.sqrt()).ceil() as i64;
    loop {
        let edge = n_wrap as f64 + 0.5;
        let ratio = (-(2.0 * n_wrap as f64 + 1.0) / (2.0 * v)).exp();
        let tail = 2.0 * pref * (-edge * edge / (2.0 * v)).exp() / (1.0 - ratio);
        if tail <= tol.abs_tol {
            let mut value = 0.0;
            for n in -n_wrap..=n_wrap {
                let z = delta + n as f64;
                value += pref * (-z * z / (2.0 * v)).exp();
            }
            return Ok(KernelEval {
                value,
                truncation_terms: (2 * n_wrap + 1) as usize,
                tail_bound: tail,
            });
        }
        n_wrap += 2;
    }
}

/// Fast fixed-truncation evaluation of `(ln k(v; delta), d/d delta ln k)`.
///
/// For `v < 0.15` the position series with `|n| <= 3` is summed relative to
/// the dominant image, so the log stays finite even when the density itself
/// underflows. For larger `v` the frequency series
/// `k = 1 + 2 sum_m exp(-2 pi^2 m^2 v) cos(2 pi m delta)` converges in four
/// terms. Both branches are accurate to ~1e-12 relative over their range.
pub(crate) fn theta_log_and_dlog(v: f64, delta: f64) -> (f64, f64) {
    ThetaPrep::new(v).log_and_dlog(delta)
}

/// Per-variance precomputation for repeated theta evaluations (one mixture
/// component evaluated at many coordinates shares a prep).
#[derive(Debug, Clone, Copy)]
pub(crate) struct ThetaPrep {
    inv_v: f64,
    /// Position branch: `-0.5 ln(2 pi v)`; unused in the frequency branch.
    log_pref: f64,
    freq: bool,
    /// Frequency branch: `exp(-2 pi^2 m^2 v)` for m = 1..4.
    q: [f64; 4],
}

impl ThetaPrep {
    pub(crate) fn new(v: f64) -> ThetaPrep {
        debug_assert!(v > 0.0);
        if v < THETA_SPLIT {
            ThetaPrep {
                inv_v: 1.0 / v,
                log_pref: -0.5 * (std::f64::consts::TAU * v).ln(),
                freq: false,
                q: [0.0; 4],
            }
        } else {
            let q1 = (-2.0 * std::f64::consts::PI * std::f64::consts::PI * v).exp();
            ThetaPrep {
                inv_v: 1.0 / v,
                log_pref: 0.0,
                freq: true,
                q: [q1, q1.powi(4), q1.powi(9), q1.powi(16)],
            }
        }
    }

    /// `(ln k(v; delta), d/d delta ln k)`; exactly even/odd in `delta`.
    #[inline]
    pub(crate) fn log_and_dlog(&self, delta: f64) -> (f64, f64) {
        let (lin, sum, dlog) = self.parts(delta);
        (lin + sum.ln(), dlog)
    }

    /// Decomposed evaluation `ln k = lin + ln(sum)` with `dlog = d ln k / d
    /// delta`, letting a product of coordinates share one final logarithm.
    #[inline]
    pub(crate) fn parts(&self, delta: f64) -> (f64, f64, f64) {
        let wrapped = crate::manifold::wrap_half(delta);
        let sign = if wrapped < 0.0 { -1.0 } else { 1.0 };
        let a = wrapped.abs();
        if self.freq {
            // k = 1 + 2 sum_m q_m cos(2 pi m delta); cos/sin ladders by the
            // Chebyshev recurrence from a single sin_cos call.
            let (s1, c1) = (std::f64::consts::TAU * a).sin_cos();
            let (mut cm_prev, mut sm_prev) = (1.0, 0.0);
            let (mut cm, mut sm) = (c1, s1);
            let mut k = 1.0;
            let mut dk = 0.0;
            for m in 1..=4usize {
                let qm = self.q[m - 1];
                if qm > 1e-18 {
                    k += 2.0 * qm * cm;
                    dk -= 2.0 * std::f64::consts::TAU * m as f64 * qm * sm;
                }
                let c_next = 2.0 * c1 * cm - cm_prev;
                let s_next = 2.0 * c1 * sm - sm_prev;
                cm_prev = cm;
                sm_prev = sm;
                cm = c_next;
                sm = s_next;
            }
            (0.0, k, sign * dk / k)
        } else {
            // Ratios to the dominant image: r_n = exp(-(n^2 + 2 n a)/(2v)),
            // all <= 1 for |a| <= 1/2; exponents below -45 are dropped.
            let half_inv = 0.5 * self.inv_v;
            let mut sum = 0.0;
            let mut dsum = 0.0;
            for n in -3i32..=3 {
                let nf = n as f64;
                let e = -(nf * nf + 2.0 * nf * a) * half_inv;
                if e > -45.0 {
                    let r = e.exp();
                    sum += r;
                    dsum -= (a + nf) * self.inv_v * r;
                }
            }
            (
                self.log_pref - a * a * half_inv,
                sum,
                sign * dsum / sum,
            )
        }
    }
}

/// Heat kernel on the flat torus `T^d` at time `t`: the product of
/// per-coordinate wrapped Gaussians of variance `t`.
pub fn hk_torus(t: f64, x: &Point, y: &Point, tol: KernelTolerance) -> Result<KernelEval> {
    if t <= 0.0 {
        return Err(Error::NonPositiveTime { t });
    }
    let d = x.manifold().dim();
    let mut axis_tol = KernelTolerance {
        abs_tol: tol.abs_tol / (4.0 * d as f64),
    };
    loop {
        let mut value = 1.0;
        let mut upper = 1.0;
        let mut terms = 0;
        for (a, b) in x.coords().iter().zip(y.coords()) {
            let k = wrapped_gaussian(t, b - a, axis_tol)?;
            value *= k.value;
            upper *= k.value + k.tail_bound;
            terms += k.truncation_terms;
        }
        let tail = upper - value;
        if tail <= tol.abs_tol {
            return Ok(KernelEval {
                value,
                truncation_terms: terms,
                tail_bound: tail,
            });
        }
        axis_tol.abs_tol *= 0.1;
    }
}

/// Result of one spectral-series evaluation on the sphere.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SphereSeries {
    pub value: f64,
    pub dvalue_dc: f64,
    pub terms: usize,
    pub tail_bound: f64,
    /// Sum of |coefficients|; `value` below ~1e-10 of this is rounding noise.
    pub abs_coeff_sum: f64,
}

/// Certified truncation level for the sphere series at time `t`.
fn sphere_series_level(t: f64, tol: f64) -> (usize, f64) {
    let mut level = 16usize.max((10.0 / t.sqrt()).ceil() as usize);
    loop {
        let tail = sphere_tail_bound(level, t);
        if tail <= tol || level > 100_000 {
            return (level, tail);
        }
        level *= 2;
    }
}

/// `sum_{l > L} (2l+1)/(4 pi) exp(-l(l+1) t / 2)`, bounded by a geometric
/// comparison starting at l = L+1.
fn sphere_tail_bound(level: usize, t: f64) -> f64 {
    let l1 = (level + 1) as f64;
    let head = (-(l1 * (l1 + 1.0)) * t / 2.0).exp();
    let q = (-(2.0 * l1 + 1.0) * t / 2.0).exp();
    let geom = (2.0 * l1 + 1.0) / (1.0 - q) + 2.0 * q / ((1.0 - q) * (1.0 - q));
    head * geom / (4.0 * std::f64::consts::PI)
}

/// Clenshaw summation of `sum a_l P_l(c)` and `sum a_l P_l'(c)` where
/// `a_l = (2l+1)/(4 pi) exp(-l(l+1) t / 2)`. The derivative series uses the
/// Gegenbauer(3/2) recurrence satisfied by `P_l' = C_{l-1}^{3/2}`.
pub(crate) fn sphere_series(t: f64, c: f64, tol: KernelTolerance) -> Result<SphereSeries> {
    if t <= 0.0 {
        return Err(Error::NonPositiveTime { t });
    }
    if t < SPHERE_T_MIN {
        return Err(Error::SphereTimeTooSmall {
            t,
            t_min: SPHERE_T_MIN,
        });
    }
    let c = c.clamp(-1.0, 1.0);
    let (level, tail_bound) = sphere_series_level(t, tol.abs_tol);

    // Coefficients by downward-stable recurrence on exp(-l(l+1)t/2).
    let four_pi = 4.0 * std::f64::consts::PI;
    let decay = (-t).exp();
    let mut coeffs = Vec::with_capacity(level + 1);
    let mut e = 1.0; // exp(-l(l+1) t / 2)
    let mut step = decay; // exp(-(l+1) t), multiplies e when l -> l+1
    let mut abs_coeff_sum = 0.0;
    for l in 0..=level {
        let a = (2.0 * l as f64 + 1.0) / four_pi * e;
        coeffs.push(a);
        abs_coeff_sum += a;
        e *= step;
        step *= decay;
    }

    // Value: Clenshaw on P_{l+1} = (2l+1)/(l+1) c P_l - l/(l+1) P_{l-1}.
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for l in (0..=level).rev() {
        let lf = l as f64;
        let alpha = (2.0 * lf + 1.0) / (lf + 1.0) * c;
        let beta_next = -(lf + 1.0) / (lf + 2.0);
        let b0 = coeffs[l] + alpha * b1 + beta_next * b2;
        b2 = b1;
        b1 = b0;
    }
    let value = b1;

    // Derivative: Clenshaw on C_{m+1} = (2m+3)/(m+1) c C_m - (m+2)/(m+1) C_{m-1}.
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for m in (0..level).rev() {
        let mf = m as f64;
        let alpha = (2.0 * mf + 3.0) / (mf + 1.0) * c;
        let beta_next = -(mf + 3.0) / (mf + 2.0);
        let b0 = coeffs[m + 1] + alpha * b1 + beta_next * b2;
        b2 = b1;
        b1 = b0;
    }
    let dvalue_dc = b1;

    Ok(SphereSeries {
        value,
        dvalue_dc,
        terms: level + 1,
        tail_bound,
        abs_coeff_sum,
    })
}

/// Heat kernel on the unit 2-sphere as a function of `c = <x, y>`, by the
/// spectral series `H(t,c) = sum_l (2l+1)/(4 pi) exp(-l(l+1)t/2) P_l(c)`.
pub fn hk_sphere(t: f64, c: f64, tol: KernelTolerance) -> Result<KernelEval> {
    let s = sphere_series(t, c, tol)?;
    Ok(KernelEval {
        value: s.value,
        truncation_terms: s.terms,
        tail_bound: s.tail_bound,
    })
}

/// `(ln H(t,c), d/dc ln H)` on the sphere, falling back to the pushforward
/// Gaussian asymptotic once the spectral value drops below the double
/// precision rounding floor of the series (deep in the small-t tail).
pub(crate) fn sphere_log_and_dlog(t: f64, c: f64) -> Result<(f64, f64)> {
    let s = sphere_series(t, c, KernelTolerance::default())?;
    let noise_floor = 1e-10 * s.abs_coeff_sum;
    if s.value > noise_floor {
        Ok((s.value.ln(), s.dvalue_dc / s.value))
    } else {
        let c = c.clamp(-1.0, 1.0);
        let rho = c.acos();
        let sin_rho = rho.sin().max(1e-12);
        let log_phi = -(std::f64::consts::TAU * t).ln() - rho * rho / (2.0 * t)
            + (rho / sin_rho).ln();
        // Gradient of the Gaussian exponent only; the Jacobian correction is
        // singular at the cut locus and negligible against rho/t here.
        let dlog_dc = rho / (t * sin_rho);
        Ok((log_phi, dlog_dc))
    }
}

/// Riemannian gradient of `y -> ln H(t, x, y)`, returned as a tangent vector
/// at `y`.
pub fn hk_grad_log(
    manifold: Manifold,
    t: f64,
    x: &Point,
    y: &Point,
    _tol: KernelTolerance,
) -> Result<TangentVec> {
    if t <= 0.0 {
        return Err(Error::NonPositiveTime { t });
    }
    match manifold {
        Manifold::Torus { .. } => {
            let components = x
                .coords()
                .iter()
                .zip(y.coords())
                .map(|(a, b)| theta_log_and_dlog(t, b - a).1)
                .collect();
            Ok(TangentVec::from_raw(y.clone(), components))
        }
        Manifold::Sphere { dim } => {
            if dim != 2 {
                return Err(Error::InvalidParameter(
                    "exact sphere kernels are implemented for S^2 only".into(),
                ));
            }
            let c = crate::manifold::dot(x.coords(), y.coords()).clamp(-1.0, 1.0);
            let (_, dlog_dc) = sphere_log_and_dlog(t, c)?;
            // Gradient of c = <x, y> in y is the projection of x onto T_y.
            let components = x
                .coords()
                .iter()
                .zip(y.coords())
                .map(|(xi, yi)| dlog_dc * (xi - c * yi))
                .collect();
            Ok(TangentVec::from_raw(y.clone(), components))
        }
    }
}

/// Density at `y` of the push-forward by `exp_x` of the drifted Euclidean
/// Gaussian `N(drift * t, t I)` on `T_x M`, with respect to the volume
/// measure: `phi_t(log_x y; drift) / J(x, log_x y)`.
pub fn pushforward_gaussian(
    manifold: Manifold,
    t: f64,
    x: &Point,
    y: &Point,
    drift: &TangentVec,
) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::NonPositiveTime { t });
    }
    let rho = manifold.distance(x, y);
    if rho >= manifold.injectivity_radius() {
        return Err(Error::OutsideInjectivityRadius { rho });
    }
    let u = manifold.log_map(x, y)?;
    let d = manifold.dim() as f64;
    let sq: f64 = u
        .components()
        .iter()
        .zip(drift.components())
        .map(|(ui, bi)| {
            let z = ui - bi * t;
            z * z
        })
        .sum();
    let phi = (std::f64::consts::TAU * t).powf(-d / 2.0) * (-sq / (2.0 * t)).exp();
    Ok(phi / manifold.jacobian_det(x, &u))
}

/// One row of the kernel-bound report.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundCheckRow {
    pub t: f64,
    pub rho: f64,
    pub kernel: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub ok: bool,
}

/// Harnack-type lower bound in the doubled-time convention `s` (so callers pass
/// `s = t/2` for our half-Laplacian kernels):
/// `(4 pi s)^{-d/2} exp(-rho^2/(4s) (1 + Ks/3) - d K s / 4)`.
pub fn harnack_lower_bound(d: usize, curvature_bound: f64, s: f64, rho: f64) -> f64 {
    let df = d as f64;
    let k = curvature_bound;
    (4.0 * std::f64::consts::PI * s).powf(-df / 2.0)
        * (-(rho * rho) / (4.0 * s) * (1.0 + k * s / 3.0) - df * k * s / 4.0).exp()
}

/// Li-Yau upper bound in the doubled-time convention, with free constants
/// fixed at `delta_Sch = 1`, `alpha = 2`:
/// `2^{2d} e^3 (V_x(sqrt s) V_y(sqrt s))^{-1/2} exp(-rho^2/(5s) + 2 d K s)`,
/// with certified lower estimates of the ball volumes.
pub fn li_yau_upper_bound(manifold: Manifold, s: f64, rho: f64) -> f64 {
    let d = manifold.dim() as f64;
    let k = manifold.curvature_bound();
    let c = 2.0f64.powf(2.0 * d) * 3.0f64.exp();
    let vol = ball_volume_lower(manifold, s.sqrt());
    c / vol * (-(rho * rho) / (5.0 * s) + 2.0 * d * k * s).exp()
}

/// Lower bound on the volume of a geodesic ball of radius `r` (exact within
/// the injectivity radius, clamped beyond it).
fn ball_volume_lower(manifold: Manifold, r: f64) -> f64 {
    match manifold {
        Manifold::Torus { dim } => {
            let r = r.min(0.5);
            euclidean_ball_volume(dim, r)
        }
        Manifold::Sphere { dim } => {
            assert_eq!(dim, 2);
            let r = r.min(std::f64::consts::PI);
            std::f64::consts::TAU * (1.0 - r.cos())
        }
    }
}

fn euclidean_ball_volume(d: usize, r: f64) -> f64 {
    // pi^{d/2} / Gamma(d/2 + 1) * r^d, with Gamma at integer/half-integer
    // arguments computed by the recurrence from Gamma(1/2) and Gamma(1).
    let mut gamma = if d % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut z = if d % 2 == 0 { 1.0 } else { 0.5 };
    while (z - (d as f64 / 2.0 + 1.0)).abs() > 1e-9 {
        gamma *= z;
        z += 1.0;
    }
    std::f64::consts::PI.powf(d as f64 / 2.0) / gamma * r.powi(d as i32)
}

/// Check the exact kernels against the Gaussian lower and upper bounds at the
/// given `(t, x, y)` samples. Violations are reported, not thrown.
pub fn check_kernel_bounds(
    manifold: Manifold,
    samples: &[(f64, Point, Point)],
    tol: KernelTolerance,
) -> Result<Vec<BoundCheckRow>> {
    let mut rows = Vec::with_capacity(samples.len());
    for (t, x, y) in samples {
        let rho = manifold.distance(x, y);
        let kernel = match manifold {
            Manifold::Torus { .. } => hk_torus(*t, x, y, tol)?.value,
            Manifold::Sphere { .. } => {
                let c = crate::manifold::dot(x.coords(), y.coords());
                hk_sphere(*t, c, tol)?.value
            }
        };
        // The classical bounds are stated for d/dt = Lap; our kernels solve
        // the half-Laplacian equation, so compare at s = t/2.
        let s = t / 2.0;
        let lower = harnack_lower_bound(manifold.dim(), manifold.curvature_bound(), s, rho);
        let upper = li_yau_upper_bound(manifold, s, rho);
        let ok = kernel >= lower * (1.0 - 1e-9) && kernel <= upper * (1.0 + 1e-9);
        rows.push(BoundCheckRow {
            t: *t,
            rho,
            kernel,
            lower_bound: lower,
            upper_bound: upper,
            ok,
        });
    }
    Ok(rows)
}

/// |integral of H(t, x, .) - 1| on the torus, by the midpoint rule with
/// `grid_n` cells per axis (values cached per axis; the kernel is a product).
pub fn torus_normalization_residual(dim: usize, t: f64, grid_n: usize) -> Result<f64> {
    let tol = KernelTolerance::default();
    let x0 = 0.3;
    let axis: Vec<f64> = (0..grid_n)
        .map(|i| {
            let y = (i as f64 + 0.5) / grid_n as f64;
            wrapped_gaussian(t, y - x0, tol).map(|k| k.value)
        })
        .collect::<Result<_>>()?;
    let cell = 1.0 / grid_n as f64;
    let integral = match dim {
        1 => axis.iter().sum::<f64>() * cell,
        2 => {
            let mut acc = 0.0;
            for a in &axis {
                for b in &axis {
                    acc += a * b;
                }
            }
            acc * cell * cell
        }
        _ => {
            return Err(Error::InvalidParameter(
                "normalization grid supported for d <= 2".into(),
            ))
        }
    };
    Ok((integral - 1.0).abs())
}

/// |integral of H(t, x, .) - 1| on the unit sphere via Gauss-Legendre in
/// `c = cos(angle)`: the integral is `2 pi * int_{-1}^{1} H(t, c) dc`.
pub fn sphere_normalization_residual(t: f64, gl_points: usize) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(gl_points);
    let tol = KernelTolerance::default();
    let mut acc = 0.0;
    for (c, w) in nodes.iter().zip(&weights) {
        acc += w * hk_sphere(t, *c, tol)?.value;
    }
    Ok((std::f64::consts::TAU * acc - 1.0).abs())
}

/// |integral H(s,x,z) H(t,z,y) dz - H(s+t,x,y)| on T^1 (midpoint rule).
pub fn torus_semigroup_residual(s: f64, t: f64, delta: f64, grid_n: usize) -> Result<f64> {
    let tol = KernelTolerance::default();
    let cell = 1.0 / grid_n as f64;
    let mut acc = 0.0;
    for i in 0..grid_n {
        let z = (i as f64 + 0.5) * cell;
        let a = wrapped_gaussian(s, z, tol)?.value;
        let b = wrapped_gaussian(t, delta - z, tol)?.value;
        acc += a * b;
    }
    acc *= cell;
    let direct = wrapped_gaussian(s + t, delta, tol)?.value;
    Ok((acc - direct).abs())
}

/// |integral H(s,x,z) H(t,z,y) dA(z) - H(s+t,x,y)| on S^2 for points at
/// geodesic angle `gamma`, via Gauss-Legendre in the colatitude cosine and a
/// periodic trapezoid rule in azimuth.
pub fn sphere_semigroup_residual(
    s: f64,
    t: f64,
    gamma: f64,
    gl_points: usize,
    azimuth_points: usize,
) -> Result<f64> {
    let tol = KernelTolerance::default();
    let (nodes, weights) = gauss_legendre(gl_points);
    let (sg, cg) = gamma.sin_cos();
    let dphi = std::f64::consts::TAU / azimuth_points as f64;
    let mut acc = 0.0;
    for (u, w) in nodes.iter().zip(&weights) {
        // u = cos(angle from x); z sits at azimuth phi around the x axis.
        let su = (1.0 - u * u).max(0.0).sqrt();
        let hs = hk_sphere(s, *u, tol)?.value;
        let mut ring = 0.0;
        for j in 0..azimuth_points {
            let phi = j as f64 * dphi;
            let c_zy = u * cg + su * sg * phi.cos();
            ring += hk_sphere(t, c_zy, tol)?.value;
        }
        acc += w * hs * ring * dphi;
    }
    let direct = hk_sphere(s + t, cg, tol)?.value;
    Ok((acc - direct).abs())
}
