//! Target distributions with closed-form heat-flow evolution and exact scores.
//!
//! The torus target is a warped Gaussian mixture: the push-forward of a
//! Euclidean mixture through the covering map, so heat flow for time `t`
//! simply adds `t` to each component variance. The sphere target is a mixture
//! of heat kernels `H(s_i, mu_i, .)`, whose evolution widens `s_i` to
//! `s_i + t`; unlike von Mises-Fisher components this stays in the same
//! family for every `t`, which is what makes the scores exact.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heat_kernel::{sphere_log_and_dlog, sphere_series, KernelTolerance, ThetaPrep,
    SPHERE_T_MIN};
use crate::manifold::{dot, Manifold, Point, TangentVec};

/// Warped Gaussian mixture on `T^d` (isotropic covering-space components).
#[derive(Debug, Clone)]
pub struct TorusGmm {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    sigmas: Vec<f64>,
    dim: usize,
}

impl TorusGmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sigmas: Vec<f64>) -> Result<TorusGmm> {
        if weights.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if weights.len() != means.len() || weights.len() != sigmas.len() {
            return Err(Error::InvalidParameter(
                "weights, means, and sigmas must have equal length".into(),
            ));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::InvalidParameter(
                "mixture means must share a positive dimension".into(),
            ));
        }
        if sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("sigmas must be positive".into()));
        }
        let weights = normalize_weights(weights)?;
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let means = means
            .into_iter()
            .map(|m| m.into_iter().map(|c| c.rem_euclid(1.0)).collect())
            .collect();
        Ok(TorusGmm {
            weights,
            log_weights,
            means,
            sigmas,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Mixture of sphere heat kernels `sum_i w_i H(s_i, mu_i, .)` on `S^2`.
#[derive(Debug, Clone)]
pub struct SphereHkMixture {
    weights: Vec<f64>,
    centers: Vec<Point>,
    widths: Vec<f64>,
    /// Per-component inverse-CDF table of the geodesic radius under
    /// `H(s_i, mu_i, .)`, used for exact-in-distribution sampling.
    radial_tables: Vec<RadialTable>,
}

impl SphereHkMixture {
    pub fn new(weights: Vec<f64>, centers: Vec<Point>, widths: Vec<f64>) -> Result<SphereHkMixture> {
        if weights.is_empty() {
            return Err(Error::EmptyMixture);
        }
        if weights.len() != centers.len() || weights.len() != widths.len() {
            return Err(Error::InvalidParameter(
                "weights, centers, and widths must have equal length".into(),
            ));
        }
        if centers
            .iter()
            .any(|c| c.manifold() != Manifold::sphere(2))
        {
            return Err(Error::InvalidParameter(
                "sphere mixture centers must lie on S^2".into(),
            ));
        }
        if widths.iter().any(|w| *w < SPHERE_T_MIN) {
            return Err(Error::InvalidParameter(format!(
                "sphere mixture widths must be >= {SPHERE_T_MIN}"
            )));
        }
        let weights = normalize_weights(weights)?;
        let radial_tables = widths.iter().map(|w| RadialTable::build(*w)).collect::<Result<_>>()?;
        Ok(SphereHkMixture {
            weights,
            centers,
            widths,
            radial_tables,
        })
    }
}

fn normalize_weights(weights: Vec<f64>) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidParameter("weights must be positive".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "weights must sum to 1 (got {sum})"
        )));
    }
    Ok(weights.into_iter().map(|w| w / sum).collect())
}

/// Deterministic additive score perturbation with `|eps| <= amplitude`,
/// modeling a known, reproducible estimation error.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ScorePerturbation {
    #[default]
    None,
    Deterministic { amplitude: f64, frequency: u32 },
}

impl ScorePerturbation {
    pub fn amplitude(&self) -> f64 {
        match self {
            ScorePerturbation::None => 0.0,
            ScorePerturbation::Deterministic { amplitude, .. } => *amplitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ScorePerturbation::Deterministic { amplitude, .. } = self {
            if *amplitude < 0.0 {
                return Err(Error::InvalidParameter(
                    "perturbation amplitude must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Tangent components of the perturbation field at `x` (coordinates as in
    /// `TangentVec`). On the torus this is
    /// `amplitude * sin(2 pi * frequency * x_1) * e_1`; on the sphere the
    /// analogous band-limited field along the first canonical frame column,
    /// modulated by the azimuth angle.
    pub(crate) fn add_field(&self, manifold: Manifold, x: &[f64], out: &mut [f64]) {
        let ScorePerturbation::Deterministic {
            amplitude,
            frequency,
        } = self
        else {
            return;
        };
        match manifold {
            Manifold::Torus { .. } => {
                out[0] += amplitude * (std::f64::consts::TAU * *frequency as f64 * x[0]).sin();
            }
            Manifold::Sphere { .. } => {
                let point = Point::from_raw(manifold, x.to_vec());
                let frame = manifold.canonical_frame(&point);
                let azimuth = x[1].atan2(x[0]);
                let a = amplitude * (*frequency as f64 * azimuth).sin();
                for (o, c) in out.iter_mut().zip(&frame.columns()[0]) {
                    *o += a * c;
                }
            }
        }
    }
}

/// A target distribution `p_0` whose time-`t` marginals and scores are exact.
#[derive(Debug, Clone)]
pub enum Target {
    TorusGmm(TorusGmm),
    SphereHkMixture(SphereHkMixture),
    /// The stationary uniform distribution; its score vanishes identically,
    /// which is the driftless ("zero score") reference case.
    Uniform(Manifold),
}

impl Target {
    pub fn manifold(&self) -> Manifold {
        match self {
            Target::TorusGmm(g) => Manifold::torus(g.dim),
            Target::SphereHkMixture(_) => Manifold::sphere(2),
            Target::Uniform(m) => *m,
        }
    }

    /// Default experiment mixture on `T^d`: three components with weights
    /// (0.5, 0.3, 0.2), means on the diagonal at 0.2, 0.5, 0.8 (pairwise
    /// distance >= 0.3 per axis), and covering-space sigma 0.05.
    pub fn default_torus_gmm(dim: usize) -> Target {
        let means = [0.2, 0.5, 0.8]
            .iter()
            .map(|c| vec![*c; dim])
            .collect();
        Target::TorusGmm(
            TorusGmm::new(vec![0.5, 0.3, 0.2], means, vec![0.05; 3]).expect("valid default"),
        )
    }

    /// Default sphere mixture: weights (0.5, 0.3, 0.2), well-separated
    /// centers, width 0.05 per component.
    pub fn default_sphere_mixture() -> Target {
        let centers = vec![
            Point::sphere(vec![1.0, 0.0, 0.0]).unwrap(),
            Point::sphere(vec![-0.5, 0.75f64.sqrt(), 0.0]).unwrap(),
            Point::sphere(vec![0.0, 0.0, 1.0]).unwrap(),
        ];
        Target::SphereHkMixture(
            SphereHkMixture::new(vec![0.5, 0.3, 0.2], centers, vec![0.05; 3])
                .expect("valid default"),
        )
    }

    /// Density of `p_t` with respect to the volume measure.
    pub fn density_t(&self, t: f64, x: &Point) -> Result<f64> {
        Ok(self.log_density_and_score(t, x.coords(), None)?.exp())
    }

    /// Exact score `grad log p_t` as a tangent vector at `x`.
    pub fn score_t(&self, t: f64, x: &Point) -> Result<TangentVec> {
        let mut out = vec![0.0; self.manifold().ambient_len()];
        self.log_density_and_score(t, x.coords(), Some(&mut out))?;
        Ok(TangentVec::from_raw(x.clone(), out))
    }

    /// `score_t` plus the deterministic perturbation field.
    pub fn perturbed_score(
        &self,
        perturbation: &ScorePerturbation,
        t: f64,
        x: &Point,
    ) -> Result<TangentVec> {
        let mut out = vec![0.0; self.manifold().ambient_len()];
        self.log_density_and_score(t, x.coords(), Some(&mut out))?;
        perturbation.add_field(self.manifold(), x.coords(), &mut out);
        Ok(TangentVec::from_raw(x.clone(), out))
    }

    /// Posterior component responsibilities at `(t, x)`.
    pub fn responsibilities(&self, t: f64, x: &Point) -> Result<Vec<f64>> {
        match self {
            Target::Uniform(_) => Ok(vec![1.0]),
            Target::TorusGmm(g) => {
                let logs = g.component_logs(t, x.coords(), None)?;
                Ok(softmax(&logs))
            }
            Target::SphereHkMixture(m) => {
                let logs = m.component_logs(t, x.coords(), None)?;
                Ok(softmax(&logs))
            }
        }
    }

    /// Core evaluation: returns `ln p_t(x)` and, when requested, writes the
    /// score components into `score_out`.
    pub(crate) fn log_density_and_score(
        &self,
        t: f64,
        x: &[f64],
        score_out: Option<&mut [f64]>,
    ) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::InvalidParameter("time must be >= 0".into()));
        }
        match self {
            Target::Uniform(m) => {
                if let Some(out) = score_out {
                    out.iter_mut().for_each(|o| *o = 0.0);
                }
                Ok(match m {
                    Manifold::Torus { .. } => 0.0,
                    Manifold::Sphere { .. } => -(4.0 * std::f64::consts::PI).ln(),
                })
            }
            Target::TorusGmm(g) => {
                let d = g.dim;
                let mut grads = score_out.as_ref().map(|_| vec![0.0; g.weights.len() * d]);
                let mut logs = g.component_logs(t, x, grads.as_deref_mut())?;
                let (lse, _) = softmax_in_place(&mut logs);
                if let Some(out) = score_out {
                    let grads = grads.unwrap();
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for (i, resp) in logs.iter().enumerate() {
                        for (j, o) in out.iter_mut().enumerate() {
                            *o += resp * grads[i * d + j];
                        }
                    }
                }
                Ok(lse)
            }
            Target::SphereHkMixture(m) => {
                let nc = m.weights.len();
                let mut info = score_out.as_ref().map(|_| vec![0.0; nc * 2]);
                let mut logs = m.component_logs(t, x, info.as_deref_mut())?;
                let (lse, _) = softmax_in_place(&mut logs);
                if let Some(out) = score_out {
                    let info = info.unwrap();
                    out.iter_mut().for_each(|o| *o = 0.0);
                    for (i, resp) in logs.iter().enumerate() {
                        let dlog_dc = info[i * 2];
                        let c = info[i * 2 + 1];
                        let mu = m.centers[i].coords();
                        for (j, o) in out.iter_mut().enumerate() {
                            *o += resp * dlog_dc * (mu[j] - c * x[j]);
                        }
                    }
                }
                Ok(lse)
            }
        }
    }

    /// Exact draw from `p_0`.
    pub fn sample_p0<R: Rng>(&self, rng: &mut R) -> Point {
        match self {
            Target::Uniform(m) => m.uniform_sample(rng),
            Target::TorusGmm(g) => {
                let i = pick_component(&g.weights, rng);
                let coords = g.means[i]
                    .iter()
                    .map(|m| {
                        let z: f64 = rng.sample(StandardNormal);
                        (m + g.sigmas[i] * z).rem_euclid(1.0)
                    })
                    .collect();
                Point::from_raw(Manifold::torus(g.dim), coords)
            }
            Target::SphereHkMixture(m) => {
                let i = pick_component(&m.weights, rng);
                let manifold = Manifold::sphere(2);
                let center = &m.centers[i];
                let rho = m.radial_tables[i].sample(rng);
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                let frame = manifold.canonical_frame(center);
                let v: Vec<f64> = frame.columns()[0]
                    .iter()
                    .zip(&frame.columns()[1])
                    .map(|(a, b)| rho * (phi.cos() * a + phi.sin() * b))
                    .collect();
                let mut coords = center.coords().to_vec();
                manifold.exp_in_place(&mut coords, &v);
                Point::from_raw(manifold, coords)
            }
        }
    }
}

impl TorusGmm {
    /// `ln(w_i) + ln k_i(t, x)` per component; optionally writes per-component
    /// per-coordinate log-gradients into `grads` (row-major `nc x d`).
    fn component_logs(&self, t: f64, x: &[f64], mut grads: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut logs = Vec::with_capacity(self.weights.len());
        for i in 0..self.weights.len() {
            let prep = ThetaPrep::new(self.sigmas[i] * self.sigmas[i] + t);
            let mut lg = self.log_weights[i];
            // One logarithm per component: the per-coordinate series factors
            // multiply into `prod` (bounded by 7^d, no overflow for d <= 8).
            let mut prod = 1.0;
            for j in 0..d {
                let (lin, sum, dlog) = prep.parts(x[j] - self.means[i][j]);
                lg += lin;
                prod *= sum;
                if let Some(g) = grads.as_deref_mut() {
                    g[i * d + j] = dlog;
                }
            }
            logs.push(lg + prod.ln());
        }
        Ok(logs)
    }
}

impl SphereHkMixture {
    /// `ln(w_i) + ln H(s_i + t, <mu_i, x>)` per component; optionally records
    /// `(dlog/dc, c)` pairs for the score assembly.
    fn component_logs(&self, t: f64, x: &[f64], mut info: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let mut logs = Vec::with_capacity(self.weights.len());
        for (i, w) in self.weights.iter().enumerate() {
            let c = dot(self.centers[i].coords(), x).clamp(-1.0, 1.0);
            let (lh, dlog_dc) = sphere_log_and_dlog(self.widths[i] + t, c)?;
            logs.push(w.ln() + lh);
            if let Some(out) = info.as_deref_mut() {
                out[i * 2] = dlog_dc;
                out[i * 2 + 1] = c;
            }
        }
        Ok(logs)
    }
}

/// Inverse-CDF table of the geodesic radius `rho` under `H(s, mu, .)` on
/// `S^2`; the radial density is `H(s, cos rho) * 2 pi sin(rho)`.
#[derive(Debug, Clone)]
struct RadialTable {
    cdf: Vec<f64>,
}

const RADIAL_TABLE_SIZE: usize = 4096;

impl RadialTable {
    fn build(width: f64) -> Result<RadialTable> {
        let n = RADIAL_TABLE_SIZE;
        let step = std::f64::consts::PI / (n - 1) as f64;
        let tol = KernelTolerance::default();
        let density: Vec<f64> = (0..n)
            .map(|k| {
                let rho = k as f64 * step;
                let h = sphere_series(width, rho.cos(), tol)?.value.max(0.0);
                Ok(h * std::f64::consts::TAU * rho.sin())
            })
            .collect::<Result<_>>()?;
        let mut cdf = vec![0.0; n];
        for k in 1..n {
            cdf[k] = cdf[k - 1] + 0.5 * (density[k - 1] + density[k]) * step;
        }
        let total = cdf[n - 1];
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(
                "sphere component radial density vanished".into(),
            ));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(RadialTable { cdf })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let n = self.cdf.len();
        let step = std::f64::consts::PI / (n - 1) as f64;
        let idx = self.cdf.partition_point(|c| *c < u);
        if idx == 0 {
            return 0.0;
        }
        if idx >= n {
            return std::f64::consts::PI;
        }
        let (c0, c1) = (self.cdf[idx - 1], self.cdf[idx]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        (idx as f64 - 1.0 + frac) * step
    }
}

fn pick_component<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Replace log-values by their softmax, returning `(logsumexp, max)`.
fn softmax_in_place(logs: &mut [f64]) -> (f64, f64) {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (m, m);
    }
    let mut sum = 0.0;
    for l in logs.iter_mut() {
        *l = (*l - m).exp();
        sum += *l;
    }
    logs.iter_mut().for_each(|l| *l /= sum);
    (m + sum.ln(), m)
}

fn softmax(logs: &[f64]) -> Vec<f64> {
    let mut out = logs.to_vec();
    softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle_theta(v: f64, delta: f64) -> f64 {
        let pref = 1.0 / (std::f64::consts::TAU * v).sqrt();
        (-50i64..=50)
            .map(|n| {
                let z = delta + n as f64;
                pref * (-z * z / (2.0 * v)).exp()
            })
            .sum()
    }

    fn single_torus(mean: f64, sigma: f64) -> Target {
        Target::TorusGmm(TorusGmm::new(vec![1.0], vec![vec![mean]], vec![sigma]).unwrap())
    }

    #[test]
    fn density_matches_theta_oracle_at_t_zero() {
        let target = single_torus(0.5, 0.2);
        let x = Point::torus(vec![0.5]);
        let d = target.density_t(0.0, &x).unwrap();
        assert!((d - oracle_theta(0.04, 0.0)).abs() < 1e-12);
    }

    #[test]
    fn density_reaches_equilibrium() {
        let torus = Target::default_torus_gmm(1);
        let x = Point::torus(vec![0.123]);
        assert!((torus.density_t(50.0, &x).unwrap() - 1.0).abs() < 1e-6);

        let sphere = Target::default_sphere_mixture();
        let x = Point::sphere(vec![0.2, -0.9, 0.3]).unwrap();
        let quarter = 1.0 / (4.0 * std::f64::consts::PI);
        assert!((sphere.density_t(50.0, &x).unwrap() - quarter).abs() < 1e-6);
    }

    #[test]
    fn duplicate_components_collapse_to_one() {
        let single = single_torus(0.3, 0.1);
        let double = Target::TorusGmm(
            TorusGmm::new(
                vec![0.5, 0.5],
                vec![vec![0.3], vec![0.3]],
                vec![0.1, 0.1],
            )
            .unwrap(),
        );
        for t in [0.0, 0.2] {
            for xi in [0.1, 0.4, 0.9] {
                let x = Point::torus(vec![xi]);
                let a = single.density_t(t, &x).unwrap();
                let b = double.density_t(t, &x).unwrap();
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn empty_mixture_is_rejected() {
        assert!(matches!(
            TorusGmm::new(vec![], vec![], vec![]),
            Err(Error::EmptyMixture)
        ));
    }

    #[test]
    fn score_vanishes_by_symmetry() {
        let target = single_torus(0.5, 0.1);
        let x = Point::torus(vec![0.5]);
        assert!(target.score_t(0.3, &x).unwrap().norm() < 1e-12);

        let two = Target::TorusGmm(
            TorusGmm::new(
                vec![0.5, 0.5],
                vec![vec![0.25], vec![0.75]],
                vec![0.07, 0.07],
            )
            .unwrap(),
        );
        let x = Point::torus(vec![0.5]);
        assert!(two.score_t(0.1, &x).unwrap().norm() < 1e-12);

        let sphere = Target::SphereHkMixture(
            SphereHkMixture::new(
                vec![1.0],
                vec![Point::sphere(vec![0.0, 0.0, 1.0]).unwrap()],
                vec![0.3],
            )
            .unwrap(),
        );
        let x = Point::sphere(vec![0.0, 0.0, 1.0]).unwrap();
        assert!(sphere.score_t(0.2, &x).unwrap().norm() < 1e-12);
    }

    #[test]
    fn torus_score_matches_finite_difference() {
        let target = Target::default_torus_gmm(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = Manifold::torus(2);
        let eps = 1e-6;
        for _ in 0..1000 {
            let t = 0.01 + rng.random::<f64>() * 2.0;
            let x = m.uniform_sample(&mut rng);
            let score = target.score_t(t, &x).unwrap();
            for j in 0..2 {
                let mut fwd = x.coords().to_vec();
                fwd[j] = (fwd[j] + eps).rem_euclid(1.0);
                let mut bwd = x.coords().to_vec();
                bwd[j] = (bwd[j] - eps).rem_euclid(1.0);
                let lf = target
                    .log_density_and_score(t, &fwd, None)
                    .unwrap();
                let lb = target
                    .log_density_and_score(t, &bwd, None)
                    .unwrap();
                let fd = (lf - lb) / (2.0 * eps);
                let exact = score.components()[j];
                assert!(
                    (exact - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "t={t}: {exact} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn sphere_score_matches_finite_difference() {
        let target = Target::default_sphere_mixture();
        let m = Manifold::sphere(2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-6;
        let mut checked = 0;
        while checked < 1000 {
            let t = 0.05 + rng.random::<f64>() * 2.0;
            let x = m.uniform_sample(&mut rng);
            // Keep clear of the series noise floor where the density is
            // vanishing (exact fd is meaningless there).
            if target.log_density_and_score(t, x.coords(), None).unwrap() < -18.0 {
                continue;
            }
            checked += 1;
            let score = target.score_t(t, &x).unwrap();
            let frame = m.canonical_frame(&x);
            for col in frame.columns() {
                let step: Vec<f64> = col.iter().map(|c| c * eps).collect();
                let mut fwd = x.coords().to_vec();
                m.exp_in_place(&mut fwd, &step);
                let step: Vec<f64> = col.iter().map(|c| -c * eps).collect();
                let mut bwd = x.coords().to_vec();
                m.exp_in_place(&mut bwd, &step);
                let lf = target.log_density_and_score(t, &fwd, None).unwrap();
                let lb = target.log_density_and_score(t, &bwd, None).unwrap();
                let fd = (lf - lb) / (2.0 * eps);
                let exact = dot(score.components(), col);
                assert!(
                    (exact - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "t={t}: {exact} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let torus = Target::default_torus_gmm(1);
        for t in [0.0, 0.1, 1.0] {
            let n = 4096;
            let sum: f64 = (0..n)
                .map(|i| {
                    let x = Point::torus(vec![(i as f64 + 0.5) / n as f64]);
                    torus.density_t(t, &x).unwrap()
                })
                .sum();
            assert!((sum / n as f64 - 1.0).abs() < 1e-6, "torus t={t}");
        }

        let sphere = Target::default_sphere_mixture();
        let (nodes, weights) = gauss_legendre(200);
        for t in [0.0, 0.1, 1.0] {
            // Integrate over S^2 in spherical coordinates about the z axis.
            let mut acc = 0.0;
            for (z, w) in nodes.iter().zip(&weights) {
                let s = (1.0 - z * z).max(0.0).sqrt();
                let n_phi = 256;
                let mut ring = 0.0;
                for j in 0..n_phi {
                    let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
                    let x = Point::from_raw(
                        Manifold::sphere(2),
                        vec![s * phi.cos(), s * phi.sin(), *z],
                    );
                    ring += sphere.density_t(t, &x).unwrap();
                }
                acc += w * ring * std::f64::consts::TAU / n_phi as f64;
            }
            assert!((acc - 1.0).abs() < 1e-6, "sphere t={t}: {acc}");
        }
    }

    #[test]
    fn heat_flow_consistency_on_torus() {
        // p_{s+t}(x) = integral p_s(z) H(t, z, x) dz.
        let target = Target::default_torus_gmm(1);
        let (s, t) = (0.05, 0.1);
        let n = 4096;
        for xi in [0.17, 0.5, 0.83] {
            let mut acc = 0.0;
            for i in 0..n {
                let z = (i as f64 + 0.5) / n as f64;
                let pz = target.density_t(s, &Point::torus(vec![z])).unwrap();
                let k = crate::heat_kernel::wrapped_gaussian(t, xi - z, KernelTolerance::default())
                    .unwrap()
                    .value;
                acc += pz * k;
            }
            acc /= n as f64;
            let direct = target.density_t(s + t, &Point::torus(vec![xi])).unwrap();
            assert!((acc - direct).abs() < 1e-6, "x={xi}: {acc} vs {direct}");
        }
    }

    #[test]
    fn responsibilities_form_a_distribution() {
        let torus = Target::default_torus_gmm(2);
        let sphere = Target::default_sphere_mixture();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            for target in [&torus, &sphere] {
                let m = target.manifold();
                let x = m.uniform_sample(&mut rng);
                let t = 0.01 + rng.random::<f64>();
                let r = target.responsibilities(t, &x).unwrap();
                assert!(r.iter().all(|v| (0.0..=1.0).contains(v)));
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_none_is_identity() {
        let target = Target::default_torus_gmm(1);
        let x = Point::torus(vec![0.37]);
        let a = target.score_t(0.2, &x).unwrap();
        let b = target
            .perturbed_score(&ScorePerturbation::None, 0.2, &x)
            .unwrap();
        assert_eq!(a.components(), b.components());
    }

    #[test]
    fn perturbation_is_bounded_by_amplitude() {
        let torus = Target::default_torus_gmm(2);
        let sphere = Target::default_sphere_mixture();
        let pert = ScorePerturbation::Deterministic {
            amplitude: 0.7,
            frequency: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            for target in [&torus, &sphere] {
                let m = target.manifold();
                let x = m.uniform_sample(&mut rng);
                let exact = target.score_t(0.3, &x).unwrap();
                let noisy = target.perturbed_score(&pert, 0.3, &x).unwrap();
                let diff: f64 = exact
                    .components()
                    .iter()
                    .zip(noisy.components())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(diff <= 0.7 + 1e-12);
            }
        }
    }

    #[test]
    fn perturbation_mean_square_over_uniform_points() {
        // amplitude 0.5, frequency 1: E |eps|^2 = 0.25 * E sin^2 = 0.125.
        let pert = ScorePerturbation::Deterministic {
            amplitude: 0.5,
            frequency: 1,
        };
        let m = Manifold::torus(1);
        let n = 10_000;
        let mean_sq: f64 = (0..n)
            .map(|i| {
                let x = [(i as f64 + 0.5) / n as f64];
                let mut out = [0.0];
                pert.add_field(m, &x, &mut out);
                out[0] * out[0]
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean_sq - 0.125).abs() < 1e-6);
    }

    #[test]
    fn sampling_concentrates_for_tiny_sigma() {
        let target = single_torus(0.3, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let p = target.sample_p0(&mut rng);
            let d = Manifold::torus(1).distance(&p, &Point::torus(vec![0.3]));
            assert!(d < 1e-5);
        }
    }

    #[test]
    fn sampling_circular_mean_matches_component_mean() {
        let target = single_torus(0.3, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 100_000;
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let p = target.sample_p0(&mut rng);
            let angle = std::f64::consts::TAU * p.coords()[0];
            sx += angle.cos();
            sy += angle.sin();
        }
        let mean = sy.atan2(sx) / std::f64::consts::TAU;
        assert!((mean - 0.3).abs() < 0.01);
    }

    #[test]
    fn wide_sphere_component_samples_uniformly() {
        let target = Target::SphereHkMixture(
            SphereHkMixture::new(
                vec![1.0],
                vec![Point::sphere(vec![0.0, 0.0, 1.0]).unwrap()],
                vec![50.0],
            )
            .unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 100_000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let p = target.sample_p0(&mut rng);
            for (acc, c) in mean.iter_mut().zip(p.coords()) {
                *acc += c / n as f64;
            }
        }
        let norm = mean.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!(norm < 0.02, "mean norm {norm}");
    }

    #[test]
    fn sphere_sampling_matches_density_moment() {
        // E <mu, X> under one heat-kernel component has the spectral value
        // e^{-s}; check the empirical mean against it.
        let width = 0.3;
        let mu = Point::sphere(vec![0.0, 1.0, 0.0]).unwrap();
        let target = Target::SphereHkMixture(
            SphereHkMixture::new(vec![1.0], vec![mu.clone()], vec![width]).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let p = target.sample_p0(&mut rng);
            acc += dot(p.coords(), mu.coords());
        }
        let mean = acc / n as f64;
        let expected = (-width_to_lambda(width)).exp();
        // Var<mu,X> <= 1, so 3 standard errors is ~0.01.
        assert!((mean - expected).abs() < 0.01, "{mean} vs {expected}");
    }

    fn width_to_lambda(width: f64) -> f64 {
        // l = 1 eigenvalue decay of the half-Laplacian flow on S^2.
        width * 1.0 * (1.0 + 1.0) / 2.0
    }
}
