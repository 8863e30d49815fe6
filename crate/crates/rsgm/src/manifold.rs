//! Geometric primitives on flat tori `T^d` and unit spheres `S^d`.
//!
//! Torus points use unit-circumference coordinates in `[0,1)^d`, so every
//! wrapped formula has period 1. Sphere points are stored as embedded unit
//! vectors in `R^{d+1}` (no pole singularities) and are renormalized after
//! every exponential map to kill rounding drift.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which orthonormal frame Algorithm line "choose an orthonormal frame" uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FramePolicy {
    /// Deterministic frame: coordinate basis on the torus, a completed
    /// ambient basis on the sphere.
    #[default]
    Canonical,
    /// Canonical frame post-multiplied by a Haar-uniform rotation.
    RandomRotation,
}

/// A compact model manifold together with its intrinsic constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Manifold {
    Torus { dim: usize },
    Sphere { dim: usize },
}

impl Manifold {
    pub fn torus(dim: usize) -> Self {
        assert!(dim >= 1, "torus dimension must be >= 1");
        Manifold::Torus { dim }
    }

    pub fn sphere(dim: usize) -> Self {
        assert!(dim >= 1, "sphere dimension must be >= 1");
        Manifold::Sphere { dim }
    }

    /// Intrinsic dimension d.
    pub fn dim(&self) -> usize {
        match *self {
            Manifold::Torus { dim } | Manifold::Sphere { dim } => dim,
        }
    }

    /// Length of the coordinate vector backing a `Point` (d for the torus,
    /// d+1 ambient coordinates for the sphere).
    pub fn ambient_len(&self) -> usize {
        match *self {
            Manifold::Torus { dim } => dim,
            Manifold::Sphere { dim } => dim + 1,
        }
    }

    /// 1/2 for the unit-circumference torus, pi for the unit sphere.
    pub fn injectivity_radius(&self) -> f64 {
        match *self {
            Manifold::Torus { .. } => 0.5,
            Manifold::Sphere { .. } => std::f64::consts::PI,
        }
    }

    /// Uniform bound on the curvature tensor: 0 (flat) or 1 (unit sphere).
    pub fn curvature_bound(&self) -> f64 {
        match *self {
            Manifold::Torus { .. } => 0.0,
            Manifold::Sphere { .. } => 1.0,
        }
    }

    /// Smallest nonzero eigenvalue of -Laplace-Beltrami: 4 pi^2 on the
    /// unit-circumference torus, d on the unit sphere.
    pub fn spectral_gap(&self) -> f64 {
        match *self {
            Manifold::Torus { .. } => 4.0 * std::f64::consts::PI * std::f64::consts::PI,
            Manifold::Sphere { dim } => dim as f64,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Manifold::Torus { dim } => format!("torus{dim}"),
            Manifold::Sphere { dim } => format!("sphere{dim}"),
        }
    }

    fn check_same(&self, other: &Manifold) -> Result<()> {
        if self != other {
            return Err(Error::ManifoldMismatch(self.name(), other.name()));
        }
        Ok(())
    }

    /// Geodesic endpoint `exp_x(v)` for a tangent vector `v` based at `x`.
    pub fn exp_map(&self, x: &Point, v: &TangentVec) -> Result<Point> {
        self.check_same(&x.manifold)?;
        if v.base != *x {
            return Err(Error::BaseMismatch);
        }
        let mut coords = x.coords.clone();
        self.exp_in_place(&mut coords, &v.components);
        Ok(Point {
            manifold: *self,
            coords,
        })
    }

    /// In-place exponential map on raw coordinates; `v` must be a valid
    /// tangent representation at `x` (orthogonal to `x` on the sphere).
    pub(crate) fn exp_in_place(&self, x: &mut [f64], v: &[f64]) {
        match *self {
            Manifold::Torus { .. } => {
                for (xi, vi) in x.iter_mut().zip(v) {
                    *xi = (*xi + *vi).rem_euclid(1.0);
                }
            }
            Manifold::Sphere { .. } => {
                let r = norm(v);
                if r == 0.0 {
                    return;
                }
                let (s, c) = r.sin_cos();
                let scale = s / r;
                for (xi, vi) in x.iter_mut().zip(v) {
                    *xi = c * *xi + scale * *vi;
                }
                renormalize(x);
            }
        }
    }

    /// Local inverse of the exponential map, defined for
    /// `rho(x,y) < injectivity_radius`. The torus representative is chosen in
    /// `(-1/2, 1/2]^d`, with a coordinate difference of exactly 1/2 resolved
    /// to +1/2.
    pub fn log_map(&self, x: &Point, y: &Point) -> Result<TangentVec> {
        self.check_same(&x.manifold)?;
        self.check_same(&y.manifold)?;
        let components = match *self {
            Manifold::Torus { .. } => x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(a, b)| wrap_half(b - a))
                .collect(),
            Manifold::Sphere { .. } => {
                let c = dot(&x.coords, &y.coords).clamp(-1.0, 1.0);
                if c <= -1.0 + 1e-12 {
                    return Err(Error::AntipodalPoints);
                }
                // Component of y orthogonal to x, rescaled to length theta.
                let mut perp: Vec<f64> = y
                    .coords
                    .iter()
                    .zip(&x.coords)
                    .map(|(yi, xi)| yi - c * xi)
                    .collect();
                let n = norm(&perp);
                let theta = n.atan2(c);
                if n < 1e-15 || theta == 0.0 {
                    perp.iter_mut().for_each(|p| *p = 0.0);
                } else {
                    let scale = theta / n;
                    perp.iter_mut().for_each(|p| *p *= scale);
                }
                perp
            }
        };
        Ok(TangentVec {
            base: x.clone(),
            components,
        })
    }

    /// Geodesic distance rho(x, y).
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        debug_assert_eq!(x.manifold, *self);
        debug_assert_eq!(y.manifold, *self);
        self.distance_raw(&x.coords, &y.coords)
    }

    pub(crate) fn distance_raw(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Manifold::Torus { .. } => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let d = wrap_half(b - a);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            // atan2 of the tangential component against the cosine is
            // accurate near both coincident and antipodal points, where a
            // bare acos of the inner product loses half the mantissa.
            Manifold::Sphere { .. } => {
                let c = dot(x, y).clamp(-1.0, 1.0);
                let perp: f64 = x
                    .iter()
                    .zip(y)
                    .map(|(xi, yi)| {
                        let p = yi - c * xi;
                        p * p
                    })
                    .sum();
                perp.sqrt().atan2(c)
            }
        }
    }

    /// Orthonormal frame at `x`: d tangent vectors with identity Gram matrix.
    pub fn orthonormal_frame<R: Rng>(
        &self,
        x: &Point,
        policy: FramePolicy,
        rng: &mut R,
    ) -> Frame {
        debug_assert_eq!(x.manifold, *self);
        let d = self.dim();
        let mut columns = self.canonical_frame_columns(x);
        if policy == FramePolicy::RandomRotation {
            let rot = random_rotation(d, rng);
            let old = columns.clone();
            for (j, col) in columns.iter_mut().enumerate() {
                for e in col.iter_mut() {
                    *e = 0.0;
                }
                for (k, old_col) in old.iter().enumerate() {
                    let w = rot[k * d + j];
                    for (e, o) in col.iter_mut().zip(old_col) {
                        *e += w * o;
                    }
                }
            }
        }
        Frame {
            base: x.clone(),
            columns,
        }
    }

    /// The deterministic canonical frame at `x`.
    pub fn canonical_frame(&self, x: &Point) -> Frame {
        Frame {
            base: x.clone(),
            columns: self.canonical_frame_columns(x),
        }
    }

    /// Canonical frame: coordinate basis on the torus; on the sphere, the
    /// ambient basis vectors minus the one most aligned with `x`, orthogonalized
    /// against `x` and each other in index order.
    fn canonical_frame_columns(&self, x: &Point) -> Vec<Vec<f64>> {
        match *self {
            Manifold::Torus { dim } => (0..dim)
                .map(|j| {
                    let mut col = vec![0.0; dim];
                    col[j] = 1.0;
                    col
                })
                .collect(),
            Manifold::Sphere { dim } => {
                let n = dim + 1;
                let drop = x
                    .coords
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dim);
                for i in (0..n).filter(|&i| i != drop) {
                    let mut v = vec![0.0; n];
                    v[i] = 1.0;
                    // Gram-Schmidt against the base point and earlier columns.
                    let cx = dot(&v, &x.coords);
                    for (e, xi) in v.iter_mut().zip(&x.coords) {
                        *e -= cx * xi;
                    }
                    for prev in &columns {
                        let cp = dot(&v, prev);
                        for (e, p) in v.iter_mut().zip(prev) {
                            *e -= cp * p;
                        }
                    }
                    let nv = norm(&v);
                    v.iter_mut().for_each(|e| *e /= nv);
                    columns.push(v);
                }
                columns
            }
        }
    }

    /// Uniform draw from the normalized volume measure.
    pub fn uniform_sample<R: Rng>(&self, rng: &mut R) -> Point {
        match *self {
            Manifold::Torus { dim } => Point {
                manifold: *self,
                coords: (0..dim).map(|_| rng.random::<f64>()).collect(),
            },
            Manifold::Sphere { dim } => loop {
                let v: Vec<f64> = (0..dim + 1).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&v);
                if n > 1e-12 {
                    break Point {
                        manifold: *self,
                        coords: v.iter().map(|e| e / n).collect(),
                    };
                }
            },
        }
    }

    /// `J(x,u) = |det d exp_x(u)|`: 1 on the flat torus, `(sin r / r)^{d-1}`
    /// with `r = |u|` on the unit sphere (1 at r = 0 by continuity).
    pub fn jacobian_det(&self, _x: &Point, u: &TangentVec) -> f64 {
        match *self {
            Manifold::Torus { .. } => 1.0,
            Manifold::Sphere { dim } => {
                let r = u.norm();
                debug_assert!(r < self.injectivity_radius());
                if r < 1e-9 {
                    1.0
                } else {
                    (r.sin() / r).powi(dim as i32 - 1)
                }
            }
        }
    }
}

/// A point in chart coordinates: `[0,1)^d` on the torus, an embedded unit
/// vector on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    manifold: Manifold,
    coords: Vec<f64>,
}

impl Point {
    /// Torus point; coordinates are reduced modulo 1.
    pub fn torus(coords: Vec<f64>) -> Point {
        let manifold = Manifold::torus(coords.len());
        Point {
            manifold,
            coords: coords.into_iter().map(|c| c.rem_euclid(1.0)).collect(),
        }
    }

    /// Sphere point from an ambient vector, normalized onto the unit sphere.
    pub fn sphere(coords: Vec<f64>) -> Result<Point> {
        if coords.len() < 2 {
            return Err(Error::InvalidParameter(
                "sphere points need at least 2 ambient coordinates".into(),
            ));
        }
        let n = norm(&coords);
        if n < 1e-8 {
            return Err(Error::DegenerateSphereVector { norm: n });
        }
        let manifold = Manifold::sphere(coords.len() - 1);
        Ok(Point {
            manifold,
            coords: coords.into_iter().map(|c| c / n).collect(),
        })
    }

    pub(crate) fn from_raw(manifold: Manifold, coords: Vec<f64>) -> Point {
        debug_assert_eq!(coords.len(), manifold.ambient_len());
        Point { manifold, coords }
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

/// A tangent vector with its base point recorded. Components are coordinate
/// increments on the torus and an ambient vector orthogonal to the base on
/// the sphere; in both cases the Riemannian norm is the Euclidean norm of the
/// components.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    base: Point,
    components: Vec<f64>,
}

impl TangentVec {
    pub fn new(base: Point, components: Vec<f64>) -> Result<TangentVec> {
        let expected = base.manifold.ambient_len();
        if components.len() != expected {
            return Err(Error::TangentLength {
                expected,
                got: components.len(),
            });
        }
        let mut components = components;
        if let Manifold::Sphere { .. } = base.manifold {
            let d = dot(&components, &base.coords);
            if d.abs() > 1e-8 * (1.0 + norm(&components)) {
                return Err(Error::TangentNotOrthogonal { dot: d });
            }
            // Kill residual rounding drift so the invariant holds exactly.
            for (c, x) in components.iter_mut().zip(&base.coords) {
                *c -= d * x;
            }
        }
        Ok(TangentVec { base, components })
    }

    pub fn zero(base: Point) -> TangentVec {
        let len = base.manifold.ambient_len();
        TangentVec {
            base,
            components: vec![0.0; len],
        }
    }

    pub(crate) fn from_raw(base: Point, components: Vec<f64>) -> TangentVec {
        TangentVec { base, components }
    }

    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn norm(&self) -> f64 {
        norm(&self.components)
    }

    pub fn scaled(&self, factor: f64) -> TangentVec {
        TangentVec {
            base: self.base.clone(),
            components: self.components.iter().map(|c| c * factor).collect(),
        }
    }
}

/// An orthonormal frame: d tangent vectors at a common base point whose Gram
/// matrix is the identity.
#[derive(Debug, Clone)]
pub struct Frame {
    base: Point,
    columns: Vec<Vec<f64>>,
}

impl Frame {
    pub fn base(&self) -> &Point {
        &self.base
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Lift Euclidean coefficients to the tangent space: `U xi`.
    pub fn apply(&self, xi: &[f64]) -> TangentVec {
        assert_eq!(xi.len(), self.columns.len());
        let mut components = vec![0.0; self.base.manifold.ambient_len()];
        for (w, col) in xi.iter().zip(&self.columns) {
            for (e, c) in components.iter_mut().zip(col) {
                *e += w * c;
            }
        }
        TangentVec {
            base: self.base.clone(),
            components,
        }
    }

    /// Gram matrix of the columns, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let d = self.columns.len();
        let mut g = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] = dot(&self.columns[i], &self.columns[j]);
            }
        }
        g
    }
}

/// Wrap a coordinate difference into the representative interval (-1/2, 1/2].
/// The tie at exactly half a period resolves to +1/2. In-range inputs pass
/// through unchanged so that negation stays exact.
pub(crate) fn wrap_half(delta: f64) -> f64 {
    if delta > -0.5 && delta <= 0.5 {
        return delta;
    }
    let r = delta.rem_euclid(1.0);
    if r > 0.5 {
        r - 1.0
    } else {
        r
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn renormalize(x: &mut [f64]) {
    let n = norm(x);
    if n > 0.0 {
        x.iter_mut().for_each(|e| *e /= n);
    }
}

/// Haar-uniform rotation in SO(d) via QR of a Gaussian matrix (row-major),
/// with the sign convention fixed so the distribution is uniform and the
/// determinant is +1.
fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        loop {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for prev in &cols {
                let c = dot(&v, prev);
                for (e, p) in v.iter_mut().zip(prev) {
                    *e -= c * p;
                }
            }
            let n = norm(&v);
            if n > 1e-9 {
                v.iter_mut().for_each(|e| *e /= n);
                cols.push(v);
                break;
            }
        }
    }
    // Flip the last column if needed to land in SO(d).
    if det_sign(&cols) < 0.0 {
        cols[d - 1].iter_mut().for_each(|e| *e = -*e);
    }
    let mut m = vec![0.0; d * d];
    for (j, col) in cols.iter().enumerate() {
        for (i, e) in col.iter().enumerate() {
            m[i * d + j] = *e;
        }
    }
    m
}

fn det_sign(cols: &[Vec<f64>]) -> f64 {
    let d = cols.len();
    let mut m: Vec<Vec<f64>> = cols.to_vec();
    let mut sign = 1.0;
    for k in 0..d {
        let (pivot, _) = m
            .iter()
            .enumerate()
            .skip(k)
            .map(|(i, row)| (i, row[k].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if m[pivot][k].abs() < 1e-14 {
            return 0.0;
        }
        if pivot != k {
            m.swap(pivot, k);
            sign = -sign;
        }
        if m[k][k] < 0.0 {
            sign = -sign;
        }
        for i in k + 1..d {
            let f = m[i][k] / m[k][k];
            for j in k..d {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    sign
}
