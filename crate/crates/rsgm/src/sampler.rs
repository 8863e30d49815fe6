//! The reverse-time sampler with rejection resets, forward-process samplers,
//! and the reset-probability experiment.
//!
//! One reverse step at time `t_k` draws `xi ~ N(0, I_d)`, lifts it through an
//! orthonormal frame to `G`, forms the tangent update
//! `Delta = h * s(t_k, y) + sqrt(h) * G`, and applies `exp_y(Delta)` when
//! `|Delta| <= h^{1/4}`; otherwise the iterate is replaced by a uniform draw
//! and the walk continues. The reverse grid is uniform, `t_k = delta + k h`,
//! and the loop runs `k = N, ..., 1`, returning `Y_0`.
//!
//! # Random streams
//!
//! All randomness derives from one master seed. Logical stream `(domain,
//! index)` maps to the ChaCha stream id `(domain << 44) | index`, so each
//! trajectory owns a counter-indexed stream and results are independent of
//! thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{FramePolicy, Manifold, Point};
use crate::parallel::map_indexed;
use crate::targets::{ScorePerturbation, Target};

/// Stream domains for the documented counter-based RNG split.
pub mod stream {
    /// Reverse-sampler trajectories (offset by the h-index in sweeps).
    pub const TRAJECTORY: u64 = 1;
    /// Forward-process reference samples.
    pub const FORWARD: u64 = 2;
    /// Auxiliary draws (kernel-validation sample points, etc.).
    pub const AUX: u64 = 3;
}

/// RNG for logical stream `(domain, index)` of a master seed.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1 << 44));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 44) | index);
    rng
}

/// A (possibly approximate) score field `s(t, x)` in tangent components.
pub trait ScoreField: Sync {
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
}

/// The exact target score plus the configured deterministic perturbation.
pub struct TargetScore<'a> {
    pub target: &'a Target,
    pub perturbation: ScorePerturbation,
}

impl ScoreField for TargetScore<'_> {
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.target.log_density_and_score(t, x, Some(out))?;
        self.perturbation
            .add_field(self.target.manifold(), x, out);
        Ok(())
    }
}

/// Identically zero drift.
pub struct ZeroScore;

impl ScoreField for ZeroScore {
    fn eval_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }
}

/// A score field scaled by a constant factor.
pub struct ScaledScore<S: ScoreField>(pub S, pub f64);

impl<S: ScoreField> ScoreField for ScaledScore<S> {
    fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0.eval_into(t, x, out)?;
        out.iter_mut().for_each(|o| *o *= self.1);
        Ok(())
    }
}

/// Reverse-sampler configuration; the step size is `h = (T - delta) / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Horizon T of the forward process.
    pub horizon: f64,
    /// Early-stopping time: the reverse grid ends at `t_0 = delta`.
    pub delta: f64,
    /// Number of reverse steps N.
    pub steps: usize,
    pub frame_policy: FramePolicy,
    /// Master seed; trajectories split off counter-indexed streams.
    pub seed: u64,
    pub perturbation: ScorePerturbation,
}

impl SamplerConfig {
    pub fn step_size(&self) -> f64 {
        (self.horizon - self.delta) / self.steps as f64
    }

    pub fn validate(&self, manifold: Manifold) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParameter("delta must be > 0".into()));
        }
        if !(self.delta < self.horizon) {
            return Err(Error::InvalidParameter("delta must be < horizon".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        if let Manifold::Sphere { .. } = manifold {
            if self.delta < 1e-3 {
                return Err(Error::InvalidParameter(
                    "sphere runs require delta >= 1e-3 (kernel floor)".into(),
                ));
            }
        }
        self.perturbation.validate()
    }
}

/// Outcome of one reverse trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub terminal: Point,
    pub resets: u32,
    /// Reverse-grid indices k at which the update was rejected.
    pub reset_steps: Vec<u32>,
    /// `sqrt(sum_k h |eps(t_k, Y_k)|^2)` for the configured perturbation.
    pub eps_score_realized: f64,
}

/// One reverse step at time `t_k`. Returns the new point and whether the
/// update was rejected (and replaced by a uniform draw).
pub fn rsgm_step<S: ScoreField, R: Rng>(
    manifold: Manifold,
    y: &Point,
    t_k: f64,
    h: f64,
    score: &S,
    frame_policy: FramePolicy,
    rng: &mut R,
) -> Result<(Point, bool)> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("step size must be > 0".into()));
    }
    let mut state = y.coords().to_vec();
    let mut scratch = StepScratch::new(manifold);
    let rejected = step_in_place(
        manifold,
        &mut state,
        t_k,
        h,
        score,
        frame_policy,
        rng,
        &mut scratch,
    )?;
    Ok((Point::from_raw(manifold, state), rejected))
}

struct StepScratch {
    score: Vec<f64>,
    delta: Vec<f64>,
    xi: Vec<f64>,
}

impl StepScratch {
    fn new(manifold: Manifold) -> StepScratch {
        StepScratch {
            score: vec![0.0; manifold.ambient_len()],
            delta: vec![0.0; manifold.ambient_len()],
            xi: vec![0.0; manifold.dim()],
        }
    }
}

/// Shared step kernel. The tangent norm of `Delta` is the Euclidean norm of
/// its components in any orthonormal frame.
#[allow(clippy::too_many_arguments)]
fn step_in_place<S: ScoreField, R: Rng>(
    manifold: Manifold,
    state: &mut Vec<f64>,
    t_k: f64,
    h: f64,
    score: &S,
    frame_policy: FramePolicy,
    rng: &mut R,
    scratch: &mut StepScratch,
) -> Result<bool> {
    score.eval_into(t_k, state, &mut scratch.score)?;
    for xi in scratch.xi.iter_mut() {
        *xi = rng.sample(StandardNormal);
    }
    let sqrt_h = h.sqrt();
    match (manifold, frame_policy) {
        // On the torus the canonical frame is the coordinate basis: G = xi.
        (Manifold::Torus { .. }, FramePolicy::Canonical) => {
            for ((d, s), xi) in scratch
                .delta
                .iter_mut()
                .zip(&scratch.score)
                .zip(&scratch.xi)
            {
                *d = h * s + sqrt_h * xi;
            }
        }
        _ => {
            let base = Point::from_raw(manifold, state.clone());
            let frame = manifold.orthonormal_frame(&base, frame_policy, rng);
            let g = frame.apply(&scratch.xi);
            for ((d, s), gi) in scratch
                .delta
                .iter_mut()
                .zip(&scratch.score)
                .zip(g.components())
            {
                *d = h * s + sqrt_h * gi;
            }
        }
    }
    let norm = scratch.delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    let threshold = h.powf(0.25);
    if norm <= threshold {
        #[cfg(debug_assertions)]
        let before = state.clone();
        manifold.exp_in_place(state, &scratch.delta);
        #[cfg(debug_assertions)]
        debug_assert!(
            manifold.distance_raw(&before, state) <= threshold * (1.0 + 1e-9) + 1e-12,
            "accepted step moved farther than h^(1/4)"
        );
        Ok(false)
    } else {
        *state = manifold.uniform_sample(rng).coords().to_vec();
        Ok(true)
    }
}

/// Run one full reverse trajectory with the exact (optionally perturbed)
/// target score. `traj` indexes the trajectory's RNG stream.
pub fn rsgm_sample(
    manifold: Manifold,
    target: &Target,
    config: &SamplerConfig,
    traj: u64,
) -> Result<RunRecord> {
    let score = TargetScore {
        target,
        perturbation: config.perturbation,
    };
    rsgm_sample_with_score(manifold, &score, config, stream::TRAJECTORY, traj)
}

/// Run one full reverse trajectory with an arbitrary score field on the RNG
/// stream `(domain, traj)`. The perturbation magnitude bookkeeping uses the
/// configured perturbation field (zero when the mode is `None`).
pub fn rsgm_sample_with_score<S: ScoreField>(
    manifold: Manifold,
    score: &S,
    config: &SamplerConfig,
    domain: u64,
    traj: u64,
) -> Result<RunRecord> {
    config.validate(manifold)?;
    let h = config.step_size();
    let n = config.steps;
    let mut rng = stream_rng(config.seed, domain, traj);
    let mut state = manifold.uniform_sample(&mut rng).coords().to_vec();
    let mut scratch = StepScratch::new(manifold);
    let mut eps_buf = vec![0.0; manifold.ambient_len()];
    let track_eps = config.perturbation != ScorePerturbation::None;

    let mut resets = 0u32;
    let mut reset_steps = Vec::new();
    let mut eps_sq = 0.0;
    for k in (1..=n).rev() {
        let t_k = config.delta + k as f64 * h;
        if track_eps {
            eps_buf.iter_mut().for_each(|e| *e = 0.0);
            config.perturbation.add_field(manifold, &state, &mut eps_buf);
            eps_sq += h * eps_buf.iter().map(|e| e * e).sum::<f64>();
        }
        let rejected = step_in_place(
            manifold,
            &mut state,
            t_k,
            h,
            score,
            config.frame_policy,
            &mut rng,
            &mut scratch,
        )?;
        if rejected {
            resets += 1;
            reset_steps.push(k as u32);
        }
    }
    Ok(RunRecord {
        terminal: Point::from_raw(manifold, state),
        resets,
        reset_steps,
        eps_score_realized: eps_sq.sqrt(),
    })
}

/// Draw a batch of terminal points in parallel, one RNG stream per
/// trajectory; results are in trajectory order regardless of scheduling.
pub fn rsgm_sample_batch(
    manifold: Manifold,
    target: &Target,
    config: &SamplerConfig,
    count: usize,
) -> Result<Vec<RunRecord>> {
    config.validate(manifold)?;
    collect_results(map_indexed(count, |i| {
        rsgm_sample(manifold, target, config, i as u64)
    }))
}

fn collect_results<T>(items: Vec<Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}

/// Exact (torus) or geodesic-random-walk (sphere) sample of the forward
/// process at time `t`, starting from `p_0`.
///
/// The torus increment is a wrapped Gaussian, which is exact. The sphere walk
/// takes `ceil(t / substep)` geodesic steps of variance `t/m` each and has
/// O(substep) bias; the conventional default is `substep = t / 1000`.
pub fn forward_sample<R: Rng>(
    manifold: Manifold,
    target: &Target,
    t: f64,
    substep: f64,
    rng: &mut R,
) -> Result<Point> {
    if t < 0.0 {
        return Err(Error::InvalidParameter("time must be >= 0".into()));
    }
    let x0 = target.sample_p0(rng);
    if t == 0.0 {
        return Ok(x0);
    }
    match manifold {
        Manifold::Torus { .. } => {
            let sd = t.sqrt();
            let coords = x0
                .coords()
                .iter()
                .map(|c| {
                    let z: f64 = rng.sample(StandardNormal);
                    (c + sd * z).rem_euclid(1.0)
                })
                .collect();
            Ok(Point::from_raw(manifold, coords))
        }
        Manifold::Sphere { dim } => {
            if !(substep > 0.0) {
                return Err(Error::InvalidParameter(
                    "sphere forward sampling needs substep > 0".into(),
                ));
            }
            let m = (t / substep).ceil() as usize;
            let step_sd = (t / m as f64).sqrt();
            let mut state = x0.coords().to_vec();
            let mut xi = vec![0.0; dim];
            for _ in 0..m {
                for e in xi.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
                let base = Point::from_raw(manifold, state.clone());
                let frame = manifold.canonical_frame(&base);
                let g = frame.apply(&xi);
                let v: Vec<f64> = g.components().iter().map(|c| c * step_sd).collect();
                manifold.exp_in_place(&mut state, &v);
            }
            Ok(Point::from_raw(manifold, state))
        }
    }
}

/// Column of the reset-probability table for one step size.
#[derive(Debug, Clone, Serialize)]
pub struct ResetRateRow {
    /// Effective step size `(T - delta) / N` after rounding N to an integer.
    pub h: f64,
    pub inv_sqrt_h: f64,
    pub steps: usize,
    /// Fraction of trajectories with at least one reset.
    pub reset_fraction: f64,
    /// Binomial standard error of the fraction.
    pub stderr: f64,
    /// Total resets over all steps of all trajectories.
    pub total_resets: u64,
    pub trajectories: usize,
}

/// For each step size: run `trajectories` independent reverse samples with
/// exact scores and record the fraction that reset at least once.
#[allow(clippy::too_many_arguments)]
pub fn reset_probability_experiment(
    manifold: Manifold,
    target: &Target,
    h_list: &[f64],
    horizon: f64,
    delta: f64,
    trajectories: usize,
    seed: u64,
    frame_policy: FramePolicy,
    perturbation: ScorePerturbation,
) -> Result<Vec<ResetRateRow>> {
    if trajectories < 1000 {
        return Err(Error::InvalidParameter(
            "reset experiment needs at least 1e3 trajectories".into(),
        ));
    }
    let mut rows = Vec::with_capacity(h_list.len());
    for (hi, h) in h_list.iter().enumerate() {
        if !(*h > 0.0 && *h < horizon - delta) {
            return Err(Error::InvalidParameter(format!(
                "step size {h} incompatible with horizon {horizon} and delta {delta}"
            )));
        }
        let steps = ((horizon - delta) / h).round().max(1.0) as usize;
        let config = SamplerConfig {
            horizon,
            delta,
            steps,
            frame_policy,
            seed,
            perturbation,
        };
        let h_eff = config.step_size();
        // Each h value gets its own stream domain so trajectory streams
        // never collide across the sweep.
        let domain = stream::TRAJECTORY + hi as u64;
        let score = TargetScore {
            target,
            perturbation,
        };
        let outcomes = collect_results(map_indexed(trajectories, |i| {
            rsgm_sample_with_score(manifold, &score, &config, domain, i as u64)
                .map(|r| (r.resets >= 1, r.resets as u64))
        }))?;
        let hits = outcomes.iter().filter(|(reset, _)| *reset).count();
        let total_resets: u64 = outcomes.iter().map(|(_, n)| n).sum();
        let fraction = hits as f64 / trajectories as f64;
        let stderr = (fraction * (1.0 - fraction) / trajectories as f64).sqrt();
        rows.push(ResetRateRow {
            h: h_eff,
            inv_sqrt_h: 1.0 / h_eff.sqrt(),
            steps,
            reset_fraction: fraction,
            stderr,
            total_resets,
            trajectories,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn zero_config(steps: usize, horizon: f64) -> SamplerConfig {
        SamplerConfig {
            horizon,
            delta: 0.01,
            steps,
            frame_policy: FramePolicy::Canonical,
            seed: 42,
            perturbation: ScorePerturbation::None,
        }
    }

    #[test]
    fn single_step_rejection_rate_matches_chi_square_tail() {
        // Zero score, d = 2, h = 0.01: reject iff |xi|^2 > h^{-1/2}, and the
        // chi^2_2 tail gives exactly exp(-5).
        let manifold = Manifold::torus(2);
        let target = Target::Uniform(manifold);
        let config = SamplerConfig {
            horizon: 0.02,
            delta: 0.01,
            steps: 1,
            ..zero_config(1, 0.02)
        };
        assert!((config.step_size() - 0.01).abs() < 1e-15);
        let m = 20_000;
        let records = rsgm_sample_batch(manifold, &target, &config, m).unwrap();
        let fraction =
            records.iter().filter(|r| r.resets >= 1).count() as f64 / m as f64;
        let p = (-5.0f64).exp();
        let stderr = (p * (1.0 - p) / m as f64).sqrt();
        assert!(
            (fraction - p).abs() <= 3.0 * stderr,
            "fraction {fraction} vs {p} (3 sigma = {})",
            3.0 * stderr
        );
    }

    #[test]
    fn forced_large_drift_always_rejects() {
        struct HugeScore;
        impl ScoreField for HugeScore {
            fn eval_into(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> Result<()> {
                out.iter_mut().for_each(|o| *o = 1000.0);
                Ok(())
            }
        }
        let manifold = Manifold::torus(2);
        let config = zero_config(1, 0.02);
        let h = config.step_size();
        // |b| h is far beyond h^{1/4} + 6 sqrt(h d), so the rule must fire.
        assert!(1000.0 * h * (2.0f64).sqrt() > h.powf(0.25) + 6.0 * (h * 2.0).sqrt());
        let mut rejected = 0;
        for i in 0..1000u64 {
            let r =
                rsgm_sample_with_score(manifold, &HugeScore, &config, stream::TRAJECTORY, i)
                    .unwrap();
            if r.resets >= 1 {
                rejected += 1;
            }
        }
        assert!(rejected as f64 / 1000.0 > 0.99);
    }

    #[test]
    fn accepted_steps_move_at_most_threshold() {
        let manifold = Manifold::sphere(2);
        let target = Target::default_sphere_mixture();
        let score = TargetScore {
            target: &target,
            perturbation: ScorePerturbation::None,
        };
        let mut rng = stream_rng(7, stream::AUX, 0);
        let h = 0.01;
        for i in 0..500 {
            let y = manifold.uniform_sample(&mut rng);
            let (y2, rejected) = rsgm_step(
                manifold,
                &y,
                0.05 + 0.001 * i as f64,
                h,
                &score,
                FramePolicy::Canonical,
                &mut rng,
            )
            .unwrap();
            if !rejected {
                assert!(manifold.distance(&y, &y2) <= h.powf(0.25) * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn reset_count_bounded_by_steps() {
        let manifold = Manifold::torus(1);
        let target = Target::default_torus_gmm(1);
        let config = zero_config(50, 2.0);
        let r = rsgm_sample(manifold, &target, &config, 3).unwrap();
        assert!(r.resets as usize <= 50);
        assert_eq!(r.resets as usize, r.reset_steps.len());
    }

    #[test]
    fn fixed_seed_reproduces_run_record() {
        let manifold = Manifold::sphere(2);
        let target = Target::default_sphere_mixture();
        let mut config = zero_config(40, 1.0);
        config.perturbation = ScorePerturbation::Deterministic {
            amplitude: 0.5,
            frequency: 2,
        };
        let a = rsgm_sample(manifold, &target, &config, 11).unwrap();
        let b = rsgm_sample(manifold, &target, &config, 11).unwrap();
        assert_eq!(a, b);
        // A different trajectory index gives a different stream.
        let c = rsgm_sample(manifold, &target, &config, 12).unwrap();
        assert_ne!(a.terminal, c.terminal);
    }

    #[test]
    fn zero_score_reverse_walk_preserves_uniform_law() {
        let manifold = Manifold::torus(1);
        let target = Target::Uniform(manifold);
        let config = zero_config(200, 2.0);
        let m = 100_000;
        let records = rsgm_sample_batch(manifold, &target, &config, m).unwrap();
        let bins = 32usize;
        let mut counts = vec![0usize; bins];
        for r in &records {
            let idx = ((r.terminal.coords()[0] * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let expected = m as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|c| {
                let d = *c as f64 - expected;
                d * d / expected
            })
            .sum();
        let crit = ChiSquared::new((bins - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(stat < crit, "chi^2 = {stat}, critical = {crit}");
    }

    #[test]
    fn per_step_reset_rate_is_monotone_in_drift_scale() {
        let manifold = Manifold::torus(2);
        let target = Target::default_torus_gmm(2);
        let config = SamplerConfig {
            horizon: 0.01 + 0.01 * 30.0,
            delta: 0.01,
            steps: 30,
            ..zero_config(30, 1.0)
        };
        assert!((config.step_size() - 0.01).abs() < 1e-12);
        let m = 10_000usize;
        let mut rates = Vec::new();
        for gamma in [1.0, 10.0, 100.0] {
            let score = ScaledScore(
                TargetScore {
                    target: &target,
                    perturbation: ScorePerturbation::None,
                },
                gamma,
            );
            let resets: u64 = (0..m)
                .map(|i| {
                    rsgm_sample_with_score(
                        manifold,
                        &score,
                        &config,
                        stream::TRAJECTORY,
                        i as u64,
                    )
                    .unwrap()
                    .resets as u64
                })
                .sum();
            let n_steps = (m * config.steps) as f64;
            let rate = resets as f64 / n_steps;
            let sigma = (rate.max(1e-12) * (1.0 - rate) / n_steps).sqrt();
            rates.push((rate, sigma));
        }
        for w in rates.windows(2) {
            let (lo, s_lo) = w[0];
            let (hi, s_hi) = w[1];
            assert!(
                hi >= lo - 3.0 * (s_lo + s_hi),
                "per-step rate decreased: {lo} -> {hi}"
            );
        }
    }

    #[test]
    fn per_step_rate_respects_gaussian_tail_bound() {
        // Measured per-step rate stays below exp(-h^{-1/2}/8) for h <= 0.02
        // with exact scores (relaxed form of the one-step rejection bound).
        let manifold = Manifold::torus(2);
        let target = Target::default_torus_gmm(2);
        for h in [0.02f64, 0.01] {
            let steps = ((2.0 - 0.01) / h).round() as usize;
            let config = SamplerConfig {
                horizon: 2.0,
                delta: 0.01,
                steps,
                ..zero_config(steps, 2.0)
            };
            let m = 5_000usize;
            let target_ref = &target;
            let resets: u64 = crate::parallel::map_indexed(m, |i| {
                rsgm_sample(manifold, target_ref, &config, i as u64)
                    .unwrap()
                    .resets as u64
            })
            .iter()
            .sum();
            let rate = resets as f64 / (m * steps) as f64;
            let h_eff = config.step_size();
            let bound = (-1.0 / (8.0 * h_eff.sqrt())).exp();
            assert!(rate <= bound, "h={h}: rate {rate} > bound {bound}");
        }
    }

    #[test]
    fn forward_sample_at_time_zero_is_a_p0_draw() {
        let manifold = Manifold::torus(1);
        let target = Target::TorusGmm(
            crate::targets::TorusGmm::new(vec![1.0], vec![vec![0.3]], vec![1e-6]).unwrap(),
        );
        let mut rng = stream_rng(5, stream::FORWARD, 0);
        for _ in 0..100 {
            let p = forward_sample(manifold, &target, 0.0, 1.0, &mut rng).unwrap();
            assert!(manifold.distance(&p, &Point::torus(vec![0.3])) < 1e-5);
        }
    }

    #[test]
    fn forward_torus_mixes_to_uniform() {
        let manifold = Manifold::torus(1);
        let target = Target::default_torus_gmm(1);
        let m = 100_000;
        let samples = map_indexed(m, |i| {
            let mut rng = stream_rng(6, stream::FORWARD, i as u64);
            forward_sample(manifold, &target, 50.0, 1.0, &mut rng).unwrap()
        });
        let bins = 32usize;
        let mut counts = vec![0usize; bins];
        for p in &samples {
            counts[(p.coords()[0] * bins as f64) as usize % bins] += 1;
        }
        let expected = m as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|c| {
                let d = *c as f64 - expected;
                d * d / expected
            })
            .sum();
        let crit = ChiSquared::new((bins - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(stat < crit, "chi^2 = {stat}");
    }

    #[test]
    fn forward_sphere_moment_matches_quadrature() {
        use crate::manifold::dot;
        use crate::quadrature::gauss_legendre;

        let manifold = Manifold::sphere(2);
        let target = Target::default_sphere_mixture();
        let t = 0.5;
        let substep = 5e-4;
        let m = 100_000usize;
        let mu1 = Point::sphere(vec![1.0, 0.0, 0.0]).unwrap();
        let vals = map_indexed(m, |i| {
            let mut rng = stream_rng(8, stream::FORWARD, i as u64);
            let p = forward_sample(manifold, &target, t, substep, &mut rng).unwrap();
            dot(p.coords(), mu1.coords())
        });
        let mean: f64 = vals.iter().sum::<f64>() / m as f64;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;

        // Quadrature of <mu_1, x> against the evolved density over S^2.
        let (nodes, weights) = gauss_legendre(200);
        let mut expected = 0.0;
        for (z, w) in nodes.iter().zip(&weights) {
            let s = (1.0 - z * z).max(0.0).sqrt();
            let n_phi = 256;
            let mut ring = 0.0;
            for j in 0..n_phi {
                let phi = std::f64::consts::TAU * j as f64 / n_phi as f64;
                let x = Point::sphere(vec![s * phi.cos(), s * phi.sin(), *z]).unwrap();
                ring += x.coords()[0] * target.density_t(t, &x).unwrap();
            }
            expected += w * ring * std::f64::consts::TAU / n_phi as f64;
        }
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se + 2.0 * substep,
            "mean {mean} vs quadrature {expected} (se {se})"
        );
    }

    #[test]
    fn reset_experiment_fractions_lie_in_unit_interval() {
        let manifold = Manifold::torus(2);
        let target = Target::Uniform(manifold);
        let rows = reset_probability_experiment(
            manifold,
            &target,
            &[0.04, 0.02],
            0.51,
            0.01,
            1000,
            9,
            FramePolicy::Canonical,
            ScorePerturbation::None,
        )
        .unwrap();
        for row in rows {
            assert!((0.0..=1.0).contains(&row.reset_fraction));
            assert!(row.steps >= 1);
        }
    }

    #[test]
    fn reset_experiment_rejects_tiny_sample_count() {
        let manifold = Manifold::torus(2);
        let target = Target::Uniform(manifold);
        assert!(reset_probability_experiment(
            manifold,
            &target,
            &[0.04],
            0.51,
            0.01,
            10,
            9,
            FramePolicy::Canonical,
            ScorePerturbation::None,
        )
        .is_err());
    }

    #[test]
    fn eps_score_bookkeeping_is_bounded_and_reproducible() {
        let manifold = Manifold::torus(1);
        let target = Target::default_torus_gmm(1);
        let amplitude = 0.5;
        let config = SamplerConfig {
            perturbation: ScorePerturbation::Deterministic {
                amplitude,
                frequency: 1,
            },
            ..zero_config(100, 2.0)
        };
        let r = rsgm_sample(manifold, &target, &config, 0).unwrap();
        // eps^2 = sum h |eps|^2 <= (T - delta) a^2.
        let cap = ((config.horizon - config.delta) * amplitude * amplitude).sqrt();
        assert!(r.eps_score_realized > 0.0);
        assert!(r.eps_score_realized <= cap + 1e-12);
    }
}
