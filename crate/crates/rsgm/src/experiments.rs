//! Experiment runners behind the CLI: each consumes a validated config,
//! writes CSV (optionally mirrored as JSON), and reports validation failures.
//!
//! Output layout: a `#`-prefixed header echoing the complete resolved config
//! between `config-begin`/`config-end` markers, the CSV header row, data rows
//! sorted deterministically, and optional `#`-prefixed summary lines. Floats
//! are printed with Rust's shortest round-trip formatting, and all
//! aggregation is order-insensitive, so a rerun of the echoed config
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::estimators::{loglinear_fit, tv_vs_target};
use crate::heat_kernel::{
    check_kernel_bounds, hk_sphere, hk_torus, sphere_normalization_residual,
    sphere_semigroup_residual, torus_normalization_residual, torus_semigroup_residual,
    BoundCheckRow, KernelTolerance,
};
use crate::manifold::Manifold;
use crate::parallel::map_indexed;
use crate::sampler::{
    reset_probability_experiment, rsgm_sample, stream, stream_rng, SamplerConfig,
};


/// Where the results landed and whether any validation check failed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub validation_failures: usize,
}

/// Dispatch a validated config to its runner.
pub fn run_experiment(config: &ExperimentConfig, json_mirror: bool) -> Result<RunOutput> {
    config.validate()?;
    let config = config.resolved();
    match config.experiment {
        ExperimentKind::ExitProb => run_exit_prob(&config, json_mirror),
        ExperimentKind::TvSweep => run_tv_sweep(&config, json_mirror),
        ExperimentKind::Sample => run_sample(&config, json_mirror),
        ExperimentKind::ValidateKernels => run_validate_kernels(&config, json_mirror),
    }
}

#[derive(Serialize)]
struct ExitProbRow {
    manifold: String,
    d: usize,
    h: f64,
    inv_sqrt_h: f64,
    reset_fraction: f64,
    stderr: f64,
    #[serde(rename = "M")]
    trajectories: usize,
    seed: u64,
}

/// Reset-probability sweep; one output file per manifold, each with an
/// appended log-linear fit of `ln(reset_fraction)` against `h^{-1/2}`.
pub fn run_exit_prob(config: &ExperimentConfig, json_mirror: bool) -> Result<RunOutput> {
    let mut files = Vec::new();
    for manifold in &config.manifolds {
        let target = config.target.build(*manifold)?;
        let rows = reset_probability_experiment(
            *manifold,
            &target,
            &config.exit_prob.h_list,
            config.sampler.horizon,
            config.sampler.delta,
            config.exit_prob.trajectories,
            config.seed,
            config.sampler.frame_policy,
            config.sampler.perturbation,
        )?;
        let csv_rows: Vec<ExitProbRow> = rows
            .iter()
            .map(|r| ExitProbRow {
                manifold: manifold.name(),
                d: manifold.dim(),
                h: r.h,
                inv_sqrt_h: r.inv_sqrt_h,
                reset_fraction: r.reset_fraction,
                stderr: r.stderr,
                trajectories: r.trajectories,
                seed: config.seed,
            })
            .collect();

        let mut body = String::new();
        body.push_str("manifold,d,h,inv_sqrt_h,reset_fraction,stderr,M,seed\n");
        for r in &csv_rows {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{},{},{}",
                r.manifold,
                r.d,
                r.h,
                r.inv_sqrt_h,
                r.reset_fraction,
                r.stderr,
                r.trajectories,
                r.seed
            );
        }
        // Zero-count fractions are dropped before the log fit; the dropped
        // count is reported rather than continuity-corrected.
        let usable: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.reset_fraction > 0.0)
            .map(|r| (r.inv_sqrt_h, r.reset_fraction.ln()))
            .collect();
        let dropped = rows.len() - usable.len();
        let xs: Vec<f64> = usable.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = usable.iter().map(|p| p.1).collect();
        match loglinear_fit(&xs, &ys) {
            Ok(fit) => {
                let _ = writeln!(
                    body,
                    "# fit slope={} intercept={} r_squared={} dropped_zero_rows={}",
                    fit.slope, fit.intercept, fit.r_squared, dropped
                );
            }
            Err(e) => {
                let _ = writeln!(body, "# fit unavailable: {e} (dropped_zero_rows={dropped})");
            }
        }

        let path = output_path_for(config, manifold, config.manifolds.len() > 1);
        write_output(&path, config, &body)?;
        if json_mirror {
            files.push(write_json_mirror(&path, &csv_rows)?);
        }
        files.push(path);
    }
    Ok(RunOutput {
        files,
        validation_failures: 0,
    })
}

#[derive(Serialize)]
struct TvSweepRow {
    d: usize,
    #[serde(rename = "N")]
    steps: usize,
    h: f64,
    n_samples: usize,
    tv_unhalved: f64,
    kde_bandwidth: f64,
    grid_resolution: usize,
    seed: u64,
}

/// TV-against-target sweep over reverse step counts on the torus.
pub fn run_tv_sweep(config: &ExperimentConfig, json_mirror: bool) -> Result<RunOutput> {
    let manifold = config.manifolds[0];
    let target = config.target.build(manifold)?;
    let dim = manifold.dim();
    let resolution = crate::estimators::default_grid_resolution(dim);
    let mut csv_rows = Vec::new();
    for (ni, steps) in config.tv_sweep.n_list.iter().enumerate() {
        let sampler = SamplerConfig {
            horizon: config.sampler.horizon,
            delta: config.sampler.delta,
            steps: *steps,
            frame_policy: config.sampler.frame_policy,
            seed: config.seed,
            perturbation: config.sampler.perturbation,
        };
        sampler.validate(manifold)?;
        let domain = stream::TRAJECTORY + ni as u64;
        let records = map_indexed(config.tv_sweep.samples, |i| {
            crate::sampler::rsgm_sample_with_score(
                manifold,
                &crate::sampler::TargetScore {
                    target: &target,
                    perturbation: sampler.perturbation,
                },
                &sampler,
                domain,
                i as u64,
            )
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let terminals: Vec<_> = records.into_iter().map(|r| r.terminal).collect();
        let tv = tv_vs_target(&terminals, &target, config.sampler.delta, resolution)?;
        csv_rows.push(TvSweepRow {
            d: dim,
            steps: *steps,
            h: sampler.step_size(),
            n_samples: config.tv_sweep.samples,
            tv_unhalved: tv.tv_unhalved,
            kde_bandwidth: tv.kde_bandwidth,
            grid_resolution: tv.grid_resolution,
            seed: config.seed,
        });
    }

    let mut body = String::new();
    body.push_str("d,N,h,n_samples,tv_unhalved,kde_bandwidth,grid_resolution,seed\n");
    for r in &csv_rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{}",
            r.d, r.steps, r.h, r.n_samples, r.tv_unhalved, r.kde_bandwidth, r.grid_resolution, r.seed
        );
    }
    let path = PathBuf::from(&config.output);
    write_output(&path, config, &body)?;
    let mut files = vec![path.clone()];
    if json_mirror {
        files.push(write_json_mirror(&path, &csv_rows)?);
    }
    Ok(RunOutput {
        files,
        validation_failures: 0,
    })
}

#[derive(Serialize)]
struct SampleRow {
    run_id: usize,
    terminal: Vec<f64>,
    resets: u32,
    eps_score_realized: f64,
}

/// Draw trajectories and write one row per run record.
pub fn run_sample(config: &ExperimentConfig, json_mirror: bool) -> Result<RunOutput> {
    let manifold = config.manifolds[0];
    let target = config.target.build(manifold)?;
    let sampler = SamplerConfig {
        horizon: config.sampler.horizon,
        delta: config.sampler.delta,
        steps: config.sampler.steps,
        frame_policy: config.sampler.frame_policy,
        seed: config.seed,
        perturbation: config.sampler.perturbation,
    };
    sampler.validate(manifold)?;
    let records = map_indexed(config.sample.trajectories, |i| {
        rsgm_sample(manifold, &target, &sampler, i as u64)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let coord_names: Vec<String> = (0..manifold.ambient_len())
        .map(|j| format!("c{j}"))
        .collect();
    let mut body = String::new();
    let _ = writeln!(body, "# h = {}", sampler.step_size());
    let _ = writeln!(
        body,
        "run_id,{},resets,eps_score_realized",
        coord_names.join(",")
    );
    let csv_rows: Vec<SampleRow> = records
        .iter()
        .enumerate()
        .map(|(i, r)| SampleRow {
            run_id: i,
            terminal: r.terminal.coords().to_vec(),
            resets: r.resets,
            eps_score_realized: r.eps_score_realized,
        })
        .collect();
    for r in &csv_rows {
        let coords: Vec<String> = r.terminal.iter().map(|c| format!("{c}")).collect();
        let _ = writeln!(
            body,
            "{},{},{},{}",
            r.run_id,
            coords.join(","),
            r.resets,
            r.eps_score_realized
        );
    }
    let path = PathBuf::from(&config.output);
    write_output(&path, config, &body)?;
    let mut files = vec![path.clone()];
    if json_mirror {
        files.push(write_json_mirror(&path, &csv_rows)?);
    }
    Ok(RunOutput {
        files,
        validation_failures: 0,
    })
}

#[derive(Serialize)]
struct BoundRow {
    manifold: String,
    t: f64,
    rho_or_delta: f64,
    kernel: f64,
    lower_bound: f64,
    upper_bound: f64,
    ok: bool,
}

/// Kernel validation: Gaussian bound checks on random `(t, x, y)` samples
/// plus normalization and semigroup residuals. The process is expected to
/// exit nonzero when `validation_failures > 0`.
pub fn run_validate_kernels(config: &ExperimentConfig, json_mirror: bool) -> Result<RunOutput> {
    let v = &config.validate_kernels;
    let scale = v.kernel_scale;
    let tol = KernelTolerance::default();
    let t_min = v.t_grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = v.t_grid.iter().cloned().fold(0.0f64, f64::max);

    let mut csv_rows: Vec<BoundRow> = Vec::new();
    let mut summary = String::new();
    let mut failures = 0usize;

    for (mi, manifold) in config.manifolds.iter().enumerate() {
        let mut rng = stream_rng(config.seed, stream::AUX, mi as u64);
        let samples: Vec<(f64, crate::manifold::Point, crate::manifold::Point)> = (0..v
            .pair_samples)
            .map(|_| {
                let t = t_min + (t_max - t_min) * rand::Rng::random::<f64>(&mut rng);
                let x = manifold.uniform_sample(&mut rng);
                let y = manifold.uniform_sample(&mut rng);
                (t, x, y)
            })
            .collect();
        let rows: Vec<BoundCheckRow> = if scale == 1.0 {
            check_kernel_bounds(*manifold, &samples, tol)?
        } else {
            // Fault-injection path: rescale the kernel before checking.
            samples
                .iter()
                .map(|(t, x, y)| -> Result<BoundCheckRow> {
                    let rho = manifold.distance(x, y);
                    let kernel = scale
                        * match manifold {
                            Manifold::Torus { .. } => hk_torus(*t, x, y, tol)?.value,
                            Manifold::Sphere { .. } => {
                                let c = crate::manifold::dot(x.coords(), y.coords());
                                hk_sphere(*t, c, tol)?.value
                            }
                        };
                    let s = t / 2.0;
                    let lower = crate::heat_kernel::harnack_lower_bound(
                        manifold.dim(),
                        manifold.curvature_bound(),
                        s,
                        rho,
                    );
                    let upper = crate::heat_kernel::li_yau_upper_bound(*manifold, s, rho);
                    let ok = kernel >= lower * (1.0 - 1e-9) && kernel <= upper * (1.0 + 1e-9);
                    Ok(BoundCheckRow {
                        t: *t,
                        rho,
                        kernel,
                        lower_bound: lower,
                        upper_bound: upper,
                        ok,
                    })
                })
                .collect::<Result<_>>()?
        };
        failures += rows.iter().filter(|r| !r.ok).count();
        csv_rows.extend(rows.into_iter().map(|r| BoundRow {
            manifold: manifold.name(),
            t: r.t,
            rho_or_delta: r.rho,
            kernel: r.kernel,
            lower_bound: r.lower_bound,
            upper_bound: r.upper_bound,
            ok: r.ok,
        }));

        // Normalization residuals at the configured times.
        for t in &v.t_grid {
            let residual = match manifold {
                Manifold::Torus { dim } => {
                    let grid = if *dim == 1 { 2048 } else { 1024 };
                    scaled_residual(torus_normalization_residual(*dim, *t, grid)?, scale)
                }
                Manifold::Sphere { .. } => {
                    scaled_residual(sphere_normalization_residual(*t, 256)?, scale)
                }
            };
            let pass = residual < 1e-6;
            if !pass {
                failures += 1;
            }
            let _ = writeln!(
                summary,
                "# normalization manifold={} t={} residual={} ok={}",
                manifold.name(),
                t,
                residual,
                pass
            );
        }
        // Semigroup residuals at the standard pairs.
        for (s, t) in [(0.1, 0.1), (0.2, 0.5)] {
            let residual = match manifold {
                Manifold::Torus { dim } => {
                    if *dim == 1 {
                        torus_semigroup_residual(s, t, 0.3, 2048)?
                    } else {
                        continue;
                    }
                }
                Manifold::Sphere { .. } => sphere_semigroup_residual(s, t, 1.1, 128, 256)?,
            };
            let pass = residual < 1e-6;
            if !pass {
                failures += 1;
            }
            let _ = writeln!(
                summary,
                "# semigroup manifold={} s={} t={} residual={} ok={}",
                manifold.name(),
                s,
                t,
                residual,
                pass
            );
        }
    }

    let mut body = String::new();
    // Free constants of the upper bound, recorded rather than asserted tight.
    body.push_str("# li_yau_constants delta_sch=1 alpha=2\n");
    body.push_str("manifold,t,rho_or_delta,kernel,lower_bound,upper_bound,ok\n");
    for r in &csv_rows {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{}",
            r.manifold, r.t, r.rho_or_delta, r.kernel, r.lower_bound, r.upper_bound, r.ok
        );
    }
    body.push_str(&summary);
    let _ = writeln!(body, "# validation_failures={failures}");

    let path = PathBuf::from(&config.output);
    write_output(&path, config, &body)?;
    let mut files = vec![path.clone()];
    if json_mirror {
        files.push(write_json_mirror(&path, &csv_rows)?);
    }
    Ok(RunOutput {
        files,
        validation_failures: failures,
    })
}

/// Residual of `|scale * integral - 1|` given the unscaled residual of
/// `|integral - 1|`; exact for the multiplicative fault-injection hook.
fn scaled_residual(unscaled: f64, scale: f64) -> f64 {
    if scale == 1.0 {
        unscaled
    } else {
        // integral = 1 +- unscaled, so scale*integral - 1 = (scale - 1) +- scale*unscaled.
        (scale - 1.0).abs() + scale * unscaled
    }
}

fn output_path_for(config: &ExperimentConfig, manifold: &Manifold, multi: bool) -> PathBuf {
    let base = PathBuf::from(&config.output);
    if !multi {
        return base;
    }
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("output");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}_{}.{ext}", manifold.name()))
}

/// Write header (echoed resolved config) + body to `path`.
fn write_output(path: &Path, config: &ExperimentConfig, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut text = String::new();
    text.push_str("# rsgm experiment output\n");
    text.push_str("# config-begin\n");
    for line in config.resolved().to_toml_string()?.lines() {
        if line.is_empty() {
            text.push_str("#\n");
        } else {
            let _ = writeln!(text, "# {line}");
        }
    }
    text.push_str("# config-end\n");
    text.push_str(body);
    std::fs::write(path, text)?;
    Ok(())
}

/// Recover the resolved config from an output file header.
pub fn config_from_output_header(text: &str) -> Result<ExperimentConfig> {
    let mut in_block = false;
    let mut toml_text = String::new();
    for line in text.lines() {
        match line {
            "# config-begin" => in_block = true,
            "# config-end" => break,
            _ if in_block => {
                let stripped = line.strip_prefix("# ").or_else(|| line.strip_prefix("#"));
                match stripped {
                    Some(rest) => {
                        toml_text.push_str(rest);
                        toml_text.push('\n');
                    }
                    None => {
                        return Err(Error::Config(
                            "malformed config block in output header".into(),
                        ))
                    }
                }
            }
            _ => {}
        }
    }
    if toml_text.is_empty() {
        return Err(Error::Config("output header carries no config".into()));
    }
    ExperimentConfig::from_toml_str(&toml_text)
}

fn write_json_mirror<T: Serialize>(csv_path: &Path, rows: &[T]) -> Result<PathBuf> {
    let path = csv_path.with_extension("json");
    let text =
        serde_json::to_string_pretty(rows).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}
