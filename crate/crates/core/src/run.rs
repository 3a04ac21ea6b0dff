//! Subcommand dispatch and machine-readable output.
//!
//! Every command writes its artifacts under the output directory and returns
//! a process exit code: 0 on success, 1 when a statistical check fails, 2 on
//! usage errors (handled by the binary). CSV numbers carry 17 significant
//! digits so outputs are bit-exact regression material; every report embeds
//! the resolved config it was produced from.

use crate::config::RunConfig;
use crate::dual::{simulate_coalescent, simulate_dual, DualEvent, DualEventKind};
use crate::duality::{dual_side, duality_gap, forward_side, GapReport, MomentEstimate};
use crate::forward::{
    gaussian_increments, moment_ode, simulate_ensemble, simulate_path_with_noise,
    simulate_sve_path, EnsembleRow,
};
use crate::measure::SeedBankMeasure;
use crate::streams::{stream_rng, StreamPurpose};
use crate::wright_fisher::{build_model, rescaled_ensemble, WfState};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Sve,
    Wf,
    Dual,
    Coalescent,
    DualityCheck,
    ScalingCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Sve => "sve",
            Command::Wf => "wf",
            Command::Dual => "dual",
            Command::Coalescent => "coalescent",
            Command::DualityCheck => "duality-check",
            Command::ScalingCheck => "scaling-check",
        }
    }
}

/// Full decimal precision: 17 significant digits round-trip any f64.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct DualityReport<'a> {
    forward: MomentEstimate,
    dual: MomentEstimate,
    z: f64,
    pass: bool,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct ScalingReport<'a> {
    embedded_mean: f64,
    embedded_se: f64,
    ode_mean: f64,
    abs_diff: f64,
    tolerance: f64,
    pass: bool,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct DualFinal {
    n: u64,
    flags: Vec<(f64, u64)>,
}

#[derive(Serialize)]
struct PartitionFinal {
    blocks: Vec<Vec<u32>>,
    flags: Vec<f64>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(dir, name, &text)
}

fn write_meta(dir: &Path, command: Command, cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    write_json(
        dir,
        &format!("{}_meta.json", command.name().replace('-', "_")),
        &Meta {
            command: command.name(),
            seed: cfg.sim.seed,
            config_hash: cfg.config_hash(),
            config: cfg,
        },
    )
}

fn ensemble_csv(rows: &[EnsembleRow]) -> String {
    let mut out = String::from("t,mean_x,var_x,se_x\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_float(r.t),
            format_float(r.mean_x),
            format_float(r.var_x),
            format_float(r.se_x)
        );
    }
    out
}

fn event_csv(events: &[DualEvent]) -> String {
    let mut out = String::from("time,event_kind,detail\n");
    for e in events {
        let kind = match e.kind {
            DualEventKind::Deactivate => "deactivate",
            DualEventKind::Reactivate => "reactivate",
            DualEventKind::Coalesce => "coalesce",
        };
        let detail = match e.rate {
            Some(r) => format!("lambda={}", format_float(r)),
            None => String::new(),
        };
        let _ = writeln!(out, "{},{kind},{detail}", format_float(e.time));
    }
    out
}

/// Step indices to record: every `stride`-th step plus start and end.
fn record_steps(steps: usize, stride: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (0..=steps).step_by(stride).collect();
    if *ks.last().unwrap() != steps {
        ks.push(steps);
    }
    ks
}

/// Dispatch a validated config. Returns the exit code.
pub fn run(command: Command, cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<i32> {
    match command {
        Command::Forward => {
            let d = cfg.build_discretized()?;
            let z0 = cfg.initial_state(&d)?;
            let steps = (cfg.sim.t_max / cfg.sim.dt).ceil() as usize;
            if cfg.sim.reps == 1 {
                let noise = gaussian_increments(cfg.sim.seed, 0, steps, cfg.sim.dt);
                let path =
                    simulate_path_with_noise(&z0, &d, cfg.sim.dt, &noise, cfg.sim.record_stride)?;
                let mut out = String::from("t,x");
                for i in 1..=d.len() {
                    let _ = write!(out, ",y_{i}");
                }
                out.push('\n');
                for ((t, x), y) in path.times.iter().zip(&path.xs).zip(&path.ys) {
                    let _ = write!(out, "{},{}", format_float(*t), format_float(*x));
                    for v in y {
                        let _ = write!(out, ",{}", format_float(*v));
                    }
                    out.push('\n');
                }
                write_file(out_dir, "forward_path.csv", &out)?;
            } else {
                let ks = record_steps(steps, cfg.sim.record_stride);
                let rows = simulate_ensemble(&z0, &d, cfg.sim.dt, cfg.sim.seed, cfg.sim.reps, &ks)?;
                write_file(out_dir, "forward_ensemble.csv", &ensemble_csv(&rows))?;
            }
            write_meta(out_dir, command, cfg)?;
            Ok(0)
        }
        Command::Sve => {
            let mu = cfg.build_measure()?;
            let needs_atoms = matches!(cfg.init.y, crate::config::YInit::PerAtom(_));
            let steps = (cfg.sim.t_max / cfg.sim.dt).ceil() as usize;
            let y_fn: Box<dyn Fn(f64) -> f64 + Sync> = if needs_atoms {
                let d = cfg.build_discretized()?;
                let pairs: Vec<(f64, f64)> = match &cfg.init.y {
                    crate::config::YInit::PerAtom(vs) => d
                        .atoms()
                        .iter()
                        .zip(vs)
                        .map(|(a, &v)| (a.rate, v))
                        .collect(),
                    _ => unreachable!(),
                };
                Box::new(move |rate: f64| {
                    pairs
                        .iter()
                        .find(|(r, _)| *r == rate)
                        .map(|(_, v)| *v)
                        .unwrap_or(0.0)
                })
            } else {
                let v = match cfg.init.y {
                    crate::config::YInit::Scalar(v) => v,
                    _ => unreachable!(),
                };
                Box::new(move |_| v)
            };
            // The SVE needs the full measure; binning only affects y lookups.
            let effective: SeedBankMeasure = if needs_atoms {
                cfg.build_discretized()?.to_measure()
            } else {
                mu
            };
            if cfg.sim.reps == 1 {
                let noise = gaussian_increments(cfg.sim.seed, 0, steps, cfg.sim.dt);
                let xs = simulate_sve_path(cfg.init.x, &y_fn, &effective, cfg.sim.dt, &noise)?;
                let mut out = String::from("t,x\n");
                for (k, x) in xs.iter().enumerate() {
                    if k % cfg.sim.record_stride == 0 || k == xs.len() - 1 {
                        let _ = writeln!(
                            out,
                            "{},{}",
                            format_float(k as f64 * cfg.sim.dt),
                            format_float(*x)
                        );
                    }
                }
                write_file(out_dir, "sve_path.csv", &out)?;
            } else {
                let ks = record_steps(steps, cfg.sim.record_stride);
                let mut sums = vec![0.0; ks.len()];
                let mut sumsqs = vec![0.0; ks.len()];
                for r in 0..cfg.sim.reps {
                    let noise = gaussian_increments(cfg.sim.seed, r, steps, cfg.sim.dt);
                    let xs = simulate_sve_path(cfg.init.x, &y_fn, &effective, cfg.sim.dt, &noise)?;
                    for (slot, &k) in ks.iter().enumerate() {
                        sums[slot] += xs[k];
                        sumsqs[slot] += xs[k] * xs[k];
                    }
                }
                let n = cfg.sim.reps as f64;
                let rows: Vec<EnsembleRow> = ks
                    .iter()
                    .enumerate()
                    .map(|(slot, &k)| {
                        let mean = sums[slot] / n;
                        let var = if cfg.sim.reps > 1 {
                            ((sumsqs[slot] - sums[slot] * sums[slot] / n) / (n - 1.0)).max(0.0)
                        } else {
                            0.0
                        };
                        EnsembleRow {
                            t: k as f64 * cfg.sim.dt,
                            mean_x: mean,
                            var_x: var,
                            se_x: (var / n).sqrt(),
                        }
                    })
                    .collect();
                write_file(out_dir, "sve_ensemble.csv", &ensemble_csv(&rows))?;
            }
            write_meta(out_dir, command, cfg)?;
            Ok(0)
        }
        Command::Wf => {
            let mu = cfg.build_measure()?;
            let n = cfg.wf.n.ok_or_else(|| anyhow::anyhow!("wf.N: required"))?;
            let grid = cfg.measure.bins.zip(cfg.measure.cutoff);
            let params = build_model(&mu, n, grid)?;
            let d = params.discretized_measure()?;
            let z0_diff = cfg.initial_state(&d)?;
            let z0 = WfState::from_frequencies_rounded(z0_diff.x, &z0_diff.y, &params)?;
            let t_max = cfg.wf.t_max.unwrap_or(cfg.sim.t_max);
            let reps = cfg.wf.reps.unwrap_or(cfg.sim.reps);
            let total = (n as f64 * t_max).floor() as u64;
            let gens: Vec<u64> = {
                let mut g: Vec<u64> =
                    (0..=total).step_by(cfg.sim.record_stride).collect();
                if *g.last().unwrap() != total {
                    g.push(total);
                }
                g
            };
            let rows = rescaled_ensemble(&params, &z0, t_max, reps, cfg.sim.seed, &gens)?;
            write_file(out_dir, "wf_ensemble.csv", &ensemble_csv(&rows))?;
            write_meta(out_dir, command, cfg)?;
            Ok(0)
        }
        Command::Dual => {
            let mu = cfg.build_measure()?;
            let s0 = cfg.initial_dual_state()?;
            let mut rng = stream_rng(cfg.sim.seed, 0, StreamPurpose::DualChain);
            let (s_t, events) = simulate_dual(&s0, &mu, cfg.sim.t_max, &mut rng);
            write_file(out_dir, "dual_events.csv", &event_csv(&events))?;
            write_json(
                out_dir,
                "dual_final.json",
                &DualFinal {
                    n: s_t.active(),
                    flags: s_t.dormant().to_vec(),
                },
            )?;
            write_meta(out_dir, command, cfg)?;
            Ok(0)
        }
        Command::Coalescent => {
            let mu = cfg.build_measure()?;
            let p0 = cfg.initial_partition()?;
            let mut rng = stream_rng(cfg.sim.seed, 0, StreamPurpose::Coalescent);
            let (p_t, events) = simulate_coalescent(&p0, &mu, cfg.sim.t_max, &mut rng);
            write_file(out_dir, "coalescent_events.csv", &event_csv(&events))?;
            write_json(
                out_dir,
                "coalescent_final.json",
                &PartitionFinal {
                    blocks: p_t.blocks().to_vec(),
                    flags: p_t.flags().to_vec(),
                },
            )?;
            write_meta(out_dir, command, cfg)?;
            Ok(0)
        }
        Command::DualityCheck => {
            let report = duality_check(cfg)?;
            let pass = report.pass;
            write_json(out_dir, "duality_report.json", &report)?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::ScalingCheck => {
            let mu = cfg.build_measure()?;
            let n = cfg.wf.n.ok_or_else(|| anyhow::anyhow!("wf.N: required"))?;
            let grid = cfg.measure.bins.zip(cfg.measure.cutoff);
            let params = build_model(&mu, n, grid)?;
            let d = params.discretized_measure()?;
            let z0_diff = cfg.initial_state(&d)?;
            let z0 = WfState::from_frequencies_rounded(z0_diff.x, &z0_diff.y, &params)?;
            let t_max = cfg.wf.t_max.unwrap_or(cfg.sim.t_max);
            let reps = cfg.wf.reps.unwrap_or(cfg.sim.reps);
            let total = (n as f64 * t_max).floor() as u64;
            let rows = rescaled_ensemble(&params, &z0, t_max, reps, cfg.sim.seed, &[total])?;
            // Compare against the diffusion started from the state the chain
            // actually starts from (the rounded lattice point).
            let embedded = crate::wright_fisher::embed(&z0, &params);
            let ode = moment_ode(&embedded, &d, t_max)?;
            let diff = (rows[0].mean_x - ode[0]).abs();
            let pass = diff <= cfg.scaling.tolerance;
            write_json(
                out_dir,
                "scaling_report.json",
                &ScalingReport {
                    embedded_mean: rows[0].mean_x,
                    embedded_se: rows[0].se_x,
                    ode_mean: ode[0],
                    abs_diff: diff,
                    tolerance: cfg.scaling.tolerance,
                    pass,
                    seed: cfg.sim.seed,
                    config_hash: cfg.config_hash(),
                    config: cfg,
                },
            )?;
            Ok(if pass { 0 } else { 1 })
        }
    }
}

/// Build the duality-check report without touching the filesystem (the
/// acceptance suite compares the serialized bytes of two runs).
pub fn duality_check_report_bytes(cfg: &RunConfig) -> anyhow::Result<Vec<u8>> {
    let report = duality_check(cfg)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn duality_check(cfg: &RunConfig) -> anyhow::Result<DualityReport<'_>> {
    let d = cfg.build_discretized()?;
    let z0 = cfg.initial_state(&d)?;
    let s0 = cfg.initial_dual_state()?;
    let t = cfg.sim.t_max;
    let fwd = forward_side(&z0, &s0, &d, t, cfg.sim.reps, cfg.sim.dt, cfg.sim.seed)?;
    // Both sides run on the same discrete atoms so the identity is exact
    // rather than binning-limited.
    let y = cfg.y_at(&d);
    let dual = dual_side(z0.x, &y, &s0, &d.to_measure(), t, cfg.sim.reps, cfg.sim.seed);
    let gap: GapReport = duality_gap(&fwd, &dual)?;
    let se_ok = fwd.se <= cfg.duality.target_se && dual.se <= cfg.duality.target_se;
    Ok(DualityReport {
        forward: fwd,
        dual,
        z: gap.z,
        pass: gap.pass && se_ok,
        seed: cfg.sim.seed,
        config_hash: cfg.config_hash(),
        config: cfg,
    })
}
