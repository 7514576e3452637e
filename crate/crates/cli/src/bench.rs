//! Timing harness comparing the three kernel-evaluation paths.
//!
//! Methodology: median of 3 runs after one warmup, wall-clock. Every record
//! carries an accuracy audit on 32 spot distances against a tight-tolerance
//! reference; failed audits exclude a record from speedup claims.

use std::time::Instant;

use anyhow::{bail, Result};
use rand::Rng;
use rand::SeedableRng as _;
use serde::Serialize;

use ske::engine::{evaluate_kernel, evaluate_kernel_trapezoid, EvaluationRequest};
use ske::models::SpectralModel;
use ske::truncation::truncation_bound;

#[derive(Copy, Clone, PartialEq, Eq, Debug)]
pub enum Method {
    AdaptiveNufft,
    AdaptiveDirect,
    TrapezoidNufft,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s.trim() {
            "adaptive+nufft" => Ok(Method::AdaptiveNufft),
            "adaptive+direct" => Ok(Method::AdaptiveDirect),
            "trapezoid+nufft" => Ok(Method::TrapezoidNufft),
            other => bail!("unknown method '{other}'"),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Method::AdaptiveNufft => "adaptive+nufft",
            Method::AdaptiveDirect => "adaptive+direct",
            Method::TrapezoidNufft => "trapezoid+nufft",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub method: String,
    pub n: usize,
    pub eps: f64,
    /// Median wall time of 3 runs after 1 warmup; 0 when not run.
    pub seconds: f64,
    pub total_nodes: usize,
    pub audit_pass: bool,
    /// "capped" or "infeasible" when the run was skipped or failed guards.
    pub note: Option<String>,
    /// Worst audited error over the 32 spot distances, kernel units.
    pub audit_error: f64,
}

/// Direct-path cost guard: projected runs longer than this are recorded as
/// capped rather than executed.
const DIRECT_CAP_SECONDS: f64 = 120.0;

pub fn run_benchmark(
    model: &SpectralModel,
    ns: &[usize],
    eps_grid: &[f64],
    methods: &[Method],
    m: usize,
    trapezoid_cap: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>> {
    let mut records = Vec::new();
    for &eps in eps_grid {
        for &n in ns {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ n as u64);
            let distances: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            // Audit targets: 32 spot distances checked against a reference
            // at 100x tighter tolerance.
            let spots: Vec<f64> = (0..32).map(|i| distances[i % n]).collect();
            let ref_req = EvaluationRequest::new(
                model.clone(),
                spots.clone(),
                (eps / 100.0).max(1e-13),
            )
            .with_nodes_per_panel(m);
            let reference = evaluate_kernel(&ref_req)?;

            for &method in methods {
                let record = match method {
                    Method::AdaptiveNufft => {
                        time_adaptive(model, &distances, &spots, &reference.values, eps, m, false)?
                    }
                    Method::AdaptiveDirect => {
                        time_adaptive(model, &distances, &spots, &reference.values, eps, m, true)?
                    }
                    Method::TrapezoidNufft => trapezoid_record(
                        model,
                        &distances,
                        &spots,
                        &reference.values,
                        eps,
                        trapezoid_cap,
                    )?,
                };
                let mut record = record;
                record.n = n;
                record.eps = eps;
                records.push(record);
            }
        }
    }
    Ok(records)
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[1]
}

fn audit(spots: &[f64], got: &[f64], reference: &[f64], eps: f64, scale: f64) -> (bool, f64) {
    let mut worst = 0.0f64;
    for k in 0..spots.len() {
        worst = worst.max((got[k] - reference[k]).abs());
    }
    (worst <= eps * scale, worst)
}

fn time_adaptive(
    model: &SpectralModel,
    distances: &[f64],
    spots: &[f64],
    reference: &[f64],
    eps: f64,
    m: usize,
    direct: bool,
) -> Result<BenchRecord> {
    let mut req = EvaluationRequest::new(model.clone(), distances.to_vec(), eps)
        .with_nodes_per_panel(m);
    req.force_direct_sum = direct;
    let name = if direct { "adaptive+direct" } else { "adaptive+nufft" };

    if direct {
        // Project the direct cost from a cheap NUFFT-path dry run.
        let mut probe = req.clone();
        probe.force_direct_sum = false;
        let out = evaluate_kernel(&probe)?;
        let ops: f64 = out
            .panels
            .iter()
            .map(|p| p.active as f64 * 3.0 * m as f64 * (1 + p.splits) as f64)
            .sum();
        let projected = ops / 5e7;
        if projected > DIRECT_CAP_SECONDS {
            return Ok(BenchRecord {
                method: name.into(),
                n: 0,
                eps,
                seconds: projected,
                total_nodes: out.total_nodes,
                audit_pass: false,
                note: Some("capped".into()),
                audit_error: f64::NAN,
            });
        }
    }

    let warm = evaluate_kernel(&req)?;
    let mut times = [0.0f64; 3];
    for t in times.iter_mut() {
        let start = Instant::now();
        let _ = evaluate_kernel(&req)?;
        *t = start.elapsed().as_secs_f64();
    }

    // Audit on the spot distances.
    let spot_req = {
        let mut r = EvaluationRequest::new(model.clone(), spots.to_vec(), eps)
            .with_nodes_per_panel(m);
        r.force_direct_sum = direct;
        r
    };
    let spot_out = evaluate_kernel(&spot_req)?;
    let (pass, worst) = audit(spots, &spot_out.values, reference, eps, warm.scale);
    Ok(BenchRecord {
        method: name.into(),
        n: 0,
        eps,
        seconds: median3(times),
        total_nodes: warm.total_nodes,
        audit_pass: pass,
        note: None,
        audit_error: worst,
    })
}

/// Trapezoid path: pick the truncation point from the tail law, then sweep
/// the node count upward until the audit passes or the guard trips.
fn trapezoid_record(
    model: &SpectralModel,
    distances: &[f64],
    spots: &[f64],
    reference: &[f64],
    eps: f64,
    cap: usize,
) -> Result<BenchRecord> {
    // Scale for the audit: K(0).
    let k0 = evaluate_kernel(
        &EvaluationRequest::new(model.clone(), vec![0.0], 1e-10).with_nodes_per_panel(1024),
    )?
    .scale;
    // Truncation point from the analytic tail (fallback: frequency 1e5).
    let b_end = match model.tail_law() {
        Some(t) => {
            let mut b = 10.0f64;
            while truncation_bound(t.c(), t.beta, b, 0.0).unwrap_or(f64::INFINITY)
                > 0.25 * eps * k0
                && b < 1e9
            {
                b *= 2.0;
            }
            b
        }
        None => 1e5,
    };

    let mut m = 1usize << 16;
    let mut best: Option<(usize, f64, f64)> = None; // (m, seconds, worst)
    loop {
        if m > cap {
            break;
        }
        let h = b_end / (m - 1) as f64;
        let delta = (eps / 10.0).min(1e-9).max(1e-15);
        let warm = evaluate_kernel_trapezoid(model, spots, h, m, delta)?;
        let (pass, worst) = audit(spots, &warm.0, reference, eps, k0);
        if pass {
            // Time the full-distance evaluation at this node count.
            let mut times = [0.0f64; 3];
            let _ = evaluate_kernel_trapezoid(model, distances, h, m, delta)?;
            for t in times.iter_mut() {
                let start = Instant::now();
                let _ = evaluate_kernel_trapezoid(model, distances, h, m, delta)?;
                *t = start.elapsed().as_secs_f64();
            }
            return Ok(BenchRecord {
                method: "trapezoid+nufft".into(),
                n: 0,
                eps,
                seconds: median3(times),
                total_nodes: m,
                audit_pass: true,
                note: None,
                audit_error: worst,
            });
        }
        best = Some((m, 0.0, worst));
        m *= 4;
    }
    // Never passed the audit within the guard.
    let (m_last, _, worst) = best.unwrap_or((cap, 0.0, f64::NAN));
    Ok(BenchRecord {
        method: "trapezoid+nufft".into(),
        n: 0,
        eps,
        seconds: 0.0,
        total_nodes: m_last,
        audit_pass: false,
        note: Some("infeasible".into()),
        audit_error: worst,
    })
}
