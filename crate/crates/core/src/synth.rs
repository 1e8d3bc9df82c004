//! Search over polynomial feedback coefficients with a sampled Lyapunov
//! certificate.
//!
//! Candidates generalize the decentralized law: edge `e = (i, j)` carries
//! `u_e(x) = κ (θ_e^src g_i + θ_e^tgt g_j) / x^d_i` with nonnegative
//! coefficients, so nonnegativity and vanishing at the target hold by
//! construction and only the decrease condition `V̇ ≤ 0` needs checking.
//! The check evaluates `∇V(x)ᵀ ẋ` at the simplex vertices, all simplex
//! edge midpoints, the target itself, and a seeded batch of
//! Dirichlet(1,…,1) samples. The optimizer is a monotone-accepting
//! coordinate search started from the uniform coefficients `θ ≡ 1`, which
//! are feasible by the closed-form certificate of the base law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::ctmc::{edge_flow_field, Distribution};
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::simulate::integrate_ode;

/// Per-edge coefficient pair multiplying the source and target gaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeCoefficients {
    pub source: f64,
    pub target: f64,
}

/// A polynomial feedback candidate: coefficients per edge plus a shared
/// gain.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyCandidate {
    coefficients: Vec<EdgeCoefficients>,
    gain: f64,
}

#[derive(Serialize, Deserialize)]
struct CandidateJson {
    gain: f64,
    coefficients: Vec<(usize, usize, f64, f64)>,
}

impl PolyCandidate {
    pub fn new(
        g: &DirectedGraph,
        coefficients: Vec<EdgeCoefficients>,
        gain: f64,
    ) -> Result<Self> {
        if coefficients.len() != g.edge_count() {
            return Err(Error::InvalidInput(format!(
                "{} coefficient pairs supplied for {} edges",
                coefficients.len(),
                g.edge_count()
            )));
        }
        if !(gain > 0.0) {
            return Err(Error::InvalidInput(format!("gain must be positive, got {}", gain)));
        }
        for (k, c) in coefficients.iter().enumerate() {
            if !c.source.is_finite() || !c.target.is_finite() || c.source < 0.0 || c.target < 0.0
            {
                let (s, t) = g.edges()[k];
                return Err(Error::InvalidInput(format!(
                    "coefficients on edge ({}, {}) must be nonnegative",
                    s + 1,
                    t + 1
                )));
            }
        }
        Ok(Self { coefficients, gain })
    }

    /// `θ ≡ 1`: recovers the closed-form decentralized law.
    pub fn uniform(g: &DirectedGraph, gain: f64) -> Self {
        Self {
            coefficients: vec![EdgeCoefficients { source: 1.0, target: 1.0 }; g.edge_count()],
            gain,
        }
    }

    pub fn coefficients(&self) -> &[EdgeCoefficients] {
        &self.coefficients
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub(crate) fn rates_raw(&self, g: &DirectedGraph, xd: &[f64], x: &[f64]) -> Vec<f64> {
        let gaps: Vec<f64> = x.iter().zip(xd).map(|(xi, di)| (xi - di) * (xi - di)).collect();
        g.edges()
            .iter()
            .zip(&self.coefficients)
            .map(|(&(s, t), c)| self.gain * (c.source * gaps[s] + c.target * gaps[t]) / xd[s])
            .collect()
    }

    /// Closed-loop velocity under this candidate.
    pub(crate) fn field_raw(&self, g: &DirectedGraph, xd: &[f64], x: &[f64]) -> Vec<f64> {
        edge_flow_field(g, &self.rates_raw(g, xd, x), x)
    }

    /// `{"gain": κ, "coefficients": [[i, j, θ_src, θ_tgt], …]}`, 1-based.
    pub fn to_json_value(&self, g: &DirectedGraph) -> serde_json::Value {
        let json = CandidateJson {
            gain: self.gain,
            coefficients: g
                .edges()
                .iter()
                .zip(&self.coefficients)
                .map(|(&(s, t), c)| (s + 1, t + 1, c.source, c.target))
                .collect(),
        };
        serde_json::to_value(json).expect("candidate serialization cannot fail")
    }

    pub fn from_json_str(g: &DirectedGraph, s: &str) -> Result<Self> {
        let parsed: CandidateJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidInput(format!("malformed candidate JSON: {}", e)))?;
        let mut coefficients = vec![None; g.edge_count()];
        for (i, j, src, tgt) in parsed.coefficients {
            if i == 0 || j == 0 {
                return Err(Error::InvalidInput("vertex indices are 1-based".into()));
            }
            let k = g
                .edge_position(i - 1, j - 1)
                .ok_or_else(|| Error::InvalidInput(format!("unknown edge ({}, {})", i, j)))?;
            coefficients[k] = Some(EdgeCoefficients { source: src, target: tgt });
        }
        let coefficients: Vec<EdgeCoefficients> = coefficients
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                c.ok_or_else(|| {
                    let (s, t) = g.edges()[k];
                    Error::InvalidInput(format!("missing coefficients for edge ({}, {})", s + 1, t + 1))
                })
            })
            .collect::<Result<_>>()?;
        Self::new(g, coefficients, parsed.gain)
    }
}

/// Exclusion radius and strictness settings for the sampled certificate.
#[derive(Debug, Clone, Copy)]
pub struct CertificateOptions {
    /// Samples within this L1 distance of the target are only required to
    /// have `V̇ ≤ 0`, not strictly negative.
    pub exclusion_radius: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self { exclusion_radius: 1e-6 }
    }
}

/// Outcome of a sampled certificate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub samples_checked: usize,
    /// Most positive `V̇` observed away from the target.
    pub max_vdot: f64,
    /// Smallest margin `−V̇` observed away from the target.
    pub min_margin: f64,
    pub passed: bool,
}

fn vdot(g: &DirectedGraph, xd: &[f64], candidate: &PolyCandidate, x: &[f64]) -> f64 {
    let field = candidate.field_raw(g, xd, x);
    x.iter().zip(xd).zip(&field).map(|((xi, di), f)| xi / di * f).sum()
}

pub(crate) fn sample_simplex(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Dirichlet(1,…,1) via normalized exponentials: uniform on the simplex.
    let mut v: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
    v
}

/// Evaluate `V̇` under `candidate` at the target, every simplex vertex,
/// every simplex edge midpoint, and `n_samples` uniform simplex samples.
/// Passes iff `V̇ ≤ 0` everywhere and `V̇ < 0` at every point farther than
/// the exclusion radius from the target. Deterministic given the seed.
pub fn certificate_check(
    g: &DirectedGraph,
    target: &Distribution,
    candidate: &PolyCandidate,
    n_samples: usize,
    seed: u64,
    opts: &CertificateOptions,
) -> CertificateReport {
    assert!(n_samples >= 1, "certificate needs at least one sample");
    let m = g.vertex_count();
    let xd = target.densities();
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n_samples + m * (m + 1) / 2 + 1);
    points.push(xd.to_vec());
    for v in 0..m {
        let mut p = vec![0.0; m];
        p[v] = 1.0;
        points.push(p);
    }
    for a in 0..m {
        for b in (a + 1)..m {
            let mut p = vec![0.0; m];
            p[a] = 0.5;
            p[b] = 0.5;
            points.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        points.push(sample_simplex(m, &mut rng));
    }

    let mut passed = true;
    let mut max_vdot = f64::NEG_INFINITY;
    let mut min_margin = f64::INFINITY;
    for p in &points {
        let value = vdot(g, xd, candidate, p);
        if value > 0.0 {
            passed = false;
        }
        let distance: f64 = p.iter().zip(xd).map(|(a, b)| (a - b).abs()).sum();
        if distance > opts.exclusion_radius {
            max_vdot = max_vdot.max(value);
            min_margin = min_margin.min(-value);
            if value >= 0.0 {
                passed = false;
            }
        }
    }
    CertificateReport { samples_checked: points.len(), max_vdot, min_margin, passed }
}

/// What the optimizer maximizes along the reference trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// Fitted decay rate of `log V` (higher is better).
    #[default]
    ConvergenceRate,
    /// Negated time for `V` to fall below `1e−8 · V(x⁰)`.
    ConvergenceTime,
}

/// Settings for [`optimize_gains`].
#[derive(Debug, Clone)]
pub struct SearchOptions {
    pub objective: Objective,
    pub budget: usize,
    pub seed: u64,
    pub gain: f64,
    /// Start of the reference trajectory; uniform when absent.
    pub reference_initial: Option<Distribution>,
    pub horizon: f64,
    pub dt: f64,
    pub certificate_samples: usize,
    pub certificate: CertificateOptions,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            objective: Objective::ConvergenceRate,
            budget: 200,
            seed: 0,
            gain: 1.0,
            reference_initial: None,
            horizon: 5.0,
            dt: 1e-3,
            certificate_samples: 2000,
            certificate: CertificateOptions::default(),
        }
    }
}

/// Reference-trajectory metrics for one candidate.
#[derive(Debug, Clone, Copy)]
struct TrajectoryScore {
    /// Least-squares slope of `−log V(t)`.
    rate: f64,
    /// First sampled time with `V ≤ 1e−8 · V(x⁰)`, else infinity.
    time: f64,
}

fn score_candidate(
    g: &DirectedGraph,
    target: &Distribution,
    candidate: &PolyCandidate,
    x0: &Distribution,
    horizon: f64,
    dt: f64,
) -> Result<TrajectoryScore> {
    let xd = target.densities();
    let traj = integrate_ode(|x| candidate.field_raw(g, xd, x), x0, horizon, dt)?;
    let v0 = lyapunov(xd, x0.densities());
    let threshold = 1e-8 * v0;
    let mut time = f64::INFINITY;
    let mut points = Vec::with_capacity(traj.len());
    for (&t, state) in traj.times().iter().zip(traj.states()) {
        let v = lyapunov(xd, state.densities());
        if v <= threshold && time.is_infinite() {
            time = t;
        }
        if v > 1e-300 {
            points.push((t, v.ln()));
        }
    }
    if points.len() < 2 {
        // Started at (or numerically on) the target; nothing to fit.
        return Ok(TrajectoryScore { rate: 0.0, time: 0.0 });
    }
    // Least-squares slope of log V against time.
    let n = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_v = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (t, v) in &points {
        cov += (t - mean_t) * (v - mean_v);
        var += (t - mean_t) * (t - mean_t);
    }
    let slope = if var > 0.0 { cov / var } else { 0.0 };
    Ok(TrajectoryScore { rate: -slope, time })
}

fn lyapunov(xd: &[f64], x: &[f64]) -> f64 {
    let mut x_part = 0.0;
    let mut d_part = 0.0;
    for (xi, di) in x.iter().zip(xd) {
        x_part += xi * xi / di;
        d_part += di * di / di;
    }
    0.5 * (x_part - d_part)
}

impl TrajectoryScore {
    fn objective(&self, which: Objective) -> f64 {
        match which {
            Objective::ConvergenceRate => self.rate,
            Objective::ConvergenceTime => -self.time,
        }
    }
}

/// Monotone-accepting coordinate search over the candidate coefficients.
///
/// Starts from `θ ≡ 1`, perturbs one coefficient at a time, and accepts a
/// move only when the certificate still passes, the objective improves,
/// and the convergence time does not regress. Every candidate evaluation
/// (accepted or not) counts against the budget. Returns the best feasible
/// candidate with its certificate report.
pub fn optimize_gains(
    g: &DirectedGraph,
    target: &Distribution,
    opts: &SearchOptions,
) -> Result<(PolyCandidate, CertificateReport)> {
    if opts.budget < 1 {
        return Err(Error::InvalidInput("search budget must be at least 1".into()));
    }
    let x0 = match &opts.reference_initial {
        Some(d) => d.clone(),
        None => Distribution::uniform(g.vertex_count()),
    };
    let mut evaluations = 0usize;
    let evaluate = |cand: &PolyCandidate,
                        evaluations: &mut usize|
     -> Result<(CertificateReport, TrajectoryScore)> {
        let eval_seed = opts.seed.wrapping_add(*evaluations as u64);
        *evaluations += 1;
        let report = certificate_check(
            g,
            target,
            cand,
            opts.certificate_samples,
            eval_seed,
            &opts.certificate,
        );
        let score = score_candidate(g, target, cand, &x0, opts.horizon, opts.dt)?;
        Ok((report, score))
    };

    let mut best = PolyCandidate::uniform(g, opts.gain);
    let (mut best_report, mut best_score) = evaluate(&best, &mut evaluations)?;
    if !best_report.passed {
        return Err(Error::Infeasible(
            "the uniform-coefficient candidate failed its certificate".into(),
        ));
    }

    let mut step = 0.5;
    let coords = 2 * g.edge_count();
    'outer: while evaluations < opts.budget && step >= 1e-3 {
        let mut improved = false;
        for coord in 0..coords {
            for direction in [1.0, -1.0] {
                if evaluations >= opts.budget {
                    break 'outer;
                }
                let mut coefficients = best.coefficients().to_vec();
                let slot = if coord % 2 == 0 {
                    &mut coefficients[coord / 2].source
                } else {
                    &mut coefficients[coord / 2].target
                };
                let proposed = (*slot + direction * step).max(0.0);
                if proposed == *slot {
                    continue;
                }
                *slot = proposed;
                let candidate = PolyCandidate::new(g, coefficients, opts.gain)?;
                let (report, score) = evaluate(&candidate, &mut evaluations)?;
                let better = score.objective(opts.objective)
                    > best_score.objective(opts.objective) + 1e-12;
                if report.passed && better && score.time <= best_score.time {
                    best = candidate;
                    best_report = report;
                    best_score = score;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((best, best_report))
}
