//! Aggregated verification of the stability claims: stationarity residual,
//! spectrum, Lyapunov monotonicity along trajectories, and the deviation
//! between mean-field and finite-population runs.

use serde::Serialize;
use serde_json::json;

use crate::ctmc::{l1_distance, spectral_check, Distribution, Generator};
use crate::error::{Error, Result};
use crate::feedback::FeedbackLaw;
use crate::simulate::{AgentTrajectory, Trajectory};

/// One named check: what was measured against which tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
}

impl CheckRecord {
    pub fn new(name: &str, passed: bool, measured: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), passed, measured, tolerance }
    }
}

/// A list of checks; passes iff every component check passes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CertifySummary {
    pub checks: Vec<CheckRecord>,
}

impl CertifySummary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, check: CheckRecord) {
        self.checks.push(check);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        json!({ "checks": self.checks, "passed": self.passed() })
    }
}

/// Checks that `xd` is stationary for `gen` (residual `‖Gᵀxd‖_∞ ≤ tol`),
/// that the zero eigenvalue is simple, and that the rest of the spectrum
/// has negative real part.
pub fn verify_stationary(gen: &Generator, xd: &Distribution, tol: f64) -> CertifySummary {
    let residual = gen
        .apply_transpose(xd.densities())
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let report = spectral_check(gen);
    let margin = report.max_nonzero_real_part.unwrap_or(f64::NEG_INFINITY);
    let mut summary = CertifySummary::new();
    summary.push(CheckRecord::new("stationarity_residual", residual <= tol, residual, tol));
    summary.push(CheckRecord::new(
        "zero_eigenvalue_simple",
        report.zero_multiplicity == 1,
        report.zero_multiplicity as f64,
        1.0,
    ));
    summary.push(CheckRecord::new("spectral_margin_negative", margin < 0.0, margin, 0.0));
    summary
}

/// Passes iff `V` is strictly decreasing at every consecutive sample pair
/// whose first state is farther than `exclusion` from the target in L1.
/// Vacuously true when no pair qualifies.
pub fn lyapunov_monotone(traj: &Trajectory, law: &FeedbackLaw, exclusion: f64) -> CheckRecord {
    let mut worst = f64::NEG_INFINITY;
    let mut passed = true;
    let mut qualifying = 0usize;
    for pair in traj.states().windows(2) {
        if pair[0].l1_distance(law.target()) <= exclusion {
            continue;
        }
        qualifying += 1;
        let delta = law.lyapunov_value(&pair[1]) - law.lyapunov_value(&pair[0]);
        worst = worst.max(delta);
        if delta >= 0.0 {
            passed = false;
        }
    }
    let measured = if qualifying == 0 { f64::NEG_INFINITY } else { worst };
    CheckRecord::new("lyapunov_monotone", passed, measured, 0.0)
}

/// Supremum over agent event times of the L1 distance between the
/// empirical density and the linearly interpolated mean-field state.
pub fn deviation_metric(ode: &Trajectory, agents: &AgentTrajectory) -> Result<f64> {
    let ode_start = *ode.times().first().unwrap_or(&0.0);
    let ode_end = ode.final_time();
    if ode_start > agents.horizon() || ode_end < 0.0 {
        return Err(Error::InvalidInput("trajectory time ranges do not overlap".into()));
    }
    let mut sup = 0.0f64;
    let mut compare = |t: f64, counts: &[u64]| {
        if let Some(state) = ode.interpolate(t) {
            let density: Vec<f64> =
                counts.iter().map(|&c| c as f64 / agents.n_agents() as f64).collect();
            sup = sup.max(l1_distance(&density, &state));
        }
    };
    compare(0.0, agents.initial_counts());
    for (&t, counts) in agents.event_times().iter().zip(agents.counts()) {
        compare(t, counts);
    }
    Ok(sup)
}
