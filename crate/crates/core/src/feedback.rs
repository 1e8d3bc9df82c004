//! Decentralized density feedback with zero control at equilibrium.
//!
//! For a strictly positive target `x^d` on a strongly connected bidirected
//! graph, each edge `e = (i, j)` carries the per-capita rate
//!
//! ```text
//! u_e(x) = κ (g_i + g_j) / x^d_i,    g_k = (x_k − x^d_k)²
//! ```
//!
//! The rate depends only on the densities at the edge's endpoints, is
//! nonnegative, bounded on the simplex, and vanishes exactly at the
//! target, so agents stop switching once the swarm has converged. The
//! quadratic form `V(x) = ½(xᵀDx − x^dᵀDx^d)` with `D = diag(1/x^d)` is a
//! global Lyapunov function for the closed loop: along trajectories
//!
//! ```text
//! V̇(x) = −(κ/2) Σ_{(i,j)∈E} (g_i + g_j) (x_i/x^d_i − x_j/x^d_j)²
//! ```
//!
//! which is strictly negative away from the target and zero at it.

use serde::{Deserialize, Serialize};

use crate::ctmc::{edge_flow_field, Distribution, RateAssignment};
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;

/// Constant `γ` in the pairwise sum-of-squares form of `V̇`.
///
/// Expanding `rᵀGr` over ordered vertex pairs produces each unordered pair
/// twice, so the edge-list sum carries a factor one half. The value is
/// pinned by the finite-difference oracle test against `dV/dt` along
/// integrated trajectories.
pub const LYAPUNOV_DERIVATIVE_SCALE: f64 = 0.5;

/// The decentralized density-to-rates map for one target distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    graph: DirectedGraph,
    target: Distribution,
    gain: f64,
}

#[derive(Serialize, Deserialize)]
struct LawJson {
    target: Vec<f64>,
    gain: f64,
}

impl FeedbackLaw {
    /// Requires a strongly connected bidirected graph, a strictly positive
    /// target, and a positive gain.
    pub fn new(graph: DirectedGraph, target: Distribution, gain: f64) -> Result<Self> {
        if target.len() != graph.vertex_count() {
            return Err(Error::InvalidInput("target size does not match graph".into()));
        }
        if !target.is_strictly_positive() {
            return Err(Error::Infeasible(
                "feedback law requires a strictly positive target distribution".into(),
            ));
        }
        if !graph.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        if !graph.is_bidirected() {
            return Err(Error::Infeasible("feedback law requires a bidirected graph".into()));
        }
        if !(gain > 0.0) {
            return Err(Error::InvalidInput(format!("gain must be positive, got {}", gain)));
        }
        Ok(Self { graph, target, gain })
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn target(&self) -> &Distribution {
        &self.target
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Global bound on any edge rate over the simplex: each squared gap is
    /// at most one, so `u_e ≤ 2κ / min_i x^d_i`.
    pub fn rate_bound(&self) -> f64 {
        let min = self.target.densities().iter().copied().fold(f64::INFINITY, f64::min);
        2.0 * self.gain / min
    }

    pub(crate) fn rates_raw(&self, x: &[f64]) -> Vec<f64> {
        let xd = self.target.densities();
        let gaps: Vec<f64> = x.iter().zip(xd).map(|(xi, di)| (xi - di) * (xi - di)).collect();
        self.graph
            .edges()
            .iter()
            .map(|&(s, t)| self.gain * (gaps[s] + gaps[t]) / xd[s])
            .collect()
    }

    /// Per-capita rates at the density `x`; exactly zero at the target.
    pub fn feedback_rates(&self, x: &Distribution) -> RateAssignment {
        assert_eq!(x.len(), self.graph.vertex_count(), "distribution size mismatch");
        RateAssignment::new(&self.graph, self.rates_raw(x.densities()))
            .expect("feedback rates are nonnegative by construction")
    }

    pub(crate) fn field_raw(&self, x: &[f64]) -> Vec<f64> {
        edge_flow_field(&self.graph, &self.rates_raw(x), x)
    }

    /// The closed-loop velocity `Σ_e u_e(x) B_e x`.
    pub fn closed_loop_field(&self, x: &Distribution) -> Vec<f64> {
        assert_eq!(x.len(), self.graph.vertex_count(), "distribution size mismatch");
        self.field_raw(x.densities())
    }

    /// Borrowing closure over the raw field, for the integrator.
    pub fn field_fn(&self) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
        move |x| self.field_raw(x)
    }

    pub(crate) fn lyapunov_value_raw(&self, x: &[f64]) -> f64 {
        let xd = self.target.densities();
        let mut x_part = 0.0;
        let mut d_part = 0.0;
        for (xi, di) in x.iter().zip(xd) {
            x_part += xi * xi / di;
            d_part += di * di / di;
        }
        0.5 * (x_part - d_part)
    }

    /// `V(x) = ½(xᵀDx − x^dᵀDx^d)`: zero at the target, positive elsewhere
    /// on the simplex.
    pub fn lyapunov_value(&self, x: &Distribution) -> f64 {
        assert_eq!(x.len(), self.graph.vertex_count(), "distribution size mismatch");
        self.lyapunov_value_raw(x.densities())
    }

    pub(crate) fn lyapunov_derivative_raw(&self, x: &[f64]) -> f64 {
        let xd = self.target.densities();
        let mut sum = 0.0;
        for &(i, j) in self.graph.edges() {
            let gi = (x[i] - xd[i]) * (x[i] - xd[i]);
            let gj = (x[j] - xd[j]) * (x[j] - xd[j]);
            let dr = x[i] / xd[i] - x[j] / xd[j];
            sum += (gi + gj) * dr * dr;
        }
        -LYAPUNOV_DERIVATIVE_SCALE * self.gain * sum
    }

    /// Analytic `V̇(x)` in its pairwise sum-of-squares form: nonpositive
    /// everywhere, zero only at the target.
    pub fn lyapunov_derivative(&self, x: &Distribution) -> f64 {
        assert_eq!(x.len(), self.graph.vertex_count(), "distribution size mismatch");
        self.lyapunov_derivative_raw(x.densities())
    }

    /// `{"target": […], "gain": κ}`; the graph travels separately.
    pub fn to_json_value(&self) -> serde_json::Value {
        let json = LawJson { target: self.target.densities().to_vec(), gain: self.gain };
        serde_json::to_value(json).expect("law serialization cannot fail")
    }

    pub fn from_json_str(graph: DirectedGraph, s: &str) -> Result<Self> {
        let parsed: LawJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidInput(format!("malformed law JSON: {}", e)))?;
        Self::new(graph, Distribution::new(parsed.target)?, parsed.gain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{forward_field, generator_from_rates};
    use crate::simulate::integrate_ode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_vertex_law() -> FeedbackLaw {
        let g = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        FeedbackLaw::new(g, Distribution::new(vec![0.5, 0.5]).unwrap(), 1.0).unwrap()
    }

    fn chain_law(gain: f64) -> FeedbackLaw {
        let g = DirectedGraph::bidirected_chain(5).unwrap();
        let xd = Distribution::new(vec![0.1, 0.2, 0.25, 0.4, 0.05]).unwrap();
        FeedbackLaw::new(g, xd, gain).unwrap()
    }

    fn sample_simplex(m: usize, rng: &mut ChaCha8Rng) -> Distribution {
        let mut v: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let sum: f64 = v.iter().sum();
        for x in v.iter_mut() {
            *x /= sum;
        }
        Distribution::new(v).unwrap()
    }

    #[test]
    fn law_construction_requirements() {
        let g = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        let xd = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert!(FeedbackLaw::new(g.clone(), xd.clone(), 0.0).is_err());
        let boundary = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert!(FeedbackLaw::new(g.clone(), boundary, 1.0).is_err());
        let directed = DirectedGraph::new(2, vec![(0, 1)]).unwrap();
        assert!(FeedbackLaw::new(directed, xd.clone(), 1.0).is_err());
        let not_bidirected = DirectedGraph::new(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap();
        assert!(FeedbackLaw::new(not_bidirected, Distribution::uniform(3), 1.0).is_err());
        assert!(FeedbackLaw::new(g, xd, 1.0).is_ok());
    }

    #[test]
    fn rates_vanish_exactly_at_target() {
        let law = chain_law(10.0);
        let rates = law.feedback_rates(law.target());
        for &r in rates.rates() {
            assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn rates_hand_computed_two_vertex() {
        let law = two_vertex_law();
        let x = Distribution::new(vec![1.0, 0.0]).unwrap();
        let rates = law.feedback_rates(&x);
        // g = [0.25, 0.25]; both rates (0.25 + 0.25) / 0.5 = 1.
        assert!((rates.get(0) - 1.0).abs() < 1e-15);
        assert!((rates.get(1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rate_numerators_are_symmetric() {
        let law = chain_law(3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xd = law.target().densities();
        for _ in 0..50 {
            let x = sample_simplex(5, &mut rng);
            let rates = law.feedback_rates(&x);
            for &(i, j) in law.graph().edges() {
                let fwd = rates.edge_rate(law.graph(), i, j).unwrap() * xd[i];
                let bwd = rates.edge_rate(law.graph(), j, i).unwrap() * xd[j];
                assert!((fwd - bwd).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn rates_are_decentralized() {
        // Perturbing a vertex outside {S(e), T(e)} leaves u_e unchanged.
        let law = chain_law(2.0);
        let x = Distribution::new(vec![0.2, 0.2, 0.2, 0.2, 0.2]).unwrap();
        let base = law.feedback_rates(&x);
        let mut shifted = x.densities().to_vec();
        shifted[4] += 0.1;
        shifted[3] -= 0.1;
        let moved = Distribution::new(shifted).unwrap();
        let perturbed = law.feedback_rates(&moved);
        let k = law.graph().edge_position(0, 1).unwrap();
        assert_eq!(base.get(k), perturbed.get(k));
    }

    #[test]
    fn rates_respect_global_bound() {
        let law = chain_law(10.0);
        let bound = law.rate_bound();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = sample_simplex(5, &mut rng);
            for &r in law.feedback_rates(&x).rates() {
                assert!(r >= 0.0 && r <= bound);
            }
        }
    }

    #[test]
    fn closed_loop_field_hand_computed() {
        let law = two_vertex_law();
        let x = Distribution::new(vec![1.0, 0.0]).unwrap();
        let v = law.closed_loop_field(&x);
        assert!((v[0] - (-1.0)).abs() < 1e-15);
        assert!((v[1] - 1.0).abs() < 1e-15);
        let at_target = law.closed_loop_field(law.target());
        assert_eq!(at_target, vec![0.0, 0.0]);
    }

    #[test]
    fn closed_loop_field_matches_generator_route() {
        let law = chain_law(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = sample_simplex(5, &mut rng);
            let direct = law.closed_loop_field(&x);
            let gen = generator_from_rates(law.graph(), &law.feedback_rates(&x));
            let via_generator = forward_field(&gen, &x);
            let sum: f64 = direct.iter().sum();
            assert!(sum.abs() <= 1e-12);
            for (a, b) in direct.iter().zip(via_generator) {
                assert!((a - b).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn lyapunov_value_examples() {
        let law = two_vertex_law();
        assert_eq!(law.lyapunov_value(law.target()), 0.0);
        let x = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert!((law.lyapunov_value(&x) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_value_positive_away_from_target() {
        let law = chain_law(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10_000 {
            let x = sample_simplex(5, &mut rng);
            if x.l1_distance(law.target()) > 1e-9 {
                assert!(law.lyapunov_value(&x) > 0.0);
            }
        }
    }

    #[test]
    fn lyapunov_derivative_sign() {
        let law = two_vertex_law();
        assert_eq!(law.lyapunov_derivative(law.target()), 0.0);
        let x = Distribution::new(vec![1.0, 0.0]).unwrap();
        // r = [2, 0], both edges contribute (0.5)(2)² → V̇ = −κ/2 · 4 = −2.
        assert!((law.lyapunov_derivative(&x) - (-2.0)).abs() < 1e-15);
    }

    #[test]
    fn lyapunov_derivative_matches_gradient_dot_field() {
        // Independent route: V̇ = ∇V·ẋ = Σ (x_i/x^d_i) ẋ_i.
        let law = chain_law(10.0);
        let xd = law.target().densities();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let x = sample_simplex(5, &mut rng);
            let field = law.closed_loop_field(&x);
            let grad_dot: f64 =
                x.densities().iter().zip(xd).zip(&field).map(|((xi, di), f)| xi / di * f).sum();
            let analytic = law.lyapunov_derivative(&x);
            assert!(
                (analytic - grad_dot).abs() <= 1e-12 * (1.0 + analytic.abs()),
                "analytic {} vs gradient route {}",
                analytic,
                grad_dot
            );
            assert!(analytic <= 0.0);
        }
    }

    #[test]
    fn gain_rescales_time() {
        // A gain-κ trajectory at time t matches the gain-1 trajectory at κt.
        let slow = chain_law(1.0);
        let fast = chain_law(4.0);
        let x0 = Distribution::new(vec![0.4, 0.1, 0.05, 0.35, 0.1]).unwrap();
        let t_slow = integrate_ode(slow.field_fn(), &x0, 2.0, 5e-4).unwrap();
        let t_fast = integrate_ode(fast.field_fn(), &x0, 0.5, 1.25e-4).unwrap();
        let end_slow = t_slow.final_state();
        let end_fast = t_fast.final_state();
        for i in 0..5 {
            assert!((end_slow.get(i) - end_fast.get(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn lyapunov_decreases_along_trajectories() {
        let law = chain_law(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let x0 = sample_simplex(5, &mut rng);
            let traj = integrate_ode(law.field_fn(), &x0, 3.0, 1e-3).unwrap();
            let mut prev = law.lyapunov_value(traj.state(0));
            for state in traj.states().iter().skip(1) {
                let v = law.lyapunov_value(state);
                if state.l1_distance(law.target()) > 1e-8 {
                    assert!(v < prev);
                }
                prev = v;
            }
        }
    }

    #[test]
    fn law_json_round_trip() {
        let law = chain_law(10.0);
        let s = serde_json::to_string(&law.to_json_value()).unwrap();
        let parsed = FeedbackLaw::from_json_str(law.graph().clone(), &s).unwrap();
        assert_eq!(parsed, law);
    }
}
