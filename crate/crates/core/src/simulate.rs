//! Deterministic mean-field integration and exact event-driven agent
//! simulation.
//!
//! The ODE side uses classical fixed-step RK4 with a clamp-and-renormalize
//! guard: the vector fields here conserve mass exactly, so any drift is
//! roundoff, and entries more negative than the simplex tolerance abort
//! the run. The stochastic side recomputes per-capita rates from the
//! empirical density after every event, draws exponential waiting times
//! from the total propensity, and moves one uniformly chosen agent at the
//! selected source vertex. All randomness comes from a seeded ChaCha
//! stream, so runs are bit-reproducible across platforms.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctmc::{generator_from_rates, Distribution, RateAssignment};
use crate::error::{Error, Result};
use crate::graph::DirectedGraph;
use crate::openloop::PiecewiseSchedule;

/// Entries more negative than this abort the integration.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// A sampled mean-field solution curve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Distribution>,
    max_mass_defect: f64,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Distribution] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &Distribution {
        &self.states[k]
    }

    pub fn final_state(&self) -> &Distribution {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Largest `|1ᵀx − 1|` observed after any step, before renormalization.
    pub fn max_mass_defect(&self) -> f64 {
        self.max_mass_defect
    }

    /// Linearly interpolated state at `t`; `None` outside the time range.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let first = *self.times.first()?;
        let last = *self.times.last()?;
        if t < first || t > last {
            return None;
        }
        let k = match self.times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(k) => return Some(self.states[k].densities().to_vec()),
            Err(k) => k,
        };
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        let (a, b) = (self.states[k - 1].densities(), self.states[k].densities());
        Some(a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect())
    }

    /// CSV with header `t,x1,…,xM` and 17-significant-digit floats.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = self.states[0].len();
        write!(w, "t")?;
        for i in 1..=m {
            write!(w, ",x{}", i)?;
        }
        writeln!(w)?;
        for (t, state) in self.times.iter().zip(&self.states) {
            write!(w, "{:.16e}", t)?;
            for &x in state.densities() {
                write!(w, ",{:.16e}", x)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Concatenate a continuation that starts where `self` ends.
    fn extend_with(&mut self, mut other: Trajectory) {
        let offset = self.final_time();
        self.times.extend(other.times.drain(1..).map(|t| t + offset));
        self.states.extend(other.states.drain(1..));
        self.max_mass_defect = self.max_mass_defect.max(other.max_mass_defect);
    }
}

fn rk4_step<F: Fn(&[f64]) -> Vec<f64>>(field: &F, x: &[f64], h: f64) -> Vec<f64> {
    let m = x.len();
    let k1 = field(x);
    let mut stage = vec![0.0; m];
    for i in 0..m {
        stage[i] = x[i] + 0.5 * h * k1[i];
    }
    let k2 = field(&stage);
    for i in 0..m {
        stage[i] = x[i] + 0.5 * h * k2[i];
    }
    let k3 = field(&stage);
    for i in 0..m {
        stage[i] = x[i] + h * k3[i];
    }
    let k4 = field(&stage);
    let mut out = vec![0.0; m];
    for i in 0..m {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Classical fixed-step RK4 on the simplex.
///
/// After each step, entries below `−SIMPLEX_TOL` abort with a diagnostic;
/// entries in `[−SIMPLEX_TOL, 0)` are clamped to zero and the state is
/// renormalized to unit mass. The defect `|1ᵀx − 1|` measured before
/// renormalization is tracked and exposed on the trajectory.
pub fn integrate_ode<F>(field: F, x0: &Distribution, horizon: f64, dt: f64) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {}", dt)));
    }
    if horizon < dt {
        return Err(Error::InvalidInput(format!(
            "horizon {} is shorter than one step {}",
            horizon, dt
        )));
    }
    let mut x = x0.densities().to_vec();
    let mut t = 0.0;
    let mut times = vec![0.0];
    let mut states = vec![x0.clone()];
    let mut max_defect: f64 = 0.0;
    let t_end = horizon * (1.0 - 1e-12);
    while t < t_end {
        let h = dt.min(horizon - t);
        let mut next = rk4_step(&field, &x, h);
        t += h;
        for (i, v) in next.iter_mut().enumerate() {
            if *v < -SIMPLEX_TOL {
                return Err(Error::SimplexViolation {
                    time: t,
                    detail: format!("component {} reached {}", i + 1, v),
                });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let mass: f64 = next.iter().sum();
        max_defect = max_defect.max((mass - 1.0).abs());
        for v in next.iter_mut() {
            *v /= mass;
        }
        x = next;
        times.push(t);
        states.push(Distribution::new(x.clone()).map_err(|e| Error::SimplexViolation {
            time: t,
            detail: e.to_string(),
        })?);
    }
    Ok(Trajectory { times, states, max_mass_defect: max_defect })
}

/// Run a piecewise-constant schedule: each bounded phase for its stated
/// duration and the final unbounded phase for `tail_horizon`.
pub fn run_schedule(
    g: &DirectedGraph,
    schedule: &PiecewiseSchedule,
    x0: &Distribution,
    tail_horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    let mut full: Option<Trajectory> = None;
    for phase in schedule.phases() {
        let duration = phase.duration().unwrap_or(tail_horizon);
        let step = dt.min(duration);
        if !(step > 0.0) {
            continue;
        }
        let gen = generator_from_rates(g, phase.rates());
        let start = match &full {
            Some(traj) => traj.final_state().clone(),
            None => x0.clone(),
        };
        let segment = integrate_ode(|x| gen.apply_transpose(x), &start, duration, step)?;
        match &mut full {
            Some(traj) => traj.extend_with(segment),
            None => full = Some(segment),
        }
    }
    full.ok_or_else(|| Error::InvalidInput("schedule ran for zero total time".into()))
}

/// One recorded transition: which agent moved and between which vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentEvent {
    pub agent: usize,
    pub from: usize,
    pub to: usize,
}

/// Full event history of a finite-population stochastic run.
#[derive(Debug, Clone)]
pub struct AgentTrajectory {
    event_times: Vec<f64>,
    counts: Vec<Vec<u64>>,
    events: Vec<AgentEvent>,
    initial_counts: Vec<u64>,
    n_agents: u64,
    horizon: f64,
    seed: u64,
}

impl AgentTrajectory {
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn events(&self) -> &[AgentEvent] {
        &self.events
    }

    /// Count vectors after each event, parallel to `event_times`.
    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn initial_counts(&self) -> &[u64] {
        &self.initial_counts
    }

    pub fn n_agents(&self) -> u64 {
        self.n_agents
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    /// Timestamp of the final event, or `None` if no agent ever moved.
    pub fn last_transition_time(&self) -> Option<f64> {
        self.event_times.last().copied()
    }

    /// Counts in effect at time `t` (the initial counts before the first
    /// event).
    pub fn counts_at(&self, t: f64) -> &[u64] {
        let k = self.event_times.partition_point(|&et| et <= t);
        if k == 0 {
            &self.initial_counts
        } else {
            &self.counts[k - 1]
        }
    }

    /// Empirical density in effect at time `t`.
    pub fn density_at(&self, t: f64) -> Distribution {
        empirical_density(self.counts_at(t), self.n_agents)
            .expect("agent trajectory always has a positive population")
    }

    /// CSV with header `t,agent,from,to`; agents and vertices 1-based.
    pub fn write_events_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,agent,from,to")?;
        for (t, ev) in self.event_times.iter().zip(&self.events) {
            writeln!(w, "{:.16e},{},{},{}", t, ev.agent + 1, ev.from + 1, ev.to + 1)?;
        }
        Ok(())
    }
}

/// `counts / N` as a distribution.
pub fn empirical_density(counts: &[u64], n: u64) -> Result<Distribution> {
    if n == 0 {
        return Err(Error::InvalidInput("empty population".into()));
    }
    let total: u64 = counts.iter().sum();
    if total != n {
        return Err(Error::InvalidInput(format!("counts sum to {}, expected {}", total, n)));
    }
    Distribution::new(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// Timestamp of the final event of a run, or `None` if no agent moved.
pub fn last_transition_time(traj: &AgentTrajectory) -> Option<f64> {
    traj.last_transition_time()
}

/// Exact event-driven simulation of `Σ counts` agents whose per-capita
/// rates are recomputed from the empirical density after every event.
///
/// The per-edge propensity is `counts[S(e)] · u_e(x̂)`; the next event time
/// is exponential in the total propensity, the transition is chosen
/// proportionally to the per-edge propensities, and a uniformly random
/// agent at the source vertex moves. A total propensity of zero is
/// absorbing and ends the run.
pub fn simulate_agents<F>(
    g: &DirectedGraph,
    rate_source: F,
    x0_counts: &[u64],
    horizon: f64,
    seed: u64,
) -> Result<AgentTrajectory>
where
    F: Fn(&Distribution) -> RateAssignment,
{
    if x0_counts.len() != g.vertex_count() {
        return Err(Error::InvalidInput("count vector does not match graph".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let n: u64 = x0_counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidInput("empty population".into()));
    }
    let mut counts = x0_counts.to_vec();
    // Agents 0..c0 start at vertex 0, the next c1 at vertex 1, and so on.
    let mut vertex_agents: Vec<Vec<usize>> = Vec::with_capacity(g.vertex_count());
    let mut next_agent = 0usize;
    for &c in &counts {
        let ids: Vec<usize> = (next_agent..next_agent + c as usize).collect();
        next_agent += c as usize;
        vertex_agents.push(ids);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut event_times = Vec::new();
    let mut count_history = Vec::new();
    let mut events = Vec::new();
    let mut propensity = vec![0.0; g.edge_count()];
    loop {
        let density = empirical_density(&counts, n)?;
        let rates = rate_source(&density);
        let mut total = 0.0;
        for (k, (&(s, _), &r)) in g.edges().iter().zip(rates.rates()).enumerate() {
            propensity[k] = counts[s] as f64 * r;
            total += propensity[k];
        }
        if total <= 0.0 {
            break; // absorbing: no agent can move
        }
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / total;
        if t > horizon {
            break;
        }
        // Pick the edge proportionally to its propensity.
        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = g.edge_count() - 1;
        for (k, &p) in propensity.iter().enumerate() {
            pick -= p;
            if pick <= 0.0 {
                chosen = k;
                break;
            }
        }
        let (s, to) = g.edges()[chosen];
        let slot = rng.gen_range(0..vertex_agents[s].len());
        let agent = vertex_agents[s].swap_remove(slot);
        vertex_agents[to].push(agent);
        counts[s] -= 1;
        counts[to] += 1;
        event_times.push(t);
        count_history.push(counts.clone());
        events.push(AgentEvent { agent, from: s, to });
    }
    Ok(AgentTrajectory {
        event_times,
        counts: count_history,
        events,
        initial_counts: x0_counts.to_vec(),
        n_agents: n,
        horizon,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::RateAssignment;

    fn two_state() -> DirectedGraph {
        DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap()
    }

    #[test]
    fn zero_field_keeps_state_constant() {
        let x0 = Distribution::new(vec![0.3, 0.7]).unwrap();
        let traj = integrate_ode(|x| vec![0.0; x.len()], &x0, 1.0, 0.1).unwrap();
        assert_eq!(traj.len(), 11);
        for state in traj.states() {
            assert_eq!(state.densities(), x0.densities());
        }
        assert_eq!(traj.max_mass_defect(), 0.0);
    }

    #[test]
    fn two_state_closed_form() {
        // Unit rates both ways from [1, 0]: x(t) = [ (1+e^{-2t})/2, (1-e^{-2t})/2 ].
        let g = two_state();
        let gen = generator_from_rates(&g, &RateAssignment::constant(&g, 1.0).unwrap());
        let x0 = Distribution::new(vec![1.0, 0.0]).unwrap();
        let traj = integrate_ode(|x| gen.apply_transpose(x), &x0, 2.0, 1e-3).unwrap();
        for (&t, state) in traj.times().iter().zip(traj.states()) {
            let expected = 0.5 * (1.0 + (-2.0 * t).exp());
            assert!((state.get(0) - expected).abs() < 1e-8, "t = {}", t);
        }
        assert!(traj.max_mass_defect() <= 1e-12);
    }

    #[test]
    fn integration_rejects_bad_steps() {
        let x0 = Distribution::uniform(2);
        assert!(integrate_ode(|x| vec![0.0; x.len()], &x0, 1.0, 0.0).is_err());
        assert!(integrate_ode(|x| vec![0.0; x.len()], &x0, 0.05, 0.1).is_err());
    }

    #[test]
    fn integration_aborts_on_simplex_violation() {
        // A field that pushes mass of component 0 negative.
        let x0 = Distribution::new(vec![0.01, 0.99]).unwrap();
        let res = integrate_ode(|_| vec![-1.0, 1.0], &x0, 1.0, 0.1);
        assert!(matches!(res, Err(Error::SimplexViolation { .. })));
    }

    #[test]
    fn interpolation_matches_samples_and_midpoints() {
        let x0 = Distribution::new(vec![1.0, 0.0]).unwrap();
        let g = two_state();
        let gen = generator_from_rates(&g, &RateAssignment::constant(&g, 1.0).unwrap());
        let traj = integrate_ode(|x| gen.apply_transpose(x), &x0, 1.0, 0.25).unwrap();
        let at_sample = traj.interpolate(0.25).unwrap();
        assert_eq!(at_sample, traj.state(1).densities());
        let mid = traj.interpolate(0.125).unwrap();
        let expected = 0.5 * (traj.state(0).get(0) + traj.state(1).get(0));
        assert!((mid[0] - expected).abs() < 1e-15);
        assert!(traj.interpolate(2.0).is_none());
    }

    #[test]
    fn agents_with_zero_rates_never_move() {
        let g = two_state();
        let traj =
            simulate_agents(&g, |_| RateAssignment::zeros(&g), &[3, 2], 5.0, 42).unwrap();
        assert_eq!(traj.event_count(), 0);
        assert_eq!(traj.last_transition_time(), None);
        assert_eq!(traj.counts_at(3.0), &[3, 2]);
    }

    #[test]
    fn agent_mass_is_conserved_exactly() {
        let g = two_state();
        let traj = simulate_agents(
            &g,
            |_| RateAssignment::constant(&g, 1.0).unwrap(),
            &[10, 0],
            5.0,
            7,
        )
        .unwrap();
        assert!(traj.event_count() > 0);
        for counts in traj.counts() {
            assert_eq!(counts.iter().sum::<u64>(), 10);
        }
        // Each event moves exactly one agent.
        let mut prev = traj.initial_counts().to_vec();
        for (counts, ev) in traj.counts().iter().zip(traj.events()) {
            let mut expected = prev.clone();
            expected[ev.from] -= 1;
            expected[ev.to] += 1;
            assert_eq!(counts, &expected);
            prev = counts.clone();
        }
    }

    #[test]
    fn agent_runs_are_reproducible() {
        let g = two_state();
        let run = |seed| {
            simulate_agents(&g, |_| RateAssignment::constant(&g, 1.0).unwrap(), &[5, 5], 2.0, seed)
                .unwrap()
        };
        let a = run(11);
        let b = run(11);
        assert_eq!(a.event_times(), b.event_times());
        assert_eq!(a.events(), b.events());
        let c = run(12);
        assert_ne!(a.event_times(), c.event_times());
    }

    #[test]
    fn empirical_density_examples() {
        let d = empirical_density(&[100, 0, 0, 0, 0], 100).unwrap();
        assert_eq!(d.densities(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let d = empirical_density(&[40, 10, 5, 35, 10], 100).unwrap();
        assert_eq!(d.densities(), &[0.4, 0.1, 0.05, 0.35, 0.1]);
        let d = empirical_density(&[1, 1], 2).unwrap();
        assert_eq!(d.densities(), &[0.5, 0.5]);
        assert!(empirical_density(&[0, 0], 0).is_err());
        assert!(empirical_density(&[1, 1], 3).is_err());
    }

    #[test]
    fn trajectory_csv_format() {
        let x0 = Distribution::new(vec![0.25, 0.75]).unwrap();
        let traj = integrate_ode(|x| vec![0.0; x.len()], &x0, 0.2, 0.1).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,2.5000000000000000e-1"));
    }
}
