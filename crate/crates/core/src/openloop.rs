//! Open-loop synthesis: constant rates stabilizing any target with
//! strongly connected support, and two-phase piecewise-constant schedules
//! that reach arbitrary targets (boundary points included) asymptotically.
//!
//! The constant-rate construction restricts the graph so no edge leaves
//! the target support, takes the stationary distribution `z` of the
//! unit-rate flow on the restricted graph, and scales every edge leaving
//! vertex `i` by `z_i / xd_i`. The resulting generator has the target in
//! its left null space and a simple zero eigenvalue.
//!
//! The schedule construction steers approximately to a strictly positive
//! intermediate distribution whose per-block mass matches the target, then
//! switches to terminal rates that drain each block into its root while
//! conserving block mass. The steering phase stops once the state is
//! within `eps` of the intermediate distribution in L1, so the limit point
//! of the terminal flow is within `eps` of the target.

use serde::{Deserialize, Serialize};

use crate::ctmc::{
    generator_from_rates, stationary_distribution, Distribution, RateAssignment,
};
use crate::error::{Error, Result};
use crate::graph::{transient_partition, DirectedGraph, TransientPartition};
use crate::simulate::integrate_ode;

/// Steering integration step.
pub const STEERING_DT: f64 = 1e-3;

/// The steering phase gives up after this many time units.
pub const STEERING_TIME_CAP: f64 = 1e4;

/// One schedule phase: constant rates held for a duration, `None` meaning
/// forever.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    duration: Option<f64>,
    rates: RateAssignment,
}

impl Phase {
    pub fn duration(&self) -> Option<f64> {
        self.duration
    }

    pub fn rates(&self) -> &RateAssignment {
        &self.rates
    }
}

/// A finite sequence of constant-rate phases; the last one is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSchedule {
    phases: Vec<Phase>,
}

#[derive(Serialize, Deserialize)]
struct PhaseJson {
    duration: Option<f64>,
    rates: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct ScheduleJson {
    phases: Vec<PhaseJson>,
}

impl PiecewiseSchedule {
    pub fn new(phases: Vec<(Option<f64>, RateAssignment)>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidInput("schedule must have at least one phase".into()));
        }
        let last = phases.len() - 1;
        for (k, (duration, _)) in phases.iter().enumerate() {
            match duration {
                None if k != last => {
                    return Err(Error::InvalidInput(
                        "only the final phase may be unbounded".into(),
                    ))
                }
                Some(d) if !(*d > 0.0) => {
                    return Err(Error::InvalidInput(format!(
                        "phase {} has non-positive duration {}",
                        k + 1,
                        d
                    )))
                }
                _ => {}
            }
        }
        if phases[last].0.is_some() {
            return Err(Error::InvalidInput("the final phase must be unbounded".into()));
        }
        Ok(Self {
            phases: phases.into_iter().map(|(duration, rates)| Phase { duration, rates }).collect(),
        })
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    /// `{"phases": [{"duration": t | null, "rates": {…}}, …]}`.
    pub fn to_json_value(&self, g: &DirectedGraph) -> serde_json::Value {
        let json = ScheduleJson {
            phases: self
                .phases
                .iter()
                .map(|p| PhaseJson { duration: p.duration, rates: p.rates.to_json_value(g) })
                .collect(),
        };
        serde_json::to_value(json).expect("schedule serialization cannot fail")
    }

    pub fn from_json_str(g: &DirectedGraph, s: &str) -> Result<Self> {
        let parsed: ScheduleJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidInput(format!("malformed schedule JSON: {}", e)))?;
        let mut phases = Vec::with_capacity(parsed.phases.len());
        for p in parsed.phases {
            let rates = RateAssignment::from_json_str(g, &p.rates.to_string())?;
            phases.push((p.duration, rates));
        }
        Self::new(phases)
    }
}

/// Constant rates making `xd` the globally stable stationary distribution
/// of the mean-field flow. Requires `g` strongly connected and `xd` with
/// strongly connected support.
pub fn synthesize_invariant_rates(
    g: &DirectedGraph,
    xd: &Distribution,
) -> Result<RateAssignment> {
    if xd.len() != g.vertex_count() {
        return Err(Error::InvalidInput("distribution size does not match graph".into()));
    }
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let support = xd.support();
    if !g.is_vertex_set_strongly_connected(&support) {
        return Err(Error::SupportNotStronglyConnected {
            support: support.display_one_based(),
        });
    }
    let restricted = g.restricted_graph(&support)?;
    let unit = RateAssignment::constant(&restricted, 1.0)?;
    let z = stationary_distribution(&generator_from_rates(&restricted, &unit))?;
    // Per-vertex scaling z_i / xd_i on the support; off-support vertices
    // keep unit rates (any positive value drains them into the support).
    let mut scale = vec![1.0; g.vertex_count()];
    for &i in support.members() {
        scale[i] = z.get(i) / xd.get(i);
    }
    let rates = g
        .edges()
        .iter()
        .map(|&(s, t)| if restricted.contains_edge(s, t) { scale[s] } else { 0.0 })
        .collect();
    RateAssignment::new(g, rates)
}

/// A strictly positive distribution whose mass within each partition block
/// equals the block root's target mass, spread uniformly over the block.
pub fn intermediate_distribution(
    g: &DirectedGraph,
    partition: &TransientPartition,
    xd: &Distribution,
) -> Result<Distribution> {
    if partition.vertex_count() != g.vertex_count() || xd.len() != g.vertex_count() {
        return Err(Error::InvalidInput("partition and graph sizes disagree".into()));
    }
    let mut x_in = vec![0.0; g.vertex_count()];
    for block in partition.blocks() {
        let mass = xd.get(block.root());
        let vertices = block.vertices();
        if mass <= 0.0 {
            return Err(Error::Infeasible(format!(
                "block rooted at {} has zero target mass, so no strictly positive \
                 intermediate distribution exists",
                block.root() + 1
            )));
        }
        let share = mass / vertices.len() as f64;
        for v in vertices {
            x_in[v] = share;
        }
    }
    Distribution::new(x_in)
}

/// Terminal rates draining each block into its root: zero on edges that
/// leave their block, zero on root-sourced edges, one everywhere else.
pub fn terminal_rates(g: &DirectedGraph, partition: &TransientPartition) -> RateAssignment {
    assert_eq!(partition.vertex_count(), g.vertex_count(), "partition does not match graph");
    let roots: Vec<bool> = {
        let mut r = vec![false; g.vertex_count()];
        for block in partition.blocks() {
            r[block.root()] = true;
        }
        r
    };
    let rates = g
        .edges()
        .iter()
        .map(|&(s, t)| {
            if roots[s] || partition.block_of(s) != partition.block_of(t) {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    RateAssignment::new(g, rates).expect("terminal rates are 0/1 by construction")
}

/// Two-phase schedule reaching `xd` asymptotically from `x0`: steer with
/// invariant rates to the intermediate distribution until within `eps` in
/// L1 (duration found by simulation, capped at [`STEERING_TIME_CAP`]),
/// then hold the terminal rates forever. The limit point is within `eps`
/// of `xd` because the terminal flow conserves per-block mass.
pub fn asymptotic_schedule(
    g: &DirectedGraph,
    x0: &Distribution,
    xd: &Distribution,
    eps: f64,
) -> Result<PiecewiseSchedule> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {}", eps)));
    }
    if x0.len() != g.vertex_count() || xd.len() != g.vertex_count() {
        return Err(Error::InvalidInput("distribution size does not match graph".into()));
    }
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    let partition = transient_partition(g, xd)?;
    let x_in = intermediate_distribution(g, &partition, xd)?;
    let steering = synthesize_invariant_rates(g, &x_in)?;
    let terminal = terminal_rates(g, &partition);

    let gen = generator_from_rates(g, &steering);
    let mut state = x0.clone();
    let mut elapsed = 0.0;
    let mut steering_duration = None;
    if state.l1_distance(&x_in) <= eps {
        steering_duration = Some(0.0);
    }
    const CHUNK: f64 = 5.0;
    while steering_duration.is_none() && elapsed < STEERING_TIME_CAP {
        let horizon = CHUNK.min(STEERING_TIME_CAP - elapsed).max(STEERING_DT);
        let segment = integrate_ode(|x| gen.apply_transpose(x), &state, horizon, STEERING_DT)?;
        for (t, s) in segment.times().iter().zip(segment.states()) {
            if *t > 0.0 && s.l1_distance(&x_in) <= eps {
                steering_duration = Some(elapsed + t);
                break;
            }
        }
        elapsed += segment.final_time();
        state = segment.final_state().clone();
    }
    let steering_duration = match steering_duration {
        Some(d) => d,
        None => {
            return Err(Error::SteeringCapExceeded {
                cap: STEERING_TIME_CAP,
                achieved: state.l1_distance(&x_in),
                eps,
            })
        }
    };
    if steering_duration > 0.0 {
        PiecewiseSchedule::new(vec![(Some(steering_duration), steering), (None, terminal)])
    } else {
        PiecewiseSchedule::new(vec![(None, terminal)])
    }
}
