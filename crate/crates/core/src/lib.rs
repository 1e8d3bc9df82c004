//! Mean-field stabilization of agent swarms on directed graphs.
//!
//! Agents hop between the vertices of a directed graph according to a
//! continuous-time Markov chain whose transition rates are the control
//! inputs. In the large-population limit the vertex occupancy densities
//! obey the Kolmogorov forward equation `ẋ = Gᵀx`. This crate provides:
//!
//! - [`graph`]: the graph structures and reachability constructions the
//!   synthesis procedures rely on;
//! - [`ctmc`]: generators, control matrices, stationary distributions,
//!   and spectral checks;
//! - [`openloop`]: time-invariant rate synthesis for targets with
//!   strongly connected support, and piecewise-constant schedules that
//!   asymptotically reach arbitrary targets;
//! - [`feedback`]: the decentralized density-feedback law with zero
//!   control at equilibrium and its Lyapunov certificate;
//! - [`synth`]: sampled-certificate search over polynomial feedback
//!   coefficients;
//! - [`simulate`]: fixed-step ODE integration on the simplex and exact
//!   event-driven simulation of finite agent populations;
//! - [`certify`]: machine-checkable summaries of the stability claims.

pub mod certify;
pub mod ctmc;
pub mod error;
pub mod feedback;
pub mod graph;
pub mod openloop;
pub mod simulate;
pub mod synth;

pub use crate::ctmc::{Distribution, Generator, RateAssignment};
pub use crate::error::{Error, Result};
pub use crate::feedback::FeedbackLaw;
pub use crate::graph::{DirectedGraph, TransientPartition, VertexSet};
pub use crate::openloop::PiecewiseSchedule;
pub use crate::simulate::{AgentTrajectory, Trajectory};
