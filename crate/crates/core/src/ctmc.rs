//! Transition-rate algebra for continuous-time Markov chains on graphs.
//!
//! A generator `G` carries the per-edge transition rates: `G^{ij} = u_(i,j)`
//! for edges, zero row sums, and the mean-field densities evolve as
//! `ẋ = Gᵀx`. The same vector field can be written as `Σ_e u_e B_e x` with
//! the per-edge control matrices `B_e`; both forms are provided and tested
//! against each other.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedGraph, VertexSet};

/// Tolerance on distribution entries and generator row sums.
pub const MASS_TOL: f64 = 1e-12;

/// Eigenvalues with modulus below this count as the structural zero.
pub const EIGEN_ZERO_TOL: f64 = 1e-9;

/// A point on the probability simplex over the vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    densities: Vec<f64>,
}

impl Distribution {
    /// Validates nonnegativity (to `MASS_TOL`) and unit mass (to
    /// `MASS_TOL`), clamps roundoff-negative entries to zero, and
    /// renormalizes so the stored vector has exact unit mass.
    pub fn new(mut densities: Vec<f64>) -> Result<Self> {
        if densities.is_empty() {
            return Err(Error::InvalidDistribution("empty density vector".into()));
        }
        for (i, d) in densities.iter_mut().enumerate() {
            if !d.is_finite() {
                return Err(Error::InvalidDistribution(format!(
                    "entry {} is not finite",
                    i + 1
                )));
            }
            if *d < -MASS_TOL {
                return Err(Error::InvalidDistribution(format!(
                    "entry {} is negative: {}",
                    i + 1,
                    d
                )));
            }
            if *d < 0.0 {
                *d = 0.0;
            }
        }
        let sum: f64 = densities.iter().sum();
        if (sum - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {}, expected 1",
                sum
            )));
        }
        for d in densities.iter_mut() {
            *d /= sum;
        }
        Ok(Self { densities })
    }

    pub fn uniform(m: usize) -> Self {
        Self { densities: vec![1.0 / m as f64; m] }
    }

    /// All mass at one vertex.
    pub fn point_mass(m: usize, v: usize) -> Self {
        assert!(v < m, "vertex out of range");
        let mut densities = vec![0.0; m];
        densities[v] = 1.0;
        Self { densities }
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    pub fn get(&self, i: usize) -> f64 {
        self.densities[i]
    }

    /// Vertices with strictly positive density.
    pub fn support(&self) -> VertexSet {
        (0..self.len()).filter(|&i| self.densities[i] > 0.0).collect()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.densities.iter().all(|&d| d > 0.0)
    }

    pub fn l1_distance(&self, other: &Distribution) -> f64 {
        l1_distance(&self.densities, other.densities())
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.densities[i]
    }
}

pub(crate) fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Nonnegative transition rates, one per edge of a graph, stored in the
/// graph's edge-list order.
#[derive(Debug, Clone, PartialEq)]
pub struct RateAssignment {
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RatesJson {
    edges: Vec<(usize, usize, f64)>,
}

impl RateAssignment {
    pub fn new(g: &DirectedGraph, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != g.edge_count() {
            return Err(Error::InvalidRates(format!(
                "{} rates supplied for {} edges",
                rates.len(),
                g.edge_count()
            )));
        }
        for (k, &r) in rates.iter().enumerate() {
            if !r.is_finite() || r < 0.0 {
                let (s, t) = g.edges()[k];
                return Err(Error::InvalidRates(format!(
                    "rate on edge ({}, {}) is {}",
                    s + 1,
                    t + 1,
                    r
                )));
            }
        }
        Ok(Self { rates })
    }

    /// The same rate on every edge.
    pub fn constant(g: &DirectedGraph, rate: f64) -> Result<Self> {
        Self::new(g, vec![rate; g.edge_count()])
    }

    pub fn zeros(g: &DirectedGraph) -> Self {
        Self { rates: vec![0.0; g.edge_count()] }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn get(&self, edge_position: usize) -> f64 {
        self.rates[edge_position]
    }

    /// Rate on edge `(s, t)`, if the edge exists.
    pub fn edge_rate(&self, g: &DirectedGraph, s: usize, t: usize) -> Option<f64> {
        g.edge_position(s, t).map(|k| self.rates[k])
    }

    /// `{"edges": [[i, j, rate], …]}` with 1-based indices.
    pub fn to_json_value(&self, g: &DirectedGraph) -> serde_json::Value {
        let json = RatesJson {
            edges: g
                .edges()
                .iter()
                .zip(&self.rates)
                .map(|(&(s, t), &r)| (s + 1, t + 1, r))
                .collect(),
        };
        serde_json::to_value(json).expect("rate serialization cannot fail")
    }

    pub fn from_json_str(g: &DirectedGraph, s: &str) -> Result<Self> {
        let parsed: RatesJson = serde_json::from_str(s)
            .map_err(|e| Error::InvalidRates(format!("malformed rates JSON: {}", e)))?;
        let mut rates = vec![None; g.edge_count()];
        for (i, j, r) in parsed.edges {
            if i == 0 || j == 0 {
                return Err(Error::InvalidRates("vertex indices are 1-based".into()));
            }
            let k = g
                .edge_position(i - 1, j - 1)
                .ok_or_else(|| Error::InvalidRates(format!("unknown edge ({}, {})", i, j)))?;
            rates[k] = Some(r);
        }
        let rates: Vec<f64> = rates
            .into_iter()
            .enumerate()
            .map(|(k, r)| {
                r.ok_or_else(|| {
                    let (s, t) = g.edges()[k];
                    Error::InvalidRates(format!("missing rate for edge ({}, {})", s + 1, t + 1))
                })
            })
            .collect::<Result<_>>()?;
        Self::new(g, rates)
    }
}

/// An M×M transition-rate matrix: nonnegative off-diagonal entries and
/// zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    entries: DMatrix<f64>,
}

impl Generator {
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(Error::InvalidInput("generator must be square and nonempty".into()));
        }
        let m = entries.nrows();
        for i in 0..m {
            let mut row_sum = 0.0;
            for j in 0..m {
                let v = entries[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvalidInput("generator entries must be finite".into()));
                }
                if i != j && v < 0.0 {
                    return Err(Error::InvalidRates(format!(
                        "negative off-diagonal entry at ({}, {}): {}",
                        i + 1,
                        j + 1,
                        v
                    )));
                }
                row_sum += v;
            }
            if row_sum.abs() > MASS_TOL {
                return Err(Error::InvalidInput(format!(
                    "row {} sums to {}, expected 0",
                    i + 1,
                    row_sum
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `Gᵀx` on a raw state vector.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        let m = self.dim();
        let mut out = vec![0.0; m];
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..m {
                acc += self.entries[(j, i)] * x[j];
            }
            out[i] = acc;
        }
        out
    }
}

/// Build the generator carrying rate `u_e` at `(S(e), T(e))` for each edge,
/// with the diagonal set so every row sums to zero.
pub fn generator_from_rates(g: &DirectedGraph, u: &RateAssignment) -> Generator {
    assert_eq!(u.rates().len(), g.edge_count(), "rate assignment does not match graph");
    let m = g.vertex_count();
    let mut entries = DMatrix::zeros(m, m);
    for (&(s, t), &r) in g.edges().iter().zip(u.rates()) {
        entries[(s, t)] = r;
    }
    for i in 0..m {
        let mut off: f64 = 0.0;
        for j in 0..m {
            if j != i {
                off += entries[(i, j)];
            }
        }
        entries[(i, i)] = -off;
    }
    Generator { entries }
}

/// The forward-equation velocity `Gᵀx`; entries sum to zero.
pub fn forward_field(gen: &Generator, x: &Distribution) -> Vec<f64> {
    assert_eq!(gen.dim(), x.len(), "dimension mismatch");
    gen.apply_transpose(x.densities())
}

/// Velocity of `Σ_e u_e B_e x` computed edge by edge, without forming the
/// generator. Used by the feedback paths where rates change every step.
pub(crate) fn edge_flow_field(g: &DirectedGraph, rates: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.vertex_count()];
    for (&(s, t), &r) in g.edges().iter().zip(rates) {
        let flux = r * x[s];
        out[s] -= flux;
        out[t] += flux;
    }
    out
}

/// The control matrix `B_e`: −1 at `(S(e), S(e))`, +1 at `(T(e), S(e))`.
pub fn control_matrix(g: &DirectedGraph, edge: (usize, usize)) -> Result<DMatrix<f64>> {
    let (s, t) = edge;
    if !g.contains_edge(s, t) {
        return Err(Error::InvalidInput(format!("unknown edge ({}, {})", s + 1, t + 1)));
    }
    let m = g.vertex_count();
    let mut b = DMatrix::zeros(m, m);
    b[(s, s)] = -1.0;
    b[(t, s)] = 1.0;
    Ok(b)
}

/// Multiplicity of the zero eigenvalue and the largest real part among the
/// remaining spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub zero_multiplicity: usize,
    pub max_nonzero_real_part: Option<f64>,
}

/// Dense eigenvalue scan of a generator. Eigenvalues with modulus at most
/// `EIGEN_ZERO_TOL` count as zero.
pub fn spectral_check(gen: &Generator) -> SpectralReport {
    let eigenvalues = gen.matrix().clone().complex_eigenvalues();
    let mut zero_multiplicity = 0;
    let mut max_nonzero: Option<f64> = None;
    for ev in eigenvalues.iter() {
        if ev.norm() <= EIGEN_ZERO_TOL {
            zero_multiplicity += 1;
        } else {
            max_nonzero = Some(match max_nonzero {
                Some(cur) => cur.max(ev.re),
                None => ev.re,
            });
        }
    }
    SpectralReport { zero_multiplicity, max_nonzero_real_part: max_nonzero }
}

/// The unique `z` on the simplex with `Gᵀz = 0`, solved from the bordered
/// least-squares system `[Gᵀ; 1ᵀ] z = [0; 1]`.
pub fn stationary_distribution(gen: &Generator) -> Result<Distribution> {
    let report = spectral_check(gen);
    if report.zero_multiplicity != 1 {
        return Err(Error::NoUniqueStationary { multiplicity: report.zero_multiplicity });
    }
    let m = gen.dim();
    let mut a = DMatrix::zeros(m + 1, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = gen.entry(j, i);
        }
    }
    for j in 0..m {
        a[(m, j)] = 1.0;
    }
    let mut b = DVector::zeros(m + 1);
    b[m] = 1.0;
    let svd = a.svd(true, true);
    let z = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidInput(format!("stationary solve failed: {}", e)))?;
    let z: Vec<f64> = z.iter().copied().collect();
    if z.iter().any(|&v| v < -MASS_TOL) {
        return Err(Error::InvalidInput(
            "stationary solve produced a negative component".into(),
        ));
    }
    Distribution::new(z)
}
