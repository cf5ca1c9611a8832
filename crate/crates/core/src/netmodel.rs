//! Network description, validation, and bus-injection-model coefficients.
//!
//! A network is a radial graph of buses with three phases per bus; bus 0 is
//! the slack bus with fixed voltage. Each controllable node (bus, phase)
//! carries active/reactive injection bounds and voltage magnitude limits.
//! Fixed injections are expressed by collapsing the bounds (`p_lo == p_hi`).
//!
//! The document format is JSON with top-level keys `buses`, `slack_voltage`,
//! `lines`, `nodes`, `renewables`. Complex numbers are `[re, im]` pairs,
//! phases are the strings `"a"`, `"b"`, `"c"`. Shunt admittances are not
//! modeled; `lines[*].y` is the 3x3 series admittance of the line.

use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermitian::HermitianMatrix;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("document parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bus count must be at least 2, got {0}")]
    TooFewBuses(usize),
    #[error("line ({from}, {to}): {reason}")]
    BadLine { from: usize, to: usize, reason: String },
    #[error("duplicate line ({from}, {to})")]
    DuplicateLine { from: usize, to: usize },
    #[error("network not radial: {0} lines for {1} buses")]
    NotRadial(usize, usize),
    #[error("network disconnected: bus {0} unreachable from the slack bus")]
    Disconnected(usize),
    #[error("node (bus {bus}, phase {phase}): {reason}")]
    BadNode { bus: usize, phase: char, reason: String },
    #[error("missing node entry for bus {bus} phase {phase}")]
    MissingNode { bus: usize, phase: char },
    #[error("renewable entry {index}: {reason}")]
    BadRenewable { index: usize, reason: String },
}

/// A (bus, phase) pair; phase is 0, 1, 2 for a, b, c.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRef {
    pub bus: usize,
    pub phase: usize,
}

impl NodeRef {
    pub fn phase_letter(&self) -> char {
        ['a', 'b', 'c'][self.phase]
    }
}

#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub y: Matrix3<Complex64>,
}

/// Injection bounds and voltage limits of one non-slack node.
#[derive(Debug, Clone, Copy)]
pub struct NodeLimits {
    pub p_lo: f64,
    pub p_hi: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

/// Validated three-phase radial network. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ThreePhaseNetwork {
    buses: usize,
    slack_voltage: Vector3<Complex64>,
    lines: Vec<Line>,
    /// Limits for non-slack nodes in canonical order: bus-major, phase-minor.
    limits: Vec<NodeLimits>,
    renewables: Vec<NodeRef>,
    adjacency: Vec<Vec<usize>>,
}

impl ThreePhaseNetwork {
    pub fn new(
        buses: usize,
        slack_voltage: Vector3<Complex64>,
        lines: Vec<Line>,
        limits_by_node: Vec<(NodeRef, NodeLimits)>,
        renewables: Vec<NodeRef>,
    ) -> Result<Self, NetworkError> {
        if buses < 2 {
            return Err(NetworkError::TooFewBuses(buses));
        }
        let mut seen = std::collections::HashSet::new();
        let mut adjacency = vec![Vec::new(); buses];
        for line in &lines {
            if line.from >= buses || line.to >= buses {
                return Err(NetworkError::BadLine {
                    from: line.from,
                    to: line.to,
                    reason: "bus index out of range".into(),
                });
            }
            if line.from == line.to {
                return Err(NetworkError::BadLine {
                    from: line.from,
                    to: line.to,
                    reason: "self-loop".into(),
                });
            }
            let key = (line.from.min(line.to), line.from.max(line.to));
            if !seen.insert(key) {
                return Err(NetworkError::DuplicateLine {
                    from: line.from,
                    to: line.to,
                });
            }
            adjacency[line.from].push(line.to);
            adjacency[line.to].push(line.from);
        }
        // Connectivity from the slack bus.
        let mut reached = vec![false; buses];
        let mut stack = vec![0usize];
        reached[0] = true;
        while let Some(b) = stack.pop() {
            for &nb in &adjacency[b] {
                if !reached[nb] {
                    reached[nb] = true;
                    stack.push(nb);
                }
            }
        }
        if let Some(bus) = reached.iter().position(|r| !r) {
            return Err(NetworkError::Disconnected(bus));
        }
        if lines.len() != buses - 1 {
            return Err(NetworkError::NotRadial(lines.len(), buses));
        }

        // Node limits: each non-slack (bus, phase) exactly once.
        let n_nodes = 3 * (buses - 1);
        let mut limits = vec![None; n_nodes];
        for (node, lim) in limits_by_node {
            if node.bus == 0 || node.bus >= buses || node.phase > 2 {
                return Err(NetworkError::BadNode {
                    bus: node.bus,
                    phase: node.phase_letter(),
                    reason: "bus/phase out of range (bus 0 carries no limits)".into(),
                });
            }
            let idx = 3 * (node.bus - 1) + node.phase;
            if limits[idx].is_some() {
                return Err(NetworkError::BadNode {
                    bus: node.bus,
                    phase: node.phase_letter(),
                    reason: "duplicate node entry".into(),
                });
            }
            if lim.p_lo > lim.p_hi || lim.q_lo > lim.q_hi {
                return Err(NetworkError::BadNode {
                    bus: node.bus,
                    phase: node.phase_letter(),
                    reason: format!(
                        "inverted bounds: p [{}, {}], q [{}, {}]",
                        lim.p_lo, lim.p_hi, lim.q_lo, lim.q_hi
                    ),
                });
            }
            if !(lim.v_lo > 0.0 && lim.v_lo < lim.v_hi) {
                return Err(NetworkError::BadNode {
                    bus: node.bus,
                    phase: node.phase_letter(),
                    reason: format!("voltage limits must satisfy 0 < v_lo < v_hi, got [{}, {}]", lim.v_lo, lim.v_hi),
                });
            }
            limits[idx] = Some(lim);
        }
        for (idx, lim) in limits.iter().enumerate() {
            if lim.is_none() {
                return Err(NetworkError::MissingNode {
                    bus: idx / 3 + 1,
                    phase: ['a', 'b', 'c'][idx % 3],
                });
            }
        }
        let limits: Vec<NodeLimits> = limits.into_iter().map(Option::unwrap).collect();

        let mut seen_r = std::collections::HashSet::new();
        for (i, r) in renewables.iter().enumerate() {
            if r.bus == 0 || r.bus >= buses || r.phase > 2 {
                return Err(NetworkError::BadRenewable {
                    index: i,
                    reason: format!("(bus {}, phase {}) is not a non-slack node", r.bus, r.phase_letter()),
                });
            }
            if !seen_r.insert((r.bus, r.phase)) {
                return Err(NetworkError::BadRenewable {
                    index: i,
                    reason: format!("duplicate renewable node (bus {}, phase {})", r.bus, r.phase_letter()),
                });
            }
        }

        Ok(Self {
            buses,
            slack_voltage,
            lines,
            limits,
            renewables,
            adjacency,
        })
    }

    /// Total number of buses, N + 1 (slack included).
    pub fn bus_count(&self) -> usize {
        self.buses
    }

    /// Number of non-slack buses N.
    pub fn non_slack_buses(&self) -> usize {
        self.buses - 1
    }

    /// Number of non-slack nodes, 3N.
    pub fn node_count(&self) -> usize {
        3 * (self.buses - 1)
    }

    /// Dimension of the full voltage vector, 3(N+1).
    pub fn dim(&self) -> usize {
        3 * self.buses
    }

    pub fn slack_voltage(&self) -> &Vector3<Complex64> {
        &self.slack_voltage
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn renewables(&self) -> &[NodeRef] {
        &self.renewables
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].contains(&j)
    }

    /// Limits of a non-slack node.
    pub fn limits(&self, node: NodeRef) -> &NodeLimits {
        &self.limits[self.node_index(node)]
    }

    pub fn limits_by_index(&self, idx: usize) -> &NodeLimits {
        &self.limits[idx]
    }

    /// Index of a non-slack node into per-node arrays: `3 (bus - 1) + phase`.
    pub fn node_index(&self, node: NodeRef) -> usize {
        assert!(node.bus >= 1 && node.bus < self.buses && node.phase < 3);
        3 * (node.bus - 1) + node.phase
    }

    /// Index into the full voltage vector: `3 bus + phase`.
    pub fn flat_index(&self, node: NodeRef) -> usize {
        3 * node.bus + node.phase
    }

    pub fn node_from_index(&self, idx: usize) -> NodeRef {
        NodeRef {
            bus: idx / 3 + 1,
            phase: idx % 3,
        }
    }

    /// Non-slack nodes in canonical order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeRef> + '_ {
        (0..self.node_count()).map(|i| self.node_from_index(i))
    }

    /// Positions (node indices) of the renewable nodes, in `u` order.
    pub fn renewable_node_indices(&self) -> Vec<usize> {
        self.renewables.iter().map(|r| self.node_index(*r)).collect()
    }
}

// ---------------------------------------------------------------------------
// Document parsing

#[derive(Serialize, Deserialize)]
struct DocComplex(f64, f64);

#[derive(Serialize, Deserialize)]
struct DocLine {
    from: usize,
    to: usize,
    y: Vec<Vec<DocComplex>>,
}

#[derive(Serialize, Deserialize)]
struct DocNode {
    bus: usize,
    phase: String,
    p_lo: f64,
    p_hi: f64,
    q_lo: f64,
    q_hi: f64,
    v_lo: f64,
    v_hi: f64,
}

#[derive(Serialize, Deserialize)]
struct DocRenewable {
    bus: usize,
    phase: String,
}

#[derive(Serialize, Deserialize)]
struct DocNetwork {
    buses: usize,
    slack_voltage: Vec<DocComplex>,
    lines: Vec<DocLine>,
    nodes: Vec<DocNode>,
    renewables: Vec<DocRenewable>,
}

fn parse_phase(s: &str, bus: usize) -> Result<usize, NetworkError> {
    match s {
        "a" | "A" => Ok(0),
        "b" | "B" => Ok(1),
        "c" | "C" => Ok(2),
        other => Err(NetworkError::BadNode {
            bus,
            phase: '?',
            reason: format!("unknown phase {other:?}, expected \"a\", \"b\" or \"c\""),
        }),
    }
}

/// Parse and validate a network document.
pub fn parse_network(document: &str) -> Result<ThreePhaseNetwork, NetworkError> {
    let doc: DocNetwork = serde_json::from_str(document)?;
    if doc.slack_voltage.len() != 3 {
        return Err(NetworkError::BadNode {
            bus: 0,
            phase: '?',
            reason: format!("slack_voltage must have 3 entries, got {}", doc.slack_voltage.len()),
        });
    }
    let slack = Vector3::from_iterator(doc.slack_voltage.iter().map(|c| Complex64::new(c.0, c.1)));
    let mut lines = Vec::with_capacity(doc.lines.len());
    for l in &doc.lines {
        if l.y.len() != 3 || l.y.iter().any(|row| row.len() != 3) {
            return Err(NetworkError::BadLine {
                from: l.from,
                to: l.to,
                reason: "y must be a 3x3 matrix of [re, im] pairs".into(),
            });
        }
        let y = Matrix3::from_fn(|r, c| Complex64::new(l.y[r][c].0, l.y[r][c].1));
        lines.push(Line {
            from: l.from,
            to: l.to,
            y,
        });
    }
    let mut limits = Vec::with_capacity(doc.nodes.len());
    for n in &doc.nodes {
        let phase = parse_phase(&n.phase, n.bus)?;
        limits.push((
            NodeRef { bus: n.bus, phase },
            NodeLimits {
                p_lo: n.p_lo,
                p_hi: n.p_hi,
                q_lo: n.q_lo,
                q_hi: n.q_hi,
                v_lo: n.v_lo,
                v_hi: n.v_hi,
            },
        ));
    }
    let mut renewables = Vec::with_capacity(doc.renewables.len());
    for r in &doc.renewables {
        let phase = parse_phase(&r.phase, r.bus)?;
        renewables.push(NodeRef { bus: r.bus, phase });
    }
    ThreePhaseNetwork::new(doc.buses, slack, lines, limits, renewables)
}

/// Serialize a network back to the document format. `parse_network` of the
/// output reproduces the network.
pub fn network_to_document(net: &ThreePhaseNetwork) -> String {
    let doc = DocNetwork {
        buses: net.buses,
        slack_voltage: net
            .slack_voltage
            .iter()
            .map(|z| DocComplex(z.re, z.im))
            .collect(),
        lines: net
            .lines
            .iter()
            .map(|l| DocLine {
                from: l.from,
                to: l.to,
                y: (0..3)
                    .map(|r| (0..3).map(|c| DocComplex(l.y[(r, c)].re, l.y[(r, c)].im)).collect())
                    .collect(),
            })
            .collect(),
        nodes: net
            .nodes()
            .map(|node| {
                let lim = net.limits(node);
                DocNode {
                    bus: node.bus,
                    phase: node.phase_letter().to_string(),
                    p_lo: lim.p_lo,
                    p_hi: lim.p_hi,
                    q_lo: lim.q_lo,
                    q_hi: lim.q_hi,
                    v_lo: lim.v_lo,
                    v_hi: lim.v_hi,
                }
            })
            .collect(),
        renewables: net
            .renewables
            .iter()
            .map(|r| DocRenewable {
                bus: r.bus,
                phase: r.phase_letter().to_string(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("document serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Coefficient matrices

/// Assemble the network admittance matrix: `Y_jj = sum_k y_jk` on diagonal
/// blocks, `Y_jk = -y_jk` on line blocks, zero elsewhere.
pub fn assemble_admittance(net: &ThreePhaseNetwork) -> DMatrix<Complex64> {
    let dim = net.dim();
    let mut y = DMatrix::<Complex64>::zeros(dim, dim);
    for line in net.lines() {
        let (j, k) = (line.from, line.to);
        for r in 0..3 {
            for c in 0..3 {
                let v = line.y[(r, c)];
                y[(3 * j + r, 3 * j + c)] += v;
                y[(3 * k + r, 3 * k + c)] += v;
                y[(3 * j + r, 3 * k + c)] -= v;
                y[(3 * k + r, 3 * j + c)] -= v;
            }
        }
    }
    y
}

/// Injection coefficient matrices of one node: `(P, Q, E)` with
/// `Re(s) + u = V^H P V`, `Im(s) = V^H Q V`, `|V_node|^2 = V^H E V`.
pub fn injection_coefficients(
    net: &ThreePhaseNetwork,
    node: NodeRef,
) -> (HermitianMatrix, HermitianMatrix, HermitianMatrix) {
    assert!(node.bus < net.bus_count() && node.phase < 3, "index out of range");
    let y = assemble_admittance(net);
    injection_coefficients_from(&y, net.dim(), net.flat_index(node))
}

pub(crate) fn injection_coefficients_from(
    y: &DMatrix<Complex64>,
    dim: usize,
    flat: usize,
) -> (HermitianMatrix, HermitianMatrix, HermitianMatrix) {
    // Y_j = E_j Y keeps only row `flat` of Y.
    let mut yj = DMatrix::<Complex64>::zeros(dim, dim);
    for c in 0..dim {
        yj[(flat, c)] = y[(flat, c)];
    }
    let yj_h = yj.adjoint();
    let p = HermitianMatrix::symmetrized((&yj_h + &yj) * Complex64::new(0.5, 0.0));
    let q = HermitianMatrix::symmetrized((&yj - &yj_h) * Complex64::new(0.0, 0.5));
    let mut e = DMatrix::<Complex64>::zeros(dim, dim);
    e[(flat, flat)] = Complex64::new(1.0, 0.0);
    (p, q, HermitianMatrix::symmetrized(e))
}

/// Loss matrix `C = (Y + Y^H) / 2`; `tr(C W)` is the total active power loss.
pub fn loss_matrix(net: &ThreePhaseNetwork) -> HermitianMatrix {
    let y = assemble_admittance(net);
    let yh = y.adjoint();
    HermitianMatrix::symmetrized((y + yh) * Complex64::new(0.5, 0.0))
}

/// Everything the SDP formulations need, precomputed once per network.
pub struct CoefficientBundle {
    pub y: DMatrix<Complex64>,
    pub c: HermitianMatrix,
    /// Per non-slack node, canonical order.
    pub p_mats: Vec<HermitianMatrix>,
    pub q_mats: Vec<HermitianMatrix>,
    /// Flat index of each node's diagonal basis entry.
    pub e_flat: Vec<usize>,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    /// Squared voltage limits.
    pub v_lo_sq: Vec<f64>,
    pub v_hi_sq: Vec<f64>,
    pub v_ref: Vector3<Complex64>,
    /// `v_ref v_ref^H`.
    pub v_ref_outer: Matrix3<Complex64>,
    pub renewable_nodes: Vec<usize>,
    pub dim: usize,
}

impl CoefficientBundle {
    pub fn new(net: &ThreePhaseNetwork) -> Self {
        let dim = net.dim();
        let y = assemble_admittance(net);
        let yh = y.adjoint();
        let c = HermitianMatrix::symmetrized((&y + yh) * Complex64::new(0.5, 0.0));
        let mut p_mats = Vec::with_capacity(net.node_count());
        let mut q_mats = Vec::with_capacity(net.node_count());
        let mut e_flat = Vec::with_capacity(net.node_count());
        for node in net.nodes() {
            let flat = net.flat_index(node);
            let (p, q, _e) = injection_coefficients_from(&y, dim, flat);
            p_mats.push(p);
            q_mats.push(q);
            e_flat.push(flat);
        }
        let v_ref = *net.slack_voltage();
        let v_ref_outer = Matrix3::from_fn(|r, c| v_ref[r] * v_ref[c].conj());
        let limits: Vec<&NodeLimits> = (0..net.node_count())
            .map(|i| net.limits_by_index(i))
            .collect();
        CoefficientBundle {
            y,
            c,
            p_mats,
            q_mats,
            e_flat,
            p_lo: limits.iter().map(|l| l.p_lo).collect(),
            p_hi: limits.iter().map(|l| l.p_hi).collect(),
            q_lo: limits.iter().map(|l| l.q_lo).collect(),
            q_hi: limits.iter().map(|l| l.q_hi).collect(),
            v_lo_sq: limits.iter().map(|l| l.v_lo * l.v_lo).collect(),
            v_hi_sq: limits.iter().map(|l| l.v_hi * l.v_hi).collect(),
            v_ref,
            v_ref_outer,
            renewable_nodes: net.renewable_node_indices(),
            dim,
        }
    }

    /// Place a 3x3 block in the top-left corner of a full-dimension matrix.
    pub fn place_slack_block(&self, alpha: &Matrix3<Complex64>) -> DMatrix<Complex64> {
        let mut m = DMatrix::<Complex64>::zeros(self.dim, self.dim);
        for r in 0..3 {
            for c in 0..3 {
                m[(r, c)] = alpha[(r, c)];
            }
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Assumption diagnostics

/// Per-line symmetry and conductance diagonal-dominance diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub lines: Vec<LineDiagnostic>,
    pub dominance_ratio_required: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineDiagnostic {
    pub from: usize,
    pub to: usize,
    /// `max |y - y^T|` over entries.
    pub symmetry_defect: f64,
    /// Min over rows of `|g_ii| / sum_{j != i} |g_ij|` for `g = Re(y)`;
    /// `None` when a row has no off-diagonal coupling (ratio is unbounded).
    pub dominance_ratio: Option<f64>,
    pub ok: bool,
}

/// Check the exactness precondition: symmetric series admittances and
/// diagonally dominant conductance rows.
pub fn validate_assumption1(net: &ThreePhaseNetwork, dominance_ratio: f64) -> AssumptionReport {
    let mut lines = Vec::new();
    let mut passes = true;
    for line in net.lines() {
        let mut defect = 0.0_f64;
        for r in 0..3 {
            for c in 0..3 {
                defect = defect.max((line.y[(r, c)] - line.y[(c, r)]).norm());
            }
        }
        let mut min_ratio: Option<f64> = None;
        for r in 0..3 {
            let diag = line.y[(r, r)].re.abs();
            let off: f64 = (0..3)
                .filter(|&c| c != r)
                .map(|c| line.y[(r, c)].re.abs())
                .sum();
            if off > 0.0 {
                let ratio = diag / off;
                min_ratio = Some(min_ratio.map_or(ratio, |m: f64| m.min(ratio)));
            }
        }
        let ok = defect <= 1e-10 && min_ratio.map_or(true, |r| r >= dominance_ratio);
        passes &= ok;
        lines.push(LineDiagnostic {
            from: line.from,
            to: line.to,
            symmetry_defect: defect,
            dominance_ratio: min_ratio,
            ok,
        });
    }
    AssumptionReport {
        lines,
        dominance_ratio_required: dominance_ratio,
        passes,
    }
}
