//! Small bundled networks used throughout the test suite and handy for
//! experimenting with the CLI. All values are per-unit.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::netmodel::{Line, NodeLimits, NodeRef, ThreePhaseNetwork};

/// Balanced positive-sequence slack voltage `[1, e^{-i 2pi/3}, e^{i 2pi/3}]`.
pub fn balanced_slack() -> Vector3<Complex64> {
    let ang = 2.0 * std::f64::consts::PI / 3.0;
    Vector3::new(
        Complex64::new(1.0, 0.0),
        Complex64::from_polar(1.0, -ang),
        Complex64::from_polar(1.0, ang),
    )
}

/// Per-phase decoupled admittance `diag(re + i im)`.
pub fn decoupled_line(re: f64, im: f64) -> Matrix3<Complex64> {
    Matrix3::from_diagonal(&Vector3::from_element(Complex64::new(re, im)).into())
}

fn coupled_line(scale: f64) -> Matrix3<Complex64> {
    // Symmetric impedance with weak mutual coupling; the inverse has a
    // diagonally dominant conductance (row ratio about 3.3).
    let z_self = Complex64::new(0.04, 0.08) * scale;
    let z_mut = Complex64::new(0.004, 0.012) * scale;
    let z = Matrix3::from_fn(|r, c| if r == c { z_self } else { z_mut });
    z.try_inverse().expect("line impedance is invertible")
}

/// Two-bus network: slack plus one bus with per-phase controllable
/// `p in [0, 0.5]`, `q in [-0.3, 0.3]`, voltage limits `[0.9, 1.1]`,
/// per-phase decoupled line impedance `0.01 + 0.02i`, and a single
/// renewable injection at phase a.
pub fn net2() -> ThreePhaseNetwork {
    net2_with_renewables(vec![NodeRef { bus: 1, phase: 0 }])
}

/// `net2` with renewable injections on phases a and b, giving a
/// two-dimensional renewable space on the same electrical network.
pub fn net2_two_axis() -> ThreePhaseNetwork {
    net2_with_renewables(vec![NodeRef { bus: 1, phase: 0 }, NodeRef { bus: 1, phase: 1 }])
}

fn net2_with_renewables(renewables: Vec<NodeRef>) -> ThreePhaseNetwork {
    // 1 / (0.01 + 0.02i) = 20 - 40i per phase.
    let y = decoupled_line(20.0, -40.0);
    let lines = vec![Line { from: 0, to: 1, y }];
    let mut limits = Vec::new();
    for phase in 0..3 {
        limits.push((
            NodeRef { bus: 1, phase },
            NodeLimits {
                p_lo: 0.0,
                p_hi: 0.5,
                q_lo: -0.3,
                q_hi: 0.3,
                v_lo: 0.9,
                v_hi: 1.1,
            },
        ));
    }
    ThreePhaseNetwork::new(2, balanced_slack(), lines, limits, renewables)
        .expect("net2 fixture is valid")
}

/// Four-bus chain 0-1-2-3 with mutually coupled symmetric lines, one
/// controllable node (bus 1 phase a), fixed unbalanced loads elsewhere, and
/// renewable injections at bus 2 phase a and bus 3 phase b.
pub fn net4() -> ThreePhaseNetwork {
    let lines = vec![
        Line { from: 0, to: 1, y: coupled_line(1.0) },
        Line { from: 1, to: 2, y: coupled_line(1.2) },
        Line { from: 2, to: 3, y: coupled_line(0.9) },
    ];
    let fixed = |p: f64, q: f64| NodeLimits {
        p_lo: p,
        p_hi: p,
        q_lo: q,
        q_hi: q,
        v_lo: 0.9,
        v_hi: 1.1,
    };
    let limits = vec![
        (
            NodeRef { bus: 1, phase: 0 },
            NodeLimits { p_lo: -0.3, p_hi: 0.3, q_lo: -0.3, q_hi: 0.3, v_lo: 0.9, v_hi: 1.1 },
        ),
        (NodeRef { bus: 1, phase: 1 }, fixed(-0.05, -0.02)),
        (NodeRef { bus: 1, phase: 2 }, fixed(-0.08, -0.03)),
        (NodeRef { bus: 2, phase: 0 }, fixed(0.0, 0.0)),
        (NodeRef { bus: 2, phase: 1 }, fixed(-0.06, -0.02)),
        (NodeRef { bus: 2, phase: 2 }, fixed(-0.03, -0.01)),
        (NodeRef { bus: 3, phase: 0 }, fixed(-0.05, -0.02)),
        (NodeRef { bus: 3, phase: 1 }, fixed(0.0, 0.0)),
        (NodeRef { bus: 3, phase: 2 }, fixed(-0.04, -0.015)),
    ];
    let renewables = vec![NodeRef { bus: 2, phase: 0 }, NodeRef { bus: 3, phase: 1 }];
    ThreePhaseNetwork::new(4, balanced_slack(), lines, limits, renewables)
        .expect("net4 fixture is valid")
}

pub fn net2_document() -> String {
    crate::netmodel::network_to_document(&net2())
}

pub fn net4_document() -> String {
    crate::netmodel::network_to_document(&net4())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::validate_assumption1;

    #[test]
    fn fixtures_satisfy_assumption1() {
        assert!(validate_assumption1(&net2(), 3.0).passes);
        assert!(validate_assumption1(&net4(), 3.0).passes);
        assert!(validate_assumption1(&net2_two_axis(), 3.0).passes);
    }

    #[test]
    fn net4_documents_parse() {
        let net = crate::netmodel::parse_network(&net4_document()).unwrap();
        assert_eq!(net.bus_count(), 4);
        assert_eq!(net.renewables().len(), 2);
    }
}
