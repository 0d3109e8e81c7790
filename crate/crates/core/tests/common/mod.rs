#![allow(dead_code)]

use vanroos::device::{
    Contact, DeviceSpec, DopingBox, InterfaceSpec, MaterialRegion, Mobility, RobinSegment, Schedule, Side,
};
use vanroos::recombination::SurfaceRecombination;

pub fn region(name: &str, bounds: Vec<[f64; 2]>, eps: f64, mu: [f64; 2]) -> MaterialRegion {
    let d = bounds.len();
    MaterialRegion {
        name: name.into(),
        bounds,
        permittivity: vec![eps; d],
        mobility: Mobility {
            electrons: vec![mu[0]; d],
            holes: vec![mu[1]; d],
        },
    }
}

/// Contact with prescribed potential and quasi-Fermi levels.
pub fn fixed_contact(name: &str, side: Side, phi: f64, quasi_fermi: [f64; 2]) -> Contact {
    Contact {
        name: name.into(),
        side,
        range: None,
        bias: None,
        phi: Some(Schedule::Constant(phi)),
        quasi_fermi: Some([Schedule::Constant(quasi_fermi[0]), Schedule::Constant(quasi_fermi[1])]),
    }
}

pub fn ohmic_contact(name: &str, side: Side, bias: f64) -> Contact {
    Contact {
        name: name.into(),
        side,
        range: None,
        bias: Some(Schedule::Constant(bias)),
        phi: None,
        quasi_fermi: None,
    }
}

pub fn robin(side: Side, capacity: f64, load: f64) -> RobinSegment {
    RobinSegment {
        side,
        range: None,
        capacity,
        load: Schedule::Constant(load),
    }
}

/// Unit bar with unit coefficients and potential contacts at both ends.
pub fn bar(phi_left: f64, phi_right: f64) -> DeviceSpec {
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.boundary.contacts = vec![
        fixed_contact("left", Side::XMin, phi_left, [0.0, 0.0]),
        fixed_contact("right", Side::XMax, phi_right, [0.0, 0.0]),
    ];
    spec
}

/// 1D layers split at the given interior points, with an interface on every
/// split.
pub fn layered_1d(length: f64, splits: &[f64], eps: &[f64], model: SurfaceRecombination) -> DeviceSpec {
    let mut edges = vec![0.0];
    edges.extend_from_slice(splits);
    edges.push(length);
    let mut spec = DeviceSpec::uniform_1d(length);
    spec.layers = edges
        .windows(2)
        .zip(eps)
        .enumerate()
        .map(|(i, (w, &e))| region(&format!("layer{i}"), vec![[w[0], w[1]]], e, [1.0, 1.0]))
        .collect();
    spec.interfaces = splits
        .iter()
        .map(|&p| InterfaceSpec {
            axis: 0,
            position: p,
            range: None,
            model: model.clone(),
        })
        .collect();
    spec
}

/// Abrupt symmetric pn junction on `[0, length]`: acceptors `d` on the left,
/// donors on the right, ohmic contacts at both ends.
pub fn pn_diode(length: f64, d: f64, bias: f64) -> DeviceSpec {
    let mut spec = DeviceSpec::uniform_1d(length);
    spec.doping.bulk = vec![
        DopingBox {
            bounds: vec![[0.0, 0.5 * length]],
            value: d,
        },
        DopingBox {
            bounds: vec![[0.5 * length, length]],
            value: -d,
        },
    ];
    spec.boundary.contacts = vec![
        ohmic_contact("anode", Side::XMin, bias),
        ohmic_contact("cathode", Side::XMax, 0.0),
    ];
    spec
}

/// Unit square split at `y = 0.5` into two layers (`ε = 1 | 2`), contacts on
/// the left and right sides, capacitive top.
pub fn two_layer_2d() -> DeviceSpec {
    let mut spec = DeviceSpec::uniform_1d(1.0);
    spec.dimension = 2;
    spec.extent = vec![1.0, 1.0];
    spec.layers = vec![
        region("bottom", vec![[0.0, 1.0], [0.0, 0.5]], 1.0, [1.0, 1.0]),
        region("top", vec![[0.0, 1.0], [0.5, 1.0]], 2.0, [0.5, 0.8]),
    ];
    spec.interfaces = vec![InterfaceSpec {
        axis: 1,
        position: 0.5,
        range: None,
        model: SurfaceRecombination::Zero,
    }];
    spec.boundary.contacts = vec![
        fixed_contact("left", Side::XMin, 0.0, [0.0, 0.0]),
        fixed_contact("right", Side::XMax, 0.0, [0.0, 0.0]),
    ];
    spec.boundary.robin = vec![robin(Side::YMax, 1.0, 0.0)];
    spec
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Least-squares slope of `log e` against `log h`.
pub fn observed_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
