//! Carrier distribution functions.
//!
//! A distribution function `F` maps the scaled chemical potential `s` of a
//! carrier species to its density `u = F(s)`. Two choices are provided:
//! Boltzmann statistics `F(s) = exp(s)` and Fermi–Dirac statistics with the
//! normalized integral of order 1/2,
//!
//! ```text
//! F(s) = 2/√π ∫₀^∞ √t / (1 + exp(t − s)) dt.
//! ```
//!
//! The Fermi–Dirac integral is computed by adaptive Gauss–Kronrod quadrature
//! between the two tails, where convergent or asymptotic series are used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::integrate_pair;

/// Below this chemical potential the alternating Boltzmann series is used.
pub const NONDEGENERATE_CROSSOVER: f64 = -15.0;
/// Above this chemical potential the Sommerfeld expansion is used.
pub const DEGENERATE_CROSSOVER: f64 = 30.0;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Carrier species. Electrons carry index k = 1, holes k = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Electrons,
    Holes,
}

impl Carrier {
    pub const BOTH: [Carrier; 2] = [Carrier::Electrons, Carrier::Holes];

    /// The factor (−1)^k in χ_k = Φ_k + (−1)^k φ.
    pub fn potential_sign(self) -> f64 {
        match self {
            Carrier::Electrons => -1.0,
            Carrier::Holes => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Carrier::Electrons => 0,
            Carrier::Holes => 1,
        }
    }

    /// Chemical potential from quasi-Fermi level and electrostatic potential.
    pub fn chemical_potential(self, quasi_fermi: f64, phi: f64) -> f64 {
        quasi_fermi + self.potential_sign() * phi
    }

    /// Quasi-Fermi level from chemical potential and electrostatic potential.
    pub fn quasi_fermi(self, chemical: f64, phi: f64) -> f64 {
        chemical - self.potential_sign() * phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticsKind {
    Boltzmann,
    FermiDiracHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub relative_tolerance: f64,
    pub max_depth: u32,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-14,
            max_depth: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsModel {
    pub kind: StatisticsKind,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    /// Relative density tolerance of [`StatisticsModel::invert`].
    #[serde(default = "default_inversion_rtol")]
    pub inversion_rtol: f64,
}

fn default_inversion_rtol() -> f64 {
    1e-13
}

impl StatisticsModel {
    pub fn boltzmann() -> Self {
        Self {
            kind: StatisticsKind::Boltzmann,
            quadrature: QuadratureConfig::default(),
            inversion_rtol: default_inversion_rtol(),
        }
    }

    pub fn fermi_dirac_half() -> Self {
        Self {
            kind: StatisticsKind::FermiDiracHalf,
            ..Self::boltzmann()
        }
    }

    pub fn is_boltzmann(&self) -> bool {
        self.kind == StatisticsKind::Boltzmann
    }

    /// Density `F(s)`.
    pub fn eval(&self, s: f64) -> Result<f64> {
        Ok(self.eval_with_derivative(s)?.0)
    }

    /// Derivative `F'(s)`; for Fermi–Dirac statistics this is the integral of
    /// order −1/2.
    pub fn eval_derivative(&self, s: f64) -> Result<f64> {
        Ok(self.eval_with_derivative(s)?.1)
    }

    /// Diffusion enhancement `η = F/F'`, exactly one for Boltzmann statistics.
    pub fn eval_eta(&self, s: f64) -> Result<f64> {
        match self.kind {
            StatisticsKind::Boltzmann => {
                check_finite(s)?;
                Ok(1.0)
            }
            StatisticsKind::FermiDiracHalf => {
                let (f, df) = self.eval_with_derivative(s)?;
                Ok(f / df)
            }
        }
    }

    /// `(F(s), F'(s))` from a single evaluation.
    pub fn eval_with_derivative(&self, s: f64) -> Result<(f64, f64)> {
        check_finite(s)?;
        match self.kind {
            StatisticsKind::Boltzmann => {
                let e = s.exp();
                Ok((e, e))
            }
            StatisticsKind::FermiDiracHalf => {
                if s <= NONDEGENERATE_CROSSOVER {
                    Ok(fd_nondegenerate_series(s))
                } else if s >= DEGENERATE_CROSSOVER {
                    Ok(fd_sommerfeld(s))
                } else {
                    fd_quadrature(s, &self.quadrature)
                }
            }
        }
    }

    /// Chemical potential `s` with `F(s) = u`.
    ///
    /// The bracket starts at the Boltzmann guess `ln u` (a lower bound for
    /// Fermi–Dirac statistics since `F(s) < exp(s)`) and grows geometrically
    /// upwards; the root is then refined by Newton steps that fall back to
    /// bisection whenever they leave the bracket.
    pub fn invert(&self, u: f64) -> Result<f64> {
        if !(u > 0.0) || !u.is_finite() {
            return Err(Error::Domain(format!("density must be positive and finite, got {u}")));
        }
        if self.is_boltzmann() {
            return Ok(u.ln());
        }
        let rtol = self.inversion_rtol;
        let mut lo = u.ln();
        let mut step = 1.0;
        let mut hi = lo + step;
        while self.eval(hi)? < u {
            lo = hi;
            step *= 2.0;
            hi = lo + step;
        }
        let mut s = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (f, df) = self.eval_with_derivative(s)?;
            let r = f - u;
            if r.abs() <= rtol * u {
                return Ok(s);
            }
            if r > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - r / df;
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * (1.0 + s.abs()) {
                return Ok(s);
            }
        }
        Ok(s)
    }
}

fn check_finite(s: f64) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("chemical potential must be finite, got {s}")))
    }
}

/// `F(s) = Σ (−1)^{k+1} e^{ks} / k^{3/2}` and `F'(s) = Σ (−1)^{k+1} e^{ks} / k^{1/2}`,
/// convergent for s < 0 and rapidly so in the nondegenerate tail.
fn fd_nondegenerate_series(s: f64) -> (f64, f64) {
    let z = s.exp();
    let mut f = 0.0;
    let mut df = 0.0;
    let mut zk = z;
    let mut sign = 1.0;
    for k in 1..=20 {
        let kf = k as f64;
        let sq = kf.sqrt();
        f += sign * zk / (kf * sq);
        df += sign * zk / sq;
        zk *= z;
        sign = -sign;
        if zk < 1e-18 * z {
            break;
        }
    }
    (f, df)
}

/// ζ(2n) for n = 1..=8.
const ZETA_EVEN: [f64; 8] = [
    1.644_934_066_848_226_4,
    1.082_323_233_711_138_2,
    1.017_343_061_984_449_1,
    1.004_077_356_197_944_3,
    1.000_994_575_127_818_1,
    1.000_246_086_553_308_0,
    1.000_061_248_135_058_7,
    1.000_015_282_259_408_7,
];

/// Sommerfeld expansion of the order-1/2 integral for large s. For this
/// half-integer order the exponentially small correction vanishes.
fn fd_sommerfeld(s: f64) -> (f64, f64) {
    // F(s) = s^{3/2}/Γ(5/2) [1 + Σ_n 2(1 − 2^{1−2n}) ζ(2n) (3/2)(1/2)…(5/2 − 2n) s^{−2n}]
    let gamma_5_2 = 0.75 * std::f64::consts::PI.sqrt();
    let mut f = s.powf(1.5);
    let mut df = 1.5 * s.sqrt();
    let mut falling = 1.0;
    let mut last = f64::INFINITY;
    for (n, zeta) in ZETA_EVEN.iter().enumerate() {
        let n = n + 1;
        let m = 2 * n;
        // extend the falling factorial (j+1)(j)…(j+2−2n) by two factors
        falling *= (2.5 - (m as f64 - 1.0)) * (2.5 - m as f64);
        let c = 2.0 * (1.0 - 2f64.powi(1 - m as i32)) * zeta * falling;
        let p = 1.5 - m as f64;
        let term = c * s.powf(p);
        if term.abs() >= last {
            break;
        }
        last = term.abs();
        f += term;
        df += c * p * s.powf(p - 1.0);
        if term.abs() < 1e-17 * f {
            break;
        }
    }
    (f / gamma_5_2, df / gamma_5_2)
}

fn fd_quadrature(s: f64, cfg: &QuadratureConfig) -> Result<(f64, f64)> {
    // Substituting t = x² removes the √t and 1/√t endpoint singularities:
    //   F(s)  = 4/√π ∫ x² w(x) dx,   F'(s) = 2/√π ∫ w(x) dx,
    // with the occupation w(x) = 1/(1 + exp(x² − s)).
    let integrand = |x: f64| {
        let e = x * x - s;
        let w = if e > 0.0 {
            let q = (-e).exp();
            q / (1.0 + q)
        } else {
            1.0 / (1.0 + e.exp())
        };
        [2.0 * FRAC_2_SQRT_PI * x * x * w, FRAC_2_SQRT_PI * w]
    };
    let upper = (s.max(0.0) + 64.0).sqrt();
    let mut breaks = vec![0.0];
    if s > 0.0 {
        for edge in [s - 8.0, s, s + 8.0] {
            if edge > 0.0 {
                breaks.push(edge.sqrt());
            }
        }
    }
    breaks.push(upper);
    let [f, df] = integrate_pair(integrand, &breaks, cfg.relative_tolerance, cfg.max_depth)?;
    Ok((f, df))
}

/// Pair of distribution functions, one per carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatisticsPair {
    pub electrons: StatisticsModel,
    pub holes: StatisticsModel,
}

impl StatisticsPair {
    pub fn uniform(model: StatisticsModel) -> Self {
        Self {
            electrons: model,
            holes: model,
        }
    }

    pub fn get(&self, carrier: Carrier) -> &StatisticsModel {
        match carrier {
            Carrier::Electrons => &self.electrons,
            Carrier::Holes => &self.holes,
        }
    }
}
