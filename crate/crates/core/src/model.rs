//! Model right-hand side, parameter set, and equilibrium finder.
//!
//! The system couples logistic prey growth with a Holling type III
//! functional response and a delayed, Ricker-recruited predator:
//!
//! ```text
//! x'(t) = r (1 - x/K) x - y * g x^2 / (a^2 + x^2)
//! y'(t) = -b y(t) + [g xd^2 / (a^2 + xd^2)] * yd * exp(-yd / N)
//! ```
//!
//! where `xd = x(t - tau)`, `yd = y(t - tau)`. Equilibria solve the same
//! system with the delayed values identified with the current ones; the
//! positive branch reduces to the scalar gap function [`equilibrium_gap`]
//! whose zeros are intersections of the two equilibrium curves
//!
//! ```text
//! y = (r/g) (1 - x/K)(a^2 + x^2) / x
//! y = N ln( (g/b) x^2 / (a^2 + x^2) )
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Ecological parameter set.
///
/// All rates are per unit time, densities in the same unit as the state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Prey reproduction rate.
    pub r: f64,
    /// Carrying capacity.
    pub k: f64,
    /// Predator half-saturation constant.
    pub a: f64,
    /// Maximum per-capita predator consumption rate.
    pub gamma: f64,
    /// Predator mortality rate.
    pub beta: f64,
    /// Optimal reproductive density for the predator.
    pub n: f64,
    /// Maturation delay.
    pub tau: f64,
}

impl ModelParams {
    /// Builds a validated parameter set: every field strictly positive
    /// except `tau`, which may be zero.
    #[allow(clippy::too_many_arguments)]
    pub fn new(r: f64, k: f64, a: f64, gamma: f64, beta: f64, n: f64, tau: f64) -> Result<Self> {
        let p = Self { r, k, a, gamma, beta, n, tau };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, f64); 6] = [
            ("r", self.r),
            ("k", self.k),
            ("a", self.a),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("n", self.n),
        ];
        for (name, value) in positive {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidParam {
                    name,
                    value,
                    constraint: "must be finite and > 0",
                });
            }
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::InvalidParam {
                name: "tau",
                value: self.tau,
                constraint: "must be finite and >= 0",
            });
        }
        Ok(())
    }
}

/// Prey/predator density pair. Also reused for slope pairs (dx/dt, dy/dt).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
}

impl State {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub(crate) fn clamped_non_negative(self) -> Self {
        Self { x: self.x.max(0.0), y: self.y.max(0.0) }
    }

    pub(crate) fn min_component(&self) -> f64 {
        self.x.min(self.y)
    }
}

/// Which steady state a solution of the equilibrium system is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumKind {
    Origin,
    Boundary,
    Positive,
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EquilibriumKind::Origin => "origin",
            EquilibriumKind::Boundary => "boundary",
            EquilibriumKind::Positive => "positive",
        })
    }
}

/// A steady state together with the max-norm residual of the equilibrium
/// system evaluated at it.
///
/// `tangential` marks roots of the gap function found without a sign change
/// (even multiplicity); these are rare near-tangencies of the two
/// equilibrium curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub state: State,
    pub kind: EquilibriumKind,
    pub residual: f64,
    pub tangential: bool,
}

/// Holling type III consumption rate `g x^2 / (a^2 + x^2)`.
///
/// Monotone increasing in `x`, bounded above by `gamma`, half-saturated at
/// `x = a`.
pub fn functional_response(x: f64, params: &ModelParams) -> Result<f64> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain {
            op: "functional_response",
            reason: format!("prey density must be finite and >= 0, got {x}"),
        });
    }
    Ok(holling_iii(x, params.a, params.gamma))
}

#[inline]
pub(crate) fn holling_iii(x: f64, a: f64, gamma: f64) -> f64 {
    gamma * x * x / (a * a + x * x)
}

/// Model right-hand side: slope pair at the current state given the state
/// `tau` time units ago.
pub fn rhs(current: State, delayed: State, params: &ModelParams) -> Result<State> {
    for (name, s) in [("current", &current), ("delayed", &delayed)] {
        if !s.is_finite() || s.x < 0.0 || s.y < 0.0 {
            return Err(Error::Domain {
                op: "rhs",
                reason: format!("{name} state must be finite and non-negative, got ({}, {})", s.x, s.y),
            });
        }
    }
    Ok(rhs_raw(current, delayed, params))
}

#[inline]
pub(crate) fn rhs_raw(current: State, delayed: State, p: &ModelParams) -> State {
    let consumption = holling_iii(current.x, p.a, p.gamma);
    let recruitment = holling_iii(delayed.x, p.a, p.gamma) * delayed.y * (-delayed.y / p.n).exp();
    State {
        x: p.r * (1.0 - current.x / p.k) * current.x - consumption * current.y,
        y: -p.beta * current.y + recruitment,
    }
}

/// Condition (necessary and sufficient) for at least one positive
/// equilibrium: `(gamma/beta) K^2/(a^2+K^2) > 1`.
pub fn positive_existence_condition(params: &ModelParams) -> bool {
    (params.gamma / params.beta) * params.k * params.k / (params.a * params.a + params.k * params.k)
        > 1.0
}

/// Left endpoint of the admissible prey interval for positive equilibria:
/// the density where the logarithm's argument equals one.
///
/// Clamped to 1e-12 when `gamma <= beta` (the condition for positive
/// equilibria fails there and the gap function is never evaluated).
pub fn x_low(params: &ModelParams) -> f64 {
    if params.gamma <= params.beta * (1.0 + 1e-14) {
        1e-12
    } else {
        params.a * (params.beta / (params.gamma - params.beta)).sqrt()
    }
}

/// Signed gap between the two positive-equilibrium curves:
///
/// ```text
/// h(x) = (r/g)(1 - x/K)(a^2 + x^2)/x - N ln( (g/b) x^2/(a^2 + x^2) )
/// ```
///
/// Zeros of `h` on `(x_low, K)` are prey coordinates of positive equilibria.
pub fn equilibrium_gap(x: f64, params: &ModelParams) -> Result<f64> {
    if !positive_existence_condition(params) {
        return Err(Error::Domain {
            op: "equilibrium_gap",
            reason: "no positive equilibria exist for these parameters".to_string(),
        });
    }
    let lo = x_low(params);
    if !x.is_finite() || x <= lo || x >= params.k {
        return Err(Error::Domain {
            op: "equilibrium_gap",
            reason: format!("x = {x} outside admissible interval ({lo}, {})", params.k),
        });
    }
    Ok(gap_raw(x, params))
}

#[inline]
fn gap_raw(x: f64, p: &ModelParams) -> f64 {
    let den = p.a * p.a + x * x;
    (p.r / p.gamma) * (1.0 - x / p.k) * den / x - p.n * ((p.gamma / p.beta) * x * x / den).ln()
}

/// Prey-to-predator map along the first equilibrium curve.
#[inline]
fn curve_y(x: f64, p: &ModelParams) -> f64 {
    (p.r / p.gamma) * (1.0 - x / p.k) * (p.a * p.a + x * x) / x
}

/// Max-norm of the equilibrium system at a state.
pub fn equilibrium_residual(state: State, p: &ModelParams) -> f64 {
    let fr = holling_iii(state.x, p.a, p.gamma);
    let e1 = p.r * (1.0 - state.x / p.k) * state.x - fr * state.y;
    let e2 = -p.beta * state.y + fr * state.y * (-state.y / p.n).exp();
    e1.abs().max(e2.abs())
}

const SCAN_SUBINTERVALS: usize = 2000;
const BISECT_TARGET: f64 = 1e-12;
const MERGE_REL: f64 = 1e-8;
const TANGENT_SCAN_BAND: f64 = 1e-6;
const TANGENT_ACCEPT: f64 = 1e-10;

/// All equilibria of the model: the origin, the boundary state `(K, 0)`,
/// and every positive root of [`equilibrium_gap`] found by a uniform scan
/// over `(x_low, K)` followed by bisection. Sorted by prey density.
pub fn find_equilibria(params: &ModelParams) -> Vec<Equilibrium> {
    let mut out = vec![
        Equilibrium {
            state: State::new(0.0, 0.0),
            kind: EquilibriumKind::Origin,
            residual: 0.0,
            tangential: false,
        },
        Equilibrium {
            state: State::new(params.k, 0.0),
            kind: EquilibriumKind::Boundary,
            residual: equilibrium_residual(State::new(params.k, 0.0), params),
            tangential: false,
        },
    ];

    if positive_existence_condition(params) {
        for (x, tangential) in positive_roots(params) {
            let state = State::new(x, curve_y(x, params));
            out.push(Equilibrium {
                state,
                kind: EquilibriumKind::Positive,
                residual: equilibrium_residual(state, params),
                tangential,
            });
        }
    }

    out.sort_by(|a, b| a.state.x.total_cmp(&b.state.x));
    out
}

/// Scan + bisection root finder for the gap function, including the
/// secondary |h| scan for tangential (no-sign-change) roots.
fn positive_roots(p: &ModelParams) -> Vec<(f64, bool)> {
    let lo = x_low(p);
    let hi = p.k;
    let width = (hi - lo) / SCAN_SUBINTERVALS as f64;
    let grid: Vec<f64> = (0..=SCAN_SUBINTERVALS)
        .map(|i| {
            if i == SCAN_SUBINTERVALS {
                hi
            } else {
                lo + width * i as f64
            }
        })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| gap_raw(x, p)).collect();

    let mut roots: Vec<(f64, bool)> = Vec::new();
    for i in 0..SCAN_SUBINTERVALS {
        let (v0, v1) = (values[i], values[i + 1]);
        if v0 == 0.0 {
            roots.push((grid[i], false));
        } else if v0 * v1 < 0.0 {
            roots.push((bisect_gap(grid[i], v0, grid[i + 1], p), false));
        }
    }
    if values[SCAN_SUBINTERVALS] == 0.0 {
        roots.push((hi, false));
    }

    // Tangential roots leave a |h| dip below the band with no sign change.
    for i in 1..SCAN_SUBINTERVALS {
        let v = values[i];
        if v.abs() < TANGENT_SCAN_BAND
            && v * values[i - 1] > 0.0
            && v * values[i + 1] > 0.0
            && v.abs() <= values[i - 1].abs()
            && v.abs() <= values[i + 1].abs()
        {
            let x = minimize_abs_gap(grid[i - 1], grid[i + 1], p);
            if gap_raw(x, p).abs() <= TANGENT_ACCEPT {
                roots.push((x, true));
            }
        }
    }

    roots.sort_by(|a, b| a.0.total_cmp(&b.0));
    roots.dedup_by(|b, a| (a.0 - b.0).abs() <= MERGE_REL * a.0.abs().max(1.0));
    roots
}

fn bisect_gap(mut lo: f64, mut flo: f64, mut hi: f64, p: &ModelParams) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = gap_raw(mid, p);
        if fm.abs() <= BISECT_TARGET || (hi - lo) <= 4.0 * f64::EPSILON * mid.abs().max(1.0) {
            return mid;
        }
        if flo * fm < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section minimization of |h| for the tangential-root scan.
fn minimize_abs_gap(mut lo: f64, mut hi: f64, p: &ModelParams) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = gap_raw(c, p).abs();
    let mut fd = gap_raw(d, p).abs();
    for _ in 0..160 {
        if (hi - lo) <= 4.0 * f64::EPSILON * lo.abs().max(1.0) {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = gap_raw(c, p).abs();
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = gap_raw(d, p).abs();
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_like() -> ModelParams {
        ModelParams::new(0.1, 200.0, 0.5, 0.5, 0.1, 2.0, 27.0).unwrap()
    }

    #[test]
    fn functional_response_vanishes_at_zero() {
        assert_eq!(functional_response(0.0, &table1_like()).unwrap(), 0.0);
    }

    #[test]
    fn functional_response_half_saturates_at_a() {
        let p = table1_like();
        let v = functional_response(p.a, &p).unwrap();
        assert!((v - p.gamma / 2.0).abs() < 1e-15);
    }

    #[test]
    fn functional_response_direct_value() {
        let p = ModelParams::new(0.1, 200.0, 0.5, 0.8, 0.1, 2.0, 0.0).unwrap();
        let v = functional_response(1.0, &p).unwrap();
        assert!((v - 0.64).abs() < 1e-15);
    }

    #[test]
    fn functional_response_rejects_negative() {
        assert!(functional_response(-1.0, &table1_like()).is_err());
    }

    #[test]
    fn rhs_zero_at_boundary_equilibrium() {
        let p = table1_like();
        let e = State::new(p.k, 0.0);
        let d = rhs(e, e, &p).unwrap();
        assert_eq!((d.x, d.y), (0.0, 0.0));
    }

    #[test]
    fn rhs_zero_at_origin() {
        let p = table1_like();
        let z = State::new(0.0, 0.0);
        let d = rhs(z, z, &p).unwrap();
        assert_eq!((d.x, d.y), (0.0, 0.0));
    }

    #[test]
    fn rhs_logistic_term_only() {
        let p = ModelParams::new(0.2, 200.0, 0.5, 0.5, 0.1, 2.0, 0.0).unwrap();
        let d = rhs(State::new(100.0, 0.0), State::new(0.0, 0.0), &p).unwrap();
        assert!((d.x - 10.0).abs() < 1e-12);
        assert_eq!(d.y, 0.0);
    }

    #[test]
    fn existence_condition_cases() {
        let no = ModelParams::new(0.1, 200.0, 0.5, 0.1, 0.1, 2.0, 0.0).unwrap();
        assert!(!positive_existence_condition(&no));
        let yes = ModelParams::new(0.1, 200.0, 0.5, 0.5, 0.1, 2.0, 0.0).unwrap();
        assert!(positive_existence_condition(&yes));
        // beta > gamma makes the left side < 1 regardless of K and a.
        let never = ModelParams::new(0.1, 500.0, 0.1, 0.05, 0.2, 2.0, 0.0).unwrap();
        assert!(!positive_existence_condition(&never));
    }

    #[test]
    fn gap_signs_at_interval_ends() {
        let p = table1_like();
        let lo = x_low(&p);
        // Just inside the left end the log term vanishes and the curve term
        // dominates; at K the curve term vanishes and the log is positive.
        let near_lo = equilibrium_gap(lo + 1e-9 * (p.k - lo), &p).unwrap();
        assert!(near_lo > 0.0);
        let near_hi = equilibrium_gap(p.k * (1.0 - 1e-12), &p).unwrap();
        assert!(near_hi < 0.0);
    }

    #[test]
    fn gap_rejects_out_of_interval() {
        let p = table1_like();
        assert!(equilibrium_gap(p.k + 1.0, &p).is_err());
        assert!(equilibrium_gap(x_low(&p) / 2.0, &p).is_err());
    }

    #[test]
    fn find_equilibria_no_positive_when_condition_fails() {
        let p = ModelParams::new(0.1, 200.0, 0.5, 0.05, 0.1, 2.0, 0.0).unwrap();
        let eqs = find_equilibria(&p);
        assert_eq!(eqs.len(), 2);
        assert_eq!(eqs[0].kind, EquilibriumKind::Origin);
        assert_eq!(eqs[1].kind, EquilibriumKind::Boundary);
        assert_eq!(eqs[1].state, State::new(200.0, 0.0));
    }

    #[test]
    fn find_equilibria_positive_roots_satisfy_system() {
        let p = table1_like();
        let eqs = find_equilibria(&p);
        let positives: Vec<_> = eqs
            .iter()
            .filter(|e| e.kind == EquilibriumKind::Positive)
            .collect();
        assert!(!positives.is_empty());
        let scale = (p.r * p.k).max(1.0);
        for e in &eqs {
            assert!(
                e.residual <= 1e-10 * scale,
                "residual {} too large at ({}, {})",
                e.residual,
                e.state.x,
                e.state.y
            );
        }
        for e in positives {
            assert!(e.state.x > 0.0 && e.state.x < p.k);
            assert!(e.state.y > 0.0);
        }
        // Sorted by x; boundary (K, 0) is present and last.
        assert!(eqs.windows(2).all(|w| w[0].state.x <= w[1].state.x));
        assert_eq!(eqs.last().unwrap().state, State::new(p.k, 0.0));
    }

    #[test]
    fn find_equilibria_catches_root_near_left_end() {
        // The first sign change sits inside the first scan subinterval; the
        // endpoint evaluation must not miss it.
        let p = ModelParams::new(0.05, 200.0, 0.1, 0.8, 0.1, 2.0, 0.0).unwrap();
        let eqs = find_equilibria(&p);
        let n_pos = eqs
            .iter()
            .filter(|e| e.kind == EquilibriumKind::Positive)
            .count();
        assert!(n_pos >= 1, "expected at least one positive equilibrium");
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0.1, 200.0, 0.5, 0.5, 0.1, 2.0, -1.0).is_err());
        assert!(ModelParams::new(0.0, 200.0, 0.5, 0.5, 0.1, 2.0, 0.0).is_err());
        assert!(ModelParams::new(0.1, 200.0, 0.5, 0.5, 0.1, 2.0, 0.0).is_ok());
    }
}
