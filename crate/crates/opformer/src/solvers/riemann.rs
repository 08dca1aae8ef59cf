//! Exact solver for the Riemann problem of the 1D Euler equations.
//!
//! The star pressure solves f_L(p) + f_R(p) + (u_r - u_l) = 0 where f_K is
//! the Rankine-Hugoniot shock relation for p > p_K and the isentropic
//! rarefaction relation otherwise. The iteration runs on log-pressure with a
//! bisection safeguard so that pressure ratios up to 1e10 stay well
//! conditioned. Sampling reconstructs the self-similar solution
//! W((x - x_s)/t) from the star state.

use super::{Result, SolverError};

/// Primitive state (density, velocity, pressure) on one side of the
/// discontinuity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiemannState {
    pub density: f64,
    pub velocity: f64,
    pub pressure: f64,
}

impl RiemannState {
    pub fn new(density: f64, velocity: f64, pressure: f64) -> Result<Self> {
        if !(density > 0.0) || !(pressure > 0.0) {
            return Err(SolverError::Invalid(format!(
                "density and pressure must be positive, got rho={density}, p={pressure}"
            )));
        }
        Ok(Self {
            density,
            velocity,
            pressure,
        })
    }

    pub fn sound_speed(&self, gamma: f64) -> f64 {
        (gamma * self.pressure / self.density).sqrt()
    }

    /// Total energy density rho*E = p/(gamma-1) + rho*u^2/2.
    pub fn total_energy(&self, gamma: f64) -> f64 {
        self.pressure / (gamma - 1.0) + 0.5 * self.density * self.velocity * self.velocity
    }
}

#[derive(Debug, Clone)]
pub struct RiemannSetup {
    pub left: RiemannState,
    pub right: RiemannState,
    /// Interface position: x <= interface carries the left state at t = 0.
    pub interface: f64,
    pub domain: (f64, f64),
    pub t_final: f64,
    pub gamma: f64,
    pub spatial_samples: usize,
}

impl RiemannSetup {
    /// Intermediate-pressure-ratio shock tube, p_l in [50, 100].
    pub fn ipr(p_left: f64) -> Self {
        Self {
            left: RiemannState {
                density: 2.0,
                velocity: 0.0,
                pressure: p_left,
            },
            right: RiemannState {
                density: 0.125,
                velocity: 0.0,
                pressure: 0.1,
            },
            interface: 0.5,
            domain: (-1.0, 2.0),
            t_final: 0.1,
            gamma: 1.4,
            spatial_samples: 512,
        }
    }

    /// Extremely-high-pressure-ratio shock tube, p_l in [1e9, 1e10].
    pub fn hpr(p_left: f64) -> Self {
        Self {
            left: RiemannState {
                density: 2.0,
                velocity: 0.0,
                pressure: p_left,
            },
            right: RiemannState {
                density: 0.001,
                velocity: 0.0,
                pressure: 1.0,
            },
            interface: -10.0,
            domain: (-20.0, 20.0),
            t_final: 1e-4,
            gamma: 1.4,
            spatial_samples: 512,
        }
    }

    /// Equispaced sample coordinates spanning the domain inclusively.
    pub fn sample_grid(&self) -> Vec<f64> {
        let n = self.spatial_samples;
        let (lo, hi) = self.domain;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveKind {
    Shock,
    Rarefaction,
}

#[derive(Debug, Clone, Copy)]
pub struct StarState {
    pub pressure: f64,
    pub velocity: f64,
    pub left_wave: WaveKind,
    pub right_wave: WaveKind,
    pub iterations: usize,
}

/// Pressure function f_K(p) and its derivative for one side.
fn pressure_fn(p: f64, state: &RiemannState, gamma: f64) -> (f64, f64) {
    let (rho, pk) = (state.density, state.pressure);
    let a = state.sound_speed(gamma);
    if p > pk {
        let ak = 2.0 / ((gamma + 1.0) * rho);
        let bk = pk * (gamma - 1.0) / (gamma + 1.0);
        let root = (ak / (bk + p)).sqrt();
        let f = (p - pk) * root;
        let df = root * (1.0 - 0.5 * (p - pk) / (bk + p));
        (f, df)
    } else {
        let z = (gamma - 1.0) / (2.0 * gamma);
        let f = 2.0 * a / (gamma - 1.0) * ((p / pk).powf(z) - 1.0);
        let df = (p / pk).powf(-(gamma + 1.0) / (2.0 * gamma)) / (rho * a);
        (f, df)
    }
}

/// Solves for the star region pressure and velocity between the two
/// nonlinear waves.
pub fn star_state(left: &RiemannState, right: &RiemannState, gamma: f64) -> Result<StarState> {
    RiemannState::new(left.density, left.velocity, left.pressure)?;
    RiemannState::new(right.density, right.velocity, right.pressure)?;
    if !(gamma > 1.0) {
        return Err(SolverError::Invalid(format!("gamma must exceed 1, got {gamma}")));
    }
    let du = right.velocity - left.velocity;
    let a_l = left.sound_speed(gamma);
    let a_r = right.sound_speed(gamma);
    if 2.0 * (a_l + a_r) / (gamma - 1.0) <= du {
        return Err(SolverError::Vacuum(format!(
            "2(a_l + a_r)/(gamma - 1) = {} <= u_r - u_l = {}",
            2.0 * (a_l + a_r) / (gamma - 1.0),
            du
        )));
    }
    // No waves at all: both sides already agree.
    if left == right {
        return Ok(StarState {
            pressure: left.pressure,
            velocity: left.velocity,
            left_wave: WaveKind::Rarefaction,
            right_wave: WaveKind::Rarefaction,
            iterations: 0,
        });
    }

    let f = |p: f64| -> (f64, f64) {
        let (fl, dfl) = pressure_fn(p, left, gamma);
        let (fr, dfr) = pressure_fn(p, right, gamma);
        (fl + fr + du, dfl + dfr)
    };

    // Bracket the root in pressure; f is monotone increasing.
    let mut lo = left.pressure.min(right.pressure);
    let mut guard = 0;
    while f(lo).0 > 0.0 {
        lo *= 1e-2;
        guard += 1;
        if guard > 200 {
            return Err(SolverError::NoConvergence { iterations: 200 });
        }
    }
    let mut hi = left.pressure.max(right.pressure);
    guard = 0;
    while f(hi).0 < 0.0 {
        hi *= 1e2;
        guard += 1;
        if guard > 200 {
            return Err(SolverError::NoConvergence { iterations: 200 });
        }
    }

    // Two-rarefaction initial guess, clamped into the bracket.
    let z = (gamma - 1.0) / (2.0 * gamma);
    let tr = ((a_l + a_r - 0.5 * (gamma - 1.0) * du)
        / (a_l / left.pressure.powf(z) + a_r / right.pressure.powf(z)))
    .powf(1.0 / z);
    let mut p = tr.clamp(lo, hi);
    if !(p > 0.0) || !p.is_finite() {
        p = (lo * hi).sqrt();
    }

    // Safeguarded Newton iteration on x = ln p.
    let mut x = p.ln();
    let (mut x_lo, mut x_hi) = (lo.ln(), hi.ln());
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > 200 {
            return Err(SolverError::NoConvergence { iterations: 200 });
        }
        let p_cur = x.exp();
        let (val, dval) = f(p_cur);
        if val > 0.0 {
            x_hi = x;
        } else {
            x_lo = x;
        }
        if val == 0.0 {
            break;
        }
        // d/dx f(e^x) = f'(p) * p
        let newton = x - val / (dval * p_cur);
        let next = if newton.is_finite() && newton > x_lo && newton < x_hi {
            newton
        } else {
            0.5 * (x_lo + x_hi)
        };
        let dx = (next - x).abs();
        x = next;
        // |dp|/p <= 1e-12 is |d ln p| <= ~1e-12.
        if dx <= 1e-12 {
            break;
        }
    }
    let p_star = x.exp();
    let (fl, _) = pressure_fn(p_star, left, gamma);
    let (fr, _) = pressure_fn(p_star, right, gamma);
    let u_star = 0.5 * (left.velocity + right.velocity) + 0.5 * (fr - fl);
    let classify = |pk: f64| if p_star > pk { WaveKind::Shock } else { WaveKind::Rarefaction };
    Ok(StarState {
        pressure: p_star,
        velocity: u_star,
        left_wave: classify(left.pressure),
        right_wave: classify(right.pressure),
        iterations,
    })
}

/// Samples the self-similar solution at speed s = (x - x_s)/t.
pub fn sample_wave_fan(
    left: &RiemannState,
    right: &RiemannState,
    star: &StarState,
    gamma: f64,
    s: f64,
) -> RiemannState {
    let beta = (gamma - 1.0) / (gamma + 1.0);
    let z = (gamma - 1.0) / (2.0 * gamma);
    let (p_star, u_star) = (star.pressure, star.velocity);
    if s <= u_star {
        let a_l = left.sound_speed(gamma);
        match star.left_wave {
            WaveKind::Shock => {
                let ratio = p_star / left.pressure;
                let speed = left.velocity
                    - a_l * ((gamma + 1.0) / (2.0 * gamma) * ratio + (gamma - 1.0) / (2.0 * gamma)).sqrt();
                if s <= speed {
                    *left
                } else {
                    RiemannState {
                        density: left.density * ((ratio + beta) / (beta * ratio + 1.0)),
                        velocity: u_star,
                        pressure: p_star,
                    }
                }
            }
            WaveKind::Rarefaction => {
                let head = left.velocity - a_l;
                let a_star = a_l * (p_star / left.pressure).powf(z);
                let tail = u_star - a_star;
                if s <= head {
                    *left
                } else if s >= tail {
                    RiemannState {
                        density: left.density * (p_star / left.pressure).powf(1.0 / gamma),
                        velocity: u_star,
                        pressure: p_star,
                    }
                } else {
                    let u = 2.0 / (gamma + 1.0) * (a_l + 0.5 * (gamma - 1.0) * left.velocity + s);
                    let a = 2.0 / (gamma + 1.0) * (a_l + 0.5 * (gamma - 1.0) * (left.velocity - s));
                    RiemannState {
                        density: left.density * (a / a_l).powf(2.0 / (gamma - 1.0)),
                        velocity: u,
                        pressure: left.pressure * (a / a_l).powf(2.0 * gamma / (gamma - 1.0)),
                    }
                }
            }
        }
    } else {
        let a_r = right.sound_speed(gamma);
        match star.right_wave {
            WaveKind::Shock => {
                let ratio = p_star / right.pressure;
                let speed = right.velocity
                    + a_r * ((gamma + 1.0) / (2.0 * gamma) * ratio + (gamma - 1.0) / (2.0 * gamma)).sqrt();
                if s >= speed {
                    *right
                } else {
                    RiemannState {
                        density: right.density * ((ratio + beta) / (beta * ratio + 1.0)),
                        velocity: u_star,
                        pressure: p_star,
                    }
                }
            }
            WaveKind::Rarefaction => {
                let head = right.velocity + a_r;
                let a_star = a_r * (p_star / right.pressure).powf(z);
                let tail = u_star + a_star;
                if s >= head {
                    *right
                } else if s <= tail {
                    RiemannState {
                        density: right.density * (p_star / right.pressure).powf(1.0 / gamma),
                        velocity: u_star,
                        pressure: p_star,
                    }
                } else {
                    let u = 2.0 / (gamma + 1.0) * (-a_r + 0.5 * (gamma - 1.0) * right.velocity + s);
                    let a = 2.0 / (gamma + 1.0) * (a_r - 0.5 * (gamma - 1.0) * (right.velocity - s));
                    RiemannState {
                        density: right.density * (a / a_r).powf(2.0 / (gamma - 1.0)),
                        velocity: u,
                        pressure: right.pressure * (a / a_r).powf(2.0 * gamma / (gamma - 1.0)),
                    }
                }
            }
        }
    }
}

/// Primitive fields sampled at a list of coordinates.
#[derive(Debug, Clone)]
pub struct RiemannFields {
    pub density: Vec<f64>,
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

/// Evaluates the exact solution at time `setup.t_final` on the coordinates
/// `xs`. At t = 0 this is the piecewise-constant initial condition.
pub fn riemann_exact(setup: &RiemannSetup, xs: &[f64]) -> Result<RiemannFields> {
    if setup.t_final < 0.0 {
        return Err(SolverError::Invalid("final time must be non-negative".into()));
    }
    let mut fields = RiemannFields {
        density: Vec::with_capacity(xs.len()),
        velocity: Vec::with_capacity(xs.len()),
        pressure: Vec::with_capacity(xs.len()),
    };
    if setup.t_final == 0.0 {
        for &x in xs {
            let st = if x <= setup.interface { &setup.left } else { &setup.right };
            fields.density.push(st.density);
            fields.velocity.push(st.velocity);
            fields.pressure.push(st.pressure);
        }
        return Ok(fields);
    }
    let star = star_state(&setup.left, &setup.right, setup.gamma)?;
    for &x in xs {
        let s = (x - setup.interface) / setup.t_final;
        let st = sample_wave_fan(&setup.left, &setup.right, &star, setup.gamma, s);
        fields.density.push(st.density);
        fields.velocity.push(st.velocity);
        fields.pressure.push(st.pressure);
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAMMA: f64 = 1.4;

    fn sod_states() -> (RiemannState, RiemannState) {
        (
            RiemannState { density: 1.0, velocity: 0.0, pressure: 1.0 },
            RiemannState { density: 0.125, velocity: 0.0, pressure: 0.1 },
        )
    }

    #[test]
    fn sod_star_state_reference_values() {
        let (l, r) = sod_states();
        let star = star_state(&l, &r, GAMMA).unwrap();
        assert!((star.pressure - 0.30313).abs() < 5e-6);
        assert!((star.velocity - 0.92745).abs() < 5e-6);
        assert_eq!(star.left_wave, WaveKind::Rarefaction);
        assert_eq!(star.right_wave, WaveKind::Shock);
    }

    #[test]
    fn symmetric_states_give_zero_star_velocity() {
        let l = RiemannState { density: 1.3, velocity: -0.7, pressure: 2.0 };
        let r = RiemannState { density: 1.3, velocity: 0.7, pressure: 2.0 };
        let star = star_state(&l, &r, GAMMA).unwrap();
        assert_eq!(star.velocity, 0.0);
    }

    #[test]
    fn identical_states_are_returned_unchanged() {
        let s = RiemannState { density: 0.8, velocity: 1.1, pressure: 3.0 };
        let star = star_state(&s, &s, GAMMA).unwrap();
        assert_eq!(star.pressure, 3.0);
        assert_eq!(star.velocity, 1.1);

        let setup = RiemannSetup {
            left: s,
            right: s,
            interface: 0.0,
            domain: (-1.0, 1.0),
            t_final: 0.2,
            gamma: GAMMA,
            spatial_samples: 16,
        };
        let f = riemann_exact(&setup, &setup.sample_grid()).unwrap();
        assert!(f.density.iter().all(|&d| d == 0.8));
        assert!(f.pressure.iter().all(|&p| p == 3.0));
    }

    #[test]
    fn zero_time_returns_initial_condition() {
        let mut setup = RiemannSetup::ipr(60.0);
        setup.t_final = 0.0;
        let xs = [-1.0, 0.0, 0.5, 0.5000001, 2.0];
        let f = riemann_exact(&setup, &xs).unwrap();
        assert_eq!(f.density, vec![2.0, 2.0, 2.0, 0.125, 0.125]);
        assert_eq!(f.pressure[2], 60.0);
        assert_eq!(f.pressure[3], 0.1);
    }

    #[test]
    fn ipr_plateaus_match_star_state() {
        let setup = RiemannSetup::ipr(50.0);
        let star = star_state(&setup.left, &setup.right, GAMMA).unwrap();
        // Sample just either side of the contact discontinuity.
        let eps = 1e-9;
        let x_minus = setup.interface + (star.velocity - eps) * setup.t_final;
        let x_plus = setup.interface + (star.velocity + eps) * setup.t_final;
        let f = riemann_exact(&setup, &[x_minus, x_plus]).unwrap();
        assert!((f.pressure[0] - star.pressure).abs() <= 1e-9 * star.pressure);
        assert!((f.pressure[1] - star.pressure).abs() <= 1e-9 * star.pressure);
        assert!((f.velocity[0] - star.velocity).abs() <= 1e-9 * star.velocity.abs());
        // Density jumps across the contact.
        assert!(f.density[0] != f.density[1]);
    }

    #[test]
    fn hpr_fields_stay_positive() {
        for p_left in [1e9, 5.5e9, 1e10] {
            let setup = RiemannSetup::hpr(p_left);
            let f = riemann_exact(&setup, &setup.sample_grid()).unwrap();
            assert!(f.density.iter().all(|&d| d > 0.0));
            assert!(f.pressure.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn waves_stay_inside_preset_domains() {
        for setup in [RiemannSetup::ipr(100.0), RiemannSetup::hpr(1e10)] {
            let star = star_state(&setup.left, &setup.right, setup.gamma).unwrap();
            let a_l = setup.left.sound_speed(setup.gamma);
            let leftmost = setup.interface + (setup.left.velocity - a_l) * setup.t_final;
            let s_r = setup.right.velocity
                + setup.right.sound_speed(setup.gamma)
                    * ((setup.gamma + 1.0) / (2.0 * setup.gamma) * star.pressure
                        / setup.right.pressure
                        + (setup.gamma - 1.0) / (2.0 * setup.gamma))
                        .sqrt();
            let rightmost = setup.interface + s_r * setup.t_final;
            assert!(leftmost > setup.domain.0);
            assert!(rightmost < setup.domain.1);
        }
    }

    #[test]
    fn strong_expansion_reports_vacuum() {
        let l = RiemannState { density: 1.0, velocity: -5.0, pressure: 0.4 };
        let r = RiemannState { density: 1.0, velocity: 5.0, pressure: 0.4 };
        assert!(matches!(star_state(&l, &r, GAMMA), Err(SolverError::Vacuum(_))));
    }

    #[test]
    fn entropy_classification_follows_pressure_ordering() {
        let (l, r) = sod_states();
        let star = star_state(&l, &r, GAMMA).unwrap();
        assert_eq!(star.left_wave == WaveKind::Shock, star.pressure > l.pressure);
        assert_eq!(star.right_wave == WaveKind::Shock, star.pressure > r.pressure);
    }

    #[test]
    fn total_energy_uses_kinetic_density_form() {
        let s = RiemannState { density: 2.0, velocity: 3.0, pressure: 1.4 };
        // p/(gamma-1) + rho u^2 / 2 = 3.5 + 9.0
        assert_eq!(s.total_energy(GAMMA), 1.4 / 0.4 + 0.5 * 2.0 * 9.0);
    }
}
