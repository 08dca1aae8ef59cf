//! Izhikevich neuron model with the reset map applied per substep.
//!
//! du/dt = 0.04 u^2 + 5 u + 140 - v + I(t)
//! dv/dt = a (b u - v)
//!
//! whenever u >= u_thres: u <- c, v <- v + d. The default parameters are the
//! phasic-bursting configuration; note that the reset value c sits above the
//! threshold, so once forcing drives u over the threshold the reset fires on
//! consecutive substeps while v ramps. The trajectory is still a
//! deterministic function of the substep count, which is part of the
//! configuration for exactly that reason.

use super::{Result, SolverError};

/// Divergence guard for the quadratic runaway.
const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct IzhikevichParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub u_thres: f64,
    /// Initial (u, v).
    pub initial: (f64, f64),
    /// End of the time window in ms (grid starts at 0).
    pub t_end: f64,
    /// Number of equispaced output grid points.
    pub grid_points: usize,
    /// RK4 substeps per output interval; the reset map is checked after each.
    pub substeps: usize,
}

impl Default for IzhikevichParams {
    fn default() -> Self {
        let (a, b, c, d) = (0.02, 0.25, -55.0, 0.05);
        Self {
            a,
            b,
            c,
            d,
            u_thres: -64.0,
            initial: izhikevich_equilibrium(b),
            t_end: 100.0,
            grid_points: 401,
            substeps: 20,
        }
    }
}

/// Stable rest state for I = 0: the more negative root of
/// 0.04 u^2 + (5 - b) u + 140 = 0, with v = b u.
pub fn izhikevich_equilibrium(b: f64) -> (f64, f64) {
    let p = 5.0 - b;
    let disc = p * p - 4.0 * 0.04 * 140.0;
    let u = (-p - disc.sqrt()) / (2.0 * 0.04);
    (u, b * u)
}

/// Piecewise-constant spike forcing: I(t) = sum_k A_k 1[t_k <= t < t_k + w].
/// A step input is a pulse of infinite width.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeForcing {
    onsets: Vec<f64>,
    amplitudes: Vec<f64>,
    width: f64,
}

impl SpikeForcing {
    pub fn new(onsets: Vec<f64>, amplitudes: Vec<f64>, width: f64) -> Result<Self> {
        if onsets.len() != amplitudes.len() {
            return Err(SolverError::Invalid(format!(
                "{} onsets but {} amplitudes",
                onsets.len(),
                amplitudes.len()
            )));
        }
        if onsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(SolverError::Invalid("onsets must be sorted".into()));
        }
        if amplitudes.iter().any(|&a| a < 0.0) {
            return Err(SolverError::Invalid("amplitudes must be non-negative".into()));
        }
        if width <= 0.0 {
            return Err(SolverError::Invalid("pulse width must be positive".into()));
        }
        Ok(Self {
            onsets,
            amplitudes,
            width,
        })
    }

    /// Single step input switched on at `onset`.
    pub fn step(onset: f64, amplitude: f64) -> Self {
        Self {
            onsets: vec![onset],
            amplitudes: vec![amplitude],
            width: f64::INFINITY,
        }
    }

    pub fn silent() -> Self {
        Self {
            onsets: Vec::new(),
            amplitudes: Vec::new(),
            width: 1.0,
        }
    }

    pub fn onsets(&self) -> &[f64] {
        &self.onsets
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.onsets
            .iter()
            .zip(&self.amplitudes)
            .filter(|(&on, _)| t >= on && t < on + self.width)
            .map(|(_, &a)| a)
            .sum()
    }

    /// Jump locations (pulse edges) inside the open interval (a, b), sorted.
    pub fn breakpoints_within(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts: Vec<f64> = self
            .onsets
            .iter()
            .flat_map(|&on| [on, on + self.width])
            .filter(|&t| t.is_finite() && t > a && t < b)
            .collect();
        pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        pts.dedup();
        pts
    }
}

#[derive(Debug, Clone)]
pub struct IzhikevichTrajectory {
    pub time: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of times the reset map fired.
    pub resets: usize,
    /// Time of the first reset, if any fired.
    pub first_reset_t: Option<f64>,
}

pub fn solve_izhikevich(
    params: &IzhikevichParams,
    forcing: &SpikeForcing,
) -> Result<IzhikevichTrajectory> {
    if params.grid_points < 2 {
        return Err(SolverError::Invalid("need at least two grid points".into()));
    }
    if params.substeps == 0 {
        return Err(SolverError::Invalid("substeps must be positive".into()));
    }
    let n = params.grid_points;
    let dt_out = params.t_end / (n - 1) as f64;
    let h = dt_out / params.substeps as f64;

    let mut resets = 0usize;
    let mut first_reset_t = None;
    let (mut u, mut v) = params.initial;
    if u >= params.u_thres {
        u = params.c;
        v += params.d;
        resets += 1;
        first_reset_t = Some(0.0);
    }

    let mut time = Vec::with_capacity(n);
    let mut us = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    time.push(0.0);
    us.push(u);
    vs.push(v);

    // The forcing is piecewise constant, so each substep integrates the
    // smooth pieces between pulse edges with I frozen per piece; this keeps
    // RK4 at full order across forcing jumps.
    let rk4_piece = |u: &mut f64, v: &mut f64, dt: f64, current: f64| {
        let rhs = |u: f64, v: f64| -> (f64, f64) {
            let du = 0.04 * u * u + 5.0 * u + 140.0 - v + current;
            let dv = params.a * (params.b * u - v);
            (du, dv)
        };
        let (k1u, k1v) = rhs(*u, *v);
        let (k2u, k2v) = rhs(*u + 0.5 * dt * k1u, *v + 0.5 * dt * k1v);
        let (k3u, k3v) = rhs(*u + 0.5 * dt * k2u, *v + 0.5 * dt * k2v);
        let (k4u, k4v) = rhs(*u + dt * k3u, *v + dt * k3v);
        *u += dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        *v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    };

    for step in 1..n {
        let t_base = (step - 1) as f64 * dt_out;
        for sub in 0..params.substeps {
            let t = t_base + sub as f64 * h;
            let t_next = t + h;
            let mut edges = forcing.breakpoints_within(t, t_next);
            edges.push(t_next);
            let mut t_piece = t;
            for edge in edges {
                let dt = edge - t_piece;
                if dt > 0.0 {
                    let current = forcing.eval(0.5 * (t_piece + edge));
                    rk4_piece(&mut u, &mut v, dt, current);
                }
                t_piece = edge;
            }
            if !u.is_finite() || u.abs() > BLOWUP_LIMIT {
                return Err(SolverError::BlowUp {
                    t: t_next,
                    variable: "u",
                    value: u,
                });
            }
            if u >= params.u_thres {
                u = params.c;
                v += params.d;
                resets += 1;
                first_reset_t.get_or_insert(t_next);
            }
        }
        time.push(step as f64 * dt_out);
        us.push(u);
        vs.push(v);
    }

    Ok(IzhikevichTrajectory {
        time,
        u: us,
        v: vs,
        resets,
        first_reset_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_matches_quadratic_root() {
        let (u, v) = izhikevich_equilibrium(0.25);
        assert!((u - -64.41398).abs() < 1e-4);
        assert!((0.04 * u * u + 4.75 * u + 140.0).abs() < 1e-10);
        assert_eq!(v, 0.25 * u);
    }

    #[test]
    fn silent_equilibrium_stays_constant() {
        let params = IzhikevichParams::default();
        let traj = solve_izhikevich(&params, &SpikeForcing::silent()).unwrap();
        assert_eq!(traj.resets, 0);
        assert_eq!(traj.u.len(), 401);
        let u0 = params.initial.0;
        let dev = traj.u.iter().fold(0.0f64, |m, &u| m.max((u - u0).abs()));
        assert!(dev <= 1e-6, "sup deviation {dev}");
    }

    #[test]
    fn initial_condition_at_reset_value_fires_immediately() {
        let params = IzhikevichParams {
            initial: (-55.0, 0.25 * -55.0),
            ..Default::default()
        };
        let traj = solve_izhikevich(&params, &SpikeForcing::silent()).unwrap();
        assert!(traj.resets >= 1);
        assert_eq!(traj.u[0], params.c);
        assert_eq!(traj.v[0], 0.25 * -55.0 + params.d);
    }

    #[test]
    fn strong_forcing_without_reset_blows_up() {
        let params = IzhikevichParams {
            u_thres: f64::INFINITY,
            ..Default::default()
        };
        let err = solve_izhikevich(&params, &SpikeForcing::step(0.0, 5.0)).unwrap_err();
        match err {
            SolverError::BlowUp { t, .. } => assert!(t > 0.0 && t <= 100.0),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn forcing_eval_sums_overlapping_pulses() {
        let f = SpikeForcing::new(vec![1.0, 2.0], vec![0.5, 1.0], 5.0).unwrap();
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 0.5);
        assert_eq!(f.eval(2.5), 1.5);
        assert_eq!(f.eval(6.5), 1.0);
        assert_eq!(f.eval(7.5), 0.0);
    }

    #[test]
    fn forcing_rejects_bad_input() {
        assert!(SpikeForcing::new(vec![2.0, 1.0], vec![1.0, 1.0], 1.0).is_err());
        assert!(SpikeForcing::new(vec![1.0], vec![-1.0], 1.0).is_err());
        assert!(SpikeForcing::new(vec![1.0], vec![1.0, 2.0], 1.0).is_err());
    }
}
