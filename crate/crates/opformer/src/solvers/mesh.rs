//! Adaptive time meshes for the fractional LIF solver: a graded cluster at
//! t = 0 (where Caputo solutions carry a weak singularity) plus uniform
//! refinement windows around each forcing onset.
//!
//! The mesh is built by inverting a cumulative density, which produces an
//! exact node count for any configuration.

use super::{Result, SolverError};

#[derive(Debug, Clone)]
pub struct MeshSpec {
    /// Exact number of nodes, including both endpoints.
    pub points: usize,
    /// Right endpoint; the mesh starts at 0.
    pub t_end: f64,
    /// Grading exponent r: the base mesh behaves like t_i ~ (i/n)^r near 0.
    pub grading: f64,
    /// Refinement intervals (clipped to [0, t_end]).
    pub windows: Vec<(f64, f64)>,
    /// Density mass given to each window, relative to the base mass of 1.
    pub window_weight: f64,
}

impl MeshSpec {
    pub fn graded(points: usize, t_end: f64, grading: f64) -> Self {
        Self {
            points,
            t_end,
            grading,
            windows: Vec::new(),
            window_weight: 0.0,
        }
    }

    /// Adds a refinement window of the given half-width around each onset.
    pub fn with_onset_windows(mut self, onsets: &[f64], half_width: f64, weight: f64) -> Self {
        for &on in onsets {
            self.windows.push((on - half_width, on + half_width));
        }
        self.window_weight = weight;
        self
    }
}

/// Builds the mesh: exactly `spec.points` strictly increasing nodes with
/// t_0 = 0 and t_{n-1} = t_end.
pub fn adaptive_mesh(spec: &MeshSpec) -> Result<Vec<f64>> {
    if spec.points < 2 {
        return Err(SolverError::Invalid("mesh needs at least two points".into()));
    }
    if !(spec.t_end > 0.0) {
        return Err(SolverError::Invalid("t_end must be positive".into()));
    }
    if !(spec.grading >= 1.0) {
        return Err(SolverError::Invalid("grading exponent must be >= 1".into()));
    }
    let windows: Vec<(f64, f64)> = spec
        .windows
        .iter()
        .map(|&(a, b)| (a.max(0.0), b.min(spec.t_end)))
        .filter(|&(a, b)| b > a)
        .collect();

    // Cumulative density: base grading mass 1 plus `window_weight` per window.
    let cdf = |t: f64| -> f64 {
        let mut w = (t / spec.t_end).powf(1.0 / spec.grading);
        for &(a, b) in &windows {
            w += spec.window_weight * ((t.min(b) - a).max(0.0)) / (b - a);
        }
        w
    };
    let total = cdf(spec.t_end);

    let n = spec.points;
    let mut mesh = Vec::with_capacity(n);
    mesh.push(0.0);
    for i in 1..n - 1 {
        let target = total * i as f64 / (n - 1) as f64;
        let (mut lo, mut hi) = (0.0, spec.t_end);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        mesh.push(0.5 * (lo + hi));
    }
    mesh.push(spec.t_end);

    if let Some(i) = mesh.windows(2).position(|w| w[1] <= w[0]) {
        return Err(SolverError::InvalidMesh { index: i + 1 });
    }
    Ok(mesh)
}
