//! Closed-form scaling limit on the line, a shooting solver for the
//! free-boundary problem `w'' = sqrt(2w/π)`, and the radial version
//! `w'' + (d-1) w'/r = sqrt(2w/π)` with a point source at the origin.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

/// Support edge of the closed form, `(18π)^{1/3}`.
pub fn support_edge() -> f64 {
    (18.0 * PI).cbrt()
}

/// Leading coefficient of the quartic behaviour at a free boundary.
pub const QUARTIC_COEFF: f64 = 1.0 / (72.0 * PI);

/// `(9π/32)^{1/12}`, the fourth root of `w(0)`.
pub fn b_value() -> f64 {
    (9.0 * PI / 32.0).powf(1.0 / 12.0)
}

/// `w(ξ) = ((18π)^{1/3} − |ξ|)⁴ / 72π` inside the support, else 0.
pub fn closed_form_w(xi: f64) -> f64 {
    let s = support_edge() - xi.abs();
    if s > 0.0 {
        QUARTIC_COEFF * s.powi(4)
    } else {
        0.0
    }
}

pub fn closed_form_dw(xi: f64) -> f64 {
    let s = support_edge() - xi.abs();
    if s > 0.0 {
        -4.0 * QUARTIC_COEFF * s.powi(3) * xi.signum()
    } else {
        0.0
    }
}

pub fn closed_form_d2w(xi: f64) -> f64 {
    let s = support_edge() - xi.abs();
    if s > 0.0 {
        12.0 * QUARTIC_COEFF * s * s
    } else {
        0.0
    }
}

/// The closed form seen at particle scale: `n^{4/3} w(x n^{-1/3})`.
pub fn scaled_closed_form(n: f64, x: f64) -> f64 {
    n.powf(4.0 / 3.0) * closed_form_w(x / n.cbrt())
}

#[inline]
fn source_term(w: f64) -> f64 {
    (2.0 * w.max(0.0) / PI).sqrt()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("mesh step must be positive and finite, got {0}")]
    InvalidMesh(f64),
    #[error("dimension {0} is not supported")]
    UnsupportedDim(usize),
    #[error("shooting bracket [{lo}, {hi}] does not straddle the target (residuals {f_lo}, {f_hi})")]
    NoBracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error("shooting did not converge after {iterations} iterations (last radius {radius}, residual {residual})")]
    NoConvergence { iterations: usize, radius: f64, residual: f64 },
}

/// Even profile on the line, stored on a uniform mesh of `[0, R]`.
#[derive(Clone, Debug, Serialize)]
pub struct ScalingProfile {
    pub mesh: f64,
    pub xi: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    pub support_radius: f64,
}

impl ScalingProfile {
    /// Tabulate the closed form; the mesh is adjusted so that the last node
    /// sits on the support edge.
    pub fn closed_form(mesh: f64) -> Self {
        let edge = support_edge();
        let m = even_steps(edge, mesh);
        let h = edge / m as f64;
        let xi: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
        ScalingProfile {
            mesh: h,
            values: xi.iter().map(|&x| closed_form_w(x)).collect(),
            derivs: xi.iter().map(|&x| closed_form_dw(x)).collect(),
            xi,
            support_radius: edge,
        }
    }

    pub fn zero(mesh: f64, extent: f64) -> Self {
        let m = even_steps(extent, mesh);
        let h = extent / m as f64;
        ScalingProfile {
            mesh: h,
            xi: (0..=m).map(|i| i as f64 * h).collect(),
            values: vec![0.0; m + 1],
            derivs: vec![0.0; m + 1],
            support_radius: 0.0,
        }
    }

    /// Multiply the profile by a constant.
    pub fn scaled(&self, c: f64) -> Self {
        let mut p = self.clone();
        p.values.iter_mut().for_each(|v| *v *= c);
        p.derivs.iter_mut().for_each(|v| *v *= c);
        p
    }

    /// Cubic Hermite interpolation, extended evenly and by zero.
    pub fn eval(&self, xi: f64) -> f64 {
        let x = xi.abs();
        let last = self.xi.len() - 1;
        if x >= self.xi[last] {
            return 0.0;
        }
        let i = ((x / self.mesh) as usize).min(last - 1);
        let h = self.mesh;
        let t = (x - self.xi[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[i] + h10 * h * self.derivs[i] + h01 * self.values[i + 1] + h11 * h * self.derivs[i + 1]
    }

    pub fn w0(&self) -> f64 {
        self.values[0]
    }

    /// One-sided slope at the origin.
    pub fn slope_at_zero(&self) -> f64 {
        self.derivs[0]
    }

    /// `b` in the local form `w = (aξ + b)⁴`.
    pub fn b(&self) -> f64 {
        self.w0().powf(0.25)
    }

    pub fn max_error_against<F: Fn(f64) -> f64>(&self, reference: F) -> f64 {
        self.xi
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| (v - reference(x)).abs())
            .fold(0.0, f64::max)
    }

    /// Nonnegative, nonincreasing on `ξ ≥ 0` and 1-Lipschitz.
    pub fn shape_ok(&self) -> bool {
        let tol = 1e-12;
        self.values.iter().all(|&v| v >= -tol)
            && self.values.windows(2).all(|p| p[1] <= p[0] + tol)
            && self.derivs.iter().all(|d| d.abs() <= 1.0 + 1e-9)
    }

    /// Rows `(ξ, w, w')` over the symmetric mesh `[−R, R]`.
    pub fn symmetric_rows(&self) -> Vec<(f64, f64, f64)> {
        let mut rows: Vec<_> = self.xi[1..]
            .iter()
            .zip(&self.values[1..])
            .zip(&self.derivs[1..])
            .rev()
            .map(|((&x, &v), &d)| (-x, v, -d))
            .collect();
        rows.extend(self.xi.iter().zip(&self.values).zip(&self.derivs).map(|((&x, &v), &d)| (x, v, d)));
        rows
    }
}

fn even_steps(extent: f64, mesh: f64) -> usize {
    let m = (extent / mesh).ceil().max(2.0) as usize;
    m + (m % 2)
}

/// Composite Simpson on a uniform mesh with an even number of intervals.
pub fn simpson(h: f64, f: &[f64]) -> f64 {
    let m = f.len() - 1;
    assert!(m >= 2 && m.is_multiple_of(2), "Simpson needs an even interval count");
    let mut s = f[0] + f[m];
    for (i, v) in f.iter().enumerate().take(m).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

/// `∫₀^∞ sqrt(2w/π) dζ` by composite Simpson on the profile mesh.
pub fn integral_constraint(profile: &ScalingProfile) -> f64 {
    let f: Vec<f64> = profile.values.iter().map(|&w| source_term(w)).collect();
    if f.len() % 2 == 1 {
        simpson(profile.mesh, &f)
    } else {
        // odd interval count: trapezoid on the final cell, which is at the
        // support edge where the integrand vanishes quadratically
        let m = f.len() - 1;
        simpson(profile.mesh, &f[..m]) + 0.5 * profile.mesh * (f[m - 1] + f[m])
    }
}

/// Fourth-order Runge-Kutta step for `y'' = g(x, y, y')`.
#[inline]
fn rk4<G: Fn(f64, f64, f64) -> f64>(g: &G, x: f64, y: f64, p: f64, h: f64) -> (f64, f64) {
    let k1y = p;
    let k1p = g(x, y, p);
    let k2y = p + 0.5 * h * k1p;
    let k2p = g(x + 0.5 * h, y + 0.5 * h * k1y, k2y);
    let k3y = p + 0.5 * h * k2p;
    let k3p = g(x + 0.5 * h, y + 0.5 * h * k2y, k3y);
    let k4y = p + h * k3p;
    let k4p = g(x + h, y + h * k3y, k4y);
    (
        y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
        p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    )
}

/// Cells next to a free boundary are integrated with substeps: there the
/// step is comparable to the distance to the edge and plain RK4 errors
/// would shift the whole solution along the translation mode.
fn edge_substeps(cell: usize) -> usize {
    if cell <= 64 {
        256
    } else {
        1
    }
}

fn rk4_substeps<G: Fn(f64, f64, f64) -> f64>(g: &G, x: f64, y: f64, p: f64, h: f64, k: usize) -> (f64, f64) {
    let dh = h / k as f64;
    let (mut y, mut p) = (y, p);
    for i in 0..k {
        (y, p) = rk4(g, x + i as f64 * dh, y, p, dh);
    }
    (y, p)
}

/// Integrate inward from a support edge at `radius`. Returns the profile on
/// a uniform mesh of `[0, radius]` (index 0 is the origin).
fn line_shot(radius: f64, mesh: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let m = even_steps(radius, mesh);
    let h = radius / m as f64;
    let mut w = vec![0.0; m + 1];
    let mut dw = vec![0.0; m + 1];
    // s = radius − ξ; one cell inside the edge the local expansion is exact
    let s1 = h;
    let (mut y, mut p) = (QUARTIC_COEFF * s1.powi(4), 4.0 * QUARTIC_COEFF * s1.powi(3));
    w[m - 1] = y;
    dw[m - 1] = -p;
    let g = |_: f64, y: f64, _: f64| source_term(y);
    for j in 2..=m {
        (y, p) = rk4_substeps(&g, (j - 1) as f64 * h, y, p, h, edge_substeps(j));
        w[m - j] = y;
        dw[m - j] = -p;
    }
    (h, w, dw)
}

/// Solve `w'' = sqrt(2w/π)` on `ξ > 0` with `w'(0+) = −1` and `w → 0`,
/// shooting on the support radius.
pub fn ode_bvp_solve(mesh_step: f64) -> Result<ScalingProfile, ScalingError> {
    if !(mesh_step > 0.0 && mesh_step.is_finite()) {
        return Err(ScalingError::InvalidMesh(mesh_step));
    }
    // slope at the origin grows with the radius
    let residual = |r: f64| -line_shot(r, mesh_step).2[0] - 1.0;
    let (mut lo, mut hi) = (1.0, 10.0);
    let (f_lo, f_hi) = (residual(lo), residual(hi));
    if f_lo * f_hi > 0.0 {
        return Err(ScalingError::NoBracket { lo, hi, f_lo, f_hi });
    }
    let mut iterations = 0;
    while hi - lo > 1e-14 * hi {
        iterations += 1;
        if iterations > 200 {
            return Err(ScalingError::NoConvergence {
                iterations,
                radius: 0.5 * (lo + hi),
                residual: residual(0.5 * (lo + hi)),
            });
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let radius = 0.5 * (lo + hi);
    let (h, values, derivs) = line_shot(radius, mesh_step);
    Ok(ScalingProfile {
        mesh: h,
        xi: (0..values.len()).map(|i| i as f64 * h).collect(),
        values,
        derivs,
        support_radius: radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ShotOutcome {
    /// `w` hits zero with a nonzero slope: too little mass.
    CrossesZero { at: f64, slope: f64 },
    /// `w'` returns to zero with `w` still positive: too much mass.
    TurnsUpward { at: f64, minimum: f64 },
    /// Neither happened before the end of the interval.
    Undecided,
}

impl ShotOutcome {
    pub fn meets_outer_condition(&self, tol: f64) -> bool {
        match *self {
            ShotOutcome::CrossesZero { slope, .. } => slope.abs() < tol,
            ShotOutcome::TurnsUpward { minimum, .. } => minimum < tol,
            ShotOutcome::Undecided => false,
        }
    }
}

/// Forward shot from `w(0) = w0`, `w'(0) = −1`.
pub fn forward_shot(w0: f64, mesh_step: f64, extent: f64) -> ShotOutcome {
    let g = |_: f64, y: f64, _: f64| source_term(y);
    let (mut y, mut p) = (w0, -1.0);
    let mut x = 0.0;
    while x < extent {
        let (ny, np) = rk4(&g, x, y, p, mesh_step);
        if ny <= 0.0 {
            return ShotOutcome::CrossesZero { at: x, slope: p };
        }
        if np >= 0.0 {
            return ShotOutcome::TurnsUpward { at: x, minimum: ny };
        }
        (y, p) = (ny, np);
        x += mesh_step;
    }
    ShotOutcome::Undecided
}

/// Shots from `w(0) ± delta` around a solved profile.
pub fn uniqueness_probe(profile: &ScalingProfile, delta: f64) -> [ShotOutcome; 2] {
    let extent = 3.0 * profile.support_radius.max(1.0);
    [
        forward_shot(profile.w0() - delta, profile.mesh, extent),
        forward_shot(profile.w0() + delta, profile.mesh, extent),
    ]
}

/// Inner radius at which the point source is matched.
pub const INNER_RADIUS: f64 = 1e-3;

/// Surface measure of the unit sphere in `R^d` (2 for the two-point
/// "sphere" on the line).
pub fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        4 => 2.0 * PI * PI,
        _ => {
            let half = d as f64 / 2.0;
            2.0 * PI.powf(half) / gamma_half_integer(d)
        }
    }
}

fn gamma_half_integer(d: usize) -> f64 {
    // Γ(d/2) for integer d
    if d.is_multiple_of(2) {
        (1..d / 2).map(|k| k as f64).product()
    } else {
        let mut g = PI.sqrt();
        let mut a = 0.5;
        while a < d as f64 / 2.0 - 0.25 {
            g *= a;
            a += 1.0;
        }
        g
    }
}

/// Free-space Green kernel of `−Δ`.
pub fn green(d: usize, r: f64) -> f64 {
    match d {
        1 => -r / 2.0,
        2 => (1.0 / r).ln() / (2.0 * PI),
        _ => 1.0 / ((d as f64 - 2.0) * sphere_area(d) * r.powi(d as i32 - 2)),
    }
}

/// Source strength of the radial problem: a unit point source in `d ≥ 2`;
/// on the line the source is doubled so that `w'(0+) = −1`.
pub fn source_strength(d: usize) -> f64 {
    if d == 1 {
        2.0
    } else {
        1.0
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RadialProfile {
    pub dim: usize,
    pub r: Vec<f64>,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
    pub support_radius: f64,
    /// Flux through the inner sphere plus the source mass inside it.
    pub source: f64,
    pub inner_radius: f64,
}

/// One inward shot in `s = ln r` from the free boundary at `radius`.
/// Returns the mesh in increasing `r` and the matched flux.
fn radial_shot(d: usize, radius: f64, ds: f64, r0: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let s_edge = radius.ln();
    let steps = ((s_edge - r0.ln()) / ds).ceil().max(2.0) as usize;
    let ds = (s_edge - r0.ln()) / steps as f64;
    let mut r = vec![0.0; steps + 1];
    let mut w = vec![0.0; steps + 1];
    let mut dw = vec![0.0; steps + 1];
    r[steps] = radius;
    // quartic-quintic expansion one cell inside the edge
    let b5 = 2.0 * QUARTIC_COEFF * (d as f64 - 1.0) / (7.0 * radius);
    let r1 = (s_edge - ds).exp();
    let t = radius - r1;
    let mut y = QUARTIC_COEFF * t.powi(4) + b5 * t.powi(5);
    let dy = -(4.0 * QUARTIC_COEFF * t.powi(3) + 5.0 * b5 * t.powi(4));
    let mut p = r1 * dy;
    r[steps - 1] = r1;
    w[steps - 1] = y;
    dw[steps - 1] = dy;
    // P = r w', P_s = (2 − d) P + e^{2s} sqrt(2w/π); integrate toward s → ln r0
    let g = |s: f64, y: f64, p: f64| (2.0 - d as f64) * p + (2.0 * s).exp() * source_term(y);
    let mut s = s_edge - ds;
    for j in (0..steps - 1).rev() {
        (y, p) = rk4_substeps(&g, s, y, p, -ds, edge_substeps(steps - j));
        s -= ds;
        let rj = s.exp();
        r[j] = rj;
        w[j] = y;
        dw[j] = p / rj;
    }
    let r_in = r[0];
    let f = source_term(w[0]);
    let df = if w[0] > 0.0 { dw[0] / (PI * f) } else { 0.0 };
    // ∫_{B_r0} sqrt(2w/π), with a first-order correction on the line where
    // the integrand is regular at the origin
    let ball = if d == 1 {
        2.0 * (r_in * f - 0.5 * r_in * r_in * df)
    } else {
        sphere_area(d) * r_in.powi(d as i32) / d as f64 * f
    };
    let flux = -sphere_area(d) * r_in.powi(d as i32 - 1) * dw[0] + ball;
    (r, w, dw, flux)
}

/// Solve the radial problem in dimension `d` on a mesh uniform in `ln r`
/// with step `mesh`.
pub fn radial_pde_solve(d: usize, mesh: f64) -> Result<RadialProfile, ScalingError> {
    if !(1..=4).contains(&d) {
        return Err(ScalingError::UnsupportedDim(d));
    }
    if !(mesh > 0.0 && mesh.is_finite()) {
        return Err(ScalingError::InvalidMesh(mesh));
    }
    let target = source_strength(d);
    let r0 = INNER_RADIUS;
    let q = |radius: f64| radial_shot(d, radius, mesh, r0).3;
    // flux scales like R^{d+2}; secant in log-log coordinates
    let mut a = 1.0_f64;
    let mut qa = q(a);
    let mut b = a * (target / qa).powf(1.0 / (d as f64 + 2.0));
    let mut qb = q(b);
    let mut iterations = 0;
    while (qb - target).abs() > 1e-13 * target {
        iterations += 1;
        if iterations > 60 {
            return bisect_radius(d, mesh, r0, target);
        }
        let slope = (qb.ln() - qa.ln()) / (b.ln() - a.ln());
        if !slope.is_finite() || slope <= 0.0 {
            return bisect_radius(d, mesh, r0, target);
        }
        let next = (b.ln() + (target.ln() - qb.ln()) / slope).exp();
        if (next - b).abs() <= 1e-15 * b {
            break;
        }
        (a, qa) = (b, qb);
        b = next;
        qb = q(b);
    }
    Ok(radial_profile(d, b, mesh, r0))
}

fn radial_profile(d: usize, radius: f64, mesh: f64, r0: f64) -> RadialProfile {
    let (r, values, derivs, source) = radial_shot(d, radius, mesh, r0);
    RadialProfile {
        dim: d,
        r,
        values,
        derivs,
        support_radius: radius,
        source,
        inner_radius: r0,
    }
}

fn bisect_radius(d: usize, mesh: f64, r0: f64, target: f64) -> Result<RadialProfile, ScalingError> {
    let q = |radius: f64| radial_shot(d, radius, mesh, r0).3 - target;
    let (mut lo, mut hi) = (0.05, 50.0);
    let (f_lo, f_hi) = (q(lo), q(hi));
    if f_lo * f_hi > 0.0 {
        return Err(ScalingError::NoBracket { lo, hi, f_lo, f_hi });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi {
            return Ok(radial_profile(d, 0.5 * (lo + hi), mesh, r0));
        }
    }
    let radius = 0.5 * (lo + hi);
    Err(ScalingError::NoConvergence {
        iterations: 200,
        radius,
        residual: q(radius),
    })
}

impl RadialProfile {
    /// Linear interpolation in `r`; zero outside the support.
    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.support_radius {
            return 0.0;
        }
        let i = self.r.partition_point(|&x| x <= r);
        if i == 0 {
            return self.values[0];
        }
        let (r0, r1) = (self.r[i - 1], self.r[i]);
        let t = (r - r0) / (r1 - r0);
        self.values[i - 1] * (1.0 - t) + self.values[i] * t
    }

    /// `−ω_d r^{d−1} w'(r)` at mesh node `i`: the flux through the sphere of
    /// radius `r`, which tends to the source strength as `r → 0`.
    pub fn flux_at(&self, i: usize) -> f64 {
        -sphere_area(self.dim) * self.r[i].powi(self.dim as i32 - 1) * self.derivs[i]
    }

    /// `flux / source` at the mesh node closest to each requested radius.
    pub fn green_coefficients(&self, radii: &[f64]) -> Vec<(f64, f64)> {
        radii
            .iter()
            .map(|&target| {
                let i = self.r.partition_point(|&x| x < target).min(self.r.len() - 1);
                (self.r[i], self.flux_at(i) / source_strength(self.dim))
            })
            .collect()
    }

    /// `w(r) / (Q g(r))` at the mesh node closest to `r`.
    pub fn green_ratio(&self, r: f64) -> f64 {
        let i = self.r.partition_point(|&x| x < r).min(self.r.len() - 1);
        self.values[i] / (source_strength(self.dim) * green(self.dim, self.r[i]))
    }

    /// Sup of `|w'' + (d−1) w'/r − sqrt(2w/π)|` by three-point differences on
    /// interior nodes with `r ≥ r_min`.
    pub fn residual(&self, r_min: f64) -> f64 {
        pde_residual(self.dim, &self.r, &self.values, &self.derivs, r_min)
    }
}

fn pde_residual(d: usize, r: &[f64], w: &[f64], dw: &[f64], r_min: f64) -> f64 {
    let mut sup = 0.0_f64;
    for i in 1..r.len().saturating_sub(1) {
        if r[i] < r_min || w[i + 1] <= 0.0 {
            continue;
        }
        let (hm, hp) = (r[i] - r[i - 1], r[i + 1] - r[i]);
        let d2 = 2.0 * ((w[i + 1] - w[i]) / hp - (w[i] - w[i - 1]) / hm) / (hp + hm);
        let lhs = d2 + (d as f64 - 1.0) * dw[i] / r[i];
        sup = sup.max((lhs - source_term(w[i])).abs());
    }
    sup
}

#[derive(Clone, Debug, Serialize)]
pub struct RescaleReport {
    pub t: f64,
    pub dim: usize,
    pub base_residual: f64,
    pub rescaled_residual: f64,
    /// Flux of `v = t⁴ w(·/t)` at its inner radius.
    pub rescaled_flux: f64,
    /// `t^{d+2}` times the original flux.
    pub expected_flux: f64,
}

impl RescaleReport {
    /// The rescaled residual is at most `factor` times the original one.
    pub fn within(&self, factor: f64) -> bool {
        self.rescaled_residual <= factor * self.base_residual.max(f64::MIN_POSITIVE)
    }
}

/// Build `v(x) = t⁴ w(x/t)` on the stretched mesh and re-evaluate the radial
/// equation on it.
pub fn rescale_check(profile: &RadialProfile, t: f64) -> RescaleReport {
    let r_min = 10.0 * profile.inner_radius;
    let r: Vec<f64> = profile.r.iter().map(|x| x * t).collect();
    let v: Vec<f64> = profile.values.iter().map(|w| w * t.powi(4)).collect();
    let dv: Vec<f64> = profile.derivs.iter().map(|d| d * t.powi(3)).collect();
    let d = profile.dim;
    let area = sphere_area(d);
    RescaleReport {
        t,
        dim: d,
        base_residual: profile.residual(r_min),
        rescaled_residual: pde_residual(d, &r, &v, &dv, r_min * t),
        rescaled_flux: -area * r[0].powi(d as i32 - 1) * dv[0],
        expected_flux: t.powi(d as i32 + 2) * profile.flux_at(0),
    }
}
