//! Post-processing of a finished march: minimum action paths, the WKB
//! prefactor and the Bouchet–Reygner escape-time estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DriftField;
use crate::grid::{GridSpec, PointState};
use crate::linalg::{add, det, eigenvalues, lerp, norm, scale, sub, Mat2, Vec2};
use crate::march::SolutionField;

/// Bilinear interpolation of per-point values over the mesh cell holding
/// `p`. `None` if `p` is outside the domain or a corner is not usable.
pub fn bilinear<T, F>(grid: &GridSpec, p: Vec2, value: F) -> Option<T>
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
    F: Fn(usize) -> Option<T>,
{
    let fx = (p[0] - grid.x0) / grid.h;
    let fy = (p[1] - grid.y0) / grid.h;
    let (lx, ly) = ((grid.nx - 1) as f64, (grid.ny - 1) as f64);
    if !(fx >= -1e-9 && fy >= -1e-9 && fx <= lx + 1e-9 && fy <= ly + 1e-9) {
        return None;
    }
    let ix = (fx.floor().max(0.0) as usize).min(grid.nx - 2);
    let iy = (fy.floor().max(0.0) as usize).min(grid.ny - 2);
    let (tx, ty) = ((fx - ix as f64).clamp(0.0, 1.0), (fy - iy as f64).clamp(0.0, 1.0));
    let v00 = value(grid.index(ix, iy))?;
    let v10 = value(grid.index(ix + 1, iy))?;
    let v01 = value(grid.index(ix, iy + 1))?;
    let v11 = value(grid.index(ix + 1, iy + 1))?;
    Some(v00 * ((1.0 - tx) * (1.0 - ty)) + v10 * (tx * (1.0 - ty)) + v01 * ((1.0 - tx) * ty) + v11 * (tx * ty))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct V2([f64; 2]);

impl std::ops::Add for V2 {
    type Output = V2;
    fn add(self, o: V2) -> V2 {
        V2([self.0[0] + o.0[0], self.0[1] + o.0[1]])
    }
}

impl std::ops::Mul<f64> for V2 {
    type Output = V2;
    fn mul(self, s: f64) -> V2 {
        V2([self.0[0] * s, self.0[1] * s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct V3([f64; 3]);

impl std::ops::Add for V3 {
    type Output = V3;
    fn add(self, o: V3) -> V3 {
        V3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Mul<f64> for V3 {
    type Output = V3;
    fn mul(self, s: f64) -> V3 {
        V3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// `(U, ∇U)` interpolated from accepted points.
pub fn interpolate_jet(sol: &SolutionField, p: Vec2) -> Option<(f64, Vec2)> {
    let v = bilinear(&sol.grid, p, |i| {
        sol.is_accepted(i).then(|| V3([sol.u(i), sol.grad(i)[0], sol.grad(i)[1]]))
    })?;
    Some((v.0[0], [v.0[1], v.0[2]]))
}

/// Largest `U` over the seeded patch around the attractor.
pub fn init_level(sol: &SolutionField) -> f64 {
    sol.records
        .iter()
        .filter(|r| r.fixed && r.state == PointState::Accepted)
        .map(|r| r.jet.u)
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    /// From near the attractor to the target.
    pub points: Vec<Vec2>,
    /// Cumulative arclength at each point.
    pub arclength: Vec<f64>,
}

impl MapPolyline {
    fn from_points(points: Vec<Vec2>) -> Self {
        let mut arclength = Vec::with_capacity(points.len());
        let mut s = 0.0;
        for (k, p) in points.iter().enumerate() {
            if k > 0 {
                s += norm(sub(*p, points[k - 1]));
            }
            arclength.push(s);
        }
        Self { points, arclength }
    }

    pub fn length(&self) -> f64 {
        self.arclength.last().copied().unwrap_or(0.0)
    }

    pub fn max_abs_y(&self) -> f64 {
        self.points.iter().map(|p| p[1].abs()).fold(0.0, f64::max)
    }
}

/// Traces the minimum action path ending at `target` by integrating
/// `-(b + ∇U)/|b + ∇U|` backward from the target with RK4 (stored `∇U`
/// interpolated bilinearly) until `U` drops to the seeded-patch level.
pub fn trace_map(sol: &SolutionField, field: &dyn DriftField, target: Vec2, step: Option<f64>) -> Result<MapPolyline> {
    let ds = step.unwrap_or(0.5 * sol.grid.h);
    if !(ds > 0.0) {
        return Err(Error::InvalidArgument("trace step must be positive".into()));
    }
    let level = init_level(sol);
    let truncated = |p: Vec2| Error::TruncatedTrace { x: p[0], y: p[1] };
    let dir = |p: Vec2| -> Result<Vec2> {
        let (_, g) = interpolate_jet(sol, p).ok_or_else(|| truncated(p))?;
        let v = add(field.drift(p), g);
        let nv = norm(v);
        if !(nv > 1e-14) {
            return Err(truncated(p));
        }
        Ok(scale(-1.0 / nv, v))
    };
    let (u0, _) = interpolate_jet(sol, target).ok_or_else(|| truncated(target))?;
    let mut pts = vec![target];
    let mut p = target;
    let mut u = u0;
    // the arclength of a MAP is bounded by what a monotone descent of U
    // through the accepted region can take; cap generously
    let max_steps = 20 * (2 * (sol.grid.nx + sol.grid.ny)) * ((sol.grid.h / ds).ceil() as usize).max(1);
    for _ in 0..max_steps {
        if u <= level {
            pts.reverse();
            return Ok(MapPolyline::from_points(pts));
        }
        let k1 = dir(p)?;
        let k2 = dir(add(p, scale(0.5 * ds, k1)))?;
        let k3 = dir(add(p, scale(0.5 * ds, k2)))?;
        let k4 = dir(add(p, scale(ds, k3)))?;
        let inc = scale(ds / 6.0, add(add(k1, scale(2.0, k2)), add(scale(2.0, k3), k4)));
        p = add(p, inc);
        u = interpolate_jet(sol, p).ok_or_else(|| truncated(p))?.0;
        pts.push(p);
    }
    Err(truncated(p))
}

/// `f = ∇·l / |b|` with `l = b + ∇U/2`, on the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceField {
    pub f: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DivergenceField {
    /// Bilinear interpolation with the weights renormalized over valid
    /// corners (`f` is masked where `b` vanishes, e.g. at a saddle).
    pub fn at(&self, grid: &GridSpec, p: Vec2) -> Option<f64> {
        let v = bilinear(grid, p, |i| Some(if self.valid[i] { [self.f[i], 1.0] } else { [0.0, 0.0] }).map(V2))?;
        (v.0[1] > 1e-12).then(|| v.0[0] / v.0[1])
    }

    pub fn rms(&self) -> f64 {
        let (s, n) = self.f.iter().zip(&self.valid).filter(|(_, v)| **v).fold((0.0, 0usize), |(s, n), (f, _)| (s + f * f, n + 1));
        if n == 0 { 0.0 } else { (s / n as f64).sqrt() }
    }
}

/// Derivative along axis `axis` of a mesh quantity: central where both
/// neighbours are usable, second-order one-sided otherwise.
pub(crate) fn mesh_derivative<F: Fn(usize) -> Option<f64>>(grid: &GridSpec, i: usize, axis: usize, value: F) -> Option<f64> {
    let unit = |k: i64| if axis == 0 { [k, 0] } else { [0, k] };
    let at = |k: i64| grid.offset(i, unit(k)).and_then(&value);
    let h = grid.h;
    let c = at(0)?;
    match (at(-1), at(1)) {
        (Some(m), Some(p)) => Some((p - m) / (2.0 * h)),
        (None, Some(p)) => Some(match at(2) {
            Some(p2) => (-3.0 * c + 4.0 * p - p2) / (2.0 * h),
            None => (p - c) / h,
        }),
        (Some(m), None) => Some(match at(-2) {
            Some(m2) => (3.0 * c - 4.0 * m + m2) / (2.0 * h),
            None => (c - m) / h,
        }),
        (None, None) => None,
    }
}

pub fn divergence_field(sol: &SolutionField, field: &dyn DriftField) -> DivergenceField {
    let grid = sol.grid;
    let l = |i: usize, k: usize| -> Option<f64> {
        sol.is_accepted(i).then(|| field.drift(grid.point(i))[k] + 0.5 * sol.grad(i)[k])
    };
    let rows: Vec<Vec<(f64, bool)>> = (0..grid.ny)
        .into_par_iter()
        .map(|iy| {
            (0..grid.nx)
                .map(|ix| {
                    let i = grid.index(ix, iy);
                    if !sol.is_accepted(i) {
                        return (f64::NAN, false);
                    }
                    let nb = norm(field.drift(grid.point(i)));
                    if nb < 1e-12 {
                        return (f64::NAN, false);
                    }
                    match (mesh_derivative(&grid, i, 0, |j| l(j, 0)), mesh_derivative(&grid, i, 1, |j| l(j, 1))) {
                        (Some(dx), Some(dy)) => ((dx + dy) / nb, true),
                        _ => (f64::NAN, false),
                    }
                })
                .collect()
        })
        .collect();
    let (f, valid) = rows.into_iter().flatten().unzip();
    DivergenceField { f, valid }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrefactorField {
    pub c: Vec<f64>,
    pub valid: Vec<bool>,
    pub u_level: f64,
}

impl PrefactorField {
    /// Largest valid `C` and its mesh index.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        self.c
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, v))| **v)
            .map(|(i, (c, _))| (i, *c))
            .fold(None, |best: Option<(usize, f64)>, (i, c)| match best {
                Some((_, b)) if b >= c => best,
                _ => Some((i, c)),
            })
    }
}

/// WKB prefactor by replaying the acceptance order with the backward Euler
/// step `C(z) = C(p_λ) / (1 + f(z)|z - p_λ|)`, seeded with `C = 1` on
/// `{U ≤ u_level}`.
pub fn wkb_prefactor(sol: &SolutionField, div: &DivergenceField, u_level: f64) -> PrefactorField {
    wkb_prefactor_seeded(sol, div, u_level, 1.0)
}

pub fn wkb_prefactor_seeded(sol: &SolutionField, div: &DivergenceField, u_level: f64, seed: f64) -> PrefactorField {
    let n = sol.records.len();
    let mut c = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    let grid = sol.grid;
    for &z in &sol.order {
        if sol.u(z) <= u_level {
            c[z] = seed;
            valid[z] = true;
            continue;
        }
        let r = &sol.records[z];
        let Some((p1, p2)) = r.parents else { continue };
        if !div.valid[z] {
            continue;
        }
        let parent = |p: usize| -> Option<f64> {
            if sol.u(p) <= u_level {
                Some(seed)
            } else {
                valid[p].then_some(c[p])
            }
        };
        let (Some(c1), Some(c2)) = (parent(p1), parent(p2)) else { continue };
        let lam = if p1 == p2 { 0.0 } else { r.lambda };
        let c_base = c1 + lam * (c2 - c1);
        let base = lerp(grid.point(p1), grid.point(p2), lam);
        let denom = 1.0 + div.f[z] * norm(sub(grid.point(z), base));
        if denom > 0.0 {
            c[z] = c_base / denom;
            valid[z] = c[z].is_finite() && c[z] > 0.0;
        }
    }
    PrefactorField { c, valid, u_level }
}

/// Hessian of `U` from central differences of the stored gradient at the
/// mesh point nearest `at`, symmetrized; one-sided next to the edge of the
/// accepted region.
pub fn hessian_of_u(sol: &SolutionField, at: Vec2) -> Result<Mat2> {
    let grid = sol.grid;
    let insufficient = || Error::InsufficientPatch { x: at[0], y: at[1] };
    let i = grid.nearest(at).ok_or_else(insufficient)?;
    let g = |k: usize| move |j: usize| sol.is_accepted(j).then(|| sol.grad(j)[k]);
    let mut h = [[0.0; 2]; 2];
    for k in 0..2 {
        for axis in 0..2 {
            h[k][axis] = mesh_derivative(&grid, i, axis, g(k)).ok_or_else(insufficient)?;
        }
    }
    let off = 0.5 * (h[0][1] + h[1][0]);
    Ok([[h[0][0], off], [off, h[1][1]]])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeOptions {
    pub saddle: Vec2,
    /// Where to evaluate the Hessian at the saddle; defaults to the saddle.
    pub hessian_at: Option<Vec2>,
    /// End point of the traced path; defaults to `hessian_at`, or one mesh
    /// step toward the attractor from the saddle.
    pub trace_target: Option<Vec2>,
    pub trace_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub lambda_plus: f64,
    pub det_h_saddle: f64,
    pub det_h_attractor: f64,
    pub prefactor_integral: f64,
    pub u_saddle: f64,
    /// Everything except `exp(U/ε)`.
    pub prefactor: f64,
    pub map_length: f64,
    /// `(ε, E[τ])`.
    pub tau: Vec<(f64, f64)>,
}

/// Bouchet–Reygner expected escape time for each `ε`.
pub fn bouchet_reygner(
    sol: &SolutionField,
    field: &dyn DriftField,
    div: &DivergenceField,
    opts: &EscapeOptions,
    eps_list: &[f64],
) -> Result<EscapeEstimate> {
    let grid = sol.grid;
    let ev = eigenvalues(&field.jacobian(opts.saddle));
    let lambda_plus = ev
        .iter()
        .filter(|(re, im)| *re > 0.0 && im.abs() < 1e-12)
        .map(|(re, _)| *re)
        .fold(f64::NAN, f64::max);
    if !(lambda_plus > 0.0) || !ev.iter().any(|(re, _)| *re < 0.0) {
        return Err(Error::NotHyperbolic(format!("eigenvalues of Db at the saddle: {ev:?}")));
    }
    let h_at = opts.hessian_at.unwrap_or(opts.saddle);
    let det_h_saddle = det(&hessian_of_u(sol, h_at)?);
    let det_h_attractor = det(&hessian_of_u(sol, field.attractor())?);
    if !(det_h_attractor > 0.0) {
        return Err(Error::InsufficientPatch { x: field.attractor()[0], y: field.attractor()[1] });
    }
    let target = opts.trace_target.or(opts.hessian_at).unwrap_or_else(|| {
        let o = field.attractor();
        let d = sub(o, opts.saddle);
        add(opts.saddle, scale(grid.h / norm(d), d))
    });
    let path = trace_map(sol, field, target, opts.trace_step)?;
    let mut integral = 0.0;
    let mut prev: Option<f64> = None;
    for (k, p) in path.points.iter().enumerate() {
        let f = div
            .at(&grid, *p)
            .ok_or(Error::TruncatedTrace { x: p[0], y: p[1] })?;
        if let Some(fp) = prev {
            integral += 0.5 * (f + fp) * (path.arclength[k] - path.arclength[k - 1]);
        }
        prev = Some(f);
    }
    let i_saddle = grid.nearest(opts.saddle).ok_or(Error::InsufficientPatch { x: opts.saddle[0], y: opts.saddle[1] })?;
    if !sol.is_accepted(i_saddle) {
        return Err(Error::InsufficientPatch { x: opts.saddle[0], y: opts.saddle[1] });
    }
    let u_saddle = sol.u(i_saddle);
    let prefactor = 2.0 * std::f64::consts::PI / lambda_plus * (det_h_saddle.abs() / det_h_attractor).sqrt() * integral.exp();
    let tau = eps_list.iter().map(|&e| (e, prefactor * (u_saddle / e).exp())).collect();
    Ok(EscapeEstimate {
        lambda_plus,
        det_h_saddle,
        det_h_attractor,
        prefactor_integral: integral,
        u_saddle,
        prefactor,
        map_length: path.length(),
        tau,
    })
}
