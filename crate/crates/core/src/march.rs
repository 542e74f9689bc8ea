//! Label-setting solvers: jet marching with cubic updates (EJM and the
//! dense-disk JM variant) and two first-order baselines with linear
//! interpolation and straight paths.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::DriftField;
use crate::grid::{l1_ring_offsets, GridSpec, IndexedMinHeap, Jet, PointRecord, PointState, UpdateKind, NEIGHBORS8};
use crate::linalg::{add, det, dot, eigenvalues, inverse, lerp, mat_vec, norm, scale, sub, Mat2, Vec2};
use crate::minimize::{
    jet_from_exit_slope, one_point_update, triangle_update, HermiteData, LocalFrame, NewtonOptions,
    OnePointProblem, Proposal, TriangleProblem,
};
use crate::stencil::{disk_stencil, StencilBank, StencilKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Ejm,
    Jm,
    LinearMidpoint,
    AsrEndpoint,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ejm, Method::Jm, Method::LinearMidpoint, Method::AsrEndpoint];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ejm => "ejm",
            Method::Jm => "jm",
            Method::LinearMidpoint => "linear-midpoint",
            Method::AsrEndpoint => "asr-endpoint",
        }
    }

    fn is_cubic(&self) -> bool {
        matches!(self, Method::Ejm | Method::Jm)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}` (expected ejm, jm, linear-midpoint or asr-endpoint)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum StopMode {
    /// Stop right after the first boundary point is accepted.
    FirstBoundaryHit,
    /// Stop once the mesh point at `target` and every point within
    /// Chebyshev distance `margin` of it are accepted.
    TargetReached { target: Vec2, margin: usize },
    FullMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub method: Method,
    pub n_bins: usize,
    pub k_cutoff: u32,
    pub d_gap: u32,
    pub fail_safe: bool,
    pub fail_safe_kmax: usize,
    /// Disk radius of the JM neighbourhood, in mesh spacings.
    pub jm_radius: f64,
    /// Disk radius of the linear-midpoint neighbourhood, in mesh spacings.
    pub baseline_radius: f64,
    pub asr_alpha: f64,
    /// Chebyshev radius (in mesh points) of the seeded patch.
    pub init_radius: usize,
    pub stop: StopMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Ejm,
            n_bins: 64,
            k_cutoff: 4,
            d_gap: 3,
            fail_safe: true,
            fail_safe_kmax: 20,
            jm_radius: 10.0,
            baseline_radius: 5.0,
            asr_alpha: 0.9999,
            init_radius: 1,
            stop: StopMode::FirstBoundaryHit,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.fail_safe_kmax < 1 {
            return bad("fail_safe_kmax must be ≥ 1".into());
        }
        if self.method == Method::Jm && self.jm_radius < 2.0 {
            return bad(format!("jm_radius must be ≥ 2, got {}", self.jm_radius));
        }
        if self.baseline_radius < 1.0 {
            return bad("baseline_radius must be ≥ 1".into());
        }
        if self.n_bins == 0 || self.k_cutoff < 2 || self.d_gap < 1 {
            return bad("need n_bins ≥ 1, k_cutoff ≥ 2 and d_gap ≥ 1".into());
        }
        if self.init_radius < 1 {
            return bad("init_radius must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    BoundaryHit,
    TargetReached,
    FullMesh,
    /// The considered set ran dry before the stopping condition.
    Exhausted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub accepted: usize,
    pub one_point_updates: u64,
    pub one_point_fallbacks: u64,
    pub triangle_attempts: u64,
    pub triangle_interior: u64,
    pub fail_safe_calls: u64,
    pub fail_safe_fixes: u64,
    pub fail_safe_exhausted: u64,
    /// Accepted points where `b = 0` forced the plain 8-point stencil.
    pub zero_drift_stencils: u64,
    pub heap_ops: u64,
    pub runtime_s: f64,
}

/// Lyapunov data of the linearization at the attractor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub jacobian: Mat2,
    pub sigma: Mat2,
    /// `U ≈ zᵀ Q z` near the attractor.
    pub q: Mat2,
}

/// Solves `J Σ + Σ Jᵀ = -I` and returns `Q = Σ⁻¹ / 2`.
pub fn linearize(jacobian: Mat2) -> Result<Linearization> {
    let ev = eigenvalues(&jacobian);
    if !(ev[0].0 < 0.0 && ev[1].0 < 0.0) {
        return Err(Error::Initialization(format!(
            "Jacobian at the attractor is not stable (eigenvalues {ev:?})"
        )));
    }
    let j = jacobian;
    // unknowns (s11, s12, s22)
    let a = [
        [2.0 * j[0][0], 2.0 * j[0][1], 0.0],
        [j[1][0], j[0][0] + j[1][1], j[0][1]],
        [0.0, 2.0 * j[1][0], 2.0 * j[1][1]],
    ];
    let s = solve3(a, [-1.0, 0.0, -1.0])
        .ok_or_else(|| Error::Initialization("singular Lyapunov system".into()))?;
    let sigma = [[s[0], s[1]], [s[1], s[2]]];
    if !(sigma[0][0] > 0.0 && det(&sigma) > 0.0) {
        return Err(Error::Initialization("covariance is not positive definite".into()));
    }
    let inv = inverse(&sigma).ok_or_else(|| Error::Initialization("singular covariance".into()))?;
    let q = [[0.5 * inv[0][0], 0.5 * inv[0][1]], [0.5 * inv[1][0], 0.5 * inv[1][1]]];
    Ok(Linearization { jacobian, sigma, q })
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &k| a[i][c].abs().partial_cmp(&a[k][c].abs()).unwrap())?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut s = b[r];
        for k in r + 1..3 {
            s -= a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Seeded points of the initialization patch: `(index, jet)`.
pub fn init_linearized(field: &dyn DriftField, grid: &GridSpec, radius: usize) -> Result<(usize, Vec<(usize, Jet)>)> {
    let o = field.attractor();
    let center = grid
        .locate(o)
        .map_err(|e| Error::Initialization(format!("attractor must be a mesh point: {e}")))?;
    let lin = linearize(field.jacobian(o))?;
    let r = radius as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx, dy) == (0, 0) {
                continue;
            }
            if let Some(i) = grid.offset(center, [dx, dy]) {
                let z = sub(grid.point(i), o);
                let qz = mat_vec(&lin.q, z);
                out.push((i, Jet { u: dot(z, qz), g: scale(2.0, qz) }));
            }
        }
    }
    Ok((center, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub points: usize,
    pub u_sup: f64,
    pub u_rms: f64,
    pub grad_sup: f64,
    pub grad_rms: f64,
}

/// Finished march: per-point records plus acceptance order and counters.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub grid: GridSpec,
    pub method: Method,
    pub field_name: String,
    pub records: Vec<PointRecord>,
    pub order: Vec<usize>,
    pub attractor: usize,
    pub termination: Termination,
    pub stats: RunStats,
    pub init_radius: usize,
}

impl SolutionField {
    pub fn is_accepted(&self, i: usize) -> bool {
        self.records[i].state == PointState::Accepted
    }

    pub fn u(&self, i: usize) -> f64 {
        self.records[i].jet.u
    }

    pub fn grad(&self, i: usize) -> Vec2 {
        self.records[i].jet.g
    }

    /// Position of each point in the acceptance order.
    pub fn acceptance_rank(&self) -> Vec<Option<usize>> {
        let mut r = vec![None; self.records.len()];
        for (k, &i) in self.order.iter().enumerate() {
            r[i] = Some(k);
        }
        r
    }

    /// Errors over accepted points against the field's closed form, if any.
    pub fn errors(&self, field: &dyn DriftField) -> Option<ErrorReport> {
        let mut rep = ErrorReport { points: 0, u_sup: 0.0, u_rms: 0.0, grad_sup: 0.0, grad_rms: 0.0 };
        for &i in &self.order {
            let ex = field.exact(self.grid.point(i))?;
            let r = &self.records[i];
            let eu = (r.jet.u - ex.u).abs();
            let eg = norm(sub(r.jet.g, ex.g));
            rep.points += 1;
            rep.u_sup = rep.u_sup.max(eu);
            rep.grad_sup = rep.grad_sup.max(eg);
            rep.u_rms += eu * eu;
            rep.grad_rms += eg * eg;
        }
        if rep.points == 0 {
            return None;
        }
        rep.u_rms = (rep.u_rms / rep.points as f64).sqrt();
        rep.grad_rms = (rep.grad_rms / rep.points as f64).sqrt();
        Some(rep)
    }

    pub fn summary(&self, field: &dyn DriftField) -> RunSummary {
        RunSummary {
            method: self.method,
            field: self.field_name.clone(),
            n: self.grid.nx,
            h: self.grid.h,
            termination: self.termination,
            stats: self.stats.clone(),
            errors: self.errors(field),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub field: String,
    pub n: usize,
    pub h: f64,
    pub termination: Termination,
    pub stats: RunStats,
    pub errors: Option<ErrorReport>,
}

enum Neighborhood {
    Bank(StencilBank),
    Fixed(Vec<[i64; 2]>),
}

/// Mutable march state. Exposed so that single update steps can be driven
/// directly.
pub struct Marcher<'a> {
    pub field: &'a dyn DriftField,
    pub grid: GridSpec,
    pub cfg: SolverConfig,
    pub newton: NewtonOptions,
    pub records: Vec<PointRecord>,
    keys: Vec<f64>,
    heap: IndexedMinHeap,
    pub order: Vec<usize>,
    pub stats: RunStats,
    neighborhood: Neighborhood,
    attractor: usize,
}

impl<'a> Marcher<'a> {
    /// Builds stencils and seeds the attractor patch.
    pub fn new(field: &'a dyn DriftField, grid: GridSpec, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let neighborhood = match cfg.method {
            Method::Ejm => Neighborhood::Bank(StencilBank::new(
                cfg.n_bins,
                StencilKind::Oblong { k_cutoff: cfg.k_cutoff, d_gap: cfg.d_gap },
            )?),
            Method::AsrEndpoint => {
                Neighborhood::Bank(StencilBank::new(cfg.n_bins, StencilKind::Asr { alpha: cfg.asr_alpha })?)
            }
            Method::Jm => Neighborhood::Fixed(disk_stencil(cfg.jm_radius)),
            Method::LinearMidpoint => Neighborhood::Fixed(disk_stencil(cfg.baseline_radius)),
        };
        let n = grid.len();
        let mut m = Self {
            field,
            grid,
            cfg,
            newton: NewtonOptions::default(),
            records: vec![PointRecord::default(); n],
            keys: vec![f64::INFINITY; n],
            heap: IndexedMinHeap::new(n),
            order: Vec::new(),
            stats: RunStats::default(),
            neighborhood,
            attractor: 0,
        };
        let (center, patch) = init_linearized(field, &grid, cfg.init_radius)?;
        m.attractor = center;
        let r = &mut m.records[center];
        r.state = PointState::Accepted;
        r.jet = Jet { u: 0.0, g: [0.0, 0.0] };
        r.fixed = true;
        m.keys[center] = 0.0;
        m.order.push(center);
        for (i, jet) in patch {
            let r = &mut m.records[i];
            r.state = PointState::Considered;
            r.jet = jet;
            r.fixed = true;
            r.parents = Some((center, center));
            r.lambda = 0.0;
            m.keys[i] = jet.u;
            m.heap.push(i, &m.keys);
        }
        Ok(m)
    }

    pub fn attractor(&self) -> usize {
        self.attractor
    }

    /// Runs the main loop to the configured stopping condition.
    pub fn run(mut self) -> Result<SolutionField> {
        let start = Instant::now();
        let target = match self.cfg.stop {
            StopMode::TargetReached { target, margin } => {
                let t = self.grid.nearest(target).ok_or_else(|| {
                    Error::InvalidArgument(format!("target {target:?} lies outside the domain"))
                })?;
                let ring: Vec<usize> = (-(margin as i64)..=margin as i64)
                    .flat_map(|dy| (-(margin as i64)..=margin as i64).map(move |dx| [dx, dy]))
                    .filter_map(|d| self.grid.offset(t, d))
                    .collect();
                Some(ring)
            }
            _ => None,
        };
        let mut pending = target.as_ref().map(|r| r.len()).unwrap_or(0);
        let in_target: Vec<bool> = {
            let mut v = vec![false; self.grid.len()];
            if let Some(r) = &target {
                for &i in r {
                    v[i] = true;
                }
            }
            v
        };
        let termination = loop {
            let Some(x) = self.heap.extract_min(&self.keys) else {
                break match self.cfg.stop {
                    StopMode::FullMesh => Termination::FullMesh,
                    _ => Termination::Exhausted,
                };
            };
            if self.records[x].kind == UpdateKind::OnePoint && self.cfg.fail_safe && self.cfg.method.is_cubic() {
                self.fail_safe(x);
            }
            self.records[x].state = PointState::Accepted;
            self.order.push(x);
            match self.cfg.stop {
                StopMode::FirstBoundaryHit if self.grid.is_boundary(x) => break Termination::BoundaryHit,
                StopMode::TargetReached { .. } if in_target[x] => {
                    pending -= 1;
                    if pending == 0 {
                        break Termination::TargetReached;
                    }
                }
                _ => {}
            }
            self.update_from(x)?;
        };
        self.stats.accepted = self.order.len();
        self.stats.heap_ops = self.heap.ops;
        self.stats.runtime_s = start.elapsed().as_secs_f64();
        if termination == Termination::Exhausted {
            return Err(Error::DomainExhausted);
        }
        Ok(SolutionField {
            grid: self.grid,
            method: self.cfg.method,
            field_name: self.field.name(),
            records: self.records,
            order: self.order,
            attractor: self.attractor,
            termination,
            stats: self.stats,
            init_radius: self.cfg.init_radius,
        })
    }

    fn update_from(&mut self, x: usize) -> Result<()> {
        let px = self.grid.point(x);
        let offsets: &[[i64; 2]] = match &self.neighborhood {
            Neighborhood::Fixed(v) => v,
            Neighborhood::Bank(bank) => {
                let b = self.field.drift(px);
                match bank.bin_index(b) {
                    Some(k) => &bank.stencils[k].offsets,
                    None => {
                        self.stats.zero_drift_stencils += 1;
                        &NEIGHBORS8
                    }
                }
            }
        };
        // The offsets borrow `self`; copy them so that updates can mutate.
        let offsets: Vec<[i64; 2]> = offsets.to_vec();
        for o in offsets {
            let Some(y) = self.grid.offset(x, o) else { continue };
            let r = &self.records[y];
            if r.state == PointState::Accepted || r.fixed {
                continue;
            }
            self.update_neighbors(x, y);
        }
        Ok(())
    }

    fn touch(&mut self, y: usize) {
        let r = &mut self.records[y];
        self.keys[y] = r.jet.u;
        if r.state == PointState::Unknown {
            if r.jet.u.is_finite() {
                r.state = PointState::Considered;
                self.heap.push(y, &self.keys);
            }
        } else if self.heap.contains(y) {
            self.heap.update(y, &self.keys);
        }
    }

    fn adopt(&mut self, y: usize, p: &Proposal, kind: UpdateKind, parents: (usize, usize)) {
        let r = &mut self.records[y];
        r.jet = Jet { u: p.u, g: p.g };
        r.kind = kind;
        r.parents = Some(parents);
        r.lambda = p.lambda;
        r.slopes = p.slopes;
        r.update_length = if kind == UpdateKind::Triangle { p.length } else { f64::INFINITY };
    }

    fn triangle_problem(&self, x: usize, z: usize, y: usize) -> TriangleProblem {
        let (px, pz) = (self.grid.point(x), self.grid.point(z));
        let (jx, jz) = (self.records[x].jet, self.records[z].jet);
        TriangleProblem {
            x: px,
            z: pz,
            y: self.grid.point(y),
            hermite: HermiteData::from_jets(px, jx.u, jx.g, pz, jz.u, jz.g),
        }
    }

    /// One-point update from `x` and triangle updates over accepted
    /// 8-neighbours of `x`, for the target `y`.
    pub fn update_neighbors(&mut self, x: usize, y: usize) {
        if self.cfg.method.is_cubic() {
            self.update_cubic(x, y)
        } else {
            self.update_linear(x, y)
        }
        self.touch(y);
    }

    fn update_cubic(&mut self, x: usize, y: usize) {
        let h = self.grid.h;
        let prob = OnePointProblem {
            x: self.grid.point(x),
            y: self.grid.point(y),
            ux: self.records[x].jet.u,
        };
        self.stats.one_point_updates += 1;
        if let Ok((p, converged)) = one_point_update(self.field, &prob, h, &self.newton) {
            if !converged {
                self.stats.one_point_fallbacks += 1;
            }
            let r = &mut self.records[y];
            r.best_one_point = r.best_one_point.min(p.u);
            if p.u < r.jet.u {
                self.adopt(y, &p, UpdateKind::OnePoint, (x, x));
            }
        }
        for d in NEIGHBORS8 {
            let Some(z) = self.grid.offset(x, d) else { continue };
            if self.records[z].state != PointState::Accepted || z == y {
                continue;
            }
            self.stats.triangle_attempts += 1;
            let prob = self.triangle_problem(x, z, y);
            let Some(p) = triangle_update(self.field, &prob, h, &self.newton) else { continue };
            self.stats.triangle_interior += 1;
            let r = &self.records[y];
            let rule_a = p.u < r.best_one_point;
            let rule_b = r.kind != UpdateKind::Triangle || p.length < r.update_length;
            if rule_a && rule_b {
                self.adopt(y, &p, UpdateKind::Triangle, (x, z));
            }
        }
    }

    /// Searches ℓ1 rings around `x` for an accepted adjacent pair giving an
    /// interior triangle update below every one-point proposal.
    pub fn fail_safe(&mut self, x: usize) -> bool {
        self.stats.fail_safe_calls += 1;
        let h = self.grid.h;
        for k in 1..=self.cfg.fail_safe_kmax {
            let ring = l1_ring_offsets(k);
            for w in 0..ring.len() {
                let (Some(a), Some(b)) = (self.grid.offset(x, ring[w]), self.grid.offset(x, ring[(w + 1) % ring.len()]))
                else {
                    continue;
                };
                if self.records[a].state != PointState::Accepted || self.records[b].state != PointState::Accepted {
                    continue;
                }
                let prob = self.triangle_problem(a, b, x);
                self.stats.triangle_attempts += 1;
                if let Some(p) = triangle_update(self.field, &prob, h, &self.newton) {
                    self.stats.triangle_interior += 1;
                    if p.u < self.records[x].best_one_point {
                        self.adopt(x, &p, UpdateKind::Triangle, (a, b));
                        self.keys[x] = p.u;
                        self.stats.fail_safe_fixes += 1;
                        return true;
                    }
                }
            }
        }
        self.stats.fail_safe_exhausted += 1;
        false
    }

    fn linear_cost(&self, base: Vec2, y: Vec2) -> f64 {
        let d = sub(y, base);
        let node = match self.cfg.method {
            Method::LinearMidpoint => lerp(base, y, 0.5),
            _ => y,
        };
        let b = self.field.drift(node);
        norm(b) * norm(d) - dot(b, d)
    }

    fn straight_proposal(&self, base: Vec2, y: Vec2, u: f64, lambda: f64) -> Proposal {
        let (g, length) = match LocalFrame::new(base, y) {
            Ok(fr) => (jet_from_exit_slope(self.field, &fr, 0.0), fr.h),
            Err(_) => ([0.0, 0.0], 0.0),
        };
        Proposal { u, g, lambda, slopes: [0.0, 0.0], length }
    }

    fn update_linear(&mut self, x: usize, y: usize) {
        let (px, py) = (self.grid.point(x), self.grid.point(y));
        let ux = self.records[x].jet.u;
        self.stats.one_point_updates += 1;
        let u1 = ux + self.linear_cost(px, py);
        if u1 < self.records[y].jet.u {
            let p = self.straight_proposal(px, py, u1, 0.0);
            self.adopt(y, &p, UpdateKind::OnePoint, (x, x));
        }
        let r = &mut self.records[y];
        r.best_one_point = r.best_one_point.min(u1);
        for d in NEIGHBORS8 {
            let Some(z) = self.grid.offset(x, d) else { continue };
            if self.records[z].state != PointState::Accepted || z == y {
                continue;
            }
            self.stats.triangle_attempts += 1;
            let pz = self.grid.point(z);
            let uz = self.records[z].jet.u;
            let best = {
                let f = |l: f64| (1.0 - l) * ux + l * uz + self.linear_cost(lerp(px, pz, l), py);
                interior_min_1d(&f).map(|l| (l, f(l)))
            };
            let Some((l, u)) = best else { continue };
            self.stats.triangle_interior += 1;
            if u < self.records[y].jet.u {
                let p = self.straight_proposal(lerp(px, pz, l), py, u, l);
                self.adopt(y, &p, UpdateKind::Triangle, (x, z));
            }
        }
    }
}

/// Interior minimizer of a (near-)convex function on `[0, 1]`: `None` when
/// the one-sided slopes show the minimum sits at an endpoint. Golden-section
/// search followed by a few finite-difference Newton steps.
pub fn interior_min_1d(f: &dyn Fn(f64) -> f64) -> Option<f64> {
    const D: f64 = 1e-7;
    if f(D) >= f(0.0) || f(1.0 - D) >= f(1.0) {
        return None;
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut l = 0.5 * (a + b);
    let e = 1e-5;
    for _ in 0..3 {
        let (fm, f0, fp) = (f(l - e), f(l), f(l + e));
        let curv = (fp - 2.0 * f0 + fm) / (e * e);
        if !(curv > 0.0) {
            break;
        }
        let next = l - (fp - fm) / (2.0 * e) / curv;
        if !(next > 0.0 && next < 1.0) || f(next) > f0 {
            break;
        }
        l = next;
    }
    Some(l)
}

pub fn solve(field: &dyn DriftField, grid: GridSpec, cfg: SolverConfig) -> Result<SolutionField> {
    Marcher::new(field, grid, cfg)?.run()
}

pub fn ejm_solve(field: &dyn DriftField, grid: GridSpec, cfg: SolverConfig) -> Result<SolutionField> {
    solve(field, grid, SolverConfig { method: Method::Ejm, ..cfg })
}

pub fn jm_solve(field: &dyn DriftField, grid: GridSpec, cfg: SolverConfig) -> Result<SolutionField> {
    solve(field, grid, SolverConfig { method: Method::Jm, ..cfg })
}

pub fn linear_midpoint_solve(field: &dyn DriftField, grid: GridSpec, cfg: SolverConfig) -> Result<SolutionField> {
    solve(field, grid, SolverConfig { method: Method::LinearMidpoint, ..cfg })
}

pub fn asr_endpoint_solve(field: &dyn DriftField, grid: GridSpec, cfg: SolverConfig) -> Result<SolutionField> {
    solve(field, grid, SolverConfig { method: Method::AsrEndpoint, ..cfg })
}

/// `|b + ∇U| / |b| - 1` at accepted points outside the seeded patch.
pub fn norm_identity_violations(sol: &SolutionField, field: &dyn DriftField) -> Vec<f64> {
    sol.order
        .iter()
        .filter(|&&i| !sol.records[i].fixed)
        .filter_map(|&i| {
            let b = field.drift(sol.grid.point(i));
            let nb = norm(b);
            (nb > 0.0).then(|| (norm(add(b, sol.grad(i))) / nb - 1.0).abs())
        })
        .collect()
}
