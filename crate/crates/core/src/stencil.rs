//! Angle-binned update neighbourhoods.
//!
//! A stencil built at angle `θ` is the shape of the forward stencil of a
//! point whose drift points along `-θ`: it leans towards `θ`. The offsets
//! stored in a [`StencilBank`] are reversed stencils, the point reflection
//! of that shape, so they lean along the drift. A point `x` updates
//! `x + o` for every stored offset `o`.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, polar_angle, scale, Vec2};

const UNIT_TOL: f64 = 1e-9;

fn unit(v: Vec2, what: &str) -> Result<Vec2> {
    let n = norm(v);
    if (n - 1.0).abs() <= UNIT_TOL {
        Ok(scale(1.0 / n, v))
    } else {
        Err(Error::InvalidArgument(format!("{what} = {v:?} is not a unit vector")))
    }
}

/// Acuteness of two unit stencil directions with respect to the geometric
/// action at a point with unit drift `b_hat`:
/// `u·v ≥ max(-u·b̂, -v·b̂, 0)`.
pub fn acute(u: Vec2, v: Vec2, b_hat: Vec2) -> Result<bool> {
    let u = unit(u, "u")?;
    let v = unit(v, "v")?;
    let b = unit(b_hat, "b_hat")?;
    let uv = dot(u, v);
    Ok(uv >= (-dot(u, b)).max(-dot(v, b)).max(0.0))
}

/// Acuteness of two (not necessarily unit) vectors for the asymmetric norm
/// `F(w) = |w| - α b̂·w`. With `b_hat = None` the norm is Euclidean.
pub fn f_alpha_acute(u: Vec2, v: Vec2, b_hat: Option<Vec2>, alpha: f64) -> bool {
    let uh = scale(1.0 / norm(u), u);
    let vh = scale(1.0 / norm(v), v);
    let uv = dot(uh, vh);
    match b_hat {
        None => uv >= 0.0,
        Some(b) => uv >= alpha * dot(uh, b) && uv >= alpha * dot(vh, b),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversedStencil {
    pub theta: f64,
    pub offsets: Vec<[i64; 2]>,
}

const EIGHT: [[i64; 2]; 8] = [
    [1, 0],
    [1, 1],
    [0, 1],
    [-1, 1],
    [-1, 0],
    [-1, -1],
    [0, -1],
    [1, -1],
];

fn push_unique(out: &mut Vec<[i64; 2]>, p: [i64; 2]) {
    if p != [0, 0] && !out.contains(&p) {
        out.push(p);
    }
}

/// Rays at `θ ± π/2^k`, `k = 2..=k_cutoff`, sampled at `n·d_gap` for
/// `n = 1..k`, snapped to the nearest integer pair and merged with the
/// 8-point neighbourhood.
pub fn build_reversed_stencil(theta: f64, k_cutoff: u32, d_gap: u32) -> Result<ReversedStencil> {
    if k_cutoff < 2 {
        return Err(Error::InvalidArgument(format!("k_cutoff must be ≥ 2, got {k_cutoff}")));
    }
    if d_gap < 1 {
        return Err(Error::InvalidArgument("d_gap must be ≥ 1".into()));
    }
    let theta = theta.rem_euclid(TAU);
    let mut offsets: Vec<[i64; 2]> = EIGHT.to_vec();
    for k in 2..=k_cutoff {
        let da = PI / 2f64.powi(k as i32);
        for sign in [1.0, -1.0] {
            let a = theta + sign * da;
            for n in 1..k {
                let r = (n * d_gap) as f64;
                push_unique(&mut offsets, [(r * a.cos()).round() as i64, (r * a.sin()).round() as i64]);
            }
        }
    }
    Ok(ReversedStencil { theta, offsets })
}

/// Refinement of the diamond `(1,0), (0,1), (-1,0), (0,-1)` by inserting
/// sums of adjacent directions until every adjacent pair is acute for
/// `F(w) = |w| - α b̂·w`. Directions come back in counter-clockwise order
/// starting at `(1,0)`. They are offsets `y - x` from a stencil point `x` to
/// the point `y` it serves, so refinement concentrates around `b̂`.
pub fn asr_refine(b_hat: Option<Vec2>, alpha: f64) -> Result<Vec<[i64; 2]>> {
    if let Some(b) = b_hat {
        unit(b, "b_hat")?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
        }
    }
    const MAX_STEPS: usize = 1_000_000;
    const MAX_LEN: i64 = 1 << 20;
    let to_f = |p: [i64; 2]| [p[0] as f64, p[1] as f64];
    let mut done: Vec<[i64; 2]> = vec![[1, 0]];
    let mut todo: Vec<[i64; 2]> = vec![[1, 0], [0, -1], [-1, 0], [0, 1]];
    let mut steps = 0;
    while let Some(&v) = todo.last() {
        let u = *done.last().unwrap();
        if f_alpha_acute(to_f(u), to_f(v), b_hat, alpha) {
            todo.pop();
            done.push(v);
        } else {
            let w = [u[0] + v[0], u[1] + v[1]];
            steps += 1;
            if steps > MAX_STEPS || w[0].abs().max(w[1].abs()) > MAX_LEN {
                return Err(Error::StencilRefinement { depth: steps, u, v });
            }
            todo.push(w);
        }
    }
    done.pop();
    Ok(done)
}

/// ASR stencil for a bin angle `θ`, which is the angle of `-b`.
pub fn build_asr_stencil(theta: f64, alpha: f64) -> Result<ReversedStencil> {
    let theta = theta.rem_euclid(TAU);
    let b_hat = [-theta.cos(), -theta.sin()];
    Ok(ReversedStencil {
        theta,
        offsets: asr_refine(Some(b_hat), alpha)?,
    })
}

/// All nonzero offsets within Euclidean distance `radius`.
pub fn disk_stencil(radius: f64) -> Vec<[i64; 2]> {
    let r = radius.floor() as i64;
    let mut out = Vec::new();
    for j in -r..=r {
        for i in -r..=r {
            if (i, j) != (0, 0) && ((i * i + j * j) as f64) <= radius * radius + 1e-12 {
                out.push([i, j]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StencilKind {
    /// Dense oblong stencils: `k_cutoff`, `d_gap`.
    Oblong { k_cutoff: u32, d_gap: u32 },
    /// Refined diamonds with relaxation `α`.
    Asr { alpha: f64 },
}

/// `n_bins` reversed stencils at `θ_k = 2πk / n_bins`.
#[derive(Debug, Clone)]
pub struct StencilBank {
    pub stencils: Vec<ReversedStencil>,
}

impl StencilBank {
    pub fn new(n_bins: usize, kind: StencilKind) -> Result<Self> {
        if n_bins == 0 {
            return Err(Error::InvalidArgument("n_bins must be positive".into()));
        }
        let stencils = (0..n_bins)
            .into_par_iter()
            .map(|k| {
                let theta = TAU * k as f64 / n_bins as f64;
                match kind {
                    StencilKind::Oblong { k_cutoff, d_gap } => {
                        let s = build_reversed_stencil(theta + PI, k_cutoff, d_gap)?;
                        Ok(ReversedStencil { theta, offsets: s.offsets })
                    }
                    StencilKind::Asr { alpha } => build_asr_stencil(theta, alpha),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { stencils })
    }

    pub fn n_bins(&self) -> usize {
        self.stencils.len()
    }

    /// Bin whose interval `(θ_k - π/N, θ_k + π/N]` holds the angle of `-b`.
    pub fn bin_index(&self, b: Vec2) -> Option<usize> {
        if b[0] == 0.0 && b[1] == 0.0 {
            return None;
        }
        let n = self.n_bins();
        let w = TAU / n as f64;
        let phi = polar_angle([-b[0], -b[1]]);
        let k = (phi / w - 0.5).ceil() as i64;
        Some(k.rem_euclid(n as i64) as usize)
    }

    pub fn bin_lookup(&self, b: Vec2, at: Vec2) -> Result<&ReversedStencil> {
        self.bin_index(b)
            .map(|k| &self.stencils[k])
            .ok_or(Error::DegenerateDrift { x: at[0], y: at[1] })
    }
}
