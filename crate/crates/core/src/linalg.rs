//! Fixed-size 2D helpers. Points and vectors are plain `[f64; 2]`.

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];
/// Second-derivative tensor, `t[i][j][k] = d²f_i / dx_j dx_k`.
pub type Tensor2 = [[[f64; 2]; 2]; 2];

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: Vec2) -> Vec2 {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Counter-clockwise rotation by 90 degrees.
#[inline]
pub fn rot90(a: Vec2) -> Vec2 {
    [-a[1], a[0]]
}

#[inline]
pub fn lerp(a: Vec2, b: Vec2, t: f64) -> Vec2 {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

#[inline]
pub fn mat_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

#[inline]
pub fn det(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[inline]
pub fn trace(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn inverse(m: &Mat2) -> Option<Mat2> {
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    Some([[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]])
}

/// Eigenvalues of a 2x2 matrix as `(re, im)` pairs, larger real part first.
pub fn eigenvalues(m: &Mat2) -> [(f64, f64); 2] {
    let t = trace(m);
    let d = det(m);
    let disc = 0.25 * t * t - d;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(0.5 * t + s, 0.0), (0.5 * t - s, 0.0)]
    } else {
        let s = (-disc).sqrt();
        [(0.5 * t, s), (0.5 * t, -s)]
    }
}

/// Angle in `[0, 2π)`.
pub fn polar_angle(v: Vec2) -> f64 {
    let a = v[1].atan2(v[0]);
    if a < 0.0 {
        a + std::f64::consts::TAU
    } else {
        a
    }
}
