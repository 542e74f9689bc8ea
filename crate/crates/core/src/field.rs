//! Drift fields `b(x)` of the SDE `dX = b(X) dt + sqrt(eps) dW`, their
//! derivatives, and the anisotropic slowness of the geometric action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Jet;
use crate::linalg::{add, dot, norm, scale, Mat2, Tensor2, Vec2};

/// A smooth planar drift field with a stable point attractor.
///
/// Implementors must be pure functions of position. `jacobian` and
/// `second_derivative` default to central differences of `drift`; the
/// built-in fields override them with closed forms.
pub trait DriftField: Send + Sync {
    fn drift(&self, p: Vec2) -> Vec2;

    /// `Db[i][j] = ∂b_i/∂x_j`.
    fn jacobian(&self, p: Vec2) -> Mat2 {
        fd_jacobian(|q| self.drift(q), p)
    }

    /// `D2b[i][j][k] = ∂²b_i/∂x_j∂x_k`.
    fn second_derivative(&self, p: Vec2) -> Tensor2 {
        fd_second_derivative(|q| self.drift(q), p)
    }

    /// The attractor the quasipotential is measured from.
    fn attractor(&self) -> Vec2;

    /// Closed-form quasipotential and gradient, when one is known.
    fn exact(&self, _p: Vec2) -> Option<Jet> {
        None
    }

    fn name(&self) -> String;
}

pub(crate) fn fd_step(p: Vec2) -> f64 {
    1e-5 * (1.0 + norm(p))
}

pub fn fd_jacobian<F: Fn(Vec2) -> Vec2>(b: F, p: Vec2) -> Mat2 {
    let s = fd_step(p);
    let mut jac = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut pp = p;
        let mut pm = p;
        pp[j] += s;
        pm[j] -= s;
        let (bp, bm) = (b(pp), b(pm));
        for i in 0..2 {
            jac[i][j] = (bp[i] - bm[i]) / (2.0 * s);
        }
    }
    jac
}

pub fn fd_second_derivative<F: Fn(Vec2) -> Vec2>(b: F, p: Vec2) -> Tensor2 {
    // Wider step than the Jacobian: a second difference loses twice the digits.
    let s = 1e-4 * (1.0 + norm(p));
    let shifted = |dj: [f64; 2]| b([p[0] + dj[0], p[1] + dj[1]]);
    let mut t = [[[0.0; 2]; 2]; 2];
    let b0 = b(p);
    for j in 0..2 {
        for k in j..2 {
            let mut ej = [0.0; 2];
            let mut ek = [0.0; 2];
            ej[j] = s;
            ek[k] = s;
            let v = if j == k {
                let bp = shifted(ej);
                let bm = shifted(scale(-1.0, ej));
                [
                    (bp[0] - 2.0 * b0[0] + bm[0]) / (s * s),
                    (bp[1] - 2.0 * b0[1] + bm[1]) / (s * s),
                ]
            } else {
                let pp = shifted(add(ej, ek));
                let pm = shifted([ej[0] - ek[0], ej[1] - ek[1]]);
                let mp = shifted([ek[0] - ej[0], ek[1] - ej[1]]);
                let mm = shifted(scale(-1.0, add(ej, ek)));
                [
                    (pp[0] - pm[0] - mp[0] + mm[0]) / (4.0 * s * s),
                    (pp[1] - pm[1] - mp[1] + mm[1]) / (4.0 * s * s),
                ]
            };
            for i in 0..2 {
                t[i][j][k] = v[i];
                t[i][k][j] = v[i];
            }
        }
    }
    t
}

/// Anisotropic slowness `s(x, v) = |b(x)| - b(x)·v/|v|`.
pub fn slowness(field: &dyn DriftField, x: Vec2, v: Vec2) -> Result<f64> {
    let nv = norm(v);
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::InvalidArgument(
            "slowness needs a nonzero direction".into(),
        ));
    }
    let b = field.drift(x);
    Ok((norm(b) - dot(b, v) / nv).max(0.0))
}

/// Closed-form solution at `x`, if the field has one.
pub fn exact_solution(field: &dyn DriftField, x: Vec2) -> Option<Jet> {
    field.exact(x)
}

/// Rotational component `l = b + ½∇U` of the orthogonal decomposition.
pub fn rotational_component(field: &dyn DriftField, x: Vec2, grad_u: Vec2) -> Vec2 {
    add(field.drift(x), scale(0.5, grad_u))
}

/// `b = -½(4x + 3x², 2y) + (a/2)(-2y, 4x + 3x²)`.
///
/// Attractor at the origin, saddle at `(-4/3, 0)`, and for every `a` the
/// quasipotential in the basin is `U = 2x² + x³ + y²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationalField {
    pub a: f64,
}

impl RotationalField {
    pub fn new(a: f64) -> Self {
        Self { a }
    }
}

impl DriftField for RotationalField {
    fn drift(&self, p: Vec2) -> Vec2 {
        let [x, y] = p;
        let g = 4.0 * x + 3.0 * x * x;
        [-0.5 * g - self.a * y, -y + 0.5 * self.a * g]
    }

    fn jacobian(&self, p: Vec2) -> Mat2 {
        let gx = 4.0 + 6.0 * p[0];
        [[-0.5 * gx, -self.a], [0.5 * self.a * gx, -1.0]]
    }

    fn second_derivative(&self, _p: Vec2) -> Tensor2 {
        let mut t = [[[0.0; 2]; 2]; 2];
        t[0][0][0] = -3.0;
        t[1][0][0] = 3.0 * self.a;
        t
    }

    fn attractor(&self) -> Vec2 {
        [0.0, 0.0]
    }

    fn exact(&self, p: Vec2) -> Option<Jet> {
        let [x, y] = p;
        Some(Jet {
            u: 2.0 * x * x + x * x * x + y * y,
            g: [4.0 * x + 3.0 * x * x, 2.0 * y],
        })
    }

    fn name(&self) -> String {
        format!("rotational(a={})", self.a)
    }
}

/// Which stable equilibrium of the Maier–Stein field is the reference attractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Well {
    #[default]
    Left,
    Right,
}

/// Maier–Stein drift `b = (x - x³ - βxy², -(1 + x²)y)`.
///
/// Stable equilibria at `(±1, 0)`, saddle at the origin. For `β = 1` the
/// field is `-∇V` with `V = x⁴/4 - x²/2 + x²y²/2 + y²/2 + 1/4`, and the
/// quasipotential of either well is `2V` inside that well's basin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaierSteinField {
    pub beta: f64,
    #[serde(default)]
    pub well: Well,
}

impl MaierSteinField {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            well: Well::Left,
        }
    }

    pub fn potential(p: Vec2) -> f64 {
        let [x, y] = p;
        0.25 * x.powi(4) - 0.5 * x * x + 0.5 * x * x * y * y + 0.5 * y * y + 0.25
    }

    pub fn saddle(&self) -> Vec2 {
        [0.0, 0.0]
    }
}

impl DriftField for MaierSteinField {
    fn drift(&self, p: Vec2) -> Vec2 {
        let [x, y] = p;
        [x - x * x * x - self.beta * x * y * y, -(1.0 + x * x) * y]
    }

    fn jacobian(&self, p: Vec2) -> Mat2 {
        let [x, y] = p;
        [
            [1.0 - 3.0 * x * x - self.beta * y * y, -2.0 * self.beta * x * y],
            [-2.0 * x * y, -(1.0 + x * x)],
        ]
    }

    fn second_derivative(&self, p: Vec2) -> Tensor2 {
        let [x, y] = p;
        let b = self.beta;
        [
            [[-6.0 * x, -2.0 * b * y], [-2.0 * b * y, -2.0 * b * x]],
            [[-2.0 * y, -2.0 * x], [-2.0 * x, 0.0]],
        ]
    }

    fn attractor(&self) -> Vec2 {
        match self.well {
            Well::Left => [-1.0, 0.0],
            Well::Right => [1.0, 0.0],
        }
    }

    fn exact(&self, p: Vec2) -> Option<Jet> {
        if self.beta != 1.0 {
            return None;
        }
        let [x, y] = p;
        Some(Jet {
            u: 2.0 * Self::potential(p),
            g: [
                2.0 * (x * x * x - x + x * y * y),
                2.0 * (x * x * y + y),
            ],
        })
    }

    fn name(&self) -> String {
        format!("maier-stein(beta={})", self.beta)
    }
}

/// Linear drift `b = J (x - x0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearField {
    pub jacobian: Mat2,
    pub center: Vec2,
}

impl DriftField for LinearField {
    fn drift(&self, p: Vec2) -> Vec2 {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        crate::linalg::mat_vec(&self.jacobian, d)
    }

    fn jacobian(&self, _p: Vec2) -> Mat2 {
        self.jacobian
    }

    fn second_derivative(&self, _p: Vec2) -> Tensor2 {
        [[[0.0; 2]; 2]; 2]
    }

    fn attractor(&self) -> Vec2 {
        self.center
    }

    fn name(&self) -> String {
        "linear".into()
    }
}

/// A user-supplied drift closure; derivatives come from central differences.
pub struct ClosureField<F> {
    pub f: F,
    pub attractor: Vec2,
    pub label: String,
}

impl<F> ClosureField<F>
where
    F: Fn(Vec2) -> Vec2 + Send + Sync,
{
    pub fn new(label: impl Into<String>, attractor: Vec2, f: F) -> Self {
        Self {
            f,
            attractor,
            label: label.into(),
        }
    }
}

impl<F> DriftField for ClosureField<F>
where
    F: Fn(Vec2) -> Vec2 + Send + Sync,
{
    fn drift(&self, p: Vec2) -> Vec2 {
        (self.f)(p)
    }

    fn attractor(&self) -> Vec2 {
        self.attractor
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Built-in fields selectable by name, as used in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Rotational {
        #[serde(default = "default_a")]
        a: f64,
    },
    MaierStein {
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        well: Well,
    },
    Linear {
        jacobian: Mat2,
        #[serde(default)]
        center: Vec2,
    },
}

fn default_a() -> f64 {
    1.0
}

fn default_beta() -> f64 {
    3.0
}

impl FieldSpec {
    pub const NAMES: [&'static str; 3] = ["rotational", "maier-stein", "linear"];

    pub fn build(&self) -> Box<dyn DriftField> {
        match *self {
            FieldSpec::Rotational { a } => Box::new(RotationalField::new(a)),
            FieldSpec::MaierStein { beta, well } => Box::new(MaierSteinField { beta, well }),
            FieldSpec::Linear { jacobian, center } => Box::new(LinearField { jacobian, center }),
        }
    }
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Rotational { a: 1.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rotational_drift_at_half_half() {
        let f = RotationalField::new(1.0);
        let b = f.drift([0.5, 0.5]);
        assert!(close(b[0], -1.875, 1e-15) && close(b[1], 0.875, 1e-15));
    }

    #[test]
    fn slowness_aligned_and_antialigned() {
        let f = RotationalField::new(1.0);
        let x = [0.5, 0.5];
        let b = f.drift(x);
        assert!(slowness(&f, x, b).unwrap().abs() < 1e-15);
        let s = slowness(&f, x, scale(-1.0, b)).unwrap();
        assert!(close(s, 2.0 * norm(b), 1e-14));
        assert!(slowness(&f, x, [0.0, 0.0]).is_err());
    }

    #[test]
    fn exact_solution_values() {
        let f = RotationalField::new(1.0);
        let j = exact_solution(&f, [0.5, 0.5]).unwrap();
        assert!(close(j.u, 0.875, 1e-15));
        assert!(close(j.g[0], 2.75, 1e-15) && close(j.g[1], 1.0, 1e-15));
        let j0 = exact_solution(&f, [0.0, 0.0]).unwrap();
        assert_eq!((j0.u, j0.g), (0.0, [0.0, 0.0]));

        let ms = MaierSteinField::new(1.0);
        assert!(close(ms.exact([0.0, 0.0]).unwrap().u, 0.5, 1e-15));
        assert!(MaierSteinField::new(3.0).exact([0.0, 0.0]).is_none());
    }

    #[test]
    fn rotational_component_examples() {
        let f = RotationalField::new(1.0);
        let x = [0.5, 0.5];
        let g = f.exact(x).unwrap().g;
        let l = rotational_component(&f, x, g);
        assert!(close(l[0], -0.5, 1e-15) && close(l[1], 1.375, 1e-15));
        assert!(dot(l, g).abs() < 1e-14);

        let ms = MaierSteinField::new(1.0);
        let y = [-0.4, 0.3];
        let l = rotational_component(&ms, y, ms.exact(y).unwrap().g);
        assert!(norm(l) < 1e-15);

        let f0 = RotationalField::new(0.0);
        let p = [0.3, 0.0];
        assert!(norm(rotational_component(&f0, p, f0.exact(p).unwrap().g)) < 1e-15);
    }

    fn check_derivatives(f: &dyn DriftField, p: Vec2) {
        let jac = f.jacobian(p);
        let fd = fd_jacobian(|q| f.drift(q), p);
        let scale_j = jac.iter().flatten().fold(1e-3f64, |m, v| m.max(v.abs()));
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (jac[i][j] - fd[i][j]).abs() < 1e-6 * scale_j,
                    "{} Db[{i}][{j}] at {p:?}: {} vs {}",
                    f.name(),
                    jac[i][j],
                    fd[i][j]
                );
            }
        }
        let t = f.second_derivative(p);
        let fdt = fd_jacobian_of_jacobian(f, p);
        let scale_t = t.iter().flatten().flatten().fold(1e-3f64, |m, v| m.max(v.abs()));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(t[i][j][k], t[i][k][j]);
                    assert!(
                        (t[i][j][k] - fdt[i][j][k]).abs() < 1e-6 * scale_t,
                        "{} D2b[{i}][{j}][{k}]",
                        f.name()
                    );
                }
            }
        }
    }

    fn fd_jacobian_of_jacobian(f: &dyn DriftField, p: Vec2) -> Tensor2 {
        let s = 1e-5;
        let mut t = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[k] += s;
            pm[k] -= s;
            let (jp, jm) = (f.jacobian(pp), f.jacobian(pm));
            for i in 0..2 {
                for j in 0..2 {
                    t[i][j][k] = (jp[i][j] - jm[i][j]) / (2.0 * s);
                }
            }
        }
        t
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fields: Vec<Box<dyn DriftField>> = vec![
            Box::new(RotationalField::new(0.1)),
            Box::new(RotationalField::new(10.0)),
            Box::new(MaierSteinField::new(3.0)),
            Box::new(MaierSteinField::new(10.0)),
        ];
        for f in &fields {
            for _ in 0..200 {
                let p = [rng.gen_range(-1.5..1.5), rng.gen_range(-1.0..1.0)];
                check_derivatives(f.as_ref(), p);
            }
        }
    }

    #[test]
    fn closure_field_falls_back_to_differences() {
        let ms = MaierSteinField::new(3.0);
        let cf = ClosureField::new("ms", [-1.0, 0.0], move |p| ms.drift(p));
        let p = [-0.3, 0.4];
        let (a, b) = (cf.jacobian(p), ms.jacobian(p));
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-8);
            }
        }
        let (a, b) = (cf.second_derivative(p), ms.second_derivative(p));
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!((a[i][j][k] - b[i][j][k]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn hjb_residual_of_exact_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fields: Vec<Box<dyn DriftField>> = vec![
            Box::new(RotationalField::new(0.1)),
            Box::new(RotationalField::new(1.0)),
            Box::new(RotationalField::new(10.0)),
            Box::new(MaierSteinField::new(1.0)),
        ];
        for f in &fields {
            for _ in 0..1000 {
                // both basins contain [-1, 0] x [-1, 1] for these fields
                let p = [rng.gen_range(-1.0..0.0), rng.gen_range(-1.0..1.0)];
                let j = f.exact(p).unwrap();
                let r = dot(f.drift(p), j.g) + 0.5 * dot(j.g, j.g);
                assert!(r.abs() < 1e-12, "{}: residual {r} at {p:?}", f.name());
            }
        }
    }

    #[test]
    fn field_spec_by_name() {
        let spec: FieldSpec =
            serde_json::from_str(r#"{"name": "maier-stein", "beta": 10.0}"#).unwrap();
        assert_eq!(
            spec,
            FieldSpec::MaierStein {
                beta: 10.0,
                well: Well::Left
            }
        );
        assert_eq!(spec.build().attractor(), [-1.0, 0.0]);
        assert!(serde_json::from_str::<FieldSpec>(r#"{"name": "lorenz"}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn slowness_is_scale_invariant(x in -1.0f64..1.0, y in -1.0f64..1.0,
                                       vx in -1.0f64..1.0, vy in -1.0f64..1.0,
                                       c in 1e-3f64..1e3) {
            proptest::prop_assume!(vx.hypot(vy) > 1e-6);
            let f = RotationalField::new(1.0);
            let s1 = slowness(&f, [x, y], [vx, vy]).unwrap();
            let s2 = slowness(&f, [x, y], [c * vx, c * vy]).unwrap();
            proptest::prop_assert!((s1 - s2).abs() <= 1e-12 * (1.0 + s1));
            let bn = norm(f.drift([x, y]));
            proptest::prop_assert!(s1 >= 0.0 && s1 <= 2.0 * bn + 1e-12);
        }
    }
}
