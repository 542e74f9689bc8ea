//! Second-order forward-mode numbers: value, gradient and Hessian with
//! respect to `N` independent variables.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hd<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Hd<N> {
    #[inline]
    pub fn cst(v: f64) -> Self {
        Self {
            v,
            g: [0.0; N],
            h: [[0.0; N]; N],
        }
    }

    /// The `i`-th independent variable at value `v`.
    #[inline]
    pub fn var(v: f64, i: usize) -> Self {
        let mut s = Self::cst(v);
        s.g[i] = 1.0;
        s
    }

    /// `f(self)` given `f`, `f'` and `f''` at the value.
    #[inline]
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Self {
        let mut out = Self::cst(f0);
        for i in 0..N {
            out.g[i] = f1 * self.g[i];
            for j in i..N {
                let v = f1 * self.h[i][j] + f2 * self.g[i] * self.g[j];
                out.h[i][j] = v;
                out.h[j][i] = v;
            }
        }
        out
    }

    pub fn is_constant(&self) -> bool {
        self.g.iter().all(|&x| x == 0.0) && self.h.iter().flatten().all(|&x| x == 0.0)
    }

    /// Square root. `None` at zero unless the argument is a constant.
    #[inline]
    pub fn sqrt(&self) -> Option<Self> {
        if self.v > 0.0 {
            let s = self.v.sqrt();
            Some(self.chain(s, 0.5 / s, -0.25 / (s * self.v)))
        } else if self.v == 0.0 && self.is_constant() {
            Some(Self::cst(0.0))
        } else {
            None
        }
    }

    #[inline]
    pub fn recip(&self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn all_finite(&self) -> bool {
        self.v.is_finite()
            && self.g.iter().all(|x| x.is_finite())
            && self.h.iter().flatten().all(|x| x.is_finite())
    }
}

impl<const N: usize> Add for Hd<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v += o.v;
        for i in 0..N {
            self.g[i] += o.g[i];
            for j in 0..N {
                self.h[i][j] += o.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Sub for Hd<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v -= o.v;
        for i in 0..N {
            self.g[i] -= o.g[i];
            for j in 0..N {
                self.h[i][j] -= o.h[i][j];
            }
        }
        self
    }
}

impl<const N: usize> Neg for Hd<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl<const N: usize> Mul for Hd<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut out = Self::cst(self.v * o.v);
        for i in 0..N {
            out.g[i] = self.v * o.g[i] + o.v * self.g[i];
            // Hessians stay symmetric, so fill one triangle and mirror
            for j in i..N {
                let v = self.v * o.h[i][j] + o.v * self.h[i][j] + self.g[i] * o.g[j] + self.g[j] * o.g[i];
                out.h[i][j] = v;
                out.h[j][i] = v;
            }
        }
        out
    }
}

impl<const N: usize> Div for Hd<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        self * o.recip()
    }
}

impl<const N: usize> Add<f64> for Hd<N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: f64) -> Self {
        self.v += o;
        self
    }
}

impl<const N: usize> Sub<f64> for Hd<N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: f64) -> Self {
        self.v -= o;
        self
    }
}

impl<const N: usize> Mul<f64> for Hd<N> {
    type Output = Self;
    #[inline]
    fn mul(mut self, o: f64) -> Self {
        self.v *= o;
        for i in 0..N {
            self.g[i] *= o;
            for j in 0..N {
                self.h[i][j] *= o;
            }
        }
        self
    }
}

impl<const N: usize> Mul<Hd<N>> for f64 {
    type Output = Hd<N>;
    #[inline]
    fn mul(self, o: Hd<N>) -> Hd<N> {
        o * self
    }
}

impl<const N: usize> Add<Hd<N>> for f64 {
    type Output = Hd<N>;
    #[inline]
    fn add(self, o: Hd<N>) -> Hd<N> {
        o + self
    }
}

impl<const N: usize> Sub<Hd<N>> for f64 {
    type Output = Hd<N>;
    #[inline]
    fn sub(self, o: Hd<N>) -> Hd<N> {
        -o + self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_and_sqrt() {
        // f(x, y) = sqrt(x² y + 1) at (1, 2)
        let x = Hd::<2>::var(1.0, 0);
        let y = Hd::<2>::var(2.0, 1);
        let f = (x * x * y + 1.0).sqrt().unwrap();
        let s = 3f64.sqrt();
        assert!((f.v - s).abs() < 1e-15);
        // df/dx = xy/s, df/dy = x²/(2s)
        assert!((f.g[0] - 2.0 / s).abs() < 1e-15);
        assert!((f.g[1] - 0.5 / s).abs() < 1e-15);
        // d²f/dxdy = x/s - x³y/(2 s³)
        let fxy = 1.0 / s - 1.0 / (s * s * s);
        assert!((f.h[0][1] - fxy).abs() < 1e-14);
        assert_eq!(f.h[0][1], f.h[1][0]);
    }

    #[test]
    fn sqrt_at_zero() {
        assert_eq!(Hd::<1>::cst(0.0).sqrt().unwrap().v, 0.0);
        assert!(Hd::<1>::var(0.0, 0).sqrt().is_none());
    }

    #[test]
    fn quotient() {
        let x = Hd::<1>::var(2.0, 0);
        let f = (x * x).recip().recip() - x / Hd::cst(1.0);
        assert!((f.v - 2.0).abs() < 1e-15);
        assert!((f.g[0] - 3.0).abs() < 1e-15);
        assert!((f.h[0][0] - 2.0).abs() < 1e-15);
    }
}
