//! Compressed-row matrices and the iterative solvers used by the
//! transition-path module.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds from per-row `(column, value)` lists; columns are sorted and
    /// duplicates summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, data }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[i]..self.indptr[i + 1]).map(move |k| (self.indices[k], self.data[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.indices[self.indptr[i]..self.indptr[i + 1]];
        match r.binary_search(&j) {
            Ok(k) => self.data[self.indptr[i] + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            *yi = s;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Csr::from_rows(rows)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|e| e.1).sum()).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Incomplete LU factorization with zero fill-in.
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                if lu.indices[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::InvalidArgument(format!("ILU(0): missing diagonal in row {i}")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (s, e) = (lu.indptr[i], lu.indptr[i + 1]);
            for k in s..e {
                pos[lu.indices[k]] = k;
            }
            for k in s..e {
                let j = lu.indices[k];
                if j >= i {
                    break;
                }
                let piv = lu.data[diag[j]];
                if piv == 0.0 {
                    return Err(Error::InvalidArgument("ILU(0): zero pivot".into()));
                }
                let f = lu.data[k] / piv;
                lu.data[k] = f;
                for kk in diag[j] + 1..lu.indptr[j + 1] {
                    let p = pos[lu.indices[kk]];
                    if p != usize::MAX {
                        lu.data[p] -= f * lu.data[kk];
                    }
                }
            }
            for k in s..e {
                pos[lu.indices[k]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = r[i];
            for k in lu.indptr[i]..self.diag[i] {
                s -= lu.data[k] * z[lu.indices[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.indptr[i + 1] {
                s -= lu.data[k] * z[lu.indices[k]];
            }
            z[i] = s / lu.data[self.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Right-preconditioned BiCGSTAB with ILU(0). Stops when
/// `|b - Ax| ≤ tol |b|`.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<SolveReport> {
    let n = a.n;
    let m = Ilu0::new(a)?;
    let bn = norm2(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveReport { iterations: 0, relative_residual: 0.0 });
    }
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ph = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut sh = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm2(&r) / bn;
    for it in 1..=max_iter {
        if res <= tol {
            return Ok(SolveReport { iterations: it - 1, relative_residual: res });
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        m.apply(&p, &mut ph);
        a.matvec(&ph, &mut v);
        let d = dot(&r0, &v);
        if d == 0.0 {
            break;
        }
        alpha = rho / d;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bn <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            // recompute the true residual
            a.matvec(x, &mut t);
            let res = t.iter().zip(b).map(|(ti, bi)| (bi - ti).powi(2)).sum::<f64>().sqrt() / bn;
            if res <= tol {
                return Ok(SolveReport { iterations: it, relative_residual: res });
            }
            r.iter_mut().zip(t.iter().zip(b)).for_each(|(ri, (ti, bi))| *ri = bi - ti);
            continue;
        }
        m.apply(&s, &mut sh);
        a.matvec(&sh, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / bn;
        if it % 50 == 0 {
            // guard against drift of the recursive residual
            a.matvec(x, &mut t);
            r.iter_mut().zip(t.iter().zip(b)).for_each(|(ri, (ti, bi))| *ri = bi - ti);
            res = norm2(&r) / bn;
        }
    }
    a.matvec(x, &mut t);
    let res = t.iter().zip(b).map(|(ti, bi)| (bi - ti).powi(2)).sum::<f64>().sqrt() / bn;
    if res <= tol {
        return Ok(SolveReport { iterations: max_iter, relative_residual: res });
    }
    Err(Error::NoConvergence { method: "bicgstab", iterations: max_iter, residual: res })
}

/// Gauss–Seidel sweeps until the relative residual drops below `tol`.
pub fn gauss_seidel(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_sweeps: usize) -> Result<SolveReport> {
    let bn = norm2(b).max(f64::MIN_POSITIVE);
    let mut r = vec![0.0; a.n];
    for sweep in 1..=max_sweeps {
        for i in 0..a.n {
            let mut s = b[i];
            let mut d = 0.0;
            for (j, v) in a.row(i) {
                if j == i {
                    d = v;
                } else {
                    s -= v * x[j];
                }
            }
            x[i] = s / d;
        }
        if sweep % 10 == 0 || sweep == max_sweeps {
            a.matvec(x, &mut r);
            let res = r.iter().zip(b).map(|(ri, bi)| (bi - ri).powi(2)).sum::<f64>().sqrt() / bn;
            if res <= tol {
                return Ok(SolveReport { iterations: sweep, relative_residual: res });
            }
            if sweep == max_sweeps {
                return Err(Error::NoConvergence { method: "gauss-seidel", iterations: sweep, residual: res });
            }
        }
    }
    unreachable!()
}

/// Dense Gaussian elimination with partial pivoting; for small oracles.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &k| a[i][c].abs().total_cmp(&a[k][c].abs()))?;
        if a[p][c] == 0.0 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        let (top, rest) = a.split_at_mut(c + 1);
        let pivot_row = &top[c];
        for (off, row) in rest.iter_mut().enumerate() {
            let f = row[c] / pivot_row[c];
            if f != 0.0 {
                for k in c..n {
                    row[k] -= f * pivot_row[k];
                }
                b[c + 1 + off] -= f * b[c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in r + 1..n {
            s -= a[r][k] * x[k];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}
