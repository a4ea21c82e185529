//! Sparse rectangular systems and an LSQR solver for weighted linear
//! least squares.
//!
//! Rows are accumulated with possibly repeated column indices (stencils
//! overlap at the center node); the builder merges duplicates. The solver
//! is the Paige-Saunders bidiagonalization method, run on a column-scaled
//! system so that the wildly different magnitudes of Carleman-weighted
//! residual rows and regularization rows do not poison the conditioning.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// y += A x
    pub fn mul_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for row in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[row]..self.indptr[row + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[row] += acc;
        }
    }

    /// x += A^T y
    pub fn tr_mul_add(&self, y: &[f64], x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for row in 0..self.nrows {
            let yr = y[row];
            if yr == 0.0 {
                continue;
            }
            for k in self.indptr[row]..self.indptr[row + 1] {
                x[self.indices[k]] += self.data[k] * yr;
            }
        }
    }

    pub fn col_norms(&self) -> Vec<f64> {
        let mut n2 = vec![0.0; self.ncols];
        for k in 0..self.data.len() {
            n2[self.indices[k]] += self.data[k] * self.data[k];
        }
        n2.iter().map(|v| v.sqrt()).collect()
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }
}

/// Incremental CSR builder; rows whose coefficients all vanish are dropped.
#[derive(Debug, Default)]
pub struct SystemBuilder {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl SystemBuilder {
    pub fn new() -> Self {
        Self {
            indptr: vec![0],
            ..Default::default()
        }
    }

    /// Append the row `sum coeff * x[col] = rhs`; duplicate columns are
    /// merged. Returns false when the row had no nonzero coefficient and
    /// was dropped (a fully eliminated row).
    pub fn add_row(&mut self, entries: &[(usize, f64)], rhs: f64) -> bool {
        self.scratch.clear();
        self.scratch.extend(entries.iter().filter(|(_, c)| *c != 0.0));
        self.scratch.sort_unstable_by_key(|&(col, _)| col);
        let mut any = false;
        let mut k = 0;
        while k < self.scratch.len() {
            let col = self.scratch[k].0;
            let mut c = 0.0;
            while k < self.scratch.len() && self.scratch[k].0 == col {
                c += self.scratch[k].1;
                k += 1;
            }
            if c != 0.0 {
                self.indices.push(col);
                self.data.push(c);
                any = true;
            }
        }
        if any {
            self.indptr.push(self.indices.len());
            self.rhs.push(rhs);
        } else {
            // roll back partially pushed coefficients (none: c==0 skipped)
        }
        any
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn build(self, ncols: usize) -> (CsrMatrix, Vec<f64>) {
        let nrows = self.rhs.len();
        (
            CsrMatrix {
                nrows,
                ncols,
                indptr: self.indptr,
                indices: self.indices,
                data: self.data,
            },
            self.rhs,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LsqrSummary {
    pub iterations: usize,
    /// Final estimate of ||A^T r|| / (||A|| ||r||).
    pub normal_residual: f64,
    /// Final estimate of ||r||.
    pub residual_norm: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// Minimize ||A x - b||_2 by LSQR on the column-equilibrated system.
/// Convergence: the scaled normal residual ||A^T r|| / (||A|| ||r||)
/// falls below `tol`, or the residual matches `b` to relative `tol`.
pub fn lsqr(a: &CsrMatrix, b: &[f64], tol: f64, iter_lim: usize) -> Result<(Vec<f64>, LsqrSummary)> {
    if b.len() != a.nrows {
        return Err(Error::Dimension(format!(
            "rhs has {} entries, matrix has {} rows",
            b.len(),
            a.nrows
        )));
    }
    let scale: Vec<f64> = a
        .col_norms()
        .iter()
        .map(|&n| if n > 0.0 { 1.0 / n } else { 1.0 })
        .collect();

    // matrix-vector products of the scaled system A * diag(scale)
    let av = |x: &[f64], y: &mut [f64], tmp: &mut Vec<f64>| {
        tmp.clear();
        tmp.extend(x.iter().zip(&scale).map(|(v, s)| v * s));
        a.mul_add(tmp, y);
    };
    let atv = |y: &[f64], x: &mut [f64], tmp: &mut Vec<f64>| {
        tmp.clear();
        tmp.resize(a.ncols, 0.0);
        a.tr_mul_add(y, tmp);
        for (xi, (ti, si)) in x.iter_mut().zip(tmp.iter().zip(&scale)) {
            *xi += ti * si;
        }
    };

    let n = a.ncols;
    let mut tmp = Vec::with_capacity(n.max(a.nrows));
    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let bnorm = norm2(&u);
    if bnorm == 0.0 {
        return Ok((
            x,
            LsqrSummary {
                iterations: 0,
                normal_residual: 0.0,
                residual_norm: 0.0,
            },
        ));
    }
    let mut beta = bnorm;
    u.iter_mut().for_each(|e| *e /= beta);
    let mut v = vec![0.0; n];
    atv(&u, &mut v, &mut tmp);
    let mut alpha = norm2(&v);
    if alpha == 0.0 {
        return Ok((
            x,
            LsqrSummary {
                iterations: 0,
                normal_residual: 0.0,
                residual_norm: bnorm,
            },
        ));
    }
    v.iter_mut().for_each(|e| *e /= alpha);
    let mut w = v.clone();
    let mut phibar = beta;
    let mut rhobar = alpha;
    let mut anorm2 = 0.0;
    let mut history = Vec::new();

    for iter in 1..=iter_lim {
        // next bidiagonalization step
        u.iter_mut().for_each(|e| *e *= -alpha);
        av(&v, &mut u, &mut tmp);
        beta = norm2(&u);
        anorm2 += alpha * alpha + beta * beta;
        if beta > 0.0 {
            u.iter_mut().for_each(|e| *e /= beta);
            v.iter_mut().for_each(|e| *e *= -beta);
            atv(&u, &mut v, &mut tmp);
            alpha = norm2(&v);
            if alpha > 0.0 {
                v.iter_mut().for_each(|e| *e /= alpha);
            }
        }

        // plane rotation
        let rho = (rhobar * rhobar + beta * beta).sqrt();
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;

        let t1 = phi / rho;
        let t2 = -theta / rho;
        for i in 0..n {
            x[i] += t1 * w[i];
            w[i] = v[i] + t2 * w[i];
        }

        let anorm = anorm2.sqrt();
        let rnorm = phibar;
        let arnorm = phibar * alpha * c.abs();
        let test2 = if anorm > 0.0 && rnorm > 0.0 {
            arnorm / (anorm * rnorm)
        } else {
            0.0
        };
        let test1 = rnorm / bnorm;
        history.push(test2);

        if test2 <= tol || test1 <= tol * tol {
            for (xi, si) in x.iter_mut().zip(&scale) {
                *xi *= si;
            }
            return Ok((
                x,
                LsqrSummary {
                    iterations: iter,
                    normal_residual: test2,
                    residual_norm: rnorm,
                },
            ));
        }
    }

    let last = *history.last().unwrap_or(&f64::NAN);
    Err(Error::Convergence {
        message: format!("lsqr hit the iteration cap {iter_lim}"),
        last,
        history,
    })
}
