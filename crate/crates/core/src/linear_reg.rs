//! Tikhonov (ridge) and truncated-SVD least squares.
//!
//! The ridge penalty is written `lambda^2 |x|^2`, so the solution is
//! `(A^T A + lambda^2 I)^{-1} A^T b`. Note the square: `lambda = 0.1` means a
//! penalty weight of `0.01`. All solves go through the SVD of `A`.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::output::Provenance;

/// Relative gap below which two singular values at the truncation boundary
/// are treated as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Relative threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub split: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl LeastSquaresProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(invalid("design matrix must be at least 1x1"));
        }
        if b.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        Ok(LeastSquaresProblem { a, b, split: None })
    }

    pub fn with_test_split(mut self, a_test: DMatrix<f64>, b_test: DVector<f64>) -> Result<Self> {
        if a_test.ncols() != self.a.ncols() {
            return Err(Error::DimensionMismatch { expected: self.a.ncols(), got: a_test.ncols() });
        }
        if b_test.len() != a_test.nrows() {
            return Err(Error::DimensionMismatch { expected: a_test.nrows(), got: b_test.len() });
        }
        self.split = Some((a_test, b_test));
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// Loads `A` from a headerless numeric CSV and `b` from a one-column CSV.
    pub fn from_csv_paths(a: &Path, b: &Path) -> Result<Self> {
        let a = read_matrix(std::fs::File::open(a)?)?;
        let b = read_matrix(std::fs::File::open(b)?)?;
        if b.ncols() != 1 {
            return Err(Error::Parse(format!("right-hand side must have one column, got {}", b.ncols())));
        }
        Self::new(a, b.column(0).into_owned())
    }
}

/// Reads a dense numeric matrix; `#` lines are comments.
pub fn read_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("row {}: '{f}' is not a number", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::DimensionMismatch { expected: first.len(), got: row.len() });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("matrix file has no rows".into()));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

/// Thin SVD with singular values sorted in decreasing order.
struct SortedSvd {
    u: DMatrix<f64>,
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
}

impl SortedSvd {
    fn of(a: &DMatrix<f64>) -> Result<Self> {
        let svd = a.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Integrity("SVD did not return U".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::Integrity("SVD did not return V^T".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        Ok(SortedSvd {
            u: u.select_columns(&order),
            sigma: order.iter().map(|&i| svd.singular_values[i]).collect(),
            v_t: v_t.select_rows(&order),
        })
    }

    fn rank(&self) -> usize {
        let top = self.sigma.first().copied().unwrap_or(0.0);
        self.sigma.iter().filter(|&&s| s > RANK_TOL * top && s > 0.0).count()
    }

    /// `sum_i f_i (u_i . b) v_i` for filter weights `f_i` applied to `1/sigma_i`.
    fn filtered_solve(&self, b: &DVector<f64>, weight: impl Fn(usize, f64) -> f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.v_t.ncols());
        for (i, &s) in self.sigma.iter().enumerate() {
            let w = weight(i, s);
            if w == 0.0 {
                continue;
            }
            let coeff = w * self.u.column(i).dot(b);
            x.axpy(coeff, &self.v_t.row(i).transpose(), 1.0);
        }
        x
    }
}

pub fn ridge_solve(problem: &LeastSquaresProblem, lambda: f64) -> Result<DVector<f64>> {
    let svd = SortedSvd::of(&problem.a)?;
    ridge_with(&svd, problem, lambda)
}

fn ridge_with(svd: &SortedSvd, problem: &LeastSquaresProblem, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain {
            what: "lambda",
            value: lambda,
            domain: "[0, inf)",
        });
    }
    let p = problem.cols();
    if lambda == 0.0 {
        let rank = svd.rank();
        if rank < p {
            return Err(Error::RankDeficient { shortfall: p - rank, full: p });
        }
    }
    let l2 = lambda * lambda;
    Ok(svd.filtered_solve(&problem.b, |_, s| s / (s * s + l2)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsvdSolution {
    pub x: DVector<f64>,
    /// The `k`-th and `(k+1)`-th singular values coincide, so the truncation
    /// depends on the SVD basis.
    pub tie_warning: bool,
}

pub fn tsvd_solve(problem: &LeastSquaresProblem, k: usize) -> Result<TsvdSolution> {
    let svd = SortedSvd::of(&problem.a)?;
    tsvd_with(&svd, problem, k)
}

fn tsvd_with(svd: &SortedSvd, problem: &LeastSquaresProblem, k: usize) -> Result<TsvdSolution> {
    let max_k = problem.rows().min(problem.cols());
    if k > max_k {
        return Err(invalid(format!("truncation rank k = {k} exceeds min(n, p) = {max_k}")));
    }
    let top = svd.sigma.first().copied().unwrap_or(0.0);
    let tie_warning =
        k > 0 && k < svd.sigma.len() && (svd.sigma[k - 1] - svd.sigma[k]).abs() <= TIE_TOL * top && svd.sigma[k] > 0.0;
    let x = svd.filtered_solve(&problem.b, |i, s| if i < k && s > 0.0 { 1.0 / s } else { 0.0 });
    Ok(TsvdSolution { x, tie_warning })
}

/// Numerical rank of `A`.
pub fn numerical_rank(problem: &LeastSquaresProblem) -> Result<usize> {
    Ok(SortedSvd::of(&problem.a)?.rank())
}

/// Largest singular value of `A`.
pub fn spectral_norm(problem: &LeastSquaresProblem) -> Result<f64> {
    Ok(SortedSvd::of(&problem.a)?.sigma.first().copied().unwrap_or(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Knob {
    Lambda,
    RankK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationPath {
    pub knob: Knob,
    pub knob_values: Vec<f64>,
    pub solution_norms: Vec<f64>,
    pub train_residuals: Vec<f64>,
    pub test_residuals: Option<Vec<f64>>,
    pub tie_warnings: Vec<bool>,
}

/// Solves at each knob value; `RankK` values must be non-negative integers.
pub fn regularization_path(problem: &LeastSquaresProblem, knob: Knob, values: &[f64]) -> Result<RegularizationPath> {
    if values.is_empty() {
        return Err(invalid("knob grid is empty"));
    }
    let increasing = values.windows(2).all(|w| w[1] > w[0]);
    let decreasing = values.windows(2).all(|w| w[1] < w[0]);
    if !increasing && !decreasing {
        return Err(invalid("knob values must be strictly monotone"));
    }
    if knob == Knob::RankK && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
        return Err(invalid("rank values must be non-negative integers"));
    }
    let svd = SortedSvd::of(&problem.a)?;
    let solved = values
        .par_iter()
        .map(|&v| match knob {
            Knob::Lambda => ridge_with(&svd, problem, v).map(|x| (x, false)),
            Knob::RankK => tsvd_with(&svd, problem, v as usize).map(|s| (s.x, s.tie_warning)),
        })
        .collect::<Result<Vec<_>>>()?;

    let mut path = RegularizationPath {
        knob,
        knob_values: values.to_vec(),
        solution_norms: Vec::with_capacity(values.len()),
        train_residuals: Vec::with_capacity(values.len()),
        test_residuals: problem.split.as_ref().map(|_| Vec::with_capacity(values.len())),
        tie_warnings: Vec::with_capacity(values.len()),
    };
    for (x, tie) in solved {
        path.solution_norms.push(x.norm());
        path.train_residuals.push((&problem.a * &x - &problem.b).norm());
        if let (Some((at, bt)), Some(test)) = (&problem.split, path.test_residuals.as_mut()) {
            test.push((at * &x - bt).norm());
        }
        path.tie_warnings.push(tie);
    }
    Ok(path)
}

impl RegularizationPath {
    /// CSV with columns `knob,norm,train_resid,test_resid`; `test_resid` is
    /// empty without a held-out split.
    pub fn write_csv<W: Write>(&self, mut w: W, provenance: &Provenance) -> Result<()> {
        provenance.write_csv_header(&mut w)?;
        writeln!(w, "# knob: {:?}", self.knob)?;
        for (v, _) in self.knob_values.iter().zip(&self.tie_warnings).filter(|(_, t)| **t) {
            writeln!(w, "# warning: tied singular values at truncation k={v}")?;
        }
        writeln!(w, "knob,norm,train_resid,test_resid")?;
        for i in 0..self.knob_values.len() {
            let test = self.test_residuals.as_ref().map(|t| t[i].to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{}",
                self.knob_values[i], self.solution_norms[i], self.train_residuals[i], test
            )?;
        }
        Ok(())
    }
}
