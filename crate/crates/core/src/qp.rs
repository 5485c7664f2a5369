//! Strictly convex quadratic programs over the unit simplex.
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 || sum_j l_j g_j ||^2 + c * sum_j l_j e_j
//!     subject to  sum_j l_j = 1,  l_j >= 0
//! ```
//!
//! with a primal active-set method in the style of Wolfe's minimum-norm-point
//! algorithm. On the hyperplane `sum l = 1` the objective equals
//! `1/2 l' (G'G + 11') l + c e' l - 1/2`, and the reduced matrix
//! `G_S'G_S + 11'` is positive definite exactly when the augmented columns
//! `(g_j, 1)`, `j in S`, are linearly independent. The active set is kept
//! independent; when an entering atom would break that, the method moves
//! along the resulting zero-curvature direction until an atom leaves.
//!
//! Instances are tiny (tens of atoms) and dense, so the reduced Cholesky
//! factor is rebuilt from the cached Gram matrix on every step.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{axpy, dot, norm_sq};

/// Default KKT tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Errors in `[-ERROR_CLAMP, 0)` are treated as rounding noise and set to 0.
pub const ERROR_CLAMP: f64 = 1e-12;

/// A pivot of the reduced Cholesky factor below this fraction of its
/// diagonal entry marks the augmented column as dependent.
const RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQpInstance {
    pub atoms: Vec<Vec<f64>>,
    pub errors: Vec<f64>,
    /// `c > 0`, the weight of the linear error term.
    pub penalty_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexQpSolution {
    /// Weights on the unit simplex, aligned with the instance atoms.
    pub lambda: Vec<f64>,
    /// `sum_j l_j g_j`
    pub g_tilde: Vec<f64>,
    /// `sum_j l_j e_j`
    pub e_tilde: f64,
    /// `1/2 ||g_tilde||^2 + c e_tilde`
    pub w: f64,
    /// `(max_{l_j > 0} r_j - min_j r_j) / max(1, max_j |r_j|)` where
    /// `r_j = <g_j, g_tilde> + c e_j` is the partial derivative in `l_j`.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("simplex QP has no atoms")]
    Empty,
    #[error("atom {index} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("{atoms} atoms but {errors} errors")]
    LengthMismatch { atoms: usize, errors: usize },
    #[error("non-finite entry in simplex QP data")]
    NonFinite,
    #[error("linearization error {value:e} of atom {index} is negative")]
    NegativeError { index: usize, value: f64 },
    #[error("penalty scale must be positive, got {0:e}")]
    NonPositiveScale(f64),
    #[error("simplex QP stopped after {} iterations with KKT residual {:e}", .best.iterations, .best.kkt_residual)]
    NotConverged { best: Box<SimplexQpSolution> },
}

impl SimplexQpInstance {
    pub fn new(atoms: Vec<Vec<f64>>, errors: Vec<f64>, penalty_scale: f64) -> Self {
        Self {
            atoms,
            errors,
            penalty_scale,
        }
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms.first().map_or(0, Vec::len)
    }

    /// Checks the instance and returns its errors with rounding noise
    /// clamped to zero.
    fn validated_errors(&self) -> Result<Vec<f64>, QpError> {
        if self.atoms.is_empty() {
            return Err(QpError::Empty);
        }
        if self.errors.len() != self.atoms.len() {
            return Err(QpError::LengthMismatch {
                atoms: self.atoms.len(),
                errors: self.errors.len(),
            });
        }
        if !(self.penalty_scale > 0.0) || !self.penalty_scale.is_finite() {
            return Err(QpError::NonPositiveScale(self.penalty_scale));
        }
        let n = self.dim();
        for (index, a) in self.atoms.iter().enumerate() {
            if a.len() != n {
                return Err(QpError::DimensionMismatch {
                    index,
                    expected: n,
                    got: a.len(),
                });
            }
            if !a.iter().all(|v| v.is_finite()) {
                return Err(QpError::NonFinite);
            }
        }
        self.errors
            .iter()
            .enumerate()
            .map(|(index, &e)| {
                if !e.is_finite() {
                    Err(QpError::NonFinite)
                } else if e < -ERROR_CLAMP {
                    Err(QpError::NegativeError { index, value: e })
                } else {
                    Ok(e.max(0.0))
                }
            })
            .collect()
    }

    /// The objective at an arbitrary weight vector (not necessarily
    /// feasible).
    pub fn objective(&self, lambda: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        for (l, a) in lambda.iter().zip(&self.atoms) {
            axpy(*l, a, &mut g);
        }
        0.5 * norm_sq(&g) + self.penalty_scale * dot(lambda, &self.errors)
    }
}

/// Plain-text dump used for offline inspection:
///
/// ```text
/// simplex-qp atoms=<p> dim=<n> penalty_scale=<c>
/// <e_0> <g_0[0]> <g_0[1]> ...
/// ...
/// ```
///
/// One line per atom; every number is printed in round-trip exponent form.
impl fmt::Display for SimplexQpInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "simplex-qp atoms={} dim={} penalty_scale={:e}",
            self.len(),
            self.dim(),
            self.penalty_scale
        )?;
        for (a, e) in self.atoms.iter().zip(&self.errors) {
            write!(f, "{e:e}")?;
            for v in a {
                write!(f, " {v:e}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl core::str::FromStr for SimplexQpInstance {
    type Err = &'static str;

    /// Parses the format written by `Display`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty dump")?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some("simplex-qp") {
            return Err("missing simplex-qp header");
        }
        let mut scale = None;
        for kv in fields {
            if let Some(v) = kv.strip_prefix("penalty_scale=") {
                scale = Some(v.parse::<f64>().map_err(|_| "bad penalty_scale")?);
            }
        }
        let mut atoms = Vec::new();
        let mut errors = Vec::new();
        for line in lines {
            let mut nums = line.split_whitespace().map(str::parse::<f64>);
            let e = nums.next().ok_or("empty atom line")?.map_err(|_| "bad number")?;
            let g = nums.collect::<Result<Vec<_>, _>>().map_err(|_| "bad number")?;
            errors.push(e);
            atoms.push(g);
        }
        Ok(Self::new(atoms, errors, scale.ok_or("missing penalty_scale")?))
    }
}

/// Gram matrix and linear term of one instance.
struct Problem {
    p: usize,
    gram: Vec<f64>,
    lin: Vec<f64>,
}

impl Problem {
    fn h(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.p + j]
    }

    fn gradient(&self, lambda: &[f64], support: &[usize]) -> Vec<f64> {
        let mut r = self.lin.clone();
        for &s in support {
            let l = lambda[s];
            if l != 0.0 {
                for (j, rj) in r.iter_mut().enumerate() {
                    *rj += l * self.h(j, s);
                }
            }
        }
        r
    }

    fn value(&self, lambda: &[f64], support: &[usize]) -> f64 {
        let r = self.gradient(lambda, support);
        // 1/2 l'Hl + q'l = 1/2 l'(Hl + q) + 1/2 q'l
        support
            .iter()
            .map(|&s| 0.5 * lambda[s] * (r[s] + self.lin[s]))
            .sum()
    }

    /// Cholesky factor of `H_SS + 11'`, or the first position whose
    /// augmented column depends on the preceding ones (together with the
    /// factor of the leading block).
    fn factor(&self, support: &[usize]) -> Result<Cholesky, (usize, Cholesky)> {
        let k = support.len();
        let mut l = vec![0.0; k * k];
        for t in 0..k {
            for u in 0..=t {
                let mut v = self.h(support[t], support[u]) + 1.0;
                for r in 0..u {
                    v -= l[t * k + r] * l[u * k + r];
                }
                if u == t {
                    let diag = self.h(support[t], support[t]) + 1.0;
                    if v <= RANK_TOL * diag {
                        return Err((t, Cholesky { k, l, rows: t }));
                    }
                    l[t * k + t] = libm::sqrt(v);
                } else {
                    l[t * k + u] = v / l[u * k + u];
                }
            }
        }
        Ok(Cholesky { k, l, rows: k })
    }
}

/// Lower-triangular factor stored row-major with stride `k`; only the
/// leading `rows` rows are valid.
struct Cholesky {
    k: usize,
    l: Vec<f64>,
    rows: usize,
}

impl Cholesky {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (k, m) = (self.k, self.rows);
        let mut y = b[..m].to_vec();
        for t in 0..m {
            for r in 0..t {
                y[t] -= self.l[t * k + r] * y[r];
            }
            y[t] /= self.l[t * k + t];
        }
        for t in (0..m).rev() {
            for r in t + 1..m {
                y[t] -= self.l[r * k + t] * y[r];
            }
            y[t] /= self.l[t * k + t];
        }
        y
    }
}

struct ActiveSet<'a> {
    qp: &'a Problem,
    lambda: Vec<f64>,
    /// Atoms with (possibly) positive weight, in insertion order.
    support: Vec<usize>,
    iterations: usize,
}

enum Inner {
    Done,
    CapReached,
}

impl ActiveSet<'_> {
    /// Ratio test along `dir` (aligned with `support`): the largest step in
    /// `[0, max_step]` keeping the weights nonnegative and the blocking
    /// position, lowest atom index first on ties.
    fn ratio_test(&self, dir: &[f64], max_step: f64) -> (f64, Option<usize>) {
        let mut step = max_step;
        let mut blocking: Option<usize> = None;
        for (pos, (&s, &d)) in self.support.iter().zip(dir).enumerate() {
            if d < 0.0 {
                let t = (self.lambda[s] / -d).max(0.0);
                let better = match blocking {
                    None => t <= step,
                    Some(b) => t < step || (t == step && s < self.support[b]),
                };
                if better {
                    step = t;
                    blocking = Some(pos);
                }
            }
        }
        (step, blocking)
    }

    fn move_and_drop(&mut self, dir: &[f64], step: f64, blocking: Option<usize>) {
        for (&s, &d) in self.support.iter().zip(dir) {
            self.lambda[s] = (self.lambda[s] + step * d).max(0.0);
        }
        if let Some(pos) = blocking {
            let s = self.support.remove(pos);
            self.lambda[s] = 0.0;
        }
        self.renormalize();
    }

    fn renormalize(&mut self) {
        let total: f64 = self.support.iter().map(|&s| self.lambda[s]).sum();
        if total > 0.0 {
            for &s in &self.support {
                self.lambda[s] /= total;
            }
        }
    }

    /// Minimizes over the affine hull of the current support, dropping
    /// atoms that would turn negative.
    fn minimize_on_support(&mut self, cap: usize) -> Inner {
        loop {
            if self.iterations >= cap {
                return Inner::CapReached;
            }
            self.iterations += 1;
            let k = self.support.len();
            match self.qp.factor(&self.support) {
                Ok(chol) => {
                    let ones = vec![1.0; k];
                    let lin: Vec<f64> = self.support.iter().map(|&s| self.qp.lin[s]).collect();
                    let u = chol.solve(&ones);
                    let v = chol.solve(&lin);
                    let nu = (1.0 + v.iter().sum::<f64>()) / u.iter().sum::<f64>();
                    let target: Vec<f64> = u.iter().zip(&v).map(|(a, b)| nu * a - b).collect();
                    if target.iter().all(|&t| t >= 0.0) {
                        for (&s, &t) in self.support.iter().zip(&target) {
                            self.lambda[s] = t;
                        }
                        self.renormalize();
                        return Inner::Done;
                    }
                    let dir: Vec<f64> = self
                        .support
                        .iter()
                        .zip(&target)
                        .map(|(&s, &t)| t - self.lambda[s])
                        .collect();
                    let (step, blocking) = self.ratio_test(&dir, 1.0);
                    self.move_and_drop(&dir, step, blocking);
                }
                Err((t, lead)) => {
                    // (g_t, 1) lies in the span of the leading augmented
                    // columns: y = (-M^-1 A' a_t, 1, 0, ...) has G y = 0 and
                    // sum y = 0, so the objective is linear along it.
                    let dep = self.support[t];
                    let rhs: Vec<f64> = self.support[..t]
                        .iter()
                        .map(|&s| -(self.qp.h(s, dep) + 1.0))
                        .collect();
                    let mut dir = lead.solve(&rhs);
                    dir.push(1.0);
                    dir.resize(k, 0.0);
                    let r = self.qp.gradient(&self.lambda, &self.support);
                    let slope: f64 = self.support.iter().zip(&dir).map(|(&s, d)| r[s] * d).sum();
                    if slope > 0.0 {
                        dir.iter_mut().for_each(|d| *d = -*d);
                    }
                    let (step, blocking) = self.ratio_test(&dir, f64::INFINITY);
                    self.move_and_drop(&dir, step, blocking);
                }
            }
        }
    }
}

/// Solves the simplex QP to KKT tolerance `tol` (relative to the size of
/// the partial derivatives).
pub fn solve_simplex_qp(
    instance: &SimplexQpInstance,
    tol: f64,
) -> Result<SimplexQpSolution, QpError> {
    let errors = instance.validated_errors()?;
    let p = instance.len();
    let mut gram = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let v = dot(&instance.atoms[i], &instance.atoms[j]);
            gram[i * p + j] = v;
            gram[j * p + i] = v;
        }
    }
    let lin: Vec<f64> = errors.iter().map(|e| instance.penalty_scale * e).collect();
    let qp = Problem { p, gram, lin };

    // Start at the best vertex.
    let start = (0..p)
        .map(|j| 0.5 * qp.h(j, j) + qp.lin[j])
        .enumerate()
        .fold((0, f64::INFINITY), |best, (j, v)| if v < best.1 { (j, v) } else { best })
        .0;
    let mut lambda = vec![0.0; p];
    lambda[start] = 1.0;
    let mut set = ActiveSet {
        qp: &qp,
        lambda,
        support: vec![start],
        iterations: 0,
    };

    let cap = 10 * p * p;
    let mut converged = false;
    while set.iterations < cap {
        let r = qp.gradient(&set.lambda, &set.support);
        let scale = r.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let avg: f64 = set.support.iter().map(|&s| set.lambda[s] * r[s]).sum();
        let entering = (0..p)
            .filter(|j| !set.support.contains(j))
            .fold(None::<(usize, f64)>, |best, j| match best {
                Some((_, v)) if v <= r[j] => best,
                _ => Some((j, r[j])),
            });
        match entering {
            Some((j, rj)) if rj < avg - tol * scale => {
                set.support.push(j);
                if let Inner::CapReached = set.minimize_on_support(cap) {
                    break;
                }
            }
            _ => {
                converged = true;
                break;
            }
        }
    }

    let mut solution = finish(instance, &errors, &qp, set.lambda, set.iterations);
    if !converged || solution.kkt_residual > tol {
        let polished = projected_gradient(instance, &errors, &qp, &solution.lambda, tol);
        if polished.w < solution.w || polished.kkt_residual < solution.kkt_residual {
            solution = SimplexQpSolution {
                iterations: solution.iterations + polished.iterations,
                ..polished
            };
        }
    }
    if solution.kkt_residual <= tol {
        Ok(solution)
    } else {
        Err(QpError::NotConverged {
            best: Box::new(solution),
        })
    }
}

fn finish(
    instance: &SimplexQpInstance,
    errors: &[f64],
    qp: &Problem,
    mut lambda: Vec<f64>,
    iterations: usize,
) -> SimplexQpSolution {
    for l in lambda.iter_mut() {
        *l = l.max(0.0);
    }
    let total: f64 = lambda.iter().sum();
    lambda.iter_mut().for_each(|l| *l /= total);
    let mut g_tilde = vec![0.0; instance.dim()];
    for (l, a) in lambda.iter().zip(&instance.atoms) {
        if *l != 0.0 {
            axpy(*l, a, &mut g_tilde);
        }
    }
    let e_tilde = dot(&lambda, errors);
    let w = 0.5 * norm_sq(&g_tilde) + instance.penalty_scale * e_tilde;
    let support: Vec<usize> = (0..lambda.len()).filter(|&j| lambda[j] > 0.0).collect();
    let r = qp.gradient(&lambda, &support);
    let kkt_residual = kkt_residual(&r, &lambda);
    SimplexQpSolution {
        lambda,
        g_tilde,
        e_tilde,
        w,
        kkt_residual,
        iterations,
    }
}

fn kkt_residual(r: &[f64], lambda: &[f64]) -> f64 {
    let scale = r.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r
        .iter()
        .zip(lambda)
        .filter(|(_, &l)| l > 0.0)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    ((hi - lo) / scale).max(0.0)
}

/// Euclidean projection onto the unit simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut shift = 0.0;
    for (i, s) in sorted.iter().enumerate() {
        cum += s;
        let t = (cum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            shift = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

/// Fallback when the active-set iteration stalls: projected gradient with
/// step `1 / trace(H)` from the best active-set iterate.
fn projected_gradient(
    instance: &SimplexQpInstance,
    errors: &[f64],
    qp: &Problem,
    start: &[f64],
    tol: f64,
) -> SimplexQpSolution {
    let p = qp.p;
    let all: Vec<usize> = (0..p).collect();
    let lipschitz = (0..p).map(|j| qp.h(j, j)).sum::<f64>().max(1e-300);
    let step = 1.0 / lipschitz;
    let mut lambda = start.to_vec();
    let mut best = (qp.value(&lambda, &all), lambda.clone());
    let max_iter = 200 * p.max(10);
    let mut iters = 0;
    for _ in 0..max_iter {
        iters += 1;
        let r = qp.gradient(&lambda, &all);
        if kkt_residual(&r, &lambda) <= tol {
            break;
        }
        for (l, g) in lambda.iter_mut().zip(&r) {
            *l -= step * g;
        }
        project_simplex(&mut lambda);
        let v = qp.value(&lambda, &all);
        if v < best.0 {
            best = (v, lambda.clone());
        }
    }
    finish(instance, errors, qp, best.1, iters)
}
