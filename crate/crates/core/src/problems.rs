//! Convex nonsmooth benchmark objectives.
//!
//! Problems 1-8 are scalable to any `n >= 2`; problems 9-13 have a fixed
//! dimension. Every problem carries its known optimal value and the
//! reference starting point used in the literature. Gradients are exact off
//! the nonsmooth set; on it, the gradient of the first active piece is
//! returned, which is always a subgradient.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::math::{all_finite, argmax, dot, norm};
use crate::{Error, Result};

/// A function `f: R^n -> R` with a gradient oracle.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes `grad f(x)` into `out`. At points of nondifferentiability any
    /// subgradient may be written.
    fn gradient(&self, x: &[f64], out: &mut [f64]);

    /// Whether `f` is differentiable at `x`. Only consulted when a solver
    /// runs with differentiability checks enabled.
    fn is_differentiable_at(&self, _x: &[f64]) -> bool {
        true
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
    fn is_differentiable_at(&self, x: &[f64]) -> bool {
        (**self).is_differentiable_at(x)
    }
}

/// How gradients are supplied to a solver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GradientMode {
    #[default]
    Exact,
    /// `[f(x + h e_i) - f(x)] / h`, componentwise.
    ForwardDifference { h: f64 },
}

impl GradientMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GradientMode::ForwardDifference { h } if !(h > 0.0 && h.is_finite()) => Err(
                Error::InvalidConfig("forward-difference step must be positive and finite"),
            ),
            _ => Ok(()),
        }
    }
}

/// Wraps an objective so that its gradient is produced according to a
/// [`GradientMode`].
#[derive(Debug, Clone)]
pub struct WithGradientMode<O> {
    inner: O,
    mode: GradientMode,
}

impl<O: Objective> WithGradientMode<O> {
    pub fn new(inner: O, mode: GradientMode) -> Result<Self> {
        mode.validate()?;
        Ok(Self { inner, mode })
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Objective> Objective for WithGradientMode<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self.mode {
            GradientMode::Exact => self.inner.gradient(x, out),
            GradientMode::ForwardDifference { h } => forward_difference(&self.inner, h, x, out),
        }
    }

    fn is_differentiable_at(&self, x: &[f64]) -> bool {
        self.inner.is_differentiable_at(x)
    }
}

fn forward_difference<O: Objective + ?Sized>(f: &O, h: f64, x: &[f64], out: &mut [f64]) {
    let fx = f.value(x);
    let mut probe = x.to_vec();
    for (i, gi) in out.iter_mut().enumerate() {
        let xi = probe[i];
        probe[i] = xi + h;
        *gi = (f.value(&probe) - fx) / h;
        probe[i] = xi;
    }
}

/// Evaluates the gradient of `f` at `x` under `mode`, failing on a
/// non-finite result.
pub fn gradient<O: Objective + ?Sized>(f: &O, mode: GradientMode, x: &[f64]) -> Result<Vec<f64>> {
    mode.validate()?;
    if x.len() != f.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            got: x.len(),
        });
    }
    let mut g = vec![0.0; x.len()];
    match mode {
        GradientMode::Exact => f.gradient(x, &mut g),
        GradientMode::ForwardDifference { h } => forward_difference(f, h, x, &mut g),
    }
    if all_finite(&g) {
        Ok(g)
    } else {
        Err(Error::NonFinite { k: 0 })
    }
}

/// The benchmark problems, numbered as in the usual test-problem table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProblemId {
    /// `w ||x|| + (w - 1) x_1` with `w = 4`.
    TiltedNorm,
    /// `max_i |sum_j x_j / (i + j - 1)|`.
    Mxhilb,
    ChainedLq,
    ChainedCb3I,
    ChainedCb3II,
    /// `max_i x_i^2`, any `n`.
    MaxqGen,
    /// `max_i |x_i|`.
    MaxlGen,
    /// `sqrt(x' A x) + x' B x` with `A` the projector onto the first
    /// `ceil(n/2)` coordinates and `B = I`.
    PartlySmooth,
    Ql,
    Mifflin1,
    /// `max_i x_i^2` with `n = 20`.
    Maxq,
    /// `n max_i x_i - sum_i x_i` with `n = 50`.
    Goffin,
    /// Rosen-Suzuki as an exact-penalty max function, `n = 4`.
    Rosen,
}

const TILT: f64 = 4.0;

impl ProblemId {
    pub const ALL: [ProblemId; 13] = [
        ProblemId::TiltedNorm,
        ProblemId::Mxhilb,
        ProblemId::ChainedLq,
        ProblemId::ChainedCb3I,
        ProblemId::ChainedCb3II,
        ProblemId::MaxqGen,
        ProblemId::MaxlGen,
        ProblemId::PartlySmooth,
        ProblemId::Ql,
        ProblemId::Mifflin1,
        ProblemId::Maxq,
        ProblemId::Goffin,
        ProblemId::Rosen,
    ];

    /// Position in the problem table, starting at 1.
    pub fn number(self) -> usize {
        ProblemId::ALL.iter().position(|&p| p == self).unwrap() + 1
    }

    pub fn from_number(k: usize) -> Option<ProblemId> {
        ProblemId::ALL.get(k.checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemId::TiltedNorm => "TiltedNorm",
            ProblemId::Mxhilb => "MXHILB-gen",
            ProblemId::ChainedLq => "ChainedLQ",
            ProblemId::ChainedCb3I => "ChainedCB3-I",
            ProblemId::ChainedCb3II => "ChainedCB3-II",
            ProblemId::MaxqGen => "MAXQ-gen",
            ProblemId::MaxlGen => "MAXL-gen",
            ProblemId::PartlySmooth => "PartlySmooth",
            ProblemId::Ql => "QL",
            ProblemId::Mifflin1 => "Mifflin1",
            ProblemId::Maxq => "MAXQ",
            ProblemId::Goffin => "Goffin",
            ProblemId::Rosen => "Rosen",
        }
    }

    /// `Some(n)` for fixed-size problems.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            ProblemId::Ql | ProblemId::Mifflin1 => Some(2),
            ProblemId::Maxq => Some(20),
            ProblemId::Goffin => Some(50),
            ProblemId::Rosen => Some(4),
            _ => None,
        }
    }

    pub fn is_scalable(self) -> bool {
        self.fixed_dim().is_none()
    }

    /// Known optimal value for dimension `n`.
    pub fn f_star(self, n: usize) -> f64 {
        let pairs = n.saturating_sub(1) as f64;
        match self {
            ProblemId::ChainedLq => -pairs * core::f64::consts::SQRT_2,
            ProblemId::ChainedCb3I | ProblemId::ChainedCb3II => 2.0 * pairs,
            ProblemId::Ql => 7.2,
            ProblemId::Mifflin1 => -1.0,
            ProblemId::Rosen => -44.0,
            _ => 0.0,
        }
    }

    fn validate_dim(self, n: usize) -> Result<()> {
        match self.fixed_dim() {
            Some(expected) if expected != n => Err(Error::FixedDimension {
                name: self.name(),
                expected,
                got: n,
            }),
            None if n < 2 => Err(Error::DimensionTooSmall {
                name: self.name(),
                min: 2,
                got: n,
            }),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize(s: &str) -> impl Iterator<Item = char> + '_ {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
}

impl FromStr for ProblemId {
    type Err = Error;

    /// Accepts the table number (`"6"`) or the name, ignoring case and
    /// punctuation (`"maxq-gen"`, `"MAXQgen"`).
    fn from_str(s: &str) -> Result<Self> {
        if let Ok(k) = s.trim().parse::<usize>() {
            return ProblemId::from_number(k).ok_or_else(|| Error::UnknownProblem(s.to_string()));
        }
        ProblemId::ALL
            .iter()
            .copied()
            .find(|p| normalize(p.name()).eq(normalize(s)))
            .ok_or_else(|| Error::UnknownProblem(s.to_string()))
    }
}

/// A benchmark problem instance of a given dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    id: ProblemId,
    n: usize,
    f_star: f64,
    x0: Vec<f64>,
}

/// Looks a problem up by name (or table number) and dimension.
pub fn make_problem(name: &str, n: usize) -> Result<Problem> {
    Problem::new(name.parse()?, n)
}

impl Problem {
    pub fn new(id: ProblemId, n: usize) -> Result<Self> {
        id.validate_dim(n)?;
        Ok(Self {
            id,
            n,
            f_star: id.f_star(n),
            x0: reference_start(id, n),
        })
    }

    pub fn id(&self) -> ProblemId {
        self.id
    }

    pub fn name(&self) -> &'static str {
        self.id.name()
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// Reference starting point.
    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// A point attaining `f_star`.
    pub fn minimizer(&self) -> Vec<f64> {
        let n = self.n;
        match self.id {
            ProblemId::ChainedLq => vec![core::f64::consts::FRAC_1_SQRT_2; n],
            ProblemId::ChainedCb3I | ProblemId::ChainedCb3II => vec![1.0; n],
            ProblemId::Ql => vec![1.2, 2.4],
            ProblemId::Mifflin1 => vec![1.0, 0.0],
            ProblemId::Rosen => vec![0.0, 1.0, 2.0, -1.0],
            _ => vec![0.0; n],
        }
    }

    /// `(f(x) - f*) / (|f*| + 1)`
    pub fn relative_error(&self, fx: f64) -> f64 {
        (fx - self.f_star) / (self.f_star.abs() + 1.0)
    }
}

fn reference_start(id: ProblemId, n: usize) -> Vec<f64> {
    let alternating = |n: usize| -> Vec<f64> {
        (1..=n)
            .map(|i| if i <= n / 2 { i as f64 } else { -(i as f64) })
            .collect()
    };
    match id {
        ProblemId::TiltedNorm | ProblemId::Mxhilb | ProblemId::PartlySmooth => vec![1.0; n],
        ProblemId::ChainedLq => vec![-0.5; n],
        ProblemId::ChainedCb3I | ProblemId::ChainedCb3II => vec![2.0; n],
        ProblemId::MaxqGen | ProblemId::Maxq => alternating(n),
        // The unscaled start is roughly 0.6 n^1.5 away from the minimizer.
        ProblemId::MaxlGen => alternating(n).into_iter().map(|v| v / n as f64).collect(),
        ProblemId::Ql => vec![-1.0, 5.0],
        ProblemId::Mifflin1 => vec![0.8, 0.6],
        ProblemId::Goffin => (1..=n).map(|i| i as f64 - (n as f64 + 1.0) / 2.0).collect(),
        ProblemId::Rosen => vec![0.0; 4],
    }
}

/// True when the largest entry is attained exactly once.
fn unique_max(values: impl IntoIterator<Item = f64>) -> bool {
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    for v in values {
        if v > best {
            best = v;
            count = 1;
        } else if v == best {
            count += 1;
        }
    }
    count == 1
}

fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[inline]
fn hilbert_row(x: &[f64], i: usize) -> f64 {
    x.iter()
        .enumerate()
        .map(|(j, xj)| xj / (i + j + 1) as f64)
        .sum()
}

#[inline]
fn lq_pieces(a: f64, b: f64) -> [f64; 2] {
    let lin = -a - b;
    [lin, lin + (a * a + b * b - 1.0)]
}

#[inline]
fn cb3_pieces(a: f64, b: f64) -> [f64; 3] {
    [
        a * a * a * a + b * b,
        (2.0 - a) * (2.0 - a) + (2.0 - b) * (2.0 - b),
        2.0 * libm::exp(b - a),
    ]
}

/// Gradient of the `piece`-th CB3 term with respect to `(a, b)`.
#[inline]
fn cb3_piece_grad(piece: usize, a: f64, b: f64) -> [f64; 2] {
    match piece {
        0 => [4.0 * a * a * a, 2.0 * b],
        1 => [-2.0 * (2.0 - a), -2.0 * (2.0 - b)],
        _ => {
            let e = 2.0 * libm::exp(b - a);
            [-e, e]
        }
    }
}

fn ql_pieces(x: &[f64]) -> [f64; 3] {
    let base = x[0] * x[0] + x[1] * x[1];
    [
        base,
        base + 10.0 * (-4.0 * x[0] - x[1] + 4.0),
        base + 10.0 * (-x[0] - 2.0 * x[1] + 6.0),
    ]
}

fn rosen_parts(x: &[f64]) -> [f64; 4] {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    [
        x1 * x1 + x2 * x2 + 2.0 * x3 * x3 + x4 * x4 - 5.0 * x1 - 5.0 * x2 - 21.0 * x3 + 7.0 * x4,
        x1 * x1 + x2 * x2 + x3 * x3 + x4 * x4 + x1 - x2 + x3 - x4 - 8.0,
        x1 * x1 + 2.0 * x2 * x2 + x3 * x3 + 2.0 * x4 * x4 - x1 - x4 - 10.0,
        x1 * x1 + x2 * x2 + x3 * x3 + 2.0 * x1 - x2 - x4 - 5.0,
    ]
}

fn rosen_pieces(x: &[f64]) -> [f64; 4] {
    let [f1, f2, f3, f4] = rosen_parts(x);
    [f1, f1 + 10.0 * f2, f1 + 10.0 * f3, f1 + 10.0 * f4]
}

fn rosen_part_grads(x: &[f64]) -> [[f64; 4]; 4] {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    [
        [2.0 * x1 - 5.0, 2.0 * x2 - 5.0, 4.0 * x3 - 21.0, 2.0 * x4 + 7.0],
        [2.0 * x1 + 1.0, 2.0 * x2 - 1.0, 2.0 * x3 + 1.0, 2.0 * x4 - 1.0],
        [2.0 * x1 - 1.0, 4.0 * x2, 2.0 * x3, 4.0 * x4 - 1.0],
        [2.0 * x1 + 2.0, 2.0 * x2 - 1.0, 2.0 * x3, -1.0],
    ]
}

fn half(n: usize) -> usize {
    n.div_ceil(2)
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        let n = self.n;
        match self.id {
            ProblemId::TiltedNorm => TILT * norm(x) + (TILT - 1.0) * x[0],
            ProblemId::Mxhilb => (0..n)
                .map(|i| hilbert_row(x, i).abs())
                .fold(f64::NEG_INFINITY, f64::max),
            ProblemId::ChainedLq => x
                .windows(2)
                .map(|w| {
                    let [p, q] = lq_pieces(w[0], w[1]);
                    p.max(q)
                })
                .sum(),
            ProblemId::ChainedCb3I => x
                .windows(2)
                .map(|w| {
                    let [p, q, r] = cb3_pieces(w[0], w[1]);
                    p.max(q).max(r)
                })
                .sum(),
            ProblemId::ChainedCb3II => {
                let sums = cb3_sums(x);
                sums[0].max(sums[1]).max(sums[2])
            }
            ProblemId::MaxqGen | ProblemId::Maxq => {
                x.iter().map(|v| v * v).fold(f64::NEG_INFINITY, f64::max)
            }
            ProblemId::MaxlGen => x.iter().map(|v| v.abs()).fold(f64::NEG_INFINITY, f64::max),
            ProblemId::PartlySmooth => norm(&x[..half(n)]) + dot(x, x),
            ProblemId::Ql => {
                let [a, b, c] = ql_pieces(x);
                a.max(b).max(c)
            }
            ProblemId::Mifflin1 => -x[0] + 20.0 * (x[0] * x[0] + x[1] * x[1] - 1.0).max(0.0),
            ProblemId::Goffin => {
                let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                n as f64 * mx - x.iter().sum::<f64>()
            }
            ProblemId::Rosen => {
                let p = rosen_pieces(x);
                p[0].max(p[1]).max(p[2]).max(p[3])
            }
        }
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(g.len(), self.n);
        let n = self.n;
        g.fill(0.0);
        match self.id {
            ProblemId::TiltedNorm => {
                let r = norm(x);
                if r > 0.0 {
                    for (gi, xi) in g.iter_mut().zip(x) {
                        *gi = TILT * xi / r;
                    }
                }
                g[0] += TILT - 1.0;
            }
            ProblemId::Mxhilb => {
                let (i, _) = argmax((0..n).map(|i| hilbert_row(x, i).abs()));
                let s = sign(hilbert_row(x, i));
                for (j, gj) in g.iter_mut().enumerate() {
                    *gj = s / (i + j + 1) as f64;
                }
            }
            ProblemId::ChainedLq => {
                for i in 0..n - 1 {
                    let (a, b) = (x[i], x[i + 1]);
                    let (piece, _) = argmax(lq_pieces(a, b));
                    if piece == 0 {
                        g[i] -= 1.0;
                        g[i + 1] -= 1.0;
                    } else {
                        g[i] += -1.0 + 2.0 * a;
                        g[i + 1] += -1.0 + 2.0 * b;
                    }
                }
            }
            ProblemId::ChainedCb3I => {
                for i in 0..n - 1 {
                    let (a, b) = (x[i], x[i + 1]);
                    let (piece, _) = argmax(cb3_pieces(a, b));
                    let [ga, gb] = cb3_piece_grad(piece, a, b);
                    g[i] += ga;
                    g[i + 1] += gb;
                }
            }
            ProblemId::ChainedCb3II => {
                let (piece, _) = argmax(cb3_sums(x));
                for i in 0..n - 1 {
                    let [ga, gb] = cb3_piece_grad(piece, x[i], x[i + 1]);
                    g[i] += ga;
                    g[i + 1] += gb;
                }
            }
            ProblemId::MaxqGen | ProblemId::Maxq => {
                let (i, _) = argmax(x.iter().map(|v| v * v));
                g[i] = 2.0 * x[i];
            }
            ProblemId::MaxlGen => {
                let (i, _) = argmax(x.iter().map(|v| v.abs()));
                g[i] = sign(x[i]);
            }
            ProblemId::PartlySmooth => {
                let h = half(n);
                let r = norm(&x[..h]);
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = 2.0 * x[i];
                    if i < h && r > 0.0 {
                        *gi += x[i] / r;
                    }
                }
            }
            ProblemId::Ql => {
                let (piece, _) = argmax(ql_pieces(x));
                g[0] = 2.0 * x[0];
                g[1] = 2.0 * x[1];
                match piece {
                    1 => {
                        g[0] -= 40.0;
                        g[1] -= 10.0;
                    }
                    2 => {
                        g[0] -= 10.0;
                        g[1] -= 20.0;
                    }
                    _ => {}
                }
            }
            ProblemId::Mifflin1 => {
                g[0] = -1.0;
                if x[0] * x[0] + x[1] * x[1] - 1.0 > 0.0 {
                    g[0] += 40.0 * x[0];
                    g[1] = 40.0 * x[1];
                }
            }
            ProblemId::Goffin => {
                let (i, _) = argmax(x.iter().copied());
                g.fill(-1.0);
                g[i] += n as f64;
            }
            ProblemId::Rosen => {
                let (piece, _) = argmax(rosen_pieces(x));
                let parts = rosen_part_grads(x);
                g.copy_from_slice(&parts[0]);
                if piece > 0 {
                    for (gi, pi) in g.iter_mut().zip(&parts[piece]) {
                        *gi += 10.0 * pi;
                    }
                }
            }
        }
    }

    fn is_differentiable_at(&self, x: &[f64]) -> bool {
        let n = self.n;
        match self.id {
            ProblemId::TiltedNorm => x.iter().any(|&v| v != 0.0),
            ProblemId::Mxhilb => {
                let rows: Vec<f64> = (0..n).map(|i| hilbert_row(x, i)).collect();
                let (i, _) = argmax(rows.iter().map(|v| v.abs()));
                rows[i] != 0.0 && unique_max(rows.iter().map(|v| v.abs()))
            }
            ProblemId::ChainedLq => x.windows(2).all(|w| w[0] * w[0] + w[1] * w[1] != 1.0),
            ProblemId::ChainedCb3I => x.windows(2).all(|w| unique_max(cb3_pieces(w[0], w[1]))),
            ProblemId::ChainedCb3II => unique_max(cb3_sums(x)),
            ProblemId::MaxqGen | ProblemId::Maxq => {
                unique_max(x.iter().map(|v| v * v)) && x.iter().any(|&v| v != 0.0)
            }
            ProblemId::MaxlGen => {
                unique_max(x.iter().map(|v| v.abs())) && x.iter().any(|&v| v != 0.0)
            }
            ProblemId::PartlySmooth => x[..half(n)].iter().any(|&v| v != 0.0),
            ProblemId::Ql => unique_max(ql_pieces(x)),
            ProblemId::Mifflin1 => x[0] * x[0] + x[1] * x[1] != 1.0,
            ProblemId::Goffin => unique_max(x.iter().copied()),
            ProblemId::Rosen => unique_max(rosen_pieces(x)),
        }
    }
}

fn cb3_sums(x: &[f64]) -> [f64; 3] {
    let mut sums = [0.0; 3];
    for w in x.windows(2) {
        let p = cb3_pieces(w[0], w[1]);
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    sums
}

/// One row of the machine-readable problem catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub number: usize,
    pub name: &'static str,
    /// `None` when any `n >= 2` is accepted.
    pub fixed_dim: Option<usize>,
    /// `f*` expressed in `n` for scalable problems.
    pub f_star: &'static str,
}

pub fn catalog() -> impl Iterator<Item = CatalogEntry> {
    ProblemId::ALL.iter().map(|&id| CatalogEntry {
        number: id.number(),
        name: id.name(),
        fixed_dim: id.fixed_dim(),
        f_star: match id {
            ProblemId::ChainedLq => "-(n-1)*sqrt(2)",
            ProblemId::ChainedCb3I | ProblemId::ChainedCb3II => "2*(n-1)",
            ProblemId::Ql => "7.2",
            ProblemId::Mifflin1 => "-1",
            ProblemId::Rosen => "-44",
            _ => "0",
        },
    })
}
