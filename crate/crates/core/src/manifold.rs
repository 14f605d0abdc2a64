//! Riemannian conjugate gradient over the complex fixed-rank manifold and the
//! complex circle, with Polak-Ribière+ directions and Armijo backtracking.
//!
//! Euclidean gradients handed to the engine are taken with respect to the
//! real inner product `⟨A, B⟩ = Re tr(AᴴB)`. For a real cost of complex
//! arguments that is twice the conjugate (Wirtinger) gradient `∂f/∂X*`.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::numerics::{
    complex_normal_matrix, inner_re, truncated_svd, CMatrix, CVector, C64, RANK_TOL,
};

/// Operations the CG engine needs from a manifold.
pub trait Manifold {
    type Point: Clone;
    type Tangent: Clone;
    type Ambient;

    /// Orthogonal projection of an ambient vector onto the tangent space at `x`.
    fn project(&self, x: &Self::Point, e: &Self::Ambient) -> Result<Self::Tangent>;

    fn inner(&self, x: &Self::Point, a: &Self::Tangent, b: &Self::Tangent) -> f64;

    /// Fails when the step produces a point off the manifold; the line search then shrinks the step.
    fn retract(&self, x: &Self::Point, d: &Self::Tangent, step: f64) -> Result<Self::Point>;

    fn transport(&self, from: &Self::Point, to: &Self::Point, d: &Self::Tangent) -> Self::Tangent;

    /// `a·x + b·y`.
    fn lincomb(&self, a: f64, x: &Self::Tangent, b: f64, y: &Self::Tangent) -> Self::Tangent;
}

/// Rank-`r` matrix held as `u·diag(s)·vᴴ` together with its dense product.
#[derive(Debug, Clone)]
pub struct FixedRankPoint {
    pub u: CMatrix,
    pub s: DVector<f64>,
    pub v: CMatrix,
    pub dense: CMatrix,
}

impl FixedRankPoint {
    /// Best rank-`r` approximation of `a`; errors if `a` has numerical rank below `r`.
    pub fn from_matrix(a: &CMatrix, r: usize) -> Result<Self> {
        let t = truncated_svd(a, r)?;
        if r == 0 || t.s[r - 1] < RANK_TOL * t.s[0] || t.s[0] == 0.0 {
            return Err(Error::Numerical(format!(
                "matrix has numerical rank below {r}"
            )));
        }
        let dense = t.compose();
        Ok(Self {
            u: t.u,
            s: t.s,
            v: t.v,
            dense,
        })
    }

    /// Product of an `n × r` factor with CN(0, 1/n) entries and an `r × m`
    /// factor with CN(0, 1/m) entries, refactored by SVD.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, r: usize, rng: &mut R) -> Result<Self> {
        if r == 0 || r > n.min(m) {
            return Err(Error::RankTooLarge {
                rank: r,
                rows: n,
                cols: m,
            });
        }
        let a = complex_normal_matrix(n, r, 1.0 / n as f64, rng);
        let b = complex_normal_matrix(r, m, 1.0 / m as f64, rng);
        Self::from_matrix(&(a * b), r)
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.dense.shape()
    }

    /// Multiplies the point by a positive scalar.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            u: self.u.clone(),
            s: &self.s * c,
            v: self.v.clone(),
            dense: &self.dense * C64::new(c, 0.0),
        }
    }
}

/// Tangent vector `U·M·Vᴴ + U_p·Vᴴ + U·V_pᴴ` in factored form.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub m_core: CMatrix,
    pub u_p: CMatrix,
    pub v_p: CMatrix,
}

/// Complex `rows × cols` matrices of fixed rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedRank {
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
}

impl FixedRank {
    pub fn new(rows: usize, cols: usize, rank: usize) -> Result<Self> {
        if rank == 0 || rank > rows.min(cols) {
            return Err(Error::RankTooLarge { rank, rows, cols });
        }
        Ok(Self { rows, cols, rank })
    }

    pub fn project_tangent(&self, x: &FixedRankPoint, j: &CMatrix) -> Result<TangentVector> {
        if j.shape() != x.shape() {
            return shape_err(format!(
                "ambient matrix is {}x{}, point is {}x{}",
                j.nrows(),
                j.ncols(),
                x.dense.nrows(),
                x.dense.ncols()
            ));
        }
        let jv = j * &x.v;
        let m_core = x.u.adjoint() * &jv;
        let u_p = &jv - &x.u * &m_core;
        let jhu = j.adjoint() * &x.u;
        let v_p = &jhu - &x.v * (x.v.adjoint() * &jhu);
        Ok(TangentVector { m_core, u_p, v_p })
    }

    pub fn embed(&self, x: &FixedRankPoint, t: &TangentVector) -> CMatrix {
        let left = &x.u * &t.m_core + &t.u_p;
        left * x.v.adjoint() + &x.u * t.v_p.adjoint()
    }

    pub fn riemannian_grad(&self, x: &FixedRankPoint, egrad: &CMatrix) -> Result<TangentVector> {
        self.project_tangent(x, egrad)
    }

    pub fn zero_tangent(&self) -> TangentVector {
        TangentVector {
            m_core: CMatrix::zeros(self.rank, self.rank),
            u_p: CMatrix::zeros(self.rows, self.rank),
            v_p: CMatrix::zeros(self.cols, self.rank),
        }
    }
}

impl Manifold for FixedRank {
    type Point = FixedRankPoint;
    type Tangent = TangentVector;
    type Ambient = CMatrix;

    fn project(&self, x: &FixedRankPoint, e: &CMatrix) -> Result<TangentVector> {
        self.project_tangent(x, e)
    }

    fn inner(&self, _x: &FixedRankPoint, a: &TangentVector, b: &TangentVector) -> f64 {
        inner_re(&a.m_core, &b.m_core) + inner_re(&a.u_p, &b.u_p) + inner_re(&a.v_p, &b.v_p)
    }

    fn retract(&self, x: &FixedRankPoint, d: &TangentVector, step: f64) -> Result<FixedRankPoint> {
        if step == 0.0 {
            return Ok(x.clone());
        }
        let y = &x.dense + self.embed(x, d) * C64::new(step, 0.0);
        FixedRankPoint::from_matrix(&y, self.rank)
    }

    fn transport(
        &self,
        from: &FixedRankPoint,
        to: &FixedRankPoint,
        d: &TangentVector,
    ) -> TangentVector {
        self.project_tangent(to, &self.embed(from, d))
            .expect("points on one manifold share a shape")
    }

    fn lincomb(&self, a: f64, x: &TangentVector, b: f64, y: &TangentVector) -> TangentVector {
        let (a, b) = (C64::new(a, 0.0), C64::new(b, 0.0));
        TangentVector {
            m_core: &x.m_core * a + &y.m_core * b,
            u_p: &x.u_p * a + &y.u_p * b,
            v_p: &x.v_p * a + &y.v_p * b,
        }
    }
}

/// Unit-modulus vectors of a fixed length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Circle {
    pub len: usize,
}

/// `e − Re(e ∘ v*) ∘ v`.
pub fn circle_project(v: &CVector, e: &CVector) -> Result<CVector> {
    if v.len() != e.len() {
        return shape_err("circle point and ambient vector differ in length");
    }
    Ok(CVector::from_fn(v.len(), |i, _| {
        let radial = (e[i] * v[i].conj()).re;
        e[i] - v[i] * radial
    }))
}

/// Entrywise normalization of `v + step·t`.
pub fn circle_retract(v: &CVector, t: &CVector, step: f64) -> Result<CVector> {
    if v.len() != t.len() {
        return shape_err("circle point and tangent differ in length");
    }
    let mut out = v.clone();
    for i in 0..v.len() {
        let z = v[i] + t[i] * step;
        let n = z.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numerical(format!(
                "entry {i} vanished in circle retraction"
            )));
        }
        out[i] = z / n;
    }
    Ok(out)
}

impl Manifold for Circle {
    type Point = CVector;
    type Tangent = CVector;
    type Ambient = CVector;

    fn project(&self, x: &CVector, e: &CVector) -> Result<CVector> {
        circle_project(x, e)
    }

    fn inner(&self, _x: &CVector, a: &CVector, b: &CVector) -> f64 {
        a.dotc(b).re
    }

    fn retract(&self, x: &CVector, d: &CVector, step: f64) -> Result<CVector> {
        circle_retract(x, d, step)
    }

    fn transport(&self, _from: &CVector, to: &CVector, d: &CVector) -> CVector {
        circle_project(to, d).expect("points on one manifold share a length")
    }

    fn lincomb(&self, a: f64, x: &CVector, b: f64, y: &CVector) -> CVector {
        x * C64::new(a, 0.0) + y * C64::new(b, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgOptions {
    /// Stop once one iteration lowers the cost by at most this much.
    pub epsilon: f64,
    pub max_iters: usize,
    pub contraction: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iters: 1000,
            contraction: 0.5,
            armijo_c: 1e-4,
            initial_step: 1.0,
            max_backtracks: 50,
        }
    }
}

impl CgOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::Config("contraction must lie in (0, 1)".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c <= 0.5) {
            return Err(Error::Config("Armijo constant must lie in (0, 0.5]".into()));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::Config("initial step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CgReport<P> {
    pub point: P,
    /// Cost at the start point followed by the cost after each accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// The line search ran out of backtracks.
    pub stalled: bool,
}

impl<P> CgReport<P> {
    pub fn final_cost(&self) -> f64 {
        *self.trace.last().expect("trace holds the start cost")
    }
}

/// Minimizes `cost` over `manifold` from `x0`.
///
/// `egrad` returns the Euclidean gradient for the real inner product
/// `Re tr(AᴴB)` (see the module docs for the relation to `∂f/∂X*`).
pub fn cg_minimize<M, F, G>(
    manifold: &M,
    cost: F,
    egrad: G,
    x0: M::Point,
    opts: &CgOptions,
) -> Result<CgReport<M::Point>>
where
    M: Manifold,
    F: Fn(&M::Point) -> f64,
    G: Fn(&M::Point) -> M::Ambient,
{
    opts.validate()?;
    let mut x = x0;
    let mut f = cost(&x);
    if !f.is_finite() {
        return Err(Error::Numerical(
            "cost is not finite at the start point".into(),
        ));
    }
    let mut grad = manifold.project(&x, &egrad(&x))?;
    let mut dir = manifold.lincomb(-1.0, &grad, 0.0, &grad);
    let mut trace = vec![f];
    let mut last_decrease: Option<f64> = None;
    let mut last_step = opts.initial_step;
    let mut stalled = false;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let gg = manifold.inner(&x, &grad, &grad);
        if gg == 0.0 {
            break;
        }
        let mut slope = manifold.inner(&x, &grad, &dir);
        if !(slope < 0.0) {
            dir = manifold.lincomb(-1.0, &grad, 0.0, &grad);
            slope = -gg;
        }

        // First trial: assume the decrease of the previous iteration repeats.
        let mut step = match last_decrease {
            Some(dec) if dec > 0.0 => (2.02 * dec / -slope).min(4.0 * last_step),
            Some(_) => 2.0 * last_step,
            None => opts.initial_step,
        };
        if !(step.is_finite() && step > 0.0) {
            step = opts.initial_step;
        }

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            if let Ok(candidate) = manifold.retract(&x, &dir, step) {
                let fc = cost(&candidate);
                if fc.is_finite() && fc <= f + opts.armijo_c * step * slope {
                    accepted = Some((candidate, fc));
                    break;
                }
            }
            step *= opts.contraction;
        }
        let Some((mut x_new, mut f_new)) = accepted else {
            stalled = true;
            break;
        };

        // Safeguarded quadratic interpolation inside the accepted step; kept
        // only if it lowers the cost further, so the Armijo bound still holds.
        let curvature = f_new - f - slope * step;
        if curvature > 0.0 {
            let q = -slope * step * step / (2.0 * curvature);
            if q > 0.1 * step && q < 0.9 * step {
                if let Ok(candidate) = manifold.retract(&x, &dir, q) {
                    let fq = cost(&candidate);
                    if fq.is_finite() && fq < f_new {
                        x_new = candidate;
                        f_new = fq;
                        step = q;
                    }
                }
            }
        }
        iterations += 1;
        last_step = step;

        let grad_new = manifold.project(&x_new, &egrad(&x_new))?;
        let grad_old_t = manifold.transport(&x, &x_new, &grad);
        let diff = manifold.lincomb(1.0, &grad_new, -1.0, &grad_old_t);
        let eta = (manifold.inner(&x_new, &grad_new, &diff) / gg).max(0.0);
        let dir_t = manifold.transport(&x, &x_new, &dir);
        dir = manifold.lincomb(-1.0, &grad_new, eta, &dir_t);

        let decrease = f - f_new;
        last_decrease = Some(decrease);
        x = x_new;
        f = f_new;
        grad = grad_new;
        trace.push(f);
        if decrease <= opts.epsilon {
            break;
        }
    }

    Ok(CgReport {
        point: x,
        trace,
        iterations,
        stalled,
    })
}
