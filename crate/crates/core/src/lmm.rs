//! ML/REML estimation through the penalized least-squares system.
//!
//! The random effects are written `b = Λu` with `Λ = diag(θ)` per term and
//! `θ = σ_term / σ_ε`. For a given `θ` the fit solves
//!
//! ```text
//! [ΛᵀZᵀZΛ + I   ΛᵀZᵀX] [u]   [ΛᵀZᵀy]
//! [XᵀZΛ         XᵀX  ] [β] = [Xᵀy  ]
//! ```
//!
//! through the block Cholesky factors `R_ZZ`, `R_ZX`, `R_X`; `β` and `σ_ε²` are
//! profiled out. The equivalent precision form stacks `Δ = Λ⁻¹` under `Z`
//! (see [`AugmentedSystem`]).
//!
//! Random terms are intercepts, so `ZᵀZ` is diagonal inside each term. With
//! at most two terms `R_ZZ` is built from the larger (diagonal) block and a
//! dense Schur complement for the smaller one.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{DesignMatrices, RandomTerm};
use crate::linalg::{chol_upper, solve_upper, solve_upper_transpose};
use crate::optimize::{nelder_mead, newton_polish, NelderMeadOptions};
use crate::{Error, Result};

/// Smallest relative standard deviation searched; variance ratio 1e-12.
pub const THETA_MIN: f64 = 1e-6;
/// Largest relative standard deviation searched; variance ratio 1e8.
pub const THETA_MAX: f64 = 1e4;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Ml,
    Reml,
}

/// Variance components and their relative standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    /// Experimental-unit variance; 0 when the term is absent.
    pub sigma_b2: f64,
    /// Pseudo-unit variance; 0 when the term is absent.
    pub sigma_eta2: f64,
    pub sigma_eps2: f64,
    pub terms: Vec<RandomTerm>,
    /// `σ_term / σ_ε`, aligned with `terms`.
    pub theta: Vec<f64>,
}

impl VarianceComponents {
    /// Components for the given random terms; variances of absent terms are ignored.
    pub fn new(terms: &[RandomTerm], sigma_b2: f64, sigma_eta2: f64, sigma_eps2: f64) -> Result<Self> {
        if !(sigma_eps2 > 0.0 && sigma_eps2.is_finite()) {
            return Err(Error::Invalid(format!("residual variance must be positive, got {sigma_eps2}")));
        }
        let variance = |t: &RandomTerm| match t {
            RandomTerm::ExperimentalUnit => sigma_b2,
            RandomTerm::PseudoUnit => sigma_eta2,
        };
        let mut theta = Vec::with_capacity(terms.len());
        for t in terms {
            let v = variance(t);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("variance of {t:?} must be finite and >= 0")));
            }
            theta.push((v / sigma_eps2).sqrt());
        }
        Ok(Self::from_theta(terms, &theta, sigma_eps2))
    }

    pub fn from_theta(terms: &[RandomTerm], theta: &[f64], sigma_eps2: f64) -> Self {
        let mut vc = VarianceComponents {
            sigma_b2: 0.0,
            sigma_eta2: 0.0,
            sigma_eps2,
            terms: terms.to_vec(),
            theta: theta.to_vec(),
        };
        for (t, th) in terms.iter().zip(theta) {
            let v = th * th * sigma_eps2;
            match t {
                RandomTerm::ExperimentalUnit => vc.sigma_b2 = v,
                RandomTerm::PseudoUnit => vc.sigma_eta2 = v,
            }
        }
        vc
    }

    pub fn variance(&self, term: RandomTerm) -> f64 {
        match term {
            RandomTerm::ExperimentalUnit => self.sigma_b2,
            RandomTerm::PseudoUnit => self.sigma_eta2,
        }
    }

    /// Relative precision `Δ = σ_ε / σ_term` per term, with `θ` floored at [`THETA_MIN`].
    pub fn delta(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| 1.0 / t.max(THETA_MIN)).collect()
    }
}

/// Response and design stacked with the penalty rows: `ỹ = [y; 0]`,
/// `X̃ = [X; 0]`, `Z̃ = [Z; Δ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub y_tilde: DVector<f64>,
    pub x_tilde: DMatrix<f64>,
    pub z_tilde: DMatrix<f64>,
    pub q: usize,
}

/// Stacks the penalized system for the precision implied by `vc`.
pub fn assemble_augmented_system(dm: &DesignMatrices, y: &[f64], vc: &VarianceComponents) -> Result<AugmentedSystem> {
    let terms: Vec<RandomTerm> = dm.random.iter().map(|b| b.term).collect();
    if terms != vc.terms {
        return Err(Error::Shape(format!("components for {:?}, design has {:?}", vc.terms, terms)));
    }
    AugmentedSystem::with_delta(dm, y, &vc.delta())
}

impl AugmentedSystem {
    /// Stacks the system with an explicit per-term `Δ` (0 means no penalty).
    pub fn with_delta(dm: &DesignMatrices, y: &[f64], delta: &[f64]) -> Result<Self> {
        let n = dm.n_obs();
        if y.len() != n {
            return Err(Error::Shape(format!("{} responses for {} rows", y.len(), n)));
        }
        if delta.len() != dm.random.len() {
            return Err(Error::Shape(format!("{} penalties for {} random terms", delta.len(), dm.random.len())));
        }
        if dm.random.is_empty() {
            return Err(Error::Invalid("the augmented system needs a random term".into()));
        }
        let q = dm.n_random();
        let p = dm.n_fixed();
        let mut y_tilde = DVector::zeros(n + q);
        y_tilde.rows_mut(0, n).copy_from_slice(y);
        let mut x_tilde = DMatrix::zeros(n + q, p);
        x_tilde.view_mut((0, 0), (n, p)).copy_from(&dm.x);
        let mut z_tilde = DMatrix::zeros(n + q, q);
        z_tilde.view_mut((0, 0), (n, q)).copy_from(&dm.z());
        let mut offset = 0;
        for (b, &d) in dm.random.iter().zip(delta) {
            for c in 0..b.n_levels() {
                z_tilde[(n + offset + c, offset + c)] = d;
            }
            offset += b.n_levels();
        }
        Ok(AugmentedSystem {
            y_tilde,
            x_tilde,
            z_tilde,
            q,
        })
    }

    /// `v̂ = (Z̃ᵀZ̃)⁻¹ Z̃ᵀ(ỹ − X̃β)`.
    pub fn random_effects(&self, beta: &[f64]) -> Result<Vec<f64>> {
        if beta.len() != self.x_tilde.ncols() {
            return Err(Error::Shape(format!("{} coefficients for {} columns", beta.len(), self.x_tilde.ncols())));
        }
        let ztz = self.z_tilde.transpose() * &self.z_tilde;
        let chol = ztz
            .cholesky()
            .ok_or_else(|| Error::Singular("Z̃ᵀZ̃ is not positive definite".into()))?;
        let r = &self.y_tilde - &self.x_tilde * DVector::from_column_slice(beta);
        Ok(chol.solve(&(self.z_tilde.transpose() * r)).as_slice().to_vec())
    }

    /// Joint least-squares solution `(β̂, v̂)` of `ỹ ≈ X̃β + Z̃v`.
    pub fn solve(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let w = self.stacked();
        let chol = (w.transpose() * &w)
            .cholesky()
            .ok_or_else(|| Error::Singular("[X̃ Z̃] is rank deficient".into()))?;
        let sol = chol.solve(&(w.transpose() * &self.y_tilde));
        let p = self.x_tilde.ncols();
        Ok((sol.rows(0, p).as_slice().to_vec(), sol.rows(p, self.q).as_slice().to_vec()))
    }

    /// `ỹ − X̃β − Z̃v`.
    pub fn residual(&self, beta: &[f64], v: &[f64]) -> DVector<f64> {
        &self.y_tilde - &self.x_tilde * DVector::from_column_slice(beta) - &self.z_tilde * DVector::from_column_slice(v)
    }

    /// `[X̃ Z̃]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let (rows, p) = self.x_tilde.shape();
        let mut w = DMatrix::zeros(rows, p + self.q);
        w.view_mut((0, 0), (rows, p)).copy_from(&self.x_tilde);
        w.view_mut((0, p), (rows, self.q)).copy_from(&self.z_tilde);
        w
    }
}

/// Dense Cholesky blocks at one `θ`, in elimination order (see
/// [`CrossProducts::column_order`]):
/// `R_ZZᵀR_ZZ = ΛᵀZᵀZΛ + I`, `R_ZZᵀR_ZX = ΛᵀZᵀX`, `R_XᵀR_X = XᵀX − R_ZXᵀR_ZX`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyBlocks {
    pub r_zz: DMatrix<f64>,
    pub r_zx: DMatrix<f64>,
    pub r_x: DMatrix<f64>,
}

/// Sufficient cross products of one `(X, Z, y)` problem.
///
/// Accumulation runs over rows in a canonical order, so a permutation of the
/// observations yields bit-identical products.
#[derive(Debug, Clone)]
pub struct CrossProducts {
    n: usize,
    p: usize,
    /// Design indices of the random terms in elimination order.
    order: Vec<usize>,
    q1: usize,
    q2: usize,
    d1: Vec<f64>,
    d2: Vec<f64>,
    c: DMatrix<f64>,
    ztx: DMatrix<f64>,
    zty: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    /// Design column of every internal random-effect position.
    columns: Vec<usize>,
}

/// Upper factor `[[S, S⁻¹A₁₂], [0, R_S]]` of `ΛᵀZᵀZΛ + I`.
struct Rzz {
    s: Vec<f64>,
    a12: DMatrix<f64>,
    r_s: DMatrix<f64>,
}

impl Rzz {
    /// Solves `R_ZZᵀ x = rhs`.
    fn solve_t(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let q1 = self.s.len();
        let mut x = rhs.clone();
        for i in 0..q1 {
            x[i] /= self.s[i];
        }
        if self.r_s.nrows() > 0 {
            let scaled = DVector::from_fn(q1, |i, _| x[i] / self.s[i]);
            let w = rhs.rows(q1, self.r_s.nrows()) - self.a12.tr_mul(&scaled);
            let x2 = solve_upper_transpose(&self.r_s, &w);
            x.rows_mut(q1, self.r_s.nrows()).copy_from(&x2);
        }
        x
    }

    /// Solves `R_ZZ x = rhs`.
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let q1 = self.s.len();
        let q2 = self.r_s.nrows();
        let mut x = rhs.clone();
        let x2 = if q2 > 0 {
            solve_upper(&self.r_s, &rhs.rows(q1, q2).into_owned())
        } else {
            DVector::zeros(0)
        };
        let coupling = &self.a12 * &x2;
        for i in 0..q1 {
            x[i] = (rhs[i] - coupling[i] / self.s[i]) / self.s[i];
        }
        x.rows_mut(q1, q2).copy_from(&x2);
        x
    }

    fn log_det2(&self) -> f64 {
        2.0 * self.s.iter().map(|v| v.ln()).sum::<f64>() + 2.0 * (0..self.r_s.nrows()).map(|i| self.r_s[(i, i)].ln()).sum::<f64>()
    }

    fn dense(&self) -> DMatrix<f64> {
        let q1 = self.s.len();
        let q2 = self.r_s.nrows();
        let mut r = DMatrix::zeros(q1 + q2, q1 + q2);
        for i in 0..q1 {
            r[(i, i)] = self.s[i];
            for j in 0..q2 {
                r[(i, q1 + j)] = self.a12[(i, j)] / self.s[i];
            }
        }
        r.view_mut((q1, q1), (q2, q2)).copy_from(&self.r_s);
        r
    }
}

/// Everything derived from one `θ`.
struct Factorization {
    theta1: f64,
    theta2: f64,
    rzz: Rzz,
    r_zx: DMatrix<f64>,
    r_x: DMatrix<f64>,
    c_u: DVector<f64>,
    c_beta: DVector<f64>,
    r2: f64,
}

fn cmp_rows(x: &DMatrix<f64>, keys: &[Vec<usize>], y: &[f64], a: usize, b: usize) -> Ordering {
    let mut ord = Ordering::Equal;
    for k in keys {
        ord = ord.then(k[a].cmp(&k[b]));
    }
    for j in 0..x.ncols() {
        ord = ord.then_with(|| x[(a, j)].total_cmp(&x[(b, j)]));
    }
    ord.then_with(|| y[a].total_cmp(&y[b]))
}

impl CrossProducts {
    pub fn new(dm: &DesignMatrices, y: &[f64]) -> Result<Self> {
        let n = dm.n_obs();
        let p = dm.n_fixed();
        if y.len() != n {
            return Err(Error::Shape(format!("{} responses for {} rows", y.len(), n)));
        }
        if dm.random.len() > 2 {
            return Err(Error::Invalid("at most two random terms are supported".into()));
        }
        if let Some(b) = dm.random.iter().find(|b| b.index.len() != n) {
            return Err(Error::Shape(format!("random term {:?} covers {} of {} rows", b.term, b.index.len(), n)));
        }
        let mut order: Vec<usize> = (0..dm.random.len()).collect();
        order.sort_by_key(|&i| core::cmp::Reverse(dm.random[i].n_levels()));
        let q1 = order.first().map_or(0, |&i| dm.random[i].n_levels());
        let q2 = order.get(1).map_or(0, |&i| dm.random[i].n_levels());
        let mut offsets = vec![0; dm.random.len()];
        let mut acc = 0;
        for (i, b) in dm.random.iter().enumerate() {
            offsets[i] = acc;
            acc += b.n_levels();
        }
        let mut columns = Vec::with_capacity(q1 + q2);
        for &i in &order {
            columns.extend((0..dm.random[i].n_levels()).map(|c| offsets[i] + c));
        }

        let keys: Vec<Vec<usize>> = order.iter().map(|&i| dm.random[i].index.clone()).collect();
        let mut rows: Vec<usize> = (0..n).collect();
        rows.sort_by(|&a, &b| cmp_rows(&dm.x, &keys, y, a, b));

        let q = q1 + q2;
        let mut d1 = vec![0.0; q1];
        let mut d2 = vec![0.0; q2];
        let mut c = DMatrix::zeros(q1, q2);
        let mut ztx = DMatrix::zeros(q, p);
        let mut zty = DVector::zeros(q);
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        let mut xr = vec![0.0; p];
        for &r in &rows {
            for j in 0..p {
                xr[j] = dm.x[(r, j)];
            }
            let yr = y[r];
            yty += yr * yr;
            for j in 0..p {
                xty[j] += xr[j] * yr;
                for k in 0..=j {
                    xtx[(j, k)] += xr[j] * xr[k];
                }
            }
            let mut cols = [usize::MAX; 2];
            for (slot, key) in keys.iter().enumerate() {
                let col = if slot == 0 { key[r] } else { q1 + key[r] };
                cols[slot] = col;
                zty[col] += yr;
                for j in 0..p {
                    ztx[(col, j)] += xr[j];
                }
            }
            if q1 > 0 {
                d1[cols[0]] += 1.0;
            }
            if q2 > 0 {
                d2[cols[1] - q1] += 1.0;
                c[(cols[0], cols[1] - q1)] += 1.0;
            }
        }
        for j in 0..p {
            for k in 0..j {
                xtx[(k, j)] = xtx[(j, k)];
            }
        }
        Ok(CrossProducts {
            n,
            p,
            order,
            q1,
            q2,
            d1,
            d2,
            c,
            ztx,
            zty,
            xtx,
            xty,
            yty,
            columns,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    /// Design random-effect column at each position of the elimination order.
    pub fn column_order(&self) -> &[usize] {
        &self.columns
    }

    fn thetas(&self, theta: &[f64]) -> Result<(f64, f64)> {
        if theta.len() != self.order.len() {
            return Err(Error::Shape(format!("{} parameters for {} random terms", theta.len(), self.order.len())));
        }
        if theta.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::Invalid("theta must be finite and >= 0".into()));
        }
        let t1 = self.order.first().map_or(0.0, |&i| theta[i]);
        let t2 = self.order.get(1).map_or(0.0, |&i| theta[i]);
        Ok((t1, t2))
    }

    fn factor(&self, theta: &[f64]) -> Result<Factorization> {
        let (t1, t2) = self.thetas(theta)?;
        let (q1, q2, p) = (self.q1, self.q2, self.p);
        let s: Vec<f64> = self.d1.iter().map(|d| (t1 * t1 * d + 1.0).sqrt()).collect();
        let a12 = &self.c * (t1 * t2);
        let mut schur = DMatrix::from_fn(q2, q2, |i, j| {
            let diag = if i == j { t2 * t2 * self.d2[i] + 1.0 } else { 0.0 };
            diag
        });
        if q2 > 0 {
            let mut scaled = a12.clone();
            for i in 0..q1 {
                let w = 1.0 / s[i];
                for j in 0..q2 {
                    scaled[(i, j)] *= w;
                }
            }
            schur -= scaled.tr_mul(&scaled);
        }
        let r_s = chol_upper(&schur, 1e-15).map_err(|_| Error::Singular("ΛᵀZᵀZΛ + I lost definiteness".into()))?;
        let rzz = Rzz { s, a12, r_s };

        let mut lztx = self.ztx.clone();
        let mut lzty = self.zty.clone();
        for i in 0..q1 + q2 {
            let t = if i < q1 { t1 } else { t2 };
            lzty[i] *= t;
            for j in 0..p {
                lztx[(i, j)] *= t;
            }
        }
        let mut r_zx = DMatrix::zeros(q1 + q2, p);
        for j in 0..p {
            let col = rzz.solve_t(&lztx.column(j).into_owned());
            r_zx.set_column(j, &col);
        }
        let c_u = rzz.solve_t(&lzty);
        let gram = &self.xtx - r_zx.tr_mul(&r_zx);
        let r_x = chol_upper(&gram, 1e-14).map_err(|e| match e {
            Error::RankDeficient { pivot, .. } => {
                let scale = (0..p).map(|i| gram[(i, i)].abs()).fold(0.0, f64::max);
                Error::SingularRx {
                    condition: scale / pivot.abs().max(f64::MIN_POSITIVE),
                }
            }
            other => other,
        })?;
        let c_beta = solve_upper_transpose(&r_x, &(&self.xty - r_zx.tr_mul(&c_u)));
        let r2 = self.yty - c_u.norm_squared() - c_beta.norm_squared();
        Ok(Factorization {
            theta1: t1,
            theta2: t2,
            rzz,
            r_zx,
            r_x,
            c_u,
            c_beta,
            r2,
        })
    }

    pub fn cholesky_blocks(&self, theta: &[f64]) -> Result<CholeskyBlocks> {
        let f = self.factor(theta)?;
        Ok(CholeskyBlocks {
            r_zz: f.rzz.dense(),
            r_zx: f.r_zx,
            r_x: f.r_x,
        })
    }

    /// `ΛᵀZᵀZΛ + I` in elimination order (dense; for checks).
    pub fn penalized_gram(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let (t1, t2) = self.thetas(theta)?;
        let (q1, q2) = (self.q1, self.q2);
        let mut a = DMatrix::identity(q1 + q2, q1 + q2);
        for i in 0..q1 {
            a[(i, i)] += t1 * t1 * self.d1[i];
            for j in 0..q2 {
                a[(i, q1 + j)] = t1 * t2 * self.c[(i, j)];
                a[(q1 + j, i)] = t1 * t2 * self.c[(i, j)];
            }
        }
        for j in 0..q2 {
            a[(q1 + j, q1 + j)] += t2 * t2 * self.d2[j];
        }
        Ok(a)
    }

    pub fn xtx(&self) -> &DMatrix<f64> {
        &self.xtx
    }

    /// `ΛᵀZᵀX` in elimination order.
    pub fn scaled_ztx(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let (t1, t2) = self.thetas(theta)?;
        let mut m = self.ztx.clone();
        for i in 0..self.q1 + self.q2 {
            let t = if i < self.q1 { t1 } else { t2 };
            for j in 0..self.p {
                m[(i, j)] *= t;
            }
        }
        Ok(m)
    }

    fn criterion_value(&self, f: &Factorization, criterion: Criterion) -> f64 {
        let n = self.n as f64;
        let r2 = f.r2.max(f64::MIN_POSITIVE);
        let ld = f.rzz.log_det2();
        match criterion {
            Criterion::Ml => ld + n * (1.0 + LOG_2PI + (r2 / n).ln()),
            Criterion::Reml => {
                let dof = n - self.p as f64;
                let ldx = 2.0 * (0..self.p).map(|i| f.r_x[(i, i)].ln()).sum::<f64>();
                ld + ldx + dof * (1.0 + LOG_2PI + (r2 / dof).ln())
            }
        }
    }

    /// Profiled criterion (−2 log-likelihood or the REML criterion) at `θ`.
    pub fn deviance(&self, theta: &[f64], criterion: Criterion) -> Result<f64> {
        if criterion == Criterion::Reml && self.n <= self.p {
            return Err(Error::ZeroDf("REML residual".into()));
        }
        let f = self.factor(theta)?;
        Ok(self.criterion_value(&f, criterion))
    }
}

/// Profiled deviance at `θ` (one entry per random term of `dm`).
pub fn profiled_deviance(theta: &[f64], dm: &DesignMatrices, y: &[f64], criterion: Criterion) -> Result<f64> {
    CrossProducts::new(dm, y)?.deviance(theta, criterion)
}

/// Predicted random effects of one term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub term: RandomTerm,
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLmm {
    pub criterion: Criterion,
    pub beta: Vec<f64>,
    /// BLUPs per random term, in design order.
    pub random: Vec<RandomEffects>,
    pub vc: VarianceComponents,
    pub deviance: f64,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub mse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Terms whose variance was estimated on the boundary (reported as 0).
    pub boundary: Vec<RandomTerm>,
    pub warnings: Vec<String>,
}

impl FittedLmm {
    pub fn n_obs(&self) -> usize {
        self.fitted.len()
    }

    pub fn random_effects(&self, term: RandomTerm) -> Option<&RandomEffects> {
        self.random.iter().find(|r| r.term == term)
    }
}

fn solution(
    cp: &CrossProducts,
    dm: &DesignMatrices,
    y: &[f64],
    theta: &[f64],
    criterion: Criterion,
) -> Result<(Vec<f64>, Vec<RandomEffects>, Vec<f64>, f64, f64)> {
    let f = cp.factor(theta)?;
    let deviance = cp.criterion_value(&f, criterion);
    let beta = solve_upper(&f.r_x, &f.c_beta);
    let u = f.rzz.solve(&(&f.c_u - &f.r_zx * &beta));
    let mut b_internal = u;
    for i in 0..cp.q1 + cp.q2 {
        b_internal[i] *= if i < cp.q1 { f.theta1 } else { f.theta2 };
    }
    let penalty: f64 = (0..cp.q1 + cp.q2)
        .map(|i| {
            let t = if i < cp.q1 { f.theta1 } else { f.theta2 };
            if t > 0.0 {
                (b_internal[i] / t).powi(2)
            } else {
                0.0
            }
        })
        .sum();
    let mut b_design = vec![0.0; cp.q1 + cp.q2];
    for (pos, &col) in cp.columns.iter().enumerate() {
        b_design[col] = b_internal[pos];
    }
    let mut random = Vec::with_capacity(dm.random.len());
    let mut offset = 0;
    for blk in &dm.random {
        random.push(RandomEffects {
            term: blk.term,
            labels: blk.labels.clone(),
            values: b_design[offset..offset + blk.n_levels()].to_vec(),
        });
        offset += blk.n_levels();
    }
    let beta = beta.as_slice().to_vec();
    let fitted = linear_predictor(dm, &beta, &random);
    let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)).sum();
    let dof = match criterion {
        Criterion::Ml => cp.n as f64,
        Criterion::Reml => (cp.n - cp.p) as f64,
    };
    let sigma2 = (rss + penalty) / dof;
    Ok((beta, random, fitted, sigma2, deviance))
}

fn linear_predictor(dm: &DesignMatrices, beta: &[f64], random: &[RandomEffects]) -> Vec<f64> {
    let xb = &dm.x * DVector::from_column_slice(beta);
    let mut out = xb.as_slice().to_vec();
    for (blk, re) in dm.random.iter().zip(random) {
        for (row, &c) in blk.index.iter().enumerate() {
            out[row] += re.values[c];
        }
    }
    out
}

fn assemble(
    dm: &DesignMatrices,
    y: &[f64],
    criterion: Criterion,
    theta: &[f64],
    parts: (Vec<f64>, Vec<RandomEffects>, Vec<f64>, f64, f64),
    converged: bool,
    iterations: usize,
    boundary: Vec<RandomTerm>,
    mut warnings: Vec<String>,
) -> FittedLmm {
    let (beta, random, fitted, sigma2, deviance) = parts;
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let mse = mse_of(y, &fitted);
    let terms: Vec<RandomTerm> = dm.random.iter().map(|b| b.term).collect();
    if dm.block(RandomTerm::ExperimentalUnit).is_some_and(|b| b.n_levels() < 2) {
        warnings.push("a single experimental unit: its effect is confounded with the intercept".into());
    }
    if !converged {
        warnings.push(format!("optimizer stopped at the iteration cap ({iterations})"));
    }
    FittedLmm {
        criterion,
        beta,
        random,
        vc: VarianceComponents::from_theta(&terms, theta, sigma2),
        deviance,
        fitted,
        residuals,
        mse,
        converged,
        iterations,
        boundary,
        warnings,
    }
}

/// Maximizes the (restricted) likelihood over `θ`.
///
/// The search runs on `log θ` inside `[THETA_MIN, THETA_MAX]`, starting from
/// equal variances, and is refined by finite-difference Newton steps. A term
/// whose deviance at `θ = 0` is no worse than at the optimum is set to 0 and
/// listed in `boundary`.
pub fn fit(dm: &DesignMatrices, y: &[f64], criterion: Criterion) -> Result<FittedLmm> {
    let cp = CrossProducts::new(dm, y)?;
    let k = dm.random.len();
    let objective = |x: &[f64]| {
        let theta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        cp.deviance(&theta, criterion).unwrap_or(f64::INFINITY)
    };
    let lower = vec![THETA_MIN.ln(); k];
    let upper = vec![THETA_MAX.ln(); k];
    let opts = NelderMeadOptions::default();
    let start = vec![0.0; k];
    // Surface input problems (shape, REML df) before searching.
    cp.deviance(&vec![1.0; k], criterion)?;
    let min = nelder_mead(objective, &start, &lower, &upper, &opts);
    let (x, mut best) = newton_polish(objective, &min.x, &lower, &upper, 1e-4, 1e-2, 1e-10);
    let mut theta: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let mut boundary = Vec::new();
    for i in 0..k {
        let mut trial = theta.clone();
        trial[i] = 0.0;
        if let Ok(d) = cp.deviance(&trial, criterion) {
            if d <= best + 1e-9 {
                theta = trial;
                best = best.min(d);
                boundary.push(dm.random[i].term);
            }
        }
    }
    let parts = solution(&cp, dm, y, &theta, criterion)?;
    Ok(assemble(dm, y, criterion, &theta, parts, min.converged, min.iterations, boundary, Vec::new()))
}

/// Fits with the variance ratios of `vc` held fixed; `β`, the BLUPs and
/// `σ_ε²` are still estimated.
pub fn fit_at(dm: &DesignMatrices, y: &[f64], criterion: Criterion, vc: &VarianceComponents) -> Result<FittedLmm> {
    let terms: Vec<RandomTerm> = dm.random.iter().map(|b| b.term).collect();
    if terms != vc.terms {
        return Err(Error::Shape(format!("components for {:?}, design has {:?}", vc.terms, terms)));
    }
    let cp = CrossProducts::new(dm, y)?;
    let parts = solution(&cp, dm, y, &vc.theta, criterion)?;
    Ok(assemble(dm, y, criterion, &vc.theta, parts, true, 0, Vec::new(), Vec::new()))
}

/// `Xβ̂ + Zv̂` for a design with the same columns as the one fitted.
pub fn predict(fm: &FittedLmm, dm: &DesignMatrices) -> Result<Vec<f64>> {
    if fm.beta.len() != dm.n_fixed() {
        return Err(Error::Shape(format!("{} coefficients for {} columns", fm.beta.len(), dm.n_fixed())));
    }
    if fm.random.len() != dm.random.len()
        || fm
            .random
            .iter()
            .zip(&dm.random)
            .any(|(r, b)| r.term != b.term || r.values.len() != b.n_levels())
    {
        return Err(Error::Shape("random terms differ from the fitted model".into()));
    }
    Ok(linear_predictor(dm, &fm.beta, &fm.random))
}

pub fn mse(fm: &FittedLmm) -> f64 {
    fm.mse
}

/// `(1/N) Σ (y − ŷ)²`.
pub fn mse_of(y: &[f64], fitted: &[f64]) -> f64 {
    y.iter().zip(fitted).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, Factor, LongDataset, Observation};

    fn one_way() -> (DesignMatrices, Vec<f64>) {
        let rows = [("1", 1.0), ("1", 3.0), ("2", 11.0), ("2", 13.0)]
            .iter()
            .enumerate()
            .map(|(j, &(eu, y))| Observation {
                eu: eu.into(),
                obs: Some(format!("{j}")),
                time: 1,
                rep: 1,
                levels: vec![],
                y,
            })
            .collect();
        let ds = LongDataset::new(Vec::<Factor>::new(), rows).unwrap();
        let dm = build_design(&ds, &[], &[RandomTerm::ExperimentalUnit], None).unwrap();
        (dm, ds.responses())
    }

    #[test]
    fn one_way_reml_matches_moment_estimates() {
        let (dm, y) = one_way();
        let fm = fit(&dm, &y, Criterion::Reml).unwrap();
        assert!(fm.converged);
        assert!((fm.beta[0] - 7.0).abs() < 1e-9);
        assert!((fm.vc.sigma_eps2 - 2.0).abs() < 1e-6, "{}", fm.vc.sigma_eps2);
        assert!((fm.vc.sigma_b2 - 49.0).abs() < 1e-6, "{}", fm.vc.sigma_b2);
        let b = &fm.random[0].values;
        assert!((b[0] + 4.9).abs() < 1e-6 && (b[1] - 4.9).abs() < 1e-6);
        assert!((fm.mse - 1.01).abs() < 1e-6);
    }

    #[test]
    fn zero_theta_is_ols() {
        let (dm, y) = one_way();
        let dev = profiled_deviance(&[0.0], &dm, &y, Criterion::Ml).unwrap();
        // OLS on the intercept: RSS = 100 + 2 * ... = Σ(y − 7)².
        let rss: f64 = y.iter().map(|v| (v - 7.0) * (v - 7.0)).sum();
        let n = 4.0;
        let want = n * (1.0 + LOG_2PI + (rss / n).ln());
        assert!((dev - want).abs() < 1e-12);
    }

    #[test]
    fn cholesky_block_identities() {
        let (dm, y) = one_way();
        let cp = CrossProducts::new(&dm, &y).unwrap();
        let theta = [1.7];
        let blocks = cp.cholesky_blocks(&theta).unwrap();
        let a = cp.penalized_gram(&theta).unwrap();
        assert!((blocks.r_zz.tr_mul(&blocks.r_zz) - &a).amax() < 1e-12);
        assert!((blocks.r_zz.tr_mul(&blocks.r_zx) - cp.scaled_ztx(&theta).unwrap()).amax() < 1e-12);
        let lhs = blocks.r_x.tr_mul(&blocks.r_x);
        let rhs = cp.xtx() - blocks.r_zx.tr_mul(&blocks.r_zx);
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn augmented_system_limits() {
        let (dm, y) = one_way();
        let big = AugmentedSystem::with_delta(&dm, &y, &[1e9]).unwrap();
        let v = big.random_effects(&[7.0]).unwrap();
        assert!(v.iter().all(|x| x.abs() < 1e-8));
        let none = AugmentedSystem::with_delta(&dm, &y, &[0.0]).unwrap();
        let v = none.random_effects(&[7.0]).unwrap();
        assert!((v[0] + 5.0).abs() < 1e-12 && (v[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn no_random_terms_is_ols() {
        let (dm, y) = one_way();
        let fixed = dm.with_random(&[]);
        let fm = fit(&fixed, &y, Criterion::Reml).unwrap();
        assert!((fm.beta[0] - 7.0).abs() < 1e-12);
        assert!((fm.vc.sigma_eps2 - 104.0 / 3.0).abs() < 1e-9);
    }
}
