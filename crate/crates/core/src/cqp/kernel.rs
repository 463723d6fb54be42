//! Primal-dual interior point method for separable convex QPs
//!
//! ```text
//! minimize    sum_i (h_i / 2) v_i^2 + c_i v_i + constant
//! subject to  A v = b
//!             lower_i <= v_i <= upper_i      (upper may be +inf)
//! ```
//!
//! with `h >= 0`. Mehrotra predictor-corrector steps; the normal equations
//! `A D^-1 A^T` are formed densely, which is adequate for a few hundred rows.
//! Feasibility is settled by an explicit phase-one LP that minimizes the
//! elastic violation of `A v = b`.

use serde::{Deserialize, Serialize};

use super::dense::DenseSym;
use crate::error::{Error, Result};
use crate::scalar::{inf_norm, Scalar};

/// Column-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCols<T> {
    nrows: usize,
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseCols<T> {
    /// Builds from per-column `(row, value)` lists. Entries must not repeat a row.
    pub fn from_columns(nrows: usize, columns: &[Vec<(usize, T)>]) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        let mut rows = Vec::new();
        let mut vals = Vec::new();
        col_ptr.push(0);
        for (j, col) in columns.iter().enumerate() {
            for &(r, v) in col {
                if r >= nrows {
                    return Err(Error::Structure(format!(
                        "column {j} references row {r} of {nrows}"
                    )));
                }
                rows.push(r);
                vals.push(v);
            }
            col_ptr.push(rows.len());
        }
        Ok(Self {
            nrows,
            col_ptr,
            rows,
            vals,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    #[inline]
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.rows[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    /// `A v`.
    pub fn mul(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.nrows];
        for (j, &vj) in v.iter().enumerate() {
            if vj != T::zero() {
                for (r, a) in self.col(j) {
                    out[r] += a * vj;
                }
            }
        }
        out
    }

    /// `A^T y`.
    pub fn tmul(&self, y: &[T]) -> Vec<T> {
        (0..self.ncols())
            .map(|j| self.col(j).map(|(r, a)| a * y[r]).sum())
            .collect()
    }
}

/// Separable convex QP in kernel form.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableQp<T> {
    pub hess: Vec<T>,
    pub cost: Vec<T>,
    pub constant: T,
    pub a: SparseCols<T>,
    pub rhs: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpmSettings<T> {
    /// Relative tolerance on primal, stationarity and complementarity residuals.
    pub tol: T,
    /// Phase-one violation, relative to `1 + |b|_inf`, above which the problem
    /// is declared infeasible.
    pub feas_tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for IpmSettings<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            feas_tol: T::lit(1e-7),
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

/// KKT residuals of a primal-dual candidate, absolute and relative.
///
/// Relative values divide primal residuals by `1 + |b|_inf`, stationarity by
/// `1 + |c|_inf` and complementarity by `1 + |objective|`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual<T> {
    pub primal_abs: T,
    pub stationarity_abs: T,
    pub complementarity_abs: T,
    pub primal: T,
    pub stationarity: T,
    pub complementarity: T,
}

impl<T: Scalar> KktResidual<T> {
    pub fn max_relative(&self) -> T {
        self.primal.max(self.stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSolution<T> {
    pub status: QpStatus,
    pub x: Vec<T>,
    /// Multipliers of `A v = b`.
    pub y: Vec<T>,
    pub z_lower: Vec<T>,
    pub z_upper: Vec<T>,
    pub objective: T,
    pub iterations: usize,
    /// Minimum elastic violation found by phase one, when it ran.
    pub infeasibility: Option<T>,
    pub kkt: KktResidual<T>,
}

impl<T: Scalar> SeparableQp<T> {
    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.cost.len();
        let dims = [self.hess.len(), self.lower.len(), self.upper.len(), self.a.ncols()];
        if dims.iter().any(|&d| d != n) || self.a.nrows() != self.rhs.len() {
            return Err(Error::Structure(format!(
                "dimension mismatch: {n} costs, hess/lower/upper/cols {dims:?}, {} rows for {} rhs",
                self.a.nrows(),
                self.rhs.len()
            )));
        }
        for i in 0..n {
            if !(self.hess[i] >= T::zero()) {
                return Err(Error::Structure(format!("negative curvature on variable {i}")));
            }
            if !self.lower[i].is_finite() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(Error::Structure(format!(
                    "variable {i} has invalid bounds [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        self.constant
            + x.iter()
                .zip(&self.hess)
                .zip(&self.cost)
                .map(|((&v, &h), &c)| half * h * v * v + c * v)
                .sum::<T>()
    }

    /// Gradient `H v + c`.
    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.hess)
            .zip(&self.cost)
            .map(|((&v, &h), &c)| h * v + c)
            .collect()
    }

    /// Lagrangian dual value at equality multipliers `y`: a valid lower bound
    /// on the optimum for any `y`, whatever state the solver ended in. `upper`
    /// may tighten the bounds with ones implied by the constraints.
    pub fn lagrangian_bound(&self, y: &[T], upper: &[T]) -> T {
        let aty = self.a.tmul(y);
        let half = T::lit(0.5);
        let mut g = self.constant + y.iter().zip(&self.rhs).map(|(&a, &b)| a * b).sum::<T>();
        for j in 0..self.num_vars() {
            let (h, r) = (self.hess[j], self.cost[j] - aty[j]);
            let (l, u) = (self.lower[j], upper[j].min(self.upper[j]));
            let v = if h > T::zero() {
                (-r / h).max(l).min(u)
            } else if r >= T::zero() {
                l
            } else {
                u
            };
            if !v.is_finite() {
                return T::neg_infinity();
            }
            g += half * h * v * v + r * v;
        }
        g
    }

    /// Residuals of a full primal-dual candidate.
    pub fn kkt(&self, x: &[T], y: &[T], z_lower: &[T], z_upper: &[T]) -> KktResidual<T> {
        let z = T::zero();
        let ax = self.a.mul(x);
        let mut primal = ax
            .iter()
            .zip(&self.rhs)
            .fold(z, |m, (&l, &r)| m.max((l - r).abs()));
        for i in 0..x.len() {
            primal = primal.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        let aty = self.a.tmul(y);
        let grad = self.gradient(x);
        let mut stat = z;
        let mut comp = z;
        for i in 0..x.len() {
            let r = grad[i] - aty[i] - z_lower[i] + z_upper[i];
            stat = stat.max(r.abs());
            // sign-infeasible multipliers count as stationarity error
            stat = stat.max(-z_lower[i]).max(-z_upper[i]);
            comp += z_lower[i].abs() * (x[i] - self.lower[i]).abs();
            if self.upper[i].is_finite() {
                comp += z_upper[i].abs() * (self.upper[i] - x[i]).abs();
            }
        }
        let obj = self.objective(x);
        KktResidual {
            primal_abs: primal,
            stationarity_abs: stat,
            complementarity_abs: comp,
            primal: primal / (T::one() + inf_norm(&self.rhs)),
            stationarity: stat / (T::one() + inf_norm(&self.cost)),
            complementarity: comp / (T::one() + obj.abs()),
        }
    }

    /// Residuals of a primal candidate with the best-fitting multipliers.
    ///
    /// Equality multipliers are the least-squares fit of the gradient over the
    /// variables strictly inside their bounds (within `active_tol`); bound
    /// multipliers take the remaining reduced cost where its sign is admissible.
    pub fn kkt_primal(&self, x: &[T], active_tol: T) -> KktResidual<T> {
        let n = x.len();
        let m = self.num_rows();
        let grad = self.gradient(x);
        let at_lower: Vec<bool> = (0..n).map(|i| x[i] - self.lower[i] <= active_tol).collect();
        let at_upper: Vec<bool> = (0..n)
            .map(|i| self.upper[i].is_finite() && self.upper[i] - x[i] <= active_tol)
            .collect();
        let mut mat = DenseSym::zeros(m);
        let mut rhs = vec![T::zero(); m];
        for j in 0..n {
            if at_lower[j] || at_upper[j] {
                continue;
            }
            for (r, a) in self.a.col(j) {
                rhs[r] += a * grad[j];
                for (r2, a2) in self.a.col(j) {
                    mat.add(r, r2, a * a2);
                }
            }
        }
        mat.factor(T::lit(1e-12));
        mat.solve_in_place(&mut rhs);
        let y = rhs;
        let aty = self.a.tmul(&y);
        let mut zl = vec![T::zero(); n];
        let mut zu = vec![T::zero(); n];
        for j in 0..n {
            let r = grad[j] - aty[j];
            if at_lower[j] && r > T::zero() {
                zl[j] = r;
            } else if at_upper[j] && r < T::zero() {
                zu[j] = -r;
            }
        }
        self.kkt(x, &y, &zl, &zu)
    }

    /// Phase one, then the predictor-corrector solve.
    pub fn solve(&self, settings: &IpmSettings<T>) -> Result<KernelSolution<T>> {
        self.solve_with(settings, false)
    }

    /// As [`solve`](Self::solve); `known_feasible` skips phase one.
    pub fn solve_with(&self, settings: &IpmSettings<T>, known_feasible: bool) -> Result<KernelSolution<T>> {
        self.validate()?;
        let mut infeasibility = None;
        if !known_feasible {
            let v = self.phase_one(settings);
            infeasibility = Some(v);
            if v > settings.feas_tol * (T::one() + inf_norm(&self.rhs)) {
                let n = self.num_vars();
                let x: Vec<T> = (0..n)
                    .map(|i| {
                        if self.upper[i].is_finite() {
                            (self.lower[i] + self.upper[i]) * T::lit(0.5)
                        } else {
                            self.lower[i]
                        }
                    })
                    .collect();
                let zeros = vec![T::zero(); n];
                let kkt = self.kkt(&x, &vec![T::zero(); self.num_rows()], &zeros, &zeros);
                return Ok(KernelSolution {
                    status: QpStatus::Infeasible,
                    objective: self.objective(&x),
                    x,
                    y: vec![T::zero(); self.num_rows()],
                    z_lower: zeros.clone(),
                    z_upper: zeros,
                    iterations: 0,
                    infeasibility,
                    kkt,
                });
            }
        }
        let mut sol = self.ipm(settings);
        sol.infeasibility = infeasibility;
        Ok(sol)
    }

    /// Minimum of `sum |A v - b|` over the bounds.
    fn phase_one(&self, settings: &IpmSettings<T>) -> T {
        let n = self.num_vars();
        let m = self.num_rows();
        if m == 0 {
            return T::zero();
        }
        let mut cols: Vec<Vec<(usize, T)>> = (0..n).map(|j| self.a.col(j).collect()).collect();
        for r in 0..m {
            cols.push(vec![(r, T::one())]);
            cols.push(vec![(r, -T::one())]);
        }
        let mut cost = vec![T::zero(); n];
        cost.extend(std::iter::repeat_n(T::one(), 2 * m));
        let mut lower = self.lower.clone();
        lower.extend(std::iter::repeat_n(T::zero(), 2 * m));
        let mut upper = self.upper.clone();
        upper.extend(std::iter::repeat_n(T::infinity(), 2 * m));
        let lp = SeparableQp {
            hess: vec![T::zero(); n + 2 * m],
            cost,
            constant: T::zero(),
            a: SparseCols::from_columns(m, &cols).expect("rows in range"),
            rhs: self.rhs.clone(),
            lower,
            upper,
        };
        let s = IpmSettings {
            tol: settings.tol.min(T::lit(1e-9)),
            ..*settings
        };
        let sol = lp.ipm(&s);
        // the elastic LP is always feasible; read the violation off the primal iterate
        let ax = self.a.mul(&sol.x[..n]);
        let direct = ax
            .iter()
            .zip(&self.rhs)
            .map(|(&l, &r)| (l - r).abs())
            .sum::<T>();
        direct.min(sol.objective.max(T::zero()))
    }

    /// Predictor-corrector iterations on the shifted problem `w = v - lower`.
    fn ipm(&self, settings: &IpmSettings<T>) -> KernelSolution<T> {
        let n = self.num_vars();
        let m = self.num_rows();
        let zero = T::zero();
        let one = T::one();

        // fixed variables leave the iteration; their value is the bound
        let fixed: Vec<bool> = (0..n).map(|i| self.upper[i] == self.lower[i]).collect();
        let ub: Vec<T> = (0..n).map(|i| self.upper[i] - self.lower[i]).collect();
        let bounded: Vec<bool> = (0..n).map(|i| ub[i].is_finite() && !fixed[i]).collect();
        let lo_ax = self.a.mul(&self.lower);
        let b: Vec<T> = self.rhs.iter().zip(&lo_ax).map(|(&r, &l)| r - l).collect();
        let c: Vec<T> = (0..n).map(|i| self.cost[i] + self.hess[i] * self.lower[i]).collect();
        let h = &self.hess;
        let is_qp = h.iter().zip(&fixed).any(|(&v, &f)| v > zero && !f);

        let mut mat = DenseSym::zeros(m);
        let floor = T::lit(1e-13);

        // starting point from the least-norm solution of A w = b
        let mut w = vec![zero; n];
        let mut lam = vec![zero; m];
        let mut z = vec![zero; n];
        let mut t = vec![zero; n];
        {
            mat.clear();
            for j in 0..n {
                if fixed[j] {
                    continue;
                }
                for (r, a) in self.a.col(j) {
                    for (r2, a2) in self.a.col(j) {
                        mat.add(r, r2, a * a2);
                    }
                }
            }
            mat.factor(floor);
            let mut yy = b.clone();
            mat.solve_in_place(&mut yy);
            let wt = self.a.tmul(&yy);
            let mut cc: Vec<T> = (0..n).map(|j| if fixed[j] { zero } else { c[j] }).collect();
            let mut ac = self.a.mul(&cc);
            mat.solve_in_place(&mut ac);
            lam.clone_from(&ac);
            let atl = self.a.tmul(&lam);
            for j in 0..n {
                if fixed[j] {
                    continue;
                }
                w[j] = wt[j];
                cc[j] = c[j] + h[j] * w[j].max(zero) - atl[j];
            }
            let scale_w = inf_norm(&w).max(one);
            let scale_z = inf_norm(&cc).max(T::lit(1e-2));
            let wmin = T::lit(1e-2) * scale_w;
            for j in 0..n {
                if fixed[j] {
                    continue;
                }
                if bounded[j] {
                    let lo = ub[j] * T::lit(0.05);
                    let hi = ub[j] * T::lit(0.95);
                    w[j] = w[j].max(lo.min(wmin)).min(hi).max(lo);
                    z[j] = cc[j].max(zero) + scale_z * T::lit(0.1);
                    t[j] = (-cc[j]).max(zero) + scale_z * T::lit(0.1);
                } else {
                    w[j] = w[j].max(wmin);
                    z[j] = cc[j].max(zero) + scale_z * T::lit(0.1);
                }
            }
        }

        let ncomp = T::from_usize_lossy(
            fixed.iter().filter(|&&f| !f).count() + bounded.iter().filter(|&&bd| bd).count(),
        )
        .max(one);
        let eta = T::lit(0.995);

        let mut best: Option<(T, KernelSolution<T>)> = None;
        let mut iterations = 0;
        let mut dw = vec![zero; n];
        let mut dz = vec![zero; n];
        let mut dt = vec![zero; n];
        let mut dinv = vec![zero; n];

        for iter in 0..=settings.max_iter {
            iterations = iter;
            let sol = self.unshift(&w, &lam, &z, &t, &fixed, &bounded, iterations);
            let merit = sol.kkt.max_relative();
            if merit <= settings.tol {
                return KernelSolution {
                    status: QpStatus::Optimal,
                    ..sol
                };
            }
            if best.as_ref().is_none_or(|(bm, _)| merit < *bm) {
                best = Some((merit, sol));
            }
            if iter == settings.max_iter {
                break;
            }

            let s: Vec<T> = (0..n)
                .map(|j| if bounded[j] { ub[j] - w[j] } else { one })
                .collect();
            let aw = self.a.mul(&w);
            let rp: Vec<T> = b.iter().zip(&aw).map(|(&bb, &a)| bb - a).collect();
            let atl = self.a.tmul(&lam);
            let rd: Vec<T> = (0..n)
                .map(|j| {
                    if fixed[j] {
                        zero
                    } else {
                        h[j] * w[j] + c[j] - atl[j] - z[j] + if bounded[j] { t[j] } else { zero }
                    }
                })
                .collect();
            let mut gap = zero;
            for j in 0..n {
                if fixed[j] {
                    continue;
                }
                gap += w[j] * z[j];
                if bounded[j] {
                    gap += s[j] * t[j];
                }
            }
            let mu = gap / ncomp;

            mat.clear();
            for j in 0..n {
                if fixed[j] {
                    dinv[j] = zero;
                    continue;
                }
                let mut d = h[j] + z[j] / w[j];
                if bounded[j] {
                    d += t[j] / s[j];
                }
                dinv[j] = one / d;
                for (r, a) in self.a.col(j) {
                    let ad = a * dinv[j];
                    for (r2, a2) in self.a.col(j) {
                        mat.add(r, r2, ad * a2);
                    }
                }
            }
            mat.factor(floor);

            let solve_dir = |rwz: &[T], rst: &[T], dw: &mut [T], dz: &mut [T], dt: &mut [T]| -> Vec<T> {
                let mut g = vec![zero; n];
                for j in 0..n {
                    if fixed[j] {
                        continue;
                    }
                    g[j] = -rd[j] + rwz[j] / w[j];
                    if bounded[j] {
                        g[j] -= rst[j] / s[j];
                    }
                }
                let gd: Vec<T> = (0..n).map(|j| g[j] * dinv[j]).collect();
                let agd = self.a.mul(&gd);
                let rhs: Vec<T> = rp.iter().zip(&agd).map(|(&p, &q)| p - q).collect();
                let mut dl = rhs.clone();
                mat.solve_in_place(&mut dl);
                // iterative refinement against the unfactored operator
                for _ in 0..2 {
                    let v = self.a.tmul(&dl);
                    let vd: Vec<T> = (0..n).map(|j| v[j] * dinv[j]).collect();
                    let mv = self.a.mul(&vd);
                    let mut e: Vec<T> = rhs.iter().zip(&mv).map(|(&r, &q)| r - q).collect();
                    mat.solve_in_place(&mut e);
                    for (d, x) in dl.iter_mut().zip(&e) {
                        *d += *x;
                    }
                }
                let atdl = self.a.tmul(&dl);
                for j in 0..n {
                    if fixed[j] {
                        dw[j] = zero;
                        dz[j] = zero;
                        dt[j] = zero;
                        continue;
                    }
                    dw[j] = (g[j] + atdl[j]) * dinv[j];
                    dz[j] = (rwz[j] - z[j] * dw[j]) / w[j];
                    dt[j] = if bounded[j] {
                        (rst[j] + t[j] * dw[j]) / s[j]
                    } else {
                        zero
                    };
                }
                dl
            };

            let step_len = |dw: &[T], dz: &[T], dt: &[T]| -> (T, T) {
                let mut ap = one;
                let mut ad = one;
                for j in 0..n {
                    if fixed[j] {
                        continue;
                    }
                    if dw[j] < zero {
                        ap = ap.min(-w[j] / dw[j]);
                    }
                    if dz[j] < zero {
                        ad = ad.min(-z[j] / dz[j]);
                    }
                    if bounded[j] {
                        if dw[j] > zero {
                            ap = ap.min(s[j] / dw[j]);
                        }
                        if dt[j] < zero {
                            ad = ad.min(-t[j] / dt[j]);
                        }
                    }
                }
                (ap, ad)
            };

            // predictor
            let rwz: Vec<T> = (0..n).map(|j| -w[j] * z[j]).collect();
            let rst: Vec<T> = (0..n)
                .map(|j| if bounded[j] { -s[j] * t[j] } else { zero })
                .collect();
            solve_dir(&rwz, &rst, &mut dw, &mut dz, &mut dt);
            let (ap, ad) = step_len(&dw, &dz, &dt);
            let (ap, ad) = if is_qp { (ap.min(ad), ap.min(ad)) } else { (ap, ad) };
            let mut gap_aff = zero;
            for j in 0..n {
                if fixed[j] {
                    continue;
                }
                gap_aff += (w[j] + ap * dw[j]) * (z[j] + ad * dz[j]);
                if bounded[j] {
                    gap_aff += (s[j] - ap * dw[j]) * (t[j] + ad * dt[j]);
                }
            }
            let mu_aff = gap_aff / ncomp;
            let ratio = if mu > zero { (mu_aff / mu).max(zero).min(one) } else { zero };
            let sigma = ratio * ratio * ratio;

            // corrector
            let rwz: Vec<T> = (0..n)
                .map(|j| sigma * mu - w[j] * z[j] - dw[j] * dz[j])
                .collect();
            let rst: Vec<T> = (0..n)
                .map(|j| {
                    if bounded[j] {
                        sigma * mu - s[j] * t[j] + dw[j] * dt[j]
                    } else {
                        zero
                    }
                })
                .collect();
            let dl = solve_dir(&rwz, &rst, &mut dw, &mut dz, &mut dt);
            let (ap, ad) = step_len(&dw, &dz, &dt);
            let (ap, ad) = (ap * eta, ad * eta);
            let (ap, ad) = if is_qp { (ap.min(ad), ap.min(ad)) } else { (ap.min(one), ad.min(one)) };

            for j in 0..n {
                if fixed[j] {
                    continue;
                }
                w[j] += ap * dw[j];
                z[j] += ad * dz[j];
                if bounded[j] {
                    t[j] += ad * dt[j];
                    // keep strictly inside the upper bound despite rounding
                    let tiny = ub[j] * T::epsilon();
                    if ub[j] - w[j] < tiny {
                        w[j] = ub[j] - tiny;
                    }
                }
                if w[j] <= zero {
                    w[j] = T::min_positive_value();
                }
            }
            for (l, d) in lam.iter_mut().zip(&dl) {
                *l += ad * *d;
            }
        }
        let (_, sol) = best.expect("at least one iterate");
        KernelSolution {
            status: QpStatus::IterationLimit,
            iterations,
            ..sol
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn unshift(
        &self,
        w: &[T],
        lam: &[T],
        z: &[T],
        t: &[T],
        fixed: &[bool],
        bounded: &[bool],
        iterations: usize,
    ) -> KernelSolution<T> {
        let n = w.len();
        let x: Vec<T> = (0..n)
            .map(|j| if fixed[j] { self.lower[j] } else { self.lower[j] + w[j] })
            .collect();
        let mut zl: Vec<T> = z.to_vec();
        let mut zu: Vec<T> = (0..n).map(|j| if bounded[j] { t[j] } else { T::zero() }).collect();
        if fixed.iter().any(|&f| f) {
            let grad = self.gradient(&x);
            let aty = self.a.tmul(lam);
            for j in 0..n {
                if fixed[j] {
                    let r = grad[j] - aty[j];
                    zl[j] = r.max(T::zero());
                    zu[j] = (-r).max(T::zero());
                }
            }
        }
        let kkt = self.kkt(&x, lam, &zl, &zu);
        KernelSolution {
            status: QpStatus::IterationLimit,
            objective: self.objective(&x),
            x,
            y: lam.to_vec(),
            z_lower: zl,
            z_upper: zu,
            iterations,
            infeasibility: None,
            kkt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn qp(hess: Vec<f64>, cost: Vec<f64>, cols: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> SeparableQp<f64> {
        SeparableQp {
            hess,
            cost,
            constant: 0.0,
            a: SparseCols::from_columns(rhs.len(), &cols).unwrap(),
            rhs,
            lower,
            upper,
        }
    }

    #[test]
    fn active_lower_bound() {
        // minimize x^2 subject to x >= 1
        let p = qp(vec![2.0], vec![0.0], vec![vec![]], vec![], vec![1.0], vec![f64::INFINITY]);
        let s = p.solve(&IpmSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-7);
    }

    fn two_var() -> SeparableQp<f64> {
        // minimize x1^2 + 2 x2^2 subject to x1 + x2 = 1
        qp(
            vec![2.0, 4.0],
            vec![0.0, 0.0],
            vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            vec![1.0],
            vec![f64::MIN / 4.0, f64::MIN / 4.0],
            vec![f64::INFINITY; 2],
        )
    }

    #[test]
    fn equality_constrained_pair() {
        let mut p = two_var();
        p.lower = vec![0.0, 0.0];
        let s = p.solve(&IpmSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 2.0 / 3.0, epsilon = 1e-7);
        assert_relative_eq!(s.x[1], 1.0 / 3.0, epsilon = 1e-7);
        assert_relative_eq!(s.objective, 2.0 / 3.0, epsilon = 1e-7);
        assert!(s.kkt.max_relative() <= 1e-8);
        let fit = p.kkt_primal(&[2.0 / 3.0, 1.0 / 3.0], 1e-12);
        assert!(fit.max_relative() < 1e-10, "{fit:?}");
    }

    #[test]
    fn perturbed_candidate_residuals() {
        let mut p = two_var();
        p.lower = vec![0.0, 0.0];
        let x = [2.0 / 3.0 + 0.1, 1.0 / 3.0 - 0.1];
        let g = p.gradient(&x);
        assert_relative_eq!((g[0] - g[1]).abs(), 0.6, epsilon = 1e-12);
        let fit = p.kkt_primal(&x, 1e-12);
        // least-squares multiplier is the mean gradient, leaving +-0.3
        assert_relative_eq!(fit.stationarity_abs, 0.3, epsilon = 1e-10);
        assert!(fit.primal_abs < 1e-12);
        let bad = p.kkt_primal(&[0.75, 0.75], 1e-12);
        assert_relative_eq!(bad.primal_abs, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn conflicting_bounds_are_infeasible() {
        // x = 100 with x <= 80
        let p = qp(vec![0.0], vec![1.0], vec![vec![(0, 1.0)]], vec![100.0], vec![0.0], vec![80.0]);
        let s = p.solve(&IpmSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_relative_eq!(s.infeasibility.unwrap(), 20.0, epsilon = 1e-5);
    }

    #[test]
    fn fixed_variables_are_honoured() {
        let p = qp(
            vec![2.0, 2.0],
            vec![0.0, 0.0],
            vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            vec![1.0],
            vec![0.0, 0.25],
            vec![10.0, 0.25],
        );
        let s = p.solve(&IpmSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 0.75, epsilon = 1e-7);
        assert_eq!(s.x[1], 0.25);
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let mut p = two_var();
        p.hess.pop();
        assert!(matches!(p.solve(&IpmSettings::default()), Err(Error::Structure(_))));
        let mut p = two_var();
        p.hess[0] = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn linear_program_with_boxes() {
        // minimize -x1 - 2 x2, x1 + x2 = 1.5, 0 <= x <= 1
        let p = qp(
            vec![0.0, 0.0],
            vec![-1.0, -2.0],
            vec![vec![(0, 1.0)], vec![(0, 1.0)]],
            vec![1.5],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
        );
        let s = p.solve(&IpmSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[1], 1.0, epsilon = 1e-6);
        assert_relative_eq!(s.objective, -2.5, epsilon = 1e-6);
    }

    #[test]
    fn single_precision_solve() {
        let p = SeparableQp::<f32> {
            hess: vec![2.0, 4.0],
            cost: vec![0.0, 0.0],
            constant: 0.0,
            a: SparseCols::from_columns(1, &[vec![(0, 1.0)], vec![(0, 1.0)]]).unwrap(),
            rhs: vec![1.0],
            lower: vec![0.0, 0.0],
            upper: vec![f32::INFINITY; 2],
        };
        let s = p
            .solve(&IpmSettings {
                tol: 1e-5,
                feas_tol: 1e-4,
                max_iter: 100,
            })
            .unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 2.0 / 3.0).abs() < 1e-4);
    }
}
