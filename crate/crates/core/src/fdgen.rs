//! Link cost coefficients derived from triangular fundamental-diagram parameters.
//!
//! A link is described by five basic parameters (free-flow speed, critical
//! speed, backward shock-wave speed, jam density and capacity-drop ratio).
//! From them follow the maximum congested flow `q_max`, the critical flow
//! `q_cr` and the coefficients of the two travel-time branches
//!
//! ```text
//! uncongested:  t(x) = t_free + alpha * x      0 <= x <= q_cr
//! congested:    t(x) = gamma + beta / x        delta <= x <= q_max
//! ```
//!
//! Both branches meet at the critical travel time `t_cr = length / v_cr`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Basic fundamental-diagram parameters of a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicParams<T> {
    /// Free-flow speed, km/hr.
    pub v_free: T,
    /// Critical speed, km/hr. Both the slowest uncongested and fastest congested speed.
    pub v_cr: T,
    /// Backward shock wave speed, km/hr.
    pub w: T,
    /// Jam density, veh/km.
    pub d_jam: T,
    /// Capacity drop ratio `(q_cr - q_max) / q_max`.
    pub r_mc: T,
}

impl<T: Scalar> BasicParams<T> {
    pub fn is_valid(&self) -> bool {
        let z = T::zero();
        self.v_free > z
            && self.v_cr > z
            && self.w > z
            && self.d_jam > z
            && self.r_mc > z
            && self.v_cr < self.v_free
    }

    /// Congested-branch density at maximum flow, `d_jam / (1 + v_cr / w)`.
    pub fn d_max(&self) -> T {
        self.d_jam / (T::one() + self.v_cr / self.w)
    }

    pub fn q_max(&self) -> T {
        self.d_max() * self.v_cr
    }

    pub fn q_cr(&self) -> T {
        self.q_max() * (T::one() + self.r_mc)
    }
}

/// Coefficients of the two travel-time branches of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams<T> {
    /// Slope of the uncongested branch, hr per veh/hr.
    pub alpha: T,
    /// Numerator of the congested branch, hr * veh/hr.
    pub beta: T,
    /// Intercept of the congested branch, hr (negative).
    pub gamma: T,
    /// Free-flow travel time, hr.
    pub t_free: T,
    /// Maximum flow on the congested branch, veh/hr.
    pub q_max: T,
    /// Critical flow, the largest uncongested flow, veh/hr.
    pub q_cr: T,
}

impl<T: Scalar> LinkParams<T> {
    /// Critical travel time as seen from the congested branch, `gamma + beta / q_max`.
    pub fn t_cr(&self) -> T {
        self.gamma + self.beta / self.q_max
    }

    /// Critical travel time as seen from the uncongested branch, `t_free + alpha * q_cr`.
    pub fn t_cr_uncongested(&self) -> T {
        self.t_free + self.alpha * self.q_cr
    }

    /// Signed mismatch between the two branches at the critical point.
    pub fn continuity_residual(&self) -> T {
        self.t_cr_uncongested() - self.t_cr()
    }

    /// Density at maximum congested flow for a link of the given length.
    pub fn d_max(&self, length: T) -> T {
        self.q_max * self.t_cr() / length
    }

    /// Rebuilds the basic parameters implied by these coefficients.
    pub fn implied_basic(&self, length: T) -> BasicParams<T> {
        let d_jam = self.beta / length;
        let d_max = self.d_max(length);
        BasicParams {
            v_free: length / self.t_free,
            v_cr: self.q_max / d_max,
            w: self.q_max / (d_jam - d_max),
            d_jam,
            r_mc: self.q_cr / self.q_max - T::one(),
        }
    }
}

/// Closed interval `[lo, hi]` with `0 < lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Option<Self> {
        (lo > T::zero() && lo <= hi).then_some(Self { lo, hi })
    }

    pub fn point(v: T) -> Self {
        Self { lo: v, hi: v }
    }

    /// `lo + (hi - lo) * zeta`.
    pub fn at(&self, zeta: T) -> T {
        self.lo + (self.hi - self.lo) * zeta
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// Distance from `v` to the interval, zero inside.
    pub fn excess(&self, v: T) -> T {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            T::zero()
        }
    }
}

/// Feasible ranges of the five basic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges<T> {
    pub v_free: Interval<T>,
    pub v_cr: Interval<T>,
    pub w: Interval<T>,
    pub d_jam: Interval<T>,
    pub r_mc: Interval<T>,
}

impl<T: Scalar> Default for ParamRanges<T> {
    /// Urban arterial ranges: 60-80 km/hr free flow, 40-45 km/hr critical,
    /// 15-20 km/hr shock wave, 110-145 veh/km jam density, 5-8% capacity drop.
    fn default() -> Self {
        let iv = |lo: f64, hi: f64| Interval {
            lo: T::lit(lo),
            hi: T::lit(hi),
        };
        Self {
            v_free: iv(60.0, 80.0),
            v_cr: iv(40.0, 45.0),
            w: iv(15.0, 20.0),
            d_jam: iv(110.0, 145.0),
            r_mc: iv(0.05, 0.08),
        }
    }
}

impl<T: Scalar> ParamRanges<T> {
    /// Every interval collapsed to the given values.
    pub fn fixed(p: BasicParams<T>) -> Self {
        Self {
            v_free: Interval::point(p.v_free),
            v_cr: Interval::point(p.v_cr),
            w: Interval::point(p.w),
            d_jam: Interval::point(p.d_jam),
            r_mc: Interval::point(p.r_mc),
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.v_free, self.v_cr, self.w, self.d_jam, self.r_mc]
            .iter()
            .all(|i| i.lo > T::zero() && i.lo <= i.hi)
    }

    /// Parameters at the given unit-interval positions, in field order
    /// `v_free, v_cr, w, d_jam, r_mc`.
    pub fn at(&self, zeta: [T; 5]) -> BasicParams<T> {
        BasicParams {
            v_free: self.v_free.at(zeta[0]),
            v_cr: self.v_cr.at(zeta[1]),
            w: self.w.at(zeta[2]),
            d_jam: self.d_jam.at(zeta[3]),
            r_mc: self.r_mc.at(zeta[4]),
        }
    }
}

/// Name recorded in output metadata for the generator behind [`ParamSampler`].
pub const SAMPLER_ALGORITHM: &str = "chacha8";

/// Seeded uniform sampler of basic parameters.
///
/// The generator state is owned by the caller; two samplers built from the
/// same seed produce bit-identical sequences on every platform.
#[derive(Debug, Clone)]
pub struct ParamSampler {
    seed: u64,
    rng: ChaCha8Rng,
}

impl ParamSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        SAMPLER_ALGORITHM
    }

    /// Draws one parameter set, each field as `lo + (hi - lo) * zeta` with
    /// `zeta` uniform on `[0, 1]`.
    pub fn sample<T: Scalar>(&mut self, ranges: &ParamRanges<T>) -> BasicParams<T> {
        let mut zeta = [T::zero(); 5];
        for z in zeta.iter_mut() {
            *z = T::lit(self.rng.gen_range(0.0..=1.0));
        }
        ranges.at(zeta)
    }
}

/// One-shot sample from a fresh generator seeded with `seed`.
pub fn sample_basic_params<T: Scalar>(ranges: &ParamRanges<T>, seed: u64) -> BasicParams<T> {
    ParamSampler::new(seed).sample(ranges)
}

/// Computes branch coefficients for a link of `length` km.
///
/// Requires valid basic parameters and `length > 0`.
pub fn derive_link_params<T: Scalar>(basic: &BasicParams<T>, length: T) -> LinkParams<T> {
    debug_assert!(basic.is_valid() && length > T::zero());
    let d_max = basic.d_max();
    let q_max = basic.q_max();
    let q_cr = basic.q_cr();
    LinkParams {
        alpha: length * (d_max / q_max - T::one() / basic.v_free) / q_cr,
        beta: length * basic.d_jam,
        gamma: length * (d_max - basic.d_jam) / q_max,
        t_free: length / basic.v_free,
        q_max,
        q_cr,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Mathematical identity or sign invariant; the link is unusable.
    Failure,
    /// Outside the configured plausibility ranges; usable but unusual.
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub severity: Severity,
    pub passed: bool,
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub checks: Vec<Check>,
}

impl ConsistencyReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.severity == Severity::Failure)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Check> {
        self.checks
            .iter()
            .filter(|c| !c.passed && c.severity == Severity::Warning)
    }

    pub fn is_ok(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Checks sign invariants, branch continuity (within `continuity_tol` hours)
/// and the plausibility of the reconstructed basic parameters.
pub fn verify_consistency<T: Scalar>(
    length: T,
    params: &LinkParams<T>,
    ranges: &ParamRanges<T>,
    continuity_tol: T,
) -> ConsistencyReport {
    let z = T::zero();
    let mut checks = Vec::with_capacity(11);
    let mut identity = |name: &str, passed: bool, value: T, residual: T| {
        checks.push(Check {
            name: name.into(),
            severity: Severity::Failure,
            passed,
            value: value.to_f64_lossy(),
            residual: residual.to_f64_lossy(),
        })
    };
    identity("length_positive", length > z, length, z.max(-length));
    identity("alpha_positive", params.alpha > z, params.alpha, z.max(-params.alpha));
    identity("beta_positive", params.beta > z, params.beta, z.max(-params.beta));
    identity("gamma_negative", params.gamma < z, params.gamma, z.max(params.gamma));
    identity("t_free_positive", params.t_free > z, params.t_free, z.max(-params.t_free));
    identity(
        "flow_order",
        params.q_max > z && params.q_max < params.q_cr,
        params.q_cr - params.q_max,
        z.max(params.q_max - params.q_cr),
    );
    let cont = params.continuity_residual();
    identity("continuity", cont.abs() <= continuity_tol, cont, cont.abs());

    let implied = params.implied_basic(length);
    let mut range = |name: &str, iv: &Interval<T>, v: T| {
        let excess = iv.excess(v);
        checks.push(Check {
            name: name.into(),
            severity: Severity::Warning,
            passed: v.is_finite() && excess == z,
            value: v.to_f64_lossy(),
            residual: excess.to_f64_lossy(),
        })
    };
    range("v_free_range", &ranges.v_free, implied.v_free);
    range("v_cr_range", &ranges.v_cr, implied.v_cr);
    range("w_range", &ranges.w, implied.w);
    range("d_jam_range", &ranges.d_jam, implied.d_jam);
    range("r_mc_range", &ranges.r_mc, implied.r_mc);
    ConsistencyReport { checks }
}
