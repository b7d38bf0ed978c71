//! Stability analysis of convex Lipschitz functions.
//!
//! A convex function is `delta`-unstable at a point (for perturbation radius
//! `r`) when some convex function of the same Lipschitz class, inside the
//! radius-`r` uniform tube, changes the derivative there by more than
//! `delta`. The module provides:
//!
//! * exact piecewise-linear convex functions with max, comparison, and
//!   one-sided derivative queries;
//! * explicit instability witnesses (tangent-line lifts and kink
//!   translations), each validated structurally rather than assumed;
//! * an outer bound for the unstable set in terms of slope growth across a
//!   `4r/delta` window, its greedy covering by at most
//!   `floor(4 lambda / delta)` intervals of length `16 r / delta`, and
//!   Gaussian measures of interval sets;
//! * step functions whose antiderivative oscillates by at most one, their
//!   pairing bound against the kernel `t exp(-t^2/2)`, the Gaussian mass of
//!   sublevel sets with its analytic floor, and the quantile threshold used
//!   by field-based partition criteria.

use crate::error::{Error, Result};
use crate::numerics::{self, Kahan};
use rand::Rng;
use serde::{Deserialize, Serialize};

const SLOPE_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Piecewise-linear convex functions
// ---------------------------------------------------------------------------

/// A convex piecewise-linear function on the whole line: breakpoints with
/// values, plus the two tail slopes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlConvex {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slope_left: f64,
    slope_right: f64,
}

impl PlConvex {
    /// Build from breakpoints (strictly increasing) and tail slopes,
    /// verifying convexity.
    pub fn from_breakpoints(
        xs: Vec<f64>,
        ys: Vec<f64>,
        slope_left: f64,
        slope_right: f64,
    ) -> Result<PlConvex> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::FunctionClass("need matching, non-empty breakpoint arrays".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::FunctionClass("breakpoints must be strictly increasing".into()));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite())
            || !slope_left.is_finite()
            || !slope_right.is_finite()
        {
            return Err(Error::FunctionClass("non-finite breakpoint data".into()));
        }
        let f = PlConvex { xs, ys, slope_left, slope_right };
        let slopes = f.all_slopes();
        if slopes.windows(2).any(|w| w[1] < w[0] - SLOPE_TOL) {
            return Err(Error::FunctionClass("slopes must be non-decreasing".into()));
        }
        Ok(f)
    }

    /// The affine function `a t + b`.
    pub fn line(a: f64, b: f64) -> PlConvex {
        PlConvex { xs: vec![0.0], ys: vec![b], slope_left: a, slope_right: a }
    }

    /// The line through `(t, y)` with the given slope, anchored at `t` so
    /// later pointwise operations treat `t` as an exact grid point.
    pub fn line_through(t: f64, y: f64, slope: f64) -> PlConvex {
        PlConvex { xs: vec![t], ys: vec![y], slope_left: slope, slope_right: slope }
    }

    /// Tail slope, interior segment slopes, tail slope.
    fn all_slopes(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.xs.len() + 1);
        s.push(self.slope_left);
        for w in self.xs.windows(2).zip(self.ys.windows(2)) {
            s.push((w.1[1] - w.1[0]) / (w.0[1] - w.0[0]));
        }
        s.push(self.slope_right);
        s
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.xs.partition_point(|&x| x <= t);
        if k == 0 {
            return self.ys[0] + self.slope_left * (t - self.xs[0]);
        }
        if k == self.xs.len() {
            let last = self.xs.len() - 1;
            return self.ys[last] + self.slope_right * (t - self.xs[last]);
        }
        // anchor at the left breakpoint of the segment
        let s = (self.ys[k] - self.ys[k - 1]) / (self.xs[k] - self.xs[k - 1]);
        self.ys[k - 1] + s * (t - self.xs[k - 1])
    }

    /// Right derivative (the slope immediately to the right of `t`).
    pub fn right_slope(&self, t: f64) -> f64 {
        let k = self.xs.partition_point(|&x| x <= t);
        if k == 0 {
            return self.slope_left;
        }
        if k == self.xs.len() {
            return self.slope_right;
        }
        (self.ys[k] - self.ys[k - 1]) / (self.xs[k] - self.xs[k - 1])
    }

    /// Left derivative.
    pub fn left_slope(&self, t: f64) -> f64 {
        let k = self.xs.partition_point(|&x| x < t);
        if k == 0 {
            return self.slope_left;
        }
        if k == self.xs.len() {
            return self.slope_right;
        }
        (self.ys[k] - self.ys[k - 1]) / (self.xs[k] - self.xs[k - 1])
    }

    /// Smallest Lipschitz constant (slopes are monotone, so the extremes
    /// decide).
    pub fn lipschitz(&self) -> f64 {
        self.slope_left.abs().max(self.slope_right.abs())
    }

    /// Total slope increase from the far left to the far right.
    pub fn slope_variation(&self) -> f64 {
        self.slope_right - self.slope_left
    }

    pub fn add_const(&self, c: f64) -> PlConvex {
        let mut out = self.clone();
        for y in out.ys.iter_mut() {
            *y += c;
        }
        out
    }

    /// `t -> self(t - s)`.
    pub fn translate(&self, s: f64) -> PlConvex {
        let mut out = self.clone();
        for x in out.xs.iter_mut() {
            *x += s;
        }
        out
    }

    /// `t -> self(-t)`, which is convex with reversed slopes.
    pub fn reflect(&self) -> PlConvex {
        let xs: Vec<f64> = self.xs.iter().rev().map(|&x| -x).collect();
        let ys: Vec<f64> = self.ys.iter().rev().cloned().collect();
        PlConvex { xs, ys, slope_left: -self.slope_right, slope_right: -self.slope_left }
    }

    /// Pointwise maximum: exact on the merged breakpoint-and-crossing grid.
    pub fn max_with(&self, other: &PlConvex) -> PlConvex {
        let mut grid: Vec<f64> = Vec::new();
        grid.extend_from_slice(&self.xs);
        grid.extend_from_slice(&other.xs);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        // segment crossings between consecutive grid points, plus the tails
        let mut points = grid.clone();
        let diff_at = |t: f64| self.eval(t) - other.eval(t);
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (da, db) = (diff_at(a), diff_at(b));
            if (da > 0.0) != (db > 0.0) && da != db {
                let t = a + (b - a) * da / (da - db);
                if t > a && t < b {
                    points.push(t);
                }
            }
        }
        // left tail crossing
        let x_min = grid[0];
        let d_min = diff_at(x_min);
        let sl = self.slope_left - other.slope_left;
        if sl != 0.0 {
            let t = x_min - d_min / sl;
            if t < x_min {
                points.push(t);
            }
        }
        // right tail crossing
        let x_max = *grid.last().unwrap();
        let d_max = diff_at(x_max);
        let sr = self.slope_right - other.slope_right;
        if sr != 0.0 {
            let t = x_max - d_max / sr;
            if t > x_max {
                points.push(t);
            }
        }
        points.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // merge near-coincident points so no micro-segment pollutes slopes
        points.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
        let ys: Vec<f64> = points.iter().map(|&t| self.eval(t).max(other.eval(t))).collect();
        let slope_left = self.slope_left.min(other.slope_left);
        let slope_right = self.slope_right.max(other.slope_right);
        PlConvex { xs: points, ys, slope_left, slope_right }
    }

    /// `self(t) <= other(t) + tol` for every `t`, decided exactly on the
    /// merged grid plus tail-slope comparisons.
    pub fn le(&self, other: &PlConvex, tol: f64) -> bool {
        let mut grid: Vec<f64> = Vec::new();
        grid.extend_from_slice(&self.xs);
        grid.extend_from_slice(&other.xs);
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        for &t in &grid {
            if self.eval(t) > other.eval(t) + tol {
                return false;
            }
        }
        // tails: going to -inf the smaller left slope grows faster
        if self.slope_left < other.slope_left - SLOPE_TOL {
            return false;
        }
        if self.slope_right > other.slope_right + SLOPE_TOL {
            return false;
        }
        true
    }
}

/// Random convex function with slopes bounded by `lambda`, for randomized
/// verification sweeps.
pub fn random_pl_convex<R: Rng>(
    rng: &mut R,
    lambda: f64,
    n_breaks: usize,
    span: f64,
) -> PlConvex {
    let n = n_breaks.max(1);
    let mut xs: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * span).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let k = xs.len();
    let mut slopes: Vec<f64> = (0..=k).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * lambda).collect();
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ys = vec![(rng.gen::<f64>() * 2.0 - 1.0) * span];
    for i in 1..k {
        let y = ys[i - 1] + slopes[i] * (xs[i] - xs[i - 1]);
        ys.push(y);
    }
    PlConvex::from_breakpoints(xs, ys, slopes[0], slopes[k]).expect("sorted slopes are convex")
}

// ---------------------------------------------------------------------------
// Interval sets
// ---------------------------------------------------------------------------

/// A finite union of disjoint closed intervals, sorted left to right.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<IntervalSet> {
        for w in &intervals {
            if !(w.0 <= w.1) {
                return Err(Error::FunctionClass("interval endpoints out of order".into()));
            }
        }
        if intervals.windows(2).any(|w| !(w[1].0 > w[0].1)) {
            return Err(Error::FunctionClass("intervals must be disjoint and sorted".into()));
        }
        Ok(IntervalSet { intervals })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn lebesgue(&self) -> f64 {
        self.intervals.iter().map(|&(a, b)| b - a).sum()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| t >= a && t <= b)
    }

    /// Mass under the centered normal law with variance `sigma2`, as a sum
    /// of distribution-function differences.
    pub fn gaussian_measure(&self, sigma2: f64) -> Result<f64> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::FunctionClass("variance must be positive".into()));
        }
        let s = sigma2.sqrt();
        let phi = |t: f64| {
            if t == f64::INFINITY {
                1.0
            } else if t == f64::NEG_INFINITY {
                0.0
            } else {
                numerics::normal_cdf(t / s)
            }
        };
        let mut acc = Kahan::new();
        for &(a, b) in &self.intervals {
            acc.add(phi(b) - phi(a));
        }
        Ok(acc.value())
    }
}

// ---------------------------------------------------------------------------
// Instability witnesses, outer sets, coverings
// ---------------------------------------------------------------------------

/// A verified demonstration of instability at `t`: a convex function of the
/// same Lipschitz class inside the uniform `r`-tube whose one-sided
/// derivative at `t` differs from the original by more than `delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub function: PlConvex,
    pub slope_gap: f64,
}

fn witness_checks(g: &PlConvex, cand: &PlConvex, t: f64, delta: f64, r: f64) -> Option<f64> {
    if cand.lipschitz() > g.lipschitz() + SLOPE_TOL {
        return None;
    }
    if !cand.le(&g.add_const(r), 1e-12) || !g.add_const(-r).le(cand, 1e-12) {
        return None;
    }
    let gap_right = (cand.right_slope(t) - g.right_slope(t)).abs();
    let gap_left = (cand.left_slope(t) - g.left_slope(t)).abs();
    let gap = gap_right.max(gap_left);
    if gap > delta {
        Some(gap)
    } else {
        None
    }
}

/// Tangent lift: pin a line of slope `g'(t) + delta(1 + 1e-6)` to the tube
/// floor at `t` and cap it with `g - r`. Convex by construction; inside the
/// tube only when the slope rise ahead of `t` absorbs the lift.
fn tangent_lift(g: &PlConvex, t: f64, delta: f64, r: f64) -> PlConvex {
    let bumped = g.right_slope(t) + delta * (1.0 + 1e-6);
    let tangent = PlConvex::line_through(t, g.eval(t) - r, bumped);
    tangent.max_with(&g.add_const(-r))
}

/// Try to demonstrate that `g` is `delta`-unstable at `t` for radius `r`.
/// Four constructions are attempted: the tangent lift (raises the right
/// derivative), its mirror image (lowers the left derivative), and the two
/// kink translations by `r / lambda` (which drag a nearby slope change onto
/// `t` while staying in the tube by Lipschitz continuity). Every candidate
/// is admitted only after passing the class, tube, and gap checks.
pub fn stab_witness(g: &PlConvex, t: f64, delta: f64, r: f64) -> Option<Witness> {
    if delta <= 0.0 || r <= 0.0 || !delta.is_finite() || !r.is_finite() {
        return None;
    }
    let mut candidates: Vec<PlConvex> = Vec::new();
    candidates.push(tangent_lift(g, t, delta, r));
    candidates.push(tangent_lift(&g.reflect(), -t, delta, r).reflect());
    let lambda = g.lipschitz();
    if lambda > 0.0 {
        let s = r / lambda;
        candidates.push(g.translate(s));
        candidates.push(g.translate(-s));
    }
    for cand in candidates {
        if let Some(gap) = witness_checks(g, &cand, t, delta, r) {
            return Some(Witness { function: cand, slope_gap: gap });
        }
    }
    None
}

/// Outer bound for the `delta`-unstable set at radius `r`: the points where
/// the derivative grows by at least `delta / 2` across the closed window
/// `[t - 4r/delta, t + 4r/delta]` (left derivative at the bottom end, right
/// derivative at the top, the widest one-sided combination).
pub fn stab_outer(g: &PlConvex, delta: f64, r: f64) -> IntervalSet {
    let a = 4.0 * r / delta;
    let mut crit: Vec<f64> = Vec::new();
    for &x in g.breakpoints() {
        crit.push(x - a);
        crit.push(x + a);
    }
    crit.sort_by(|p, q| p.partial_cmp(q).unwrap());
    crit.dedup();
    if crit.is_empty() {
        return IntervalSet::default();
    }
    let holds = |t: f64| g.right_slope(t + a) >= g.left_slope(t - a) + delta / 2.0;
    // the predicate is piecewise constant between critical points and false
    // far out on both sides; sample each piece and each point
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let push = |lo: f64, hi: f64, intervals: &mut Vec<(f64, f64)>| {
        if let Some(last) = intervals.last_mut() {
            if lo <= last.1 {
                last.1 = last.1.max(hi);
                return;
            }
        }
        intervals.push((lo, hi));
    };
    for (i, &p) in crit.iter().enumerate() {
        if holds(p) {
            push(p, p, &mut intervals);
        }
        if i + 1 < crit.len() {
            let q = crit[i + 1];
            let mid = 0.5 * (p + q);
            if holds(mid) {
                push(p, q, &mut intervals);
            }
        }
    }
    IntervalSet { intervals }
}

/// Greedy covering of the outer set by intervals of length `16 r / delta`.
/// For a `lambda`-Lipschitz function the count never exceeds
/// `floor(4 lambda / delta)`: consecutive chosen points are a full interval
/// apart, so their slope-growth windows are disjoint and each consumes
/// `delta / 2` of the total slope variation (at most `2 lambda`).
pub fn stab_covering(g: &PlConvex, delta: f64, r: f64) -> Vec<(f64, f64)> {
    let len = 16.0 * r / delta;
    let mut outer = stab_outer(g, delta, r).intervals;
    let mut cover = Vec::new();
    let mut i = 0;
    while i < outer.len() {
        let start = outer[i].0;
        cover.push((start, start + len));
        // drop everything the new interval covers; a partially covered piece
        // continues from its uncovered part, which is still in the outer set
        while i < outer.len() && outer[i].1 <= start + len {
            i += 1;
        }
        if i < outer.len() && outer[i].0 < start + len {
            outer[i].0 = start + len;
        }
    }
    cover
}

/// Calibrated-and-frozen lower bound for the Gaussian mass left outside the
/// unstable outer set: `exp(-C' lambda^2 r^2 / (sigma2 delta^4))` with
/// `C' = 600`, chosen once so that a centered interval of the maximal outer
/// measure `64 lambda r / delta^2` never beats it.
pub fn stab_gaussian_floor(lambda: f64, delta: f64, r: f64, sigma2: f64) -> f64 {
    let y2 = lambda * lambda * r * r / (sigma2 * delta.powi(4));
    (-600.0 * y2).exp()
}

// ---------------------------------------------------------------------------
// Bounded-oscillation step functions
// ---------------------------------------------------------------------------

/// A piecewise-constant function with finitely many jumps, zero outside the
/// breakpoint range. `values[i]` holds on `[jumps[i], jumps[i+1])`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepFunction {
    jumps: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    /// `values.len() == jumps.len() - 1`; the function vanishes before the
    /// first and after the last jump.
    pub fn new(jumps: Vec<f64>, values: Vec<f64>) -> Result<StepFunction> {
        if jumps.len() < 2 || values.len() + 1 != jumps.len() {
            return Err(Error::FunctionClass("need n+1 jump points for n values".into()));
        }
        if jumps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::FunctionClass("jump points must be strictly increasing".into()));
        }
        if jumps.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::FunctionClass("non-finite step data".into()));
        }
        Ok(StepFunction { jumps, values })
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|&x| x <= t);
        if k == 0 || k == self.jumps.len() {
            return 0.0;
        }
        self.values[k - 1]
    }

    /// Antiderivative with value zero at minus infinity, evaluated at the
    /// jump points.
    fn antiderivative_at_jumps(&self) -> Vec<f64> {
        let mut acc = Kahan::new();
        let mut out = vec![0.0];
        for i in 0..self.values.len() {
            acc.add(self.values[i] * (self.jumps[i + 1] - self.jumps[i]));
            out.push(acc.value());
        }
        out
    }

    /// Oscillation of the antiderivative, with the zero values at both
    /// infinities included. Interval integrals of the function are exactly
    /// increments of the antiderivative, so oscillation at most one means
    /// every interval integral has magnitude at most one.
    pub fn oscillation(&self) -> f64 {
        let g = self.antiderivative_at_jumps();
        let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        let min = g.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
        max - min
    }

    /// Member of the admissible class: the antiderivative starts at zero,
    /// returns to zero, and oscillates by at most one in between.
    pub fn is_admissible(&self, tol: f64) -> bool {
        let g = self.antiderivative_at_jumps();
        g.last().unwrap().abs() <= tol && self.oscillation() <= 1.0 + tol
    }
}

/// `integral of g(t) t exp(-t^2/2) dt` for an admissible step function,
/// exactly per piece (the kernel has antiderivative `-exp(-t^2/2)`). The
/// magnitude never exceeds 2, the total variation of the kernel's
/// antiderivative, times the oscillation bound.
pub fn class_g_gaussian_bound(g: &StepFunction) -> Result<f64> {
    if !g.is_admissible(1e-9) {
        return Err(Error::FunctionClass(
            "step function is outside the bounded-oscillation class".into(),
        ));
    }
    let e = |x: f64| (-0.5 * x * x).exp();
    let mut acc = Kahan::new();
    for i in 0..g.values.len() {
        if g.values[i] != 0.0 {
            acc.add(g.values[i] * (e(g.jumps[i]) - e(g.jumps[i + 1])));
        }
    }
    Ok(acc.value())
}

/// Gaussian mass of the sublevel set `{t : g(t) <= delta}` together with its
/// analytic floor. Requires `g >= -1` and admissibility; the contract is
/// `measured >= floor - 1e-9`.
pub fn sublevel_gaussian_lower(g: &StepFunction, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::FunctionClass("sublevel bound needs delta in (0, 1]".into()));
    }
    if !g.is_admissible(1e-9) {
        return Err(Error::FunctionClass(
            "step function is outside the bounded-oscillation class".into(),
        ));
    }
    if g.values.iter().any(|&v| v < -1.0 - 1e-12) {
        return Err(Error::FunctionClass("sublevel bound needs g >= -1".into()));
    }
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = Kahan::new();
    // the function vanishes outside its jump range, and 0 <= delta
    acc.add(sqrt_2pi * numerics::normal_cdf(g.jumps[0]));
    acc.add(sqrt_2pi * numerics::normal_sf(*g.jumps.last().unwrap()));
    for i in 0..g.values.len() {
        if g.values[i] <= delta {
            let mass = sqrt_2pi
                * (numerics::normal_cdf(g.jumps[i + 1]) - numerics::normal_cdf(g.jumps[i]));
            acc.add(mass);
        }
    }
    Ok((acc.value(), sublevel_mass_floor(delta)?))
}

/// Random admissible step function: built by differentiating a random
/// continuous piecewise-linear bridge with oscillation at most one and zero
/// endpoints.
pub fn random_admissible_step<R: Rng>(rng: &mut R, n_jumps: usize, span: f64) -> StepFunction {
    let jumps = random_jump_grid(rng, n_jumps, span);
    let k = jumps.len() - 1;
    // antiderivative heights in [0, 1], endpoints zero
    let mut heights = vec![0.0];
    for _ in 1..k {
        heights.push(rng.gen::<f64>());
    }
    heights.push(0.0);
    let values: Vec<f64> = (0..k)
        .map(|i| (heights[i + 1] - heights[i]) / (jumps[i + 1] - jumps[i]))
        .collect();
    StepFunction::new(jumps, values).expect("constructed grid is valid")
}

/// Random admissible step function that additionally satisfies `g >= -1`:
/// the bridge's descents are limited to slope -1, and the remaining width
/// always suffices to return to zero.
pub fn random_admissible_step_floor<R: Rng>(
    rng: &mut R,
    n_jumps: usize,
    span: f64,
) -> StepFunction {
    let jumps = random_jump_grid(rng, n_jumps, span);
    let k = jumps.len() - 1;
    let total: f64 = jumps[k] - jumps[0];
    let mut heights = vec![0.0f64];
    let mut used = 0.0;
    for i in 1..k {
        let gap = jumps[i] - jumps[i - 1];
        used += gap;
        let remaining = total - used;
        let lo = (heights[i - 1] - gap).max(0.0);
        let hi = remaining.min(1.0);
        heights.push(if hi > lo { lo + rng.gen::<f64>() * (hi - lo) } else { lo.min(hi) });
    }
    heights.push(0.0);
    let values: Vec<f64> = (0..k)
        .map(|i| (heights[i + 1] - heights[i]) / (jumps[i + 1] - jumps[i]))
        .collect();
    StepFunction::new(jumps, values).expect("constructed grid is valid")
}

fn random_jump_grid<R: Rng>(rng: &mut R, n_jumps: usize, span: f64) -> Vec<f64> {
    let n = n_jumps.max(2);
    let mut jumps: Vec<f64> = (0..=n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * span).collect();
    jumps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    jumps.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    while jumps.len() < 3 {
        jumps.push(jumps.last().unwrap() + 1.0);
    }
    jumps
}

// ---------------------------------------------------------------------------
// Tail thresholds and mass floors
// ---------------------------------------------------------------------------

/// Analytic floor for the sublevel Gaussian mass:
/// `integral over t > 1/(2 delta) of ((2 delta t - 1)/(1 + delta)) t exp(-t^2/2) dt`,
/// in closed form through the normal tail (the `-1` term cancels the
/// boundary part of the second moment exactly).
pub fn sublevel_mass_floor(delta: f64) -> Result<f64> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::FunctionClass("floor needs a positive delta".into()));
    }
    let c = 1.0 / (2.0 * delta);
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    // integral of t^2 e^{-t^2/2} over (c, inf) = c e^{-c^2/2} + sqrt(2 pi) (1 - Phi(c))
    let tail = numerics::normal_sf(c);
    let gauss_c = (-0.5 * c * c).exp();
    let second_moment = c * gauss_c + sqrt_2pi * tail;
    // integral of t e^{-t^2/2} over (c, inf) = e^{-c^2/2}
    let first_moment = gauss_c;
    Ok((2.0 * delta * second_moment - first_moment) / (1.0 + delta))
}

/// Quantile threshold: the smallest `t` whose lower-tail normal probability
/// reaches `exp(-1/delta^2)`, found by bisection on the distribution
/// function (so it is independent of the polynomial quantile approximation,
/// which tests compare against).
pub fn field_quantile_threshold(delta: f64) -> Result<f64> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(Error::FunctionClass("threshold needs a positive delta".into()));
    }
    let p = (-1.0 / (delta * delta)).exp();
    if p <= f64::MIN_POSITIVE {
        return Err(Error::FunctionClass(format!(
            "target probability underflows for delta = {delta}"
        )));
    }
    let mut lo = -40.0f64;
    let mut hi = 40.0f64;
    // Phi(lo) < p <= Phi(hi)
    for _ in 0..220 {
        let mid = 0.5 * (lo + hi);
        if numerics::normal_cdf(mid) >= p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::adaptive_simpson;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vee() -> PlConvex {
        // |t|
        PlConvex::from_breakpoints(vec![0.0], vec![0.0], -1.0, 1.0).unwrap()
    }

    #[test]
    fn evaluation_and_slopes_on_a_kink() {
        let g = vee();
        assert_eq!(g.eval(-2.0), 2.0);
        assert_eq!(g.eval(3.0), 3.0);
        assert_eq!(g.right_slope(0.0), 1.0);
        assert_eq!(g.left_slope(0.0), -1.0);
        assert_eq!(g.right_slope(-0.5), -1.0);
        assert_eq!(g.lipschitz(), 1.0);
        assert_eq!(g.slope_variation(), 2.0);
        let r = g.reflect();
        assert_eq!(r.eval(-2.0), 2.0);
        assert_eq!(r.right_slope(0.0), 1.0);
        let s = g.translate(1.0);
        assert_eq!(s.eval(1.0), 0.0);
        assert_eq!(s.eval(0.0), 1.0);
    }

    #[test]
    fn construction_rejects_concavity() {
        assert!(PlConvex::from_breakpoints(vec![0.0, 1.0], vec![0.0, 1.0], 2.0, 0.5).is_err());
        assert!(PlConvex::from_breakpoints(vec![0.0, 0.0], vec![0.0, 0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn pointwise_max_is_exact_on_a_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let f = random_pl_convex(&mut rng, 2.0, 4, 3.0);
            let g = random_pl_convex(&mut rng, 2.0, 3, 3.0);
            let h = f.max_with(&g);
            for k in -60..=60 {
                let t = k as f64 * 0.11;
                let want = f.eval(t).max(g.eval(t));
                assert!(
                    (h.eval(t) - want).abs() < 1e-9,
                    "max mismatch at {t}: {} vs {want}",
                    h.eval(t)
                );
            }
            let slopes = h.all_slopes();
            assert!(slopes.windows(2).all(|w| w[1] >= w[0] - 1e-9), "max not convex");
        }
    }

    #[test]
    fn comparison_matches_dense_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..30 {
            let f = random_pl_convex(&mut rng, 1.5, 3, 2.0);
            let g = random_pl_convex(&mut rng, 1.5, 4, 2.0);
            let claim = f.le(&g, 1e-12);
            let mut truth = true;
            for k in -400..=400 {
                let t = k as f64 * 0.05;
                if f.eval(t) > g.eval(t) + 1e-9 {
                    truth = false;
                    break;
                }
            }
            // `le` must never accept a violated comparison; tail slopes make
            // it strictly stronger than any bounded grid
            if claim {
                assert!(truth, "le() accepted a function that exceeds on the grid");
            }
        }
    }

    #[test]
    fn kink_witnesses_through_translation_and_lift() {
        let g = vee();
        // at the kink the right derivative is maximal, so no lift fits the
        // tube; the kink translation still certifies instability
        let w = stab_witness(&g, 0.0, 0.5, 0.2).expect("kink translation");
        assert!(w.slope_gap > 0.5);
        assert!(w.function.le(&g.add_const(0.2), 1e-12));
        assert!(g.add_const(-0.2).le(&w.function, 1e-12));
        assert!(w.function.lipschitz() <= g.lipschitz() + 1e-9);
        // just left of the kink the lifted tangent also fits
        let w2 = stab_witness(&g, -0.1, 0.5, 0.2).expect("tangent lift");
        assert!(w2.slope_gap > 0.5);
        let outer = stab_outer(&g, 0.5, 0.2);
        assert!(outer.contains(0.0));
        assert!(outer.contains(-0.1));

        let flat = PlConvex::line(0.3, 1.0);
        assert!(stab_witness(&flat, 0.0, 0.5, 0.2).is_none());
        assert!(stab_outer(&flat, 0.5, 0.2).is_empty());
    }

    #[test]
    fn two_slope_outer_set_solved_by_hand() {
        // for lambda |t| the window condition holds exactly on
        // [-4r/delta, 4r/delta], an interval of length 8r/delta
        let g = PlConvex::from_breakpoints(vec![0.0], vec![0.0], -2.0, 2.0).unwrap();
        let (delta, r) = (0.5, 0.25);
        let outer = stab_outer(&g, delta, r);
        assert_eq!(outer.intervals().len(), 1);
        let (lo, hi) = outer.intervals()[0];
        let a = 4.0 * r / delta;
        assert!((lo + a).abs() < 1e-12 && (hi - a).abs() < 1e-12);
        assert!((outer.lebesgue() - 8.0 * r / delta).abs() < 1e-12);
    }

    #[test]
    fn witnessed_points_lie_in_the_outer_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let delta = 0.4;
        let r = 0.15;
        let mut hits = 0;
        for _ in 0..40 {
            let g = random_pl_convex(&mut rng, 2.0, 5, 2.5);
            let outer = stab_outer(&g, delta, r);
            for k in -50..=50 {
                let t = k as f64 * 0.09;
                if let Some(w) = stab_witness(&g, t, delta, r) {
                    hits += 1;
                    assert!(w.slope_gap > delta);
                    assert!(w.function.lipschitz() <= g.lipschitz() + 1e-9);
                    let inside = outer
                        .intervals()
                        .iter()
                        .any(|&(lo, hi)| t >= lo - 1e-9 && t <= hi + 1e-9);
                    assert!(inside, "witnessed point {t} outside the outer set {outer:?}");
                }
            }
        }
        assert!(hits > 40, "the randomized sweep found too few witnesses ({hits})");
    }

    #[test]
    fn covering_respects_count_and_length_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..30 {
            let lambda = 2.0;
            let g = random_pl_convex(&mut rng, lambda, 6, 3.0);
            for &(delta, r) in &[(0.5, 0.1), (0.8, 0.3), (0.3, 0.05)] {
                let outer = stab_outer(&g, delta, r);
                let cover = stab_covering(&g, delta, r);
                let len = 16.0 * r / delta;
                for c in &cover {
                    assert!((c.1 - c.0 - len).abs() < 1e-9);
                }
                let allowed = (4.0 * lambda / delta).floor() as usize;
                assert!(
                    cover.len() <= allowed,
                    "cover used {} intervals, allowed {allowed}",
                    cover.len()
                );
                assert!(outer.lebesgue() <= allowed as f64 * len + 1e-9);
                for &(lo, hi) in outer.intervals() {
                    for k in 0..=20 {
                        let t = lo + (hi - lo) * k as f64 / 20.0;
                        assert!(
                            cover.iter().any(|&(a, b)| t >= a - 1e-9 && t <= b + 1e-9),
                            "outer point {t} uncovered"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_measure_of_interval_sets() {
        let all = IntervalSet::new(vec![(f64::NEG_INFINITY, f64::INFINITY)]).unwrap();
        assert!((all.gaussian_measure(1.0).unwrap() - 1.0).abs() < 1e-12);
        let centered = IntervalSet::new(vec![(-0.5, 0.5)]).unwrap();
        let m = centered.gaussian_measure(1.0).unwrap();
        assert!((m - 0.3829249).abs() < 1e-7, "centered unit interval mass {m}");
        // variance scaling: same mass as [-0.25, 0.25] at sigma = 1/2
        let half = IntervalSet::new(vec![(-0.25, 0.25)]).unwrap();
        assert!((half.gaussian_measure(0.25).unwrap() - m).abs() < 1e-12);
        // among sets of equal length, the centered interval is extremal
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = rng.gen::<f64>() * 4.0 - 2.0;
            let b = a + rng.gen::<f64>() * 2.0;
            let c = b + 0.1 + rng.gen::<f64>();
            let d = c + rng.gen::<f64>() * 2.0;
            let set = IntervalSet::new(vec![(a, b), (c, d)]).unwrap();
            let len = set.lebesgue();
            let best = IntervalSet::new(vec![(-len / 2.0, len / 2.0)]).unwrap();
            assert!(
                set.gaussian_measure(1.0).unwrap()
                    <= best.gaussian_measure(1.0).unwrap() + 1e-12
            );
        }
    }

    #[test]
    fn complement_of_outer_set_keeps_gaussian_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..25 {
            let lambda = 1.5;
            let g = random_pl_convex(&mut rng, lambda, 5, 2.0);
            for &(delta, r, sigma2) in &[(0.5, 0.1, 1.0), (0.4, 0.2, 2.0), (0.9, 0.05, 0.5)] {
                let outer = stab_outer(&g, delta, r);
                let kept = 1.0 - outer.gaussian_measure(sigma2).unwrap();
                let floor = stab_gaussian_floor(lambda, delta, r, sigma2);
                assert!(
                    kept >= floor - 1e-12,
                    "kept mass {kept} below the frozen floor {floor}"
                );
            }
        }
    }

    #[test]
    fn admissible_steps_respect_the_pairing_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let g = random_admissible_step(&mut rng, 6, 3.0);
            assert!(g.is_admissible(1e-9));
            let pairing = class_g_gaussian_bound(&g).unwrap();
            assert!(
                pairing.abs() <= 2.0 + 1e-9,
                "pairing {pairing} exceeds the oscillation bound"
            );
            // closed-form pieces agree with per-piece quadrature (the
            // integrand is smooth inside each piece)
            let mut quad = Kahan::new();
            for i in 0..g.values().len() {
                let v = g.values()[i];
                quad.add(adaptive_simpson(
                    &|t: f64| v * t * (-0.5 * t * t).exp(),
                    g.jumps()[i],
                    g.jumps()[i + 1],
                    1e-13,
                ));
            }
            let quad = quad.value();
            assert!((pairing - quad).abs() < 1e-9, "pairing {pairing} vs quadrature {quad}");
        }
    }

    #[test]
    fn pairing_hand_value_for_the_sign_block() {
        // +1 on [0,1], -1 on [-1,0]: both halves contribute 1 - e^{-1/2}
        let g = StepFunction::new(vec![-1.0, 0.0, 1.0], vec![-1.0, 1.0]).unwrap();
        assert!(g.is_admissible(1e-12));
        let want = 2.0 * (1.0 - (-0.5f64).exp());
        let got = class_g_gaussian_bound(&g).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // an out-of-class function is rejected
        let bad = StepFunction::new(vec![0.0, 3.0], vec![1.0]).unwrap();
        assert!(class_g_gaussian_bound(&bad).is_err());
    }

    #[test]
    fn sublevel_mass_dominates_the_floor() {
        // zero function: the sublevel set is the whole line
        let zero = StepFunction::new(vec![-1.0, 1.0], vec![0.0]).unwrap();
        let (measured, floor) = sublevel_gaussian_lower(&zero, 1.0).unwrap();
        assert!((measured - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!(measured >= floor - 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..60 {
            let g = random_admissible_step_floor(&mut rng, 6, 3.0);
            assert!(g.values().iter().all(|&v| v >= -1.0 - 1e-12));
            for &delta in &[0.1, 0.5, 1.0] {
                let (measured, floor) = sublevel_gaussian_lower(&g, delta).unwrap();
                assert!(
                    measured >= floor - 1e-9,
                    "delta {delta}: measured {measured} below floor {floor}"
                );
            }
        }
    }

    #[test]
    fn mass_floor_matches_quadrature_and_behaves() {
        for &delta in &[0.05, 0.1, 0.3, 0.7, 1.0] {
            let closed = sublevel_mass_floor(delta).unwrap();
            let c = 1.0 / (2.0 * delta);
            let quad = adaptive_simpson(
                &|t: f64| ((2.0 * delta * t - 1.0) / (1.0 + delta)) * t * (-0.5 * t * t).exp(),
                c,
                c + 60.0,
                1e-13,
            );
            assert!(
                (closed - quad).abs() < 1e-10,
                "delta {delta}: closed {closed} vs quadrature {quad}"
            );
            assert!(closed > 0.0);
        }
        // decreasing delta pushes the threshold out and shrinks the floor
        let hi = sublevel_mass_floor(0.5).unwrap();
        let lo = sublevel_mass_floor(0.05).unwrap();
        assert!(lo < hi);
    }

    #[test]
    fn quantile_threshold_inverts_the_tail() {
        let mut prev = f64::INFINITY;
        for k in (1..=20).rev() {
            let delta = 0.05 * k as f64;
            let t = field_quantile_threshold(delta).unwrap();
            let p = (-1.0 / (delta * delta)).exp();
            let back = numerics::normal_cdf(t);
            assert!(
                (back - p).abs() <= 1e-9 * p.max(1e-300),
                "delta {delta}: Phi({t}) = {back} vs {p}"
            );
            // agreement with the polynomial quantile route
            let poly = numerics::inverse_normal_cdf(p);
            assert!((t - poly).abs() < 1e-7, "delta {delta}: {t} vs {poly}");
            // for small delta, t * delta is pinned near -sqrt(2)
            let prod = t * delta;
            assert!(
                (-1.45..=-0.95).contains(&prod) || delta > 0.5,
                "delta {delta}: t*delta = {prod}"
            );
            assert!(t < 0.0);
            // threshold recedes as delta shrinks
            assert!(t < prev);
            prev = t;
        }
        // large delta sends the target probability toward one
        let wide = field_quantile_threshold(100.0).unwrap();
        assert!(wide > 3.0);
    }
}
