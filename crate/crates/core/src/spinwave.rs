//! Spin-wave rotation profiles and free-energy gap checks for
//! continuous-symmetry models.
//!
//! The construction interpolates a plane rotation from angle pi on an inner
//! box down to zero outside its doubling. Rotating a configuration and the
//! disorder together leaves the coupling term invariant, and the rotated
//! energies exceed the original by at most a quadratic budget in the angle
//! increments plus an external-field term. On clock systems the same budget
//! bounds the disorder-averaged free-energy cost of flipping the field
//! inside the inner box.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderField;
use crate::error::{Error, Result};
use crate::exact::{exact_gibbs, ExactCaps};
use crate::lattice::{BoxRegion, Region, Vertex};
use crate::models::{
    disordered_energy, Boundary, DiscreteTables, ModelSpec, ModelVariant, SpinConfig,
};

// ---------------------------------------------------------------------------
// Rotation profiles
// ---------------------------------------------------------------------------

/// Interpolation profile: angle pi on the inner box, a linear ramp on the
/// rest of the doubled inner box, zero outside it. The rotation acts on one
/// coordinate plane, so that the angle-pi rotation flips both of its axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationProfile {
    /// Inner box, `None` for the identity profile.
    pub inner: Option<BoxRegion>,
    pub outer: BoxRegion,
    /// Doubling of the inner box; the support of the angle map.
    pub support: Option<BoxRegion>,
    /// Side of the inner box; the ramp width is half of it.
    pub ell: i64,
    /// Spin dimension.
    pub n: usize,
    /// Rotated coordinate plane `(i, i+1 mod n)`.
    pub plane: (usize, usize),
    support_region: Region,
    theta: Vec<f64>,
}

impl RotationProfile {
    /// Angle at a vertex; zero off the support.
    pub fn theta(&self, v: &Vertex) -> f64 {
        match self.support_region.position(v) {
            Some(i) => self.theta[i],
            None => 0.0,
        }
    }

    pub fn support_region(&self) -> &Region {
        &self.support_region
    }

    /// Largest angle difference across a lattice edge meeting the outer
    /// box, counting edges into the zero-angle exterior.
    pub fn max_edge_increment(&self) -> Result<f64> {
        let d = self.outer.region().d();
        let mut best = 0.0f64;
        for v in self.outer.region().iter() {
            let tv = self.theta(v);
            for axis in 0..d {
                for dir in [1i64, -1] {
                    let w = v.shifted(axis, dir)?;
                    let tw = self.theta(&w);
                    best = best.max((tv - tw).abs());
                }
            }
        }
        Ok(best)
    }

    /// Lipschitz constant of the profile in units of `1/ell`.
    pub fn c_theta(&self) -> Result<f64> {
        Ok(self.max_edge_increment()? * self.ell as f64)
    }

    /// Snap every angle to the nearest multiple of `2 pi / n_states`, the
    /// rotations that permute the clock states. The flip angle pi must stay
    /// on the grid, so `n_states` has to be even.
    pub fn clock_rounded(&self, n_states: u16) -> Result<RotationProfile> {
        if n_states < 2 || n_states % 2 != 0 {
            return Err(Error::config(
                "clock rounding needs an even number of states to keep the flip exact",
            ));
        }
        let step = 2.0 * PI / n_states as f64;
        let mut out = self.clone();
        for t in &mut out.theta {
            *t = (*t / step).round() * step;
        }
        Ok(out)
    }
}

/// Build the profile for an inner box inside an outer box. The inner box
/// must be a cube and its doubling must fit inside the outer box; `None`
/// gives the identity profile. The angle at a vertex of the doubled box is
/// `pi * min(2 dist / ell, 1)` with `dist` the Chebyshev distance to the
/// complement, which puts angle pi on all of the inner box and makes
/// neighbor increments at most `2 pi / ell`.
pub fn make_profile(
    inner: Option<&BoxRegion>,
    outer: &BoxRegion,
    n: usize,
    plane_axis: usize,
) -> Result<RotationProfile> {
    if n < 2 {
        return Err(Error::config("rotation profiles need spin dimension at least 2"));
    }
    if plane_axis >= n {
        return Err(Error::config("rotation plane axis out of range"));
    }
    let plane = (plane_axis, (plane_axis + 1) % n);
    let inner = match inner {
        None => {
            return Ok(RotationProfile {
                inner: None,
                outer: *outer,
                support: None,
                ell: 0,
                n,
                plane,
                support_region: Region::empty(outer.region().d()),
                theta: Vec::new(),
            })
        }
        Some(b) => *b,
    };
    let d = outer.region().d();
    if (0..d).any(|axis| inner.side(axis) != inner.max_side()) {
        return Err(Error::geometry("inner box must be a cube"));
    }
    let support = inner.doubled()?;
    if !outer.contains_box(&support) {
        return Err(Error::geometry("doubled inner box leaves the outer box"));
    }
    let ell = inner.max_side();
    let support_region = support.region();
    let mut theta = Vec::with_capacity(support_region.len());
    for v in support_region.iter() {
        let mut slack = i64::MAX;
        for axis in 0..d {
            slack = slack.min(v.coord(axis) - support.lo(axis));
            slack = slack.min(support.hi(axis) - v.coord(axis));
        }
        let ramp = 2.0 * (slack + 1) as f64 / ell as f64;
        theta.push(PI * ramp.min(1.0));
    }
    Ok(RotationProfile {
        inner: Some(inner),
        outer: *outer,
        support: Some(support),
        ell,
        n,
        plane,
        support_region,
        theta,
    })
}

// ---------------------------------------------------------------------------
// Rotations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RotationDirection {
    /// Rotate by `+theta`.
    Forward,
    /// Rotate by `-theta`.
    Reverse,
}

fn rotate_components(profile: &RotationProfile, dir: RotationDirection, v: &Vertex, x: &mut [f64]) {
    let t = match dir {
        RotationDirection::Forward => profile.theta(v),
        RotationDirection::Reverse => -profile.theta(v),
    };
    if t == 0.0 {
        return;
    }
    let (i, j) = profile.plane;
    let (c, s) = (t.cos(), t.sin());
    let (xi, xj) = (x[i], x[j]);
    x[i] = c * xi - s * xj;
    x[j] = s * xi + c * xj;
}

/// Rotate a disorder field sitewise by the profile.
pub fn rotate_field(
    eta: &DisorderField,
    profile: &RotationProfile,
    dir: RotationDirection,
) -> Result<DisorderField> {
    let m = eta.m();
    if m != profile.n {
        return Err(Error::model(format!(
            "field has {m} components, profile rotates {} of them",
            profile.n
        )));
    }
    let mut values = eta.values().to_vec();
    for (p, v) in eta.region().iter().enumerate() {
        rotate_components(profile, dir, v, &mut values[p * m..(p + 1) * m]);
    }
    DisorderField::from_values(eta.region().clone(), m, values, 0x5f1b_ed0c)
}

/// Rotate a vector-spin configuration sitewise by the profile.
pub fn rotate_config(
    sigma: &SpinConfig,
    profile: &RotationProfile,
    dir: RotationDirection,
) -> Result<SpinConfig> {
    let region = sigma.region().clone();
    let n = match sigma.states() {
        Some(_) => {
            return Err(Error::model(
                "rotation needs vector spins; convert clock states to vectors first",
            ))
        }
        None => profile.n,
    };
    let mut comps = Vec::with_capacity(region.len() * n);
    for v in region.iter() {
        let x = sigma.vector(v)?;
        if x.len() != n {
            return Err(Error::model("spin dimension differs from the profile's"));
        }
        let mut buf = x.to_vec();
        rotate_components(profile, dir, v, &mut buf);
        comps.extend(buf);
    }
    SpinConfig::from_vectors(region, n, comps)
}

/// Map a clock configuration to its unit-vector representation.
pub fn clock_vector_config(spec: &ModelSpec, sigma: &SpinConfig) -> Result<SpinConfig> {
    let tab = DiscreteTables::new(spec)?;
    if spec.spin_dim() != 2 {
        return Err(Error::model("clock vectorization is for planar models"));
    }
    let region = sigma.region().clone();
    let mut comps = Vec::with_capacity(region.len() * 2);
    for v in region.iter() {
        let s = sigma.state(v)?;
        comps.extend_from_slice(tab.vec_of(s));
    }
    SpinConfig::from_vectors(region, 2, comps)
}

// ---------------------------------------------------------------------------
// Pointwise energy inequality
// ---------------------------------------------------------------------------

/// Outcome of the pointwise check: the combined rotated-energy excess and
/// the analytic budget that must dominate it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MwPointwise {
    /// `H(R sigma, R eta) + H(R~ sigma, R~ eta) - 2 H(sigma, eta)`.
    pub lhs_excess: f64,
    /// `C_psi sum_edges (theta_v - theta_w)^2 + sum_v 2 (1 - cos theta_v)
    /// |h_plane|`.
    pub budget: f64,
}

fn plane_field_norm(spec: &ModelSpec, plane: (usize, usize)) -> Result<f64> {
    match &spec.variant {
        ModelVariant::On { h, .. } => Ok(h[plane.0].hypot(h[plane.1])),
        ModelVariant::ClockOn2 { h, .. } => Ok(h[plane.0].hypot(h[plane.1])),
        _ => Err(Error::model("spin-wave checks need a rotation-invariant model")),
    }
}

fn curvature(spec: &ModelSpec) -> Result<f64> {
    match &spec.variant {
        ModelVariant::On { psi, .. } | ModelVariant::ClockOn2 { psi, .. } => {
            Ok(psi.curvature_constant())
        }
        _ => Err(Error::model("spin-wave checks need a rotation-invariant model")),
    }
}

fn wrap_into(b: &BoxRegion, v: &Vertex) -> Result<Vertex> {
    let d = b.region().d();
    let mut coords = Vec::with_capacity(d);
    for axis in 0..d {
        let lo = b.lo(axis);
        let side = b.side(axis);
        let c = v.coord(axis);
        coords.push(lo + (c - lo).rem_euclid(side));
    }
    Vertex::new(&coords)
}

/// The angle-increment and field budget of the profile for a model on the
/// profile's outer box. Edges leaving the box pair with angle zero under a
/// fixed boundary, wrap around under a periodic one, and drop out under a
/// free one.
pub fn rotation_budget(
    spec: &ModelSpec,
    profile: &RotationProfile,
    boundary: &Boundary,
) -> Result<f64> {
    let c_psi = curvature(spec)?;
    let h_plane = plane_field_norm(spec, profile.plane)?;
    let region = profile.outer.region();
    let d = region.d();
    let mut edge_sum = 0.0;
    for v in region.iter() {
        let tv = profile.theta(v);
        for axis in 0..d {
            let w = v.shifted(axis, 1)?;
            if region.contains(&w) {
                let dt = tv - profile.theta(&w);
                edge_sum += dt * dt;
            } else {
                match boundary {
                    Boundary::Periodic(b) => {
                        let dt = tv - profile.theta(&wrap_into(b, &w)?);
                        edge_sum += dt * dt;
                    }
                    Boundary::Fixed(_) => edge_sum += tv * tv,
                    Boundary::Free => {}
                }
            }
            let u = v.shifted(axis, -1)?;
            if !region.contains(&u) {
                match boundary {
                    // the wrapped edge was counted from the other face
                    Boundary::Periodic(_) => {}
                    Boundary::Fixed(_) => edge_sum += tv * tv,
                    Boundary::Free => {}
                }
            }
        }
    }
    let mut site_sum = 0.0;
    if h_plane > 0.0 {
        for v in profile.support_region.iter() {
            site_sum += 2.0 * (1.0 - profile.theta(v).cos()) * h_plane;
        }
    }
    Ok(c_psi * edge_sum + site_sum)
}

fn vectorized_boundary(spec: &ModelSpec, boundary: &Boundary) -> Result<Boundary> {
    Ok(match boundary {
        Boundary::Fixed(tau) => Boundary::Fixed(clock_vector_config(spec, tau)?),
        other => other.clone(),
    })
}

/// Evaluate both rotated energies against the original and the analytic
/// budget. Errors if the excess exceeds the budget beyond rounding, since
/// that would contradict the inequality the budget encodes.
pub fn mw_pointwise_check(
    spec: &ModelSpec,
    profile: &RotationProfile,
    sigma: &SpinConfig,
    boundary: &Boundary,
    eta: &DisorderField,
) -> Result<MwPointwise> {
    let lam = profile.outer.region();
    let budget = rotation_budget(spec, profile, boundary)?;
    let (on_spec, sigma_v, boundary_v);
    let (spec_eval, sigma_eval, boundary_eval) = match &spec.variant {
        ModelVariant::On { .. } => (spec, sigma, boundary),
        ModelVariant::ClockOn2 { n_states: _, h, psi } => {
            on_spec = ModelSpec::new(
                ModelVariant::On { n: 2, h: h.to_vec(), psi: *psi },
                spec.d as usize,
                spec.beta,
                spec.lambda,
            )?;
            sigma_v = clock_vector_config(spec, sigma)?;
            boundary_v = vectorized_boundary(spec, boundary)?;
            (&on_spec, &sigma_v, &boundary_v)
        }
        _ => return Err(Error::model("spin-wave checks need a rotation-invariant model")),
    };
    if spec_eval.spin_dim() != profile.n {
        return Err(Error::model("profile spin dimension differs from the model's"));
    }
    let base = disordered_energy(spec_eval, &lam, sigma_eval, boundary_eval, eta)?;
    let mut rotated = [0.0; 2];
    for (slot, dir) in [RotationDirection::Forward, RotationDirection::Reverse]
        .into_iter()
        .enumerate()
    {
        let rs = rotate_config(sigma_eval, profile, dir)?;
        let re = rotate_field(eta, profile, dir)?;
        rotated[slot] = disordered_energy(spec_eval, &lam, &rs, boundary_eval, &re)?;
    }
    let lhs_excess = rotated[0] + rotated[1] - 2.0 * base;
    if lhs_excess > budget + 1e-9 {
        return Err(Error::NumericCheck(format!(
            "rotated-energy excess {lhs_excess} exceeds the budget {budget}"
        )));
    }
    Ok(MwPointwise { lhs_excess, budget })
}

// ---------------------------------------------------------------------------
// Free-energy gap on clock systems
// ---------------------------------------------------------------------------

/// Negate the two plane components of the field at every vertex of `lam`.
pub fn flip_plane(
    eta: &DisorderField,
    lam: &Region,
    plane: (usize, usize),
) -> Result<DisorderField> {
    let m = eta.m();
    if plane.0 >= m || plane.1 >= m {
        return Err(Error::config("flip plane out of range for the field"));
    }
    let mut values = eta.values().to_vec();
    for v in lam.iter() {
        let p = eta
            .region()
            .position(v)
            .ok_or_else(|| Error::model("flip region leaves the field's region"))?;
        values[p * m + plane.0] = -values[p * m + plane.0];
        if plane.1 != plane.0 {
            values[p * m + plane.1] = -values[p * m + plane.1];
        }
    }
    DisorderField::from_values(eta.region().clone(), m, values, 0xf11b_0a11)
}

/// `-(1/beta) ln Z` of a one-dimensional periodic clock chain by a scaled
/// transfer-matrix product, per site.
fn clock_log_z_tm(spec: &ModelSpec, outer: &BoxRegion, eta: &DisorderField) -> Result<f64> {
    let (n_states, h) = match &spec.variant {
        ModelVariant::ClockOn2 { n_states, h, .. } => (*n_states as usize, h),
        _ => return Err(Error::model("transfer matrix is for clock models")),
    };
    if spec.d != 1 {
        return Err(Error::model("transfer matrix is one-dimensional"));
    }
    let tab = DiscreteTables::new(spec)?;
    let beta = spec.beta;
    let lambda = spec.lambda;
    let sites = outer.region();
    // scaled product of per-site matrices
    // T_v[s][t] = exp(-beta (pair(s, t) + site_v(s))), Z = tr(prod T_v)
    let mut m = vec![0.0f64; n_states * n_states];
    let mut prod: Vec<f64> = (0..n_states * n_states)
        .map(|i| if i % (n_states + 1) == 0 { 1.0 } else { 0.0 })
        .collect();
    let mut log_scale = 0.0f64;
    for v in sites.iter() {
        let e = eta.component(v)?;
        for s in 0..n_states {
            let vec_s = tab.vec_of(s as u16);
            let site =
                -(vec_s[0] * (lambda * e[0] + h[0]) + vec_s[1] * (lambda * e[1] + h[1]));
            for t in 0..n_states {
                let energy = tab.pair_energy(s as u16, t as u16) + site;
                m[s * n_states + t] = (-beta * energy).exp();
            }
        }
        let mut next = vec![0.0f64; n_states * n_states];
        for s in 0..n_states {
            for r in 0..n_states {
                let a = prod[s * n_states + r];
                if a == 0.0 {
                    continue;
                }
                for t in 0..n_states {
                    next[s * n_states + t] += a * m[r * n_states + t];
                }
            }
        }
        let max = next.iter().cloned().fold(0.0f64, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::NumericCheck("transfer-matrix product degenerated".into()));
        }
        for x in &mut next {
            *x /= max;
        }
        log_scale += max.ln();
        prod = next;
    }
    let trace: f64 = (0..n_states).map(|s| prod[s * n_states + s]).sum();
    if !(trace > 0.0) {
        return Err(Error::NumericCheck("transfer-matrix trace vanished".into()));
    }
    Ok(log_scale + trace.ln())
}

/// Free energy per site of a clock system: exhaustive enumeration while the
/// state count fits the cap, else the one-dimensional periodic transfer
/// matrix.
pub fn clock_free_energy(
    spec: &ModelSpec,
    outer: &BoxRegion,
    boundary: &Boundary,
    eta: &DisorderField,
    caps: &ExactCaps,
) -> Result<f64> {
    let n_states = spec
        .num_states()
        .ok_or_else(|| Error::model("clock free energy needs a discrete model"))? as f64;
    let region = outer.region();
    let sites = region.len() as f64;
    if n_states.powf(sites) <= caps.max_states as f64 {
        return Ok(exact_gibbs(spec, &region, boundary, eta, caps)?.free_energy);
    }
    if spec.d == 1 && matches!(boundary, Boundary::Periodic(_)) {
        let log_z = clock_log_z_tm(spec, outer, eta)?;
        return Ok(-log_z / (spec.beta * sites));
    }
    Err(Error::CapExceeded(format!(
        "{n_states}^{sites} states exceed the cap and no transfer-matrix route applies"
    )))
}

/// Free-energy cost of flipping the field inside the inner box, for one
/// field realization: `FE(flipped) - FE(original)`.
pub fn fe_gap_once(
    spec: &ModelSpec,
    inner: Option<&BoxRegion>,
    outer: &BoxRegion,
    boundary: &Boundary,
    eta: &DisorderField,
    caps: &ExactCaps,
) -> Result<f64> {
    let inner = match inner {
        None => return Ok(0.0),
        Some(b) => b,
    };
    let flipped = flip_plane(eta, &inner.region(), (0, 1))?;
    let fe = clock_free_energy(spec, outer, boundary, eta, caps)?;
    let fe_flipped = clock_free_energy(spec, outer, boundary, &flipped, caps)?;
    Ok(fe_flipped - fe)
}

/// Disorder-averaged flip gap with its analytic budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeGapReport {
    /// Mean of `FE(flipped) - FE(original)` over the replicas.
    pub estimate: f64,
    pub stderr: f64,
    /// Rotation budget over `2 |outer|`, the bound the construction proves
    /// for the conditional version of the gap.
    pub budget_density: f64,
    pub replicas: u32,
}

/// Estimate the disorder-averaged free-energy flip gap on a clock system
/// and the budget that must dominate it.
pub fn mw_fe_gap(
    spec: &ModelSpec,
    inner: Option<&BoxRegion>,
    outer: &BoxRegion,
    boundary: &Boundary,
    replicas: u32,
    caps: &ExactCaps,
    seed: u64,
) -> Result<FeGapReport> {
    let n_states = match &spec.variant {
        ModelVariant::ClockOn2 { n_states, .. } => *n_states,
        _ => return Err(Error::model("flip-gap estimation is for clock models")),
    };
    if replicas < 2 {
        return Err(Error::config("flip-gap estimation needs at least 2 replicas"));
    }
    let budget_density = match inner {
        None => 0.0,
        Some(b) => {
            let profile = make_profile(Some(b), outer, 2, 0)?.clock_rounded(n_states)?;
            rotation_budget(spec, &profile, boundary)?
                / (2.0 * outer.region().len() as f64)
        }
    };
    let region = outer.region();
    let gaps: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let eta = DisorderField::sample(
                seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(r as u64 + 1)),
                region.clone(),
                spec.m(),
            );
            fe_gap_once(spec, inner, outer, boundary, &eta, caps)
        })
        .collect::<Result<Vec<_>>>()?;
    let nr = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / nr;
    let var = gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (nr - 1.0);
    let stderr = (var / nr).sqrt();
    Ok(FeGapReport { estimate: mean, stderr, budget_density, replicas })
}

// ---------------------------------------------------------------------------
