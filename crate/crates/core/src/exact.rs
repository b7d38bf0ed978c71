//! Exact enumeration engine for small discrete systems.
//!
//! Enumerates every spin configuration of a region with a reflected
//! mixed-radix Gray walk (one site changes per step), maintaining the energy
//! incrementally and folding Boltzmann weights into online log-sum-exp
//! accumulators. On top of that sit exact Gibbs expectations, free energies,
//! and the boundary-variation functionals obtained by exhausting boundary
//! configurations on the interaction shell.

use crate::disorder::{DisorderField, WeightFunction};
use crate::error::{Error, Result};
use crate::lattice::{Region, Vertex};
use crate::models::{
    Boundary, DiscreteTables, EnergyContext, ModelSpec, ModelVariant, SpinConfig,
};
use crate::numerics::{Kahan, LogSumAcc, WeightedVecAcc};

/// Hard limits for exhaustive work. Exceeding either produces
/// `Error::CapExceeded` instead of an open-ended computation.
#[derive(Clone, Copy, Debug)]
pub struct ExactCaps {
    /// Maximum number of spin configurations to enumerate.
    pub max_states: u64,
    /// Maximum number of boundary configurations to exhaust.
    pub max_boundaries: u64,
}

impl Default for ExactCaps {
    fn default() -> Self {
        ExactCaps { max_states: 1 << 24, max_boundaries: 1 << 20 }
    }
}

// ---------------------------------------------------------------------------
// Compiled discrete model
// ---------------------------------------------------------------------------

/// How the disedge observable component resolves its forward neighbor.
#[derive(Clone, Copy, Debug)]
enum EdgeObsNbr {
    In(u32),
    FixedPm(f64),
    Absent,
}

#[derive(Clone, Copy, Debug)]
struct Adj {
    other: u32,
    /// Multiplies the shared pair-energy table.
    w_base: f64,
    /// Multiplies the `+-1` product of the two endpoint spins.
    w_pm: f64,
}

/// A discrete model flattened onto a region: per-site state energies with
/// boundary and disorder folded in, an adjacency list for the edge terms, and
/// the observable layout. Powers both exhaustive enumeration and Monte Carlo
/// sweeps; its energies are checked against the direct evaluation path.
pub struct CompiledDiscrete {
    pub n_sites: usize,
    pub s: usize,
    pub m: usize,
    pub beta: f64,
    tab: DiscreteTables,
    /// `site_field[i * s + a]`: full on-site energy of state `a` at site `i`.
    site_field: Vec<f64>,
    adj: Vec<Vec<Adj>>,
    /// Edge list with `i < j` order not guaranteed; each lattice edge appears
    /// once (torus multiplicities preserved).
    edges: Vec<(u32, u32, f64, f64)>,
    /// Observable layout: `None` uses the per-state vector table; otherwise
    /// one entry per (site, component) resolving an edge product.
    edge_obs: Option<Vec<EdgeObsNbr>>,
}

impl CompiledDiscrete {
    pub fn compile(
        spec: &ModelSpec,
        lam: &Region,
        boundary: &Boundary,
        eta: Option<&DisorderField>,
    ) -> Result<CompiledDiscrete> {
        let s = spec
            .num_states()
            .ok_or_else(|| Error::model("compilation requires a discrete model"))? as usize;
        let tab = DiscreteTables::new(spec)?;
        let n = lam.len();
        let m = spec.m();
        let d = spec.d as usize;
        let lambda = spec.lambda;
        if let Some(eta) = eta {
            if eta.m() != m {
                return Err(Error::model("disorder component count mismatch"));
            }
        }
        // Validate the boundary and configuration-independent structure by
        // constructing a throwaway context on a constant configuration.
        let probe = SpinConfig::uniform_discrete(lam.clone(), 0);
        let _ = EnergyContext::new(spec, lam, &probe, boundary)?;

        let is_ea = matches!(spec.variant, ModelVariant::Ea { .. });
        let periodic = matches!(boundary, Boundary::Periodic(_));
        let mut site_field = vec![0.0; n * s];
        let mut edges: Vec<(u32, u32, f64, f64)> = Vec::new();
        let mut edge_obs: Vec<EdgeObsNbr> = Vec::new();

        // per-state field energy from the base field, disorder field, and the
        // continuous-symmetry external field
        for (i, v) in lam.iter().enumerate() {
            let eta_v = match eta {
                Some(f) if !is_ea => Some(f.component(v)?),
                _ => None,
            };
            for a in 0..s {
                let vec_a = tab.vec_of(a as u16);
                let mut e = 0.0;
                for c in 0..tab.spin_dim {
                    let mut field = tab.base_h[c];
                    if eta.is_some() {
                        field += tab.disorder_h[c];
                        if let Some(ev) = eta_v {
                            field += lambda * ev[c];
                        }
                    }
                    e -= field * vec_a[c];
                }
                site_field[i * s + a] = e;
            }
        }

        // resolve a neighbor vertex to in-region position or boundary state
        let resolve = |u: &Vertex| -> Result<EdgeObsNbr> {
            if let Some(p) = lam.position(u) {
                return Ok(EdgeObsNbr::In(p as u32));
            }
            match boundary {
                Boundary::Free => Ok(EdgeObsNbr::Absent),
                Boundary::Periodic(b) => {
                    let mut coords = [0i64; 4];
                    for axis in 0..b.d() {
                        let side = b.side(axis);
                        let mut c = (u.coord(axis) - b.lo(axis)) % side;
                        if c < 0 {
                            c += side;
                        }
                        coords[axis] = b.lo(axis) + c;
                    }
                    let w = Vertex::new(&coords[..b.d()])?;
                    lam.position(&w).map(|p| EdgeObsNbr::In(p as u32)).ok_or_else(|| {
                        Error::geometry("periodic wrap left the region")
                    })
                }
                Boundary::Fixed(tau) => {
                    let st = tau.state(u)?;
                    Ok(EdgeObsNbr::FixedPm(tab.pm(st)))
                }
            }
        };
        // FixedPm carries a pm value; for general state models we need the
        // state itself for the pair table, so keep a parallel resolver.
        let resolve_state = |u: &Vertex| -> Result<Option<u16>> {
            if lam.position(u).is_some() || matches!(boundary, Boundary::Periodic(_)) {
                return Ok(None); // handled via In
            }
            match boundary {
                Boundary::Free => Ok(None),
                Boundary::Fixed(tau) => Ok(Some(tau.state(u)?)),
                Boundary::Periodic(_) => unreachable!(),
            }
        };

        for (i, v) in lam.iter().enumerate() {
            for axis in 0..d {
                // forward direction: carries base edges, torus edges, and the
                // edge observables
                let up = v.shifted(axis, 1)?;
                let r = resolve(&up)?;
                match r {
                    EdgeObsNbr::In(j) => {
                        let w_pm = match eta {
                            Some(f) if is_ea => -lambda * f.component(v)?[axis],
                            _ => 0.0,
                        };
                        let w_base = if is_ea { 0.0 } else { 1.0 };
                        if w_base != 0.0 || w_pm != 0.0 {
                            edges.push((i as u32, j, w_base, w_pm));
                        }
                    }
                    EdgeObsNbr::FixedPm(pm_tau) => {
                        let st = resolve_state(&up)?.expect("fixed boundary has a state");
                        for a in 0..s {
                            if !is_ea {
                                site_field[i * s + a] += tab.pair_energy(a as u16, st);
                            }
                        }
                        if is_ea {
                            if let Some(f) = eta {
                                let w = -lambda * f.component(v)?[axis];
                                for a in 0..s {
                                    site_field[i * s + a] += w * tab.pm(a as u16) * pm_tau;
                                }
                            }
                        }
                    }
                    EdgeObsNbr::Absent => {}
                }
                if is_ea {
                    edge_obs.push(r);
                }
                // backward direction: only boundary edges remain (interior
                // ones were pushed by the neighbor's forward pass, torus ones
                // wrap onto forward edges)
                if !periodic && !is_ea {
                    let down = v.shifted(axis, -1)?;
                    if !lam.contains(&down) {
                        if let Some(st) = resolve_state(&down)? {
                            for a in 0..s {
                                site_field[i * s + a] += tab.pair_energy(a as u16, st);
                            }
                        }
                    }
                }
            }
        }

        let mut adj = vec![Vec::new(); n];
        for &(i, j, w_base, w_pm) in &edges {
            adj[i as usize].push(Adj { other: j, w_base, w_pm });
            adj[j as usize].push(Adj { other: i, w_base, w_pm });
        }
        Ok(CompiledDiscrete {
            n_sites: n,
            s,
            m,
            beta: spec.beta,
            tab,
            site_field,
            adj,
            edges,
            edge_obs: if is_ea { Some(edge_obs) } else { None },
        })
    }

    /// Total energy of a state vector (canonical region order).
    pub fn energy(&self, states: &[u16]) -> f64 {
        let mut acc = Kahan::new();
        for i in 0..self.n_sites {
            acc.add(self.site_field[i * self.s + states[i] as usize]);
        }
        for &(i, j, w_base, w_pm) in &self.edges {
            let (si, sj) = (states[i as usize], states[j as usize]);
            if w_base != 0.0 {
                acc.add(w_base * self.tab.pair_energy(si, sj));
            }
            if w_pm != 0.0 {
                acc.add(w_pm * self.tab.pm(si) * self.tab.pm(sj));
            }
        }
        acc.value()
    }

    /// Energy difference of setting site `i` to `new`.
    #[inline]
    pub fn delta(&self, states: &[u16], i: usize, new: u16) -> f64 {
        let old = states[i];
        if old == new {
            return 0.0;
        }
        let mut d = self.site_field[i * self.s + new as usize]
            - self.site_field[i * self.s + old as usize];
        for a in &self.adj[i] {
            let sj = states[a.other as usize];
            if a.w_base != 0.0 {
                d += a.w_base * (self.tab.pair_energy(new, sj) - self.tab.pair_energy(old, sj));
            }
            if a.w_pm != 0.0 {
                d += a.w_pm * (self.tab.pm(new) - self.tab.pm(old)) * self.tab.pm(sj);
            }
        }
        d
    }

    /// Energies of every candidate state at site `i` given the rest of the
    /// configuration (up to a constant): used by heat-bath sampling.
    pub fn site_state_energies(&self, states: &[u16], i: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.s);
        for (a, o) in out.iter_mut().enumerate() {
            *o = self.site_field[i * self.s + a];
        }
        for adj in &self.adj[i] {
            let sj = states[adj.other as usize];
            for (a, o) in out.iter_mut().enumerate() {
                if adj.w_base != 0.0 {
                    *o += adj.w_base * self.tab.pair_energy(a as u16, sj);
                }
                if adj.w_pm != 0.0 {
                    *o += adj.w_pm * self.tab.pm(a as u16) * self.tab.pm(sj);
                }
            }
        }
    }

    /// Write the observable vectors of all sites into `out` (length
    /// `n_sites * m`, canonical order).
    pub fn fill_observables(&self, states: &[u16], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_sites * self.m);
        match &self.edge_obs {
            None => {
                for i in 0..self.n_sites {
                    let v = self.tab.vec_of(states[i]);
                    out[i * self.m..(i + 1) * self.m].copy_from_slice(v);
                }
            }
            Some(entries) => {
                // entries are laid out site-major, component-minor
                for (idx, e) in entries.iter().enumerate() {
                    let site = idx / self.m;
                    let pm_v = self.tab.pm(states[site]);
                    out[idx] = match e {
                        EdgeObsNbr::In(j) => pm_v * self.tab.pm(states[*j as usize]),
                        EdgeObsNbr::FixedPm(pm) => pm_v * pm,
                        EdgeObsNbr::Absent => 0.0,
                    };
                }
            }
        }
    }

    pub fn tables(&self) -> &DiscreteTables {
        &self.tab
    }

    /// On-site energy of `state` at site `i`, with the external field, the
    /// disorder, and any fixed-boundary edge terms folded in.
    pub fn site_field_energy(&self, i: usize, state: u16) -> f64 {
        self.site_field[i * self.s + state as usize]
    }

    /// Edges with both endpoints in the region (torus edges keep their
    /// multiplicity), as canonical site-index pairs.
    pub fn interior_edges(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|&(i, j, _, _)| (i as usize, j as usize)).collect()
    }
}

// ---------------------------------------------------------------------------
// Reflected mixed-radix Gray enumeration
// ---------------------------------------------------------------------------

/// Loopless reflected Gray generator over `radix^n` words: each step changes
/// one digit by one, visiting every word exactly once.
struct GrayWalk {
    n: usize,
    radix: u16,
    digits: Vec<u16>,
    focus: Vec<usize>,
    dir: Vec<i8>,
}

impl GrayWalk {
    fn new(n: usize, radix: u16) -> GrayWalk {
        GrayWalk {
            n,
            radix,
            digits: vec![0; n],
            focus: (0..=n).collect(),
            dir: vec![1; n],
        }
    }

    /// Advance to the next word; returns the changed digit and its new value,
    /// or `None` after the last word.
    fn step(&mut self) -> Option<(usize, u16)> {
        let j = self.focus[0];
        self.focus[0] = 0;
        if j == self.n {
            return None;
        }
        let new = (self.digits[j] as i32 + self.dir[j] as i32) as u16;
        self.digits[j] = new;
        if new == 0 || new == self.radix - 1 {
            self.dir[j] = -self.dir[j];
            self.focus[j] = self.focus[j + 1];
            self.focus[j + 1] = j + 1;
        }
        Some((j, new))
    }
}

// ---------------------------------------------------------------------------
// Exact Gibbs expectations
// ---------------------------------------------------------------------------

/// Result of a full enumeration: log-partition function, free energy
/// density, mean energy, and per-site observable expectations.
#[derive(Clone, Debug)]
pub struct GibbsStats {
    pub log_z: f64,
    /// `-(beta |region|)^{-1} log Z`.
    pub free_energy: f64,
    /// Gibbs expectation of the observable, per site and component
    /// (canonical region order, `m` components per site).
    pub obs_mean: Vec<f64>,
    /// Observable averaged over the region (`m` components).
    pub avg_obs: Vec<f64>,
    pub energy_mean: f64,
    pub states_visited: u64,
}

/// Exhaustively enumerate the Gibbs distribution of a discrete model on
/// `lam` with the given boundary and disorder.
pub fn exact_gibbs(
    spec: &ModelSpec,
    lam: &Region,
    boundary: &Boundary,
    eta: &DisorderField,
    caps: &ExactCaps,
) -> Result<GibbsStats> {
    let compiled = CompiledDiscrete::compile(spec, lam, boundary, Some(eta))?;
    enumerate_compiled(&compiled, caps)
}

fn enumerate_compiled(compiled: &CompiledDiscrete, caps: &ExactCaps) -> Result<GibbsStats> {
    let n = compiled.n_sites;
    let s = compiled.s;
    let total = (s as u128).checked_pow(n as u32).ok_or_else(|| {
        Error::CapExceeded("state count overflows".into())
    })?;
    if total > caps.max_states as u128 {
        return Err(Error::CapExceeded(format!(
            "{total} states exceed the enumeration cap {}",
            caps.max_states
        )));
    }
    let beta = compiled.beta;
    let dim = n * compiled.m;
    let mut states = vec![0u16; n];
    let mut walk = GrayWalk::new(n, s as u16);
    let mut energy = compiled.energy(&states);
    let mut z = LogSumAcc::new();
    // per-site observables plus the energy as one extra slot
    let mut acc = WeightedVecAcc::new(dim + 1);
    let mut xs = vec![0.0; dim + 1];
    let mut visited = 0u64;
    loop {
        let logw = -beta * energy;
        z.add(logw);
        compiled.fill_observables(&states, &mut xs[..dim]);
        xs[dim] = energy;
        acc.add(logw, &xs);
        visited += 1;
        match walk.step() {
            None => break,
            Some((site, new)) => {
                energy += compiled.delta(&states, site, new);
                states[site] = new;
                if visited % 4096 == 0 {
                    energy = compiled.energy(&states);
                }
            }
        }
    }
    let log_z = z.total();
    let means = acc.mean();
    let obs_mean = means[..dim].to_vec();
    let energy_mean = means[dim];
    let m = compiled.m;
    let mut avg_obs = vec![0.0; m];
    for i in 0..n {
        for c in 0..m {
            avg_obs[c] += obs_mean[i * m + c];
        }
    }
    for a in avg_obs.iter_mut() {
        *a /= n as f64;
    }
    Ok(GibbsStats {
        log_z,
        free_energy: -log_z / (beta * n as f64),
        obs_mean,
        avg_obs,
        energy_mean,
        states_visited: visited,
    })
}

/// Free energy density `-(beta |region|)^{-1} log Z` by exact enumeration.
pub fn exact_free_energy(
    spec: &ModelSpec,
    lam: &Region,
    boundary: &Boundary,
    eta: &DisorderField,
    caps: &ExactCaps,
) -> Result<f64> {
    Ok(exact_gibbs(spec, lam, boundary, eta, caps)?.free_energy)
}

/// Analytic gradient of the free energy density in a constant shift of one
/// disorder component: `-lambda * avg_obs[i]`.
pub fn fe_shift_gradient(spec: &ModelSpec, stats: &GibbsStats) -> Vec<f64> {
    stats.avg_obs.iter().map(|a| -spec.lambda * a).collect()
}

/// Compare the analytic free-energy gradient against central differences of
/// the enumerated free energy. Returns `(analytic, numeric)` per disorder
/// component.
pub fn fe_gradient_check(
    spec: &ModelSpec,
    lam: &Region,
    boundary: &Boundary,
    eta: &DisorderField,
    caps: &ExactCaps,
    step: f64,
) -> Result<Vec<(f64, f64)>> {
    let stats = exact_gibbs(spec, lam, boundary, eta, caps)?;
    let analytic = fe_shift_gradient(spec, &stats);
    let mut out = Vec::with_capacity(spec.m());
    let whole = eta.region().clone();
    for i in 0..spec.m() {
        let up = eta.shift_component(&whole, i, step)?;
        let dn = eta.shift_component(&whole, i, -step)?;
        let fe_up = exact_free_energy(spec, lam, boundary, &up, caps)?;
        let fe_dn = exact_free_energy(spec, lam, boundary, &dn, caps)?;
        out.push((analytic[i], (fe_up - fe_dn) / (2.0 * step)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Boundary-variation functionals
// ---------------------------------------------------------------------------

/// Which boundary-variation functional to evaluate.
pub enum FlucMode<'a> {
    /// Supremum over all pairs of boundary configurations of the norm of the
    /// difference of region-averaged observable expectations.
    FullSup,
    /// Supremum over boundary configurations of the distance to a fixed
    /// reference boundary condition.
    FixedReference(&'a Boundary),
    /// Same as `FullSup` for the scalar weighted average
    /// `|region|^{-1} sum_v w_v . <f_v>`.
    Weighted(&'a WeightFunction),
}

#[derive(Clone, Debug)]
pub struct FlucOutcome {
    pub value: f64,
    pub boundaries_evaluated: u64,
    pub used_shortcut: bool,
}

/// The set of exterior vertices whose spins can influence the Hamiltonian or
/// the observables on `lam`: axis neighbors at distance one.
pub fn interaction_shell(lam: &Region, d: usize) -> Result<Region> {
    let mut set = std::collections::BTreeSet::new();
    for v in lam.iter() {
        for axis in 0..d {
            for dir in [1i64, -1] {
                let u = v.shifted(axis, dir)?;
                if !lam.contains(&u) {
                    set.insert(u);
                }
            }
        }
    }
    Region::from_vertices(d, set.into_iter().collect())
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn monotone_shortcut_applies(spec: &ModelSpec, mode: &FlucMode) -> bool {
    match (&spec.variant, mode) {
        (ModelVariant::Rfim { coupling, .. }, FlucMode::FullSup)
        | (ModelVariant::Rfim { coupling, .. }, FlucMode::FixedReference(_)) => *coupling >= 0.0,
        _ => false,
    }
}

/// Evaluate a boundary-variation functional by exhausting the boundary
/// configurations on the interaction shell (or, for the ferromagnetic Ising
/// case in the unweighted modes, by evaluating only the two extreme
/// boundaries, which bracket all others by monotonicity).
pub fn exact_fluc(
    spec: &ModelSpec,
    lam: &Region,
    eta: &DisorderField,
    mode: &FlucMode,
    caps: &ExactCaps,
    allow_shortcut: bool,
) -> Result<FlucOutcome> {
    let s = spec
        .num_states()
        .ok_or_else(|| Error::model("boundary exhaustion requires a discrete model"))?;
    let shell = interaction_shell(lam, spec.d as usize)?;
    let m = spec.m();
    let n = lam.len() as f64;

    if allow_shortcut && monotone_shortcut_applies(spec, mode) {
        let plus = Boundary::Fixed(SpinConfig::uniform_discrete(shell.clone(), 1));
        let minus = Boundary::Fixed(SpinConfig::uniform_discrete(shell.clone(), 0));
        let a_plus = exact_gibbs(spec, lam, &plus, eta, caps)?.avg_obs;
        let a_minus = exact_gibbs(spec, lam, &minus, eta, caps)?.avg_obs;
        let value = match mode {
            FlucMode::FullSup => norm_diff(&a_plus, &a_minus),
            FlucMode::FixedReference(rb) => {
                let a_ref = exact_gibbs(spec, lam, rb, eta, caps)?.avg_obs;
                norm_diff(&a_plus, &a_ref).max(norm_diff(&a_minus, &a_ref))
            }
            FlucMode::Weighted(_) => unreachable!("weighted mode never shortcuts"),
        };
        return Ok(FlucOutcome { value, boundaries_evaluated: 2, used_shortcut: true });
    }

    let n_bc = (s as u128).checked_pow(shell.len() as u32);
    match n_bc {
        Some(c) if c <= caps.max_boundaries as u128 => {}
        _ => {
            return Err(Error::CapExceeded(format!(
                "{}^{} boundary configurations exceed the cap {}",
                s,
                shell.len(),
                caps.max_boundaries
            )))
        }
    }
    let n_bc = n_bc.unwrap() as u64;

    // Weighted mode reduces to a scalar per boundary; FullSup with a scalar
    // observable reduces to max minus min. Vector-valued FullSup needs the
    // diameter of the point cloud, which we only do for modest counts.
    let weights: Option<Vec<f64>> = match mode {
        FlucMode::Weighted(w) => {
            if w.region() != lam {
                return Err(Error::model("weight function region mismatch"));
            }
            let mut flat = Vec::with_capacity(lam.len() * m);
            for v in lam.iter() {
                flat.extend_from_slice(w.components(v)?);
            }
            Some(flat)
        }
        _ => None,
    };
    let scalar_mode = weights.is_some() || m == 1;
    const DIAMETER_CAP: u64 = 8192;
    if !scalar_mode && matches!(mode, FlucMode::FullSup) && n_bc > DIAMETER_CAP {
        return Err(Error::CapExceeded(format!(
            "vector-valued full supremum over {n_bc} boundaries; use the fixed-reference mode"
        )));
    }

    let reference: Option<Vec<f64>> = match mode {
        FlucMode::FixedReference(rb) => Some(exact_gibbs(spec, lam, rb, eta, caps)?.avg_obs),
        _ => None,
    };

    let mut tau_states = vec![0u16; shell.len()];
    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    let mut sup_dist = 0.0f64;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut evaluated = 0u64;
    loop {
        let tau = SpinConfig::from_states(shell.clone(), tau_states.clone())?;
        let bc = Boundary::Fixed(tau);
        let stats = exact_gibbs(spec, lam, &bc, eta, caps)?;
        evaluated += 1;
        match mode {
            FlucMode::Weighted(_) => {
                let w = weights.as_ref().unwrap();
                let mut dot = Kahan::new();
                for (i, x) in stats.obs_mean.iter().enumerate() {
                    dot.add(w[i] * x);
                }
                let a = dot.value() / n;
                best = best.max(a);
                worst = worst.min(a);
            }
            FlucMode::FullSup if m == 1 => {
                let a = stats.avg_obs[0];
                best = best.max(a);
                worst = worst.min(a);
            }
            FlucMode::FullSup => points.push(stats.avg_obs.clone()),
            FlucMode::FixedReference(_) => {
                sup_dist = sup_dist.max(norm_diff(&stats.avg_obs, reference.as_ref().unwrap()));
            }
        }
        // mixed-radix odometer over boundary states
        let mut k = 0;
        loop {
            if k == tau_states.len() {
                break;
            }
            tau_states[k] += 1;
            if tau_states[k] < s {
                break;
            }
            tau_states[k] = 0;
            k += 1;
        }
        if k == tau_states.len() {
            break;
        }
    }
    let value = match mode {
        FlucMode::Weighted(_) => best - worst,
        FlucMode::FullSup if m == 1 => best - worst,
        FlucMode::FullSup => {
            let mut diam = 0.0f64;
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    diam = diam.max(norm_diff(&points[i], &points[j]));
                }
            }
            diam
        }
        FlucMode::FixedReference(_) => sup_dist,
    };
    Ok(FlucOutcome { value, boundaries_evaluated: evaluated, used_shortcut: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::BoxRegion;
    use crate::models::PairPotential;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rfim(d: usize, h: f64, beta: f64, lambda: f64) -> ModelSpec {
        ModelSpec::new(ModelVariant::Rfim { h, coupling: 1.0 }, d, beta, lambda).unwrap()
    }

    /// Plain odometer enumeration through the direct (uncompiled) energy
    /// path: the reference route for everything exact.
    fn naive_gibbs(
        spec: &ModelSpec,
        lam: &Region,
        boundary: &Boundary,
        eta: &DisorderField,
    ) -> (f64, Vec<f64>) {
        let s = spec.num_states().unwrap() as usize;
        let n = lam.len();
        let m = spec.m();
        let mut states = vec![0u16; n];
        let mut z = 0.0f64;
        let mut obs = vec![0.0f64; n * m];
        loop {
            let sigma = SpinConfig::from_states(lam.clone(), states.clone()).unwrap();
            let ctx = EnergyContext::new(spec, lam, &sigma, boundary).unwrap();
            let e = ctx.disordered_energy(eta).unwrap();
            let w = (-spec.beta * e).exp();
            z += w;
            for (i, v) in lam.iter().enumerate() {
                let f = ctx.noised_observable(v).unwrap();
                for c in 0..m {
                    obs[i * m + c] += w * f[c];
                }
            }
            let mut k = 0;
            loop {
                if k == n {
                    return (z.ln(), obs.iter().map(|x| x / z).collect());
                }
                states[k] += 1;
                if (states[k] as usize) < s {
                    break;
                }
                states[k] = 0;
                k += 1;
            }
        }
    }

    fn test_cases() -> Vec<(ModelSpec, Region)> {
        let chain4 = BoxRegion::from_corners(&[0], &[3]).unwrap().region();
        let sq = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        vec![
            (rfim(1, 0.2, 1.1, 0.8), chain4.clone()),
            (rfim(2, -0.1, 0.7, 1.3), sq.clone()),
            (
                ModelSpec::new(ModelVariant::Potts { q: 3, h: vec![0.3, 0.0, -0.2] }, 2, 0.9, 0.6)
                    .unwrap(),
                sq.clone(),
            ),
            (ModelSpec::new(ModelVariant::Ea { h: 0.15 }, 2, 1.2, 1.0).unwrap(), sq.clone()),
            (
                ModelSpec::new(
                    ModelVariant::ClockOn2 {
                        n_states: 4,
                        h: [0.2, -0.3],
                        psi: PairPotential::NegDot,
                    },
                    1,
                    0.8,
                    0.9,
                )
                .unwrap(),
                chain4,
            ),
        ]
    }

    #[test]
    fn enumeration_matches_direct_route_for_all_models_and_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let caps = ExactCaps::default();
        for (spec, lam) in test_cases() {
            let d = spec.d as usize;
            let eta = DisorderField::sample(rng.gen(), lam.clone(), spec.m());
            let shell = lam.boundary(1).unwrap();
            let s = spec.num_states().unwrap();
            let tau_states: Vec<u16> = (0..shell.len()).map(|_| rng.gen_range(0..s)).collect();
            let tau = SpinConfig::from_states(shell, tau_states).unwrap();
            let torus = if lam.len() == 4 && d == 2 {
                Some(BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap())
            } else if d == 1 {
                Some(BoxRegion::from_corners(&[0], &[3]).unwrap())
            } else {
                None
            };
            let mut bcs = vec![Boundary::Free, Boundary::Fixed(tau)];
            if let Some(b) = torus {
                bcs.push(Boundary::Periodic(b));
            }
            for bc in bcs {
                let fast = exact_gibbs(&spec, &lam, &bc, &eta, &caps).unwrap();
                let (log_z, obs) = naive_gibbs(&spec, &lam, &bc, &eta);
                assert!(
                    (fast.log_z - log_z).abs() < 1e-10,
                    "{spec:?}: log Z {} vs {log_z}",
                    fast.log_z
                );
                for (a, b) in fast.obs_mean.iter().zip(&obs) {
                    assert!((a - b).abs() < 1e-10, "{spec:?}: obs {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn two_site_chain_partition_function_closed_form() {
        // Two Ising spins, one bond, free boundary, no fields:
        // Z = 2 e^{beta} + 2 e^{-beta}.
        let beta = 0.83;
        let spec = rfim(1, 0.0, beta, 0.0);
        let lam = BoxRegion::from_corners(&[0], &[1]).unwrap().region();
        let eta = DisorderField::zero(lam.clone(), 1);
        let stats =
            exact_gibbs(&spec, &lam, &Boundary::Free, &eta, &ExactCaps::default()).unwrap();
        let z = 2.0 * beta.exp() + 2.0 * (-beta).exp();
        assert!((stats.log_z - z.ln()).abs() < 1e-12);
        assert!(stats.avg_obs[0].abs() < 1e-12);
    }

    #[test]
    fn potts_color_symmetry_gives_uniform_marginals() {
        let spec =
            ModelSpec::new(ModelVariant::Potts { q: 3, h: vec![0.0; 3] }, 2, 1.0, 0.0).unwrap();
        let lam = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        let eta = DisorderField::zero(lam.clone(), 3);
        let stats =
            exact_gibbs(&spec, &lam, &Boundary::Free, &eta, &ExactCaps::default()).unwrap();
        for x in &stats.obs_mean {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ising_field_negation_flips_expectations() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let lam = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        let spec = rfim(2, 0.0, 1.0, 0.9);
        let eta = DisorderField::sample(17, lam.clone(), 1);
        let neg = DisorderField::from_values(
            lam.clone(),
            1,
            eta.values().iter().map(|x| -x).collect(),
            999,
        )
        .unwrap();
        let caps = ExactCaps::default();
        let a = exact_gibbs(&spec, &lam, &Boundary::Free, &eta, &caps).unwrap();
        let b = exact_gibbs(&spec, &lam, &Boundary::Free, &neg, &caps).unwrap();
        assert!((a.log_z - b.log_z).abs() < 1e-10);
        for (x, y) in a.obs_mean.iter().zip(&b.obs_mean) {
            assert!((x + y).abs() < 1e-10);
        }
        let _ = rng.gen::<u64>();
    }

    #[test]
    fn gray_walk_visits_every_word_once() {
        let mut walk = GrayWalk::new(3, 3);
        let mut seen = std::collections::HashSet::new();
        let mut digits = vec![0u16; 3];
        seen.insert(digits.clone());
        while let Some((j, v)) = walk.step() {
            let old = digits[j] as i32;
            assert_eq!((v as i32 - old).abs(), 1, "digit moves by one");
            digits[j] = v;
            assert!(seen.insert(digits.clone()), "revisited {digits:?}");
        }
        assert_eq!(seen.len(), 27);
    }

    #[test]
    fn state_cap_is_enforced() {
        let spec = rfim(2, 0.0, 1.0, 1.0);
        let lam = BoxRegion::cube(1, 2).unwrap().region();
        let eta = DisorderField::zero(lam.clone(), 1);
        let caps = ExactCaps { max_states: 100, max_boundaries: 1 << 20 };
        match exact_gibbs(&spec, &lam, &Boundary::Free, &eta, &caps) {
            Err(Error::CapExceeded(_)) => {}
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn fe_gradient_matches_central_difference() {
        let lam = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        let spec = rfim(2, 0.1, 1.0, 0.7);
        let eta = DisorderField::sample(5, lam.clone(), 1);
        let pairs = fe_gradient_check(
            &spec,
            &lam,
            &Boundary::Free,
            &eta,
            &ExactCaps::default(),
            1e-4,
        )
        .unwrap();
        for (analytic, numeric) in pairs {
            assert!(
                (analytic - numeric).abs() < 1e-6,
                "gradient {analytic} vs central difference {numeric}"
            );
        }
        // multi-component variant
        let spec3 =
            ModelSpec::new(ModelVariant::Potts { q: 3, h: vec![0.1, 0.0, 0.0] }, 2, 1.0, 0.5)
                .unwrap();
        let eta3 = DisorderField::sample(6, lam.clone(), 3);
        let pairs = fe_gradient_check(
            &spec3,
            &lam,
            &Boundary::Free,
            &eta3,
            &ExactCaps::default(),
            1e-4,
        )
        .unwrap();
        for (analytic, numeric) in pairs {
            assert!((analytic - numeric).abs() < 1e-6);
        }
    }

    #[test]
    fn free_energy_is_concave_along_shifts() {
        let lam = BoxRegion::from_corners(&[0], &[3]).unwrap().region();
        let spec = rfim(1, 0.0, 1.2, 1.0);
        let eta = DisorderField::sample(9, lam.clone(), 1);
        let caps = ExactCaps::default();
        let whole = eta.region().clone();
        let fe = |t: f64| {
            let shifted = eta.shift_component(&whole, 0, t).unwrap();
            exact_free_energy(&spec, &lam, &Boundary::Free, &shifted, &caps).unwrap()
        };
        for (a, b) in [(-0.8, 0.4), (0.1, 1.3), (-1.0, -0.2)] {
            let mid = fe(0.5 * (a + b));
            assert!(mid >= 0.5 * (fe(a) + fe(b)) - 1e-12);
        }
    }

    #[test]
    fn monotone_shortcut_equals_exhaustive_supremum() {
        let caps = ExactCaps::default();
        for (seed, dim, lam) in [
            (31u64, 1usize, BoxRegion::from_corners(&[0], &[2]).unwrap().region()),
            (32, 2, BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region()),
        ] {
            let spec = rfim(dim, 0.15, 0.9, 1.1);
            let eta = DisorderField::sample(seed, lam.clone(), 1);
            let brute =
                exact_fluc(&spec, &lam, &eta, &FlucMode::FullSup, &caps, false).unwrap();
            let quick = exact_fluc(&spec, &lam, &eta, &FlucMode::FullSup, &caps, true).unwrap();
            assert!(quick.used_shortcut);
            assert!(!brute.used_shortcut);
            assert!(
                (brute.value - quick.value).abs() < 1e-10,
                "sup {} vs shortcut {}",
                brute.value,
                quick.value
            );
            let reference = Boundary::Free;
            let brute_ref = exact_fluc(
                &spec,
                &lam,
                &eta,
                &FlucMode::FixedReference(&reference),
                &caps,
                false,
            )
            .unwrap();
            let quick_ref = exact_fluc(
                &spec,
                &lam,
                &eta,
                &FlucMode::FixedReference(&reference),
                &caps,
                true,
            )
            .unwrap();
            assert!((brute_ref.value - quick_ref.value).abs() < 1e-10);
        }
    }

    #[test]
    fn fluc_respects_universal_bounds() {
        let caps = ExactCaps::default();
        let lam = BoxRegion::from_corners(&[0], &[2]).unwrap().region();
        let spec = rfim(1, 0.0, 1.0, 1.4);
        let eta = DisorderField::sample(77, lam.clone(), 1);
        let full = exact_fluc(&spec, &lam, &eta, &FlucMode::FullSup, &caps, false).unwrap();
        assert!(full.value >= 0.0 && full.value <= 2.0);
        let w = WeightFunction::checkerboard(lam.clone(), 1).unwrap();
        let weighted =
            exact_fluc(&spec, &lam, &eta, &FlucMode::Weighted(&w), &caps, false).unwrap();
        let cap = 2.0 * w.mean_square().sqrt();
        assert!(weighted.value <= cap + 1e-12, "{} vs cap {cap}", weighted.value);
    }

    #[test]
    fn weighted_mode_never_takes_the_shortcut() {
        let caps = ExactCaps::default();
        let lam = BoxRegion::from_corners(&[0], &[2]).unwrap().region();
        let spec = rfim(1, 0.0, 1.0, 1.0);
        let eta = DisorderField::sample(78, lam.clone(), 1);
        let w = WeightFunction::constant(lam.clone(), 1, 1.0).unwrap();
        let out = exact_fluc(&spec, &lam, &eta, &FlucMode::Weighted(&w), &caps, true).unwrap();
        assert!(!out.used_shortcut);
        // constant unit weight reproduces the scalar full supremum
        let full = exact_fluc(&spec, &lam, &eta, &FlucMode::FullSup, &caps, false).unwrap();
        assert!((out.value - full.value).abs() < 1e-10);
    }

    #[test]
    fn boundary_cap_is_enforced() {
        let caps = ExactCaps { max_states: 1 << 24, max_boundaries: 10 };
        let lam = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        let spec = rfim(2, 0.0, 1.0, 1.0);
        let eta = DisorderField::zero(lam.clone(), 1);
        match exact_fluc(&spec, &lam, &eta, &FlucMode::FullSup, &caps, false) {
            Err(Error::CapExceeded(_)) => {}
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn interaction_shell_is_the_axis_neighbor_set() {
        let lam = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        let shell = interaction_shell(&lam, 2).unwrap();
        assert_eq!(shell.len(), 8);
        assert!(!shell.contains(&Vertex::new(&[-1, -1]).unwrap()));
        assert!(shell.contains(&Vertex::new(&[-1, 0]).unwrap()));
    }

    #[test]
    fn ea_enumeration_respects_gauge_identity() {
        // Flipping the even sublattice and negating the field leaves the
        // energy of every configuration unchanged, so log Z is invariant.
        let lam = BoxRegion::from_corners(&[0, 0], &[1, 1]).unwrap().region();
        let spec = ModelSpec::new(ModelVariant::Ea { h: 0.0 }, 2, 1.1, 1.0).unwrap();
        let eta = DisorderField::sample(41, lam.clone(), 2);
        let flipped = eta.flip_in_box(&lam).unwrap();
        let caps = ExactCaps::default();
        let a = exact_gibbs(&spec, &lam, &Boundary::Free, &eta, &caps).unwrap();
        let b = exact_gibbs(&spec, &lam, &Boundary::Free, &flipped, &caps).unwrap();
        assert!((a.log_z - b.log_z).abs() < 1e-10);
    }
}
