//! Spin models, configurations, boundary conditions, and energy evaluation.
//!
//! Supported models share one disordered-Hamiltonian shape: a base nearest-
//! neighbor energy on a region plus a coupling `-lambda * sum_v eta_v . f_v`
//! of an i.i.d. Gaussian field to a bounded local observable `f_v`.
//!
//! | variant   | state space        | observable `f_v`                | m   | range |
//! |-----------|--------------------|---------------------------------|-----|-------|
//! | `Rfim`    | {-1,+1}            | spin                            | 1   | 0     |
//! | `Potts`   | {0..q-1}           | one-hot color indicator         | q   | 0     |
//! | `Ea`      | {-1,+1}            | forward edge products           | d   | 1     |
//! | `On`      | unit sphere in R^n | spin vector                     | n   | 0     |
//! | `ClockOn2`| n_states-gon in R^2| spin vector                     | 2   | 0     |
//!
//! External fields: for `Rfim`, `Potts`, and `Ea` the field `h` is part of
//! the base Hamiltonian; for the continuous-symmetry pair (`On`, `ClockOn2`)
//! it enters next to the disorder term (`-sum_v (lambda eta_v + h) . sigma_v`),
//! so `disordered_energy` with `lambda = 0` equals `base_energy` exactly for
//! the first three, and for the latter two when `h = 0`.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::disorder::DisorderField;
use crate::error::{Error, Result};
use crate::lattice::{BoxRegion, Region, Vertex};
use crate::numerics::Kahan;

// ---------------------------------------------------------------------------
// Pair potentials for the continuous-symmetry models
// ---------------------------------------------------------------------------

/// Edge interaction for `On` and `ClockOn2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairPotential {
    /// `psi(u, v) = -u . v` (the ferromagnetic choice; `-cos` of the angle
    /// between unit vectors).
    NegDot,
    /// `psi(u, v) = -(u . v)^2` (nematic-type, invariant under spin flip).
    NegDotSquared,
}

impl PairPotential {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
        match self {
            PairPotential::NegDot => -dot,
            PairPotential::NegDotSquared => -dot * dot,
        }
    }

    /// Constant `C` such that rotating the two endpoints of an edge by angles
    /// differing by `dt` raises the pair energy by at most `C * dt^2`:
    /// `psi(r_a u, r_b v) + psi(r_-a u, r_-b v) - 2 psi(u, v) <= C (a-b)^2`.
    ///
    /// For `NegDot` the bound holds in any dimension; for `NegDotSquared` it
    /// is stated for spins in the rotation plane (n = 2).
    pub fn curvature_constant(&self) -> f64 {
        match self {
            PairPotential::NegDot => 1.0,
            PairPotential::NegDotSquared => 2.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Model specification
// ---------------------------------------------------------------------------

/// Which spin system is being simulated, with its couplings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ModelVariant {
    /// Ising model in a random field. `coupling >= 0` is ferromagnetic;
    /// negative couplings are accepted but routed away from the min-cut
    /// ground-state solver.
    Rfim { h: f64, coupling: f64 },
    /// `q`-state Potts model (`q >= 3`) with per-color external field.
    Potts { q: u16, h: Vec<f64> },
    /// Edwards-Anderson-type model: no base edge energy, the disorder couples
    /// to forward edge products. `h` adds `-h sum sigma` to the base energy
    /// (zero keeps the spin-flip gauge symmetry intact).
    Ea { h: f64 },
    /// Spin O(n) model with unit-sphere states (`n >= 2`).
    On { n: u16, h: Vec<f64>, psi: PairPotential },
    /// Clock discretization of the planar rotor: `n_states` equally spaced
    /// unit vectors in R^2 (`n_states >= 3`).
    ClockOn2 { n_states: u16, h: [f64; 2], psi: PairPotential },
}

/// A full model specification: variant, dimension, inverse temperature, and
/// disorder strength.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: ModelVariant,
    /// Ambient dimension (1..=4).
    pub d: u8,
    /// Inverse temperature; strictly positive.
    pub beta: f64,
    /// Disorder strength; non-negative.
    pub lambda: f64,
}

impl ModelSpec {
    pub fn new(variant: ModelVariant, d: usize, beta: f64, lambda: f64) -> Result<Self> {
        let spec = ModelSpec { variant, d: d as u8, beta, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > 4 {
            return Err(Error::model(format!("dimension {} out of range 1..=4", self.d)));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(Error::model(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::model(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        match &self.variant {
            ModelVariant::Rfim { h, coupling } => {
                if !h.is_finite() || !coupling.is_finite() {
                    return Err(Error::model("non-finite RFIM parameters"));
                }
            }
            ModelVariant::Potts { q, h } => {
                if *q < 3 {
                    return Err(Error::model(format!("Potts requires q >= 3, got {q}")));
                }
                if h.len() != *q as usize {
                    return Err(Error::model(format!(
                        "Potts field has {} entries, expected q = {q}",
                        h.len()
                    )));
                }
            }
            ModelVariant::Ea { h } => {
                if !h.is_finite() {
                    return Err(Error::model("non-finite EA field"));
                }
            }
            ModelVariant::On { n, h, .. } => {
                if *n < 2 {
                    return Err(Error::model(format!("O(n) requires n >= 2, got {n}")));
                }
                if h.len() != *n as usize {
                    return Err(Error::model(format!(
                        "O(n) field has {} entries, expected n = {n}",
                        h.len()
                    )));
                }
            }
            ModelVariant::ClockOn2 { n_states, .. } => {
                if *n_states < 3 {
                    return Err(Error::model(format!(
                        "clock model requires n_states >= 3, got {n_states}"
                    )));
                }
                if *n_states > 256 {
                    return Err(Error::model("clock model supports at most 256 states"));
                }
            }
        }
        Ok(())
    }

    /// Number of disorder components per vertex.
    pub fn m(&self) -> usize {
        match &self.variant {
            ModelVariant::Rfim { .. } => 1,
            ModelVariant::Potts { q, .. } => *q as usize,
            ModelVariant::Ea { .. } => self.d as usize,
            ModelVariant::On { n, .. } => *n as usize,
            ModelVariant::ClockOn2 { .. } => 2,
        }
    }

    /// Interaction range of the observable `f_v` (0 = on-site, 1 = touches
    /// nearest neighbors).
    pub fn range(&self) -> i64 {
        match &self.variant {
            ModelVariant::Ea { .. } => 1,
            _ => 0,
        }
    }

    /// Radius of the boundary shell that influences the energy on a region.
    pub fn boundary_radius(&self) -> i64 {
        self.range().max(1)
    }

    /// State count for discrete variants; `None` for the continuous `On`.
    pub fn num_states(&self) -> Option<u16> {
        match &self.variant {
            ModelVariant::Rfim { .. } | ModelVariant::Ea { .. } => Some(2),
            ModelVariant::Potts { q, .. } => Some(*q),
            ModelVariant::On { .. } => None,
            ModelVariant::ClockOn2 { n_states, .. } => Some(*n_states),
        }
    }

    pub fn is_discrete(&self) -> bool {
        self.num_states().is_some()
    }

    /// Dimension of the per-site spin vector representation.
    pub fn spin_dim(&self) -> usize {
        match &self.variant {
            ModelVariant::Rfim { .. } | ModelVariant::Ea { .. } => 1,
            ModelVariant::Potts { q, .. } => *q as usize,
            ModelVariant::On { n, .. } => *n as usize,
            ModelVariant::ClockOn2 { .. } => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Spin configurations
// ---------------------------------------------------------------------------

/// An assignment of spins to the vertices of a region, stored in canonical
/// region order.
#[derive(Clone, Debug, PartialEq)]
pub enum SpinConfig {
    Discrete { region: Region, states: Vec<u16> },
    Continuous { region: Region, n: usize, comps: Vec<f64> },
}

impl SpinConfig {
    pub fn uniform_discrete(region: Region, state: u16) -> Self {
        let n = region.len();
        SpinConfig::Discrete { region, states: vec![state; n] }
    }

    pub fn from_states(region: Region, states: Vec<u16>) -> Result<Self> {
        if states.len() != region.len() {
            return Err(Error::geometry("state count does not match region size"));
        }
        Ok(SpinConfig::Discrete { region, states })
    }

    pub fn from_vectors(region: Region, n: usize, comps: Vec<f64>) -> Result<Self> {
        if comps.len() != region.len() * n {
            return Err(Error::geometry("component count does not match region size"));
        }
        for chunk in comps.chunks(n) {
            let norm: f64 = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::model(format!("spin vector has norm {norm}, expected 1")));
            }
        }
        Ok(SpinConfig::Continuous { region, n, comps })
    }

    /// Constant continuous configuration pointing along `direction`.
    pub fn uniform_continuous(region: Region, direction: &[f64]) -> Result<Self> {
        let n = direction.len();
        let len = region.len();
        let mut comps = Vec::with_capacity(len * n);
        for _ in 0..len {
            comps.extend_from_slice(direction);
        }
        SpinConfig::from_vectors(region, n, comps)
    }

    pub fn region(&self) -> &Region {
        match self {
            SpinConfig::Discrete { region, .. } => region,
            SpinConfig::Continuous { region, .. } => region,
        }
    }

    pub fn covers(&self, r: &Region) -> bool {
        r.is_subset_of(self.region())
    }

    pub fn state(&self, v: &Vertex) -> Result<u16> {
        match self {
            SpinConfig::Discrete { region, states } => {
                let pos = region.position(v).ok_or_else(|| Error::MissingVertex {
                    vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
                    context: "spin state lookup".into(),
                })?;
                Ok(states[pos])
            }
            SpinConfig::Continuous { .. } => {
                Err(Error::model("state() called on a continuous configuration"))
            }
        }
    }

    pub fn set_state(&mut self, v: &Vertex, s: u16) -> Result<()> {
        match self {
            SpinConfig::Discrete { region, states } => {
                let pos = region.position(v).ok_or_else(|| Error::MissingVertex {
                    vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
                    context: "spin state update".into(),
                })?;
                states[pos] = s;
                Ok(())
            }
            SpinConfig::Continuous { .. } => {
                Err(Error::model("set_state() called on a continuous configuration"))
            }
        }
    }

    pub fn vector(&self, v: &Vertex) -> Result<&[f64]> {
        match self {
            SpinConfig::Continuous { region, n, comps } => {
                let pos = region.position(v).ok_or_else(|| Error::MissingVertex {
                    vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
                    context: "spin vector lookup".into(),
                })?;
                Ok(&comps[pos * n..(pos + 1) * n])
            }
            SpinConfig::Discrete { .. } => {
                Err(Error::model("vector() called on a discrete configuration"))
            }
        }
    }

    pub fn set_vector(&mut self, v: &Vertex, value: &[f64]) -> Result<()> {
        match self {
            SpinConfig::Continuous { region, n, comps } => {
                if value.len() != *n {
                    return Err(Error::model("spin vector dimension mismatch"));
                }
                let pos = region.position(v).ok_or_else(|| Error::MissingVertex {
                    vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
                    context: "spin vector update".into(),
                })?;
                let n = *n;
                comps[pos * n..(pos + 1) * n].copy_from_slice(value);
                Ok(())
            }
            SpinConfig::Discrete { .. } => {
                Err(Error::model("set_vector() called on a discrete configuration"))
            }
        }
    }

    /// Raw state storage for discrete configurations (canonical region order).
    pub fn states(&self) -> Option<&[u16]> {
        match self {
            SpinConfig::Discrete { states, .. } => Some(states),
            SpinConfig::Continuous { .. } => None,
        }
    }

    /// Check all states/vectors are admissible for the model.
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        match (self, spec.num_states()) {
            (SpinConfig::Discrete { states, .. }, Some(s)) => {
                if let Some(bad) = states.iter().find(|&&x| x >= s) {
                    return Err(Error::model(format!("state {bad} out of range 0..{s}")));
                }
                Ok(())
            }
            (SpinConfig::Continuous { n, .. }, None) => {
                if *n != spec.spin_dim() {
                    return Err(Error::model("continuous spin dimension mismatch"));
                }
                Ok(())
            }
            (SpinConfig::Discrete { .. }, None) => {
                Err(Error::model("discrete configuration for a continuous model"))
            }
            (SpinConfig::Continuous { .. }, Some(_)) => {
                Err(Error::model("continuous configuration for a discrete model"))
            }
        }
    }

    /// Compact binary dump. Discrete states are bit-packed (2 bits when all
    /// states are below 4, one byte below 256, two bytes otherwise);
    /// continuous spins are stored as little-endian doubles.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"QSPN0001");
        let region = self.region();
        buf.extend_from_slice(&(region.d() as u32).to_le_bytes());
        buf.extend_from_slice(&(region.len() as u64).to_le_bytes());
        for v in region.iter() {
            for axis in 0..region.d() {
                buf.extend_from_slice(&(v.coord(axis) as i32).to_le_bytes());
            }
        }
        match self {
            SpinConfig::Discrete { states, .. } => {
                let max = states.iter().max().copied().unwrap_or(0);
                if max < 4 {
                    buf.push(0u8);
                    let mut packed = 0u8;
                    for (i, &s) in states.iter().enumerate() {
                        packed |= (s as u8) << ((i % 4) * 2);
                        if i % 4 == 3 {
                            buf.push(packed);
                            packed = 0;
                        }
                    }
                    if states.len() % 4 != 0 {
                        buf.push(packed);
                    }
                } else if max < 256 {
                    buf.push(1u8);
                    buf.extend(states.iter().map(|&s| s as u8));
                } else {
                    buf.push(2u8);
                    for &s in states {
                        buf.extend_from_slice(&s.to_le_bytes());
                    }
                }
            }
            SpinConfig::Continuous { n, comps, .. } => {
                buf.push(3u8);
                buf.extend_from_slice(&(*n as u32).to_le_bytes());
                for &x in comps {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<SpinConfig> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let fail = |msg: &str| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
        if bytes.len() < 21 || &bytes[..8] != b"QSPN0001" {
            return Err(fail("bad spin file header"));
        }
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n_verts = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if d == 0 || d > 4 {
            return Err(fail("bad spin file dimension"));
        }
        let mut off = 20;
        let mut vertices = Vec::with_capacity(n_verts);
        for _ in 0..n_verts {
            let mut coords = [0i64; 4];
            for c in coords.iter_mut().take(d) {
                if off + 4 > bytes.len() {
                    return Err(fail("truncated spin file"));
                }
                *c = i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as i64;
                off += 4;
            }
            vertices.push(Vertex::new(&coords[..d])?);
        }
        let region = Region::from_vertices(d, vertices.clone())?;
        if off >= bytes.len() {
            return Err(fail("truncated spin file"));
        }
        let kind = bytes[off];
        off += 1;
        let reorder = |region: &Region, per_vertex: Vec<u16>| -> Vec<u16> {
            let mut states = vec![0u16; n_verts];
            for (v, &s) in vertices.iter().zip(per_vertex.iter()) {
                states[region.position(v).unwrap()] = s;
            }
            states
        };
        match kind {
            0 => {
                let need = n_verts.div_ceil(4);
                if bytes.len() != off + need {
                    return Err(fail("spin file size mismatch"));
                }
                let mut states = Vec::with_capacity(n_verts);
                for i in 0..n_verts {
                    let b = bytes[off + i / 4];
                    states.push(((b >> ((i % 4) * 2)) & 3) as u16);
                }
                { let states = reorder(&region, states); SpinConfig::from_states(region, states) }
            }
            1 => {
                if bytes.len() != off + n_verts {
                    return Err(fail("spin file size mismatch"));
                }
                let states: Vec<u16> = bytes[off..].iter().map(|&b| b as u16).collect();
                { let states = reorder(&region, states); SpinConfig::from_states(region, states) }
            }
            2 => {
                if bytes.len() != off + 2 * n_verts {
                    return Err(fail("spin file size mismatch"));
                }
                let states: Vec<u16> = (0..n_verts)
                    .map(|i| u16::from_le_bytes(bytes[off + 2 * i..off + 2 * i + 2].try_into().unwrap()))
                    .collect();
                { let states = reorder(&region, states); SpinConfig::from_states(region, states) }
            }
            3 => {
                if off + 4 > bytes.len() {
                    return Err(fail("truncated spin file"));
                }
                let n = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
                off += 4;
                if bytes.len() != off + 8 * n * n_verts {
                    return Err(fail("spin file size mismatch"));
                }
                let mut comps = vec![0.0f64; n * n_verts];
                for (i, v) in vertices.iter().enumerate() {
                    let pos = region.position(v).unwrap();
                    for c in 0..n {
                        let o = off + 8 * (i * n + c);
                        comps[pos * n + c] =
                            f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
                    }
                }
                SpinConfig::from_vectors(region, n, comps)
            }
            _ => Err(fail("unknown spin encoding")),
        }
    }
}

// ---------------------------------------------------------------------------
// Boundary conditions
// ---------------------------------------------------------------------------

/// How spins outside the region are determined.
#[derive(Clone, Debug)]
pub enum Boundary {
    /// Spins outside the region are read from this configuration (which must
    /// cover the boundary shell of radius `max(1, range)`).
    Fixed(SpinConfig),
    /// Edges and observable components leaving the region are dropped.
    Free,
    /// Coordinates wrap around the given box (all sides must be at least 2);
    /// the region must be exactly the box.
    Periodic(BoxRegion),
}

impl Boundary {
    pub fn fixed_uniform_discrete(shell: Region, state: u16) -> Boundary {
        Boundary::Fixed(SpinConfig::uniform_discrete(shell, state))
    }

    fn validate(&self, lam: &Region) -> Result<()> {
        if let Boundary::Periodic(b) = self {
            for axis in 0..b.d() {
                if b.side(axis) < 2 {
                    return Err(Error::model("periodic boundary requires box sides >= 2"));
                }
            }
            if b.volume() != lam.len() as u128 || lam.iter().any(|v| !b.contains(v)) {
                return Err(Error::model("periodic boundary: region must equal the torus box"));
            }
        }
        Ok(())
    }
}

fn wrap_into(b: &BoxRegion, v: &Vertex) -> Vertex {
    let mut coords = [0i64; 4];
    for axis in 0..b.d() {
        let side = b.side(axis);
        let mut c = (v.coord(axis) - b.lo(axis)) % side;
        if c < 0 {
            c += side;
        }
        coords[axis] = b.lo(axis) + c;
    }
    Vertex::new(&coords[..b.d()]).expect("wrapped coordinate stays in box")
}

// ---------------------------------------------------------------------------
// Evaluation context
// ---------------------------------------------------------------------------

/// Precomputed per-state tables for a discrete model: pair energies, spin
/// vector representations, and the base/site field vectors.
#[derive(Clone, Debug)]
pub struct DiscreteTables {
    pub s: usize,
    pub spin_dim: usize,
    /// `pair[a * s + b]`: base energy of an edge with states `a`, `b`.
    pub pair: Vec<f64>,
    /// `vecs[a * spin_dim ..][..spin_dim]`: observable vector of state `a`.
    pub vecs: Vec<f64>,
    /// Base-Hamiltonian site field (dotted with the state vector).
    pub base_h: Vec<f64>,
    /// Extra site field applied only in the disordered Hamiltonian.
    pub disorder_h: Vec<f64>,
}

impl DiscreteTables {
    pub fn new(spec: &ModelSpec) -> Result<DiscreteTables> {
        let s = spec
            .num_states()
            .ok_or_else(|| Error::model("discrete tables requested for continuous model"))?
            as usize;
        let spin_dim = spec.spin_dim();
        let mut vecs = vec![0.0; s * spin_dim];
        let mut pair = vec![0.0; s * s];
        let mut base_h = vec![0.0; spin_dim];
        let mut disorder_h = vec![0.0; spin_dim];
        match &spec.variant {
            ModelVariant::Rfim { h, coupling } => {
                for a in 0..s {
                    vecs[a] = if a == 0 { -1.0 } else { 1.0 };
                }
                for a in 0..s {
                    for b in 0..s {
                        pair[a * s + b] = -coupling * vecs[a] * vecs[b];
                    }
                }
                base_h[0] = *h;
            }
            ModelVariant::Potts { h, .. } => {
                for a in 0..s {
                    vecs[a * spin_dim + a] = 1.0;
                }
                for a in 0..s {
                    pair[a * s + a] = -1.0;
                }
                base_h.copy_from_slice(h);
            }
            ModelVariant::Ea { h } => {
                for a in 0..s {
                    vecs[a] = if a == 0 { -1.0 } else { 1.0 };
                }
                // no base edge term
                base_h[0] = *h;
            }
            ModelVariant::ClockOn2 { n_states, h, psi } => {
                for a in 0..s {
                    let theta = 2.0 * std::f64::consts::PI * a as f64 / *n_states as f64;
                    vecs[a * 2] = theta.cos();
                    vecs[a * 2 + 1] = theta.sin();
                }
                for a in 0..s {
                    for b in 0..s {
                        pair[a * s + b] =
                            psi.eval(&vecs[a * 2..a * 2 + 2], &vecs[b * 2..b * 2 + 2]);
                    }
                }
                disorder_h.copy_from_slice(h);
            }
            ModelVariant::On { .. } => unreachable!("guarded by num_states"),
        }
        Ok(DiscreteTables { s, spin_dim, pair, vecs, base_h, disorder_h })
    }

    #[inline]
    pub fn vec_of(&self, state: u16) -> &[f64] {
        &self.vecs[state as usize * self.spin_dim..(state as usize + 1) * self.spin_dim]
    }

    #[inline]
    pub fn pair_energy(&self, a: u16, b: u16) -> f64 {
        self.pair[a as usize * self.s + b as usize]
    }

    /// `+-1` representation for the two-state models.
    #[inline]
    pub fn pm(&self, state: u16) -> f64 {
        self.vecs[state as usize * self.spin_dim]
    }
}

/// Resolution of a vertex lookup through a configuration and its boundary.
enum Resolved {
    /// Inside the region: position in canonical order.
    In(usize),
    /// Outside, with a fixed boundary state.
    OutState(u16),
    /// Outside, with a fixed boundary vector (continuous models).
    OutVec(usize),
    /// Outside with free boundary: no spin.
    Absent,
}

/// Bundles a model, region, configuration, boundary condition, and optional
/// disorder for energy evaluation.
pub struct EnergyContext<'a> {
    pub spec: &'a ModelSpec,
    pub lam: &'a Region,
    pub sigma: &'a SpinConfig,
    pub boundary: &'a Boundary,
    tables: Option<DiscreteTables>,
}

impl<'a> EnergyContext<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        lam: &'a Region,
        sigma: &'a SpinConfig,
        boundary: &'a Boundary,
    ) -> Result<Self> {
        spec.validate()?;
        sigma.validate_for(spec)?;
        boundary.validate(lam)?;
        if lam.d() != spec.d as usize {
            return Err(Error::geometry("region dimension differs from model dimension"));
        }
        if !sigma.covers(lam) {
            return Err(Error::model("configuration does not cover the region"));
        }
        if let Boundary::Fixed(tau) = boundary {
            tau.validate_for(spec)?;
            let shell = lam.boundary(spec.boundary_radius())?;
            if !tau.covers(&shell) && !shell.iter().all(|v| sigma.region().contains(v)) {
                // Touched vertices are a subset of the shell; a partial cover
                // may still suffice, so defer precise errors to lookup time —
                // but reject the common misuse of an empty boundary early.
                if tau.region().is_empty() {
                    return Err(Error::model("fixed boundary configuration is empty"));
                }
            }
        }
        let tables = if spec.is_discrete() { Some(DiscreteTables::new(spec)?) } else { None };
        Ok(EnergyContext { spec, lam, sigma, boundary, tables })
    }

    pub fn tables(&self) -> Option<&DiscreteTables> {
        self.tables.as_ref()
    }

    fn missing(&self, v: &Vertex, what: &str) -> Error {
        Error::MissingVertex {
            vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
            context: what.into(),
        }
    }

    fn resolve(&self, u: &Vertex) -> Result<Resolved> {
        if let Some(pos) = self.lam.position(u) {
            return Ok(Resolved::In(pos));
        }
        match self.boundary {
            Boundary::Free => Ok(Resolved::Absent),
            Boundary::Periodic(b) => {
                let w = wrap_into(b, u);
                self.lam
                    .position(&w)
                    .map(Resolved::In)
                    .ok_or_else(|| self.missing(u, "periodic wrap target"))
            }
            Boundary::Fixed(tau) => match tau {
                SpinConfig::Discrete { region, states } => region
                    .position(u)
                    .map(|p| Resolved::OutState(states[p]))
                    .ok_or_else(|| self.missing(u, "fixed boundary state")),
                SpinConfig::Continuous { region, .. } => region
                    .position(u)
                    .map(Resolved::OutVec)
                    .ok_or_else(|| self.missing(u, "fixed boundary vector")),
            },
        }
    }

    /// Discrete state at `u` (`None` = absent under free boundary).
    fn state_at(&self, u: &Vertex) -> Result<Option<u16>> {
        match self.resolve(u)? {
            Resolved::In(pos) => match self.sigma {
                SpinConfig::Discrete { states, .. } => Ok(Some(states[pos])),
                _ => Err(Error::model("discrete lookup on continuous configuration")),
            },
            Resolved::OutState(s) => Ok(Some(s)),
            Resolved::OutVec(_) => Err(Error::model("discrete lookup hit continuous boundary")),
            Resolved::Absent => Ok(None),
        }
    }

    /// Spin vector at `u` (`None` = absent under free boundary).
    fn vector_at(&self, u: &Vertex) -> Result<Option<&[f64]>> {
        match self.resolve(u)? {
            Resolved::In(pos) => match self.sigma {
                SpinConfig::Continuous { n, comps, .. } => {
                    Ok(Some(&comps[pos * n..(pos + 1) * n]))
                }
                _ => Err(Error::model("vector lookup on discrete configuration")),
            },
            Resolved::OutVec(pos) => match self.boundary {
                Boundary::Fixed(SpinConfig::Continuous { n, comps, .. }) => {
                    Ok(Some(&comps[pos * n..(pos + 1) * n]))
                }
                _ => unreachable!("OutVec only produced for continuous fixed boundary"),
            },
            Resolved::OutState(_) => Err(Error::model("vector lookup hit discrete boundary")),
            Resolved::Absent => Ok(None),
        }
    }

    /// Iterate over the edges `{v, u}` with `v` in the region, counting each
    /// edge exactly once (matching its multiplicity on the torus).
    fn for_each_edge<F: FnMut(&Vertex, &Vertex) -> Result<()>>(&self, mut f: F) -> Result<()> {
        let d = self.spec.d as usize;
        let periodic = matches!(self.boundary, Boundary::Periodic(_));
        for v in self.lam.iter() {
            for axis in 0..d {
                let up = v.shifted(axis, 1)?;
                f(v, &up)?;
                if !periodic {
                    let down = v.shifted(axis, -1)?;
                    if !self.lam.contains(&down) {
                        f(v, &down)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn base_pair_sum(&self) -> Result<f64> {
        let mut acc = Kahan::new();
        match self.sigma {
            SpinConfig::Discrete { .. } => {
                let tab = self.tables.as_ref().unwrap();
                // EA has no base edge term; skip the loop entirely.
                if matches!(self.spec.variant, ModelVariant::Ea { .. }) {
                    return Ok(0.0);
                }
                self.for_each_edge(|v, u| {
                    let sv = self.state_at(v)?.expect("region vertices always resolve");
                    if let Some(su) = self.state_at(u)? {
                        acc.add(tab.pair_energy(sv, su));
                    }
                    Ok(())
                })?;
            }
            SpinConfig::Continuous { .. } => {
                let psi = match &self.spec.variant {
                    ModelVariant::On { psi, .. } => *psi,
                    _ => return Err(Error::model("continuous configuration for discrete model")),
                };
                self.for_each_edge(|v, u| {
                    let sv = self.vector_at(v)?.expect("region vertices always resolve");
                    if let Some(su) = self.vector_at(u)? {
                        acc.add(psi.eval(sv, su));
                    }
                    Ok(())
                })?;
            }
        }
        Ok(acc.value())
    }

    /// Base Hamiltonian of the region (edge terms touching the region plus
    /// base site fields).
    pub fn base_energy(&self) -> Result<f64> {
        let mut total = Kahan::new();
        total.add(self.base_pair_sum()?);
        match self.sigma {
            SpinConfig::Discrete { .. } => {
                let tab = self.tables.as_ref().unwrap();
                if tab.base_h.iter().any(|&x| x != 0.0) {
                    for v in self.lam.iter() {
                        let s = self.state_at(v)?.unwrap();
                        let vec = tab.vec_of(s);
                        let dot: f64 = tab.base_h.iter().zip(vec).map(|(a, b)| a * b).sum();
                        total.add(-dot);
                    }
                }
            }
            SpinConfig::Continuous { .. } => {
                // the O(n) external field acts alongside the disorder term
            }
        }
        Ok(total.value())
    }

    /// The observable `f_v` coupled to the disorder at `v`.
    pub fn noised_observable(&self, v: &Vertex) -> Result<Vec<f64>> {
        if !self.lam.contains(v) {
            return Err(self.missing(v, "observable outside region"));
        }
        match &self.spec.variant {
            ModelVariant::Ea { .. } => {
                let tab = self.tables.as_ref().unwrap();
                let sv = tab.pm(self.state_at(v)?.unwrap());
                let d = self.spec.d as usize;
                let mut f = vec![0.0; d];
                for (axis, fi) in f.iter_mut().enumerate() {
                    let u = v.shifted(axis, 1)?;
                    if let Some(su) = self.state_at(&u)? {
                        *fi = sv * tab.pm(su);
                    }
                }
                Ok(f)
            }
            ModelVariant::On { .. } => Ok(self.vector_at(v)?.unwrap().to_vec()),
            _ => {
                let tab = self.tables.as_ref().unwrap();
                Ok(tab.vec_of(self.state_at(v)?.unwrap()).to_vec())
            }
        }
    }

    /// `-lambda * sum_v eta_v . f_v`, plus the continuous-symmetry external
    /// field `-sum_v h . sigma_v` where applicable.
    fn disorder_term(&self, eta: &DisorderField) -> Result<f64> {
        if eta.m() != self.spec.m() {
            return Err(Error::model(format!(
                "field has {} components, model needs {}",
                eta.m(),
                self.spec.m()
            )));
        }
        let lambda = self.spec.lambda;
        let mut acc = Kahan::new();
        match &self.spec.variant {
            ModelVariant::Ea { .. } => {
                for v in self.lam.iter() {
                    let f = self.noised_observable(v)?;
                    let e = eta.component(v)?;
                    let dot: f64 = f.iter().zip(e).map(|(a, b)| a * b).sum();
                    acc.add(-lambda * dot);
                }
            }
            ModelVariant::On { .. } => {
                let h = match &self.spec.variant {
                    ModelVariant::On { h, .. } => h.as_slice(),
                    _ => unreachable!(),
                };
                for v in self.lam.iter() {
                    let s = self.vector_at(v)?.unwrap();
                    let e = eta.component(v)?;
                    let dot: f64 =
                        s.iter().zip(e.iter().zip(h)).map(|(x, (ec, hc))| x * (lambda * ec + hc)).sum();
                    acc.add(-dot);
                }
            }
            _ => {
                let tab = self.tables.as_ref().unwrap();
                let extra = &tab.disorder_h;
                for v in self.lam.iter() {
                    let s = self.state_at(v)?.unwrap();
                    let vec = tab.vec_of(s);
                    let e = eta.component(v)?;
                    let mut dot = 0.0;
                    for i in 0..tab.spin_dim {
                        dot += vec[i] * (lambda * e[i] + extra[i]);
                    }
                    acc.add(-dot);
                }
            }
        }
        Ok(acc.value())
    }

    /// Full disordered Hamiltonian on the region.
    pub fn disordered_energy(&self, eta: &DisorderField) -> Result<f64> {
        Ok(self.base_energy()? + self.disorder_term(eta)?)
    }

    /// Energy change from replacing the spin at `v` (which must lie in the
    /// region) with `new`, touching only terms local to `v`.
    pub fn local_energy_delta(
        &self,
        eta: Option<&DisorderField>,
        v: &Vertex,
        new: &StateChange,
    ) -> Result<f64> {
        if !self.lam.contains(v) {
            return Err(self.missing(v, "local update outside region"));
        }
        let d = self.spec.d as usize;
        let lambda = self.spec.lambda;
        match (self.sigma, new) {
            (SpinConfig::Discrete { .. }, StateChange::Discrete(new_state)) => {
                let tab = self.tables.as_ref().unwrap();
                let old_state = self.state_at(v)?.unwrap();
                if *new_state as usize >= tab.s {
                    return Err(Error::model("proposed state out of range"));
                }
                let mut delta = 0.0;
                let is_ea = matches!(self.spec.variant, ModelVariant::Ea { .. });
                // edge terms incident to v
                if !is_ea {
                    for axis in 0..d {
                        for dir in [1i64, -1] {
                            let u = v.shifted(axis, dir)?;
                            if let Some(su) = self.state_at(&u)? {
                                delta += tab.pair_energy(*new_state, su)
                                    - tab.pair_energy(old_state, su);
                            }
                        }
                    }
                }
                // base site field
                let dvec: Vec<f64> = tab
                    .vec_of(*new_state)
                    .iter()
                    .zip(tab.vec_of(old_state))
                    .map(|(a, b)| a - b)
                    .collect();
                let base_dot: f64 = tab.base_h.iter().zip(&dvec).map(|(a, b)| a * b).sum();
                delta += -base_dot;
                if let Some(eta) = eta {
                    if is_ea {
                        let e = eta.component(v)?;
                        let dpm = tab.pm(*new_state) - tab.pm(old_state);
                        // own observable f_v = sigma_v * sigma_{v+e_i}
                        for (axis, ei) in e.iter().enumerate().take(d) {
                            let u = v.shifted(axis, 1)?;
                            if let Some(su) = self.state_at(&u)? {
                                delta += -lambda * ei * dpm * tab.pm(su);
                            }
                        }
                        // observables f_u of backward neighbors include sigma_v
                        for axis in 0..d {
                            let u = v.shifted(axis, -1)?;
                            let u_in = if let Boundary::Periodic(b) = self.boundary {
                                Some(wrap_into(b, &u))
                            } else if self.lam.contains(&u) {
                                Some(u)
                            } else {
                                None
                            };
                            if let Some(u) = u_in {
                                let su = self.state_at(&u)?.unwrap();
                                let eu = eta.component(&u)?;
                                delta += -lambda * eu[axis] * tab.pm(su) * dpm;
                            }
                        }
                    } else {
                        let e = eta.component(v)?;
                        let mut dot = 0.0;
                        for i in 0..tab.spin_dim {
                            dot += dvec[i] * (lambda * e[i] + tab.disorder_h[i]);
                        }
                        delta += -dot;
                    }
                } else if !is_ea {
                    // base-only delta for models whose disorder_h is zero:
                    // nothing further
                }
                Ok(delta)
            }
            (SpinConfig::Continuous { .. }, StateChange::Continuous(new_vec)) => {
                let (psi, h) = match &self.spec.variant {
                    ModelVariant::On { psi, h, .. } => (*psi, h.as_slice()),
                    _ => return Err(Error::model("continuous update on discrete model")),
                };
                let old = self.vector_at(v)?.unwrap().to_vec();
                let mut delta = 0.0;
                for axis in 0..d {
                    for dir in [1i64, -1] {
                        let u = v.shifted(axis, dir)?;
                        if let Some(su) = self.vector_at(&u)? {
                            delta += psi.eval(new_vec, su) - psi.eval(&old, su);
                        }
                    }
                }
                if let Some(eta) = eta {
                    let e = eta.component(v)?;
                    for i in 0..new_vec.len() {
                        delta += -(new_vec[i] - old[i]) * (lambda * e[i] + h[i]);
                    }
                }
                Ok(delta)
            }
            _ => Err(Error::model("state change kind does not match configuration")),
        }
    }
}

/// A proposed replacement spin for one site.
pub enum StateChange<'a> {
    Discrete(u16),
    Continuous(&'a [f64]),
}

// ---------------------------------------------------------------------------
// Free-function façade
// ---------------------------------------------------------------------------

/// Base Hamiltonian of `sigma` on `lam` under the boundary condition.
pub fn base_energy(
    spec: &ModelSpec,
    lam: &Region,
    sigma: &SpinConfig,
    boundary: &Boundary,
) -> Result<f64> {
    EnergyContext::new(spec, lam, sigma, boundary)?.base_energy()
}

/// Disordered Hamiltonian (base plus field coupling).
pub fn disordered_energy(
    spec: &ModelSpec,
    lam: &Region,
    sigma: &SpinConfig,
    boundary: &Boundary,
    eta: &DisorderField,
) -> Result<f64> {
    EnergyContext::new(spec, lam, sigma, boundary)?.disordered_energy(eta)
}

/// The bounded local observable coupled to the disorder at `v`.
pub fn noised_observable(
    spec: &ModelSpec,
    lam: &Region,
    sigma: &SpinConfig,
    boundary: &Boundary,
    v: &Vertex,
) -> Result<Vec<f64>> {
    EnergyContext::new(spec, lam, sigma, boundary)?.noised_observable(v)
}

/// Energy difference of a single-site replacement.
pub fn local_energy_delta(
    spec: &ModelSpec,
    lam: &Region,
    sigma: &SpinConfig,
    boundary: &Boundary,
    eta: &DisorderField,
    v: &Vertex,
    new: &StateChange,
) -> Result<f64> {
    EnergyContext::new(spec, lam, sigma, boundary)?.local_energy_delta(Some(eta), v, new)
}

/// Number of lattice edges from `lam` to its complement (the edge-boundary
/// size; zero relevance under periodic conditions).
pub fn crossing_edge_count(lam: &Region, d: usize) -> Result<u64> {
    let mut count = 0;
    for v in lam.iter() {
        for axis in 0..d {
            for dir in [1i64, -1] {
                if !lam.contains(&v.shifted(axis, dir)?) {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Number of lattice edges with both endpoints in `lam`.
pub fn interior_edge_count(lam: &Region, d: usize) -> Result<u64> {
    let mut count = 0;
    for v in lam.iter() {
        for axis in 0..d {
            if lam.contains(&v.shifted(axis, 1)?) {
                count += 1;
            }
        }
    }
    Ok(count)
}
