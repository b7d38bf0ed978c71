//! Quenched Gaussian disorder fields.
//!
//! A field assigns an i.i.d. standard `m`-component Gaussian vector to every
//! vertex. Sampling is counter-based: each value is a pure hash of
//! `(seed, vertex coordinates, component)` pushed through an inverse-CDF
//! transform, so a vertex's value never depends on the region shape, the
//! iteration order, or which other vertices were sampled. Overlapping regions
//! sampled with the same seed therefore agree exactly.

use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lattice::{Region, Vertex, MAX_DIM};
use crate::numerics::inverse_normal_cdf;

// ---------------------------------------------------------------------------
// Counter-based sampling
// ---------------------------------------------------------------------------

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn counter_hash(seed: u64, coords: &[i32; MAX_DIM], component: u32) -> u64 {
    let mut h = mix(seed ^ 0x9e3779b97f4a7c15);
    for (axis, &c) in coords.iter().enumerate() {
        h = mix(h ^ (c as u32 as u64) ^ ((axis as u64 + 1) << 32));
    }
    mix(h ^ (component as u64) ^ 0xd6e8_feb8_6659_fd93)
}

/// Uniform variate in the open interval `(0, 1)` derived from a hash.
#[inline]
fn uniform_from_hash(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// The standard Gaussian assigned to `(seed, v, component)`.
///
/// Pure and platform-independent: repeated calls always return the same bits.
pub fn standard_gaussian(seed: u64, v: &Vertex, component: usize) -> f64 {
    inverse_normal_cdf(uniform_from_hash(counter_hash(seed, v.raw(), component as u32)))
}

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// A realization of the disorder on a region: one `m`-vector per vertex,
/// stored in the region's canonical order.
#[derive(Clone, Debug)]
pub struct DisorderField {
    region: Region,
    m: usize,
    seed: u64,
    values: Vec<f64>,
}

impl DisorderField {
    /// Sample the standard Gaussian field with the given seed.
    pub fn sample(seed: u64, region: Region, m: usize) -> Self {
        assert!(m >= 1, "field needs at least one component");
        let mut values = Vec::with_capacity(region.len() * m);
        for v in region.iter() {
            for c in 0..m {
                values.push(standard_gaussian(seed, v, c));
            }
        }
        DisorderField { region, m, seed, values }
    }

    /// Field with explicitly given values (used for derived and test fields).
    /// `values` is laid out vertex-major in the region's canonical order.
    pub fn from_values(region: Region, m: usize, values: Vec<f64>, seed: u64) -> Result<Self> {
        if values.len() != region.len() * m {
            return Err(Error::geometry(format!(
                "field value count {} does not match |region| * m = {}",
                values.len(),
                region.len() * m
            )));
        }
        Ok(DisorderField { region, m, seed, values })
    }

    /// All-zero field.
    pub fn zero(region: Region, m: usize) -> Self {
        let n = region.len() * m;
        DisorderField { region, m, seed: 0, values: vec![0.0; n] }
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The `m`-vector at `v`; errors when the field does not cover `v`.
    pub fn component(&self, v: &Vertex) -> Result<&[f64]> {
        let pos = self.region.position(v).ok_or_else(|| Error::MissingVertex {
            vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
            context: "disorder field lookup".into(),
        })?;
        Ok(&self.values[pos * self.m..(pos + 1) * self.m])
    }

    /// Single component at `v`.
    pub fn value(&self, v: &Vertex, component: usize) -> Result<f64> {
        Ok(self.component(v)?[component])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Restriction to a subregion (copies the covered values).
    pub fn restrict(&self, sub: &Region) -> Result<DisorderField> {
        let mut values = Vec::with_capacity(sub.len() * self.m);
        for v in sub.iter() {
            values.extend_from_slice(self.component(v)?);
        }
        Ok(DisorderField { region: sub.clone(), m: self.m, seed: self.seed, values })
    }

    /// Sign flip inside `lam` (which must be covered), identity outside.
    pub fn flip_in_box(&self, lam: &Region) -> Result<DisorderField> {
        if !lam.is_subset_of(&self.region) {
            return Err(Error::geometry("flip_in_box: flip region not covered by field"));
        }
        let mut out = self.clone();
        for v in lam.iter() {
            let pos = out.region.position(v).unwrap();
            for c in 0..out.m {
                out.values[pos * out.m + c] = -out.values[pos * out.m + c];
            }
        }
        Ok(out)
    }

    /// Add `delta` to component `i` of every vertex of `lam`.
    pub fn shift_component(&self, lam: &Region, i: usize, delta: f64) -> Result<DisorderField> {
        if !lam.is_subset_of(&self.region) {
            return Err(Error::geometry("shift_component: region not covered by field"));
        }
        let mut out = self.clone();
        for v in lam.iter() {
            let pos = out.region.position(v).unwrap();
            out.values[pos * out.m + i] += delta;
        }
        Ok(out)
    }

    /// Add `delta * w_i(v)` to component `i` of every vertex of the weight's
    /// region.
    pub fn shift_weighted(&self, w: &WeightFunction, i: usize, delta: f64) -> Result<DisorderField> {
        if !w.region().is_subset_of(&self.region) {
            return Err(Error::geometry("shift_weighted: weight region not covered by field"));
        }
        let mut out = self.clone();
        for v in w.region().iter() {
            let pos = out.region.position(v).unwrap();
            out.values[pos * out.m + i] += delta * w.value(v, i)?;
        }
        Ok(out)
    }

    /// Spatial mean over `lam` per component.
    pub fn mean_over(&self, lam: &Region) -> Result<Vec<f64>> {
        if lam.is_empty() {
            return Err(Error::geometry("mean over empty region"));
        }
        let mut hat = vec![0.0; self.m];
        for v in lam.iter() {
            let xs = self.component(v)?;
            for (h, &x) in hat.iter_mut().zip(xs) {
                *h += x;
            }
        }
        for h in &mut hat {
            *h /= lam.len() as f64;
        }
        Ok(hat)
    }

    /// Split into the spatial mean over `lam` and the zero-mean remainder on
    /// `lam`.
    pub fn decompose(&self, lam: &Region) -> Result<FieldDecomposition> {
        let hat = self.mean_over(lam)?;
        let mut values = Vec::with_capacity(lam.len() * self.m);
        for v in lam.iter() {
            let xs = self.component(v)?;
            for (c, &x) in xs.iter().enumerate() {
                values.push(x - hat[c]);
            }
        }
        let perp = DisorderField { region: lam.clone(), m: self.m, seed: self.seed, values };
        Ok(FieldDecomposition { hat, perp })
    }

    /// Weighted analogue: the projection coefficient onto the weight profile
    /// per component, and the residual. A component with identically zero
    /// weight projects to zero and keeps its values untouched.
    pub fn decompose_weighted(&self, w: &WeightFunction) -> Result<WeightedDecomposition> {
        if w.m() != self.m {
            return Err(Error::geometry("weight component count differs from field"));
        }
        let lam = w.region();
        let mut num = vec![0.0; self.m];
        let mut den = vec![0.0; self.m];
        for v in lam.iter() {
            let xs = self.component(v)?;
            let ws = w.components(v)?;
            for c in 0..self.m {
                num[c] += ws[c] * xs[c];
                den[c] += ws[c] * ws[c];
            }
        }
        let hat: Vec<f64> =
            num.iter().zip(&den).map(|(&n, &d)| if d > 0.0 { n / d } else { 0.0 }).collect();
        let mut values = Vec::with_capacity(lam.len() * self.m);
        for v in lam.iter() {
            let xs = self.component(v)?;
            let ws = w.components(v)?;
            for c in 0..self.m {
                values.push(xs[c] - hat[c] * ws[c]);
            }
        }
        let perp = DisorderField { region: lam.clone(), m: self.m, seed: self.seed, values };
        Ok(WeightedDecomposition { hat, perp, weight: w.clone() })
    }

    /// Order-independent content hash (seed, shape, and value bits).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut absorb = |x: u64| {
            h ^= x;
            h = h.wrapping_mul(0x100000001b3);
            h = mix(h);
        };
        absorb(self.seed);
        absorb(self.m as u64);
        absorb(self.region.len() as u64);
        for (v, chunk) in self.region.iter().zip(self.values.chunks(self.m)) {
            for &c in v.raw() {
                absorb(c as u32 as u64);
            }
            for &x in chunk {
                absorb(x.to_bits());
            }
        }
        h
    }

    /// Compact binary dump (little-endian, versioned magic).
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(32 + self.values.len() * 8);
        buf.extend_from_slice(b"QFLD0001");
        buf.extend_from_slice(&(self.region.d() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.m as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&(self.region.len() as u64).to_le_bytes());
        for v in self.region.iter() {
            for axis in 0..self.region.d() {
                buf.extend_from_slice(&(v.coord(axis) as i32).to_le_bytes());
            }
        }
        for &x in &self.values {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Inverse of [`write_binary`]; validates the header.
    pub fn read_binary(path: &Path) -> Result<DisorderField> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let fail = |msg: &str| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
        if bytes.len() < 32 || &bytes[..8] != b"QFLD0001" {
            return Err(fail("bad field file header"));
        }
        let rd_u32 = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let d = rd_u32(8) as usize;
        let m = rd_u32(12) as usize;
        let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        let need = 32 + n * d * 4 + n * m * 8;
        if d == 0 || d > MAX_DIM || m == 0 || bytes.len() != need {
            return Err(fail("field file size mismatch"));
        }
        let mut off = 32;
        let mut vertices = Vec::with_capacity(n);
        for _ in 0..n {
            let mut coords = [0i64; MAX_DIM];
            for c in coords.iter_mut().take(d) {
                *c = i32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as i64;
                off += 4;
            }
            vertices.push(Vertex::new(&coords[..d])?);
        }
        // Canonical order is part of the format; binding values to vertices
        // before re-sorting keeps corrupted files detectable.
        let region = Region::from_vertices(d, vertices.clone())?;
        let mut values = vec![0.0; n * m];
        for v in vertices.iter() {
            let pos = region.position(v).unwrap();
            for c in 0..m {
                values[pos * m + c] = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
                off += 8;
            }
        }
        Ok(DisorderField { region, m, seed, values })
    }

    /// Human-readable CSV dump: coordinates, then components.
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let d = self.region.d();
        let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        header.extend((0..self.m).map(|c| format!("eta{c}")));
        wtr.write_record(&header)?;
        for v in self.region.iter() {
            let mut rec: Vec<String> = (0..d).map(|i| v.coord(i).to_string()).collect();
            let xs = self.component(v)?;
            rec.extend(xs.iter().map(|x| format!("{x:.17e}")));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Mean/remainder split of a field over a region.
#[derive(Clone, Debug)]
pub struct FieldDecomposition {
    /// Spatial mean per component.
    pub hat: Vec<f64>,
    /// Zero-spatial-mean remainder on the split region.
    pub perp: DisorderField,
}

impl FieldDecomposition {
    /// Reassemble the field on the split region.
    pub fn reconstruct(&self) -> DisorderField {
        let m = self.perp.m();
        let mut out = self.perp.clone();
        for x in out.values.chunks_mut(m) {
            for (c, xc) in x.iter_mut().enumerate() {
                *xc += self.hat[c];
            }
        }
        out
    }
}

/// Weighted projection split of a field.
#[derive(Clone, Debug)]
pub struct WeightedDecomposition {
    /// Projection coefficient per component.
    pub hat: Vec<f64>,
    /// Residual field on the weight's region.
    pub perp: DisorderField,
    pub weight: WeightFunction,
}

impl WeightedDecomposition {
    pub fn reconstruct(&self) -> Result<DisorderField> {
        let m = self.perp.m();
        let mut out = self.perp.clone();
        let region = out.region.clone();
        for v in region.iter() {
            let pos = region.position(v).unwrap();
            let ws = self.weight.components(v)?;
            for c in 0..m {
                out.values[pos * m + c] += self.hat[c] * ws[c];
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Weight functions
// ---------------------------------------------------------------------------

/// A bounded per-vertex weight profile `w: region -> [-1, 1]^m`.
#[derive(Clone, Debug)]
pub struct WeightFunction {
    region: Region,
    m: usize,
    values: Vec<f64>,
}

impl WeightFunction {
    pub fn new(region: Region, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != region.len() * m {
            return Err(Error::geometry("weight value count mismatch"));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite() || x.abs() > 1.0 + 1e-12) {
            return Err(Error::geometry(format!("weight entry {bad} outside [-1, 1]")));
        }
        Ok(WeightFunction { region, m, values })
    }

    pub fn from_fn(region: Region, m: usize, f: impl Fn(&Vertex, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(region.len() * m);
        for v in region.iter() {
            for c in 0..m {
                values.push(f(v, c));
            }
        }
        WeightFunction::new(region, m, values)
    }

    /// Constant weight on every component.
    pub fn constant(region: Region, m: usize, value: f64) -> Result<Self> {
        WeightFunction::from_fn(region, m, |_, _| value)
    }

    /// `(-1)^{|v|_1}` on every component.
    pub fn checkerboard(region: Region, m: usize) -> Result<Self> {
        let d = region.d();
        WeightFunction::from_fn(region, m, |v, _| if v.parity(d) == 0 { 1.0 } else { -1.0 })
    }

    /// Indicator of a subregion on every component.
    pub fn indicator(region: Region, m: usize, sub: &Region) -> Result<Self> {
        WeightFunction::from_fn(region, m, |v, _| if sub.contains(v) { 1.0 } else { 0.0 })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn components(&self, v: &Vertex) -> Result<&[f64]> {
        let pos = self.region.position(v).ok_or_else(|| Error::MissingVertex {
            vertex: [v.coord(0), v.coord(1), v.coord(2), v.coord(3)],
            context: "weight lookup".into(),
        })?;
        Ok(&self.values[pos * self.m..(pos + 1) * self.m])
    }

    pub fn value(&self, v: &Vertex, component: usize) -> Result<f64> {
        Ok(self.components(v)?[component])
    }

    /// Mean over vertices of the squared Euclidean norm of the weight vector.
    pub fn mean_square(&self) -> f64 {
        if self.region.is_empty() {
            return 0.0;
        }
        let total: f64 = self.values.iter().map(|x| x * x).sum();
        total / self.region.len() as f64
    }

    /// Mean of `w_i^2` for one component.
    pub fn mean_square_component(&self, i: usize) -> f64 {
        if self.region.is_empty() {
            return 0.0;
        }
        let total: f64 =
            self.values.chunks(self.m).map(|ws| ws[i] * ws[i]).sum();
        total / self.region.len() as f64
    }
}
