//! Lattice geometry: vertices of `Z^d` (`d <= 4`), axis-aligned boxes, finite
//! regions with a canonical ordering, boundary layers, and nested box
//! families used by the multi-scale machinery.
//!
//! Coordinates live in `[-2^20, 2^20]`; constructors reject anything outside
//! so that all integer arithmetic in the crate stays far from overflow.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 4;

/// Coordinates are restricted to `[-COORD_BOUND, COORD_BOUND]`.
pub const COORD_BOUND: i64 = 1 << 20;

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::geometry(format!("dimension {d} out of range 1..={MAX_DIM}")));
    }
    Ok(())
}

fn check_coord(c: i64) -> Result<i32> {
    if c.abs() > COORD_BOUND {
        return Err(Error::geometry(format!("coordinate {c} exceeds bound {COORD_BOUND}")));
    }
    Ok(c as i32)
}

/// A lattice vertex. Coordinates beyond the ambient dimension are zero, so
/// equality, hashing and lexicographic order are dimension-consistent.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex {
    coords: [i32; MAX_DIM],
}

impl Vertex {
    pub fn new(coords: &[i64]) -> Result<Self> {
        check_dim(coords.len())?;
        let mut arr = [0i32; MAX_DIM];
        for (i, &c) in coords.iter().enumerate() {
            arr[i] = check_coord(c)?;
        }
        Ok(Vertex { coords: arr })
    }

    pub fn origin() -> Self {
        Vertex { coords: [0; MAX_DIM] }
    }

    pub(crate) fn from_raw(coords: [i32; MAX_DIM]) -> Self {
        Vertex { coords }
    }

    pub fn coord(&self, axis: usize) -> i64 {
        self.coords[axis] as i64
    }

    pub fn coords(&self, d: usize) -> &[i32] {
        &self.coords[..d]
    }

    pub(crate) fn raw(&self) -> &[i32; MAX_DIM] {
        &self.coords
    }

    /// Vertex displaced by `delta` along `axis`.
    pub fn shifted(&self, axis: usize, delta: i64) -> Result<Self> {
        let mut arr = self.coords;
        arr[axis] = check_coord(self.coords[axis] as i64 + delta)?;
        Ok(Vertex { coords: arr })
    }

    /// Chebyshev distance restricted to the first `d` coordinates.
    pub fn linf_dist(&self, other: &Vertex, d: usize) -> i64 {
        (0..d)
            .map(|i| ((self.coords[i] as i64) - (other.coords[i] as i64)).abs())
            .max()
            .unwrap_or(0)
    }

    /// `|v|_1` over the first `d` coordinates.
    pub fn l1_norm(&self, d: usize) -> i64 {
        (0..d).map(|i| (self.coords[i] as i64).abs()).sum()
    }

    /// Sublattice parity: `|v|_1 mod 2`.
    pub fn parity(&self, d: usize) -> u8 {
        (self.l1_norm(d) & 1) as u8
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{:?}", self.coords)
    }
}

/// The `2d` nearest neighbors of `v`, paired with their axis and direction.
pub fn neighbors(v: &Vertex, d: usize) -> Result<Vec<(usize, i64, Vertex)>> {
    let mut out = Vec::with_capacity(2 * d);
    for axis in 0..d {
        for delta in [-1i64, 1] {
            out.push((axis, delta, v.shifted(axis, delta)?));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Boxes
// ---------------------------------------------------------------------------

/// An axis-aligned box of lattice points with inclusive corners.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxRegion {
    d: u8,
    lo: [i32; MAX_DIM],
    hi: [i32; MAX_DIM],
}

impl BoxRegion {
    /// Box with inclusive corners `lo..=hi` per axis.
    pub fn from_corners(lo: &[i64], hi: &[i64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::geometry("corner dimension mismatch"));
        }
        check_dim(lo.len())?;
        let mut alo = [0i32; MAX_DIM];
        let mut ahi = [0i32; MAX_DIM];
        for i in 0..lo.len() {
            if lo[i] > hi[i] {
                return Err(Error::geometry(format!("empty box: lo {} > hi {} on axis {i}", lo[i], hi[i])));
            }
            alo[i] = check_coord(lo[i])?;
            ahi[i] = check_coord(hi[i])?;
        }
        Ok(BoxRegion { d: lo.len() as u8, lo: alo, hi: ahi })
    }

    /// Cube `{c - half..=c + half}^d` centered at `c` (odd side `2*half+1`).
    pub fn centered(center: Vertex, half_side: i64, d: usize) -> Result<Self> {
        check_dim(d)?;
        if half_side < 0 {
            return Err(Error::geometry("negative half side"));
        }
        let lo: Vec<i64> = (0..d).map(|i| center.coord(i) - half_side).collect();
        let hi: Vec<i64> = (0..d).map(|i| center.coord(i) + half_side).collect();
        BoxRegion::from_corners(&lo, &hi)
    }

    /// Origin-centered cube of odd side `2*half_side + 1`.
    pub fn cube(half_side: i64, d: usize) -> Result<Self> {
        BoxRegion::centered(Vertex::origin(), half_side, d)
    }

    /// Half-open style box `{-half_extent..=half_extent-1}^d` of even side
    /// `2*half_extent`; this is the convention under which nested box
    /// families tile exactly.
    pub fn even_box(half_extent: i64, d: usize) -> Result<Self> {
        check_dim(d)?;
        if half_extent < 1 {
            return Err(Error::geometry("even box requires half extent >= 1"));
        }
        let lo: Vec<i64> = (0..d).map(|_| -half_extent).collect();
        let hi: Vec<i64> = (0..d).map(|_| half_extent - 1).collect();
        BoxRegion::from_corners(&lo, &hi)
    }

    pub fn d(&self) -> usize {
        self.d as usize
    }

    pub fn lo(&self, axis: usize) -> i64 {
        self.lo[axis] as i64
    }

    pub fn hi(&self, axis: usize) -> i64 {
        self.hi[axis] as i64
    }

    pub fn side(&self, axis: usize) -> i64 {
        self.hi[axis] as i64 - self.lo[axis] as i64 + 1
    }

    pub fn max_side(&self) -> i64 {
        (0..self.d()).map(|i| self.side(i)).max().unwrap()
    }

    pub fn volume(&self) -> u128 {
        (0..self.d()).map(|i| self.side(i) as u128).product()
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        (0..self.d()).all(|i| {
            let c = v.coord(i);
            self.lo(i) <= c && c <= self.hi(i)
        })
    }

    pub fn contains_box(&self, other: &BoxRegion) -> bool {
        self.d == other.d
            && (0..self.d()).all(|i| self.lo(i) <= other.lo(i) && other.hi(i) <= self.hi(i))
    }

    pub fn intersects(&self, other: &BoxRegion) -> bool {
        self.d == other.d
            && (0..self.d()).all(|i| self.lo(i) <= other.hi(i) && other.lo(i) <= self.hi(i))
    }

    /// Center vertex, present only when every side is odd.
    pub fn center(&self) -> Option<Vertex> {
        let mut arr = [0i32; MAX_DIM];
        for i in 0..self.d() {
            if self.side(i) % 2 == 0 {
                return None;
            }
            arr[i] = ((self.lo(i) + self.hi(i)) / 2) as i32;
        }
        Some(Vertex::from_raw(arr))
    }

    /// Half side of an odd cube (all sides equal and odd).
    pub fn half_side(&self) -> Option<i64> {
        let s = self.side(0);
        if s % 2 == 1 && (0..self.d()).all(|i| self.side(i) == s) {
            Some((s - 1) / 2)
        } else {
            None
        }
    }

    /// Center-preserving rescale of an odd cube: half side `L` becomes
    /// `floor(L * num / den)`.
    pub fn scaled(&self, num: u32, den: u32) -> Result<BoxRegion> {
        if num == 0 || den == 0 {
            return Err(Error::geometry("scale factor must be positive"));
        }
        let center = self
            .center()
            .ok_or_else(|| Error::geometry("scaled: box has no center (even side)"))?;
        let half = self
            .half_side()
            .ok_or_else(|| Error::geometry("scaled: box is not an odd cube"))?;
        let new_half = (half * num as i64) / den as i64;
        BoxRegion::centered(center, new_half, self.d())
    }

    /// Concentric doubling. Odd cubes double their half side (side `2L+1`
    /// becomes `4L+1`); other boxes are padded by half their side on each
    /// face (side `s` becomes `2s`).
    pub fn doubled(&self) -> Result<BoxRegion> {
        if let (Some(c), Some(h)) = (self.center(), self.half_side()) {
            return BoxRegion::centered(c, 2 * h, self.d());
        }
        let lo: Vec<i64> = (0..self.d()).map(|i| self.lo(i) - self.side(i) / 2).collect();
        let hi: Vec<i64> = (0..self.d())
            .map(|i| self.hi(i) + (self.side(i) - self.side(i) / 2))
            .collect();
        BoxRegion::from_corners(&lo, &hi)
    }

    /// All vertices in lexicographic order.
    ///
    /// Panics when the box holds more than `2^26` vertices; materialized
    /// regions of that size indicate a misconfigured experiment.
    pub fn region(&self) -> Region {
        let d = self.d();
        assert!(self.volume() <= 1 << 26, "box too large to materialize: {self:?}");
        let mut vertices = Vec::with_capacity(self.volume() as usize);
        let mut cur = self.lo;
        loop {
            vertices.push(Vertex::from_raw(cur));
            // lexicographic odometer: increment the last axis first
            let mut axis = d;
            loop {
                if axis == 0 {
                    let mut index = HashMap::with_capacity(vertices.len());
                    for (i, v) in vertices.iter().enumerate() {
                        index.insert(*v, i as u32);
                    }
                    return Region { d: self.d, vertices, index };
                }
                axis -= 1;
                if cur[axis] < self.hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = self.lo[axis];
            }
        }
    }
}

impl fmt::Debug for BoxRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Box{}d[{:?}..{:?}]", self.d, &self.lo[..self.d()], &self.hi[..self.d()])
    }
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

/// A finite set of vertices in canonical (lexicographic) order with O(1)
/// membership lookup. The order defines the layout of every per-vertex array
/// in the crate (fields, observables, spin storage).
#[derive(Clone)]
pub struct Region {
    d: u8,
    vertices: Vec<Vertex>,
    index: HashMap<Vertex, u32>,
}

impl Region {
    pub fn from_vertices(d: usize, mut vertices: Vec<Vertex>) -> Result<Self> {
        check_dim(d)?;
        vertices.sort();
        let mut index = HashMap::with_capacity(vertices.len());
        for (i, v) in vertices.iter().enumerate() {
            if index.insert(*v, i as u32).is_some() {
                return Err(Error::geometry(format!("duplicate vertex {v:?}")));
            }
        }
        Ok(Region { d: d as u8, vertices, index })
    }

    pub fn empty(d: usize) -> Self {
        Region { d: d as u8, vertices: Vec::new(), index: HashMap::new() }
    }

    pub fn d(&self) -> usize {
        self.d as usize
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.iter()
    }

    pub fn vertex(&self, i: usize) -> &Vertex {
        &self.vertices[i]
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        self.index.contains_key(v)
    }

    /// Position of `v` in the canonical order.
    pub fn position(&self, v: &Vertex) -> Option<usize> {
        self.index.get(v).map(|&i| i as usize)
    }

    pub fn union(&self, other: &Region) -> Result<Region> {
        if self.d != other.d {
            return Err(Error::geometry("union of regions with different dimensions"));
        }
        let mut set: HashSet<Vertex> = self.vertices.iter().cloned().collect();
        set.extend(other.vertices.iter().cloned());
        Region::from_vertices(self.d(), set.into_iter().collect())
    }

    pub fn difference(&self, other: &Region) -> Region {
        let vertices: Vec<Vertex> =
            self.vertices.iter().filter(|v| !other.contains(v)).cloned().collect();
        // subsets of a valid region cannot contain duplicates
        Region::from_vertices(self.d(), vertices).expect("difference preserves validity")
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.vertices.iter().all(|v| other.contains(v))
    }

    pub fn is_disjoint_from(&self, other: &Region) -> bool {
        self.vertices.iter().all(|v| !other.contains(v))
    }

    /// External boundary layer: vertices outside the region at Chebyshev
    /// distance at most `radius`. Radius zero yields the empty region.
    pub fn boundary(&self, radius: i64) -> Result<Region> {
        if radius < 0 {
            return Err(Error::geometry("negative boundary radius"));
        }
        let d = self.d();
        let mut shell: HashSet<Vertex> = HashSet::new();
        if radius > 0 {
            let mut offsets: Vec<Vec<i64>> = vec![vec![]];
            for _ in 0..d {
                let mut next = Vec::new();
                for base in &offsets {
                    for delta in -radius..=radius {
                        let mut o = base.clone();
                        o.push(delta);
                        next.push(o);
                    }
                }
                offsets = next;
            }
            for v in &self.vertices {
                for off in &offsets {
                    let mut u = *v;
                    for (axis, &delta) in off.iter().enumerate() {
                        u = u.shifted(axis, delta)?;
                    }
                    if !self.contains(&u) {
                        shell.insert(u);
                    }
                }
            }
        }
        Region::from_vertices(d, shell.into_iter().collect())
    }
}

impl fmt::Debug for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Region{}d(|{}|)", self.d, self.len())
    }
}

impl PartialEq for Region {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.vertices == other.vertices
    }
}
impl Eq for Region {}

#[derive(Serialize, Deserialize)]
struct RegionSer {
    d: u8,
    vertices: Vec<Vec<i64>>,
}

impl Serialize for Region {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let ser = RegionSer {
            d: self.d,
            vertices: self
                .vertices
                .iter()
                .map(|v| (0..self.d()).map(|i| v.coord(i)).collect())
                .collect(),
        };
        ser.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let ser = RegionSer::deserialize(deserializer)?;
        let vertices = ser
            .vertices
            .iter()
            .map(|c| Vertex::new(c).map_err(D::Error::custom))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Region::from_vertices(ser.d as usize, vertices).map_err(D::Error::custom)
    }
}

/// Vertices of `outer` outside `inner`; `inner` must be contained in `outer`.
pub fn annulus(outer: &BoxRegion, inner: &BoxRegion) -> Result<Region> {
    if !outer.contains_box(inner) {
        return Err(Error::geometry("annulus: inner box not contained in outer"));
    }
    let vertices: Vec<Vertex> =
        outer.region().iter().filter(|v| !inner.contains(v)).cloned().collect();
    Region::from_vertices(outer.d(), vertices)
}

// ---------------------------------------------------------------------------
// Nested box families
// ---------------------------------------------------------------------------

/// Nested partitions of the even box `{-L..L-1}^d` into `k^l` cells per axis
/// at level `l`.
///
/// Cut points are `-L + floor(j * 2L / k^l)`, so cells at consecutive levels
/// nest exactly (the same rational is rounded at both levels) and cells at a
/// given level differ in side by at most one layer when `k^l` does not divide
/// `2L`.
#[derive(Clone, Copy, Debug)]
pub struct DyadicScheme {
    pub half_extent: i64,
    pub k: u32,
    pub d: u8,
}

/// Cell coordinates within a [`DyadicScheme`] level.
pub type CellIndex = [u32; MAX_DIM];

impl DyadicScheme {
    pub fn new(half_extent: i64, k: u32, d: usize) -> Result<Self> {
        check_dim(d)?;
        if half_extent < 1 || half_extent > COORD_BOUND {
            return Err(Error::geometry(format!("half extent {half_extent} out of range")));
        }
        if k < 2 {
            return Err(Error::geometry("branching factor k must be >= 2"));
        }
        Ok(DyadicScheme { half_extent, k, d: d as u8 })
    }

    /// The level-0 box `{-L..L-1}^d`.
    pub fn top_box(&self) -> BoxRegion {
        BoxRegion::even_box(self.half_extent, self.d as usize).expect("validated")
    }

    /// Cells per axis at `level` (`k^level`), checked against the cell
    /// non-emptiness requirement `k^level <= 2L`.
    pub fn cells_per_axis(&self, level: u32) -> Result<u64> {
        let mut c: u128 = 1;
        for _ in 0..level {
            c *= self.k as u128;
            if c > 2 * self.half_extent as u128 {
                return Err(Error::geometry(format!(
                    "level {level}: k^level exceeds box side {}",
                    2 * self.half_extent
                )));
            }
        }
        Ok(c as u64)
    }

    fn cut(&self, cells: u64, j: u64) -> i64 {
        -self.half_extent + ((j as i128 * 2 * self.half_extent as i128) / cells as i128) as i64
    }

    /// The box of cell `idx` at `level`.
    pub fn cell_box(&self, level: u32, idx: CellIndex) -> Result<BoxRegion> {
        let cells = self.cells_per_axis(level)?;
        let d = self.d as usize;
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for axis in 0..d {
            let j = idx[axis] as u64;
            if j >= cells {
                return Err(Error::geometry(format!("cell index {j} out of range at level {level}")));
            }
            lo.push(self.cut(cells, j));
            hi.push(self.cut(cells, j + 1) - 1);
        }
        BoxRegion::from_corners(&lo, &hi)
    }

    /// Index of the parent cell one level up.
    pub fn parent_index(&self, idx: CellIndex) -> CellIndex {
        let mut p = [0u32; MAX_DIM];
        for axis in 0..self.d as usize {
            p[axis] = idx[axis] / self.k;
        }
        p
    }

    /// Cell containing `v` at `level`, if `v` lies in the top box.
    pub fn locate(&self, level: u32, v: &Vertex) -> Result<Option<CellIndex>> {
        if !self.top_box().contains(v) {
            return Ok(None);
        }
        let cells = self.cells_per_axis(level)?;
        let mut idx = [0u32; MAX_DIM];
        for axis in 0..self.d as usize {
            let x = v.coord(axis);
            // initial guess by inverting the cut formula, then adjust
            let mut j = (((x + self.half_extent) as i128 * cells as i128)
                / (2 * self.half_extent as i128)) as i64;
            j = j.clamp(0, cells as i64 - 1);
            while j > 0 && self.cut(cells, j as u64) > x {
                j -= 1;
            }
            while (j as u64) < cells - 1 && self.cut(cells, j as u64 + 1) <= x {
                j += 1;
            }
            idx[axis] = j as u32;
        }
        Ok(Some(idx))
    }

    /// All cell indices at `level` in lexicographic order.
    pub fn indices(&self, level: u32) -> Result<Vec<CellIndex>> {
        let cells = self.cells_per_axis(level)?;
        let d = self.d as usize;
        let total = (cells as u128).pow(d as u32);
        if total > (1 << 22) {
            return Err(Error::CapExceeded(format!("family at level {level} has {total} boxes")));
        }
        let mut out = Vec::with_capacity(total as usize);
        let mut idx = [0u32; MAX_DIM];
        loop {
            out.push(idx);
            let mut axis = d;
            loop {
                if axis == 0 {
                    return Ok(out);
                }
                axis -= 1;
                if (idx[axis] as u64) < cells - 1 {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// Largest level `l` with `k^(2l) <= L`.
    pub fn default_max_level(&self) -> u32 {
        let mut l = 0u32;
        let mut pow: u128 = 1;
        loop {
            pow *= (self.k as u128) * (self.k as u128);
            if pow > self.half_extent as u128 {
                return l;
            }
            l += 1;
        }
    }
}

/// The level-`level` family of nested sub-boxes of `{-L..L-1}^d`, in
/// lexicographic cell order.
pub fn dyadic_family(half_extent: i64, k: u32, level: u32, d: usize) -> Result<Vec<BoxRegion>> {
    let scheme = DyadicScheme::new(half_extent, k, d)?;
    scheme
        .indices(level)?
        .into_iter()
        .map(|idx| scheme.cell_box(level, idx))
        .collect()
}
