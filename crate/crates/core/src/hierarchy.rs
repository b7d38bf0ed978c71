//! Recursive good-box partitions of a box over a nested cell scheme.
//!
//! A goodness criterion marks cells by looking only at the disorder inside
//! them. The construction walks the levels coarse to fine, selects every
//! good cell whose ancestors were all bad, and returns the selected boxes
//! together with the uncovered remainder. A deterministic aggregation step
//! turns per-box fluctuation values into a bound for the whole box, and a
//! scan estimates how the uncovered-vertex probability moves with the box
//! size.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::field_quantile_threshold;
use crate::disorder::{DisorderField, WeightFunction};
use crate::error::{Error, Result};
use crate::exact::{exact_fluc, ExactCaps, FlucMode};
use crate::lattice::{BoxRegion, CellIndex, DyadicScheme, Region, Vertex};
use crate::mcmc::{
    default_candidate_boundaries, mcmc_fluc_candidates, mcmc_fluc_ferro_ising,
    mcmc_weighted_fluc_candidates, McmcOptions,
};
use crate::models::{ModelSpec, ModelVariant};
use crate::stats;

/// Schema tag written into every scan table.
pub const SCAN_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

/// Density floor for the weighted criterion's escape clause: cells whose
/// mean-square weight falls at or below the floor are good outright.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DensityFloor {
    /// `(ln ln L)^{-1/4}` with `L` the configured half-extent of the scheme.
    LogLog,
    Fixed(f64),
}

impl DensityFloor {
    pub fn value(&self, l_half: i64) -> Result<f64> {
        match self {
            DensityFloor::LogLog => {
                if l_half < 3 {
                    return Err(Error::config(
                        "log-log density floor needs a half-extent of at least 3",
                    ));
                }
                Ok(((l_half as f64).ln().ln()).powf(-0.25))
            }
            DensityFloor::Fixed(c) => {
                if !c.is_finite() || *c < 0.0 {
                    return Err(Error::config("fixed density floor must be finite and >= 0"));
                }
                Ok(*c)
            }
        }
    }
}

/// Rule instantiating a bounded weight on any cell, so that the weighted
/// criterion stays a function of the cell alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightRule {
    /// Every component equal to `c`, `|c| <= 1`.
    Constant(f64),
    /// `(-1)^{|v|_1}` on every component.
    Checkerboard,
}

impl WeightRule {
    pub fn instantiate(&self, region: &Region, m: usize) -> Result<WeightFunction> {
        match self {
            WeightRule::Constant(c) => WeightFunction::constant(region.clone(), m, *c),
            WeightRule::Checkerboard => WeightFunction::checkerboard(region.clone(), m),
        }
    }
}

/// Goodness predicate for a cell. Every variant depends only on the
/// disorder restricted to the cell; evaluation enforces this by restricting
/// the field before looking at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GoodnessCriterion {
    /// Good iff the boundary-variation functional of the cell is at most
    /// `delta`.
    FlucThreshold { delta: f64 },
    /// Good iff the weighted variant is at most `delta`, or the mean-square
    /// weight on the cell is at or below the density floor.
    WeightedFlucThreshold { delta: f64, weight: WeightRule, floor: DensityFloor },
    /// Good iff the normalized field sum `|cell|^{-1/2} sum_v eta_{v,i}`
    /// is at most `t_delta / side^2`, with `t_delta` the Gaussian quantile
    /// at level `exp(-1/delta^2)`.
    FieldQuantile { delta: f64, component: usize },
    /// Every cell is good. Degenerate reference case.
    AlwaysGood,
    /// No cell is good. Degenerate reference case.
    AlwaysBad,
}

impl GoodnessCriterion {
    /// Threshold parameter carried into reports; zero for the degenerate
    /// criteria.
    pub fn delta(&self) -> f64 {
        match self {
            GoodnessCriterion::FlucThreshold { delta }
            | GoodnessCriterion::WeightedFlucThreshold { delta, .. }
            | GoodnessCriterion::FieldQuantile { delta, .. } => *delta,
            GoodnessCriterion::AlwaysGood | GoodnessCriterion::AlwaysBad => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let delta = self.delta();
        match self {
            GoodnessCriterion::AlwaysGood | GoodnessCriterion::AlwaysBad => Ok(()),
            _ if !(delta > 0.0) || !delta.is_finite() => {
                Err(Error::config("criterion threshold must be positive and finite"))
            }
            GoodnessCriterion::WeightedFlucThreshold { weight: WeightRule::Constant(c), .. }
                if c.abs() > 1.0 + 1e-12 =>
            {
                Err(Error::config("constant weight must have magnitude at most 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Smallest branching factor `k >= 2` whose cells shrink the volume by at
/// least the factor `delta / 4` per level.
pub fn adaptive_branching(delta: f64, d: usize) -> Result<u32> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::config("adaptive branching needs a positive finite threshold"));
    }
    if d == 0 || d > 4 {
        return Err(Error::config("adaptive branching needs dimension in 1..=4"));
    }
    let target = 4.0 / delta;
    let mut k = 2u32;
    while ((k as f64).powi(d as i32)) < target {
        k += 1;
        if k > 1_000_000 {
            return Err(Error::config("adaptive branching factor exceeds 10^6"));
        }
    }
    Ok(k)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Resource bounds and sampling schedule for criterion evaluation.
#[derive(Clone, Debug)]
pub struct PartitionOptions {
    pub caps: ExactCaps,
    pub mcmc: McmcOptions,
    /// Base seed; per-cell sampling seeds are derived from it and the cell
    /// coordinates, so verdicts do not depend on evaluation order.
    pub seed: u64,
    /// Fall back to sampling when a cell exceeds the enumeration caps.
    pub allow_mcmc_fallback: bool,
    /// Random boundary conditions added to the candidate list in fallback
    /// mode, on top of the model's uniform extremes.
    pub n_random_candidates: usize,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        PartitionOptions {
            caps: ExactCaps::default(),
            mcmc: McmcOptions::default(),
            seed: 0,
            allow_mcmc_fallback: true,
            n_random_candidates: 4,
        }
    }
}

/// Outcome of one criterion evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellVerdict {
    pub good: bool,
    /// The verdict rests on a lower bound of the functional (candidate-set
    /// sampling), so "good" is not certified.
    pub lower_bound_only: bool,
    /// The statistic the verdict compared against the threshold, when the
    /// criterion has one.
    pub value: Option<f64>,
    pub stderr: Option<f64>,
}

/// Memo of verdicts keyed by cell box and the content hash of the disorder
/// restricted to it; reusable across builds that share field values on
/// coinciding boxes.
#[derive(Default)]
pub struct CriterionCache {
    map: HashMap<(BoxRegion, u64), CellVerdict>,
}

impl CriterionCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn cell_seed(base: u64, level: u32, idx: &CellIndex) -> u64 {
    let mut s = base ^ 0x243f_6a88_85a3_08d3u64.wrapping_mul(level as u64 + 1);
    for (axis, c) in idx.iter().enumerate() {
        s = s
            .rotate_left(17)
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(*c as u64 + axis as u64);
    }
    s
}

/// Evaluate a criterion on one cell. The field is restricted to the cell
/// first, so the verdict provably depends on nothing outside it.
pub fn evaluate_criterion(
    criterion: &GoodnessCriterion,
    cell: &BoxRegion,
    eta: &DisorderField,
    spec: &ModelSpec,
    l_half: i64,
    opt: &PartitionOptions,
    seed: u64,
) -> Result<CellVerdict> {
    let local = eta.restrict(&cell.region())?;
    evaluate_local(criterion, cell, &local, spec, l_half, opt, seed)
}

fn evaluate_local(
    criterion: &GoodnessCriterion,
    cell: &BoxRegion,
    local: &DisorderField,
    spec: &ModelSpec,
    l_half: i64,
    opt: &PartitionOptions,
    seed: u64,
) -> Result<CellVerdict> {
    criterion.validate()?;
    let region = cell.region();
    match criterion {
        GoodnessCriterion::AlwaysGood => {
            Ok(CellVerdict { good: true, lower_bound_only: false, value: None, stderr: None })
        }
        GoodnessCriterion::AlwaysBad => {
            Ok(CellVerdict { good: false, lower_bound_only: false, value: None, stderr: None })
        }
        GoodnessCriterion::FieldQuantile { delta, component } => {
            if *component >= spec.m() {
                return Err(Error::config(format!(
                    "field component {component} out of range for a model with {} components",
                    spec.m()
                )));
            }
            let mean = local.mean_over(&region)?[*component];
            let stat = mean * (region.len() as f64).sqrt();
            let side = cell.max_side() as f64;
            let threshold = field_quantile_threshold(*delta)? / (side * side);
            Ok(CellVerdict {
                good: stat <= threshold,
                lower_bound_only: false,
                value: Some(stat),
                stderr: None,
            })
        }
        GoodnessCriterion::FlucThreshold { delta } => {
            let est = fluc_with_fallback(spec, &region, local, None, opt, seed)?;
            Ok(CellVerdict {
                good: est.value <= *delta,
                lower_bound_only: est.lower_bound_only,
                value: Some(est.value),
                stderr: est.stderr,
            })
        }
        GoodnessCriterion::WeightedFlucThreshold { delta, weight, floor } => {
            let w = weight.instantiate(&region, spec.m())?;
            if w.mean_square() <= floor.value(l_half)? {
                return Ok(CellVerdict {
                    good: true,
                    lower_bound_only: false,
                    value: None,
                    stderr: None,
                });
            }
            let est = fluc_with_fallback(spec, &region, local, Some(&w), opt, seed)?;
            Ok(CellVerdict {
                good: est.value <= *delta,
                lower_bound_only: est.lower_bound_only,
                value: Some(est.value),
                stderr: est.stderr,
            })
        }
    }
}

struct FlucValue {
    value: f64,
    stderr: Option<f64>,
    lower_bound_only: bool,
}

fn fluc_with_fallback(
    spec: &ModelSpec,
    region: &Region,
    local: &DisorderField,
    weight: Option<&WeightFunction>,
    opt: &PartitionOptions,
    seed: u64,
) -> Result<FlucValue> {
    if spec.is_discrete() {
        let mode = match weight {
            Some(w) => FlucMode::Weighted(w),
            None => FlucMode::FullSup,
        };
        match exact_fluc(spec, region, local, &mode, &opt.caps, true) {
            Ok(out) => {
                return Ok(FlucValue {
                    value: out.value,
                    stderr: None,
                    lower_bound_only: false,
                })
            }
            Err(Error::CapExceeded(msg)) => {
                if !opt.allow_mcmc_fallback {
                    return Err(Error::CapExceeded(msg));
                }
            }
            Err(e) => return Err(e),
        }
    } else if !opt.allow_mcmc_fallback {
        return Err(Error::model(
            "continuous-spin criterion evaluation requires the sampling fallback",
        ));
    }
    let ferro_ising =
        matches!(&spec.variant, ModelVariant::Rfim { coupling, .. } if *coupling >= 0.0);
    let est = if weight.is_none() && ferro_ising {
        mcmc_fluc_ferro_ising(spec, region, local, &opt.mcmc, seed)?
    } else {
        let candidates =
            default_candidate_boundaries(spec, region, opt.n_random_candidates, seed)?;
        match weight {
            Some(w) => {
                mcmc_weighted_fluc_candidates(spec, region, local, w, &candidates, &opt.mcmc, seed)?
            }
            None => mcmc_fluc_candidates(spec, region, local, &candidates, &opt.mcmc, seed)?,
        }
    };
    Ok(FlucValue {
        value: est.value,
        stderr: Some(est.stderr),
        lower_bound_only: est.lower_bound_only,
    })
}

// ---------------------------------------------------------------------------
// Partition construction
// ---------------------------------------------------------------------------

/// Verdict record for one evaluated cell. Cells under a selected ancestor
/// are never evaluated and have no record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub level: u32,
    pub index: CellIndex,
    pub good: bool,
    pub lower_bound_only: bool,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
}

/// Per-level tallies of the construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCount {
    pub level: u32,
    /// Cells whose criterion was evaluated (no selected ancestor).
    pub evaluated: u64,
    /// Evaluated cells that were good, hence selected.
    pub selected: u64,
    /// Cells skipped because an ancestor was already selected.
    pub skipped: u64,
}

/// Result of the recursive construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub l_half: i64,
    pub k: u32,
    pub l_max: u32,
    pub d: usize,
    pub delta: f64,
    /// Selected boxes: good cells with no selected ancestor, pairwise
    /// disjoint.
    pub q: Vec<(u32, BoxRegion)>,
    /// Vertices of the top box in no selected cell; equivalently the
    /// vertices whose cells are bad at every level.
    pub uncovered: Region,
    pub levels: Vec<LevelCount>,
    pub verdicts: Vec<CellRecord>,
    /// At least one verdict rests on a candidate-set lower bound.
    pub lower_bound_goodness: bool,
}

impl PartitionReport {
    pub fn scheme(&self) -> Result<DyadicScheme> {
        DyadicScheme::new(self.l_half, self.k, self.d)
    }

    pub fn top_volume(&self) -> f64 {
        (2.0 * self.l_half as f64).powi(self.d as i32)
    }

    pub fn uncovered_fraction(&self) -> f64 {
        self.uncovered.len() as f64 / self.top_volume()
    }

    /// Criterion statistic for each selected box, in `q` order.
    pub fn q_values(&self) -> Result<Vec<f64>> {
        let scheme = self.scheme()?;
        let mut out = Vec::with_capacity(self.q.len());
        for (level, bx) in &self.q {
            let rec = self
                .verdicts
                .iter()
                .find(|r| {
                    r.level == *level
                        && r.good
                        && scheme.cell_box(r.level, r.index).map(|b| b == *bx).unwrap_or(false)
                })
                .ok_or_else(|| {
                    Error::NumericCheck("selected box without a matching verdict".into())
                })?;
            out.push(rec.value.ok_or_else(|| {
                Error::NumericCheck("selected box verdict carries no statistic".into())
            })?);
        }
        Ok(out)
    }

    /// Re-derive every structural invariant from scratch: disjointness of
    /// the selected boxes, exact complementarity of the uncovered set,
    /// all-ancestors-bad for uncovered vertices, and maximality of the
    /// selection given the recorded verdicts.
    pub fn verify(&self) -> Result<()> {
        let scheme = self.scheme()?;
        let top = scheme.top_box();
        let fail = |msg: &str| Err(Error::NumericCheck(format!("partition audit: {msg}")));

        for (i, (_, a)) in self.q.iter().enumerate() {
            if !top.contains_box(a) {
                return fail("selected box leaves the top box");
            }
            for (_, b) in &self.q[i + 1..] {
                if a.intersects(b) {
                    return fail("selected boxes overlap");
                }
            }
        }

        let mut covered_vertices: Vec<Vertex> = Vec::new();
        for (_, bx) in &self.q {
            covered_vertices.extend(bx.region().iter().cloned());
        }
        let covered = if covered_vertices.is_empty() {
            Region::empty(self.d)
        } else {
            Region::from_vertices(self.d, covered_vertices)?
        };
        if self.uncovered != top.region().difference(&covered) {
            return fail("uncovered set is not the exact complement of the selection");
        }

        let mut records: HashMap<(u32, CellIndex), &CellRecord> = HashMap::new();
        for rec in &self.verdicts {
            if records.insert((rec.level, rec.index), rec).is_some() {
                return fail("duplicate verdict for one cell");
            }
        }

        for v in self.uncovered.iter() {
            for level in 0..=self.l_max {
                let idx = match scheme.locate(level, v)? {
                    Some(idx) => idx,
                    None => return fail("uncovered vertex escapes the cell scheme"),
                };
                match records.get(&(level, idx)) {
                    Some(rec) if !rec.good => {}
                    Some(_) => return fail("uncovered vertex lies in a good cell"),
                    None => return fail("uncovered vertex in an unevaluated cell"),
                }
            }
        }

        let mut selected: HashMap<(u32, CellIndex), BoxRegion> = HashMap::new();
        for (level, bx) in &self.q {
            let corner = bx.region();
            let idx = match scheme.locate(*level, corner.vertex(0))? {
                Some(idx) => idx,
                None => return fail("selected box escapes the cell scheme"),
            };
            if scheme.cell_box(*level, idx)? != *bx {
                return fail("selected box is not a cell of its level");
            }
            match records.get(&(*level, idx)) {
                Some(rec) if rec.good => {}
                _ => return fail("selected box lacks a good verdict"),
            }
            let mut anc = idx;
            for anc_level in (0..*level).rev() {
                anc = scheme.parent_index(anc);
                match records.get(&(anc_level, anc)) {
                    Some(rec) if !rec.good => {}
                    Some(_) => return fail("selected box under a good ancestor"),
                    None => return fail("selected box with an unevaluated ancestor"),
                }
            }
            selected.insert((*level, idx), *bx);
        }

        for rec in &self.verdicts {
            if rec.good && !selected.contains_key(&(rec.level, rec.index)) {
                return fail("good verdict not selected (construction order violated)");
            }
        }

        for lc in &self.levels {
            let n = self.q.iter().filter(|(l, _)| *l == lc.level).count() as u64;
            if n != lc.selected {
                return fail("per-level selection count mismatch");
            }
        }

        let any_lb = self.verdicts.iter().any(|r| r.lower_bound_only);
        if any_lb != self.lower_bound_goodness {
            return fail("lower-bound flag inconsistent with verdicts");
        }
        Ok(())
    }

    /// JSON document for visualization: selected boxes as center,
    /// half-side, and level, plus uncovered-set tallies.
    pub fn to_json(&self) -> Result<String> {
        let boxes: Vec<serde_json::Value> = self
            .q
            .iter()
            .map(|(level, bx)| {
                let d = self.d;
                let center: Vec<f64> =
                    (0..d).map(|i| (bx.lo(i) as f64 + bx.hi(i) as f64) / 2.0).collect();
                serde_json::json!({
                    "level": level,
                    "center": center,
                    "half_side": bx.side(0) as f64 / 2.0,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "l_half": self.l_half,
            "k": self.k,
            "l_max": self.l_max,
            "d": self.d,
            "delta": self.delta,
            "boxes": boxes,
            "uncovered_vertices": self.uncovered.len(),
            "uncovered_fraction": self.uncovered_fraction(),
            "lower_bound_goodness": self.lower_bound_goodness,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Run the recursive construction: walk levels `0..=l_max` coarse to fine,
/// evaluate every cell with no selected ancestor, and select the good ones.
/// `l_max` defaults to the largest level whose cell count per axis stays at
/// or below the square root of the box side; the override must still keep
/// cells no smaller than single sites.
pub fn build_partition(
    l_half: i64,
    k: u32,
    l_max: Option<u32>,
    criterion: &GoodnessCriterion,
    eta: &DisorderField,
    spec: &ModelSpec,
    opt: &PartitionOptions,
    mut cache: Option<&mut CriterionCache>,
) -> Result<PartitionReport> {
    criterion.validate()?;
    let d = spec.d as usize;
    let scheme = DyadicScheme::new(l_half, k, d)?;
    let l_max = l_max.unwrap_or_else(|| scheme.default_max_level());
    scheme.cells_per_axis(l_max)?;
    let top = scheme.top_box();
    if !eta.region().is_subset_of(&top.region()) && !top.region().is_subset_of(eta.region()) {
        return Err(Error::config("disorder field does not cover the top box"));
    }

    let mut selected: HashMap<(u32, CellIndex), BoxRegion> = HashMap::new();
    let mut q: Vec<(u32, BoxRegion)> = Vec::new();
    let mut verdicts: Vec<CellRecord> = Vec::new();
    let mut levels: Vec<LevelCount> = Vec::new();

    for level in 0..=l_max {
        let mut skipped = 0u64;
        let mut to_eval: Vec<CellIndex> = Vec::new();
        'cells: for idx in scheme.indices(level)? {
            let mut anc = idx;
            for anc_level in (0..level).rev() {
                anc = scheme.parent_index(anc);
                if selected.contains_key(&(anc_level, anc)) {
                    skipped += 1;
                    continue 'cells;
                }
            }
            to_eval.push(idx);
        }

        let evaluated: Vec<(CellIndex, BoxRegion, u64, CellVerdict)> = to_eval
            .par_iter()
            .map(|idx| -> Result<(CellIndex, BoxRegion, u64, CellVerdict)> {
                let bx = scheme.cell_box(level, *idx)?;
                let local = eta.restrict(&bx.region())?;
                let key_hash = local.content_hash();
                if let Some(c) = cache.as_deref() {
                    if let Some(v) = c.map.get(&(bx, key_hash)) {
                        return Ok((*idx, bx, key_hash, *v));
                    }
                }
                let verdict = evaluate_local(
                    criterion,
                    &bx,
                    &local,
                    spec,
                    l_half,
                    opt,
                    cell_seed(opt.seed, level, idx),
                )?;
                Ok((*idx, bx, key_hash, verdict))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut selected_here = 0u64;
        for (idx, bx, key_hash, verdict) in &evaluated {
            if let Some(c) = cache.as_deref_mut() {
                c.map.insert((*bx, *key_hash), *verdict);
            }
            verdicts.push(CellRecord {
                level,
                index: *idx,
                good: verdict.good,
                lower_bound_only: verdict.lower_bound_only,
                value: verdict.value,
                stderr: verdict.stderr,
            });
            if verdict.good {
                selected.insert((level, *idx), *bx);
                q.push((level, *bx));
                selected_here += 1;
            }
        }
        levels.push(LevelCount {
            level,
            evaluated: evaluated.len() as u64,
            selected: selected_here,
            skipped,
        });
    }

    let mut covered_vertices: Vec<Vertex> = Vec::new();
    for (_, bx) in &q {
        covered_vertices.extend(bx.region().iter().cloned());
    }
    let covered = if covered_vertices.is_empty() {
        Region::empty(d)
    } else {
        Region::from_vertices(d, covered_vertices)?
    };
    let uncovered = top.region().difference(&covered);
    let lower_bound_goodness = verdicts.iter().any(|r| r.lower_bound_only);

    Ok(PartitionReport {
        l_half,
        k,
        l_max,
        d,
        delta: criterion.delta(),
        q,
        uncovered,
        levels,
        verdicts,
        lower_bound_goodness,
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Whole-box bound assembled from per-box values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateBound {
    /// `sum_i (|box_i| / |top|) fluc_i + 2 * uncovered fraction`.
    pub bound: f64,
    pub uncovered_fraction: f64,
    /// Directly computed whole-box value, when one was supplied; always at
    /// most `bound`.
    pub direct: Option<f64>,
}

/// Combine per-selected-box fluctuation values (in `q` order) into a bound
/// for the whole box. Every value must respect the threshold: a violation
/// means the construction selected a box its criterion should have
/// rejected. A supplied whole-box `direct` value must sit below the bound.
pub fn aggregate_fluc_bound(
    report: &PartitionReport,
    flucs: &[f64],
    delta: f64,
    direct: Option<f64>,
) -> Result<AggregateBound> {
    if flucs.len() != report.q.len() {
        return Err(Error::config(format!(
            "got {} fluctuation values for {} selected boxes",
            flucs.len(),
            report.q.len()
        )));
    }
    let total = report.top_volume();
    let mut bound = 0.0;
    for ((_, bx), f) in report.q.iter().zip(flucs) {
        if !f.is_finite() || *f < 0.0 {
            return Err(Error::config("fluctuation values must be finite and >= 0"));
        }
        if *f > delta + 1e-9 {
            return Err(Error::NumericCheck(format!(
                "selected box has fluctuation {f} above the threshold {delta}"
            )));
        }
        bound += (bx.volume() as f64 / total) * f;
    }
    let uncovered_fraction = report.uncovered_fraction();
    bound += 2.0 * uncovered_fraction;
    if let Some(dv) = direct {
        if dv > bound + 1e-9 {
            return Err(Error::NumericCheck(format!(
                "direct whole-box value {dv} exceeds the aggregate bound {bound}"
            )));
        }
    }
    Ok(AggregateBound { bound, uncovered_fraction, direct })
}

// ---------------------------------------------------------------------------
// Uncovered-probability scan
// ---------------------------------------------------------------------------

/// One row of the scan: empirical uncovered-vertex probability at one box
/// size, with a Wilson interval over all vertices of all replicas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub l_half: i64,
    pub replicas: u32,
    pub uncovered_vertices: u64,
    pub total_vertices: u64,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
}

/// Scan outcome: rows by box size plus trend summaries. The slope is a
/// least-squares fit of the probability against the log box side; the band
/// flag records whether a nonincreasing trend is consistent with every
/// adjacent pair of intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncoveredScan {
    pub rows: Vec<ScanRow>,
    pub trend_slope: f64,
    pub nonincreasing_within_bands: bool,
}

impl UncoveredScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "schema_version,l_half,replicas,uncovered_vertices,total_vertices,p_hat,wilson_lo,wilson_hi\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                SCAN_SCHEMA_VERSION,
                r.l_half,
                r.replicas,
                r.uncovered_vertices,
                r.total_vertices,
                r.p_hat,
                r.wilson_lo,
                r.wilson_hi
            ));
        }
        out
    }
}

/// Estimate the uncovered-vertex probability at each box size by building
/// partitions over independently sampled disorders.
pub fn uncovered_probability_scan(
    l_list: &[i64],
    k: u32,
    criterion: &GoodnessCriterion,
    spec: &ModelSpec,
    replicas: u32,
    opt: &PartitionOptions,
) -> Result<UncoveredScan> {
    if replicas < 30 {
        return Err(Error::config("uncovered-probability scan needs at least 30 replicas"));
    }
    if l_list.is_empty() {
        return Err(Error::config("uncovered-probability scan needs at least one box size"));
    }
    let d = spec.d as usize;
    let mut rows = Vec::with_capacity(l_list.len());
    let mut cache = CriterionCache::new();
    for (li, &l_half) in l_list.iter().enumerate() {
        let scheme = DyadicScheme::new(l_half, k, d)?;
        let top_region = scheme.top_box().region();
        let volume = top_region.len() as u64;
        let mut uncovered = 0u64;
        for r in 0..replicas {
            let seed = opt
                .seed
                .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(li as u64 + 1))
                .wrapping_add(0xd1b5_4a32_d192_ed03u64.wrapping_mul(r as u64 + 1));
            let eta = DisorderField::sample(seed, top_region.clone(), spec.m());
            let run_opt = PartitionOptions { seed, ..opt.clone() };
            let report = build_partition(
                l_half,
                k,
                None,
                criterion,
                &eta,
                spec,
                &run_opt,
                Some(&mut cache),
            )?;
            uncovered += report.uncovered.len() as u64;
        }
        let trials = volume * replicas as u64;
        let p_hat = uncovered as f64 / trials as f64;
        let (wilson_lo, wilson_hi) = stats::wilson_interval(uncovered, trials, 1.96);
        rows.push(ScanRow {
            l_half,
            replicas,
            uncovered_vertices: uncovered,
            total_vertices: trials,
            p_hat,
            wilson_lo,
            wilson_hi,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| (2.0 * r.l_half as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.p_hat).collect();
    let trend_slope = if rows.len() >= 2 { stats::linear_fit(&xs, &ys).0 } else { 0.0 };
    let nonincreasing_within_bands =
        rows.windows(2).all(|w| w[1].wilson_lo <= w[0].wilson_hi + 1e-12);
    Ok(UncoveredScan { rows, trend_slope, nonincreasing_within_bands })
}

// ---------------------------------------------------------------------------
