//! Experiment configuration, disorder-replica orchestration, and CSV, SVG
//! and manifest emission for the named experiment suites.
//!
//! Every experiment is a pure function of its config: replica seeds derive
//! from the base seed and the replica index, parallel evaluation collects in
//! index order, and floats print through their shortest round-trip form, so
//! rerunning a manifest reproduces each table byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex::{
    class_g_gaussian_bound, random_admissible_step, random_admissible_step_floor,
    random_pl_convex, stab_outer, stab_witness, sublevel_gaussian_lower,
};
use crate::disorder::{DisorderField, WeightFunction};
use crate::error::{Error, Result};
use crate::exact::{exact_fluc, exact_gibbs, ExactCaps, FlucMode};
use crate::ground::{agreement_density, enumerate_ground_state};
use crate::hierarchy::{
    uncovered_probability_scan, DensityFloor, GoodnessCriterion, PartitionOptions, WeightRule,
};
use crate::lattice::{BoxRegion, Region};
use crate::mcmc::{self, McmcOptions, Tracked};
use crate::models::{Boundary, ModelSpec, ModelVariant, SpinConfig};
use crate::spinwave;
use crate::stats;

/// Version stamped into every CSV row and manifest this module writes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    FlucDecay,
    WeightedFluc,
    MagDecay,
    MwGap,
    StabilitySuite,
    PartitionScan,
    ModelFacts,
    Alpha,
}

impl ExperimentKind {
    pub fn parse(name: &str) -> Result<ExperimentKind> {
        Ok(match name {
            "fluc-decay" => ExperimentKind::FlucDecay,
            "weighted-fluc" => ExperimentKind::WeightedFluc,
            "mag-decay" => ExperimentKind::MagDecay,
            "mw-gap" => ExperimentKind::MwGap,
            "stability-suite" => ExperimentKind::StabilitySuite,
            "partition-scan" => ExperimentKind::PartitionScan,
            "model-facts" => ExperimentKind::ModelFacts,
            "alpha" => ExperimentKind::Alpha,
            other => {
                return Err(Error::config(format!(
                    "unknown experiment {other:?}; expected one of fluc-decay, weighted-fluc, \
                     mag-decay, mw-gap, stability-suite, partition-scan, model-facts, alpha"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FlucDecay => "fluc-decay",
            ExperimentKind::WeightedFluc => "weighted-fluc",
            ExperimentKind::MagDecay => "mag-decay",
            ExperimentKind::MwGap => "mw-gap",
            ExperimentKind::StabilitySuite => "stability-suite",
            ExperimentKind::PartitionScan => "partition-scan",
            ExperimentKind::ModelFacts => "model-facts",
            ExperimentKind::Alpha => "alpha",
        }
    }

    /// Experiments whose primary output is a disorder-averaged mean; these
    /// require enough replicas for a standard error to make sense.
    fn reports_means(self) -> bool {
        matches!(
            self,
            ExperimentKind::MagDecay
                | ExperimentKind::MwGap
                | ExperimentKind::PartitionScan
                | ExperimentKind::ModelFacts
                | ExperimentKind::Alpha
        )
    }
}

/// Boundary condition selector for experiments that sample a single Gibbs
/// measure per replica.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    #[default]
    Periodic,
    Free,
    /// Uniform boundary: state zero for discrete models, the first basis
    /// vector for continuous ones.
    FixedUniform,
}

/// Optional per-experiment knobs. Unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParams {
    /// Goodness threshold for partition criteria.
    pub delta: Option<f64>,
    /// Weight rule for the weighted functional and weighted criteria.
    pub weight: Option<WeightRule>,
    /// Fixed density floor for the weighted criterion's escape clause.
    pub floor: Option<f64>,
    /// Inner box side for the flip-gap experiment.
    pub ell: Option<i64>,
    /// Branching factor of the nested cell scheme.
    pub branching: Option<u32>,
    /// Field component for the quantile criterion.
    pub component: Option<usize>,
    /// Partition criterion: "fluc", "weighted", or "quantile".
    pub criterion: Option<String>,
    pub max_states: Option<u64>,
    pub max_boundaries: Option<u64>,
    /// Random boundary conditions per replica on top of the extremes.
    pub n_random_boundaries: Option<usize>,
    /// Measurement sweeps per chain for sampled estimates.
    pub sweeps: Option<usize>,
    /// Case count for the stability suite.
    pub cases: Option<u32>,
    pub boundary: Option<BoundaryKind>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of the names accepted by `ExperimentKind::parse`.
    pub experiment: String,
    pub model: ModelSpec,
    /// Box sides, except for `partition-scan` where entries are half
    /// extents of the scanned boxes.
    pub l_list: Vec<i64>,
    pub replicas: u32,
    pub seed: u64,
    #[serde(default)]
    pub params: ExperimentParams,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn kind(&self) -> Result<ExperimentKind> {
        ExperimentKind::parse(&self.experiment)
    }

    fn caps(&self) -> ExactCaps {
        let mut caps = ExactCaps::default();
        if let Some(s) = self.params.max_states {
            caps.max_states = s;
        }
        if let Some(b) = self.params.max_boundaries {
            caps.max_boundaries = b;
        }
        caps
    }

    fn mcmc_opts(&self) -> McmcOptions {
        let mut opts = McmcOptions::default();
        if let Some(s) = self.params.sweeps {
            opts.sweeps = s;
            opts.burn_in = (s / 4).max(64);
        }
        opts
    }

    fn n_random(&self) -> usize {
        self.params.n_random_boundaries.unwrap_or(8)
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind()?;
        // round-trip the model through its constructor so that a
        // hand-written config cannot smuggle in an invalid spec
        ModelSpec::new(
            self.model.variant.clone(),
            self.model.d as usize,
            self.model.beta,
            self.model.lambda,
        )
        .map_err(|e| Error::config(format!("model: {e}")))?;
        if kind != ExperimentKind::StabilitySuite {
            if self.l_list.is_empty() {
                return Err(Error::config("l_list must not be empty"));
            }
            if self.l_list.iter().any(|&l| l < 1) {
                return Err(Error::config("box sides must be positive"));
            }
        }
        if self.replicas == 0 {
            return Err(Error::config("replica count must be positive"));
        }
        if kind.reports_means() && self.replicas < 30 {
            return Err(Error::config(format!(
                "{} reports disorder means and needs at least 30 replicas",
                kind.name()
            )));
        }
        match kind {
            ExperimentKind::WeightedFluc => {
                match &self.params.weight {
                    None => {
                        return Err(Error::config(
                            "weighted-fluc needs params.weight (constant or checkerboard)",
                        ))
                    }
                    Some(WeightRule::Constant(c)) if c.abs() > 1.0 => {
                        return Err(Error::config("constant weight must lie in [-1, 1]"));
                    }
                    Some(_) => {}
                }
            }
            ExperimentKind::MagDecay => {
                let h = match &self.model.variant {
                    ModelVariant::On { h, .. } => h.clone(),
                    ModelVariant::ClockOn2 { h, .. } => h.to_vec(),
                    _ => {
                        return Err(Error::config(
                            "mag-decay needs a continuous-symmetry model",
                        ))
                    }
                };
                let h_norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
                for &l in &self.l_list {
                    let cap = 1.0 / (l as f64 * l as f64);
                    if h_norm > cap + 1e-12 {
                        return Err(Error::config(format!(
                            "field norm {h_norm} exceeds the decay hypothesis cap {cap} at side {l}"
                        )));
                    }
                }
            }
            ExperimentKind::MwGap => {
                let n_states = match &self.model.variant {
                    ModelVariant::ClockOn2 { n_states, .. } => *n_states,
                    _ => return Err(Error::config("mw-gap needs the planar clock model")),
                };
                if n_states % 2 != 0 {
                    return Err(Error::config("mw-gap needs an even clock state count"));
                }
                if self.model.d != 1 {
                    return Err(Error::config("mw-gap runs on chains"));
                }
                let ell = self
                    .params
                    .ell
                    .ok_or_else(|| Error::config("mw-gap needs params.ell (inner box side)"))?;
                if ell < 2 || ell % 2 != 0 {
                    return Err(Error::config("inner side must be even and at least 2"));
                }
                for &l in &self.l_list {
                    if l % 2 != 0 || l < 2 * ell {
                        return Err(Error::config(format!(
                            "chain length {l} must be even and at least twice the inner side {ell}"
                        )));
                    }
                }
            }
            ExperimentKind::PartitionScan => {
                let delta = self
                    .params
                    .delta
                    .ok_or_else(|| Error::config("partition-scan needs params.delta"))?;
                if !(delta > 0.0) {
                    return Err(Error::config("criterion threshold must be positive"));
                }
                self.partition_criterion()?;
                if self.params.branching.unwrap_or(2) < 2 {
                    return Err(Error::config("branching factor must be at least 2"));
                }
            }
            ExperimentKind::ModelFacts => {
                if !matches!(
                    self.model.variant,
                    ModelVariant::Potts { .. } | ModelVariant::Ea { .. }
                ) {
                    return Err(Error::config(
                        "model-facts covers the color-symmetric and spin-glass models",
                    ));
                }
            }
            ExperimentKind::Alpha => {
                if self.model.num_states().is_none() {
                    return Err(Error::config(
                        "the sandwich estimate enumerates states and needs a discrete model",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn partition_criterion(&self) -> Result<GoodnessCriterion> {
        let delta = self.params.delta.unwrap_or(0.0);
        Ok(match self.params.criterion.as_deref().unwrap_or("fluc") {
            "fluc" => GoodnessCriterion::FlucThreshold { delta },
            "weighted" => GoodnessCriterion::WeightedFlucThreshold {
                delta,
                weight: self.params.weight.clone().ok_or_else(|| {
                    Error::config("the weighted criterion needs params.weight")
                })?,
                floor: match self.params.floor {
                    Some(f) => DensityFloor::Fixed(f),
                    None => DensityFloor::LogLog,
                },
            },
            "quantile" => GoodnessCriterion::FieldQuantile {
                delta,
                component: self.params.component.unwrap_or(0),
            },
            other => {
                return Err(Error::config(format!(
                    "unknown criterion {other:?}; expected fluc, weighted, or quantile"
                )))
            }
        })
    }
}

/// Load and validate a config from a `.toml` or `.json` file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        Some("json") => serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?,
        _ => {
            return Err(Error::config(format!(
                "{}: config files end in .toml or .json",
                path.display()
            )))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize the manifest that `write_outputs` drops next to the tables.
/// Feeding it back through `load_manifest` reruns the experiment bit for
/// bit.
pub fn manifest_json(cfg: &ExperimentConfig) -> Result<String> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        schema_version: u32,
        config: &'a ExperimentConfig,
    }
    Ok(serde_json::to_string_pretty(&Manifest { schema_version: CSV_SCHEMA_VERSION, config: cfg })?)
}

/// Parse a manifest produced by `manifest_json`.
pub fn load_manifest(text: &str) -> Result<ExperimentConfig> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Manifest {
        schema_version: u32,
        config: ExperimentConfig,
    }
    let m: Manifest =
        serde_json::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))?;
    if m.schema_version != CSV_SCHEMA_VERSION {
        return Err(Error::config(format!(
            "manifest schema version {} is not {CSV_SCHEMA_VERSION}",
            m.schema_version
        )));
    }
    m.config.validate()?;
    Ok(m.config)
}

// ---------------------------------------------------------------------------
// Output containers
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File stem; `write_outputs` appends `.csv`.
    pub name: String,
    pub csv: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    /// File stem; `write_outputs` appends `.svg`.
    pub name: String,
    pub svg: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
    /// Deterministic human-readable summary lines.
    pub notes: Vec<String>,
}

/// Write manifest, tables, and plots into `dir`, returning the paths.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let manifest = dir.join("manifest.json");
    fs::write(&manifest, manifest_json(cfg)?)?;
    paths.push(manifest);
    for t in &out.tables {
        let p = dir.join(format!("{}.csv", t.name));
        fs::write(&p, &t.csv)?;
        paths.push(p);
    }
    for pl in &out.plots {
        let p = dir.join(format!("{}.svg", pl.name));
        fs::write(&p, &pl.svg)?;
        paths.push(p);
    }
    if !out.notes.is_empty() {
        let p = dir.join("notes.txt");
        fs::write(&p, out.notes.join("\n") + "\n")?;
        paths.push(p);
    }
    Ok(paths)
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Deterministic per-replica seed, mixed from the base seed, the position
/// of the box size in the config list, and the replica index.
pub fn replica_seed(base: u64, level: usize, replica: u32) -> u64 {
    base.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(level as u64 + 1))
        .wrapping_add(0xd1b5_4a32_d192_ed03u64.wrapping_mul(replica as u64 + 1))
}

fn side_box(l: i64, d: usize) -> Result<BoxRegion> {
    BoxRegion::from_corners(&vec![0; d], &vec![l - 1; d])
}

struct Csv {
    buf: String,
}

impl Csv {
    fn new(columns: &str) -> Csv {
        Csv { buf: format!("schema_version,{columns}\n") }
    }

    fn row(&mut self, fields: std::fmt::Arguments<'_>) {
        let _ = writeln!(self.buf, "{CSV_SCHEMA_VERSION},{fields}");
    }

    fn finish(self) -> String {
        self.buf
    }
}

/// Parse named numeric columns out of one of our own CSV tables.
fn csv_columns(csv_text: &str, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    let mut idx = Vec::with_capacity(names.len());
    for name in names {
        idx.push(
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::config(format!("table has no column {name:?}")))?,
        );
    }
    let mut cols = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record?;
        for (slot, &i) in idx.iter().enumerate() {
            let raw = record.get(i).unwrap_or("");
            let value = raw
                .parse::<f64>()
                .map_err(|_| Error::config(format!("column {:?} holds {raw:?}", names[slot])))?;
            cols[slot].push(value);
        }
    }
    Ok(cols)
}

/// One boundary-variation measurement: exact boundary exhaustion while the
/// caps allow it, the two-extreme sampler for the monotone ferromagnetic
/// case, and the candidate-list sampler (a lower bound) otherwise.
pub struct FlucSample {
    pub value: f64,
    pub stderr: f64,
    pub method: &'static str,
    pub lower_bound_only: bool,
}

pub fn fluc_sample(
    spec: &ModelSpec,
    region: &Region,
    eta: &DisorderField,
    weight: Option<&WeightFunction>,
    caps: &ExactCaps,
    opts: &McmcOptions,
    n_random: usize,
    seed: u64,
) -> Result<FlucSample> {
    if spec.num_states().is_some() {
        let mode = match weight {
            Some(w) => FlucMode::Weighted(w),
            None => FlucMode::FullSup,
        };
        match exact_fluc(spec, region, eta, &mode, caps, true) {
            Ok(o) => {
                return Ok(FlucSample {
                    value: o.value,
                    stderr: 0.0,
                    method: "exact",
                    lower_bound_only: false,
                })
            }
            Err(Error::CapExceeded(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if weight.is_none() {
        if let ModelVariant::Rfim { coupling, .. } = &spec.variant {
            if *coupling >= 0.0 {
                let est = mcmc::mcmc_fluc_ferro_ising(spec, region, eta, opts, seed)?;
                return Ok(FlucSample {
                    value: est.value,
                    stderr: est.stderr,
                    method: "extreme-sampled",
                    lower_bound_only: est.lower_bound_only,
                });
            }
        }
    }
    let cands = mcmc::default_candidate_boundaries(spec, region, n_random, seed)?;
    let est = match weight {
        Some(w) => mcmc::mcmc_weighted_fluc_candidates(spec, region, eta, w, &cands, opts, seed)?,
        None => mcmc::mcmc_fluc_candidates(spec, region, eta, &cands, opts, seed)?,
    };
    Ok(FlucSample {
        value: est.value,
        stderr: est.stderr,
        method: "candidate-sampled",
        lower_bound_only: est.lower_bound_only,
    })
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Dispatch on the config's experiment name. The config is validated first,
/// so an invalid one never reaches an experiment body.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    match cfg.kind()? {
        ExperimentKind::FlucDecay => run_fluc_decay(cfg),
        ExperimentKind::WeightedFluc => run_weighted_fluc(cfg),
        ExperimentKind::MagDecay => run_magnetization_decay(cfg),
        ExperimentKind::MwGap => run_mw_gap(cfg),
        ExperimentKind::StabilitySuite => run_stability_suite(cfg),
        ExperimentKind::PartitionScan => run_partition_scan(cfg),
        ExperimentKind::ModelFacts => run_model_facts(cfg),
        ExperimentKind::Alpha => run_alpha_estimate(cfg),
    }
}

fn run_fluc_like(cfg: &ExperimentConfig, weighted: bool) -> Result<ExperimentOutput> {
    let spec = &cfg.model;
    let d = spec.d as usize;
    let caps = cfg.caps();
    let opts = cfg.mcmc_opts();
    let value_col = if weighted { "weighted_fluc" } else { "fluc" };
    let stem = if weighted { "weighted_fluc" } else { "fluc_decay" };
    let mut rows = Csv::new(&format!("l,replica,{value_col},stderr,method,lower_bound_only"));
    let mut summary = Csv::new("l,replicas,median,q1,q3");
    let mut medians = Vec::new();
    for (li, &l) in cfg.l_list.iter().enumerate() {
        let region = side_box(l, d)?.region();
        let weight = match (weighted, &cfg.params.weight) {
            (true, Some(rule)) => Some(rule.instantiate(&region, spec.m())?),
            (true, None) => unreachable!("validation requires a weight rule"),
            (false, _) => None,
        };
        let samples: Vec<FlucSample> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let seed = replica_seed(cfg.seed, li, r);
                let eta = DisorderField::sample(seed, region.clone(), spec.m());
                fluc_sample(spec, &region, &eta, weight.as_ref(), &caps, &opts, cfg.n_random(), seed)
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, s) in samples.iter().enumerate() {
            rows.row(format_args!(
                "{l},{r},{},{},{},{}",
                s.value, s.stderr, s.method, s.lower_bound_only
            ));
        }
        let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let (median, q1, q3) = stats::median_iqr(&values);
        summary.row(format_args!("{l},{},{median},{q1},{q3}", cfg.replicas));
        medians.push((l as f64, median, (q3 - q1) / 2.0));
    }
    let summary_csv = summary.finish();
    let plot = plot_summary(
        &summary_csv,
        "l",
        "median",
        Some(("q1", "q3")),
        &format!("{value_col} vs box side"),
    )?;
    let notes = vec![format!(
        "medians by side: {}",
        medians.iter().map(|(l, m, _)| format!("{l}:{m:.6}")).collect::<Vec<_>>().join(" ")
    )];
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![
            Table { name: stem.into(), csv: rows.finish() },
            Table { name: format!("{stem}_summary"), csv: summary_csv },
        ],
        plots: vec![Plot { name: stem.into(), svg: plot }],
        notes,
    })
}

pub fn run_fluc_decay(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_fluc_like(cfg, false)
}

pub fn run_weighted_fluc(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_fluc_like(cfg, true)
}

fn single_boundary(
    spec: &ModelSpec,
    bbox: &BoxRegion,
    kind: BoundaryKind,
) -> Result<Boundary> {
    Ok(match kind {
        BoundaryKind::Periodic => Boundary::Periodic(*bbox),
        BoundaryKind::Free => Boundary::Free,
        BoundaryKind::FixedUniform => {
            let shell = crate::exact::interaction_shell(&bbox.region(), spec.d as usize)?;
            if spec.num_states().is_some() {
                Boundary::Fixed(SpinConfig::uniform_discrete(shell, 0))
            } else {
                let mut e0 = vec![0.0; spec.spin_dim()];
                e0[0] = 1.0;
                Boundary::Fixed(SpinConfig::uniform_continuous(shell, &e0)?)
            }
        }
    })
}

pub fn run_magnetization_decay(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let spec = &cfg.model;
    let d = spec.d as usize;
    let m = spec.m();
    let caps = cfg.caps();
    let opts = cfg.mcmc_opts();
    let bkind = cfg.params.boundary.unwrap_or_default();
    let mut rows = Csv::new("l,replica,component,value,method");
    let mut summary = Csv::new("l,replicas,component,mean,stderr,hoeffding_half");
    let mut norm_means = Vec::new();
    for (li, &l) in cfg.l_list.iter().enumerate() {
        let bbox = side_box(l, d)?;
        let region = bbox.region();
        let boundary = single_boundary(spec, &bbox, bkind)?;
        let sites = region.len() as f64;
        let exact_feasible = spec
            .num_states()
            .is_some_and(|s| (s as f64).powf(sites) <= caps.max_states as f64);
        let reps: Vec<(Vec<f64>, &'static str)> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let seed = replica_seed(cfg.seed, li, r);
                let eta = DisorderField::sample(seed, region.clone(), m);
                if exact_feasible {
                    let stats = exact_gibbs(spec, &region, &boundary, &eta, &caps)?;
                    Ok((stats.avg_obs, "exact"))
                } else {
                    let est =
                        mcmc::sample(spec, &region, &boundary, &eta, &[Tracked::AvgObs], &opts, seed)?;
                    Ok((est.mean, "sampled"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for (r, (avg, method)) in reps.iter().enumerate() {
            for (i, x) in avg.iter().enumerate() {
                rows.row(format_args!("{l},{r},{i},{x},{method}"));
            }
            let norm = avg.iter().map(|x| x * x).sum::<f64>().sqrt();
            rows.row(format_args!("{l},{r},norm,{norm},{method}"));
        }
        for i in 0..m {
            let comp: Vec<f64> = reps.iter().map(|(avg, _)| avg[i]).collect();
            let (mean, se) = stats::mean_stderr(&comp);
            let hoeff = stats::hoeffding_half_width(comp.len() as u64, 2.0, 0.05);
            summary.row(format_args!("{l},{},{i},{mean},{se},{hoeff}", cfg.replicas));
        }
        let norms: Vec<f64> = reps
            .iter()
            .map(|(avg, _)| avg.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let (mean, se) = stats::mean_stderr(&norms);
        let hoeff = stats::hoeffding_half_width(norms.len() as u64, (m as f64).sqrt(), 0.05);
        summary.row(format_args!("{l},{},norm,{mean},{se},{hoeff}", cfg.replicas));
        norm_means.push((l as f64, mean, se));
    }
    let mut notes = Vec::new();
    if norm_means.len() >= 2 && norm_means.iter().all(|&(_, m, _)| m > 0.0) {
        let xs: Vec<f64> = norm_means.iter().map(|&(l, _, _)| l.ln()).collect();
        let ys: Vec<f64> = norm_means.iter().map(|&(_, m, _)| m.ln()).collect();
        let (slope, _) = stats::linear_fit(&xs, &ys);
        let target = -(4.0 - d as f64) / 2.0;
        notes.push(format!(
            "fitted magnitude exponent {slope:.4} (crossover target {target:.1}); descriptive only"
        ));
    }
    let summary_csv = summary.finish();
    let plot = plot_norm_rows(&summary_csv, "disorder-averaged magnetization magnitude")?;
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![
            Table { name: "mag_decay".into(), csv: rows.finish() },
            Table { name: "mag_decay_summary".into(), csv: summary_csv },
        ],
        plots: vec![Plot { name: "mag_decay".into(), svg: plot }],
        notes,
    })
}

pub fn run_mw_gap(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let spec = &cfg.model;
    let ell = cfg.params.ell.expect("validated");
    let caps = cfg.caps();
    let (n_states, h) = match &spec.variant {
        ModelVariant::ClockOn2 { n_states, h, .. } => (*n_states, *h),
        _ => unreachable!("validated"),
    };
    let h_norm = h[0].hypot(h[1]);
    let inner = BoxRegion::even_box(ell / 2, 1)?;
    let mut table = Csv::new("d,l,ell,n_states,h_norm,gap,stderr,budget_density,replicas");
    for (li, &l) in cfg.l_list.iter().enumerate() {
        let outer = BoxRegion::even_box(l / 2, 1)?;
        let report = spinwave::mw_fe_gap(
            spec,
            Some(&inner),
            &outer,
            &Boundary::Periodic(outer),
            cfg.replicas,
            &caps,
            replica_seed(cfg.seed, li, 0),
        )?;
        table.row(format_args!(
            "{},{l},{ell},{n_states},{h_norm},{},{},{},{}",
            spec.d, report.estimate, report.stderr, report.budget_density, report.replicas
        ));
    }
    let csv = table.finish();
    let cols = csv_columns(&csv, &["l", "gap", "stderr", "budget_density"])?;
    let series = vec![
        Series {
            label: "measured gap".into(),
            points: cols[0].iter().zip(&cols[1]).map(|(&x, &y)| (x, y)).collect(),
            err: cols[2].clone(),
        },
        Series {
            label: "budget".into(),
            points: cols[0].iter().zip(&cols[3]).map(|(&x, &y)| (x, y)).collect(),
            err: Vec::new(),
        },
    ];
    let plot = line_plot_svg("flip free-energy gap vs budget", "chain length", "per-site gap", &series);
    let notes = vec![format!(
        "all gaps within 4 stderr of zero and below budget: {}",
        cols[1]
            .iter()
            .zip(&cols[2])
            .zip(&cols[3])
            .all(|((&g, &se), &b)| g <= b + 4.0 * se)
    )];
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![Table { name: "mw_gap".into(), csv }],
        plots: vec![Plot { name: "mw_gap".into(), svg: plot }],
        notes,
    })
}

pub fn run_stability_suite(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    use rand::SeedableRng;
    let cases = cfg.params.cases.unwrap_or(100);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let grid: [(f64, f64); 4] = [(0.1, 0.01), (0.25, 0.1), (0.5, 0.05), (1.0, 0.1)];
    let lambdas = [0.5, 1.0, 2.0];
    let mut stab = Csv::new("case,lambda,delta,r,leb_outer,cover_bound,witnesses,witness_inside");
    for case in 0..cases {
        let lambda = lambdas[case as usize % lambdas.len()];
        let g = random_pl_convex(&mut rng, lambda, 6, 3.0);
        let lam_g = g.lipschitz();
        for &(delta, r) in &grid {
            let outer = stab_outer(&g, delta, r);
            let leb = outer.lebesgue();
            let bound = (4.0 * lam_g / delta).floor() * 16.0 * r / delta;
            if leb > bound + 1e-9 {
                return Err(Error::NumericCheck(format!(
                    "outer set measure {leb} exceeds the covering bound {bound}"
                )));
            }
            let mut probes: Vec<f64> = g.breakpoints().to_vec();
            for i in 0..=40 {
                probes.push(-3.5 + 7.0 * i as f64 / 40.0);
            }
            let mut witnesses = 0u32;
            let mut inside = true;
            for &t in &probes {
                if stab_witness(&g, t, delta, r).is_some() {
                    witnesses += 1;
                    if !outer.contains(t) {
                        inside = false;
                    }
                }
            }
            if !inside {
                return Err(Error::NumericCheck(
                    "witnessed unstable point escaped the outer set".into(),
                ));
            }
            stab.row(format_args!(
                "{case},{lam_g},{delta},{r},{leb},{bound},{witnesses},{inside}"
            ));
        }
    }
    let mut vari = Csv::new("case,kind,delta,value,bound,ok");
    for case in 0..cases {
        let g = random_admissible_step(&mut rng, 8, 3.0);
        let integral = class_g_gaussian_bound(&g)?;
        let ok = integral.abs() <= 2.0 + 1e-9;
        if !ok {
            return Err(Error::NumericCheck(format!(
                "oscillation-class Gaussian integral {integral} exceeds 2"
            )));
        }
        vari.row(format_args!("{case},class_g,,{integral},2,{ok}"));
        let gf = random_admissible_step_floor(&mut rng, 8, 3.0);
        for delta in [0.1, 0.5, 1.0] {
            let (mass, floor) = sublevel_gaussian_lower(&gf, delta)?;
            let ok = mass >= floor - 1e-9;
            if !ok {
                return Err(Error::NumericCheck(format!(
                    "sublevel Gaussian mass {mass} fell under its floor {floor}"
                )));
            }
            vari.row(format_args!("{case},sublevel,{delta},{mass},{floor},{ok}"));
        }
    }
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![
            Table { name: "stability".into(), csv: stab.finish() },
            Table { name: "variational".into(), csv: vari.finish() },
        ],
        plots: Vec::new(),
        notes: vec![format!("{cases} cases, zero violations")],
    })
}

pub fn run_partition_scan(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let criterion = cfg.partition_criterion()?;
    let k = cfg.params.branching.unwrap_or(2);
    let opt = PartitionOptions {
        caps: cfg.caps(),
        mcmc: cfg.mcmc_opts(),
        seed: cfg.seed,
        allow_mcmc_fallback: true,
        n_random_candidates: cfg.n_random(),
    };
    let scan =
        uncovered_probability_scan(&cfg.l_list, k, &criterion, &cfg.model, cfg.replicas, &opt)?;
    let csv = scan.to_csv();
    let cols = csv_columns(&csv, &["l_half", "p_hat", "wilson_lo", "wilson_hi"])?;
    let points: Vec<(f64, f64)> = cols[0].iter().zip(&cols[1]).map(|(&x, &y)| (x, y)).collect();
    let err: Vec<f64> = cols[2]
        .iter()
        .zip(&cols[3])
        .map(|(&lo, &hi)| ((hi - lo) / 2.0).max(0.0))
        .collect();
    let plot = line_plot_svg(
        "uncovered probability vs box half extent",
        "half extent",
        "p(uncovered)",
        &[Series { label: "p_hat (Wilson band)".into(), points, err }],
    );
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![Table { name: "partition_scan".into(), csv }],
        plots: vec![Plot { name: "partition_scan".into(), svg: plot }],
        notes: vec![
            format!("log-size trend slope {:.6}", scan.trend_slope),
            format!("nonincreasing within confidence bands: {}", scan.nonincreasing_within_bands),
        ],
    })
}

pub fn run_model_facts(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let spec = &cfg.model;
    let d = spec.d as usize;
    let caps = cfg.caps();
    let mut rows = Csv::new("l,replica,fact,component,value");
    let mut summary = Csv::new("l,replicas,fact,component,estimate,stderr,hoeffding_half,target,gated");
    let mut notes = Vec::new();
    match &spec.variant {
        ModelVariant::Potts { q, h } => {
            let q = *q as usize;
            let symmetric = h.iter().all(|&x| x == 0.0);
            let target = 1.0 / q as f64;
            for (li, &l) in cfg.l_list.iter().enumerate() {
                let bbox = side_box(l, d)?;
                let region = bbox.region();
                let freqs: Vec<Vec<f64>> = (0..cfg.replicas)
                    .into_par_iter()
                    .map(|r| {
                        let eta = DisorderField::sample(
                            replica_seed(cfg.seed, li, r),
                            region.clone(),
                            spec.m(),
                        );
                        Ok(exact_gibbs(spec, &region, &Boundary::Periodic(bbox), &eta, &caps)?
                            .avg_obs)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (r, f) in freqs.iter().enumerate() {
                    for (i, x) in f.iter().enumerate() {
                        rows.row(format_args!("{l},{r},color_frequency,{i},{x}"));
                    }
                }
                for i in 0..q {
                    let comp: Vec<f64> = freqs.iter().map(|f| f[i]).collect();
                    let (mean, se) = stats::mean_stderr(&comp);
                    let hoeff = stats::hoeffding_half_width(comp.len() as u64, 1.0, 0.05);
                    if symmetric && (mean - target).abs() > 4.0 * se {
                        return Err(Error::NumericCheck(format!(
                            "color {i} frequency {mean} strays from {target} beyond 4 x {se}"
                        )));
                    }
                    summary.row(format_args!(
                        "{l},{},color_frequency,{i},{mean},{se},{hoeff},{target},{symmetric}",
                        cfg.replicas
                    ));
                }
                if !symmetric {
                    let favored =
                        h.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i);
                    if let Some(i) = favored {
                        let comp: Vec<f64> = freqs.iter().map(|f| f[i]).collect();
                        let (mean, _) = stats::mean_stderr(&comp);
                        notes.push(format!(
                            "field-favored color {i} frequency {mean:.4} vs symmetric {target:.4}"
                        ));
                    }
                }
            }
            if symmetric {
                notes.push(format!("all color frequencies within 4 stderr of {target}"));
            }
        }
        ModelVariant::Ea { h } => {
            let symmetric = *h == 0.0;
            for (li, &l) in cfg.l_list.iter().enumerate() {
                if l < 2 {
                    return Err(Error::config("edge statistics need side at least 2"));
                }
                let bbox = side_box(l, d)?;
                let region = bbox.region();
                let densities: Vec<f64> = (0..cfg.replicas)
                    .into_par_iter()
                    .map(|r| {
                        let eta = DisorderField::sample(
                            replica_seed(cfg.seed, li, r),
                            region.clone(),
                            spec.m(),
                        );
                        let (sigma, _) =
                            enumerate_ground_state(spec, &region, &Boundary::Free, &eta, &caps)?;
                        agreement_density(&region, &sigma, d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                for (r, x) in densities.iter().enumerate() {
                    rows.row(format_args!("{l},{r},agreement_density,0,{x}"));
                }
                let (mean, se) = stats::mean_stderr(&densities);
                let hoeff = stats::hoeffding_half_width(densities.len() as u64, 1.0, 0.05);
                if symmetric && (mean - 0.5).abs() > 4.0 * se {
                    return Err(Error::NumericCheck(format!(
                        "ground-state agreement density {mean} strays from 1/2 beyond 4 x {se}"
                    )));
                }
                summary.row(format_args!(
                    "{l},{},agreement_density,0,{mean},{se},{hoeff},0.5,{symmetric}",
                    cfg.replicas
                ));
            }
            if symmetric {
                notes.push("ground-state agreement density within 4 stderr of 1/2".into());
            }
        }
        _ => unreachable!("validated"),
    }
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![
            Table { name: "model_facts".into(), csv: rows.finish() },
            Table { name: "model_facts_summary".into(), csv: summary.finish() },
        ],
        plots: Vec::new(),
        notes,
    })
}

pub fn run_alpha_estimate(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let spec = &cfg.model;
    let d = spec.d as usize;
    let m = spec.m();
    let caps = cfg.caps();
    let mut table = Csv::new(
        "l,component,alpha_hat,width,sup_mean,sup_stderr,inf_mean,inf_stderr,replicas",
    );
    let mut notes = Vec::new();
    let mut last_widths: Option<(i64, f64)> = None;
    for (li, &l) in cfg.l_list.iter().enumerate() {
        let region = side_box(l, d)?.region();
        let envelopes: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let seed = replica_seed(cfg.seed, li, r);
                let eta = DisorderField::sample(seed, region.clone(), m);
                let cands = mcmc::default_candidate_boundaries(spec, &region, cfg.n_random(), seed)?;
                let mut sup = vec![f64::NEG_INFINITY; m];
                let mut inf = vec![f64::INFINITY; m];
                for b in &cands {
                    let avg = exact_gibbs(spec, &region, b, &eta, &caps)?.avg_obs;
                    for i in 0..m {
                        sup[i] = sup[i].max(avg[i]);
                        inf[i] = inf[i].min(avg[i]);
                    }
                }
                Ok((sup, inf))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut max_width = 0.0f64;
        let mut alpha = Vec::with_capacity(m);
        for i in 0..m {
            let sups: Vec<f64> = envelopes.iter().map(|(s, _)| s[i]).collect();
            let infs: Vec<f64> = envelopes.iter().map(|(_, f)| f[i]).collect();
            let (sup_mean, sup_se) = stats::mean_stderr(&sups);
            let (inf_mean, inf_se) = stats::mean_stderr(&infs);
            let hat = (sup_mean + inf_mean) / 2.0;
            let width = sup_mean - inf_mean;
            alpha.push(hat);
            max_width = max_width.max(width);
            table.row(format_args!(
                "{l},{i},{hat},{width},{sup_mean},{sup_se},{inf_mean},{inf_se},{}",
                cfg.replicas
            ));
        }
        notes.push(format!(
            "side {l}: estimate ({}) sandwich width {max_width:.6}",
            alpha.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(", ")
        ));
        last_widths = Some((l, max_width));
    }
    if let Some((l, w)) = last_widths {
        notes.push(format!("tightest bracket at side {l}: width {w:.6}"));
    }
    Ok(ExperimentOutput {
        experiment: cfg.experiment.clone(),
        tables: vec![Table { name: "alpha".into(), csv: table.finish() }],
        plots: Vec::new(),
        notes,
    })
}

// ---------------------------------------------------------------------------
// SVG plotting
// ---------------------------------------------------------------------------

/// One plotted series: points in data coordinates with optional symmetric
/// error bars (empty for none).
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub err: Vec<f64>,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = first;
    while t <= hi + step * 1e-9 {
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if a >= 0.01 && a < 10000.0 {
        let s = format!("{x:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{x:.2e}")
    }
}

/// Render series as a static SVG line chart with markers, error bars, and a
/// legend. Output is deterministic in the input.
pub fn line_plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (72.0, 18.0, 42.0, 52.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let e = s.err.get(i).copied().unwrap_or(0.0);
            xs.push(x);
            ys.push(y - e);
            ys.push(y + e);
        }
    }
    let (x_lo, x_hi) = match (xs.iter().cloned().reduce(f64::min), xs.iter().cloned().reduce(f64::max)) {
        (Some(a), Some(b)) if b > a => (a, b),
        (Some(a), _) => (a - 1.0, a + 1.0),
        _ => (0.0, 1.0),
    };
    let (y_lo, y_hi) = match (ys.iter().cloned().reduce(f64::min), ys.iter().cloned().reduce(f64::max)) {
        (Some(a), Some(b)) if b > a => (a - 0.05 * (b - a), b + 0.05 * (b - a)),
        (Some(a), _) => (a - 1.0, a + 1.0),
        _ => (0.0, 1.0),
    };
    let px = |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| mt + ph - (y - y_lo) / (y_hi - y_lo) * ph;
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        w / 2.0
    );
    for t in nice_ticks(x_lo, x_hi) {
        let x = px(t);
        let _ = write!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{mt}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            mt + ph,
            mt + ph + 18.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(y_lo, y_hi) {
        let y = py(t);
        let _ = write!(
            svg,
            "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            ml + pw,
            ml - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = write!(
        svg,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333333\"/>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xlabel}</text>\n\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{ylabel}</text>\n",
        ml + pw / 2.0,
        h - 12.0,
        mt + ph / 2.0,
        mt + ph / 2.0
    );
    for (si, s) in series.iter().enumerate() {
        let color = palette[si % palette.len()];
        if s.points.len() > 1 {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
                .collect();
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.join(" ")
            );
        }
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let e = s.err.get(i).copied().unwrap_or(0.0);
            if e > 0.0 {
                let _ = write!(
                    svg,
                    "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"{color}\"/>\n",
                    px(x),
                    py(y - e),
                    py(y + e)
                );
            }
            let _ = write!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            );
        }
        let ly = mt + 14.0 + 16.0 * si as f64;
        let _ = write!(
            svg,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            ml + pw - 130.0,
            ly - 4.0,
            ml + pw - 122.0,
            ly,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Plot a summary table's center column against `x`, with an optional band
/// taken from a pair of quantile columns.
fn plot_summary(
    csv: &str,
    x: &str,
    y: &str,
    band: Option<(&str, &str)>,
    title: &str,
) -> Result<String> {
    let mut names = vec![x, y];
    if let Some((lo, hi)) = band {
        names.push(lo);
        names.push(hi);
    }
    let cols = csv_columns(csv, &names)?;
    let points: Vec<(f64, f64)> = cols[0].iter().zip(&cols[1]).map(|(&a, &b)| (a, b)).collect();
    let err = if band.is_some() {
        cols[2].iter().zip(&cols[3]).map(|(&lo, &hi)| ((hi - lo) / 2.0).max(0.0)).collect()
    } else {
        Vec::new()
    };
    Ok(line_plot_svg(title, x, y, &[Series { label: y.into(), points, err }]))
}

/// Plot the `norm` rows of a long-format magnetization summary.
fn plot_norm_rows(csv: &str, title: &str) -> Result<String> {
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ci, li, mi, si) = match (col("component"), col("l"), col("mean"), col("stderr")) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(Error::config("summary table is missing expected columns")),
    };
    let mut points = Vec::new();
    let mut err = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.get(ci) == Some("norm") {
            let x: f64 = record.get(li).unwrap_or("").parse().map_err(|_| {
                Error::config("summary row holds a non-numeric box side")
            })?;
            let y: f64 = record.get(mi).unwrap_or("").parse().map_err(|_| {
                Error::config("summary row holds a non-numeric mean")
            })?;
            let e: f64 = record.get(si).unwrap_or("").parse().unwrap_or(0.0);
            points.push((x, y));
            err.push(e);
        }
    }
    Ok(line_plot_svg(title, "box side", "mean magnitude", &[Series {
        label: "|avg obs|".into(),
        points,
        err,
    }]))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PairPotential;
    use tempfile::tempdir;

    fn rfim_config(l_list: Vec<i64>, replicas: u32, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            experiment: "fluc-decay".into(),
            model: ModelSpec::new(
                ModelVariant::Rfim { h: 0.0, coupling: 1.0 },
                2,
                1.0,
                1.0,
            )
            .unwrap(),
            l_list,
            replicas,
            seed,
            params: ExperimentParams::default(),
            out_dir: None,
        }
    }

    fn clock_config(l_list: Vec<i64>, replicas: u32) -> ExperimentConfig {
        ExperimentConfig {
            experiment: "mag-decay".into(),
            model: ModelSpec::new(
                ModelVariant::ClockOn2 {
                    n_states: 4,
                    h: [0.0, 0.0],
                    psi: PairPotential::NegDot,
                },
                1,
                0.7,
                1.0,
            )
            .unwrap(),
            l_list,
            replicas,
            seed: 9,
            params: ExperimentParams::default(),
            out_dir: None,
        }
    }

    #[test]
    fn config_validation_rejects_malformed_inputs() {
        let mut cfg = rfim_config(vec![2], 5, 1);
        cfg.experiment = "make-coffee".into();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let cfg = rfim_config(vec![], 5, 1);
        assert!(cfg.validate().is_err());

        let mut cfg = clock_config(vec![4], 40);
        cfg.model = ModelSpec::new(
            ModelVariant::ClockOn2 { n_states: 4, h: [0.3, 0.0], psi: PairPotential::NegDot },
            1,
            0.7,
            1.0,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(matches!(err, Error::Config(_)), "field cap: {err}");

        let mut cfg = clock_config(vec![4], 10);
        cfg.experiment = "mag-decay".into();
        assert!(cfg.validate().is_err(), "thin replica sets must be rejected");

        let toml_text = "experiment = \"fluc-decay\"\nl_list = [2]\nreplicas = 5\nseed = 1\nfrobnicate = 3\n\n[model]\nd = 2\nbeta = 1.0\nlambda = 1.0\n\n[model.variant.Rfim]\nh = 0.0\ncoupling = 1.0\n";
        let parsed: std::result::Result<ExperimentConfig, _> = toml::from_str(toml_text);
        assert!(parsed.is_err(), "unknown keys must be rejected");
    }

    #[test]
    fn manifests_and_config_files_round_trip() {
        let dir = tempdir().unwrap();
        let cfg = rfim_config(vec![2, 3], 4, 17);
        let manifest = manifest_json(&cfg).unwrap();
        let back = load_manifest(&manifest).unwrap();
        assert_eq!(manifest_json(&back).unwrap(), manifest);

        let toml_path = dir.path().join("run.toml");
        fs::write(&toml_path, toml::to_string(&cfg).unwrap()).unwrap();
        let from_toml = load_config(&toml_path).unwrap();
        assert_eq!(manifest_json(&from_toml).unwrap(), manifest);

        let json_path = dir.path().join("run.json");
        fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        let from_json = load_config(&json_path).unwrap();
        assert_eq!(manifest_json(&from_json).unwrap(), manifest);

        let bad = dir.path().join("run.yaml");
        fs::write(&bad, "x").unwrap();
        assert!(load_config(&bad).is_err());
    }

    #[test]
    fn reruns_reproduce_every_byte() {
        let cfg = rfim_config(vec![2, 3], 6, 23);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let replayed = load_manifest(&manifest_json(&cfg).unwrap()).unwrap();
        let c = run_experiment(&replayed).unwrap();
        assert_eq!(a.tables, c.tables);

        let dir = tempdir().unwrap();
        let paths = write_outputs(&cfg, &a, dir.path()).unwrap();
        assert!(paths.iter().any(|p| p.ends_with("manifest.json")));
        assert!(paths.iter().any(|p| p.ends_with("fluc_decay.csv")));
        assert!(paths.iter().any(|p| p.ends_with("fluc_decay.svg")));
        let manifest_text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert_eq!(manifest_json(&cfg).unwrap(), manifest_text);
    }

    #[test]
    fn unit_weight_matches_the_plain_functional_on_shared_seeds() {
        let mut plain = rfim_config(vec![2], 8, 5);
        let mut weighted = plain.clone();
        weighted.experiment = "weighted-fluc".into();
        weighted.params.weight = Some(WeightRule::Constant(1.0));
        plain.l_list = vec![2];
        let a = run_experiment(&plain).unwrap();
        let b = run_experiment(&weighted).unwrap();
        let av = csv_columns(&a.tables[0].csv, &["fluc"]).unwrap();
        let bv = csv_columns(&b.tables[0].csv, &["weighted_fluc"]).unwrap();
        assert_eq!(av[0].len(), bv[0].len());
        for (x, y) in av[0].iter().zip(&bv[0]) {
            assert!((x - y).abs() < 1e-12, "unit weight drifted: {x} vs {y}");
        }
    }

    #[test]
    fn zero_weight_zeroes_the_functional() {
        let mut cfg = rfim_config(vec![2, 3], 5, 5);
        cfg.experiment = "weighted-fluc".into();
        cfg.params.weight = Some(WeightRule::Constant(0.0));
        let out = run_experiment(&cfg).unwrap();
        let vals = csv_columns(&out.tables[0].csv, &["weighted_fluc"]).unwrap();
        assert!(vals[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_weight_escapes_the_plain_cap_but_not_cauchy_schwarz() {
        // staggered base ordering: the constant-boundary variation is tiny
        // while the staggered weight sees a large swing, so no pointwise
        // domination by the unweighted value holds
        let mut anti = rfim_config(vec![2], 30, 3);
        anti.model =
            ModelSpec::new(ModelVariant::Rfim { h: 0.0, coupling: -1.0 }, 2, 1.0, 1.0).unwrap();
        let mut weighted = anti.clone();
        weighted.experiment = "weighted-fluc".into();
        weighted.params.weight = Some(WeightRule::Checkerboard);
        let a = run_experiment(&anti).unwrap();
        let b = run_experiment(&weighted).unwrap();
        let plain = csv_columns(&a.tables[0].csv, &["fluc"]).unwrap();
        let wtd = csv_columns(&b.tables[0].csv, &["weighted_fluc"]).unwrap();
        let beats = plain[0].iter().zip(&wtd[0]).filter(|(p, w)| **w > **p + 1e-10).count();
        assert!(beats > 0, "expected the staggered weight to beat the plain value somewhere");
        // mean-square cap: |weighted| <= 2 sqrt(avg w^2), here exactly 2
        assert!(wtd[0].iter().all(|&w| w.abs() <= 2.0 + 1e-10));

        // a shrunken constant weight shrinks the cap proportionally
        let mut half = anti.clone();
        half.experiment = "weighted-fluc".into();
        half.params.weight = Some(WeightRule::Constant(0.5));
        let c = run_experiment(&half).unwrap();
        let hv = csv_columns(&c.tables[0].csv, &["weighted_fluc"]).unwrap();
        assert!(hv[0].iter().all(|&w| w.abs() <= 2.0 * 0.5 + 1e-10));
    }

    #[test]
    fn temperature_limits_bracket_the_functional() {
        let mut cold = rfim_config(vec![2], 5, 11);
        cold.model =
            ModelSpec::new(ModelVariant::Rfim { h: 0.0, coupling: 1.0 }, 2, 4.0, 0.0).unwrap();
        let out = run_experiment(&cold).unwrap();
        let vals = csv_columns(&out.tables[0].csv, &["fluc"]).unwrap();
        assert!(
            vals[0].iter().all(|&v| v > 1.5),
            "boundary-dominated cold runs should sit near the maximum: {:?}",
            vals[0]
        );

        let mut hot = rfim_config(vec![2], 5, 11);
        hot.model =
            ModelSpec::new(ModelVariant::Rfim { h: 0.0, coupling: 1.0 }, 2, 1e-8, 1.0).unwrap();
        let out = run_experiment(&hot).unwrap();
        let vals = csv_columns(&out.tables[0].csv, &["fluc"]).unwrap();
        assert!(vals[0].iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn zero_field_magnetization_components_stay_within_their_bars() {
        let cfg = clock_config(vec![4], 40);
        let out = run_experiment(&cfg).unwrap();
        let summary = &out.tables[1].csv;
        let mut reader = csv::Reader::from_reader(summary.as_bytes());
        let headers = reader.headers().unwrap().clone();
        let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
        let (ci, mi, si, hi) = (col("component"), col("mean"), col("stderr"), col("hoeffding_half"));
        let mut saw_component_row = false;
        for record in reader.records() {
            let record = record.unwrap();
            if record.get(ci) != Some("norm") {
                saw_component_row = true;
                let mean: f64 = record.get(mi).unwrap().parse().unwrap();
                let se: f64 = record.get(si).unwrap().parse().unwrap();
                let hoeff: f64 = record.get(hi).unwrap().parse().unwrap();
                assert!(mean.abs() <= 4.0 * se + 1e-12, "component mean {mean} vs stderr {se}");
                assert!(hoeff > 0.0);
            }
        }
        assert!(saw_component_row);
    }

    #[test]
    fn boundary_driven_ordering_saturates_the_magnitude() {
        let mut cfg = clock_config(vec![4], 30);
        cfg.model = ModelSpec::new(
            ModelVariant::ClockOn2 { n_states: 4, h: [0.0, 0.0], psi: PairPotential::NegDot },
            1,
            4.0,
            0.05,
        )
        .unwrap();
        cfg.params.boundary = Some(BoundaryKind::FixedUniform);
        let out = run_experiment(&cfg).unwrap();
        let mut reader = csv::Reader::from_reader(out.tables[1].csv.as_bytes());
        let headers = reader.headers().unwrap().clone();
        let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
        let (ci, mi) = (col("component"), col("mean"));
        for record in reader.records() {
            let record = record.unwrap();
            if record.get(ci) == Some("norm") {
                let mean: f64 = record.get(mi).unwrap().parse().unwrap();
                assert!(mean > 0.8, "weakly disordered aligned chain should order: {mean}");
            }
        }
    }

    #[test]
    fn gap_run_reproduces_the_library_routine() {
        let mut cfg = clock_config(vec![16], 30);
        cfg.experiment = "mw-gap".into();
        cfg.model = ModelSpec::new(
            ModelVariant::ClockOn2 { n_states: 8, h: [0.0, 0.0], psi: PairPotential::NegDot },
            1,
            1.0,
            1.0,
        )
        .unwrap();
        cfg.params.ell = Some(4);
        let out = run_experiment(&cfg).unwrap();
        let cols =
            csv_columns(&out.tables[0].csv, &["gap", "stderr", "budget_density"]).unwrap();
        let outer = BoxRegion::even_box(8, 1).unwrap();
        let inner = BoxRegion::even_box(2, 1).unwrap();
        let direct = spinwave::mw_fe_gap(
            &cfg.model,
            Some(&inner),
            &outer,
            &Boundary::Periodic(outer),
            30,
            &ExactCaps::default(),
            replica_seed(cfg.seed, 0, 0),
        )
        .unwrap();
        assert!((cols[0][0] - direct.estimate).abs() < 1e-12);
        assert!((cols[1][0] - direct.stderr).abs() < 1e-12);
        assert!((cols[2][0] - direct.budget_density).abs() < 1e-12);
        assert!(cols[0][0] <= cols[2][0] + 4.0 * cols[1][0]);
    }

    #[test]
    fn stability_suite_reports_no_violations() {
        let mut cfg = rfim_config(vec![2], 30, 77);
        cfg.experiment = "stability-suite".into();
        cfg.params.cases = Some(12);
        let out = run_experiment(&cfg).unwrap();
        let stab = csv_columns(&out.tables[0].csv, &["leb_outer", "cover_bound"]).unwrap();
        assert!(!stab[0].is_empty());
        for (leb, bound) in stab[0].iter().zip(&stab[1]) {
            assert!(leb <= &(bound + 1e-9));
        }
        let vari = csv_columns(&out.tables[1].csv, &["value", "bound"]).unwrap();
        assert!(!vari[0].is_empty());
    }

    #[test]
    fn partition_scan_run_wraps_the_library_scan() {
        let mut cfg = rfim_config(vec![4, 8], 30, 41);
        cfg.experiment = "partition-scan".into();
        cfg.params.criterion = Some("quantile".into());
        cfg.params.delta = Some(2.0);
        let out = run_experiment(&cfg).unwrap();
        let opt = PartitionOptions {
            caps: ExactCaps::default(),
            mcmc: McmcOptions::default(),
            seed: 41,
            allow_mcmc_fallback: true,
            n_random_candidates: 8,
        };
        let criterion = GoodnessCriterion::FieldQuantile { delta: 2.0, component: 0 };
        let scan =
            uncovered_probability_scan(&[4, 8], 2, &criterion, &cfg.model, 30, &opt).unwrap();
        assert_eq!(out.tables[0].csv, scan.to_csv());
    }

    #[test]
    fn model_facts_hit_the_symmetric_targets() {
        let mut potts = rfim_config(vec![2], 60, 13);
        potts.experiment = "model-facts".into();
        potts.model =
            ModelSpec::new(ModelVariant::Potts { q: 3, h: vec![0.0; 3] }, 2, 1.0, 1.0).unwrap();
        let out = run_experiment(&potts).unwrap();
        let cols = csv_columns(&out.tables[1].csv, &["estimate", "stderr", "target"]).unwrap();
        for ((est, se), target) in cols[0].iter().zip(&cols[1]).zip(&cols[2]) {
            assert!((est - target).abs() <= 4.0 * se);
        }

        let mut ea = rfim_config(vec![3], 60, 19);
        ea.experiment = "model-facts".into();
        ea.model = ModelSpec::new(ModelVariant::Ea { h: 0.0 }, 2, 1.0, 1.0).unwrap();
        let out = run_experiment(&ea).unwrap();
        let cols = csv_columns(&out.tables[1].csv, &["estimate", "stderr"]).unwrap();
        assert_eq!(cols[0].len(), 1);
        assert!((cols[0][0] - 0.5).abs() <= 4.0 * cols[1][0]);

        let mut skew = potts.clone();
        skew.model =
            ModelSpec::new(ModelVariant::Potts { q: 3, h: vec![0.8, 0.0, 0.0] }, 2, 1.0, 1.0)
                .unwrap();
        skew.replicas = 30;
        let out = run_experiment(&skew).unwrap();
        let mut reader = csv::Reader::from_reader(out.tables[1].csv.as_bytes());
        let headers = reader.headers().unwrap().clone();
        let col = |n: &str| headers.iter().position(|h| h == n).unwrap();
        let (ci, ei) = (col("component"), col("estimate"));
        for record in reader.records() {
            let record = record.unwrap();
            if record.get(ci) == Some("0") {
                let est: f64 = record.get(ei).unwrap().parse().unwrap();
                assert!(est > 1.0 / 3.0, "favored color should beat the symmetric value: {est}");
            }
        }
    }

    #[test]
    fn alpha_brackets_tighten_and_center_on_symmetry() {
        // strong pinning makes the envelope contraction visible already
        // between sides 2 and 4
        let mut cfg = rfim_config(vec![2, 4], 30, 29);
        cfg.experiment = "alpha".into();
        cfg.model =
            ModelSpec::new(ModelVariant::Rfim { h: 0.0, coupling: 1.0 }, 2, 0.5, 3.0).unwrap();
        let out = run_experiment(&cfg).unwrap();
        let cols = csv_columns(&out.tables[0].csv, &["l", "alpha_hat", "width"]).unwrap();
        assert_eq!(cols[0].len(), 2);
        for (hat, width) in cols[1].iter().zip(&cols[2]) {
            assert!(hat.abs() <= width / 2.0 + 1e-9, "sign symmetry centers the bracket");
            assert!(*width >= 0.0);
        }
        assert!(cols[2][1] < cols[2][0] - 0.1, "bracket should tighten with the box");
    }

    #[test]
    fn interval_constructions_cover_on_synthetic_bounded_data() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        let trials = 400;
        let n = 40u64;
        let mut hoeff_cover = 0u32;
        let mut normal_cover = 0u32;
        for _ in 0..trials {
            let xs: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
                    (2.5 * u).tanh()
                })
                .collect();
            let (mean, se) = stats::mean_stderr(&xs);
            let hoeff = stats::hoeffding_half_width(n, 2.0, 0.05);
            if mean.abs() <= hoeff {
                hoeff_cover += 1;
            }
            if mean.abs() <= 1.96 * se {
                normal_cover += 1;
            }
        }
        let h = hoeff_cover as f64 / trials as f64;
        let z = normal_cover as f64 / trials as f64;
        assert!(h >= 0.97, "distribution-free interval covered only {h}");
        assert!(z >= 0.90, "normal interval covered only {z}");
        assert!(h >= z - 0.02, "the wider interval cannot cover less");
    }

    #[test]
    fn svg_plots_are_wellformed_and_deterministic() {
        let series = vec![Series {
            label: "demo".into(),
            points: vec![(1.0, 0.5), (2.0, 0.25), (4.0, 0.125)],
            err: vec![0.05, 0.02, 0.01],
        }];
        let a = line_plot_svg("demo", "x", "y", &series);
        let b = line_plot_svg("demo", "x", "y", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<circle").count(), 4, "three markers plus the legend dot");
        let empty = line_plot_svg("empty", "x", "y", &[]);
        assert!(empty.contains("</svg>"));
    }
}
