//! TOML scenario files.
//!
//! ```toml
//! dimension = 2
//! desirability = [1.0, 1.0]          # or { desirable = [0], epsilon = 1e-6 }
//! ground_truth = [0.5, 0.5]          # or "fit" / "fit:other.csv"
//!
//! [graph]
//! edges = [[0, 1, 0.5]]
//!
//! [group1]
//! cost = [[1.0, 0.0], [0.0, 1.0]]
//! projector = [[1.0, 0.0], [0.0, 1.0]]   # or projector_source = "svd:5"
//!
//! [group2]
//! cost = [[1.0, 0.0], [0.0, 1.0]]
//! projector = [[1.0, 0.0], [0.0, 0.0]]
//!
//! [fairness]
//! kind = "l1"
//! beta = 0.5
//! ```
//!
//! Optional sections: `[dataset]` (CSV ingestion), `[[splits]]` (one scenario
//! per split), `[sweep]` and `[simulate]`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiments::data::{
    fit_ground_truth, ingest_dataset, split_groups, CmpOp, ColumnSpec, Encoding, Schema, SplitRule, SplitTest,
    TabularDataset,
};
use crate::experiments::sweep::BetaGrid;
use crate::experiments::synth::DEFAULT_EPSILON;
use crate::fairness::{expr::Expr, FairnessKind, FairnessSpec};
use crate::model::{self, CausalGraph, GroupParams, Sampler, Scenario};
use crate::objectives::Objective;

pub const DEFAULT_SVD_RANK: usize = 5;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dimension: usize,
    seed: Option<u64>,
    #[serde(default)]
    graph: RawGraph,
    group1: RawGroup,
    group2: RawGroup,
    desirability: RawDesirability,
    #[serde(default)]
    allow_zero_desirability: bool,
    ground_truth: RawGroundTruth,
    fairness: Option<FairnessConfig>,
    dataset: Option<RawDataset>,
    #[serde(default)]
    splits: Vec<RawSplit>,
    #[serde(default)]
    sweep: SweepConfig,
    #[serde(default)]
    simulate: SimulateConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    #[serde(default)]
    edges: Vec<(usize, usize, f64)>,
    /// Optional node names, for reports only.
    #[serde(default)]
    labels: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroup {
    cost: Rows,
    projector: Option<Rows>,
    projector_source: Option<String>,
    sampler: Option<RawSampler>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    mean: Option<Vec<f64>>,
    factor: Rows,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDesirability {
    Scores(Vec<f64>),
    Indicator {
        desirable: Vec<usize>,
        epsilon: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawGroundTruth {
    Vector(Vec<f64>),
    Fit(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessConfig {
    pub kind: String,
    pub beta: f64,
    #[serde(default = "default_privileged")]
    pub privileged_group: usize,
    /// Custom kind: Δ(w) = wᵀQw − f(w).
    pub q: Option<Rows>,
    pub f: Option<String>,
    pub lipschitz: Option<f64>,
}

fn default_privileged() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawColumn {
    Name(String),
    Spec(ColumnSpec),
}

impl RawColumn {
    fn spec(self) -> ColumnSpec {
        match self {
            RawColumn::Name(name) => ColumnSpec {
                name,
                encoding: Encoding::default(),
            },
            RawColumn::Spec(s) => s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    path: String,
    features: Vec<RawColumn>,
    label: Option<RawColumn>,
    #[serde(default)]
    extra: Vec<RawColumn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    name: String,
    column: Option<String>,
    /// le | lt | ge | gt | in
    rule: Option<String>,
    value: Option<f64>,
    values: Option<Vec<f64>>,
    group1_projector: Option<Rows>,
    group2_projector: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: Option<String>,
    pub objective: Option<String>,
    pub title: Option<String>,
    pub cost_case: Option<String>,
    pub starts: Option<usize>,
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Option<BetaGrid>> {
        self.grid.as_deref().map(str::parse).transpose()
    }

    pub fn objective(&self) -> Result<Option<Objective>> {
        self.objective.as_deref().map(str::parse).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_peers")]
    pub n_per_group: usize,
    #[serde(default)]
    pub noise_sd: f64,
}

fn default_peers() -> usize {
    50
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_per_group: default_peers(),
            noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedScenario {
    pub name: String,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: Option<u64>,
    pub graph: CausalGraph,
    pub node_labels: Vec<String>,
    /// One per split, or a single `default` scenario.
    pub scenarios: Vec<NamedScenario>,
    pub fairness: Option<FairnessConfig>,
    pub sweep: SweepConfig,
    pub simulate: SimulateConfig,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn matrix(name: &str, rows: &Rows, r: usize, c: usize) -> Result<DMatrix<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(cfg_err(format!("{name} must be {r}x{c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(name: &str, xs: &[f64], d: usize) -> Result<DVector<f64>> {
    if xs.len() != d {
        return Err(cfg_err(format!("{name} must have {d} entries, got {}", xs.len())));
    }
    Ok(DVector::from_row_slice(xs))
}

fn parse_svd(src: &str) -> Result<Option<usize>> {
    match src {
        "explicit" => Ok(None),
        s => {
            let k = s
                .strip_prefix("svd:")
                .ok_or_else(|| cfg_err(format!("projector_source '{s}' must be 'explicit' or 'svd:k'")))?;
            let k = if k.is_empty() {
                DEFAULT_SVD_RANK
            } else {
                k.parse().map_err(|_| cfg_err(format!("bad svd rank in '{s}'")))?
            };
            Ok(Some(k))
        }
    }
}

fn split_rule(s: &RawSplit) -> Result<Option<SplitRule>> {
    let Some(column) = &s.column else {
        return Ok(None);
    };
    let rule = s.rule.as_deref().unwrap_or("le");
    let test = if rule == "in" {
        SplitTest::In(
            s.values
                .clone()
                .ok_or_else(|| cfg_err(format!("split '{}': rule 'in' needs values", s.name)))?,
        )
    } else {
        let op: CmpOp = rule.parse().map_err(|_| cfg_err(format!("split '{}': unknown rule '{rule}'", s.name)))?;
        let v = s
            .value
            .ok_or_else(|| cfg_err(format!("split '{}': rule '{rule}' needs value", s.name)))?;
        SplitTest::Cmp(op, v)
    };
    Ok(Some(SplitRule {
        column: column.clone(),
        test,
    }))
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        Config::parse(&text, &base)
    }

    /// Relative dataset paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Config> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| cfg_err(e.message().to_string()))?;
        let d = raw.dimension;
        if d == 0 {
            return Err(cfg_err("dimension must be positive"));
        }
        let graph = CausalGraph::from_triples(d, &raw.graph.edges)?;
        let contribution = model::build_contribution_matrix(&graph)?;

        let desirability = match &raw.desirability {
            RawDesirability::Scores(xs) => vector("desirability", xs, d)?,
            RawDesirability::Indicator { desirable, epsilon } => {
                if let Some(&i) = desirable.iter().find(|&&i| i >= d) {
                    return Err(cfg_err(format!("desirable index {i} out of range")));
                }
                DVector::from_fn(d, |i, _| {
                    if desirable.contains(&i) {
                        1.0
                    } else {
                        epsilon.unwrap_or(DEFAULT_EPSILON)
                    }
                })
            }
        };

        let dataset = match &raw.dataset {
            Some(ds) => {
                let schema = Schema {
                    features: ds.features.iter().map(|c| c.clone().spec()).collect(),
                    label: ds.label.as_ref().map(|c| c.clone().spec()),
                    extra: ds.extra.iter().map(|c| c.clone().spec()).collect(),
                };
                if schema.features.len() != d {
                    return Err(cfg_err(format!(
                        "dataset lists {} features but dimension is {d}",
                        schema.features.len()
                    )));
                }
                let data = ingest_dataset(&base_dir.join(&ds.path), &schema)?;
                Some((schema, data))
            }
            None => None,
        };

        let ground_truth = match &raw.ground_truth {
            RawGroundTruth::Vector(xs) => vector("ground_truth", xs, d)?,
            RawGroundTruth::Fit(src) => {
                let (schema, data) = dataset
                    .as_ref()
                    .ok_or_else(|| cfg_err("ground_truth = \"fit\" needs a [dataset] section"))?;
                let fit_data: TabularDataset = match src.strip_prefix("fit:") {
                    Some(p) => ingest_dataset(&base_dir.join(p), schema)?,
                    None if src == "fit" => data.clone(),
                    None => return Err(cfg_err(format!("ground_truth '{src}' must be a vector, 'fit' or 'fit:<csv>'"))),
                };
                let labels = fit_data
                    .labels
                    .as_ref()
                    .ok_or_else(|| cfg_err("fitting ground truth needs dataset.label"))?;
                fit_ground_truth(&fit_data.features, labels)?
            }
        };

        let groups_raw = [&raw.group1, &raw.group2];
        let mut costs = Vec::new();
        let mut samplers = Vec::new();
        let mut explicit = Vec::new();
        let mut svd = Vec::new();
        for (g, rg) in groups_raw.iter().enumerate() {
            let name = format!("group{}", g + 1);
            costs.push(matrix(&format!("{name}.cost"), &rg.cost, d, d)?);
            samplers.push(match &rg.sampler {
                Some(s) => {
                    let factor = if s.factor.first().map(Vec::len).unwrap_or(0) == 0 {
                        return Err(cfg_err(format!("{name}.sampler.factor is empty")));
                    } else {
                        matrix(&format!("{name}.sampler.factor"), &s.factor, d, s.factor[0].len())?
                    };
                    let mean = match &s.mean {
                        Some(m) => vector(&format!("{name}.sampler.mean"), m, d)?,
                        None => DVector::zeros(d),
                    };
                    Some(Sampler { mean, factor })
                }
                None => None,
            });
            explicit.push(
                rg.projector
                    .as_ref()
                    .map(|p| matrix(&format!("{name}.projector"), p, d, d))
                    .transpose()?,
            );
            let src = rg.projector_source.as_deref().unwrap_or("explicit");
            svd.push(parse_svd(src)?);
        }

        let build = |projectors: [DMatrix<f64>; 2]| -> Scenario {
            let [p1, p2] = projectors;
            let mk = |g: usize, p: DMatrix<f64>| {
                let gp = GroupParams::new(costs[g].clone(), p);
                match &samplers[g] {
                    Some(s) => gp.with_sampler(s.clone()),
                    None => gp,
                }
            };
            Scenario {
                contribution: contribution.clone(),
                groups: [mk(0, p1), mk(1, p2)],
                desirability: desirability.clone(),
                ground_truth: ground_truth.clone(),
                allow_zero_desirability: raw.allow_zero_desirability,
            }
        };

        let mut scenarios = Vec::new();
        if raw.splits.is_empty() {
            let mut ps = Vec::new();
            for g in 0..2 {
                if svd[g].is_some() {
                    return Err(cfg_err(format!("group{}: svd projectors need [[splits]]", g + 1)));
                }
                ps.push(
                    explicit[g]
                        .clone()
                        .ok_or_else(|| cfg_err(format!("group{}.projector is required", g + 1)))?,
                );
            }
            scenarios.push(NamedScenario {
                name: "default".into(),
                scenario: build([ps[0].clone(), ps[1].clone()]),
            });
        }
        for s in &raw.splits {
            let rows = match split_rule(s)? {
                Some(rule) => {
                    let (_, data) = dataset
                        .as_ref()
                        .ok_or_else(|| cfg_err(format!("split '{}' needs a [dataset] section", s.name)))?;
                    Some(split_groups(data, &rule)?)
                }
                None => None,
            };
            let mut ps = Vec::new();
            for g in 0..2 {
                let over = if g == 0 { &s.group1_projector } else { &s.group2_projector };
                let p = if let Some(p) = over {
                    matrix(&format!("splits.{}.group{}_projector", s.name, g + 1), p, d, d)?
                } else if let (Some(k), Some((r1, r2))) = (svd[g], &rows) {
                    model::projector_from_samples(if g == 0 { r1 } else { r2 }, k)?.projector
                } else if let Some(p) = &explicit[g] {
                    p.clone()
                } else {
                    return Err(cfg_err(format!("split '{}': no projector for group {}", s.name, g + 1)));
                };
                ps.push(p);
            }
            scenarios.push(NamedScenario {
                name: s.name.clone(),
                scenario: build([ps[0].clone(), ps[1].clone()]),
            });
        }

        Ok(Config {
            seed: raw.seed,
            graph,
            node_labels: raw.graph.labels,
            scenarios,
            fairness: raw.fairness,
            sweep: raw.sweep,
            simulate: raw.simulate,
        })
    }

    pub fn first(&self) -> &Scenario {
        &self.scenarios[0].scenario
    }

    /// Fairness spec for `s` with optional command-line overrides.
    pub fn fairness_spec(
        &self,
        s: &Scenario,
        kind: Option<FairnessKind>,
        beta: Option<f64>,
    ) -> Result<FairnessSpec> {
        let fc = self.fairness.as_ref();
        let kind = match (kind, fc) {
            (Some(k), _) => k,
            (None, Some(f)) => f.kind.parse().map_err(|_| cfg_err(format!("unknown fairness.kind '{}'", f.kind)))?,
            (None, None) => return Err(cfg_err("no fairness kind given ([fairness] or --fairness)")),
        };
        let beta = beta
            .or(fc.map(|f| f.beta))
            .ok_or_else(|| cfg_err("no beta given (fairness.beta or --beta)"))?;
        let privileged = fc.map(|f| f.privileged_group).unwrap_or(1);
        if kind == FairnessKind::Custom {
            let f = fc.ok_or_else(|| cfg_err("custom fairness needs a [fairness] section"))?;
            let d = s.dim();
            let q = matrix(
                "fairness.q",
                f.q.as_ref().ok_or_else(|| cfg_err("custom fairness needs fairness.q"))?,
                d,
                d,
            )?;
            let expr = match &f.f {
                Some(src) => Expr::parse(src)?,
                None => Expr::zero(),
            };
            let l = f
                .lipschitz
                .ok_or_else(|| cfg_err("custom fairness needs fairness.lipschitz"))?;
            return FairnessSpec::custom(q, expr, l, beta);
        }
        FairnessSpec::from_scenario(s, kind, beta, privileged)
    }
}
