//! Replicated ε sweeps.
//!
//! An experiment runs every (method, ε) arm `replications` times, scores
//! each synthesis against the original and averages. Arms are keyed into
//! their own random streams by label, so dropping or adding an arm never
//! changes another arm's numbers, and replications can run in parallel.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp_noise::Method;
use crate::error::{Error, Result};
use crate::harness::ingest::{load_csv, LoadOptions};
use crate::ipf::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::metrics::{disclosure, utility_for_margins, DisclosureReport, UtilityGrade};
use crate::rng::RngStream;
use crate::synth::{stratified_synth, synthesize, MarginSelection, SampleSize, SynthesisConfig};
use crate::tabulate::{
    all_margins, build_table, Codebook, ContingencyTable, MarginSpec, StructuralZeros,
};

/// The ε grid used when a plan does not give one.
pub const DEFAULT_EPSILONS: [f64; 6] = [0.01, 0.1, 0.5, 1.0, 2.0, 10.0];

/// How the margins for `ipf` are chosen, in the text form used by plans and
/// the command line: `two-way`, `order:<r>` or `file:<path>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MarginsArg {
    Order(usize),
    File(PathBuf),
}

impl TryFrom<String> for MarginsArg {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MarginsArg> for String {
    fn from(m: MarginsArg) -> String {
        match m {
            MarginsArg::Order(2) => "two-way".into(),
            MarginsArg::Order(r) => format!("order:{r}"),
            MarginsArg::File(p) => format!("file:{}", p.display()),
        }
    }
}

impl std::str::FromStr for MarginsArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "two-way" {
            return Ok(MarginsArg::Order(2));
        }
        if let Some(r) = s.strip_prefix("order:") {
            let r = r
                .parse()
                .map_err(|_| Error::Config(format!("bad margin order `{r}`")))?;
            return Ok(MarginsArg::Order(r));
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(MarginsArg::File(PathBuf::from(p)));
        }
        Err(Error::Config(format!(
            "margins must be `two-way`, `order:<r>` or `file:<path>`, got `{s}`"
        )))
    }
}

impl MarginsArg {
    /// Resolves to a selection; margin files hold one margin per line as
    /// variable names joined by `+`.
    pub fn selection(&self, codebook: &Codebook, base: &Path) -> Result<MarginSelection> {
        match self {
            MarginsArg::Order(r) => Ok(MarginSelection::AllOrder(*r)),
            MarginsArg::File(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let specs = text
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(|l| MarginSpec::parse(l, codebook))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MarginSelection::Explicit(specs))
            }
        }
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Ipf]
}
fn default_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}
fn default_true() -> bool {
    true
}
fn default_replications() -> usize {
    10
}
fn default_nprior() -> f64 {
    1.0
}
fn default_margins() -> MarginsArg {
    MarginsArg::Order(2)
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

/// Experiment description, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Label used in reports; defaults to the dataset file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: PathBuf,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub structural_zeros: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Include a non-private arm for every method.
    #[serde(default = "default_true")]
    pub non_dp: bool,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stratify_by: Option<String>,
    #[serde(default = "default_nprior")]
    pub nprior: f64,
    #[serde(default)]
    pub clamp_floor: f64,
    #[serde(default = "default_margins")]
    pub margins: MarginsArg,
    #[serde(default = "default_tol")]
    pub ipf_tol: f64,
    #[serde(default = "default_max_iter")]
    pub ipf_max_iter: usize,
    #[serde(default)]
    pub sample_size: SampleSize,
    /// Quantile classes for numeric columns when no codebook is given.
    #[serde(default)]
    pub bin_classes: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Relative paths resolve against this directory (the plan file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentPlan {
    /// Plan with default settings for a dataset.
    pub fn for_dataset(dataset: impl Into<PathBuf>) -> Self {
        ExperimentPlan {
            name: None,
            dataset: dataset.into(),
            codebook: None,
            structural_zeros: None,
            methods: default_methods(),
            epsilons: default_epsilons(),
            non_dp: true,
            replications: default_replications(),
            seed: 0,
            stratify_by: None,
            nprior: default_nprior(),
            clamp_floor: 0.0,
            margins: default_margins(),
            ipf_tol: DEFAULT_TOL,
            ipf_max_iter: DEFAULT_MAX_ITER,
            sample_size: SampleSize::Fixed,
            bin_classes: None,
            output: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut plan: ExperimentPlan =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.base_dir = base_dir.to_path_buf();
        plan.validate()?;
        Ok(plan)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be ≥ 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods".into()));
        }
        if let Some(e) = self
            .epsilons
            .iter()
            .find(|e| !(**e > 0.0) || !e.is_finite())
        {
            return Err(Error::Config(format!("epsilon {e} must be positive")));
        }
        if self.epsilons.is_empty() && !self.non_dp {
            return Err(Error::Config(
                "no arms: empty epsilon grid and non_dp = false".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.dataset
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        })
    }

    /// Arms in report order: per method, the non-private arm then ε ascending.
    pub fn arms(&self) -> Vec<Arm> {
        let mut eps = self.epsilons.clone();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        let mut arms = Vec::new();
        for &method in &self.methods {
            if self.non_dp {
                arms.push(Arm {
                    method,
                    epsilon: None,
                });
            }
            arms.extend(eps.iter().map(|&e| Arm {
                method,
                epsilon: Some(e),
            }));
        }
        arms
    }
}

/// One (method, ε) cell of the sweep; `epsilon: None` is non-private.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub method: Method,
    pub epsilon: Option<f64>,
}

impl Arm {
    pub fn label(&self) -> String {
        match self.epsilon {
            Some(e) => format!("{}/eps={e}", self.method),
            None => format!("{}/non-dp", self.method),
        }
    }

    /// Stream for one replication, derived from the arm label only.
    pub fn stream(&self, seed: u64, replication: usize) -> RngStream {
        RngStream::new(seed, 0)
            .keyed(&self.label())
            .substream(replication as u64)
    }
}

/// Scores of one synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub arm: Arm,
    pub replication: usize,
    pub stream_id: u64,
    /// `None` when the synthesis succeeded, otherwise the failure message.
    pub failure: Option<String>,
    pub disclosure: Option<DisclosureReport>,
    pub two_way_u: Option<f64>,
    pub three_way_u: Option<f64>,
    /// `U_m` of every three-way margin, in `all_margins` order.
    #[serde(skip)]
    pub three_way_per_margin: Vec<f64>,
    /// `U_m` of the fixed worst three-way margin, filled in after selection.
    pub worst_three_way_u: Option<f64>,
    pub converged: Option<bool>,
    pub ipf_iterations: Option<usize>,
}

/// Averages over the successful replications of one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub completed: usize,
    pub failed: usize,
    /// Replications whose IPF hit the iteration cap.
    pub nonconverged: usize,
    pub ru: Option<f64>,
    pub ru_of_p1: Option<f64>,
    pub two_way_u: Option<f64>,
    pub three_way_u: Option<f64>,
    pub worst_three_way_u: Option<f64>,
    pub grade: Option<UtilityGrade>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub n: usize,
    pub k: usize,
    pub p0: f64,
    pub p1: f64,
    pub replications: usize,
    /// Worst three-way margin of the reference arm, held fixed for all arms.
    pub worst_three_way_margin: Option<String>,
    pub arms: Vec<ArmSummary>,
    pub runs: Vec<ReplicationRecord>,
}

/// Original data in table form, ready for synthesis.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub table: ContingencyTable,
    pub stratum: Option<usize>,
    pub margins: MarginSelection,
}

pub fn prepare(plan: &ExperimentPlan) -> Result<PreparedData> {
    let codebook = match &plan.codebook {
        Some(p) => Some(Codebook::read(&plan.resolve(p))?),
        None => None,
    };
    let data = load_csv(
        &plan.resolve(&plan.dataset),
        codebook.as_ref(),
        LoadOptions {
            bin_classes: plan.bin_classes,
        },
    )?;
    let zeros = match &plan.structural_zeros {
        Some(p) => StructuralZeros::read(&plan.resolve(p), &data.codebook)?,
        None => StructuralZeros::none(),
    };
    let table = build_table(&data.records, data.codebook.clone(), Arc::new(zeros))?;
    let stratum = plan
        .stratify_by
        .as_ref()
        .map(|name| {
            table
                .codebook()
                .variable_index(name)
                .ok_or_else(|| Error::Config(format!("stratify_by: no variable `{name}`")))
        })
        .transpose()?;
    let margins = plan.margins.selection(table.codebook(), &plan.base_dir)?;
    Ok(PreparedData {
        table,
        stratum,
        margins,
    })
}

fn config_for(plan: &ExperimentPlan, arm: Arm, margins: &MarginSelection) -> SynthesisConfig {
    SynthesisConfig {
        method: arm.method,
        epsilon: arm.epsilon,
        nprior: plan.nprior,
        margins: margins.clone(),
        clamp_floor: plan.clamp_floor,
        ipf_tol: plan.ipf_tol,
        ipf_max_iter: plan.ipf_max_iter,
        sample_size: plan.sample_size,
        seed: plan.seed,
        replications: plan.replications,
    }
}

/// Synthesises and scores one replication of one arm.
pub fn run_replication(
    plan: &ExperimentPlan,
    data: &PreparedData,
    arm: Arm,
    replication: usize,
) -> Result<ReplicationRecord> {
    let stream = arm.stream(plan.seed, replication);
    let config = config_for(plan, arm, &data.margins);
    let orig = &data.table;
    let outcome = match data.stratum {
        Some(s) => stratified_synth(orig, s, &config, stream).map(|o| o.dataset),
        None => synthesize(orig, &config, stream),
    };
    let mut record = ReplicationRecord {
        arm,
        replication,
        stream_id: stream.stream_id,
        failure: None,
        disclosure: None,
        two_way_u: None,
        three_way_u: None,
        three_way_per_margin: Vec::new(),
        worst_three_way_u: None,
        converged: None,
        ipf_iterations: None,
    };
    let synthetic = match outcome {
        Ok(s) => s,
        Err(e @ Error::DegenerateTable { .. }) => {
            log::warn!("{} replication {replication}: {e}", arm.label());
            record.failure = Some(e.to_string());
            return Ok(record);
        }
        Err(e) => return Err(e),
    };
    record.converged = synthetic.provenance.converged;
    record.ipf_iterations = synthetic.provenance.ipf_iterations;
    let synth_table = synthetic.table()?;
    record.disclosure = Some(disclosure(orig, &synth_table)?);
    let cb = orig.codebook();
    if cb.num_variables() >= 2 {
        let two = utility_for_margins(orig, &synth_table, &all_margins(cb, 2)?)?;
        record.two_way_u = Some(two.mean_u);
    }
    if cb.num_variables() >= 3 {
        let three = utility_for_margins(orig, &synth_table, &all_margins(cb, 3)?)?;
        record.three_way_u = Some(three.mean_u);
        record.three_way_per_margin = three.per_margin.iter().map(|m| m.utility).collect();
    }
    Ok(record)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs every arm of the plan and aggregates.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<AggregateReport> {
    plan.validate()?;
    let data = prepare(plan)?;
    run_prepared(plan, &data)
}

/// [`run_experiment`] on already-loaded data.
pub fn run_prepared(plan: &ExperimentPlan, data: &PreparedData) -> Result<AggregateReport> {
    plan.validate()?;
    let arms = plan.arms();
    let jobs: Vec<(Arm, usize)> = arms
        .iter()
        .flat_map(|&a| (0..plan.replications).map(move |r| (a, r)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(arm, r)| run_replication(plan, data, arm, r))
        .collect::<Result<Vec<_>>>()?;

    let orig = &data.table;
    let cb = orig.codebook();
    let base = disclosure(orig, orig)?;

    // The worst three-way margin comes from the non-private ipf arm when
    // present, else the first non-private arm, else the first arm.
    let three_way = if cb.num_variables() >= 3 {
        all_margins(cb, 3)?
    } else {
        Vec::new()
    };
    let reference = arms
        .iter()
        .find(|a| a.method == Method::Ipf && a.epsilon.is_none())
        .or_else(|| arms.iter().find(|a| a.epsilon.is_none()))
        .or(arms.first())
        .copied();
    let mut worst_index = None;
    if let (Some(reference), false) = (reference, three_way.is_empty()) {
        let mut sums = vec![0.0; three_way.len()];
        let mut n = 0;
        for r in runs
            .iter()
            .filter(|r| r.arm == reference && r.failure.is_none())
        {
            for (s, u) in sums.iter_mut().zip(&r.three_way_per_margin) {
                *s += u;
            }
            n += 1;
        }
        if n > 0 {
            let mut best = 0;
            for (i, s) in sums.iter().enumerate() {
                if *s > sums[best] {
                    best = i;
                }
            }
            worst_index = Some(best);
        }
    }
    if let Some(w) = worst_index {
        for r in runs.iter_mut() {
            r.worst_three_way_u = r.three_way_per_margin.get(w).copied();
        }
    }

    let arms = arms
        .iter()
        .map(|&arm| {
            let rs: Vec<&ReplicationRecord> = runs.iter().filter(|r| r.arm == arm).collect();
            let ok: Vec<&&ReplicationRecord> = rs.iter().filter(|r| r.failure.is_none()).collect();
            let two_way_u = mean(ok.iter().map(|r| r.two_way_u));
            ArmSummary {
                arm,
                completed: ok.len(),
                failed: rs.len() - ok.len(),
                nonconverged: rs.iter().filter(|r| r.converged == Some(false)).count(),
                ru: mean(ok.iter().map(|r| r.disclosure.map(|d| d.ru))),
                ru_of_p1: mean(ok.iter().map(|r| r.disclosure.and_then(|d| d.ru_of_p1))),
                two_way_u,
                three_way_u: mean(ok.iter().map(|r| r.three_way_u)),
                worst_three_way_u: mean(ok.iter().map(|r| r.worst_three_way_u)),
                grade: two_way_u.map(UtilityGrade::of),
            }
        })
        .collect();

    Ok(AggregateReport {
        dataset: plan.label(),
        n: base.n,
        k: base.k,
        p0: base.p0,
        p1: base.p1,
        replications: plan.replications,
        worst_three_way_margin: worst_index.map(|w| three_way[w].label(cb)),
        arms,
        runs,
    })
}
