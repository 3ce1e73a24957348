//! End-to-end synthesis pipelines.
//!
//! `catall`: prior → [Laplace at `1/ε`] → clamp/rescale → multinomial draw
//! → records.
//!
//! `ipf`: per margin, prior → [Laplace at `M/ε`] → clamp/rescale; then fit
//! the joint table to the released margins by IPF from a uniform start, and
//! draw records from the fit.
//!
//! After the release step the pipelines only see [`Released`] values, so the
//! sampler and the IPF never touch the original counts in a private run.

use std::io::Write;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp_noise::{
    margin_multiplicity, parallel_epsilon, release_margin, release_table, Method, NoiseConfig,
    Provenance, Released,
};
use crate::error::{Error, Result};
use crate::ipf::{default_init, ipf_fit, IpfTargets, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::rng::{tags, RngStream};
use crate::tabulate::{
    all_margins, build_table, Codebook, ContingencyTable, MarginSpec, RecordSet, StructuralZeros,
    TableMode,
};

/// Which margins an `ipf` synthesis fits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginSelection {
    /// Every subset of the given size; `AllOrder(2)` is all two-way margins.
    AllOrder(usize),
    Explicit(Vec<MarginSpec>),
}

impl Default for MarginSelection {
    fn default() -> Self {
        MarginSelection::AllOrder(2)
    }
}

impl MarginSelection {
    pub fn resolve(&self, codebook: &Codebook) -> Result<Vec<MarginSpec>> {
        match self {
            MarginSelection::AllOrder(r) => all_margins(codebook, *r),
            MarginSelection::Explicit(specs) => {
                if specs.is_empty() {
                    return Err(Error::InvalidMargin("empty margin list".into()));
                }
                specs
                    .iter()
                    .map(|s| MarginSpec::new(s.indices().to_vec(), codebook))
                    .collect()
            }
        }
    }

    /// The selection for a table with variable `var` removed: explicit
    /// margins lose that variable and are renumbered, dropping any left empty.
    pub fn without(&self, var: usize) -> MarginSelection {
        match self {
            MarginSelection::AllOrder(r) => MarginSelection::AllOrder(*r),
            MarginSelection::Explicit(specs) => {
                let mut out: Vec<MarginSpec> = Vec::new();
                for s in specs {
                    let idx: Vec<usize> = s
                        .indices()
                        .iter()
                        .filter(|&&i| i != var)
                        .map(|&i| if i > var { i - 1 } else { i })
                        .collect();
                    if idx.is_empty() {
                        continue;
                    }
                    let spec = MarginSpec::from_sorted(idx);
                    if !out.contains(&spec) {
                        out.push(spec);
                    }
                }
                MarginSelection::Explicit(out)
            }
        }
    }
}

/// How many records to synthesise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSize {
    /// Same size as the original.
    #[default]
    Fixed,
    /// Size drawn from Poisson(N).
    Poisson,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub method: Method,
    /// `None` runs the non-private pipeline.
    pub epsilon: Option<f64>,
    pub nprior: f64,
    /// Ignored for catall.
    pub margins: MarginSelection,
    pub clamp_floor: f64,
    pub ipf_tol: f64,
    pub ipf_max_iter: usize,
    pub sample_size: SampleSize,
    pub seed: u64,
    pub replications: usize,
}

impl SynthesisConfig {
    pub fn new(method: Method) -> Self {
        SynthesisConfig {
            method,
            epsilon: None,
            nprior: 1.0,
            margins: MarginSelection::default(),
            clamp_floor: 0.0,
            ipf_tol: DEFAULT_TOL,
            ipf_max_iter: DEFAULT_MAX_ITER,
            sample_size: SampleSize::Fixed,
            seed: 0,
            replications: 10,
        }
    }

    pub fn with_epsilon(mut self, epsilon: Option<f64>) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_nprior(mut self, nprior: f64) -> Self {
        self.nprior = nprior;
        self
    }

    pub fn with_margins(mut self, margins: MarginSelection) -> Self {
        self.margins = margins;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Stream for replication `index` of this configuration.
    pub fn stream(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, index)
    }
}

/// What went into one synthesis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProvenance {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub stream_id: u64,
    /// Provenance of each table handed to the multinomial sampler (one per stratum).
    pub sampler_inputs: Vec<Provenance>,
    /// Provenance of each margin handed to the IPF.
    pub ipf_inputs: Vec<Provenance>,
    /// IPF convergence; `None` for catall.
    pub converged: Option<bool>,
    pub ipf_iterations: Option<usize>,
    pub max_margin_discrepancy: Option<f64>,
}

/// Synthetic records with their codebook and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub records: RecordSet,
    pub codebook: Arc<Codebook>,
    pub structural_zeros: Arc<StructuralZeros>,
    pub provenance: SynthProvenance,
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Cross-tabulation of the synthetic records.
    pub fn table(&self) -> Result<ContingencyTable> {
        build_table(
            &self.records,
            self.codebook.clone(),
            self.structural_zeros.clone(),
        )
    }

    /// Writes the records as CSV with category labels and a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.codebook.variables().iter().map(|v| v.name.as_str()))?;
        for rec in self.records.iter() {
            w.write_record(
                rec.iter()
                    .zip(self.codebook.variables())
                    .map(|(&l, v)| v.categories[l as usize].as_str()),
            )?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Draws a multinomial sample of size `n` by sequential conditional binomials.
pub fn multinomial_sample(
    probs: &ContingencyTable,
    n: u64,
    rng: RngStream,
) -> Result<ContingencyTable> {
    if probs.mode() != TableMode::Probabilities {
        return Err(Error::InvalidParameter(
            "multinomial sampling needs a probability table".into(),
        ));
    }
    let p = probs.values();
    let mut counts = vec![0.0; p.len()];
    let last = p.iter().rposition(|&v| v > 0.0);
    if let Some(last) = last {
        let mut r = rng.rng();
        let mut left = n;
        let mut mass = 1.0f64;
        for (i, &pi) in p.iter().enumerate().take(last + 1) {
            if left == 0 {
                break;
            }
            if pi <= 0.0 {
                continue;
            }
            let x = if i == last || mass <= pi {
                left
            } else {
                let q = (pi / mass).clamp(0.0, 1.0);
                Binomial::new(left, q)
                    .map_err(|e| Error::InvalidParameter(format!("binomial draw: {e}")))?
                    .sample(&mut r)
            };
            counts[i] = x as f64;
            left -= x;
            mass -= pi;
        }
    } else if n > 0 {
        return Err(Error::DegenerateTable { context: None });
    }
    Ok(ContingencyTable::from_parts(
        probs.codebook().clone(),
        counts,
        TableMode::Counts,
        probs.structural_zeros().clone(),
    ))
}

/// Turns integer cell counts into records in a seeded random order.
pub fn expand_to_records(counts: &ContingencyTable, rng: RngStream) -> Result<RecordSet> {
    let mut cells = Vec::new();
    for (i, &c) in counts.values().iter().enumerate() {
        if c.fract() != 0.0 || c < 0.0 {
            return Err(Error::NonIntegerCount { cell: i, value: c });
        }
        cells.extend(std::iter::repeat_n(i, c as usize));
    }
    cells.shuffle(&mut rng.rng());
    let cb = counts.codebook();
    let mut records = RecordSet::with_capacity(cb.num_variables(), cells.len());
    let mut levels = vec![0; cb.num_variables()];
    for cell in cells {
        cb.decode_into(cell, &mut levels);
        records.push(&levels)?;
    }
    Ok(records)
}

fn sample_size(n: usize, mode: SampleSize, rng: RngStream) -> Result<u64> {
    match mode {
        SampleSize::Fixed => Ok(n as u64),
        SampleSize::Poisson if n == 0 => Ok(0),
        SampleSize::Poisson => {
            let d = Poisson::new(n as f64)
                .map_err(|e| Error::InvalidParameter(format!("poisson size: {e}")))?;
            Ok(d.sample(&mut rng.rng()) as u64)
        }
    }
}

fn record_count(data: &ContingencyTable) -> Result<usize> {
    if data.mode() != TableMode::Counts {
        return Err(Error::InvalidParameter(
            "synthesis expects a counts table".into(),
        ));
    }
    let total = data.total();
    if total.fract() != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "original table total {total} is not an integer"
        )));
    }
    Ok(total as usize)
}

/// Sampling and expansion of a released probability table.
fn sample_released(
    released: &Released<ContingencyTable>,
    n_original: usize,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<RecordSet> {
    let n = sample_size(
        n_original,
        config.sample_size,
        stream.substream(tags::SAMPLE_SIZE),
    )?;
    let counts = multinomial_sample(released.value(), n, stream.substream(tags::MULTINOMIAL))?;
    expand_to_records(&counts, stream.substream(tags::SHUFFLE))
}

/// Saturated-model synthesis.
pub fn synth_catall(
    data: &ContingencyTable,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<SynthDataset> {
    let n = record_count(data)?;
    let noise = NoiseConfig::new(config.epsilon, config.nprior, config.clamp_floor, 1)?;
    let released = release_table(data, &noise, stream.substream(tags::NOISE))?;
    let records = sample_released(&released, n, config, stream)?;
    Ok(SynthDataset {
        records,
        codebook: data.codebook().clone(),
        structural_zeros: data.structural_zeros().clone(),
        provenance: SynthProvenance {
            method: Method::Catall,
            epsilon: config.epsilon,
            seed: stream.seed,
            stream_id: stream.stream_id,
            sampler_inputs: vec![released.provenance()],
            ipf_inputs: Vec::new(),
            converged: None,
            ipf_iterations: None,
            max_margin_discrepancy: None,
        },
    })
}

/// Releases each margin, then fits the joint table to them.
fn fit_released_margins(
    data: &ContingencyTable,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<(
    Released<ContingencyTable>,
    Vec<Provenance>,
    crate::ipf::IpfResult,
)> {
    let cb = data.codebook();
    let margins = config.margins.resolve(cb)?;
    let noise = NoiseConfig::new(
        config.epsilon,
        config.nprior,
        config.clamp_floor,
        margin_multiplicity(&margins),
    )?;
    let noise_stream = stream.substream(tags::NOISE);
    let released = margins
        .iter()
        .enumerate()
        .map(|(i, spec)| release_margin(data, spec, &noise, noise_stream.substream(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<Provenance> = released.iter().map(Released::provenance).collect();
    let targets = IpfTargets::new(cb, released.into_iter().map(Released::into_value).collect())?;
    let init = default_init(cb.clone(), data.structural_zeros().clone())?;
    let fit = ipf_fit(&init, &targets, config.ipf_tol, config.ipf_max_iter)?;
    if !fit.converged {
        log::warn!(
            "ipf did not converge in {} sweeps (last change {:.3e})",
            fit.iterations,
            fit.last_change
        );
    }
    let fitted = Released::derived(fit.fitted.clone(), &inputs);
    Ok((fitted, inputs, fit))
}

/// Margin-model synthesis. Nonconvergence is recorded, not fatal.
pub fn synth_ipf(
    data: &ContingencyTable,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<SynthDataset> {
    let n = record_count(data)?;
    let (fitted, inputs, fit) = fit_released_margins(data, config, stream)?;
    let records = sample_released(&fitted, n, config, stream)?;
    Ok(SynthDataset {
        records,
        codebook: data.codebook().clone(),
        structural_zeros: data.structural_zeros().clone(),
        provenance: SynthProvenance {
            method: Method::Ipf,
            epsilon: config.epsilon,
            seed: stream.seed,
            stream_id: stream.stream_id,
            sampler_inputs: vec![fitted.provenance()],
            ipf_inputs: inputs,
            converged: Some(fit.converged),
            ipf_iterations: Some(fit.iterations),
            max_margin_discrepancy: Some(fit.max_margin_discrepancy),
        },
    })
}

/// Released probability table for one run, without sampling. Useful for
/// inspecting what the sampler would draw from.
pub fn released_probabilities(
    data: &ContingencyTable,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<Released<ContingencyTable>> {
    match config.method {
        Method::Catall => {
            let noise = NoiseConfig::new(config.epsilon, config.nprior, config.clamp_floor, 1)?;
            release_table(data, &noise, stream.substream(tags::NOISE))
        }
        Method::Ipf => Ok(fit_released_margins(data, config, stream)?.0),
    }
}

/// Dispatches on `config.method`.
pub fn synthesize(
    data: &ContingencyTable,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<SynthDataset> {
    match config.method {
        Method::Catall => synth_catall(data, config, stream),
        Method::Ipf => synth_ipf(data, config, stream),
    }
}

/// Result of a stratified synthesis.
#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedSynth {
    pub dataset: SynthDataset,
    /// Maximum ε over the synthesised strata (parallel composition).
    pub effective_epsilon: Option<f64>,
    /// Stratum levels that were synthesised; empty strata are skipped.
    pub strata: Vec<usize>,
}

/// Stream used for stratum `level`.
pub fn stratum_stream(stream: RngStream, level: usize) -> RngStream {
    stream.substream(tags::STRATUM).substream(level as u64)
}

/// Synthesises each level of `stratum_var` independently and reattaches the
/// stratum label.
pub fn stratified_synth(
    data: &ContingencyTable,
    stratum_var: usize,
    config: &SynthesisConfig,
    stream: RngStream,
) -> Result<StratifiedSynth> {
    let cb = data.codebook();
    if stratum_var >= cb.num_variables() {
        return Err(Error::InvalidParameter(format!(
            "stratum variable {stratum_var} out of range"
        )));
    }
    if cb.num_variables() < 2 {
        return Err(Error::InvalidParameter(
            "stratified synthesis needs at least two variables".into(),
        ));
    }
    let levels = cb.cardinalities()[stratum_var];
    let config = &SynthesisConfig {
        margins: config.margins.without(stratum_var),
        ..config.clone()
    };
    let parts: Vec<Option<SynthDataset>> = (0..levels)
        .into_par_iter()
        .map(|level| {
            let sub = data.slice(stratum_var, level)?;
            if sub.total() == 0.0 {
                log::warn!(
                    "stratum `{}` of `{}` is empty; skipped",
                    cb.variables()[stratum_var].categories[level],
                    cb.variables()[stratum_var].name
                );
                return Ok(None);
            }
            synthesize(&sub, config, stratum_stream(stream, level)).map(Some)
        })
        .collect::<Result<_>>()?;

    let mut records = RecordSet::new(cb.num_variables());
    let mut strata = Vec::new();
    let mut provenance = SynthProvenance {
        method: config.method,
        epsilon: config.epsilon,
        seed: stream.seed,
        stream_id: stream.stream_id,
        sampler_inputs: Vec::new(),
        ipf_inputs: Vec::new(),
        converged: (config.method == Method::Ipf).then_some(true),
        ipf_iterations: None,
        max_margin_discrepancy: None,
    };
    let mut row = vec![0usize; cb.num_variables()];
    for (level, part) in parts.into_iter().enumerate() {
        let Some(part) = part else { continue };
        strata.push(level);
        let mut block = RecordSet::with_capacity(cb.num_variables(), part.len());
        for rec in part.records.iter() {
            let mut src = rec.iter();
            for (v, slot) in row.iter_mut().enumerate() {
                *slot = if v == stratum_var {
                    level
                } else {
                    *src.next().unwrap() as usize
                };
            }
            block.push(&row)?;
        }
        records.extend_from(&block);
        let p = part.provenance;
        provenance.sampler_inputs.extend(p.sampler_inputs);
        provenance.ipf_inputs.extend(p.ipf_inputs);
        if let (Some(all), Some(c)) = (provenance.converged.as_mut(), p.converged) {
            *all &= c;
        }
        provenance.ipf_iterations = provenance.ipf_iterations.max(p.ipf_iterations);
        provenance.max_margin_discrepancy =
            match (provenance.max_margin_discrepancy, p.max_margin_discrepancy) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            };
    }
    let per_stratum: Vec<f64> = config
        .epsilon
        .map(|e| vec![e; strata.len()])
        .unwrap_or_default();
    Ok(StratifiedSynth {
        dataset: SynthDataset {
            records,
            codebook: cb.clone(),
            structural_zeros: data.structural_zeros().clone(),
            provenance,
        },
        effective_epsilon: parallel_epsilon(&per_stratum),
        strata,
    })
}
