//! Prior spreading, Laplace perturbation, clamping and rescaling: the steps
//! that turn exact counts into a released probability table.
//!
//! For `catall` the whole cross-tabulation is released at Laplace scale
//! `1/ε`: one individual moves exactly one cell by one. For `ipf` each of
//! the `M` fitted margins is released at scale `M/ε`; an individual appears
//! once in every margin, so the margins compose sequentially to `ε`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tabulate::{marginalize, ContingencyTable, MarginSpec, MarginTable, TableMode};

/// Synthesis method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Saturated model: sample from the full cross-tabulation.
    Catall,
    /// Log-linear model fitted to a set of margins.
    Ipf,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Catall => "catall",
            Method::Ipf => "ipf",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "catall" => Ok(Method::Catall),
            "ipf" => Ok(Method::Ipf),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Noise parameters for one release.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    /// `None` for a non-private run, which skips perturbation entirely.
    pub epsilon: Option<f64>,
    /// Total prior count spread over the non-structural-zero cells.
    pub nprior: f64,
    /// Value substituted for negative noisy counts.
    pub clamp_floor: f64,
    /// Number of margins each individual contributes to.
    pub margin_multiplicity: usize,
}

impl NoiseConfig {
    pub fn new(
        epsilon: Option<f64>,
        nprior: f64,
        clamp_floor: f64,
        margin_multiplicity: usize,
    ) -> Result<Self> {
        if let Some(e) = epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "epsilon must be positive, got {e}"
                )));
            }
        }
        if !(nprior >= 0.0) || !nprior.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "nprior must be ≥ 0, got {nprior}"
            )));
        }
        if !(clamp_floor >= 0.0) || !clamp_floor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "clamp floor must be ≥ 0, got {clamp_floor}"
            )));
        }
        if margin_multiplicity == 0 {
            return Err(Error::InvalidParameter(
                "margin multiplicity must be ≥ 1".into(),
            ));
        }
        Ok(NoiseConfig {
            epsilon,
            nprior,
            clamp_floor,
            margin_multiplicity,
        })
    }

    pub fn is_private(&self) -> bool {
        self.epsilon.is_some()
    }
}

/// Adds `nprior / n` to each of the `n` cells that are not structural zeros.
pub fn add_prior(table: &ContingencyTable, nprior: f64) -> Result<ContingencyTable> {
    let mut values = table.values().to_vec();
    spread_prior(&mut values, table.structural_zeros().cells(), nprior)?;
    Ok(ContingencyTable::from_parts(
        table.codebook().clone(),
        values,
        TableMode::Counts,
        table.structural_zeros().clone(),
    ))
}

/// In-place prior spreading; `zeros` must be sorted.
pub(crate) fn spread_prior(values: &mut [f64], zeros: &[usize], nprior: f64) -> Result<()> {
    if !(nprior >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "nprior must be ≥ 0, got {nprior}"
        )));
    }
    let live = values.len() - zeros.len();
    if live == 0 {
        return Err(Error::AllStructuralZeros);
    }
    if nprior == 0.0 {
        return Ok(());
    }
    let per_cell = nprior / live as f64;
    let mut z = zeros.iter().peekable();
    for (i, v) in values.iter_mut().enumerate() {
        if z.peek() == Some(&&i) {
            z.next();
            continue;
        }
        *v += per_cell;
    }
    Ok(())
}

/// Laplace scale `b`: `1/ε` for catall, `M/ε` for ipf.
pub fn laplace_scale(method: Method, epsilon: f64, margin_count: usize) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    match method {
        Method::Catall => Ok(1.0 / epsilon),
        Method::Ipf => {
            if margin_count == 0 {
                return Err(Error::InvalidParameter(
                    "ipf needs at least one margin".into(),
                ));
            }
            Ok(margin_count as f64 / epsilon)
        }
    }
}

/// Number of margins each record contributes to.
///
/// Every full-table cell projects onto exactly one cell of every margin, so
/// the count is the same for all cells: the size of the margin set.
pub fn margin_multiplicity(margins: &[MarginSpec]) -> usize {
    margins.len()
}

/// Per-margin privacy loss when each margin is released at scale `M/ε`.
pub fn per_margin_epsilon(epsilon: f64, margins: &[MarginSpec]) -> Vec<f64> {
    let m = margin_multiplicity(margins);
    vec![epsilon / m as f64; m]
}

/// Sequential composition over the released margins.
pub fn composed_epsilon(per_margin: &[f64]) -> f64 {
    per_margin.iter().sum()
}

/// Parallel composition over disjoint strata.
pub fn parallel_epsilon(per_stratum: &[f64]) -> Option<f64> {
    per_stratum.iter().copied().reduce(f64::max)
}

/// One Laplace(0, b) draw by inverse CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Adds i.i.d. Laplace(0, b) noise to every cell except structural zeros
/// (given sorted), which stay at exactly zero.
pub fn perturb(values: &[f64], b: f64, rng: RngStream, structural_zeros: &[usize]) -> Vec<f64> {
    assert!(b > 0.0, "Laplace scale must be positive");
    let mut r = rng.rng();
    let mut z = structural_zeros.iter().peekable();
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if z.peek() == Some(&&i) {
                z.next();
                0.0
            } else {
                v + sample_laplace(&mut r, b)
            }
        })
        .collect()
}

/// Replaces values below `clamp_floor` by the floor (structural zeros stay
/// zero) and rescales to unit sum.
pub fn clamp_rescale(
    values: &[f64],
    clamp_floor: f64,
    structural_zeros: &[usize],
) -> Result<Vec<f64>> {
    if !(clamp_floor >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "clamp floor must be ≥ 0, got {clamp_floor}"
        )));
    }
    let mut out: Vec<f64> = values
        .iter()
        .map(|&v| if v < clamp_floor { clamp_floor } else { v })
        .collect();
    for &c in structural_zeros {
        out[c] = 0.0;
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateTable { context: None });
    }
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

/// How a released object was produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    /// Exact counts with prior only; a non-private run.
    Exact,
    /// Laplace noise of the given scale was added before clamping.
    Laplace { scale: f64 },
}

impl Provenance {
    pub fn is_noisy(&self) -> bool {
        matches!(self, Provenance::Laplace { .. })
    }
}

/// A probability table or margin that has passed through the release steps.
///
/// Only this module constructs one, so anything downstream that accepts a
/// `Released` value works on released data rather than the original counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Released<T> {
    value: T,
    provenance: Provenance,
}

impl<T> Released<T> {
    pub fn value(&self) -> &T {
        &self.value
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn into_value(self) -> T {
        self.value
    }

    /// Combines several releases into one derived object. The result is
    /// noisy if any input was, with the largest input scale.
    pub(crate) fn derived(value: T, inputs: &[Provenance]) -> Released<T> {
        let provenance = inputs
            .iter()
            .fold(Provenance::Exact, |acc, p| match (acc, *p) {
                (Provenance::Laplace { scale: a }, Provenance::Laplace { scale: b }) => {
                    Provenance::Laplace { scale: a.max(b) }
                }
                (Provenance::Exact, p) | (p, Provenance::Exact) => p,
            });
        Released { value, provenance }
    }
}

/// Prior, optional noise at `scale`, clamp and rescale of a dense vector.
fn release_values(
    mut values: Vec<f64>,
    zeros: &[usize],
    config: &NoiseConfig,
    scale: Option<f64>,
    rng: RngStream,
) -> Result<(Vec<f64>, Provenance)> {
    spread_prior(&mut values, zeros, config.nprior)?;
    let (noisy, provenance) = match scale {
        Some(b) => (
            perturb(&values, b, rng, zeros),
            Provenance::Laplace { scale: b },
        ),
        None => (values, Provenance::Exact),
    };
    Ok((
        clamp_rescale(&noisy, config.clamp_floor, zeros)?,
        provenance,
    ))
}

/// Releases the full cross-tabulation as a probability table (catall).
pub fn release_table(
    counts: &ContingencyTable,
    config: &NoiseConfig,
    rng: RngStream,
) -> Result<Released<ContingencyTable>> {
    if counts.mode() != TableMode::Counts {
        return Err(Error::InvalidParameter(
            "release expects a counts table".into(),
        ));
    }
    let scale = config
        .epsilon
        .map(|e| laplace_scale(Method::Catall, e, 1))
        .transpose()?;
    let (probs, provenance) = release_values(
        counts.values().to_vec(),
        counts.structural_zeros().cells(),
        config,
        scale,
        rng,
    )?;
    Ok(Released {
        value: ContingencyTable::from_parts(
            counts.codebook().clone(),
            probs,
            TableMode::Probabilities,
            counts.structural_zeros().clone(),
        ),
        provenance,
    })
}

/// Releases one margin as a probability margin (ipf). The scale is `M/ε`
/// with `M` taken from `config.margin_multiplicity`.
pub fn release_margin(
    counts: &ContingencyTable,
    spec: &MarginSpec,
    config: &NoiseConfig,
    rng: RngStream,
) -> Result<Released<MarginTable>> {
    if counts.mode() != TableMode::Counts {
        return Err(Error::InvalidParameter(
            "release expects a counts table".into(),
        ));
    }
    let margin = marginalize(counts, spec)?;
    let scale = config
        .epsilon
        .map(|e| laplace_scale(Method::Ipf, e, config.margin_multiplicity))
        .transpose()?;
    let label = spec.label(counts.codebook());
    let (probs, provenance) =
        release_values(margin.values, &margin.structural_zeros, config, scale, rng).map_err(
            |e| match e {
                Error::DegenerateTable { .. } => Error::degenerate(format!("margin {label}")),
                other => other,
            },
        )?;
    Ok(Released {
        value: MarginTable {
            values: probs,
            mode: TableMode::Probabilities,
            ..margin
        },
        provenance,
    })
}
