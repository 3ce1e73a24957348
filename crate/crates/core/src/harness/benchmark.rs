//! Benchmark data drawn from a known log-linear model.
//!
//! The cell log-probabilities are a sum of main effects, every two-way
//! interaction and any planted three-way interactions. Each term is an
//! array over its variables' levels with independent normal entries, scaled
//! by the profile's strengths. The parameters are written next to the data
//! so tests can compare sample statistics with closed-form values.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::synth::{expand_to_records, multinomial_sample};
use crate::tabulate::{
    Codebook, ContingencyTable, RecordSet, StructuralZeros, TableMode, Variable,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeWayTerm {
    pub variables: [usize; 3],
    pub strength: f64,
}

/// Interaction structure of the generating model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionProfile {
    /// Standard deviation of main-effect entries.
    pub main: f64,
    /// Standard deviation of two-way entries (0 for independence).
    pub two_way: f64,
    #[serde(default)]
    pub three_way: Vec<ThreeWayTerm>,
}

impl InteractionProfile {
    pub fn independence(main: f64) -> Self {
        InteractionProfile {
            main,
            two_way: 0.0,
            three_way: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub cardinalities: Vec<usize>,
    pub n: usize,
    pub profile: InteractionProfile,
    pub seed: u64,
}

/// One interaction term: the variables it spans and its values laid out
/// row-major over their levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub variables: Vec<usize>,
    pub values: Vec<f64>,
}

impl Term {
    fn at(&self, levels: &[usize], cards: &[usize]) -> f64 {
        let mut idx = 0;
        for &v in &self.variables {
            idx = idx * cards[v] + levels[v];
        }
        self.values[idx]
    }
}

/// Ground truth of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkParams {
    pub spec: BenchmarkSpec,
    pub terms: Vec<Term>,
}

impl BenchmarkParams {
    /// Normalised cell probabilities of the model.
    pub fn probabilities(&self, codebook: &Codebook) -> Result<Vec<f64>> {
        let cards = codebook.cardinalities();
        let k = codebook.total_cells();
        let mut levels = vec![0; cards.len()];
        let mut logp = Vec::with_capacity(k);
        for cell in 0..k {
            codebook.decode_into(cell, &mut levels);
            logp.push(self.terms.iter().map(|t| t.at(&levels, cards)).sum::<f64>());
        }
        let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::InvalidParameter(
                "log-linear parameters are not finite".into(),
            ));
        }
        let mut p: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParameter(
                "cannot normalise the model probabilities".into(),
            ));
        }
        p.iter_mut().for_each(|v| *v /= total);
        Ok(p)
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkData {
    pub codebook: Arc<Codebook>,
    pub records: RecordSet,
    pub params: BenchmarkParams,
}

fn normal_term(rng: &mut ChaCha20Rng, variables: Vec<usize>, cards: &[usize], scale: f64) -> Term {
    let size: usize = variables.iter().map(|&v| cards[v]).product();
    let values = (0..size)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Term { variables, values }
}

/// Codebook `V1..Vn` with categories `c1..cR`.
pub fn benchmark_codebook(cardinalities: &[usize]) -> Result<Codebook> {
    Codebook::new(
        cardinalities
            .iter()
            .enumerate()
            .map(|(i, &r)| Variable::new(format!("V{}", i + 1), (1..=r).map(|c| format!("c{c}"))))
            .collect(),
    )
}

/// Samples `n` records from the model described by `spec`.
pub fn generate_benchmark_data(spec: &BenchmarkSpec) -> Result<BenchmarkData> {
    let cards = &spec.cardinalities;
    let codebook = Arc::new(benchmark_codebook(cards)?);
    let v = cards.len();
    for t in &spec.profile.three_way {
        let mut vars = t.variables;
        vars.sort_unstable();
        if vars[2] >= v || vars[0] == vars[1] || vars[1] == vars[2] {
            return Err(Error::InvalidParameter(format!(
                "three-way term {:?} invalid for {v} variables",
                t.variables
            )));
        }
    }
    for x in [spec.profile.main, spec.profile.two_way] {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "interaction scale {x} must be finite and ≥ 0"
            )));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut terms = Vec::new();
    for i in 0..v {
        terms.push(normal_term(&mut rng, vec![i], cards, spec.profile.main));
    }
    for i in 0..v {
        for j in i + 1..v {
            terms.push(normal_term(
                &mut rng,
                vec![i, j],
                cards,
                spec.profile.two_way,
            ));
        }
    }
    for t in &spec.profile.three_way {
        let mut vars = t.variables.to_vec();
        vars.sort_unstable();
        terms.push(normal_term(&mut rng, vars, cards, t.strength));
    }
    let params = BenchmarkParams {
        spec: spec.clone(),
        terms,
    };
    let probs = params.probabilities(&codebook)?;
    let probs = ContingencyTable::new(
        codebook.clone(),
        probs,
        TableMode::Probabilities,
        Arc::new(StructuralZeros::none()),
    )?;
    let stream = RngStream::new(spec.seed, u64::MAX);
    let counts = multinomial_sample(&probs, spec.n as u64, stream.substream(0))?;
    let records = expand_to_records(&counts, stream.substream(1))?;
    Ok(BenchmarkData {
        codebook,
        records,
        params,
    })
}

/// Files written by [`write_benchmark`].
#[derive(Clone, Debug)]
pub struct BenchmarkFiles {
    pub data: PathBuf,
    pub codebook: PathBuf,
    pub params: PathBuf,
}

/// Writes `<stem>.csv`, `<stem>.codebook.txt` and `<stem>.params.json`.
pub fn write_benchmark(data: &BenchmarkData, dir: &Path, stem: &str) -> Result<BenchmarkFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = BenchmarkFiles {
        data: dir.join(format!("{stem}.csv")),
        codebook: dir.join(format!("{stem}.codebook.txt")),
        params: dir.join(format!("{stem}.params.json")),
    };
    let file = fs::File::create(&files.data).map_err(|e| Error::io(&files.data, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(data.codebook.variables().iter().map(|v| v.name.as_str()))?;
    for rec in data.records.iter() {
        w.write_record(
            rec.iter()
                .zip(data.codebook.variables())
                .map(|(&l, v)| v.categories[l as usize].as_str()),
        )?;
    }
    w.flush().map_err(|e| Error::io(&files.data, e))?;
    fs::write(&files.codebook, data.codebook.to_string())
        .map_err(|e| Error::io(&files.codebook, e))?;
    let json = serde_json::to_string_pretty(&data.params).expect("params serialise");
    fs::write(&files.params, json).map_err(|e| Error::io(&files.params, e))?;
    Ok(files)
}
