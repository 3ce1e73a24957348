//! Disclosure-risk and utility measures comparing a synthetic table with the
//! original.
//!
//! Disclosure is measured by uniques: `p1` is the share of original records
//! that sit alone in their cell, and `ru` the share of records unique in both
//! the original and the synthetic table. Utility per margin is the
//! Voas–Williams style statistic
//!
//! ```text
//! pMSE_m = Σ_j (y_j − s_j)² / ((y_j + s_j) / 2)
//! U_m    = pMSE_m / df_m
//! ```
//!
//! with `df_m` one less than the number of margin cells that are non-empty in
//! either table. `U_m` is close to 1 when the synthesiser is the right model.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabulate::{
    all_margins, marginalize, Codebook, ContingencyTable, MarginSpec, MarginTable, TableMode,
};

/// Percentages of uniques, empty cells and replicated uniques.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisclosureReport {
    /// Records in the original.
    pub n: usize,
    /// Cells in the cross-tabulation.
    pub k: usize,
    /// Percentage of original records that are unique.
    pub p1: f64,
    /// Percentage of empty cells in the original.
    pub p0: f64,
    /// Percentage of records unique in both original and synthetic, per N.
    pub ru: f64,
    /// `ru` as a percentage of `p1`; absent when the original has no uniques.
    pub ru_of_p1: Option<f64>,
}

fn same_codebook(a: &ContingencyTable, b: &ContingencyTable) -> Result<()> {
    if a.codebook() != b.codebook() {
        return Err(Error::TableMismatch(
            "tables are over different codebooks".into(),
        ));
    }
    Ok(())
}

/// Disclosure measures of `synth` against `orig` (both counts).
pub fn disclosure(orig: &ContingencyTable, synth: &ContingencyTable) -> Result<DisclosureReport> {
    same_codebook(orig, synth)?;
    if orig.mode() != TableMode::Counts || synth.mode() != TableMode::Counts {
        return Err(Error::InvalidParameter(
            "disclosure measures need counts tables".into(),
        ));
    }
    let n = orig.total();
    if !(n > 0.0) {
        return Err(Error::InvalidParameter("original table is empty".into()));
    }
    let k = orig.len();
    let (mut uniques, mut empty, mut replicated) = (0usize, 0usize, 0usize);
    for (&y, &s) in orig.values().iter().zip(synth.values()) {
        if y == 1.0 {
            uniques += 1;
            if s == 1.0 {
                replicated += 1;
            }
        } else if y == 0.0 {
            empty += 1;
        }
    }
    let p1 = 100.0 * uniques as f64 / n;
    let ru = 100.0 * replicated as f64 / n;
    Ok(DisclosureReport {
        n: n as usize,
        k,
        p1,
        p0: 100.0 * empty as f64 / k as f64,
        ru,
        ru_of_p1: (uniques > 0).then(|| 100.0 * replicated as f64 / uniques as f64),
    })
}

fn check_pair(y: &MarginTable, s: &MarginTable) -> Result<()> {
    if y.spec != s.spec || y.values.len() != s.values.len() {
        return Err(Error::TableMismatch(format!(
            "margins {:?} and {:?} differ",
            y.spec.indices(),
            s.spec.indices()
        )));
    }
    Ok(())
}

/// `Σ (y − s)² / ((y + s)/2)` over the margin cells; cells empty in both
/// tables contribute nothing.
pub fn margin_pmse(y: &MarginTable, s: &MarginTable) -> Result<f64> {
    check_pair(y, s)?;
    Ok(pmse_values(&y.values, &s.values))
}

pub(crate) fn pmse_values(y: &[f64], s: &[f64]) -> f64 {
    y.iter()
        .zip(s)
        .filter(|(a, b)| **a + **b > 0.0)
        .map(|(a, b)| (a - b).powi(2) / ((a + b) / 2.0))
        .sum()
}

/// Degrees of freedom: margin cells non-empty in either table, minus one.
pub fn margin_df(y: &MarginTable, s: &MarginTable) -> Result<usize> {
    check_pair(y, s)?;
    Ok(y.values
        .iter()
        .zip(&s.values)
        .filter(|(a, b)| **a + **b > 0.0)
        .count()
        .saturating_sub(1))
}

/// `U_m = pMSE_m / df_m`.
pub fn standardized_utility(pmse: f64, df: usize) -> Result<f64> {
    if df < 1 {
        return Err(Error::InvalidParameter(
            "degrees of freedom must be ≥ 1".into(),
        ));
    }
    Ok(pmse / df as f64)
}

/// Rule-of-thumb reading of an average standardised utility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityGrade {
    /// Below 10: likely to give useful results.
    Useful,
    /// Below 30: generally usable.
    Usable,
    Poor,
}

impl UtilityGrade {
    pub fn of(mean_u: f64) -> Self {
        if mean_u < 10.0 {
            UtilityGrade::Useful
        } else if mean_u < 30.0 {
            UtilityGrade::Usable
        } else {
            UtilityGrade::Poor
        }
    }
}

impl fmt::Display for UtilityGrade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UtilityGrade::Useful => "useful",
            UtilityGrade::Usable => "usable",
            UtilityGrade::Poor => "poor",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginUtility {
    pub spec: MarginSpec,
    pub pmse: f64,
    pub df: usize,
    pub utility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub per_margin: Vec<MarginUtility>,
    pub mean_u: f64,
    /// Margin with the largest `U_m`; the first one on ties.
    pub worst: MarginUtility,
    pub grade: UtilityGrade,
}

/// Utility over an explicit list of margins.
///
/// A margin where both tables occupy a single cell has no degrees of
/// freedom; its `U_m` is taken as the raw pMSE.
pub fn utility_for_margins(
    orig: &ContingencyTable,
    synth: &ContingencyTable,
    margins: &[MarginSpec],
) -> Result<UtilityReport> {
    same_codebook(orig, synth)?;
    if margins.is_empty() {
        return Err(Error::InvalidMargin("no margins to evaluate".into()));
    }
    let per_margin = margins
        .iter()
        .map(|spec| {
            let y = marginalize(orig, spec)?;
            let s = marginalize(synth, spec)?;
            let pmse = margin_pmse(&y, &s)?;
            let df = margin_df(&y, &s)?;
            Ok(MarginUtility {
                spec: spec.clone(),
                pmse,
                df,
                utility: standardized_utility(pmse, df.max(1))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_u = per_margin.iter().map(|m| m.utility).sum::<f64>() / per_margin.len() as f64;
    let worst = per_margin
        .iter()
        .fold(None::<&MarginUtility>, |best, m| match best {
            Some(b) if b.utility >= m.utility => Some(b),
            _ => Some(m),
        })
        .cloned()
        .expect("at least one margin");
    Ok(UtilityReport {
        per_margin,
        mean_u,
        worst,
        grade: UtilityGrade::of(mean_u),
    })
}

/// Utility over every margin of the given order.
pub fn utility_summary(
    orig: &ContingencyTable,
    synth: &ContingencyTable,
    order: usize,
) -> Result<UtilityReport> {
    let margins = all_margins(orig.codebook(), order)?;
    utility_for_margins(orig, synth, &margins)
}

impl UtilityReport {
    /// One row per margin: `margin,pmse,df,utility`, then the mean and grade
    /// as `#` annotation lines.
    pub fn write_csv<W: Write>(&self, codebook: &Codebook, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["margin", "pmse", "df", "utility"])?;
        for m in &self.per_margin {
            w.write_record([
                m.spec.label(codebook),
                m.pmse.to_string(),
                m.df.to_string(),
                m.utility.to_string(),
            ])?;
        }
        let mut out = w
            .into_inner()
            .map_err(|e| Error::io("<csv output>", e.into_error()))?;
        writeln!(out, "# mean_u={} grade={}", self.mean_u, self.grade)
            .map_err(|e| Error::io("<csv output>", e))?;
        writeln!(
            out,
            "# worst={} u={}",
            self.worst.spec.label(codebook),
            self.worst.utility
        )
        .map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::tabulate::{Codebook, StructuralZeros};

    fn counts(radices: &[usize], values: Vec<f64>) -> ContingencyTable {
        let cb = Arc::new(Codebook::from_cardinalities(radices).unwrap());
        ContingencyTable::new(
            cb,
            values,
            TableMode::Counts,
            Arc::new(StructuralZeros::none()),
        )
        .unwrap()
    }

    fn margin(values: Vec<f64>) -> MarginTable {
        let cb = Codebook::from_cardinalities(&[values.len()]).unwrap();
        MarginTable {
            spec: MarginSpec::full(&cb),
            cardinalities: vec![values.len()],
            values,
            mode: TableMode::Counts,
            structural_zeros: vec![],
        }
    }

    #[test]
    fn disclosure_examples() {
        let orig = counts(&[2, 2], vec![1.0, 1.0, 0.0, 2.0]);
        let d = disclosure(&orig, &orig).unwrap();
        assert_eq!((d.p1, d.p0, d.ru), (50.0, 25.0, 50.0));
        assert_eq!(d.ru_of_p1, Some(100.0));
        let synth = counts(&[2, 2], vec![1.0, 0.0, 1.0, 2.0]);
        let d = disclosure(&orig, &synth).unwrap();
        assert_eq!(d.ru, 25.0);
        assert_eq!(d.ru_of_p1, Some(50.0));
    }

    #[test]
    fn disclosure_without_uniques_has_no_ratio() {
        let orig = counts(&[2], vec![2.0, 3.0]);
        let d = disclosure(&orig, &orig).unwrap();
        assert_eq!(d.p1, 0.0);
        assert_eq!(d.ru, 0.0);
        assert_eq!(d.ru_of_p1, None);
    }

    #[test]
    fn disclosure_rejects_mismatch() {
        let a = counts(&[2, 2], vec![1.0; 4]);
        let b = counts(&[4], vec![1.0; 4]);
        assert!(disclosure(&a, &b).is_err());
        assert!(disclosure(&counts(&[2], vec![0.0, 0.0]), &counts(&[2], vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn pmse_examples() {
        assert_eq!(
            margin_pmse(&margin(vec![2.0, 2.0]), &margin(vec![2.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            margin_pmse(&margin(vec![3.0, 1.0]), &margin(vec![1.0, 3.0])).unwrap(),
            4.0
        );
        assert_eq!(
            margin_pmse(&margin(vec![3.0, 0.0]), &margin(vec![1.0, 0.0])).unwrap(),
            2.0
        );
        assert!(margin_pmse(&margin(vec![1.0, 1.0]), &margin(vec![1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn pmse_matches_term_by_term_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let y: Vec<f64> = (0..9).map(|_| rng.random_range(0..8) as f64).collect();
            let s: Vec<f64> = (0..9).map(|_| rng.random_range(0..8) as f64).collect();
            let mut oracle = 0.0;
            for j in 0..9 {
                if y[j] + s[j] != 0.0 {
                    let d = y[j] - s[j];
                    oracle += d * d * 2.0 / (y[j] + s[j]);
                }
            }
            let got = margin_pmse(&margin(y), &margin(s)).unwrap();
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn standardized_utility_examples() {
        assert_eq!(standardized_utility(4.0, 1).unwrap(), 4.0);
        assert_eq!(standardized_utility(0.0, 7).unwrap(), 0.0);
        assert!(standardized_utility(1.0, 0).is_err());
    }

    #[test]
    fn df_counts_support() {
        assert_eq!(
            margin_df(
                &margin(vec![3.0, 0.0, 1.0, 0.0]),
                &margin(vec![0.0, 0.0, 2.0, 0.0])
            )
            .unwrap(),
            1
        );
    }

    #[test]
    fn identical_tables_have_zero_utility() {
        let t = counts(&[2, 3, 2], (0..12).map(|i| i as f64).collect());
        let u = utility_summary(&t, &t, 2).unwrap();
        assert_eq!(u.per_margin.len(), 3);
        assert!(u.per_margin.iter().all(|m| m.utility == 0.0));
        assert_eq!(u.mean_u, 0.0);
        assert_eq!(u.grade, UtilityGrade::Useful);
    }

    #[test]
    fn worst_is_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = counts(
                &[2, 3, 2, 2],
                (0..24).map(|_| rng.random_range(0..20) as f64).collect(),
            );
            let b = counts(
                &[2, 3, 2, 2],
                (0..24).map(|_| rng.random_range(0..20) as f64).collect(),
            );
            let u = utility_summary(&a, &b, 2).unwrap();
            let mut best = 0;
            for (i, m) in u.per_margin.iter().enumerate() {
                if m.utility > u.per_margin[best].utility {
                    best = i;
                }
            }
            assert_eq!(u.worst.spec, u.per_margin[best].spec);
            let mean = u
                .per_margin
                .iter()
                .map(|m| m.pmse / m.df as f64)
                .sum::<f64>()
                / 6.0;
            assert!((u.mean_u - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn grades() {
        assert_eq!(UtilityGrade::of(9.9), UtilityGrade::Useful);
        assert_eq!(UtilityGrade::of(10.0), UtilityGrade::Usable);
        assert_eq!(UtilityGrade::of(30.0), UtilityGrade::Poor);
    }

    #[test]
    fn full_margin_pmse_equals_direct() {
        let a = counts(&[2, 3], vec![1.0, 4.0, 0.0, 2.0, 2.0, 7.0]);
        let b = counts(&[2, 3], vec![2.0, 3.0, 1.0, 0.0, 2.0, 8.0]);
        let full = MarginSpec::full(a.codebook());
        let via = margin_pmse(
            &marginalize(&a, &full).unwrap(),
            &marginalize(&b, &full).unwrap(),
        )
        .unwrap();
        assert_eq!(via, pmse_values(a.values(), b.values()));
    }

    #[test]
    fn report_csv_has_one_row_per_margin() {
        let a = counts(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let b = counts(&[2, 2, 2], vec![2.0, 2.0, 3.0, 3.0, 5.0, 7.0, 7.0, 7.0]);
        let u = utility_summary(&a, &b, 2).unwrap();
        let mut out = Vec::new();
        u.write_csv(a.codebook(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 4);
        assert!(rows[1].starts_with("V1+V2,"));
    }

    proptest! {
        #[test]
        fn pmse_symmetric_and_permutation_invariant(
            pairs in prop::collection::vec((0u32..30, 0u32..30), 1..20),
            rot in 0usize..20,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let s: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let base = pmse_values(&y, &s);
            prop_assert!(base >= 0.0);
            prop_assert!((pmse_values(&s, &y) - base).abs() < 1e-9);
            let r = rot % y.len();
            let (mut yr, mut sr) = (y.clone(), s.clone());
            yr.rotate_left(r);
            sr.rotate_left(r);
            prop_assert!((pmse_values(&yr, &sr) - base).abs() < 1e-9);
            prop_assert_eq!(base == 0.0, y == s);
        }

        #[test]
        fn ru_never_exceeds_p1(
            y in prop::collection::vec(0u32..3, 8),
            s in prop::collection::vec(0u32..3, 8),
        ) {
            prop_assume!(y.iter().any(|&v| v > 0));
            let a = counts(&[2, 4], y.iter().map(|&v| v as f64).collect());
            let b = counts(&[2, 4], s.iter().map(|&v| v as f64).collect());
            let d = disclosure(&a, &b).unwrap();
            prop_assert!(d.ru <= d.p1);
            prop_assert!((0.0..=100.0).contains(&d.p0));
        }
    }
}
