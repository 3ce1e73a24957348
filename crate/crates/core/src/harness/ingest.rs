//! CSV ingestion and numeric binning.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tabulate::{Codebook, RecordSet, Variable};

/// Label given to empty fields and `NA`.
pub const MISSING: &str = "MISSING";

/// Records with the codebook they are coded against.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub codebook: Arc<Codebook>,
    pub records: RecordSet,
    /// Cut points of every column that was binned, by column name.
    pub bins: Vec<(String, Vec<f64>)>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Bin numeric columns into this many quantile classes. Only applies
    /// when no codebook is given.
    pub bin_classes: Option<usize>,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "NA"
}

/// Reads a header-row CSV of categorical (or binnable numeric) columns.
///
/// With a codebook, every label must be in it. Without one, categories are
/// numbered in order of first appearance and missing values become the
/// category `MISSING`.
pub fn load_csv(path: &Path, codebook: Option<&Codebook>, options: LoadOptions) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(parse_err(1, "missing header row".into()));
    }

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths {
                expected_len, len, ..
            } => parse_err(line, format!("expected {expected_len} fields, found {len}")),
            _ => parse_err(line, e.to_string()),
        })?;
        let row: Vec<String> = rec
            .iter()
            .map(|f| {
                let f = f.trim();
                if is_missing(f) {
                    MISSING.to_string()
                } else {
                    f.to_string()
                }
            })
            .collect();
        rows.push(row);
    }

    match codebook {
        Some(cb) => code_with(cb, &headers, &rows, path),
        None => {
            if rows.is_empty() {
                return Err(parse_err(
                    2,
                    "no data rows and no codebook to define categories".into(),
                ));
            }
            infer(&headers, rows, options, path)
        }
    }
}

fn code_with(
    cb: &Codebook,
    headers: &[String],
    rows: &[Vec<String>],
    path: &Path,
) -> Result<Dataset> {
    let order: Vec<usize> = cb
        .variables()
        .iter()
        .map(|v| {
            headers
                .iter()
                .position(|h| *h == v.name)
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("column `{}` not in file", v.name),
                })
        })
        .collect::<Result<_>>()?;
    let mut records = RecordSet::with_capacity(cb.num_variables(), rows.len());
    let mut levels = vec![0; cb.num_variables()];
    for (i, row) in rows.iter().enumerate() {
        for (v, (&col, var)) in order.iter().zip(cb.variables()).enumerate() {
            levels[v] = var.level_of(&row[col]).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("unknown category `{}` for `{}`", row[col], var.name),
            })?;
        }
        records.push(&levels)?;
    }
    Ok(Dataset {
        codebook: Arc::new(cb.clone()),
        records,
        bins: Vec::new(),
    })
}

fn infer(
    headers: &[String],
    rows: Vec<Vec<String>>,
    options: LoadOptions,
    path: &Path,
) -> Result<Dataset> {
    let mut columns: Vec<Vec<String>> = vec![Vec::with_capacity(rows.len()); headers.len()];
    for row in rows {
        for (c, field) in row.into_iter().enumerate() {
            columns[c].push(field);
        }
    }
    let mut bins = Vec::new();
    if let Some(classes) = options.bin_classes {
        for (name, col) in headers.iter().zip(columns.iter_mut()) {
            let numeric: Option<Vec<f64>> = col
                .iter()
                .filter(|f| *f != MISSING)
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            let Some(values) = numeric else { continue };
            let distinct: HashSet<u64> = values.iter().map(|v| v.to_bits()).collect();
            if distinct.len() <= classes {
                continue;
            }
            let binned = bin_numeric(&values, classes)?;
            let mut it = binned.levels.iter();
            for f in col.iter_mut() {
                if f != MISSING {
                    *f = binned.labels[*it.next().unwrap()].clone();
                }
            }
            bins.push((name.clone(), binned.boundaries));
        }
    }

    let mut variables = Vec::with_capacity(headers.len());
    let mut coded: Vec<Vec<usize>> = Vec::with_capacity(headers.len());
    for (name, col) in headers.iter().zip(&columns) {
        let mut cats: Vec<String> = Vec::new();
        let mut levels = Vec::with_capacity(col.len());
        for f in col {
            let level = match cats.iter().position(|c| c == f) {
                Some(l) => l,
                None => {
                    cats.push(f.clone());
                    cats.len() - 1
                }
            };
            levels.push(level);
        }
        variables.push(Variable {
            name: name.clone(),
            categories: cats,
        });
        coded.push(levels);
    }
    let codebook = Codebook::new(variables).map_err(|e| match e {
        Error::InvalidCodebook(m) => Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: m,
        },
        other => other,
    })?;
    let n = coded.first().map_or(0, Vec::len);
    let mut records = RecordSet::with_capacity(headers.len(), n);
    let mut row = vec![0; headers.len()];
    for i in 0..n {
        for (slot, col) in row.iter_mut().zip(&coded) {
            *slot = col[i];
        }
        records.push(&row)?;
    }
    Ok(Dataset {
        codebook: Arc::new(codebook),
        records,
        bins,
    })
}

/// A numeric column grouped into quantile classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Binned {
    /// Class of each input value.
    pub levels: Vec<usize>,
    /// Upper cut point of every class but the last.
    pub boundaries: Vec<f64>,
    pub labels: Vec<String>,
}

/// Equal-count binning; a value equal to a cut point goes to the lower class.
pub fn bin_numeric(values: &[f64], classes: usize) -> Result<Binned> {
    if classes < 2 {
        return Err(Error::InvalidParameter("need at least 2 classes".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "numeric column holds non-finite values".into(),
        ));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < classes {
        return Err(Error::InvalidParameter(format!(
            "column has {} distinct values, fewer than {classes} classes; use fewer classes",
            distinct.len()
        )));
    }
    let n = sorted.len();
    let boundaries: Vec<f64> = (1..classes)
        .map(|j| sorted[(j * n).div_ceil(classes) - 1])
        .collect();
    let levels = values
        .iter()
        .map(|v| boundaries.partition_point(|b| b < v))
        .collect();
    let mut labels = Vec::with_capacity(classes);
    for j in 0..classes {
        let lo = if j == 0 { sorted[0] } else { boundaries[j - 1] };
        let hi = if j + 1 == classes {
            sorted[n - 1]
        } else {
            boundaries[j]
        };
        let open = if j == 0 { '[' } else { '(' };
        labels.push(format!("{open}{lo},{hi}]"));
    }
    Ok(Binned {
        levels,
        boundaries,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn first_appearance_codebook() {
        let f = write("A,B\na,x\na,y\nb,y\n");
        let d = load_csv(f.path(), None, LoadOptions::default()).unwrap();
        assert_eq!(d.codebook.variables()[0], Variable::new("A", ["a", "b"]));
        assert_eq!(d.codebook.variables()[1], Variable::new("B", ["x", "y"]));
        assert_eq!(
            d.records.to_rows(),
            vec![vec![0, 0], vec![0, 1], vec![1, 1]]
        );
    }

    #[test]
    fn empty_data_needs_codebook() {
        let f = write("A,B\n");
        assert!(load_csv(f.path(), None, LoadOptions::default()).is_err());
        let cb = Codebook::parse("A: a, b\nB: x, y\n", Path::new("cb")).unwrap();
        let d = load_csv(f.path(), Some(&cb), LoadOptions::default()).unwrap();
        assert!(d.records.is_empty());
    }

    #[test]
    fn missing_values_become_a_category() {
        let text = "A,B\na,x\nNA,y\n,y\nb,NA\na,x\n";
        let na_in_a = text
            .lines()
            .skip(1)
            .filter(|l| l.split(',').next().unwrap().is_empty() || l.starts_with("NA"))
            .count();
        let f = write(text);
        let d = load_csv(f.path(), None, LoadOptions::default()).unwrap();
        let a = &d.codebook.variables()[0];
        let miss = a.level_of(MISSING).unwrap();
        let got = d.records.iter().filter(|r| r[0] as usize == miss).count();
        assert_eq!(got, na_in_a);
        assert_eq!(got, 2);
    }

    #[test]
    fn ragged_and_unknown_rows_name_the_line() {
        let f = write("A,B\na,x\nb\n");
        let err = load_csv(f.path(), None, LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let cb = Codebook::parse("A: a, b\nB: x, y\n", Path::new("cb")).unwrap();
        let f = write("A,B\na,x\nc,x\n");
        let err = load_csv(f.path(), Some(&cb), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn codebook_fixes_category_order_and_columns() {
        let cb = Codebook::parse("B: y, x\nA: b, a\n", Path::new("cb")).unwrap();
        let f = write("A,B\na,x\nb,y\n");
        let d = load_csv(f.path(), Some(&cb), LoadOptions::default()).unwrap();
        assert_eq!(d.records.to_rows(), vec![vec![1, 1], vec![0, 0]]);
    }

    #[test]
    fn numeric_columns_are_binned() {
        let mut text = String::from("age,sex\n");
        for i in 0..50 {
            text.push_str(&format!(
                "{},{}\n",
                i * 3,
                if i % 2 == 0 { "m" } else { "f" }
            ));
        }
        text.push_str("NA,m\n");
        let f = write(&text);
        let d = load_csv(
            f.path(),
            None,
            LoadOptions {
                bin_classes: Some(5),
            },
        )
        .unwrap();
        assert_eq!(d.codebook.cardinalities(), &[6, 2]);
        assert_eq!(d.bins.len(), 1);
        assert_eq!(d.bins[0].1, vec![27.0, 57.0, 87.0, 117.0]);
    }

    #[test]
    fn bin_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = bin_numeric(&v, 5).unwrap();
        for c in 0..5 {
            assert_eq!(b.levels.iter().filter(|&&l| l == c).count(), 20);
        }
        assert_eq!(b.boundaries, vec![20.0, 40.0, 60.0, 80.0]);
        assert!(bin_numeric(&[3.0; 10], 5).is_err());
        assert!(bin_numeric(&[1.0, 2.0, 3.0, 4.0], 5).is_err());
    }

    #[test]
    fn skewed_bins_match_sort_and_split() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..235)
            .map(|_| r.random::<f64>().powi(6) * 1000.0)
            .collect();
        let b = bin_numeric(&v, 5).unwrap();
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        for (c, chunk) in sorted.chunks(47).enumerate() {
            for x in chunk {
                let i = v.iter().position(|y| y == x).unwrap();
                assert_eq!(b.levels[i], c);
            }
        }
    }

    #[test]
    fn ties_go_to_the_lower_bin() {
        let v = [1.0, 2.0, 2.0, 2.0, 3.0, 4.0];
        let b = bin_numeric(&v, 2).unwrap();
        assert_eq!(b.boundaries, vec![2.0]);
        assert_eq!(b.levels, vec![0, 0, 0, 0, 1, 1]);
    }
}
