//! Codebooks, dense contingency tables and their projections onto margins.
//!
//! A [`Codebook`] is an ordered list of categorical variables. Its cell space
//! is laid out row-major: the last variable varies fastest, so for
//! cardinalities `(2, 3)` the levels `(1, 2)` sit at cell `1·3 + 2 = 5`.
//! Every table in the crate is a dense `Vec<f64>` over that layout.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ceiling on the number of cells in a cross-tabulation.
pub const DEFAULT_CELL_CEILING: u128 = 100_000_000;

/// Tolerance for the unit-sum invariant of probability tables.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

/// A categorical variable: a name and its ordered category labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub categories: Vec<String>,
}

impl Variable {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Variable {
            name: name.into(),
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    pub fn level_of(&self, label: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == label)
    }
}

/// Ordered variable descriptors defining a mixed-radix cell space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    variables: Vec<Variable>,
    radices: Vec<usize>,
    strides: Vec<usize>,
    total_cells: usize,
}

impl Codebook {
    /// Builds a codebook, enforcing the default cell ceiling.
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        Self::with_ceiling(variables, Some(DEFAULT_CELL_CEILING))
    }

    /// Builds a codebook with an explicit ceiling; `None` disables it.
    pub fn with_ceiling(variables: Vec<Variable>, ceiling: Option<u128>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::InvalidCodebook("no variables".into()));
        }
        let mut names = HashSet::new();
        for var in &variables {
            if !names.insert(var.name.as_str()) {
                return Err(Error::InvalidCodebook(format!(
                    "duplicate variable `{}`",
                    var.name
                )));
            }
            if var.categories.len() < 2 {
                return Err(Error::InvalidCodebook(format!(
                    "variable `{}` has {} categories, need at least 2",
                    var.name,
                    var.categories.len()
                )));
            }
            let mut seen = HashSet::new();
            for c in &var.categories {
                if !seen.insert(c.as_str()) {
                    return Err(Error::InvalidCodebook(format!(
                        "variable `{}` repeats category `{c}`",
                        var.name
                    )));
                }
            }
        }
        let radices: Vec<usize> = variables.iter().map(Variable::cardinality).collect();
        let cells: u128 = radices.iter().map(|&r| r as u128).product();
        if let Some(ceiling) = ceiling {
            if cells > ceiling {
                return Err(Error::TooManyCells { cells, ceiling });
            }
        }
        let total_cells = usize::try_from(cells).map_err(|_| Error::TooManyCells {
            cells,
            ceiling: usize::MAX as u128,
        })?;
        let mut strides = vec![1usize; radices.len()];
        for v in (0..radices.len().saturating_sub(1)).rev() {
            strides[v] = strides[v + 1] * radices[v + 1];
        }
        Ok(Codebook {
            variables,
            radices,
            strides,
            total_cells,
        })
    }

    /// Anonymous codebook with variables `V1, V2, ...` and categories `0, 1, ...`.
    pub fn from_cardinalities(cardinalities: &[usize]) -> Result<Self> {
        let vars = cardinalities
            .iter()
            .enumerate()
            .map(|(i, &r)| Variable::new(format!("V{}", i + 1), (0..r).map(|c| c.to_string())))
            .collect();
        Self::new(vars)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.radices
    }

    /// `k`, the number of cells in the full cross-tabulation.
    pub fn total_cells(&self) -> usize {
        self.total_cells
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Row-major mixed-radix index of a level tuple.
    pub fn cell_index(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.radices.len() {
            return Err(Error::ArityMismatch {
                expected: self.radices.len(),
                found: levels.len(),
            });
        }
        let mut cell = 0;
        for (v, (&level, &radix)) in levels.iter().zip(&self.radices).enumerate() {
            if level >= radix {
                return Err(Error::LevelOutOfRange {
                    variable: self.variables[v].name.clone(),
                    level,
                    cardinality: radix,
                });
            }
            cell += level * self.strides[v];
        }
        Ok(cell)
    }

    /// Inverse of [`Codebook::cell_index`].
    pub fn decode(&self, cell: usize) -> Vec<usize> {
        let mut levels = vec![0; self.radices.len()];
        self.decode_into(cell, &mut levels);
        levels
    }

    pub fn decode_into(&self, mut cell: usize, levels: &mut [usize]) {
        debug_assert!(cell < self.total_cells);
        for v in (0..self.radices.len()).rev() {
            levels[v] = cell % self.radices[v];
            cell /= self.radices[v];
        }
    }

    /// Codebook restricted to the given variable positions, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Codebook> {
        let vars = indices
            .iter()
            .map(|&i| {
                self.variables
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidMargin(format!("variable index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Codebook::with_ceiling(vars, None)
    }

    /// Codebook with one variable removed.
    pub fn without(&self, index: usize) -> Result<Codebook> {
        let keep: Vec<usize> = (0..self.num_variables()).filter(|&i| i != index).collect();
        self.select(&keep)
    }

    /// Parses the text format `name: cat1, cat2, ...`, one variable per line.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str, origin: &Path) -> Result<Codebook> {
        let mut vars = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, cats) = line.split_once(':').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: "expected `name: cat1, cat2, ...`".into(),
            })?;
            let categories: Vec<String> = cats.split(',').map(|c| c.trim().to_string()).collect();
            if categories.iter().any(String::is_empty) {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: "empty category label".into(),
                });
            }
            vars.push(Variable {
                name: name.trim().to_string(),
                categories,
            });
        }
        Codebook::new(vars)
    }

    pub fn read(path: &Path) -> Result<Codebook> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Codebook::parse(&text, path)
    }
}

impl fmt::Display for Codebook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for var in &self.variables {
            writeln!(f, "{}: {}", var.name, var.categories.join(", "))?;
        }
        Ok(())
    }
}

/// Sorted, deduplicated list of structural-zero cell indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StructuralZeros(Vec<usize>);

impl StructuralZeros {
    pub fn none() -> Self {
        StructuralZeros(Vec::new())
    }

    pub fn from_cells(codebook: &Codebook, mut cells: Vec<usize>) -> Result<Self> {
        cells.sort_unstable();
        cells.dedup();
        if let Some(&last) = cells.last() {
            if last >= codebook.total_cells() {
                return Err(Error::InvalidParameter(format!(
                    "structural zero cell {last} outside table of {} cells",
                    codebook.total_cells()
                )));
            }
        }
        Ok(StructuralZeros(cells))
    }

    pub fn from_levels(codebook: &Codebook, tuples: &[Vec<usize>]) -> Result<Self> {
        let cells = tuples
            .iter()
            .map(|t| codebook.cell_index(t))
            .collect::<Result<Vec<_>>>()?;
        Self::from_cells(codebook, cells)
    }

    /// Parses one level tuple per line, given as comma-separated category labels.
    pub fn parse(text: &str, codebook: &Codebook, origin: &Path) -> Result<Self> {
        let mut cells = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message,
            };
            let labels: Vec<&str> = line.split(',').map(str::trim).collect();
            if labels.len() != codebook.num_variables() {
                return Err(err(format!(
                    "expected {} labels, found {}",
                    codebook.num_variables(),
                    labels.len()
                )));
            }
            let levels = labels
                .iter()
                .zip(codebook.variables())
                .map(|(label, var)| {
                    var.level_of(label).ok_or_else(|| {
                        err(format!("unknown category `{label}` for `{}`", var.name))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            cells.push(codebook.cell_index(&levels)?);
        }
        Self::from_cells(codebook, cells)
    }

    pub fn read(path: &Path, codebook: &Codebook) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, codebook, path)
    }

    pub fn cells(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.0.binary_search(&cell).is_ok()
    }
}

/// Records as level tuples, stored flat.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RecordSet {
    arity: usize,
    levels: Vec<u32>,
}

impl RecordSet {
    pub fn new(arity: usize) -> Self {
        RecordSet {
            arity,
            levels: Vec::new(),
        }
    }

    pub fn with_capacity(arity: usize, records: usize) -> Self {
        RecordSet {
            arity,
            levels: Vec::with_capacity(arity * records),
        }
    }

    pub fn from_rows<R: AsRef<[usize]>>(
        arity: usize,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<Self> {
        let mut set = RecordSet::new(arity);
        for row in rows {
            set.push(row.as_ref())?;
        }
        Ok(set)
    }

    pub fn push(&mut self, levels: &[usize]) -> Result<()> {
        if levels.len() != self.arity {
            return Err(Error::ArityMismatch {
                expected: self.arity,
                found: levels.len(),
            });
        }
        self.levels.extend(levels.iter().map(|&l| l as u32));
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn len(&self) -> usize {
        self.levels.len().checked_div(self.arity).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.levels[i * self.arity..(i + 1) * self.arity]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.levels.chunks_exact(self.arity.max(1))
    }

    /// Level tuples as `usize` vectors.
    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.iter()
            .map(|r| r.iter().map(|&l| l as usize).collect())
            .collect()
    }

    pub(crate) fn extend_from(&mut self, other: &RecordSet) {
        debug_assert_eq!(self.arity, other.arity);
        self.levels.extend_from_slice(&other.levels);
    }
}

/// Whether a table holds counts or a probability distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableMode {
    Counts,
    Probabilities,
}

/// Dense table over a codebook's full cell space.
#[derive(Clone, Debug, PartialEq)]
pub struct ContingencyTable {
    codebook: Arc<Codebook>,
    values: Vec<f64>,
    mode: TableMode,
    structural_zeros: Arc<StructuralZeros>,
}

impl ContingencyTable {
    /// Validates length, non-negativity, structural zeros and (for
    /// probabilities) the unit sum.
    pub fn new(
        codebook: Arc<Codebook>,
        values: Vec<f64>,
        mode: TableMode,
        structural_zeros: Arc<StructuralZeros>,
    ) -> Result<Self> {
        if values.len() != codebook.total_cells() {
            return Err(Error::TableMismatch(format!(
                "{} values for a codebook with {} cells",
                values.len(),
                codebook.total_cells()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "cell {i} holds {v}, expected a finite value ≥ 0"
            )));
        }
        if let Some(&c) = structural_zeros.cells().last() {
            if c >= values.len() {
                return Err(Error::TableMismatch(format!(
                    "structural zero {c} outside table"
                )));
            }
        }
        if let Some(&c) = structural_zeros.cells().iter().find(|&&c| values[c] != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "structural-zero cell {c} is non-zero"
            )));
        }
        if mode == TableMode::Probabilities {
            let total: f64 = values.iter().sum();
            if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "probabilities sum to {total}"
                )));
            }
        }
        Ok(ContingencyTable {
            codebook,
            values,
            mode,
            structural_zeros,
        })
    }

    pub(crate) fn from_parts(
        codebook: Arc<Codebook>,
        values: Vec<f64>,
        mode: TableMode,
        structural_zeros: Arc<StructuralZeros>,
    ) -> Self {
        debug_assert_eq!(values.len(), codebook.total_cells());
        ContingencyTable {
            codebook,
            values,
            mode,
            structural_zeros,
        }
    }

    /// All-zero counts table.
    pub fn zeros(codebook: Arc<Codebook>, structural_zeros: Arc<StructuralZeros>) -> Self {
        let k = codebook.total_cells();
        Self::from_parts(codebook, vec![0.0; k], TableMode::Counts, structural_zeros)
    }

    pub fn codebook(&self) -> &Arc<Codebook> {
        &self.codebook
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mode(&self) -> TableMode {
        self.mode
    }

    pub fn structural_zeros(&self) -> &Arc<StructuralZeros> {
        &self.structural_zeros
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sub-table for one level of `variable`, with that variable removed.
    pub fn slice(&self, variable: usize, level: usize) -> Result<ContingencyTable> {
        let cb = &self.codebook;
        if variable >= cb.num_variables() || level >= cb.cardinalities()[variable] {
            return Err(Error::InvalidParameter(format!(
                "cannot slice variable {variable} at level {level}"
            )));
        }
        let sub = Arc::new(cb.without(variable)?);
        let stride = cb.strides[variable];
        let radix = cb.cardinalities()[variable];
        let outer = cb.total_cells() / (stride * radix);
        let mut values = Vec::with_capacity(sub.total_cells());
        for o in 0..outer {
            let base = o * stride * radix + level * stride;
            values.extend_from_slice(&self.values[base..base + stride]);
        }
        let zeros: Vec<usize> = self
            .structural_zeros
            .cells()
            .iter()
            .filter(|&&c| (c / stride) % radix == level)
            .map(|&c| (c / (stride * radix)) * stride + c % stride)
            .collect();
        let zeros = Arc::new(StructuralZeros::from_cells(&sub, zeros)?);
        Ok(Self::from_parts(sub, values, self.mode, zeros))
    }
}

/// Cross-tabulates records into a counts table.
pub fn build_table(
    records: &RecordSet,
    codebook: Arc<Codebook>,
    structural_zeros: Arc<StructuralZeros>,
) -> Result<ContingencyTable> {
    if records.arity() != codebook.num_variables() && !records.is_empty() {
        return Err(Error::ArityMismatch {
            expected: codebook.num_variables(),
            found: records.arity(),
        });
    }
    let mut values = vec![0.0; codebook.total_cells()];
    let mut levels = vec![0usize; codebook.num_variables()];
    for record in records.iter() {
        for (l, &r) in levels.iter_mut().zip(record) {
            *l = r as usize;
        }
        let cell = codebook.cell_index(&levels)?;
        values[cell] += 1.0;
    }
    if let Some(&cell) = structural_zeros.cells().iter().find(|&&c| values[c] != 0.0) {
        return Err(Error::RecordInStructuralZero { cell });
    }
    Ok(ContingencyTable::from_parts(
        codebook,
        values,
        TableMode::Counts,
        structural_zeros,
    ))
}

/// A subset of variables, held as strictly increasing positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarginSpec(Vec<usize>);

impl MarginSpec {
    /// Sorts the indices; rejects empty sets, duplicates and out-of-range positions.
    pub fn new(mut indices: Vec<usize>, codebook: &Codebook) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidMargin("empty margin".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidMargin(format!(
                "duplicate variable in {indices:?}"
            )));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= codebook.num_variables()) {
            return Err(Error::InvalidMargin(format!(
                "variable index {i} out of range for {} variables",
                codebook.num_variables()
            )));
        }
        Ok(MarginSpec(indices))
    }

    /// Wraps indices already known to be sorted, distinct and in range.
    pub(crate) fn from_sorted(indices: Vec<usize>) -> Self {
        MarginSpec(indices)
    }

    /// Margin over every variable.
    pub fn full(codebook: &Codebook) -> Self {
        MarginSpec((0..codebook.num_variables()).collect())
    }

    /// Parses variable names separated by `+` or `,` (e.g. `age+sex`).
    pub fn parse(text: &str, codebook: &Codebook) -> Result<Self> {
        let indices = text
            .split(['+', ','])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| {
                codebook
                    .variable_index(name)
                    .ok_or_else(|| Error::InvalidMargin(format!("unknown variable `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(indices, codebook)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn cardinalities(&self, codebook: &Codebook) -> Vec<usize> {
        self.0
            .iter()
            .map(|&i| codebook.cardinalities()[i])
            .collect()
    }

    pub fn cells(&self, codebook: &Codebook) -> usize {
        self.0
            .iter()
            .map(|&i| codebook.cardinalities()[i])
            .product()
    }

    fn validate(&self, codebook: &Codebook) -> Result<()> {
        if self.0.is_empty() || self.0.iter().any(|&i| i >= codebook.num_variables()) {
            return Err(Error::InvalidMargin(format!(
                "{self:?} invalid for codebook"
            )));
        }
        Ok(())
    }

    /// Variable names joined with `+`.
    pub fn label(&self, codebook: &Codebook) -> String {
        self.0
            .iter()
            .map(|&i| codebook.variables()[i].name.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Projected table over the cells of a margin.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginTable {
    pub spec: MarginSpec,
    pub cardinalities: Vec<usize>,
    pub values: Vec<f64>,
    pub mode: TableMode,
    /// Margin cells whose every full-table cell is a structural zero.
    pub structural_zeros: Vec<usize>,
}

impl MarginTable {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Yields, for every full-table cell in order, the index of the margin cell
/// it projects onto. Amortised O(1) per cell.
#[derive(Clone, Debug)]
pub struct Projection {
    radices: Vec<usize>,
    margin_strides: Vec<usize>,
    levels: Vec<usize>,
    current: usize,
    remaining: usize,
}

impl Projection {
    pub fn new(codebook: &Codebook, spec: &MarginSpec) -> Self {
        let mut margin_strides = vec![0usize; codebook.num_variables()];
        let mut stride = 1;
        for &v in spec.indices().iter().rev() {
            margin_strides[v] = stride;
            stride *= codebook.cardinalities()[v];
        }
        Projection {
            radices: codebook.cardinalities().to_vec(),
            margin_strides,
            levels: vec![0; codebook.num_variables()],
            current: 0,
            remaining: codebook.total_cells(),
        }
    }
}

impl Iterator for Projection {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let out = self.current;
        for v in (0..self.radices.len()).rev() {
            self.levels[v] += 1;
            if self.levels[v] < self.radices[v] {
                self.current += self.margin_strides[v];
                break;
            }
            self.levels[v] = 0;
            self.current -= (self.radices[v] - 1) * self.margin_strides[v];
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for Projection {}

/// Margin-cell index of every full-table cell.
pub(crate) fn projection_map(codebook: &Codebook, spec: &MarginSpec) -> Vec<u32> {
    Projection::new(codebook, spec).map(|m| m as u32).collect()
}

/// Sums `values` (laid out over `codebook`) onto the cells of `spec`.
pub(crate) fn project_values(codebook: &Codebook, spec: &MarginSpec, values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; spec.cells(codebook)];
    for (v, m) in values.iter().zip(Projection::new(codebook, spec)) {
        out[m] += v;
    }
    out
}

/// Margin cells that contain only structural zeros.
pub(crate) fn margin_structural_zeros(
    codebook: &Codebook,
    spec: &MarginSpec,
    zeros: &StructuralZeros,
) -> Vec<usize> {
    if zeros.is_empty() {
        return Vec::new();
    }
    let mut live = vec![0usize; spec.cells(codebook)];
    for (cell, m) in Projection::new(codebook, spec).enumerate() {
        if !zeros.contains(cell) {
            live[m] += 1;
        }
    }
    live.iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(m, _)| m)
        .collect()
}

/// Projects a table onto a margin.
pub fn marginalize(table: &ContingencyTable, spec: &MarginSpec) -> Result<MarginTable> {
    let cb = table.codebook();
    spec.validate(cb)?;
    Ok(MarginTable {
        spec: spec.clone(),
        cardinalities: spec.cardinalities(cb),
        values: project_values(cb, spec, table.values()),
        mode: table.mode(),
        structural_zeros: margin_structural_zeros(cb, spec, table.structural_zeros()),
    })
}

/// Every subset of `order` variables, in lexicographic order.
pub fn all_margins(codebook: &Codebook, order: usize) -> Result<Vec<MarginSpec>> {
    let v = codebook.num_variables();
    if order == 0 || order > v {
        return Err(Error::InvalidMargin(format!(
            "order {order} outside 1..={v}"
        )));
    }
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..order).collect();
    loop {
        out.push(MarginSpec(combo.clone()));
        // advance to the next combination
        let mut i = order;
        while i > 0 && combo[i - 1] == v - order + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        combo[i - 1] += 1;
        for j in i..order {
            combo[j] = combo[j - 1] + 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cb(radices: &[usize]) -> Arc<Codebook> {
        Arc::new(Codebook::from_cardinalities(radices).unwrap())
    }

    fn none() -> Arc<StructuralZeros> {
        Arc::new(StructuralZeros::none())
    }

    #[test]
    fn cell_index_examples() {
        let c = cb(&[2, 3]);
        assert_eq!(c.cell_index(&[1, 2]).unwrap(), 5);
        assert_eq!(c.cell_index(&[0, 0]).unwrap(), 0);
    }

    #[test]
    fn cell_index_out_of_range_names_variable() {
        let c = cb(&[2, 3]);
        match c.cell_index(&[0, 3]) {
            Err(Error::LevelOutOfRange { variable, .. }) => assert_eq!(variable, "V2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_round_trips_every_cell() {
        let c = cb(&[3, 4, 5]);
        let mut n = 0;
        for a in 0..3 {
            for b in 0..4 {
                for d in 0..5 {
                    let cell = c.cell_index(&[a, b, d]).unwrap();
                    assert_eq!(cell, n, "row-major order");
                    assert_eq!(c.decode(cell), vec![a, b, d]);
                    n += 1;
                }
            }
        }
        assert_eq!(n, 60);
    }

    #[test]
    fn codebook_invariants() {
        assert!(Codebook::new(vec![Variable::new("a", ["x"])]).is_err());
        assert!(Codebook::new(vec![Variable::new("a", ["x", "x"])]).is_err());
        assert!(matches!(
            Codebook::from_cardinalities(&[1000, 1000, 1000]),
            Err(Error::TooManyCells { .. })
        ));
        let vars = vec![Variable::new("a", (0..1000).map(|i| i.to_string())); 3]
            .into_iter()
            .enumerate()
            .map(|(i, mut v)| {
                v.name = format!("v{i}");
                v
            })
            .collect();
        assert_eq!(
            Codebook::with_ceiling(vars, None).unwrap().total_cells(),
            1_000_000_000
        );
    }

    #[test]
    fn codebook_text_round_trip() {
        let text = "sex: male, female\n# comment\n\nregion: north, south, east\n";
        let c = Codebook::parse(text, Path::new("cb.txt")).unwrap();
        assert_eq!(c.cardinalities(), &[2, 3]);
        assert_eq!(c.variables()[1].categories[2], "east");
        let again = Codebook::parse(&c.to_string(), Path::new("x")).unwrap();
        assert_eq!(again, c);
        assert!(Codebook::parse("bad line", Path::new("x")).is_err());
    }

    #[test]
    fn structural_zero_file() {
        let c = Codebook::parse("a: x, y\nb: p, q, r\n", Path::new("cb")).unwrap();
        let z = StructuralZeros::parse("y, r\nx,p\n", &c, Path::new("z")).unwrap();
        assert_eq!(z.cells(), &[0, 5]);
        assert!(StructuralZeros::parse("y, s\n", &c, Path::new("z")).is_err());
    }

    #[test]
    fn build_table_direct_count() {
        let c = cb(&[2, 2]);
        let recs = RecordSet::from_rows(2, [[0, 0], [0, 1], [1, 1], [1, 1]]).unwrap();
        let t = build_table(&recs, c.clone(), none()).unwrap();
        assert_eq!(t.values(), &[1.0, 1.0, 0.0, 2.0]);
        let empty = build_table(&RecordSet::new(2), c, none()).unwrap();
        assert_eq!(empty.values(), &[0.0; 4]);
    }

    #[test]
    fn build_table_rejects_structural_zero_and_bad_level() {
        let c = cb(&[2, 2]);
        let z = Arc::new(StructuralZeros::from_cells(&c, vec![3]).unwrap());
        let recs = RecordSet::from_rows(2, [[1, 1]]).unwrap();
        assert!(matches!(
            build_table(&recs, c.clone(), z),
            Err(Error::RecordInStructuralZero { cell: 3 })
        ));
        let recs = RecordSet::from_rows(2, [[2, 0]]).unwrap();
        assert!(build_table(&recs, c, none()).is_err());
    }

    #[test]
    fn build_table_matches_hash_count_oracle() {
        let c = cb(&[3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<[usize; 2]> = (0..500)
            .map(|_| [rng.random_range(0..3), rng.random_range(0..4)])
            .collect();
        let mut oracle: HashMap<[usize; 2], usize> = HashMap::new();
        for r in &rows {
            *oracle.entry(*r).or_default() += 1;
        }
        let t = build_table(&RecordSet::from_rows(2, &rows).unwrap(), c, none()).unwrap();
        for a in 0..3 {
            for b in 0..4 {
                let want = oracle.get(&[a, b]).copied().unwrap_or(0) as f64;
                assert_eq!(t.values()[a * 4 + b], want);
            }
        }
        assert_eq!(t.total(), 500.0);
    }

    #[test]
    fn marginalize_examples() {
        let c = cb(&[2, 2]);
        let t = ContingencyTable::new(
            c.clone(),
            vec![1.0, 1.0, 0.0, 2.0],
            TableMode::Counts,
            none(),
        )
        .unwrap();
        let m = marginalize(&t, &MarginSpec::new(vec![0], &c).unwrap()).unwrap();
        assert_eq!(m.values, vec![2.0, 2.0]);
        let m = marginalize(&t, &MarginSpec::new(vec![1], &c).unwrap()).unwrap();
        assert_eq!(m.values, vec![1.0, 3.0]);
        let full = marginalize(&t, &MarginSpec::full(&c)).unwrap();
        assert_eq!(full.values, t.values());
    }

    #[test]
    fn marginalize_matches_nested_loop_oracle() {
        let c = cb(&[3, 2, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..24).map(|_| rng.random_range(0..10) as f64).collect();
        let t =
            ContingencyTable::new(c.clone(), values.clone(), TableMode::Counts, none()).unwrap();
        let m = marginalize(&t, &MarginSpec::new(vec![2, 0], &c).unwrap()).unwrap();
        let mut oracle = [[0.0; 4]; 3];
        for a in 0..3 {
            for b in 0..2 {
                for d in 0..4 {
                    oracle[a][d] += values[(a * 2 + b) * 4 + d];
                }
            }
        }
        let flat: Vec<f64> = oracle.iter().flatten().copied().collect();
        assert_eq!(m.values, flat);
        assert_eq!(m.cardinalities, vec![3, 4]);
    }

    #[test]
    fn margin_structural_zeros_need_every_cell_zero() {
        let c = cb(&[2, 2]);
        let z = Arc::new(StructuralZeros::from_cells(&c, vec![2, 3]).unwrap());
        let t = ContingencyTable::new(c.clone(), vec![1.0, 1.0, 0.0, 0.0], TableMode::Counts, z)
            .unwrap();
        let a = marginalize(&t, &MarginSpec::new(vec![0], &c).unwrap()).unwrap();
        assert_eq!(a.structural_zeros, vec![1]);
        let b = marginalize(&t, &MarginSpec::new(vec![1], &c).unwrap()).unwrap();
        assert!(b.structural_zeros.is_empty());
    }

    #[test]
    fn all_margins_counts_and_order() {
        let c5 = cb(&[2; 5]);
        let m = all_margins(&c5, 2).unwrap();
        assert_eq!(m.len(), 10);
        assert_eq!(m[0].indices(), &[0, 1]);
        assert_eq!(m[9].indices(), &[3, 4]);
        assert!(m.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(all_margins(&cb(&[2; 7]), 3).unwrap().len(), 35);
        let c3 = cb(&[2, 3, 4]);
        assert_eq!(all_margins(&c3, 3).unwrap(), vec![MarginSpec::full(&c3)]);
        assert!(all_margins(&c3, 0).is_err());
        assert!(all_margins(&c3, 4).is_err());
    }

    #[test]
    fn margin_spec_validation() {
        let c = cb(&[2, 2, 2]);
        assert_eq!(MarginSpec::new(vec![2, 0], &c).unwrap().indices(), &[0, 2]);
        assert!(MarginSpec::new(vec![], &c).is_err());
        assert!(MarginSpec::new(vec![1, 1], &c).is_err());
        assert!(MarginSpec::new(vec![3], &c).is_err());
        assert_eq!(MarginSpec::parse("V3+V1", &c).unwrap().indices(), &[0, 2]);
        assert!(MarginSpec::parse("V9", &c).is_err());
    }

    #[test]
    fn slice_keeps_matching_cells_and_zeros() {
        let c = cb(&[2, 3, 2]);
        let values: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let z = Arc::new(StructuralZeros::none());
        let t = ContingencyTable::new(c.clone(), values, TableMode::Counts, z).unwrap();
        let s = t.slice(1, 2).unwrap();
        assert_eq!(s.codebook().cardinalities(), &[2, 2]);
        assert_eq!(s.values(), &[4.0, 5.0, 10.0, 11.0]);

        let mut values = vec![1.0; 12];
        values[c.cell_index(&[1, 2, 0]).unwrap()] = 0.0;
        let z = Arc::new(StructuralZeros::from_levels(&c, &[vec![1, 2, 0]]).unwrap());
        let t = ContingencyTable::new(c, values, TableMode::Counts, z).unwrap();
        assert_eq!(t.slice(1, 2).unwrap().structural_zeros().cells(), &[2]);
        assert!(t.slice(1, 1).unwrap().structural_zeros().is_empty());
    }

    fn table_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
        prop::collection::vec(2usize..4, 1..5).prop_flat_map(|radices| {
            let k: usize = radices.iter().product();
            (
                Just(radices),
                prop::collection::vec((0u32..20).prop_map(f64::from), k),
            )
        })
    }

    proptest! {
        #[test]
        fn marginalize_preserves_total((radices, values) in table_strategy(), pick in any::<u64>()) {
            let c = cb(&radices);
            let t = ContingencyTable::new(c.clone(), values, TableMode::Counts, none()).unwrap();
            let idx: Vec<usize> = (0..radices.len()).filter(|i| pick >> i & 1 == 1).collect();
            prop_assume!(!idx.is_empty());
            let m = marginalize(&t, &MarginSpec::new(idx, &c).unwrap()).unwrap();
            prop_assert_eq!(m.total(), t.total());
        }

        #[test]
        fn marginalize_nests((radices, values) in table_strategy()) {
            prop_assume!(radices.len() >= 2);
            let c = cb(&radices);
            let t = ContingencyTable::new(c.clone(), values, TableMode::Counts, none()).unwrap();
            let ab = MarginSpec::new(vec![0, 1], &c).unwrap();
            let a = MarginSpec::new(vec![0], &c).unwrap();
            let direct = marginalize(&t, &a).unwrap();
            let via = marginalize(&t, &ab).unwrap();
            let sub = Arc::new(c.select(&[0, 1]).unwrap());
            let via_table = ContingencyTable::new(sub.clone(), via.values, TableMode::Counts, none()).unwrap();
            let nested = marginalize(&via_table, &MarginSpec::new(vec![0], &sub).unwrap()).unwrap();
            prop_assert_eq!(nested.values, direct.values);
        }
    }
}
