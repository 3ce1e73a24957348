//! Iterative proportional fitting of a joint probability table to target
//! margins.
//!
//! Each sweep visits the targets in the order supplied and rescales every
//! cell by `target / current projection` for the margin cell it falls in.
//! With compatible targets this converges to the maximum-entropy table that
//! reproduces them (relative to the starting table). Noisy margins are
//! generally incompatible; the fit may then settle into a cycle or run to
//! `max_iter`. Either way the result is renormalised and its residual
//! discrepancy reported.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tabulate::{
    projection_map, Codebook, ContingencyTable, MarginSpec, MarginTable, Projection,
    StructuralZeros, TableMode, PROBABILITY_SUM_TOL,
};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Cap on precomputed projection indices (entries of `u32`) before falling
/// back to recomputing projections on the fly.
const PROJECTION_CACHE_LIMIT: usize = 1 << 27;

/// Probability margins to fit.
#[derive(Clone, Debug)]
pub struct IpfTargets {
    targets: Vec<MarginTable>,
}

impl IpfTargets {
    /// Checks unit sums, distinct specs and that every variable is covered.
    pub fn new(codebook: &Codebook, targets: Vec<MarginTable>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidMargin("no target margins".into()));
        }
        let mut covered = vec![false; codebook.num_variables()];
        for (i, t) in targets.iter().enumerate() {
            let spec = &t.spec;
            let spec = MarginSpec::new(spec.indices().to_vec(), codebook)?;
            if t.values.len() != spec.cells(codebook) {
                return Err(Error::InvalidMargin(format!(
                    "target {} has {} cells, expected {}",
                    spec.label(codebook),
                    t.values.len(),
                    spec.cells(codebook)
                )));
            }
            if t.values.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidMargin(format!(
                    "target {} has negative cells",
                    spec.label(codebook)
                )));
            }
            let total = t.total();
            if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
                return Err(Error::InvalidMargin(format!(
                    "target {} sums to {total}",
                    spec.label(codebook)
                )));
            }
            if targets[..i].iter().any(|o| o.spec == spec) {
                return Err(Error::InvalidMargin(format!(
                    "duplicate target {}",
                    spec.label(codebook)
                )));
            }
            for &v in spec.indices() {
                covered[v] = true;
            }
        }
        if let Some(v) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidMargin(format!(
                "variable `{}` is in no target margin",
                codebook.variables()[v].name
            )));
        }
        Ok(IpfTargets { targets })
    }

    pub fn margins(&self) -> &[MarginTable] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct IpfResult {
    pub fitted: ContingencyTable,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute cell change in the final sweep.
    pub last_change: f64,
    /// L∞ distance between the fitted projections and the targets at exit.
    pub max_margin_discrepancy: f64,
}

/// Uniform distribution over the cells that are not structural zeros.
pub fn default_init(
    codebook: Arc<Codebook>,
    structural_zeros: Arc<StructuralZeros>,
) -> Result<ContingencyTable> {
    let k = codebook.total_cells();
    let live = k - structural_zeros.len();
    if live == 0 {
        return Err(Error::AllStructuralZeros);
    }
    let p = 1.0 / live as f64;
    let mut values = vec![p; k];
    for &c in structural_zeros.cells() {
        values[c] = 0.0;
    }
    Ok(ContingencyTable::from_parts(
        codebook,
        values,
        TableMode::Probabilities,
        structural_zeros,
    ))
}

enum Indexer {
    Cached(Vec<u32>),
    OnTheFly,
}

struct Target<'a> {
    spec: &'a MarginSpec,
    values: &'a [f64],
    indexer: Indexer,
}

impl Target<'_> {
    fn project(&self, codebook: &Codebook, table: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.indexer {
            Indexer::Cached(map) => {
                for (&m, &v) in map.iter().zip(table) {
                    out[m as usize] += v;
                }
            }
            Indexer::OnTheFly => {
                for (m, &v) in Projection::new(codebook, self.spec).zip(table) {
                    out[m] += v;
                }
            }
        }
    }

    fn scale(&self, codebook: &Codebook, table: &mut [f64], ratios: &[f64]) {
        match &self.indexer {
            Indexer::Cached(map) => {
                for (&m, v) in map.iter().zip(table.iter_mut()) {
                    *v *= ratios[m as usize];
                }
            }
            Indexer::OnTheFly => {
                for (m, v) in Projection::new(codebook, self.spec).zip(table.iter_mut()) {
                    *v *= ratios[m];
                }
            }
        }
    }
}

/// Fits `init` to `targets` by cyclic proportional scaling.
///
/// Stops once the largest absolute cell change over a full sweep is at most
/// `tol`, or after `max_iter` sweeps. Cells whose current projection is zero
/// stay at zero. The fitted table is renormalised to unit sum on exit.
pub fn ipf_fit(
    init: &ContingencyTable,
    targets: &IpfTargets,
    tol: f64,
    max_iter: usize,
) -> Result<IpfResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ipf tolerance must be positive, got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidParameter("ipf max_iter must be ≥ 1".into()));
    }
    if init.mode() != TableMode::Probabilities {
        return Err(Error::InvalidParameter(
            "ipf starting table must hold probabilities".into(),
        ));
    }
    let codebook = init.codebook().as_ref();
    let zeros = init.structural_zeros();
    if let Some(c) = init
        .values()
        .iter()
        .enumerate()
        .position(|(c, &v)| v <= 0.0 && !zeros.contains(c))
    {
        return Err(Error::InvalidParameter(format!(
            "ipf starting table is zero at cell {c}, which is not a structural zero"
        )));
    }
    for t in targets.margins() {
        MarginSpec::new(t.spec.indices().to_vec(), codebook)?;
        if t.values.len() != t.spec.cells(codebook) {
            return Err(Error::InvalidMargin(format!(
                "target {} does not match the starting table",
                t.spec.label(codebook)
            )));
        }
    }

    let k = codebook.total_cells();
    let cache = k.saturating_mul(targets.len()) <= PROJECTION_CACHE_LIMIT;
    let plan: Vec<Target> = targets
        .margins()
        .iter()
        .map(|t| Target {
            spec: &t.spec,
            values: &t.values,
            indexer: if cache {
                Indexer::Cached(projection_map(codebook, &t.spec))
            } else {
                Indexer::OnTheFly
            },
        })
        .collect();
    let widest = plan.iter().map(|t| t.values.len()).max().unwrap_or(0);
    let mut projection = vec![0.0; widest];
    let mut ratios = vec![0.0; widest];

    let mut fitted = init.values().to_vec();
    let mut previous = fitted.clone();
    let mut iterations = 0;
    let mut converged = false;
    let mut last_change = f64::INFINITY;
    while iterations < max_iter {
        previous.copy_from_slice(&fitted);
        for target in &plan {
            let n = target.values.len();
            target.project(codebook, &fitted, &mut projection[..n]);
            for ((r, &p), &want) in ratios[..n]
                .iter_mut()
                .zip(&projection[..n])
                .zip(target.values)
            {
                *r = if p > 0.0 { want / p } else { 0.0 };
            }
            target.scale(codebook, &mut fitted, &ratios[..n]);
        }
        iterations += 1;
        last_change = fitted
            .iter()
            .zip(&previous)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if last_change <= tol {
            converged = true;
            break;
        }
    }

    let total: f64 = fitted.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("ipf fit lost all mass"));
    }
    fitted.iter_mut().for_each(|v| *v /= total);

    let mut discrepancy: f64 = 0.0;
    for target in &plan {
        let n = target.values.len();
        target.project(codebook, &fitted, &mut projection[..n]);
        for (p, want) in projection[..n].iter().zip(target.values) {
            discrepancy = discrepancy.max((p - want).abs());
        }
    }

    Ok(IpfResult {
        fitted: ContingencyTable::from_parts(
            init.codebook().clone(),
            fitted,
            TableMode::Probabilities,
            zeros.clone(),
        ),
        iterations,
        converged,
        last_change,
        max_margin_discrepancy: discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabulate::{all_margins, marginalize};
    use proptest::prelude::*;

    fn codebook(radices: &[usize]) -> Arc<Codebook> {
        Arc::new(Codebook::from_cardinalities(radices).unwrap())
    }

    fn probs(cb: &Arc<Codebook>, values: Vec<f64>) -> ContingencyTable {
        ContingencyTable::new(
            cb.clone(),
            values,
            TableMode::Probabilities,
            Arc::new(StructuralZeros::none()),
        )
        .unwrap()
    }

    fn margin(cb: &Codebook, idx: &[usize], values: Vec<f64>) -> MarginTable {
        let spec = MarginSpec::new(idx.to_vec(), cb).unwrap();
        MarginTable {
            cardinalities: spec.cardinalities(cb),
            spec,
            values,
            mode: TableMode::Probabilities,
            structural_zeros: vec![],
        }
    }

    fn targets_from(joint: &ContingencyTable, specs: &[MarginSpec]) -> IpfTargets {
        let m = specs
            .iter()
            .map(|s| marginalize(joint, s).unwrap())
            .collect();
        IpfTargets::new(joint.codebook(), m).unwrap()
    }

    #[test]
    fn default_init_examples() {
        let none = Arc::new(StructuralZeros::none());
        let t = default_init(codebook(&[2, 2]), none.clone()).unwrap();
        assert_eq!(t.values(), &[0.25; 4]);
        let cb = codebook(&[2, 2]);
        let z = Arc::new(StructuralZeros::from_cells(&cb, vec![3]).unwrap());
        let t = default_init(cb, z).unwrap();
        assert_eq!(t.values(), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0]);
        let t = default_init(codebook(&[3, 4, 5]), none).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0 / 60.0));
        assert!((t.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_is_a_fixed_point() {
        let cb = codebook(&[2, 2]);
        let init = probs(&cb, vec![0.25; 4]);
        let t = IpfTargets::new(
            &cb,
            vec![
                margin(&cb, &[0], vec![0.5, 0.5]),
                margin(&cb, &[1], vec![0.5, 0.5]),
            ],
        )
        .unwrap();
        let r = ipf_fit(&init, &t, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.fitted.values(), &[0.25; 4]);
    }

    #[test]
    fn one_way_targets_give_product_table() {
        let cb = codebook(&[2, 2]);
        let init = probs(&cb, vec![0.25; 4]);
        let t = IpfTargets::new(
            &cb,
            vec![
                margin(&cb, &[0], vec![0.3, 0.7]),
                margin(&cb, &[1], vec![0.6, 0.4]),
            ],
        )
        .unwrap();
        let r = ipf_fit(&init, &t, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(r.converged);
        for (got, want) in r.fitted.values().iter().zip([0.18, 0.12, 0.42, 0.28]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn recovers_joint_without_three_way_term() {
        // log p = main effects + every two-way term, no three-way term
        let cb = codebook(&[2, 2, 2]);
        let (a, b, c) = (0.3, -0.2, 0.5);
        let (ab, ac, bc) = (0.8, -0.6, 0.4);
        let mut w = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    let (x, y, z) = (i as f64, j as f64, l as f64);
                    w.push((a * x + b * y + c * z + ab * x * y + ac * x * z + bc * y * z).exp());
                }
            }
        }
        let s: f64 = w.iter().sum();
        let joint = probs(&cb, w.iter().map(|v| v / s).collect());
        let t = targets_from(&joint, &all_margins(&cb, 2).unwrap());
        let init = default_init(cb.clone(), Arc::new(StructuralZeros::none())).unwrap();
        let r = ipf_fit(&init, &t, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(r.converged);
        let linf = r
            .fitted
            .values()
            .iter()
            .zip(joint.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(linf < 1e-6, "L∞ {linf}");
    }

    #[test]
    fn structural_zeros_stay_zero() {
        let cb = codebook(&[2, 3]);
        let z = Arc::new(StructuralZeros::from_cells(&cb, vec![2]).unwrap());
        let init = default_init(cb.clone(), z).unwrap();
        let t = IpfTargets::new(
            &cb,
            vec![
                margin(&cb, &[0], vec![0.4, 0.6]),
                margin(&cb, &[1], vec![0.2, 0.3, 0.5]),
            ],
        )
        .unwrap();
        let r = ipf_fit(&init, &t, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(r.fitted.values()[2], 0.0);
        assert!(r.converged);
        assert!(r.max_margin_discrepancy < 1e-7);
    }

    #[test]
    fn incompatible_targets_hit_the_cap() {
        let cb = codebook(&[2, 2]);
        let init = probs(&cb, vec![0.25; 4]);
        // two targets on the same variable with different values cannot both hold
        let t = IpfTargets::new(
            &cb,
            vec![
                margin(&cb, &[0, 1], vec![0.1, 0.2, 0.3, 0.4]),
                margin(&cb, &[0], vec![0.5, 0.5]),
            ],
        )
        .unwrap();
        let r = ipf_fit(&init, &t, DEFAULT_TOL, 50).unwrap();
        assert!(r.iterations <= 50);
        assert!((r.fitted.total() - 1.0).abs() < 1e-9);
        assert!(r.max_margin_discrepancy > 0.01);
    }

    #[test]
    fn invalid_targets_rejected() {
        let cb = codebook(&[2, 2]);
        assert!(IpfTargets::new(&cb, vec![margin(&cb, &[0], vec![0.5, 0.6])]).is_err());
        assert!(
            IpfTargets::new(&cb, vec![margin(&cb, &[0], vec![0.5, 0.5])]).is_err(),
            "V2 uncovered"
        );
        let dup = vec![
            margin(&cb, &[0, 1], vec![0.25; 4]),
            margin(&cb, &[0, 1], vec![0.25; 4]),
        ];
        assert!(IpfTargets::new(&cb, dup).is_err());
        let init = probs(&cb, vec![0.25; 4]);
        let t = IpfTargets::new(&cb, vec![margin(&cb, &[0, 1], vec![0.25; 4])]).unwrap();
        assert!(ipf_fit(&init, &t, 0.0, 10).is_err());
        assert!(ipf_fit(&init, &t, 1e-8, 0).is_err());
    }

    #[test]
    fn uniform_init_keeps_unit_odds_ratio() {
        let cb = codebook(&[2, 2]);
        let init = probs(&cb, vec![0.25; 4]);
        let t = IpfTargets::new(
            &cb,
            vec![
                margin(&cb, &[0], vec![0.15, 0.85]),
                margin(&cb, &[1], vec![0.72, 0.28]),
            ],
        )
        .unwrap();
        let f = ipf_fit(&init, &t, DEFAULT_TOL, DEFAULT_MAX_ITER)
            .unwrap()
            .fitted;
        let v = f.values();
        let or = v[0] * v[3] / (v[1] * v[2]);
        assert!((or - 1.0).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn compatible_targets_are_matched(
            radices in prop::collection::vec(2usize..4, 2..4),
            seed in prop::collection::vec(0.05f64..1.0, 27),
        ) {
            let cb = codebook(&radices);
            let k = cb.total_cells();
            let w: Vec<f64> = (0..k).map(|i| seed[i % seed.len()] * (1.0 + (i / seed.len()) as f64)).collect();
            let s: f64 = w.iter().sum();
            let joint = probs(&cb, w.iter().map(|v| v / s).collect());
            let t = targets_from(&joint, &all_margins(&cb, 2).unwrap());
            let init = default_init(cb.clone(), Arc::new(StructuralZeros::none())).unwrap();
            let r = ipf_fit(&init, &t, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            prop_assert!(r.converged);
            prop_assert!(r.max_margin_discrepancy <= 10.0 * DEFAULT_TOL, "{}", r.max_margin_discrepancy);
            prop_assert!((r.fitted.total() - 1.0).abs() < 1e-9);
            prop_assert!(r.fitted.values().iter().all(|&v| v >= 0.0));
        }
    }
}
