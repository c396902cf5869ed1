//! Scores for computed factorizations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::tensor::{DenseTensor, Shape, SparseSamples};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub fms: f64,
    /// `assignment[r]` is the computed component matched to true component `r`.
    pub assignment: Vec<usize>,
    /// Score of each matched pair, in true-component order.
    pub congruences: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tcs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

fn check_compatible(a: &KruskalModel, b: &KruskalModel) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("models of shape {} and {}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `score[r, s]`: weight agreement times the product over modes of the
/// absolute cosine between column `r` of `truth` and column `s` of
/// `computed`. Both models must already be normalized.
fn pair_scores(truth: &KruskalModel, computed: &KruskalModel) -> DMatrix<f64> {
    let (lt, lc) = (truth.lambda(), computed.lambda());
    let mut score = DMatrix::from_fn(truth.rank(), computed.rank(), |r, s| {
        let hi = lt[r].max(lc[s]);
        if hi == 0.0 {
            1.0
        } else {
            1.0 - (lt[r] - lc[s]).abs() / hi
        }
    });
    for (a, b) in truth.factors().iter().zip(computed.factors()) {
        let c = a.transpose() * b;
        score.component_mul_assign(&c.abs());
    }
    score
}

fn prepare(truth: &KruskalModel, computed: &KruskalModel) -> Result<DMatrix<f64>> {
    check_compatible(truth, computed)?;
    let t = truth.normalize().model;
    let c = computed.padded(truth.rank()).normalize().model;
    Ok(pair_scores(&t, &c))
}

fn report(score: &DMatrix<f64>, assignment: Vec<usize>) -> ScoreReport {
    let congruences: Vec<f64> = assignment.iter().enumerate().map(|(r, &s)| score[(r, s)]).collect();
    let fms = congruences.iter().sum::<f64>() / congruences.len() as f64;
    ScoreReport {
        fms,
        assignment,
        congruences,
        tcs: None,
        rho: None,
    }
}

/// Factor match score, maximized over injective matchings of the true
/// components into the computed ones.
///
/// Both models are normalized first; a computed model of lower rank is
/// padded with zero components, which score 0.
pub fn fms(truth: &KruskalModel, computed: &KruskalModel) -> Result<ScoreReport> {
    let score = prepare(truth, computed)?;
    let cost = score.map(|v| -v);
    Ok(report(&score, min_cost_assignment(&cost)))
}

/// [`fms`] by enumerating every matching; only practical for small ranks.
pub fn fms_exhaustive(truth: &KruskalModel, computed: &KruskalModel) -> Result<ScoreReport> {
    let score = prepare(truth, computed)?;
    let (rows, cols) = score.shape();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut cur = Vec::with_capacity(rows);
    let mut used = vec![false; cols];
    fn search(
        score: &DMatrix<f64>,
        cur: &mut Vec<usize>,
        used: &mut [bool],
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        let r = cur.len();
        if r == score.nrows() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        for s in 0..score.ncols() {
            if !used[s] {
                used[s] = true;
                cur.push(s);
                search(score, cur, used, acc + score[(r, s)], best);
                cur.pop();
                used[s] = false;
            }
        }
    }
    search(&score, &mut cur, &mut used, 0.0, &mut best);
    Ok(report(&score, best.1))
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`), by shortest augmenting paths with potentials.
pub fn min_cost_assignment(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    assert!(n <= m, "more rows than columns");
    // 1-based internal indexing; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Relative error on the missing entries:
/// `‖(1 − W) ∗ (X − ⟦M⟧)‖ / ‖(1 − W) ∗ X‖`.
pub fn tcs(x_true: &DenseTensor, w: &DenseTensor, model: &KruskalModel) -> Result<f64> {
    if x_true.shape() != w.shape() || &model.shape() != x_true.shape() {
        return Err(Error::ShapeMismatch(format!(
            "data {}, weights {}, model {}",
            x_true.shape(),
            w.shape(),
            model.shape()
        )));
    }
    w.check_binary()?;
    if w.data().iter().all(|&v| v == 1.0) {
        return Err(Error::InvalidParameter("no missing entries to score".into()));
    }
    let full = model.full();
    let (mut num, mut den) = (0.0, 0.0);
    for ((&x, &wv), &m) in x_true.data().iter().zip(w.data()).zip(full.data()) {
        if wv == 0.0 {
            num += (x - m).powi(2);
            den += x * x;
        }
    }
    ratio(num, den)
}

/// [`tcs`] over held-out entries given in coordinate form.
pub fn tcs_holdout(holdout: &SparseSamples, model: &KruskalModel) -> Result<f64> {
    let z = model.values_at_samples(holdout)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &m) in holdout.values().iter().zip(&z) {
        num += (x - m).powi(2);
        den += x * x;
    }
    ratio(num, den)
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::InvalidParameter("missing entries have zero norm".into()));
    }
    Ok((num / den).sqrt())
}

/// Known entries per model degree of freedom,
/// `(1 − M) ∏ I_n / (R (Σ I_n − N + 2) + 1)`.
///
/// For three modes the denominator is `R (I + J + K − 1) + 1`; other mode
/// counts use the same per-component count with the `N − 1` scaling
/// indeterminacies removed.
pub fn rho(shape: &Shape, rank: usize, m: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidParameter(format!("missing fraction {m} not in [0, 1)")));
    }
    let total = shape.dims().iter().map(|&d| d as f64).product::<f64>();
    let dof = rank as f64 * (shape.sum() as f64 - shape.ndims() as f64 + 2.0) + 1.0;
    Ok((1.0 - m) * total / dof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_factors;
    use proptest::prelude::*;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn identical_models_score_one() {
        let m = gen_factors(&shape(&[6, 5, 4]), 3, 1).unwrap();
        let r = fms(&m, &m).unwrap();
        assert!((r.fms - 1.0).abs() < 1e-12);
        assert_eq!(r.assignment, vec![0, 1, 2]);
    }

    #[test]
    fn permutation_and_paired_sign_flips_score_one() {
        let m = gen_factors(&shape(&[6, 5, 4]), 3, 2).unwrap();
        let perm = [2, 0, 1];
        let mut factors: Vec<_> = m
            .factors()
            .iter()
            .map(|f| nalgebra::DMatrix::from_fn(f.nrows(), 3, |i, j| f[(i, perm[j])]))
            .collect();
        factors[0].column_mut(1).neg_mut();
        factors[2].column_mut(1).neg_mut();
        let p = KruskalModel::from_factors(factors).unwrap();
        let r = fms(&m, &p).unwrap();
        assert!((r.fms - 1.0).abs() < 1e-12);
        assert_eq!(r.assignment, vec![1, 2, 0]);
    }

    // Hand case: a truth with orthonormal columns, and a computed model whose
    // matched columns have cosines 0.9 and 0.8 in every mode.
    #[test]
    fn two_component_hand_case() {
        let e = |i: usize| nalgebra::DVector::from_fn(4, |k, _| if k == i { 1.0 } else { 0.0 });
        let mix = |a: usize, b: usize, c: f64| e(a) * c + e(b) * (1.0 - c * c).sqrt();
        let truth_col = |r: usize| if r == 0 { e(0) } else { e(1) };
        let truth = KruskalModel::from_factors(
            (0..3)
                .map(|_| nalgebra::DMatrix::from_columns(&[truth_col(0), truth_col(1)]))
                .collect(),
        )
        .unwrap();
        // computed col 0 matches truth col 1 with cosine 0.8; col 1 matches truth col 0 with 0.9.
        let computed = KruskalModel::from_factors(
            (0..3)
                .map(|_| nalgebra::DMatrix::from_columns(&[mix(1, 3, 0.8), mix(0, 2, 0.9)]))
                .collect(),
        )
        .unwrap();
        let r = fms(&truth, &computed).unwrap();
        assert!((r.fms - 0.6205).abs() < 1e-12, "{}", r.fms);
        assert_eq!(r.assignment, vec![1, 0]);
        assert_eq!(fms_exhaustive(&truth, &computed).unwrap().fms, r.fms);
    }

    #[test]
    fn lower_rank_is_padded() {
        let t = gen_factors(&shape(&[5, 4, 3]), 2, 3).unwrap();
        let (factors, _) = t.clone().into_parts();
        let one = KruskalModel::from_factors(factors.iter().map(|f| f.columns(0, 1).into_owned()).collect()).unwrap();
        let r = fms(&t, &one).unwrap();
        assert!((r.fms - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = gen_factors(&shape(&[5, 4, 3]), 2, 3).unwrap();
        let b = gen_factors(&shape(&[5, 4, 2]), 2, 3).unwrap();
        assert!(matches!(fms(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn assignment_handles_rectangular_costs() {
        let c = DMatrix::from_row_slice(2, 4, &[5.0, 1.0, 9.0, 2.0, 1.0, 8.0, 9.0, 9.0]);
        assert_eq!(min_cost_assignment(&c), vec![1, 0]);
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        assert_eq!(min_cost_assignment(&c), vec![1, 0, 2]);
    }

    #[test]
    fn tcs_basics() {
        let s = shape(&[4, 3, 2]);
        let m = gen_factors(&s, 2, 5).unwrap();
        let x = m.full();
        let w = crate::datagen::gen_missing_random(&s, 0.5, 5).unwrap();
        assert!(tcs(&x, &w, &m).unwrap() < 1e-15);
        let zero = KruskalModel::zeros(&s, 2).unwrap();
        assert!((tcs(&x, &w, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!(tcs(&x, &DenseTensor::ones(s.clone()), &m).is_err());
        let holdout = SparseSamples::from_dense_masked(&x, &w.map(|v| 1.0 - v)).unwrap();
        assert!((tcs_holdout(&holdout, &zero).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tcs_matches_loop() {
        let s = shape(&[5, 4, 3]);
        let m = gen_factors(&s, 2, 6).unwrap();
        let other = gen_factors(&s, 2, 7).unwrap();
        let x = m.full();
        let w = crate::datagen::gen_missing_random(&s, 0.4, 6).unwrap();
        let xo = other.full();
        let (mut num, mut den) = (0.0, 0.0);
        let mut idx = [0; 3];
        for lin in 0..s.numel() {
            s.multi_index(lin, &mut idx);
            if w.get(&idx) == 0.0 {
                num += (x.get(&idx) - xo.get(&idx)).powi(2);
                den += x.get(&idx).powi(2);
            }
        }
        assert!((tcs(&x, &w, &other).unwrap() - (num / den).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rho_values() {
        let r = rho(&shape(&[50, 40, 30]), 5, 0.95).unwrap();
        assert!((r - 3000.0 / 596.0).abs() < 1e-9);
        assert!((r - 5.03).abs() < 0.01);
        let r = rho(&shape(&[100, 80, 60]), 5, 0.95).unwrap();
        assert!((r - 20.07).abs() < 0.01);
        let r = rho(&shape(&[2, 2, 2]), 1, 0.0).unwrap();
        assert!((r - 8.0 / 6.0).abs() < 1e-15);
        assert!(rho(&shape(&[2, 2, 2]), 1, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn assignment_equals_exhaustive(rt in 1usize..6, extra in 0usize..3, seed in any::<u64>()) {
            let s = shape(&[4, 3, 3]);
            let a = gen_factors(&s, rt, seed).unwrap();
            let b = gen_factors(&s, rt + extra, seed ^ 0x5555).unwrap();
            let h = fms(&a, &b).unwrap();
            let e = fms_exhaustive(&a, &b).unwrap();
            prop_assert!((h.fms - e.fms).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&h.fms));
        }
    }
}
