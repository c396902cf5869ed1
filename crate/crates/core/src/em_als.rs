//! EM-ALS: impute the missing entries from the current model, then run one
//! alternating least-squares sweep on the completed tensor.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{FitOutput, StartRecord};
use crate::kernels;
use crate::kruskal::{FactorMatrix, KruskalModel};
use crate::optimizer::{OptResult, StopReason};
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmAlsConfig {
    pub rank: usize,
    /// Sweep cap; each sweep costs one model evaluation.
    pub max_iters: usize,
    /// Stop when `|f_{k-1} - f_k| / max(1, |f_{k-1}|)` falls to this value,
    /// `f` being the objective on the known entries only.
    pub rel_f_tol: f64,
    pub seed: u64,
}

impl Default for EmAlsConfig {
    fn default() -> Self {
        EmAlsConfig {
            rank: 1,
            max_iters: 10_000,
            rel_f_tol: 1e-8,
            seed: 0,
        }
    }
}

impl EmAlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.max_iters == 0 || !(self.rel_f_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("bad EM-ALS settings {self:?}")));
        }
        Ok(())
    }
}

fn check_pair(x: &DenseTensor, w: &DenseTensor, model: &KruskalModel) -> Result<()> {
    if x.shape() != w.shape() || &model.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "data {}, weights {}, model {}",
            x.shape(),
            w.shape(),
            model.shape()
        )));
    }
    w.check_binary()
}

/// `X̄ = W ∗ X + (1 − W) ∗ ⟦M⟧`.
pub fn impute(x: &DenseTensor, w: &DenseTensor, model: &KruskalModel) -> Result<DenseTensor> {
    check_pair(x, w, model)?;
    let mut full = model.full().into_data();
    impute_into(x.data(), w.data(), &mut full);
    DenseTensor::new(x.shape().clone(), full)
}

fn impute_into(x: &[f64], w: &[f64], full: &mut [f64]) {
    for ((m, &xv), &wv) in full.iter_mut().zip(x).zip(w) {
        if wv != 0.0 {
            *m = xv;
        }
    }
}

fn pinv(v: DMatrix<f64>) -> DMatrix<f64> {
    let rank = v.nrows();
    let svd = v.svd(true, true);
    let tol = rank as f64 * f64::EPSILON * svd.singular_values.max();
    svd.pseudo_inverse(tol).expect("both singular vector sets were computed")
}

fn sweep_in_place(data: &[f64], dims: &[usize], factors: &mut [FactorMatrix]) {
    let rank = factors[0].ncols();
    let mut m = DMatrix::zeros(0, 0);
    for n in 0..factors.len() {
        let mut v = DMatrix::from_element(rank, rank, 1.0);
        for (k, a) in factors.iter().enumerate() {
            if k != n {
                v.component_mul_assign(&(a.transpose() * a));
            }
        }
        m.resize_mut(dims[n], rank, 0.0);
        kernels::mttkrp_dense_raw(data, dims, factors, n, &mut m);
        factors[n] = &m * pinv(v);
    }
}

/// One ALS sweep on a complete tensor: for each mode in turn,
/// `A^(n) ← X̄_(n) A^(−n) (∗_{m≠n} A^(m)ᵀ A^(m))⁺`, using the modes already
/// updated in this sweep. Weights of `model` are folded in first.
pub fn als_sweep(xbar: &DenseTensor, model: &KruskalModel) -> Result<KruskalModel> {
    if &model.shape() != xbar.shape() {
        return Err(Error::ShapeMismatch(format!(
            "model {} vs data {}",
            model.shape(),
            xbar.shape()
        )));
    }
    let (mut factors, _) = model.absorb_lambda().into_parts();
    sweep_in_place(xbar.data(), xbar.shape().dims(), &mut factors);
    KruskalModel::from_factors(factors)
}

fn known_objective(x: &[f64], w: &[f64], full: &[f64]) -> f64 {
    0.5 * x
        .iter()
        .zip(w)
        .zip(full)
        .map(|((xv, wv), m)| wv * (xv - m).powi(2))
        .sum::<f64>()
}

/// Runs EM-ALS from `init` and returns the normalized model.
///
/// The summary reports sweeps as iterations and model evaluations as
/// function evaluations; there is no gradient norm.
pub fn em_als_fit(
    x: &DenseTensor,
    w: &DenseTensor,
    cfg: &EmAlsConfig,
    init: &KruskalModel,
) -> Result<(KruskalModel, OptResult)> {
    cfg.validate()?;
    check_pair(x, w, init)?;
    if init.rank() != cfg.rank {
        return Err(Error::InvalidParameter(format!(
            "initial rank {} vs configured rank {}",
            init.rank(),
            cfg.rank
        )));
    }
    let start = Instant::now();
    let dims = x.shape().dims();
    let (mut factors, _) = init.absorb_lambda().into_parts();
    let mut full = vec![0.0; x.data().len()];
    kernels::full_raw(&factors, None, &mut full);
    let mut f = known_objective(x.data(), w.data(), &full);
    let mut iterations = 0;
    let stop_reason = loop {
        if iterations >= cfg.max_iters {
            break StopReason::MaxIters;
        }
        impute_into(x.data(), w.data(), &mut full);
        sweep_in_place(&full, dims, &mut factors);
        iterations += 1;
        kernels::full_raw(&factors, None, &mut full);
        let f_new = known_objective(x.data(), w.data(), &full);
        if !f_new.is_finite() {
            return Err(Error::NonFinite(format!("EM-ALS objective after {iterations} sweeps")));
        }
        let rel = (f - f_new).abs() / f.abs().max(1.0);
        f = f_new;
        if rel <= cfg.rel_f_tol {
            break StopReason::FTol;
        }
    };
    let model = KruskalModel::from_factors(factors)?.normalize().model;
    Ok((
        model,
        OptResult {
            f,
            grad_norm: None,
            iterations,
            fevals: iterations + 1,
            stop_reason,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

/// EM-ALS from each of `starts`, keeping the start with the lowest final
/// objective (the earliest on ties).
pub fn fit_em_als(
    x: &DenseTensor,
    w: &DenseTensor,
    cfg: &EmAlsConfig,
    starts: &[KruskalModel],
) -> Result<FitOutput> {
    cfg.validate()?;
    let records = starts
        .iter()
        .enumerate()
        .map(|(k, init)| match em_als_fit(x, w, cfg, init) {
            Ok((model, result)) => StartRecord::finished(k, result, model),
            Err(e) => StartRecord::failed(k, e.to_string()),
        })
        .collect();
    FitOutput::from_records(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_factors, gen_missing_random, init_random};
    use crate::tensor::Shape;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    #[test]
    fn impute_selects_elementwise() {
        let s = shape(&[4, 3, 2]);
        let m = gen_factors(&s, 2, 1).unwrap();
        let x = DenseTensor::from_fn(s.clone(), |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64);
        let ones = DenseTensor::ones(s.clone());
        let zeros = DenseTensor::zeros(s.clone());
        assert_eq!(impute(&x, &ones, &m).unwrap(), x);
        assert_eq!(impute(&x, &zeros, &m).unwrap(), m.full());
        let w = gen_missing_random(&s, 0.5, 2).unwrap();
        let xb = impute(&x, &w, &m).unwrap();
        let full = m.full();
        let mut idx = vec![0; 3];
        for lin in 0..s.numel() {
            s.multi_index(lin, &mut idx);
            let want = if w.get(&idx) == 1.0 { x.get(&idx) } else { full.get(&idx) };
            assert_eq!(xb.get(&idx), want);
        }
        assert_eq!(impute(&xb, &w, &m).unwrap(), xb);
    }

    #[test]
    fn exact_model_is_a_fixed_point() {
        let s = shape(&[5, 4, 3]);
        let m = gen_factors(&s, 2, 3).unwrap();
        let next = als_sweep(&m.full(), &m).unwrap();
        for (a, b) in next.factors().iter().zip(m.factors()) {
            assert!((a - b).amax() < 1e-10);
        }
    }

    #[test]
    fn matrix_case_is_alternating_least_squares() {
        let s = shape(&[6, 5]);
        let x = DenseTensor::from_fn(s.clone(), |i| ((i[0] * 3 + i[1] * 7) % 5) as f64 - 2.0);
        let init = init_random(&s, 2, 4).unwrap();
        let next = als_sweep(&x, &init).unwrap();
        let xm = x.matricize(0).unwrap();
        let b = init.factor(1);
        let a = &xm * b * (b.transpose() * b).try_inverse().unwrap();
        assert!((&a - next.factor(0)).amax() < 1e-10);
        let b2 = xm.transpose() * &a * (a.transpose() * &a).try_inverse().unwrap();
        assert!((&b2 - next.factor(1)).amax() < 1e-10);
    }

    #[test]
    fn sweep_does_not_increase_objective() {
        let s = shape(&[4, 3, 2]);
        let x = DenseTensor::from_fn(s.clone(), |i| ((i[0] * 5 + i[1] * 3 + i[2] * 7) % 4) as f64);
        let mut m = init_random(&s, 2, 5).unwrap();
        let err = |m: &KruskalModel| {
            let f = m.full();
            x.data().iter().zip(f.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let mut prev = err(&m);
        for _ in 0..20 {
            m = als_sweep(&x, &m).unwrap();
            let e = err(&m);
            assert!(e <= prev * (1.0 + 1e-12) + 1e-14);
            prev = e;
        }
    }

    #[test]
    fn recovers_noise_free_full_data() {
        let s = shape(&[8, 7, 6]);
        let truth = gen_factors(&s, 2, 6).unwrap();
        let x = truth.full();
        let w = DenseTensor::ones(s.clone());
        let cfg = EmAlsConfig {
            rank: 2,
            rel_f_tol: 1e-12,
            ..EmAlsConfig::default()
        };
        let (model, res) = em_als_fit(&x, &w, &cfg, &init_random(&s, 2, 1).unwrap()).unwrap();
        assert!(res.f < 1e-8, "{res:?}");
        assert_eq!(res.fevals, res.iterations + 1);
        let rel = (model.full().data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sqrt()
            / x.norm();
        assert!(rel < 1e-4);
    }

    #[test]
    fn respects_iteration_cap() {
        let s = shape(&[5, 4, 3]);
        let x = gen_factors(&s, 2, 7).unwrap().full();
        let w = gen_missing_random(&s, 0.5, 7).unwrap();
        let cfg = EmAlsConfig {
            rank: 2,
            max_iters: 3,
            rel_f_tol: 1e-15,
            seed: 0,
        };
        let (_, r) = em_als_fit(&x, &w, &cfg, &init_random(&s, 2, 1).unwrap()).unwrap();
        assert_eq!(r.iterations, 3);
        assert_eq!(r.stop_reason, StopReason::MaxIters);
    }
}
