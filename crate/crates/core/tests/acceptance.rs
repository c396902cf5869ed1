//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Positional arguments such as `C3 C6`
//! restrict the run to those criteria.

mod common;

use std::time::Instant;

use cpwopt::datagen::{gen_factors, gen_instance, init_nvecs, init_random, InstanceSpec, Pattern, Storage};
use cpwopt::evaluation::{fms, fms_exhaustive, rho, tcs};
use cpwopt::experiment::{run_method_observed, summarize, Method, MethodSettings, Summary};
use cpwopt::fit::{fit_cpwopt_from, Variant};
use cpwopt::objective::{objective_grad_dense, objective_grad_sparse, DenseObjective, Objective, SparseObjective};
use cpwopt::optimizer::{OptConfig, StopReason};
use cpwopt::{DenseTensor, KruskalModel, Shape, SparseSamples};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static ALLOC: common::Counting = common::Counting;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn shape(d: &[usize]) -> Shape {
    Shape::new(d.to_vec()).unwrap()
}

fn fmt_summary(s: &Option<Summary>) -> String {
    match s {
        Some(s) => format!(
            "median {:.4} [q25 {:.4}, q75 {:.4}] min {:.4} max {:.4} n={}",
            s.median, s.q25, s.q75, s.min, s.max, s.n
        ),
        None => "no data".into(),
    }
}

fn median(v: &[f64]) -> f64 {
    summarize(v).map_or(f64::NAN, |s| s.median)
}

/// A small random problem: dims in `2..=max`, a Bernoulli mask with the
/// given missing probability, noisy low-rank data and a unit-scaled model.
fn small_problem(seed: u64) -> (DenseTensor, DenseTensor, KruskalModel) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if rng.random_bool(0.5) { 3 } else { 4 };
    let dims: Vec<usize> = [6, 5, 4, 3][..n].iter().map(|&m| rng.random_range(2..=m)).collect();
    let s = shape(&dims);
    let rank = rng.random_range(1..=3);
    let m = [0.0, 0.3, 0.6][rng.random_range(0..3)];
    let truth = gen_factors(&s, rank, seed).unwrap();
    let clean = truth.full();
    let x = DenseTensor::from_fn(s.clone(), |i| clean.get(i) + 0.1 * (rng.random::<f64>() - 0.5));
    let w = DenseTensor::from_fn(s.clone(), |_| if rng.random::<f64>() < m { 0.0 } else { 1.0 });
    let model = init_random(&s, rank, seed ^ 0xabc).unwrap().normalize().model.absorb_lambda();
    let unit = KruskalModel::from_factors(
        model
            .factors()
            .iter()
            .map(|f| {
                let mut f = f.clone();
                for mut c in f.column_iter_mut() {
                    let n = c.norm();
                    c /= n;
                }
                f
            })
            .collect(),
    )
    .unwrap();
    (x, w, unit)
}

fn c1_gradient_fd() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20 {
        let (x, w, model) = small_problem(1000 + seed);
        let s = SparseSamples::from_dense_masked(&x, &w).unwrap();
        let rank = model.rank();
        let x0 = model.to_vec();
        let p = x0.len();
        let mut dense = DenseObjective::new(&x, &w, rank).unwrap();
        let mut sparse = SparseObjective::new(&s, rank).unwrap();
        let objs: [&mut dyn Objective; 2] = [&mut dense, &mut sparse];
        for obj in objs {
            let mut g = vec![0.0; p];
            obj.eval(&x0, &mut g);
            let mut scratch = vec![0.0; p];
            for k in 0..p {
                let h = 1e-6;
                let mut xp = x0.clone();
                xp[k] += h;
                let fp = obj.eval(&xp, &mut scratch);
                xp[k] -= 2.0 * h;
                let fm = obj.eval(&xp, &mut scratch);
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1.0);
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{checked} partial derivatives, worst relative error {worst:.2e} (limit 1e-6)"),
    )
}

fn c2_dense_sparse() -> Outcome {
    let mut worst_f: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for seed in 0..20 {
        let (x, w, model) = small_problem(2000 + seed);
        let s = SparseSamples::from_dense_masked(&x, &w).unwrap();
        let (fd, gd) = objective_grad_dense(&x, &w, &model).unwrap();
        let (fs, gs) = objective_grad_sparse(&s, &model).unwrap();
        worst_f = worst_f.max((fd - fs).abs() / (1.0 + fd.abs()));
        let num: f64 = gd.iter().zip(&gs).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let den: f64 = gd.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
        worst_g = worst_g.max(if den == 0.0 { num } else { num / den });
    }
    outcome(
        worst_f <= 1e-12 && worst_g <= 1e-10,
        format!("worst |Δf|/(1+f) {worst_f:.2e} (limit 1e-12), worst gradient relative difference {worst_g:.2e} (limit 1e-10)"),
    )
}

fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], rank: usize) -> KruskalModel {
    let factors = dims
        .iter()
        .map(|&d| DMatrix::from_fn(d, rank, |_, _| rng.random::<f64>() * 2.0 - 1.0))
        .collect();
    let lambda = (0..rank).map(|_| rng.random_range(0.5..2.0)).collect();
    KruskalModel::new(factors, lambda).unwrap()
}

fn c8_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_inv: f64 = 0.0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=4);
        let dims: Vec<usize> = (0..n).map(|_| rng.random_range(2..=6)).collect();
        let rank = rng.random_range(1..=5);
        let m = random_model(&mut rng, &dims, rank);
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.shuffle(&mut rng);
        let (factors, lambda) = m.clone().into_parts();
        let mut factors: Vec<DMatrix<f64>> = factors
            .iter()
            .map(|f| DMatrix::from_fn(f.nrows(), rank, |i, j| f[(i, perm[j])]))
            .collect();
        let lambda: Vec<f64> = perm.iter().map(|&p| lambda[p]).collect();
        for r in 0..rank {
            if rng.random_bool(0.5) {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                factors[a].column_mut(r).neg_mut();
                factors[b].column_mut(r).neg_mut();
            }
        }
        let moved = KruskalModel::new(factors, lambda).unwrap();
        worst_inv = worst_inv.max((fms(&m, &moved).unwrap().fms - 1.0).abs());
    }
    let mut worst_assign: f64 = 0.0;
    for rank in 1..=6 {
        for _ in 0..50 {
            let a = random_model(&mut rng, &[5, 4, 3], rank);
            let b = random_model(&mut rng, &[5, 4, 3], rank);
            let d = (fms(&a, &b).unwrap().fms - fms_exhaustive(&a, &b).unwrap().fms).abs();
            worst_assign = worst_assign.max(d);
        }
    }
    let s = shape(&[6, 5, 4]);
    let truth = gen_factors(&s, 3, 88).unwrap();
    let x = truth.full();
    let w = cpwopt::datagen::gen_missing_random(&s, 0.5, 88).unwrap();
    let zero = KruskalModel::zeros(&s, 3).unwrap();
    let t_zero = tcs(&x, &w, &zero).unwrap();
    let t_truth = tcs(&x, &w, &truth).unwrap();
    let pass = worst_inv <= 1e-12 && worst_assign <= 1e-12 && (t_zero - 1.0).abs() <= 1e-15 && t_truth <= 1e-12;
    outcome(
        pass,
        format!(
            "invariance 10^4 trials worst |FMS-1| {worst_inv:.1e}; assignment vs exhaustive R<=6 worst gap {worst_assign:.1e}; TCS(zero)={t_zero}; TCS(truth)={t_truth:.1e}"
        ),
    )
}

fn c3_spec(m: f64, pattern: Pattern, seed: u64) -> InstanceSpec {
    InstanceSpec {
        shape: shape(&[50, 40, 30]),
        rank: 5,
        noise: 0.1,
        missing: m,
        pattern,
        storage: Storage::Dense,
        seed,
    }
}

#[derive(Default)]
struct OptimizerTally {
    steps: usize,
    wolfe_violations: usize,
    starts: usize,
    converged: usize,
    reasons: std::collections::BTreeMap<&'static str, usize>,
}

impl OptimizerTally {
    fn add_run(&mut self, stops: impl Iterator<Item = Option<StopReason>>) {
        for s in stops {
            self.starts += 1;
            *self.reasons.entry(s.map_or("failed", |s| s.as_str())).or_default() += 1;
            if s.is_some_and(|s| s.converged()) {
                self.converged += 1;
            }
        }
    }
}

/// Cumulative-best FMS after all starts, one value per instance.
fn run_cell(
    m: f64,
    pattern: Pattern,
    base_seed: u64,
    instances: usize,
    method: Method,
    tally: &mut OptimizerTally,
) -> (Vec<f64>, f64) {
    let settings = MethodSettings::default();
    let (c1, c2) = (settings.opt.line_search.c1, settings.opt.line_search.c2);
    let timer = Instant::now();
    let mut best = Vec::new();
    for i in 0..instances {
        let inst = gen_instance(&c3_spec(m, pattern, base_seed + i as u64)).unwrap();
        let run = run_method_observed(&inst, i, method, 5, &settings, |_, step| {
            tally.steps += 1;
            if !step.satisfies_strong_wolfe(c1, c2) {
                tally.wolfe_violations += 1;
            }
        })
        .unwrap();
        if method != Method::EmAls {
            tally.add_run(run.records.iter().map(|r| r.stop_reason));
        }
        best.push(run.records.last().and_then(|r| r.cumulative_best_fms).unwrap_or(0.0));
    }
    (best, timer.elapsed().as_secs_f64())
}

struct RecoveryResults {
    c3: Outcome,
    entries_90: Vec<f64>,
}

fn c3_recovery(tally: &mut OptimizerTally) -> RecoveryResults {
    let mut pass = true;
    let mut lines = Vec::new();
    let mut entries_90 = Vec::new();
    for (cell, m) in [0.6, 0.7, 0.8, 0.9].into_iter().enumerate() {
        let base = 10_000 + 1000 * cell as u64;
        let (cp, cp_secs) = run_cell(m, Pattern::Entries, base, 30, Method::CpwoptDense, tally);
        let mut em_tally = OptimizerTally::default();
        let (em, em_secs) = run_cell(m, Pattern::Entries, base, 30, Method::EmAls, &mut em_tally);
        let (mc, me) = (median(&cp), median(&em));
        let ok = mc >= 0.95 && me >= 0.95 && (mc - me).abs() <= 0.02;
        pass &= ok;
        lines.push(format!(
            "    M={m}: cpwopt-dense {} ({cp_secs:.0}s); em-als {} ({em_secs:.0}s); gap {:.4} {}",
            fmt_summary(&summarize(&cp)),
            fmt_summary(&summarize(&em)),
            (mc - me).abs(),
            if ok { "ok" } else { "FAIL" }
        ));
        if m == 0.9 {
            entries_90 = cp;
        }
    }
    RecoveryResults {
        c3: outcome(
            pass,
            format!(
                "median cumulative-best FMS >= 0.95 per cell and gap <= 0.02\n{}",
                lines.join("\n")
            ),
        ),
        entries_90,
    }
}

fn c4_hard_regime(tally: &mut OptimizerTally) -> Outcome {
    let r = rho(&shape(&[50, 40, 30]), 5, 0.95).unwrap();
    let mut scratch = OptimizerTally::default();
    let (fms95, secs) = run_cell(0.95, Pattern::Entries, 50_000, 10, Method::CpwoptDense, &mut scratch);
    tally.steps += scratch.steps;
    tally.wolfe_violations += scratch.wolfe_violations;
    outcome(
        (r - 5.03).abs() <= 0.01,
        format!(
            "rho {r:.4} (expected 5.03 +- 0.01); M=0.95 cpwopt-dense FMS distribution over 10 instances: {} ({secs:.0}s)",
            fmt_summary(&summarize(&fms95))
        ),
    )
}

fn c5_fibers(entries_90: &[f64], tally: &mut OptimizerTally) -> Outcome {
    let mut scratch = OptimizerTally::default();
    let (fibers, secs) = run_cell(0.9, Pattern::Fibers, 10_000 + 3000, 30, Method::CpwoptDense, &mut scratch);
    tally.steps += scratch.steps;
    tally.wolfe_violations += scratch.wolfe_violations;
    let (mf, me) = (median(&fibers), median(entries_90));
    outcome(
        mf <= me,
        format!(
            "M=0.9 fibers {} ({secs:.0}s) vs random entries median {me:.4}",
            fmt_summary(&summarize(&fibers))
        ),
    )
}

/// Peak auxiliary memory allowed per word of `Q + R ΣI_n`.
const MEMORY_CONSTANT: usize = 32;

fn c6_large_sparse(tally: &mut OptimizerTally) -> Outcome {
    let timer = Instant::now();
    let s = shape(&[200, 200, 200]);
    let dense_bytes = 8 * s.numel();
    let opt = OptConfig {
        grad_tol: 1e-10,
        ..OptConfig::default()
    };
    let (c1, c2) = (opt.line_search.c1, opt.line_search.c2);
    let mut good = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut largest_block = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let spec = InstanceSpec {
            shape: s.clone(),
            rank: 5,
            noise: 0.1,
            missing: 0.99,
            pattern: Pattern::Entries,
            storage: Storage::Sparse,
            seed: 60_000 + seed,
        };
        let base = common::reset_peak();
        let inst = gen_instance(&spec).unwrap();
        largest_block = largest_block.max(common::largest());
        let q = inst.known();
        let budget_words = MEMORY_CONSTANT * (q + 5 * s.sum());

        let base = common::reset_peak().max(base);
        let t = Instant::now();
        let init = init_nvecs(inst.data(), 5, spec.seed).unwrap();
        let out = fit_cpwopt_from(inst.data(), Variant::Sparse, &[init], &opt, |_, step| {
            tally.steps += 1;
            if !step.satisfies_strong_wolfe(c1, c2) {
                tally.wolfe_violations += 1;
            }
        })
        .unwrap();
        let peak_words = common::peak_above(base) / 8;
        largest_block = largest_block.max(common::largest());
        worst_ratio = worst_ratio.max(peak_words as f64 / (q + 5 * s.sum()) as f64);
        tally.add_run(out.starts.iter().map(|r| r.result.as_ref().map(|r| r.stop_reason)));
        let score = fms(&inst.truth, &out.best).unwrap().fms;
        if score >= 0.99 {
            good += 1;
        }
        let r = out.starts[0].result.as_ref().unwrap();
        lines.push(format!(
            "    seed {}: Q={q} FMS {score:.5} {} after {} iterations, {:.1}s, peak {peak_words} words (budget {budget_words})",
            spec.seed,
            r.stop_reason.as_str(),
            r.iterations,
            t.elapsed().as_secs_f64()
        ));
    }
    let secs = timer.elapsed().as_secs_f64();
    let pass = good >= 9 && worst_ratio <= MEMORY_CONSTANT as f64 && largest_block < dense_bytes && secs < 600.0;
    outcome(
        pass,
        format!(
            "{good}/10 seeds with FMS >= 0.99; worst peak/(Q + R sum I) {worst_ratio:.2} (limit {MEMORY_CONSTANT}); largest block {largest_block} bytes vs dense {dense_bytes}; {secs:.0}s\n{}",
            lines.join("\n")
        ),
    )
}

fn c7_completion() -> Outcome {
    let mut scores = Vec::new();
    for m in [0.5, 0.95, 0.99] {
        let spec = InstanceSpec {
            shape: shape(&[23, 23, 500]),
            rank: 2,
            noise: 0.1,
            missing: m,
            pattern: Pattern::Entries,
            storage: Storage::Dense,
            seed: 70_000,
        };
        let inst = gen_instance(&spec).unwrap();
        let run = cpwopt::experiment::run_method(&inst, 0, Method::CpwoptDense, 3, &MethodSettings::default()).unwrap();
        let (x, w) = match &inst.observed {
            cpwopt::datagen::Observed::Dense { x, w } => (x, w),
            _ => unreachable!(),
        };
        scores.push(tcs(x, w, &run.output.best).unwrap());
    }
    let (t50, t95, t99) = (scores[0], scores[1], scores[2]);
    outcome(
        (t50 - t95).abs() <= 0.05 && t99 > t95,
        format!("TCS at M=0.5 {t50:.4}, M=0.95 {t95:.4}, M=0.99 {t99:.4}"),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('C')).collect();
    let wanted = |id: &str| filters.is_empty() || filters.iter().any(|f| f == id);
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let mut report = |id: &'static str, name: &'static str, o: Outcome| {
        println!("{} {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    let mut tally = OptimizerTally::default();

    if wanted("C1") {
        report("C1", "gradient matches finite differences", c1_gradient_fd());
    }
    if wanted("C2") {
        report("C2", "dense and sparse objectives agree", c2_dense_sparse());
    }
    if wanted("C8") {
        report("C8", "metric properties", c8_metrics());
    }
    if wanted("C7") {
        report("C7", "completion score across missing fractions", c7_completion());
    }
    if wanted("C6") {
        report("C6", "large sparse recovery and memory", c6_large_sparse(&mut tally));
    }
    if wanted("C4") {
        report("C4", "hard regime", c4_hard_regime(&mut tally));
    }
    if wanted("C3") || wanted("C5") || wanted("C9") {
        let rec = c3_recovery(&mut tally);
        if wanted("C3") {
            report("C3", "recovery at 50x40x30", rec.c3);
        }
        if wanted("C5") {
            report("C5", "fiber-missing data is harder", c5_fibers(&rec.entries_90, &mut tally));
        }
    }
    if wanted("C9") {
        let frac = tally.converged as f64 / tally.starts.max(1) as f64;
        report(
            "C9",
            "optimizer contract",
            outcome(
                tally.wolfe_violations == 0 && tally.starts > 0 && frac >= 0.9,
                format!(
                    "{} of {} accepted steps violate strong Wolfe; {}/{} CP-WOPT starts ({:.1}%) end on f_tol or g_tol (need 90%); stops {:?}",
                    tally.wolfe_violations,
                    tally.steps,
                    tally.converged,
                    tally.starts,
                    100.0 * frac,
                    tally.reasons
                ),
            ),
        );
    }

    let failed: Vec<&str> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
