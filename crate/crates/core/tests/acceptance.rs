//! Acceptance suite: one PASS/FAIL line per criterion. Runs with a custom
//! harness so the report is printed even when every check passes.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use nlbp::baselines::{l0_oracle, solve_nlbp_estimate, support_of, Method, OracleBudget, PipelineConfig};
use nlbp::harness::{emit_boxplot_data, run_experiment, ExperimentResult, ExperimentSpec, MethodOutcome};
use nlbp::lifting::{
    build_lifted_problem, polynomial_to_quadratic_form, ConstraintKind, LiftedConstraint, LiftedProblem, SymMatrix,
};
use nlbp::monomials::{enumerate_alpha_set, enumerate_basis, random_polynomial_with, MonomialBasis, MultiIndex, Polynomial};
use nlbp::sdp_admm::{min_eigenvalue, solve_nlbp_observed, SolveStatus, SolverConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn flag(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISSED"
    }
}

// ---------- independent helpers ----------

fn monomial(alpha: &MultiIndex, x: &[f64]) -> f64 {
    alpha.exponents().iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product()
}

fn direct_eval(p: &Polynomial<f64>, x: &[f64]) -> f64 {
    p.terms().map(|(a, c)| c * monomial(a, x)).sum()
}

fn direct_lift(basis: &MonomialBasis, x: &[f64]) -> Vec<f64> {
    basis.entries().iter().map(|a| monomial(a, x)).collect()
}

fn binom(n: u64, k: u64) -> u128 {
    let mut num: u128 = 1;
    let mut den: u128 = 1;
    for i in 0..k as u128 {
        num *= n as u128 - i;
        den *= i + 1;
    }
    num / den
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

// ---------- criteria 1 and 2: ensembles ----------

fn rate(res: &ExperimentResult, m: Method) -> f64 {
    res.summary_for(m).map_or(0.0, |s| s.success_rate)
}

fn criterion_1(res: &ExperimentResult) -> Verdict {
    let (nlbp, qbp, lin) = (rate(res, Method::Nlbp), rate(res, Method::Qbp), rate(res, Method::Linear));
    let ok_n = nlbp >= 0.95;
    let ok_q = (0.55..=0.90).contains(&qbp);
    let ok_l = lin <= 0.05;
    let qbp_support = res.summary_for(Method::Qbp).map_or(0.0, |s| s.support_rate);
    verdict(
        ok_n && ok_q && ok_l,
        format!(
            "sparse ensemble, 100 trials: NLBP {:.0}% (>= 95%: {}), QBP {:.0}% (in [55%, 90%]: {}), linear {:.0}% (<= 5%: {}); \
             QBP support-recovery diagnostic {:.0}%",
            nlbp * 100.0,
            flag(ok_n),
            qbp * 100.0,
            flag(ok_q),
            lin * 100.0,
            flag(ok_l),
            qbp_support * 100.0
        ),
    )
}

fn boxplot_medians(res: &ExperimentResult) -> Vec<(String, f64)> {
    let mut buf = Vec::new();
    emit_boxplot_data(&res.records, &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    rdr.records()
        .map(|r| r.unwrap())
        .filter(|r| &r[1] == "stat" && &r[2] == "median")
        .map(|r| (r[0].to_string(), r[3].parse().unwrap()))
        .collect()
}

fn criterion_2(res: &ExperimentResult) -> Verdict {
    let count = |m| res.outcomes(m).filter(|o| o.success).count();
    let (n_ok, q_ok) = (count(Method::Nlbp), count(Method::Qbp));
    let medians = boxplot_medians(res);
    let median = |label: &str| medians.iter().find(|(m, _)| m == label).map(|(_, v)| *v).unwrap_or(f64::NAN);
    let (mn, mq) = (median("NLBP"), median("QBP"));
    let ok_a = n_ok >= 95;
    let ok_b = q_ok == 0;
    let ok_c = mn <= 1e-8;
    let ok_d = mq >= 1e6 * mn;
    verdict(
        ok_a && ok_b && ok_c && ok_d,
        format!(
            "dense, 100 trials: NLBP exact {n_ok} (>= 95: {}), QBP exact {q_ok} (== 0: {}), \
             NLBP median residual {mn:.3e} (<= 1e-8: {}), QBP median {mq:.3e} (>= 1e6 x NLBP: {})",
            flag(ok_a),
            flag(ok_b),
            flag(ok_c),
            flag(ok_d)
        ),
    )
}

// ---------- criterion 3: representation identity ----------

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..200 {
        let n = 1 + k % 5;
        let q = if k % 2 == 0 { 2 } else { 4 };
        let p: Polynomial<f64> = random_polynomial_with(&mut rng, n, q, 1.0).unwrap();
        let basis = enumerate_basis(n, q / 2);
        let qm = polynomial_to_quadratic_form(&p, &basis).unwrap();
        for _ in 0..100 {
            let x = gaussian_vec(&mut rng, n, 1.0);
            let xb = DVector::from_vec(direct_lift(&basis, &x));
            let form = (xb.transpose() * qm.as_matrix() * &xb)[(0, 0)];
            let truth = direct_eval(&p, &x);
            worst = worst.max((form - truth).abs() / (1.0 + truth.abs()));
            count += 1;
        }
    }
    verdict(worst <= 1e-9, format!("{count} evaluations, max |xbar'Qxbar - p(x)| / (1 + |p(x)|) = {worst:.2e} (<= 1e-9)"))
}

// ---------- criterion 4: planted-lift feasibility ----------

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut constraints = 0;
    for k in 0..50 {
        let n = 1 + k % 4;
        let q = if k % 3 == 0 { 2 } else { 4 };
        let m = rng.random_range(1..=20);
        let polys: Vec<Polynomial<f64>> =
            (0..m).map(|_| random_polynomial_with(&mut rng, n, q, 1.0).unwrap()).collect();
        let x = gaussian_vec(&mut rng, n, 1.0);
        let y: Vec<f64> = polys.iter().map(|p| direct_eval(p, &x)).collect();
        let prob = build_lifted_problem(&polys, &y, q).unwrap();
        let xb = direct_lift(prob.basis(), &x);
        for c in prob.constraints() {
            let d = xb.len();
            let mut tr = 0.0;
            for i in 0..d {
                for j in 0..d {
                    tr += c.q.get(i, j) * xb[i] * xb[j];
                }
            }
            worst = worst.max((tr - c.y).abs() / (1.0 + c.y.abs()));
            constraints += 1;
        }
    }
    verdict(worst <= 1e-9, format!("50 problems, {constraints} constraints, max violation {worst:.2e} (<= 1e-9)"))
}

// ---------- criterion 5: basis combinatorics ----------

fn criterion_5() -> Verdict {
    let mut bad = Vec::new();
    for n in 1..=8usize {
        for q in 0..=8u32 {
            let alphas = enumerate_alpha_set(n, q);
            let distinct: std::collections::HashSet<Vec<u32>> =
                alphas.iter().map(|a| a.exponents().to_vec()).collect();
            let bounded = alphas.iter().all(|a| a.num_vars() == n && a.degree() <= q);
            if alphas.len() as u128 != binom((n as u64) + q as u64, q as u64) || distinct.len() != alphas.len() || !bounded {
                bad.push(format!("alpha n={n} q={q}"));
            }
            if q % 2 == 0 {
                let b = enumerate_basis(n, q / 2);
                let h = (q / 2) as u64;
                if b.len() as u128 != binom(n as u64 + h, h) || b.entries().iter().any(|a| a.degree() > q / 2) {
                    bad.push(format!("basis n={n} q={q}"));
                }
            }
        }
    }
    let example = (enumerate_basis(2, 2).len(), enumerate_alpha_set(2, 4).len());
    let ok = bad.is_empty() && example == (6, 15);
    verdict(
        ok,
        format!("n <= 8, q <= 8 exhaustive; n=2, q=4 gives basis {} and alpha-set {} (6, 15); mismatches {:?}", example.0, example.1, bad),
    )
}

// ---------- criterion 6: solver against a barrier-method reference ----------

/// Toy SDP with a strictly feasible point: random data constraints plus a
/// normalization `X(0,0) = 1`.
fn toy_problem(rng: &mut ChaCha8Rng, n: usize) -> (LiftedProblem<f64>, DMatrix<f64>) {
    let basis = enumerate_basis(n, 1);
    let d = basis.len();
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut feas = &a * a.transpose() + DMatrix::identity(d, d).scale(0.5);
    feas /= feas[(0, 0)];
    let p = d * (d + 1) / 2;
    let m = rng.random_range(1..p - 1);
    let mut cons = Vec::new();
    for _ in 0..m {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = SymMatrix::symmetrized(&g).unwrap();
        let y = q.as_matrix().dot(&feas);
        cons.push(LiftedConstraint { y, q, kind: ConstraintKind::Data });
    }
    let mut e00 = SymMatrix::zeros(d);
    e00.set(0, 0, 1.0);
    cons.push(LiftedConstraint { y: 1.0, q: e00, kind: ConstraintKind::Normalization });
    (LiftedProblem::from_parts(basis, cons, 2).unwrap(), feas)
}

/// Upper-triangle coordinates and their symmetric basis matrices.
fn sym_basis(d: usize) -> (Vec<(usize, usize)>, Vec<DMatrix<f64>>) {
    let mut idx = Vec::new();
    let mut mats = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut e = DMatrix::zeros(d, d);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            idx.push((i, j));
            mats.push(e);
        }
    }
    (idx, mats)
}

/// `min Tr X + lambda ||X||_1` over the feasible set by a primal log-barrier
/// method on the null space of the constraints, with `t_k >= |X_k|` epigraph
/// variables for the l1 term, started from the strictly feasible `start`.
fn barrier_reference(prob: &LiftedProblem<f64>, start: &DMatrix<f64>, lambda: f64) -> f64 {
    let d = prob.dim();
    let (idx, mats) = sym_basis(d);
    let p = idx.len();
    let m = prob.num_constraints();
    let a = DMatrix::from_fn(m, p, |i, k| prob.constraints()[i].q.as_matrix().dot(&mats[k]));
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let emax = eig.eigenvalues.amax();
    let null_cols: Vec<usize> = (0..p).filter(|&k| eig.eigenvalues[k] < 1e-10 * emax).collect();
    let nb = DMatrix::from_fn(p, null_cols.len(), |i, c| eig.eigenvectors[(i, null_cols[c])]);
    let u0 = DVector::from_fn(p, |k, _| start[idx[k]]);
    let to_mat = |u: &DVector<f64>| {
        let mut x = DMatrix::zeros(d, d);
        for (k, &(i, j)) in idx.iter().enumerate() {
            x[(i, j)] = u[k];
            x[(j, i)] = u[k];
        }
        x
    };
    let c = DVector::from_fn(p, |k, _| if idx[k].0 == idx[k].1 { 1.0 } else { 0.0 });
    let w = DVector::from_fn(p, |k, _| if idx[k].0 == idx[k].1 { 1.0 } else { 2.0 });
    let use_t = lambda > 0.0;
    let nz = nb.ncols();
    let nv = nz + if use_t { p } else { 0 };

    let state = |v: &DVector<f64>| -> (DVector<f64>, DVector<f64>) {
        let u = &u0 + &nb * v.rows(0, nz);
        let t = if use_t { v.rows(nz, p).into_owned() } else { DVector::zeros(0) };
        (u, t)
    };
    let objective = |u: &DVector<f64>, t: &DVector<f64>| c.dot(u) + if use_t { lambda * w.dot(t) } else { 0.0 };
    let barrier_value = |tau: f64, v: &DVector<f64>| -> Option<f64> {
        let (u, t) = state(v);
        let chol = to_mat(&u).cholesky()?;
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let mut val = tau * objective(&u, &t) - logdet;
        if use_t {
            for k in 0..p {
                let (a1, a2) = (t[k] - u[k], t[k] + u[k]);
                if a1 <= 0.0 || a2 <= 0.0 {
                    return None;
                }
                val -= a1.ln() + a2.ln();
            }
        }
        Some(val)
    };

    let mut v = DVector::zeros(nv);
    if use_t {
        for k in 0..p {
            v[nz + k] = u0[k].abs() + 1.0;
        }
    }
    let n_barrier = (d + if use_t { 2 * p } else { 0 }) as f64;
    let mut tau = 1.0;
    loop {
        for _ in 0..200 {
            let (u, t) = state(&v);
            let xinv = to_mat(&u).try_inverse().unwrap();
            let mut gu = DVector::from_fn(p, |k, _| tau * c[k] - (&xinv * &mats[k]).trace());
            let mut huu = DMatrix::from_fn(p, p, |k, l| (&xinv * &mats[k] * &xinv * &mats[l]).trace());
            let mut gt = DVector::zeros(p);
            let mut htt = DVector::zeros(p);
            let mut hut = DVector::zeros(p);
            if use_t {
                for k in 0..p {
                    let (a1, a2) = (t[k] - u[k], t[k] + u[k]);
                    gu[k] += 1.0 / a1 - 1.0 / a2;
                    gt[k] = tau * lambda * w[k] - 1.0 / a1 - 1.0 / a2;
                    huu[(k, k)] += 1.0 / (a1 * a1) + 1.0 / (a2 * a2);
                    htt[k] = 1.0 / (a1 * a1) + 1.0 / (a2 * a2);
                    hut[k] = -1.0 / (a1 * a1) + 1.0 / (a2 * a2);
                }
            }
            let mut g = DVector::zeros(nv);
            let mut h = DMatrix::zeros(nv, nv);
            g.rows_mut(0, nz).copy_from(&(nb.transpose() * &gu));
            h.view_mut((0, 0), (nz, nz)).copy_from(&(nb.transpose() * &huu * &nb));
            if use_t {
                g.rows_mut(nz, p).copy_from(&gt);
                let cross = nb.transpose() * DMatrix::from_diagonal(&hut);
                h.view_mut((0, nz), (nz, p)).copy_from(&cross);
                h.view_mut((nz, 0), (p, nz)).copy_from(&cross.transpose());
                h.view_mut((nz, nz), (p, p)).copy_from(&DMatrix::from_diagonal(&htt));
            }
            let rhs = -&g;
            let step = match h.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => h.clone().lu().solve(&rhs).expect("barrier Newton system is singular"),
            };
            let decrement = -g.dot(&step);
            if decrement / 2.0 < 1e-14 {
                break;
            }
            let f0 = barrier_value(tau, &v).unwrap();
            let mut s = 1.0;
            let mut moved = false;
            while s > 1e-12 {
                let cand = &v + &step * s;
                if let Some(f1) = barrier_value(tau, &cand) {
                    if f1 <= f0 - 0.25 * s * decrement {
                        v = cand;
                        moved = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            // no progress left at rounding level: the point is centered
            if !moved {
                break;
            }
        }
        let (u, t) = state(&v);
        let obj = objective(&u, &t);
        if n_barrier / tau < 1e-9 * (1.0 + obj.abs()) {
            return obj;
        }
        tau *= 10.0;
    }
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rel = 0.0f64;
    let mut worst_psd = 0.0f64;
    let mut worst_aff = 0.0f64;
    let mut statuses = Vec::new();
    for k in 0..20 {
        let n = 1 + k % 3;
        let (prob, start) = toy_problem(&mut rng, n);
        let lambda = if k % 2 == 0 { 0.0 } else { rng.random_range(0.05..0.5) };
        let reference = barrier_reference(&prob, &start, lambda);
        let cfg = SolverConfig { lambda, eps_abs: 1e-11, eps_rel: 1e-10, max_iters: 500_000, ..Default::default() };
        let y_norm = prob.rhs().iter().map(|v| v * v).sum::<f64>().sqrt();
        let report = solve_nlbp_observed(&prob, &cfg, |it| {
            let scale = it.x_psd.frobenius_norm().max(1.0);
            worst_psd = worst_psd.max(-min_eigenvalue(it.x_psd).unwrap() / scale);
            worst_aff = worst_aff.max(prob.max_violation(it.x_affine) / (1.0 + y_norm));
        })
        .unwrap();
        statuses.push(report.status);
        worst_rel = worst_rel.max((report.objective - reference).abs() / reference.abs().max(1e-12));
    }
    let converged = statuses.iter().filter(|s| **s == SolveStatus::Converged).count();
    let ok = worst_rel <= 1e-5 && worst_psd <= 1e-10 && worst_aff <= 1e-9;
    verdict(
        ok,
        format!(
            "20 SDPs with D in 2..4 ({converged} converged): max relative objective gap {worst_rel:.2e} (<= 1e-5), \
             worst psd defect {worst_psd:.1e}, worst affine violation {worst_aff:.1e}"
        ),
    )
}

// ---------- criterion 7: oracle equivalence ----------

struct OracleCase {
    outcome: Option<(SolveStatus, bool, bool, bool)>,
}

fn criterion_7(extra: &mut Vec<OracleCase>) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut valid = 0;
    let mut agree = 0;
    let mut disagreements = Vec::new();
    for k in 0..25 {
        let n = 3 + k % 4;
        let deg = if k % 2 == 0 { 2 } else { 4 };
        let m = 20 + rng.random_range(0..10);
        let size = 1 + k % 2;
        let polys: Vec<Polynomial<f64>> =
            (0..m).map(|_| random_polynomial_with(&mut rng, n, deg, 1.0).unwrap()).collect();
        let mut x = vec![0.0; n];
        for j in rand::seq::index::sample(&mut rng, n, size) {
            x[j] = rng.sample::<f64, _>(StandardNormal);
        }
        let y: Vec<f64> = polys.iter().map(|p| direct_eval(p, &x)).collect();
        let cfg = PipelineConfig { certify: true, ..PipelineConfig::default() };
        let est = solve_nlbp_estimate(&polys, &y, deg, &cfg).unwrap();
        let diag = est.lifted.clone().unwrap();
        let success = nlbp::baselines::success_criterion(&est.x_hat, &x, &polys, &y);
        extra.push(OracleCase {
            outcome: Some((diag.status, diag.valid, diag.certificate.is_some_and(|c| c.holds), success)),
        });
        if !diag.valid {
            continue;
        }
        valid += 1;
        let budget = OracleBudget { seed: k as u64, ..Default::default() };
        let oracle = l0_oracle(&polys, &y, 2, &budget).unwrap();
        let (s_nlbp, s_oracle) = (support_of(&est.x_hat, 1e-6), support_of(&oracle, 1e-6));
        if s_nlbp == s_oracle {
            agree += 1;
        } else {
            disagreements.push(format!("instance {k}: NLBP {s_nlbp:?} oracle {s_oracle:?}"));
        }
    }
    verdict(
        valid > 0 && agree == valid,
        format!("25 planted instances, {valid} with valid rank-1 NLBP, supports agree on {agree}; {disagreements:?}"),
    )
}

// ---------- criterion 8: certificate soundness ----------

fn criterion_8<'a>(outcomes: impl Iterator<Item = &'a MethodOutcome>, oracle_cases: &[OracleCase]) -> Verdict {
    let mut total = 0;
    let mut holds = 0;
    let mut violations = 0;
    let mut check = |status: Option<SolveStatus>, valid: bool, cert: bool, success: bool| {
        total += 1;
        if cert {
            holds += 1;
        }
        if status == Some(SolveStatus::Converged) && valid && cert && !success {
            violations += 1;
        }
    };
    for o in outcomes {
        if let Some(cert) = o.certificate_holds {
            check(o.status, o.valid, cert, o.success);
        }
    }
    for c in oracle_cases {
        if let Some((s, v, cert, ok)) = c.outcome {
            check(Some(s), v, cert, ok);
        }
    }
    verdict(
        violations == 0 && total > 0,
        format!(
            "{total} certified lifted solves, certificate held on {holds}, counterexamples {violations} (== 0){}",
            if holds == 0 { "; implication vacuous on these runs (mu = 1 under full vectorization)" } else { "" }
        ),
    )
}

// ---------- criterion 9: determinism ----------

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_nlbp"))
            .args(["bench", "table1", "--trials", "10", "--seed", "7", "-o"])
            .arg(&path)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        std::fs::read(path).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    let rows = a.split(|c| *c == b'\n').filter(|l| l.first().is_some_and(u8::is_ascii_digit)).count();
    verdict(a == b && rows == 30, format!("two runs of `bench table1 --trials 10 --seed 7`: {} bytes each, identical {}, {rows} rows", a.len(), a == b))
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let table1 = run_experiment(&ExperimentSpec::table1(100, 42)).expect("table1 ensemble");
    let dense = run_experiment(&ExperimentSpec::dense(100, 42)).expect("dense ensemble");
    let mut oracle_cases = Vec::new();

    let results = [
        guarded(|| criterion_1(&table1)),
        guarded(|| criterion_2(&dense)),
        guarded(criterion_3),
        guarded(criterion_4),
        guarded(criterion_5),
        guarded(criterion_6),
        guarded(|| criterion_7(&mut oracle_cases)),
        guarded(|| {
            let all = table1.records.iter().chain(&dense.records).flat_map(|r| r.outcomes.iter());
            criterion_8(all, &oracle_cases)
        }),
        guarded(criterion_9),
    ];
    let mut failed = 0;
    for (i, v) in results.iter().enumerate() {
        println!("criterion {}: {} - {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
