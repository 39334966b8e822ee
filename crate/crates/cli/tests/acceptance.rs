//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use faer::{Mat, Side};

use opfactor_core::analysis::{fit_slope, probe_dense_theta};
use opfactor_core::coloring::{color_supernodal, SupernodeSet};
use opfactor_core::oracles::{DenseOracle, FractionalOracle, SolveMethod, SolverOracle, StencilOracle, StencilScale};
use opfactor_core::*;

type Outcome = (bool, String);

fn mat(a: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

fn sym_norm(m: &Mat<f64>) -> f64 {
    let eig = m.as_ref().self_adjoint_eigenvalues(Side::Lower).unwrap();
    eig.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn grid(kind: ProblemKind, n: usize, seed: u64) -> Problem {
    build_problem(&ProblemSpec::grid(kind, n, 2, seed)).unwrap()
}

fn theta(p: &Problem) -> Mat<f64> {
    mat(&probe_dense_theta(p.oracle.as_ref(), &p.basis).unwrap())
}

/// `L L^T` in basis coordinates, formed with faer from the stored entries.
fn product(l: &SparseFactor) -> Mat<f64> {
    let n = l.n();
    let mut dense = Mat::<f64>::zeros(n, l.ncols());
    for c in 0..l.ncols() {
        let (rows, vals) = l.column(c);
        for (&r, &v) in rows.iter().zip(vals) {
            dense[(l.order()[r as usize], c)] = v;
        }
    }
    &dense * dense.transpose()
}

fn rel_err(p: &Problem, l: &SparseFactor) -> f64 {
    estimate_rel_error(p.oracle.as_ref(), &p.basis, l, 20, 0).unwrap().rel_err
}

fn sweep(p: &Problem, rhos: &[f64]) -> Vec<(usize, f64)> {
    rhos.iter()
        .map(|&rho| {
            let l = recover(p, rho, Mode::Simplicial).unwrap().factor;
            (l.provenance().matvecs, rel_err(p, &l))
        })
        .collect()
}

fn log_slope(rhos: &[f64], errs: &[f64]) -> f64 {
    fit_slope(rhos, &errs.iter().map(|e| e.log10()).collect::<Vec<_>>())
}

fn exactness() -> Outcome {
    let start = Instant::now();
    let p = grid(ProblemKind::LaplacePotential, 16, 0);
    let t = theta(&p);
    let l = recover(&p, f64::INFINITY, Mode::Simplicial).unwrap().factor;
    let err = sym_norm(&(&product(&l) - &t)) / sym_norm(&t);
    let secs = start.elapsed().as_secs_f64();
    (err <= 1e-10 && secs < 10.0, format!("rel err {err:.2e} (<= 1e-10), {secs:.1}s (< 10s)"))
}

/// Recovers a factor that is exactly sparse on the pattern of a recovery.
fn exactly_sparse_case(rho: f64, seed: u64) -> f64 {
    let p = grid(ProblemKind::LaplacePotential, 16, seed);
    let pattern = recover(&p, rho, Mode::Simplicial).unwrap().factor;
    let order = pattern.order().to_vec();
    let n = order.len();
    let t = theta(&p);
    let permuted = Mat::from_fn(n, n, |a, b| t[(order[a], order[b])]);
    let full = permuted.as_ref().llt(Side::Lower).unwrap().L().to_owned();
    // L0 in basis rows, position columns.
    let mut l0 = Mat::<f64>::zeros(n, n);
    for c in 0..n {
        for &r in pattern.column(c).0 {
            l0[(order[r as usize], c)] = full[(r as usize, c)];
        }
    }
    let bar = &l0 * l0.transpose();
    let w = Mat::from_fn(n, n, |r, i| {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        p.basis.apply(&e).unwrap()[r]
    });
    let inv = &w * &bar * w.transpose();
    let inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect()).collect();
    let oracle = DenseOracle::from_inverse(inv).unwrap();
    let coloring = color_simplicial(&p.basis, &p.tree, rho);
    let obs = observe(&oracle, &p.basis, build_measurements(&coloring, n).unwrap()).unwrap();
    let got = cholesky_recover(&obs, &coloring, &p.basis, &p.tree).unwrap().dense_positions();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for c in 0..n {
        for r in 0..n {
            let expected = l0[(order[r], c)];
            worst = worst.max((got[r][c] - expected).abs());
            scale = scale.max(expected.abs());
        }
    }
    worst / scale
}

fn exactly_sparse() -> Outcome {
    let start = Instant::now();
    let cases = [(1.0, 0), (1.5, 1), (2.0, 2), (3.0, 3), (4.0, 4)];
    let worst = cases.iter().map(|&(rho, seed)| exactly_sparse_case(rho, seed)).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    (
        worst <= 1e-10 && secs < 10.0,
        format!("{} cases, worst rel err {worst:.2e} (<= 1e-10), {secs:.1}s (< 10s)", cases.len()),
    )
}

struct LaplaceSweep {
    rhos: Vec<f64>,
    rows: Vec<(usize, f64)>,
    secs: f64,
}

fn decay(s: &LaplaceSweep) -> Outcome {
    let errs: Vec<f64> = s.rows.iter().map(|r| r.1).collect();
    let gain = errs[0] / errs[errs.len() - 1];
    let slope = log_slope(&s.rhos, &errs);
    let last = errs[errs.len() - 1];
    let ok = gain >= 2.0 && slope <= -0.3 && last <= 1e-5 && s.secs < 600.0;
    let list: Vec<String> = errs.iter().map(|e| format!("{e:.1e}")).collect();
    (
        ok,
        format!(
            "errors [{}], gain {gain:.1e} (>= 2), slope {slope:.2} (<= -0.3), err at 10 {last:.1e} (<= 1e-5), {:.0}s (< 600s)",
            list.join(", "),
            s.secs
        ),
    )
}

fn matvec_budget(s: &LaplaceSweep) -> Outcome {
    let max = s.rows.iter().map(|r| r.0).max().unwrap();
    let at = |rho: f64| s.rows[s.rhos.iter().position(|&r| r == rho).unwrap()].0 as f64;
    let ratio = at(8.0) / at(4.0);
    (
        max <= 5000 && (2.5..=6.0).contains(&ratio),
        format!("max matvecs {max} (<= 5000), ratio rho 8 / rho 4 = {ratio:.3} (in [2.5, 6])"),
    )
}

fn rough(s: &LaplaceSweep) -> Outcome {
    let p = grid(ProblemKind::RoughConductivity, 64, 0);
    let rhos = [4.0, 6.0, 8.0];
    let errs: Vec<f64> = sweep(&p, &rhos).iter().map(|r| r.1).collect();
    let smooth = s.rows[s.rhos.iter().position(|&r| r == 6.0).unwrap()].1;
    let ratio = errs[1] / smooth;
    let slope = log_slope(&rhos, &errs);
    (
        ratio <= 30.0 && slope <= -0.2,
        format!("rho 6: {:.1e} vs {smooth:.1e}, ratio {ratio:.2} (<= 30), slope {slope:.2} (<= -0.2)", errs[1]),
    )
}

fn fractional() -> Outcome {
    let rhos = [4.0, 5.0, 6.0, 7.0, 8.0];
    let mut ok = true;
    let mut detail = Vec::new();
    for s in [0.5, 1.5] {
        let p = build_problem(&ProblemSpec::fractional(64, 2, s)).unwrap();
        let errs: Vec<f64> = sweep(&p, &rhos).iter().map(|r| r.1).collect();
        let slope = log_slope(&rhos, &errs);
        ok &= slope <= -0.2;
        detail.push(format!("s={s}: slope {slope:.2} (<= -0.2)"));
    }
    let n = 64;
    let stencil =
        StencilOracle::with_coefficients(n, 2, vec![0.0; n * n], None, StencilScale::Unit, SolveMethod::Direct)
            .unwrap();
    let frac = FractionalOracle::new(n, 2, 1.0).unwrap();
    let mut worst = 0.0f64;
    for k in 0..20 {
        let b: Vec<f64> = (0..n * n).map(|i| ((i * 7919 + k * 104729) % 1000) as f64 / 1000.0 - 0.5).collect();
        let (u, v) = (stencil.apply(&b).unwrap(), frac.apply(&b).unwrap());
        worst = u.iter().zip(&v).fold(worst, |m, (x, y)| m.max((x - y).abs()));
    }
    ok &= worst <= 1e-10;
    detail.push(format!("s=1 vs stencil {worst:.1e} (<= 1e-10)"));
    (ok, detail.join(", "))
}

fn lowrank() -> Outcome {
    let spec =
        ProblemSpec { scale: StencilScale::MeshWidth, ..ProblemSpec::grid(ProblemKind::LaplacePotential, 32, 2, 0) };
    let p = build_problem(&spec).unwrap();
    let t = theta(&p);
    let sigma = t.as_ref().singular_values().unwrap();
    let rec = recover(&p, f64::INFINITY, Mode::Simplicial).unwrap();
    let cuts = opfactor_core::analysis::level_cuts(&rec.factor, &rec.coloring);
    let mut ok = true;
    let (mut ks, mut errs, mut detail) = (Vec::new(), Vec::new(), Vec::new());
    for colors in cuts {
        let l = rec.factor.truncate_colors(colors).unwrap();
        let k = l.ncols();
        let err = sym_norm(&(&t - &product(&l)));
        let bound = 100.0 * sigma[k];
        ok &= err <= bound;
        detail.push(format!("k={k}: {err:.2e} vs 100 sigma {bound:.2e}"));
        ks.push((k as f64).log10());
        errs.push(err.log10());
    }
    let slope = fit_slope(&ks, &errs);
    ok &= slope <= -0.5;
    (ok, format!("{}, slope {slope:.2} (<= -0.5)", detail.join(", ")))
}

fn supernodal() -> Outcome {
    let p = grid(ProblemKind::LaplacePotential, 16, 5);
    let rho = 2.0;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let diff = pool.install(|| {
        let simplicial = recover(&p, rho, Mode::Simplicial).unwrap().factor;
        let sn = SupernodeSet::singletons(&p.basis, &p.tree);
        let coloring = color_supernodal(&sn, &p.tree, rho);
        let m = build_supernodal_measurements(&coloring, &sn, p.basis.len()).unwrap();
        let obs = observe(p.oracle.as_ref(), &p.basis, m).unwrap();
        let block = supernodal_cholesky_recover(&obs, &coloring, &sn, &p.basis, &p.tree).unwrap();
        factor_diff(&block, &simplicial)
    });
    let mut ok = diff <= 1e-13;
    let mut detail = vec![format!("singletons vs simplicial {diff:.1e} (<= 1e-13)")];
    for n in [32, 64, 128] {
        let tree = build_regular_partition(&[n, n], true).unwrap();
        let basis = build_haar_basis(&tree);
        let worst: Vec<usize> = [2.0, 3.0, 4.0, 5.0, 6.0]
            .iter()
            .map(|&rho| {
                let sn = aggregate_supernodes(&basis, &tree, rho);
                color_supernodal(&sn, &tree, rho).per_level_counts(basis.depth()).into_iter().max().unwrap()
            })
            .collect();
        // Flat means no growth: small grids saturate at large rho and color
        // fewer supernodes, which is not held against the bound.
        let (lo, hi) = (*worst.iter().min().unwrap(), *worst.iter().max().unwrap());
        ok &= hi <= 65 && hi as f64 <= 1.5 * worst[0] as f64;
        detail.push(format!(
            "{n}x{n} max per-level colors over rho 2..6 {worst:?} (<= 65, <= 1.5x rho 2 count; max/min {:.2})",
            hi as f64 / lo as f64
        ));
    }
    (ok, detail.join(", "))
}

fn factor_diff(a: &SparseFactor, b: &SparseFactor) -> f64 {
    if a.order() != b.order() || a.ncols() != b.ncols() {
        return f64::INFINITY;
    }
    let mut worst = 0.0f64;
    for c in 0..a.ncols() {
        let ((ra, va), (rb, vb)) = (a.column(c), b.column(c));
        if ra != rb {
            return f64::INFINITY;
        }
        for (x, y) in va.iter().zip(vb) {
            let scale = x.abs().max(y.abs());
            if scale > 0.0 {
                worst = worst.max((x - y).abs() / scale);
            }
        }
    }
    worst
}

fn queries() -> Outcome {
    let p = grid(ProblemKind::LaplacePotential, 16, 0);
    let l = recover(&p, 3.0, Mode::Simplicial).unwrap().factor;
    let dense = product(&l);
    let mut entry_err = 0.0f64;
    for i in 0..l.n() {
        for j in 0..l.n() {
            let d = dense[(i, j)];
            entry_err = entry_err.max((l.entry(i, j).unwrap() - d).abs() / d.abs().max(1.0));
        }
    }

    let t = theta(&p);
    let full = recover(&p, f64::INFINITY, Mode::Simplicial).unwrap().factor;
    let eig = t.as_ref().self_adjoint_eigenvalues(Side::Lower).unwrap();
    let reference: f64 = eig.iter().map(|v| v.ln()).sum();
    let logdet_err = (full.logdet().unwrap() - reference).abs() / reference.abs();

    let small = grid(ProblemKind::LaplacePotential, 4, 0);
    let l = recover(&small, f64::INFINITY, Mode::Simplicial).unwrap().factor;
    let c = product(&l);
    let n = l.n();
    let samples = 10_000;
    let mut cov = Mat::<f64>::zeros(n, n);
    for s in 0..samples {
        let x = l.sample(s);
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += x[i] * x[j];
            }
        }
    }
    let mut cov_err = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let scale = (c[(i, i)] * c[(j, j)]).sqrt();
            cov_err = cov_err.max((cov[(i, j)] / samples as f64 - c[(i, j)]).abs() / scale);
        }
    }
    (
        entry_err <= 1e-12 && logdet_err <= 1e-8 && cov_err <= 0.05,
        format!(
            "entry {entry_err:.1e} (<= 1e-12), logdet {logdet_err:.1e} (<= 1e-8), sample covariance {cov_err:.3} (<= 0.05)"
        ),
    )
}

fn run_cli(args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_opfactor")).arg("--threads").arg("1").args(args).output().unwrap();
    assert!(out.status.success(), "opfactor {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let file = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let recover_to = |path: &str| {
        run_cli(&[
            "recover",
            "--problem",
            "rough_conductivity",
            "--n",
            "32",
            "--seed",
            "7",
            "--rho",
            "3",
            "--out",
            path,
        ]);
        std::fs::read(Path::new(path)).unwrap()
    };
    let same_factor = recover_to(&file("a.bin")) == recover_to(&file("b.bin"));
    let sweep =
        || run_cli(&["sweep", "--problem", "laplace_potential", "--n", "32", "--seed", "7", "--rho-list", "2,3,4"]);
    let same_csv = sweep() == sweep();

    let p = grid(ProblemKind::LaplacePotential, 32, 4);
    let mut worst = 0.0f64;
    for mode in [Mode::Simplicial, Mode::Supernodal] {
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| recover(&p, 3.0, mode).unwrap().factor)
        };
        worst = worst.max(factor_diff(&run(1), &run(4)));
    }
    (
        same_factor && same_csv && worst <= 1e-13,
        format!("factor files identical: {same_factor}, CSVs identical: {same_csv}, parallel vs sequential {worst:.1e} (<= 1e-13)"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, (ok, detail): Outcome| {
        println!("{} criterion {id} ({name}): {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    };
    report(1, "exactness limit", exactness());
    report(2, "exactly sparse recovery", exactly_sparse());

    let start = Instant::now();
    let p = grid(ProblemKind::LaplacePotential, 64, 0);
    let rhos = vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
    let rows = sweep(&p, &rhos);
    let laplace = LaplaceSweep { rhos, rows, secs: start.elapsed().as_secs_f64() };
    report(3, "exponential decay in rho", decay(&laplace));
    report(4, "matvec budget", matvec_budget(&laplace));
    report(5, "rough coefficients", rough(&laplace));
    report(6, "fractional operators", fractional());
    report(7, "low-rank near-optimality", lowrank());
    report(8, "supernodal equivalence and bound", supernodal());
    report(9, "downstream queries", queries());
    report(10, "determinism", determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
