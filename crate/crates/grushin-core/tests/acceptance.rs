//! Acceptance criteria 1 to 12, one line each. Exits nonzero if any fails.

use std::time::{Duration, Instant};

use grushin_core::geometry::{
    alpha_threshold, volume_doubling_constant, weight_integral_check, GeometryContext, PlanePoint, WeightQuadrature,
};
use grushin_core::grushin::{l1_norm, plancherel_identity, weighted_moment, KernelOptions};
use grushin_core::multipliers::Multiplier;
use grushin_core::potentials::{classify, suite, ClassifyGrid, Potential};
use grushin_core::spectral_matrices::{
    decay_fit, identity_report, matrix_a, matrix_p, projector_sup, rho_set, virial_checks, MatrixA, MatrixP,
};
use grushin_core::sturm::{eigen_system, eigenvalues, Cutoff, EigenSystem, SolverOptions};

const SUITE_N: usize = 128;
const XPRIMES: [f64; 3] = [0.0, 0.5, 2.0];
const THETAS: [f64; 3] = [0.0, 0.25, 0.4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn out(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let el = t.elapsed();
    o.detail.push_str(&format!("; {:.1} s", el.as_secs_f64()));
    if let Some(l) = limit {
        o.detail.push_str(&format!(" (limit {} s)", l.as_secs()));
        o.pass &= el < l;
    }
    o
}

fn window(vals: &[f64]) -> (f64, f64, f64) {
    let mut s = vals.to_vec();
    s.sort_by(f64::total_cmp);
    let med = if s.len() % 2 == 1 { s[s.len() / 2] } else { 0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2]) };
    (s[0], med, s[s.len() - 1])
}

fn within_factor(vals: &[f64], f: f64) -> (bool, f64) {
    let (lo, med, hi) = window(vals);
    let w = (hi / med).max(med / lo);
    (lo > 0.0 && w <= f, w)
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

struct SuiteEntry {
    v: Potential,
    sys: EigenSystem,
    p: MatrixP,
    a: MatrixA,
}

fn build_suite(opts: &SolverOptions) -> Vec<SuiteEntry> {
    suite()
        .into_iter()
        .map(|v| {
            let sys = eigen_system(&v, 1.0, Cutoff::Count(SUITE_N), opts).expect("suite eigen system");
            let p = matrix_p(&sys).expect("P");
            let a = matrix_a(&p, &sys.energies()).expect("A");
            SuiteEntry { v, sys, p, a }
        })
        .collect()
}

fn c1(opts: &SolverOptions) -> Outcome {
    let es = eigenvalues(&Potential::power(2.0), 40, opts).expect("harmonic spectrum");
    let err = es.iter().enumerate().map(|(i, e)| (e - (2 * i + 1) as f64).abs() / (2 * i + 1) as f64).fold(0.0, f64::max);
    out(err < 1e-6, format!("harmonic E_n = 2n-1, n <= 40: max rel err {err:.2e} (tol 1e-6)"))
}

fn c2(opts: &SolverOptions) -> Outcome {
    let es = eigenvalues(&Potential::power(1.0), 2, opts).expect("|x| spectrum");
    let d1 = (es[0] - 1.018793).abs();
    let d2 = (es[1] - 2.338107).abs();
    out(d1 < 1e-6 && d2 < 1e-6, format!("|x| spectrum: |E1-1.018793| = {d1:.1e}, |E2-2.338107| = {d2:.1e} (tol 1e-6)"))
}

fn c3(entries: &[SuiteEntry]) -> Outcome {
    let tol = 1e-6;
    let (mut lower, mut upper) = (f64::INFINITY, f64::INFINITY);
    for s in entries {
        for (i, p) in s.sys.pairs.iter().enumerate() {
            let n = (i + 1) as f64;
            let m = s.v.sublevel_measure(p.e).unwrap();
            lower = lower.min(p.e.sqrt() * m - std::f64::consts::PI * (n - 1.0));
            for t in [1.0f64, 3.0] {
                let e = p.e / (1.0 + t);
                let lhs = e.sqrt() * s.v.sublevel_measure(e).unwrap();
                upper = upper.min(std::f64::consts::PI * n / t.sqrt() - lhs);
            }
        }
    }
    out(
        lower >= -tol && upper >= -tol,
        format!("Bohr-Sommerfeld on suite, n <= {SUITE_N}: min lower slack {lower:.3e}, min upper slack (t=1,3) {upper:.3e} (tol 1e-6)"),
    )
}

fn c4(entries: &[SuiteEntry]) -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    for s in entries {
        let e = s.sys.energies();
        let q: Vec<f64> = (5..=100).map(|n| (e[n] - e[n - 1]) * n as f64 / e[n - 1]).collect();
        let (p, w) = within_factor(&q, 4.0);
        ok &= p;
        worst = worst.max(w);
    }
    out(ok, format!("gap law n in [5,100]: worst max/median or median/min {worst:.3} (limit 4)"))
}

fn c5(entries: &[SuiteEntry], opts: &SolverOptions) -> Outcome {
    let (mut id, mut vir) = (0.0f64, 0.0f64);
    for s in entries {
        let r = identity_report(&s.sys, &s.p, &s.a);
        id = id.max(r.p_asymmetry.max(r.a_antisymmetry).max(r.av_residual) / r.e_n);
        let v = virial_checks(&s.sys, &s.p, 20, 1e-4, opts).expect("virial");
        for k in 0..v.n.len() {
            vir = vir.max(v.r1[k].max(v.r2[k]) / v.e[k]);
        }
    }
    out(
        id < 1e-8 && vir < 1e-4,
        format!("matrix identities: max residual / E_N {id:.2e} (tol 1e-8); virial r1, r2 / E_n {vir:.2e} (tol 1e-4)"),
    )
}

fn c6(entries: &[SuiteEntry]) -> Outcome {
    let a = &entries.iter().find(|s| s.v.homogeneous_degree() == Some(2.0)).unwrap().a;
    let guard = (0.8 * SUITE_N as f64) as usize;
    let mut off = 0.0f64;
    for i in 0..guard {
        for j in 0..guard {
            if i.abs_diff(j) != 2 {
                off = off.max(a.m.get(i, j).abs());
            }
        }
    }
    let a13 = a.m.get(0, 2);
    let d = (a13 + 0.176777).abs();
    out(off < 1e-8 && d < 1e-5, format!("harmonic selection: max |A_nm|, |n-m| != 2: {off:.2e} (tol 1e-8); A13 = {a13:.7} (tol 1e-5)"))
}

fn c7(entries: &[SuiteEntry]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for s in entries {
        let rep = decay_fit(&s.p, &s.a, &s.sys.energies()).expect("decay fit");
        let cls = classify(&s.v, &ClassifyGrid::default()).expect("classify");
        let need = if cls.in_p1_theta { 1.05 } else { 1.0 };
        let bounded = rep.far_constant.is_finite() && rep.far_constant_upper <= 2.0 * rep.far_constant_lower;
        ok &= rep.alpha_near >= need && bounded;
        parts.push(format!(
            "{}: alpha {:.2} (need {need}), C_far {:.3} lower/upper {:.3}/{:.3}",
            s.v.label(),
            rep.alpha_near,
            rep.far_constant,
            rep.far_constant_lower,
            rep.far_constant_upper
        ));
    }
    out(ok, format!("matrix decay N = {SUITE_N}: {}", parts.join("; ")))
}

fn c8(entries: &[SuiteEntry]) -> Outcome {
    let (mut wp, mut wr) = (0.0f64, 0.0f64);
    let mut ok = true;
    for s in entries {
        let e = s.sys.energies();
        let rho = rho_set(&s.sys, &s.a).expect("rho");
        let psi: Vec<Vec<f64>> = s.sys.pairs.iter().map(|p| p.psi.clone()).collect();
        let (mut ps, mut rs) = (Vec::new(), Vec::new());
        let mut e0 = e[0];
        // ρ_n is reliable on the guarded rows only
        let cap = (e[e.len() - 1] / 4.0).min(e[(0.8 * e.len() as f64) as usize - 1]);
        while e0 <= cap {
            ps.push(projector_sup(&s.sys, &psi, e0).unwrap() / e0.sqrt());
            rs.push(projector_sup(&s.sys, &rho.rho, e0).unwrap() / e0.sqrt());
            e0 *= 2.0;
        }
        let (p1, w1) = within_factor(&ps, 4.0);
        let (p2, w2) = within_factor(&rs, 4.0);
        ok &= p1 && p2;
        wp = wp.max(w1);
        wr = wr.max(w2);
    }
    out(ok, format!("projector bounds over dyadic E0: window psi {wp:.3}, rho {wr:.3} (limit 4)"))
}

fn c9() -> Outcome {
    let p = plancherel_identity(&Potential::power(2.0), &Multiplier::bump(), 1.0, 0.0, &KernelOptions::default())
        .expect("plancherel identity");
    let (g0, g2) = (p.rel_gap(), p.y2_rel_gap());
    out(
        g0 < 1e-3 && g2 < 5e-3,
        format!(
            "Plancherel x^2 bump r=1: theta=0 gap {g0:.2e} (tol 1e-3), y^2 gap {g2:.2e} (tol 5e-3), a_detected {:?}",
            p.a_detected
        ),
    )
}

fn c10() -> Outcome {
    let opts = KernelOptions::default();
    let m = Multiplier::bump();
    let mut ok = true;
    let mut parts = Vec::new();
    for v in [Potential::power(2.0), Potential::power(4.0)] {
        // ratios[θ][x'][r]
        let mut ratios = vec![vec![Vec::new(); XPRIMES.len()]; THETAS.len()];
        let rs: Vec<f64> = (-3..=3).map(|k| 2f64.powi(k)).collect();
        for &r in &rs {
            for (ix, &x) in XPRIMES.iter().enumerate() {
                let rep = weighted_moment(&v, &m, r, PlanePoint::new(x, 0.0), &THETAS, &opts).expect("weighted moment");
                for (it, q) in rep.iter().enumerate() {
                    ratios[it][ix].push(q.ratio);
                }
            }
        }
        for (it, &theta) in THETAS.iter().enumerate() {
            let all: Vec<f64> = ratios[it].iter().flatten().copied().collect();
            let (lo, _, hi) = window(&all);
            let slope = ratios[it]
                .iter()
                .map(|row| ls_slope(&rs.iter().zip(row).map(|(r, q)| (r.ln(), q.ln())).collect::<Vec<_>>()).abs())
                .fold(0.0, f64::max);
            let pass = lo > 0.0 && hi.is_finite() && hi / lo <= 10.0 && slope <= 0.25;
            ok &= pass;
            parts.push(format!("{} theta={theta}: max/min {:.2}, |trend| {slope:.3}", v.label(), hi / lo));
        }
    }
    out(ok, format!("weighted Plancherel (limits 10, 0.25): {}", parts.join("; ")))
}

fn c11() -> Outcome {
    let opts = KernelOptions::default();
    let v = Potential::power(2.0);
    let sups: Vec<f64> =
        (-3..=3).map(|k| l1_norm(&v, &Multiplier::bump(), 2f64.powi(k), &XPRIMES, &opts).expect("bump L1").sup).collect();
    let (lo, _, hi) = window(&sups);
    let alphas = [1.0, 4.0, 16.0];
    let l1: Vec<f64> =
        alphas.iter().map(|&a| l1_norm(&v, &Multiplier::imaginary_power(a), 1.0, &[0.0], &opts).expect("L1").sup).collect();
    let monotone = l1.windows(2).all(|w| w[1] >= w[0]);
    let slope = ls_slope(&alphas.iter().zip(&l1).map(|(a, l)| ((1.0 + a).ln(), l.ln())).collect::<Vec<_>>());
    out(
        hi.is_finite() && hi / lo <= 10.0 && monotone && (0.5..=1.5).contains(&slope),
        format!(
            "L1: bump sup over r max/min {:.3} (limit 10); imaginary powers {:?} nondecreasing {monotone}, exponent {slope:.3} (range [0.5, 1.5])",
            hi / lo,
            l1.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn c12() -> Outcome {
    let q = WeightQuadrature::default();
    let mut vals = Vec::new();
    let mut finite = true;
    let mut doubling = 0.0f64;
    let mut dbl_ok = true;
    for v in suite() {
        let ctx = GeometryContext::new(&v).expect("geometry context");
        let dbl = volume_doubling_constant(&ctx, &[2.0, 4.0, 8.0], 2000, 11);
        dbl_ok &= dbl <= 2f64.powf(ctx.q) * 4.0;
        doubling = doubling.max(dbl / 2f64.powf(ctx.q));
        if v.homogeneous_degree() != Some(2.0) {
            continue;
        }
        for beta in [0.0, 0.25, 0.5, 0.75] {
            let thr = alpha_threshold(&ctx, beta);
            for da in [1.0, 2.0, 4.0] {
                for r in [0.25, 1.0, 4.0] {
                    for zp in [PlanePoint::new(0.0, 0.0), PlanePoint::new(2.0, 1.0)] {
                        match weight_integral_check(&ctx, zp, r, thr + da, beta, &q) {
                            Ok(x) if x.is_finite() => vals.push(x),
                            _ => finite = false,
                        }
                    }
                }
            }
        }
    }
    let (_, med, hi) = window(&vals);
    out(
        finite && hi <= 10.0 * med && dbl_ok,
        format!(
            "geometry: weight integral max/median {:.3} over {} points (limit 10); max doubling / 2^Q {doubling:.3} (limit 4)",
            hi / med,
            vals.len()
        ),
    )
}

fn main() {
    let opts = SolverOptions::default();
    let mut failed = 0;
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    };
    report(1, timed(Some(Duration::from_secs(10)), || c1(&opts)));
    report(2, timed(None, || c2(&opts)));
    let t = Instant::now();
    let entries = build_suite(&opts);
    let build = t.elapsed();
    report(
        3,
        timed(Some(Duration::from_secs(120).saturating_sub(build)), || {
            let mut o = c3(&entries);
            o.detail.push_str(&format!("; suite build {:.1} s", build.as_secs_f64()));
            o
        }),
    );
    report(4, timed(None, || c4(&entries)));
    report(5, timed(None, || c5(&entries, &opts)));
    report(6, timed(None, || c6(&entries)));
    report(7, timed(None, || c7(&entries)));
    report(8, timed(None, || c8(&entries)));
    report(9, timed(None, c9));
    report(10, timed(Some(Duration::from_secs(1800)), c10));
    report(11, timed(None, c11));
    report(12, timed(None, c12));
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
