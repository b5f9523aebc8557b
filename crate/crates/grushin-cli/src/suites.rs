use std::f64::consts::PI;

use anyhow::{Context, Result};
use grushin_core::cache::eigen_system_cached;
use grushin_core::geometry::{
    alpha_threshold, quasi_triangle_constant, volume_doubling_constant, weight_integral_check, GeometryContext, PlanePoint,
    WeightQuadrature,
};
use grushin_core::grushin::{l1_norm, plancherel_identity, weighted_moment, L1Sample, PlancherelReport};
use grushin_core::potentials::{classify, ClassificationReport, ClassifyGrid, Potential};
use grushin_core::spectral_matrices::{
    decay_fit, far_operator_norm, identity_report, matrix_a, matrix_p, projector_sup, rho_set, virial_checks,
};
use grushin_core::sturm::{Cutoff, EigenSystem};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{slug, Check, PlotData};

/// Checks, plot tables and JSON side files of one section.
#[derive(Default)]
pub struct SectionOutput {
    pub checks: Vec<Check>,
    pub plots: Vec<PlotData>,
    pub json: Vec<(String, String)>,
}

impl SectionOutput {
    fn merge(parts: Vec<SectionOutput>) -> Self {
        let mut out = Self::default();
        for p in parts {
            out.checks.extend(p.checks);
            out.plots.extend(p.plots);
            out.json.extend(p.json);
        }
        out
    }
}

/// Runs `f` on every potential concurrently; output order follows the config.
fn per_potential(pots: &[Potential], f: impl Fn(&Potential) -> Result<SectionOutput> + Sync) -> Result<SectionOutput> {
    let parts: Vec<SectionOutput> = pots.par_iter().map(|v| f(v).with_context(|| v.label())).collect::<Result<_>>()?;
    Ok(SectionOutput::merge(parts))
}

/// `(max/median, median/min)` folded into one window factor.
fn window(vals: &[f64]) -> f64 {
    let mut s: Vec<f64> = vals.to_vec();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let med = s[s.len() / 2];
    (s[s.len() - 1] / med).max(med / s[0])
}

fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Serialize)]
struct Classified<'a> {
    potential: String,
    report: &'a ClassificationReport,
}

pub fn classify_section(_cfg: &RunConfig, pots: &[Potential]) -> Result<SectionOutput> {
    const S: &str = "classify";
    let reports: Vec<ClassificationReport> =
        pots.par_iter().map(|v| classify(v, &ClassifyGrid::default()).with_context(|| v.label())).collect::<Result<_>>()?;
    let mut out = SectionOutput::default();
    for (v, r) in pots.iter().zip(&reports) {
        let l = v.label();
        out.checks.push(Check::flag(S, &l, "in_p1", false, r.in_p1));
        out.checks.push(Check::flag(S, &l, "in_p1_theta", false, r.in_p1_theta));
        out.checks.push(Check::measured(S, &l, "kappa", r.kappa_measured));
        out.checks.push(Check::measured(S, &l, "theta", r.theta_measured));
        out.checks.push(Check::measured(S, &l, "D", r.d_measured));
    }
    let list: Vec<Classified> = pots.iter().zip(&reports).map(|(v, r)| Classified { potential: v.label(), report: r }).collect();
    out.json.push(("classification.json".into(), serde_json::to_string_pretty(&list)?));
    Ok(out)
}

fn system(cfg: &RunConfig, v: &Potential, cutoff: Cutoff) -> Result<EigenSystem> {
    eigen_system_cached(v, 1.0, cutoff, &cfg.solver, None).context("eigen system")
}

pub fn eigensolve_section(cfg: &RunConfig, pots: &[Potential]) -> Result<SectionOutput> {
    const S: &str = "eigensolve";
    per_potential(pots, |v| {
        let l = v.label();
        let cutoff = cfg.e_max.map_or(Cutoff::Count(cfg.n_states), Cutoff::Energy);
        let sys = system(cfg, v, cutoff)?;
        let e = sys.energies();
        let mut out = SectionOutput::default();
        let pv: Vec<f64> = e.iter().map(|&x| Ok(x.sqrt() * v.sublevel_measure(x)?)).collect::<Result<_>>()?;
        let lower = (0..e.len()).map(|i| pv[i] - PI * i as f64).fold(f64::INFINITY, f64::min);
        out.checks.push(Check::at_least(S, &l, "bohr_sommerfeld_lower_slack", true, lower, -1e-6));
        for t in [1.0f64, 3.0] {
            let mut slack = f64::INFINITY;
            for (i, &x) in e.iter().enumerate() {
                let y = x / (1.0 + t);
                slack = slack.min(PI * (i + 1) as f64 / t.sqrt() - y.sqrt() * v.sublevel_measure(y)?);
            }
            out.checks.push(Check::at_least(S, &l, &format!("bohr_sommerfeld_upper_slack_t{t}"), true, slack, -1e-6));
        }
        let hi = e.len().min(100);
        if hi > 5 {
            let comp: Vec<f64> = (5..=hi).map(|n| pv[n - 1] / n as f64).collect();
            out.checks.push(Check::at_most(S, &l, "bohr_sommerfeld_window", false, window(&comp), 4.0));
            let gaps: Vec<f64> = (5..hi).map(|n| (e[n] - e[n - 1]) * n as f64 / e[n - 1]).collect();
            out.checks.push(Check::at_most(S, &l, "gap_window", false, window(&gaps), 4.0).detail(format!("n in [5, {}]", hi - 1)));
        }
        match v.homogeneous_degree() {
            Some(d) if d == 2.0 => {
                let k = e.len().min(40);
                let err = (0..k).map(|i| (e[i] - (2 * i + 1) as f64).abs() / (2 * i + 1) as f64).fold(0.0, f64::max);
                out.checks.push(Check::at_most(S, &l, "harmonic_oracle_rel_err", true, err, 1e-6).detail(format!("n <= {k}")));
            }
            Some(d) if d == 1.0 && e.len() >= 2 => {
                let err = (e[0] - 1.018793).abs().max((e[1] - 2.338107).abs());
                out.checks.push(Check::at_most(S, &l, "airy_oracle_abs_err", true, err, 1e-6));
            }
            _ => {}
        }
        let rows = e.iter().enumerate().map(|(i, &x)| (i + 1, x, pv[i])).collect();
        out.plots.push(PlotData::Eigenvalues { file: format!("eigenvalues_{}.csv", slug(&l)), rows });
        Ok(out)
    })
}

pub fn matrices_section(cfg: &RunConfig, pots: &[Potential]) -> Result<SectionOutput> {
    const S: &str = "matrices";
    per_potential(pots, |v| {
        let l = v.label();
        let sys = system(cfg, v, Cutoff::Count(cfg.n_states))?;
        let e = sys.energies();
        let p = matrix_p(&sys)?;
        let a = matrix_a(&p, &e)?;
        let id = identity_report(&sys, &p, &a);
        let en = id.e_n;
        let mut out = SectionOutput::default();
        out.checks.push(Check::at_most(S, &l, "p_asymmetry_over_e_n", true, id.p_asymmetry / en, 1e-8));
        out.checks.push(Check::at_most(S, &l, "a_antisymmetry_over_e_n", true, id.a_antisymmetry / en, 1e-8));
        out.checks.push(Check::at_most(S, &l, "av_residual_over_e_n", true, id.av_residual / en, 1e-8));
        if let Some(par) = id.parity_residual {
            out.checks.push(Check::at_most(S, &l, "parity_residual_over_e_n", true, par / en, 1e-10));
        }
        out.checks.push(Check::measured(S, &l, "commutator_residual", id.commutator_residual));
        let vir = virial_checks(&sys, &p, 20, 1e-4, &cfg.solver)?;
        let r1 = (0..vir.n.len()).map(|k| vir.r1[k] / vir.e[k]).fold(0.0, f64::max);
        let r2 = (0..vir.n.len()).map(|k| vir.r2[k] / vir.e[k]).fold(0.0, f64::max);
        out.checks.push(Check::at_most(S, &l, "virial_r1_over_e", true, r1, 1e-4));
        out.checks.push(Check::at_most(S, &l, "virial_r2_over_e", true, r2, 1e-4));
        out.checks.push(Check::flag(S, &l, "diagonal_in_range", true, vir.diagonal_in_range));
        if v.homogeneous_degree() == Some(2.0) && e.len() >= 3 {
            let guard = (0.8 * e.len() as f64) as usize;
            let mut off = 0.0f64;
            for i in 0..guard {
                for j in 0..guard {
                    if i.abs_diff(j) != 2 {
                        off = off.max(a.m.get(i, j).abs());
                    }
                }
            }
            out.checks.push(Check::at_most(S, &l, "harmonic_off_band_max", true, off, 1e-8));
            out.checks.push(Check::at_most(S, &l, "harmonic_a13_error", true, (a.m.get(0, 2) + 0.176777).abs(), 1e-5));
        }
        if e.len() >= 64 {
            let d = decay_fit(&p, &a, &e)?;
            out.checks.push(Check::at_least(S, &l, "near_diag_exponent", false, d.alpha_near, 1.0).detail(if d.sparse_band {
                "sparse band".to_string()
            } else {
                format!("{} band points", d.band_points)
            }));
            out.checks.push(Check::at_most(S, &l, "far_constant_upper_over_lower", false, d.far_constant_upper / d.far_constant_lower, 2.0));
            out.checks.push(Check::measured(S, &l, "far_constant", d.far_constant));
            out.checks.push(Check::measured(S, &l, "row_sum_max", d.row_sum_max));
            out.checks.push(Check::measured(S, &l, "far_operator_norm", far_operator_norm(&a)?));
            out.plots.push(PlotData::Decay { file: format!("decay_{}.csv", slug(&l)), rows: d.envelope });
        }
        let rho = rho_set(&sys, &a)?;
        let psi: Vec<Vec<f64>> = sys.pairs.iter().map(|q| q.psi.clone()).collect();
        let cap = (e[e.len() - 1] / 4.0).min(e[((0.8 * e.len() as f64) as usize).max(1) - 1]);
        let (mut ps, mut rs) = (Vec::new(), Vec::new());
        let mut e0 = e[0];
        while e0 <= cap {
            ps.push(projector_sup(&sys, &psi, e0)? / e0.sqrt());
            rs.push(projector_sup(&sys, &rho.rho, e0)? / e0.sqrt());
            e0 *= 2.0;
        }
        if ps.len() >= 2 {
            out.checks.push(Check::at_most(S, &l, "projector_window", false, window(&ps), 4.0));
            out.checks.push(Check::at_most(S, &l, "rho_projector_window", false, window(&rs), 4.0));
        }
        Ok(out)
    })
}

pub fn geometry_section(cfg: &RunConfig, pots: &[Potential]) -> Result<SectionOutput> {
    const S: &str = "geometry";
    per_potential(pots, |v| {
        let l = v.label();
        let ctx = GeometryContext::new(v)?;
        let mut out = SectionOutput::default();
        out.checks.push(Check::measured(S, &l, "quasi_triangle_constant", quasi_triangle_constant(&ctx, cfg.geometry_samples, cfg.seed)));
        let dbl = volume_doubling_constant(&ctx, &[2.0, 4.0, 8.0], cfg.geometry_samples, cfg.seed);
        out.checks.push(Check::at_most(S, &l, "volume_doubling_constant", false, dbl, 2f64.powf(ctx.q) * 4.0));
        let q = WeightQuadrature::default();
        let mut vals = Vec::new();
        let mut failures = 0usize;
        for beta in [0.0, 0.25, 0.5, 0.75] {
            let thr = alpha_threshold(&ctx, beta);
            for da in [1.0, 2.0, 4.0] {
                for r in [0.25, 1.0, 4.0] {
                    for &x in &cfg.xprimes {
                        match weight_integral_check(&ctx, PlanePoint::new(x, 0.0), r, thr + da, beta, &q) {
                            Ok(w) if w.is_finite() => vals.push(w),
                            _ => failures += 1,
                        }
                    }
                }
            }
        }
        let spread = if failures > 0 || vals.is_empty() {
            f64::INFINITY
        } else {
            let mut s = vals.clone();
            s.sort_by(f64::total_cmp);
            s[s.len() - 1] / s[s.len() / 2]
        };
        out.checks.push(
            Check::at_most(S, &l, "weight_integral_max_over_median", false, spread, 10.0)
                .detail(format!("{} points, {failures} failed", vals.len() + failures)),
        );
        Ok(out)
    })
}

pub fn plancherel_section(cfg: &RunConfig, pots: &[Potential], config_hash: &str) -> Result<SectionOutput> {
    const S: &str = "plancherel";
    let mults = cfg.multiplier_list()?;
    per_potential(pots, |v| {
        let mut out = SectionOutput::default();
        for m in &mults {
            let subject = format!("{} / {}", v.label(), m.id);
            let stem = format!("{}_{}", slug(&v.label()), slug(&m.id));
            let mut rows = Vec::new();
            let mut moments = Vec::new();
            for &r in &cfg.r_grid {
                for &x in &cfg.xprimes {
                    let rep = weighted_moment(v, m, r, PlanePoint::new(x, 0.0), &cfg.thetas, &cfg.kernel)
                        .with_context(|| format!("{subject}, r = {r}, x' = {x}"))?;
                    for q in &rep {
                        rows.push([q.theta, q.r, q.xprime, q.moment, q.norm_sq, q.ratio]);
                    }
                    moments.extend(rep);
                }
            }
            if !m.is_zero() {
                for &t in &cfg.thetas {
                    let sel: Vec<&[f64; 6]> = rows.iter().filter(|row| row[0] == t).collect();
                    let vals: Vec<f64> = sel.iter().map(|row| row[5]).collect();
                    let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &q| (a.min(q), b.max(q)));
                    out.checks.push(Check::at_most(S, &subject, &format!("ratio_spread_theta{t}"), false, hi / lo, 10.0));
                    if cfg.r_grid.len() >= 2 {
                        let trend = cfg
                            .xprimes
                            .iter()
                            .map(|&x| {
                                let pts: Vec<(f64, f64)> =
                                    sel.iter().filter(|row| row[2] == x).map(|row| (row[1].ln(), row[5].ln())).collect();
                                ls_slope(&pts).abs()
                            })
                            .fold(0.0, f64::max);
                        out.checks.push(Check::at_most(S, &subject, &format!("ratio_trend_theta{t}"), false, trend, 0.25));
                    }
                }
            }
            let mut l1 = Vec::<L1Sample>::new();
            if cfg.l1 {
                for &r in &cfg.r_grid {
                    l1.extend(l1_norm(v, m, r, &cfg.xprimes, &cfg.kernel).with_context(|| format!("{subject}, L1 at r = {r}"))?.samples);
                }
                if !m.is_zero() {
                    let vals: Vec<f64> = l1.iter().map(|s| s.value).collect();
                    let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &q| (a.min(q), b.max(q)));
                    out.checks.push(Check::at_most(S, &subject, "l1_spread", false, hi / lo, 10.0));
                }
            }
            if cfg.plancherel_identity {
                let p = plancherel_identity(v, m, 1.0, 0.0, &cfg.kernel).with_context(|| format!("{subject}, Plancherel identity"))?;
                if m.is_zero() {
                    out.checks.push(Check::flag(S, &subject, "pieces_vanish", false, p.pieces.iter().all(|q| q.vanishing)));
                } else {
                    out.checks.push(Check::at_most(S, &subject, "identity_gap_theta0", false, p.rel_gap(), 1e-3));
                    out.checks.push(Check::at_most(S, &subject, "identity_gap_y2", false, p.y2_rel_gap(), 5e-3));
                    out.checks.push(Check::measured(S, &subject, "a_detected", p.a_detected.unwrap_or(f64::NAN)));
                }
            }
            let report = PlancherelReport { config_hash: config_hash.to_string(), moments, l1 };
            out.json.push((format!("plancherel_{stem}.json"), serde_json::to_string_pretty(&report)?));
            out.plots.push(PlotData::Ratios { file: format!("ratios_{stem}.csv"), rows });
        }
        Ok(out)
    })
}
