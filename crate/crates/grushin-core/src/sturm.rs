//! Eigenvalues and eigenfunctions of `-d²/dx² + τV` by Prüfer-phase shooting.
//!
//! Each half-line is integrated inward from a recessive starting point. The
//! integration uses the scaled Prüfer variables `λ(x) v = R cos θ`,
//! `v' = R sin θ` with a smooth positive `λ(x) ≈ |E - V|^{1/2}`; the phase at 0
//! is then re-expressed for the requested reference `λ`. Because the argument
//! of `λ v + i v'` at a point only depends on `λ` there and on the winding
//! (counted by the zeros of `v`), this equals the phase obtained by integrating
//! with the constant `λ`.

use std::f64::consts::PI;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{integrate, OdeOptions};
use crate::potentials::Potential;
use crate::quad::gauss_legendre_on;
use crate::spectral_matrices::MatrixA;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Right => 1.0,
            Side::Left => -1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Relative eigenvalue tolerance.
    pub tol_e: f64,
    /// `V(x_max) ≥ lambda_trunc · E`.
    pub lambda_trunc: f64,
    /// `x_max V(x_max)^{1/2} ≥ agmon_margin`.
    pub agmon_margin: f64,
    pub nodes_per_wavelength: usize,
    /// Eigenvalue searches give up above this energy.
    pub e_ceiling: f64,
    /// Smoothing of the Prüfer scale near turning points, relative to `E`.
    pub turning_smoothing: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-12,
            tol_e: 1e-10,
            lambda_trunc: 10.0,
            agmon_margin: 40.0,
            nodes_per_wavelength: 52,
            e_ceiling: 1e12,
            turning_smoothing: 0.1,
        }
    }
}

impl SolverOptions {
    fn ode(&self) -> OdeOptions {
        OdeOptions { rtol: self.rtol, atol: self.atol, ..Default::default() }
    }

    /// Short string used in cache keys.
    pub fn fingerprint(&self) -> String {
        format!(
            "{:e}-{:e}-{:e}-{}-{}-{}-{}",
            self.rtol,
            self.atol,
            self.tol_e,
            self.lambda_trunc,
            self.agmon_margin,
            self.nodes_per_wavelength,
            self.turning_smoothing
        )
    }
}

/// Truncation radius on one side for energy `e`.
pub fn truncation_radius(v: &Potential, e: f64, side: Side, opts: &SolverOptions) -> Result<f64> {
    let s = side.sign();
    let a = v.inverse_branch(s, opts.lambda_trunc * e.max(0.0))?;
    let b = crate::potentials::invert_increasing(|t| t * v.eval(s * t).sqrt(), opts.agmon_margin)?;
    Ok(a.max(b))
}

/// Scaled Prüfer equations on one half-line, written in the variable
/// `s ≥ 0` with `x = sign * s` (the left side uses the reflected potential).
struct PruferField<'a> {
    v: &'a Potential,
    sign: f64,
    e: f64,
    delta2: f64,
}

impl<'a> PruferField<'a> {
    fn new(v: &'a Potential, e: f64, side: Side, opts: &SolverOptions) -> Self {
        let d = opts.turning_smoothing * e.abs().max(1e-300);
        Self { v, sign: side.sign(), e, delta2: d * d }
    }

    /// `(V, V', λ, λ'/λ)` at `s`, derivative taken in `s`.
    #[inline]
    fn frame(&self, s: f64) -> (f64, f64, f64, f64) {
        let (val, der) = self.v.eval_both(self.sign * s);
        let dv = self.sign * der;
        let q = self.e - val;
        let l2 = (q * q + self.delta2).sqrt();
        let lam = l2.sqrt();
        let dlog = -q * dv / (2.0 * l2 * l2);
        (val, dv, lam, dlog)
    }

    #[inline]
    fn lambda(&self, s: f64) -> f64 {
        self.frame(s).2
    }

    #[inline]
    fn theta_rhs(&self, s: f64, th: f64) -> f64 {
        let (val, _, lam, dlog) = self.frame(s);
        let q = self.e - val;
        let (sn, cs) = th.sin_cos();
        -q * cs * cs / lam - dlog * sn * cs - lam * sn * sn
    }

    #[inline]
    fn full_rhs(&self, s: f64, y: &[f64; 2]) -> [f64; 2] {
        let (val, _, lam, dlog) = self.frame(s);
        let q = self.e - val;
        let (sn, cs) = y[0].sin_cos();
        let dth = -q * cs * cs / lam - dlog * sn * cs - lam * sn * sn;
        let dlr = dlog * cs * cs + (lam * lam - q) * sn * cs / lam;
        [dth, dlr]
    }

    fn initial_phase(&self, s0: f64) -> f64 {
        let (val, _, lam, _) = self.frame(s0);
        (-(val - self.e).max(0.0).sqrt() / lam).atan()
    }
}

/// Re-expresses a continuously lifted phase for the scale `λ_from` at a point
/// in terms of the scale `λ_to` at the same point.
fn convert_phase(theta: f64, lam_from: f64, lam_to: f64) -> f64 {
    let k = ((theta + 0.5 * PI) / PI).floor();
    let base = theta - k * PI;
    let c = lam_from / lam_to;
    let new_base = if (base + 0.5 * PI).abs() < 1e-300 { -0.5 * PI } else { (c * base.tan()).atan() };
    k * PI + new_base
}

/// Phase at 0 in the native scale, together with that scale.
fn native_phase(v: &Potential, e: f64, side: Side, x_start: f64, opts: &SolverOptions) -> Result<(f64, f64)> {
    let field = PruferField::new(v, e, side, opts);
    let th0 = field.initial_phase(x_start);
    let (y, _) = integrate(|s, y: &[f64; 1]| [field.theta_rhs(s, y[0])], x_start, [th0], 0.0, &opts.ode(), &[], |_, _| {})?;
    Ok((y[0], field.lambda(0.0)))
}

/// Prüfer phase at `x = 0` of the solution recessive towards `side`,
/// normalised to lie in `(-π/2, 0)` near infinity and lifted continuously.
/// The left phase is the right phase of the reflected potential `V(-x)`.
pub fn prufer_phase(v: &Potential, e: f64, lambda: f64, side: Side, opts: &SolverOptions) -> Result<f64> {
    if !(e > 0.0) || !(lambda > 0.0) {
        return crate::error::domain("prufer_phase needs E > 0 and λ > 0");
    }
    let x0 = truncation_radius(v, e, side, opts)?;
    let (th, lam0) = native_phase(v, e, side, x0, opts)?;
    Ok(convert_phase(th, lam0, lambda))
}

/// `θ(0) + θ̃(0)` for the reference scale `λ`.
pub fn matching_phase(v: &Potential, e: f64, lambda: f64, opts: &SolverOptions) -> Result<f64> {
    Ok(prufer_phase(v, e, lambda, Side::Right, opts)? + prufer_phase(v, e, lambda, Side::Left, opts)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub count: usize,
    /// `E` is within phase tolerance of an eigenvalue.
    pub ambiguous: bool,
}

/// Number of eigenvalues strictly below `e`.
pub fn count_below(v: &Potential, e: f64, opts: &SolverOptions) -> Result<Count> {
    if !(e > 0.0) {
        return crate::error::domain("count_below needs E > 0");
    }
    let t = matching_phase(v, e, e.sqrt(), opts)? / PI;
    let count = t.ceil().max(0.0) as usize;
    let ambiguous = (t - t.round()).abs() < 1e-8 && t.round() >= 0.0;
    Ok(Count { count, ambiguous })
}

/// `∫ (E - V)_+^{1/2} dx`.
pub fn phase_space_integral(v: &Potential, e: f64) -> Result<f64> {
    let (u, w) = gauss_legendre_on(48, 0.0, 1.0);
    let mut total = 0.0;
    for s in [1.0, -1.0] {
        let a = v.inverse_branch(s, e)?;
        for (ui, wi) in u.iter().zip(&w) {
            let x = a * (1.0 - ui * ui);
            total += wi * (e - v.eval(s * x)).max(0.0).sqrt() * 2.0 * a * ui;
        }
    }
    Ok(total)
}

/// Semiclassical guess for `E_n`: `∫ (E - V)_+^{1/2} = π (n - 1/2)`.
pub fn wkb_guess(v: &Potential, n: usize) -> Result<f64> {
    let target = PI * (n as f64 - 0.5);
    let mut hi = 1.0;
    while phase_space_integral(v, hi)? < target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Range("no semiclassical bracket".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phase_space_integral(v, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `n`-th eigenvalue (`n ≥ 1`).
pub fn eigenvalue(v: &Potential, n: usize, opts: &SolverOptions) -> Result<f64> {
    if n == 0 {
        return crate::error::domain("eigenvalue index starts at 1");
    }
    let guess = wkb_guess(v, n)?;
    solve_eigenvalue(v, n, guess, opts)
}

/// The `n`-th eigenvalue of `v`, starting the bracket search at `guess`.
pub fn refine_eigenvalue(v: &Potential, n: usize, guess: f64, opts: &SolverOptions) -> Result<f64> {
    if n == 0 || !(guess > 0.0) {
        return crate::error::domain("refine_eigenvalue needs n ≥ 1 and a positive guess");
    }
    solve_eigenvalue(v, n, guess, opts)
}

fn solve_eigenvalue(v: &Potential, n: usize, guess: f64, opts: &SolverOptions) -> Result<f64> {
    let lam = guess.sqrt();
    let target = (n as f64 - 1.0) * PI;
    let f = |e: f64| -> Result<f64> { Ok(matching_phase(v, e, lam, opts)? - target) };
    // bracket by the sign of the defect, i.e. by count_below at the reference scale
    let step0 = guess / (n as f64 + 1.0);
    let f0 = f(guess)?;
    let (mut a, mut fa, mut b, mut fb);
    if f0 < 0.0 {
        a = guess;
        fa = f0;
        let mut step = step0;
        loop {
            b = a + step;
            if b > opts.e_ceiling {
                return Err(Error::Range(format!("no bracket for E_{n} below {}", opts.e_ceiling)));
            }
            fb = f(b)?;
            if fb >= 0.0 {
                break;
            }
            a = b;
            fa = fb;
            step *= 2.0;
        }
    } else {
        b = guess;
        fb = f0;
        let mut step = step0;
        loop {
            a = (b - step).max(b * 1e-6);
            fa = f(a)?;
            if fa < 0.0 {
                break;
            }
            if a <= b * 1e-6 * 1.0000001 {
                return Err(Error::Range(format!("no lower bracket for E_{n}")));
            }
            b = a;
            fb = fa;
            step *= 2.0;
        }
    }
    brent(f, a, fa, b, fb, opts.tol_e)
}

/// Brent's method on a sign-changing bracket.
fn brent(
    f: impl Fn(f64) -> Result<f64>,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    rtol: f64,
) -> Result<f64> {
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..200 {
        if fb == 0.0 || (b - a).abs() <= rtol * b.abs() {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc)) + b * fa * fc / ((fb - fa) * (fb - fc)) + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let between = if lo < b { s > lo && s < b } else { s > b && s < lo };
        if !between
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
        {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s)?;
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Err(Error::Numerical("eigenvalue iteration did not converge".into()))
}

/// Points per Gauss–Lobatto panel.
pub const PANEL_POINTS: usize = 8;

/// Graded sampling grid on `[-x_max⁻, x_max⁺]` made of Gauss–Lobatto panels
/// sharing endpoints; 0 is a panel break.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Index of the node at 0.
    pub zero: usize,
    /// Node indices of the panel endpoints.
    pub breaks: Vec<usize>,
    pub x_max_left: f64,
    pub x_max_right: f64,
}

impl Grid {
    /// Builds a grid resolving every eigenfunction with eigenvalue `≤ e_max`.
    pub fn for_energy(v: &Potential, e_max: f64, opts: &SolverOptions) -> Result<Self> {
        let right = half_breaks(v, e_max, Side::Right, opts)?;
        let left = half_breaks(v, e_max, Side::Left, opts)?;
        Ok(Self::from_breaks(&left, &right))
    }

    /// Grid from the panel endpoints `0 = s₀ < s₁ < …` of each half-line.
    pub fn from_breaks(left: &[f64], right: &[f64]) -> Self {
        let mut all: Vec<f64> = left.iter().rev().map(|s| -s).collect();
        all.extend_from_slice(&right[1..]);
        let (gx, gw) = crate::quad::gauss_lobatto(PANEL_POINTS);
        let mut nodes = vec![all[0]];
        let mut weights = vec![0.0];
        let mut breaks = vec![0];
        let mut zero = 0;
        for (p, w) in all.windows(2).enumerate() {
            let (c, h) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            *weights.last_mut().unwrap() += h * gw[0];
            for k in 1..PANEL_POINTS {
                nodes.push(if k == PANEL_POINTS - 1 { w[1] } else { c + h * gx[k] });
                weights.push(h * gw[k]);
            }
            breaks.push(nodes.len() - 1);
            if p + 1 == left.len() - 1 {
                zero = nodes.len() - 1;
            }
        }
        Self { nodes, weights, zero, breaks, x_max_left: *left.last().unwrap(), x_max_right: *right.last().unwrap() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let terms: Vec<f64> = self.weights.iter().zip(f).map(|(w, v)| w * v).collect();
        crate::quad::pairwise_sum(&terms)
    }

    /// Quadrature weights restricted to `[nodes[i], x_max⁺]`; `i` must be a
    /// panel break.
    pub fn tail_weights(&self, i: usize) -> Option<Vec<f64>> {
        if self.breaks.binary_search(&i).is_err() || i + 1 >= self.len() {
            return None;
        }
        let mut w = self.weights.clone();
        w[..i].iter_mut().for_each(|v| *v = 0.0);
        let (_, gw) = crate::quad::gauss_lobatto(PANEL_POINTS);
        w[i] = 0.5 * (self.nodes[i + PANEL_POINTS - 1] - self.nodes[i]) * gw[0];
        Some(w)
    }

    /// Interval index and offset for interpolation at `x`.
    #[inline]
    pub fn locate(&self, x: f64) -> Option<(usize, f64, f64)> {
        let n = self.nodes.len();
        if !(x >= self.nodes[0] && x <= self.nodes[n - 1]) {
            return None;
        }
        let j = self.nodes.partition_point(|&t| t <= x);
        let i = j.saturating_sub(1).min(n - 2);
        let h = self.nodes[i + 1] - self.nodes[i];
        Some((i, (x - self.nodes[i]) / h, h))
    }
}

fn half_breaks(v: &Potential, e_max: f64, side: Side, opts: &SolverOptions) -> Result<Vec<f64>> {
    let s = side.sign();
    let x_end = truncation_radius(v, e_max, side, opts)?;
    // panel width such that the mean spacing is one `nodes_per_wavelength`-th
    let per_panel = (PANEL_POINTS - 1) as f64 / opts.nodes_per_wavelength as f64;
    let h_cap = x_end / 16.0;
    let mut breaks = vec![0.0];
    let mut x: f64 = 0.0;
    let mut agmon = 0.0;
    let mut h_prev: f64 = 0.0;
    while x < x_end {
        let (val, der) = v.eval_both(s * x);
        let q = e_max - val;
        let k_eff = (q.abs() + der.abs().powf(2.0 / 3.0)).sqrt().max(1e-300);
        let mut h = (2.0 * PI * per_panel / k_eff).min(h_cap);
        if q < 0.0 {
            agmon += (-q).sqrt() * h_prev;
            if agmon > 60.0 {
                // samples are already below e^{-60}; coarsen geometrically
                h = h.max(h_prev * 1.25).min(h_cap.max(h));
            }
        }
        h_prev = h;
        x += h;
        if x_end - x < 0.3 * h {
            x = x_end;
        }
        breaks.push(x);
    }
    Ok(breaks)
}

/// Normalised eigenfunction sampled on a grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EigenPair {
    pub n: usize,
    pub e: f64,
    pub psi: Vec<f64>,
    pub psi_prime: Vec<f64>,
    /// Residual phase mismatch `θ + θ̃ - (n-1)π` at 0.
    pub mismatch: f64,
}

impl EigenPair {
    pub fn sign_changes(&self) -> usize {
        let peak = self.psi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut last = 0.0;
        let mut changes = 0;
        for &p in &self.psi {
            if p.abs() < 1e-10 * peak {
                continue;
            }
            if last != 0.0 && p.signum() != last {
                changes += 1;
            }
            last = p.signum();
        }
        changes
    }
}

/// Samples `(θ, log R, λ)` for one half-line at the grid nodes with `sign * x ≥ 0`.
fn half_profile(v: &Potential, e: f64, side: Side, grid: &Grid, opts: &SolverOptions) -> Result<Vec<(f64, f64, f64)>> {
    let s_nodes: Vec<f64> = match side {
        Side::Right => grid.nodes[grid.zero..].iter().rev().copied().collect(),
        Side::Left => grid.nodes[..=grid.zero].iter().map(|x| -x).collect(),
    };
    let x_end = match side {
        Side::Right => grid.x_max_right,
        Side::Left => grid.x_max_left,
    };
    let x_start = x_end.max(truncation_radius(v, e, side, opts)?);
    let field = PruferField::new(v, e, side, opts);
    let th0 = field.initial_phase(x_start);
    let mut out = vec![(0.0, 0.0, 0.0); s_nodes.len()];
    integrate(
        |s, y: &[f64; 2]| field.full_rhs(s, y),
        x_start,
        [th0, 0.0],
        0.0,
        &opts.ode(),
        &s_nodes,
        |i, y| out[i] = (y[0], y[1], field.lambda(s_nodes[i])),
    )?;
    Ok(out)
}

/// Eigenfunction for a converged eigenvalue `e` with index `n`.
pub fn eigenfunction(v: &Potential, n: usize, e: f64, grid: &Grid, opts: &SolverOptions) -> Result<EigenPair> {
    let right = half_profile(v, e, Side::Right, grid, opts)?; // ordered x_max .. 0
    let left = half_profile(v, e, Side::Left, grid, opts)?; // ordered x_min .. 0 (as |x| decreasing)
    let (th_r, lr0, lam0) = *right.last().unwrap();
    let (th_l, ll0, _) = *left.last().unwrap();
    let k = (n - 1) as f64;
    let mismatch = th_r + th_l - k * PI;
    let parity = if (n - 1) % 2 == 0 { 1.0 } else { -1.0 };
    let m = grid.len();
    let mut psi = vec![0.0; m];
    let mut dpsi = vec![0.0; m];
    // right half: node zero + j corresponds to right[len-1-j]
    let nr = right.len();
    for j in 0..nr {
        let (th, lr, lam) = right[nr - 1 - j];
        let amp = (lr - lr0).exp();
        let (sn, cs) = th.sin_cos();
        psi[grid.zero + j] = amp * cs / lam;
        dpsi[grid.zero + j] = amp * sn;
    }
    for (i, &(th, ll, lam)) in left.iter().enumerate().take(left.len() - 1) {
        let amp = parity * (ll - ll0).exp();
        let (sn, cs) = th.sin_cos();
        psi[i] = amp * cs / lam;
        dpsi[i] = -amp * sn;
    }
    let _ = lam0;
    let sq: Vec<f64> = psi.iter().map(|p| p * p).collect();
    let norm = grid.integrate(&sq).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numerical(format!("cannot normalise eigenfunction {n}")));
    }
    for p in psi.iter_mut().chain(dpsi.iter_mut()) {
        *p /= norm;
    }
    Ok(EigenPair { n, e, psi, psi_prime: dpsi, mismatch })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum Cutoff {
    Count(usize),
    Energy(f64),
}

/// Truncated spectral data of `τV`.
#[derive(Clone, Debug)]
pub struct EigenSystem {
    pub potential: Potential,
    pub tau: f64,
    pub scaled: Potential,
    pub grid: Arc<Grid>,
    pub pairs: Vec<EigenPair>,
    pub e_max: f64,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.e).collect()
    }

    /// `ψ_n(x)` by cubic Hermite interpolation, zero outside the grid.
    pub fn psi_at(&self, n: usize, x: f64) -> f64 {
        let p = &self.pairs[n - 1];
        match self.grid.locate(x) {
            None => 0.0,
            Some((i, t, h)) => hermite(p.psi[i], p.psi_prime[i], p.psi[i + 1], p.psi_prime[i + 1], t, h),
        }
    }

    /// Writes `(n, E_n)` to `path`.
    pub fn write_energies_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "E_n"])?;
        for p in &self.pairs {
            w.write_record([p.n.to_string(), format!("{:.17e}", p.e)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `(x, psi, psi_prime)` for pair `n` to `path`.
    pub fn write_eigenfunction_csv(&self, n: usize, path: &Path) -> Result<()> {
        let p = &self.pairs[n - 1];
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "x,psi,psi_prime")?;
        for i in 0..self.grid.len() {
            writeln!(f, "{:.17e},{:.17e},{:.17e}", self.grid.nodes[i], p.psi[i], p.psi_prime[i])?;
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn hermite(f0: f64, d0: f64, f1: f64, d1: f64, t: f64, h: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * f0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * f1 + (t3 - t2) * h * d1
}

/// Eigenvalues `E_1 < … < E_N` of `v` (already scaled).
pub fn eigenvalues(v: &Potential, count: usize, opts: &SolverOptions) -> Result<Vec<f64>> {
    let es: Vec<f64> = (1..=count).into_par_iter().map(|n| eigenvalue(v, n, opts)).collect::<Result<_>>()?;
    for w in es.windows(2) {
        if !(w[1] > w[0] * (1.0 + 1e-12)) {
            return Err(Error::Numerical("computed spectrum is not strictly increasing".into()));
        }
    }
    Ok(es)
}

/// Eigen system of `τV` up to the cutoff.
pub fn eigen_system(v: &Potential, tau: f64, cutoff: Cutoff, opts: &SolverOptions) -> Result<EigenSystem> {
    let scaled = v.scale(tau)?;
    let count = match cutoff {
        Cutoff::Count(n) => n,
        Cutoff::Energy(e) => {
            if !(e > 0.0) {
                0
            } else {
                count_below(&scaled, e, opts)?.count
            }
        }
    };
    if count == 0 {
        let grid = Grid::for_energy(&scaled, 1.0, opts)?;
        return Ok(EigenSystem { potential: v.clone(), tau, scaled, grid: Arc::new(grid), pairs: vec![], e_max: 0.0 });
    }
    let es = eigenvalues(&scaled, count, opts)?;
    system_from_energies(v, tau, &es, opts)
}

/// Builds the sampled system from converged eigenvalues.
pub fn system_from_energies(v: &Potential, tau: f64, es: &[f64], opts: &SolverOptions) -> Result<EigenSystem> {
    let scaled = v.scale(tau)?;
    let e_max = *es.last().unwrap();
    let grid = Arc::new(Grid::for_energy(&scaled, e_max, opts)?);
    let pairs: Vec<EigenPair> = es
        .par_iter()
        .enumerate()
        .map(|(i, &e)| {
            let mut e = e;
            let mut pair = eigenfunction(&scaled, i + 1, e, &grid, opts)?;
            if pair.mismatch.abs() > 1e-6 {
                let tight = SolverOptions { tol_e: opts.tol_e * 1e-2, ..opts.clone() };
                e = solve_eigenvalue(&scaled, i + 1, e, &tight)?;
                pair = eigenfunction(&scaled, i + 1, e, &grid, opts)?;
            }
            Ok(pair)
        })
        .collect::<Result<_>>()?;
    Ok(EigenSystem { potential: v.clone(), tau, scaled, grid, pairs, e_max })
}

/// `σ_n = ∂_t ψ_n(·; tτV)` at `t = 1` and `F_n = ∂_t E_n(tτV)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffEigenPair {
    pub n: usize,
    pub sigma: Vec<f64>,
    pub f: f64,
    /// `(Σ_{m > 0.8N} A_{nm}²)^{1/2}`, a proxy for the neglected part of the expansion.
    pub tail: f64,
}

/// `σ_n = Σ_m A_{nm} ψ_m` on the system grid.
pub fn differentiated_eigenfunction(sys: &EigenSystem, n: usize, a: &MatrixA) -> Result<DiffEigenPair> {
    let big_n = sys.len();
    if a.m.n != big_n {
        return Err(Error::Config("A was not computed on this system".into()));
    }
    if n == 0 || n > big_n {
        return Err(Error::Range(format!("index {n} outside 1..={big_n}")));
    }
    let row = a.m.row(n - 1);
    let edge = (0.8 * big_n as f64).floor() as usize;
    let tail = row[edge.min(big_n)..].iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > edge && big_n > 4 {
        return Err(Error::Truncation(format!("n = {n} lies in the guard band of N = {big_n}")));
    }
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if tail > 1e-3 * norm.max(1.0) {
        return Err(Error::Truncation(format!("expansion tail {tail:e} for n = {n}")));
    }
    let mut sigma = vec![0.0; sys.grid.len()];
    for (m, c) in row.iter().enumerate() {
        if *c != 0.0 {
            for (s, p) in sigma.iter_mut().zip(&sys.pairs[m].psi) {
                *s += c * p;
            }
        }
    }
    let p = &sys.pairs[n - 1];
    let vp: Vec<f64> = sys.grid.nodes.iter().zip(&p.psi).map(|(&x, q)| sys.scaled.eval(x) * q * q).collect();
    Ok(DiffEigenPair { n, sigma, f: sys.grid.integrate(&vp), tail })
}

/// Central difference `(ψ_n(·;(1+h)τV) - ψ_n(·;(1-h)τV)) / 2h` on the system grid.
pub fn sigma_finite_difference(sys: &EigenSystem, n: usize, h: f64, opts: &SolverOptions) -> Result<Vec<f64>> {
    let e = sys.pairs[n - 1].e;
    let mut sides = Vec::with_capacity(2);
    for t in [1.0 + h, 1.0 - h] {
        let v = sys.scaled.scale(t)?;
        let en = solve_eigenvalue(&v, n, e * t.sqrt(), opts)?;
        sides.push(eigenfunction(&v, n, en, &sys.grid, opts)?.psi);
    }
    Ok(sides[0].iter().zip(&sides[1]).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Half-line energy identity residual at node `i ≥ zero`:
/// `∫ₐ^∞ u'² + ∫ₐ^∞ V u² − E ∫ₐ^∞ u² + u(a) u'(a)`.
pub fn energy_identity_residual(sys: &EigenSystem, n: usize, i: usize) -> Option<f64> {
    let w = sys.grid.tail_weights(i)?;
    let p = &sys.pairs[n - 1];
    let mut acc = 0.0;
    for j in i..sys.grid.len() {
        let x = sys.grid.nodes[j];
        acc += w[j] * (p.psi_prime[j].powi(2) + (sys.scaled.eval(x) - p.e) * p.psi[j].powi(2));
    }
    Some(acc + p.psi[i] * p.psi_prime[i])
}

/// Sonin identity residual at node `i ≥ zero`:
/// `(E − V(a)) u(a)² + u'(a)² − ∫ₐ^∞ V' u²`.
pub fn sonin_residual(sys: &EigenSystem, n: usize, i: usize) -> Option<f64> {
    let w = sys.grid.tail_weights(i)?;
    let p = &sys.pairs[n - 1];
    let mut acc = 0.0;
    for j in i..sys.grid.len() {
        let x = sys.grid.nodes[j];
        // one-sided derivative at a = 0
        let dv = sys.scaled.eval_deriv(x.max(f64::MIN_POSITIVE));
        let dv = if dv.is_finite() { dv } else { 0.0 };
        acc += w[j] * dv * p.psi[j].powi(2);
    }
    let a = sys.grid.nodes[i];
    Some((p.e - sys.scaled.eval(a)) * p.psi[i].powi(2) + p.psi_prime[i].powi(2) - acc)
}
