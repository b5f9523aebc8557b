//! Integral kernels of `m(r²𝓛)` for `𝓛 = -∂ₓ² - V(x)∂_y²`, assembled from the
//! spectral data of `-d²/dx² + ξ²V` for each frequency `ξ` dual to `y`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::cache::eigen_system_cached;
use crate::error::{Error, Result};
use crate::geometry::{volume, GeometryContext, PlanePoint};
use crate::multipliers::{chi, chi_tilde, sobolev_inf_norm, Multiplier, MultiplierKind};
use crate::potentials::Potential;
use crate::quad::{gauss_legendre_on, gauss_lobatto, pairwise_sum};
use crate::spectral_matrices::{matrix_a, matrix_p, CutoffMask, MaskKind, Mat};
use crate::sturm::{count_below, eigenvalue, hermite, truncation_radius, Cutoff, EigenSystem, Side, SolverOptions};

/// Discretisation parameters for kernel assembly.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelOptions {
    /// `ξ_min / ξ_max`; below `ξ_min` the integrand is continued by its value there.
    pub xi_min_ratio: f64,
    /// Half-width of the `x` window in units of `r`.
    pub x_reach: f64,
    /// `x_reach` for the heat multiplier, whose kernel has Gaussian tails.
    pub heat_reach: f64,
    /// `y` half-extent is `y_reach · r · max V^{1/2}` over `x' ± y_reach · r`.
    pub y_reach: f64,
    /// Lower bound `piece_extent / ξ_lo` on the `y` half-extent of a dyadic piece.
    pub piece_extent: f64,
    /// Gauss–Lobatto panel width in units of `r / sqrt(max(1, λ_eff))`.
    pub x_panel: f64,
    /// `y` spacing in units of `π / ξ_hi`.
    pub y_step: f64,
    /// `y` period divided by twice the half-extent.
    pub oversample: f64,
    /// Gauss–Legendre panels for the spectral-side `ξ` integrals.
    pub rhs_panels: usize,
    /// Admissible small-`ξ` tail bound relative to `max |K|`.
    pub tail_tol: f64,
    pub solver: SolverOptions,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            xi_min_ratio: 1e-3,
            x_reach: 120.0,
            heat_reach: 12.0,
            y_reach: 10.0,
            piece_extent: 120.0,
            x_panel: 0.5,
            y_step: 0.25,
            oversample: 2.0,
            rhs_panels: 32,
            tail_tol: 5e-2,
            solver: SolverOptions::default(),
        }
    }
}

/// Largest spectral value that matters for `m`; the heat multiplier is cut
/// where `e^{-λ}` drops below `3e-16`.
pub fn spectral_extent(m: &Multiplier) -> f64 {
    match m.kind {
        MultiplierKind::Heat { cutoff } => cutoff.min(36.0),
        _ => m.support_max(),
    }
}

/// Extra reach, in units of `r`, for multipliers whose kernels propagate.
fn propagation(m: &Multiplier) -> f64 {
    match m.kind {
        MultiplierKind::ImaginaryPower { alpha } => 4.0 * alpha.abs(),
        _ => 0.0,
    }
}

/// `sup |m|` on a dense grid of the support.
pub fn sup_norm(m: &Multiplier) -> f64 {
    let (lo, hi) = m.support();
    let n = 1 << 15;
    (0..=n).map(|i| m.eval(lo + (hi - lo) * i as f64 / n as f64).norm()).fold(0.0, f64::max)
}

/// `ξ` with `E₁(ξ²V) = target`.
pub fn xi_max(v: &Potential, target: f64, opts: &SolverOptions) -> Result<f64> {
    if let Some(d) = v.homogeneous_degree() {
        let e1 = eigenvalue(v, 1, opts)?;
        return Ok((target / e1).powf((d + 2.0) / 4.0));
    }
    let f = |xi: f64| -> Result<f64> { Ok(eigenvalue(&v.scale(xi * xi)?, 1, opts)? - target) };
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    let mut k = 0;
    while f(hi)? <= 0.0 {
        hi *= 4.0;
        k += 1;
        if k > 40 {
            return Err(Error::Classification(format!("E₁(ξ²V) stays below {target} for ξ up to {hi:e}")));
        }
    }
    while f(lo)? >= 0.0 {
        lo *= 0.25;
        if lo < 1e-30 {
            return Err(Error::Classification("E₁(ξ²V) does not decrease to the target".into()));
        }
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    Ok((lo * hi).sqrt())
}

/// `τA(τV)` and `F = τ ∂_τ E(τV)` for one eigen system.
#[derive(Clone, Debug)]
pub struct SliceMatrices {
    pub tau_a: Mat,
    pub f: Vec<f64>,
}

fn slice_matrices(sys: &EigenSystem) -> Result<SliceMatrices> {
    let p = matrix_p(sys)?;
    let f = (0..p.m.n).map(|i| p.m.get(i, i)).collect();
    let a = matrix_a(&p, &sys.energies())?;
    Ok(SliceMatrices { tau_a: a.m, f })
}

struct Master {
    sys: Arc<EigenSystem>,
    mats: Mutex<Option<Arc<SliceMatrices>>>,
}

fn masters() -> &'static Mutex<HashMap<String, Arc<Master>>> {
    static M: OnceLock<Mutex<HashMap<String, Arc<Master>>>> = OnceLock::new();
    M.get_or_init(|| Mutex::new(HashMap::new()))
}

fn master(v: &Potential, count: usize, opts: &SolverOptions) -> Result<Arc<Master>> {
    let key = format!("{}:{}", v.hash_hex(), opts.fingerprint());
    if let Some(m) = masters().lock().unwrap().get(&key) {
        if m.sys.len() >= count {
            return Ok(m.clone());
        }
    }
    let count = count.div_ceil(32) * 32;
    let sys = eigen_system_cached(v, 1.0, Cutoff::Count(count), opts, None)?;
    let m = Arc::new(Master { sys: Arc::new(sys), mats: Mutex::new(None) });
    masters().lock().unwrap().insert(key, m.clone());
    Ok(m)
}

/// Spectral data of `ξ²V` at one frequency:
/// `E_n = e_n / s²` and `ψ_n(x) = s^{-1/2} φ_n(x / s)` for the stored system.
#[derive(Clone, Debug)]
pub struct XiSlice {
    pub xi: f64,
    pub energies: Vec<f64>,
    pub sys: Arc<EigenSystem>,
    s: f64,
}

impl XiSlice {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    /// `ψ_n(x)` for `n = lo+1 ..= lo+out.len()`.
    pub fn basis_range(&self, x: f64, lo: usize, out: &mut [f64]) {
        match self.sys.grid.locate(x / self.s) {
            None => out.iter_mut().for_each(|o| *o = 0.0),
            Some((i, t, h)) => {
                let amp = self.s.powf(-0.5);
                for (k, o) in out.iter_mut().enumerate() {
                    let p = &self.sys.pairs[lo + k];
                    *o = amp * hermite(p.psi[i], p.psi_prime[i], p.psi[i + 1], p.psi_prime[i + 1], t, h);
                }
            }
        }
    }

    /// Outermost grid points on each side.
    pub fn extent(&self) -> (f64, f64) {
        let g = &self.sys.grid.nodes;
        (self.s * g[0], self.s * g[g.len() - 1])
    }

    /// States with `E_n ≤ e`.
    pub fn count_below(&self, e: f64) -> usize {
        self.energies.partition_point(|&x| x <= e)
    }
}

enum FamilyKind {
    Homogeneous { degree: f64, master: Arc<Master> },
    General { slices: Mutex<HashMap<u64, (Arc<EigenSystem>, Option<Arc<SliceMatrices>>)>> },
}

/// Eigen systems of `ξ²V` for `ξ ∈ [ξ_min, ξ_max]` holding every state with
/// `E_n(ξ²V) ≤ e_cap`, plus a margin of eight.
pub struct SpectralFamily {
    pub potential: Potential,
    pub e_cap: f64,
    pub xi_min: f64,
    pub xi_max: f64,
    opts: SolverOptions,
    kind: FamilyKind,
}

const MARGIN_STATES: usize = 8;

impl SpectralFamily {
    pub fn new(v: &Potential, e_cap: f64, xi_min_ratio: f64, opts: &SolverOptions) -> Result<Self> {
        if !(e_cap > 0.0) || !(xi_min_ratio > 0.0 && xi_min_ratio < 1.0) {
            return crate::error::domain("spectral family needs e_cap > 0 and ξ_min/ξ_max in (0, 1)");
        }
        let xmax = xi_max(v, e_cap, opts)?;
        let xi_min = xi_min_ratio * xmax;
        let kind = match v.homogeneous_degree() {
            Some(d) => {
                let s = xi_min.powf(-2.0 / (d + 2.0));
                let n = count_below(v, e_cap * s * s, opts)?.count + MARGIN_STATES;
                if n > 4000 {
                    return Err(Error::Config(format!("{n} states needed at ξ_min; raise xi_min_ratio")));
                }
                FamilyKind::Homogeneous { degree: d, master: master(v, n, opts)? }
            }
            None => FamilyKind::General { slices: Mutex::new(HashMap::new()) },
        };
        Ok(Self { potential: v.clone(), e_cap, xi_min, xi_max: xmax, opts: opts.clone(), kind })
    }

    fn general_system(&self, xi: f64) -> Result<Arc<EigenSystem>> {
        let FamilyKind::General { slices } = &self.kind else { unreachable!() };
        if let Some((s, _)) = slices.lock().unwrap().get(&xi.to_bits()) {
            return Ok(s.clone());
        }
        let tau = xi * xi;
        let n = count_below(&self.potential.scale(tau)?, self.e_cap, &self.opts)?.count + MARGIN_STATES;
        let sys = Arc::new(eigen_system_cached(&self.potential, tau, Cutoff::Count(n), &self.opts, None)?);
        slices.lock().unwrap().insert(xi.to_bits(), (sys.clone(), None));
        Ok(sys)
    }

    /// Spectral data at `|ξ|`, clamped below at `ξ_min`.
    pub fn slice(&self, xi: f64) -> Result<XiSlice> {
        let xi = xi.abs().max(self.xi_min);
        match &self.kind {
            FamilyKind::Homogeneous { degree, master } => {
                let s = xi.powf(-2.0 / (degree + 2.0));
                let energies = master.sys.pairs.iter().map(|p| p.e / (s * s)).collect();
                Ok(XiSlice { xi, energies, sys: master.sys.clone(), s })
            }
            FamilyKind::General { .. } => {
                let sys = self.general_system(xi)?;
                Ok(XiSlice { xi, energies: sys.energies(), sys, s: 1.0 })
            }
        }
    }

    /// `τA` and `F` at the slice frequency.
    pub fn matrices(&self, sl: &XiSlice) -> Result<(Arc<SliceMatrices>, f64)> {
        match &self.kind {
            FamilyKind::Homogeneous { master, .. } => {
                let mut g = master.mats.lock().unwrap();
                if g.is_none() {
                    *g = Some(Arc::new(slice_matrices(&master.sys)?));
                }
                Ok((g.clone().unwrap(), 1.0 / (sl.s * sl.s)))
            }
            FamilyKind::General { slices } => {
                let sys = self.general_system(sl.xi)?;
                if let Some((_, Some(m))) = slices.lock().unwrap().get(&sl.xi.to_bits()) {
                    return Ok((m.clone(), 1.0));
                }
                let m = Arc::new(slice_matrices(&sys)?);
                slices.lock().unwrap().insert(sl.xi.to_bits(), (sys, Some(m.clone())));
                Ok((m, 1.0))
            }
        }
    }

    /// Largest `|x|` on either side where the states at `ξ` are resolved.
    fn support(&self, xi: f64) -> Result<(f64, f64)> {
        let tv = self.potential.scale(xi * xi)?;
        Ok((
            -truncation_radius(&tv, self.e_cap, Side::Left, &self.opts)?,
            truncation_radius(&tv, self.e_cap, Side::Right, &self.opts)?,
        ))
    }
}

/// Frequency window of the integrand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Window {
    /// The full kernel of `m(r²𝓛)`.
    Full,
    /// `K_{G_A}` with `G_A(λ, τ) = m(λ) χ(Aτ)`, `τ = ξ²`.
    Piece { a: f64 },
}

impl Window {
    fn weight(&self, xi: f64) -> f64 {
        match *self {
            Window::Full => 1.0,
            Window::Piece { a } => chi(a * xi * xi),
        }
    }

    fn range(&self, fam: &SpectralFamily) -> (f64, f64) {
        match *self {
            Window::Full => (0.0, fam.xi_max),
            Window::Piece { a } => (a.powf(-0.5), (2.0 * a.powf(-0.5)).min(fam.xi_max)),
        }
    }
}

/// Sampling of `(x, y)` and `ξ`; `y` is periodic with period `fft_len · y_step`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelGrid {
    pub x_breaks: Vec<f64>,
    pub xi_step: f64,
    pub fft_len: usize,
}

impl KernelGrid {
    pub fn y_step(&self) -> f64 {
        2.0 * PI / (self.xi_step * self.fft_len as f64)
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.xi_step
    }

    /// Composite 8-point Gauss–Lobatto nodes and weights on the breaks.
    pub fn x_nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let (z, w) = gauss_lobatto(crate::sturm::PANEL_POINTS);
        let mut xs = vec![self.x_breaks[0]];
        let mut ws = vec![0.0];
        for p in self.x_breaks.windows(2) {
            let (a, b) = (p[0], p[1]);
            for k in 0..z.len() {
                let wk = w[k] * (b - a) / 2.0;
                if k == 0 {
                    *ws.last_mut().unwrap() += wk;
                } else {
                    xs.push(a + (z[k] + 1.0) / 2.0 * (b - a));
                    ws.push(wk);
                }
            }
        }
        (xs, ws)
    }

    /// Default sampling for `m(r²𝓛)` (or a dyadic piece) at `x'`.
    pub fn auto(fam: &SpectralFamily, m: &Multiplier, r: f64, xprime: f64, window: Window, opts: &KernelOptions) -> Result<Self> {
        let (xi_lo, xi_hi) = window.range(fam);
        let xi_hi = xi_hi.max(fam.xi_min);
        let extra = propagation(m);
        let base = if matches!(m.kind, MultiplierKind::Heat { .. }) { opts.heat_reach } else { opts.x_reach };
        let reach_x = (base + extra) * r;
        let (sl, sr) = fam.support(xi_lo.max(fam.xi_min))?;
        let lo = (xprime - reach_x).max(sl);
        let hi = (xprime + reach_x).min(sr);
        if !(hi > lo) {
            return Err(Error::Truncation(format!("x' = {xprime} lies outside the resolved region")));
        }
        let width = opts.x_panel * r / spectral_extent(m).max(1.0).sqrt();
        let mut pts = vec![lo, hi];
        for b in [0.0, xprime] {
            if b > lo && b < hi {
                pts.push(b);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let mut breaks = vec![pts[0]];
        for p in pts.windows(2) {
            let k = ((p[1] - p[0]) / width).ceil().max(1.0) as usize;
            for i in 1..=k {
                breaks.push(p[0] + (p[1] - p[0]) * i as f64 / k as f64);
            }
        }
        let ry = (opts.y_reach + extra) * r;
        let v = &fam.potential;
        let vmax = v.eval(xprime - ry).max(v.eval(xprime + ry)).max(v.eval(xprime));
        let mut y_half = ry * vmax.sqrt();
        if let Window::Piece { .. } = window {
            y_half = y_half.max(opts.piece_extent / xi_lo);
        }
        let period = 2.0 * opts.oversample * y_half;
        let xi_step = 2.0 * PI / period;
        let target_h = opts.y_step * PI / xi_hi;
        let fft_len = ((period / target_h).ceil() as usize).next_power_of_two().max(16);
        Ok(Self { x_breaks: breaks, xi_step, fft_len })
    }
}

/// Per-node coefficients `c_n = w(ξ) m(r²E_n) ψ_n(x')` of the states in the window.
struct Node {
    slice: XiSlice,
    lo: usize,
    coefs: Vec<Complex64>,
}

impl Node {
    fn k_at(&self, x: f64, buf: &mut Vec<f64>) -> Complex64 {
        if self.coefs.is_empty() {
            return Complex64::new(0.0, 0.0);
        }
        buf.resize(self.coefs.len(), 0.0);
        self.slice.basis_range(x, self.lo, buf);
        self.coefs.iter().zip(buf.iter()).map(|(c, p)| c * p).sum()
    }
}

/// Window `[lo, hi)` of states with `r²E_n` in the support of `m`.
fn support_states(sl: &XiSlice, m: &Multiplier, r: f64) -> (usize, usize) {
    let (a, _) = m.support();
    let b = spectral_extent(m);
    let r2 = r * r;
    let lo = sl.energies.partition_point(|&e| r2 * e < a);
    let hi = sl.energies.partition_point(|&e| r2 * e <= b);
    (lo, hi.max(lo))
}

fn node(fam: &SpectralFamily, m: &Multiplier, r: f64, xprime: f64, window: Window, xi: f64) -> Result<Node> {
    let slice = fam.slice(xi)?;
    let w = window.weight(xi.max(fam.xi_min));
    let (lo, hi) = support_states(&slice, m, r);
    if w == 0.0 || hi == lo {
        return Ok(Node { slice, lo, coefs: vec![] });
    }
    let mut px = vec![0.0; hi - lo];
    slice.basis_range(xprime, lo, &mut px);
    let coefs = (lo..hi).zip(&px).map(|(n, p)| m.eval(r * r * slice.energies[n]) * (w * p)).collect();
    Ok(Node { slice, lo, coefs })
}

/// Samples `K(z', z)` of `m(r²𝓛)` (or of a dyadic piece).
#[derive(Clone, Debug)]
pub struct KernelField {
    pub r: f64,
    pub zp: PlanePoint,
    pub window: Window,
    pub x: Vec<f64>,
    pub x_weights: Vec<f64>,
    /// `y - y'` samples, one full period.
    pub dy: Vec<f64>,
    pub y_step: f64,
    /// Row-major, `values[i * dy.len() + j] = K(z', (x_i, y' + dy_j))`.
    pub values: Vec<Complex64>,
    pub xi_nodes: Vec<f64>,
    /// Number of contributing states at each `ξ` node.
    pub xi_states: Vec<usize>,
    pub xi_min: f64,
    /// `(ξ_min / π) max_x (Π(x) Π(x'))^{1/2}` with `Π(x) = Σ |m(r²E_n)| ψ_n(x)²` at `ξ_min`.
    pub small_xi_bound: f64,
    pub imag_residue: f64,
}

impl KernelField {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.dy.len() + j]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `(x, y, Re K)` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", "re_k"])?;
        for (i, x) in self.x.iter().enumerate() {
            for (j, dy) in self.dy.iter().enumerate() {
                w.write_record(&[format!("{x:e}"), format!("{:e}", self.zp.y + dy), format!("{:e}", self.get(i, j).re)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Integrals of one kernel field over the sampled region.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct KernelIntegrals {
    pub norm_sq: f64,
    /// `∫ |y - y'|^{2ϑ} |K|²` for each requested `ϑ`.
    pub moments: Vec<(f64, f64)>,
    pub l1: f64,
    pub mass: f64,
    pub max_abs: f64,
    pub imag_residue: f64,
    pub small_xi_bound: f64,
}

struct Assembly {
    x: Vec<f64>,
    wx: Vec<f64>,
    y_step: f64,
    fft_len: usize,
    xi_step: f64,
    nodes: Vec<Option<Arc<Node>>>,
    xi_min: f64,
    small_xi_bound: f64,
}

#[allow(clippy::too_many_arguments)]
fn prepare(
    fam: &SpectralFamily,
    m: &Multiplier,
    r: f64,
    zp: PlanePoint,
    window: Window,
    grid: &KernelGrid,
) -> Result<Assembly> {
    let (xi_lo, xi_hi) = window.range(fam);
    let (x, wx) = grid.x_nodes();
    let dxi = grid.xi_step;
    let j_hi = (xi_hi / dxi).floor() as usize;
    if 2 * j_hi + 2 > grid.fft_len {
        return Err(Error::Config("fft length too short for the ξ range".into()));
    }
    let low = Arc::new(node(fam, m, r, zp.x, window, fam.xi_min)?);
    let mut nodes = Vec::with_capacity(j_hi + 1);
    for j in 0..=j_hi {
        let xi = j as f64 * dxi;
        if xi_hi < fam.xi_min || xi < xi_lo || m.is_zero() {
            nodes.push(None);
        } else if xi < fam.xi_min {
            nodes.push(Some(low.clone()));
        } else {
            nodes.push(Some(Arc::new(node(fam, m, r, zp.x, window, xi)?)));
        }
    }
    // |m|-weighted projector sums at ξ_min over states with r²E ≤ extent
    let sl = &low.slice;
    let n_pi = sl.count_below(spectral_extent(m) / (r * r));
    let wm: Vec<f64> = sl.energies[..n_pi].iter().map(|&e| m.eval(r * r * e).norm()).collect();
    let mut buf = vec![0.0; n_pi];
    let mut weighted = |x: f64| {
        sl.basis_range(x, 0, &mut buf);
        buf.iter().zip(&wm).map(|(p, w)| w * p * p).sum::<f64>()
    };
    let pi_xp = weighted(zp.x);
    let pi_max = x.iter().map(|&xi| weighted(xi)).fold(0.0, f64::max);
    let small_xi_bound = if window == Window::Full { fam.xi_min / PI * (pi_max * pi_xp).sqrt() } else { 0.0 };
    Ok(Assembly { x, wx, y_step: grid.y_step(), fft_len: grid.fft_len, xi_step: dxi, nodes, xi_min: fam.xi_min, small_xi_bound })
}

impl Assembly {
    /// Row `K(z', (x_i, y' + l h))` for `l = -L/2 .. L/2 - 1`.
    fn row(&self, i: usize, fft: &dyn rustfft::Fft<f64>, buf: &mut Vec<Complex64>, scratch: &mut Vec<f64>) -> Vec<Complex64> {
        let n = self.fft_len;
        buf.clear();
        buf.resize(n, Complex64::new(0.0, 0.0));
        let c = self.xi_step / (2.0 * PI);
        for (j, nd) in self.nodes.iter().enumerate() {
            let Some(nd) = nd else { continue };
            let a = nd.k_at(self.x[i], scratch) * c;
            buf[j] += a;
            if j > 0 {
                buf[n - j] += a;
            }
        }
        fft.process(buf);
        let half = n / 2;
        (0..n).map(|k| buf[(k + half) % n]).collect()
    }

    fn dy(&self) -> Vec<f64> {
        let half = (self.fft_len / 2) as f64;
        (0..self.fft_len).map(|k| (k as f64 - half) * self.y_step).collect()
    }

    fn for_rows(&self, mut f: impl FnMut(usize, &[Complex64])) {
        let fft = FftPlanner::new().plan_fft_inverse(self.fft_len);
        let mut buf = Vec::new();
        let mut scratch = Vec::new();
        for i in 0..self.x.len() {
            let row = self.row(i, fft.as_ref(), &mut buf, &mut scratch);
            f(i, &row);
        }
    }

    fn xi_nodes(&self) -> (Vec<f64>, Vec<usize>) {
        let xs = (0..self.nodes.len()).map(|j| j as f64 * self.xi_step).collect();
        let ns = self.nodes.iter().map(|n| n.as_ref().map_or(0, |n| n.coefs.len())).collect();
        (xs, ns)
    }
}

fn check_tail(a: &Assembly, max_abs: f64, opts: &KernelOptions) -> Result<()> {
    if a.small_xi_bound > opts.tail_tol * max_abs && max_abs > 0.0 {
        return Err(Error::Truncation(format!(
            "{TAIL_MSG} {:e} exceeds {} · max|K| = {:e}",
            a.small_xi_bound,
            opts.tail_tol,
            opts.tail_tol * max_abs
        )));
    }
    Ok(())
}

const TAIL_MSG: &str = "small-ξ tail bound";
const TAIL_RETRIES: usize = 3;

/// Runs `f` on a family for `m(r²𝓛)`, lowering `ξ_min` by decades while the
/// small-`ξ` tail check fails.
fn with_family<T>(
    v: &Potential,
    m: &Multiplier,
    r: f64,
    opts: &KernelOptions,
    mut f: impl FnMut(&SpectralFamily, &KernelOptions) -> Result<T>,
) -> Result<T> {
    let mut o = opts.clone();
    let mut attempt = 0;
    loop {
        let fam = family_for(v, m, r, &o)?;
        match f(&fam, &o) {
            Err(Error::Truncation(msg)) if msg.starts_with(TAIL_MSG) && attempt < TAIL_RETRIES => {
                o.xi_min_ratio /= 10.0;
                attempt += 1;
            }
            other => return other,
        }
    }
}

fn family_for(v: &Potential, m: &Multiplier, r: f64, opts: &KernelOptions) -> Result<SpectralFamily> {
    if !(r > 0.0 && r.is_finite()) {
        return crate::error::domain("kernel scale r must be positive");
    }
    let extent = if m.is_zero() { 1.0 } else { spectral_extent(m) };
    SpectralFamily::new(v, extent / (r * r), opts.xi_min_ratio, &opts.solver)
}

/// Samples of the kernel of `m(r²𝓛)` with base point `z'`.
pub fn kernel(v: &Potential, m: &Multiplier, r: f64, zp: PlanePoint, grid: Option<&KernelGrid>, opts: &KernelOptions) -> Result<KernelField> {
    with_family(v, m, r, opts, |fam, o| kernel_in(fam, m, r, zp, Window::Full, grid, o))
}

/// Kernel assembly on a prepared family.
pub fn kernel_in(
    fam: &SpectralFamily,
    m: &Multiplier,
    r: f64,
    zp: PlanePoint,
    window: Window,
    grid: Option<&KernelGrid>,
    opts: &KernelOptions,
) -> Result<KernelField> {
    let auto;
    let grid = match grid {
        Some(g) => g,
        None => {
            auto = KernelGrid::auto(fam, m, r, zp.x, window, opts)?;
            &auto
        }
    };
    let asm = prepare(fam, m, r, zp, window, grid)?;
    let mut values = Vec::with_capacity(asm.x.len() * asm.fft_len);
    asm.for_rows(|_, row| values.extend_from_slice(row));
    let max_abs = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let imag = values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if window == Window::Full {
        check_tail(&asm, max_abs, opts)?;
    }
    let (xi_nodes, xi_states) = asm.xi_nodes();
    Ok(KernelField {
        r,
        zp,
        window,
        dy: asm.dy(),
        y_step: asm.y_step,
        values,
        xi_nodes,
        xi_states,
        xi_min: asm.xi_min,
        small_xi_bound: asm.small_xi_bound,
        imag_residue: if max_abs > 0.0 && !is_complex(m) { imag / max_abs } else { 0.0 },
        x: asm.x,
        x_weights: asm.wx,
    })
}

fn is_complex(m: &Multiplier) -> bool {
    matches!(m.kind, MultiplierKind::ImaginaryPower { .. } | MultiplierKind::Custom)
}

/// Integrals of `K` without storing the field.
pub fn kernel_integrals(
    fam: &SpectralFamily,
    m: &Multiplier,
    r: f64,
    zp: PlanePoint,
    window: Window,
    thetas: &[f64],
    opts: &KernelOptions,
) -> Result<KernelIntegrals> {
    let grid = KernelGrid::auto(fam, m, r, zp.x, window, opts)?;
    let asm = prepare(fam, m, r, zp, window, &grid)?;
    let dy = asm.dy();
    let h = asm.y_step;
    let weights: Vec<Vec<f64>> = thetas.iter().map(|&t| dy.iter().map(|d| d.abs().powf(2.0 * t)).collect()).collect();
    let nx = asm.x.len();
    let mut norm_rows = vec![0.0; nx];
    let mut l1_rows = vec![0.0; nx];
    let mut mass_rows = vec![0.0; nx];
    let mut mom_rows = vec![vec![0.0; nx]; thetas.len()];
    let mut max_abs = 0.0f64;
    let mut imag = 0.0f64;
    asm.for_rows(|i, row| {
        let w = asm.wx[i] * h;
        let sq: Vec<f64> = row.iter().map(|v| v.norm_sqr()).collect();
        norm_rows[i] = w * pairwise_sum(&sq);
        let abs: Vec<f64> = row.iter().map(|v| v.norm()).collect();
        l1_rows[i] = w * pairwise_sum(&abs);
        let re: Vec<f64> = row.iter().map(|v| v.re).collect();
        mass_rows[i] = w * pairwise_sum(&re);
        for (t, wt) in weights.iter().enumerate() {
            let p: Vec<f64> = sq.iter().zip(wt).map(|(a, b)| a * b).collect();
            mom_rows[t][i] = w * pairwise_sum(&p);
        }
        for v in row {
            max_abs = max_abs.max(v.norm());
            imag = imag.max(v.im.abs());
        }
    });
    if window == Window::Full {
        check_tail(&asm, max_abs, opts)?;
    }
    Ok(KernelIntegrals {
        norm_sq: pairwise_sum(&norm_rows),
        moments: thetas.iter().zip(&mom_rows).map(|(&t, r)| (t, pairwise_sum(r))).collect(),
        l1: pairwise_sum(&l1_rows),
        mass: pairwise_sum(&mass_rows),
        max_abs,
        imag_residue: if max_abs > 0.0 && !is_complex(m) { imag / max_abs } else { 0.0 },
        small_xi_bound: asm.small_xi_bound,
    })
}

/// `M₁ = diag m(E)`, `M₂ = diag m'(E) F`, `M₃ = 𝐍₂ ⊙ τA ⊙ inc`, `M₄ = 𝐅₂ ⊙ τA ⊙ inc`
/// with `inc_{nm} = m(E_n) - m(E_m)`, so that
/// `D[G_A] = χ̃(Aτ) M₁ + χ(Aτ) (M₂ + M₃ + M₄)` and `τ∂_τ k_{G_A} = k_{D[G_A]}`.
#[derive(Clone, Debug)]
pub struct MatrixPieces {
    pub xi: f64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub m3: Mat,
    pub m4: Mat,
}

impl MatrixPieces {
    /// Builds the pieces for a real function `g` (with derivative `dg`) of the energy.
    pub fn new(
        xi: f64,
        energies: &[f64],
        mats: &SliceMatrices,
        f_scale: f64,
        g: &dyn Fn(f64) -> f64,
        dg: &dyn Fn(f64) -> f64,
        near: &CutoffMask,
        far: &CutoffMask,
    ) -> Self {
        let n = near.n;
        let gv: Vec<f64> = energies[..n].iter().map(|&e| g(e)).collect();
        let m2 = (0..n).map(|i| dg(energies[i]) * mats.f[i] * f_scale).collect();
        let mut m3 = Mat::zeros(n);
        let mut m4 = Mat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = mats.tau_a.get(i, j) * (gv[i] - gv[j]);
                if near.get(i, j) {
                    m3.set(i, j, v);
                } else if far.get(i, j) {
                    m4.set(i, j, v);
                }
            }
        }
        Self { xi, m1: gv, m2, m3, m4 }
    }

    /// `D ψ` for the weights `χ̃(Aτ)`, `χ(Aτ)`.
    pub fn apply(&self, chit: f64, ch: f64, psi: &[f64]) -> Vec<f64> {
        let a = self.m3.mul_vec(psi);
        let b = self.m4.mul_vec(psi);
        (0..psi.len()).map(|i| chit * self.m1[i] * psi[i] + ch * (self.m2[i] * psi[i] + a[i] + b[i])).collect()
    }
}

/// Both sides of the Plancherel identities for one dyadic piece.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceReport {
    pub a: f64,
    pub xi_lo: f64,
    pub xi_hi: f64,
    /// `∫∫ |K_{G_A}|²` by quadrature of the sampled kernel.
    pub lhs: f64,
    /// `(1/π) ∫ χ(Aξ²)² Σ |m(r²E_n)|² ψ_n(x')² dξ`.
    pub rhs: f64,
    pub y2_direct: f64,
    /// `(4/π) ∫ |D[G_A] ψ(x')|² dξ / ξ²`.
    pub y2_matrix: f64,
    /// Contributions of `M₃` and `M₄` alone to the matrix route.
    pub m3_part: f64,
    pub m4_part: f64,
    /// `max_ξ ‖M₃‖`, `max_ξ ‖M₄‖` (operator norms).
    pub m3_norm: f64,
    pub m4_norm: f64,
    pub vanishing: bool,
}

/// Plancherel identities summed over the dyadic pieces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlancherelIdentity {
    pub r: f64,
    pub xprime: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub y2_direct: f64,
    pub y2_matrix: f64,
    pub pieces: Vec<PieceReport>,
    /// Smallest `A / V(1)` with a non-vanishing piece.
    pub a_detected: Option<f64>,
}

impl PlancherelIdentity {
    pub fn rel_gap(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.rhs.abs().max(f64::MIN_POSITIVE)
    }

    pub fn y2_rel_gap(&self) -> f64 {
        (self.y2_direct - self.y2_matrix).abs() / self.y2_matrix.abs().max(f64::MIN_POSITIVE)
    }
}

/// Dyadic scales `A = 2^j` with `1/A ∈ [ξ_min², ξ_max²]`, plus `extra` scales above
/// `ξ_max` (which must vanish).
pub fn dyadic_scales(fam: &SpectralFamily, extra: usize) -> Vec<f64> {
    let j_lo = (-2.0 * fam.xi_max.log2()).ceil() as i32 - extra as i32;
    let j_hi = (-2.0 * fam.xi_min.log2()).floor() as i32;
    (j_lo..=j_hi).map(|j| 2f64.powi(j)).collect()
}

fn spectral_piece(
    fam: &SpectralFamily,
    m: &Multiplier,
    r: f64,
    xprime: f64,
    a: f64,
    opts: &KernelOptions,
    masks: &mut HashMap<usize, (CutoffMask, CutoffMask)>,
) -> Result<(f64, f64, f64, f64, f64, f64)> {
    let (lo, hi) = Window::Piece { a }.range(fam);
    if hi <= lo {
        return Ok((0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }
    let r2 = r * r;
    let parts: [(Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>); 2] = [
        (Box::new(|e| m.eval(r2 * e).re), Box::new(|e| r2 * m.eval_deriv(r2 * e).re)),
        (Box::new(|e| m.eval(r2 * e).im), Box::new(|e| r2 * m.eval_deriv(r2 * e).im)),
    ];
    let (mut rhs, mut y2, mut p3, mut p4, mut n3, mut n4) = (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0f64);
    let np = opts.rhs_panels.max(1);
    for p in 0..np {
        let (a0, b0) = (lo + (hi - lo) * p as f64 / np as f64, lo + (hi - lo) * (p + 1) as f64 / np as f64);
        let (xs, ws) = gauss_legendre_on(8, a0, b0);
        for (&xi, &w) in xs.iter().zip(&ws) {
            let sl = fam.slice(xi)?;
            let tau = xi * xi;
            let (ch, cht) = (chi(a * tau), chi_tilde(a * tau));
            let (_, s_hi) = support_states(&sl, m, r);
            if s_hi == 0 || (ch == 0.0 && cht == 0.0) {
                continue;
            }
            let n = (s_hi + MARGIN_STATES).min(sl.len());
            let mut psi = vec![0.0; n];
            sl.basis_range(xprime, 0, &mut psi);
            let s: f64 = (0..s_hi).map(|k| m.eval(r2 * sl.energies[k]).norm_sqr() * psi[k] * psi[k]).sum();
            rhs += w * ch * ch * s / PI;
            let (mats, f_scale) = fam.matrices(&sl)?;
            let (near, far) = masks.entry(n).or_insert_with(|| {
                (CutoffMask::new(n, 2.0, MaskKind::Near).unwrap(), CutoffMask::new(n, 2.0, MaskKind::Far).unwrap())
            });
            let mut dsq = 0.0;
            for (g, dg) in parts.iter().take(if is_complex(m) { 2 } else { 1 }) {
                let mp = MatrixPieces::new(xi, &sl.energies, &mats, f_scale, g.as_ref(), dg.as_ref(), near, far);
                let d = mp.apply(cht, ch, &psi);
                dsq += d.iter().map(|v| v * v).sum::<f64>();
                let d3 = mp.m3.mul_vec(&psi);
                let d4 = mp.m4.mul_vec(&psi);
                p3 += 4.0 / PI * w * ch * ch * d3.iter().map(|v| v * v).sum::<f64>() / tau;
                p4 += 4.0 / PI * w * ch * ch * d4.iter().map(|v| v * v).sum::<f64>() / tau;
                if p == np / 2 {
                    n3 = n3.max(mp.m3.operator_norm(60));
                    n4 = n4.max(mp.m4.operator_norm(60));
                }
            }
            y2 += 4.0 / PI * w * dsq / tau;
        }
    }
    Ok((rhs, y2, p3, p4, n3, n4))
}

/// Both routes of the Plancherel identities (ϑ = 0 and the `(y - y')²` moment) for
/// `m(r²𝓛)` at `x'`, summed over dyadic pieces.
pub fn plancherel_identity(v: &Potential, m: &Multiplier, r: f64, xprime: f64, opts: &KernelOptions) -> Result<PlancherelIdentity> {
    let fam = family_for(v, m, r, opts)?;
    plancherel_identity_in(&fam, m, r, xprime, opts)
}

pub fn plancherel_identity_in(fam: &SpectralFamily, m: &Multiplier, r: f64, xprime: f64, opts: &KernelOptions) -> Result<PlancherelIdentity> {
    let mut masks = HashMap::new();
    let mut pieces = Vec::new();
    let zp = PlanePoint::new(xprime, 0.0);
    for a in dyadic_scales(fam, 2) {
        let w = Window::Piece { a };
        let (lo, hi) = w.range(fam);
        let (rhs, y2m, p3, p4, n3, n4) = spectral_piece(fam, m, r, xprime, a, opts, &mut masks)?;
        let (lhs, y2d) = if hi > lo {
            let ki = kernel_integrals(fam, m, r, zp, w, &[1.0], opts)?;
            (ki.norm_sq, ki.moments[0].1)
        } else {
            (0.0, 0.0)
        };
        let vanishing = lhs <= 1e-14 * (1.0 + rhs) && rhs == 0.0;
        pieces.push(PieceReport {
            a,
            xi_lo: lo,
            xi_hi: hi,
            lhs,
            rhs,
            y2_direct: y2d,
            y2_matrix: y2m,
            m3_part: p3,
            m4_part: p4,
            m3_norm: n3,
            m4_norm: n4,
            vanishing,
        });
    }
    let sum = |f: fn(&PieceReport) -> f64| pairwise_sum(&pieces.iter().map(f).collect::<Vec<_>>());
    let v1 = fam.potential.eval(1.0);
    let a_detected = pieces.iter().find(|p| !p.vanishing).map(|p| p.a / v1);
    Ok(PlancherelIdentity {
        r,
        xprime,
        lhs: sum(|p| p.lhs),
        rhs: sum(|p| p.rhs),
        y2_direct: sum(|p| p.y2_direct),
        y2_matrix: sum(|p| p.y2_matrix),
        pieces,
        a_detected,
    })
}

/// `(1/π) ∫₀^{ξ_max} Σ |m(r²E_n)|² ψ_n(x')² dξ` for the full kernel, with the integrand
/// continued by its value at `ξ_min` below `ξ_min`.
pub fn norm_sq_spectral(fam: &SpectralFamily, m: &Multiplier, r: f64, xprime: f64, opts: &KernelOptions) -> Result<f64> {
    let r2 = r * r;
    let integrand = |xi: f64| -> Result<f64> {
        let sl = fam.slice(xi)?;
        let (lo, hi) = support_states(&sl, m, r);
        let mut psi = vec![0.0; hi - lo];
        sl.basis_range(xprime, lo, &mut psi);
        Ok((lo..hi).zip(&psi).map(|(n, p)| m.eval(r2 * sl.energies[n]).norm_sqr() * p * p).sum::<f64>() / PI)
    };
    let mut total = fam.xi_min * integrand(fam.xi_min)?;
    // geometric panels from ξ_min, uniform once wider than the uniform width
    let uniform = fam.xi_max / opts.rhs_panels as f64;
    let mut a = fam.xi_min;
    while a < fam.xi_max {
        let b = (a + a.min(uniform)).min(fam.xi_max);
        let (xs, ws) = gauss_legendre_on(8, a, b);
        for (x, w) in xs.iter().zip(&ws) {
            total += w * integrand(*x)?;
        }
        a = b;
    }
    Ok(total)
}

/// One entry of the weighted Plancherel report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub theta: f64,
    pub r: f64,
    pub xprime: f64,
    /// `r^{2-2ϑ} max(V(r), V(x'))^{1/2-ϑ} ∫ |y - y'|^{2ϑ} |K|²`.
    pub moment: f64,
    /// Squared multiplier norm: `sup|m|²` at `ϑ = 0`, the Besov surrogate otherwise.
    pub norm_sq: f64,
    pub ratio: f64,
}

/// Squared norm used to normalise the `ϑ`-moment.
pub fn moment_norm_sq(m: &Multiplier, theta: f64) -> Result<f64> {
    if theta == 0.0 {
        Ok(sup_norm(m).powi(2))
    } else {
        Ok(sobolev_inf_norm(m, theta)?.powi(2))
    }
}

/// Weighted moments of the full kernel of `m(r²𝓛)` at `z'` for each `ϑ ∈ [0, 1/2)`.
pub fn weighted_moment(v: &Potential, m: &Multiplier, r: f64, zp: PlanePoint, thetas: &[f64], opts: &KernelOptions) -> Result<Vec<MomentReport>> {
    if let Some(&t) = thetas.iter().find(|&&t| !(0.0..0.5).contains(&t)) {
        return crate::error::domain(format!("ϑ = {t} outside [0, 1/2)"));
    }
    let ki = with_family(v, m, r, opts, |fam, o| kernel_integrals(fam, m, r, zp, Window::Full, thetas, o))?;
    let mv = v.eval(r).max(v.eval(zp.x));
    thetas
        .iter()
        .zip(&ki.moments)
        .map(|(&theta, &(_, raw))| {
            let moment = r.powf(2.0 - 2.0 * theta) * mv.powf(0.5 - theta) * raw;
            let norm_sq = moment_norm_sq(m, theta)?;
            let ratio = if norm_sq > 0.0 { moment / norm_sq } else { 0.0 };
            Ok(MomentReport { theta, r, xprime: zp.x, moment, norm_sq, ratio })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L1Sample {
    pub r: f64,
    pub xprime: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct L1Report {
    pub samples: Vec<L1Sample>,
    pub sup: f64,
}

/// `sup_{z'} ∫ |K(z', z)| dz` over the given base points.
pub fn l1_norm(v: &Potential, m: &Multiplier, r: f64, xprimes: &[f64], opts: &KernelOptions) -> Result<L1Report> {
    if m.is_zero() {
        let samples = xprimes.iter().map(|&x| L1Sample { r, xprime: x, value: 0.0 }).collect();
        return Ok(L1Report { samples, sup: 0.0 });
    }
    let mut samples = Vec::new();
    for &x in xprimes {
        let zp = PlanePoint::new(x, 0.0);
        let ki = with_family(v, m, r, opts, |fam, o| kernel_integrals(fam, m, r, zp, Window::Full, &[], o))?;
        samples.push(L1Sample { r, xprime: x, value: ki.l1 });
    }
    let sup = samples.iter().map(|s| s.value).fold(0.0, f64::max);
    Ok(L1Report { samples, sup })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatSample {
    pub r: f64,
    pub xprime: f64,
    /// `K(z', z')`.
    pub diagonal: f64,
    /// `∫ K(z', z) dz`.
    pub mass: f64,
    /// Fitted Gaussian rate `b`.
    pub b: f64,
    /// `max |K| Vol(z', r) e^{(b/2) dist²/r²}` relative to its value at `dist ≤ r`.
    pub ratio: f64,
    pub min_value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatReport {
    pub samples: Vec<HeatSample>,
    pub b_min: f64,
    pub ratio_max: f64,
    pub mass_max: f64,
    pub diagonal_positive: bool,
}

/// Gaussian bound check for the heat kernel `K_{e^{-r²𝓛}}`.
pub fn heat_gaussian_check(v: &Potential, rs: &[f64], xprimes: &[f64], opts: &KernelOptions) -> Result<HeatReport> {
    let m = Multiplier::heat();
    let ctx = GeometryContext::new(v)?;
    let mut samples = Vec::new();
    for &r in rs {
        for &x in xprimes {
            let zp = PlanePoint::new(x, 0.0);
            let f = with_family(v, &m, r, opts, |fam, o| kernel_in(fam, &m, r, zp, Window::Full, None, o))?;
            samples.push(heat_sample(&ctx, &f)?);
        }
    }
    let b_min = samples.iter().map(|s| s.b).fold(f64::INFINITY, f64::min);
    let ratio_max = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let mass_max = samples.iter().map(|s| s.mass).fold(f64::NEG_INFINITY, f64::max);
    let diagonal_positive = samples.iter().all(|s| s.diagonal > 0.0);
    Ok(HeatReport { samples, b_min, ratio_max, mass_max, diagonal_positive })
}

fn heat_sample(ctx: &GeometryContext, f: &KernelField) -> Result<HeatSample> {
    let r = f.r;
    let vol = volume(ctx, f.zp, r);
    let i0 = f.x.iter().position(|&x| x == f.zp.x).ok_or_else(|| Error::Numerical("x' is not a grid node".into()))?;
    let j0 = f.dy.iter().position(|&d| d == 0.0).unwrap();
    let diagonal = f.get(i0, j0).re;
    let mut mass = 0.0;
    for (i, w) in f.x_weights.iter().enumerate() {
        let row: Vec<f64> = (0..f.dy.len()).map(|j| f.get(i, j).re).collect();
        mass += w * f.y_step * pairwise_sum(&row);
    }
    let max_abs = f.max_abs();
    let min_value = f.values.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    // negative samples of a positive kernel measure the noise level
    let floor = (1e-10 * max_abs).max(10.0 * (-min_value).max(0.0));
    // dist_surrogate split into its row and column factors
    let v = &ctx.potential;
    let vp = v.eval(f.zp.x);
    let u_col: Vec<f64> = f.dy.iter().map(|d| v.u_function(d.abs()).unwrap_or(f64::INFINITY)).collect();
    // upper envelope of ln(|K| Vol) in bins of dist/r
    let nb = 64usize;
    let mut pts = Vec::new();
    let mut c0 = 0.0f64;
    for (i, &x) in f.x.iter().enumerate() {
        let dx = (x - f.zp.x).abs();
        let sv = v.eval(x).max(vp).sqrt();
        for (j, &dy) in f.dy.iter().enumerate() {
            let k = f.get(i, j).norm();
            if k <= floor {
                continue;
            }
            let d = (dx + if dy == 0.0 { 0.0 } else { (dy.abs() / sv).min(u_col[j]) }) / r;
            if d <= 1.0 {
                c0 = c0.max(k * vol);
            }
            pts.push((d, k * vol));
        }
    }
    let dmax = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let mut env = vec![0.0f64; nb];
    for &(d, kv) in &pts {
        let b = ((d / dmax) * (nb - 1) as f64) as usize;
        env[b] = env[b].max(kv);
    }
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (b, &e) in env.iter().enumerate() {
        let d = (b as f64 + 0.5) / (nb - 1) as f64 * dmax;
        if e > 0.0 && d >= 1.0 {
            let (px, py) = (d * d, (e / c0).ln());
            sx += px;
            sy += py;
            sxx += px * px;
            sxy += px * py;
            cnt += 1.0;
        }
    }
    let slope = if cnt >= 2.0 { (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx) } else { 0.0 };
    let b = -slope;
    let ratio = pts.iter().map(|&(d, kv)| kv * (0.5 * b * d * d).exp()).fold(0.0, f64::max) / c0;
    Ok(HeatSample { r, xprime: f.zp.x, diagonal, mass, b, ratio, min_value })
}

/// Report of the weighted Plancherel and L¹ measurements, stamped with the run config hash.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PlancherelReport {
    pub config_hash: String,
    pub moments: Vec<MomentReport>,
    pub l1: Vec<L1Sample>,
}

impl PlancherelReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> KernelOptions {
        KernelOptions { xi_min_ratio: 1e-2, ..Default::default() }
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn zero_multiplier_gives_zero_kernel() {
        let v = Potential::power(2.0);
        let f = kernel(&v, &Multiplier::zero(), 1.0, PlanePoint::new(0.0, 0.0), None, &quick()).unwrap();
        assert_eq!(f.max_abs(), 0.0);
        let l1 = l1_norm(&v, &Multiplier::zero(), 1.0, &[0.0, 2.0], &quick()).unwrap();
        assert_eq!(l1.sup, 0.0);
    }

    #[test]
    fn bump_kernel_is_real_and_symmetric() {
        let v = Potential::power(2.0);
        let m = Multiplier::bump();
        let o = quick();
        let fam = family_for(&v, &m, 1.0, &o).unwrap();
        let x1 = 0.5;
        let grid = KernelGrid::auto(&fam, &m, 1.0, x1, Window::Full, &o).unwrap();
        let a = kernel(&v, &m, 1.0, PlanePoint::new(0.0, 0.0), Some(&grid), &o).unwrap();
        let b = kernel(&v, &m, 1.0, PlanePoint::new(x1, 0.0), Some(&grid), &o).unwrap();
        assert!(a.imag_residue < 1e-8 && b.imag_residue < 1e-8);
        let i0 = a.x.iter().position(|&x| x == 0.0).unwrap();
        let i1 = a.x.iter().position(|&x| x == x1).unwrap();
        let n = a.dy.len();
        let scale = a.max_abs();
        for j in 1..n {
            let k = a.get(i1, j);
            let kt = b.get(i0, n - j);
            assert!((k - kt).norm() < 1e-10 * scale, "{k} vs {kt}");
        }
    }

    #[test]
    fn plancherel_routes_agree_on_harmonic_well() {
        let v = Potential::power(2.0);
        let p = plancherel_identity(&v, &Multiplier::bump(), 1.0, 0.0, &quick()).unwrap();
        assert!(p.rel_gap() < 1e-3, "ϑ=0 gap {}", p.rel_gap());
        assert!(p.y2_rel_gap() < 5e-3, "y² gap {}", p.y2_rel_gap());
        assert!(p.a_detected.is_some());
        // the two scales beyond ξ_max carry nothing
        assert!(p.pieces[..2].iter().all(|q| q.vanishing));
        assert!(p.pieces.iter().any(|q| !q.vanishing));
        let n3 = p.pieces.iter().map(|q| q.m3_norm).fold(0.0, f64::max);
        let n4 = p.pieces.iter().map(|q| q.m4_norm).fold(0.0, f64::max);
        assert!(n4 <= n3, "‖M₄‖ = {n4} > ‖M₃‖ = {n3}");
    }

    #[test]
    fn zero_multiplier_has_vanishing_pieces() {
        let p = plancherel_identity(&Potential::power(2.0), &Multiplier::zero(), 1.0, 0.0, &quick()).unwrap();
        assert!(p.pieces.iter().all(|q| q.vanishing && q.rhs == 0.0 && q.y2_matrix == 0.0));
        assert!(p.a_detected.is_none());
    }

    #[test]
    fn spectral_norm_rescales() {
        // |K_{m(r²𝓛_V)}(x', ·)|² = r^{-1} |K_{m(𝓛_{V_r})}(x'/r, ·)|² after the change of variables
        let v = Potential::power(4.0);
        let m = Multiplier::bump();
        let o = quick();
        for (r, x) in [(2.0, 0.5), (0.5, 1.0)] {
            let vr = v.rescale(r).unwrap();
            let fam = family_for(&v, &m, r, &o).unwrap();
            let famr = family_for(&vr, &m, 1.0, &o).unwrap();
            let a = norm_sq_spectral(&fam, &m, r, x, &o).unwrap();
            let b = norm_sq_spectral(&famr, &m, 1.0, x / r, &o).unwrap() / r;
            assert!(rel(a, b) < 1e-6, "r={r}: {a} vs {b}");
        }
    }

    #[test]
    fn zeroth_moment_matches_spectral_norm() {
        let v = Potential::power(2.0);
        let m = Multiplier::bump();
        let o = quick();
        for (r, x) in [(1.0, 0.0), (0.5, 1.0)] {
            let rep = weighted_moment(&v, &m, r, PlanePoint::new(x, 0.0), &[0.0], &o).unwrap();
            let fam = family_for(&v, &m, r, &o).unwrap();
            let spec = norm_sq_spectral(&fam, &m, r, x, &o).unwrap();
            let expect = r * r * v.eval(r).max(v.eval(x)).sqrt() * spec;
            assert!(rel(rep[0].moment, expect) < 1e-3, "{} vs {expect}", rep[0].moment);
            assert_eq!(rep[0].norm_sq, sup_norm(&m).powi(2));
        }
        assert!(weighted_moment(&v, &m, 1.0, PlanePoint::new(0.0, 0.0), &[0.5], &o).is_err());
    }

    #[test]
    fn l1_norm_is_linear() {
        let v = Potential::power(2.0);
        let m = Multiplier::bump();
        let o = quick();
        let a = l1_norm(&v, &m, 1.0, &[0.0, 0.5], &o).unwrap();
        let b = l1_norm(&v, &m.scaled(Complex64::new(2.0, 0.0)), 1.0, &[0.0, 0.5], &o).unwrap();
        for (p, q) in a.samples.iter().zip(&b.samples) {
            assert!(rel(q.value, 2.0 * p.value) < 1e-12);
        }
    }

    #[test]
    fn heat_kernel_is_positive_sub_markov_and_gaussian() {
        let rep = heat_gaussian_check(&Potential::power(2.0), &[1.0], &[0.0, 1.0], &quick()).unwrap();
        assert!(rep.diagonal_positive);
        assert!(rep.mass_max <= 1.0 + 1e-3, "mass {}", rep.mass_max);
        assert!(rep.b_min > 0.0, "b {}", rep.b_min);
        assert!(rep.ratio_max.is_finite());
    }

    #[test]
    fn general_family_kernel_smoke() {
        let v = Potential::two_power(1.0, 4.0);
        let m = Multiplier::bump();
        let o = quick();
        let f = kernel(&v, &m, 1.0, PlanePoint::new(0.0, 0.0), None, &o).unwrap();
        assert!(f.max_abs() > 0.0 && f.imag_residue < 1e-8);
        let fam = family_for(&v, &m, 1.0, &o).unwrap();
        let ki = kernel_integrals(&fam, &m, 1.0, PlanePoint::new(0.0, 0.0), Window::Full, &[], &o).unwrap();
        let spec = norm_sq_spectral(&fam, &m, 1.0, 0.0, &o).unwrap();
        assert!(rel(ki.norm_sq, spec) < 1e-3, "{} vs {spec}", ki.norm_sq);
    }
}
