//! Compactly supported spectral multipliers and the dyadic cutoff `χ`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MultiplierKind {
    /// `exp(1 - 1/(1 - u²))`, `u = (λ - 5/8)/(3/8)`, supported on `[1/4, 1]`.
    Bump,
    /// `λ^{iα} η(λ)` with `η` the bump.
    ImaginaryPower { alpha: f64 },
    /// `e^{-λ}` on `[0, cutoff]`.
    Heat { cutoff: f64 },
    /// `S((λ - 1/4)/w) S((1 - λ)/w)` with the smooth step `S`.
    IndicatorSmoothed { width: f64 },
    Zero,
    /// User-supplied function, not serialisable.
    Custom,
}

type Func = Arc<dyn Fn(f64) -> Complex64 + Send + Sync>;

/// Spectral multiplier `m` with analytic derivative.
#[derive(Clone)]
pub struct Multiplier {
    pub id: String,
    pub kind: MultiplierKind,
    factor: Complex64,
    custom: Option<(Func, Func)>,
    support: (f64, f64),
}

impl std::fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Multiplier").field("id", &self.id).field("kind", &self.kind).field("factor", &self.factor).finish()
    }
}

/// Smooth step: 0 for `u ≤ 0`, 1 for `u ≥ 1`.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

pub fn smooth_step_deriv(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        // s = 1 / (1 + exp(1/u - 1/(1-u)))
        let g = 1.0 / u - 1.0 / (1.0 - u);
        let dg = -1.0 / (u * u) - 1.0 / ((1.0 - u) * (1.0 - u));
        if g.abs() > 700.0 {
            return 0.0;
        }
        let e = g.exp();
        -dg * e / ((1.0 + e) * (1.0 + e))
    }
}

fn bump(l: f64) -> (f64, f64) {
    let u = (l - 0.625) / 0.375;
    if u.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let q = 1.0 - u * u;
    let b = (1.0 - 1.0 / q).exp();
    (b, b * (-2.0 * u / (q * q)) / 0.375)
}

impl Multiplier {
    fn from_kind(id: impl Into<String>, kind: MultiplierKind) -> Result<Self> {
        let support = match &kind {
            MultiplierKind::Bump | MultiplierKind::ImaginaryPower { .. } | MultiplierKind::IndicatorSmoothed { .. } => {
                (0.25, 1.0)
            }
            MultiplierKind::Heat { cutoff } => {
                if !(*cutoff > 0.0) {
                    return Err(Error::Config("heat cutoff must be positive".into()));
                }
                (0.0, *cutoff)
            }
            MultiplierKind::Zero => (0.0, 0.0),
            MultiplierKind::Custom => return Err(Error::Config("use Multiplier::custom".into())),
        };
        if let MultiplierKind::IndicatorSmoothed { width } = kind {
            if !(width > 0.0 && width <= 0.375) {
                return Err(Error::Config(format!("indicator width {width} outside (0, 3/8]")));
            }
        }
        Ok(Self { id: id.into(), kind, factor: Complex64::new(1.0, 0.0), custom: None, support })
    }

    pub fn bump() -> Self {
        Self::from_kind("bump", MultiplierKind::Bump).unwrap()
    }

    pub fn imaginary_power(alpha: f64) -> Self {
        Self::from_kind(format!("imag_power_{alpha}"), MultiplierKind::ImaginaryPower { alpha }).unwrap()
    }

    pub fn heat() -> Self {
        Self::from_kind("heat", MultiplierKind::Heat { cutoff: 40.0 }).unwrap()
    }

    pub fn indicator_smoothed(width: f64) -> Result<Self> {
        Self::from_kind(format!("indicator_{width}"), MultiplierKind::IndicatorSmoothed { width })
    }

    pub fn zero() -> Self {
        Self::from_kind("zero", MultiplierKind::Zero).unwrap()
    }

    /// Multiplier from closures `m` and `m'`, vanishing outside `support`.
    pub fn custom(
        id: impl Into<String>,
        support: (f64, f64),
        f: impl Fn(f64) -> Complex64 + Send + Sync + 'static,
        df: impl Fn(f64) -> Complex64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            kind: MultiplierKind::Custom,
            factor: Complex64::new(1.0, 0.0),
            custom: Some((Arc::new(f), Arc::new(df))),
            support,
        }
    }

    /// Looks up a catalog id such as `bump`, `imag_power_4`, `heat`, `indicator_0.1`.
    pub fn from_id(id: &str) -> Result<Self> {
        if let Some(a) = id.strip_prefix("imag_power_") {
            let alpha: f64 = a.parse().map_err(|_| Error::Config(format!("bad multiplier id {id}")))?;
            return Ok(Self::imaginary_power(alpha));
        }
        if let Some(w) = id.strip_prefix("indicator_") {
            let w: f64 = w.parse().map_err(|_| Error::Config(format!("bad multiplier id {id}")))?;
            return Self::indicator_smoothed(w);
        }
        match id {
            "bump" => Ok(Self::bump()),
            "heat" => Ok(Self::heat()),
            "zero" => Ok(Self::zero()),
            _ => Err(Error::Config(format!("unknown multiplier id {id}"))),
        }
    }

    /// `c · m`.
    pub fn scaled(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        out.factor *= c;
        out.id = format!("{}*({c})", self.id);
        out
    }

    /// Closed interval outside which `m` vanishes.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Largest spectral value where `m` is nonzero.
    pub fn support_max(&self) -> f64 {
        self.support.1
    }

    pub fn is_zero(&self) -> bool {
        self.kind == MultiplierKind::Zero || self.factor == Complex64::new(0.0, 0.0)
    }

    pub fn eval(&self, l: f64) -> Complex64 {
        self.factor * self.raw(l).0
    }

    pub fn eval_deriv(&self, l: f64) -> Complex64 {
        self.factor * self.raw(l).1
    }

    fn raw(&self, l: f64) -> (Complex64, Complex64) {
        let re = |v: f64| Complex64::new(v, 0.0);
        if let Some((f, df)) = &self.custom {
            return if l >= self.support.0 && l <= self.support.1 { (f(l), df(l)) } else { (re(0.0), re(0.0)) };
        }
        match self.kind {
            MultiplierKind::Bump => {
                let (b, db) = bump(l);
                (re(b), re(db))
            }
            MultiplierKind::ImaginaryPower { alpha } => {
                let (b, db) = bump(l);
                if b == 0.0 {
                    return (re(0.0), re(0.0));
                }
                let p = Complex64::from_polar(1.0, alpha * l.ln());
                (p * b, p * (Complex64::new(0.0, alpha / l) * b + db))
            }
            MultiplierKind::Heat { cutoff } => {
                if (0.0..=cutoff).contains(&l) {
                    let e = (-l).exp();
                    (re(e), re(-e))
                } else {
                    (re(0.0), re(0.0))
                }
            }
            MultiplierKind::IndicatorSmoothed { width } => {
                let (a, b) = ((l - 0.25) / width, (1.0 - l) / width);
                let (sa, sb) = (smooth_step(a), smooth_step(b));
                (re(sa * sb), re((smooth_step_deriv(a) * sb - sa * smooth_step_deriv(b)) / width))
            }
            MultiplierKind::Zero | MultiplierKind::Custom => (re(0.0), re(0.0)),
        }
    }

    /// Interval on which second differences are taken for the Besov surrogate.
    fn besov_domain(&self) -> (f64, f64) {
        let (lo, hi) = self.support;
        match self.kind {
            MultiplierKind::Heat { .. } => (lo, hi),
            _ => {
                let w = (hi - lo).max(1e-3);
                (lo - 2.0 * w, hi + 2.0 * w)
            }
        }
    }

    /// Cubic Hermite table on `2^16` points of the support.
    pub fn tabulate(&self) -> MultiplierTable {
        let (lo, hi) = self.support;
        let n = 1usize << 16;
        let h = (hi - lo) / (n - 1) as f64;
        let vals = (0..n).map(|i| self.eval(lo + i as f64 * h)).collect();
        let ders = (0..n).map(|i| self.eval_deriv(lo + i as f64 * h)).collect();
        MultiplierTable { lo, hi, h, vals, ders }
    }
}

/// Cached samples of `m` and `m'` with cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct MultiplierTable {
    lo: f64,
    hi: f64,
    h: f64,
    vals: Vec<Complex64>,
    ders: Vec<Complex64>,
}

impl MultiplierTable {
    pub fn eval(&self, l: f64) -> Complex64 {
        if !(l >= self.lo && l <= self.hi) || self.h == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let s = (l - self.lo) / self.h;
        let i = (s.floor() as usize).min(self.vals.len() - 2);
        let t = s - i as f64;
        let (t2, t3) = (t * t, t * t * t);
        self.vals[i] * (2.0 * t3 - 3.0 * t2 + 1.0)
            + self.ders[i] * ((t3 - 2.0 * t2 + t) * self.h)
            + self.vals[i + 1] * (-2.0 * t3 + 3.0 * t2)
            + self.ders[i + 1] * ((t3 - t2) * self.h)
    }
}

/// `B^s_{∞,∞}` surrogate `‖m‖_∞ + sup_{t,h} |Δ²_h m(t)| / |h|^s` on a uniform grid.
pub fn sobolev_inf_norm(m: &Multiplier, s: f64) -> Result<f64> {
    sobolev_inf_norm_with(m, s, 1 << 15)
}

pub fn sobolev_inf_norm_with(m: &Multiplier, s: f64, points: usize) -> Result<f64> {
    if !(s > 0.0 && s < 2.0) {
        return Err(Error::UnsupportedOrder(s));
    }
    if m.is_zero() {
        return Ok(0.0);
    }
    let (lo, hi) = m.besov_domain();
    let dx = (hi - lo) / (points - 1) as f64;
    let v: Vec<Complex64> = (0..points).map(|i| m.eval(lo + i as f64 * dx)).collect();
    let sup = v.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    // shifts k = 1..points/2, log-spaced, always including every k ≤ 64
    let mut ks: Vec<usize> = (1..=64).collect();
    let mut k = 64.0f64;
    while (k as usize) < points / 2 {
        k *= 1.02;
        ks.push(k as usize);
    }
    ks.push(points / 2);
    ks.dedup();
    let mut best = 0.0f64;
    for &k in &ks {
        let h = k as f64 * dx;
        let mut d2 = 0.0f64;
        for i in k..points - k {
            d2 = d2.max((v[i + k] - v[i] * 2.0 + v[i - k]).norm());
        }
        best = best.max(d2 / h.powf(s));
    }
    Ok(sup + best)
}

/// `χ(τ) = Φ(τ) - Φ(τ/2)` with `Φ(τ) = S(log₂ τ)`, supported in `[1, 4]`.
pub fn chi(tau: f64) -> f64 {
    if tau <= 1.0 || tau >= 4.0 {
        return 0.0;
    }
    let u = tau.log2();
    smooth_step(u) - smooth_step(u - 1.0)
}

/// `χ̃(τ) = τ χ'(τ)`.
pub fn chi_tilde(tau: f64) -> f64 {
    if tau <= 1.0 || tau >= 4.0 {
        return 0.0;
    }
    let u = tau.log2();
    (smooth_step_deriv(u) - smooth_step_deriv(u - 1.0)) / std::f64::consts::LN_2
}

/// Dyadic piece `G_A(λ, τ) = m(λ) χ(Aτ)`.
#[derive(Clone, Debug)]
pub struct DyadicPiece {
    pub a: f64,
    pub m: Multiplier,
}

pub fn dyadic_piece(m: &Multiplier, a: f64) -> Result<DyadicPiece> {
    if !(a > 0.0) {
        return crate::error::domain("dyadic scale must be positive");
    }
    Ok(DyadicPiece { a, m: m.clone() })
}

impl DyadicPiece {
    pub fn g(&self, lambda: f64, tau: f64) -> Complex64 {
        self.m.eval(lambda) * chi(self.a * tau)
    }

    /// `τ`-support `[1/A, 4/A]`.
    pub fn tau_support(&self) -> (f64, f64) {
        (1.0 / self.a, 4.0 / self.a)
    }
}

/// The catalog: bump, `λ^{iα}η` for `α ∈ {1, 4, 16}`, heat, smoothed indicators.
pub fn standard_multipliers() -> Vec<Multiplier> {
    let mut v = vec![Multiplier::bump()];
    for a in [1.0, 4.0, 16.0] {
        v.push(Multiplier::imaginary_power(a));
    }
    v.push(Multiplier::heat());
    for w in [0.05, 0.1, 0.2] {
        v.push(Multiplier::indicator_smoothed(w).unwrap());
    }
    v
}
