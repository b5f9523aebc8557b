//! Single-well potentials: evaluation, scaling, classification, sublevel sets.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};

/// Serializable description of a potential family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// `|x|^d`
    Power { d: f64 },
    /// `|x|^d + |x|^D`
    TwoPower {
        d: f64,
        #[serde(rename = "D")]
        big_d: f64,
    },
    /// `1 / (|x|^{-d} + |x|^{-D})`
    ReciprocalTwoPower {
        d: f64,
        #[serde(rename = "D")]
        big_d: f64,
    },
    /// `|x|^D log(2 + |x|)`
    LogModulated {
        #[serde(rename = "D")]
        big_d: f64,
    },
    /// Samples `(x, V)`, either inline or loaded from a two-column CSV file.
    Tabulated {
        #[serde(default)]
        samples: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        csv: Option<PathBuf>,
    },
}

/// Anything that can be evaluated like a potential. `classify` works on this
/// trait so that ad-hoc profiles can be tested against the class conditions.
pub trait Profile {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
}

/// Monotone cubic interpolant of `log V` against `log |x|` on one half-line.
#[derive(Clone, Debug)]
struct LogLogBranch {
    t: Vec<f64>,
    p: Vec<f64>,
    m: Vec<f64>,
}

impl LogLogBranch {
    fn new(pts: &[(f64, f64)]) -> Self {
        let t: Vec<f64> = pts.iter().map(|&(a, _)| a.ln()).collect();
        let p: Vec<f64> = pts.iter().map(|&(_, v)| v.ln()).collect();
        let k = t.len();
        let h: Vec<f64> = (0..k - 1).map(|i| t[i + 1] - t[i]).collect();
        let delta: Vec<f64> = (0..k - 1).map(|i| (p[i + 1] - p[i]) / h[i]).collect();
        let mut m = vec![0.0; k];
        m[0] = delta[0];
        m[k - 1] = delta[k - 2];
        for i in 1..k - 1 {
            let (d0, d1) = (delta[i - 1], delta[i]);
            if d0 * d1 <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
            }
        }
        Self { t, p, m }
    }

    /// Returns `(log V, d log V / d log a)` at `log a = s`.
    fn eval(&self, s: f64) -> (f64, f64) {
        let k = self.t.len();
        if s <= self.t[0] {
            return (self.p[0] + self.m[0] * (s - self.t[0]), self.m[0]);
        }
        if s >= self.t[k - 1] {
            return (self.p[k - 1] + self.m[k - 1] * (s - self.t[k - 1]), self.m[k - 1]);
        }
        let i = self.t.partition_point(|&ti| ti <= s).min(k - 1) - 1;
        let h = self.t[i + 1] - self.t[i];
        let u = (s - self.t[i]) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let val = h00 * self.p[i] + h10 * h * self.m[i] + h01 * self.p[i + 1] + h11 * h * self.m[i + 1];
        let d00 = (6.0 * u2 - 6.0 * u) / h;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = (-6.0 * u2 + 6.0 * u) / h;
        let d11 = 3.0 * u2 - 2.0 * u;
        let der = d00 * self.p[i] + d10 * self.m[i] + d01 * self.p[i + 1] + d11 * self.m[i + 1];
        (val, der)
    }
}

#[derive(Clone, Debug)]
struct Table {
    pos: LogLogBranch,
    neg: LogLogBranch,
    symmetric: bool,
}

fn build_table(samples: &[[f64; 2]]) -> Result<Table> {
    let mut pos: Vec<(f64, f64)> = Vec::new();
    let mut neg: Vec<(f64, f64)> = Vec::new();
    for &[x, v] in samples {
        if !x.is_finite() || !v.is_finite() {
            return domain("tabulated samples must be finite");
        }
        if x == 0.0 {
            if v != 0.0 {
                return domain("tabulated potential must vanish at 0");
            }
        } else if v <= 0.0 {
            return domain("tabulated potential must be positive away from 0");
        } else if x > 0.0 {
            pos.push((x, v));
        } else {
            neg.push((-x, v));
        }
    }
    for side in [&mut pos, &mut neg] {
        side.sort_by(|a, b| a.0.total_cmp(&b.0));
        if side.len() < 2 {
            return Err(Error::Config("tabulated potential needs at least two samples per half-line".into()));
        }
        for w in side.windows(2) {
            if w[1].0 <= w[0].0 || w[1].1 <= w[0].1 {
                return domain("tabulated samples must be strictly increasing in |x| on each half-line");
            }
        }
    }
    let symmetric = pos == neg;
    Ok(Table { pos: LogLogBranch::new(&pos), neg: LogLogBranch::new(&neg), symmetric })
}

fn read_csv_samples(path: &PathBuf) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Config(format!("{}: expected two columns", path.display())));
        }
        let (Ok(x), Ok(v)) = (rec[0].parse::<f64>(), rec[1].parse::<f64>()) else {
            // tolerate a header line
            continue;
        };
        out.push([x, v]);
    }
    Ok(out)
}

/// An evaluable potential `amp * base(dil * x)`.
#[derive(Clone, Debug)]
pub struct Potential {
    spec: PotentialSpec,
    amp: f64,
    dil: f64,
    table: Option<Arc<Table>>,
}

#[derive(Serialize)]
struct HashKey<'a> {
    spec: &'a PotentialSpec,
    amp: u64,
    dil: u64,
}

impl Potential {
    pub fn new(spec: PotentialSpec) -> Result<Self> {
        let mut spec = spec;
        let positive = |v: f64, name: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                domain(format!("exponent {name} must be strictly positive, got {v}"))
            }
        };
        let table = match &mut spec {
            PotentialSpec::Power { d } => {
                positive(*d, "d")?;
                None
            }
            PotentialSpec::TwoPower { d, big_d } | PotentialSpec::ReciprocalTwoPower { d, big_d } => {
                positive(*d, "d")?;
                positive(*big_d, "D")?;
                None
            }
            PotentialSpec::LogModulated { big_d } => {
                positive(*big_d, "D")?;
                None
            }
            PotentialSpec::Tabulated { samples, csv } => {
                if samples.is_empty() {
                    if let Some(path) = csv.take() {
                        *samples = read_csv_samples(&path)?;
                    }
                }
                Some(Arc::new(build_table(samples)?))
            }
        };
        Ok(Self { spec, amp: 1.0, dil: 1.0, table })
    }

    pub fn power(d: f64) -> Self {
        Self::new(PotentialSpec::Power { d }).expect("valid exponent")
    }

    pub fn two_power(d: f64, big_d: f64) -> Self {
        Self::new(PotentialSpec::TwoPower { d, big_d }).expect("valid exponents")
    }

    pub fn reciprocal_two_power(d: f64, big_d: f64) -> Self {
        Self::new(PotentialSpec::ReciprocalTwoPower { d, big_d }).expect("valid exponents")
    }

    pub fn log_modulated(big_d: f64) -> Self {
        Self::new(PotentialSpec::LogModulated { big_d }).expect("valid exponent")
    }

    pub fn tabulated(samples: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(PotentialSpec::Tabulated { samples, csv: None })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::new(serde_json::from_str(s)?)
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    /// Overall amplitude and dilation: `V(x) = amp * base(dil * x)`.
    pub fn scale_factors(&self) -> (f64, f64) {
        (self.amp, self.dil)
    }

    /// `tau * V`.
    pub fn scale(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return domain(format!("scale factor must be positive, got {tau}"));
        }
        Ok(Self { amp: self.amp * tau, ..self.clone() })
    }

    /// `V_r(x) = r^2 V(r x)`.
    pub fn rescale(&self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return domain(format!("rescale radius must be positive, got {r}"));
        }
        Ok(Self { amp: self.amp * r * r, dil: self.dil * r, ..self.clone() })
    }

    /// Degree `D` when `V = c |x|^D`.
    pub fn homogeneous_degree(&self) -> Option<f64> {
        match self.spec {
            PotentialSpec::Power { d } => Some(d),
            _ => None,
        }
    }

    pub fn is_even(&self) -> bool {
        match &self.table {
            Some(t) => t.symmetric,
            None => true,
        }
    }

    /// Stable content hash (hex sha256) of the family, parameters and scale factors.
    pub fn hash_hex(&self) -> String {
        let key = HashKey { spec: &self.spec, amp: self.amp.to_bits(), dil: self.dil.to_bits() };
        let bytes = serde_json::to_vec(&key).expect("serializable");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn label(&self) -> String {
        let base = match &self.spec {
            PotentialSpec::Power { d } => format!("|x|^{d}"),
            PotentialSpec::TwoPower { d, big_d } => format!("|x|^{d}+|x|^{big_d}"),
            PotentialSpec::ReciprocalTwoPower { d, big_d } => format!("1/(|x|^-{d}+|x|^-{big_d})"),
            PotentialSpec::LogModulated { big_d } => format!("|x|^{big_d}log(2+|x|)"),
            PotentialSpec::Tabulated { samples, .. } => format!("tabulated[{}]", samples.len()),
        };
        if self.amp == 1.0 && self.dil == 1.0 {
            base
        } else {
            format!("{}*({base})(x*{})", self.amp, self.dil)
        }
    }

    /// `(base(u), base'(u))`.
    #[inline]
    fn base(&self, u: f64) -> (f64, f64) {
        let a = u.abs();
        let sg = if u < 0.0 { -1.0 } else { 1.0 };
        if a == 0.0 {
            return (0.0, 0.0);
        }
        match &self.spec {
            PotentialSpec::Power { d } => {
                let (v, dv) = power_pair(a, *d);
                (v, sg * dv)
            }
            PotentialSpec::TwoPower { d, big_d } => {
                let (v1, d1) = power_pair(a, *d);
                let (v2, d2) = power_pair(a, *big_d);
                (v1 + v2, sg * (d1 + d2))
            }
            PotentialSpec::ReciprocalTwoPower { d, big_d } => {
                let s1 = a.powf(-*d);
                let s2 = a.powf(-*big_d);
                let s = s1 + s2;
                let v = 1.0 / s;
                let logder = (d * s1 + big_d * s2) / s;
                (v, sg * v * logder / a)
            }
            PotentialSpec::LogModulated { big_d } => {
                let (p, dp) = power_pair(a, *big_d);
                let l = (2.0 + a).ln();
                (p * l, sg * (dp * l + p / (2.0 + a)))
            }
            PotentialSpec::Tabulated { .. } => {
                let t = self.table.as_ref().expect("table built");
                let br = if u < 0.0 { &t.neg } else { &t.pos };
                let (lv, ld) = br.eval(a.ln());
                let v = lv.exp();
                (v, sg * v * ld / a)
            }
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.amp * self.base(self.dil * x).0
    }

    #[inline]
    pub fn eval_deriv(&self, x: f64) -> f64 {
        self.amp * self.dil * self.base(self.dil * x).1
    }

    /// Value and derivative in one call.
    #[inline]
    pub fn eval_both(&self, x: f64) -> (f64, f64) {
        let (v, dv) = self.base(self.dil * x);
        (self.amp * v, self.amp * self.dil * dv)
    }

    /// `V_⊕^←(E)` for side `+1` or `V_⊖^←(E)` for side `-1`: the largest
    /// `a ≥ 0` with `V(side * a) ≤ E`.
    pub fn inverse_branch(&self, side: f64, e: f64) -> Result<f64> {
        invert_increasing(|a| self.eval(side * a), e)
    }

    /// `|{V ≤ E}|`.
    pub fn sublevel_measure(&self, e: f64) -> Result<f64> {
        if !(e > 0.0) {
            return domain(format!("sublevel energy must be positive, got {e}"));
        }
        Ok(self.inverse_branch(1.0, e)? + self.inverse_branch(-1.0, e)?)
    }

    /// `U(t) = |{|x| V(x)^{1/2} ≤ t}|`.
    pub fn u_function(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("U requires t >= 0, got {t}"));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let wp = invert_increasing(|a| a * self.eval(a).sqrt(), t)?;
        let wm = invert_increasing(|a| a * self.eval(-a).sqrt(), t)?;
        Ok(wp + wm)
    }
}

#[inline]
fn power_pair(a: f64, d: f64) -> (f64, f64) {
    if d == 2.0 {
        (a * a, 2.0 * a)
    } else if d == 1.0 {
        (a, 1.0)
    } else if d == 4.0 {
        let a2 = a * a;
        (a2 * a2, 4.0 * a2 * a)
    } else {
        let v = a.powf(d);
        (v, d * v / a)
    }
}

impl Profile for Potential {
    fn value(&self, x: f64) -> f64 {
        self.eval(x)
    }
    fn slope(&self, x: f64) -> f64 {
        self.eval_deriv(x)
    }
}

/// Inverts a strictly increasing `f: [0, ∞) → [0, ∞)` with `f(0) = 0` by
/// bisection after a doubling bracket.
pub(crate) fn invert_increasing(f: impl Fn(f64) -> f64, target: f64) -> Result<f64> {
    if target <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    let mut lo = 0.0;
    let mut guard = 0;
    while f(hi) < target {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 2000 || !hi.is_finite() {
            return Err(Error::Range(format!("no bracket for level {target}")));
        }
    }
    if lo == 0.0 {
        while f(hi * 0.5) >= target && hi > 1e-300 {
            hi *= 0.5;
        }
        lo = hi * 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sampling grid for `classify`.
#[derive(Clone, Debug)]
pub struct ClassifyGrid {
    /// Log-spaced `|x|` samples (positive).
    pub abs_x: Vec<f64>,
    /// Hölder increments `h` (both signs).
    pub h: Vec<f64>,
    /// Every `holder_stride`-th grid point is used for the Hölder fit.
    pub holder_stride: usize,
}

impl ClassifyGrid {
    pub fn log_spaced(lo: f64, hi: f64, per_decade: usize) -> Self {
        let decades = (hi / lo).log10();
        let n = (decades * per_decade as f64).round() as usize + 1;
        let abs_x = (0..n).map(|i| lo * 10f64.powf(decades * i as f64 / (n - 1).max(1) as f64)).collect();
        let mut h = Vec::new();
        for k in 1..=20 {
            let v = 2f64.powi(-k);
            h.push(v);
            h.push(-v);
        }
        Self { abs_x, h, holder_stride: 10 }
    }
}

impl Default for ClassifyGrid {
    fn default() -> Self {
        Self::log_spaced(1e-4, 1e4, 200)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub kappa_measured: f64,
    pub theta_measured: f64,
    #[serde(rename = "D_measured")]
    pub d_measured: f64,
    pub in_p1: bool,
    pub in_p1_theta: bool,
    /// inf and sup of `x V'(x) / V(x)` over both half-lines.
    pub log_slope_min: f64,
    pub log_slope_max: f64,
    /// sup of `max(V(-x)/V(x), V(x)/V(-x))`.
    pub parity_ratio: f64,
    /// sup of `|V'(e^h x) - V'(x)| / (|V'(x)| |h|^θ)` at the fitted θ.
    pub holder_constant: f64,
}

/// Measures the class constants of `v` on `grid`.
pub fn classify<P: Profile + ?Sized>(v: &P, grid: &ClassifyGrid) -> Result<ClassificationReport> {
    if grid.abs_x.len() < 2 {
        return Err(Error::Config("classification grid needs at least two points per half-line".into()));
    }
    let mut smin = f64::INFINITY;
    let mut smax = 0.0f64;
    let mut parity = 1.0f64;
    let mut finite = true;
    for side in [1.0, -1.0] {
        let mut prev = 0.0;
        for &a in &grid.abs_x {
            let x = side * a;
            let val = v.value(x);
            if !(val > prev) && val.is_finite() {
                return domain(format!("potential not strictly monotone near x = {x}"));
            }
            prev = val;
            let ratio = x * v.slope(x) / val;
            if !ratio.is_finite() || ratio <= 0.0 {
                finite = false;
                continue;
            }
            smin = smin.min(ratio);
            smax = smax.max(ratio);
        }
    }
    for &a in &grid.abs_x {
        let (p, m) = (v.value(a), v.value(-a));
        let q = (p / m).max(m / p);
        if q.is_finite() {
            parity = parity.max(q);
        } else {
            finite = false;
        }
    }
    let kappa = if finite { smax.max(1.0 / smin).max(parity).max(1.0) } else { f64::INFINITY };

    // Hölder exponent: per-point least-squares slope, worst case over points.
    let mut theta = 1.0f64;
    let mut samples: Vec<(f64, f64, f64)> = Vec::new();
    for side in [1.0, -1.0] {
        for &a in grid.abs_x.iter().step_by(grid.holder_stride.max(1)) {
            let x = side * a;
            let d0 = v.slope(x);
            if !d0.is_finite() || d0 == 0.0 {
                continue;
            }
            let mut pts = Vec::new();
            for &h in &grid.h {
                let d1 = v.slope(x * h.exp());
                let q = (d1 - d0).abs() / d0.abs();
                if q.is_finite() && q > 1e-12 {
                    pts.push((h.abs().ln(), q.ln()));
                }
                samples.push((x, h, q));
            }
            if pts.len() >= 4 {
                let slope = ls_slope(&pts);
                if slope.is_finite() {
                    theta = theta.min(slope);
                }
            }
        }
    }
    let theta = theta.clamp(0.0, 1.0);
    let mut holder = 0.0f64;
    for &(_, h, q) in &samples {
        if q.is_finite() {
            holder = holder.max(q / h.abs().powf(theta.max(1e-12)));
        } else {
            holder = f64::INFINITY;
        }
    }
    let in_p1 = kappa.is_finite();
    let in_p1_theta = in_p1 && theta > 0.0 && holder.is_finite();
    Ok(ClassificationReport {
        kappa_measured: kappa,
        theta_measured: theta,
        d_measured: if finite { smax } else { f64::INFINITY },
        in_p1,
        in_p1_theta,
        log_slope_min: smin,
        log_slope_max: smax,
        parity_ratio: parity,
        holder_constant: holder,
    })
}

pub(crate) fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// The five potentials used by the spectral property suites.
pub fn suite() -> Vec<Potential> {
    vec![
        Potential::power(2.0),
        Potential::power(1.0),
        Potential::power(4.0),
        Potential::two_power(1.0, 4.0),
        Potential::log_modulated(3.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    struct ExpSquare;
    impl Profile for ExpSquare {
        fn value(&self, x: f64) -> f64 {
            (x * x).exp() - 1.0
        }
        fn slope(&self, x: f64) -> f64 {
            2.0 * x * (x * x).exp()
        }
    }

    #[test]
    fn quadratic_kappa_is_two() {
        let r = classify(&Potential::power(2.0), &ClassifyGrid::default()).unwrap();
        assert_relative_eq!(r.kappa_measured, 2.0, epsilon = 1e-12);
        assert!(r.in_p1 && r.in_p1_theta);
        assert_relative_eq!(r.d_measured, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn two_power_ratio_spans_exponents() {
        let v = Potential::two_power(1.0, 4.0);
        let r = classify(&v, &ClassifyGrid::default()).unwrap();
        assert!(r.in_p1);
        assert!(r.log_slope_min >= 1.0 - 1e-12 && r.log_slope_max <= 4.0 + 1e-12);
        assert!((r.kappa_measured - 4.0).abs() < 1e-3);
        // dense evaluation of the ratio stays inside [1, 4]
        for i in 0..10_000 {
            let x = 1e-3 * 1.002f64.powi(i);
            let q = x * v.eval_deriv(x) / v.eval(x);
            assert!((1.0..=4.0 + 1e-12).contains(&q));
        }
    }

    #[test]
    fn exponential_is_not_doubling() {
        let r = classify(&ExpSquare, &ClassifyGrid::default()).unwrap();
        assert!(!r.in_p1);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let g = ClassifyGrid { abs_x: vec![1.0], h: vec![0.5], holder_stride: 1 };
        assert!(matches!(classify(&Potential::power(2.0), &g), Err(Error::Config(_))));
    }

    #[test]
    fn tabulated_rejects_non_monotone() {
        let s = vec![[-2.0, 4.0], [-1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [2.0, 0.5]];
        assert!(matches!(Potential::tabulated(s), Err(Error::Domain(_))));
    }

    #[test]
    fn sublevel_examples() {
        assert_relative_eq!(Potential::power(2.0).sublevel_measure(4.0).unwrap(), 4.0, max_relative = 1e-10);
        assert_relative_eq!(Potential::power(1.0).sublevel_measure(1.0).unwrap(), 2.0, max_relative = 1e-10);
        assert_relative_eq!(Potential::power(4.0).sublevel_measure(16.0).unwrap(), 4.0, max_relative = 1e-10);
        assert!(Potential::power(2.0).sublevel_measure(0.0).is_err());
    }

    #[test]
    fn u_function_examples() {
        let q = Potential::power(2.0);
        assert_relative_eq!(q.u_function(4.0).unwrap(), 4.0, max_relative = 1e-10);
        let l = Potential::power(1.0);
        assert_relative_eq!(l.u_function(1.0).unwrap(), 2.0, max_relative = 1e-10);
        assert_eq!(l.u_function(0.0).unwrap(), 0.0);
        assert!(q.u_function(-1.0).is_err());
        // closed forms 2 sqrt(t) and 2 t^{2/3}
        for t in [0.01, 0.3, 7.0, 123.0] {
            assert_relative_eq!(q.u_function(t).unwrap(), 2.0 * t.sqrt(), max_relative = 1e-10);
            assert_relative_eq!(l.u_function(t).unwrap(), 2.0 * t.powf(2.0 / 3.0), max_relative = 1e-10);
        }
    }

    #[test]
    fn scale_and_rescale_examples() {
        let q = Potential::power(2.0);
        assert_eq!(q.scale(4.0).unwrap().eval(1.0), 4.0);
        assert_eq!(q.rescale(2.0).unwrap().eval(1.0), 16.0);
        assert!(q.scale(0.0).is_err());
        assert!(q.rescale(-1.0).is_err());
    }

    #[test]
    fn classification_invariant_under_scaling() {
        let g = ClassifyGrid::default();
        for v in suite() {
            let base = classify(&v, &g).unwrap();
            for tau in [0.1, 10.0] {
                let s = classify(&v.scale(tau).unwrap(), &g).unwrap();
                assert!((s.kappa_measured - base.kappa_measured).abs() < 1e-12);
                assert!((s.theta_measured - base.theta_measured).abs() < 1e-12);
                assert_eq!((s.in_p1, s.in_p1_theta), (base.in_p1, base.in_p1_theta));
            }
        }
        for d in [1.0, 2.0, 3.5] {
            let v = Potential::power(d);
            let base = classify(&v, &g).unwrap();
            let s = classify(&v.rescale(3.0).unwrap(), &g).unwrap();
            assert!((s.kappa_measured - base.kappa_measured).abs() < 1e-12);
            assert!((s.theta_measured - base.theta_measured).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip() {
        let v = Potential::from_json(r#"{"family":"two_power","params":{"d":1,"D":4}}"#).unwrap();
        assert_eq!(v.eval(2.0), 18.0);
        let s = serde_json::to_string(v.spec()).unwrap();
        assert_eq!(serde_json::from_str::<PotentialSpec>(&s).unwrap(), *v.spec());
        assert!(Potential::from_json(r#"{"family":"nope","params":{}}"#).is_err());
        assert!(Potential::from_json(r#"{"family":"power","params":{"d":-1}}"#).is_err());
    }

    #[test]
    fn tabulated_from_csv_matches_power_law() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let mut body = String::from("x,V\n");
        for i in -40..=40 {
            let x = i as f64 * 0.25;
            body.push_str(&format!("{x},{}\n", x * x));
        }
        std::fs::write(&path, body).unwrap();
        let v = Potential::new(PotentialSpec::Tabulated { samples: vec![], csv: Some(path) }).unwrap();
        for x in [0.1, 0.8, 3.3, -2.7, 20.0] {
            assert_relative_eq!(v.eval(x), x * x, max_relative = 1e-10);
            assert_relative_eq!(v.eval_deriv(x), 2.0 * x, max_relative = 1e-8);
        }
        assert!(v.is_even());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let pots = vec![
            Potential::power(2.5),
            Potential::two_power(0.5, 3.0),
            Potential::reciprocal_two_power(1.0, 3.0),
            Potential::log_modulated(3.0),
        ];
        for v in pots {
            for x in [-3.1f64, -0.4, 0.2, 1.7, 9.0] {
                let h = 1e-6 * x.abs();
                let fd = (v.eval(x + h) - v.eval(x - h)) / (2.0 * h);
                assert_relative_eq!(v.eval_deriv(x), fd, max_relative = 1e-6);
            }
        }
    }

    proptest! {
        #[test]
        fn doubling_inequality(d in 0.5f64..5.0, big in 0.5f64..5.0, x in 1e-3f64..1e3, lam_pow in 1u32..4) {
            let v = Potential::two_power(d.min(big), d.max(big));
            let r = classify(&v, &ClassifyGrid::log_spaced(1e-4, 1e4, 20)).unwrap();
            let k = r.kappa_measured;
            let lam = 2f64.powi(lam_pow as i32);
            let ratio = v.eval(lam * x) / v.eval(x);
            prop_assert!(ratio >= lam.powf(1.0 / k) * (1.0 - 1e-12));
            prop_assert!(ratio <= lam.powf(k) * (1.0 + 1e-12));
        }

        #[test]
        fn sublevel_doubling(c in 0.01f64..0.99, e in 1e-2f64..1e3) {
            let v = Potential::two_power(1.0, 4.0);
            let (d1, d2) = (1.0, 4.0);
            let big = v.sublevel_measure(e).unwrap();
            let small = v.sublevel_measure(c * e).unwrap();
            prop_assert!(small >= c.powf(1.0 / d1) * big * (1.0 - 1e-8));
            prop_assert!(small <= c.powf(1.0 / d2) * big * (1.0 + 1e-8));
        }

        #[test]
        fn u_identities_window(lt in -20i32..20) {
            // for |x|^D the first ratio is exactly 2^{1 + D/2}; C = 9 covers κ ≤ 4
            for v in suite() {
                let t = 2f64.powi(lt);
                let u = v.u_function(t).unwrap();
                let q1 = u * v.eval(u).sqrt() / t;
                let q2 = v.u_function(t * v.eval(t).sqrt()).unwrap() / t;
                prop_assert!((1.0 / 9.0..=9.0).contains(&q1), "{} {}", v.label(), q1);
                prop_assert!((1.0 / 9.0..=9.0).contains(&q2), "{} {}", v.label(), q2);
            }
        }
    }
}
