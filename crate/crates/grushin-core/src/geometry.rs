//! Explicit control-distance surrogate, ball volumes and the weights `ϖ_r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::{classify, ClassifyGrid, Potential};
use crate::quad::{adaptive_gk, adaptive_gk_semi_infinite};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// `U` sampled in log-log coordinates for fast repeated evaluation.
#[derive(Clone, Debug)]
struct UTable {
    lt: Vec<f64>,
    lu: Vec<f64>,
}

impl UTable {
    const PER_DECADE: f64 = 40.0;

    fn new(v: &Potential) -> Result<Self> {
        let (lo, hi) = (-14.0f64, 14.0f64);
        let n = ((hi - lo) * Self::PER_DECADE) as usize + 1;
        let mut lt = Vec::with_capacity(n);
        let mut lu = Vec::with_capacity(n);
        for k in 0..n {
            let t = 10f64.powf(lo + k as f64 / Self::PER_DECADE);
            lt.push(t.ln());
            lu.push(v.u_function(t)?.ln());
        }
        Ok(Self { lt, lu })
    }

    fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
        let n = xs.len();
        let i = xs.partition_point(|&t| t <= x).clamp(1, n - 1) - 1;
        let w = (x - xs[i]) / (xs[i + 1] - xs[i]);
        ys[i] + w * (ys[i + 1] - ys[i])
    }

    fn u(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        Self::interp(&self.lt, &self.lu, t.ln()).exp()
    }

    fn u_inv(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        Self::interp(&self.lu, &self.lt, s.ln()).exp()
    }
}

/// Potential together with its doubling order `D` and `Q = 2 + D/2`.
#[derive(Clone, Debug)]
pub struct GeometryContext {
    pub potential: Potential,
    pub d: f64,
    pub q: f64,
    table: UTable,
}

impl GeometryContext {
    /// Uses `D_measured` from `classify` on the default grid.
    pub fn new(v: &Potential) -> Result<Self> {
        let rep = classify(v, &ClassifyGrid::default())?;
        if !rep.in_p1 {
            return Err(Error::Classification(format!("{} is not doubling on the test grid", v.label())));
        }
        Self::with_degree(v, rep.d_measured)
    }

    pub fn with_degree(v: &Potential, d: f64) -> Result<Self> {
        if !(d > 0.0) {
            return crate::error::domain("doubling order must be positive");
        }
        Ok(Self { potential: v.clone(), d, q: 2.0 + d / 2.0, table: UTable::new(v)? })
    }
}

/// `|x - x'| + min(|y - y'| / max(V(x), V(x'))^{1/2}, U(|y - y'|))`.
pub fn dist_surrogate(ctx: &GeometryContext, z: PlanePoint, zp: PlanePoint) -> f64 {
    let dy = (z.y - zp.y).abs();
    let dx = (z.x - zp.x).abs();
    if dy == 0.0 {
        return dx;
    }
    let m = ctx.potential.eval(z.x).max(ctx.potential.eval(zp.x)).sqrt();
    let first = if m == 0.0 { f64::INFINITY } else { dy / m };
    let u = ctx.potential.u_function(dy).unwrap_or(f64::INFINITY);
    dx + first.min(u)
}

/// `r² max(V(r), V(x))^{1/2}`.
pub fn volume(ctx: &GeometryContext, z: PlanePoint, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    r * r * ctx.potential.eval(r).max(ctx.potential.eval(z.x)).sqrt()
}

/// `ϖ_r(z, z') = |y - y'| / (r max(V(r), V(x'))^{1/2})`.
pub fn weight(ctx: &GeometryContext, r: f64, z: PlanePoint, zp: PlanePoint) -> Result<f64> {
    if !(r > 0.0) {
        return crate::error::domain("weight needs r > 0");
    }
    Ok((z.y - zp.y).abs() / (r * ctx.potential.eval(r).max(ctx.potential.eval(zp.x)).sqrt()))
}

/// Tolerances for `weight_integral_check`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WeightQuadrature {
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for WeightQuadrature {
    fn default() -> Self {
        Self { rel_tol: 1e-6, max_panels: 400 }
    }
}

/// Smallest admissible `α` for a given `β`: `1 + (1 + D/2)(1 - β)`.
pub fn alpha_threshold(ctx: &GeometryContext, beta: f64) -> f64 {
    1.0 + (1.0 + ctx.d / 2.0) * (1.0 - beta)
}

/// `∫ (1 + dist(z,z')/r)^{-α} (1 + ϖ_r(z,z'))^{-β} dz / Vol(z', r)`.
pub fn weight_integral_check(
    ctx: &GeometryContext,
    zp: PlanePoint,
    r: f64,
    alpha: f64,
    beta: f64,
    quad: &WeightQuadrature,
) -> Result<f64> {
    if !(r > 0.0) {
        return crate::error::domain("weight integral needs r > 0");
    }
    if !(0.0..1.0).contains(&beta) || !(alpha > alpha_threshold(ctx, beta)) {
        return crate::error::domain(format!("(α, β) = ({alpha}, {beta}) violates β ∈ [0,1), α > 1 + (1 + D/2)(1 - β)"));
    }
    let v = &ctx.potential;
    let vxp = v.eval(zp.x);
    let m0 = v.eval(r).max(vxp).sqrt();
    let tab = &ctx.table;
    let failed = std::cell::Cell::new(false);
    let inner = |x: f64| -> f64 {
        let d = (x - zp.x).abs();
        let m = v.eval(x).max(vxp).sqrt();
        let g = |t: f64| {
            let first = if m == 0.0 { f64::INFINITY } else { t / m };
            let dist = d + first.min(tab.u(t));
            (1.0 + dist / r).powf(-alpha) * (1.0 + t / (r * m0)).powf(-beta)
        };
        // crossing t / M = U(t)
        let tc = if m == 0.0 {
            0.0
        } else {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            while hi / m < tab.u(hi) {
                hi *= 2.0;
            }
            if 1.0 / m >= tab.u(1.0) {
                hi = 1.0;
                while hi / m >= tab.u(hi) && hi > 1e-300 {
                    hi *= 0.5;
                }
                lo = hi;
                hi *= 2.0;
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if mid / m < tab.u(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let scale = tc.max(tab.u_inv(r + d)).max(r * m0);
        let (a, ea) = if tc > 0.0 { adaptive_gk(g, 0.0, tc, 0.0, quad.rel_tol, quad.max_panels) } else { (0.0, 0.0) };
        let (b, eb) = adaptive_gk_semi_infinite(g, tc, scale, 0.0, quad.rel_tol, quad.max_panels);
        if ea + eb > 1e-3 * (a + b) {
            failed.set(true);
        }
        2.0 * (a + b)
    };
    let lo = zp.x.min(0.0);
    let hi = zp.x.max(0.0);
    let s = r + zp.x.abs();
    let mut total = 0.0;
    let mut err = 0.0;
    let (a, ea) = adaptive_gk_semi_infinite(|u| inner(lo - u), 0.0, s, 0.0, quad.rel_tol, quad.max_panels);
    total += a;
    err += ea;
    if hi > lo {
        let (b, eb) = adaptive_gk(inner, lo, hi, 0.0, quad.rel_tol, quad.max_panels);
        total += b;
        err += eb;
    }
    let (c, ec) = adaptive_gk_semi_infinite(|u| inner(hi + u), 0.0, s, 0.0, quad.rel_tol, quad.max_panels);
    total += c;
    err += ec;
    if failed.get() || err > 1e-3 * total || !total.is_finite() {
        return Err(Error::Truncation(format!("weight integral did not converge (estimate {total:e}, error {err:e})")));
    }
    Ok(total / volume(ctx, zp, r))
}

/// `sup dist(z, z'') / (dist(z, z') + dist(z', z''))` over random triples.
pub fn quasi_triangle_constant(ctx: &GeometryContext, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| {
        let sx: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let sy: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        PlanePoint::new(sx * 10f64.powf(rng.gen_range(-2.0..1.0)), sy * 10f64.powf(rng.gen_range(-2.0..2.0)))
    };
    let mut best = 0.0f64;
    for _ in 0..samples {
        let (a, b, c) = (point(&mut rng), point(&mut rng), point(&mut rng));
        let lhs = dist_surrogate(ctx, a, c);
        let rhs = dist_surrogate(ctx, a, b) + dist_surrogate(ctx, b, c);
        if rhs > 0.0 {
            best = best.max(lhs / rhs);
        }
    }
    best
}

/// `sup Vol(z, λr) / (λ^Q Vol(z, r))` over random `(z, r)`.
pub fn volume_doubling_constant(ctx: &GeometryContext, lambdas: &[f64], samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let z = PlanePoint::new(rng.gen_range(-1.0..1.0) * 10f64.powf(rng.gen_range(-3.0..2.0)), 0.0);
        let r = 10f64.powf(rng.gen_range(-3.0..2.0));
        for &l in lambdas {
            best = best.max(volume(ctx, z, l * r) / (l.powf(ctx.q) * volume(ctx, z, r)));
        }
    }
    best
}

/// Half-height of `{z' : dist(z, z') ≤ r, x' = x}` divided by the half-height
/// `r max_{[x-r, x+r]} V^{1/2}` of the rectangle `R_V(z, r)`.
pub fn rectangle_ratio(ctx: &GeometryContext, z: PlanePoint, r: f64) -> f64 {
    let v = &ctx.potential;
    // min(t/√V(x), U(t)) ≤ r  iff  t ≤ r√V(x) or U(t) ≤ r
    let by_first = r * v.eval(z.x).sqrt();
    let by_u = crate::potentials::invert_increasing(|t| v.u_function(t).unwrap_or(f64::INFINITY), r).unwrap_or(0.0);
    let half = by_first.max(by_u);
    let mut vmax = 0.0f64;
    for k in 0..=400 {
        let x = z.x - r + 2.0 * r * k as f64 / 400.0;
        vmax = vmax.max(v.eval(x));
    }
    half / (r * vmax.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn quad_ctx() -> GeometryContext {
        GeometryContext::new(&Potential::power(2.0)).unwrap()
    }

    #[test]
    fn context_uses_measured_degree() {
        let c = quad_ctx();
        assert_relative_eq!(c.d, 2.0, max_relative = 1e-9);
        assert_relative_eq!(c.q, 3.0, max_relative = 1e-9);
    }

    #[test]
    fn distance_examples() {
        let c = quad_ctx();
        let z = PlanePoint::new(0.3, -1.2);
        assert_eq!(dist_surrogate(&c, z, z), 0.0);
        assert_relative_eq!(dist_surrogate(&c, PlanePoint::new(0.0, 0.0), PlanePoint::new(0.0, 1.0)), 2.0, max_relative = 1e-9);
    }

    #[test]
    fn volume_and_weight_examples() {
        let c = quad_ctx();
        assert_eq!(volume(&c, PlanePoint::new(3.0, 0.0), 0.0), 0.0);
        assert_relative_eq!(volume(&c, PlanePoint::new(0.0, 0.0), 2.0), 8.0, max_relative = 1e-12);
        let zp = PlanePoint::new(0.0, 0.0);
        assert_eq!(weight(&c, 1.0, PlanePoint::new(4.0, 0.0), zp).unwrap(), 0.0);
        assert_relative_eq!(weight(&c, 1.0, PlanePoint::new(5.0, 3.0), zp).unwrap(), 3.0, max_relative = 1e-12);
        assert!(weight(&c, 0.0, zp, zp).is_err());
    }

    #[test]
    fn table_matches_direct_u() {
        let c = GeometryContext::new(&Potential::two_power(1.0, 4.0)).unwrap();
        for t in [1e-6, 0.01, 0.7, 3.0, 250.0, 1e5] {
            let direct = c.potential.u_function(t).unwrap();
            assert_relative_eq!(c.table.u(t), direct, max_relative = 1e-3);
            assert_relative_eq!(c.table.u_inv(direct), t, max_relative = 1e-3);
        }
    }

    #[test]
    fn weight_integral_constraints_and_monotonicity() {
        let c = quad_ctx();
        let zp = PlanePoint::new(0.5, 0.0);
        let q = WeightQuadrature::default();
        assert!(weight_integral_check(&c, zp, 1.0, 2.0, 0.0, &q).is_err());
        assert!(weight_integral_check(&c, zp, 1.0, 5.0, 1.0, &q).is_err());
        let mut last = f64::INFINITY;
        for a in [4.0, 5.0, 7.0] {
            let v = weight_integral_check(&c, zp, 1.0, a, 0.5, &q).unwrap();
            assert!(v.is_finite() && v > 0.0);
            assert!(v <= last);
            last = v;
        }
        // β = 0 with α = Q + 1
        let v = weight_integral_check(&c, zp, 1.0, c.q + 1.0, 0.0, &q).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn weight_integral_stable_in_r() {
        let c = quad_ctx();
        let q = WeightQuadrature::default();
        let mut vals = vec![];
        for r in [0.25, 1.0, 4.0] {
            for zp in [PlanePoint::new(0.0, 0.0), PlanePoint::new(2.0, 1.0)] {
                vals.push(weight_integral_check(&c, zp, r, 4.0, 0.5, &q).unwrap());
            }
        }
        let (lo, hi) = vals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
        assert!(hi / lo < 10.0, "{vals:?}");
    }

    #[test]
    fn measured_constants_are_moderate() {
        for v in crate::potentials::suite() {
            let c = GeometryContext::new(&v).unwrap();
            let k = quasi_triangle_constant(&c, 2000, 7);
            assert!(k.is_finite() && k < 8.0, "{} {k}", v.label());
            let dbl = volume_doubling_constant(&c, &[2.0, 8.0], 2000, 7);
            assert!(dbl <= 4.0, "{} {dbl}", v.label());
        }
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(x1 in -5.0f64..5.0, y1 in -5.0f64..5.0, x2 in -5.0f64..5.0, y2 in -5.0f64..5.0) {
            let c = quad_ctx();
            let (a, b) = (PlanePoint::new(x1, y1), PlanePoint::new(x2, y2));
            prop_assert_eq!(dist_surrogate(&c, a, b), dist_surrogate(&c, b, a));
        }

        #[test]
        fn weight_is_translation_invariant_in_y(x in -3.0f64..3.0, y in -3.0f64..3.0, s in -10.0f64..10.0) {
            let c = quad_ctx();
            let (z, zp) = (PlanePoint::new(x, y), PlanePoint::new(0.5, -1.0));
            let w0 = weight(&c, 0.7, z, zp).unwrap();
            let w1 = weight(&c, 0.7, PlanePoint::new(x, y + s), PlanePoint::new(0.5, -1.0 + s)).unwrap();
            prop_assert!((w0 - w1).abs() <= 1e-12 * (1.0 + w0));
        }

        #[test]
        fn balls_are_comparable_to_rectangles(x in -4.0f64..4.0, lr in -2.0f64..1.5) {
            let c = quad_ctx();
            let q = rectangle_ratio(&c, PlanePoint::new(x, 0.0), 10f64.powf(lr));
            prop_assert!(q > 0.2 && q <= 1.0 + 1e-9, "{}", q);
        }
    }
}
