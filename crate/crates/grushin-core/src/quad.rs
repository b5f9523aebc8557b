//! Quadrature rules.

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        xs[i] = -z;
        xs[n - 1 - i] = z;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

/// Gauss–Lobatto nodes and weights on `[-1, 1]` (`n ≥ 2`, endpoints included).
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let m = n - 1;
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=m {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        if m == 0 {
            (1.0, 0.0)
        } else {
            (p1, p0)
        }
    };
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut z = -(std::f64::consts::PI * i as f64 / m as f64).cos();
        if i > 0 && i < m {
            // Newton on (1 - z²) P_m'(z) / m = P_{m-1} - z P_m, whose
            // derivative is -(m + 1) P_m by Legendre's equation
            for _ in 0..100 {
                let (pm, pm1) = legendre(z);
                let f = pm1 - z * pm;
                let df = -(m as f64 + 1.0) * pm;
                let dz = f / df;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
        }
        let (pm, _) = legendre(z);
        xs[i] = z;
        ws[i] = 2.0 / ((m * n) as f64 * pm * pm);
    }
    (xs, ws)
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let dx = h * GK_X[i];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod (7, 15) quadrature on `[a, b]`.
/// Returns the estimate and its error bound.
pub fn adaptive_gk(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64, max_panels: usize) -> (f64, f64) {
    let mut panels = vec![{
        let (v, e) = gk15(&mut f, a, b);
        (a, b, v, e)
    }];
    loop {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || panels.len() >= max_panels {
            return (total, err);
        }
        let (i, _) = panels.iter().enumerate().fold((0, -1.0), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
        let (pa, pb, _, _) = panels.swap_remove(i);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}

/// `∫_a^∞ f` through `t = a + s·u/(1-u)`.
pub fn adaptive_gk_semi_infinite(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    s: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> (f64, f64) {
    adaptive_gk(
        |u| {
            if u >= 1.0 {
                return 0.0;
            }
            let q = 1.0 - u;
            let v = f(a + s * u / q) * s / (q * q);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
        max_panels,
    )
}

/// Composite Simpson weights on a strictly increasing grid with an even
/// number of intervals (non-uniform panels use the three-point rule exact for
/// quadratics).
pub fn simpson_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && (n - 1) % 2 == 0, "Simpson needs an even number of intervals");
    let mut w = vec![0.0; n];
    let mut i = 0;
    while i + 2 < n {
        let h0 = x[i + 1] - x[i];
        let h1 = x[i + 2] - x[i + 1];
        let s = h0 + h1;
        w[i] += s / 6.0 * (2.0 - h1 / h0);
        w[i + 1] += s / 6.0 * (s * s / (h0 * h1));
        w[i + 2] += s / 6.0 * (2.0 - h0 / h1);
        i += 2;
    }
    w
}

/// Trapezoid weights on a uniform grid of `n` points with spacing `h`.
pub fn trapezoid_uniform(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    if n > 0 {
        w[0] *= 0.5;
        w[n - 1] *= 0.5;
    }
    w
}

/// Pairwise (cascade) summation, deterministic and accurate.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1, 2, 5, 8, 16, 33] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn gauss_lobatto_exact_for_polynomials() {
        for n in [2, 3, 5, 8, 12] {
            let (x, w) = gauss_lobatto(n);
            assert_eq!(x[0], -1.0);
            assert_eq!(x[n - 1], 1.0);
            for deg in 0..(2 * n - 2) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg} {q} {exact}");
            }
        }
    }

    #[test]
    fn simpson_nonuniform_exact_for_cubics_on_symmetric_panels() {
        let x = vec![0.0, 0.1, 0.3, 0.5, 0.6, 1.0, 1.4];
        let w = simpson_weights(&x);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * (x * x - 3.0 * x + 1.0)).sum();
        let exact = 1.4f64.powi(3) / 3.0 - 1.5 * 1.4 * 1.4 + 1.4;
        assert!((q - exact).abs() < 1e-13);
    }

    #[test]
    fn adaptive_gk_handles_smooth_and_algebraic_tails() {
        let (v, _) = adaptive_gk(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-13, 1e-13, 200);
        assert!((v - 2.0).abs() < 1e-12);
        let (v, _) = adaptive_gk(|x| x.sqrt(), 0.0, 1.0, 1e-12, 1e-12, 500);
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
        let (v, _) = adaptive_gk_semi_infinite(|x| (1.0 + x).powf(-1.5), 0.0, 1.0, 1e-10, 1e-10, 1000);
        assert!((v - 2.0).abs() < 1e-7, "{v}");
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
    }
}
