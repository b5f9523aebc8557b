//! Dormand–Prince 5(4) integrator with continuous extension.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest allowed `|h|`; `INFINITY` for none.
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-11, atol: 1e-12, h_max: f64::INFINITY, max_steps: 5_000_000 }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn comb<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..N {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `y' = f(x, y)` from `x0` to `x1`, reporting the state at each
/// point of `outputs` (ordered from `x0` towards `x1`) through `out`.
pub fn integrate<const N: usize, F, O>(
    mut f: F,
    x0: f64,
    y0: [f64; N],
    x1: f64,
    opts: &OdeOptions,
    outputs: &[f64],
    mut out: O,
) -> Result<([f64; N], OdeStats)>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
    O: FnMut(usize, &[f64; N]),
{
    let dir = if x1 >= x0 { 1.0 } else { -1.0 };
    let span = (x1 - x0).abs();
    let mut stats = OdeStats::default();
    let mut next_out = 0usize;
    // outputs sitting exactly at the start
    while next_out < outputs.len() && (outputs[next_out] - x0) * dir <= 0.0 {
        out(next_out, &y0);
        next_out += 1;
    }
    if span == 0.0 {
        return Ok((y0, stats));
    }
    let mut x = x0;
    let mut y = y0;
    let mut k1 = f(x, &y);
    // initial step from the usual heuristic
    let sc = |yy: &[f64; N], i: usize| opts.atol + opts.rtol * yy[i].abs();
    let d0 = (0..N).map(|i| (y[i] / sc(&y, i)).powi(2)).sum::<f64>().sqrt() / (N as f64).sqrt();
    let d1 = (0..N).map(|i| (k1[i] / sc(&y, i)).powi(2)).sum::<f64>().sqrt() / (N as f64).sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(span).min(opts.h_max);
    let mut factor_old: f64 = 1e-4;
    let mut reject_last = false;

    loop {
        if stats.accepted + stats.rejected > opts.max_steps {
            return Err(Error::Numerical(format!("step budget exhausted at x = {x}")));
        }
        let remaining = (x1 - x) * dir;
        if remaining <= 0.0 {
            break;
        }
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
        }
        if h < 1e-14 * (1.0 + x.abs()) {
            return Err(Error::Numerical(format!("step size underflow at x = {x}")));
        }
        let hs = h * dir;
        let k2 = f(x + C2 * hs, &comb(&y, hs, &[(A21, &k1)]));
        let k3 = f(x + C3 * hs, &comb(&y, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(x + C4 * hs, &comb(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(x + C5 * hs, &comb(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(x + hs, &comb(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
        let y_new = comb(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(x + hs, &y_new);
        let mut err = 0.0;
        for i in 0..N {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let s = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / s) * (e / s);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h *= 0.25;
            stats.rejected += 1;
            reject_last = true;
            continue;
        }
        if err <= 1.0 {
            stats.accepted += 1;
            let x_new = if h == remaining { x1 } else { x + hs };
            // continuous extension on [x, x_new]
            if next_out < outputs.len() && (outputs[next_out] - x_new) * dir <= 0.0 {
                let mut r2 = [0.0; N];
                let mut r3 = [0.0; N];
                let mut r4 = [0.0; N];
                let mut r5 = [0.0; N];
                for i in 0..N {
                    r2[i] = y_new[i] - y[i];
                    r3[i] = hs * k1[i] - r2[i];
                    r4[i] = r2[i] - hs * k7[i] - r3[i];
                    r5[i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                while next_out < outputs.len() && (outputs[next_out] - x_new) * dir <= 0.0 {
                    let s = (outputs[next_out] - x) / hs;
                    let s1 = 1.0 - s;
                    let mut yi = [0.0; N];
                    for i in 0..N {
                        yi[i] = y[i] + s * (r2[i] + s1 * (r3[i] + s * (r4[i] + s1 * r5[i])));
                    }
                    out(next_out, &yi);
                    next_out += 1;
                }
            }
            x = x_new;
            y = y_new;
            k1 = k7;
            // Lund stabilisation (Hairer's beta = 0.04)
            let fac11 = err.powf(0.2 - 0.04 * 0.75);
            let mut fac = fac11 / factor_old.powf(0.04);
            fac = (fac / 0.9).clamp(0.1, 5.0);
            let mut h_new = h / fac;
            factor_old = err.max(1e-4);
            if reject_last {
                h_new = h_new.min(h);
            }
            reject_last = false;
            h = h_new.min(opts.h_max);
        } else {
            stats.rejected += 1;
            let fac = (err.powf(0.2) / 0.9).min(10.0);
            h /= fac;
            reject_last = true;
        }
    }
    while next_out < outputs.len() {
        out(next_out, &y);
        next_out += 1;
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let (y, _) =
            integrate(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], 2.0, &OdeOptions::default(), &[], |_, _| {}).unwrap();
        assert!((y[0] - 2f64.exp()).abs() < 1e-9 * 2f64.exp());
    }

    #[test]
    fn harmonic_backward_with_dense_output() {
        let xs: Vec<f64> = (0..=100).map(|i| 10.0 - 0.1 * i as f64).collect();
        let mut got = vec![[0.0; 2]; xs.len()];
        let opts = OdeOptions { rtol: 1e-11, atol: 1e-13, ..Default::default() };
        let y0 = [10f64.sin(), 10f64.cos()];
        integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 10.0, y0, 0.0, &opts, &xs, |i, y| got[i] = *y).unwrap();
        for (x, y) in xs.iter().zip(&got) {
            assert!((y[0] - x.sin()).abs() < 1e-8, "{x} {}", y[0] - x.sin());
            assert!((y[1] - x.cos()).abs() < 1e-8);
        }
    }
}
