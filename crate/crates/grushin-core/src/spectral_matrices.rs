//! Matrices of `V` and of the scaling derivative in the eigenbasis of `τV`.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sturm::{self, EigenSystem, SolverOptions};

/// Dense row-major square matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Entry `(i, j)`, 0-based.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Entrywise (Schur) product with a mask.
    pub fn schur(&self, mask: &CutoffMask) -> Self {
        assert_eq!(self.n, mask.n);
        let data = self.data.iter().zip(&mask.data).map(|(a, &m)| if m == 1 { *a } else { 0.0 }).collect();
        Self { n: self.n, data }
    }

    pub fn abs(&self) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| v.abs()).collect() }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Writes `(n, m, value)` rows with 1-based indices.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "n,m,value")?;
        for i in 0..self.n {
            for j in 0..self.n {
                writeln!(f, "{},{},{:.17e}", i + 1, j + 1, self.get(i, j))?;
            }
        }
        Ok(())
    }

    /// `‖M‖_{ℓ²→ℓ²}` by power iteration on `MᵀM` from the vector `(n^{-1/2})`.
    pub fn operator_norm(&self, iterations: usize) -> f64 {
        let mt = self.transpose();
        let mut v: Vec<f64> = (1..=self.n).map(|k| 1.0 / (k as f64).sqrt()).collect();
        let mut est = 0.0;
        for _ in 0..iterations {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w = mt.mul_vec(&self.mul_vec(&v));
            est = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().sqrt();
            v = w;
        }
        est
    }
}

/// `P_{nm} = ⟨τV ψ_n, ψ_m⟩`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixP {
    pub m: Mat,
    /// `max |P - Pᵀ|` before symmetrisation.
    pub asymmetry: f64,
}

/// `A_{nm} = P_{nm} / (E_n - E_m)`, zero diagonal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixA {
    pub m: Mat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    Near,
    Far,
}

/// Indicator of `m ∈ [n/T, nT]` (near) or its complement (far).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CutoffMask {
    pub t: f64,
    pub kind: MaskKind,
    pub n: usize,
    pub data: Vec<u8>,
}

impl CutoffMask {
    pub fn new(n: usize, t: f64, kind: MaskKind) -> Result<Self> {
        if !(t > 1.0) {
            return crate::error::domain("cutoff threshold must exceed 1");
        }
        let mut data = vec![0u8; n * n];
        for i in 1..=n {
            for j in 1..=n {
                let (a, b) = (i as f64, j as f64);
                let near = b >= a / t && b <= a * t;
                let on = match kind {
                    MaskKind::Near => near,
                    MaskKind::Far => !near,
                };
                data[(i - 1) * n + (j - 1)] = on as u8;
            }
        }
        Ok(Self { t, kind, n, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j] == 1
    }
}

/// Gram-type matrix `⟨f ψ_n, ψ_m⟩` with weight samples `f` on the grid.
pub fn weighted_gram(sys: &EigenSystem, f: &[f64]) -> Mat {
    let n = sys.len();
    let g = &sys.grid;
    let wf: Vec<f64> = g.weights.iter().zip(f).map(|(w, v)| w * v).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a: Vec<f64> = sys.pairs[i].psi.iter().zip(&wf).map(|(p, w)| p * w).collect();
            (0..n).map(|j| a.iter().zip(&sys.pairs[j].psi).map(|(x, y)| x * y).sum()).collect()
        })
        .collect();
    Mat { n, data: rows.concat() }
}

pub fn matrix_p(sys: &EigenSystem) -> Result<MatrixP> {
    let vals: Vec<f64> = sys.grid.nodes.iter().map(|&x| sys.scaled.eval(x)).collect();
    let raw = weighted_gram(sys, &vals);
    let n = raw.n;
    let mut asym = 0.0f64;
    let mut m = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((raw.get(i, j) - raw.get(j, i)).abs());
            m.set(i, j, 0.5 * (raw.get(i, j) + raw.get(j, i)));
        }
    }
    if asym > 1e-6 {
        return Err(Error::Numerical(format!("P asymmetry {asym:e} indicates an under-resolved grid")));
    }
    Ok(MatrixP { m, asymmetry: asym })
}

pub fn matrix_a(p: &MatrixP, e: &[f64]) -> Result<MatrixA> {
    let n = p.m.n;
    if e.len() != n {
        return Err(Error::Config("eigenvalue count does not match P".into()));
    }
    let mut m = Mat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let gap = e[i] - e[j];
            if gap.abs() < 1e-12 * e[i].abs().max(e[j].abs()) {
                return Err(Error::DegenerateGap { n: i + 1, m: j + 1 });
            }
            m.set(i, j, p.m.get(i, j) / gap);
        }
    }
    Ok(MatrixA { m })
}

/// Identity residuals of the assembled matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityReport {
    pub p_asymmetry: f64,
    pub a_antisymmetry: f64,
    /// `max_{n≠m} |A_{nm}(E_n - E_m) - P_{nm}|`.
    pub av_residual: f64,
    /// `max |P_{nm}|` over `n + m` odd, for even potentials.
    pub parity_residual: Option<f64>,
    /// `max_{n≠m} |(E_n - E_m)⟨ψ_n', ψ_m⟩ - ⟨V'ψ_n, ψ_m⟩|` / E_N, an independent check of the eigenbasis.
    pub commutator_residual: f64,
    pub e_n: f64,
}

pub fn identity_report(sys: &EigenSystem, p: &MatrixP, a: &MatrixA) -> IdentityReport {
    let n = p.m.n;
    let e = sys.energies();
    let (mut anti, mut av, mut par) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        for j in 0..n {
            anti = anti.max((a.m.get(i, j) + a.m.get(j, i)).abs());
            if i != j {
                av = av.max((a.m.get(i, j) * (e[i] - e[j]) - p.m.get(i, j)).abs());
            }
            if (i + j) % 2 == 1 {
                par = par.max(p.m.get(i, j).abs());
            }
        }
    }
    // -ψ'' + Vψ = Eψ gives (E_n - E_m)⟨ψ_n', ψ_m⟩ = ⟨V'ψ_n, ψ_m⟩ after integrating by parts
    let g = &sys.grid;
    let dv: Vec<f64> = g.nodes.iter().map(|&x| if x == 0.0 { 0.0 } else { sys.scaled.eval_deriv(x) }).collect();
    let vd = weighted_gram(sys, &dv);
    let mut comm = 0.0f64;
    let sub = n.min(40);
    for i in 0..sub {
        for j in 0..sub {
            if i == j {
                continue;
            }
            let d: f64 = (0..g.len()).map(|k| g.weights[k] * sys.pairs[i].psi_prime[k] * sys.pairs[j].psi[k]).sum();
            comm = comm.max(((e[i] - e[j]) * d - vd.get(i, j)).abs());
        }
    }
    let e_n = e.last().copied().unwrap_or(0.0);
    IdentityReport {
        p_asymmetry: p.asymmetry,
        a_antisymmetry: anti,
        av_residual: av,
        parity_residual: sys.scaled.is_even().then_some(par),
        commutator_residual: comm / e_n.max(1e-300),
        e_n,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VirialReport {
    pub n: Vec<usize>,
    pub e: Vec<f64>,
    /// `|P_nn - ∂_t E_n(tV)|` with a central difference.
    pub r1: Vec<f64>,
    /// `|∫ x V' ψ_n² - 2 ∫ ψ_n'²|`.
    pub r2: Vec<f64>,
    /// `0 ≤ P_nn ≤ E_n` for all `n`.
    pub diagonal_in_range: bool,
}

pub fn virial_checks(sys: &EigenSystem, p: &MatrixP, count: usize, h: f64, opts: &SolverOptions) -> Result<VirialReport> {
    let count = count.min(sys.len());
    let g = &sys.grid;
    let xdv: Vec<f64> = g.nodes.iter().map(|&x| if x == 0.0 { 0.0 } else { x * sys.scaled.eval_deriv(x) }).collect();
    let up = sys.scaled.scale(1.0 + h)?;
    let dn = sys.scaled.scale(1.0 - h)?;
    let rows: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let pair = &sys.pairs[i];
            let ep = sturm::refine_eigenvalue(&up, i + 1, pair.e * (1.0 + h).sqrt(), opts)?;
            let em = sturm::refine_eigenvalue(&dn, i + 1, pair.e * (1.0 - h).sqrt(), opts)?;
            let f_fd = (ep - em) / (2.0 * h);
            let pot: f64 = (0..g.len()).map(|k| g.weights[k] * xdv[k] * pair.psi[k] * pair.psi[k]).sum();
            let kin: f64 = (0..g.len()).map(|k| g.weights[k] * pair.psi_prime[k] * pair.psi_prime[k]).sum();
            Ok(((p.m.get(i, i) - f_fd).abs(), (pot - 2.0 * kin).abs()))
        })
        .collect::<Result<_>>()?;
    let e = sys.energies();
    let diagonal_in_range = (0..sys.len()).all(|i| p.m.get(i, i) >= 0.0 && p.m.get(i, i) <= e[i]);
    Ok(VirialReport {
        n: (1..=count).collect(),
        e: e[..count].to_vec(),
        r1: rows.iter().map(|r| r.0).collect(),
        r2: rows.iter().map(|r| r.1).collect(),
        diagonal_in_range,
    })
}

/// `Σ_{E_n ≤ E0} ψ_n(x)²`.
pub fn projector_sum(sys: &EigenSystem, e0: f64, x: f64) -> Result<f64> {
    check_e0(sys, e0)?;
    Ok(sys.pairs.iter().filter(|p| p.e <= e0).map(|p| sys.psi_at(p.n, x).powi(2)).sum())
}

fn check_e0(sys: &EigenSystem, e0: f64) -> Result<()> {
    if e0 > sys.e_max * (1.0 + 1e-12) && !(sys.is_empty()) {
        return Err(Error::Range(format!("E0 = {e0} exceeds the computed range E_max = {}", sys.e_max)));
    }
    Ok(())
}

/// `sup_x Σ_{E_n ≤ E0} f_n(x)²` over grid nodes for sample vectors `f_n`.
pub fn projector_sup(sys: &EigenSystem, samples: &[Vec<f64>], e0: f64) -> Result<f64> {
    check_e0(sys, e0)?;
    let k = sys.pairs.iter().filter(|p| p.e <= e0).count();
    let mut best = 0.0f64;
    for j in 0..sys.grid.len() {
        let s: f64 = samples[..k].iter().map(|f| f[j] * f[j]).sum();
        best = best.max(s);
    }
    Ok(best)
}

/// `Σ_m B_{nm} ψ_m` on the grid, for every row `n`.
pub fn expand(sys: &EigenSystem, b: &Mat) -> Vec<Vec<f64>> {
    let len = sys.grid.len();
    (0..b.n)
        .into_par_iter()
        .map(|i| {
            let mut out = vec![0.0; len];
            for (j, c) in b.row(i).iter().enumerate() {
                if *c != 0.0 {
                    for (o, p) in out.iter_mut().zip(&sys.pairs[j].psi) {
                        *o += c * p;
                    }
                }
            }
            out
        })
        .collect()
}

/// `ρ_n = Σ_m (A ⊙ F_{T₀})_{nm} ψ_m`, with the alternative form
/// `σ_n - Σ_m (A ⊙ N_{T₀})_{nm} ψ_m` kept for comparison.
#[derive(Clone, Debug)]
pub struct RhoSet {
    pub t0: f64,
    pub rho: Vec<Vec<f64>>,
    /// `max_n ‖ρ_n - (σ_n - near part)‖_{L²}`.
    pub consistency: f64,
}

pub fn rho_set(sys: &EigenSystem, a: &MatrixA) -> Result<RhoSet> {
    let t0 = 2.0;
    let far = CutoffMask::new(a.m.n, t0, MaskKind::Far)?;
    let near = CutoffMask::new(a.m.n, t0, MaskKind::Near)?;
    let rho = expand(sys, &a.m.schur(&far));
    let sigma = expand(sys, &a.m);
    let near_part = expand(sys, &a.m.schur(&near));
    let mut consistency = 0.0f64;
    for i in 0..rho.len() {
        let d: Vec<f64> = (0..sys.grid.len()).map(|k| (rho[i][k] - (sigma[i][k] - near_part[i][k])).powi(2)).collect();
        consistency = consistency.max(sys.grid.integrate(&d).sqrt());
    }
    Ok(RhoSet { t0, rho, consistency })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    /// Fitted exponent of `max_n |P_{nm}|/E_n` against `|n - m|`; infinite for a sparse band.
    pub alpha_near: f64,
    pub sparse_band: bool,
    /// Distinct `|n - m|` values used in the fit.
    pub band_points: usize,
    /// `max |A_{nm}| √(nm) (E_n/E_m)^{3/4}` over `n ≥ 2m`.
    pub far_constant: f64,
    /// The same maximum restricted to the lower and upper halves of the rows.
    pub far_constant_lower: f64,
    pub far_constant_upper: f64,
    /// `max_n Σ_m A_{nm}² / n²`.
    pub row_sum_max: f64,
    /// Envelope samples `(|n-m|, max |P_{nm}|/E_n)`, sorted by `|n-m|`.
    pub envelope: Vec<(usize, f64)>,
}

/// Decay fits on the guarded block `n, m ≤ 0.8 N`.
pub fn decay_fit(p: &MatrixP, a: &MatrixA, e: &[f64]) -> Result<DecayReport> {
    let n_all = p.m.n;
    if n_all < 64 {
        return Err(Error::Range(format!("decay fits need N ≥ 64, got {n_all}")));
    }
    let guard = (0.8 * n_all as f64).floor() as usize;
    let mut env = vec![0.0f64; guard];
    for i in 0..guard {
        for j in 0..guard {
            let (a1, b1) = ((i + 1) as f64, (j + 1) as f64);
            if b1 < a1 / 2.0 || b1 > 2.0 * a1 {
                continue;
            }
            let k = i.abs_diff(j);
            let v = p.m.get(i, j).abs() / e[i];
            if v > env[k] {
                env[k] = v;
            }
        }
    }
    let envelope: Vec<(usize, f64)> = env.iter().enumerate().filter(|(k, v)| *k >= 1 && **v > 0.0).map(|(k, v)| (k, *v)).collect();
    // entries below 1e-10 relative are quadrature noise or parity zeros
    let pts: Vec<(f64, f64)> =
        envelope.iter().filter(|(k, v)| *k >= 3 && *v > 1e-10).map(|(k, v)| ((*k as f64).ln(), v.ln())).collect();
    let sparse_band = pts.len() < 3;
    let alpha_near = if sparse_band { f64::INFINITY } else { -crate::potentials::ls_slope(&pts) };
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for i in 0..guard {
        for j in 0..guard {
            if i + 1 >= 2 * (j + 1) {
                let c = a.m.get(i, j).abs() * (((i + 1) * (j + 1)) as f64).sqrt() * (e[i] / e[j]).powf(0.75);
                if i < guard / 2 {
                    lo = lo.max(c);
                } else {
                    hi = hi.max(c);
                }
            }
        }
    }
    let row_sum_max = (0..guard)
        .map(|i| a.m.row(i).iter().map(|v| v * v).sum::<f64>() / ((i + 1) as f64).powi(2))
        .fold(0.0f64, f64::max);
    Ok(DecayReport {
        alpha_near,
        sparse_band,
        band_points: pts.len(),
        far_constant: lo.max(hi),
        far_constant_lower: lo,
        far_constant_upper: hi,
        row_sum_max,
        envelope,
    })
}

/// `‖|A| ⊙ F_2‖` on the guarded block.
pub fn far_operator_norm(a: &MatrixA) -> Result<f64> {
    let guard = (0.8 * a.m.n as f64).floor() as usize;
    let mut sub = Mat::zeros(guard);
    for i in 0..guard {
        for j in 0..guard {
            sub.set(i, j, a.m.get(i, j));
        }
    }
    let far = CutoffMask::new(guard, 2.0, MaskKind::Far)?;
    Ok(sub.abs().schur(&far).operator_norm(50))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Potential;
    use crate::sturm::{eigen_system, Cutoff};
    use approx::assert_relative_eq;

    fn harmonic(n: usize) -> EigenSystem {
        eigen_system(&Potential::power(2.0), 1.0, Cutoff::Count(n), &SolverOptions::default()).unwrap()
    }

    #[test]
    fn harmonic_p_and_a_entries() {
        let sys = harmonic(12);
        let p = matrix_p(&sys).unwrap();
        assert_relative_eq!(p.m.get(0, 0), 0.5, max_relative = 1e-9);
        assert!(p.m.get(0, 1).abs() < 1e-10);
        assert_relative_eq!(p.m.get(0, 2), 0.5f64.sqrt(), max_relative = 1e-9);
        let a = matrix_a(&p, &sys.energies()).unwrap();
        assert_eq!(a.m.get(3, 3), 0.0);
        assert!((a.m.get(0, 2) + 0.176_776_695_296_636_9).abs() < 1e-9);
        assert!(a.m.get(0, 3).abs() < 1e-8);
        let rep = identity_report(&sys, &p, &a);
        assert!(rep.a_antisymmetry < 1e-10);
        assert!(rep.av_residual < 1e-8 * rep.e_n);
        assert!(rep.parity_residual.unwrap() < 1e-10);
        assert!(rep.commutator_residual < 1e-8, "{}", rep.commutator_residual);
    }

    #[test]
    fn degenerate_gap_is_rejected() {
        let p = MatrixP { m: Mat::zeros(2), asymmetry: 0.0 };
        assert!(matches!(matrix_a(&p, &[1.0, 1.0]), Err(Error::DegenerateGap { .. })));
    }

    #[test]
    fn masks_partition() {
        let near = CutoffMask::new(30, 2.0, MaskKind::Near).unwrap();
        let far = CutoffMask::new(30, 2.0, MaskKind::Far).unwrap();
        assert!(near.data.iter().zip(&far.data).all(|(a, b)| a + b == 1));
        assert!(near.get(0, 1) && !near.get(0, 2));
        assert!(CutoffMask::new(3, 1.0, MaskKind::Near).is_err());
    }

    #[test]
    fn projector_examples() {
        let sys = harmonic(6);
        let v = projector_sum(&sys, 2.0, 0.0).unwrap();
        assert_relative_eq!(v, 1.0 / std::f64::consts::PI.sqrt(), max_relative = 1e-9);
        assert_eq!(projector_sum(&sys, 0.5, 0.7).unwrap(), 0.0);
        assert!(projector_sum(&sys, 100.0, 0.0).is_err());
        let mut last = 0.0;
        for e0 in [1.0, 2.0, 3.5, 6.0, 11.0] {
            let s = projector_sum(&sys, e0, 0.4).unwrap();
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn harmonic_virial() {
        let sys = harmonic(20);
        let p = matrix_p(&sys).unwrap();
        let rep = virial_checks(&sys, &p, 20, 1e-4, &SolverOptions::default()).unwrap();
        assert!(rep.diagonal_in_range);
        for i in 0..20 {
            assert!(rep.r1[i] < 1e-4 * rep.e[i], "r1 {}", rep.r1[i]);
            assert!(rep.r2[i] < 1e-4 * rep.e[i], "r2 {}", rep.r2[i]);
        }
    }

    #[test]
    fn harmonic_rho() {
        let sys = harmonic(16);
        let p = matrix_p(&sys).unwrap();
        let a = matrix_a(&p, &sys.energies()).unwrap();
        let rho = rho_set(&sys, &a).unwrap();
        // m = 3 lies outside [1/2, 2] so the whole first row is far
        let d: Vec<f64> = (0..sys.grid.len()).map(|k| (rho.rho[0][k] - a.m.get(0, 2) * sys.pairs[2].psi[k]).powi(2)).collect();
        assert!(sys.grid.integrate(&d).sqrt() < 1e-8);
        for (i, r) in rho.rho.iter().enumerate() {
            let ip: Vec<f64> = (0..sys.grid.len()).map(|k| r[k] * sys.pairs[i].psi[k]).collect();
            assert!(sys.grid.integrate(&ip).abs() < 1e-8);
        }
        assert!(rho.consistency < 1e-10);
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let mut m = Mat::zeros(3);
        m.set(0, 0, 1.0);
        m.set(1, 1, -3.0);
        m.set(2, 2, 2.0);
        assert_relative_eq!(m.operator_norm(200), 3.0, max_relative = 1e-9);
    }
}
