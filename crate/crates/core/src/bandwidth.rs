//! Plug-in curvature estimates, coverage-optimal bandwidths and Bartlett
//! factors.
//!
//! With h = H·n^(-1/3) the leading coverage error of every supported design
//! is proportional to
//!
//! ```text
//! E(H) = c₅H⁵ + c₂H² + c₋₁H⁻¹
//! ```
//!
//! and the Bartlett factor is 1 + n^(-2/3)·E(H*)/d_ρ. [`CoverageTerms`] holds
//! the three coefficients; everything design specific happens in
//! [`leading_constants`].

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::designs::{DesignKind, DesignSpec};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelConstants};
use crate::localfit::{
    cdf_pilot_density_derivatives, density_and_derivative, factorial, least_squares, pilot_moments_values,
    poly_design, silverman_pilot, LocalSmoother, Sample, Side,
};

pub const H_MIN: f64 = 0.05;
pub const H_MAX: f64 = 20.0;
pub const KAPPA2_FLOOR: f64 = 1e-12;
/// Fewest same-side observations allowed inside any pilot window.
pub const PILOT_MIN_POINTS: usize = 30;

const GOLDEN_TOL: f64 = 1e-10;
const GRID_POINTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCurvature {
    pub zeta_plus: f64,
    pub zeta_minus: f64,
    /// (κ₂, κ₃, κ₄) of the design residual on each side.
    pub kappa_plus: [f64; 3],
    pub kappa_minus: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiCurvature {
    pub zeta_plus: Vec<f64>,
    pub zeta_minus: Vec<f64>,
    pub d_plus: DMatrix<f64>,
    pub d_minus: DMatrix<f64>,
    /// D_[k] for k = 0..J.
    pub d3_plus: Vec<DMatrix<f64>>,
    pub d3_minus: Vec<DMatrix<f64>>,
    /// D_[k,l] stored at k·J + l.
    pub d4_plus: Vec<DMatrix<f64>>,
    pub d4_minus: Vec<DMatrix<f64>>,
}

impl MultiCurvature {
    pub fn dim(&self) -> usize {
        self.zeta_plus.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateCurvature {
    pub d_z: usize,
    pub gamma: Vec<f64>,
    /// (ζ₊, ζ₋, ζ_Z).
    pub zeta: Vec<f64>,
    pub mu_z_plus: Vec<f64>,
    pub mu_z_minus: Vec<f64>,
    pub mu_zz_plus: DMatrix<f64>,
    pub mu_zz_minus: DMatrix<f64>,
    /// C_{k;[s,t],r} for k = 0..=4, stored at (k·(1+d_Z) + s)·(1+d_Z) + t.
    /// Index 0 of s and t is the constant of Z̄ = (1, Zᵀ)ᵀ.
    pub c_plus: Vec<DMatrix<f64>>,
    pub c_minus: Vec<DMatrix<f64>>,
}

impl CovariateCurvature {
    fn slot(&self, k: usize, s: usize, t: usize) -> usize {
        let m = self.d_z + 1;
        (k * m + s) * m + t
    }

    pub fn c(&self, k: usize, s: usize, t: usize, side: Side) -> &DMatrix<f64> {
        let i = self.slot(k, s, t);
        match side {
            Side::Plus => &self.c_plus[i],
            Side::Minus => &self.c_minus[i],
        }
    }

    pub fn c_total(&self, k: usize, s: usize, t: usize) -> DMatrix<f64> {
        self.c(k, s, t, Side::Plus) + self.c(k, s, t, Side::Minus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DesignCurvature {
    Scalar(ScalarCurvature),
    Multi(MultiCurvature),
    Covariate(CovariateCurvature),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PilotDiagnostics {
    pub h0: f64,
    pub h_phi: f64,
    pub h_phi1: f64,
    pub phi_tilde: f64,
    /// Bandwidth of every local fit, keyed `column|side|k`.
    pub fits: BTreeMap<String, f64>,
    pub tau_pilot: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureEstimates {
    pub kind: DesignKind,
    pub phi: f64,
    pub phi1: f64,
    pub design: DesignCurvature,
    /// Absent when the constants are known rather than estimated.
    pub pilot: Option<PilotDiagnostics>,
}

/// Conditional moments at the cutoff from one side, each as
/// [value, first derivative, second derivative].
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSideMoments {
    pub y: [f64; 3],
    pub z: Vec<[f64; 3]>,
    pub zy: Vec<[f64; 3]>,
    pub zz: Vec<Vec<[f64; 3]>>,
}

/// γ* = (Σ_r Var_r[Z])⁻¹ Σ_r Cov_r[Z, Y], sides ordered (plus, minus).
pub fn gamma_star(sides: &[CovariateSideMoments; 2]) -> Result<DVector<f64>> {
    let dz = sides[0].z.len();
    let mut var = DMatrix::zeros(dz, dz);
    let mut cov = DVector::zeros(dz);
    for s in sides {
        for a in 0..dz {
            cov[a] += s.zy[a][0] - s.z[a][0] * s.y[0];
            for b in 0..dz {
                var[(a, b)] += s.zz[a][b][0] - s.z[a][0] * s.z[b][0];
            }
        }
    }
    var.lu()
        .solve(&cov)
        .filter(|g: &DVector<f64>| g.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("covariate variance at the cutoff is singular".into()))
}

/// ζ^SC = (ζ₊, ζ₋, ζ_Z) from side moments and γ*.
pub fn covariate_zeta(phi: f64, phi1: f64, sides: &[CovariateSideMoments; 2], gamma: &DVector<f64>) -> Vec<f64> {
    let dz = gamma.len();
    let mut zeta = vec![0.0; 2 + dz];
    for (r, s) in sides.iter().enumerate() {
        let zg1: f64 = (0..dz).map(|a| s.z[a][1] * gamma[a]).sum();
        let zg2: f64 = (0..dz).map(|a| s.z[a][2] * gamma[a]).sum();
        zeta[r] = 2.0 * phi1 * (s.y[1] - zg1) + phi * (s.y[2] - zg2);
        for a in 0..dz {
            let mut acc = 2.0 * phi1 * (s.zy[a][1] - s.z[a][1] * s.y[0]) + phi * (s.zy[a][2] - s.z[a][2] * s.y[0]);
            for b in 0..dz {
                acc += 2.0 * phi1 * (s.z[a][1] * s.z[b][0] - s.zz[a][b][1]) * gamma[b];
                acc += phi * (s.z[a][2] * s.z[b][0] - s.zz[a][b][2]) * gamma[b];
            }
            zeta[2 + a] += acc;
        }
    }
    zeta
}

/// Builds every C_{k;[s,t],r}. `moment(side, k, idx)` must return
/// E[ε_r^k · Π_{i∈idx} Z_i | X = c±] with `idx` sorted.
pub fn build_c_matrices(
    d_z: usize,
    moment: &mut dyn FnMut(Side, usize, &[usize]) -> Result<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let m = d_z + 1;
    let q = d_z + 2;
    let mut memo: HashMap<(Side, usize, Vec<usize>), f64> = HashMap::new();
    let mut out = [Vec::new(), Vec::new()];
    for (slot, side) in [Side::Plus, Side::Minus].into_iter().enumerate() {
        for k in 0..=4 {
            for s in 0..m {
                for t in 0..m {
                    let mut c = DMatrix::zeros(q, q);
                    for a in 0..q {
                        for b in a..q {
                            let mut idx = Vec::with_capacity(4);
                            let mut zero = false;
                            for (pos, is_zbar) in [(s, true), (t, true), (a, false), (b, false)] {
                                if is_zbar {
                                    if pos > 0 {
                                        idx.push(pos - 1);
                                    }
                                } else if pos == 0 {
                                    zero |= side == Side::Minus;
                                } else if pos == 1 {
                                    zero |= side == Side::Plus;
                                } else {
                                    idx.push(pos - 2);
                                }
                            }
                            if zero {
                                continue;
                            }
                            idx.sort_unstable();
                            let key = (side, k, idx);
                            let value = match memo.get(&key) {
                                Some(&v) => v,
                                None => {
                                    let v = moment(side, k, &key.2)?;
                                    memo.insert(key, v);
                                    v
                                }
                            };
                            c[(a, b)] = value;
                            c[(b, a)] = value;
                        }
                    }
                    out[slot].push(c);
                }
            }
        }
    }
    let [plus, minus] = out;
    Ok((plus, minus))
}

/// Assembles covariate curvature from side moments and a C-moment oracle
/// that receives (γ*, μ^SC₊, μ^SC₋) alongside each request.
pub fn covariate_curvature(
    phi: f64,
    phi1: f64,
    sides: &[CovariateSideMoments; 2],
    moment: &mut dyn FnMut(&CovariateResidual, Side, usize, &[usize]) -> Result<f64>,
) -> Result<CovariateCurvature> {
    let dz = sides[0].z.len();
    let gamma = gamma_star(sides)?;
    let zeta = covariate_zeta(phi, phi1, sides, &gamma);
    let mu_sc = |s: &CovariateSideMoments| s.y[0] - (0..dz).map(|a| s.z[a][0] * gamma[a]).sum::<f64>();
    let resid = CovariateResidual { gamma: gamma.as_slice().to_vec(), mu_plus: mu_sc(&sides[0]), mu_minus: mu_sc(&sides[1]) };
    let (c_plus, c_minus) = build_c_matrices(dz, &mut |side, k, idx| moment(&resid, side, k, idx))?;
    let zz = |s: &CovariateSideMoments| DMatrix::from_fn(dz, dz, |a, b| s.zz[a][b][0]);
    Ok(CovariateCurvature {
        d_z: dz,
        gamma: resid.gamma.clone(),
        zeta,
        mu_z_plus: sides[0].z.iter().map(|v| v[0]).collect(),
        mu_z_minus: sides[1].z.iter().map(|v| v[0]).collect(),
        mu_zz_plus: zz(&sides[0]),
        mu_zz_minus: zz(&sides[1]),
        c_plus,
        c_minus,
    })
}

/// ε_r = Y − μ^SC_r − Zᵀγ*.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateResidual {
    pub gamma: Vec<f64>,
    pub mu_plus: f64,
    pub mu_minus: f64,
}

impl CovariateResidual {
    pub fn mu(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.mu_plus,
            Side::Minus => self.mu_minus,
        }
    }

    pub fn eval(&self, side: Side, y: f64, z: &[f64]) -> f64 {
        y - self.mu(side) - z.iter().zip(&self.gamma).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageTerms {
    pub c5: f64,
    pub c2: f64,
    pub c_inv: f64,
    /// d_ρ for joint designs, 1 otherwise.
    pub divisor: f64,
}

impl CoverageTerms {
    pub fn error(&self, big_h: f64) -> f64 {
        self.c5 * big_h.powi(5) + self.c2 * big_h * big_h + self.c_inv / big_h
    }

    pub fn factor(&self, big_h: f64, n: usize) -> f64 {
        1.0 + (n as f64).powf(-2.0 / 3.0) * self.error(big_h) / self.divisor
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadingConstants {
    pub iota: Vec<f64>,
    /// ι² for scalar designs, ιᵀKι for joint ones; ϑ₂ for covariate designs.
    pub iota_sq: f64,
    /// υ for scalar and joint designs; Σϑ₃..ϑ₁₀ for covariate designs.
    pub upsilon: f64,
    /// ϑ₁..ϑ₁₀ for covariate designs.
    pub vartheta: Option<Vec<f64>>,
    pub terms: CoverageTerms,
}

pub fn b_bar(k: &KernelConstants, plus: [f64; 3], minus: [f64; 3]) -> f64 {
    let (g2, g3, g4) = (k.gamma(2), k.gamma(3), k.gamma(4));
    let s = plus[0] + minus[0];
    0.5 * g4 / g2 * (plus[2] + minus[2]) / s - g3 * g3 / (3.0 * g2 * g2) * (plus[1] - minus[1]).powi(2) / (s * s)
        + (4.0 * g3 - 2.0 * g2 * g2) * plus[0] * minus[0] / s
}

pub fn scalar_constants(c: &ScalarCurvature, phi: f64, k: &KernelConstants) -> LeadingConstants {
    let s = c.kappa_plus[0] + c.kappa_minus[0];
    let den = k.gamma(2) * phi * s;
    let iota = 0.5 * k.varpi * (c.zeta_plus - c.zeta_minus);
    let upsilon = b_bar(k, c.kappa_plus, c.kappa_minus);
    LeadingConstants {
        iota: vec![iota],
        iota_sq: iota * iota,
        upsilon,
        vartheta: None,
        terms: CoverageTerms { c5: iota * iota / den, c2: 0.0, c_inv: upsilon / den, divisor: 1.0 },
    }
}

fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical(format!("{what} is singular")))
}

pub fn multi_constants(c: &MultiCurvature, phi: f64, k: &KernelConstants) -> Result<LeadingConstants> {
    let j = c.dim();
    let (g2, g3, g4) = (k.gamma(2), k.gamma(3), k.gamma(4));
    // D₋⁻¹(D₊⁻¹ + D₋⁻¹)⁻¹D₊⁻¹ = (D₊ + D₋)⁻¹
    let kmat = inverse(&(&c.d_plus + &c.d_minus), "D₊ + D₋")?;
    let harmonic = inverse(&(inverse(&c.d_plus, "D₊")? + inverse(&c.d_minus, "D₋")?), "D₊⁻¹ + D₋⁻¹")?;

    let mut t1 = 0.0;
    let mut t2 = 0.0;
    let kd3p: Vec<DMatrix<f64>> = c.d3_plus.iter().map(|d| &kmat * d).collect();
    let kd3m: Vec<DMatrix<f64>> = c.d3_minus.iter().map(|d| &kmat * d).collect();
    for a in 0..j {
        for b in 0..j {
            let kab = kmat[(a, b)];
            t1 += kab * ((&kmat * &c.d4_plus[a * j + b]).trace() + (&kmat * &c.d4_minus[a * j + b]).trace());
            t2 += kab
                * ((&kd3p[a] * &kd3p[b]).trace() - (&kd3m[a] * &kd3p[b]).trace() - (&kd3p[a] * &kd3m[b]).trace()
                    + (&kd3m[a] * &kd3m[b]).trace());
        }
    }
    let v1 = 0.5 * g4 / g2 * t1;
    let v2 = -g3 * g3 / (3.0 * g2 * g2) * t2;
    let v3 = (4.0 * g3 - 2.0 * g2 * g2) * (&kmat * harmonic).trace();
    let upsilon = v1 + v2 + v3;

    let iota: Vec<f64> = (0..j).map(|a| 0.5 * k.varpi * (c.zeta_plus[a] - c.zeta_minus[a])).collect();
    let iv = DVector::from_column_slice(&iota);
    let iota_sq = (iv.transpose() * &kmat * &iv)[(0, 0)];
    let den = g2 * phi;
    Ok(LeadingConstants {
        iota,
        iota_sq,
        upsilon,
        vartheta: Some(vec![v1, v2, v3]),
        terms: CoverageTerms { c5: iota_sq / den, c2: 0.0, c_inv: upsilon / den, divisor: j as f64 },
    })
}

/// ϑ₁..ϑ₁₀ of the covariate-adjusted designs.
pub fn covariate_vartheta(c: &CovariateCurvature, phi: f64, k: &KernelConstants) -> Result<[f64; 10]> {
    let dz = c.d_z;
    let m = dz + 1;
    let q = dz + 2;
    let (g2, g3, g4, varpi) = (k.gamma(2), k.gamma(3), k.gamma(4), k.varpi);

    let omega = c.c_total(2, 0, 0);
    let omega_inv = inverse(&omega, "Ω")?;
    let mut pi = DMatrix::zeros(q, m);
    pi[(0, 0)] = 1.0;
    pi[(1, 0)] = 1.0;
    for a in 0..dz {
        pi[(0, 1 + a)] = c.mu_z_plus[a];
        pi[(1, 1 + a)] = c.mu_z_minus[a];
        pi[(2 + a, 0)] = c.mu_z_plus[a] + c.mu_z_minus[a];
        for b in 0..dz {
            pi[(2 + a, 1 + b)] = c.mu_zz_plus[(a, b)] + c.mu_zz_minus[(a, b)];
        }
    }
    let oi_pi = &omega_inv * &pi;
    let o = inverse(&(pi.transpose() * &oi_pi), "ΠᵀΩ⁻¹Π")?;
    let nmat = &oi_pi * &o;
    let qmat = &omega_inv - &nmat * oi_pi.transpose();
    let zeta = DVector::from_column_slice(&c.zeta);

    let c1: Vec<DMatrix<f64>> = (0..m).map(|s| c.c_total(1, 0, s)).collect();
    let j1 = |l: usize| match l {
        0 => c.c(3, 0, 0, Side::Plus).clone(),
        1 => c.c(3, 0, 0, Side::Minus).clone(),
        _ => c.c_total(3, 0, l - 1),
    };
    let j2 = |l: usize, mm: usize| -> DMatrix<f64> {
        let (l, mm) = if l >= 2 && mm < 2 { (mm, l) } else { (l, mm) };
        match (l, mm) {
            (0, 0) => c.c(4, 0, 0, Side::Plus).clone(),
            (1, 1) => c.c(4, 0, 0, Side::Minus).clone(),
            (0, 1) | (1, 0) => DMatrix::zeros(q, q),
            (0, _) => c.c(4, 0, mm - 1, Side::Plus).clone(),
            (1, _) => c.c(4, 0, mm - 1, Side::Minus).clone(),
            _ => c.c_total(4, l - 1, mm - 1),
        }
    };
    let lmat = |l: usize, s: usize| match l {
        0 => c.c(2, 0, s, Side::Plus).clone(),
        1 => c.c(2, 0, s, Side::Minus).clone(),
        _ => c.c_total(2, l - 1, s),
    };
    let nt = nmat.transpose();

    let mut th = [0.0; 10];
    for s in 0..m {
        th[0] += (&nt * &c1[s] * &qmat * &zeta)[s];
    }
    th[0] *= varpi / phi;
    th[1] = 0.25 * varpi * varpi / (phi * g2) * (zeta.transpose() * &qmat * &zeta)[(0, 0)];

    let qc1: Vec<DMatrix<f64>> = c1.iter().map(|x| &qmat * x).collect();
    let qc1t: Vec<DMatrix<f64>> = c1.iter().map(|x| &qmat * x.transpose()).collect();
    for s in 0..m {
        for t in 0..m {
            th[2] += o[(s, t)] * (&qc1t[s] * &qc1[t]).trace();
            let inner = &nt * &c1[s] * &qmat * c1[t].transpose() * &nmat;
            th[6] += inner[(t, s)];
            th[7] += inner[(s, t)];
            th[8] += o[(s, t)] * (&qmat * c.c_total(0, s, t)).trace();
        }
    }
    th[2] *= g2 / phi;
    th[6] *= -g2 / phi;
    th[7] *= g2 / phi;
    th[8] *= -g2 / phi;

    let qj1: Vec<f64> = (0..q).map(|l| (&qmat * j1(l)).trace()).collect();
    for j in 0..q {
        let jj = j1(j);
        for s in 0..m {
            th[3] += nmat[(j, s)] * (&jj * &qc1[s] * &qmat).trace();
        }
        for kk in 0..q {
            th[4] += qmat[(j, kk)] * (&qmat * j2(j, kk)).trace();
            th[5] += qmat[(j, kk)] * qj1[j] * qj1[kk];
        }
    }
    th[3] *= -2.0 * g3 / (phi * g2);
    th[4] *= 0.5 * g4 / (g2 * g2 * phi);
    th[5] *= -g3 * g3 / (3.0 * g2.powi(3) * phi);

    for s in 0..m {
        for l in 0..q {
            th[9] += (&nt * lmat(l, s) * &qmat)[(s, l)];
        }
    }
    th[9] *= 2.0 * g3 / (g2 * phi);
    Ok(th)
}

pub fn leading_constants(est: &CurvatureEstimates, k: &KernelConstants) -> Result<LeadingConstants> {
    if !(est.phi > 0.0 && est.phi.is_finite()) {
        return Err(Error::Degenerate(format!("density at the cutoff must be positive, got {}", est.phi)));
    }
    match &est.design {
        DesignCurvature::Scalar(c) => Ok(scalar_constants(c, est.phi, k)),
        DesignCurvature::Multi(c) => multi_constants(c, est.phi, k),
        DesignCurvature::Covariate(c) => {
            let th = covariate_vartheta(c, est.phi, k)?;
            let rest: f64 = th[2..].iter().sum();
            Ok(LeadingConstants {
                iota: Vec::new(),
                iota_sq: th[1],
                upsilon: rest,
                vartheta: Some(th.to_vec()),
                terms: CoverageTerms { c5: th[1], c2: -th[0], c_inv: rest, divisor: 1.0 },
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthPlan {
    pub design_kind: DesignKind,
    pub n: usize,
    /// Selected H*; h = H*·n^(-1/3) unless clamped or overridden.
    pub h_star: f64,
    pub h: f64,
    pub constants: LeadingConstants,
    /// 1 + B_c evaluated at the bandwidth actually used.
    pub bartlett_factor: f64,
    pub closed_form: bool,
    pub clamped: bool,
    pub overridden: bool,
    pub warnings: Vec<String>,
}

impl BandwidthPlan {
    pub fn iota(&self) -> &[f64] {
        &self.constants.iota
    }

    pub fn upsilon(&self) -> f64 {
        self.constants.upsilon
    }

    fn effective_h(&self) -> f64 {
        self.h * (self.n as f64).cbrt()
    }

    fn refresh_factor(&mut self) {
        self.bartlett_factor = self.constants.terms.factor(self.effective_h(), self.n);
    }

    /// Replaces the selected bandwidth, keeping the constants for the
    /// Bartlett factor.
    pub fn with_bandwidth(mut self, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input(format!("bandwidth must be positive, got {h}")));
        }
        self.h = h;
        self.overridden = true;
        self.refresh_factor();
        Ok(self)
    }

    /// Widens h until each side holds `min_count` observations.
    pub fn clamp_to_sample(mut self, sample: &Sample, min_count: usize) -> Result<Self> {
        for side in Side::BOTH {
            let count = sample.side_count(side);
            if count < min_count {
                return Err(Error::DataSupport { side, count, needed: min_count });
            }
        }
        let floor = sample.min_bandwidth_for(min_count).unwrap_or(0.0);
        if self.h < floor {
            self.warnings.push(format!(
                "bandwidth {:.6} widened to {:.6} to keep {min_count} observations per side",
                self.h, floor
            ));
            self.h = floor;
            self.clamped = true;
            self.refresh_factor();
        }
        Ok(self)
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimizes E(H)² over log H in [H_MIN, H_MAX] from the best grid minima.
pub fn minimize_coverage_error(terms: &CoverageTerms) -> f64 {
    let (lo, hi) = (H_MIN.ln(), H_MAX.ln());
    let obj = |lh: f64| terms.error(lh.exp()).powi(2);
    let step = (hi - lo) / GRID_POINTS as f64;
    let grid: Vec<f64> = (0..=GRID_POINTS).map(|i| obj(lo + step * i as f64)).collect();
    let mut minima: Vec<usize> = (0..=GRID_POINTS)
        .filter(|&i| (i == 0 || grid[i] <= grid[i - 1]) && (i == GRID_POINTS || grid[i] <= grid[i + 1]))
        .collect();
    minima.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    minima.truncate(3);
    let mut best = (f64::INFINITY, lo);
    for i in minima {
        let a = lo + step * i.saturating_sub(1) as f64;
        let b = (lo + step * (i + 1) as f64).min(hi);
        let x = golden_section(obj, a, b, GOLDEN_TOL);
        let v = obj(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1.exp()
}

fn select_h(lead: &LeadingConstants, closed_allowed: bool, warnings: &mut Vec<String>) -> Result<(f64, bool)> {
    let t = &lead.terms;
    let scale = t.c5.abs() + t.c2.abs() + t.c_inv.abs();
    if !scale.is_finite() {
        return Err(Error::Numerical("coverage error constants are not finite".into()));
    }
    if scale < 1e-300 {
        return Err(Error::Degenerate("all coverage error constants vanish".into()));
    }
    let tiny = 1e-14 * scale;
    if t.c5.abs() <= tiny && t.c2.abs() <= tiny && t.c_inv > 0.0 {
        warnings.push("bias constant is zero; H* set to the upper search limit".into());
        return Ok((H_MAX, false));
    }
    if closed_allowed && t.c2 == 0.0 && lead.upsilon > 0.0 && lead.iota_sq > 0.0 {
        let h = (lead.upsilon / (5.0 * lead.iota_sq)).powf(1.0 / 6.0);
        if (H_MIN..=H_MAX).contains(&h) {
            return Ok((h, true));
        }
        warnings.push(format!("closed-form H* = {h:.4e} outside [{H_MIN}, {H_MAX}]; clamped"));
        return Ok((h.clamp(H_MIN, H_MAX), false));
    }
    Ok((minimize_coverage_error(t), false))
}

pub fn coverage_optimal_bandwidth(
    spec: &DesignSpec,
    est: &CurvatureEstimates,
    constants: &KernelConstants,
    n: usize,
) -> Result<BandwidthPlan> {
    if n == 0 {
        return Err(Error::Input("sample size must be positive".into()));
    }
    check_match(spec, est)?;
    let lead = leading_constants(est, constants)?;
    let mut warnings = est.pilot.as_ref().map(|p| p.warnings.clone()).unwrap_or_default();
    let closed_allowed = !matches!(est.design, DesignCurvature::Covariate(_));
    let (h_star, closed_form) = select_h(&lead, closed_allowed, &mut warnings)?;
    let bartlett_factor = lead.terms.factor(h_star, n);
    if !bartlett_factor.is_finite() {
        return Err(Error::Numerical("Bartlett factor is not finite".into()));
    }
    Ok(BandwidthPlan {
        design_kind: spec.kind,
        n,
        h_star,
        h: h_star * (n as f64).powf(-1.0 / 3.0),
        constants: lead,
        bartlett_factor,
        closed_form,
        clamped: false,
        overridden: false,
        warnings,
    })
}

/// 1 + B_c at the plan's H*.
pub fn bartlett_factor(
    spec: &DesignSpec,
    est: &CurvatureEstimates,
    plan: &BandwidthPlan,
    constants: &KernelConstants,
    n: usize,
) -> Result<f64> {
    check_match(spec, est)?;
    Ok(leading_constants(est, constants)?.terms.factor(plan.h_star, n))
}

fn check_match(spec: &DesignSpec, est: &CurvatureEstimates) -> Result<()> {
    let ok = match &est.design {
        DesignCurvature::Scalar(_) => matches!(spec.kind, DesignKind::Sharp | DesignKind::FuzzyAlt),
        DesignCurvature::Multi(m) => !spec.kind.has_covariates() && m.dim() == spec.d_rho(),
        DesignCurvature::Covariate(c) => spec.kind.has_covariates() && c.d_z == spec.covariate_columns.len(),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Input(format!("curvature estimates do not match design {}", spec.kind)))
    }
}

/// AMSE-optimal density and density-derivative bandwidths before clamping.
pub fn density_pilot_bandwidths(phi_tilde: f64, phi2: f64, phi3: f64, n: usize, kernel: Kernel) -> (f64, f64) {
    let nf = n as f64;
    let kc = kernel.constants();
    let dc = kernel.derivative_kernel().constants();
    let h_phi = nf.powf(-0.2) * (phi_tilde / (phi2 * phi2) * kc.int_k2 / kc.int_ku2.powi(2)).powf(0.2);
    let h_phi1 = nf.powf(-1.0 / 7.0) * (3.0 * phi_tilde / (phi3 * phi3) * kc.int_dk2 / dc.int_ku2.powi(2)).powf(1.0 / 7.0);
    (h_phi, h_phi1)
}

/// e_kᵀM⁻¹VM⁻¹e_k and e_kᵀM⁻¹l for the order-(k+1) fit.
pub fn amse_constants(k_consts: &KernelConstants, side: Side, k: usize) -> Result<(f64, f64)> {
    let p = k + 1;
    let m = DMatrix::from_fn(p + 1, p + 1, |i, j| k_consts.m(side, i + j));
    let v = DMatrix::from_fn(p + 1, p + 1, |i, j| k_consts.sq(side, i + j));
    let l = DVector::from_fn(p + 1, |i, _| k_consts.m(side, p + 1 + i));
    let mi = inverse(&m, "kernel moment matrix")?;
    Ok(((&mi * v * &mi)[(k, k)], (&mi * l)[k]))
}

fn slot(side: Side) -> usize {
    match side {
        Side::Plus => 0,
        Side::Minus => 1,
    }
}

struct Pilot<'a> {
    sample: &'a Sample,
    kernel: Kernel,
    h0: f64,
    phi_tilde: f64,
    side_rows: [Vec<usize>; 2],
    side_dist: [Vec<f64>; 2],
    diag: PilotDiagnostics,
}

impl<'a> Pilot<'a> {
    fn new(sample: &'a Sample, kernel: Kernel) -> Result<Self> {
        let c = sample.cutoff;
        let mut side_rows = [Vec::new(), Vec::new()];
        for (i, &x) in sample.x.iter().enumerate() {
            let side = if Side::Plus.contains(x, c) { Side::Plus } else { Side::Minus };
            side_rows[slot(side)].push(i);
        }
        for side in Side::BOTH {
            let count = side_rows[slot(side)].len();
            if count < PILOT_MIN_POINTS {
                return Err(Error::DataSupport { side, count, needed: PILOT_MIN_POINTS });
            }
        }
        let side_dist = side_rows.clone().map(|rows| {
            let mut d: Vec<f64> = rows.iter().map(|&i| (sample.x[i] - c).abs()).collect();
            d.sort_by(f64::total_cmp);
            d
        });
        let h0 = silverman_pilot(sample)?;
        let phi_tilde = pilot_moments_values(sample, &sample.x, h0)?.phi_tilde;
        let diag = PilotDiagnostics { h0, phi_tilde, ..Default::default() };
        Ok(Pilot { sample, kernel, h0, phi_tilde, side_rows, side_dist, diag })
    }

    fn bounds(&self, side: Side) -> (f64, f64) {
        let d = &self.side_dist[slot(side)];
        (d[PILOT_MIN_POINTS - 1], *d.last().expect("nonempty side"))
    }

    /// (q)-th derivative at the cutoff from a global side polynomial of order q.
    fn global_derivative(&self, v: &[f64], side: Side, q: usize) -> Result<f64> {
        let rows = &self.side_rows[slot(side)];
        let xs: Vec<f64> = rows.iter().map(|&i| self.sample.x[i]).collect();
        let vs: Vec<f64> = rows.iter().map(|&i| v[i]).collect();
        let scale = self.bounds(side).1;
        if scale == 0.0 {
            return Err(Error::Numerical("global pilot regressors are rank-deficient".into()));
        }
        let design = poly_design(&xs, self.sample.cutoff, q, scale);
        let beta = least_squares(&design, &vs, None)?;
        Ok(factorial(q) * beta[q] / scale.powi(q as i32))
    }

    fn amse_bandwidth(&self, v: &[f64], side: Side, k: usize) -> Result<f64> {
        let p = k + 1;
        let sigma2 = pilot_moments_values(self.sample, v, self.h0)?.sigma2(side);
        let deriv = self.global_derivative(v, side, p + 1)?;
        let (a, b) = amse_constants(self.kernel.constants(), side, k)?;
        let num = sigma2 * factorial(p + 1).powi(2) * (2 * k + 1) as f64 * a;
        let den = 2.0 * (p + 1 - k) as f64 * self.phi_tilde * deriv * deriv * b * b;
        let raw = (num / (self.sample.n() as f64 * den)).powf(1.0 / (2 * p + 3) as f64);
        let (lo, hi) = self.bounds(side);
        Ok(if raw.is_nan() || raw > hi { hi } else { raw.max(lo) })
    }

    fn fit(&mut self, label: &str, v: &[f64], side: Side, k: usize) -> Result<f64> {
        let h = self.amse_bandwidth(v, side, k)?;
        let smoother = LocalSmoother::new(&self.sample.x, self.sample.cutoff, side, k, k + 1, h, self.kernel)?;
        self.diag.fits.insert(format!("{label}|{side}|{k}"), h);
        Ok(smoother.apply(v))
    }

    /// Value, first and second derivative on `side`.
    fn derivatives(&mut self, label: &str, v: &[f64], side: Side) -> Result<[f64; 3]> {
        Ok([self.fit(label, v, side, 0)?, self.fit(label, v, side, 1)?, self.fit(label, v, side, 2)?])
    }

    fn density(&mut self) -> Result<(f64, f64)> {
        let (phi2, phi3) = cdf_pilot_density_derivatives(self.sample)?;
        let (raw, raw1) = density_pilot_bandwidths(self.phi_tilde, phi2, phi3, self.sample.n(), self.kernel);
        let lo = self.bounds(Side::Plus).0.max(self.bounds(Side::Minus).0);
        let hi = self.bounds(Side::Plus).1.max(self.bounds(Side::Minus).1);
        let clamp = |h: f64| if h.is_nan() || h > hi { hi } else { h.max(lo) };
        let (h_phi, h_phi1) = (clamp(raw), clamp(raw1));
        self.diag.h_phi = h_phi;
        self.diag.h_phi1 = h_phi1;
        let (phi, phi1) = density_and_derivative(self.sample, h_phi, h_phi1, self.kernel)?;
        if !(phi > 0.0) {
            return Err(Error::Degenerate("estimated density at the cutoff is not positive".into()));
        }
        Ok((phi, phi1))
    }

    fn side_of(&self, i: usize) -> Side {
        if Side::Plus.contains(self.sample.x[i], self.sample.cutoff) {
            Side::Plus
        } else {
            Side::Minus
        }
    }

    /// v minus its side-specific local intercept.
    fn center(&self, v: &[f64], mu: [f64; 2]) -> Vec<f64> {
        (0..v.len()).map(|i| v[i] - mu[slot(self.side_of(i))]).collect()
    }

    fn kappa(&mut self, label: &str, resid: &[f64], side: Side) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (j, o) in out.iter_mut().enumerate() {
            let pow = j as i32 + 2;
            let vals: Vec<f64> = resid.iter().map(|e| e.powi(pow)).collect();
            *o = self.fit(&format!("{label}^{pow}"), &vals, side, 0)?;
        }
        if out[0] < KAPPA2_FLOOR {
            self.diag.warnings.push(format!("κ₂ of {label} on the {side} side clipped to {KAPPA2_FLOOR}"));
            out[0] = KAPPA2_FLOOR;
        }
        Ok(out)
    }

    /// Ratio of local-linear jumps, used to form Y − τ̂D.
    fn tau_ratio(&mut self, y_label: &str, y: &[f64], d: &[f64]) -> Result<f64> {
        let dy = self.fit(y_label, y, Side::Plus, 0)? - self.fit(y_label, y, Side::Minus, 0)?;
        let dd = self.fit("treatment", d, Side::Plus, 0)? - self.fit("treatment", d, Side::Minus, 0)?;
        if dd.abs() < 1e-8 {
            return Err(Error::Degenerate("treatment probability has no jump at the cutoff".into()));
        }
        Ok(dy / dd)
    }
}

fn scalar_pipeline(p: &mut Pilot, label: &str, v: &[f64], phi: f64, phi1: f64) -> Result<ScalarCurvature> {
    let mut zeta = [0.0; 2];
    let mut mu = [0.0; 2];
    for side in Side::BOTH {
        let [m0, m1, m2] = p.derivatives(label, v, side)?;
        zeta[slot(side)] = m2 * phi + 2.0 * m1 * phi1;
        mu[slot(side)] = m0;
    }
    let resid = p.center(v, mu);
    let kappa_plus = p.kappa(label, &resid, Side::Plus)?;
    let kappa_minus = p.kappa(label, &resid, Side::Minus)?;
    Ok(ScalarCurvature { zeta_plus: zeta[0], zeta_minus: zeta[1], kappa_plus, kappa_minus })
}

fn psd_floor(m: DMatrix<f64>, what: &str, warnings: &mut Vec<String>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let floor = KAPPA2_FLOOR.max(1e-10 * sym.trace().abs());
    if eig.eigenvalues.iter().all(|&l| l > floor) {
        return sym;
    }
    warnings.push(format!("{what} was not positive definite; eigenvalues floored"));
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn multi_pipeline(p: &mut Pilot, labels: &[String], cols: &[Vec<f64>], phi: f64, phi1: f64) -> Result<MultiCurvature> {
    let j = cols.len();
    let mut zeta = [vec![0.0; j], vec![0.0; j]];
    let mut resid = Vec::with_capacity(j);
    for (label, v) in labels.iter().zip(cols) {
        let mut mu = [0.0; 2];
        let a = resid.len();
        for side in Side::BOTH {
            let [m0, m1, m2] = p.derivatives(label, v, side)?;
            zeta[slot(side)][a] = m2 * phi + 2.0 * m1 * phi1;
            mu[slot(side)] = m0;
        }
        resid.push(p.center(v, mu));
    }
    let mut memo: HashMap<(Side, Vec<usize>), f64> = HashMap::new();
    let n = p.sample.n();
    let mut product_mean = |p: &mut Pilot, side: Side, idx: &[usize]| -> Result<f64> {
        let mut key = idx.to_vec();
        key.sort_unstable();
        if let Some(&v) = memo.get(&(side, key.clone())) {
            return Ok(v);
        }
        let vals: Vec<f64> = (0..n).map(|i| key.iter().map(|&a| resid[a][i]).product()).collect();
        let label = key.iter().map(|&a| labels[a].as_str()).collect::<Vec<_>>().join("*");
        let v = p.fit(&format!("resid[{label}]"), &vals, side, 0)?;
        memo.insert((side, key), v);
        Ok(v)
    };
    let mut d2 = [DMatrix::zeros(j, j), DMatrix::zeros(j, j)];
    let mut d3 = [Vec::new(), Vec::new()];
    let mut d4 = [Vec::new(), Vec::new()];
    for side in Side::BOTH {
        let s = slot(side);
        for a in 0..j {
            for b in 0..j {
                d2[s][(a, b)] = product_mean(p, side, &[a, b])?;
            }
        }
        for k in 0..j {
            let mut m = DMatrix::zeros(j, j);
            for a in 0..j {
                for b in 0..j {
                    m[(a, b)] = product_mean(p, side, &[k, a, b])?;
                }
            }
            d3[s].push(m);
        }
        for k in 0..j {
            for l in 0..j {
                let mut m = DMatrix::zeros(j, j);
                for a in 0..j {
                    for b in 0..j {
                        m[(a, b)] = product_mean(p, side, &[k, l, a, b])?;
                    }
                }
                d4[s].push(m);
            }
        }
    }
    let [dp, dm] = d2;
    let d_plus = psd_floor(dp, "D₊", &mut p.diag.warnings);
    let d_minus = psd_floor(dm, "D₋", &mut p.diag.warnings);
    let [d3_plus, d3_minus] = d3;
    let [d4_plus, d4_minus] = d4;
    let [zeta_plus, zeta_minus] = zeta;
    Ok(MultiCurvature { zeta_plus, zeta_minus, d_plus, d_minus, d3_plus, d3_minus, d4_plus, d4_minus })
}

fn covariate_pipeline(
    p: &mut Pilot,
    y_label: &str,
    y: &[f64],
    z_labels: &[String],
    zs: &[&[f64]],
    phi: f64,
    phi1: f64,
) -> Result<CovariateCurvature> {
    let dz = zs.len();
    let n = y.len();
    let mut sides = Vec::with_capacity(2);
    for side in [Side::Plus, Side::Minus] {
        let yv = p.derivatives(y_label, y, side)?;
        let mut z = Vec::with_capacity(dz);
        let mut zy = Vec::with_capacity(dz);
        let mut zz = vec![vec![[0.0; 3]; dz]; dz];
        for a in 0..dz {
            z.push(p.derivatives(&z_labels[a], zs[a], side)?);
            let prod: Vec<f64> = (0..n).map(|i| zs[a][i] * y[i]).collect();
            zy.push(p.derivatives(&format!("{}*{y_label}", z_labels[a]), &prod, side)?);
            for b in a..dz {
                let prod: Vec<f64> = (0..n).map(|i| zs[a][i] * zs[b][i]).collect();
                let d = p.derivatives(&format!("{}*{}", z_labels[a], z_labels[b]), &prod, side)?;
                zz[a][b] = d;
                zz[b][a] = d;
            }
        }
        sides.push(CovariateSideMoments { y: yv, z, zy, zz });
    }
    let sides: [CovariateSideMoments; 2] = sides.try_into().expect("two sides");
    let rows: Vec<Vec<f64>> = (0..n).map(|i| zs.iter().map(|z| z[i]).collect()).collect();
    covariate_curvature(phi, phi1, &sides, &mut |resid, side, k, idx| {
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let e = resid.eval(p.side_of(i), y[i], &rows[i]);
                e.powi(k as i32) * idx.iter().map(|&a| rows[i][a]).product::<f64>()
            })
            .collect();
        let label = format!("eps^{k}{}", idx.iter().map(|&a| format!("*{}", z_labels[a])).collect::<String>());
        p.fit(&label, &vals, side, 0)
    })
}

/// Runs the full plug-in pipeline for a design.
pub fn estimate_curvature(spec: &DesignSpec, sample: &Sample, kernel: Kernel) -> Result<CurvatureEstimates> {
    spec.validate(sample)?;
    let mut p = Pilot::new(sample, kernel)?;
    let (phi, phi1) = p.density()?;
    let targets = spec.target_columns();
    let treatment = match (&spec.treatment_column, spec.kind.is_fuzzy()) {
        (Some(d), true) => Some(sample.column(d)?),
        _ => None,
    };

    // Fuzzy designs work with Y − τ̂D.
    let mut adjusted: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
    let mut taus = Vec::new();
    for name in targets {
        let y = sample.column(name)?;
        match treatment {
            Some(d) => {
                let tau = p.tau_ratio(name, y, d)?;
                taus.push(tau);
                adjusted.push(y.iter().zip(d).map(|(y, d)| y - tau * d).collect());
            }
            None => adjusted.push(y.to_vec()),
        }
    }
    if !taus.is_empty() {
        p.diag.tau_pilot = Some(taus);
    }

    let design = match spec.kind {
        DesignKind::Sharp | DesignKind::FuzzyAlt => {
            DesignCurvature::Scalar(scalar_pipeline(&mut p, &targets[0], &adjusted[0], phi, phi1)?)
        }
        DesignKind::MultiOutcome | DesignKind::CategoricalSharp | DesignKind::CategoricalFuzzy | DesignKind::BalanceTest => {
            DesignCurvature::Multi(multi_pipeline(&mut p, targets, &adjusted, phi, phi1)?)
        }
        DesignKind::SharpCov | DesignKind::FuzzyCovAlt => {
            let zs: Vec<&[f64]> = spec.covariate_columns.iter().map(|c| sample.column(c)).collect::<Result<_>>()?;
            DesignCurvature::Covariate(covariate_pipeline(
                &mut p,
                &targets[0],
                &adjusted[0],
                &spec.covariate_columns,
                &zs,
                phi,
                phi1,
            )?)
        }
    };
    Ok(CurvatureEstimates { kind: spec.kind, phi, phi1, design, pilot: Some(p.diag) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scalar_est(zp: f64, zm: f64, kp: [f64; 3], km: [f64; 3], phi: f64) -> CurvatureEstimates {
        CurvatureEstimates {
            kind: DesignKind::Sharp,
            phi,
            phi1: 0.0,
            design: DesignCurvature::Scalar(ScalarCurvature { zeta_plus: zp, zeta_minus: zm, kappa_plus: kp, kappa_minus: km }),
            pilot: None,
        }
    }

    fn lead(iota: f64, upsilon: f64, den: f64) -> LeadingConstants {
        LeadingConstants {
            iota: vec![iota],
            iota_sq: iota * iota,
            upsilon,
            vartheta: None,
            terms: CoverageTerms { c5: iota * iota / den, c2: 0.0, c_inv: upsilon / den, divisor: 1.0 },
        }
    }

    #[test]
    fn closed_form_examples() {
        let mut w = Vec::new();
        let (h, closed) = select_h(&lead(1.0, 5.0, 1.0), true, &mut w).unwrap();
        assert!(closed);
        assert_eq!(h, 1.0);
        let (h, _) = select_h(&lead(0.5, 2.5, 1.0), true, &mut w).unwrap();
        assert!((h - 2f64.powf(1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn numeric_matches_closed_form() {
        for (iota, upsilon) in [(0.5, 2.5), (1.0, 5.0), (0.3, 0.7), (2.0, 11.0)] {
            let l = lead(iota, upsilon, 1.7);
            let closed = (upsilon / (5.0 * iota * iota)).powf(1.0 / 6.0);
            let numeric = minimize_coverage_error(&l.terms);
            assert!((numeric - closed).abs() < 1e-6, "{numeric} vs {closed}");
        }
    }

    #[test]
    fn covariate_objective_reduces_to_scalar() {
        let terms = CoverageTerms { c5: 1.0, c2: 0.0, c_inv: 5.0, divisor: 1.0 };
        assert!((minimize_coverage_error(&terms) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn factor_arithmetic() {
        let terms = lead(1.0, 5.0, 1.0).terms;
        assert!((terms.factor(1.0, 1000) - 1.06).abs() < 1e-12);
        assert!(terms.factor(1.0, 1_000_000_000) - 1.0 < 1e-5);
    }

    #[test]
    fn negative_upsilon_goes_numeric() {
        let l = lead(1.0, -2.0, 1.0);
        let mut w = Vec::new();
        let (h, closed) = select_h(&l, true, &mut w).unwrap();
        assert!(!closed);
        // E(H) = H⁵ − 2/H has a root at 2^(1/6)
        assert!((h - 2f64.powf(1.0 / 6.0)).abs() < 1e-6);
    }

    #[test]
    fn degenerate_and_flat_bias() {
        let mut w = Vec::new();
        assert!(matches!(select_h(&lead(0.0, 0.0, 1.0), true, &mut w), Err(Error::Degenerate(_))));
        let (h, _) = select_h(&lead(0.0, 3.0, 1.0), true, &mut w).unwrap();
        assert_eq!(h, H_MAX);
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn density_pilot_formula() {
        let n = 1000;
        let (h, _) = density_pilot_bandwidths(0.5, 1.0, 1.0, n, Kernel::Triangular);
        let expected = 12f64.powf(0.2) * (n as f64).powf(-0.2);
        assert!((h - expected).abs() < 1e-9);
    }

    fn covariate_from_scalar(c: &ScalarCurvature) -> CovariateCurvature {
        let mut c_plus = Vec::new();
        let mut c_minus = Vec::new();
        for k in 0..=4 {
            let pick = |kap: [f64; 3]| match k {
                0 => 1.0,
                1 => 0.0,
                _ => kap[k - 2],
            };
            c_plus.push(DMatrix::from_diagonal(&DVector::from_vec(vec![pick(c.kappa_plus), 0.0])));
            c_minus.push(DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, pick(c.kappa_minus)])));
        }
        CovariateCurvature {
            d_z: 0,
            gamma: vec![],
            zeta: vec![c.zeta_plus, c.zeta_minus],
            mu_z_plus: vec![],
            mu_z_minus: vec![],
            mu_zz_plus: DMatrix::zeros(0, 0),
            mu_zz_minus: DMatrix::zeros(0, 0),
            c_plus,
            c_minus,
        }
    }

    #[test]
    fn covariate_terms_without_covariates_reduce_to_sharp() {
        let k = Kernel::Triangular.constants();
        let sc = ScalarCurvature { zeta_plus: -5.85, zeta_minus: 5.8, kappa_plus: [0.3, 0.05, 0.2], kappa_minus: [0.2, -0.02, 0.15] };
        let phi = 0.625;
        let sharp = scalar_constants(&sc, phi, k);
        let th = covariate_vartheta(&covariate_from_scalar(&sc), phi, k).unwrap();
        assert!(th[0].abs() < 1e-14);
        assert!((th[1] - sharp.terms.c5).abs() < 1e-10 * sharp.terms.c5.abs());
        let rest: f64 = th[2..].iter().sum();
        assert!((rest - sharp.terms.c_inv).abs() < 1e-10 * sharp.terms.c_inv.abs());
    }

    #[test]
    fn multi_with_one_outcome_matches_sharp() {
        let k = Kernel::Epanechnikov.constants();
        let sc = ScalarCurvature { zeta_plus: 1.3, zeta_minus: -0.4, kappa_plus: [0.3, 0.05, 0.2], kappa_minus: [0.2, -0.02, 0.15] };
        let one = |v: f64| DMatrix::from_element(1, 1, v);
        let mc = MultiCurvature {
            zeta_plus: vec![sc.zeta_plus],
            zeta_minus: vec![sc.zeta_minus],
            d_plus: one(sc.kappa_plus[0]),
            d_minus: one(sc.kappa_minus[0]),
            d3_plus: vec![one(sc.kappa_plus[1])],
            d3_minus: vec![one(sc.kappa_minus[1])],
            d4_plus: vec![one(sc.kappa_plus[2])],
            d4_minus: vec![one(sc.kappa_minus[2])],
        };
        let phi = 0.4;
        let a = scalar_constants(&sc, phi, k);
        let b = multi_constants(&mc, phi, k).unwrap();
        let mut w = Vec::new();
        let ha = select_h(&a, true, &mut w).unwrap().0;
        let hb = select_h(&b, true, &mut w).unwrap().0;
        assert!((ha - hb).abs() < 1e-8);
        assert!((a.terms.c_inv - b.terms.c_inv).abs() < 1e-10);
    }

    #[test]
    fn sharp_model_constants() {
        let k = Kernel::Triangular.constants();
        let est = scalar_est(-5.85, 5.8, [0.25, 0.0, 0.1875], [0.25, 0.0, 0.1875], 0.625);
        let plan = coverage_optimal_bandwidth(&DesignSpec::sharp("y"), &est, k, 1000).unwrap();
        assert!(plan.closed_form);
        assert!(plan.upsilon() > 0.0);
        assert!((plan.iota()[0] - 0.5825).abs() < 1e-9);
        let e = |h: f64| plan.constants.terms.error(h).abs();
        assert!(e(plan.h_star) <= e(0.5 * plan.h_star) && e(plan.h_star) <= e(2.0 * plan.h_star));
        assert!(plan.bartlett_factor > 1.0);
    }

    #[test]
    fn clamping_flags_and_widens() {
        let k = Kernel::Triangular.constants();
        let est = scalar_est(-5.85, 5.8, [0.25, 0.0, 0.1875], [0.25, 0.0, 0.1875], 0.625);
        let plan = coverage_optimal_bandwidth(&DesignSpec::sharp("y"), &est, k, 1000).unwrap();
        let x: Vec<f64> = (0..40).map(|i| -1.0 + 0.05 * i as f64).collect();
        let s = Sample::new(x, 0.0).unwrap();
        let clamped = plan.clone().clamp_to_sample(&s, 10).unwrap();
        assert!(clamped.clamped);
        assert!(clamped.h > plan.h);
        assert!(s.window_count(Side::Minus, clamped.h) >= 10);
    }

    fn uniform_sample(n: usize, seed: u64, f: impl Fn(f64, &mut ChaCha8Rng) -> f64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|&x| f(x, &mut rng)).collect();
        Sample::new(x, 0.0).unwrap().with_column("y", y).unwrap()
    }

    #[test]
    fn noiseless_quadratic_zeta() {
        let s = uniform_sample(20000, 3, |x, _| x * x);
        let est = estimate_curvature(&DesignSpec::sharp("y"), &s, Kernel::Triangular).unwrap();
        let DesignCurvature::Scalar(c) = &est.design else { panic!() };
        assert!((c.zeta_plus - 1.0).abs() < 0.15, "{}", c.zeta_plus);
        assert!((c.zeta_minus - 1.0).abs() < 0.15, "{}", c.zeta_minus);
    }

    #[test]
    fn gaussian_residual_moments() {
        let normal = Normal::new(0.0, 0.5).unwrap();
        let s = uniform_sample(20000, 5, |x, rng| 1.0 + x + normal.sample(rng));
        let est = estimate_curvature(&DesignSpec::sharp("y"), &s, Kernel::Triangular).unwrap();
        let DesignCurvature::Scalar(c) = &est.design else { panic!() };
        for kap in [c.kappa_plus, c.kappa_minus] {
            assert!((kap[0] - 0.25).abs() < 0.15 * 0.25, "{kap:?}");
            assert!(kap[1].abs() < 0.15 * 0.125, "{kap:?}");
            assert!((kap[2] - 0.1875).abs() < 0.15 * 0.1875, "{kap:?}");
        }
        let pilot = est.pilot.unwrap();
        assert!(pilot.fits.contains_key("y|plus|2"));
    }

    #[test]
    fn amse_constants_are_positive() {
        for kernel in Kernel::ALL {
            for k in 0..=2 {
                for side in Side::BOTH {
                    let (a, b) = amse_constants(kernel.constants(), side, k).unwrap();
                    assert!(a > 0.0 && b.is_finite() && b != 0.0, "{kernel} {side} {k}");
                }
            }
        }
    }
}
