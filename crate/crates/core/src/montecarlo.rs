//! Simulation designs with known constants and a seeded coverage-study
//! runner.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{
    coverage_optimal_bandwidth, covariate_curvature, estimate_curvature, BandwidthPlan, CovariateSideMoments,
    CurvatureEstimates, DesignCurvature, MultiCurvature, ScalarCurvature,
};
use crate::designs::{DesignKind, DesignSpec};
use crate::error::{Error, Result};
use crate::inference::{analyze_with_plan, AnalysisConfig};
use crate::kernel::Kernel;
use crate::localfit::{Sample, Side};

const SIGMA: f64 = 0.5;
const FUZZY_A: f64 = 0.84;
const COV_RHO: f64 = 0.269;
const MULTI_COV: f64 = 0.2;
const GH_NODES: usize = 12;
/// Abort threshold on the per-replication failure rate.
pub const MAX_FAILURE_RATE: f64 = 0.05;

// Polynomial coefficients in x, lowest order first.
const G1_PLUS: [f64; 6] = [0.52, 0.84, -3.00, 7.99, -9.01, 3.56];
const G1_MINUS: [f64; 6] = [0.48, 1.27, 7.18, 20.21, 21.54, 7.33];
const G2_PLUS: [f64; 6] = [0.52, 0.84, -0.1 * 3.00, -0.3 * 7.99, -0.1 * 9.01, 3.56];
const G2_MINUS: [f64; 6] = [0.48, 1.27, -0.5 * 7.18, 0.7 * 20.21, 1.1 * 21.54, 1.5 * 7.33];
const G3_PLUS: [f64; 6] = [0.09, 5.76, -42.56, 120.90, -139.71, 55.59];
const G3_MINUS: [f64; 6] = [0.03, -2.26, -13.14, -30.89, -31.89, 12.1];
const MUY_PLUS: [f64; 6] = [0.38, 0.62, -2.84, 8.42, -10.24, 4.31];
const MUY_MINUS: [f64; 6] = [0.36, 0.96, 5.47, 15.28, 15.87, 5.14];
const MUZ_PLUS: [f64; 6] = [0.49, 0.61, -0.23, -3.46, 6.43, -3.48];
const MUZ_MINUS: [f64; 6] = [0.49, 1.06, 5.74, 17.14, 19.75, 7.47];
const BETA_PLUS: f64 = 0.28;
const BETA_MINUS: f64 = 0.22;

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

/// [p(0), p'(0), p''(0)].
fn poly_at_zero(c: &[f64]) -> [f64; 3] {
    let get = |i: usize| c.get(i).copied().unwrap_or(0.0);
    [get(0), get(1), 2.0 * get(2)]
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len().max(b.len())).map(|i| a.get(i).unwrap_or(&0.0) + b.get(i).unwrap_or(&0.0)).collect()
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

/// Probabilists' Gauss–Hermite rule (weights sum to one) by Golub–Welsch.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jac = DMatrix::from_fn(n, n, |i, j| if i + 1 == j || j + 1 == i { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Φ by erfc.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Density of 2·Beta(2, 4) − 1 and its derivative at x.
pub fn forcing_density(x: f64) -> (f64, f64) {
    let t = 0.5 * (x + 1.0);
    if !(0.0..=1.0).contains(&t) {
        return (0.0, 0.0);
    }
    let b = 20.0 * t * (1.0 - t).powi(3);
    let db = 20.0 * ((1.0 - t).powi(3) - 3.0 * t * (1.0 - t).powi(2));
    (0.5 * b, 0.25 * db)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DgpKind {
    SharpModel1,
    FuzzyModel,
    SharpCovModel2,
    /// First J ∈ {1, 2, 3} outcomes of the three-outcome design.
    MultiOutcome { outcomes: usize },
    /// Multinomial logit with a base category; index j has coefficients
    /// (intercept, slope) on each side.
    CategoricalLogit { minus: Vec<[f64; 2]>, plus: Vec<[f64; 2]> },
}

impl DgpKind {
    pub fn default_categorical() -> Self {
        DgpKind::CategoricalLogit { minus: vec![[-0.5, 0.8], [-1.0, 0.4]], plus: vec![[-0.2, 0.8], [-1.2, 0.4]] }
    }

    pub fn name(&self) -> String {
        match self {
            DgpKind::SharpModel1 => "sharp_model1".into(),
            DgpKind::FuzzyModel => "fuzzy_model".into(),
            DgpKind::SharpCovModel2 => "sharp_cov_model2".into(),
            DgpKind::MultiOutcome { outcomes } => format!("multi_outcome:{outcomes}"),
            DgpKind::CategoricalLogit { .. } => "categorical_logit".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DgpKind::MultiOutcome { outcomes } if !(1..=3).contains(outcomes) => {
                Err(Error::Input(format!("multi-outcome design has 1 to 3 outcomes, got {outcomes}")))
            }
            DgpKind::CategoricalLogit { minus, plus } if minus.is_empty() || minus.len() != plus.len() => {
                Err(Error::Input("categorical coefficients need the same nonzero count per side".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase().replace('-', "_");
        let (head, arg) = match lower.split_once(':') {
            Some((h, a)) => (h.to_string(), Some(a.to_string())),
            None => (lower.clone(), None),
        };
        let kind = match head.as_str() {
            "sharp_model1" | "sharp" => DgpKind::SharpModel1,
            "fuzzy_model" | "fuzzy" => DgpKind::FuzzyModel,
            "sharp_cov_model2" | "sharp_cov" => DgpKind::SharpCovModel2,
            "multi_outcome" | "multi" => {
                let outcomes = match arg {
                    Some(a) => a.parse().map_err(|_| Error::Input(format!("bad outcome count '{a}'")))?,
                    None => 2,
                };
                DgpKind::MultiOutcome { outcomes }
            }
            "categorical_logit" | "categorical" => DgpKind::default_categorical(),
            other => return Err(Error::Input(format!("unknown DGP '{other}'"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

fn logit_probs(coefs: &[[f64; 2]], x: f64) -> Vec<f64> {
    let eta: Vec<f64> = coefs.iter().map(|c| c[0] + c[1] * x).collect();
    let shift = eta.iter().copied().fold(0.0_f64, f64::max);
    let e: Vec<f64> = eta.iter().map(|v| (v - shift).exp()).collect();
    let denom = (-shift).exp() + e.iter().sum::<f64>();
    e.iter().map(|v| v / denom).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
    pub truth: Vec<f64>,
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize, seed: u64) -> Result<Self> {
        if n < 100 {
            return Err(Error::Input(format!("simulated samples need n ≥ 100, got {n}")));
        }
        kind.validate()?;
        let truth = match &kind {
            DgpKind::SharpModel1 => vec![G1_PLUS[0] - G1_MINUS[0]],
            // both potential outcomes share the polynomial, so the effect is α₁ − α₀
            DgpKind::FuzzyModel => vec![G1_PLUS[0] - G1_MINUS[0]],
            DgpKind::SharpCovModel2 => {
                vec![MUY_PLUS[0] + BETA_PLUS * MUZ_PLUS[0] - MUY_MINUS[0] - BETA_MINUS * MUZ_MINUS[0]]
            }
            DgpKind::MultiOutcome { outcomes } => {
                let all = [G1_PLUS[0] - G1_MINUS[0], G2_PLUS[0] - G2_MINUS[0], G3_PLUS[0] - G3_MINUS[0]];
                all[..*outcomes].to_vec()
            }
            DgpKind::CategoricalLogit { minus, plus } => {
                let pp = logit_probs(plus, 0.0);
                let pm = logit_probs(minus, 0.0);
                pp.iter().zip(&pm).map(|(a, b)| a - b).collect()
            }
        };
        Ok(DgpSpec { kind, n, seed, truth })
    }

    pub fn outcome_names(&self) -> Vec<String> {
        match &self.kind {
            DgpKind::MultiOutcome { outcomes } => (1..=*outcomes).map(|j| format!("y{j}")).collect(),
            DgpKind::CategoricalLogit { plus, .. } => (1..=plus.len()).map(|j| format!("y{j}")).collect(),
            _ => vec!["y".into()],
        }
    }

    pub fn design_spec(&self) -> DesignSpec {
        let names = self.outcome_names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        match &self.kind {
            DgpKind::SharpModel1 => DesignSpec::sharp("y"),
            DgpKind::FuzzyModel => DesignSpec::fuzzy("y", "d"),
            DgpKind::SharpCovModel2 => DesignSpec::sharp_cov("y", &["z"]),
            DgpKind::MultiOutcome { .. } => DesignSpec::multi_outcome(&refs),
            DgpKind::CategoricalLogit { .. } => DesignSpec::categorical_sharp(&refs),
        }
    }

    /// Exact curvature constants of the design.
    pub fn true_curvature(&self) -> Result<CurvatureEstimates> {
        let (phi, phi1) = forcing_density(0.0);
        let zeta = |c: &[f64]| {
            let d = poly_at_zero(c);
            d[2] * phi + 2.0 * d[1] * phi1
        };
        let normal_kappa = [SIGMA * SIGMA, 0.0, 3.0 * SIGMA.powi(4)];
        let (kind, design) = match &self.kind {
            DgpKind::SharpModel1 | DgpKind::FuzzyModel => {
                let kind = if self.kind == DgpKind::SharpModel1 { DesignKind::Sharp } else { DesignKind::FuzzyAlt };
                let sc = ScalarCurvature {
                    zeta_plus: zeta(&G1_PLUS),
                    zeta_minus: zeta(&G1_MINUS),
                    kappa_plus: normal_kappa,
                    kappa_minus: normal_kappa,
                };
                (kind, DesignCurvature::Scalar(sc))
            }
            DgpKind::MultiOutcome { outcomes } => {
                let j = *outcomes;
                let polys = [(G1_PLUS, G1_MINUS), (G2_PLUS, G2_MINUS), (G3_PLUS, G3_MINUS)];
                let sigma = DMatrix::from_fn(j, j, |a, b| if a == b { SIGMA * SIGMA } else { MULTI_COV });
                let d4: Vec<DMatrix<f64>> = (0..j * j)
                    .map(|kl| {
                        let (k, l) = (kl / j, kl % j);
                        DMatrix::from_fn(j, j, |a, b| {
                            sigma[(k, l)] * sigma[(a, b)] + sigma[(k, a)] * sigma[(l, b)] + sigma[(k, b)] * sigma[(l, a)]
                        })
                    })
                    .collect();
                let d3 = vec![DMatrix::zeros(j, j); j];
                let mc = MultiCurvature {
                    zeta_plus: polys[..j].iter().map(|p| zeta(&p.0)).collect(),
                    zeta_minus: polys[..j].iter().map(|p| zeta(&p.1)).collect(),
                    d_plus: sigma.clone(),
                    d_minus: sigma,
                    d3_plus: d3.clone(),
                    d3_minus: d3,
                    d4_plus: d4.clone(),
                    d4_minus: d4,
                };
                (DesignKind::MultiOutcome, DesignCurvature::Multi(mc))
            }
            DgpKind::CategoricalLogit { minus, plus } => {
                let side = |coefs: &[[f64; 2]]| categorical_side(coefs, phi, phi1);
                let (zp, dp, d3p, d4p) = side(plus);
                let (zm, dm, d3m, d4m) = side(minus);
                let mc = MultiCurvature {
                    zeta_plus: zp,
                    zeta_minus: zm,
                    d_plus: dp,
                    d_minus: dm,
                    d3_plus: d3p,
                    d3_minus: d3m,
                    d4_plus: d4p,
                    d4_minus: d4m,
                };
                (DesignKind::CategoricalSharp, DesignCurvature::Multi(mc))
            }
            DgpKind::SharpCovModel2 => (DesignKind::SharpCov, DesignCurvature::Covariate(covariate_truth(phi, phi1)?)),
        };
        Ok(CurvatureEstimates { kind, phi, phi1, design, pilot: None })
    }

    /// Draws replication `rep`; stream `rep` of the ChaCha generator keyed by the seed.
    pub fn draw(&self, rep: u64) -> Result<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep);
        let g2 = Gamma::new(2.0, 1.0).expect("valid gamma");
        let g4 = Gamma::new(4.0, 1.0).expect("valid gamma");
        let n = self.n;
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = g2.sample(&mut rng);
            let b: f64 = g4.sample(&mut rng);
            x.push(2.0 * a / (a + b) - 1.0);
        }
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let pick = |x: f64, plus: &[f64], minus: &[f64]| if x >= 0.0 { poly_eval(plus, x) } else { poly_eval(minus, x) };
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        match &self.kind {
            DgpKind::SharpModel1 => {
                let y = x.iter().map(|&xi| pick(xi, &G1_PLUS, &G1_MINUS) + SIGMA * normal()).collect();
                columns.push(("y".into(), y));
            }
            DgpKind::FuzzyModel => {
                let mut y = Vec::with_capacity(n);
                let mut d = Vec::with_capacity(n);
                for &xi in &x {
                    let nu = normal();
                    let shift = if xi >= 0.0 { FUZZY_A } else { -FUZZY_A };
                    let di = if xi + shift >= nu { 1.0 } else { 0.0 };
                    let e0 = SIGMA * normal();
                    let e1 = SIGMA * normal();
                    // g_d differs from g₁ only through the intercept
                    let base = pick(xi, &G1_PLUS, &G1_MINUS) - if xi >= 0.0 { G1_PLUS[0] } else { G1_MINUS[0] };
                    let yi = if di == 1.0 { G1_PLUS[0] + base + e1 } else { G1_MINUS[0] + base + e0 };
                    y.push(yi);
                    d.push(di);
                }
                columns.push(("y".into(), y));
                columns.push(("d".into(), d));
            }
            DgpKind::SharpCovModel2 => {
                let mut y = Vec::with_capacity(n);
                let mut z = Vec::with_capacity(n);
                for &xi in &x {
                    let u = normal();
                    let v = normal();
                    let ez = SIGMA * u;
                    let ey = SIGMA * (COV_RHO * u + (1.0 - COV_RHO * COV_RHO).sqrt() * v);
                    let zi = pick(xi, &MUZ_PLUS, &MUZ_MINUS) + ez;
                    let beta = if xi >= 0.0 { BETA_PLUS } else { BETA_MINUS };
                    y.push(pick(xi, &MUY_PLUS, &MUY_MINUS) + beta * zi + ey);
                    z.push(zi);
                }
                columns.push(("y".into(), y));
                columns.push(("z".into(), z));
            }
            DgpKind::MultiOutcome { outcomes } => {
                let polys = [(G1_PLUS, G1_MINUS), (G2_PLUS, G2_MINUS), (G3_PLUS, G3_MINUS)];
                let common = MULTI_COV.sqrt();
                let own = (SIGMA * SIGMA - MULTI_COV).sqrt();
                let mut ys = vec![Vec::with_capacity(n); *outcomes];
                for &xi in &x {
                    let c = normal();
                    for (j, y) in ys.iter_mut().enumerate() {
                        y.push(pick(xi, &polys[j].0, &polys[j].1) + common * c + own * normal());
                    }
                }
                for (j, y) in ys.into_iter().enumerate() {
                    columns.push((format!("y{}", j + 1), y));
                }
            }
            DgpKind::CategoricalLogit { minus, plus } => {
                let k = plus.len();
                let mut ys = vec![vec![0.0; n]; k];
                for (i, &xi) in x.iter().enumerate() {
                    let p = if xi >= 0.0 { logit_probs(plus, xi) } else { logit_probs(minus, xi) };
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (j, pj) in p.iter().enumerate() {
                        acc += pj;
                        if u < acc {
                            ys[j][i] = 1.0;
                            break;
                        }
                    }
                }
                for (j, y) in ys.into_iter().enumerate() {
                    columns.push((format!("y{}", j + 1), y));
                }
            }
        }
        let mut sample = Sample::new(x, 0.0)?;
        for (name, values) in columns {
            sample = sample.with_column(&name, values)?;
        }
        Ok(sample)
    }
}

/// Sample for replication 0.
pub fn generate(dgp: &DgpSpec) -> Result<Sample> {
    dgp.draw(0)
}

#[allow(clippy::type_complexity)]
fn categorical_side(
    coefs: &[[f64; 2]],
    phi: f64,
    phi1: f64,
) -> (Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let j = coefs.len();
    let p = logit_probs(coefs, 0.0);
    let b: Vec<f64> = coefs.iter().map(|c| c[1]).collect();
    let bbar: f64 = p.iter().zip(&b).map(|(p, b)| p * b).sum();
    let d1: Vec<f64> = (0..j).map(|a| p[a] * (b[a] - bbar)).collect();
    let bbar1: f64 = d1.iter().zip(&b).map(|(p, b)| p * b).sum();
    let d2: Vec<f64> = (0..j).map(|a| d1[a] * (b[a] - bbar) - p[a] * bbar1).collect();
    let zeta = (0..j).map(|a| d2[a] * phi + 2.0 * d1[a] * phi1).collect();

    // atoms: base category (all zeros) and each indicator
    let p0 = 1.0 - p.iter().sum::<f64>();
    let mut atoms: Vec<(f64, Vec<f64>)> = vec![(p0, p.iter().map(|v| -v).collect())];
    for a in 0..j {
        let mut e: Vec<f64> = p.iter().map(|v| -v).collect();
        e[a] += 1.0;
        atoms.push((p[a], e));
    }
    let moment = |idx: &[usize]| -> f64 { atoms.iter().map(|(w, e)| w * idx.iter().map(|&i| e[i]).product::<f64>()).sum() };
    let d = DMatrix::from_fn(j, j, |a, c| moment(&[a, c]));
    let d3 = (0..j).map(|k| DMatrix::from_fn(j, j, |a, c| moment(&[k, a, c]))).collect();
    let d4 = (0..j * j).map(|kl| DMatrix::from_fn(j, j, |a, c| moment(&[kl / j, kl % j, a, c]))).collect();
    (zeta, d, d3, d4)
}

fn covariate_truth(phi: f64, phi1: f64) -> Result<crate::bandwidth::CovariateCurvature> {
    let cov_ez_ey = COV_RHO * SIGMA * SIGMA;
    let side = |muy: &[f64], muz: &[f64], beta: f64| -> CovariateSideMoments {
        let y_poly = poly_add(muy, &poly_scale(muz, beta));
        let zz = poly_add(&poly_mul(muz, muz), &[SIGMA * SIGMA]);
        let zy = poly_add(&poly_add(&poly_mul(muz, muy), &poly_scale(&zz, beta)), &[cov_ez_ey]);
        CovariateSideMoments {
            y: poly_at_zero(&y_poly),
            z: vec![poly_at_zero(muz)],
            zy: vec![poly_at_zero(&zy)],
            zz: vec![vec![poly_at_zero(&zz)]],
        }
    };
    let sides = [side(&MUY_PLUS, &MUZ_PLUS, BETA_PLUS), side(&MUY_MINUS, &MUZ_MINUS, BETA_MINUS)];
    let (nodes, weights) = gauss_hermite(GH_NODES);
    covariate_curvature(phi, phi1, &sides, &mut |resid, s, k, idx| {
        let (muy, muz, beta) = match s {
            Side::Plus => (MUY_PLUS[0], MUZ_PLUS[0], BETA_PLUS),
            Side::Minus => (MUY_MINUS[0], MUZ_MINUS[0], BETA_MINUS),
        };
        let mut acc = 0.0;
        for (u, wu) in nodes.iter().zip(&weights) {
            for (v, wv) in nodes.iter().zip(&weights) {
                let z = muz + SIGMA * u;
                let ey = SIGMA * (COV_RHO * u + (1.0 - COV_RHO * COV_RHO).sqrt() * v);
                let y = muy + beta * z + ey;
                let e = resid.eval(s, y, &[z]);
                acc += wu * wv * e.powi(k as i32) * z.powi(idx.len() as i32);
            }
        }
        Ok(acc)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    TrueConstants,
    Estimated,
}

impl BandwidthMode {
    fn tag(self) -> &'static str {
        match self {
            BandwidthMode::TrueConstants => "CO_tr",
            BandwidthMode::Estimated => "CO",
        }
    }
}

impl FromStr for BandwidthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "true" | "true_constants" | "tr" => Ok(BandwidthMode::TrueConstants),
            "estimated" | "est" => Ok(BandwidthMode::Estimated),
            other => Err(Error::Input(format!("unknown bandwidth mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub replications: usize,
    pub levels: Vec<f64>,
    pub modes: Vec<BandwidthMode>,
    pub kernel: Kernel,
    /// Invert intervals for mean lengths; coverage itself only needs LR at the truth.
    pub intervals: bool,
    /// Worker threads; falls back to EL_RDD_THREADS, then to rayon's default.
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replications: 2000,
            levels: vec![0.90, 0.95, 0.99],
            modes: vec![BandwidthMode::TrueConstants, BandwidthMode::Estimated],
            kernel: Kernel::Triangular,
            intervals: true,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub mode: BandwidthMode,
    pub bartlett: bool,
    /// EL CO_tr, EL CO, ELB CO_tr or ELB CO.
    pub label: String,
    pub level: f64,
    pub coverage: f64,
    pub se: f64,
    /// Mean interval length over bounded intervals; absent for joint designs.
    pub mean_length: Option<f64>,
    /// Replications whose interval ran past the search cap.
    pub unbounded: usize,
    pub mean_h: f64,
    pub mean_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub design: String,
    pub n: usize,
    pub seed: u64,
    pub truth: Vec<f64>,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    /// True-constant plan shared by every replication, when requested.
    pub true_plan: Option<BandwidthPlan>,
    pub rows: Vec<CoverageRow>,
    pub failure_messages: Vec<String>,
}

impl CoverageReport {
    pub fn row(&self, mode: BandwidthMode, bartlett: bool, level: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.mode == mode && r.bartlett == bartlett && r.level == level)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("design,n,replications,failures,label,mode,bartlett,level,coverage,se,mean_length,unbounded,mean_h,mean_factor\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{:.6},{:.6},{},{},{:.6},{:.6}\n",
                self.design,
                self.n,
                self.replications,
                self.failures,
                r.label,
                r.mode.tag(),
                r.bartlett,
                r.level,
                r.coverage,
                r.se,
                r.mean_length.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.unbounded,
                r.mean_h,
                r.mean_factor
            ));
        }
        out
    }
}

/// One mode's outcome in one replication.
#[derive(Debug, Clone)]
struct RepOutcome {
    h: f64,
    factor: f64,
    /// Covered at each level, uncorrected then corrected.
    covered: Vec<[bool; 2]>,
    lengths: Vec<[Option<f64>; 2]>,
}

fn run_replication(
    dgp: &DgpSpec,
    rep: u64,
    spec: &DesignSpec,
    true_plan: Option<&(BandwidthPlan, CurvatureEstimates)>,
    config: &StudyConfig,
) -> Result<Vec<RepOutcome>> {
    let sample = dgp.draw(rep)?;
    let analysis = AnalysisConfig {
        kernel: config.kernel,
        levels: config.levels.clone(),
        bartlett: true,
        null: Some(dgp.truth.clone()),
        intervals: config.intervals,
        ..AnalysisConfig::default()
    };
    let mut out = Vec::with_capacity(config.modes.len());
    for mode in &config.modes {
        let (plan, curv) = match mode {
            BandwidthMode::TrueConstants => true_plan.cloned().expect("true plan computed up front"),
            BandwidthMode::Estimated => {
                let est = estimate_curvature(spec, &sample, config.kernel)?;
                (coverage_optimal_bandwidth(spec, &est, config.kernel.constants(), sample.n())?, est)
            }
        };
        let r = analyze_with_plan(&sample, spec, plan, curv, &analysis)?;
        let d_rho = dgp.truth.len();
        let mut covered = Vec::with_capacity(config.levels.len());
        let mut lengths = Vec::with_capacity(config.levels.len());
        for &level in &config.levels {
            let q = crate::inference::chi2_quantile(level, d_rho)?;
            covered.push([r.lr_at_null <= q, r.lr_at_null / r.factor <= q]);
            // Unbounded intervals are kept as +∞ so they can be counted.
            let len = |b: bool| r.interval(level, b).map(|c| if c.is_bounded() { c.length() } else { f64::INFINITY });
            let corrected = if r.bartlett_applied { len(true) } else { len(false) };
            lengths.push([len(false), corrected]);
        }
        out.push(RepOutcome { h: r.plan.h, factor: r.factor, covered, lengths });
    }
    Ok(out)
}

fn thread_count(config: &StudyConfig) -> Option<usize> {
    config
        .threads
        .or_else(|| std::env::var("EL_RDD_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|&t| t > 0)
}

/// Coverage of the truth over seeded replications.
pub fn run_coverage_study(dgp: &DgpSpec, config: &StudyConfig) -> Result<CoverageReport> {
    if config.replications < 1 {
        return Err(Error::Input("at least one replication is required".into()));
    }
    if config.modes.is_empty() {
        return Err(Error::Input("at least one bandwidth mode is required".into()));
    }
    if config.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::Input("levels must lie in (0, 1)".into()));
    }
    let spec = dgp.design_spec();
    let true_plan = if config.modes.contains(&BandwidthMode::TrueConstants) {
        let curv = dgp.true_curvature()?;
        let plan = coverage_optimal_bandwidth(&spec, &curv, config.kernel.constants(), dgp.n)?;
        Some((plan, curv))
    } else {
        None
    };

    let work = || -> Vec<Result<Vec<RepOutcome>>> {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|rep| run_replication(dgp, rep, &spec, true_plan.as_ref(), config))
            .collect()
    };
    let results = match thread_count(config) {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut ok = Vec::with_capacity(results.len());
    let mut failure_messages = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                if failure_messages.len() < 20 {
                    failure_messages.push(format!("replication {rep}: {e}"));
                }
            }
        }
    }
    let failures = config.replications - ok.len();
    if failures as f64 > MAX_FAILURE_RATE * config.replications as f64 {
        return Err(Error::Numerical(format!(
            "{failures} of {} replications failed; first: {}",
            config.replications,
            failure_messages.first().cloned().unwrap_or_default()
        )));
    }

    let mut rows = Vec::new();
    let s = ok.len() as f64;
    for (m, &mode) in config.modes.iter().enumerate() {
        let mean_h = ok.iter().map(|v| v[m].h).sum::<f64>() / s;
        let mean_factor = ok.iter().map(|v| v[m].factor).sum::<f64>() / s;
        for b in [false, true] {
            for (l, &level) in config.levels.iter().enumerate() {
                let hits = ok.iter().filter(|v| v[m].covered[l][b as usize]).count() as f64;
                let coverage = hits / s;
                let all: Vec<f64> = ok.iter().filter_map(|v| v[m].lengths[l][b as usize]).collect();
                let lens: Vec<f64> = all.iter().copied().filter(|v| v.is_finite()).collect();
                let unbounded = all.len() - lens.len();
                let mean_length = (!lens.is_empty()).then(|| lens.iter().sum::<f64>() / lens.len() as f64);
                rows.push(CoverageRow {
                    mode,
                    bartlett: b,
                    label: format!("{} {}", if b { "ELB" } else { "EL" }, mode.tag()),
                    level,
                    coverage,
                    se: (coverage * (1.0 - coverage) / s).sqrt(),
                    mean_length,
                    unbounded,
                    mean_h,
                    mean_factor,
                });
            }
        }
    }
    Ok(CoverageReport {
        design: dgp.kind.name(),
        n: dgp.n,
        seed: dgp.seed,
        truth: dgp.truth.clone(),
        replications: config.replications,
        successes: ok.len(),
        failures,
        true_plan: true_plan.map(|p| p.0),
        rows,
        failure_messages,
    })
}
