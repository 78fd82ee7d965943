//! Moment systems for the supported discontinuity designs.
//!
//! Each design maps an observation to blocks (V₁, G₁, V₂, G₂, V₃, G₃) with
//! moment vector
//!
//! ```text
//! U_i(θ) = ( W₊(V₁ − G₁θ) ; W₋(V₂ − G₂θ) ; (W₊ + W₋)(V₃ − G₃θ) )
//! ```
//!
//! and a linear restriction ρ(θ) = Aθ = τ. The parameter of interest always
//! occupies the leading d_ρ coordinates of θ, so the restriction can be
//! solved for θ† given the nuisance block θ‡.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localfit::{Sample, Side, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Sharp,
    #[serde(rename = "fuzzy")]
    FuzzyAlt,
    SharpCov,
    #[serde(rename = "fuzzy_cov")]
    FuzzyCovAlt,
    MultiOutcome,
    CategoricalSharp,
    CategoricalFuzzy,
    BalanceTest,
}

impl DesignKind {
    pub const ALL: [DesignKind; 8] = [
        DesignKind::Sharp,
        DesignKind::FuzzyAlt,
        DesignKind::SharpCov,
        DesignKind::FuzzyCovAlt,
        DesignKind::MultiOutcome,
        DesignKind::CategoricalSharp,
        DesignKind::CategoricalFuzzy,
        DesignKind::BalanceTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Sharp => "sharp",
            DesignKind::FuzzyAlt => "fuzzy",
            DesignKind::SharpCov => "sharp_cov",
            DesignKind::FuzzyCovAlt => "fuzzy_cov",
            DesignKind::MultiOutcome => "multi_outcome",
            DesignKind::CategoricalSharp => "categorical_sharp",
            DesignKind::CategoricalFuzzy => "categorical_fuzzy",
            DesignKind::BalanceTest => "balance_test",
        }
    }

    pub fn is_fuzzy(self) -> bool {
        matches!(self, DesignKind::FuzzyAlt | DesignKind::FuzzyCovAlt | DesignKind::CategoricalFuzzy)
    }

    pub fn has_covariates(self) -> bool {
        matches!(self, DesignKind::SharpCov | DesignKind::FuzzyCovAlt)
    }

    pub fn is_categorical(self) -> bool {
        matches!(self, DesignKind::CategoricalSharp | DesignKind::CategoricalFuzzy)
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sharp" => DesignKind::Sharp,
            "fuzzy" | "fuzzy_alt" => DesignKind::FuzzyAlt,
            "sharp_cov" => DesignKind::SharpCov,
            "fuzzy_cov" | "fuzzy_cov_alt" => DesignKind::FuzzyCovAlt,
            "multi" | "multi_outcome" => DesignKind::MultiOutcome,
            "categorical" | "categorical_sharp" => DesignKind::CategoricalSharp,
            "categorical_fuzzy" => DesignKind::CategoricalFuzzy,
            "balance" | "balance_test" => DesignKind::BalanceTest,
            other => return Err(Error::Input(format!("unknown design '{other}'"))),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub outcome_columns: Vec<String>,
    pub treatment_column: Option<String>,
    pub covariate_columns: Vec<String>,
}

fn owned(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

impl DesignSpec {
    pub fn sharp(y: &str) -> Self {
        Self::new(DesignKind::Sharp, &[y], None, &[])
    }

    pub fn fuzzy(y: &str, d: &str) -> Self {
        Self::new(DesignKind::FuzzyAlt, &[y], Some(d), &[])
    }

    pub fn sharp_cov(y: &str, z: &[&str]) -> Self {
        Self::new(DesignKind::SharpCov, &[y], None, z)
    }

    pub fn fuzzy_cov(y: &str, d: &str, z: &[&str]) -> Self {
        Self::new(DesignKind::FuzzyCovAlt, &[y], Some(d), z)
    }

    pub fn multi_outcome(ys: &[&str]) -> Self {
        Self::new(DesignKind::MultiOutcome, ys, None, &[])
    }

    pub fn categorical_sharp(ys: &[&str]) -> Self {
        Self::new(DesignKind::CategoricalSharp, ys, None, &[])
    }

    pub fn categorical_fuzzy(ys: &[&str], d: &str) -> Self {
        Self::new(DesignKind::CategoricalFuzzy, ys, Some(d), &[])
    }

    /// Covariate balance: the covariates play the role of outcomes.
    pub fn balance(z: &[&str]) -> Self {
        Self::new(DesignKind::BalanceTest, &[], None, z)
    }

    pub fn new(kind: DesignKind, outcomes: &[&str], treatment: Option<&str>, covariates: &[&str]) -> Self {
        DesignSpec {
            kind,
            outcome_columns: owned(outcomes),
            treatment_column: treatment.map(str::to_string),
            covariate_columns: owned(covariates),
        }
    }

    /// Columns whose jump is the target, in parameter order.
    pub fn target_columns(&self) -> &[String] {
        match self.kind {
            DesignKind::BalanceTest => &self.covariate_columns,
            _ => &self.outcome_columns,
        }
    }

    pub fn d_rho(&self) -> usize {
        match self.kind {
            DesignKind::Sharp | DesignKind::FuzzyAlt | DesignKind::SharpCov | DesignKind::FuzzyCovAlt => 1,
            _ => self.target_columns().len(),
        }
    }

    pub fn validate(&self, sample: &Sample) -> Result<()> {
        let targets = self.target_columns();
        match self.kind {
            DesignKind::Sharp | DesignKind::FuzzyAlt | DesignKind::SharpCov | DesignKind::FuzzyCovAlt => {
                if self.outcome_columns.len() != 1 {
                    return Err(Error::Input(format!("design {} needs exactly one outcome", self.kind)));
                }
            }
            _ => {
                if targets.is_empty() {
                    return Err(Error::Input(format!("design {} needs at least one target column", self.kind)));
                }
            }
        }
        if self.kind.is_fuzzy() {
            let d = self
                .treatment_column
                .as_deref()
                .ok_or_else(|| Error::Input(format!("design {} needs a treatment column", self.kind)))?;
            check_binary(sample, d)?;
        }
        if self.kind.has_covariates() && self.covariate_columns.is_empty() {
            return Err(Error::Input(format!("design {} needs at least one covariate", self.kind)));
        }
        for col in self.outcome_columns.iter().chain(&self.covariate_columns) {
            sample.column(col)?;
        }
        if self.kind.is_categorical() {
            for col in &self.outcome_columns {
                check_binary(sample, col)?;
            }
            for i in 0..sample.n() {
                let total: f64 = self.outcome_columns.iter().map(|c| sample.columns[c][i]).sum();
                if total > 1.0 {
                    return Err(Error::Input(format!(
                        "categorical outcome columns are not mutually exclusive at row {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_binary(sample: &Sample, name: &str) -> Result<()> {
    let col = sample.column(name)?;
    if let Some(i) = col.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input(format!("column '{name}' must be binary (0/1), found {} at row {i}", col[i])));
    }
    Ok(())
}

/// Linear restriction ρ(θ) = Aθ solved for the leading block:
/// θ† = A†⁻¹τ + Ψ‡θ‡ with Ψ‡ = −A†⁻¹A‡.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub rho: DMatrix<f64>,
    a_dag_inv: DMatrix<f64>,
    pub psi: DMatrix<f64>,
}

impl AffineConstraint {
    pub fn new(rho: DMatrix<f64>) -> Result<Self> {
        let (dr, d) = rho.shape();
        let a_dag = rho.view((0, 0), (dr, dr)).into_owned();
        let a_dd = rho.view((0, dr), (dr, d - dr)).into_owned();
        let a_dag_inv = a_dag
            .try_inverse()
            .ok_or_else(|| Error::Input("restriction is not solvable for the leading parameters".into()))?;
        let psi = -(&a_dag_inv * a_dd);
        Ok(AffineConstraint { rho, a_dag_inv, psi })
    }

    pub fn d(&self) -> usize {
        self.rho.ncols()
    }

    pub fn d_rho(&self) -> usize {
        self.rho.nrows()
    }

    pub fn psi0(&self, tau: &DVector<f64>) -> DVector<f64> {
        &self.a_dag_inv * tau
    }

    /// Full θ from τ and the nuisance block.
    pub fn theta(&self, tau: &DVector<f64>, nuisance: &DVector<f64>) -> DVector<f64> {
        let dr = self.d_rho();
        let head = self.psi0(tau) + &self.psi * nuisance;
        let mut theta = DVector::zeros(self.d());
        theta.rows_mut(0, dr).copy_from(&head);
        theta.rows_mut(dr, self.d() - dr).copy_from(nuisance);
        theta
    }

    /// Δ = (Ψ‡; I), the Jacobian of θ with respect to θ‡.
    pub fn delta(&self) -> DMatrix<f64> {
        let dr = self.d_rho();
        let p = self.d() - dr;
        let mut delta = DMatrix::zeros(self.d(), p);
        delta.view_mut((0, 0), (dr, p)).copy_from(&self.psi);
        delta.view_mut((dr, 0), (p, p)).fill_with_identity();
        delta
    }

    pub fn evaluate(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.rho * theta
    }
}

/// Smooth map from unconstrained coordinates to the nuisance block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reparam {
    Identity,
    /// θ‡_j = exp(ω_j)/(1 + Σ exp(ω)); keeps category probabilities in the simplex.
    Logistic,
}

#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub kind: DesignKind,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    pub constraint: AffineConstraint,
    pub reparam: Reparam,
    n: usize,
    x: Vec<f64>,
    cutoff: f64,
    // Row-major per observation: v[i*dk + r], g[(i*dk + r)*d + col].
    v: [Vec<f64>; 3],
    g: [Vec<f64>; 3],
}

/// Moment vectors restricted to observations with nonzero weight, in the
/// affine form u_i(θ) = a_i − B_i θ. Observations outside the window have
/// u_i = 0 and contribute nothing to the dual criterion.
#[derive(Debug, Clone)]
pub struct ActiveMoments {
    pub d: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub index: Vec<usize>,
}

impl ActiveMoments {
    pub fn a_row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn b_block(&self, i: usize) -> &[f64] {
        let dd = self.d * self.d;
        &self.b[i * dd..(i + 1) * dd]
    }

    /// All u_i(θ), row-major m × d.
    pub fn moments(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut u = self.a.clone();
        for i in 0..self.m {
            let b = self.b_block(i);
            let row = &mut u[i * d..(i + 1) * d];
            for (r, out) in row.iter_mut().enumerate() {
                let brow = &b[r * d..(r + 1) * d];
                *out -= brow.iter().zip(theta).map(|(x, t)| x * t).sum::<f64>();
            }
        }
        u
    }

    pub fn sum_a(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.d);
        for i in 0..self.m {
            for (r, v) in self.a_row(i).iter().enumerate() {
                s[r] += v;
            }
        }
        s
    }

    pub fn sum_b(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut s = DMatrix::zeros(d, d);
        for i in 0..self.m {
            let b = self.b_block(i);
            for r in 0..d {
                for c in 0..d {
                    s[(r, c)] += b[r * d + c];
                }
            }
        }
        s
    }
}

impl MomentSystem {
    pub fn d(&self) -> usize {
        self.d1 + self.d2 + self.d3
    }

    pub fn d_rho(&self) -> usize {
        self.constraint.d_rho()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stacked moment vector of observation `i` at θ.
    pub fn eval_blocks(&self, i: usize, theta: &[f64], weights: &WeightVector) -> Vec<f64> {
        let d = self.d();
        let mut out = Vec::with_capacity(d);
        let (wp, wm) = (weights.w_plus[i], weights.w_minus[i]);
        for (blk, w) in [(0, wp), (1, wm), (2, wp + wm)] {
            let dk = [self.d1, self.d2, self.d3][blk];
            for r in 0..dk {
                let g = &self.g[blk][(i * dk + r) * d..(i * dk + r + 1) * d];
                let fit: f64 = g.iter().zip(theta).map(|(a, b)| a * b).sum();
                out.push(w * (self.v[blk][i * dk + r] - fit));
            }
        }
        out
    }

    pub fn activate(&self, weights: &WeightVector) -> ActiveMoments {
        let d = self.d();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut index = Vec::new();
        for i in 0..self.n {
            let (wp, wm) = (weights.w_plus[i], weights.w_minus[i]);
            if wp == 0.0 && wm == 0.0 {
                continue;
            }
            index.push(i);
            for (blk, w) in [(0, wp), (1, wm), (2, wp + wm)] {
                let dk = [self.d1, self.d2, self.d3][blk];
                for r in 0..dk {
                    a.push(w * self.v[blk][i * dk + r]);
                    let g = &self.g[blk][(i * dk + r) * d..(i * dk + r + 1) * d];
                    b.extend(g.iter().map(|x| w * x));
                }
            }
        }
        ActiveMoments { d, m: index.len(), a, b, index }
    }

    /// Rows of the sample actually stored in the system.
    pub fn forcing(&self) -> (&[f64], f64) {
        (&self.x, self.cutoff)
    }
}

struct Builder {
    n: usize,
    d: usize,
    dims: [usize; 3],
    v: [Vec<f64>; 3],
    g: [Vec<f64>; 3],
}

impl Builder {
    fn new(n: usize, d: usize, dims: [usize; 3]) -> Self {
        let v = dims.map(|dk| vec![0.0; n * dk]);
        let g = dims.map(|dk| vec![0.0; n * dk * d]);
        Builder { n, d, dims, v, g }
    }

    fn set_v(&mut self, blk: usize, i: usize, r: usize, value: f64) {
        self.v[blk][i * self.dims[blk] + r] = value;
    }

    fn set_g(&mut self, blk: usize, i: usize, r: usize, col: usize, value: f64) {
        self.g[blk][(i * self.dims[blk] + r) * self.d + col] = value;
    }
}

pub fn build_moment_system(spec: &DesignSpec, sample: &Sample) -> Result<MomentSystem> {
    spec.validate(sample)?;
    let n = sample.n();
    let c = sample.cutoff;
    let cols = |names: &[String]| -> Result<Vec<&[f64]>> { names.iter().map(|s| sample.column(s)).collect() };
    let targets = cols(spec.target_columns())?;
    let treat = match &spec.treatment_column {
        Some(name) if spec.kind.is_fuzzy() => Some(sample.column(name)?),
        _ => None,
    };
    let covs = cols(&spec.covariate_columns)?;

    let (builder, rho, reparam) = match spec.kind {
        DesignKind::Sharp | DesignKind::MultiOutcome | DesignKind::CategoricalSharp | DesignKind::BalanceTest => {
            // θ = (g₊ (J), g₋ (J)), ρ = g₊ − g₋
            let j = targets.len();
            let d = 2 * j;
            let mut b = Builder::new(n, d, [j, j, 0]);
            for i in 0..n {
                for (r, y) in targets.iter().enumerate() {
                    b.set_v(0, i, r, y[i]);
                    b.set_v(1, i, r, y[i]);
                    b.set_g(0, i, r, r, 1.0);
                    b.set_g(1, i, r, j + r, 1.0);
                }
            }
            let mut rho = DMatrix::zeros(j, d);
            for r in 0..j {
                rho[(r, r)] = 1.0;
                rho[(r, j + r)] = -1.0;
            }
            let reparam = if spec.kind == DesignKind::CategoricalSharp { Reparam::Logistic } else { Reparam::Identity };
            (b, rho, reparam)
        }
        DesignKind::FuzzyAlt | DesignKind::CategoricalFuzzy => {
            // θ = (τ (J), g₀ (J)), residual Y − τD − g₀
            let dcol = treat.expect("validated treatment column");
            let j = targets.len();
            let d = 2 * j;
            let mut b = Builder::new(n, d, [j, j, 0]);
            for i in 0..n {
                for (r, y) in targets.iter().enumerate() {
                    for blk in 0..2 {
                        b.set_v(blk, i, r, y[i]);
                        b.set_g(blk, i, r, r, dcol[i]);
                        b.set_g(blk, i, r, j + r, 1.0);
                    }
                }
            }
            let mut rho = DMatrix::zeros(j, d);
            for r in 0..j {
                rho[(r, r)] = 1.0;
            }
            (b, rho, Reparam::Identity)
        }
        DesignKind::SharpCov => {
            // θ = (g₊, g₋, g_Z)
            let y = targets[0];
            let dz = covs.len();
            let d = 2 + dz;
            let mut b = Builder::new(n, d, [1, 1, dz]);
            for i in 0..n {
                let plus = if Side::Plus.contains(sample.x[i], c) { 1.0 } else { 0.0 };
                for blk in 0..2 {
                    b.set_v(blk, i, 0, y[i]);
                    b.set_g(blk, i, 0, blk, 1.0);
                    for (k, z) in covs.iter().enumerate() {
                        b.set_g(blk, i, 0, 2 + k, z[i]);
                    }
                }
                for (r, zr) in covs.iter().enumerate() {
                    b.set_v(2, i, r, zr[i] * y[i]);
                    b.set_g(2, i, r, 0, zr[i] * plus);
                    b.set_g(2, i, r, 1, zr[i] * (1.0 - plus));
                    for (k, zk) in covs.iter().enumerate() {
                        b.set_g(2, i, r, 2 + k, zr[i] * zk[i]);
                    }
                }
            }
            let mut rho = DMatrix::zeros(1, d);
            rho[(0, 0)] = 1.0;
            rho[(0, 1)] = -1.0;
            (b, rho, Reparam::Identity)
        }
        DesignKind::FuzzyCovAlt => {
            // θ = (τ, g, g_Z), residual Y − τD − g − Zᵀg_Z
            let y = targets[0];
            let dcol = treat.expect("validated treatment column");
            let dz = covs.len();
            let d = 2 + dz;
            let mut b = Builder::new(n, d, [1, 1, dz]);
            for i in 0..n {
                for blk in 0..2 {
                    b.set_v(blk, i, 0, y[i]);
                    b.set_g(blk, i, 0, 0, dcol[i]);
                    b.set_g(blk, i, 0, 1, 1.0);
                    for (k, z) in covs.iter().enumerate() {
                        b.set_g(blk, i, 0, 2 + k, z[i]);
                    }
                }
                for (r, zr) in covs.iter().enumerate() {
                    b.set_v(2, i, r, zr[i] * y[i]);
                    b.set_g(2, i, r, 0, zr[i] * dcol[i]);
                    b.set_g(2, i, r, 1, zr[i]);
                    for (k, zk) in covs.iter().enumerate() {
                        b.set_g(2, i, r, 2 + k, zr[i] * zk[i]);
                    }
                }
            }
            let mut rho = DMatrix::zeros(1, d);
            rho[(0, 0)] = 1.0;
            (b, rho, Reparam::Identity)
        }
    };

    let Builder { n, dims, v, g, .. } = builder;
    Ok(MomentSystem {
        kind: spec.kind,
        d1: dims[0],
        d2: dims[1],
        d3: dims[2],
        constraint: AffineConstraint::new(rho)?,
        reparam,
        n,
        x: sample.x.clone(),
        cutoff: c,
        v,
        g,
    })
}
