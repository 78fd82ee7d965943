//! Observation weights, one-sided local polynomial fits and density pilots.
//!
//! Weights follow the convention that `W` carries only the indicator and
//! kernel part; the `1/h` factor is applied wherever a moment average is
//! formed.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Kernel, KernelConstants};

pub const DEFAULT_MIN_SIDE_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Plus, Side::Minus];

    /// Ties at the cutoff belong to the plus side.
    #[inline]
    pub fn contains(self, x: f64, cutoff: f64) -> bool {
        match self {
            Side::Plus => x >= cutoff,
            Side::Minus => x < cutoff,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Minus => "minus",
            Side::Plus => "plus",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub columns: BTreeMap<String, Vec<f64>>,
    pub cutoff: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, cutoff: f64) -> Result<Self> {
        if !cutoff.is_finite() {
            return Err(Error::Input("cutoff must be finite".into()));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("forcing variable is not finite at row {i}")));
        }
        Ok(Sample { x, columns: BTreeMap::new(), cutoff })
    }

    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.x.len() {
            return Err(Error::Input(format!(
                "column '{name}' has {} rows, forcing variable has {}",
                values.len(),
                self.x.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("column '{name}' is not finite at row {i}")));
        }
        self.columns.insert(name.to_string(), values);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("no column named '{name}'")))
    }

    /// Count of observations on `side` with |X - c| <= h.
    pub fn window_count(&self, side: Side, h: f64) -> usize {
        let c = self.cutoff;
        self.x
            .iter()
            .filter(|&&x| side.contains(x, c) && (x - c).abs() <= h)
            .count()
    }

    pub fn side_count(&self, side: Side) -> usize {
        self.x.iter().filter(|&&x| side.contains(x, self.cutoff)).count()
    }

    /// Smallest h whose window holds at least `count` points on each side.
    pub fn min_bandwidth_for(&self, count: usize) -> Option<f64> {
        let c = self.cutoff;
        let mut best: f64 = 0.0;
        for side in Side::BOTH {
            let mut d: Vec<f64> = self
                .x
                .iter()
                .filter(|&&x| side.contains(x, c))
                .map(|&x| (x - c).abs())
                .collect();
            if d.len() < count || count == 0 {
                if count == 0 {
                    continue;
                }
                return None;
            }
            d.sort_by(f64::total_cmp);
            best = best.max(d[count - 1]);
        }
        Some(best)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w_plus: Vec<f64>,
    pub w_minus: Vec<f64>,
    pub bandwidth: f64,
    pub order: usize,
}

/// Coefficients a with W = Σ a_j u^j K(u), i.e. a = M_{p,r}⁻¹ e₁.
fn boundary_coefficients(constants: &KernelConstants, side: Side, p: usize) -> Result<DVector<f64>> {
    if 2 * p > constants.max_moment() {
        return Err(Error::Input(format!("weight order {p} exceeds cached kernel moments")));
    }
    let m = DMatrix::from_fn(p + 1, p + 1, |k, l| constants.m(side, k + l));
    let mut e1 = DVector::zeros(p + 1);
    e1[0] = 1.0;
    m.lu()
        .solve(&e1)
        .ok_or_else(|| Error::Numerical("singular kernel moment matrix".into()))
}

pub fn build_weights(
    sample: &Sample,
    h: f64,
    constants: &KernelConstants,
    order: usize,
) -> Result<WeightVector> {
    build_weights_with(sample, h, constants, order, DEFAULT_MIN_SIDE_COUNT)
}

pub fn build_weights_with(
    sample: &Sample,
    h: f64,
    constants: &KernelConstants,
    order: usize,
    min_side_count: usize,
) -> Result<WeightVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Input(format!("bandwidth must be positive, got {h}")));
    }
    if order == 0 {
        return Err(Error::Input("weight order must be at least 1".into()));
    }
    for side in Side::BOTH {
        let count = sample.window_count(side, h);
        if count < min_side_count {
            return Err(Error::DataSupport { side, count, needed: min_side_count });
        }
    }
    let a_plus = boundary_coefficients(constants, Side::Plus, order)?;
    let a_minus = boundary_coefficients(constants, Side::Minus, order)?;
    let kernel = constants.kernel;
    let poly = |a: &DVector<f64>, u: f64| a.iter().rev().fold(0.0, |acc, &c| acc * u + c);

    let c = sample.cutoff;
    let n = sample.n();
    let mut w_plus = vec![0.0; n];
    let mut w_minus = vec![0.0; n];
    for (i, &x) in sample.x.iter().enumerate() {
        let u = (x - c) / h;
        let k = kernel.evaluate(u);
        if k == 0.0 {
            continue;
        }
        if Side::Plus.contains(x, c) {
            w_plus[i] = poly(&a_plus, u) * k;
        } else {
            w_minus[i] = poly(&a_minus, u) * k;
        }
    }
    Ok(WeightVector { w_plus, w_minus, bandwidth: h, order })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub order: usize,
    pub side: Side,
    pub bandwidth_used: f64,
}

/// Linear smoother for the k-th derivative at the cutoff from a one-sided
/// local polynomial fit of order `p`.
///
/// Many columns share the same window, so the smoother weights are computed
/// once and applied with [`LocalSmoother::apply`].
#[derive(Debug, Clone)]
pub struct LocalSmoother {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub k: usize,
    pub side: Side,
    pub bandwidth: f64,
}

impl LocalSmoother {
    pub fn new(x: &[f64], cutoff: f64, side: Side, k: usize, p: usize, h: f64, kernel: Kernel) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Input(format!("bandwidth must be positive, got {h}")));
        }
        if k > p {
            return Err(Error::Input(format!("derivative order {k} exceeds polynomial order {p}")));
        }
        let mut indices = Vec::new();
        let mut kw = Vec::new();
        for (i, &xi) in x.iter().enumerate() {
            if !side.contains(xi, cutoff) {
                continue;
            }
            let w = kernel.evaluate((xi - cutoff) / h) / h;
            if w > 0.0 {
                indices.push(i);
                kw.push(w);
            }
        }
        if indices.len() < p + 1 {
            return Err(Error::DataSupport { side, count: indices.len(), needed: p + 1 });
        }
        let dim = p + 1;
        let mut gram = DMatrix::<f64>::zeros(dim, dim);
        let mut row = vec![0.0; dim];
        for (&i, &w) in indices.iter().zip(&kw) {
            fill_powers(&mut row, (x[i] - cutoff) / h);
            for a in 0..dim {
                for b in a..dim {
                    gram[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..dim {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("singular local polynomial design on the {side} side")))?;
        let mut ek = DVector::zeros(dim);
        ek[k] = 1.0;
        let coef = chol.solve(&ek);
        let scale = factorial(k) / h.powi(k as i32);
        let weights = indices
            .iter()
            .zip(&kw)
            .map(|(&i, &w)| {
                fill_powers(&mut row, (x[i] - cutoff) / h);
                let dot: f64 = row.iter().zip(coef.iter()).map(|(r, c)| r * c).sum();
                scale * w * dot
            })
            .collect();
        Ok(LocalSmoother { indices, weights, k, side, bandwidth: h })
    }

    pub fn apply(&self, v: &[f64]) -> f64 {
        self.indices.iter().zip(&self.weights).map(|(&i, &w)| w * v[i]).sum()
    }

    /// Applies the smoother to values generated on the fly.
    pub fn apply_with<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        self.indices.iter().zip(&self.weights).map(|(&i, &w)| w * f(i)).sum()
    }
}

#[inline]
fn fill_powers(row: &mut [f64], u: f64) {
    let mut acc = 1.0;
    for r in row.iter_mut() {
        *r = acc;
        acc *= u;
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, j| acc * j as f64)
}

/// k-th derivative of E[V | X] at the cutoff from side `side`, by a local
/// polynomial of order k + 1.
pub fn local_poly_derivative(
    sample: &Sample,
    column: &str,
    side: Side,
    k: usize,
    h: f64,
    kernel: Kernel,
) -> Result<DerivativeEstimate> {
    if k > 3 {
        return Err(Error::Input(format!("derivative order {k} not supported")));
    }
    let v = sample.column(column)?;
    let smoother = LocalSmoother::new(&sample.x, sample.cutoff, side, k, k + 1, h, kernel)?;
    Ok(DerivativeEstimate { value: smoother.apply(v), order: k, side, bandwidth_used: h })
}

/// Kernel estimates of the density of X and its derivative at the cutoff.
///
/// The derivative uses the standard estimator (nh²)⁻¹ Σ K'((c - X_i)/h).
pub fn density_and_derivative(sample: &Sample, h_phi: f64, h_phi1: f64, kernel: Kernel) -> Result<(f64, f64)> {
    let n = sample.n();
    if n == 0 {
        return Err(Error::Input("empty sample".into()));
    }
    if !(h_phi > 0.0 && h_phi1 > 0.0) {
        return Err(Error::Input("density bandwidths must be positive".into()));
    }
    let c = sample.cutoff;
    let nf = n as f64;
    let phi = sample.x.iter().map(|&x| kernel.evaluate((x - c) / h_phi)).sum::<f64>() / (nf * h_phi);
    let dk = kernel.derivative_kernel();
    let phi1 = sample.x.iter().map(|&x| dk.derivative((c - x) / h_phi1)).sum::<f64>() / (nf * h_phi1 * h_phi1);
    Ok((phi, phi1))
}

/// Weighted least squares with a ridge fallback. Columns of `design` are
/// regressors, `w` optional observation weights.
pub(crate) fn least_squares(design: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> Result<DVector<f64>> {
    let (n, p) = design.shape();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for i in 0..n {
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = design[(i, a)] * wi;
            rhs[a] += xa * y[i];
            for b in a..p {
                gram[(a, b)] += xa * design[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    if let Some(ch) = gram.clone().cholesky() {
        let sol = ch.solve(&rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    let ridge = 1e-10 * gram.trace();
    let mut reg = gram;
    for a in 0..p {
        reg[(a, a)] += ridge;
    }
    match reg.cholesky() {
        Some(ch) if ridge > 0.0 => Ok(ch.solve(&rhs)),
        _ => Err(Error::Numerical("rank-deficient regression".into())),
    }
}

/// Global polynomial design (1, d, ..., d^p) in scaled units d = (x - c)/s.
pub(crate) fn poly_design(x: &[f64], cutoff: f64, p: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), p + 1, |i, j| ((x[i] - cutoff) / scale).powi(j as i32))
}

/// Second and third derivatives of the density at the cutoff from a global
/// quartic regression of the leave-one-out empirical CDF.
pub fn cdf_pilot_density_derivatives(sample: &Sample) -> Result<(f64, f64)> {
    let n = sample.n();
    if n < 6 {
        return Err(Error::Input(format!("CDF pilot needs at least 6 observations, got {n}")));
    }
    let mut sorted = sample.x.clone();
    sorted.sort_by(f64::total_cmp);
    let denom = (n - 1) as f64;
    let f: Vec<f64> = sample
        .x
        .iter()
        .map(|&xi| {
            let at_or_below = sorted.partition_point(|&v| v <= xi);
            (at_or_below - 1) as f64 / denom
        })
        .collect();
    let c = sample.cutoff;
    let scale = sample.x.iter().map(|&x| (x - c).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Numerical("CDF pilot regressors are rank-deficient".into()));
    }
    let design = poly_design(&sample.x, c, 4, scale);
    let beta = least_squares(&design, &f, None)?;
    Ok((6.0 * beta[3] / scale.powi(3), 24.0 * beta[4] / scale.powi(4)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotMoments {
    pub sigma2_minus: f64,
    pub sigma2_plus: f64,
    pub phi_tilde: f64,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl PilotMoments {
    pub fn sigma2(&self, side: Side) -> f64 {
        match side {
            Side::Plus => self.sigma2_plus,
            Side::Minus => self.sigma2_minus,
        }
    }
}

pub fn silverman_pilot(sample: &Sample) -> Result<f64> {
    let n = sample.n();
    if n < 2 {
        return Err(Error::Input("Silverman pilot needs at least 2 observations".into()));
    }
    let sd = sample_variance(sample.x.iter().copied()).sqrt();
    Ok(1.84 * sd * (n as f64).powf(-0.2))
}

pub(crate) fn sample_variance<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    if count < 2 {
        return 0.0;
    }
    let mean = sum / count as f64;
    values.map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
}

pub fn pilot_moments(sample: &Sample, column: &str, h0: f64) -> Result<PilotMoments> {
    pilot_moments_values(sample, sample.column(column)?, h0)
}

/// Same as [`pilot_moments`] for a column that is not stored in the sample.
pub fn pilot_moments_values(sample: &Sample, v: &[f64], h0: f64) -> Result<PilotMoments> {
    let c = sample.cutoff;
    let in_window = |side: Side| {
        sample
            .x
            .iter()
            .zip(v)
            .filter(move |(&x, _)| match side {
                Side::Minus => x >= c - h0 && x < c,
                Side::Plus => x >= c && x <= c + h0,
            })
            .map(|(_, &y)| y)
    };
    let n_minus = in_window(Side::Minus).count();
    let n_plus = in_window(Side::Plus).count();
    for (side, count) in [(Side::Minus, n_minus), (Side::Plus, n_plus)] {
        if count < 2 {
            return Err(Error::DataSupport { side, count, needed: 2 });
        }
    }
    Ok(PilotMoments {
        sigma2_minus: sample_variance(in_window(Side::Minus)),
        sigma2_plus: sample_variance(in_window(Side::Plus)),
        phi_tilde: (n_minus + n_plus) as f64 / (2.0 * sample.n() as f64 * h0),
        n_minus,
        n_plus,
    })
}
