//! Confidence sets, tests and p-values by inverting the profiled EL ratio
//! against χ² quantiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bandwidth::{coverage_optimal_bandwidth, estimate_curvature, BandwidthPlan, CurvatureEstimates};
use crate::designs::{build_moment_system, DesignSpec, MomentSystem};
use crate::elcore::{ProfileDiagnostics, Profiler, SolverConfig};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::localfit::{build_weights_with, sample_variance, Sample, DEFAULT_MIN_SIDE_COUNT};

/// Endpoints are searched out to this many sample-scale units.
pub const BRACKET_CAP: f64 = 10.0;
pub const LR_TOL: f64 = 1e-6;
const MAX_ROOT_ITER: usize = 200;

pub fn chi2_quantile(level: f64, df: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("level must lie in (0, 1), got {level}")));
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::Input(e.to_string()))?;
    Ok(dist.inverse_cdf(level))
}

/// Upper tail P(χ²_df > x).
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    ChiSquared::new(df as f64).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// Closed-set rule LR/factor ≤ q.
pub fn in_region(lr: f64, factor: f64, q: f64) -> bool {
    lr / factor <= q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub bartlett: bool,
    /// q_{χ²,level} times the factor in use.
    pub threshold: f64,
    /// −∞ / +∞ when LR stays below the threshold out to the search cap.
    pub lo: f64,
    pub hi: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, tau: f64) -> bool {
        self.lo <= tau && tau <= self.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

/// LR(τ) surface for one system, bandwidth and factor.
#[derive(Debug, Clone)]
pub struct LrInverter<'a> {
    pub profiler: Profiler<'a>,
    pub estimate: Vec<f64>,
    pub theta_hat: Vec<f64>,
    /// Search scale for interval endpoints.
    pub scale: f64,
}

impl<'a> LrInverter<'a> {
    pub fn new(system: &'a MomentSystem, weights: &crate::localfit::WeightVector, solver: SolverConfig, scale: f64) -> Result<Self> {
        let profiler = Profiler::new(system, weights, solver);
        let beta = profiler.beta_check()?;
        let estimate = system.constraint.evaluate(&beta).as_slice().to_vec();
        let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
        Ok(LrInverter { profiler, estimate, theta_hat: beta.as_slice().to_vec(), scale })
    }

    pub fn d_rho(&self) -> usize {
        self.estimate.len()
    }

    pub fn lr(&self, tau: &[f64]) -> Result<f64> {
        Ok(self.profiler.profile(tau, Some(&self.theta_hat))?.lr)
    }

    fn lr_warm(&self, tau: f64, warm: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.profiler.profile(&[tau], Some(warm))?;
        Ok((r.lr, r.theta_hat))
    }

    /// (LR(τ₀)/factor, p-value).
    pub fn joint_test(&self, tau0: &[f64], factor: f64) -> Result<(f64, f64, ProfileDiagnostics)> {
        if tau0.len() != self.d_rho() {
            return Err(Error::Input(format!("null must have {} entries", self.d_rho())));
        }
        let r = self.profiler.profile(tau0, Some(&self.theta_hat))?;
        let stat = r.lr / factor;
        Ok((stat, chi2_sf(stat, self.d_rho()), r.diagnostics))
    }

    /// True iff LR(τ)/factor ≤ q (closed set).
    pub fn region_membership(&self, tau: &[f64], factor: f64, level: f64) -> Result<bool> {
        let q = chi2_quantile(level, self.d_rho())?;
        Ok(in_region(self.lr(tau)?, factor, q))
    }

    /// Membership on the cartesian grid of `axes`, first axis varying slowest.
    pub fn region_grid(&self, axes: &[Vec<f64>], factor: f64, level: f64) -> Result<Vec<bool>> {
        if axes.len() != self.d_rho() {
            return Err(Error::Input(format!("grid needs {} axes", self.d_rho())));
        }
        let q = chi2_quantile(level, self.d_rho())?;
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total)
            .into_par_iter()
            .map(|mut flat| {
                let mut tau = vec![0.0; axes.len()];
                for (a, axis) in axes.iter().enumerate().rev() {
                    tau[a] = axis[flat % axis.len()];
                    flat /= axis.len();
                }
                Ok(in_region(self.lr(&tau)?, factor, q))
            })
            .collect()
    }

    /// Intervals for every (level, factor) pair. Thresholds are visited in
    /// increasing order and each search starts from the previous endpoint,
    /// so the sets are nested by construction.
    pub fn confidence_intervals(&self, requests: &[(f64, bool, f64)]) -> Result<Vec<ConfidenceInterval>> {
        if self.d_rho() != 1 {
            return Err(Error::Input("confidence intervals need a scalar parameter".into()));
        }
        let mut order: Vec<(usize, f64)> = Vec::with_capacity(requests.len());
        for (i, &(level, _, factor)) in requests.iter().enumerate() {
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::Input(format!("factor must be positive, got {factor}")));
            }
            order.push((i, chi2_quantile(level, 1)? * factor));
        }
        order.sort_by(|a, b| a.1.total_cmp(&b.1));
        let thresholds: Vec<f64> = order.iter().map(|o| o.1).collect();
        let (lo, hi) = rayon::join(|| self.side_endpoints(-1.0, &thresholds), || self.side_endpoints(1.0, &thresholds));
        let (lo, hi) = (lo?, hi?);
        let mut out = vec![None; requests.len()];
        for (j, &(i, threshold)) in order.iter().enumerate() {
            let (level, bartlett, _) = requests[i];
            out[i] = Some(ConfidenceInterval { level, bartlett, threshold, lo: lo[j], hi: hi[j] });
        }
        Ok(out.into_iter().map(|c| c.expect("every request visited")).collect())
    }

    pub fn confidence_interval(&self, level: f64, factor: f64) -> Result<ConfidenceInterval> {
        Ok(self.confidence_intervals(&[(level, factor != 1.0, factor)])?.remove(0))
    }

    fn side_endpoints(&self, dir: f64, thresholds: &[f64]) -> Result<Vec<f64>> {
        let est = self.estimate[0];
        let cap = est + dir * BRACKET_CAP * self.scale;
        let mut anchor: (f64, f64, Vec<f64>) = (est, 0.0, self.theta_hat.clone());

        // Local quadratic scale from one probe.
        let probe = est + dir * 0.05 * self.scale;
        let (lr_probe, _) = self.lr_warm(probe, &self.theta_hat)?;
        let mut se = if lr_probe.is_finite() && lr_probe > 0.0 { 0.05 * self.scale / lr_probe.sqrt() } else { 0.01 * self.scale };

        let mut out = Vec::with_capacity(thresholds.len());
        let mut unbounded = false;
        for &thr in thresholds {
            if unbounded {
                out.push(dir * f64::INFINITY);
                continue;
            }
            // Expand outward from the anchor until LR exceeds the threshold.
            let mut step = (1.2 * se * (thr.sqrt() - anchor.1.max(0.0).sqrt())).max(1e-9 * self.scale);
            let outside = loop {
                let mut t = anchor.0 + dir * step;
                let capped = dir * (t - cap) >= 0.0;
                if capped {
                    t = cap;
                }
                let (lr, theta) = self.lr_warm(t, &anchor.2)?;
                if lr > thr {
                    break Some((t, lr));
                }
                if lr.is_finite() && (t - est).abs() > 0.0 && lr > 0.0 {
                    se = (t - est).abs() / lr.sqrt();
                }
                anchor = (t, lr, theta);
                if capped {
                    break None;
                }
                step *= 2.0;
            };
            let Some(outside) = outside else {
                unbounded = true;
                out.push(dir * f64::INFINITY);
                continue;
            };
            let endpoint = self.root(anchor.clone(), outside, thr)?;
            if dir * (endpoint.0 - anchor.0) > 0.0 {
                anchor = endpoint.clone();
            }
            out.push(endpoint.0);
        }
        Ok(out)
    }

    /// Illinois false position on √LR − √thr, falling back to bisection
    /// where LR is infinite.
    fn root(&self, inside: (f64, f64, Vec<f64>), outside: (f64, f64), thr: f64) -> Result<(f64, f64, Vec<f64>)> {
        let g = |lr: f64| lr.sqrt() - thr.sqrt();
        let (mut a, mut ga, mut theta_a) = (inside.0, g(inside.1), inside.2);
        let (mut b, mut gb) = (outside.0, g(outside.1));
        let mut last_side = 0i8;
        for _ in 0..MAX_ROOT_ITER {
            if (a - b).abs() <= 1e-13 * (1.0 + a.abs()) {
                break;
            }
            let t = if gb.is_finite() && ga.is_finite() && gb != ga {
                let t = b - gb * (b - a) / (gb - ga);
                let lo = a.min(b);
                let hi = a.max(b);
                if t > lo && t < hi { t } else { 0.5 * (a + b) }
            } else {
                0.5 * (a + b)
            };
            let (lr, theta) = self.lr_warm(t, &theta_a)?;
            if (lr - thr).abs() <= LR_TOL {
                return Ok((t, lr, theta));
            }
            let gt = g(lr);
            if gt <= 0.0 {
                a = t;
                ga = gt;
                theta_a = theta;
                if last_side == -1 && gb.is_finite() {
                    gb *= 0.5;
                }
                last_side = -1;
            } else {
                b = t;
                gb = gt;
                if last_side == 1 && ga.is_finite() {
                    ga *= 0.5;
                }
                last_side = 1;
            }
        }
        let lr = (ga + thr.sqrt()).powi(2);
        Ok((a, lr, theta_a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub kernel: Kernel,
    pub levels: Vec<f64>,
    pub bartlett: bool,
    /// Bypasses the selector when set.
    pub bandwidth: Option<f64>,
    /// Extra runs at multiples of the selected h.
    pub h_multipliers: Vec<f64>,
    /// Null for the reported test; zero when absent.
    pub null: Option<Vec<f64>>,
    pub solver: SolverConfig,
    pub min_side_count: usize,
    /// Skip CI inversion and report only the test.
    pub intervals: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            kernel: Kernel::Triangular,
            levels: vec![0.90, 0.95, 0.99],
            bartlett: true,
            bandwidth: None,
            h_multipliers: Vec::new(),
            null: None,
            solver: SolverConfig::default(),
            min_side_count: DEFAULT_MIN_SIDE_COUNT,
            intervals: true,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::Input("levels must lie in (0, 1)".into()));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Input(format!("bandwidth must be positive, got {h}")));
            }
        }
        if self.h_multipliers.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::Input("bandwidth multipliers must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub multiplier: f64,
    pub h: f64,
    pub point_estimate: Vec<f64>,
    pub bartlett_factor: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub intervals: Vec<ConfidenceInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub design: crate::designs::DesignKind,
    pub kernel: Kernel,
    pub n: usize,
    pub point_estimate: Vec<f64>,
    /// Uncorrected and, when requested, Bartlett-corrected intervals.
    pub intervals: Vec<ConfidenceInterval>,
    pub null: Vec<f64>,
    pub lr_at_null: f64,
    /// lr_at_null divided by the factor in use.
    pub statistic: f64,
    pub p_value: f64,
    pub bartlett_applied: bool,
    pub factor: f64,
    pub plan: BandwidthPlan,
    pub curvature: CurvatureEstimates,
    pub null_diagnostics: ProfileDiagnostics,
    pub sensitivity: Vec<SensitivityRow>,
    pub warnings: Vec<String>,
}

impl InferenceResult {
    pub fn interval(&self, level: f64, bartlett: bool) -> Option<&ConfidenceInterval> {
        self.intervals.iter().find(|c| c.level == level && c.bartlett == bartlett)
    }
}

/// Search scale in τ units: sd(Y), divided by sd(D) for fuzzy designs.
pub fn parameter_scale(spec: &DesignSpec, sample: &Sample) -> Result<f64> {
    let y = sample.column(&spec.target_columns()[0])?;
    let mut s = sample_variance(y.iter().copied()).sqrt();
    if let (true, Some(d)) = (spec.kind.is_fuzzy(), &spec.treatment_column) {
        let sd = sample_variance(sample.column(d)?.iter().copied()).sqrt();
        if sd > 0.0 {
            s /= sd;
        }
    }
    Ok(if s > 0.0 && s.is_finite() { s } else { 1.0 })
}

struct Evaluated {
    estimate: Vec<f64>,
    intervals: Vec<ConfidenceInterval>,
    lr: f64,
    statistic: f64,
    p_value: f64,
    factor: f64,
    diagnostics: ProfileDiagnostics,
}

fn evaluate_at(
    system: &MomentSystem,
    sample: &Sample,
    plan: &BandwidthPlan,
    null: &[f64],
    scale: f64,
    config: &AnalysisConfig,
    warnings: &mut Vec<String>,
) -> Result<Evaluated> {
    let weights = build_weights_with(sample, plan.h, config.kernel.constants(), 1, config.min_side_count)?;
    let inv = LrInverter::new(system, &weights, config.solver, scale)?;
    let mut factor = 1.0;
    if config.bartlett {
        if plan.bartlett_factor > 0.0 && plan.bartlett_factor.is_finite() {
            factor = plan.bartlett_factor;
        } else {
            warnings.push(format!("Bartlett factor {} is not positive; correction skipped", plan.bartlett_factor));
        }
    }
    let (statistic, p_value, diagnostics) = inv.joint_test(null, factor)?;
    let mut intervals = Vec::new();
    if config.intervals && inv.d_rho() == 1 && !config.levels.is_empty() {
        let mut req: Vec<(f64, bool, f64)> = config.levels.iter().map(|&l| (l, false, 1.0)).collect();
        if config.bartlett && factor != 1.0 {
            req.extend(config.levels.iter().map(|&l| (l, true, factor)));
        }
        intervals = inv.confidence_intervals(&req)?;
        for ci in &intervals {
            if !ci.is_bounded() {
                warnings.push(format!("{} interval at level {} is unbounded within the search cap", if ci.bartlett { "corrected" } else { "uncorrected" }, ci.level));
            }
        }
    }
    Ok(Evaluated { estimate: inv.estimate, intervals, lr: statistic * factor, statistic, p_value, factor, diagnostics })
}

/// Inference with a precomputed plan (for example from known constants).
pub fn analyze_with_plan(
    sample: &Sample,
    spec: &DesignSpec,
    plan: BandwidthPlan,
    curvature: CurvatureEstimates,
    config: &AnalysisConfig,
) -> Result<InferenceResult> {
    config.validate()?;
    let system = build_moment_system(spec, sample)?;
    let d_rho = system.constraint.d_rho();
    let null = config.null.clone().unwrap_or_else(|| vec![0.0; d_rho]);
    if null.len() != d_rho {
        return Err(Error::Input(format!("null must have {d_rho} entries")));
    }
    let mut plan = match config.bandwidth {
        Some(h) => plan.with_bandwidth(h)?,
        None => plan,
    };
    plan = plan.clamp_to_sample(sample, config.min_side_count)?;
    let scale = parameter_scale(spec, sample)?;
    let mut warnings = plan.warnings.clone();
    let main = evaluate_at(&system, sample, &plan, &null, scale, config, &mut warnings)?;

    let mut sensitivity = Vec::with_capacity(config.h_multipliers.len());
    for &m in &config.h_multipliers {
        let alt = plan.clone().with_bandwidth(m * plan.h)?;
        let e = evaluate_at(&system, sample, &alt, &null, scale, config, &mut warnings)?;
        sensitivity.push(SensitivityRow {
            multiplier: m,
            h: alt.h,
            point_estimate: e.estimate,
            bartlett_factor: alt.bartlett_factor,
            statistic: e.statistic,
            p_value: e.p_value,
            intervals: e.intervals,
        });
    }

    Ok(InferenceResult {
        design: spec.kind,
        kernel: config.kernel,
        n: sample.n(),
        point_estimate: main.estimate,
        intervals: main.intervals,
        null,
        lr_at_null: main.lr,
        statistic: main.statistic,
        p_value: main.p_value,
        bartlett_applied: main.factor != 1.0,
        factor: main.factor,
        plan,
        curvature,
        null_diagnostics: main.diagnostics,
        sensitivity,
        warnings,
    })
}

/// Full pipeline: plug-in constants, coverage-optimal h, LR inversion.
pub fn analyze(sample: &Sample, spec: &DesignSpec, config: &AnalysisConfig) -> Result<InferenceResult> {
    config.validate()?;
    let curvature = estimate_curvature(spec, sample, config.kernel)?;
    let plan = coverage_optimal_bandwidth(spec, &curvature, config.kernel.constants(), sample.n())?;
    analyze_with_plan(sample, spec, plan, curvature, config)
}

/// LR(τ) at a fixed bandwidth, no plan required.
pub fn lr_at(
    sample: &Sample,
    spec: &DesignSpec,
    h: f64,
    tau: &[f64],
    kernel: Kernel,
    solver: &SolverConfig,
) -> Result<f64> {
    let system = build_moment_system(spec, sample)?;
    let weights = build_weights_with(sample, h, kernel.constants(), 1, DEFAULT_MIN_SIDE_COUNT)?;
    Ok(Profiler::new(&system, &weights, *solver).profile(tau, None)?.lr)
}

/// LR inverter at a fixed bandwidth; the system must outlive the result.
pub fn inverter<'a>(
    system: &'a MomentSystem,
    sample: &Sample,
    spec: &DesignSpec,
    h: f64,
    config: &AnalysisConfig,
) -> Result<LrInverter<'a>> {
    let weights = build_weights_with(sample, h, config.kernel.constants(), 1, config.min_side_count)?;
    LrInverter::new(system, &weights, config.solver, parameter_scale(spec, sample)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn sharp_sample(n: usize, seed: u64, jump: f64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.5).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|&x| 0.3 * x + if x >= 0.0 { jump } else { 0.0 } + normal.sample(&mut rng)).collect();
        Sample::new(x, 0.0).unwrap().with_column("y", y).unwrap()
    }

    #[test]
    fn chi2_reference_values() {
        assert!((chi2_quantile(0.95, 1).unwrap() - 3.841459).abs() < 1e-6);
        assert!((chi2_sf(6.251, 3) - 0.100).abs() < 1e-3);
        assert_eq!(chi2_sf(0.0, 2), 1.0);
        assert_eq!(chi2_sf(f64::INFINITY, 2), 0.0);
        assert!(chi2_quantile(1.0, 1).is_err());
    }

    #[test]
    fn interval_endpoints_hit_threshold() {
        let s = sharp_sample(800, 1, 0.5);
        let spec = DesignSpec::sharp("y");
        let system = build_moment_system(&spec, &s).unwrap();
        let config = AnalysisConfig::default();
        let inv = inverter(&system, &s, &spec, 0.5, &config).unwrap();
        let ci = inv.confidence_interval(0.95, 1.0).unwrap();
        let q = chi2_quantile(0.95, 1).unwrap();
        assert!(ci.lo < inv.estimate[0] && inv.estimate[0] < ci.hi);
        for t in [ci.lo, ci.hi] {
            assert!((inv.lr(&[t]).unwrap() - q).abs() < 1e-5);
        }
        assert!(inv.lr(&inv.estimate).unwrap() < 1e-10);
    }

    #[test]
    fn nested_levels_and_bartlett_widening() {
        let s = sharp_sample(600, 2, 0.2);
        let spec = DesignSpec::sharp("y");
        let system = build_moment_system(&spec, &s).unwrap();
        let inv = inverter(&system, &s, &spec, 0.6, &AnalysisConfig::default()).unwrap();
        let req = [(0.9, false, 1.0), (0.95, false, 1.0), (0.99, false, 1.0), (0.9, true, 1.2), (0.95, true, 1.2), (0.99, true, 1.2)];
        let cis = inv.confidence_intervals(&req).unwrap();
        for w in 0..2 {
            assert!(cis[w + 1].lo <= cis[w].lo && cis[w].hi <= cis[w + 1].hi);
        }
        for i in 0..3 {
            assert!(cis[i + 3].lo <= cis[i].lo && cis[i].hi <= cis[i + 3].hi);
        }
    }

    #[test]
    fn membership_is_closed_and_contains_estimate() {
        let s = sharp_sample(500, 3, 0.0);
        let spec = DesignSpec::sharp("y");
        let system = build_moment_system(&spec, &s).unwrap();
        let inv = inverter(&system, &s, &spec, 0.7, &AnalysisConfig::default()).unwrap();
        assert!(inv.region_membership(&inv.estimate, 1.0, 0.01).unwrap());
        let q = chi2_quantile(0.95, 1).unwrap();
        assert!(in_region(2.0 * q, 2.0, q));
        assert!(!in_region(2.0 * q, 1.999, q));
    }

    #[test]
    fn constant_outcome_collapses() {
        let x: Vec<f64> = (0..200).map(|i| -1.0 + 0.01 * i as f64).collect();
        let s = Sample::new(x, 0.0).unwrap().with_column("y", vec![2.0; 200]).unwrap();
        let spec = DesignSpec::sharp("y");
        let system = build_moment_system(&spec, &s).unwrap();
        let inv = inverter(&system, &s, &spec, 0.5, &AnalysisConfig::default()).unwrap();
        assert!(inv.estimate[0].abs() < 1e-12);
        // signed local-linear weights keep LR finite off the estimate, but it
        // jumps above every usual quantile
        let q99 = chi2_quantile(0.99, 1).unwrap();
        for t in [1e-6, 0.1, -1.0] {
            assert!(inv.lr(&[t]).unwrap() > q99);
        }
        let ci = inv.confidence_interval(0.95, 1.0).unwrap();
        assert!(ci.length() < 1e-8, "{ci:?}");
    }

    #[test]
    fn zero_statistic_gives_unit_p_value() {
        let s = sharp_sample(500, 4, 0.1);
        let spec = DesignSpec::sharp("y");
        let system = build_moment_system(&spec, &s).unwrap();
        let inv = inverter(&system, &s, &spec, 0.5, &AnalysisConfig::default()).unwrap();
        let (stat, p, _) = inv.joint_test(&inv.estimate.clone(), 1.0).unwrap();
        assert!(stat < 1e-10);
        assert!((p - 1.0).abs() < 1e-6);
    }

    #[test]
    fn analyze_reports_provenance() {
        let s = sharp_sample(3000, 5, 0.3);
        let config = AnalysisConfig { h_multipliers: vec![0.5, 2.0], ..AnalysisConfig::default() };
        let r = analyze(&s, &DesignSpec::sharp("y"), &config).unwrap();
        assert_eq!(r.intervals.len(), 6);
        assert!(r.plan.h > 0.0 && r.plan.h_star > 0.0);
        assert!(r.curvature.pilot.as_ref().unwrap().h_phi > 0.0);
        assert_eq!(r.sensitivity.len(), 2);
        for ci in &r.intervals {
            assert!(ci.contains(r.point_estimate[0]));
        }
        assert!((r.p_value - chi2_sf(r.lr_at_null / r.factor, 1)).abs() < 1e-12);
    }

    #[test]
    fn bad_levels_rejected() {
        let s = sharp_sample(500, 6, 0.1);
        let config = AnalysisConfig { levels: vec![1.2], ..Default::default() };
        assert!(analyze(&s, &DesignSpec::sharp("y"), &config).unwrap_err().is_input());
    }
}
