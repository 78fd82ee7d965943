use std::path::Path;

use elrdd_core::{
    analyze as run_analysis, coverage_optimal_bandwidth, estimate_curvature, montecarlo, AnalysisConfig,
    BandwidthMode, BandwidthPlan, CoverageReport, CurvatureEstimates, DesignKind, DesignSpec, DgpKind, DgpSpec,
    InferenceResult, KernelConstants, StudyConfig,
};
use serde::Serialize;

use crate::ingest::{ingest_csv, Ingested};
use crate::{AnalyzeArgs, BalanceArgs, ConstantsArgs, Failure, InferenceArgs, SimulateArgs};

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub input: String,
    pub dropped_rows: usize,
    pub spec: DesignSpec,
    pub result: InferenceResult,
}

#[derive(Debug, Serialize)]
pub struct CovariateTest {
    pub covariate: String,
    pub estimate: f64,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Serialize)]
pub struct BalanceReport {
    pub input: String,
    pub dropped_rows: usize,
    pub covariates: Vec<String>,
    /// Joint test of continuity of every covariate mean.
    pub joint: InferenceResult,
    /// One-at-a-time tests at the joint bandwidth.
    pub per_covariate: Vec<CovariateTest>,
}

#[derive(Debug, Serialize)]
pub struct SimulateReport {
    pub dgp: DgpKind,
    pub config: StudyConfig,
    pub report: CoverageReport,
}

#[derive(Debug, Serialize)]
pub struct Diagnostics {
    pub input: String,
    pub dropped_rows: usize,
    pub spec: DesignSpec,
    pub curvature: CurvatureEstimates,
    pub plan: BandwidthPlan,
}

#[derive(Debug, Serialize)]
pub struct ConstantsReport {
    pub constants: KernelConstants,
    pub diagnostics: Option<Diagnostics>,
}

fn analysis_config(args: &InferenceArgs, null: Option<Vec<f64>>) -> Result<AnalysisConfig, Failure> {
    let config = AnalysisConfig {
        kernel: args.kernel,
        levels: args.levels.clone(),
        bartlett: !args.no_bartlett,
        bandwidth: args.h,
        h_multipliers: args.h_multipliers.clone(),
        null,
        intervals: !args.no_intervals,
        ..AnalysisConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn design_spec(kind: DesignKind, y: &[String], d: Option<&str>, z: &[String]) -> DesignSpec {
    let ys: Vec<&str> = y.iter().map(String::as_str).collect();
    let zs: Vec<&str> = z.iter().map(String::as_str).collect();
    DesignSpec::new(kind, &ys, d.filter(|_| kind.is_fuzzy()), &zs)
}

/// Bound columns and the subset that must be 0/1.
fn bindings(spec: &DesignSpec) -> (Vec<String>, Vec<String>) {
    let mut cols: Vec<String> = spec.outcome_columns.clone();
    cols.extend(spec.treatment_column.iter().cloned());
    cols.extend(spec.covariate_columns.iter().cloned());
    let mut binary: Vec<String> = spec.treatment_column.iter().cloned().collect();
    if spec.kind.is_categorical() {
        binary.extend(spec.outcome_columns.iter().cloned());
    }
    (cols, binary)
}

fn load(path: &Path, x: &str, cutoff: f64, spec: &DesignSpec) -> Result<Ingested, Failure> {
    if spec.kind.is_fuzzy() && spec.treatment_column.is_none() {
        return Err(Failure::Input(format!("design {} needs --d", spec.kind)));
    }
    let (cols, binary) = bindings(spec);
    let data = ingest_csv(path, x, cutoff, &cols, &binary)?;
    if data.dropped > 0 {
        eprintln!("dropped {} rows with missing values; n = {}", data.dropped, data.sample.n());
    }
    Ok(data)
}

fn report_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

pub fn analyze(args: &AnalyzeArgs) -> Result<AnalyzeReport, Failure> {
    if args.design == DesignKind::BalanceTest {
        return Err(Failure::Input("use the balance command for covariate balance tests".into()));
    }
    let spec = design_spec(args.design, &args.y, args.d.as_deref(), &args.z);
    let null = (!args.null.is_empty()).then(|| args.null.clone());
    let config = analysis_config(&args.inference, null)?;
    let data = load(&args.data.input, &args.data.x, args.data.cutoff, &spec)?;
    let result = run_analysis(&data.sample, &spec, &config)?;
    report_warnings(&result.warnings);
    Ok(AnalyzeReport { input: args.data.input.display().to_string(), dropped_rows: data.dropped, spec, result })
}

pub fn balance(args: &BalanceArgs) -> Result<BalanceReport, Failure> {
    let zs: Vec<&str> = args.z.iter().map(String::as_str).collect();
    let spec = DesignSpec::balance(&zs);
    let config = analysis_config(&args.inference, None)?;
    let data = load(&args.data.input, &args.data.x, args.data.cutoff, &spec)?;
    let joint = run_analysis(&data.sample, &spec, &config)?;
    report_warnings(&joint.warnings);

    let single_config = AnalysisConfig { bandwidth: Some(joint.plan.h), intervals: false, h_multipliers: Vec::new(), ..config };
    let per_covariate = args
        .z
        .iter()
        .map(|z| {
            let r = run_analysis(&data.sample, &DesignSpec::balance(&[z]), &single_config)?;
            Ok(CovariateTest { covariate: z.clone(), estimate: r.point_estimate[0], statistic: r.statistic, p_value: r.p_value })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok(BalanceReport {
        input: args.data.input.display().to_string(),
        dropped_rows: data.dropped,
        covariates: args.z.clone(),
        joint,
        per_covariate,
    })
}

pub fn simulate(args: &SimulateArgs) -> Result<SimulateReport, Failure> {
    let dgp_kind: DgpKind = args.dgp.parse()?;
    let modes = args.modes.iter().map(|m| m.parse::<BandwidthMode>()).collect::<Result<Vec<_>, _>>()?;
    if args.reps == 0 {
        return Err(Failure::Input("--reps must be positive".into()));
    }
    if args.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Failure::Input("levels must lie in (0, 1)".into()));
    }
    let dgp = DgpSpec::new(dgp_kind.clone(), args.n, args.seed)?;
    let config = StudyConfig {
        replications: args.reps,
        levels: args.levels.clone(),
        modes,
        kernel: args.kernel,
        intervals: !args.no_intervals,
        threads: args.threads,
    };
    let report = montecarlo::run_coverage_study(&dgp, &config)?;
    if report.failures > 0 {
        eprintln!("{} of {} replications failed", report.failures, report.replications);
    }
    Ok(SimulateReport { dgp: dgp_kind, config, report })
}

pub fn constants(args: &ConstantsArgs) -> Result<ConstantsReport, Failure> {
    let constants = args.kernel.constants().clone();
    let diagnostics = match &args.input {
        None => None,
        Some(path) => {
            let spec = if args.design == DesignKind::BalanceTest {
                let zs: Vec<&str> = args.z.iter().map(String::as_str).collect();
                DesignSpec::balance(&zs)
            } else {
                design_spec(args.design, &args.y, args.d.as_deref(), &args.z)
            };
            let data = load(path, &args.x, args.cutoff, &spec)?;
            let curvature = estimate_curvature(&spec, &data.sample, args.kernel)?;
            let plan = coverage_optimal_bandwidth(&spec, &curvature, args.kernel.constants(), data.sample.n())?
                .clamp_to_sample(&data.sample, elrdd_core::localfit::DEFAULT_MIN_SIDE_COUNT)?;
            report_warnings(&plan.warnings);
            Some(Diagnostics { input: path.display().to_string(), dropped_rows: data.dropped, spec, curvature, plan })
        }
    };
    Ok(ConstantsReport { constants, diagnostics })
}
