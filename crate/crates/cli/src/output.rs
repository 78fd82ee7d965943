use std::fmt::Write as _;

use elrdd_core::inference::ConfidenceInterval;
use elrdd_core::{BandwidthPlan, CurvatureEstimates, InferenceResult};
use serde::Serialize;

use crate::commands::{AnalyzeReport, BalanceReport, ConstantsReport, SimulateReport};
use crate::Format;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn json<T: Serialize>(command: &str, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&Envelope { schema_version: SCHEMA_VERSION, command, body })
        .expect("reports serialize");
    s.push('\n');
    s
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
}

fn plan_block(out: &mut String, plan: &BandwidthPlan, curvature: &CurvatureEstimates) {
    let how = if plan.overridden {
        "user supplied"
    } else if plan.closed_form {
        "closed form"
    } else {
        "numerical"
    };
    let _ = writeln!(out, "h             {:.6}  ({how}{})", plan.h, if plan.clamped { ", clamped" } else { "" });
    let _ = writeln!(out, "H*            {:.6}", plan.h_star);
    let _ = writeln!(out, "Bartlett      {:.6}", plan.bartlett_factor);
    let _ = writeln!(out, "density       phi {:.6}  phi' {:.6}", curvature.phi, curvature.phi1);
    if let Some(p) = &curvature.pilot {
        let _ = writeln!(out, "pilots        h0 {:.6}  h_phi {:.6}  h_phi1 {:.6}", p.h0, p.h_phi, p.h_phi1);
        for (fit, h) in &p.fits {
            let _ = writeln!(out, "  {fit:<24} {h:.6}");
        }
    }
}

fn interval_rows(out: &mut String, intervals: &[ConfidenceInterval]) {
    if intervals.is_empty() {
        return;
    }
    let _ = writeln!(out, "{:<8} {:<9} {:>12} {:>12}", "level", "bartlett", "lo", "hi");
    for ci in intervals {
        let _ = writeln!(out, "{:<8} {:<9} {:>12.6} {:>12.6}", ci.level, if ci.bartlett { "yes" } else { "no" }, ci.lo, ci.hi);
    }
}

fn result_table(out: &mut String, r: &InferenceResult) {
    let _ = writeln!(out, "design        {}  (kernel {}, n = {})", r.design, r.kernel, r.n);
    plan_block(out, &r.plan, &r.curvature);
    let _ = writeln!(out, "estimate      {}", join(&r.point_estimate));
    let _ = writeln!(
        out,
        "test          null [{}]  LR {:.4}  statistic {:.4}  p {:.4}",
        join(&r.null),
        r.lr_at_null,
        r.statistic,
        r.p_value
    );
    interval_rows(out, &r.intervals);
    for s in &r.sensitivity {
        let _ = writeln!(out, "sensitivity   x{} h {:.6}  estimate {}  p {:.4}", s.multiplier, s.h, join(&s.point_estimate), s.p_value);
        interval_rows(out, &s.intervals);
    }
}

fn csv_field(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

pub fn analyze(report: &AnalyzeReport, format: Format) -> String {
    let r = &report.result;
    match format {
        Format::Json => json("analyze", report),
        Format::Table => {
            let mut out = String::new();
            if report.dropped_rows > 0 {
                let _ = writeln!(out, "dropped       {} rows with missing values", report.dropped_rows);
            }
            result_table(&mut out, r);
            out
        }
        Format::Csv => {
            let mut out = String::from("design,n,multiplier,h,h_star,bartlett_factor,estimate,statistic,p_value,level,bartlett,lo,hi\n");
            let est = |e: &[f64]| e.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
            let mut rows = |mult: f64, h: f64, factor: f64, e: &[f64], stat: f64, p: f64, cis: &[ConfidenceInterval]| {
                let head = format!("{},{},{mult},{h},{},{factor},{},{stat},{p}", r.design, r.n, r.plan.h_star, est(e));
                if cis.is_empty() {
                    let _ = writeln!(out, "{head},,,,");
                }
                for ci in cis {
                    let _ = writeln!(out, "{head},{},{},{},{}", ci.level, ci.bartlett, csv_field(ci.lo), csv_field(ci.hi));
                }
            };
            rows(1.0, r.plan.h, r.plan.bartlett_factor, &r.point_estimate, r.statistic, r.p_value, &r.intervals);
            for s in &r.sensitivity {
                rows(s.multiplier, s.h, s.bartlett_factor, &s.point_estimate, s.statistic, s.p_value, &s.intervals);
            }
            out
        }
    }
}

pub fn balance(report: &BalanceReport, format: Format) -> String {
    match format {
        Format::Json => json("balance", report),
        Format::Table => {
            let mut out = String::new();
            result_table(&mut out, &report.joint);
            let _ = writeln!(out, "{:<16} {:>12} {:>12} {:>8}", "covariate", "jump", "statistic", "p");
            for c in &report.per_covariate {
                let _ = writeln!(out, "{:<16} {:>12.6} {:>12.4} {:>8.4}", c.covariate, c.estimate, c.statistic, c.p_value);
            }
            let j = &report.joint;
            let _ = writeln!(out, "{:<16} {:>12} {:>12.4} {:>8.4}", "joint", "", j.statistic, j.p_value);
            out
        }
        Format::Csv => {
            let mut out = String::from("covariate,estimate,statistic,p_value,h\n");
            for c in &report.per_covariate {
                let _ = writeln!(out, "{},{},{},{},{}", c.covariate, c.estimate, c.statistic, c.p_value, report.joint.plan.h);
            }
            let j = &report.joint;
            let _ = writeln!(out, "joint,,{},{},{}", j.statistic, j.p_value, j.plan.h);
            out
        }
    }
}

pub fn simulate(report: &SimulateReport, format: Format) -> String {
    let r = &report.report;
    match format {
        Format::Json => json("simulate", report),
        Format::Csv => r.to_csv(),
        Format::Table => {
            let mut out = String::new();
            let _ = writeln!(out, "design {}  n {}  seed {}  truth [{}]", r.design, r.n, r.seed, join(&r.truth));
            let _ = writeln!(out, "replications {}  failures {}", r.replications, r.failures);
            if let Some(p) = &r.true_plan {
                let _ = writeln!(out, "true-constant plan: H* {:.6}  h {:.6}  Bartlett {:.6}", p.h_star, p.h, p.bartlett_factor);
            }
            let _ = writeln!(out, "{:<10} {:>6} {:>9} {:>8} {:>10} {:>9} {:>9} {:>9}", "label", "level", "coverage", "se", "length", "unbounded", "mean h", "factor");
            for row in &r.rows {
                let len = row.mean_length.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into());
                let _ = writeln!(
                    out,
                    "{:<10} {:>6} {:>9.4} {:>8.4} {:>10} {:>9} {:>9.4} {:>9.4}",
                    row.label, row.level, row.coverage, row.se, len, row.unbounded, row.mean_h, row.mean_factor
                );
            }
            out
        }
    }
}

pub fn constants(report: &ConstantsReport, format: Format) -> String {
    let k = &report.constants;
    let scalars = [
        ("varpi", k.varpi),
        ("gamma2", k.gamma[0]),
        ("gamma3", k.gamma[1]),
        ("gamma4", k.gamma[2]),
        ("int_k2", k.int_k2),
        ("int_ku2", k.int_ku2),
        ("int_dk2", k.int_dk2),
    ];
    match format {
        Format::Json => json("constants", report),
        Format::Csv => {
            let mut out = String::from("name,value\n");
            let _ = writeln!(out, "kernel,{}", k.kernel);
            for (name, v) in scalars {
                let _ = writeln!(out, "{name},{v}");
            }
            for (j, (p, m)) in k.m_plus.iter().zip(&k.m_minus).enumerate() {
                let _ = writeln!(out, "m_{j}_plus,{p}\nm_{j}_minus,{m}");
            }
            if let Some(d) = &report.diagnostics {
                let _ = writeln!(out, "h,{}\nh_star,{}\nbartlett_factor,{}", d.plan.h, d.plan.h_star, d.plan.bartlett_factor);
            }
            out
        }
        Format::Table => {
            let mut out = String::new();
            let _ = writeln!(out, "kernel        {}", k.kernel);
            for (name, v) in scalars {
                let _ = writeln!(out, "{name:<13} {v:.10}");
            }
            let _ = writeln!(out, "{:<4} {:>14} {:>14}", "j", "m_j+", "m_j-");
            for (j, (p, m)) in k.m_plus.iter().zip(&k.m_minus).enumerate() {
                let _ = writeln!(out, "{j:<4} {p:>14.10} {m:>14.10}");
            }
            if let Some(d) = &report.diagnostics {
                let _ = writeln!(out, "design        {}  (n = {})", d.spec.kind, d.plan.n);
                plan_block(&mut out, &d.plan, &d.curvature);
            }
            out
        }
    }
}
