use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mlcoda::diagnostics::{self, DiagnosticsReport};
use mlcoda::model::{
    build_design, default_priors, fit as fit_model, summarize, ModelSpec, Parameterization,
    PosteriorDraws, PriorSpec, SamplerConfig,
};
use mlcoda::sim::{run_study, write_metrics_csv, write_replications_csv, StudyConfig};
use mlcoda::substitution::{
    estimate_delta, reference_from_composition, reference_from_table, Level, SubstitutionGrid,
    WithinMode,
};
use mlcoda::{
    between_within_split, build_basis, closure, default_sbp, ingest, Basis64, CodaError,
    Composition, IngestReport, LongTable64, Sbp, Schema,
};
use serde_json::{json, Value};

use crate::args::{
    CommonArgs, DataArgs, DiagnoseArgs, FitArgs, LevelArg, ParameterizationArg, RefArg,
    SimulateArgs, SubstituteArgs, TransformArgs, WithinModeArg,
};
use crate::manifest::{write_json, write_manifest};
use crate::CliError;

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} is not a readable file", path.display())))
    }
}

fn prepare(common: &CommonArgs) -> Result<(), CliError> {
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    std::fs::create_dir_all(&common.out)?;
    Ok(())
}

fn load_sbp(path: Option<&PathBuf>, parts: &[String]) -> Result<Sbp, CliError> {
    let sbp = match path {
        Some(p) => {
            require_file(p, "partition file")?;
            Sbp::from_path(p)?
        }
        None => default_sbp(parts.len())?,
    };
    if sbp.dim() != parts.len() {
        return Err(CodaError::DimensionMismatch {
            expected: parts.len(),
            found: sbp.dim(),
        }
        .into());
    }
    if let Some(names) = sbp.part_names() {
        if names != parts {
            return Err(CodaError::InvalidSbp(format!(
                "partition labels {names:?} do not match --parts {parts:?}"
            ))
            .into());
        }
    }
    Ok(sbp)
}

/// Validates the column mapping, reads the table and reports screening.
fn load_table(data: &DataArgs) -> Result<(LongTable64, IngestReport), CliError> {
    if !(data.total.is_finite() && data.total > 0.0) {
        return Err(CliError::Usage(format!("--total must be > 0, got {}", data.total)));
    }
    if data.parts.len() < 2 {
        return Err(CliError::Usage("--parts needs at least two columns".into()));
    }
    require_file(&data.data, "data file")?;
    let schema = Schema {
        id: data.id.clone(),
        parts: data.parts.clone(),
        outcome: data.outcome.clone(),
        covariates: data.covariates.clone(),
    };
    let file = File::open(&data.data)?;
    let (table, report) = ingest(BufReader::new(file), &schema, data.total)?;
    for line in report.summary_lines() {
        eprintln!("{line}");
    }
    Ok((table, report))
}

fn fmt_num(v: f64) -> String {
    v.to_string()
}

pub fn transform(a: &TransformArgs) -> Result<(), CliError> {
    let a = &TransformArgs {
        common: a.common.resolved(),
        ..a.clone()
    };
    let (table, report) = load_table(&a.data)?;
    let sbp = load_sbp(a.data.sbp.as_ref(), &a.data.parts)?;
    prepare(&a.common)?;
    let basis: Basis64 = build_basis(&sbp);
    let coords = between_within_split(&table, &basis)?;
    let k = basis.n_coords();

    let path = a.common.out.join("coordinates.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    let mut header = vec![a.data.id.clone()];
    header.extend(table.part_names().iter().cloned());
    if let Some(o) = table.outcome_name() {
        header.push(o.to_string());
    }
    header.extend(table.covariate_names().iter().cloned());
    for prefix in ["z", "z_b", "z_w"] {
        header.extend((1..=k).map(|i| format!("{prefix}{i}")));
    }
    writeln!(w, "{}", csv_line(&header))?;
    for (i, row) in table.rows().iter().enumerate() {
        let mut cells = vec![table.cluster_ids()[row.cluster].clone()];
        cells.extend(row.composition.parts().iter().map(|&v| fmt_num(v)));
        if let Some(y) = row.outcome {
            cells.push(fmt_num(y));
        }
        cells.extend(row.covariates.iter().map(|&v| fmt_num(v)));
        for z in [&coords.total[i], coords.between_of_row(i), &coords.within[i]] {
            cells.extend(z.values().iter().map(|&v| fmt_num(v)));
        }
        writeln!(w, "{}", csv_line(&cells))?;
    }
    w.flush()?;
    eprintln!("wrote {} rows to {}", table.len(), path.display());
    write_manifest(
        &a.common.out,
        "transform",
        a.common.seed(),
        a,
        json!({ "sbp": sbp.to_text(), "ingest": report }),
    )
}

fn csv_line(cells: &[String]) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    // writing into memory cannot fail
    w.write_record(cells).expect("in-memory csv");
    let mut s = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv");
    s.pop();
    s
}

fn print_report(report: &DiagnosticsReport) {
    println!(
        "{:<24} {:>8} {:>10} {:>10} {:>12}",
        "parameter", "rhat", "ess_bulk", "ess_tail", "sensitivity"
    );
    let opt = |v: Option<f64>, prec: usize| v.map_or("NA".to_string(), |x| format!("{x:.prec$}"));
    for p in &report.parameters {
        let sens = p.sensitivity.map_or("".to_string(), |s| {
            let flag = if s.unreliable {
                " ?"
            } else if s.informative {
                " *"
            } else {
                ""
            };
            format!("{:.3}{flag}", s.index)
        });
        println!(
            "{:<24} {:>8} {:>10} {:>10} {:>12}",
            p.parameter,
            opt(p.rhat, 3),
            opt(p.ess_bulk, 0),
            opt(p.ess_tail, 0),
            sens
        );
    }
    println!(
        "divergent transitions: {} of {}",
        report.divergences, report.total_draws
    );
}

fn breach_message(report: &DiagnosticsReport) -> Option<String> {
    report.has_breach().then(|| {
        format!(
            "convergence criteria not met (max rhat {}, min ess {}); need rhat < {} and ess > {}",
            report.max_rhat().map_or("NA".into(), |v| format!("{v:.3}")),
            report.min_ess().map_or("NA".into(), |v| format!("{v:.0}")),
            diagnostics::RHAT_THRESHOLD,
            diagnostics::ESS_THRESHOLD
        )
    })
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let a = &FitArgs {
        common: a.common.resolved(),
        ..a.clone()
    };
    let Some(outcome) = a.data.outcome.as_ref() else {
        return Err(CliError::Usage("fit requires --outcome".into()));
    };
    let priors_from_file = match &a.priors {
        Some(p) => {
            require_file(p, "prior file")?;
            let text = std::fs::read_to_string(p)?;
            let spec: PriorSpec = toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("invalid prior file: {e}")))?;
            Some(spec)
        }
        None => None,
    };
    let sampler = SamplerConfig {
        chains: a.chains,
        warmup: a.warmup,
        iter: a.iter,
        seed: a.common.seed(),
        adapt_delta: a.adapt_delta,
        max_depth: a.max_depth,
        parameterization: match a.parameterization {
            ParameterizationArg::Noncentered => Parameterization::Noncentered,
            ParameterizationArg::Centered => Parameterization::Centered,
        },
    };
    sampler.validate()?;
    let (table, report) = load_table(&a.data)?;
    let sbp = load_sbp(a.data.sbp.as_ref(), &a.data.parts)?;
    prepare(&a.common)?;

    let basis: Basis64 = build_basis(&sbp);
    let coords = between_within_split(&table, &basis)?;
    let spec = ModelSpec::for_table(&table, sbp.clone())?;
    let design = build_design(&coords, &table, &spec)?;
    let priors = match priors_from_file {
        Some(p) => p,
        None => default_priors(design.y())?,
    };
    let draws = fit_model(&spec, &design, &priors, &sampler)?;
    let reference = reference_from_table(&table, &basis)?;

    let mut w = BufWriter::new(File::create(a.common.out.join("draws.csv"))?);
    draws.write_csv(&mut w)?;
    w.flush()?;

    let diag = diagnostics::diagnose(&draws, &diagnostics::DEFAULT_ALPHAS)?;
    let mut parameters = Vec::new();
    for (i, name) in draws.names().iter().enumerate() {
        let s = summarize(&draws.column(i))?;
        parameters.push(json!({
            "parameter": name,
            "mean": s.mean,
            "median": s.median,
            "ci_low": s.ci_low,
            "ci_high": s.ci_high,
            "significant": s.significant,
        }));
    }
    let summary = json!({
        "model": {
            "outcome": outcome,
            "id": a.data.id,
            "parts": table.part_names(),
            "total": a.data.total,
            "sbp": sbp.to_text(),
            "covariates": table.covariate_names(),
            "columns": design.column_names(),
            "n_rows": table.len(),
            "n_clusters": table.n_clusters(),
            "cluster_ids": table.cluster_ids(),
            "reference": reference.composition.parts(),
        },
        "priors": priors,
        "sampler": sampler,
        "parameters": parameters,
        "diagnostics": diag,
        "ingest": report,
    });
    write_json(&a.common.out.join("summary.json"), &summary)?;

    println!(
        "{:<24} {:>10} {:>10} {:>10}",
        "parameter", "mean", "ci_low", "ci_high"
    );
    for p in parameters.iter().take(draws.n_fixed() + 2) {
        println!(
            "{:<24} {:>10.4} {:>10.4} {:>10.4}",
            p["parameter"].as_str().unwrap_or(""),
            p["mean"].as_f64().unwrap_or(f64::NAN),
            p["ci_low"].as_f64().unwrap_or(f64::NAN),
            p["ci_high"].as_f64().unwrap_or(f64::NAN)
        );
    }
    if let Some(msg) = breach_message(&diag) {
        eprintln!("warning: {msg}");
    }
    if draws.n_divergent() > 0 {
        eprintln!("warning: {} divergent transitions", draws.n_divergent());
    }
    write_manifest(&a.common.out, "fit", a.common.seed(), a, json!({}))
}

/// A saved fit: its draws and the model block of its summary.
struct SavedFit {
    draws: PosteriorDraws,
    model: Value,
}

fn load_fit(dir: &Path) -> Result<SavedFit, CliError> {
    let draws_path = dir.join("draws.csv");
    let summary_path = dir.join("summary.json");
    require_file(&draws_path, "draws file")?;
    require_file(&summary_path, "summary file")?;
    let draws = PosteriorDraws::read_csv(BufReader::new(File::open(draws_path)?))?;
    let summary: Value = serde_json::from_reader(BufReader::new(File::open(summary_path)?))?;
    let model = summary
        .get("model")
        .cloned()
        .ok_or_else(|| CodaError::Data("summary has no model block".into()))?;
    Ok(SavedFit { draws, model })
}

fn model_field<'a>(model: &'a Value, key: &str) -> Result<&'a Value, CliError> {
    model
        .get(key)
        .ok_or_else(|| CodaError::Data(format!("summary model block lacks '{key}'")).into())
}

fn read_reference_file(path: &Path, parts: &[String], total: f64) -> Result<Composition<f64>, CliError> {
    require_file(path, "reference file")?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(CodaError::from)?;
    let headers = rdr.headers().map_err(CodaError::from)?.clone();
    let record = rdr
        .records()
        .next()
        .ok_or_else(|| CodaError::Data("reference file has no data row".into()))?
        .map_err(CodaError::from)?;
    let mut values = Vec::with_capacity(parts.len());
    for p in parts {
        let idx = headers
            .iter()
            .position(|h| h == p)
            .ok_or_else(|| CodaError::Data(format!("reference file lacks column '{p}'")))?;
        let v: f64 = record
            .get(idx)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CodaError::Data(format!("reference value for '{p}' is not a number")))?;
        values.push(v);
    }
    Ok(closure(&values, total)?)
}

fn t_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(min >= 0.0 && max >= min && step > 0.0 && max.is_finite()) {
        return Err(CliError::Usage(format!(
            "need 0 <= --t-min <= --t-max and --t-step > 0, got {min}, {max}, {step}"
        )));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| min + i as f64 * step).collect())
}

pub fn substitute(a: &SubstituteArgs) -> Result<(), CliError> {
    let a = &SubstituteArgs {
        common: a.common.resolved(),
        ..a.clone()
    };
    let t_values = t_grid(a.t_min, a.t_max, a.t_step)?;
    if a.reference == RefArg::File && a.ref_file.is_none() {
        return Err(CliError::Usage("--ref file needs --ref-file".into()));
    }
    if a.reference == RefArg::Mean && a.ref_file.is_some() {
        return Err(CliError::Usage("--ref-file conflicts with --ref mean".into()));
    }
    let saved = load_fit(&a.fit)?;
    prepare(&a.common)?;
    let parts: Vec<String> = serde_json::from_value(model_field(&saved.model, "parts")?.clone())?;
    let total = model_field(&saved.model, "total")?
        .as_f64()
        .ok_or_else(|| CodaError::Data("summary total is not a number".into()))?;
    let sbp_text = model_field(&saved.model, "sbp")?
        .as_str()
        .ok_or_else(|| CodaError::Data("summary sbp is not text".into()))?;
    let basis: Basis64 = build_basis(&Sbp::parse(sbp_text)?);
    let composition = match &a.ref_file {
        Some(path) => read_reference_file(path, &parts, total)?,
        None => {
            let values: Vec<f64> =
                serde_json::from_value(model_field(&saved.model, "reference")?.clone())?;
            Composition::new(values, total)?
        }
    };
    let mut reference = reference_from_composition(composition, &basis)?;
    if a.reference == RefArg::Mean {
        reference.provenance = mlcoda::substitution::Provenance::SampleMean;
    }
    let levels = match a.level {
        LevelArg::Between => vec![Level::Between],
        LevelArg::Within => vec![Level::Within],
        LevelArg::Both => vec![Level::Between, Level::Within],
    };
    let mut grid = SubstitutionGrid::all_pairs(parts.len(), t_values, levels);
    grid.within_mode = match a.within_mode {
        WithinModeArg::Absolute => WithinMode::Absolute,
        WithinModeArg::Multiplicative => WithinMode::Multiplicative,
    };
    let result = estimate_delta(&saved.draws, &grid, &reference, &basis, false)?;
    let path = a.common.out.join("substitution.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    result.write_csv(&mut w, &parts)?;
    w.flush()?;
    eprintln!("wrote {} rows to {}", result.rows.len(), path.display());
    write_manifest(
        &a.common.out,
        "substitute",
        a.common.seed(),
        a,
        json!({ "reference": reference.composition.parts(), "provenance": reference.provenance }),
    )
}

pub fn diagnose(a: &DiagnoseArgs) -> Result<(), CliError> {
    let a = &DiagnoseArgs {
        common: a.common.resolved(),
        ..a.clone()
    };
    if a.alphas.is_empty() || a.alphas.iter().any(|&x| !(x > 0.0) || x == 1.0) {
        return Err(CliError::Usage("--alphas must be positive and different from 1".into()));
    }
    let saved = load_fit(&a.fit)?;
    prepare(&a.common)?;
    let report = diagnostics::diagnose(&saved.draws, &a.alphas)?;
    print_report(&report);
    write_json(&a.common.out.join("diagnostics.json"), &report)?;
    let breach = breach_message(&report);
    write_manifest(
        &a.common.out,
        "diagnose",
        a.common.seed(),
        a,
        json!({ "breach": breach.is_some() }),
    )?;
    match breach {
        Some(msg) => {
            eprintln!("{msg}");
            Err(CliError::Breach)
        }
        None => Ok(()),
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let mut cfg = match (&a.study, a.paper_scale) {
        (Some(_), true) => {
            return Err(CliError::Usage("--study and --paper-scale conflict".into()))
        }
        (Some(path), false) => {
            require_file(path, "study file")?;
            StudyConfig::from_toml(&std::fs::read_to_string(path)?)?
        }
        (None, true) => StudyConfig::paper_scale(),
        (None, false) => StudyConfig::default(),
    };
    if let Some(seed) = a.common.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n_sim {
        cfg.n_sim = n;
    }
    cfg.validate()?;
    prepare(&a.common)?;
    let out = run_study(&cfg)?;

    let mut w = BufWriter::new(File::create(a.common.out.join("replications.csv"))?);
    write_replications_csv(&out.records, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(a.common.out.join("metrics.csv"))?);
    write_metrics_csv(&out.metrics, &mut w)?;
    w.flush()?;

    let counts: Vec<Value> = out
        .metrics
        .iter()
        .map(|m| {
            json!({
                "cell": m.cell,
                "counts": m.summary.as_ref().map(|s| s.counts),
                "note": m.note,
            })
        })
        .collect();
    eprintln!(
        "{} replications in {} cells, {} excluded",
        out.records.len(),
        out.cells.len(),
        out.excluded_count()
    );
    write_manifest(
        &a.common.out,
        "simulate",
        cfg.seed,
        &json!({ "cli": a, "study": cfg }),
        json!({ "excluded": out.excluded_count(), "cells": counts }),
    )
}
