//! Aggregates finished runs into one summary with per-criterion verdicts.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::{
    error::{CliError, CliResult},
    manifest::RunManifest,
    pipeline::FIT_CSV_HEADER,
};

pub const SUMMARY: &str = "summary.json";

/// Thresholds the verdicts are judged against.
pub const MIN_TRAIN_ACCURACY: f64 = 0.99;
pub const MAX_PCA_SPEARMAN: f64 = -0.5;
pub const MIN_PROJECTION_SPEARMAN: f64 = 0.5;
pub const MIN_ALIGNED_FRACTION: f64 = 0.95;
pub const MIN_MEDIAN_RATIO: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub criterion: String,
    pub source: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "{} {} [{}] {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.criterion,
            self.source,
            self.detail
        )
    }
}

/// A fit CSV row as written by the analysis subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRow {
    pub slope: f64,
    pub intercept: f64,
    pub spearman: f64,
    pub used: usize,
    pub excluded: usize,
}

pub fn parse_fit_csv(text: &str, path: &Path) -> CliResult<Option<FitRow>> {
    let bad = |what: &str| CliError::integrity(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some(FIT_CSV_HEADER) {
        return Err(bad("unexpected header"));
    }
    let Some(row) = lines.next() else {
        return Ok(None);
    };
    let f: Vec<&str> = row.split(',').collect();
    if f.len() != 5 {
        return Err(bad("expected 5 fields"));
    }
    let float = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
    let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad count"));
    Ok(Some(FitRow {
        slope: float(f[0])?,
        intercept: float(f[1])?,
        spearman: float(f[2])?,
        used: int(f[3])?,
        excluded: int(f[4])?,
    }))
}

fn manifests_in(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("manifest-") && n.ends_with(".json") && n != "manifest-report.json")
        })
        .collect();
    found.sort();
    Ok(found)
}

fn f(v: &Value, key: &str) -> Option<f64> {
    v.get(key).and_then(Value::as_f64)
}

fn fit_value(fit: &Option<FitRow>) -> Value {
    let n = |x: f64| if x.is_finite() { json!(x) } else { json!(x.to_string()) };
    match fit {
        Some(r) => json!({
            "slope": n(r.slope),
            "intercept": n(r.intercept),
            "spearman": n(r.spearman),
            "used": r.used,
            "excluded": r.excluded,
        }),
        None => Value::Null,
    }
}

fn fit_verdicts(command: &str, kind: &str, fit: &Option<FitRow>, source: &str) -> Option<Verdict> {
    let (criterion, pass, detail) = match (command, fit) {
        ("pca-flatness", Some(r)) => (
            format!("inverse-variance-flatness/{kind}"),
            r.spearman <= MAX_PCA_SPEARMAN && r.slope < 0.0,
            format!("spearman {:.4} (<= {MAX_PCA_SPEARMAN}), slope {:.4} (< 0)", r.spearman, r.slope),
        ),
        ("hessian-projection", Some(r)) => (
            format!("projection-vs-hessian/{kind}"),
            r.spearman >= MIN_PROJECTION_SPEARMAN,
            format!("spearman {:.4} (>= {MIN_PROJECTION_SPEARMAN}), slope {:.4}", r.spearman, r.slope),
        ),
        ("pca-flatness" | "hessian-projection", None) => (
            format!("{command}/{kind}"),
            false,
            "no usable fit (too few finite points)".to_string(),
        ),
        _ => return None,
    };
    Some(Verdict {
        criterion,
        source: source.to_string(),
        pass,
        detail,
    })
}

fn result_verdict(m: &RunManifest, source: &str) -> Option<Verdict> {
    let r = &m.results;
    match m.command.as_str() {
        "train" => {
            let acc = f(r, "train_accuracy")?;
            Some(Verdict {
                criterion: "train-accuracy".into(),
                source: source.into(),
                pass: acc >= MIN_TRAIN_ACCURACY,
                detail: format!("train accuracy {acc:.4} (>= {MIN_TRAIN_ACCURACY})"),
            })
        }
        "alignment" => {
            let frac = f(r, "fraction_aligned").unwrap_or(f64::NAN);
            let med = f(r, "median_ratio").unwrap_or(f64::NAN);
            Some(Verdict {
                criterion: "alignment".into(),
                source: source.into(),
                pass: frac >= MIN_ALIGNED_FRACTION && med > MIN_MEDIAN_RATIO,
                detail: format!(
                    "aligned fraction {frac:.4} (>= {MIN_ALIGNED_FRACTION}), median ratio {med:.4} (> {MIN_MEDIAN_RATIO})"
                ),
            })
        }
        "slice1d" => {
            let flatter = r.get("flatter_than_compare")?.as_u64()?;
            let total = r.get("directions")?.as_u64()?;
            Some(Verdict {
                criterion: "flatter-than-compare".into(),
                source: source.into(),
                pass: 2 * flatter > total,
                detail: format!("{flatter} of {total} directions rise less than the comparison checkpoint"),
            })
        }
        _ => None,
    }
}

/// Verifies every manifest under `dirs`, gathers results and fits and
/// writes `summary.json` to `out`. Returns the summary and its verdicts.
pub fn report(dirs: &[PathBuf], out: &Path) -> CliResult<(Value, Vec<Verdict>)> {
    let mut runs = Vec::new();
    let mut verdicts = Vec::new();
    for dir in dirs {
        for path in manifests_in(dir)? {
            let m = RunManifest::load(&path)?;
            m.verify(dir)?;
            let source = format!("{}:{}", dir.display(), m.label());
            let mut entry = Map::new();
            entry.insert("dir".into(), json!(dir.display().to_string()));
            entry.insert("command".into(), json!(m.command));
            entry.insert("config_hash".into(), json!(m.config_hash));
            entry.insert("results".into(), m.results.clone());
            if let Some(kind) = m.results.get("kind").and_then(Value::as_str) {
                let rel = format!("fit-{}-{kind}.csv", m.command);
                if m.artifacts.iter().any(|a| a.path == rel) {
                    let fit_path = dir.join(&rel);
                    let text = std::fs::read_to_string(&fit_path).map_err(|e| CliError::io(&fit_path, e))?;
                    let fit = parse_fit_csv(&text, &fit_path)?;
                    entry.insert("fit".into(), fit_value(&fit));
                    verdicts.extend(fit_verdicts(&m.command, kind, &fit, &source));
                }
            }
            verdicts.extend(result_verdict(&m, &source));
            runs.push(Value::Object(entry));
        }
    }
    if runs.is_empty() {
        return Err(CliError::config(format!(
            "no run manifests found in {}; nothing to report",
            dirs.iter().map(|d| d.display().to_string()).collect::<Vec<_>>().join(", ")
        )));
    }
    let summary = json!({
        "runs": runs,
        "verdicts": verdicts.iter().map(|v| json!({
            "criterion": v.criterion,
            "source": v.source,
            "pass": v.pass,
            "detail": v.detail,
        })).collect::<Vec<_>>(),
        "all_pass": verdicts.iter().all(|v| v.pass),
    });
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let path = out.join(SUMMARY);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok((summary, verdicts))
}
