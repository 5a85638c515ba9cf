//! Joining a run's CSV artifacts into one long `(model_tag, metric, value)`
//! view, the VAN vs ADV vs base report, and run-to-run comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use synprobe::csvout::{fmt_f64, Table};
use synprobe::probes_param::pareto_dominance;

use crate::error::{CliError, CliResult};

/// Display tag for a file stem (`van` → `VAN`).
pub fn display_tag(stem: &str) -> String {
    match stem {
        "van" => "VAN".into(),
        "adv" => "ADV".into(),
        s => s.into(),
    }
}

struct Kind {
    prefix: &'static str,
    header: &'static [&'static str],
}

/// Artifact kinds the report understands, keyed by file-name prefix.
const KINDS: &[Kind] = &[
    Kind { prefix: "summary_", header: &["model_tag", "metric", "value"] },
    Kind { prefix: "kl_", header: &["checkpoint_step", "kl_distance"] },
    Kind { prefix: "pairs_", header: &["checkpoint", "phenomenon", "n_pairs", "n_filtered", "accuracy"] },
    Kind { prefix: "order_", header: &["model_tag", "ordered", "mean_shuffled", "drop", "n_sets"] },
    Kind { prefix: "svd_", header: &["model_tag", "layer", "rank", "accuracy"] },
    Kind { prefix: "trees_", header: &["model_tag", "layer", "mean_branching", "mean_depth"] },
    Kind { prefix: "spectral_", header: &["model_tag", "layer", "mean_lambda_max"] },
    Kind { prefix: "probe_", header: &["model_tag", "task", "layer", "rank", "metric", "value"] },
    Kind { prefix: "pareto_", header: &["model_tag", "rank", "n_params", "uas"] },
];

/// `(model_tag, metric) → value` with values kept as written.
pub type Metrics = BTreeMap<(String, String), String>;

#[derive(Debug, Default)]
pub struct Collected {
    pub metrics: Metrics,
    /// `(file, expected header, found header)` for unreadable schemas.
    pub mismatches: Vec<(String, String, String)>,
    /// Pareto curves `tag → [(rank, uas)]`.
    pub pareto: BTreeMap<String, Vec<(usize, f64)>>,
}

fn cell<'a>(t: &'a Table, row: &'a [String], name: &str) -> &'a str {
    &row[t.column(name).expect("header checked")]
}

fn flatten(kind: &Kind, stem: &str, t: &Table, out: &mut Collected) -> CliResult<()> {
    let mut put = |tag: &str, metric: String, value: &str| {
        out.metrics.insert((tag.to_string(), metric), value.to_string());
    };
    match kind.prefix {
        "summary_" => {
            for r in &t.rows {
                put(cell(t, r, "model_tag"), cell(t, r, "metric").into(), cell(t, r, "value"));
            }
        }
        "kl_" => {
            if let Some(r) = t.rows.last() {
                put(&display_tag(stem), "kl_to_base/final".into(), cell(t, r, "kl_distance"));
            }
        }
        "pairs_" => {
            for r in &t.rows {
                put(cell(t, r, "checkpoint"), format!("pairs/{}", cell(t, r, "phenomenon")), cell(t, r, "accuracy"));
            }
        }
        "order_" => {
            for r in &t.rows {
                let tag = cell(t, r, "model_tag");
                for m in ["ordered", "mean_shuffled", "drop"] {
                    put(tag, format!("order/{m}"), cell(t, r, m));
                }
            }
        }
        "svd_" => {
            for r in &t.rows {
                let (layer, rank) = (cell(t, r, "layer"), cell(t, r, "rank"));
                let metric = if layer == "-1" { "svd/baseline".into() } else { format!("svd/layer{layer}/rank{rank}") };
                put(cell(t, r, "model_tag"), metric, cell(t, r, "accuracy"));
            }
        }
        "trees_" => {
            for r in &t.rows {
                let (tag, layer) = (cell(t, r, "model_tag"), cell(t, r, "layer"));
                put(tag, format!("trees/layer{layer}/mean_branching"), cell(t, r, "mean_branching"));
                put(tag, format!("trees/layer{layer}/mean_depth"), cell(t, r, "mean_depth"));
            }
        }
        "spectral_" => {
            for r in &t.rows {
                let layer = cell(t, r, "layer");
                put(cell(t, r, "model_tag"), format!("spectral/layer{layer}/mean_lambda_max"), cell(t, r, "mean_lambda_max"));
            }
        }
        "probe_" => {
            for r in &t.rows {
                let rank = cell(t, r, "rank");
                let rank = if rank.is_empty() { String::new() } else { format!("/rank{rank}") };
                let metric = format!(
                    "probe/{}/layer{}{rank}/{}",
                    cell(t, r, "task"),
                    cell(t, r, "layer"),
                    cell(t, r, "metric")
                );
                put(cell(t, r, "model_tag"), metric, cell(t, r, "value"));
            }
        }
        "pareto_" => {
            for r in &t.rows {
                let tag = cell(t, r, "model_tag");
                let (rank, uas) = (cell(t, r, "rank"), cell(t, r, "uas"));
                put(tag, format!("pareto/rank{rank}/uas"), uas);
                let parsed = rank.parse::<usize>().ok().zip(uas.parse::<f64>().ok());
                let (k, v) = parsed.ok_or_else(|| CliError::data(format!("pareto_{stem}.csv: bad row {r:?}")))?;
                out.pareto.entry(tag.to_string()).or_default().push((k, v));
            }
        }
        _ => unreachable!("kind list is closed"),
    }
    Ok(())
}

/// Reads every known CSV in `dir`, in file-name order.
pub fn collect(dir: &Path) -> CliResult<Collected> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut out = Collected::default();
    for name in names {
        let Some(kind) = KINDS.iter().find(|k| name.starts_with(k.prefix)) else {
            continue;
        };
        let stem = &name[kind.prefix.len()..name.len() - 4];
        let t = Table::read(&dir.join(&name))?;
        if t.header != kind.header {
            out.mismatches.push((name.clone(), kind.header.join(","), t.header.join(",")));
            continue;
        }
        flatten(kind, stem, &t, &mut out)?;
    }
    for curve in out.pareto.values_mut() {
        curve.sort_by_key(|p| p.0);
    }
    Ok(out)
}

/// Tags in report order: base, VAN, ADV, then any others sorted.
fn ordered_tags(metrics: &Metrics) -> Vec<String> {
    let all: BTreeSet<&str> = metrics.keys().map(|(t, _)| t.as_str()).collect();
    let mut tags: Vec<String> = ["base", "VAN", "ADV"]
        .into_iter()
        .filter(|t| all.contains(t))
        .map(str::to_string)
        .collect();
    tags.extend(all.into_iter().filter(|t| !["base", "VAN", "ADV"].contains(t)).map(str::to_string));
    tags
}

/// `(metric, base, VAN, ADV, …)`; absent cells are empty.
pub fn report_table(c: &Collected) -> Table {
    let tags = ordered_tags(&c.metrics);
    let mut header = vec!["metric"];
    header.extend(tags.iter().map(String::as_str));
    let mut t = Table::new(&header);
    let names: BTreeSet<&str> = c.metrics.keys().map(|(_, m)| m.as_str()).collect();
    for m in names {
        let mut row = vec![m.to_string()];
        for tag in &tags {
            row.push(c.metrics.get(&(tag.clone(), m.to_string())).cloned().unwrap_or_default());
        }
        t.push(row);
    }
    t
}

pub struct Comparison {
    /// `(model_tag, metric, a, b, delta, status)`; delta is `a − b`.
    pub deltas: Table,
    /// `(model_tag, verdict)`.
    pub verdicts: Table,
    pub flagged: usize,
}

/// Paired deltas between two runs. Metrics present on one side only and
/// files whose schema does not match are flagged, not fatal.
pub fn compare(a: &Collected, b: &Collected) -> Comparison {
    let mut deltas = Table::new(&["model_tag", "metric", "a", "b", "delta", "status"]);
    let mut flagged = 0;
    let mut files: BTreeMap<&str, &str> = BTreeMap::new();
    for (f, _, _) in &a.mismatches {
        files.insert(f, "schema_mismatch_in_a");
    }
    for (f, _, _) in &b.mismatches {
        files.entry(f).and_modify(|s| *s = "schema_mismatch_in_both").or_insert("schema_mismatch_in_b");
    }
    for (f, status) in files {
        deltas.push(vec![String::new(), f.into(), String::new(), String::new(), String::new(), status.into()]);
        flagged += 1;
    }
    let keys: BTreeSet<&(String, String)> = a.metrics.keys().chain(b.metrics.keys()).collect();
    for key in keys {
        let (va, vb) = (a.metrics.get(key), b.metrics.get(key));
        let (delta, status) = match (va, vb) {
            (Some(x), Some(y)) => match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(p), Ok(q)) => (fmt_f64(p - q), "ok"),
                _ => (String::new(), "non_numeric"),
            },
            (Some(_), None) => (String::new(), "missing_in_b"),
            (None, Some(_)) => (String::new(), "missing_in_a"),
            (None, None) => unreachable!("key came from one side"),
        };
        if status != "ok" {
            flagged += 1;
        }
        deltas.push(vec![
            key.0.clone(),
            key.1.clone(),
            va.cloned().unwrap_or_default(),
            vb.cloned().unwrap_or_default(),
            delta,
            status.into(),
        ]);
    }
    let mut verdicts = Table::new(&["model_tag", "verdict"]);
    let tags: BTreeSet<&String> = a.pareto.keys().chain(b.pareto.keys()).collect();
    for tag in tags {
        let verdict = match (a.pareto.get(tag), b.pareto.get(tag)) {
            (Some(x), Some(y)) if x.iter().map(|p| p.0).eq(y.iter().map(|p| p.0)) => {
                let xs: Vec<f64> = x.iter().map(|p| p.1).collect();
                let ys: Vec<f64> = y.iter().map(|p| p.1).collect();
                match pareto_dominance(&xs, &ys) {
                    Ok(d) => d.verdict().to_string(),
                    Err(_) => "incomparable".into(),
                }
            }
            (Some(_), Some(_)) => "rank_mismatch".into(),
            (Some(_), None) => "missing_in_b".into(),
            (None, _) => "missing_in_a".into(),
        };
        verdicts.push(vec![tag.clone(), verdict]);
    }
    Comparison { deltas, verdicts, flagged }
}
