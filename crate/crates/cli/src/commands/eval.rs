use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cbir_core::annotation::{RegressionReport, DEFAULT_RIDGE};
use cbir_core::linalg::Matrix;
use cbir_core::pipeline::{
    evaluate_embeddings, load_embeddings, write_embeddings, Dataset, EvalMetrics,
};
use cbir_core::retrieval::{EmbeddingIndex, HubReport, KHubness, DEFAULT_K_SET};
use cbir_core::{Error, Result};

use super::{embed_items, fmt_opt, load_dataset, load_model, select_items, write_text, Context};
use crate::config::require;

pub const METRICS_FILE: &str = "metrics.csv";
pub const KOCC_FILE: &str = "kocc.csv";
pub const HUB_REPORT_FILE: &str = "hub_report.toml";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const REGRESSION_FILE: &str = "regression.csv";
/// Neighborhood size of the largest-hub report.
pub const DEFAULT_HUB_K: usize = 2;

/// Evaluate embeddings from a checkpoint or an embeddings file.
///
/// Writes metrics.csv (metric,k,value), kocc.csv (item_id,k,n_k) and
/// hub_report.toml; a checkpoint also yields embeddings.jsonl and the
/// per-characteristic regression.csv.
#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory or manifest file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model checkpoint to embed the dataset with
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSONL embeddings ({"id", "vector"} per line) to evaluate instead
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Neighborhood sizes, comma separated [default: 3,5,7,11,17]
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Neighborhood size of the hub report [default: 2]
    #[arg(long)]
    pub hub_k: Option<usize>,
    /// Restrict evaluation to these groups, comma separated
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
enum Source {
    Checkpoint(PathBuf),
    Embeddings(PathBuf),
}

#[derive(Debug, Serialize)]
struct Resolved {
    data: PathBuf,
    data_checksum: String,
    source: Source,
    k: Vec<usize>,
    hub_k: usize,
    groups: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct HubReportFile<'a> {
    n_items: usize,
    correlation: f64,
    hubness_index: f64,
    hub: &'a HubReport,
    per_k: &'a [KHubness],
}

fn resolve_source(args: &EvalArgs, ctx: &Context) -> Result<Source> {
    let pick = |c: Option<PathBuf>, e: Option<PathBuf>| match (c, e) {
        (Some(c), None) => Ok(Some(Source::Checkpoint(c))),
        (None, Some(e)) => Ok(Some(Source::Embeddings(e))),
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(Error::Config(
            "give either --checkpoint or --embeddings, not both".into(),
        )),
    };
    let file = &ctx.file.eval;
    match pick(args.checkpoint.clone(), args.embeddings.clone())? {
        Some(s) => Ok(s),
        None => pick(file.checkpoint.clone(), file.embeddings.clone())?
            .ok_or_else(|| Error::Config("one of --checkpoint or --embeddings is required".into())),
    }
}

fn metrics_csv(metrics: &EvalMetrics, regression: Option<&RegressionReport>) -> String {
    let mut out = String::from("metric,k,value\n");
    out.push_str(&format!("n_items,,{}\n", metrics.n_items));
    out.push_str(&format!("correlation,,{:.6}\n", metrics.correlation));
    out.push_str(&format!("hubness_index,,{:.6}\n", metrics.hubness));
    for h in &metrics.per_k.per_k {
        out.push_str(&format!("skewness,{},{:.6}\n", h.k, h.skewness));
        out.push_str(&format!("hubness_index,{},{:.6}\n", h.k, h.index));
        out.push_str(&format!("orphans,{},{}\n", h.k, h.orphans));
        out.push_str(&format!("max_count,{},{}\n", h.k, h.max_count));
    }
    if let Some(r) = regression {
        out.push_str(&format!(
            "mahalanobis_mean,,{}\n",
            fmt_opt(r.mahalanobis_mean)
        ));
        out.push_str(&format!("mahalanobis_items,,{}\n", r.mahalanobis_items));
    }
    out
}

fn kocc_csv(index: &EmbeddingIndex, k_set: &[usize], ctx: &Context) -> Result<String> {
    let profiles = k_set
        .iter()
        .map(|&k| index.k_occurrences_with(k, ctx.exec))
        .collect::<Result<Vec<_>>>()?;
    let mut out = String::from("item_id,k,n_k\n");
    for (i, id) in index.ids().iter().enumerate() {
        for p in &profiles {
            out.push_str(&format!("{id},{},{}\n", p.k, p.counts[i]));
        }
    }
    Ok(out)
}

/// Embeddings and dataset positions of the evaluated items.
fn embed_source(
    source: &Source,
    ds: &Dataset,
    groups: Option<&[usize]>,
    ctx: &Context,
) -> Result<(Vec<usize>, Matrix, Option<RegressionReport>)> {
    match source {
        Source::Checkpoint(path) => {
            let model = load_model(path, ds)?;
            let idx = select_items(ds, groups)?;
            let emb = embed_items(&model, ds, &idx, ctx.exec)?;
            let pred = model.predict_ratings(&ds.inputs(&idx), &ds.schema)?;
            let report =
                RegressionReport::build(&pred, &ds.rating_sets(&idx), &ds.schema, DEFAULT_RIDGE)?;
            Ok((idx, emb, Some(report)))
        }
        Source::Embeddings(path) => {
            let imported = load_embeddings(ds, path)?;
            let idx = match groups {
                Some(g) => {
                    let mut idx: Vec<usize> = imported
                        .positions
                        .iter()
                        .copied()
                        .filter(|&p| g.contains(&ds.records[p].group))
                        .collect();
                    idx.sort_unstable();
                    idx
                }
                None => imported.positions.clone(),
            };
            if idx.is_empty() {
                return Err(Error::Domain(
                    "no embedded items in the selected groups".into(),
                ));
            }
            let emb = imported.select(ds, &idx)?;
            Ok((idx, emb, None))
        }
    }
}

pub fn run(args: &EvalArgs, ctx: &Context) -> Result<()> {
    let file = &ctx.file.eval;
    let source = resolve_source(args, ctx)?;
    let data = require(args.data.clone(), file.data.clone(), "data", "eval.data")?;
    let k_set = args
        .k
        .clone()
        .or(file.k.clone())
        .unwrap_or_else(|| DEFAULT_K_SET.to_vec());
    let hub_k = args.hub_k.or(file.hub_k).unwrap_or(DEFAULT_HUB_K);
    if k_set.is_empty() || k_set.contains(&0) || hub_k == 0 {
        return Err(Error::Config("neighborhood sizes must be positive".into()));
    }
    let groups = args.groups.clone().or(file.groups.clone());

    let ds = load_dataset(&data)?;
    let (idx, emb, regression) = embed_source(&source, &ds, groups.as_deref(), ctx)?;
    let ids = ds.ids(&idx);
    let metrics = evaluate_embeddings(ids.clone(), &emb, &ds.rating_sets(&idx), &k_set, ctx.exec)?;
    let index = EmbeddingIndex::new(
        ids.clone(),
        (0..emb.rows()).map(|i| emb.row(i).to_vec()).collect(),
    )?;
    let hub = index.hub_report(hub_k)?;

    let out = ctx.out_dir()?;
    write_text(
        &out.join(METRICS_FILE),
        &metrics_csv(&metrics, regression.as_ref()),
    )?;
    write_text(&out.join(KOCC_FILE), &kocc_csv(&index, &k_set, ctx)?)?;
    let report = HubReportFile {
        n_items: metrics.n_items,
        correlation: metrics.correlation,
        hubness_index: metrics.hubness,
        hub: &hub,
        per_k: &metrics.per_k.per_k,
    };
    let text = toml::to_string(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&out.join(HUB_REPORT_FILE), &text)?;
    if let Some(r) = &regression {
        write_embeddings(&out.join(EMBEDDINGS_FILE), &ids, &emb)?;
        write_text(&out.join(REGRESSION_FILE), &r.to_csv())?;
    }

    let resolved = Resolved {
        data,
        data_checksum: format!("{:016x}", ds.checksum()),
        source,
        k: k_set,
        hub_k,
        groups,
    };
    ctx.write_manifest("eval", ctx.seed(), &out, &resolved)?;
    println!(
        "{} items: correlation {:.4}, hubness {:.4}; largest {}-hub `{}` ({} queries)",
        metrics.n_items, metrics.correlation, metrics.hubness, hub.k, hub.hub_id, hub.hub_count
    );
    Ok(())
}
