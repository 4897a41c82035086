use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use cbir_core::ratings::mean_rating;
use cbir_core::retrieval::EmbeddingIndex;
use cbir_core::{Error, Result};

use super::{embed_items, load_dataset, load_model, select_items, write_text, Context};
use crate::config::require;

pub const NEIGHBORS_FILE: &str = "neighbors.csv";
pub const DEFAULT_K: usize = 4;

/// Print the nearest neighbors of one item as CSV.
///
/// Columns: rank, id, distance, malignancy, then the mean rating of every
/// characteristic. The query itself is never returned. With --out the table
/// is also written to neighbors.csv.
#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Dataset directory or manifest file
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Id of the query item
    #[arg(long)]
    pub query_id: Option<String>,
    /// Number of neighbors [default: 4]
    #[arg(long)]
    pub k: Option<usize>,
    /// Search only items of these groups, comma separated
    #[arg(long, value_delimiter = ',')]
    pub groups: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    data: PathBuf,
    data_checksum: String,
    checkpoint: PathBuf,
    query_id: String,
    k: usize,
    groups: Option<Vec<usize>>,
}

pub fn run(args: &RetrieveArgs, ctx: &Context) -> Result<()> {
    let file = &ctx.file.retrieve;
    let data = require(
        args.data.clone(),
        file.data.clone(),
        "data",
        "retrieve.data",
    )?;
    let checkpoint = require(
        args.checkpoint.clone(),
        file.checkpoint.clone(),
        "checkpoint",
        "retrieve.checkpoint",
    )?;
    let query_id = require(
        args.query_id.clone(),
        file.query_id.clone(),
        "query-id",
        "retrieve.query_id",
    )?;
    let k = args.k.or(file.k).unwrap_or(DEFAULT_K);
    if k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    let groups = args.groups.clone().or(file.groups.clone());

    let ds = load_dataset(&data)?;
    let model = load_model(&checkpoint, &ds)?;
    let idx = select_items(&ds, groups.as_deref())?;
    let emb = embed_items(&model, &ds, &idx, ctx.exec)?;
    let index = EmbeddingIndex::new(
        ds.ids(&idx),
        (0..emb.rows()).map(|i| emb.row(i).to_vec()).collect(),
    )?;
    let pos = index
        .position(&query_id)
        .ok_or_else(|| Error::Lookup(query_id.clone()))?;

    let mut table = String::from("rank,id,distance,malignancy");
    for name in ds.schema.names() {
        table.push(',');
        table.push_str(name);
    }
    table.push('\n');
    for (rank, (id, dist)) in index.knn_of(pos, k)?.into_iter().enumerate() {
        let rec = &ds.records[ds.position(&id).ok_or_else(|| Error::Lookup(id.clone()))?];
        table.push_str(&format!("{},{id},{dist:.6},{}", rank + 1, rec.malignancy));
        for v in mean_rating(&rec.rating_set)?.values() {
            table.push_str(&format!(",{v:.4}"));
        }
        table.push('\n');
    }
    print!("{table}");

    if ctx.out.is_some() || ctx.file.out.is_some() {
        let out = ctx.out_dir()?;
        write_text(&out.join(NEIGHBORS_FILE), &table)?;
        let resolved = Resolved {
            data,
            data_checksum: format!("{:016x}", ds.checksum()),
            checkpoint,
            query_id,
            k,
            groups,
        };
        ctx.write_manifest("retrieve", ctx.seed(), &out, &resolved)?;
    }
    Ok(())
}
