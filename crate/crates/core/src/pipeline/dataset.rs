//! In-memory datasets of rated patches and their on-disk formats.
//!
//! A dataset directory holds `manifest.jsonl` (one record per line), an
//! optional `schema.json`, and raw little-endian `f32` input blobs.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Fnv1a, Matrix};
use crate::model::{InputKind, ModelInput};
use crate::ratings::{
    malignancy_class, mean_rating, CharacteristicSchema, MalignancyClass, RatingSet,
};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub group: usize,
    pub input: ModelInput,
    pub rating_set: RatingSet,
    pub predicted_rating_set: Option<RatingSet>,
    pub malignancy: MalignancyClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: CharacteristicSchema,
    pub records: Vec<PatchRecord>,
}

impl Dataset {
    pub fn new(schema: CharacteristicSchema, records: Vec<PatchRecord>) -> Result<Self> {
        let ds = Dataset { schema, records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Domain("dataset is empty".into()));
        }
        let mut ids = HashSet::new();
        let kind = self.input_kind()?;
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Format(format!("duplicate id `{}`", r.id)));
            }
            if r.group >= super::N_GROUPS {
                return Err(Error::Format(format!(
                    "record {} has group {}",
                    r.id, r.group
                )));
            }
            if input_kind_of(&r.input) != kind {
                return Err(Error::Format(format!(
                    "record {} has a different input shape",
                    r.id
                )));
            }
            r.rating_set.check(&self.schema)?;
            if let Some(p) = &r.predicted_rating_set {
                if p.dim() != self.schema.len() {
                    return Err(Error::shape(self.schema.len(), p.dim()));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input_kind(&self) -> Result<InputKind> {
        self.records
            .first()
            .map(|r| input_kind_of(&r.input))
            .ok_or_else(|| Error::Domain("dataset is empty".into()))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// Record positions belonging to any of `groups`, in dataset order.
    pub fn indices_in_groups(&self, groups: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| groups.contains(&self.records[i].group))
            .collect()
    }

    pub fn ids(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&i| self.records[i].id.clone()).collect()
    }

    pub fn inputs(&self, idx: &[usize]) -> Vec<ModelInput> {
        idx.iter().map(|&i| self.records[i].input.clone()).collect()
    }

    pub fn rating_sets(&self, idx: &[usize]) -> Vec<RatingSet> {
        idx.iter()
            .map(|&i| self.records[i].rating_set.clone())
            .collect()
    }

    /// Order-sensitive hash of ids, groups, inputs and ratings.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::default();
        for r in &self.records {
            h.write(r.id.as_bytes());
            h.write(&(r.group as u64).to_le_bytes());
            h.write_f64s(r.input.values());
            for v in r.rating_set.ratings() {
                h.write_f64s(v.values());
            }
            if let Some(w) = r.rating_set.weights() {
                h.write_f64s(w);
            }
        }
        h.finish()
    }
}

fn input_kind_of(input: &ModelInput) -> InputKind {
    match input {
        ModelInput::Features(v) => InputKind::FeatureVector { dim: v.len() },
        ModelInput::Patch { height, width, .. } => InputKind::ImagePatch {
            height: *height,
            width: *width,
        },
    }
}

/// Malignancy class of a rating set from its mean malignancy score.
pub fn classify(set: &RatingSet, schema: &CharacteristicSchema) -> Result<MalignancyClass> {
    let m = schema.malignancy_index();
    malignancy_class(mean_rating(set)?.values()[m], schema.range(m))
}

/// Seeded group assignment stratified by malignancy class. Each class is
/// shuffled and dealt round-robin; the dealing position carries over between
/// classes so group sizes stay within one of each other.
pub fn split_groups(classes: &[MalignancyClass], n_groups: usize, seed: u64) -> Result<Vec<usize>> {
    if n_groups == 0 {
        return Err(Error::Config("n_groups must be positive".into()));
    }
    if classes.len() < n_groups {
        return Err(Error::Domain(format!(
            "{} items cannot fill {n_groups} groups",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = vec![0; classes.len()];
    let mut next = 0;
    for class in MalignancyClass::ALL {
        let mut members: Vec<usize> = (0..classes.len())
            .filter(|&i| classes[i] == class)
            .collect();
        members.shuffle(&mut rng);
        for i in members {
            groups[i] = next % n_groups;
            next += 1;
        }
    }
    Ok(groups)
}

#[derive(Debug, Serialize, Deserialize)]
struct InputRef {
    kind: String,
    #[serde(rename = "ref")]
    path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    shape: Option<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    group: usize,
    input: InputRef,
    ratings: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    predicted_ratings: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    malignancy_class: Option<MalignancyClass>,
}

fn safe_file_stem(id: &str) -> Result<&str> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(id)
    } else {
        Err(Error::Format(format!(
            "id `{id}` is not usable as a blob file name"
        )))
    }
}

fn write_blob(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn set_rows(set: &RatingSet) -> Vec<Vec<f64>> {
    set.ratings().iter().map(|r| r.values().to_vec()).collect()
}

/// Writes the manifest, schema and blobs into `dir`. Inputs are stored as
/// `f32`, so a reloaded dataset carries single-precision inputs.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    create_dir(&dir.join(BLOB_DIR))?;
    let schema =
        serde_json::to_string_pretty(&ds.schema).map_err(|e| Error::Format(e.to_string()))?;
    let schema_path = dir.join(SCHEMA_FILE);
    fs::write(&schema_path, schema + "\n").map_err(|e| Error::io(&schema_path, e))?;

    let mut manifest = String::new();
    for r in &ds.records {
        let rel = format!("{BLOB_DIR}/{}.f32", safe_file_stem(&r.id)?);
        write_blob(&dir.join(&rel), r.input.values())?;
        let input = match &r.input {
            ModelInput::Features(v) => InputRef {
                kind: "features".into(),
                path: rel,
                dim: Some(v.len()),
                shape: None,
            },
            ModelInput::Patch { height, width, .. } => InputRef {
                kind: "patch".into(),
                path: rel,
                dim: None,
                shape: Some([*height, *width]),
            },
        };
        let line = ManifestLine {
            id: r.id.clone(),
            group: r.group,
            input,
            ratings: set_rows(&r.rating_set),
            weights: r.rating_set.weights().map(<[f64]>::to_vec),
            predicted_ratings: r.predicted_rating_set.as_ref().map(set_rows),
            malignancy_class: Some(r.malignancy),
        };
        manifest.push_str(&serde_json::to_string(&line).map_err(|e| Error::Format(e.to_string()))?);
        manifest.push('\n');
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Loads a dataset from a directory or a manifest path. Without a
/// `schema.json` next to the manifest the default nine-characteristic schema
/// is assumed.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (dir, manifest) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
            path.to_path_buf(),
        )
    };
    let schema_path = dir.join(SCHEMA_FILE);
    let schema = if schema_path.exists() {
        let text = fs::read_to_string(&schema_path).map_err(|e| Error::io(&schema_path, e))?;
        let s: CharacteristicSchema = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", schema_path.display())))?;
        CharacteristicSchema::new(s.names().to_vec(), s.ranges().to_vec())?
    } else {
        CharacteristicSchema::default()
    };

    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", manifest.display(), n + 1)))?;
        let blob = dir.join(&m.input.path);
        let input = match (m.input.kind.as_str(), m.input.dim, m.input.shape) {
            ("features", Some(dim), _) => ModelInput::Features(read_blob(&blob, dim)?),
            ("patch", _, Some([height, width])) => ModelInput::Patch {
                height,
                width,
                data: read_blob(&blob, height * width)?,
            },
            (kind, _, _) => {
                return Err(Error::Format(format!(
                    "record {}: input kind `{kind}` without matching dim/shape",
                    m.id
                )))
            }
        };
        let rating_set = match m.weights {
            Some(w) => RatingSet::with_weights(m.ratings.into_iter().map(Into::into).collect(), w)?,
            None => RatingSet::from_values(m.ratings)?,
        };
        let malignancy = match m.malignancy_class {
            Some(c) => c,
            None => classify(&rating_set, &schema)?,
        };
        records.push(PatchRecord {
            id: m.id,
            group: m.group,
            input,
            rating_set,
            predicted_rating_set: m
                .predicted_ratings
                .map(RatingSet::from_values)
                .transpose()?,
            malignancy,
        });
    }
    Dataset::new(schema, records)
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

pub fn write_embeddings(path: &Path, ids: &[String], vectors: &Matrix) -> Result<()> {
    if ids.len() != vectors.rows() {
        return Err(Error::shape(ids.len(), vectors.rows()));
    }
    let mut out = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        let line = EmbeddingLine {
            id: id.clone(),
            vector: vectors.row(i).to_vec(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n").expect("in-memory write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `(id, vector)` pairs, rejecting duplicate ids and mixed dimensions.
pub fn read_embeddings(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: EmbeddingLine = serde_json::from_str(line)
            .map_err(|err| Error::Format(format!("{} line {}: {err}", path.display(), n + 1)))?;
        if !seen.insert(e.id.clone()) {
            return Err(Error::Format(format!("duplicate embedding id `{}`", e.id)));
        }
        if let Some((_, first)) = out.first() {
            if first.len() != e.vector.len() {
                return Err(Error::Format(format!(
                    "embedding `{}` has dimension {}, expected {}",
                    e.id,
                    e.vector.len(),
                    first.len()
                )));
            }
        }
        if e.vector.is_empty() {
            return Err(Error::Format(format!("embedding `{}` is empty", e.id)));
        }
        out.push((e.id, e.vector));
    }
    if out.is_empty() {
        return Err(Error::Format(format!(
            "{} holds no embeddings",
            path.display()
        )));
    }
    Ok(out)
}

/// Map from id to dataset position, for joins with external files.
pub fn id_positions(ds: &Dataset) -> HashMap<&str, usize> {
    ds.records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect()
}
