//! Synthetic benchmark generators and their JSON Lines storage.

pub mod grid;
pub mod path;
pub mod subset;
pub mod toy;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grid::{cell_to_pixel, Cell, Raster};
pub use path::{gen_path_instance, grow_fork_tree, ForkTree, PathConfig, PathInstance};
pub use subset::{gen_subset_instance, resample_supervision, SubsetConfig, SubsetInstance};
pub use toy::{toy_fixture, ToyFixture};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SubsetRecord {
    id: u64,
    seed: u64,
    embeddings: Vec<Vec<f64>>,
    labels: Vec<usize>,
    k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PathRecord {
    id: u64,
    seed: u64,
    h: usize,
    w: usize,
    #[serde(rename = "D")]
    d: usize,
    mask: Vec<Vec<u32>>,
    paths: Vec<Vec<Cell>>,
}

/// Storage form of an instance; targets are never written and are re-drawn
/// from the stored seed on load.
pub trait JsonlRecord: Sized {
    fn to_json_value(&self) -> serde_json::Value;
    fn from_json_value(v: serde_json::Value) -> Result<Self>;
}

impl JsonlRecord for SubsetInstance {
    fn to_json_value(&self) -> serde_json::Value {
        let rec = SubsetRecord {
            id: self.id,
            seed: self.seed,
            embeddings: self.embeddings.rows().into_iter().map(|r| r.to_vec()).collect(),
            labels: self.cluster_labels.clone(),
            k: self.num_clusters,
        };
        serde_json::to_value(rec).expect("plain record")
    }

    fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let rec: SubsetRecord = serde_json::from_value(v)?;
        let d = rec.embeddings.first().map_or(0, Vec::len);
        if rec.embeddings.iter().any(|r| r.len() != d) {
            return Err(Error::ShapeMismatch("ragged embeddings".into()));
        }
        let flat: Vec<f64> = rec.embeddings.into_iter().flatten().collect();
        let n = flat.len().checked_div(d).unwrap_or(0);
        let embeddings = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        SubsetInstance::from_parts(rec.id, rec.seed, embeddings, rec.labels, rec.k)
    }
}

impl JsonlRecord for PathInstance {
    fn to_json_value(&self) -> serde_json::Value {
        let rec = PathRecord {
            id: self.id,
            seed: self.seed,
            h: self.grid_h,
            w: self.grid_w,
            d: self.downsample,
            mask: self.drivable_mask.to_rle(),
            paths: self.valid_paths.clone(),
        };
        serde_json::to_value(rec).expect("plain record")
    }

    fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let rec: PathRecord = serde_json::from_value(v)?;
        let mask = Raster::from_rle(rec.w * rec.d, &rec.mask)?;
        PathInstance::from_parts(rec.id, rec.seed, rec.h, rec.w, rec.d, mask, rec.paths)
    }
}

pub fn write_jsonl<T: JsonlRecord>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, &item.to_json_value())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: JsonlRecord>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut items = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(T::from_json_value(serde_json::from_str(&line)?)?);
    }
    Ok(items)
}

/// Reads any serde-deserializable JSON Lines file.
pub fn read_jsonl_as<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    reader
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
