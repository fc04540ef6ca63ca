use std::fs;
use std::path::Path;

use anyhow::Context;
use bead_core::paraff::TopologySample;
use bead_core::RegulationSolution;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// A file holding one record or an array of records.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    Many(Vec<T>),
    One(T),
}

/// Records read from a file, remembering whether it held a bare object.
#[derive(Debug)]
pub struct Records<T> {
    pub items: Vec<T>,
    pub single: bool,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Records<T>> {
    Ok(match read_json::<OneOrMany<T>>(path)? {
        OneOrMany::Many(items) => Records { items, single: false },
        OneOrMany::One(item) => Records { items: vec![item], single: true },
    })
}

/// Pretty JSON of one record or the whole list, mirroring the input shape.
pub fn to_output<T: Serialize>(items: &[T], single: bool) -> anyhow::Result<String> {
    Ok(match items {
        [one] if single => serde_json::to_string_pretty(one)?,
        _ => serde_json::to_string_pretty(items)?,
    })
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GoldRecord {
    Sample(Box<TopologySample>),
    Solution(RegulationSolution),
}

/// Gold solutions from either topology samples or solution records.
pub fn read_gold(path: &Path) -> anyhow::Result<Vec<RegulationSolution>> {
    Ok(read_records::<GoldRecord>(path)?
        .items
        .into_iter()
        .map(|g| match g {
            GoldRecord::Sample(s) => s.gold_solution(),
            GoldRecord::Solution(s) => s,
        })
        .collect())
}

/// `dir/name.svg` becomes `dir/name.<index>.svg`.
pub fn indexed_path(path: &Path, index: i64) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{index}"),
    };
    path.with_file_name(name)
}
