//! JSON documents: bounds profiles, campaign reports, cluster configs,
//! fault plans and evaluation subsets.

use std::fs;
use std::path::Path;

use faultrange_core::campaign::CampaignReport;
use faultrange_core::metrics::ClusterConfig;
use faultrange_core::{BoundsProfile, FaultPlan};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deserialize `bytes`, reporting the JSON path of the first offending field.
pub fn from_slice_with_path<T: DeserializeOwned>(bytes: &[u8], file: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            file: file.to_string(),
            path,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_slice_with_path(&bytes, &path.display().to_string())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json(value)).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

/// Correctly classified images of a dataset, as written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSubset {
    pub dataset_id: String,
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub correct_indices: Vec<usize>,
}

pub fn load_bounds(path: &Path) -> Result<BoundsProfile> {
    let b: BoundsProfile = read_json(path)?;
    b.validate()?;
    Ok(b)
}

pub fn load_report(path: &Path) -> Result<CampaignReport> {
    let r: CampaignReport = read_json(path)?;
    r.verify()?;
    Ok(r)
}

pub fn load_clusters(path: &Path) -> Result<ClusterConfig> {
    read_json(path)
}

pub fn load_plan(path: &Path) -> Result<FaultPlan> {
    read_json(path)
}

pub fn load_subset(path: &Path) -> Result<EvalSubset> {
    read_json(path)
}
