//! Shared file format: every artifact is a JSON object carrying `"kind"` and
//! `"version"` next to the artifact's own fields.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detection::CoincidenceDistribution;
use crate::em::EmResult;
use crate::error::{Error, Result};
use crate::intensity::IntensityGrid;
use crate::pnd::JointPnd;

pub const FORMAT_VERSION: u32 = 1;

/// A type that can be stored in an envelope.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

impl Artifact for JointPnd {
    const KIND: &'static str = "joint_pnd";
}

impl Artifact for CoincidenceDistribution {
    const KIND: &'static str = "coincidence_distribution";
}

impl Artifact for EmResult {
    const KIND: &'static str = "em_result";
}

impl Artifact for IntensityGrid {
    const KIND: &'static str = "intensity_grid";
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    #[serde(flatten)]
    payload: T,
}

#[derive(Deserialize)]
struct Header {
    kind: String,
    version: u32,
}

pub fn to_json<T: Artifact>(artifact: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        kind: &'static str,
        version: u32,
        #[serde(flatten)]
        payload: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Borrowed {
        kind: T::KIND,
        version: FORMAT_VERSION,
        payload: artifact,
    })?;
    text.push('\n');
    Ok(text)
}

/// `kind` tag of an envelope, after checking the format version.
pub fn peek_kind(text: &str) -> Result<String> {
    let header: Header = serde_json::from_str(text)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::domain(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    Ok(header.kind)
}

pub fn from_json<T: Artifact>(text: &str) -> Result<T> {
    let kind = peek_kind(text)?;
    if kind != T::KIND {
        return Err(Error::domain(format!(
            "expected a {} file, found {kind}",
            T::KIND
        )));
    }
    let env: Envelope<T> = serde_json::from_str(text)?;
    Ok(env.payload)
}

pub fn write_file<T: Artifact>(path: &Path, artifact: &T) -> Result<()> {
    fs::write(path, to_json(artifact)?)?;
    Ok(())
}

pub fn read_file<T: Artifact>(path: &Path) -> Result<T> {
    from_json(&fs::read_to_string(path)?)
}

/// Any artifact, dispatched on its `kind` tag.
#[derive(Debug, Clone)]
pub enum AnyArtifact {
    JointPnd(JointPnd),
    Coincidence(CoincidenceDistribution),
    EmResult(EmResult),
    IntensityGrid(IntensityGrid),
}

pub fn from_json_any(text: &str) -> Result<AnyArtifact> {
    Ok(match peek_kind(text)?.as_str() {
        JointPnd::KIND => AnyArtifact::JointPnd(from_json(text)?),
        CoincidenceDistribution::KIND => AnyArtifact::Coincidence(from_json(text)?),
        EmResult::KIND => AnyArtifact::EmResult(from_json(text)?),
        IntensityGrid::KIND => AnyArtifact::IntensityGrid(from_json(text)?),
        other => return Err(Error::domain(format!("unknown artifact kind {other:?}"))),
    })
}
