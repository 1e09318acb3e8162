//! Project files: one JSON document, optionally gzip-compressed.
//!
//! The payload is serialized with sorted keys and hashed with SHA-256; the
//! hex digest is stored next to the payload fields as `checksum`.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Project;
use crate::dataset::validate;

pub const FORMAT_VERSION: u32 = 1;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProjectError {
    #[error("checksum verification failed: {0}")]
    Integrity(String),
    #[error("unsupported project format version {found} (this build reads version {FORMAT_VERSION})")]
    Version { found: u64 },
    #[error("project format version {version}: {message}")]
    Schema { version: u64, message: String },
    #[error("project is inconsistent: {}", .0.join("; "))]
    Referential(Vec<String>),
}

fn digest(payload: &Value) -> String {
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}

/// Canonical bytes: compact JSON with lexicographically sorted keys.
pub fn save_project(project: &Project) -> Vec<u8> {
    let mut payload = serde_json::to_value(project).expect("project serializes");
    let checksum = digest(&payload);
    payload.as_object_mut().expect("project is an object").insert("checksum".into(), Value::String(checksum));
    payload.to_string().into_bytes()
}

pub fn save_project_gzip(project: &Project) -> Vec<u8> {
    let mut encoder = GzEncoder::new(Vec::new(), Compression::default());
    encoder.write_all(&save_project(project)).expect("in-memory write");
    encoder.finish().expect("in-memory flush")
}

/// Loads a project, checking version, checksum, schema and referential
/// integrity in that order. Nothing is returned unless every check passes.
pub fn load_project(bytes: &[u8]) -> Result<Project, ProjectError> {
    let raw = if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| ProjectError::Integrity(format!("gzip stream is corrupt: {e}")))?;
        out
    } else {
        bytes.to_vec()
    };
    let value: Value = serde_json::from_slice(&raw)
        .map_err(|e| ProjectError::Integrity(format!("file is truncated or not JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(ProjectError::Integrity("top level is not an object".into()));
    };

    let version = map.get("version").and_then(Value::as_u64).ok_or_else(|| ProjectError::Schema {
        version: 0,
        message: "missing version".into(),
    })?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(ProjectError::Version { found: version });
    }

    let stored = match map.remove("checksum") {
        Some(Value::String(s)) => s,
        _ => return Err(ProjectError::Integrity("missing checksum".into())),
    };
    let payload = Value::Object(map);
    let actual = digest(&payload);
    if actual != stored {
        return Err(ProjectError::Integrity(format!("stored {stored}, computed {actual}")));
    }

    let project: Project =
        serde_json::from_value(payload).map_err(|e| ProjectError::Schema { version, message: e.to_string() })?;
    let problems = integrity_problems(&project);
    if !problems.is_empty() {
        return Err(ProjectError::Referential(problems));
    }
    Ok(project)
}

/// Cross-component consistency problems, empty when the project is sound.
pub fn integrity_problems(project: &Project) -> Vec<String> {
    let mut out: Vec<String> = validate(&project.corpus).into_iter().map(|d| d.message).collect();
    if let Err(e) = project.scores.check_against(&project.corpus) {
        out.push(e.to_string());
    }
    for (key, embedding) in &project.embeddings {
        if let Err(e) = embedding.check_against(&project.corpus) {
            out.push(format!("embedding {key}: {e}"));
        }
    }
    if let Some(active) = &project.view_settings.active_embedding {
        if !project.embeddings.contains_key(active) {
            out.push(format!("active embedding {active} does not exist"));
        }
    }
    if let Err(e) = project.filters.validate() {
        out.push(e.to_string());
    }
    for f in &project.filters.axis_filters {
        if !project.scores.contains_model(&f.model_id) {
            out.push(format!("filter references unknown model {}", f.model_id));
        }
    }
    let categories = project.corpus.categories();
    for c in project.filters.category_filter.iter().flatten().chain(&project.view_settings.highlight) {
        if !categories.contains(c) {
            out.push(format!("unknown category {c}"));
        }
    }
    let model_ids = project.scores.model_ids();
    let mut probe_ids = BTreeSet::new();
    for probe in &project.probes {
        if !probe.id.starts_with(super::PROBE_PREFIX) || !probe_ids.insert(probe.id.as_str()) {
            out.push(format!("invalid or duplicate probe id {}", probe.id));
        }
        let scored: Vec<&str> = probe.scores.iter().map(|s| s.model_id.as_str()).collect();
        if scored != model_ids {
            out.push(format!("probe {} is not scored on every model", probe.id));
        }
    }
    out
}
