//! Manifest ingestion and morphology bucketing.
//!
//! A manifest is JSON-lines, one street-view record per line:
//!
//! ```json
//! {"id": "r1", "image": "img/r1.png", "upd_detected": true, "factor": "Building",
//!  "mask": "mask/r1.png", "hw_ratio": 0.8, "scenario": "BR"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Invalid lines are
//! rejected one by one; the rest proceed.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::gateway::raster;
use crate::metrics::PerceptionScores;
use crate::prompt::{scenario_mapping, DisorderFactor, ScenarioId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MorphologyBucket {
    BarelyPopulated,
    LivingSpaces,
    UrbanHub,
}

impl MorphologyBucket {
    pub const ALL: [MorphologyBucket; 3] = [Self::BarelyPopulated, Self::LivingSpaces, Self::UrbanHub];

    pub fn label(self) -> &'static str {
        match self {
            Self::BarelyPopulated => "BarelyPopulated",
            Self::LivingSpaces => "LivingSpaces",
            Self::UrbanHub => "UrbanHub",
        }
    }

    /// Half-open description of the H/W ratio range.
    pub fn bounds(self) -> &'static str {
        match self {
            Self::BarelyPopulated => "a < 0.5",
            Self::LivingSpaces => "0.5 <= a <= 1.5",
            Self::UrbanHub => "a > 1.5",
        }
    }
}

impl fmt::Display for MorphologyBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Street-canyon height/width ratio to morphology bucket. 0.5 belongs to
/// `LivingSpaces`.
pub fn bucket_morphology(hw_ratio: f64) -> Result<MorphologyBucket, PipelineError> {
    if !(hw_ratio >= 0.0) || !hw_ratio.is_finite() {
        return Err(PipelineError::InvalidHwRatio(hw_ratio));
    }
    Ok(if hw_ratio < 0.5 {
        MorphologyBucket::BarelyPopulated
    } else if hw_ratio <= 1.5 {
        MorphologyBucket::LivingSpaces
    } else {
        MorphologyBucket::UrbanHub
    })
}

/// Precomputed result of a third-party editing method, carried through to
/// reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalResult {
    pub method: String,
    #[serde(default)]
    pub trigger: Option<String>,
    /// Falls back to the scores fetched for the raw image when absent.
    #[serde(default)]
    pub raw_scores: Option<PerceptionScores>,
    pub edited_scores: PerceptionScores,
}

/// Detection output for a record with urban physical disorder.
#[derive(Debug, Clone, PartialEq)]
pub struct Disorder {
    pub factor: DisorderFactor,
    pub mask_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetViewRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub disorder: Option<Disorder>,
    pub hw_ratio: f64,
    pub scenario: ScenarioId,
    pub external_results: Vec<ExternalResult>,
}

impl StreetViewRecord {
    pub fn upd_detected(&self) -> bool {
        self.disorder.is_some()
    }

    pub fn morphology(&self) -> MorphologyBucket {
        bucket_morphology(self.hw_ratio).expect("validated at ingest")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    id: String,
    image: PathBuf,
    upd_detected: bool,
    #[serde(default)]
    factor: Option<String>,
    #[serde(default)]
    mask: Option<PathBuf>,
    hw_ratio: f64,
    scenario: String,
    #[serde(default)]
    external_results: Vec<ExternalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    /// 1-based manifest line.
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub records: Vec<StreetViewRecord>,
    pub rejected: Vec<Rejection>,
}

impl Manifest {
    pub fn total(&self) -> usize {
        self.records.len() + self.rejected.len()
    }

    pub fn find(&self, id: &str) -> Option<&StreetViewRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn validate_line(line: ManifestLine, base: &Path) -> Result<StreetViewRecord, String> {
    if line.id.trim().is_empty() {
        return Err("empty id".into());
    }
    let scenario: ScenarioId = line.scenario.parse().map_err(|e| format!("{e}"))?;
    bucket_morphology(line.hw_ratio).map_err(|e| e.to_string())?;
    let image_path = resolve(base, &line.image);
    let image_bytes = fs::read(&image_path).map_err(|e| format!("image {}: {e}", image_path.display()))?;
    let image = raster::inspect(&image_bytes).map_err(|e| format!("image {}: {e}", image_path.display()))?;

    let disorder = if line.upd_detected {
        let factor_name = line.factor.ok_or("upd_detected requires a factor")?;
        let factor: DisorderFactor = factor_name.parse().map_err(|e| format!("{e}"))?;
        let mask_rel = line.mask.ok_or("upd_detected requires a mask path")?;
        let mask_path = resolve(base, &mask_rel);
        let mask_bytes = fs::read(&mask_path).map_err(|e| format!("mask {}: {e}", mask_path.display()))?;
        let mask = raster::inspect(&mask_bytes).map_err(|e| format!("mask {}: {e}", mask_path.display()))?;
        if (mask.width, mask.height) != (image.width, image.height) {
            return Err(format!(
                "mask is {}x{} but image is {}x{}",
                mask.width, mask.height, image.width, image.height
            ));
        }
        if !mask.is_luma8() {
            return Err(format!("mask must be single-channel 8-bit, got {:?}", mask.color));
        }
        scenario_mapping(scenario, Some(factor)).map_err(|e| e.to_string())?;
        Some(Disorder { factor, mask_path })
    } else {
        None
    };

    Ok(StreetViewRecord {
        id: line.id,
        image_path,
        disorder,
        hw_ratio: line.hw_ratio,
        scenario,
        external_results: line.external_results,
    })
}

/// Parses and validates a manifest. Fails only when the file itself cannot
/// be read.
pub fn ingest_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut manifest = Manifest::default();
    let mut seen = HashSet::new();

    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parsed: ManifestLine = match serde_json::from_str(raw) {
            Ok(l) => l,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(raw)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|x| x.as_str()).map(str::to_string));
                manifest.rejected.push(Rejection { line: lineno, id, reason: e.to_string() });
                continue;
            }
        };
        let id = parsed.id.clone();
        if !seen.insert(id.clone()) {
            manifest.rejected.push(Rejection { line: lineno, id: Some(id), reason: "duplicate id".into() });
            continue;
        }
        match validate_line(parsed, base) {
            Ok(r) => manifest.records.push(r),
            Err(reason) => {
                log::warn!("manifest line {lineno} ({id}) rejected: {reason}");
                manifest.rejected.push(Rejection { line: lineno, id: Some(id), reason });
            }
        }
    }
    Ok(manifest)
}
