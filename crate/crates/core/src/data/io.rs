use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};
use crate::geometry::GazeAngles;
use crate::heatmap::LandmarkSet;

use super::preprocess::{from_rgb_image, to_rgb_image};
use super::record::{HeadPose, Record};

pub const MANIFEST: &str = "manifest.tsv";
pub const LANDMARK_DIR: &str = "landmarks";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    image_id: String,
    subject_id: String,
    image_path: String,
    head_pitch_rad: f64,
    head_yaw_rad: f64,
    gaze_pitch_rad: f64,
    gaze_yaw_rad: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkFile {
    image_id: String,
    #[serde(default)]
    left: Option<LandmarkSet>,
    #[serde(default)]
    right: Option<LandmarkSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadStats {
    pub loaded: usize,
    /// Records dropped because an eye's landmarks (or the whole file) were absent.
    pub excluded: usize,
}

pub fn load_records(root: &Path) -> Result<Vec<Record>> {
    load_records_with_stats(root).map(|(r, _)| r)
}

/// Reads `manifest.tsv`, `landmarks/<image_id>.json`, and the images.
pub fn load_records_with_stats(root: &Path) -> Result<(Vec<Record>, LoadStats)> {
    let manifest = root.join(MANIFEST);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(&manifest)
        .map_err(|e| csv_error(&manifest, e))?;
    let mut records = Vec::new();
    let mut stats = LoadStats::default();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| csv_error(&manifest, e))?;
        let lm_path = root
            .join(LANDMARK_DIR)
            .join(format!("{}.json", row.image_id));
        let (left, right) = match read_landmarks(&lm_path, &row.image_id)? {
            Some((Some(l), Some(r))) => (l, r),
            _ => {
                stats.excluded += 1;
                log::debug!("excluding {}: landmarks missing", row.image_id);
                continue;
            }
        };
        let img_path = root.join(&row.image_path);
        let img = image::open(&img_path).map_err(|e| FlameError::MissingImage {
            image_id: row.image_id.clone(),
            msg: format!("{}: {e}", img_path.display()),
        })?;
        records.push(Record {
            image_id: row.image_id,
            subject_id: row.subject_id,
            image_path: row.image_path,
            image: Arc::new(from_rgb_image(&img.to_rgb8())),
            left,
            right,
            head_pose: HeadPose::new(row.head_pitch_rad, row.head_yaw_rad),
            gaze: GazeAngles::new(row.gaze_pitch_rad, row.gaze_yaw_rad),
        });
    }
    stats.loaded = records.len();
    if stats.excluded > 0 {
        log::info!(
            "loaded {} records, excluded {} without landmarks for both eyes",
            stats.loaded,
            stats.excluded
        );
    }
    Ok((records, stats))
}

type EyePair = (Option<LandmarkSet>, Option<LandmarkSet>);

fn read_landmarks(path: &Path, image_id: &str) -> Result<Option<EyePair>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(FlameError::io(path, e)),
    };
    let file: LandmarkFile = serde_json::from_str(&text).map_err(|e| FlameError::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if file.image_id != image_id {
        return Err(FlameError::Parse {
            file: path.to_path_buf(),
            line: 1,
            msg: format!(
                "image_id `{}` does not match manifest `{image_id}`",
                file.image_id
            ),
        });
    }
    Ok(Some((file.left, file.right)))
}

fn csv_error(path: &Path, e: csv::Error) -> FlameError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        let csv::ErrorKind::Io(io) = e.into_kind() else {
            unreachable!()
        };
        return FlameError::io(path, io);
    }
    FlameError::Parse {
        file: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}

/// Writes records in the layout [`load_records`] reads.
pub fn export_records(records: &[Record], root: &Path) -> Result<()> {
    let lm_dir = root.join(LANDMARK_DIR);
    fs::create_dir_all(&lm_dir).map_err(|e| FlameError::io(&lm_dir, e))?;
    let manifest = root.join(MANIFEST);
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(&manifest)
        .map_err(|e| csv_error(&manifest, e))?;
    for r in records {
        writer
            .serialize(ManifestRow {
                image_id: r.image_id.clone(),
                subject_id: r.subject_id.clone(),
                image_path: r.image_path.clone(),
                head_pitch_rad: r.head_pose.pitch,
                head_yaw_rad: r.head_pose.yaw,
                gaze_pitch_rad: r.gaze.pitch,
                gaze_yaw_rad: r.gaze.yaw,
            })
            .map_err(|e| csv_error(&manifest, e))?;
        let lm_path = lm_dir.join(format!("{}.json", r.image_id));
        let json = serde_json::to_string(&LandmarkFile {
            image_id: r.image_id.clone(),
            left: Some(r.left.clone()),
            right: Some(r.right.clone()),
        })
        .map_err(|e| FlameError::Checkpoint(e.to_string()))?;
        fs::write(&lm_path, json).map_err(|e| FlameError::io(&lm_path, e))?;
        let img_path = root.join(&r.image_path);
        if let Some(dir) = img_path.parent() {
            fs::create_dir_all(dir).map_err(|e| FlameError::io(dir, e))?;
        }
        to_rgb_image(&r.image)?
            .save_with_format(&img_path, image::ImageFormat::Png)
            .map_err(|e| FlameError::io(&img_path, std::io::Error::other(e)))?;
    }
    writer.flush().map_err(|e| FlameError::io(&manifest, e))?;
    Ok(())
}
