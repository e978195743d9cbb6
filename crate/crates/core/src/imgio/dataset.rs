//! On-disk datasets: a directory of PPM files plus `manifest.csv` with
//! header `path,class_id,split`. Paths are relative to the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{load_ppm, save_ppm, LabeledSample, PpmError, Split};

pub const MANIFEST_FILE: &str = "manifest.csv";
const MANIFEST_HEADER: &str = "path,class_id,split";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: PpmError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

fn relative_path(sample: &LabeledSample) -> String {
    format!("images/{:06}.ppm", sample.id)
}

/// Writes every sample as `images/<id>.ppm` and a manifest row per sample.
pub fn write_dataset(dir: &Path, samples: &[LabeledSample]) -> Result<(), DatasetError> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for sample in samples {
        let rel = relative_path(sample);
        let path = dir.join(&rel);
        save_ppm(&sample.image, &path).map_err(|source| DatasetError::Image { path, source })?;
        let _ = writeln!(manifest, "{rel},{},{}", sample.class_id, sample.split.as_str());
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(io_err(&path))
}

/// Reads `manifest.csv` in `dir` and every image it lists. Sample ids are
/// manifest row indices.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledSample>, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(DatasetError::Manifest { line: 1, msg: format!("expected header `{MANIFEST_HEADER}`") });
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| DatasetError::Manifest { line: line_no, msg: msg.to_string() };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        let class_id: u32 = fields[1].parse().map_err(|_| bad("class_id is not an integer"))?;
        let split = Split::parse(fields[2]).ok_or_else(|| bad("split must be train or test"))?;
        let img_path = dir.join(fields[0]);
        let image = load_ppm(&img_path).map_err(|source| DatasetError::Image { path: img_path, source })?;
        samples.push(LabeledSample { id: samples.len(), image, class_id, split });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::{generate_dataset, GeneratorSpec};

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&GeneratorSpec {
            num_classes: 3,
            train_per_class: 2,
            test_per_class: 1,
            image_size: 16,
            seed: 1,
        })
        .unwrap();
        write_dataset(dir.path(), &ds.samples).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds.samples);
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.lines().count(), 10);
        assert_eq!(manifest.lines().nth(1), Some("images/000000.ppm,0,train"));
    }

    #[test]
    fn bad_manifest_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "path,class_id,split\nx.ppm,zero,train\n").unwrap();
        match load_dataset(dir.path()) {
            Err(DatasetError::Manifest { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
