//! Datasets stored as an image directory plus an optional labels CSV.

use std::fs;
use std::path::{Path, PathBuf};

use super::{load_labels_csv, read_image, write_image, write_labels_csv, Dataset, Entry, ImageFormat, Sample};
use crate::{Error, Result};

fn find_image(dir: &Path, id: &str) -> Option<PathBuf> {
    [ImageFormat::Png, ImageFormat::Ppm]
        .iter()
        .map(|f| dir.join(format!("{id}.{}", f.extension())))
        .find(|p| p.is_file())
}

/// Loads the rows of `labels_csv` with images `<id>.png` or `<id>.ppm` from
/// `image_dir`, in CSV order.
pub fn load_labeled_dir(labels_csv: &Path, image_dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(labels_csv).map_err(|e| Error::io(labels_csv, e))?;
    let rows = load_labels_csv(&text).map_err(|e| Error::Data(format!("{}: {e}", labels_csv.display())))?;
    let entries = rows
        .into_iter()
        .map(|(id, label)| {
            let path = find_image(image_dir, &id)
                .ok_or_else(|| Error::Data(format!("no image for `{id}` in {}", image_dir.display())))?;
            Ok(Entry {
                sample: Sample::labeled(read_image(&path)?, label),
                id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entries)
}

/// Loads every PNG/PPM in `dir` as an unlabelled sample, sorted by file name.
/// The id is the file stem.
pub fn load_image_dir(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_some())
        .collect();
    paths.sort();
    let entries = paths
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok(Entry {
                id,
                sample: Sample::unlabeled(read_image(p)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(entries)
}

/// Writes each image as `<id>.png` under `image_dir` and, when given, the
/// labelled rows to `labels_csv`.
pub fn save_dataset(data: &Dataset, image_dir: &Path, labels_csv: Option<&Path>) -> Result<()> {
    fs::create_dir_all(image_dir).map_err(|e| Error::io(image_dir, e))?;
    for e in data.entries() {
        write_image(&image_dir.join(format!("{}.png", e.id)), &e.sample.image)?;
    }
    if let Some(path) = labels_csv {
        let rows = data
            .entries()
            .iter()
            .filter_map(|e| e.sample.label.as_ref().map(|l| (e.id.as_str(), l)));
        fs::write(path, write_labels_csv(rows)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
