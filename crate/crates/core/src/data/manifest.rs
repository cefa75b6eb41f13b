use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::BBox;

use super::{load_pts, write_pts, DataError, GrayImage, Result, Sample};

pub const MANIFEST_VERSION: u32 = 1;

/// One sample on disk. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub bbox: [f64; 4],
    pub points: String,
    pub domain: String,
    pub labeled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub records: Vec<ManifestRecord>,
}

/// Writes `images/*.png`, `points/*.pts` and `manifest.json` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<Manifest> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("points"))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("images/{i:05}.png");
        let points = format!("points/{i:05}.pts");
        s.image.save_png(&dir.join(&image))?;
        write_pts(&dir.join(&points), &s.landmarks)?;
        records.push(ManifestRecord {
            image,
            bbox: s.bbox.as_array(),
            points,
            domain: s.domain.clone(),
            labeled: s.labeled,
        });
    }
    let m = Manifest { version: MANIFEST_VERSION, records };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if m.version != MANIFEST_VERSION {
        return Err(DataError::Manifest(format!("unsupported manifest version {}", m.version)));
    }
    let root = path.parent().unwrap_or(Path::new("."));
    m.records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let image = GrayImage::load_png(&root.join(&r.image))?;
            let landmarks = load_pts(&root.join(&r.points))
                .map_err(|e| DataError::Manifest(format!("record {i} ({}): {e}", r.points)))?;
            let [x1, y1, x2, y2] = r.bbox;
            Ok(Sample { image, landmarks, bbox: BBox::new(x1, y1, x2, y2), domain: r.domain.clone(), labeled: r.labeled })
        })
        .collect()
}
