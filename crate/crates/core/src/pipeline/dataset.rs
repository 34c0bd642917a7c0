//! Image directory scanning and pose joining.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geoeval::{read_pose_csv, PoseTable};
use crate::image::{is_image_path, Image};

/// Name of the optional pose table inside an image directory.
pub const POSE_FILE: &str = "poses.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Reference,
    Query,
    Train,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    /// Sorted by id.
    pub images: Vec<ManifestEntry>,
    pub poses: Option<PoseTable>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn load_images(&self) -> Result<Vec<(String, Image)>> {
        self.images
            .iter()
            .map(|e| Ok((e.id.clone(), Image::load(&e.path)?)))
            .collect()
    }
}

/// Scan `root` for PNG / PPM images (ids are file stems) and join
/// `poses.csv` when present. Reference and query splits must have a pose
/// for every image.
pub fn ingest(root: &Path, split: Split) -> Result<DatasetManifest> {
    let dir = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in dir {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if !path.is_file() || !is_image_path(&path) {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::data(format!("{}: file name is not UTF-8", path.display())))?
            .to_string();
        image::image_dimensions(&path)
            .map_err(|e| Error::data(format!("{}: unreadable image: {e}", path.display())))?;
        if let Some(prev) = found.insert(id.clone(), path.clone()) {
            return Err(Error::data(format!(
                "duplicate image id {id}: {} and {}",
                prev.display(),
                path.display()
            )));
        }
    }
    let pose_path = root.join(POSE_FILE);
    let poses = if pose_path.is_file() {
        Some(read_pose_csv(&pose_path)?)
    } else {
        None
    };
    if split != Split::Train {
        for id in found.keys() {
            if !poses.as_ref().is_some_and(|p| p.contains_key(id)) {
                return Err(Error::data(format!(
                    "{}: no pose for image {id}",
                    pose_path.display()
                )));
            }
        }
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        split,
        images: found
            .into_iter()
            .map(|(id, path)| ManifestEntry { id, path })
            .collect(),
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoeval::{write_pose_csv, Pose};

    #[test]
    fn empty_and_posed_directories() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest(dir.path(), Split::Reference).unwrap().is_empty());
        let mut poses = PoseTable::new();
        for i in 0..3 {
            let id = format!("img{i}");
            Image::filled(4, 4, 3, 0.5).save(dir.path().join(format!("{id}.png"))).unwrap();
            poses.insert(id, Pose::identity());
        }
        assert!(ingest(dir.path(), Split::Reference).is_err());
        assert_eq!(ingest(dir.path(), Split::Train).unwrap().len(), 3);
        write_pose_csv(&dir.path().join(POSE_FILE), &poses).unwrap();
        let m = ingest(dir.path(), Split::Query).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.images[0].id, "img0");
    }

    #[test]
    fn malformed_rows_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        Image::filled(4, 4, 3, 0.5).save(dir.path().join("a.png")).unwrap();
        std::fs::write(
            dir.path().join(POSE_FILE),
            "image_id,tx,ty,tz,qw,qx,qy,qz\na,0,0,0,1,0,0\n",
        )
        .unwrap();
        let err = ingest(dir.path(), Split::Reference).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("line 2")), "{err}");
        Image::filled(4, 4, 3, 0.5).save(dir.path().join("a.ppm")).unwrap();
        assert!(matches!(ingest(dir.path(), Split::Train), Err(Error::Data(_))));
        std::fs::remove_file(dir.path().join("a.ppm")).unwrap();
        std::fs::remove_file(dir.path().join(POSE_FILE)).unwrap();
        std::fs::write(dir.path().join("b.png"), b"not a png").unwrap();
        let err = ingest(dir.path(), Split::Train).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("b.png")), "{err}");
    }
}
