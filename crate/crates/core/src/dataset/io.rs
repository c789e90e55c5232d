//! On-disk layout: `images/{train,val,test}/<id>.png` with matching
//! `labels/{train,val,test}/<id>.txt`, plus a `manifest.json` summary.
//! A flat `images/<id>.png` + `labels/<id>.txt` layout is accepted on read.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    format_labels, parse_label_file, Annotation, DatasetError, DatasetSplit, LabeledImage,
    Provenance, SplitName, SplitRatio,
};

/// Per-image line of a manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: SplitName,
    pub provenance: Provenance,
    pub boxes: usize,
}

/// Machine-readable dataset summary: counts per split, per provenance and
/// per class.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub total_images: usize,
    pub total_boxes: usize,
    pub splits: BTreeMap<SplitName, usize>,
    pub provenance: BTreeMap<Provenance, usize>,
    pub split_provenance: BTreeMap<SplitName, BTreeMap<Provenance, usize>>,
    pub class_boxes: BTreeMap<usize, usize>,
    pub split_ratio: SplitRatio,
    pub images: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    /// Summarizes `images` under `split`. Images missing from the split are
    /// skipped; use [`write_dataset`] for the checked path.
    pub fn build(images: &[LabeledImage], split: &DatasetSplit) -> Self {
        let by_id: HashMap<&str, &LabeledImage> =
            images.iter().map(|img| (img.id.as_str(), img)).collect();
        let mut m = Manifest {
            split_ratio: split.split_ratio,
            ..Default::default()
        };
        for name in SplitName::ALL {
            m.splits.insert(name, 0);
            m.split_provenance.insert(name, BTreeMap::new());
        }
        for (id, name) in split.assignments() {
            let Some(img) = by_id.get(id) else { continue };
            m.total_images += 1;
            m.total_boxes += img.annotations.len();
            *m.splits.entry(name).or_default() += 1;
            *m.provenance.entry(img.provenance).or_default() += 1;
            *m.split_provenance
                .entry(name)
                .or_default()
                .entry(img.provenance)
                .or_default() += 1;
            for ann in &img.annotations {
                *m.class_boxes.entry(ann.class_id).or_default() += 1;
            }
            m.images.push(ManifestEntry {
                id: id.to_string(),
                split: name,
                provenance: img.provenance,
                boxes: img.annotations.len(),
            });
        }
        m
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(path, bytes).map_err(|source| io_err(path, source))
}

/// Writes images and labels into the split layout and returns the manifest
/// (also written to `dir/manifest.json`).
pub fn write_dataset(
    dir: &Path,
    images: &[LabeledImage],
    split: &DatasetSplit,
) -> Result<Manifest, DatasetError> {
    let mut by_id: HashMap<&str, &LabeledImage> = HashMap::with_capacity(images.len());
    for img in images {
        if by_id.insert(img.id.as_str(), img).is_some() {
            return Err(DatasetError::DuplicateId(img.id.clone()));
        }
    }
    let mut assigned = HashSet::with_capacity(split.len());
    for (id, _) in split.assignments() {
        if !by_id.contains_key(id) {
            return Err(DatasetError::UnknownId(id.to_string()));
        }
        if !assigned.insert(id) {
            return Err(DatasetError::DuplicateId(id.to_string()));
        }
    }
    if let Some(img) = images.iter().find(|img| !assigned.contains(img.id.as_str())) {
        return Err(DatasetError::Unassigned(img.id.clone()));
    }

    for name in SplitName::ALL {
        for sub in ["images", "labels"] {
            let d = dir.join(sub).join(name.as_str());
            fs::create_dir_all(&d).map_err(|source| io_err(&d, source))?;
        }
    }
    for (id, name) in split.assignments() {
        let img = by_id[id];
        let png = dir.join("images").join(name.as_str()).join(format!("{id}.png"));
        image::RgbImage::from_raw(img.width, img.height, img.pixels.clone())
            .ok_or_else(|| DatasetError::RasterSize {
                id: id.to_string(),
                expected: img.width as usize * img.height as usize * 3,
                actual: img.pixels.len(),
            })?
            .save_with_format(&png, image::ImageFormat::Png)
            .map_err(|source| DatasetError::Image {
                path: png.clone(),
                source,
            })?;
        let txt = dir.join("labels").join(name.as_str()).join(format!("{id}.txt"));
        write_file(&txt, format_labels(&img.annotations).as_bytes())?;
    }

    let manifest = Manifest::build(images, split);
    write_file(&dir.join(Manifest::FILE_NAME), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Images read back from disk. `split` is `None` for a flat layout.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub images: Vec<LabeledImage>,
    pub split: Option<DatasetSplit>,
}

impl LoadedDataset {
    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        self.images.iter().find(|img| img.id == id)
    }

    /// Images of one split, in split-list order.
    pub fn split_images(&self, name: SplitName) -> Vec<LabeledImage> {
        let Some(split) = &self.split else {
            return Vec::new();
        };
        let by_id: HashMap<&str, &LabeledImage> =
            self.images.iter().map(|i| (i.id.as_str(), i)).collect();
        split
            .ids(name)
            .iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|i| (*i).clone()))
            .collect()
    }
}

fn sorted_entries(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    let rd = fs::read_dir(dir).map_err(|source| io_err(dir, source))?;
    for entry in rd {
        let path = entry.map_err(|source| io_err(dir, source))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_labels(path: &Path, class_count: usize) -> Result<Vec<Annotation>, DatasetError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
    parse_label_file(&text, class_count).map_err(|source| DatasetError::Label {
        path: path.to_path_buf(),
        source,
    })
}

fn read_image_dir(
    images_dir: &Path,
    labels_dir: &Path,
    class_count: usize,
    provenance: &HashMap<String, Provenance>,
) -> Result<Vec<LabeledImage>, DatasetError> {
    let mut out = Vec::new();
    for png in sorted_entries(images_dir, "png")? {
        let id = stem(&png);
        let rgb = image::open(&png)
            .map_err(|source| DatasetError::Image {
                path: png.clone(),
                source,
            })?
            .to_rgb8();
        let annotations = read_labels(&labels_dir.join(format!("{id}.txt")), class_count)?;
        let prov = provenance.get(&id).copied().unwrap_or(Provenance::Raw);
        let (w, h) = rgb.dimensions();
        let img = LabeledImage::new(id, w, h, rgb.into_raw(), annotations, prov)?;
        img.validate(class_count)?;
        out.push(img);
    }
    Ok(out)
}

/// Reads a dataset directory in either the split or the flat layout.
/// Provenance is restored from `manifest.json` when one is present.
pub fn read_dataset(dir: &Path, class_count: usize) -> Result<LoadedDataset, DatasetError> {
    let images_root = dir.join("images");
    if !images_root.is_dir() {
        return Err(DatasetError::Layout(format!(
            "{}: no images/ directory",
            dir.display()
        )));
    }
    let manifest_path = dir.join(Manifest::FILE_NAME);
    let manifest = if manifest_path.is_file() {
        Some(Manifest::load(&manifest_path)?)
    } else {
        None
    };
    let provenance: HashMap<String, Provenance> = manifest
        .as_ref()
        .map(|m| m.images.iter().map(|e| (e.id.clone(), e.provenance)).collect())
        .unwrap_or_default();

    let is_split = SplitName::ALL
        .iter()
        .any(|s| images_root.join(s.as_str()).is_dir());
    if !is_split {
        let images = read_image_dir(&images_root, &dir.join("labels"), class_count, &provenance)?;
        check_unique(&images)?;
        return Ok(LoadedDataset {
            images,
            split: None,
        });
    }

    let mut images = Vec::new();
    let mut split = DatasetSplit::default();
    for name in SplitName::ALL {
        let sub = images_root.join(name.as_str());
        if !sub.is_dir() {
            continue;
        }
        let part = read_image_dir(
            &sub,
            &dir.join("labels").join(name.as_str()),
            class_count,
            &provenance,
        )?;
        split.ids_mut(name).extend(part.iter().map(|i| i.id.clone()));
        images.extend(part);
    }
    check_unique(&images)?;
    split.split_ratio = match &manifest {
        Some(m) => m.split_ratio,
        None => {
            let n = split.len().max(1) as f64;
            SplitRatio(split.sizes().map(|s| s as f64 / n))
        }
    };
    Ok(LoadedDataset {
        images,
        split: Some(split),
    })
}

fn check_unique(images: &[LabeledImage]) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for img in images {
        if !seen.insert(img.id.as_str()) {
            return Err(DatasetError::DuplicateId(img.id.clone()));
        }
    }
    Ok(())
}

/// Reads every `.txt` label file below `dir/labels` (or `dir` itself when it
/// has no `labels/` child), keyed by file stem.
pub fn read_label_tree(
    dir: &Path,
    class_count: usize,
) -> Result<BTreeMap<String, Vec<Annotation>>, DatasetError> {
    let root = if dir.join("labels").is_dir() {
        dir.join("labels")
    } else {
        dir.to_path_buf()
    };
    let mut out = BTreeMap::new();
    let mut stack = vec![root];
    while let Some(d) = stack.pop() {
        let rd = fs::read_dir(&d).map_err(|source| io_err(&d, source))?;
        for entry in rd {
            let path = entry.map_err(|source| io_err(&d, source))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "txt") {
                let id = stem(&path);
                let anns = read_labels(&path, class_count)?;
                if out.insert(id.clone(), anns).is_some() {
                    return Err(DatasetError::DuplicateId(id));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::NormBox;

    fn img(id: &str, anns: Vec<Annotation>) -> LabeledImage {
        let mut i = LabeledImage::filled(id, 8, 6, [10, 20, 30]);
        i.annotations = anns;
        i
    }

    #[test]
    fn train_only_split_writes_two_files() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![img("a", vec![Annotation::new(1, NormBox::new(0.5, 0.5, 0.25, 0.5))])];
        let split = DatasetSplit {
            train: vec!["a".into()],
            ..Default::default()
        };
        let m = write_dataset(dir.path(), &images, &split).unwrap();
        assert!(dir.path().join("images/train/a.png").is_file());
        assert!(dir.path().join("labels/train/a.txt").is_file());
        let files: usize = ["images", "labels"]
            .iter()
            .flat_map(|s| SplitName::ALL.map(|n| dir.path().join(s).join(n.as_str())))
            .map(|d| fs::read_dir(d).unwrap().count())
            .sum();
        assert_eq!(files, 2);
        assert_eq!(m.splits[&SplitName::Train], 1);
        assert_eq!(m.class_boxes[&1], 1);
    }

    #[test]
    fn negative_gets_empty_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut neg = img("bg", vec![]);
        neg.provenance = Provenance::Negative;
        let split = DatasetSplit {
            val: vec!["bg".into()],
            ..Default::default()
        };
        write_dataset(dir.path(), &[neg], &split).unwrap();
        let label = dir.path().join("labels/val/bg.txt");
        assert_eq!(fs::read_to_string(label).unwrap(), "");
        let back = read_dataset(dir.path(), 3).unwrap();
        assert_eq!(back.images[0].provenance, Provenance::Negative);
    }

    #[test]
    fn split_consistency_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let images = vec![img("a", vec![]), img("b", vec![])];
        let unknown = DatasetSplit {
            train: vec!["a".into(), "zzz".into()],
            ..Default::default()
        };
        assert!(matches!(
            write_dataset(dir.path(), &images, &unknown),
            Err(DatasetError::UnknownId(id)) if id == "zzz"
        ));
        let partial = DatasetSplit {
            train: vec!["a".into()],
            ..Default::default()
        };
        assert!(matches!(
            write_dataset(dir.path(), &images, &partial),
            Err(DatasetError::Unassigned(id)) if id == "b"
        ));
        let dup = vec![img("a", vec![]), img("a", vec![])];
        assert!(matches!(
            write_dataset(dir.path(), &dup, &partial),
            Err(DatasetError::DuplicateId(_))
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let split = DatasetSplit {
            train: vec!["a".into()],
            ..Default::default()
        };
        let err = write_dataset(&blocker, &[img("a", vec![])], &split).unwrap_err();
        assert!(matches!(err, DatasetError::Io { .. }));
    }

    #[test]
    fn flat_layout_reads_without_split() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("images")).unwrap();
        fs::create_dir_all(dir.path().join("labels")).unwrap();
        image::RgbImage::new(4, 4).save(dir.path().join("images/x.png")).unwrap();
        fs::write(dir.path().join("labels/x.txt"), "2 0.5 0.5 0.5 0.5\n").unwrap();
        let ds = read_dataset(dir.path(), 3).unwrap();
        assert!(ds.split.is_none());
        assert_eq!(ds.images[0].annotations[0].class_id, 2);

        fs::write(dir.path().join("labels/x.txt"), "2 0.9 0.9 0.4 0.1\n").unwrap();
        assert!(matches!(
            read_dataset(dir.path(), 3),
            Err(DatasetError::Label { .. })
        ));
    }

    #[test]
    fn label_tree_walks_subdirectories() {
        let dir = tempfile::tempdir().unwrap();
        let labels = dir.path().join("labels");
        fs::create_dir_all(labels.join("val")).unwrap();
        fs::write(labels.join("val/a.txt"), "0 0.5 0.5 0.1 0.1\n").unwrap();
        fs::write(labels.join("b.txt"), "").unwrap();
        let tree = read_label_tree(dir.path(), 3).unwrap();
        assert_eq!(tree.len(), 2);
        assert!(tree["b"].is_empty());
    }
}
