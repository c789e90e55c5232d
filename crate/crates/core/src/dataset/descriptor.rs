use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, SplitRatio};

/// Class list of the aerial litter data: plastic bottles, glass bottles and
/// everything else.
pub const DEFAULT_CLASSES: [&str; 3] = ["plastic bottle", "glass bottle", "waste"];

/// `dataset.json`: ordered class names, split ratio and split seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub classes: Vec<String>,
    #[serde(default)]
    pub splits: SplitRatio,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DatasetDescriptor {
    fn default() -> Self {
        Self {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            splits: SplitRatio::DEFAULT,
            seed: 0,
        }
    }
}

impl DatasetDescriptor {
    pub const FILE_NAME: &'static str = "dataset.json";

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let desc: Self = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if desc.classes.is_empty() {
            return Err(DatasetError::Layout(format!(
                "{}: descriptor declares no classes",
                path.display()
            )));
        }
        desc.splits.validate()?;
        Ok(desc)
    }

    /// Loads `dir/dataset.json` when present, otherwise the default descriptor.
    pub fn load_or_default(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(Self::FILE_NAME);
        if path.is_file() {
            Self::load(&path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut text = serde_json::to_string_pretty(self).expect("descriptor serializes");
        text.push('\n');
        fs::write(path, text).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
