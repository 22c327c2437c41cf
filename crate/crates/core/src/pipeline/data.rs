use std::path::Path;

use super::PipelineError;
use crate::config::RunConfig;
use crate::image::{load_image, ImageTensor};
use crate::synth::SyntheticData;

/// Images with stable string ids, in id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
}

impl InputSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Every `*.png` in `dir`, sorted by file name; ids are file stems.
    pub fn from_dir(dir: &Path) -> Result<Self, PipelineError> {
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        let mut set = InputSet::default();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            set.images.push(load_image(&p)?);
            set.ids.push(id);
        }
        if set.is_empty() {
            return Err(PipelineError::EmptyInputs(dir.display().to_string()));
        }
        Ok(set)
    }

    fn numbered(prefix: &str, images: Vec<ImageTensor>) -> Self {
        Self {
            ids: (0..images.len()).map(|i| format!("{prefix}{i:03}")).collect(),
            images,
        }
    }

    /// Requires RGB images of one common size, as ranker batches need.
    fn check_uniform(&self, what: &str) -> Result<(), PipelineError> {
        let Some(first) = self.images.first() else {
            return Ok(());
        };
        for (id, img) in self.ids.iter().zip(&self.images) {
            if img.channels() != 3 || img.height() != first.height() || img.width() != first.width() {
                return Err(PipelineError::NonUniformInputs {
                    set: what.to_string(),
                    id: id.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Training inputs X, pristine corpus Y and validation inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub train: InputSet,
    pub normal: InputSet,
    pub validation: InputSet,
}

impl Datasets {
    /// Reads the configured directories, generating synthetic sets for the unset ones.
    pub fn load(config: &RunConfig) -> Result<Self, PipelineError> {
        let synth = SyntheticData::generate(
            config.synthetic_size,
            config.synthetic_train,
            config.synthetic_normal,
            config.synthetic_validation,
            config.seed,
        );
        let pick = |dir: &Option<std::path::PathBuf>, prefix: &str, fallback: Vec<ImageTensor>| match dir {
            Some(d) => InputSet::from_dir(d),
            None => Ok(InputSet::numbered(prefix, fallback)),
        };
        let data = Self {
            train: pick(&config.train_dir, "x", synth.train_low)?,
            normal: pick(&config.normal_dir, "y", synth.normal)?,
            validation: pick(&config.validation_dir, "v", synth.validation_low)?,
        };
        data.train.check_uniform("train")?;
        data.validation.check_uniform("validation")?;
        Ok(data)
    }
}
