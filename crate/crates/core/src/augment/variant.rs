use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cutmix::{cutmix_at, sample_placement, PATCH_FRAC_RANGE};
use super::geom::{apply_geom_with, GeomTransform};
use super::mosaic::{mosaic_with, MosaicLayout};
use super::{AugmentError, BoxStats, SurvivalThresholds};
use crate::dataset::{
    split_dataset, DatasetError, DatasetSplit, LabeledImage, Manifest, Provenance, SplitRatio,
};
use crate::seed::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugConfig {
    pub num_geom: usize,
    pub num_cutmix: usize,
    pub num_mosaic: usize,
    /// How many images to take from the negative pool.
    pub negatives: usize,
    pub seed: u64,
    /// Augment every image and split afterwards, instead of splitting first
    /// and augmenting only the training part.
    pub paper_faithful_split: bool,
    pub split_ratio: SplitRatio,
    pub thresholds: SurvivalThresholds,
    pub mosaic_center_jitter: f64,
    /// CutMix patch area fraction is drawn uniformly from this range.
    pub cutmix_patch_frac: (f64, f64),
    /// Mosaic canvas side; defaults to the larger side of the anchor image.
    pub mosaic_canvas: Option<u32>,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            num_geom: 0,
            num_cutmix: 0,
            num_mosaic: 0,
            negatives: 0,
            seed: 0,
            paper_faithful_split: false,
            split_ratio: SplitRatio::DEFAULT,
            thresholds: SurvivalThresholds::default(),
            mosaic_center_jitter: 0.2,
            cutmix_patch_frac: PATCH_FRAC_RANGE,
            mosaic_canvas: None,
        }
    }
}

impl AugConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        self.split_ratio.validate()?;
        if !(0.0..0.5).contains(&self.mosaic_center_jitter) {
            return Err(AugmentError::InvalidConfig(format!(
                "mosaic center jitter {} outside [0, 0.5)",
                self.mosaic_center_jitter
            )));
        }
        let (lo, hi) = self.cutmix_patch_frac;
        for f in [lo, hi] {
            if !(PATCH_FRAC_RANGE.0..=PATCH_FRAC_RANGE.1).contains(&f) {
                return Err(AugmentError::PatchFraction(f));
            }
        }
        if lo > hi {
            return Err(AugmentError::InvalidConfig(format!(
                "CutMix patch fraction range ({lo}, {hi}) is reversed"
            )));
        }
        let t = &self.thresholds;
        for (name, v) in [
            ("min_visibility", t.min_visibility),
            ("cutmix_transfer", t.cutmix_transfer),
            ("cutmix_occlusion", t.cutmix_occlusion),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(AugmentError::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.mosaic_canvas.is_some_and(|c| c < 2) {
            return Err(AugmentError::CanvasTooSmall(self.mosaic_canvas.unwrap_or(0)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantManifest {
    pub config: AugConfig,
    pub dataset: Manifest,
    /// Boxes trimmed at a canvas or quadrant edge.
    pub clipped_boxes: usize,
    /// Boxes removed by a survival rule.
    pub dropped_boxes: usize,
    /// Parent image ids of every generated image.
    pub sources: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct Variant {
    pub images: Vec<LabeledImage>,
    pub split: DatasetSplit,
    pub manifest: VariantManifest,
}

/// Appends `negatives` to `dataset`, marking them as negatives.
pub fn inject_negatives(
    dataset: &[LabeledImage],
    negatives: &[LabeledImage],
) -> Result<Vec<LabeledImage>, AugmentError> {
    let mut out = dataset.to_vec();
    for neg in negatives {
        if !neg.annotations.is_empty() {
            return Err(AugmentError::AnnotatedNegative(neg.id.clone()));
        }
        out.push(LabeledImage {
            provenance: Provenance::Negative,
            ..neg.clone()
        });
    }
    Ok(out)
}

struct Generated {
    image: LabeledImage,
    stats: BoxStats,
    parents: Vec<String>,
}

/// Builds one dataset variant: injects the first `cfg.negatives` images of
/// `negative_pool`, then adds the configured augmented copies of each source.
///
/// Every generated image draws from its own stream keyed by
/// `(seed, source id, op, copy index)`, so the result does not depend on
/// thread scheduling.
pub fn generate_variant(
    raw: &[LabeledImage],
    negative_pool: &[LabeledImage],
    cfg: &AugConfig,
) -> Result<Variant, AugmentError> {
    if raw.is_empty() {
        return Err(AugmentError::EmptyInput);
    }
    cfg.validate()?;
    if cfg.negatives > negative_pool.len() {
        return Err(AugmentError::NotEnoughNegatives {
            requested: cfg.negatives,
            available: negative_pool.len(),
        });
    }
    let base = inject_negatives(raw, &negative_pool[..cfg.negatives])?;
    let base_ids: Vec<String> = base.iter().map(|i| i.id.clone()).collect();

    let pre_split = if cfg.paper_faithful_split {
        None
    } else {
        Some(split_dataset(&base_ids, cfg.split_ratio, cfg.seed)?)
    };
    let sources: Vec<&LabeledImage> = match &pre_split {
        None => base.iter().collect(),
        Some(split) => {
            let train: HashSet<&str> = split.train.iter().map(String::as_str).collect();
            base.iter().filter(|img| train.contains(img.id.as_str())).collect()
        }
    };

    let generated: Vec<Vec<Generated>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, _)| augment_source(i, &sources, cfg))
        .collect::<Result<_, _>>()?;

    let mut stats = BoxStats::default();
    let mut parents = BTreeMap::new();
    let mut images = base;
    let mut augmented_ids = Vec::new();
    for g in generated.into_iter().flatten() {
        stats += g.stats;
        parents.insert(g.image.id.clone(), g.parents);
        augmented_ids.push(g.image.id.clone());
        images.push(g.image);
    }

    let split = match pre_split {
        None => {
            let ids: Vec<String> = images.iter().map(|i| i.id.clone()).collect();
            split_dataset(&ids, cfg.split_ratio, cfg.seed)?
        }
        Some(mut split) => {
            let mut seen: HashSet<&str> = base_ids.iter().map(String::as_str).collect();
            for id in &augmented_ids {
                if !seen.insert(id) {
                    return Err(DatasetError::DuplicateId(id.clone()).into());
                }
            }
            split.train.extend(augmented_ids);
            split.train.sort();
            split
        }
    };

    let dataset = Manifest::build(&images, &split);
    Ok(Variant {
        images,
        split,
        manifest: VariantManifest {
            config: cfg.clone(),
            dataset,
            clipped_boxes: stats.clipped,
            dropped_boxes: stats.dropped,
            sources: parents,
        },
    })
}

fn augment_source(
    index: usize,
    sources: &[&LabeledImage],
    cfg: &AugConfig,
) -> Result<Vec<Generated>, AugmentError> {
    let src = sources[index];
    let id = src.id.as_str();
    let mut out = Vec::with_capacity(cfg.num_geom + cfg.num_cutmix + cfg.num_mosaic);
    // partners are drawn from the other sources when there are any
    let pick_other = |rng: &mut rand_chacha::ChaCha8Rng| -> usize {
        if sources.len() == 1 {
            return 0;
        }
        let j = rng.gen_range(0..sources.len() - 1);
        if j >= index {
            j + 1
        } else {
            j
        }
    };

    for k in 0..cfg.num_geom {
        let tag = k.to_string();
        let mut rng = rng_for(cfg.seed, &[id, "geom", &tag]);
        let t = GeomTransform::sample(&mut rng);
        let (mut image, stats) = apply_geom_with(src, &t, &cfg.thresholds);
        image.id = format!("{id}__geom{k}");
        out.push(Generated {
            image,
            stats,
            parents: vec![id.to_string()],
        });
    }

    for k in 0..cfg.num_cutmix {
        let tag = k.to_string();
        let mut rng = rng_for(cfg.seed, &[id, "cutmix", &tag]);
        let donor = sources[pick_other(&mut rng)];
        let (lo, hi) = cfg.cutmix_patch_frac;
        let frac = if lo < hi { rng.gen_range(lo..=hi) } else { lo };
        let placement = sample_placement(
            src.width,
            src.height,
            frac,
            derive_seed(cfg.seed, &[id, "cutmix-placement", &tag]),
        )?;
        let (mut image, stats) = cutmix_at(src, donor, &placement, &cfg.thresholds);
        image.id = format!("{id}__cutmix{k}");
        out.push(Generated {
            image,
            stats,
            parents: vec![id.to_string(), donor.id.clone()],
        });
    }

    for k in 0..cfg.num_mosaic {
        let tag = k.to_string();
        let mut rng = rng_for(cfg.seed, &[id, "mosaic", &tag]);
        let mut tiles = vec![src.clone()];
        for _ in 0..3 {
            tiles.push(sources[pick_other(&mut rng)].clone());
        }
        let canvas = cfg.mosaic_canvas.unwrap_or(src.width.max(src.height)).max(2);
        let layout = MosaicLayout::sample(
            canvas,
            cfg.mosaic_center_jitter,
            derive_seed(cfg.seed, &[id, "mosaic-layout", &tag]),
        );
        let (mut image, stats) = mosaic_with(&tiles, &layout, &cfg.thresholds)?;
        image.id = format!("{id}__mosaic{k}");
        out.push(Generated {
            image,
            stats,
            parents: tiles.iter().map(|t| t.id.clone()).collect(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, NormBox};

    fn raw(n: usize) -> Vec<LabeledImage> {
        (0..n)
            .map(|i| {
                let mut img = LabeledImage::filled(format!("img{i:03}"), 12, 10, [(i * 7 % 255) as u8; 3]);
                img.annotations = vec![Annotation::new(i % 3, NormBox::new(0.5, 0.5, 0.3, 0.4))];
                img
            })
            .collect()
    }

    fn negatives(n: usize) -> Vec<LabeledImage> {
        (0..n).map(|i| LabeledImage::filled(format!("neg{i:03}"), 12, 10, [1; 3])).collect()
    }

    #[test]
    fn raw_and_noisy_counts() {
        let cfg = AugConfig::default();
        let v = generate_variant(&raw(200), &[], &cfg).unwrap();
        assert_eq!(v.images.len(), 200);
        assert_eq!(v.split.sizes(), [120, 40, 40]);

        let cfg = AugConfig {
            negatives: 100,
            ..AugConfig::default()
        };
        let v = generate_variant(&raw(200), &negatives(100), &cfg).unwrap();
        assert_eq!(v.images.len(), 300);
        assert_eq!(v.split.sizes(), [180, 60, 60]);
        assert_eq!(v.manifest.dataset.provenance[&Provenance::Negative], 100);
    }

    #[test]
    fn faithful_geom_count() {
        let cfg = AugConfig {
            num_geom: 2,
            paper_faithful_split: true,
            ..AugConfig::default()
        };
        let v = generate_variant(&raw(10), &[], &cfg).unwrap();
        assert_eq!(v.images.len(), 30);
        assert_eq!(v.manifest.dataset.provenance[&Provenance::Geom], 20);
        assert_eq!(v.split.len(), 30);
    }

    #[test]
    fn leak_safe_mode_augments_train_only() {
        let cfg = AugConfig {
            num_geom: 1,
            num_cutmix: 1,
            num_mosaic: 1,
            ..AugConfig::default()
        };
        let v = generate_variant(&raw(10), &[], &cfg).unwrap();
        assert_eq!(v.images.len(), 10 + 6 * 3);
        assert_eq!(v.split.val.len(), 2);
        assert_eq!(v.split.test.len(), 2);
        for id in v.split.val.iter().chain(&v.split.test) {
            assert!(!id.contains("__"));
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = AugConfig {
            num_geom: 2,
            num_cutmix: 1,
            num_mosaic: 1,
            negatives: 2,
            seed: 9,
            ..AugConfig::default()
        };
        let a = generate_variant(&raw(8), &negatives(3), &cfg).unwrap();
        let b = generate_variant(&raw(8), &negatives(3), &cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.split, b.split);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            generate_variant(&[], &[], &AugConfig::default()),
            Err(AugmentError::EmptyInput)
        ));
        let cfg = AugConfig {
            negatives: 5,
            ..AugConfig::default()
        };
        assert!(matches!(
            generate_variant(&raw(3), &negatives(2), &cfg),
            Err(AugmentError::NotEnoughNegatives { requested: 5, available: 2 })
        ));
        let mut bad = negatives(1);
        bad[0].annotations = vec![Annotation::new(0, NormBox::new(0.5, 0.5, 0.1, 0.1))];
        assert!(matches!(inject_negatives(&raw(1), &bad), Err(AugmentError::AnnotatedNegative(_))));
        assert_eq!(inject_negatives(&raw(4), &[]).unwrap(), raw(4));
    }
}
