//! Synthetic class-centroid datasets for smoke runs and tests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{write_fvecs, write_manifest, DatasetError, PairRecord};
use crate::inference::DEFAULT_TEMPLATE;
use crate::rng::{self, normal_vec};

pub const CLASS_NAMES: [&str; 8] = [
    "star", "galaxy", "nebula", "planet", "comet", "asteroid", "moon", "cluster",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: Vec<String>,
    pub per_class: usize,
    pub dim: usize,
    /// Standard deviation of the per-sample Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: CLASS_NAMES.map(String::from).to_vec(),
            per_class: 100,
            dim: 32,
            noise: 0.3,
            seed: 0,
        }
    }
}

/// Records (features file `features.fvecs`) and their vectors. Each vector
/// is its class centroid, drawn from Normal(0, 1), plus Normal(0, noise)
/// noise. Captions are the class name rendered through the default template.
pub fn generate(spec: &SyntheticSpec) -> (Vec<PairRecord>, Vec<Vec<f32>>) {
    let mut rng = rng::seeded(spec.seed);
    let centroids: Vec<Vec<f64>> = spec
        .classes
        .iter()
        .map(|_| normal_vec(&mut rng, spec.dim, 1.0))
        .collect();
    let mut records = Vec::new();
    let mut vectors = Vec::new();
    for i in 0..spec.per_class {
        for (c, name) in spec.classes.iter().enumerate() {
            let noise = normal_vec(&mut rng, spec.dim, spec.noise);
            let v: Vec<f32> = centroids[c]
                .iter()
                .zip(&noise)
                .map(|(a, b)| (a + b) as f32)
                .collect();
            records.push(PairRecord {
                id: format!("{name}-{i:04}"),
                features: "features.fvecs".into(),
                index: vectors.len(),
                caption: Some(DEFAULT_TEMPLATE.replace("{CLS}", name)),
                label: name.clone(),
                split: None,
            });
            vectors.push(v);
        }
    }
    (records, vectors)
}

/// Writes `features.fvecs` and `manifest.jsonl` into `dir`, returning the
/// manifest path.
pub fn write_synthetic(spec: &SyntheticSpec, dir: impl AsRef<Path>) -> Result<PathBuf, DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DatasetError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let (records, vectors) = generate(spec);
    write_fvecs(dir.join("features.fvecs"), &vectors)?;
    let manifest = dir.join("manifest.jsonl");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}
