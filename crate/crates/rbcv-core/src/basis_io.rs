//! On-disk format of a reduced basis: a versioned JSON manifest plus one
//! binary payload file per gradient element.
//!
//! ```text
//! <dir>/basis.json            manifest
//! <dir>/elements/elem_###.bin gradient payloads (grid or quadratic)
//! ```
//!
//! Recycled elements store their reference mean directly in the manifest.

use crate::cv::{Algorithm, BasisElement, BasisMeta, ElementPayload, ReducedBasis};
use crate::error::{Error, Result};
use crate::models::{KolmogorovPayload, ModelDescriptor};
use crate::params::ParameterPoint;
use crate::pde::{GridFunction, HookeanKolmogorov};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "basis.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestElement {
    lambda: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    algorithm: Algorithm,
    model: ModelDescriptor,
    #[serde(flatten)]
    meta: BasisMeta,
    elements: Vec<ManifestElement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_cov: Option<Vec<f64>>,
}

/// Writes the manifest and payload files under `dir`; returns the manifest
/// path.
pub fn save_basis(basis: &ReducedBasis, dir: &Path) -> Result<PathBuf> {
    basis.validate()?;
    fs::create_dir_all(dir)?;
    let mut elements = Vec::with_capacity(basis.len());
    for (i, e) in basis.elements.iter().enumerate() {
        match &e.payload {
            ElementPayload::RecycledMean(mean) => elements.push(ManifestElement {
                lambda: e.lambda.coords().to_vec(),
                mean: Some(*mean),
                payload: None,
            }),
            ElementPayload::Kolmogorov(payload) => {
                let rel = format!("elements/elem_{i:03}.bin");
                let path = dir.join(&rel);
                fs::create_dir_all(path.parent().expect("payload path has a parent"))?;
                let mut w = BufWriter::new(fs::File::create(&path)?);
                match payload {
                    KolmogorovPayload::Grid(g) => g.write_binary(&mut w)?,
                    KolmogorovPayload::Quadratic(hk) => hk.write_binary(&mut w)?,
                }
                elements.push(ManifestElement {
                    lambda: e.lambda.coords().to_vec(),
                    mean: None,
                    payload: Some(rel),
                });
            }
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        algorithm: basis.algorithm,
        model: basis.model.clone(),
        meta: basis.meta.clone(),
        elements,
        reference_cov: basis.reference_cov.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json + "\n")?;
    Ok(path)
}

/// Loads a basis from its manifest path (or the directory holding it).
pub fn load_basis(path: &Path) -> Result<ReducedBasis> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = manifest_path
        .parent()
        .ok_or_else(|| Error::invalid("manifest path has no parent directory"))?
        .to_path_buf();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Serialization(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    let mut elements = Vec::with_capacity(manifest.elements.len());
    for (i, e) in manifest.elements.iter().enumerate() {
        let payload = match (manifest.algorithm, e.mean, &e.payload) {
            (Algorithm::Recycled, Some(mean), None) => ElementPayload::RecycledMean(mean),
            (Algorithm::Gradient, None, Some(rel)) => {
                let bytes = fs::read(dir.join(rel))?;
                let payload = match bytes.get(..4) {
                    Some(b"RBGF") => {
                        KolmogorovPayload::Grid(GridFunction::read_binary(&mut bytes.as_slice())?)
                    }
                    Some(b"RBHK") => KolmogorovPayload::Quadratic(
                        HookeanKolmogorov::read_binary(&mut bytes.as_slice())?,
                    ),
                    _ => {
                        return Err(Error::Serialization(format!(
                            "unknown payload magic in element {i}"
                        )))
                    }
                };
                ElementPayload::Kolmogorov(payload)
            }
            _ => {
                return Err(Error::Serialization(format!(
                    "element {i} does not match the manifest algorithm"
                )))
            }
        };
        elements.push(BasisElement {
            lambda: ParameterPoint(e.lambda.clone()),
            payload,
        });
    }
    let basis = ReducedBasis {
        algorithm: manifest.algorithm,
        model: manifest.model,
        elements,
        meta: manifest.meta,
        reference_cov: manifest.reference_cov,
    };
    basis.validate()?;
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cv::{Criterion, Lambda1Rule};
    use crate::models::dumbbell::{DumbbellModel, Spring};
    use crate::models::Model;
    use crate::pde::solve_hookean_kolmogorov;

    fn meta() -> BasisMeta {
        BasisMeta {
            m_small: 100,
            m_large: 1000,
            seed_trial: 5,
            seed_offline: 6,
            criterion: Criterion::Absolute,
            lambda1_rule: Lambda1Rule::MaxVariance,
        }
    }

    #[test]
    fn recycled_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = crate::models::ou::OuModel {
            x0: 1.0,
            horizon: 1.0,
            steps: 10,
        };
        let basis = ReducedBasis {
            algorithm: Algorithm::Recycled,
            model: model.descriptor(),
            elements: vec![
                BasisElement {
                    lambda: ParameterPoint(vec![1.0, 0.5]),
                    payload: ElementPayload::RecycledMean(0.361),
                },
                BasisElement {
                    lambda: ParameterPoint(vec![0.5, 1.5]),
                    payload: ElementPayload::RecycledMean(0.607),
                },
            ],
            meta: meta(),
            reference_cov: Some(vec![1.0, 0.2, 0.2, 2.0]),
        };
        let path = save_basis(&basis, dir.path()).unwrap();
        let loaded = load_basis(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.model, basis.model);
        assert_eq!(loaded.meta, basis.meta);
        assert_eq!(loaded.elements[0].lambda, basis.elements[0].lambda);
        match loaded.elements[1].payload {
            ElementPayload::RecycledMean(m) => assert_eq!(m, 0.607),
            _ => panic!("wrong payload kind"),
        }
        assert_eq!(loaded.reference_cov, basis.reference_cov);
    }

    #[test]
    fn gradient_manifest_round_trip_with_quadratic_payload() {
        let dir = tempfile::tempdir().unwrap();
        let model =
            DumbbellModel::new(Spring::Hookean, (1, 2), vec![1.0, 1.0], 1.0, 20).unwrap();
        let hk = solve_hookean_kolmogorov(&[0.4, 0.7, -0.3, -0.4], 2, (0, 1), 1.0, 20).unwrap();
        let basis = ReducedBasis {
            algorithm: Algorithm::Gradient,
            model: model.descriptor(),
            elements: vec![BasisElement {
                lambda: ParameterPoint(vec![0.4, 0.7, -0.3]),
                payload: ElementPayload::Kolmogorov(KolmogorovPayload::Quadratic(hk.clone())),
            }],
            meta: meta(),
            reference_cov: None,
        };
        let path = save_basis(&basis, dir.path()).unwrap();
        let loaded = load_basis(&path).unwrap();
        match &loaded.elements[0].payload {
            ElementPayload::Kolmogorov(KolmogorovPayload::Quadratic(got)) => {
                assert_eq!(got.a_path, hk.a_path);
                assert_eq!(got.c_path, hk.c_path);
                assert_eq!(got.component, hk.component);
            }
            _ => panic!("wrong payload kind"),
        }
    }

    #[test]
    fn load_rejects_mismatched_payload_kind() {
        let dir = tempfile::tempdir().unwrap();
        let model = crate::models::ou::OuModel {
            x0: 1.0,
            horizon: 1.0,
            steps: 10,
        };
        let basis = ReducedBasis {
            algorithm: Algorithm::Recycled,
            model: model.descriptor(),
            elements: vec![BasisElement {
                lambda: ParameterPoint(vec![1.0, 0.5]),
                payload: ElementPayload::RecycledMean(0.361),
            }],
            meta: meta(),
            reference_cov: None,
        };
        let path = save_basis(&basis, dir.path()).unwrap();
        // Corrupt the manifest: claim a gradient algorithm with a mean.
        let text = std::fs::read_to_string(&path).unwrap();
        let corrupted = text.replace("\"recycled\"", "\"gradient\"");
        std::fs::write(&path, corrupted).unwrap();
        assert!(load_basis(&path).is_err());
    }
}
