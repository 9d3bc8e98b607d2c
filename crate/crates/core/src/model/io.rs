//! Model directory format: `model.json` index plus one `.npy` file per
//! parameter tensor (f64, stored 2-D as `[shape[0], product(rest)]`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ToyClassifier, PARAM_COUNT, TENSORS};
use crate::error::{Error, Result};
use crate::interchange::npy::{self, Precision};
use crate::matrix::Matrix;

pub const MODEL_INDEX: &str = "model.json";
const FORMAT: &str = "pdsm-toy-classifier";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelIndex {
    pub format: String,
    pub version: u32,
    pub architecture: String,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

const ARCHITECTURE: &str =
    "conv3x3(1->8)-relu-avgpool2-conv3x3(8->16)-relu-avgpool2-globalmean-affine(16->2)-softmax";

impl ToyClassifier {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = Vec::new();
        for (name, offset, shape) in TENSORS {
            let len: usize = shape.iter().product();
            let rows = shape[0];
            let m = Matrix::from_vec(rows, len / rows, self.params[offset..offset + len].to_vec())?;
            let file = format!("{name}.npy");
            npy::save_matrix(&m, dir.join(&file), Precision::F64)?;
            tensors.push(TensorEntry {
                name: name.to_string(),
                file,
                shape: shape.to_vec(),
            });
        }
        let index = ModelIndex {
            format: FORMAT.into(),
            version: 1,
            architecture: ARCHITECTURE.into(),
            sha256: self.hash(),
            tensors,
        };
        let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
        text.push('\n');
        let path = dir.join(MODEL_INDEX);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MODEL_INDEX);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: ModelIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        if index.format != FORMAT || index.version != 1 {
            return Err(Error::validation(format!(
                "unsupported model format {} v{}",
                index.format, index.version
            )));
        }
        let mut params = vec![0.0; PARAM_COUNT];
        for (name, offset, shape) in TENSORS {
            let entry = index
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::validation(format!("model index lacks tensor '{name}'")))?;
            if entry.shape != shape {
                return Err(Error::shape(
                    format!("{name} {shape:?}"),
                    format!("{:?}", entry.shape),
                ));
            }
            let m = npy::load_matrix(dir.join(&entry.file))?;
            let len: usize = shape.iter().product();
            if m.as_slice().len() != len {
                return Err(Error::shape(
                    format!("{len} values in {name}"),
                    m.as_slice().len(),
                ));
            }
            params[offset..offset + len].copy_from_slice(m.as_slice());
        }
        let model = ToyClassifier::from_params(params)?;
        if model.hash() != index.sha256 {
            return Err(Error::validation(
                "model parameters do not match recorded sha256",
            ));
        }
        Ok(model)
    }
}
