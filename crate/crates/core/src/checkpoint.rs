//! Checkpoint directories:
//!
//! ```text
//! config.txt          model configuration, key = value
//! params.safetensors  every parameter as F32
//! params.csv          layer,count
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::Serialize;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::models::{count_parameters, Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor};

pub const CONFIG_FILE: &str = "config.txt";
pub const PARAMS_FILE: &str = "params.safetensors";
pub const REPORT_FILE: &str = "params.csv";

/// Biases are stored as vectors, weights with their full rank-4 shape.
fn file_shape(name: &str, t: &Tensor<impl Float>) -> Vec<usize> {
    let s = t.shape();
    if name.ends_with(".bias") {
        vec![s.n]
    } else {
        s.dims().to_vec()
    }
}

#[derive(Serialize)]
struct LayerRow<'a> {
    layer: &'a str,
    count: usize,
}

pub fn save<F: Float>(dir: &Path, model: &Model<F>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, model.config().to_key_values().to_string())
        .map_err(|e| Error::io(&config_path, e))?;

    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = model
        .params()
        .iter()
        .map(|(_, name, t)| {
            let raw = t
                .data()
                .iter()
                .flat_map(|v| v.to_f32().unwrap_or(f32::NAN).to_le_bytes())
                .collect();
            (name.to_owned(), file_shape(name, t), raw)
        })
        .collect();
    let params_path = dir.join(PARAMS_FILE);
    let views = bytes
        .iter()
        .map(|(name, shape, raw)| {
            TensorView::new(Dtype::F32, shape.clone(), raw)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::Numeric(format!("{name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([("arch".to_owned(), model.arch().name().to_owned())]);
    let blob =
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Numeric(e.to_string()))?;
    fs::write(&params_path, blob).map_err(|e| Error::io(&params_path, e))?;

    let report_path = dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&report_path)
        .map_err(|e| Error::data(&report_path, e.to_string()))?;
    for (layer, count) in &count_parameters(model).layers {
        w.serialize(LayerRow {
            layer,
            count: *count,
        })
        .map_err(|e| Error::data(&report_path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&report_path, e))
}

pub fn read_config(dir: &Path) -> Result<ModelConfig> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::data(&path, "checkpoint not found"));
    }
    ModelConfig::from_key_values(&KeyValues::read(&path)?)
        .map_err(|e| Error::data(&path, e.to_string()))
}

/// Overwrites every tensor of `params` with the stored values.
pub fn load_params<F: Float>(dir: &Path, params: &mut ParamStore<F>) -> Result<()> {
    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let st = SafeTensors::deserialize(&blob).map_err(|e| Error::data(&path, e.to_string()))?;
    if st.len() != params.len() {
        return Err(Error::data(
            &path,
            format!("{} tensors stored, model has {}", st.len(), params.len()),
        ));
    }
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_owned();
        let view = st
            .tensor(&name)
            .map_err(|_| Error::data(&path, format!("missing tensor '{name}'")))?;
        let expected = file_shape(&name, params.get(id));
        if view.dtype() != Dtype::F32 || view.shape() != expected.as_slice() {
            return Err(Error::data(
                &path,
                format!(
                    "tensor '{name}' is {:?} {:?}, expected F32 {:?}",
                    view.dtype(),
                    view.shape(),
                    expected
                ),
            ));
        }
        for (dst, chunk) in params
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .zip(view.data().chunks_exact(4))
        {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            *dst = F::from_f64_lossy(v as f64);
        }
    }
    Ok(())
}

pub fn load<F: Float>(dir: &Path) -> Result<Model<F>> {
    let mut model = Model::new(read_config(dir)?, 0)?;
    load_params(dir, model.params_mut())?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Arch;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::<f32>::new(ModelConfig::new(Arch::FauNet).with_base_channels(2), 3).unwrap();
        save(dir.path(), &m).unwrap();
        let back: Model<f32> = load(dir.path()).unwrap();
        assert_eq!(back.config(), m.config());
        for ((_, n1, a), (_, n2, b)) in back.params().iter().zip(m.params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn missing_checkpoint_names_the_path() {
        let err = load::<f32>(Path::new("/nonexistent/ckpt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt"));
        assert_eq!(err.exit_code(), 2);
    }
}
