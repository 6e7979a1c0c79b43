//! Model checkpoints: parameters in `<stem>.etc`, architecture in `<stem>.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use edgelab_core::rng::stream;
use edgelab_core::{Model, ModelSpec};

use crate::error::{IoContext, LabError, Result};
use crate::etc::{load_etc, save_etc, EtcTensor};

pub fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("etc"), stem.with_extension("toml"))
}

pub fn spec_to_toml(spec: &ModelSpec) -> Result<String> {
    toml::to_string(spec).map_err(|e| LabError::data(format!("serializing model spec: {e}")))
}

pub fn spec_from_toml(text: &str) -> Result<ModelSpec> {
    let spec: ModelSpec = toml::from_str(text).map_err(|e| LabError::data(format!("model spec: {e}")))?;
    spec.shapes()?;
    Ok(spec)
}

pub fn save_model(model: &Model<f32>, stem: &Path) -> Result<()> {
    let (etc, sidecar) = paths(stem);
    let entries: Vec<_> = model.state().into_iter().map(|(n, t)| (n, EtcTensor::F32(t))).collect();
    save_etc(&etc, &entries)?;
    fs::write(&sidecar, spec_to_toml(model.spec())?).at(&sidecar)
}

/// Loads a checkpoint, rejecting tensors the architecture does not name.
pub fn load_model(stem: &Path) -> Result<Model<f32>> {
    let (etc, sidecar) = paths(stem);
    let spec = spec_from_toml(&fs::read_to_string(&sidecar).at(&sidecar)?)?;
    let mut model = Model::<f32>::build(&spec, &mut stream(0))?;
    let named: Vec<_> = load_etc(&etc)?.into_iter().map(|(n, t)| (n, t.to_f32())).collect();
    let expected = model.state();
    if let Some((extra, _)) = named.iter().find(|(n, _)| !expected.iter().any(|(e, _)| e == n)) {
        return Err(LabError::data(format!("{}: unexpected tensor {extra}", etc.display())));
    }
    model.load_state(&named)?;
    Ok(model)
}
