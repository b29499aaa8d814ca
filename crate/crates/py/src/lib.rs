//! Python bindings: archives, sessions, scoring and fixture generation.
//! Structured values cross the boundary as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use vinnpruner_core::persistence::{self, SessionArchive};
use vinnpruner_core::prune::{layer_scores, prune_by_ratio as core_prune_by_ratio};
use vinnpruner_core::{fixtures, Algorithm, Error as CoreError, MaskEdit, PruneMask, PruneSettings, StepSummary, Tensor};

create_exception!(vinnpruner, VinnprunerError, PyException);

fn err(e: CoreError) -> PyErr {
    match e {
        CoreError::InvalidSettings(_) | CoreError::InvalidEdit { .. } => PyValueError::new_err(e.to_string()),
        other => VinnprunerError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| VinnprunerError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn algorithm(name: &str) -> PyResult<Algorithm> {
    name.parse().map_err(PyValueError::new_err)
}

#[pyclass(name = "Model", frozen)]
struct PyModel(Arc<vinnpruner_core::Model>);

#[pymethods]
impl PyModel {
    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.0.input_shape.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn weighted_layers(&self) -> Vec<usize> {
        self.0.weighted_layers()
    }

    /// `(shape, values)` of a weighted layer.
    fn weight(&self, layer: usize) -> PyResult<(Vec<usize>, Vec<f32>)> {
        let w = self.0.weighted_layer(layer).map_err(err)?.weight().expect("weighted");
        Ok((w.shape().to_vec(), w.data().to_vec()))
    }

    /// Pruning scores of one layer's weights under the unpruned mask.
    #[pyo3(signature = (layer, algorithm = "map"))]
    fn scores(&self, layer: usize, algorithm: &str) -> PyResult<Vec<f32>> {
        let masks = vinnpruner_core::MaskSet::all_ones(&self.0);
        let t = layer_scores(&self.0, &masks, layer, self::algorithm(algorithm)?).map_err(err)?;
        Ok(t.data().to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Model(name={:?}, layers={})", self.0.name, self.0.layers.len())
    }
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset(Arc<vinnpruner_core::Dataset>);

#[pymethods]
impl PyDataset {
    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn class_names(&self) -> Vec<String> {
        self.0.class_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, samples={})", self.0.name, self.0.len())
    }
}

#[pyfunction]
fn load_model(path: PathBuf) -> PyResult<PyModel> {
    Ok(PyModel(Arc::new(persistence::load_model(&path).map_err(err)?)))
}

#[pyfunction]
fn load_dataset(path: PathBuf) -> PyResult<PyDataset> {
    Ok(PyDataset(Arc::new(persistence::load_dataset(&path).map_err(err)?)))
}

/// A pruning timeline over one model and dataset.
#[pyclass(name = "Session")]
struct PySession(vinnpruner_core::Session);

impl PySession {
    fn step_id(&self, step: Option<u64>) -> u64 {
        step.unwrap_or_else(|| self.0.current_id())
    }

    fn summary(&self, py: Python<'_>, id: u64) -> PyResult<Py<PyAny>> {
        to_py(py, &StepSummary::from(self.0.step(id).map_err(err)?))
    }
}

#[pymethods]
impl PySession {
    #[new]
    fn new(model: &PyModel, dataset: &PyDataset) -> PyResult<Self> {
        Ok(Self(vinnpruner_core::Session::new(Arc::clone(&model.0), Arc::clone(&dataset.0)).map_err(err)?))
    }

    /// Reopens a saved session directory or `session.json` file.
    #[staticmethod]
    fn load(path: PathBuf, models_dir: PathBuf, datasets_dir: PathBuf) -> PyResult<Self> {
        let (_, session) = persistence::load_session(&path, &models_dir, &datasets_dir).map_err(err)?;
        Ok(Self(session))
    }

    #[getter]
    fn current_step(&self) -> u64 {
        self.0.current_id()
    }

    /// Runs one pruning step from the current masks and returns its summary.
    #[pyo3(signature = (algorithm, ratio, layer_ratios = None))]
    fn prune(
        &mut self,
        py: Python<'_>,
        algorithm: &str,
        ratio: f64,
        layer_ratios: Option<std::collections::BTreeMap<usize, f64>>,
    ) -> PyResult<Py<PyAny>> {
        let mut settings = PruneSettings::new(self::algorithm(algorithm)?, ratio);
        settings.per_layer_ratio = layer_ratios.unwrap_or_default();
        let id = py.detach(|| self.0.run_prune_step(settings).map(|s| s.step_id)).map_err(err)?;
        self.summary(py, id)
    }

    /// Applies edit dicts such as `{"layer_index": 3, "kind": "prune_channel", "channel": 6}`.
    fn apply_edits(&mut self, py: Python<'_>, edits: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let edits: Vec<MaskEdit> = from_py(edits)?;
        let id = self.0.apply_manual_edits(edits).map_err(err)?.step_id;
        self.summary(py, id)
    }

    fn revert(&mut self, step_id: u64) -> PyResult<u64> {
        Ok(self.0.revert_to(step_id).map_err(err)?.step_id)
    }

    /// Removes a step and its descendants, returning the removed ids.
    fn remove(&mut self, step_id: u64) -> PyResult<Vec<u64>> {
        self.0.remove_step(step_id).map_err(err)
    }

    fn steps(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.list_steps())
    }

    #[pyo3(signature = (step = None))]
    fn metrics(&self, py: Python<'_>, step: Option<u64>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.step(self.step_id(step)).map_err(err)?.report)
    }

    /// `(shape, kept)` of one layer's mask; `kept` is flat in weight order.
    #[pyo3(signature = (layer, step = None))]
    fn mask(&self, layer: usize, step: Option<u64>) -> PyResult<(Vec<usize>, Vec<bool>)> {
        let masks = &self.0.step(self.step_id(step)).map_err(err)?.masks;
        let mask = masks.get(layer).ok_or(CoreError::NotWeighted(layer)).map_err(err)?;
        Ok((mask.shape().to_vec(), mask.bits().to_vec()))
    }

    #[pyo3(signature = (step = None))]
    fn mask_digest(&self, step: Option<u64>) -> PyResult<String> {
        Ok(self.0.step(self.step_id(step)).map_err(err)?.masks.digest())
    }

    /// Writes `session.json` into `dir`; model and dataset are recorded by name.
    fn save(&self, dir: PathBuf, session_id: &str) -> PyResult<()> {
        let archive = SessionArchive::from_session(session_id, &self.0.model().name, &self.0.dataset().name, &self.0);
        archive.write(&dir).map_err(err)
    }
}

/// Magnitude scores `|w|` of a flat weight list.
#[pyfunction]
fn map_scores(weights: Vec<f32>) -> Vec<f32> {
    weights.iter().map(|w| w.abs()).collect()
}

/// Lookahead scores of one layer of `model` under the unpruned mask.
#[pyfunction]
#[pyo3(signature = (model, layer, mode = "lap"))]
fn lap_scores(model: &PyModel, layer: usize, mode: &str) -> PyResult<Vec<f32>> {
    match algorithm(mode)? {
        Algorithm::Lap | Algorithm::LapForward | Algorithm::LapBackward => model.scores(layer, mode),
        _ => Err(PyValueError::new_err(format!("'{mode}' is not a lookahead mode"))),
    }
}

/// Prunes the `floor(ratio * kept)` lowest-scoring kept entries of `current`.
#[pyfunction]
fn prune_by_ratio(scores: Vec<f32>, current: Vec<bool>, ratio: f64) -> PyResult<Vec<bool>> {
    let n = scores.len();
    let tensor = Tensor::new(vec![n], scores).map_err(err)?;
    let mask = PruneMask::from_bits(0, vec![n], current).map_err(err)?;
    Ok(core_prune_by_ratio(&tensor, &mask, ratio).map_err(err)?.bits().to_vec())
}

/// Writes the fixture models, datasets and golden facts under `root`.
#[pyfunction]
#[pyo3(signature = (root, seed = fixtures::DEFAULT_SEED))]
fn generate_fixtures(py: Python<'_>, root: PathBuf, seed: u64) -> PyResult<Py<PyAny>> {
    let golden = py.detach(|| fixtures::generate_fixtures(&root, seed)).map_err(err)?;
    to_py(py, &golden)
}

#[pymodule]
fn vinnpruner(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VinnprunerError", m.py().get_type::<VinnprunerError>())?;
    m.add("DEFAULT_SEED", fixtures::DEFAULT_SEED)?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(load_model, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(map_scores, m)?)?;
    m.add_function(wrap_pyfunction!(lap_scores, m)?)?;
    m.add_function(wrap_pyfunction!(prune_by_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(generate_fixtures, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyDict;

    fn fixtures_root() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    #[test]
    fn module_drives_a_session() {
        Python::initialize();
        Python::attach(|py| {
            let module = PyModule::new(py, "vinnpruner").unwrap();
            vinnpruner(&module).unwrap();
            let globals = PyDict::new(py);
            globals.set_item("vp", module).unwrap();
            globals.set_item("root", fixtures_root()).unwrap();
            py.run(
                c"
m = vp.load_model(root / 'models' / 'mlp-blobs')
d = vp.load_dataset(root / 'datasets' / 'blobs-test')
s = vp.Session(m, d)
step = s.prune('map', 0.5)
assert step['step_id'] == 1, step
shape, kept = s.mask(0)
assert kept.count(False) == len(kept) // 2
s.apply_edits([{'layer_index': 0, 'kind': 'prune_channel', 'channel': 0}])
assert s.current_step == 2
assert s.remove(2) == [2]
try:
    s.prune('map', 1.5)
    raise AssertionError('expected ValueError')
except ValueError as e:
    assert 'global_ratio' in str(e)
assert vp.prune_by_ratio([3.0, 1.0, 2.0], [True, True, True], 0.5) == [True, False, True]
",
                Some(&globals),
                None,
            )
            .unwrap();
        });
    }

    #[test]
    fn core_errors_map_to_python_types() {
        Python::initialize();
        Python::attach(|py| {
            let invalid = err(CoreError::InvalidSettings(vec![]));
            assert!(invalid.is_instance_of::<PyValueError>(py));
            let other = err(CoreError::NoWeightedLayer);
            assert!(other.is_instance_of::<VinnprunerError>(py));
        });
    }
}
