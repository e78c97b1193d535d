//! Python bindings for the alignment toolkit.

#[pyo3::pymodule]
mod molalign {
    use std::collections::HashMap;
    use std::fs::File;
    use std::io::{BufReader, BufWriter};

    use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
    use pyo3::prelude::*;

    use molalign_core::augment::{self as core_augment, CorpusRecord};
    use molalign_core::chem::parse_smiles;
    use molalign_core::encoder::{self, Modality};
    use molalign_core::eval;
    use molalign_core::fragment::{self as core_fragment, RuleSet, Scheme};
    use molalign_core::mine;
    use molalign_core::phrase::PhraseExtractor;
    use molalign_core::train::{self, TrainConfig};

    fn value_err(e: impl std::fmt::Display) -> PyErr {
        PyValueError::new_err(e.to_string())
    }

    fn scheme(name: &str) -> PyResult<Scheme> {
        name.parse().map_err(value_err)
    }

    fn modality(name: &str) -> PyResult<Modality> {
        match name {
            "molecule" | "mol" => Ok(Modality::Molecule),
            "text" => Ok(Modality::Text),
            other => Err(PyValueError::new_err(format!("unknown modality {other:?}"))),
        }
    }

    /// Canonical SMILES of `smiles`.
    #[pyfunction]
    fn canonicalize(smiles: &str) -> PyResult<String> {
        Ok(parse_smiles(smiles).map_err(value_err)?.canonical_smiles().to_string())
    }

    /// Canonical SMILES of the ring-system scaffold.
    #[pyfunction]
    fn scaffold(smiles: &str) -> PyResult<String> {
        Ok(parse_smiles(smiles).map_err(value_err)?.scaffold_smiles())
    }

    /// Fragments as `(smiles, parent atom indices, rule ids)` tuples.
    #[pyfunction]
    #[pyo3(signature = (smiles, scheme_name = "brics"))]
    fn fragment(smiles: &str, scheme_name: &str) -> PyResult<Vec<(String, Vec<usize>, Vec<String>)>> {
        let m = parse_smiles(smiles).map_err(value_err)?;
        let frags = core_fragment::fragment(&m, "", RuleSet::builtin(scheme(scheme_name)?)).map_err(value_err)?;
        Ok(frags
            .into_iter()
            .map(|f| (f.fragment_smiles, f.atom_map, f.rule_ids))
            .collect())
    }

    /// Phrases as `(text, start, end)` with byte offsets.
    #[pyfunction]
    fn extract_phrases(caption: &str) -> Vec<(String, usize, usize)> {
        molalign_core::phrase::extract_phrases(caption)
            .into_iter()
            .map(|p| (p.text, p.span.0, p.span.1))
            .collect()
    }

    #[pyclass(frozen, from_py_object, name = "AlignmentPair")]
    #[derive(Clone)]
    struct PyPair(core_augment::AlignmentPair);

    #[pymethods]
    impl PyPair {
        #[getter]
        fn pair_id(&self) -> &str {
            &self.0.pair_id
        }
        #[getter]
        fn mol(&self) -> &str {
            &self.0.mol
        }
        #[getter]
        fn text(&self) -> &str {
            &self.0.text
        }
        #[getter]
        fn pair_class(&self) -> &str {
            self.0.pair_class.as_str()
        }
        #[getter]
        fn origin(&self) -> &str {
            &self.0.origin
        }
        #[getter]
        fn active(&self) -> bool {
            self.0.active
        }
        fn __repr__(&self) -> String {
            format!(
                "AlignmentPair({}, {:?}, {:?}, {:?})",
                self.0.pair_class, self.0.origin, self.0.mol, self.0.text
            )
        }
    }

    fn unwrap_pairs(pairs: Vec<PyPair>) -> Vec<core_augment::AlignmentPair> {
        pairs.into_iter().map(|p| p.0).collect()
    }

    /// Whole, fragment and phrase pairs for `(id, smiles, caption)` records.
    #[pyfunction]
    #[pyo3(signature = (records, scheme_name = "brics"))]
    fn augment(records: Vec<(String, String, String)>, scheme_name: &str) -> PyResult<Vec<PyPair>> {
        let corpus: Vec<CorpusRecord> = records
            .into_iter()
            .enumerate()
            .map(|(i, (id, smiles, caption))| {
                let mut r = CorpusRecord::new(id, smiles, caption);
                r.line = i + 1;
                r
            })
            .collect();
        let pairs = core_augment::augment(
            &corpus,
            RuleSet::builtin(scheme(scheme_name)?),
            &PhraseExtractor::default(),
        )
        .map_err(value_err)?;
        Ok(pairs.into_iter().map(PyPair).collect())
    }

    #[pyfunction]
    fn read_pairs(path: &str) -> PyResult<Vec<PyPair>> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let pairs = core_augment::read_pairs(BufReader::new(f)).map_err(value_err)?;
        Ok(pairs.into_iter().map(PyPair).collect())
    }

    #[pyfunction]
    fn write_pairs(path: &str, pairs: Vec<PyPair>) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        core_augment::write_pairs(BufWriter::new(f), &unwrap_pairs(pairs))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[pyclass(frozen, name = "Model")]
    struct PyModel(encoder::Model);

    #[pymethods]
    impl PyModel {
        #[staticmethod]
        fn load(path: &str) -> PyResult<PyModel> {
            let (m, _) = encoder::Model::load_path(path.as_ref()).map_err(value_err)?;
            Ok(PyModel(m))
        }

        fn save(&self, path: &str) -> PyResult<()> {
            let f = File::create(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
            self.0.save(BufWriter::new(f), 0).map_err(value_err)
        }

        /// Embedding of `s`; `modality` is "molecule" or "text".
        fn embed(&self, modality_name: &str, s: &str) -> PyResult<Vec<f64>> {
            Ok(self.0.embed(modality(modality_name)?, s))
        }

        /// `exp(cos(u, v) / temperature)`
        fn similarity(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
            encoder::similarity(&self.0.params, &u, &v).map_err(value_err)
        }

        #[getter]
        fn temperature(&self) -> f64 {
            self.0.params.temperature()
        }

        #[getter]
        fn dim(&self) -> usize {
            self.0.params.dim()
        }
    }

    #[pyclass(name = "Trainer")]
    struct PyTrainer(train::Trainer);

    #[pymethods]
    impl PyTrainer {
        /// `config` holds `key = value` lines.
        #[new]
        #[pyo3(signature = (pairs, config = ""))]
        fn new(pairs: Vec<PyPair>, config: &str) -> PyResult<PyTrainer> {
            let config = TrainConfig::parse(config).map_err(value_err)?;
            Ok(PyTrainer(train::Trainer::new(unwrap_pairs(pairs), config)))
        }

        /// Runs one epoch; returns the log entry.
        fn train_epoch(&mut self) -> PyResult<HashMap<String, f64>> {
            let r = self
                .0
                .train_epoch()
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            Ok(HashMap::from([
                ("epoch".to_string(), r.epoch as f64),
                ("loss".to_string(), r.loss),
                ("loss_cl".to_string(), r.loss_cl),
                ("n_active".to_string(), r.n_active as f64),
                ("n_filtered".to_string(), r.n_filtered as f64),
            ]))
        }

        #[getter]
        fn pairs(&self) -> Vec<PyPair> {
            self.0.pairs().iter().cloned().map(PyPair).collect()
        }

        fn model(&self) -> PyModel {
            PyModel(self.0.model().clone())
        }
    }

    /// Retrieval metrics over `(molecule, text)` pairs, keyed by direction.
    #[pyfunction]
    fn evaluate(model: &PyModel, pairs: Vec<(String, String)>) -> PyResult<HashMap<String, HashMap<String, f64>>> {
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(m, t)| (m.as_str(), t.as_str())).collect();
        let (t2m, m2t) = eval::evaluate(&model.0, &refs).map_err(value_err)?;
        Ok([t2m, m2t]
            .into_iter()
            .map(|r| {
                let mut metrics: HashMap<String, f64> =
                    r.recall_at.iter().map(|(k, v)| (format!("R@{k}"), *v)).collect();
                metrics.insert("MRR".into(), r.mrr);
                (r.direction.to_string(), metrics)
            })
            .collect())
    }

    /// Mined `(origin, substructure, phrase, score)` relations.
    #[pyfunction]
    #[pyo3(signature = (model, pairs, theta = mine::DEFAULT_THETA))]
    fn mine_relations(model: &PyModel, pairs: Vec<PyPair>, theta: f64) -> PyResult<Vec<(String, String, String, f64)>> {
        let groups = mine::group_pairs(&unwrap_pairs(pairs));
        let rels = mine::mine(&model.0, &groups, mine::Threshold::inclusive(theta)).map_err(value_err)?;
        Ok(rels.into_iter().map(|r| (r.origin, r.sub, r.phrase, r.score)).collect())
    }
}
