//! Python bindings. Matrices cross the boundary as nested lists of floats,
//! one inner list per row.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;
use story_reorg::{
    IdSource, ReorganizerConfig, SpanLayout, StoryEmbeddingBundle, SynthParams, TokenEmbeddingMatrix,
    DEFAULT_RANK_TOLERANCE,
};

fn to_py_err(e: story_reorg::Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        story_reorg::Error::Numeric(_) => PyArithmeticError::new_err(msg),
        story_reorg::Error::Io(_) => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn matrix_from_rows<T: Copy + nalgebra::Scalar>(rows: &[Vec<T>], dim: Option<usize>) -> PyResult<DMatrix<T>> {
    let d = dim.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
        return Err(PyValueError::new_err(format!(
            "row {i} has length {}, expected {d}",
            r.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

fn matrix_to_rows<T: Copy + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Orthonormal basis of the row span of `a`, as `(basis_rows, rank)`.
#[pyfunction]
#[pyo3(signature = (a, rank_tol = DEFAULT_RANK_TOLERANCE))]
fn orthonormal_basis(a: Vec<Vec<f64>>, rank_tol: f64) -> PyResult<(Vec<Vec<f64>>, usize)> {
    let a = matrix_from_rows(&a, None)?;
    let p = story_reorg::orthonormal_basis(&a, rank_tol).map_err(to_py_err)?;
    Ok((matrix_to_rows(&p.basis), p.rank))
}

/// Projects each row of `b` onto the row span of `a`.
#[pyfunction]
#[pyo3(signature = (b, a, rank_tol = DEFAULT_RANK_TOLERANCE))]
fn project_rows(b: Vec<Vec<f64>>, a: Vec<Vec<f64>>, rank_tol: f64) -> PyResult<Vec<Vec<f64>>> {
    let a = matrix_from_rows(&a, None)?;
    let b = matrix_from_rows(&b, Some(a.ncols()))?;
    let p = story_reorg::orthonormal_basis(&a, rank_tol).map_err(to_py_err)?;
    story_reorg::project_rows(&b, &p)
        .map(|m| matrix_to_rows(&m))
        .map_err(to_py_err)
}

fn config(rank_tol: f64, id_source: &str, interference_weight: f64) -> PyResult<ReorganizerConfig> {
    let id_source: IdSource = id_source.parse().map_err(to_py_err)?;
    Ok(ReorganizerConfig {
        rank_tolerance: rank_tol,
        id_source,
        interference_weight,
    })
}

/// A story: one token-embedding matrix per frame with a shared row layout.
#[pyclass(name = "StoryBundle", module = "story_reorg_py", frozen)]
struct PyStoryBundle {
    inner: StoryEmbeddingBundle,
}

#[pymethods]
impl PyStoryBundle {
    /// Builds a bundle from per-frame row lists. Spans are `(start, end)`
    /// half-open row ranges applied to every frame.
    #[new]
    fn new(frames: Vec<Vec<Vec<f32>>>, identity_rows: (usize, usize), frame_rows: (usize, usize)) -> PyResult<Self> {
        let layout = SpanLayout::new(identity_rows.0..identity_rows.1, frame_rows.0..frame_rows.1);
        let frames = frames
            .iter()
            .enumerate()
            .map(|(n, rows)| {
                let values = matrix_from_rows(rows, None)?;
                TokenEmbeddingMatrix::new(format!("frame_{n:03}"), values, layout, n).map_err(to_py_err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = StoryEmbeddingBundle::new(frames).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = story_reorg::read_story(path).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (frames = 4, dim = 64, tokens_per_frame = 8, identity_tokens = 4, shared_strength = 0.5, seed = 0))]
    fn synth(
        frames: usize,
        dim: usize,
        tokens_per_frame: usize,
        identity_tokens: usize,
        shared_strength: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let params = SynthParams {
            frames,
            dim,
            tokens_per_frame,
            identity_tokens,
            shared_strength,
            seed,
        };
        let inner = story_reorg::synth_story(&params).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        story_reorg::write_story(&self.inner, path).map_err(to_py_err)
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    #[getter]
    fn identity_length(&self) -> usize {
        self.inner.identity_length()
    }

    /// Provenance metadata as a JSON object string.
    #[getter]
    fn provenance_json(&self) -> String {
        serde_json::to_string(self.inner.provenance()).expect("JSON values serialize")
    }

    fn frame(&self, n: usize) -> PyResult<Vec<Vec<f32>>> {
        self.get(n).map(|f| matrix_to_rows(&f.values))
    }

    /// `((identity_start, identity_end), (frame_start, frame_end))` for frame `n`.
    fn layout(&self, n: usize) -> PyResult<((usize, usize), (usize, usize))> {
        let l = self.get(n)?.layout;
        Ok((
            (l.identity_rows.start, l.identity_rows.end),
            (l.frame_rows.start, l.frame_rows.end),
        ))
    }

    #[pyo3(signature = (rank_tol = DEFAULT_RANK_TOLERANCE, id_source = "first_frame", interference_weight = 1.0))]
    fn reorganize(&self, rank_tol: f64, id_source: &str, interference_weight: f64) -> PyResult<Self> {
        let cfg = config(rank_tol, id_source, interference_weight)?;
        let inner = story_reorg::reorganize_story(&self.inner, &cfg).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Interference report comparing `self` (before) against `after`, as JSON.
    #[pyo3(signature = (after, rank_tol = DEFAULT_RANK_TOLERANCE, id_source = "first_frame", interference_weight = 1.0))]
    fn report(&self, after: &Self, rank_tol: f64, id_source: &str, interference_weight: f64) -> PyResult<String> {
        let cfg = config(rank_tol, id_source, interference_weight)?;
        let report = story_reorg::build_report(&self.inner, &after.inner, &cfg).map_err(to_py_err)?;
        Ok(report.to_json())
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "StoryBundle(frames={}, embedding_dim={}, identity_length={})",
            self.inner.frame_count(),
            self.inner.embedding_dim(),
            self.inner.identity_length()
        )
    }
}

impl PyStoryBundle {
    fn get(&self, n: usize) -> PyResult<&TokenEmbeddingMatrix> {
        self.inner.frames().get(n).ok_or_else(|| {
            PyIndexError::new_err(format!(
                "frame {n} out of range for {} frames",
                self.inner.frame_count()
            ))
        })
    }
}

#[pymodule]
fn story_reorg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(orthonormal_basis, m)?)?;
    m.add_function(wrap_pyfunction!(project_rows, m)?)?;
    m.add_class::<PyStoryBundle>()?;
    m.add("DEFAULT_RANK_TOLERANCE", DEFAULT_RANK_TOLERANCE)?;
    Ok(())
}
