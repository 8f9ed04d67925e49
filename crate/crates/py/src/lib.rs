use pyo3::prelude::*;

/// Placeholder surface; filled in as the core crate lands.
#[pymodule]
fn canta_py(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
