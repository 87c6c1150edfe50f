use pyo3::prelude::*;

#[pymodule]
fn sap_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
