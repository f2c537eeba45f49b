use pyo3::prelude::*;
use pyo3::types::PyDict;
use stemscore_py::stemscore_py;

fn run(code: &str) {
    pyo3::append_to_inittab!(stemscore_py);
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn module_functions_match_core() {
    run(r#"
import tempfile
import stemscore_py as ss

lo, hi, branch = ss.consensus_interval([[0.5, 0.5], [0.25] * 4, [0.125] * 8])
assert branch == "fallback", branch
assert abs(ss.song_score([(0.2, 0.4, 0.5), (0.3, 0.5, 0.5)]) - 0.35) < 1e-12
assert abs(ss.ktau([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]) - 4 / 6) < 1e-12
try:
    ss.srcc([1.0], [2.0])
    raise SystemExit("expected ValueError")
except ValueError:
    pass

with tempfile.TemporaryDirectory() as tmp:
    manifest = ss.gen_data(tmp, songs=3, seed=5, dim=4, dims=1)
    try:
        ss.Model.load(tmp + "/nope.bin")
        raise SystemExit("expected OSError")
    except OSError:
        pass
"#);
}
