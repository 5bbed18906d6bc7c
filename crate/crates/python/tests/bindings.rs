use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module<F: FnOnce(Python<'_>, &Bound<'_, PyDict>)>(f: F) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "pyspmle").unwrap();
        pyspmle::register(&m).unwrap();
        let scope = PyDict::new(py);
        scope.set_item("sp", m).unwrap();
        f(py, &scope);
    });
}

#[test]
fn npmle_and_fit_from_python() {
    with_module(|py, scope| {
        py.run(
            c"
xs = [sp.Observation.exact(v) for v in (0.5, 1.5, 1.0, 2.0)]
d = sp.npmle(xs, 'complete')
assert d.support == [0.5, 1.0, 1.5, 2.0], d.support
assert d.cdf(1.2) == 0.5
y = [sp.Observation.exact(v) for v in (0.8, 1.9, 2.7, 1.2)]
data = sp.TwoSampleData(xs, 'complete', y, 'complete')
fit = sp.fit_two_sample(data, sp.BiasModel('biased:w=identity'))
assert fit.converged
assert abs(sum(fit.f_tilde.masses) - 1.0) < 1e-9
log_r, stat = sp.log_ratio(fit, sp.BiasModel.length_biased(), fit.theta[0])
assert abs(stat) < 1e-9
",
            Some(scope),
            None,
        )
        .unwrap();
    });
}

#[test]
fn errors_become_python_exceptions() {
    with_module(|py, scope| {
        let err = py
            .run(c"sp.Observation.interval(2.0, 1.0)", Some(scope), None)
            .unwrap_err();
        let module = scope.get_item("sp").unwrap().unwrap();
        assert!(err.matches(py, module.getattr("SpmleError").unwrap()).unwrap());
        let err = py.run(c"sp.BiasModel('quadratic')", Some(scope), None).unwrap_err();
        assert!(err.to_string().contains("ParseError") || err.to_string().contains("Error"));
    });
}
