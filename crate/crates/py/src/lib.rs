//! Python bindings. Advertiser indices are 0-based, as in the Rust API.

use std::collections::BTreeSet;

use fairalloc_core::alloc as core_alloc;
use fairalloc_core::dataset::{self, SyntheticConfig};
use fairalloc_core::payments::{self, QuadratureConfig};
use fairalloc_core::profiler::{self, ProfileConfig};
use fairalloc_core::stability;
use fairalloc_core::subset::{self, ClusterPartition, SetCollection};
use fairalloc_core::{AllocRule, Allocation, Error, ValueVector};
use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for fairalloc_core::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(|e| match e {
            Error::FileNotFound(_) => PyFileNotFoundError::new_err(e.to_string()),
            Error::Io(_) => PyIOError::new_err(e.to_string()),
            _ => PyValueError::new_err(e.to_string()),
        })
    }
}

fn value_vector(v: Vec<f64>) -> PyResult<ValueVector> {
    ValueVector::new(v).or_raise()
}

fn rule_from(
    kind: &str,
    ell: Option<f64>,
    beta: Option<f64>,
    exponent: Option<f64>,
) -> PyResult<AllocRule> {
    let need = |x: Option<f64>, name: &str| {
        x.ok_or_else(|| PyValueError::new_err(format!("rule `{kind}` needs `{name}`")))
    };
    let rule = match kind {
        "ipa" => AllocRule::Ipa {
            ell: need(ell, "ell")?,
        },
        "capped-ipa" => AllocRule::CappedIpa {
            ell: need(ell, "ell")?,
            beta: need(beta, "beta")?,
        },
        "pa" => AllocRule::Proportional {
            exponent: need(exponent, "exponent")?,
        },
        "highest-bid" => AllocRule::HighestBid,
        "uniform" => AllocRule::Uniform,
        other => return Err(PyValueError::new_err(format!("unknown rule `{other}`"))),
    };
    rule.validate().or_raise()?;
    Ok(rule)
}

fn probs(x: Allocation) -> Vec<f64> {
    x.into_vec()
}

#[pyfunction]
#[pyo3(signature = (values, rule = "ipa", ell = None, beta = None, exponent = None))]
fn allocate(
    values: Vec<f64>,
    rule: &str,
    ell: Option<f64>,
    beta: Option<f64>,
    exponent: Option<f64>,
) -> PyResult<Vec<f64>> {
    let rule = rule_from(rule, ell, beta, exponent)?;
    core_alloc::allocate(&rule, &value_vector(values)?)
        .map(probs)
        .or_raise()
}

#[pyfunction]
fn ipa_allocate(values: Vec<f64>, ell: f64) -> PyResult<Vec<f64>> {
    core_alloc::ipa_allocate(&value_vector(values)?, ell)
        .map(probs)
        .or_raise()
}

#[pyfunction]
#[pyo3(signature = (values, ell, tol = core_alloc::DEFAULT_THRESHOLD_TOL))]
fn ipa_allocate_threshold(values: Vec<f64>, ell: f64, tol: f64) -> PyResult<Vec<f64>> {
    core_alloc::ipa_allocate_threshold(&value_vector(values)?, ell, tol)
        .map(probs)
        .or_raise()
}

#[pyfunction]
fn restricted_alloc(values: Vec<f64>, serve_set: Vec<usize>, ell: f64) -> PyResult<Vec<f64>> {
    core_alloc::restricted_alloc(&value_vector(values)?, &serve_set, ell).or_raise()
}

#[pyfunction]
#[pyo3(signature = (values, index, rule = "ipa", ell = None, beta = None, exponent = None, tol = 1e-8))]
#[allow(clippy::too_many_arguments)]
fn payment_identity<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    index: usize,
    rule: &str,
    ell: Option<f64>,
    beta: Option<f64>,
    exponent: Option<f64>,
    tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let rule = rule_from(rule, ell, beta, exponent)?;
    let quad = QuadratureConfig {
        tol,
        ..QuadratureConfig::default()
    };
    let p = payments::payment_identity(&rule, &value_vector(values)?, index, &quad).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("payment", p.payment)?;
    d.set_item("allocation_at_truth", p.allocation_at_truth)?;
    d.set_item("quadrature_error_estimate", p.quadrature_error_estimate)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (values, index, deviations = 64, rule = "ipa", ell = None, beta = None, exponent = None))]
fn ic_regret(
    values: Vec<f64>,
    index: usize,
    deviations: usize,
    rule: &str,
    ell: Option<f64>,
    beta: Option<f64>,
    exponent: Option<f64>,
) -> PyResult<f64> {
    let rule = rule_from(rule, ell, beta, exponent)?;
    payments::ic_regret(
        &rule,
        &value_vector(values)?,
        index,
        deviations,
        &QuadratureConfig::default(),
    )
    .or_raise()
}

#[pyfunction]
fn stability_param(v: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
    stability::stability_param(&value_vector(v)?, &value_vector(w)?).or_raise()
}

#[pyfunction]
fn f_ell(lam: f64, ell: f64) -> PyResult<f64> {
    stability::f_ell(lam, ell).or_raise()
}

#[pyfunction]
fn alpha_ell(ell: f64) -> PyResult<f64> {
    stability::alpha_ell(ell).or_raise()
}

#[pyfunction]
fn welfare_ratio(x: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    let x = Allocation::new(x).or_raise()?;
    stability::welfare_ratio(&x, &value_vector(v)?).or_raise()
}

#[pyfunction]
#[pyo3(signature = (values, lam, samples, seed, rule = "ipa", ell = None, beta = None, exponent = None))]
#[allow(clippy::too_many_arguments)]
fn stability_violation_search(
    values: Vec<f64>,
    lam: f64,
    samples: usize,
    seed: u64,
    rule: &str,
    ell: Option<f64>,
    beta: Option<f64>,
    exponent: Option<f64>,
) -> PyResult<f64> {
    let rule = rule_from(rule, ell, beta, exponent)?;
    stability::stability_violation_search(&rule, &value_vector(values)?, lam, samples, seed)
        .or_raise()
}

#[pyfunction]
fn near_optimal_params(py: Python<'_>, alpha: f64) -> PyResult<Bound<'_, PyDict>> {
    let p = stability::near_optimal_params(alpha).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("ell", p.ell)?;
    d.set_item("beta", p.beta)?;
    d.set_item("guarantee", p.guarantee)?;
    Ok(d)
}

#[pyfunction]
fn gap_bounds(ell: f64) -> PyResult<(f64, f64)> {
    stability::gap_bounds(ell).or_raise()
}

/// The first advertiser's allocation gain on the optimality construction.
#[pyfunction]
fn optimality_gap(x: f64, k: usize, ell: f64) -> PyResult<f64> {
    stability::optimality_gap_construction(x, k, ell)
        .map(|g| g.delta_x1)
        .or_raise()
}

#[pyfunction]
fn bound_report(py: Python<'_>, ell: f64, k: usize) -> PyResult<Bound<'_, PyDict>> {
    let r = stability::bound_report(ell, k).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("alpha_ell", r.alpha_ell)?;
    d.set_item("upper_bound", r.upper_bound)?;
    d.set_item("params", r.params)?;
    Ok(d)
}

fn collection(k: usize, sets: Vec<Vec<usize>>) -> PyResult<SetCollection> {
    SetCollection::new(k, sets).or_raise()
}

#[pyfunction]
fn equivalence_clusters(k: usize, sets: Vec<Vec<usize>>) -> PyResult<Vec<Vec<usize>>> {
    Ok(subset::equivalence_clusters(&collection(k, sets)?)
        .clusters()
        .to_vec())
}

#[pyfunction]
fn collection_widths(k: usize, sets: Vec<Vec<usize>>) -> PyResult<(usize, usize)> {
    Ok(subset::collection_widths(&collection(k, sets)?))
}

#[pyfunction]
fn partitioned_width(k: usize, sets: Vec<Vec<usize>>, parts: Vec<Vec<usize>>) -> PyResult<usize> {
    let parts = ClusterPartition::new(k, parts).or_raise()?;
    subset::partitioned_width(&collection(k, sets)?, &parts).or_raise()
}

#[pyfunction]
fn cluster_capped_alloc(
    values: Vec<f64>,
    ell: f64,
    n: usize,
    sets: Vec<Vec<usize>>,
) -> PyResult<Vec<f64>> {
    let v = value_vector(values)?;
    let c = collection(v.len(), sets)?;
    subset::cluster_capped_alloc(&v, ell, n, &c)
        .map(probs)
        .or_raise()
}

#[pyfunction]
fn partition_hierarchical_alloc(
    values: Vec<f64>,
    ell: f64,
    parts: Vec<Vec<usize>>,
) -> PyResult<Vec<f64>> {
    let v = value_vector(values)?;
    let parts = ClusterPartition::new(v.len(), parts).or_raise()?;
    subset::partition_hierarchical_alloc(&v, ell, &parts)
        .map(probs)
        .or_raise()
}

#[pyfunction]
fn tv_gap_example(py: Python<'_>, k: usize, ell: f64) -> PyResult<Bound<'_, PyDict>> {
    let g = subset::tv_gap_example(k, ell).or_raise()?;
    let d = PyDict::new(py);
    d.set_item("v", g.v.into_vec())?;
    d.set_item("v_prime", g.v_prime.into_vec())?;
    d.set_item("set", g.set)?;
    d.set_item("group_diff", g.group_diff)?;
    d.set_item("f_bound", g.f_bound)?;
    d.set_item("lambda_p", g.lambda_p)?;
    d.set_item("similarity", g.similarity)?;
    Ok(d)
}

#[pyfunction]
fn jaccard(a: BTreeSet<String>, b: BTreeSet<String>) -> f64 {
    profiler::jaccard(&a, &b)
}

#[pyfunction]
fn nearest_rank_percentile(sample: Vec<f64>, percentile: f64) -> Option<f64> {
    profiler::nearest_rank_percentile(&sample, percentile)
}

fn synth_config(json: Option<&str>) -> PyResult<SyntheticConfig> {
    match json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string())),
        None => Ok(SyntheticConfig::default()),
    }
}

#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn planted_flip_rate(config_json: Option<&str>) -> PyResult<f64> {
    dataset::planted_flip_rate(&synth_config(config_json)?).or_raise()
}

/// Writes a synthetic bid log to `path` and returns the number of rows.
#[pyfunction]
#[pyo3(signature = (seed, path, config_json = None))]
fn gen_synthetic_csv(seed: u64, path: &str, config_json: Option<&str>) -> PyResult<usize> {
    let records = dataset::gen_synthetic(seed, &synth_config(config_json)?).or_raise()?;
    let file =
        std::fs::File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
    dataset::write_csv(&records, std::io::BufWriter::new(file)).or_raise()?;
    Ok(records.len())
}

/// Profile of one month of a bid log, as a list of per-bucket dicts.
#[pyfunction]
#[pyo3(signature = (path, horizon, seed, rule = "ipa", ell = None, beta = None, exponent = None))]
#[allow(clippy::too_many_arguments)]
fn build_profile<'py>(
    py: Python<'py>,
    path: &str,
    horizon: &str,
    seed: u64,
    rule: &str,
    ell: Option<f64>,
    beta: Option<f64>,
    exponent: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let rule = rule_from(rule, ell, beta, exponent)?;
    let auctions = dataset::build_auctions(&dataset::ingest_csv(path).or_raise()?);
    let h = dataset::partition_horizons(auctions)
        .into_iter()
        .find(|h| h.label == horizon)
        .ok_or_else(|| PyValueError::new_err(format!("no auctions in horizon {horizon}")))?;
    let cfg = ProfileConfig {
        seed,
        ..ProfileConfig::default()
    };
    let profile = py
        .detach(|| profiler::build_profile(&h, &rule, &cfg))
        .or_raise()?;
    profile
        .buckets
        .iter()
        .map(|b| {
            let d = PyDict::new(py);
            d.set_item("lo", b.lo)?;
            d.set_item("hi", b.hi)?;
            d.set_item("pair_count", b.pair_count)?;
            d.set_item("sampled_count", b.sampled_count)?;
            d.set_item("p90_diff", b.p90_diff)?;
            d.set_item("frac_diff_one", b.frac_diff_one)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn fairalloc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(ipa_allocate, m)?)?;
    m.add_function(wrap_pyfunction!(ipa_allocate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(restricted_alloc, m)?)?;
    m.add_function(wrap_pyfunction!(payment_identity, m)?)?;
    m.add_function(wrap_pyfunction!(ic_regret, m)?)?;
    m.add_function(wrap_pyfunction!(stability_param, m)?)?;
    m.add_function(wrap_pyfunction!(f_ell, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_ell, m)?)?;
    m.add_function(wrap_pyfunction!(welfare_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(stability_violation_search, m)?)?;
    m.add_function(wrap_pyfunction!(near_optimal_params, m)?)?;
    m.add_function(wrap_pyfunction!(gap_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(optimality_gap, m)?)?;
    m.add_function(wrap_pyfunction!(bound_report, m)?)?;
    m.add_function(wrap_pyfunction!(equivalence_clusters, m)?)?;
    m.add_function(wrap_pyfunction!(collection_widths, m)?)?;
    m.add_function(wrap_pyfunction!(partitioned_width, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_capped_alloc, m)?)?;
    m.add_function(wrap_pyfunction!(partition_hierarchical_alloc, m)?)?;
    m.add_function(wrap_pyfunction!(tv_gap_example, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_rank_percentile, m)?)?;
    m.add_function(wrap_pyfunction!(planted_flip_rate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic_csv, m)?)?;
    m.add_function(wrap_pyfunction!(build_profile, m)?)?;
    Ok(())
}
