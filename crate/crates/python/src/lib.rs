//! Python bindings. Plans come back as index lists, reports as JSON strings.

use std::path::Path;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

use mvskill_core::gradsuite::{run_suite, Suite};
use mvskill_core::harness::{evaluate_checkpoint as eval_ck, load_snapshot, RunConfig};
use mvskill_core::metrics;
use mvskill_core::sampler::{self, SamplerConfig};
use mvskill_core::textio::{self, ParseMode, ProficiencyLabel, StructuredResponse};
use mvskill_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Segment-sampled frame indices for a video of `video_length` frames.
#[pyfunction]
fn pats_plan(video_length: usize, n_target: usize, n_segments: usize, d_s: usize) -> PyResult<Vec<usize>> {
    let cfg = SamplerConfig::new(n_target, n_segments, d_s).map_err(py_err)?;
    Ok(sampler::pats_plan(video_length, &cfg).map_err(py_err)?.indices)
}

/// Evenly spaced frame indices.
#[pyfunction]
fn uniform_plan(video_length: usize, n_target: usize) -> PyResult<Vec<usize>> {
    Ok(sampler::uniform_plan(video_length, n_target).map_err(py_err)?.indices)
}

/// Formats a label and commentary as the structured target string.
#[pyfunction]
fn format_target(label: &str, commentary: &str) -> PyResult<String> {
    let label = ProficiencyLabel::parse(label)
        .ok_or_else(|| PyValueError::new_err(format!("unknown proficiency label `{label}`")))?;
    let resp = StructuredResponse::new(label, commentary).map_err(py_err)?;
    Ok(textio::format_target(&resp))
}

/// Parses model output into `(label, commentary)`; raises ValueError on failure.
#[pyfunction]
#[pyo3(signature = (text, lenient = false))]
fn parse_output(text: &str, lenient: bool) -> PyResult<(String, String)> {
    let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let r = textio::parse_output(text, mode).map_err(py_err)?;
    Ok((r.label.as_str().to_string(), r.commentary))
}

/// ROUGE-L F-measure over lowercase whitespace tokens.
#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> PyResult<f64> {
    metrics::rouge_l(&metrics::tokenize(candidate), &metrics::tokenize(reference)).map_err(py_err)
}

/// Exact-match METEOR over lowercase whitespace tokens.
#[pyfunction]
fn meteor_exact(candidate: &str, reference: &str) -> PyResult<f64> {
    metrics::meteor_exact(&metrics::tokenize(candidate), &metrics::tokenize(reference)).map_err(py_err)
}

/// Default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Runs a gradient suite and returns its report as JSON.
#[pyfunction]
#[pyo3(signature = (module = "all", seed = 0))]
fn gradcheck(module: &str, seed: u64) -> PyResult<String> {
    let suite: Suite = module.parse().map_err(py_err)?;
    let report = run_suite(suite, seed).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Scores a checkpoint on its test split; `config` overrides the stored config.
#[pyfunction]
#[pyo3(signature = (path, config = None))]
fn evaluate_checkpoint(path: &str, config: Option<&str>) -> PyResult<String> {
    let path = Path::new(path);
    let cfg = match config {
        Some(json) => RunConfig::from_json(json).map_err(py_err)?,
        None => load_snapshot(path).map_err(py_err)?.config,
    };
    let (_, report) = eval_ck(path, &cfg).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn mvskill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(pats_plan, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_plan, m)?)?;
    m.add_function(wrap_pyfunction!(format_target, m)?)?;
    m.add_function(wrap_pyfunction!(parse_output, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(meteor_exact, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plans_and_text_round_trip() {
        assert_eq!(pats_plan(16, 16, 1, 16).unwrap(), (0..16).collect::<Vec<_>>());
        assert_eq!(uniform_plan(300, 8).unwrap().len(), 8);
        let text = format_target("late expert", "steady").unwrap();
        assert_eq!(
            parse_output(&text, false).unwrap(),
            ("Late Expert".into(), "steady".into())
        );
        assert!(parse_output("nothing", false).is_err());
        assert!(format_target("master", "x").is_err());
    }

    #[test]
    fn metrics_match_core() {
        assert!((rouge_l("the cat sat", "the cat is sad").unwrap() - 4.0 / 7.0).abs() < 1e-15);
        assert!((meteor_exact("the cat sat", "the cat is sad").unwrap() - 25.0 / 52.0).abs() < 1e-15);
        assert!(rouge_l("a", "").is_err());
    }

    #[test]
    fn default_config_parses() {
        assert_eq!(RunConfig::from_json(&default_config()).unwrap(), RunConfig::default());
    }
}
