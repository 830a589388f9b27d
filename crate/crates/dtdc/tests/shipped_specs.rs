//! The spec files shipped under `specs/` must load, validate and run.

use std::path::{Path, PathBuf};

use dtdc::harness::files::load_spec;
use dtdc::harness::runner::execute_spec;

fn specs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs")
}

#[test]
fn all_shipped_specs_load() {
    let mut seen = 0;
    for entry in std::fs::read_dir(specs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let spec = load_spec(&path).unwrap_or_else(|e| {
                panic!("shipped spec {} failed to load: {e}", path.display())
            });
            assert!(!spec.runs.is_empty());
            seen += 1;
        }
    }
    assert!(seen >= 6, "expected the shipped spec set, found {seen}");
}

#[test]
fn desk_spec_runs_end_to_end() {
    let path = specs_dir().join("desk_default.toml");
    let mut spec = load_spec(&path).unwrap();
    // Full scale is exercised by the acceptance suite; two repetitions prove
    // the file is runnable as shipped.
    spec.repetitions = 2;
    let result = execute_spec(&spec, path.parent().unwrap()).unwrap();
    assert_eq!(result.traces.len(), spec.runs.len());
    for s in &result.summaries {
        let last = s.points.last().unwrap();
        assert!(last.median.is_finite(), "run {} diverged", s.label);
    }
}
