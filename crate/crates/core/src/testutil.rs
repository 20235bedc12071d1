//! Helpers shared by unit tests.

use std::path::PathBuf;

/// Compares `actual` with `tests/golden/<name>`. With `UPDATE_GOLDEN=1` the
/// file is rewritten instead.
pub(crate) fn assert_golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}; rerun with UPDATE_GOLDEN=1", path.display()));
    assert!(expected == actual, "golden mismatch for {name}");
}
