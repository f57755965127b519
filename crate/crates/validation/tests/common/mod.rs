use std::fs;
use std::path::{Path, PathBuf};

fn crates_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap()
}

/// Bundled input shipped with the command-line crate.
pub fn data(name: &str) -> PathBuf {
    crates_dir().join("cli/data").join(name)
}

/// Golden files live next to the test that records them; `cli/` names
/// resolve into the command-line crate.
pub fn golden_path(name: &str) -> PathBuf {
    match name.strip_prefix("cli/") {
        Some(rest) => crates_dir().join("cli/tests/golden").join(rest),
        None => Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/golden")
            .join(name),
    }
}

/// Compares `actual` with the stored golden file. `UPDATE_GOLDEN=1`
/// rewrites the file instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let line = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .unwrap_or(0);
    Err(format!(
        "{} differs from output at line {}",
        path.display(),
        line + 1
    ))
}

/// Runs the CLI in-process and returns its exit status.
pub fn mapc<S: AsRef<str>>(args: &[S]) -> i32 {
    let argv =
        std::iter::once("mapc".to_string()).chain(args.iter().map(|a| a.as_ref().to_string()));
    mapc_cli::run(argv)
}

pub fn path_str(p: &Path) -> String {
    p.to_str().expect("utf-8 path").to_string()
}

pub fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}
