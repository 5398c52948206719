//! Shared plumbing: directory listing, file I/O with path context, and a
//! tiny worker pool for independent items.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

/// All .pgm files in `dir`, lexicographically sorted by file name.
pub fn sorted_pgms(dir: &Path) -> Result<Vec<PathBuf>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|r| r.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|s| s.to_str()).is_some_and(|s| {
                    s.eq_ignore_ascii_case("pgm")
                })
        })
        .collect();
    files.sort_by_key(|p| p.file_name().map(|n| n.to_owned()));
    if files.is_empty() {
        return Err(format!("{}: no .pgm files found", dir.display()));
    }
    Ok(files)
}

pub fn create_dir(dir: &Path) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Run `work(i)` for every index in 0..count on up to `jobs` threads.
/// Items are independent; any error aborts with the failing item's message.
pub fn for_each_index<F>(count: usize, jobs: usize, work: F) -> Result<(), String>
where
    F: Fn(usize) -> Result<(), String> + Sync,
{
    if count == 0 {
        return Ok(());
    }
    let jobs = jobs.clamp(1, count);
    if jobs == 1 {
        for i in 0..count {
            work(i)?;
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let failures: std::sync::Mutex<Vec<(usize, String)>> = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count || !failures.lock().unwrap().is_empty() {
                    break;
                }
                if let Err(e) = work(i) {
                    failures.lock().unwrap().push((i, e));
                    break;
                }
            });
        }
    });
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by_key(|(i, _)| *i);
    match failures.into_iter().next() {
        None => Ok(()),
        Some((_, e)) => Err(e),
    }
}

/// Sample standard deviation (0 for fewer than two values).
pub fn std_dev(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
