//! On-disk operator cache for projector symbols and transform factors,
//! keyed by (d, L, format, tolerance). Writers take an advisory exclusive
//! lock and publish atomically through a rename; readers only ever see
//! complete entries.

use crate::io::{self, IoError};
use crate::layout::{Field, QttLayout};
use crate::symbols::BuiltSymbol;
use num_complex::Complex64;
use std::fs;
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CacheError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] IoError),
}

pub const CACHE_ENV: &str = "QTTSOLVE_CACHE";

pub struct OperatorCache {
    root: PathBuf,
}

fn flock_exclusive(f: &fs::File) -> std::io::Result<()> {
    let rc = unsafe { libc::flock(f.as_raw_fd(), libc::LOCK_EX) };
    if rc != 0 {
        return Err(std::io::Error::last_os_error());
    }
    Ok(())
}

impl OperatorCache {
    pub fn new(root: PathBuf) -> Result<Self, CacheError> {
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    /// Cache rooted at $QTTSOLVE_CACHE, or `fallback` when unset.
    pub fn from_env(fallback: &Path) -> Result<Self, CacheError> {
        let root = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| fallback.to_path_buf());
        Self::new(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn key(&self, kind: &str, layout: &QttLayout, tol: f64) -> PathBuf {
        self.root.join(format!(
            "{kind}_d{}_L{}_{}_{:.0e}.qtt",
            layout.d,
            layout.level,
            layout.format.tag(),
            tol
        ))
    }

    fn meta_path(&self, entry: &Path) -> PathBuf {
        entry.with_extension("meta")
    }

    pub fn load_symbol(&self, kind: &str, layout: &QttLayout, tol: f64) -> Option<BuiltSymbol> {
        let path = self.key(kind, layout, tol);
        let field: Field<Complex64> = io::load_field(&path).ok()?;
        if field.layout != *layout {
            return None;
        }
        let meta = fs::read_to_string(self.meta_path(&path)).ok()?;
        let mut mc_error = f64::NAN;
        let mut degraded = false;
        for line in meta.lines() {
            if let Some(v) = line.strip_prefix("mc_error=") {
                mc_error = v.parse().ok()?;
            }
            if let Some(v) = line.strip_prefix("degraded=") {
                degraded = v == "true";
            }
        }
        let max_rank = field.tt.max_rank();
        Some(BuiltSymbol { field, mc_error, max_rank, degraded })
    }

    pub fn store_symbol(
        &self,
        kind: &str,
        layout: &QttLayout,
        tol: f64,
        symbol: &BuiltSymbol,
    ) -> Result<PathBuf, CacheError> {
        let path = self.key(kind, layout, tol);
        let lock_path = path.with_extension("lock");
        let lock = fs::OpenOptions::new().create(true).truncate(false).write(true).open(&lock_path)?;
        flock_exclusive(&lock)?;
        let tmp = path.with_extension("tmp");
        io::save_field(&tmp, &symbol.field)?;
        fs::rename(&tmp, &path)?;
        fs::write(
            self.meta_path(&path),
            format!("mc_error={}\ndegraded={}\n", symbol.mc_error, symbol.degraded),
        )?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{Arity, Format, Space};
    use crate::symbols::{projector_symbol, SymbolFilter};

    #[test]
    fn store_and_reload_projector() {
        let dir = std::env::temp_dir().join(format!("qttsolve-cache-test-{}", std::process::id()));
        let cache = OperatorCache::new(dir.clone()).unwrap();
        let lay = QttLayout::new(2, 4, Format::X1Y1, Space::Fourier, Arity::Matrix);
        let p = projector_symbol(&lay, SymbolFilter::Spectral, 1e-8, 40, 3).unwrap();
        cache.store_symbol("proj", &lay, 1e-8, &p).unwrap();
        let q = cache.load_symbol("proj", &lay, 1e-8).expect("cache hit");
        assert_eq!(q.field.tt.site_dims(), p.field.tt.site_dims());
        assert!((q.mc_error - p.mc_error).abs() < 1e-15);
        let d = q.field.tt.distance(&p.field.tt).unwrap();
        assert!(d < 1e-14);
        // a different tolerance misses
        assert!(cache.load_symbol("proj", &lay, 1e-9).is_none());
        let _ = std::fs::remove_dir_all(dir);
    }
}
