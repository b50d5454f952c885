//! Artifact writers: versioned CSV tables, JSON summaries with the resolved
//! scenario echoed for provenance, and portable graymaps for masks. Fixed
//! float formatting keeps outputs byte-identical across runs of one seed.

use crate::error::Result;
use crate::grid::{Grid, SpatialMask};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const CSV_SCHEMA: &str = "# schema v1";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with a schema comment line, a header row and fixed-format floats.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_SCHEMA}")?;
    writeln!(f, "{}", columns.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Spatial mask as a graymap: one byte per lattice node, row-major, 255 for
/// active nodes; the comment line records the axis extents.
pub fn write_mask_pgm(path: &Path, g: &Grid, mask: &SpatialMask) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let (lo, hi) = g.domain.bounding_box();
    writeln!(f, "P5")?;
    writeln!(
        f,
        "# x:[{:.6},{:.6}] y:[{:.6},{:.6}] shape:{}x{}",
        lo[0], hi[0], lo[1], hi[1], g.shape[0], g.shape[1]
    )?;
    writeln!(f, "{} {}", g.shape[0], g.shape[1])?;
    writeln!(f, "255")?;
    let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    f.write_all(&bytes)?;
    Ok(())
}

pub fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_bytes_are_deterministic() {
        let dir = std::env::temp_dir().join("waveobs-report-test");
        ensure_dir(&dir).unwrap();
        let path = dir.join("t.csv");
        let rows = vec![vec![1.0, 2.5e-8], vec![-3.0, 0.1]];
        write_csv(&path, &["a", "b"], &rows).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_csv(&path, &["a", "b"], &rows).unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
        let text = String::from_utf8(first).unwrap();
        assert!(text.starts_with(CSV_SCHEMA));
        assert!(text.contains("a,b"));
    }
}
