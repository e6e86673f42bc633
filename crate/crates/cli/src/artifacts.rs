//! Run artifacts: samples as CSV, metrics as JSON, checkpoints and the
//! resolved-config echo.

use std::io::Write;
use std::path::Path;

/// Writes samples as `dim_0,...,dim_{d-1}[,log_weight]`. Values use Rust's
/// shortest round-trip float formatting, so files are diff-able and re-reads
/// are exact.
pub fn write_samples_csv(
    path: &Path,
    samples: &[Vec<f64>],
    log_weights: Option<&[f64]>,
) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let d = samples.first().map_or(0, |s| s.len());
    let mut header: Vec<String> = (0..d).map(|i| format!("dim_{i}")).collect();
    if log_weights.is_some() {
        header.push("log_weight".into());
    }
    writeln!(f, "{}", header.join(","))?;
    for (i, s) in samples.iter().enumerate() {
        let mut row: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
        if let Some(lw) = log_weights {
            row.push(format!("{}", lw[i]));
        }
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a samples CSV back; a trailing `log_weight` column is split off.
pub fn read_samples_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty samples file")?;
    let cols: Vec<&str> = header.split(',').collect();
    let has_weights = cols.last() == Some(&"log_weight");
    let d = if has_weights { cols.len() - 1 } else { cols.len() };
    if d == 0 {
        return Err("samples file has no dimension columns".into());
    }
    let mut samples = Vec::new();
    let mut weights = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", ln + 2))?;
        if vals.len() != cols.len() {
            return Err(format!("line {}: expected {} columns", ln + 2, cols.len()));
        }
        if has_weights {
            samples.push(vals[..d].to_vec());
            weights.push(vals[d]);
        } else {
            samples.push(vals);
        }
    }
    Ok((samples, if has_weights { Some(weights) } else { None }))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(serde_json::to_string_pretty(value).expect("serializable").as_bytes())?;
    f.write_all(b"\n")
}
