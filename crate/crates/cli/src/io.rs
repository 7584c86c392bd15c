//! CSV and JSON artifact formats.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use expdesign::constitutive::{ParamId, Strain, Stress};
use expdesign::environment::{strain_columns, stress_columns, GameSpec};
use expdesign::kalman::ParameterBelief;
use serde_json::json;

pub fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

/// Header of a strain-stress record: `step`, six strains, six stresses.
pub fn record_header() -> Vec<String> {
    let mut h = vec!["step".to_string()];
    h.extend(strain_columns());
    h.extend(stress_columns());
    h
}

pub fn write_record(path: &Path, strains: &[Strain], stresses: &[Stress]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(record_header())?;
    for (k, (e, s)) in strains.iter().zip(stresses).enumerate() {
        let mut row = vec![(k + 1).to_string()];
        row.extend(e.to_array().iter().map(|v| format!("{v:e}")));
        row.extend(s.to_array().iter().map(|v| format!("{v:e}")));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a record written by [`write_record`] or by hand. Errors name the
/// offending data row (1-based, header excluded).
pub fn read_record(path: &Path) -> Result<(Vec<Strain>, Vec<Stress>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_record(file).with_context(|| format!("in {}", path.display()))
}

pub fn parse_record<R: std::io::Read>(reader: R) -> Result<(Vec<Strain>, Vec<Stress>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.iter().all(|h| h.is_empty()) {
        bail!("empty file: expected header {}", record_header().join(","));
    }
    if header != record_header() {
        bail!("header mismatch: expected {}, found {}", record_header().join(","), header.join(","));
    }
    let mut strains = Vec::new();
    let mut stresses = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| anyhow!("row {row}: {e}"))?;
        if rec.len() != 13 {
            bail!("row {row}: expected 13 fields, found {}", rec.len());
        }
        let mut v = [0.0_f64; 13];
        for (j, field) in rec.iter().enumerate() {
            v[j] = field.parse().map_err(|_| anyhow!("row {row}: column {}: `{field}` is not a number", header[j]))?;
            if !v[j].is_finite() {
                bail!("row {row}: column {}: value is not finite", header[j]);
            }
        }
        let mut e = [0.0; 6];
        let mut s = [0.0; 6];
        e.copy_from_slice(&v[1..7]);
        s.copy_from_slice(&v[7..13]);
        strains.push(Strain::from_array(e));
        stresses.push(Stress::from_array(s));
    }
    if strains.is_empty() {
        bail!("record has a header but no data rows");
    }
    Ok((strains, stresses))
}

/// One row per action with its strain increment.
pub fn write_strain_program(path: &Path, spec: &GameSpec, actions: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["step".to_string()];
    header.extend(strain_columns());
    w.write_record(&header)?;
    for (k, &a) in actions.iter().enumerate() {
        let deps = spec.action_to_strain(a)?;
        let mut row = vec![(k + 1).to_string()];
        row.extend(deps.to_array().iter().map(|v| format!("{v}")));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn belief_json(step: usize, belief: &ParameterBelief, ids: &[ParamId], kl: Option<f64>) -> serde_json::Value {
    let names: Vec<&str> = ids.iter().map(|id| id.name()).collect();
    json!({
        "step": step,
        "params": names,
        "mean": belief.mean.as_slice(),
        "std": belief.std().as_slice(),
        "cov": (0..belief.dim()).map(|i| belief.cov.row(i).iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
        "kl": kl,
    })
}

pub fn write_lines<I: IntoIterator<Item = serde_json::Value>>(path: &Path, lines: I) -> Result<()> {
    let mut f = std::io::BufWriter::new(create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn format_path(path: &[u8]) -> String {
    format!("[{}]", path.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","))
}

/// Parses `1,1,4,1,1` or `[1,1,4,1,1]`.
pub fn parse_path(text: &str) -> Result<Vec<u8>> {
    let t = text.trim().trim_start_matches('[').trim_end_matches(']');
    t.split(',')
        .map(|s| s.trim().parse::<u8>().map_err(|_| anyhow!("bad action code `{}` in path `{text}`", s.trim())))
        .collect()
}
