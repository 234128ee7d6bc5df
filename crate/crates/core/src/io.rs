//! File formats: configuration JSON, long-format TAC CSV with an optional
//! whole-blood sidecar, and time-grid specifications.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Configuration, TacTable};

pub const TAC_HEADER: [&str; 3] = ["region_id", "time_min", "value"];
pub const WB_HEADER: [&str; 2] = ["time_min", "cwb"];

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidInput(format!("line {line}: cannot parse {what} `{field}`")))
}

pub fn read_config<R: Read>(reader: R) -> Result<Configuration> {
    Ok(serde_json::from_reader(reader)?)
}

pub fn read_config_file(path: &Path) -> Result<Configuration> {
    read_config(fs::File::open(path)?)
}

pub fn write_config<W: Write>(config: &Configuration, mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, config)?;
    writer.write_all(b"\n")?;
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::InvalidInput(format!(
            "expected CSV header `{}`, found `{}`",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

/// Writes `region_id,time_min,value`, region by region in table order.
pub fn write_tacs<W: Write>(table: &TacTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TAC_HEADER)?;
    for (id, curve) in table.curves() {
        for (t, v) in table.time_grid().iter().zip(curve) {
            w.write_record([id.as_str(), &fmt_f64(*t), &fmt_f64(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a long-format TAC CSV. Every region must be sampled on the same
/// times; the region order of first appearance is kept.
pub fn read_tacs<R: Read>(reader: R) -> Result<TacTable> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(r.headers()?, &TAC_HEADER)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::InvalidInput(format!("line {line}: expected 3 fields")));
        }
        let id = record[0].to_owned();
        let t = parse_f64(&record[1], "time_min", line)?;
        let v = parse_f64(&record[2], "value", line)?;
        match series.iter_mut().find(|(other, _)| *other == id) {
            Some((_, points)) => points.push((t, v)),
            None => series.push((id, vec![(t, v)])),
        }
    }
    let Some((first_id, first)) = series.first() else {
        return Err(Error::InvalidInput("TAC file has no rows".into()));
    };
    let mut grid: Vec<f64> = first.iter().map(|p| p.0).collect();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    grid = order.iter().map(|&i| grid[i]).collect();
    let mut curves = Vec::with_capacity(series.len());
    for (id, points) in &series {
        let mut points = points.clone();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let times: Vec<f64> = points.iter().map(|p| p.0).collect();
        if times != grid {
            return Err(Error::InvalidInput(format!(
                "region `{id}` is not sampled on the same times as `{first_id}`"
            )));
        }
        curves.push((id.clone(), points.into_iter().map(|p| p.1).collect()));
    }
    TacTable::new(grid, curves, None)
}

pub fn write_wb<W: Write>(samples: &[(f64, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(WB_HEADER)?;
    for (s, c) in samples {
        w.write_record([fmt_f64(*s), fmt_f64(*c)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_wb<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(r.headers()?, &WB_HEADER)?;
    let mut samples = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::InvalidInput(format!("line {line}: expected 2 fields")));
        }
        samples.push((
            parse_f64(&record[0], "time_min", line)?,
            parse_f64(&record[1], "cwb", line)?,
        ));
    }
    Ok(samples)
}

/// Sidecar location for whole-blood samples: `tacs.csv` → `tacs.wb.csv`.
pub fn wb_sidecar_path(tac_path: &Path) -> PathBuf {
    let stem = tac_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    tac_path.with_file_name(format!("{stem}.wb.csv"))
}

/// Reads a TAC CSV and, when present, its whole-blood sidecar.
pub fn read_tacs_file(path: &Path) -> Result<TacTable> {
    let table = read_tacs(fs::File::open(path)?)?;
    let sidecar = wb_sidecar_path(path);
    if sidecar.exists() {
        let wb = read_wb(fs::File::open(&sidecar)?)?;
        return table.with_wb_samples(Some(wb));
    }
    Ok(table)
}

/// Writes `contents` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("`{}` is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses `log:start,end,count` (log-spaced, inclusive), `lin:start,end,count`
/// or `list:t1,t2,...`.
pub fn parse_grid_spec(spec: &str) -> Result<Vec<f64>> {
    let (kind, rest) = spec
        .split_once(':')
        .ok_or_else(|| Error::InvalidInput(format!("grid spec `{spec}` lacks a `kind:` prefix")))?;
    let values: Vec<f64> = rest
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("grid spec `{spec}`: bad number `{s}`")))
        })
        .collect::<Result<_>>()?;
    let grid = match kind.trim() {
        "list" => values,
        "log" | "lin" => {
            let [start, end, count] = values[..] else {
                return Err(Error::InvalidInput(format!(
                    "grid spec `{spec}` needs start,end,count"
                )));
            };
            if count < 1.0 || count.fract() != 0.0 {
                return Err(Error::InvalidInput(format!("grid count must be a positive integer, got {count}")));
            }
            let count = count as usize;
            if kind.trim() == "log" {
                if !(start > 0.0 && end > 0.0) {
                    return Err(Error::InvalidInput("log grid bounds must be positive".into()));
                }
                log_grid(start, end, count)
            } else {
                lin_grid(start, end, count)
            }
        }
        other => {
            return Err(Error::InvalidInput(format!("unknown grid kind `{other}`")));
        }
    };
    crate::model::validate_grid(&grid)?;
    Ok(grid)
}

/// `count` log-spaced points from `start` to `end` inclusive.
pub fn log_grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    let (ls, le) = (start.ln(), end.ln());
    (0..count)
        .map(|l| match l {
            0 => start,
            l if l == count - 1 => end,
            l => (ls + (le - ls) * l as f64 / (count - 1) as f64).exp(),
        })
        .collect()
}

pub fn lin_grid(start: f64, end: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![start];
    }
    (0..count)
        .map(|l| start + (end - start) * l as f64 / (count - 1) as f64)
        .collect()
}
