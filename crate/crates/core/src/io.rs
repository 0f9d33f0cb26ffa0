//! File formats: endpoint CSV, versioned warp documents, and key=value configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{AlignConfig, Increment, WarpSequence};
use crate::basis::harmonic_count;
use crate::density::{EndpointPair, EndpointSet};
use crate::error::{Error, Result};
use crate::sphere::{Hemi, HemiPoint, SpherePoint, Vec3};

pub const ENDPOINT_HEADER: [&str; 9] = ["id", "hemi1", "x1", "y1", "z1", "hemi2", "x2", "y2", "z2"];
pub const WARP_FORMAT: &str = "sphereg-warp";
pub const WARP_VERSION: u32 = 1;

/// Largest accepted deviation of an input point's norm from 1; smaller deviations are re-normalized.
pub const NORM_TOLERANCE: f64 = 1e-3;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses endpoint CSV text; line numbers in errors count the header as line 1.
pub fn parse_endpoints(text: &str) -> Result<EndpointSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let labelled = match names.len() {
        9 => false,
        10 if names[9] == "label" => true,
        _ => return Err(parse_err(1, format!("expected header {}[,label]", ENDPOINT_HEADER.join(",")))),
    };
    if names[..9] != ENDPOINT_HEADER {
        return Err(parse_err(1, format!("expected header {}[,label]", ENDPOINT_HEADER.join(","))));
    }
    let mut pairs = Vec::new();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            let s = &rec[i];
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| parse_err(line, format!("column {}: invalid number '{s}'", names[i])))
        };
        let hemi = |i: usize| -> Result<Hemi> {
            rec[i].parse::<u8>().ok().and_then(Hemi::from_label).ok_or_else(|| parse_err(line, format!("column {}: hemisphere must be 1 or 2, got '{}'", names[i], &rec[i])))
        };
        let point = |h: usize| -> Result<HemiPoint> {
            let v = Vec3::new(num(h + 1)?, num(h + 2)?, num(h + 3)?);
            let norm = v.norm();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Norm { line, norm });
            }
            let v = if (norm - 1.0).abs() > 4.0 * f64::EPSILON { v / norm } else { v };
            Ok(HemiPoint::new(hemi(h)?, SpherePoint::from_unit(v)))
        };
        let id = rec[0].parse::<u64>().map_err(|_| parse_err(line, format!("invalid id '{}'", &rec[0])))?;
        pairs.push(EndpointPair::new(point(1)?, point(5)?));
        ids.push(id);
        if labelled {
            labels.push(rec[9].to_string());
        }
    }
    let set = EndpointSet::new(pairs).with_ids(ids);
    Ok(if labelled { set.with_labels(labels) } else { set })
}

pub fn load_endpoints(path: &Path) -> Result<EndpointSet> {
    parse_endpoints(&std::fs::read_to_string(path)?)
}

/// Endpoint CSV text; floats use the shortest representation that reads back exactly.
pub fn format_endpoints(pts: &EndpointSet) -> String {
    let mut out = ENDPOINT_HEADER.join(",");
    if pts.labels().is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, p) in pts.pairs().iter().enumerate() {
        let (a, b) = (p.first.coords(), p.second.coords());
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            pts.ids()[i],
            p.first.hemi.label(),
            a.x,
            a.y,
            a.z,
            p.second.hemi.label(),
            b.x,
            b.y,
            b.z
        );
        if let Some(l) = pts.labels() {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn save_endpoints(path: &Path, pts: &EndpointSet) -> Result<()> {
    Ok(std::fs::write(path, format_endpoints(pts))?)
}

#[derive(Serialize, Deserialize)]
struct WarpDocument {
    format: String,
    version: u32,
    increments: Vec<Increment>,
}

pub fn format_warp(w: &WarpSequence) -> String {
    let doc = WarpDocument { format: WARP_FORMAT.into(), version: WARP_VERSION, increments: w.increments.clone() };
    let mut s = serde_json::to_string_pretty(&doc).expect("warp documents serialize");
    s.push('\n');
    s
}

/// Parses a warp document, checking the format tag, the version, and every coefficient length.
pub fn parse_warp(text: &str) -> Result<WarpSequence> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.line(), e.to_string()))?;
    match value.get("version") {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(WARP_VERSION as u64) => {}
        Some(v) => return Err(Error::SchemaVersion(v.to_string())),
        None => return Err(Error::SchemaVersion("missing".into())),
    }
    let doc: WarpDocument = serde_json::from_value(value).map_err(|e| parse_err(0, e.to_string()))?;
    if doc.format != WARP_FORMAT {
        return Err(parse_err(0, format!("unknown format '{}'", doc.format)));
    }
    for (k, inc) in doc.increments.iter().enumerate() {
        if inc.degree == 0 || inc.degree > crate::basis::MAX_DEGREE {
            return Err(Error::DegreeTooLarge(inc.degree));
        }
        let m = 2 * harmonic_count(inc.degree);
        if inc.coeffs.iter().any(|c| c.len() != m) || !inc.step.is_finite() || inc.coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(parse_err(0, format!("increment {k}: expected {m} finite coefficients per hemisphere")));
        }
    }
    Ok(WarpSequence { increments: doc.increments })
}

pub fn save_warp(path: &Path, w: &WarpSequence) -> Result<()> {
    Ok(std::fs::write(path, format_warp(w))?)
}

pub fn load_warp(path: &Path) -> Result<WarpSequence> {
    parse_warp(&std::fs::read_to_string(path)?)
}

/// Sets one configuration key from its textual value.
pub fn set_config_key(cfg: &mut AlignConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
    }
    match key {
        "sigma" => cfg.sigma = num(key, value)?,
        "delta" => cfg.step = num(key, value)?,
        "epsilon" => cfg.tol = num(key, value)?,
        "max_iters" => cfg.max_iters = num(key, value)?,
        "grid_level" => cfg.grid_level = num(key, value)?,
        "basis_degree" => cfg.basis_degree = num(key, value)?,
        "kde_every" => cfg.kde_every = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "deterministic" => cfg.deterministic = num(key, value)?,
        "value_cutoff" => cfg.value_cutoff = num(key, value)?,
        _ => return Err(Error::Config(format!("unknown key '{key}'"))),
    }
    Ok(())
}

/// Applies `key = value` lines to `cfg`; `#` starts a comment.
pub fn parse_config(text: &str, cfg: &mut AlignConfig) -> Result<()> {
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err(i + 1, "expected key = value"))?;
        set_config_key(cfg, k.trim(), v.trim()).map_err(|e| match e {
            Error::Config(m) => parse_err(i + 1, m),
            other => other,
        })?;
    }
    Ok(())
}

/// Config text that `parse_config` reads back to the same values.
pub fn format_config(cfg: &AlignConfig) -> String {
    format!(
        "sigma = {}\ndelta = {}\nepsilon = {}\nmax_iters = {}\ngrid_level = {}\nbasis_degree = {}\nkde_every = {}\nseed = {}\ndeterministic = {}\nvalue_cutoff = {}\n",
        cfg.sigma, cfg.step, cfg.tol, cfg.max_iters, cfg.grid_level, cfg.basis_degree, cfg.kde_every, cfg.seed, cfg.deterministic, cfg.value_cutoff
    )
}
