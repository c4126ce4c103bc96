//! Line-delimited corpus manifest.
//!
//! One record per line, whitespace-separated `key=value` fields:
//!
//! ```text
//! id=clip00000 split=train clean=clean/clip00000.wav noisy=noisy/clip00000.wav snr=3.5 threshold=-21 ratio=4 attack=12 release=80 sidechain_gain=1.05 clip=true eta=0.93
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::corpus::Split;
use crate::corruption::{CompressorParams, CorruptionParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    /// Relative to the manifest's directory.
    pub clean: PathBuf,
    pub noisy: PathBuf,
    pub params: CorruptionParams,
}

const KEYS: [&str; 12] = [
    "id",
    "split",
    "clean",
    "noisy",
    "snr",
    "threshold",
    "ratio",
    "attack",
    "release",
    "sidechain_gain",
    "clip",
    "eta",
];

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::format("manifest", format!("line {line}: {msg}"))
}

fn token_ok(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '=' || c.is_control())
}

impl ManifestRecord {
    pub fn to_line(&self) -> Result<String> {
        let clean = self.clean.to_str().unwrap_or("");
        let noisy = self.noisy.to_str().unwrap_or("");
        for (what, v) in [("id", self.id.as_str()), ("clean", clean), ("noisy", noisy)] {
            if !token_ok(v) {
                return Err(Error::format("manifest", format!("{what} {v:?} cannot be written")));
            }
        }
        let p = &self.params;
        let c = &p.compressor;
        Ok(format!(
            "id={} split={} clean={} noisy={} snr={} threshold={} ratio={} attack={} release={} sidechain_gain={} clip={} eta={}",
            self.id,
            self.split.name(),
            clean,
            noisy,
            p.snr,
            c.threshold,
            c.ratio,
            c.attack,
            c.release,
            c.sidechain_gain,
            p.clip,
            p.eta
        ))
    }

    fn from_fields(line: usize, fields: &BTreeMap<&str, &str>) -> Result<Self> {
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(line, format!("missing field {k}")));
        let num = |k: &str| -> Result<f64> {
            let v = get(k)?;
            let x: f64 = v.parse().map_err(|_| bad(line, format!("{k}={v} is not a number")))?;
            if !x.is_finite() {
                return Err(bad(line, format!("{k} must be finite")));
            }
            Ok(x)
        };
        let split = get("split")?;
        let split = Split::parse(split).ok_or_else(|| bad(line, format!("unknown split {split}")))?;
        let clip = match get("clip")? {
            "true" => true,
            "false" => false,
            other => return Err(bad(line, format!("clip={other} is not a boolean"))),
        };
        let params = CorruptionParams {
            snr: num("snr")?,
            compressor: CompressorParams {
                threshold: num("threshold")?,
                ratio: num("ratio")?,
                attack: num("attack")?,
                release: num("release")?,
                sidechain_gain: num("sidechain_gain")?,
            },
            clip,
            eta: num("eta")?,
        };
        params.validate().map_err(|e| bad(line, e))?;
        Ok(Self {
            id: get("id")?.to_string(),
            split,
            clean: PathBuf::from(get("clean")?),
            noisy: PathBuf::from(get("noisy")?),
            params,
        })
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out: Vec<ManifestRecord> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = BTreeMap::new();
        for tok in trimmed.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(line, format!("field {tok:?} is not key=value")))?;
            if !KEYS.contains(&k) {
                return Err(bad(line, format!("unknown field {k}")));
            }
            if !token_ok(v) {
                return Err(bad(line, format!("invalid value for {k}")));
            }
            if fields.insert(k, v).is_some() {
                return Err(bad(line, format!("duplicate field {k}")));
            }
        }
        let rec = ManifestRecord::from_fields(line, &fields)?;
        if !seen.insert(rec.id.clone()) {
            return Err(bad(line, format!("duplicate id {}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn format_manifest(records: &[ManifestRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line()?);
        s.push('\n');
    }
    Ok(s)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_manifest(records)?).map_err(|e| Error::io(path, e))
}
