//! Bundle file formats.
//!
//! Binary (canonical, little-endian):
//!
//! ```text
//! "DMVF" | u32 version=1 | u32 N | u32 n_p | u32 T | u8 has_labels
//! per record: n_p*3 f32 coords | 2*T f32 BOLD (endpoint a, then b) | n_p f32 FA | [i32 label]
//! ```
//!
//! The text variant holds one JSON object per line with keys `points`,
//! `bold_a`, `bold_b`, `fa` and optional `label`. The bundle name is not
//! stored by either format; loaders take it from the file stem.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoldPair, Bundle, FaProfile, Fiber, FiberRecord, Point3};
use crate::error::{format_err, Error, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"DMVF";
const BUNDLE_VERSION: u32 = 1;
const KIND: &str = "bundle";

fn name_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Writes the canonical binary format. Values are stored as `f32`; mixed
/// labelled and unlabelled records are rejected.
pub fn save_bundle(bundle: &Bundle, path: impl AsRef<Path>) -> Result<()> {
    let records = bundle.records();
    let labelled = records.iter().filter(|r| r.truth_label.is_some()).count();
    if labelled != 0 && labelled != records.len() {
        return Err(Error::Config(
            "either all records carry a truth label or none do".into(),
        ));
    }
    let has_labels = labelled != 0;
    let (n_p, t) = (bundle.n_points(), bundle.bold_len());

    let mut buf = Vec::with_capacity(17 + records.len() * 4 * (4 * n_p + 2 * t + 1));
    buf.extend_from_slice(BUNDLE_MAGIC);
    for v in [BUNDLE_VERSION, records.len() as u32, n_p as u32, t as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(has_labels as u8);
    let put = |v: f64, buf: &mut Vec<u8>| buf.extend_from_slice(&(v as f32).to_le_bytes());
    for r in records {
        for p in r.fiber.points() {
            for &c in p {
                put(c, &mut buf);
            }
        }
        for &v in r.bold.endpoint_a().iter().chain(r.bold.endpoint_b()) {
            put(v, &mut buf);
        }
        for &v in r.fa.values() {
            put(v, &mut buf);
        }
        if let Some(l) = r.truth_label {
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(format_err(KIND, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

fn check_finite(record: usize, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Record {
            record,
            message: format!("non-finite value in {what}"),
        });
    }
    Ok(())
}

fn record_err(record: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Record { .. } => e,
        other => Error::Record {
            record,
            message: other.to_string(),
        },
    }
}

/// Parses a binary bundle from memory.
pub fn parse_bundle(bytes: &[u8], name: &str) -> Result<Bundle> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != BUNDLE_MAGIC {
        return Err(format_err(KIND, "bad magic"));
    }
    let version = r.u32("version")?;
    if version != BUNDLE_VERSION {
        return Err(format_err(KIND, format!("unsupported version {version}")));
    }
    let n = r.u32("record count")? as usize;
    let n_p = r.u32("point count")? as usize;
    let t = r.u32("series length")? as usize;
    let has_labels = match r.take(1, "label flag")?[0] {
        0 => false,
        1 => true,
        other => return Err(format_err(KIND, format!("invalid label flag {other}"))),
    };
    if n == 0 {
        return Err(format_err(KIND, "bundle has no records"));
    }
    let per_record = 4 * (3 * n_p + 2 * t + n_p) + if has_labels { 4 } else { 0 };
    let expected = 21 + n.checked_mul(per_record).ok_or_else(|| format_err(KIND, "size overflow"))?;
    if bytes.len() < expected {
        return Err(format_err(
            KIND,
            format!("truncated: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(KIND, "trailing bytes after last record"));
    }

    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let coords = r.f32s(3 * n_p, "coordinates")?;
        let bold = r.f32s(2 * t, "BOLD")?;
        let fa = r.f32s(n_p, "FA")?;
        let label = if has_labels {
            Some(i32::from_le_bytes(r.take(4, "label")?.try_into().unwrap()))
        } else {
            None
        };
        check_finite(i, "coordinates", &coords)?;
        check_finite(i, "BOLD", &bold)?;
        check_finite(i, "FA", &fa)?;
        let points: Vec<Point3> = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let (a, b) = bold.split_at(t);
        let record = FiberRecord::new(
            Fiber::new(points).map_err(record_err(i))?,
            BoldPair::new(a.to_vec(), b.to_vec()).map_err(record_err(i))?,
            FaProfile::new(fa).map_err(record_err(i))?,
            label,
        )
        .map_err(record_err(i))?;
        records.push(record);
    }
    Bundle::new(name, records)
}

/// Loads a bundle, detecting the binary format by its magic and falling
/// back to the line-delimited text variant otherwise.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<Bundle> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let name = name_from_path(path);
    if bytes.starts_with(BUNDLE_MAGIC) {
        parse_bundle(&bytes, &name)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| format_err(KIND, "neither binary nor UTF-8 text"))?;
        parse_bundle_text(&text, &name)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextRecord {
    points: Vec<[f64; 3]>,
    bold_a: Vec<f64>,
    bold_b: Vec<f64>,
    fa: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<i32>,
}

pub fn save_bundle_text(bundle: &Bundle, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in bundle.records() {
        let rec = TextRecord {
            points: r.fiber.points().to_vec(),
            bold_a: r.bold.endpoint_a().to_vec(),
            bold_b: r.bold.endpoint_b().to_vec(),
            fa: r.fa.values().to_vec(),
            label: r.truth_label,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| format_err(KIND, e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_bundle_text(text: &str, name: &str) -> Result<Bundle> {
    let mut records = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let rec: TextRecord = serde_json::from_str(line).map_err(|e| Error::Record {
            record: i,
            message: e.to_string(),
        })?;
        check_finite(i, "coordinates", &rec.points.concat())?;
        let record = FiberRecord::new(
            Fiber::new(rec.points).map_err(record_err(i))?,
            BoldPair::new(rec.bold_a, rec.bold_b).map_err(record_err(i))?,
            FaProfile::new(rec.fa).map_err(record_err(i))?,
            rec.label,
        )
        .map_err(record_err(i))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(format_err(KIND, "bundle has no records"));
    }
    Bundle::new(name, records)
}

pub fn load_bundle_text(path: impl AsRef<Path>) -> Result<Bundle> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_bundle_text(&text, &name_from_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiberdata::{synth_bundle, SynthConfig};

    fn small() -> Bundle {
        let cfg = SynthConfig {
            n_fibers: 12,
            ..SynthConfig::default()
        };
        let mut b = synth_bundle(&cfg, 4).unwrap();
        b.name = "small".into();
        b
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.dmvf");
        let b = small();
        save_bundle(&b, &path).unwrap();
        assert_eq!(load_bundle(&path).unwrap(), b);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.jsonl");
        let b = small();
        save_bundle_text(&b, &path).unwrap();
        assert_eq!(load_bundle(&path).unwrap(), b);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dmvf");
        save_bundle(&small(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let err = parse_bundle(&bytes[..bytes.len() - 3], "t").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn empty_bundle_is_rejected() {
        let mut bytes = BUNDLE_MAGIC.to_vec();
        for v in [1u32, 0, 25, 600] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(0);
        assert!(parse_bundle(&bytes, "e").is_err());
    }

    #[test]
    fn non_finite_value_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.dmvf");
        save_bundle(&small(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let n_p = 25;
        let per_record = 4 * (3 * n_p + 2 * 600 + n_p) + 4;
        let offset = 21 + 2 * per_record;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        match parse_bundle(&bytes, "n") {
            Err(Error::Record { record, .. }) => assert_eq!(record, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(parse_bundle(b"XXXX\x01\x00\x00\x00", "x").is_err());
    }
}
