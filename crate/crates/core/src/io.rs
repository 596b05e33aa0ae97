//! Line-delimited dataset files.
//!
//! The first line is a header object; every following line is one epoch:
//!
//! ```text
//! {"format":"satweight-dataset","version":1,"seed":42,"sessions":[{"id":0,"profile":"urban_canyon","split":"train"}]}
//! {"session_id":0,"t":0.0e0,"truth":{"x":..,"y":..,"z":..},"measurements":[{"const":"GPS","sv":3,"band":"L1","pr_m":..,"cn0_dbhz":..,"lock_s":..,"sat_xyz_m":[..,..,..]}]}
//! ```
//!
//! Floats are written with 17 significant digits in exponent form, keys in a
//! fixed order, so equal datasets serialize to identical bytes and every value
//! survives a round trip exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::EcefPosition;
use crate::model::{Band, ConstellationId, Epoch, PseudorangeMeasurement};
use crate::sim::Profile;

pub const DATASET_FORMAT: &str = "satweight-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionInfo {
    pub id: u32,
    pub profile: Profile,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub sessions: Vec<SessionInfo>,
}

impl DatasetHeader {
    pub fn new(seed: u64, sessions: Vec<SessionInfo>) -> Self {
        Self {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            seed,
            sessions,
        }
    }

    pub fn session(&self, id: u32) -> Option<&SessionInfo> {
        self.sessions.iter().find(|s| s.id == id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub session_id: u32,
    pub epoch: Epoch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<EpochRecord>,
}

impl Dataset {
    pub fn split_of(&self, session_id: u32) -> Option<Split> {
        self.header.session(session_id).map(|s| s.split)
    }

    /// Session ids assigned to `split`, in header order.
    pub fn sessions_in(&self, split: Split) -> Vec<u32> {
        self.header.sessions.iter().filter(|s| s.split == split).map(|s| s.id).collect()
    }

    /// Records grouped by session, sessions in header order, epochs in file order.
    pub fn by_session(&self) -> Vec<(SessionInfo, Vec<&EpochRecord>)> {
        self.header
            .sessions
            .iter()
            .map(|s| (s.clone(), self.records.iter().filter(|r| r.session_id == s.id).collect()))
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthLine {
    x: f64,
    y: f64,
    z: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementLine {
    #[serde(rename = "const")]
    constellation: ConstellationId,
    sv: u16,
    band: Band,
    pr_m: f64,
    cn0_dbhz: f64,
    lock_s: f64,
    sat_xyz_m: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochLine {
    session_id: u32,
    t: f64,
    #[serde(default)]
    truth: Option<TruthLine>,
    measurements: Vec<MeasurementLine>,
}

fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

/// Canonical single-line encoding of one epoch record (no trailing newline).
pub fn encode_record(r: &EpochRecord) -> String {
    let mut s = String::with_capacity(160 + 220 * r.epoch.len());
    write!(s, "{{\"session_id\":{},\"t\":", r.session_id).unwrap();
    num(&mut s, r.epoch.time);
    if let Some(p) = r.epoch.truth {
        s.push_str(",\"truth\":{\"x\":");
        num(&mut s, p.x);
        s.push_str(",\"y\":");
        num(&mut s, p.y);
        s.push_str(",\"z\":");
        num(&mut s, p.z);
        s.push('}');
    }
    s.push_str(",\"measurements\":[");
    for (k, m) in r.epoch.measurements.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        write!(
            s,
            "{{\"const\":\"{}\",\"sv\":{},\"band\":\"{}\",\"pr_m\":",
            m.constellation.as_str(),
            m.sv_id,
            m.band.as_str()
        )
        .unwrap();
        num(&mut s, m.pseudorange);
        s.push_str(",\"cn0_dbhz\":");
        num(&mut s, m.cn0);
        s.push_str(",\"lock_s\":");
        num(&mut s, m.lock_time);
        s.push_str(",\"sat_xyz_m\":[");
        num(&mut s, m.sat_pos.x);
        s.push(',');
        num(&mut s, m.sat_pos.y);
        s.push(',');
        num(&mut s, m.sat_pos.z);
        s.push_str("]}");
    }
    s.push_str("]}");
    s
}

fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn json_error(line: usize, e: serde_json::Error) -> Error {
    parse_error(line, e.column().max(1), e.to_string())
}

/// Parses one epoch line; `line` is the 1-based file line used in errors.
pub fn decode_record(text: &str, line: usize) -> Result<EpochRecord> {
    let raw: EpochLine = serde_json::from_str(text).map_err(|e| json_error(line, e))?;
    let measurements = raw
        .measurements
        .into_iter()
        .map(|m| PseudorangeMeasurement {
            constellation: m.constellation,
            sv_id: m.sv,
            band: m.band,
            pseudorange: m.pr_m,
            sat_pos: EcefPosition::new(m.sat_xyz_m[0], m.sat_xyz_m[1], m.sat_xyz_m[2]),
            cn0: m.cn0_dbhz,
            lock_time: m.lock_s,
        })
        .collect();
    let truth = raw.truth.map(|t| EcefPosition::new(t.x, t.y, t.z));
    let epoch = Epoch::new(raw.t, measurements, truth).map_err(|e| match e {
        Error::DuplicateMeasurement(key) => parse_error(
            line,
            1,
            format!("duplicate measurement {key}: (constellation, sv, band) must be unique within an epoch"),
        ),
        other => parse_error(line, 1, other.to_string()),
    })?;
    Ok(EpochRecord {
        session_id: raw.session_id,
        epoch,
    })
}

fn check_header(header: &DatasetHeader) -> Result<()> {
    if header.format != DATASET_FORMAT {
        return Err(parse_error(1, 1, format!("not a dataset file (format `{}`)", header.format)));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: DATASET_VERSION,
        });
    }
    let mut ids: Vec<u32> = header.sessions.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(parse_error(1, 1, "session ids must be unique"));
    }
    Ok(())
}

/// Streaming reader: holds the header and yields one epoch at a time.
pub struct DatasetReader<R> {
    header: DatasetHeader,
    lines: std::io::Lines<R>,
    line: usize,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: BufRead> DatasetReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let first = lines.next().ok_or_else(|| parse_error(1, 1, "missing header line"))??;
        let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| json_error(1, e))?;
        check_header(&header)?;
        Ok(Self { header, lines, line: 1 })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<EpochRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let rec = decode_record(&text, self.line).and_then(|r| {
                if self.header.session(r.session_id).is_none() {
                    Err(parse_error(self.line, 1, format!("session {} is not declared in the header", r.session_id)))
                } else {
                    Ok(r)
                }
            });
            return Some(rec);
        }
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header().clone();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok(Dataset { header, records })
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &dataset.header)?;
    w.write_all(b"\n")?;
    for r in &dataset.records {
        w.write_all(encode_record(r).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_campaign, CampaignConfig};

    fn tiny() -> Dataset {
        let cfg = CampaignConfig {
            sessions_per_profile: 3,
            duration: 2.0,
            ..CampaignConfig::default()
        };
        generate_campaign(&cfg, 11).unwrap().0
    }

    #[test]
    fn round_trip_and_byte_identity() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        write_dataset(&ds, &a).unwrap();
        write_dataset(&ds, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(read_dataset(&a).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let ds = Dataset {
            header: DatasetHeader::new(5, vec![]),
            records: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write_dataset(&ds, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert_eq!(read_dataset(&p).unwrap(), ds);
    }

    #[test]
    fn truncated_line_names_the_line() {
        let ds = tiny();
        let mut text = serde_json::to_string(&ds.header).unwrap();
        text.push('\n');
        text.push_str(&encode_record(&ds.records[0]));
        text.push('\n');
        let second = encode_record(&ds.records[1]);
        text.push_str(&second[..second.len() / 2]);
        text.push('\n');
        let r: Result<Vec<_>> = DatasetReader::new(text.as_bytes()).unwrap().collect();
        assert!(matches!(r, Err(Error::Parse { line: 3, .. })), "{r:?}");
    }

    #[test]
    fn duplicate_measurement_is_a_parse_error() {
        let ds = tiny();
        let line = encode_record(&ds.records[0]);
        let start = line.find("[{").unwrap() + 1;
        let end = line[start..].find("]}").unwrap() + start + 2;
        let first = &line[start..end];
        let doubled = line.replacen(first, &format!("{first},{first}"), 1);
        match decode_record(&doubled, 7) {
            Err(Error::Parse { line: 7, message, .. }) => assert!(message.contains("unique")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected_with_position() {
        let ds = tiny();
        let line = encode_record(&ds.records[0]).replacen("\"t\":", "\"bogus\":1,\"t\":", 1);
        match decode_record(&line, 4) {
            Err(Error::Parse { line: 4, column, message }) => {
                assert!(column > 1);
                assert!(message.contains("bogus"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let mut h = DatasetHeader::new(1, vec![]);
        h.version = 9;
        let text = serde_json::to_string(&h).unwrap();
        assert!(matches!(
            DatasetReader::new(text.as_bytes()).map(|_| ()),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }
}
