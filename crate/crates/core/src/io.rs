//! Dataset files (JSON Lines) and trace CSVs.
//!
//! A dataset is a header object on the first line followed by one object per
//! frame. Coordinates are written with 17 significant digits so a read after
//! a write reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FrameError, FrameStats};
use crate::sim::{BoxRegion, FrameRecord, Scenario};
use crate::tracker::{SessionStatus, StageTimings, TraceEntry};
use crate::types::{Dim, PointCloud};

pub const FORMAT_VERSION: &str = "dlotrack/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: String,
    pub dim: Dim,
    pub node_count: usize,
    pub units: String,
    /// Generating scenario, when the data is synthetic.
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
    pub frame_count: usize,
}

impl DatasetHeader {
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            dim: s.dim,
            node_count: s.node_count,
            units: "simulator length units".to_string(),
            scenario: Some(s.clone()),
            seed: Some(s.seed),
            frame_count: s.duration,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameLine {
    frame_index: usize,
    points: Vec<f64>,
    ground_truth: Vec<f64>,
    occluder: Option<BoxRegion>,
}

fn push_array(out: &mut String, values: impl IntoIterator<Item = f64>) {
    out.push('[');
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:.16e}").unwrap();
    }
    out.push(']');
}

fn frame_line(dim: Dim, rec: &FrameRecord) -> String {
    let mut out = format!("{{\"frame_index\":{},\"points\":", rec.frame_index);
    push_array(&mut out, rec.cloud.to_flat());
    out.push_str(",\"ground_truth\":");
    push_array(&mut out, dim.flatten(&rec.ground_truth));
    out.push_str(",\"occluder\":");
    match &rec.occluded_region {
        None => out.push_str("null"),
        Some(b) => {
            out.push_str("{\"min\":");
            push_array(&mut out, b.min);
            out.push_str(",\"max\":");
            push_array(&mut out, b.max);
            out.push('}');
        }
    }
    out.push('}');
    out
}

pub fn write_dataset_to<W: Write>(mut w: W, header: &DatasetHeader, frames: &[FrameRecord]) -> Result<()> {
    if header.frame_count != frames.len() {
        return Err(Error::Trace(format!(
            "header declares {} frames, got {}",
            header.frame_count,
            frames.len()
        )));
    }
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for (i, rec) in frames.iter().enumerate() {
        if rec.frame_index != i {
            return Err(Error::Trace(format!("frame {} stored at position {i}", rec.frame_index)));
        }
        if rec.cloud.dim() != header.dim {
            return Err(Error::DimensionMismatch {
                expected: header.dim.get(),
                found: rec.cloud.dim().get(),
            });
        }
        w.write_all(frame_line(header.dim, rec).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, header: &DatasetHeader, frames: &[FrameRecord]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_dataset_to(BufWriter::new(file), header, frames)
}

/// Streaming reader over the frames of a dataset.
pub struct DatasetReader<R> {
    header: DatasetHeader,
    lines: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
    next_frame: usize,
    done: bool,
}

impl<R: BufRead> DatasetReader<R> {
    /// Reads and checks the header. `path` only labels error messages.
    pub fn new(reader: R, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut lines = reader.lines();
        let bad = |msg: String| Error::Dataset {
            path: path.clone(),
            line: 1,
            msg,
        };
        let first = match lines.next() {
            Some(l) => l?,
            None => return Err(bad("empty file".into())),
        };
        let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| bad(format!("bad header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported version {:?}, expected {FORMAT_VERSION:?}",
                header.version
            )));
        }
        Ok(Self {
            header,
            lines,
            path,
            line: 1,
            next_frame: 0,
            done: false,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn error(&self, msg: String) -> Error {
        Error::Dataset {
            path: self.path.clone(),
            line: self.line,
            msg,
        }
    }

    fn last_valid(&self) -> String {
        match self.next_frame {
            0 => "no valid frame".to_string(),
            n => format!("last valid frame {}", n - 1),
        }
    }

    fn parse(&self, text: &str) -> Result<FrameRecord> {
        let rec: FrameLine = serde_json::from_str(text)
            .map_err(|e| self.error(format!("malformed frame record ({}): {e}", self.last_valid())))?;
        if rec.frame_index != self.next_frame {
            return Err(self.error(format!(
                "frame index {} where {} was expected",
                rec.frame_index, self.next_frame
            )));
        }
        let d = self.header.dim.get();
        let frame = rec.frame_index;
        if rec.points.len() % d != 0 {
            return Err(self.error(format!(
                "frame {frame}: {} point coordinates is not a multiple of D={d}",
                rec.points.len()
            )));
        }
        if rec.ground_truth.len() != d * self.header.node_count {
            return Err(self.error(format!(
                "frame {frame}: ground truth has {} coordinates, expected {} (M={}, D={d})",
                rec.ground_truth.len(),
                d * self.header.node_count,
                self.header.node_count
            )));
        }
        let cloud = PointCloud::from_flat(self.header.dim, &rec.points).map_err(|e| self.error(format!("frame {frame}: {e}")))?;
        let ground_truth = self
            .header
            .dim
            .points_from_flat(&rec.ground_truth)
            .map_err(|e| self.error(format!("frame {frame}: {e}")))?;
        Ok(FrameRecord {
            frame_index: frame,
            cloud,
            ground_truth,
            occluded_region: rec.occluder,
        })
    }
}

impl<R: BufRead> Iterator for DatasetReader<R> {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let text = match self.lines.next() {
            Some(Ok(t)) => t,
            Some(Err(e)) => {
                self.done = true;
                return Some(Err(e.into()));
            }
            None => {
                self.done = true;
                if self.next_frame < self.header.frame_count {
                    self.line += 1;
                    return Some(Err(self.error(format!(
                        "truncated: header declares {} frames, {}",
                        self.header.frame_count,
                        self.last_valid()
                    ))));
                }
                return None;
            }
        };
        self.line += 1;
        if self.next_frame >= self.header.frame_count {
            self.done = true;
            if text.trim().is_empty() {
                return None;
            }
            return Some(Err(self.error(format!(
                "extra record after the {} declared frames",
                self.header.frame_count
            ))));
        }
        let out = self.parse(&text);
        match out {
            Ok(_) => self.next_frame += 1,
            Err(_) => self.done = true,
        }
        Some(out)
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    DatasetReader::new(BufReader::new(file), path)
}

/// Reads a whole dataset into memory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<FrameRecord>)> {
    let reader = read_dataset(path)?;
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, frames))
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub frame: usize,
    pub status: SessionStatus,
    pub visible: usize,
    pub em_iterations: usize,
    pub unsupported_nodes: usize,
    pub error: Option<FrameError>,
    pub timings: Option<StageTimings>,
    /// Flattened chain coordinates, `D` per node.
    pub chain: Vec<f64>,
}

impl TraceRow {
    pub fn stats(&self) -> FrameStats {
        FrameStats {
            frame: self.frame,
            error: self.error.map(|e| e.symmetric),
            timings: self.timings,
        }
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];
const FIXED_COLUMNS: usize = 13;

fn trace_header(dim: Dim, nodes: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "frame",
        "status",
        "visible",
        "em_iters",
        "unsupported",
        "forward",
        "backward",
        "symmetric",
        "t_visibility",
        "t_em",
        "t_upe",
        "t_resample",
        "t_total",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for m in 0..nodes {
        for axis in &AXES[..dim.get()] {
            cols.push(format!("n{m}_{axis}"));
        }
    }
    cols
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes trace entries as CSV. With `timing == false` the timing columns
/// are left empty so the output depends only on the inputs.
pub fn write_trace_to<W: Write>(w: W, entries: &[TraceEntry], timing: bool) -> Result<()> {
    let first = entries.first().ok_or(Error::EmptyTrace)?;
    let dim = first.chain.dim();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_header(dim, first.chain.len()))?;
    for e in entries {
        let t = timing.then_some(e.timings);
        let mut row = vec![
            e.frame.to_string(),
            e.status.as_str().to_string(),
            e.mask.visible_count().to_string(),
            e.em_iterations.to_string(),
            e.unsupported_nodes.to_string(),
            opt(e.error.map(|x| x.forward)),
            opt(e.error.map(|x| x.backward)),
            opt(e.error.map(|x| x.symmetric)),
            opt(t.map(|t| t.visibility)),
            opt(t.map(|t| t.em)),
            opt(t.map(|t| t.upe)),
            opt(t.map(|t| t.resample)),
            opt(t.map(|t| t.total())),
        ];
        row.extend(e.chain.to_flat().iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace(path: impl AsRef<Path>, entries: &[TraceEntry], timing: bool) -> Result<()> {
    write_trace_to(BufWriter::new(File::create(path)?), entries, timing)
}

fn parse_trace_row(rec: &csv::StringRecord, width: usize) -> std::result::Result<TraceRow, String> {
    if rec.len() != width {
        return Err(format!("{} fields, expected {width}", rec.len()));
    }
    let int = |i: usize| rec[i].parse::<usize>().map_err(|e| format!("column {}: {e}", i + 1));
    let float = |i: usize| -> std::result::Result<Option<f64>, String> {
        match &rec[i] {
            "" => Ok(None),
            s => s.parse::<f64>().map(Some).map_err(|e| format!("column {}: {e}", i + 1)),
        }
    };
    let status = SessionStatus::parse(&rec[1]).ok_or_else(|| format!("unknown status {:?}", &rec[1]))?;
    let error = match (float(5)?, float(6)?, float(7)?) {
        (Some(forward), Some(backward), Some(symmetric)) => Some(FrameError {
            forward,
            backward,
            symmetric,
        }),
        (None, None, None) => None,
        _ => return Err("partial error columns".into()),
    };
    let timings = match (float(8)?, float(9)?, float(10)?, float(11)?) {
        (Some(visibility), Some(em), Some(upe), Some(resample)) => Some(StageTimings {
            visibility,
            em,
            upe,
            resample,
        }),
        (None, None, None, None) => None,
        _ => return Err("partial timing columns".into()),
    };
    let chain = (FIXED_COLUMNS..width)
        .map(|i| float(i)?.ok_or_else(|| format!("column {}: empty coordinate", i + 1)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TraceRow {
        frame: int(0)?,
        status,
        visible: int(2)?,
        em_iterations: int(3)?,
        unsupported_nodes: int(4)?,
        error,
        timings,
        chain,
    })
}

/// Reads a trace CSV, returning the chain dimension and the rows.
pub fn read_trace(path: impl AsRef<Path>) -> Result<(Dim, Vec<TraceRow>)> {
    let path = path.as_ref();
    let bad = |line: usize, msg: String| Error::Dataset {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let coords = header.len().saturating_sub(FIXED_COLUMNS);
    let dim = match header.get(FIXED_COLUMNS + 2) {
        Some("n0_z") => Dim::Three,
        _ => Dim::Two,
    };
    if header.len() < FIXED_COLUMNS || &header[0] != "frame" || coords % dim.get() != 0 {
        return Err(bad(1, "not a trace CSV".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = parse_trace_row(&rec, header.len()).map_err(|m| bad(i + 2, m))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok((dim, rows))
}
