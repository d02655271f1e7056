//! `THRM1` binary container and per-frame CSV import.
//!
//! Layout (all little endian):
//!
//! ```text
//! "THRM1" | width:u32 | height:u32 | frame_count:u32 | fps:f32
//! repeated frame_count times: timestamp:f64 | width*height x f32 (row-major, deg C)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use super::{SequenceMeta, Source, ThermalFrame};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"THRM1";

/// Frame rate assumed for CSV directories when none is given.
pub const DEFAULT_CSV_FPS: f64 = 9.0;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub frames: usize,
    /// Non-finite temperatures replaced by their frame median.
    pub repaired: usize,
}

/// Fully materialized sequence.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub meta: SequenceMeta,
    pub frames: Vec<ThermalFrame>,
    pub report: LoadReport,
}

enum RawSource {
    Container {
        reader: Box<dyn Read>,
        width: usize,
        height: usize,
        remaining: usize,
    },
    Csv {
        files: std::vec::IntoIter<PathBuf>,
        fps: f64,
        index: usize,
    },
}

/// Streaming frame reader. Frames come out in timestamp order, sentinel-free.
pub struct FrameStream {
    source: RawSource,
    report: LoadReport,
    prev_timestamp: Option<f64>,
    dims: Option<(usize, usize)>,
    done: bool,
}

impl FrameStream {
    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    /// Read every remaining frame.
    pub fn collect_all(mut self, meta: SequenceMeta) -> Result<LoadedSequence> {
        let mut frames = Vec::new();
        for frame in self.by_ref() {
            frames.push(frame?);
        }
        Ok(LoadedSequence {
            meta,
            frames,
            report: self.report,
        })
    }

    fn next_raw(&mut self) -> Result<Option<(usize, usize, f64, Vec<f32>)>> {
        match &mut self.source {
            RawSource::Container {
                reader,
                width,
                height,
                remaining,
            } => {
                if *remaining == 0 {
                    let mut probe = [0u8; 1];
                    return match reader.read(&mut probe) {
                        Ok(0) => Ok(None),
                        Ok(_) => Err(Error::Format("trailing bytes after last frame".into())),
                        Err(e) => Err(Error::Format(format!("read error: {e}"))),
                    };
                }
                *remaining -= 1;
                let ts = f64::from_le_bytes(read_array::<8>(reader.as_mut())?);
                let n = *width * *height;
                let mut buf = vec![0u8; n * 4];
                read_exact(reader.as_mut(), &mut buf)?;
                let temps = buf
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                Ok(Some((*width, *height, ts, temps)))
            }
            RawSource::Csv { files, fps, index } => {
                let Some(path) = files.next() else {
                    return Ok(None);
                };
                let ts = *index as f64 / *fps;
                *index += 1;
                let (w, h, temps) = parse_csv_frame(&path)?;
                Ok(Some((w, h, ts, temps)))
            }
        }
    }
}

impl Iterator for FrameStream {
    type Item = Result<ThermalFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let raw = match self.next_raw() {
            Ok(Some(raw)) => raw,
            Ok(None) => {
                self.done = true;
                return None;
            }
            Err(e) => {
                self.done = true;
                return Some(Err(e));
            }
        };
        let (w, h, ts, mut temps) = raw;
        let frame_idx = self.report.frames;
        let checked = (|| {
            if let Some(dims) = self.dims {
                if dims != (w, h) {
                    return Err(Error::Format(format!(
                        "frame {frame_idx} is {w}x{h}, expected {}x{}",
                        dims.0, dims.1
                    )));
                }
            }
            if !ts.is_finite() {
                return Err(Error::Format(format!("frame {frame_idx} has a non-finite timestamp")));
            }
            if let Some(prev) = self.prev_timestamp {
                if ts <= prev {
                    return Err(Error::Format(format!(
                        "timestamps must strictly increase (frame {frame_idx}: {ts} after {prev})"
                    )));
                }
            }
            self.report.repaired += repair_non_finite(&mut temps, frame_idx)?;
            ThermalFrame::new(w, h, ts, temps).map_err(|e| Error::Format(e.to_string()))
        })();
        match checked {
            Ok(frame) => {
                self.dims = Some((w, h));
                self.prev_timestamp = Some(ts);
                self.report.frames += 1;
                Some(Ok(frame))
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn repair_non_finite(temps: &mut [f32], frame_idx: usize) -> Result<usize> {
    let bad = temps.iter().filter(|t| !t.is_finite()).count();
    if bad == 0 {
        return Ok(0);
    }
    let mut finite: Vec<f32> = temps.iter().copied().filter(|t| t.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Format(format!("frame {frame_idx} has no finite temperature")));
    }
    finite.sort_by(|a, b| a.total_cmp(b));
    let n = finite.len();
    let median = if n % 2 == 1 {
        finite[n / 2]
    } else {
        ((finite[n / 2 - 1] as f64 + finite[n / 2] as f64) / 2.0) as f32
    };
    for t in temps.iter_mut().filter(|t| !t.is_finite()) {
        *t = median;
    }
    Ok(bad)
}

fn read_exact(reader: &mut dyn Read, buf: &mut [u8]) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Format("truncated container".into())
        } else {
            Error::Format(format!("read error: {e}"))
        }
    })
}

fn read_array<const N: usize>(reader: &mut dyn Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(reader, &mut buf)?;
    Ok(buf)
}

/// Open a container from any reader; parses and validates the header eagerly.
pub fn read_sequence(reader: impl Read + 'static) -> Result<(SequenceMeta, FrameStream)> {
    let mut reader: Box<dyn Read> = Box::new(reader);
    let magic = read_array::<5>(reader.as_mut()).map_err(|_| Error::Format("missing header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic, expected THRM1".into()));
    }
    let width = u32::from_le_bytes(read_array::<4>(reader.as_mut())?) as usize;
    let height = u32::from_le_bytes(read_array::<4>(reader.as_mut())?) as usize;
    let frame_count = u32::from_le_bytes(read_array::<4>(reader.as_mut())?) as usize;
    let fps = f32::from_le_bytes(read_array::<4>(reader.as_mut())?) as f64;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("invalid frame size {width}x{height}")));
    }
    let meta = SequenceMeta::new(fps, Source::Recorded)
        .map_err(|_| Error::Format(format!("invalid header fps {fps}")))?;
    let stream = FrameStream {
        source: RawSource::Container {
            reader,
            width,
            height,
            remaining: frame_count,
        },
        report: LoadReport::default(),
        prev_timestamp: None,
        dims: Some((width, height)),
        done: false,
    };
    Ok((meta, stream))
}

/// Write frames to a container. All frames must share the first frame's size.
pub fn write_container<W: Write>(mut out: W, fps: f64, frames: &[ThermalFrame]) -> Result<()> {
    let (w, h) = frames
        .first()
        .map(|f| (f.width(), f.height()))
        .ok_or_else(|| Error::Argument("cannot write an empty sequence".into()))?;
    let to_io = |e: std::io::Error| Error::Format(format!("write error: {e}"));
    out.write_all(MAGIC).map_err(to_io)?;
    out.write_all(&(w as u32).to_le_bytes()).map_err(to_io)?;
    out.write_all(&(h as u32).to_le_bytes()).map_err(to_io)?;
    out.write_all(&(frames.len() as u32).to_le_bytes()).map_err(to_io)?;
    out.write_all(&(fps as f32).to_le_bytes()).map_err(to_io)?;
    for (i, f) in frames.iter().enumerate() {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::Argument(format!("frame {i} size differs from frame 0")));
        }
        out.write_all(&f.timestamp().to_le_bytes()).map_err(to_io)?;
        let mut buf = Vec::with_capacity(f.temps().len() * 4);
        for t in f.temps() {
            buf.extend_from_slice(&t.to_le_bytes());
        }
        out.write_all(&buf).map_err(to_io)?;
    }
    out.flush().map_err(to_io)
}

pub fn write_container_file(path: &Path, fps: f64, frames: &[ThermalFrame]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_container(BufWriter::new(file), fps, frames)
}

/// Import a directory of per-frame CSV files. Files are ordered by name and
/// timestamps are synthesized at `1 / nominal_fps`.
pub fn import_csv_dir(dir: &Path, nominal_fps: f64) -> Result<(SequenceMeta, FrameStream)> {
    let meta = SequenceMeta::new(nominal_fps, Source::Recorded)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .map(|e| e.eq_ignore_ascii_case("csv"))
                    .unwrap_or(false)
        })
        .collect();
    if files.is_empty() {
        return Err(Error::Format(format!("no .csv frames in {}", dir.display())));
    }
    files.sort();
    let stream = FrameStream {
        source: RawSource::Csv {
            files: files.into_iter(),
            fps: nominal_fps,
            index: 0,
        },
        report: LoadReport::default(),
        prev_timestamp: None,
        dims: None,
        done: false,
    };
    Ok((meta, stream))
}

fn parse_csv_frame(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut width = None;
    let mut temps = Vec::new();
    let mut height = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                if cell.is_empty() {
                    Ok(f32::NAN)
                } else {
                    cell.parse::<f32>().map_err(|_| {
                        Error::Format(format!(
                            "{}:{}: not a temperature: {cell:?}",
                            path.display(),
                            lineno + 1
                        ))
                    })
                }
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Format(format!(
                    "{}:{}: expected {w} columns, got {}",
                    path.display(),
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        temps.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?;
    Ok((width, height, temps))
}

/// Open a container file, or a directory of CSV frames at [`DEFAULT_CSV_FPS`].
pub fn load_sequence(path: &Path) -> Result<(SequenceMeta, FrameStream)> {
    load_sequence_with(path, DEFAULT_CSV_FPS)
}

pub fn load_sequence_with(path: &Path, csv_fps: f64) -> Result<(SequenceMeta, FrameStream)> {
    if path.is_dir() {
        return import_csv_dir(path, csv_fps);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sequence(BufReader::new(file))
}
