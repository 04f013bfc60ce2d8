use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scan::{RawPoint, ScanFrame};

pub const SCAN_MAGIC: &[u8; 4] = b"SSCN";
pub const SCAN_VERSION: u32 = 1;

/// Appends one frame in the portable binary layout.
pub fn write_scan_frame<W: Write>(out: &mut W, frame: &ScanFrame) -> Result<()> {
    let io = |e| Error::io("<scan stream>", e);
    let mut buf = Vec::with_capacity(20 + frame.points.len() * 14);
    buf.extend_from_slice(SCAN_MAGIC);
    buf.extend_from_slice(&SCAN_VERSION.to_le_bytes());
    buf.extend_from_slice(&frame.timestamp.to_le_bytes());
    buf.extend_from_slice(&(frame.points.len() as u32).to_le_bytes());
    for p in &frame.points {
        let label = u16::try_from(p.label)
            .map_err(|_| Error::format("scan stream", format!("label {} does not fit in 16 bits", p.label)))?;
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&label.to_le_bytes());
    }
    out.write_all(&buf).map_err(io)
}

pub fn write_scan_stream<'a>(path: &Path, frames: impl IntoIterator<Item = &'a ScanFrame>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for f in frames {
        write_scan_frame(&mut out, f).map_err(|e| relabel(e, path))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Streaming reader over concatenated portable frames. Holds at most one
/// frame in memory.
pub struct PortableScanReader<R> {
    input: R,
    context: String,
    index: usize,
    done: bool,
}

impl<R: Read> PortableScanReader<R> {
    pub fn new(input: R, context: impl Into<String>) -> Self {
        PortableScanReader {
            input,
            context: context.into(),
            index: 0,
            done: false,
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::format(format!("{} frame {}", self.context, self.index), msg.to_string())
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.input.read_exact(buf).map_err(|e| {
            if e.kind() == ErrorKind::UnexpectedEof {
                self.err("truncated frame")
            } else {
                self.err(e)
            }
        })
    }

    fn next_frame(&mut self) -> Result<Option<ScanFrame>> {
        let mut magic = [0u8; 4];
        // a clean end of stream may only fall on a frame boundary
        let mut got = 0;
        while got < 4 {
            match self.input.read(&mut magic[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(self.err("truncated frame")),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(self.err(e)),
            }
        }
        if &magic != SCAN_MAGIC {
            return Err(self.err("bad magic"));
        }
        let mut head = [0u8; 16];
        self.read_exact(&mut head)?;
        let version = u32::from_le_bytes(head[0..4].try_into().unwrap());
        if version != SCAN_VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        let timestamp = f64::from_le_bytes(head[4..12].try_into().unwrap());
        let n = u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize;
        let mut body = vec![0u8; n * 14];
        self.read_exact(&mut body)?;
        let points = body
            .chunks_exact(14)
            .map(|c| RawPoint {
                x: f32::from_le_bytes(c[0..4].try_into().unwrap()),
                y: f32::from_le_bytes(c[4..8].try_into().unwrap()),
                z: f32::from_le_bytes(c[8..12].try_into().unwrap()),
                label: u16::from_le_bytes(c[12..14].try_into().unwrap()) as u32,
            })
            .collect();
        Ok(Some(ScanFrame { timestamp, points }))
    }
}

impl<R: Read> Iterator for PortableScanReader<R> {
    type Item = Result<ScanFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let r = self.next_frame();
        self.index += 1;
        match r {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn open_portable_scans(path: &Path) -> Result<PortableScanReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(PortableScanReader::new(BufReader::new(file), path.display().to_string()))
}

/// SemanticKITTI sequence layout: `velodyne/NNNNNN.bin` with `(x, y, z,
/// intensity)` f32 quadruples and `labels/NNNNNN.label` with one u32 per
/// point, the low 16 bits being the semantic label. Frame `i` is stamped
/// `i / rate_hz`.
pub struct KittiScanReader {
    frames: Vec<(PathBuf, PathBuf)>,
    rate_hz: f64,
    index: usize,
}

impl KittiScanReader {
    pub fn open(dir: &Path, rate_hz: f64) -> Result<Self> {
        let velodyne = dir.join("velodyne");
        let labels = dir.join("labels");
        let entries = std::fs::read_dir(&velodyne).map_err(|e| Error::io(&velodyne, e))?;
        let mut bins: Vec<PathBuf> = Vec::new();
        for e in entries {
            let p = e.map_err(|e| Error::io(&velodyne, e))?.path();
            if p.extension().is_some_and(|x| x == "bin") {
                bins.push(p);
            }
        }
        bins.sort();
        let frames = bins
            .into_iter()
            .map(|b| {
                let stem = b.file_stem().unwrap().to_owned();
                let l = labels.join(stem).with_extension("label");
                (b, l)
            })
            .collect();
        Ok(KittiScanReader { frames, rate_hz, index: 0 })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    fn read_frame(&self, i: usize) -> Result<ScanFrame> {
        let (bin, label) = &self.frames[i];
        let xyz = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let lab = std::fs::read(label).map_err(|e| Error::io(label, e))?;
        let ctx = || format!("frame {i} ({})", bin.display());
        if xyz.len() % 16 != 0 || lab.len() % 4 != 0 {
            return Err(Error::format(ctx(), "truncated point or label file"));
        }
        if xyz.len() / 16 != lab.len() / 4 {
            return Err(Error::format(
                ctx(),
                format!("{} points but {} labels", xyz.len() / 16, lab.len() / 4),
            ));
        }
        let f = |c: &[u8]| f32::from_le_bytes(c.try_into().unwrap());
        let points = xyz
            .chunks_exact(16)
            .zip(lab.chunks_exact(4))
            .map(|(p, l)| RawPoint {
                x: f(&p[0..4]),
                y: f(&p[4..8]),
                z: f(&p[8..12]),
                label: u32::from_le_bytes(l.try_into().unwrap()) & 0xFFFF,
            })
            .collect();
        Ok(ScanFrame {
            timestamp: i as f64 / self.rate_hz,
            points,
        })
    }
}

impl Iterator for KittiScanReader {
    type Item = Result<ScanFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.index >= self.frames.len() {
            return None;
        }
        let r = self.read_frame(self.index);
        self.index += 1;
        Some(r)
    }
}
