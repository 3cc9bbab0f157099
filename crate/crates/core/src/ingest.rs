//! Raw inputs: GV8 videos, FV32 feature files, FL32 flow files, manifests,
//! frame-level ground truth, and the temporal segment split.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamicity::FlowField;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

const GV8_MAGIC: &[u8; 4] = b"GV8\0";
const FV32_MAGIC: &[u8; 4] = b"FV32";
const FL32_MAGIC: &[u8; 4] = b"FL32";

/// Dataset-wide segment identifier (ordinal over all segments of all videos).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub u32);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An 8-bit grayscale video; every frame is `height` rows of `width` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayVideo {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<u8>>,
}

impl GrayVideo {
    pub fn new(width: usize, height: usize, frames: Vec<Vec<u8>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("video has no frames"));
        }
        let size = width * height;
        if size == 0 {
            return Err(Error::InvalidArgument("zero-sized frame".into()));
        }
        if let Some(bad) = frames.iter().find(|f| f.len() != size) {
            return Err(Error::DimensionMismatch {
                expected: size,
                got: bad.len(),
            });
        }
        Ok(GrayVideo {
            width,
            height,
            frames,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn segment_frames(&self, view: &SegmentView) -> &[Vec<u8>] {
        &self.frames[view.start..view.end]
    }
}

/// A contiguous half-open run `[start, end)` of frames of one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentView {
    pub video_id: u32,
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl SegmentView {
    pub fn frame_count(&self) -> usize {
        self.end - self.start
    }

    /// Midpoint of the frame range, used as the spline knot position.
    pub fn center(&self) -> f64 {
        (self.start + self.end - 1) as f64 / 2.0
    }
}

/// Splits `frame_count` frames into `count` near-equal segments. The first
/// `frame_count % count` segments get one extra frame.
pub fn split_frame_range(video_id: u32, frame_count: usize, count: usize) -> Result<Vec<SegmentView>> {
    if count == 0 {
        return Err(Error::InvalidArgument("segment count must be at least 1".into()));
    }
    if frame_count < 2 * count {
        return Err(Error::TooFewFrames {
            frames: frame_count,
            segments: count,
        });
    }
    let base = frame_count / count;
    let extra = frame_count % count;
    let mut start = 0;
    Ok((0..count)
        .map(|index| {
            let len = base + usize::from(index < extra);
            let view = SegmentView {
                video_id,
                index,
                start,
                end: start + len,
            };
            start += len;
            view
        })
        .collect())
}

pub fn split_segments(video_id: u32, video: &GrayVideo, count: usize) -> Result<Vec<SegmentView>> {
    split_frame_range(video_id, video.frame_count(), count)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take_header(4)?;
        if got != magic {
            return Err(Error::MalformedHeader(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    fn take_header(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::MalformedHeader(format!(
                "file ends after {} bytes",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take_header(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take_header(1)?[0])
    }

    /// Checks that `n` payload bytes remain.
    pub(crate) fn require(&self, n: usize) -> Result<()> {
        let found = self.bytes.len() - self.pos;
        if found < n {
            return Err(Error::TruncatedPayload { expected: n, found });
        }
        Ok(())
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Reads `n` f32 values, checking each is finite. `base` offsets the
    /// reported position of a non-finite value.
    pub(crate) fn f32s(&mut self, n: usize, base: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n * 4)?;
        raw.chunks_exact(4)
            .enumerate()
            .map(|(i, c)| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(Error::NonFinite(base + i))
                }
            })
            .collect()
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::MalformedHeader(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    for (i, &v) in values.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(i));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

pub fn decode_gv8(bytes: &[u8]) -> Result<GrayVideo> {
    let mut r = Reader::new(bytes);
    r.magic(GV8_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let count = r.u32()? as usize;
    if width == 0 || height == 0 || count == 0 {
        return Err(Error::MalformedHeader(format!(
            "degenerate dimensions {width}x{height}x{count}"
        )));
    }
    let size = width * height;
    r.require(size * count)?;
    let frames = (0..count)
        .map(|_| r.bytes(size).map(<[u8]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    GrayVideo::new(width, height, frames)
}

pub fn encode_gv8(video: &GrayVideo) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + video.width * video.height * video.frame_count());
    out.extend_from_slice(GV8_MAGIC);
    push_u32(&mut out, video.width)?;
    push_u32(&mut out, video.height)?;
    push_u32(&mut out, video.frame_count())?;
    for f in &video.frames {
        out.extend_from_slice(f);
    }
    Ok(out)
}

pub fn read_gv8(path: impl AsRef<Path>) -> Result<GrayVideo> {
    decode_gv8(&read_file(path.as_ref())?)
}

pub fn write_gv8(path: impl AsRef<Path>, video: &GrayVideo) -> Result<()> {
    write_file(path.as_ref(), &encode_gv8(video)?)
}

/// Decodes an FV32 buffer. Segment ids are the ordinal position in the file.
pub fn decode_fv32(bytes: &[u8]) -> Result<Vec<FeatureVector>> {
    let mut r = Reader::new(bytes);
    r.magic(FV32_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    r.require(count * dim * 4)?;
    let vectors = (0..count)
        .map(|i| {
            Ok(FeatureVector::new(
                SegmentId(i as u32),
                r.f32s(dim, i * dim)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(vectors)
}

pub fn encode_fv32(vectors: &[FeatureVector]) -> Result<Vec<u8>> {
    let dim = vectors.first().map_or(0, FeatureVector::dim);
    let mut out = Vec::with_capacity(12 + vectors.len() * dim * 4);
    out.extend_from_slice(FV32_MAGIC);
    push_u32(&mut out, vectors.len())?;
    push_u32(&mut out, dim)?;
    for v in vectors {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        push_f32s(&mut out, &v.values)?;
    }
    Ok(out)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    decode_fv32(&read_file(path.as_ref())?)
}

pub fn store_features(path: impl AsRef<Path>, vectors: &[FeatureVector]) -> Result<()> {
    write_file(path.as_ref(), &encode_fv32(vectors)?)
}

pub fn decode_fl32(bytes: &[u8]) -> Result<Vec<FlowField>> {
    let mut r = Reader::new(bytes);
    r.magic(FL32_MAGIC)?;
    let pairs = r.u32()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let plane = height * width;
    r.require(pairs * plane * 2 * 4)?;
    let fields = (0..pairs)
        .map(|i| {
            let base = i * plane * 2;
            let u = r.f32s(plane, base)?;
            let v = r.f32s(plane, base + plane)?;
            FlowField::new(width, height, u, v)
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(fields)
}

pub fn encode_fl32(fields: &[FlowField]) -> Result<Vec<u8>> {
    let (height, width) = fields.first().map_or((0, 0), |f| (f.height, f.width));
    let mut out = Vec::with_capacity(16 + fields.len() * height * width * 8);
    out.extend_from_slice(FL32_MAGIC);
    push_u32(&mut out, fields.len())?;
    push_u32(&mut out, height)?;
    push_u32(&mut out, width)?;
    for f in fields {
        if f.height != height || f.width != width {
            return Err(Error::DimensionMismatch {
                expected: height * width,
                got: f.height * f.width,
            });
        }
        push_f32s(&mut out, &f.u)?;
        push_f32s(&mut out, &f.v)?;
    }
    Ok(out)
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<Vec<FlowField>> {
    decode_fl32(&read_file(path.as_ref())?)
}

pub fn store_flow(path: impl AsRef<Path>, fields: &[FlowField]) -> Result<()> {
    write_file(path.as_ref(), &encode_fl32(fields)?)
}

/// Reads frame-level ground truth: one `0` or `1` per non-empty line.
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| match l {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::InvalidArgument(format!(
                "{}: line {} is {other:?}, expected 0 or 1",
                path.display(),
                i + 1
            ))),
        })
        .collect()
}

pub fn write_ground_truth(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for &l in labels {
        text.push(if l == 0 { '0' } else { '1' });
        text.push('\n');
    }
    write_file(path.as_ref(), text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
}

/// Dataset listing. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub segment_count_per_video: usize,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.segment_count_per_video == 0 {
            return Err(Error::InvalidArgument("segment_count_per_video must be >= 1".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut manifest.entries {
            e.video = resolve(base, &e.video)?;
            for p in [&mut e.features, &mut e.flow, &mut e.ground_truth].into_iter().flatten() {
                *p = resolve(base, p)?;
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_file(path.as_ref(), text.as_bytes())
    }
}

fn resolve(base: &Path, p: &Path) -> Result<PathBuf> {
    let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    if !full.exists() {
        return Err(Error::Missing {
            what: "manifest path",
            path: full,
        });
    }
    Ok(full)
}
