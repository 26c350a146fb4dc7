//! Dyadic sequence collections: the in-memory types, the `DYADSET1`
//! container format, and seeded train/validation/test splitting.
//!
//! Container layout (all integers and floats little-endian):
//! - magic `DYADSET1` (8 bytes)
//! - u32 audio dim `a`, u32 pose dim `p`, f64 frame rate, u32 sequence count
//! - per sequence: u32 T, u32 label count, then four f64 payloads in order
//!   avatar audio [a,T], avatar pose [p,T], human audio [a,T], human pose
//!   [p,T] (row-major), then label records: u8 kind, u32 start, u32 end,
//!   u32 response onset, u8 group code.

use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::JointGroup;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: &[u8; 8] = b"DYADSET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    HeadNodMirror,
    PoseSwitch,
    Interruption,
}

pub const ALL_EVENT_KINDS: [EventKind; 3] =
    [EventKind::HeadNodMirror, EventKind::PoseSwitch, EventKind::Interruption];

impl EventKind {
    pub fn label(self) -> &'static str {
        match self {
            EventKind::HeadNodMirror => "head_nod_mirror",
            EventKind::PoseSwitch => "pose_switch",
            EventKind::Interruption => "interruption",
        }
    }

    pub fn parse(text: &str) -> Result<EventKind> {
        ALL_EVENT_KINDS
            .iter()
            .copied()
            .find(|k| k.label() == text)
            .ok_or_else(|| Error::Config(format!("unknown event kind {text:?}")))
    }

    pub fn code(self) -> u8 {
        match self {
            EventKind::HeadNodMirror => 0,
            EventKind::PoseSwitch => 1,
            EventKind::Interruption => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<EventKind> {
        ALL_EVENT_KINDS.iter().copied().find(|k| k.code() == code)
    }
}

/// One labeled interpersonal event: the human acts over [start, end), the
/// avatar's response begins at `response_onset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventLabel {
    pub kind: EventKind,
    pub start: usize,
    pub end: usize,
    pub response_onset: usize,
    pub group: JointGroup,
}

/// One conversation: four aligned 90 Hz streams plus event labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DyadicSequence {
    pub avatar_audio: Tensor,
    pub avatar_pose: Tensor,
    pub human_audio: Tensor,
    pub human_pose: Tensor,
    pub labels: Vec<EventLabel>,
}

impl DyadicSequence {
    pub fn frames(&self) -> usize {
        self.avatar_audio.cols()
    }

    pub fn validate(&self, audio_dim: usize, pose_dim: usize) -> Result<()> {
        let t = self.frames();
        let checks = [
            ("avatar audio", &self.avatar_audio, audio_dim),
            ("avatar pose", &self.avatar_pose, pose_dim),
            ("human audio", &self.human_audio, audio_dim),
            ("human pose", &self.human_pose, pose_dim),
        ];
        for (what, tensor, rows) in checks {
            if tensor.shape() != [rows, t] {
                return Err(Error::Data(format!(
                    "{what} stream must be [{rows}, {t}], got {:?}",
                    tensor.shape()
                )));
            }
            if !tensor.all_finite() {
                return Err(Error::Data(format!("{what} stream contains non-finite values")));
            }
        }
        for label in &self.labels {
            if label.start >= label.end || label.end > t || label.response_onset >= t {
                return Err(Error::Data(format!(
                    "label [{}, {}) onset {} outside sequence of {t} frames",
                    label.start, label.end, label.response_onset
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DyadicDataset {
    pub audio_dim: usize,
    pub pose_dim: usize,
    pub frame_rate: f64,
    pub sequences: Vec<DyadicSequence>,
}

impl DyadicDataset {
    pub fn validate(&self) -> Result<()> {
        for (i, seq) in self.sequences.iter().enumerate() {
            seq.validate(self.audio_dim, self.pose_dim)
                .map_err(|e| Error::Data(format!("sequence {i}: {e}")))?;
        }
        Ok(())
    }
}

/// Index-based partition of a dataset's sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then contiguous partition sized by largest remainder.
/// Every part gets at least one sequence.
pub fn make_split(count: usize, ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().any(|&r| r <= 0.0) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
    }
    if count < 3 {
        return Err(Error::Data(format!("need at least 3 sequences to split, got {count}")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = rng::chacha(rng::derive_seed(seed, 0x5111));
    for i in (1..count).rev() {
        let j = (rng::uniform(&mut rng) * (i + 1) as f64) as usize;
        order.swap(i, j.min(i));
    }
    // largest-remainder apportionment
    let mut sizes = [0usize; 3];
    let mut rema: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0;
    for (i, &r) in ratios.iter().enumerate() {
        let exact = r * count as f64;
        sizes[i] = exact.floor() as usize;
        assigned += sizes[i];
        rema.push((exact - exact.floor(), i));
    }
    rema.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..count - assigned {
        sizes[rema[k % 3].1] += 1;
    }
    // every part non-empty: steal from the largest
    for i in 0..3 {
        while sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    let train = order[..sizes[0]].to_vec();
    let validation = order[sizes[0]..sizes[0] + sizes[1]].to_vec();
    let test = order[sizes[0] + sizes[1]..].to_vec();
    Ok(DatasetSplit { train, validation, test })
}

pub(crate) struct CountedReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountedReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        CountedReader { inner, offset: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.offset
    }

    pub(crate) fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Format {
                offset: self.offset,
                detail: format!("unexpected end of file while reading {what}"),
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, what)?;
        Ok(b[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.fill(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    pub(crate) fn f64_block(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.fill(&mut bytes, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Serialize a dataset; bit-exact roundtrip with `read_dataset`.
pub fn write_dataset(dataset: &DyadicDataset, w: &mut impl Write) -> Result<()> {
    dataset.validate()?;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(dataset.audio_dim as u32).to_le_bytes())?;
    w.write_all(&(dataset.pose_dim as u32).to_le_bytes())?;
    w.write_all(&dataset.frame_rate.to_le_bytes())?;
    w.write_all(&(dataset.sequences.len() as u32).to_le_bytes())?;
    for seq in &dataset.sequences {
        w.write_all(&(seq.frames() as u32).to_le_bytes())?;
        w.write_all(&(seq.labels.len() as u32).to_le_bytes())?;
        write_tensor(w, &seq.avatar_audio)?;
        write_tensor(w, &seq.avatar_pose)?;
        write_tensor(w, &seq.human_audio)?;
        write_tensor(w, &seq.human_pose)?;
        for label in &seq.labels {
            w.write_all(&[label.kind.code()])?;
            w.write_all(&(label.start as u32).to_le_bytes())?;
            w.write_all(&(label.end as u32).to_le_bytes())?;
            w.write_all(&(label.response_onset as u32).to_le_bytes())?;
            w.write_all(&[label.group.code()])?;
        }
    }
    Ok(())
}

pub fn save_dataset(dataset: &DyadicDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_dataset(r: impl Read) -> Result<DyadicDataset> {
    let mut r = CountedReader::new(r);
    let mut magic = [0u8; 8];
    r.fill(&mut magic, "magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format { offset: 0, detail: format!("bad magic {magic:?}") });
    }
    let a = r.u32("audio dim")? as usize;
    let p = r.u32("pose dim")? as usize;
    let frame_rate = r.f64("frame rate")?;
    let count = r.u32("sequence count")? as usize;
    if a == 0 || p == 0 || !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(Error::Format {
            offset: 8,
            detail: format!("invalid header: a={a} p={p} rate={frame_rate}"),
        });
    }
    let mut sequences = Vec::with_capacity(count);
    for s in 0..count {
        let t = r.u32("frame count")? as usize;
        let labels_n = r.u32("label count")? as usize;
        let avatar_audio = Tensor::from_vec(&[a, t], r.f64_block(a * t, "avatar audio")?)?;
        let avatar_pose = Tensor::from_vec(&[p, t], r.f64_block(p * t, "avatar pose")?)?;
        let human_audio = Tensor::from_vec(&[a, t], r.f64_block(a * t, "human audio")?)?;
        let human_pose = Tensor::from_vec(&[p, t], r.f64_block(p * t, "human pose")?)?;
        let mut labels = Vec::with_capacity(labels_n);
        for _ in 0..labels_n {
            let at = r.offset;
            let kind_code = r.u8("label kind")?;
            let kind = EventKind::from_code(kind_code).ok_or(Error::Format {
                offset: at,
                detail: format!("unknown event kind code {kind_code}"),
            })?;
            let start = r.u32("label start")? as usize;
            let end = r.u32("label end")? as usize;
            let response_onset = r.u32("label response onset")? as usize;
            let at = r.offset;
            let group_code = r.u8("label group")?;
            let group = JointGroup::from_code(group_code).ok_or(Error::Format {
                offset: at,
                detail: format!("unknown joint group code {group_code}"),
            })?;
            labels.push(EventLabel { kind, start, end, response_onset, group });
        }
        let seq = DyadicSequence { avatar_audio, avatar_pose, human_audio, human_pose, labels };
        seq.validate(a, p).map_err(|e| Error::Format {
            offset: r.offset,
            detail: format!("sequence {s}: {e}"),
        })?;
        sequences.push(seq);
    }
    Ok(DyadicDataset { audio_dim: a, pose_dim: p, frame_rate, sequences })
}

pub fn load_dataset(path: &Path) -> Result<DyadicDataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(file))
}

/// Bytes `write_dataset` will produce; lets tests pin the layout.
pub fn encoded_size(dataset: &DyadicDataset) -> usize {
    let header = 8 + 4 + 4 + 8 + 4;
    let per_seq: usize = dataset
        .sequences
        .iter()
        .map(|s| {
            8 + 2 * (dataset.audio_dim + dataset.pose_dim) * s.frames() * 8 + s.labels.len() * 14
        })
        .sum();
    header + per_seq
}
