//! Pose-feature sequences: the on-disk format, fps downsampling, and a
//! synthetic motion-primitive corpus generator.
//!
//! A frame packs, in order: 4 ground-contact flags, pelvis angular velocity
//! (rad/frame, gravity axis), pelvis velocity (2, m/frame, horizontal plane),
//! then per-joint position (3), velocity (3, m/frame), and 6D rotation.
//! Feature dimension is `D = 7 + 12 * J` for `J` joints. All velocity
//! channels are per-frame displacements so the stream stays self-consistent
//! after downsampling.

use std::fmt;
use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

pub const CONTACT_DIM: usize = 4;
/// Channels before the per-joint blocks: contacts + pelvis angular velocity +
/// pelvis planar velocity.
pub const ROOT_DIM: usize = 7;

/// Feature dimension for a joint count.
pub fn feature_dim(joints: usize) -> usize {
    ROOT_DIM + 12 * joints
}

/// Joint count back from a feature dimension, if the dimension is valid.
pub fn joints_for_dim(dim: usize) -> Option<usize> {
    if dim >= ROOT_DIM && (dim - ROOT_DIM) % 12 == 0 {
        Some((dim - ROOT_DIM) / 12)
    } else {
        None
    }
}

/// A T×D pose-feature sequence, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub values: Vec<f32>,
    pub len: usize,
    pub dim: usize,
    pub fps: f32,
    pub source_id: String,
}

impl PoseSequence {
    pub fn new(values: Vec<f32>, len: usize, dim: usize, fps: f32, source_id: &str) -> Self {
        assert_eq!(values.len(), len * dim, "sequence value count mismatch");
        assert!(len >= 1, "sequence must have at least one frame");
        PoseSequence { values, len, dim, fps, source_id: source_id.to_string() }
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn joints(&self) -> usize {
        joints_for_dim(self.dim).expect("invalid feature dimension")
    }

    /// Offset of joint `j`'s position triple within a frame.
    pub fn joint_pos_offset(&self, j: usize) -> usize {
        ROOT_DIM + 3 * j
    }

    /// Offset of joint `j`'s velocity triple within a frame.
    pub fn joint_vel_offset(&self, j: usize) -> usize {
        ROOT_DIM + 3 * self.joints() + 3 * j
    }

    /// Position of joint `j` at frame `t`.
    pub fn joint_pos(&self, t: usize, j: usize) -> [f32; 3] {
        let o = t * self.dim + self.joint_pos_offset(j);
        [self.values[o], self.values[o + 1], self.values[o + 2]]
    }

    pub fn slice_frames(&self, start: usize, end: usize) -> PoseSequence {
        assert!(start < end && end <= self.len);
        PoseSequence {
            values: self.values[start * self.dim..end * self.dim].to_vec(),
            len: end - start,
            dim: self.dim,
            fps: self.fps,
            source_id: self.source_id.clone(),
        }
    }
}

/// A sequence plus per-frame class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub sequence: PoseSequence,
    pub labels: Vec<u16>,
}

impl LabeledSequence {
    pub fn new(sequence: PoseSequence, labels: Vec<u16>) -> Self {
        assert_eq!(labels.len(), sequence.len, "one label per frame");
        LabeledSequence { sequence, labels }
    }
}

#[derive(Debug)]
pub enum PoseIoError {
    BadMagic,
    VersionUnsupported(u32),
    TruncatedPayload { expected: usize, got: usize },
    NonFiniteValue,
    NonIntegerStride { fps: f32, target: f32 },
    EmptySpec,
    IoFailure(io::Error),
}

impl fmt::Display for PoseIoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoseIoError::BadMagic => write!(f, "bad magic bytes"),
            PoseIoError::VersionUnsupported(v) => write!(f, "unsupported format version {v}"),
            PoseIoError::TruncatedPayload { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
            PoseIoError::NonFiniteValue => write!(f, "non-finite value in sequence"),
            PoseIoError::NonIntegerStride { fps, target } => {
                write!(f, "fps {fps} is not an integer multiple of target {target}")
            }
            PoseIoError::EmptySpec => write!(f, "generator spec has no primitive classes"),
            PoseIoError::IoFailure(e) => write!(f, "io failure: {e}"),
        }
    }
}

impl std::error::Error for PoseIoError {}

impl From<io::Error> for PoseIoError {
    fn from(e: io::Error) -> Self {
        PoseIoError::IoFailure(e)
    }
}

const MSEQ_MAGIC: &[u8; 4] = b"MSEQ";
const MLBL_MAGIC: &[u8; 4] = b"MLBL";
const FORMAT_VERSION: u32 = 1;
/// magic + version + T + D + fps
pub const MSEQ_HEADER_BYTES: usize = 20;

/// Reads an MSEQ file: magic "MSEQ", u32 version, u32 T, u32 D, f32 fps, then
/// T*D little-endian f32 row-major.
pub fn read_sequence(path: &Path) -> Result<PoseSequence, PoseIoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MSEQ_HEADER_BYTES {
        return Err(PoseIoError::TruncatedPayload { expected: MSEQ_HEADER_BYTES, got: bytes.len() });
    }
    if &bytes[0..4] != MSEQ_MAGIC {
        return Err(PoseIoError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(PoseIoError::VersionUnsupported(version));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    let expected = MSEQ_HEADER_BYTES + t * d * 4;
    if bytes.len() != expected {
        return Err(PoseIoError::TruncatedPayload { expected, got: bytes.len() });
    }
    let mut values = Vec::with_capacity(t * d);
    for i in 0..t * d {
        let off = MSEQ_HEADER_BYTES + i * 4;
        let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(PoseIoError::NonFiniteValue);
        }
        values.push(v);
    }
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(PoseSequence::new(values, t, d, fps, &source_id))
}

/// Writes an MSEQ file. Validates finiteness before touching the filesystem;
/// the write itself goes through a temp file + rename.
pub fn write_sequence(seq: &PoseSequence, path: &Path) -> Result<(), PoseIoError> {
    if seq.values.iter().any(|v| !v.is_finite()) {
        return Err(PoseIoError::NonFiniteValue);
    }
    let mut buf = Vec::with_capacity(MSEQ_HEADER_BYTES + seq.values.len() * 4);
    buf.extend_from_slice(MSEQ_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(seq.len as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    buf.extend_from_slice(&seq.fps.to_le_bytes());
    for v in &seq.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &buf)?;
    Ok(())
}

/// Reads an MLBL label sidecar: magic "MLBL", u32 version, u32 T, then T
/// little-endian u16 class indices.
pub fn read_labels(path: &Path) -> Result<Vec<u16>, PoseIoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(PoseIoError::TruncatedPayload { expected: 12, got: bytes.len() });
    }
    if &bytes[0..4] != MLBL_MAGIC {
        return Err(PoseIoError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(PoseIoError::VersionUnsupported(version));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + t * 2;
    if bytes.len() != expected {
        return Err(PoseIoError::TruncatedPayload { expected, got: bytes.len() });
    }
    Ok((0..t)
        .map(|i| u16::from_le_bytes(bytes[12 + 2 * i..14 + 2 * i].try_into().unwrap()))
        .collect())
}

pub fn write_labels(labels: &[u16], path: &Path) -> Result<(), PoseIoError> {
    let mut buf = Vec::with_capacity(12 + labels.len() * 2);
    buf.extend_from_slice(MLBL_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for l in labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    atomic_write(path, &buf)?;
    Ok(())
}

/// Writes bytes through a temp file and rename, so readers never observe a
/// partial artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Keeps frames at stride `fps / target_fps` starting at frame 0 and rescales
/// the velocity channels by the stride so they remain per-output-frame
/// displacements.
pub fn downsample(seq: &PoseSequence, target_fps: f32) -> Result<PoseSequence, PoseIoError> {
    let ratio = seq.fps / target_fps;
    let stride = ratio.round() as usize;
    if stride < 1 || (ratio - stride as f32).abs() > 1e-6 {
        return Err(PoseIoError::NonIntegerStride { fps: seq.fps, target: target_fps });
    }
    let joints = seq.joints();
    let vel_start = ROOT_DIM + 3 * joints;
    let vel_end = vel_start + 3 * joints;
    let out_len = seq.len.div_ceil(stride);
    let mut values = Vec::with_capacity(out_len * seq.dim);
    let scale = stride as f32;
    for ti in 0..out_len {
        let frame = seq.frame(ti * stride);
        for (c, &v) in frame.iter().enumerate() {
            // Pelvis angular velocity (4), pelvis planar velocity (5, 6), and
            // the joint-velocity block are per-frame displacements.
            let scaled = if (4..ROOT_DIM).contains(&c) || (vel_start..vel_end).contains(&c) {
                v * scale
            } else {
                v
            };
            values.push(scaled);
        }
    }
    Ok(PoseSequence::new(values, out_len, seq.dim, target_fps, &seq.source_id))
}

/// Parameters of the synthetic motion-primitive corpus. Each class is a
/// family of per-joint sinusoids with class-specific frequency, phase, and
/// amplitude plus a linear pelvis drift; sequences concatenate primitives
/// with smooth cross-fades.
#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    pub classes: usize,
    pub joints: usize,
    pub sequences: usize,
    pub seconds: f32,
    pub fps: f32,
    /// Primitive duration range in seconds.
    pub duration: (f32, f32),
    pub noise_sigma: f32,
    /// Cross-fade length in seconds between consecutive primitives.
    pub crossfade: f32,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            classes: 5,
            joints: 4,
            sequences: 200,
            seconds: 30.0,
            fps: 30.0,
            duration: (1.5, 4.0),
            noise_sigma: 0.01,
            crossfade: 0.2,
        }
    }
}

/// Class-specific trajectory parameters, a deterministic function of the
/// class index so the closed form is known to tests.
#[derive(Debug, Clone, Copy)]
pub struct ClassParams {
    pub freq_hz: f32,
    pub base_amp: f32,
    pub drift: [f32; 2],
    pub ang_vel: f32,
    pub rot_amp: f32,
}

pub fn class_params(class: usize) -> ClassParams {
    let c = class as f32;
    ClassParams {
        freq_hz: 0.5 + 0.45 * c,
        base_amp: 0.18 + 0.05 * ((class * 3) % 4) as f32,
        drift: [0.25 * (c * 1.3).cos(), 0.25 * (c * 1.3).sin()],
        ang_vel: 0.4 + 0.25 * c,
        rot_amp: 0.3 + 0.12 * c,
    }
}

/// Closed-form joint position for `class` at local frame `t` (30 fps), before
/// cross-fading and noise.
pub fn primitive_joint_pos(class: usize, joint: usize, axis: usize, t: f32, fps: f32) -> f32 {
    let p = class_params(class);
    let j = joint as f32;
    let a = axis as f32;
    let amp = p.base_amp * (1.0 + 0.25 * ((joint + axis + class) % 3) as f32);
    let phase = 1.7 * j + 0.9 * a + 2.3 * class as f32;
    let offset = 0.35 * ((class as f32 + 1.0) * (j + 1.0) * 0.7 + a).sin();
    offset + amp * (2.0 * std::f32::consts::PI * p.freq_hz * t / fps + phase).sin()
}

fn rotation_6d(angle: f32, joint: usize) -> [f32; 6] {
    // Rotation about an axis that varies per joint; the 6D representation is
    // the first two columns of the rotation matrix.
    let (s, c) = angle.sin_cos();
    match joint % 3 {
        0 => [c, s, 0.0, -s, c, 0.0],
        1 => [c, 0.0, -s, 0.0, 1.0, 0.0],
        _ => [1.0, 0.0, 0.0, 0.0, c, s],
    }
}

struct PrimitiveInstance {
    class: usize,
    start: usize,
    end: usize,
}

/// Generates a corpus of labeled 30 fps sequences. Deterministic for a given
/// `(spec, seed)`.
pub fn generate_synthetic_corpus(
    spec: &GeneratorSpec,
    seed: u64,
) -> Result<Vec<LabeledSequence>, PoseIoError> {
    if spec.classes == 0 {
        return Err(PoseIoError::EmptySpec);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.sequences);
    for s in 0..spec.sequences {
        out.push(generate_one(spec, &mut rng, s));
    }
    Ok(out)
}

fn generate_one(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, index: usize) -> LabeledSequence {
    let total = (spec.seconds * spec.fps).round() as usize;
    let dur = Uniform::new_inclusive(spec.duration.0, spec.duration.1);
    let mut plan: Vec<PrimitiveInstance> = Vec::new();
    let mut t = 0usize;
    // Classes come from a shuffled bag so the corpus stays near-uniform.
    let mut bag: Vec<usize> = Vec::new();
    while t < total {
        if bag.is_empty() {
            bag = (0..spec.classes).collect();
            for i in (1..bag.len()).rev() {
                bag.swap(i, rng.gen_range(0..=i));
            }
        }
        let class = bag.pop().unwrap();
        let frames = (dur.sample(rng) * spec.fps).round() as usize;
        let end = (t + frames.max(2)).min(total);
        plan.push(PrimitiveInstance { class, start: t, end });
        t = end;
    }

    let joints = spec.joints;
    let dim = feature_dim(joints);
    let fade = (spec.crossfade * spec.fps).round() as usize;
    let noise = Normal::new(0.0f32, spec.noise_sigma.max(0.0)).unwrap();

    // Joint positions for the whole sequence, cross-faded across primitive
    // transitions, with noise applied before velocities are derived.
    let mut pos = vec![0.0f32; total * joints * 3];
    let mut pelvis_vel = vec![0.0f32; total * 2];
    let mut ang_vel = vec![0.0f32; total];
    let mut rot = vec![0.0f32; total * joints * 6];
    let mut labels = vec![0u16; total];

    for (pi, prim) in plan.iter().enumerate() {
        let params = class_params(prim.class);
        for t in prim.start..prim.end {
            let local = (t - prim.start) as f32;
            labels[t] = prim.class as u16;
            // Cross-fade weight ramps in over the first `fade` frames of
            // every primitive after the first.
            let blend = if pi > 0 && t - prim.start < fade {
                (t - prim.start + 1) as f32 / (fade + 1) as f32
            } else {
                1.0
            };
            let prev = pi.checked_sub(1).map(|q| &plan[q]);
            for j in 0..joints {
                for a in 0..3 {
                    let cur = primitive_joint_pos(prim.class, j, a, local, spec.fps);
                    let v = if blend < 1.0 {
                        let pv = prev.unwrap();
                        let prev_local = (t - pv.start) as f32;
                        let old = primitive_joint_pos(pv.class, j, a, prev_local, spec.fps);
                        old * (1.0 - blend) + cur * blend
                    } else {
                        cur
                    };
                    pos[(t * joints + j) * 3 + a] = v;
                }
                let angle = params.rot_amp
                    * (2.0 * std::f32::consts::PI * params.freq_hz * local / spec.fps
                        + j as f32)
                        .sin();
                let r = rotation_6d(angle, j);
                rot[(t * joints + j) * 6..(t * joints + j) * 6 + 6].copy_from_slice(&r);
            }
            pelvis_vel[t * 2] = params.drift[0] / spec.fps;
            pelvis_vel[t * 2 + 1] = params.drift[1] / spec.fps;
            ang_vel[t] = params.ang_vel / spec.fps;
        }
    }

    if spec.noise_sigma > 0.0 {
        for v in pos.iter_mut() {
            *v += noise.sample(rng);
        }
    }

    let mut values = vec![0.0f32; total * dim];
    for t in 0..total {
        let class = labels[t] as usize;
        let p = class_params(class);
        let frame = &mut values[t * dim..(t + 1) * dim];
        // Contacts: a class-specific square wave per flag.
        for q in 0..CONTACT_DIM {
            let phase = 2.0 * std::f32::consts::PI * p.freq_hz * t as f32 / spec.fps
                + std::f32::consts::FRAC_PI_2 * q as f32;
            frame[q] = if phase.sin() > 0.0 { 1.0 } else { 0.0 };
        }
        frame[4] = ang_vel[t];
        frame[5] = pelvis_vel[t * 2];
        frame[6] = pelvis_vel[t * 2 + 1];
        for j in 0..joints {
            for a in 0..3 {
                frame[ROOT_DIM + 3 * j + a] = pos[(t * joints + j) * 3 + a];
            }
        }
        // Per-frame displacements from the (noisy, cross-faded) positions.
        let vel_off = ROOT_DIM + 3 * joints;
        for j in 0..joints {
            for a in 0..3 {
                let v = if t == 0 {
                    0.0
                } else {
                    pos[(t * joints + j) * 3 + a] - pos[((t - 1) * joints + j) * 3 + a]
                };
                frame[vel_off + 3 * j + a] = v;
            }
        }
        let rot_off = ROOT_DIM + 6 * joints;
        for j in 0..joints {
            frame[rot_off + 6 * j..rot_off + 6 * j + 6]
                .copy_from_slice(&rot[(t * joints + j) * 6..(t * joints + j) * 6 + 6]);
        }
    }

    let seq = PoseSequence::new(values, total, dim, spec.fps, &format!("synth-{index:04}"));
    LabeledSequence::new(seq, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn tmpfile(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("pose-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn simple_seq(t: usize, joints: usize, fps: f32) -> PoseSequence {
        let d = feature_dim(joints);
        let values: Vec<f32> = (0..t * d).map(|i| (i as f32 * 0.01).sin()).collect();
        PoseSequence::new(values, t, d, fps, "test")
    }

    #[test]
    fn zero_frame_round_trip() {
        let d = feature_dim(1);
        assert_eq!(d, 19);
        let seq = PoseSequence::new(vec![0.0; d], 1, d, 30.0, "z");
        let p = tmpfile("zero.mseq");
        write_sequence(&seq, &p).unwrap();
        let back = read_sequence(&p).unwrap();
        assert_eq!(back.len, 1);
        assert_eq!(back.dim, 19);
        assert_eq!(back.fps, 30.0);
        assert!(back.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn file_size_matches_format_arithmetic() {
        let seq = simple_seq(2, 1, 30.0);
        let p = tmpfile("size.mseq");
        write_sequence(&seq, &p).unwrap();
        let meta = std::fs::metadata(&p).unwrap();
        assert_eq!(meta.len(), 20 + 2 * 19 * 4);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let seq = simple_seq(7, 2, 30.0);
        let p1 = tmpfile("rw1.mseq");
        let p2 = tmpfile("rw2.mseq");
        write_sequence(&seq, &p1).unwrap();
        write_sequence(&seq, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let p = tmpfile("bad.mseq");
        let mut bytes = vec![];
        bytes.extend_from_slice(b"XSEQ");
        bytes.extend_from_slice(&[0u8; 16]);
        std::fs::write(&p, &bytes).unwrap();
        match read_sequence(&p) {
            Err(PoseIoError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let seq = simple_seq(3, 1, 30.0);
        let p = tmpfile("trunc.mseq");
        write_sequence(&seq, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&p, &bytes).unwrap();
        match read_sequence(&p) {
            Err(PoseIoError::TruncatedPayload { .. }) => {}
            other => panic!("expected TruncatedPayload, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rejected_before_write() {
        let d = feature_dim(1);
        let mut values = vec![0.0f32; d];
        values[3] = f32::NAN;
        let seq = PoseSequence { values, len: 1, dim: d, fps: 30.0, source_id: "n".into() };
        let p = tmpfile("nan.mseq");
        match write_sequence(&seq, &p) {
            Err(PoseIoError::NonFiniteValue) => {}
            other => panic!("expected NonFiniteValue, got {other:?}"),
        }
        assert!(!p.exists());
    }

    #[test]
    fn label_round_trip() {
        let labels = vec![0u16, 1, 2, 2, 1];
        let p = tmpfile("lbl.lbl");
        write_labels(&labels, &p).unwrap();
        assert_eq!(read_labels(&p).unwrap(), labels);
    }

    #[test]
    fn downsample_strides_and_scales_velocities() {
        let mut seq = simple_seq(30, 1, 30.0);
        // Constant joint velocity channel of 0.01 m/frame.
        let vel_off = seq.joint_vel_offset(0);
        for t in 0..30 {
            seq.values[t * seq.dim + vel_off] = 0.01;
        }
        let ds = downsample(&seq, 5.0).unwrap();
        assert_eq!(ds.len, 5);
        assert_eq!(ds.fps, 5.0);
        for t in 0..5 {
            // Frames kept: 0, 6, 12, 18, 24.
            let expect = seq.frame(t * 6)[ROOT_DIM];
            assert_eq!(ds.frame(t)[ROOT_DIM], expect);
            assert!((ds.frame(t)[vel_off] - 0.06).abs() < 1e-7);
        }
    }

    #[test]
    fn downsample_stride_one_is_identity() {
        let seq = simple_seq(11, 2, 30.0);
        let ds = downsample(&seq, 30.0).unwrap();
        assert_eq!(ds, seq);
    }

    #[test]
    fn downsample_rejects_non_integer_stride() {
        let seq = simple_seq(10, 1, 5.0);
        match downsample(&seq, 2.0) {
            Err(PoseIoError::NonIntegerStride { .. }) => {}
            other => panic!("expected NonIntegerStride, got {other:?}"),
        }
    }

    #[test]
    fn downsample_commutes_with_aligned_slicing() {
        let seq = simple_seq(60, 2, 30.0);
        let a = downsample(&seq.slice_frames(12, 48), 5.0).unwrap();
        let b = downsample(&seq, 5.0).unwrap().slice_frames(2, 8);
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn generator_single_class_matches_closed_form() {
        let spec = GeneratorSpec {
            classes: 1,
            joints: 2,
            sequences: 1,
            seconds: 3.0,
            noise_sigma: 0.0,
            duration: (5.0, 5.0), // longer than the sequence: one primitive
            ..GeneratorSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, 7).unwrap();
        let ls = &corpus[0];
        assert!(ls.labels.iter().all(|&l| l == 0));
        for t in 0..ls.sequence.len {
            for j in 0..2 {
                for a in 0..3 {
                    let expect = primitive_joint_pos(0, j, a, t as f32, 30.0);
                    let got = ls.sequence.joint_pos(t, j)[a];
                    assert!(
                        (got - expect).abs() < 1e-6,
                        "t={t} j={j} a={a}: {got} vs {expect}"
                    );
                }
            }
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = GeneratorSpec { sequences: 3, seconds: 4.0, ..GeneratorSpec::default() };
        let a = generate_synthetic_corpus(&spec, 99).unwrap();
        let b = generate_synthetic_corpus(&spec, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_rejects_empty_spec() {
        let spec = GeneratorSpec { classes: 0, ..GeneratorSpec::default() };
        match generate_synthetic_corpus(&spec, 1) {
            Err(PoseIoError::EmptySpec) => {}
            other => panic!("expected EmptySpec, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn generator_class_histogram_near_uniform() {
        let spec = GeneratorSpec { classes: 5, sequences: 200, ..GeneratorSpec::default() };
        let corpus = generate_synthetic_corpus(&spec, 3).unwrap();
        let mut counts = [0u64; 5];
        let mut total = 0u64;
        for ls in &corpus {
            for &l in &ls.labels {
                counts[l as usize] += 1;
                total += 1;
            }
        }
        let expect = total as f64 / 5.0;
        for (c, &n) in counts.iter().enumerate() {
            let dev = (n as f64 - expect).abs() / expect;
            assert!(dev < 0.10, "class {c} off by {:.1}%", dev * 100.0);
        }
    }
}
