//! Radar frame and skeleton data model: CSV I/O, canonical spatial sorting,
//! consecutive-frame fusion, volume-restriction denoising and a synthetic
//! stick-figure generator for desk-scale verification.
//!
//! File formats:
//! - point CSV: header `frame_id,x,y,z,v,intensity`, one row per point
//! - label CSV: header `frame_id,j0x,j0y,j0z,...,j{J-1}z`, one row per
//!   labeled frame
//!
//! Lengths are meters, velocities m/s. Floats are written with 17
//! significant digits so load → save → load round-trips bit-identically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::{real, Real};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
}

/// One radar return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint<T> {
    pub x: T,
    pub y: T,
    pub z: T,
    /// Doppler velocity, m/s.
    pub v: T,
    /// Reflective intensity, arbitrary units.
    pub intensity: T,
}

impl<T: Real> RadarPoint<T> {
    pub fn position(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

/// J keypoints in 3-D plus the hip indices used for pelvis alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T> {
    pub joints: Vec<[T; 3]>,
    pub left_hip: usize,
    pub right_hip: usize,
}

impl<T: Real> Skeleton<T> {
    pub fn new(joints: Vec<[T; 3]>, left_hip: usize, right_hip: usize) -> Self {
        assert!(!joints.is_empty());
        assert!(left_hip < joints.len() && right_hip < joints.len());
        Skeleton {
            joints,
            left_hip,
            right_hip,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    /// Midpoint of the two hip joints.
    pub fn pelvis(&self) -> [T; 3] {
        let l = self.joints[self.left_hip];
        let r = self.joints[self.right_hip];
        let half = real::<T>(0.5);
        [
            (l[0] + r[0]) * half,
            (l[1] + r[1]) * half,
            (l[2] + r[2]) * half,
        ]
    }

    /// Joint-major `[x,y,z]` flattening, length `3J`.
    pub fn flatten(&self) -> Vec<T> {
        self.joints.iter().flat_map(|j| j.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[T], left_hip: usize, right_hip: usize) -> Self {
        assert_eq!(flat.len() % 3, 0);
        let joints = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Skeleton::new(joints, left_hip, right_hip)
    }
}

/// Hip indices for a given joint count: the 17-joint COCO-style convention
/// when it applies, degenerate fallbacks for tiny test skeletons.
pub fn default_hips(joint_count: usize) -> (usize, usize) {
    if joint_count >= 13 {
        (11, 12)
    } else if joint_count >= 2 {
        (0, 1)
    } else {
        (0, 0)
    }
}

/// One frame: ordered points plus optional ground-truth keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarFrame<T> {
    pub frame_id: u64,
    pub points: Vec<RadarPoint<T>>,
    pub keypoints: Option<Skeleton<T>>,
}

/// Ordered frames sharing one joint count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub frames: Vec<RadarFrame<T>>,
    /// Joint count of labeled frames; `None` when no frame is labeled.
    pub joint_count: Option<usize>,
    pub name: String,
}

impl<T: Real> Dataset<T> {
    pub fn labeled_count(&self) -> usize {
        self.frames.iter().filter(|f| f.keypoints.is_some()).count()
    }
}

/// `(stem.points.csv, stem.labels.csv)` convention used by the CLI.
pub fn dataset_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.to_string_lossy();
    (
        PathBuf::from(format!("{s}.points.csv")),
        PathBuf::from(format!("{s}.labels.csv")),
    )
}

fn parse_field<T: Real>(
    raw: &str,
    path: &Path,
    line: usize,
    what: &str,
) -> Result<T, DataError> {
    let v: f64 = raw.trim().parse().map_err(|_| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid {what} `{raw}`"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("non-finite {what} `{raw}`"),
        });
    }
    Ok(real(v))
}

fn parse_id(raw: &str, path: &Path, line: usize) -> Result<u64, DataError> {
    raw.trim().parse().map_err(|_| DataError::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("invalid frame_id `{raw}`"),
    })
}

/// Load a dataset from a point CSV and an optional companion label CSV.
/// Frames are grouped by `frame_id` (ascending) and canonically sorted.
pub fn load_dataset<T: Real>(
    points_path: &Path,
    labels_path: Option<&Path>,
) -> Result<Dataset<T>, DataError> {
    let text = fs::read_to_string(points_path).map_err(|source| DataError::Io {
        path: points_path.to_path_buf(),
        source,
    })?;
    let mut frames: Vec<RadarFrame<T>> = Vec::new();
    for (i, row) in text.lines().enumerate() {
        let line = i + 1;
        if i == 0 {
            // Header row.
            continue;
        }
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 6 {
            return Err(DataError::Parse {
                path: points_path.to_path_buf(),
                line,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let frame_id = parse_id(fields[0], points_path, line)?;
        let p = RadarPoint {
            x: parse_field(fields[1], points_path, line, "x")?,
            y: parse_field(fields[2], points_path, line, "y")?,
            z: parse_field(fields[3], points_path, line, "z")?,
            v: parse_field(fields[4], points_path, line, "v")?,
            intensity: parse_field(fields[5], points_path, line, "intensity")?,
        };
        match frames.iter_mut().find(|f| f.frame_id == frame_id) {
            Some(f) => f.points.push(p),
            None => frames.push(RadarFrame {
                frame_id,
                points: vec![p],
                keypoints: None,
            }),
        }
    }
    frames.sort_by_key(|f| f.frame_id);

    let mut joint_count = None;
    if let Some(lp) = labels_path {
        let text = fs::read_to_string(lp).map_err(|source| DataError::Io {
            path: lp.to_path_buf(),
            source,
        })?;
        for (i, row) in text.lines().enumerate() {
            let line = i + 1;
            if i == 0 || row.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() < 4 || (fields.len() - 1) % 3 != 0 {
                return Err(DataError::Schema(format!(
                    "{}:{line}: label row has {} coordinate fields, expected a multiple of 3",
                    lp.display(),
                    fields.len() - 1
                )));
            }
            let j = (fields.len() - 1) / 3;
            match joint_count {
                None => joint_count = Some(j),
                Some(jc) if jc != j => {
                    return Err(DataError::Schema(format!(
                        "{}:{line}: joint count {j} differs from {jc}",
                        lp.display()
                    )))
                }
                _ => {}
            }
            let frame_id = parse_id(fields[0], lp, line)?;
            let mut flat = Vec::with_capacity(fields.len() - 1);
            for f in &fields[1..] {
                flat.push(parse_field::<T>(f, lp, line, "keypoint coordinate")?);
            }
            let (lh, rh) = default_hips(j);
            let frame = frames
                .iter_mut()
                .find(|f| f.frame_id == frame_id)
                .ok_or_else(|| {
                    DataError::Schema(format!(
                        "{}:{line}: label for unknown frame_id {frame_id}",
                        lp.display()
                    ))
                })?;
            frame.keypoints = Some(Skeleton::from_flat(&flat, lh, rh));
        }
    }
    let frames = frames.into_iter().map(|f| sort_points(f)).collect();
    let name = points_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        frames,
        joint_count,
        name,
    })
}

/// Convenience wrapper deriving `X.labels.csv` from `X.points.csv` when
/// such a companion exists.
pub fn load_frames_csv<T: Real>(points_path: &Path) -> Result<Dataset<T>, DataError> {
    let s = points_path.to_string_lossy();
    let companion = s
        .strip_suffix(".points.csv")
        .map(|stem| PathBuf::from(format!("{stem}.labels.csv")));
    let labels = companion.filter(|p| p.exists());
    load_dataset(points_path, labels.as_deref())
}

fn fmt_real<T: Real>(v: T) -> String {
    format!("{:.16e}", v)
}

/// Write point and label CSVs (the label file is written only when at least
/// one frame is labeled).
pub fn save_dataset<T: Real>(
    ds: &Dataset<T>,
    points_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let mut out = String::from("frame_id,x,y,z,v,intensity\n");
    for f in &ds.frames {
        for p in &f.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                f.frame_id,
                fmt_real(p.x),
                fmt_real(p.y),
                fmt_real(p.z),
                fmt_real(p.v),
                fmt_real(p.intensity)
            );
        }
    }
    fs::write(points_path, out).map_err(|source| DataError::Io {
        path: points_path.to_path_buf(),
        source,
    })?;

    if let Some(j) = ds.joint_count {
        let mut out = String::from("frame_id");
        for i in 0..j {
            let _ = write!(out, ",j{i}x,j{i}y,j{i}z");
        }
        out.push('\n');
        for f in &ds.frames {
            if let Some(sk) = &f.keypoints {
                let _ = write!(out, "{}", f.frame_id);
                for v in sk.flatten() {
                    let _ = write!(out, ",{}", fmt_real(v));
                }
                out.push('\n');
            }
        }
        fs::write(labels_path, out).map_err(|source| DataError::Io {
            path: labels_path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Stable lexicographic reorder by (x, y, z); ties keep original order.
pub fn sort_points<T: Real>(mut frame: RadarFrame<T>) -> RadarFrame<T> {
    frame.points.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
            .then(a.z.partial_cmp(&b.z).unwrap())
    });
    frame
}

/// Centered sliding-window fusion: output frame `i` holds the concatenated
/// points of frames `i−⌊w/2⌋ … i+⌊w/2⌋` (clipped to dataset bounds), keeps
/// the center frame's keypoints and is re-sorted canonically.
pub fn fuse_frames<T: Real>(ds: &Dataset<T>, window: usize) -> Dataset<T> {
    assert!(window >= 1 && window % 2 == 1, "window must be odd and >= 1");
    let half = window / 2;
    let n = ds.frames.len();
    let frames = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n.saturating_sub(1));
            let mut points = Vec::new();
            for f in &ds.frames[lo..=hi] {
                points.extend_from_slice(&f.points);
            }
            sort_points(RadarFrame {
                frame_id: ds.frames[i].frame_id,
                points,
                keypoints: ds.frames[i].keypoints.clone(),
            })
        })
        .collect();
    Dataset {
        frames,
        joint_count: ds.joint_count,
        name: ds.name.clone(),
    }
}

/// Remove every labeled frame with any keypoint coordinate outside the open
/// interval `(−bound, +bound)` on any axis. Unlabeled frames pass through.
/// Returns the filtered dataset and the removed frame ids.
pub fn denoise_volume<T: Real>(ds: &Dataset<T>, bound: T) -> (Dataset<T>, Vec<u64>) {
    assert!(bound > T::zero());
    let mut removed = Vec::new();
    let frames = ds
        .frames
        .iter()
        .filter(|f| {
            let keep = match &f.keypoints {
                Some(sk) => sk
                    .joints
                    .iter()
                    .all(|j| j.iter().all(|&c| c > -bound && c < bound)),
                None => true,
            };
            if !keep {
                removed.push(f.frame_id);
            }
            keep
        })
        .cloned()
        .collect();
    (
        Dataset {
            frames,
            joint_count: ds.joint_count,
            name: ds.name.clone(),
        },
        removed,
    )
}

const FRAME_PERIOD_S: f64 = 0.1;

/// Deterministic synthetic dataset: a smoothly moving stick-figure skeleton
/// whose radar points are sampled on the segments between consecutive
/// joints, with Gaussian position noise. Doppler is the sampled surface
/// point's frame-to-frame displacement over the frame period; intensity is
/// uniform in a fixed positive range. Every frame is labeled.
pub fn synth_dataset<T: Real>(
    n_frames: usize,
    points_per_frame: usize,
    joint_count: usize,
    noise_sigma: f64,
    rng_seed: u64,
) -> Dataset<T> {
    assert!(n_frames >= 1 && points_per_frame >= 1 && joint_count >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // Per-joint articulation parameters, drawn once.
    let mut amp = vec![[0.0f64; 3]; joint_count];
    let mut phase = vec![[0.0f64; 3]; joint_count];
    let mut freq = vec![[0.0f64; 3]; joint_count];
    for j in 0..joint_count {
        for a in 0..3 {
            amp[j][a] = 0.05 + 0.10 * rng.gen::<f64>();
            phase[j][a] = std::f64::consts::TAU * rng.gen::<f64>();
            freq[j][a] = 0.05 + 0.15 * rng.gen::<f64>();
        }
    }

    let joint_pos = |j: usize, t: usize| -> [f64; 3] {
        let tf = t as f64;
        let span = (joint_count.max(2) - 1) as f64;
        let base = [
            0.25 * (1.3 * j as f64).sin(),
            0.20 * (2.1 * j as f64).cos(),
            1.6 * (j as f64) / span - 0.8,
        ];
        let center = [
            1.2 * (std::f64::consts::TAU * tf / 97.0).sin(),
            1.0 * (std::f64::consts::TAU * tf / 71.0 + 0.5).sin(),
            0.3 * (std::f64::consts::TAU * tf / 53.0).sin(),
        ];
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = center[a] + base[a] + amp[j][a] * (freq[j][a] * tf + phase[j][a]).sin();
        }
        p
    };

    let lerp = |a: [f64; 3], b: [f64; 3], u: f64| -> [f64; 3] {
        [
            a[0] + (b[0] - a[0]) * u,
            a[1] + (b[1] - a[1]) * u,
            a[2] + (b[2] - a[2]) * u,
        ]
    };

    let (lh, rh) = default_hips(joint_count);
    let mut frames = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let mut points = Vec::with_capacity(points_per_frame);
        for _ in 0..points_per_frame {
            let seg = if joint_count > 1 {
                rng.gen_range(0..joint_count - 1)
            } else {
                0
            };
            let u: f64 = rng.gen();
            let (a, b) = if joint_count > 1 {
                (joint_pos(seg, t), joint_pos(seg + 1, t))
            } else {
                (joint_pos(0, t), joint_pos(0, t))
            };
            let on_seg = lerp(a, b, u);
            let v = if t == 0 {
                0.0
            } else {
                let (ap, bp) = if joint_count > 1 {
                    (joint_pos(seg, t - 1), joint_pos(seg + 1, t - 1))
                } else {
                    (joint_pos(0, t - 1), joint_pos(0, t - 1))
                };
                let prev = lerp(ap, bp, u);
                let d = [
                    on_seg[0] - prev[0],
                    on_seg[1] - prev[1],
                    on_seg[2] - prev[2],
                ];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / FRAME_PERIOD_S
            };
            let intensity = 0.5 + 1.5 * rng.gen::<f64>();
            let mut pos = on_seg;
            if noise_sigma > 0.0 {
                for c in pos.iter_mut() {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *c += noise_sigma * g;
                }
            }
            points.push(RadarPoint {
                x: real(pos[0]),
                y: real(pos[1]),
                z: real(pos[2]),
                v: real(v),
                intensity: real(intensity),
            });
        }
        let joints = (0..joint_count)
            .map(|j| {
                let p = joint_pos(j, t);
                [real(p[0]), real(p[1]), real(p[2])]
            })
            .collect();
        frames.push(sort_points(RadarFrame {
            frame_id: t as u64,
            points,
            keypoints: Some(Skeleton::new(joints, lh, rh)),
        }));
    }
    Dataset {
        frames,
        joint_count: Some(joint_count),
        name: format!("synthetic-{rng_seed}"),
    }
}
