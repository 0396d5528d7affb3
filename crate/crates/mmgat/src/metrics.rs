//! Evaluation metrics: per-axis MAE/RMSE (MARS protocol) and
//! pelvis-aligned MPJPE plus Procrustes-aligned PA-MPJPE (mRI protocol).
//! Skeletons are in meters internally; reports are in centimeters.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::ParamSet;
use crate::data::{Dataset, Skeleton};
use crate::graph::{build_batch, GraphConfig};
use crate::model::{self, ModelConfig};
use crate::{real, Real};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset has no labeled frames")]
    Unlabeled,
    #[error("dataset joint count {0} does not match model joint count {1}")]
    JointCountMismatch(usize, usize),
    #[error("model error: {0}")]
    Model(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Mars,
    Mri,
}

impl Protocol {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mars" => Some(Protocol::Mars),
            "mri" => Some(Protocol::Mri),
            _ => None,
        }
    }
}

/// Aggregated evaluation metrics, in centimeters. Fields are populated
/// according to the protocol that produced the report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport<T> {
    pub frame_count: usize,
    pub mae_xyz: Option<[T; 3]>,
    pub mae_avg: Option<T>,
    pub rmse_xyz: Option<[T; 3]>,
    pub rmse_avg: Option<T>,
    pub mpjpe: Option<T>,
    pub pa_mpjpe: Option<T>,
    /// Frames where Procrustes alignment was degenerate (coincident
    /// prediction); their unaligned error was used instead.
    pub degenerate_frames: usize,
}

impl<T: Real> MetricReport<T> {
    /// Flat `key: value` text document for CLI output.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("frame_count: {}\n", self.frame_count));
        if let (Some(mae), Some(avg)) = (&self.mae_xyz, &self.mae_avg) {
            out.push_str(&format!("mae_x_cm: {:.16e}\n", mae[0]));
            out.push_str(&format!("mae_y_cm: {:.16e}\n", mae[1]));
            out.push_str(&format!("mae_z_cm: {:.16e}\n", mae[2]));
            out.push_str(&format!("mae_avg_cm: {:.16e}\n", avg));
        }
        if let (Some(rmse), Some(avg)) = (&self.rmse_xyz, &self.rmse_avg) {
            out.push_str(&format!("rmse_x_cm: {:.16e}\n", rmse[0]));
            out.push_str(&format!("rmse_y_cm: {:.16e}\n", rmse[1]));
            out.push_str(&format!("rmse_z_cm: {:.16e}\n", rmse[2]));
            out.push_str(&format!("rmse_avg_cm: {:.16e}\n", avg));
        }
        if let Some(v) = &self.mpjpe {
            out.push_str(&format!("mpjpe_cm: {:.16e}\n", v));
        }
        if let Some(v) = &self.pa_mpjpe {
            out.push_str(&format!("pa_mpjpe_cm: {:.16e}\n", v));
        }
        if self.degenerate_frames > 0 {
            out.push_str(&format!("degenerate_frames: {}\n", self.degenerate_frames));
        }
        out
    }
}

const M_TO_CM: f64 = 100.0;

/// Per-axis and average MAE/RMSE over flattened `B×J×3` arrays (meters in,
/// centimeters out).
pub fn mae_rmse<T: Real>(pred: &[T], target: &[T]) -> ([T; 3], T, [T; 3], T) {
    assert_eq!(pred.len(), target.len());
    assert_eq!(pred.len() % 3, 0);
    let n = pred.len() / 3;
    let mut abs_sum = [0.0f64; 3];
    let mut sq_sum = [0.0f64; 3];
    for i in 0..n {
        for a in 0..3 {
            let d = (pred[3 * i + a] - target[3 * i + a]).to_f64().unwrap() * M_TO_CM;
            abs_sum[a] += d.abs();
            sq_sum[a] += d * d;
        }
    }
    let nf = n as f64;
    let mae = [abs_sum[0] / nf, abs_sum[1] / nf, abs_sum[2] / nf];
    let rmse = [
        (sq_sum[0] / nf).sqrt(),
        (sq_sum[1] / nf).sqrt(),
        (sq_sum[2] / nf).sqrt(),
    ];
    let mae_avg = (mae[0] + mae[1] + mae[2]) / 3.0;
    let rmse_avg = (rmse[0] + rmse[1] + rmse[2]) / 3.0;
    (
        [real(mae[0]), real(mae[1]), real(mae[2])],
        real(mae_avg),
        [real(rmse[0]), real(rmse[1]), real(rmse[2])],
        real(rmse_avg),
    )
}

/// Mean per-joint error after translating the prediction so its pelvis
/// (hip midpoint) coincides with the target's. Meters.
pub fn mpjpe_pelvis_aligned<T: Real>(pred: &Skeleton<T>, target: &Skeleton<T>) -> T {
    assert_eq!(pred.joint_count(), target.joint_count());
    let pp = pred.pelvis();
    let tp = target.pelvis();
    let shift = [tp[0] - pp[0], tp[1] - pp[1], tp[2] - pp[2]];
    let mut acc = T::zero();
    for (p, t) in pred.joints.iter().zip(&target.joints) {
        let mut s = T::zero();
        for a in 0..3 {
            let d = p[a] + shift[a] - t[a];
            s = s + d * d;
        }
        acc += s.sqrt();
    }
    acc / real::<T>(pred.joint_count() as f64)
}

/// Closed-form similarity alignment (rotation, uniform scale, translation)
/// of `src` onto `dst` via SVD of the cross-covariance, with the
/// reflection fix on the smallest singular direction. `None` when the
/// source points are (numerically) coincident.
fn umeyama(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Option<(f64, Matrix3<f64>, Vector3<f64>)> {
    let n = src.len() as f64;
    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for (s, d) in src.iter().zip(dst) {
        mu_s += Vector3::from_column_slice(s);
        mu_d += Vector3::from_column_slice(d);
    }
    mu_s /= n;
    mu_d /= n;

    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let sc = Vector3::from_column_slice(s) - mu_s;
        let dc = Vector3::from_column_slice(d) - mu_d;
        cov += dc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;
    if var_s < 1e-24 {
        return None;
    }

    let svd = cov.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut d_fix = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * vt.determinant()) < 0.0 {
        d_fix[2] = -1.0;
    }
    let rot = u * Matrix3::from_diagonal(&d_fix) * vt;
    let scale = (svd.singular_values.dot(&d_fix)) / var_s;
    let t = mu_d - rot * mu_s * scale;
    Some((scale, rot, t))
}

/// Procrustes-aligned MPJPE in meters; the flag marks a degenerate
/// alignment (coincident prediction), in which case the unaligned error
/// is returned.
pub fn pa_mpjpe<T: Real>(pred: &Skeleton<T>, target: &Skeleton<T>) -> (T, bool) {
    assert_eq!(pred.joint_count(), target.joint_count());
    let src: Vec<[f64; 3]> = pred
        .joints
        .iter()
        .map(|j| [j[0].to_f64().unwrap(), j[1].to_f64().unwrap(), j[2].to_f64().unwrap()])
        .collect();
    let dst: Vec<[f64; 3]> = target
        .joints
        .iter()
        .map(|j| [j[0].to_f64().unwrap(), j[1].to_f64().unwrap(), j[2].to_f64().unwrap()])
        .collect();
    match umeyama(&src, &dst) {
        Some((s, r, t)) => {
            let mut acc = 0.0;
            for (p, d) in src.iter().zip(&dst) {
                let aligned = r * Vector3::from_column_slice(p) * s + t;
                let diff = aligned - Vector3::from_column_slice(d);
                acc += diff.norm();
            }
            (real(acc / src.len() as f64), false)
        }
        None => {
            log::warn!("pa_mpjpe: degenerate prediction, returning unaligned error");
            let mut acc = 0.0;
            for (p, d) in src.iter().zip(&dst) {
                let diff = Vector3::from_column_slice(p) - Vector3::from_column_slice(d);
                acc += diff.norm();
            }
            (real(acc / src.len() as f64), true)
        }
    }
}

/// Eval-mode inference over all labeled frames, aggregating the chosen
/// protocol's metrics. Deterministic: fixed chunking and accumulation
/// order, dropout off.
pub fn evaluate<T: Real>(
    ds: &Dataset<T>,
    params: &ParamSet<T>,
    mcfg: &ModelConfig,
    gcfg: &GraphConfig,
    protocol: Protocol,
) -> Result<MetricReport<T>, EvalError> {
    let labeled: Vec<_> = ds
        .frames
        .iter()
        .filter(|f| f.keypoints.is_some())
        .collect();
    if labeled.is_empty() {
        return Err(EvalError::Unlabeled);
    }
    let j = labeled[0].keypoints.as_ref().unwrap().joint_count();
    if j != mcfg.joint_count {
        return Err(EvalError::JointCountMismatch(j, mcfg.joint_count));
    }

    let mut all_pred: Vec<T> = Vec::with_capacity(labeled.len() * 3 * j);
    let mut all_target: Vec<T> = Vec::with_capacity(labeled.len() * 3 * j);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in labeled.chunks(32) {
        let batch = build_batch(chunk, gcfg).map_err(|e| EvalError::Model(e.to_string()))?;
        let mut tape = crate::autodiff::Tape::new();
        let pass = model::forward(&mut tape, &batch, params, mcfg, false, &mut rng)
            .map_err(|e| EvalError::Model(e.to_string()))?;
        all_pred.extend_from_slice(tape.data(pass.output));
        all_target.extend_from_slice(&batch.targets);
    }

    let mut report = MetricReport {
        frame_count: labeled.len(),
        mae_xyz: None,
        mae_avg: None,
        rmse_xyz: None,
        rmse_avg: None,
        mpjpe: None,
        pa_mpjpe: None,
        degenerate_frames: 0,
    };
    match protocol {
        Protocol::Mars => {
            let (mae, mae_avg, rmse, rmse_avg) = mae_rmse(&all_pred, &all_target);
            report.mae_xyz = Some(mae);
            report.mae_avg = Some(mae_avg);
            report.rmse_xyz = Some(rmse);
            report.rmse_avg = Some(rmse_avg);
        }
        Protocol::Mri => {
            let mut mpjpe_acc = 0.0f64;
            let mut pa_acc = 0.0f64;
            for (b, f) in labeled.iter().enumerate() {
                let target = f.keypoints.as_ref().unwrap();
                let flat = &all_pred[b * 3 * j..(b + 1) * 3 * j];
                let pred = Skeleton::from_flat(flat, target.left_hip, target.right_hip);
                mpjpe_acc += mpjpe_pelvis_aligned(&pred, target).to_f64().unwrap();
                let (pa, degenerate) = pa_mpjpe(&pred, target);
                pa_acc += pa.to_f64().unwrap();
                if degenerate {
                    report.degenerate_frames += 1;
                }
            }
            let n = labeled.len() as f64;
            report.mpjpe = Some(real(mpjpe_acc / n * M_TO_CM));
            report.pa_mpjpe = Some(real(pa_acc / n * M_TO_CM));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_skeleton(rng: &mut ChaCha8Rng, j: usize) -> Skeleton<f64> {
        let joints = (0..j)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        Skeleton::new(joints, 0, 1)
    }

    fn rand_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        // QR of a random matrix, sign-fixed to a proper rotation
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let qr = m.qr();
        let mut q = qr.q();
        if q.determinant() < 0.0 {
            q.column_mut(2).neg_mut();
        }
        q
    }

    #[test]
    fn pa_mpjpe_recovers_similarity_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let target = rand_skeleton(&mut rng, 13);
            let r = rand_rotation(&mut rng);
            let s = rng.gen_range(0.5..2.0);
            let t = Vector3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let joints = target
                .joints
                .iter()
                .map(|j| {
                    let v = s * (r * Vector3::from_column_slice(j)) + t;
                    [v[0], v[1], v[2]]
                })
                .collect();
            let pred = Skeleton::new(joints, 0, 1);
            let (err, degenerate) = pa_mpjpe(&pred, &target);
            assert!(!degenerate);
            assert!(err < 1e-9, "residual {err}");
        }
    }

    #[test]
    fn pelvis_alignment_removes_pure_translations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let target = rand_skeleton(&mut rng, 13);
            let t = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let joints = target
                .joints
                .iter()
                .map(|j| [j[0] + t[0], j[1] + t[1], j[2] + t[2]])
                .collect();
            let pred = Skeleton::new(joints, 0, 1);
            assert!(mpjpe_pelvis_aligned(&pred, &target) < 1e-12);
        }
    }

    #[test]
    fn procrustes_never_exceeds_pelvis_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = rand_skeleton(&mut rng, 9);
            let b = rand_skeleton(&mut rng, 9);
            let (pa, _) = pa_mpjpe(&a, &b);
            let pelvis = mpjpe_pelvis_aligned(&a, &b);
            assert!(pa <= pelvis + 1e-12, "pa {pa} pelvis {pelvis}");
        }
    }

    #[test]
    fn degenerate_prediction_is_flagged_not_fatal() {
        let target = rand_skeleton(&mut ChaCha8Rng::seed_from_u64(4), 5);
        let pred = Skeleton::new(vec![[0.5, 0.5, 0.5]; 5], 0, 1);
        let (err, degenerate) = pa_mpjpe(&pred, &target);
        assert!(degenerate);
        assert!(err.is_finite());
    }

    #[test]
    fn mae_rmse_match_closed_form() {
        // one point off by (3, 0, 4) m, one exact → in cm
        let pred: Vec<f64> = vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0];
        let target: Vec<f64> = vec![0.0; 6];
        let (mae, mae_avg, rmse, rmse_avg) = mae_rmse(&pred, &target);
        assert!((mae[0] - 150.0).abs() < 1e-9);
        assert!((mae[1] - 0.0).abs() < 1e-9);
        assert!((mae[2] - 200.0).abs() < 1e-9);
        assert!((mae_avg - 350.0 / 3.0).abs() < 1e-9);
        let rx = (300.0f64.powi(2) / 2.0).sqrt();
        let rz = (400.0f64.powi(2) / 2.0).sqrt();
        assert!((rmse[0] - rx).abs() < 1e-9);
        assert!((rmse[2] - rz).abs() < 1e-9);
        assert!((rmse_avg - (rx + rz) / 3.0).abs() < 1e-9);
    }

    #[test]
    fn report_text_is_protocol_shaped() {
        use crate::data::synth_dataset;
        use crate::model;
        let mut mcfg = model::ModelConfig::new(3);
        mcfg.edge_widths = vec![4, 4, 4];
        mcfg.gat_width = 8;
        mcfg.head_hidden = vec![8];
        let params = model::init_params::<f64>(&mcfg, 11);
        let ds = synth_dataset::<f64>(4, 6, 3, 0.02, 12);
        let gcfg = GraphConfig {
            k_neighbors: 2,
            include_edge_features: true,
        };
        let mars = evaluate(&ds, &params, &mcfg, &gcfg, Protocol::Mars).unwrap();
        let text = mars.to_text();
        assert!(text.contains("mae_avg_cm:"));
        assert!(text.contains("rmse_avg_cm:"));
        assert!(!text.contains("mpjpe_cm:"));

        let mri = evaluate(&ds, &params, &mcfg, &gcfg, Protocol::Mri).unwrap();
        let text = mri.to_text();
        assert!(text.contains("mpjpe_cm:"));
        assert!(text.contains("pa_mpjpe_cm:"));
        assert!(!text.contains("mae_avg_cm:"));
        assert_eq!(mri.frame_count, 4);
    }

    #[test]
    fn protocol_parse() {
        assert_eq!(Protocol::parse("mars"), Some(Protocol::Mars));
        assert_eq!(Protocol::parse("mri"), Some(Protocol::Mri));
        assert_eq!(Protocol::parse("other"), None);
    }
}
