//! Acceptance gate: one test per shipped guarantee, each printing a single
//! pass/fail line. Run with `cargo test --test acceptance`.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mmgat::data::{denoise_volume, synth_dataset, Dataset, RadarFrame, RadarPoint, Skeleton};
use mmgat::gradcheck::run_canonical_gradcheck;
use mmgat::graph::{build_batch, edge_feature, knn_neighbors, GraphConfig};
use mmgat::metrics::{evaluate, mae_rmse, mpjpe_pelvis_aligned, pa_mpjpe, Protocol};
use mmgat::model::{forward, init_params, ModelConfig};
use mmgat::train::{train, LossKind, TrainConfig};
use mmgat::Tape64;

fn report(criterion: &str, ok: bool) {
    println!("acceptance: {criterion}: {}", if ok { "pass" } else { "fail" });
    assert!(ok, "{criterion} failed");
}

fn small_cfg() -> ModelConfig {
    let mut cfg = ModelConfig::new(3);
    cfg.edge_widths = vec![8, 8, 8];
    cfg.gat_width = 16;
    cfg.head_hidden = vec![16, 16];
    cfg
}

fn rand_point(rng: &mut ChaCha8Rng) -> RadarPoint<f64> {
    RadarPoint {
        x: rng.gen_range(-2.0..2.0),
        y: rng.gen_range(-2.0..2.0),
        z: rng.gen_range(-2.0..2.0),
        v: rng.gen_range(-1.0..1.0),
        intensity: rng.gen_range(0.0..1.0),
    }
}

#[test]
fn criterion_01_gradient_fidelity() {
    let outcome = run_canonical_gradcheck(1e-5);
    let ok = outcome.max_rel_err < 1e-4 && outcome.elapsed.as_secs_f64() < 60.0;
    println!(
        "  gradcheck: {} scalars, max rel err {:.3e} at {}, {:.1}s",
        outcome.params_checked,
        outcome.max_rel_err,
        outcome.worst_param,
        outcome.elapsed.as_secs_f64()
    );
    report("criterion 1 (gradient fidelity, full model, h=1e-5)", ok);
}

#[test]
fn criterion_02_attention_normalization() {
    let cfg = small_cfg();
    let params = init_params::<f64>(&cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut ok = true;
    for trial in 0..100u64 {
        let n = rng.gen_range(2..=20);
        let k = rng.gen_range(0..=4).min(n - 1);
        let ds = synth_dataset::<f64>(1, n, 3, 0.05, 1000 + trial);
        let frames: Vec<&_> = ds.frames.iter().collect();
        let gcfg = GraphConfig {
            k_neighbors: k,
            include_edge_features: true,
        };
        let batch = build_batch(&frames, &gcfg).unwrap();
        let mut tape = Tape64::new();
        let mut frng = ChaCha8Rng::seed_from_u64(0);
        let pass = forward(&mut tape, &batch, &params, &cfg, false, &mut frng).unwrap();
        for &alpha in &pass.attention {
            let a = tape.data(alpha);
            let mut sums = vec![0.0f64; batch.n_nodes];
            for (e, &d) in batch.edge_dst.iter().enumerate() {
                sums[d] += a[e];
            }
            ok &= sums.iter().all(|s| (s - 1.0).abs() < 1e-12);
        }
    }
    report(
        "criterion 2 (attention sums to 1 per target, 100 random graphs)",
        ok,
    );
}

#[test]
fn criterion_03_symmetric_inputs_give_uniform_attention() {
    let cfg = small_cfg();
    let mut ok = true;
    for k in [1usize, 3, 7] {
        let p = RadarPoint {
            x: 0.3,
            y: -0.4,
            z: 1.1,
            v: 0.2,
            intensity: 0.8,
        };
        let frame = RadarFrame {
            frame_id: 0,
            points: vec![p; k + 2],
            keypoints: Some(Skeleton::new(vec![[0.0, 0.0, 0.0]; 3], 0, 1)),
        };
        let gcfg = GraphConfig {
            k_neighbors: k,
            include_edge_features: true,
        };
        let batch = build_batch(&[&frame], &gcfg).unwrap();
        let params = init_params::<f64>(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape64::new();
        let pass = forward(&mut tape, &batch, &params, &cfg, false, &mut rng).unwrap();
        let want = 1.0 / (k as f64 + 1.0);
        for &alpha in &pass.attention {
            ok &= tape.data(alpha).iter().all(|a| (a - want).abs() < 1e-12);
        }
    }
    report(
        "criterion 3 (identical nodes and zero edges give uniform 1/(K+1) attention)",
        ok,
    );
}

#[test]
fn criterion_04_knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut ok = true;
    for _ in 0..500 {
        let n = rng.gen_range(2..=64);
        let pts: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ]
            })
            .collect();
        for k in [0usize, 1, 5, 20] {
            let got = knn_neighbors(&pts, k);
            for j in 0..n {
                // independent oracle: full pairwise sort by (distance, index)
                let mut cand: Vec<(f64, usize)> = (0..n)
                    .filter(|&i| i != j)
                    .map(|i| {
                        let d2 = (0..3).map(|a| (pts[i][a] - pts[j][a]).powi(2)).sum();
                        (d2, i)
                    })
                    .collect();
                cand.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let want: Vec<usize> = cand.into_iter().take(k).map(|(_, i)| i).collect();
                ok &= got[j] == want;
            }
        }
    }
    report("criterion 4 (KNN matches brute-force oracle, 500 frames)", ok);
}

#[test]
fn criterion_05_edge_features_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut ok = true;
    for _ in 0..10_000 {
        let src = rand_point(&mut rng);
        let dst = rand_point(&mut rng);
        let got = edge_feature(&src, &dst);
        // scalar oracle, written without shared helpers
        let (dx, dy, dz) = (src.x - dst.x, src.y - dst.y, src.z - dst.z);
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        let want = if dist > 0.0 {
            [
                dist,
                dx / dist,
                dy / dist,
                dz / dist,
                src.v - dst.v,
                src.intensity - dst.intensity,
            ]
        } else {
            [0.0; 6]
        };
        ok &= got
            .iter()
            .zip(&want)
            .all(|(g, w)| (g - w).abs() < 1e-12);
    }

    let dst: RadarPoint<f64> = RadarPoint {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        v: 0.1,
        intensity: 0.5,
    };
    let src = RadarPoint {
        x: 3.0,
        y: 4.0,
        z: 0.0,
        v: 0.4,
        intensity: 0.9,
    };
    let f = edge_feature(&src, &dst);
    ok &= f[0] == 5.0 && f[1] == 0.6 && f[2] == 0.8 && f[3] == 0.0;
    ok &= (f[4] - 0.3).abs() < 1e-15 && (f[5] - 0.4).abs() < 1e-15;
    ok &= edge_feature(&dst, &dst) == [0.0; 6];
    report(
        "criterion 5 (edge features match scalar oracle, 3-4-5 exact, coincident zero)",
        ok,
    );
}

#[test]
fn criterion_06_permutation_invariance() {
    let cfg = small_cfg();
    let params = init_params::<f64>(&cfg, 6);
    let gcfg = GraphConfig {
        k_neighbors: 3,
        include_edge_features: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut ok = true;
    for _ in 0..100 {
        // random points make pairwise distances distinct with probability 1
        let points: Vec<RadarPoint<f64>> = (0..8).map(|_| rand_point(&mut rng)).collect();
        let skel = Skeleton::new(vec![[0.1, 0.2, 0.3]; 3], 0, 1);
        let frame = RadarFrame {
            frame_id: 0,
            points: points.clone(),
            keypoints: Some(skel.clone()),
        };
        let mut perm: Vec<usize> = (0..points.len()).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let permuted = RadarFrame {
            frame_id: 0,
            points: perm.iter().map(|&i| points[i]).collect(),
            keypoints: Some(skel),
        };

        let eval = |f: &RadarFrame<f64>| {
            let batch = build_batch(&[f], &gcfg).unwrap();
            let mut tape = Tape64::new();
            let mut frng = ChaCha8Rng::seed_from_u64(0);
            let pass = forward(&mut tape, &batch, &params, &cfg, false, &mut frng).unwrap();
            tape.data(pass.output).to_vec()
        };
        let a = eval(&frame);
        let b = eval(&permuted);
        ok &= a
            .iter()
            .zip(&b)
            .all(|(x, y)| (x - y).abs() < 1e-9);
    }
    report(
        "criterion 6 (eval output invariant to point permutation, 100 trials)",
        ok,
    );
}

#[test]
fn criterion_07_overfit_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset::<f64>(32, 24, 17, 0.02, 7);
    let cfg = TrainConfig {
        batch_size: 4,
        epochs: 250,
        base_lr: 1e-3,
        lr_factor: 0.995,
        k_neighbors: 20,
        window: 1,
        denoise_bound: None,
        loss: LossKind::Mpjpe,
        seed: 7,
        eval_every: 0,
        checkpoint_path: dir.path().join("overfit.ckpt"),
        val_fraction: None,
        include_edge_features: true,
    };
    let t0 = std::time::Instant::now();
    let out = train(&ds, &cfg, None).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    // eval-mode MPJPE over the training frames, reported in cm
    let gcfg = GraphConfig {
        k_neighbors: cfg.k_neighbors,
        include_edge_features: true,
    };
    let report_mri = evaluate(&ds, &out.params, &out.model, &gcfg, Protocol::Mri).unwrap();
    let mpjpe_cm = report_mri.mpjpe.unwrap();
    println!("  overfit: train MPJPE {mpjpe_cm:.4} cm after 2000 steps, {elapsed:.0}s");
    let ok = mpjpe_cm < 1.0 && elapsed < 600.0;
    report("criterion 7 (overfits 32 frames to MPJPE < 1 cm in 2000 steps)", ok);
}

/// A target that depends only on relative point geometry: points get a
/// random per-frame translation while labels are pelvis-centered, so the
/// edge-featured model has the signal and the ablated one must infer it
/// from absolute coordinates.
fn relative_task(seed: u64) -> Dataset<f64> {
    let mut ds = synth_dataset::<f64>(16, 24, 9, 0.01, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for f in &mut ds.frames {
        let t = [
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ];
        for p in &mut f.points {
            p.x += t[0];
            p.y += t[1];
            p.z += t[2];
        }
        let sk = f.keypoints.as_ref().unwrap();
        let pelvis = sk.pelvis();
        let joints = sk
            .joints
            .iter()
            .map(|j| [j[0] - pelvis[0], j[1] - pelvis[1], j[2] - pelvis[2]])
            .collect();
        f.keypoints = Some(Skeleton::new(joints, sk.left_hip, sk.right_hip));
    }
    ds
}

#[test]
fn criterion_08_ablation_mechanics() {
    let dir = tempfile::tempdir().unwrap();
    let run = |ds: &Dataset<f64>, k: usize, feats: bool, seed: u64| {
        let cfg = TrainConfig {
            batch_size: 8,
            epochs: 50,
            base_lr: 1e-3,
            lr_factor: 0.995,
            k_neighbors: k,
            window: 1,
            denoise_bound: None,
            loss: LossKind::Mse,
            seed,
            eval_every: 0,
            checkpoint_path: dir.path().join("abl.ckpt"),
            val_fraction: None,
            include_edge_features: feats,
        };
        let out = train(ds, &cfg, None).unwrap();
        out.log.records.last().unwrap().train_loss
    };
    let mut wins = 0;
    for seed in [1u64, 2, 3] {
        let ds = relative_task(seed);
        let full = run(&ds, 20, true, seed);
        let ablated = run(&ds, 0, false, seed);
        println!("  ablation seed {seed}: k20 {full:.4e} vs k0 {ablated:.4e}");
        if full < ablated {
            wins += 1;
        }
    }
    report(
        "criterion 8 (edge-featured K=20 beats ablated K=0 on relative-geometry task, majority of 3 seeds)",
        wins >= 2,
    );
}

fn rand_skeleton(rng: &mut ChaCha8Rng, joints: usize) -> Skeleton<f64> {
    Skeleton::new(
        (0..joints)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect(),
        0,
        1,
    )
}

fn rand_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    let qr = a.qr();
    let mut q = qr.q();
    if q.determinant() < 0.0 {
        q.column_mut(2).neg_mut();
    }
    q
}

#[test]
fn criterion_09_metric_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut ok = true;

    for _ in 0..100 {
        let target = rand_skeleton(&mut rng, 7);
        let r = rand_rotation(&mut rng);
        let s = rng.gen_range(0.5..2.0);
        let t = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let joints = target
            .joints
            .iter()
            .map(|j| {
                let p = s * (r * Vector3::new(j[0], j[1], j[2])) + t;
                [p.x, p.y, p.z]
            })
            .collect();
        let pred = Skeleton::new(joints, 0, 1);
        let (err, degenerate) = pa_mpjpe(&pred, &target);
        ok &= !degenerate && err < 1e-9;
    }

    for _ in 0..100 {
        let target = rand_skeleton(&mut rng, 7);
        let t = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let joints = target
            .joints
            .iter()
            .map(|j| [j[0] + t[0], j[1] + t[1], j[2] + t[2]])
            .collect();
        let pred = Skeleton::new(joints, 0, 1);
        ok &= mpjpe_pelvis_aligned(&pred, &target) < 1e-12;
    }

    for _ in 0..1000 {
        let target = rand_skeleton(&mut rng, 5);
        let pred = rand_skeleton(&mut rng, 5);
        let (pa, _) = pa_mpjpe(&pred, &target);
        ok &= pa <= mpjpe_pelvis_aligned(&pred, &target) + 1e-12;
    }

    // closed form: one point off by (3, 0, 4) m, one exact, reported in cm
    let pred: Vec<f64> = vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0];
    let tgt: Vec<f64> = vec![0.0; 6];
    let (mae, mae_avg, rmse, rmse_avg) = mae_rmse(&pred, &tgt);
    ok &= (mae[0] - 150.0).abs() < 1e-9 && mae[1] == 0.0 && (mae[2] - 200.0).abs() < 1e-9;
    ok &= (mae_avg - 350.0 / 3.0).abs() < 1e-9;
    let rx = (300.0f64.powi(2) / 2.0).sqrt();
    let rz = (400.0f64.powi(2) / 2.0).sqrt();
    ok &= (rmse[0] - rx).abs() < 1e-9 && (rmse[2] - rz).abs() < 1e-9;
    ok &= (rmse_avg - (rx + rz) / 3.0).abs() < 1e-9;

    report(
        "criterion 9 (PA-MPJPE recovers similarity transforms, pelvis alignment kills translations, PA <= pelvis, MAE/RMSE closed forms)",
        ok,
    );
}

#[test]
fn criterion_10_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_dataset::<f64>(8, 6, 3, 0.02, 10);
    let make_cfg = |name: &str, epochs: u64| TrainConfig {
        batch_size: 3,
        epochs,
        base_lr: 1e-3,
        lr_factor: 0.995,
        k_neighbors: 3,
        window: 1,
        denoise_bound: None,
        loss: LossKind::Mse,
        seed: 13,
        eval_every: 0,
        checkpoint_path: dir.path().join(name),
        val_fraction: Some(0.25),
        include_edge_features: true,
    };
    let mut ok = true;

    let cfg_a = make_cfg("a.ckpt", 3);
    let cfg_b = make_cfg("b.ckpt", 3);
    let a = train(&ds, &cfg_a, None).unwrap();
    let b = train(&ds, &cfg_b, None).unwrap();
    ok &= a.log.to_lines() == b.log.to_lines();
    ok &= std::fs::read(&cfg_a.checkpoint_path).unwrap()
        == std::fs::read(&cfg_b.checkpoint_path).unwrap();

    // save -> load -> resume equals the uninterrupted run, byte for byte
    let cfg_part = make_cfg("part.ckpt", 1);
    train(&ds, &cfg_part, None).unwrap();
    let ck = mmgat::checkpoint::load_checkpoint::<f64>(&cfg_part.checkpoint_path).unwrap();
    let cfg_rest = make_cfg("rest.ckpt", 3);
    let resumed = train(&ds, &cfg_rest, Some(ck)).unwrap();
    ok &= std::fs::read(&cfg_a.checkpoint_path).unwrap()
        == std::fs::read(&cfg_rest.checkpoint_path).unwrap();
    for (x, y) in a.params.entries().iter().zip(resumed.params.entries()) {
        ok &= x.data == y.data;
    }

    report(
        "criterion 10 (seeded runs bit-identical, resume equals uninterrupted run)",
        ok,
    );
}

#[test]
fn criterion_11_denoising_removes_exactly_planted_frames() {
    let mut ds = synth_dataset::<f64>(12, 5, 3, 0.0, 11);
    let planted: Vec<u64> = vec![ds.frames[2].frame_id, ds.frames[7].frame_id];
    ds.frames[2].keypoints.as_mut().unwrap().joints[0][2] = 6.0;
    ds.frames[7].keypoints.as_mut().unwrap().joints[1][0] = -5.5;
    let (kept, removed) = denoise_volume(&ds, 5.0);
    let ok = removed == planted
        && kept.frames.len() == 10
        && kept
            .frames
            .iter()
            .map(|f| f.frame_id)
            .collect::<HashSet<_>>()
            .is_disjoint(&planted.iter().copied().collect());
    report(
        "criterion 11 (denoising at 5 m removes exactly the planted frames)",
        ok,
    );
}
