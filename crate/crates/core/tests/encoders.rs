mod common;

use archdiff::encoders::{
    mask_counts, patch_features, plan_global, prepare_jaw, pretrain_mae, EncoderConfig, EncoderFlags, Encoders,
    GlobalEncoder, LocalEncoder, LocalKind, Mae, MaeConfig, PointLocalEncoder, Propagation, SaConfig,
};
use archdiff::geometry::{sample_jaw_points, JawModel, ToothMesh, Vec3};
use archdiff::nn::{check_gradients, AttentionMode, Builder, ParamStore, Tape};
use archdiff::synth::{generate_jaw, ArchSpec};
use archdiff::Error;
use common::{grad_check, random_matrix};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

fn jaw() -> JawModel {
    generate_jaw(&ArchSpec::default(), 0).unwrap()
}

fn tooth(i: usize) -> ToothMesh {
    jaw().teeth.values().nth(i).unwrap().clone()
}

fn builder_store(seed: u64) -> (ParamStore, rand_chacha::ChaCha8Rng) {
    (ParamStore::new(), common::rng(seed))
}

#[test]
fn local_encoder_shape_determinism_and_position() {
    let (mut store, mut rng) = builder_store(1);
    let enc = LocalEncoder::new(&mut Builder::new(&mut store, &mut rng), 64, 16, 2, 4);
    let t = tooth(0);
    let pf = patch_features(&t).unwrap();
    assert_eq!(pf.features.nrows(), t.faces.len() / 64);
    let a = enc.encode(&store, &pf.features, &pf.centers, pf.features.nrows()).unwrap();
    assert_eq!(a.dim(), (1, 16));
    assert_eq!(a, enc.encode(&store, &pf.features, &pf.centers, pf.features.nrows()).unwrap());

    let moved = patch_features(&t.translated(&Vec3::new(10.0, 0.0, 0.0))).unwrap();
    let b = enc.encode(&store, &moved.features, &moved.centers, moved.features.nrows()).unwrap();
    assert!((&a - &b).iter().any(|d| d.abs() > 1e-6));

    assert!(matches!(enc.encode(&store, &pf.features, &pf.centers, 0), Err(Error::Shape(_))));
}

#[test]
fn mask_ratio_bounds() {
    assert_eq!(mask_counts(16, 0.75).unwrap(), (12, 4));
    for bad in [0.0, 1.0, -0.1, 1.5] {
        let cfg = MaeConfig { mask_ratio: bad, ..MaeConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{bad}");
        assert!(pretrain_mae(&[tooth(0)], &EncoderConfig::default(), &cfg).is_err());
    }
}

#[test]
fn masked_content_never_reaches_the_encoder() {
    let (mut store, mut rng) = builder_store(2);
    let mae = Mae::new(&mut Builder::new(&mut store, &mut rng), 64, &EncoderConfig::default(), 1);
    let mut pf = patch_features(&tooth(3)).unwrap();
    let (masked, visible) = archdiff::encoders::random_mask(pf.features.nrows(), 0.75, &mut rng).unwrap();
    for &m in &masked {
        pf.features.row_mut(m).fill(f64::NAN);
        pf.corners.row_mut(m).fill(f64::NAN);
    }
    let mut t = Tape::new(&store);
    let out = mae.encode_visible(&mut t, &pf, &visible);
    assert_eq!(t.value(out).nrows(), visible.len());
    assert!(t.value(out).iter().all(|v| v.is_finite()));
}

#[test]
fn pretraining_reduces_reconstruction_loss() {
    let teeth: Vec<ToothMesh> =
        (0..4).flat_map(|s| generate_jaw(&ArchSpec::default(), s).unwrap().teeth.into_values()).take(100).collect();
    assert_eq!(teeth.len(), 100);
    let enc = EncoderConfig { d_local: 16, local_depth: 1, ..EncoderConfig::default() };
    let cfg = MaeConfig { epochs: 50, ..MaeConfig::default() };
    let out = pretrain_mae(&teeth, &enc, &cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.epoch_losses.len(), 50);
    assert!(r.final_loss < r.initial_loss, "{} -> {}", r.initial_loss, r.final_loss);
    assert!(out.encoder_weights().iter().all(|p| p.name.starts_with("local.")));
}

#[test]
fn propagation_is_permutation_equivariant() {
    let (mut store, mut rng) = builder_store(3);
    let prop = Propagation::new(&mut Builder::new(&mut store, &mut rng), 16, 2, 4);
    let x = random_matrix(9, 16, 1);
    let c = random_matrix(9, 3, 2) * 20.0;
    let y = prop.propagate(&store, &x, &c, AttentionMode::Softmax).unwrap();
    assert_eq!(y.dim(), (9, 16));
    let mut perm: Vec<usize> = (0..9).collect();
    perm.shuffle(&mut rng);
    let yp =
        prop.propagate(&store, &x.select(Axis(0), &perm), &c.select(Axis(0), &perm), AttentionMode::Softmax).unwrap();
    assert!((yp - y.select(Axis(0), &perm)).iter().all(|d| d.abs() < 1e-5));

    // a single tooth sees only itself
    let one = prop
        .propagate(
            &store,
            &x.slice(ndarray::s![..1, ..]).to_owned(),
            &c.slice(ndarray::s![..1, ..]).to_owned(),
            AttentionMode::Softmax,
        )
        .unwrap();
    assert_eq!(one.dim(), (1, 16));

    assert!(matches!(
        prop.propagate(&store, &x, &random_matrix(8, 3, 3), AttentionMode::Softmax),
        Err(Error::Shape(_))
    ));
}

/// With uniform attention and identical inputs at every token, only the
/// positional term can tell tokens apart; with identical centers too, all
/// outputs coincide.
#[test]
fn uniform_attention_degenerates() {
    let (mut store, mut rng) = builder_store(4);
    let prop = Propagation::new(&mut Builder::new(&mut store, &mut rng), 16, 1, 4);
    let row = random_matrix(1, 16, 5);
    let x = row.broadcast((6, 16)).unwrap().to_owned();
    let c = Array2::from_elem((6, 3), 2.5);
    let y = prop.propagate(&store, &x, &c, AttentionMode::Uniform).unwrap();
    for r in 1..6 {
        assert!((&y.row(r) - &y.row(0)).iter().all(|d| d.abs() < 1e-12));
    }
    // distinct positions only enter through the residual path once the
    // mixed value is shared
    let c2 = random_matrix(6, 3, 6) * 10.0;
    let y2 = prop.propagate(&store, &x, &c2, AttentionMode::Uniform).unwrap();
    assert!((&y2.row(1) - &y2.row(0)).iter().any(|d| d.abs() > 1e-9));
}

fn global_cfg() -> (SaConfig, SaConfig) {
    (SaConfig { npoint: 64, radius: 4.0, k: 8 }, SaConfig { npoint: 16, radius: 12.0, k: 8 })
}

fn cloud() -> Vec<Vec3> {
    sample_jaw_points(&jaw(), 24, 1).unwrap().into_values().flatten().collect()
}

#[test]
fn global_feature_is_a_set_function() {
    let (mut store, mut rng) = builder_store(5);
    let enc = GlobalEncoder::new(&mut Builder::new(&mut store, &mut rng), 16);
    let (sa1, sa2) = global_cfg();
    let run = |pts: &[Vec3]| {
        let plan = plan_global(pts, &sa1, &sa2).unwrap();
        let mut t = Tape::new(&store);
        let out = enc.forward(&mut t, &plan);
        t.value(out).clone()
    };
    let pts = cloud();
    let base = run(&pts);
    assert_eq!(base.dim(), (1, 16));
    let mut shuffled = pts.clone();
    shuffled.shuffle(&mut rng);
    assert!((run(&shuffled) - &base).iter().all(|d| d.abs() < 1e-5));
    let doubled: Vec<Vec3> = pts.iter().chain(pts.iter()).copied().collect();
    assert!((run(&doubled) - &base).iter().all(|d| d.abs() < 1e-5));
    assert!(matches!(plan_global(&pts[..10], &sa1, &sa2), Err(Error::Shape(_))));
}

#[test]
fn gradients_local_encoder() {
    let (mut store, mut rng) = builder_store(10);
    let enc = LocalEncoder::new(&mut Builder::new(&mut store, &mut rng), 64, 8, 1, 2);
    let pf = patch_features(&tooth(1)).unwrap();
    let n = pf.features.nrows();
    grad_check(&mut store, |t| enc.forward(t, &pf.features, &pf.centers, n).unwrap());
}

#[test]
fn gradients_mae() {
    let (mut store, mut rng) = builder_store(11);
    let enc = EncoderConfig { d_local: 8, local_depth: 1, heads: 2, ..EncoderConfig::default() };
    let mae = Mae::new(&mut Builder::new(&mut store, &mut rng), 64, &enc, 1);
    let pf = patch_features(&tooth(2)).unwrap();
    let (masked, visible) = archdiff::encoders::random_mask(pf.features.nrows(), 0.75, &mut rng).unwrap();
    let (_, grads) = mae.loss_and_grad(&store, &pf, &masked, &visible);
    let checks = check_gradients(&mut store, &grads, 10, 3, |s| mae.loss(s, &pf, &masked, &visible));
    assert_eq!(checks.len(), 10);
    for c in checks {
        assert!(c.rel_err < 1e-4, "{c:?}");
    }
}

#[test]
fn gradients_propagation() {
    let (mut store, mut rng) = builder_store(12);
    let prop = Propagation::new(&mut Builder::new(&mut store, &mut rng), 8, 2, 2);
    let x = random_matrix(5, 8, 1);
    let c = random_matrix(5, 3, 2) * 20.0;
    grad_check(&mut store, |t| {
        let xi = t.input(x.clone());
        prop.forward(t, xi, &c, AttentionMode::Softmax).unwrap()
    });
}

#[test]
fn gradients_global_encoder() {
    let (mut store, mut rng) = builder_store(13);
    let enc = GlobalEncoder::new(&mut Builder::new(&mut store, &mut rng), 8);
    let (sa1, sa2) = global_cfg();
    let plan = plan_global(&cloud(), &sa1, &sa2).unwrap();
    grad_check(&mut store, |t| enc.forward(t, &plan));
}

#[test]
fn gradients_point_local_encoder() {
    let (mut store, mut rng) = builder_store(14);
    let enc = PointLocalEncoder::new(&mut Builder::new(&mut store, &mut rng), 8);
    let pts = random_matrix(3 * 20, 3, 4);
    grad_check(&mut store, |t| enc.forward(t, &pts, 20));
}

#[test]
fn gradients_full_embedding() {
    let (mut store, mut rng) = builder_store(15);
    let cfg = EncoderConfig {
        d_local: 8,
        d_global: 8,
        local_depth: 1,
        prop_depth: 1,
        heads: 2,
        points_per_tooth: 16,
        sa1: SaConfig { npoint: 32, radius: 4.0, k: 4 },
        sa2: SaConfig { npoint: 8, radius: 12.0, k: 4 },
        ..EncoderConfig::default()
    };
    let mut small = jaw();
    small.teeth.retain(|l, _| l.code() % 10 <= 2 && l.jaw() == archdiff::geometry::Jaw::Upper);
    for local in [LocalKind::Mesh, LocalKind::Points] {
        let flags = EncoderFlags { local, ..EncoderFlags::default() };
        let mut store = ParamStore::new();
        let encs = Encoders::new(&mut Builder::new(&mut store, &mut rng), &cfg, flags, 64).unwrap();
        let prep = prepare_jaw(&small, &cfg, &flags).unwrap();
        let b = encs.bundle(&store, &prep).unwrap();
        assert_eq!(b.fused.dim(), (4, encs.fused_dim()));
        for k in 0..4 {
            assert_eq!(b.fused.row(k).slice(ndarray::s![..8]), b.e_g);
            assert_eq!(b.fused.row(k).slice(ndarray::s![8..11]), b.centers.row(k));
        }
        grad_check(&mut store, |t| encs.forward(t, &prep).unwrap().fused);
    }
    let _ = &mut store;
}
