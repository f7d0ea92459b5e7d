mod common;

use archdiff::geometry::{so3_exp, Jaw, JawModel, Mat3, TransformParams, Vec3};
use archdiff::metrics::{
    add_metric, arch_curve, csa_metric, discrete_frechet, distance_histogram, fd_cur_metric, hausdorff, me_rot_metric,
    pa_add_metric, rotation_error_deg, ArchCurve, DEFAULT_CURVE_SAMPLES,
};
use archdiff::synth::{generate_jaw, perturb, ArchSpec, PerturbSpec};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn noisy(model: &JawModel, sigma: f64, seed: u64) -> JawModel {
    let mut rng = rng(seed);
    map_vertices(model, |v| v + random_vec(&mut rng, sigma))
}

fn rigid(model: &JawModel, r: &Vec3, m: &Vec3) -> JawModel {
    let rot = so3_exp(r);
    map_vertices(model, |v| rot * v + m)
}

fn params(rows: &[[f64; 6]]) -> TransformParams {
    let labels: Vec<_> = [11, 12, 13, 14, 21, 22].iter().take(rows.len()).map(|&c| label(c)).collect();
    let mut p = TransformParams::zeros(&labels);
    for (l, r) in labels.iter().zip(rows) {
        p.per_tooth.insert(*l, *r);
    }
    p
}

#[test]
fn add_matches_pair_list() {
    let mut r = rng(1);
    for _ in 0..100 {
        let (k, n) = (r.random_range(1..=8), r.random_range(1..30));
        let gt = random_jaw(&mut r, k, n);
        let pred = noisy(&gt, 1.0, r.random());
        assert!((add_metric(&pred, &gt).unwrap() - add_oracle(&pred, &gt)).abs() < 1e-12);
    }
    let gt = random_jaw(&mut r, 3, 10);
    assert_eq!(add_metric(&gt, &gt).unwrap(), 0.0);
    let shifted = map_vertices(&gt, |v| v + Vec3::new(1.0, 0.0, 0.0));
    assert!((add_metric(&shifted, &gt).unwrap() - 1.0).abs() < 1e-12);
    let short = random_jaw(&mut r, 3, 9);
    assert!(add_metric(&short, &gt).is_err());
}

#[test]
fn fd_cur_matches_recursive_frechet() {
    let mut r = rng(2);
    for i in 0..20 {
        let gt = generate_jaw(&ArchSpec::default(), i).unwrap();
        let pred = perturb(&gt, &PerturbSpec::default(), r.random()).unwrap().input;
        let mut expected = 0.0;
        for jaw in [Jaw::Upper, Jaw::Lower] {
            let a = arch_curve(&pred, jaw, 40).unwrap();
            let b = arch_curve(&gt, jaw, 40).unwrap();
            expected += frechet_oracle(&a.samples, &b.samples) / 2.0;
        }
        assert!((fd_cur_metric(&pred, &gt, 40).unwrap() - expected).abs() < 1e-9);
    }
    let gt = generate_jaw(&ArchSpec::default(), 0).unwrap();
    assert_eq!(fd_cur_metric(&gt, &gt, DEFAULT_CURVE_SAMPLES).unwrap(), 0.0);
}

#[test]
fn frechet_on_polylines() {
    let mut r = rng(3);
    for _ in 0..100 {
        let (n, k) = (r.random_range(1..25), r.random_range(1..25));
        let a = random_cloud(&mut r, n, 5.0);
        let b = random_cloud(&mut r, k, 5.0);
        let fd = discrete_frechet(&a, &b);
        assert!((fd - frechet_oracle(&a, &b)).abs() < 1e-12);
        assert!(fd >= hausdorff(&a, &b) - 1e-12);
    }
}

/// Four incisors on a straight line; the ground truth sits 0.5 mm higher.
#[test]
fn parallel_lines_are_half_a_millimetre_apart() {
    let line = |z: f64| {
        let teeth: Vec<(u32, Vec<Vec3>)> =
            [12, 11, 21, 22].iter().enumerate().map(|(i, &c)| (c, vec![Vec3::new(i as f64 * 8.0, 0.0, z)])).collect();
        cloud_jaw("line", &teeth)
    };
    let (pred, gt) = (line(0.0), line(0.5));
    assert!((fd_cur_metric(&pred, &gt, DEFAULT_CURVE_SAMPLES).unwrap() - 0.5).abs() < 1e-9);
    let curve = arch_curve(&pred, Jaw::Upper, 50).unwrap();
    assert!(curve.samples.iter().all(|p| p.y.abs() < 1e-6 && p.z.abs() < 1e-6));
    // fewer than four teeth in a jaw
    let three = cloud_jaw("three", &[(11, vec![Vec3::zeros()]), (12, vec![Vec3::x()]), (13, vec![Vec3::y()])]);
    assert!(arch_curve(&three, Jaw::Upper, 10).is_err());
}

#[test]
fn reversed_landmarks_trace_the_same_curve() {
    let mut r = rng(4);
    for n in [4, 7, 14] {
        let pts: Vec<Vec3> = (0..n).map(|i| Vec3::new(i as f64 * 4.0, 0.0, 0.0) + random_vec(&mut r, 1.5)).collect();
        let fwd = ArchCurve::interpolate(Jaw::Upper, pts.clone(), 60).unwrap();
        let mut rev_pts = pts;
        rev_pts.reverse();
        let rev = ArchCurve::interpolate(Jaw::Upper, rev_pts, 60).unwrap();
        for (a, b) in fwd.samples.iter().zip(rev.samples.iter().rev()) {
            assert!((a - b).norm() < 1e-9, "n {n}");
        }
    }
}

#[test]
fn pa_add_recovers_rigid_motion() {
    let gt = generate_jaw(&ArchSpec::default(), 5).unwrap();
    let same = pa_add_metric(&gt, &gt).unwrap();
    assert!(same.value < 1e-9);
    assert!((same.registration.transform.rotation - Mat3::identity()).abs().max() < 1e-9);
    assert!(same.registration.transform.translation.norm() < 1e-9);

    let mut r = rng(5);
    for _ in 0..20 {
        let moved = rigid(&gt, &random_vec(&mut r, 2.0), &random_vec(&mut r, 10.0));
        assert!(pa_add_metric(&moved, &gt).unwrap().value < 1e-8);
    }
}

#[test]
fn registration_beats_raw_distance_under_noise() {
    let gt = generate_jaw(&ArchSpec::default(), 6).unwrap();
    let mut r = rng(6);
    for _ in 0..100 {
        let moved = rigid(&gt, &random_vec(&mut r, 0.3), &random_vec(&mut r, 2.0));
        let pred = noisy(&moved, 0.01, r.random());
        assert!(pa_add_metric(&pred, &gt).unwrap().value < add_metric(&pred, &gt).unwrap());
    }
}

#[test]
fn csa_examples() {
    let a = [0.3, -1.0, 0.2, 0.05, 0.0, -0.1];
    let neg = a.map(|x| -x);
    assert!((csa_metric(&params(&[a]), &params(&[a])).unwrap() - 1.0).abs() < 1e-12);
    assert!((csa_metric(&params(&[neg]), &params(&[a])).unwrap() + 1.0).abs() < 1e-12);
    let (x, y) = ([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(csa_metric(&params(&[x]), &params(&[y])).unwrap(), 0.0);
    let zero = [0.0; 6];
    assert_eq!(csa_metric(&params(&[zero]), &params(&[zero])).unwrap(), 1.0);
    assert_eq!(csa_metric(&params(&[zero]), &params(&[a])).unwrap(), 0.0);
    assert!(csa_metric(&params(&[a, a]), &params(&[a])).is_err());
}

#[test]
fn rotation_error_examples() {
    let ten = 10f64.to_radians();
    let pred = params(&[[0.0, 0.0, 0.0, 0.0, 0.0, ten]]);
    let gt = params(&[[0.0; 6]]);
    assert!((me_rot_metric(&pred, &gt).unwrap() - 10.0).abs() < 1e-6);
    assert_eq!(me_rot_metric(&gt, &gt).unwrap(), 0.0);
    assert!((rotation_error_deg(&[0.0, 0.0, std::f64::consts::PI], &[0.0; 3]) - 180.0).abs() < 1e-9);
}

#[test]
fn histogram_examples() {
    let edges = [0.5, 1.0, 1.5, 2.0];
    let perfect = distance_histogram(&[0.0, 0.0], &edges).unwrap();
    assert!(perfect.iter().all(|&(_, f)| f == 1.0));
    let one = distance_histogram(&[1.5], &edges).unwrap();
    assert_eq!(one.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
    assert!(distance_histogram(&[1.0], &[1.0, 0.5]).is_err());
    assert!(distance_histogram(&[], &edges).is_err());
}

fn row() -> impl Strategy<Value = [f64; 6]> {
    prop::array::uniform6(-2.0..2.0f64)
}

fn rotvec() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-4.0..4.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pa_add_ignores_rigid_motion_of_the_prediction(seed in 0u64..10_000, r in rotvec(), m in prop::array::uniform3(-10.0..10.0f64)) {
        let mut g = rng(seed);
        let gt = random_jaw(&mut g, 4, 12);
        let pred = noisy(&gt, 0.5, seed + 1);
        let moved = rigid(&pred, &r.into(), &m.into());
        let a = pa_add_metric(&pred, &gt).unwrap().value;
        let b = pa_add_metric(&moved, &gt).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn frechet_is_a_metric_on_polylines(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let [a, b, c] = [0, 1, 2].map(|_| {
            let n = g.random_range(2..15);
            random_cloud(&mut g, n, 3.0)
        });
        let ab = discrete_frechet(&a, &b);
        prop_assert!((ab - discrete_frechet(&b, &a)).abs() < 1e-12);
        prop_assert!(discrete_frechet(&a, &c) <= ab + discrete_frechet(&b, &c) + 1e-9);
    }

    #[test]
    fn fd_cur_is_symmetric(seed in 0u64..50, p in 0u64..1000) {
        let gt = generate_jaw(&ArchSpec::default(), seed).unwrap();
        let pred = perturb(&gt, &PerturbSpec::default(), p).unwrap().input;
        let ab = fd_cur_metric(&pred, &gt, 30).unwrap();
        let ba = fd_cur_metric(&gt, &pred, 30).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn csa_ignores_positive_scaling(a in row(), b in row(), s in 0.01..100.0f64) {
        let scaled = |x: [f64; 6]| x.map(|v| v * s);
        let base = csa_metric(&params(&[a]), &params(&[b])).unwrap();
        let both = csa_metric(&params(&[scaled(a)]), &params(&[scaled(b)])).unwrap();
        prop_assert!((base - both).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&base));
    }

    #[test]
    fn rotation_error_is_bounded_and_symmetric(a in rotvec(), b in rotvec()) {
        let e = rotation_error_deg(&a, &b);
        prop_assert!((0.0..=180.0).contains(&e));
        prop_assert!((e - rotation_error_deg(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn histogram_is_monotone(ds in prop::collection::vec(0.0..5.0f64, 1..40)) {
        let edges: Vec<f64> = (1..=20).map(|i| i as f64 * 0.25).collect();
        let h = distance_histogram(&ds, &edges).unwrap();
        prop_assert!(h.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}
