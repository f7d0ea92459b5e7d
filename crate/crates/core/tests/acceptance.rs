//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any fails. Criteria 6 to 9 train models and take most of the runtime.

mod common;

use std::time::Instant;

use archdiff::diffusion::{
    ddim_step, sample_loop, LossGeometry, LossWeights, Model, ModelConfig, NoiseSchedule, TrainConfig, COSINE_OFFSET,
    DEFAULT_T,
};
use archdiff::encoders::{
    patch_features, plan_global, random_mask, EncoderConfig, GlobalEncoder, LocalEncoder, Mae, MaeConfig,
    PointLocalEncoder, Propagation, SaConfig,
};
use archdiff::experiment::{evaluate_model, fit, identity_report, iterate, pretrain};
use archdiff::geometry::{chamfer_per_tooth, sample_jaw_points, se3_exp, so3_exp, Jaw, Mat3, Vec3};
use archdiff::metrics::{add_metric, arch_curve, fd_cur_metric, pa_add_metric, EvalOptions, MetricsReport};
use archdiff::nn::{check_gradients, AttentionMode, Builder, ParamStore};
use archdiff::synth::{generate_dataset, generate_jaw, perturb, ArchSpec, CorpusSpec, Dataset, PerturbSpec};
use common::*;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Criteria named on the command line, or all of them.
fn selected(n: usize) -> bool {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    args.is_empty() || args.contains(&n)
}

fn run(n: usize, title: &str, f: impl FnOnce() -> Verdict) -> Option<bool> {
    if !selected(n) {
        return None;
    }
    let start = Instant::now();
    let v = f();
    println!(
        "{} criterion {n} ({title}): {} [{:.1}s]",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
    Some(v.pass)
}

fn max_abs(a: impl Iterator<Item = f64>) -> f64 {
    a.fold(0.0, |m, x| m.max(x.abs()))
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut r = rng(100);
    let (mut cd, mut fd, mut add) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = r.random_range(1..40);
        let gt = random_jaw(&mut r, 8, n);
        let pred = map_vertices(&gt, |v| v + random_vec(&mut r, 1.5));

        let expected: f64 = gt.teeth.iter().map(|(l, t)| chamfer_oracle(&pred.teeth[l].vertices, &t.vertices)).sum();
        cd = cd.max((chamfer_per_tooth(&pred, &gt).unwrap() - expected).abs());

        // all eight teeth are upper, so the metric reduces to one curve pair
        let a = arch_curve(&pred, Jaw::Upper, 30).unwrap();
        let b = arch_curve(&gt, Jaw::Upper, 30).unwrap();
        let expected = frechet_oracle(&a.samples, &b.samples);
        fd = fd.max((fd_cur_metric(&pred, &gt, 30).unwrap() - expected).abs());

        add = add.max((add_metric(&pred, &gt).unwrap() - add_oracle(&pred, &gt)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        cd < 1e-9 && fd < 1e-9 && add < 1e-9 && secs < 60.0,
        format!("max |diff| chamfer {cd:.1e}, fd_cur {fd:.1e}, add {add:.1e} over 100 instances in {secs:.1}s"),
    )
}

fn se3_correctness() -> Verdict {
    let mut r = rng(200);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rv = random_vec(&mut r, 3.0);
        let m = random_vec(&mut r, 20.0);
        let t = se3_exp(&rv, &m);
        let rot: Mat3 = t.fixed_view::<3, 3>(0, 0).into();
        worst = worst.max((rot - quaternion_rotation(&rv)).abs().max());
        worst = worst.max((t.fixed_view::<3, 1>(0, 3) - m).abs().max());
    }
    let axis = Vec3::new(0.6, -0.48, 0.64).normalize();
    let small = axis * 1e-6;
    let cont = (so3_exp(&small) - quaternion_rotation(&small)).abs().max();
    verdict(worst < 1e-8 && cont < 1e-10, format!("max oracle error {worst:.1e}, error at 1e-6 rad {cont:.1e}"))
}

fn registration() -> Verdict {
    let gt = generate_jaw(&ArchSpec::default(), 300).unwrap();
    let mut r = rng(300);
    let mut residual = 0.0f64;
    for _ in 0..20 {
        let rot = so3_exp(&random_vec(&mut r, 3.0));
        let m = random_vec(&mut r, 20.0);
        let moved = map_vertices(&gt, |v| rot * v + m);
        residual = residual.max(pa_add_metric(&moved, &gt).unwrap().value);
    }
    let mut wins = 0;
    for _ in 0..100 {
        let rot = so3_exp(&random_vec(&mut r, 0.5));
        let m = random_vec(&mut r, 3.0);
        let pred = map_vertices(&gt, |v| rot * v + m + random_vec(&mut r, 0.01));
        if pa_add_metric(&pred, &gt).unwrap().value < add_metric(&pred, &gt).unwrap() {
            wins += 1;
        }
    }
    verdict(residual < 1e-8 && wins == 100, format!("noiseless residual {residual:.1e} mm, pa_add < add in {wins}/100"))
}

fn diffusion_algebra() -> Verdict {
    let s = NoiseSchedule::cosine(DEFAULT_T, COSINE_OFFSET).unwrap();
    let mut r = rng(400);
    let mut comp = 0.0f64;
    for i in 0..100 {
        let t = r.random_range(3..=DEFAULT_T);
        let mid = r.random_range(2..t);
        let end = r.random_range(1..mid);
        let zt = random_matrix(8, 6, 2 * i);
        let z0 = random_matrix(8, 6, 2 * i + 1);
        let two = ddim_step(&ddim_step(&zt, &z0, t, mid, &s).unwrap(), &z0, mid, end, &s).unwrap();
        let one = ddim_step(&zt, &z0, t, end, &s).unwrap();
        comp = comp.max(max_abs((two - one).into_iter()));
    }
    let target = random_matrix(10, 6, 999);
    let out = sample_loop(10, &s, 50, 1, |_, _| Ok(target.clone())).unwrap();
    let oracle = max_abs((out - &target).into_iter());
    let vp = max_abs((0..=DEFAULT_T).map(|t| s.alpha(t).unwrap().powi(2) + s.sigma(t).unwrap().powi(2) - 1.0));
    let (a0, at) = (s.alpha_bar(0).unwrap(), s.alpha_bar(DEFAULT_T).unwrap());
    verdict(
        comp < 1e-10 && oracle < 1e-6 && vp < 1e-12 && a0 == 1.0 && at < 1e-3,
        format!("composition {comp:.1e}, oracle sampler {oracle:.1e}, |α²+σ²−1| {vp:.1e}, ᾱ_0 {a0}, ᾱ_T {at:.1e}"),
    )
}

fn gradient_checks() -> Verdict {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let worst_of = |errs: Vec<f64>| errs.into_iter().fold(0.0, f64::max);

    // composite loss over z0_hat entries
    let gt = generate_jaw(&ArchSpec::default(), 500).unwrap();
    let rec = perturb(&gt, &PerturbSpec::default(), 1).unwrap();
    let geo = LossGeometry::from_record(&rec, 64).unwrap();
    let w = LossWeights::default();
    let z = geo.z0() + &(random_matrix(geo.n_teeth(), 6, 5) * 0.3);
    let (_, grad) = geo.evaluate(&z, &w).unwrap();
    let mut r = rng(500);
    let mut errs = Vec::new();
    for _ in 0..10 {
        let (i, j) = (r.random_range(0..geo.n_teeth()), r.random_range(0..6));
        let h = 1e-6;
        let (mut zp, mut zm) = (z.clone(), z.clone());
        zp[(i, j)] += h;
        zm[(i, j)] -= h;
        let num = (geo.evaluate(&zp, &w).unwrap().0.total - geo.evaluate(&zm, &w).unwrap().0.total) / (2.0 * h);
        errs.push((grad[(i, j)] - num).abs() / grad[(i, j)].abs().max(num.abs()).max(1e-12));
    }
    worst.push(("composite_loss", worst_of(errs)));

    let cfg = EncoderConfig::default();
    let tooth = gt.teeth.values().next().unwrap().clone();
    let pf = patch_features(&tooth).unwrap();
    let n_patch = pf.features.nrows();

    let mut store = ParamStore::new();
    let enc =
        LocalEncoder::new(&mut Builder::new(&mut store, &mut rng(1)), 64, cfg.d_local, cfg.local_depth, cfg.heads);
    worst.push((
        "local",
        worst_of(grad_errors(&mut store, |t| enc.forward(t, &pf.features, &pf.centers, n_patch).unwrap())),
    ));

    let mut store = ParamStore::new();
    let prop = Propagation::new(&mut Builder::new(&mut store, &mut rng(2)), cfg.d_local, cfg.prop_depth, cfg.heads);
    let (x, c) = (random_matrix(10, cfg.d_local, 3), random_matrix(10, 3, 4) * 20.0);
    worst.push((
        "propagation",
        worst_of(grad_errors(&mut store, |t| {
            let xi = t.input(x.clone());
            prop.forward(t, xi, &c, AttentionMode::Softmax).unwrap()
        })),
    ));

    let mut store = ParamStore::new();
    let glob = GlobalEncoder::new(&mut Builder::new(&mut store, &mut rng(3)), cfg.d_global);
    let cloud: Vec<Vec3> = sample_jaw_points(&gt, 24, 1).unwrap().into_values().flatten().collect();
    let sa = (SaConfig { npoint: 128, ..cfg.sa1 }, SaConfig { npoint: 32, ..cfg.sa2 });
    let plan = plan_global(&cloud, &sa.0, &sa.1).unwrap();
    worst.push(("global", worst_of(grad_errors(&mut store, |t| glob.forward(t, &plan)))));

    let mut store = ParamStore::new();
    let pl = PointLocalEncoder::new(&mut Builder::new(&mut store, &mut rng(4)), cfg.d_local);
    let pts = random_matrix(4 * 32, 3, 6);
    worst.push(("point-local", worst_of(grad_errors(&mut store, |t| pl.forward(t, &pts, 32)))));

    let mut store = ParamStore::new();
    let mae = Mae::new(&mut Builder::new(&mut store, &mut rng(5)), 64, &cfg, 1);
    jitter(&mut store);
    let (masked, visible) = random_mask(n_patch, 0.75, &mut rng(6)).unwrap();
    let (_, grads) = mae.loss_and_grad(&store, &pf, &masked, &visible);
    let checks = check_gradients(&mut store, &grads, 10, 7, |s| mae.loss(s, &pf, &masked, &visible));
    worst.push(("mae", worst_of(checks.into_iter().map(|c| c.rel_err).collect())));

    for dpm in [true, false] {
        let mut model = Model::new(&ModelConfig { dpm, ..ModelConfig::default() }).unwrap();
        let prep = model.prepare(&rec.input).unwrap();
        let zt = random_matrix(prep.n_teeth(), 6, 7);
        let view = model.clone();
        let e = worst_of(grad_errors(&mut model.store, |t| view.forward(t, &prep, &zt, 500).unwrap()));
        worst.push((if dpm { "denoiser" } else { "regression" }, e));
    }

    let pass = worst.iter().all(|&(_, e)| e < 1e-4);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(pass, format!("max relative error: {detail}"))
}

fn corpus(n_patients: usize, test_fraction: f64, seed: u64) -> Dataset {
    let spec = CorpusSpec { n_patients, test_fraction, seed };
    generate_dataset(&spec, &ArchSpec::default(), &PerturbSpec::default()).unwrap()
}

struct DeskRun {
    model: Model,
    report: MetricsReport,
    identity: MetricsReport,
    first_loss: f64,
    last_loss: f64,
}

/// The desk pipeline: generate, pretrain, train, evaluate.
fn desk_run(data: &Dataset) -> DeskRun {
    let train = data.train();
    let test = data.test();
    let model_cfg = ModelConfig::default();
    let train_cfg = TrainConfig::desk();
    let mae = pretrain(&train, &model_cfg, &MaeConfig::default(), 0).unwrap();
    let start = Instant::now();
    let (model, state) = fit(&model_cfg, &train_cfg, &train, Some(&mae.encoder_weights()), None, |_, s| {
        if s.epochs_done % 20 == 0 {
            let l = s.curve.last().unwrap();
            eprintln!("  epoch {} loss {:.3} ({:.0}s)", s.epochs_done, l.total, start.elapsed().as_secs_f64());
        }
        Ok(())
    })
    .unwrap();
    let opts = EvalOptions::default();
    DeskRun {
        report: evaluate_model(&model, &test, 0, &opts).unwrap(),
        identity: identity_report(&test, &opts).unwrap(),
        first_loss: state.curve[0].total,
        last_loss: state.curve.last().unwrap().total,
        model,
    }
}

fn summary_values(r: &MetricsReport) -> Vec<f64> {
    let s = &r.summary;
    [s.add, s.pa_add, s.csa, s.me_rot, s.fd_cur].iter().flat_map(|m| [m.mean, m.std]).collect()
}

fn end_to_end(data: &Dataset) -> (Verdict, DeskRun) {
    let n_test = data.test().len();
    let a = desk_run(data);
    let b = desk_run(data);
    let drift = max_abs(summary_values(&a.report).iter().zip(summary_values(&b.report)).map(|(x, y)| x - y));
    let (add, pa, fd) = (a.report.summary.add.mean, a.report.summary.pa_add.mean, a.report.summary.fd_cur.mean);
    let (id_add, id_fd) = (a.identity.summary.add.mean, a.identity.summary.fd_cur.mean);
    println!(
        "  {} records ({} test), train loss {:.3} -> {:.3}, model {}",
        data.records.len(),
        n_test,
        a.first_loss,
        a.last_loss,
        a.report.to_text().lines().nth(1).unwrap_or("")
    );
    let pass =
        data.records.len() == 500 && n_test == 50 && add < 0.5 * id_add && pa < add && fd < id_fd && drift < 1e-6;
    let v = verdict(
        pass,
        format!(
            "ADD {add:.4} vs 0.5 × identity {:.4}, PA-ADD {pa:.4}, FD_cur {fd:.4} vs identity {id_fd:.4}, rerun drift {drift:.1e}",
            0.5 * id_add
        ),
    );
    (v, a)
}

fn iterative(model: &Model, data: &Dataset) -> Verdict {
    let test = data.test();
    let opts = EvalOptions::default();
    let mut sums = [0.0; 3];
    for r in test.iter().take(20) {
        let rounds = iterate(model, r, 3, 0, &opts).unwrap();
        for (s, round) in sums.iter_mut().zip(&rounds) {
            *s += round.metrics.add / 20.0;
        }
    }
    verdict(
        sums[1] <= sums[0] * 1.05,
        format!("mean ADD per round {:.4}, {:.4}, {:.4}; bound {:.4}", sums[0], sums[1], sums[2], sums[0] * 1.05),
    )
}

/// Desk-sized corpus per seed; both variants share the pretrained local encoder.
fn ablation() -> Verdict {
    let opts = EvalOptions::default();
    let mut means = [0.0; 2];
    for seed in 0..3u64 {
        let data = corpus(50, 0.1, 1000 + seed);
        let (train, test) = (data.train(), data.test());
        let train_cfg = TrainConfig { seed, ..TrainConfig::desk() };
        let base = ModelConfig { init_seed: seed, ..ModelConfig::default() };
        let weights =
            pretrain(&train, &base, &MaeConfig { seed, ..MaeConfig::default() }, 0).unwrap().encoder_weights();
        for (k, dpm) in [true, false].into_iter().enumerate() {
            let cfg = ModelConfig { dpm, ..base.clone() };
            let (model, _) = fit(&cfg, &train_cfg, &train, Some(&weights), None, |_, _| Ok(())).unwrap();
            let add = evaluate_model(&model, &test, seed, &opts).unwrap().summary.add.mean;
            eprintln!("  seed {seed} {}: ADD {add:.4}", if dpm { "diffusion" } else { "regression" });
            means[k] += add / 3.0;
        }
    }
    verdict(means[0] <= means[1], format!("mean test ADD diffusion {:.4}, regression {:.4}", means[0], means[1]))
}

const MAE_PATIENTS: usize = 10;

fn pretraining_utility() -> Verdict {
    let mut needed = Vec::new();
    for seed in 0..3u64 {
        let data = corpus(MAE_PATIENTS, 0.1, 2000 + seed);
        let train = data.train();
        let cfg = ModelConfig { init_seed: seed, ..ModelConfig::default() };
        let scratch_cfg = TrainConfig { epochs: 50, seed, ..TrainConfig::desk() };
        let (_, scratch) = fit(&cfg, &scratch_cfg, &train, None, None, |_, _| Ok(())).unwrap();
        let target = scratch.curve[49].total;

        let mae = pretrain(&train, &cfg, &MaeConfig { seed, ..MaeConfig::default() }, 0).unwrap();
        let tuned_cfg = TrainConfig { epochs: 40, ..scratch_cfg };
        let (_, tuned) = fit(&cfg, &tuned_cfg, &train, Some(&mae.encoder_weights()), None, |_, _| Ok(())).unwrap();
        let reached = tuned.curve.iter().position(|e| e.total <= target).map(|i| i + 1);
        eprintln!("  seed {seed}: scratch epoch-50 loss {target:.4}, pretrained reaches it at {reached:?}");
        needed.push(reached.unwrap_or(usize::MAX));
    }
    needed.sort();
    let median = needed[1];
    let shown: Vec<String> =
        needed.iter().map(|&n| if n == usize::MAX { ">40".into() } else { n.to_string() }).collect();
    verdict(
        median <= 40,
        format!("epochs to reach the from-scratch epoch-50 loss: {} (median must be ≤ 40)", shown.join(", ")),
    )
}

fn main() {
    let mut results = vec![
        run(1, "oracle equivalence", oracle_equivalence),
        run(2, "SE(3) correctness", se3_correctness),
        run(3, "registration", registration),
        run(4, "diffusion algebra", diffusion_algebra),
        run(5, "gradient checks", gradient_checks),
    ];

    let data = corpus(50, 0.1, 0);
    let mut desk = None;
    results.push(run(6, "synthetic end-to-end", || {
        let (v, r) = end_to_end(&data);
        desk = Some(r);
        v
    }));
    // the iterative experiment reuses the criterion-6 model
    if selected(8) && desk.is_none() {
        desk = Some(desk_run(&data));
    }
    results.push(run(8, "iterative refinement", || iterative(&desk.as_ref().unwrap().model, &data)));
    drop(desk);
    results.push(run(7, "ablation direction", ablation));
    results.push(run(9, "pretraining utility", pretraining_utility));

    let ran: Vec<bool> = results.into_iter().flatten().collect();
    let n_pass = ran.iter().filter(|&&p| p).count();
    println!("acceptance: {n_pass}/{} criteria passed", ran.len());
    if n_pass != ran.len() {
        std::process::exit(1);
    }
}
