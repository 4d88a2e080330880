mod support;

use deepfosls::admissible::{
    batch_loss, continuous_loss_ref, loss_terms, mc_consistency, AKind, ExactTriple, LiftConfig,
    LossKind, TripleField, TripleNets,
};
use deepfosls::geometry::PointCloud;
use deepfosls::netcore::{Activation, LayerSpec, Network, NetworkSpec};
use deepfosls::problems::{benchmark, l2_error_mc, triple_error_mc, Problem, RadialBenchmark};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::Perturbation;

const QA: f64 = 2.0 / 9.0;
const QB: f64 = -11.0 / 18.0;
const QC: f64 = 7.0 / 18.0;

fn q(r: f64) -> f64 {
    QA * r.powi(4) + QB * r * r + QC
}

fn dq(r: f64) -> f64 {
    4.0 * QA * r.powi(3) + 2.0 * QB * r
}

/// Composite Simpson rule on `[a, b]`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn random_nets(rng: &mut ChaCha8Rng, d: usize) -> TripleNets {
    let sp = Activation::SoftPlus { beta: 10.0 };
    let eta_act = [sp, Activation::Relu, Activation::Heaviside { ste_width: 0.5 }][rng.random_range(0..3)];
    let mut net = |out: usize, act: Activation| {
        let width = rng.random_range(2..=6);
        let depth = rng.random_range(1..=3);
        let mut hidden: Vec<LayerSpec> = (0..depth).map(|_| LayerSpec::new(width, act)).collect();
        if act == (Activation::Heaviside { ste_width: 0.5 }) {
            hidden[0].activation = Activation::Relu;
        }
        let mut n = Network::init(NetworkSpec::new(d, hidden, out).unwrap(), rng.random()).unwrap();
        for p in n.params_mut() {
            *p += rng.random_range(-1.0..1.0);
        }
        n
    };
    let v = net(1, sp);
    let psi = net(d, sp);
    let eta = net(1, eta_act);
    TripleNets::new(v, psi, eta).unwrap()
}

#[test]
fn constraints_hold_by_construction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in ["radial-d1", "radial-d2", "slit-2peaks"] {
        let p = benchmark(name).unwrap();
        let d = p.domain().dim();
        for trial in 0..40 {
            let nets = random_nets(&mut rng, d);
            let a_kind = if trial % 2 == 0 { AKind::Square } else { AKind::Relu };
            let lift = LiftConfig::new(a_kind, LossKind::L);
            let pts = p.domain().sample_uniform(&mut rng, 100);
            for x in pts.iter() {
                let ev = nets.lift(p.as_ref(), &lift, x).unwrap();
                assert!(ev.w >= 0.0 && ev.u >= ev.g, "{name}: u - g = {}", ev.w);
                assert!(ev.lambda >= 0.0);
                let slack = ev.gamma - ev.div_phi;
                assert!(slack >= 0.0);
                assert!((slack - ev.lambda).abs() <= 1e-15 * (ev.gamma.abs() + ev.div_phi.abs()));
                let t = loss_terms(p.as_ref(), &lift, &nets, x).unwrap();
                assert!(t.g1 >= 0.0 && t.g2 >= 0.0);
                assert!(t.g1.is_finite() && t.g2.is_finite() && t.g3.is_finite() && t.g4.is_finite());
            }
        }
    }
}

#[test]
fn boundary_points_lift_to_the_obstacle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases: Vec<(&str, Vec<Vec<f64>>)> = vec![
        ("radial-d1", vec![vec![-1.0], vec![1.0]]),
        ("radial-d2", vec![vec![1.0, 0.0], vec![0.0, -1.0], vec![-1.0, 0.0]]),
        (
            "slit-2peaks",
            vec![vec![0.0, 0.25], vec![0.0, 0.8], vec![0.0, 1.0], vec![-1.0, 0.0]],
        ),
    ];
    for (name, pts) in cases {
        let p = benchmark(name).unwrap();
        for _ in 0..20 {
            let nets = random_nets(&mut rng, p.domain().dim());
            let lift = LiftConfig::new(AKind::Square, LossKind::J);
            for x in &pts {
                let ev = nets.lift(p.as_ref(), &lift, x).unwrap();
                assert_eq!(ev.d, 0.0, "{name} {x:?}");
                assert_eq!(ev.u, p.obstacle(x).0, "{name} {x:?}");
            }
        }
    }
}

#[test]
fn negative_relu_branch_gives_the_obstacle() {
    let p = benchmark("radial-d2").unwrap();
    let sp = Activation::SoftPlus { beta: 1.0 };
    let mut v = Network::zeros(NetworkSpec::mlp(2, 3, 2, sp, 1).unwrap()).unwrap();
    let last = v.params().len() - 1;
    v.params_mut()[last] = -3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let other = random_nets(&mut rng, 2);
    let nets = TripleNets::new(v, other.psi, other.eta).unwrap();
    let lift = LiftConfig::new(AKind::Relu, LossKind::L);
    for x in [[0.3, 0.1], [-0.6, 0.2], [0.0, 0.0]] {
        let ev = nets.lift(p.as_ref(), &lift, &x).unwrap();
        let (g, grad_g) = p.obstacle(&x);
        assert_eq!(ev.u, g);
        assert_eq!(ev.grad_u, grad_g);
    }
}

#[test]
fn loss_kinds_decompose_term_by_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = benchmark("slit-2peaks").unwrap();
    for _ in 0..20 {
        let nets = random_nets(&mut rng, 2);
        let pts = p.domain().sample_uniform(&mut rng, 50);
        for x in pts.iter() {
            let l = LiftConfig::new(AKind::Square, LossKind::L);
            let j = LiftConfig::new(AKind::Square, LossKind::J);
            let ev = nets.lift(p.as_ref(), &l, x).unwrap();
            let tl = loss_terms(p.as_ref(), &l, &nets, x).unwrap();
            let tj = loss_terms(p.as_ref(), &j, &nets, x).unwrap();
            assert_eq!(tl, tj);
            let f = p.source(x);
            let g1 = (ev.div_phi + ev.lambda + f).powi(2);
            assert!((tl.g1 - g1).abs() <= 1e-12 * g1.max(1.0));
            assert_eq!(tl.g3, ev.gamma * ev.w);
            assert_eq!(tl.complementarity, ev.lambda * ev.w);
            let diff = tl.total(LossKind::L) - tj.total(LossKind::J);
            let want = tl.g3 + tl.g4 - tl.complementarity;
            assert!((diff - want).abs() <= 1e-12 * (tl.total(LossKind::L).abs() + 1.0));
        }
    }
}

#[test]
fn exact_triple_has_zero_residuals() {
    for name in ["radial-d1", "radial-d2"] {
        let p = benchmark(name).unwrap();
        let pts = p.domain().sample_uniform(&mut ChaCha8Rng::seed_from_u64(1), 2000);
        for kind in [LossKind::L, LossKind::J] {
            let lift = LiftConfig::new(AKind::Square, kind);
            for x in pts.iter() {
                let t = loss_terms(p.as_ref(), &lift, &ExactTriple, x).unwrap();
                assert_eq!(t.g1, 0.0);
                assert_eq!(t.g2, 0.0);
                assert_eq!(t.complementarity, 0.0);
            }
            let (mean, se) = continuous_loss_ref(p.as_ref(), &lift, &ExactTriple, 100_000, 2).unwrap();
            assert!(mean.abs() <= 3.0 * se, "{name} {kind:?}: {mean:e} +- {se:e}");
        }
        let lift = LiftConfig::new(AKind::Square, LossKind::L);
        assert_eq!(l2_error_mc(p.as_ref(), &lift, &ExactTriple, 10_000, 3).unwrap(), 0.0);
        assert_eq!(triple_error_mc(p.as_ref(), &lift, &ExactTriple, 10_000, 3).unwrap().total, 0.0);
    }
}

fn zero_nets(d: usize) -> TripleNets {
    let sp = Activation::SoftPlus { beta: 1.0 };
    let z = |out| Network::zeros(NetworkSpec::mlp(d, 4, 2, sp, out).unwrap()).unwrap();
    TripleNets::new(z(1), z(d), z(1)).unwrap()
}

#[test]
fn zero_nets_loss_matches_quadrature() {
    let p = benchmark("radial-d1").unwrap();
    let lift = LiftConfig::new(AKind::Square, LossKind::L);
    let nets = zero_nets(1);
    let quad = 2.0 * simpson(|r| dq(r).powi(2), 0.0, 1.0, 2000);
    let (mean, se) = continuous_loss_ref(p.as_ref(), &lift, &nets, 100_000, 5).unwrap();
    assert!((mean - quad).abs() <= 3.0 * se, "{mean} vs {quad} (se {se})");

    // the batch loss is the plain average of |g'|²
    let pts = p.domain().sample_uniform(&mut ChaCha8Rng::seed_from_u64(6), 1000);
    let direct: f64 = pts.iter().map(|x| dq(x[0].abs()).powi(2)).sum::<f64>() * 2.0 / 1000.0;
    let b = batch_loss(p.as_ref(), &lift, &nets, &pts).unwrap();
    assert!((b - direct).abs() <= 1e-12 * direct);
}

#[test]
fn zero_nets_errors_match_quadrature() {
    let p = benchmark("radial-d1").unwrap();
    let lift = LiftConfig::new(AKind::Square, LossKind::L);
    let nets = zero_nets(1);
    let n = 40_000;
    let seed = 8;
    // replay the estimator's sample to get its standard error
    let pts = p.domain().sample_uniform(&mut ChaCha8Rng::seed_from_u64(seed), n);
    let u0 = |r: f64| if r <= 0.5 { q(r) } else { (1.0 - r) / 2.0 };
    let du0 = |r: f64| if r <= 0.5 { dq(r) } else { -0.5 };

    let sq: Vec<f64> = pts.iter().map(|x| 2.0 * (q(x[0].abs()) - u0(x[0].abs())).powi(2)).collect();
    let (_, se) = mean_se(&sq);
    let quad = 2.0 * simpson(|r| (q(r) - (1.0 - r) / 2.0).powi(2), 0.5, 1.0, 2000);
    let l2 = l2_error_mc(p.as_ref(), &lift, &nets, n, seed).unwrap();
    assert!((l2 * l2 - quad).abs() <= 3.0 * se, "{} vs {quad}", l2 * l2);

    let tri_pts: Vec<f64> = pts
        .iter()
        .map(|x| {
            let r = x[0].abs();
            2.0 * ((dq(r) - du0(r)).powi(2) + du0(r).powi(2))
        })
        .collect();
    let (_, se) = mean_se(&tri_pts);
    let quad = 2.0
        * (simpson(|r| (dq(r) + 0.5).powi(2), 0.5, 1.0, 2000)
            + simpson(|r| dq(r).powi(2), 0.0, 0.5, 2000)
            + 0.5 * 0.25);
    let tri = triple_error_mc(p.as_ref(), &lift, &nets, n, seed).unwrap();
    assert!((tri.total.powi(2) - quad).abs() <= 3.0 * se);
    assert_eq!(tri.gamma, 0.0);
}

/// `(loss, squared distance)` of a perturbation at scale `eps`.
fn perturbed(p: &RadialBenchmark, pert: &Perturbation, eps: f64, kind: LossKind) -> (f64, f64) {
    let lift = LiftConfig::new(AKind::Square, kind);
    let field = pert.with_eps(eps);
    let (loss, _) = continuous_loss_ref(p, &lift, &field, 100_000, 77).unwrap();
    let pts = p.domain().sample_uniform(&mut ChaCha8Rng::seed_from_u64(77), 100_000);
    let vol = p.domain().volume();
    let dist = eps * eps * vol * pts.iter().map(|x| pert.delta(x).norm_sq()).sum::<f64>() / pts.len() as f64;
    (loss, dist)
}

#[test]
fn loss_grows_quadratically_away_from_the_exact_triple() {
    // With u - g = 0 on the boundary the pairing terms of the L functional
    // integrate to ∫ λ (u - g), so both loss kinds estimate the same
    // functional; the J integrand has no zero-mean noise at the minimizer.
    for d in [1, 2] {
        let p = RadialBenchmark::new(d, 0.5, 1.0).unwrap();
        let mut ratios = Vec::new();
        for k in 0..20 {
            let pert = Perturbation::random(&p, 100 + k);
            let (lo, dist_lo) = perturbed(&p, &pert, 1e-2, LossKind::J);
            let (hi, dist_hi) = perturbed(&p, &pert, 1e-1, LossKind::J);
            assert!(lo > 0.0 && hi > 0.0);
            let slope = (hi / lo).log10();
            assert!(slope >= 1.8, "d {d}, perturbation {k}: slope {slope}");
            ratios.push(lo / dist_lo);
            ratios.push(hi / dist_hi);
        }
        if d == 1 {
            let (fit, test) = ratios.split_at(ratios.len() / 2);
            let c = fit.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(c > 0.0);
            for r in test {
                assert!(*r >= 0.9 * c, "ratio {r} below 0.9 x {c}");
            }
        }
    }
}

#[test]
fn both_forms_estimate_the_same_functional() {
    let p = RadialBenchmark::new(1, 0.5, 1.0).unwrap();
    let pert = Perturbation::random(&p, 5).with_eps(0.3);
    let l = continuous_loss_ref(&p, &LiftConfig::new(AKind::Square, LossKind::L), &pert, 200_000, 1).unwrap();
    let j = continuous_loss_ref(&p, &LiftConfig::new(AKind::Square, LossKind::J), &pert, 200_000, 2).unwrap();
    let se = (l.1 * l.1 + j.1 * j.1).sqrt();
    assert!((l.0 - j.0).abs() <= 4.0 * se, "{l:?} vs {j:?}");
}

#[test]
fn batch_loss_spread_decays_like_inverse_root_n() {
    let p = benchmark("radial-d2").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let nets = random_nets(&mut rng, 2);
    let lift = LiftConfig::new(AKind::Square, LossKind::L);
    let rep = mc_consistency(p.as_ref(), &lift, &nets, &[100, 1000, 10_000], 50, 4).unwrap();
    let slope = rep.slope.unwrap();
    assert!((-0.6..=-0.4).contains(&slope), "slope {slope}, stds {:?}", rep.stds);
}

#[test]
fn single_point_batch_is_volume_times_integrand() {
    let p = benchmark("slit-2peaks").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let nets = random_nets(&mut rng, 2);
    let lift = LiftConfig::new(AKind::Square, LossKind::J);
    let x = [-0.3, 0.45];
    let t = loss_terms(p.as_ref(), &lift, &nets, &x).unwrap();
    let b = batch_loss(p.as_ref(), &lift, &nets, &PointCloud::new(2, x.to_vec()).unwrap()).unwrap();
    let want = std::f64::consts::PI * t.total(LossKind::J);
    assert!((b - want).abs() <= 1e-13 * want.abs().max(1.0));
}
