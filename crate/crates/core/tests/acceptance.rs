//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any is red.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dphase::continuation::{run_continuation, uniqueness_probe, ContinuationConfig, ContinuationRun};
use dphase::grid::{GridDomain, ScalarField, Shape, VectorField};
use dphase::orlicz::{
    hoelder_fp_check, luxemburg_norm, modular, sobolev_constant, ExponentPair, Variant, DEFAULT_NORM_TOL,
};
use dphase::solver::{energy, energy_gradient, solve_fixed_p, total_flux_vector, SolveParams};
use dphase::weights::{aq_constant, make_weight, WeightField, WeightPreset};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid(dim: usize, res: usize, shape: Shape) -> Arc<GridDomain> {
    GridDomain::shared(dim, res, shape).unwrap()
}

// -- standard instance ------------------------------------------------------

const STD_RES: usize = 64;
const STD_Q: f64 = 1.3;
const STD_F: f64 = 0.5;
const STD_K: usize = 10;

struct Standard {
    config: ContinuationConfig,
    a: WeightField,
    f: ScalarField,
    run: ContinuationRun,
}

fn standard() -> Standard {
    let g = grid(2, STD_RES, Shape::Square);
    let config = ContinuationConfig::new(STD_Q, STD_K);
    let a = make_weight(&WeightPreset::Parabola { c: 4.0 }, &g).unwrap();
    let f = ScalarField::from_fn(&g, |_| STD_F);
    let run = run_continuation(&config, &a, &f, None).unwrap();
    Standard { config, a, f, run }
}

// -- 1: linear case against a direct sparse solve ---------------------------

fn direct_poisson(g: &GridDomain, f: &[f64]) -> Vec<f64> {
    use nalgebra_sparse::{factorization::CscCholesky, CooMatrix, CscMatrix};
    let n = g.dim();
    let scale = g.spacing().powi(n as i32 - 2);
    let interior: Vec<usize> = (0..g.node_count()).filter(|&i| g.is_interior(i)).collect();
    let mut index = vec![usize::MAX; g.node_count()];
    for (k, &i) in interior.iter().enumerate() {
        index[i] = k;
    }
    let mut coo = CooMatrix::new(interior.len(), interior.len());
    for (k, &i) in interior.iter().enumerate() {
        coo.push(k, k, 2.0 * n as f64 * scale);
        for d in 0..n {
            let s = g.node_stride(d);
            for nb in [i + s, i - s] {
                if index[nb] != usize::MAX {
                    coo.push(k, index[nb], -scale);
                }
            }
        }
    }
    let chol = CscCholesky::factor(&CscMatrix::from(&coo)).unwrap();
    let rhs = nalgebra::DMatrix::from_iterator(interior.len(), 1, interior.iter().map(|&i| g.cell_volume() * f[i]));
    let sol = chol.solve(&rhs);
    let mut out = vec![0.0; g.node_count()];
    for (k, &i) in interior.iter().enumerate() {
        out[i] = sol[(k, 0)];
    }
    out
}

fn linear_oracle() -> Outcome {
    let g = grid(2, 64, Shape::Square);
    let a = WeightField::uniform(&g, 0.0).unwrap();
    let f = ScalarField::from_fn(&g, |x| (PI * x[0]).sin() * (PI * x[1]).sin() + x[0]);
    let prm = SolveParams::new(ExponentPair::new_allow_equal(2.0, 2.0).unwrap(), 0.0);
    let t0 = Instant::now();
    let res = solve_fixed_p(&prm, &a, &f, &ScalarField::zeros(&g)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let direct = direct_poisson(&g, f.values());
    let err = res.u.values().iter().zip(&direct).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    outcome(res.converged && err <= 1e-8 && secs < 5.0, format!("sup err {err:.2e}, {secs:.2}s"))
}

// -- 2: manufactured radial solution on the disk ----------------------------

fn disk_error(res: usize) -> (f64, f64) {
    // -div(|Du|^{-1/2} Du) = 1 on the unit disk, u = (1 - r^3) / 12
    let g = grid(2, res, Shape::Disk);
    let a = WeightField::uniform(&g, 0.0).unwrap();
    let f = ScalarField::from_fn(&g, |_| 1.0);
    let mut prm = SolveParams::new(ExponentPair::new(1.5, 2.0).unwrap(), 1e-6);
    prm.max_iter = 400;
    let out = solve_fixed_p(&prm, &a, &f, &ScalarField::zeros(&g)).unwrap();
    assert!(out.converged, "disk solve at res {res} did not converge");
    let c = g.center();
    let mut err = 0.0f64;
    for i in (0..g.node_count()).filter(|&i| g.is_interior(i)) {
        let x = g.node_position(i);
        let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
        err = err.max((out.u.values()[i] - (1.0 - r.powi(3)) / 12.0).abs());
    }
    (g.spacing(), err)
}

fn manufactured() -> Outcome {
    let (h1, e1) = disk_error(128);
    let (h2, e2) = disk_error(256);
    let ratio = e2 / e1;
    let pass = e1 <= 3.0 * h1 && (0.35..=0.65).contains(&ratio);
    outcome(pass, format!("err(h={h1}) {e1:.3e}, err(h={h2}) {e2:.3e}, ratio {ratio:.3}"))
}

// -- 3..8: a priori estimates and limit on the standard instance ------------

fn lambda_bound(s: &Standard) -> Outcome {
    // f constant, so ||f||_2 = STD_F |Omega|^{1/2}; S(2,1) = 1/(2 sqrt(pi))
    let f_l2 = STD_F * s.a.grid().measure().sqrt();
    let bound = (f_l2 * (1.0 + 0.5 / PI.sqrt())).powf(1.0 / (STD_Q - 1.0)) + 0.05;
    let worst = s.run.steps.iter().map(|d| d.lambda_p).fold(0.0, f64::max);
    let pass = !s.run.steps.is_empty() && s.run.steps.iter().all(|d| d.lambda_p < 1.0 && d.lambda_p <= bound);
    outcome(pass, format!("max lambda_p {worst:.3e}, bound {bound:.3e}"))
}

fn flux_bounds(s: &Standard) -> Outcome {
    let mut worst = 0.0f64;
    let mut ok = true;
    let measure = s.a.grid().measure();
    for d in &s.run.steps {
        for &(r, v) in &d.flux_lr {
            let bound = (measure + 1.0).powf(1.0 / r) + 0.05;
            worst = worst.max(v / bound);
            ok &= v <= bound;
        }
    }
    let sup = s.run.steps.last().map_or(f64::INFINITY, |d| d.flux_sup);
    outcome(ok && sup <= 1.05, format!("max L^r / bound {worst:.3}, final sup {sup:.3}"))
}

fn cauchy(s: &Standard) -> Outcome {
    let steps = &s.run.steps;
    if steps.len() < 2 {
        return outcome(false, "fewer than two steps".into());
    }
    let (second, last) = (steps[1].theta0_diff_prev, steps[steps.len() - 1].theta0_diff_prev);
    let theta_ok = last <= 1e-3 * second;
    let gaps = &s.run.monotone_gaps;
    let decreasing = gaps.windows(2).all(|w| w[1] <= w[0]);
    let gap_ok = !gaps.is_empty() && decreasing && gaps[gaps.len() - 1] <= 1e-4 * gaps[0];
    outcome(
        theta_ok && gap_ok,
        format!(
            "theta0 last/second {:.3e}, gaps decreasing {decreasing}, last/first {:.3e}",
            last / second,
            gaps.last().unwrap_or(&f64::NAN) / gaps.first().unwrap_or(&f64::NAN)
        ),
    )
}

fn pairing(s: &Standard) -> Outcome {
    let r = s.run.steps.last().map_or(f64::NAN, |d| d.pairing_ratio);
    outcome((0.95..=1.001).contains(&r), format!("final pairing {r:.4}"))
}

fn uniqueness(s: &Standard) -> Outcome {
    let spread = uniqueness_probe(&s.config, &s.a, &s.f, 5, 1).unwrap();
    let limit = 100.0 * s.config.solver.tol;
    outcome(spread <= limit, format!("max sup spread {spread:.2e}, limit {limit:.0e}"))
}

fn weighted_q(s: &Standard) -> Outcome {
    let pass = s.run.steps.iter().filter(|d| d.lambda_p <= 1.0).all(|d| d.weighted_q <= d.lambda_p + 1e-8);
    let margin = s.run.steps.iter().map(|d| d.weighted_q - d.lambda_p).fold(f64::NEG_INFINITY, f64::max);
    outcome(pass, format!("max (weighted_q - lambda_p) {margin:.3e}"))
}

// -- 9: Sobolev constant as p -> 1 -----------------------------------------

fn sobolev_limit() -> Outcome {
    let target = 0.5 / PI.sqrt();
    let errs: Vec<f64> =
        (1..=3).map(|k| (sobolev_constant(2, 1.0 + 10f64.powi(-k)).unwrap() - target).abs()).collect();
    let pass = errs.windows(2).all(|w| w[1] < w[0]) && errs[2] < 1e-2;
    outcome(pass, format!("errors {:.3e} {:.3e} {:.3e}", errs[0], errs[1], errs[2]))
}

// -- 10: Muckenhoupt constant ----------------------------------------------

fn brute_aq_1d(a: &[f64], q: f64) -> f64 {
    let mut best = 0.0f64;
    for i in 0..a.len() {
        let (mut s, mut sd) = (0.0, 0.0);
        for (j, &v) in a.iter().enumerate().skip(i) {
            s += v;
            sd += v.powf(-1.0 / (q - 1.0));
            let m = (j - i + 1) as f64;
            best = best.max((s / m) * (sd / m).powf(q - 1.0));
        }
    }
    best
}

fn muckenhoupt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_const = 0.0f64;
    for (dim, res) in [(1, 16), (2, 12), (3, 6)] {
        let g = grid(dim, res, Shape::Square);
        for c in [0.3, 1.0, 7.5] {
            let a = WeightField::uniform(&g, c).unwrap();
            worst_const = worst_const.max((aq_constant(&a, 1.7) - 1.0).abs());
        }
    }
    let mut worst_1d = 0.0f64;
    for res in [4, 17, 64, 256] {
        let g = grid(1, res, Shape::Square);
        for _ in 0..3 {
            let vals: Vec<f64> = (0..g.cell_count()).map(|_| rng.random_range(0.05..5.0)).collect();
            let q = rng.random_range(1.2..3.0);
            let a = WeightField::from_values(&g, vals.clone(), "random").unwrap();
            let brute = brute_aq_1d(&vals, q);
            worst_1d = worst_1d.max((aq_constant(&a, q) - brute).abs() / brute);
        }
    }
    outcome(worst_const == 0.0 && worst_1d <= 1e-12, format!("constant dev {worst_const:.1e}, 1d rel dev {worst_1d:.1e}"))
}

// -- 11: property suites ---------------------------------------------------

fn random_field(g: &Arc<GridDomain>, rng: &mut ChaCha8Rng, amp: f64) -> ScalarField {
    ScalarField::dirichlet_from_fn(g, |_| amp * rng.random_range(-1.0..=1.0))
}

fn random_vector(g: &Arc<GridDomain>, rng: &mut ChaCha8Rng, amp: f64) -> VectorField {
    let comps = (0..g.cell_count() * g.dim()).map(|_| amp * rng.random_range(-1.0..=1.0)).collect();
    VectorField::from_components(g, comps).unwrap()
}

fn gradient_fd(rng: &mut ChaCha8Rng) -> (bool, f64) {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (dim, res, shape) = [(1, 8, Shape::Square), (2, 6, Shape::Square), (2, 10, Shape::Disk), (3, 4, Shape::Square)][i % 4];
        let g = grid(dim, res, shape);
        let p = rng.random_range(1.05..2.5);
        let q = p + rng.random_range(0.05..1.0);
        let eps = rng.random_range(1e-2..0.5);
        let prm = SolveParams::new(ExponentPair::new(p, q).unwrap(), eps);
        let a = WeightField::from_values(&g, (0..g.cell_count()).map(|_| rng.random_range(0.0..3.0)).collect(), "random")
            .unwrap();
        let f = ScalarField::from_fn(&g, |_| rng.random_range(-1.0..1.0));
        let u = random_field(&g, rng, 1.0);
        let dir = random_field(&g, rng, 1.0);
        let grad = energy_gradient(&u, &prm, &a, &f).unwrap();
        let analytic: f64 = grad.values().iter().zip(dir.values()).map(|(x, y)| x * y).sum();
        let step = 1e-6;
        let fd = (energy(&u.axpy(step, &dir), &prm, &a, &f).unwrap() - energy(&u.axpy(-step, &dir), &prm, &a, &f).unwrap())
            / (2.0 * step);
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(1.0));
    }
    (worst <= 1e-5, worst)
}

fn luxemburg_props(rng: &mut ChaCha8Rng) -> (bool, f64) {
    let tol = DEFAULT_NORM_TOL;
    let mut worst = 0.0f64;
    for i in 0..100 {
        let g = grid(2, 8, if i % 2 == 0 { Shape::Square } else { Shape::Disk });
        let p = rng.random_range(1.05..2.0);
        let e = ExponentPair::new(p, p + rng.random_range(0.05..1.5)).unwrap();
        let a = WeightField::from_values(&g, (0..g.cell_count()).map(|_| rng.random_range(0.0..4.0)).collect(), "random")
            .unwrap();
        let amp = rng.random_range(0.01..50.0);
        let v = random_vector(&g, rng, amp);
        let t = rng.random_range(0.1..10.0);
        for variant in [Variant::ThetaP, Variant::Theta0] {
            let n = luxemburg_norm(&v, &a, &e, variant, tol);
            if n == 0.0 {
                continue;
            }
            let nt = luxemburg_norm(&v.scaled(t), &a, &e, variant, tol);
            worst = worst.max((nt - t * n).abs() / (t * n) / tol);
            worst = worst.max((modular(&v.scaled(1.0 / n), &a, &e, variant) - 1.0).abs() / tol);
        }
    }
    (worst <= 10.0, worst)
}

fn flux_monotone(rng: &mut ChaCha8Rng) -> (bool, f64) {
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let n = rng.random_range(1..=3);
        let p = rng.random_range(1.01..3.0);
        let prm = SolveParams::new(ExponentPair::new(p, p + rng.random_range(0.01..2.0)).unwrap(), rng.random_range(0.0..0.5));
        let a = rng.random_range(0.0..5.0);
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (f1, f2) = (total_flux_vector(&x1, &prm, a), total_flux_vector(&x2, &prm, a));
        let pair: f64 = (0..n).map(|d| (f1[d] - f2[d]) * (x1[d] - x2[d])).sum();
        worst = worst.min(pair);
    }
    (worst >= -1e-12, worst)
}

fn hoelder(rng: &mut ChaCha8Rng) -> (bool, usize) {
    let mut failures = 0;
    for i in 0..100 {
        let (dim, res) = if i % 2 == 0 { (2, 12) } else { (3, 6) };
        let g = grid(dim, res, Shape::Square);
        let scale = rng.random_range(0.01..100.0);
        let f = ScalarField::from_fn(&g, |_| scale * rng.random_range(-1.0..1.0));
        let p = rng.random_range(1.01..(dim as f64 - 0.01));
        if !hoelder_fp_check(&f, p).unwrap().holds {
            failures += 1;
        }
    }
    (failures == 0, failures)
}

fn properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (g_ok, g_err) = gradient_fd(&mut rng);
    let (l_ok, l_err) = luxemburg_props(&mut rng);
    let (m_ok, m_min) = flux_monotone(&mut rng);
    let (h_ok, h_fail) = hoelder(&mut rng);
    outcome(
        g_ok && l_ok && m_ok && h_ok,
        format!("fd {g_err:.1e}, luxemburg {l_err:.2} tol, min pairing {m_min:.1e}, hoelder failures {h_fail}"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let t0 = Instant::now();
    let std_run = standard();
    println!("standard instance: {} steps in {:.2}s", std_run.run.steps.len(), t0.elapsed().as_secs_f64());

    let criteria: Vec<Criterion> = vec![
        ("linear case matches direct solve", Box::new(linear_oracle)),
        ("manufactured disk solution converges at first order", Box::new(manufactured)),
        ("lambda_p below one and below the data bound", Box::new(|| lambda_bound(&std_run))),
        ("flux L^r and sup bounds", Box::new(|| flux_bounds(&std_run))),
        ("theta0 Cauchy decay and monotone gaps", Box::new(|| cauchy(&std_run))),
        ("limit pairing ratio", Box::new(|| pairing(&std_run))),
        ("uniqueness from random starts", Box::new(|| uniqueness(&std_run))),
        ("weighted q-norm below lambda_p", Box::new(|| weighted_q(&std_run))),
        ("Sobolev constant tends to the isoperimetric one", Box::new(sobolev_limit)),
        ("Muckenhoupt constant", Box::new(muckenhoupt)),
        ("property suites", Box::new(properties)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "{} [{:>2}] {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
