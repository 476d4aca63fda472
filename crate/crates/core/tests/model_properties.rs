use firewater::model::{
    drift, partials, running_cost, switching_point, u0_v0_quadratic, v_star,
};
use firewater::steady_state::{default_window, steady_ccd, SteadyCcdConfig};
use firewater::{ControlKind, ModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64) -> bool {
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= 1e-5 * scale || (a - b).abs() <= 1e-9
}

#[test]
fn analytic_partials_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-6;
    for p in [ModelParams::base(), ModelParams::quadratic()] {
        for _ in 0..100 {
            let x: f64 = rng.gen_range(1e-3..1.0);
            // Keep the stencil inside u, v >= 0.
            let u: f64 = rng.gen_range(1e-5..1.0);
            let v: f64 = rng.gen_range(1e-5..1.0);
            let t: f64 = rng.gen_range(0.0..100.0);
            let d = partials(&p, t, x, u, v).unwrap();
            let f = |x: f64, u: f64, v: f64| drift(&p, x, u, v).unwrap();
            let g = |x: f64, u: f64, v: f64| running_cost(&p, t, x, u, v);
            let fd = |fun: &dyn Fn(f64, f64, f64) -> f64, i: usize| {
                let mut lo = [x, u, v];
                let mut hi = [x, u, v];
                lo[i] -= h;
                hi[i] += h;
                (fun(hi[0], hi[1], hi[2]) - fun(lo[0], lo[1], lo[2])) / (2.0 * h)
            };
            let pairs = [
                (d.f_x, fd(&f, 0)),
                (d.f_u, fd(&f, 1)),
                (d.f_v, fd(&f, 2)),
                (d.big_f_x, fd(&g, 0)),
                (d.big_f_u, fd(&g, 1)),
                (d.big_f_v, fd(&g, 2)),
            ];
            for (k, (a, n)) in pairs.iter().enumerate() {
                assert!(close(*a, *n), "partial {k} at x={x}, u={u}, v={v}: {a} vs {n}");
            }
        }
    }
}

#[test]
fn unit_stock_drifts_by_inflow_exactly() {
    let p = ModelParams::base();
    assert_eq!(drift(&p, 1.0, 0.0, 0.0).unwrap(), p.tau);
}

#[test]
fn quadratic_minimizers_are_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = ModelParams::quadratic();
    let mut active = 0;
    for _ in 0..100 {
        let x: f64 = rng.gen_range(0.1..1.0);
        let lambda: f64 = rng.gen_range(0.0..30.0);
        let t: f64 = rng.gen_range(0.0..100.0);
        let (u0, v0) = u0_v0_quadratic(&p, x, lambda, t).unwrap();
        let disc = (-p.r * t).exp();
        if u0 > 0.0 {
            let h_u = 2.0 * u0 * disc - lambda * p.beta * x.powf(p.theta) / (1.0 + u0);
            assert!(h_u.abs() <= 1e-10, "H_u = {h_u}");
            active += 1;
        }
        if v0 > 0.0 {
            let f_v = p.rho * p.k * x.powf(p.alpha) - p.gamma * x / (1.0 + v0);
            let h_v = 2.0 * v0 * disc + lambda * f_v;
            assert!(h_v.abs() <= 1e-10, "H_v = {h_v}");
        }
    }
    assert!(active > 90);
}

#[test]
fn quadratic_minimizers_reproduce_quadratic_steady_controls() {
    let p = ModelParams::quadratic();
    let ss = steady_ccd(&p, default_window(&p).unwrap(), &SteadyCcdConfig::default()).unwrap();
    let mu = ss.current_value_costate(&p, ControlKind::Water);
    let (u0, v0) = u0_v0_quadratic(&p, ss.x_s, mu, 0.0).unwrap();
    assert!((u0 - 0.081).abs() <= 1e-2, "u0 = {u0}");
    assert!((v0 - 0.163).abs() <= 1e-2, "v0 = {v0}");
    // The same costate from the fire side.
    let mu_fire = ss.current_value_costate(&p, ControlKind::Fire);
    assert!((mu - mu_fire).abs() <= 1e-6 * mu);
}

#[test]
fn fire_minimizer_matches_back_solved_steady_state() {
    let p = ModelParams::base();
    let (x, v): (f64, f64) = (0.61773, 0.14605);
    let f_v = p.rho * p.k * x.powf(p.alpha) - p.gamma * x / (1.0 + v);
    let t = 200.0;
    let lambda = -2.0 * v * (-p.r * t).exp() / f_v;
    let got = v_star(&p, x, lambda, t).unwrap();
    assert!((got - 0.14605).abs() <= 1e-3, "v* = {got}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fire_is_never_used_below_the_switch(
        frac in 1e-6_f64..0.999,
        lambda in 1e-6_f64..100.0,
        t in 0.0_f64..200.0,
    ) {
        let p = ModelParams::base();
        let xs = switching_point(&p).unwrap();
        prop_assert_eq!(v_star(&p, frac * xs, lambda, t).unwrap(), 0.0);
    }

    #[test]
    fn fire_is_used_above_the_switch(
        mult in 1.001_f64..16.0,
        lambda in 1e-3_f64..100.0,
        t in 0.0_f64..100.0,
    ) {
        let p = ModelParams::base();
        let xs = switching_point(&p).unwrap();
        prop_assert!(v_star(&p, mult * xs, lambda, t).unwrap() > 0.0);
    }

    #[test]
    fn switching_point_scales_with_recruitment(s in 0.1_f64..10.0, rho in 0.1_f64..5.0) {
        let p = ModelParams { rho, ..ModelParams::base() };
        let q = ModelParams { rho: rho * s, ..p };
        let lhs = switching_point(&q).unwrap();
        let rhs = s.powf(1.0 / (1.0 - p.alpha)) * switching_point(&p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn running_cost_is_nonnegative_and_discounted(
        x in 0.0_f64..2.0, u in 0.0_f64..2.0, v in 0.0_f64..2.0,
        t in 0.0_f64..100.0, dt in 1e-3_f64..10.0,
    ) {
        for p in [ModelParams::base(), ModelParams::quadratic()] {
            let a = running_cost(&p, t, x, u, v);
            prop_assert!(a >= 0.0);
            if x > 0.0 || u > 0.0 || v > 0.0 {
                prop_assert!(running_cost(&p, t + dt, x, u, v) < a);
            }
        }
    }
}

#[test]
fn bundled_configs_parse_to_the_builtin_sets() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/");
    let base: ModelParams = std::fs::read_to_string(format!("{root}base.cfg"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(base, ModelParams::base());
    let quad: ModelParams = std::fs::read_to_string(format!("{root}quadratic.cfg"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(quad, ModelParams::quadratic());
}

#[test]
fn params_display_round_trips() {
    let p = ModelParams::quadratic();
    let back: ModelParams = p.to_string().parse().unwrap();
    assert_eq!(back, p);
}
