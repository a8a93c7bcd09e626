mod common;

use common::*;
use proptest::prelude::*;
use qcloak::fields::*;
use qcloak::model::{Layer, LayerStack, Medium};
use qcloak::solver::SolutionSet;

fn solved(s: &LayerStack) -> SolutionSet {
    SolutionSet::for_radius(s, 1.5 * s.radius()).unwrap()
}

#[test]
fn annulus_flux_balances_hemisphere_inflows() {
    let s = quoted_stack();
    let sol = solved(&s);
    let (a, ac) = (s.radius(), s.layers[1].outer_radius);
    let annulus = flux_through_annulus(&sol, ac, a).unwrap();
    let balance = flux_into_lower_hemisphere(&sol, a).unwrap()
        - flux_into_lower_hemisphere(&sol, ac).unwrap();
    assert!(
        (annulus - balance).abs() < 1e-7 * (a * a),
        "{annulus} vs {balance}"
    );
}

#[test]
fn flux_fraction_is_annulus_over_disc() {
    let s = quoted_stack();
    let sol = solved(&s);
    let (a, ac) = (s.radius(), s.layers[1].outer_radius);
    let f = flux_through_shell_annulus(&sol).unwrap();
    let raw = flux_through_annulus(&sol, ac, a).unwrap();
    assert!((f - raw / (std::f64::consts::PI * a * a)).abs() < 1e-14);
}

#[test]
fn identity_stack_annulus_carries_incident_flux() {
    let s = identity_stack();
    let sol = solved(&s);
    let (a, ac) = (s.radius(), s.layers[1].outer_radius);
    let f = flux_through_shell_annulus(&sol).unwrap();
    assert!((f - (1.0 - (ac / a).powi(2))).abs() < 1e-8, "{f}");
}

#[test]
fn quoted_parameters_node_lies_inside_shell_window() {
    let s = quoted_stack();
    let sol = SolutionSet::solve(&s, 2).unwrap();
    let shell: Vec<_> = sol.waves.iter().map(|w| w.shell_coefficients()).collect();
    let report = find_nodal_point(&s, &shell).unwrap();
    let ac = s.layers[1].outer_radius;
    for l in 0..=1 {
        let r = report.r_n(l).expect("node");
        assert!(r > NODAL_WINDOW_START * ac && r <= ac);
        let (g, _) = channel_radial(l, s.wavenumber(1).value(), shell[l].0, shell[l].1, r).unwrap();
        assert!(g.norm() < 1e-6, "l={l} g={g}");
    }
}

#[test]
fn grid_json_round_trip_is_exact() {
    let s = quoted_stack();
    let sol = solved(&s);
    let g = export_field_grid(&sol, PlaneSpec::default(), 9, None).unwrap();
    let back = FieldGrid::from_json_str(&g.to_json_string()).unwrap();
    assert_eq!(back, g);
}

fn stack_strategy() -> impl Strategy<Value = LayerStack> {
    (
        0.005f64..0.1,
        (0.05f64..1.0, -3.0f64..1.0),
        (0.05f64..1.0, -3.0f64..20.0),
        1.0f64..2.5,
        0.3f64..0.9,
    )
        .prop_map(|(e, (ms, vs), (mc, vc), a, frac)| LayerStack {
            energy: e,
            background: Medium::new(0.8, 0.0),
            layers: vec![
                Layer::new(Medium::new(ms, vs), a),
                Layer::new(Medium::new(mc, vc), a * frac),
            ],
        })
        .prop_filter("no branch point", |s| {
            (0..3).all(|i| s.wavenumber(i).value().norm() > 1e-3)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn no_net_flux_through_any_sphere(s in stack_strategy(), frac in 0.1f64..1.4) {
        let sol = solved(&s);
        let r = frac * s.radius();
        let net = net_flux_through_sphere(&sol, r).unwrap();
        let scale = flux_into_lower_hemisphere(&sol, r).unwrap().abs().max(r * r);
        prop_assert!(net.abs() <= 1e-6 * scale, "net {} at r {}", net, r);
    }
}
