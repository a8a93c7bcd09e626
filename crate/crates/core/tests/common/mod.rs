//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use ode_solvers::{Dopri5, OutputType, System, Vector2};
use qcloak::model::{Layer, LayerStack, Medium, HBAR2_OVER_2ME};
use rand::Rng;

pub fn quoted_stack() -> LayerStack {
    LayerStack::new(
        0.01,
        Medium::new(0.8, 0.0),
        vec![
            Layer::new(Medium::new(0.16, -2.34), 2.0),
            Layer::new(Medium::new(0.33, 16.21), 1.7),
        ],
    )
    .unwrap()
}

pub fn identity_stack() -> LayerStack {
    let bg = Medium::new(0.8, 0.0);
    LayerStack::new(0.01, bg, vec![Layer::new(bg, 2.0), Layer::new(bg, 1.7)]).unwrap()
}

/// `j_l(x)` by its power series, `y_l(x)` by upward recurrence from the
/// trigonometric closed forms. Real `x` only.
pub fn reference_jy(l_max: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut j = Vec::with_capacity(l_max + 2);
    for l in 0..=l_max + 1 {
        let mut dfact = 1.0;
        for k in 0..=l {
            dfact *= (2 * k + 1) as f64;
        }
        let mut term = x.powi(l as i32) / dfact;
        let mut sum = term;
        let q = -0.5 * x * x;
        for k in 1..200 {
            term *= q / (k as f64 * (2 * l + 2 * k + 1) as f64);
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        j.push(sum);
    }
    let mut y = vec![-x.cos() / x, -x.cos() / (x * x) - x.sin() / x];
    for l in 1..=l_max {
        y.push((2 * l + 1) as f64 / x * y[l] - y[l - 1]);
    }
    (j, y)
}

/// `(h_l, h_l')` of the first kind from [`reference_jy`].
pub fn reference_h_and_j(l: usize, x: f64) -> (f64, f64, Complex64, Complex64) {
    let (j, y) = reference_jy(l + 1, x);
    let jp = if l == 0 {
        -j[1]
    } else {
        j[l - 1] - (l + 1) as f64 / x * j[l]
    };
    let yp = if l == 0 {
        -y[1]
    } else {
        y[l - 1] - (l + 1) as f64 / x * y[l]
    };
    (j[l], jp, Complex64::new(j[l], y[l]), Complex64::new(jp, yp))
}

struct Radial {
    l: f64,
    k2: f64,
}

impl System<f64, Vector2<f64>> for Radial {
    fn system(&self, r: f64, y: &Vector2<f64>, dy: &mut Vector2<f64>) {
        dy[0] = y[1];
        dy[1] = -2.0 / r * y[1] - (self.k2 - self.l * (self.l + 1.0) / (r * r)) * y[0];
    }
}

/// `a_l` from direct integration of the radial equation outward, with the
/// flux matching `R'/m` continuous at each interface.
pub fn ode_scattering_coefficient(stack: &LayerStack, l: usize) -> Complex64 {
    let n = stack.layers.len();
    let k2 = |region: usize| {
        let m = stack.medium(region);
        m.effective_mass * (stack.energy - m.potential) / HBAR2_OVER_2ME
    };
    let lf = l as f64;
    let inner_r = stack.layers[n - 1].outer_radius;
    let kin2 = k2(n);
    let r0 = (0.05 * inner_r).min(0.02 / kin2.abs().sqrt().max(1e-12));
    let c1 = -kin2 / (2.0 * (2.0 * lf + 3.0));
    let c2 = kin2 * kin2 / (8.0 * (2.0 * lf + 3.0) * (2.0 * lf + 5.0));
    let state0 = Vector2::new(
        r0.powi(l as i32) * (1.0 + c1 * r0 * r0 + c2 * r0.powi(4)),
        r0.powi(l as i32 - 1) * (lf + (lf + 2.0) * c1 * r0 * r0 + (lf + 4.0) * c2 * r0.powi(4)),
    );
    let mut state = state0 / state0[0].abs();
    let mut r_start = r0;
    for region in (1..=n).rev() {
        let r_end = stack.layers[region - 1].outer_radius;
        let mut solver = Dopri5::from_param(
            Radial {
                l: lf,
                k2: k2(region),
            },
            r_start,
            r_end,
            r_end - r_start,
            state,
            1e-12,
            1e-14,
            0.9,
            0.04,
            0.2,
            10.0,
            r_end - r_start,
            0.0,
            10_000_000,
            u32::MAX,
            OutputType::Sparse,
        );
        solver.integrate().expect("radial integration");
        state = *solver.y_out().last().unwrap();
        let scale = state[0].abs().max(state[1].abs());
        state /= scale;
        let m_in = stack.medium(region).effective_mass;
        let m_out = stack.medium(region - 1).effective_mass;
        state[1] *= m_out / m_in;
        r_start = r_end;
    }
    let a = stack.radius();
    let k0 = stack.k0();
    let (j, jp, h, hp) = reference_h_and_j(l, k0 * a);
    let (r, d) = (state[0], state[1]);
    (d * j - r * k0 * jp) / (r * k0 * hp - d * h)
}

/// Two-layer stack with real parameters and moderate `|k| R` in every region.
pub fn random_two_layer(rng: &mut impl Rng) -> LayerStack {
    loop {
        let a = rng.gen_range(1.0..3.0);
        let ac = a * rng.gen_range(0.3..0.9);
        let energy = rng.gen_range(0.005..0.1);
        let m0 = rng.gen_range(0.05..1.0);
        let ms = rng.gen_range(0.05..1.0);
        let mc = rng.gen_range(0.05..1.0);
        let vs = rng.gen_range(-3.0..1.0);
        let vc = rng.gen_range(-3.0..20.0);
        let s = LayerStack::new(
            energy,
            Medium::new(m0, 0.0),
            vec![
                Layer::new(Medium::new(ms, vs), a),
                Layer::new(Medium::new(mc, vc), ac),
            ],
        )
        .unwrap();
        let ok = (0..3).all(|i| {
            let k = s.wavenumber(i).value().norm();
            let r = if i == 0 {
                a
            } else {
                s.layers[i - 1].outer_radius
            };
            k * r < 25.0 && k * r > 0.05
        });
        if ok && s.k0() * a < 3.0 {
            return s;
        }
    }
}
