//! Galilei boosts, their two-component variant and modulation phases.
//!
//! Translations are applied as Fourier phases, so arbitrary real shifts are
//! exact on the periodic box. A boost `e^{-i x.v}` maps Fourier modes to
//! Fourier modes only when `v` lies on the dual lattice
//! ([`Grid::is_dual_lattice`]); off-lattice boosts are still unitary but do
//! not intertwine exactly with the discrete free flow.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::gridfield::{Grid, ScalarField, SpinorField, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalileiParams {
    pub velocity: Vec3,
    pub offset: Vec3,
    pub time: f64,
}

impl GalileiParams {
    pub fn new(velocity: Vec3, offset: Vec3, time: f64) -> Self {
        Self {
            velocity,
            offset,
            time,
        }
    }

    /// `G_v(t)` with zero offset.
    pub fn boost(velocity: Vec3, time: f64) -> Self {
        Self::new(velocity, [0.0; 3], time)
    }

    pub fn at_time(&self, time: f64) -> Self {
        Self { time, ..*self }
    }

    /// Translation `y + t v` applied by the transform.
    pub fn shift(&self) -> Vec3 {
        let (v, y, t) = (&self.velocity, &self.offset, self.time);
        [y[0] + t * v[0], y[1] + t * v[1], y[2] + t * v[2]]
    }

    fn speed_sqr(&self) -> f64 {
        self.velocity.iter().map(|c| c * c).sum()
    }
}

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Returns `x -> f(x - d)`.
pub fn translate(f: &ScalarField, d: &Vec3) -> ScalarField {
    let g = f.grid();
    if d.iter().all(|c| *c == 0.0) {
        return f.clone();
    }
    let mut data = f.values().to_vec();
    let mut ws = g.workspace();
    g.fft_forward(&mut data, &mut ws);
    for (i, z) in data.iter_mut().enumerate() {
        let k = g.wavevector(i);
        *z *= Complex64::from_polar(1.0, -dot(&k, d));
    }
    g.fft_inverse(&mut data, &mut ws);
    ScalarField::from_vec_unchecked(g.clone(), data)
}

fn multiply_phase(f: &mut ScalarField, phase: impl Fn(&Vec3) -> f64) {
    let g = f.grid().clone();
    for (i, z) in f.values_mut().iter_mut().enumerate() {
        *z *= Complex64::from_polar(1.0, phase(&g.coords(i)));
    }
}

/// `G_{v,y}(t) f (x) = e^{i|v|^2 t/2} e^{-i(x+b).v} f(x + b)` with `b = y + t v`:
/// the phases are applied first, then the translation `e^{i b.p}`.
pub fn galilei(f: &ScalarField, gp: &GalileiParams) -> ScalarField {
    let b = gp.shift();
    let v = gp.velocity;
    let base = 0.5 * gp.speed_sqr() * gp.time;
    let mut out = translate(f, &[-b[0], -b[1], -b[2]]);
    multiply_phase(&mut out, |x| base - dot(&[x[0] + b[0], x[1] + b[1], x[2] + b[2]], &v));
    out
}

/// Exact inverse of [`galilei`]. For `y = 0` this equals `galilei` with `-v`.
pub fn galilei_inverse(f: &ScalarField, gp: &GalileiParams) -> ScalarField {
    let b = gp.shift();
    let v = gp.velocity;
    let base = 0.5 * gp.speed_sqr() * gp.time;
    let mut out = f.clone();
    multiply_phase(&mut out, |x| dot(&[x[0] + b[0], x[1] + b[1], x[2] + b[2]], &v) - base);
    translate(&out, &b)
}

/// `(G psi_1, conj(G conj(psi_2)))`.
pub fn vector_galilei(psi: &SpinorField, gp: &GalileiParams) -> SpinorField {
    SpinorField {
        upper: galilei(&psi.upper, gp),
        lower: galilei(&psi.lower.conj(), gp).conj(),
    }
}

pub fn vector_galilei_inverse(psi: &SpinorField, gp: &GalileiParams) -> SpinorField {
    SpinorField {
        upper: galilei_inverse(&psi.upper, gp),
        lower: galilei_inverse(&psi.lower.conj(), gp).conj(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    pub alpha: f64,
    pub gamma: f64,
    pub time: f64,
}

impl ModulationParams {
    /// `omega(t) = alpha^2 t + gamma`.
    pub fn omega(&self) -> f64 {
        self.alpha * self.alpha * self.time + self.gamma
    }
}

/// `diag(e^{-i omega/2}, e^{+i omega/2})`.
pub fn modulation(psi: &SpinorField, mp: &ModulationParams) -> SpinorField {
    let w = mp.omega();
    let mut out = psi.clone();
    out.upper.scale(Complex64::from_polar(1.0, -0.5 * w));
    out.lower.scale(Complex64::from_polar(1.0, 0.5 * w));
    out
}

pub fn modulation_inverse(psi: &SpinorField, mp: &ModulationParams) -> SpinorField {
    let w = mp.omega();
    let mut out = psi.clone();
    out.upper.scale(Complex64::from_polar(1.0, 0.5 * w));
    out.lower.scale(Complex64::from_polar(1.0, -0.5 * w));
    out
}

/// Nearest dual-lattice velocity, so that boosts commute with the discrete free flow.
pub fn snap_to_dual_lattice(grid: &Grid, v: &Vec3) -> Vec3 {
    let dk = grid.dual_spacing();
    let mut out = [0.0; 3];
    for a in 0..grid.dim() {
        out[a] = (v[a] / dk).round() * dk;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridfield::lp_norm;
    use crate::propagator::free_propagate;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn packet(g: &Grid, center: Vec3, k: Vec3, s: f64) -> ScalarField {
        ScalarField::from_fn(g, |x| {
            let d = g.min_image(x, &center);
            let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            Complex64::from_polar((-r2 / (2.0 * s * s)).exp(), dot(&k, &d))
        })
    }

    fn rel(a: &ScalarField, b: &ScalarField) -> f64 {
        a.sub(b).norm() / b.norm()
    }

    #[test]
    fn identity_parameters() {
        let g = Grid::new(2, 32, 4.0 * PI).unwrap();
        let f = packet(&g, [0.5, -1.0, 0.0], [0.5, 0.25, 0.0], 1.3);
        let out = galilei(&f, &GalileiParams::boost([0.0; 3], 2.5));
        assert!(rel(&out, &f) < 1e-14);
    }

    #[test]
    fn translation_round_trip_is_exact() {
        let g = Grid::new(2, 32, 6.0).unwrap();
        let f = packet(&g, [0.5, -1.0, 0.0], [1.0, 0.0, 0.0], 1.1);
        let d = [0.3217, -1.77, 0.0];
        let back = translate(&translate(&f, &d), &[-d[0], -d[1], 0.0]);
        assert!(rel(&back, &f) < 1e-13);
    }

    #[test]
    fn inverse_with_zero_offset_is_opposite_boost() {
        let g = Grid::new(1, 128, 8.0 * PI).unwrap();
        let f = packet(&g, [1.0, 0.0, 0.0], [0.5, 0.0, 0.0], 2.0);
        let gp = GalileiParams::boost([0.75, 0.0, 0.0], 1.7);
        let a = galilei_inverse(&f, &gp);
        let b = galilei(&f, &GalileiParams::boost([-0.75, 0.0, 0.0], 1.7));
        assert!(rel(&a, &b) < 1e-13);
    }

    #[test]
    fn inverse_with_offset_carries_phase() {
        // G^{-1} = e^{+i y.v} G_{-v,-y} under the multiply-then-translate order.
        let g = Grid::new(1, 128, 8.0 * PI).unwrap();
        let f = packet(&g, [1.0, 0.0, 0.0], [0.5, 0.0, 0.0], 2.0);
        let (v, y) = ([0.5, 0.0, 0.0], [1.3, 0.0, 0.0]);
        let gp = GalileiParams::new(v, y, 0.8);
        let a = galilei_inverse(&f, &gp);
        let mut b = galilei(&f, &GalileiParams::new([-v[0], 0.0, 0.0], [-y[0], 0.0, 0.0], 0.8));
        b.scale(Complex64::from_polar(1.0, dot(&y, &v)));
        assert!(rel(&a, &b) < 1e-13);
    }

    #[test]
    fn vector_galilei_inverse_is_opposite_boost() {
        let g = Grid::new(1, 128, 8.0 * PI).unwrap();
        let psi = SpinorField::new(
            packet(&g, [1.0, 0.0, 0.0], [0.5, 0.0, 0.0], 2.0),
            packet(&g, [-2.0, 0.0, 0.0], [-0.25, 0.0, 0.0], 1.5),
        )
        .unwrap();
        let gp = GalileiParams::boost([1.0, 0.0, 0.0], 3.0);
        let fwd = vector_galilei(&psi, &gp);
        let back = vector_galilei(&fwd, &GalileiParams::boost([-1.0, 0.0, 0.0], 3.0));
        assert!(back.sub(&psi).norm() < 1e-12 * psi.norm());
        assert!((fwd.upper.norm() - psi.upper.norm()).abs() < 1e-12);
        assert!((fwd.lower.norm() - psi.lower.norm()).abs() < 1e-12);
        let still = vector_galilei(&psi, &GalileiParams::new([0.0; 3], [0.0; 3], 5.0));
        assert!(still.sub(&psi).norm() < 1e-13);
    }

    #[test]
    fn modulation_properties() {
        let g = Grid::new(1, 32, 5.0).unwrap();
        let psi = SpinorField::new(
            packet(&g, [0.0; 3], [0.0; 3], 1.0),
            packet(&g, [1.0, 0.0, 0.0], [0.0; 3], 1.0),
        )
        .unwrap();
        let mp = ModulationParams {
            alpha: 0.8,
            gamma: 0.4,
            time: 2.3,
        };
        let round = modulation_inverse(&modulation(&psi, &mp), &mp);
        assert!(round.sub(&psi).norm() < 1e-15);

        let at0 = modulation(&psi, &ModulationParams { time: 0.0, ..mp });
        let i = 7;
        let ratio_up = at0.upper.values()[i] / psi.upper.values()[i];
        let ratio_dn = at0.lower.values()[i] / psi.lower.values()[i];
        assert!((ratio_up - Complex64::from_polar(1.0, -0.2)).norm() < 1e-15);
        assert!((ratio_dn - Complex64::from_polar(1.0, 0.2)).norm() < 1e-15);

        let gp = GalileiParams::new([0.5, 0.0, 0.0], [0.7, 0.0, 0.0], 1.1);
        let a = modulation(&vector_galilei(&psi, &gp), &mp);
        let b = vector_galilei(&modulation(&psi, &mp), &gp);
        assert!(a.sub(&b).norm() < 1e-13);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn galilei_is_an_isometry(m in -4i32..4, j in -6i32..6, t in -2.0f64..2.0) {
            let g = Grid::new(2, 32, 4.0 * PI).unwrap();
            let dk = g.dual_spacing();
            let f = packet(&g, [0.5, -1.0, 0.0], [0.5, 0.0, 0.0], 1.4);
            let v = [m as f64 * dk, 0.5 * dk, 0.0];
            // offset chosen so the total shift y + t v is a whole number of cells
            let h = g.spacing();
            let y = [j as f64 * h - t * v[0], -j as f64 * h - t * v[1], 0.0];
            let out = galilei(&f, &GalileiParams::new(v, y, t));
            for p in [1.0, 2.0, f64::INFINITY] {
                let a = lp_norm(&out, p).unwrap();
                let b = lp_norm(&f, p).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * b, "p={} {} vs {}", p, a, b);
            }
            let off_grid = galilei(&f, &GalileiParams::new(v, [0.3, 0.1, 0.0], t));
            prop_assert!((off_grid.norm() - f.norm()).abs() <= 1e-12 * f.norm());
        }

        #[test]
        fn galilei_intertwines_free_flow(m in -3i32..3, y in -2.0f64..2.0, t in 0.0f64..2.0) {
            let g = Grid::new(1, 128, 8.0 * PI).unwrap();
            let dk = g.dual_spacing();
            let f = packet(&g, [1.0, 0.0, 0.0], [0.25, 0.0, 0.0], 1.5);
            let gp = GalileiParams::new([m as f64 * dk, 0.0, 0.0], [y, 0.0, 0.0], t);
            let lhs = galilei(&free_propagate(&f, t), &gp);
            let rhs = free_propagate(&galilei(&f, &gp.at_time(0.0)), t);
            prop_assert!(rel(&lhs, &rhs) < 1e-10);
        }

        #[test]
        fn composition_is_a_ray(m1 in -3i32..3, m2 in -3i32..3, y1 in -2.0f64..2.0, y2 in -2.0f64..2.0) {
            let g = Grid::new(1, 128, 8.0 * PI).unwrap();
            let dk = g.dual_spacing();
            let f = packet(&g, [0.0; 3], [0.0; 3], 1.5);
            let (v1, v2) = (m1 as f64 * dk, m2 as f64 * dk);
            let t = 0.9;
            let a = galilei(&galilei(&f, &GalileiParams::new([v1, 0.0, 0.0], [y1, 0.0, 0.0], t)),
                            &GalileiParams::new([v2, 0.0, 0.0], [y2, 0.0, 0.0], t));
            // single transform with the combined boost and shift
            let v = v1 + v2;
            let y = y1 + y2;
            let b = galilei(&f, &GalileiParams::new([v, 0.0, 0.0], [y, 0.0, 0.0], t));
            let overlap = a.inner(&b).norm();
            prop_assert!((overlap - a.norm() * b.norm()).abs() < 1e-10 * a.norm() * b.norm());
        }
    }
}
