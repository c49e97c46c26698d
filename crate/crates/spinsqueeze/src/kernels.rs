//! Banded fast path for the integrators.
//!
//! In the Dicke basis J_z is diagonal and J_x, J_y are tridiagonal, so every
//! superoperator the master equations need costs O(d^2) instead of the
//! O(d^3) of dense multiplication. The public superoperators in `dynamics`
//! and `stochastic` are the dense reference implementations; unit tests pin
//! these kernels against them entry-by-entry.

use nalgebra::DMatrix;

use crate::spin::{ladder_band, Spin};
use crate::C64;

/// Precomputed band data for one spin.
pub(crate) struct Kernels {
    pub dim: usize,
    /// J_z diagonal, m_i = J - i.
    m: Vec<f64>,
    /// Ladder band a_k = <k|J_+|k+1>.
    band: Vec<f64>,
    /// Diagonal of J_y^2.
    jy2_d0: Vec<f64>,
    /// Second superdiagonal of J_y^2 (real).
    jy2_d2: Vec<f64>,
}

/// Scratch matrices reused across steps to keep the hot loop allocation-free.
pub(crate) struct Work {
    pub a: DMatrix<C64>,
    pub b: DMatrix<C64>,
}

impl Work {
    pub fn new(dim: usize) -> Self {
        Work {
            a: DMatrix::zeros(dim, dim),
            b: DMatrix::zeros(dim, dim),
        }
    }
}

impl Kernels {
    pub fn new(spin: Spin) -> Self {
        let dim = spin.dim();
        let band = ladder_band(spin);
        let m: Vec<f64> = (0..dim).map(|i| spin.m(i)).collect();
        let a = |k: isize| -> f64 {
            if k < 0 || k as usize >= band.len() {
                0.0
            } else {
                band[k as usize]
            }
        };
        let jy2_d0: Vec<f64> = (0..dim)
            .map(|i| (a(i as isize).powi(2) + a(i as isize - 1).powi(2)) / 4.0)
            .collect();
        let jy2_d2: Vec<f64> = (0..dim.saturating_sub(2))
            .map(|i| -band[i] * band[i + 1] / 4.0)
            .collect();
        Kernels {
            dim,
            m,
            band,
            jy2_d0,
            jy2_d2,
        }
    }

    /// out = J_y x (tridiagonal left-multiply).
    pub fn jy_left(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let d = self.dim;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for col in 0..d {
            let base = col * d;
            for i in 0..d {
                // (J_y)_{i,i-1} = +i a_{i-1}/2, (J_y)_{i,i+1} = -i a_i/2
                let mut acc = C64::new(0.0, 0.0);
                if i > 0 {
                    acc += C64::new(0.0, self.band[i - 1] / 2.0) * xs[base + i - 1];
                }
                if i + 1 < d {
                    acc += C64::new(0.0, -self.band[i] / 2.0) * xs[base + i + 1];
                }
                os[base + i] = acc;
            }
        }
    }

    /// out = x J_y (tridiagonal right-multiply).
    pub fn jy_right(&self, x: &DMatrix<C64>, out: &mut DMatrix<C64>) {
        let d = self.dim;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for col in 0..d {
            let base = col * d;
            // (J_y)_{col-1,col} = -i a_{col-1}/2, (J_y)_{col+1,col} = +i a_col/2
            let lo = if col > 0 {
                Some(C64::new(0.0, -self.band[col - 1] / 2.0))
            } else {
                None
            };
            let hi = if col + 1 < d {
                Some(C64::new(0.0, self.band[col] / 2.0))
            } else {
                None
            };
            for i in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                if let Some(c) = lo {
                    acc += xs[(col - 1) * d + i] * c;
                }
                if let Some(c) = hi {
                    acc += xs[(col + 1) * d + i] * c;
                }
                os[base + i] = acc;
            }
        }
    }

    /// Deterministic drift of the feedback master equation:
    ///
    ///   out = M D[J_z]rho - i lambda [J_y, J_z rho + rho J_z]
    ///         + (lambda^2/M) D[J_y]rho
    ///
    /// With lambda = 0 this is the bare measurement dephasing M D[J_z]rho.
    pub fn drift_into(
        &self,
        rho: &DMatrix<C64>,
        m_strength: f64,
        lambda: f64,
        out: &mut DMatrix<C64>,
        w: &mut Work,
    ) {
        let d = self.dim;
        {
            // M D[J_z]rho: entry (i, j) scales by -M (m_i - m_j)^2 / 2.
            let rs = rho.as_slice();
            let os = out.as_mut_slice();
            for col in 0..d {
                let base = col * d;
                let mc = self.m[col];
                for i in 0..d {
                    let r = self.m[i] - mc;
                    os[base + i] = rs[base + i] * C64::new(-m_strength * r * r / 2.0, 0.0);
                }
            }
        }
        if lambda == 0.0 {
            return;
        }
        let Work { a, b } = w;

        // X = J_z rho + rho J_z: entry (i, j) scales by (m_i + m_j).
        {
            let rs = rho.as_slice();
            let as_ = a.as_mut_slice();
            for col in 0..d {
                let base = col * d;
                let mc = self.m[col];
                for i in 0..d {
                    as_[base + i] = rs[base + i] * C64::new(self.m[i] + mc, 0.0);
                }
            }
        }
        // -i lambda (J_y X - X J_y)
        self.jy_left(a, b);
        axpy(out, C64::new(0.0, -lambda), b);
        self.jy_right(a, b);
        axpy(out, C64::new(0.0, lambda), b);

        // (lambda^2/M) D[J_y]rho with D[J_y]rho = J_y rho J_y - (J_y^2 rho + rho J_y^2)/2,
        // all built from tridiagonal multiplies.
        let g = lambda * lambda / m_strength;
        self.jy_left(rho, a); // A = J_y rho
        self.jy_right(a, b); // A J_y = J_y rho J_y
        axpy(out, C64::new(g, 0.0), b);
        self.jy_left(a, b); // J_y A = J_y^2 rho
        axpy(out, C64::new(-g / 2.0, 0.0), b);
        self.jy_right(rho, a); // B = rho J_y
        self.jy_right(a, b); // B J_y = rho J_y^2
        axpy(out, C64::new(-g / 2.0, 0.0), b);
    }

    /// Diffusion (innovation) coefficient of the conditioned equation:
    ///
    ///   out = sqrt(M) (J_z rho + rho J_z - 2 <J_z> rho)
    ///         - i (lambda/sqrt(M)) [J_y, rho]
    pub fn innovation_into(
        &self,
        rho: &DMatrix<C64>,
        m_strength: f64,
        lambda: f64,
        out: &mut DMatrix<C64>,
        w: &mut Work,
    ) {
        let d = self.dim;
        let sqrt_m = m_strength.sqrt();
        let jz_mean = self.jz_expect(rho);
        {
            let rs = rho.as_slice();
            let os = out.as_mut_slice();
            for col in 0..d {
                let base = col * d;
                let mc = self.m[col];
                for i in 0..d {
                    let c = sqrt_m * (self.m[i] + mc - 2.0 * jz_mean);
                    os[base + i] = rs[base + i] * C64::new(c, 0.0);
                }
            }
        }
        if lambda == 0.0 {
            return;
        }
        let s = lambda / sqrt_m;
        self.jy_left(rho, &mut w.a);
        axpy(out, C64::new(0.0, -s), &w.a);
        self.jy_right(rho, &mut w.a);
        axpy(out, C64::new(0.0, s), &w.a);
    }

    pub fn jz_expect(&self, rho: &DMatrix<C64>) -> f64 {
        let d = self.dim;
        let rs = rho.as_slice();
        (0..d).map(|i| self.m[i] * rs[i * d + i].re).sum()
    }

    pub fn jz2_expect(&self, rho: &DMatrix<C64>) -> f64 {
        let d = self.dim;
        let rs = rho.as_slice();
        (0..d)
            .map(|i| self.m[i] * self.m[i] * rs[i * d + i].re)
            .sum()
    }

    pub fn jx_expect(&self, rho: &DMatrix<C64>) -> f64 {
        let d = self.dim;
        let rs = rho.as_slice();
        // Tr[J_x rho] = sum_k a_k Re rho_{k,k+1} for Hermitian rho.
        (0..d - 1)
            .map(|k| self.band[k] * rs[(k + 1) * d + k].re)
            .sum()
    }

    pub fn jy_expect(&self, rho: &DMatrix<C64>) -> f64 {
        let d = self.dim;
        let rs = rho.as_slice();
        // Tr[J_y rho] = sum_k a_k Im rho_{k+1,k} for Hermitian rho.
        (0..d - 1)
            .map(|k| self.band[k] * rs[k * d + k + 1].im)
            .sum()
    }

    pub fn jy2_expect(&self, rho: &DMatrix<C64>) -> f64 {
        let d = self.dim;
        let rs = rho.as_slice();
        let diag: f64 = (0..d).map(|i| self.jy2_d0[i] * rs[i * d + i].re).sum();
        let off: f64 = (0..d.saturating_sub(2))
            .map(|i| self.jy2_d2[i] * 2.0 * rs[(i + 2) * d + i].re)
            .sum();
        diag + off
    }

    pub fn purity(&self, rho: &DMatrix<C64>) -> f64 {
        rho.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// out += c * x, entrywise.
pub(crate) fn axpy(out: &mut DMatrix<C64>, c: C64, x: &DMatrix<C64>) {
    let os = out.as_mut_slice();
    let xs = x.as_slice();
    for (o, &v) in os.iter_mut().zip(xs.iter()) {
        *o += c * v;
    }
}

/// Restore Hermiticity exactly and renormalize the trace to one.
///
/// Returns the trace before renormalization so the caller can detect
/// divergence (non-finite or collapsed trace).
pub(crate) fn hermitize_renormalize(mat: &mut DMatrix<C64>) -> f64 {
    let d = mat.nrows();
    for j in 0..d {
        for i in 0..j {
            let up = (mat[(i, j)] + mat[(j, i)].conj()) * C64::new(0.5, 0.0);
            mat[(i, j)] = up;
            mat[(j, i)] = up.conj();
        }
        let re = mat[(j, j)].re;
        mat[(j, j)] = C64::new(re, 0.0);
    }
    let trace: f64 = (0..d).map(|i| mat[(i, i)].re).sum();
    if trace.is_finite() && trace > 0.0 {
        let inv = C64::new(1.0 / trace, 0.0);
        for z in mat.iter_mut() {
            *z *= inv;
        }
    }
    trace
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{spin_operators, Spin};
    use rand::rngs::StdRng;
    use rand::{RngExt, SeedableRng};

    fn random_matrix(d: usize, rng: &mut StdRng) -> DMatrix<C64> {
        DMatrix::from_fn(d, d, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_density(d: usize, rng: &mut StdRng) -> DMatrix<C64> {
        let a = random_matrix(d, rng);
        let mut rho = &a * a.adjoint();
        let tr = rho.trace();
        rho /= tr;
        rho
    }

    fn max_dev(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn banded_multiplies_match_dense() {
        let mut rng = StdRng::seed_from_u64(11);
        for two_j in [1u32, 2, 3, 7, 16] {
            let spin = Spin::new(two_j).unwrap();
            let d = spin.dim();
            let k = Kernels::new(spin);
            let (_, jy, _) = spin_operators(spin).unwrap();
            let x = random_matrix(d, &mut rng);
            let mut out = DMatrix::zeros(d, d);

            k.jy_left(&x, &mut out);
            assert!(max_dev(&out, &(jy.mat() * &x)) <= 1e-13);

            k.jy_right(&x, &mut out);
            assert!(max_dev(&out, &(&x * jy.mat())) <= 1e-13);
        }
    }

    #[test]
    fn drift_matches_dense_superoperators() {
        let mut rng = StdRng::seed_from_u64(12);
        for two_j in [1u32, 2, 5, 9] {
            let spin = Spin::new(two_j).unwrap();
            let d = spin.dim();
            let k = Kernels::new(spin);
            let mut w = Work::new(d);
            let (_, jy, jz) = spin_operators(spin).unwrap();
            let rho = random_density(d, &mut rng);
            let m_strength = 1.3;
            let lambda = 0.7;

            let dissip = |r: &DMatrix<C64>, x: &DMatrix<C64>| -> DMatrix<C64> {
                let rr = r * r;
                r * x * r - (&rr * x + x * &rr) * C64::new(0.5, 0.0)
            };
            let x_anti = jz.mat() * &rho + &rho * jz.mat();
            let comm = jy.mat() * &x_anti - &x_anti * jy.mat();
            let dense = dissip(jz.mat(), &rho) * C64::new(m_strength, 0.0)
                + comm * C64::new(0.0, -lambda)
                + dissip(jy.mat(), &rho) * C64::new(lambda * lambda / m_strength, 0.0);

            let mut out = DMatrix::zeros(d, d);
            k.drift_into(&rho, m_strength, lambda, &mut out, &mut w);
            assert!(
                max_dev(&out, &dense) <= 1e-13,
                "drift mismatch for 2J = {two_j}: {:.3e}",
                max_dev(&out, &dense)
            );
        }
    }

    #[test]
    fn innovation_matches_dense_superoperator() {
        let mut rng = StdRng::seed_from_u64(13);
        for two_j in [1u32, 4, 8] {
            let spin = Spin::new(two_j).unwrap();
            let d = spin.dim();
            let k = Kernels::new(spin);
            let mut w = Work::new(d);
            let (_, jy, jz) = spin_operators(spin).unwrap();
            let rho = random_density(d, &mut rng);
            let m_strength = 0.8_f64;
            let lambda = 1.9;

            let tr_jz = (jz.mat() * &rho).trace().re;
            let dense = (jz.mat() * &rho + &rho * jz.mat() - &rho * C64::new(2.0 * tr_jz, 0.0))
                * C64::new(m_strength.sqrt(), 0.0)
                + (jy.mat() * &rho - &rho * jy.mat()) * C64::new(0.0, -lambda / m_strength.sqrt());

            let mut out = DMatrix::zeros(d, d);
            k.innovation_into(&rho, m_strength, lambda, &mut out, &mut w);
            assert!(max_dev(&out, &dense) <= 1e-13);
        }
    }

    #[test]
    fn observable_extractors_match_dense_traces() {
        let mut rng = StdRng::seed_from_u64(14);
        for two_j in [1u32, 3, 10] {
            let spin = Spin::new(two_j).unwrap();
            let d = spin.dim();
            let k = Kernels::new(spin);
            let (jx, jy, jz) = spin_operators(spin).unwrap();
            let rho = random_density(d, &mut rng);

            let tr = |op: &DMatrix<C64>| (op * &rho).trace().re;
            assert!((k.jx_expect(&rho) - tr(jx.mat())).abs() <= 1e-13);
            assert!((k.jy_expect(&rho) - tr(jy.mat())).abs() <= 1e-13);
            assert!((k.jz_expect(&rho) - tr(jz.mat())).abs() <= 1e-13);
            assert!((k.jz2_expect(&rho) - tr(&(jz.mat() * jz.mat()))).abs() <= 1e-13);
            assert!((k.jy2_expect(&rho) - tr(&(jy.mat() * jy.mat()))).abs() <= 1e-13);
            let purity_dense = (&rho * &rho).trace().re;
            assert!((k.purity(&rho) - purity_dense).abs() <= 1e-13);
        }
    }

    #[test]
    fn hermitize_renormalize_restores_invariants() {
        let mut rng = StdRng::seed_from_u64(15);
        let mut mat = random_matrix(6, &mut rng);
        let tr = hermitize_renormalize(&mut mat);
        assert!(tr.is_finite());
        assert!(crate::spin::hermitian_deviation(&mat) == 0.0);
        assert!((mat.trace().re - 1.0).abs() <= 1e-12);
        assert!(mat.trace().im == 0.0);
    }
}
