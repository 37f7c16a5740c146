//! Discrete Fourier analysis on Z_N^d.
//!
//! Convention: the forward transform is unnormalized,
//! `f^_n = sum_k f_k exp(-i 2 pi n.k / N)`, and the inverse carries `1/M`.
//! Every formula in the crate assumes this convention.
//!
//! Symbols of stencils are evaluated directly from the sparse coefficients
//! (O(M nnz)); the dense transform exists for diagnostics and as a test
//! oracle.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CoherenceError, Result};
use crate::lattice::{MultiIndex, TorusShape};
use crate::stencil::{FeedbackSpec, Stencil, VehicularFeedback};

/// Relative threshold under which imaginary parts count as rounding noise.
pub const REALNESS_TOL: f64 = 1e-12;

fn twiddles(side: usize, sign: f64) -> Vec<Complex64> {
    (0..side)
        .map(|j| Complex64::from_polar(1.0, sign * 2.0 * PI * j as f64 / side as f64))
        .collect()
}

fn transform(shape: TorusShape, input: &[Complex64], sign: f64) -> Result<Vec<Complex64>> {
    if input.len() != shape.sites() {
        return Err(CoherenceError::LengthMismatch {
            expected: shape.sites(),
            actual: input.len(),
        });
    }
    let n = shape.side();
    let tw = twiddles(n, sign);
    let mut data = input.to_vec();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    // one axis at a time; `stride` is the distance between neighbours on the axis
    let mut stride = 1;
    for _ in 0..shape.dim() {
        let block = stride * n;
        for base in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (freq, out) in line.iter_mut().enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in 0..n {
                        acc += data[start + k * stride] * tw[(freq * k) % n];
                    }
                    *out = acc;
                }
                for (k, v) in line.iter().enumerate() {
                    data[start + k * stride] = *v;
                }
            }
        }
        stride = block;
    }
    Ok(data)
}

/// Forward multi-dimensional DFT (no normalization).
pub fn dft(shape: TorusShape, f: &[Complex64]) -> Result<Vec<Complex64>> {
    transform(shape, f, -1.0)
}

/// Inverse multi-dimensional DFT (carries the `1/M` factor).
pub fn idft(shape: TorusShape, f: &[Complex64]) -> Result<Vec<Complex64>> {
    let scale = 1.0 / shape.sites() as f64;
    let mut out = transform(shape, f, 1.0)?;
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

pub fn dft_real(shape: TorusShape, f: &[f64]) -> Result<Vec<Complex64>> {
    let c: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    dft(shape, &c)
}

/// Fourier symbol of a circulant operator: one (complex) eigenvalue per
/// wavenumber, row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourierSymbol {
    pub shape: TorusShape,
    pub values: Vec<Complex64>,
}

impl FourierSymbol {
    pub fn at(&self, n: &MultiIndex) -> Complex64 {
        self.values[self.shape.linear(n)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    pub fn is_real(&self) -> bool {
        self.max_imag() <= REALNESS_TOL * self.max_abs().max(1.0)
    }

    /// Real parts, after checking that the imaginary parts are negligible.
    pub fn into_real(self) -> Result<Vec<f64>> {
        if !self.is_real() {
            return Err(CoherenceError::Unsupported(format!(
                "symbol has imaginary part {:.3e}; stencil is not reflection symmetric",
                self.max_imag()
            )));
        }
        Ok(self.values.into_iter().map(|v| v.re).collect())
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

/// Symbol `sum_k s_k exp(-i 2 pi n.k / N)` evaluated from the sparse entries.
pub fn symbol_of_stencil(s: &Stencil) -> FourierSymbol {
    let shape = s.shape();
    let side = shape.side();
    let tw = twiddles(side, -1.0);
    let entries: Vec<(Vec<usize>, f64)> = s.entries().map(|(k, v)| (k.coords().to_vec(), v)).collect();
    let values = (0..shape.sites())
        .into_par_iter()
        .map(|pos| {
            let n = shape.from_linear(pos);
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, v) in &entries {
                let phase = n
                    .coords()
                    .iter()
                    .zip(k)
                    .fold(0, |p, (a, b)| (p + a * b) % side);
                acc += tw[phase] * *v;
            }
            acc
        })
        .collect();
    FourierSymbol { shape, values }
}

/// Closed form of the standard array's symbol:
/// `-2 beta sum_r (1 - cos(2 pi n_r / N))`.
pub fn standard_symbol(shape: TorusShape, beta: f64, n: &MultiIndex) -> f64 {
    let side = shape.side() as f64;
    -2.0 * beta
        * n.coords()
            .iter()
            .map(|&c| 1.0 - (2.0 * PI * c as f64 / side).cos())
            .sum::<f64>()
}

/// `tr(T_s) = M * s_0`.
pub fn trace_of_circulant(s: &Stencil) -> f64 {
    s.shape().sites() as f64 * s.center()
}

/// Trace as the sum of eigenvalues, for cross-checking [`trace_of_circulant`].
pub fn trace_from_symbol(sym: &FourierSymbol) -> f64 {
    crate::sum::compensated(sym.values.iter().map(|v| v.re))
}

/// Effective real symbols `g^_n = g_o + g^rel_n` and
/// `f^_n = f_o - mu + f^rel_n` of a vehicular law.
#[derive(Debug, Clone)]
pub struct VehicularSymbols {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

pub fn vehicular_symbols(v: &VehicularFeedback) -> Result<VehicularSymbols> {
    let g = symbol_of_stencil(&v.g_rel).into_real()?;
    let f = symbol_of_stencil(&v.f_rel).into_real()?;
    Ok(VehicularSymbols {
        position: g.into_iter().map(|x| x + v.g_o).collect(),
        velocity: f.into_iter().map(|x| x + v.f_o - v.mu).collect(),
    })
}

/// Real parts of the two eigenvalues of `[[0, 1], [g, f]]`.
pub fn block_eigen_real_parts(g: f64, f: f64) -> (f64, f64) {
    let disc = f * f + 4.0 * g;
    if disc >= 0.0 {
        let r = disc.sqrt();
        ((f + r) / 2.0, (f - r) / 2.0)
    } else {
        (f / 2.0, f / 2.0)
    }
}

/// Eigenvalues of `[[0, 1], [g, f]]` as complex numbers.
pub fn block_eigenvalues(g: f64, f: f64) -> (Complex64, Complex64) {
    let root = Complex64::new(f * f + 4.0 * g, 0.0).sqrt();
    ((Complex64::new(f, 0.0) + root) / 2.0, (Complex64::new(f, 0.0) - root) / 2.0)
}

/// Largest real part over the nonzero wavenumbers of the closed loop.
///
/// Consensus: `max_{n != 0} Re(a^_n)`; vehicular: the largest real part of
/// the 2x2 block eigenvalues.
pub fn least_damped_eigenvalue(spec: &FeedbackSpec) -> Result<f64> {
    let report = crate::measures::stability_check(spec)?;
    if !report.stable {
        return Err(CoherenceError::Unstable {
            offending: report.offending,
        });
    }
    let worst = match spec {
        FeedbackSpec::Consensus { a } => symbol_of_stencil(a)
            .real_parts()
            .into_iter()
            .skip(1)
            .fold(f64::NEG_INFINITY, f64::max),
        FeedbackSpec::Vehicular(v) => {
            let sym = vehicular_symbols(v)?;
            sym.position
                .iter()
                .zip(&sym.velocity)
                .skip(1)
                .map(|(&g, &f)| block_eigen_real_parts(g, f).0)
                .fold(f64::NEG_INFINITY, f64::max)
        }
    };
    Ok(worst)
}

/// Stationary energy `1 / (2 |Re a^_n|)` of each consensus mode; the mean
/// mode is excluded (`None`).
#[derive(Debug, Clone, Serialize)]
pub struct ModalEnergies {
    pub shape: TorusShape,
    pub energies: Vec<Option<f64>>,
}

impl ModalEnergies {
    pub fn total(&self) -> f64 {
        crate::sum::compensated(self.energies.iter().flatten().copied())
    }
}

pub fn modal_energy_spectrum(spec: &FeedbackSpec) -> Result<ModalEnergies> {
    let FeedbackSpec::Consensus { a } = spec else {
        return Err(CoherenceError::Unsupported(
            "modal energies are defined for consensus specs".into(),
        ));
    };
    let report = crate::measures::stability_check(spec)?;
    if !report.stable {
        return Err(CoherenceError::Unstable {
            offending: report.offending,
        });
    }
    let energies = symbol_of_stencil(a)
        .real_parts()
        .into_iter()
        .enumerate()
        .map(|(pos, re)| (pos != 0).then(|| 1.0 / (2.0 * re.abs())))
        .collect();
    Ok(ModalEnergies {
        shape: a.shape(),
        energies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stencil::standard_consensus_stencil;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    /// O(M^2) transform straight from the definition.
    fn naive_dft(shape: TorusShape, f: &[Complex64]) -> Vec<Complex64> {
        let n = shape.side() as f64;
        shape
            .sites_iter()
            .map(|w| {
                shape
                    .sites_iter()
                    .map(|k| {
                        let dot: usize = w.coords().iter().zip(k.coords()).map(|(a, b)| a * b).sum();
                        f[shape.linear(&k)] * Complex64::from_polar(1.0, -2.0 * PI * dot as f64 / n)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn delta_and_ones() {
        let shape = TorusShape::new(2, 3).unwrap();
        let mut delta = vec![c(0.0); 9];
        delta[0] = c(1.0);
        for v in dft(shape, &delta).unwrap() {
            assert!((v - c(1.0)).norm() < 1e-14);
        }
        let ones = vec![c(1.0); 9];
        let t = dft(shape, &ones).unwrap();
        assert!((t[0] - c(9.0)).norm() < 1e-12);
        assert!(t[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn dft_length_mismatch() {
        let shape = TorusShape::new(1, 4).unwrap();
        assert!(dft(shape, &[c(1.0)]).is_err());
    }

    #[test]
    fn separable_dft_matches_naive() {
        let shape = TorusShape::new(3, 4).unwrap();
        let f: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let fast = dft(shape, &f).unwrap();
        let slow = naive_dft(shape, &f);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-11);
        }
    }

    #[test]
    fn standard_symbol_values() {
        // oracle: dense DFT of the scattered coefficient array
        let shape = TorusShape::new(1, 4).unwrap();
        let s = standard_consensus_stencil(shape, 1.0).unwrap();
        let dense = naive_dft(shape, &s.dense().into_iter().map(c).collect::<Vec<_>>());
        let expected: Vec<f64> = dense.iter().map(|v| v.re).collect();
        for (e, want) in expected.iter().zip([0.0, -2.0, -4.0, -2.0]) {
            assert!((e - want).abs() < 1e-12);
        }
        let sym = symbol_of_stencil(&s).into_real().unwrap();
        for (got, want) in sym.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }

        assert_eq!(standard_symbol(shape, 1.0, &shape.zero()), 0.0);
        assert!((standard_symbol(shape, 1.0, &shape.index(&[2]).unwrap()) + 4.0).abs() < 1e-12);
        let s2 = TorusShape::new(2, 4).unwrap();
        let n = s2.index(&[1, 1]).unwrap();
        assert!((standard_symbol(s2, 1.0, &n) + 4.0).abs() < 1e-12);
        let o2 = symbol_of_stencil(&standard_consensus_stencil(s2, 1.0).unwrap());
        assert!((o2.at(&n).re + 4.0).abs() < 1e-12);
    }

    #[test]
    fn delta_stencil_symbol_is_ones() {
        let shape = TorusShape::new(2, 5).unwrap();
        let sym = symbol_of_stencil(&Stencil::delta(shape, 1.0).unwrap());
        assert!(sym.values.iter().all(|v| (v - c(1.0)).norm() < 1e-15));
    }

    #[test]
    fn traces() {
        let shape = TorusShape::new(1, 4).unwrap();
        let s = standard_consensus_stencil(shape, 1.0).unwrap();
        assert_eq!(trace_of_circulant(&s), -8.0);
        assert!((trace_from_symbol(&symbol_of_stencil(&s)) + 8.0).abs() < 1e-9 * 8.0);
        assert_eq!(trace_of_circulant(&Stencil::delta(shape, 1.0).unwrap()), 4.0);
        let hollow = Stencil::from_entries(shape, &[(vec![1], 1.0), (vec![-1], -1.0)]).unwrap();
        assert_eq!(trace_of_circulant(&hollow), 0.0);
    }

    #[test]
    fn least_damped_and_modal_energies() {
        let shape = TorusShape::new(1, 4).unwrap();
        let spec = FeedbackSpec::standard_consensus(shape, 1.0).unwrap();
        assert!((least_damped_eigenvalue(&spec).unwrap() + 2.0).abs() < 1e-12);

        let modes = modal_energy_spectrum(&spec).unwrap();
        assert_eq!(modes.energies[0], None);
        let e: Vec<f64> = modes.energies.iter().flatten().copied().collect();
        for (got, want) in e.iter().zip([0.25, 0.125, 0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((modes.total() - 0.625).abs() < 1e-12);

        let unstable = FeedbackSpec::standard_consensus(shape, -1.0).unwrap();
        assert!(matches!(least_damped_eigenvalue(&unstable), Err(CoherenceError::Unstable { .. })));
        assert!(modal_energy_spectrum(&unstable).is_err());
    }

    #[test]
    fn vehicular_least_damped_uses_block_eigenvalues() {
        let shape = TorusShape::new(1, 4).unwrap();
        let spec = FeedbackSpec::standard_vehicular(shape, 1.0, 0.0, 0.0, 0.0).unwrap();
        // n = 1: g = f = -2, s^2 + 2s + 2 = 0, Re s = -1
        assert!((least_damped_eigenvalue(&spec).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_stencil_symbols_are_real_relative_vanish_at_zero() {
        let shape = TorusShape::new(2, 6).unwrap();
        let s = Stencil::from_entries(
            shape,
            &[
                (vec![0, 0], -3.0),
                (vec![1, 1], 0.75),
                (vec![-1, -1], 0.75),
                (vec![0, 2], 0.75),
                (vec![0, -2], 0.75),
            ],
        )
        .unwrap();
        let sym = symbol_of_stencil(&s);
        assert!(sym.is_real());
        assert!(sym.values[0].norm() < 1e-12);

        let skew = Stencil::from_entries(shape, &[(vec![1, 0], 1.0)]).unwrap();
        assert!(symbol_of_stencil(&skew).into_real().is_err());
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-5.0f64..5.0, 54)) {
            let shape = TorusShape::new(3, 3).unwrap();
            let f: Vec<Complex64> = values.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
            let back = idft(shape, &dft(shape, &f).unwrap()).unwrap();
            for (a, b) in back.iter().zip(&f) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }

        #[test]
        fn infinity_norm_bounds(values in proptest::collection::vec(-5.0f64..5.0, 25)) {
            let shape = TorusShape::new(2, 5).unwrap();
            let fhat = dft_real(shape, &values).unwrap();
            let l1: f64 = values.iter().map(|v| v.abs()).sum();
            let linf = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let hat_l1: f64 = fhat.iter().map(|v| v.norm()).sum();
            let hat_linf = fhat.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            prop_assert!(hat_linf <= l1 * (1.0 + 1e-12));
            prop_assert!(linf <= hat_l1 / 25.0 * (1.0 + 1e-12));
        }

        #[test]
        fn sparse_symbol_matches_dense_dft(
            w in proptest::collection::vec(-2.0f64..2.0, 5),
            d in 1usize..3,
            n in 3usize..7,
        ) {
            let shape = TorusShape::new(d, n).unwrap();
            let mut entries = vec![(vec![0; d], w[0])];
            for (i, wi) in w[1..].iter().enumerate() {
                let mut off = vec![0i64; d];
                off[i % d] = if i % 2 == 0 { 1 } else { -1 };
                if i >= 2 { off[0] += 1; }
                entries.push((off, *wi));
            }
            let s = Stencil::from_entries(shape, &entries).unwrap();
            let sparse = symbol_of_stencil(&s);
            let dense = dft_real(shape, &s.dense()).unwrap();
            for (a, b) in sparse.values.iter().zip(&dense) {
                prop_assert!((a - b).norm() < 1e-12);
            }
        }
    }
}
