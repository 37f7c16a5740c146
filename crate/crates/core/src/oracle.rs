//! Dense full-state reference computations.
//!
//! These routes ignore the Fourier structure entirely: they build the
//! closed-loop matrices explicitly, remove the mean mode by an orthogonal
//! change of basis, and solve the Lyapunov equation with a real Schur
//! (Bartels-Stewart) solver. They are cubic in the number of states and
//! refuse to run above a state cap.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::error::{CoherenceError, Result};
use crate::lattice::{MultiIndex, TorusShape};
use crate::measures::{output_symbol_squared, MeasureKind};
use crate::spectral::{symbol_of_stencil, vehicular_symbols};
use crate::stencil::{FeedbackSpec, Stencil};
use crate::sum::CompensatedSum;

pub const DEFAULT_STATE_CAP: usize = 4096;

/// Tolerance for the mean modes being unobservable from the output.
const MEAN_MODE_TOL: f64 = 1e-9;

/// `dx = A x dt + B dw`, `y = C x`, for one spatial coordinate.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Columns spanning the mean (uniform) modes of the state.
    pub mean_modes: DMatrix<f64>,
}

impl StateSpace {
    pub fn states(&self) -> usize {
        self.a.nrows()
    }
}

/// Dense circulant `T_s` with `(T_s x)_k = sum_o s_o x_{k-o}`.
pub fn circulant(s: &Stencil) -> DMatrix<f64> {
    let m = s.shape().sites();
    let conv = s.convolver();
    let mut out = DMatrix::zeros(m, m);
    let mut e = vec![0.0; m];
    let mut col = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        conv.apply_into(&e, &mut col);
        out.set_column(j, &DVector::from_column_slice(&col));
        e[j] = 0.0;
    }
    out
}

/// Output matrix of a variance measure in the site basis.
pub fn output_matrix(kind: MeasureKind, shape: TorusShape) -> Result<DMatrix<f64>> {
    kind.check_shape(shape)?;
    let m = shape.sites();
    let d = shape.dim();
    match kind {
        MeasureKind::DeviationFromAverage => {
            Ok(DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64))
        }
        MeasureKind::LongRangeDeviation => {
            let half = vec![(shape.side() / 2) as i64; d];
            let shift = shape.index(&half)?;
            let mut c = DMatrix::identity(m, m);
            for k in shape.sites_iter() {
                let partner = shape.wrap_add(&k, &shift)?;
                c[(shape.linear(&k), shape.linear(&partner))] -= 1.0;
            }
            Ok(c)
        }
        MeasureKind::LocalError => {
            let scale = (2.0 * d as f64).sqrt().recip();
            let mut c = DMatrix::zeros(d * m, m);
            for r in 0..d {
                let mut unit = vec![0i64; d];
                unit[r] = 1;
                let step = shape.index(&unit)?;
                for k in shape.sites_iter() {
                    let row = r * m + shape.linear(&k);
                    let behind = shape.wrap_sub(&k, &step)?;
                    c[(row, shape.linear(&k))] += scale;
                    c[(row, shape.linear(&behind))] -= scale;
                }
            }
            Ok(c)
        }
        MeasureKind::ControlEffort => Err(CoherenceError::Unsupported(
            "control effort output depends on the feedback".into(),
        )),
    }
}

/// Explicit state-space model of one coordinate, checked against `cap`.
pub fn realize(spec: &FeedbackSpec, kind: MeasureKind, cap: usize) -> Result<StateSpace> {
    let shape = spec.shape();
    let m = shape.sites();
    let states = if spec.is_consensus() { m } else { 2 * m };
    if states > cap {
        return Err(CoherenceError::OracleCap { states, cap });
    }
    let ones = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    match spec {
        FeedbackSpec::Consensus { a } => {
            let a_mat = circulant(a);
            let c = match kind {
                MeasureKind::ControlEffort => a_mat.clone(),
                _ => output_matrix(kind, shape)?,
            };
            Ok(StateSpace {
                a: a_mat,
                b: DMatrix::identity(m, m),
                c,
                mean_modes: DMatrix::from_columns(&[ones]),
            })
        }
        FeedbackSpec::Vehicular(v) => {
            let g = circulant(&v.position_array()?);
            let f = circulant(&v.velocity_array()?);
            let mut a_mat = DMatrix::zeros(2 * m, 2 * m);
            a_mat.view_mut((0, m), (m, m)).fill_with_identity();
            a_mat.view_mut((m, 0), (m, m)).copy_from(&g);
            a_mat.view_mut((m, m), (m, m)).copy_from(&f);
            let mut b = DMatrix::zeros(2 * m, m);
            b.view_mut((m, 0), (m, m)).fill_with_identity();
            let c = match kind {
                MeasureKind::ControlEffort => {
                    let mut h = DMatrix::zeros(m, 2 * m);
                    h.view_mut((0, 0), (m, m)).copy_from(&g);
                    h.view_mut((0, m), (m, m)).copy_from(&f);
                    h
                }
                _ => {
                    let out = output_matrix(kind, shape)?;
                    let mut h = DMatrix::zeros(out.nrows(), 2 * m);
                    h.view_mut((0, 0), (out.nrows(), m)).copy_from(&out);
                    h
                }
            };
            let mut u = DMatrix::zeros(2 * m, 2);
            u.view_mut((0, 0), (m, 1)).copy_from(&ones);
            u.view_mut((m, 1), (m, 1)).copy_from(&ones);
            Ok(StateSpace {
                a: a_mat,
                b,
                c,
                mean_modes: u,
            })
        }
    }
}

/// Orthonormal basis of the complement of the uniform vector, taken from a
/// Householder reflection that maps `e_1` to `1 / sqrt(M)`.
pub fn mean_complement(m: usize) -> DMatrix<f64> {
    let mut v = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    v[0] -= 1.0;
    let vv = v.dot(&v);
    let h = DMatrix::identity(m, m) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, m - 1).into_owned()
}

/// Mean-deflated realization `(Q^T A Q, Q^T B, C Q)`.
pub fn deflate(sys: &StateSpace) -> Result<StateSpace> {
    let leak = (&sys.c * &sys.mean_modes).abs().max();
    if leak > MEAN_MODE_TOL {
        return Err(CoherenceError::ObservableMeanMode(leak));
    }
    let q = match sys.mean_modes.ncols() {
        1 => mean_complement(sys.states()),
        _ => {
            let m = sys.states() / 2;
            let qm = mean_complement(m);
            let mut q = DMatrix::zeros(2 * m, 2 * (m - 1));
            q.view_mut((0, 0), (m, m - 1)).copy_from(&qm);
            q.view_mut((m, m - 1), (m, m - 1)).copy_from(&qm);
            q
        }
    };
    Ok(StateSpace {
        a: q.transpose() * &sys.a * &q,
        b: q.transpose() * &sys.b,
        c: &sys.c * &q,
        mean_modes: DMatrix::zeros(q.ncols(), 0),
    })
}

/// Solves `A P + P A^T + W = 0` for Hurwitz `A`.
pub fn lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    // circulant spectra are highly degenerate and stall the QR sweep at a
    // deflation tolerance of machine epsilon; the residual check below
    // guards the result
    let schur = [1e-14, 1e-13, 1e-12]
        .into_iter()
        .find_map(|eps| Schur::try_new(a.clone(), eps, 200 * n.max(50)))
        .ok_or_else(|| CoherenceError::Solver("real Schur decomposition did not converge".into()))?;
    let (u, t) = schur.unpack();
    let blocks = diagonal_blocks(&t)?;
    let rhs = u.transpose() * w * &u;
    let mut x = DMatrix::<f64>::zeros(n, n);

    for bi in (0..blocks.len()).rev() {
        let (i0, p) = blocks[bi];
        for bj in (0..blocks.len()).rev() {
            let (j0, q) = blocks[bj];
            let mut r = -rhs.view((i0, j0), (p, q)).into_owned();
            if i0 + p < n {
                let rest = n - i0 - p;
                r -= t.view((i0, i0 + p), (p, rest)) * x.view((i0 + p, j0), (rest, q));
            }
            if j0 + q < n {
                let rest = n - j0 - q;
                r -= x.view((i0, j0 + q), (p, rest)) * t.view((j0, j0 + q), (q, rest)).transpose();
            }
            let tii = t.view((i0, i0), (p, p)).into_owned();
            let tjj = t.view((j0, j0), (q, q)).into_owned();
            let block = small_sylvester(&tii, &tjj, &r)?;
            x.view_mut((i0, j0), (p, q)).copy_from(&block);
        }
    }

    let p = &u * x * u.transpose();
    let p = (&p + p.transpose()) * 0.5;
    let residual = (a * &p + &p * a.transpose() + w).norm();
    let scale = w.norm().max(f64::MIN_POSITIVE);
    if !residual.is_finite() || residual > 1e-8 * scale * (1.0 + a.norm() * p.norm() / scale) {
        return Err(CoherenceError::Solver(format!(
            "Lyapunov residual {residual:.3e} too large"
        )));
    }
    Ok(p)
}

/// Start and size of each 1x1 or 2x2 diagonal block of a quasi-triangular matrix.
fn diagonal_blocks(t: &DMatrix<f64>) -> Result<Vec<(usize, usize)>> {
    let n = t.nrows();
    // the QR sweep writes exact zeros where it deflates
    let coupled = |i: usize| t[(i + 1, i)] != 0.0;
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && coupled(i) {
            if i + 2 < n && coupled(i + 1) {
                return Err(CoherenceError::Solver("Schur form has a block larger than 2x2".into()));
            }
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    Ok(blocks)
}

/// Solves `A X + X B^T = R` for blocks of size at most 2.
fn small_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    let q = b.nrows();
    // column-major vec: vec(A X) = (I kron A) vec X, vec(X B^T) = (B kron I) vec X
    let k = DMatrix::<f64>::identity(q, q).kronecker(a) + b.kronecker(&DMatrix::<f64>::identity(p, p));
    let rhs = DVector::from_column_slice(r.as_slice());
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| CoherenceError::Solver("singular Sylvester block".into()))?;
    Ok(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

/// Full-state H2 norm squared, summed over all sites and coordinates.
pub fn full_state_h2(spec: &FeedbackSpec, kind: MeasureKind) -> Result<f64> {
    full_state_h2_capped(spec, kind, DEFAULT_STATE_CAP)
}

pub fn full_state_h2_capped(spec: &FeedbackSpec, kind: MeasureKind, cap: usize) -> Result<f64> {
    let sys = deflate(&realize(spec, kind, cap)?)?;
    let w = &sys.b * sys.b.transpose();
    let p = lyapunov(&sys.a, &w)?;
    let single = (&sys.c * p * sys.c.transpose()).trace();
    Ok(coordinates(spec) * single)
}

fn coordinates(spec: &FeedbackSpec) -> f64 {
    if spec.is_consensus() {
        1.0
    } else {
        spec.shape().dim() as f64
    }
}

/// Same quantity as [`full_state_h2`] from Simpson quadrature of the
/// observability integral `int_0^T |C e^{At} B|_F^2 dt`.
pub fn gramian_quadrature_h2(spec: &FeedbackSpec, kind: MeasureKind, cap: usize) -> Result<f64> {
    let sys = deflate(&realize(spec, kind, cap)?)?;
    let eig: Vec<Complex64> = Schur::new(sys.a.clone()).complex_eigenvalues().iter().copied().collect();
    let slowest = eig.iter().map(|l| -l.re).fold(f64::INFINITY, f64::min);
    let fastest = eig.iter().map(|l| l.norm()).fold(0.0, f64::max);
    if !(slowest > 0.0) {
        return Err(CoherenceError::Unstable { offending: Vec::new() });
    }
    let horizon = 20.0 / slowest;
    let mut steps = (horizon * fastest / 0.02).ceil().max(200.0) as usize;
    steps += steps % 2;
    if steps > 2_000_000 {
        return Err(CoherenceError::Solver(format!("quadrature would need {steps} steps")));
    }
    let h = horizon / steps as f64;
    let step = (&sys.a * h).exp();
    let mut phi = sys.b.clone();
    let mut acc = CompensatedSum::new();
    for k in 0..=steps {
        let val = (&sys.c * &phi).norm_squared();
        let weight = if k == 0 || k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += weight * val;
        phi = &step * phi;
    }
    Ok(coordinates(spec) * acc.value() * h / 3.0)
}

/// Contribution of the single wavenumber `n != 0`: the scalar equation
/// `2 Re(a^_n) p + 1 = 0` for consensus, a 2x2 equation per coordinate
/// (times `d`) for vehicular formations.
pub fn per_wavenumber_lyapunov(spec: &FeedbackSpec, kind: MeasureKind, n: &MultiIndex) -> Result<f64> {
    if n.is_zero() {
        return Err(CoherenceError::Unsupported("the mean mode has no finite contribution".into()));
    }
    let pos = spec.shape().linear(n);
    Ok(wavenumber_contributions(spec, kind)?[pos])
}

/// Sum of [`per_wavenumber_lyapunov`] over all `n != 0`.
pub fn per_wavenumber_total(spec: &FeedbackSpec, kind: MeasureKind) -> Result<f64> {
    let parts = wavenumber_contributions(spec, kind)?;
    Ok(parts.iter().copied().sum::<CompensatedSum>().value())
}

fn wavenumber_contributions(spec: &FeedbackSpec, kind: MeasureKind) -> Result<Vec<f64>> {
    let shape = spec.shape();
    let mut out = vec![0.0; shape.sites()];
    match spec {
        FeedbackSpec::Consensus { a } => {
            let sym = symbol_of_stencil(a);
            let weights = match kind {
                MeasureKind::ControlEffort => sym.values.iter().map(|v| v.norm_sqr()).collect(),
                _ => output_symbol_squared(kind, shape, 1.0)?,
            };
            for pos in 1..shape.sites() {
                let re = sym.values[pos].re;
                if re >= 0.0 {
                    return Err(CoherenceError::Unstable {
                        offending: vec![shape.from_linear(pos)],
                    });
                }
                out[pos] = weights[pos] * (-1.0 / (2.0 * re));
            }
        }
        FeedbackSpec::Vehicular(v) => {
            let sym = vehicular_symbols(v)?;
            let c2 = match kind {
                MeasureKind::ControlEffort => None,
                _ => Some(output_symbol_squared(kind, shape, 1.0)?),
            };
            let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
            let d = shape.dim() as f64;
            for pos in 1..shape.sites() {
                let (g, f) = (sym.position[pos], sym.velocity[pos]);
                if g >= 0.0 || f >= 0.0 {
                    return Err(CoherenceError::Unstable {
                        offending: vec![shape.from_linear(pos)],
                    });
                }
                let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, g, f]);
                let p = lyapunov(&a, &b)?;
                out[pos] = d * match &c2 {
                    Some(c2) => c2[pos] * p[(0, 0)],
                    None => g * g * p[(0, 0)] + 2.0 * g * f * p[(0, 1)] + f * f * p[(1, 1)],
                };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::variance;
    use crate::stencil::standard_consensus_stencil;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn lyapunov_scalar_and_companion() {
        let a = DMatrix::from_element(1, 1, -3.0);
        let w = DMatrix::from_element(1, 1, 1.0);
        assert!(close(lyapunov(&a, &w).unwrap()[(0, 0)], 1.0 / 6.0, 1e-14));

        // x'' + x' + x = w: position variance 1/2, velocity variance 1/2
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let p = lyapunov(&a, &w).unwrap();
        assert!(close(p[(0, 0)], 0.5, 1e-12));
        assert!(close(p[(1, 1)], 0.5, 1e-12));
        assert!(p[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn lyapunov_random_residual() {
        let n = 9;
        let mut a = DMatrix::from_fn(n, n, |i, j| (((i * 7 + j * 3) % 11) as f64 - 5.0) / 7.0);
        for i in 0..n {
            a[(i, i)] -= 4.0;
        }
        let w = DMatrix::identity(n, n);
        let p = lyapunov(&a, &w).unwrap();
        let res = (&a * &p + &p * a.transpose() + &w).norm();
        assert!(res < 1e-10);
    }

    #[test]
    fn complement_is_orthonormal() {
        let q = mean_complement(7);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::<f64>::identity(6, 6)).abs().max() < 1e-14);
        let ones = DVector::from_element(7, 1.0);
        assert!((q.transpose() * ones).abs().max() < 1e-14);
    }

    #[test]
    fn circulant_matches_convolution() {
        let shape = TorusShape::new(2, 4).unwrap();
        let s = Stencil::from_entries(shape, &[(vec![0, 1], 2.0), (vec![-1, 0], -0.5), (vec![0, 0], 1.0)]).unwrap();
        let t = circulant(&s);
        let x: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let y = crate::stencil::apply_convolution(&s, &x).unwrap();
        let ty = &t * DVector::from_column_slice(&x);
        for (a, b) in y.iter().zip(ty.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn output_matrix_gram_has_symbol_spectrum() {
        let shape = TorusShape::new(2, 4).unwrap();
        for kind in MeasureKind::OUTPUTS {
            let c = output_matrix(kind, shape).unwrap();
            let trace = (c.transpose() * &c).trace();
            let sym: f64 = output_symbol_squared(kind, shape, 1.0).unwrap().iter().sum();
            assert!(close(trace, sym, 1e-12), "{kind:?}");
        }
    }

    #[test]
    fn cap_is_enforced() {
        let spec = FeedbackSpec::standard_vehicular(TorusShape::new(1, 40).unwrap(), 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            realize(&spec, MeasureKind::DeviationFromAverage, 64),
            Err(CoherenceError::OracleCap { states: 80, cap: 64 })
        ));
    }

    #[test]
    fn observable_mean_mode_is_rejected() {
        let shape = TorusShape::new(1, 5).unwrap();
        let spec = FeedbackSpec::consensus(standard_consensus_stencil(shape, 1.0).unwrap());
        let mut sys = realize(&spec, MeasureKind::DeviationFromAverage, 64).unwrap();
        sys.c = DMatrix::identity(5, 5);
        assert!(matches!(deflate(&sys), Err(CoherenceError::ObservableMeanMode(_))));
    }

    #[test]
    fn oracle_matches_closed_form_small() {
        let shape = TorusShape::new(1, 4).unwrap();
        let spec = FeedbackSpec::standard_consensus(shape, 1.0).unwrap();
        let dav = full_state_h2(&spec, MeasureKind::DeviationFromAverage).unwrap();
        assert!(close(dav, 0.625, 1e-10));
        let veh = FeedbackSpec::standard_vehicular(shape, 1.0, 0.0, 0.0, 0.0).unwrap();
        let dav = full_state_h2(&veh, MeasureKind::DeviationFromAverage).unwrap();
        assert!(close(dav, 0.28125, 1e-10));
        let effort = full_state_h2(&veh, MeasureKind::ControlEffort).unwrap();
        assert!(close(effort / 4.0, 1.375, 1e-10));
        let closed = variance(&veh, MeasureKind::ControlEffort).unwrap();
        assert!(close(closed.total, effort, 1e-10));
    }

    #[test]
    fn quadrature_agrees_with_schur() {
        let shape = TorusShape::new(1, 6).unwrap();
        let spec = FeedbackSpec::standard_vehicular(shape, 1.0, -0.2, 0.0, 0.1).unwrap();
        let a = full_state_h2(&spec, MeasureKind::LocalError).unwrap();
        let b = gramian_quadrature_h2(&spec, MeasureKind::LocalError, 64).unwrap();
        assert!(close(a, b, 1e-6), "{a} {b}");
    }

    #[test]
    fn per_wavenumber_route() {
        let shape = TorusShape::new(1, 4).unwrap();
        let veh = FeedbackSpec::standard_vehicular(shape, 1.0, 0.0, 0.0, 0.0).unwrap();
        let v = per_wavenumber_total(&veh, MeasureKind::DeviationFromAverage).unwrap();
        assert!(close(v, 0.28125, 1e-12));
        let two = shape.index(&[2]).unwrap();
        let v = per_wavenumber_lyapunov(&veh, MeasureKind::DeviationFromAverage, &two).unwrap();
        assert!(close(v, 1.0 / 32.0, 1e-12));
        let cons = FeedbackSpec::standard_consensus(shape, 1.0).unwrap();
        let v = per_wavenumber_total(&cons, MeasureKind::LongRangeDeviation).unwrap();
        assert!(close(v, 2.0, 1e-12));
        let one = shape.index(&[1]).unwrap();
        let v = per_wavenumber_lyapunov(&cons, MeasureKind::DeviationFromAverage, &one).unwrap();
        assert!(close(v, 0.25, 1e-12));
        assert!(per_wavenumber_lyapunov(&cons, MeasureKind::DeviationFromAverage, &shape.zero()).is_err());
    }
}
