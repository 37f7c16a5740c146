//! Euler-Maruyama simulation of the noisy closed loops.
//!
//! States are deviations from the desired lattice trajectory. Vehicular
//! formations are simulated in every spatial coordinate, with noise entering
//! the velocity equation only. Each replica draws from its own ChaCha stream
//! selected by `(seed, replica)`, and per-replica statistics are merged in
//! replica order, so results do not depend on the worker count.

use std::io::{self, Read, Write};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoherenceError, Result};
use crate::lattice::TorusShape;
use crate::measures::{stability_check, variance, MeasureKind};
use crate::spectral::{block_eigenvalues, dft_real, symbol_of_stencil, vehicular_symbols};
use crate::stencil::{Convolver, FeedbackSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub spec: FeedbackSpec,
    pub dt: f64,
    pub steps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default)]
    pub seed: u64,
    /// Sites receiving noise; `None` means all of them.
    #[serde(default)]
    pub noise_mask: Option<Vec<bool>>,
    #[serde(default = "one")]
    pub replicas: usize,
    #[serde(default = "one")]
    pub record_stride: usize,
    /// Post-burn-in steps between statistics samples.
    #[serde(default = "one")]
    pub sample_stride: usize,
    #[serde(default)]
    pub measures: Vec<MeasureKind>,
    /// Initial positions (per site, same in every coordinate); zero if absent.
    #[serde(default)]
    pub initial_positions: Option<Vec<f64>>,
    /// Accumulate `|x^_n|^2 / M` of the first coordinate per wavenumber.
    #[serde(default)]
    pub track_spectrum: bool,
}

fn one() -> usize {
    1
}

impl SimConfig {
    pub fn new(spec: FeedbackSpec, dt: f64, steps: usize) -> Self {
        Self {
            spec,
            dt,
            steps,
            burn_in: 0,
            seed: 0,
            noise_mask: None,
            replicas: 1,
            record_stride: steps.max(1),
            sample_stride: 1,
            measures: Vec::new(),
            initial_positions: None,
            track_spectrum: false,
        }
    }

    /// Checks the step size against the closed-loop spectrum and the
    /// bookkeeping fields against each other.
    pub fn validate(&self) -> Result<()> {
        let shape = self.spec.shape();
        let m = shape.sites();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CoherenceError::SimConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 || self.burn_in >= self.steps {
            return Err(CoherenceError::SimConfig(format!(
                "need burn_in < steps, got {} and {}",
                self.burn_in, self.steps
            )));
        }
        if self.replicas == 0 || self.record_stride == 0 || self.sample_stride == 0 {
            return Err(CoherenceError::SimConfig("replicas and strides must be positive".into()));
        }
        if let Some(mask) = &self.noise_mask {
            if mask.len() != m {
                return Err(CoherenceError::LengthMismatch {
                    expected: m,
                    actual: mask.len(),
                });
            }
        }
        if let Some(x0) = &self.initial_positions {
            if x0.len() != m {
                return Err(CoherenceError::LengthMismatch {
                    expected: m,
                    actual: x0.len(),
                });
            }
        }
        for kind in &self.measures {
            kind.check_shape(shape)?;
        }
        let report = stability_check(&self.spec)?;
        if !report.stable {
            return Err(CoherenceError::Unstable {
                offending: report.offending,
            });
        }
        let eig = closed_loop_eigenvalues(&self.spec)?;
        let rho = eig.iter().map(|l| l.re.abs()).fold(0.0, f64::max);
        if self.dt * rho >= 0.5 {
            return Err(CoherenceError::StepSize(format!(
                "dt * max|Re lambda| = {:.3} must stay below 0.5",
                self.dt * rho
            )));
        }
        if let Some(l) = eig
            .iter()
            .find(|l| l.norm() > 0.0 && (Complex64::new(1.0, 0.0) + *l * self.dt).norm() >= 1.0)
        {
            return Err(CoherenceError::StepSize(format!(
                "Euler amplification |1 + lambda dt| >= 1 at lambda = {l}"
            )));
        }
        Ok(())
    }

    fn coordinates(&self) -> usize {
        if self.spec.is_consensus() {
            1
        } else {
            self.spec.shape().dim()
        }
    }
}

/// All closed-loop eigenvalues, two per wavenumber for vehicular specs.
pub fn closed_loop_eigenvalues(spec: &FeedbackSpec) -> Result<Vec<Complex64>> {
    match spec {
        FeedbackSpec::Consensus { a } => Ok(symbol_of_stencil(a).values),
        FeedbackSpec::Vehicular(v) => {
            let sym = vehicular_symbols(v)?;
            Ok(sym
                .position
                .iter()
                .zip(&sym.velocity)
                .flat_map(|(&g, &f)| {
                    let (a, b) = block_eigenvalues(g, f);
                    [a, b]
                })
                .collect())
        }
    }
}

/// Recorded positions of the first coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub shape: TorusShape,
    pub stride: usize,
    pub times: Vec<f64>,
    /// Row-major frames, `shape.sites()` values each.
    pub frames: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let m = self.shape.sites();
        &self.frames[i * m..(i + 1) * m]
    }

    /// One `time,site,value` line per recorded value.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time,site,value")?;
        for (i, t) in self.times.iter().enumerate() {
            for (site, v) in self.frame(i).iter().enumerate() {
                writeln!(out, "{t},{site},{v}")?;
            }
        }
        Ok(())
    }

    /// Little-endian `u64` header `d, N, stride, count`, the frame times,
    /// then the row-major `f64` frames.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        for h in [self.shape.dim(), self.shape.side(), self.stride, self.len()] {
            out.write_all(&(h as u64).to_le_bytes())?;
        }
        for t in &self.times {
            out.write_all(&t.to_le_bytes())?;
        }
        for v in &self.frames {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut header = [0usize; 4];
        for h in header.iter_mut() {
            input
                .read_exact(&mut word)
                .map_err(|e| CoherenceError::SimConfig(format!("truncated header: {e}")))?;
            *h = u64::from_le_bytes(word) as usize;
        }
        let [d, n, stride, count] = header;
        let shape = TorusShape::new(d, n)?;
        let mut read_floats = |len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| {
                    input
                        .read_exact(&mut word)
                        .map_err(|e| CoherenceError::SimConfig(format!("truncated body: {e}")))?;
                    Ok(f64::from_le_bytes(word))
                })
                .collect()
        };
        let times = read_floats(count)?;
        let frames = read_floats(count * shape.sites())?;
        Ok(Self {
            shape,
            stride,
            times,
            frames,
        })
    }
}

/// Running mean and variance (Welford), mergeable across replicas.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalVariance {
    pub kind: MeasureKind,
    pub per_site: f64,
    /// Per-replica estimates, in replica order.
    pub replica_estimates: Vec<f64>,
    /// Time samples times output components times replicas.
    pub samples: u64,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub trajectory: Trajectory,
    pub estimates: Vec<EmpiricalVariance>,
    /// Mean of `|x^_n|^2 / M` per wavenumber, when tracked.
    pub spectrum: Option<Vec<f64>>,
}

impl SimResult {
    pub fn estimate(&self, kind: MeasureKind) -> Option<&EmpiricalVariance> {
        self.estimates.iter().find(|e| e.kind == kind)
    }
}

/// Index tables for evaluating the output operators on a state.
struct Outputs {
    shape: TorusShape,
    antipode: Vec<usize>,
    behind: Vec<Vec<usize>>,
}

impl Outputs {
    fn new(shape: TorusShape) -> Result<Self> {
        let d = shape.dim();
        let half = shape.index(&vec![(shape.side() / 2) as i64; d])?;
        let antipode = shape
            .sites_iter()
            .map(|k| shape.wrap_add(&k, &half).map(|p| shape.linear(&p)))
            .collect::<Result<_>>()?;
        let behind = (0..d)
            .map(|r| {
                let mut unit = vec![0i64; d];
                unit[r] = 1;
                let step = shape.index(&unit)?;
                shape
                    .sites_iter()
                    .map(|k| shape.wrap_sub(&k, &step).map(|p| shape.linear(&p)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            shape,
            antipode,
            behind,
        })
    }

    fn components(&self, kind: MeasureKind) -> usize {
        match kind {
            MeasureKind::LocalError => self.shape.dim() * self.shape.sites(),
            _ => self.shape.sites(),
        }
    }

    /// Pushes every output component of one coordinate into `acc`.
    fn push(&self, kind: MeasureKind, x: &[f64], control: &[f64], acc: &mut [Welford]) {
        let m = x.len();
        match kind {
            MeasureKind::DeviationFromAverage => {
                let mean = x.iter().sum::<f64>() / m as f64;
                for (w, v) in acc.iter_mut().zip(x) {
                    w.push(v - mean);
                }
            }
            MeasureKind::LongRangeDeviation => {
                for (k, w) in acc.iter_mut().enumerate() {
                    w.push(x[k] - x[self.antipode[k]]);
                }
            }
            MeasureKind::LocalError => {
                let scale = (2.0 * self.shape.dim() as f64).sqrt().recip();
                for (r, behind) in self.behind.iter().enumerate() {
                    for k in 0..m {
                        acc[r * m + k].push(scale * (x[k] - x[behind[k]]));
                    }
                }
            }
            MeasureKind::ControlEffort => {
                for (w, u) in acc.iter_mut().zip(control) {
                    w.push(*u);
                }
            }
        }
    }
}

enum Dynamics {
    Consensus(Convolver),
    Vehicular { g: Convolver, f: Convolver },
}

struct ReplicaOutput {
    frames: Vec<f64>,
    times: Vec<f64>,
    stats: Vec<Vec<Welford>>,
    spectrum: Option<Vec<f64>>,
    spectrum_samples: u64,
}

pub fn simulate(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let shape = cfg.spec.shape();
    let outputs = Outputs::new(shape)?;
    let dynamics = match &cfg.spec {
        FeedbackSpec::Consensus { a } => Dynamics::Consensus(a.convolver()),
        FeedbackSpec::Vehicular(v) => Dynamics::Vehicular {
            g: v.position_array()?.convolver(),
            f: v.velocity_array()?.convolver(),
        },
    };
    let runs = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_replica(cfg, &dynamics, &outputs, r))
        .collect::<Result<Vec<_>>>()?;

    let m = shape.sites();
    let coords = cfg.coordinates() as f64;
    let mut estimates = Vec::new();
    for (i, &kind) in cfg.measures.iter().enumerate() {
        let per_replica: Vec<f64> = runs
            .iter()
            .map(|run| coords * run.stats[i].iter().map(Welford::variance).sum::<f64>() / m as f64)
            .collect();
        let mut merged = vec![Welford::default(); outputs.components(kind)];
        for run in &runs {
            for (acc, w) in merged.iter_mut().zip(&run.stats[i]) {
                acc.merge(w);
            }
        }
        estimates.push(EmpiricalVariance {
            kind,
            per_site: coords * merged.iter().map(Welford::variance).sum::<f64>() / m as f64,
            replica_estimates: per_replica,
            samples: merged.iter().map(Welford::count).sum(),
        });
    }
    let spectrum = if cfg.track_spectrum {
        let total: u64 = runs.iter().map(|r| r.spectrum_samples).sum();
        let mut acc = vec![0.0; m];
        for run in &runs {
            if let Some(s) = &run.spectrum {
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
        }
        Some(acc.into_iter().map(|v| v / total.max(1) as f64).collect())
    } else {
        None
    };
    let first = runs.into_iter().next().expect("at least one replica");
    Ok(SimResult {
        trajectory: Trajectory {
            shape,
            stride: cfg.record_stride,
            times: first.times,
            frames: first.frames,
        },
        estimates,
        spectrum,
    })
}

fn run_replica(cfg: &SimConfig, dynamics: &Dynamics, outputs: &Outputs, replica: usize) -> Result<ReplicaOutput> {
    let shape = cfg.spec.shape();
    let m = shape.sites();
    let coords = cfg.coordinates();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(replica as u64);
    let sqrt_dt = cfg.dt.sqrt();
    let noisy: Vec<bool> = cfg.noise_mask.clone().unwrap_or_else(|| vec![true; m]);

    let x0 = cfg.initial_positions.clone().unwrap_or_else(|| vec![0.0; m]);
    let mut x: Vec<Vec<f64>> = vec![x0; coords];
    let mut v: Vec<Vec<f64>> = vec![vec![0.0; m]; coords];
    let mut scratch = vec![0.0; m];
    let mut control = vec![0.0; m];

    let mut stats: Vec<Vec<Welford>> = cfg
        .measures
        .iter()
        .map(|&k| vec![Welford::default(); outputs.components(k)])
        .collect();
    let wants_control = cfg.measures.contains(&MeasureKind::ControlEffort);
    let mut spectrum = cfg.track_spectrum.then(|| vec![0.0; m]);
    let mut spectrum_samples = 0u64;
    let mut frames = Vec::new();
    let mut times = Vec::new();

    for step in 1..=cfg.steps {
        for c in 0..coords {
            match dynamics {
                Dynamics::Consensus(a) => {
                    a.apply_into(&x[c], &mut scratch);
                    for k in 0..m {
                        x[c][k] += cfg.dt * scratch[k];
                        if noisy[k] {
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            x[c][k] += sqrt_dt * xi;
                        }
                    }
                }
                Dynamics::Vehicular { g, f } => {
                    g.apply_into(&x[c], &mut scratch);
                    f.accumulate(1.0, &v[c], &mut scratch);
                    for k in 0..m {
                        x[c][k] += cfg.dt * v[c][k];
                        v[c][k] += cfg.dt * scratch[k];
                        if noisy[k] {
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            v[c][k] += sqrt_dt * xi;
                        }
                    }
                }
            }
        }
        if step <= cfg.burn_in {
            continue;
        }
        let after = step - cfg.burn_in;
        if after % cfg.record_stride == 0 {
            times.push(step as f64 * cfg.dt);
            frames.extend_from_slice(&x[0]);
        }
        if after % cfg.sample_stride != 0 {
            continue;
        }
        for c in 0..coords {
            if wants_control {
                match dynamics {
                    Dynamics::Consensus(a) => a.apply_into(&x[c], &mut control),
                    Dynamics::Vehicular { g, f } => {
                        g.apply_into(&x[c], &mut control);
                        f.accumulate(1.0, &v[c], &mut control);
                    }
                }
            }
            for (i, &kind) in cfg.measures.iter().enumerate() {
                outputs.push(kind, &x[c], &control, &mut stats[i]);
            }
        }
        if let Some(spec_acc) = spectrum.as_mut() {
            let hat = dft_real(shape, &x[0])?;
            for (acc, h) in spec_acc.iter_mut().zip(&hat) {
                *acc += h.norm_sqr() / m as f64;
            }
            spectrum_samples += 1;
        }
    }
    Ok(ReplicaOutput {
        frames,
        times,
        stats,
        spectrum,
        spectrum_samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccordionParams {
    pub dt: f64,
    pub burn_in_time: f64,
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    pub sample_stride: usize,
    pub record_stride: usize,
    /// Desired spacing, used only for the displayed formation extent.
    pub spacing: f64,
}

impl Default for AccordionParams {
    fn default() -> Self {
        Self {
            dt: 0.05,
            burn_in_time: 2000.0,
            horizon: 10_000.0,
            replicas: 4,
            seed: 1,
            sample_stride: 10,
            record_stride: 200,
            spacing: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AccordionReport {
    pub side: usize,
    /// Empirical `E|x^_n|^2 / M` per wavenumber.
    pub energies: Vec<f64>,
    /// Stationary `1 / (2 g^_n f^_n)`; zero for the mean mode.
    pub analytic_energies: Vec<f64>,
    /// Energy at `n = 1` over energy at `n = N/2`.
    pub dominance_ratio: f64,
    pub analytic_ratio: f64,
    pub ratio_within_factor_3: bool,
    /// Largest relative mismatch between `n` and `N - n`.
    pub symmetry_deviation: f64,
    pub local_per_site: f64,
    pub lrd_per_site: f64,
    pub micro_macro_ratio: f64,
    /// Formation extent `x_{N-1} - x_0 + (N-1) spacing` at each recorded time.
    pub extent: Vec<(f64, f64)>,
    #[serde(skip)]
    pub trajectory: Option<Trajectory>,
}

/// Long-wavelength dominance of a one-dimensional vehicular formation under
/// noise at every site.
pub fn accordion_experiment(spec: &FeedbackSpec, params: &AccordionParams) -> Result<AccordionReport> {
    let shape = spec.shape();
    let FeedbackSpec::Vehicular(v) = spec else {
        return Err(CoherenceError::Unsupported("accordion experiment needs a vehicular spec".into()));
    };
    if shape.dim() != 1 {
        return Err(CoherenceError::Unsupported("accordion experiment is one-dimensional".into()));
    }
    MeasureKind::LongRangeDeviation.check_shape(shape)?;
    let n = shape.side();
    let burn_in = (params.burn_in_time / params.dt).round() as usize;
    let steps = burn_in + (params.horizon / params.dt).round() as usize;
    let cfg = SimConfig {
        burn_in,
        seed: params.seed,
        replicas: params.replicas,
        record_stride: params.record_stride,
        sample_stride: params.sample_stride,
        measures: vec![MeasureKind::LocalError, MeasureKind::LongRangeDeviation],
        track_spectrum: true,
        ..SimConfig::new(spec.clone(), params.dt, steps)
    };
    let result = simulate(&cfg)?;
    let energies = result.spectrum.clone().expect("spectrum tracked");
    let sym = vehicular_symbols(v)?;
    let analytic: Vec<f64> = sym
        .position
        .iter()
        .zip(&sym.velocity)
        .enumerate()
        .map(|(i, (g, f))| if i == 0 { 0.0 } else { 1.0 / (2.0 * g * f) })
        .collect();
    let half = n / 2;
    let dominance_ratio = energies[1] / energies[half];
    let analytic_ratio = analytic[1] / analytic[half];
    let symmetry_deviation = (1..n)
        .map(|i| (energies[i] - energies[n - i]).abs() / energies[i].abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let local = result.estimate(MeasureKind::LocalError).expect("requested").per_site;
    let lrd = result.estimate(MeasureKind::LongRangeDeviation).expect("requested").per_site;
    let traj = result.trajectory;
    let extent = (0..traj.len())
        .map(|i| {
            let f = traj.frame(i);
            (traj.times[i], f[n - 1] - f[0] + (n - 1) as f64 * params.spacing)
        })
        .collect();
    Ok(AccordionReport {
        side: n,
        energies,
        analytic_energies: analytic,
        dominance_ratio,
        analytic_ratio,
        ratio_within_factor_3: dominance_ratio >= analytic_ratio / 3.0 && dominance_ratio <= analytic_ratio * 3.0,
        symmetry_deviation,
        local_per_site: local,
        lrd_per_site: lrd,
        micro_macro_ratio: lrd / local,
        extent,
        trajectory: Some(traj),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResponse {
    pub omega: f64,
    pub amplitude: f64,
    /// Steady-state amplitude of the spacing error `x_k - x_{k-1}` for
    /// `k = 0..N-1` (index 0 wraps to the last vehicle).
    pub spacing_amplitudes: Vec<f64>,
    /// First `k >= 1` with amplitude at most half of that at `k = 1`,
    /// or `N / 2` if there is none.
    pub penetration_depth: usize,
    /// Amplitude at vehicle 10 below that at vehicle 2.
    pub decays_by_10: bool,
}

/// Steady-state response to `amplitude * sin(omega t)` in the velocity
/// equation of vehicle 0, from the per-wavenumber transfer function
/// `1 / ((i omega)^2 - f^_n i omega - g^_n)`.
pub fn string_stability_experiment(spec: &FeedbackSpec, omegas: &[f64], amplitude: f64) -> Result<Vec<ProbeResponse>> {
    let shape = spec.shape();
    let FeedbackSpec::Vehicular(v) = spec else {
        return Err(CoherenceError::Unsupported("string stability needs a vehicular spec".into()));
    };
    if shape.dim() != 1 {
        return Err(CoherenceError::Unsupported("string stability is one-dimensional".into()));
    }
    let report = stability_check(spec)?;
    if !report.stable {
        return Err(CoherenceError::Unstable {
            offending: report.offending,
        });
    }
    let sym = vehicular_symbols(v)?;
    let n = shape.side();
    omegas
        .iter()
        .map(|&omega| {
            if !(omega > 0.0) {
                return Err(CoherenceError::SimConfig(format!("probe frequency must be positive, got {omega}")));
            }
            let iw = Complex64::new(0.0, omega);
            let response: Vec<Complex64> = sym
                .position
                .iter()
                .zip(&sym.velocity)
                .map(|(&g, &f)| (iw * iw - iw * f - g).inv())
                .collect();
            let positions: Vec<Complex64> = (0..n)
                .map(|k| {
                    response
                        .iter()
                        .enumerate()
                        .map(|(j, h)| h * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * (j * k % n) as f64 / n as f64))
                        .sum::<Complex64>()
                        * (amplitude / n as f64)
                })
                .collect();
            let spacing: Vec<f64> = (0..n).map(|k| (positions[k] - positions[(k + n - 1) % n]).norm()).collect();
            Ok(probe_summary(omega, amplitude, spacing))
        })
        .collect()
}

fn probe_summary(omega: f64, amplitude: f64, spacing: Vec<f64>) -> ProbeResponse {
    let n = spacing.len();
    let penetration_depth = (1..n).find(|&k| spacing[k] <= spacing[1] / 2.0).unwrap_or(n / 2);
    let decays_by_10 = n > 10 && spacing[10] < spacing[2];
    ProbeResponse {
        omega,
        amplitude,
        spacing_amplitudes: spacing,
        penetration_depth,
        decays_by_10,
    }
}

/// Time-domain counterpart of [`string_stability_experiment`]: integrates
/// the forced formation without noise and demodulates the spacing errors
/// at `omega` over whole periods after `settle_time`.
pub fn string_stability_simulated(
    spec: &FeedbackSpec,
    omega: f64,
    amplitude: f64,
    dt: f64,
    settle_time: f64,
    periods: usize,
) -> Result<ProbeResponse> {
    let shape = spec.shape();
    let FeedbackSpec::Vehicular(v) = spec else {
        return Err(CoherenceError::Unsupported("string stability needs a vehicular spec".into()));
    };
    if shape.dim() != 1 || periods == 0 {
        return Err(CoherenceError::Unsupported("one-dimensional specs and at least one period".into()));
    }
    SimConfig::new(spec.clone(), dt, 1).validate()?;
    let n = shape.sites();
    let g = v.position_array()?.convolver();
    let f = v.velocity_array()?.convolver();
    let period_steps = (2.0 * std::f64::consts::PI / omega / dt).round() as usize;
    let dt = 2.0 * std::f64::consts::PI / omega / period_steps as f64;
    let settle = (settle_time / dt).ceil() as usize;
    let total = settle + periods * period_steps;

    let mut x = vec![0.0; n];
    let mut vel = vec![0.0; n];
    let mut acc = vec![0.0; n];
    let mut demod = vec![Complex64::new(0.0, 0.0); n];
    for step in 0..total {
        let t = step as f64 * dt;
        g.apply_into(&x, &mut acc);
        f.accumulate(1.0, &vel, &mut acc);
        acc[0] += amplitude * (omega * t).sin();
        for k in 0..n {
            x[k] += dt * vel[k];
            vel[k] += dt * acc[k];
        }
        if step + 1 > settle {
            let phase = Complex64::from_polar(1.0, -omega * (t + dt));
            for k in 0..n {
                demod[k] += (x[k] - x[(k + n - 1) % n]) * phase;
            }
        }
    }
    let count = (periods * period_steps) as f64;
    let spacing = demod.iter().map(|z| 2.0 * z.norm() / count).collect();
    Ok(probe_summary(omega, amplitude, spacing))
}

/// Analytic per-site values for the measures requested in `cfg`.
pub fn analytic_targets(cfg: &SimConfig) -> Result<Vec<(MeasureKind, f64)>> {
    cfg.measures
        .iter()
        .map(|&k| Ok((k, variance(&cfg.spec, k)?.per_site)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> TorusShape {
        TorusShape::new(1, n).unwrap()
    }

    #[test]
    fn welford_merge_matches_sequential() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let mut all = Welford::default();
        xs.iter().for_each(|x| all.push(*x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..313].iter().for_each(|x| a.push(*x));
        xs[313..].iter().for_each(|x| b.push(*x));
        a.merge(&b);
        assert_eq!(a.count(), all.count());
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-10);
    }

    #[test]
    fn config_validation() {
        let spec = FeedbackSpec::standard_consensus(ring(10), 1.0).unwrap();
        let mut cfg = SimConfig::new(spec.clone(), 0.01, 100);
        assert!(cfg.validate().is_ok());
        cfg.dt = 0.2;
        assert!(matches!(cfg.validate(), Err(CoherenceError::StepSize(_))));
        let mut cfg = SimConfig::new(spec.clone(), 0.01, 100);
        cfg.burn_in = 100;
        assert!(matches!(cfg.validate(), Err(CoherenceError::SimConfig(_))));
        let mut cfg = SimConfig::new(spec, 0.01, 100);
        cfg.noise_mask = Some(vec![true; 3]);
        assert!(cfg.validate().is_err());
        let unstable = FeedbackSpec::standard_consensus(ring(10), -1.0).unwrap();
        assert!(matches!(
            SimConfig::new(unstable, 0.01, 100).validate(),
            Err(CoherenceError::Unstable { .. })
        ));
    }

    #[test]
    fn record_count() {
        let spec = FeedbackSpec::standard_consensus(ring(6), 1.0).unwrap();
        let cfg = SimConfig {
            burn_in: 13,
            record_stride: 7,
            ..SimConfig::new(spec, 0.01, 100)
        };
        let r = simulate(&cfg).unwrap();
        assert_eq!(r.trajectory.len(), (100 - 13) / 7);
        assert_eq!(r.trajectory.frames.len(), r.trajectory.len() * 6);
    }

    #[test]
    fn no_noise_decays() {
        let spec = FeedbackSpec::standard_vehicular(ring(8), 1.0, 0.0, 0.0, 0.0).unwrap();
        let cfg = SimConfig {
            burn_in: 8000,
            noise_mask: Some(vec![false; 8]),
            measures: vec![MeasureKind::DeviationFromAverage],
            initial_positions: Some((0..8).map(|k| (k as f64).sin()).collect()),
            ..SimConfig::new(spec, 0.01, 9000)
        };
        let r = simulate(&cfg).unwrap();
        assert!(r.estimates[0].per_site < 1e-6);
    }

    #[test]
    fn reproducible_and_worker_independent() {
        let spec = FeedbackSpec::standard_consensus(TorusShape::new(2, 4).unwrap(), 1.0).unwrap();
        let cfg = SimConfig {
            replicas: 3,
            seed: 42,
            record_stride: 50,
            measures: vec![MeasureKind::LocalError, MeasureKind::ControlEffort],
            ..SimConfig::new(spec, 0.01, 2000)
        };
        let a = simulate(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate(&cfg).unwrap());
        assert_eq!(a.trajectory, b.trajectory);
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert_eq!(x.per_site.to_bits(), y.per_site.to_bits());
        }
        assert_ne!(a.estimates[0].replica_estimates[0], a.estimates[0].replica_estimates[1]);
    }

    #[test]
    fn mean_offset_does_not_change_outputs() {
        let spec = FeedbackSpec::standard_consensus(ring(8), 1.0).unwrap();
        let base = SimConfig {
            seed: 5,
            measures: vec![MeasureKind::DeviationFromAverage, MeasureKind::LocalError],
            ..SimConfig::new(spec, 0.01, 5000)
        };
        let shifted = SimConfig {
            initial_positions: Some(vec![3.5; 8]),
            ..base.clone()
        };
        let a = simulate(&base).unwrap();
        let b = simulate(&shifted).unwrap();
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!((x.per_site - y.per_site).abs() < 1e-9 * x.per_site);
        }
    }

    #[test]
    fn vehicular_estimate_near_analytic() {
        let spec = FeedbackSpec::standard_vehicular(TorusShape::new(2, 4).unwrap(), 1.0, -0.5, -1.0, 0.0).unwrap();
        let cfg = SimConfig {
            burn_in: 2000,
            replicas: 4,
            seed: 9,
            measures: vec![MeasureKind::DeviationFromAverage],
            ..SimConfig::new(spec, 0.01, 200_000)
        };
        let r = simulate(&cfg).unwrap();
        let target = analytic_targets(&cfg).unwrap()[0].1;
        let got = r.estimates[0].per_site;
        assert!((got - target).abs() < 0.1 * target, "{got} vs {target}");
    }

    #[test]
    fn binary_and_csv_export() {
        let spec = FeedbackSpec::standard_consensus(ring(5), 1.0).unwrap();
        let cfg = SimConfig {
            record_stride: 10,
            ..SimConfig::new(spec, 0.01, 100)
        };
        let traj = simulate(&cfg).unwrap().trajectory;
        let mut bytes = Vec::new();
        traj.write_binary(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 32 + 8 * (10 + 50));
        assert_eq!(Trajectory::read_binary(&bytes[..]).unwrap(), traj);
        assert!(Trajectory::read_binary(&bytes[..40]).is_err());
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 50);
        assert!(text.starts_with("time,site,value\n"));
    }

    #[test]
    fn zero_probe_gives_zero_response() {
        let spec = FeedbackSpec::standard_vehicular(ring(20), 1.0, 0.0, 0.0, 0.0).unwrap();
        let r = string_stability_experiment(&spec, &[1.0], 0.0).unwrap();
        assert!(r[0].spacing_amplitudes.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn probe_depths() {
        let spec = FeedbackSpec::standard_vehicular(ring(100), 1.0, 0.0, 0.0, 0.0).unwrap();
        let r = string_stability_experiment(&spec, &[2.0, 0.02], 1.0).unwrap();
        assert!(r[0].decays_by_10);
        assert!(r[1].penetration_depth > r[0].penetration_depth);
        let amps = &r[0].spacing_amplitudes;
        assert!(amps[1..=10].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lock_in_matches_transfer_function() {
        let spec = FeedbackSpec::standard_vehicular(ring(12), 1.0, 0.0, 0.0, 0.0).unwrap();
        let analytic = &string_stability_experiment(&spec, &[1.5], 1.0).unwrap()[0];
        let sim = string_stability_simulated(&spec, 1.5, 1.0, 0.001, 400.0, 20).unwrap();
        for k in 1..6 {
            let (a, s) = (analytic.spacing_amplitudes[k], sim.spacing_amplitudes[k]);
            assert!((a - s).abs() < 0.02 * a + 1e-6, "k = {k}: {a} vs {s}");
        }
    }
}
