//! Pseudo-spectral solver for 2D incompressible vorticity transport on the
//! periodic square, with integrating-factor RK4 time stepping.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::VorticityField;
use crate::io::{fmt_sig, KvMap};
use crate::spectral::{dealias_mask, fft2, wavenumber_grid, Fft2, SpectralField};

const CFL_LIMIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Forcing {
    None,
    /// `a·(sin(m(x+y)) + cos(m(x+y)))`.
    FixedLowWavenumber {
        amplitude: f64,
        wavenumber: f64,
    },
}

impl Forcing {
    pub fn sample(&self, n: usize) -> VorticityField {
        match *self {
            Forcing::None => VorticityField::zeros(n),
            Forcing::FixedLowWavenumber { amplitude, wavenumber } => VorticityField::from_fn(n, |x, y| {
                let s = wavenumber * (x + y);
                amplitude * (s.sin() + s.cos())
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialCondition {
    McWilliams { k0: f64, tau0: f64, energy: f64 },
    Grf { tau: f64, alpha: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub nu: f64,
    pub dt: f64,
    pub forcing: Forcing,
    pub save_every: usize,
    pub steps: usize,
    pub seed: u64,
    pub init: InitialCondition,
    /// Solver steps run before the first saved frame.
    pub spinup_steps: usize,
}

impl SimConfig {
    /// Unforced decay from a McWilliams-type initial field.
    pub fn decaying(n: usize) -> Self {
        Self {
            n,
            nu: 1e-4,
            dt: 2e-3,
            forcing: Forcing::None,
            save_every: 20,
            steps: 1180,
            seed: 0,
            init: InitialCondition::McWilliams { k0: 6.0, tau0: 1.0, energy: 0.5 },
            spinup_steps: 0,
        }
    }

    /// Large-scale forcing from a Gaussian random initial field. The spin-up
    /// carries the flow into its statistically steady state before recording.
    pub fn forced(n: usize) -> Self {
        Self {
            n,
            nu: 4e-2,
            dt: 1e-2,
            forcing: Forcing::FixedLowWavenumber { amplitude: 0.1, wavenumber: 1.0 },
            save_every: 20,
            steps: 1180,
            seed: 0,
            init: InitialCondition::Grf { tau: 7.0, alpha: 2.5 },
            spinup_steps: 3000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || !self.n.is_power_of_two() {
            return Err(Error::Config(format!("grid size must be a power of two >= 4, got {}", self.n)));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::Config(format!("viscosity must be finite and >= 0, got {}", self.nu)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if self.save_every == 0 {
            return Err(Error::Config("save_every must be at least 1".into()));
        }
        match self.init {
            InitialCondition::McWilliams { k0, tau0, energy } => {
                if !(k0 > 0.0 && k0 < self.n as f64 / 3.0) || tau0 <= 0.0 || energy <= 0.0 {
                    return Err(Error::Config(format!(
                        "McWilliams parameters need 0 < k0 < n/3, tau0 > 0, energy > 0 (k0={k0}, tau0={tau0}, energy={energy})"
                    )));
                }
            }
            InitialCondition::Grf { tau, alpha } => {
                if alpha <= 1.0 || tau <= 0.0 {
                    return Err(Error::Config(format!("GRF needs alpha > 1 and tau > 0 (tau={tau}, alpha={alpha})")));
                }
            }
        }
        Ok(())
    }

    pub fn initial_field(&self) -> Result<VorticityField> {
        match self.init {
            InitialCondition::McWilliams { k0, tau0, energy } => mcwilliams_init(self.n, k0, tau0, self.seed, energy),
            InitialCondition::Grf { tau, alpha } => grf_init(self.n, tau, alpha, self.seed),
        }
    }

    /// Apply any of the keys written by [`SimConfig::to_kv`], leaving others.
    pub fn apply_kv(&mut self, kv: &mut KvMap) -> Result<()> {
        self.n = kv.take_or("n", self.n)?;
        self.nu = kv.take_or("nu", self.nu)?;
        self.dt = kv.take_or("dt", self.dt)?;
        self.save_every = kv.take_or("save_every", self.save_every)?;
        self.steps = kv.take_or("steps", self.steps)?;
        self.seed = kv.take_or("seed", self.seed)?;
        self.spinup_steps = kv.take_or("spinup_steps", self.spinup_steps)?;
        let (mut amp, mut m) = match self.forcing {
            Forcing::FixedLowWavenumber { amplitude, wavenumber } => (amplitude, wavenumber),
            Forcing::None => (0.1, 1.0),
        };
        amp = kv.take_or("forcing_amplitude", amp)?;
        m = kv.take_or("forcing_wavenumber", m)?;
        let forcing_kind = kv.take_str("forcing");
        self.forcing = match forcing_kind.as_deref() {
            Some("none") => Forcing::None,
            Some("fixed_low_wavenumber") => Forcing::FixedLowWavenumber { amplitude: amp, wavenumber: m },
            Some(other) => return Err(Error::Config(format!("unknown forcing `{other}`"))),
            None => match self.forcing {
                Forcing::None => Forcing::None,
                Forcing::FixedLowWavenumber { .. } => Forcing::FixedLowWavenumber { amplitude: amp, wavenumber: m },
            },
        };
        let (mut k0, mut tau0, mut energy) = (6.0, 1.0, 0.5);
        let (mut tau, mut alpha) = (7.0, 2.5);
        match self.init {
            InitialCondition::McWilliams { k0: a, tau0: b, energy: c } => (k0, tau0, energy) = (a, b, c),
            InitialCondition::Grf { tau: a, alpha: b } => (tau, alpha) = (a, b),
        }
        k0 = kv.take_or("k0", k0)?;
        tau0 = kv.take_or("tau0", tau0)?;
        energy = kv.take_or("target_energy", energy)?;
        tau = kv.take_or("tau", tau)?;
        alpha = kv.take_or("alpha", alpha)?;
        let kind = kv.take_str("init");
        let mcw = match kind.as_deref() {
            Some("mcwilliams") => true,
            Some("grf") => false,
            Some(other) => return Err(Error::Config(format!("unknown initial condition `{other}`"))),
            None => matches!(self.init, InitialCondition::McWilliams { .. }),
        };
        self.init = if mcw { InitialCondition::McWilliams { k0, tau0, energy } } else { InitialCondition::Grf { tau, alpha } };
        Ok(())
    }

    /// `key = value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "nu = {}", self.nu);
        let _ = writeln!(s, "dt = {}", self.dt);
        match self.forcing {
            Forcing::None => {
                let _ = writeln!(s, "forcing = none");
            }
            Forcing::FixedLowWavenumber { amplitude, wavenumber } => {
                let _ = writeln!(s, "forcing = fixed_low_wavenumber");
                let _ = writeln!(s, "forcing_amplitude = {amplitude}");
                let _ = writeln!(s, "forcing_wavenumber = {wavenumber}");
            }
        }
        let _ = writeln!(s, "save_every = {}", self.save_every);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "spinup_steps = {}", self.spinup_steps);
        match self.init {
            InitialCondition::McWilliams { k0, tau0, energy } => {
                let _ = writeln!(s, "init = mcwilliams");
                let _ = writeln!(s, "k0 = {k0}");
                let _ = writeln!(s, "tau0 = {tau0}");
                let _ = writeln!(s, "target_energy = {energy}");
            }
            InitialCondition::Grf { tau, alpha } => {
                let _ = writeln!(s, "init = grf");
                let _ = writeln!(s, "tau = {tau}");
                let _ = writeln!(s, "alpha = {alpha}");
            }
        }
        s
    }
}

/// Kinetic energy `mean(|u|²)/2` computed spectrally.
pub fn kinetic_energy(omega: &VorticityField) -> Result<f64> {
    let spec = fft2(omega)?;
    Ok(kinetic_energy_hat(&spec.coeffs, omega.n()))
}

fn kinetic_energy_hat(coeffs: &[Complex64], n: usize) -> f64 {
    let grid = wavenumber_grid(n).expect("validated size");
    let n4 = ((n * n) as f64).powi(2);
    coeffs.iter().zip(&grid.k2).filter(|(_, &k2)| k2 > 0.0).map(|(c, &k2)| c.norm_sqr() / k2).sum::<f64>() / (2.0 * n4)
}

fn enstrophy_hat(coeffs: &[Complex64], n: usize) -> f64 {
    let n4 = ((n * n) as f64).powi(2);
    coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() / (2.0 * n4)
}

/// Visit each mode strictly inside the Nyquist box once per conjugate pair.
/// The callback returns the coefficient for `k`; `-k` receives its conjugate.
fn fill_hermitian(n: usize, mut coeff: impl FnMut(f64, f64) -> Complex64) -> Vec<Complex64> {
    let half = (n / 2) as i64;
    let mut out = vec![Complex64::new(0.0, 0.0); n * n];
    let idx = |k: i64| ((k + n as i64) % n as i64) as usize;
    for ky in 0..half {
        for kx in (1 - half)..half {
            if ky == 0 && kx <= 0 {
                continue;
            }
            let c = coeff(kx as f64, ky as f64);
            out[idx(ky) * n + idx(kx)] = c;
            out[idx(-ky) * n + idx(-kx)] = c.conj();
        }
    }
    out
}

/// Random-phase streamfunction with `|ψ̂|² ∝ k⁻¹(τ0² + (k/k0)⁴)⁻¹`, converted to
/// vorticity and rescaled to the requested kinetic energy.
pub fn mcwilliams_init(n: usize, k0: f64, tau0: f64, seed: u64, target_energy: f64) -> Result<VorticityField> {
    if !(k0 > 0.0 && k0 < n as f64 / 3.0) {
        return Err(Error::InvalidArgument(format!("k0 must lie in (0, n/3), got {k0} for n={n}")));
    }
    let plan = Fft2::cached(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega_hat = fill_hermitian(n, |kx, ky| {
        let k2 = kx * kx + ky * ky;
        let k = k2.sqrt();
        let psi_amp = (1.0 / (k * (tau0 * tau0 + (k / k0).powi(4)))).sqrt();
        let phase = rng.gen_range(0.0..2.0 * PI);
        Complex64::from_polar(k2 * psi_amp, phase)
    });
    let energy = kinetic_energy_hat(&omega_hat, n);
    let scale = (target_energy / energy).sqrt();
    let values = plan.inverse_real(&omega_hat).into_iter().map(|v| v * scale).collect();
    VorticityField::new(n, values)
}

/// Gaussian random field with covariance `(−Δ + τ²)^(−α)`. Coefficients are
/// scaled by `τ^(α−1)` so the rms vorticity is O(1) regardless of `τ`.
pub fn grf_init(n: usize, tau: f64, alpha: f64, seed: u64) -> Result<VorticityField> {
    if alpha <= 1.0 {
        return Err(Error::InvalidArgument(format!("GRF exponent alpha must exceed 1, got {alpha}")));
    }
    let plan = Fft2::cached(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std");
    let sigma = tau.powf(alpha - 1.0) * (n * n) as f64;
    let omega_hat = fill_hermitian(n, |kx, ky| {
        let g = Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        g * sigma * (kx * kx + ky * ky + tau * tau).powf(-alpha / 2.0)
    });
    let mut values = plan.inverse_real(&omega_hat);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter_mut().for_each(|v| *v -= mean);
    VorticityField::new(n, values)
}

/// Wavenumbers used for spectral derivatives; the unpaired Nyquist index maps
/// to zero so derivatives of real fields stay real.
fn derivative_wavenumbers(n: usize) -> (Vec<f64>, Vec<f64>) {
    let grid = wavenumber_grid(n).expect("even size");
    let nyq = -((n / 2) as f64);
    let zero_nyq = |k: &f64| if *k == nyq { 0.0 } else { *k };
    (grid.kx.iter().map(zero_nyq).collect(), grid.ky.iter().map(zero_nyq).collect())
}

/// `ψ̂ = ω̂/k²`, `û = i·ky·ψ̂`, `v̂ = −i·kx·ψ̂`.
pub fn velocity_from_vorticity(omega_hat: &SpectralField) -> Result<(SpectralField, SpectralField)> {
    let n = omega_hat.n;
    let grid = wavenumber_grid(n)?;
    let (kx, ky) = derivative_wavenumbers(n);
    let psi = |i: usize| if grid.k2[i] == 0.0 { Complex64::new(0.0, 0.0) } else { omega_hat.coeffs[i] / grid.k2[i] };
    let u = omega_hat.map_indexed(|i, _| Complex64::new(0.0, ky[i]) * psi(i));
    let v = omega_hat.map_indexed(|i, _| Complex64::new(0.0, -kx[i]) * psi(i));
    Ok((u, v))
}

/// Precomputed operators for one grid size, viscosity and forcing.
pub struct Solver {
    n: usize,
    nu: f64,
    fft: Fft2,
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    mask: Vec<bool>,
    forcing_hat: Option<Vec<Complex64>>,
    nonlinear: bool,
}

impl Solver {
    pub fn new(n: usize, nu: f64, forcing: Forcing) -> Result<Self> {
        let fft = Fft2::cached(n)?;
        let grid = wavenumber_grid(n)?;
        let (kx, ky) = derivative_wavenumbers(n);
        let forcing_hat = match forcing {
            Forcing::None => None,
            f => Some(fft.forward_real(f.sample(n).values())),
        };
        Ok(Self { n, nu, fft, kx, ky, k2: grid.k2, mask: dealias_mask(n)?, forcing_hat, nonlinear: true })
    }

    pub fn from_config(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        Self::new(config.n, config.nu, config.forcing)
    }

    /// Disable the advection term, leaving diffusion and forcing.
    pub fn without_nonlinearity(mut self) -> Self {
        self.nonlinear = false;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Advection, forcing and diffusion tendencies. Returns the tendency and
    /// the largest dealiased velocity magnitude.
    fn tendency(&self, w: &[Complex64], include_diffusion: bool) -> (Vec<Complex64>, f64) {
        let n2 = self.n * self.n;
        let zero = Complex64::new(0.0, 0.0);
        let mut out = vec![zero; n2];
        let mut umax: f64 = 0.0;
        if self.nonlinear {
            let mut u = vec![zero; n2];
            let mut v = vec![zero; n2];
            let mut wd = vec![zero; n2];
            for i in 0..n2 {
                if self.mask[i] && self.k2[i] > 0.0 {
                    let psi = w[i] / self.k2[i];
                    u[i] = Complex64::new(0.0, self.ky[i]) * psi;
                    v[i] = Complex64::new(0.0, -self.kx[i]) * psi;
                    wd[i] = w[i];
                }
            }
            self.fft.inverse_in_place(&mut u);
            self.fft.inverse_in_place(&mut v);
            self.fft.inverse_in_place(&mut wd);
            for i in 0..n2 {
                let (ur, vr, wr) = (u[i].re, v[i].re, wd[i].re);
                umax = umax.max((ur * ur + vr * vr).sqrt());
                u[i] = Complex64::new(ur * wr, 0.0);
                v[i] = Complex64::new(vr * wr, 0.0);
            }
            self.fft.forward_in_place(&mut u);
            self.fft.forward_in_place(&mut v);
            for i in 0..n2 {
                if self.mask[i] {
                    out[i] = -(Complex64::new(0.0, self.kx[i]) * u[i] + Complex64::new(0.0, self.ky[i]) * v[i]);
                }
            }
        }
        if let Some(f) = &self.forcing_hat {
            out.iter_mut().zip(f).for_each(|(o, fi)| *o += fi);
        }
        if include_diffusion {
            for i in 0..n2 {
                out[i] -= self.nu * self.k2[i] * w[i];
            }
        }
        (out, umax)
    }

    /// Full right-hand side `−∇·(uω) − νk²ω̂ + f̂` in spectral space.
    pub fn rhs(&self, omega_hat: &[Complex64]) -> Vec<Complex64> {
        self.tendency(omega_hat, true).0
    }

    /// Measured CFL number `dt·max|u|·n/(2π)` of a spectral state.
    pub fn cfl(&self, omega_hat: &[Complex64], dt: f64) -> f64 {
        let sf = SpectralField { n: self.n, coeffs: omega_hat.to_vec(), domain_length: 2.0 * PI };
        let (u, v) = velocity_from_vorticity(&sf).expect("valid size");
        let ur = self.fft.inverse_real(&u.coeffs);
        let vr = self.fft.inverse_real(&v.coeffs);
        let umax = ur.iter().zip(&vr).fold(0.0f64, |m, (a, b)| m.max((a * a + b * b).sqrt()));
        dt * umax * self.n as f64 / (2.0 * PI)
    }

    /// One integrating-factor RK4 step. `step_index` only labels CFL errors.
    pub fn step(&self, w: &mut [Complex64], dt: f64, step_index: usize) -> Result<()> {
        let n2 = self.n * self.n;
        let e_full: Vec<f64> = self.k2.iter().map(|k2| (-self.nu * k2 * dt).exp()).collect();
        let e_half: Vec<f64> = self.k2.iter().map(|k2| (-self.nu * k2 * dt / 2.0).exp()).collect();
        let (k1, umax) = self.tendency(w, false);
        let cfl = dt * umax * self.n as f64 / (2.0 * PI);
        if cfl.is_nan() || cfl >= CFL_LIMIT {
            return Err(Error::Cfl { cfl, step: step_index });
        }
        let h = dt / 2.0;
        let s2: Vec<Complex64> = (0..n2).map(|i| e_half[i] * (w[i] + h * k1[i])).collect();
        let (k2, _) = self.tendency(&s2, false);
        let s3: Vec<Complex64> = (0..n2).map(|i| e_half[i] * w[i] + h * k2[i]).collect();
        let (k3, _) = self.tendency(&s3, false);
        let s4: Vec<Complex64> = (0..n2).map(|i| e_full[i] * w[i] + dt * e_half[i] * k3[i]).collect();
        let (k4, _) = self.tendency(&s4, false);
        for i in 0..n2 {
            w[i] = e_full[i] * w[i] + dt / 6.0 * (e_full[i] * k1[i] + 2.0 * e_half[i] * (k2[i] + k3[i]) + k4[i]);
        }
        Ok(())
    }

    pub fn to_spectral(&self, omega: &VorticityField) -> Vec<Complex64> {
        self.fft.forward_real(omega.values())
    }

    pub fn to_physical(&self, omega_hat: &[Complex64], time: f64) -> VorticityField {
        VorticityField::new(self.n, self.fft.inverse_real(omega_hat)).expect("n*n values").with_time(time)
    }

    /// Advance a physical field by `steps` steps.
    pub fn advance(&self, omega: &VorticityField, dt: f64, steps: usize) -> Result<VorticityField> {
        let mut w = self.to_spectral(omega);
        for s in 0..steps {
            self.step(&mut w, dt, s)?;
        }
        Ok(self.to_physical(&w, omega.time + steps as f64 * dt))
    }
}

/// Right-hand side for a single state, building operators on the fly.
pub fn rhs(omega_hat: &SpectralField, nu: f64, forcing: Forcing) -> Result<SpectralField> {
    let solver = Solver::new(omega_hat.n, nu, forcing)?;
    Ok(SpectralField { coeffs: solver.rhs(&omega_hat.coeffs), ..omega_hat.clone() })
}

pub fn step(omega_hat: &SpectralField, dt: f64, config: &SimConfig) -> Result<SpectralField> {
    let solver = Solver::from_config(config)?;
    let mut w = omega_hat.coeffs.clone();
    solver.step(&mut w, dt, 0)?;
    Ok(SpectralField { coeffs: w, ..omega_hat.clone() })
}

/// Saved frames plus per-step energy and enstrophy.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<VorticityField>,
    pub dt_between_saves: f64,
    pub config: SimConfig,
    /// Kinetic energy after every solver step, starting with the initial state.
    pub energy: Vec<f64>,
    pub enstrophy: Vec<f64>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.time).collect()
    }

    /// Energy/enstrophy series as CSV with header `step,time,energy,enstrophy`.
    pub fn series_csv(&self) -> String {
        let mut s = String::from("step,time,energy,enstrophy\n");
        for (i, (e, z)) in self.energy.iter().zip(&self.enstrophy).enumerate() {
            let t = (self.config.spinup_steps + i) as f64 * self.config.dt;
            let _ = writeln!(s, "{i},{},{},{}", fmt_sig(t), fmt_sig(*e), fmt_sig(*z));
        }
        s
    }
}

pub fn simulate(config: &SimConfig) -> Result<Trajectory> {
    let omega0 = config.initial_field()?;
    simulate_from(config, &omega0)
}

/// Run from an explicit initial field, ignoring `config.init`.
pub fn simulate_from(config: &SimConfig, omega0: &VorticityField) -> Result<Trajectory> {
    let solver = Solver::from_config(config)?;
    if omega0.n() != config.n {
        return Err(Error::Shape(format!("initial field is {}x{0}, config expects {}", omega0.n(), config.n)));
    }
    let n = config.n;
    let mut w = solver.to_spectral(omega0);
    for s in 0..config.spinup_steps {
        solver.step(&mut w, config.dt, s)?;
    }
    let t0 = config.spinup_steps as f64 * config.dt;
    let mut frames = vec![solver.to_physical(&w, t0)];
    let mut energy = vec![kinetic_energy_hat(&w, n)];
    let mut enstrophy = vec![enstrophy_hat(&w, n)];
    for s in 1..=config.steps {
        solver.step(&mut w, config.dt, config.spinup_steps + s - 1)?;
        if w.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument(format!("simulation diverged at step {s}")));
        }
        energy.push(kinetic_energy_hat(&w, n));
        enstrophy.push(enstrophy_hat(&w, n));
        if s % config.save_every == 0 {
            frames.push(solver.to_physical(&w, t0 + s as f64 * config.dt));
        }
    }
    Ok(Trajectory { frames, dt_between_saves: config.dt * config.save_every as f64, config: config.clone(), energy, enstrophy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{enstrophy, ifft2};

    fn random_smooth(n: usize, seed: u64) -> VorticityField {
        grf_init(n, 3.0, 2.5, seed).unwrap()
    }

    fn max_diff(a: &VorticityField, b: &VorticityField) -> f64 {
        a.values().iter().zip(b.values()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn velocity_of_single_mode() {
        let n = 16;
        let w = VorticityField::from_fn(n, |x, _| x.cos());
        let (u, v) = velocity_from_vorticity(&fft2(&w).unwrap()).unwrap();
        let u = ifft2(&u).unwrap();
        let v = ifft2(&v).unwrap();
        assert!(u.values().iter().all(|x| x.abs() < 1e-13));
        let expected = VorticityField::from_fn(n, |x, _| x.sin());
        assert!(max_diff(&v, &expected) < 1e-13);
    }

    #[test]
    fn velocity_is_divergence_free() {
        let n = 32;
        let w = fft2(&random_smooth(n, 3)).unwrap();
        let (u, v) = velocity_from_vorticity(&w).unwrap();
        let (kx, ky) = derivative_wavenumbers(n);
        let scale = w.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()));
        for i in 0..n * n {
            let div = kx[i] * u.coeffs[i] + ky[i] * v.coeffs[i];
            assert!(div.norm() / scale < 1e-12);
        }
        let (u0, v0) = velocity_from_vorticity(&SpectralField::zeros(n)).unwrap();
        assert!(u0.coeffs.iter().chain(&v0.coeffs).all(|c| c.norm() == 0.0));
    }

    #[test]
    fn taylor_green_rhs_is_pure_diffusion() {
        let n = 32;
        let nu = 0.01;
        let w = fft2(&VorticityField::from_fn(n, |x, y| 2.0 * x.cos() * y.cos())).unwrap();
        let r = rhs(&w, nu, Forcing::None).unwrap();
        for (a, b) in r.coeffs.iter().zip(&w.coeffs) {
            assert!((a - (-2.0 * nu) * b).norm() < 1e-9);
        }
        let z = rhs(&SpectralField::zeros(n), nu, Forcing::None).unwrap();
        assert!(z.coeffs.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn nonlinearity_is_enstrophy_neutral() {
        let n = 32;
        let solver = Solver::new(n, 0.0, Forcing::None).unwrap();
        for seed in 0..3 {
            let w = random_smooth(n, seed);
            let r = solver.to_physical(&solver.rhs(&solver.to_spectral(&w)), 0.0);
            let ip = w.dot(&r) / (n * n) as f64;
            assert!(ip.abs() < 1e-8, "seed {seed}: {ip}");
        }
    }

    #[test]
    fn integrating_factor_is_exact_for_diffusion() {
        let n = 16;
        let nu = 0.05;
        let dt = 0.1;
        let solver = Solver::new(n, nu, Forcing::None).unwrap().without_nonlinearity();
        let w0 = VorticityField::from_fn(n, |x, y| (3.0 * x + 2.0 * y).sin());
        let w1 = solver.advance(&w0, dt, 1).unwrap();
        let expected = w0.scale((-nu * 13.0 * dt).exp());
        assert!(max_diff(&w1, &expected) < 1e-14);
    }

    #[test]
    fn taylor_green_closed_form() {
        let n = 64;
        let nu = 1e-2;
        let dt = 1e-3;
        let solver = Solver::new(n, nu, Forcing::None).unwrap();
        let w0 = VorticityField::from_fn(n, |x, y| 2.0 * x.cos() * y.cos());
        let w1 = solver.advance(&w0, dt, 1000).unwrap();
        let exact = w0.scale((-2.0 * nu * 1.0f64).exp());
        assert!(max_diff(&w1, &exact) < 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        let n = 32;
        let solver = Solver::new(n, 1e-3, Forcing::None).unwrap();
        let w0 = random_smooth(n, 11);
        let t = 1.0;
        let run = |steps: usize| solver.advance(&w0, t / steps as f64, steps).unwrap();
        let reference = run(1024);
        let e1 = max_diff(&run(32), &reference);
        let e2 = max_diff(&run(64), &reference);
        let ratio = e1 / e2;
        assert!((13.0..=18.0).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
    }

    #[test]
    fn cfl_violation_reports_number() {
        let n = 32;
        let solver = Solver::new(n, 0.0, Forcing::None).unwrap();
        let w = solver.to_spectral(&random_smooth(n, 1).scale(100.0));
        let mut state = w.clone();
        match solver.step(&mut state, 0.5, 7) {
            Err(Error::Cfl { cfl, step }) => {
                assert_eq!(step, 7);
                assert!(cfl >= 0.5);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
        assert!(solver.cfl(&w, 0.5) >= 0.5);
    }

    #[test]
    fn inviscid_invariants() {
        let n = 32;
        let mut cfg = SimConfig::decaying(n);
        cfg.nu = 0.0;
        cfg.dt = 2e-3;
        cfg.steps = 200;
        cfg.save_every = 50;
        cfg.init = InitialCondition::McWilliams { k0: 4.0, tau0: 1.0, energy: 0.5 };
        let traj = simulate(&cfg).unwrap();
        let (e0, z0) = (traj.energy[0], traj.enstrophy[0]);
        let (e1, z1) = (*traj.energy.last().unwrap(), *traj.enstrophy.last().unwrap());
        assert!(((e1 - e0) / e0).abs() < 1e-5, "energy drift {}", (e1 - e0) / e0);
        assert!(((z1 - z0) / z0).abs() < 1e-5, "enstrophy drift {}", (z1 - z0) / z0);
        for f in &traj.frames {
            assert!(f.mean().abs() < 1e-10);
        }
    }

    #[test]
    fn mcwilliams_properties() {
        let a = mcwilliams_init(32, 4.0, 1.0, 9, 0.5).unwrap();
        let b = mcwilliams_init(32, 4.0, 1.0, 9, 0.5).unwrap();
        assert_eq!(a, b);
        assert!((kinetic_energy(&a).unwrap() - 0.5).abs() < 1e-10);
        assert!(a.mean().abs() < 1e-12);
        assert!(mcwilliams_init(32, 11.0, 1.0, 9, 0.5).is_err());
        assert!(fft2(&a).unwrap().conjugate_symmetry_error() < 1e-10);
    }

    #[test]
    fn grf_properties() {
        let a = grf_init(32, 7.0, 2.5, 4).unwrap();
        assert_eq!(a, grf_init(32, 7.0, 2.5, 4).unwrap());
        assert_ne!(a, grf_init(32, 7.0, 2.5, 5).unwrap());
        assert!(a.mean().abs() < 1e-14);
        assert!(grf_init(32, 7.0, 1.0, 4).is_err());
        let rms = (2.0 * enstrophy(&a)).sqrt();
        assert!(rms > 0.1 && rms < 10.0, "rms {rms}");
    }

    #[test]
    fn config_kv_round_trip() {
        for cfg in [SimConfig::decaying(32), SimConfig::forced(64)] {
            let mut kv = KvMap::parse(&cfg.to_kv(), "echo").unwrap();
            let mut back = SimConfig::decaying(8);
            back.apply_kv(&mut kv).unwrap();
            kv.finish().unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn zero_steps_keeps_initial_frame() {
        let mut cfg = SimConfig::decaying(16);
        cfg.init = InitialCondition::McWilliams { k0: 3.0, tau0: 1.0, energy: 0.5 };
        cfg.steps = 0;
        let traj = simulate(&cfg).unwrap();
        assert_eq!(traj.frames.len(), 1);
        assert_eq!(traj.energy.len(), 1);
    }

    #[test]
    fn frames_are_uniformly_spaced() {
        let mut cfg = SimConfig::decaying(16);
        cfg.init = InitialCondition::McWilliams { k0: 3.0, tau0: 1.0, energy: 0.5 };
        cfg.steps = 40;
        cfg.save_every = 10;
        let traj = simulate(&cfg).unwrap();
        assert_eq!(traj.frames.len(), 5);
        let t = traj.times();
        for w in t.windows(2) {
            assert!((w[1] - w[0] - traj.dt_between_saves).abs() < 1e-12);
        }
        assert_eq!(traj, simulate(&cfg).unwrap());
    }
}
