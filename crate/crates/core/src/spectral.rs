//! Fourier-space tools on the periodic square: 2D transforms, wavenumber
//! layout, 2/3 dealiasing, enstrophy spectra and high-pass projection.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::VorticityField;
use crate::io::fmt_sig;

/// Fourier coefficients of a field in FFT layout, `coeffs[ky_idx * n + kx_idx]`.
/// The forward transform is unnormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub n: usize,
    pub coeffs: Vec<Complex64>,
    pub domain_length: f64,
}

impl SpectralField {
    pub fn zeros(n: usize) -> Self {
        Self { n, coeffs: vec![Complex64::new(0.0, 0.0); n * n], domain_length: 2.0 * PI }
    }

    pub fn map_indexed(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        Self { n: self.n, coeffs: self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect(), domain_length: self.domain_length }
    }

    /// Largest violation of `c(-k) = conj(c(k))`.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let a = self.coeffs[j * n + i];
                let b = self.coeffs[((n - j) % n) * n + (n - i) % n];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }
}

/// Planned forward and inverse 1D transforms of length `n`, applied along
/// rows and then columns.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("FFT size must be a power of two >= 2, got {n}")));
        }
        let mut planner = FftPlanner::new();
        Ok(Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) })
    }

    /// Cached plan for this thread.
    pub fn cached(n: usize) -> Result<Self> {
        thread_local! {
            static PLANS: RefCell<HashMap<usize, Fft2>> = RefCell::new(HashMap::new());
        }
        PLANS.with(|plans| {
            if let Some(p) = plans.borrow().get(&n) {
                return Ok(p.clone());
            }
            let p = Fft2::new(n)?;
            plans.borrow_mut().insert(n, p.clone());
            Ok(p)
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        plan.process(data);
        transpose(data, n);
        plan.process(data);
        transpose(data, n);
    }

    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform including the `1/n²` factor.
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward_in_place(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut buf = coeffs.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for j in 0..n {
        for i in j + 1..n {
            data.swap(j * n + i, i * n + j);
        }
    }
}

pub fn fft2(field: &VorticityField) -> Result<SpectralField> {
    let plan = Fft2::cached(field.n())?;
    Ok(SpectralField { n: field.n(), coeffs: plan.forward_real(field.values()), domain_length: 2.0 * PI })
}

pub fn ifft2(spec: &SpectralField) -> Result<VorticityField> {
    let plan = Fft2::cached(spec.n)?;
    VorticityField::new(spec.n, plan.inverse_real(&spec.coeffs))
}

/// Integer wavenumber of FFT index `i`: `0, 1, …, n/2−1, −n/2, …, −1`.
pub fn fft_freq(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Wavenumber arrays over the `n x n` FFT layout.
#[derive(Clone, Debug, PartialEq)]
pub struct WavenumberGrid {
    pub n: usize,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub k2: Vec<f64>,
}

pub fn wavenumber_grid(n: usize) -> Result<WavenumberGrid> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("wavenumber grid needs an even size, got {n}")));
    }
    let mut kx = Vec::with_capacity(n * n);
    let mut ky = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            kx.push(fft_freq(i, n) as f64);
            ky.push(fft_freq(j, n) as f64);
        }
    }
    let k2 = kx.iter().zip(&ky).map(|(a, b)| a * a + b * b).collect();
    Ok(WavenumberGrid { n, kx, ky, k2 })
}

/// 2/3-rule mask: keeps modes with `max(|kx|, |ky|) <= floor(n/3)`.
pub fn dealias_mask(n: usize) -> Result<Vec<bool>> {
    let grid = wavenumber_grid(n)?;
    let cut = (n / 3) as f64;
    Ok(grid.kx.iter().zip(&grid.ky).map(|(a, b)| a.abs().max(b.abs()) <= cut).collect())
}

/// Total enstrophy `Z = mean(ω²)/2`.
pub fn enstrophy(omega: &VorticityField) -> f64 {
    omega.values().iter().map(|v| v * v).sum::<f64>() / (2.0 * omega.values().len() as f64)
}

/// Enstrophy binned into integer shells `k = round(|k|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumCurve {
    pub k_bins: Vec<usize>,
    pub density: Vec<f64>,
    pub dk: f64,
}

impl SpectrumCurve {
    pub fn total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.dk
    }

    /// Elementwise mean of several curves with identical binning.
    pub fn mean(curves: &[SpectrumCurve]) -> Result<SpectrumCurve> {
        let first = curves.first().ok_or_else(|| Error::InvalidArgument("no spectra to average".into()))?;
        let mut density = vec![0.0; first.density.len()];
        for c in curves {
            if c.k_bins != first.k_bins {
                return Err(Error::InvalidArgument("spectra have different binning".into()));
            }
            density.iter_mut().zip(&c.density).for_each(|(d, v)| *d += v);
        }
        density.iter_mut().for_each(|d| *d /= curves.len() as f64);
        Ok(SpectrumCurve { k_bins: first.k_bins.clone(), density, dk: first.dk })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,E_Z\n");
        for (k, e) in self.k_bins.iter().zip(&self.density) {
            let _ = writeln!(s, "{k},{}", fmt_sig(*e));
        }
        s
    }
}

/// Shell index of a wavenumber magnitude; half-integers round away from zero.
pub fn shell_index(k2: f64) -> usize {
    k2.sqrt().round() as usize
}

pub fn enstrophy_spectrum(omega: &VorticityField) -> Result<SpectrumCurve> {
    let n = omega.n();
    let spec = fft2(omega)?;
    let grid = wavenumber_grid(n)?;
    let k_max = shell_index(grid.k2.iter().cloned().fold(0.0, f64::max));
    let mut density = vec![0.0; k_max + 1];
    let norm = 1.0 / ((n * n) as f64).powi(2);
    for (c, &k2) in spec.coeffs.iter().zip(&grid.k2) {
        density[shell_index(k2)] += 0.5 * c.norm_sqr() * norm;
    }
    Ok(SpectrumCurve { k_bins: (0..=k_max).collect(), density, dk: 1.0 })
}

/// Shells whose ground-truth density falls below this are reported as absent.
pub const ABSENT_SHELL_THRESHOLD: f64 = 1e-14;

/// `(E_pred − E_gt)/E_gt` per shell, `None` where the ground truth is negligible.
pub fn normalized_spectral_error(pred: &SpectrumCurve, gt: &SpectrumCurve) -> Result<Vec<Option<f64>>> {
    if pred.k_bins != gt.k_bins || pred.dk != gt.dk {
        return Err(Error::InvalidArgument(format!("spectral binning mismatch: {} vs {} shells", pred.k_bins.len(), gt.k_bins.len())));
    }
    Ok(pred.density.iter().zip(&gt.density).map(|(&p, &g)| if g < ABSENT_SHELL_THRESHOLD { None } else { Some((p - g) / g) }).collect())
}

/// Zero every mode with `|k| <= k_c`. `k_c` must lie in `(0, n/√2)`, past
/// which nothing would survive.
pub fn project_high(omega: &VorticityField, k_c: f64) -> Result<VorticityField> {
    let n = omega.n();
    let k_limit = n as f64 / std::f64::consts::SQRT_2;
    if !(k_c > 0.0 && k_c < k_limit) {
        return Err(Error::InvalidArgument(format!("high-frequency cutoff {k_c} outside (0, {k_limit:.4})")));
    }
    let spec = fft2(omega)?;
    let grid = wavenumber_grid(n)?;
    let kept = spec.map_indexed(|i, c| if grid.k2[i].sqrt() <= k_c { Complex64::new(0.0, 0.0) } else { c });
    Ok(ifft2(&kept)?.with_time(omega.time))
}

/// `(I − P_high) ω`.
pub fn project_low(omega: &VorticityField, k_c: f64) -> Result<VorticityField> {
    Ok(omega.sub(&project_high(omega, k_c)?))
}

/// Default high-pass cutoff: half the Nyquist wavenumber.
pub fn default_cutoff(n: usize) -> f64 {
    n as f64 / 4.0
}
