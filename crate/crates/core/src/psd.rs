//! Spatial power spectral density of 2-D maps, binned by radial frequency.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialPsd {
    /// Power per radial bin; bin r holds frequencies with round(|f|) == r, where |f| is
    /// measured in cycles per image along each axis using the centred (signed) index.
    pub power: Vec<f64>,
    /// Normalized cumulative power; all ones when the total power is zero.
    pub cdf: Vec<f64>,
    pub total: f64,
}

/// Normalized squared DFT magnitude |F|²/(h·w), so that the power sums to Σx² (Parseval).
pub fn power_spectrum(map: &[f64], height: usize, width: usize) -> Result<Vec<f64>> {
    if map.len() != height * width {
        return Err(Error::shape("psd", format!("{} values for {height}x{width}", map.len())));
    }
    if height * width < 2 {
        return Err(Error::Config("power spectrum of a 1x1 map is degenerate".into()));
    }
    let mut planner = FftPlanner::new();
    let mut data: Vec<Complex<f64>> = map.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row = planner.plan_fft_forward(width);
    for r in data.chunks_mut(width) {
        row.process(r);
    }
    let col = planner.plan_fft_forward(height);
    let mut buf = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            buf[y] = data[y * width + x];
        }
        col.process(&mut buf);
        for y in 0..height {
            data[y * width + x] = buf[y];
        }
    }
    let norm = (height * width) as f64;
    Ok(data.iter().map(|c| c.norm_sqr() / norm).collect())
}

fn signed(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Number of radial bins for a map.
pub fn bin_count(height: usize, width: usize) -> usize {
    let fy = (height / 2) as f64;
    let fx = (width / 2) as f64;
    (fy * fy + fx * fx).sqrt().round() as usize + 1
}

pub fn power_spectral_density(map: &[f64], height: usize, width: usize) -> Result<RadialPsd> {
    let spec = power_spectrum(map, height, width)?;
    let mut power = vec![0.0; bin_count(height, width)];
    for y in 0..height {
        let fy = signed(y, height);
        for x in 0..width {
            let fx = signed(x, width);
            let r = (fy * fy + fx * fx).sqrt().round() as usize;
            power[r] += spec[y * width + x];
        }
    }
    Ok(RadialPsd::from_power(power))
}

impl RadialPsd {
    pub fn from_power(power: Vec<f64>) -> Self {
        let total: f64 = power.iter().sum();
        let mut acc = 0.0;
        let cdf = power
            .iter()
            .map(|p| {
                acc += p;
                if total > 0.0 {
                    acc / total
                } else {
                    1.0
                }
            })
            .collect();
        RadialPsd { power, cdf, total }
    }

    /// Sums spectra with the same binning, e.g. across images.
    pub fn accumulate(items: &[RadialPsd]) -> Result<RadialPsd> {
        let first = items.first().ok_or_else(|| Error::Config("no spectra to combine".into()))?;
        let mut power = vec![0.0; first.power.len()];
        for it in items {
            if it.power.len() != power.len() {
                return Err(Error::shape("psd", "spectra have different bin counts"));
            }
            for (a, b) in power.iter_mut().zip(&it.power) {
                *a += b;
            }
        }
        Ok(RadialPsd::from_power(power))
    }

    /// Share of power in the top quarter of the radial bins.
    pub fn high_frequency_mass(&self) -> f64 {
        if self.total <= 0.0 {
            return 0.0;
        }
        let start = (self.power.len() as f64 * 0.75).floor() as usize;
        self.power[start..].iter().sum::<f64>() / self.total
    }
}

/// Binary mask of one class from a label map.
pub fn class_mask(labels: &[u8], class: u8) -> Vec<f64> {
    labels.iter().map(|&l| if l == class { 1.0 } else { 0.0 }).collect()
}
