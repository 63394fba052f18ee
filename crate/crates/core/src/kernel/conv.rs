//! Convolution view of the normal part: impulse responses sampled on a
//! uniform grid and applied with zero-padded FFTs.

use nalgebra::DMatrix;
use rustfft::FftPlanner;

use crate::error::{FlamesError, Result};
use crate::hippo::SaHippoKernel;
use crate::kernel::nplr::NplrFactors;
use crate::linalg::{self, C64};

/// `h[k] = C V diag(e^{Λ k dt}) V* B` for `k = 0..L`, one tap sequence per
/// (output, input) pair.
#[derive(Debug, Clone)]
pub struct ConvKernel {
    taps: Vec<Vec<C64>>,
    outputs: usize,
    inputs: usize,
    length: usize,
    dt_grid: f64,
}

impl ConvKernel {
    /// Single-input single-output kernel from explicit samples.
    pub fn from_samples(samples: Vec<C64>, dt_grid: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(FlamesError::invalid("length", "must be at least 1"));
        }
        Ok(Self {
            length: samples.len(),
            taps: vec![samples],
            outputs: 1,
            inputs: 1,
            dt_grid,
        })
    }

    pub fn taps(&self, output: usize, input: usize) -> &[C64] {
        &self.taps[output * self.inputs + input]
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    pub fn dt_grid(&self) -> f64 {
        self.dt_grid
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Multi-channel linear convolution, truncated to the input length.
    /// `inputs[m]` is the sequence for input channel `m`; returns the real
    /// part per output channel.
    pub fn convolve(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if inputs.len() != self.inputs {
            return Err(FlamesError::invalid(
                "inputs",
                format!("expected {} channels, got {}", self.inputs, inputs.len()),
            ));
        }
        let t = inputs.first().map_or(0, Vec::len);
        if inputs.iter().any(|u| u.len() != t) {
            return Err(FlamesError::invalid("inputs", "channels differ in length"));
        }
        if t == 0 {
            return Ok(vec![Vec::new(); self.outputs]);
        }
        let size = (t + self.length - 1).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        let spectrum = |data: &mut Vec<C64>| {
            data.resize(size, C64::new(0.0, 0.0));
            fwd.process(data);
        };
        let input_spectra: Vec<Vec<C64>> = inputs
            .iter()
            .map(|u| {
                let mut d: Vec<C64> = u.iter().map(|v| C64::new(*v, 0.0)).collect();
                spectrum(&mut d);
                d
            })
            .collect();
        let mut out = Vec::with_capacity(self.outputs);
        for p in 0..self.outputs {
            let mut acc = vec![C64::new(0.0, 0.0); size];
            for (m, us) in input_spectra.iter().enumerate() {
                let mut k = self.taps(p, m).to_vec();
                spectrum(&mut k);
                for ((a, kf), uf) in acc.iter_mut().zip(&k).zip(us) {
                    *a += kf * uf;
                }
            }
            inv.process(&mut acc);
            let scale = 1.0 / size as f64;
            out.push(acc[..t].iter().map(|z| z.re * scale).collect());
        }
        Ok(out)
    }
}

pub fn build_conv_kernel(kernel: &SaHippoKernel, factors: &NplrFactors, length: usize, dt_grid: f64) -> Result<ConvKernel> {
    if length == 0 {
        return Err(FlamesError::invalid("length", "must be at least 1"));
    }
    if !(dt_grid > 0.0 && dt_grid.is_finite()) {
        return Err(FlamesError::invalid("dt_grid", "must be positive and finite"));
    }
    if factors.order() != kernel.order() {
        return Err(FlamesError::invalid("factors", "order does not match kernel"));
    }
    let max_re = factors.lambda.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re > 0.0 {
        return Err(FlamesError::Unstable { max_real: max_re });
    }
    let cv: DMatrix<C64> = linalg::to_complex(kernel.c()) * &factors.v;
    let vb: DMatrix<C64> = factors.v.adjoint() * linalg::to_complex(kernel.b());
    let (outputs, inputs, n) = (kernel.output_dim(), kernel.input_dim(), kernel.order());
    let step: Vec<C64> = factors.lambda.iter().map(|l| (l * dt_grid).exp()).collect();
    let mut taps = vec![Vec::with_capacity(length); outputs * inputs];
    let mut pow = vec![C64::new(1.0, 0.0); n];
    let mut weighted = DMatrix::<C64>::zeros(n, inputs);
    for _ in 0..length {
        for i in 0..n {
            for m in 0..inputs {
                weighted[(i, m)] = vb[(i, m)] * pow[i];
            }
        }
        let h = &cv * &weighted;
        for p in 0..outputs {
            for m in 0..inputs {
                taps[p * inputs + m].push(h[(p, m)]);
            }
        }
        for (z, s) in pow.iter_mut().zip(&step) {
            *z *= s;
        }
    }
    Ok(ConvKernel {
        taps,
        outputs,
        inputs,
        length,
        dt_grid,
    })
}

/// Linear convolution of one tap sequence with a real signal, truncated to
/// `u.len()`: both are zero-padded to the next power of two `≥ T + L - 1`.
pub fn fft_convolve(taps: &[C64], u: &[f64]) -> Vec<C64> {
    let t = u.len();
    if t == 0 || taps.is_empty() {
        return vec![C64::new(0.0, 0.0); t];
    }
    let size = (t + taps.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<C64> = taps.to_vec();
    a.resize(size, C64::new(0.0, 0.0));
    let mut b: Vec<C64> = u.iter().map(|v| C64::new(*v, 0.0)).collect();
    b.resize(size, C64::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    a.truncate(t);
    a.iter_mut().for_each(|z| *z *= scale);
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hippo::DecayParams;
    use crate::kernel::nplr::nplr_decompose;

    fn direct(taps: &[C64], u: &[f64]) -> Vec<C64> {
        (0..u.len())
            .map(|n| (0..=n.min(taps.len() - 1)).map(|k| taps[k] * u[n - k]).sum())
            .collect()
    }

    fn scalar() -> SaHippoKernel {
        SaHippoKernel::from_dynamics(
            DMatrix::from_element(1, 1, -1.0),
            DecayParams::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn scalar_exponential_samples() {
        let k = scalar();
        let f = nplr_decompose(k.dynamics(), 1).unwrap();
        let conv = build_conv_kernel(&k, &f, 5, 1.0).unwrap();
        for (i, h) in conv.taps(0, 0).iter().enumerate() {
            assert!((h.re - (-(i as f64)).exp()).abs() < 1e-14);
            assert!(h.im.abs() < 1e-14);
        }
        let single = build_conv_kernel(&k, &f, 1, 1.0).unwrap();
        assert_eq!(single.len(), 1);
        assert!((single.taps(0, 0)[0].re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unstable_rejected() {
        let k = SaHippoKernel::from_dynamics(
            DMatrix::from_element(1, 1, 0.5),
            DecayParams::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let f = nplr_decompose(k.dynamics(), 1).unwrap();
        assert!(matches!(build_conv_kernel(&k, &f, 4, 0.1), Err(FlamesError::Unstable { .. })));
    }

    #[test]
    fn impulse_and_zero_inputs() {
        let taps: Vec<C64> = (0..6).map(|i| C64::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut u = vec![0.0; 4];
        u[0] = 1.0;
        let y = fft_convolve(&taps, &u);
        for (a, b) in y.iter().zip(&taps) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!(fft_convolve(&taps, &[0.0; 9]).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn matches_direct_convolution() {
        let taps: Vec<C64> = (0..37).map(|i| C64::new((i as f64 * 0.3).sin(), (i as f64 * 0.1).cos())).collect();
        let u: Vec<f64> = (0..101).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let want = direct(&taps, &u);
        let got = fft_convolve(&taps, &u);
        let scale = want.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in want.iter().zip(&got) {
            assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn dft_of_decaying_exponential() {
        // closed-form DFT of e^{λ dt k}, k < L, inverted with an explicit DFT
        let lambda = C64::new(-0.7, 2.0);
        let dt = 0.05;
        let l = 64;
        let z = (lambda * dt).exp();
        let zl = (lambda * dt * l as f64).exp();
        let freq: Vec<C64> = (0..l)
            .map(|j| {
                let w = C64::new(0.0, -2.0 * std::f64::consts::PI * j as f64 / l as f64).exp();
                (C64::new(1.0, 0.0) - zl) / (C64::new(1.0, 0.0) - z * w)
            })
            .collect();
        for k in 0..l {
            let sample: C64 = freq
                .iter()
                .enumerate()
                .map(|(j, f)| f * C64::new(0.0, 2.0 * std::f64::consts::PI * (j * k) as f64 / l as f64).exp())
                .sum::<C64>()
                / l as f64;
            assert!((sample - z.powu(k as u32)).norm() < 1e-6);
        }
    }

    #[test]
    fn mimo_matches_per_pair() {
        let a = -DMatrix::from_fn(4, 4, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 * (i as f64 - j as f64) });
        let k = SaHippoKernel::from_dynamics(
            a,
            DecayParams::zeros(4),
            DMatrix::from_fn(4, 2, |i, j| (i + j) as f64 * 0.2),
            DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3),
        )
        .unwrap();
        let f = nplr_decompose(k.dynamics(), 2).unwrap();
        let conv = build_conv_kernel(&k, &f, 16, 0.1).unwrap();
        let inputs = vec![(0..20).map(|i| (i % 3) as f64).collect::<Vec<_>>(), (0..20).map(|i| (i % 2) as f64).collect()];
        let out = conv.convolve(&inputs).unwrap();
        for (p, row) in out.iter().enumerate() {
            for (n, y) in row.iter().enumerate() {
                let want: f64 = (0..2).map(|m| direct(conv.taps(p, m), &inputs[m])[n].re).sum();
                assert!((y - want).abs() < 1e-10);
            }
        }
    }
}
