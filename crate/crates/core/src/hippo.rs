//! HiPPO-LegS construction and the spike-aware adaptive state matrix
//! `A_S = A ∘ F(Δt)` with `F_ij(Δt) = exp(-α_ij Δt)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FlamesError, Result};
use crate::linalg;

/// The LegS matrix in its printed form: `n + 1` on the diagonal,
/// `-sqrt((2n+1)(2k+1))` below it, zero above (0-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct HippoMatrix(DMatrix<f64>);

impl HippoMatrix {
    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn hippo_legs(order: usize) -> Result<HippoMatrix> {
    if order == 0 {
        return Err(FlamesError::invalid("order", "HiPPO order must be at least 1"));
    }
    let m = DMatrix::from_fn(order, order, |n, k| {
        if n > k {
            -(((2 * n + 1) * (2 * k + 1)) as f64).sqrt()
        } else if n == k {
            (n + 1) as f64
        } else {
            0.0
        }
    });
    Ok(HippoMatrix(m))
}

/// Non-negative decay rates `α_ij` in 1/s.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayParams {
    alpha: DMatrix<f64>,
    uniform: Option<f64>,
}

impl DecayParams {
    pub fn uniform(order: usize, alpha0: f64) -> Result<Self> {
        if !(alpha0 >= 0.0 && alpha0.is_finite()) {
            return Err(FlamesError::invalid("alpha0", "must be finite and non-negative"));
        }
        Ok(Self {
            alpha: DMatrix::from_element(order, order, alpha0),
            uniform: Some(alpha0),
        })
    }

    pub fn zeros(order: usize) -> Self {
        Self {
            alpha: DMatrix::zeros(order, order),
            uniform: Some(0.0),
        }
    }

    pub fn from_matrix(alpha: DMatrix<f64>) -> Result<Self> {
        if alpha.nrows() != alpha.ncols() {
            return Err(FlamesError::invalid("alpha", "decay matrix must be square"));
        }
        if alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(FlamesError::invalid("alpha", "entries must be finite and non-negative"));
        }
        let first = alpha.get(0).copied();
        let uniform = first.filter(|f| alpha.iter().all(|a| a == f));
        Ok(Self { alpha, uniform })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    /// The shared rate when every entry is equal.
    pub fn uniform_rate(&self) -> Option<f64> {
        self.uniform
    }

    pub fn order(&self) -> usize {
        self.alpha.nrows()
    }
}

pub fn decay_matrix(alpha: &DecayParams, dt: f64) -> Result<DMatrix<f64>> {
    check_dt(dt)?;
    Ok(alpha.alpha.map(|a| (-a * dt).exp()))
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt >= 0.0) || dt.is_infinite() {
        return Err(FlamesError::invalid("dt", format!("interval {dt} must be finite and >= 0")));
    }
    Ok(())
}

/// How the stability sign `s` turns the stored matrix into the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignConvention {
    /// `s` multiplies the diagonal only. With `s = -1` the printed matrix
    /// becomes the usual contractive LegS generator.
    #[default]
    Diagonal,
    /// `s` multiplies every entry (`s·A`).
    Uniform,
}

pub fn apply_sign(base: &DMatrix<f64>, sign: f64, convention: SignConvention) -> DMatrix<f64> {
    match convention {
        SignConvention::Uniform => base * sign,
        SignConvention::Diagonal => {
            let mut m = base.clone();
            for i in 0..m.nrows().min(m.ncols()) {
                m[(i, i)] *= sign;
            }
            m
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub max_real_part: f64,
    pub unstable_modes: usize,
}

impl StabilityReport {
    pub fn of(m: &DMatrix<f64>) -> Self {
        let eig = linalg::eigenvalues(m);
        Self {
            max_real_part: eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max),
            unstable_modes: eig.iter().filter(|z| z.re >= 0.0).count(),
        }
    }

    pub fn is_hurwitz(&self) -> bool {
        self.unstable_modes == 0
    }
}

/// Serialized kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub order: usize,
    #[serde(default)]
    pub alpha0: Option<f64>,
    #[serde(default)]
    pub alpha: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sign")]
    pub stability_sign: i8,
    #[serde(default)]
    pub sign_convention: SignConvention,
    pub input_dim: usize,
    pub output_dim: usize,
}

fn default_sign() -> i8 {
    -1
}

pub const DEFAULT_ALPHA0: f64 = 1.0;

impl KernelParams {
    pub fn new(order: usize, input_dim: usize, output_dim: usize) -> Self {
        Self {
            order,
            alpha0: Some(DEFAULT_ALPHA0),
            alpha: None,
            seed: 0,
            stability_sign: -1,
            sign_convention: SignConvention::Diagonal,
            input_dim,
            output_dim,
        }
    }
}

/// Base matrix, decay rates and couplings of one spike-aware HiPPO block.
#[derive(Debug, Clone)]
pub struct SaHippoKernel {
    base: DMatrix<f64>,
    dynamics: DMatrix<f64>,
    alpha: DecayParams,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    sign: f64,
    convention: SignConvention,
}

impl SaHippoKernel {
    pub fn new(
        base: HippoMatrix,
        alpha: DecayParams,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        sign: f64,
        convention: SignConvention,
    ) -> Result<Self> {
        if sign != 1.0 && sign != -1.0 {
            return Err(FlamesError::invalid("stability_sign", "must be -1 or +1"));
        }
        Self::assemble(base.into_inner(), alpha, b, c, sign, convention)
    }

    /// Uses `dynamics` directly as the signed state matrix (`s = +1`).
    pub fn from_dynamics(
        dynamics: DMatrix<f64>,
        alpha: DecayParams,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
    ) -> Result<Self> {
        Self::assemble(dynamics, alpha, b, c, 1.0, SignConvention::Uniform)
    }

    fn assemble(
        base: DMatrix<f64>,
        alpha: DecayParams,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        sign: f64,
        convention: SignConvention,
    ) -> Result<Self> {
        let n = base.nrows();
        if base.ncols() != n || n == 0 {
            return Err(FlamesError::invalid("A", "state matrix must be square and non-empty"));
        }
        if alpha.order() != n {
            return Err(FlamesError::invalid(
                "alpha",
                format!("expected {n}x{n}, got {0}x{0}", alpha.order()),
            ));
        }
        if b.nrows() != n {
            return Err(FlamesError::invalid("B", format!("expected {n} rows, got {}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(FlamesError::invalid("C", format!("expected {n} columns, got {}", c.ncols())));
        }
        let dynamics = apply_sign(&base, sign, convention);
        Ok(Self {
            base,
            dynamics,
            alpha,
            b,
            c,
            sign,
            convention,
        })
    }

    pub fn from_params(params: &KernelParams) -> Result<Self> {
        let n = params.order;
        let base = hippo_legs(n)?;
        let alpha = match (&params.alpha, params.alpha0) {
            (Some(rows), _) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(FlamesError::invalid("alpha", format!("expected {n}x{n} matrix")));
                }
                DecayParams::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))?
            }
            (None, Some(a0)) => DecayParams::uniform(n, a0)?,
            (None, None) => DecayParams::uniform(n, DEFAULT_ALPHA0)?,
        };
        if params.input_dim == 0 {
            return Err(FlamesError::invalid("input_dim", "must be at least 1"));
        }
        if params.output_dim == 0 {
            return Err(FlamesError::invalid("output_dim", "must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let b = gaussian(n, params.input_dim, 1.0 / (n as f64).sqrt(), &mut rng);
        let c = gaussian(params.output_dim, n, 1.0 / (n as f64).sqrt(), &mut rng);
        Self::new(
            base,
            alpha,
            b,
            c,
            f64::from(params.stability_sign),
            params.sign_convention,
        )
    }

    pub fn order(&self) -> usize {
        self.base.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    /// The signed state matrix, i.e. `A_S` at `Δt = 0`.
    pub fn dynamics(&self) -> &DMatrix<f64> {
        &self.dynamics
    }

    pub fn alpha(&self) -> &DecayParams {
        &self.alpha
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn stability_sign(&self) -> f64 {
        self.sign
    }

    pub fn convention(&self) -> SignConvention {
        self.convention
    }

    /// Same kernel with decay disabled (`F ≡ 1`).
    pub fn without_decay(&self) -> Self {
        let mut k = self.clone();
        k.alpha = DecayParams::zeros(self.order());
        k
    }
}

pub(crate) fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    // row-major fill so the draw order does not depend on storage layout
    let data: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// `A_S = (signed A) ∘ F(dt)`.
pub fn adaptive_matrix(kernel: &SaHippoKernel, dt: f64) -> Result<DMatrix<f64>> {
    check_dt(dt)?;
    if let Some(rate) = kernel.alpha.uniform_rate() {
        return Ok(&kernel.dynamics * (-rate * dt).exp());
    }
    let f = decay_matrix(&kernel.alpha, dt)?;
    Ok(kernel.dynamics.component_mul(&f))
}

/// [`adaptive_matrix`] plus an eigenvalue report; non-Hurwitz results are
/// flagged, not rejected.
pub fn adaptive_matrix_checked(
    kernel: &SaHippoKernel,
    dt: f64,
) -> Result<(DMatrix<f64>, StabilityReport)> {
    let m = adaptive_matrix(kernel, dt)?;
    let report = StabilityReport::of(&m);
    if !report.is_hurwitz() {
        log::warn!(
            "adaptive matrix at dt={dt} has {} mode(s) with Re(λ) >= 0 (max {:.3e})",
            report.unstable_modes,
            report.max_real_part
        );
    }
    Ok((m, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_legs(n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for row in 0..n {
            for col in 0..n {
                if row > col {
                    m[(row, col)] = -(((2 * row + 1) * (2 * col + 1)) as f64).sqrt();
                }
            }
            m[(row, row)] = (row + 1) as f64;
        }
        m
    }

    #[test]
    fn order_one_and_two() {
        assert_eq!(hippo_legs(1).unwrap().matrix()[(0, 0)], 1.0);
        let a = hippo_legs(2).unwrap();
        let m = a.matrix();
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 0)], -(3f64).sqrt());
        assert_eq!(m[(1, 1)], 2.0);
    }

    #[test]
    fn order_zero_rejected() {
        assert!(hippo_legs(0).is_err());
    }

    #[test]
    fn matches_double_loop_reference() {
        for n in 1..20 {
            assert_eq!(hippo_legs(n).unwrap().matrix(), &reference_legs(n));
        }
    }

    #[test]
    fn triangle_structure() {
        let a = hippo_legs(12).unwrap();
        let m = a.matrix();
        for i in 0..12 {
            for j in 0..12 {
                if i > j {
                    assert!(m[(i, j)] < 0.0);
                } else if i < j {
                    assert_eq!(m[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn decay_at_zero_is_ones() {
        let alpha = DecayParams::uniform(4, 3.0).unwrap();
        assert_eq!(decay_matrix(&alpha, 0.0).unwrap(), DMatrix::from_element(4, 4, 1.0));
    }

    #[test]
    fn decay_ln2_halves() {
        let alpha = DecayParams::uniform(3, std::f64::consts::LN_2).unwrap();
        let f = decay_matrix(&alpha, 1.0).unwrap();
        assert!(f.iter().all(|v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn decay_rejects_negative_dt() {
        let alpha = DecayParams::uniform(2, 1.0).unwrap();
        assert!(decay_matrix(&alpha, -1e-3).is_err());
    }

    #[test]
    fn decay_is_monotone_and_vanishes() {
        let alpha = DecayParams::from_matrix(DMatrix::from_fn(3, 3, |i, j| 1.5 + (i + 2 * j) as f64)).unwrap();
        let mut prev = decay_matrix(&alpha, 0.0).unwrap();
        for k in 1..40 {
            let f = decay_matrix(&alpha, k as f64 * 0.5).unwrap();
            assert!(f.iter().zip(prev.iter()).all(|(a, b)| a < b));
            assert!(f.iter().all(|v| *v > 0.0 && *v <= 1.0));
            prev = f;
        }
        assert!(prev.max() < 1e-8);
    }

    fn legs_kernel(n: usize, alpha: DecayParams, convention: SignConvention) -> SaHippoKernel {
        SaHippoKernel::new(
            hippo_legs(n).unwrap(),
            alpha,
            DMatrix::from_element(n, 1, 1.0),
            DMatrix::from_element(1, n, 1.0),
            -1.0,
            convention,
        )
        .unwrap()
    }

    #[test]
    fn uniform_convention_is_negated_matrix_at_zero_dt() {
        let k = legs_kernel(5, DecayParams::uniform(5, 2.0).unwrap(), SignConvention::Uniform);
        let a0 = adaptive_matrix(&k, 0.0).unwrap();
        assert_eq!(a0, -hippo_legs(5).unwrap().into_inner());
    }

    #[test]
    fn diagonal_convention_negates_only_diagonal() {
        let k = legs_kernel(4, DecayParams::zeros(4), SignConvention::Diagonal);
        let a = hippo_legs(4).unwrap().into_inner();
        let d = k.dynamics();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { -a[(i, j)] } else { a[(i, j)] };
                assert_eq!(d[(i, j)], expected);
            }
        }
        assert!(StabilityReport::of(d).is_hurwitz());
    }

    #[test]
    fn uniform_alpha_scales_by_scalar() {
        let rate = 0.7;
        let dt = 0.3;
        let k = legs_kernel(6, DecayParams::uniform(6, rate).unwrap(), SignConvention::Diagonal);
        let fast = adaptive_matrix(&k, dt).unwrap();
        // dense Hadamard oracle through the general path
        let full = DecayParams::from_matrix(DMatrix::from_element(6, 6, rate)).unwrap();
        let f = full.matrix().map(|a| (-a * dt).exp());
        let dense = k.dynamics().component_mul(&f);
        assert!((fast - &dense).norm() < 1e-13);
        let scaled = k.dynamics() * (-rate * dt).exp();
        assert!((dense - scaled).norm() < 1e-13);
    }

    #[test]
    fn entries_shrink_and_zero_pattern_kept() {
        let alpha = DecayParams::from_matrix(DMatrix::from_fn(5, 5, |i, j| (i * 5 + j) as f64 * 0.1)).unwrap();
        let k = legs_kernel(5, alpha, SignConvention::Diagonal);
        for dt in [0.0, 0.1, 1.0, 7.5] {
            let m = adaptive_matrix(&k, dt).unwrap();
            for (a, s) in k.dynamics().iter().zip(m.iter()) {
                assert!(s.abs() <= a.abs());
                assert_eq!(*a == 0.0, *s == 0.0);
            }
        }
    }

    #[test]
    fn zero_alpha_is_base_for_every_dt() {
        let k = legs_kernel(4, DecayParams::zeros(4), SignConvention::Uniform);
        for dt in [0.0, 0.01, 1.0, 100.0] {
            assert_eq!(&adaptive_matrix(&k, dt).unwrap(), k.dynamics());
        }
    }

    #[test]
    fn params_round_trip_json() {
        let mut p = KernelParams::new(8, 3, 2);
        p.seed = 11;
        let json = serde_json::to_string(&p).unwrap();
        let back: KernelParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
        let k1 = SaHippoKernel::from_params(&p).unwrap();
        let k2 = SaHippoKernel::from_params(&back).unwrap();
        assert_eq!(k1.b(), k2.b());
        assert_eq!(k1.c(), k2.c());
        assert_eq!(k1.b().shape(), (8, 3));
        assert_eq!(k1.c().shape(), (2, 8));
    }

    #[test]
    fn params_reject_bad_shapes() {
        let mut p = KernelParams::new(3, 1, 1);
        p.alpha = Some(vec![vec![1.0; 3]; 2]);
        assert!(SaHippoKernel::from_params(&p).is_err());
        let mut p = KernelParams::new(3, 1, 1);
        p.stability_sign = 0;
        assert!(SaHippoKernel::from_params(&p).is_err());
        assert!(serde_json::from_str::<KernelParams>(r#"{"order":2,"input_dim":1,"output_dim":1,"bogus":1}"#).is_err());
    }

    #[test]
    fn checked_flags_unstable() {
        let k = legs_kernel(3, DecayParams::zeros(3), SignConvention::Diagonal);
        let (_, report) = adaptive_matrix_checked(&k, 0.0).unwrap();
        assert!(report.is_hurwitz());
        let unstable = SaHippoKernel::from_dynamics(
            hippo_legs(3).unwrap().into_inner(),
            DecayParams::zeros(3),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 3),
        )
        .unwrap();
        let (_, report) = adaptive_matrix_checked(&unstable, 0.5).unwrap();
        assert_eq!(report.unstable_modes, 3);
    }
}
