//! Conditional Glow-style bijection on `R^D`: blocks of actnorm, an
//! LU-parametrized invertible linear map, and an affine coupling whose scale
//! and shift come from a pluggable conditioner. Forward maps data to the
//! standard-normal base; sampling runs the inverse.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Magnitude bound on the coupling log-scale.
pub const LOG_SCALE_CLAMP: f64 = 8.0;
/// Block count of the reference architecture.
pub const DEFAULT_BLOCKS: usize = 21;
pub const FLOW_FORMAT: &str = "dexgrasp-flow";
pub const FLOW_VERSION: &str = "1.0";

/// Size of the pass-through half for dimension `d`.
pub fn pass_through_dim(d: usize) -> usize {
    d.div_ceil(2)
}

/// Maps the pass-through half and the context to the coupling's raw
/// `(log s, b)`, each of length `D - ⌈D/2⌉`. Must be deterministic.
pub trait Conditioner {
    fn condition(&self, pass: &[f64], context: &[f64]) -> (Vec<f64>, Vec<f64>);
}

/// Two-layer map `W2 tanh(W1 [x₁; c] + b1) + b2`, split into `(log s, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConditioner {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl MlpConditioner {
    /// Conditioner that always returns `(0, 0)`.
    pub fn zero(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: DMatrix::zeros(hidden, input),
            b1: DVector::zeros(hidden),
            w2: DMatrix::zeros(2 * output, hidden),
            b2: DVector::zeros(2 * output),
        }
    }

    /// Gaussian weights with standard deviation `scale / sqrt(fan_in)`.
    pub fn random(input: usize, hidden: usize, output: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut gauss = |r: usize, c: usize, fan: usize| {
            let s = scale / (fan.max(1) as f64).sqrt();
            DMatrix::from_fn(r, c, |_, _| s * gaussian(&mut *rng))
        };
        let w1 = gauss(hidden, input, input);
        let b1 = gauss(hidden, 1, 1).column(0).into_owned();
        let w2 = gauss(2 * output, hidden, hidden);
        let b2 = gauss(2 * output, 1, 1).column(0).into_owned();
        Self { w1, b1, w2, b2 }
    }

    fn output_dim(&self) -> usize {
        self.w2.nrows() / 2
    }

    fn validate(&self) -> Result<()> {
        let h = self.w1.nrows();
        if self.b1.len() != h || self.w2.ncols() != h || self.b2.len() != self.w2.nrows() || self.w2.nrows() % 2 != 0 {
            return Err(Error::InvalidInput("conditioner layer shapes are inconsistent".into()));
        }
        finite(self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter()), "conditioner")
    }
}

impl Conditioner for MlpConditioner {
    fn condition(&self, pass: &[f64], context: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let input = DVector::from_iterator(pass.len() + context.len(), pass.iter().chain(context).copied());
        let h = (&self.w1 * input + &self.b1).map(f64::tanh);
        let out = &self.w2 * h + &self.b2;
        let m = self.output_dim();
        (out.rows(0, m).iter().copied().collect(), out.rows(m, m).iter().copied().collect())
    }
}

/// `y = x / σ + μ` per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
}

impl ActNorm {
    pub fn identity(d: usize) -> Self {
        Self { mu: DVector::zeros(d), sigma: DVector::from_element(d, 1.0) }
    }

    fn validate(&self, d: usize) -> Result<()> {
        check_dim(d, self.mu.len())?;
        check_dim(d, self.sigma.len())?;
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("actnorm scales must be positive and finite".into()));
        }
        finite(self.mu.iter(), "actnorm shift")
    }

    fn log_det(&self) -> f64 {
        -self.sigma.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// `W = P L (U + S)` with `P` orthogonal and fixed, `L` unit lower
/// triangular, `U` strictly upper triangular and `S = diag(exp(log_s))`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibleLinear {
    pub p: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub log_s: DVector<f64>,
}

impl InvertibleLinear {
    pub fn identity(d: usize) -> Self {
        Self {
            p: DMatrix::identity(d, d),
            l: DMatrix::identity(d, d),
            u: DMatrix::zeros(d, d),
            log_s: DVector::zeros(d),
        }
    }

    /// Random orthogonal `P` (QR of a Gaussian matrix), small random
    /// triangular factors and log-scales.
    pub fn random(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut gauss = |r: usize, c: usize| DMatrix::<f64>::from_fn(r, c, |_, _| gaussian(&mut *rng));
        let qr = gauss(d, d).qr();
        let (q, r) = (qr.q(), qr.r());
        // Fix column signs so the factorization is unique.
        let p = DMatrix::from_fn(d, d, |i, j| if r[(j, j)] < 0.0 { -q[(i, j)] } else { q[(i, j)] });
        let noise = gauss(d, d) * (scale / (d as f64).sqrt());
        let l = DMatrix::from_fn(d, d, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => noise[(i, j)],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        });
        let u = DMatrix::from_fn(d, d, |i, j| if i < j { noise[(i, j)] } else { 0.0 });
        let log_s = gauss(d, 1).column(0) * scale;
        Self { p, l, u, log_s }
    }

    /// The dense matrix `W`.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.p * &self.l * self.upper()
    }

    fn upper(&self) -> DMatrix<f64> {
        let mut m = self.u.clone();
        for (i, ls) in self.log_s.iter().enumerate() {
            m[(i, i)] = ls.exp();
        }
        m
    }

    fn validate(&self, d: usize) -> Result<()> {
        for m in [&self.p, &self.l, &self.u] {
            if m.shape() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, got: m.nrows() });
            }
        }
        check_dim(d, self.log_s.len())?;
        finite(self.p.iter().chain(self.l.iter()).chain(self.u.iter()).chain(self.log_s.iter()), "linear block")?;
        let pp = self.p.transpose() * &self.p;
        if (pp - DMatrix::identity(d, d)).amax() > 1e-9 {
            return Err(Error::InvalidInput("linear block P is not orthogonal".into()));
        }
        for i in 0..d {
            if self.l[(i, i)] != 1.0 || self.u[(i, i)] != 0.0 {
                return Err(Error::InvalidInput("linear block L must be unit-diagonal and U zero-diagonal".into()));
            }
            for j in 0..d {
                if (j > i && self.l[(i, j)] != 0.0) || (j < i && self.u[(i, j)] != 0.0) {
                    return Err(Error::InvalidInput("linear block factors are not triangular".into()));
                }
            }
        }
        Ok(())
    }

    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.p * (&self.l * (self.upper() * x))
    }

    fn inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        let a = self.p.transpose() * y;
        let b = self.l.solve_lower_triangular_unchecked(&a);
        self.upper().solve_upper_triangular_unchecked(&b)
    }

    fn log_det(&self) -> f64 {
        self.log_s.sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowBlock<C = MlpConditioner> {
    pub actnorm: ActNorm,
    pub linear: InvertibleLinear,
    pub conditioner: C,
}

/// Ordered blocks on `R^D` conditioned on a context of fixed length.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStack<C = MlpConditioner> {
    dim: usize,
    context_dim: usize,
    blocks: Vec<FlowBlock<C>>,
}

fn finite<'a>(mut values: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite parameters")))
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn clamp_log_scale(v: f64) -> f64 {
    v.clamp(-LOG_SCALE_CLAMP, LOG_SCALE_CLAMP)
}

impl<C: Conditioner> FlowStack<C> {
    /// Builds a stack from explicit blocks. Conditioners are opaque here, so
    /// their output length is checked on first use.
    pub fn from_blocks(dim: usize, context_dim: usize, blocks: Vec<FlowBlock<C>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("flow dimension must be positive".into()));
        }
        for b in &blocks {
            b.actnorm.validate(dim)?;
            b.linear.validate(dim)?;
        }
        Ok(Self { dim, context_dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn blocks(&self) -> &[FlowBlock<C>] {
        &self.blocks
    }

    fn check(&self, x: &[f64], context: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.context_dim, context.len())
    }

    fn coupling(&self, block: &FlowBlock<C>, pass: &[f64], context: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.dim - pass.len();
        let (log_s, b) = block.conditioner.condition(pass, context);
        check_dim(m, log_s.len())?;
        check_dim(m, b.len())?;
        Ok((log_s.into_iter().map(clamp_log_scale).collect(), b))
    }

    /// Data to base: returns `z` and `log|det ∂z/∂x|`.
    pub fn forward(&self, x: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x, context)?;
        let h = pass_through_dim(self.dim);
        let mut v = DVector::from_column_slice(x);
        let mut logdet = 0.0;
        for block in &self.blocks {
            v = v.component_div(&block.actnorm.sigma) + &block.actnorm.mu;
            logdet += block.actnorm.log_det();
            v = block.linear.forward(&v);
            logdet += block.linear.log_det();
            let (log_s, b) = self.coupling(block, &v.as_slice()[..h], context)?;
            for (k, (ls, bk)) in log_s.iter().zip(&b).enumerate() {
                v[h + k] = ls.exp() * v[h + k] + bk;
                logdet += ls;
            }
        }
        Ok((v.iter().copied().collect(), logdet))
    }

    /// Base to data: returns `x` and `log|det ∂x/∂z|`.
    pub fn inverse(&self, z: &[f64], context: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(z, context)?;
        let h = pass_through_dim(self.dim);
        let mut v = DVector::from_column_slice(z);
        let mut logdet = 0.0;
        for block in self.blocks.iter().rev() {
            let (log_s, b) = self.coupling(block, &v.as_slice()[..h], context)?;
            for (k, (ls, bk)) in log_s.iter().zip(&b).enumerate() {
                v[h + k] = (v[h + k] - bk) * (-ls).exp();
                logdet -= ls;
            }
            v = block.linear.inverse(&v);
            logdet -= block.linear.log_det();
            v = (v - &block.actnorm.mu).component_mul(&block.actnorm.sigma);
            logdet -= block.actnorm.log_det();
        }
        Ok((v.iter().copied().collect(), logdet))
    }

    /// Log density of `x` under the flow with a standard-normal base.
    pub fn log_prob(&self, x: &[f64], context: &[f64]) -> Result<f64> {
        let (z, logdet) = self.forward(x, context)?;
        Ok(standard_normal_log_density(&z) + logdet)
    }

    /// Draws `n` samples deterministically from `seed`.
    pub fn sample(&self, context: &[f64], seed: u64, n: usize) -> Result<Vec<Vec<f64>>> {
        check_dim(self.context_dim, context.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                self.inverse(&z, context).map(|(x, _)| x)
            })
            .collect()
    }
}

pub fn standard_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

impl FlowStack<MlpConditioner> {
    /// Every block is the identity: `μ = 0`, `σ = 1`, `W = I`, conditioner `≡ 0`.
    pub fn identity(dim: usize, context_dim: usize, blocks: usize, hidden: usize) -> Result<Self> {
        let h = pass_through_dim(dim);
        let blocks = (0..blocks)
            .map(|_| FlowBlock {
                actnorm: ActNorm::identity(dim),
                linear: InvertibleLinear::identity(dim),
                conditioner: MlpConditioner::zero(h + context_dim, hidden, dim - h),
            })
            .collect();
        Self::new(dim, context_dim, blocks)
    }

    /// Randomly initialized stack; `scale` sets the spread of every
    /// parameter around the identity.
    pub fn random(dim: usize, context_dim: usize, blocks: usize, hidden: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = pass_through_dim(dim);
        let blocks = (0..blocks)
            .map(|_| {
                let mu = DVector::from_fn(dim, |_, _| scale * gaussian(&mut rng));
                let sigma = DVector::from_fn(dim, |_, _| (scale * gaussian(&mut rng)).exp());
                FlowBlock {
                    actnorm: ActNorm { mu, sigma },
                    linear: InvertibleLinear::random(dim, scale, &mut rng),
                    conditioner: MlpConditioner::random(h + context_dim, hidden, dim - h, scale, &mut rng),
                }
            })
            .collect();
        Self::new(dim, context_dim, blocks)
    }

    /// Checked constructor for stacks with the bundled conditioner.
    pub fn new(dim: usize, context_dim: usize, blocks: Vec<FlowBlock<MlpConditioner>>) -> Result<Self> {
        let h = pass_through_dim(dim);
        for b in &blocks {
            b.conditioner.validate()?;
            check_dim(h + context_dim, b.conditioner.w1.ncols())?;
            check_dim(dim - h, b.conditioner.output_dim())?;
        }
        Self::from_blocks(dim, context_dim, blocks)
    }

    pub fn to_file(&self) -> FlowFile {
        FlowFile {
            format: FLOW_FORMAT.into(),
            version: FLOW_VERSION.into(),
            dim: self.dim,
            context_dim: self.context_dim,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockFile {
                    actnorm_mu: b.actnorm.mu.iter().copied().collect(),
                    actnorm_sigma: b.actnorm.sigma.iter().copied().collect(),
                    p: rows(&b.linear.p),
                    l: rows(&b.linear.l),
                    u: rows(&b.linear.u),
                    log_s: b.linear.log_s.iter().copied().collect(),
                    w1: rows(&b.conditioner.w1),
                    b1: b.conditioner.b1.iter().copied().collect(),
                    w2: rows(&b.conditioner.w2),
                    b2: b.conditioner.b2.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &FlowFile) -> Result<Self> {
        if file.format != FLOW_FORMAT {
            return Err(Error::InvalidInput(format!("not a flow parameter file (format {:?})", file.format)));
        }
        crate::record::check_version(&file.version, FLOW_VERSION)?;
        let blocks = file
            .blocks
            .iter()
            .map(|b| {
                Ok(FlowBlock {
                    actnorm: ActNorm {
                        mu: DVector::from_column_slice(&b.actnorm_mu),
                        sigma: DVector::from_column_slice(&b.actnorm_sigma),
                    },
                    linear: InvertibleLinear {
                        p: matrix(&b.p)?,
                        l: matrix(&b.l)?,
                        u: matrix(&b.u)?,
                        log_s: DVector::from_column_slice(&b.log_s),
                    },
                    conditioner: MlpConditioner {
                        w1: matrix(&b.w1)?,
                        b1: DVector::from_column_slice(&b.b1),
                        w2: matrix(&b.w2)?,
                        b2: DVector::from_column_slice(&b.b2),
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.dim, file.context_dim, blocks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: FlowFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(&file)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput("ragged matrix in flow parameter file".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// On-disk layout of a flow stack. Matrices are lists of rows. For a block
/// the forward map is `x ↦ x / actnorm_sigma + actnorm_mu`, then
/// `x ↦ P L (U + diag(exp(log_s))) x`, then the coupling on
/// `x[⌈D/2⌉..]` with `(log s, b)` = the first and second halves of
/// `w2 tanh(w1 [x[..⌈D/2⌉]; context] + b1) + b2`, log s clamped to ±8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowFile {
    pub format: String,
    pub version: String,
    pub dim: usize,
    pub context_dim: usize,
    pub blocks: Vec<BlockFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub actnorm_mu: Vec<f64>,
    pub actnorm_sigma: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub log_s: Vec<f64>,
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}
