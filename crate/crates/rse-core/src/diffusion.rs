//! Deterministic diffusion machinery: the noise schedule, forward noising,
//! two-scale classifier-free guidance, and an eta = 0 ancestral sampler —
//! plus a closed-form oracle denoiser over a synthetic blob world.
//!
//! The latent space is the pixel grid itself (identity encoder): at this
//! scale a learned autoencoder adds nothing verifiable, while the identity
//! keeps masks resolution-exact. The oracle denoiser knows the clean target
//! for any conditioning in closed form, so every downstream claim about
//! sampling, relevance, and masked editing can be checked analytically.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::imaging::{check_same_shape, GrayImage, Latent};
use crate::instruction::{Finding, InstructionSet, Operation, Severity};

/// Variance schedule for the diffusion process.
///
/// Stores the per-step variances `beta_1..=beta_T` and the cumulative
/// products `alpha_bar_t = prod (1 - beta_s)`, with `alpha_bar_0 = 1`
/// exactly. `alpha_bar` decreases strictly because every beta is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step variances.
    ///
    /// Betas must be finite, in `(0, 1)`, and non-decreasing.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidParameter {
                name: "betas",
                reason: "schedule needs at least one step",
            });
        }
        for (index, &beta) in betas.iter().enumerate() {
            if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
                return Err(Error::InvalidParameter {
                    name: "betas",
                    reason: "every beta must lie strictly inside (0, 1)",
                });
            }
            if index > 0 && beta < betas[index - 1] {
                return Err(Error::InvalidParameter {
                    name: "betas",
                    reason: "betas must be non-decreasing",
                });
            }
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut product = 1.0;
        for &beta in &betas {
            product *= 1.0 - beta;
            alpha_bars.push(product);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Linear schedule from `beta_start` to `beta_end` over `train_steps`.
    pub fn linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if train_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "train_steps",
                reason: "schedule needs at least one step",
            });
        }
        let betas = (0..train_steps)
            .map(|i| {
                if train_steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (train_steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// The conventional default: 1000 steps, beta from 1e-4 to 0.02.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("default schedule parameters are valid")
    }

    /// Number of training steps `T`.
    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    /// Per-step variances `beta_1..=beta_T`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Cumulative product `alpha_bar_t` for `t` in `0..=T`.
    /// Panics if `t` exceeds the schedule; fallible callers should check
    /// the range first.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub(crate) fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.train_steps() {
            return Err(Error::TimestepOutOfRange {
                t,
                min,
                max: self.train_steps(),
            });
        }
        Ok(())
    }
}

/// Weights for two-scale classifier-free guidance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceScales {
    /// Weight on the image-conditioning direction.
    pub s_image: f64,
    /// Weight on the text-conditioning direction.
    pub s_text: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self {
            s_image: 1.5,
            s_text: 7.5,
        }
    }
}

impl GuidanceScales {
    fn validate(&self) -> Result<()> {
        if !self.s_image.is_finite() || !self.s_text.is_finite() {
            return Err(Error::InvalidParameter {
                name: "scales",
                reason: "guidance scales must be finite",
            });
        }
        Ok(())
    }
}

/// What a denoiser is conditioned on: the input image and the instruction
/// text (empty set = null text conditioning).
#[derive(Debug, Clone, Copy)]
pub struct Conditioning<'a> {
    /// Conditioning image `I`.
    pub image: &'a GrayImage,
    /// Conditioning text `T`; the empty set encodes "no instruction".
    pub text: &'a InstructionSet,
}

/// A noise predictor: estimates the noise component of `z` at timestep `t`
/// under the given conditioning.
pub trait Denoiser {
    /// Predicted noise for `z_t`. Implementations must reject `t = 0`.
    fn epsilon(
        &self,
        z: &Latent,
        t: usize,
        cond: &Conditioning<'_>,
        sched: &NoiseSchedule,
    ) -> Result<Latent>;
}

/// One synthetic finding: a radially symmetric bump with hard compact
/// support.
///
/// The profile is a truncated Gaussian shifted to reach zero at the support
/// boundary: `g(d) = (exp(-d^2 / (2 sigma^2)) - exp(-4.5)) / (1 - exp(-4.5))`
/// for `d < radius` with `sigma = radius / 3`, and exactly zero beyond.
/// `g(0) = 1`, so `amplitude` is the peak intensity change. The hard edge
/// makes "which pixels can this edit touch" an exact set, not a tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    /// Blob center in pixel coordinates.
    pub center: (f64, f64),
    /// Support radius in pixels.
    pub radius: f64,
    /// Peak intensity change at full severity.
    pub amplitude: f64,
}

impl BlobSpec {
    /// Whether pixel `(x, y)` lies strictly inside the support disk.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 - self.center.0;
        let dy = y as f64 - self.center.1;
        dx * dx + dy * dy < self.radius * self.radius
    }

    /// Profile value at squared distance `d2` from the center.
    fn profile(&self, d2: f64) -> f64 {
        if d2 >= self.radius * self.radius {
            return 0.0;
        }
        let sigma2 = (self.radius / 3.0) * (self.radius / 3.0);
        let floor = (-4.5f64).exp();
        ((-d2 / (2.0 * sigma2)).exp() - floor) / (1.0 - floor)
    }
}

/// Default severity multipliers, indexed by severity rank.
const DEFAULT_SEVERITY_SCALE: [f64; 6] = [0.3, 0.5, 0.5, 0.75, 1.0, 1.0];

/// The synthetic world the oracle denoiser lives in: a set of named blobs
/// plus a severity-to-amplitude table.
///
/// Its target builder turns (image, instructions) into the clean edited
/// image in closed form: `x0 = clamp(I + sum of signed scaled blobs)`.
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobWorld {
    findings: BTreeMap<Finding, BlobSpec>,
    severity_scale: [f64; 6],
}

impl BlobWorld {
    /// Builds a world with the default severity table.
    pub fn new(findings: BTreeMap<Finding, BlobSpec>) -> Result<Self> {
        Self::with_severity_scale(findings, core::iter::empty())
    }

    /// Builds a world, overriding severity multipliers per rank.
    ///
    /// The resulting table must be positive, finite, and non-decreasing in
    /// severity rank.
    pub fn with_severity_scale(
        findings: BTreeMap<Finding, BlobSpec>,
        overrides: impl IntoIterator<Item = (Severity, f64)>,
    ) -> Result<Self> {
        for spec in findings.values() {
            let finite = spec.center.0.is_finite()
                && spec.center.1.is_finite()
                && spec.radius.is_finite()
                && spec.amplitude.is_finite();
            if !finite || spec.radius <= 0.0 || spec.amplitude <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "blob",
                    reason: "center must be finite, radius and amplitude positive",
                });
            }
        }
        let mut severity_scale = DEFAULT_SEVERITY_SCALE;
        for (severity, multiplier) in overrides {
            severity_scale[severity as usize] = multiplier;
        }
        let monotone = severity_scale.windows(2).all(|w| w[0] <= w[1]);
        if !monotone || severity_scale.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(Error::InvalidParameter {
                name: "severity_scale",
                reason: "multipliers must be positive and non-decreasing in rank",
            });
        }
        Ok(Self {
            findings,
            severity_scale,
        })
    }

    /// The blob for a finding, if the world defines one.
    pub fn blob(&self, finding: &Finding) -> Option<&BlobSpec> {
        self.findings.get(finding)
    }

    /// Iterates over defined findings in sorted order.
    pub fn findings(&self) -> impl Iterator<Item = (&Finding, &BlobSpec)> {
        self.findings.iter()
    }

    /// Amplitude multiplier for a severity; an ungraded instruction acts at
    /// full strength.
    pub fn severity_multiplier(&self, severity: Option<Severity>) -> f64 {
        severity.map_or(1.0, |s| self.severity_scale[s as usize])
    }

    /// The clean edited image for (image, instructions), in closed form.
    ///
    /// `Add` deposits the blob scaled by the severity multiplier, `Remove`
    /// subtracts it, and `ChangeLevel` rescales a nominally full-strength
    /// blob to the target severity (multiplier minus one). Findings the
    /// world does not define contribute nothing. The sum is clamped to the
    /// image range, so an empty instruction set returns the input exactly.
    pub fn target(&self, image: &GrayImage, instructions: &InstructionSet) -> Result<GrayImage> {
        let width = image.width();
        let height = image.height();
        let mut data: Vec<f64> = image.data().to_vec();
        for instruction in instructions {
            let Some(spec) = self.findings.get(&instruction.finding) else {
                continue;
            };
            let (cx, cy) = spec.center;
            if cx < 0.0 || cy < 0.0 || cx > (width - 1) as f64 || cy > (height - 1) as f64 {
                return Err(Error::InvalidParameter {
                    name: "blob",
                    reason: "center lies outside the image canvas",
                });
            }
            let factor = match instruction.op {
                Operation::Add => self.severity_multiplier(instruction.severity),
                Operation::Remove => -self.severity_multiplier(instruction.severity),
                Operation::ChangeLevel => self.severity_multiplier(instruction.severity) - 1.0,
            };
            let x_lo = (cx - spec.radius).floor().max(0.0) as usize;
            let x_hi = ((cx + spec.radius).ceil() as usize).min(width - 1);
            let y_lo = (cy - spec.radius).floor().max(0.0) as usize;
            let y_hi = ((cy + spec.radius).ceil() as usize).min(height - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    data[y * width + x] += factor * spec.amplitude * spec.profile(d2);
                }
            }
        }
        for value in &mut data {
            *value = value.clamp(0.0, 1.0);
        }
        GrayImage::new(width, height, data)
    }
}

/// Forward noising: `z_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
///
/// At `t = 0` this is `x0` bit-exactly; as `alpha_bar` approaches zero it
/// approaches pure noise.
pub fn add_noise(x0: &Latent, eps: &Latent, t: usize, sched: &NoiseSchedule) -> Result<Latent> {
    check_same_shape(x0.width(), x0.height(), eps.width(), eps.height())?;
    sched.check_step(t, 0)?;
    let signal = sched.alpha_bar(t).sqrt();
    let noise = (1.0 - sched.alpha_bar(t)).sqrt();
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| signal * x + noise * e)
        .collect();
    Latent::new(x0.width(), x0.height(), data)
}

/// Closed-form noise prediction in the blob world: the exact noise that
/// would have produced `z` from the clean target,
/// `eps = (z - sqrt(alpha_bar_t) x0(I, T)) / sqrt(1 - alpha_bar_t)`.
///
/// With empty text the target is the conditioning image itself (no edit).
pub fn oracle_epsilon(
    z: &Latent,
    t: usize,
    cond: &Conditioning<'_>,
    world: &BlobWorld,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    check_same_shape(z.width(), z.height(), cond.image.width(), cond.image.height())?;
    sched.check_step(t, 1)?;
    let target = world.target(cond.image, cond.text)?;
    let signal = sched.alpha_bar(t).sqrt();
    let inv_noise = 1.0 / (1.0 - sched.alpha_bar(t)).sqrt();
    let data = z
        .data()
        .iter()
        .zip(target.data())
        .map(|(&zv, &xv)| (zv - signal * xv) * inv_noise)
        .collect();
    Latent::new(z.width(), z.height(), data)
}

impl Denoiser for BlobWorld {
    fn epsilon(
        &self,
        z: &Latent,
        t: usize,
        cond: &Conditioning<'_>,
        sched: &NoiseSchedule,
    ) -> Result<Latent> {
        oracle_epsilon(z, t, cond, self, sched)
    }
}

/// Two-scale classifier-free guidance over image and text conditioning:
///
/// ```text
/// eps~ = eps(z, 0, 0)
///      + s_image (eps(z, I, 0) - eps(z, 0, 0))
///      + s_text  (eps(z, I, T) - eps(z, I, 0))
/// ```
///
/// with the all-zero image as null image conditioning and the empty
/// instruction set as null text. Evaluated in gathered-coefficient form
/// `(1 - s_image) eps_uncond + (s_image - s_text) eps_image + s_text eps_full`,
/// which is algebraically identical and collapses to a single branch
/// bit-exactly when a scale is 0 or 1.
pub fn cfg_epsilon(
    z: &Latent,
    t: usize,
    image: &GrayImage,
    text: &InstructionSet,
    scales: &GuidanceScales,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
) -> Result<Latent> {
    scales.validate()?;
    let null_image = GrayImage::filled(image.width(), image.height(), 0.0)?;
    let null_text = InstructionSet::empty();
    let eps_uncond = denoiser.epsilon(
        z,
        t,
        &Conditioning {
            image: &null_image,
            text: &null_text,
        },
        sched,
    )?;
    let eps_image = denoiser.epsilon(
        z,
        t,
        &Conditioning {
            image,
            text: &null_text,
        },
        sched,
    )?;
    let eps_full = denoiser.epsilon(z, t, &Conditioning { image, text }, sched)?;

    let w_uncond = 1.0 - scales.s_image;
    let w_image = scales.s_image - scales.s_text;
    let w_full = scales.s_text;
    let data = eps_uncond
        .data()
        .iter()
        .zip(eps_image.data())
        .zip(eps_full.data())
        .map(|((&u, &i), &f)| w_uncond * u + w_image * i + w_full * f)
        .collect();
    Latent::new(z.width(), z.height(), data)
}

/// Evenly spaced sampling ladder from `T` down to 0 (inclusive):
/// `t_k = round(T (steps - k) / steps)`, consecutive duplicates removed.
pub fn sampling_timesteps(train_steps: usize, steps: usize) -> Vec<usize> {
    let mut ladder: Vec<usize> = (0..=steps)
        .map(|k| {
            let exact = train_steps as f64 * (steps - k) as f64 / steps as f64;
            exact.round() as usize
        })
        .collect();
    ladder.dedup();
    ladder
}

/// One deterministic (eta = 0) ancestral update from `t_cur` to `t_next`:
/// reconstruct `x0_hat = (z - sqrt(1 - alpha_bar) eps) / sqrt(alpha_bar)`,
/// then re-noise it to `t_next` along the same predicted-noise direction.
pub(crate) fn ddim_update(
    z: &Latent,
    eps: &Latent,
    t_cur: usize,
    t_next: usize,
    sched: &NoiseSchedule,
) -> Latent {
    let signal_cur = sched.alpha_bar(t_cur).sqrt();
    let noise_cur = (1.0 - sched.alpha_bar(t_cur)).sqrt();
    let signal_next = sched.alpha_bar(t_next).sqrt();
    let noise_next = (1.0 - sched.alpha_bar(t_next)).sqrt();
    let data = z
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&zv, &ev)| {
            let x0_hat = (zv - noise_cur * ev) / signal_cur;
            signal_next * x0_hat + noise_next * ev
        })
        .collect();
    Latent::from_parts_unchecked(z.width(), z.height(), data)
}

/// Runs the deterministic sampler from `z_init` (a latent at `t = T`) down
/// to `t = 0` over an evenly spaced ladder of `steps` denoising steps,
/// applying classifier-free guidance at every step. Pure function of its
/// inputs: identical arguments yield bit-identical outputs.
pub fn sample(
    z_init: &Latent,
    image: &GrayImage,
    text: &InstructionSet,
    scales: &GuidanceScales,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    steps: usize,
) -> Result<Latent> {
    check_same_shape(z_init.width(), z_init.height(), image.width(), image.height())?;
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "need at least one sampling step",
        });
    }
    if steps > sched.train_steps() {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "sampling steps cannot exceed the training-step count",
        });
    }

    let ladder = sampling_timesteps(sched.train_steps(), steps);
    let mut z = z_init.clone();
    for pair in ladder.windows(2) {
        let (t_cur, t_next) = (pair[0], pair[1]);
        let eps = cfg_epsilon(&z, t_cur, image, text, scales, denoiser, sched)?;
        z = ddim_update(&z, &eps, t_cur, t_next, sched);
    }
    Ok(z)
}

/// A standard-normal latent drawn from a counter-based stream cipher RNG:
/// platform-independent and bit-reproducible for a given seed.
pub fn gaussian_latent(width: usize, height: usize, seed: u64) -> Result<Latent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Latent::new(width, height, data)
}

/// Derives an independent sub-seed for a named stream from a run seed
/// (splitmix64 finalizer), so one user-facing seed can drive several
/// decorrelated draws deterministically.
pub fn derived_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
