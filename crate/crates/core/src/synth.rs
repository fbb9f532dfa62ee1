//! Synthetic few-shot benchmark with a drifted target domain.
//!
//! Class directions are drawn uniformly on the unit sphere. Source samples
//! are `normalize(c_y + σ_src ξ)`, target samples are
//! `normalize(R c_y + σ_tgt ξ)` with `R` a rotation by a fixed angle in a
//! random 2-plane, and the text prototypes are jittered class directions.
//! Sphere packing is not checked, so very large K in low dimension produces
//! overlapping classes.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::{dot, normalize_in_place, Matrix};
use crate::tta::ViewBatch;
use crate::zeroshot::PrototypeSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    pub dim: usize,
    pub shots: usize,
    /// Support rows per shot: the clean sample plus `augmentations - 1`
    /// jittered copies.
    pub augmentations: usize,
    /// Per-coordinate noise of the support augmentations.
    pub augment_noise: f64,
    /// Test samples per domain.
    pub test_n: usize,
    pub sigma_src: f64,
    pub sigma_tgt: f64,
    /// Radians.
    pub drift_angle: f64,
    pub prompt_jitter: f64,
    /// Temperature attached to the generated prototypes.
    pub temperature: f64,
    /// Augmented views per test sample (original included).
    pub views: usize,
    /// Per-coordinate noise of the augmented views.
    pub view_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 10,
            dim: 64,
            shots: 16,
            augmentations: 20,
            augment_noise: 0.07,
            test_n: 1000,
            sigma_src: 0.22,
            sigma_tgt: 0.38,
            drift_angle: 0.3,
            prompt_jitter: 0.05,
            temperature: 0.045,
            views: 64,
            view_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.class_count >= 2
            && self.dim >= 2
            && self.shots >= 1
            && self.augmentations >= 1
            && self.augment_noise >= 0.0
            && self.test_n >= 1
            && self.views >= 1
            && self.sigma_src >= 0.0
            && self.sigma_tgt >= 0.0
            && self.drift_angle.is_finite()
            && self.prompt_jitter >= 0.0
            && self.view_noise >= 0.0
            && self.temperature > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!(
                "invalid synthetic config {self:?}"
            )))
        }
    }
}

/// Generated benchmark: a labelled support set from the source domain, one
/// test set per domain, and the (mismatched) text prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub support: Dataset,
    pub source: Dataset,
    pub target: Dataset,
    pub prototypes: PrototypeSet,
}

// independent ChaCha streams per generated part
const STREAM_CLASSES: u64 = 1;
const STREAM_PROTOS: u64 = 2;
const STREAM_SUPPORT: u64 = 3;
const STREAM_SOURCE: u64 = 4;
const STREAM_TARGET: u64 = 5;
const STREAM_AUGMENT: u64 = 6;
const STREAM_VIEWS: u64 = 16;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Result<Vec<f64>> {
    let mut v = gaussian(rng, dim);
    normalize_in_place(&mut v)?;
    Ok(v)
}

/// `normalize(center + σ ξ)`.
fn noisy(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = center
        .iter()
        .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize_in_place(&mut v)?;
    Ok(v)
}

/// Rotation by `angle` in the plane spanned by orthonormal `u`, `v`.
struct PlaneRotation {
    u: Vec<f64>,
    v: Vec<f64>,
    cos: f64,
    sin: f64,
}

impl PlaneRotation {
    fn random(rng: &mut ChaCha8Rng, dim: usize, angle: f64) -> Result<Self> {
        let u = unit_gaussian(rng, dim)?;
        let mut v = gaussian(rng, dim);
        let proj = dot(&u, &v);
        v.iter_mut().zip(&u).for_each(|(x, y)| *x -= proj * y);
        normalize_in_place(&mut v)?;
        Ok(Self {
            u,
            v,
            cos: libm::cos(angle),
            sin: libm::sin(angle),
        })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let a = dot(x, &self.u);
        let b = dot(x, &self.v);
        let na = self.cos * a - self.sin * b;
        let nb = self.sin * a + self.cos * b;
        x.iter()
            .zip(&self.u)
            .zip(&self.v)
            .map(|((xi, ui), vi)| xi + (na - a) * ui + (nb - b) * vi)
            .collect()
    }
}

fn sample_domain(
    rng: &mut ChaCha8Rng,
    centers: &[Vec<f64>],
    per_class: Option<usize>,
    total: usize,
    sigma: f64,
) -> Result<Dataset> {
    let k = centers.len();
    let n = per_class.map_or(total, |s| s * k);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = match per_class {
            Some(s) => i / s,
            None => i % k,
        };
        rows.push(noisy(rng, &centers[y], sigma)?);
        labels.push(y);
    }
    Dataset::new(Matrix::from_rows(&rows)?, labels, k)
}

fn augment(rng: &mut ChaCha8Rng, data: &Dataset, copies: usize, sigma: f64) -> Result<Dataset> {
    if copies == 1 {
        return Ok(data.clone());
    }
    let mut rows = Vec::with_capacity(data.len() * copies);
    let mut labels = Vec::with_capacity(data.len() * copies);
    for (z, &y) in data.features().row_iter().zip(data.labels()) {
        rows.push(z.to_vec());
        for _ in 1..copies {
            rows.push(noisy(rng, z, sigma)?);
        }
        labels.extend(core::iter::repeat_n(y, copies));
    }
    Dataset::new(Matrix::from_rows(&rows)?, labels, data.class_count())
}

/// Generates the benchmark. Identical configs give bit-identical output.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthBenchmark> {
    config.validate()?;
    let (k, d) = (config.class_count, config.dim);

    let mut rng = rng_for(config.seed, STREAM_CLASSES);
    let classes: Vec<Vec<f64>> = (0..k)
        .map(|_| unit_gaussian(&mut rng, d))
        .collect::<Result<_>>()?;
    let rotation = PlaneRotation::random(&mut rng, d, config.drift_angle)?;
    let drifted: Vec<Vec<f64>> = classes.iter().map(|c| rotation.apply(c)).collect();

    let mut rng = rng_for(config.seed, STREAM_PROTOS);
    let protos: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| noisy(&mut rng, c, config.prompt_jitter))
        .collect::<Result<_>>()?;
    let prototypes = PrototypeSet::new(Matrix::from_rows(&protos)?, config.temperature)?;

    let support = sample_domain(
        &mut rng_for(config.seed, STREAM_SUPPORT),
        &classes,
        Some(config.shots),
        0,
        config.sigma_src,
    )?;
    let support = augment(
        &mut rng_for(config.seed, STREAM_AUGMENT),
        &support,
        config.augmentations,
        config.augment_noise,
    )?;
    let source = sample_domain(
        &mut rng_for(config.seed, STREAM_SOURCE),
        &classes,
        None,
        config.test_n,
        config.sigma_src,
    )?;
    let target = sample_domain(
        &mut rng_for(config.seed, STREAM_TARGET),
        &drifted,
        None,
        config.test_n,
        config.sigma_tgt,
    )?;
    Ok(SynthBenchmark {
        support,
        source,
        target,
        prototypes,
    })
}

/// Augmented view batches for every row of `data`: row 0 of each batch is
/// the sample itself, the rest are `normalize(z + view_noise ξ)`.
///
/// `domain` selects an independent random stream.
pub fn synth_views(config: &SynthConfig, data: &Dataset, domain: u64) -> Result<Vec<ViewBatch>> {
    config.validate()?;
    let mut rng = rng_for(config.seed, STREAM_VIEWS + domain);
    data.features()
        .row_iter()
        .map(|z| {
            let mut rows = Vec::with_capacity(config.views);
            rows.push(z.to_vec());
            for _ in 1..config.views {
                rows.push(noisy(&mut rng, z, config.view_noise)?);
            }
            ViewBatch::new(Matrix::from_rows(&rows)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::l2_norm;

    fn small() -> SynthConfig {
        SynthConfig {
            class_count: 4,
            dim: 16,
            shots: 2,
            test_n: 40,
            views: 4,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&small()).unwrap();
        let b = synth_generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig { seed: 9, ..small() }).unwrap();
        assert_ne!(a.target, c.target);
    }

    #[test]
    fn shapes_and_norms() {
        let b = synth_generate(&small()).unwrap();
        assert_eq!(b.support.len(), 8 * small().augmentations);
        assert_eq!(b.source.len(), 40);
        assert_eq!(b.target.len(), 40);
        assert_eq!(b.prototypes.class_count(), 4);
        for row in b.target.features().row_iter() {
            assert!((l2_norm(row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_preserves_norm_and_angle() {
        let mut rng = rng_for(3, 0);
        let r = PlaneRotation::random(&mut rng, 8, 0.3).unwrap();
        let x = unit_gaussian(&mut rng, 8).unwrap();
        let y = r.apply(&x);
        assert!((l2_norm(&y) - 1.0).abs() < 1e-12);
        let u = r.apply(&r.u);
        assert!((dot(&u, &r.u) - libm::cos(0.3)).abs() < 1e-12);
    }

    #[test]
    fn views_start_with_original() {
        let cfg = small();
        let b = synth_generate(&cfg).unwrap();
        let views = synth_views(&cfg, &b.target, 1).unwrap();
        assert_eq!(views.len(), 40);
        assert_eq!(views[3].len(), 4);
        assert_eq!(views[3].original(), b.target.features().row(3));
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(synth_generate(&SynthConfig {
            class_count: 1,
            ..small()
        })
        .is_err());
    }
}
