//! Few-shot adapter families over cached embeddings.
//!
//! Every family maps `(features, prototypes)` to an N×K logit matrix and
//! exposes an analytic backward pass from `dL/dlogits` to its trainable
//! buffers, which is all the trainer in [`train`] needs.

mod loss;
mod train;

pub use loss::{ce_loss_and_grad, loss_and_grad, LossMode};
pub use train::{loss_and_param_grads, mean_violation, train_adapter, History, TrainConfig};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Dataset;
use crate::error::{mismatch, Error, Result};
use crate::matrix::{dot, l2_norm, Matrix};
use crate::zeroshot::{zs_logits, PrototypeSet};

/// Adapter family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Linear probe initialized from the zero-shot prototypes.
    LinearProbe,
    /// Residual bottleneck MLP on the visual embedding.
    ClipAdapter,
    /// Learned residual on the text prototypes.
    TaskRes,
    /// Key-value cache over the support set, keys fine-tuned.
    TipAdapter,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::LinearProbe,
        Method::ClipAdapter,
        Method::TaskRes,
        Method::TipAdapter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LinearProbe => "lp",
            Method::ClipAdapter => "clip-adapter",
            Method::TaskRes => "taskres",
            Method::TipAdapter => "tip-f",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown adapter method `{s}`")))
    }
}

/// Family-specific hyperparameters that are fixed during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterHyper {
    pub clip_reduction: usize,
    pub clip_blend: f64,
    pub taskres_scale: f64,
    pub tip_blend: f64,
    pub tip_sharpness: f64,
    /// Consecutive support rows averaged into one cache key (the augmented
    /// copies of one shot).
    pub tip_cache_group: usize,
}

impl Default for AdapterHyper {
    fn default() -> Self {
        Self {
            clip_reduction: 4,
            clip_blend: 0.2,
            taskres_scale: 0.5,
            tip_blend: 1.0,
            tip_sharpness: 5.5,
            tip_cache_group: 1,
        }
    }
}

/// Mean (renormalized) feature of each run of `group` support rows, with
/// the run's label.
fn cache_entries(support: &Dataset, group: usize) -> Result<(Matrix, Vec<usize>)> {
    if group == 0 || !support.len().is_multiple_of(group) {
        return Err(Error::Config(format!(
            "cache group {group} does not divide {} support rows",
            support.len()
        )));
    }
    if group == 1 {
        return Ok((support.features().clone(), support.labels().to_vec()));
    }
    let d = support.dim();
    let n = support.len() / group;
    let mut keys = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for g in 0..n {
        let rows = g * group..(g + 1) * group;
        let label = support.labels()[rows.start];
        if support.labels()[rows.clone()].iter().any(|&y| y != label) {
            return Err(Error::Config(format!(
                "support rows {}..{} mix labels; cache group {group} does not match the layout",
                rows.start, rows.end
            )));
        }
        let key = keys.row_mut(g);
        for r in rows {
            key.iter_mut()
                .zip(support.features().row(r))
                .for_each(|(k, v)| *k += v);
        }
        crate::matrix::normalize_in_place(key)?;
        labels.push(label);
    }
    Ok((keys, labels))
}

/// Trained (or initial) adapter state.
#[derive(Debug, Clone, PartialEq)]
pub enum AdapterParams {
    LinearProbe {
        /// K×d, one weight row per class.
        weights: Matrix,
    },
    ClipAdapter {
        /// (d/r)×d
        down: Matrix,
        down_bias: Vec<f64>,
        /// d×(d/r)
        up: Matrix,
        up_bias: Vec<f64>,
        blend: f64,
    },
    TaskRes {
        /// K×d
        residual: Matrix,
        scale: f64,
    },
    TipAdapter {
        /// S'×d support features
        cache_keys: Matrix,
        /// S'×K one-hot labels
        cache_values: Matrix,
        sharpness: f64,
        blend: f64,
    },
}

impl AdapterParams {
    /// Initial parameters for `method`. Linear probe and TaskRes start at the
    /// zero-shot solution; the cache adapter is built from `support`.
    pub fn init(
        method: Method,
        support: &Dataset,
        protos: &PrototypeSet,
        hyper: &AdapterHyper,
        seed: u64,
    ) -> Result<Self> {
        let d = protos.dim();
        let k = protos.class_count();
        if support.dim() != d {
            return Err(mismatch(d, support.dim(), "support vs prototype dimension"));
        }
        if support.class_count() != k {
            return Err(mismatch(
                k,
                support.class_count(),
                "support vs prototype classes",
            ));
        }
        Ok(match method {
            Method::LinearProbe => AdapterParams::LinearProbe {
                weights: protos.prototypes().clone(),
            },
            Method::ClipAdapter => {
                if hyper.clip_reduction == 0 || hyper.clip_reduction > d {
                    return Err(Error::Config(format!(
                        "reduction {} invalid for dimension {d}",
                        hyper.clip_reduction
                    )));
                }
                let hidden = d / hyper.clip_reduction;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
                    let bound = 1.0 / libm::sqrt(fan_in as f64);
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                let down = Matrix::new(hidden, d, uniform(hidden * d, d))?;
                let down_bias = uniform(hidden, d);
                let up = Matrix::new(d, hidden, uniform(d * hidden, hidden))?;
                let up_bias = uniform(d, hidden);
                AdapterParams::ClipAdapter {
                    down,
                    down_bias,
                    up,
                    up_bias,
                    blend: hyper.clip_blend,
                }
            }
            Method::TaskRes => AdapterParams::TaskRes {
                residual: Matrix::zeros(k, d),
                scale: hyper.taskres_scale,
            },
            Method::TipAdapter => {
                let (keys, labels) = cache_entries(support, hyper.tip_cache_group)?;
                let mut values = Matrix::zeros(labels.len(), k);
                for (s, &label) in labels.iter().enumerate() {
                    values.set(s, label, 1.0);
                }
                AdapterParams::TipAdapter {
                    cache_keys: keys,
                    cache_values: values,
                    sharpness: hyper.tip_sharpness,
                    blend: hyper.tip_blend,
                }
            }
        })
    }

    pub fn method(&self) -> Method {
        match self {
            AdapterParams::LinearProbe { .. } => Method::LinearProbe,
            AdapterParams::ClipAdapter { .. } => Method::ClipAdapter,
            AdapterParams::TaskRes { .. } => Method::TaskRes,
            AdapterParams::TipAdapter { .. } => Method::TipAdapter,
        }
    }

    /// Mutable views of the trainable buffers, in a fixed order.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            AdapterParams::LinearProbe { weights } => vec![weights.as_mut_slice()],
            AdapterParams::ClipAdapter {
                down,
                down_bias,
                up,
                up_bias,
                ..
            } => vec![
                down.as_mut_slice(),
                down_bias.as_mut_slice(),
                up.as_mut_slice(),
                up_bias.as_mut_slice(),
            ],
            AdapterParams::TaskRes { residual, .. } => vec![residual.as_mut_slice()],
            AdapterParams::TipAdapter { cache_keys, .. } => vec![cache_keys.as_mut_slice()],
        }
    }

    pub fn trainable_shapes(&mut self) -> Vec<usize> {
        self.trainable_mut().iter().map(|s| s.len()).collect()
    }

    pub fn is_finite(&self) -> bool {
        match self {
            AdapterParams::LinearProbe { weights } => weights.is_finite(),
            AdapterParams::ClipAdapter {
                down,
                down_bias,
                up,
                up_bias,
                blend,
            } => {
                down.is_finite()
                    && up.is_finite()
                    && down_bias.iter().chain(up_bias).all(|v| v.is_finite())
                    && blend.is_finite()
            }
            AdapterParams::TaskRes { residual, scale } => residual.is_finite() && scale.is_finite(),
            AdapterParams::TipAdapter {
                cache_keys,
                cache_values,
                sharpness,
                blend,
            } => {
                cache_keys.is_finite()
                    && cache_values.is_finite()
                    && sharpness.is_finite()
                    && blend.is_finite()
            }
        }
    }

    fn check_shapes(&self, features: &Matrix, protos: &PrototypeSet) -> Result<()> {
        let d = protos.dim();
        if features.cols() != d {
            return Err(mismatch(
                d,
                features.cols(),
                "feature vs prototype dimension",
            ));
        }
        self.check_against(protos)
    }

    /// Checks that every parameter block fits the class count and dimension
    /// of `protos`.
    pub fn check_against(&self, protos: &PrototypeSet) -> Result<()> {
        let d = protos.dim();
        let k = protos.class_count();
        match self {
            AdapterParams::LinearProbe { weights } => {
                if weights.rows() != k || weights.cols() != d {
                    return Err(mismatch(
                        k * d,
                        weights.rows() * weights.cols(),
                        "probe weights",
                    ));
                }
            }
            AdapterParams::ClipAdapter {
                down,
                down_bias,
                up,
                up_bias,
                ..
            } => {
                let h = down.rows();
                if down.cols() != d || up.rows() != d || up.cols() != h {
                    return Err(mismatch(d, down.cols(), "adapter layer shapes"));
                }
                if down_bias.len() != h || up_bias.len() != d {
                    return Err(mismatch(h, down_bias.len(), "adapter bias shapes"));
                }
            }
            AdapterParams::TaskRes { residual, .. } => {
                if residual.rows() != k || residual.cols() != d {
                    return Err(mismatch(
                        k * d,
                        residual.rows() * residual.cols(),
                        "residual",
                    ));
                }
            }
            AdapterParams::TipAdapter {
                cache_keys,
                cache_values,
                ..
            } => {
                if cache_keys.cols() != d {
                    return Err(mismatch(d, cache_keys.cols(), "cache key dimension"));
                }
                if cache_values.rows() != cache_keys.rows() || cache_values.cols() != k {
                    return Err(mismatch(k, cache_values.cols(), "cache value shape"));
                }
            }
        }
        Ok(())
    }

    /// Adapter logits for every feature row.
    pub fn logits(&self, features: &Matrix, protos: &PrototypeSet) -> Result<Matrix> {
        Ok(self.forward(features, protos)?.logits)
    }

    pub(crate) fn forward(&self, features: &Matrix, protos: &PrototypeSet) -> Result<Forward> {
        self.check_shapes(features, protos)?;
        let inv_tau = 1.0 / protos.temperature();
        match self {
            AdapterParams::LinearProbe { weights } => {
                let mut logits = features.matmul_transposed(weights)?;
                logits.scale(inv_tau);
                Ok(Forward {
                    logits,
                    cache: Cache::None,
                })
            }
            AdapterParams::ClipAdapter {
                down,
                down_bias,
                up,
                up_bias,
                blend,
            } => {
                let mut pre = features.matmul_transposed(down)?;
                for i in 0..pre.rows() {
                    pre.row_mut(i)
                        .iter_mut()
                        .zip(down_bias)
                        .for_each(|(v, b)| *v += b);
                }
                let mut act = pre.clone();
                act.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                let mut mixed = act.matmul_transposed(up)?;
                let mut norms = Vec::with_capacity(features.rows());
                for i in 0..mixed.rows() {
                    let z = features.row(i);
                    let row = mixed.row_mut(i);
                    for ((m, b), zv) in row.iter_mut().zip(up_bias).zip(z) {
                        *m = blend * (*m + b) + (1.0 - blend) * zv;
                    }
                    let n = l2_norm(row);
                    if !(n > 0.0) || !n.is_finite() {
                        return Err(Error::Degenerate(format!(
                            "adapted embedding {i} has norm {n}"
                        )));
                    }
                    row.iter_mut().for_each(|v| *v /= n);
                    norms.push(n);
                }
                let mut logits = mixed.matmul_transposed(protos.prototypes())?;
                logits.scale(inv_tau);
                Ok(Forward {
                    logits,
                    cache: Cache::ClipAdapter {
                        pre,
                        act,
                        unit: mixed,
                        norms,
                    },
                })
            }
            AdapterParams::TaskRes { residual, scale } => {
                let (unit, norms) = shifted_prototypes(protos.prototypes(), residual, *scale)?;
                let mut logits = features.matmul_transposed(&unit)?;
                logits.scale(inv_tau);
                Ok(Forward {
                    logits,
                    cache: Cache::TaskRes { unit, norms },
                })
            }
            AdapterParams::TipAdapter {
                cache_keys,
                cache_values,
                sharpness,
                blend,
            } => {
                let mut logits = zs_logits(features, protos)?;
                let mut affinity = features.matmul_transposed(cache_keys)?;
                affinity
                    .as_mut_slice()
                    .iter_mut()
                    .for_each(|a| *a = libm::exp(-sharpness * (1.0 - *a)));
                if *blend != 0.0 {
                    let cache_logits = affinity.matmul(cache_values)?;
                    logits
                        .as_mut_slice()
                        .iter_mut()
                        .zip(cache_logits.as_slice())
                        .for_each(|(l, c)| *l += blend * c);
                }
                Ok(Forward {
                    logits,
                    cache: Cache::TipAdapter { affinity },
                })
            }
        }
    }

    /// Gradients of the trainable buffers (same order as
    /// [`AdapterParams::trainable_mut`]) given `dL/dlogits`.
    pub(crate) fn backward(
        &self,
        features: &Matrix,
        protos: &PrototypeSet,
        fwd: &Forward,
        grad_logits: &Matrix,
    ) -> Result<Vec<Vec<f64>>> {
        let inv_tau = 1.0 / protos.temperature();
        match (self, &fwd.cache) {
            (AdapterParams::LinearProbe { .. }, _) => {
                let mut g = grad_logits.transpose_matmul(features)?;
                g.scale(inv_tau);
                Ok(vec![g.into_vec()])
            }
            (
                AdapterParams::ClipAdapter {
                    down, up, blend, ..
                },
                Cache::ClipAdapter {
                    pre,
                    act,
                    unit,
                    norms,
                },
            ) => {
                let d = features.cols();
                let h = down.rows();
                let mut g_down = Matrix::zeros(h, d);
                let mut g_down_bias = vec![0.0; h];
                let mut g_up = Matrix::zeros(d, h);
                let mut g_up_bias = vec![0.0; d];
                // dL/d(unit embedding) for all rows at once
                let mut g_unit = grad_logits.matmul(protos.prototypes())?;
                g_unit.scale(inv_tau);
                let mut g_mlp = vec![0.0; d];
                let mut g_act = vec![0.0; h];
                for i in 0..features.rows() {
                    let u = unit.row(i);
                    let gu = g_unit.row(i);
                    let radial = dot(u, gu);
                    for ((gm, &g), &uv) in g_mlp.iter_mut().zip(gu).zip(u) {
                        *gm = blend * (g - uv * radial) / norms[i];
                    }
                    let a = act.row(i);
                    for (j, &gm) in g_mlp.iter().enumerate() {
                        g_up_bias[j] += gm;
                        g_up.row_mut(j)
                            .iter_mut()
                            .zip(a)
                            .for_each(|(g, &av)| *g += gm * av);
                    }
                    g_act.iter_mut().for_each(|v| *v = 0.0);
                    for (j, &gm) in g_mlp.iter().enumerate() {
                        g_act
                            .iter_mut()
                            .zip(up.row(j))
                            .for_each(|(ga, &w)| *ga += gm * w);
                    }
                    let z = features.row(i);
                    for (hh, (&ga, &p)) in g_act.iter().zip(pre.row(i)).enumerate() {
                        if p <= 0.0 {
                            continue;
                        }
                        g_down_bias[hh] += ga;
                        g_down
                            .row_mut(hh)
                            .iter_mut()
                            .zip(z)
                            .for_each(|(g, &zv)| *g += ga * zv);
                    }
                }
                Ok(vec![
                    g_down.into_vec(),
                    g_down_bias,
                    g_up.into_vec(),
                    g_up_bias,
                ])
            }
            (AdapterParams::TaskRes { scale, .. }, Cache::TaskRes { unit, norms }) => {
                let mut g_unit = grad_logits.transpose_matmul(features)?;
                g_unit.scale(inv_tau);
                let mut g = Matrix::zeros(unit.rows(), unit.cols());
                for k in 0..unit.rows() {
                    let t = unit.row(k);
                    let gt = g_unit.row(k);
                    let radial = dot(t, gt);
                    for ((out, &gv), &tv) in g.row_mut(k).iter_mut().zip(gt).zip(t) {
                        *out = scale * (gv - tv * radial) / norms[k];
                    }
                }
                Ok(vec![g.into_vec()])
            }
            (
                AdapterParams::TipAdapter {
                    cache_values,
                    sharpness,
                    blend,
                    ..
                },
                Cache::TipAdapter { affinity },
            ) => {
                // dL/dA = α G Yᵀ, then dA_is/df_s = β A_is z_i
                let mut g_aff = grad_logits.matmul_transposed(cache_values)?;
                g_aff
                    .as_mut_slice()
                    .iter_mut()
                    .zip(affinity.as_slice())
                    .for_each(|(g, &a)| *g *= blend * sharpness * a);
                let g_keys = g_aff.transpose_matmul(features)?;
                Ok(vec![g_keys.into_vec()])
            }
            _ => Err(Error::InvalidInput(
                "forward cache does not match adapter".into(),
            )),
        }
    }
}

pub(crate) struct Forward {
    pub(crate) logits: Matrix,
    cache: Cache,
}

enum Cache {
    None,
    ClipAdapter {
        pre: Matrix,
        act: Matrix,
        unit: Matrix,
        norms: Vec<f64>,
    },
    TaskRes {
        unit: Matrix,
        norms: Vec<f64>,
    },
    TipAdapter {
        affinity: Matrix,
    },
}

/// `normalize(t_k + α r_k)` for every class, with the pre-normalization norms.
pub(crate) fn shifted_prototypes(
    protos: &Matrix,
    residual: &Matrix,
    scale: f64,
) -> Result<(Matrix, Vec<f64>)> {
    let mut unit = protos.clone();
    let mut norms = Vec::with_capacity(protos.rows());
    for k in 0..protos.rows() {
        let row = unit.row_mut(k);
        row.iter_mut()
            .zip(residual.row(k))
            .for_each(|(t, r)| *t += scale * r);
        let n = l2_norm(row);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate(format!(
                "shifted prototype {k} has norm {n}"
            )));
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

/// Free-function form of [`AdapterParams::logits`].
pub fn adapter_logits(
    params: &AdapterParams,
    features: &Matrix,
    protos: &PrototypeSet,
) -> Result<Matrix> {
    params.logits(features, protos)
}
