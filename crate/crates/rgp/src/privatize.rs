//! Per-sample gradients on the carriers, joint clipping, Gaussian noise and
//! reconstruction of the weight gradient.

use crate::carriers::CarrierPair;
use crate::data::Dataset;
use crate::error::{Result, RgpError};
use crate::model::ToyModel;
use nalgebra::{DMatrix, DVectorView};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Gradients with respect to one layer's carriers: `∂L` (`d_out × r`) and
/// `∂R` (`r × d_in`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCarrierGrad {
    pub dl: DMatrix<f64>,
    pub dr: DMatrix<f64>,
}

/// Carrier gradients for every layer of one sample (or an aggregate).
#[derive(Debug, Clone, PartialEq)]
pub struct CarrierGradient {
    pub layers: Vec<LayerCarrierGrad>,
}

impl CarrierGradient {
    pub fn zeros(carriers: &[CarrierPair]) -> Self {
        let layers = carriers
            .iter()
            .map(|c| LayerCarrierGrad {
                dl: DMatrix::zeros(c.d_out(), c.rank()),
                dr: DMatrix::zeros(c.rank(), c.d_in()),
            })
            .collect();
        Self { layers }
    }

    pub fn norm_squared(&self) -> f64 {
        self.layers.iter().map(|g| g.dl.norm_squared() + g.dr.norm_squared()).sum()
    }

    /// Norm of the concatenation over all layers.
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    fn add_scaled(&mut self, other: &CarrierGradient, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.dl.zip_apply(&b.dl, |x, y| *x += scale * y);
            a.dr.zip_apply(&b.dr, |x, y| *x += scale * y);
        }
    }
}

/// `∂L = G·Rᵀ = δ·(R·a)ᵀ` and `∂R = Lᵀ·G = (Lᵀ·δ)·aᵀ` for one sample, where
/// `G = δ·aᵀ` is never formed.
pub fn carrier_gradient(
    model: &ToyModel,
    x: DVectorView<'_, f64>,
    label: usize,
    carriers: &[CarrierPair],
) -> Result<CarrierGradient> {
    if carriers.len() != model.layers().len() {
        return Err(RgpError::ShapeMismatch {
            context: "carriers per layer",
            expected: (model.layers().len(), 1),
            found: (carriers.len(), 1),
        });
    }
    for (c, w) in carriers.iter().zip(model.layers()) {
        if (c.d_out(), c.d_in()) != w.shape() {
            return Err(RgpError::ShapeMismatch { context: "carrier pair", expected: w.shape(), found: (c.d_out(), c.d_in()) });
        }
    }
    let forward = model.forward(x);
    let deltas = model.backward(&forward, label);
    let layers = deltas
        .iter()
        .zip(&forward.inputs)
        .zip(carriers)
        .map(|((delta, a), c)| LayerCarrierGrad {
            dl: delta * (&c.r * a).transpose(),
            dr: (c.l.transpose() * delta) * a.transpose(),
        })
        .collect();
    Ok(CarrierGradient { layers })
}

/// Carrier gradients for each index of `batch`, in batch order.
pub fn per_sample_carrier_gradients(
    model: &ToyModel,
    data: &Dataset,
    batch: &[usize],
    carriers: &[CarrierPair],
) -> Result<Vec<CarrierGradient>> {
    batch.iter().map(|&i| carrier_gradient(model, data.sample(i), data.label(i), carriers)).collect()
}

/// Sum of clipped per-sample gradients plus `N(0, C²σ²)` noise per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyAggregate {
    pub gradient: CarrierGradient,
    /// Samples whose norm exceeded `C`.
    pub clipped: usize,
    pub samples: usize,
}

impl NoisyAggregate {
    pub fn clip_fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.clipped as f64 / self.samples as f64
        }
    }
}

/// Scales `g` to norm at most `clip`; returns whether it was shrunk.
pub fn clip_in_place(g: &mut CarrierGradient, clip: f64) -> bool {
    let norm = g.norm();
    if norm > clip {
        let s = clip / norm;
        for l in &mut g.layers {
            l.dl *= s;
            l.dr *= s;
        }
        true
    } else {
        false
    }
}

/// Clips each sample's concatenated carrier gradient to norm `clip`, sums in
/// index order and adds Gaussian noise drawn from a generator seeded with
/// `seed`, coordinates visited layer by layer, `∂L` before `∂R`, column-major.
/// With `sigma == 0` no noise is drawn.
pub fn clip_and_noise(
    per_sample: &[CarrierGradient],
    carriers: &[CarrierPair],
    clip: f64,
    sigma: f64,
    seed: u64,
) -> Result<NoisyAggregate> {
    if !(clip > 0.0) || !(sigma >= 0.0) {
        return Err(RgpError::InvalidConfig(format!("clip norm {clip} must be positive and sigma {sigma} non-negative")));
    }
    let mut total = CarrierGradient::zeros(carriers);
    let mut clipped = 0;
    for g in per_sample {
        if g.layers.len() != total.layers.len()
            || g.layers.iter().zip(&total.layers).any(|(a, b)| a.dl.shape() != b.dl.shape() || a.dr.shape() != b.dr.shape())
        {
            return Err(RgpError::ShapeMismatch {
                context: "per-sample gradient",
                expected: (total.layers.len(), 1),
                found: (g.layers.len(), 1),
            });
        }
        let norm = g.norm();
        let scale = if norm > clip { clip / norm } else { 1.0 };
        if norm > clip {
            clipped += 1;
        }
        total.add_scaled(g, scale);
    }
    if sigma > 0.0 {
        let std = clip * sigma;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut total.layers {
            for v in l.dl.iter_mut().chain(l.dr.iter_mut()) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += std * z;
            }
        }
    }
    Ok(NoisyAggregate { gradient: total, clipped, samples: per_sample.len() })
}

/// `(∂̃L)·R + L·(∂̃R) − L·Lᵀ·(∂̃L)·R`.
pub fn reconstruct_weight_grad(carriers: &CarrierPair, dl: &DMatrix<f64>, dr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let expected_dl = (carriers.d_out(), carriers.rank());
    let expected_dr = (carriers.rank(), carriers.d_in());
    if dl.shape() != expected_dl {
        return Err(RgpError::ShapeMismatch { context: "noisy dL", expected: expected_dl, found: dl.shape() });
    }
    if dr.shape() != expected_dr {
        return Err(RgpError::ShapeMismatch { context: "noisy dR", expected: expected_dr, found: dr.shape() });
    }
    let dl_r = dl * &carriers.r;
    let correction = &carriers.l * (carriers.l.transpose() * &dl_r);
    Ok(dl_r + &carriers.l * dr - correction)
}
