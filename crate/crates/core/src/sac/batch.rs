use rand_distr::{Distribution, StandardNormal};

use super::config::Augmentation;
use crate::autodiff::{Float, Tensor};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::geometry::{augment_with, pixel_shift_augment};
use crate::nn::InputShape;
use crate::rng::Rng;

/// Encoder input shape of a (stacked) observation.
pub fn input_shape(obs: &Observation) -> InputShape {
    match obs {
        Observation::Cloud(c) => InputShape::Points {
            points: c.len(),
            channels: c.channels(),
        },
        Observation::Image(i) => InputShape::Image {
            channels: i.channels,
            height: i.height,
            width: i.width,
        },
    }
}

/// Batches observations into an encoder input, applying `aug` independently
/// per sample. Randomness comes from `rng` only when `aug` needs it.
pub fn obs_tensor<T: Float>(obs: &[&Observation], input: InputShape, aug: Augmentation, rng: &mut Rng) -> Result<Tensor<T>> {
    let mut data: Vec<T> = Vec::with_capacity(obs.len() * input.numel());
    for o in obs {
        if input_shape(o) != input {
            return Err(Error::dim(format!(
                "observation of shape {:?} in a batch of {input:?}",
                input_shape(o)
            )));
        }
        match (o, aug) {
            (Observation::Cloud(c), Augmentation::Points { kind, magnitude }) => {
                data.extend(augment_with(c, kind, magnitude, rng)?.rows::<T>());
            }
            (Observation::Cloud(c), Augmentation::Identity) => data.extend(c.rows::<T>()),
            (Observation::Image(i), Augmentation::Identity | Augmentation::PixelShift { .. }) => i.extend_into(&mut data),
            (o, aug) => {
                return Err(Error::Config(format!(
                    "augmentation {aug} does not apply to {} observations",
                    o.modality_name()
                )))
            }
        }
    }
    let shape = input.batch_shape(obs.len());
    if let (Augmentation::PixelShift { max_shift }, InputShape::Image { channels, height, width }) = (aug, input) {
        data = pixel_shift_augment(&data, [obs.len(), channels, height, width], max_shift, rng)?;
    }
    Tensor::new(&shape, data)
}

/// `n` standard-normal draws.
pub fn normal_noise<T: Float>(n: usize, rng: &mut Rng) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z)
        })
        .collect()
}
