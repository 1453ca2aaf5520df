use paintword::generators::{GeneratorInfo, GeneratorModel, InteriorBase, InteriorShape, RegionLatent};
use paintword::tensor::{ImageTensor, LatentVector, Tensor3};
use paintword::{Error, Result};

/// A generator whose latent *is* its image: `z` of length `3 * r * r` is
/// reshaped to a `3 x r x r` interior map and clamped into pixel range.
///
/// Useful for exercising adapters and the wire format without real
/// weights.
pub struct EchoGenerator {
    info: GeneratorInfo,
}

impl EchoGenerator {
    pub fn new(resolution: usize) -> Self {
        let r = resolution.max(1);
        Self {
            info: GeneratorInfo {
                latent_dim: 3 * r * r,
                image_shape: (3, r, r),
                interior: InteriorShape::FeatureMap {
                    channels: 3,
                    height: r,
                    width: r,
                },
            },
        }
    }
}

impl GeneratorModel for EchoGenerator {
    fn info(&self) -> &GeneratorInfo {
        &self.info
    }

    fn extract_latent(&self, z: &LatentVector) -> Result<RegionLatent> {
        self.info.check_latent(z)?;
        let (c, h, w) = self.info.image_shape;
        Ok(RegionLatent::FeatureMap(Tensor3::from_vec(
            c,
            h,
            w,
            z.as_slice().to_vec(),
        )?))
    }

    fn compose(&self, base: &InteriorBase) -> Result<ImageTensor> {
        match base {
            InteriorBase::FeatureMap(t) if t.shape() == self.info.image_shape => Ok(ImageTensor::clamped(t.clone())),
            InteriorBase::FeatureMap(t) => Err(Error::dims(format!(
                "echo interior must be {:?}, got {:?}",
                self.info.image_shape,
                t.shape()
            ))),
            InteriorBase::Style(_) => Err(Error::dims("echo generator has no style interior")),
        }
    }
}
