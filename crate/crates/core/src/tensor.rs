//! Pixel fields, masks and latent vectors.
//!
//! Images live in `[-1, 1]` internally. Image-resolution masks are strictly
//! binary; masks resampled to a feature resolution are soft, built by
//! fractional-area averaging.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense channel-major (`C x H x W`) array of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dims(format!(
                "{} values for shape {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    pub fn same_shape(&self, other: &Tensor3) -> bool {
        self.shape() == other.shape()
    }

    pub fn check_shape(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Tensor3 {
        debug_assert!(self.same_shape(other));
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Multiplies every channel by a single-channel spatial field.
    pub fn mul_plane(&self, field: &[f64]) -> Tensor3 {
        debug_assert_eq!(field.len(), self.plane());
        let plane = self.plane();
        let mut out = self.clone();
        for c in 0..self.channels {
            for (v, &m) in out.data[c * plane..(c + 1) * plane].iter_mut().zip(field) {
                *v *= m;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// An RGB image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor(Tensor3);

impl ImageTensor {
    /// Wraps a tensor, rejecting non-finite values. Values are not clamped.
    pub fn new(t: Tensor3) -> Result<Self> {
        if !t.is_finite() {
            return Err(Error::Format("image contains non-finite values".into()));
        }
        Ok(Self(t))
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self(Tensor3::zeros(channels, height, width))
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut t = Tensor3::zeros(3, height, width);
        let plane = t.plane();
        for (c, &v) in rgb.iter().enumerate() {
            t.data[c * plane..(c + 1) * plane].fill(v);
        }
        Self(t)
    }

    pub fn clamped(t: Tensor3) -> Self {
        Self(t.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) }))
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.0.data
    }

    pub fn check_mask(&self, m: &Mask) -> Result<()> {
        if self.height == m.height && self.width == m.width {
            Ok(())
        } else {
            Err(Error::dims(format!(
                "image {}x{} vs mask {}x{}",
                self.height, self.width, m.height, m.width
            )))
        }
    }

    /// Values as `f32`, the precision used on every wire and file format.
    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.0.data.iter().map(|&v| v as f32).collect()
    }
}

impl Deref for ImageTensor {
    type Target = Tensor3;
    fn deref(&self) -> &Tensor3 {
        &self.0
    }
}

/// Binary painted-region selection at image resolution.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::dims(format!("{} mask values for {height}x{width}", bits.len())));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self { height, width, bits }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| true)
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::from_fn(height, width, |_, _| false)
    }

    /// Axis-aligned rectangle `[y0, y0+h) x [x0, x0+w)`, clipped to the canvas.
    pub fn rect(height: usize, width: usize, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        Self::from_fn(height, width, |y, x| y >= y0 && y < y0 + h && x >= x0 && x < x0 + w)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Mask as a `0.0 / 1.0` field.
    pub fn values(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.bits.len().max(1) as f64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyMask)
        } else {
            Ok(())
        }
    }
}

/// Soft mask at a feature-map resolution, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl FeatureMask {
    /// A constant field. Real masks come from [`downsample_mask`]; this
    /// exists for degenerate-case construction.
    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            values: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }
}

/// Generator input vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Standard-normal draw rounded to `f32` precision, so the vector
    /// survives persistence and adapter transport bit-exactly.
    pub fn sample(dim: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self(
            (0..dim)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v as f32 as f64
                })
                .collect(),
        )
    }
}

/// Zeroes the components of `x` outside `m`, broadcasting over channels.
pub fn masked_project(x: &ImageTensor, m: &Mask) -> Result<ImageTensor> {
    x.check_mask(m)?;
    Ok(ImageTensor(x.mul_plane(&m.values())))
}

pub fn invert_mask(m: &Mask) -> Mask {
    Mask {
        height: m.height,
        width: m.width,
        bits: m.bits.iter().map(|b| !b).collect(),
    }
}

/// Area-averages `m` onto a `target_h x target_w` grid. When the sizes do
/// not divide evenly each output cell integrates the fractional source area
/// it covers.
pub fn downsample_mask(m: &Mask, target_h: usize, target_w: usize) -> Result<FeatureMask> {
    if target_h == 0 || target_w == 0 || target_h > m.height || target_w > m.width {
        return Err(Error::dims(format!(
            "cannot downsample {}x{} mask to {target_h}x{target_w}",
            m.height, m.width
        )));
    }
    let rows = area_weights(m.height, target_h);
    let cols = area_weights(m.width, target_w);
    let src = m.values();
    let mut values = vec![0.0; target_h * target_w];
    for (oy, row) in rows.iter().enumerate() {
        for (ox, col) in cols.iter().enumerate() {
            let mut acc = 0.0;
            for &(sy, wy) in row {
                for &(sx, wx) in col {
                    acc += wy * wx * src[sy * m.width + sx];
                }
            }
            values[oy * target_w + ox] = acc.clamp(0.0, 1.0);
        }
    }
    Ok(FeatureMask {
        height: target_h,
        width: target_w,
        values,
    })
}

/// For each of `dst` output cells, the `(source index, weight)` pairs whose
/// weights are the covered fraction of the cell.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        let data = (0..3 * h * w).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        ImageTensor::new(Tensor3::from_vec(3, h, w, data).unwrap()).unwrap()
    }

    #[test]
    fn project_identity_and_null() {
        let x = ramp(8, 8);
        assert_eq!(masked_project(&x, &Mask::full(8, 8)).unwrap(), x);
        let z = masked_project(&x, &Mask::empty(8, 8)).unwrap();
        assert!(z.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_single_pixel() {
        let x = ramp(8, 8);
        let m = Mask::from_fn(8, 8, |y, xx| y == 3 && xx == 5);
        let out = masked_project(&x, &m).unwrap();
        for c in 0..3 {
            for y in 0..8 {
                for xx in 0..8 {
                    let expect = if y == 3 && xx == 5 { x.at(c, y, xx) } else { 0.0 };
                    assert_eq!(out.at(c, y, xx), expect);
                }
            }
        }
    }

    #[test]
    fn project_rejects_mismatch() {
        let err = masked_project(&ramp(8, 8), &Mask::full(8, 4)).unwrap_err();
        assert_eq!(err.code(), "DIMENSION_MISMATCH");
    }

    #[test]
    fn invert_constant_masks() {
        assert_eq!(invert_mask(&Mask::full(4, 4)), Mask::empty(4, 4));
        assert_eq!(invert_mask(&Mask::empty(4, 4)), Mask::full(4, 4));
    }

    #[test]
    fn downsample_constant_and_half() {
        let fm = downsample_mask(&Mask::full(64, 64), 8, 8).unwrap();
        assert!(fm.values.iter().all(|&v| v == 1.0));

        let left = Mask::from_fn(64, 64, |_, x| x < 32);
        let fm = downsample_mask(&left, 8, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expect = if x < 4 { 1.0 } else { 0.0 };
                assert_eq!(fm.values[y * 8 + x], expect);
            }
        }
    }

    #[test]
    fn downsample_checkerboard_matches_brute_force() {
        let m = Mask::from_fn(64, 64, |y, x| (y + x) % 2 == 0);
        let fm = downsample_mask(&m, 32, 32).unwrap();
        // brute-force 2x2 block averages
        for oy in 0..32 {
            for ox in 0..32 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        if m.get(2 * oy + dy, 2 * ox + dx) {
                            s += 1.0;
                        }
                    }
                }
                assert_eq!(fm.values[oy * 32 + ox], s / 4.0);
                assert_eq!(fm.values[oy * 32 + ox], 0.5);
            }
        }
    }

    #[test]
    fn downsample_non_divisible_is_fractional() {
        // 3 source columns onto 2: the middle column is split evenly.
        let m = Mask::from_fn(1, 3, |_, x| x == 1);
        let fm = downsample_mask(&m, 1, 2).unwrap();
        assert!((fm.values[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((fm.values[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn downsample_rejects_upsampling() {
        let err = downsample_mask(&Mask::full(8, 8), 16, 8).unwrap_err();
        assert_eq!(err.code(), "DIMENSION_MISMATCH");
    }

    #[test]
    fn latent_sample_is_f32_exact() {
        let z = LatentVector::sample(32, 7);
        assert!(z.0.iter().all(|&v| v as f32 as f64 == v));
        assert_eq!(z, LatentVector::sample(32, 7));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = Mask> {
            proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Mask::from_bits(h, w, bits).unwrap())
        }

        proptest! {
            #[test]
            fn invert_is_involution(m in mask_strategy(6, 5)) {
                prop_assert_eq!(invert_mask(&invert_mask(&m)), m);
            }

            #[test]
            fn projection_is_idempotent_and_complementary(
                m in mask_strategy(8, 8),
                vals in proptest::collection::vec(-1.0f64..1.0, 192),
            ) {
                let x = ImageTensor::new(Tensor3::from_vec(3, 8, 8, vals).unwrap()).unwrap();
                let once = masked_project(&x, &m).unwrap();
                prop_assert_eq!(&masked_project(&once, &m).unwrap(), &once);
                let other = masked_project(&x, &invert_mask(&m)).unwrap();
                let sum = once.zip_map(&other, |a, b| a + b);
                prop_assert_eq!(&sum, x.tensor());
            }

            #[test]
            fn downsample_preserves_mean(m in mask_strategy(16, 16)) {
                let fm = downsample_mask(&m, 4, 4).unwrap();
                prop_assert!((fm.mean() - m.coverage()).abs() <= 1e-6);
                prop_assert!(fm.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
