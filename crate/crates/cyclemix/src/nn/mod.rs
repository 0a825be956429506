//! Minimal channel-last network building blocks on top of candle.

mod conv;
mod fused;
mod layers;
mod params;

pub use conv::{conv2d_nhwc, upsample2_nhwc};
pub use layers::{avg_pool_global, instance_norm, max_pool2, BatchNorm, Conv, Linear};
pub use params::ParamStore;

use candle_core::{Device, Tensor};
use cyclemix_core::raster::CHANNELS;
use cyclemix_core::Raster;

use crate::error::{Error, Result};

/// Stacks equally sized rasters into a `(B, H, W, 3)` tensor.
pub fn rasters_to_tensor(images: &[&Raster]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Training("empty image batch".into()))?;
    let (h, w) = first.shape();
    let mut data = Vec::with_capacity(images.len() * h * w * CHANNELS);
    for img in images {
        first.ensure_same_shape(img)?;
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), h, w, CHANNELS), &Device::Cpu)?)
}

/// Splits a `(B, H, W, 3)` tensor back into rasters.
pub fn tensor_to_rasters(t: &Tensor) -> Result<Vec<Raster>> {
    let (b, h, w, c) = t.dims4()?;
    if c != CHANNELS {
        return Err(Error::Training(format!("expected {CHANNELS} channels, got {c}")));
    }
    let data = t.flatten_all()?.to_vec1::<f32>()?;
    data.chunks_exact(h * w * c).take(b).map(|chunk| Ok(Raster::from_vec(h, w, chunk.to_vec())?)).collect()
}
