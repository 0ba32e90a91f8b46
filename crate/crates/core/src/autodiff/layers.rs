//! Layer helpers built from graph primitives.
//!
//! Activations of convolutional layers are stored as `[batch*h*w, channels]`
//! matrices (NHWC flattened). A convolution is an im2col gather followed by
//! a matmul, so it inherits the gather/matmul gradients, including the
//! symbolic ones.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::autodiff::graph::{GatherMap, Graph, NodeId};
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad_h - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad_w - self.k_w) / self.stride + 1
    }

    /// Rows of the weight matrix: one per (ky, kx, in_channel).
    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    pub fn im2col_map(&self) -> Result<GatherMap> {
        if self.in_h + 2 * self.pad_h < self.k_h || self.in_w + 2 * self.pad_w < self.k_w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", self.k_h, self.k_w, self.in_h, self.in_w),
            ));
        }
        let (oh, ow) = (self.out_h(), self.out_w());
        let mut src = Vec::with_capacity(self.batch * oh * ow * self.patch_len());
        for b in 0..self.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ky in 0..self.k_h {
                        for kx in 0..self.k_w {
                            let y = (oy * self.stride + ky) as isize - self.pad_h as isize;
                            let x = (ox * self.stride + kx) as isize - self.pad_w as isize;
                            let inside = y >= 0 && x >= 0 && (y as usize) < self.in_h && (x as usize) < self.in_w;
                            for c in 0..self.in_c {
                                src.push(
                                    inside.then(|| {
                                        ((b * self.in_h + y as usize) * self.in_w + x as usize) * self.in_c + c
                                    }),
                                );
                            }
                        }
                    }
                }
            }
        }
        GatherMap::new(&[self.batch * self.in_h * self.in_w, self.in_c], &[self.batch * oh * ow, self.patch_len()], src)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum MapKey {
    Im2col(ConvGeometry),
    Upsample([usize; 7]),
}

/// Maps are rebuilt for every graph otherwise; a handful of shapes recur.
const MAP_CACHE_LIMIT: usize = 64;

thread_local! {
    static MAPS: RefCell<HashMap<MapKey, Rc<GatherMap>>> = RefCell::new(HashMap::new());
}

fn cached_map(key: MapKey, build: impl FnOnce() -> Result<GatherMap>) -> Result<Rc<GatherMap>> {
    if let Some(m) = MAPS.with(|c| c.borrow().get(&key).cloned()) {
        return Ok(m);
    }
    let map = Rc::new(build()?);
    MAPS.with(|c| {
        let mut c = c.borrow_mut();
        if c.len() >= MAP_CACHE_LIMIT {
            c.clear();
        }
        c.insert(key, map.clone());
    });
    Ok(map)
}

/// 2-D convolution; `weight` is `[k_h*k_w*in_c, out_c]`, `bias` is `[out_c]`.
pub fn conv2d(g: &mut Graph, input: NodeId, geom: &ConvGeometry, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    let map = cached_map(MapKey::Im2col(*geom), || geom.im2col_map())?;
    let cols = g.gather(input, map);
    let out = g.matmul(cols, weight);
    Ok(g.add_bias(out, bias))
}

pub fn dense(g: &mut Graph, input: NodeId, weight: NodeId, bias: NodeId) -> NodeId {
    let out = g.matmul(input, weight);
    g.add_bias(out, bias)
}

/// Nearest-neighbour upsampling by `factor`, cropped to `out_h x out_w`.
pub fn upsample_map(
    batch: usize,
    in_h: usize,
    in_w: usize,
    channels: usize,
    factor: usize,
    out_h: usize,
    out_w: usize,
) -> Result<GatherMap> {
    if out_h > in_h * factor || out_w > in_w * factor {
        return Err(Error::shape(
            "upsample",
            format!("{}x{} x{} cannot cover {}x{}", in_h, in_w, factor, out_h, out_w),
        ));
    }
    let mut src = Vec::with_capacity(batch * out_h * out_w * channels);
    for b in 0..batch {
        for y in 0..out_h {
            for x in 0..out_w {
                for c in 0..channels {
                    src.push(Some(((b * in_h + y / factor) * in_w + x / factor) * channels + c));
                }
            }
        }
    }
    GatherMap::new(&[batch * in_h * in_w, channels], &[batch * out_h * out_w, channels], src)
}

/// Nearest-neighbour upsampling node; see [`upsample_map`].
#[allow(clippy::too_many_arguments)]
pub fn upsample(
    g: &mut Graph,
    input: NodeId,
    batch: usize,
    in_h: usize,
    in_w: usize,
    channels: usize,
    factor: usize,
    out_h: usize,
    out_w: usize,
) -> Result<NodeId> {
    let key = MapKey::Upsample([batch, in_h, in_w, channels, factor, out_h, out_w]);
    let map = cached_map(key, || upsample_map(batch, in_h, in_w, channels, factor, out_h, out_w))?;
    Ok(g.gather(input, map))
}

/// He-uniform initialisation for a `[fan_in, fan_out]` weight matrix.
pub fn he_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng)
}
