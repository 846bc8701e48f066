//! Mask head over multi-scale attention maps: split the flattened tokens into
//! three spatial maps, upsample them to stride 8, concatenate channelwise and
//! apply a 1×1 linear layer followed by a logistic squash.

use ndarray::{s, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::rng::XorShift64Star;
use crate::types::MultiScaleAttn;

/// `(H/8 × W/8 × h, H/16 × W/16 × h, H/32 × W/32 × h)`, each row-major.
pub fn split_attn(attn: &MultiScaleAttn) -> [Array3<f32>; 3] {
    let (bh, bw, heads) = (attn.base_height(), attn.base_width(), attn.heads());
    let mut offset = 0;
    std::array::from_fn(|level| {
        let (h, w) = MultiScaleAttn::scale_shape(bh, bw, level);
        let len = h * w * heads;
        let map = Array3::from_shape_vec((h, w, heads), attn.tokens()[offset..offset + len].to_vec())
            .expect("token count checked at construction");
        offset += len;
        map
    })
}

/// Inverse of [`split_attn`].
pub fn flatten_attn(maps: &[Array3<f32>; 3], base_height: usize, base_width: usize) -> Result<MultiScaleAttn> {
    let heads = maps[0].len_of(Axis(2));
    let mut tokens = Vec::with_capacity(maps.iter().map(|m| m.len()).sum());
    for (level, map) in maps.iter().enumerate() {
        let (h, w) = MultiScaleAttn::scale_shape(base_height, base_width, level);
        if map.dim() != (h, w, heads) {
            return Err(Error::Dimension(format!("scale {level} is {:?}, expected {:?}", map.dim(), (h, w, heads))));
        }
        tokens.extend(map.iter().copied());
    }
    MultiScaleAttn::new(heads, base_height, base_width, tokens)
}

/// Source coordinate and blend weights for one output index of a
/// half-pixel-centered, non-corner-aligned resize.
fn sample_coords(dst: usize, factor: usize, len: usize) -> (usize, usize, f32) {
    let src = ((dst as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, (src - i0 as f64) as f32)
}

/// Bilinear upsampling of an `H × W × C` map by an integer factor with
/// half-pixel centers and edge clamping.
pub fn upsample_bilinear(map: &Array3<f32>, factor: usize) -> Array3<f32> {
    let (h, w, c) = map.dim();
    if factor == 1 {
        return map.clone();
    }
    let mut out = Array3::zeros((h * factor, w * factor, c));
    for oy in 0..h * factor {
        let (y0, y1, fy) = sample_coords(oy, factor, h);
        for ox in 0..w * factor {
            let (x0, x1, fx) = sample_coords(ox, factor, w);
            for ch in 0..c {
                let top = map[[y0, x0, ch]] * (1.0 - fx) + map[[y0, x1, ch]] * fx;
                let bottom = map[[y1, x0, ch]] * (1.0 - fx) + map[[y1, x1, ch]] * fx;
                out[[oy, ox, ch]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Concatenates `(A_3, up×2(A_4), up×4(A_5))` along channels.
pub fn fuse_attn(maps: &[Array3<f32>; 3]) -> Result<Array3<f32>> {
    let (h, w, heads) = maps[0].dim();
    for (level, map) in maps.iter().enumerate().skip(1) {
        let f = 1 << level;
        if map.dim() != (h / f, w / f, heads) || h % f != 0 || w % f != 0 {
            return Err(Error::Dimension(format!(
                "scale {level} is {:?}, expected {:?}",
                map.dim(),
                (h / f, w / f, heads)
            )));
        }
    }
    let mut fused = Array3::zeros((h, w, 3 * heads));
    fused.slice_mut(s![.., .., 0..heads]).assign(&maps[0]);
    fused.slice_mut(s![.., .., heads..2 * heads]).assign(&upsample_bilinear(&maps[1], 2));
    fused.slice_mut(s![.., .., 2 * heads..]).assign(&upsample_bilinear(&maps[2], 4));
    Ok(fused)
}

/// 1×1 convolution from the fused channels to one mask logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuseHead {
    weights: Vec<f32>,
    bias: f32,
}

impl FuseHead {
    pub fn new(weights: Vec<f32>, bias: f32) -> Result<Self> {
        if weights.is_empty() || weights.len() % 3 != 0 {
            return Err(Error::Dimension(format!("head needs 3h weights, got {}", weights.len())));
        }
        Ok(Self { weights, bias })
    }

    /// Parses a `(3h + 1)`-vector laid out as weights then bias.
    pub fn from_vector(v: &[f32]) -> Result<Self> {
        let (bias, weights) = v.split_last().ok_or_else(|| Error::Dimension("empty head vector".into()))?;
        Self::new(weights.to_vec(), *bias)
    }

    pub fn to_vector(&self) -> Vec<f32> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    /// Deterministic weights in [-1, 1) for tests and demos.
    pub fn seeded(heads: usize, seed: u64) -> Self {
        let mut rng = XorShift64Star::new(seed);
        let weights = (0..3 * heads).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        Self { weights, bias: rng.uniform(-1.0, 1.0) as f32 }
    }

    pub fn heads(&self) -> usize {
        self.weights.len() / 3
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> f32 {
        self.bias
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + 1
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn predict_mask(fused: &Array3<f32>, head: &FuseHead) -> Result<Array2<f32>> {
    let (h, w, c) = fused.dim();
    if c != head.weights.len() {
        return Err(Error::Dimension(format!("fused map has {c} channels, head expects {}", head.weights.len())));
    }
    Ok(Array2::from_shape_fn((h, w), |(y, x)| {
        let logit: f64 = fused
            .slice(s![y, x, ..])
            .iter()
            .zip(&head.weights)
            .map(|(&a, &wt)| a as f64 * wt as f64)
            .sum::<f64>()
            + head.bias as f64;
        logistic(logit) as f32
    }))
}

/// Full head: split, fuse and predict one soft mask at stride 8.
pub fn mask_from_attention(attn: &MultiScaleAttn, head: &FuseHead) -> Result<Array2<f32>> {
    if head.heads() != attn.heads() {
        return Err(Error::Dimension(format!("head built for {} heads, attention has {}", head.heads(), attn.heads())));
    }
    predict_mask(&fuse_attn(&split_attn(attn))?, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn split_shapes_at_32() {
        let attn = MultiScaleAttn::new(1, 32, 32, (0..21).map(|i| i as f32).collect()).unwrap();
        let [a3, a4, a5] = split_attn(&attn);
        assert_eq!(a3.dim(), (4, 4, 1));
        assert_eq!(a4.dim(), (2, 2, 1));
        assert_eq!(a5.dim(), (1, 1, 1));
        assert_eq!(a4[[0, 0, 0]], 16.0);
        assert_eq!(a5[[0, 0, 0]], 20.0);
    }

    #[test]
    fn constant_tokens_stay_constant() {
        let attn = MultiScaleAttn::new(2, 64, 32, vec![0.25; MultiScaleAttn::token_count(64, 32) * 2]).unwrap();
        for m in split_attn(&attn) {
            assert!(m.iter().all(|&v| v == 0.25));
        }
        let maps = [
            Array3::from_elem((8, 8, 2), 1.5f32),
            Array3::from_elem((4, 4, 2), -2.0f32),
            Array3::from_elem((2, 2, 2), 0.75f32),
        ];
        let fused = fuse_attn(&maps).unwrap();
        assert_eq!(fused.dim(), (8, 8, 6));
        for ((_, _, c), &v) in fused.indexed_iter() {
            assert_eq!(v, [1.5, 1.5, -2.0, -2.0, 0.75, 0.75][c]);
        }
    }

    #[test]
    fn upsample_two_by_two() {
        let m = array![[1.0f32, 2.0], [3.0, 4.0]].insert_axis(Axis(2));
        let up = upsample_bilinear(&m, 2).remove_axis(Axis(2));
        let expected = array![
            [1.0f32, 1.25, 1.75, 2.0],
            [1.5, 1.75, 2.25, 2.5],
            [2.5, 2.75, 3.25, 3.5],
            [3.0, 3.25, 3.75, 4.0],
        ];
        assert_eq!(up, expected);
    }

    #[test]
    fn fuse_rejects_bad_shapes() {
        let maps = [Array3::zeros((4, 4, 1)), Array3::zeros((3, 2, 1)), Array3::zeros((1, 1, 1))];
        assert!(fuse_attn(&maps).is_err());
    }

    #[test]
    fn head_outputs() {
        let fused = Array3::from_elem((2, 3, 6), 0.7f32);
        let zero = FuseHead::new(vec![0.0; 6], 0.0).unwrap();
        assert!(predict_mask(&fused, &zero).unwrap().iter().all(|&v| v == 0.5));

        let mut w = vec![0.0; 6];
        w[4] = 1.0;
        let one_hot = FuseHead::new(w, 0.0).unwrap();
        let expected = (1.0 / (1.0 + (-0.7f64).exp())) as f32;
        let out = predict_mask(&fused, &one_hot).unwrap();
        assert_eq!(out.dim(), (2, 3));
        assert!(out.iter().all(|&v| (v - expected).abs() < 1e-7));

        assert!(predict_mask(&fused, &FuseHead::new(vec![0.0; 3], 0.0).unwrap()).is_err());
    }

    #[test]
    fn head_vector_round_trip() {
        let head = FuseHead::seeded(8, 3);
        assert_eq!(head.parameter_count(), 25);
        assert_eq!(FuseHead::from_vector(&head.to_vector()).unwrap(), head);
        assert_eq!(FuseHead::seeded(8, 3), head);
        assert!(FuseHead::from_vector(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn pipeline_at_64_with_eight_heads() {
        let n = MultiScaleAttn::token_count(64, 64) * 8;
        let mut rng = XorShift64Star::new(11);
        let attn = MultiScaleAttn::new(8, 64, 64, (0..n).map(|_| rng.next_f64() as f32).collect()).unwrap();
        let mask = mask_from_attention(&attn, &FuseHead::seeded(8, 5)).unwrap();
        assert_eq!(mask.dim(), (8, 8));
        assert!(mask.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    proptest! {
        #[test]
        fn split_flatten_round_trip(heads in 1usize..4, hm in 1usize..3, wm in 1usize..3, seed in any::<u64>()) {
            let (h, w) = (32 * hm, 32 * wm);
            let mut rng = XorShift64Star::new(seed);
            let n = MultiScaleAttn::token_count(h, w) * heads;
            let attn = MultiScaleAttn::new(heads, h, w, (0..n).map(|_| rng.next_f64() as f32).collect()).unwrap();
            let back = flatten_attn(&split_attn(&attn), h, w).unwrap();
            prop_assert_eq!(back, attn);
        }

        #[test]
        fn rescaled_input_and_weights_agree_at_threshold(scale in 0.25f32..4.0, seed in any::<u64>()) {
            let mut rng = XorShift64Star::new(seed);
            let fused = Array3::from_shape_fn((4, 4, 3), |_| rng.uniform(-2.0, 2.0) as f32);
            let head = FuseHead::new((0..3).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(), 0.0).unwrap();
            let scaled_in = fused.mapv(|v| v * scale);
            let scaled_head = FuseHead::new(head.weights().iter().map(|w| w / scale).collect(), 0.0).unwrap();
            let a = predict_mask(&fused, &head).unwrap();
            let b = predict_mask(&scaled_in, &scaled_head).unwrap();
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-5);
                // Logits within float noise of zero can land on either side.
                if (x - 0.5).abs() > 1e-5 {
                    prop_assert_eq!(*x > 0.5, *y > 0.5);
                }
            }
        }
    }
}
