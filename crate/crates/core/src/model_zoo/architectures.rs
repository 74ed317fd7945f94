//! Layer graphs for the four backbones, each ending in its original
//! classifier. A [`BackboneScale`] shrinks channel widths and block repeats
//! for desk-scale experiments while keeping the topology.

use serde::{Deserialize, Serialize};

use super::Architecture;
use crate::error::Result;
use crate::nn::{GraphBuilder, Network, NodeId, Padding};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneScale {
    /// Channel-width multiplier.
    pub width: f64,
    /// Block-repeat multiplier.
    pub depth: f64,
}

impl BackboneScale {
    pub const FULL: BackboneScale = BackboneScale { width: 1.0, depth: 1.0 };

    /// Small enough to train on a few hundred images on one CPU core.
    pub const DESK: BackboneScale = BackboneScale {
        width: 0.125,
        depth: 0.34,
    };

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }

    /// Short tag used in cache file names.
    pub fn tag(&self) -> String {
        if self.is_full() {
            "full".to_string()
        } else {
            format!("w{}d{}", self.width, self.depth)
        }
    }

    fn channels(&self, c: usize) -> usize {
        ((c as f64 * self.width).round() as usize).max(4)
    }

    fn repeats(&self, r: usize) -> usize {
        ((r as f64 * self.depth).ceil() as usize).max(1)
    }
}

impl Default for BackboneScale {
    fn default() -> Self {
        Self::FULL
    }
}

/// A built network plus the index of the first node of its original
/// classification layer.
pub struct Blueprint {
    pub network: Network,
    pub head_start: NodeId,
}

pub fn build(arch: Architecture, scale: BackboneScale, input: usize, classes: usize) -> Result<Blueprint> {
    let mut b = GraphBuilder::new(3, input, input);
    let features = match arch {
        Architecture::EfficientNetB3 => efficientnet_b3(&mut b, scale),
        Architecture::InceptionV3 => inception_v3(&mut b, scale),
        Architecture::ResNet50 => resnet50(&mut b, scale),
        Architecture::Vgg16 => vgg16(&mut b, scale),
    };
    let head_start = b.len();
    b.dense("predictions", features, classes);
    Ok(Blueprint {
        network: b.finish()?,
        head_start,
    })
}

// ---------------------------------------------------------------- VGG16

fn vgg16(b: &mut GraphBuilder, s: BackboneScale) -> NodeId {
    const BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut x = b.input();
    for (bi, &(width, convs)) in BLOCKS.iter().enumerate() {
        for ci in 0..convs {
            let name = format!("block{}_conv{}", bi + 1, ci + 1);
            x = b.conv(&name, x, s.channels(width), (3, 3), 1, Padding::Same, true);
            x = b.relu(&format!("{name}_relu"), x);
        }
        x = b.max_pool(&format!("block{}_pool", bi + 1), x, 2, 2, Padding::Valid);
    }
    x = b.adaptive_avg_pool("avgpool", x, (7, 7));
    x = b.flatten("flatten", x);
    let fc = s.channels(4096);
    x = b.dense("fc1", x, fc);
    x = b.relu("fc1_relu", x);
    x = b.dropout("fc1_drop", x, 0.5);
    x = b.dense("fc2", x, fc);
    x = b.relu("fc2_relu", x);
    b.dropout("fc2_drop", x, 0.5)
}

// ---------------------------------------------------------------- ResNet50

fn resnet50(b: &mut GraphBuilder, s: BackboneScale) -> NodeId {
    const EPS: f32 = 1e-5;
    let x = b.input();
    let x = b.conv("conv1", x, s.channels(64), (7, 7), 2, Padding::Explicit(3), false);
    let x = b.batch_norm("bn1", x, EPS, true);
    let x = b.relu("relu1", x);
    let mut x = b.max_pool("maxpool", x, 3, 2, Padding::Explicit(1));

    const STAGES: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    for (si, &(planes, blocks, stride)) in STAGES.iter().enumerate() {
        let planes = s.channels(planes);
        let out = planes * 4;
        for bi in 0..s.repeats(blocks) {
            let p = format!("layer{}.{}", si + 1, bi);
            let st = if bi == 0 { stride } else { 1 };
            let mut y = b.conv(&format!("{p}.conv1"), x, planes, (1, 1), 1, Padding::Valid, false);
            y = b.batch_norm(&format!("{p}.bn1"), y, EPS, true);
            y = b.relu(&format!("{p}.relu1"), y);
            y = b.conv(&format!("{p}.conv2"), y, planes, (3, 3), st, Padding::Explicit(1), false);
            y = b.batch_norm(&format!("{p}.bn2"), y, EPS, true);
            y = b.relu(&format!("{p}.relu2"), y);
            y = b.conv(&format!("{p}.conv3"), y, out, (1, 1), 1, Padding::Valid, false);
            y = b.batch_norm(&format!("{p}.bn3"), y, EPS, true);
            let shortcut = if st != 1 || b.channels(x) != out {
                let d = b.conv(&format!("{p}.downsample.conv"), x, out, (1, 1), st, Padding::Valid, false);
                b.batch_norm(&format!("{p}.downsample.bn"), d, EPS, true)
            } else {
                x
            };
            let sum = b.add(&format!("{p}.add"), &[y, shortcut]);
            x = b.relu(&format!("{p}.relu3"), sum);
        }
    }
    b.global_avg_pool("avgpool", x)
}

// ---------------------------------------------------------------- InceptionV3

struct Inception<'a> {
    b: &'a mut GraphBuilder,
    s: BackboneScale,
    count: usize,
}

impl Inception<'_> {
    /// Convolution without bias, batch norm without scale, ReLU.
    fn conv_bn(&mut self, x: NodeId, filters: usize, k: (usize, usize), stride: usize, padding: Padding) -> NodeId {
        self.count += 1;
        let n = self.count;
        let f = self.s.channels(filters);
        let y = self.b.conv(&format!("conv2d_{n}"), x, f, k, stride, padding, false);
        let y = self.b.batch_norm(&format!("batch_normalization_{n}"), y, 1e-3, false);
        self.b.relu(&format!("activation_{n}"), y)
    }

    fn same(&mut self, x: NodeId, filters: usize, k: (usize, usize)) -> NodeId {
        self.conv_bn(x, filters, k, 1, Padding::Same)
    }

    fn avg_branch(&mut self, name: &str, x: NodeId, filters: usize) -> NodeId {
        let p = self.b.avg_pool(name, x, 3, 1, Padding::Same);
        self.same(p, filters, (1, 1))
    }
}

fn inception_v3(b: &mut GraphBuilder, s: BackboneScale) -> NodeId {
    let mut m = Inception { b, s, count: 0 };
    let x = m.b.input();
    let x = m.conv_bn(x, 32, (3, 3), 2, Padding::Valid);
    let x = m.conv_bn(x, 32, (3, 3), 1, Padding::Valid);
    let x = m.same(x, 64, (3, 3));
    let x = m.b.max_pool("stem_pool1", x, 3, 2, Padding::Valid);
    let x = m.conv_bn(x, 80, (1, 1), 1, Padding::Valid);
    let x = m.conv_bn(x, 192, (3, 3), 1, Padding::Valid);
    let mut x = m.b.max_pool("stem_pool2", x, 3, 2, Padding::Valid);

    for (i, pool_filters) in [32, 64, 64].into_iter().enumerate() {
        let b1 = m.same(x, 64, (1, 1));
        let b5 = m.same(x, 48, (1, 1));
        let b5 = m.same(b5, 64, (5, 5));
        let bd = m.same(x, 64, (1, 1));
        let bd = m.same(bd, 96, (3, 3));
        let bd = m.same(bd, 96, (3, 3));
        let bp = m.avg_branch(&format!("mixed{i}_pool"), x, pool_filters);
        x = m.b.concat(&format!("mixed{i}"), &[b1, b5, bd, bp]);
    }

    let b3 = m.conv_bn(x, 384, (3, 3), 2, Padding::Valid);
    let bd = m.same(x, 64, (1, 1));
    let bd = m.same(bd, 96, (3, 3));
    let bd = m.conv_bn(bd, 96, (3, 3), 2, Padding::Valid);
    let bp = m.b.max_pool("mixed3_pool", x, 3, 2, Padding::Valid);
    x = m.b.concat("mixed3", &[b3, bd, bp]);

    for (i, c) in [128, 160, 160, 192].into_iter().enumerate() {
        let b1 = m.same(x, 192, (1, 1));
        let b7 = m.same(x, c, (1, 1));
        let b7 = m.same(b7, c, (1, 7));
        let b7 = m.same(b7, 192, (7, 1));
        let bd = m.same(x, c, (1, 1));
        let bd = m.same(bd, c, (7, 1));
        let bd = m.same(bd, c, (1, 7));
        let bd = m.same(bd, c, (7, 1));
        let bd = m.same(bd, 192, (1, 7));
        let bp = m.avg_branch(&format!("mixed{}_pool", i + 4), x, 192);
        x = m.b.concat(&format!("mixed{}", i + 4), &[b1, b7, bd, bp]);
    }

    let b3 = m.same(x, 192, (1, 1));
    let b3 = m.conv_bn(b3, 320, (3, 3), 2, Padding::Valid);
    let b7 = m.same(x, 192, (1, 1));
    let b7 = m.same(b7, 192, (1, 7));
    let b7 = m.same(b7, 192, (7, 1));
    let b7 = m.conv_bn(b7, 192, (3, 3), 2, Padding::Valid);
    let bp = m.b.max_pool("mixed8_pool", x, 3, 2, Padding::Valid);
    x = m.b.concat("mixed8", &[b3, b7, bp]);

    for i in [9, 10] {
        let b1 = m.same(x, 320, (1, 1));
        let b3 = m.same(x, 384, (1, 1));
        let b3a = m.same(b3, 384, (1, 3));
        let b3b = m.same(b3, 384, (3, 1));
        let b3 = m.b.concat(&format!("mixed{i}_3x3"), &[b3a, b3b]);
        let bd = m.same(x, 448, (1, 1));
        let bd = m.same(bd, 384, (3, 3));
        let bda = m.same(bd, 384, (1, 3));
        let bdb = m.same(bd, 384, (3, 1));
        let bd = m.b.concat(&format!("mixed{i}_dbl"), &[bda, bdb]);
        let bp = m.avg_branch(&format!("mixed{i}_pool"), x, 192);
        x = m.b.concat(&format!("mixed{i}"), &[b1, b3, bd, bp]);
    }
    m.b.global_avg_pool("avg_pool", x)
}

// ---------------------------------------------------------------- EfficientNet-B3

struct MbConv {
    kernel: usize,
    repeats: usize,
    filters_in: usize,
    filters_out: usize,
    expand: usize,
    stride: usize,
}

const MBCONV_STAGES: [MbConv; 7] = [
    MbConv { kernel: 3, repeats: 1, filters_in: 32, filters_out: 16, expand: 1, stride: 1 },
    MbConv { kernel: 3, repeats: 2, filters_in: 16, filters_out: 24, expand: 6, stride: 2 },
    MbConv { kernel: 5, repeats: 2, filters_in: 24, filters_out: 40, expand: 6, stride: 2 },
    MbConv { kernel: 3, repeats: 3, filters_in: 40, filters_out: 80, expand: 6, stride: 2 },
    MbConv { kernel: 5, repeats: 3, filters_in: 80, filters_out: 112, expand: 6, stride: 1 },
    MbConv { kernel: 5, repeats: 4, filters_in: 112, filters_out: 192, expand: 6, stride: 2 },
    MbConv { kernel: 3, repeats: 1, filters_in: 192, filters_out: 320, expand: 6, stride: 1 },
];

/// Compound-scaling coefficients of the B3 variant.
const B3_WIDTH: f64 = 1.2;
const B3_DEPTH: f64 = 1.4;
const DIVISOR: usize = 8;

fn round_filters(filters: usize, width: f64) -> usize {
    let f = filters as f64 * width;
    let mut rounded = DIVISOR.max((f + DIVISOR as f64 / 2.0) as usize / DIVISOR * DIVISOR);
    if (rounded as f64) < 0.9 * f {
        rounded += DIVISOR;
    }
    rounded
}

fn round_repeats(repeats: usize, depth: f64) -> usize {
    (repeats as f64 * depth).ceil() as usize
}

fn efficientnet_b3(b: &mut GraphBuilder, s: BackboneScale) -> NodeId {
    const EPS: f32 = 1e-3;
    const DROP_CONNECT: f32 = 0.2;
    let width = B3_WIDTH * s.width;
    let depth = B3_DEPTH * s.depth;

    let x = b.input();
    let x = b.conv("stem_conv", x, round_filters(32, width), (3, 3), 2, Padding::Same, false);
    let x = b.batch_norm("stem_bn", x, EPS, true);
    let mut x = b.swish("stem_activation", x);

    let total: usize = MBCONV_STAGES.iter().map(|st| round_repeats(st.repeats, depth)).sum();
    let mut index = 0usize;
    for (si, st) in MBCONV_STAGES.iter().enumerate() {
        let out = round_filters(st.filters_out, width);
        for j in 0..round_repeats(st.repeats, depth) {
            let p = format!("block{}{}", si + 1, (b'a' + j as u8) as char);
            let stride = if j == 0 { st.stride } else { 1 };
            let filters_in = b.channels(x);
            debug_assert!(j > 0 || filters_in == round_filters(st.filters_in, width));
            let filters = filters_in * st.expand;
            let mut y = x;
            if st.expand != 1 {
                y = b.conv(&format!("{p}_expand_conv"), y, filters, (1, 1), 1, Padding::Valid, false);
                y = b.batch_norm(&format!("{p}_expand_bn"), y, EPS, true);
                y = b.swish(&format!("{p}_expand_activation"), y);
            }
            y = b.depthwise(&format!("{p}_dwconv"), y, st.kernel, stride, Padding::Same, false);
            y = b.batch_norm(&format!("{p}_bn"), y, EPS, true);
            y = b.swish(&format!("{p}_activation"), y);

            let squeezed = (filters_in / 4).max(1);
            let se = b.global_avg_pool(&format!("{p}_se_squeeze"), y);
            let se = b.conv(&format!("{p}_se_reduce"), se, squeezed, (1, 1), 1, Padding::Valid, true);
            let se = b.swish(&format!("{p}_se_reduce_activation"), se);
            let se = b.conv(&format!("{p}_se_expand"), se, filters, (1, 1), 1, Padding::Valid, true);
            let se = b.sigmoid(&format!("{p}_se_gate"), se);
            y = b.channel_scale(&format!("{p}_se_excite"), y, se);

            y = b.conv(&format!("{p}_project_conv"), y, out, (1, 1), 1, Padding::Valid, false);
            y = b.batch_norm(&format!("{p}_project_bn"), y, EPS, true);
            if stride == 1 && filters_in == out {
                let rate = DROP_CONNECT * index as f32 / total as f32;
                y = b.drop_path(&format!("{p}_drop"), y, rate);
                y = b.add(&format!("{p}_add"), &[y, x]);
            }
            x = y;
            index += 1;
        }
    }
    let x = b.conv("top_conv", x, round_filters(1280, width), (1, 1), 1, Padding::Valid, false);
    let x = b.batch_norm("top_bn", x, EPS, true);
    let x = b.swish("top_activation", x);
    let x = b.global_avg_pool("avg_pool", x);
    b.dropout("top_dropout", x, 0.3)
}
