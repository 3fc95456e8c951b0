//! Standard and desk-scale topologies.

use crate::error::Result;
use crate::graph::{Architecture, LayerKind, LayerSpec, ModelGraph, INPUT, PROJECTION_TAG};

/// Appends layers to a chain, tracking the most recent layer id.
#[derive(Clone, Debug)]
pub struct NetBuilder {
    layers: Vec<LayerSpec>,
    head: String,
}

impl Default for NetBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl NetBuilder {
    pub fn new() -> Self {
        NetBuilder {
            layers: Vec::new(),
            head: INPUT.to_string(),
        }
    }

    /// Id of the latest layer (or the network input).
    pub fn head(&self) -> &str {
        &self.head
    }

    /// Continues the chain from `id` instead of the latest layer.
    pub fn from(&mut self, id: &str) -> &mut Self {
        self.head = id.to_string();
        self
    }

    pub fn push(&mut self, spec: LayerSpec) -> &mut Self {
        self.head = spec.id.clone();
        self.layers.push(spec);
        self
    }

    fn chain(&mut self, id: &str, kind: LayerKind) -> &mut Self {
        let head = self.head.clone();
        self.push(LayerSpec::new(id, kind, &[&head]))
    }

    pub fn conv(&mut self, id: &str, filters: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        self.chain(
            id,
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                pad,
                bias: true,
            },
        )
    }

    /// Convolution without a bias term (followed by bn_affine in ResNets).
    pub fn conv_nobias(&mut self, id: &str, filters: usize, kernel: usize, stride: usize, pad: usize) -> &mut Self {
        self.chain(
            id,
            LayerKind::Conv {
                filters,
                kernel,
                stride,
                pad,
                bias: false,
            },
        )
    }

    pub fn relu(&mut self, id: &str) -> &mut Self {
        self.chain(id, LayerKind::Relu)
    }

    pub fn bn(&mut self, id: &str) -> &mut Self {
        self.chain(id, LayerKind::BnAffine)
    }

    pub fn maxpool(&mut self, id: &str, window: usize, stride: usize) -> &mut Self {
        self.chain(id, LayerKind::Maxpool { window, stride, pad: 0 })
    }

    pub fn gap(&mut self, id: &str) -> &mut Self {
        self.chain(id, LayerKind::Gap)
    }

    pub fn fc(&mut self, id: &str, outputs: usize) -> &mut Self {
        self.chain(id, LayerKind::Fc { outputs })
    }

    pub fn softmax(&mut self, id: &str) -> &mut Self {
        self.chain(id, LayerKind::Softmax)
    }

    pub fn add(&mut self, id: &str, a: &str, b: &str) -> &mut Self {
        self.push(LayerSpec::new(id, LayerKind::AddJunction, &[a, b]))
    }

    pub fn build(&self, name: &str, input_shape: [usize; 3], classes: usize) -> Result<Architecture> {
        Architecture::new(name, input_shape, classes, self.layers.clone())
    }
}

/// The thirteen VGG-16 conv layer ids, in order.
pub const VGG16_CONVS: [&str; 13] = [
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1", "conv4_2",
    "conv4_3", "conv5_1", "conv5_2", "conv5_3",
];

fn vgg16_features(b: &mut NetBuilder) {
    let groups: [(usize, usize); 5] = [(1, 64), (2, 128), (3, 256), (4, 512), (5, 512)];
    let mut convs = VGG16_CONVS.iter();
    for (g, width) in groups {
        let reps = if g <= 2 { 2 } else { 3 };
        for _ in 0..reps {
            let id = convs.next().expect("13 convs");
            b.conv(id, width, 3, 1, 1).relu(&id.replace("conv", "relu"));
        }
        b.maxpool(&format!("pool{g}"), 2, 2);
    }
}

/// VGG-16 at 224×224 with its three fully connected layers.
pub fn vgg16(classes: usize) -> Result<Architecture> {
    let mut b = NetBuilder::new();
    vgg16_features(&mut b);
    b.fc("fc6", 4096)
        .relu("relu6")
        .fc("fc7", 4096)
        .relu("relu7")
        .fc("fc8", classes)
        .softmax("prob");
    b.build("vgg16", [3, 224, 224], classes)
}

/// VGG-16 with the fully connected stack replaced by global average pooling
/// and a single classifier layer.
pub fn vgg16_gap(classes: usize) -> Result<Architecture> {
    let mut b = NetBuilder::new();
    vgg16_features(&mut b);
    b.gap("gap").fc("fc8", classes).softmax("prob");
    b.build("vgg16_gap", [3, 224, 224], classes)
}

/// Appends one bottleneck block (1×1 → 3×3 → 1×1 plus shortcut). The stride
/// sits on the first 1×1 convolution and on the projection, as in the
/// original Caffe ResNet-50.
pub fn bottleneck(b: &mut NetBuilder, name: &str, width: usize, out: usize, stride: usize, project: bool) {
    let input = b.head().to_string();
    let shortcut = if project {
        b.from(&input)
            .push(
                LayerSpec::new(
                    format!("res{name}_branch1"),
                    LayerKind::Conv {
                        filters: out,
                        kernel: 1,
                        stride,
                        pad: 0,
                        bias: false,
                    },
                    &[&input],
                )
                .tagged(PROJECTION_TAG),
            )
            .bn(&format!("bn{name}_branch1"));
        b.head().to_string()
    } else {
        input.clone()
    };
    b.from(&input)
        .conv_nobias(&format!("res{name}_branch2a"), width, 1, stride, 0)
        .bn(&format!("bn{name}_branch2a"))
        .relu(&format!("res{name}_branch2a_relu"))
        .conv_nobias(&format!("res{name}_branch2b"), width, 3, 1, 1)
        .bn(&format!("bn{name}_branch2b"))
        .relu(&format!("res{name}_branch2b_relu"))
        .conv_nobias(&format!("res{name}_branch2c"), out, 1, 1, 0)
        .bn(&format!("bn{name}_branch2c"));
    let branch = b.head().to_string();
    b.add(&format!("res{name}"), &shortcut, &branch)
        .relu(&format!("res{name}_relu"));
}

pub fn resnet50(classes: usize) -> Result<Architecture> {
    let mut b = NetBuilder::new();
    b.conv_nobias("conv1", 64, 7, 2, 3).bn("bn_conv1").relu("conv1_relu");
    b.push(LayerSpec::new(
        "pool1",
        LayerKind::Maxpool {
            window: 3,
            stride: 2,
            pad: 1,
        },
        &["conv1_relu"],
    ));
    let stages: [(usize, usize, usize); 4] = [(2, 64, 3), (3, 128, 4), (4, 256, 6), (5, 512, 3)];
    for (stage, width, blocks) in stages {
        for blk in 0..blocks {
            let name = format!("{stage}{}", (b'a' + blk as u8) as char);
            let stride = if blk == 0 && stage > 2 { 2 } else { 1 };
            bottleneck(&mut b, &name, width, width * 4, stride, blk == 0);
        }
    }
    b.gap("pool5").fc("fc1000", classes).softmax("prob");
    b.build("resnet50", [3, 224, 224], classes)
}

pub fn build_vgg16(classes: usize, seed: u64) -> Result<ModelGraph> {
    ModelGraph::init(vgg16(classes)?, seed)
}

pub fn build_vgg16_gap(classes: usize, seed: u64) -> Result<ModelGraph> {
    ModelGraph::init(vgg16_gap(classes)?, seed)
}

pub fn build_resnet50(classes: usize, seed: u64) -> Result<ModelGraph> {
    ModelGraph::init(resnet50(classes)?, seed)
}

/// Desk-scale plain chain: three 3×3 conv/ReLU stages (the first two pooled),
/// global average pooling and a linear classifier.
pub fn toy_chain(input_shape: [usize; 3], widths: [usize; 3], classes: usize) -> Result<Architecture> {
    let mut b = NetBuilder::new();
    b.conv("conv1", widths[0], 3, 1, 1)
        .relu("relu1")
        .maxpool("pool1", 2, 2)
        .conv("conv2", widths[1], 3, 1, 1)
        .relu("relu2")
        .maxpool("pool2", 2, 2)
        .conv("conv3", widths[2], 3, 1, 1)
        .relu("relu3")
        .gap("gap")
        .fc("fc", classes)
        .softmax("prob");
    b.build("toy_chain", input_shape, classes)
}

/// Desk-scale residual network: a stem and two bottleneck blocks, the second
/// with a strided projection shortcut.
pub fn toy_resnet(input_shape: [usize; 3], classes: usize) -> Result<Architecture> {
    let mut b = NetBuilder::new();
    b.conv_nobias("stem", 8, 3, 1, 1).bn("bn_stem").relu("stem_relu");
    bottleneck(&mut b, "2a", 4, 8, 1, false);
    bottleneck(&mut b, "3a", 6, 16, 2, true);
    b.gap("gap").fc("fc", classes).softmax("prob");
    b.build("toy_resnet", input_shape, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn vgg_output_and_feature_shapes() {
        let a = vgg16(1000).unwrap();
        let s = a.infer_shapes().unwrap();
        let pool5 = a.index_of("pool5").unwrap();
        assert_eq!(s[pool5], Shape::new(1, 512, 7, 7));
        assert_eq!(*s.last().unwrap(), Shape::new(1, 1000, 1, 1));
    }

    #[test]
    fn resnet_final_feature_map() {
        let a = resnet50(1000).unwrap();
        let s = a.infer_shapes().unwrap();
        let last_block = a.index_of("res5c_relu").unwrap();
        assert_eq!(s[last_block], Shape::new(1, 2048, 7, 7));
        let blocks = a
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::AddJunction))
            .count();
        assert_eq!(blocks, 16);
    }

    #[test]
    fn toy_nets_validate() {
        toy_chain([3, 16, 16], [8, 16, 16], 4).unwrap();
        toy_resnet([3, 8, 8], 3).unwrap();
    }
}
