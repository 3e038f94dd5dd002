//! Exact communication and memory accounting per client per round.
//!
//! First-order (FedAvg-style) rounds exchange full weight vectors and keep
//! every layer output alive for the backward pass. Zeroth-order rounds
//! exchange only seeds and scalar loss differences, and a forward-only
//! evaluation needs just the largest single layer output at a time:
//!
//! - comm_full = P * 4 bytes
//! - comm_zo   = S * 4 bytes up, S * K * 4 bytes down
//! - mem_full  = (2P + BS * sum_l N_l*W_l*H_l) * 4 bytes
//! - mem_zo    = (2P + BS * max_l N_l*W_l*H_l) * 4 bytes
//!
//! Accounting is 32-bit (4 bytes per scalar, seeds included) even though the
//! simulator computes in 64-bit; a strict 64-bit mode is provided and
//! labeled.

use crate::nn::{LayerOutput, ModelDescriptor};

/// Scalar width used for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// 4 bytes per weight, seed, and loss scalar (the convention used for
    /// all headline numbers).
    Bits32,
    /// 8 bytes per scalar; labeled mode for strict 64-bit accounting.
    Bits64,
}

impl Accounting {
    pub fn bytes_per_scalar(self) -> u64 {
        match self {
            Accounting::Bits32 => 4,
            Accounting::Bits64 => 8,
        }
    }
}

/// Communication direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

/// Training method a cost entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FirstOrder,
    ZeroOrder,
}

/// Per-client, per-round cost summary.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CostReport {
    pub method: Method,
    pub round_index: usize,
    pub uplink_bytes_per_client: u64,
    pub downlink_bytes_per_client: u64,
    pub peak_memory_bytes_per_client: u64,
}

/// Full-weight exchange: P scalars.
pub fn comm_full(param_count: u64) -> u64 {
    comm_full_with(param_count, Accounting::Bits32)
}

pub fn comm_full_with(param_count: u64, acc: Accounting) -> u64 {
    param_count * acc.bytes_per_scalar()
}

/// Seed-exchange traffic: S scalars up per client, S*K scalars down
/// (the accumulated record list goes to every client).
pub fn comm_zo(seeds_per_client: u64, participants: u64, direction: Direction) -> u64 {
    comm_zo_with(seeds_per_client, participants, direction, Accounting::Bits32)
}

pub fn comm_zo_with(
    seeds_per_client: u64,
    participants: u64,
    direction: Direction,
    acc: Accounting,
) -> u64 {
    let scalars = match direction {
        Direction::Up => seeds_per_client,
        Direction::Down => seeds_per_client * participants,
    };
    scalars * acc.bytes_per_scalar()
}

/// Backprop memory: weights + gradient plus every layer output for the batch.
pub fn mem_full(desc: &ModelDescriptor, batch_size: u64) -> u64 {
    mem_full_with(desc, batch_size, Accounting::Bits32)
}

pub fn mem_full_with(desc: &ModelDescriptor, batch_size: u64, acc: Accounting) -> u64 {
    let activations: u64 = desc.layer_outputs.iter().map(LayerOutput::elements).sum();
    (2 * desc.param_count + batch_size * activations) * acc.bytes_per_scalar()
}

/// Forward-only memory: weights + perturbation plus the largest single
/// layer output for the batch.
pub fn mem_zo(desc: &ModelDescriptor, batch_size: u64) -> u64 {
    mem_zo_with(desc, batch_size, Accounting::Bits32)
}

pub fn mem_zo_with(desc: &ModelDescriptor, batch_size: u64, acc: Accounting) -> u64 {
    let largest = desc
        .layer_outputs
        .iter()
        .map(LayerOutput::elements)
        .max()
        .unwrap_or(0);
    (2 * desc.param_count + batch_size * largest) * acc.bytes_per_scalar()
}

/// Stem variant for the ResNet-18 reconstructions below.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resnet18Stem {
    /// 7x7 stride-2 convolution followed by 3x3 stride-2 max pooling
    /// (the stock ImageNet stem).
    ImageNet,
    /// 3x3 stride-1 convolution, no pooling (the common CIFAR adaptation).
    Cifar,
}

/// Builds a ResNet-18 descriptor at the given square input resolution by
/// walking the architecture: four stages of two basic blocks at widths
/// 64/128/256/512, counting the output of every operation applied during a
/// forward pass (convolutions, batch norms, each ReLU application, pooling,
/// and the classifier).
pub fn resnet18_descriptor(stem: Resnet18Stem, input_hw: u64, num_classes: u64) -> ModelDescriptor {
    let mut b = DescriptorBuilder::new(3, input_hw, input_hw);
    match stem {
        Resnet18Stem::ImageNet => {
            b.conv(64, 7, 2, 3);
            b.bn();
            b.relu();
            b.maxpool(3, 2, 1);
        }
        Resnet18Stem::Cifar => {
            b.conv(64, 3, 1, 1);
            b.bn();
            b.relu();
        }
    }
    for (stage, &width) in [64u64, 128, 256, 512].iter().enumerate() {
        let stride = if stage == 0 { 1 } else { 2 };
        b.basic_block(width, stride);
        b.basic_block(width, 1);
    }
    b.global_avg_pool();
    b.fc(num_classes);
    b.finish()
}

struct DescriptorBuilder {
    channels: u64,
    height: u64,
    width: u64,
    params: u64,
    outputs: Vec<LayerOutput>,
}

impl DescriptorBuilder {
    fn new(channels: u64, height: u64, width: u64) -> Self {
        Self { channels, height, width, params: 0, outputs: Vec::new() }
    }

    fn push_output(&mut self) {
        self.outputs.push(LayerOutput {
            maps: self.channels,
            width: self.width,
            height: self.height,
        });
    }

    /// Square convolution without bias (batch norm follows).
    fn conv(&mut self, out_channels: u64, kernel: u64, stride: u64, pad: u64) {
        self.params += out_channels * self.channels * kernel * kernel;
        self.height = (self.height + 2 * pad - kernel) / stride + 1;
        self.width = (self.width + 2 * pad - kernel) / stride + 1;
        self.channels = out_channels;
        self.push_output();
    }

    fn bn(&mut self) {
        self.params += 2 * self.channels;
        self.push_output();
    }

    fn relu(&mut self) {
        self.push_output();
    }

    fn maxpool(&mut self, kernel: u64, stride: u64, pad: u64) {
        self.height = (self.height + 2 * pad - kernel) / stride + 1;
        self.width = (self.width + 2 * pad - kernel) / stride + 1;
        self.push_output();
    }

    /// Basic residual block: conv-bn-relu-conv-bn (plus a 1x1 conv-bn
    /// projection when shape changes) and the post-addition ReLU.
    fn basic_block(&mut self, out_channels: u64, stride: u64) {
        let in_channels = self.channels;
        let needs_projection = stride != 1 || in_channels != out_channels;

        self.conv(out_channels, 3, stride, 1);
        self.bn();
        self.relu();
        self.conv(out_channels, 3, 1, 1);
        self.bn();

        if needs_projection {
            // Projection operates on the block input shape.
            self.params += out_channels * in_channels;
            self.push_output(); // projection conv output
            self.params += 2 * out_channels;
            self.push_output(); // projection bn output
        }

        self.relu(); // post-addition activation
    }

    fn global_avg_pool(&mut self) {
        self.height = 1;
        self.width = 1;
        self.push_output();
    }

    fn fc(&mut self, out_features: u64) {
        let in_features = self.channels * self.height * self.width;
        self.params += in_features * out_features + out_features;
        self.channels = out_features;
        self.height = 1;
        self.width = 1;
        self.push_output();
    }

    fn finish(self) -> ModelDescriptor {
        ModelDescriptor {
            param_count: self.params,
            layer_outputs: self.outputs,
        }
    }
}
