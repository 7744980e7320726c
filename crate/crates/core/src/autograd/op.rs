use super::elementwise::{Binary, Unary};

/// A recorded operation plus whatever its backward pass needs beyond the
/// input and output values kept on the node.
pub(super) enum Op<T> {
    Leaf,
    Binary(Binary),
    AddScalar,
    MulScalar(T),
    Unary(Unary),
    Clamp {
        lo: T,
        hi: T,
    },
    Softmax {
        axis: usize,
    },
    Sum,
    SumAxis {
        axis: usize,
    },
    MaxAxis {
        argmax: Vec<usize>,
    },
    Reshape,
    Permute {
        perm: Vec<usize>,
    },
    Concat {
        axis: usize,
    },
    Narrow {
        axis: usize,
        start: usize,
    },
    Gather {
        index: Vec<usize>,
    },
    MatMul,
    Linear,
    LayerNorm {
        eps: T,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Conv2d {
        stride: usize,
        pad: usize,
        groups: usize,
    },
    MaxPool2d {
        argmax: Vec<usize>,
    },
    AvgPool2d {
        k: usize,
        stride: usize,
    },
    UpsampleBilinear {
        factor: usize,
    },
    UpsampleNearest {
        factor: usize,
    },
    HaarFwd,
    HaarInv,
    ReflectPadEnd {
        ph: usize,
        pw: usize,
    },
    GaussianBlur {
        kernel: Vec<T>,
    },
    SelectiveScan {
        states: Vec<T>,
    },
}

impl<T> Op<T> {
    pub(super) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary(b) => b.name(),
            Op::AddScalar => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Unary(u) => u.name(),
            Op::Clamp { .. } => "clamp",
            Op::Softmax { .. } => "softmax",
            Op::Sum => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::MaxAxis { .. } => "max_axis",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Gather { .. } => "gather",
            Op::MatMul => "matmul",
            Op::Linear => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::UpsampleBilinear { .. } => "upsample_bilinear",
            Op::UpsampleNearest { .. } => "upsample_nearest",
            Op::HaarFwd => "haar_forward",
            Op::HaarInv => "haar_inverse",
            Op::ReflectPadEnd { .. } => "reflect_pad",
            Op::GaussianBlur { .. } => "gaussian_blur",
            Op::SelectiveScan { .. } => "selective_scan",
        }
    }
}
