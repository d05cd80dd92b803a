use serde::{Deserialize, Serialize};

/// Kind and hyper-parameters of one graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Input {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Elu {
        alpha: f32,
    },
    Prelu {
        init_slope: f32,
    },
    Relu,
    Sigmoid,
    Dropout {
        rate: f32,
    },
    Upsample2x,
    MaxPool2,
    Concat,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "Input",
            LayerSpec::Conv { .. } => "Conv",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Elu { .. } => "ELU",
            LayerSpec::Prelu { .. } => "PReLU",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Sigmoid => "Sigmoid",
            LayerSpec::Dropout { .. } => "Dropout",
            LayerSpec::Upsample2x => "Upsample2x",
            LayerSpec::MaxPool2 => "MaxPool2",
            LayerSpec::Concat => "Concat",
        }
    }

}
