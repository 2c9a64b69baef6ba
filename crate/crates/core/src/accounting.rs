//! Parameter, FLOP and payload counts for the HRR codec and for a
//! convolutional bottleneck codec (BottleNet++), evaluated in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one cut layer and its training batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostInputs {
    pub batch: u64,
    pub dim: u64,
    pub ratio: u64,
    pub channels: u64,
    pub height: u64,
    pub width: u64,
    pub comp_height: u64,
    pub comp_width: u64,
    pub kernel: u64,
}

impl CostInputs {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.batch,
            self.dim,
            self.ratio,
            self.channels,
            self.height,
            self.width,
            self.comp_height,
            self.comp_width,
            self.kernel,
        ];
        if all.contains(&0) {
            return Err(Error::invalid("cost inputs must be positive"));
        }
        if self.dim != self.channels * self.height * self.width {
            return Err(Error::invalid(format!(
                "D = {} but C·H·W = {}",
                self.dim,
                self.channels * self.height * self.width
            )));
        }
        Ok(())
    }
}

/// The two split points used for the published comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Vgg16,
    Resnet50,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Vgg16, Preset::Resnet50];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Vgg16 => "vgg16",
            Preset::Resnet50 => "resnet50",
        }
    }

    /// `2×2` kernels, stride 2, batch 64. `D` follows from the HRR key counts
    /// (`R·D` parameters) rather than from a stated feature shape.
    pub fn inputs(self, ratio: u64) -> CostInputs {
        let channels = match self {
            Preset::Vgg16 => 512,
            Preset::Resnet50 => 1024,
        };
        CostInputs {
            batch: 64,
            dim: channels * 4,
            ratio,
            channels,
            height: 2,
            width: 2,
            comp_height: 1,
            comp_width: 1,
            kernel: 2,
        }
    }
}

pub fn c3sl_params(ratio: u64, dim: u64) -> u64 {
    ratio * dim
}

/// One circular convolution and one correlation per sample, `D²` each.
pub fn c3sl_flops(batch: u64, dim: u64) -> u64 {
    2 * batch * dim * dim
}

/// Compressed channel count `4C/R`, floored, and whether the floor was needed.
pub fn bottleneck_channels(channels: u64, ratio: u64) -> (u64, bool) {
    (4 * channels / ratio, (4 * channels) % ratio != 0)
}

/// Encoder conv `C → 4C/R` plus decoder conv `4C/R → C`, `k×k` kernels with bias.
pub fn bottlenet_params(channels: u64, kernel: u64, ratio: u64) -> u64 {
    let (mid, _) = bottleneck_channels(channels, ratio);
    let k2 = kernel * kernel;
    (channels * k2 + 1) * mid + (mid * k2 + 1) * channels
}

pub fn bottlenet_flops(inputs: &CostInputs) -> u64 {
    let CostInputs { batch, channels: c, kernel, ratio, height, width, comp_height, comp_width, .. } = *inputs;
    let (mid, _) = bottleneck_channels(c, ratio);
    let k2 = kernel * kernel;
    batch * (2 * c * k2 + 1) * mid * comp_height * comp_width + batch * (2 * mid * k2 + 1) * c * height * width
}

/// Feature-block bytes each way: `⌈B/R⌉·D·bytes_per_scalar`. Labels are not included.
pub fn comm_bytes(batch: u64, dim: u64, ratio: u64, bytes_per_scalar: u64) -> (u64, u64) {
    let block = batch.div_ceil(ratio) * dim * bytes_per_scalar;
    (block, block)
}

/// Label bytes that ride along with the forward features.
pub fn label_bytes(batch: u64) -> u64 {
    4 * batch
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    C3sl,
    Bottlenet,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::C3sl => "c3sl",
            Method::Bottlenet => "bottlenet",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub method: Method,
    pub model: String,
    pub ratio: u64,
    pub params: u64,
    pub flops: u64,
    pub forward_bytes: u64,
    pub backward_bytes: u64,
    pub label_bytes: u64,
    /// Set when `4C/R` is not an integer and was floored.
    pub floored: bool,
}

pub fn c3sl_report(model: &str, inputs: &CostInputs) -> Result<CostReport> {
    inputs.validate()?;
    let (fwd, bwd) = comm_bytes(inputs.batch, inputs.dim, inputs.ratio, 4);
    Ok(CostReport {
        method: Method::C3sl,
        model: model.to_string(),
        ratio: inputs.ratio,
        params: c3sl_params(inputs.ratio, inputs.dim),
        flops: c3sl_flops(inputs.batch, inputs.dim),
        forward_bytes: fwd,
        backward_bytes: bwd,
        label_bytes: label_bytes(inputs.batch),
        floored: false,
    })
}

/// The bottleneck codec sends `4C/R` channels at `H'×W'` per sample.
pub fn bottlenet_report(model: &str, inputs: &CostInputs) -> Result<CostReport> {
    inputs.validate()?;
    let (mid, floored) = bottleneck_channels(inputs.channels, inputs.ratio);
    let block = inputs.batch * mid * inputs.comp_height * inputs.comp_width * 4;
    Ok(CostReport {
        method: Method::Bottlenet,
        model: model.to_string(),
        ratio: inputs.ratio,
        params: bottlenet_params(inputs.channels, inputs.kernel, inputs.ratio),
        flops: bottlenet_flops(inputs),
        forward_bytes: block,
        backward_bytes: block,
        label_bytes: label_bytes(inputs.batch),
        floored,
    })
}

/// Both methods on both presets for every ratio, method-major.
pub fn grid(ratios: &[u64]) -> Result<Vec<CostReport>> {
    let mut out = Vec::new();
    for method in [Method::Bottlenet, Method::C3sl] {
        for &r in ratios {
            for preset in Preset::ALL {
                let inputs = preset.inputs(r);
                out.push(match method {
                    Method::C3sl => c3sl_report(preset.name(), &inputs)?,
                    Method::Bottlenet => bottlenet_report(preset.name(), &inputs)?,
                });
            }
        }
    }
    Ok(out)
}

/// Thousands to one decimal with digit grouping, e.g. `2,098.2`.
pub fn format_thousands(value: u64) -> String {
    let tenths = (value + 50) / 100;
    let whole = (tenths / 10).to_string();
    let mut grouped = String::new();
    for (i, ch) in whole.chars().enumerate() {
        if i > 0 && (whole.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(ch);
    }
    format!("{grouped}.{}", tenths % 10)
}

/// Billions to two decimals.
pub fn format_billions(value: u64) -> String {
    format!("{:.2}", value as f64 / 1e9)
}

pub fn format_table(reports: &[CostReport]) -> String {
    let mut out = format!(
        "{:<10} {:<9} {:>3} {:>12} {:>10} {:>12} {:>12}\n",
        "method", "model", "R", "params(1e3)", "flops(1e9)", "fwd_bytes", "bwd_bytes"
    );
    for r in reports {
        let method = r.method.name();
        let mark = if r.floored { "*" } else { "" };
        out.push_str(&format!(
            "{:<10} {:<9} {:>3} {:>12} {:>10} {:>12} {:>12}{mark}\n",
            method,
            r.model,
            r.ratio,
            format_thousands(r.params),
            format_billions(r.flops),
            r.forward_bytes,
            r.backward_bytes
        ));
    }
    out
}
