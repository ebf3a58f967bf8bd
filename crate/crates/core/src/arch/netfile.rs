//! Network description files.
//!
//! The format is TOML with a fixed set of keys:
//!
//! ```toml
//! precision = 4            # weight bits: 4, 6 or 8
//! timesteps = 20
//! overflow = "wrap"        # optional: "wrap" (default) or "saturate"
//!
//! [input]
//! channels = 2
//! h = 64
//! w = 64
//!
//! [neuron]
//! model = "lif"            # "if" or "lif"
//! reset = "soft"           # "hard" or "soft"
//! threshold = 12
//! leak = 1                 # optional, default 0; must be 0 for IF
//!
//! [[layer]]
//! type = "conv"
//! out_channels = 16
//! in_channels = 2          # optional, checked against the previous layer
//! kernel = 3               # optional, default 3 (or kernel_h / kernel_w)
//! stride = 1               # optional, default 1
//! padding = 1              # optional, default (kernel - 1) / 2
//!
//! [[layer]]
//! type = "maxpool"         # kernel / stride default to 2
//!
//! [[layer]]
//! type = "fc"
//! out_features = 11
//! in_features = 64         # optional, checked against the flattened input
//!
//! [layer.neuron]           # optional per-layer override, same keys as [neuron]
//! ```
//!
//! Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{
    ConfigError, LayerKind, LayerSpec, NetworkSpec, NeuronModel, NeuronSpec, PrecisionMode, Reset,
};
use crate::fixed::Overflow;

const DEFAULT_KERNEL: usize = 3;
const DEFAULT_POOL: usize = 2;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    precision: u32,
    timesteps: usize,
    #[serde(default)]
    overflow: Overflow,
    input: RawInput,
    neuron: RawNeuron,
    #[serde(default)]
    layer: Vec<RawLayer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    channels: usize,
    h: usize,
    w: usize,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct RawNeuron {
    model: NeuronModel,
    reset: Reset,
    threshold: i32,
    #[serde(default)]
    leak: i32,
}

impl From<RawNeuron> for NeuronSpec {
    fn from(r: RawNeuron) -> Self {
        NeuronSpec {
            model: r.model,
            reset: r.reset,
            threshold: r.threshold,
            leak: r.leak,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    #[serde(rename = "type")]
    kind: LayerKind,
    out_channels: Option<usize>,
    in_channels: Option<usize>,
    out_features: Option<usize>,
    in_features: Option<usize>,
    kernel: Option<usize>,
    kernel_h: Option<usize>,
    kernel_w: Option<usize>,
    stride: Option<usize>,
    padding: Option<usize>,
    neuron: Option<RawNeuron>,
}

fn field_error(index: usize, field: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Validation(format!("layer[{index}].{field}: {message}"))
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, column)
}

/// Parse and validate a network description.
pub fn parse_network(text: &str) -> Result<NetworkSpec, ConfigError> {
    let raw: RawNetwork = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let precision = PrecisionMode::new(raw.precision)?;
    let mut layers = Vec::with_capacity(raw.layer.len());
    let (mut c, mut h, mut w) = (raw.input.channels, raw.input.h, raw.input.w);
    for (i, l) in raw.layer.iter().enumerate() {
        let layer = resolve_layer(i, l, c, h, w)?;
        layer
            .validate()
            .map_err(|e| ConfigError::Validation(format!("layer[{i}]: {e}")))?;
        (c, h, w) = layer.output_shape();
        layers.push(layer);
    }
    let net = NetworkSpec {
        input_channels: raw.input.channels,
        input_h: raw.input.h,
        input_w: raw.input.w,
        timesteps: raw.timesteps,
        precision,
        neuron: raw.neuron.into(),
        overflow: raw.overflow,
        layers,
    };
    net.validate()?;
    Ok(net)
}

fn resolve_layer(
    i: usize,
    l: &RawLayer,
    c: usize,
    h: usize,
    w: usize,
) -> Result<LayerSpec, ConfigError> {
    let reject = |present: bool, field: &str| -> Result<(), ConfigError> {
        if present {
            Err(field_error(i, field, format!("not allowed on {:?} layers", l.kind)))
        } else {
            Ok(())
        }
    };
    if l.kernel.is_some() && (l.kernel_h.is_some() || l.kernel_w.is_some()) {
        return Err(field_error(i, "kernel", "use either kernel or kernel_h/kernel_w"));
    }
    let mut spec = match l.kind {
        LayerKind::Conv => {
            reject(l.out_features.is_some(), "out_features")?;
            reject(l.in_features.is_some(), "in_features")?;
            let out = l
                .out_channels
                .ok_or_else(|| field_error(i, "out_channels", "required for conv"))?;
            if let Some(ic) = l.in_channels {
                if ic != c {
                    return Err(field_error(
                        i,
                        "in_channels",
                        format!("declared {ic} but the previous layer produces {c}"),
                    ));
                }
            }
            let kh = l.kernel_h.or(l.kernel).unwrap_or(DEFAULT_KERNEL);
            let kw = l.kernel_w.or(l.kernel).unwrap_or(DEFAULT_KERNEL);
            let padding = l.padding.unwrap_or((kh.max(kw).max(1) - 1) / 2);
            LayerSpec {
                kind: LayerKind::Conv,
                in_channels: c,
                out_channels: out,
                kernel_h: kh,
                kernel_w: kw,
                stride: l.stride.unwrap_or(1),
                padding,
                in_h: h,
                in_w: w,
                neuron: None,
            }
        }
        LayerKind::Fc => {
            reject(l.out_channels.is_some(), "out_channels")?;
            reject(l.in_channels.is_some(), "in_channels")?;
            reject(l.kernel.is_some() || l.kernel_h.is_some() || l.kernel_w.is_some(), "kernel")?;
            reject(l.stride.is_some(), "stride")?;
            reject(l.padding.is_some(), "padding")?;
            let out = l
                .out_features
                .ok_or_else(|| field_error(i, "out_features", "required for fc"))?;
            if let Some(inf) = l.in_features {
                if inf != c * h * w {
                    return Err(field_error(
                        i,
                        "in_features",
                        format!("declared {inf} but the flattened input has {}", c * h * w),
                    ));
                }
            }
            LayerSpec::fc(c, h, w, out)
        }
        LayerKind::MaxPool => {
            reject(l.out_channels.is_some(), "out_channels")?;
            reject(l.out_features.is_some(), "out_features")?;
            reject(l.in_features.is_some(), "in_features")?;
            reject(l.in_channels.is_some(), "in_channels")?;
            reject(l.padding.is_some(), "padding")?;
            reject(l.neuron.is_some(), "neuron")?;
            if l.kernel_h.is_some() || l.kernel_w.is_some() {
                return Err(field_error(i, "kernel", "maxpool windows are square; use kernel"));
            }
            let k = l.kernel.unwrap_or(DEFAULT_POOL);
            LayerSpec::maxpool(c, k, l.stride.unwrap_or(k), h, w)
        }
    };
    spec.neuron = l.neuron.map(NeuronSpec::from);
    Ok(spec)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_network(&text)
}

fn neuron_toml(out: &mut String, n: &NeuronSpec) {
    let model = match n.model {
        NeuronModel::If => "if",
        NeuronModel::Lif => "lif",
    };
    let reset = match n.reset {
        Reset::Hard => "hard",
        Reset::Soft => "soft",
    };
    let _ = writeln!(out, "model = \"{model}\"");
    let _ = writeln!(out, "reset = \"{reset}\"");
    let _ = writeln!(out, "threshold = {}", n.threshold);
    let _ = writeln!(out, "leak = {}", n.leak);
}

/// Serialize a network with every default made explicit.
pub fn write_network(net: &NetworkSpec) -> String {
    let mut out = String::new();
    let overflow = match net.overflow {
        Overflow::Wrap => "wrap",
        Overflow::Saturate => "saturate",
    };
    let _ = writeln!(out, "precision = {}", net.precision.weight_bits());
    let _ = writeln!(out, "timesteps = {}", net.timesteps);
    let _ = writeln!(out, "overflow = \"{overflow}\"");
    let _ = writeln!(out, "\n[input]");
    let _ = writeln!(out, "channels = {}", net.input_channels);
    let _ = writeln!(out, "h = {}", net.input_h);
    let _ = writeln!(out, "w = {}", net.input_w);
    let _ = writeln!(out, "\n[neuron]");
    neuron_toml(&mut out, &net.neuron);
    for layer in &net.layers {
        let _ = writeln!(out, "\n[[layer]]");
        match layer.kind {
            LayerKind::Conv => {
                let _ = writeln!(out, "type = \"conv\"");
                let _ = writeln!(out, "in_channels = {}", layer.in_channels);
                let _ = writeln!(out, "out_channels = {}", layer.out_channels);
                let _ = writeln!(out, "kernel_h = {}", layer.kernel_h);
                let _ = writeln!(out, "kernel_w = {}", layer.kernel_w);
                let _ = writeln!(out, "stride = {}", layer.stride);
                let _ = writeln!(out, "padding = {}", layer.padding);
            }
            LayerKind::Fc => {
                let _ = writeln!(out, "type = \"fc\"");
                let _ = writeln!(out, "in_features = {}", layer.fan_in());
                let _ = writeln!(out, "out_features = {}", layer.out_channels);
            }
            LayerKind::MaxPool => {
                let _ = writeln!(out, "type = \"maxpool\"");
                let _ = writeln!(out, "kernel = {}", layer.kernel_h);
                let _ = writeln!(out, "stride = {}", layer.stride);
            }
        }
        if let Some(n) = &layer.neuron {
            let _ = writeln!(out, "\n[layer.neuron]");
            neuron_toml(&mut out, n);
        }
    }
    out
}

pub fn save_network(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<(), ConfigError> {
    let path = path.as_ref();
    std::fs::write(path, write_network(net)).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GESTURE: &str = r#"
precision = 4
timesteps = 20

[input]
channels = 2
h = 64
w = 64

[neuron]
model = "if"
reset = "soft"
threshold = 8

[[layer]]
type = "conv"
out_channels = 16
stride = 2

[[layer]]
type = "conv"
out_channels = 16
stride = 2

[[layer]]
type = "conv"
out_channels = 16

[[layer]]
type = "maxpool"

[[layer]]
type = "conv"
out_channels = 16
stride = 2

[[layer]]
type = "conv"
out_channels = 16

[[layer]]
type = "maxpool"

[[layer]]
type = "fc"
in_features = 64
out_features = 11
"#;

    #[test]
    fn gesture_description_resolves() {
        let net = parse_network(GESTURE).unwrap();
        assert_eq!(net.timesteps, 20);
        let convs = net.layers.iter().filter(|l| l.kind == LayerKind::Conv).count();
        let pools = net.layers.iter().filter(|l| l.kind == LayerKind::MaxPool).count();
        assert_eq!((convs, pools), (5, 2));
        let fc = net.layers.last().unwrap();
        assert_eq!((fc.kind, fc.fan_in(), fc.out_channels), (LayerKind::Fc, 64, 11));
    }

    #[test]
    fn defaults_give_same_padding_three_by_three() {
        let text = r#"
precision = 8
timesteps = 10
[input]
channels = 2
h = 288
w = 384
[neuron]
model = "if"
reset = "hard"
threshold = 100
[[layer]]
type = "conv"
out_channels = 32
"#;
        let net = parse_network(text).unwrap();
        let l = &net.layers[0];
        assert_eq!((l.kernel_h, l.kernel_w, l.stride, l.padding), (3, 3, 1, 1));
        assert_eq!(l.fan_in(), 18);
        assert_eq!((l.out_h(), l.out_w()), (288, 384));
    }

    #[test]
    fn empty_layer_list_is_rejected() {
        let text = r#"
precision = 4
timesteps = 1
[input]
channels = 1
h = 4
w = 4
[neuron]
model = "if"
reset = "hard"
threshold = 1
"#;
        assert!(matches!(parse_network(text), Err(ConfigError::Validation(_))));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = "precision = 4\ntimesteps = 1\nbogus = 3\n";
        match parse_network(text) {
            Err(ConfigError::Parse { line, message, .. }) => {
                assert_eq!(line, 3, "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_in_channels_is_a_validation_error() {
        let text = GESTURE.replacen("out_channels = 16\nstride = 2", "in_channels = 3\nout_channels = 16\nstride = 2", 1);
        let err = parse_network(&text).unwrap_err();
        assert!(err.to_string().contains("layer[0].in_channels"), "{err}");
    }

    #[test]
    fn save_then_load_is_identity() {
        let net = parse_network(GESTURE).unwrap();
        let again = parse_network(&write_network(&net)).unwrap();
        assert_eq!(net, again);
    }
}
