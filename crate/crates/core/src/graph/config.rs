//! Declarative model description.
//!
//! ```json
//! {"name": "toy", "nc": 1, "input_size": [64, 64],
//!  "layers": [{"from": [-1], "type": "Conv", "args": [16, 3, 2]}, ...]}
//! ```
//!
//! `from` entries are absolute layer indices or negative offsets (`-1` is the
//! previous layer; for layer 0 it is the input image).
//!
//! | type      | args                                   |
//! |-----------|----------------------------------------|
//! | Conv      | `[c_out, k = 1, s = 1]`                |
//! | GhostConv | `[c_out, k = 1, s = 1]`                |
//! | C3k2      | `[c_out, n = 1, shortcut = true, e = 0.5]` |
//! | C3Ghost   | `[c_out, n = 1, shortcut = true, e = 0.5]` |
//! | SPPF      | `[c_out]`                              |
//! | C2PSA     | `[c_out, n = 1]`                       |
//! | Upsample  | `[scale = 2]`                          |
//! | Concat    | `[]`                                   |
//! | Detect    | `[]` or `[c_box, c_cls]`               |

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const BLOCK_TYPES: [&str; 9] = [
    "Conv", "GhostConv", "C3k2", "C3Ghost", "SPPF", "C2PSA", "Upsample", "Concat", "Detect",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub from: Vec<i64>,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub args: Vec<Value>,
}

impl LayerSpec {
    pub fn new(from: &[i64], kind: &str, args: Vec<Value>) -> Self {
        LayerSpec {
            from: from.to_vec(),
            kind: kind.to_string(),
            args,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub nc: usize,
    pub input_size: [usize; 2],
    pub layers: Vec<LayerSpec>,
}

/// A resolved layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Image,
    Layer(usize),
}

impl ModelConfig {
    pub fn with_input_size(mut self, h: usize, w: usize) -> Self {
        self.input_size = [h, w];
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Resolves `from` entries of layer `index` to sources.
    pub fn sources(&self, index: usize) -> Result<Vec<Source>> {
        let layer = &self.layers[index];
        if layer.from.is_empty() {
            return Err(Error::config(Some(index), "empty `from` list"));
        }
        layer
            .from
            .iter()
            .map(|&f| {
                let abs = if f < 0 { index as i64 + f } else { f };
                if f >= 0 && abs >= index as i64 {
                    Err(Error::config(
                        Some(index),
                        format!("forward reference to layer {f}; inputs must come from earlier layers"),
                    ))
                } else if abs == -1 {
                    Ok(Source::Image)
                } else if abs < 0 {
                    Err(Error::config(Some(index), format!("offset {f} reaches before the input")))
                } else {
                    Ok(Source::Layer(abs as usize))
                }
            })
            .collect()
    }

    /// Structural checks that do not need shapes.
    pub fn validate(&self) -> Result<()> {
        if self.nc == 0 {
            return Err(Error::config(None, "nc must be positive"));
        }
        if self.input_size.contains(&0) {
            return Err(Error::config(None, "input_size must be positive"));
        }
        if self.layers.is_empty() {
            return Err(Error::config(None, "no layers"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !BLOCK_TYPES.contains(&layer.kind.as_str()) {
                return Err(Error::config(
                    Some(i),
                    format!("unknown block type {:?}; expected one of {}", layer.kind, BLOCK_TYPES.join(", ")),
                ));
            }
            let sources = self.sources(i)?;
            if sources.iter().any(|s| matches!(s, Source::Layer(j) if self.layers[*j].kind == "Detect")) {
                return Err(Error::config(Some(i), "Detect output cannot feed another layer"));
            }
        }
        let detects: Vec<usize> = (0..self.layers.len()).filter(|&i| self.layers[i].kind == "Detect").collect();
        match detects.as_slice() {
            [] => Err(Error::config(None, "missing Detect layer")),
            [d] if *d == self.layers.len() - 1 => Ok(()),
            [d] => Err(Error::config(Some(*d), "Detect must be the last layer")),
            [_, second, ..] => Err(Error::config(Some(*second), "only one Detect layer is allowed")),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ModelConfig> {
    let config: ModelConfig =
        serde_json::from_str(text).map_err(|e| Error::config(None, format!("malformed config: {e}")))?;
    config.validate()?;
    Ok(config)
}

pub fn serialize_config(config: &ModelConfig) -> String {
    config.to_json()
}

/// Typed access to a layer's positional arguments.
pub(crate) struct Args<'a> {
    pub index: usize,
    pub kind: &'a str,
    pub values: &'a [Value],
}

impl Args<'_> {
    fn err(&self, msg: String) -> Error {
        Error::config(Some(self.index), format!("{}: {msg}", self.kind))
    }

    pub fn max_len(&self, n: usize) -> Result<()> {
        if self.values.len() > n {
            return Err(self.err(format!("takes at most {n} arguments, got {}", self.values.len())));
        }
        Ok(())
    }

    pub fn usize(&self, pos: usize, default: Option<usize>) -> Result<usize> {
        match self.values.get(pos) {
            None => default.ok_or_else(|| self.err(format!("missing argument {pos}"))),
            Some(v) => v
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| self.err(format!("argument {pos} must be a non-negative integer, got {v}"))),
        }
    }

    pub fn bool(&self, pos: usize, default: bool) -> Result<bool> {
        match self.values.get(pos) {
            None => Ok(default),
            Some(v) => v
                .as_bool()
                .ok_or_else(|| self.err(format!("argument {pos} must be a boolean, got {v}"))),
        }
    }

    pub fn f64(&self, pos: usize, default: f64) -> Result<f64> {
        match self.values.get(pos) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| self.err(format!("argument {pos} must be a number, got {v}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn tiny() -> ModelConfig {
        ModelConfig {
            name: "tiny".into(),
            nc: 1,
            input_size: [32, 32],
            layers: vec![
                LayerSpec::new(&[-1], "Conv", vec![json!(8), json!(3), json!(2)]),
                LayerSpec::new(&[-1], "Detect", vec![]),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let c = tiny();
        assert_eq!(parse_config(&serialize_config(&c)).unwrap(), c);
    }

    #[test]
    fn forward_reference_names_layer() {
        let mut c = tiny();
        c.layers.insert(1, LayerSpec::new(&[5], "Conv", vec![json!(8)]));
        match c.validate() {
            Err(Error::Config { layer: Some(1), msg }) => assert!(msg.contains("forward reference")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_detect() {
        let mut c = tiny();
        c.layers.pop();
        assert!(matches!(c.validate(), Err(Error::Config { layer: None, .. })));
    }

    #[test]
    fn unknown_type() {
        let mut c = tiny();
        c.layers[0].kind = "Bottleneck3".into();
        assert!(matches!(c.validate(), Err(Error::Config { layer: Some(0), .. })));
    }

    #[test]
    fn malformed_json() {
        assert!(matches!(parse_config("{\"name\": "), Err(Error::Config { .. })));
        assert!(matches!(parse_config("{\"name\": \"x\", \"nc\": 1}"), Err(Error::Config { .. })));
    }

    #[test]
    fn negative_offsets_resolve() {
        let c = tiny();
        assert_eq!(c.sources(0).unwrap(), vec![Source::Image]);
        assert_eq!(c.sources(1).unwrap(), vec![Source::Layer(0)]);
    }
}
