//! Plain-text checkpoint format.
//!
//! ```text
//! nplb-checkpoint 1
//! meta <key> <value>
//! tensor <key> <dim>...
//! <values separated by single spaces>
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip notation, so a save/load
//! cycle is bit-exact. Model tensors use the keys `layer<i>.weight`,
//! `layer<i>.bias`, `layer<i>.slope` and `layer<i>.dropout`.

use super::{Layer, LayerSpec, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &str = "nplb-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub key: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of metadata entries and named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelParams) -> Self {
        let mut ck = Checkpoint::default();
        ck.meta.insert("layers".into(), model.layers().len().to_string());
        for (i, l) in model.layers().iter().enumerate() {
            ck.push(
                format!("layer{i}.weight"),
                vec![l.spec.out_dim, l.spec.in_dim],
                l.weight.as_slice().to_vec(),
            );
            ck.push(format!("layer{i}.bias"), vec![l.spec.out_dim], l.bias.clone());
            if let Some(a) = l.slope {
                ck.push(format!("layer{i}.slope"), vec![1], vec![a]);
            }
            ck.push(format!("layer{i}.dropout"), vec![1], vec![l.spec.dropout_rate]);
        }
        ck
    }

    pub fn push(&mut self, key: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        self.tensors.push(Tensor {
            key: key.into(),
            shape,
            values,
        });
    }

    pub fn tensor(&self, key: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.key == key)
    }

    pub fn to_model(&self) -> Result<ModelParams> {
        let n: usize = self
            .meta
            .get("layers")
            .ok_or_else(|| Error::Config("checkpoint has no `layers` entry".into()))?
            .parse()
            .map_err(|_| Error::Config("checkpoint `layers` is not an integer".into()))?;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let missing = |what: &str| Error::Config(format!("checkpoint lacks layer{i}.{what}"));
            let w = self
                .tensor(&format!("layer{i}.weight"))
                .ok_or_else(|| missing("weight"))?;
            let b = self.tensor(&format!("layer{i}.bias")).ok_or_else(|| missing("bias"))?;
            let d = self
                .tensor(&format!("layer{i}.dropout"))
                .ok_or_else(|| missing("dropout"))?;
            let slope = self.tensor(&format!("layer{i}.slope")).map(|t| t.values[0]);
            if w.shape.len() != 2 {
                return Err(Error::Dimension(format!("layer{i}.weight must be 2-D")));
            }
            let spec = LayerSpec {
                in_dim: w.shape[1],
                out_dim: w.shape[0],
                has_prelu: slope.is_some(),
                dropout_rate: d.values[0],
            };
            layers.push(Layer {
                spec,
                weight: Matrix::from_vec(w.shape[0], w.shape[1], w.values.clone())?,
                bias: b.values.clone(),
                slope,
            });
        }
        ModelParams::from_layers(layers)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CHECKPOINT_MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "tensor {} {}", t.key, dims.join(" "));
            let vals: Vec<String> = t.values.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&vals.join(" "));
            s.push('\n');
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, msg: String| Error::parse(origin, line, msg);
        match lines.next() {
            Some((_, header)) => {
                let mut parts = header.split_whitespace();
                if parts.next() != Some(CHECKPOINT_MAGIC) {
                    return Err(bad(1, "not a checkpoint file".into()));
                }
                let version: u32 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(1, "missing version".into()))?;
                if version != VERSION {
                    return Err(bad(1, format!("unsupported checkpoint version {version}")));
                }
            }
            None => return Err(bad(1, "empty checkpoint".into())),
        }
        let mut ck = Checkpoint::default();
        while let Some((ln, line)) = lines.next() {
            if line == "end" {
                return Ok(ck);
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let key = parts.next().ok_or_else(|| bad(ln, "tensor without key".into()))?;
                let shape = parts
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(ln, format!("bad shape: {e}")))?;
                let (vln, vline) = lines
                    .next()
                    .ok_or_else(|| bad(ln + 1, format!("missing values for {key}")))?;
                let values = vline
                    .split(' ')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(vln, format!("bad value: {e}")))?;
                let expected: usize = shape.iter().product();
                if values.len() != expected {
                    return Err(bad(vln, format!("{key}: {} values for shape {shape:?}", values.len())));
                }
                ck.tensors.push(Tensor {
                    key: key.to_string(),
                    shape,
                    values,
                });
            } else {
                return Err(bad(ln, format!("unexpected line `{line}`")));
            }
        }
        Err(bad(text.lines().count(), "missing `end` marker".into()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::parse(&text, &path.as_ref().display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelConfig;
    use crate::numeric::RandomSource;
    use proptest::prelude::*;

    #[test]
    fn model_round_trip_is_bit_exact() {
        let cfg = ModelConfig::new(5, 3).with_hidden(&[7, 4]);
        let mut model = ModelParams::new(&cfg, &mut RandomSource::new(12)).unwrap();
        model.layers_mut()[0].bias[0] = -0.0;
        model.layers_mut()[1].bias[1] = 1e-300;
        let text = Checkpoint::from_model(&model).to_text();
        let back = Checkpoint::parse(&text, "mem").unwrap().to_model().unwrap();
        for (a, b) in model.layers().iter().zip(back.layers()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.weight.as_slice()), bits(b.weight.as_slice()));
            assert_eq!(bits(&a.bias), bits(&b.bias));
            assert_eq!(a.slope.map(f64::to_bits), b.slope.map(f64::to_bits));
            assert_eq!(a.spec, b.spec);
        }
        assert_eq!(Checkpoint::from_model(&back).to_text(), text);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Checkpoint::parse("garbage", "x").is_err());
        assert!(Checkpoint::parse("nplb-checkpoint 9\nend\n", "x").is_err());
        assert!(Checkpoint::parse("nplb-checkpoint 1\ntensor a 2\n1.0\nend\n", "x").is_err());
        assert!(Checkpoint::parse("nplb-checkpoint 1\nmeta a b\n", "x").is_err());
        let ok = Checkpoint::parse("nplb-checkpoint 1\nmeta k some value\ntensor a 2\n1.5 -2\nend\n", "x").unwrap();
        assert_eq!(ok.meta["k"], "some value");
        assert_eq!(ok.tensor("a").unwrap().values, vec![1.5, -2.0]);
    }

    proptest! {
        #[test]
        fn any_finite_value_round_trips(values in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..50)) {
            let mut ck = Checkpoint::default();
            ck.push("t", vec![values.len()], values.clone());
            let back = Checkpoint::parse(&ck.to_text(), "mem").unwrap();
            let got: Vec<u64> = back.tensors[0].values.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
