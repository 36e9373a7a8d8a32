//! JSON weight files.
//!
//! ```json
//! {
//!   "version": 3,
//!   "layer_shapes": [[11, 256], [256, 4]],
//!   "float_weights": { "w1": [...], "b1": [...], "w2": [...], "b2": [...] },
//!   "int4_weights": { "w1": "<hex>", "b1": [...], "w2": "<hex>", "b2": [...] },
//!   "scale_exponents": [-4, -6],
//!   "normalization_spec": { "features": [...] }
//! }
//! ```
//!
//! Layer shapes are `[inputs, outputs]`. Weight matrices are row-major by
//! output unit. INT4 matrices are packed two values per byte, the earlier
//! value in the low nibble, and hex encoded. INT4 biases are integers at the
//! layer's accumulator scale: `2^e1` for layer 1 and `2^(e1 + e2)` for
//! layer 2. Either weight form may be omitted, but not both.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{QNetwork, HIDDEN, INPUT, OUTPUT};
use super::quant::{pack_nibbles, unpack_nibbles, QuantizedNetwork};
use crate::error::{Error, Result};
use crate::features::NormalizationSpec;

pub const LAYER_SHAPES: [[usize; 2]; 2] = [[INPUT, HIDDEN], [HIDDEN, OUTPUT]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Int4Weights {
    pub w1: String,
    pub b1: Vec<i32>,
    pub w2: String,
    pub b2: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub version: u64,
    pub layer_shapes: [[usize; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub float_weights: Option<QNetwork>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub int4_weights: Option<Int4Weights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_exponents: Option<[i32; 2]>,
    pub normalization_spec: NormalizationSpec,
}

impl WeightFile {
    pub fn new(
        version: u64,
        float: Option<&QNetwork>,
        int4: Option<&QuantizedNetwork>,
        normalization: NormalizationSpec,
    ) -> Self {
        WeightFile {
            version,
            layer_shapes: LAYER_SHAPES,
            float_weights: float.cloned(),
            int4_weights: int4.map(|q| Int4Weights {
                w1: hex::encode(pack_nibbles(&q.w1)),
                b1: q.b1.clone(),
                w2: hex::encode(pack_nibbles(&q.w2)),
                b2: q.b2.clone(),
            }),
            scale_exponents: int4.map(|q| [q.exp1, q.exp2]),
            normalization_spec: normalization,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_shapes != LAYER_SHAPES {
            return Err(Error::WeightFormat(format!(
                "layer_shapes must be {LAYER_SHAPES:?}, got {:?}",
                self.layer_shapes
            )));
        }
        if self.float_weights.is_none() && self.int4_weights.is_none() {
            return Err(Error::WeightFormat("neither float_weights nor int4_weights present".into()));
        }
        if let Some(net) = &self.float_weights {
            let lens = [net.w1.len(), net.b1.len(), net.w2.len(), net.b2.len()];
            if lens != [INPUT * HIDDEN, HIDDEN, HIDDEN * OUTPUT, OUTPUT] {
                return Err(Error::WeightFormat(format!("float weight lengths {lens:?}")));
            }
            if !net.is_finite() {
                return Err(Error::WeightFormat("float weights contain non-finite values".into()));
            }
        }
        if self.int4_weights.is_some() && self.scale_exponents.is_none() {
            return Err(Error::WeightFormat("int4_weights without scale_exponents".into()));
        }
        self.normalization_spec
            .validate()
            .map_err(|e| Error::WeightFormat(e.to_string()))?;
        self.quantized().map(|_| ())
    }

    pub fn quantized(&self) -> Result<Option<QuantizedNetwork>> {
        let (Some(w), Some([exp1, exp2])) = (&self.int4_weights, self.scale_exponents) else {
            return Ok(None);
        };
        let decode = |s: &str, count: usize| -> Result<Vec<i8>> {
            let bytes = hex::decode(s).map_err(|e| Error::WeightFormat(e.to_string()))?;
            unpack_nibbles(&bytes, count)
        };
        if w.b1.len() != HIDDEN || w.b2.len() != OUTPUT {
            return Err(Error::WeightFormat(format!(
                "int4 bias lengths [{}, {}]",
                w.b1.len(),
                w.b2.len()
            )));
        }
        Ok(Some(QuantizedNetwork {
            w1: decode(&w.w1, INPUT * HIDDEN)?,
            b1: w.b1.clone(),
            w2: decode(&w.w2, HIDDEN * OUTPUT)?,
            b2: w.b2.clone(),
            exp1,
            exp2,
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: WeightFile = serde_json::from_str(s)?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::quant::quantize_int4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm() -> NormalizationSpec {
        NormalizationSpec::with_caps([1.0; INPUT])
    }

    #[test]
    fn file_round_trips_both_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::random(&mut rng);
        let q = quantize_int4(&net);
        let file = WeightFile::new(7, Some(&net), Some(&q), norm());
        let back = WeightFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.quantized().unwrap().unwrap(), q);
        assert_eq!(back.float_weights.unwrap(), net);
    }

    #[test]
    fn rejects_malformed_files() {
        let file = WeightFile::new(1, None, None, norm());
        assert!(file.validate().is_err());

        let mut file = WeightFile::new(1, Some(&QNetwork::zeros()), None, norm());
        file.layer_shapes = [[11, 128], [128, 4]];
        assert!(file.validate().is_err());

        let mut file = WeightFile::new(1, None, Some(&quantize_int4(&QNetwork::zeros())), norm());
        file.int4_weights.as_mut().unwrap().w1.pop();
        assert!(matches!(file.validate(), Err(Error::WeightFormat(_))));
    }
}
