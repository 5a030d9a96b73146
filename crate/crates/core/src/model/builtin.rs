use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PredictionOutput, Predictor, TaskKind};
use crate::dataset::Value;
use crate::error::{Error, Result};

// Below this many rows the rayon fan-out costs more than it saves.
const PARALLEL_ROWS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Softmax,
    Identity,
}

/// Dense layer. `weights[i][j]` connects input `i` to output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Portable weights document for a small feed-forward model.
///
/// Numeric inputs are standardized, categorical inputs one-hot encoded over
/// their vocabulary (unseen values encode as all zeros). Missing numeric
/// values encode as 0, i.e. the training mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinModelSpec {
    pub task: TaskKind,
    pub feature_order: Vec<String>,
    #[serde(default)]
    pub numeric_standardization: BTreeMap<String, Standardization>,
    #[serde(default)]
    pub categorical_vocab: BTreeMap<String, Vec<String>>,
    pub layers: Vec<Layer>,
    pub output: OutputActivation,
}

impl BuiltinModelSpec {
    /// Logistic regression over numeric features given as
    /// `(name, mean, std, weight)`.
    pub fn logistic(features: &[(&str, f64, f64, f64)], bias: f64) -> Self {
        BuiltinModelSpec {
            task: TaskKind::BinaryClassification,
            feature_order: features.iter().map(|f| f.0.to_string()).collect(),
            numeric_standardization: features
                .iter()
                .map(|&(name, mean, std, _)| (name.to_string(), Standardization { mean, std }))
                .collect(),
            categorical_vocab: BTreeMap::new(),
            layers: vec![Layer {
                weights: features.iter().map(|f| vec![f.3]).collect(),
                bias: vec![bias],
                activation: Activation::Identity,
            }],
            output: OutputActivation::Sigmoid,
        }
    }
}

#[derive(Debug, Clone)]
enum Encoding {
    Numeric(Standardization),
    Categorical(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct BuiltinModel {
    spec: BuiltinModelSpec,
    encodings: Vec<Encoding>,
    input_width: usize,
}

impl BuiltinModel {
    /// Validates the document: every feature has exactly one encoding, layer
    /// shapes chain from the encoded width to the task's output width, and
    /// all parameters are finite.
    pub fn new(spec: BuiltinModelSpec) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidModel(msg));

        let mut encodings = Vec::with_capacity(spec.feature_order.len());
        for (i, name) in spec.feature_order.iter().enumerate() {
            if spec.feature_order[..i].contains(name) {
                return invalid(format!("feature {name:?} listed twice"));
            }
            match (
                spec.numeric_standardization.get(name),
                spec.categorical_vocab.get(name),
            ) {
                (Some(s), None) => {
                    if !(s.mean.is_finite() && s.std.is_finite() && s.std > 0.0) {
                        return invalid(format!("feature {name:?} needs a finite mean and positive std"));
                    }
                    encodings.push(Encoding::Numeric(*s));
                }
                (None, Some(vocab)) => encodings.push(Encoding::Categorical(vocab.clone())),
                (Some(_), Some(_)) => {
                    return invalid(format!("feature {name:?} is both numeric and categorical"))
                }
                (None, None) => return invalid(format!("feature {name:?} has no encoding")),
            }
        }
        for name in spec
            .numeric_standardization
            .keys()
            .chain(spec.categorical_vocab.keys())
        {
            if !spec.feature_order.contains(name) {
                return invalid(format!("encoding for {name:?} which is not in feature_order"));
            }
        }

        let input_width: usize = encodings
            .iter()
            .map(|e| match e {
                Encoding::Numeric(_) => 1,
                Encoding::Categorical(v) => v.len(),
            })
            .sum();

        let mut width = input_width;
        for (l, layer) in spec.layers.iter().enumerate() {
            if layer.weights.len() != width {
                return invalid(format!(
                    "layer {l}: weight matrix has {} rows, expected {width}",
                    layer.weights.len()
                ));
            }
            let out = layer.bias.len();
            if let Some(row) = layer.weights.iter().position(|r| r.len() != out) {
                return invalid(format!(
                    "layer {l}: weight row {row} has {} columns but bias has length {out}",
                    layer.weights[row].len()
                ));
            }
            if layer.weights.iter().flatten().chain(&layer.bias).any(|w| !w.is_finite()) {
                return invalid(format!("layer {l}: non-finite weight"));
            }
            width = out;
        }

        let expected = spec.task.output_width();
        if width != expected {
            return invalid(format!("model produces {width} outputs, task needs {expected}"));
        }
        let output_ok = matches!(
            (spec.task, spec.output),
            (TaskKind::BinaryClassification, OutputActivation::Sigmoid)
                | (TaskKind::MultiClassification { .. }, OutputActivation::Softmax)
                | (TaskKind::Regression, OutputActivation::Identity)
        );
        if !output_ok {
            return invalid(format!("output {:?} does not fit task {:?}", spec.output, spec.task));
        }
        if let TaskKind::MultiClassification { num_classes } = spec.task {
            if num_classes < 3 {
                return invalid("multiclass models need at least 3 classes".into());
            }
        }

        Ok(BuiltinModel {
            spec,
            encodings,
            input_width,
        })
    }

    pub fn spec(&self) -> &BuiltinModelSpec {
        &self.spec
    }

    fn encode(&self, columns: &[usize], row: &[Value]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(self.input_width);
        for ((encoding, &j), name) in self.encodings.iter().zip(columns).zip(&self.spec.feature_order) {
            match encoding {
                Encoding::Numeric(s) => {
                    let z = match &row[j] {
                        Value::Missing => 0.0,
                        Value::Number(v) => (v - s.mean) / s.std,
                        Value::Text(t) => match t.trim().parse::<f64>() {
                            Ok(v) if v.is_finite() => (v - s.mean) / s.std,
                            _ => {
                                return Err(Error::TypeMismatch {
                                    feature: name.clone(),
                                    expected: "numeric",
                                })
                            }
                        },
                    };
                    x.push(z);
                }
                Encoding::Categorical(vocab) => {
                    let hit = match &row[j] {
                        Value::Missing => None,
                        v => {
                            let label = v.label();
                            vocab.iter().position(|w| *w == label)
                        }
                    };
                    x.extend((0..vocab.len()).map(|k| if Some(k) == hit { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(x)
    }

    fn forward(&self, mut h: Vec<f64>) -> PredictionOutput {
        for layer in &self.spec.layers {
            let mut out = layer.bias.clone();
            for (hi, row) in h.iter().zip(&layer.weights) {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += hi * w;
                }
            }
            if layer.activation == Activation::Relu {
                for o in &mut out {
                    *o = o.max(0.0);
                }
            }
            h = out;
        }
        match self.spec.output {
            OutputActivation::Sigmoid => PredictionOutput::Binary(sigmoid(h[0])),
            OutputActivation::Softmax => PredictionOutput::Multiclass(softmax(&h)),
            OutputActivation::Identity => PredictionOutput::Regression(h[0]),
        }
    }

    fn predict_row(&self, columns: &[usize], row: &[Value]) -> Result<PredictionOutput> {
        Ok(self.forward(self.encode(columns, row)?))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Predictor for BuiltinModel {
    fn task(&self) -> TaskKind {
        self.spec.task
    }

    fn predict(&self, features: &[String], rows: &[&[Value]]) -> Result<Vec<PredictionOutput>> {
        let columns = self
            .spec
            .feature_order
            .iter()
            .map(|name| {
                features
                    .iter()
                    .position(|f| f == name)
                    .ok_or_else(|| Error::UnknownFeature(name.clone()))
            })
            .collect::<Result<Vec<usize>>>()?;
        if let Some(row) = rows.iter().find(|r| r.len() != features.len()) {
            return Err(Error::InvalidArgument(format!(
                "row has {} values for {} features",
                row.len(),
                features.len()
            )));
        }
        if rows.len() >= PARALLEL_ROWS {
            rows.par_iter().map(|r| self.predict_row(&columns, r)).collect()
        } else {
            rows.iter().map(|r| self.predict_row(&columns, r)).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let model = BuiltinModel::new(BuiltinModelSpec::logistic(&[("x", 0.0, 1.0, 2.0)], 0.0)).unwrap();
        let out = model.predict(&names(&["x"]), &[&[Value::Number(0.0)]]).unwrap();
        assert_eq!(out, vec![PredictionOutput::Binary(0.5)]);
    }

    #[test]
    fn sigmoid_of_ln3_is_three_quarters() {
        let model = BuiltinModel::new(BuiltinModelSpec::logistic(&[("x", 0.0, 1.0, 1.0)], 0.0)).unwrap();
        let out = model.predict(&names(&["x"]), &[&[Value::Number(3f64.ln())]]).unwrap();
        assert!((out[0].score() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn missing_numeric_encodes_as_mean() {
        let model = BuiltinModel::new(BuiltinModelSpec::logistic(&[("x", 10.0, 2.0, 3.0)], 0.0)).unwrap();
        let out = model
            .predict(&names(&["x"]), &[&[Value::Missing], &[Value::Number(10.0)]])
            .unwrap();
        assert_eq!(out[0], out[1]);
    }

    fn mlp_json() -> &'static str {
        r#"{
            "task": {"multi_classification": {"num_classes": 3}},
            "feature_order": ["age", "color"],
            "numeric_standardization": {"age": {"mean": 40.0, "std": 10.0}},
            "categorical_vocab": {"color": ["red", "green"]},
            "layers": [
                {"weights": [[1.0, -1.0], [0.5, 0.2], [-0.3, 0.8]], "bias": [0.1, 0.0], "activation": "relu"},
                {"weights": [[1.0, 0.0, -1.0], [0.0, 1.0, 0.5]], "bias": [0.0, 0.0, 0.0], "activation": "identity"}
            ],
            "output": "softmax"
        }"#
    }

    #[test]
    fn mlp_softmax_sums_to_one() {
        let spec: BuiltinModelSpec = serde_json::from_str(mlp_json()).unwrap();
        let model = BuiltinModel::new(spec).unwrap();
        let rows: Vec<Vec<Value>> = vec![
            vec![Value::Number(30.0), Value::from("red")],
            vec![Value::Number(55.0), Value::from("blue")],
            vec![Value::Missing, Value::Missing],
        ];
        let refs: Vec<&[Value]> = rows.iter().map(|r| r.as_slice()).collect();
        for out in model.predict(&names(&["age", "color"]), &refs).unwrap() {
            match out {
                PredictionOutput::Multiclass(v) => {
                    assert_eq!(v.len(), 3);
                    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn unseen_category_is_all_zeros() {
        let spec: BuiltinModelSpec = serde_json::from_str(mlp_json()).unwrap();
        let model = BuiltinModel::new(spec).unwrap();
        let f = names(&["age", "color"]);
        let unseen = model.predict(&f, &[&[Value::Number(30.0), Value::from("blue")]]).unwrap();
        let missing = model.predict(&f, &[&[Value::Number(30.0), Value::Missing]]).unwrap();
        assert_eq!(unseen, missing);
    }

    #[test]
    fn dimension_errors() {
        let mut spec = BuiltinModelSpec::logistic(
            &[("a", 0.0, 1.0, 1.0), ("b", 0.0, 1.0, 1.0), ("c", 0.0, 1.0, 1.0)],
            0.0,
        );
        spec.layers = vec![Layer {
            weights: vec![vec![0.0; 4]; 3],
            bias: vec![0.0; 5],
            activation: Activation::Relu,
        }];
        let err = BuiltinModel::new(spec.clone()).unwrap_err();
        assert!(err.to_string().contains("bias has length 5"), "{err}");

        spec.layers = vec![Layer {
            weights: vec![vec![f64::NAN]; 3],
            bias: vec![0.0],
            activation: Activation::Identity,
        }];
        assert!(BuiltinModel::new(spec.clone()).is_err());

        spec.layers = vec![Layer {
            weights: vec![vec![1.0, 1.0]; 3],
            bias: vec![0.0, 0.0],
            activation: Activation::Identity,
        }];
        assert!(BuiltinModel::new(spec).unwrap_err().to_string().contains("task needs 1"));
    }

    #[test]
    fn model_needs_its_features() {
        let model = BuiltinModel::new(BuiltinModelSpec::logistic(&[("x", 0.0, 1.0, 1.0)], 0.0)).unwrap();
        assert!(matches!(
            model.predict(&names(&["y"]), &[&[Value::Number(1.0)]]),
            Err(Error::UnknownFeature(_))
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let json = r#"{"task":"regression","feature_order":[],"layers":[],"output":"identity","extra":1}"#;
        assert!(serde_json::from_str::<BuiltinModelSpec>(json).is_err());
    }
}
