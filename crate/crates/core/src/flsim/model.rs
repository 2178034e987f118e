use std::io::{BufRead, Write};

use super::{EncodedDataset, ModelKind, ModelParams};
use crate::error::{Error, Result};

/// Loss of one sample and its derivative with respect to the score
/// `f = w·x + b`. Labels map to ±1.
///
/// The SVM and perceptron use the zero subgradient exactly at the kink,
/// except that the perceptron treats a zero score as a mistake so training
/// can leave the all-zero start.
pub fn sample_gradient(kind: ModelKind, score: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { -1.0 };
    let margin = y * score;
    match kind {
        ModelKind::Logreg => {
            // log(1 + e^-m) computed stably; derivative -y * sigmoid(-m)
            let loss = if margin > 0.0 {
                (-margin).exp().ln_1p()
            } else {
                -margin + margin.exp().ln_1p()
            };
            let s = if margin >= 0.0 {
                let e = (-margin).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + margin.exp())
            };
            (loss, -y * s)
        }
        ModelKind::Svm => {
            if margin < 1.0 {
                (1.0 - margin, -y)
            } else {
                (0.0, 0.0)
            }
        }
        ModelKind::Perceptron => {
            if margin <= 0.0 {
                (-margin, -y)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Mean (optionally sample-weighted) loss plus `l2/2 * |w|^2`, and its
/// gradient. The bias is not regularized.
pub fn objective(
    kind: ModelKind,
    params: &ModelParams,
    d: &EncodedDataset,
    l2: f64,
    sample_weights: Option<&[f64]>,
) -> (f64, ModelParams) {
    let mut grad = ModelParams::zeros(params.dim());
    let mut loss = 0.0;
    let n = d.len().max(1) as f64;
    for i in 0..d.len() {
        let x = d.row(i);
        let sw = sample_weights.map_or(1.0, |w| w[i]);
        let (l, g) = sample_gradient(kind, params.score(x), d.label(i));
        loss += sw * l;
        if g != 0.0 {
            for (gw, xv) in grad.weights.iter_mut().zip(x) {
                *gw += sw * g * xv;
            }
            grad.bias += sw * g;
        }
    }
    loss /= n;
    for (gw, w) in grad.weights.iter_mut().zip(&params.weights) {
        *gw = *gw / n + l2 * w;
    }
    grad.bias /= n;
    loss += 0.5 * l2 * params.weights.iter().map(|w| w * w).sum::<f64>();
    (loss, grad)
}

/// A trained model with the metadata needed to apply it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    /// Hash of the data schema and feature layout the model was trained on.
    pub schema_hash: String,
    pub features: Vec<String>,
    /// Label predicted when a sample cannot be encoded.
    pub majority: bool,
    pub params: ModelParams,
}

const MAGIC: &str = "# synfl model v1";

pub fn write_model<W: Write>(mut out: W, m: &ModelFile) -> Result<()> {
    if m.features.len() != m.params.dim() {
        return Err(Error::LengthMismatch {
            expected: m.params.dim(),
            found: m.features.len(),
        });
    }
    let io = |e| Error::io("<model writer>", e);
    writeln!(out, "{MAGIC}").map_err(io)?;
    writeln!(out, "kind\t{}", m.kind).map_err(io)?;
    writeln!(out, "schema\t{}", m.schema_hash).map_err(io)?;
    writeln!(out, "majority\t{}", u8::from(m.majority)).map_err(io)?;
    writeln!(out, "bias\t{}", m.params.bias).map_err(io)?;
    for (name, w) in m.features.iter().zip(&m.params.weights) {
        writeln!(out, "w\t{name}\t{w}").map_err(io)?;
    }
    Ok(())
}

pub fn read_model<R: BufRead>(input: R) -> Result<ModelFile> {
    let (mut kind, mut hash, mut majority, mut bias) = (None, None, false, None);
    let mut features = Vec::new();
    let mut weights = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<model reader>", e))?;
        let perr = |m: &str| Error::Parse {
            line: i + 1,
            message: m.to_string(),
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr("bad number"));
        match fields.as_slice() {
            ["kind", k] => kind = Some(k.parse::<ModelKind>()?),
            ["schema", h] => hash = Some(h.to_string()),
            ["majority", v] => majority = *v == "1",
            ["bias", v] => bias = Some(num(v)?),
            ["w", name, v] => {
                features.push(name.to_string());
                weights.push(num(v)?);
            }
            _ => return Err(perr("unrecognized line")),
        }
    }
    let missing = |what: &str| Error::Parse {
        line: 0,
        message: format!("model file has no {what} line"),
    };
    let params = ModelParams {
        weights,
        bias: bias.ok_or_else(|| missing("bias"))?,
    };
    if !params.is_finite() {
        return Err(Error::Parse {
            line: 0,
            message: "non-finite parameter".into(),
        });
    }
    Ok(ModelFile {
        kind: kind.ok_or_else(|| missing("kind"))?,
        schema_hash: hash.ok_or_else(|| missing("schema"))?,
        features,
        majority,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> EncodedDataset {
        let mut d = EncodedDataset::new(dim);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            d.push(&row, rng.random_bool(0.5)).unwrap();
        }
        d
    }

    fn max_rel_err(kind: ModelKind, d: &EncodedDataset, p: &ModelParams, l2: f64) -> f64 {
        let (_, g) = objective(kind, p, d, l2, None);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for j in 0..=p.dim() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            if j < p.dim() {
                plus.weights[j] += h;
                minus.weights[j] -= h;
            } else {
                plus.bias += h;
                minus.bias -= h;
            }
            let fd = (objective(kind, &plus, d, l2, None).0 - objective(kind, &minus, d, l2, None).0) / (2.0 * h);
            let an = if j < p.dim() { g.weights[j] } else { g.bias };
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
        worst
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_data(&mut rng, 5, 4);
        for _ in 0..20 {
            let p = ModelParams {
                weights: (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
                bias: rng.random_range(-1.0..1.0),
            };
            assert!(max_rel_err(ModelKind::Logreg, &d, &p, 0.1) < 1e-5);
        }
    }

    #[test]
    fn svm_gradient_matches_off_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_data(&mut rng, 5, 3);
        let mut checked = 0;
        while checked < 20 {
            let p = ModelParams {
                weights: (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
                bias: rng.random_range(-1.0..1.0),
            };
            let near_kink = (0..d.len()).any(|i| {
                let y = if d.label(i) { 1.0 } else { -1.0 };
                (y * p.score(d.row(i)) - 1.0).abs() < 1e-3
            });
            if near_kink {
                continue;
            }
            assert!(max_rel_err(ModelKind::Svm, &d, &p, 0.05) < 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn kink_uses_zero_subgradient() {
        assert_eq!(sample_gradient(ModelKind::Svm, 1.0, true), (0.0, 0.0));
        assert_eq!(sample_gradient(ModelKind::Perceptron, 0.0, false).1, 1.0);
        let (l, g) = sample_gradient(ModelKind::Logreg, 0.0, true);
        assert!((l - 2f64.ln()).abs() < 1e-15 && (g + 0.5).abs() < 1e-15);
        let (l, _) = sample_gradient(ModelKind::Logreg, -800.0, true);
        assert!((l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn model_file_round_trip() {
        let m = ModelFile {
            kind: ModelKind::Svm,
            schema_hash: "abc".into(),
            features: vec!["age=[21:40]".into(), "diagnoses=(C,D)".into()],
            majority: true,
            params: ModelParams {
                weights: vec![0.1 + 0.2, -1e-300],
                bias: 3.5,
            },
        };
        let mut buf = Vec::new();
        write_model(&mut buf, &m).unwrap();
        assert_eq!(read_model(buf.as_slice()).unwrap(), m);
        assert!(read_model("kind\tsvm\n".as_bytes()).is_err());
    }
}
