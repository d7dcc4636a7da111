//! Plain-text model serialization with exact float round-trips.
//!
//! One field per line, floats printed in Rust's shortest round-trip form, so
//! a written model re-parses to bit-identical parameters with no schema
//! dependency.

use crate::error::{Error, Result};
use crate::layers::Scheme;
use crate::model::{LayerKind, NetworkSpec, ProDssmModel, VarianceModel, WeightDistribution};

const HEADER: &str = "prodssm-model v1";

fn write_floats(out: &mut String, key: &str, values: &[f64]) {
    out.push_str(key);
    for v in values {
        out.push(' ');
        out.push_str(&format!("{v:?}"));
    }
    out.push('\n');
}

fn spec_tokens(spec: &NetworkSpec) -> String {
    let mut s = format!("{} {}", spec.input_dim, u8::from(spec.residual));
    for l in &spec.layers {
        match l {
            LayerKind::Affine { out_dim } => s.push_str(&format!(" a{out_dim}")),
            LayerKind::Relu => s.push_str(" r"),
        }
    }
    s
}

fn parse_spec(tokens: &[&str]) -> Result<NetworkSpec> {
    if tokens.len() < 2 {
        return Err(Error::ModelFormat("network spec too short".into()));
    }
    let input_dim = tokens[0]
        .parse::<usize>()
        .map_err(|e| Error::ModelFormat(format!("input dim: {e}")))?;
    let residual = match tokens[1] {
        "0" => false,
        "1" => true,
        other => return Err(Error::ModelFormat(format!("residual flag `{other}`"))),
    };
    let mut layers = Vec::new();
    for t in &tokens[2..] {
        if *t == "r" {
            layers.push(LayerKind::Relu);
        } else if let Some(rest) = t.strip_prefix('a') {
            let out_dim = rest
                .parse::<usize>()
                .map_err(|e| Error::ModelFormat(format!("affine dim: {e}")))?;
            layers.push(LayerKind::Affine { out_dim });
        } else {
            return Err(Error::ModelFormat(format!("layer token `{t}`")));
        }
    }
    Ok(NetworkSpec {
        input_dim,
        layers,
        residual,
    })
}

fn parse_floats(tokens: &[&str]) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::ModelFormat(format!("float `{t}`: {e}")))
        })
        .collect()
}

impl ProDssmModel<f64> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        out.push_str(&format!(
            "scheme {}\n",
            match self.scheme {
                Scheme::Local => "local",
                Scheme::Global => "global",
            }
        ));
        out.push_str(&format!("f {}\n", spec_tokens(&self.f_spec)));
        match &self.variance_model {
            VarianceModel::ConstantDiag(lv) => write_floats(&mut out, "var const", lv),
            VarianceModel::LogVarNet(spec) => {
                out.push_str(&format!("var net {}\n", spec_tokens(spec)))
            }
        }
        out.push_str(&format!("g {}\n", spec_tokens(&self.g_spec)));
        write_floats(&mut out, "g_params", &self.g_params);
        write_floats(&mut out, "log_r", &self.log_r);
        write_floats(&mut out, "init_mean", &self.init_mean);
        write_floats(&mut out, "init_log_var", &self.init_log_var);
        write_floats(&mut out, "w_mean", &self.weights.mean);
        write_floats(&mut out, "w_log_var", &self.weights.log_var);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::ModelFormat("empty file".into()))?;
        if header.trim() != HEADER {
            return Err(Error::ModelFormat(format!("unexpected header `{header}`")));
        }
        let mut scheme = None;
        let mut f_spec = None;
        let mut variance_model = None;
        let mut g_spec = None;
        let mut g_params = None;
        let mut log_r = None;
        let mut init_mean = None;
        let mut init_log_var = None;
        let mut w_mean = None;
        let mut w_log_var = None;
        for line in lines {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match tokens.first().copied() {
                Some("scheme") => {
                    scheme = Some(match tokens.get(1).copied() {
                        Some("local") => Scheme::Local,
                        Some("global") => Scheme::Global,
                        other => {
                            return Err(Error::ModelFormat(format!("scheme {other:?}")));
                        }
                    })
                }
                Some("f") => f_spec = Some(parse_spec(&tokens[1..])?),
                Some("var") => {
                    variance_model = Some(match tokens.get(1).copied() {
                        Some("const") => VarianceModel::ConstantDiag(parse_floats(&tokens[2..])?),
                        Some("net") => VarianceModel::LogVarNet(parse_spec(&tokens[2..])?),
                        other => {
                            return Err(Error::ModelFormat(format!("variance kind {other:?}")));
                        }
                    })
                }
                Some("g") => g_spec = Some(parse_spec(&tokens[1..])?),
                Some("g_params") => g_params = Some(parse_floats(&tokens[1..])?),
                Some("log_r") => log_r = Some(parse_floats(&tokens[1..])?),
                Some("init_mean") => init_mean = Some(parse_floats(&tokens[1..])?),
                Some("init_log_var") => init_log_var = Some(parse_floats(&tokens[1..])?),
                Some("w_mean") => w_mean = Some(parse_floats(&tokens[1..])?),
                Some("w_log_var") => w_log_var = Some(parse_floats(&tokens[1..])?),
                other => return Err(Error::ModelFormat(format!("unknown field {other:?}"))),
            }
        }
        let missing = |name: &str| Error::ModelFormat(format!("missing field `{name}`"));
        let model = ProDssmModel {
            f_spec: f_spec.ok_or_else(|| missing("f"))?,
            variance_model: variance_model.ok_or_else(|| missing("var"))?,
            g_spec: g_spec.ok_or_else(|| missing("g"))?,
            g_params: g_params.ok_or_else(|| missing("g_params"))?,
            log_r: log_r.ok_or_else(|| missing("log_r"))?,
            init_mean: init_mean.ok_or_else(|| missing("init_mean"))?,
            init_log_var: init_log_var.ok_or_else(|| missing("init_log_var"))?,
            weights: WeightDistribution {
                mean: w_mean.ok_or_else(|| missing("w_mean"))?,
                log_var: w_log_var.ok_or_else(|| missing("w_log_var"))?,
            },
            scheme: scheme.ok_or_else(|| missing("scheme"))?,
        };
        model.validate()?;
        Ok(model)
    }
}
