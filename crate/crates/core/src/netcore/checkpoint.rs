//! Text checkpoints: a JSON document with the architecture and the flat
//! parameter list written with 17 significant digits.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{Network, NetworkSpec, ParamVector};
use crate::{Error, Result};

const FORMAT: &str = "deepfosls-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format: &'static str,
    version: u32,
    name: &'a str,
    param_count: usize,
    spec: &'a NetworkSpec,
    params: Vec<Box<RawValue>>,
}

#[derive(Deserialize)]
struct CheckpointIn {
    format: String,
    version: u32,
    name: String,
    param_count: usize,
    spec: NetworkSpec,
    params: Vec<f64>,
}

/// Format `x` with 17 significant digits, enough for an exact round trip.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_string(name: &str, net: &Network) -> Result<String> {
    let params = net
        .params()
        .as_slice()
        .iter()
        .map(|&x| {
            if !x.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite parameter {x}")));
            }
            RawValue::from_string(format_f64(x)).map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    let doc = CheckpointOut {
        format: FORMAT,
        version: VERSION,
        name,
        param_count: net.params().len(),
        spec: net.spec(),
        params,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parse a checkpoint, returning its name and the network.
pub fn from_str(text: &str) -> Result<(String, Network)> {
    let doc: CheckpointIn = serde_json::from_str(text)?;
    if doc.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", doc.format)));
    }
    if doc.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            doc.version
        )));
    }
    if doc.params.len() != doc.param_count {
        return Err(Error::Checkpoint(format!(
            "declared {} parameters, found {}",
            doc.param_count,
            doc.params.len()
        )));
    }
    let net = Network::new(doc.spec, ParamVector(doc.params))?;
    Ok((doc.name, net))
}

pub fn save(path: impl AsRef<Path>, name: &str, net: &Network) -> Result<()> {
    std::fs::write(path, to_string(name, net)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(String, Network)> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{Activation, LayerSpec};
    use proptest::prelude::*;

    fn spec() -> NetworkSpec {
        NetworkSpec::new(
            2,
            vec![
                LayerSpec::new(3, Activation::SoftPlus { beta: 100.0 }),
                LayerSpec::new(2, Activation::Heaviside { ste_width: 0.5 }),
            ],
            1,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(bits in prop::collection::vec(any::<u64>(), 20)) {
            let params: Vec<f64> = bits
                .into_iter()
                .map(f64::from_bits)
                .map(|x| if x.is_finite() { x } else { 1.0 })
                .collect();
            let net = Network::new(spec(), ParamVector(params.clone())).unwrap();
            let text = to_string("v", &net).unwrap();
            let (name, back) = from_str(&text).unwrap();
            prop_assert_eq!(name, "v");
            prop_assert_eq!(back.spec(), net.spec());
            for (a, b) in params.iter().zip(back.params().as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn params_written_with_17_digits() {
        let mut p = vec![0.0; 20];
        p[0] = 0.1;
        p[1] = -0.0;
        let net = Network::new(spec(), ParamVector(p)).unwrap();
        let text = to_string("eta", &net).unwrap();
        assert!(text.contains("1.0000000000000001e-1"));
        assert!(text.contains("-0.0000000000000000e0"));
    }

    #[test]
    fn rejects_inconsistent_documents() {
        let net = Network::zeros(spec()).unwrap();
        let text = to_string("v", &net).unwrap();
        let bad = text.replace("\"param_count\": 20", "\"param_count\": 19");
        assert!(from_str(&bad).is_err());
        let bad = text.replace(FORMAT, "other");
        assert!(from_str(&bad).is_err());
        let mut nan = net.clone();
        nan.params_mut()[0] = f64::NAN;
        assert!(to_string("v", &nan).is_err());
    }
}
