use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Map, Value};
use uuid::Uuid;

use super::{FedMessage, ProtoError, TaskConfig, PROTOCOL};
use crate::nn::{ModelSpec, NamedTensor, Tensor, WeightsBundle};

pub fn weights_to_json(w: &WeightsBundle) -> Result<Value, ProtoError> {
    let tensors = w
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if !t.tensor.is_finite() {
                return Err(ProtoError::codec(
                    format!("weights.tensors[{i}].data"),
                    format!("tensor {} holds NaN or infinite values", t.name),
                ));
            }
            let mut bytes = Vec::with_capacity(t.tensor.len() * 4);
            for v in t.tensor.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            Ok(json!({
                "name": t.name,
                "shape": t.tensor.shape(),
                "data": STANDARD.encode(bytes),
            }))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(json!({ "tensors": tensors }))
}

/// Standalone weights document, as embedded in model messages.
pub fn encode_weights(w: &WeightsBundle) -> Result<String, ProtoError> {
    Ok(weights_to_json(w)?.to_string())
}

pub fn encode(msg: &FedMessage) -> Result<String, ProtoError> {
    let value = match msg {
        FedMessage::Register {
            client_id,
            num_samples,
        } => json!({
            "type": "register",
            "protocol": PROTOCOL,
            "client_id": client_id.to_string(),
            "num_samples": num_samples,
        }),
        FedMessage::RegisterAck { client_index, task } => json!({
            "type": "register_ack",
            "protocol": PROTOCOL,
            "client_index": client_index,
            "task": serde_json::to_value(task).expect("task config serializes"),
        }),
        FedMessage::GlobalModel {
            round,
            selected,
            weights,
        } => json!({
            "type": "global_model",
            "round": round,
            "selected": selected,
            "weights": weights_to_json(weights)?,
        }),
        FedMessage::LocalUpdate {
            round,
            client_id,
            num_samples,
            weights,
        } => json!({
            "type": "local_update",
            "round": round,
            "client_id": client_id.to_string(),
            "num_samples": num_samples,
            "weights": weights_to_json(weights)?,
        }),
        FedMessage::RoundMetrics {
            round,
            accuracy,
            loss,
        } => {
            for (name, v) in [("accuracy", accuracy), ("loss", loss)] {
                if !v.is_finite() {
                    return Err(ProtoError::codec(name, "metrics must be finite"));
                }
            }
            json!({
                "type": "round_metrics",
                "round": round,
                "accuracy": accuracy,
                "loss": loss,
            })
        }
        FedMessage::Shutdown => json!({ "type": "shutdown" }),
    };
    Ok(value.to_string())
}

pub fn decode(frame: &[u8]) -> Result<FedMessage, ProtoError> {
    let value: Value =
        serde_json::from_slice(frame).map_err(|e| ProtoError::Parse(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ProtoError::schema("<frame>", "expected a JSON object"))?;
    let kind = match obj.get("type") {
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(ProtoError::schema("type", "expected a string")),
        None => return Err(ProtoError::schema("type", "missing")),
    };
    let f = Fields(obj);
    match kind {
        "register" => {
            f.protocol()?;
            Ok(FedMessage::Register {
                client_id: f.uuid("client_id")?,
                num_samples: f.u64("num_samples")?,
            })
        }
        "register_ack" => {
            f.protocol()?;
            Ok(FedMessage::RegisterAck {
                client_index: f.u32("client_index")?,
                task: f.task("task")?,
            })
        }
        "global_model" => Ok(FedMessage::GlobalModel {
            round: f.u32("round")?,
            selected: f.bool("selected")?,
            weights: decode_weights_value(f.get("weights")?)?,
        }),
        "local_update" => Ok(FedMessage::LocalUpdate {
            round: f.u32("round")?,
            client_id: f.uuid("client_id")?,
            num_samples: f.u64("num_samples")?,
            weights: decode_weights_value(f.get("weights")?)?,
        }),
        "round_metrics" => Ok(FedMessage::RoundMetrics {
            round: f.u32("round")?,
            accuracy: f.f32("accuracy")?,
            loss: f.f32("loss")?,
        }),
        "shutdown" => Ok(FedMessage::Shutdown),
        other => Err(ProtoError::Protocol(format!("unknown message type {other:?}"))),
    }
}

/// Decodes a standalone weights document.
pub fn decode_weights(bytes: &[u8]) -> Result<WeightsBundle, ProtoError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| ProtoError::Parse(e.to_string()))?;
    decode_weights_value(&value)
}

struct Fields<'a>(&'a Map<String, Value>);

impl<'a> Fields<'a> {
    fn get(&self, name: &str) -> Result<&'a Value, ProtoError> {
        self.0
            .get(name)
            .ok_or_else(|| ProtoError::schema(name, "missing"))
    }

    fn u64(&self, name: &str) -> Result<u64, ProtoError> {
        self.get(name)?
            .as_u64()
            .ok_or_else(|| ProtoError::schema(name, "expected a non-negative integer"))
    }

    fn u32(&self, name: &str) -> Result<u32, ProtoError> {
        u32::try_from(self.u64(name)?)
            .map_err(|_| ProtoError::schema(name, "does not fit in 32 bits"))
    }

    fn f32(&self, name: &str) -> Result<f32, ProtoError> {
        let v = self
            .get(name)?
            .as_f64()
            .ok_or_else(|| ProtoError::schema(name, "expected a number"))?;
        match v as f32 {
            x if x.is_finite() => Ok(x),
            _ => Err(ProtoError::schema(name, "out of range for f32")),
        }
    }

    fn bool(&self, name: &str) -> Result<bool, ProtoError> {
        self.get(name)?
            .as_bool()
            .ok_or_else(|| ProtoError::schema(name, "expected a boolean"))
    }

    fn uuid(&self, name: &str) -> Result<Uuid, ProtoError> {
        let s = self
            .get(name)?
            .as_str()
            .ok_or_else(|| ProtoError::schema(name, "expected a UUID string"))?;
        Uuid::parse_str(s).map_err(|e| ProtoError::schema(name, e.to_string()))
    }

    fn task(&self, name: &str) -> Result<TaskConfig, ProtoError> {
        let task: TaskConfig = serde_json::from_value(self.get(name)?.clone())
            .map_err(|e| ProtoError::schema(name, e.to_string()))?;
        task.validate()
            .map_err(|(field, reason)| ProtoError::schema(format!("{name}.{field}"), reason))?;
        Ok(task)
    }

    fn protocol(&self) -> Result<(), ProtoError> {
        let p = self
            .get("protocol")?
            .as_str()
            .ok_or_else(|| ProtoError::schema("protocol", "expected a string"))?;
        if p != PROTOCOL {
            return Err(ProtoError::Protocol(format!(
                "peer speaks {p:?}, this build speaks {PROTOCOL:?}"
            )));
        }
        Ok(())
    }
}

fn decode_weights_value(value: &Value) -> Result<WeightsBundle, ProtoError> {
    let tensors = value
        .get("tensors")
        .and_then(Value::as_array)
        .ok_or_else(|| ProtoError::schema("weights.tensors", "expected an array"))?;
    let mut out = Vec::with_capacity(tensors.len());
    for (i, t) in tensors.iter().enumerate() {
        let at = |f: &str| format!("weights.tensors[{i}].{f}");
        let name = t
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| ProtoError::schema(at("name"), "expected a string"))?;
        let shape = t
            .get("shape")
            .and_then(Value::as_array)
            .ok_or_else(|| ProtoError::schema(at("shape"), "expected an array"))?
            .iter()
            .map(|d| {
                d.as_u64()
                    .and_then(|d| usize::try_from(d).ok())
                    .ok_or_else(|| ProtoError::schema(at("shape"), "expected non-negative integers"))
            })
            .collect::<Result<Vec<usize>, _>>()?;
        let encoded = t
            .get("data")
            .and_then(Value::as_str)
            .ok_or_else(|| ProtoError::schema(at("data"), "expected a base64 string"))?;

        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ProtoError::codec(at("shape"), "element count overflows"))?;
        let bytes = STANDARD
            .decode(encoded)
            .map_err(|e| ProtoError::codec(at("data"), e.to_string()))?;
        if Some(bytes.len()) != count.checked_mul(4) {
            return Err(ProtoError::codec(
                at("data"),
                format!(
                    "{} bytes is not {count} little-endian f32 values for shape {shape:?}",
                    bytes.len()
                ),
            ));
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ProtoError::codec(at("data"), "NaN or infinite value"));
        }
        out.push(NamedTensor {
            name: name.to_string(),
            tensor: Tensor::new(shape, data).expect("length checked"),
        });
    }
    let bundle = WeightsBundle::new(out);
    bundle
        .check_conforms(ModelSpec::LenetMnistV1)
        .map_err(|e| ProtoError::schema("weights", e.to_string()))?;
    Ok(bundle)
}
