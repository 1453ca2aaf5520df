use std::net::TcpStream;
use std::os::unix::net::UnixStream;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use paintword::engine::error_from_code;
use paintword::generators::{GeneratorInfo, GeneratorModel, InteriorBase, InteriorShape, RegionLatent};
use paintword::scorers::{Prompt, SemanticScorer};
use paintword::tensor::{ImageTensor, LatentVector, Tensor3};
use paintword::{Error, Result};
use serde_json::{json, Value};

use super::{protocol_error, read_frame, to_f32, to_f64, write_frame, PROTOCOL_VERSION};

/// Where an adapter listens: `unix:<path>` or `tcp:<host:port>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Address {
    Unix(std::path::PathBuf),
    Tcp(String),
}

impl Address {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(p) = s.strip_prefix("unix:") {
            Ok(Address::Unix(p.into()))
        } else if let Some(a) = s.strip_prefix("tcp:") {
            Ok(Address::Tcp(a.into()))
        } else {
            Err(Error::InvalidConfig(format!(
                "adapter address {s:?} must start with unix: or tcp:"
            )))
        }
    }
}

enum Conn {
    Unix(UnixStream),
    Tcp(TcpStream),
}

impl Conn {
    fn open(addr: &Address, timeout: Duration) -> Result<Self> {
        let conn = match addr {
            Address::Unix(p) => {
                let s = UnixStream::connect(p)?;
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                Conn::Unix(s)
            }
            Address::Tcp(a) => {
                let s = TcpStream::connect(a)?;
                s.set_read_timeout(Some(timeout))?;
                s.set_write_timeout(Some(timeout))?;
                s.set_nodelay(true)?;
                Conn::Tcp(s)
            }
        };
        Ok(conn)
    }

    fn exchange(&mut self, header: &Value, payload: &[f32]) -> Result<Option<(Value, Vec<f32>)>> {
        match self {
            Conn::Unix(s) => {
                write_frame(s, header, payload)?;
                read_frame(s)
            }
            Conn::Tcp(s) => {
                write_frame(s, header, payload)?;
                read_frame(s)
            }
        }
    }
}

/// A connection to one adapter process. Calls are serialized; after a
/// timeout or protocol error the connection is dropped and reopened on the
/// next call.
pub struct AdapterClient {
    address: Address,
    timeout: Duration,
    conn: Mutex<Option<Conn>>,
}

impl AdapterClient {
    pub fn new(address: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            address: Address::parse(address)?,
            timeout,
            conn: Mutex::new(None),
        })
    }

    /// Sends one request and returns the successful reply. Error replies
    /// come back as the engine error they name.
    pub fn call(&self, header: Value, payload: &[f32]) -> Result<(Value, Vec<f32>)> {
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Conn::open(&self.address, self.timeout)?);
        }
        let conn = guard.as_mut().expect("just opened");
        let result = conn
            .exchange(&header, payload)
            .and_then(|r| r.ok_or_else(|| protocol_error("adapter closed the connection")));
        let (reply, data) = match result {
            Ok(ok) => ok,
            Err(e) => {
                *guard = None;
                return Err(e);
            }
        };
        match reply.get("ok").and_then(Value::as_bool) {
            Some(true) => Ok((reply, data)),
            Some(false) => {
                let code = reply
                    .get("code")
                    .and_then(Value::as_str)
                    .unwrap_or("ADAPTER_PROTOCOL_ERROR");
                let message = reply.get("message").and_then(Value::as_str).unwrap_or_default();
                Err(error_from_code(code, message.to_string()))
            }
            None => {
                *guard = None;
                Err(protocol_error("reply lacks an ok flag"))
            }
        }
    }

    /// Registration handshake: the adapter's model descriptions.
    pub fn hello(&self) -> Result<Vec<Value>> {
        let (reply, data) = self.call(json!({ "op": "hello", "protocol": PROTOCOL_VERSION }), &[])?;
        if !data.is_empty() {
            return Err(protocol_error("hello reply carries a payload"));
        }
        if reply.get("protocol").and_then(Value::as_u64) != Some(PROTOCOL_VERSION) {
            return Err(protocol_error(format!("unsupported protocol in {reply}")));
        }
        reply
            .get("models")
            .and_then(Value::as_array)
            .cloned()
            .ok_or_else(|| protocol_error("hello reply lacks a model list"))
    }

    fn describe(&self, name: &str, kind: &str) -> Result<Value> {
        self.hello()?
            .into_iter()
            .find(|m| m.get("name").and_then(Value::as_str) == Some(name))
            .filter(|m| m.get("kind").and_then(Value::as_str) == Some(kind))
            .ok_or_else(|| Error::UnknownModel(format!("adapter offers no {kind} named {name:?}")))
    }
}

fn shape_of(v: &Value) -> Option<Vec<usize>> {
    v.as_array()?.iter().map(|d| d.as_u64().map(|d| d as usize)).collect()
}

fn expect_shape(reply: &Value, data: &[f32], want: &[usize]) -> Result<()> {
    let got = reply.get("shape").and_then(shape_of);
    if got.as_deref() != Some(want) {
        return Err(protocol_error(format!(
            "expected shape {want:?}, adapter sent {:?}",
            reply.get("shape")
        )));
    }
    let n: usize = want.iter().product();
    if data.len() != n {
        return Err(protocol_error(format!(
            "expected {n} payload values, adapter sent {}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(protocol_error("adapter sent non-finite values"));
    }
    Ok(())
}

/// Describes a generator for the handshake.
pub fn describe_generator(name: &str, info: &GeneratorInfo) -> Value {
    let (c, h, w) = info.image_shape;
    let interior = match info.interior {
        InteriorShape::FeatureMap {
            channels,
            height,
            width,
        } => {
            json!({ "kind": "feature-map", "channels": channels, "height": height, "width": width })
        }
        InteriorShape::Style { dim } => json!({ "kind": "style", "dim": dim }),
    };
    json!({
        "name": name,
        "kind": "generator",
        "latent_dim": info.latent_dim,
        "image_shape": [c, h, w],
        "interior": interior,
    })
}

fn parse_generator(desc: &Value) -> Result<GeneratorInfo> {
    let bad = || protocol_error(format!("malformed generator description {desc}"));
    let latent_dim = desc.get("latent_dim").and_then(Value::as_u64).ok_or_else(bad)? as usize;
    let image = desc.get("image_shape").and_then(shape_of).ok_or_else(bad)?;
    let interior = desc.get("interior").ok_or_else(bad)?;
    let dim = |k: &str| {
        interior
            .get(k)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(bad)
    };
    let interior = match interior.get("kind").and_then(Value::as_str) {
        Some("feature-map") => InteriorShape::FeatureMap {
            channels: dim("channels")?,
            height: dim("height")?,
            width: dim("width")?,
        },
        Some("style") => InteriorShape::Style { dim: dim("dim")? },
        _ => return Err(bad()),
    };
    if latent_dim == 0 || image.len() != 3 || image.contains(&0) || interior.is_empty() {
        return Err(bad());
    }
    Ok(GeneratorInfo {
        latent_dim,
        image_shape: (image[0], image[1], image[2]),
        interior,
    })
}

/// Encodes an interior representation as a `compose_from` header fragment
/// and payload.
pub fn encode_interior(base: &InteriorBase) -> (Value, Vec<f32>) {
    match base {
        InteriorBase::FeatureMap(t) => (
            json!({ "kind": "feature-map", "shape": [t.channels, t.height, t.width] }),
            to_f32(&t.data),
        ),
        InteriorBase::Style(stack) => {
            let (h, w) = stack.layers.first().map_or((0, 0), |l| (l.mask.height, l.mask.width));
            let mut payload = to_f32(&stack.initial);
            for layer in &stack.layers {
                payload.extend(to_f32(&layer.style));
                payload.extend(layer.mask.bits().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
            }
            (
                json!({
                    "kind": "style",
                    "dim": stack.initial.len(),
                    "layers": stack.layers.len(),
                    "mask_shape": [h, w],
                }),
                payload,
            )
        }
    }
}

/// A generator living in an adapter process.
pub struct AdapterGenerator {
    client: Arc<AdapterClient>,
    name: String,
    info: GeneratorInfo,
}

impl AdapterGenerator {
    pub fn connect(client: Arc<AdapterClient>, name: &str) -> Result<Self> {
        let info = parse_generator(&client.describe(name, "generator")?)?;
        Ok(Self {
            client,
            name: name.to_string(),
            info,
        })
    }

    fn image(&self, reply: &Value, data: &[f32]) -> Result<ImageTensor> {
        let (c, h, w) = self.info.image_shape;
        expect_shape(reply, data, &[c, h, w])?;
        let t = Tensor3::from_vec(c, h, w, to_f64(data))?;
        ImageTensor::new(t).map_err(|e| protocol_error(format!("adapter image rejected: {e}")))
    }
}

impl GeneratorModel for AdapterGenerator {
    fn info(&self) -> &GeneratorInfo {
        &self.info
    }

    fn generate(&self, z: &LatentVector) -> Result<ImageTensor> {
        self.info.check_latent(z)?;
        let (reply, data) = self.client.call(
            json!({ "op": "generate", "model": self.name, "shape": [z.dim()] }),
            &to_f32(z.as_slice()),
        )?;
        self.image(&reply, &data)
    }

    fn extract_latent(&self, z: &LatentVector) -> Result<RegionLatent> {
        self.info.check_latent(z)?;
        let (reply, data) = self.client.call(
            json!({ "op": "extract_latent", "model": self.name, "shape": [z.dim()] }),
            &to_f32(z.as_slice()),
        )?;
        match self.info.interior {
            InteriorShape::FeatureMap {
                channels,
                height,
                width,
            } => {
                expect_shape(&reply, &data, &[channels, height, width])?;
                Ok(RegionLatent::FeatureMap(Tensor3::from_vec(
                    channels,
                    height,
                    width,
                    to_f64(&data),
                )?))
            }
            InteriorShape::Style { dim } => {
                expect_shape(&reply, &data, &[dim])?;
                Ok(RegionLatent::Style(to_f64(&data)))
            }
        }
    }

    fn compose(&self, base: &InteriorBase) -> Result<ImageTensor> {
        let (interior, payload) = encode_interior(base);
        let (reply, data) = self.client.call(
            json!({ "op": "compose_from", "model": self.name, "interior": interior }),
            &payload,
        )?;
        self.image(&reply, &data)
    }
}

/// A scorer living in an adapter process. Scores travel in the reply
/// header as JSON numbers, so they keep full precision.
pub struct AdapterScorer {
    client: Arc<AdapterClient>,
    name: String,
    range: (f64, f64),
}

impl AdapterScorer {
    pub fn connect(client: Arc<AdapterClient>, name: &str) -> Result<Self> {
        let desc = client.describe(name, "scorer")?;
        let range = desc
            .get("score_range")
            .and_then(Value::as_array)
            .and_then(|r| Some((r.first()?.as_f64()?, r.get(1)?.as_f64()?)))
            .filter(|(lo, hi)| lo < hi)
            .ok_or_else(|| protocol_error(format!("malformed scorer description {desc}")))?;
        Ok(Self {
            client,
            name: name.to_string(),
            range,
        })
    }
}

/// Describes a scorer for the handshake.
pub fn describe_scorer(name: &str, scorer: &dyn SemanticScorer) -> Value {
    let (lo, hi) = scorer.score_range();
    json!({ "name": name, "kind": "scorer", "score_range": [lo, hi] })
}

impl SemanticScorer for AdapterScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_range(&self) -> (f64, f64) {
        self.range
    }

    fn validate(&self, t: &Prompt) -> Result<()> {
        let (reply, data) = self.client.call(
            json!({ "op": "validate", "model": self.name, "prompt": t.as_str() }),
            &[],
        )?;
        if !data.is_empty() || reply.get("ok").is_none() {
            return Err(protocol_error("malformed validate reply"));
        }
        Ok(())
    }

    fn score(&self, x: &ImageTensor, t: &Prompt) -> Result<f64> {
        let (c, h, w) = x.shape();
        let (reply, data) = self.client.call(
            json!({ "op": "score", "model": self.name, "prompt": t.as_str(), "shape": [c, h, w] }),
            &x.to_f32_vec(),
        )?;
        if !data.is_empty() {
            return Err(protocol_error("score reply carries a payload"));
        }
        reply
            .get("score")
            .and_then(Value::as_f64)
            .filter(|s| s.is_finite())
            .ok_or_else(|| protocol_error(format!("score reply lacks a finite score: {reply}")))
    }
}
