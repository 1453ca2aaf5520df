use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::os::unix::net::UnixListener;
use std::sync::Arc;
use std::thread;

use paintword::generators::{GeneratorModel, InteriorBase, StyleLayer, StyleStack};
use paintword::scorers::{Prompt, SemanticScorer};
use paintword::tensor::{ImageTensor, LatentVector, Mask, Tensor3};
use paintword::{Error, Result};
use serde_json::{json, Value};

use super::client::{describe_generator, describe_scorer, Address};
use super::{protocol_error, read_frame, to_f32, to_f64, write_frame, PROTOCOL_VERSION};

/// The models one adapter process serves, by name.
#[derive(Default, Clone)]
pub struct AdapterModels {
    generators: BTreeMap<String, Arc<dyn GeneratorModel>>,
    scorers: BTreeMap<String, Arc<dyn SemanticScorer>>,
}

impl AdapterModels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_generator(mut self, name: &str, g: Arc<dyn GeneratorModel>) -> Self {
        self.generators.insert(name.to_string(), g);
        self
    }

    pub fn with_scorer(mut self, name: &str, c: Arc<dyn SemanticScorer>) -> Self {
        self.scorers.insert(name.to_string(), c);
        self
    }

    fn generator(&self, header: &Value) -> Result<&Arc<dyn GeneratorModel>> {
        let name = model_name(header)?;
        self.generators
            .get(name)
            .ok_or_else(|| Error::UnknownModel(format!("no generator named {name:?}")))
    }

    fn scorer(&self, header: &Value) -> Result<&Arc<dyn SemanticScorer>> {
        let name = model_name(header)?;
        self.scorers
            .get(name)
            .ok_or_else(|| Error::UnknownModel(format!("no scorer named {name:?}")))
    }

    /// Answers one request. Errors become `{"ok": false, ...}` replies at
    /// the call site.
    pub fn handle(&self, header: &Value, payload: &[f32]) -> Result<(Value, Vec<f32>)> {
        let op = header
            .get("op")
            .and_then(Value::as_str)
            .ok_or_else(|| protocol_error("request lacks an op"))?;
        match op {
            "hello" => {
                let models: Vec<Value> = self
                    .generators
                    .iter()
                    .map(|(n, g)| describe_generator(n, g.info()))
                    .chain(self.scorers.iter().map(|(n, c)| describe_scorer(n, c.as_ref())))
                    .collect();
                Ok((
                    json!({ "ok": true, "protocol": PROTOCOL_VERSION, "models": models }),
                    Vec::new(),
                ))
            }
            "generate" | "extract_latent" => {
                let g = self.generator(header)?;
                check_shape(header, payload)?;
                let z = LatentVector(to_f64(payload));
                if op == "generate" {
                    Ok(image_reply(&g.generate(&z)?))
                } else {
                    let w = g.extract_latent(&z)?;
                    let (shape, data) = match &w {
                        paintword::generators::RegionLatent::FeatureMap(t) => {
                            (json!([t.channels, t.height, t.width]), to_f32(&t.data))
                        }
                        paintword::generators::RegionLatent::Style(s) => (json!([s.len()]), to_f32(s)),
                    };
                    Ok((json!({ "ok": true, "shape": shape }), data))
                }
            }
            "compose_from" => {
                let g = self.generator(header)?;
                let interior = header
                    .get("interior")
                    .ok_or_else(|| protocol_error("compose_from lacks an interior"))?;
                let base = decode_interior(interior, payload)?;
                Ok(image_reply(&g.compose(&base)?))
            }
            "validate" => {
                let c = self.scorer(header)?;
                c.validate(&prompt(header)?)?;
                Ok((json!({ "ok": true }), Vec::new()))
            }
            "score" => {
                let c = self.scorer(header)?;
                let shape = check_shape(header, payload)?;
                let [ch, h, w] = shape[..] else {
                    return Err(Error::dims(format!("score expects a 3-d image, got shape {shape:?}")));
                };
                let x = ImageTensor::new(Tensor3::from_vec(ch, h, w, to_f64(payload))?)?;
                let s = c.score(&x, &prompt(header)?)?;
                Ok((json!({ "ok": true, "score": s }), Vec::new()))
            }
            other => Err(protocol_error(format!("unknown op {other:?}"))),
        }
    }
}

fn model_name(header: &Value) -> Result<&str> {
    header
        .get("model")
        .and_then(Value::as_str)
        .ok_or_else(|| protocol_error("request lacks a model name"))
}

fn prompt(header: &Value) -> Result<Prompt> {
    Prompt::new(
        header
            .get("prompt")
            .and_then(Value::as_str)
            .ok_or_else(|| protocol_error("request lacks a prompt"))?,
    )
}

fn dims(v: Option<&Value>) -> Option<Vec<usize>> {
    v?.as_array()?.iter().map(|d| d.as_u64().map(|d| d as usize)).collect()
}

/// The declared shape, checked against the payload length.
fn check_shape(header: &Value, payload: &[f32]) -> Result<Vec<usize>> {
    let shape = dims(header.get("shape")).ok_or_else(|| protocol_error("request lacks a shape"))?;
    let n: usize = shape.iter().product();
    if n != payload.len() {
        return Err(Error::dims(format!(
            "shape {shape:?} needs {n} values, payload has {}",
            payload.len()
        )));
    }
    Ok(shape)
}

fn image_reply(img: &ImageTensor) -> (Value, Vec<f32>) {
    let (c, h, w) = img.shape();
    (json!({ "ok": true, "shape": [c, h, w] }), img.to_f32_vec())
}

fn decode_interior(interior: &Value, payload: &[f32]) -> Result<InteriorBase> {
    match interior.get("kind").and_then(Value::as_str) {
        Some("feature-map") => {
            let shape = dims(interior.get("shape")).ok_or_else(|| protocol_error("feature map lacks a shape"))?;
            let [c, h, w] = shape[..] else {
                return Err(Error::dims(format!("feature map shape {shape:?} is not 3-d")));
            };
            Ok(InteriorBase::FeatureMap(Tensor3::from_vec(c, h, w, to_f64(payload))?))
        }
        Some("style") => {
            let num = |k: &str| {
                interior
                    .get(k)
                    .and_then(Value::as_u64)
                    .map(|v| v as usize)
                    .ok_or_else(|| protocol_error(format!("style interior lacks {k}")))
            };
            let (dim, layers) = (num("dim")?, num("layers")?);
            let mask_shape = dims(interior.get("mask_shape")).unwrap_or_default();
            let (h, w) = match mask_shape[..] {
                [h, w] => (h, w),
                _ => return Err(protocol_error("style interior lacks a mask_shape")),
            };
            let need = dim + layers * (dim + h * w);
            if payload.len() != need {
                return Err(Error::dims(format!(
                    "style interior needs {need} values, payload has {}",
                    payload.len()
                )));
            }
            let values = to_f64(payload);
            let mut rest = &values[dim..];
            let mut stack = StyleStack::uniform(values[..dim].to_vec());
            for _ in 0..layers {
                let (style, tail) = rest.split_at(dim);
                let (bits, tail) = tail.split_at(h * w);
                stack.layers.push(StyleLayer {
                    mask: Mask::from_bits(h, w, bits.iter().map(|&b| b > 0.5).collect())?,
                    style: style.to_vec(),
                });
                rest = tail;
            }
            Ok(InteriorBase::Style(stack))
        }
        _ => Err(protocol_error(format!("unknown interior {interior}"))),
    }
}

fn serve_connection(mut stream: impl Read + Write, models: &AdapterModels) {
    loop {
        let (header, payload) = match read_frame(&mut stream) {
            Ok(Some(frame)) => frame,
            Ok(None) => return,
            Err(e) => {
                tracing::warn!("adapter connection dropped: {e}");
                return;
            }
        };
        let (reply, data) = models.handle(&header, &payload).unwrap_or_else(|e| {
            (
                json!({ "ok": false, "code": e.code(), "message": e.to_string() }),
                Vec::new(),
            )
        });
        if let Err(e) = write_frame(&mut stream, &reply, &data) {
            tracing::warn!("adapter reply failed: {e}");
            return;
        }
    }
}

enum Listener {
    Unix(UnixListener),
    Tcp(TcpListener),
}

fn bind(address: &str) -> Result<(Listener, String)> {
    match Address::parse(address)? {
        Address::Unix(path) => {
            if path.exists() {
                std::fs::remove_file(&path)?;
            }
            let l = UnixListener::bind(&path)?;
            Ok((Listener::Unix(l), format!("unix:{}", path.display())))
        }
        Address::Tcp(a) => {
            let l = TcpListener::bind(&a)?;
            let local = l.local_addr()?;
            Ok((Listener::Tcp(l), format!("tcp:{local}")))
        }
    }
}

fn accept_loop(listener: Listener, models: Arc<AdapterModels>) {
    match listener {
        Listener::Unix(l) => {
            for stream in l.incoming().flatten() {
                let models = models.clone();
                thread::spawn(move || serve_connection(stream, &models));
            }
        }
        Listener::Tcp(l) => {
            for stream in l.incoming().flatten() {
                let _ = stream.set_nodelay(true);
                let models = models.clone();
                thread::spawn(move || serve_connection(stream, &models));
            }
        }
    }
}

/// Serves `models` on `address` (`unix:<path>` or `tcp:<host:port>`),
/// one thread per connection. Blocks forever.
pub fn serve(address: &str, models: AdapterModels) -> Result<()> {
    let (listener, bound) = bind(address)?;
    tracing::info!("adapter listening on {bound}");
    accept_loop(listener, Arc::new(models));
    Ok(())
}

/// Binds `address` and serves on a background thread. Returns the bound
/// address, with any `:0` port resolved.
pub fn spawn(address: &str, models: AdapterModels) -> Result<String> {
    let (listener, bound) = bind(address)?;
    let models = Arc::new(models);
    thread::spawn(move || accept_loop(listener, models));
    Ok(bound)
}
