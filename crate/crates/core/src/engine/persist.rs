//! Session directories: `manifest.json`, the latent and each accepted
//! `result_w` as weight-format containers, and PNG images.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{lock, AppliedEdit, EditRequest, EditSession, Engine, SessionState};
use crate::error::{Error, Result};
use crate::generators::{make_split_from_base, split_interior, InteriorBase};
use crate::io::{decode_mask_png, encode_mask_png, encode_png, Container};
use crate::losses::LossBreakdown;
use crate::tensor::LatentVector;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    session_id: String,
    generator: String,
    scorer: String,
    seed: Option<u64>,
    latent_file: String,
    current_image: String,
    edits: Vec<EditEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct EditEntry {
    edit_id: String,
    request: EditRequest,
    final_loss: LossBreakdown,
    initial_loss: LossBreakdown,
    evaluations: usize,
    started_at: f64,
    finished_at: f64,
    mask_file: String,
    result_w_file: String,
    image_file: String,
}

impl Engine {
    /// Writes the session (accepted history only) into `dir`.
    pub fn save_session(&self, id: &str, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let session = self.session(id)?;
        let s = lock(&session);

        let mut z = Container::new("latent");
        z.seed = s.seed;
        z.push("z", vec![s.z.dim()], s.z.0.clone());
        z.save(dir.join("z.bin"))?;
        std::fs::write(dir.join("current.png"), encode_png(&s.current_image)?)?;

        let mut edits = Vec::with_capacity(s.history.len());
        for (i, e) in s.history.iter().enumerate() {
            let stem = format!("edit-{:03}", i + 1);
            let entry = EditEntry {
                edit_id: e.edit_id.clone(),
                request: e.request.clone(),
                final_loss: e.final_loss,
                initial_loss: e.initial_loss,
                evaluations: e.evaluations,
                started_at: e.started_at,
                finished_at: e.finished_at,
                mask_file: format!("{stem}-mask.png"),
                result_w_file: format!("{stem}-w.bin"),
                image_file: format!("{stem}.png"),
            };
            std::fs::write(dir.join(&entry.mask_file), encode_mask_png(&e.mask)?)?;
            let mut w = Container::new("region-latent");
            w.meta = serde_json::json!({ "split_kind": e.result_w.kind() });
            w.push("w", vec![e.result_w.len()], e.result_w.as_slice().to_vec());
            w.save(dir.join(&entry.result_w_file))?;
            std::fs::write(dir.join(&entry.image_file), encode_png(&e.result_image)?)?;
            edits.push(entry);
        }

        let manifest = Manifest {
            format: FORMAT_VERSION,
            session_id: s.id.clone(),
            generator: s.generator.clone(),
            scorer: s.scorer.clone(),
            seed: s.seed,
            latent_file: "z.bin".into(),
            current_image: "current.png".into(),
            edits,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    /// Restores a saved session under a new id, rebuilding its state by
    /// applying each stored `result_w` in order. Fails with `FORMAT_ERROR`
    /// if a rebuilt image does not match its stored PNG.
    pub fn load_session(&self, dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported session format {}", manifest.format)));
        }
        let g = self.registry.generator(&manifest.generator)?;
        self.registry.scorer(&manifest.scorer)?;
        let zc = Container::load(dir.join(&manifest.latent_file))?;
        let z = LatentVector(zc.get("z")?.values.clone());
        g.info().check_latent(&z)?;

        let mut base = InteriorBase::from(g.extract_latent(&z)?);
        let mut image = g.compose(&base)?;
        let mut history = Vec::with_capacity(manifest.edits.len());
        for entry in manifest.edits {
            let mask = decode_mask_png(&std::fs::read(dir.join(&entry.mask_file))?)?;
            let split = make_split_from_base(g.as_ref(), &base, &mask)?;
            let wc = Container::load(dir.join(&entry.result_w_file))?;
            let result_w = split.original_inside.with_values(wc.get("w")?.values.clone())?;
            let new_base = split_interior(&split, &result_w)?;
            let result_image = g.compose(&new_base)?;
            let stored = std::fs::read(dir.join(&entry.image_file))?;
            if encode_png(&result_image)? != stored {
                return Err(Error::Format(format!(
                    "{} does not match its stored result",
                    entry.edit_id
                )));
            }
            let mut request = entry.request;
            request.mask = Some(mask.clone());
            history.push(AppliedEdit {
                edit_id: entry.edit_id,
                mask,
                request,
                result_w,
                result_image: result_image.clone(),
                final_loss: entry.final_loss,
                initial_loss: entry.initial_loss,
                evaluations: entry.evaluations,
                accepted: true,
                started_at: entry.started_at,
                finished_at: entry.finished_at,
                new_base: new_base.clone(),
            });
            base = new_base;
            image = result_image;
        }

        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let id = format!("s{n:06}");
        let edit_counter = history.len() as u64;
        let session = EditSession {
            id: id.clone(),
            generator: manifest.generator,
            scorer: manifest.scorer,
            seed: manifest.seed,
            z,
            current_image: image,
            history,
            state: SessionState::Idle,
            mask: None,
            base,
            edits: BTreeMap::new(),
            active: None,
            edit_counter,
        };
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }
}
