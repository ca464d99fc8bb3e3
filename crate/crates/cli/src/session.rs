//! Interactive sessions behind the HTTP API.
//!
//! A session's state is a fold over its journal (`journal.jsonl`, one
//! [`JournalRecord`] per line). Every mutation is computed, applied, then
//! appended together with the response it produced, so replaying the journal
//! rebuilds both the state and the idempotency cache.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use portrait_forge_core::cropkit::Bucket;
use portrait_forge_core::faceio::protocol::{decode_png_b64, encode_png_b64};
use portrait_forge_core::faceio::{detect_faces, embed_face, FaceBackend, FaceRecord, Landmarks};
use portrait_forge_core::genflow::{image_hash, map_landmarks_to_canvas, render_keypoints, KeypointImageSpec};
use portrait_forge_core::identity::{apply_filter, build_profile, rank_images, FilterPolicy, FilterSummary, ReferenceProfile};
use portrait_forge_core::imgcore::{warp_affine, ImageBuffer};
use portrait_forge_core::{Affine2, Error, Point, Similarity};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Frontalness warning fires when every reference is turned further than this.
pub const FRONTAL_LIMIT_DEG: f64 = 30.0;
pub const MAX_PLACEMENT_SCALE: f64 = 16.0;
pub const DEFAULT_TARGET_KEEPS: usize = 10;
const PREVIEW_FILL: [u8; 3] = [128, 128, 128];

/// An error with the HTTP status it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
    pub body: Option<Value>,
}

impl ApiError {
    pub fn new(status: u16, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            body: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = self.body.clone().unwrap_or_else(|| json!({}));
        v["error"] = json!(self.message);
        v
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::TooSmallInput(_) | Error::Protocol(_) | Error::Image(_) => 422,
            Error::DegenerateLandmarks(_) | Error::DegenerateProfile(_) => 409,
            Error::Backend(_) => 502,
            _ => 500,
        };
        ApiError::new(status, e.to_string())
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Keep,
    Discard,
}

/// An uploaded image and what the backend made of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredImage {
    pub id: String,
    /// Relative to the session directory.
    pub file: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<FaceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    /// Backend failure; the item stays unranked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Arrived after early stop; never sent to the backend.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pending: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    #[serde(default)]
    pub translate_x: f64,
    #[serde(default)]
    pub translate_y: f64,
    #[serde(default)]
    pub rotation_deg: f64,
    #[serde(default = "unit")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas_width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canvas_height: Option<u32>,
    /// Defaults to the first reference with a detected face.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_id: Option<String>,
}

fn unit() -> f64 {
    1.0
}

impl PlacementTransform {
    pub fn identity() -> Self {
        PlacementTransform {
            translate_x: 0.0,
            translate_y: 0.0,
            rotation_deg: 0.0,
            scale: 1.0,
            canvas_width: None,
            canvas_height: None,
            reference_id: None,
        }
    }

    /// Rotation and scaling about `center`, then translation.
    pub fn affine(&self, center: Point) -> Affine2 {
        Affine2::rotate_scale_about(center, self.rotation_deg, self.scale)
            .then(&Affine2::translation(self.translate_x, self.translate_y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        session_id: String,
        canvas: [u32; 2],
        target_keeps: usize,
        filter: FilterPolicy,
    },
    ReferencesAdded {
        items: Vec<StoredImage>,
    },
    Placement {
        reference_id: String,
        transform: PlacementTransform,
        landmarks: Landmarks,
        keypoints_sha256: String,
    },
    GalleryBatch {
        items: Vec<StoredImage>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_keeps: Option<usize>,
    },
    Decision {
        image_id: String,
        decision: Decision,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub status: u16,
    pub body: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub event: Event,
    pub response: CachedResponse,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub reference_id: String,
    pub transform: PlacementTransform,
    pub landmarks: Landmarks,
    pub keypoints_sha256: String,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    pub canvas: [u32; 2],
    pub target_keeps: usize,
    pub filter: FilterPolicy,
    pub references: Vec<StoredImage>,
    pub profile: Option<ReferenceProfile>,
    pub profile_error: Option<String>,
    pub placements: Vec<PlacementRecord>,
    pub gallery: Vec<StoredImage>,
    pub decisions: BTreeMap<String, Decision>,
    /// Request id that created the session, if the client sent one.
    pub created_request: Option<String>,
    responses: HashMap<String, CachedResponse>,
    seq: u64,
    journal: Option<File>,
}

#[derive(Clone, Debug, Default, Deserialize)]
pub struct CreateRequest {
    /// `[width, height]` of the generator output; defaults to 1024x1024.
    #[serde(default)]
    pub canvas: Option<[u32; 2]>,
    /// Alternative to `canvas`, e.g. `"1216x832"`.
    #[serde(default)]
    pub bucket: Option<String>,
    #[serde(default)]
    pub target_keeps: Option<usize>,
    #[serde(default)]
    pub filter: Option<FilterPolicy>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct UploadedImage {
    #[serde(default)]
    pub id: Option<String>,
    pub png_b64: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct UploadRequest {
    pub images: Vec<UploadedImage>,
    #[serde(default)]
    pub target_keeps: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
pub struct DecisionRequest {
    pub decision: Decision,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.')
}

impl Session {
    fn empty(id: &str, dir: PathBuf) -> Session {
        Session {
            id: id.to_owned(),
            dir,
            canvas: [1024, 1024],
            target_keeps: DEFAULT_TARGET_KEEPS,
            filter: FilterPolicy::default(),
            references: Vec::new(),
            profile: None,
            profile_error: None,
            placements: Vec::new(),
            gallery: Vec::new(),
            decisions: BTreeMap::new(),
            created_request: None,
            responses: HashMap::new(),
            seq: 0,
            journal: None,
        }
    }

    pub fn journal_path(dir: &Path) -> PathBuf {
        dir.join("journal.jsonl")
    }

    /// Starts a new session under `data_dir/<id>`.
    pub fn create(data_dir: &Path, id: &str, req: &CreateRequest, request_id: Option<&str>) -> ApiResult<(Session, Value)> {
        let canvas = match (&req.canvas, &req.bucket) {
            (Some(c), None) => *c,
            (None, Some(b)) => {
                let b: Bucket = b.parse().map_err(ApiError::from)?;
                [b.width, b.height]
            }
            (None, None) => [1024, 1024],
            (Some(_), Some(_)) => return Err(ApiError::new(422, "give either canvas or bucket, not both")),
        };
        if canvas[0] < 64 || canvas[1] < 64 || canvas[0] > 8192 || canvas[1] > 8192 {
            return Err(ApiError::new(422, format!("canvas {}x{} outside [64, 8192]", canvas[0], canvas[1])));
        }
        let filter = req.filter.unwrap_or_default();
        let target_keeps = req.target_keeps.unwrap_or(DEFAULT_TARGET_KEEPS);
        let dir = data_dir.join(id);
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::new(500, format!("cannot create session dir: {e}")))?;
        let mut s = Session::empty(id, dir);
        s.created_request = request_id.map(str::to_owned);
        let event = Event::Created {
            session_id: id.to_owned(),
            canvas,
            target_keeps,
            filter,
        };
        s.apply(&event);
        let body = s.summary();
        s.commit(request_id, event, 201, body.clone())?;
        Ok((s, body))
    }

    /// Rebuilds a session from its journal.
    pub fn open(dir: &Path) -> ApiResult<Session> {
        let path = Session::journal_path(dir);
        let f = File::open(&path).map_err(|e| ApiError::new(500, format!("{}: {e}", path.display())))?;
        let mut s: Option<Session> = None;
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| ApiError::new(500, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JournalRecord = serde_json::from_str(&line)
                .map_err(|e| ApiError::new(500, format!("{} line {}: {e}", path.display(), n + 1)))?;
            let sess = s.get_or_insert_with(|| {
                let id = match &rec.event {
                    Event::Created { session_id, .. } => session_id.clone(),
                    _ => dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                };
                Session::empty(&id, dir.to_owned())
            });
            if matches!(rec.event, Event::Created { .. }) {
                sess.created_request = rec.request_id.clone();
            }
            sess.apply(&rec.event);
            sess.seq = rec.seq;
            if let Some(rid) = rec.request_id {
                sess.responses.insert(rid, rec.response);
            }
        }
        s.ok_or_else(|| ApiError::new(500, format!("{} is empty", path.display())))
    }

    pub fn cached(&self, request_id: Option<&str>) -> Option<&CachedResponse> {
        request_id.and_then(|r| self.responses.get(r))
    }

    fn commit(&mut self, request_id: Option<&str>, event: Event, status: u16, body: Value) -> ApiResult<()> {
        self.seq += 1;
        let response = CachedResponse { status, body };
        let rec = JournalRecord {
            seq: self.seq,
            request_id: request_id.map(str::to_owned),
            event,
            response: response.clone(),
        };
        if self.journal.is_none() {
            let path = Session::journal_path(&self.dir);
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| ApiError::new(500, format!("{}: {e}", path.display())))?;
            self.journal = Some(f);
        }
        let line = serde_json::to_string(&rec).expect("journal record serializes");
        let f = self.journal.as_mut().expect("journal open");
        writeln!(f, "{line}")
            .and_then(|_| f.flush())
            .map_err(|e| ApiError::new(500, format!("journal write failed: {e}")))?;
        if let Some(r) = request_id {
            self.responses.insert(r.to_owned(), response);
        }
        Ok(())
    }

    /// Folds one event into the state. Pure with respect to the backend.
    pub fn apply(&mut self, event: &Event) {
        match event {
            Event::Created {
                session_id,
                canvas,
                target_keeps,
                filter,
            } => {
                self.id = session_id.clone();
                self.canvas = *canvas;
                self.target_keeps = *target_keeps;
                self.filter = *filter;
            }
            Event::ReferencesAdded { items } => {
                self.references.extend(items.iter().cloned());
                self.rebuild_profile();
            }
            Event::Placement {
                reference_id,
                transform,
                landmarks,
                keypoints_sha256,
            } => self.placements.push(PlacementRecord {
                reference_id: reference_id.clone(),
                transform: transform.clone(),
                landmarks: *landmarks,
                keypoints_sha256: keypoints_sha256.clone(),
            }),
            Event::GalleryBatch { items, target_keeps } => {
                if let Some(t) = target_keeps {
                    self.target_keeps = *t;
                }
                self.gallery.extend(items.iter().cloned());
            }
            Event::Decision { image_id, decision } => {
                self.decisions.insert(image_id.clone(), *decision);
            }
        }
    }

    fn rebuild_profile(&mut self) {
        let embeddings: Vec<Vec<f64>> = self.references.iter().filter_map(|r| r.embedding.clone()).collect();
        if embeddings.is_empty() {
            self.profile = None;
            self.profile_error = None;
            return;
        }
        match build_profile(&self.id, &embeddings) {
            Ok(p) => {
                self.profile = Some(p);
                self.profile_error = None;
            }
            Err(e) => {
                self.profile = None;
                self.profile_error = Some(e.to_string());
            }
        }
    }

    pub fn summary(&self) -> Value {
        json!({
            "session_id": self.id,
            "canvas": self.canvas,
            "target_keeps": self.target_keeps,
            "filter": self.filter,
            "references": self.references.len(),
            "has_profile": self.profile.is_some(),
            "placements": self.placements.len(),
            "gallery": self.gallery.len(),
        })
    }

    fn store_image(&self, sub: &str, id: &str, img: &ImageBuffer) -> ApiResult<String> {
        let rel = format!("{sub}/{id}.png");
        let path = self.dir.join(&rel);
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d).map_err(|e| ApiError::new(500, e.to_string()))?;
        }
        img.save_png(&path)?;
        Ok(rel)
    }

    fn decode_uploads(
        &self,
        images: &[UploadedImage],
        prefix: &str,
        existing: &[StoredImage],
    ) -> ApiResult<Vec<(String, ImageBuffer)>> {
        if images.is_empty() {
            return Err(ApiError::new(422, "no images in request"));
        }
        let mut ids: Vec<String> = existing.iter().map(|s| s.id.clone()).collect();
        let mut out = Vec::new();
        for (i, up) in images.iter().enumerate() {
            let id = up.id.clone().unwrap_or_else(|| format!("{prefix}_{:03}", existing.len() + i));
            if !valid_id(&id) {
                return Err(ApiError::new(422, format!("invalid image id '{id}'")));
            }
            if ids.contains(&id) {
                return Err(ApiError::new(422, format!("duplicate image id '{id}'")));
            }
            ids.push(id.clone());
            out.push((id, decode_png_b64(&up.png_b64)?));
        }
        Ok(out)
    }

    /// Detects and embeds each reference. A backend failure rejects the
    /// whole upload (nothing is recorded).
    pub fn add_references(
        &mut self,
        backend: &Arc<dyn FaceBackend>,
        req: &UploadRequest,
        request_id: Option<&str>,
    ) -> ApiResult<Value> {
        let decoded = self.decode_uploads(&req.images, "ref", &self.references)?;
        let mut items = Vec::new();
        for (id, img) in decoded {
            let faces = detect_faces(backend.as_ref(), &img)?;
            let face = faces.into_iter().next();
            let embedding = match &face {
                Some(f) => Some(embed_face(backend.as_ref(), &img, f)?),
                None => None,
            };
            let file = self.store_image("refs", &id, &img)?;
            items.push(StoredImage {
                id,
                file,
                width: img.width(),
                height: img.height(),
                face,
                embedding,
                error: None,
                pending: false,
            });
        }
        let event = Event::ReferencesAdded { items };
        self.apply(&event);
        let body = json!({
            "references": self.references.iter().map(|r| json!({
                "id": r.id,
                "face_detected": r.face.is_some(),
                "confidence": r.face.as_ref().map(|f| f.confidence),
                "yaw_deg": r.face.as_ref().and_then(|f| f.yaw_deg),
            })).collect::<Vec<_>>(),
            "profile": self.profile.as_ref().map(|p| json!({
                "n_references": p.n_references,
                "reference_distances": p.reference_distances,
            })),
            "profile_error": self.profile_error,
        });
        self.commit(request_id, event, 200, body.clone())?;
        Ok(body)
    }

    pub fn frontalness(&self) -> Value {
        let refs: Vec<Value> = self
            .references
            .iter()
            .map(|r| json!({ "id": r.id, "yaw_deg": r.face.as_ref().and_then(|f| f.yaw_deg) }))
            .collect();
        let yaws: Vec<f64> = self
            .references
            .iter()
            .filter_map(|r| r.face.as_ref().and_then(|f| f.yaw_deg))
            .collect();
        let warning = !yaws.is_empty() && yaws.iter().all(|y| y.abs() > FRONTAL_LIMIT_DEG);
        json!({
            "references": refs,
            "threshold_deg": FRONTAL_LIMIT_DEG,
            "warning": warning,
        })
    }

    fn placement_reference(&self, wanted: Option<&str>) -> ApiResult<(&StoredImage, &FaceRecord)> {
        let found = match wanted {
            Some(id) => {
                let r = self
                    .references
                    .iter()
                    .find(|r| r.id == id)
                    .ok_or_else(|| ApiError::new(404, format!("no reference '{id}'")))?;
                r.face.as_ref().map(|f| (r, f))
            }
            None => self.references.iter().find_map(|r| r.face.as_ref().map(|f| (r, f))),
        };
        found.ok_or_else(|| ApiError::new(409, "no detected face to place"))
    }

    pub fn placement(&mut self, t: &PlacementTransform, request_id: Option<&str>) -> ApiResult<Value> {
        let canvas = (self.canvas[0], self.canvas[1]);
        let (reference, face) = self.placement_reference(t.reference_id.as_deref())?;
        if !(t.scale.is_finite() && t.scale > 0.0 && t.scale <= MAX_PLACEMENT_SCALE) {
            return Err(ApiError::new(
                422,
                format!("scale {} outside (0, {MAX_PLACEMENT_SCALE}]", t.scale),
            ));
        }
        if ![t.translate_x, t.translate_y, t.rotation_deg].iter().all(|v| v.is_finite()) {
            return Err(ApiError::new(422, "transform values must be finite"));
        }
        if t.canvas_width.is_some_and(|w| w != canvas.0) || t.canvas_height.is_some_and(|h| h != canvas.1) {
            return Err(ApiError::new(
                422,
                format!("canvas must match the session's {}x{}", canvas.0, canvas.1),
            ));
        }
        let src_dims = (reference.width, reference.height);
        let base = map_landmarks_to_canvas(&face.landmarks, src_dims, canvas);
        let sx = canvas.0 as f64 / src_dims.0 as f64;
        let sy = canvas.1 as f64 / src_dims.1 as f64;
        let c = face.bbox.center();
        let center = Point::new(c.x * sx, c.y * sy);
        let affine = t.affine(center);
        let landmarks = base.map(|p| affine.apply(p));

        let keypoints = render_keypoints(&landmarks, &KeypointImageSpec::new(canvas.0, canvas.1))?;
        let keypoints_sha256 = image_hash(&keypoints)?;

        // preview: the face box of the reference, carried by the same transform
        let img = ImageBuffer::open(self.dir.join(&reference.file))?;
        let b = face.bbox;
        let left = b.left.floor().max(0.0) as u32;
        let top = b.top.floor().max(0.0) as u32;
        let right = ((b.left + b.width).ceil() as u32).min(img.width());
        let bottom = ((b.top + b.height).ceil() as u32).min(img.height());
        let crop = img.crop(left, top, right.saturating_sub(left).max(1), bottom.saturating_sub(top).max(1))?;
        let to_canvas = Affine2 {
            a: sx,
            d: sy,
            ..Affine2::IDENTITY
        };
        let forward = Affine2::translation(left as f64, top as f64).then(&to_canvas).then(&affine);
        let preview = warp_affine(&crop, &forward, canvas.0, canvas.1, PREVIEW_FILL)
            .ok_or_else(|| ApiError::new(422, "placement transform is singular"))?;

        let fit = Similarity::fit(&base, &landmarks).ok_or_else(|| ApiError::new(409, "degenerate landmarks"))?;
        let moved = fit.to_affine().apply(center);
        let reference_id = reference.id.clone();
        let mut echoed = t.clone();
        echoed.reference_id = Some(reference_id.clone());
        let body = json!({
            "reference_id": reference_id,
            "transform": echoed,
            "landmarks": landmarks,
            "keypoints_png_b64": encode_png_b64(&keypoints)?,
            "keypoints_sha256": keypoints_sha256,
            "preview_png_b64": encode_png_b64(&preview)?,
            "recovered": {
                "scale": fit.scale,
                "rotation_deg": fit.rotation_deg,
                "translate_x": moved.x - center.x,
                "translate_y": moved.y - center.y,
            },
        });
        let event = Event::Placement {
            reference_id,
            transform: echoed,
            landmarks,
            keypoints_sha256,
        };
        self.apply(&event);
        self.commit(request_id, event, 200, body.clone())?;
        Ok(body)
    }

    pub fn kept(&self) -> usize {
        self.gallery
            .iter()
            .filter(|g| self.decisions.get(&g.id) == Some(&Decision::Keep))
            .count()
    }

    pub fn early_stop(&self) -> bool {
        self.kept() >= self.target_keeps
    }

    /// Embeds a batch of generated images in arrival order. Once early stop
    /// is satisfied, further images are stored but not embedded.
    pub fn add_gallery(
        &mut self,
        backend: &Arc<dyn FaceBackend>,
        req: &UploadRequest,
        request_id: Option<&str>,
    ) -> ApiResult<Value> {
        if self.profile.is_none() {
            return Err(ApiError::new(409, "session has no reference profile yet"));
        }
        let decoded = self.decode_uploads(&req.images, "img", &self.gallery)?;
        if let Some(t) = req.target_keeps {
            self.target_keeps = t;
        }
        let stop = self.early_stop();
        let mut items = Vec::new();
        let mut backend_errors = Vec::new();
        for (id, img) in decoded {
            let file = self.store_image("gallery", &id, &img)?;
            let mut item = StoredImage {
                id: id.clone(),
                file,
                width: img.width(),
                height: img.height(),
                face: None,
                embedding: None,
                error: None,
                pending: stop,
            };
            if !stop {
                let result = detect_faces(backend.as_ref(), &img).and_then(|faces| match faces.into_iter().next() {
                    Some(f) => embed_face(backend.as_ref(), &img, &f).map(|e| (Some(f), Some(e))),
                    None => Ok((None, None)),
                });
                match result {
                    Ok((face, emb)) => {
                        item.face = face;
                        item.embedding = emb;
                    }
                    Err(e) => {
                        item.error = Some(e.to_string());
                        backend_errors.push(format!("{id}: {e}"));
                    }
                }
            }
            items.push(item);
        }
        let event = Event::GalleryBatch {
            items,
            target_keeps: req.target_keeps,
        };
        self.apply(&event);
        let page = self.gallery_page()?;
        let status = if backend_errors.is_empty() { 200 } else { 502 };
        let body = if backend_errors.is_empty() {
            page
        } else {
            let mut b = page;
            b["error"] = json!(format!("face backend failed: {}", backend_errors.join("; ")));
            b
        };
        self.commit(request_id, event, status, body.clone())?;
        if status == 502 {
            let mut err = ApiError::new(502, body["error"].as_str().unwrap_or_default());
            err.body = Some(body);
            return Err(err);
        }
        Ok(body)
    }

    /// Ranked items first (ascending distance), then no-face, unranked and
    /// pending items in arrival order.
    pub fn gallery_page(&self) -> ApiResult<Value> {
        let profile = self
            .profile
            .as_ref()
            .ok_or_else(|| ApiError::new(409, "session has no reference profile yet"))?;
        let candidates: Vec<(String, Vec<f64>)> = self
            .gallery
            .iter()
            .filter_map(|g| g.embedding.clone().map(|e| (g.id.clone(), e)))
            .collect();
        let mut items = Vec::new();
        let mut suggested_cut: Option<FilterSummary> = None;
        if !candidates.is_empty() {
            let report = apply_filter(&rank_images(&candidates, profile)?, &self.filter)?;
            suggested_cut = report.filter.clone();
            for it in &report.items {
                items.push(json!({
                    "id": it.id,
                    "status": "ranked",
                    "distance": (it.distance * 1e6).round() / 1e6,
                    "rank": it.rank,
                    "percentile": (it.percentile * 1e6).round() / 1e6,
                    "suggested_keep": it.kept,
                    "decision": self.decisions.get(&it.id),
                }));
            }
        }
        let tail = |status: &str, badge: Option<&str>, pick: &dyn Fn(&StoredImage) -> bool| -> Vec<Value> {
            self.gallery
                .iter()
                .filter(|g| pick(g))
                .map(|g| {
                    json!({
                        "id": g.id,
                        "status": status,
                        "badge": badge,
                        "error": g.error,
                        "decision": self.decisions.get(&g.id),
                    })
                })
                .collect()
        };
        items.extend(tail("no_face", Some("no face"), &|g| {
            !g.pending && g.error.is_none() && g.embedding.is_none()
        }));
        items.extend(tail("unranked", Some("unranked"), &|g| g.error.is_some()));
        items.extend(tail("pending", None, &|g| g.pending));
        Ok(json!({
            "items": items,
            "suggested_cut": suggested_cut,
            "kept": self.kept(),
            "target_keeps": self.target_keeps,
            "early_stop": self.early_stop(),
            "embedded": candidates.len(),
            "pending": self.gallery.iter().filter(|g| g.pending).count(),
        }))
    }

    pub fn decide(&mut self, image_id: &str, req: &DecisionRequest, request_id: Option<&str>) -> ApiResult<Value> {
        if !self.gallery.iter().any(|g| g.id == image_id) {
            return Err(ApiError::new(404, format!("no gallery image '{image_id}'")));
        }
        let event = Event::Decision {
            image_id: image_id.to_owned(),
            decision: req.decision,
        };
        self.apply(&event);
        let body = json!({
            "image_id": image_id,
            "decision": req.decision,
            "kept": self.kept(),
            "target_keeps": self.target_keeps,
            "early_stop": self.early_stop(),
        });
        self.commit(request_id, event, 200, body.clone())?;
        Ok(body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use portrait_forge_core::faceio::StubBackend;

    fn png_b64(w: u32, h: u32, seed: u8) -> String {
        let img = ImageBuffer::from_fn(w, h, |x, y| {
            [(x as u8).wrapping_mul(seed), (y as u8).wrapping_add(seed), seed]
        })
        .unwrap();
        encode_png_b64(&img).unwrap()
    }

    fn upload(n: usize, seed0: u8) -> UploadRequest {
        UploadRequest {
            images: (0..n)
                .map(|i| UploadedImage {
                    id: None,
                    png_b64: png_b64(96, 96, seed0 + i as u8),
                })
                .collect(),
            target_keeps: None,
        }
    }

    fn stub() -> Arc<dyn FaceBackend> {
        Arc::new(StubBackend)
    }

    #[test]
    fn placement_translation_and_identity() {
        let dir = tempfile::tempdir().unwrap();
        let (mut s, _) = Session::create(dir.path(), "s1", &CreateRequest::default(), None).unwrap();
        assert_eq!(s.placement(&PlacementTransform::identity(), None).unwrap_err().status, 409);
        s.add_references(&stub(), &upload(1, 3), None).unwrap();
        let id = s.placement(&PlacementTransform::identity(), None).unwrap();
        let r = &s.references[0];
        let mapped = map_landmarks_to_canvas(&r.face.as_ref().unwrap().landmarks, (96, 96), (1024, 1024));
        let got: Landmarks = serde_json::from_value(id["landmarks"].clone()).unwrap();
        assert_eq!(got, mapped);
        let moved = s
            .placement(&PlacementTransform { translate_x: 10.0, ..PlacementTransform::identity() }, None)
            .unwrap();
        let got2: Landmarks = serde_json::from_value(moved["landmarks"].clone()).unwrap();
        for (a, b) in got.iter().zip(&got2) {
            assert_eq!(b.x, a.x + 10.0);
            assert_eq!(b.y, a.y);
        }
        for bad in [0.0, -1.0, 16.5, f64::NAN] {
            let t = PlacementTransform { scale: bad, ..PlacementTransform::identity() };
            assert_eq!(s.placement(&t, None).unwrap_err().status, 422);
        }
    }

    #[test]
    fn journal_replay_restores_state_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let (mut s, _) = Session::create(dir.path(), "s2", &CreateRequest { target_keeps: Some(1), ..Default::default() }, Some("c1")).unwrap();
        s.add_references(&stub(), &upload(2, 5), Some("r1")).unwrap();
        s.add_gallery(&stub(), &upload(3, 40), Some("g1")).unwrap();
        s.decide("img_001", &DecisionRequest { decision: Decision::Keep }, Some("d1")).unwrap();
        // early stop reached: the next batch is not embedded
        let page = s.add_gallery(&stub(), &upload(2, 90), Some("g2")).unwrap();
        assert_eq!(page["pending"], 2);
        assert_eq!(page["early_stop"], true);

        let back = Session::open(&dir.path().join("s2")).unwrap();
        assert_eq!(back.references, s.references);
        assert_eq!(back.gallery, s.gallery);
        assert_eq!(back.decisions, s.decisions);
        assert_eq!(back.profile, s.profile);
        assert_eq!(back.gallery_page().unwrap(), s.gallery_page().unwrap());
        assert_eq!(back.cached(Some("g1")).unwrap().body, s.cached(Some("g1")).unwrap().body);
    }

    #[test]
    fn frontalness_rule() {
        let mut s = Session::empty("f", PathBuf::from("/nonexistent"));
        let with_yaw = |yaw: f64| {
            let mut f = StubBackend::face_for(100, 100);
            f.yaw_deg = Some(yaw);
            StoredImage {
                id: format!("r{yaw}"),
                file: String::new(),
                width: 100,
                height: 100,
                face: Some(f),
                embedding: None,
                error: None,
                pending: false,
            }
        };
        s.references = vec![with_yaw(0.0)];
        assert_eq!(s.frontalness()["warning"], false);
        s.references = vec![with_yaw(35.0), with_yaw(-40.0)];
        assert_eq!(s.frontalness()["warning"], true);
        s.references = vec![with_yaw(35.0), with_yaw(10.0)];
        assert_eq!(s.frontalness()["warning"], false);
    }
}
