//! Wire format of the external face backend: one JSON object per line on the
//! child's stdin (requests) and stdout (responses).
//!
//! ```text
//! > {"id":1,"op":"detect","image_png_b64":"iVBOR..."}
//! < {"id":1,"ok":true,"faces":[{"bbox":[..],"landmarks":[[x,y],..],"confidence":0.99}]}
//! > {"id":2,"op":"embed","image_png_b64":"iVBOR...","landmarks":[[x,y],..]}
//! < {"id":2,"ok":true,"embedding":[..128 floats..]}
//! < {"id":3,"ok":false,"error":"model not loaded"}
//! ```
//!
//! Encoding is compact, with fields in the order shown, so decoding and
//! re-encoding a well-formed line reproduces it byte for byte.

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{FaceRecord, Landmarks};
use crate::error::{Error, Result};
use crate::imgcore::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Detect,
    Embed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub op: Op,
    pub image_png_b64: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<Landmarks>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub faces: Option<Vec<FaceRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Request {
    pub fn detect(id: u64, img: &ImageBuffer) -> Result<Request> {
        Ok(Request {
            id,
            op: Op::Detect,
            image_png_b64: encode_png_b64(img)?,
            landmarks: None,
        })
    }

    pub fn embed(id: u64, crop: &ImageBuffer, landmarks: &Landmarks) -> Result<Request> {
        Ok(Request {
            id,
            op: Op::Embed,
            image_png_b64: encode_png_b64(crop)?,
            landmarks: Some(*landmarks),
        })
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }

    pub fn decode(line: &str) -> Result<Request> {
        let req: Request = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| Error::Protocol(format!("malformed request: {e}")))?;
        if req.op == Op::Embed && req.landmarks.is_none() {
            return Err(Error::Protocol("embed request without landmarks".into()));
        }
        Ok(req)
    }

    pub fn image(&self) -> Result<ImageBuffer> {
        decode_png_b64(&self.image_png_b64)
    }
}

impl Response {
    pub fn faces(id: u64, faces: Vec<FaceRecord>) -> Response {
        Response {
            id,
            ok: true,
            faces: Some(faces),
            embedding: None,
            error: None,
        }
    }

    pub fn embedding(id: u64, embedding: Vec<f64>) -> Response {
        Response {
            id,
            ok: true,
            faces: None,
            embedding: Some(embedding),
            error: None,
        }
    }

    pub fn failure(id: u64, error: impl Into<String>) -> Response {
        Response {
            id,
            ok: false,
            faces: None,
            embedding: None,
            error: Some(error.into()),
        }
    }

    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    /// Parses and structurally validates one response line.
    pub fn decode(line: &str) -> Result<Response> {
        let resp: Response = serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| Error::Protocol(format!("malformed response: {e}")))?;
        match (resp.ok, &resp.faces, &resp.embedding, &resp.error) {
            (true, Some(_), None, None) | (true, None, Some(_), None) => {}
            (false, None, None, Some(_)) => {}
            _ => {
                return Err(Error::Protocol(format!(
                    "response {} mixes or lacks payload fields",
                    resp.id
                )))
            }
        }
        Ok(resp)
    }
}

pub fn encode_png_b64(img: &ImageBuffer) -> Result<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(img.to_png()?))
}

pub fn decode_png_b64(s: &str) -> Result<ImageBuffer> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| Error::Protocol(format!("bad base64 image: {e}")))?;
    ImageBuffer::decode(&bytes).map_err(|e| Error::Protocol(format!("bad image payload: {e}")))
}
