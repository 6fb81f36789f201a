use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap};
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use clayshape::ingest::{decode_png, encode_png, letterbox, GrayImage};
use clayshape::latent::{decode_latent, interpolate, knob_adjust, MeanLatentRow, DEFAULT_KNOB_RANGE};
use clayshape::nn::softmax_rows;
use clayshape::preprocess::{measure_ratio, PreprocessError};
use clayshape::vae::images_to_tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{multipart, ApiError, GroupLookupError, ServiceState};

type Shared = State<Arc<ServiceState>>;
type ApiResult = Result<Json<Value>, ApiError>;

fn png_b64(img: &GrayImage) -> String {
    STANDARD.encode(encode_png(img))
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn check_latent(state: &ServiceState, z: &[f64]) -> Result<(), ApiError> {
    let d = state.model.latent_dim();
    if z.len() != d {
        return Err(ApiError::bad_request(format!(
            "expected latent dimension {d}, got {}",
            z.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::bad_request("latent values must be finite"));
    }
    Ok(())
}

fn non_empty(q: &HashMap<String, String>, key: &str) -> Option<String> {
    q.get(key).map(|s| s.trim().to_string()).filter(|s| !s.is_empty())
}

fn lookup<'a>(state: &'a ServiceState, period: Option<&str>, genre: Option<&str>) -> Result<&'a MeanLatentRow, ApiError> {
    state.group(period, genre).map_err(|e| match e {
        GroupLookupError::Missing => ApiError::bad_request("give a period, a genre, or both"),
        GroupLookupError::Unknown { key, known } => {
            ApiError::not_found(format!("unknown group {key:?}; known groups: {}", known.join(", ")))
        }
    })
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub async fn health(State(state): Shared) -> Json<Value> {
    Json(json!({ "status": "ok", "latent_dim": state.model.latent_dim() }))
}

/// Periods present in the catalog, oldest first.
pub async fn periods(State(state): Shared) -> Json<Value> {
    let mut rows: Vec<&MeanLatentRow> = state.by_period.rows.iter().collect();
    rows.sort_by_key(|r| state.taxonomy.order_of(&r.group));
    let list: Vec<Value> = rows
        .iter()
        .map(|r| {
            let entry = state.taxonomy.get(&r.group);
            json!({
                "period": r.group,
                "era": entry.map(|e| e.era),
                "start_bce": entry.map(|e| e.start_bce),
                "end_bce": entry.map(|e| e.end_bce),
                "count": r.n,
            })
        })
        .collect();
    Json(json!({ "periods": list }))
}

pub async fn genres(State(state): Shared) -> Json<Value> {
    let list: Vec<Value> = state
        .by_genre
        .rows
        .iter()
        .map(|r| json!({ "genre": r.group, "count": r.n }))
        .collect();
    Json(json!({ "genres": list }))
}

pub async fn mean_tablet(State(state): Shared, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let (period, genre) = (non_empty(&q, "period"), non_empty(&q, "genre"));
    let row = lookup(&state, period.as_deref(), genre.as_deref())?;
    let img = decode_latent(&state.model, &row.mean_mu)?;
    Ok(Json(json!({
        "group": row.group,
        "n": row.n,
        "z": row.mean_mu,
        "image_png_b64": png_b64(&img),
    })))
}

#[derive(Deserialize)]
struct DecodeRequest {
    z: Vec<f64>,
}

pub async fn decode(State(state): Shared, body: Bytes) -> ApiResult {
    let req: DecodeRequest = parse_json(&body)?;
    check_latent(&state, &req.z)?;
    let img = decode_latent(&state.model, &req.z)?;
    Ok(Json(json!({ "image_png_b64": png_b64(&img) })))
}

#[derive(Deserialize)]
struct GroupRef {
    period: Option<String>,
    genre: Option<String>,
}

#[derive(Deserialize)]
struct InterpolateRequest {
    a: GroupRef,
    b: GroupRef,
    t: f64,
}

pub async fn interpolate_groups(State(state): Shared, body: Bytes) -> ApiResult {
    let req: InterpolateRequest = parse_json(&body)?;
    if !(0.0..=1.0).contains(&req.t) {
        return Err(ApiError::bad_request(format!("t = {} is outside [0, 1]", req.t)));
    }
    let a = lookup(&state, req.a.period.as_deref(), req.a.genre.as_deref())?;
    let b = lookup(&state, req.b.period.as_deref(), req.b.genre.as_deref())?;
    let (z, img) = interpolate(&state.model, &a.mean_mu, &b.mean_mu, req.t)?;
    Ok(Json(json!({ "z": z, "image_png_b64": png_b64(&img) })))
}


#[derive(Deserialize)]
struct KnobRequest {
    z: Vec<f64>,
    entry: usize,
    value: f64,
}

pub async fn knob(State(state): Shared, body: Bytes) -> ApiResult {
    let req: KnobRequest = parse_json(&body)?;
    check_latent(&state, &req.z)?;
    let (edit, img) = knob_adjust(&state.model, &req.z, req.entry, req.value, DEFAULT_KNOB_RANGE)?;
    Ok(Json(json!({
        "z": edit.z,
        "image_png_b64": png_b64(&img),
        "clamped": edit.clamped,
    })))
}

/// The PNG bytes of an upload: a multipart form field or the raw body.
fn upload_bytes<'a>(headers: &HeaderMap, body: &'a [u8]) -> Result<&'a [u8], ApiError> {
    let ct = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    let mime = ct.split(';').next().unwrap_or("").trim().to_ascii_lowercase();
    match mime.as_str() {
        "multipart/form-data" => {
            let boundary =
                multipart::boundary(&ct).ok_or_else(|| ApiError::bad_request("multipart upload has no boundary"))?;
            let parts = multipart::parse(body, &boundary).map_err(ApiError::bad_request)?;
            multipart::pick_file(&parts).ok_or_else(|| ApiError::bad_request("multipart upload has no parts"))
        }
        "" | "image/png" | "application/octet-stream" => Ok(body),
        other => Err(ApiError::unsupported_media(format!(
            "expected a PNG upload, got content type {other}"
        ))),
    }
}

pub async fn classify(State(state): Shared, headers: HeaderMap, body: Bytes) -> ApiResult {
    let bytes = upload_bytes(&headers, &body)?;
    let img = decode_png(bytes).map_err(|e| ApiError::unsupported_media(format!("could not decode PNG: {e}")))?;
    let img = letterbox(&img, state.model.image_size()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let measure = measure_ratio(&img, &state.mask_params).map_err(|e| match e {
        PreprocessError::NoComponent => ApiError::new(
            axum::http::StatusCode::UNPROCESSABLE_ENTITY,
            "no_component",
            "no component: the image mask is empty",
        ),
        other => ApiError::bad_request(other.to_string()),
    })?;
    let x = images_to_tensor(std::slice::from_ref(&img), &[0]).map_err(|e| ApiError::internal(e.to_string()))?;
    let (mu, _) = state.model.encode(&x).map_err(|e| ApiError::internal(e.to_string()))?;
    let logits = state.model.classify(&mu).map_err(|e| ApiError::internal(e.to_string()))?;
    let probs = softmax_rows(&logits).remove(0);
    let best = clayshape::classify::argmax(&probs);
    let map: serde_json::Map<String, Value> = state
        .class_labels
        .iter()
        .zip(&probs)
        .map(|(l, &p)| (l.clone(), json!(p)))
        .collect();
    Ok(Json(json!({
        "probs": map,
        "predicted": state.class_labels[best],
        "hw_ratio": measure.hw_ratio,
        "bbox": measure.bbox,
        "height_px": measure.height_px,
        "width_px": measure.width_px,
        "pixel_count": measure.pixel_count,
    })))
}

/// A catalog image matching the filters, chosen by `seed` (default 0).
pub async fn sample(State(state): Shared, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let (period, genre) = (non_empty(&q, "period"), non_empty(&q, "genre"));
    let seed = match non_empty(&q, "seed") {
        Some(s) => s
            .parse::<u64>()
            .map_err(|_| ApiError::bad_request(format!("seed {s:?} is not a non-negative integer")))?,
        None => 0,
    };
    let records = &state.catalog.records;
    let matches: Vec<usize> = state
        .readable
        .iter()
        .copied()
        .filter(|&i| period.as_deref().is_none_or(|p| records[i].period == p))
        .filter(|&i| genre.as_deref().is_none_or(|g| records[i].genre == g))
        .collect();
    if matches.is_empty() {
        return Err(ApiError::not_found(format!(
            "no catalog image matches period {period:?} and genre {genre:?}"
        )));
    }
    let pick = matches[ChaCha8Rng::seed_from_u64(seed).random_range(0..matches.len())];
    let rec = &records[pick];
    let img = clayshape::ingest::load_image(&state.catalog.image_path(rec), state.model.image_size())
        .map_err(|e| ApiError::internal(e.to_string()))?;
    // encode what the client receives, so re-encoding the PNG reproduces mu
    let png = encode_png(&img);
    let shown = decode_png(&png).map_err(|e| ApiError::internal(e.to_string()))?;
    let mu = state
        .model
        .encode_mu(std::slice::from_ref(&shown), &[0])
        .map_err(|e| ApiError::internal(e.to_string()))?
        .remove(0);
    Ok(Json(json!({
        "artifact_id": rec.artifact_id,
        "period": rec.period,
        "genre": rec.genre,
        "image_png_b64": STANDARD.encode(png),
        "mu": mu,
    })))
}
