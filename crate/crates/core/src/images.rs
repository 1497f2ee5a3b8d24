//! Preview-image backends. Images are opaque bytes stored in a [`KvStore`]
//! under [`content_key`]`(prompt, backend id, seed)`.

use serde_json::json;

pub use png::ColorType as PngColor;

use crate::error::{Error, Result};
use crate::hash::{hash_str, hash_u64s};
use crate::remote::RemoteConfig;
use crate::store::{content_key, KvStore};

pub trait ImageBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>>;
}

/// Procedural PNG derived from hash(prompt, seed): a two-colour gradient
/// with a few discs. Byte-identical for identical inputs.
#[derive(Debug, Clone, Copy)]
pub struct MockImageBackend {
    pub size: u32,
}

impl Default for MockImageBackend {
    fn default() -> Self {
        Self { size: 64 }
    }
}

impl ImageBackend for MockImageBackend {
    fn backend_id(&self) -> &str {
        "mock-image"
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>> {
        if prompt.trim().is_empty() {
            return Err(Error::Invalid("prompt must be non-empty".into()));
        }
        let size = self.size.max(1);
        let h = hash_str(seed, prompt);
        let color = |k: u64| {
            let v = hash_u64s(h, &[k]);
            [(v & 0xff) as f32, ((v >> 8) & 0xff) as f32, ((v >> 16) & 0xff) as f32]
        };
        let (top, bottom, disc) = (color(1), color(2), color(3));
        let discs: Vec<(f32, f32, f32)> = (0..3u64)
            .map(|k| {
                let v = hash_u64s(h, &[10 + k]);
                let s = size as f32;
                (
                    (v & 0xffff) as f32 / 65535.0 * s,
                    ((v >> 16) & 0xffff) as f32 / 65535.0 * s,
                    s * (0.08 + ((v >> 32) & 0xff) as f32 / 255.0 * 0.2),
                )
            })
            .collect();
        let mut pixels = Vec::with_capacity((size * size * 3) as usize);
        for y in 0..size {
            let t = y as f32 / size as f32;
            for x in 0..size {
                let inside = discs.iter().any(|(cx, cy, r)| {
                    let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                    dx * dx + dy * dy <= r * r
                });
                for c in 0..3 {
                    let v = if inside { disc[c] } else { top[c] * (1.0 - t) + bottom[c] * t };
                    pixels.push(v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        encode_png(size, size, png::ColorType::Rgb, &pixels)
    }
}

pub fn encode_png(width: u32, height: u32, color: png::ColorType, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        w.write_image_data(pixels)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Text-to-image service client: POST `{"prompt", "seed"}`, image bytes back.
#[derive(Debug, Clone)]
pub struct RemoteImageBackend {
    remote: RemoteConfig,
}

impl RemoteImageBackend {
    pub fn new(remote: RemoteConfig) -> Result<Self> {
        remote.validate()?;
        Ok(Self { remote })
    }
}

impl ImageBackend for RemoteImageBackend {
    fn backend_id(&self) -> &str {
        "remote-image"
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<Vec<u8>> {
        if prompt.trim().is_empty() {
            return Err(Error::Invalid("prompt must be non-empty".into()));
        }
        self.remote.post(&json!({ "prompt": prompt, "seed": seed }))
    }
}

/// Generates (or reuses) the image for `(prompt, seed)` and returns its key.
pub fn render_and_store(
    backend: &dyn ImageBackend,
    kv: &dyn KvStore,
    prompt: &str,
    seed: u64,
) -> Result<String> {
    let key = content_key(prompt, backend.backend_id(), seed);
    if !kv.contains(&key)? {
        let bytes = backend.generate(prompt, seed)?;
        kv.put(&key, &bytes)?;
    }
    Ok(key)
}

/// MIME type sniffed from magic bytes.
pub fn sniff_mime(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        "image/png"
    } else if bytes.starts_with(&[0xff, 0xd8, 0xff]) {
        "image/jpeg"
    } else if bytes.starts_with(b"RIFF") && bytes.get(8..12) == Some(b"WEBP") {
        "image/webp"
    } else {
        "application/octet-stream"
    }
}
