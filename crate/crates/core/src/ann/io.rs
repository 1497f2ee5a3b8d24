use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use super::ivfpq::{InvertedList, IvfPqIndex, IvfPqParams, CODEBOOK_SIZE};
use crate::error::{Error, Result};
use crate::store::write_atomic;

pub const INDEX_MAGIC: &[u8; 4] = b"PIDX";
pub const INDEX_VERSION: u32 = 1;

/// Layout (little-endian): magic, version, dim, nlist, m, bits_per_code,
/// nprobe, train_iters (u32 each), seed (u64), trained (u32), coarse
/// centroids, codebooks, then per list a u64 length followed by
/// `(u64 id, m-byte code)` entries.
pub fn save_index(index: &IvfPqIndex, path: &Path) -> Result<u64> {
    let bytes = encode_index(index)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

pub(crate) fn encode_index(index: &IvfPqIndex) -> Result<Vec<u8>> {
    let p = &index.params;
    let u32_of = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} exceeds u32")))
    };
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    for v in [
        INDEX_VERSION,
        u32_of(index.dim, "dim")?,
        u32_of(p.nlist, "nlist")?,
        u32_of(p.m, "m")?,
        p.bits_per_code,
        u32_of(p.nprobe, "nprobe")?,
        u32_of(p.train_iters, "train_iters")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&u32::from(index.trained).to_le_bytes());
    for v in index.coarse.iter().chain(&index.codebooks) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for list in &index.lists {
        out.extend_from_slice(&(list.ids.len() as u64).to_le_bytes());
        for (id, code) in list.ids.iter().zip(list.codes.chunks_exact(p.m)) {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(code);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated index file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn load_index(path: &Path) -> Result<IvfPqIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}

pub(crate) fn decode_index(bytes: &[u8]) -> Result<IvfPqIndex> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != INDEX_MAGIC {
        return Err(Error::Format("bad magic, expected PIDX".into()));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::Format(format!("unsupported index version {version}")));
    }
    let dim = r.u32()? as usize;
    let params = IvfPqParams {
        nlist: r.u32()? as usize,
        m: r.u32()? as usize,
        bits_per_code: r.u32()?,
        nprobe: r.u32()? as usize,
        train_iters: r.u32()? as usize,
        seed: r.u64()?,
    };
    params
        .validate(dim)
        .map_err(|e| Error::Format(format!("bad index params: {e}")))?;
    let trained = match r.u32()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("bad trained flag {v}"))),
    };
    let coarse = r.f32s(params.nlist * dim)?;
    let codebooks = r.f32s(CODEBOOK_SIZE * dim)?;
    let mut lists = Vec::with_capacity(params.nlist);
    let mut present = HashSet::new();
    for _ in 0..params.nlist {
        let len = usize::try_from(r.u64()?).map_err(|_| Error::Format("list too long".into()))?;
        let mut list = InvertedList::default();
        for _ in 0..len {
            let id = r.u64()?;
            if !present.insert(id) {
                return Err(Error::Format(format!("id {id} appears twice")));
            }
            list.ids.push(id);
            list.codes.extend_from_slice(r.take(params.m)?);
        }
        lists.push(list);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after index".into()));
    }
    Ok(IvfPqIndex {
        params,
        dim,
        coarse,
        codebooks,
        lists,
        trained,
        present,
    })
}
