//! On-disk reuse of forward passes, keyed by model and input digests.
//!
//! Enabled by pointing `EBNET_CACHE_DIR` at a writable directory. The forward
//! pass does not depend on the top-down signal, so one cached pass serves
//! every class and layer queried on the same image.

use std::path::PathBuf;

use anyhow::{bail, Result};
use ebnet_core::netgraph::{forward, ActivationCache, ModelBundle};
use ebnet_core::tensor::PoolMask;
use ebnet_core::Tensor;
use sha2::{Digest, Sha256};

pub const CACHE_DIR_ENV: &str = "EBNET_CACHE_DIR";
const MAGIC: &[u8] = b"EBCACHE1\n";

/// Forward pass through `model`, reading or filling the cache directory when
/// one is configured. Unreadable cache files are recomputed and replaced.
pub fn forward_cached(model: &ModelBundle, model_digest: &[u8; 32], input: &Tensor) -> Result<ActivationCache> {
    let Some(dir) = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from) else {
        return Ok(forward(model, input)?);
    };
    let mut h = Sha256::new();
    h.update(model_digest);
    for d in input.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in input.data() {
        h.update(v.to_le_bytes());
    }
    let key: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let path = dir.join(format!("{key}.cache"));
    if let Ok(bytes) = std::fs::read(&path) {
        match decode(&bytes).and_then(|c| c.check_model(model).map(|_| c).map_err(Into::into)) {
            Ok(cache) => {
                log::debug!("reusing forward pass {}", path.display());
                return Ok(cache);
            }
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let cache = forward(model, input)?;
    std::fs::create_dir_all(&dir)?;
    // write then rename so concurrent readers never see a partial file
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, encode(&cache))?;
    std::fs::rename(&tmp, &path)?;
    Ok(cache)
}

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_shape(out: &mut Vec<u8>, s: &[usize]) {
    put_u64(out, s.len());
    s.iter().for_each(|&d| put_u64(out, d));
}

pub fn encode(cache: &ActivationCache) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_shape(&mut out, &cache.input_shape);
    put_u64(&mut out, cache.ids().len());
    for ((id, t), mask) in cache.ids().iter().zip(cache.responses()).zip(cache.masks()) {
        put_u64(&mut out, id.len());
        out.extend_from_slice(id.as_bytes());
        put_shape(&mut out, t.shape());
        t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        match mask {
            None => out.push(0),
            Some(m) => {
                out.push(1);
                put_shape(&mut out, &m.input_shape);
                put_shape(&mut out, &m.output_shape);
                put_u64(&mut out, m.indices.len());
                m.indices.iter().for_each(|&i| put_u64(&mut out, i));
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            bail!("cache file is truncated");
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?) as usize)
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let n = self.u64()?;
        if n > 8 {
            bail!("implausible tensor rank {n}");
        }
        (0..n).map(|_| self.u64()).collect()
    }
}

pub fn decode(bytes: &[u8]) -> Result<ActivationCache> {
    if !bytes.starts_with(MAGIC) {
        bail!("not an activation cache");
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let input_shape = r.shape()?;
    let n = r.u64()?;
    let (mut ids, mut responses, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let len = r.u64()?;
        ids.push(String::from_utf8(r.take(len)?.to_vec())?);
        let shape = r.shape()?;
        let count: usize = shape.iter().product();
        let data = r
            .take(
                count
                    .checked_mul(8)
                    .ok_or_else(|| anyhow::anyhow!("tensor too large"))?,
            )?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        responses.push(Tensor::new(shape, data)?);
        masks.push(match r.take(1)?[0] {
            0 => None,
            _ => {
                let input_shape = r.shape()?;
                let output_shape = r.shape()?;
                let k = r.u64()?;
                let indices = (0..k).map(|_| r.u64()).collect::<Result<_>>()?;
                Some(PoolMask {
                    indices,
                    output_shape,
                    input_shape,
                })
            }
        });
    }
    if r.pos != bytes.len() {
        bail!("trailing bytes in cache file");
    }
    Ok(ActivationCache::from_parts(ids, responses, masks, input_shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ebnet_core::fixtures::{random_input, small_convnet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = small_convnet(&mut rng, 2, 8, (3, 4), 2);
        let cache = forward(&model, &random_input(&mut rng, &model)).unwrap();
        let bytes = encode(&cache);
        assert_eq!(decode(&bytes).unwrap(), cache);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"nope").is_err());
    }
}
