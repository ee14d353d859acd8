use super::{dim_u32, put_f32s, put_u32, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::tensor::Tensor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"FMAP";
const VERSION: u32 = 1;

pub fn encode_fmap(fm: &FeatureMap) -> Result<Vec<u8>> {
    let (c, t, h, w) = fm.dims();
    let mut out = Vec::with_capacity(24 + 4 * fm.values().len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    for (v, what) in [(c, "channels"), (t, "slices"), (h, "height"), (w, "width")] {
        put_u32(&mut out, dim_u32(v, what)?);
    }
    put_f32s(&mut out, fm.values().data());
    Ok(out)
}

pub fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let at = r.pos();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for (d, what) in dims.iter_mut().zip(["channels", "slices", "height", "width"]) {
        *d = r.u32(what)? as usize;
    }
    let at = r.pos();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(at, "dimension product overflows"))?;
    if count == 0 {
        return Err(Error::format(at, format!("empty feature map {dims:?}")));
    }
    let values = r.f32s(count, "feature values")?;
    r.finish()?;
    FeatureMap::new(Tensor::new(dims.to_vec(), values)?)
}

pub fn load_fmap(path: &Path) -> Result<FeatureMap> {
    decode_fmap(&std::fs::read(path)?)
}

pub fn save_fmap(path: &Path, fm: &FeatureMap) -> Result<()> {
    write_atomic(path, &encode_fmap(fm)?)
}
