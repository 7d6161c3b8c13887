//! Binary checkpoint container.
//!
//! | offset | field                                   |
//! |--------|-----------------------------------------|
//! | 0      | magic `STMP`                            |
//! | 4      | u32 version = 1                         |
//! | 8      | u32 config length `c`                   |
//! | 12     | config as JSON, `c` bytes               |
//! | 12+c   | u32 table count                         |
//!
//! Each table follows in canonical order: u32 name length, UTF-8 name,
//! u32 rank, one u64 per dim, then the f32 values. All integers and floats
//! are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{StampConfig, StampModel, StampParams};
use crate::error::{Result, StampError};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STMP";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &StampModel) -> Result<Vec<u8>> {
    let config = serde_json::to_vec(&model.config)?;
    let mut out = Vec::with_capacity(16 + config.len() + 4 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let tables = model.params.named();
    out.extend_from_slice(&(tables.len() as u32).to_le_bytes());
    for (name, t) in tables {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => StampError::Format {
                    offset: self.offset,
                    message: format!("checkpoint truncated while reading {what}"),
                },
                _ => StampError::Io(e),
            })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.bytes(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(reader: impl Read) -> Result<StampModel> {
    let mut r = Cursor {
        inner: reader,
        offset: 0,
    };
    let magic = r.bytes(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(StampError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"STMP\""),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(StampError::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let config_len = r.u32("config length")? as usize;
    let config_offset = r.offset;
    let config: StampConfig =
        serde_json::from_slice(&r.bytes(config_len, "config")?).map_err(|e| {
            StampError::Format {
                offset: config_offset,
                message: format!("config: {e}"),
            }
        })?;
    let template = StampParams::<Tensor<f32>>::init(&config, 0)?;
    let expected = template.shapes();
    let count_offset = r.offset;
    let count = r.u32("table count")? as usize;
    if count != expected.len() {
        return Err(StampError::Format {
            offset: count_offset,
            message: format!("{count} tables, config implies {}", expected.len()),
        });
    }
    let mut tables = Vec::with_capacity(count);
    for (want_name, want_shape) in expected {
        let at = r.offset;
        let name_len = r.u32("table name length")? as usize;
        let name = String::from_utf8(r.bytes(name_len, "table name")?).map_err(|_| {
            StampError::Format {
                offset: at,
                message: "table name is not UTF-8".into(),
            }
        })?;
        if name != want_name {
            return Err(StampError::Format {
                offset: at,
                message: format!("table `{name}` where `{want_name}` was expected"),
            });
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dim")? as usize);
        }
        if shape != want_shape {
            return Err(StampError::Format {
                offset: at,
                message: format!(
                    "table `{name}` has dims {shape:?}, config implies {want_shape:?}"
                ),
            });
        }
        let n: usize = shape.iter().product();
        let raw = r.bytes(4 * n, &format!("table `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tables.push(Tensor::new(shape, data)?);
    }
    let params = template.with_values(tables).expect("table count checked");
    Ok(StampModel { config, params })
}

pub fn save_checkpoint(model: &StampModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_checkpoint(model)?)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<StampModel> {
    decode_checkpoint(BufReader::new(File::open(path)?))
}
