//! STEB: a little-endian container of embedding grids.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "STEB"
//!      4     4  version (u32, currently 1)
//!      8     8  n_samples (u64)
//!     16     4  S (u32)
//!     20     4  T (u32)
//!     24     4  ℓ (u32)
//!     28     4  n_classes (u32)
//!     32     4  dtype code (u32, 1 = f32 little-endian)
//!     36     8  payload length in bytes (u64) = n_samples·(S·T·ℓ·4 + 4)
//!     44     4  metadata length m (u32)
//!     48     m  metadata, UTF-8 JSON: {"sample_ids": [...], "axis_names": {...} | null}
//!   48+m     …  payload: per sample, S·T·ℓ f32 values (row-major over s, t, ℓ)
//!               followed by its u32 label
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, EmbeddingGrid};
use crate::error::{Result, StampError};

pub const STEB_MAGIC: [u8; 4] = *b"STEB";
pub const STEB_VERSION: u32 = 1;
const DTYPE_F32_LE: u32 = 1;
const FIXED_HEADER_LEN: u64 = 48;

/// Optional human-readable labels for each grid axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisNames {
    #[serde(default)]
    pub spatial: Vec<String>,
    #[serde(default)]
    pub temporal: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    sample_ids: Vec<String>,
    axis_names: Option<AxisNames>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_samples: u64,
    pub dims: [usize; 3],
    pub n_classes: usize,
    pub sample_ids: Vec<String>,
    pub axis_names: Option<AxisNames>,
}

impl DatasetHeader {
    pub fn sample_bytes(&self) -> u64 {
        let [s, t, l] = self.dims;
        (s * t * l) as u64 * 4 + 4
    }

    pub fn payload_len(&self) -> u64 {
        self.n_samples * self.sample_bytes()
    }

    fn metadata_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&Metadata {
            sample_ids: self.sample_ids.clone(),
            axis_names: self.axis_names.clone(),
        })?)
    }

    /// Header length in bytes, i.e. the offset of the first sample.
    pub fn encoded_len(&self) -> Result<u64> {
        Ok(FIXED_HEADER_LEN + self.metadata_bytes()?.len() as u64)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = self.metadata_bytes()?;
        let u32_of = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| StampError::Data(format!("{what} {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN as usize + meta.len());
        out.extend_from_slice(&STEB_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.n_samples.to_le_bytes());
        for (v, what) in self.dims.iter().zip(["S", "T", "ell"]) {
            out.extend_from_slice(&u32_of(*v, what)?.to_le_bytes());
        }
        out.extend_from_slice(&u32_of(self.n_classes, "n_classes")?.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32_LE.to_le_bytes());
        out.extend_from_slice(&self.payload_len().to_le_bytes());
        out.extend_from_slice(&u32_of(meta.len(), "metadata length")?.to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(StampError::Format {
                    offset: *offset + filled as u64,
                    message: format!(
                        "truncated {what}: expected {} more bytes, found {filled}",
                        buf.len()
                    ),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

/// Streaming reader: the header is parsed eagerly, samples on demand.
pub struct StebReader<R> {
    inner: R,
    header: DatasetHeader,
    offset: u64,
    next: u64,
}

impl StebReader<BufReader<File>> {
    /// Opens `path` and checks its length against the declared payload.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref())?;
        let actual = file.metadata()?.len();
        let reader = StebReader::new(BufReader::new(file))?;
        let expected = reader.header.encoded_len()? + reader.header.payload_len();
        if actual != expected {
            return Err(StampError::Format {
                offset: actual.min(expected),
                message: format!("file length {actual} bytes, header declares {expected} bytes"),
            });
        }
        Ok(reader)
    }
}

impl<R: Read> StebReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut offset = 0u64;
        let mut fixed = [0u8; FIXED_HEADER_LEN as usize];
        read_exact_at(&mut inner, &mut fixed, &mut offset, "header")?;
        if fixed[0..4] != STEB_MAGIC {
            return Err(StampError::Format {
                offset: 0,
                message: format!("bad magic {:?}, expected \"STEB\"", &fixed[0..4]),
            });
        }
        let u32_at = |i: usize| u32::from_le_bytes(fixed[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(fixed[i..i + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != STEB_VERSION {
            return Err(StampError::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let n_samples = u64_at(8);
        let dims = [
            u32_at(16) as usize,
            u32_at(20) as usize,
            u32_at(24) as usize,
        ];
        let n_classes = u32_at(28) as usize;
        if dims.contains(&0) || n_classes == 0 {
            return Err(StampError::Format {
                offset: 16,
                message: format!("dims {dims:?} and n_classes {n_classes} must be positive"),
            });
        }
        let dtype = u32_at(32);
        if dtype != DTYPE_F32_LE {
            return Err(StampError::Format {
                offset: 32,
                message: format!("unsupported dtype code {dtype}"),
            });
        }
        let declared_payload = u64_at(36);
        let meta_len = u32_at(44) as usize;
        let mut meta = vec![0u8; meta_len];
        read_exact_at(&mut inner, &mut meta, &mut offset, "metadata")?;
        let meta: Metadata = serde_json::from_slice(&meta).map_err(|e| StampError::Format {
            offset: FIXED_HEADER_LEN,
            message: format!("metadata: {e}"),
        })?;
        if meta.sample_ids.len() as u64 != n_samples {
            return Err(StampError::Format {
                offset: FIXED_HEADER_LEN,
                message: format!(
                    "{} sample ids for {n_samples} samples",
                    meta.sample_ids.len()
                ),
            });
        }
        let header = DatasetHeader {
            version,
            n_samples,
            dims,
            n_classes,
            sample_ids: meta.sample_ids,
            axis_names: meta.axis_names,
        };
        if header.payload_len() != declared_payload {
            return Err(StampError::Format {
                offset: 36,
                message: format!(
                    "declared payload {declared_payload} bytes, dims imply {}",
                    header.payload_len()
                ),
            });
        }
        Ok(Self {
            inner,
            header,
            offset,
            next: 0,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn read_sample(&mut self) -> Result<Option<EmbeddingGrid>> {
        if self.next >= self.header.n_samples {
            return Ok(None);
        }
        let mut buf = vec![0u8; self.header.sample_bytes() as usize];
        let what = format!("sample {}", self.next);
        read_exact_at(&mut self.inner, &mut buf, &mut self.offset, &what)?;
        let (values, label) = buf.split_at(buf.len() - 4);
        let embeddings = values
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let label = u32::from_le_bytes(label.try_into().unwrap()) as usize;
        let id = self.header.sample_ids[self.next as usize].clone();
        self.next += 1;
        if label >= self.header.n_classes {
            return Err(StampError::Format {
                offset: self.offset - 4,
                message: format!("label {label} >= n_classes {}", self.header.n_classes),
            });
        }
        EmbeddingGrid::new(id, label, self.header.dims, embeddings).map(Some)
    }

    pub fn into_dataset(mut self) -> Result<Dataset> {
        let mut samples = Vec::with_capacity(self.header.n_samples as usize);
        while let Some(s) = self.read_sample()? {
            samples.push(s);
        }
        let mut ds = Dataset::new(self.header.dims, self.header.n_classes, samples)?;
        ds.axis_names = self.header.axis_names.clone();
        Ok(ds)
    }
}

impl<R: Read> Iterator for StebReader<R> {
    type Item = Result<EmbeddingGrid>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_sample().transpose()
    }
}

/// Streaming writer; the header (with all sample ids) goes out first.
pub struct StebWriter<W: Write> {
    inner: W,
    header: DatasetHeader,
    written: u64,
}

impl<W: Write> StebWriter<W> {
    pub fn new(mut inner: W, header: DatasetHeader) -> Result<Self> {
        inner.write_all(&header.encode()?)?;
        Ok(Self {
            inner,
            header,
            written: 0,
        })
    }

    pub fn write_sample(&mut self, sample: &EmbeddingGrid) -> Result<()> {
        let idx = self.written as usize;
        if self.written >= self.header.n_samples {
            return Err(StampError::Usage(
                "more samples than the header declares".into(),
            ));
        }
        if sample.dims() != self.header.dims {
            return Err(StampError::Data(format!(
                "sample `{}` dims {:?} differ from header {:?}",
                sample.sample_id(),
                sample.dims(),
                self.header.dims
            )));
        }
        if sample.sample_id() != self.header.sample_ids[idx] {
            return Err(StampError::Data(format!(
                "sample `{}` written where header lists `{}`",
                sample.sample_id(),
                self.header.sample_ids[idx]
            )));
        }
        let mut buf = Vec::with_capacity(self.header.sample_bytes() as usize);
        for v in sample.embeddings() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(sample.label() as u32).to_le_bytes());
        self.inner.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.n_samples {
            return Err(StampError::Usage(format!(
                "wrote {} of {} declared samples",
                self.written, self.header.n_samples
            )));
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

impl Dataset {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: STEB_VERSION,
            n_samples: self.samples.len() as u64,
            dims: self.dims,
            n_classes: self.n_classes,
            sample_ids: self
                .samples
                .iter()
                .map(|s| s.sample_id().to_string())
                .collect(),
            axis_names: self.axis_names.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = StebWriter::new(Vec::new(), self.header())?;
        for s in &self.samples {
            w.write_sample(s)?;
        }
        w.finish()
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let file = BufWriter::new(File::create(path)?);
    let mut w = StebWriter::new(file, dataset.header())?;
    for s in &dataset.samples {
        w.write_sample(s)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    StebReader::open(path)?.into_dataset()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let dims = [3, 2, 8];
        let samples = (0..n)
            .map(|i| {
                let v = (0..48).map(|j| (i * 100 + j) as f32 * 0.25 - 3.0).collect();
                EmbeddingGrid::new(format!("id{i}"), i % 3, dims, v).unwrap()
            })
            .collect();
        Dataset::new(dims, 3, samples).unwrap()
    }

    #[test]
    fn header_declares_payload_length() {
        let h = tiny(10).header();
        assert_eq!(h.payload_len(), 1960);
        let bytes = h.encode().unwrap();
        assert_eq!(u64::from_le_bytes(bytes[36..44].try_into().unwrap()), 1960);
    }

    #[test]
    fn bytes_round_trip_and_stream() {
        let ds = tiny(5);
        let bytes = ds.to_bytes().unwrap();
        let back = StebReader::new(&bytes[..]).unwrap().into_dataset().unwrap();
        assert_eq!(back, ds);
        let streamed: Vec<_> = StebReader::new(&bytes[..])
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(streamed, ds.samples);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = tiny(1).to_bytes().unwrap();
        bytes[0] = b'X';
        match StebReader::new(&bytes[..]) {
            Err(StampError::Format { offset: 0, .. }) => {}
            other => panic!("{:?}", other.err()),
        }
        let mut bytes = tiny(1).to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            StebReader::new(&bytes[..]),
            Err(StampError::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn truncated_stream_reports_offset() {
        let bytes = tiny(2).to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 10];
        let err = StebReader::new(cut).unwrap().into_dataset().unwrap_err();
        let StampError::Format { offset, message } = err else {
            panic!()
        };
        assert!(message.contains("sample 1"), "{message}");
        assert_eq!(offset, cut.len() as u64);
    }

    #[test]
    fn writer_rejects_wrong_count() {
        let ds = tiny(2);
        let mut w = StebWriter::new(Vec::new(), ds.header()).unwrap();
        w.write_sample(&ds.samples[0]).unwrap();
        assert!(w.finish().is_err());
    }
}
