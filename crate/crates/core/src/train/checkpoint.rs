//! Binary checkpoints.
//!
//! Layout: magic `ULSM`, format version (u32 LE), then until end of file a
//! sequence of entries
//!
//! ```text
//! name length u32 | name bytes (UTF-8) | rank u32 | extents u32 × rank | f32 LE × Π extents
//! ```
//!
//! Trainable parameters come first, then batch-norm running statistics.
//! All integers are little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelGraph;
use crate::tensor::Element;

pub const MAGIC: &[u8; 4] = b"ULSM";
pub const VERSION: u32 = 1;

/// One named array read from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub extents: Vec<usize>,
    pub data: Vec<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(entries: &[Entry]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize)?;
    for e in entries {
        let count: usize = e.extents.iter().product();
        if count != e.data.len() {
            return Err(Error::Checkpoint(format!(
                "{}: extents {:?} hold {count} values, data has {}",
                e.name,
                e.extents,
                e.data.len()
            )));
        }
        put_u32(&mut out, e.name.len())?;
        out.extend_from_slice(e.name.as_bytes());
        put_u32(&mut out, e.extents.len())?;
        for &x in &e.extents {
            put_u32(&mut out, x)?;
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "file ends inside {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let mut entries = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")?;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("entry name at byte {} is not UTF-8", r.pos - len)))?;
        let rank = r.u32("rank")?;
        let extents = (0..rank).map(|_| r.u32("extents")).collect::<Result<Vec<_>>>()?;
        let count = extents
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Checkpoint(format!("{name}: extents {extents:?} overflow")))?;
        let data = r
            .take(count, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push(Entry { name, extents, data });
    }
    Ok(entries)
}

/// Snapshot the graph's parameters and running statistics.
pub fn collect<T: Element>(graph: &mut ModelGraph<T>) -> Vec<Entry> {
    let mut entries: Vec<Entry> = graph
        .params()
        .into_iter()
        .map(|(name, p)| Entry {
            name,
            extents: p.dims.clone(),
            data: p.value.iter().map(|v| v.as_f32()).collect(),
        })
        .collect();
    entries.extend(graph.buffers_mut().into_iter().map(|b| Entry {
        name: b.name,
        extents: vec![b.value.len()],
        data: b.value.iter().map(|v| v.as_f32()).collect(),
    }));
    entries
}

/// Overwrite the graph's state from `entries`. Every parameter and buffer
/// must be present with matching extents, and nothing else may be.
pub fn restore<T: Element>(graph: &mut ModelGraph<T>, entries: Vec<Entry>) -> Result<()> {
    let mut by_name: HashMap<String, Entry> = HashMap::with_capacity(entries.len());
    for e in entries {
        if by_name.contains_key(&e.name) {
            return Err(Error::Checkpoint(format!("duplicate entry {}", e.name)));
        }
        by_name.insert(e.name.clone(), e);
    }
    let mut take = |name: &str, extents: &[usize]| -> Result<Vec<f32>> {
        let e = by_name
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
        if e.extents != extents {
            return Err(Error::Checkpoint(format!(
                "{name}: checkpoint extents {:?}, model expects {extents:?}",
                e.extents
            )));
        }
        Ok(e.data)
    };
    let mut staged = Vec::new();
    for (name, p) in graph.params() {
        staged.push(take(&name, &p.dims)?);
    }
    let mut staged_buffers = Vec::new();
    for b in graph.buffers_mut() {
        staged_buffers.push(take(&b.name, &[b.value.len()])?);
    }
    if let Some(extra) = by_name.keys().min() {
        return Err(Error::Checkpoint(format!("entry {extra} does not belong to this model")));
    }
    for ((_, p), data) in graph.params_mut().into_iter().zip(staged) {
        p.value = data.into_iter().map(T::from_f32).collect();
    }
    for (b, data) in graph.buffers_mut().into_iter().zip(staged_buffers) {
        *b.value = data.into_iter().map(T::from_f32).collect();
    }
    Ok(())
}

pub fn save<T: Element>(graph: &mut ModelGraph<T>, path: &Path) -> Result<()> {
    let bytes = encode(&collect(graph))?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Element>(graph: &mut ModelGraph<T>, path: &Path) -> Result<()> {
    restore(graph, decode(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let e = Entry {
            name: "a".into(),
            extents: vec![2],
            data: vec![1.0, -2.0],
        };
        let bytes = encode(std::slice::from_ref(&e)).unwrap();
        let mut expected = b"ULSM".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.push(b'a');
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(decode(&bytes).unwrap(), vec![e]);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(matches!(decode(b"NOPE\x01\0\0\0"), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(b"ULSM\x02\0\0\0"), Err(Error::Checkpoint(_))));
        let mut bytes = encode(&[Entry {
            name: "w".into(),
            extents: vec![3],
            data: vec![0.0; 3],
        }])
        .unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn empty_model_file_is_valid() {
        assert!(decode(&encode(&[]).unwrap()).unwrap().is_empty());
    }
}
