//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! "MUVF"                      4-byte magic
//! u8                          format version
//! UTF-8 header, one line each:
//!   config k=v k=v ...        configuration echo (first line)
//!   <name> <d0>x<d1>... <off> one line per tensor, offset in bytes from payload start
//! <empty line>
//! payload                     little-endian f32 values, tensors back to back
//! ```

use crate::error::CheckpointError;
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MUVF";
pub const FORMAT_VERSION: u8 = 1;

/// Ordered key/value configuration echo stored in the header.
pub type ConfigEcho = Vec<(String, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

/// Decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u8,
    pub config: ConfigEcho,
    pub entries: Vec<TensorEntry>,
    pub params: ParamStore<f32>,
}

pub fn save_checkpoint(config: &ConfigEcho, params: &ParamStore<f32>) -> Vec<u8> {
    let mut header = String::from("config");
    for (k, v) in config {
        header.push(' ');
        header.push_str(k);
        header.push('=');
        header.push_str(v);
    }
    header.push('\n');
    let mut offset = 0usize;
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("{name} {} {offset}\n", dims.join("x")));
        offset += t.len() * 4;
    }
    header.push('\n');

    let mut out = Vec::with_capacity(5 + header.len() + offset);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(header.as_bytes());
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) {
            CheckpointError::Truncated("file shorter than magic".into())
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = *bytes.get(4).ok_or_else(|| CheckpointError::Truncated("missing version byte".into()))?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let rest = &bytes[5..];
    let end = rest
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| CheckpointError::Truncated("header is not terminated by a blank line".into()))?;
    let header = std::str::from_utf8(&rest[..end + 1])
        .map_err(|_| CheckpointError::MalformedHeader("header is not UTF-8".into()))?;
    let payload = &rest[end + 2..];

    let mut lines = header.lines();
    let config_line = lines.next().ok_or_else(|| CheckpointError::MalformedHeader("empty header".into()))?;
    let config = parse_config_line(config_line)?;

    let mut entries = Vec::new();
    let mut params = ParamStore::new();
    let mut expected_offset = 0usize;
    for line in lines {
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() != 3 {
            return Err(CheckpointError::MalformedHeader(format!("bad tensor line `{line}`")));
        }
        let name = fields[0].to_string();
        let shape: Vec<usize> = fields[1]
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CheckpointError::MalformedHeader(format!("bad dims in `{line}`")))?;
        let offset: usize = fields[2]
            .parse()
            .map_err(|_| CheckpointError::MalformedHeader(format!("bad offset in `{line}`")))?;
        if offset != expected_offset {
            return Err(CheckpointError::MalformedHeader(format!("tensor `{name}` at offset {offset}, expected {expected_offset}")));
        }
        let count: usize = shape.iter().product();
        let stop = offset + count * 4;
        if stop > payload.len() {
            return Err(CheckpointError::Truncated(format!("payload ends before tensor `{name}`")));
        }
        let data = payload[offset..stop]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(shape.clone(), data).map_err(|e| CheckpointError::MalformedHeader(e.message))?;
        params
            .insert(name.clone(), tensor)
            .map_err(|e| CheckpointError::MalformedHeader(e.message))?;
        entries.push(TensorEntry { name, shape, offset });
        expected_offset = stop;
    }
    if expected_offset != payload.len() {
        return Err(CheckpointError::MalformedHeader(format!(
            "payload has {} trailing bytes",
            payload.len() - expected_offset
        )));
    }
    Ok(Checkpoint { version, config, entries, params })
}

fn parse_config_line(line: &str) -> Result<ConfigEcho, CheckpointError> {
    let mut parts = line.split(' ');
    if parts.next() != Some("config") {
        return Err(CheckpointError::MalformedHeader("first header line must be the config echo".into()));
    }
    parts
        .filter(|p| !p.is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CheckpointError::MalformedHeader(format!("bad config entry `{kv}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ConfigEcho, ParamStore<f32>) {
        let mut p = ParamStore::new();
        p.insert("a.w", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, -0.0, 1e-30])).unwrap();
        p.insert("a.b", Tensor::new(vec![2], vec![0.1, 0.2]).unwrap()).unwrap();
        (vec![("n_max".into(), "4".into()), ("embed_dim".into(), "8".into())], p)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (cfg, p) = sample();
        let bytes = save_checkpoint(&cfg, &p);
        let ck = load_checkpoint(&bytes).unwrap();
        assert_eq!(ck.config, cfg);
        let a: Vec<u32> = p.flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = ck.params.flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(save_checkpoint(&ck.config, &ck.params), bytes);
        assert_eq!(ck.entries[1].offset, 24);
    }

    #[test]
    fn distinct_load_errors() {
        let (cfg, p) = sample();
        let bytes = save_checkpoint(&cfg, &p);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(load_checkpoint(&bad).unwrap_err(), CheckpointError::BadMagic);

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(load_checkpoint(&bad).unwrap_err(), CheckpointError::VersionMismatch { found: 9, expected: 1 });

        assert!(matches!(load_checkpoint(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(load_checkpoint(&bytes[..12]), Err(CheckpointError::Truncated(_))));
        assert!(matches!(load_checkpoint(b"MU"), Err(CheckpointError::Truncated(_))));
    }
}
