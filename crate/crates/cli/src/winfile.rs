//! `EEGW` window files and their JSON index.
//!
//! ```text
//! "EEGW" | u32 version | u32 n_windows | u32 n_channels | u32 window_len
//!        | f32 values, window by window, channel-major within a window
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use affekt_core::dataset::ClassLabel;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const WINDOW_MAGIC: &[u8; 4] = b"EEGW";
pub const WINDOW_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "windows.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub window_id: String,
    pub subject_id: String,
    /// File within the stage directory and position inside it.
    pub file: String,
    pub slot: usize,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowIndex {
    pub sample_rate_hz: f64,
    pub window_len: usize,
    pub channel_names: Vec<String>,
    /// Emotion names; position is the categorical id.
    pub label_table: Vec<String>,
    pub windows: Vec<WindowEntry>,
}

pub type Window = Vec<Vec<f64>>;

pub fn write_windows(path: &Path, windows: &[Window]) -> Result<(), CliError> {
    let n_channels = windows.first().map_or(0, |w| w.len());
    let len = windows.first().and_then(|w| w.first()).map_or(0, |r| r.len());
    let mut out = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    let mut put = |bytes: &[u8]| out.write_all(bytes).map_err(|e| CliError::io(path, e));
    put(WINDOW_MAGIC)?;
    for v in [WINDOW_VERSION, windows.len() as u32, n_channels as u32, len as u32] {
        put(&v.to_le_bytes())?;
    }
    for w in windows {
        for row in w {
            for &v in row {
                put(&(v as f32).to_le_bytes())?;
            }
        }
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_windows(path: &Path) -> Result<Vec<Window>, CliError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| CliError::missing(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| CliError::io(path, e))?;
    let bad = |m: &str| CliError::bad_input(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..4] != WINDOW_MAGIC {
        return Err(bad("not an EEGW window file"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    if word(0) as u32 != WINDOW_VERSION {
        return Err(bad("unsupported version"));
    }
    let (n, c, len) = (word(1), word(2), word(3));
    if bytes.len() != 20 + 4 * n * c * len {
        return Err(bad("size does not match header"));
    }
    let mut values = bytes[20..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    Ok((0..n)
        .map(|_| (0..c).map(|_| values.by_ref().take(len).collect()).collect())
        .collect())
}

pub fn read_index(dir: &Path) -> Result<WindowIndex, CliError> {
    crate::read_json(&dir.join(INDEX_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.eegw");
        let w = vec![
            vec![vec![1.0, 2.5], vec![-3.0, 0.25]],
            vec![vec![0.0, 1.0], vec![2.0, 3.0]],
        ];
        write_windows(&p, &w).unwrap();
        assert_eq!(read_windows(&p).unwrap(), w);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 20 + 4 * 8);
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_windows(&p).is_err());
    }
}
