//! Binary PGM (P5) / PPM (P6) images and the dataset manifest format
//! (`features_path;gt_path` per line).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::Scalar;

use super::model::Features;
use super::train::Sample;
use super::Grid;

/// An 8-bit image with interleaved channels (1 for PGM, 3 for PPM).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub data: Vec<u8>,
}

fn malformed(name: &str, offset: usize, what: &str) -> Error {
    Error::Input(format!("{name}: byte {offset}: {what}"))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(malformed(self.name, start, &format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(self.name, start, &format!("{what} out of range")))
    }
}

/// Parses a binary PGM or PPM; `name` labels error messages.
pub fn parse_pnm(bytes: &[u8], name: &str) -> Result<PnmImage> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(malformed(name, 0, "expected magic P5 or P6")),
    };
    let mut cur = Cursor { bytes, pos: 2, name };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed(name, maxval_at, "empty image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(name, maxval_at, "only 8-bit images (maxval 1..=255) are supported"));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(malformed(name, cur.pos, "expected a single whitespace before pixel data")),
    }
    let len = width * height * channels;
    let data = bytes.get(cur.pos..cur.pos + len).ok_or_else(|| {
        malformed(
            name,
            bytes.len(),
            &format!("truncated pixel data, expected {len} bytes from offset {}", cur.pos),
        )
    })?;
    if let Some(i) = data.iter().position(|&v| v as usize > maxval) {
        return Err(malformed(name, cur.pos + i, "sample exceeds maxval"));
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        maxval: maxval as u16,
        data: data.to_vec(),
    })
}

pub fn read_pnm(path: &Path) -> Result<PnmImage> {
    let bytes = fs::read(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    parse_pnm(&bytes, &path.display().to_string())
}

impl PnmImage {
    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.width, self.height)
    }

    /// Channel-major features scaled to `[0, 1]`.
    pub fn to_features<T: Scalar>(&self) -> Result<Features<T>> {
        let n = self.width * self.height;
        let scale = 1.0 / self.maxval as f64;
        let mut data = Vec::with_capacity(n * self.channels);
        for ch in 0..self.channels {
            data.extend((0..n).map(|pi| T::lit(self.data[pi * self.channels + ch] as f64 * scale)));
        }
        Features::new(self.grid()?, self.channels, data)
    }

    /// 0-based labels from a PGM whose value `v` encodes label `v + 1`.
    pub fn to_labels(&self, labels: usize) -> Result<Vec<usize>> {
        if self.channels != 1 {
            return Err(Error::Input("ground truth must be a single-channel PGM".into()));
        }
        self.data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let l = v as usize;
                if l < labels {
                    Ok(l)
                } else {
                    Err(Error::Input(format!(
                        "pixel {i} encodes label {} but only {labels} labels are configured",
                        l + 1
                    )))
                }
            })
            .collect()
    }

    pub fn from_labels(grid: Grid, labels: &[usize]) -> Result<Self> {
        let data = labels
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::Input(format!("label {l} does not fit in 8 bits"))))
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self {
            width: grid.nx,
            height: grid.ny,
            channels: 1,
            maxval: 255,
            data,
        })
    }

    /// Quantizes one- or three-channel features in `[0, 1]` to 8 bits.
    pub fn from_features<T: Scalar>(features: &Features<T>) -> Result<Self> {
        if features.channels != 1 && features.channels != 3 {
            return Err(Error::Input(format!(
                "cannot store {} channels as PGM/PPM",
                features.channels
            )));
        }
        let n = features.grid.npix();
        let mut data = Vec::with_capacity(n * features.channels);
        for pi in 0..n {
            for ch in 0..features.channels {
                let v = features.data[ch * n + pi].as_f64().clamp(0.0, 1.0);
                data.push((v * 255.0).round() as u8);
            }
        }
        Ok(Self {
            width: features.grid.nx,
            height: features.grid.ny,
            channels: features.channels,
            maxval: 255,
            data,
        })
    }
}

/// Reads `features_path;gt_path` pairs. Blank lines and `#` comments are skipped;
/// relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (f, g) = line.split_once(';').ok_or_else(|| {
            Error::Input(format!(
                "{}: line {}: expected 'features_path;gt_path'",
                path.display(),
                i + 1
            ))
        })?;
        let (f, g) = (f.trim(), g.trim());
        if f.is_empty() || g.is_empty() {
            return Err(Error::Input(format!("{}: line {}: empty path", path.display(), i + 1)));
        }
        out.push((base.join(f), base.join(g)));
    }
    Ok(out)
}

/// Loads every manifest entry as a training sample.
pub fn load_dataset<T: Scalar>(manifest: &Path, labels: usize, gamma: T) -> Result<Vec<Sample<T>>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|(f, g)| {
            let img = read_pnm(&f)?;
            let gt_img = read_pnm(&g)?;
            if (img.width, img.height) != (gt_img.width, gt_img.height) {
                return Err(Error::Input(format!(
                    "{} is {}x{} but {} is {}x{}",
                    f.display(),
                    img.width,
                    img.height,
                    g.display(),
                    gt_img.width,
                    gt_img.height
                )));
            }
            Sample::new(img.to_features()?, gt_img.to_labels(labels)?, labels, gamma)
        })
        .collect()
}
