//! Binary image, mask and conditional-input types plus deterministic PGM I/O.
//!
//! Phase convention: pore = 1, stored as white (255) in PGM files; solid = 0,
//! stored as black (0). All pixel data is row-major. Everything here is
//! immutable after construction and safe to share across threads.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("pgm parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero-area image")]
    ZeroArea,
    #[error("mask has no informed pixels")]
    EmptyMask,
}

/// Two-phase microstructure. `data[y * width + x]` is 1 for pore, 0 for solid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count must be width*height");
        assert!(data.iter().all(|&v| v <= 1), "phase labels must be 0 or 1");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, phase: u8) -> Self {
        Self::new(width, height, vec![phase; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, phase: u8) {
        debug_assert!(phase <= 1);
        self.data[y * self.width + x] = phase;
    }

    /// Fraction of pore pixels.
    pub fn porosity(&self) -> Result<f64, GridError> {
        porosity(self)
    }

    /// View as a soft image with values exactly 0.0 or 1.0.
    pub fn to_soft(&self) -> SoftImage {
        SoftImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }
}

/// Per-pixel pore probability in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SoftImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count must be width*height");
        assert!(
            data.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "soft values must lie in [0, 1]"
        );
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Per-pixel informed/unknown flags. `true` marks an informed pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "flag count must be width*height");
        Self { width, height, data }
    }

    pub fn all_informed(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn all_unknown(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn is_informed(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, informed: bool) {
        self.data[y * self.width + x] = informed;
    }

    pub fn informed_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Reads a mask from a PGM file where 255 marks informed pixels.
    pub fn load(path: &Path) -> Result<Self, GridError> {
        let img = load_image(path)?;
        Ok(Self::new(
            img.width,
            img.height,
            img.data.iter().map(|&v| v == 1).collect(),
        ))
    }

    /// Writes the mask as a P5 PGM with 255 = informed.
    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        let img = BinaryImage::new(
            self.width,
            self.height,
            self.data.iter().map(|&b| b as u8).collect(),
        );
        save_image(&img, path)
    }
}

/// The conditioning data fed to the networks: a value channel holding the
/// phase at informed pixels (0 elsewhere) and the mask channel itself.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalInput {
    pub values: SoftImage,
    pub mask: Mask,
}

impl ConditionalInput {
    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }
}

impl fmt::Display for BinaryImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                write!(f, "{}", if self.get(x, y) == 1 { '#' } else { '.' })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

struct PgmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmParser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, GridError> {
        Err(GridError::Parse { offset: self.pos, message: message.into() })
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skips whitespace and `#` comment lines between header tokens.
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(c) = self.peek() {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_number(&mut self, what: &str) -> Result<usize, GridError> {
        self.skip_separators();
        let start = self.pos;
        let mut value: usize = 0;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() {
                value = match value
                    .checked_mul(10)
                    .and_then(|v| v.checked_add((b - b'0') as usize))
                {
                    Some(v) => v,
                    None => return self.err(format!("{what} overflows")),
                };
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return self.err(format!("expected {what}"));
        }
        Ok(value)
    }
}

/// Loads a P5 (binary) or P2 (ASCII) PGM with maxval 255 and binarizes it:
/// values >= 128 become pore, the rest solid.
pub fn load_image(path: &Path) -> Result<BinaryImage, GridError> {
    let bytes = fs::read(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pgm(&bytes)
}

/// Parses PGM bytes. Split out from [`load_image`] so tests can feed buffers.
pub fn parse_pgm(bytes: &[u8]) -> Result<BinaryImage, GridError> {
    let mut p = PgmParser { bytes, pos: 0 };
    if bytes.len() < 2 {
        return p.err("file too short for magic");
    }
    let magic = &bytes[0..2];
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => {
            return p.err(format!(
                "unsupported magic {:?}, expected P2 or P5",
                String::from_utf8_lossy(magic)
            ))
        }
    };
    p.pos = 2;
    let width = p.read_number("width")?;
    let height = p.read_number("height")?;
    let maxval = p.read_number("maxval")?;
    if maxval != 255 {
        return p.err(format!("unsupported maxval {maxval}, expected 255"));
    }
    if width == 0 || height == 0 {
        return p.err("zero-area image");
    }
    let count = width * height;
    let mut data = Vec::with_capacity(count);
    if binary {
        // Exactly one whitespace byte separates the header from the payload.
        match p.peek() {
            Some(b) if b.is_ascii_whitespace() => p.pos += 1,
            _ => return p.err("expected single whitespace before P5 payload"),
        }
        if bytes.len() < p.pos + count {
            p.pos = bytes.len();
            return p.err(format!(
                "truncated payload: expected {count} bytes, found {}",
                bytes.len().saturating_sub(p.pos)
            ));
        }
        data.extend(bytes[p.pos..p.pos + count].iter().map(|&v| (v >= 128) as u8));
    } else {
        for _ in 0..count {
            let v = p.read_number("pixel value")?;
            if v > 255 {
                return p.err(format!("pixel value {v} exceeds maxval"));
            }
            data.push((v >= 128) as u8);
        }
    }
    Ok(BinaryImage::new(width, height, data))
}

/// Writes a P5 PGM, pore as 255 and solid as 0. Round-trips with [`load_image`].
pub fn save_image(img: &BinaryImage, path: &Path) -> Result<(), GridError> {
    let io_err = |source| GridError::Io { path: path.display().to_string(), source };
    let mut out = Vec::with_capacity(img.data.len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width, img.height).expect("write to vec");
    out.extend(img.data.iter().map(|&v| if v == 1 { 255u8 } else { 0u8 }));
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Fraction of pore pixels.
pub fn porosity(img: &BinaryImage) -> Result<f64, GridError> {
    let n = img.data.len();
    if n == 0 {
        return Err(GridError::ZeroArea);
    }
    let pore = img.data.iter().map(|&v| v as usize).sum::<usize>();
    Ok(pore as f64 / n as f64)
}

/// Thresholds a soft image: values >= `threshold` become pore.
pub fn binarize(img: &SoftImage, threshold: f64) -> BinaryImage {
    assert!(
        threshold > 0.0 && threshold < 1.0,
        "threshold must lie strictly inside (0, 1)"
    );
    BinaryImage::new(
        img.width,
        img.height,
        img.data.iter().map(|&v| (v >= threshold) as u8).collect(),
    )
}

/// Builds the conditioning pair for a target image: informed pixels copy the
/// target phase, unknown pixels are 0 in the value channel.
pub fn make_conditional_input(
    target: &BinaryImage,
    mask: &Mask,
) -> Result<ConditionalInput, GridError> {
    if target.width != mask.width || target.height != mask.height {
        return Err(GridError::DimensionMismatch(format!(
            "target {}x{} vs mask {}x{}",
            target.width, target.height, mask.width, mask.height
        )));
    }
    if mask.informed_count() == 0 {
        return Err(GridError::EmptyMask);
    }
    let values = SoftImage::new(
        target.width,
        target.height,
        target
            .data
            .iter()
            .zip(mask.data.iter())
            .map(|(&v, &m)| if m { v as f64 } else { 0.0 })
            .collect(),
    );
    Ok(ConditionalInput { values, mask: mask.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pgm_p5(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
        let mut b = format!("P5\n{width} {height}\n255\n").into_bytes();
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn p5_threshold_at_128() {
        let img = parse_pgm(&pgm_p5(2, 2, &[255, 0, 0, 255])).unwrap();
        assert_eq!(img.data(), &[1, 0, 0, 1]);
        // 128 itself is pore, 127 is solid.
        let img = parse_pgm(&pgm_p5(2, 1, &[128, 127])).unwrap();
        assert_eq!(img.data(), &[1, 0]);
    }

    #[test]
    fn all_zero_pgm_is_all_solid() {
        let img = parse_pgm(&pgm_p5(4, 4, &[0; 16])).unwrap();
        assert_eq!(porosity(&img).unwrap(), 0.0);
    }

    #[test]
    fn p2_and_p5_agree() {
        let pixels = [200u8, 13, 128, 127, 0, 255];
        let p5 = parse_pgm(&pgm_p5(3, 2, &pixels)).unwrap();
        let ascii = format!(
            "P2\n3 2\n255\n{}\n",
            pixels.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        );
        let p2 = parse_pgm(ascii.as_bytes()).unwrap();
        assert_eq!(p5, p2);
    }

    #[test]
    fn parse_errors_name_offsets() {
        let err = parse_pgm(b"P6\n2 2\n255\n").unwrap_err();
        match err {
            GridError::Parse { offset, message } => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
        let err = parse_pgm(&pgm_p5(4, 4, &[0; 3])).unwrap_err();
        assert!(matches!(err, GridError::Parse { .. }));
        assert!(err.to_string().contains("truncated"));
        let err = parse_pgm(b"P5\n2 2\n65535\n").unwrap_err();
        assert!(err.to_string().contains("maxval"));
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let mut b = b"P5\n# made by hand\n2 1\n# more\n255\n".to_vec();
        b.extend_from_slice(&[255, 0]);
        let img = parse_pgm(&b).unwrap();
        assert_eq!(img.data(), &[1, 0]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.pgm");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<u8> = (0..256).map(|_| rng.random_range(0..=1u8)).collect();
        let img = BinaryImage::new(16, 16, data);
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn save_all_pore_writes_255_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pore.pgm");
        save_image(&BinaryImage::filled(3, 2, 1), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..10], b"P5\n3 2\n255");
        assert!(bytes[11..].iter().all(|&b| b == 255));
    }

    #[test]
    fn save_single_pore_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pgm");
        save_image(&BinaryImage::filled(1, 1, 1), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"P5\n1 1\n255\n\xff");
    }

    #[test]
    fn porosity_counts() {
        assert_eq!(porosity(&BinaryImage::filled(8, 8, 1)).unwrap(), 1.0);
        // checkerboard
        let data: Vec<u8> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as u8).collect();
        assert_eq!(porosity(&BinaryImage::new(4, 4, data)).unwrap(), 0.5);
        // direct count at the paper's silica porosity
        let mut data = vec![0u8; 128 * 128];
        for v in data.iter_mut().take(1576) {
            *v = 1;
        }
        let phi = porosity(&BinaryImage::new(128, 128, data)).unwrap();
        assert!((phi - 1576.0 / 16384.0).abs() < 1e-15);
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let all = binarize(&SoftImage::constant(3, 3, 0.6), 0.5);
        assert!(all.data().iter().all(|&v| v == 1));
        let boundary = binarize(&SoftImage::constant(3, 3, 0.5), 0.5);
        assert!(boundary.data().iter().all(|&v| v == 1));
    }

    #[test]
    fn binarize_is_idempotent_on_binary_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<u8> = (0..64).map(|_| rng.random_range(0..=1u8)).collect();
        let img = BinaryImage::new(8, 8, data);
        assert_eq!(binarize(&img.to_soft(), 0.5), img);
    }

    #[test]
    fn conditional_input_copies_informed_pixels() {
        let target = BinaryImage::new(2, 2, vec![1, 0, 0, 1]);
        let full = make_conditional_input(&target, &Mask::all_informed(2, 2)).unwrap();
        assert_eq!(full.values.data(), &[1.0, 0.0, 0.0, 1.0]);

        let mut mask = Mask::all_unknown(2, 2);
        mask.set(0, 0, true);
        let one = make_conditional_input(&target, &mask).unwrap();
        assert_eq!(one.values.data().iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(one.values.get(0, 0), 1.0);
    }

    #[test]
    fn corner_square_mask_covers_four_percent() {
        let target = BinaryImage::filled(128, 128, 0);
        let mut mask = Mask::all_unknown(128, 128);
        for y in 0..26 {
            for x in 0..26 {
                mask.set(x, y, true);
            }
        }
        let cond = make_conditional_input(&target, &mask).unwrap();
        assert_eq!(cond.mask.informed_count(), 676);
        let frac: f64 = 676.0 / (128.0 * 128.0);
        assert!((frac - 0.0413).abs() < 1e-3);
    }

    #[test]
    fn conditional_input_rejects_bad_inputs() {
        let target = BinaryImage::filled(4, 4, 1);
        let err = make_conditional_input(&target, &Mask::all_informed(3, 4)).unwrap_err();
        assert!(matches!(err, GridError::DimensionMismatch(_)));
        let err = make_conditional_input(&target, &Mask::all_unknown(4, 4)).unwrap_err();
        assert!(matches!(err, GridError::EmptyMask));
    }
}
