//! Planar multi-channel image container and binary PPM/PGM (P6/P5) IO.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Real-valued image stored as channel planes, row-major within each plane.
///
/// Dataset images hold intensities in `[0, 1]`; the container itself carries
/// any finite values, since wavelet sub-bands and gradient images reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image2D {
    /// All-zero image. Dimensions must be positive.
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        assert!(
            height > 0 && width > 0 && channels > 0,
            "image dims must be positive"
        );
        Image2D {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Wrap existing plane-ordered samples (`data[c*h*w + y*w + x]`).
    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "expected {} samples for {}x{}x{}, got {}",
                height * width * channels,
                height,
                width,
                channels,
                data.len()
            )));
        }
        Ok(Image2D {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Samples per channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Total sample count across channels.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[c * self.height * self.width + y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[c * self.height * self.width + y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image2D) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Average over channels into a single plane.
    pub fn to_grayscale(&self) -> Vec<f64> {
        let n = self.plane_len();
        let mut gray = vec![0.0; n];
        for c in 0..self.channels {
            let plane = self.channel(c);
            for (g, &v) in gray.iter_mut().zip(plane) {
                *g += v;
            }
        }
        let inv = 1.0 / self.channels as f64;
        for g in &mut gray {
            *g *= inv;
        }
        gray
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Quantize an intensity to a byte, rounding half-up and clamping.
pub fn intensity_to_byte(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Write as binary PGM (P5) for one channel or PPM (P6) for three, maxval 255.
pub fn write_pnm(img: &Image2D, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_pnm_to(img, &mut out)
}

pub fn write_pnm_to<W: Write>(img: &Image2D, out: &mut W) -> Result<()> {
    let magic = match img.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::Domain(format!(
                "PNM output supports 1 or 3 channels, got {c}"
            )));
        }
    };
    write!(out, "{}\n{} {}\n255\n", magic, img.width(), img.height())?;
    let mut bytes = Vec::with_capacity(img.len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..img.channels() {
                bytes.push(intensity_to_byte(img.get(c, y, x)));
            }
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

/// Read a binary PGM/PPM file with maxval 255 into intensities `b/255`.
pub fn read_pnm(path: &Path) -> Result<Image2D> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_pnm_bytes(&bytes)
}

pub fn read_pnm_bytes(bytes: &[u8]) -> Result<Image2D> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported PNM magic {other:?}"))),
    };
    let width: usize = parse_header_int(&next_token(bytes, &mut pos)?)?;
    let height: usize = parse_header_int(&next_token(bytes, &mut pos)?)?;
    let maxval: usize = parse_header_int(&next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "only maxval 255 supported, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let expected = width * height * channels;
    if bytes.len() < pos + expected {
        return Err(Error::Format(format!(
            "truncated PNM payload: need {expected} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let payload = &bytes[pos..pos + expected];
    let mut img = Image2D::zeros(height, width, channels);
    let mut i = 0;
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                img.set(c, y, x, payload[i] as f64 / 255.0);
                i += 1;
            }
        }
    }
    Ok(img)
}

fn parse_header_int(tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::Format(format!("bad PNM header token {tok:?}")))
        .and_then(|v| {
            if v == 0 {
                Err(Error::Format("zero dimension in PNM header".into()))
            } else {
                Ok(v)
            }
        })
}

// Whitespace-delimited header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("unexpected end of PNM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_golden_bytes() {
        let img = Image2D::from_vec(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_pnm_to(&img, &mut buf).unwrap();
        assert_eq!(&buf, b"P5\n2 1\n255\n\x00\xff");
    }

    #[test]
    fn byte_quantization_rounds_half_up() {
        assert_eq!(intensity_to_byte(0.0), 0);
        assert_eq!(intensity_to_byte(1.0), 255);
        assert_eq!(intensity_to_byte(127.5 / 255.0), 128);
        assert_eq!(intensity_to_byte(-0.3), 0);
        assert_eq!(intensity_to_byte(1.7), 255);
    }

    #[test]
    fn pnm_round_trip_preserves_bytes() {
        let mut img = Image2D::zeros(3, 4, 3);
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 + 11) % 256) as f64 / 255.0;
        }
        let mut buf = Vec::new();
        write_pnm_to(&img, &mut buf).unwrap();
        let back = read_pnm_bytes(&buf).unwrap();
        assert!(back.same_shape(&img));
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pnm_reader_rejects_garbage() {
        assert!(matches!(
            read_pnm_bytes(b"P4\n1 1\n255\n\x00"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_pnm_bytes(b"P5\n2 2\n255\n\x00"),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_pnm_bytes(b"P5\n2 2\n65535\n\x00\x00\x00\x00"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(matches!(
            Image2D::from_vec(2, 2, 1, vec![0.0; 3]),
            Err(Error::Shape(_))
        ));
    }
}
