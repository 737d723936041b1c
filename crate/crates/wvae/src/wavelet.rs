//! Multi-level Haar analysis and synthesis for 1D signals and multi-channel
//! 2D images, plus the flat coefficient layout and the coefficient dump
//! format.
//!
//! The single-level transform uses the non-overlapping pairwise form
//! (average and difference of adjacent samples scaled by 1/√2), which is
//! exactly invertible without any boundary extension. Inputs must therefore
//! have even length per level; multi-level transforms require divisibility
//! by 2^levels. All math is in double precision.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::image::Image2D;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Analysis and synthesis filter taps. Synthesis taps are the time-reversed
/// analysis taps, as required for orthonormal filter banks.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub lowpass: Vec<f64>,
    pub highpass: Vec<f64>,
    pub synthesis_lowpass: Vec<f64>,
    pub synthesis_highpass: Vec<f64>,
}

/// The orthonormal Haar pair: lowpass [1/√2, 1/√2], highpass [1/√2, -1/√2].
pub fn haar_filters() -> FilterPair {
    FilterPair {
        lowpass: vec![INV_SQRT2, INV_SQRT2],
        highpass: vec![INV_SQRT2, -INV_SQRT2],
        synthesis_lowpass: vec![INV_SQRT2, INV_SQRT2],
        synthesis_highpass: vec![-INV_SQRT2, INV_SQRT2],
    }
}

fn require_even(len: usize, what: &str) -> Result<()> {
    if len == 0 || !len.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "{what} length {len} is not a positive even number"
        )));
    }
    Ok(())
}

/// Single-level 1D analysis: approx[k] = (x[2k] + x[2k+1])/√2,
/// detail[k] = (x[2k] - x[2k+1])/√2.
pub fn dwt1d_level(x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    require_even(x.len(), "signal")?;
    let half = x.len() / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for k in 0..half {
        let a = x[2 * k];
        let b = x[2 * k + 1];
        approx[k] = (a + b) * INV_SQRT2;
        detail[k] = (a - b) * INV_SQRT2;
    }
    Ok((approx, detail))
}

/// Single-level 1D synthesis: exact inverse of [`dwt1d_level`].
pub fn idwt1d_level(approx: &[f64], detail: &[f64]) -> Result<Vec<f64>> {
    if approx.is_empty() || approx.len() != detail.len() {
        return Err(Error::Shape(format!(
            "approx length {} and detail length {} must match and be nonzero",
            approx.len(),
            detail.len()
        )));
    }
    let mut x = vec![0.0; approx.len() * 2];
    for k in 0..approx.len() {
        x[2 * k] = (approx[k] + detail[k]) * INV_SQRT2;
        x[2 * k + 1] = (approx[k] - detail[k]) * INV_SQRT2;
    }
    Ok(x)
}

/// Multi-level 1D coefficient set: one coarsest approximation plus detail
/// bands stored coarsest-first (level `levels` down to level 1).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid1D {
    pub levels: usize,
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

impl WaveletPyramid1D {
    /// Original signal length.
    pub fn signal_len(&self) -> usize {
        self.approx.len() << self.levels
    }

    fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.details.len() != self.levels {
            return Err(Error::Shape(format!(
                "pyramid with {} levels has {} detail bands",
                self.levels,
                self.details.len()
            )));
        }
        for (i, d) in self.details.iter().enumerate() {
            let expect = self.approx.len() << i;
            if d.len() != expect {
                return Err(Error::Shape(format!(
                    "detail band {} has length {}, expected {}",
                    i,
                    d.len(),
                    expect
                )));
            }
        }
        Ok(())
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels < 1 {
        return Err(Error::Domain(
            "decomposition depth must be at least 1".into(),
        ));
    }
    // Dimensions are usize; any depth beyond this cannot divide a real image
    // and would overflow the shift below.
    if levels > 30 {
        return Err(Error::Domain(format!(
            "decomposition depth {levels} is out of range"
        )));
    }
    Ok(())
}

/// Multi-level 1D analysis; the transform is iterated on the approximation.
pub fn dwt1d_multi(x: &[f64], levels: usize) -> Result<WaveletPyramid1D> {
    check_levels(levels)?;
    if x.is_empty() || !x.len().is_multiple_of(1 << levels) {
        return Err(Error::Shape(format!(
            "signal length {} is not divisible by 2^{levels}",
            x.len()
        )));
    }
    let mut details = Vec::with_capacity(levels);
    let mut current = x.to_vec();
    for _ in 0..levels {
        let (approx, detail) = dwt1d_level(&current)?;
        details.push(detail);
        current = approx;
    }
    details.reverse();
    Ok(WaveletPyramid1D {
        levels,
        approx: current,
        details,
    })
}

/// Multi-level 1D synthesis; exact inverse of [`dwt1d_multi`].
pub fn idwt1d_multi(p: &WaveletPyramid1D) -> Result<Vec<f64>> {
    p.validate()?;
    let mut current = p.approx.clone();
    for detail in &p.details {
        current = idwt1d_level(&current, detail)?;
    }
    Ok(current)
}

/// The three detail sub-bands of one 2D level. HL applies the highpass along
/// rows then the lowpass along columns; LH the reverse; HH highpass both.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub level: usize,
    pub hl: Image2D,
    pub lh: Image2D,
    pub hh: Image2D,
}

/// Multi-level 2D coefficient set: the coarsest approximation band plus
/// per-level detail triples stored coarsest-first.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid2D {
    pub levels: usize,
    pub approx: Image2D,
    pub details: Vec<DetailBands>,
}

impl WaveletPyramid2D {
    pub fn channels(&self) -> usize {
        self.approx.channels()
    }

    /// Height and width of the original image.
    pub fn image_shape(&self) -> (usize, usize) {
        (
            self.approx.height() << self.levels,
            self.approx.width() << self.levels,
        )
    }

    /// Total coefficient count across bands and channels; equals the pixel
    /// count of the original image times its channel count.
    pub fn coeff_count(&self) -> usize {
        self.approx.len() + self.details.iter().map(|d| d.hl.len() * 3).sum::<usize>()
    }

    fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.details.len() != self.levels {
            return Err(Error::Shape(format!(
                "pyramid with {} levels has {} detail triples",
                self.levels,
                self.details.len()
            )));
        }
        for (i, bands) in self.details.iter().enumerate() {
            let (eh, ew) = (self.approx.height() << i, self.approx.width() << i);
            for band in [&bands.hl, &bands.lh, &bands.hh] {
                if band.height() != eh || band.width() != ew || band.channels() != self.channels() {
                    return Err(Error::Shape(format!(
                        "detail triple {} has shape {}x{}x{}, expected {}x{}x{}",
                        i,
                        band.height(),
                        band.width(),
                        band.channels(),
                        eh,
                        ew,
                        self.channels()
                    )));
                }
            }
        }
        Ok(())
    }
}

// 1D level pass over every row of one channel plane, writing half-width
// lowpass and highpass planes.
fn row_pass(plane: &[f64], h: usize, w: usize, low: &mut [f64], high: &mut [f64]) {
    let half = w / 2;
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for k in 0..half {
            let a = row[2 * k];
            let b = row[2 * k + 1];
            low[y * half + k] = (a + b) * INV_SQRT2;
            high[y * half + k] = (a - b) * INV_SQRT2;
        }
    }
}

// 1D level pass down every column, writing half-height planes.
fn col_pass(plane: &[f64], h: usize, w: usize, low: &mut [f64], high: &mut [f64]) {
    let half = h / 2;
    for k in 0..half {
        for x in 0..w {
            let a = plane[(2 * k) * w + x];
            let b = plane[(2 * k + 1) * w + x];
            low[k * w + x] = (a + b) * INV_SQRT2;
            high[k * w + x] = (a - b) * INV_SQRT2;
        }
    }
}

/// Single-level separable 2D analysis, applied independently per channel.
/// Returns `(LL, HL, LH, HH)`.
pub fn dwt2d_level(img: &Image2D) -> Result<(Image2D, Image2D, Image2D, Image2D)> {
    let (h, w) = (img.height(), img.width());
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::Shape(format!(
            "image dims {h}x{w} must both be even"
        )));
    }
    let (hh2, wh2) = (h / 2, w / 2);
    let mut ll = Image2D::zeros(hh2, wh2, img.channels());
    let mut hl = Image2D::zeros(hh2, wh2, img.channels());
    let mut lh = Image2D::zeros(hh2, wh2, img.channels());
    let mut hh = Image2D::zeros(hh2, wh2, img.channels());
    let mut row_low = vec![0.0; h * wh2];
    let mut row_high = vec![0.0; h * wh2];
    for c in 0..img.channels() {
        row_pass(img.channel(c), h, w, &mut row_low, &mut row_high);
        // Lowpass rows split into LL (low columns) and LH (high columns);
        // highpass rows split into HL and HH.
        col_pass(&row_low, h, wh2, ll.channel_mut(c), lh.channel_mut(c));
        col_pass(&row_high, h, wh2, hl.channel_mut(c), hh.channel_mut(c));
    }
    Ok((ll, hl, lh, hh))
}

/// Single-level separable 2D synthesis; exact inverse of [`dwt2d_level`].
pub fn idwt2d_level(ll: &Image2D, hl: &Image2D, lh: &Image2D, hh: &Image2D) -> Result<Image2D> {
    for band in [hl, lh, hh] {
        if !band.same_shape(ll) {
            return Err(Error::Shape(
                "the four sub-bands must share one shape".into(),
            ));
        }
    }
    let (bh, bw, ch) = (ll.height(), ll.width(), ll.channels());
    let (h, w) = (bh * 2, bw * 2);
    let mut out = Image2D::zeros(h, w, ch);
    let mut row_low = vec![0.0; h * bw];
    let mut row_high = vec![0.0; h * bw];
    for c in 0..ch {
        // Invert the column pass.
        let (llp, lhp) = (ll.channel(c), lh.channel(c));
        let (hlp, hhp) = (hl.channel(c), hh.channel(c));
        for k in 0..bh {
            for x in 0..bw {
                let i = k * bw + x;
                row_low[(2 * k) * bw + x] = (llp[i] + lhp[i]) * INV_SQRT2;
                row_low[(2 * k + 1) * bw + x] = (llp[i] - lhp[i]) * INV_SQRT2;
                row_high[(2 * k) * bw + x] = (hlp[i] + hhp[i]) * INV_SQRT2;
                row_high[(2 * k + 1) * bw + x] = (hlp[i] - hhp[i]) * INV_SQRT2;
            }
        }
        // Invert the row pass.
        let plane = out.channel_mut(c);
        for y in 0..h {
            for k in 0..bw {
                let a = row_low[y * bw + k];
                let d = row_high[y * bw + k];
                plane[y * w + 2 * k] = (a + d) * INV_SQRT2;
                plane[y * w + 2 * k + 1] = (a - d) * INV_SQRT2;
            }
        }
    }
    Ok(out)
}

/// Multi-level 2D analysis: the level transform is applied recursively to
/// the approximation band.
pub fn dwt2d_multi(img: &Image2D, levels: usize) -> Result<WaveletPyramid2D> {
    check_levels(levels)?;
    let div = 1usize << levels;
    if !img.height().is_multiple_of(div) || !img.width().is_multiple_of(div) {
        return Err(Error::Shape(format!(
            "image dims {}x{} are not divisible by 2^{levels}",
            img.height(),
            img.width()
        )));
    }
    let mut details = Vec::with_capacity(levels);
    let mut current = img.clone();
    for level in 1..=levels {
        let (ll, hl, lh, hh) = dwt2d_level(&current)?;
        details.push(DetailBands { level, hl, lh, hh });
        current = ll;
    }
    details.reverse();
    Ok(WaveletPyramid2D {
        levels,
        approx: current,
        details,
    })
}

/// Multi-level 2D synthesis; exact inverse of [`dwt2d_multi`].
pub fn idwt2d_multi(p: &WaveletPyramid2D) -> Result<Image2D> {
    p.validate()?;
    let mut current = p.approx.clone();
    for bands in &p.details {
        current = idwt2d_level(&current, &bands.hl, &bands.lh, &bands.hh)?;
    }
    Ok(current)
}

/// Band identifier within a pyramid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandKind {
    #[serde(rename = "LL")]
    Ll,
    #[serde(rename = "HL")]
    Hl,
    #[serde(rename = "LH")]
    Lh,
    #[serde(rename = "HH")]
    Hh,
}

impl BandKind {
    pub fn is_detail(self) -> bool {
        self != BandKind::Ll
    }
}

/// Placement of one band inside the flattened coefficient vector. The
/// offset is an index into that vector; the band occupies
/// `h * w * channels` entries (channel planes in order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandInfo {
    pub level: usize,
    pub band: BandKind,
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    pub offset: usize,
}

/// Flattening contract for a pyramid of a given image shape: the
/// approximation band first, then detail triples from the coarsest level
/// down to level 1, each ordered HL, LH, HH.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLayout {
    pub levels: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bands: Vec<BandInfo>,
}

impl PyramidLayout {
    pub fn new(height: usize, width: usize, channels: usize, levels: usize) -> Result<Self> {
        check_levels(levels)?;
        let div = 1usize << levels;
        if height == 0
            || width == 0
            || channels == 0
            || !height.is_multiple_of(div)
            || !width.is_multiple_of(div)
        {
            return Err(Error::Shape(format!(
                "image dims {height}x{width} are not divisible by 2^{levels}"
            )));
        }
        let mut bands = Vec::with_capacity(1 + 3 * levels);
        let mut offset = 0;
        let (ah, aw) = (height >> levels, width >> levels);
        bands.push(BandInfo {
            level: levels,
            band: BandKind::Ll,
            height: ah,
            width: aw,
            offset,
        });
        offset += ah * aw * channels;
        for level in (1..=levels).rev() {
            let (bh, bw) = (height >> level, width >> level);
            for band in [BandKind::Hl, BandKind::Lh, BandKind::Hh] {
                bands.push(BandInfo {
                    level,
                    band,
                    height: bh,
                    width: bw,
                    offset,
                });
                offset += bh * bw * channels;
            }
        }
        debug_assert_eq!(offset, height * width * channels);
        Ok(PyramidLayout {
            levels,
            height,
            width,
            channels,
            bands,
        })
    }

    /// Length of the flattened coefficient vector.
    pub fn total_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Per-index flag: true where the entry belongs to a detail band.
    pub fn detail_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total_len()];
        for info in &self.bands {
            if info.band.is_detail() {
                let len = info.height * info.width * self.channels;
                for m in &mut mask[info.offset..info.offset + len] {
                    *m = true;
                }
            }
        }
        mask
    }

    fn validate(&self) -> Result<()> {
        let rebuilt = PyramidLayout::new(self.height, self.width, self.channels, self.levels)?;
        if rebuilt != *self {
            return Err(Error::Shape(
                "layout does not follow the band ordering contract".into(),
            ));
        }
        Ok(())
    }
}

/// Flatten a pyramid into a vector plus the layout describing it.
pub fn pyramid_flatten(p: &WaveletPyramid2D) -> Result<(Vec<f64>, PyramidLayout)> {
    p.validate()?;
    let (h, w) = p.image_shape();
    let layout = PyramidLayout::new(h, w, p.channels(), p.levels)?;
    let mut flat = Vec::with_capacity(layout.total_len());
    flat.extend_from_slice(p.approx.data());
    // Details are stored coarsest-first, matching the layout order L..1.
    for bands in &p.details {
        flat.extend_from_slice(bands.hl.data());
        flat.extend_from_slice(bands.lh.data());
        flat.extend_from_slice(bands.hh.data());
    }
    Ok((flat, layout))
}

/// Rebuild a pyramid from a flattened vector; exact inverse of
/// [`pyramid_flatten`].
pub fn pyramid_unflatten(flat: &[f64], layout: &PyramidLayout) -> Result<WaveletPyramid2D> {
    layout.validate()?;
    if flat.len() != layout.total_len() {
        return Err(Error::Shape(format!(
            "vector length {} does not match layout length {}",
            flat.len(),
            layout.total_len()
        )));
    }
    let ch = layout.channels;
    let band_image = |info: &BandInfo| -> Result<Image2D> {
        let len = info.height * info.width * ch;
        Image2D::from_vec(
            info.height,
            info.width,
            ch,
            flat[info.offset..info.offset + len].to_vec(),
        )
    };
    let approx = band_image(&layout.bands[0])?;
    let mut details = Vec::with_capacity(layout.levels);
    for triple in layout.bands[1..].chunks_exact(3) {
        details.push(DetailBands {
            level: triple[0].level,
            hl: band_image(&triple[0])?,
            lh: band_image(&triple[1])?,
            hh: band_image(&triple[2])?,
        });
    }
    Ok(WaveletPyramid2D {
        levels: layout.levels,
        approx,
        details,
    })
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    magic: String,
    levels: usize,
    height: usize,
    width: usize,
    channels: usize,
    layout: Vec<BandInfo>,
}

const DUMP_MAGIC: &str = "WVP1";

/// Write a pyramid as a coefficient dump: JSON header line, then the
/// flattened coefficients as little-endian doubles.
pub fn write_coefficient_dump<W: Write>(out: &mut W, p: &WaveletPyramid2D) -> Result<()> {
    let (flat, layout) = pyramid_flatten(p)?;
    let header = DumpHeader {
        magic: DUMP_MAGIC.into(),
        levels: layout.levels,
        height: layout.height,
        width: layout.width,
        channels: layout.channels,
        layout: layout.bands.clone(),
    };
    format::write_block(out, &header, &flat)
}

/// Read a coefficient dump written by [`write_coefficient_dump`].
pub fn read_coefficient_dump<R: BufRead>(input: &mut R) -> Result<WaveletPyramid2D> {
    let (header, payload): (DumpHeader, Vec<f64>) = format::read_block(input)?;
    if header.magic != DUMP_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {DUMP_MAGIC:?}",
            header.magic
        )));
    }
    let layout = PyramidLayout {
        levels: header.levels,
        height: header.height,
        width: header.width,
        channels: header.channels,
        bands: header.layout,
    };
    layout
        .validate()
        .map_err(|e| Error::Format(format!("dump layout invalid: {e}")))?;
    if payload.len() != layout.total_len() {
        return Err(Error::Format(format!(
            "payload has {} coefficients, layout expects {}",
            payload.len(),
            layout.total_len()
        )));
    }
    pyramid_unflatten(&payload, &layout)
}
