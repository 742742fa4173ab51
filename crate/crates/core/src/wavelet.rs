//! Multilevel 2D orthogonal DWT with periodized boundaries.
//!
//! Each level filters rows first, then columns, and recurses on the
//! approximation block. Filters are applied in correlation form,
//!
//! ```text
//! approx[k] = Σᵢ lo[i] · x[(2k + i) mod n]
//! detail[k] = Σᵢ hi[i] · x[(2k + i) mod n]
//! ```
//!
//! and synthesis is the exact adjoint, so the transform is orthonormal for
//! every even length. Subband kinds are named `<row filter><column filter>`:
//! `LH` is low-pass along rows and high-pass along columns.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::Image;

/// Largest decomposition depth accepted by [`decompose`].
pub const MAX_LEVELS: usize = 2;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

// Daubechies 8-tap (four vanishing moments) scaling filter.
const DB4_LO: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveletName {
    Haar,
    Db4,
}

impl WaveletName {
    pub fn as_str(self) -> &'static str {
        match self {
            WaveletName::Haar => "haar",
            WaveletName::Db4 => "db4",
        }
    }
}

impl fmt::Display for WaveletName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WaveletName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletName::Haar),
            "db4" => Ok(WaveletName::Db4),
            other => Err(Error::InvalidArgument(format!(
                "unknown wavelet basis `{other}` (supported: haar, db4)"
            ))),
        }
    }
}

/// An orthonormal two-channel filter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    pub name: WaveletName,
    pub analysis_lo: Vec<f64>,
    pub analysis_hi: Vec<f64>,
    pub synthesis_lo: Vec<f64>,
    pub synthesis_hi: Vec<f64>,
}

impl WaveletBasis {
    pub fn new(name: WaveletName) -> Self {
        let lo: Vec<f64> = match name {
            WaveletName::Haar => vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            WaveletName::Db4 => DB4_LO.to_vec(),
        };
        let len = lo.len();
        // Quadrature mirror: hi[i] = (-1)^i lo[len - 1 - i].
        let hi: Vec<f64> = (0..len)
            .map(|i| {
                let v = lo[len - 1 - i];
                if i % 2 == 0 {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let synthesis_lo = lo.iter().rev().copied().collect();
        let synthesis_hi = hi.iter().rev().copied().collect();
        WaveletBasis {
            name,
            analysis_lo: lo,
            analysis_hi: hi,
            synthesis_lo,
            synthesis_hi,
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletName::Haar)
    }

    pub fn db4() -> Self {
        Self::new(WaveletName::Db4)
    }

    pub fn taps(&self) -> usize {
        self.analysis_lo.len()
    }
}

/// Looks up a basis by name (`haar` or `db4`).
pub fn basis_filters(name: &str) -> Result<WaveletBasis> {
    Ok(WaveletBasis::new(name.parse()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubbandKind {
    LL,
    LH,
    HL,
    HH,
}

impl SubbandKind {
    pub const DETAILS: [SubbandKind; 3] = [SubbandKind::LH, SubbandKind::HL, SubbandKind::HH];

    fn detail_index(self) -> Option<usize> {
        match self {
            SubbandKind::LL => None,
            SubbandKind::LH => Some(0),
            SubbandKind::HL => Some(1),
            SubbandKind::HH => Some(2),
        }
    }
}

impl fmt::Display for SubbandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SubbandKind::LL => "LL",
            SubbandKind::LH => "LH",
            SubbandKind::HL => "HL",
            SubbandKind::HH => "HH",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubbandId {
    pub level: usize,
    pub kind: SubbandKind,
}

impl fmt::Display for SubbandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind, self.level)
    }
}

/// Canonical primitive order: LL at the coarsest level, then details from the
/// coarsest level down, `LH, HL, HH` within a level. Length `3 * levels + 1`.
pub fn subband_order(levels: usize) -> Vec<SubbandId> {
    let mut out = Vec::with_capacity(3 * levels + 1);
    out.push(SubbandId {
        level: levels,
        kind: SubbandKind::LL,
    });
    for level in (1..=levels).rev() {
        for kind in SubbandKind::DETAILS {
            out.push(SubbandId { level, kind });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionTree {
    pub basis: WaveletBasis,
    pub levels: usize,
    /// Source image `(width, height, channels)`.
    pub shape: (usize, usize, usize),
    /// Approximation block, `width / 2^levels × height / 2^levels`.
    pub approx: Image,
    /// `details[m - 1]` holds the `[LH, HL, HH]` blocks of level `m`.
    pub details: Vec<[Image; 3]>,
}

impl DecompositionTree {
    pub fn subband(&self, id: SubbandId) -> Result<&Image> {
        self.check_id(id)?;
        Ok(match id.kind.detail_index() {
            None => &self.approx,
            Some(k) => &self.details[id.level - 1][k],
        })
    }

    pub fn subband_mut(&mut self, id: SubbandId) -> Result<&mut Image> {
        self.check_id(id)?;
        Ok(match id.kind.detail_index() {
            None => &mut self.approx,
            Some(k) => &mut self.details[id.level - 1][k],
        })
    }

    fn check_id(&self, id: SubbandId) -> Result<()> {
        let ok = match id.kind {
            SubbandKind::LL => id.level == self.levels,
            _ => (1..=self.levels).contains(&id.level),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "subband {id} does not exist in a {}-level tree",
                self.levels
            )))
        }
    }

    /// Copy of the tree with every coefficient outside `keep` set to zero.
    pub fn isolate(&self, keep: SubbandId) -> Result<DecompositionTree> {
        self.check_id(keep)?;
        let mut out = self.clone();
        for id in subband_order(self.levels) {
            if id != keep {
                out.subband_mut(id)?.data_mut().fill(0.0);
            }
        }
        Ok(out)
    }

    /// Sum of squared coefficients, per channel.
    pub fn coefficient_energy(&self) -> Vec<f64> {
        let c = self.shape.2;
        let mut energy = vec![0.0; c];
        let blocks = std::iter::once(&self.approx).chain(self.details.iter().flatten());
        for block in blocks {
            for (i, v) in block.data().iter().enumerate() {
                energy[i % c] += v * v;
            }
        }
        energy
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h, c) = self.shape;
        if self.levels == 0 || self.details.len() != self.levels {
            return Err(Error::Shape(format!(
                "tree claims {} levels but holds {} detail levels",
                self.levels,
                self.details.len()
            )));
        }
        let scale = 1usize << self.levels;
        if w % scale != 0 || h % scale != 0 {
            return Err(Error::Shape(format!(
                "{w}x{h} is not divisible by 2^{}",
                self.levels
            )));
        }
        if self.approx.shape() != (w / scale, h / scale, c) {
            return Err(Error::Shape(format!(
                "approximation block is {:?}, expected {:?}",
                self.approx.shape(),
                (w / scale, h / scale, c)
            )));
        }
        for (i, blocks) in self.details.iter().enumerate() {
            let s = 1usize << (i + 1);
            for (k, b) in blocks.iter().enumerate() {
                if b.shape() != (w / s, h / s, c) {
                    return Err(Error::Shape(format!(
                        "level {} {} block is {:?}, expected {:?}",
                        i + 1,
                        SubbandKind::DETAILS[k],
                        b.shape(),
                        (w / s, h / s, c)
                    )));
                }
            }
        }
        Ok(())
    }
}

fn analyze_1d(x: &[f64], lo: &[f64], hi: &[f64], out_lo: &mut [f64], out_hi: &mut [f64]) {
    let n = x.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for (i, (&l, &h)) in lo.iter().zip(hi).enumerate() {
            let v = x[(2 * k + i) % n];
            a += l * v;
            d += h * v;
        }
        out_lo[k] = a;
        out_hi[k] = d;
    }
}

fn synthesize_1d(a: &[f64], d: &[f64], basis: &WaveletBasis, out: &mut [f64]) {
    let n = out.len();
    let taps = basis.taps();
    out.fill(0.0);
    for k in 0..a.len() {
        for j in 0..taps {
            // synthesis taps are time-reversed analysis taps
            let idx = (2 * k + taps - 1 - j) % n;
            out[idx] += a[k] * basis.synthesis_lo[j] + d[k] * basis.synthesis_hi[j];
        }
    }
}

/// One analysis level on a row-major `h × w` plane. Returns `[LL, LH, HL, HH]`.
fn analyze_level(plane: &[f64], w: usize, h: usize, basis: &WaveletBasis) -> [Vec<f64>; 4] {
    let (hw, hh) = (w / 2, h / 2);
    // rows: row_lo / row_hi are h × hw
    let mut row_lo = vec![0.0; h * hw];
    let mut row_hi = vec![0.0; h * hw];
    for y in 0..h {
        analyze_1d(
            &plane[y * w..(y + 1) * w],
            &basis.analysis_lo,
            &basis.analysis_hi,
            &mut row_lo[y * hw..(y + 1) * hw],
            &mut row_hi[y * hw..(y + 1) * hw],
        );
    }
    let mut bands = [
        vec![0.0; hh * hw],
        vec![0.0; hh * hw],
        vec![0.0; hh * hw],
        vec![0.0; hh * hw],
    ];
    let mut col = vec![0.0; h];
    let mut col_lo = vec![0.0; hh];
    let mut col_hi = vec![0.0; hh];
    for (src, (lo_band, hi_band)) in [(&row_lo, (0, 1)), (&row_hi, (2, 3))] {
        for x in 0..hw {
            for y in 0..h {
                col[y] = src[y * hw + x];
            }
            analyze_1d(&col, &basis.analysis_lo, &basis.analysis_hi, &mut col_lo, &mut col_hi);
            for y in 0..hh {
                bands[lo_band][y * hw + x] = col_lo[y];
                bands[hi_band][y * hw + x] = col_hi[y];
            }
        }
    }
    bands
}

fn synthesize_level(bands: [&[f64]; 4], w: usize, h: usize, basis: &WaveletBasis) -> Vec<f64> {
    let (hw, hh) = (w / 2, h / 2);
    let mut row_lo = vec![0.0; h * hw];
    let mut row_hi = vec![0.0; h * hw];
    let mut a = vec![0.0; hh];
    let mut d = vec![0.0; hh];
    let mut col = vec![0.0; h];
    for (dst, (lo_band, hi_band)) in [(&mut row_lo, (0, 1)), (&mut row_hi, (2, 3))] {
        for x in 0..hw {
            for y in 0..hh {
                a[y] = bands[lo_band][y * hw + x];
                d[y] = bands[hi_band][y * hw + x];
            }
            synthesize_1d(&a, &d, basis, &mut col);
            for y in 0..h {
                dst[y * hw + x] = col[y];
            }
        }
    }
    let mut plane = vec![0.0; w * h];
    for y in 0..h {
        synthesize_1d(
            &row_lo[y * hw..(y + 1) * hw],
            &row_hi[y * hw..(y + 1) * hw],
            basis,
            &mut plane[y * w..(y + 1) * w],
        );
    }
    plane
}

/// Forward transform. Channels are transformed independently.
pub fn decompose(image: &Image, basis: &WaveletBasis, levels: usize) -> Result<DecompositionTree> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::InvalidArgument(format!(
            "levels must be in 1..={MAX_LEVELS}, got {levels}"
        )));
    }
    let (w, h, c) = image.shape();
    let scale = 1usize << levels;
    if w % scale != 0 || h % scale != 0 {
        let pad = |n: usize| n.div_ceil(scale) * scale;
        return Err(Error::Shape(format!(
            "{w}x{h} image is not divisible by 2^{levels}; pad to {}x{}",
            pad(w),
            pad(h)
        )));
    }

    let mut details: Vec<[Image; 3]> = (1..=levels)
        .map(|m| {
            let (bw, bh) = (w >> m, h >> m);
            [
                Image::zeros(bw, bh, c),
                Image::zeros(bw, bh, c),
                Image::zeros(bw, bh, c),
            ]
        })
        .collect();
    let mut approx = Image::zeros(w >> levels, h >> levels, c);

    for ch in 0..c {
        let mut current = image.channel_plane(ch);
        let (mut cw, mut chh) = (w, h);
        for level in 1..=levels {
            let [ll, lh, hl, hh] = analyze_level(&current, cw, chh, basis);
            let blocks = &mut details[level - 1];
            blocks[0].set_channel_plane(ch, &lh);
            blocks[1].set_channel_plane(ch, &hl);
            blocks[2].set_channel_plane(ch, &hh);
            current = ll;
            cw /= 2;
            chh /= 2;
        }
        approx.set_channel_plane(ch, &current);
    }

    Ok(DecompositionTree {
        basis: basis.clone(),
        levels,
        shape: (w, h, c),
        approx,
        details,
    })
}

/// Inverse transform.
pub fn reconstruct(tree: &DecompositionTree) -> Result<Image> {
    tree.validate()?;
    let (w, h, c) = tree.shape;
    let mut out = Image::zeros(w, h, c);
    for ch in 0..c {
        let mut current = tree.approx.channel_plane(ch);
        for level in (1..=tree.levels).rev() {
            let blocks = &tree.details[level - 1];
            let lh = blocks[0].channel_plane(ch);
            let hl = blocks[1].channel_plane(ch);
            let hh = blocks[2].channel_plane(ch);
            current = synthesize_level(
                [&current, &lh, &hl, &hh],
                w >> (level - 1),
                h >> (level - 1),
                &tree.basis,
            );
        }
        out.set_channel_plane(ch, &current);
    }
    Ok(out)
}

/// Image-space reconstructions of individual subbands, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    pub items: Vec<(SubbandId, Image)>,
}

impl PrimitiveSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = SubbandId> + '_ {
        self.items.iter().map(|(id, _)| *id)
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> + '_ {
        self.items.iter().map(|(_, img)| img)
    }

    /// Pixelwise sum of all primitives.
    pub fn sum(&self) -> Result<Image> {
        let ones = vec![1.0; self.len()];
        self.weighted_sum(&ones)
    }

    /// Pixelwise `Σₚ weights[p] · primitive[p]`.
    pub fn weighted_sum(&self, weights: &[f64]) -> Result<Image> {
        if weights.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} weights for {} primitives",
                weights.len(),
                self.len()
            )));
        }
        let (_, first) = self
            .items
            .first()
            .ok_or_else(|| Error::Shape("empty primitive set".into()))?;
        let (w, h, c) = first.shape();
        let mut out = Image::zeros(w, h, c);
        for ((_, img), &eta) in self.items.iter().zip(weights) {
            out.add_scaled(img, eta)?;
        }
        Ok(out)
    }
}

/// Zero-out-and-invert each subband in turn.
pub fn primitive_images(tree: &DecompositionTree) -> Result<PrimitiveSet> {
    tree.validate()?;
    let items = subband_order(tree.levels)
        .into_iter()
        .map(|id| Ok((id, reconstruct(&tree.isolate(id)?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PrimitiveSet { items })
}
