use crate::error::{Error, Result};

/// How a mask was built; kept alongside the bits for reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Full,
    Band { n_diag: usize },
    Chunk { frames: usize },
    BandAndChunk { n_diag: usize, frames: usize },
}

/// Square binary attention mask; `true` means the key position is visible.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    t: usize,
    bits: Vec<bool>,
    kind: MaskKind,
}

impl AttentionMask {
    pub fn full(t: usize) -> Self {
        Self {
            t,
            bits: vec![true; t * t],
            kind: MaskKind::Full,
        }
    }

    pub fn len(&self) -> usize {
        self.t
    }

    pub fn is_empty(&self) -> bool {
        self.t == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.t + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.t..(i + 1) * self.t]
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        if self.t == 0 {
            return 0.0;
        }
        self.ones() as f64 / (self.t * self.t) as f64
    }

    /// `true` where `self` is set implies `other` is set.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.t == other.t && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// The `c × c` diagonal block starting at row/column `start`.
    pub fn diagonal_block(&self, start: usize, c: usize) -> Self {
        let mut bits = Vec::with_capacity(c * c);
        for i in start..start + c {
            bits.extend_from_slice(&self.row(i)[start..start + c]);
        }
        Self { t: c, bits, kind: self.kind }
    }
}

/// Keeps the `n_diag` central diagonals: `|i − j| ≤ ⌊n_diag / 2⌋`.
pub fn band_mask(t: usize, n_diag: usize) -> Result<AttentionMask> {
    if n_diag == 0 || n_diag.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "band width must be a positive odd number of diagonals, got {n_diag}"
        )));
    }
    let h = n_diag / 2;
    let mut bits = vec![false; t * t];
    for i in 0..t {
        let lo = i.saturating_sub(h);
        let hi = (i + h).min(t.saturating_sub(1));
        bits[i * t + lo..=i * t + hi].fill(true);
    }
    Ok(AttentionMask {
        t,
        bits,
        kind: MaskKind::Band { n_diag },
    })
}

/// Block-diagonal mask: positions attend only within their own chunk.
pub fn chunk_mask(t: usize, chunk_frames: usize) -> Result<AttentionMask> {
    if chunk_frames == 0 {
        return Err(Error::Config("chunk must span at least one frame".into()));
    }
    let mut bits = vec![false; t * t];
    for i in 0..t {
        let start = i / chunk_frames * chunk_frames;
        let end = (start + chunk_frames).min(t);
        bits[i * t + start..i * t + end].fill(true);
    }
    Ok(AttentionMask {
        t,
        bits,
        kind: MaskKind::Chunk { frames: chunk_frames },
    })
}

/// Elementwise AND of two masks of the same length.
pub fn combine_masks(a: &AttentionMask, b: &AttentionMask) -> Result<AttentionMask> {
    if a.t != b.t {
        return Err(Error::shape("combine_masks", &[a.t, a.t], &[b.t, b.t]));
    }
    let t = a.t;
    let n_diag = |k: MaskKind| match k {
        MaskKind::Band { n_diag } | MaskKind::BandAndChunk { n_diag, .. } => Some(n_diag),
        _ => None,
    };
    let frames = |k: MaskKind| match k {
        MaskKind::Chunk { frames } | MaskKind::BandAndChunk { frames, .. } => Some(frames),
        _ => None,
    };
    let full_band = (2 * t).saturating_sub(1).max(1);
    let nd = match (n_diag(a.kind), n_diag(b.kind)) {
        (Some(x), Some(y)) => x.min(y),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => full_band,
    };
    let fr = match (frames(a.kind), frames(b.kind)) {
        (Some(x), Some(y)) => x.min(y),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => t,
    };
    Ok(AttentionMask {
        t,
        bits: a.bits.iter().zip(&b.bits).map(|(&x, &y)| x && y).collect(),
        kind: MaskKind::BandAndChunk { n_diag: nd, frames: fr },
    })
}

/// Closed-form number of ones in `band_mask(t, n_diag)`.
pub fn band_ones(t: usize, n_diag: usize) -> usize {
    let h = (n_diag / 2).min(t.saturating_sub(1));
    t * (2 * h + 1) - h * (h + 1)
}

pub fn band_density(t: usize, n_diag: usize) -> f64 {
    band_ones(t, n_diag) as f64 / (t * t) as f64
}
