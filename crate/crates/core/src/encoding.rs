//! Offsets of a target box relative to a rotated anchor.
//!
//! The center displacement is expressed in the anchor's own frame and
//! normalized by its sides, sizes are log ratios, and the angle difference is
//! measured in turns. Two anchor/target pairs related by the same rigid motion
//! therefore encode to the same offsets.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AlignedBox, OrientedBox, Point};

/// Bound applied to `tw`/`th` before exponentiation in [`decode`].
pub const SIZE_LOG_CLIP: f64 = 4.0;

/// Default context enlargement for the long side of an RRoI.
pub const CONTEXT_LONG: f64 = 1.2;
/// Default context enlargement for the short side of an RRoI.
pub const CONTEXT_SHORT: f64 = 1.4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OffsetVector {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub ttheta: f64,
}

impl OffsetVector {
    pub const fn new(tx: f64, ty: f64, tw: f64, th: f64, ttheta: f64) -> Self {
        Self {
            tx,
            ty,
            tw,
            th,
            ttheta,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.tx, self.ty, self.tw, self.th, self.ttheta]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Same offsets with `ttheta` moved to its representative in
    /// `[-0.25, 0.25)`.
    ///
    /// [`decode`] canonicalizes, so `ttheta` and `ttheta ± 0.5` decode to the
    /// same rectangle. Regressors train better on the representative nearest
    /// zero than on values that jump between 0 and 1 for small rotations.
    pub fn with_centered_angle(&self) -> Self {
        let mut t = self.ttheta.rem_euclid(0.5);
        if t >= 0.25 {
            t -= 0.5;
        }
        Self { ttheta: t, ..*self }
    }
}

/// Regression target of `target` relative to `anchor`.
pub fn encode(anchor: &OrientedBox, target: &OrientedBox) -> OffsetVector {
    let (s, c) = anchor.theta().sin_cos();
    let dx = target.cx() - anchor.cx();
    let dy = target.cy() - anchor.cy();
    let mut ttheta = (target.theta() - anchor.theta()).rem_euclid(TAU) / TAU;
    if ttheta >= 1.0 {
        ttheta = 0.0;
    }
    OffsetVector {
        tx: (dx * c + dy * s) / anchor.w(),
        ty: (dy * c - dx * s) / anchor.h(),
        tw: (target.w() / anchor.w()).ln(),
        th: (target.h() / anchor.h()).ln(),
        ttheta,
    }
}

/// Inverse of [`encode`], followed by canonicalization.
///
/// `tw` and `th` are clipped to `±SIZE_LOG_CLIP` first so an unconverged
/// regressor cannot overflow the exponential.
pub fn decode(anchor: &OrientedBox, offsets: &OffsetVector) -> Result<OrientedBox> {
    Ok(decode_raw(anchor, offsets)?.canonical())
}

/// [`decode`] without the final canonicalization: the angle is
/// `θ_r + 2π·ttheta` and the sides follow the anchor's `w`/`h` labels.
///
/// The result describes the same rectangle as [`decode`], but its frame
/// moves continuously with the offsets, which matters when the box is used
/// as the pooling frame of a later stage.
pub fn decode_raw(anchor: &OrientedBox, offsets: &OffsetVector) -> Result<OrientedBox> {
    if !offsets.is_finite() {
        return Err(Error::InvalidBox(format!("non-finite offsets {offsets:?}")));
    }
    let shift = Point::new(offsets.tx * anchor.w(), offsets.ty * anchor.h()).rotate(anchor.theta());
    let tw = offsets.tw.clamp(-SIZE_LOG_CLIP, SIZE_LOG_CLIP);
    let th = offsets.th.clamp(-SIZE_LOG_CLIP, SIZE_LOG_CLIP);
    OrientedBox::new(
        anchor.cx() + shift.x,
        anchor.cy() + shift.y,
        anchor.w() * tw.exp(),
        anchor.h() * th.exp(),
        anchor.theta() + TAU * offsets.ttheta,
    )
}

/// Horizontal special case: both boxes are lifted into the shared `θ = 0`
/// frame (see [`AlignedBox::to_oriented`]) and encoded there, so `ttheta` is
/// always 0 and `tx`, `ty`, `tw`, `th` reduce to the classic axis-aligned
/// deltas.
pub fn encode_horizontal(anchor: &AlignedBox, target: &AlignedBox) -> OffsetVector {
    encode(&anchor.to_oriented(), &target.to_oriented())
}

/// Scales the long side by `long_factor` and the short side by
/// `short_factor`, keeping the center and orientation.
pub fn enlarge_context(
    b: &OrientedBox,
    long_factor: f64,
    short_factor: f64,
) -> Result<OrientedBox> {
    for (name, f) in [("long_factor", long_factor), ("short_factor", short_factor)] {
        if !(f >= 1.0 && f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} must be >= 1, got {f}"
            )));
        }
    }
    let c = b.canonical();
    Ok(OrientedBox::new(
        c.cx(),
        c.cy(),
        c.w() * long_factor,
        c.h() * short_factor,
        c.theta(),
    )?
    .canonical())
}

/// [`enlarge_context`] expressed in the input's own frame: the same
/// rectangle, but `theta` and the `w`/`h` labels of `b` are kept.
pub fn enlarge_context_in_frame(
    b: &OrientedBox,
    long_factor: f64,
    short_factor: f64,
) -> Result<OrientedBox> {
    enlarge_context(b, long_factor, short_factor)?;
    let (fw, fh) = if b.w() >= b.h() {
        (long_factor, short_factor)
    } else {
        (short_factor, long_factor)
    };
    OrientedBox::new(b.cx(), b.cy(), b.w() * fw, b.h() * fh, b.theta())
}
