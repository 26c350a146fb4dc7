//! Feature-frame containers and resampling onto the 90 Hz pose clock.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frames per second everything in this crate runs at.
pub const FRAME_RATE: f64 = 90.0;

/// One frame of acoustic features (default width 23).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureVector(pub Vec<f64>);

impl AudioFeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("audio feature frame contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Resample a [C, N] stream sampled at `source_rate` Hz onto the 90 Hz clock
/// by linear interpolation within the source span.
///
/// The source spans (N-1)/source_rate seconds; the output holds
/// floor(span * 90) + 1 frames at timestamps n/90. Timestamps that land
/// exactly on a source sample copy it bit-for-bit, so a 90 Hz input is
/// returned unchanged.
pub fn align_to_90hz(values: &Tensor, source_rate: f64) -> Result<Tensor> {
    if values.rank() != 2 {
        return Err(Error::shape("align_to_90hz", format!("want [C, N], got {:?}", values.shape())));
    }
    if !(source_rate.is_finite() && source_rate > 0.0) {
        return Err(Error::Config(format!("source rate must be positive, got {source_rate}")));
    }
    let (channels, n) = (values.shape()[0], values.shape()[1]);
    if n == 0 {
        return Err(Error::Data("cannot resample an empty stream".into()));
    }
    let span = (n - 1) as f64 / source_rate;
    let m = (span * FRAME_RATE).floor() as usize + 1;
    let mut out = Tensor::zeros(&[channels, m]);
    for t in 0..m {
        let pos = t as f64 * source_rate / FRAME_RATE;
        let i0 = (pos.floor() as usize).min(n - 1);
        let frac = pos - i0 as f64;
        for c in 0..channels {
            let v = if frac == 0.0 || i0 + 1 >= n {
                values.at2(c, i0)
            } else {
                let a = values.at2(c, i0);
                let b = values.at2(c, i0 + 1);
                a + frac * (b - a)
            };
            out.set2(c, t, v);
        }
    }
    Ok(out)
}
