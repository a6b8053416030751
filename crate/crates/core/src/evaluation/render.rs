use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{percentile, Mask, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    /// (horizontal axis, vertical axis, slice axis) in voxel indices.
    fn axes(self) -> (usize, usize, usize) {
        match self {
            Plane::Axial => (0, 1, 2),
            Plane::Coronal => (0, 2, 1),
            Plane::Sagittal => (1, 2, 0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Overlay<'a> {
    pub mask: &'a Mask,
    pub color: [u8; 3],
    pub alpha: f64,
}

/// Grayscale slice windowed to the volume's 1st-99th percentile with the
/// overlays alpha-blended in order. The vertical axis points up.
pub fn overlay_image<T: Real>(base: &Volume<T>, overlays: &[Overlay], plane: Plane, slice: usize) -> Result<RgbImage> {
    let dims = base.dims();
    let (h, v, s) = plane.axes();
    if slice >= dims[s] {
        return Err(Error::Range(format!("slice {slice} outside 0..{} for {plane:?}", dims[s])));
    }
    for o in overlays {
        base.geometry().check_same(o.mask.geometry())?;
    }
    let lo = percentile(base.data(), 1.0).unwrap_or(0.0);
    let hi = percentile(base.data(), 99.0).unwrap_or(1.0);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, ht) = (dims[h] as u32, dims[v] as u32);
    let mut img = RgbImage::new(w, ht);
    for y in 0..ht {
        for x in 0..w {
            let mut ijk = [0usize; 3];
            ijk[h] = x as usize;
            ijk[v] = (ht - 1 - y) as usize;
            ijk[s] = slice;
            let idx = base.geometry().index(ijk[0], ijk[1], ijk[2]);
            let g = ((base.data()[idx].as_f64() - lo) / span).clamp(0.0, 1.0) * 255.0;
            let mut px = [g; 3];
            for o in overlays {
                if o.mask.data()[idx] {
                    let a = o.alpha.clamp(0.0, 1.0);
                    for c in 0..3 {
                        px[c] = (1.0 - a) * px[c] + a * o.color[c] as f64;
                    }
                }
            }
            img.put_pixel(x, y, Rgb(px.map(|c| c.round() as u8)));
        }
    }
    Ok(img)
}

/// Writes [`overlay_image`] as a PNG.
pub fn render_overlay<T: Real>(
    base: &Volume<T>,
    overlays: &[Overlay],
    plane: Plane,
    slice: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let img = overlay_image(base, overlays, plane, slice)?;
    img.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}
