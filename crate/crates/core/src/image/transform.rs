use veinatn_autodiff::Tensor;

use super::GrayImage;
use crate::error::{Error, Result};

/// Side length of the square network input.
pub const NETWORK_SIZE: usize = 224;

/// Bilinear sample at a fractional position, coordinates clamped to the
/// image (edge replication).
pub(crate) fn sample(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (a, b) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: usize, yy: usize| img.pixels()[yy * w + xx] as f64;
    let top = p(x0, y0) * (1.0 - a) + p(x1, y0) * a;
    let bottom = p(x0, y1) * (1.0 - a) + p(x1, y1) * a;
    top * (1.0 - b) + bottom * b
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Output pixel `(x, y)` takes the bilinear sample at the source position
/// returned by `inverse`.
pub(crate) fn warp(img: &GrayImage, inverse: impl Fn(f64, f64) -> (f64, f64)) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let (sx, sy) = inverse(x as f64, y as f64);
        to_u8(sample(img, sx, sy))
    })
    .expect("same extents as a valid image")
}

/// Half-pixel-centre alignment: output pixel `i` samples source coordinate
/// `(i + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!("resize target must be positive, got {out_w}x{out_h}")));
    }
    let sx = img.width() as f64 / out_w as f64;
    let sy = img.height() as f64 / out_h as f64;
    GrayImage::from_fn(out_w, out_h, |x, y| {
        to_u8(sample(img, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5))
    })
}

/// `[1, 3, 224, 224]` tensor with intensities scaled to `[0, 1]` and the
/// gray channel replicated three times.
pub fn to_network_input(img: &GrayImage) -> Tensor<f32> {
    let resized;
    let img = if img.width() == NETWORK_SIZE && img.height() == NETWORK_SIZE {
        img
    } else {
        resized = resize_bilinear(img, NETWORK_SIZE, NETWORK_SIZE).expect("positive target");
        &resized
    };
    let plane: Vec<f32> = img.pixels().iter().map(|&p| p as f32 / 255.0).collect();
    let mut data = Vec::with_capacity(plane.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new(vec![1, 3, NETWORK_SIZE, NETWORK_SIZE], data).expect("finite by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_upsample() {
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        let out = resize_bilinear(&img, 4, 1).unwrap();
        // sources -0.25, 0.25, 0.75, 1.25
        assert_eq!(out.pixels(), &[0, 64, 191, 255]);
    }

    #[test]
    fn same_size_is_identity() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 31 + y * 7) as u8).unwrap();
        assert_eq!(resize_bilinear(&img, 7, 5).unwrap(), img);
    }

    #[test]
    fn network_input_contract() {
        let img = GrayImage::filled(30, 17, 128).unwrap();
        let t = to_network_input(&img);
        assert_eq!(t.shape(), &[1, 3, 224, 224]);
        assert!(t.data().iter().all(|&v| v == 128.0 / 255.0));
    }
}
