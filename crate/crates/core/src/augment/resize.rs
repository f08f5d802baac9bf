use image::Luma;

use crate::imaging::GrayImage;

/// Bilinear resize to `size`×`size` with half-pixel-centre alignment.
/// Returns a copy when the input already has the target shape.
pub fn resize_to_working(image: &GrayImage, size: u32) -> GrayImage {
    let (w, h) = image.dimensions();
    assert!(w > 0 && h > 0, "cannot resize an empty image");
    assert!(size >= 1, "working size must be >= 1");
    if w == size && h == size {
        return image.clone();
    }
    let sx = f64::from(w) / f64::from(size);
    let sy = f64::from(h) / f64::from(size);
    let px = |x: u32, y: u32| f64::from(image.get_pixel(x, y)[0]);
    let axis = |o: u32, scale: f64, n: u32| -> (u32, u32, f64) {
        let s = ((f64::from(o) + 0.5) * scale - 0.5).clamp(0.0, f64::from(n - 1));
        let i0 = s.floor() as u32;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - f64::from(i0))
    };
    GrayImage::from_fn(size, size, |x, y| {
        let (x0, x1, fx) = axis(x, sx, w);
        let (y0, y1, fy) = axis(y, sy, h);
        let v = (1.0 - fx) * (1.0 - fy) * px(x0, y0)
            + fx * (1.0 - fy) * px(x1, y0)
            + (1.0 - fx) * fy * px(x0, y1)
            + fx * fy * px(x1, y1);
        Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}
