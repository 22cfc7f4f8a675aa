use crate::error::Result;
use crate::image::Image;

/// Converts RGB to HSV with all three components in [0,1] (hue is the usual
/// angle divided by 360°). Achromatic pixels get hue 0.
pub fn rgb_to_hsv(img: &Image) -> Result<Image> {
    img.ensure_channels(3)?;
    let n = img.pixel_count();
    let mut out = Image::zeros(img.height(), img.width(), 3);
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut hsv = vec![[0.0f32; 3]; n];
    for i in 0..n {
        let (h, s, v) = rgb_px_to_hsv(r[i] as f64, g[i] as f64, b[i] as f64);
        hsv[i] = [h as f32, s as f32, v as f32];
    }
    for c in 0..3 {
        for (dst, px) in out.plane_mut(c).iter_mut().zip(&hsv) {
            *dst = px[c];
        }
    }
    Ok(out)
}

pub fn hsv_to_rgb(img: &Image) -> Result<Image> {
    img.ensure_channels(3)?;
    let n = img.pixel_count();
    let mut out = Image::zeros(img.height(), img.width(), 3);
    let (h, s, v) = (img.plane(0), img.plane(1), img.plane(2));
    let mut rgb = vec![[0.0f32; 3]; n];
    for i in 0..n {
        let (r, g, b) = hsv_px_to_rgb(h[i] as f64, s[i] as f64, v[i] as f64);
        rgb[i] = [r as f32, g as f32, b as f32];
    }
    for c in 0..3 {
        for (dst, px) in out.plane_mut(c).iter_mut().zip(&rgb) {
            *dst = px[c];
        }
    }
    Ok(out)
}

fn rgb_px_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let v = max;
    let s = if max > 0.0 { chroma / max } else { 0.0 };
    if chroma <= 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    (sector / 6.0, s, v)
}

fn hsv_px_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (v, v, v);
    }
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u8 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn px(r: f32, g: f32, b: f32) -> Image {
        Image::from_vec(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn pure_red() {
        let hsv = rgb_to_hsv(&px(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(hsv.data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn gray_is_achromatic() {
        let hsv = rgb_to_hsv(&px(0.5, 0.5, 0.5)).unwrap();
        assert_eq!(hsv.data(), &[0.0, 0.0, 0.5]);
    }

    #[test]
    fn primaries_land_on_thirds() {
        let g = rgb_to_hsv(&px(0.0, 1.0, 0.0)).unwrap();
        let b = rgb_to_hsv(&px(0.0, 0.0, 1.0)).unwrap();
        assert!((g.get(0, 0, 0) - 1.0 / 3.0).abs() < 1e-7);
        assert!((b.get(0, 0, 0) - 2.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = Image::from_fn(8, 8, 3, |_, _, _| rng.gen::<f32>());
        let back = hsv_to_rgb(&rgb_to_hsv(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_single_channel() {
        let img = Image::zeros(2, 2, 1);
        assert!(rgb_to_hsv(&img).is_err());
        assert!(hsv_to_rgb(&img).is_err());
    }
}
