use super::Image;

#[inline]
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    // pixel-center alignment, clamped at the borders
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).max(0.0);
    let i0 = (pos.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, (pos - i0 as f64) as f32)
}

/// Bilinear resize to `height × width`.
pub fn resize(image: &Image, height: usize, width: usize) -> Image {
    if image.height == height && image.width == width {
        return image.clone();
    }
    let c = image.channels;
    let mut out = Image::filled(height, width, c, 0.0);
    let cols: Vec<_> = (0..width).map(|x| sample_axis(x, image.width, width)).collect();
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, image.height, height);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for ch in 0..c {
                let top = image.get(y0, x0, ch) * (1.0 - fx) + image.get(y0, x1, ch) * fx;
                let bot = image.get(y1, x0, ch) * (1.0 - fx) + image.get(y1, x1, ch) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                out.set(y, x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let img = Image::new(4, 4, 1, (0..16).map(|i| i as f32 / 15.0).collect()).unwrap();
        assert_eq!(resize(&img, 4, 4), img);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(7, 13, 3, 0.37);
        let r = resize(&img, 96, 96);
        assert!(r.data.iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn checkerboard_upsample_matches_hand_oracle() {
        let img = Image::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = resize(&img, 4, 4);
        // Hand-rolled oracle: source coordinate (d + 0.5)/2 − 0.5 clamped to
        // [0, 1] gives per-axis weights of the second pixel 0, 0.25, 0.75, 1.
        let t = [0.0f32, 0.25, 0.75, 1.0];
        let src = |y: usize, x: usize| [[0.0f32, 1.0], [1.0, 0.0]][y][x];
        for y in 0..4 {
            for x in 0..4 {
                let (wy, wx) = (t[y], t[x]);
                let want = (1.0 - wy) * ((1.0 - wx) * src(0, 0) + wx * src(0, 1))
                    + wy * ((1.0 - wx) * src(1, 0) + wx * src(1, 1));
                assert!((r.get(y, x, 0) - want).abs() < 1e-6, "({y},{x})");
            }
        }
        assert_eq!(r.get(0, 0, 0), 0.0);
        assert_eq!(r.get(0, 3, 0), 1.0);
        assert_eq!(r.get(3, 0, 0), 1.0);
        assert_eq!(r.get(3, 3, 0), 0.0);
    }
}
