//! Bilinear resampling core, shared by image preprocessing and activation-map
//! upsampling. Sample centers sit at `(i + 0.5) * src/dst - 0.5`, clamped at
//! the edges, so constant images stay constant.

/// Resizes a row-major `src_h x src_w` grid to `dst_h x dst_w`.
pub fn bilinear_resize(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_h * src_w);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for i in 0..dst_h {
        let (i0, i1, fi) = source_span(i, src_h, dst_h);
        for j in 0..dst_w {
            let (j0, j1, fj) = source_span(j, src_w, dst_w);
            let top = src[i0 * src_w + j0] * (1.0 - fj) + src[i0 * src_w + j1] * fj;
            let bot = src[i1 * src_w + j0] * (1.0 - fj) + src[i1 * src_w + j1] * fj;
            out.push(top * (1.0 - fi) + bot * fi);
        }
    }
    out
}

/// Neighbor indices and interpolation weight for one destination coordinate.
fn source_span(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f32) {
    let pos = (dst as f32 + 0.5) * src_len as f32 / dst_len as f32 - 0.5;
    let low = pos.floor();
    let frac = pos - low;
    let clamp = |v: f32| (v.max(0.0) as usize).min(src_len - 1);
    (clamp(low), clamp(low + 1.0), frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let src = vec![0.7f32; 36];
        let out = bilinear_resize(&src, 6, 6, 96, 96);
        assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn single_source_pixel_broadcasts() {
        let out = bilinear_resize(&[5.0], 1, 1, 96, 96);
        assert_eq!(out.len(), 96 * 96);
        assert!(out.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn two_by_two_to_two_by_four_hand_values() {
        let src = [0.0f32, 1.0, 0.0, 1.0];
        let out = bilinear_resize(&src, 2, 2, 2, 4);
        for row in out.chunks(4) {
            let expect = [0.0, 0.25, 0.75, 1.0];
            for (a, e) in row.iter().zip(expect) {
                assert!((a - e).abs() < 1e-6, "{row:?}");
            }
        }
    }

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f32> = (0..24).map(|i| i as f32 * 0.3).collect();
        let out = bilinear_resize(&src, 4, 6, 4, 6);
        assert_eq!(out, src);
    }

    #[test]
    fn output_stays_within_source_range() {
        let src: Vec<f32> = (0..25).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let lo = src.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = src.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let out = bilinear_resize(&src, 5, 5, 17, 13);
        for v in out {
            assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
        }
    }
}
