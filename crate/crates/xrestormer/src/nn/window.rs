//! Window partitioning for spatial attention. Feature maps are cut into
//! non-overlapping m x m tiles flattened to token rows, and, for
//! cross-window key/value extraction, into larger overlapping tiles centred
//! on the same grid with zero fill outside the map.

use crate::error::{fmt_shape, Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

fn check_divisible<T: Scalar>(x: &Tensor<T>, m: usize, what: &str) -> Result<(usize, usize, usize, usize)> {
    if x.shape().len() != 4 {
        return Err(Error::Shape(format!(
            "{what} expects a [B, C, H, W] input, got {}",
            fmt_shape(x.shape())
        )));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(Error::Shape(format!(
            "{what} needs both spatial extents of {h}x{w} divisible by the window size {m}"
        )));
    }
    Ok((b, c, h, w))
}

/// Cuts [B, C, H, W] into non-overlapping m x m tiles, returning
/// [B * (H/m) * (W/m), m * m, C] with tokens in row-major tile order.
pub fn window_partition<T: Scalar>(tape: &mut Tape<T>, x: Var, m: usize) -> Result<Var> {
    let (b, c, h, w) = check_divisible(tape.value(x), m, "window_partition")?;
    let (nh, nw) = (h / m, w / m);
    let mut out = Tensor::zeros(&[b * nh * nw, m * m, c]);
    scatter_tiles(tape.value(x).data(), out.data_mut(), b, c, h, w, m, true);
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, inputs, _y| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            scatter_tiles(g.data(), dx.data_mut(), b, c, h, w, m, false);
            vec![Some(dx)]
        }),
    ))
}

/// Inverse of [`window_partition`]: reassembles [N, m * m, C] tiles into the
/// [B, C, H, W] map they came from.
pub fn window_reverse<T: Scalar>(
    tape: &mut Tape<T>,
    wins: Var,
    m: usize,
    b: usize,
    h: usize,
    w: usize,
) -> Result<Var> {
    let ws = tape.value(wins).shape().to_vec();
    if h % m != 0 || w % m != 0 {
        return Err(Error::Shape(format!(
            "window_reverse target {h}x{w} is not divisible by the window size {m}"
        )));
    }
    let (nh, nw) = (h / m, w / m);
    if ws.len() != 3 || ws[0] != b * nh * nw || ws[1] != m * m {
        return Err(Error::Shape(format!(
            "window_reverse expected [{}, {}, C] tiles for a {h}x{w} map, got {}",
            b * nh * nw,
            m * m,
            fmt_shape(&ws)
        )));
    }
    let c = ws[2];
    let mut out = Tensor::zeros(&[b, c, h, w]);
    scatter_tiles(tape.value(wins).data(), out.data_mut(), b, c, h, w, m, false);
    Ok(tape.push_op(
        out,
        vec![wins],
        Box::new(move |g, inputs, _y| {
            let mut dw = Tensor::zeros(inputs[0].shape());
            scatter_tiles(g.data(), dw.data_mut(), b, c, h, w, m, true);
            vec![Some(dw)]
        }),
    ))
}

/// Copies between map layout [B, C, H, W] and tile layout [N, m*m, C].
/// `to_tiles` selects the direction; the index map is a bijection, so the
/// same walk serves forward and gradient for both partition and reverse.
fn scatter_tiles<T: Scalar>(
    src: &[T],
    dst: &mut [T],
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    to_tiles: bool,
) {
    let (nh, nw) = (h / m, w / m);
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                let win = (bi * nh + wy) * nw + wx;
                for ci in 0..c {
                    let plane = (bi * c + ci) * h * w;
                    for ty in 0..m {
                        let mrow = plane + (wy * m + ty) * w + wx * m;
                        let trow = (win * m * m + ty * m) * c + ci;
                        for tx in 0..m {
                            let (mi, ti) = (mrow + tx, trow + tx * c);
                            if to_tiles {
                                dst[ti] = src[mi];
                            } else {
                                dst[mi] = src[ti];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Resolves the enlarged tile size for an overlap ratio: tiles grow from m
/// to (1 + overlap) * m, which must land on a whole number with an even
/// margin so the enlargement is symmetric.
pub(crate) fn overlap_extent(m: usize, overlap: f64) -> Result<(usize, usize)> {
    if !(overlap.is_finite() && overlap >= 0.0) {
        return Err(Error::Config(format!(
            "overlap ratio must be finite and non-negative, got {overlap}"
        )));
    }
    let exact = (1.0 + overlap) * m as f64;
    let mo = exact.round() as usize;
    if (exact - mo as f64).abs() > 1e-9 || (mo - m) % 2 != 0 {
        return Err(Error::Config(format!(
            "overlap ratio {overlap} with window size {m} must give an enlarged window of whole, evenly split size, got {exact}"
        )));
    }
    Ok((mo, (mo - m) / 2))
}

/// Cuts [B, C, H, W] into overlapping tiles of side mo = (1 + overlap) * m,
/// one per m x m grid cell, centred on that cell and zero-filled where the
/// tile hangs over the border. Returns [B * (H/m) * (W/m), mo * mo, C].
pub fn overlapping_window_partition<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    m: usize,
    overlap: f64,
) -> Result<Var> {
    let (b, c, h, w) = check_divisible(tape.value(x), m, "overlapping_window_partition")?;
    let (mo, pad) = overlap_extent(m, overlap)?;
    let (nh, nw) = (h / m, w / m);
    let mut out = Tensor::zeros(&[b * nh * nw, mo * mo, c]);
    {
        let src = tape.value(x).data();
        let dst = out.data_mut();
        walk_overlap(b, c, h, w, m, mo, pad, |mi, ti| dst[ti] = src[mi]);
    }
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, inputs, _y| {
            let mut dx = Tensor::zeros(inputs[0].shape());
            let gd = g.data();
            let dd = dx.data_mut();
            // Tiles overlap, so the gradient scatter accumulates; the fixed
            // walk order keeps the sums reproducible.
            walk_overlap(b, c, h, w, m, mo, pad, |mi, ti| dd[mi] += gd[ti]);
            vec![Some(dx)]
        }),
    ))
}

/// Visits every (map index, tile index) pair of the overlapping partition
/// whose map coordinate is in bounds, in a fixed order.
fn walk_overlap<T: FnMut(usize, usize)>(
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    m: usize,
    mo: usize,
    pad: usize,
    mut visit: T,
) {
    let (nh, nw) = (h / m, w / m);
    for bi in 0..b {
        for wy in 0..nh {
            for wx in 0..nw {
                let win = (bi * nh + wy) * nw + wx;
                for ci in 0..c {
                    let plane = (bi * c + ci) * h * w;
                    for ty in 0..mo {
                        let iy = (wy * m + ty) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let mrow = plane + iy as usize * w;
                        let trow = (win * mo * mo + ty * mo) * c + ci;
                        for tx in 0..mo {
                            let ix = (wx * m + tx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            visit(mrow + ix as usize, trow + tx * c);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn partition_then_reverse_is_identity() {
        let x = randn::<f64>(&[2, 3, 8, 12], 0.0, 1.0, &mut rng(5));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wins = window_partition(&mut tape, xv, 4).unwrap();
        assert_eq!(tape.value(wins).shape(), &[2 * 2 * 3, 16, 3]);
        let back = window_reverse(&mut tape, wins, 4, 2, 8, 12).unwrap();
        assert!(tape.value(back).bits_eq(&x));
    }

    #[test]
    fn partition_places_coordinates_where_expected() {
        // Encode each position as y * 100 + x and read one token back.
        let mut x = Tensor::<f64>::zeros(&[1, 2, 8, 12]);
        for c in 0..2 {
            for y in 0..8 {
                for xx in 0..12 {
                    x.data_mut()[(c * 8 + y) * 12 + xx] = (y * 100 + xx) as f64 + 1000.0 * c as f64;
                }
            }
        }
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wins = window_partition(&mut tape, xv, 4).unwrap();
        let wv = tape.value(wins);
        // Window (row 1, col 2) of the 2x3 grid, token (ty 1, tx 3),
        // channel 1: map position y = 5, x = 11.
        let win = 1 * 3 + 2;
        let tok = 1 * 4 + 3;
        assert_eq!(wv.data()[(win * 16 + tok) * 2 + 1], 511.0 + 1000.0);
    }

    #[test]
    fn partition_gradient_is_all_ones() {
        let x = randn::<f64>(&[1, 2, 4, 4], 0.0, 1.0, &mut rng(6));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wins = window_partition(&mut tape, xv, 2).unwrap();
        let s = tape.sum_all(wins);
        tape.backward(s).unwrap();
        assert!(tape.grad(xv).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_overlap_matches_plain_partition() {
        let x = randn::<f64>(&[2, 3, 8, 8], 0.0, 1.0, &mut rng(7));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let plain = window_partition(&mut tape, xv, 4).unwrap();
        let overlapped = overlapping_window_partition(&mut tape, xv, 4, 0.0).unwrap();
        assert!(tape.value(plain).bits_eq(tape.value(overlapped)));
    }

    #[test]
    fn adjacent_overlapping_tiles_share_columns() {
        // m = 4 with overlap 0.5 gives 6-wide tiles with a 1-sample margin;
        // horizontally adjacent tiles share 2 columns of the map.
        let x = randn::<f64>(&[1, 1, 4, 8], 0.0, 1.0, &mut rng(8));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wins = overlapping_window_partition(&mut tape, xv, 4, 0.5).unwrap();
        let wv = tape.value(wins);
        assert_eq!(wv.shape(), &[2, 36, 1]);
        for ty in 1..5 {
            // Tile row ty maps to map row ty - 1, in range for 4 rows.
            for (t0, t1) in [(4usize, 0usize), (5, 1)] {
                let a = wv.data()[ty * 6 + t0];
                let b = wv.data()[36 + ty * 6 + t1];
                assert_eq!(a, b, "tiles disagree at ty={ty} t0={t0}");
            }
        }
    }

    #[test]
    fn overlap_margin_outside_map_is_zero() {
        let x = randn::<f64>(&[1, 1, 4, 4], 1.0, 1.0, &mut rng(9));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wins = overlapping_window_partition(&mut tape, xv, 4, 0.5).unwrap();
        let wv = tape.value(wins);
        // Single window: the first tile row and column sit outside the map.
        for tx in 0..6 {
            assert_eq!(wv.data()[tx], 0.0);
        }
        for ty in 0..6 {
            assert_eq!(wv.data()[ty * 6], 0.0);
        }
    }

    #[test]
    fn overlap_gradient_counts_tile_memberships() {
        // With 4-wide tiles, overlap 0.5, and an 8-wide map, columns 3 and 4
        // belong to both tiles; all other columns to exactly one.
        let x = randn::<f64>(&[1, 1, 4, 8], 0.0, 1.0, &mut rng(10));
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let wins = overlapping_window_partition(&mut tape, xv, 4, 0.5).unwrap();
        let s = tape.sum_all(wins);
        tape.backward(s).unwrap();
        let grad = tape.grad(xv).unwrap();
        let col_count = [1.0, 1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 1.0];
        for y in 0..4 {
            for xx in 0..8 {
                assert_eq!(grad.data()[y * 8 + xx], col_count[xx], "at ({y}, {xx})");
            }
        }
    }

    #[test]
    fn indivisible_extent_is_rejected() {
        let mut tape = Tape::new();
        let xv = tape.leaf(&Tensor::<f64>::zeros(&[1, 1, 6, 8]));
        assert!(window_partition(&mut tape, xv, 4).is_err());
        assert!(overlapping_window_partition(&mut tape, xv, 4, 0.5).is_err());
    }

    #[test]
    fn fractional_margin_is_rejected() {
        // 0.25 * 8 = 2 extra samples total, split 1/1: fine.
        assert_eq!(overlap_extent(8, 0.25).unwrap(), (10, 1));
        // 0.25 * 6 = 1.5 extra samples: not a whole tile size.
        assert!(overlap_extent(6, 0.25).is_err());
        // 0.125 * 8 = 1 extra sample: whole but not evenly split.
        assert!(overlap_extent(8, 0.125).is_err());
    }
}
