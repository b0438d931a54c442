//! Boundary extraction and box-counting dimension.

use crate::error::{Error, Result};
use crate::renderer::Field;

/// Minimum number of occupied boxes for a scale to enter the fit.
pub const MIN_OCCUPIED: usize = 8;
/// Minimum number of scales surviving the filters.
pub const MIN_SCALES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BoundaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(col, row));
            }
        }
        Self { width, height, bits }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxCount {
    pub box_size: usize,
    pub occupied: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxCountResult {
    pub entries: Vec<BoxCount>,
    pub dimension: f64,
    pub fit_r2: f64,
    pub usable_sizes: usize,
}

/// Pixels whose class differs from at least one 4-neighbour.
pub fn boundary_mask(field: &Field) -> Result<BoundaryMask> {
    let (w, h) = (field.width, field.height);
    if w * h < 2 {
        return Err(Error::DegenerateField(format!("{w}x{h} has no neighbours")));
    }
    Ok(BoundaryMask::from_fn(w, h, |col, row| {
        let here = field.class_at(col, row);
        (col > 0 && field.class_at(col - 1, row) != here)
            || (col + 1 < w && field.class_at(col + 1, row) != here)
            || (row > 0 && field.class_at(col, row - 1) != here)
            || (row + 1 < h && field.class_at(col, row + 1) != here)
    }))
}

/// Occupied-box counts for dyadic box sizes on an origin-aligned grid.
/// Partial boxes at the right and bottom edges count like full ones.
pub fn boxcount(mask: &BoundaryMask) -> Vec<BoxCount> {
    let (w, h) = (mask.width, mask.height);
    let mut entries = Vec::new();
    if w == 0 || h == 0 {
        return entries;
    }
    // Coarsen by OR-pooling 2×2 blocks; each level is exactly the s×s occupancy grid.
    let mut grid = mask.bits.clone();
    let (mut gw, mut gh) = (w, h);
    let mut size = 1;
    loop {
        entries.push(BoxCount { box_size: size, occupied: grid.iter().filter(|&&b| b).count() });
        if size * 2 > w.min(h) {
            break;
        }
        let (nw, nh) = (gw.div_ceil(2), gh.div_ceil(2));
        let mut next = vec![false; nw * nh];
        for row in 0..gh {
            for col in 0..gw {
                if grid[row * gw + col] {
                    next[(row / 2) * nw + col / 2] = true;
                }
            }
        }
        grid = next;
        gw = nw;
        gh = nh;
        size *= 2;
    }
    entries
}

/// Least-squares slope of ln(occupied) against ln(size) over the usable scales.
/// Returns `(dimension, r², usable scale count)`.
pub fn fit_dimension(entries: &[BoxCount], width: usize, height: usize) -> Result<(f64, f64, usize)> {
    let points: Vec<(f64, f64)> = entries
        .iter()
        .filter(|e| {
            let total = width.div_ceil(e.box_size) * height.div_ceil(e.box_size);
            e.occupied >= MIN_OCCUPIED && e.occupied < total
        })
        .map(|e| ((e.box_size as f64).ln(), (e.occupied as f64).ln()))
        .collect();
    if points.len() < MIN_SCALES {
        return Err(Error::InsufficientScales { usable: points.len() });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(((-slope).clamp(0.0, 2.0), r2, points.len()))
}

pub fn estimate_mask(mask: &BoundaryMask) -> Result<BoxCountResult> {
    let entries = boxcount(mask);
    let (dimension, fit_r2, usable_sizes) = fit_dimension(&entries, mask.width, mask.height)?;
    Ok(BoxCountResult { entries, dimension, fit_r2, usable_sizes })
}

/// Box-counting estimate for the converged/diverged boundary of a field.
pub fn estimate_field(field: &Field) -> Result<BoxCountResult> {
    estimate_mask(&boundary_mask(field)?)
}

/// Box counts for a field with the fit when one exists; dimension and r² are
/// NaN when too few scales survive the filters.
pub fn report_field(field: &Field) -> BoxCountResult {
    let entries = boundary_mask(field).map(|m| boxcount(&m)).unwrap_or_default();
    match fit_dimension(&entries, field.width, field.height) {
        Ok((dimension, fit_r2, usable_sizes)) => BoxCountResult { entries, dimension, fit_r2, usable_sizes },
        Err(_) => BoxCountResult { entries, dimension: f64::NAN, fit_r2: f64::NAN, usable_sizes: 0 },
    }
}

/// Lower median of the per-field dimensions, skipping fields whose fit fails.
pub fn sequence_dimension<'a>(fields: impl IntoIterator<Item = &'a Field>) -> Result<f64> {
    let dims = fields
        .into_iter()
        .filter_map(|f| estimate_field(f).ok().map(|r| r.dimension))
        .collect();
    median_dimension(dims)
}

/// Lower median (the lower-middle element for even counts).
pub fn median_dimension(mut dims: Vec<f64>) -> Result<f64> {
    if dims.is_empty() {
        return Err(Error::NoUsableFields);
    }
    dims.sort_by(f64::total_cmp);
    Ok(dims[(dims.len() - 1) / 2])
}

/// Procedural Sierpinski carpet of `levels` levels on a 3^levels square.
pub fn sierpinski_carpet(levels: u32) -> BoundaryMask {
    let side = 3usize.pow(levels);
    BoundaryMask::from_fn(side, side, |mut col, mut row| {
        while col > 0 || row > 0 {
            if col % 3 == 1 && row % 3 == 1 {
                return false;
            }
            col /= 3;
            row /= 3;
        }
        true
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorize::tests::synthetic_field;
    use crate::trainer::RunClass;

    fn halves(w: usize, h: usize) -> Field {
        synthetic_field(w, h, |c, _| (if c < w / 2 { RunClass::Converged } else { RunClass::Diverged }, 1.0))
    }

    #[test]
    fn report_falls_back_to_nan() {
        let uniform = synthetic_field(64, 64, |_, _| (RunClass::Converged, 1.0));
        let r = report_field(&uniform);
        assert!(r.dimension.is_nan() && r.fit_r2.is_nan());
        assert_eq!(r.entries.len(), 7);
        assert!(report_field(&synthetic_field(1, 1, |_, _| (RunClass::Converged, 1.0))).entries.is_empty());

        let split = synthetic_field(64, 64, |c, r| (if c + r < 64 { RunClass::Converged } else { RunClass::Diverged }, 1.0));
        let fitted = estimate_field(&split).unwrap();
        assert_eq!(report_field(&split).dimension.to_bits(), fitted.dimension.to_bits());
    }

    #[test]
    fn masks() {
        let uniform = synthetic_field(8, 8, |_, _| (RunClass::Converged, 1.0));
        assert_eq!(boundary_mask(&uniform).unwrap().count(), 0);

        let m = boundary_mask(&halves(8, 6)).unwrap();
        for row in 0..6 {
            for col in 0..8 {
                assert_eq!(m.get(col, row), col == 3 || col == 4);
            }
        }

        let checker = synthetic_field(7, 5, |c, r| {
            (if (c + r) % 2 == 0 { RunClass::Converged } else { RunClass::Diverged }, 1.0)
        });
        assert_eq!(boundary_mask(&checker).unwrap().count(), 35);

        let single = synthetic_field(1, 1, |_, _| (RunClass::Converged, 1.0));
        assert!(boundary_mask(&single).is_err());
    }

    #[test]
    fn relabeling_symmetry() {
        let f = synthetic_field(20, 20, |c, r| {
            (if (c * c + 3 * r) % 7 < 3 { RunClass::Converged } else { RunClass::Diverged }, 1.0)
        });
        let mut g = f.clone();
        for o in &mut g.outcomes {
            o.class = match o.class {
                RunClass::Converged => RunClass::Diverged,
                RunClass::Diverged => RunClass::Converged,
            };
        }
        assert_eq!(boundary_mask(&f).unwrap(), boundary_mask(&g).unwrap());
    }

    #[test]
    fn box_counts() {
        let empty = BoundaryMask::new(16, 16);
        assert!(boxcount(&empty).iter().all(|e| e.occupied == 0));
        assert_eq!(boxcount(&empty).len(), 5);

        let mut one = BoundaryMask::new(16, 16);
        one.bits[5 * 16 + 9] = true;
        assert!(boxcount(&one).iter().all(|e| e.occupied == 1));

        let column = BoundaryMask::from_fn(256, 256, |c, _| c == 100);
        for e in boxcount(&column) {
            assert_eq!(e.occupied, 256 / e.box_size);
        }
    }

    #[test]
    fn ragged_edges_count() {
        // 5 wide: at size 4 the right-hand partial box holds column 4.
        let m = BoundaryMask::from_fn(5, 5, |c, r| c == 4 && r == 0);
        let e = boxcount(&m);
        assert_eq!(e.iter().map(|e| e.box_size).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!(e.iter().all(|e| e.occupied == 1));
    }

    #[test]
    fn known_dimensions() {
        let column = BoundaryMask::from_fn(256, 256, |c, _| c == 100);
        let r = estimate_mask(&column).unwrap();
        assert!((r.dimension - 1.0).abs() < 0.05, "{r:?}");

        let straight = estimate_field(&halves(256, 256)).unwrap();
        assert!((straight.dimension - 1.0).abs() < 0.05, "{straight:?}");

        // Dyadic boxes on a triadic set bias the small-carpet estimate low; the
        // six-level carpet lands within 0.05 of ln 8 / ln 3.
        let exact = 8f64.ln() / 3f64.ln();
        let big = estimate_mask(&sierpinski_carpet(6)).unwrap();
        assert!((big.dimension - exact).abs() < 0.05, "{big:?}");
    }

    // Scan every box pixel by pixel, without pooling.
    fn naive_counts(mask: &BoundaryMask) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut s = 1;
        while s <= mask.width.min(mask.height) {
            let mut occupied = 0;
            for by in (0..mask.height).step_by(s) {
                for bx in (0..mask.width).step_by(s) {
                    let hit = (by..(by + s).min(mask.height))
                        .any(|r| (bx..(bx + s).min(mask.width)).any(|c| mask.get(c, r)));
                    occupied += hit as usize;
                }
            }
            out.push((s, occupied));
            s *= 2;
        }
        out
    }

    #[test]
    fn pooling_matches_naive_scan() {
        let carpet = sierpinski_carpet(5);
        let naive = naive_counts(&carpet);
        let pooled: Vec<_> = boxcount(&carpet).iter().map(|e| (e.box_size, e.occupied)).collect();
        assert_eq!(pooled, naive);
        assert_eq!(naive[0], (1, 32768));
        assert_eq!(naive[5], (32, 60));
        let odd = BoundaryMask::from_fn(77, 50, |c, r| (c * 7 + r * 3) % 11 == 0 || c == r);
        let pooled: Vec<_> = boxcount(&odd).iter().map(|e| (e.box_size, e.occupied)).collect();
        assert_eq!(pooled, naive_counts(&odd));
    }

    #[test]
    fn five_level_carpet_estimate() {
        // Least squares over sizes 1..32 of the naive counts, done separately.
        let carpet = sierpinski_carpet(5);
        let pts: Vec<(f64, f64)> = naive_counts(&carpet)
            .into_iter()
            .filter(|&(s, o)| o >= 8 && o < 243usize.div_ceil(s).pow(2))
            .map(|(s, o)| ((s as f64).ln(), (o as f64).ln()))
            .collect();
        assert_eq!(pts.len(), 6);
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let r = estimate_mask(&carpet).unwrap();
        assert!((r.dimension + slope).abs() < 1e-12);
        assert!((r.dimension - 1.8211725779863897).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn saturated_mask_has_no_scales() {
        let full = BoundaryMask::from_fn(64, 64, |_, _| true);
        assert!(matches!(estimate_mask(&full), Err(Error::InsufficientScales { usable: 0 })));
    }

    #[test]
    fn carpet_shape() {
        let c = sierpinski_carpet(2);
        assert_eq!(c.width, 9);
        assert_eq!(c.count(), 64);
        assert!(!c.get(4, 4));
        assert!(!c.get(1, 1));
        assert!(c.get(0, 0));
    }

    #[test]
    fn medians() {
        assert_eq!(median_dimension(vec![1.7, 1.0, 1.5]).unwrap(), 1.5);
        assert_eq!(median_dimension(vec![1.0, 2.0]).unwrap(), 1.0);
        assert!(median_dimension(vec![]).is_err());
    }

    #[test]
    fn sequence_skips_unusable_frames() {
        let good = halves(128, 128);
        let saturated = synthetic_field(64, 64, |c, r| {
            (if (c + r) % 2 == 0 { RunClass::Converged } else { RunClass::Diverged }, 1.0)
        });
        let d = estimate_field(&good).unwrap().dimension;
        assert_eq!(sequence_dimension([&good]).unwrap(), d);
        assert_eq!(sequence_dimension([&saturated, &good]).unwrap(), d);
        assert!(sequence_dimension([&saturated]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn counts_shrink_at_most_fourfold(bits in proptest::collection::vec(any::<bool>(), 40 * 33)) {
                let m = BoundaryMask { width: 40, height: 33, bits };
                let e = boxcount(&m);
                for pair in e.windows(2) {
                    prop_assert!(pair[1].occupied <= pair[0].occupied);
                    prop_assert!(4 * pair[1].occupied >= pair[0].occupied);
                }
            }
        }
    }
}
