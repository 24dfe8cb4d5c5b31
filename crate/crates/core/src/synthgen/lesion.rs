//! Lesion painting, placement, mask synthesis, and sample assembly.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::synthgen::{ClassLabel, Image, LesionMap, LesionSpec, Mask, Region, Sample};

/// Attempts per lesion before placement is declared infeasible.
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Radial attenuation profile: a Hamming window rescaled so the lesion
/// edge is exactly zero. h(0) = 1, h(radius) = 0, zero beyond the radius,
/// monotone non-increasing in between.
pub fn radial_hamming(d: f64, radius: f64) -> f64 {
    debug_assert!(radius > 0.0);
    if d > radius {
        return 0.0;
    }
    (0.54 + 0.46 * (std::f64::consts::PI * d / radius).cos() - 0.08) / 0.92
}

/// Elliptical placement mask. Pixel (r, c) is set iff it lies inside the
/// ellipse; the ellipse is clipped to the raster.
pub fn ellipse_mask(
    shape: (usize, usize),
    center: (f64, f64),
    semi_axes: (f64, f64),
) -> Result<Mask> {
    let (height, width) = shape;
    let (cy, cx) = center;
    let (ay, ax) = semi_axes;
    if ay <= 0.0 || ax <= 0.0 {
        return Err(Error::Config(format!("ellipse semi-axes ({ay}, {ax}) must be positive")));
    }
    let mut bits = vec![0u8; height * width];
    for r in 0..height {
        for c in 0..width {
            let dy = (r as f64 - cy) / ay;
            let dx = (c as f64 - cx) / ax;
            if dy * dy + dx * dx <= 1.0 {
                bits[r * width + c] = 1;
            }
        }
    }
    let mask = Mask::new(height, width, bits)?;
    mask.validate_nonempty()?;
    Ok(mask)
}

/// Default brain-silhouette stand-in for generated backgrounds: an ellipse
/// centered on the raster covering roughly 60% of it.
pub fn default_brain_mask(shape: (usize, usize)) -> Result<Mask> {
    let (h, w) = shape;
    ellipse_mask(
        shape,
        ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0),
        (0.44 * h as f64, 0.44 * w as f64),
    )
}

/// Place `count` lesions and paint the multiplicative map.
///
/// Centers are drawn by rejection sampling on integer pixels; a candidate
/// is accepted when the closed disc of radius diameter/2 around it lies
/// entirely inside the placement region (top half and/or mask) and its
/// center is at least one diameter away from every accepted center.
/// The ground truth marks pixels with map value < 1. Deterministic in
/// `lesion_seed`; independent of background pixels by construction.
///
/// `count` here is the effective lesion count: class-1 samples pass 0 and
/// get the identity map with an empty ground truth.
pub fn lesion_map(
    lesion_seed: u64,
    mask: &Mask,
    spec: &LesionSpec,
    shape: (usize, usize),
    count: usize,
) -> Result<(LesionMap, Mask)> {
    let (height, width) = shape;
    if mask.shape() != shape {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image shape {:?}",
            mask.shape(),
            shape
        )));
    }
    let mut map = LesionMap::ones(height, width);
    if count == 0 {
        let gt = map.ground_truth();
        return Ok((map, gt));
    }

    let radius = spec.diameter / 2.0;
    let row_limit = match spec.region {
        Region::TopHalfInMask => height / 2, // rows [0, floor(H/2))
        Region::MaskOnly => height,
    };
    let in_region = |r: i64, c: i64| -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < row_limit
            && (c as usize) < width
            && mask.is_set(r as usize, c as usize)
    };
    let reach = radius.ceil() as i64;
    let disc_fits = |cr: i64, cc: i64| -> bool {
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let d2 = (dr * dr + dc * dc) as f64;
                if d2 <= radius * radius && !in_region(cr + dr, cc + dc) {
                    return false;
                }
            }
        }
        true
    };

    let mut rng = CounterRng::new(lesion_seed);
    let mut centers: Vec<(i64, i64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cr = rng.next_below(height as u64) as i64;
            let cc = rng.next_below(width as u64) as i64;
            let min_sep2 = (spec.diameter * spec.diameter) as f64;
            let separated = centers.iter().all(|&(r, c)| {
                let dr = (r - cr) as f64;
                let dc = (c - cc) as f64;
                dr * dr + dc * dc >= min_sep2
            });
            if separated && disc_fits(cr, cc) {
                centers.push((cr, cc));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation {
                seed: lesion_seed,
                msg: format!(
                    "no feasible lesion placement after {MAX_PLACEMENT_ATTEMPTS} attempts \
                     (diameter {}, region {:?})",
                    spec.diameter, spec.region
                ),
            });
        }
    }

    for &(cr, cc) in &centers {
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (cr + dr, cc + dc);
                if r < 0 || c < 0 || r as usize >= height || c as usize >= width {
                    continue;
                }
                let d = ((dr * dr + dc * dc) as f64).sqrt();
                if d <= radius {
                    let factor = 1.0 - spec.intensity * radial_hamming(d, radius);
                    map.factors_mut()[r as usize * width + c as usize] = factor as f32;
                }
            }
        }
    }

    let gt = map.ground_truth();
    Ok((map, gt))
}

/// Assemble one sample: normalized background x lesion map x brain mask.
/// Class 1 uses the identity lesion map (empty ground truth).
pub fn make_sample(
    class: ClassLabel,
    background: &Image,
    mask: &Mask,
    spec: &LesionSpec,
    lesion_seed: u64,
    background_seed: u64,
) -> Result<Sample> {
    let shape = background.shape();
    if mask.shape() != shape {
        return Err(Error::Shape(format!(
            "mask {:?} does not match background {:?}",
            mask.shape(),
            shape
        )));
    }
    let count = match class {
        ClassLabel::Class1 => 0,
        ClassLabel::Class2 => spec.count,
    };
    let (map, ground_truth) = lesion_map(lesion_seed, mask, spec, shape, count)?;

    let (height, width) = shape;
    let mut pixels = Vec::with_capacity(height * width);
    for i in 0..height * width {
        pixels.push(background.pixels()[i] * map.factors()[i] * mask.bits()[i] as f32);
    }
    let image = Image::new(height, width, pixels)?;
    Ok(Sample { image, label: class, ground_truth, lesion_seed, background_seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::perlin_field;

    #[test]
    fn hamming_profile_fixed_points() {
        assert!((radial_hamming(0.0, 5.0) - 1.0).abs() < 1e-12);
        assert!(radial_hamming(5.0, 5.0).abs() < 1e-12);
        // cos(pi/2) = 0 so h(r/2) = (0.54 - 0.08) / 0.92 = 0.5
        assert!((radial_hamming(2.5, 5.0) - 0.5).abs() < 1e-12);
        assert_eq!(radial_hamming(5.1, 5.0), 0.0);
    }

    #[test]
    fn hamming_monotone_nonincreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let d = 5.0 * i as f64 / 1000.0;
            let h = radial_hamming(d, 5.0);
            assert!(h <= prev + 1e-12);
            prev = h;
        }
    }

    #[test]
    fn ellipse_covers_raster_when_huge() {
        let m = ellipse_mask((8, 8), (3.5, 3.5), (8.0, 8.0)).unwrap();
        assert_eq!(m.count_set(), 64);
    }

    #[test]
    fn ellipse_clipped_at_edge_is_valid() {
        let m = ellipse_mask((16, 16), (0.0, 8.0), (6.0, 6.0)).unwrap();
        assert!(m.count_set() > 0);
        assert!(m.count_set() < 16 * 16);
    }

    #[test]
    fn ellipse_disc_pixel_count() {
        // radius-2 disc on the integer grid: 13 pixels
        let m = ellipse_mask((8, 8), (4.0, 4.0), (2.0, 2.0)).unwrap();
        assert_eq!(m.count_set(), 13);
    }

    #[test]
    fn ellipse_rejects_degenerate() {
        assert!(ellipse_mask((8, 8), (4.0, 4.0), (0.0, 2.0)).is_err());
        // far outside the raster -> empty -> configuration error
        assert!(ellipse_mask((8, 8), (100.0, 100.0), (2.0, 2.0)).is_err());
    }

    fn full_mask(h: usize, w: usize) -> Mask {
        Mask::new(h, w, vec![1; h * w]).unwrap()
    }

    #[test]
    fn zero_count_is_identity() {
        let mask = full_mask(32, 32);
        let spec = LesionSpec::default();
        let (map, gt) = lesion_map(9, &mask, &spec, (32, 32), 0).unwrap();
        assert!(map.factors().iter().all(|&f| f == 1.0));
        assert_eq!(gt.count_set(), 0);
    }

    #[test]
    fn map_minimum_is_one_minus_intensity() {
        let mask = full_mask(64, 64);
        let spec = LesionSpec::default();
        let (map, _) = lesion_map(11, &mask, &spec, (64, 64), spec.count).unwrap();
        let min = map.factors().iter().copied().fold(f32::INFINITY, f32::min);
        assert_eq!(min, 0.7);
        let n_min = map.factors().iter().filter(|&&f| f == min).count();
        assert_eq!(n_min, spec.count, "one minimum per lesion center");
        assert!(map.factors().iter().all(|&f| (0.7..=1.0).contains(&f)));
    }

    #[test]
    fn ground_truth_marks_attenuated_pixels() {
        let mask = full_mask(64, 64);
        let spec = LesionSpec::default();
        let (map, gt) = lesion_map(13, &mask, &spec, (64, 64), spec.count).unwrap();
        for i in 0..map.factors().len() {
            assert_eq!(gt.bits()[i] == 1, map.factors()[i] < 1.0);
        }
    }

    #[test]
    fn components_and_footprint_area() {
        let mask = full_mask(64, 64);
        let spec = LesionSpec::default();
        for seed in 0..20u64 {
            let (_, gt) = lesion_map(seed, &mask, &spec, (64, 64), spec.count).unwrap();
            assert_eq!(gt.count_components(), spec.count, "seed {seed}");
            // each footprint within +/-15% of pi r^2; both lesions use the
            // same radius so the total obeys the same tolerance
            let expected = spec.count as f64 * std::f64::consts::PI * 25.0;
            let area = gt.count_set() as f64;
            assert!(
                (area - expected).abs() <= 0.15 * expected,
                "seed {seed}: area {area} vs {expected}"
            );
        }
    }

    #[test]
    fn lesions_stay_in_top_half_and_mask() {
        let mask = default_brain_mask((64, 64)).unwrap();
        let spec = LesionSpec::default();
        for seed in 100..110u64 {
            let (_, gt) = lesion_map(seed, &mask, &spec, (64, 64), spec.count).unwrap();
            for r in 0..64 {
                for c in 0..64 {
                    if gt.is_set(r, c) {
                        assert!(r < 32, "seed {seed}: ground truth at row {r}");
                        assert!(mask.is_set(r, c), "seed {seed}: outside mask at ({r},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn ground_truth_ignores_background() {
        let mask = full_mask(48, 48);
        let spec = LesionSpec::default();
        let (_, gt_a) = lesion_map(77, &mask, &spec, (48, 48), spec.count).unwrap();
        let (_, gt_b) = lesion_map(77, &mask, &spec, (48, 48), spec.count).unwrap();
        assert_eq!(gt_a, gt_b);
    }

    #[test]
    fn infeasible_placement_names_seed() {
        // mask too small to admit a 10px-diameter disc
        let mut bits = vec![0u8; 64 * 64];
        for r in 0..8 {
            for c in 0..8 {
                bits[r * 64 + c] = 1;
            }
        }
        let mask = Mask::new(64, 64, bits).unwrap();
        let spec = LesionSpec::default();
        let err = lesion_map(0xBEEF, &mask, &spec, (64, 64), spec.count).unwrap_err();
        match err {
            Error::Generation { seed, .. } => assert_eq!(seed, 0xBEEF),
            other => panic!("expected generation error, got {other}"),
        }
    }

    #[test]
    fn class1_sample_is_masked_background() {
        let bg = perlin_field(3, (4, 4), (32, 32)).unwrap();
        let mask = default_brain_mask((32, 32)).unwrap();
        let spec = LesionSpec { diameter: 6.0, ..LesionSpec::default() };
        let s = make_sample(ClassLabel::Class1, &bg, &mask, &spec, 5, 3).unwrap();
        assert_eq!(s.ground_truth.count_set(), 0);
        for i in 0..32 * 32 {
            assert_eq!(s.image.pixels()[i], bg.pixels()[i] * mask.bits()[i] as f32);
        }
    }

    #[test]
    fn class2_center_attenuation_and_masking() {
        let bg = perlin_field(8, (4, 4), (64, 64)).unwrap();
        let mask = full_mask(64, 64);
        let spec = LesionSpec::default();
        let s = make_sample(ClassLabel::Class2, &bg, &mask, &spec, 21, 8).unwrap();
        let (map, _) = lesion_map(21, &mask, &spec, (64, 64), spec.count).unwrap();
        let mut centers = 0;
        for i in 0..64 * 64 {
            if map.factors()[i] == 0.7 {
                centers += 1;
                assert_eq!(s.image.pixels()[i], 0.7 * bg.pixels()[i]);
            }
        }
        assert_eq!(centers, spec.count);
        assert!(s.image.pixels().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn masked_out_pixels_are_zero() {
        let bg = perlin_field(4, (4, 4), (32, 32)).unwrap();
        let mask = default_brain_mask((32, 32)).unwrap();
        let spec = LesionSpec { diameter: 6.0, ..LesionSpec::default() };
        let s = make_sample(ClassLabel::Class2, &bg, &mask, &spec, 2, 4).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                if !mask.is_set(r, c) {
                    assert_eq!(s.image.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let bg = perlin_field(3, (4, 4), (32, 32)).unwrap();
        let mask = full_mask(16, 16);
        let spec = LesionSpec::default();
        assert!(make_sample(ClassLabel::Class1, &bg, &mask, &spec, 0, 0).is_err());
    }
}
