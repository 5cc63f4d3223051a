use crate::error::{Error, Result};
use crate::image::Image;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1/mse)` with peak 1, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Mean squared error over the pixels where `mask` is set (all pixels
/// without a mask). `None` when the mask selects nothing.
pub fn masked_mse(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<Option<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "psnr",
            format!("{:?} vs {:?}", a.dims(), b.dims()),
        ));
    }
    if let Some(m) = mask {
        if m.len() != a.pixel_count() {
            return Err(Error::shape(
                "psnr",
                format!("mask of {} for {} pixels", m.len(), a.pixel_count()),
            ));
        }
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..a.pixel_count() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        for (x, y) in a.at(i).iter().zip(b.at(i)) {
            sum += (x - y) * (x - y);
        }
        count += a.channels;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// PSNR over masked pixels; an empty mask counts as a perfect match.
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    Ok(masked_mse(a, b, mask)?.map_or(PSNR_CAP, psnr_from_mse))
}

/// Per-channel histogram of the masked pixels with `bins` equal bins over
/// `[0, 1]`, normalized to unit mass.
pub fn color_histogram(colors: &[[f64; 3]], bins: usize) -> Vec<[f64; 3]> {
    let mut h = vec![[0.0; 3]; bins.max(1)];
    for c in colors {
        for ch in 0..3 {
            let b = ((c[ch].clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
            h[b][ch] += 1.0;
        }
    }
    let n = colors.len().max(1) as f64;
    for b in h.iter_mut() {
        for v in b.iter_mut() {
            *v /= n;
        }
    }
    h
}

/// Sum over channels of the 1-D earth mover's distance between two
/// histograms on the unit interval.
pub fn histogram_emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(
            "histogram_emd",
            format!("{} vs {} bins", a.len(), b.len()),
        ));
    }
    let width = 1.0 / a.len() as f64;
    let mut total = 0.0;
    for ch in 0..3 {
        let mut carry = 0.0;
        for (x, y) in a.iter().zip(b) {
            carry += x[ch] - y[ch];
            total += carry.abs() * width;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_cap() {
        let a = Image::from_data(2, 2, 3, vec![0.3; 12]).unwrap();
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP);
    }

    #[test]
    fn uniform_error_of_a_tenth_is_twenty_db() {
        let a = Image::from_data(4, 4, 3, vec![0.5; 48]).unwrap();
        let b = Image::from_data(4, 4, 3, vec![0.6; 48]).unwrap();
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
    }

    #[test]
    fn mask_restricts_pixels() {
        let a = Image::from_data(2, 1, 1, vec![0.0, 0.0]).unwrap();
        let b = Image::from_data(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(psnr(&a, &b, Some(&[true, false])).unwrap(), PSNR_CAP);
        assert!((psnr(&a, &b, Some(&[false, true])).unwrap()).abs() < 1e-12);
        assert!(psnr(&a, &b, Some(&[true])).is_err());
    }

    #[test]
    fn emd_of_point_masses() {
        let a = color_histogram(&[[0.05; 3]], 10);
        let b = color_histogram(&[[0.95; 3]], 10);
        assert!((histogram_emd(&a, &b).unwrap() - 3.0 * 0.9).abs() < 1e-12);
        assert_eq!(histogram_emd(&a, &a).unwrap(), 0.0);
    }
}
