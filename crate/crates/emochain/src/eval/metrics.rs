use crate::error::{Error, Result};
use crate::features::{F0Contour, SpectralFrames};

/// Mean absolute F0 difference in Hz. With `voiced_only`, only frames voiced
/// in both contours count.
pub fn f0_mae(pred: &F0Contour, truth: &F0Contour, voiced_only: bool) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "contours differ in length: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..pred.len() {
        if voiced_only && !(pred.voiced_mask()[t] && truth.voiced_mask()[t]) {
            continue;
        }
        sum += (pred.values()[t] - truth.values()[t]).abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("no frames selected for F0 error".into()));
    }
    Ok(sum / count as f64)
}

/// Mean absolute difference over every coefficient of every frame.
pub fn spectral_mae(pred: &SpectralFrames, truth: &SpectralFrames) -> Result<f64> {
    if (pred.frames(), pred.dim()) != (truth.frames(), truth.dim()) {
        return Err(Error::Shape(format!(
            "spectra differ in shape: {}x{} vs {}x{}",
            pred.frames(),
            pred.dim(),
            truth.frames(),
            truth.dim()
        )));
    }
    let (a, b) = (pred.matrix().data(), truth.matrix().data());
    if a.is_empty() {
        return Err(Error::Degenerate("empty spectra".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_offset_and_identity() {
        let a = F0Contour::voiced(vec![100.0, 150.0, 200.0]).unwrap();
        let b = a.with_values(vec![105.0, 155.0, 205.0]).unwrap();
        assert_eq!(f0_mae(&a, &a, true).unwrap(), 0.0);
        assert_eq!(f0_mae(&a, &b, false).unwrap(), 5.0);
        assert_eq!(f0_mae(&b, &a, true).unwrap(), 5.0);
    }

    #[test]
    fn unvoiced_frames_are_skipped_and_empty_selection_is_degenerate() {
        let a = F0Contour::new(vec![100.0, 0.0, 120.0], vec![true, false, true], 5.0).unwrap();
        let b = F0Contour::new(vec![110.0, 300.0, 120.0], vec![true, true, true], 5.0).unwrap();
        assert_eq!(f0_mae(&a, &b, true).unwrap(), 5.0);
        assert!((f0_mae(&a, &b, false).unwrap() - 310.0 / 3.0).abs() < 1e-12);
        let silent = F0Contour::new(vec![0.0; 2], vec![false; 2], 5.0).unwrap();
        assert!(matches!(f0_mae(&silent, &silent, true), Err(Error::Degenerate(_))));
        assert!(matches!(f0_mae(&a, &silent, true), Err(Error::Shape(_))));
    }
}
