use super::{forward_chain, ChainModel, ChainOutput};
use crate::error::{Error, Result};
use crate::features::{window_starts, F0Contour, FeatureMatrix, SpectralFrames};
use crate::nn::Tensor;

/// Runs the chain on one `context`-frame window of interpolated pitch and
/// spectrum.
pub fn convert_window(model: &ChainModel, f0: &[f64], spec: &FeatureMatrix) -> Result<ChainOutput> {
    let context = model.config().context;
    let p = Tensor::new([1, context, 1], f0.to_vec())?;
    forward_chain(model, &p, &Tensor::from_matrix(spec))
}

/// Converts a whole utterance window by window (hop = context, plus a
/// right-aligned tail window); where windows overlap the later one wins.
/// The converted contour keeps the source voicing: unvoiced frames stay 0.
pub fn convert(model: &ChainModel, f0: &F0Contour, spec: &SpectralFrames) -> Result<(F0Contour, SpectralFrames)> {
    let context = model.config().context;
    let dim = model.config().mfcc_dim;
    if f0.len() != spec.frames() {
        return Err(Error::Shape(format!(
            "F0 has {} frames, spectrum has {}",
            f0.len(),
            spec.frames()
        )));
    }
    if spec.dim() != dim {
        return Err(Error::Shape(format!("model expects {dim} spectral dims, got {}", spec.dim())));
    }
    let len = f0.len();
    let starts = window_starts(len, context, context)?;
    let source = f0.interpolate_unvoiced()?;
    let mut pitch = vec![0.0; len];
    let mut frames = vec![0.0; len * dim];
    for start in starts {
        let out = convert_window(
            model,
            &source.values()[start..start + context],
            spec.slice(start, context)?.matrix(),
        )?;
        pitch[start..start + context].copy_from_slice(out.pitch_hat.data());
        frames[start * dim..(start + context) * dim].copy_from_slice(out.spectrum_hat.data());
    }
    for (p, voiced) in pitch.iter_mut().zip(f0.voiced_mask()) {
        *p = if *voiced { p.max(0.0) } else { 0.0 };
    }
    let converted = F0Contour::new(pitch, f0.voiced_mask().to_vec(), f0.frame_step())?;
    Ok((converted, SpectralFrames::new(FeatureMatrix::new(len, dim, frames)?)?))
}
