use crate::error::{Error, Result};
use crate::ops::norm2;
use crate::rng;

/// Add white Gaussian noise with `σ = level · ‖clean‖ / √n`, i.e. `level`
/// times the RMS of the clean data. Returns the noisy vector and `σ`.
pub fn add_noise(clean: &[f64], level: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::InvalidArgument(format!("noise level must be nonnegative, got {level}")));
    }
    if clean.is_empty() || level == 0.0 {
        return Ok((clean.to_vec(), 0.0));
    }
    let sigma = level * norm2(clean) / (clean.len() as f64).sqrt();
    let z = rng::standard_normal(&mut rng::stream(seed, 0x0153), clean.len());
    Ok((clean.iter().zip(&z).map(|(d, e)| d + sigma * e).collect(), sigma))
}
