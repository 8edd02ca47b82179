use super::HarnessError;

/// Root-mean-square tracking error between a reference and the summed
/// fleet net power, kW.
pub fn rmse(reference: &[f64], fleet_net: &[f64]) -> Result<f64, HarnessError> {
    if reference.len() != fleet_net.len() {
        return Err(HarnessError::LengthMismatch {
            expected: reference.len(),
            got: fleet_net.len(),
        });
    }
    let sum_sq: f64 = reference
        .iter()
        .zip(fleet_net)
        .map(|(r, s)| (r - s) * (r - s))
        .sum();
    Ok((sum_sq / reference.len() as f64).sqrt())
}
