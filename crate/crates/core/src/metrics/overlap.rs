use crate::error::Result;
use crate::volume::BinaryMask;

/// Sørensen-Dice coefficient `2|A ∩ B| / (|A| + |B|)`.
///
/// Two empty masks agree perfectly and score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_grid(b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}
