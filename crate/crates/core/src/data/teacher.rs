use crate::error::DataError;
use crate::map::Map;

/// Value the body teacher assigns inside the foreground.
pub const BODY_LEVEL: f32 = 0.5;

/// Fuses the two synthetic teachers into a pseudo-depth map in `[0, 1]`.
///
/// The face teacher is the disparity min-max normalised over the foreground
/// and zero outside it; the body teacher is the foreground mask at
/// [`BODY_LEVEL`]. The output is their average.
pub fn make_teacher_depth(disparity: &Map, foreground: &Map) -> Result<Map, DataError> {
    assert_eq!(disparity.dims(), foreground.dims());
    let inside: Vec<f32> = disparity
        .data
        .iter()
        .zip(&foreground.data)
        .filter(|(_, &m)| m > 0.5)
        .map(|(&d, _)| d)
        .collect();
    if inside.is_empty() {
        return Err(DataError::EmptyForeground);
    }
    let lo = inside.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = inside.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let range = hi - lo;
    let data = disparity
        .data
        .iter()
        .zip(&foreground.data)
        .map(|(&d, &m)| {
            if m <= 0.5 {
                return 0.0;
            }
            let face = if range > 0.0 { (d - lo) / range } else { 0.5 };
            ((face + BODY_LEVEL) / 2.0).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Map::new(disparity.height, disparity.width, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_rule() {
        let d = Map::new(1, 4, vec![1.0, 2.0, 3.0, 9.0]);
        let fg = Map::new(1, 4, vec![1.0, 1.0, 1.0, 0.0]);
        let t = make_teacher_depth(&d, &fg).unwrap();
        assert_eq!(t.data, vec![0.25, 0.5, 0.75, 0.0]);
    }

    #[test]
    fn empty_foreground_is_an_error() {
        let d = Map::zeros(2, 2);
        assert!(matches!(make_teacher_depth(&d, &Map::zeros(2, 2)), Err(DataError::EmptyForeground)));
    }
}
