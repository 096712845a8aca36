//! Plain (`P2`) portable graymap output.

/// Grey levels used for every image.
pub const MAXVAL: u32 = 255;

/// Min-max normalizes `values` to `[0, 1]`; a constant input maps to 0.5.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Encodes row-major `[0, 1]` intensities.
pub fn encode(width: usize, height: usize, unit: &[f64]) -> String {
    assert_eq!(unit.len(), width * height, "pixel count");
    let mut s = format!("P2\n{width} {height}\n{MAXVAL}\n");
    for row in unit.chunks(width) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u32).to_string())
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_mid_grey() {
        let px = normalize(&[0.3; 9]);
        assert!(px.iter().all(|&p| p == 0.5));
        assert_eq!(encode(3, 3, &px).lines().nth(3).unwrap(), "128 128 128");
    }

    #[test]
    fn min_max_spans_full_range() {
        let px = normalize(&[-2.0, 0.0, 2.0]);
        assert_eq!(px, vec![0.0, 0.5, 1.0]);
        assert_eq!(encode(3, 1, &px), "P2\n3 1\n255\n0 128 255\n");
    }
}
