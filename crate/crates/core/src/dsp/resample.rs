use super::Waveform;

/// Linear-interpolation resampling to `target_rate`. Output length is
/// `round(len * target / source)`.
pub fn resample_linear(w: &Waveform, target_rate: u32) -> Waveform {
    assert!(target_rate > 0, "target rate must be positive");
    if w.sample_rate == target_rate || w.samples.is_empty() {
        return Waveform::new(w.samples.clone(), target_rate);
    }
    let ratio = w.sample_rate as f64 / target_rate as f64;
    let out_len = (w.len() as f64 / ratio).round() as usize;
    let last = w.len() - 1;
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i = pos.floor() as usize;
            if i >= last {
                w.samples[last]
            } else {
                let (a, b) = (w.samples[i], w.samples[i + 1]);
                a + (pos - i as f64) * (b - a)
            }
        })
        .collect();
    Waveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_length() {
        let w = Waveform::new(vec![0.1; 48_000], 48_000);
        let out = resample_linear(&w, 24_000);
        assert_eq!(out.len(), 24_000);
        assert_eq!(out.sample_rate, 24_000);
    }

    #[test]
    fn constants_are_exact() {
        let w = Waveform::new(vec![0.3; 1001], 44_100);
        let out = resample_linear(&w, 24_000);
        assert!(out.samples.iter().all(|&s| s == 0.3));
    }

    #[test]
    fn ramp_round_trip() {
        let w = Waveform::new((0..24_000).map(|i| 0.25 + 1e-5 * i as f64).collect(), 24_000);
        let down = resample_linear(&w, 16_000);
        let up = resample_linear(&down, 24_000);
        assert_eq!(up.len(), w.len());
        let err = up.samples.iter().zip(&w.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-3, "{err}");
    }
}
