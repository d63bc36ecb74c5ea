//! HTK mel scale and triangular filterbank.
//!
//! Triangles are laid out uniformly in the mel domain and evaluated on the
//! mel value of each FFT bin, peak amplitude 1, no area normalization.

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone)]
struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<Filter>,
    centers_hz: Vec<f64>,
    n_bins: usize,
}

impl MelFilterbank {
    /// `n_bins` is `fft_size / 2 + 1`.
    pub fn new(n_mels: usize, fft_size: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Self {
        let n_bins = fft_size / 2 + 1;
        let mel_lo = hz_to_mel(f_min);
        let mel_hi = hz_to_mel(f_max);
        let step = (mel_hi - mel_lo) / (n_mels + 1) as f64;
        let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_lo + step * i as f64).collect();
        let bin_mels: Vec<f64> = (0..n_bins)
            .map(|k| hz_to_mel(k as f64 * f64::from(sample_rate) / fft_size as f64))
            .collect();

        let filters = (0..n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let mut first_bin = None;
                let mut weights = Vec::new();
                for (k, &mel) in bin_mels.iter().enumerate() {
                    let w = if mel > left && mel <= center {
                        (mel - left) / (center - left)
                    } else if mel > center && mel < right {
                        (right - mel) / (right - center)
                    } else {
                        0.0
                    };
                    if w > 0.0 {
                        let start = *first_bin.get_or_insert(k);
                        weights.resize(k - start, 0.0);
                        weights.push(w);
                    }
                }
                Filter {
                    first_bin: first_bin.unwrap_or(0),
                    weights,
                }
            })
            .collect();
        let centers_hz = edges[1..=n_mels].iter().map(|&m| mel_to_hz(m)).collect();
        Self {
            filters,
            centers_hz,
            n_bins,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Dense `n_mels x n_bins` weight matrix.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        self.filters
            .iter()
            .map(|f| {
                let mut row = vec![0.0; self.n_bins];
                row[f.first_bin..f.first_bin + f.weights.len()].copy_from_slice(&f.weights);
                row
            })
            .collect()
    }

    /// Projects one power spectrum (`n_bins` values) onto the filters.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (o, f) in out.iter_mut().zip(&self.filters) {
            *o = f
                .weights
                .iter()
                .zip(&power[f.first_bin..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}
