use super::{Image, Mask};

#[derive(Clone, Debug, PartialEq)]
pub struct HeuristicLabel {
    pub label: Mask,
    /// Normalized score map in [0, 1].
    pub score: Vec<f64>,
    pub warning: Option<String>,
}

/// Unsupervised label: contrast to the mean border color times a Gaussian
/// center prior, normalized to [0, 1] and thresholded at its mean.
pub fn heuristic_label(image: &Image) -> HeuristicLabel {
    let (h, w, ch) = (image.height, image.width, image.channels);
    let hw = h * w;
    let px = |c: usize, i: usize| image.data[c * hw + i] as f64 / 255.0;
    let border: Vec<usize> = (0..hw)
        .filter(|&i| {
            let (y, x) = (i / w, i % w);
            y == 0 || x == 0 || y == h - 1 || x == w - 1
        })
        .collect();
    let mean: Vec<f64> = (0..ch)
        .map(|c| border.iter().map(|&i| px(c, i)).sum::<f64>() / border.len() as f64)
        .collect();
    let sigma = 0.3 * h.min(w) as f64;
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut score: Vec<f64> = (0..hw)
        .map(|i| {
            let contrast = (0..ch).map(|c| (px(c, i) - mean[c]).powi(2)).sum::<f64>().sqrt();
            let (dy, dx) = ((i / w) as f64 + 0.5 - cy, (i % w) as f64 + 0.5 - cx);
            contrast * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let max = score.iter().cloned().fold(0.0, f64::max);
    if max < 1e-9 {
        return HeuristicLabel {
            label: Mask::zeros(h, w),
            score: vec![0.0; hw],
            warning: Some("flat image: heuristic label is empty".into()),
        };
    }
    score.iter_mut().for_each(|s| *s /= max);
    let thr = score.iter().sum::<f64>() / hw as f64;
    // Strictly above the mean, so a uniform score cannot mark every pixel.
    let label = Mask {
        height: h,
        width: w,
        data: score.iter().map(|&s| (s > thr) as u8).collect(),
    };
    HeuristicLabel {
        label,
        score,
        warning: None,
    }
}
