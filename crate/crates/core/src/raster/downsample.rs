/// Sums of `factor`×`factor` blocks per channel, planar output (C×h×w).
/// Input is interleaved (H×W×C) bytes of a square image.
pub fn block_sums(data: &[u8], size: usize, channels: usize, factor: usize) -> Vec<u16> {
    assert_eq!(data.len(), size * size * channels, "buffer does not match a {size}×{size}×{channels} image");
    assert!(size % factor == 0, "image side {size} not divisible by {factor}");
    assert!(factor * factor * 255 <= u16::MAX as usize);
    let out = size / factor;
    let mut sums = vec![0u16; channels * out * out];
    for r in 0..size {
        for c in 0..size {
            let base = (r * size + c) * channels;
            let cell = (r / factor) * out + c / factor;
            for ch in 0..channels {
                sums[ch * out * out + cell] += data[base + ch] as u16;
            }
        }
    }
    sums
}

/// Block mean divided by 255, in [0, 1], planar C×(size/4)×(size/4).
pub fn downsample(data: &[u8], size: usize, channels: usize) -> Vec<f64> {
    let denom = 16.0 * 255.0;
    block_sums(data, size, channels, 4).into_iter().map(|s| s as f64 / denom).collect()
}
