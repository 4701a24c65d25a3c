use std::io::{self, Write};
use std::path::Path;

/// Writes `values` (row-major, `width`×`height`) as a binary 8-bit PGM,
/// mapping the finite min..max range to 0..255. Non-finite values map to 0.
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> io::Result<()> {
    write_pgm_masked(path, width, height, values, None)
}

/// Like [`write_pgm`], normalizing only over pixels where `mask` is set and
/// painting the rest black.
pub fn write_pgm_masked(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64], mask: Option<&[bool]>) -> io::Result<()> {
    assert_eq!(values.len(), width * height);
    let keep = |i: usize| values[i].is_finite() && mask.is_none_or(|m| m[i]);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..values.len() {
        if keep(i) {
            lo = lo.min(values[i]);
            hi = hi.max(values[i]);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = (0..values.len())
        .map(|i| if keep(i) { (((values[i] - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&bytes)?;
    f.flush()
}
