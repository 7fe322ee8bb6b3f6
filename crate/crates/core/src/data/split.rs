use super::Example;
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Stratified train/val/test split. Within every class, examples are
/// shuffled and cut at `round(f0 * n)` and `round((f0 + f1) * n)`; each split
/// keeps the original dataset order.
pub fn split(
    dataset: &[Example],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<Example>, Vec<Example>, Vec<Example>)> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); super::NUM_CLASSES];
    for (i, ex) in dataset.iter().enumerate() {
        let c = ex
            .label_index()
            .ok_or_else(|| Error::Argument(format!("unknown label {:?}", ex.label)))?;
        by_class[c].push(i);
    }
    let mut rng = Rng::new(seed);
    let mut assign = vec![0u8; dataset.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 3 {
            return Err(Error::Argument(format!(
                "class {:?} has {} examples, fewer than the 3 splits",
                super::CLASS_NAMES[c],
                idx.len()
            )));
        }
        rng.shuffle(idx);
        let n = idx.len();
        let cut1 = ((fractions[0] * n as f64).round() as usize).clamp(1, n - 2);
        let cut2 = (((fractions[0] + fractions[1]) * n as f64).round() as usize).clamp(cut1 + 1, n - 1);
        for (pos, &i) in idx.iter().enumerate() {
            assign[i] = if pos < cut1 {
                0
            } else if pos < cut2 {
                1
            } else {
                2
            };
        }
    }
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for (ex, a) in dataset.iter().zip(assign) {
        match a {
            0 => out.0.push(ex.clone()),
            1 => out.1.push(ex.clone()),
            _ => out.2.push(ex.clone()),
        }
    }
    Ok(out)
}
