use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One epoch of class-balanced batches, as indices into `labels`.
///
/// The epoch is as long as the largest class: every sample of a largest
/// class appears exactly once, smaller classes are drawn from reshuffled
/// passes until they supply the same count. Each batch holds
/// `batch_size / n_classes` samples per class; the last batch may be
/// shorter but stays balanced.
pub fn balanced_batches(
    labels: &[usize],
    n_classes: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("balanced batches need at least 2 classes".into()));
    }
    if batch_size == 0 || !batch_size.is_multiple_of(n_classes) {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} is not a positive multiple of {n_classes} classes"
        )));
    }
    let mut members = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        members
            .get_mut(l)
            .ok_or_else(|| Error::InvalidArgument(format!("label {l} out of range for {n_classes} classes")))?
            .push(i);
    }
    if let Some(c) = members.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c));
    }
    let epoch = members.iter().map(Vec::len).max().unwrap_or(0);
    let streams: Vec<Vec<usize>> = members
        .iter()
        .map(|m| {
            let mut stream = Vec::with_capacity(epoch + m.len());
            while stream.len() < epoch {
                let mut pass = m.clone();
                pass.shuffle(rng);
                stream.extend(pass);
            }
            stream.truncate(epoch);
            stream
        })
        .collect();

    let per_class = batch_size / n_classes;
    let batches = (0..epoch.div_ceil(per_class))
        .map(|b| {
            let range = b * per_class..((b + 1) * per_class).min(epoch);
            streams.iter().flat_map(|s| s[range.clone()].iter().copied()).collect()
        })
        .collect();
    Ok(batches)
}
