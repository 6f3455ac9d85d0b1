use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    /// Set when one side came out empty.
    pub warning: Option<String>,
}

/// Image-level random split: `round(n × fraction)` items go to training.
///
/// Operates on whole images, so every tile later cut from an image stays on
/// that image's side.
pub fn split_dataset<T: Clone>(images: &[T], fraction: f64, seed: u64) -> Result<DatasetSplit<T>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction {fraction} not in (0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (images.len() as f64 * fraction).round() as usize;
    let (tr, va) = order.split_at(n_train);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter()
            .map(|i| images[i].clone())
            .collect::<Vec<_>>()
    };
    let (train, val) = (pick(tr), pick(va));
    let warning = match (train.is_empty(), val.is_empty()) {
        (_, true) if !images.is_empty() => Some(format!(
            "validation split is empty ({} image(s) at fraction {fraction})",
            images.len()
        )),
        (true, _) if !images.is_empty() => Some("training split is empty".to_string()),
        _ if images.is_empty() => Some("no images to split".to_string()),
        _ => None,
    };
    Ok(DatasetSplit {
        train,
        val,
        warning,
    })
}
