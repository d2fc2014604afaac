use super::{DefectClass, ImageDataset, Partition};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Seeded per-class partition: `train_counts[class id]` items go to train,
/// the rest of that class to test.
pub fn split(dataset: &ImageDataset, train_counts: [usize; 3], seed: u64) -> Result<(ImageDataset, ImageDataset)> {
    let root = RngStream::new(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in DefectClass::ALL {
        let mut idx: Vec<usize> = dataset
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.label == class)
            .map(|(i, _)| i)
            .collect();
        let want = train_counts[class.id()];
        if want > idx.len() {
            return Err(Error::Insufficient(format!(
                "{class}: requested {want} training items but only {} available",
                idx.len()
            )));
        }
        root.substream(class.name()).shuffle(&mut idx);
        for (k, &i) in idx.iter().enumerate() {
            let mut item = dataset.items[i].clone();
            if k < want {
                item.partition = Partition::Train;
                train.push(item);
            } else {
                item.partition = Partition::Test;
                test.push(item);
            }
        }
    }
    Ok((ImageDataset::new(train), ImageDataset::new(test)))
}
