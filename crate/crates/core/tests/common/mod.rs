#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wordspot_core::{CorpusIndex, WordBox, WordDescriptor, WordEntry, DESCRIPTOR_LEN};

pub fn random_descriptor(rng: &mut impl Rng) -> Vec<f64> {
    (0..DESCRIPTOR_LEN).map(|_| rng.random::<f64>()).collect()
}

pub fn entry(word_id: u64, doc_id: u64, values: &[f64], label: Option<&str>) -> WordEntry {
    WordEntry {
        word_id,
        doc_id,
        bbox: WordBox::new(0, 0, 1, 1),
        descriptor: WordDescriptor::from_slice(values).expect("valid descriptor"),
        label: label.map(str::to_string),
    }
}

/// `n` uniform random descriptors with shuffled, sparse word ids.
pub fn random_index(n: usize, seed: u64) -> CorpusIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 7).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
    let entries = ids
        .into_iter()
        .map(|id| {
            let d = random_descriptor(&mut rng);
            entry(id, id % 5, &d, None)
        })
        .collect();
    CorpusIndex::new(entries).unwrap()
}
