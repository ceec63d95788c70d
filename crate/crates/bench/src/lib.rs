//! Fixtures shared by the criterion benchmarks in `benches/`.

use decoyforge::model::{encode_items, EncodedItem, Group};
use decoyforge::synthetic::{World, WorldConfig};
use decoyforge::{CandidateSet, Mode};

pub fn world(images: usize) -> World {
    World::build(&WorldConfig::with_images(images, 17)).expect("synthetic world builds")
}

/// Encoded original-decoy items and a batch of `triplets` groups over them.
pub fn training_batch(world: &World, mode: Mode, triplets: usize) -> (Vec<EncodedItem>, Vec<Group>) {
    let items: Vec<CandidateSet> = world.corpus.records().iter().map(CandidateSet::from_original).collect();
    let data = encode_items(&items, mode, &world.features, &world.table).expect("world encodes");
    let batch = (0..triplets.min(data.len()))
        .map(|item| Group {
            item,
            candidates: (0..data[item].answers.len()).collect(),
        })
        .collect();
    (data, batch)
}
