use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dataset, ImageRef, Result};
use crate::digest::stable_u64;

/// Keeps one caption per image, chosen uniformly. The draw for each image
/// depends only on `(seed, image id)`, so it does not shift when other images
/// are added or removed.
pub fn sample_one_caption_per_image(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let mut builder = Dataset::builder(dataset.name(), dataset.split());
    for (image, captions) in dataset.entries() {
        if captions.is_empty() {
            return Err(CorpusError::NoCaptions(image.id.clone()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stable_u64([
            b"one-caption".as_slice(),
            &seed.to_le_bytes(),
            image.id.as_bytes(),
        ]));
        let pick = rng.random_range(0..captions.len());
        builder.add_image(image.clone())?;
        builder.add_caption(captions[pick].clone())?;
    }
    Ok(builder.build())
}

/// Draws `n` images with all their captions. The images are a prefix of one
/// seeded permutation, so for a fixed seed smaller subsets are contained in
/// larger ones. Output keeps the input's image order.
pub fn sample_subset(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(CorpusError::EmptySubset);
    }
    if n > dataset.image_count() {
        return Err(CorpusError::SubsetTooLarge {
            requested: n,
            available: dataset.image_count(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.image_count()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut chosen = order[..n].to_vec();
    chosen.sort_unstable();

    let mut builder = Dataset::builder(dataset.name(), dataset.split());
    let images = dataset.images();
    for i in chosen {
        let image = &images[i];
        builder.add_image(image.clone())?;
        for caption in dataset.captions_for(&image.id) {
            builder.add_caption(caption.clone())?;
        }
    }
    Ok(builder.build())
}

fn qualified(image: &ImageRef) -> String {
    let prefix = format!("{}/", image.dataset);
    if image.id.starts_with(&prefix) {
        image.id.clone()
    } else {
        format!("{prefix}{}", image.id)
    }
}

/// Union of two datasets. Image ids are qualified with their source dataset
/// name (`mscoco/123`) so equal raw ids from different sources do not clash;
/// an id that still collides is an error. Merging with an empty dataset
/// returns the other side unchanged.
pub fn merge(a: &Dataset, b: &Dataset) -> Result<Dataset> {
    if b.is_empty() {
        return Ok(a.clone());
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    let mut builder = Dataset::builder(format!("{}+{}", a.name(), b.name()), a.split());
    for source in [a, b] {
        for (image, captions) in source.entries() {
            let id = qualified(image);
            if builder.contains(&id) {
                return Err(CorpusError::IdCollision(id));
            }
            builder.add_image(ImageRef {
                id: id.clone(),
                uri: image.uri.clone(),
                dataset: image.dataset.clone(),
            })?;
            for caption in captions {
                let mut caption = caption.clone();
                caption.image_id = id.clone();
                builder.add_caption(caption)?;
            }
        }
    }
    Ok(builder.build())
}
