//! Tasks built from one labelled image set by per-task permutations.

use serde::{Deserialize, Serialize};

use super::{IdxTensor, MetaDataset, Provenance, Samples, TaskData, IMAGE_MAGIC, LABEL_MAGIC};
use crate::error::{Error, Result};
use crate::rng::Stream;

const TAG_ORDER: u64 = 0x6f72;
const TAG_PERM: u64 = 0x7065;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PermuteKind {
    /// `count` random transpositions of pixel positions.
    PixelSwaps { count: usize },
    /// A random relabelling of the classes.
    LabelPermute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermuteSpec {
    pub kind: PermuteKind,
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub m_test: usize,
    pub seed: u64,
}

/// Composes `count` uniformly random transpositions of `0..len`.
/// `perm[i]` is the source position that lands at position `i`.
pub fn swap_permutation(len: usize, count: usize, stream: &mut Stream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    if len < 2 {
        return perm;
    }
    for _ in 0..count {
        let a = stream.below(len);
        let b = stream.below(len);
        perm.swap(a, b);
    }
    perm
}

fn one_hot(label: usize, classes: usize) -> impl Iterator<Item = f64> {
    (0..classes).map(move |c| if c == label { 1.0 } else { 0.0 })
}

/// Builds `n` tasks of `m` training and `m_test` held-out images each.
/// Images are drawn without replacement across the whole dataset.
pub fn make_permuted_tasks(
    images: &IdxTensor,
    labels: &IdxTensor,
    spec: &PermuteSpec,
) -> Result<MetaDataset> {
    if images.header.magic != IMAGE_MAGIC || labels.header.magic != LABEL_MAGIC {
        return Err(Error::domain("expected an image tensor and a label tensor"));
    }
    let count = images.header.count();
    if labels.header.count() != count {
        return Err(Error::domain(format!(
            "{count} images but {} labels",
            labels.header.count()
        )));
    }
    if spec.n == 0 || spec.m == 0 {
        return Err(Error::domain("n and m must be positive"));
    }
    let per_task = spec.m + spec.m_test;
    if spec.n * per_task > count {
        return Err(Error::domain(format!(
            "{} tasks of {per_task} images need {} images, only {count} available",
            spec.n,
            spec.n * per_task
        )));
    }
    let classes = labels.data.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1;
    let pixels = images.header.item_len();
    let mut order: Vec<usize> = (0..count).collect();
    Stream::keyed(spec.seed, &[TAG_ORDER]).shuffle(&mut order);

    let tasks = (0..spec.n)
        .map(|t| {
            let mut s = Stream::keyed(spec.seed, &[TAG_PERM, t as u64]);
            let (pix_perm, label_perm) = match spec.kind {
                PermuteKind::PixelSwaps { count } => (
                    swap_permutation(pixels, count, &mut s),
                    (0..classes).collect(),
                ),
                PermuteKind::LabelPermute => {
                    let mut lp: Vec<usize> = (0..classes).collect();
                    s.shuffle(&mut lp);
                    ((0..pixels).collect(), lp)
                }
            };
            let build = |idx: &[usize]| {
                let mut x = Vec::with_capacity(idx.len() * pixels);
                let mut y = Vec::with_capacity(idx.len() * classes);
                for &i in idx {
                    let img = images.item(i);
                    x.extend(pix_perm.iter().map(|&p| img[p]));
                    y.extend(one_hot(label_perm[labels.data[i] as usize], classes));
                }
                Samples::new(pixels, classes, x, y)
            };
            let chunk = &order[t * per_task..(t + 1) * per_task];
            Ok(TaskData {
                train: build(&chunk[..spec.m])?,
                test: build(&chunk[spec.m..])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MetaDataset::new(
        tasks,
        Provenance::Permuted {
            spec: *spec,
            source_images: count,
        },
    )
}
