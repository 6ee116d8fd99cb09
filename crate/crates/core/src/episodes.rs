//! Dataset ingestion, class splits and K-way N-shot episode sampling.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use image::imageops::FilterType;
use image::{DynamicImage, ImageReader};
use protoadapt_tensor::NdArray;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "meta-train",
            Split::Val => "meta-val",
            Split::Test => "meta-test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meta-train" => Ok(Split::Train),
            "meta-val" => Ok(Split::Val),
            "meta-test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Where an image's pixels come from.
#[derive(Debug, Clone)]
pub enum ImageRef {
    File(PathBuf),
    /// Already-preprocessed `[C,H,W]` pixels (synthetic datasets).
    Memory(Arc<NdArray<f32>>),
}

#[derive(Debug, Clone)]
pub struct ClassEntry {
    pub id: String,
    pub images: Vec<ImageRef>,
}

/// Classes with their image references, optionally tagged with a split.
#[derive(Debug, Clone, Default)]
pub struct ClassIndex {
    pub split: Option<Split>,
    pub classes: Vec<ClassEntry>,
}

impl ClassIndex {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.id.as_str())
    }

    fn tagged(split: Split, mut classes: Vec<ClassEntry>) -> ClassIndex {
        classes.sort_by(|a, b| a.id.cmp(&b.id));
        ClassIndex {
            split: Some(split),
            classes,
        }
    }

    /// Fails unless the index can supply episodes of `shape`.
    pub fn validate_for(&self, shape: &TaskShape) -> Result<()> {
        if self.classes.len() < shape.way {
            return Err(Error::Sampling(format!(
                "{}-way episodes need {} classes, split has {}",
                shape.way,
                shape.way,
                self.classes.len()
            )));
        }
        let need = shape.shot + shape.query;
        if let Some(c) = self.classes.iter().find(|c| c.images.len() < need) {
            return Err(Error::Sampling(format!(
                "class `{}` has {} images but {}-shot {}-query episodes need {need}",
                c.id,
                c.images.len(),
                shape.shot,
                shape.query
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetLayout {
    /// `root/<alphabet>/<character>/<image>`, class id `<alphabet>/<character>`.
    OmniglotLike,
    /// `root/<class>/<image>`.
    CifarLike,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let read = fs::read_dir(dir).map_err(|e| Error::ingestion(dir, e.to_string()))?;
    let mut out = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| Error::ingestion(dir, e.to_string()))?;
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn class_from_dir(id: String, dir: &Path) -> Result<ClassEntry> {
    let mut images = Vec::new();
    for path in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
        ImageReader::open(&path)
            .and_then(|r| r.with_guessed_format())
            .map_err(|e| Error::ingestion(&path, e.to_string()))?
            .into_dimensions()
            .map_err(|e| Error::ingestion(&path, format!("unreadable image: {e}")))?;
        images.push(ImageRef::File(path));
    }
    if images.is_empty() {
        return Err(Error::ingestion(dir, "class directory contains no images"));
    }
    Ok(ClassEntry { id, images })
}

/// Scans a dataset tree. Classes come back in lexicographic order of their ids.
pub fn load_dataset(root: &Path, layout: DatasetLayout) -> Result<ClassIndex> {
    if !root.is_dir() {
        return Err(Error::ingestion(root, "dataset directory does not exist"));
    }
    let mut classes = Vec::new();
    match layout {
        DatasetLayout::CifarLike => {
            for dir in subdirs(root)? {
                let id = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
                classes.push(class_from_dir(id, &dir)?);
            }
        }
        DatasetLayout::OmniglotLike => {
            for alphabet in subdirs(root)? {
                let a = alphabet.file_name().unwrap_or_default().to_string_lossy().into_owned();
                let characters = subdirs(&alphabet)?;
                if characters.is_empty() {
                    return Err(Error::ingestion(&alphabet, "alphabet directory has no character directories"));
                }
                for dir in characters {
                    let c = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
                    classes.push(class_from_dir(format!("{a}/{c}"), &dir)?);
                }
            }
        }
    }
    if classes.is_empty() {
        return Err(Error::ingestion(root, "no classes found"));
    }
    classes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(ClassIndex { split: None, classes })
}

/// Fractions of classes assigned to meta-train / meta-val / meta-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitFractions { train, val, test }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: ClassIndex,
    pub val: ClassIndex,
    pub test: ClassIndex,
}

impl Splits {
    pub fn get(&self, split: Split) -> &ClassIndex {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Seeded partition of classes. Val and test sizes are `floor(n * fraction)`;
/// the remainder goes to train.
pub fn split_classes(index: &ClassIndex, fractions: SplitFractions, master_seed: u64) -> Result<Splits> {
    let SplitFractions { train, val, test } = fractions;
    for (name, f) in [("train", train), ("val", val), ("test", test)] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::Config(format!("{name} fraction {f} is outside [0, 1]")));
        }
    }
    if ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {}, not 1",
            train + val + test
        )));
    }
    let n = index.classes.len();
    let n_val = (n as f64 * val).floor() as usize;
    let n_test = (n as f64 * test).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, crate::seed::SPLIT_STREAM, 0));
    order.shuffle(&mut rng);
    let pick = |ids: &[usize]| ids.iter().map(|&i| index.classes[i].clone()).collect::<Vec<_>>();
    let (test_ids, rest) = order.split_at(n_test);
    let (val_ids, train_ids) = rest.split_at(n_val);
    Ok(Splits {
        train: ClassIndex::tagged(Split::Train, pick(train_ids)),
        val: ClassIndex::tagged(Split::Val, pick(val_ids)),
        test: ClassIndex::tagged(Split::Test, pick(test_ids)),
    })
}

/// Writes `class_id<TAB>split` rows, train classes first.
pub fn write_manifest(path: &Path, splits: &Splits) -> Result<()> {
    let mut text = String::new();
    for split in [&splits.train, &splits.val, &splits.test] {
        let tag = split.split.expect("split indices are tagged");
        for id in split.ids() {
            text.push_str(&format!("{id}\t{tag}\n"));
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rebuilds splits from a manifest. Every class of `index` must appear exactly once.
pub fn read_manifest(path: &Path, index: &ClassIndex) -> Result<Splits> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let by_id: HashMap<&str, &ClassEntry> = index.classes.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut assigned: HashMap<String, Split> = HashMap::new();
    for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, tag) = line.split_once('\t').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `class_id<TAB>split`", path.display(), lineno + 1))
        })?;
        if !by_id.contains_key(id) {
            return Err(Error::Config(format!("{}: unknown class `{id}`", path.display())));
        }
        if assigned.insert(id.to_string(), tag.parse()?).is_some() {
            return Err(Error::Config(format!("{}: class `{id}` listed twice", path.display())));
        }
    }
    if let Some(missing) = index.ids().find(|id| !assigned.contains_key(*id)) {
        return Err(Error::Config(format!("{}: class `{missing}` has no split", path.display())));
    }
    let collect = |s: Split| {
        let classes = index
            .classes
            .iter()
            .filter(|c| assigned[&c.id] == s)
            .cloned()
            .collect();
        ClassIndex::tagged(s, classes)
    };
    Ok(Splits {
        train: collect(Split::Train),
        val: collect(Split::Val),
        test: collect(Split::Test),
    })
}

/// Reloads the manifest at `manifest` if present, otherwise splits and writes it.
pub fn split_with_manifest(
    index: &ClassIndex,
    fractions: SplitFractions,
    master_seed: u64,
    manifest: &Path,
) -> Result<Splits> {
    if manifest.exists() {
        return read_manifest(manifest, index);
    }
    let splits = split_classes(index, fractions, master_seed)?;
    write_manifest(manifest, &splits)?;
    Ok(splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageTarget {
    Omniglot28,
    Cifar32,
    MiniImageNet84,
}

impl ImageTarget {
    pub fn channels(self) -> usize {
        match self {
            ImageTarget::Omniglot28 => 1,
            _ => 3,
        }
    }

    pub fn size(self) -> usize {
        match self {
            ImageTarget::Omniglot28 => 28,
            ImageTarget::Cifar32 => 32,
            ImageTarget::MiniImageNet84 => 84,
        }
    }
}

/// Bilinear resize to the target size (skipped when already that size),
/// grayscale or RGB conversion, and scaling to `[0, 1]`. Output is `[C,H,W]`.
pub fn preprocess_image(img: &DynamicImage, target: ImageTarget) -> NdArray<f32> {
    let size = target.size() as u32;
    let channels = target.channels();
    let resized;
    let img = if img.width() == size && img.height() == size {
        img
    } else {
        resized = img.resize_exact(size, size, FilterType::Triangle);
        &resized
    };
    let plane = (size * size) as usize;
    let mut data = vec![0.0f32; channels * plane];
    if channels == 1 {
        for (i, p) in img.to_luma8().pixels().enumerate() {
            data[i] = p.0[0] as f32 / 255.0;
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + i] = p.0[c] as f32 / 255.0;
            }
        }
    }
    NdArray::new(vec![channels, size as usize, size as usize], data).expect("plane sizes match")
}

pub fn preprocess(path: &Path, target: ImageTarget) -> Result<NdArray<f32>> {
    let img = image::open(path).map_err(|e| Error::ingestion(path, format!("decode failed: {e}")))?;
    Ok(preprocess_image(&img, target))
}

/// Decodes and caches images for one dataset.
#[derive(Debug)]
pub struct ImageLoader {
    target: ImageTarget,
    invert: bool,
    cache: Mutex<HashMap<PathBuf, Arc<NdArray<f32>>>>,
}

impl ImageLoader {
    /// `invert` maps `v -> 1 - v`, turning dark-on-light strokes into bright
    /// strokes on a zero background.
    pub fn new(target: ImageTarget, invert: bool) -> Self {
        ImageLoader {
            target,
            invert,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn target(&self) -> ImageTarget {
        self.target
    }

    pub fn load(&self, image: &ImageRef) -> Result<Arc<NdArray<f32>>> {
        match image {
            ImageRef::Memory(px) => Ok(Arc::clone(px)),
            ImageRef::File(path) => {
                if let Some(hit) = self.cache.lock().expect("cache lock").get(path) {
                    return Ok(Arc::clone(hit));
                }
                let mut px = preprocess(path, self.target)?;
                if self.invert {
                    px.data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
                }
                let px = Arc::new(px);
                self.cache
                    .lock()
                    .expect("cache lock")
                    .insert(path.clone(), Arc::clone(&px));
                Ok(px)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskShape {
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

impl TaskShape {
    pub fn new(way: usize, shot: usize, query: usize) -> Self {
        TaskShape { way, shot, query }
    }
}

/// Position of an image inside a [`ClassIndex`]: (class, image).
pub type ImageKey = (usize, usize);

/// The images chosen for one episode, before any pixels are loaded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodePlan {
    pub seed: u64,
    pub shape: TaskShape,
    /// Index-level class positions; label `k` is `classes[k]`.
    pub classes: Vec<usize>,
    pub support: Vec<ImageKey>,
    pub query: Vec<ImageKey>,
}

/// Draws classes and then per-class images without replacement, fully determined by `seed`.
pub fn plan_episode(split: &ClassIndex, shape: TaskShape, seed: u64) -> Result<EpisodePlan> {
    if shape.way == 0 || shape.shot == 0 {
        return Err(Error::Sampling(format!("way and shot must be positive: {shape:?}")));
    }
    split.validate_for(&shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = index::sample(&mut rng, split.classes.len(), shape.way).into_vec();
    let mut support = Vec::with_capacity(shape.way * shape.shot);
    let mut query = Vec::with_capacity(shape.way * shape.query);
    for &c in &classes {
        let picks = index::sample(&mut rng, split.classes[c].images.len(), shape.shot + shape.query).into_vec();
        support.extend(picks[..shape.shot].iter().map(|&i| (c, i)));
        query.extend(picks[shape.shot..].iter().map(|&i| (c, i)));
    }
    Ok(EpisodePlan {
        seed,
        shape,
        classes,
        support,
        query,
    })
}

/// One K-way N-shot task with labels remapped to `0..K`.
#[derive(Debug, Clone)]
pub struct Episode {
    pub plan: EpisodePlan,
    pub class_ids: Vec<String>,
    pub support_images: NdArray<f32>,
    pub support_labels: Vec<usize>,
    pub query_images: NdArray<f32>,
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn seed(&self) -> u64 {
        self.plan.seed
    }

    pub fn way(&self) -> usize {
        self.plan.shape.way
    }

    /// Assembles an episode from already-preprocessed `[B,C,H,W]` arrays.
    pub fn from_arrays(
        seed: u64,
        support_images: NdArray<f32>,
        support_labels: Vec<usize>,
        query_images: NdArray<f32>,
        query_labels: Vec<usize>,
    ) -> Result<Episode> {
        let way = support_labels.iter().max().map_or(0, |m| m + 1);
        if support_images.shape().first() != Some(&support_labels.len())
            || query_images.shape().first() != Some(&query_labels.len())
        {
            return Err(Error::Contract("image and label counts differ".into()));
        }
        Ok(Episode {
            plan: EpisodePlan {
                seed,
                shape: TaskShape::new(way, support_labels.len() / way.max(1), query_labels.len() / way.max(1)),
                classes: (0..way).collect(),
                support: Vec::new(),
                query: Vec::new(),
            },
            class_ids: (0..way).map(|k| k.to_string()).collect(),
            support_images,
            support_labels,
            query_images,
            query_labels,
        })
    }
}

fn gather(split: &ClassIndex, keys: &[ImageKey], loader: &ImageLoader) -> Result<NdArray<f32>> {
    let pixels = keys
        .iter()
        .map(|&(c, i)| loader.load(&split.classes[c].images[i]))
        .collect::<Result<Vec<_>>>()?;
    if pixels.is_empty() {
        let t = loader.target();
        return Ok(NdArray::zeros(&[0, t.channels(), t.size(), t.size()]));
    }
    let refs: Vec<&NdArray<f32>> = pixels.iter().map(|p| p.as_ref()).collect();
    Ok(NdArray::stack(&refs)?)
}

pub fn sample_episode(split: &ClassIndex, shape: TaskShape, seed: u64, loader: &ImageLoader) -> Result<Episode> {
    let plan = plan_episode(split, shape, seed)?;
    let support_images = gather(split, &plan.support, loader)?;
    let query_images = gather(split, &plan.query, loader)?;
    let label_of = |keys: &[ImageKey]| {
        keys.iter()
            .map(|(c, _)| plan.classes.iter().position(|k| k == c).expect("sampled class"))
            .collect::<Vec<_>>()
    };
    Ok(Episode {
        support_labels: label_of(&plan.support),
        query_labels: label_of(&plan.query),
        class_ids: plan.classes.iter().map(|&c| split.classes[c].id.clone()).collect(),
        support_images,
        query_images,
        plan,
    })
}

/// Random access to a deterministic sequence of episodes.
pub trait EpisodeSource: Sync {
    fn episode(&self, index: usize) -> Result<Episode>;
}

impl EpisodeSource for [Episode] {
    fn episode(&self, index: usize) -> Result<Episode> {
        self.get(index)
            .cloned()
            .ok_or_else(|| Error::Sampling(format!("episode {index} out of range")))
    }
}

impl EpisodeSource for Vec<Episode> {
    fn episode(&self, index: usize) -> Result<Episode> {
        self.as_slice().episode(index)
    }
}

/// Episode `i` is sampled with seed `derive_seed(master_seed, stream, i)`.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    pub split: Arc<ClassIndex>,
    pub loader: Arc<ImageLoader>,
    pub shape: TaskShape,
    pub master_seed: u64,
    pub stream: u64,
}

impl EpisodeSampler {
    pub fn seed_for(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, self.stream, index as u64)
    }
}

impl EpisodeSource for EpisodeSampler {
    fn episode(&self, index: usize) -> Result<Episode> {
        sample_episode(&self.split, self.shape, self.seed_for(index), &self.loader)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn memory_index(classes: usize, per_class: usize) -> ClassIndex {
        let classes = (0..classes)
            .map(|c| ClassEntry {
                id: format!("c{c:03}"),
                images: (0..per_class)
                    .map(|i| ImageRef::Memory(Arc::new(NdArray::full(&[1, 2, 2], (c * 100 + i) as f32))))
                    .collect(),
            })
            .collect();
        ClassIndex { split: None, classes }
    }

    #[test]
    fn episode_sizes_follow_task_shape() {
        let idx = memory_index(10, 20);
        let loader = ImageLoader::new(ImageTarget::Omniglot28, false);
        let ep = sample_episode(&idx, TaskShape::new(5, 1, 15), 9, &loader).unwrap();
        assert_eq!(ep.support_images.shape()[0], 5);
        assert_eq!(ep.query_images.shape()[0], 75);
        assert_eq!(ep.support_labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn labels_map_consistently_to_classes() {
        let idx = memory_index(8, 6);
        let loader = ImageLoader::new(ImageTarget::Omniglot28, false);
        let ep = sample_episode(&idx, TaskShape::new(4, 2, 3), 1, &loader).unwrap();
        // Pixel value encodes class * 100 + image.
        let check = |imgs: &NdArray<f32>, labels: &[usize]| {
            for (row, &l) in labels.iter().enumerate() {
                let class = (imgs.row(row)[0] as usize) / 100;
                assert_eq!(format!("c{class:03}"), ep.class_ids[l]);
            }
        };
        check(&ep.support_images, &ep.support_labels);
        check(&ep.query_images, &ep.query_labels);
    }

    #[test]
    fn too_few_images_fails_at_sampling() {
        let mut idx = memory_index(6, 20);
        idx.classes[3].images.truncate(1);
        let err = plan_episode(&idx, TaskShape::new(5, 1, 15), 0).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)));
        assert!(err.to_string().contains("c003"));
    }

    #[test]
    fn too_few_classes_fails() {
        let idx = memory_index(3, 20);
        assert!(matches!(plan_episode(&idx, TaskShape::new(5, 1, 1), 0), Err(Error::Sampling(_))));
    }

    #[test]
    fn split_sizes_are_floor_based_with_remainder_to_train() {
        let idx = memory_index(100, 1);
        let s = split_classes(&idx, SplitFractions::new(0.8, 0.0, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 0, 20));
        let s = split_classes(&idx, SplitFractions::new(0.64, 0.16, 0.2), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 16, 20));
        let s = split_classes(&memory_index(7, 1), SplitFractions::new(0.5, 0.25, 0.25), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (5, 1, 1));
        let s = split_classes(&idx, SplitFractions::new(1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(s.train.len(), 100);
    }

    #[test]
    fn bad_fractions_are_config_errors() {
        let idx = memory_index(10, 1);
        assert!(matches!(
            split_classes(&idx, SplitFractions::new(1.2, -0.2, 0.0), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            split_classes(&idx, SplitFractions::new(0.5, 0.2, 0.2), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn preprocess_white_image_is_all_ones() {
        let img = DynamicImage::ImageLuma8(image::GrayImage::from_pixel(105, 105, image::Luma([255])));
        let px = preprocess_image(&img, ImageTarget::Omniglot28);
        assert_eq!(px.shape(), &[1, 28, 28]);
        assert!(px.data().iter().all(|&v| v == 1.0));
        let rgb = preprocess_image(&img, ImageTarget::Cifar32);
        assert_eq!(rgb.shape(), &[3, 32, 32]);
        assert!(rgb.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn preprocess_exact_size_is_bitwise_identity() {
        let img = image::GrayImage::from_fn(28, 28, |x, y| image::Luma([((x * 7 + y * 13) % 256) as u8]));
        let px = preprocess_image(&DynamicImage::ImageLuma8(img.clone()), ImageTarget::Omniglot28);
        for (i, p) in img.pixels().enumerate() {
            assert_eq!(px.data()[i], p.0[0] as f32 / 255.0);
        }
    }
}
