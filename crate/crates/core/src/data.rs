//! Synthetic block-structured data, CSV ingestion and splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TfclError};
use crate::losses::{MultiTaskDataset, Task};

/// Default minimum minority-class count used by [`filter_min_minority`].
pub const DEFAULT_MIN_MINORITY: usize = 8;

/// One diagonal block of the ground-truth weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub features: usize,
    pub tasks: usize,
    /// Upper end `K` of the uniform range the block centroid is drawn from.
    pub centroid_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatedSpec {
    pub users: usize,
    pub features: usize,
    pub samples_per_user: usize,
    pub blocks: Vec<BlockSpec>,
    pub block_sd: f64,
    pub score_noise_sd: f64,
    pub positives_per_user: usize,
    pub seed: u64,
}

impl Default for SimulatedSpec {
    /// 100 users, 80 features, 200 samples each, five blocks.
    fn default() -> Self {
        let block = |features, centroid_max| BlockSpec {
            features,
            tasks: 20,
            centroid_max,
        };
        Self {
            users: 100,
            features: 80,
            samples_per_user: 200,
            blocks: vec![
                block(20, 5.0),
                block(20, 5.0),
                block(10, 10.0),
                block(20, 15.0),
                block(10, 20.0),
            ],
            block_sd: 2.5,
            score_noise_sd: 0.1,
            positives_per_user: 50,
            seed: 0,
        }
    }
}

impl SimulatedSpec {
    /// The default layout with every size halved.
    pub fn half_scale() -> Self {
        let full = Self::default();
        Self {
            users: full.users / 2,
            features: full.features / 2,
            samples_per_user: full.samples_per_user / 2,
            blocks: full
                .blocks
                .iter()
                .map(|b| BlockSpec {
                    features: b.features / 2,
                    tasks: b.tasks / 2,
                    centroid_max: b.centroid_max,
                })
                .collect(),
            positives_per_user: full.positives_per_user / 2,
            ..full
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TfclError::InvalidConfig(msg));
        if self.blocks.is_empty() {
            return bad("at least one block is required".into());
        }
        let rows: usize = self.blocks.iter().map(|b| b.features).sum();
        let cols: usize = self.blocks.iter().map(|b| b.tasks).sum();
        if rows != self.features {
            return bad(format!(
                "block feature rows sum to {rows}, expected {}",
                self.features
            ));
        }
        if cols != self.users {
            return bad(format!(
                "block task columns sum to {cols}, expected {}",
                self.users
            ));
        }
        if self.blocks.iter().any(|b| b.features == 0 || b.tasks == 0) {
            return bad("blocks must be non-empty".into());
        }
        if self.blocks.iter().any(|b| !(b.centroid_max >= 0.0)) {
            return bad("centroid_max must be >= 0".into());
        }
        if self.positives_per_user == 0 || self.positives_per_user >= self.samples_per_user {
            return bad(format!(
                "positives_per_user must lie in 1..{}, got {}",
                self.samples_per_user, self.positives_per_user
            ));
        }
        if !(self.block_sd >= 0.0) || !(self.score_noise_sd >= 0.0) {
            return bad("standard deviations must be >= 0".into());
        }
        Ok(())
    }
}

/// Ground-truth weights and block membership.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w_star: Array2<f64>,
    pub feature_block: Vec<usize>,
    pub task_block: Vec<usize>,
}

impl GroundTruth {
    pub fn d(&self) -> usize {
        self.w_star.nrows()
    }

    pub fn t(&self) -> usize {
        self.w_star.ncols()
    }

    pub fn block_count(&self) -> usize {
        self.feature_block
            .iter()
            .chain(&self.task_block)
            .max()
            .map_or(0, |m| m + 1)
    }

    /// Whether `(feature, task)` lies inside a diagonal block.
    pub fn in_support(&self, feature: usize, task: usize) -> bool {
        self.feature_block[feature] == self.task_block[task]
    }

    /// Node count of each group (features plus tasks).
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.block_count()];
        for &b in self.feature_block.iter().chain(&self.task_block) {
            sizes[b] += 1;
        }
        sizes
    }
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| TfclError::InvalidConfig(e.to_string()))
}

/// Draws a dataset whose labels come from a block-diagonal linear scorer.
///
/// Scores are `X w_i + eps` with `eps ~ N(0, sd^2 I_n)`; the top
/// `positives_per_user` scores of each user are labelled `+1`.
pub fn generate_simulated(spec: &SimulatedSpec) -> Result<(MultiTaskDataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, t, n) = (spec.features, spec.users, spec.samples_per_user);

    let mut w_star = Array2::<f64>::zeros((d, t));
    let mut feature_block = vec![0; d];
    let mut task_block = vec![0; t];
    let (mut r0, mut c0) = (0, 0);
    for (b, block) in spec.blocks.iter().enumerate() {
        let centroid = if block.centroid_max > 0.0 {
            Uniform::new(0.0, block.centroid_max)
                .map_err(|e| TfclError::InvalidConfig(e.to_string()))?
                .sample(&mut rng)
        } else {
            0.0
        };
        let dist = normal(centroid, spec.block_sd)?;
        for i in r0..r0 + block.features {
            feature_block[i] = b;
            for j in c0..c0 + block.tasks {
                w_star[[i, j]] = dist.sample(&mut rng);
            }
        }
        for tb in &mut task_block[c0..c0 + block.tasks] {
            *tb = b;
        }
        r0 += block.features;
        c0 += block.tasks;
    }

    let std_normal = normal(0.0, 1.0)?;
    let noise = normal(0.0, spec.score_noise_sd)?;
    let mut tasks = Vec::with_capacity(t);
    for j in 0..t {
        let x = Array2::from_shape_simple_fn((n, d), || std_normal.sample(&mut rng));
        let mut scores = x.dot(&w_star.column(j));
        scores.mapv_inplace(|s| s + noise.sample(&mut rng));
        tasks.push(Task::new(
            x,
            top_k_labels(&scores, spec.positives_per_user),
        )?);
    }
    let ids = (0..t).map(|j| format!("user_{j}")).collect();
    Ok((
        MultiTaskDataset::with_ids(tasks, ids)?,
        GroundTruth {
            w_star,
            feature_block,
            task_block,
        },
    ))
}

/// `+1` on the `k` largest scores (ties broken by index), `-1` elsewhere.
pub fn top_k_labels(scores: &Array1<f64>, k: usize) -> Array1<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = Array1::from_elem(scores.len(), -1.0);
    for &i in order.iter().take(k) {
        labels[i] = 1.0;
    }
    labels
}

fn parse_err(line: usize, msg: impl Into<String>) -> TfclError {
    TfclError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Reads the `user_id,label,f_0..f_{d-1}` CSV layout.
///
/// Rows of one user need not be contiguous; users keep first-appearance order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultiTaskDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_err(1, "empty file"));
    }
    if headers.len() < 3 || &headers[0] != "user_id" || &headers[1] != "label" {
        return Err(parse_err(
            1,
            "header must start with user_id,label followed by f_0..f_{d-1}",
        ));
    }
    let d = headers.len() - 2;
    for (j, name) in headers.iter().skip(2).enumerate() {
        if name != format!("f_{j}") {
            return Err(parse_err(
                1,
                format!("unknown column {name:?}, expected f_{j}"),
            ));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != d + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + 2, record.len()),
            ));
        }
        let user = record[0].to_string();
        if user.is_empty() {
            return Err(parse_err(line, "empty user_id"));
        }
        let label: f64 = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label {:?}", &record[1])))?;
        if label != 1.0 && label != -1.0 {
            return Err(parse_err(
                line,
                format!("label must be -1 or 1, got {label}"),
            ));
        }
        let entry = rows.entry(user.clone()).or_insert_with(|| {
            order.push(user);
            (Vec::new(), Vec::new())
        });
        for field in record.iter().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad feature value {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, "non-finite feature value"));
            }
            entry.0.push(v);
        }
        entry.1.push(label);
    }
    if order.is_empty() {
        return Err(parse_err(2, "no data rows"));
    }
    let mut tasks = Vec::with_capacity(order.len());
    for user in &order {
        let (feats, labels) = rows.remove(user).expect("user recorded");
        let n = labels.len();
        let x = Array2::from_shape_vec((n, d), feats)
            .map_err(|e| TfclError::InvalidDataset(e.to_string()))?;
        tasks.push(Task::new(x, Array1::from(labels))?);
    }
    MultiTaskDataset::with_ids(tasks, order)
}

pub fn save_dataset(data: &MultiTaskDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "user_id,label")?;
    for j in 0..data.d() {
        write!(out, ",f_{j}")?;
    }
    writeln!(out)?;
    for (id, task) in data.ids().iter().zip(data.tasks()) {
        let quoted = quote_field(id);
        for (row, label) in task.x.rows().into_iter().zip(task.y.iter()) {
            write!(out, "{quoted},{label}")?;
            for v in row {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn quote_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path.as_ref())?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    line,
                    format!("expected {c} columns, found {}", record.len()),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(line, format!("bad number {field:?}")))?,
            );
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(1, "empty matrix file"))?;
    Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| TfclError::InvalidDataset(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockJson {
    features: Vec<usize>,
    tasks: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthJson {
    d: usize,
    #[serde(rename = "T")]
    t: usize,
    blocks: Vec<BlockJson>,
    w_star_path: String,
}

/// Writes `<stem>.json` plus the `W*` matrix CSV referenced from it.
pub fn save_ground_truth(gt: &GroundTruth, json_path: impl AsRef<Path>) -> Result<()> {
    let json_path = json_path.as_ref();
    let csv_name = format!(
        "{}_w_star.csv",
        json_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("ground_truth")
    );
    let csv_path = json_path.with_file_name(&csv_name);
    write_matrix_csv(&csv_path, &gt.w_star)?;
    let blocks = (0..gt.block_count())
        .map(|b| BlockJson {
            features: (0..gt.d()).filter(|&i| gt.feature_block[i] == b).collect(),
            tasks: (0..gt.t()).filter(|&j| gt.task_block[j] == b).collect(),
        })
        .collect();
    let doc = GroundTruthJson {
        d: gt.d(),
        t: gt.t(),
        blocks,
        w_star_path: csv_name,
    };
    std::fs::write(json_path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

pub fn load_ground_truth(json_path: impl AsRef<Path>) -> Result<GroundTruth> {
    let json_path = json_path.as_ref();
    let doc: GroundTruthJson = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
    let csv_path = {
        let p = PathBuf::from(&doc.w_star_path);
        if p.is_absolute() {
            p
        } else {
            json_path.with_file_name(p)
        }
    };
    let w_star = read_matrix_csv(csv_path)?;
    if w_star.dim() != (doc.d, doc.t) {
        return Err(TfclError::DimensionMismatch(format!(
            "W* is {:?}, ground truth declares ({}, {})",
            w_star.dim(),
            doc.d,
            doc.t
        )));
    }
    let mut feature_block = vec![usize::MAX; doc.d];
    let mut task_block = vec![usize::MAX; doc.t];
    for (b, block) in doc.blocks.iter().enumerate() {
        for &i in &block.features {
            *feature_block
                .get_mut(i)
                .ok_or_else(|| TfclError::InvalidDataset(format!("feature {i} out of range")))? = b;
        }
        for &j in &block.tasks {
            *task_block
                .get_mut(j)
                .ok_or_else(|| TfclError::InvalidDataset(format!("task {j} out of range")))? = b;
        }
    }
    if feature_block
        .iter()
        .chain(&task_block)
        .any(|b| *b == usize::MAX)
    {
        return Err(TfclError::InvalidDataset(
            "every feature and task must belong to a block".into(),
        ));
    }
    Ok(GroundTruth {
        w_star,
        feature_block,
        task_block,
    })
}

/// Drops users whose minority class has fewer than `m` samples.
pub fn filter_min_minority(data: &MultiTaskDataset, m: usize) -> Result<MultiTaskDataset> {
    let (ids, tasks): (Vec<String>, Vec<Task>) = data
        .ids()
        .iter()
        .zip(data.tasks())
        .filter(|(_, t)| t.n_pos().min(t.n_neg()) >= m)
        .map(|(id, t)| (id.clone(), t.clone()))
        .unzip();
    if tasks.is_empty() {
        return Err(TfclError::InvalidDataset(format!(
            "no user has at least {m} samples in the minority class"
        )));
    }
    MultiTaskDataset::with_ids(tasks, ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Train / validation / test parts of a dataset, user-aligned.
///
/// A part is `None` when its fraction is zero.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub train: MultiTaskDataset,
    pub val: Option<MultiTaskDataset>,
    pub test: Option<MultiTaskDataset>,
}

/// Per-user stratified split.
///
/// Each user's samples are shuffled within class and interleaved
/// proportionally, so every prefix holds both classes in proportion; the
/// first `round(f_train n)` go to train, the next `round(f_val n)` to
/// validation and the rest to test. Train always keeps at least one sample
/// of each class the user has.
pub fn split(data: &MultiTaskDataset, fractions: SplitFractions, seed: u64) -> Result<DataSplit> {
    let f = fractions;
    let sum = f.train + f.val + f.test;
    if [f.train, f.val, f.test].iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(TfclError::InvalidConfig(format!(
            "split fractions must be >= 0 and sum to 1, got {f:?}"
        )));
    }
    if !(f.train > 0.0) {
        return Err(TfclError::InvalidConfig(
            "train fraction must be > 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let other_parts = [f.val, f.test].iter().filter(|v| **v > 0.0).count();
    let mut parts: [Vec<Task>; 3] = Default::default();

    for (id, task) in data.ids().iter().zip(data.tasks()) {
        let n = task.n();
        let classes = usize::from(task.n_pos() > 0) + usize::from(task.n_neg() > 0);
        if n < classes + other_parts {
            return Err(TfclError::InvalidDataset(format!(
                "user {id} has {n} samples, too few for a split with {} parts",
                other_parts + 1
            )));
        }
        let order = stratified_order(task, &mut rng);
        let mut n_train = ((f.train * n as f64).round() as usize).clamp(classes, n);
        let mut n_val = if f.val > 0.0 {
            ((f.val * n as f64).round() as usize).max(1)
        } else {
            0
        };
        let min_test = usize::from(f.test > 0.0);
        while n_train + n_val + min_test > n {
            if n_train > classes && n_train >= n_val {
                n_train -= 1;
            } else {
                n_val -= 1;
            }
        }
        let n_test = if f.test > 0.0 { n - n_train - n_val } else { 0 };
        // absorb rounding slack into train when the test part is disabled
        if f.test == 0.0 {
            if f.val == 0.0 {
                n_train = n;
            } else {
                n_val = n - n_train;
            }
        }
        let mut train_idx: Vec<usize> = order[..n_train].to_vec();
        let mut rest: Vec<usize> = order[n_train..].to_vec();
        ensure_classes(task, &mut train_idx, &mut rest);
        let val_idx = rest[..n_val].to_vec();
        let test_idx = rest[n_val..n_val + n_test].to_vec();

        for (part, idx) in parts.iter_mut().zip([train_idx, val_idx, test_idx]) {
            if !idx.is_empty() {
                part.push(subset(task, &idx)?);
            }
        }
    }
    let ids = data.ids().to_vec();
    let [train, val, test] = parts;
    let build = |tasks: Vec<Task>, frac: f64| -> Result<Option<MultiTaskDataset>> {
        if frac > 0.0 {
            MultiTaskDataset::with_ids(tasks, ids.clone()).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(DataSplit {
        train: MultiTaskDataset::with_ids(train, ids.clone())?,
        val: build(val, f.val)?,
        test: build(test, f.test)?,
    })
}

fn stratified_order(task: &Task, rng: &mut impl Rng) -> Vec<usize> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..task.n()).partition(|&i| task.y[i] > 0.0);
    pos.shuffle(rng);
    neg.shuffle(rng);
    let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(task.n());
    for class in [&pos, &neg] {
        let m = class.len() as f64;
        keyed.extend(
            class
                .iter()
                .enumerate()
                .map(|(r, &i)| ((r as f64 + 0.5) / m, i)),
        );
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Swaps samples into `train` until it holds every class present in the task.
fn ensure_classes(task: &Task, train: &mut [usize], rest: &mut [usize]) {
    for positive in [true, false] {
        let is_class = |i: usize| (task.y[i] > 0.0) == positive;
        if train.iter().any(|&i| is_class(i)) {
            continue;
        }
        let Some(r) = rest.iter().position(|&i| is_class(i)) else {
            continue;
        };
        // replace a sample of the majority class in train
        let counts = |c: bool| train.iter().filter(|&&i| (task.y[i] > 0.0) == c).count();
        let donor_class = counts(true) < counts(false);
        if let Some(tpos) = train
            .iter()
            .rposition(|&i| (task.y[i] > 0.0) != donor_class)
        {
            std::mem::swap(&mut train[tpos], &mut rest[r]);
        }
    }
}

fn subset(task: &Task, idx: &[usize]) -> Result<Task> {
    let x = task.x.select(ndarray::Axis(0), idx);
    let y = task.y.select(ndarray::Axis(0), idx);
    Task::new(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn default_spec_is_valid() {
        let spec = SimulatedSpec::default();
        assert!(spec.validate().is_ok());
        assert_eq!(spec.blocks.iter().map(|b| b.features).sum::<usize>(), 80);
        assert!(SimulatedSpec::half_scale().validate().is_ok());
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SimulatedSpec {
            features: 81,
            ..SimulatedSpec::default()
        };
        assert!(generate_simulated(&spec).is_err());
        let spec = SimulatedSpec {
            positives_per_user: 200,
            ..SimulatedSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn top_k_ties_break_by_index() {
        let labels = top_k_labels(&array![1.0, 3.0, 3.0, 0.0], 2);
        assert_eq!(labels, array![-1.0, 1.0, 1.0, -1.0]);
        let labels = top_k_labels(&array![2.0, 2.0, 2.0], 1);
        assert_eq!(labels, array![1.0, -1.0, -1.0]);
    }

    #[test]
    fn filter_cases() {
        let t = |y: Array1<f64>| Task::new(Array2::zeros((y.len(), 1)), y).unwrap();
        let data = MultiTaskDataset::new(vec![
            t(array![1.0, 1.0, -1.0]),
            t(array![1.0, -1.0, -1.0, 1.0]),
            t(array![1.0, 1.0, 1.0]),
        ])
        .unwrap();
        assert_eq!(filter_min_minority(&data, 0).unwrap(), data);
        let kept = filter_min_minority(&data, 2).unwrap();
        assert_eq!(kept.ids(), &["u1".to_string()]);
        assert!(filter_min_minority(&data, 3).is_err());
    }
}
